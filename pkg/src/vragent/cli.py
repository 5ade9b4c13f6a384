"""Operator CLI: a thin client of the service API.

Every subcommand speaks the service's request/response shapes. By default
the app runs in-process from ``--config``; pass ``--server`` to target a
running instance instead (the ``VRAGENT_SERVER`` environment variable sets
the default). Exit codes are documented and stable:

    0  success
    2  configuration error
    3  input/output or data-file error
    4  backend unavailable
    5  journal corrupt or replay verification mismatch
    6  other application error
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import httpx

from .config import load_app_config
from .errors import (
    BackendUnavailable,
    ConfigError,
    IoFailure,
    JournalCorrupt,
    SchemaViolation,
    VragentError,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_BACKEND = 4
EXIT_JOURNAL = 5
EXIT_APP = 6

_ERROR_EXITS = {
    "ConfigError": EXIT_CONFIG,
    "IoFailure": EXIT_IO,
    "SchemaViolation": EXIT_IO,
    "BackendUnavailable": EXIT_BACKEND,
    "JournalCorrupt": EXIT_JOURNAL,
}


class RemoteError(VragentError):
    def __init__(self, name: str, detail: str):
        super().__init__(f"{name}: {detail}")
        self.name = name


def _exit_code_for(exc: Exception) -> int:
    if isinstance(exc, RemoteError):
        return _ERROR_EXITS.get(exc.name, EXIT_APP)
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (IoFailure, SchemaViolation)):
        return EXIT_IO
    if isinstance(exc, BackendUnavailable):
        return EXIT_BACKEND
    if isinstance(exc, JournalCorrupt):
        return EXIT_JOURNAL
    if isinstance(exc, httpx.HTTPError):
        return EXIT_BACKEND
    return EXIT_APP


class ServiceClient:
    """POSTs to a remote server or to an in-process app, identically."""

    def __init__(self, server: str | None, config_path: str | None,
                 seed: int | None = None):
        self.config = None
        if server:
            self._client = httpx.Client(base_url=server, timeout=600.0)
        else:
            if not config_path:
                raise ConfigError("either --config or --server is required")
            from fastapi.testclient import TestClient
            from .service import create_app

            self.config = load_app_config(config_path, seed=seed)
            self._client = TestClient(create_app(self.config))

    def post(self, path: str, payload: dict) -> dict:
        resp = self._client.post(path, json=payload)
        if resp.status_code == 200:
            return resp.json()
        try:
            body = resp.json()
        except ValueError:
            raise RemoteError("BackendUnavailable", f"HTTP {resp.status_code}")
        if isinstance(body, dict) and "error" in body:
            raise RemoteError(body["error"], body.get("detail", ""))
        raise RemoteError("ValidationError", json.dumps(body))


def _run_guarded(fn):
    try:
        code = fn()
    except (VragentError, httpx.HTTPError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(_exit_code_for(exc))
    sys.exit(code or EXIT_OK)


_config_opt = click.option("--config", "config_path", type=click.Path(), default=None,
                           help="App config file (required unless --server is set).")
_server_opt = click.option("--server", default=lambda: os.environ.get("VRAGENT_SERVER"),
                           help="Base URL of a running service; default in-process.")


@click.group()
def main():
    """Guided visual-reasoning search over pluggable model backends."""


@main.command()
@_config_opt
@_server_opt
@click.option("--image", required=True, help="Opaque image handle (path or blob id).")
@click.option("--question", required=True)
@click.option("--query-id", default="q0", show_default=True)
@click.option("--question-kind", type=click.Choice(["open", "closed"]), default="open")
@click.option("--entities", default=None,
              help="Comma-separated detector entities; extracted from the question when omitted.")
@click.option("--seed", type=int, default=None, help="Override the configured rng seed.")
@click.option("--journal-out", type=click.Path(), default=None,
              help="Replay journal path (default: <output_dir>/<query-id>.journal.jsonl).")
@click.option("--trajectory-out", type=click.Path(), default=None,
              help="Also export the run's trajectory file here.")
def run(config_path, server, image, question, query_id, question_kind, entities,
        seed, journal_out, trajectory_out):
    """Answer one question and write the replay journal."""
    def go():
        client = ServiceClient(server, config_path, seed=seed)
        payload = {
            "question": question, "image": image, "query_id": query_id,
            "question_kind": question_kind,
            "entities": [e.strip() for e in entities.split(",") if e.strip()] if entities else None,
            "seed": seed,
        }
        data = client.post("/run", payload)

        out_path = journal_out
        if out_path is None and client.config is not None:
            out_dir = Path(client.config.output_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            out_path = out_dir / f"{query_id}.journal.jsonl"
        if out_path is not None:
            Path(out_path).write_text(data["journal"], encoding="utf-8")

        if trajectory_out is not None:
            from .trajectory import Trajectory, export_trajectories
            export_trajectories([Trajectory.from_dict(data["trajectory"])], trajectory_out)

        path = data["path"]
        click.echo(data["final_answer"])
        click.echo(f"path: nodes {path['node_ids']} rewards {path['rewards']} "
                   f"total {path['total_reward']}")
        stats = data["tree_stats"]
        click.echo(f"tree: {stats['nodes']} nodes, {stats['evaluations']} evaluations, "
                   f"mean width {stats['mean_width']:.2f}, "
                   f"mean leaf depth {stats['mean_leaf_depth']:.2f}")
        if out_path is not None:
            click.echo(f"journal: {out_path}")
    _run_guarded(go)


@main.command()
@_config_opt
@_server_opt
@click.option("--dataset", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--parallel", type=int, default=1, show_default=True)
@click.option("--trajectories-out", type=click.Path(), default=None)
def batch(config_path, server, dataset, out_path, parallel, trajectories_out):
    """Run every dataset record, write answers, print the metrics summary."""
    def go():
        from .metrics import format_report, load_dataset

        records = load_dataset(dataset)
        client = ServiceClient(server, config_path)
        data = client.post("/batch", {
            "records": records, "parallel": parallel,
        })

        with open(out_path, "w", encoding="utf-8") as fh:
            for result in data["results"]:
                fh.write(json.dumps(result, sort_keys=True) + "\n")

        if trajectories_out is not None:
            from .trajectory import Trajectory, export_trajectories
            export_trajectories(
                [Trajectory.from_dict(t) for t in data["trajectories"]], trajectories_out)

        click.echo(f"{len(data['results'])} records, {data['failures']} failed")
        if data["metrics"]:
            click.echo(format_report(data["metrics"]))
    _run_guarded(go)


@main.command()
@_config_opt
@_server_opt
@click.option("--journal", "journal_path", required=True, type=click.Path())
@click.option("--verify", is_flag=True,
              help="Exit 0 only if the replay reproduces the recorded result exactly.")
def replay(config_path, server, journal_path, verify):
    """Rebuild a journaled run without backends and print its result."""
    def go():
        try:
            text = Path(journal_path).read_text(encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"cannot read journal {journal_path}: {exc}") from exc
        client = ServiceClient(server, config_path)
        data = client.post("/replay", {"journal": text, "verify": verify})
        path = data["path"]
        click.echo(data["final_answer"])
        click.echo(f"path: nodes {path['node_ids']} total {path['total_reward']}")
        if verify:
            if data["identical"]:
                click.echo("verify: identical")
            else:
                click.echo("verify: MISMATCH", err=True)
                return EXIT_JOURNAL
    _run_guarded(go)


@main.command("vte-apply")
@_config_opt
@_server_opt
@click.option("--tokens", "tokens_path", required=True, type=click.Path(),
              help="Token fixture: JSON object with embeddings, mask, attn_logits.")
@click.option("--confidence", type=float, required=True)
@click.option("--kappa", type=float, default=None)
@click.option("--activation", type=click.Choice(["relu", "softplus", "identity_clamped_nonneg"]),
              default=None)
@click.option("--direction", type=click.Choice(["self", "ones"]), default=None)
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Write the boosted fixture here.")
def vte_apply(config_path, server, tokens_path, confidence, kappa, activation,
              direction, out_path):
    """Apply the region token boost to a token fixture."""
    def go():
        from .vte import load_tokens

        tokens = load_tokens(tokens_path)
        client = ServiceClient(server, config_path)
        data = client.post("/vte/apply", {
            "embeddings": tokens.embeddings.tolist(),
            "mask": tokens.mask.tolist(),
            "attn_logits": tokens.attn_logits.tolist(),
            "confidence": confidence,
            "kappa": kappa, "activation": activation, "direction": direction,
        })
        click.echo(f"gain {data['gain']:.6f} (roi mean {data['roi_logit_mean']:.4f}, "
                   f"background mean {data['background_logit_mean']:.4f})")
        if out_path is not None:
            payload = {
                "embeddings": data["embeddings"],
                "mask": tokens.mask.tolist(),
                "attn_logits": tokens.attn_logits.tolist(),
            }
            Path(out_path).write_text(json.dumps(payload, sort_keys=True) + "\n",
                                      encoding="utf-8")
            click.echo(f"boosted tokens: {out_path}")
    _run_guarded(go)


@main.command()
@_config_opt
@_server_opt
@click.option("--records", "records_path", required=True, type=click.Path(),
              help="Scored predictions: one {id, prediction, reference, question_kind} per line.")
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Write the JSON summary here.")
def metrics(config_path, server, records_path, out_path):
    """Compute the metric summary for a scored-prediction file."""
    def go():
        from .metrics import load_eval_records

        records = load_eval_records(records_path)
        client = ServiceClient(server, config_path)
        data = client.post("/metrics", {
            "records": [
                {"id": r.id, "prediction": r.prediction, "reference": r.reference,
                 "question_kind": r.question_kind}
                for r in records
            ],
        })
        click.echo(data["table"])
        if out_path is not None:
            summary = {k: data[k] for k in
                       ("bleu_avg", "rouge_l", "open_recall", "closed_precision",
                        "meteor", "counts")}
            Path(out_path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")
    _run_guarded(go)


@main.command()
@click.option("--config", "config_path", type=click.Path(), required=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(config_path, host, port):
    """Launch the service."""
    def go():
        import uvicorn
        from .service import create_app

        app = create_app(load_app_config(config_path))
        uvicorn.run(app, host=host, port=port)
    _run_guarded(go)


if __name__ == "__main__":
    main()
