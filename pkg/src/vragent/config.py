"""Application configuration: one JSON file wiring backends, knobs and paths.

Secrets never live in the file; string values may reference environment
variables as ``${VAR}`` and are interpolated at load. Precedence is
flags > environment > file: ``VRAGENT_SEED`` and ``VRAGENT_OUTPUT_DIR``
override the file, and explicit load arguments (fed by CLI flags) override
both. Every backend is either a mock script or an HTTP endpoint, never
both.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .backends.base import BackendSuite
from .backends.http import (
    HttpChatBackend,
    HttpClientConfig,
    HttpDetectorBackend,
    HttpEmbedderBackend,
    HttpRelevanceBackend,
)
from .backends.mock import MockScript, build_mock_suite
from .rar import RarConfig, RarPipeline, index_build, load_knowledge_base
from .trajectory import PpoConfig
from .types import SearchConfig
from .vte import VteConfig

__all__ = ["BackendSpec", "AppConfig", "load_app_config", "build_suite", "build_retriever"]

ROLES = ("teacher", "student", "assessor", "detector", "embedder", "relevance")

_ENV_REF = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


@dataclass
class BackendSpec:
    mock_script: Optional[str] = None
    http: Optional[dict] = None

    def validate(self, role: str) -> None:
        if (self.mock_script is None) == (self.http is None):
            raise ConfigError(f"backend {role!r} must set exactly one of mock_script or http")
        if self.mock_script is not None and not Path(self.mock_script).is_file():
            raise ConfigError(f"backend {role!r} mock script not found: {self.mock_script}")
        if self.http is not None and not self.http.get("base_url"):
            raise ConfigError(f"backend {role!r} http config needs a base_url")


@dataclass
class AppConfig:
    search: SearchConfig = field(default_factory=SearchConfig)
    rar: RarConfig = field(default_factory=RarConfig)
    vte: VteConfig = field(default_factory=VteConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    backends: dict[str, BackendSpec] = field(default_factory=dict)
    embedding_dimension: int = 64
    knowledge_base: Optional[str] = None
    use_image_embedding: bool = False
    output_dir: str = "out"

    def validate(self) -> None:
        self.search.validate()
        self.rar.validate()
        self.ppo.validate()
        missing = [r for r in ROLES if r not in self.backends]
        if missing:
            raise ConfigError(f"config missing backends: {missing}")
        for role in ROLES:
            self.backends[role].validate(role)
        if self.embedding_dimension < 1:
            raise ConfigError("embedding_dimension must be >= 1")
        if self.knowledge_base is not None and not Path(self.knowledge_base).is_file():
            raise ConfigError(f"knowledge base not found: {self.knowledge_base}")


def _interpolate(value):
    if isinstance(value, str):
        def sub(match):
            name = match.group(1)
            if name not in os.environ:
                raise ConfigError(f"config references unset environment variable {name}")
            return os.environ[name]
        return _ENV_REF.sub(sub, value)
    if isinstance(value, list):
        return [_interpolate(v) for v in value]
    if isinstance(value, dict):
        return {k: _interpolate(v) for k, v in value.items()}
    return value


def load_app_config(path: str | Path, seed: Optional[int] = None,
                    output_dir: Optional[str] = None) -> AppConfig:
    """Load, interpolate and validate the config file. Relative paths inside
    the file resolve against the file's directory."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    raw = _interpolate(raw)
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")

    base = path.parent

    def resolve(p: Optional[str]) -> Optional[str]:
        if p is None:
            return None
        candidate = Path(p)
        return str(candidate if candidate.is_absolute() else base / candidate)

    try:
        search = SearchConfig.from_dict(raw.get("search", {}))
        rar = RarConfig(**raw.get("rar", {}))
        vte = VteConfig(**raw.get("vte", {}))
        ppo = PpoConfig(**raw.get("ppo", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config section: {exc}") from exc

    backends = {}
    for role, spec in raw.get("backends", {}).items():
        if role not in ROLES:
            raise ConfigError(f"unknown backend role {role!r}")
        if not isinstance(spec, dict):
            raise ConfigError(f"backend {role!r} must be an object")
        backends[role] = BackendSpec(
            mock_script=resolve(spec.get("mock_script")),
            http=spec.get("http"),
        )

    cfg = AppConfig(
        search=search, rar=rar, vte=vte, ppo=ppo, backends=backends,
        embedding_dimension=int(raw.get("embedding_dimension", 64)),
        knowledge_base=resolve(raw.get("knowledge_base")),
        use_image_embedding=bool(raw.get("use_image_embedding", False)),
        output_dir=resolve(raw.get("output_dir", "out")) or "out",
    )

    env_seed = os.environ.get("VRAGENT_SEED")
    if env_seed is not None:
        try:
            cfg.search = cfg.search.with_seed(int(env_seed))
        except ValueError as exc:
            raise ConfigError(f"VRAGENT_SEED must be an integer: {env_seed!r}") from exc
    env_out = os.environ.get("VRAGENT_OUTPUT_DIR")
    if env_out:
        cfg.output_dir = env_out
    if seed is not None:
        cfg.search = cfg.search.with_seed(seed)
    if output_dir is not None:
        cfg.output_dir = output_dir

    cfg.validate()
    return cfg


def build_suite(cfg: AppConfig) -> BackendSuite:
    """Construct fresh backends for one run; mock cursors start rewound."""
    scripts: dict[str, MockScript] = {}

    def script_for(spec: BackendSpec) -> MockScript:
        assert spec.mock_script is not None
        if spec.mock_script not in scripts:
            scripts[spec.mock_script] = MockScript.load(spec.mock_script)
        return scripts[spec.mock_script]

    def http_cfg(spec: BackendSpec) -> HttpClientConfig:
        http = dict(spec.http or {})
        return HttpClientConfig(
            base_url=http["base_url"],
            model=http.get("model", ""),
            api_key_env=http.get("api_key_env", ""),
            retries=int(http.get("retries", 2)),
            backoff=float(http.get("backoff", 0.25)),
            timeout=float(http.get("timeout", 30.0)),
        )

    built = {}
    mock_roles = [r for r in ROLES if cfg.backends[r].mock_script is not None]
    if mock_roles:
        # one shared scenario instance per script file, all six roles wired;
        # http roles below override their slots
        any_script = script_for(cfg.backends[mock_roles[0]])
        base = build_mock_suite(any_script, cfg.embedding_dimension)
        for role in mock_roles:
            script = script_for(cfg.backends[role])
            suite = base if script is any_script else build_mock_suite(script, cfg.embedding_dimension)
            built[role] = getattr(suite, role)

    for role in ROLES:
        spec = cfg.backends[role]
        if spec.http is None:
            continue
        hc = http_cfg(spec)
        if role in ("teacher", "student", "assessor"):
            built[role] = HttpChatBackend(hc)
        elif role == "detector":
            built[role] = HttpDetectorBackend(hc)
        elif role == "embedder":
            built[role] = HttpEmbedderBackend(hc, cfg.embedding_dimension)
        else:
            built[role] = HttpRelevanceBackend(hc)

    return BackendSuite(**{role: built[role] for role in ROLES})


def build_retriever(cfg: AppConfig, suite: BackendSuite, index=None) -> Optional[RarPipeline]:
    """Wire the retrieval pipeline; None when no knowledge base is configured.
    Pass a prebuilt ``index`` to reuse one immutable index across runs."""
    if cfg.knowledge_base is None and index is None:
        return None
    if index is None:
        items = load_knowledge_base(cfg.knowledge_base, suite.embedder)
        index = index_build(items)
    return RarPipeline(index, suite.embedder, suite.relevance, cfg.rar,
                       use_image_embedding=cfg.use_image_embedding)
