"""Text metrics for the evaluation harness: averaged BLEU-1..4, LCS-based
ROUGE-L F1, token recall for open questions and exact-match precision for
closed ones.

All metrics share one normalization (lowercase, terminal punctuation
stripped per token, whitespace collapsed) so scores are reproducible
bit-for-bit. BLEU uses clipped n-gram precision with the standard brevity
penalty; zero-match orders are smoothed with a 1e-9 epsilon, and orders
too long for both prediction and every reference count as vacuously
perfect so that identical texts always score 1. METEOR needs external
synonym resources and is reported as absent, never as zero.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from math import exp, log
from pathlib import Path

from .errors import EmptyInput, EmptyReference, IoFailure, NoRecordsOfKind, SchemaViolation

__all__ = [
    "EvalRecord",
    "normalize_tokens",
    "normalize_text",
    "bleu_avg",
    "rouge_l",
    "open_recall",
    "closed_precision",
    "evaluate_records",
    "format_report",
    "load_dataset",
    "load_eval_records",
]

BLEU_EPS = 1e-9
_PUNCT = ".,!?;:\"'`()[]{}"


@dataclass(frozen=True)
class EvalRecord:
    id: str
    prediction: str
    reference: str
    question_kind: str  # "open" | "closed"


def normalize_tokens(text: str) -> list[str]:
    tokens = []
    for raw in text.lower().split():
        tok = raw.strip(_PUNCT)
        if tok:
            tokens.append(tok)
    return tokens


def normalize_text(text: str) -> str:
    return " ".join(normalize_tokens(text))


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_avg(prediction: str, references: list[str] | str) -> float:
    """Arithmetic mean of cumulative BLEU-1..4 against one or more references."""
    if isinstance(references, str):
        references = [references]
    ref_tokens = [normalize_tokens(r) for r in references]
    ref_tokens = [r for r in ref_tokens if r]
    if not ref_tokens:
        raise EmptyReference("bleu needs at least one non-empty reference")
    pred = normalize_tokens(prediction)
    if not pred:
        return 0.0

    c = len(pred)
    # effective reference length: closest to the prediction, ties -> shorter
    r = min((abs(len(t) - c), len(t)) for t in ref_tokens)[1]
    bp = 1.0 if c > r else exp(1.0 - r / c)

    log_precisions = []
    for n in range(1, 5):
        total = max(0, c - n + 1)
        ref_total = max(max(0, len(t) - n + 1) for t in ref_tokens)
        if total == 0:
            p = 1.0 if ref_total == 0 else BLEU_EPS
        else:
            pred_counts = _ngrams(pred, n)
            matches = 0
            for gram, count in pred_counts.items():
                best = max(_ngrams(t, n).get(gram, 0) for t in ref_tokens)
                matches += min(count, best)
            p = matches / total if matches > 0 else BLEU_EPS
        log_precisions.append(log(p))

    cumulative = [bp * exp(sum(log_precisions[:k]) / k) for k in range(1, 5)]
    return sum(cumulative) / 4.0


def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(prediction: str, reference: str) -> float:
    """LCS F1: 2PR/(P+R) with P = LCS/|pred| and R = LCS/|ref|."""
    pred = normalize_tokens(prediction)
    ref = normalize_tokens(reference)
    if not pred or not ref:
        raise EmptyInput("rouge-l needs non-empty prediction and reference")
    lcs = _lcs_length(pred, ref)
    if lcs == 0:
        return 0.0
    p = lcs / len(pred)
    r = lcs / len(ref)
    return 2.0 * p * r / (p + r)


def open_recall(records: list[EvalRecord]) -> float:
    """Mean fraction of reference tokens present in the prediction, over
    open records. Records whose reference normalizes to nothing are skipped."""
    scores = []
    for rec in records:
        if rec.question_kind != "open":
            continue
        ref = Counter(normalize_tokens(rec.reference))
        if not ref:
            continue
        pred = Counter(normalize_tokens(rec.prediction))
        matched = sum(min(count, pred.get(tok, 0)) for tok, count in ref.items())
        scores.append(matched / sum(ref.values()))
    if not scores:
        raise NoRecordsOfKind("no usable open records")
    return sum(scores) / len(scores)


def closed_precision(records: list[EvalRecord]) -> float:
    """Exact-match fraction (after normalization) over closed records."""
    outcomes = [
        1.0 if normalize_text(rec.prediction) == normalize_text(rec.reference) else 0.0
        for rec in records
        if rec.question_kind == "closed"
    ]
    if not outcomes:
        raise NoRecordsOfKind("no closed records")
    return sum(outcomes) / len(outcomes)


def evaluate_records(records: list[EvalRecord]) -> dict:
    """Summary block: the four metrics plus counts. Metrics whose record
    kind is absent come back as None, as does METEOR always."""
    bleu_scores, rouge_scores, skipped = [], [], 0
    for rec in records:
        try:
            bleu_scores.append(bleu_avg(rec.prediction, rec.reference))
            rouge_scores.append(rouge_l(rec.prediction, rec.reference))
        except (EmptyInput, EmptyReference):
            skipped += 1
    try:
        recall = open_recall(records)
    except NoRecordsOfKind:
        recall = None
    try:
        precision = closed_precision(records)
    except NoRecordsOfKind:
        precision = None
    return {
        "bleu_avg": sum(bleu_scores) / len(bleu_scores) if bleu_scores else None,
        "rouge_l": sum(rouge_scores) / len(rouge_scores) if rouge_scores else None,
        "open_recall": recall,
        "closed_precision": precision,
        "meteor": None,
        "counts": {
            "total": len(records),
            "open": sum(1 for r in records if r.question_kind == "open"),
            "closed": sum(1 for r in records if r.question_kind == "closed"),
            "skipped_empty": skipped,
        },
    }


def format_report(summary: dict) -> str:
    """Human-readable table for the summary block."""
    def fmt(value):
        return "absent" if value is None else f"{value:.4f}"

    counts = summary["counts"]
    lines = [
        "metric            value",
        "----------------  --------",
        f"bleu_avg          {fmt(summary['bleu_avg'])}",
        f"rouge_l           {fmt(summary['rouge_l'])}",
        f"open_recall       {fmt(summary['open_recall'])}",
        f"closed_precision  {fmt(summary['closed_precision'])}",
        f"meteor            {fmt(summary['meteor'])}",
        "",
        f"records: {counts['total']} ({counts['open']} open, {counts['closed']} closed, "
        f"{counts['skipped_empty']} skipped empty)",
    ]
    return "\n".join(lines)


def load_dataset(path: str | Path) -> list[dict]:
    """Read a dataset file: one {id, image, question, answer, type} per line."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoFailure(f"cannot read dataset {path}: {exc}") from exc
    records = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            kind = obj.get("type", "open")
            if kind not in ("open", "closed"):
                raise ValueError(f"type must be open or closed, got {kind!r}")
            records.append({
                "id": str(obj["id"]),
                "image": str(obj["image"]),
                "question": str(obj["question"]),
                "answer": str(obj.get("answer", "")),
                "type": kind,
            })
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise SchemaViolation(f"bad dataset record: {exc}", line=lineno) from exc
    return records


def load_eval_records(path: str | Path) -> list[EvalRecord]:
    """Read scored predictions: one {id, prediction, reference, question_kind} per line."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoFailure(f"cannot read records {path}: {exc}") from exc
    out = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            kind = obj.get("question_kind", "open")
            if kind not in ("open", "closed"):
                raise ValueError(f"question_kind must be open or closed, got {kind!r}")
            out.append(EvalRecord(
                id=str(obj["id"]),
                prediction=str(obj["prediction"]),
                reference=str(obj["reference"]),
                question_kind=kind,
            ))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise SchemaViolation(f"bad eval record: {exc}", line=lineno) from exc
    return out
