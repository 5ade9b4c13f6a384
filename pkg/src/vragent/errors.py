"""Exception taxonomy shared across the package.

Every error the engine can surface has a dedicated class so that callers
(service handlers, CLI exit-code mapping, tests) can branch on type rather
than on message text.
"""

from __future__ import annotations


class VragentError(Exception):
    """Base class for all package errors."""


class ConfigError(VragentError):
    """Invalid or unloadable application configuration."""


class IoFailure(VragentError):
    """Filesystem read/write failure while handling a data file."""


class SchemaViolation(VragentError):
    """A structured-text file broke its schema; carries the 1-based line."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


# --- backend / parsing -------------------------------------------------

class BackendUnavailable(VragentError):
    """Transport-level failure talking to a model backend (after retries)."""


class ParseEmpty(VragentError):
    """A model reply was empty after trimming."""


class ParseScore(VragentError):
    """No integer score could be extracted from an assessor reply."""


class ScoreRange(VragentError):
    """Assessor score was outside the 1..5 rating scale."""


class EvaluationFailed(VragentError):
    """Assessor reply unparseable even after the retry; carries raw text."""

    def __init__(self, raw: str):
        super().__init__("assessor reply unparseable after retry")
        self.raw = raw


class DetectorMalformed(VragentError):
    """Detector returned a region violating bbox/confidence invariants."""


class DimensionMismatch(VragentError):
    """An embedding vector did not match the configured dimension."""


class MockScriptError(VragentError):
    """Mock scenario has no entry for a call kind it received."""


# --- visual token edit --------------------------------------------------

class NoRoiPatches(VragentError):
    """Token mask selects no ROI patches; ROI logit mean is undefined."""


class DegenerateLogits(VragentError):
    """ROI logit mean is zero; the boost-gain ratio is undefined."""


# --- search ---------------------------------------------------------------

class EmptyRoiList(VragentError):
    """Region sampling was asked to draw from an empty region list."""


class ExpansionBudgetExhausted(VragentError):
    """Node cannot be expanded (child budget spent or at depth ceiling)."""


class NoEvaluatedNodes(VragentError):
    """Operation requires at least one scored node and found none."""


class JournalCorrupt(VragentError):
    """A replay journal is truncated, malformed or inconsistent."""


# --- retrieval ------------------------------------------------------------

class EmptyIndex(VragentError):
    """Retrieval was attempted against an index with no items."""


class DuplicateId(VragentError):
    """Two knowledge items share an id."""


class MissingScores(VragentError):
    """Rerank was asked to sort candidates that carry no relevance score."""


# --- trajectories / metrics -------------------------------------------

class NonFiniteInput(VragentError):
    """A numeric utility received NaN or infinity."""


class EmptyReference(VragentError):
    """Text metric called with no usable reference text."""


class EmptyInput(VragentError):
    """Text metric called with an empty prediction or reference."""


class NoRecordsOfKind(VragentError):
    """Aggregate metric requested for a question kind with zero records."""
