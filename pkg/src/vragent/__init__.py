"""Guided visual-reasoning agent: tree search over teacher/student/assessor
model calls with visual token boosting, retrieval-augmented reflection,
trajectory export and an evaluation harness. All model backends are
pluggable; a deterministic scripted mock covers offline use and tests."""

__version__ = "0.1.0"
