"""Text metrics: worked examples, identities, and brute-force cross-checks."""

import random
from collections import Counter
from math import exp, log

import pytest

from vragent.errors import EmptyInput, EmptyReference, NoRecordsOfKind, SchemaViolation
from vragent.metrics import (
    EvalRecord,
    bleu_avg,
    closed_precision,
    evaluate_records,
    format_report,
    load_dataset,
    load_eval_records,
    normalize_text,
    normalize_tokens,
    open_recall,
    rouge_l,
)


def bleu_oracle(pred: str, refs: list[str]) -> float:
    """Independent straight-line evaluation of the documented BLEU definition."""
    p = normalize_tokens(pred)
    rs = [normalize_tokens(r) for r in refs if normalize_tokens(r)]
    if not p:
        return 0.0
    c = len(p)
    r = min((abs(len(t) - c), len(t)) for t in rs)[1]
    bp = 1.0 if c > r else exp(1.0 - r / c)
    logs = []
    for n in range(1, 5):
        total = max(0, c - n + 1)
        ref_total = max(max(0, len(t) - n + 1) for t in rs)
        if total == 0:
            pn = 1.0 if ref_total == 0 else 1e-9
        else:
            grams = Counter(tuple(p[i:i + n]) for i in range(total))
            matched = 0
            for gram, count in grams.items():
                best = max(
                    Counter(tuple(t[i:i + n]) for i in range(len(t) - n + 1)).get(gram, 0)
                    for t in rs)
                matched += min(count, best)
            pn = matched / total if matched else 1e-9
        logs.append(log(pn))
    return sum(bp * exp(sum(logs[:k]) / k) for k in range(1, 5)) / 4.0


WORDS = ("the", "left", "lung", "base", "shows", "opacity", "effusion", "clear",
         "cardiac", "border", "blunted", "angle", "small", "right", "no")


def random_sentence(rng, lo=1, hi=12):
    return " ".join(rng.choice(WORDS) for _ in range(rng.randint(lo, hi)))


class TestNormalization:
    def test_terminal_punctuation_and_case(self):
        assert normalize_text("Yes.") == "yes"
        assert normalize_tokens("The  CAT   sat!") == ["the", "cat", "sat"]


class TestBleu:
    def test_identity(self):
        assert bleu_avg("the cat sat on the mat", "the cat sat on the mat") == pytest.approx(1.0)
        assert bleu_avg("short one", "short one") == pytest.approx(1.0)

    def test_disjoint_is_smoothing_epsilon_small(self):
        assert bleu_avg("alpha beta gamma", "delta epsilon zeta") < 1e-6

    def test_spec_fixture_matches_oracle(self):
        got = bleu_avg("the cat sat", ["the cat sat down"])
        assert got == pytest.approx(bleu_oracle("the cat sat", ["the cat sat down"]), abs=1e-6)
        assert got == pytest.approx(0.538405820847163, abs=1e-9)

    def test_empty_reference(self):
        with pytest.raises(EmptyReference):
            bleu_avg("anything", "")

    def test_multi_reference_permutation_invariance(self):
        rng = random.Random(21)
        for _ in range(25):
            pred = random_sentence(rng)
            refs = [random_sentence(rng) for _ in range(3)]
            shuffled = refs[::-1]
            assert bleu_avg(pred, refs) == pytest.approx(bleu_avg(pred, shuffled), abs=1e-12)

    def test_random_pairs_match_oracle(self):
        rng = random.Random(22)
        for _ in range(50):
            pred = random_sentence(rng)
            refs = [random_sentence(rng) for _ in range(rng.randint(1, 3))]
            assert bleu_avg(pred, refs) == pytest.approx(bleu_oracle(pred, refs), abs=1e-9)


class TestRougeL:
    def test_identity(self):
        assert rouge_l("left basal opacity", "left basal opacity") == pytest.approx(1.0)

    def test_spec_fixture(self):
        assert rouge_l("a c", "a b c") == pytest.approx(0.8, abs=1e-9)

    def test_disjoint(self):
        assert rouge_l("alpha beta", "gamma delta") == 0.0

    def test_empty_input(self):
        with pytest.raises(EmptyInput):
            rouge_l("", "ref")
        with pytest.raises(EmptyInput):
            rouge_l("pred", "...")

    def test_against_recursive_lcs_brute_force(self):
        def lcs_slow(a, b):
            if not a or not b:
                return 0
            if a[-1] == b[-1]:
                return 1 + lcs_slow(a[:-1], b[:-1])
            return max(lcs_slow(a[:-1], b), lcs_slow(a, b[:-1]))

        rng = random.Random(23)
        for _ in range(40):
            a = [rng.choice("abc") for _ in range(rng.randint(1, 8))]
            b = [rng.choice("abc") for _ in range(rng.randint(1, 8))]
            lcs = lcs_slow(a, b)
            expected = 0.0
            if lcs:
                p, r = lcs / len(a), lcs / len(b)
                expected = 2 * p * r / (p + r)
            assert rouge_l(" ".join(a), " ".join(b)) == pytest.approx(expected, abs=1e-12)


class TestRecallPrecision:
    def test_closed_exact_match(self):
        records = [EvalRecord("1", "yes", "yes", "closed")]
        assert closed_precision(records) == 1.0

    def test_closed_normalized_match(self):
        records = [EvalRecord("1", "Yes.", "yes", "closed")]
        assert closed_precision(records) == 1.0

    def test_open_token_recall(self):
        records = [EvalRecord("1", "opacity effusion", "opacity effusion angle blunted", "open")]
        assert open_recall(records) == pytest.approx(0.5)

    def test_no_records_of_kind(self):
        with pytest.raises(NoRecordsOfKind):
            open_recall([EvalRecord("1", "a", "b", "closed")])
        with pytest.raises(NoRecordsOfKind):
            closed_precision([EvalRecord("1", "a", "b", "open")])

    def test_identity_scores_one(self):
        rng = random.Random(24)
        for _ in range(10):
            text = random_sentence(rng)
            assert open_recall([EvalRecord("1", text, text, "open")]) == 1.0
            assert closed_precision([EvalRecord("1", text, text, "closed")]) == 1.0


class TestSummary:
    def test_closed_only_marks_open_absent(self):
        records = [EvalRecord("1", "yes", "yes", "closed")]
        summary = evaluate_records(records)
        assert summary["open_recall"] is None
        assert summary["closed_precision"] == 1.0
        assert summary["meteor"] is None
        assert "absent" in format_report(summary)

    def test_all_metrics_in_unit_interval(self):
        rng = random.Random(25)
        records = [
            EvalRecord(str(i), random_sentence(rng), random_sentence(rng),
                       rng.choice(["open", "closed"]))
            for i in range(30)
        ]
        summary = evaluate_records(records)
        for key in ("bleu_avg", "rouge_l", "open_recall", "closed_precision"):
            if summary[key] is not None:
                assert 0.0 <= summary[key] <= 1.0


class TestLoaders:
    def test_dataset_round(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"id": "1", "image": "i", "question": "q", "answer": "a", "type": "open"}\n')
        records = load_dataset(path)
        assert records[0]["type"] == "open"

    def test_dataset_bad_line_number(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"id": "1", "image": "i", "question": "q", "type": "open"}\n'
                        '{"id": "2", "image": "i", "question": "q", "type": "sideways"}\n')
        with pytest.raises(SchemaViolation) as err:
            load_dataset(path)
        assert err.value.line == 2

    def test_eval_records(self, tmp_path):
        path = tmp_path / "r.jsonl"
        path.write_text('{"id": "1", "prediction": "p", "reference": "r", "question_kind": "closed"}\n')
        assert load_eval_records(path)[0].question_kind == "closed"
