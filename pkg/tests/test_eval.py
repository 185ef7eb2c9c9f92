import json
import math

import numpy as np
import pytest

from specsyn.corpus import ExtractionType
from specsyn.dsl import Category, parse_spec
from specsyn.eval import (
    ConfusionCounts,
    EvalError,
    EvaluationReport,
    LengthMismatch,
    Metrics,
    SampleOutcome,
    breakdown,
    collect_outcomes,
    evaluate,
    gold_spec,
    metrics_from_counts,
    render_report,
    report_from_outcomes,
    score_detection,
    score_generation,
)


class TestScoreDetection:
    def test_all_correct_positives(self):
        counts, m = score_detection([True] * 5, [True] * 5)
        assert counts == ConfusionCounts(5, 0, 0, 0)
        assert (m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0)

    def test_reference_total_row(self):
        # P=0.92, R=0.81 round-trip to F1=0.86
        counts = ConfusionCounts(tp=7452, fp=648, fn=1748, tn=0)
        m = metrics_from_counts(counts)
        assert abs(m.precision - 0.92) < 1e-12
        assert abs(m.recall - 0.81) < 1e-12
        assert abs(m.f1 - 0.8615) < 5e-4
        assert abs(m.f1 - 0.86) < 5e-3

    def test_confusion_matrix_row(self):
        m = metrics_from_counts(ConfusionCounts(tp=94, fp=6, fn=21, tn=0))
        assert abs(m.precision - 0.94) < 1e-12
        assert abs(m.recall - 94 / 115) < 1e-12
        assert abs(m.recall - 0.8174) < 5e-4

    def test_zero_denominators(self):
        counts, m = score_detection([False, False], [False, True])
        assert m.precision == 0.0
        assert m.recall == 0.0
        assert m.f1 == 0.0

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            score_detection([True], [True, False])

    def test_empty_rejected(self):
        with pytest.raises(EvalError):
            score_detection([], [])

    def test_counts_total(self):
        counts, _ = score_detection(
            [True, True, False, False], [True, False, True, False]
        )
        assert counts.total == 4
        assert (counts.tp, counts.fp, counts.fn, counts.tn) == (1, 1, 1, 1)

    def test_metric_bounds_random(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n = int(rng.integers(1, 30))
            preds = rng.integers(2, size=n).astype(bool).tolist()
            labels = rng.integers(2, size=n).astype(bool).tolist()
            _, m = score_detection(preds, labels)
            for value in (m.precision, m.recall, m.f1):
                assert 0.0 <= value <= 1.0

    def test_partition_additivity(self):
        rng = np.random.default_rng(1)
        preds = rng.integers(2, size=40).astype(bool).tolist()
        labels = rng.integers(2, size=40).astype(bool).tolist()
        whole, _ = score_detection(preds, labels)
        left, _ = score_detection(preds[:17], labels[:17])
        right, _ = score_detection(preds[17:], labels[17:])
        assert left + right == whole

    def test_f1_consistency(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            n = int(rng.integers(1, 50))
            preds = rng.integers(2, size=n).astype(bool).tolist()
            labels = rng.integers(2, size=n).astype(bool).tolist()
            _, m = score_detection(preds, labels)
            if m.precision + m.recall:
                again = 2 * m.precision * m.recall / (m.precision + m.recall)
                assert abs(again - m.f1) < 5e-3


class TestScoreGeneration:
    def test_perfect_match(self):
        assert score_generation(["a > 5"], ["a > 5"]) == 1.0

    def test_whitespace_variant_matches(self):
        assert score_generation(["x in [2,7]"], ["x in [2, 7]"]) == 1.0

    def test_denominator_is_detected_gold_positives(self):
        # missed gold (None prediction) and false alarm (None gold) are skipped
        rate = score_generation(
            ["a > 5", None, "b == on", "c > 1"],
            ["a > 5", "missed > 1", None, "c > 2"],
        )
        assert rate == 0.5

    def test_unparseable_prediction_is_mismatch(self):
        assert score_generation(["> > and"], ["a > 5"]) == 0.0

    def test_unparseable_gold_raises(self):
        with pytest.raises(EvalError):
            score_generation(["a > 5"], ["not a spec at all"])

    def test_no_detected_positives_scores_zero(self):
        assert score_generation([None, None], ["a > 5", None]) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            score_generation(["a > 5"], [])

    def test_brute_force_agreement(self):
        rng = np.random.default_rng(3)
        pool = ["a > 5", "b < 2", "c == on", "d in [1, 2]"]
        preds, golds = [], []
        for _ in range(20):
            golds.append(pool[int(rng.integers(4))] if rng.random() < 0.7 else None)
            if rng.random() < 0.75:
                preds.append(pool[int(rng.integers(4))])
            else:
                preds.append(None)
        hits = total = 0
        for p, g in zip(preds, golds):
            if p is None or g is None:
                continue
            total += 1
            hits += parse_spec(p) == parse_spec(g)
        want = hits / total if total else 0.0
        assert score_generation(preds, golds) == want


def outcome(i, label, flagged, kind, cat, expected=None, got=None):
    return SampleOutcome(
        index=i, label=label, flagged=flagged, type=kind, category=cat,
        expected=expected, got=got,
    )


def mixed_outcomes():
    S, CS = ExtractionType.SIMPLE, ExtractionType.COMPLEX_SINGLE
    Q, U = Category.QUANTITATIVE, Category.UTILIZATION
    return [
        outcome(0, True, True, S, Q, "a > 5", "a > 5"),
        outcome(1, True, True, S, Q, "b < 2", "b <= 3"),
        outcome(2, True, False, CS, U, "c == on", None),
        outcome(3, False, True, S, None, None, "d > 1"),
        outcome(4, False, False, CS, None, None, None),
        outcome(5, True, True, CS, U, "e in [1, 2]", "e in [1,2]"),
    ]


class TestBreakdown:
    def test_groups_cover_all_samples(self):
        section = breakdown(mixed_outcomes(), "type")
        assert set(section) == {"simple", "complex_single"}
        assert section["simple"]["count"] == 3
        assert section["complex_single"]["count"] == 3
        total = sum(row["count"] for row in section.values())
        assert total == 6

    def test_single_group_equals_overall(self):
        rows = [o for o in mixed_outcomes() if o.type is ExtractionType.SIMPLE]
        section = breakdown(rows, "type")
        counts, metrics = score_detection(
            [o.flagged for o in rows], [o.label for o in rows]
        )
        entry = section["simple"]
        assert entry["tp"] == counts.tp and entry["fp"] == counts.fp
        assert entry["precision"] == metrics.precision
        assert entry["f1"] == metrics.f1

    def test_partition_sums_match_overall(self):
        rows = mixed_outcomes()
        section = breakdown(rows, "type")
        whole, _ = score_detection(
            [o.flagged for o in rows], [o.label for o in rows]
        )
        for field in ("tp", "fp", "fn", "tn"):
            assert sum(r[field] for r in section.values()) == getattr(whole, field)

    def test_category_grouping_skips_uncategorized(self):
        section = breakdown(mixed_outcomes(), "category")
        assert set(section) == {"quantitative", "utilization"}
        assert sum(r["count"] for r in section.values()) == 4
        assert "generation_em" not in section["quantitative"]

    def test_type_groups_carry_generation_em(self):
        section = breakdown(mixed_outcomes(), "type")
        assert section["simple"]["generation_em"] == 0.5  # 1 of 2 detected match
        assert section["complex_single"]["generation_em"] == 1.0

    def test_unknown_key_rejected(self):
        with pytest.raises(EvalError):
            breakdown(mixed_outcomes(), "flavor")

    def test_empty_groups_omitted(self):
        rows = [o for o in mixed_outcomes() if o.type is ExtractionType.SIMPLE]
        assert "complex_multi" not in breakdown(rows, "type")


class TestReport:
    def test_report_fields_and_json(self):
        report = report_from_outcomes(mixed_outcomes())
        data = report.to_dict()
        assert set(data) == {
            "precision", "recall", "f1", "confusion", "generation_em",
            "by_type", "by_category", "errors",
        }
        json.dumps(data)  # must be serializable as-is

    def test_confusion_normalizations(self):
        report = report_from_outcomes(mixed_outcomes())
        c = report.to_dict()["confusion"]
        assert (c["tp"], c["fp"], c["fn"], c["tn"]) == (3, 1, 1, 1)
        assert c["predicted_positive"]["tp"] == 0.75
        assert c["predicted_positive"]["fp"] == 0.25
        assert c["gold_positive"]["tp"] == 0.75
        assert c["gold_positive"]["fn"] == 0.25

    def test_error_list_contents(self):
        report = report_from_outcomes(mixed_outcomes())
        ids = [e["id"] for e in report.errors]
        # miss, false alarm, and the generation mismatch; exact matches absent
        assert ids == [1, 2, 3]
        miss = next(e for e in report.errors if e["id"] == 2)
        assert miss == {"id": 2, "expected": "c == on", "got": None}

    def test_structural_match_is_not_an_error(self):
        report = report_from_outcomes(mixed_outcomes())
        assert all(e["id"] != 5 for e in report.errors)

    def test_overall_em_counts_detected_gold_positives(self):
        report = report_from_outcomes(mixed_outcomes())
        assert report.generation_em == pytest.approx(2 / 3)

    def test_empty_outcomes_rejected(self):
        with pytest.raises(EvalError):
            report_from_outcomes([])

    def test_render_is_textual(self):
        report = report_from_outcomes(mixed_outcomes())
        text = render_report(report)
        assert "precision" in text
        assert "simple" in text
        assert "Errors: 3" in text


class TestModelEvaluation:
    def test_evaluate_runs_the_two_step_pipeline(self):
        from specsyn.model import Model, ModelConfig, TrainConfig, train
        from specsyn.synthdata import LabeledSample

        samples = []
        for i in range(6):
            samples.append(LabeledSample(
                text="set <keyword1> to more than <num1> units .",
                tags={"keyword1": f"opt{i}", "num1": str(10 + i)},
                label=True,
                target=("<keyword1>", ">", "<num1>"),
                category=Category.QUANTITATIVE,
                type=ExtractionType.SIMPLE,
            ))
            samples.append(LabeledSample(
                text="see page <num1> for details of <keyword1> .",
                tags={"keyword1": f"opt{i}", "num1": str(i)},
                label=False,
                target=(),
                category=None,
                type=ExtractionType.SIMPLE,
            ))
        config = ModelConfig(d_model=16, blocks=1, heads=4, max_len=32)
        result = train(samples, TrainConfig(epochs=200, rng_seed=3), config)
        report = evaluate(result.model, samples)
        assert report.confusion.total == len(samples)
        assert report.metrics.f1 == 1.0
        assert report.generation_em == 1.0
        expected = gold_spec(samples[0])
        assert expected == "opt0 > 10"

    def test_gold_spec_for_negative_is_none(self):
        from specsyn.synthdata import LabeledSample

        sample = LabeledSample(
            text="see page <num1> for details of <keyword1> .",
            tags={"keyword1": "a", "num1": "3"},
            label=False,
            target=(),
            category=None,
            type=ExtractionType.SIMPLE,
        )
        assert gold_spec(sample) is None
