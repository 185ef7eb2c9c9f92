"""Detection metrics, generation accuracy, and evaluation reports.

Detection quality is summarized by precision/recall/F1 plus raw confusion
counts. Generation accuracy is exact match conditioned on correct
detection: only gold-positive samples the detector flagged count toward
the denominator, and a match means both sides parse to the same
specification (formatting differences never penalize the generator).
"""

from __future__ import annotations

from dataclasses import dataclass

from . import dsl
from .corpus import ExtractionType
from .dsl import Category
from .model import predicted_label
from .tagger import NonParsingOutput, UnknownTagError, detag


class EvalError(Exception):
    """Invalid evaluation input."""


class LengthMismatch(EvalError):
    """Prediction and label lists have different lengths."""


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise EvalError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp,
            self.fn + other.fn, self.tn + other.tn,
        )


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float


def metrics_from_counts(counts: ConfusionCounts) -> Metrics:
    """P, R from counts with the 0/0 -> 0 convention; F1 harmonic mean."""
    flagged = counts.tp + counts.fp
    positive = counts.tp + counts.fn
    p = counts.tp / flagged if flagged else 0.0
    r = counts.tp / positive if positive else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return Metrics(p, r, f1)


def score_detection(predictions, labels) -> tuple[ConfusionCounts, Metrics]:
    predictions = list(predictions)
    labels = list(labels)
    if len(predictions) != len(labels):
        raise LengthMismatch(
            f"{len(predictions)} predictions vs {len(labels)} labels"
        )
    if not labels:
        raise EvalError("nothing to score")
    tp = fp = fn = tn = 0
    for flagged, label in zip(predictions, labels):
        if flagged and label:
            tp += 1
        elif flagged:
            fp += 1
        elif label:
            fn += 1
        else:
            tn += 1
    counts = ConfusionCounts(tp, fp, fn, tn)
    return counts, metrics_from_counts(counts)


def _parses_equal(predicted: str, gold: str) -> bool:
    gold_spec = dsl.parse_spec(gold)
    try:
        return dsl.parse_spec(predicted) == gold_spec
    except dsl.DslError:
        return False


def score_generation(predicted, gold) -> float:
    """Exact-match rate over gold positives the detector flagged.

    Both lists hold spec text or None (None = not flagged / no gold spec).
    Match is structural equality after parsing; a prediction that fails to
    parse is a mismatch. Gold entries must parse.
    """
    predicted = list(predicted)
    gold = list(gold)
    if len(predicted) != len(gold):
        raise LengthMismatch(f"{len(predicted)} predictions vs {len(gold)} golds")
    hits = 0
    total = 0
    for pred, want in zip(predicted, gold):
        if want is None or pred is None:
            continue
        total += 1
        try:
            hits += _parses_equal(pred, want)
        except dsl.DslError as exc:
            raise EvalError(f"gold spec does not parse: {want!r}") from exc
    return hits / total if total else 0.0


@dataclass(frozen=True)
class SampleOutcome:
    """Per-sample evaluation record feeding the aggregate report."""

    index: int
    label: bool
    flagged: bool
    type: ExtractionType
    category: Category | None
    expected: str | None
    got: str | None


def breakdown(outcomes, key: str) -> dict[str, dict]:
    """Per-group metrics for key "type" or "category"; empty groups omitted.

    Category grouping covers only samples that carry a category (negatives
    carry none). Type groups also report generation exact match.
    """
    if key not in ("type", "category"):
        raise EvalError(f"unknown group key {key!r}")
    groups: dict[str, list[SampleOutcome]] = {}
    for outcome in outcomes:
        value = getattr(outcome, key)
        if value is None:
            continue
        groups.setdefault(value.value, []).append(outcome)
    section = {}
    for name in sorted(groups):
        members = groups[name]
        counts, metrics = score_detection(
            [o.flagged for o in members], [o.label for o in members]
        )
        entry = {
            "count": len(members),
            "tp": counts.tp, "fp": counts.fp, "fn": counts.fn, "tn": counts.tn,
            "precision": metrics.precision,
            "recall": metrics.recall,
            "f1": metrics.f1,
        }
        if key == "type":
            entry["generation_em"] = score_generation(
                [o.got if o.flagged else None for o in members],
                [o.expected if o.label else None for o in members],
            )
        section[name] = entry
    return section


@dataclass
class EvaluationReport:
    metrics: Metrics
    confusion: ConfusionCounts
    generation_em: float
    by_type: dict[str, dict]
    by_category: dict[str, dict]
    errors: list[dict]

    def to_dict(self) -> dict:
        c = self.confusion
        flagged = c.tp + c.fp
        positive = c.tp + c.fn
        return {
            "precision": self.metrics.precision,
            "recall": self.metrics.recall,
            "f1": self.metrics.f1,
            "confusion": {
                "tp": c.tp, "fp": c.fp, "fn": c.fn, "tn": c.tn,
                # the share of flagged samples that were right / wrong
                "predicted_positive": {
                    "tp": c.tp / flagged if flagged else 0.0,
                    "fp": c.fp / flagged if flagged else 0.0,
                },
                # the share of gold positives found / missed
                "gold_positive": {
                    "tp": c.tp / positive if positive else 0.0,
                    "fn": c.fn / positive if positive else 0.0,
                },
            },
            "generation_em": self.generation_em,
            "by_type": self.by_type,
            "by_category": self.by_category,
            "errors": self.errors,
        }


def _predict(model, sample) -> tuple[bool, str | None]:
    """Run the two-step pipeline on one sample: detect, then generate."""
    h = model.encode_text(sample.text)
    if not predicted_label(model.detect(h)):
        return False, None
    result = model.generate(h, sample.tags)
    try:
        return True, detag(result.tokens, sample.tags)
    except (NonParsingOutput, UnknownTagError):
        # flagged but not reconstructable; kept as a raw mismatch
        return True, " ".join(result.tokens)


def gold_spec(sample) -> str | None:
    """Concrete gold spec text, reconstructed from the tagged target."""
    if not sample.label:
        return None
    return detag(sample.target, sample.tags)


def collect_outcomes(model, samples) -> list[SampleOutcome]:
    outcomes = []
    for i, sample in enumerate(samples):
        flagged, got = _predict(model, sample)
        outcomes.append(SampleOutcome(
            index=i,
            label=bool(sample.label),
            flagged=flagged,
            type=sample.type,
            category=sample.category,
            expected=gold_spec(sample),
            got=got,
        ))
    return outcomes


def _is_error(outcome: SampleOutcome) -> bool:
    if outcome.flagged != outcome.label:
        return True
    if not outcome.flagged:
        return False
    return not _parses_equal(outcome.got, outcome.expected)


def report_from_outcomes(outcomes) -> EvaluationReport:
    if not outcomes:
        raise EvalError("nothing to evaluate")
    counts, metrics = score_detection(
        [o.flagged for o in outcomes], [o.label for o in outcomes]
    )
    em = score_generation(
        [o.got if o.flagged else None for o in outcomes],
        [o.expected if o.label else None for o in outcomes],
    )
    errors = [
        {"id": o.index, "expected": o.expected, "got": o.got}
        for o in outcomes
        if _is_error(o)
    ]
    return EvaluationReport(
        metrics=metrics,
        confusion=counts,
        generation_em=em,
        by_type=breakdown(outcomes, "type"),
        by_category=breakdown(outcomes, "category"),
        errors=errors,
    )


def evaluate(model, samples) -> EvaluationReport:
    """Score a trained model on labeled samples."""
    return report_from_outcomes(collect_outcomes(model, samples))


def render_report(report: EvaluationReport) -> str:
    """Plain-text tables for terminal output."""
    c = report.confusion
    lines = [
        "Detection",
        f"  precision {report.metrics.precision:.4f}",
        f"  recall    {report.metrics.recall:.4f}",
        f"  f1        {report.metrics.f1:.4f}",
        f"  counts    tp={c.tp} fp={c.fp} fn={c.fn} tn={c.tn}",
        f"  generation exact match {report.generation_em:.4f}",
        "",
    ]

    def table(title, section, with_em):
        if not section:
            return
        lines.append(title)
        header = f"  {'group':<16}{'count':>6}{'prec':>8}{'recall':>8}{'f1':>8}"
        if with_em:
            header += f"{'gen':>8}"
        lines.append(header)
        for name, row in section.items():
            text = (
                f"  {name:<16}{row['count']:>6}"
                f"{row['precision']:>8.3f}{row['recall']:>8.3f}{row['f1']:>8.3f}"
            )
            if with_em:
                text += f"{row['generation_em']:>8.3f}"
            lines.append(text)
        lines.append("")

    table("By extraction type", report.by_type, with_em=True)
    table("By category", report.by_category, with_em=False)
    lines.append(f"Errors: {len(report.errors)}")
    return "\n".join(lines)
