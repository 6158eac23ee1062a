"""Confusion counts, classification metrics, reliability score and model comparison tables.

Phishing is the positive class throughout.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Optional, Sequence, Union

from .errors import EmptyCounts, MissingLabel, UnreadableFile
from .ingest import Label, normalize_label
from .llm import ClassificationOutcome, ErrorInfo
from .prompt import Risk, Verdict

__all__ = [
    "ConfusionCounts",
    "Metrics",
    "ReliabilityResult",
    "ModelResult",
    "Discrepancy",
    "ComparisonReport",
    "confusion_counts",
    "compute_metrics",
    "reliability_score",
    "render_report",
    "evaluate",
    "load_count_table",
    "METRIC_NAMES",
    "DISPLAY_DECIMALS",
    "DISCREPANCY_TOLERANCE",
    "display",
]

METRIC_NAMES = ("accuracy", "precision", "recall", "f1", "fpr", "fnr")
DISPLAY_DECIMALS = 4
# One unit in the last displayed decimal; published tables are truncated
# to four places, so anything closer is not a disagreement.
DISCREPANCY_TOLERANCE = 1e-4

Prediction = Union[Verdict, ErrorInfo, ClassificationOutcome, None]


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0
    unscored: int = 0  # error outcomes, kept out of the four cells

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn", "unscored"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def swap(self) -> "ConfusionCounts":
        """Counts with Legit treated as the positive class."""
        return ConfusionCounts(tp=self.tn, fp=self.fn, tn=self.tp, fn=self.fp, unscored=self.unscored)

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp,
            self.fp + other.fp,
            self.tn + other.tn,
            self.fn + other.fn,
            self.unscored + other.unscored,
        )

    def matrix(self) -> list[list[int]]:
        """Rows are the true class (Phishing, Legit); columns the prediction."""
        return [[self.tp, self.fn], [self.fp, self.tn]]


@dataclass(frozen=True)
class Metrics:
    """The six rates; ``None`` marks a rate whose denominator is zero."""

    accuracy: Optional[float]
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]
    fpr: Optional[float]
    fnr: Optional[float]

    def as_dict(self) -> dict[str, Optional[float]]:
        return {name: getattr(self, name) for name in METRIC_NAMES}


@dataclass(frozen=True)
class ReliabilityResult:
    score: float
    full_marks: int
    half_marks: int
    zero_marks: int

    @property
    def total(self) -> int:
        return self.full_marks + self.half_marks + self.zero_marks


def _truth(value) -> Label:
    if value is None or (isinstance(value, str) and not value.strip()):
        raise MissingLabel("outcome has no ground-truth label")
    label = normalize_label(value)
    if label is None:
        raise MissingLabel("outcome has no ground-truth label")
    return label


def _verdict(prediction: Prediction) -> Optional[Verdict]:
    if isinstance(prediction, ClassificationOutcome):
        return prediction.verdict
    if isinstance(prediction, Verdict):
        return prediction
    return None


def confusion_counts(outcomes: Iterable[tuple[object, Prediction]]) -> ConfusionCounts:
    """Tally ``(truth, prediction)`` pairs.

    A prediction that is not a verdict (an error, or an outcome carrying an
    error) is counted under ``unscored``.
    """
    tp = fp = tn = fn = unscored = 0
    for truth, prediction in outcomes:
        label = _truth(truth)
        verdict = _verdict(prediction)
        if verdict is None:
            unscored += 1
            continue
        actual = label is Label.PHISHING
        if verdict.is_phishing and actual:
            tp += 1
        elif verdict.is_phishing:
            fp += 1
        elif actual:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp, fp, tn, fn, unscored)


def _ratio(num: int, den: int) -> Optional[float]:
    return num / den if den else None


def compute_metrics(c: ConfusionCounts) -> Metrics:
    if c.total == 0:
        raise EmptyCounts("no scored outcomes")
    precision = _ratio(c.tp, c.tp + c.fp)
    recall = _ratio(c.tp, c.tp + c.fn)
    if precision is None or recall is None:
        f1 = None
    elif precision + recall == 0:
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return Metrics(
        accuracy=(c.tp + c.tn) / c.total,
        precision=precision,
        recall=recall,
        f1=f1,
        fpr=_ratio(c.fp, c.fp + c.tn),
        fnr=_ratio(c.fn, c.fn + c.tp),
    )


def reliability_score(outcomes: Iterable[tuple[object, Prediction]]) -> ReliabilityResult:
    """Mean mark over scored outcomes.

    A correct prediction earns 1.  A wrong one earns 0.5 when the true class
    is Phishing and the predicted risk was Medium, otherwise 0.  Error
    outcomes are skipped.
    """
    full = half = zero = 0
    for truth, prediction in outcomes:
        label = _truth(truth)
        verdict = _verdict(prediction)
        if verdict is None:
            continue
        actual = label is Label.PHISHING
        if verdict.is_phishing == actual:
            full += 1
        elif actual and verdict.risk is Risk.MEDIUM:
            half += 1
        else:
            zero += 1
    total = full + half + zero
    if total == 0:
        raise EmptyCounts("no scored outcomes")
    return ReliabilityResult((full + 0.5 * half) / total, full, half, zero)


# ---------------------------------------------------------------------------
# reporting


@dataclass(frozen=True)
class ModelResult:
    name: str
    counts: ConfusionCounts
    reliability: Optional[ReliabilityResult] = None
    # metric values published elsewhere, checked against the counts
    stated: Mapping[str, float] = field(default_factory=dict)

    @property
    def metrics(self) -> Metrics:
        return compute_metrics(self.counts)


@dataclass(frozen=True)
class Discrepancy:
    model: str
    metric: str
    stated: float
    recomputed: Optional[float]

    def __str__(self) -> str:
        return f"{self.model}: stated {self.metric} {self.stated:.{DISPLAY_DECIMALS}f} != recomputed {display(self.recomputed)}"


CSV_COLUMNS = (
    "model", "tp", "fp", "tn", "fn", "unscored",
    "accuracy", "precision", "recall", "f1", "fpr", "fnr",
    "reliability", "flags",
)


def display(value: Optional[float]) -> str:
    """Four decimals, truncated rather than rounded (0.97218 shows as 0.9721).

    Truncation is the convention of the published comparison tables.  The
    small epsilon keeps exact quotients such as 0.75 from flooring down
    through float error.
    """
    if value is None:
        return "undefined"
    scale = 10 ** DISPLAY_DECIMALS
    return f"{math.floor(value * scale + 1e-9) / scale:.{DISPLAY_DECIMALS}f}"


@dataclass(frozen=True)
class ComparisonReport:
    rows: tuple[ModelResult, ...]
    discrepancies: tuple[Discrepancy, ...]

    def flagged(self, model: str) -> list[str]:
        return [d.metric for d in self.discrepancies if d.model == model]

    def to_records(self) -> list[dict]:
        out = []
        for row in self.rows:
            m = row.metrics
            out.append(
                {
                    "model": row.name,
                    "counts": {
                        "tp": row.counts.tp, "fp": row.counts.fp,
                        "tn": row.counts.tn, "fn": row.counts.fn,
                        "unscored": row.counts.unscored,
                    },
                    "metrics": m.as_dict(),
                    "reliability": None if row.reliability is None else {
                        "score": row.reliability.score,
                        "full_marks": row.reliability.full_marks,
                        "half_marks": row.reliability.half_marks,
                        "zero_marks": row.reliability.zero_marks,
                    },
                    "stated": dict(row.stated),
                    "flags": self.flagged(row.name),
                }
            )
        return out

    def to_json(self) -> str:
        return json.dumps(
            {"models": self.to_records(), "discrepancies": [asdict(d) for d in self.discrepancies]},
            indent=2,
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in self.rows:
            m = row.metrics
            writer.writerow(
                [
                    row.name, row.counts.tp, row.counts.fp, row.counts.tn, row.counts.fn,
                    row.counts.unscored,
                    *(display(getattr(m, name)) for name in ("accuracy", "precision", "recall", "f1", "fpr", "fnr")),
                    "" if row.reliability is None else display(row.reliability.score),
                    ";".join(self.flagged(row.name)),
                ]
            )
        return buf.getvalue()

    def to_text(self) -> str:
        header = ["Model", "TP", "FP", "TN", "FN", "Precision", "Recall", "F1", "Accuracy", "FPR", "FNR", "Reliab."]
        table = [header]
        for row in self.rows:
            m = row.metrics
            flags = set(self.flagged(row.name))
            cell = lambda name: display(getattr(m, name)) + ("*" if name in flags else "")  # noqa: E731
            table.append(
                [
                    row.name, str(row.counts.tp), str(row.counts.fp), str(row.counts.tn), str(row.counts.fn),
                    cell("precision"), cell("recall"), cell("f1"), cell("accuracy"), cell("fpr"), cell("fnr"),
                    "-" if row.reliability is None else display(row.reliability.score),
                ]
            )
        widths = [max(len(r[i]) for r in table) for i in range(len(header))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in table]
        lines.insert(1, "  ".join("-" * w for w in widths))
        if self.discrepancies:
            lines.append("")
            lines.append("* stated value disagrees with recomputation from counts:")
            lines.extend(f"  {d}" for d in self.discrepancies)
        return "\n".join(lines) + "\n"

    def confusion_matrices(self) -> str:
        blocks = []
        for row in self.rows:
            c = row.counts
            w = max(len(str(v)) for v in (c.tp, c.fp, c.tn, c.fn, "Phishing"))
            blocks.append(
                "\n".join(
                    [
                        f"{row.name}",
                        f"{'true / pred':<12}{'Phishing':>{w + 2}}{'Legit':>{w + 2}}",
                        f"{'Phishing':<12}{c.tp:>{w + 2}}{c.fn:>{w + 2}}",
                        f"{'Legit':<12}{c.fp:>{w + 2}}{c.tn:>{w + 2}}",
                    ]
                )
            )
        return "\n\n".join(blocks) + "\n"


def _check(row: ModelResult) -> list[Discrepancy]:
    metrics = row.metrics.as_dict()
    found = []
    for name, stated in row.stated.items():
        if name not in metrics:
            continue
        recomputed = metrics[name]
        if recomputed is None or abs(recomputed - float(stated)) > DISCREPANCY_TOLERANCE:
            found.append(Discrepancy(row.name, name, float(stated), recomputed))
    return found


def render_report(results: Sequence[ModelResult]) -> ComparisonReport:
    """Comparison table sorted by accuracy, highest first, with discrepancy flags."""
    if not results:
        raise ValueError("at least one model result is required")
    rows = sorted(results, key=lambda r: (-(r.metrics.accuracy or 0.0), r.name))
    discrepancies = [d for row in rows for d in _check(row)]
    return ComparisonReport(tuple(rows), tuple(discrepancies))


def evaluate(
    name: str,
    outcomes: Sequence[tuple[object, Prediction]],
    stated: Optional[Mapping[str, float]] = None,
) -> ModelResult:
    """Counts plus reliability for one model's labelled outcomes."""
    counts = confusion_counts(outcomes)
    try:
        reliability = reliability_score(outcomes)
    except EmptyCounts:
        reliability = None
    return ModelResult(name, counts, reliability, dict(stated or {}))


def load_count_table(path) -> list[ModelResult]:
    """Read model rows from a CSV with ``model,tp,fp,tn,fn`` columns.

    Optional columns named after a metric (``precision``, ``f1``, ...) are
    taken as published values to check against the counts.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except (OSError, UnicodeDecodeError, csv.Error) as exc:
        raise UnreadableFile(f"cannot read {path}: {exc}") from exc
    results = []
    for number, row in enumerate(rows, 2):
        try:
            counts = ConfusionCounts(*(int(row[k]) for k in ("tp", "fp", "tn", "fn")))
            stated = {m: float(row[m]) for m in METRIC_NAMES if (row.get(m) or "").strip()}
            name = (row.get("model") or "").strip() or f"row{number}"
        except (KeyError, TypeError, ValueError) as exc:
            raise UnreadableFile(f"{path}:{number}: bad count row: {exc}") from None
        results.append(ModelResult(name, counts, stated=stated))
    if not results:
        raise UnreadableFile(f"{path}: no model rows")
    return results
