"""Classifier metrics with stratified bootstrap CIs, mechanism ablation and report rendering."""

from __future__ import annotations

import csv
import dataclasses
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .domain import MECHANISMS, DataValidationError, PatientRecord, filter_age_group, label_mortality, slug

METRICS = ("auc", "sensitivity", "specificity", "gap", "ppv", "npv", "mcc")


class UndefinedMetricError(ValueError):
    """A metric whose denominator is zero for the given counts."""


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def confusion_at_threshold(probabilities, labels, threshold: float) -> ConfusionCounts:
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {y.shape}")
    if p.size == 0:
        raise ValueError("no rows to evaluate")
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0,1), got {threshold}")
    pred = p >= threshold
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    return ConfusionCounts(tp=tp, tn=int(y.size - tp - fp - fn), fp=fp, fn=fn)


def _ratio(num: int, den: int, name: str) -> float:
    if den == 0:
        raise UndefinedMetricError(f"{name} is undefined: zero denominator")
    return num / den


def sensitivity(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fn, "sensitivity")


def specificity(c: ConfusionCounts) -> float:
    return _ratio(c.tn, c.tn + c.fp, "specificity")


def ppv(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fp, "ppv")


def npv(c: ConfusionCounts) -> float:
    return _ratio(c.tn, c.tn + c.fn, "npv")


def gap(sens: float, spec: float) -> float:
    """Distance from a perfect classifier: (1 - sensitivity) + (1 - specificity).

    Rounded to 12 decimals so published two-decimal inputs give exact two-decimal gaps.
    """
    return round((1.0 - sens) + (1.0 - spec), 12)


def mcc(c: ConfusionCounts) -> float:
    """Matthews correlation; 0 when any marginal is empty."""
    den = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn)
    if den == 0:
        return 0.0
    return (c.tp * c.tn - c.fp * c.fn) / math.sqrt(den)


def auc(probabilities, labels) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) with ties counted 1/2."""
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative")
    ranks = rankdata(p)  # average ranks for ties
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_curve(probabilities, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(fpr, tpr, thresholds) with one point per distinct score, starting at (0, 0)."""
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    order = np.argsort(-p, kind="mergesort")
    p, y = p[order], y[order]
    distinct = np.flatnonzero(np.diff(p)) if p.size > 1 else np.array([], dtype=int)
    ends = np.concatenate([distinct, [p.size - 1]])
    tps = np.cumsum(y)[ends]
    fps = (ends + 1) - tps
    tpr = np.concatenate([[0.0], tps / max(1, y.sum())])
    fpr = np.concatenate([[0.0], fps / max(1, (~y).sum())])
    return fpr, tpr, np.concatenate([[np.inf], p[ends]])


def youden_threshold(probabilities, labels) -> float:
    """Score cutoff maximizing sensitivity + specificity - 1."""
    fpr, tpr, thr = roc_curve(probabilities, labels)
    j = np.argmax(tpr[1:] - fpr[1:]) + 1
    return float(np.clip(thr[j], np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0)))


def _or_none(fn, c: ConfusionCounts) -> float | None:
    try:
        return fn(c)
    except UndefinedMetricError:
        return None


def metric_values(probabilities, labels, threshold: float, allow_undefined: bool = False) -> dict[str, float | None]:
    """All seven metrics.  Undefined PPV/NPV raise, or become None with ``allow_undefined``."""
    c = confusion_at_threshold(probabilities, labels, threshold)
    sens, spec = sensitivity(c), specificity(c)
    if allow_undefined:
        pv, nv = _or_none(ppv, c), _or_none(npv, c)
    else:
        pv, nv = ppv(c), npv(c)
    return {
        "auc": auc(probabilities, labels),
        "sensitivity": sens,
        "specificity": spec,
        "gap": gap(sens, spec),
        "ppv": pv,
        "npv": nv,
        "mcc": mcc(c),
    }


# ---------------------------------------------------------------------------
# bootstrap


class BootstrapError(ArithmeticError):
    pass


def _resample_indices(pos: np.ndarray, neg: np.ndarray, seed: int, replicate: int) -> np.ndarray:
    # counter-based stream per replicate: results do not depend on evaluation order
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(replicate,)))
    return np.concatenate([
        pos[rng.integers(0, len(pos), size=len(pos))],
        neg[rng.integers(0, len(neg), size=len(neg))],
    ])


def bootstrap_cis(probabilities, labels,
                  statistic: Callable[[np.ndarray, np.ndarray], Mapping[str, float | None]],
                  n_boot: int = 1000, seed: int = 0, level: float = 0.95,
                  required: Sequence[str] | None = None,
                  ) -> tuple[dict[str, tuple[float, float] | None], dict[str, int]]:
    """Stratified percentile bootstrap for every value returned by ``statistic``.

    Positives and negatives are resampled separately with replacement.  A value
    that is None, or a replicate where ``statistic`` raises UndefinedMetricError,
    counts as skipped for that metric.  A metric skipped in more than half the
    replicates gets no interval (None); for metrics in ``required`` (default: all)
    that is a BootstrapError instead.  Returns (intervals, skipped counts).
    """
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    pos, neg = np.flatnonzero(y), np.flatnonzero(~y)
    if len(pos) == 0 or len(neg) == 0:
        raise UndefinedMetricError("bootstrap needs both classes")
    if n_boot < 1:
        raise ValueError("n_boot must be >= 1")
    draws: dict[str, list[float]] = {}
    failed = 0
    for b in range(n_boot):
        idx = _resample_indices(pos, neg, seed, b)
        try:
            values = statistic(p[idx], y[idx])
        except UndefinedMetricError:
            failed += 1
            continue
        for k, v in values.items():
            lst = draws.setdefault(k, [])
            if v is not None:
                lst.append(v)
    if failed * 2 > n_boot:
        raise BootstrapError(f"{failed} of {n_boot} bootstrap resamples had an undefined metric")
    alpha = (1.0 - level) / 2.0
    required = set(draws) if required is None else set(required)
    cis: dict[str, tuple[float, float] | None] = {}
    skipped = {k: n_boot - len(v) for k, v in draws.items()}
    for k, vals in draws.items():
        if skipped[k] * 2 > n_boot:
            if k in required:
                raise BootstrapError(f"{k}: {skipped[k]} of {n_boot} bootstrap resamples undefined")
            cis[k] = None
            continue
        lo, hi = np.quantile(np.array(vals), [alpha, 1.0 - alpha])
        cis[k] = (float(lo), float(hi))
    return cis, skipped


def bootstrap_ci(probabilities, labels, metric: Callable[[np.ndarray, np.ndarray], float],
                 n_boot: int = 1000, seed: int = 0) -> tuple[float, float]:
    cis, _ = bootstrap_cis(probabilities, labels, lambda p, y: {"m": metric(p, y)}, n_boot, seed)
    return cis["m"]


# ---------------------------------------------------------------------------
# reports


@dataclass
class MetricsReport:
    """Point estimates, 95% intervals and counts for one evaluation set.

    PPV (NPV) is None when no row is predicted positive (negative); its interval
    is then None as well.  Each interval is widened if needed to contain its
    point estimate.
    """

    label: str
    auc: float
    sensitivity: float
    specificity: float
    gap: float
    ppv: float | None
    npv: float | None
    mcc: float
    ci: dict[str, tuple[float, float] | None]
    threshold: float
    n_rows: int
    n_positive: int
    counts: ConfusionCounts | None = None
    youden_threshold: float | None = None
    bootstrap_skipped: dict[str, int] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {"label": self.label}
        for m in METRICS:
            d[m] = getattr(self, m)
            d[f"{m}_ci"] = None if self.ci[m] is None else list(self.ci[m])
        d.update(threshold=self.threshold, youden_threshold=self.youden_threshold,
                 n_rows=self.n_rows, n_positive=self.n_positive,
                 counts=None if self.counts is None else dataclasses.asdict(self.counts),
                 bootstrap_skipped=dict(self.bootstrap_skipped), **self.extra)
        return d


def report_from_scores(probabilities, labels, threshold: float = 0.5, label: str = "",
                       n_boot: int = 1000, seed: int = 0) -> MetricsReport:
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    if p.size == 0:
        raise DataValidationError("empty evaluation set")
    point = metric_values(p, y, threshold, allow_undefined=True)
    defined = [m for m in METRICS if point[m] is not None]
    cis, skipped = bootstrap_cis(p, y, lambda a, b: metric_values(a, b, threshold, allow_undefined=True),
                                 n_boot, seed, required=defined)
    for m in METRICS:
        if point[m] is None:
            cis[m] = None
        elif cis[m] is not None:  # percentile interval may miss a skewed point estimate
            lo, hi = cis[m]
            cis[m] = (min(lo, point[m]), max(hi, point[m]))
    return MetricsReport(
        label=label, **point, ci=cis, threshold=threshold,
        n_rows=int(p.size), n_positive=int(y.sum()),
        counts=confusion_at_threshold(p, y, threshold),
        youden_threshold=youden_threshold(p, y), bootstrap_skipped=skipped,
    )


def canonical_mechanism(name: str) -> str:
    s = slug(name)
    if s not in MECHANISMS:
        raise DataValidationError(f"unknown injury mechanism {name!r}")
    return s


def ablate_mechanism(records: Sequence[PatientRecord], mechanism: str) -> list[PatientRecord]:
    """Test cohort without any visit of the given injury mechanism."""
    m = canonical_mechanism(mechanism)
    return [r for r in records if r.injury_mechanism != m]


@dataclass(frozen=True)
class EvalOptions:
    threshold: float | None = None  # None: the artifact's threshold
    ablate_mechanism: str | None = None
    age_group: str = "all"
    n_boot: int = 1000
    seed: int = 0
    strict: bool = True


def evaluate(artifact, records: Sequence[PatientRecord], options: EvalOptions = EvalOptions()
             ) -> list[MetricsReport]:
    """Reports for the (age-filtered) test cohort.

    With ``ablate_mechanism`` two rows come back: the full cohort ("with_<m>")
    and the cohort without that mechanism ("no_<m>").
    """
    from .train import predict  # local: train imports pipeline, not evaluation

    threshold = artifact.config.threshold if options.threshold is None else options.threshold
    cohort = filter_age_group(records, options.age_group)
    arms = [(options.age_group, cohort)]
    if options.ablate_mechanism:
        m = canonical_mechanism(options.ablate_mechanism)
        arms = [(f"with_{m}", cohort), (f"no_{m}", ablate_mechanism(cohort, m))]
    reports = []
    for label, rows in arms:
        if not rows:
            raise DataValidationError(f"evaluation set {label!r} is empty after filtering")
        y = np.array([label_mortality(r.disposition) for r in rows], dtype=bool)
        p, _ = predict(artifact, rows, strict=options.strict)
        rep = report_from_scores(p, y, threshold, label, options.n_boot, options.seed)
        rep.extra = {"age_group": options.age_group, "rows_removed": len(cohort) - len(rows),
                     "fraction_removed": (len(cohort) - len(rows)) / len(cohort) if cohort else 0.0}
        reports.append(rep)
    return reports


_TABLE_HEAD = ("Model", "AUC (95% CI)", "Sensitivity (95% CI)", "Specificity (95% CI)", "Gap*",
               "PPV (95% CI)", "NPV (95% CI)", "MCC (95% CI)")


def _fmt(rep: MetricsReport, m: str, digits: int) -> str:
    v = getattr(rep, m)
    if v is None:
        return "undefined"
    if rep.ci[m] is None:
        return f"{v:.{digits}f} (n/a)"
    lo, hi = rep.ci[m]
    return f"{v:.{digits}f} ({lo:.{digits}f}-{hi:.{digits}f})"


def render_table(reports: Sequence[MetricsReport], title: str = "") -> str:
    rows = [_TABLE_HEAD]
    for r in reports:
        rows.append((r.label, _fmt(r, "auc", 2), _fmt(r, "sensitivity", 2), _fmt(r, "specificity", 2),
                     f"{r.gap:.2f}", _fmt(r, "ppv", 2), _fmt(r, "npv", 3), _fmt(r, "mcc", 3)))
    widths = [max(len(row[i]) for row in rows) for i in range(len(_TABLE_HEAD))]
    lines = [title] if title else []
    for j, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if j == 0:
            lines.append("  ".join("-" * w for w in widths))
    lines.append("*Gap = (1 - sensitivity) + (1 - specificity)")
    foot = ", ".join(f"{r.label}: threshold {r.threshold:g}, n={r.n_rows}, positives={r.n_positive}"
                     for r in reports)
    lines.append(foot)
    return "\n".join(lines) + "\n"


def reports_to_csv(reports: Sequence[MetricsReport]) -> str:
    """One CSV row per report, for aggregating runs into summary tables."""
    buf = io.StringIO()
    cols = ["label"] + [c for m in METRICS for c in (m, f"{m}_lo", f"{m}_hi")] + ["threshold", "n_rows", "n_positive"]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in reports:
        row = [r.label]
        for m in METRICS:
            v, ci = getattr(r, m), r.ci[m]
            row += ["" if v is None else repr(v)] + (["", ""] if ci is None else [repr(ci[0]), repr(ci[1])])
        row += [repr(r.threshold), r.n_rows, r.n_positive]
        w.writerow(row)
    return buf.getvalue()
