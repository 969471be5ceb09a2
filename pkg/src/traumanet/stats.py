"""Included-vs-excluded cohort comparison: Student's t and Pearson chi-square tests.

The distribution tails come from regularized incomplete beta / gamma functions
evaluated here with Lentz's continued-fraction method (target accuracy 1e-10).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .domain import NO_COMORBIDITIES, DataValidationError, PatientRecord, Sex

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 10_000
P_FLOOR = 1e-300


def _lentz(a_coef, b_coef, b0: float) -> float:
    """Evaluate b0 + a1/(b1 + a2/(b2 + ...)) by the modified Lentz method."""
    f = b0 if b0 != 0 else _TINY
    c, d = f, 0.0
    for m in range(1, _MAX_ITER):
        a, b = a_coef(m), b_coef(m)
        d = b + a * d
        d = _TINY if d == 0 else d
        c = b + a / c
        c = _TINY if c == 0 else c
        d = 1.0 / d
        delta = c * d
        f *= delta
        if abs(delta - 1.0) < _EPS:
            return f
    raise ArithmeticError("continued fraction did not converge")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) / (a * _betacf_tail(a, b, x))
    return 1.0 - math.exp(log_front) / (b * _betacf_tail(b, a, 1.0 - x))


def _betacf_tail(a: float, b: float, x: float) -> float:
    # 1 + d1/(1 + d2/(1 + ...)), so I_x = front / (a * this)
    def a_coef(m):
        k, odd = divmod(m, 2)
        if odd:
            return -(a + k) * (a + b + k) * x / ((a + 2 * k) * (a + 2 * k + 1))
        return k * (b - k) * x / ((a + 2 * k - 1) * (a + 2 * k))

    return _lentz(a_coef, lambda m: 1.0, 1.0)


def gammainc_upper(s: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(s, x)."""
    if s <= 0:
        raise ValueError("s must be positive")
    if x < 0:
        raise ValueError("x must be non-negative")
    if x == 0:
        return 1.0
    log_front = -x + s * math.log(x) - math.lgamma(s)
    if x < s + 1.0:
        # series for the lower function P, then Q = 1 - P
        term = total = 1.0 / s
        n = s
        for _ in range(_MAX_ITER):
            n += 1.0
            term *= x / n
            total += term
            if abs(term) < abs(total) * _EPS:
                break
        else:
            raise ArithmeticError("gamma series did not converge")
        return max(0.0, 1.0 - math.exp(log_front) * total)

    # Legendre continued fraction: Q = front / (x + 1 - s - 1(1-s)/(x + 3 - s - ...))
    def a_coef(m):
        return -m * (m - s)

    cf = _lentz(a_coef, lambda m: x + 2.0 * m + 1.0 - s, x + 1.0 - s)
    return math.exp(log_front) / cf


def t_two_sided_p(t: float, df: float) -> float:
    if df <= 0:
        raise ValueError("df must be positive")
    if math.isinf(t):
        return 0.0
    return min(1.0, betainc(df / 2.0, 0.5, df / (df + t * t)))


def chi2_upper_p(x: float, df: float) -> float:
    if df <= 0:
        raise ValueError("df must be positive")
    return min(1.0, gammainc_upper(df / 2.0, max(0.0, x) / 2.0))


@dataclass(frozen=True)
class TestResult:
    statistic: float
    degrees_of_freedom: float
    p_value: float
    significant: bool
    label: str = ""
    test: str = ""

    @property
    def p_display(self) -> str:
        return format_p(self.p_value)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["p_display"] = self.p_display
        return d


TestResult.__test__ = False  # not a pytest class


def format_p(p: float) -> str:
    """Never prints an exact zero: underflowed tails read ``<1e-300``."""
    if p < P_FLOOR:
        return "<1e-300"
    return f"{p:.4g}"


def _result(stat, df, p, alpha, label, test) -> TestResult:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0,1), got {alpha}")
    p = float(min(1.0, max(0.0, p)))
    return TestResult(float(stat), float(df), p, p < alpha, label, test)


def t_test(sample_a, sample_b, alpha: float = 0.05, welch: bool = False, label: str = "") -> TestResult:
    """Two-sided two-sample t-test; pooled variance unless ``welch``.

    Both variances zero: p = 1 if the means are equal, else p = 0 (t = +-inf).
    """
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    na, nb = a.size, b.size
    if na < 2 or nb < 2:
        raise DataValidationError(f"t-test needs at least 2 values per sample, got {na} and {nb}")
    ma, mb = a.mean(), b.mean()
    va, vb = a.var(ddof=1), b.var(ddof=1)
    diff = ma - mb
    if welch:
        se2 = va / na + vb / nb
        df = se2 ** 2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1)) if se2 > 0 else na + nb - 2
    else:
        df = na + nb - 2
        se2 = ((na - 1) * va + (nb - 1) * vb) / df * (1.0 / na + 1.0 / nb)
    name = "welch_t" if welch else "student_t"
    if se2 == 0:
        if diff == 0:
            return _result(0.0, df, 1.0, alpha, label, name)
        return _result(math.copysign(math.inf, diff), df, 0.0, alpha, label, name)
    t = diff / math.sqrt(se2)
    return _result(t, df, t_two_sided_p(t, df), alpha, label, name)


def chi_square_test(contingency, alpha: float = 0.05, label: str = "") -> TestResult:
    """Pearson chi-square test of independence (no continuity correction)."""
    obs = np.asarray(contingency, dtype=np.float64)
    if obs.ndim != 2 or min(obs.shape) < 2:
        raise DataValidationError(f"contingency table must be at least 2x2, got shape {obs.shape}")
    if (obs < 0).any():
        raise DataValidationError("contingency counts must be non-negative")
    expected = obs.sum(axis=1, keepdims=True) * obs.sum(axis=0, keepdims=True) / obs.sum()
    if (expected <= 0).any():
        raise DataValidationError("zero expected cell count (an empty row or column)")
    stat = float(((obs - expected) ** 2 / expected).sum())
    df = (obs.shape[0] - 1) * (obs.shape[1] - 1)
    return _result(stat, df, chi2_upper_p(stat, df), alpha, label, "chi_square")


COMPARISONS = ("age", "gcs_total", "iss", "sex", "comorbidity_presence")


def _values(records: Sequence[PatientRecord], field: str) -> np.ndarray:
    vals = [getattr(r, field) for r in records]
    return np.array([v for v in vals if v is not None], dtype=np.float64)


def _counts(records: Sequence[PatientRecord], predicate) -> list[int]:
    hits = sum(1 for r in records if predicate(r))
    return [hits, len(records) - hits]


def compare_cohorts(included: Sequence[PatientRecord], excluded: Sequence[PatientRecord],
                    alpha: float = 0.05, welch: bool = False) -> list[TestResult]:
    """t-tests on age, GCS total and ISS; chi-square on sex and comorbidity presence.

    Records with a missing GCS component drop out of the GCS comparison only.
    """
    if not included or not excluded:
        raise DataValidationError("both cohorts must be nonempty")
    out = [t_test(_values(included, f), _values(excluded, f), alpha, welch=welch, label=f)
           for f in ("age", "gcs_total", "iss")]
    out.append(chi_square_test([_counts(included, lambda r: r.sex == Sex.FEMALE),
                                _counts(excluded, lambda r: r.sex == Sex.FEMALE)], alpha, label="sex"))
    out.append(chi_square_test([_counts(included, lambda r: NO_COMORBIDITIES not in r.comorbidities),
                                _counts(excluded, lambda r: NO_COMORBIDITIES not in r.comorbidities)],
                               alpha, label="comorbidity_presence"))
    return out


def render_results(results: Sequence[TestResult], alpha: float = 0.05) -> str:
    lines = [f"{'Variable':<22}{'Test':<12}{'Statistic':>12}{'df':>10}{'p-value':>12}  Significant (alpha={alpha:g})"]
    for r in results:
        lines.append(f"{r.label:<22}{r.test:<12}{r.statistic:>12.4f}{r.degrees_of_freedom:>10.6g}"
                     f"{r.p_display:>12}  {'yes' if r.significant else 'no'}")
    return "\n".join(lines) + "\n"
