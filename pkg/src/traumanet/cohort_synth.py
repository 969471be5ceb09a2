"""Synthetic trauma cohorts calibrated to published trauma-registry marginals.

Each record gets a latent log-odds of death built from ISS, GCS deficit, age,
hypotension and a fall-in-the-elderly term, plus two unobserved terms the
network never sees: a general frailty, and extra risk for adult falls (so that
falls are harder to predict from the recorded predictors).  The intercept is
solved by bisection so the cohort's mean death probability hits
``mortality_rate``.  Outcomes are drawn from that risk; deaths with high
frailty are more likely to happen in the ED, which makes the ED outcome set
harder than the hospital set.
"""

from __future__ import annotations

import dataclasses
import functools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize
from scipy import stats as sps

from .domain import (
    ADULT_AGE,
    COMORBIDITIES,
    GCS_FIELDS,
    INJURY_TYPES,
    INTENTS,
    MECHANISMS,
    NO_COMORBIDITIES,
    RACES,
    VITALS,
    DataValidationError,
    Disposition,
    PatientRecord,
    Sex,
)

AGE_GROUPS = ("children", "adults", "all")
AIS_NAMES = tuple(f"ais_{i}" for i in range(1, 10))
# (lower, upper) physiologic bounds; truncation limits for sampling.
BOUNDS = {
    "oxygen_saturation": (0.0, 100.0),
    "systolic_bp": (0.0, 300.0),
    "pulse": (0.0, 300.0),
    "respiratory_rate": (0.0, 80.0),
    "temperature": (25.0, 45.0),
    "gcs_eye": (1, 4),
    "gcs_verbal": (1, 5),
    "gcs_motor": (1, 6),
    "iss": (0, 75),
    **{a: (0, 6) for a in AIS_NAMES},
}
AGE_BOUNDS = {"children": (0, ADULT_AGE - 1), "adults": (ADULT_AGE, 100)}
# Decimal places kept for each vital after sampling.
VITAL_DECIMALS = {"oxygen_saturation": 0, "systolic_bp": 0, "pulse": 0, "respiratory_rate": 0, "temperature": 1}
# Registry group sizes; used to mix the two groups for age_group="all".
GROUP_SIZES = {"children": 300_847, "adults": 1_706_638}

# Published cohort characteristics, in percent, per group (children, adults).
_RACE_PCT = {
    "children": (67.06, 17.72, 11.66, 1.73, 1.14, 0.4, 0.29),
    "adults": (75.54, 13.76, 7.41, 1.67, 0.89, 0.51, 0.2),
}
_INTENT_PCT = {"children": (7.27, 0.08, 0.83, 0.62, 90.48), "adults": (10.65, 0.19, 1.55, 0.37, 86.84)}
_TYPE_PCT = {"children": (82.2, 3.32, 7.33, 6.43), "adults": (85.64, 1.55, 3.92, 8.48)}
_MECHANISM_PCT = {
    "children": (0.01, 0.01, 3.02, 0.09, 32.45, 0.98, 3.4, 2.34, 1.35, 17.5, 0.32, 1.51, 4.34, 0.16,
                 0.38, 1.69, 0.53, 2.99, 0.47, 0.51, 4.05, 0.53, 0.11, 10.93, 0.1, 8.68, 0.84),
    "adults": (0.02, 0.02, 4.68, 0.04, 41.45, 0.95, 3.79, 0.6, 5.5, 20.06, 0.21, 0.8, 2.86, 0.25,
               1.21, 0.45, 0.32, 1.28, 0.45, 0.28, 1.53, 0.29, 0.04, 6.67, 0.08, 4.83, 0.93),
}
_COMORBIDITY_PCT = {
    "children": (0.82, 0.0, 0.02, 0.23, 0.02, 0.77, 0.03, 3.44, 0.08, 0.37, 0.01, 0.02, 0.22, 0.36,
                 0.01, 1.26, 0.57, 0.0, 5.56, 0.04),
    "adults": (9.16, 0.23, 0.08, 5.77, 0.26, 0.28, 3.42, 18.93, 2.32, 12.6, 0.7, 0.24, 1.96, 31.64,
               1.41, 6.64, 0.02, 0.47, 8.24, 0.52),
}
_NO_COMORBIDITY_PCT = {"children": 68.02, "adults": 26.58}
_FEMALE_PCT = {"children": 33.92, "adults": 37.95}
_AMBULANCE_PCT = {"children": 76.16, "adults": 84.58}
_TRANSFER_PCT = {"children": 37.06, "adults": 23.26}
_MORTALITY_PCT = {"children": 0.36, "adults": 0.43}
_NUMERIC = {  # mean, SD
    "children": {
        "age": (10.42, 5.91),
        "oxygen_saturation": (98.26, 6.93),
        "systolic_bp": (122.48, 19.53),
        "pulse": (102.42, 26.18),
        "respiratory_rate": (21.32, 6.82),
        "temperature": (36.67, 1.26),
        "gcs_eye": (3.85, 0.62),
        "gcs_verbal": (4.75, 0.87),
        "gcs_motor": (5.79, 0.91),
        "iss": (7.36, 7.21),
        "ais_1": (1.11, 1.73), "ais_2": (0.31, 0.63), "ais_3": (0.03, 0.36),
        "ais_4": (0.34, 1.00), "ais_5": (0.30, 0.95), "ais_6": (0.19, 0.69),
        "ais_7": (0.60, 0.96), "ais_8": (0.60, 1.07), "ais_9": (0.13, 0.42),
    },
    "adults": {
        "age": (51.67, 20.93),
        "oxygen_saturation": (96.85, 7.44),
        "systolic_bp": (139.89, 26.35),
        "pulse": (87.49, 19.13),
        "respiratory_rate": (18.40, 4.63),
        "temperature": (36.52, 1.45),
        "gcs_eye": (3.84, 0.64),
        "gcs_verbal": (4.69, 0.91),
        "gcs_motor": (5.77, 0.96),
        "iss": (9.08, 7.82),
        "ais_1": (1.09, 1.77), "ais_2": (0.34, 0.67), "ais_3": (0.04, 0.33),
        "ais_4": (0.62, 1.26), "ais_5": (0.24, 0.82), "ais_6": (0.43, 0.96),
        "ais_7": (0.52, 0.89), "ais_8": (0.87, 1.21), "ais_9": (0.10, 0.37),
    },
}

# Unlisted remainder of each published percentage table goes to its catch-all level.
_CATCH_ALL = {"race": "race_na", "injury_intent": "other", "injury_type": "other_unspecified",
              "injury_mechanism": "unspecified"}

DEFAULT_RISK = {
    "iss": 0.14,  # per ISS point
    "gcs_deficit": 0.60,  # per point below 15
    "age_decade": 0.45,  # per decade above 18
    "low_sbp": 0.80,  # per 10 mmHg below 90
    "fall_elderly": 0.70,  # fall at age >= 65
    "fall_adult_hidden": 1.4,  # SD of unobserved extra risk for adult falls
    "hidden": 1.8,  # weight of unobserved frailty
}
ELDERLY_AGE = 65


class CalibrationError(ArithmeticError):
    pass


def _table(levels: tuple[str, ...], pct: tuple[float, ...], catch_all: str) -> dict[str, float]:
    probs = {lvl: p / 100.0 for lvl, p in zip(levels, pct, strict=True)}
    probs[catch_all] += 1.0 - sum(probs.values())
    return probs


@dataclass
class CohortSpec:
    """Generator calibration for one age group.

    ``marginals`` maps each categorical variable to a level->probability table,
    ``flag_rates`` gives Bernoulli rates for boolean flags and comorbidities,
    ``vital_params`` gives (mean, SD) for every numeric field.  For
    ``age_group="all"`` the two groups are generated separately and mixed by
    ``child_fraction``; ``components`` then holds the per-group specs.
    """

    n_records: int
    age_group: str
    marginals: dict[str, dict[str, float]]
    vital_params: dict[str, tuple[float, float]]
    flag_rates: dict[str, float]
    mortality_rate: float
    risk_coefficients: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_RISK))
    missingness_rate: float = 0.1
    missingness_iss_bias: float = 0.0
    ed_discharge_rate: float = 0.12
    ed_death_fraction: float = 0.3
    ed_death_hidden_weight: float = 6.0
    # survivors with lower visible risk are more likely to be sent home from the ED
    ed_discharge_severity: float = 0.25
    seed: int = 0
    child_fraction: float = GROUP_SIZES["children"] / sum(GROUP_SIZES.values())
    components: tuple["CohortSpec", ...] = ()

    def validate(self) -> None:
        if self.n_records < 1:
            raise DataValidationError(f"n_records must be >= 1, got {self.n_records}")
        if self.age_group not in AGE_GROUPS:
            raise DataValidationError(f"unknown age group {self.age_group!r}")
        if not 0.0 < self.mortality_rate < 1.0:
            raise DataValidationError(f"mortality_rate must be in (0,1), got {self.mortality_rate}")
        if not 0.0 <= self.missingness_rate < 1.0:
            raise DataValidationError(f"missingness_rate must be in [0,1), got {self.missingness_rate}")
        for name in ("ed_discharge_rate", "ed_death_fraction"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise DataValidationError(f"{name} must be in (0,1), got {v}")
        for var, table in self.marginals.items():
            total = sum(table.values())
            if abs(total - 1.0) > 1e-9 or min(table.values()) < 0:
                raise DataValidationError(f"marginal table {var!r} sums to {total}, expected 1")
        for name, rate in self.flag_rates.items():
            if not 0.0 <= rate <= 1.0:
                raise DataValidationError(f"flag rate {name!r}={rate} outside [0,1]")
        for name, (_, sd) in self.vital_params.items():
            if sd <= 0:
                raise DataValidationError(f"SD for {name!r} must be positive")
        unknown = set(self.risk_coefficients) - set(DEFAULT_RISK)
        if unknown:
            raise DataValidationError(f"unknown risk coefficients {sorted(unknown)}")
        for c in self.components:
            c.validate()

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["vital_params"] = {k: list(v) for k, v in self.vital_params.items()}
        d["components"] = [c.to_dict() for c in self.components]
        return d


def _group_spec(group: str, n_records: int, seed: int) -> CohortSpec:
    marginals = {
        "sex": {"female": _FEMALE_PCT[group] / 100, "male": 1 - _FEMALE_PCT[group] / 100},
        "race": _table(RACES, _RACE_PCT[group], _CATCH_ALL["race"]),
        "injury_intent": _table(INTENTS, _INTENT_PCT[group], _CATCH_ALL["injury_intent"]),
        "injury_type": _table(INJURY_TYPES, _TYPE_PCT[group], _CATCH_ALL["injury_type"]),
        "injury_mechanism": _table(MECHANISMS, _MECHANISM_PCT[group], _CATCH_ALL["injury_mechanism"]),
    }
    flags = {c: p / 100 for c, p in zip(COMORBIDITIES, _COMORBIDITY_PCT[group], strict=True)}
    flags[NO_COMORBIDITIES] = _NO_COMORBIDITY_PCT[group] / 100
    flags["arrived_by_ambulance"] = _AMBULANCE_PCT[group] / 100
    flags["transferred_in"] = _TRANSFER_PCT[group] / 100
    return CohortSpec(
        n_records=n_records,
        age_group=group,
        marginals=marginals,
        vital_params=dict(_NUMERIC[group]),
        flag_rates=flags,
        mortality_rate=_MORTALITY_PCT[group] / 100,
        seed=seed,
    )


def default_spec(age_group: str, n_records: int = 100_000, seed: int = 0) -> CohortSpec:
    if age_group in ("children", "adults"):
        return _group_spec(age_group, n_records, seed)
    if age_group != "all":
        raise DataValidationError(f"unknown age group {age_group!r}")
    kids = _group_spec("children", n_records, seed)
    adults = _group_spec("adults", n_records, seed)
    w = GROUP_SIZES["children"] / sum(GROUP_SIZES.values())
    mix = lambda a, b: w * a + (1 - w) * b  # noqa: E731
    return CohortSpec(
        n_records=n_records,
        age_group="all",
        marginals={
            var: {lvl: mix(kids.marginals[var][lvl], adults.marginals[var][lvl]) for lvl in table}
            for var, table in kids.marginals.items()
        },
        vital_params={
            k: (mix(m1, m2), math.sqrt(mix(s1**2 + m1**2, s2**2 + m2**2) - mix(m1, m2) ** 2))
            for k, ((m1, s1), (m2, s2)) in ((k, (kids.vital_params[k], adults.vital_params[k]))
                                             for k in kids.vital_params)
        },
        flag_rates={k: mix(kids.flag_rates[k], adults.flag_rates[k]) for k in kids.flag_rates},
        mortality_rate=mix(kids.mortality_rate, adults.mortality_rate),
        seed=seed,
        child_fraction=w,
        components=(kids, adults),
    )


# ---------------------------------------------------------------------------
# sampling primitives


@functools.lru_cache(maxsize=None)
def rounded_beta_pmf(mean: float, sd: float, lo: int, hi: int) -> np.ndarray:
    """Probabilities of lo..hi for a Beta on [lo-0.5, hi+0.5] rounded to the nearest integer.

    The Beta shape is fitted so the rounded distribution has the requested mean
    and SD (least squares; exact whenever attainable).
    """
    edges = (np.arange(lo, hi + 2) - lo) / (hi - lo + 1.0)
    ks = np.arange(lo, hi + 1)

    def pmf(log_ab):
        cdf = sps.beta.cdf(edges, *np.exp(log_ab))
        return np.diff(cdf)

    def resid(log_ab):
        q = pmf(log_ab)
        m = q @ ks
        return [m - mean, np.sqrt(max(q @ (ks - m) ** 2, 0.0)) - sd]

    # start from plain moment matching on the continuous scale
    mu = (mean - lo + 0.5) / (hi - lo + 1.0)
    var = min((sd / (hi - lo + 1.0)) ** 2, 0.9 * mu * (1 - mu))
    common = mu * (1 - mu) / var - 1
    x0 = np.log([mu * common, (1 - mu) * common])
    fit = optimize.least_squares(resid, x0, bounds=(-8.0, 8.0), xtol=1e-14, ftol=1e-14)
    q = pmf(fit.x)
    return q / q.sum()


def sample_bounded_integer(rng, n, mean, sd, lo, hi) -> np.ndarray:
    """Integers in [lo, hi] whose distribution has the given mean and SD."""
    q = rounded_beta_pmf(float(mean), float(sd), int(lo), int(hi))
    return lo + rng.choice(len(q), size=n, p=q)


def sample_truncated_normal(rng, n, mean, sd, lo, hi) -> np.ndarray:
    a, b = (lo - mean) / sd, (hi - mean) / sd
    return sps.truncnorm.rvs(a, b, loc=mean, scale=sd, size=n, random_state=rng)


@dataclass
class CohortFeatures:
    """Column-wise draw of every generated field, before outcomes and missingness."""

    columns: dict[str, np.ndarray]
    hidden: np.ndarray  # unobserved frailty, N(0,1)
    fall_hidden: np.ndarray  # unobserved extra risk for adult falls, N(0,1)

    def __len__(self):
        return len(self.hidden)


def sample_features(spec: CohortSpec, n: int, rng: np.random.Generator) -> CohortFeatures:
    group = spec.age_group
    cols: dict[str, np.ndarray] = {}
    lo, hi = AGE_BOUNDS[group]
    cols["age"] = sample_bounded_integer(rng, n, *spec.vital_params["age"], lo, hi)
    for var in ("sex", "race", "injury_intent", "injury_type", "injury_mechanism"):
        levels = list(spec.marginals[var])
        p = np.array([spec.marginals[var][lv] for lv in levels])
        cols[var] = np.array(levels, dtype=object)[rng.choice(len(levels), size=n, p=p / p.sum())]
    for v in VITALS:
        x = sample_truncated_normal(rng, n, *spec.vital_params[v], *BOUNDS[v])
        cols[v] = np.round(x, VITAL_DECIMALS[v])
    for v in GCS_FIELDS + ("iss",) + AIS_NAMES:
        cols[v] = sample_bounded_integer(rng, n, *spec.vital_params[v], *BOUNDS[v])
    p_none = spec.flag_rates[NO_COMORBIDITIES]
    cols[NO_COMORBIDITIES] = rng.random(n) < p_none
    u = rng.random((n, len(COMORBIDITIES)))
    # Conditional on "some comorbidity recorded", so each flag keeps its marginal rate.
    cond = np.array([min(1.0, spec.flag_rates[c] / (1 - p_none)) for c in COMORBIDITIES])
    present = (u < cond) & ~cols[NO_COMORBIDITIES][:, None]
    for j, c in enumerate(COMORBIDITIES):
        cols[c] = present[:, j]
    cols["arrived_by_ambulance"] = rng.random(n) < spec.flag_rates["arrived_by_ambulance"]
    cols["transferred_in"] = rng.random(n) < spec.flag_rates["transferred_in"]
    return CohortFeatures(cols, hidden=rng.standard_normal(n), fall_hidden=rng.standard_normal(n))


def risk_score(cols: dict[str, np.ndarray], coef: dict[str, float],
               hidden=None, fall_hidden=None) -> np.ndarray:
    """Latent log-odds of death without intercept.

    Unobserved terms are omitted when ``hidden``/``fall_hidden`` are None.
    """
    age = np.asarray(cols["age"], dtype=float)
    gcs = cols["gcs_eye"] + cols["gcs_verbal"] + cols["gcs_motor"]
    fall = np.asarray(cols["injury_mechanism"]) == "fall"
    fall_elderly = fall & (age >= ELDERLY_AGE)
    s = (
        coef["iss"] * np.asarray(cols["iss"], dtype=float)
        + coef["gcs_deficit"] * (15 - gcs)
        + coef["age_decade"] * np.maximum(0.0, age - ADULT_AGE) / 10
        + coef["low_sbp"] * np.maximum(0.0, 90 - np.asarray(cols["systolic_bp"], dtype=float)) / 10
        + coef["fall_elderly"] * fall_elderly
    )
    if hidden is not None:
        s = s + coef["hidden"] * hidden
    if fall_hidden is not None:
        s = s + coef["fall_adult_hidden"] * (fall & (age >= ADULT_AGE)) * fall_hidden
    return s


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def bisect_intercept(scores: np.ndarray, target: float, lo: float = -30.0, hi: float = 30.0,
                     tol: float = 1e-12) -> float:
    """Offset b with mean(sigmoid(scores + b)) == target, by bisection on [lo, hi]."""
    f = lambda b: float(np.mean(_sigmoid(scores + b))) - target  # noqa: E731
    f_lo, f_hi = f(lo), f(hi)
    if not f_lo < 0 < f_hi:
        raise CalibrationError(
            f"bracket [{lo}, {hi}] does not straddle target {target}: f(lo)={f_lo}, f(hi)={f_hi}"
        )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if abs(fm) < tol:
            return mid
        if fm < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _chunk_rngs(seed: int, n: int, chunk: int = 50_000):
    n_chunks = max(1, math.ceil(n / chunk))
    seqs = np.random.SeedSequence(seed).spawn(n_chunks)
    sizes = [min(chunk, n - i * chunk) for i in range(n_chunks)]
    return [(np.random.default_rng(s), k) for s, k in zip(seqs, sizes)]


def _draw(spec: CohortSpec) -> tuple[CohortFeatures, np.ndarray]:
    """Features plus per-record uniforms for the outcome stage, chunk by chunk."""
    parts, uniforms = [], []
    for rng, size in _chunk_rngs(spec.seed, spec.n_records):
        parts.append(sample_features(spec, size, rng))
        uniforms.append(rng.random((size, 5)))
    cols = {k: np.concatenate([p.columns[k] for p in parts]) for k in parts[0].columns}
    feats = CohortFeatures(
        cols,
        hidden=np.concatenate([p.hidden for p in parts]),
        fall_hidden=np.concatenate([p.fall_hidden for p in parts]),
    )
    return feats, np.concatenate(uniforms)


def calibrate_intercept(spec: CohortSpec) -> float:
    """Intercept that makes the spec's sampled cohort average ``mortality_rate`` risk."""
    spec.validate()
    if spec.components:
        raise DataValidationError("calibrate each age-group component separately")
    feats, _ = _draw(spec)
    s = risk_score(feats.columns, spec.risk_coefficients, feats.hidden, feats.fall_hidden)
    return bisect_intercept(s, spec.mortality_rate)


@dataclass
class SyntheticCohort:
    records: list[PatientRecord]
    death_probability: np.ndarray  # ground-truth risk, including unobserved terms
    died: np.ndarray
    intercept: tuple[float, ...]


_HOSPITAL_ALIVE = (Disposition.ADMITTED_GENERAL, Disposition.ADMITTED_ICU,
                   Disposition.ADMITTED_STEPDOWN, Disposition.TRANSFERRED_OUT)
_HOSPITAL_ALIVE_P = np.cumsum([0.55, 0.20, 0.10, 0.15])
_HOSPITAL_DEAD = (Disposition.DECEASED_EXPIRED, Disposition.EXPIRED, Disposition.HOSPICE)
_HOSPITAL_DEAD_P = np.cumsum([0.45, 0.45, 0.10])
_MISSABLE = VITALS + GCS_FIELDS + ("arrived_by_ambulance", "transferred_in", "disposition")
_INVALID = (Disposition.NOT_APPLICABLE, Disposition.NOT_KNOWN, Disposition.LEFT_AMA)


@dataclass
class _Simulation:
    features: CohortFeatures
    probability: np.ndarray
    died: np.ndarray
    died_in_ed: np.ndarray
    disposition: np.ndarray
    missing: np.ndarray
    slot: np.ndarray
    invalid_pick: np.ndarray
    intercept: float


def _simulate(spec: CohortSpec) -> _Simulation:
    """Array-level generation of one age group; records are built afterwards."""
    feats, u = _draw(spec)
    cols, n = feats.columns, len(feats)
    score = risk_score(cols, spec.risk_coefficients, feats.hidden, feats.fall_hidden)
    b = bisect_intercept(score, spec.mortality_rate)
    p = _sigmoid(score + b)
    died = u[:, 0] < p

    # Deaths with high unobserved frailty tend to happen before admission.
    ed_logit = spec.ed_death_hidden_weight * feats.hidden
    if died.any():
        ed_off = bisect_intercept(ed_logit[died], spec.ed_death_fraction)
    else:
        ed_off = 0.0
    died_in_ed = died & (u[:, 1] < _sigmoid(ed_logit + ed_off))
    alive = ~died
    if spec.ed_discharge_severity and alive.any():
        visible = risk_score(cols, spec.risk_coefficients)
        d_logit = -spec.ed_discharge_severity * (visible - visible.mean()) / (visible.std() or 1.0)
        d_off = bisect_intercept(d_logit[alive], spec.ed_discharge_rate)
        discharged = alive & (u[:, 1] < _sigmoid(d_logit + d_off))
    else:
        discharged = alive & (u[:, 1] < spec.ed_discharge_rate)

    disposition = np.empty(n, dtype=object)
    ed_dead = died & died_in_ed
    disposition[ed_dead] = np.array(_HOSPITAL_DEAD[:2], dtype=object)[(u[ed_dead, 2] >= 0.5).astype(int)]
    hosp_dead = died & ~died_in_ed
    disposition[hosp_dead] = np.array(_HOSPITAL_DEAD, dtype=object)[
        np.searchsorted(_HOSPITAL_DEAD_P, u[hosp_dead, 2], side="right").clip(max=2)]
    disposition[discharged] = Disposition.DISCHARGED
    hosp_alive = ~died & ~discharged
    disposition[hosp_alive] = np.array(_HOSPITAL_ALIVE, dtype=object)[
        np.searchsorted(_HOSPITAL_ALIVE_P, u[hosp_alive, 2], side="right").clip(max=3)]

    # Missingness: one field per affected record, optionally tilted toward high ISS.
    if spec.missingness_rate == 0:
        missing = np.zeros(n, dtype=bool)
    elif spec.missingness_iss_bias:
        iss = cols["iss"].astype(float)
        tilt = spec.missingness_iss_bias * (iss - iss.mean()) / (iss.std() or 1.0)
        missing = u[:, 3] < _sigmoid(tilt + bisect_intercept(tilt, spec.missingness_rate))
    else:
        missing = u[:, 3] < spec.missingness_rate
    slot = np.minimum((u[:, 4] * len(_MISSABLE)).astype(int), len(_MISSABLE) - 1)
    # Reuse the tail of the slot uniform to pick which invalid disposition.
    invalid_pick = np.minimum(((u[:, 4] * len(_MISSABLE)) % 1 * 3).astype(int), 2)
    return _Simulation(feats, p, died, died_in_ed, disposition, missing, slot, invalid_pick, b)


def _generate_group(spec: CohortSpec) -> SyntheticCohort:
    sim = _simulate(spec)
    cols, disposition, missing, slot = sim.features.columns, sim.disposition, sim.missing, sim.slot
    invalid_pick, died_in_ed = sim.invalid_pick, sim.died_in_ed
    records = []
    for i in range(len(disposition)):
        comorb = frozenset(c for c in COMORBIDITIES if cols[c][i])
        if cols[NO_COMORBIDITIES][i]:
            comorb = frozenset({NO_COMORBIDITIES})
        values = {
            "oxygen_saturation": float(cols["oxygen_saturation"][i]),
            "systolic_bp": float(cols["systolic_bp"][i]),
            "pulse": float(cols["pulse"][i]),
            "respiratory_rate": float(cols["respiratory_rate"][i]),
            "temperature": float(cols["temperature"][i]),
            "gcs_eye": int(cols["gcs_eye"][i]),
            "gcs_verbal": int(cols["gcs_verbal"][i]),
            "gcs_motor": int(cols["gcs_motor"][i]),
            "arrived_by_ambulance": bool(cols["arrived_by_ambulance"][i]),
            "transferred_in": bool(cols["transferred_in"][i]),
            "disposition": disposition[i],
        }
        if missing[i]:
            name = _MISSABLE[slot[i]]
            values[name] = _INVALID[invalid_pick[i]] if name == "disposition" else None
        records.append(PatientRecord(
            age=int(cols["age"][i]),
            sex=Sex(cols["sex"][i]),
            race=cols["race"][i],
            iss=int(cols["iss"][i]),
            ais=tuple(int(cols[a][i]) for a in AIS_NAMES),
            comorbidities=comorb,
            injury_intent=cols["injury_intent"][i],
            injury_type=cols["injury_type"][i],
            injury_mechanism=cols["injury_mechanism"][i],
            died_in_ed=bool(died_in_ed[i]),
            **values,
        ))
    return SyntheticCohort(records, sim.probability, sim.died, (sim.intercept,))


def sample_cohort(spec: CohortSpec) -> SyntheticCohort:
    """Generate records together with the ground-truth death probabilities."""
    spec.validate()
    if not spec.components:
        return _generate_group(spec)
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(1,)))
    n_kids = int(rng.binomial(spec.n_records, spec.child_fraction))
    kids, adults = spec.components
    parts = []
    for i, (comp, n) in enumerate(((kids, n_kids), (adults, spec.n_records - n_kids))):
        if n == 0:
            continue
        scale = spec.mortality_rate / default_spec("all").mortality_rate
        sub = dataclasses.replace(
            comp,
            n_records=n,
            seed=int(np.random.SeedSequence(spec.seed, spawn_key=(2, i)).generate_state(1, np.uint64)[0]),
            mortality_rate=min(0.999, comp.mortality_rate * scale),
            risk_coefficients=spec.risk_coefficients,
            missingness_rate=spec.missingness_rate,
            missingness_iss_bias=spec.missingness_iss_bias,
            ed_discharge_rate=spec.ed_discharge_rate,
            ed_death_fraction=spec.ed_death_fraction,
            ed_death_hidden_weight=spec.ed_death_hidden_weight,
            ed_discharge_severity=spec.ed_discharge_severity,
        )
        parts.append(_generate_group(sub))
    return SyntheticCohort(
        records=[r for p in parts for r in p.records],
        death_probability=np.concatenate([p.death_probability for p in parts]),
        died=np.concatenate([p.died for p in parts]),
        intercept=tuple(b for p in parts for b in p.intercept),
    )


def generate(spec: CohortSpec) -> list[PatientRecord]:
    return sample_cohort(spec).records


# ---------------------------------------------------------------------------
# flat key=value spec files

SPEC_KEYS = {
    "n_records": int,
    "age_group": str,
    "mortality_rate": float,
    "missingness_rate": float,
    "missingness_iss_bias": float,
    "ed_discharge_rate": float,
    "ed_death_fraction": float,
    "ed_death_hidden_weight": float,
    "ed_discharge_severity": float,
    "seed": int,
    **{f"risk.{k}": float for k in DEFAULT_RISK},
}


def spec_from_values(values: dict[str, str], base: Optional[CohortSpec] = None) -> CohortSpec:
    """Build a spec from flat key=value pairs; unknown keys are rejected.

    ``age_group`` selects the built-in calibration; other keys override it.
    """
    unknown = set(values) - set(SPEC_KEYS)
    if unknown:
        raise DataValidationError(f"unknown cohort spec keys {sorted(unknown)}")
    try:
        typed = {k: SPEC_KEYS[k](v) for k, v in values.items()}
    except ValueError as e:
        raise DataValidationError(f"bad cohort spec value: {e}") from None
    if base is None or typed.get("age_group", base.age_group) != base.age_group:
        base = default_spec(typed.get("age_group", "adults"))
    risk = dict(base.risk_coefficients)
    plain = {}
    for k, v in typed.items():
        if k.startswith("risk."):
            risk[k[5:]] = v
        elif k != "age_group":
            plain[k] = v
    spec = dataclasses.replace(base, risk_coefficients=risk, **plain)
    spec.validate()
    return spec
