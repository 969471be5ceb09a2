import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from traumanet.cohort_synth import (
    BOUNDS,
    DEFAULT_RISK,
    CalibrationError,
    bisect_intercept,
    calibrate_intercept,
    default_spec,
    generate,
    risk_score,
    rounded_beta_pmf,
    sample_cohort,
    sample_features,
    spec_from_values,
)
from traumanet.domain import GCS_FIELDS, NO_COMORBIDITIES, VITALS, DataValidationError, filter_cohort, label_mortality
from traumanet.stats import compare_cohorts

ZERO_RISK = {k: 0.0 for k in DEFAULT_RISK}


@pytest.fixture(scope="module")
def children():
    return sample_cohort(default_spec("children", 100_000, seed=3))


def test_default_spec_children():
    s = default_spec("children")
    assert s.mortality_rate == pytest.approx(0.0036)
    assert s.vital_params["age"] == (10.42, 5.91)
    assert s.marginals["injury_mechanism"]["fall"] == pytest.approx(0.3245)


def test_default_spec_adults():
    s = default_spec("adults")
    assert s.mortality_rate == pytest.approx(0.0043)
    assert s.vital_params["systolic_bp"] == (139.89, 26.35)


@pytest.mark.parametrize("group", ["children", "adults", "all"])
def test_frequency_tables_sum_to_one(group):
    s = default_spec(group)
    s.validate()
    for table in s.marginals.values():
        assert abs(sum(table.values()) - 1) <= 1e-9


def test_invalid_specs_rejected():
    with pytest.raises(DataValidationError):
        generate(default_spec("adults", n_records=0))
    with pytest.raises(DataValidationError):
        dataclasses.replace(default_spec("adults"), mortality_rate=1.0).validate()
    with pytest.raises(DataValidationError):
        default_spec("elderly")


def test_generation_is_deterministic():
    a = generate(default_spec("adults", 5_000, seed=7))
    b = generate(default_spec("adults", 5_000, seed=7))
    c = generate(default_spec("adults", 5_000, seed=8))
    assert a == b
    assert a != c
    assert len(a) == 5_000


def test_adult_mortality_rate():
    c = sample_cohort(default_spec("adults", 200_000, seed=11))
    died = np.array([label_mortality(r.disposition) for r in filter_cohort(c.records)[0]])
    assert abs(c.died.mean() / 0.0043 - 1) <= 0.2
    assert abs(died.mean() / 0.0043 - 1) <= 0.2


def test_children_mean_age(children):
    ages = np.array([r.age for r in children.records[:50_000]])
    assert abs(ages.mean() - 10.42) <= 0.1
    assert ages.min() >= 0 and ages.max() <= 17


def test_all_group_mixes_children_and_adults():
    recs = generate(default_spec("all", 20_000, seed=1))
    kids = sum(not r.is_adult for r in recs) / len(recs)
    assert kids == pytest.approx(300_847 / 2_007_485, abs=0.01)


def test_values_within_physiologic_bounds(children):
    recs = children.records
    for v in VITALS + GCS_FIELDS + ("iss",):
        vals = np.array([getattr(r, v) for r in recs if getattr(r, v) is not None])
        lo, hi = BOUNDS[v]
        assert vals.min() >= lo and vals.max() <= hi, v


def test_marginal_fidelity(children):
    spec = default_spec("children")
    recs = children.records
    n = len(recs)
    for var, table in spec.marginals.items():
        values = [getattr(r, var) for r in recs]
        values = [getattr(v, "value", v) for v in values]
        for level, p in table.items():
            observed = sum(v == level for v in values) / n
            se = math.sqrt(p * (1 - p) / n)
            assert abs(observed - p) <= 3 * se + 1e-12, (var, level, observed, p)


def test_comorbidity_flags_keep_their_rates(children):
    spec = default_spec("children")
    recs = children.records
    n = len(recs)
    for flag in (NO_COMORBIDITIES, "current_smoker", "respiratory_disease"):
        p = spec.flag_rates[flag]
        observed = sum(flag in r.comorbidities for r in recs) / n
        assert abs(observed - p) <= 3 * math.sqrt(p * (1 - p) / n), flag


def test_fall_fraction_children(children):
    falls = np.mean([r.injury_mechanism == "fall" for r in children.records])
    assert falls == pytest.approx(0.3245, abs=0.005)


@pytest.mark.parametrize("mean,sd,lo,hi", [(10.42, 5.91, 0, 17), (3.85, 0.62, 1, 4), (7.25, 7.15, 0, 75)])
def test_rounded_beta_matches_moments(mean, sd, lo, hi):
    q = rounded_beta_pmf(mean, sd, lo, hi)
    k = np.arange(lo, hi + 1)
    m = q @ k
    assert m == pytest.approx(mean, abs=1e-6)
    assert math.sqrt(q @ (k - m) ** 2) == pytest.approx(sd, abs=1e-6)


# intercept calibration


def test_zero_coefficients_rate_half():
    spec = dataclasses.replace(default_spec("adults", 2_000), risk_coefficients=ZERO_RISK, mortality_rate=0.5)
    assert calibrate_intercept(spec) == pytest.approx(0.0, abs=1e-9)


def test_zero_coefficients_closed_form_logit():
    spec = dataclasses.replace(default_spec("adults", 2_000), risk_coefficients=ZERO_RISK, mortality_rate=0.0043)
    assert calibrate_intercept(spec) == pytest.approx(math.log(0.0043 / 0.9957), abs=1e-9)
    assert math.log(0.0043 / 0.9957) == pytest.approx(-5.445, abs=1e-3)


def test_calibrated_mean_probability():
    spec = default_spec("adults", 50_000, seed=5)
    c = sample_cohort(spec)
    # independent Monte-Carlo average of the ground-truth probabilities
    assert abs(c.death_probability.mean() - spec.mortality_rate) <= 1e-4


def test_bisection_bracket_failure():
    with pytest.raises(CalibrationError):
        bisect_intercept(np.full(10, 100.0), 0.001)


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-4, 0.9), st.integers(0, 2**32))
def test_bisection_hits_target(rate, seed):
    s = np.random.default_rng(seed).normal(0, 2, 500)
    b = bisect_intercept(s, rate)
    assert np.mean(1 / (1 + np.exp(-(s + b)))) == pytest.approx(rate, abs=1e-9)


# latent risk monotonicity


@pytest.fixture(scope="module")
def adult_features():
    return sample_features(default_spec("adults"), 10_000, np.random.default_rng(0)).columns


def _twin(cols, **changes):
    out = dict(cols)
    out.update(changes)
    return out


def test_risk_increases_with_iss(adult_features):
    cols = adult_features
    hi = _twin(cols, iss=cols["iss"] + 20)
    assert np.all(risk_score(hi, DEFAULT_RISK) > risk_score(cols, DEFAULT_RISK))


def test_risk_decreases_with_gcs_total(adult_features):
    cols = adult_features
    lower = _twin(cols, gcs_motor=np.maximum(cols["gcs_motor"] - 1, 1))
    changed = cols["gcs_motor"] > 1
    assert np.all(risk_score(lower, DEFAULT_RISK)[changed] > risk_score(cols, DEFAULT_RISK)[changed])


def test_risk_increases_with_adult_age(adult_features):
    cols = adult_features
    older = _twin(cols, age=cols["age"] + 10)
    assert np.all(risk_score(older, DEFAULT_RISK) > risk_score(cols, DEFAULT_RISK))


def test_risk_increases_as_low_sbp_drops(adult_features):
    cols = adult_features
    low = _twin(cols, systolic_bp=np.full(len(cols["iss"]), 80.0))
    lower = _twin(cols, systolic_bp=np.full(len(cols["iss"]), 60.0))
    assert np.all(risk_score(lower, DEFAULT_RISK) > risk_score(low, DEFAULT_RISK))


# missingness


def test_missingness_rate():
    recs = generate(default_spec("adults", 20_000, seed=2))
    _, excluded = filter_cohort(recs)
    assert len(excluded) / len(recs) == pytest.approx(0.1, abs=0.01)


def test_iss_biased_missingness_is_detected():
    spec = dataclasses.replace(default_spec("adults", 100_000, seed=4), missingness_iss_bias=0.5)
    included, excluded = filter_cohort(generate(spec))
    iss = next(r for r in compare_cohorts(included, excluded) if r.label == "iss")
    assert iss.p_value < 0.001


def test_spec_from_values():
    s = spec_from_values({"age_group": "children", "n_records": "10", "risk.iss": "0.2", "seed": "4"})
    assert (s.age_group, s.n_records, s.seed) == ("children", 10, 4)
    assert s.risk_coefficients["iss"] == 0.2
    with pytest.raises(DataValidationError):
        spec_from_values({"colour": "blue"})
