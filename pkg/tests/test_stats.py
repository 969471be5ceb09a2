import math

import mpmath
import numpy as np
import pytest
import scipy.special
import scipy.stats
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from conftest import make_record
from traumanet.cohort_synth import default_spec, generate
from traumanet.domain import NO_COMORBIDITIES, DataValidationError, Sex, filter_cohort
from traumanet.stats import (
    betainc,
    chi2_upper_p,
    chi_square_test,
    compare_cohorts,
    format_p,
    gammainc_upper,
    render_results,
    t_test,
    t_two_sided_p,
)


def test_t_test_example():
    r = t_test([1, 2, 3, 4], [3, 4, 5, 6])
    assert r.statistic == pytest.approx(-2.19089, abs=1e-5)
    assert r.degrees_of_freedom == 6
    assert r.p_value == pytest.approx(0.070988, abs=1e-6)
    assert not r.significant


def test_chi_square_example():
    r = chi_square_test([[10, 20], [20, 10]])
    assert r.statistic == pytest.approx(20 / 3, abs=1e-4)
    assert r.degrees_of_freedom == 1
    assert r.p_value == pytest.approx(0.0098233, abs=1e-7)
    assert r.significant


def test_t_test_matches_scipy_on_random_samples():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a, b = rng.normal(0, 1, rng.integers(2, 40)), rng.normal(0.3, 2, rng.integers(2, 40))
        for welch in (False, True):
            ours = t_test(a, b, welch=welch)
            ref = scipy.stats.ttest_ind(a, b, equal_var=not welch)
            assert ours.statistic == pytest.approx(ref.statistic, rel=1e-10)
            assert ours.p_value == pytest.approx(ref.pvalue, rel=1e-9, abs=1e-15)


@pytest.mark.parametrize("a", [0.5, 1.0, 2.5, 10.0, 150.0, 5_000.0])
@pytest.mark.parametrize("b", [0.5, 1.0, 3.0, 40.0])
@pytest.mark.parametrize("x", [0.0, 1e-8, 0.01, 0.3, 0.5, 0.77, 0.999, 1.0])
def test_betainc_matches_scipy(a, b, x):
    assert betainc(a, b, x) == pytest.approx(scipy.special.betainc(a, b, x), rel=1e-10, abs=1e-300)


@pytest.mark.parametrize("s", [0.5, 1.0, 2.0, 7.5, 60.0])
@pytest.mark.parametrize("x", [0.0, 1e-6, 0.4, 3.0, 25.0, 200.0])
def test_gammainc_upper_matches_scipy(s, x):
    assert gammainc_upper(s, x) == pytest.approx(scipy.special.gammaincc(s, x), rel=1e-10, abs=1e-300)


@pytest.mark.parametrize("t,df", [(2.0, 3), (0.5, 120), (8.0, 20), (40.0, 5_000)])
def test_t_tail_matches_mpmath(t, df):
    mpmath.mp.dps = 40
    x = mpmath.mpf(df) / (df + mpmath.mpf(t) ** 2)
    ref = mpmath.betainc(df / mpmath.mpf(2), mpmath.mpf(1) / 2, 0, x, regularized=True)
    assert t_two_sided_p(t, df) == pytest.approx(float(ref), rel=1e-10)


@pytest.mark.parametrize("x,df", [(1.0, 1), (30.0, 4), (400.0, 2)])
def test_chi2_tail_matches_mpmath(x, df):
    mpmath.mp.dps = 40
    ref = mpmath.gammainc(mpmath.mpf(df) / 2, mpmath.mpf(x) / 2, mpmath.inf, regularized=True)
    assert chi2_upper_p(x, df) == pytest.approx(float(ref), rel=1e-10)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.1, 200), st.floats(0.1, 200), st.floats(0, 1))
def test_betainc_symmetry(a, b, x):
    assume(1 - (1 - x) == x)  # otherwise 1 - x has lost x entirely
    assert betainc(a, b, x) + betainc(b, a, 1 - x) == pytest.approx(1.0, abs=1e-10)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 50), st.floats(0, 50), st.floats(1, 500))
def test_t_tail_monotone_in_abs_t(t1, t2, df):
    lo, hi = sorted((t1, t2))
    assert t_two_sided_p(hi, df) <= t_two_sided_p(lo, df) + 1e-15
    assert t_two_sided_p(-hi, df) == t_two_sided_p(hi, df)


def test_degenerate_samples():
    assert t_test([2, 2, 2], [2, 2]).p_value == 1.0
    r = t_test([1, 1], [2, 2])
    assert r.p_value == 0.0 and r.statistic == -math.inf
    with pytest.raises(DataValidationError):
        t_test([1], [2, 3])
    with pytest.raises(DataValidationError):
        chi_square_test([[1, 2]])
    with pytest.raises(DataValidationError):
        chi_square_test([[0, 0], [3, 4]])


def test_self_comparison_gives_p_one():
    recs = filter_cohort(generate(default_spec("adults", 2_000, seed=1)))[0]
    for r in compare_cohorts(recs, recs):
        assert r.p_value == pytest.approx(1.0, abs=1e-12), r.label
        assert not r.significant


def test_format_p():
    assert format_p(0.0) == "<1e-300"
    assert format_p(1e-320) == "<1e-300"
    assert format_p(0.049999) == "0.05"
    assert format_p(1e-300) == "1e-300"


def test_huge_statistic_renders_as_floor():
    a = np.concatenate([np.zeros(5_000), np.ones(5_000)])
    r = t_test(a, a + 100)
    assert r.p_value == 0.0 and r.p_display == "<1e-300"
    assert "<1e-300" in render_results([r])


def test_compare_cohorts_tables():
    inc = [make_record(sex=Sex.FEMALE)] * 3 + [make_record(comorbidities=frozenset({"obesity"}))] * 2
    exc = [make_record(age=60 + i, iss=i + 1) for i in range(4)]
    results = compare_cohorts(inc, exc)
    assert [r.label for r in results] == ["age", "gcs_total", "iss", "sex", "comorbidity_presence"]
    sex = chi_square_test([[3, 2], [0, 4]])
    assert results[3].statistic == sex.statistic
    assert results[4].statistic == chi_square_test([[2, 3], [0, 4]]).statistic
    assert NO_COMORBIDITIES in make_record().comorbidities
    with pytest.raises(DataValidationError):
        compare_cohorts(inc, [])


def test_null_calibration_of_cohort_comparison():
    # missingness independent of everything: about 5% of comparisons should be significant
    p_values = []
    for seed in range(200):
        included, excluded = filter_cohort(generate(default_spec("adults", 2_000, seed=1_000 + seed)))
        p_values.extend(r.p_value for r in compare_cohorts(included, excluded) if r.label in ("age", "iss"))
    rate = np.mean(np.array(p_values) < 0.05)
    assert 0.02 <= rate <= 0.09
