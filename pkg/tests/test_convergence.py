import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ssf_lab.birman_schwinger import PotentialSpec
from ssf_lab.convergence import (
    ConvergenceReport,
    DomainSequence,
    ExcludedEnergyError,
    InsufficientCoverageError,
    ReportRow,
    TestFunction,
    WeightedMeasureView,
    box_integral,
    cesaro_limit,
    default_tests,
    determinant_convergence,
    integrate_weighted,
    kirsch_demo,
    limit_integral,
    moment_convergence,
    resolvent_strong_convergence_spotcheck,
    total_mass,
    trace_formula_check,
    vague_integral,
    weak_convergence_report,
)
from ssf_lab.spectra import DomainSpec
from ssf_lab.ssf import SsfCurve, ssf_counting

import oracle_tools as ot

WELL = PotentialSpec.square_well(2.0, 1.0)
E0 = ot.square_well_ground_state(2.0, 1.0)


def _step_curve(values, lam):
    return SsfCurve(lam, values, "counting", float(lam[0]) - 1, None, "test")


def test_default_test_set():
    names = [t.name for t in default_tests()]
    assert names[:4] == ["gaussian(2)", "arctan", "constant(1)", "indicator[-1,4]"]
    assert sum(n.startswith("resolvent") for n in names) == 8


def test_test_function_values():
    assert TestFunction.gaussian()(0.0) == 1.0
    b = TestFunction.bump(1.0, 2.0)
    assert b(1.0) == 1.0 and b(3.5) == 0.0 and b.support == (-1.0, 3.0)
    ind = TestFunction.indicator(-1, 4)
    assert ind(-1.0) == 1.0 and ind(4.5) == 0.0
    r = TestFunction.resolvent_monomial(1, 2)
    assert r(0.0) == pytest.approx(1 / (1j * (-1j) ** 2))
    assert r.is_complex and not ind.is_complex
    m = TestFunction.moment(-1j, 1j, 2)
    x = np.array([0.3])
    assert m.phi(x)[0] == pytest.approx(1 / ((0.3 + 1j) * (0.3 - 1j) ** 2))
    with pytest.raises(ValueError):
        TestFunction.indicator(2, 1)
    with pytest.raises(ValueError):
        TestFunction.moment(1.0, 1j, 1)


def test_domain_sequence_must_nest():
    DomainSequence.boxes([1, 2, 4])
    with pytest.raises(ValueError):
        DomainSequence.boxes([2, 1])
    with pytest.raises(ValueError):
        DomainSequence((DomainSpec.interval(0, 2), DomainSpec.interval(1, 3)))
    assert DomainSequence.balls([1, 2]).dimension == 3


def test_report_monotonicity_logic():
    rep = ConvergenceReport("x", "e", resolution=1e-8)
    for size, err in ((1, 0.5), (2, 0.1), (4, 0.1 + 5e-9)):
        rep.rows.append(ReportRow("a", "d", size, 0.0, err))
    assert rep.monotone and not rep.strictly_decreasing
    assert rep.improvement("a") == pytest.approx(0.5 / (0.1 + 5e-9))
    rep.rows.append(ReportRow("b", "d", 1, 0.0, 0.1))
    rep.rows.append(ReportRow("b", "d", 2, 0.0, 0.2))
    assert not rep.monotone


def test_integrate_weighted_on_a_step():
    lam = np.linspace(-3, 3, 601)
    c = _step_curve(np.where(lam < 0.0, -1.0, 0.0), lam)
    v, err = integrate_weighted(c, TestFunction.constant(), outside="zero")
    assert v == pytest.approx(-(math.atan(0.0) - math.atan(-3.0)), abs=err + 1e-12)
    assert err < 1e-2


def test_integrate_weighted_envelope_and_coverage():
    lam = np.linspace(-2, 2, 41)
    c = SsfCurve(lam, np.full(lam.shape, 0.5), "det", -3.0, None, "test")
    v, err = integrate_weighted(c, TestFunction.constant())
    assert err > 0.5 * (math.pi / 2 - math.atan(2.0))
    with pytest.raises(InsufficientCoverageError):
        integrate_weighted(c, TestFunction.constant(), tol=1e-3)


@given(st.lists(st.integers(-3, 3), min_size=5, max_size=30))
@settings(max_examples=40, deadline=None)
def test_total_mass_splits_the_curve(vals):
    lam = np.linspace(-4, 4, len(vals))
    c = _step_curve(np.asarray(vals, float), lam)
    mp, mm, _ = total_mass(WeightedMeasureView(c), outside="zero")
    whole, _ = integrate_weighted(c, TestFunction.constant(), outside="zero")
    assert mp >= 0 and mm >= 0
    assert mp - mm == pytest.approx(whole, abs=1e-12)


def test_chain_rule_components_are_nonnegative():
    V = PotentialSpec.sampled([-2, -1, -1, 1, 1, 2], [0, 0, -2, -2, 1.5, 1.5])
    lam = np.linspace(-3, 12, 301)
    view = WeightedMeasureView.from_potential(V, lam, DomainSpec.interval(-10, 10))
    pos, neg = view.split
    assert np.all(pos.values >= 0) and np.all(neg.values >= 0)
    assert np.any(pos.values > 0) and np.any(neg.values > 0)
    assert np.array_equal(pos.values - neg.values, view.source.values)
    mp, mm, _ = total_mass(view, outside="zero")
    whole, _ = integrate_weighted(view.source, TestFunction.constant(), outside="zero")
    assert mp - mm == pytest.approx(whole, abs=1e-12)
    # differs from the positive and negative parts of xi when V changes sign
    naive, _, _ = total_mass(WeightedMeasureView(view.source), outside="zero")
    assert abs(naive - mp) > 1e-3


def test_plateau_integral_on_a_box():
    lam = np.linspace(-2, -0.01, 2001)
    c = ssf_counting(WELL, DomainSpec.interval(-20, 20), lam)
    v, err = integrate_weighted(c, TestFunction.constant(), outside="zero")
    e0 = ot.fd_levels_extrapolated(WELL, -20, 20, 1)[0]
    exact = -(math.atan(-0.01) - math.atan(e0))
    assert abs(v - exact) <= err


def test_vague_integral_agrees_with_pair_integral():
    d = DomainSpec.interval(-20, 20)
    g = TestFunction.bump(0.0, 3.0)
    assert vague_integral(WELL, d, g) == pytest.approx(box_integral(WELL, d, g), abs=1e-10)
    with pytest.raises(ValueError):
        vague_integral(WELL, d, TestFunction.arctan())


def test_limit_integral_of_bump_matches_determinant_curve():
    # xi = -1 on (e0, 0) exactly; above 0 it is smooth in k = sqrt(lam)
    from scipy.integrate import quad

    from ssf_lab.ssf import ssf_det

    g = TestFunction.bump(0.5, 2.0)
    below = -quad(lambda x: float(g.phi(np.array([x]))[0]), E0, 0.0, epsabs=1e-13)[0]
    t, w = np.polynomial.legendre.leggauss(60)
    kmax = math.sqrt(2.5)
    k = 0.5 * kmax * (t + 1)
    lam = k * k
    c = ssf_det(WELL, lam, (0.0,))
    above = np.sum(0.5 * kmax * w * c.values * g.phi(lam) * 2 * k)
    assert limit_integral(WELL, g) == pytest.approx(below + above, abs=1e-7)


def test_zero_potential_reports():
    seq = DomainSequence.boxes([5, 10])
    rep = weak_convergence_report(seq, PotentialSpec.zero(), tests=[TestFunction.gaussian()])
    assert rep.final_error == 0
    rep = determinant_convergence(seq, PotentialSpec.zero(), 1j)
    assert rep.final_error == 0


def test_weak_report_small_sequence():
    rep = weak_convergence_report(DomainSequence.boxes([5, 10, 20]), WELL,
                                  tests=[TestFunction.gaussian(), TestFunction.bump(0.0, 3.0)])
    assert rep.monotone
    assert set(rep.labels) == {"gaussian(2)", "bump(0,3)", "mass+", "mass-"}
    assert rep.errors("gaussian(2)")[-1] < 1e-6


def test_moment_limits_match_determinant_identity():
    seq = DomainSequence.boxes([5, 10, 20])
    rep = moment_convergence(seq, WELL, -1j, 1j, 2)
    assert rep.eq == "3.25" and len(rep.labels) == 2
    assert rep.monotone
    for n, lab in enumerate(rep.labels, start=1):
        assert rep.limits[lab] == pytest.approx(ot.square_well_moment(-1j, 1j, n), abs=1e-6)


def test_trace_formula_on_a_small_box():
    r = trace_formula_check(WELL, DomainSpec.interval(-8, 8), 1j)
    assert r.relative_error <= 1e-4


def test_determinant_convergence_one_dimension():
    rep = determinant_convergence(DomainSequence.boxes([5, 10, 20]), WELL, 1j)
    assert rep.strictly_decreasing
    # the limit is the full-line determinant
    assert rep.limits["det"] == pytest.approx(ot.jost_det_square_well(1j, 2.0, 1.0), rel=1e-9)


def test_resolvent_spotcheck_decreases():
    for V, z in ((PotentialSpec.zero(), 1j), (WELL, -1 + 1j)):
        rep = resolvent_strong_convergence_spotcheck(DomainSequence.boxes([5, 10, 20]), V, z, n=4000)
        assert rep.strictly_decreasing
    assert any("skipped" in n for n in rep.notes)
    with pytest.raises(ValueError):
        resolvent_strong_convergence_spotcheck(DomainSequence.boxes([5]), WELL, 1.0)


def test_cesaro_plateau_point():
    r = cesaro_limit(WELL, -0.05, [25, 50, 100])
    assert r.reference == pytest.approx(-1.0, abs=1e-8)
    assert np.all(np.diff(r.errors) < 0)


def test_cesaro_half_line_and_exclusions():
    r = cesaro_limit(WELL, -0.05, [50, 100], geometry="half_line")
    assert np.all(np.isfinite(r.averages))
    with pytest.raises(ExcludedEnergyError):
        cesaro_limit(WELL, E0 + 0.005, [10])
    with pytest.raises(ExcludedEnergyError):
        cesaro_limit(WELL, 0.01, [10])
    with pytest.raises(ValueError):
        cesaro_limit(WELL, 1.0, [10, 5])


def test_kirsch_running_supremum():
    V3 = PotentialSpec.square_well(5.0, 1.0, dimension=3)
    out = kirsch_demo(V3, [2, 4, 8], 4.0)
    assert out["nondecreasing"]
    assert out["exceeds_first"]
