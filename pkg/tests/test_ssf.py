import math

import numpy as np
import pytest

from ssf_lab.birman_schwinger import PotentialSpec, converged_log_det
from ssf_lab.kernels import Energy, KernelId
from ssf_lab.spectra import DomainSpec, count_interval, ground_state_energy, radial_eigenvalues
from ssf_lab.ssf import (
    DEFAULT_EPS,
    BranchTrack,
    SsfCurve,
    bound_states,
    chain_rule_check,
    ssf_counting,
    ssf_det,
    ssf_det2,
)

import oracle_tools as ot

WELL = PotentialSpec.square_well(2.0, 1.0)
BUMP = PotentialSpec.gaussian(1.0, 0.7)
MIXED = PotentialSpec.sampled([-2, -1, -1, 1, 1, 2], [0, 0, -2, -2, 1.5, 1.5])
BOUNDARY = (0.0,)
DELTA = 0.02


def _plateau(e0, lam):
    return (lam > e0 + DELTA) & (lam < -DELTA)


@pytest.mark.parametrize("pipeline", [ssf_det, ssf_det2])
def test_zero_potential_gives_zero_curve(pipeline):
    c = pipeline(PotentialSpec.zero(), np.linspace(-1, 3, 9))
    assert np.all(c.values == 0)


def test_zero_potential_counting():
    c = ssf_counting(PotentialSpec.zero(), DomainSpec.interval(-5, 5), np.linspace(-1, 30, 40))
    assert np.all(c.values == 0)


def test_square_well_plateau_boundary_mode():
    e0 = ot.square_well_ground_state(2.0, 1.0)
    lam = np.linspace(-2, 1, 61)
    c = ssf_det(WELL, lam, BOUNDARY)
    pl = _plateau(e0, lam)
    assert pl.sum() > 10
    assert np.max(np.abs(c.values[pl] + 1)) < 0.02
    below = lam < e0 - DELTA
    assert np.max(np.abs(c.values[below])) < 1e-8


def test_square_well_plateau_epsilon_mode():
    e0 = ground_state_energy(WELL, -40, 40)
    lam = np.linspace(-1.1, -0.05, 12)
    c = ssf_det(WELL, lam)
    assert c.epsilon_schedule == DEFAULT_EPS
    pl = _plateau(e0, lam)
    assert np.max(np.abs(c.values[pl] + 1)) < 0.02


def test_boundary_values_match_jost_phase():
    # above the threshold xi = arg D(lam + i0) / pi with the branch continued from the anchor
    lam = np.linspace(0.1, 6, 25)
    c = ssf_det(WELL, lam, BOUNDARY)
    ref = np.unwrap([np.angle(ot.jost_det_square_well(x + 0j, 2.0, 1.0)) for x in lam]) / np.pi
    # the jump of -1 across the bound state fixes the branch of the reference
    shift = np.round(c.values[0] - ref[0])
    assert np.max(np.abs(c.values - (ref + shift))) < 1e-8


def test_positive_bump_gives_nonnegative_curve():
    lam = np.linspace(-2, 12, 57)
    for pipeline in (ssf_det, ssf_det2):
        c = pipeline(BUMP, lam, BOUNDARY)
        assert np.all(c.values >= -0.01)
    c = ssf_det(BUMP, np.linspace(0.2, 6, 8))
    assert np.all(c.values >= -0.01)


def test_negative_potential_gives_nonpositive_curve():
    lam = np.linspace(-3, 10, 53)
    c = ssf_det(WELL, lam, BOUNDARY)
    assert np.all(c.values <= 0.01)


def test_det2_constant_is_reported():
    c = ssf_det2(WELL, np.linspace(-2, 3, 11), BOUNDARY)
    assert "c" in c.diagnostics and "c_paper" in c.diagnostics
    assert c.diagnostics["c_discrepancy"] == pytest.approx(abs(c.diagnostics["c"] - c.diagnostics["c_paper"]))


def test_anchor_lies_below_both_spectra():
    lam = np.linspace(-2, 3, 11)
    c = ssf_det(WELL, lam, BOUNDARY)
    assert c.anchor < lam[0]
    assert count_interval(WELL, -60, 60, c.anchor).count == 0
    # the determinant at the anchor is within 0.05 of 1
    d = converged_log_det(WELL, KernelId.full(1), Energy.boundary(c.anchor)).value
    assert abs(d - 1) <= 0.05


def test_branch_track_steps_are_small():
    c = ssf_det(WELL, np.linspace(-2, 10, 49), BOUNDARY)
    for tr in c.tracks:
        assert isinstance(tr, BranchTrack)
        steps = np.abs(np.diff(tr.unwrapped_args))
        assert np.all(steps < np.pi)
        assert tr.unwrapped_args[0] == pytest.approx(0.0, abs=1e-8)


def test_epsilon_extrapolation_is_stable():
    lam = np.array([-0.6, 0.5, 2.0, 5.0])
    base = ssf_det(WELL, lam, (1e-2, 5e-3, 2.5e-3)).values
    halved = ssf_det(WELL, lam, (1e-2, 5e-3, 1.25e-3)).values
    assert np.max(np.abs(base - halved)) < 1e-3


def test_reliability_marks_thresholds_and_bound_states():
    e0 = ot.square_well_ground_state(2.0, 1.0)
    lam = np.array([e0 - 0.01, e0 + 0.1, -0.01, 0.0, 0.01, 0.5])
    c = ssf_det(WELL, lam, BOUNDARY)
    assert list(c.reliable) == [False, True, False, False, False, True]
    assert np.all(np.isfinite(c.values))


def test_counting_example_and_integrality():
    d = DomainSpec.interval(-20, 20)
    lam = np.linspace(-2, 4, 121)
    c = ssf_counting(WELL, d, lam)
    assert c(-0.05) == -1
    assert np.all(c.values == np.round(c.values))
    assert c.method == "counting"


def test_counting_jumps_only_at_eigenvalues():
    from ssf_lab.spectra import interval_eigenvalues

    d = DomainSpec.interval(-8, 8)
    lam = np.linspace(-2, 3, 401)
    c = ssf_counting(WELL, d, lam)
    ev = np.concatenate([interval_eigenvalues(WELL, -8, 8, 3.0), interval_eigenvalues(PotentialSpec.zero(), -8, 8, 3.0)])
    for i in np.nonzero(np.diff(c.values))[0]:
        assert np.any((ev > lam[i]) & (ev <= lam[i + 1]))
        assert c.values[i + 1] - c.values[i] == round(c.values[i + 1] - c.values[i])


def test_counting_bump_is_nonnegative():
    c = ssf_counting(BUMP, DomainSpec.interval(-10, 10), np.linspace(-1, 20, 211))
    assert np.all(c.values >= 0)


def test_chain_rule_sign_definite_has_trivial_split():
    lam = np.linspace(-2, 4, 25)
    rep = chain_rule_check(WELL, lam, DomainSpec.interval(-10, 10))
    assert np.all(rep.xi_plus == 0) and rep.residual == 0


def test_chain_rule_counting_is_exact():
    lam = np.linspace(-3, 8, 89)
    rep = chain_rule_check(MIXED, lam, DomainSpec.interval(-7, 7))
    assert rep.residual == 0.0
    assert rep.plus_nonnegative and rep.minus_nonnegative


def test_chain_rule_determinant_pipeline():
    lam = np.linspace(-2.5, 6, 35)
    rep = chain_rule_check(MIXED, lam, eps_schedule=BOUNDARY)
    assert rep.residual <= 5e-3
    assert rep.plus_nonnegative and rep.minus_nonnegative


def test_bound_states_of_square_well():
    ev = bound_states(WELL)
    assert ev.size == 1
    assert ev[0] == pytest.approx(ot.square_well_ground_state(2.0, 1.0), abs=1e-9)


def test_curve_validation():
    with pytest.raises(ValueError):
        SsfCurve([0.0, 0.0], [0.0, 0.0], "det", -1.0, None, "x")
    with pytest.raises(ValueError):
        SsfCurve([0.0, 1.0], [0.0, np.nan], "det", -1.0, None, "x")
    with pytest.raises(ValueError):
        ssf_det(WELL, [1.0, 0.5])


def test_three_dimensional_plateau():
    V3 = PotentialSpec.square_well(5.0, 1.0, dimension=3)
    e0 = float(radial_eigenvalues(V3, 30.0, 0, 0.0)[0])
    assert radial_eigenvalues(V3, 30.0, 1, 0.0).size == 0
    lam = np.array([e0 - 0.5, e0 + 0.05, 0.5 * e0, -0.05])
    c = ssf_det2(V3, lam, BOUNDARY)
    assert abs(c.values[0]) < 1e-8
    assert np.max(np.abs(c.values[1:] + 1)) < 0.02
