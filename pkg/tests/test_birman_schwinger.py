import math

import numpy as np
import pytest
from hypothesis import example, given, settings, strategies as st

from ssf_lab.birman_schwinger import (
    BSOperator,
    PotentialSpec,
    assemble,
    build_grid,
    channel_log_det2,
    converged_log_det,
    det2,
    eta,
    eta_1d,
    factorize,
    fredholm_det,
    hs_norm,
    sign_split,
)
from ssf_lab.kernels import Energy, KernelId, free_green, interval_dirichlet_green
from ssf_lab.spectra import interval_eigenvalues

import oracle_tools as ot

WELL = PotentialSpec.square_well(2.0, 1.0)
FULL1 = KernelId.full(1)
# log det2(I + K(-1)) for V = -2 chi_{r<1} in three dimensions; see tests/generators/det2_3d.py
FROZEN_3D_LOG_DET2 = -0.25940283293


def _op(matrix, z=-1.0):
    grid = build_grid(WELL, 4)
    return BSOperator(np.asarray(matrix, dtype=complex), Energy.coerce(z), FULL1, grid)


mixed_samples = st.lists(st.floats(-5, 5), min_size=3, max_size=12)


def test_factorize_square_well():
    pair = factorize(WELL)
    x = np.array([-0.5, 0.0, 0.9, 1.5])
    assert np.allclose(pair.v(x), [math.sqrt(2)] * 3 + [0])
    assert np.allclose(pair.u(x), [-math.sqrt(2)] * 3 + [0])


def test_factorize_zero():
    pair = factorize(PotentialSpec.zero())
    x = np.linspace(-3, 3, 11)
    assert not np.any(pair.u(x)) and not np.any(pair.v(x))


@given(mixed_samples)
def test_factor_pair_reproduces_samples(vals):
    xs = np.linspace(-2, 2, len(vals))
    V = PotentialSpec.sampled(xs, vals)
    pair = factorize(V)
    assert np.allclose(pair.u(xs) * pair.v(xs), vals, rtol=1e-14, atol=1e-300)
    assert np.allclose(np.abs(pair.u(xs)), pair.v(xs))


def test_sign_split_examples():
    vp, vm = sign_split(WELL)
    x = np.linspace(-2, 2, 41)
    assert vp.is_zero()
    assert np.allclose(vm(x), -WELL(x))
    bump = PotentialSpec.gaussian(1.0, 0.5)
    bp, bm = sign_split(bump)
    assert bm.is_zero() and np.allclose(bp(x), bump(x))


@given(mixed_samples)
# a vanishingly small sample used to put the crossing one ulp past its segment
@example([0.0, 0.375, -1.4230992407316347e-81, 0.0, 0.0, 0.0])
def test_sign_split_pointwise(vals):
    xs = np.linspace(-2, 2, len(vals))
    V = PotentialSpec.sampled(xs, vals)
    vp, vm = sign_split(V)
    x = np.linspace(-2.5, 2.5, 501)
    assert np.allclose(vp(x) - vm(x), V(x), atol=1e-12)
    assert np.all(vp(x) >= 0) and np.all(vm(x) >= 0)
    assert np.allclose(vp(x) * vm(x), 0.0, atol=1e-12)


def test_zero_potential_assembles_zero_matrix():
    V = PotentialSpec.zero()
    op = assemble(FULL1, factorize(V), build_grid(V, 8), 1j)
    assert not np.any(op.matrix)
    assert fredholm_det(op) == 1 and det2(op) == 1


def test_real_energy_matrix_is_real_symmetric_and_matches_kernel():
    grid = build_grid(WELL, 12)
    op = assemble(FULL1, factorize(WELL), grid, -3.0)
    assert np.allclose(op.matrix, op.matrix.T, rtol=0, atol=1e-15)
    assert np.all(op.matrix.imag == 0)
    x, w, v = grid.nodes, grid.weights, grid.values
    i, j = 3, 10
    ref = -math.sqrt(abs(v[i]) * w[i]) * free_green(1, -3.0, x[i], x[j]) * math.sqrt(abs(v[j]) * w[j])
    assert op.matrix[i, j] == pytest.approx(ref, rel=1e-14)


def test_hs_norm_bound_at_minus_25():
    grid = build_grid(WELL, 200)
    op = assemble(FULL1, factorize(WELL), grid, -25.0)
    assert hs_norm(op) <= WELL.l1_norm() / (2 * math.sqrt(25.0))
    assert WELL.l1_norm() / 10 == pytest.approx(0.4)


def test_determinant_trivial_cases():
    assert fredholm_det(_op(np.zeros((5, 5)))) == 1
    assert det2(_op(np.zeros((5, 5)))) == 1
    for c in (0.3, -0.7 + 2j, 5.0):
        m = np.zeros((6, 6), dtype=complex)
        m[0, 0] = c
        assert fredholm_det(_op(m)) == pytest.approx(1 + c, rel=1e-14)
        assert det2(_op(m)) == pytest.approx((1 + c) * np.exp(-c), rel=1e-14)


@given(st.integers(1, 40), st.integers(0, 2**31))
@settings(max_examples=50, deadline=None)
def test_det2_identity_random_matrices(n, seed):
    rng = np.random.default_rng(seed)
    m = (rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))) / n
    op = _op(m)
    d = fredholm_det(op)
    assert abs(det2(op) * np.exp(op.trace) - d) <= 1e-12 * abs(d)


@pytest.mark.parametrize("z", [-1.0, 1j, -1j, 2.0 + 0.5j, Energy.boundary(-0.3), Energy.upper_limit(3.0, 0.01)])
def test_square_well_determinant_matches_jost_oracle(z):
    res = converged_log_det(WELL, FULL1, z, tol=1e-11)
    ref = ot.jost_det_square_well(Energy.coerce(z).value, 2.0, 1.0)
    assert abs(res.value - ref) <= 1e-9 * abs(ref)


def test_boundary_value_on_positive_axis_matches_jost():
    lam = 1.7
    res = converged_log_det(WELL, FULL1, Energy.boundary(lam), tol=1e-11)
    ref = ot.jost_det_square_well(lam + 0j, 2.0, 1.0)
    assert abs(res.value - ref) <= 1e-9 * abs(ref)


@pytest.mark.parametrize("z", [1j, -1j, -1.0])
@pytest.mark.parametrize("V", [WELL, PotentialSpec.gaussian(1.5, 0.7),
                               PotentialSpec.sampled([-2, -1, -1, 1, 1, 2], [0, 0, -2, -2, 1.5, 1.5])])
def test_nystrom_converges_under_doubling(V, z):
    res = converged_log_det(V, FULL1, z, tol=1e-10)
    assert res.error <= 1e-8
    # the accepted value is stable against one more doubling
    finer = converged_log_det(V, FULL1, z, tol=1e-10, min_levels=len(res.levels) + 1)
    assert abs(np.exp(finer.log) - np.exp(res.log)) < 1e-8


def test_det_nonzero_off_axis_and_zero_at_box_eigenvalue():
    a, b = -6.0, 6.0
    ev = interval_eigenvalues(WELL, a, b, 3.0)
    kid = KernelId.interval(a, b)
    for lam in ev:
        # approaching an eigenvalue from above the axis the determinant shrinks linearly
        vals = [abs(converged_log_det(WELL, kid, complex(lam, eps), tol=1e-10).value) for eps in (1e-2, 1e-3)]
        assert vals[1] < 0.2 * vals[0]
    for z in (1j, 0.5 + 0.2j, -1 + 0.01j):
        assert abs(converged_log_det(WELL, kid, z, tol=1e-10).value) > 1e-6


def test_interval_operator_matches_kernel_entries():
    a, b = -3.0, 4.0
    grid = build_grid(WELL, 10, domain=(a, b))
    op = assemble(KernelId.interval(a, b), factorize(WELL), grid, -2.0 + 1j)
    x, w, v = grid.nodes, grid.weights, grid.values
    i, j = 2, 9
    ref = -math.sqrt(abs(v[i]) * w[i]) * interval_dirichlet_green(-2 + 1j, a, b, x[i], x[j]) * math.sqrt(abs(v[j]) * w[j])
    assert op.matrix[i, j] == pytest.approx(ref, rel=1e-13)


def test_high_energy_decay_of_det2():
    vals = [abs(converged_log_det(WELL, FULL1, -E, kind="det2").log) for E in (1e2, 1e3, 1e4)]
    assert vals[0] > vals[1] > vals[2]
    assert vals[2] < 1e-3


def test_eta_three_dimensional_example():
    e = eta(3, -8.0)
    assert e.derivative(-4.0) == pytest.approx(-1 / (2 * math.pi), rel=1e-14)
    assert eta(2, 0.0).derivative(-4.0) == 0


@pytest.mark.parametrize("z", [-4.0, -4.0 + 1j])
def test_eta_1d_finite_differences(z):
    et = eta_1d(WELL, FULL1)
    h = 1e-4
    fd = (et(z + h) - et(z - h)) / (2 * h)
    assert abs(et.derivative(z) - fd) <= 1e-6


def test_eta_1d_interval_finite_differences():
    et = eta_1d(WELL, KernelId.interval(-5, 5))
    h = 1e-4
    z = -4.0
    fd = (et(z + h) - et(z - h)) / (2 * h)
    assert abs(et.derivative(z) - fd) <= 1e-6


def test_eta_1d_is_the_trace():
    z = 0.5 + 1j
    res = converged_log_det(WELL, FULL1, z, tol=1e-11)
    assert eta_1d(WELL, FULL1)(z) == pytest.approx(res.trace, rel=1e-9)


def test_three_dimensional_det2_against_frozen_value():
    V3 = PotentialSpec.square_well(2.0, 1.0, dimension=3)
    res = channel_log_det2(V3, KernelId.full(3), -1.0)
    assert abs(res.log - FROZEN_3D_LOG_DET2) < 1e-9
    assert res.error < 1e-8


def test_three_dimensional_channel_truncation():
    V3 = PotentialSpec.square_well(2.0, 1.0, dimension=3)
    logs = [channel_log_det2(V3, KernelId.full(3), -1.0, lmax=L).log for L in (20, 22, 40)]
    assert abs(logs[1] - logs[0]) < 1e-6
    assert abs(logs[2] - logs[1]) < 1e-6
