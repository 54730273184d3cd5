"""Potentials, Birman-Schwinger discretisations and perturbation determinants.

The operator ``K(z) = u (H0 - z)^{-1} v`` with ``v = |V|^{1/2}`` and
``u = sgn(V) v`` is discretised by a symmetrised Nystrom rule,

    S_jk = u(x_j) sqrt(w_j) G(z, x_j, x_k) v(x_k) sqrt(w_k).

The kernel has a kink on the diagonal.  Composite trapezoid rules with nodes
on every breakpoint of ``V`` still have a pure even-power error expansion in
the step, so determinants are computed on nested grids and Romberg
extrapolated.  Gauss-Legendre panels are available as an unextrapolated rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss

from .kernels import (
    Energy,
    KernelError,
    KernelId,
    interval_dirichlet_green,
    interval_dirichlet_green_dz,
    principal_sqrt,
    radial_green_matrix,
)

__all__ = [
    "PotentialSpec",
    "FactorPair",
    "QuadratureGrid",
    "BSOperator",
    "EtaCorrection",
    "DeterminantResult",
    "ChannelProduct",
    "ConvergenceFailure",
    "factorize",
    "sign_split",
    "build_grid",
    "assemble",
    "assemble_channels",
    "fredholm_det",
    "log_fredholm_det",
    "det2",
    "log_det2",
    "hs_norm",
    "converged_log_det",
    "channel_log_det2",
    "trace_k_squared_3d",
    "eta",
    "eta_1d",
]


class ConvergenceFailure(RuntimeError):
    """A discretisation did not reach its tolerance; carries the last iterates."""

    def __init__(self, message, iterates=()):
        super().__init__(message)
        self.iterates = tuple(iterates)


# ---------------------------------------------------------------------------
# potentials


_PROFILES = ("square_well", "gaussian", "sampled")


@dataclass(frozen=True)
class PotentialSpec:
    """Real, compactly supported potential in dimension 1 or (radial) 3.

    Conventions: ``square_well(depth, half_width)`` is ``-depth`` on
    ``|x| < half_width``; ``gaussian(amplitude, width)`` is
    ``amplitude * exp(-(x/width)^2)`` cut off at ``support_radius``
    (default ``6 * width``); ``sampled`` is the piecewise linear interpolant of
    the samples, zero outside the abscissae.  Repeated abscissae encode jumps.
    In dimension 3 the argument is the radius.
    """

    dimension: int
    profile: str
    params: tuple
    support_radius: float
    radial: bool = False

    def __post_init__(self):
        if self.dimension not in (1, 2, 3):
            raise ValueError("dimension must be 1, 2 or 3")
        if self.dimension == 2:
            raise ValueError("dimension 2 potentials are reserved")
        if self.dimension == 3 and not self.radial:
            raise ValueError("dimension 3 potentials must be radial")
        if self.profile not in _PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}")
        if not (self.support_radius > 0 and math.isfinite(self.support_radius)):
            raise ValueError("support_radius must be positive and finite")
        if self.profile == "sampled":
            xs, vs = self.params
            if len(xs) != len(vs) or len(xs) < 2:
                raise ValueError("sampled potential needs matching abscissae/values, at least 2")
            if any(b < a for a, b in zip(xs[:-1], xs[1:])):
                raise ValueError("abscissae must be nondecreasing")
            if not all(math.isfinite(v) for v in vs):
                raise ValueError("sampled values must be finite")
            if self.dimension == 3 and xs[0] < 0:
                raise ValueError("radial abscissae must be >= 0")
        else:
            a, w = self.params
            if not (math.isfinite(a) and w > 0 and math.isfinite(w)):
                raise ValueError("profile parameters must be finite with positive width")

    # constructors -------------------------------------------------------

    @classmethod
    def square_well(cls, depth, half_width, dimension=1):
        return cls(dimension, "square_well", (float(depth), float(half_width)),
                   float(half_width), radial=dimension == 3)

    @classmethod
    def gaussian(cls, amplitude, width, dimension=1, support_radius=None):
        if support_radius is None:
            support_radius = 6.0 * float(width)
        return cls(dimension, "gaussian", (float(amplitude), float(width)),
                   float(support_radius), radial=dimension == 3)

    @classmethod
    def sampled(cls, abscissae, values, dimension=1):
        xs = tuple(float(x) for x in abscissae)
        vs = tuple(float(v) for v in values)
        radius = max(abs(xs[0]), abs(xs[-1]))
        return cls(dimension, "sampled", (xs, vs), radius, radial=dimension == 3)

    @classmethod
    def zero(cls, dimension=1):
        return cls.square_well(0.0, 1.0, dimension)

    # evaluation ---------------------------------------------------------

    @property
    def lower(self) -> float:
        """Left end of the support (radius 0 in dimension 3)."""
        if self.dimension == 3:
            return 0.0
        if self.profile == "sampled":
            return self.params[0][0]
        return -self.support_radius

    @property
    def upper(self) -> float:
        if self.profile == "sampled":
            return self.params[0][-1]
        return self.support_radius

    def segments(self):
        """Smooth pieces ``(lo, hi, constant_or_None)`` covering the support."""
        if self.profile == "square_well":
            depth, h = self.params
            return [(self.lower if self.dimension == 3 else -h, h, -depth)]
        if self.profile == "gaussian":
            return [(self.lower, self.upper, None)]
        xs, vs = self.params
        out = []
        for (x0, v0), (x1, v1) in zip(zip(xs[:-1], vs[:-1]), zip(xs[1:], vs[1:])):
            if x1 > x0:
                out.append((x0, x1, v0 if v0 == v1 else None))
        return out

    def segment_values(self, index, x):
        """Values on piece ``index`` using one-sided limits at its ends."""
        x = np.asarray(x, dtype=float)
        if self.profile == "square_well":
            return np.full(x.shape, -self.params[0])
        if self.profile == "gaussian":
            a, w = self.params
            return a * np.exp(-((x / w) ** 2))
        lo, hi, _ = self.segments()[index]
        xs, vs = self.params
        j = [i for i in range(len(xs) - 1) if xs[i + 1] > xs[i]][index]
        v0, v1 = vs[j], vs[j + 1]
        t = (x - lo) / (hi - lo)
        return v0 + (v1 - v0) * t

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        if self.profile == "square_well":
            depth, h = self.params
            out = np.where(np.abs(x) < h, -depth, 0.0)
        elif self.profile == "gaussian":
            a, w = self.params
            out = np.where(np.abs(x) <= self.support_radius, a * np.exp(-((x / w) ** 2)), 0.0)
        else:
            xs, vs = self.params
            inside = (x >= xs[0]) & (x <= xs[-1])
            out = np.where(inside, np.interp(x, xs, vs), 0.0)
        if self.dimension == 3:
            out = np.where(x >= 0, out, 0.0)
        if np.ndim(out) == 0:
            return float(out)
        return out

    def _gauss_integral(self, f, order=40):
        xg, wg = leggauss(order)
        total = 0.0
        for i, (lo, hi, _) in enumerate(self.segments()):
            n_sub = max(1, int(math.ceil((hi - lo) / 0.25)))
            edges = np.linspace(lo, hi, n_sub + 1)
            for a, b in zip(edges[:-1], edges[1:]):
                x = 0.5 * (b - a) * xg + 0.5 * (a + b)
                total += 0.5 * (b - a) * np.sum(wg * f(self.segment_values(i, x), x))
        return float(total)

    def integral(self) -> float:
        """``int V d^n x``."""
        if self.dimension == 3:
            return 4.0 * math.pi * self._gauss_integral(lambda v, r: v * r * r)
        return self._gauss_integral(lambda v, x: v)

    def l1_norm(self) -> float:
        if self.dimension == 3:
            return 4.0 * math.pi * self._gauss_integral(lambda v, r: np.abs(v) * r * r)
        return self._gauss_integral(lambda v, x: np.abs(v))

    def sup_negative(self) -> float:
        """``sup V_-``, a lower bound for the spectrum is ``-sup V_-``."""
        lo = 0.0
        for i, (a, b, c) in enumerate(self.segments()):
            vals = self.segment_values(i, np.linspace(a, b, 257))
            lo = min(lo, float(vals.min()))
        return -lo

    def sup_positive(self) -> float:
        hi = 0.0
        for i, (a, b, c) in enumerate(self.segments()):
            vals = self.segment_values(i, np.linspace(a, b, 257))
            hi = max(hi, float(vals.max()))
        return hi

    def is_zero(self) -> bool:
        return self.sup_negative() == 0.0 and self.sup_positive() == 0.0

    def scaled(self, c) -> "PotentialSpec":
        c = float(c)
        if self.profile == "square_well":
            return PotentialSpec(self.dimension, "square_well",
                                 (self.params[0] * c, self.params[1]), self.support_radius, self.radial)
        if self.profile == "gaussian":
            return PotentialSpec(self.dimension, "gaussian",
                                 (self.params[0] * c, self.params[1]), self.support_radius, self.radial)
        xs, vs = self.params
        return PotentialSpec(self.dimension, "sampled", (xs, tuple(v * c for v in vs)),
                             self.support_radius, self.radial)

    def describe(self) -> str:
        if self.profile == "sampled":
            return f"sampled(n={len(self.params[0])},dim={self.dimension})"
        a, b = self.params
        return f"{self.profile}({a!r},{b!r},dim={self.dimension})"


def sign_split(V: PotentialSpec):
    """``(V_+, V_-)`` with ``V = V_+ - V_-`` and both parts nonnegative."""
    if V.profile in ("square_well", "gaussian"):
        amp = -V.params[0] if V.profile == "square_well" else V.params[0]
        zero = V.scaled(0.0)
        if amp >= 0:
            return V, zero
        return zero, V.scaled(-1.0)
    xs, vs = V.params
    px, pv = [xs[0]], [vs[0]]
    for (x0, v0), (x1, v1) in zip(zip(xs[:-1], vs[:-1]), zip(xs[1:], vs[1:])):
        if x1 > x0 and v0 * v1 < 0:
            xc = min(max(x0 + (x1 - x0) * v0 / (v0 - v1), x0), x1)
            px.append(xc)
            pv.append(0.0)
        px.append(x1)
        pv.append(v1)
    plus = PotentialSpec(V.dimension, "sampled", (tuple(px), tuple(max(v, 0.0) for v in pv)),
                         V.support_radius, V.radial)
    minus = PotentialSpec(V.dimension, "sampled", (tuple(px), tuple(max(-v, 0.0) for v in pv)),
                          V.support_radius, V.radial)
    return plus, minus


# ---------------------------------------------------------------------------
# factorisation and grids


@dataclass(frozen=True)
class FactorPair:
    """``v = |V|^{1/2}`` and ``u = sgn(V) v``, optionally restricted to ``(a, b)``."""

    potential: PotentialSpec
    restriction: tuple | None = None

    def v(self, x):
        vals = np.sqrt(np.abs(self._restricted(x)))
        return vals

    def u(self, x):
        vals = self._restricted(x)
        return np.sign(vals) * np.sqrt(np.abs(vals))

    def _restricted(self, x):
        vals = np.asarray(self.potential(x), dtype=float)
        if self.restriction is not None:
            a, b = self.restriction
            x = np.asarray(x, dtype=float)
            vals = np.where((x > a) & (x < b), vals, 0.0)
        return vals


def factorize(V: PotentialSpec, restriction=None) -> FactorPair:
    return FactorPair(V, None if restriction is None else (float(restriction[0]), float(restriction[1])))


@dataclass(frozen=True)
class QuadratureGrid:
    """Composite rule over the smooth pieces of a potential.

    ``values`` holds the potential at each node, taken from the node's own
    piece (one-sided at breakpoints).
    """

    nodes: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    rule: str
    size: int
    per_piece: tuple

    @property
    def measure(self) -> float:
        return float(self.weights.sum())


def _piece_rule(rule, lo, hi, m):
    if rule == "trapezoid":
        x = np.linspace(lo, hi, m + 1)
        w = np.full(m + 1, (hi - lo) / m)
        w[0] *= 0.5
        w[-1] *= 0.5
        return x, w
    if rule == "gauss_legendre":
        xg, wg = leggauss(m)
        return 0.5 * (hi - lo) * xg + 0.5 * (hi + lo), 0.5 * (hi - lo) * wg
    raise ValueError(f"unknown rule {rule!r}")


def build_grid(V: PotentialSpec, m, rule="trapezoid", domain=None) -> QuadratureGrid:
    """Grid with ``m`` subintervals (trapezoid) or ``m`` nodes (Gauss) per unit piece.

    ``m`` may be an int (same count on every piece) or a sequence with one
    entry per piece.  Pieces are clipped to ``domain`` when given.  Nodes where
    the kernel vanishes identically (Dirichlet ends, the radial origin) are
    dropped since they contribute nothing.
    """
    pieces = V.segments()
    if np.ndim(m) == 0:
        counts = [int(m)] * len(pieces)
    else:
        counts = [int(c) for c in m]
    xs, ws, vs, used = [], [], [], []
    for i, ((lo, hi, _), count) in enumerate(zip(pieces, counts)):
        if domain is not None:
            lo, hi = max(lo, domain[0]), min(hi, domain[1])
            if hi <= lo:
                used.append(0)
                continue
        x, w = _piece_rule(rule, lo, hi, max(count, 1))
        xs.append(x)
        ws.append(w)
        vs.append(V.segment_values(i, x))
        used.append(count)
    if not xs:
        empty = np.zeros(0)
        return QuadratureGrid(empty, empty, empty, rule, 0, tuple(used))
    x = np.concatenate(xs)
    w = np.concatenate(ws)
    v = np.concatenate(vs)
    keep = v != 0.0
    if V.dimension == 3:
        keep &= x > 0
    if domain is not None:
        keep &= (x > domain[0]) & (x < domain[1])
    return QuadratureGrid(x[keep], w[keep], v[keep], rule, int(keep.sum()), tuple(used))


# ---------------------------------------------------------------------------
# operators


@dataclass(frozen=True)
class BSOperator:
    matrix: np.ndarray
    z: Energy
    kernel_id: KernelId
    grid: QuadratureGrid
    channel: tuple | None = None  # (l, 2l+1)

    @property
    def trace(self) -> complex:
        return complex(np.trace(self.matrix))

    @property
    def multiplicity(self) -> int:
        return 1 if self.channel is None else self.channel[1]


def _green_matrix(kernel_id: KernelId, z: Energy, x, channel=None):
    k = complex(principal_sqrt(z.value))
    if kernel_id.dimension == 1:
        if kernel_id.geometry == "full":
            if k == 0:
                raise KernelError("free kernel is singular at z = 0")
            return 1j / (2.0 * k) * np.exp(1j * k * np.abs(x[:, None] - x[None, :]))
        return interval_dirichlet_green(z, kernel_id.a, kernel_id.b, x[:, None], x[None, :])
    if kernel_id.dimension == 3:
        if channel is None:
            raise KernelError("dimension-3 assembly works channel by channel")
        R = kernel_id.R if kernel_id.geometry == "ball" else None
        return radial_green_matrix(channel, z, x, R=R)
    raise KernelError("no determinant path in dimension 2")


def _check_grid_domain(kernel_id, grid):
    if grid.size == 0:
        return
    if kernel_id.geometry == "interval":
        if grid.nodes.min() <= kernel_id.a or grid.nodes.max() >= kernel_id.b:
            raise KernelError("grid nodes outside the interval")
    if kernel_id.geometry == "ball":
        if grid.nodes.max() >= kernel_id.R:
            raise KernelError("grid nodes outside the ball")


def assemble(kernel_id: KernelId, pair: FactorPair, grid: QuadratureGrid, z, channel=None) -> BSOperator:
    """Symmetrised Nystrom matrix of ``u G(z) v`` on ``grid``.

    Factor values come from ``grid.values`` (one-sided at breakpoints) and
    are cut to the pair's restriction.
    """
    z = Energy.coerce(z)
    _check_grid_domain(kernel_id, grid)
    if grid.size == 0:
        mat = np.zeros((0, 0), dtype=complex)
    else:
        sw = np.sqrt(grid.weights)
        vals = grid.values
        if pair.restriction is not None:
            a, b = pair.restriction
            vals = np.where((grid.nodes > a) & (grid.nodes < b), vals, 0.0)
        v = np.sqrt(np.abs(vals)) * sw
        u = np.sign(vals) * v
        G = _green_matrix(kernel_id, z, grid.nodes, channel)
        mat = u[:, None] * G * v[None, :]
    if not np.all(np.isfinite(mat)):
        raise FloatingPointError("non-finite entries in the Birman-Schwinger matrix")
    tag = None if channel is None else (int(channel), 2 * int(channel) + 1)
    return BSOperator(mat, z, kernel_id, grid, tag)


def assemble_channels(kernel_id: KernelId, pair: FactorPair, grid: QuadratureGrid, z, lmax):
    return [assemble(kernel_id, pair, grid, z, channel=l) for l in range(lmax + 1)]


def log_fredholm_det(op: BSOperator) -> complex:
    """``log det(I + K)`` with the imaginary part in ``(-pi, pi]``."""
    if op.matrix.shape[0] == 0:
        return 0j
    sign, logabs = np.linalg.slogdet(np.eye(op.matrix.shape[0]) + op.matrix)
    if sign == 0:
        return complex(-np.inf)
    return complex(logabs, np.angle(sign))


def fredholm_det(op: BSOperator) -> complex:
    """``det(I + K)`` by pivoted LU."""
    if op.kernel_id.dimension != 1 and op.channel is None:
        raise KernelError("the plain determinant is used in dimension 1 only")
    if op.matrix.shape[0] == 0:
        return 1.0 + 0j
    return complex(np.linalg.det(np.eye(op.matrix.shape[0]) + op.matrix))


def log_det2(op: BSOperator) -> complex:
    return log_fredholm_det(op) - op.trace


def det2(op):
    """``det2(I + K) = det(I + K) exp(-tr K)``; a list of channels gives the product."""
    if isinstance(op, BSOperator):
        if op.matrix.shape[0] == 0:
            return 1.0 + 0j
        return complex(np.linalg.det(np.eye(op.matrix.shape[0]) + op.matrix) * np.exp(-op.trace))
    total = 0j
    for ch in op:
        total += ch.multiplicity * log_det2(ch)
    return complex(np.exp(total))


def hs_norm(op: BSOperator) -> float:
    return float(np.linalg.norm(op.matrix))


# ---------------------------------------------------------------------------
# converged determinants


@dataclass
class DeterminantResult:
    """Extrapolated ``log det`` (or ``log det2``) with its convergence record."""

    log: complex
    error: float
    levels: list
    rule: str
    trace: complex = 0j
    trace2: complex = 0j
    history: list = field(default_factory=list)

    @property
    def value(self) -> complex:
        return complex(np.exp(self.log))


def _base_count(length, k, channel=None, minimum=8):
    m = max(minimum, int(math.ceil(1.2 * abs(k) * length)))
    if channel is not None:
        m = max(m, int(math.ceil(1.5 * channel)) + 4)
    return m


def _romberg(rows):
    """Romberg table over step halvings; ``rows[i]`` is a value array on level i."""
    table = [list(rows[0:1])]
    for i in range(1, len(rows)):
        row = [rows[i]]
        for j in range(1, i + 1):
            row.append(row[j - 1] + (row[j - 1] - table[i - 1][j - 1]) / (4.0**j - 1.0))
        table.append(row)
    return table


def _unwrap_levels(vals):
    """Make imaginary parts of successive log values continuous across levels."""
    out = [vals[0]]
    for v in vals[1:]:
        d = v.imag - out[-1].imag
        shift = 2 * np.pi * np.round(d / (2 * np.pi))
        out.append(v - 1j * shift)
    return out


def converged_log_det(
    V: PotentialSpec,
    kernel_ids,
    z,
    *,
    kind="det",
    converge_on="each",
    rule="trapezoid",
    tol=1e-10,
    m0=None,
    max_size=3000,
    channel=None,
    min_levels=3,
):
    """``log det(I+K)`` converged over nested grids.

    ``kind`` selects the regularisation: ``"det"``, ``"det2"`` (times
    ``exp(-tr K)``) or ``"det3"`` (times ``exp(-tr K + tr K^2 / 2)``).

    ``kernel_ids`` may be one :class:`KernelId` or a sequence; all of them
    are evaluated on the same grids so that differences between them are
    extrapolated consistently (their discretisation errors cancel).
    With ``converge_on="difference"`` only the difference of the last and
    the first kernel's values has to meet ``tol``.
    Returns one :class:`DeterminantResult` per kernel.
    """
    single = isinstance(kernel_ids, KernelId)
    kids = [kernel_ids] if single else list(kernel_ids)
    z = Energy.coerce(z)
    k = complex(principal_sqrt(z.value))
    pieces = V.segments()
    if m0 is None:
        counts = [_base_count(hi - lo, k, channel) for lo, hi, _ in pieces]
    else:
        counts = [int(m0)] * len(pieces)
    domain = None
    for kid in kids:
        if kid.geometry == "interval":
            domain = (kid.a, kid.b) if domain is None else (max(domain[0], kid.a), min(domain[1], kid.b))
    pair = factorize(V)
    if V.is_zero():
        res = DeterminantResult(0j, 0.0, [0], rule)
        return res if single else [res for _ in kids]
    logs, traces, levels = [], [], []
    level = 0
    while True:
        m = [c * 2**level for c in counts]
        grid = build_grid(V, m, rule=rule, domain=domain)
        if grid.size > max_size:
            raise ConvergenceFailure(
                f"determinant not converged to {tol:g} before reaching {max_size} nodes",
                iterates=[lg[0] for lg in logs[-2:]],
            )
        vals, trs = [], []
        for kid in kids:
            op = assemble(kid, pair, grid, z, channel=channel)
            lg = log_fredholm_det(op)
            tr = op.trace
            tr2 = np.sum(op.matrix * op.matrix.T)
            if kind == "det2":
                lg = lg - tr
            elif kind == "det3":
                lg = lg - tr + 0.5 * tr2
            vals.append(lg)
            trs.append(tr)
            trs.append(tr2)
        if logs:
            vals = [
                _unwrap_levels([logs[-1][i], v])[1] for i, v in enumerate(vals)
            ]
        logs.append(vals)
        traces.append(trs)
        levels.append(grid.size)
        rows = [np.array(v) for v in logs]
        if rule == "trapezoid":
            table = _romberg(rows)
            best = table[-1][-1]
            prev = table[-2][-1] if len(table) > 1 else None
        else:
            best = rows[-1]
            prev = rows[-2] if len(rows) > 1 else None
        if prev is not None and len(logs) >= min_levels:
            if converge_on == "difference":
                err = float(abs((best[-1] - best[0]) - (prev[-1] - prev[0])))
            else:
                err = float(np.max(np.abs(best - prev)))
            if err <= tol:
                break
        level += 1
    tr_best = _romberg([np.array(t) for t in traces])[-1][-1] if rule == "trapezoid" else np.array(traces[-1])
    out = [
        DeterminantResult(complex(best[i]), err, list(levels), rule, complex(tr_best[2 * i]),
                          complex(tr_best[2 * i + 1]), [complex(v[i]) for v in logs])
        for i in range(len(kids))
    ]
    return out[0] if single else out


# ---------------------------------------------------------------------------
# dimension 3: channel products


def _cumulative_radial(V: PotentialSpec, t):
    """``W(t) = int_0^t V(rho) rho d rho`` by Gauss quadrature on each piece."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    xg, wg = leggauss(30)
    out = np.zeros(t.shape)
    for i, (lo, hi, _) in enumerate(V.segments()):
        a = np.clip(t, lo, hi)
        # integrate from lo to a
        span = a - lo
        x = lo + 0.5 * span[:, None] * (xg[None, :] + 1.0)
        vals = V.segment_values(i, x) * x
        out += 0.5 * span * np.sum(wg[None, :] * vals, axis=1)
    return out


def trace_k_squared_3d(V: PotentialSpec, z, order=32):
    """``tr K(z)^2 = (4 pi)^{-1} int_0^{2a} C(s) e^{2iks} ds`` for radial ``V``.

    ``C`` is the autocorrelation ``int V(x) V(x+t) dx`` at ``|t| = s``, reduced
    to ``C(s) = (2 pi / s) int r V(r) [W(r+s) - W(|r-s|)] dr``.
    """
    z = Energy.coerce(z)
    k = complex(principal_sqrt(z.value))
    a = V.upper
    xg, wg = leggauss(order)
    pieces = V.segments()
    # breakpoints of C are sums/differences of breakpoints of V
    bps = sorted({p for lo, hi, _ in pieces for p in (lo, hi)})
    cand = sorted({abs(p + q) for p in bps for q in bps} | {abs(p - q) for p in bps for q in bps})
    s_edges = [s for s in cand if 0 <= s <= 2 * a]
    if s_edges[0] > 0:
        s_edges = [0.0] + s_edges
    total = 0j
    for s0, s1 in zip(s_edges[:-1], s_edges[1:]):
        if s1 <= s0:
            continue
        s = 0.5 * (s1 - s0) * xg + 0.5 * (s1 + s0)
        c = np.zeros(s.shape)
        for i, (lo, hi, _) in enumerate(pieces):
            # inner integral over r in [lo, hi]; split at kinks |r - s| and r + s hitting breakpoints
            for j, sj in enumerate(s):
                cuts = sorted({lo, hi} | {p - sj for p in bps if lo < p - sj < hi}
                              | {p + sj for p in bps if lo < p + sj < hi}
                              | {sj - p for p in bps if lo < sj - p < hi}
                              | ({sj} if lo < sj < hi else set()))
                acc = 0.0
                for r0, r1 in zip(cuts[:-1], cuts[1:]):
                    r = 0.5 * (r1 - r0) * xg + 0.5 * (r1 + r0)
                    f = r * V.segment_values(i, r) * (
                        _cumulative_radial(V, r + sj) - _cumulative_radial(V, np.abs(r - sj))
                    )
                    acc += 0.5 * (r1 - r0) * np.sum(wg * f)
                c[j] += 2.0 * np.pi / sj * acc
        total += 0.5 * (s1 - s0) * np.sum(wg * c * np.exp(2j * k * s))
    return complex(total / (4.0 * np.pi))


@dataclass
class ChannelProduct:
    """``log det2(I + K)`` for a radial 3D potential assembled from channels."""

    log: complex
    lmax: int
    tail: complex
    error: float
    channel_logs: list
    trace_k2: complex = 0j
    ball_correction: complex = 0j  # log det2 on the ball minus the full-space value

    @property
    def value(self) -> complex:
        return complex(np.exp(self.log))


def _tail_sum(terms, lmax):
    """Estimate ``sum_{l > lmax} t_l`` from ``t_l q^4 = A + B/q + C/q^2``, ``q = l + 1/2``.

    The error estimate is the change when the last coefficient is dropped.
    """
    from scipy.special import zeta

    def fit(n):
        ls = np.arange(lmax - n + 1, lmax + 1)
        q = ls + 0.5
        coef = np.linalg.solve(np.vander(1.0 / q, n, increasing=True),
                               np.asarray([terms[l] for l in ls]) * q**4)
        return sum(c * zeta(4.0 + j, lmax + 1.5) for j, c in enumerate(coef))

    if lmax < 3:
        return 0j, float("inf")
    tail3, tail2 = fit(3), fit(2)
    return complex(tail3), float(abs(tail3 - tail2))


def channel_log_det2(
    V: PotentialSpec,
    kernel_id: KernelId,
    z,
    *,
    tol=1e-10,
    tail_tol=1e-8,
    lmin=8,
    lmax=None,
    l_cap=120,
    det_tol=1e-11,
):
    """``log det2(I + K(z))`` for radial ``V`` in dimension 3.

    The full-space product ``prod_l det2(I+K_l)^(2l+1)`` converges only like
    ``1/L``; it is rewritten as

        sum_l (2l+1) log det3(I + K_l) - tr(K^2)/2,

    whose channel terms decay like ``l^-4``; ``tr K^2`` is an explicit double
    integral and the remaining channel tail is estimated from a fitted power
    law.  For a ball the channel differences from full space decay
    geometrically and are summed directly on top of the full-space value.
    """
    z = Energy.coerce(z)
    full = KernelId.full(3)
    if V.is_zero():
        return ChannelProduct(0j, 0, 0j, 0.0, [])
    trk2 = trace_k_squared_3d(V, z)
    terms, chan = [], []
    l = 0
    while True:
        res = converged_log_det(V, full, z, tol=det_tol / (2 * l + 1), channel=l, kind="det3")
        t = (2 * l + 1) * res.log
        terms.append(t)
        chan.append(res.log)
        if lmax is not None:
            if l >= lmax:
                break
        elif l >= lmin:
            tail, tail_err = _tail_sum(terms, l)
            if tail_err < tail_tol or l >= l_cap:
                break
        l += 1
    used = l
    tail, tail_err = _tail_sum(terms, used)
    log_full = complex(sum(terms) + tail - 0.5 * trk2)
    result = ChannelProduct(log_full, used, tail, tail_err, chan, trk2)
    if kernel_id.geometry == "full":
        return result
    # ball: add geometrically decaying channel differences
    diff = 0j
    l = 0
    while True:
        rf, rb = converged_log_det(V, [full, kernel_id], z, tol=tol, channel=l, kind="det2",
                                   converge_on="difference")
        d = (2 * l + 1) * (rb.log - rf.log)
        diff += d
        if (abs(d) < tol and l >= 2) or l >= l_cap:
            break
        l += 1
    return ChannelProduct(log_full + diff, max(used, l), tail, tail_err, chan, trk2, diff)


# ---------------------------------------------------------------------------
# eta corrections


@dataclass(frozen=True)
class EtaCorrection:
    """Trace correction ``eta`` with ``eta'(z) = tr((H0-z)^{-1} V (H0-z)^{-1})``."""

    dimension: int
    integral_V: float
    evaluator: Callable
    derivative: Callable

    def __call__(self, z):
        return self.evaluator(z)


def eta(dimension, integral_V) -> EtaCorrection:
    """Closed-form corrections for ``n = 2`` (``-(4 pi z)^-1 int V``) and ``n = 3``."""
    iv = float(integral_V)
    if dimension == 3:
        def ev(z):
            k = complex(principal_sqrt(Energy.coerce(z).value))
            return 1j * k * iv / (4.0 * math.pi)

        def der(z):
            k = complex(principal_sqrt(Energy.coerce(z).value))
            return 1j * iv / (8.0 * math.pi * k)

        return EtaCorrection(3, iv, ev, der)
    if dimension == 2:
        def ev(z):
            zz = Energy.coerce(z).value
            return -iv * complex(np.log(zz)) / (4.0 * math.pi)

        def der(z):
            return -iv / (4.0 * math.pi * Energy.coerce(z).value)

        return EtaCorrection(2, iv, ev, der)
    raise ValueError("closed-form eta available for n = 2, 3")


def eta_1d(V: PotentialSpec, kernel_id: KernelId, order=400) -> EtaCorrection:
    """``eta(z) = tr K(z) = int V(x) G(z,x,x) dx`` by quadrature in dimension 1."""
    grid = build_grid(V, max(order // max(len(V.segments()), 1), 8), rule="gauss_legendre",
                      domain=None if kernel_id.geometry == "full" else (kernel_id.a, kernel_id.b))
    x, w, vals = grid.nodes, grid.weights, grid.values

    def ev(z):
        z = Energy.coerce(z)
        if kernel_id.geometry == "full":
            k = complex(principal_sqrt(z.value))
            diag = np.full(x.shape, 1j / (2.0 * k))
        else:
            diag = interval_dirichlet_green(z, kernel_id.a, kernel_id.b, x, x)
        return complex(np.sum(w * vals * diag))

    def der(z):
        z = Energy.coerce(z)
        if kernel_id.geometry == "full":
            k = complex(principal_sqrt(z.value))
            ddiag = np.full(x.shape, -1j / (4.0 * k**3))
        else:
            ddiag = interval_dirichlet_green_dz(z, kernel_id.a, kernel_id.b, x)
        return complex(np.sum(w * vals * ddiag))

    return EtaCorrection(1, float(np.sum(w * vals)), ev, der)
