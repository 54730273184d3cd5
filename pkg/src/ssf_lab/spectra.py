"""Dirichlet eigenvalue counting by Prufer shooting.

For ``-u'' + q u = lam u`` write ``u = rho sin(theta) / s`` and
``u' = rho cos(theta)`` with a scale ``s`` held constant on each piece.  Then

    theta' = s cos^2(theta) + (lam - q) / s sin^2(theta),

``theta`` increases through every multiple of pi and the number of Dirichlet
eigenvalues strictly below ``lam`` is ``ceil(theta(b) / pi) - 1`` when
``theta(a) = 0``.  On pieces where the potential is constant the phase is
propagated in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .birman_schwinger import PotentialSpec

__all__ = [
    "DomainSpec",
    "CountResult",
    "NoBoundStateError",
    "prufer_phase",
    "count_interval",
    "count_interval_many",
    "interval_eigenvalues",
    "dirichlet_levels",
    "ground_state_energy",
    "radial_eigenvalues",
    "count_ball_radial",
]

AMBIGUITY_WINDOW = 1e-9
_RTOL = 1e-10


class NoBoundStateError(ValueError):
    pass


@dataclass(frozen=True)
class DomainSpec:
    kind: str
    dimension: int
    a: float | None = None
    b: float | None = None
    R: float | None = None

    def __post_init__(self):
        if self.kind == "interval":
            if self.dimension != 1 or self.a is None or self.b is None or not self.a < self.b:
                raise ValueError("interval domain needs dimension 1 and a < b")
        elif self.kind == "ball":
            if self.dimension != 3 or self.R is None or not self.R > 0:
                raise ValueError("ball domain needs dimension 3 and R > 0")
        else:
            raise ValueError(f"unknown domain kind {self.kind!r}")

    @classmethod
    def interval(cls, a, b):
        return cls("interval", 1, a=float(a), b=float(b))

    @classmethod
    def ball(cls, R):
        return cls("ball", 3, R=float(R))

    def describe(self):
        if self.kind == "interval":
            return f"interval({self.a!r},{self.b!r})"
        return f"ball({self.R!r})"


@dataclass(frozen=True)
class CountResult:
    lam: float
    count: int
    per_channel: tuple | None = None  # ((l, channel count), ...)
    ambiguous: bool = False
    candidates: tuple | None = None

    def __post_init__(self):
        if self.per_channel is not None:
            total = sum((2 * l + 1) * c for l, c in self.per_channel)
            if total != self.count:
                raise ValueError("count does not match the channel sum")


# ---------------------------------------------------------------------------
# phase propagation


def _rescale(theta, s_old, s_new):
    # keep tan(theta)/s fixed within the branch around m*pi
    m = np.floor(theta / np.pi + 0.5)
    r = theta - m * np.pi
    return m * np.pi + np.arctan2(s_new * np.sin(r), s_old * np.cos(r))


def _propagate_constant(theta, q, d):
    """Exact phase update over length ``d`` for constant ``q = lam - V`` at scale ``sqrt(max(q, 1))``."""
    theta = np.array(theta, dtype=float)
    q = np.asarray(q, dtype=float)
    s = np.sqrt(np.maximum(q, 1.0))
    out = theta.copy()
    big = q >= 1.0
    out[big] = theta[big] + s[big] * d
    pos = (q > 1e-14) & ~big
    if pos.any():
        k = np.sqrt(q[pos])
        t = _rescale(theta[pos], 1.0, k) + k * d
        out[pos] = _rescale(t, k, 1.0)
    neg = q < -1e-14
    if neg.any():
        kap = np.sqrt(-q[neg])
        # at scale kappa, beta = theta + pi/4 obeys tan(beta) -> tan(beta) e^{2 kappa d}
        b = _rescale(theta[neg], 1.0, kap) + np.pi / 4
        m = np.floor(b / np.pi + 0.5)
        r = b - m * np.pi
        r = np.arctan2(np.sin(r), np.cos(r) * np.exp(-2.0 * kap * d))
        out[neg] = _rescale(m * np.pi + r - np.pi / 4, kap, 1.0)
    flat = ~(big | pos | neg)
    if flat.any():
        t = theta[flat]
        m = np.floor(t / np.pi + 0.5)
        r = t - m * np.pi
        out[flat] = m * np.pi + np.arctan2(np.sin(r) + d * np.cos(r), np.cos(r))
    return out


def _pieces(V: PotentialSpec, a, b):
    """``(lo, hi, constant_or_None, segment_index)`` covering ``[a, b]``."""
    out = []
    cur = a
    for i, (lo, hi, c) in enumerate(V.segments()):
        lo, hi = max(lo, a), min(hi, b)
        if hi <= lo:
            continue
        if lo > cur:
            out.append((cur, lo, 0.0, None))
        out.append((lo, hi, c, i))
        cur = hi
    if cur < b:
        out.append((cur, b, 0.0, None))
    return out


def _propagate_ode(theta, lams, s, qfun, lo, hi):
    """Integrate the phase equation with ``q = qfun(x)`` (potential plus centrifugal term)."""
    lams = np.asarray(lams, dtype=float)

    def rhs(x, th):
        th = th.reshape(lams.size, -1)
        qq = lams[:, None] - qfun(x)
        c, sn = np.cos(th), np.sin(th)
        return (s[:, None] * c * c + qq / s[:, None] * sn * sn).ravel()

    sol = solve_ivp(rhs, (lo, hi), np.asarray(theta, dtype=float), method="DOP853",
                    rtol=_RTOL, atol=_RTOL, vectorized=True)
    if not sol.success:
        raise RuntimeError(f"phase integration failed: {sol.message}")
    return sol.y[:, -1]


def prufer_phase(V: PotentialSpec, a, b, lams, l=0):
    """Phase ``theta(b)`` for each energy in ``lams`` with ``theta(a) = 0``.

    ``l > 0`` adds the centrifugal term ``l(l+1)/r^2`` on ``(0, b)``; then
    ``a`` must be 0 and integration starts just off the origin from the
    regular solution ``u ~ r^(l+1)``.
    """
    lams = np.atleast_1d(np.asarray(lams, dtype=float))
    theta = np.zeros(lams.shape)
    s_prev = np.ones(lams.shape)
    start = a
    if l > 0:
        if a != 0:
            raise ValueError("centrifugal channels start at the origin")
        vmax = max(V.sup_negative(), V.sup_positive())
        r0 = min(1e-2 * (l + 1) / math.sqrt(np.max(np.abs(lams)) + vmax + 1.0), 1e-3 * b)
        v0 = float(V(np.array([0.0]))[0]) if V.dimension == 3 else 0.0
        s_prev = np.sqrt(np.maximum(lams - v0, 1.0))
        # u'/u = (l+1)/r + (V - lam) r / (2l + 3) for the regular solution
        ratio = r0 / (l + 1) / (1.0 + (v0 - lams) * r0 * r0 / ((l + 1) * (2 * l + 3)))
        theta = np.arctan(s_prev * ratio)
        start = r0
    cent = l * (l + 1)
    for lo, hi, const, idx in _pieces(V, start, b):
        if const is not None and cent == 0:
            q = lams - const
            s = np.sqrt(np.maximum(q, 1.0))
            theta = _rescale(theta, s_prev, s)
            theta = _propagate_constant(theta, q, hi - lo)
            s_prev = s
            continue
        # variable piece: split geometrically near the origin so the scale stays sensible
        edges = [lo]
        if cent:
            while edges[-1] * 2 < hi:
                edges.append(edges[-1] * 2)
        edges.append(hi)
        for x0, x1 in zip(edges[:-1], edges[1:]):
            if idx is None:
                vmin = 0.0

                def qfun(x):
                    return cent / (x * x) if cent else 0.0
            else:
                vals = V.segment_values(idx, np.linspace(x0, x1, 33))
                vmin = float(vals.min())

                def qfun(x, idx=idx):
                    return V.segment_values(idx, np.array([x]))[0] + (cent / (x * x) if cent else 0.0)

            s = np.sqrt(np.maximum(lams - vmin - (cent / (x1 * x1) if cent else 0.0), 1.0))
            theta = _rescale(theta, s_prev, s)
            theta = _propagate_ode(theta, lams, s, qfun, x0, x1)
            s_prev = s
    return theta


def _count_from_phase(theta):
    return np.maximum(np.ceil(theta / np.pi - 1e-12) - 1, 0).astype(int)


def count_interval_many(V: PotentialSpec, a, b, lams, l=0):
    """Counts of Dirichlet eigenvalues strictly below each ``lam`` (no ambiguity check)."""
    return _count_from_phase(prufer_phase(V, a, b, lams, l))


def _counted(V, a, b, lam, l=0):
    lams = np.array([lam - AMBIGUITY_WINDOW, lam, lam + AMBIGUITY_WINDOW])
    lo, mid, hi = (int(c) for c in count_interval_many(V, a, b, lams, l))
    return mid, lo != hi, (lo, hi)


def count_interval(V: PotentialSpec, a, b, lam) -> CountResult:
    """Number of Dirichlet eigenvalues of ``-d^2/dx^2 + V`` on ``(a, b)`` below ``lam``."""
    if not a < b:
        raise ValueError("need a < b")
    if not math.isfinite(lam):
        raise ValueError("lam must be finite")
    count, amb, cands = _counted(V, a, b, float(lam))
    return CountResult(float(lam), count, None, amb, cands if amb else None)


def _bisect_levels(V, a, b, n, lo, hi, l=0, iters=64):
    n = np.asarray(n, dtype=float)
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        below = prufer_phase(V, a, b, mid, l) < n * np.pi
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo <= 1e-13 * np.maximum(1.0, np.abs(mid))):
            break
    return 0.5 * (lo + hi)


def dirichlet_levels(V: PotentialSpec, a, b, n_max):
    """The lowest ``n_max`` Dirichlet eigenvalues on ``(a, b)``, ascending."""
    if n_max <= 0:
        return np.zeros(0)
    L = b - a
    vmin, vmax = -V.sup_negative(), V.sup_positive()
    n = np.arange(1, int(n_max) + 1)
    free = (n * np.pi / L) ** 2
    return _bisect_levels(V, a, b, n, free + vmin - 1e-9, free + vmax + 1e-9)


def interval_eigenvalues(V: PotentialSpec, a, b, lam_max):
    """All Dirichlet eigenvalues below ``lam_max``, ascending."""
    L = b - a
    vmin, vmax = -V.sup_negative(), V.sup_positive()
    top = int(count_interval_many(V, a, b, [lam_max])[0])
    if top == 0:
        return np.zeros(0)
    n = np.arange(1, top + 1)
    free = (n * np.pi / L) ** 2
    return _bisect_levels(V, a, b, n, free + vmin - 1e-9, free + vmax + 1e-9)


def ground_state_energy(V: PotentialSpec, a, b, require_negative=False):
    """Lowest Dirichlet eigenvalue on ``(a, b)``."""
    L = b - a
    vmin, vmax = -V.sup_negative(), V.sup_positive()
    free = (np.pi / L) ** 2
    e0 = float(_bisect_levels(V, a, b, [1], [free + vmin - 1e-9], [free + vmax + 1e-9])[0])
    if require_negative and e0 >= 0:
        raise NoBoundStateError(f"no negative eigenvalue on ({a}, {b})")
    return e0


def radial_eigenvalues(V: PotentialSpec, R, l, lam_max):
    """Channel-``l`` Dirichlet eigenvalues on ``(0, R)`` below ``lam_max``."""
    top = int(count_interval_many(V, 0.0, R, [lam_max], l)[0])
    if top == 0:
        return np.zeros(0)
    vmin = -V.sup_negative()
    n = np.arange(1, top + 1)
    lo = np.full(n.shape, vmin - 1e-9)
    hi = np.full(n.shape, float(lam_max))
    return _bisect_levels(V, 0.0, R, n, lo, hi, l)


def _channel_cutoff(V, R, lam):
    bound = R * R * (lam + V.sup_negative())
    if bound <= 0:
        return 0
    return int(math.ceil((-1 + math.sqrt(1 + 4 * bound)) / 2)) + 2


def count_ball_radial(V: PotentialSpec, R, lam) -> CountResult:
    """Dirichlet eigenvalue count on the ball ``|x| < R`` for radial ``V``."""
    if V.dimension != 3:
        raise ValueError("ball counting needs a radial dimension-3 potential")
    if not R > 0:
        raise ValueError("R must be positive")
    lam = float(lam)
    if lam + V.sup_negative() <= 0:
        return CountResult(lam, 0, ((0, 0),))
    per, amb_any = [], False
    lo_tot = hi_tot = 0
    for l in range(_channel_cutoff(V, R, lam) + 1):
        c, amb, (lo, hi) = _counted(V, 0.0, R, lam, l)
        per.append((l, c))
        amb_any |= amb
        lo_tot += (2 * l + 1) * lo
        hi_tot += (2 * l + 1) * hi
    total = sum((2 * l + 1) * c for l, c in per)
    return CountResult(lam, total, tuple(per), amb_any, (lo_tot, hi_tot) if amb_any else None)
