"""Spectral shift function curves.

Three pipelines are provided: the argument of the perturbation determinant
(``det``), the 2-modified determinant plus the trace correction ``eta``
(``det2``) and finite-volume eigenvalue counting (``counting``).  Every curve
is normalised to vanish at an anchor below the spectra of both operators.

Boundary values ``lam + i0`` are taken in one of two ways.  With a positive
``eps_schedule`` the argument is tracked along ``lam + i eps`` for each
``eps`` and extrapolated polynomially to ``eps = 0``.  With the schedule
``(0.0,)`` the free kernels are evaluated exactly on the real axis; on the
negative half-line, where the determinant is real and vanishes at bound
states, consecutive grid points are joined by semicircles in the upper half
plane, so each simple zero contributes exactly ``-pi`` to the argument.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .birman_schwinger import (
    ConvergenceFailure,
    PotentialSpec,
    channel_log_det2,
    converged_log_det,
    eta,
    eta_1d,
    sign_split,
)
from .kernels import Energy, KernelId
from .spectra import (
    DomainSpec,
    count_ball_radial,
    count_interval,
    interval_eigenvalues,
    radial_eigenvalues,
)

__all__ = [
    "SsfCurve",
    "BranchTrack",
    "UnwrapError",
    "AnchorError",
    "DEFAULT_EPS",
    "ssf_det",
    "ssf_det2",
    "ssf_counting",
    "chain_rule_check",
    "bound_states",
]

DEFAULT_EPS = (1e-2, 5e-3, 2.5e-3)
EXCLUSION_RADIUS = 0.02
MAX_DEPTH = 20
THRESHOLD_SHIFT = 1e-10
# fallback log-det tolerance next to a zero of D, where only the phase is needed
LOOSE_TOL = 1e-6
ANCHOR_TOL = 0.05


class UnwrapError(RuntimeError):
    def __init__(self, message, lam):
        super().__init__(message)
        self.lam = lam


class AnchorError(RuntimeError):
    pass


@dataclass
class BranchTrack:
    contour: list
    raw_args: list
    unwrapped_args: list


@dataclass
class SsfCurve:
    lambdas: np.ndarray
    values: np.ndarray
    method: str
    anchor: float
    epsilon_schedule: tuple | None
    pair_id: str
    reliable: np.ndarray = None
    diagnostics: dict = field(default_factory=dict)
    tracks: list = field(default_factory=list)

    def __post_init__(self):
        self.lambdas = np.asarray(self.lambdas, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.reliable is None:
            self.reliable = np.ones(self.lambdas.shape, dtype=bool)
        if np.any(np.diff(self.lambdas) <= 0):
            raise ValueError("lambda grid must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite spectral shift values")

    def __call__(self, lam):
        return np.interp(lam, self.lambdas, self.values)


# ---------------------------------------------------------------------------
# argument tracking


def _wrap(d):
    return (d + np.pi) % (2 * np.pi) - np.pi


class _Tracker:
    """Continuous argument of ``exp(logf(z))`` along a piecewise path."""

    def __init__(self, logf):
        self.logf = logf
        self.contour, self.raw, self.unwrapped = [], [], []
        self.calls = 0

    def _eval(self, z):
        self.calls += 1
        return complex(self.logf(z)).imag

    def start(self, z):
        a = self._eval(z)
        self.contour.append(z)
        self.raw.append(a)
        self.unwrapped.append(_wrap(a))
        return self.unwrapped[-1]

    def walk(self, point, t0, t1, lam_hint, depth=0, a0=None, a1=None):
        """Advance from ``point(t0)`` (already recorded) to ``point(t1)``."""
        if a0 is None:
            a0 = self.raw[-1]
        if a1 is None:
            a1 = self._eval(point(t1))
        d = _wrap(a1 - a0)
        if abs(d) >= np.pi / 2:
            if depth >= MAX_DEPTH:
                raise UnwrapError(f"argument unwrap failed near lambda = {lam_hint:.12g}", lam_hint)
            tm = 0.5 * (t0 + t1)
            am = self._eval(point(tm))
            self.walk(point, t0, tm, lam_hint, depth + 1, a0, am)
            self.walk(point, tm, t1, lam_hint, depth + 1, am, a1)
            return self.unwrapped[-1]
        self.contour.append(point(t1))
        self.raw.append(a1)
        self.unwrapped.append(self.unwrapped[-1] + d)
        return self.unwrapped[-1]

    def track(self):
        return BranchTrack(list(self.contour), list(self.raw), list(self.unwrapped))


def _track_boundary(logf, anchor, lambdas):
    """Unwrapped arguments at ``lambdas`` for exact boundary values."""
    tr = _Tracker(logf)
    tr.start(Energy.boundary(anchor))
    out = []
    prev = anchor
    for lam in lambdas:
        if lam == 0.0:
            # the threshold itself: report the limit from the right
            lam = THRESHOLD_SHIFT
        if prev < 0 or lam <= 0:
            # semicircle from prev to lam through the upper half plane
            c, r = 0.5 * (prev + lam), 0.5 * (lam - prev)

            def point(t, c=c, r=r, lo=prev, hi=lam):
                if t <= 0.0:
                    return _real_energy(lo)
                if t >= 1.0:
                    return _real_energy(hi)
                phi = np.pi * (1.0 - t)
                return Energy.off_axis(complex(c + r * math.cos(phi), r * math.sin(phi)))

            # at least the apex, so that an even number of zeros is not missed
            tr.walk(point, 0.0, 0.5, lam)
            tr.walk(point, 0.5, 1.0, lam)
        else:
            def point(t, lo=prev, hi=lam):
                return Energy.boundary(lo + t * (hi - lo))

            tr.walk(point, 0.0, 1.0, lam)
        out.append(tr.unwrapped[-1])
        prev = lam
    return np.array(out), tr.track()


def _real_energy(lam):
    return Energy.boundary(lam)


def _track_eps(logf, anchor, lambdas, eps):
    tr = _Tracker(logf)
    tr.start(Energy.upper_limit(anchor, eps))
    out = []
    prev = anchor
    for lam in lambdas:
        def point(t, lo=prev, hi=lam):
            return Energy.upper_limit(lo + t * (hi - lo), eps)

        tr.walk(point, 0.0, 1.0, lam)
        out.append(tr.unwrapped[-1])
        prev = lam
    return np.array(out), tr.track()


def _extrapolate(eps, values):
    """Polynomial extrapolation to ``eps = 0`` (Neville) through all schedule points."""
    eps = np.asarray(eps, dtype=float)
    p = [np.asarray(v, dtype=float) for v in values]
    n = len(p)
    for m in range(1, n):
        p = [
            (eps[i + m] * p[i] - eps[i] * p[i + 1]) / (eps[i + m] - eps[i])
            for i in range(n - m)
        ]
    return p[0]


# ---------------------------------------------------------------------------
# bound states and anchors


def bound_states(V: PotentialSpec, kernel_id: KernelId = None):
    """Negative eigenvalues of ``H0 + V`` (with multiplicity in dimension 3).

    Obtained from Dirichlet problems on a large box, which converge
    exponentially to the bound states; accurate enough for tagging.
    """
    depth = V.sup_negative()
    if depth == 0:
        return np.zeros(0)
    span = V.upper - V.lower
    big = max(V.upper, -V.lower) + 40.0 + 4.0 * span
    if kernel_id is not None and kernel_id.geometry == "interval":
        return interval_eigenvalues(V, kernel_id.a, kernel_id.b, 0.0)
    if V.dimension == 1:
        return interval_eigenvalues(V, -big, big, 0.0)
    R = kernel_id.R if kernel_id is not None and kernel_id.geometry == "ball" else big
    out = []
    l = 0
    while l * (l + 1) / (V.upper**2) < depth + 1 or l < 2:
        ev = radial_eigenvalues(V, R, l, 0.0)
        if ev.size == 0 and l * (l + 1) / (V.upper**2) >= depth:
            break
        out.extend(np.repeat(ev, 2 * l + 1))
        l += 1
    return np.sort(np.array(out))


def _find_anchor(V: PotentialSpec, lam_min, kind):
    """Anchor where ``|D - 1| <= 0.05`` is guaranteed, and the start of tracking.

    In dimension 1, ``||K(-E)||_1 <= ||V||_1 / (2 sqrt(E))`` and
    ``|det(I+K) - 1| <= ||K||_1 exp(||K||_1 + 1)``.  In dimension 3,
    ``||K(-E)||_2^2 <= ||V||_1 ||V||_inf / (8 pi sqrt(E))`` and
    ``|det2(I+K) - 1| <= ||K||_2 exp((||K||_2 + 1)^2 / 2)``.  Below
    ``-sup V_-`` the determinant is real, positive and zero-free, so its
    argument vanishes identically between the anchor and the start point.
    """
    start = min(-(V.sup_negative() + 1.0), lam_min - 1.0)
    l1 = V.l1_norm()
    if V.dimension == 1:
        norm_max = 0.0175  # t e^{t+1} <= 0.05
        E = (l1 / (2.0 * norm_max)) ** 2
    else:
        norm_max = 0.029  # t e^{(t+1)^2/2} <= 0.05
        sup = max(V.sup_negative(), V.sup_positive())
        E = (l1 * sup / (8.0 * math.pi * norm_max**2)) ** 2
    anchor = min(start, -E)
    bound = norm_max * math.exp(norm_max + 1) if V.dimension == 1 else norm_max * math.exp(0.5 * (norm_max + 1) ** 2)
    return anchor, start, bound


def _reliability(lambdas, V, kernel_id, radius):
    marks = list(bound_states(V, kernel_id)) + [0.0]
    ok = np.ones(lambdas.shape, dtype=bool)
    for e in marks:
        ok &= np.abs(lambdas - e) > radius
    return ok


# ---------------------------------------------------------------------------
# pipelines


def _grid(lambdas):
    lam = np.asarray(lambdas, dtype=float)
    if lam.ndim != 1 or lam.size == 0:
        raise ValueError("lambdas must be a nonempty 1-d grid")
    if np.any(np.diff(lam) <= 0):
        raise ValueError("lambdas must be strictly increasing")
    return lam


def _schedule(eps_schedule):
    eps = tuple(float(e) for e in (DEFAULT_EPS if eps_schedule is None else eps_schedule))
    if eps == (0.0,):
        return eps
    if not eps or any(e <= 0 for e in eps) or len(set(eps)) != len(eps):
        raise ValueError("eps schedule must be (0.0,) or distinct positive values")
    return eps


def _run(logf, V, kernel_id, lambdas, eps):
    """Shared unwrap-and-extrapolate driver; returns arguments/pi normalised at the anchor."""
    anchor, start, anchor_val = _find_anchor(V, float(lambdas[0]), None)
    tracks = []
    if eps == (0.0,):
        d0 = complex(logf(Energy.boundary(start)))
        if abs(_wrap(d0.imag)) > 1e-8:
            raise AnchorError(f"determinant not positive below the spectrum at {start:g}: {d0}")
        args, tr = _track_boundary(logf, start, lambdas)
        tracks.append(tr)
        a0 = tr.unwrapped_args[0]
        curve = (args - a0) / np.pi
        offsets = [a0 / np.pi]
    else:
        per_eps, offsets = [], []
        for e in eps:
            args, tr = _track_eps(logf, start, lambdas, e)
            tracks.append(tr)
            a0 = tr.unwrapped_args[0]
            per_eps.append((args - a0) / np.pi)
            offsets.append(a0 / np.pi)
        curve = _extrapolate(eps, per_eps)
        offsets = [float(_extrapolate(eps, [np.array([o]) for o in offsets])[0])]
    return curve, anchor, anchor_val, tracks, offsets[0]


def _logdet_fn(V, kernel_id, kind, det_tol):
    if V.dimension == 3:
        def f(z):
            return channel_log_det2(V, kernel_id, z, det_tol=det_tol, tail_tol=1e-8).log
        return f

    def f(z):
        try:
            return converged_log_det(V, kernel_id, z, kind=kind, tol=det_tol).log
        except ConvergenceFailure:
            if det_tol >= LOOSE_TOL:
                raise
            return converged_log_det(V, kernel_id, z, kind=kind, tol=LOOSE_TOL).log
    return f


def _pair_id(V, kernel_id):
    return f"H0+{V.describe()} vs H0 on {kernel_id.describe()}"


def ssf_det(V: PotentialSpec, lambdas, eps_schedule=None, kernel_id=None, *,
            det_tol=1e-10, exclusion_radius=EXCLUSION_RADIUS) -> SsfCurve:
    """``xi(lam) = arg det(I + K(lam + i0)) / pi`` in dimension 1."""
    if V.dimension != 1:
        raise ValueError("the full determinant pipeline is for dimension 1")
    kernel_id = kernel_id or KernelId.full(1)
    lam = _grid(lambdas)
    eps = _schedule(eps_schedule)
    if V.is_zero():
        return SsfCurve(lam, np.zeros(lam.shape), "det", float(lam[0]) - 1.0, eps,
                        _pair_id(V, kernel_id))
    logf = _logdet_fn(V, kernel_id, "det", det_tol)
    curve, anchor, aval, tracks, offs = _run(logf, V, kernel_id, lam, eps)
    diag = {"anchor_bound": aval, "anchor_offset": offs}
    return SsfCurve(lam, curve, "det", anchor, eps, _pair_id(V, kernel_id),
                    _reliability(lam, V, kernel_id, exclusion_radius), diag, tracks)


def ssf_det2(V: PotentialSpec, lambdas, eps_schedule=None, kernel_id=None, *,
             det_tol=1e-10, exclusion_radius=EXCLUSION_RADIUS) -> SsfCurve:
    """``xi = (Im ln det2(I+K) + Im eta) / pi + c`` with ``c`` fixed at the anchor.

    In dimension 3 the ``eta`` contribution on the boundary is
    ``sqrt(lam) int V / (4 pi^2)`` for ``lam > 0`` and 0 below.
    """
    lam = _grid(lambdas)
    eps = _schedule(eps_schedule)
    kernel_id = kernel_id or KernelId.full(V.dimension)
    if V.is_zero():
        return SsfCurve(lam, np.zeros(lam.shape), "det2", float(lam[0]) - 1.0, eps,
                        _pair_id(V, kernel_id), diagnostics={"c": 0.0})
    logf2 = _logdet_fn(V, kernel_id, "det2", det_tol)
    if V.dimension == 1:
        et = eta_1d(V, kernel_id)

        def logf(z):
            return logf2(z) + et(z)

        curve, anchor, aval, tracks, offs = _run(logf, V, kernel_id, lam, eps)
        diag = {"anchor_bound": aval, "c": -offs, "c_paper": 0.0}
    else:
        iv = V.integral()
        curve, anchor, aval, tracks, offs = _run(logf2, V, kernel_id, lam, eps)
        curve = curve + np.where(lam > 0, np.sqrt(np.maximum(lam, 0.0)) * iv / (4 * np.pi**2), 0.0)
        et = eta(3, iv)
        # anchor constant: Im eta vanishes on the negative axis, so c is -arg(det2(anchor))/pi
        c_anchor = -offs - et(Energy.boundary(min(anchor, -1.0))).imag / np.pi
        diag = {"anchor_bound": aval, "c": c_anchor, "c_paper": 0.0, "integral_V": iv}
    diag["c_discrepancy"] = abs(diag["c"] - diag["c_paper"])
    return SsfCurve(lam, curve, "det2", anchor, eps, _pair_id(V, kernel_id),
                    _reliability(lam, V, kernel_id, exclusion_radius), diag, tracks)


def _counts(V, domain: DomainSpec, lam):
    if domain.kind == "interval":
        r = count_interval(V, domain.a, domain.b, lam)
    else:
        r = count_ball_radial(V, domain.R, lam)
    return r.count, r.ambiguous


def ssf_counting(V: PotentialSpec, domain: DomainSpec, lambdas) -> SsfCurve:
    """``xi_j(lam) = N(H0; lam) - N(H; lam)`` on a finite Dirichlet domain."""
    lam = _grid(lambdas)
    zero = PotentialSpec.zero(V.dimension)
    vals = np.zeros(lam.shape)
    reliable = np.ones(lam.shape, dtype=bool)
    for i, x in enumerate(lam):
        n0, a0 = _counts(zero, domain, x)
        n1, a1 = _counts(V, domain, x)
        vals[i] = n0 - n1
        reliable[i] = not (a0 or a1)
    anchor = min(-(V.sup_negative() + 1.0), float(lam[0]) - 1.0)
    return SsfCurve(lam, vals, "counting", anchor, None,
                    f"H0+{V.describe()} vs H0 on {domain.describe()}", reliable)


@dataclass
class ChainRuleReport:
    residual: float
    xi: np.ndarray
    xi_plus: np.ndarray
    xi_minus: np.ndarray
    plus_nonnegative: bool
    minus_nonnegative: bool
    slack: float


def chain_rule_check(V: PotentialSpec, lambdas, domain: DomainSpec = None, *,
                     eps_schedule=None, slack=1e-2) -> ChainRuleReport:
    """Compare ``xi(H, H0)`` with ``xi(H0+V+, H0) - xi_-`` where ``-xi_- = xi(H, H0+V+)``.

    With a domain the counting pipeline is used; otherwise the determinant
    pipeline, where the pair ``(H, H0+V+)`` has perturbation determinant
    ``D_V / D_{V+}`` and its argument is tracked on its own.
    """
    lam = _grid(lambdas)
    vp, vm = sign_split(V)
    if domain is not None:
        zero = PotentialSpec.zero(V.dimension)
        n0 = np.array([_counts(zero, domain, x)[0] for x in lam])
        nv = np.array([_counts(V, domain, x)[0] for x in lam])
        np_ = np.array([_counts(vp, domain, x)[0] for x in lam])
        xi, xp, xm = n0 - nv, n0 - np_, -(np_ - nv)
        tol = 0.0
    else:
        eps = _schedule(eps_schedule)
        xi = ssf_det(V, lam, eps).values
        xp = ssf_det(vp, lam, eps).values
        kid = KernelId.full(1)
        fv = _logdet_fn(V, kid, "det", 1e-10)
        fp = _logdet_fn(vp, kid, "det", 1e-10)

        def ratio(z):
            return fv(z) - (fp(z) if not vp.is_zero() else 0j)

        curve, *_ = _run(ratio, V, kid, lam, eps)
        xm = -curve
        tol = slack
    resid = float(np.max(np.abs(xi - (xp - xm))))
    return ChainRuleReport(resid, np.asarray(xi, float), np.asarray(xp, float), np.asarray(xm, float),
                           bool(np.all(xp >= -tol)), bool(np.all(xm >= -tol)), tol)
