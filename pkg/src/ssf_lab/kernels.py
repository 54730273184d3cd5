"""Special functions and closed-form Green's function kernels.

All kernels use the branch ``Im sqrt(z) >= 0``.  Energies on the real axis
must carry a side tag (see :class:`Energy`) so that the boundary value from
the upper half-plane is unambiguous.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

EULER_GAMMA = 0.57721566490153286061

__all__ = [
    "Energy",
    "KernelId",
    "KernelError",
    "principal_sqrt",
    "bessel_k0",
    "bessel_k0_real",
    "hankel1_0",
    "hankel_bound",
    "free_green",
    "interval_dirichlet_green",
    "interval_dirichlet_green_dz",
    "ball_dirichlet_green_paper",
    "green_monotonicity_check",
    "riccati_bessel",
    "riccati_bessel_log",
    "radial_green",
    "radial_green_matrix",
]


class KernelError(ValueError):
    """Raised for inadmissible kernel arguments (poles, coincident points, cuts)."""


# ---------------------------------------------------------------------------
# energies and kernel identifiers


@dataclass(frozen=True)
class Energy:
    """A spectral parameter together with the side it approaches the axis from.

    ``side`` is one of

    * ``"off-axis"``: ``z`` with ``Im z != 0``;
    * ``"upper-limit"``: ``lam + i*eps`` with ``eps > 0`` standing in for ``lam + i0``;
    * ``"boundary"``: the exact boundary value ``lam + i0``, available for
      kernels whose ``i0`` limit is explicit (free kernels).
    """

    value: complex
    side: str = "off-axis"
    eps: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "value", complex(self.value))
        if self.side == "off-axis":
            if self.value.imag == 0.0:
                raise KernelError("off-axis energy needs a nonzero imaginary part")
        elif self.side == "upper-limit":
            if not self.eps > 0.0:
                raise KernelError("upper-limit energy needs eps > 0")
            if self.value.imag != self.eps:
                object.__setattr__(self, "value", complex(self.value.real, self.eps))
        elif self.side == "boundary":
            if self.value.imag != 0.0:
                raise KernelError("boundary energy must be real")
        else:
            raise KernelError(f"unknown side {self.side!r}")

    @classmethod
    def off_axis(cls, z):
        return cls(complex(z), "off-axis")

    @classmethod
    def upper_limit(cls, lam, eps):
        return cls(complex(lam, eps), "upper-limit", float(eps))

    @classmethod
    def boundary(cls, lam):
        return cls(complex(float(lam), 0.0), "boundary")

    @classmethod
    def coerce(cls, z):
        if isinstance(z, Energy):
            return z
        z = complex(z)
        if z.imag == 0.0:
            if z.real < 0.0:
                return cls.boundary(z.real)
            raise KernelError(
                f"real energy {z.real} >= 0 lies on the spectrum; use Energy.upper_limit "
                "or Energy.boundary"
            )
        return cls.off_axis(z)

    @property
    def lam(self) -> float:
        return self.value.real

    @property
    def k(self) -> complex:
        return complex(principal_sqrt(self.value))


@dataclass(frozen=True)
class KernelId:
    dimension: int
    geometry: str = "full"
    a: float | None = None
    b: float | None = None
    R: float | None = None

    def __post_init__(self):
        if self.dimension not in (1, 2, 3):
            raise KernelError("dimension must be 1, 2 or 3")
        if self.geometry == "interval":
            if self.dimension != 1 or self.a is None or self.b is None or not self.a < self.b:
                raise KernelError("interval kernel needs dimension 1 and a < b")
        elif self.geometry == "ball":
            if self.dimension == 1 or self.R is None or not self.R > 0:
                raise KernelError("ball kernel needs dimension 2 or 3 and R > 0")
        elif self.geometry != "full":
            raise KernelError(f"unknown geometry {self.geometry!r}")

    @classmethod
    def full(cls, dimension):
        return cls(dimension, "full")

    @classmethod
    def interval(cls, a, b):
        return cls(1, "interval", a=float(a), b=float(b))

    @classmethod
    def ball(cls, R, dimension=3):
        return cls(dimension, "ball", R=float(R))

    def describe(self) -> str:
        if self.geometry == "interval":
            return f"interval({self.a!r},{self.b!r})"
        if self.geometry == "ball":
            return f"ball({self.R!r})"
        return f"full-space(n={self.dimension})"


# ---------------------------------------------------------------------------
# square root and Bessel functions


def principal_sqrt(z):
    """Square root with ``Im w >= 0``; the positive axis maps to ``+sqrt(lam)``."""
    arr = np.asarray(z, dtype=complex)
    w = np.sqrt(arr)
    w = np.where(w.imag < 0.0, -w, w)
    # sqrt(-E - 0j) can come back as -i*sqrt(E); the flip above fixes it, and
    # the positive real axis keeps Im w == 0 with Re w > 0.
    if np.ndim(z) == 0:
        return complex(w)
    return w


def _harmonic(n):
    return np.concatenate([[0.0], np.cumsum(1.0 / np.arange(1, n + 1))])


_H = _harmonic(80)


def _k0_series(zeta):
    # K0 = -(log(zeta/2) + gamma) I0 + sum_k (zeta^2/4)^k / (k!)^2 H_k
    q = zeta * zeta / 4.0
    term = np.ones_like(zeta)
    i0 = np.ones_like(zeta)
    rest = np.zeros_like(zeta)
    for k in range(1, 60):
        term = term * q / (k * k)
        i0 = i0 + term
        rest = rest + term * _H[k]
        if np.all(np.abs(term) <= 1e-18 * np.abs(i0)):
            break
    return -(np.log(zeta / 2.0) + EULER_GAMMA) * i0 + rest


def _k0_asymptotic_scaled(zeta):
    # e^{zeta} K0(zeta) ~ sqrt(pi/(2 zeta)) sum_k a_k / zeta^k
    total = np.ones_like(zeta)
    term = np.ones_like(zeta)
    for k in range(1, 40):
        new = term * (-((2 * k - 1) ** 2)) / (8.0 * k * zeta)
        if np.all(np.abs(new) > np.abs(term)):
            break
        term = new
        total = total + term
        if np.all(np.abs(term) <= 1e-17 * np.abs(total)):
            break
    return np.sqrt(np.pi / (2.0 * zeta)) * total


_U_STEP = 0.2
_U_NODES = _U_STEP * np.arange(-35, 36)


def _k0_integral_scaled(zeta):
    # e^{zeta} K0(zeta) = sqrt(pi/(2 zeta)) pi^{-1/2} int_R exp(-u^2) (1 + u^2/(2 zeta))^{-1/2} du
    # The integrand is analytic in a strip of half-width ~ sqrt|zeta|, so the
    # trapezoidal rule converges geometrically.
    u2 = (_U_NODES**2)[:, None]
    f = np.exp(-u2) / np.sqrt(1.0 + u2 / (2.0 * zeta[None, :]))
    integral = _U_STEP * f.sum(axis=0)
    return np.sqrt(np.pi / (2.0 * zeta)) * integral / np.sqrt(np.pi)


_SERIES_MAX = 2.0
_ASYMPTOTIC_MIN = 28.0


def bessel_k0(zeta):
    """Modified Bessel function ``K0`` for ``Re zeta >= 0``, ``zeta != 0``."""
    zeta_arr = np.atleast_1d(np.asarray(zeta, dtype=complex))
    if np.any(zeta_arr == 0):
        raise KernelError("K0 has a logarithmic singularity at 0")
    if np.any(zeta_arr.real < -1e-12 * np.abs(zeta_arr)):
        raise KernelError("K0 implemented for Re(zeta) >= 0 only")
    out = np.empty_like(zeta_arr)
    mag = np.abs(zeta_arr)
    small = mag <= _SERIES_MAX
    large = mag >= _ASYMPTOTIC_MIN
    mid = ~(small | large)
    if small.any():
        out[small] = _k0_series(zeta_arr[small])
    if mid.any():
        z = zeta_arr[mid]
        out[mid] = _k0_integral_scaled(z) * np.exp(-z)
    if large.any():
        z = zeta_arr[large]
        out[large] = _k0_asymptotic_scaled(z) * np.exp(-z)
    if np.ndim(zeta) == 0:
        return complex(out[0])
    return out.reshape(np.shape(zeta))


def bessel_k0_real(x):
    """``K0(x)`` for real ``x > 0`` from the series and ``int_0^inf exp(-x cosh t) dt``.

    Independent of :func:`bessel_k0`; used to cross-check the Hankel function
    along the imaginary axis.
    """
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(xa <= 0):
        raise KernelError("bessel_k0_real needs x > 0")
    out = np.empty_like(xa)
    small = xa <= 2.0
    if small.any():
        out[small] = _k0_series(xa[small].astype(complex)).real
    if (~small).any():
        xs = xa[~small]
        h = 0.05
        t = h * np.arange(0, 200)
        w = np.full(t.shape, h)
        w[0] = h / 2
        # integrand is e^{-x} * exp(-x (cosh t - 1)); rescale to avoid underflow
        vals = np.exp(-xs[None, :] * (np.cosh(t)[:, None] - 1.0))
        out[~small] = np.exp(-xs) * (w[:, None] * vals).sum(axis=0)
    if np.ndim(x) == 0:
        return float(out[0])
    return out.reshape(np.shape(x))


def _h0_series(w):
    # H0 = J0 + i Y0, Y0 = (2/pi)(log(w/2)+gamma) J0 - (2/pi) sum (-w^2/4)^k/(k!)^2 H_k
    q = -w * w / 4.0
    term = np.ones_like(w)
    j0 = np.ones_like(w)
    rest = np.zeros_like(w)
    for k in range(1, 60):
        term = term * q / (k * k)
        j0 = j0 + term
        rest = rest + term * _H[k]
        if np.all(np.abs(term) <= 1e-18 * np.abs(j0)):
            break
    y0 = (2.0 / np.pi) * ((np.log(w / 2.0) + EULER_GAMMA) * j0 - rest)
    return j0 + 1j * y0


def hankel1_0(w):
    """Hankel function ``H0^(1)(w)`` for ``Im w >= 0``, ``w != 0``.

    Power series for ``|w| <= 2``, the Hankel asymptotic expansion for
    ``|w| >= 28`` and, in between, an exponentially convergent quadrature of
    the integral representation of ``K0(-i w)``.
    """
    w_arr = np.atleast_1d(np.asarray(w, dtype=complex))
    if np.any(w_arr == 0):
        raise KernelError("H0 has a logarithmic singularity at 0")
    if np.any(w_arr.imag < -1e-12 * np.abs(w_arr)):
        raise KernelError("hankel1_0 implemented for Im(w) >= 0 only")
    out = np.empty_like(w_arr)
    small = np.abs(w_arr) <= _SERIES_MAX
    if small.any():
        out[small] = _h0_series(w_arr[small])
    if (~small).any():
        zeta = -1j * w_arr[~small]
        out[~small] = (2.0 / (1j * np.pi)) * bessel_k0(zeta)
    if np.ndim(w) == 0:
        return complex(out[0])
    return out.reshape(np.shape(w))


def hankel_bound(x, C=1.0):
    """Envelope ``C log(e(1+x)/x) e^{-x} / (2 pi sqrt(x) + 1)`` for ``|H0(i x)|``.

    The logarithm is written so that it is positive for every ``x > 0`` and
    behaves like ``-log x`` at the origin and like 1 at infinity, which are the
    two regimes of ``K0``.
    """
    x = np.asarray(x, dtype=float)
    return C * np.log(np.e * (1.0 + x) / x) * np.exp(-x) / (2.0 * np.pi * np.sqrt(x) + 1.0)


# ---------------------------------------------------------------------------
# free and Dirichlet kernels


def _k_of(z: Energy) -> complex:
    z = Energy.coerce(z)
    return complex(principal_sqrt(z.value))


def _points_distance(n, x, xp):
    """Euclidean distance; points are scalars (n=1) or arrays with last axis n."""
    x = np.asarray(x, dtype=float)
    xp = np.asarray(xp, dtype=float)
    if n == 1:
        return np.abs(x - xp)
    return np.sqrt(np.sum((x - xp) ** 2, axis=-1))


def _psi(n, k, r):
    """Free kernel as a function of the distance ``r``."""
    if n == 1:
        return 1j / (2.0 * k) * np.exp(1j * k * r)
    if n == 2:
        return 0.25j * hankel1_0(k * r)
    return np.exp(1j * k * r) / (4.0 * np.pi * r)


def free_green(n, z, x, xp):
    """Free resolvent kernel ``(-Laplacian - z)^{-1}(x, x')`` in dimension ``n``."""
    z = Energy.coerce(z)
    k = _k_of(z)
    if k == 0:
        raise KernelError("free kernel is singular at z = 0")
    r = _points_distance(n, x, xp)
    if n in (2, 3) and np.any(r == 0):
        raise KernelError("free kernel is singular for coincident points in n = 2, 3")
    out = _psi(n, k, r)
    if np.ndim(out) == 0:
        return complex(out)
    return out


def _interval_parts(k, a, b, x, xp):
    x = np.asarray(x, dtype=float)
    xp = np.asarray(xp, dtype=float)
    if np.any(x < a) or np.any(x > b) or np.any(xp < a) or np.any(xp > b):
        raise KernelError("interval kernel evaluated outside [a, b]")
    lo = np.minimum(x, xp)
    hi = np.maximum(x, xp)
    return lo - a, b - hi, hi - lo


def _check_interval_pole(k, length):
    kl = k * length
    if abs(kl.imag) < 40.0 and abs(np.sin(kl)) < 1e-13 * abs(kl):
        raise KernelError(f"z = {k * k} is a Dirichlet eigenvalue of the interval")


def interval_dirichlet_green(z, a, b, x, xp):
    """Dirichlet Green's function of ``-d^2/dx^2`` on ``(a, b)``.

    Written as the free kernel times the damping factor
    ``(1 - e^{-2q s1})(1 - e^{-2q s2}) / (1 - e^{-2qL})`` with ``q = -ik``,
    ``Re q >= 0``, so that nothing overflows for large negative ``z``.
    """
    z = Energy.coerce(z)
    a = float(a)
    b = float(b)
    if not a < b:
        raise KernelError("interval needs a < b")
    s1, s2, d = _interval_parts(None, a, b, x, xp)
    length = b - a
    k = _k_of(z)
    if k == 0:
        out = s1 * s2 / length + 0j
    else:
        _check_interval_pole(k, length)
        q = -1j * k
        num = -np.expm1(-2.0 * q * s1) * -np.expm1(-2.0 * q * s2)
        den = -np.expm1(-2.0 * q * length)
        out = 1j / (2.0 * k) * np.exp(1j * k * d) * num / den
    if np.ndim(out) == 0:
        return complex(out)
    return out


def interval_dirichlet_green_dz(z, a, b, x):
    """``d/dz`` of the interval kernel on the diagonal ``x = x'``."""
    z = Energy.coerce(z)
    s1, s2, _ = _interval_parts(None, a, b, x, x)
    length = float(b) - float(a)
    k = _k_of(z)
    _check_interval_pole(k, length)
    q = -1j * k
    e1 = np.exp(-2.0 * q * s1)
    e2 = np.exp(-2.0 * q * s2)
    eL = np.exp(-2.0 * q * length)
    f = (1.0 - e1) * (1.0 - e2) / (1.0 - eL)
    df = (
        2.0 * s1 * e1 * (1.0 - e2) / (1.0 - eL)
        + 2.0 * s2 * e2 * (1.0 - e1) / (1.0 - eL)
        - (1.0 - e1) * (1.0 - e2) * 2.0 * length * eL / (1.0 - eL) ** 2
    )
    dg_dq = -f / (2.0 * q * q) + df / (2.0 * q)
    out = dg_dq * (-1.0 / (2.0 * q))
    if np.ndim(out) == 0:
        return complex(out)
    return out


def ball_dirichlet_green_paper(n, z, R, x, xp):
    """Image-charge kernel ``psi(|x-x'|) - psi((|x'|/R) |x - R^2 x'/|x'|^2|)``.

    At ``x' = 0`` the image distance tends to ``R`` and that limit is used.
    """
    if n not in (2, 3):
        raise KernelError("ball kernel defined for n = 2, 3")
    z = Energy.coerce(z)
    k = _k_of(z)
    x = np.asarray(x, dtype=float)
    xp = np.asarray(xp, dtype=float)
    R = float(R)
    rx = np.sqrt(np.sum(x * x, axis=-1))
    rxp = np.sqrt(np.sum(xp * xp, axis=-1))
    if np.any(rx > R * (1 + 1e-14)) or np.any(rxp >= R):
        raise KernelError("ball kernel needs |x| <= R and |x'| < R")
    d = np.sqrt(np.sum((x - xp) ** 2, axis=-1))
    if np.any(d == 0):
        raise KernelError("ball kernel is singular for coincident points")
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(rxp > 0, 1.0 / np.where(rxp > 0, rxp, 1.0) ** 2, 0.0)
        image = xp * (R * R * scale)[..., None]
        d_img = np.where(
            rxp > 0,
            rxp / R * np.sqrt(np.sum((x - image) ** 2, axis=-1)),
            R,
        )
    out = _psi(n, k, d) - _psi(n, k, d_img)
    if np.ndim(out) == 0:
        return complex(out)
    return out


@dataclass
class MonotonicityReport:
    ok: bool
    worst_violation: float
    checked: int
    details: dict = field(default_factory=dict)


def green_monotonicity_check(E, inner, outer, points, dimension=1, tol=1e-12):
    """Check ``0 <= G_inner <= G_outer <= G_free`` at ``z = -E`` on sample pairs.

    For ``dimension=1`` ``inner``/``outer`` are ``(a, b)`` pairs and ``points``
    an iterable of ``(x, x')`` inside ``inner``.  For ``dimension=3`` they are
    radii and the image-charge kernel is used.
    """
    if not E > 0:
        raise KernelError("monotonicity check needs E > 0")
    z = Energy.boundary(-float(E))
    pts = list(points)
    worst = 0.0
    for x, xp in pts:
        if dimension == 1:
            gi = interval_dirichlet_green(z, inner[0], inner[1], x, xp).real
            go = interval_dirichlet_green(z, outer[0], outer[1], x, xp).real
            gf = free_green(1, z, x, xp).real
        else:
            gi = ball_dirichlet_green_paper(dimension, z, inner, x, xp).real
            go = ball_dirichlet_green_paper(dimension, z, outer, x, xp).real
            gf = free_green(dimension, z, x, xp).real
        scale = max(abs(gf), 1e-300)
        worst = max(worst, -gi / scale, (gi - go) / scale, (go - gf) / scale)
    return MonotonicityReport(worst <= tol, max(worst, 0.0), len(pts))


# ---------------------------------------------------------------------------
# Riccati-Bessel functions and radial partial-wave kernels


_LOG_BIG = 200.0 * math.log(10.0)


def _h_log(lmax, x):
    """``log(e^{-ix} x h_l^(1)(x))`` for l = 0..lmax by upward recurrence (stable)."""
    out = np.empty((lmax + 1,) + x.shape, dtype=complex)
    scale = np.zeros((lmax + 1,) + x.shape)
    h_prev = np.full(x.shape, -1j, dtype=complex)
    h_cur = -(1.0 + 1j / x)
    count = np.zeros(x.shape)
    out[0] = h_prev
    if lmax >= 1:
        out[1] = h_cur
    for l in range(1, lmax):
        h_prev, h_cur = h_cur, (2 * l + 1) / x * h_cur - h_prev
        big = np.abs(h_cur) > 1e200
        if big.any():
            h_cur = np.where(big, h_cur * 1e-200, h_cur)
            h_prev = np.where(big, h_prev * 1e-200, h_prev)
            count = count + big
        out[l + 1] = h_cur
        scale[l + 1] = count
    return np.log(out) + _LOG_BIG * scale


def _h_scaled(lmax, x):
    """``e^{-ix} x h_l^(1)(x)`` for l = 0..lmax."""
    return np.exp(_h_log(lmax, x))


def riccati_bessel_log(lmax, x):
    """Logarithms of the scaled functions returned by :func:`riccati_bessel`.

    ``J`` comes from Miller's downward recurrence, normalised with the cross
    product ``J_1 H_0 - J_0 H_1 = i e^{-i Re x}`` that follows from the
    Wronskian; ``H`` from upward recurrence.  Both are kept in log form so
    that high orders at small arguments neither overflow nor underflow.
    """
    x = np.asarray(x, dtype=complex)
    if np.any(x == 0):
        raise KernelError("Riccati-Bessel functions evaluated at 0")
    log_h = _h_log(max(lmax, 1), x)
    h0, h1 = np.exp(log_h[0]), np.exp(log_h[1])
    top = int(max(lmax, np.max(np.abs(x)) if x.size else 0) + 30 + np.sqrt(40 * (lmax + 10)))
    keep = max(lmax, 1)
    F = np.zeros((keep + 1,) + x.shape, dtype=complex)
    drops = np.zeros((keep + 1,) + x.shape)  # rescalings applied before storing F[l]
    count = np.zeros(x.shape)
    f_next = np.zeros(x.shape, dtype=complex)
    f_cur = np.ones(x.shape, dtype=complex)
    for l in range(top, 0, -1):
        # f_{l-1} = (2l+1)/x f_l - f_{l+1}, the same recurrence as x j_l(x)
        if l <= keep:
            F[l] = f_cur
            drops[l] = count
        f_prev = (2 * l + 1) / x * f_cur - f_next
        f_next, f_cur = f_cur, f_prev
        big = np.abs(f_cur) > 1e200
        if big.any():
            f_cur = np.where(big, f_cur * 1e-200, f_cur)
            f_next = np.where(big, f_next * 1e-200, f_next)
            count = count + big
    F[0] = f_cur
    drops[0] = count
    # bring F[1] to the final units (it is stored before the last rescalings)
    f1 = F[1] * 10.0 ** (-200.0 * (count - drops[1]))
    cross = f1 * h0 - F[0] * h1
    # unscaled x j_l = c F_l with c (f1 H0 - F0 H1) e^{ix} = i; then scale by e^{-Im x}
    log_norm = np.log(1j * np.exp(-1j * x.real) / cross)
    with np.errstate(divide="ignore"):
        log_f = np.log(F)
    log_j = log_f + log_norm - _LOG_BIG * (count - drops)
    return log_j[: lmax + 1], log_h[: lmax + 1]


def riccati_bessel(lmax, x):
    """Scaled Riccati-Bessel functions for ``Im x >= 0``, ``x != 0``.

    Returns ``(J, H)`` with shapes ``(lmax+1,) + x.shape`` such that
    ``x j_l(x) = J_l e^{Im x}`` and ``x h_l^(1)(x) = H_l e^{i x}``.
    """
    log_j, log_h = riccati_bessel_log(lmax, x)
    with np.errstate(over="ignore"):
        return np.exp(log_j), np.exp(log_h)


def radial_green(l, z, r, rp, R=None):
    """Channel-``l`` radial kernel on ``(0, inf)`` or ``(0, R)`` with Dirichlet ends.

    ``g_l(r, r') = (i/k) j^(k r_<) [h^(k r_>) - j^(k r_>) h^(kR)/j^(kR)]`` in
    Riccati-Bessel notation, the bracket's second term present only for a
    ball.  Evaluated in scaled form so no exponential can overflow.  ``r`` and
    ``rp`` broadcast against each other.
    """
    z = Energy.coerce(z)
    k = _k_of(z)
    if k == 0:
        raise KernelError("radial kernel is singular at z = 0")
    r = np.asarray(r, dtype=float)
    rp = np.asarray(rp, dtype=float)
    lo = np.minimum(r, rp)
    hi = np.maximum(r, rp)
    out = np.zeros(np.broadcast(lo, hi).shape, dtype=complex)
    mask = lo > 0
    if not np.any(mask):
        return out
    lo_m = np.broadcast_to(lo, out.shape)[mask]
    hi_m = np.broadcast_to(hi, out.shape)[mask]
    Jlo, _ = riccati_bessel(l, k * lo_m)
    _, Hhi = riccati_bessel_h(l, k * hi_m)
    kim = k.imag
    phase = np.exp(1j * k.real * hi_m - kim * (hi_m - lo_m))
    val = Jlo[l] * Hhi[l] * phase
    if R is not None:
        R = float(R)
        if np.any(hi_m > R * (1 + 1e-14)):
            raise KernelError("radial ball kernel evaluated outside the ball")
        JR, HR = riccati_bessel(l, np.array([k * R]))
        if abs(JR[l, 0]) < 1e-13 * abs(HR[l, 0]) and kim * R < 30:
            raise KernelError(f"z = {k * k} is a Dirichlet eigenvalue of channel {l}")
        Jhi, _ = riccati_bessel(l, k * hi_m)
        ratio = HR[l, 0] / JR[l, 0] * np.exp(1j * k.real * R - 2.0 * kim * R)
        val = val - Jlo[l] * Jhi[l] * ratio * np.exp(kim * (lo_m + hi_m))
    out[mask] = 1j / k * val
    return out


def riccati_bessel_h(lmax, x):
    """Only the scaled outgoing function ``H`` of :func:`riccati_bessel`."""
    x = np.asarray(x, dtype=complex)
    return None, _h_scaled(max(lmax, 1), x)[: lmax + 1]


def radial_green_matrix(l, z, x, R=None):
    """``radial_green(l, z, x_j, x_k)`` on a node vector, one recurrence per node."""
    z = Energy.coerce(z)
    k = _k_of(z)
    if k == 0:
        raise KernelError("radial kernel is singular at z = 0")
    x = np.asarray(x, dtype=float)
    out = np.zeros((x.size, x.size), dtype=complex)
    pos = x > 0
    if not np.any(pos):
        return out
    xp = x[pos]
    log_j, log_h = riccati_bessel_log(l, k * xp)
    lj, lh = log_j[l], log_h[l]
    first = xp[:, None] <= xp[None, :]
    lo = np.minimum(xp[:, None], xp[None, :])
    hi = np.maximum(xp[:, None], xp[None, :])
    kim = k.imag
    expo = np.where(first, lj[:, None] + lh[None, :], lj[None, :] + lh[:, None])
    expo = expo + 1j * k.real * hi - kim * (hi - lo)
    if R is not None:
        R = float(R)
        if np.any(xp > R * (1 + 1e-14)):
            raise KernelError("radial ball kernel evaluated outside the ball")
        jr, hr = riccati_bessel_log(l, np.array([k * R]))
        ljr, lhr = jr[l, 0], hr[l, 0]
        if (ljr - lhr).real < math.log(1e-13) and kim * R < 30:
            raise KernelError(f"z = {k * k} is a Dirichlet eigenvalue of channel {l}")
        image = (lj[:, None] + lj[None, :] + lhr - ljr
                 + 1j * k.real * R - 2.0 * kim * R + kim * (lo + hi))
        with np.errstate(under="ignore"):
            val = np.exp(expo) - np.exp(image)
    else:
        with np.errstate(under="ignore"):
            val = np.exp(expo)
    out[np.ix_(pos, pos)] = 1j / k * val
    return out
