"""Regenerate the frozen 3D value log det2(I + K(-1)) for V = -2 chi_{r<1}.

Each channel l contributes (2l+1) [log f_l - tr K_l], where f_l is the ratio
of Wronskians of the regular solution inside the well with the decaying
solution outside (exact in Bessel functions) and tr K_l is the diagonal
integral of the channel Green's function.  Channels 0..160 are summed and
the remaining tail is fitted to a power series in 1/(l+1/2).

Run:  python tests/generators/det2_3d.py   (takes a few minutes)
"""

import mpmath as mp
import numpy as np
from scipy.special import zeta

mp.mp.dps = 30
V0, a, kappa = mp.mpf(2), mp.mpf(1), mp.mpf(1)   # z = -kappa^2
p = mp.sqrt(V0 - kappa**2)
L_TOP = 160


def term(l):
    jl = lambda x: mp.sqrt(mp.pi / (2 * x)) * mp.besselj(l + 0.5, x)
    il = lambda x: mp.sqrt(mp.pi / (2 * x)) * mp.besseli(l + 0.5, x)
    kl = lambda x: mp.sqrt(mp.pi / (2 * x)) * mp.besselk(l + 0.5, x)
    inside = lambda r: (kappa / p) ** l * r * jl(p * r)
    free = lambda r: r * il(kappa * r)
    out = lambda r: r * kl(kappa * r)
    wr = lambda f, g: f(a) * mp.diff(g, a) - mp.diff(f, a) * g(a)
    f = wr(inside, out) / wr(free, out)
    diag = lambda r: r * r * kappa * (2 / mp.pi) * il(kappa * r) * kl(kappa * r)
    tr = -V0 * mp.quad(diag, [0, a])
    return (2 * l + 1) * (mp.log(f) - tr)


def tail(T, L, n):
    ls = np.arange(L - n + 1, L + 1)
    q = ls + 0.5
    c = np.linalg.solve(np.vander(1 / q, n, increasing=True), T[ls] * q**2)
    return sum(c[j] * zeta(2 + j, L + 1.5) for j in range(n))


if __name__ == "__main__":
    T = np.array([float(term(l)) for l in range(L_TOP + 1)])
    for L in (40, 80, 120, L_TOP):
        print(L, [T[: L + 1].sum() + tail(T, L, n) for n in (3, 4, 5)])
