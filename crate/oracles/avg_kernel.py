"""Reference values for the frame average of |K_xi(k)|^p.

The mean over sigma2 has the closed form
    (2/pi) (a^2 + b^2)^(-p/2) (pi/2) 2F1(p/2, 1/2; 1; b^2/(a^2 + b^2)),
with a = -|k|^2 + s|k|u (Xi1) and b = s|k| sqrt(1 - u^2). The remaining mean over
u in [-1, 1] and s in [R/2, 2R] is done by adaptive quadrature, with a breakpoint at
the resonance u = |k|/s. Xi2 has a = -|k|^2 - s|k|u and the same mean.

Run: python3 oracles/avg_kernel.py
"""
import mpmath
import numpy as np
from scipy import integrate, special

mpmath.mp.dps = 30


def sigma2_mean(a, b, p):
    r2 = a * a + b * b
    # complementary parameter 1 - m, kept exact near the resonance
    w = a * a / r2
    if p == 1.0:
        return (2.0 / np.pi) * special.ellipkm1(w) / np.sqrt(r2)
    z = mpmath.mpf(1) - mpmath.mpf(w)
    return r2 ** (-p / 2) * float(mpmath.hyp2f1(p / 2, 0.5, 1, z))


def u_mean(s, k, p):
    def f(u):
        a = -k * k + s * k * u
        b = s * k * np.sqrt(max(1.0 - u * u, 0.0))
        return sigma2_mean(a, b, p)

    c = k / s
    opts = dict(limit=400, epsabs=0, epsrel=1e-11)
    if not -1.0 < c < 1.0:
        return 0.5 * integrate.quad(f, -1.0, 1.0, **opts)[0]
    # u = c -+ t^2 on either side removes the |u - c|^(1-p) singularity
    # a = s|k|(u - c) exactly
    def g(t, side):
        if t == 0.0:
            return 0.0
        u = c + side * t * t
        b = s * k * np.sqrt(max(1.0 - u * u, 0.0))
        return 2 * t * sigma2_mean(side * s * k * t * t, b, p)

    left = integrate.quad(g, 0.0, np.sqrt(c + 1.0), args=(-1.0,), **opts)[0]
    right = integrate.quad(g, 0.0, np.sqrt(1.0 - c), args=(1.0,), **opts)[0]
    return 0.5 * (left + right)


def frame_mean(R, k, p):
    val, _ = integrate.quad(
        lambda s: u_mean(s, k, p), R / 2, 2 * R, points=[k] if R / 2 < k < 2 * R else None,
        limit=200, epsabs=0, epsrel=1e-9,
    )
    return val / (1.5 * R)


if __name__ == "__main__":
    for p in (1.0, 1.5):
        for R in (16.0, 64.0):
            for k in (4.0, 64.0, 256.0):
                print(f"p={p} R={R} k={k} mean={frame_mean(R, k, p):.12e}")
