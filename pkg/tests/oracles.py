"""Independent reference computations used only by the tests.

Each one is written the slow, obvious way (explicit per-sample loops, central
differences, a second eigensolver) so it shares no code path with the package.
"""

import numpy as np

from collapse_scope.model import VaeParams

EIGHT_MODE = (0.4, 0.2, 0.15, 0.1, 0.06, 0.04, 0.03, 0.02)


def brute_loss(p, x, beta):
    """Per-sample expected loss: returns (D, R, mse_with_noise)."""
    d_sum = r_sum = sq_sum = 0.0
    for row in np.atleast_2d(x):
        mu = p.enc_mean @ row + p.enc_mean_bias
        lv = np.clip(p.enc_logvar @ row + p.enc_logvar_bias, -30, 30)
        var = np.exp(lv)
        resid = row - p.dec @ mu - p.dec_bias
        sq = resid @ resid + np.sum(p.dec**2, axis=0) @ var
        sq_sum += sq
        d_sum += sq / (2 * p.dec_var)
        r_sum += 0.5 * np.sum(mu**2 + var - lv - 1)
    n = len(x)
    return d_sum / n, r_sum / n, sq_sum / n


def brute_covariance(x):
    n, d = x.shape
    mean = [sum(x[i, j] for i in range(n)) / n for j in range(d)]
    c = np.zeros((d, d))
    for a in range(d):
        for b in range(d):
            c[a, b] = sum((x[i, a] - mean[a]) * (x[i, b] - mean[b]) for i in range(n)) / n
    return c


def central_difference(f, arrays, h=1e-5, order=2):
    """Gradient of scalar f(arrays dict) w.r.t. every array entry.

    order=4 uses the five-point stencil, which permits a larger h and so keeps
    rounding noise (~eps * |f| / h) small when |f| is large.
    """
    weights = {2: ((1, 0.5), (-1, -0.5)), 4: ((2, -1 / 12), (1, 8 / 12), (-1, -8 / 12), (-2, 1 / 12))}[order]
    out = {}
    for name, a in arrays.items():
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            total = 0.0
            for step, w in weights:
                shifted = {k: v.copy() for k, v in arrays.items()}
                shifted[name][idx] += step * h
                total += w * f(shifted)
            g[idx] = total / h
        out[name] = g
    return out


def active_modes(weights, temperature):
    """Closed-form active set: a mode is active iff its lambda/V exceeds T."""
    return [k for k, w in enumerate(weights) if w > temperature]


def one_mode_optimum(lam, beta, dec_var=1.0):
    """Canonical one-mode equilibrium for 1-D data of variance lam.

    Encoder mean slope a, posterior variance s2 and decoder weight w with
    M^2 = 1 - tau, s2 = tau, A^2 = 1 (tau = beta dec_var / lam < 1).
    """
    tau = beta * dec_var / lam
    m2 = 1 - tau
    a = np.sqrt(m2 / lam)  # mu_sq = a^2 lam = M^2
    s2 = tau
    # decoder minimizing lam (1 - w a)^2 + w^2 s2 at fixed encoder
    w = a * lam / (a * a * lam + s2)
    return a, s2, w


def random_instance(rng, d=None, m=None, n=None, logvar_shift=0.0):
    """Random (params, samples, beta) with small d, m and n."""
    d = d or int(rng.integers(1, 5))
    m = m or int(rng.integers(1, 5))
    n = n or int(rng.integers(2, 9))
    x = rng.normal(size=(n, d)) * rng.uniform(0.5, 2, d) + rng.normal(size=d)
    p = VaeParams(
        rng.normal(size=(m, d)),
        rng.normal(size=m),
        0.3 * rng.normal(size=(m, d)),
        0.3 * rng.normal(size=m) + logvar_shift,
        rng.normal(size=(d, m)),
        rng.normal(size=d),
        float(rng.uniform(0.5, 2)),
    )
    return p, x, float(rng.uniform(0, 2))
