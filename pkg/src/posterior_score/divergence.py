"""KL divergence between fitted densities and the exact W1 distance of a set
of normalized ranks to the uniform distribution on [0, 100]."""

from __future__ import annotations

import math

import numpy as np

from .density import FittedDensity, quadrature_grid

RANK_MAX = 100.0


def gaussian_kld_closed_form(mu1: float, var1: float, mu2: float, var2: float) -> float:
    """KL(N(mu1, var1) || N(mu2, var2))."""
    if var1 <= 0 or var2 <= 0:
        raise ValueError("variances must be positive")
    return 0.5 * math.log(var2 / var1) + (var1 + (mu1 - mu2) ** 2) / (2.0 * var2) - 0.5


def kld_quadrature(p: FittedDensity, q: FittedDensity, grid_points: int = 4096) -> float:
    """Trapezoid estimate of KL(p || q) over the union of both guard supports.

    Both densities should carry a positive guard so ``log q`` stays bounded
    wherever ``p`` has mass.
    """
    if grid_points < 1024:
        raise ValueError("grid_points must be at least 1024")
    y = quadrature_grid([p, q], grid_points)
    lp = p.log_pdf(y)
    lq = q.log_pdf(y)
    pv = np.exp(lp)
    with np.errstate(invalid="ignore"):
        integrand = np.where(pv > 0, pv * (lp - lq), 0.0)
    return float(np.trapezoid(integrand, y))


def kld_monte_carlo(p: FittedDensity, q: FittedDensity, n_draws: int = 100_000,
                    seed: int = 0) -> tuple[float, float]:
    """Monte Carlo KL(p || q) from draws of p.

    Returns the estimate and the standard error of the mean log-ratio.
    """
    if n_draws < 1000:
        raise ValueError("n_draws must be at least 1000")
    y = p.sample(n_draws, seed)
    ratio = p.log_pdf(y) - q.log_pdf(y)
    return float(ratio.mean()), float(ratio.std(ddof=1) / math.sqrt(n_draws))


def _abs_integral(c: float, a, b):
    """Integral of |c - u| du over [a, b] (vectorized over a, b, c)."""
    def antider(u):
        d = u - c
        return 0.5 * d * np.abs(d)
    return antider(b) - antider(a)


def wasserstein1_to_uniform(normalized_ranks) -> float:
    """Exact W1 between the empirical distribution of ``normalized_ranks`` and
    U(0, 100).

    In one dimension W1 is the area between the two CDFs. The empirical CDF is
    a step function, so the area is summed piece by piece in closed form.
    """
    r = np.sort(np.asarray(normalized_ranks, dtype=float).ravel())
    n = r.size
    if n == 0:
        raise ValueError("need at least one rank")
    if r[0] < 0 or r[-1] > RANK_MAX or not np.all(np.isfinite(r)):
        raise ValueError("normalized ranks must lie in [0, 100]")
    u = r / RANK_MAX
    edges = np.concatenate(([0.0], u, [1.0]))
    levels = np.arange(n + 1) / n
    area = _abs_integral(levels, edges[:-1], edges[1:])
    return float(RANK_MAX * math.fsum(area))
