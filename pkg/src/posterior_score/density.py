"""One-dimensional density estimation: Gaussian mixtures fitted by EM and
Gaussian kernel density estimates, both wrapped in an epsilon-uniform guard.

The guard mixes a small uniform component over a finite support into every
fitted density so that log-likelihoods of values landing in near-empty
regions stay finite::

    pdf(y) = (1 - eps) * estimator_pdf(y) + eps * Uniform(lo, hi)(y)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy.special import logsumexp

from . import _em

LOG_2PI = math.log(2.0 * math.pi)

DEFAULT_EPS = 1e-6
MAX_EPS = 1e-3
GUARD_WIDTH = 3.0
EM_MAX_ITER = 200
EM_TOL = 1e-6
EM_RESTARTS = 3
EM_INIT_ITER = 10
MONOTONE_TOL = 1e-9


class DensityError(ValueError):
    """Raised when a density cannot be fitted to the given samples."""


@dataclass(frozen=True)
class GaussianMixture:
    weights: tuple[float, ...]
    means: tuple[float, ...]
    variances: tuple[float, ...]
    degenerate: bool = False
    # diagnostics from the fit; not part of the density's identity
    loglik: float = field(default=float("nan"), compare=False)
    n_iter: int = field(default=0, compare=False)
    history: tuple[float, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        k = len(self.weights)
        if k == 0 or len(self.means) != k or len(self.variances) != k:
            raise DensityError("mixture needs matching, non-empty parameter lists")
        if abs(math.fsum(self.weights) - 1.0) > 1e-12:
            raise DensityError(f"mixture weights sum to {math.fsum(self.weights)!r}")
        if min(self.variances) <= 0:
            raise DensityError("mixture variances must be positive")

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def scale(self) -> float:
        """Largest component standard deviation."""
        return math.sqrt(max(self.variances))

    def log_pdf(self, y):
        y = np.asarray(y, dtype=float)
        w = np.asarray(self.weights)
        mu = np.asarray(self.means)
        var = np.asarray(self.variances)
        with np.errstate(divide="ignore"):
            logw = np.log(w)
        d = y[..., None] - mu
        comp = logw - 0.5 * (LOG_2PI + np.log(var)) - 0.5 * d * d / var
        return logsumexp(comp, axis=-1)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(self.n_components, size=n, p=np.asarray(self.weights))
        mu = np.asarray(self.means)[comp]
        sd = np.sqrt(np.asarray(self.variances))[comp]
        return mu + sd * rng.standard_normal(n)

    def to_params(self) -> dict:
        return {
            "weights": list(self.weights),
            "means": list(self.means),
            "variances": list(self.variances),
        }


@dataclass(frozen=True, eq=False)
class KernelDensity:
    points: np.ndarray
    bandwidth: float

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).ravel()
        if pts.size == 0:
            raise DensityError("kernel density needs at least one point")
        if not self.bandwidth > 0:
            raise DensityError(f"bandwidth must be positive, got {self.bandwidth!r}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __eq__(self, other):
        if not isinstance(other, KernelDensity):
            return NotImplemented
        return self.bandwidth == other.bandwidth and np.array_equal(self.points, other.points)

    __hash__ = None

    @property
    def scale(self) -> float:
        return self.bandwidth

    def log_pdf(self, y, chunk: int = 4_000_000):
        y = np.asarray(y, dtype=float)
        flat = y.ravel()
        h = self.bandwidth
        n = self.points.size
        const = -math.log(n) - math.log(h) - 0.5 * LOG_2PI
        out = np.empty(flat.size)
        step = max(1, chunk // n)
        for start in range(0, flat.size, step):
            z = (flat[start:start + step, None] - self.points) / h
            out[start:start + step] = logsumexp(-0.5 * z * z, axis=1) + const
        return out.reshape(y.shape)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.integers(0, self.points.size, size=n)
        return self.points[idx] + self.bandwidth * rng.standard_normal(n)

    def to_params(self) -> dict:
        return {"points": self.points.tolist(), "bandwidth": self.bandwidth}


Estimator = Union[GaussianMixture, KernelDensity]


@dataclass(frozen=True)
class FittedDensity:
    """An estimator plus its epsilon-uniform guard on ``[lo, hi]``."""

    estimator: Estimator
    eps: float
    lo: float
    hi: float

    def __post_init__(self):
        if not 0.0 <= self.eps <= MAX_EPS:
            raise DensityError(f"guard eps must lie in [0, {MAX_EPS}], got {self.eps!r}")
        if not self.lo < self.hi:
            raise DensityError(f"guard support must satisfy lo < hi, got ({self.lo}, {self.hi})")

    @property
    def degenerate(self) -> bool:
        return getattr(self.estimator, "degenerate", False)

    @property
    def scale(self) -> float:
        return self.estimator.scale

    def log_pdf(self, y):
        y = np.asarray(y, dtype=float)
        est = self.estimator.log_pdf(y)
        if self.eps == 0.0:
            return est
        inside = (y >= self.lo) & (y <= self.hi)
        with np.errstate(divide="ignore"):
            floor = np.where(inside, math.log(self.eps / (self.hi - self.lo)), -np.inf)
        return np.logaddexp(math.log1p(-self.eps) + est, floor)

    def pdf(self, y):
        return np.exp(self.log_pdf(y))

    def sample(self, n: int, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        out = self.estimator.sample(n, rng)
        uniform = rng.random(n) < self.eps
        if uniform.any():
            out[uniform] = rng.uniform(self.lo, self.hi, size=int(uniform.sum()))
        return out

    def to_json(self) -> dict:
        kind = "gmm" if isinstance(self.estimator, GaussianMixture) else "kde"
        return {
            "type": kind,
            "params": self.estimator.to_params(),
            "guard": {"eps": self.eps, "lo": self.lo, "hi": self.hi},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FittedDensity":
        params = obj["params"]
        if obj["type"] == "gmm":
            est = GaussianMixture(
                tuple(params["weights"]), tuple(params["means"]), tuple(params["variances"])
            )
        elif obj["type"] == "kde":
            est = KernelDensity(np.asarray(params["points"], dtype=float), params["bandwidth"])
        else:
            raise DensityError(f"unknown density type {obj['type']!r}")
        g = obj["guard"]
        return cls(est, g["eps"], g["lo"], g["hi"])


@dataclass(frozen=True)
class DensityConfig:
    """Estimator settings shared by the per-cell and marginal fits."""

    estimator: str = "gmm"  # "gmm" or "kde"
    posterior_k_max: int = 3
    marginal_k_max: int = 8
    eps: float = DEFAULT_EPS
    max_iter: int = EM_MAX_ITER
    tol: float = EM_TOL
    n_restarts: int = EM_RESTARTS
    init_iter: int = EM_INIT_ITER
    marginal_cap: int = 50_000
    grid_points: int = 4096

    def __post_init__(self):
        if self.estimator not in ("gmm", "kde"):
            raise ValueError(f"estimator must be 'gmm' or 'kde', got {self.estimator!r}")
        if self.posterior_k_max < 1 or self.marginal_k_max < 1:
            raise ValueError("k_max must be at least 1")


def variance_floor(samples) -> float:
    x = np.asarray(samples, dtype=float)
    spread = float(x.max() - x.min()) if x.size else 0.0
    return max((1e-6 * spread) ** 2, 1e-12)


def guard(estimator: Estimator, samples=None, eps: float = DEFAULT_EPS) -> FittedDensity:
    """Wrap ``estimator`` with the default guard.

    The support spans the samples (or the component means / kernel points when
    no samples are given) widened by three estimator scales on each side.
    """
    if samples is None:
        if isinstance(estimator, GaussianMixture):
            samples = estimator.means
        else:
            samples = estimator.points
    x = np.asarray(samples, dtype=float)
    s = estimator.scale
    return FittedDensity(estimator, eps, float(x.min() - GUARD_WIDTH * s), float(x.max() + GUARD_WIDTH * s))


def _as_samples(samples, min_len: int) -> np.ndarray:
    x = np.ascontiguousarray(samples, dtype=float).ravel()
    if x.size < min_len:
        raise DensityError(f"need at least {min_len} samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise DensityError("samples must be finite")
    return x


def _degenerate(x: np.ndarray) -> GaussianMixture:
    return GaussianMixture((1.0,), (float(x[0]),), (variance_floor(x),), degenerate=True,
                           loglik=float("nan"), n_iter=0)


def _check_monotone(min_delta):
    worst = float(np.min(min_delta))
    if worst < -MONOTONE_TOL:
        raise RuntimeError(f"EM log-likelihood decreased by {-worst:.3e}")


def _normalize(w: np.ndarray) -> tuple[float, ...]:
    w = np.asarray(w, dtype=float)
    w = w / w.sum()
    return tuple(float(v) for v in w)


def fit_gmm_em(samples, n_components: int = 1, seed: int = 0, max_iter: int = EM_MAX_ITER,
               tol: float = EM_TOL, n_restarts: int = EM_RESTARTS,
               init_iter: int = EM_INIT_ITER) -> GaussianMixture:
    """Fit a ``n_components`` Gaussian mixture by EM.

    Each of ``n_restarts`` k-means++ seeded starts runs ``init_iter`` short EM
    steps; the best continues until the per-sample log-likelihood gains less
    than ``tol`` or ``max_iter`` is reached. Identical samples short-circuit
    to a single floor-variance component with ``degenerate=True``.
    """
    if n_components < 1:
        raise DensityError("n_components must be at least 1")
    x = _as_samples(samples, max(n_components, 1))
    if x.min() == x.max():
        return _degenerate(x)
    rng = np.random.default_rng(seed)
    u = rng.random((n_restarts, n_components))
    w, m, v, ll, it, md, hist = _em.fit_restarts(
        x, n_components, u, variance_floor(x), max_iter, tol, init_iter
    )
    _check_monotone(md)
    return GaussianMixture(
        _normalize(w), tuple(float(a) for a in m), tuple(float(a) for a in v),
        loglik=float(ll), n_iter=int(it), history=tuple(float(h) for h in hist[:it]),
    )


def bic_k_range(n: int, k_max: int) -> int:
    """Largest component count tried for ``n`` samples."""
    return max(1, min(k_max, n // 5))


def select_gmm_bic_batch(matrix, k_max: int, seeds: Sequence[int], max_iter: int = EM_MAX_ITER,
                         tol: float = EM_TOL, n_restarts: int = EM_RESTARTS,
                         init_iter: int = EM_INIT_ITER) -> list[GaussianMixture]:
    """BIC-selected mixtures for every row of ``matrix`` (one seed per row).

    Row ``i`` gets exactly the mixture ``select_gmm_bic(matrix[i], k_max,
    seeds[i])`` would return.
    """
    xs = np.ascontiguousarray(matrix, dtype=float)
    if xs.ndim != 2:
        raise DensityError("expected a 2-d sample matrix")
    b, n = xs.shape
    if n < 2:
        raise DensityError(f"need at least 2 samples per row, got {n}")
    if len(seeds) != b:
        raise DensityError("one seed per row is required")
    if not np.all(np.isfinite(xs)):
        raise DensityError("samples must be finite")
    k_hi = bic_k_range(n, k_max)
    out: list[GaussianMixture | None] = [None] * b
    live = []
    for i in range(b):
        if xs[i].min() == xs[i].max():
            out[i] = _degenerate(xs[i])
        else:
            live.append(i)
    if live:
        sub = xs[live]
        uniforms = np.stack([
            np.random.default_rng(seeds[i]).random((k_hi, n_restarts, k_hi)) for i in live
        ])
        floors = np.array([variance_floor(r) for r in sub])
        ks, ws, ms, vs, md = _em.select_batch(sub, k_hi, uniforms, floors, max_iter, tol, init_iter)
        _check_monotone(md)
        for j, i in enumerate(live):
            k = int(ks[j])
            out[i] = GaussianMixture(
                _normalize(ws[j, :k]), tuple(float(a) for a in ms[j, :k]),
                tuple(float(a) for a in vs[j, :k]),
            )
    return out  # type: ignore[return-value]


def select_gmm_bic(samples, k_max: int, seed: int = 0, **em_kwargs) -> GaussianMixture:
    """Fit k = 1..min(k_max, n // 5) components and keep the lowest BIC.

    BIC = -2 loglik + (3k - 1) ln n; ties go to the smaller k.
    """
    x = _as_samples(samples, 2)
    return select_gmm_bic_batch(x[None, :], k_max, [seed], **em_kwargs)[0]


def silverman_bandwidth(samples) -> float:
    x = _as_samples(samples, 2)
    sd = float(np.std(x, ddof=1))
    # type-6 (n + 1) plotting positions, clipped to the sample range
    q75, q25 = np.percentile(x, [75, 25], method="weibull")
    iqr = float(q75 - q25) / 1.34
    spread = min(sd, iqr) if iqr > 0 else sd
    if spread <= 0:
        raise DensityError("samples have zero spread; bandwidth undefined")
    # same floor as the mixture variances, on the standard-deviation scale
    return max(0.9 * spread * x.size ** (-0.2), math.sqrt(variance_floor(x)))


def fit_kde_silverman(samples) -> KernelDensity:
    """Gaussian KDE with Silverman's rule-of-thumb bandwidth."""
    x = _as_samples(samples, 2)
    return KernelDensity(x.copy(), silverman_bandwidth(x))


def fit_density(samples, config: DensityConfig, k_max: int, seed: int = 0) -> FittedDensity:
    """Fit the configured estimator to ``samples`` and guard it."""
    x = _as_samples(samples, 2)
    if config.estimator == "kde":
        est: Estimator = fit_kde_silverman(x)
    else:
        est = select_gmm_bic(x, k_max, seed, max_iter=config.max_iter, tol=config.tol,
                             n_restarts=config.n_restarts, init_iter=config.init_iter)
    return guard(est, x, config.eps)


def fit_density_batch(matrix, config: DensityConfig, k_max: int,
                      seeds: Sequence[int]) -> list[FittedDensity]:
    """Row-wise ``fit_density``; GMM rows are fitted in one compiled batch."""
    xs = np.asarray(matrix, dtype=float)
    if config.estimator == "kde":
        ests: list = [fit_kde_silverman(row) for row in xs]
    else:
        ests = select_gmm_bic_batch(xs, k_max, seeds, max_iter=config.max_iter, tol=config.tol,
                                    n_restarts=config.n_restarts, init_iter=config.init_iter)
    return [guard(est, row, config.eps) for est, row in zip(ests, xs)]


def log_pdf(density: FittedDensity, y):
    """Guarded log-density at ``y`` (scalar or array)."""
    out = density.log_pdf(y)
    return float(out) if np.ndim(out) == 0 else out


def sample_density(density: FittedDensity, n: int, seed: int) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be positive")
    return density.sample(n, seed)


def _min_scale(d: FittedDensity) -> float:
    est = d.estimator
    if isinstance(est, GaussianMixture):
        return math.sqrt(min(est.variances))
    return est.bandwidth


def quadrature_grid(densities: Sequence[FittedDensity], grid_points: int,
                    pad: float = 6.0, max_nodes: int = 2**18) -> np.ndarray:
    """Integration nodes covering every guard support widened by ``pad`` scales.

    The uniform spacing is refined to a quarter of the narrowest kernel or
    component width (up to ``max_nodes``); anything still unresolved gets a
    fine local grid of its own.
    """
    s = max(d.scale for d in densities)
    lo = min(d.lo for d in densities) - pad * s
    hi = max(d.hi for d in densities) + pad * s
    finest = min(_min_scale(d) for d in densities)
    n = grid_points
    if (hi - lo) / (n - 1) > finest / 4:
        n = min(max_nodes, int(math.ceil(4 * (hi - lo) / finest)) + 1)
    parts = [np.linspace(lo, hi, n)]
    spacing = (hi - lo) / (n - 1)
    for d in densities:
        parts.append(np.array([d.lo, d.hi]))
        est = d.estimator
        if isinstance(est, GaussianMixture):
            centers = [(mu, math.sqrt(v)) for mu, v in zip(est.means, est.variances)]
        else:
            centers = [(p, est.bandwidth) for p in np.unique(est.points)]
        for mu, sd in centers:
            if sd < 4 * spacing:
                parts.append(np.linspace(mu - 10 * sd, mu + 10 * sd, 321))
    return np.unique(np.concatenate(parts))


def integrate_check(density: FittedDensity, grid_points: int = 4096) -> float:
    """Trapezoid integral of the guarded pdf; should be 1 within 1e-3."""
    if grid_points < 256:
        raise ValueError("grid_points must be at least 256")
    grid = quadrature_grid([density], grid_points)
    return float(np.trapezoid(density.pdf(grid), grid))
