"""Per-feature metrics for predicted per-cell posteriors.

Three views on the same table:

* marginal KLD: KL(P(Y) || P_model(Y)) between densities fitted to the pooled
  true values and to the pooled predicted samples;
* rank distance: W1 between the normalized ranks of the true values within
  their cells' samples and U(0, 100);
* information gain: mean log-density of the true values under the per-cell
  fitted posteriors minus the same mean under the pooled-truth marginal.

The log score is strictly proper, so the information gain is maximized in
expectation by the true posteriors. The unknown entropy offset that makes the
raw average log-likelihood incomparable across features cancels in the
difference.
"""

from __future__ import annotations

import os
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import dataset
from .dataset import EvaluationTable, FeatureId
from .density import (
    DensityConfig,
    DensityError,
    FittedDensity,
    fit_density,
    fit_density_batch,
    fit_kde_silverman,
    guard,
)
from .divergence import kld_quadrature, wasserstein1_to_uniform

RANK_BINS = 20
LOGLIK_BINS = 50
THREADS_ENV = "POSTERIOR_SCORE_THREADS"


def set_threads(n: int | None = None) -> int:
    """Cap compiled-kernel parallelism; ``None`` reads the environment, 0 means auto."""
    import numba

    if n is None:
        n = int(os.environ.get(THREADS_ENV, "0") or 0)
    limit = numba.config.NUMBA_NUM_THREADS
    n = limit if n <= 0 else min(n, limit)
    numba.set_num_threads(n)
    return n


def derive_seed(seed: int, *tokens) -> int:
    """Stable child seed from a master seed and arbitrary string tokens."""
    tag = zlib.crc32("\x1f".join(str(t) for t in tokens).encode("utf-8"))
    return int(np.random.SeedSequence([seed % 2**63, tag]).generate_state(1, np.uint64)[0] >> 1)


def _fid(feature) -> str:
    return feature.id if isinstance(feature, FeatureId) else str(feature)


@dataclass(frozen=True)
class CellScore:
    key: tuple[str, str]
    rank_normalized: float
    loglik_posterior: float
    loglik_reference: float
    posterior: FittedDensity = field(repr=False)

    def to_json(self) -> dict:
        return {
            "image_id": self.key[0],
            "cell_id": self.key[1],
            "rank": self.rank_normalized,
            "loglik_posterior": self.loglik_posterior,
            "loglik_reference": self.loglik_reference,
            "posterior": self.posterior.to_json(),
        }


@dataclass(frozen=True)
class FeatureMetricReport:
    feature: str
    model_name: str
    n_cells: int
    marginal_kld: float
    rank_w1: float
    avg_loglik: float
    ref_loglik: float
    rank_hist: tuple[int, ...]
    loglik_edges: tuple[float, ...]
    loglik_counts: tuple[int, ...]
    cells: tuple[CellScore, ...] = field(default=(), repr=False, compare=False)
    marginal_true: FittedDensity | None = field(default=None, repr=False, compare=False)
    marginal_model: FittedDensity | None = field(default=None, repr=False, compare=False)

    @property
    def info_gain(self) -> float:
        return self.avg_loglik - self.ref_loglik

    def to_json(self) -> dict:
        return {
            "model": self.model_name,
            "feature": self.feature,
            "n_cells": self.n_cells,
            "marginal_kld": self.marginal_kld,
            "rank_w1": self.rank_w1,
            "avg_loglik": self.avg_loglik,
            "ref_loglik": self.ref_loglik,
            "info_gain": self.info_gain,
            "rank_hist": list(self.rank_hist),
            "loglik_hist": {"edges": list(self.loglik_edges), "counts": list(self.loglik_counts)},
        }


def fit_cell_posteriors(table: EvaluationTable, feature, config: DensityConfig | None = None,
                        seed: int = 0) -> list[FittedDensity]:
    """One guarded density per cell, fitted to that cell's samples alone.

    Cell seeds depend only on the master seed and the cell key, so the result
    does not depend on the order or the grouping in which cells are fitted.
    """
    config = config or DensityConfig()
    fid = _fid(feature)
    records = table.records_for(fid)
    samples = table.sample_matrix(fid)
    if config.estimator == "kde":
        out = []
        for rec, row in zip(records, samples):
            try:
                out.append(guard(fit_kde_silverman(row), row, config.eps))
            except DensityError as exc:
                raise DensityError(f"cell {rec.key} feature {fid}: {exc}") from exc
        return out
    seeds = [derive_seed(seed, "cell", r.image_id, r.cell_id, fid) for r in records]
    return fit_density_batch(samples, config, config.posterior_k_max, seeds)


def fit_true_marginal(table: EvaluationTable, feature, config: DensityConfig, seed: int) -> FittedDensity:
    fid = _fid(feature)
    return fit_density(dataset.pool_true_values(table, fid), config, config.marginal_k_max,
                       derive_seed(seed, "marginal-true", fid))


def fit_model_marginal(table: EvaluationTable, feature, config: DensityConfig, seed: int) -> FittedDensity:
    fid = _fid(feature)
    cap = max(config.marginal_cap, table.n_cells(fid))
    pooled = dataset.pool_predicted_samples(table, fid, cap, derive_seed(seed, "pool", fid))
    return fit_density(pooled, config, config.marginal_k_max, derive_seed(seed, "marginal-model", fid))


def marginal_kld_metric(table: EvaluationTable, feature, config: DensityConfig | None = None,
                        seed: int = 0) -> float:
    """KL(P(Y) || P_model(Y)) for the pooled true values vs pooled samples."""
    config = config or DensityConfig()
    p = fit_true_marginal(table, feature, config, seed)
    q = fit_model_marginal(table, feature, config, seed)
    return kld_quadrature(p, q, config.grid_points)


def rank_of_true(true_value: float, samples) -> float:
    """Midrank of ``true_value`` among ``samples``, scaled to [0, 100]."""
    s = np.asarray(samples, dtype=float)
    if s.size < 1:
        raise ValueError("need at least one sample")
    r = np.count_nonzero(s < true_value) + 0.5 * np.count_nonzero(s == true_value)
    return 100.0 * r / s.size


def cell_ranks(table: EvaluationTable, feature) -> np.ndarray:
    fid = _fid(feature)
    s = table.sample_matrix(fid)
    y = table.true_values(fid)[:, None]
    r = np.count_nonzero(s < y, axis=1) + 0.5 * np.count_nonzero(s == y, axis=1)
    return 100.0 * r / s.shape[1]


def rank_distance_metric(table: EvaluationTable, feature) -> float:
    return wasserstein1_to_uniform(cell_ranks(table, feature))


def avg_log_likelihood(table: EvaluationTable, feature, posteriors) -> tuple[float, np.ndarray]:
    """Mean log-density of each cell's true value under its own posterior."""
    y = table.true_values(_fid(feature))
    if len(posteriors) != y.size:
        raise ValueError(f"{len(posteriors)} posteriors for {y.size} cells")
    per_cell = np.array([float(p.log_pdf(v)) for p, v in zip(posteriors, y)])
    return float(per_cell.mean()), per_cell


def reference_log_likelihood(table: EvaluationTable, feature, config: DensityConfig | None = None,
                             seed: int = 0, reference: FittedDensity | None = None):
    """Mean log-density of the true values under the pooled-truth marginal.

    Returns ``(avg, per_cell, reference_density)``.
    """
    config = config or DensityConfig()
    if reference is None:
        reference = fit_true_marginal(table, feature, config, seed)
    per_cell = np.asarray(reference.log_pdf(table.true_values(_fid(feature))), dtype=float)
    return float(per_cell.mean()), per_cell, reference


def _loglik_hist(values: np.ndarray):
    lo, hi = float(values.min()), float(values.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(values, bins=LOGLIK_BINS, range=(lo, hi))
    return tuple(float(e) for e in edges), tuple(int(c) for c in counts)


def info_gain(table: EvaluationTable, feature, config: DensityConfig | None = None,
              seed: int = 0, with_marginal_kld: bool = True) -> FeatureMetricReport:
    """Full metric report for one feature of one model."""
    config = config or DensityConfig()
    fid = _fid(feature)
    try:
        posteriors = fit_cell_posteriors(table, fid, config, seed)
        avg, per_cell = avg_log_likelihood(table, fid, posteriors)
        ref_avg, ref_cell, reference = reference_log_likelihood(table, fid, config, seed)
        if with_marginal_kld:
            model_marginal = fit_model_marginal(table, fid, config, seed)
            mkld = kld_quadrature(reference, model_marginal, config.grid_points)
        else:
            model_marginal, mkld = None, float("nan")
    except (DensityError, ValueError) as exc:
        raise type(exc)(f"feature {fid}: {exc}") from exc
    ranks = cell_ranks(table, fid)
    rank_hist, _ = np.histogram(ranks, bins=RANK_BINS, range=(0.0, 100.0))
    edges, counts = _loglik_hist(per_cell)
    cells = tuple(
        CellScore(rec.key, float(r), float(a), float(b), post)
        for rec, r, a, b, post in zip(table.records_for(fid), ranks, per_cell, ref_cell, posteriors)
    )
    return FeatureMetricReport(
        feature=fid,
        model_name=table.model_name,
        n_cells=len(cells),
        marginal_kld=float(mkld),
        rank_w1=wasserstein1_to_uniform(ranks),
        avg_loglik=avg,
        ref_loglik=ref_avg,
        rank_hist=tuple(int(c) for c in rank_hist),
        loglik_edges=edges,
        loglik_counts=counts,
        cells=cells,
        marginal_true=reference,
        marginal_model=model_marginal,
    )


def score_table(table: EvaluationTable, features=None, config: DensityConfig | None = None,
                seed: int = 0) -> list[FeatureMetricReport]:
    """Reports for ``features`` (default: every feature, in table order)."""
    if features is None:
        features = [f.id for f in table.features]
    return [info_gain(table, f, config, seed) for f in features]


def marginal_grid(report: FeatureMetricReport, points: int = 256) -> dict:
    """Both marginal densities on a shared grid, for plotting elsewhere."""
    dens = [d for d in (report.marginal_true, report.marginal_model) if d is not None]
    if not dens:
        return {"y": [], "true_pdf": [], "model_pdf": []}
    lo = min(d.lo for d in dens)
    hi = max(d.hi for d in dens)
    y = np.linspace(lo, hi, points)
    out = {"y": y.tolist()}
    out["true_pdf"] = report.marginal_true.pdf(y).tolist() if report.marginal_true else []
    out["model_pdf"] = report.marginal_model.pdf(y).tolist() if report.marginal_model else []
    return out


__all__ = [
    "CellScore",
    "FeatureMetricReport",
    "avg_log_likelihood",
    "cell_ranks",
    "derive_seed",
    "fit_cell_posteriors",
    "info_gain",
    "marginal_kld_metric",
    "rank_distance_metric",
    "rank_of_true",
    "reference_log_likelihood",
    "score_table",
    "set_threads",
]

