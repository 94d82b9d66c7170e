"""Synthetic benchmark with known conditional posteriors.

Gaussian-shift family: each cell has a latent ``x ~ N(0, sd_x^2)``, its true
feature value is ``y ~ N(x, sd^2)``, so the true posterior is ``N(x, sd^2)``
and the marginal is ``N(0, sd_x^2 + sd^2)``. A small zoo of predictors
samples from deliberately wrong posteriors; their expected information gains
have closed forms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import CellRecord, EvaluationTable, FeatureId

MODEL_KINDS = ("oracle", "marginal_only", "shuffled", "overconfident", "shifted")
FAMILIES = ("gaussian_shift", "bimodal")
BIMODAL_OFFSET = 1.0


@dataclass(frozen=True)
class ScenarioSpec:
    n_cells: int = 2000
    k_samples: int = 500
    conditioning_sd: float = 1.0
    posterior_sd: float = 0.5
    seed: int = 0
    family: str = "gaussian_shift"
    feature: str = "F1"

    def __post_init__(self):
        if self.n_cells < 1 or self.k_samples < 2:
            raise ValueError("need n_cells >= 1 and k_samples >= 2")
        if self.conditioning_sd <= 0 or self.posterior_sd <= 0:
            raise ValueError("standard deviations must be positive")
        if self.family not in FAMILIES:
            raise ValueError(f"unknown scenario family {self.family!r}")

    @property
    def marginal_variance(self) -> float:
        return self.conditioning_sd ** 2 + self.posterior_sd ** 2


@dataclass(frozen=True)
class ReferenceModel:
    kind: str
    width_factor: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.width_factor <= 0:
            raise ValueError("width_factor must be positive")

    @property
    def name(self) -> str:
        if self.kind == "overconfident":
            return f"overconfident({self.width_factor:g})"
        if self.kind == "shifted":
            return f"shifted({self.offset:g})"
        return self.kind

    @classmethod
    def oracle(cls):
        return cls("oracle")

    @classmethod
    def marginal_only(cls):
        return cls("marginal_only")

    @classmethod
    def shuffled(cls):
        return cls("shuffled")

    @classmethod
    def overconfident(cls, width_factor: float):
        return cls("overconfident", width_factor=width_factor)

    @classmethod
    def shifted(cls, offset: float):
        return cls("shifted", offset=offset)


def derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random permutation without fixed points (rejection sampling)."""
    if n < 2:
        raise ValueError("a derangement needs at least two elements")
    idx = np.arange(n)
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == idx):
            return perm


def _posterior_draws(centers, sd, k, family, rng):
    n = centers.shape[0]
    if family == "bimodal":
        side = np.where(rng.random((n, k)) < 0.5, -BIMODAL_OFFSET, BIMODAL_OFFSET)
        return centers[:, None] + side + sd * rng.standard_normal((n, k))
    return centers[:, None] + sd * rng.standard_normal((n, k))


def generate_scenario(spec: ScenarioSpec, model: ReferenceModel) -> EvaluationTable:
    """Draw latents, true values and the model's samples; one cell per image.

    Latents and true values come from their own seeded stream, so every model
    generated with the same spec is scored against identical ground truth.
    """
    truth_ss, model_ss = np.random.SeedSequence(spec.seed).spawn(2)
    truth_rng = np.random.default_rng(truth_ss)
    n, k = spec.n_cells, spec.k_samples
    sd_x, sd = spec.conditioning_sd, spec.posterior_sd
    x = sd_x * truth_rng.standard_normal(n)
    y = _posterior_draws(x, sd, 1, spec.family, truth_rng)[:, 0]

    rng = np.random.default_rng(model_ss)
    if model.kind == "oracle":
        samples = _posterior_draws(x, sd, k, spec.family, rng)
    elif model.kind == "marginal_only":
        if spec.family == "bimodal":
            # marginal: even mixture of N(+-offset, sd_x^2 + sd^2)
            samples = _posterior_draws(np.zeros(n), math.sqrt(sd ** 2 + sd_x ** 2), k, spec.family, rng)
        else:
            samples = math.sqrt(spec.marginal_variance) * rng.standard_normal((n, k))
    elif model.kind == "shuffled":
        samples = _posterior_draws(x[derangement(n, rng)], sd, k, spec.family, rng)
    elif model.kind == "overconfident":
        samples = _posterior_draws(x, model.width_factor * sd, k, spec.family, rng)
    else:
        samples = _posterior_draws(x + model.offset, sd, k, spec.family, rng)

    feature = FeatureId(spec.feature, f"synthetic {spec.family}")
    width = max(4, len(str(n - 1)))
    records = tuple(
        CellRecord(f"img{i:0{width}d}", "c0", feature, float(y[i]), tuple(samples[i].tolist()))
        for i in range(n)
    )
    return EvaluationTable(model.name, records)


def _gaussian_expected_loglik(sq_err: float, var: float) -> float:
    """E[log N(y; m, var)] when E[(y - m)^2] = sq_err."""
    return -0.5 * math.log(2.0 * math.pi * var) - sq_err / (2.0 * var)


def expected_ig_closed_form(spec: ScenarioSpec, model: ReferenceModel) -> float:
    """Expected information gain under exact densities (Gaussian-shift only)."""
    if spec.family != "gaussian_shift":
        raise ValueError(f"no closed form for scenario family {spec.family!r}")
    var_x = spec.conditioning_sd ** 2
    var = spec.posterior_sd ** 2
    ref = 0.5 * math.log(2.0 * math.pi * math.e * (var_x + var))  # minus mean marginal log-density
    if model.kind == "oracle":
        return 0.5 * math.log((var_x + var) / var)
    if model.kind == "marginal_only":
        return 0.0
    if model.kind == "overconfident":
        return _gaussian_expected_loglik(var, (model.width_factor ** 2) * var) + ref
    if model.kind == "shuffled":
        return _gaussian_expected_loglik(var + 2.0 * var_x, var) + ref
    return 0.5 * math.log((var_x + var) / var) - model.offset ** 2 / (2.0 * var)
