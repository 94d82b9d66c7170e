import math

import numpy as np
import pytest

from posterior_score import synthetic
from posterior_score.synthetic import ReferenceModel, ScenarioSpec, expected_ig_closed_form, generate_scenario

DEFAULT = ScenarioSpec()


def test_oracle_pooled_variance():
    t = generate_scenario(ScenarioSpec(n_cells=2000, k_samples=500, seed=1), ReferenceModel.oracle())
    assert t.sample_matrix("F1").var() == pytest.approx(1.25, abs=0.08)
    assert t.true_values("F1").var() == pytest.approx(1.25, abs=0.15)
    assert t.n_cells("F1") == 2000 and t.k_samples("F1") == 500
    assert t.n_images("F1") == 2000


def test_shuffled_two_cells_swaps():
    spec = ScenarioSpec(n_cells=2, k_samples=400, conditioning_sd=1.0, posterior_sd=1e-3, seed=3)
    t = generate_scenario(spec, ReferenceModel.shuffled())
    y = t.true_values("F1")
    centers = t.sample_matrix("F1").mean(axis=1)
    np.testing.assert_allclose(centers, y[::-1], atol=1e-2)


def test_derangement_has_no_fixed_points():
    rng = np.random.default_rng(0)
    assert synthetic.derangement(2, rng).tolist() == [1, 0]
    for n in (3, 10, 500):
        p = synthetic.derangement(n, rng)
        assert sorted(p.tolist()) == list(range(n))
        assert not np.any(p == np.arange(n))
    with pytest.raises(ValueError):
        synthetic.derangement(1, rng)


def test_overconfident_width():
    t = generate_scenario(ScenarioSpec(n_cells=200, k_samples=500, seed=2),
                          ReferenceModel.overconfident(0.2))
    assert t.sample_matrix("F1").std(axis=1, ddof=1).mean() == pytest.approx(0.1, abs=0.005)


def test_shifted_offset():
    spec = ScenarioSpec(n_cells=500, k_samples=100, seed=2)
    o = generate_scenario(spec, ReferenceModel.oracle())
    s = generate_scenario(spec, ReferenceModel.shifted(1.0))
    diff = s.sample_matrix("F1").mean() - o.sample_matrix("F1").mean()
    assert diff == pytest.approx(1.0, abs=0.02)


def test_truth_shared_across_models():
    spec = ScenarioSpec(n_cells=50, k_samples=10, seed=9)
    a = generate_scenario(spec, ReferenceModel.oracle())
    b = generate_scenario(spec, ReferenceModel.marginal_only())
    np.testing.assert_array_equal(a.true_values("F1"), b.true_values("F1"))
    assert a == generate_scenario(spec, ReferenceModel.oracle())


def test_bimodal_generation():
    spec = ScenarioSpec(n_cells=100, k_samples=400, conditioning_sd=0.01, posterior_sd=0.1,
                        seed=0, family="bimodal")
    t = generate_scenario(spec, ReferenceModel.oracle())
    s = t.sample_matrix("F1")[0]
    assert np.mean(s > 0) == pytest.approx(0.5, abs=0.1)
    assert np.all(np.abs(np.abs(s) - 1.0) < 0.6)
    with pytest.raises(ValueError):
        expected_ig_closed_form(spec, ReferenceModel.oracle())


def test_closed_form_values():
    assert expected_ig_closed_form(DEFAULT, ReferenceModel.oracle()) == pytest.approx(0.5 * math.log(5), abs=1e-12)
    assert expected_ig_closed_form(DEFAULT, ReferenceModel.oracle()) == pytest.approx(0.80472, abs=1e-5)
    assert expected_ig_closed_form(DEFAULT, ReferenceModel.marginal_only()) == 0.0
    assert expected_ig_closed_form(DEFAULT, ReferenceModel.shuffled()) == pytest.approx(-3.195, abs=1e-3)
    assert expected_ig_closed_form(DEFAULT, ReferenceModel.overconfident(0.2)) == pytest.approx(-9.59, abs=5e-3)
    assert expected_ig_closed_form(DEFAULT, ReferenceModel.shifted(1.0)) == pytest.approx(
        0.5 * math.log(5) - 2.0, abs=1e-12)


@pytest.mark.parametrize("model", [
    ReferenceModel.oracle(), ReferenceModel.marginal_only(), ReferenceModel.shuffled(),
    ReferenceModel.overconfident(0.5), ReferenceModel.shifted(0.7),
])
def test_closed_form_matches_monte_carlo(model):
    """Exact-density Monte Carlo of the expected log score difference."""
    rng = np.random.default_rng(0)
    n = 400_000
    var_x, var = 1.0, 0.25
    x = rng.normal(0, 1, n)
    y = x + 0.5 * rng.normal(size=n)
    center, v = {
        "oracle": (x, var),
        "marginal_only": (np.zeros(n), var_x + var),
        "shuffled": (rng.normal(0, 1, n), var),
        "overconfident": (x, (model.width_factor ** 2) * var),
        "shifted": (x + model.offset, var),
    }[model.kind]
    lp = -0.5 * np.log(2 * np.pi * v) - (y - center) ** 2 / (2 * v)
    lr = -0.5 * np.log(2 * np.pi * (var_x + var)) - y ** 2 / (2 * (var_x + var))
    d = lp - lr
    assert d.mean() == pytest.approx(expected_ig_closed_form(DEFAULT, model),
                                     abs=4 * d.std() / math.sqrt(n))


def test_spec_validation():
    with pytest.raises(ValueError):
        ScenarioSpec(n_cells=0)
    with pytest.raises(ValueError):
        ScenarioSpec(posterior_sd=0)
    with pytest.raises(ValueError):
        ReferenceModel.overconfident(0.0)
    with pytest.raises(ValueError):
        ReferenceModel("nope")
