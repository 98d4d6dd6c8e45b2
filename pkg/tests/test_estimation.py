import json

import numpy as np
import pytest

from sensan import (Grid, GridDensity, Multinomial, PluginConfig,
                    RatioInformation, RatioKde, RatioKnown, Sample,
                    efficient_estimate, estimated_influence,
                    information_metric, mc_consistency, mc_joint_asymptotics,
                    mc_joint_multinomial, moment, plugin_sensitivity,
                    quantile_functional, sample_from, sensitivity, variance)
from sensan.errors import SensanError
from sensan.families import linear, uniform
from sensan.model_space import likelihood_ratio

G = Grid.line(0.0, 1.0, 801)
U = uniform(G)
MEAN = moment(lambda x: x, label="mean")
MEDIAN = quantile_functional(0.5)


def _uniform_sample(n, seed):
    rng = np.random.default_rng(seed)
    return Sample(rng.random(n), (0.0,), (1.0,))


def test_efficient_estimates():
    s = Sample(np.array([0.1, 0.2, 0.3, 0.8]), (0.0,), (1.0,))
    assert efficient_estimate(MEAN, s) == pytest.approx(0.35)
    assert efficient_estimate(variance(), s) == pytest.approx(
        np.mean((s.coord(0) - 0.35) ** 2))
    assert efficient_estimate(MEDIAN, s) == 0.2


def test_estimated_moment_influence_is_centered():
    s = _uniform_sample(500, 2)
    at = estimated_influence(MEAN, s)
    v = at(s.points)
    assert abs(np.mean(v)) < 1e-15
    np.testing.assert_allclose(v, s.coord(0) - np.mean(s.coord(0)), atol=1e-12)


def test_estimated_quantile_influence_levels():
    s = _uniform_sample(4000, 3)
    at = estimated_influence(MEDIAN, s, G)
    v = at(s.points)
    levels = np.unique(v)
    assert len(levels) == 2
    # (tau - indicator) / f_hat with f_hat near 1 on Uniform[0, 1]
    assert abs(levels[0] + 0.5) < 0.1
    assert abs(levels[1] - 0.5) < 0.1


def test_estimated_quantile_influence_density_gate(monkeypatch):
    """The density estimate at the quantile is bounded below by the point's
    own kernel, phi(0) / (n b), so honest inputs cannot reach the guard;
    substitute a degenerate density estimate to see it fire."""
    valley = GridDensity.from_callable(
        G, lambda x: np.where(np.abs(x - 0.5) < 0.05, 1e-9, 1.0))
    monkeypatch.setattr("sensan.estimation.kde_fit", lambda *a, **k: valley)
    s = Sample(np.array([0.2, 0.5, 0.8]), (0.0,), (1.0,))
    with pytest.raises(SensanError, match="estimated density at the quantile"):
        estimated_influence(MEDIAN, s, G)


def test_plugin_information_path_is_a_plain_mean():
    """With unit ratio weights the plug-in collapses to Pn(psi nu); the
    centering correction is a square of an O(eps) mean and vanishes below
    rounding. Pairing the mean influence with itself therefore returns
    the biased sample variance exactly."""
    s = _uniform_sample(2000, 5)
    at = estimated_influence(MEAN, s)
    got = plugin_sensitivity(PluginConfig(at, at, RatioInformation(), s))
    x = s.coord(0)
    assert got == np.mean((x - np.mean(x)) ** 2)


def test_plugin_known_unit_ratio_is_bit_identical_to_information():
    s = _uniform_sample(2000, 6)
    at = estimated_influence(MEAN, s)
    nu = estimated_influence(MEDIAN, s, G)
    unit = RatioKnown(likelihood_ratio(U, U))
    a = plugin_sensitivity(PluginConfig(at, nu, RatioInformation(), s))
    b = plugin_sensitivity(PluginConfig(at, nu, unit, s))
    assert a == b


def test_plugin_estimates_the_population_sensitivity():
    rep = sensitivity(MEAN, MEDIAN, U, information_metric())
    s = _uniform_sample(100_000, 7)
    cfg = PluginConfig(estimated_influence(MEAN, s),
                       estimated_influence(MEDIAN, s, G),
                       RatioInformation(), s)
    assert abs(plugin_sensitivity(cfg) - rep.dpsi_dnu) < 0.01


def test_plugin_kde_ratio_runs_close_to_known():
    Q = linear(G, 0.5, 1.0)
    s = _uniform_sample(20_000, 8)
    psi_at = estimated_influence(MEAN, s)
    nu_at = estimated_influence(MEDIAN, s, G)
    known = plugin_sensitivity(
        PluginConfig(psi_at, nu_at, RatioKnown(likelihood_ratio(U, Q)), s))
    kde = plugin_sensitivity(PluginConfig(psi_at, nu_at, RatioKde(Q), s))
    assert abs(known - kde) < 0.02


def test_plugin_rejects_nonfinite_influences():
    s = _uniform_sample(50, 9)

    def bad(pts):
        v = np.zeros(len(pts))
        v[3] = np.nan
        return v

    cfg = PluginConfig(bad, estimated_influence(MEAN, s), RatioInformation(), s)
    with pytest.raises(SensanError, match=r"non-finite psi influence value.*index 3"):
        plugin_sensitivity(cfg)


def test_ratio_kde_clamp_validation():
    with pytest.raises(SensanError, match="clamp bounds"):
        RatioKde(U, clamp=(0.0, 1e3))


def test_sample_from_1d_matches_the_cdf():
    rng = np.random.default_rng(10)
    s = sample_from(linear(G, 0.5, 1.0), 40_000, rng)
    x = s.coord(0)
    # P(X <= 1/2) = 1/2 (1/2 + 1/4) = 3/8 under density 1/2 + x
    assert abs(np.mean(x <= 0.5) - 0.375) < 0.01
    assert s.lo == (0.0,) and s.hi == (1.0,)


def test_sample_from_2d_conditionals():
    g2 = Grid.box((0.0, 1.0), (0.0, 1.0), (101, 101))
    P = GridDensity.from_callable(g2, lambda x, y: 0.5 + x * y + 0.5 * y)
    rng = np.random.default_rng(11)
    s = sample_from(P, 30_000, rng)
    assert s.ndim == 2
    # E[Y] = int y (0.5 + x y + 0.5 y) = 7/12, the weight already integrating
    # to one
    assert abs(np.mean(s.coord(1)) - 7.0 / 12.0) < 0.01


def test_replication_is_deterministic():
    res1 = mc_joint_asymptotics(U, MEAN, variance(), 400, 50, 123)
    res2 = mc_joint_asymptotics(U, MEAN, variance(), 400, 50, 123)
    np.testing.assert_array_equal(res1.estimates[400], res2.estimates[400])
    res3 = mc_joint_asymptotics(U, MEAN, variance(), 400, 50, 124)
    assert not np.array_equal(res1.estimates[400], res3.estimates[400])


def test_mc_consistency_shrinks_rmse():
    rep = sensitivity(MEAN, MEDIAN, U, information_metric())
    res = mc_consistency(U, MEAN, MEDIAN, RatioInformation(),
                         (200, 800, 3200), 40, 31, rep.dpsi_dnu)
    assert res.rmse[3200] < res.rmse[200]
    assert set(res.estimates) == {200, 800, 3200}
    assert len(res.estimates[200]) == 40


def test_mc_consistency_validates_n_grid():
    for bad in ((500,), (500, 400, 600), (500, 500, 600)):
        with pytest.raises(SensanError, match="three increasing sizes"):
            mc_consistency(U, MEAN, MEDIAN, RatioInformation(), bad, 5, 0, 0.1)


def test_mc_result_serialization(tmp_path):
    res = mc_joint_asymptotics(U, MEAN, variance(), 300, 20, 77)
    d = res.to_json_dict()
    assert d["kind"] == "joint"
    assert d["seed"] == 77
    assert np.asarray(d["covariance"]["300"]).shape == (2, 2)
    path = tmp_path / "mc.json"
    res.to_json(str(path))
    assert json.loads(path.read_text())["reps"] == 20
    csv_path = tmp_path / "mc.csv"
    res.to_csv(str(csv_path))
    header = csv_path.read_text().splitlines()[0]
    assert header == "n,rep,psi_hat,nu_hat"


def test_multinomial_closed_forms():
    m = Multinomial((0.5, 0.3, 0.2))
    assert m.cell_sensitivity(0, 1) == pytest.approx(-0.15, abs=1e-15)
    assert m.cell_sensitivity(0, 0) == pytest.approx(0.25, abs=1e-15)
    assert m.cell_sensitivity(1, 1) == pytest.approx(0.21, abs=1e-15)
    np.testing.assert_allclose(m.cell_influence(0), [0.5, -0.5, -0.5])


def test_multinomial_validation():
    with pytest.raises(SensanError, match="positive and sum"):
        Multinomial((0.5, 0.5, 0.0))
    with pytest.raises(SensanError, match="positive and sum"):
        Multinomial((0.5, 0.4, 0.2))


def test_multinomial_joint_mc_recovers_the_covariance():
    m = Multinomial((0.5, 0.3, 0.2))
    res = mc_joint_multinomial(m, 0, 1, 1000, 400, 19)
    cov = res.empirical_cov[1000]
    assert abs(cov[0, 1] + 0.15) < 0.03
    assert abs(cov[0, 0] - 0.25) < 0.03
    assert res.lambda_hat == pytest.approx(cov[0, 1] / cov[1, 1])
