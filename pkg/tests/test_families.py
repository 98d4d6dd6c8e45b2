import numpy as np
import pytest
from scipy import stats

from sensan import Grid, GridDensity, integrate, density_at
from sensan.errors import ConfigError, SensanError
from sensan.families import (beta, build_family, linear, quadratic,
                             truncated_normal, uniform)

G = Grid.line(0.0, 1.0, 801)


def test_uniform():
    U = uniform(G)
    assert abs(density_at(U, 0.42) - 1.0) < 1e-12


def test_beta_matches_scipy_density():
    P = beta(G, 2.0, 5.0)
    xs = np.array([0.1, 0.2, 0.5, 0.8])
    for x in xs:
        assert abs(density_at(P, x) - stats.beta.pdf(x, 2, 5)) < 1e-6


def test_beta_rescales_onto_the_grid_interval():
    g = Grid.line(-1.0, 3.0, 801)
    P = beta(g, 2.0, 2.0)
    # mode of Beta(2, 2) maps to the midpoint of the interval
    assert abs(density_at(P, 1.0) - 1.5 / 4.0) < 1e-6


def test_beta_rejects_singular_shapes():
    with pytest.raises(SensanError, match="alpha, beta >= 1"):
        beta(G, 0.5, 2.0)


def test_truncated_normal_density():
    g = Grid.line(-1.0, 1.0, 801)
    P = truncated_normal(g, 0.0, 1.0)
    want = stats.truncnorm.pdf(0.3, -1.0, 1.0)
    assert abs(density_at(P, 0.3) - want) < 1e-6
    with pytest.raises(SensanError, match="sd > 0"):
        truncated_normal(g, 0.0, 0.0)


def test_linear_tilt():
    P = linear(G, 0.5, 1.0)
    assert abs(density_at(P, 0.0) - 0.5) < 1e-9
    assert abs(density_at(P, 1.0) - 1.5) < 1e-9
    with pytest.raises(SensanError, match="not positive on the grid"):
        linear(G, 0.0, 1.0)


def test_quadratic_bowl():
    P = quadratic(G, 0.4, 2.4, 0.5)
    # Z = 0.4 + 2.4/12 = 0.6
    assert abs(density_at(P, 0.5) - 0.4 / 0.6) < 1e-9
    assert abs(density_at(P, 0.0) - 1.0 / 0.6) < 1e-9
    with pytest.raises(SensanError, match="not positive on the grid"):
        quadratic(G, -0.1, 2.4, 0.5)


def test_build_family_dispatch():
    P = build_family({"family": "beta", "alpha": 2, "beta": 5}, G)
    assert abs(integrate(lambda x: x, P) - 2.0 / 7.0) < 1e-9


def test_build_family_config_errors():
    with pytest.raises(ConfigError, match="config key 'family'"):
        build_family({"family": "cauchy"}, G)
    with pytest.raises(ConfigError, match="config key 'sd'"):
        build_family({"family": "truncated_normal", "mean": 0.0}, G)
