import numpy as np
import pytest

from sensan import (Grid, GridDensity, MollifierSchedule, composite, evaluate,
                    influence, influence_analytic, influence_numerical,
                    inner_p, moment, parse_functional, quantile_functional,
                    variance)
from sensan.errors import ConfigError, SensanError
from sensan.families import beta, uniform
from sensan.functionals import default_schedule
from sensan.model_space import grid_quad

G = Grid.line(0.0, 1.0, 801)
U = uniform(G)
B25 = beta(G, 2.0, 5.0)


def test_moment_values():
    # E X^2 under Beta(2, 5) is 3/28
    F = moment(lambda x: x**2)
    assert abs(evaluate(F, B25) - 3.0 / 28.0) < 1e-10
    assert abs(evaluate(F, U) - 1.0 / 3.0) < 1e-12


def test_variance_value():
    F = variance()
    assert abs(evaluate(F, U) - 1.0 / 12.0) < 1e-12


def test_quantile_value():
    F = quantile_functional(0.5)
    assert abs(evaluate(F, U) - 0.5) < 1e-12


def test_composite_evaluator():
    F = composite(lambda P: float(np.max(P.values)), label="sup")
    assert abs(evaluate(F, U) - 1.0) < 1e-12


def test_functional_construction_errors():
    with pytest.raises(SensanError, match="callable rho"):
        moment(None)
    with pytest.raises(SensanError, match="strictly inside"):
        quantile_functional(1.0)
    with pytest.raises(SensanError, match="needs an evaluator"):
        composite(None)


def test_moment_influence_is_centered_rho():
    v = influence_analytic(moment(lambda x: x), U)
    np.testing.assert_allclose(v.values, G.axes[0].nodes - 0.5, atol=1e-12)
    assert abs(inner_p(v, v) - 1.0 / 12.0) < 1e-12


def test_variance_influence():
    v = influence_analytic(variance(), U)
    x = G.axes[0].nodes
    np.testing.assert_allclose(v.values, (x - 0.5) ** 2 - 1.0 / 12.0, atol=1e-10)


def test_quantile_influence_structure():
    """Median influence on Uniform[0, 1]: (tau - 1[x <= q]) / f(q), so the
    values are -0.5 left of the median and 0.5 right of it, with squared
    L2(P) norm tau (1 - tau) / f^2 = 0.25."""
    v = influence_analytic(quantile_functional(0.5), U)
    assert abs(v.values[100] + 0.5) < 1e-9
    assert abs(v.values[700] - 0.5) < 1e-9
    assert abs(v.mean_under_base()) < 1e-12
    assert abs(inner_p(v, v) - 0.25) < 1e-9
    assert len(v.steps) == 1


def test_quantile_influence_unstable_at_vanishing_density():
    P = GridDensity.from_callable(G, lambda x: np.abs(x - 0.5))
    with pytest.raises(SensanError, match="quantile influence unstable"):
        influence_analytic(quantile_functional(0.5), P)


def test_no_analytic_influence_for_composite():
    F = composite(lambda P: float(np.max(P.values)))
    with pytest.raises(SensanError, match="no analytic influence for kind 'composite'"):
        influence_analytic(F, U)


def test_influence_dispatch_prefers_analytic():
    a = influence(moment(lambda x: x), U)
    b = influence_analytic(moment(lambda x: x), U)
    np.testing.assert_array_equal(a.values, b.values)


def test_numerical_influence_of_the_mean():
    """Mixtures are exactly linear in t for a moment functional, so the
    numerical route reproduces the centered rho at interior nodes to
    rounding."""
    g = Grid.line(0.0, 1.0, 201)
    P = uniform(g)
    v = influence_numerical(moment(lambda x: x), P)
    x = g.axes[0].nodes
    i = np.searchsorted(x, 0.7)
    assert abs(v.values[i] - 0.2) < 1e-10


def test_numerical_influence_of_the_variance_matches_analytic():
    g = Grid.line(0.0, 1.0, 201)
    P = uniform(g)
    num = influence_numerical(variance(), P)
    ana = influence_analytic(variance(), P)
    x = g.axes[0].nodes
    interior = (x > 0.15) & (x < 0.85)
    err = np.max(np.abs(num.values[interior] - ana.values[interior]))
    assert err < 1e-2


def test_influence_falls_back_to_numerical_for_composite():
    # a composite mean should recover the centered coordinate numerically
    g = Grid.line(0.0, 1.0, 201)
    P = uniform(g)
    F = composite(lambda Q: float(grid_quad(Q.grid, Q.smooth * Q.grid.axes[0].nodes)))
    v = influence(F, P)
    x = g.axes[0].nodes
    interior = (x > 0.25) & (x < 0.75)
    assert np.max(np.abs(v.values[interior] - (x[interior] - 0.5))) < 1e-8


def test_mollifier_schedule_validation():
    with pytest.raises(SensanError, match="positive sigma0"):
        MollifierSchedule(sigma0=0.0)
    with pytest.raises(SensanError, match="at least 3 levels"):
        MollifierSchedule(sigma0=0.1, levels=2)
    sched = MollifierSchedule(sigma0=0.01)
    with pytest.raises(SensanError, match="below four grid spacings"):
        sched.validate_for(Grid.line(0.0, 1.0, 201))


def test_default_schedule_scales_with_the_grid():
    sched = default_schedule(Grid.line(0.0, 1.0, 201))
    assert sched.sigma0 == pytest.approx(0.08)
    sched = default_schedule(Grid.line(0.0, 1.0, 801))
    assert sched.sigma0 == pytest.approx(0.05)


def test_mollifier_divergence_is_reported():
    """The sup functional has no L2 influence function; its finite
    difference estimates blow up as the bump narrows and the level
    diagnostic must refuse to extrapolate."""
    g = Grid.line(0.0, 1.0, 201)
    P = uniform(g)
    F = composite(lambda Q: float(np.max(Q.values)))
    with pytest.raises(SensanError, match="mollifier not converged"):
        influence_numerical(F, P)


def test_parse_functional():
    F = parse_functional({"kind": "moment", "rho": "x**2"}, 1)
    assert abs(evaluate(F, B25) - 3.0 / 28.0) < 1e-10
    F = parse_functional({"kind": "quantile", "tau": 0.25}, 1)
    assert F.tau == 0.25
    F = parse_functional({"kind": "variance", "axis": 1}, 2)
    assert F.axis == 1


def test_parse_functional_config_errors():
    with pytest.raises(ConfigError, match="config key 'rho'"):
        parse_functional({"kind": "moment"}, 1)
    with pytest.raises(ConfigError, match="config key 'tau'"):
        parse_functional({"kind": "quantile"}, 1)
    with pytest.raises(ConfigError, match="config key 'kind'"):
        parse_functional({"kind": "entropy"}, 1)
