import numpy as np
import pytest

from sensan import (build_chart, coord_functional, coordinate_gradient,
                    custom_chart, flat_normal_chart, hyperbolic_normal_chart,
                    information_matrix, numerical_information_matrix,
                    sphere_chart, surface_sensitivity)
from sensan.errors import ConfigError, SensanError

SPHERE = sphere_chart()
PSI_U = coord_functional("u")
NU_V = coord_functional("v")


def test_sphere_information_at_the_barycenter():
    I = information_matrix(SPHERE, (1.0 / 3.0, 1.0 / 3.0))
    np.testing.assert_allclose(I, [[6.0, 3.0], [3.0, 6.0]], atol=1e-12)


def test_sphere_coordinate_sensitivity_closed_form():
    """The inverse multinomial information is the covariance, so the
    sensitivity of u to v is Cov(u, v) = -uv on the whole octant."""
    rng = np.random.default_rng(17)
    for _ in range(25):
        u = rng.uniform(0.05, 0.9)
        v = rng.uniform(0.05, 0.95 - u)
        got = surface_sensitivity(SPHERE, PSI_U, NU_V, (u, v))
        assert abs(got + u * v) < 1e-12


def test_sphere_gradient_of_u():
    u, v = 0.3, 0.25
    a, b = coordinate_gradient(SPHERE, PSI_U, (u, v))
    # I^-1 e_1 is the first covariance column (u(1-u), -uv)
    assert abs(a - u * (1.0 - u)) < 1e-12
    assert abs(b + u * v) < 1e-12


def test_gradient_reconstructs_partials():
    """<grad f, x_u> = f_u and <grad f, x_v> = f_v by definition of the
    gradient; the check runs through the embedding scores."""
    rng = np.random.default_rng(5)
    for _ in range(10):
        u = rng.uniform(0.1, 0.8)
        v = rng.uniform(0.1, 0.9 - u)
        f = coord_functional("u*v + u**2 - 2*v")
        a, b = coordinate_gradient(SPHERE, f, (u, v))
        xu, xv = SPHERE.scores(u, v)
        grad = a * xu + b * xv
        assert abs(grad @ xu - f.fu(u, v)) < 1e-10
        assert abs(grad @ xv - f.fv(u, v)) < 1e-10


def test_numerical_information_matches_analytic():
    for at in ((1.0 / 3.0, 1.0 / 3.0), (0.2, 0.5), (0.6, 0.15)):
        num = numerical_information_matrix(SPHERE, at)
        ana = information_matrix(SPHERE, at)
        assert np.max(np.abs(num - ana)) < 1e-6


def test_numerical_mode_sensitivity():
    got = surface_sensitivity(SPHERE, PSI_U, NU_V, (0.4, 0.3), mode="numerical")
    assert abs(got + 0.12) < 1e-7


def test_flat_chart_is_euclidean():
    flat = flat_normal_chart()
    assert np.array_equal(information_matrix(flat, (0.0, 0.0)), np.eye(2))
    assert surface_sensitivity(flat, PSI_U, NU_V, (3.0, -2.0)) == 0.0
    assert surface_sensitivity(flat, PSI_U, PSI_U, (3.0, -2.0)) == 1.0


def test_hyperbolic_chart_information():
    hyp = hyperbolic_normal_chart()
    I = information_matrix(hyp, (0.0, 2.0))
    np.testing.assert_allclose(I, [[0.25, 0.0], [0.0, 0.5]], atol=1e-14)
    # orthogonal coordinates: mean carries no sensitivity to sd
    assert surface_sensitivity(hyp, PSI_U, NU_V, (1.0, 0.5)) == 0.0


def test_point_domain_validation():
    with pytest.raises(SensanError, match="outside the open domain"):
        information_matrix(SPHERE, (0.7, 0.4))
    with pytest.raises(SensanError, match="outside the open domain"):
        information_matrix(SPHERE, (0.0, 0.5))
    with pytest.raises(SensanError, match="HyperbolicNormal"):
        information_matrix(hyperbolic_normal_chart(), (0.0, -1.0))


def test_custom_chart_validation():
    bad = custom_chart(lambda u, v: np.array([[1.0, 2.0], [2.0, 1.0]]),
                       bounds=((0.0, 1.0), (0.0, 1.0)))
    with pytest.raises(SensanError, match="degenerate information matrix"):
        information_matrix(bad, (0.5, 0.5))
    asym = custom_chart(lambda u, v: np.array([[1.0, 0.5], [0.2, 1.0]]),
                        bounds=((0.0, 1.0), (0.0, 1.0)))
    with pytest.raises(SensanError, match="must be symmetric"):
        information_matrix(asym, (0.5, 0.5))


def test_chart_without_embedding_cannot_difference():
    flat = flat_normal_chart()
    with pytest.raises(SensanError, match="no embedding to difference"):
        numerical_information_matrix(flat, (0.0, 0.0))


def test_score_cross_check_catches_wrong_information():
    broken = Chart_with_wrong_info()
    with pytest.raises(SensanError, match="disagrees with the embedding scores"):
        information_matrix(broken, (0.3, 0.3))


def Chart_with_wrong_info():
    base = sphere_chart()
    from sensan.surfaces import Chart

    return Chart(kind=base.kind, bounds=base.bounds,
                 info=lambda u, v: np.array(base.info(u, v)) * 1.001,
                 scores=base.scores, embedding=base.embedding,
                 inside=base.inside)


def test_build_chart():
    assert build_chart("sphere").kind == "SphereMultinomial"
    assert build_chart("flat").kind == "FlatNormal"
    assert build_chart("hyperbolic").kind == "HyperbolicNormal"
    with pytest.raises(ConfigError, match="config key 'chart'"):
        build_chart("torus")


def test_unknown_mode():
    with pytest.raises(SensanError, match="unknown surface sensitivity mode"):
        surface_sensitivity(SPHERE, PSI_U, NU_V, (0.3, 0.3), mode="exact")


def test_coord_functional_partials():
    f = coord_functional("u**2*v - 3*v")
    assert f.fu(2.0, 1.0) == pytest.approx(4.0)
    assert f.fv(2.0, 1.0) == pytest.approx(1.0)
