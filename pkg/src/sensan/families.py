"""Named density families used by the CLI and the bundled experiments.

Each builder returns a normalized GridDensity on an explicit grid. Shapes
are evaluated pointwise and renormalized by quadrature, so families with
awkward normalizing constants (truncated normal) need no special casing.
Unbounded supports must be truncated by the caller; the truncation error
is the mass outside the window (about 2e-9 for six standard deviations of
a normal), which is far below every tolerance used here.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError, SensanError
from .model_space import Grid, GridDensity

__all__ = ["uniform", "beta", "truncated_normal", "linear", "quadratic",
           "build_family", "FAMILY_KEYS"]


def uniform(grid: Grid) -> GridDensity:
    return GridDensity.from_callable(grid, lambda *c: np.ones_like(c[0]))


def beta(grid: Grid, alpha: float, beta_: float) -> GridDensity:
    """Beta(alpha, beta) rescaled onto the (1-d) grid interval.

    Shape parameters below one put an integrable singularity at an
    endpoint, which a finite grid cannot represent, so we require >= 1.
    """
    if alpha < 1.0 or beta_ < 1.0:
        raise SensanError("beta family needs alpha, beta >= 1 on a grid")
    ax = grid.axes[0]
    span = ax.hi - ax.lo

    def shape(x, *rest):
        u = np.clip((x - ax.lo) / span, 0.0, 1.0)
        return u ** (alpha - 1.0) * (1.0 - u) ** (beta_ - 1.0)

    return GridDensity.from_callable(grid, shape)


def truncated_normal(grid: Grid, mean: float, sd: float) -> GridDensity:
    if sd <= 0.0:
        raise SensanError("truncated normal needs sd > 0")

    def shape(x, *rest):
        z = (x - mean) / sd
        return np.exp(-0.5 * z * z)

    return GridDensity.from_callable(grid, shape)


def linear(grid: Grid, intercept: float, slope: float) -> GridDensity:
    """Density proportional to intercept + slope * x, for example the
    tilt 0.5 + x on [0, 1]."""

    def shape(x, *rest):
        v = intercept + slope * x
        if np.any(v <= 0.0):
            raise SensanError("linear family not positive on the grid")
        return v

    return GridDensity.from_callable(grid, shape)


def quadratic(grid: Grid, offset: float, curvature: float, center: float) -> GridDensity:
    """Density proportional to offset + curvature * (x - center)^2."""

    def shape(x, *rest):
        v = offset + curvature * (x - center) ** 2
        if np.any(v <= 0.0):
            raise SensanError("quadratic family not positive on the grid")
        return v

    return GridDensity.from_callable(grid, shape)


FAMILY_KEYS = {
    "uniform": (),
    "beta": ("alpha", "beta"),
    "truncated_normal": ("mean", "sd"),
    "linear": ("intercept", "slope"),
    "quadratic": ("offset", "curvature", "center"),
}


def build_family(spec: dict, grid: Grid) -> GridDensity:
    """Build a family density from a config mapping with a 'family' key."""
    name = spec.get("family")
    if name not in FAMILY_KEYS:
        raise ConfigError("family", f"unknown family {name!r}, "
                          f"expected one of {sorted(FAMILY_KEYS)}")
    kwargs = {}
    for key in FAMILY_KEYS[name]:
        if key not in spec:
            raise ConfigError(key, f"family '{name}' requires '{key}'")
        kwargs[key] = float(spec[key])
    if name == "uniform":
        return uniform(grid)
    if name == "beta":
        return beta(grid, kwargs["alpha"], kwargs["beta"])
    if name == "truncated_normal":
        return truncated_normal(grid, kwargs["mean"], kwargs["sd"])
    if name == "linear":
        return linear(grid, kwargs["intercept"], kwargs["slope"])
    return quadratic(grid, kwargs["offset"], kwargs["curvature"], kwargs["center"])
