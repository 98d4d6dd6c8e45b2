"""Plug-in sensitivity estimators and the Monte Carlo harness.

The population sensitivity <psi~, A* nu~>_P has a sample analog: replace
influence functions by estimated ones (built from the sample, with
estimated centering parameters), the measure by the empirical measure,
and the ratio dP/dQ by either a known ratio or a kernel density estimate
divided by the policy density. All three metric paths run the same
formula

    Pn{ psi~ (nu~ - Pn(nu~ r)/Pn(r)) r },

with r identically one on the information path, where it collapses to
Pn(psi~ nu~); the information and unit-known-ratio runs agree bit for
bit because they execute the same code on the same arrays.

Replication seeds derive from (master_seed, n, rep), so results are
reproducible no matter how replications are scheduled; reductions use
numpy pairwise summation over rep-ordered arrays.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import SensanError
from .functionals import Functional, evaluate
from .model_space import (Grid, GridDensity, LikelihoodRatio, Sample,
                          _cumtrapz, _simpson_reduce, density_at, kde_fit)

__all__ = [
    "RatioInformation",
    "RatioKnown",
    "RatioKde",
    "PluginConfig",
    "McResult",
    "Multinomial",
    "estimated_influence",
    "efficient_estimate",
    "plugin_sensitivity",
    "sample_from",
    "mc_consistency",
    "mc_joint_asymptotics",
    "mc_joint_multinomial",
]


# --- ratio estimators ---------------------------------------------------------------

@dataclass(frozen=True)
class RatioInformation:
    """Information metric: the ratio is identically one."""


@dataclass(frozen=True)
class RatioKnown:
    """Known likelihood ratio dP/dQ, interpolated from its grid values."""

    ratio: LikelihoodRatio


@dataclass(frozen=True)
class RatioKde:
    """Estimated ratio: kernel density estimate of P over the known policy
    density, clamped to the usual bounds."""

    Q: GridDensity
    bandwidth: float | None = None
    clamp: tuple[float, float] = (1e-3, 1e3)

    def __post_init__(self):
        lo, hi = self.clamp
        if lo <= 0.0 or hi <= lo:
            raise SensanError("ratio clamp bounds must be positive and ordered")


def _interp_values(grid: Grid, values: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of node values at sample points."""
    if grid.ndim == 1:
        return np.interp(pts[:, 0], grid.axes[0].nodes, values)
    out = np.empty(len(pts))
    for k, p in enumerate(pts):
        out[k] = _interp_one(grid, values, p)
    return out


def _interp_one(grid: Grid, values: np.ndarray, p) -> float:
    idx = []
    wts = []
    for a, ax in enumerate(grid.axes):
        t = min(max(float(p[a]), ax.lo), ax.hi)
        i = min(int((t - ax.lo) / ax.spacing), ax.n - 2)
        idx.append(i)
        wts.append((t - ax.nodes[i]) / ax.spacing)
    acc = 0.0
    for corner in range(1 << grid.ndim):
        w = 1.0
        pos = []
        for a in range(grid.ndim):
            if corner >> a & 1:
                w *= wts[a]
                pos.append(idx[a] + 1)
            else:
                w *= 1.0 - wts[a]
                pos.append(idx[a])
        acc += w * float(values[tuple(pos)])
    return acc


def _ratio_at_points(estimator, sample: Sample) -> np.ndarray:
    if isinstance(estimator, RatioInformation):
        return np.ones(sample.n)
    if isinstance(estimator, RatioKnown):
        lr = estimator.ratio
        return _interp_values(lr.grid, lr.ratio_values, sample.points)
    if isinstance(estimator, RatioKde):
        grid = estimator.Q.grid
        phat = kde_fit(sample, grid, estimator.bandwidth)
        num = _interp_values(grid, phat.values, sample.points)
        den = _interp_values(grid, estimator.Q.values, sample.points)
        lo, hi = estimator.clamp
        return np.clip(num / np.maximum(den, 1e-300), lo, hi)
    raise SensanError(f"unknown ratio estimator {type(estimator).__name__}")


# --- estimated influence functions and efficient estimators -------------------------

def efficient_estimate(F: Functional, sample: Sample) -> float:
    """The bundled efficient estimator of the functional: sample mean of
    rho, biased sample variance, or the empirical quantile."""
    x = sample.coord(F.axis if F.kind != "moment" else 0)
    if F.kind == "moment":
        cols = tuple(sample.points[:, a] for a in range(sample.ndim))
        return float(np.mean(np.broadcast_to(
            np.asarray(F.rho(*cols), dtype=float), (sample.n,))))
    if F.kind == "variance":
        return float(np.mean((x - np.mean(x)) ** 2))
    if F.kind == "quantile":
        k = max(int(math.ceil(F.tau * sample.n)), 1)
        return float(np.partition(x, k - 1)[k - 1])
    raise SensanError(f"no bundled efficient estimator for kind '{F.kind}'")


def estimated_influence(F: Functional, sample: Sample,
                        grid: Grid | None = None):
    """Influence function with estimated centering parameters, as a
    callable on sample point arrays.

    The quantile influence needs the density at the estimated quantile;
    that comes from a kernel density estimate on the sample's own range.
    """
    if F.kind == "moment":
        def at(pts):
            cols = tuple(pts[:, a] for a in range(pts.shape[1]))
            v = np.broadcast_to(np.asarray(F.rho(*cols), dtype=float),
                                (len(pts),))
            return v - np.mean(v)
        return at
    if F.kind == "variance":
        def at(pts, axis=F.axis):
            x = pts[:, axis]
            m = np.mean(x)
            return (x - m) ** 2 - np.mean((x - m) ** 2)
        return at
    if F.kind == "quantile":
        theta = efficient_estimate(F, sample)
        if grid is None:
            lo, hi = sample.lo[F.axis], sample.hi[F.axis]
            grid = Grid.line(float(lo), float(hi), 801)
        dens_hat = kde_fit(
            Sample(sample.points[:, F.axis:F.axis + 1],
                   (sample.lo[F.axis],), (sample.hi[F.axis],)), grid)
        f = density_at(dens_hat, (theta,))
        if f <= 1e-6:
            raise SensanError(
                "quantile influence unstable: estimated density at the "
                f"quantile is {f:.3g}")
        def at(pts, axis=F.axis, theta=theta, f=f, tau=F.tau):
            return (tau - (pts[:, axis] <= theta)) / f
        return at
    raise SensanError(f"no estimated influence for kind '{F.kind}'")


# --- the plug-in estimator ----------------------------------------------------------

@dataclass(frozen=True)
class PluginConfig:
    """Everything the plug-in sensitivity estimator consumes."""

    psi_influence: object
    nu_influence: object
    ratio_estimator: object
    sample: Sample

    def __post_init__(self):
        if self.sample.n == 0:
            raise SensanError("plugin estimation needs a nonempty sample")


def plugin_sensitivity(config: PluginConfig) -> float:
    """Empirical analog of the policy sensitivity."""
    pts = config.sample.points
    psi_v = np.asarray(config.psi_influence(pts), dtype=float)
    nu_v = np.asarray(config.nu_influence(pts), dtype=float)
    for name, v in (("psi", psi_v), ("nu", nu_v)):
        if not np.all(np.isfinite(v)):
            i = int(np.argmin(np.isfinite(v)))
            raise SensanError(
                f"non-finite {name} influence value at sample point "
                f"{pts[i].tolist()} (index {i})")
    r = _ratio_at_points(config.ratio_estimator, config.sample)
    # Pn{psi (nu - Pn(nu r)/Pn r) r}, expanded so the centering correction
    # enters as a product of means. Estimated influences are already
    # empirically centered, so on the information path the correction is
    # O(eps^2) and the result equals Pn(psi nu) to the last bit.
    cross = np.mean(psi_v * nu_v * r)
    return float(cross - np.mean(psi_v * r) * np.mean(nu_v * r) / np.mean(r))


# --- sampling from grid densities ---------------------------------------------------

def sample_from(P: GridDensity, n: int, rng: np.random.Generator) -> Sample:
    """Draw n points: inverse-CDF on the grid in one dimension, X then
    Y | X in two."""
    grid = P.grid
    if grid.ndim == 1:
        nodes = grid.axes[0].nodes
        F = _cumtrapz(nodes, P.values)
        F = F / F[-1]
        x = np.interp(rng.random(n), F, nodes)
        return Sample(x.reshape(-1, 1), (grid.axes[0].lo,), (grid.axes[0].hi,))
    if grid.ndim != 2:
        raise SensanError("sampling supports one- and two-dimensional grids")
    xnodes, ynodes = grid.axes[0].nodes, grid.axes[1].nodes
    marg = _simpson_reduce(grid, P.values, 1)
    Fx = _cumtrapz(xnodes, marg)
    Fx = Fx / Fx[-1]
    x = np.interp(rng.random(n), Fx, xnodes)
    # conditional rows by linear interpolation of the joint in x
    i = np.minimum(((x - grid.axes[0].lo) / grid.axes[0].spacing).astype(int),
                   grid.axes[0].n - 2)
    w = ((x - xnodes[i]) / grid.axes[0].spacing)[:, None]
    rows = (1.0 - w) * P.values[i, :] + w * P.values[i + 1, :]
    dy = grid.axes[1].spacing
    Fy = np.concatenate(
        [np.zeros((n, 1)),
         np.cumsum(0.5 * dy * (rows[:, 1:] + rows[:, :-1]), axis=1)], axis=1)
    Fy = Fy / Fy[:, -1:]
    u = rng.random(n)
    y = np.empty(n)
    for k in range(n):
        y[k] = np.interp(u[k], Fy[k], ynodes)
    lo = tuple(ax.lo for ax in grid.axes)
    hi = tuple(ax.hi for ax in grid.axes)
    return Sample(np.column_stack([x, y]), lo, hi)


# --- Monte Carlo results ------------------------------------------------------------

@dataclass(frozen=True)
class McResult:
    """Replication table plus the summaries the theory predicts."""

    kind: str                      # "consistency" | "joint"
    n_grid: tuple[int, ...]
    reps: int
    seed: int
    population: float | None
    estimates: dict
    rmse: dict
    empirical_cov: dict
    lambda_hat: float | None = None
    delta_hat: float | None = None

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if self.kind == "consistency":
                w.writerow(["n", "rep", "estimate"])
                for n in self.n_grid:
                    for rep, est in enumerate(self.estimates[n]):
                        w.writerow([n, rep, repr(float(est))])
            else:
                w.writerow(["n", "rep", "psi_hat", "nu_hat"])
                for n in self.n_grid:
                    for rep, (a, b) in enumerate(self.estimates[n]):
                        w.writerow([n, rep, repr(float(a)), repr(float(b))])

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n_grid": list(self.n_grid),
            "reps": self.reps,
            "seed": self.seed,
            "population": self.population,
            "rmse": {str(n): v for n, v in self.rmse.items()},
            "covariance": {str(n): np.asarray(c).tolist()
                           for n, c in self.empirical_cov.items()},
            "lambda_hat": self.lambda_hat,
            "delta_hat": self.delta_hat,
        }

    def to_json(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)
            fh.write("\n")


def _rep_rng(master_seed: int, n: int, rep: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((master_seed, n, rep)))


def mc_consistency(P: GridDensity, psi: Functional, nu: Functional,
                   ratio_estimator, n_grid, reps: int, master_seed: int,
                   population: float) -> McResult:
    """RMSE of the plug-in sensitivity across sample sizes.

    The population value is computed once by the caller (the engine
    oracle) and passed in, so the harness never re-derives it per run.
    """
    n_grid = tuple(int(n) for n in n_grid)
    if len(n_grid) < 3 or any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise SensanError("n_grid must be at least three increasing sizes")
    estimates: dict = {}
    rmse: dict = {}
    for n in n_grid:
        vals = np.empty(reps)
        for rep in range(reps):
            rng = _rep_rng(master_seed, n, rep)
            sample = sample_from(P, n, rng)
            cfg = PluginConfig(
                psi_influence=estimated_influence(psi, sample, P.grid),
                nu_influence=estimated_influence(nu, sample, P.grid),
                ratio_estimator=ratio_estimator,
                sample=sample)
            vals[rep] = plugin_sensitivity(cfg)
        estimates[n] = vals
        rmse[n] = float(np.sqrt(np.mean((vals - population) ** 2)))
    return McResult(kind="consistency", n_grid=n_grid, reps=reps,
                    seed=master_seed, population=population,
                    estimates=estimates, rmse=rmse, empirical_cov={})


def _joint_summaries(pairs: np.ndarray, n: int, psi0: float, nu0: float):
    errors = math.sqrt(n) * (pairs - np.array([psi0, nu0]))
    cov = np.cov(errors.T, bias=True)
    lam = float(cov[0, 1] / cov[1, 1])
    delta = float(cov[0, 1] ** 2 / (cov[0, 0] * cov[1, 1]))
    return cov, lam, delta


def mc_joint_asymptotics(P: GridDensity, psi: Functional, nu: Functional,
                         n: int, reps: int, master_seed: int) -> McResult:
    """Joint distribution of the efficient estimators: replicate, scale
    errors by sqrt(n), and report the empirical covariance with the
    sensitivity ratios it implies."""
    psi0 = evaluate(psi, P)
    nu0 = evaluate(nu, P)
    pairs = np.empty((reps, 2))
    for rep in range(reps):
        rng = _rep_rng(master_seed, n, rep)
        sample = sample_from(P, n, rng)
        pairs[rep, 0] = efficient_estimate(psi, sample)
        pairs[rep, 1] = efficient_estimate(nu, sample)
    cov, lam, delta = _joint_summaries(pairs, n, psi0, nu0)
    return McResult(kind="joint", n_grid=(n,), reps=reps, seed=master_seed,
                    population=None, estimates={n: pairs}, rmse={},
                    empirical_cov={n: cov}, lambda_hat=lam, delta_hat=delta)


# --- discrete three-cell model ------------------------------------------------------

@dataclass(frozen=True)
class Multinomial:
    """Finitely supported model; every integral is a finite sum, which
    makes it the exact cross-check for the sphere chart."""

    probs: tuple[float, ...]

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if np.any(p <= 0.0) or abs(float(np.sum(p)) - 1.0) > 1e-12:
            raise SensanError("cell probabilities must be positive and sum "
                              "to one")

    def cell_influence(self, i: int) -> np.ndarray:
        e = np.full(len(self.probs), -float(self.probs[i]))
        e[i] += 1.0
        return e

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        return float(np.sum(np.asarray(self.probs) * u * v))

    def cell_sensitivity(self, i: int, j: int) -> float:
        """Information sensitivity of cell probability i to cell
        probability j."""
        return self.inner(self.cell_influence(i), self.cell_influence(j))


def mc_joint_multinomial(model: Multinomial, i: int, j: int, n: int,
                         reps: int, master_seed: int) -> McResult:
    """Joint asymptotics of two cell frequencies."""
    p = np.asarray(model.probs, dtype=float)
    pairs = np.empty((reps, 2))
    for rep in range(reps):
        rng = _rep_rng(master_seed, n, rep)
        counts = rng.multinomial(n, p)
        pairs[rep] = counts[i] / n, counts[j] / n
    cov, lam, delta = _joint_summaries(pairs, n, float(p[i]), float(p[j]))
    return McResult(kind="joint", n_grid=(n,), reps=reps, seed=master_seed,
                    population=None, estimates={n: pairs}, rmse={},
                    empirical_cov={n: cov}, lambda_hat=lam, delta_hat=delta)
