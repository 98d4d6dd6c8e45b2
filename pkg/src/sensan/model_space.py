"""Finite-dimensional stand-ins for a dominated statistical model.

Distributions are represented by density values on a regular rectangular
grid (1-d or 2-d) together with quadrature weights, so that every integral
in the package reduces to a weighted sum. Composite Simpson weights are
used when the node count along an axis is odd, trapezoid otherwise.

Densities produced by counterfactual perturbations along a quantile
gradient are piecewise smooth with a known jump location. Such densities
carry an explicit decomposition (a smooth part plus "cut terms" supported
on half-open boxes {x_axis <= location}) and every quadrature routine here
splits cells at the cut locations instead of integrating through the jump.
That keeps indicator integrands at Simpson-level accuracy, which several
downstream tolerances rely on.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SensanError

__all__ = [
    "Grid",
    "GridAxis",
    "CutTerm",
    "GridDensity",
    "Sample",
    "LikelihoodRatio",
    "integrate",
    "quantile",
    "density_at",
    "likelihood_ratio",
    "kde_fit",
]

_SQRT2PI = math.sqrt(2.0 * math.pi)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(np.asarray(a, dtype=float))
    a.setflags(write=False)
    return a


def _simpson_weights(lo: float, hi: float, n: int) -> np.ndarray:
    """Composite Simpson weights on n uniform nodes, trapezoid fallback
    when the interval count n-1 is odd (even n)."""
    h = (hi - lo) / (n - 1)
    if n % 2 == 1 and n >= 3:
        w = np.full(n, 2.0)
        w[1::2] = 4.0
        w[0] = w[-1] = 1.0
        return w * (h / 3.0)
    w = np.full(n, h)
    w[0] = w[-1] = h / 2.0
    return w


@dataclass(frozen=True)
class GridAxis:
    lo: float
    hi: float
    n: int
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / (self.n - 1)


@dataclass(frozen=True)
class Grid:
    """Regular rectangular grid with per-axis quadrature weights."""

    axes: tuple[GridAxis, ...]

    @staticmethod
    def _axis(lo: float, hi: float, n: int) -> GridAxis:
        if not (np.isfinite(lo) and np.isfinite(hi) and hi > lo):
            raise SensanError(f"invalid grid axis bounds [{lo}, {hi}]")
        if n < 3:
            raise SensanError("grid axis needs at least 3 nodes")
        nodes = np.linspace(lo, hi, n)
        dn = np.diff(nodes)
        if not np.allclose(dn, dn[0], rtol=1e-12, atol=0.0):
            raise SensanError("grid nodes not uniformly spaced")
        w = _simpson_weights(lo, hi, n)
        if np.any(w < 0.0) or abs(w.sum() - (hi - lo)) > 1e-12 * (hi - lo):
            raise SensanError("quadrature weights failed validation")
        return GridAxis(float(lo), float(hi), int(n), _readonly(nodes), _readonly(w))

    @classmethod
    def line(cls, lo: float, hi: float, n: int = 801) -> "Grid":
        return cls(axes=(cls._axis(lo, hi, n),))

    @classmethod
    def box(cls, xlim: tuple[float, float], ylim: tuple[float, float],
            n: tuple[int, int] = (201, 201)) -> "Grid":
        return cls(axes=(cls._axis(*xlim, n[0]), cls._axis(*ylim, n[1])))

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(ax.n for ax in self.axes)

    def mesh(self) -> tuple[np.ndarray, ...]:
        """Coordinate arrays broadcast to the full grid shape (ij indexing)."""
        return tuple(np.meshgrid(*(ax.nodes for ax in self.axes), indexing="ij"))

    def weight_tensor(self) -> np.ndarray:
        w = self.axes[0].weights
        for ax in self.axes[1:]:
            w = np.multiply.outer(w, ax.weights)
        return w

    def volume(self) -> float:
        out = 1.0
        for ax in self.axes:
            out *= ax.hi - ax.lo
        return out

    def same_as(self, other: "Grid") -> bool:
        return self.shape == other.shape and all(
            a.lo == b.lo and a.hi == b.hi for a, b in zip(self.axes, other.axes)
        )


# --- raw quadrature on node samples -------------------------------------------------

def _simpson_reduce(grid: Grid, samples: np.ndarray, axis: int) -> np.ndarray:
    w = grid.axes[axis].weights
    return np.tensordot(samples, w, axes=([axis], [0]))


def _below_reduce(grid: Grid, samples: np.ndarray, axis: int, q: float) -> np.ndarray:
    """Integrate samples along `axis` over [lo, min(q, hi)], splitting the
    cell that contains q. Simpson on the even-length prefix, a trapezoid
    cell when the prefix length is odd, linear interpolation inside the
    partial cell. Exact consistency: q >= hi falls back to the full rule."""
    ax = grid.axes[axis]
    x = ax.nodes
    if q >= ax.hi:
        return _simpson_reduce(grid, samples, axis)
    F = np.moveaxis(samples, axis, -1)
    out = np.zeros(F.shape[:-1])
    if q < ax.lo:
        return out
    h = ax.spacing
    k = int(np.searchsorted(x, q, side="right")) - 1
    k = min(max(k, 0), ax.n - 2)
    m = k if k % 2 == 0 else k - 1
    if m >= 2:
        w = _simpson_weights(x[0], x[m], m + 1)
        out = F[..., : m + 1] @ w
    if k > m:
        out = out + 0.5 * h * (F[..., k - 1] + F[..., k])
    delta = q - x[k]
    if delta > 0.0:
        Fq = F[..., k] + (F[..., k + 1] - F[..., k]) * (delta / h)
        out = out + 0.5 * delta * (F[..., k] + Fq)
    return out


def grid_quad(grid: Grid, samples: np.ndarray,
              cuts: tuple[tuple[int, float], ...] = ()) -> float:
    """Integrate node samples over the grid, restricted to the half-open
    box {x_axis <= location} for every (axis, location) in `cuts`."""
    bound: dict[int, float] = {}
    for axis, q in cuts:
        bound[axis] = min(q, bound.get(axis, np.inf))
    out = np.asarray(samples, dtype=float)
    for axis in reversed(range(grid.ndim)):
        if axis in bound:
            out = _below_reduce(grid, out, axis, bound[axis])
        else:
            out = _simpson_reduce(grid, out, axis)
    return float(out)


# --- density with optional cut structure --------------------------------------------

@dataclass(frozen=True)
class CutTerm:
    """Piecewise contribution samples(x) * prod_k 1[x_axis_k <= location_k].

    `samples` holds the smooth factor on the full grid, without the mask."""

    cuts: tuple[tuple[int, float], ...]
    samples: np.ndarray

    def mask(self, grid: Grid) -> np.ndarray:
        m = np.ones(grid.shape, dtype=bool)
        mesh = grid.mesh()
        for axis, q in self.cuts:
            m &= mesh[axis] <= q
        return m


def _structure_values(grid: Grid, smooth: np.ndarray,
                      terms: tuple[CutTerm, ...]) -> np.ndarray:
    v = np.array(smooth, dtype=float)
    for t in terms:
        m = t.mask(grid)
        v[m] += t.samples[m]
    return v


def _structure_quad(grid: Grid, smooth: np.ndarray, terms: tuple[CutTerm, ...],
                    factor: np.ndarray | float = 1.0) -> float:
    total = grid_quad(grid, smooth * factor)
    for t in terms:
        total += grid_quad(grid, t.samples * factor, t.cuts)
    return total


class GridDensity:
    """Probability density sampled on a grid.

    Construction renormalizes silently when the raw quadrature integral is
    inside [0.99, 1.01] and rejects the input otherwise, so discretization
    leakage passes but genuinely unnormalized input does not. Family
    builders that produce unnormalized shapes go through `from_callable`,
    which normalizes explicitly before the gate.
    """

    def __init__(self, grid: Grid, values: np.ndarray, *,
                 _terms: tuple[CutTerm, ...] = (), _normalize: str = "strict"):
        values = np.asarray(values, dtype=float)
        if values.shape != grid.shape:
            raise SensanError("density values do not match the grid shape")
        if not np.all(np.isfinite(values)):
            raise SensanError("density values must be finite")
        full = _structure_values(grid, values, _terms) if _terms else values
        if np.any(full < 0.0):
            raise SensanError("density values must be nonnegative")
        raw = _structure_quad(grid, values, _terms)
        if _normalize == "strict":
            if not (0.99 <= raw <= 1.01):
                raise SensanError(
                    f"density integral {raw:.6g} outside [0.99, 1.01], "
                    "refusing to renormalize")
        elif _normalize == "force":
            if raw <= 0.0:
                raise SensanError("density integrates to zero")
        else:
            raise SensanError(f"unknown normalization mode '{_normalize}'")
        self.grid = grid
        self.smooth = _readonly(values / raw)
        self.terms = tuple(
            CutTerm(t.cuts, _readonly(t.samples / raw)) for t in _terms)
        self._values = _readonly(_structure_values(grid, self.smooth, self.terms))

    @property
    def values(self) -> np.ndarray:
        return self._values

    @classmethod
    def from_values(cls, grid: Grid, values: np.ndarray) -> "GridDensity":
        return cls(grid, values)

    @classmethod
    def from_callable(cls, grid: Grid, fn) -> "GridDensity":
        raw = np.asarray(fn(*grid.mesh()), dtype=float)
        raw = np.broadcast_to(raw, grid.shape)
        total = grid_quad(grid, raw)
        if not np.isfinite(total) or total <= 0.0:
            raise SensanError("density shape does not integrate to a positive value")
        return cls(grid, raw / total)

    # spec serialization: "x,density" or "x,y,density", row-major
    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if self.grid.ndim == 1:
                w.writerow(["x", "density"])
                for x, p in zip(self.grid.axes[0].nodes, self.values):
                    w.writerow([repr(float(x)), repr(float(p))])
            else:
                w.writerow(["x", "y", "density"])
                X, Y = self.grid.mesh()
                for x, y, p in zip(X.ravel(), Y.ravel(), self.values.ravel()):
                    w.writerow([repr(float(x)), repr(float(y)), repr(float(p))])

    @classmethod
    def from_csv(cls, path: str) -> "GridDensity":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        data = np.array([[float(c) for c in r] for r in body])
        if header[:2] == ["x", "density"]:
            x = data[:, 0]
            grid = Grid.line(x[0], x[-1], len(x))
            if not np.allclose(grid.axes[0].nodes, x, rtol=0, atol=1e-9 * (x[-1] - x[0])):
                raise SensanError("density csv nodes are not a regular grid")
            return cls(grid, data[:, 1])
        if header[:3] == ["x", "y", "density"]:
            xs = np.unique(data[:, 0])
            ys = np.unique(data[:, 1])
            grid = Grid.box((xs[0], xs[-1]), (ys[0], ys[-1]), (len(xs), len(ys)))
            vals = data[:, 2].reshape(len(xs), len(ys))
            return cls(grid, vals)
        raise SensanError(f"unrecognized density csv header {header!r}")


@dataclass(frozen=True)
class Sample:
    """Observed points inside a declared rectangle of the sample space."""

    points: np.ndarray
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise SensanError("sample must be a nonempty array of points")
        if pts.shape[1] != len(self.lo) or len(self.lo) != len(self.hi):
            raise SensanError("sample dimension does not match declared bounds")
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        if np.any(pts < lo) or np.any(pts > hi):
            raise SensanError("sample points outside the declared rectangle")
        object.__setattr__(self, "points", _readonly(pts))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def ndim(self) -> int:
        return self.points.shape[1]

    def coord(self, axis: int = 0) -> np.ndarray:
        return self.points[:, axis]

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x"] if self.ndim == 1 else ["x", "y"])
            for row in self.points:
                w.writerow([repr(float(c)) for c in row])

    @classmethod
    def from_csv(cls, path: str, lo=None, hi=None) -> "Sample":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if lo is None:
            lo = tuple(data.min(axis=0))
        if hi is None:
            hi = tuple(data.max(axis=0))
        return cls(data, tuple(float(v) for v in lo), tuple(float(v) for v in hi))


@dataclass(frozen=True)
class LikelihoodRatio:
    """Pointwise dP/dQ on a grid, clamped into [m, M].

    The stored orientation is dP/dQ, the one entering the gradient operator;
    the reciprocal is derived on demand. `clamped` records whether the clamp
    actually bit, since a biting clamp means the bounded-ratio assumption
    failed and downstream adjoint identities hold only approximately.
    """

    grid: Grid
    ratio_values: np.ndarray
    clamp_bounds: tuple[float, float]
    clamped: bool

    def __post_init__(self):
        m, M = self.clamp_bounds
        if not (0.0 < m <= M < np.inf):
            raise SensanError("clamp bounds must satisfy 0 < m <= M < inf")
        vals = np.asarray(self.ratio_values, dtype=float)
        if vals.shape != self.grid.shape:
            raise SensanError("ratio values do not match the grid shape")
        if np.any(vals < m) or np.any(vals > M):
            raise SensanError("ratio values escape the clamp bounds")
        object.__setattr__(self, "ratio_values", _readonly(vals))

    def reciprocal_values(self) -> np.ndarray:
        return 1.0 / self.ratio_values


# --- operations ---------------------------------------------------------------------

def integrate(f, P: GridDensity) -> float:
    """Quadrature integral of f against P. `f` is either a callable on the
    grid coordinates or an array of node values."""
    if callable(f):
        vals = np.asarray(f(*P.grid.mesh()), dtype=float)
        vals = np.broadcast_to(vals, P.grid.shape)
    else:
        vals = np.asarray(f, dtype=float)
        if vals.shape != P.grid.shape:
            raise SensanError("integrand values do not match the grid shape")
    if not np.all(np.isfinite(vals)):
        raise SensanError("non-finite integrand")
    return _structure_quad(P.grid, P.smooth, P.terms, factor=vals)


@dataclass(frozen=True)
class _Marginal:
    """1-d marginal density structure along one axis."""
    nodes: np.ndarray
    smooth: np.ndarray
    cut_terms: tuple[tuple[float, np.ndarray], ...]  # (location, samples)


def _marginal_structure(grid: Grid, dens_smooth: np.ndarray,
                        dens_terms: tuple[CutTerm, ...], axis: int) -> _Marginal:
    if grid.ndim == 1:
        smooth = np.array(dens_smooth, dtype=float)
        terms = []
        for t in dens_terms:
            q = min(loc for _, loc in t.cuts)
            terms.append((q, np.array(t.samples, dtype=float)))
        return _Marginal(grid.axes[0].nodes, smooth, tuple(terms))
    other = 1 - axis
    smooth = _simpson_reduce(grid, dens_smooth, other)
    terms: list[tuple[float, np.ndarray]] = []
    for t in dens_terms:
        kept = [c for c in t.cuts if c[0] == axis]
        dropped = [c for c in t.cuts if c[0] == other]
        if dropped:
            reduced = _below_reduce(grid, t.samples, other, min(q for _, q in dropped))
        else:
            reduced = _simpson_reduce(grid, t.samples, other)
        if kept:
            terms.append((min(q for _, q in kept), reduced))
        else:
            smooth = smooth + reduced
    return _Marginal(grid.axes[axis].nodes, smooth, tuple(terms))


def _marginal(P: GridDensity, axis: int) -> _Marginal:
    return _marginal_structure(P.grid, P.smooth, P.terms, axis)


def _cumtrapz(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(x))
    return out


def _marginal_cdf_at(m: _Marginal, t: float, base: dict) -> float:
    """CDF value at an arbitrary point, consistent with the node-level
    cumulative trapezoid tables in `base`."""
    x = m.nodes
    if t <= x[0]:
        return 0.0
    if t >= x[-1]:
        t = x[-1]
    k = min(int(np.searchsorted(x, t, side="right")) - 1, len(x) - 2)
    h = x[k + 1] - x[k]
    d = t - x[k]
    val = base["smooth_cum"][k]
    st = m.smooth[k] + (m.smooth[k + 1] - m.smooth[k]) * (d / h)
    val += 0.5 * d * (m.smooth[k] + st)
    for (q, s), cum in zip(m.cut_terms, base["term_cums"]):
        tt = min(t, q)
        if tt <= x[0]:
            continue
        kk = min(int(np.searchsorted(x, tt, side="right")) - 1, len(x) - 2)
        dd = tt - x[kk]
        sv = s[kk] + (s[kk + 1] - s[kk]) * (dd / (x[kk + 1] - x[kk]))
        val += cum[kk] + 0.5 * dd * (s[kk] + sv)
    return val


def _marginal_cdf_tables(m: _Marginal) -> dict:
    return {
        "smooth_cum": _cumtrapz(m.nodes, m.smooth),
        "term_cums": [_cumtrapz(m.nodes, s) for _, s in m.cut_terms],
    }


def _cdf_nodes(m: _Marginal, base: dict) -> np.ndarray:
    x = m.nodes
    F = np.array(base["smooth_cum"])
    for (q, s), cum in zip(m.cut_terms, base["term_cums"]):
        if q >= x[-1]:
            F += cum
            continue
        capped = _marginal_cdf_at(
            _Marginal(x, s, ()), q, {"smooth_cum": cum, "term_cums": []})
        F += np.where(x <= q, cum, capped)
    return F


def _invert_marginal_cdf(m: _Marginal, tau: float, *, strict: bool = True) -> float:
    """Invert the cumulative-trapezoid CDF of a 1-d marginal structure.

    Strict mode rejects a flat crossing (zero density on an interval at
    the level). Non-strict mode takes the first crossing, which tolerates
    the tiny negative dips a signed mixture density can produce."""
    base = _marginal_cdf_tables(m)
    F = _cdf_nodes(m, base)
    target = tau * 1.0
    if F[-1] < target:
        raise SensanError("quantile level beyond the grid support")
    hit = F >= target
    i = int(np.argmax(hit))
    i = min(max(i, 1), len(F) - 1)
    x0, x1 = m.nodes[i - 1], m.nodes[i]
    pts = [x0] + sorted(q for q, _ in m.cut_terms if x0 < q < x1) + [x1]
    Fv = [F[i - 1]] + [_marginal_cdf_at(m, b, base) for b in pts[1:-1]] + [F[i]]
    for j in range(len(pts) - 1):
        lo_f, hi_f = Fv[j], Fv[j + 1]
        if hi_f >= target:
            dF = hi_f - lo_f
            if dF <= 1e-13:
                if strict:
                    raise SensanError("non-unique quantile: flat CDF at the level")
                return float(pts[j])
            return float(pts[j] + (target - lo_f) / dF * (pts[j + 1] - pts[j]))
    return float(x1)


def quantile(P, tau: float, axis: int = 0) -> float:
    """Left-continuous quantile. GridDensity: linear interpolation of the
    cumulative-trapezoid CDF, with cells split at known density jumps.
    Sample: empirical inverse CDF (the ceil(n*tau) order statistic)."""
    if not (0.0 < tau < 1.0):
        raise SensanError("quantile level must be strictly inside (0, 1)")
    if isinstance(P, Sample):
        if axis >= P.ndim:
            raise SensanError("quantile axis out of range")
        xs = np.sort(P.coord(axis))
        k = int(math.ceil(P.n * tau))
        return float(xs[max(k, 1) - 1])
    if not isinstance(P, GridDensity):
        raise SensanError("quantile expects a GridDensity or a Sample")
    if axis >= P.grid.ndim:
        raise SensanError("quantile axis out of range")
    return _invert_marginal_cdf(_marginal(P, axis), tau, strict=True)


def density_at(P: GridDensity, x) -> float:
    """Multilinear interpolation of the density at an interior point."""
    pt = np.atleast_1d(np.asarray(x, dtype=float))
    if pt.shape != (P.grid.ndim,):
        raise SensanError("point dimension does not match the grid")
    for ax, c in zip(P.grid.axes, pt):
        if not (ax.lo <= c <= ax.hi):
            raise SensanError("point outside the grid domain")

    def interp(samples: np.ndarray) -> float:
        out = samples
        for axis in reversed(range(P.grid.ndim)):
            nodes = P.grid.axes[axis].nodes
            c = pt[axis]
            k = min(int(np.searchsorted(nodes, c, side="right")) - 1, len(nodes) - 2)
            k = max(k, 0)
            t = (c - nodes[k]) / (nodes[k + 1] - nodes[k])
            out = np.moveaxis(out, axis, -1)
            out = (1.0 - t) * out[..., k] + t * out[..., k + 1]
        return float(out)

    val = interp(P.smooth)
    for term in P.terms:
        if all(pt[axis] <= q for axis, q in term.cuts):
            val += interp(term.samples)
    return val


def likelihood_ratio(P: GridDensity, Q: GridDensity,
                     clamp: tuple[float, float] = (1e-3, 1e3)) -> LikelihoodRatio:
    """Pointwise dP/dQ on the shared grid, clamped into `clamp`."""
    if not P.grid.same_as(Q.grid):
        raise SensanError("mismatched grids for likelihood ratio")
    m, M = clamp
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = np.where(Q.values > 0.0, P.values / np.maximum(Q.values, 1e-300), np.inf)
    raw = np.where(np.isnan(raw), 1.0, raw)
    clipped = np.clip(raw, m, M)
    bit = bool(np.any(raw < m) or np.any(raw > M))
    return LikelihoodRatio(P.grid, clipped, (float(m), float(M)), bit)


def kde_fit(sample: Sample, grid: Grid, bandwidth=None) -> GridDensity:
    """Gaussian product-kernel density estimate on the grid.

    Bandwidth per axis defaults to the Silverman rule 1.06 * sd * n^(-1/5);
    boundary bias is corrected by reflecting each point at both domain
    edges. The result is renormalized on the grid.
    """
    if sample.ndim != grid.ndim:
        raise SensanError("sample dimension does not match the grid")
    n = sample.n
    if bandwidth is None:
        bands = []
        for a in range(grid.ndim):
            sd = float(np.std(sample.coord(a), ddof=1)) if n > 1 else 0.0
            if sd <= 0.0:
                raise SensanError("degenerate sample: zero variance, cannot pick a bandwidth")
            bands.append(1.06 * sd * n ** (-0.2))
    else:
        bands = [float(b) for b in np.atleast_1d(bandwidth)]
        if len(bands) == 1 and grid.ndim == 2:
            bands = bands * 2
        if any(b <= 0.0 for b in bands):
            raise SensanError("bandwidth must be positive")

    def axis_kernel(a: int) -> np.ndarray:
        nodes = grid.axes[a].nodes
        pts = sample.coord(a)
        lo, hi = grid.axes[a].lo, grid.axes[a].hi
        b = bands[a]
        out = np.zeros((n, len(nodes)))
        for images in (pts, 2.0 * lo - pts, 2.0 * hi - pts):
            z = (nodes[None, :] - images[:, None]) / b
            out += np.exp(-0.5 * z * z)
        return out / (b * _SQRT2PI)

    if grid.ndim == 1:
        dens = axis_kernel(0).sum(axis=0) / n
    else:
        dens = axis_kernel(0).T @ axis_kernel(1) / n
    return GridDensity(grid, dens / grid_quad(grid, dens), _normalize="force")
