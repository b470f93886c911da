"""Distribution carriers for uncertain tuple attributes.

Every uncertain attribute in a tuple is one of the immutable classes below.
Univariate variants share ``pdf``/``cdf``/``moments``/``support``; the module
level functions (``pdf_at``, ``cdf_at``, ...) dispatch on them and raise
:class:`DimensionError` for multivariate inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence, Union

import numpy as np
from scipy import special

from .errors import DimensionError, InputError, ParameterError, ZeroMassError

VAR_FLOOR = 1e-12
MASS_FLOOR = 1e-12
GRID_POINTS = 1024
GRID_SIGMAS = 8.0
HDR_POINTS = 4096
KDE_EXACT_MAX = 4096
KDE_BIN_DIVISOR = 16

_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


def norm_cdf(z):
    return special.ndtr(z)


def norm_pdf(z):
    return np.exp(-0.5 * np.square(z)) / _SQRT2PI


# ---------------------------------------------------------------------------
# Variants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PointMass:
    value: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise InputError(f"point mass at non-finite value {self.value}")

    def pdf(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def cdf(self, x):
        return (np.asarray(x, dtype=float) >= self.value).astype(float)

    def moments(self) -> tuple[float, float]:
        return float(self.value), 0.0

    def support(self) -> tuple[float, float]:
        return float(self.value), float(self.value)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.full(n, float(self.value))


@dataclass(frozen=True)
class Gaussian1D:
    mean: float
    var: float

    def __post_init__(self):
        if not math.isfinite(self.mean):
            raise InputError("Gaussian mean must be finite")
        if not self.var >= 0:
            raise InputError(f"invalid variance {self.var}")
        if self.var < VAR_FLOOR:
            object.__setattr__(self, "var", VAR_FLOOR)

    @property
    def sd(self) -> float:
        return math.sqrt(self.var)

    def pdf(self, x):
        z = (np.asarray(x, dtype=float) - self.mean) / self.sd
        return norm_pdf(z) / self.sd

    def cdf(self, x):
        return norm_cdf((np.asarray(x, dtype=float) - self.mean) / self.sd)

    def sf(self, x):
        return norm_cdf((self.mean - np.asarray(x, dtype=float)) / self.sd)

    def moments(self) -> tuple[float, float]:
        return float(self.mean), float(self.var)

    def support(self) -> tuple[float, float]:
        h = GRID_SIGMAS * self.sd
        return self.mean - h, self.mean + h

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.normal(self.mean, self.sd, size=n)


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    vars: np.ndarray

    def __init__(self, weights, means, vars):
        w = np.atleast_1d(np.asarray(weights, dtype=float))
        m = np.atleast_1d(np.asarray(means, dtype=float))
        v = np.atleast_1d(np.asarray(vars, dtype=float))
        if not (w.shape == m.shape == v.shape) or w.ndim != 1 or w.size == 0:
            raise InputError("mixture needs matching, nonempty component arrays")
        if np.any(w <= 0):
            raise InputError("mixture weights must be positive")
        if abs(w.sum() - 1.0) > 1e-9:
            raise InputError(f"mixture weights sum to {w.sum()!r}, not 1")
        if np.any(v < 0) or not np.all(np.isfinite(m)):
            raise InputError("invalid mixture component")
        object.__setattr__(self, "weights", _frozen(w))
        object.__setattr__(self, "means", _frozen(m))
        object.__setattr__(self, "vars", _frozen(np.maximum(v, VAR_FLOOR)))

    @classmethod
    def from_components(cls, comps: Sequence[tuple[float, float, float]]) -> "GaussianMixture":
        w, m, v = zip(*comps)
        return cls(w, m, v)

    @property
    def components(self) -> list[tuple[float, float, float]]:
        return [(float(a), float(b), float(c)) for a, b, c in zip(self.weights, self.means, self.vars)]

    @property
    def k(self) -> int:
        return int(self.weights.size)

    def __eq__(self, other):
        if not isinstance(other, GaussianMixture):
            return NotImplemented
        return self.components == other.components

    def __hash__(self):
        return hash(tuple(self.components))

    def __repr__(self):
        comps = ", ".join(f"({w:.4g}, {m:.4g}, {v:.4g})" for w, m, v in self.components)
        return f"GaussianMixture[{comps}]"

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        sd = np.sqrt(self.vars)
        z = (x[..., None] - self.means) / sd
        return np.sum(self.weights * norm_pdf(z) / sd, axis=-1)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        z = (x[..., None] - self.means) / np.sqrt(self.vars)
        return np.sum(self.weights * norm_cdf(z), axis=-1)

    def log_pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        z = (x[..., None] - self.means) ** 2 / self.vars
        comp = np.log(self.weights) - 0.5 * (z + np.log(2 * np.pi * self.vars))
        return special.logsumexp(comp, axis=-1)

    def moments(self) -> tuple[float, float]:
        mean = float(np.dot(self.weights, self.means))
        second = float(np.dot(self.weights, self.vars + self.means**2))
        return mean, max(second - mean * mean, 0.0)

    def support(self) -> tuple[float, float]:
        sd = np.sqrt(self.vars)
        return float(np.min(self.means - GRID_SIGMAS * sd)), float(np.max(self.means + GRID_SIGMAS * sd))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        idx = rng.choice(self.k, size=n, p=self.weights)
        return rng.normal(self.means[idx], np.sqrt(self.vars[idx]))


@dataclass(frozen=True, eq=False)
class GaussianND:
    mean: np.ndarray
    cov: np.ndarray

    def __init__(self, mean, cov):
        m = np.asarray(mean, dtype=float).reshape(-1)
        c = np.asarray(cov, dtype=float)
        d = m.size
        if d not in (2, 3):
            raise DimensionError(f"GaussianND supports dimensions 2 and 3, got {d}")
        if c.shape != (d, d):
            raise InputError(f"covariance shape {c.shape} does not match dimension {d}")
        if np.max(np.abs(c - c.T)) > 1e-9:
            raise InputError("covariance is not symmetric")
        c = 0.5 * (c + c.T)
        vals, vecs = np.linalg.eigh(c)
        if vals.min() < -1e-9:
            raise InputError(f"covariance has negative eigenvalue {vals.min():.3g}")
        if vals.min() < VAR_FLOOR:
            c = (vecs * np.maximum(vals, VAR_FLOOR)) @ vecs.T
            c = 0.5 * (c + c.T)
        object.__setattr__(self, "mean", _frozen(m))
        object.__setattr__(self, "cov", _frozen(c))

    @property
    def dim(self) -> int:
        return int(self.mean.size)

    def __eq__(self, other):
        if not isinstance(other, GaussianND):
            return NotImplemented
        return np.array_equal(self.mean, other.mean) and np.array_equal(self.cov, other.cov)

    __hash__ = None

    def __repr__(self):
        return f"GaussianND(mean={self.mean.tolist()}, cov={self.cov.tolist()})"

    def marginal(self, axis: int) -> Gaussian1D:
        return Gaussian1D(float(self.mean[axis]), float(self.cov[axis, axis]))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        vals, vecs = np.linalg.eigh(self.cov)
        root = vecs * np.sqrt(np.maximum(vals, 0.0))
        return self.mean + rng.standard_normal((n, self.dim)) @ root.T


@dataclass(frozen=True, eq=False)
class WeightedSamples:
    """Value/weight pairs; values are scalars (shape ``(n,)``) or vectors (``(n, d)``)."""

    values: np.ndarray
    weights: np.ndarray
    bandwidth: float = field(default=-1.0)

    def __init__(self, values, weights=None, bandwidth: float | None = None):
        v = np.asarray(values, dtype=float)
        if v.ndim == 0:
            v = v.reshape(1)
        if v.ndim not in (1, 2) or v.shape[0] == 0:
            raise InputError("need at least one sample")
        if weights is None:
            w = np.full(v.shape[0], 1.0 / v.shape[0])
        else:
            w = np.asarray(weights, dtype=float).reshape(-1)
        if w.size != v.shape[0]:
            raise InputError("values and weights differ in length")
        if np.any(w < 0) or not np.all(np.isfinite(v)):
            raise InputError("negative weight or non-finite value")
        if abs(w.sum() - 1.0) > 1e-9:
            raise InputError(f"sample weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "weights", _frozen(w))
        if bandwidth is None:
            bandwidth = silverman_bandwidth(v, w) if v.ndim == 1 else 0.0
        object.__setattr__(self, "bandwidth", float(bandwidth))

    @classmethod
    def normalized(cls, values, weights, bandwidth: float | None = None) -> "WeightedSamples":
        w = np.asarray(weights, dtype=float)
        return cls(values, w / w.sum(), bandwidth)

    @property
    def n(self) -> int:
        return int(self.weights.size)

    @property
    def dim(self) -> int:
        return 1 if self.values.ndim == 1 else int(self.values.shape[1])

    @property
    def n_eff(self) -> float:
        return float(1.0 / np.sum(self.weights**2))

    def __eq__(self, other):
        if not isinstance(other, WeightedSamples):
            return NotImplemented
        return np.array_equal(self.values, other.values) and np.array_equal(self.weights, other.weights)

    __hash__ = None

    def __repr__(self):
        return f"WeightedSamples(n={self.n}, dim={self.dim})"

    def _require_1d(self):
        if self.values.ndim != 1:
            raise DimensionError("operation needs scalar samples")

    def _kernel_points(self) -> tuple[np.ndarray, np.ndarray]:
        # Large sets are linearly binned onto a grid of spacing h/16 first.
        cached = self.__dict__.get("_kpts")
        if cached is not None:
            return cached
        v, w, h = self.values, self.weights, self.bandwidth
        lo, hi = float(v.min()), float(v.max())
        m = int((hi - lo) / (h / KDE_BIN_DIVISOR)) + 2 if hi > lo else 1
        if self.n <= KDE_EXACT_MAX or m >= self.n:
            pts = (v, w)
        else:
            step = (hi - lo) / (m - 1)
            pos = (v - lo) / step
            left = np.minimum(pos.astype(int), m - 2)
            frac = pos - left
            grid_w = np.bincount(left, w * (1 - frac), m) + np.bincount(left + 1, w * frac, m)
            keep = grid_w > 0
            pts = (lo + step * np.arange(m)[keep], grid_w[keep])
        object.__setattr__(self, "_kpts", pts)
        return pts

    def _kernel_sum(self, x, kernel) -> np.ndarray:
        centers, wts = self._kernel_points()
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        flat = out.reshape(-1)
        xf = x.reshape(-1)
        rows = max(1, (1 << 21) // centers.size)
        for lo in range(0, xf.size, rows):
            z = (xf[lo:lo + rows, None] - centers) / self.bandwidth
            flat[lo:lo + rows] = kernel(z) @ wts
        return out

    def pdf(self, x):
        # Gaussian-kernel density; diagnostic use only.
        self._require_1d()
        if self.bandwidth <= 0:
            return np.zeros_like(np.asarray(x, dtype=float))
        return self._kernel_sum(x, norm_pdf) / self.bandwidth

    def cdf(self, x):
        """Empirical (step) CDF of the weighted samples."""
        self._require_1d()
        x = np.asarray(x, dtype=float)
        order = np.argsort(self.values, kind="stable")
        sv = self.values[order]
        cw = np.concatenate([[0.0], np.cumsum(self.weights[order])])
        idx = np.searchsorted(sv, x, side="right")
        return np.minimum(cw[idx], 1.0)

    def smooth_cdf(self, x):
        """CDF of the kernel-smoothed density (the step CDF when bandwidth is 0)."""
        self._require_1d()
        if self.bandwidth <= 0:
            return self.cdf(x)
        return self._kernel_sum(x, norm_cdf)

    def moments(self) -> tuple[float, float]:
        self._require_1d()
        mean = float(np.dot(self.weights, self.values))
        var = float(np.dot(self.weights, (self.values - mean) ** 2))
        return mean, var

    def support(self) -> tuple[float, float]:
        self._require_1d()
        pad = 4.0 * self.bandwidth
        return float(self.values.min() - pad), float(self.values.max() + pad)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        idx = rng.choice(self.n, size=n, p=self.weights)
        return np.array(self.values[idx])


def weighted_quantile(values: np.ndarray, weights: np.ndarray, q) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    v = values[order]
    cw = np.cumsum(weights[order])
    cw = cw / cw[-1]
    idx = np.searchsorted(cw, np.asarray(q, dtype=float), side="left")
    return v[np.minimum(idx, v.size - 1)]


def silverman_bandwidth(values: np.ndarray, weights: np.ndarray) -> float:
    mean = np.dot(weights, values)
    sd = math.sqrt(max(float(np.dot(weights, (values - mean) ** 2)), 0.0))
    q25, q75 = weighted_quantile(values, weights, [0.25, 0.75])
    iqr = (q75 - q25) / 1.34
    spread = min(sd, iqr) if iqr > 0 else sd
    if spread <= 0:
        return 0.0
    n_eff = 1.0 / float(np.sum(weights**2))
    return 0.9 * spread * n_eff ** (-0.2)


@dataclass(frozen=True, eq=False)
class GridPdf:
    """Density sampled on an equispaced grid; linear interpolation between nodes."""

    x0: float
    dx: float
    density: np.ndarray

    def __init__(self, x0: float, dx: float, density, normalize: bool = False):
        d = np.asarray(density, dtype=float).reshape(-1)
        if not dx > 0:
            raise InputError("grid step must be positive")
        if d.size < 8:
            raise InputError("a grid pdf needs at least 8 points")
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise InputError("densities must be finite and nonnegative")
        total = _trapz_total(d, dx)
        if normalize:
            if total <= 0:
                raise InputError("density has no mass")
            d = d / total
        elif abs(total - 1.0) > 1e-6:
            raise InputError(f"grid density integrates to {total!r}, not 1")
        object.__setattr__(self, "x0", float(x0))
        object.__setattr__(self, "dx", float(dx))
        object.__setattr__(self, "density", _frozen(d))
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (d[1:] + d[:-1]) * dx)])
        object.__setattr__(self, "_cum", _frozen(cum / cum[-1]))

    @property
    def n(self) -> int:
        return int(self.density.size)

    @property
    def x(self) -> np.ndarray:
        return self.x0 + self.dx * np.arange(self.n)

    @property
    def x_end(self) -> float:
        return self.x0 + self.dx * (self.n - 1)

    def __eq__(self, other):
        if not isinstance(other, GridPdf):
            return NotImplemented
        return (self.x0, self.dx) == (other.x0, other.dx) and np.array_equal(self.density, other.density)

    __hash__ = None

    def __repr__(self):
        return f"GridPdf(x0={self.x0:.6g}, dx={self.dx:.4g}, n={self.n})"

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.interp(x, self.x, self.density, left=0.0, right=0.0)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        u = np.clip((x - self.x0) / self.dx, -1.0, float(self.n))
        j = np.clip(np.floor(u).astype(int), 0, self.n - 2)
        frac = np.clip(u - j, 0.0, 1.0) * self.dx
        p0 = self.density[j]
        p1 = self.density[j + 1]
        partial = p0 * frac + (p1 - p0) * frac**2 / (2 * self.dx)
        out = self._cum[j] + partial
        out = np.where(u <= 0, 0.0, np.where(u >= self.n - 1, 1.0, out))
        return np.clip(out, 0.0, 1.0)

    def moments(self) -> tuple[float, float]:
        x = self.x
        w = np.full(self.n, self.dx)
        w[0] = w[-1] = 0.5 * self.dx
        pw = self.density * w
        mass = pw.sum()
        mean = float(np.dot(pw, x) / mass)
        var = float(np.dot(pw, (x - mean) ** 2) / mass)
        return mean, var

    def support(self) -> tuple[float, float]:
        return self.x0, self.x_end

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        # Inverse transform on the piecewise-quadratic CDF, solved per cell.
        u = rng.random(n)
        j = np.clip(np.searchsorted(self._cum, u, side="right") - 1, 0, self.n - 2)
        p0 = self.density[j]
        p1 = self.density[j + 1]
        need = (u - self._cum[j]) * self._cum_scale()
        a = (p1 - p0) / (2 * self.dx)
        with np.errstate(divide="ignore", invalid="ignore"):
            disc = np.sqrt(np.maximum(p0**2 + 4 * a * need, 0.0))
            s = np.where(np.abs(a) > 1e-14, (-p0 + disc) / (2 * a), need / np.where(p0 > 0, p0, 1.0))
        s = np.clip(np.nan_to_num(s), 0.0, self.dx)
        return self.x0 + j * self.dx + s

    def _cum_scale(self) -> float:
        return float(_trapz_total(self.density, self.dx))


def _trapz_total(d: np.ndarray, dx: float) -> float:
    return float((d.sum() - 0.5 * (d[0] + d[-1])) * dx)


@dataclass(frozen=True)
class AxisProduct:
    """Independent univariate marginals, one per axis (location carrier for per-axis fits)."""

    marginals: tuple

    def __post_init__(self):
        if len(self.marginals) not in (2, 3):
            raise DimensionError("AxisProduct supports 2 or 3 axes")
        for m in self.marginals:
            if not is_univariate(m):
                raise DimensionError("AxisProduct marginals must be univariate")

    @property
    def dim(self) -> int:
        return len(self.marginals)

    @property
    def mean(self) -> np.ndarray:
        return np.array([moments(m)[0] for m in self.marginals])

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.column_stack([m.sample(rng, n) for m in self.marginals])


Univariate = Union[PointMass, Gaussian1D, GaussianMixture, WeightedSamples, GridPdf]
UncertainValue = Union[Univariate, GaussianND, AxisProduct]


def is_univariate(d: Any) -> bool:
    if isinstance(d, WeightedSamples):
        return d.values.ndim == 1
    return isinstance(d, (PointMass, Gaussian1D, GaussianMixture, GridPdf))


def _univariate(d) -> Univariate:
    if not is_univariate(d):
        raise DimensionError(f"{type(d).__name__} is not univariate")
    return d


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def pdf_at(d: UncertainValue, x) -> float | np.ndarray:
    out = _univariate(d).pdf(x)
    return float(out) if np.ndim(out) == 0 else out


def cdf_at(d: UncertainValue, x) -> float | np.ndarray:
    out = _univariate(d).cdf(x)
    return float(out) if np.ndim(out) == 0 else out


def moments(d: UncertainValue) -> tuple[float, float]:
    return _univariate(d).moments()


def support(d: UncertainValue) -> tuple[float, float]:
    return _univariate(d).support()


def covering_grid(d: Univariate, n: int = GRID_POINTS) -> np.ndarray:
    """Equispaced grid over mean ± 8 sd (widened to the variant's own support)."""
    mean, var = d.moments()
    h = GRID_SIGMAS * math.sqrt(max(var, VAR_FLOOR))
    lo, hi = d.support()
    lo, hi = min(lo, mean - h), max(hi, mean + h)
    if hi - lo <= 0:
        hi, lo = hi + 0.5, lo - 0.5
    return np.linspace(lo, hi, n)


def confidence_region(d: UncertainValue, level: float) -> list[tuple[float, float]]:
    """Highest-density region holding at least ``level`` probability.

    Gaussians get the exact symmetric interval; everything else is thresholded
    on an evaluation grid, so the grid step bounds the accuracy.
    """
    if not 0.0 < level < 1.0:
        raise ParameterError(f"confidence level must lie in (0, 1), got {level}")
    d = _univariate(d)
    if isinstance(d, PointMass):
        return [(d.value, d.value)]
    if isinstance(d, Gaussian1D):
        z = float(special.ndtri(0.5 + 0.5 * level))
        return [(d.mean - z * d.sd, d.mean + z * d.sd)]
    if isinstance(d, WeightedSamples) and d.bandwidth <= 0:
        return _discrete_hdr(d, level)
    if isinstance(d, GridPdf):
        x, dens = d.x, d.density
    else:
        x = covering_grid(d, HDR_POINTS)
        dens = d.pdf(x)
    return _hdr_on_grid(x, dens, level)


def _hdr_on_grid(x: np.ndarray, dens: np.ndarray, level: float) -> list[tuple[float, float]]:
    dx = x[1] - x[0]
    mass = dens * dx
    total = mass.sum()
    order = np.argsort(-dens, kind="stable")
    cum = np.cumsum(mass[order]) / total
    cut = int(np.searchsorted(cum, level, side="left"))
    thresh = dens[order[min(cut, order.size - 1)]]
    keep = dens >= thresh
    intervals = []
    j = 0
    n = x.size
    while j < n:
        if keep[j]:
            start = j
            while j + 1 < n and keep[j + 1]:
                j += 1
            intervals.append((float(x[start] - 0.5 * dx), float(x[j] + 0.5 * dx)))
        j += 1
    return intervals


def _discrete_hdr(d: WeightedSamples, level: float) -> list[tuple[float, float]]:
    vals, inv = np.unique(d.values, return_inverse=True)
    w = np.bincount(inv, weights=d.weights)
    order = np.argsort(-w, kind="stable")
    cut = int(np.searchsorted(np.cumsum(w[order]), level - 1e-12, side="left"))
    chosen = np.sort(vals[order[: cut + 1]])
    return [(float(v), float(v)) for v in chosen]


@dataclass(frozen=True)
class Predicate:
    """Interval predicate ``lo < x < hi`` (closed ends only matter for atoms)."""

    lo: float = -math.inf
    hi: float = math.inf
    lo_closed: bool = False
    hi_closed: bool = False

    @classmethod
    def gt(cls, c: float) -> "Predicate":
        return cls(lo=c)

    @classmethod
    def lt(cls, c: float) -> "Predicate":
        return cls(hi=c)

    @classmethod
    def between(cls, a: float, b: float) -> "Predicate":
        if a > b:
            raise ParameterError("between() needs a <= b")
        return cls(lo=a, hi=b, lo_closed=True, hi_closed=True)

    def holds(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        low = x >= self.lo if self.lo_closed else x > self.lo
        high = x <= self.hi if self.hi_closed else x < self.hi
        return low & high

    def to_dict(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "lo_closed": self.lo_closed, "hi_closed": self.hi_closed}

    @classmethod
    def from_dict(cls, obj: dict) -> "Predicate":
        return cls(float(obj.get("lo", -math.inf)), float(obj.get("hi", math.inf)),
                   bool(obj.get("lo_closed", False)), bool(obj.get("hi_closed", False)))


def predicate_mass(d: Univariate, pred: Predicate) -> float:
    if isinstance(d, PointMass):
        return float(pred.holds(d.value))
    if isinstance(d, WeightedSamples):
        return float(np.sum(d.weights[pred.holds(d.values)]))
    if isinstance(d, Gaussian1D):
        # Work in the tail nearer the interval for precision far from the mean.
        if pred.lo > d.mean:
            return float(max(d.sf(pred.lo) - d.sf(pred.hi), 0.0))
        return float(max(d.cdf(pred.hi) - d.cdf(pred.lo), 0.0))
    return float(max(d.cdf(pred.hi) - d.cdf(pred.lo), 0.0))


def truncate(d: UncertainValue, pred: Predicate, mass_floor: float = MASS_FLOOR) -> tuple[float, UncertainValue]:
    d = _univariate(d)
    mass = predicate_mass(d, pred)
    if mass < mass_floor:
        raise ZeroMassError(f"predicate mass {mass:.3g} is below the floor {mass_floor:.1g}")
    if isinstance(d, PointMass):
        return mass, d
    if isinstance(d, WeightedSamples):
        keep = pred.holds(d.values)
        return mass, WeightedSamples.normalized(d.values[keep], d.weights[keep])
    lo, hi = covering_grid(d)[[0, -1]]
    lo, hi = max(lo, pred.lo), min(hi, pred.hi)
    if not hi > lo:
        raise ZeroMassError("predicate interval misses the distribution's support")
    x = np.linspace(lo, hi, GRID_POINTS)
    dens = d.pdf(x)
    if isinstance(d, GridPdf):
        # Keep the interior nodes' interpolated densities; the cut points inherit linear values.
        dens = np.interp(x, d.x, d.density, left=0.0, right=0.0)
    if _trapz_total(dens, x[1] - x[0]) <= 0:
        raise ZeroMassError("truncated density vanishes on the grid")
    return mass, GridPdf(lo, x[1] - x[0], dens, normalize=True)


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------


def to_dict(d: UncertainValue) -> dict:
    if isinstance(d, PointMass):
        return {"kind": "point", "value": d.value}
    if isinstance(d, Gaussian1D):
        return {"kind": "gaussian", "mean": d.mean, "var": d.var}
    if isinstance(d, GaussianMixture):
        return {"kind": "mixture", "weights": d.weights.tolist(), "means": d.means.tolist(),
                "vars": d.vars.tolist()}
    if isinstance(d, GaussianND):
        return {"kind": "gaussian_nd", "mean": d.mean.tolist(), "cov": d.cov.tolist()}
    if isinstance(d, WeightedSamples):
        return {"kind": "samples", "values": d.values.tolist(), "weights": d.weights.tolist(),
                "bandwidth": d.bandwidth}
    if isinstance(d, GridPdf):
        return {"kind": "grid", "x0": d.x0, "dx": d.dx, "density": d.density.tolist()}
    if isinstance(d, AxisProduct):
        return {"kind": "axis_product", "marginals": [to_dict(m) for m in d.marginals]}
    raise InputError(f"cannot serialize {type(d).__name__}")


def from_dict(obj: dict) -> UncertainValue:
    kind = obj.get("kind")
    if kind == "point":
        return PointMass(float(obj["value"]))
    if kind == "gaussian":
        return Gaussian1D(float(obj["mean"]), float(obj["var"]))
    if kind == "mixture":
        w = np.asarray(obj["weights"], dtype=float)
        return GaussianMixture(w / w.sum(), obj["means"], obj["vars"])
    if kind == "gaussian_nd":
        return GaussianND(obj["mean"], obj["cov"])
    if kind == "samples":
        w = np.asarray(obj["weights"], dtype=float)
        return WeightedSamples(obj["values"], w / w.sum(), obj.get("bandwidth"))
    if kind == "grid":
        return GridPdf(obj["x0"], obj["dx"], obj["density"], normalize=True)
    if kind == "axis_product":
        return AxisProduct(tuple(from_dict(m) for m in obj["marginals"]))
    raise InputError(f"unknown distribution kind {kind!r}")
