"""Characteristic-function descriptors.

A :class:`CharFn` is a small immutable expression tree; nothing is expanded
until :meth:`CharFn.evaluate` is called on an array of ``t`` values. Sums of
independent variables become :class:`Product` nodes, so a window of N
K-component mixtures costs O(N K) per evaluated ``t`` instead of the K**N
components of an explicit convolution.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from functools import reduce
from typing import Sequence

import numpy as np
from scipy import optimize

from . import distributions as dist
from .distributions import VAR_FLOOR, GaussianMixture, GridPdf, WeightedSamples
from .errors import ConvergenceWarning, CoverageError, DimensionError, NumericWarning, ParameterError

K_MAX = 5
FIT_POINTS = 128
FIT_RESTARTS = 3
ITER_MAX = 200
CHUNK_NFEV = 10
STALL_RTOL = 1e-2
FIT_TOL = 1e-8  # sum of squared CF residuals; RMS residual ~1e-5 over the fit points
RESTART_TOL = 1e-6  # restarts only when the best fit is worse than this
DENSITY_INIT_POINTS = 512
COVERAGE_SIGMAS = 8.0
MAX_LATTICE_POINTS = 1 << 22


class CharFn:
    """Base class; subclasses implement ``evaluate`` and ``moments``."""

    def evaluate(self, t) -> np.ndarray:
        raise NotImplementedError

    def moments(self) -> tuple[float, float]:
        raise NotImplementedError

    def __call__(self, t):
        return self.evaluate(t)


@dataclass(frozen=True)
class GaussianCF(CharFn):
    mean: float
    var: float

    def evaluate(self, t):
        t = np.asarray(t, dtype=float)
        return np.exp(1j * self.mean * t - 0.5 * self.var * t * t)

    def moments(self):
        return float(self.mean), float(self.var)


@dataclass(frozen=True)
class PointMassCF(CharFn):
    c: float

    def evaluate(self, t):
        return np.exp(1j * self.c * np.asarray(t, dtype=float))

    def moments(self):
        return float(self.c), 0.0


@dataclass(frozen=True, eq=False)
class MixtureCF(CharFn):
    weights: tuple
    children: tuple

    def __post_init__(self):
        if len(self.weights) != len(self.children) or not self.children:
            raise ParameterError("mixture needs one weight per child")
        if abs(sum(self.weights) - 1.0) > 1e-9 or min(self.weights) < 0:
            raise ParameterError("mixture weights must be a probability vector")
        if all(isinstance(c, GaussianCF) for c in self.children):
            # Vectorized path for the common mixture-of-Gaussians case.
            object.__setattr__(self, "_w", np.array(self.weights, dtype=float))
            object.__setattr__(self, "_m", np.array([c.mean for c in self.children]))
            object.__setattr__(self, "_v", np.array([c.var for c in self.children]))
        else:
            object.__setattr__(self, "_w", None)

    def evaluate(self, t):
        t = np.asarray(t, dtype=float)
        if self._w is not None:
            tt = t[..., None]
            return np.exp(1j * self._m * tt - 0.5 * self._v * tt * tt) @ self._w
        out = np.zeros(t.shape, dtype=complex)
        for w, c in zip(self.weights, self.children):
            out += w * c.evaluate(t)
        return out

    def moments(self):
        mean = 0.0
        second = 0.0
        for w, c in zip(self.weights, self.children):
            m, v = c.moments()
            mean += w * m
            second += w * (v + m * m)
        return mean, max(second - mean * mean, 0.0)


@dataclass(frozen=True, eq=False)
class DiscreteCF(CharFn):
    """Point masses at ``values`` with probabilities ``probs``.

    A positive ``hat`` smooths each atom with a triangular kernel of half-width
    ``hat``; that is exactly the linear interpolation a :class:`GridPdf` uses.
    """

    values: np.ndarray
    probs: np.ndarray
    hat: float = 0.0

    def evaluate(self, t):
        t = np.asarray(t, dtype=float)
        flat = t.reshape(-1)
        out = np.empty(flat.size, dtype=complex)
        for lo in range(0, flat.size, 256):
            out[lo:lo + 256] = np.exp(1j * np.outer(flat[lo:lo + 256], self.values)) @ self.probs
        out = out.reshape(t.shape)
        if self.hat > 0:
            out = out * np.sinc(t * self.hat / (2 * np.pi)) ** 2
        return out

    def moments(self):
        mean = float(np.dot(self.probs, self.values))
        var = float(np.dot(self.probs, (self.values - mean) ** 2)) + self.hat**2 / 6.0
        return mean, var


@dataclass(frozen=True)
class Scaled(CharFn):
    a: float
    inner: CharFn

    def evaluate(self, t):
        return self.inner.evaluate(self.a * np.asarray(t, dtype=float))

    def moments(self):
        m, v = self.inner.moments()
        return self.a * m, self.a * self.a * v


@dataclass(frozen=True)
class Shifted(CharFn):
    b: float
    inner: CharFn

    def evaluate(self, t):
        t = np.asarray(t, dtype=float)
        return np.exp(1j * self.b * t) * self.inner.evaluate(t)

    def moments(self):
        m, v = self.inner.moments()
        return m + self.b, v


@dataclass(frozen=True)
class Thinned(CharFn):
    """``B * X`` with ``B ~ Bernoulli(p)`` independent of ``X``."""

    p: float
    inner: CharFn

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ParameterError(f"thinning probability {self.p} outside [0, 1]")

    def evaluate(self, t):
        return (1.0 - self.p) + self.p * self.inner.evaluate(t)

    def moments(self):
        m, v = self.inner.moments()
        mean = self.p * m
        return mean, self.p * (v + m * m) - mean * mean


@dataclass(frozen=True, eq=False)
class Product(CharFn):
    children: tuple

    def evaluate(self, t):
        t = np.asarray(t, dtype=float)
        out = np.ones(t.shape, dtype=complex)
        for c in self.children:
            out *= c.evaluate(t)
        return out

    def moments(self):
        mean = 0.0
        var = 0.0
        for c in self.children:
            m, v = c.moments()
            mean += m
            var += v
        return mean, var


def evaluate(cf: CharFn, t) -> np.ndarray:
    return cf.evaluate(t)


def cf_moments(cf: CharFn) -> tuple[float, float]:
    """Exact mean and variance by structural recursion over the descriptor."""
    mean, var = cf.moments()
    return float(mean), float(max(var, 0.0))


def cf_of(d) -> CharFn:
    if isinstance(d, dist.PointMass):
        return PointMassCF(d.value)
    if isinstance(d, dist.Gaussian1D):
        return GaussianCF(d.mean, d.var)
    if isinstance(d, GaussianMixture):
        if d.k == 1:
            return GaussianCF(float(d.means[0]), float(d.vars[0]))
        return MixtureCF(tuple(d.weights.tolist()),
                         tuple(GaussianCF(float(m), float(v)) for m, v in zip(d.means, d.vars)))
    if isinstance(d, WeightedSamples):
        if d.values.ndim != 1:
            raise DimensionError("characteristic functions are univariate here")
        return DiscreteCF(np.asarray(d.values), np.asarray(d.weights))
    if isinstance(d, GridPdf):
        p = d.density / d.density.sum()
        keep = p > 0
        return DiscreteCF(d.x[keep], p[keep], hat=d.dx)
    raise DimensionError(f"no characteristic function for {type(d).__name__}")


def cf_product(cfs: Sequence[CharFn]) -> CharFn:
    """Characteristic function of the sum of independent variables.

    Gaussian and point-mass factors are folded into one closed-form factor.
    """
    cfs = list(cfs)
    if not cfs:
        raise ParameterError("cf_product needs at least one factor")
    flat: list[CharFn] = []
    stack = cfs[::-1]
    while stack:
        c = stack.pop()
        if isinstance(c, Product):
            stack.extend(reversed(c.children))
        else:
            flat.append(c)
    g_mean = g_var = 0.0
    n_gauss = n_point = 0
    rest = []
    for c in flat:
        if isinstance(c, GaussianCF):
            g_mean += c.mean
            g_var += c.var
            n_gauss += 1
        elif isinstance(c, PointMassCF):
            g_mean += c.c
            n_point += 1
        else:
            rest.append(c)
    if n_gauss:
        rest.insert(0, GaussianCF(g_mean, g_var))
    elif n_point:
        rest.insert(0, PointMassCF(g_mean))
    return rest[0] if len(rest) == 1 else Product(tuple(rest))


def bernoulli_thin(p: float, cf: CharFn) -> CharFn:
    if not 0.0 <= p <= 1.0:
        raise ParameterError(f"thinning probability {p} outside [0, 1]")
    if p == 1.0:
        return cf
    if p == 0.0:
        return PointMassCF(0.0)
    return Thinned(float(p), cf)


def cf_scale(a: float, cf: CharFn) -> CharFn:
    if isinstance(cf, GaussianCF):
        return GaussianCF(a * cf.mean, a * a * cf.var)
    if isinstance(cf, PointMassCF):
        return PointMassCF(a * cf.c)
    return Scaled(float(a), cf)


def cf_shift(b: float, cf: CharFn) -> CharFn:
    if isinstance(cf, GaussianCF):
        return GaussianCF(cf.mean + b, cf.var)
    if isinstance(cf, PointMassCF):
        return PointMassCF(cf.c + b)
    return Shifted(float(b), cf)


# ---------------------------------------------------------------------------
# Inversion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    n_points: int
    center: float
    half_width: float

    def __post_init__(self):
        n = self.n_points
        if n < 64 or n & (n - 1):
            raise ParameterError(f"n_points must be a power of two >= 64, got {n}")
        if not self.half_width > 0:
            raise ParameterError("half_width must be positive")

    @property
    def lo(self) -> float:
        return self.center - self.half_width

    @property
    def hi(self) -> float:
        return self.center + self.half_width

    @property
    def dx(self) -> float:
        return 2.0 * self.half_width / (self.n_points - 1)


def default_grid(cf: CharFn, n_points: int = dist.GRID_POINTS, sigmas: float = COVERAGE_SIGMAS) -> GridSpec:
    mean, var = cf_moments(cf)
    hw = sigmas * math.sqrt(var)
    hw = max(hw, 1e-3 * max(1.0, abs(mean)))
    return GridSpec(n_points, mean, hw)


def check_coverage(cf: CharFn, grid: GridSpec) -> None:
    """Raise :class:`CoverageError` when the grid would drop more than 1% of mass.

    Grids covering mean ± 8 sd pass outright; narrower ones are judged by the
    moment-matched Gaussian's tail mass and warned about.
    """
    mean, var = cf_moments(cf)
    sd = math.sqrt(var)
    slack = 1e-9 * max(1.0, abs(mean), sd)
    if grid.lo <= mean - COVERAGE_SIGMAS * sd + slack and grid.hi >= mean + COVERAGE_SIGMAS * sd - slack:
        return
    if sd == 0:
        loss = 0.0 if grid.lo <= mean <= grid.hi else 1.0
    else:
        loss = float(dist.norm_cdf((grid.lo - mean) / sd) + dist.norm_cdf((mean - grid.hi) / sd))
    if loss > 0.01:
        raise CoverageError(f"grid [{grid.lo:.4g}, {grid.hi:.4g}] loses ~{loss:.2%} of the mass")
    warnings.warn(f"grid narrower than mean ± {COVERAGE_SIGMAS:g} sd (est. loss {loss:.2e})", NumericWarning,
                  stacklevel=3)


def cf_invert(cf: CharFn, grid: GridSpec | None = None) -> GridPdf:
    """Density on ``grid`` by discrete Fourier inversion of ``cf``.

    ``t`` is sampled at the Nyquist pairing ``dt = 2*pi / (N dx)``; the
    oscillation left after inversion is clipped at zero and the result
    renormalized.
    """
    if grid is None:
        grid = default_grid(cf)
    check_coverage(cf, grid)
    dens = _invert_raw(cf.evaluate, grid)
    dx = grid.dx
    total = float((dens.sum() - 0.5 * (dens[0] + dens[-1])) * dx)
    if total <= 0:
        raise CoverageError("inversion produced no positive density on the grid")
    if abs(total - 1.0) > 1e-3:
        warnings.warn(f"inversion renormalized mass {total:.6f}", NumericWarning, stacklevel=2)
    return GridPdf(grid.lo, dx, dens / total)


def _invert_raw(phi_fn, grid: GridSpec) -> np.ndarray:
    """Clipped, unnormalized density values of ``phi_fn`` on the grid nodes."""
    n = grid.n_points
    dx = grid.dx
    x0 = grid.lo
    dt = 2.0 * math.pi / (n * dx)
    t = (np.arange(n) - n // 2) * dt
    phi = phi_fn(t) * np.exp(-1j * t * x0)
    raw = np.fft.fft(phi).real * (dt / (2.0 * math.pi))
    raw[1::2] *= -1.0
    return np.maximum(raw, 0.0)


def _atoms(cf: CharFn) -> np.ndarray | None:
    """Support points of a purely discrete factor, or None if it has a density."""
    if isinstance(cf, PointMassCF):
        return np.array([cf.c])
    if isinstance(cf, DiscreteCF):
        return None if cf.hat > 0 else np.unique(cf.values)
    if isinstance(cf, Thinned):
        inner = _atoms(cf.inner)
        return None if inner is None else np.union1d(inner, [0.0])
    if isinstance(cf, Scaled):
        inner = _atoms(cf.inner)
        return None if inner is None else np.unique(cf.a * inner)
    if isinstance(cf, Shifted):
        inner = _atoms(cf.inner)
        return None if inner is None else inner + cf.b
    if isinstance(cf, MixtureCF):
        parts = [_atoms(c) for c in cf.children]
        if any(p is None for p in parts):
            return None
        return np.unique(np.concatenate(parts))
    return None


def _lattice_step(diffs: np.ndarray) -> float | None:
    fracs = []
    for d in diffs:
        f = Fraction(float(d)).limit_denominator(10**6)
        if f and abs(float(f) - d) > 1e-9 * max(1.0, abs(d)):
            return None
        if f:
            fracs.append(f)
    if not fracs:
        return 0.0
    num = reduce(math.gcd, (f.numerator for f in fracs))
    den = reduce(lambda a, b: a * b // math.gcd(a, b), (f.denominator for f in fracs))
    return num / den


def is_discrete(cf: CharFn) -> bool:
    factors = cf.children if isinstance(cf, Product) else (cf,)
    return all(_atoms(f) is not None for f in factors)


def cf_invert_lattice(cf: CharFn, prob_floor: float = 1e-15) -> WeightedSamples:
    """Exact pmf of a discrete lattice-supported sum by inverse DFT of its CF.

    The CF is sampled at ``t_k = 2*pi*k / (N h)`` for lattice step ``h``; with
    the whole support inside N lattice points the inversion has no aliasing,
    so the pmf is exact to floating point.
    """
    factors = cf.children if isinstance(cf, Product) else (cf,)
    atom_sets = [_atoms(f) for f in factors]
    if any(a is None for a in atom_sets):
        raise ParameterError("lattice inversion needs a purely discrete characteristic function")
    origin = float(sum(a.min() for a in atom_sets))
    top = float(sum(a.max() for a in atom_sets))
    diffs = np.concatenate([a - a.min() for a in atom_sets])
    step = _lattice_step(diffs[diffs > 0])
    if step is None:
        raise ParameterError("atoms do not share a rational lattice")
    if step == 0.0:
        return WeightedSamples([origin], [1.0], bandwidth=0.0)
    span = int(round((top - origin) / step)) + 1
    if span > MAX_LATTICE_POINTS:
        raise ParameterError(f"lattice needs {span} points (limit {MAX_LATTICE_POINTS})")
    n = 1 << max(6, (span - 1).bit_length())
    k = np.arange(n)
    t = 2.0 * math.pi * k / (n * step)
    phi = cf.evaluate(t) * np.exp(-1j * t * origin)
    pmf = np.fft.fft(phi).real / n
    pmf = pmf[:span]
    pmf[pmf < prob_floor] = 0.0
    keep = pmf > 0
    values = origin + step * np.arange(span)[keep]
    return WeightedSamples(values, pmf[keep] / pmf[keep].sum(), bandwidth=0.0)


# ---------------------------------------------------------------------------
# Fitting a Gaussian mixture to a characteristic function
# ---------------------------------------------------------------------------


@dataclass
class CFFit:
    mixture: GaussianMixture
    objective: float
    converged: bool
    nfev: int


def _unpack(theta: np.ndarray, k: int):
    logits = np.concatenate([[0.0], theta[: k - 1]])
    w = np.exp(logits - logits.max())
    w /= w.sum()
    m = theta[k - 1: 2 * k - 1]
    v = np.exp(theta[2 * k - 1:])
    return w, m, v


def _residuals(theta, k, s, target):
    w, m, v = _unpack(theta, k)
    e = np.exp(1j * np.outer(s, m) - 0.5 * np.outer(s * s, v))
    diff = e @ w - target
    return np.concatenate([diff.real, diff.imag])


def _jacobian(theta, k, s, target):
    w, m, v = _unpack(theta, k)
    e = np.exp(1j * np.outer(s, m) - 0.5 * np.outer(s * s, v))
    model = e @ w
    cols = []
    for l in range(1, k):
        cols.append(w[l] * (e[:, l] - model))
    for i in range(k):
        cols.append(w[i] * 1j * s * e[:, i])
    for i in range(k):
        cols.append(w[i] * (-0.5 * v[i] * s * s) * e[:, i])
    j = np.column_stack(cols)
    return np.vstack([j.real, j.imag])


def _lm_chunked(x0, k, s, target, iter_max):
    """Levenberg-Marquardt in short chunks.

    Stops once scipy reports convergence, the objective drops below
    ``FIT_TOL``, or a chunk improves it by less than ``STALL_RTOL``; scipy's relative tolerances alone never fire on
    the flat valleys left when extra components are redundant.
    """
    x = np.asarray(x0, dtype=float)
    obj = float(np.sum(_residuals(x, k, s, target) ** 2))
    nfev = 0
    while nfev < iter_max:
        res = optimize.least_squares(_residuals, x, jac=_jacobian, args=(k, s, target), method="lm",
                                     max_nfev=min(CHUNK_NFEV, iter_max - nfev), xtol=1e-10, ftol=1e-12)
        nfev += int(res.nfev)
        new = float(np.sum(res.fun**2))
        if new <= obj:
            x, improved = res.x, obj - new
            obj = new
        else:
            improved = 0.0
        if res.status > 0 or obj < FIT_TOL or improved <= STALL_RTOL * obj:
            return x, obj, nfev, True
    return x, obj, nfev, False


def _split_init(k: int, spread: float) -> np.ndarray:
    offsets = np.linspace(-1.0, 1.0, k) * spread
    var = 1.0 - float(np.mean(offsets**2))
    return np.concatenate([np.zeros(k - 1), offsets, np.full(k, math.log(var))])


def _density_init(cf: CharFn, k: int, mean: float, sd: float) -> np.ndarray | None:
    """Start from the modes of the grid inverse, in standardized coordinates.

    Means sit at the k highest local maxima; weights and variances are the
    moments of each mode's nearest-point cell. Missing modes are made by
    splitting the widest cell. EM on the grid points then refines the seeds.
    """
    try:
        g = cf_invert(cf, GridSpec(DENSITY_INIT_POINTS, mean, COVERAGE_SIGMAS * sd))
    except CoverageError:
        return None
    x = (g.x - mean) / sd
    p = np.maximum(g.density, 0.0)
    if not p.sum() > 0:
        return None
    p = p / p.sum()
    inner = (p[1:-1] >= p[:-2]) & (p[1:-1] > p[2:]) & (p[1:-1] > 1e-3 * p.max())
    peaks = 1 + np.flatnonzero(inner)
    centers = list(x[peaks[np.argsort(p[peaks])[::-1]][:k]])
    while True:
        c = np.sort(np.asarray(centers))
        cell = np.argmin(np.abs(x[:, None] - c[None, :]), axis=1)
        w = np.bincount(cell, weights=p, minlength=c.size)
        if np.any(w <= 0):
            return None
        m = np.bincount(cell, weights=p * x, minlength=c.size) / w
        v = np.maximum(np.bincount(cell, weights=p * x * x, minlength=c.size) / w - m * m, 1e-4)
        if c.size >= k:
            break
        j = int(np.argmax(v))
        half = 0.5 * math.sqrt(v[j])
        centers = [*np.delete(m, j), m[j] - half, m[j] + half]
    # EM on the gridded density moves the seeds into the right basin.
    from .fitting import fit_gmm_em

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        mix, _ = fit_gmm_em(WeightedSamples(x, p, bandwidth=0.0), k, init=GaussianMixture(w, m, v))
    if mix.k != k:
        return None
    w, m, v = np.maximum(mix.weights, 1e-6), mix.means, np.maximum(mix.vars, 1e-4)
    return np.concatenate([np.log(w[1:] / w[0]), m, np.log(v)])


def cf_fit_gmm_report(cf: CharFn, k: int, *, n_points: int = FIT_POINTS, restarts: int = FIT_RESTARTS,
                      seed: int = 0, iter_max: int = ITER_MAX) -> CFFit:
    """Least-squares fit of a k-component mixture's CF to ``cf``.

    The fit runs in standardized coordinates (target shifted to mean 0 and
    scaled to variance 1) over ``n_points`` log-spaced t values in (0, 6].
    """
    if not 1 <= k <= K_MAX:
        raise ParameterError(f"k must lie in [1, {K_MAX}], got {k}")
    mean, var = cf_moments(cf)
    if var <= VAR_FLOOR:
        return CFFit(GaussianMixture([1.0], [mean], [VAR_FLOOR]), 0.0, True, 0)
    sd = math.sqrt(var)
    s = 6.0 * np.logspace(-3, 0, n_points)
    target = cf.evaluate(s / sd) * np.exp(-1j * s * mean / sd)
    rng = np.random.default_rng(seed)
    if k == 1:
        inits = [np.array([0.0, 0.0])]
    else:
        spreads = [0.5] + list(rng.uniform(0.2, 0.9, size=max(restarts - 1, 0)))
        inits = [_split_init(k, sp) for sp in spreads[:restarts]]
        # Second attempt (only reached when the first misses RESTART_TOL) is data driven.
        inits.insert(1, lambda: _density_init(cf, k, mean, sd))
    best = None
    for x0 in inits:
        if callable(x0):
            x0 = x0()
            if x0 is None:
                continue
        x, obj, nfev, converged = _lm_chunked(x0, k, s, target, iter_max)
        if best is None or obj < best[1]:
            best = (x, obj, nfev, converged)
        if best[1] < RESTART_TOL:
            break
    x, obj, nfev, converged = best
    w, m, v = _unpack(x, k)
    mix = GaussianMixture(w, mean + sd * m, np.maximum(var * v, VAR_FLOOR))
    if not converged:
        warnings.warn(f"CF fit hit the iteration cap ({iter_max}); returning best iterate", ConvergenceWarning,
                      stacklevel=2)
    fm, fv = mix.moments()
    if abs(fm - mean) > 0.05 * max(abs(mean), sd) or abs(fv - var) > 0.05 * var:
        # Standardize the fit onto the exact moments (shape kept), or use the
        # moment-matched Gaussian if that matches the CF better.
        sw, sm, sv = _unpack(x, k)
        fm_std = float(sw @ sm)
        scale = math.sqrt(1.0 / max(float(sw @ (sv + sm * sm)) - fm_std**2, VAR_FLOOR))
        fixed = np.concatenate([x[: k - 1], (sm - fm_std) * scale, np.log(sv * scale * scale)])
        obj_fixed = float(np.sum(_residuals(fixed, k, s, target) ** 2))
        obj_gauss = float(np.sum(_residuals(np.array([0.0, 0.0]), 1, s, target) ** 2))
        if obj_fixed <= obj_gauss:
            w, m, v = _unpack(fixed, k)
            mix, obj = GaussianMixture(w, mean + sd * m, np.maximum(var * v, VAR_FLOOR)), obj_fixed
        else:
            mix, obj = GaussianMixture([1.0], [mean], [var]), obj_gauss
    return CFFit(mix, obj, converged, nfev)


def cf_fit_gmm(cf: CharFn, k: int, **kwargs) -> GaussianMixture:
    return cf_fit_gmm_report(cf, k, **kwargs).mixture


# ---------------------------------------------------------------------------
# Mixed atomic / continuous laws
# ---------------------------------------------------------------------------


def _atomic_part(cf: CharFn) -> tuple[float, CharFn | None]:
    """(mass, normalized CF) of the atomic component of a single factor."""
    if isinstance(cf, PointMassCF) or (isinstance(cf, DiscreteCF) and cf.hat == 0):
        return 1.0, cf
    if isinstance(cf, Thinned):
        m, a = _atomic_part(cf.inner)
        mass = (1.0 - cf.p) + cf.p * m
        if mass <= 0:
            return 0.0, None
        if a is None or m == 0:
            return mass, PointMassCF(0.0)
        return mass, MixtureCF(((1.0 - cf.p) / mass, cf.p * m / mass), (PointMassCF(0.0), a))
    if isinstance(cf, Scaled):
        m, a = _atomic_part(cf.inner)
        return m, None if a is None else cf_scale(cf.a, a)
    if isinstance(cf, Shifted):
        m, a = _atomic_part(cf.inner)
        return m, None if a is None else cf_shift(cf.b, a)
    if isinstance(cf, MixtureCF):
        parts = [_atomic_part(c) for c in cf.children]
        mass = sum(w * m for w, (m, _) in zip(cf.weights, parts))
        if mass <= 0:
            return 0.0, None
        kids = [(w * m / mass, a) for w, (m, a) in zip(cf.weights, parts) if m > 0]
        if len(kids) == 1:
            return mass, kids[0][1]
        ws = np.array([k[0] for k in kids])
        return mass, MixtureCF(tuple((ws / ws.sum()).tolist()), tuple(k[1] for k in kids))
    return 0.0, None


@dataclass
class MixedLaw:
    """A law split into atoms (total mass ``atom_mass``) and a density part."""

    atoms: WeightedSamples | None
    atom_mass: float
    density: GridPdf | None

    def sf(self, x: float) -> float:
        """P(X > x)."""
        out = 0.0
        if self.atoms is not None and self.atom_mass > 0:
            # Atoms are rebuilt as origin + k * step; an atom within rounding
            # of x is x itself, which must not count as exceeding it.
            above = self.atoms.values > x + 1e-9 * max(1.0, abs(x))
            out += self.atom_mass * float(np.sum(self.atoms.weights[above]))
        if self.density is not None and self.atom_mass < 1:
            out += (1.0 - self.atom_mass) * float(max(0.0, 1.0 - self.density.cdf(x)))
        return min(max(out, 0.0), 1.0)

    def as_samples(self) -> WeightedSamples:
        """Single weighted point set: the atoms plus the density on its grid nodes."""
        vals, wts = [], []
        if self.atoms is not None and self.atom_mass > 0:
            vals.append(self.atoms.values)
            wts.append(self.atom_mass * self.atoms.weights)
        if self.density is not None and self.atom_mass < 1:
            p = self.density.density / self.density.density.sum()
            keep = p > 0
            vals.append(self.density.x[keep])
            wts.append((1.0 - self.atom_mass) * p[keep])
        w = np.concatenate(wts)
        return WeightedSamples(np.concatenate(vals), w / w.sum(), bandwidth=0.0)


def cf_invert_mixed(cf: CharFn, grid: GridSpec | None = None) -> MixedLaw:
    """Invert a CF whose law may have both atoms and a density.

    Factors are split into atomic and continuous components. The product of
    the atomic components is inverted exactly on its lattice; the remainder
    ``cf - atomic`` has no atoms and is inverted on the grid.
    """
    factors = cf.children if isinstance(cf, Product) else (cf,)
    parts = [_atomic_part(f) for f in factors]
    mass = float(np.prod([m for m, _ in parts]))
    if mass < 1e-15:
        return MixedLaw(None, 0.0, cf_invert(cf, grid))
    atomic = cf_product([a for _, a in parts])
    atoms = cf_invert_lattice(atomic)
    if mass >= 1.0 - 1e-15:
        return MixedLaw(atoms, 1.0, None)
    if grid is None:
        grid = default_grid(cf, dist.HDR_POINTS)
    check_coverage(cf, grid)
    dens = _invert_raw(lambda t: cf.evaluate(t) - mass * atomic.evaluate(t), grid)
    total = float((dens.sum() - 0.5 * (dens[0] + dens[-1])) * grid.dx)
    if total <= 0:
        raise CoverageError("continuous part of the law vanished on the grid")
    return MixedLaw(atoms, mass, GridPdf(grid.lo, grid.dx, dens / total))

