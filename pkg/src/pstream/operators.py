"""Relational operators over probabilistic tuples.

Selection, delta-method transforms, event-time windows, aggregation (sum,
avg, count, max, min), a soft group-by over uncertain locations, an
epsilon-ball join, and an aggregate that honours lineage correlation.
"""

from __future__ import annotations

import math
import re
import warnings
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np
from scipy import special

from . import charfn
from . import distributions as dist
from .distributions import (VAR_FLOOR, AxisProduct, Gaussian1D, GaussianMixture, GaussianND, GridPdf, PointMass,
                            Predicate, WeightedSamples)
from .errors import (ArchiveMissError, CorrelationError, InputError, MethodError, NumericWarning, ParameterError,
                     UnsupportedLineageError, ZeroMassError)
from .tuples import BaseRef, Derived, IdGen, ProbTuple, default_ids

DROP_THRESHOLD = 0.05
CLT_MIN = 30
HIST_BINS = 32
HIST_SAMPLES = 4000
MAX_POINTS = 4096
JOIN_NODES = 256
BOX_NODES = 32
JOIN_SIGMAS = 10.0
JOIN_MC_SAMPLES = 100_000
LINEAGE_MC_SAMPLES = 100_000
LINEAGE_BINS = 512
MIN_MEMBERSHIP = 1e-9


@dataclass
class OpMetrics:
    tuples_in: int = 0
    tuples_out: int = 0
    dropped: int = 0
    zero_mass: int = 0
    late: int = 0

    def merge(self, other: "OpMetrics") -> None:
        for name in ("tuples_in", "tuples_out", "dropped", "zero_mass", "late"):
            setattr(self, name, getattr(self, name) + getattr(other, name))


def _as_univariate(v):
    if isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool):
        return PointMass(float(v))
    if dist.is_univariate(v):
        return v
    raise InputError(f"expected a scalar or univariate distribution, got {type(v).__name__}")


def _is_scalar(v) -> bool:
    return isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool)


def _attr(t: ProbTuple, attr: str):
    try:
        return t.attrs[attr]
    except KeyError:
        raise InputError(f"tuple {t.id} has no attribute {attr!r}") from None


# ---------------------------------------------------------------------------
# Selection and transform
# ---------------------------------------------------------------------------


def select_filter(t: ProbTuple, attr: str, predicate: Predicate, tau: float = DROP_THRESHOLD,
                  metrics: OpMetrics | None = None) -> ProbTuple | None:
    """Probabilistic selection.

    A derived tuple (id suffixed ``/sel``, same lineage) is returned.

    The attribute is replaced by its conditional law given the predicate and
    the existence probability is multiplied by the predicate mass. Tuples left
    with existence below ``tau`` are dropped. Scalar attributes filter crisply.
    """
    m = metrics if metrics is not None else OpMetrics()
    m.tuples_in += 1
    v = _attr(t, attr)
    if _is_scalar(v):
        if bool(predicate.holds(float(v))):
            m.tuples_out += 1
            return t
        m.dropped += 1
        return None
    try:
        mass, cond = dist.truncate(v, predicate)
    except ZeroMassError:
        m.zero_mass += 1
        m.dropped += 1
        return None
    existence = t.existence * mass
    if existence < tau:
        m.dropped += 1
        return None
    derivs = t.all_derivations()
    src = t.derivation(attr)
    step = (predicate.lo, predicate.hi, predicate.lo_closed, predicate.hi_closed)
    derivs[attr] = None if src is None else Derived("truncate", step, src)
    attrs = dict(t.attrs)
    attrs[attr] = cond
    m.tuples_out += 1
    return t.replace(id=f"{t.id}/sel", attrs=attrs, existence=existence, lineage=t.lineage, derivations=derivs)


def affine_value(v, a: float, b: float):
    """Exact image of a univariate value under x -> a*x + b."""
    if _is_scalar(v):
        return a * float(v) + b
    if isinstance(v, PointMass):
        return PointMass(a * v.value + b)
    if isinstance(v, Gaussian1D):
        return Gaussian1D(a * v.mean + b, a * a * v.var)
    if isinstance(v, GaussianMixture):
        return GaussianMixture(v.weights, a * v.means + b, a * a * v.vars)
    if isinstance(v, WeightedSamples) and v.values.ndim == 1:
        bw = None if v.bandwidth is None else abs(a) * v.bandwidth
        return WeightedSamples(a * v.values + b, v.weights, bw)
    if isinstance(v, GridPdf):
        if a == 0:
            return PointMass(b)
        if a > 0:
            return GridPdf(a * v.x0 + b, a * v.dx, v.density / a)
        top = v.x0 + v.dx * (v.density.size - 1)
        return GridPdf(a * top + b, -a * v.dx, v.density[::-1] / -a)
    raise InputError(f"affine map not defined for {type(v).__name__}")


def transform_delta(t: ProbTuple, attr: str, g: Callable | None = None, grad: Callable | None = None, *,
                    affine: tuple[float, float] | None = None, out_attr: str | None = None) -> ProbTuple:
    """Apply a scalar function to an uncertain attribute.

    With ``affine=(a, b)`` the result is exact and replayable. Otherwise the
    first-order delta method gives a Gaussian with mean g(mu) and variance
    grad(mu)' Sigma grad(mu); ``grad`` is required.
    """
    v = _attr(t, attr)
    out_attr = out_attr or attr
    derivs = t.all_derivations()
    attrs = dict(t.attrs)
    if affine is not None:
        a, b = float(affine[0]), float(affine[1])
        attrs[out_attr] = affine_value(v, a, b)
        src = t.derivation(attr)
        derivs[out_attr] = None if src is None else Derived("affine", (a, b), src)
        return t.replace(id=f"{t.id}/fx", attrs=attrs, lineage=t.lineage, derivations=derivs)
    if g is None or grad is None:
        raise ParameterError("non-affine transforms need both g and its gradient")
    if isinstance(v, Gaussian1D):
        mu = v.mean
        gr = np.atleast_1d(np.asarray(grad(mu), dtype=float))
        cov = np.array([[v.var]])
    elif isinstance(v, GaussianND):
        mu = v.mean
        gr = np.asarray(grad(mu), dtype=float).reshape(-1)
        cov = v.cov
        if gr.size != mu.size:
            raise InputError("gradient dimension does not match the attribute")
    else:
        raise InputError("the delta method needs a Gaussian1D or GaussianND attribute")
    var = float(gr @ cov @ gr)
    if not np.any(gr) and float(np.trace(cov)) > VAR_FLOOR:
        warnings.warn("zero gradient at the mean: delta-method variance degenerates", NumericWarning, stacklevel=2)
    attrs[out_attr] = Gaussian1D(float(g(mu)), max(var, VAR_FLOOR))
    derivs[out_attr] = None
    return t.replace(id=f"{t.id}/fx", attrs=attrs, lineage=t.lineage, derivations=derivs)


# ---------------------------------------------------------------------------
# Windows
# ---------------------------------------------------------------------------


class WindowMode(str, Enum):
    RANGE = "RANGE"
    NOW = "NOW"


@dataclass(frozen=True)
class WindowSpec:
    range: float
    slide: float = 1.0
    mode: WindowMode = WindowMode.RANGE

    def __post_init__(self):
        object.__setattr__(self, "mode", WindowMode(self.mode))
        if self.range < 0:
            raise ParameterError("window range must be >= 0")
        if not self.slide > 0:
            raise ParameterError("window slide must be > 0")
        if self.mode is WindowMode.NOW and self.range != 0:
            raise ParameterError("NOW windows have range 0")


@dataclass
class WindowClosure:
    window_id: int
    start: float  # exclusive
    end: float  # inclusive
    tuples: list


class Windower:
    """Event-time windowing with a watermark of (max timestamp - disorder).

    RANGE windows (T - range, T] end on multiples of ``slide`` and close once
    the watermark passes T. Tuples older than the watermark go to ``late``.
    Empty windows are not emitted.
    """

    def __init__(self, spec: WindowSpec, disorder: float = 0.0, origin: float = 0.0):
        if disorder < 0:
            raise ParameterError("disorder bound must be >= 0")
        self.spec = spec
        self.disorder = float(disorder)
        self.origin = float(origin)
        self.max_ts = -math.inf
        self.buffer: deque = deque()
        self.late: list = []
        self.next_k: int | None = None
        self._now_id = 0

    @property
    def watermark(self) -> float:
        return self.max_ts - self.disorder

    def _k_for(self, ts: float) -> int:
        # Smallest k with origin + k * slide >= ts.
        return math.ceil((ts - self.origin) / self.spec.slide - 1e-12)

    def _end(self, k: int) -> float:
        return self.origin + k * self.spec.slide

    def push(self, t: ProbTuple) -> list[WindowClosure]:
        if t.ts < self.watermark:
            self.late.append(t)
            return []
        self.max_ts = max(self.max_ts, t.ts)
        if self.spec.mode is WindowMode.NOW:
            self._now_id += 1
            return [WindowClosure(self._now_id - 1, t.ts, t.ts, [t])]
        # Keep the buffer ordered; arrivals within the disorder bound may be out of order.
        if self.buffer and t.ts < self.buffer[-1].ts:
            items = sorted([*self.buffer, t], key=lambda u: u.ts)
            self.buffer = deque(items)
        else:
            self.buffer.append(t)
        k = self._k_for(t.ts)
        if self.next_k is None or k < self.next_k:
            self.next_k = k
        return self._close(lambda end: self.watermark > end)

    def flush(self) -> list[WindowClosure]:
        if self.spec.mode is WindowMode.NOW:
            return []
        return self._close(lambda end: True)

    def _close(self, ready: Callable[[float], bool]) -> list[WindowClosure]:
        out = []
        while self.buffer and self.next_k is not None and ready(self._end(self.next_k)):
            end = self._end(self.next_k)
            start = end - self.spec.range
            members = [u for u in self.buffer if start < u.ts <= end]
            if members:
                out.append(WindowClosure(self.next_k, start, end, members))
            self.next_k += 1
            # Tuples at or before the next window's start can no longer be used.
            limit = self._end(self.next_k) - self.spec.range
            while self.buffer and self.buffer[0].ts <= limit:
                self.buffer.popleft()
            if self.buffer:
                self.next_k = max(self.next_k, self._k_for(self.buffer[0].ts))
        return out


def window_assign(stream: Iterable[ProbTuple], spec: WindowSpec, disorder: float = 0.0,
                  late: list | None = None) -> Iterator[WindowClosure]:
    w = Windower(spec, disorder)
    for t in stream:
        yield from w.push(t)
    yield from w.flush()
    if late is not None:
        late.extend(w.late)


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


class Method(str, Enum):
    CF_INVERT = "CF_INVERT"
    CF_FIT = "CF_FIT"
    CLT = "CLT"
    HIST_SAMPLE = "HIST_SAMPLE"


@dataclass(frozen=True)
class AggMethod:
    name: Method = Method.CF_INVERT
    k: int = 3
    bins: int = HIST_BINS
    samples: int = HIST_SAMPLES
    seed: int = 0
    n_points: int = dist.GRID_POINTS

    def __post_init__(self):
        object.__setattr__(self, "name", Method(self.name))

    @classmethod
    def parse(cls, text: str, **defaults) -> "AggMethod":
        """``CF_INVERT``, ``CF_FIT(3)``, ``CLT``, ``HIST_SAMPLE(32,4000)``."""
        m = re.fullmatch(r"\s*([A-Z_]+)\s*(?:\(([^)]*)\))?\s*", text.upper())
        if not m:
            raise ParameterError(f"cannot parse aggregation method {text!r}")
        try:
            name = Method(m.group(1))
        except ValueError:
            raise ParameterError(f"unknown aggregation method {m.group(1)!r}") from None
        args = [int(a) for a in m.group(2).split(",")] if m.group(2) else []
        kw = dict(defaults)
        if name is Method.CF_FIT and args:
            kw["k"] = args[0]
        if name is Method.HIST_SAMPLE and args:
            kw["bins"] = args[0]
            if len(args) > 1:
                kw["samples"] = args[1]
        return cls(name, **kw)


def _check_disjoint(tuples: Sequence[ProbTuple]) -> None:
    seen: dict[str, str] = {}
    for t in tuples:
        for b in t.lineage:
            if b in seen:
                raise CorrelationError(f"tuples {seen[b]} and {t.id} share base tuple {b}; "
                                       "use lineage_aware_agg for correlated inputs")
            seen[b] = t.id


def _check_inputs(tuples: Sequence[ProbTuple], attr: str, need_certain: bool = True) -> list:
    if not tuples:
        raise ParameterError("aggregation over an empty set of tuples")
    if need_certain:
        for t in tuples:
            if t.existence < 1.0:
                raise InputError(f"tuple {t.id} has existence {t.existence:.4g}; aggregate over uncertain "
                                 "existence with group_by_region_sum")
    _check_disjoint(tuples)
    return [_as_univariate(_attr(t, attr)) for t in tuples]


def _result_tuple(tuples: Sequence[ProbTuple], attrs: dict, ids: IdGen | None, existence: float = 1.0):
    lineage = frozenset().union(*(t.lineage for t in tuples))
    tid = (ids or default_ids())()
    return ProbTuple(tid, max(t.ts for t in tuples), attrs, existence, lineage)


def hist_sample_sum(values: Sequence, bins: int, samples: int, rng: np.random.Generator, scale: float = 1.0):
    """Histogram-and-sample baseline.

    Each input is cut into ``bins`` equal-width cells over its support with
    CDF-difference probabilities; draws pick a cell and a uniform point in it.
    """
    total = np.zeros(samples)
    for v in values:
        lo, hi = dist.support(v)
        if isinstance(v, PointMass) or not hi > lo:
            total += dist.moments(v)[0]
            continue
        edges = np.linspace(lo, hi, bins + 1)
        p = np.diff(dist.cdf_at(v, edges))
        p = np.maximum(p, 0.0)
        p /= p.sum()
        cells = rng.choice(bins, size=samples, p=p)
        total += edges[cells] + rng.random(samples) * (edges[1] - edges[0])
    return WeightedSamples(scale * total)


def sum_distribution(values: Sequence, method: AggMethod, scale: float = 1.0):
    """Distribution of ``scale * sum(values)`` for independent univariate values."""
    n = len(values)
    if method.name is Method.CLT:
        if n < CLT_MIN:
            raise MethodError(f"CLT needs at least {CLT_MIN} inputs, got {n}")
        mv = [dist.moments(v) for v in values]
        return Gaussian1D(scale * sum(m for m, _ in mv), scale * scale * sum(v for _, v in mv))
    if method.name is Method.HIST_SAMPLE:
        return hist_sample_sum(values, method.bins, method.samples, np.random.default_rng(method.seed), scale)
    cf = charfn.cf_product([charfn.cf_of(v) for v in values])
    if scale != 1.0:
        cf = charfn.cf_scale(scale, cf)
    if method.name is Method.CF_FIT:
        return charfn.cf_fit_gmm(cf, method.k)
    return charfn.cf_invert(cf, charfn.default_grid(cf, method.n_points))


def agg_sum(tuples: Sequence[ProbTuple], attr: str, method: AggMethod | str = "CF_INVERT", *,
            out_attr: str | None = None, ids: IdGen | None = None) -> ProbTuple:
    if isinstance(method, str):
        method = AggMethod.parse(method)
    values = _check_inputs(tuples, attr)
    return _result_tuple(tuples, {out_attr or attr: sum_distribution(values, method)}, ids)


def agg_avg(tuples: Sequence[ProbTuple], attr: str, method: AggMethod | str = "CF_INVERT", *,
            out_attr: str | None = None, ids: IdGen | None = None) -> ProbTuple:
    if isinstance(method, str):
        method = AggMethod.parse(method)
    values = _check_inputs(tuples, attr)
    return _result_tuple(tuples, {out_attr or attr: sum_distribution(values, method, 1.0 / len(values))}, ids)


def agg_count(tuples: Sequence[ProbTuple], *, out_attr: str = "count", ids: IdGen | None = None) -> ProbTuple:
    if not tuples:
        raise ParameterError("aggregation over an empty set of tuples")
    for t in tuples:
        if t.existence < 1.0:
            raise InputError(f"tuple {t.id} has uncertain existence; count covers certain tuples only")
    return _result_tuple(tuples, {out_attr: len(tuples)}, ids)


def _shared_edges(values: Sequence, n_points: int) -> np.ndarray:
    spans = [dist.support(v) for v in values]
    lo = min(s[0] for s in spans)
    hi = max(s[1] for s in spans)
    pad = 4 * (hi - lo) / n_points
    return np.linspace(lo - pad, hi + pad, n_points + 1)


def _cdf_on(v, x: np.ndarray) -> np.ndarray:
    return np.asarray(dist.cdf_at(v, x), dtype=float)


def extreme_distribution(values: Sequence, kind: str = "max", n_points: int = MAX_POINTS):
    """Law of the max (or min) of independent values from the CDF product."""
    if all(isinstance(v, PointMass) for v in values):
        pick = max if kind == "max" else min
        return PointMass(pick(v.value for v in values))
    edges = _shared_edges(values, n_points)
    if kind == "max":
        cdf = np.ones_like(edges)
        for v in values:
            cdf *= _cdf_on(v, edges)
    else:
        surv = np.ones_like(edges)
        for v in values:
            surv *= 1.0 - _cdf_on(v, edges)
        cdf = 1.0 - surv
    cdf = np.maximum.accumulate(np.clip(cdf, 0.0, 1.0))
    mass = np.diff(cdf)
    dx = edges[1] - edges[0]
    return GridPdf(edges[0] + 0.5 * dx, dx, mass / dx, normalize=True)


def agg_max(tuples: Sequence[ProbTuple], attr: str, *, out_attr: str | None = None, ids: IdGen | None = None,
            n_points: int = MAX_POINTS) -> ProbTuple:
    values = _check_inputs(tuples, attr)
    return _result_tuple(tuples, {out_attr or attr: extreme_distribution(values, "max", n_points)}, ids)


def agg_min(tuples: Sequence[ProbTuple], attr: str, *, out_attr: str | None = None, ids: IdGen | None = None,
            n_points: int = MAX_POINTS) -> ProbTuple:
    values = _check_inputs(tuples, attr)
    return _result_tuple(tuples, {out_attr or attr: extreme_distribution(values, "min", n_points)}, ids)


# ---------------------------------------------------------------------------
# Group-by over uncertain regions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Region:
    id: str
    lo: tuple
    hi: tuple

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(c) for c in self.lo))
        object.__setattr__(self, "hi", tuple(float(c) for c in self.hi))
        if len(self.lo) != len(self.hi) or any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ParameterError(f"region {self.id} has an empty or malformed box")

    @property
    def volume(self) -> float:
        return float(np.prod(np.subtract(self.hi, self.lo)))

    def contains(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return np.all((pts >= self.lo) & (pts < self.hi), axis=1)


@dataclass
class RegionPartition:
    regions: list
    area_lo: tuple | None = None
    area_hi: tuple | None = None

    def __post_init__(self):
        if not self.regions:
            raise ParameterError("partition needs at least one region")
        dims = {len(r.lo) for r in self.regions}
        if len(dims) != 1:
            raise ParameterError("regions have mixed dimensions")
        if len({r.id for r in self.regions}) != len(self.regions):
            raise ParameterError("duplicate region ids")
        lo = np.array([r.lo for r in self.regions])
        hi = np.array([r.hi for r in self.regions])
        for i in range(len(self.regions)):
            overlap = np.all((np.maximum(lo[i], lo[i + 1:]) < np.minimum(hi[i], hi[i + 1:])), axis=1)
            if np.any(overlap):
                j = i + 1 + int(np.flatnonzero(overlap)[0])
                raise ParameterError(f"regions {self.regions[i].id} and {self.regions[j].id} overlap")
        if self.area_lo is None:
            self.area_lo = tuple(lo.min(axis=0).tolist())
            self.area_hi = tuple(hi.max(axis=0).tolist())
        area = float(np.prod(np.subtract(self.area_hi, self.area_lo)))
        if abs(sum(r.volume for r in self.regions) - area) > 1e-9 * max(area, 1.0):
            raise ParameterError("regions do not cover the configured area")

    @property
    def dim(self) -> int:
        return len(self.regions[0].lo)

    @classmethod
    def grid(cls, lo: Sequence[float], hi: Sequence[float], cell: float | Sequence[float]) -> "RegionPartition":
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        cell = np.broadcast_to(np.asarray(cell, dtype=float), lo.shape)
        counts = np.round((hi - lo) / cell).astype(int)
        if np.any(counts < 1) or not np.allclose(lo + counts * cell, hi):
            raise ParameterError("cell size must divide the area evenly")
        regions = []
        for idx in np.ndindex(*counts):
            a = lo + np.array(idx) * cell
            regions.append(Region("r" + "_".join(map(str, idx)), tuple(a), tuple(a + cell)))
        return cls(regions, tuple(lo), tuple(hi))

    def to_dict(self) -> dict:
        return {"regions": [{"id": r.id, "lo": list(r.lo), "hi": list(r.hi)} for r in self.regions]}

    @classmethod
    def from_dict(cls, obj: dict) -> "RegionPartition":
        if "grid" in obj:
            g = obj["grid"]
            return cls.grid(g["lo"], g["hi"], g["cell"])
        return cls([Region(str(r["id"]), r["lo"], r["hi"]) for r in obj["regions"]])


def gaussian_box_probability(mean, cov, lo, hi, nodes: int = BOX_NODES) -> float:
    """P(lo <= X <= hi) for X ~ N(mean, cov), deterministic.

    Genz's separation of variables: with X = mean + L Z (Cholesky), each axis
    in turn contributes the normal mass of its conditional interval given the
    earlier standardized coordinates. The integral over those coordinates
    (mapped to the unit cube) uses a tensor Gauss-Legendre rule; the last axis
    needs no nodes.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    lo = np.asarray(lo, dtype=float) - mean
    hi = np.asarray(hi, dtype=float) - mean
    d = mean.size
    jitter = 1e-12 * max(float(np.trace(cov)) / d, 1e-300)
    chol = np.linalg.cholesky(cov + jitter * np.eye(d))
    u, wq = np.polynomial.legendre.leggauss(nodes)
    u, wq = 0.5 * (u + 1.0), 0.5 * wq
    grids = np.meshgrid(*([u] * (d - 1)), indexing="ij")
    weight = np.ones(nodes ** (d - 1))
    for g in np.meshgrid(*([wq] * (d - 1)), indexing="ij"):
        weight = weight * g.reshape(-1)
    z = np.zeros((weight.size, d))
    mass = np.ones(weight.size)
    for i in range(d):
        shift = z[:, :i] @ chol[i, :i]
        pa = special.ndtr((lo[i] - shift) / chol[i, i])
        pb = special.ndtr((hi[i] - shift) / chol[i, i])
        e = np.maximum(pb - pa, 0.0)
        mass = mass * e
        if i < d - 1:
            q = np.clip(pa + grids[i].reshape(-1) * e, 1e-300, 1.0 - 1e-16)
            z[:, i] = special.ndtri(q)
    return float(min(max(np.dot(weight, mass), 0.0), 1.0))


def membership(loc, regions: Sequence[Region]) -> np.ndarray:
    """Probability that an uncertain location lies in each region."""
    if isinstance(loc, GaussianND):
        mean, cov = loc.mean, loc.cov
        off = cov - np.diag(np.diag(cov))
        if np.all(np.abs(off) <= 1e-12 * np.max(np.diag(cov))):
            sd = np.sqrt(np.diag(cov))
            out = np.empty(len(regions))
            for i, r in enumerate(regions):
                a = special.ndtr((np.asarray(r.lo) - mean) / sd)
                b = special.ndtr((np.asarray(r.hi) - mean) / sd)
                out[i] = float(np.prod(np.maximum(b - a, 0.0)))
            return out
        return np.array([gaussian_box_probability(mean, cov, r.lo, r.hi) for r in regions])
    if isinstance(loc, WeightedSamples):
        pts = np.asarray(loc.values).reshape(loc.values.shape[0], -1)
        return np.array([float(np.sum(loc.weights[r.contains(pts)])) for r in regions])
    if isinstance(loc, AxisProduct):
        out = np.ones(len(regions))
        for axis, m in enumerate(loc.marginals):
            lo = np.array([r.lo[axis] for r in regions])
            hi = np.array([r.hi[axis] for r in regions])
            out *= np.maximum(_cdf_on(m, hi) - _cdf_on(m, lo), 0.0)
        return out
    if isinstance(loc, (list, tuple, np.ndarray)):
        pt = np.asarray(loc, dtype=float).reshape(1, -1)
        return np.array([float(r.contains(pt)[0]) for r in regions])
    raise InputError(f"cannot compute region membership for {type(loc).__name__}")


@dataclass
class RegionResult:
    region_id: str
    total: object
    exceed_prob: float
    alert: bool
    expected: float
    lineage: frozenset = frozenset()
    ts: float = 0.0

    def to_tuple(self, ids: IdGen | None = None) -> ProbTuple:
        tid = (ids or default_ids())()
        return ProbTuple(tid, self.ts, {"region": self.region_id, "total": self.total,
                                        "exceed_prob": self.exceed_prob, "alert": self.alert},
                         1.0, self.lineage or frozenset([tid]))


def _weight_cf(v):
    return charfn.cf_of(_as_univariate(v))


def _exceed(cf: charfn.CharFn, threshold: float):
    """(total distribution, P(total > threshold))."""
    if isinstance(cf, charfn.GaussianCF):
        g = Gaussian1D(cf.mean, cf.var)
        return g, float(g.sf(threshold))
    try:
        law = charfn.cf_invert_mixed(cf)
    except ParameterError:
        # Atoms off a common lattice: fall back to plain grid inversion.
        total = charfn.cf_invert(cf, charfn.default_grid(cf, dist.HDR_POINTS))
        return total, float(max(0.0, 1.0 - total.cdf(threshold)))
    if law.atom_mass == 0.0:
        return law.density, law.sf(threshold)
    return law.as_samples(), law.sf(threshold)


def group_by_region_sum(tuples: Sequence[ProbTuple], loc_attr: str, partition: RegionPartition, weight_attr: str,
                        threshold: float, alpha: float = 0.5) -> list[RegionResult]:
    """Per-region total weight with each tuple present in a region with
    probability membership * existence (independent Bernoulli thinning).

    Regions are analyzed marginally: a tuple's memberships in different
    regions are treated as independent. Regions whose every contribution is
    below 1e-9 are omitted.
    """
    if not tuples:
        return []
    regions = partition.regions
    probs = np.empty((len(tuples), len(regions)))
    spilled = []
    for i, t in enumerate(tuples):
        p = membership(_attr(t, loc_attr), regions)
        outside = 1.0 - float(p.sum())
        if outside > 0.01:
            spilled.append((outside, t.id))
        probs[i] = np.clip(p, 0.0, 1.0) * t.existence
    if spilled:
        worst, wid = max(spilled)
        warnings.warn(f"{len(spilled)} tuple(s) have over 1% of their location mass outside the partition "
                      f"(worst: {wid}, {worst:.3f})", NumericWarning, stacklevel=2)
    out = []
    for j, r in enumerate(regions):
        col = probs[:, j]
        members = np.flatnonzero(col >= MIN_MEMBERSHIP)
        if members.size == 0:
            continue
        factors = [charfn.bernoulli_thin(float(min(col[i], 1.0)), _weight_cf(_attr(tuples[i], weight_attr)))
                   for i in members]
        cf = charfn.cf_product(factors)
        total, exceed = _exceed(cf, threshold)
        expected = float(charfn.cf_moments(cf)[0])
        lineage = frozenset().union(*(tuples[i].lineage for i in members))
        ts = max(tuples[i].ts for i in members)
        out.append(RegionResult(r.id, total, exceed, exceed > alpha, expected, lineage, ts))
    return out


# ---------------------------------------------------------------------------
# Epsilon-ball join
# ---------------------------------------------------------------------------


def _as_gaussian_nd(v) -> GaussianND | None:
    if isinstance(v, GaussianND):
        return v
    if isinstance(v, (list, tuple, np.ndarray)):
        m = np.asarray(v, dtype=float).reshape(-1)
        return GaussianND(m, np.zeros((m.size, m.size)))
    return None


def _sample_location(v, n: int, rng: np.random.Generator) -> np.ndarray:
    if isinstance(v, (list, tuple, np.ndarray)):
        return np.broadcast_to(np.asarray(v, dtype=float), (n, len(v)))
    if isinstance(v, (GaussianND, AxisProduct, WeightedSamples)):
        return np.asarray(v.sample(rng, n), dtype=float).reshape(n, -1)
    raise InputError(f"cannot sample a location from {type(v).__name__}")


def ball_probability_gaussian(mean: np.ndarray, cov: np.ndarray, eps: float, nodes: int = JOIN_NODES) -> float:
    """P(|D| <= eps) for D ~ N(mean, cov) in 1 to 3 dimensions.

    In the eigenbasis the coordinates are independent; the last one is
    integrated in closed form and the others by nested Gauss-Legendre rules
    over the ball, each clipped to +-10 standard deviations.
    """
    vals, vecs = np.linalg.eigh(np.atleast_2d(cov))
    m = vecs.T @ np.atleast_1d(mean)
    sd = np.sqrt(np.maximum(vals, VAR_FLOOR))
    order = np.argsort(sd)[::-1]  # widest axis innermost in closed form
    m, sd = m[order], sd[order]
    d = m.size
    gx, gw = np.polynomial.legendre.leggauss(nodes)

    def inner(r2: np.ndarray, axis: int) -> np.ndarray:
        # Probability mass of coordinates axis.. within the remaining radius^2 r2.
        r = np.sqrt(np.maximum(r2, 0.0))
        if axis == d - 1:
            return np.maximum(special.ndtr((r - m[axis]) / sd[axis]) - special.ndtr((-r - m[axis]) / sd[axis]), 0.0)
        lo = np.maximum(-r, m[axis] - JOIN_SIGMAS * sd[axis])
        hi = np.minimum(r, m[axis] + JOIN_SIGMAS * sd[axis])
        width = np.maximum(hi - lo, 0.0)
        x = 0.5 * (lo + hi)[..., None] + 0.5 * width[..., None] * gx
        dens = np.exp(-0.5 * ((x - m[axis]) / sd[axis]) ** 2) / (sd[axis] * math.sqrt(2 * math.pi))
        rest = inner(r2[..., None] - x * x, axis + 1)
        return 0.5 * width * np.sum(gw * dens * rest, axis=-1)

    return float(np.clip(inner(np.array(eps * eps), 0), 0.0, 1.0))


def match_probability(a, b, eps: float, *, nodes: int = JOIN_NODES, mc_samples: int = JOIN_MC_SAMPLES,
                      rng: np.random.Generator | None = None) -> float:
    if eps < 0:
        raise ParameterError("eps must be >= 0")
    ga, gb = _as_gaussian_nd(a), _as_gaussian_nd(b)
    if ga is not None and gb is not None:
        if ga.mean.size != gb.mean.size:
            raise InputError("locations have different dimensions")
        if eps == 0:
            return 0.0
        return ball_probability_gaussian(ga.mean - gb.mean, ga.cov + gb.cov, eps, nodes)
    rng = rng or np.random.default_rng(0)
    xa = _sample_location(a, mc_samples, rng)
    xb = _sample_location(b, mc_samples, rng)
    if xa.shape[1] != xb.shape[1]:
        raise InputError("locations have different dimensions")
    return float(np.mean(np.sum((xa - xb) ** 2, axis=1) <= eps * eps))


def merge_tuples(left: ProbTuple, right: ProbTuple, existence: float, extra: Mapping | None = None) -> ProbTuple:
    attrs = dict(left.attrs)
    derivs = left.all_derivations()
    for name, v in right.attrs.items():
        key = name if name not in attrs else f"r.{name}"
        attrs[key] = v
        d = right.derivation(name)
        derivs[key] = d
    for name in attrs:
        if name not in derivs:
            derivs[name] = None
    if extra:
        for name, v in extra.items():
            attrs[name] = v
            derivs[name] = None
    return ProbTuple(f"{left.id}*{right.id}", max(left.ts, right.ts), attrs, existence,
                     left.lineage | right.lineage, derivs)


def join_prob_equal(left: Sequence[ProbTuple], right: Sequence[ProbTuple], left_attr: str, right_attr: str,
                    eps: float, *, rho: float = 0.5, mc_samples: int = JOIN_MC_SAMPLES, seed: int = 0,
                    nodes: int = JOIN_NODES) -> list[ProbTuple]:
    """Pairs whose locations lie within ``eps`` of each other with probability >= rho."""
    rng = np.random.default_rng(seed)
    out = []
    for lt in left:
        for rt in right:
            p = match_probability(_attr(lt, left_attr), _attr(rt, right_attr), eps, nodes=nodes,
                                  mc_samples=mc_samples, rng=rng)
            if p >= rho and p > 0:
                out.append(merge_tuples(lt, rt, lt.existence * rt.existence * p, {"p_match": p}))
    return out


# ---------------------------------------------------------------------------
# Lineage-aware aggregation
# ---------------------------------------------------------------------------


class BaseTupleArchive:
    """Base tuples kept for replaying derivations, evicted by watermark age."""

    def __init__(self, horizon: float = math.inf):
        self.horizon = float(horizon)
        self._items: dict[str, ProbTuple] = {}

    def add(self, t: ProbTuple) -> None:
        self._items[t.id] = t

    def extend(self, ts: Iterable[ProbTuple]) -> None:
        for t in ts:
            self.add(t)

    def get(self, tid: str) -> ProbTuple:
        try:
            return self._items[tid]
        except KeyError:
            raise ArchiveMissError(f"base tuple {tid} is not in the archive") from None

    def __contains__(self, tid: str) -> bool:
        return tid in self._items

    def __len__(self) -> int:
        return len(self._items)

    def evict(self, watermark: float) -> int:
        cutoff = watermark - self.horizon
        old = [k for k, t in self._items.items() if t.ts < cutoff]
        for k in old:
            del self._items[k]
        return len(old)


def _correlation_groups(tuples: Sequence[ProbTuple]) -> list[list[int]]:
    parent = list(range(len(tuples)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    owner: dict[str, int] = {}
    for i, t in enumerate(tuples):
        for b in sorted(t.lineage):
            if b in owner:
                ri, rj = find(i), find(owner[b])
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
            else:
                owner[b] = i
    groups: dict[int, list[int]] = {}
    for i in range(len(tuples)):
        groups.setdefault(find(i), []).append(i)
    return list(groups.values())


def _chain(deriv) -> tuple[BaseRef, list[Derived]]:
    steps = []
    while isinstance(deriv, Derived):
        steps.append(deriv)
        deriv = deriv.source
    if not isinstance(deriv, BaseRef):
        raise UnsupportedLineageError("derivation does not end at a base attribute")
    return deriv, steps[::-1]


def _base_value(archive: BaseTupleArchive, ref: BaseRef):
    base = archive.get(ref.tuple_id)
    if ref.attr not in base.attrs:
        raise UnsupportedLineageError(f"base tuple {ref.tuple_id} has no attribute {ref.attr!r}")
    return _as_univariate(base.attrs[ref.attr])


def _group_chains(members: Sequence[ProbTuple], attr: str):
    chains = []
    for t in members:
        d = t.derivation(attr)
        if d is None:
            raise UnsupportedLineageError(f"tuple {t.id} has no replayable derivation for {attr!r}")
        ref, steps = _chain(d)
        for s in steps:
            if s.op not in ("affine", "truncate"):
                raise UnsupportedLineageError(f"derivation step {s.op!r} cannot be replayed")
        chains.append((ref, steps))
    return chains


def _affine_group_cf(chains, archive: BaseTupleArchive) -> charfn.CharFn | None:
    """Exact CF of a group sum when every member is an affine image of a base."""
    coef: dict[BaseRef, float] = {}
    const = 0.0
    for ref, steps in chains:
        a, b = 1.0, 0.0
        for s in steps:
            if s.op != "affine":
                return None
            sa, sb = s.params
            a, b = sa * a, sa * b + sb
        coef[ref] = coef.get(ref, 0.0) + a
        const += b
    factors = [charfn.cf_scale(c, charfn.cf_of(_base_value(archive, ref))) for ref, c in coef.items() if c != 0.0]
    cf = charfn.cf_product(factors) if factors else charfn.PointMassCF(0.0)
    return charfn.cf_shift(const, cf) if const else cf


def _replay_group(chains, archive: BaseTupleArchive, op: str, n: int, rng: np.random.Generator) -> np.ndarray:
    """Monte Carlo draws of the group's sum or max, sampling each shared base once per draw."""
    draws: dict[BaseRef, np.ndarray] = {}
    for ref, _ in chains:
        if ref not in draws:
            draws[ref] = np.asarray(_base_value(archive, ref).sample(rng, n), dtype=float).reshape(n)
    keep = np.ones(n, dtype=bool)
    values = []
    for ref, steps in chains:
        x = draws[ref].copy()
        for s in steps:
            if s.op == "affine":
                x = s.params[0] * x + s.params[1]
            else:
                keep &= Predicate(*s.params).holds(x)
        values.append(x)
    stacked = np.vstack(values)
    res = stacked.sum(axis=0) if op == "sum" else stacked.max(axis=0)
    res = res[keep]
    if res.size == 0:
        raise ZeroMassError("no Monte Carlo draw satisfies the recorded truncations")
    return res


def _binned(x: np.ndarray, bins: int = LINEAGE_BINS):
    lo, hi = float(x.min()), float(x.max())
    if not hi > lo:
        return PointMass(lo)
    counts, edges = np.histogram(x, bins=bins, range=(lo, hi))
    dx = edges[1] - edges[0]
    return GridPdf(edges[0] + 0.5 * dx, dx, counts / (counts.sum() * dx), normalize=True)


def lineage_aware_agg(tuples: Sequence[ProbTuple], attr: str, archive: BaseTupleArchive, op: str = "sum", *,
                      mc_samples: int = LINEAGE_MC_SAMPLES, seed: int = 0, n_points: int = dist.HDR_POINTS,
                      out_attr: str | None = None, ids: IdGen | None = None) -> ProbTuple:
    """Sum or max over tuples that may share base tuples.

    Tuples are grouped by overlapping lineage. Singletons take the independent
    path. A correlated group whose members are all affine images of base
    attributes is summed exactly; any other group is reduced by Monte Carlo
    replay of its members' derivations with shared bases drawn once per draw.
    Group results are then combined as independent variables.
    """
    if op not in ("sum", "max"):
        raise ParameterError("op must be 'sum' or 'max'")
    if not tuples:
        raise ParameterError("aggregation over an empty set of tuples")
    for t in tuples:
        for b in t.lineage:
            archive.get(b)
    rng = np.random.default_rng(seed)
    parts = []  # CharFn for sum, distribution for max
    for group in _correlation_groups(tuples):
        members = [tuples[i] for i in group]
        if len(members) == 1:
            v = _as_univariate(_attr(members[0], attr))
            parts.append(charfn.cf_of(v) if op == "sum" else v)
            continue
        chains = _group_chains(members, attr)
        if op == "sum":
            cf = _affine_group_cf(chains, archive)
            if cf is not None:
                parts.append(cf)
                continue
        draws = _replay_group(chains, archive, op, mc_samples, rng)
        binned = _binned(draws)
        parts.append(charfn.cf_of(binned) if op == "sum" else binned)
    if op == "max":
        result = parts[0] if len(parts) == 1 else extreme_distribution(parts, "max")
    else:
        cf = charfn.cf_product(parts)
        if isinstance(cf, charfn.GaussianCF):
            result = Gaussian1D(cf.mean, cf.var)
        elif isinstance(cf, charfn.PointMassCF):
            result = PointMass(cf.c)
        else:
            result = charfn.cf_invert(cf, charfn.default_grid(cf, n_points))
    return _result_tuple(tuples, {out_attr or attr: result}, ids)
