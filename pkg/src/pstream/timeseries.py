"""Time-series T-operator: autocorrelation, MA-order identification and
CLT-based block averaging of correlated per-gate series."""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy import special

from .distributions import VAR_FLOOR, Gaussian1D, WeightedSamples
from .errors import DegenerateSeriesError, MAAssumptionError, ParameterError

MIN_WINDOW = 8
DEFAULT_MAX_LAG = 10


@dataclass(frozen=True, eq=False)
class SeriesWindow:
    gate: int
    values: np.ndarray
    period: float = 1.0
    t0: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if v.size < MIN_WINDOW:
            raise ParameterError(f"series window needs at least {MIN_WINDOW} values, got {v.size}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return int(self.values.size)


@dataclass
class AcfResult:
    n: int
    max_lag: int
    gamma: np.ndarray
    rho: np.ndarray
    passes: int = 2

    @property
    def band(self) -> float:
        return 1.96 / math.sqrt(self.n)

    @property
    def mean(self) -> float:
        return float(self._mean)

    _mean: float = field(default=0.0, repr=False)


@dataclass(frozen=True)
class MAModel:
    q: int
    accepted: bool
    gammas: tuple = ()


class _PassCounter:
    """Iterates a sequence while counting complete scans over it."""

    def __init__(self, values: np.ndarray):
        self.values = values
        self.passes = 0

    def scan(self) -> np.ndarray:
        self.passes += 1
        return self.values


def sample_acf(w: SeriesWindow | np.ndarray, max_lag: int) -> AcfResult:
    """Biased (1/n) sample autocovariances up to ``max_lag`` in two passes."""
    values = w.values if isinstance(w, SeriesWindow) else np.asarray(w, dtype=float)
    n = values.size
    if max_lag < 1 or not max_lag < n / 4:
        raise ParameterError(f"max_lag must satisfy 1 <= max_lag < n/4 (n={n}), got {max_lag}")
    src = _PassCounter(values)
    mean = float(np.mean(src.scan()))
    x = src.scan() - mean
    gamma = np.empty(max_lag + 1)
    gamma[0] = float(np.dot(x, x)) / n
    for k in range(1, max_lag + 1):
        gamma[k] = float(np.dot(x[:-k], x[k:])) / n
    if gamma[0] < VAR_FLOOR:
        raise DegenerateSeriesError("series is constant (zero sample variance)")
    return AcfResult(n, max_lag, gamma, gamma / gamma[0], src.passes, mean)


def identify_ma_order(acf: AcfResult, max_order: int, *, joint: bool = True, level: float = 0.05) -> MAModel:
    """Smallest q with every sample autocorrelation beyond q inside its band.

    With ``joint=False`` this is the plain pointwise test against
    ``acf.band = 1.96/sqrt(n)``. The default ``joint=True`` uses Bartlett's
    standard error for lags past q, sqrt((1 + 2 sum_{j<=q} rho_j^2) / n), and a
    Bonferroni quantile over the lags tested, so white noise passes at the
    nominal family-wise level instead of 0.95**(lags tested).
    """
    if max_order < 0 or max_order > acf.max_lag - 2:
        raise ParameterError(f"max_order must lie in [0, max_lag - 2] (max_lag={acf.max_lag})")
    rho = acf.rho
    for q in range(0, max_order + 1):
        lags = np.arange(q + 1, acf.max_lag + 1)
        if joint:
            se = math.sqrt((1.0 + 2.0 * float(np.sum(rho[1:q + 1] ** 2))) / acf.n)
            z = float(special.ndtri(1.0 - level / (2.0 * lags.size)))
            bound = z * se
        else:
            bound = acf.band
        if np.all(np.abs(rho[lags]) <= bound):
            return MAModel(q, True, tuple(acf.gamma[: q + 1].tolist()))
    return MAModel(max_order, False, tuple(acf.gamma[: max_order + 1].tolist()))


@dataclass(frozen=True)
class CLTResult:
    dist: Gaussian1D
    clamped: bool


def clt_mean_distribution(w: SeriesWindow | np.ndarray, model: MAModel, acf: AcfResult | None = None) -> Gaussian1D:
    return clt_mean_result(w, model, acf).dist


def clt_mean_result(w: SeriesWindow | np.ndarray, model: MAModel, acf: AcfResult | None = None) -> CLTResult:
    """Asymptotic normal law of the window mean under an MA(q) model."""
    if not model.accepted:
        raise MAAssumptionError("the MA model was rejected for this window")
    values = w.values if isinstance(w, SeriesWindow) else np.asarray(w, dtype=float)
    n = values.size
    if acf is None or acf.max_lag < model.q:
        acf = sample_acf(values, max(model.q, 1)) if n > 4 * max(model.q, 1) else None
    if acf is None:
        raise ParameterError("window too short for the identified order")
    total = float(acf.gamma[0] + 2.0 * np.sum(acf.gamma[1:model.q + 1]))
    clamped = total <= 0
    var = max(total / n, VAR_FLOOR)
    return CLTResult(Gaussian1D(acf.mean, var), clamped)


# ---------------------------------------------------------------------------
# Block averaging T-operator
# ---------------------------------------------------------------------------


@dataclass
class BlockConfig:
    block: int = 100
    max_lag: int = DEFAULT_MAX_LAG
    max_order: int | None = None
    joint: bool = True

    def lags_for(self, n: int) -> tuple[int, int] | None:
        max_lag = min(self.max_lag, math.ceil(n / 4) - 1)
        max_order = max_lag - 2 if self.max_order is None else min(self.max_order, max_lag - 2)
        if max_order < 0:
            return None
        return max_lag, max_order


@dataclass
class BlockOutput:
    gate: int
    time: float
    value: object
    rejected: bool
    q: int | None


def block_average(windows: Iterable[SeriesWindow], cfg: BlockConfig) -> Iterator[BlockOutput]:
    """Per gate, split values into non-overlapping blocks of ``cfg.block`` and
    summarize each block; leftovers shorter than a block are dropped."""
    if cfg.block < MIN_WINDOW:
        raise ParameterError(f"block size must be >= {MIN_WINDOW}")
    pending: dict[int, list[float]] = {}
    t_start: dict[int, float] = {}
    period: dict[int, float] = {}
    for win in windows:
        buf = pending.setdefault(win.gate, [])
        if not buf:
            t_start[win.gate] = win.t0
        period[win.gate] = win.period
        buf.extend(win.values.tolist())
        while len(pending[win.gate]) >= cfg.block:
            block = np.array(pending[win.gate][: cfg.block])
            del pending[win.gate][: cfg.block]
            t_block = t_start[win.gate]
            t_start[win.gate] = t_block + cfg.block * period[win.gate]
            yield summarize_block(win.gate, t_block, block, cfg)


def summarize_block(gate: int, t: float, block: np.ndarray, cfg: BlockConfig) -> BlockOutput:
    lags = cfg.lags_for(block.size)
    if lags is not None:
        try:
            acf = sample_acf(block, lags[0])
        except DegenerateSeriesError:
            acf = None
        if acf is not None:
            model = identify_ma_order(acf, lags[1], joint=cfg.joint)
            if model.accepted:
                return BlockOutput(gate, t, clt_mean_distribution(block, model, acf), False, model.q)
        else:
            # Constant block: the mean is known exactly.
            return BlockOutput(gate, t, Gaussian1D(float(block[0]), VAR_FLOOR), False, 0)
    return BlockOutput(gate, t, WeightedSamples(block), True, None)


# ---------------------------------------------------------------------------
# Synthetic generator and raw-series I/O
# ---------------------------------------------------------------------------


def generate_arma(n: int, ar: Sequence[float] = (), ma: Sequence[float] = (), *, const: float = 0.0,
                  noise_sd: float = 1.0, rng: np.random.Generator | None = None, burn: int = 200) -> np.ndarray:
    """X_t = sum a_i X_{t-i} + sum b_i e_{t-i} + e_t + C with Gaussian noise."""
    rng = rng or np.random.default_rng()
    ar = np.asarray(ar, dtype=float)
    ma = np.asarray(ma, dtype=float)
    total = n + burn
    e = rng.normal(0.0, noise_sd, total + ma.size)
    mov = e[ma.size:].copy()
    for i, b in enumerate(ma, start=1):
        mov += b * e[ma.size - i: ma.size - i + total]
    mov += const
    if ar.size == 0:
        return mov[burn:]
    x = np.zeros(total)
    p = ar.size
    for t in range(total):
        acc = mov[t]
        for i in range(1, min(p, t) + 1):
            acc += ar[i - 1] * x[t - i]
        x[t] = acc
    return x[burn:]


def write_series_csv(path, rows: Iterable[tuple[float, int, float]]) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["time", "gate_id", "value"])
        for t, g, v in rows:
            wr.writerow([repr(float(t)), int(g), repr(float(v))])


def read_series_csv(path) -> list[tuple[float, int, float]]:
    with open(path, newline="") as fh:
        return [(float(r["time"]), int(r["gate_id"]), float(r["value"])) for r in csv.DictReader(fh)]


_RECORD = struct.Struct("<If")


def write_series_bin(path, rows: Iterable[tuple[float, int, float]]) -> None:
    with open(path, "wb") as fh:
        for _, g, v in rows:
            fh.write(_RECORD.pack(int(g), float(v)))


def read_series_bin(path, period: float = 1.0) -> list[tuple[float, int, float]]:
    data = np.fromfile(path, dtype=np.dtype([("gate", "<u4"), ("value", "<f4")]))
    counts: dict[int, int] = {}
    rows = []
    for g, v in zip(data["gate"].tolist(), data["value"].tolist()):
        i = counts.get(g, 0)
        counts[g] = i + 1
        rows.append((i * period, g, v))
    return rows


def rows_to_windows(rows: Sequence[tuple[float, int, float]], chunk: int = 1024) -> list[SeriesWindow]:
    """Group (time, gate, value) rows into per-gate windows in arrival order.

    Runs shorter than the minimum window length are merged forward.
    """
    by_gate: dict[int, list[tuple[float, float]]] = {}
    for t, g, v in rows:
        by_gate.setdefault(g, []).append((t, v))
    out = []
    for g in sorted(by_gate):
        pts = by_gate[g]
        period = pts[1][0] - pts[0][0] if len(pts) > 1 else 1.0
        for lo in range(0, len(pts), chunk):
            part = pts[lo: lo + chunk]
            if len(part) < MIN_WINDOW:
                if out and out[-1].gate == g:
                    prev = out.pop()
                    merged = np.concatenate([prev.values, [v for _, v in part]])
                    out.append(SeriesWindow(g, merged, prev.period, prev.t0))
                continue
            out.append(SeriesWindow(g, np.array([v for _, v in part]), period or 1.0, part[0][0]))
    return out
