"""Mobile-RFID T-operator.

A seeded warehouse simulator produces read cycles; a factored particle filter
(one particle set per tag) turns them into location tuples. Only objects near
the reader, found through a grid index over their current estimates, or
actually detected are updated on each scan.
"""

from __future__ import annotations

import csv
import itertools
import math
import time as _time
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import expit

from . import fitting
from .distributions import VAR_FLOOR, AxisProduct, WeightedSamples
from .errors import InputError, ParameterError
from .tuples import ProbTuple

Vec3 = tuple  # (x, y, z) in meters


# ---------------------------------------------------------------------------
# World description
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReaderPose:
    time: float
    position: Vec3
    heading: Vec3

    def __post_init__(self):
        h = np.asarray(self.heading, dtype=float)
        if abs(float(np.linalg.norm(h)) - 1.0) > 1e-9:
            raise InputError(f"reader heading {self.heading} is not a unit vector")


@dataclass(frozen=True)
class Shelf:
    id: str
    position: Vec3


@dataclass(frozen=True)
class ReadCycle:
    time: float
    reader: ReaderPose
    detected_objects: frozenset
    detected_shelves: frozenset


@dataclass
class WorldConfig:
    shelves: list
    path: list
    area: Vec3 = (10.0, 10.0, 3.0)
    n_objects: int = 50
    p_move: float = 0.0
    beta: tuple = (2.0, -1.5, -0.5)  # (intercept, per meter, per radian)
    reader_range: float = 2.0
    reference_tags: list = field(default_factory=list)
    object_shelves: list | None = None  # initial shelf id per object; random when None
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        w, d, h = self.area
        for s in self.shelves:
            x, y, z = s.position
            if not (0 <= x <= w and 0 <= y <= d and 0 <= z <= h):
                raise InputError(f"shelf {s.id} at {s.position} lies outside the area {self.area}")
        if not 0.0 <= self.p_move < 0.5:
            raise InputError("move probability must lie in [0, 0.5)")
        if not self.reader_range > 0:
            raise InputError("reader range must be positive")
        ids = {s.id for s in self.shelves}
        if len(ids) != len(self.shelves):
            raise InputError("duplicate shelf ids")
        missing = set(self.reference_tags) - ids
        if missing:
            raise InputError(f"reference tags {sorted(missing)} are not shelves")
        if self.object_shelves is not None:
            if len(self.object_shelves) != self.n_objects:
                raise InputError("object_shelves must list one shelf per object")
            if set(self.object_shelves) - ids:
                raise InputError("object_shelves names unknown shelves")

    @property
    def object_ids(self) -> list[str]:
        return [f"o{i}" for i in range(self.n_objects)]

    @cached_property
    def shelf_positions(self) -> np.ndarray:
        return np.array([s.position for s in self.shelves], dtype=float)

    def shelf(self, sid: str) -> Shelf:
        for s in self.shelves:
            if s.id == sid:
                return s
        raise KeyError(sid)

    def to_dict(self) -> dict:
        return {
            "area": list(self.area),
            "shelves": [{"id": s.id, "x": s.position[0], "y": s.position[1], "z": s.position[2]}
                        for s in self.shelves],
            "path": [{"time": p.time, "position": list(p.position), "heading": list(p.heading)}
                     for p in self.path],
            "n_objects": self.n_objects,
            "p_move": self.p_move,
            "beta": list(self.beta),
            "reader_range": self.reader_range,
            "reference_tags": list(self.reference_tags),
            "object_shelves": self.object_shelves,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "WorldConfig":
        if "scenario" in obj:
            return reference_warehouse(**obj["scenario"])
        shelves = [Shelf(str(s["id"]), (float(s["x"]), float(s["y"]), float(s["z"]))) for s in obj["shelves"]]
        path_spec = obj["path"]
        if isinstance(path_spec, dict):
            path = serpentine_path(**path_spec)
        else:
            path = [ReaderPose(float(p["time"]), tuple(p["position"]), tuple(p["heading"])) for p in path_spec]
        return cls(shelves=shelves, path=path, area=tuple(obj.get("area", (10.0, 10.0, 3.0))),
                   n_objects=int(obj.get("n_objects", 50)), p_move=float(obj.get("p_move", 0.0)),
                   beta=tuple(obj.get("beta", (2.0, -1.5, -0.5))),
                   reader_range=float(obj.get("reader_range", 2.0)),
                   reference_tags=list(obj.get("reference_tags", [])),
                   object_shelves=obj.get("object_shelves"), seed=int(obj.get("seed", 0)))


def serpentine_path(aisles: Sequence[float], x_range: Sequence[float] = (0.0, 10.0), step: float = 0.5,
                    scans: int = 200, z: float = 1.0, dt: float = 1.0, t0: float = 0.0) -> list[ReaderPose]:
    """Back-and-forth sweep along aisles at fixed ``y``; reverses at the end."""
    x_lo, x_hi = x_range
    xs = np.arange(x_lo, x_hi + 1e-9, step)
    loop: list[tuple[Vec3, Vec3]] = []
    for j, y in enumerate(aisles):
        row = xs if j % 2 == 0 else xs[::-1]
        head = (1.0, 0.0, 0.0) if j % 2 == 0 else (-1.0, 0.0, 0.0)
        loop.extend(((float(x), float(y), float(z)), head) for x in row)
    back = [(pos, tuple(-c for c in head)) for pos, head in reversed(loop)]
    cycle = loop + back
    return [ReaderPose(t0 + i * dt, cycle[i % len(cycle)][0], cycle[i % len(cycle)][1]) for i in range(scans)]


def reference_warehouse(seed: int = 0, n_objects: int = 50, n_reference: int = 10, scans: int = 200,
                        far_objects: int | None = None, p_move: float = 0.001, beta=(2.0, -1.5, -0.5),
                        reader_range: float = 2.0) -> WorldConfig:
    """10 x 10 m warehouse: five shelf rows (y = 1, 3, ..., 9), ten slots each,
    with the reader sweeping the aisles in between.

    ``far_objects`` (an int, possibly 0) adds an identical shelf block 100 m
    away holding that many extra objects, which the reader never approaches;
    moves are then disabled so the two populations stay apart.
    """
    shelves = [Shelf(f"s{r * 10 + c}", (c + 0.5, 2.0 * r + 1.0, 1.0)) for r in range(5) for c in range(10)]
    area = (10.0, 10.0, 3.0)
    object_shelves = None
    if far_objects is not None:
        shelves += [Shelf(f"f{r * 10 + c}", (100.0 + c + 0.5, 2.0 * r + 1.0, 1.0))
                    for r in range(5) for c in range(10)]
        area = (111.0, 10.0, 3.0)
        rng = np.random.default_rng([seed, 7])
        near = [f"s{i}" for i in rng.integers(50, size=n_objects)]
        far = [f"f{i}" for i in rng.integers(50, size=far_objects)]
        object_shelves = near + far
        n_objects += far_objects
        p_move = 0.0
    refs = [f"s{i}" for i in range(2, 50, 5)][:n_reference]
    path = serpentine_path([2.0, 4.0, 6.0, 8.0], (0.0, 10.0), 0.5, scans)
    return WorldConfig(shelves=shelves, path=path, area=area, n_objects=n_objects, p_move=p_move, beta=tuple(beta),
                       reader_range=reader_range, reference_tags=refs, object_shelves=object_shelves, seed=seed)


# ---------------------------------------------------------------------------
# Sensing and simulation
# ---------------------------------------------------------------------------


def detection_prob_many(beta, reader: ReaderPose, positions: np.ndarray, reader_range: float) -> np.ndarray:
    pos = np.asarray(positions, dtype=float).reshape(-1, 3)
    rel = pos - np.asarray(reader.position, dtype=float)
    dist = np.sqrt(np.einsum("ij,ij->i", rel, rel))
    head = np.asarray(reader.heading, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        cosang = np.where(dist > 0, rel @ head / np.where(dist > 0, dist, 1.0), 1.0)
    angle = np.arccos(np.clip(cosang, -1.0, 1.0))
    b0, b_dist, b_angle = beta
    p = expit(b0 + b_dist * dist + b_angle * angle)
    return np.where(dist <= reader_range, p, 0.0)


def detection_prob(beta, reader: ReaderPose, tag_pos: Vec3, reader_range: float = math.inf) -> float:
    """Logistic read rate over distance and |angle| off the heading; 0 beyond range."""
    return float(detection_prob_many(beta, reader, np.asarray(tag_pos, dtype=float), reader_range)[0])


@dataclass
class Simulation:
    cycles: list
    object_ids: list
    truth: np.ndarray  # (scans, n_objects, 3)

    def truth_at(self, scan: int) -> dict:
        return {oid: tuple(self.truth[scan, i]) for i, oid in enumerate(self.object_ids)}


def simulate(cfg: WorldConfig) -> Simulation:
    rng = np.random.default_rng(cfg.seed)
    shelf_pos = cfg.shelf_positions
    n_shelves = len(cfg.shelves)
    shelf_ids = [s.id for s in cfg.shelves]
    index_of = {sid: i for i, sid in enumerate(shelf_ids)}
    if cfg.object_shelves is None:
        where = rng.integers(n_shelves, size=cfg.n_objects)
    else:
        where = np.array([index_of[s] for s in cfg.object_shelves], dtype=int)
    oids = cfg.object_ids
    cycles = []
    truth = np.empty((len(cfg.path), cfg.n_objects, 3))
    for k, pose in enumerate(cfg.path):
        if cfg.p_move > 0 and n_shelves > 1:
            movers = np.flatnonzero(rng.random(cfg.n_objects) < cfg.p_move)
            for i in movers:
                j = int(rng.integers(n_shelves - 1))
                where[i] = j + 1 if j >= where[i] else j
        obj_pos = shelf_pos[where]
        truth[k] = obj_pos
        p_obj = detection_prob_many(cfg.beta, pose, obj_pos, cfg.reader_range)
        p_shelf = detection_prob_many(cfg.beta, pose, shelf_pos, cfg.reader_range)
        hit_obj = rng.random(cfg.n_objects) < p_obj
        hit_shelf = rng.random(n_shelves) < p_shelf
        cycles.append(ReadCycle(pose.time, pose, frozenset(oids[i] for i in np.flatnonzero(hit_obj)),
                                frozenset(shelf_ids[i] for i in np.flatnonzero(hit_shelf))))
    return Simulation(cycles, oids, truth)


# ---------------------------------------------------------------------------
# Particle filtering
# ---------------------------------------------------------------------------


@dataclass
class PFConfig:
    n_particles: int = 128
    n_min: int = 8
    n_max: int = 4096
    sigma_stay: float = 0.05
    sigma_vicinity: float = 0.1
    ess_frac: float = 0.5
    compress: bool = False
    sigma_compress: float = 0.1
    cell_size: float = 1.0
    margin: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.n_min <= self.n_particles <= self.n_max:
            raise ParameterError(f"particle count {self.n_particles} outside [{self.n_min}, {self.n_max}]")


@dataclass(frozen=True, eq=False)
class ParticleSet:
    object_id: str
    positions: np.ndarray  # (N, 3)
    weights: np.ndarray  # (N,)

    @property
    def n(self) -> int:
        return int(self.weights.size)

    def mean(self) -> np.ndarray:
        return self.weights @ self.positions

    def spread(self) -> float:
        """Largest weighted standard deviation over the axes."""
        m = self.mean()
        var = self.weights @ (self.positions - m) ** 2
        return float(np.sqrt(np.max(var)))

    def ess(self) -> float:
        return float(1.0 / np.sum(self.weights**2))


class SpatialIndex:
    """Uniform grid over estimated object positions; one cell per object."""

    def __init__(self, cell_size: float = 1.0):
        if not cell_size > 0:
            raise ParameterError("cell size must be positive")
        self.cell_size = float(cell_size)
        self.cells: dict[tuple, set] = {}
        self.where: dict[str, tuple] = {}
        # Bounding box of every key ever occupied; it only grows, so clipping
        # a query to it never drops a live cell.
        self.key_lo: list[int] | None = None
        self.key_hi: list[int] | None = None

    def key(self, pos) -> tuple:
        return tuple(int(math.floor(c / self.cell_size)) for c in pos)

    def update(self, oid: str, pos) -> None:
        new = self.key(pos)
        old = self.where.get(oid)
        if old == new:
            return
        if old is not None:
            members = self.cells[old]
            members.discard(oid)
            if not members:
                del self.cells[old]
        self.cells.setdefault(new, set()).add(oid)
        self.where[oid] = new
        if self.key_lo is None:
            self.key_lo, self.key_hi = list(new), list(new)
        else:
            for d, c in enumerate(new):
                if c < self.key_lo[d]:
                    self.key_lo[d] = c
                elif c > self.key_hi[d]:
                    self.key_hi[d] = c

    def __len__(self) -> int:
        return len(self.where)


def spatial_candidates(index: SpatialIndex, reader: ReaderPose | Vec3, radius: float) -> set:
    """Objects in every cell whose box meets the closed ball around the reader."""
    center = np.asarray(reader.position if isinstance(reader, ReaderPose) else reader, dtype=float)
    s = index.cell_size
    out: set = set()
    if not index.cells:
        return out
    lo = [max(int(math.floor((c - radius) / s)), b) for c, b in zip(center, index.key_lo)]
    hi = [min(int(math.floor((c + radius) / s)), b) for c, b in zip(center, index.key_hi)]
    if any(a > b for a, b in zip(lo, hi)):
        return out
    r2 = radius * radius
    n_box = math.prod(b - a + 1 for a, b in zip(lo, hi))
    keys = index.cells.keys() if n_box > len(index.cells) else itertools.product(
        *(range(a, b + 1) for a, b in zip(lo, hi)))
    for key in keys:
        members = index.cells.get(key)
        if not members:
            continue
        d2 = 0.0
        for c, kk in zip(center, key):
            a, b = kk * s, (kk + 1) * s
            gap = a - c if c < a else (c - b if c > b else 0.0)
            d2 += gap * gap
        if d2 <= r2 * (1 + 1e-12):
            out |= members
    return out


def systematic_resample(weights: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    positions = (rng.random() + np.arange(n)) / n
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    return np.searchsorted(cum, positions, side="left")


def init_particles(oid: str, n: int, shelf_pos: np.ndarray, sigma: float, rng: np.random.Generator) -> ParticleSet:
    idx = rng.integers(len(shelf_pos), size=n)
    pos = shelf_pos[idx] + rng.normal(0.0, sigma, size=(n, 3))
    return ParticleSet(oid, pos, np.full(n, 1.0 / n))


def resize_particles(ps: ParticleSet, n: int, rng: np.random.Generator) -> ParticleSet:
    idx = systematic_resample(ps.weights, n, rng)
    return ParticleSet(ps.object_id, ps.positions[idx], np.full(n, 1.0 / n))


def compress_particles(ps: ParticleSet, cfg: PFConfig, rng: np.random.Generator) -> ParticleSet:
    """Shrink a settled cloud (spread below ``sigma_compress``) to ``n_min`` particles."""
    if ps.n <= cfg.n_min or ps.spread() >= cfg.sigma_compress:
        return ps
    return resize_particles(ps, cfg.n_min, rng)


@dataclass
class StepStats:
    candidates: int = 0
    reinitialized: int = 0
    resampled: int = 0


def pf_step(filters: dict, index: SpatialIndex, cycle: ReadCycle, world: WorldConfig, cfg: PFConfig,
            rng: np.random.Generator, stats: StepStats | None = None) -> tuple[dict, SpatialIndex]:
    """Advance the factored filter by one read cycle.

    Only candidates (objects indexed near the reader plus everything detected)
    are propagated and reweighted; all other particle sets are left untouched.
    """
    detected = (cycle.detected_objects | cycle.detected_shelves) & filters.keys()
    near = spatial_candidates(index, cycle.reader, world.reader_range + cfg.margin)
    candidates = sorted(near | detected)
    shelf_pos = world.shelf_positions
    # Candidates sharing a particle count are updated as one (G, N, 3) block.
    groups: dict[int, list[str]] = {}
    for oid in candidates:
        groups.setdefault(filters[oid].n, []).append(oid)
    for n, ids in groups.items():
        g = len(ids)
        pos = np.stack([filters[oid].positions for oid in ids])
        pos = pos + rng.normal(0.0, cfg.sigma_stay, size=pos.shape)
        if world.p_move > 0:
            movers = rng.random((g, n)) < world.p_move
            m = int(movers.sum())
            if m:
                jump = rng.integers(len(shelf_pos), size=m)
                pos[movers] = shelf_pos[jump] + rng.normal(0.0, cfg.sigma_vicinity, size=(m, 3))
        p = detection_prob_many(world.beta, cycle.reader, pos.reshape(-1, 3), world.reader_range).reshape(g, n)
        hit = np.array([oid in detected for oid in ids])
        like = np.where(hit[:, None], p, 1.0 - p)
        w = np.stack([filters[oid].weights for oid in ids]) * like
        total = w.sum(axis=1)
        for j, oid in enumerate(ids):
            if not total[j] > 0 or not math.isfinite(total[j]):
                ps = init_particles(oid, n, shelf_pos, cfg.sigma_vicinity, rng)
                if stats:
                    stats.reinitialized += 1
            else:
                wj = w[j] / total[j]
                if 1.0 / float(np.dot(wj, wj)) < cfg.ess_frac * n:
                    idx = systematic_resample(wj, n, rng)
                    ps = ParticleSet(oid, pos[j][idx], np.full(n, 1.0 / n))
                    if stats:
                        stats.resampled += 1
                else:
                    ps = ParticleSet(oid, pos[j], wj)
            if cfg.compress:
                ps = compress_particles(ps, cfg, rng)
            filters[oid] = ps
            index.update(oid, ps.mean())
    if stats:
        stats.candidates += len(candidates)
    return filters, index


class Tracker:
    """Filters for every object and reference tag of one world, with timing."""

    def __init__(self, world: WorldConfig, cfg: PFConfig, track_reference: bool = True):
        self.world = world
        self.cfg = cfg
        self.rng = np.random.default_rng([cfg.seed, world.seed])
        self.index = SpatialIndex(cfg.cell_size)
        self.filters: dict[str, ParticleSet] = {}
        ids = list(world.object_ids) + (list(world.reference_tags) if track_reference else [])
        for oid in ids:
            ps = init_particles(oid, cfg.n_particles, world.shelf_positions, cfg.sigma_vicinity, self.rng)
            self.filters[oid] = ps
            self.index.update(oid, ps.mean())
        self.stats = StepStats()
        self.step_seconds = 0.0
        self.steps = 0

    def step(self, cycle: ReadCycle) -> None:
        t = _time.perf_counter()
        pf_step(self.filters, self.index, cycle, self.world, self.cfg, self.rng, self.stats)
        self.step_seconds += _time.perf_counter() - t
        self.steps += 1

    def set_particle_count(self, n: int) -> None:
        for oid, ps in self.filters.items():
            self.filters[oid] = resize_particles(ps, n, self.rng)

    def estimates(self) -> dict:
        return {oid: ps.mean() for oid, ps in self.filters.items()}

    def reference_truth(self) -> dict:
        return {sid: np.asarray(self.world.shelf(sid).position, dtype=float) for sid in self.world.reference_tags}

    @property
    def total_particles(self) -> int:
        return sum(ps.n for ps in self.filters.values())


def measure_accuracy(filters: Mapping[str, ParticleSet], reference: Mapping[str, Sequence[float]]) -> float:
    """RMSE (meters) between weighted-mean estimates and known reference positions."""
    if not reference:
        raise ParameterError("reference set is empty")
    sq = []
    for oid, truth in reference.items():
        est = filters[oid].mean() if isinstance(filters[oid], ParticleSet) else np.asarray(filters[oid])
        sq.append(float(np.sum((est - np.asarray(truth, dtype=float)) ** 2)))
    return math.sqrt(sum(sq) / len(sq))


# ---------------------------------------------------------------------------
# Particle-count controller
# ---------------------------------------------------------------------------


class Phase(str, Enum):
    DOUBLING = "DOUBLING"
    DECREASING = "DECREASING"
    STEADY = "STEADY"


@dataclass(frozen=True)
class ControllerState:
    phase: Phase
    count: int
    decrement: int
    target: float
    n_min: int = 8
    n_max: int = 4096

    def __post_init__(self):
        if self.count < self.n_min:
            raise ParameterError("particle count below n_min")


def tune_particles(state: ControllerState, measured_error: float) -> ControllerState:
    """Double until the target is met, then step down by ``decrement`` until it
    is missed, then settle on the last count that met it."""
    ok = measured_error <= state.target
    if state.phase is Phase.DOUBLING:
        if ok:
            return replace(state, phase=Phase.DECREASING)
        return replace(state, count=min(state.count * 2, state.n_max))
    if state.phase is Phase.DECREASING:
        if not ok:
            return replace(state, phase=Phase.STEADY, count=min(state.count + state.decrement, state.n_max))
        if state.count <= state.n_min:
            return replace(state, phase=Phase.STEADY)
        return replace(state, count=max(state.count - state.decrement, state.n_min))
    return state


@dataclass
class ControllerRun:
    history: list  # (count, error, phase before update)
    state: ControllerState
    error: float
    achieved: bool


def evaluate_particle_count(world: WorldConfig, sim: Simulation, cfg: PFConfig, n: int,
                            burn_frac: float = 0.5) -> tuple[float, float]:
    """(mean reference RMSE over the scans after ``burn_frac``, seconds per scan)."""
    tracker = Tracker(world, replace(cfg, n_particles=n, n_max=max(cfg.n_max, n)))
    ref = tracker.reference_truth()
    start = int(len(sim.cycles) * burn_frac)
    errs = []
    for k, cycle in enumerate(sim.cycles):
        tracker.step(cycle)
        if k >= start:
            errs.append(measure_accuracy(tracker.filters, ref))
    return float(np.mean(errs)), tracker.step_seconds / max(tracker.steps, 1)


def run_controller(world: WorldConfig, sim: Simulation, cfg: PFConfig, target: float,
                   start: int | None = None, decrement: int | None = None, max_rounds: int = 64) -> ControllerRun:
    """Feedback search for the smallest particle count meeting ``target``.

    Each round replays the calibration trace with the current count (fixed
    filter seed) and feeds the measured reference-tag error to
    :func:`tune_particles`.
    """
    state = ControllerState(Phase.DOUBLING, start or cfg.n_min, decrement or cfg.n_min, target, cfg.n_min, cfg.n_max)
    measured: dict[int, float] = {}
    history = []
    for _ in range(max_rounds):
        if state.phase is Phase.STEADY:
            break
        if state.count not in measured:
            measured[state.count] = evaluate_particle_count(world, sim, cfg, state.count)[0]
        err = measured[state.count]
        history.append((state.count, err, state.phase.value))
        new = tune_particles(state, err)
        if new == state:
            break  # doubling is stuck at n_max: target unattainable
        state = new
    err = measured.get(state.count)
    if err is None:
        err = measured[state.count] = evaluate_particle_count(world, sim, cfg, state.count)[0]
    return ControllerRun(history, state, err, state.phase is Phase.STEADY and err <= target)


# ---------------------------------------------------------------------------
# Output tuples and trace I/O
# ---------------------------------------------------------------------------


def location_distribution(ps: ParticleSet, policy: str = "gaussian", k_max: int = 3):
    if policy == "gaussian":
        return fitting.fit_gaussian_nd(WeightedSamples(ps.positions, ps.weights, bandwidth=0.0))
    if policy in ("gmm", "gmm_bic"):
        marginals = []
        for axis in range(3):
            s = WeightedSamples(ps.positions[:, axis], ps.weights)
            mix, _ = fitting.select_k(s, k_max, "BIC")
            marginals.append(mix)
        return AxisProduct(tuple(marginals))
    raise ParameterError(f"unknown location policy {policy!r}")


class LocationEmitter:
    """Emits one location tuple per tracked object per scan.

    Fits are cached per particle set object: a set untouched by the scan gets
    the identical fit again without recomputation.
    """

    def __init__(self, policy: str = "gaussian", k_max: int = 3):
        self.policy = policy
        self.k_max = k_max
        # Holds the particle set itself so its identity cannot be recycled.
        self._cache: dict[str, tuple[ParticleSet, object]] = {}

    def emit(self, filters: Mapping[str, ParticleSet], time: float, scan: int,
             ids: Iterable[str] | None = None) -> list[ProbTuple]:
        out = []
        for oid in sorted(filters if ids is None else ids):
            ps = filters[oid]
            hit = self._cache.get(oid)
            if hit is not None and hit[0] is ps:
                loc = hit[1]
            else:
                loc = location_distribution(ps, self.policy, self.k_max)
                self._cache[oid] = (ps, loc)
            tid = f"{oid}@{scan}"
            out.append(ProbTuple(tid, float(time), {"tag_id": oid, "location": loc}, 1.0, frozenset([tid])))
        return out


def emit_location_tuples(filters: Mapping[str, ParticleSet], policy: str = "gaussian", time: float = 0.0,
                         scan: int = 0, k_max: int = 3) -> list[ProbTuple]:
    if not filters:
        raise ParameterError("no filters to emit")
    return LocationEmitter(policy, k_max).emit(filters, time, scan)


READ_HEADER = ["time", "reader_x", "reader_y", "reader_z", "heading_x", "heading_y", "heading_z", "detected_ids"]


def write_readings_csv(path, cycles: Iterable[ReadCycle]) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(READ_HEADER)
        for c in cycles:
            ids = sorted(c.detected_objects) + sorted(c.detected_shelves)
            wr.writerow([repr(c.time), *map(repr, map(float, c.reader.position)),
                         *map(repr, map(float, c.reader.heading)), ";".join(ids)])


def read_readings_csv(path, shelf_ids: Iterable[str]) -> list[ReadCycle]:
    shelves = set(shelf_ids)
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            pos = (float(row["reader_x"]), float(row["reader_y"]), float(row["reader_z"]))
            head = (float(row["heading_x"]), float(row["heading_y"]), float(row["heading_z"]))
            ids = [i for i in row["detected_ids"].split(";") if i]
            t = float(row["time"])
            out.append(ReadCycle(t, ReaderPose(t, pos, head), frozenset(i for i in ids if i not in shelves),
                                 frozenset(i for i in ids if i in shelves)))
    return out


def write_truth_csv(path, sim: Simulation) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["time", "object_id", "x", "y", "z"])
        for k, cycle in enumerate(sim.cycles):
            for i, oid in enumerate(sim.object_ids):
                wr.writerow([repr(cycle.time), oid, *map(repr, map(float, sim.truth[k, i]))])


def read_truth_csv(path) -> dict:
    """time -> {object_id: (x, y, z)}"""
    out: dict[float, dict] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(float(row["time"]), {})[row["object_id"]] = (
                float(row["x"]), float(row["y"]), float(row["z"]))
    return out
