"""Streaming wrappers that adapt the operators to pipeline boxes.

Every box exposes ``process(item, port) -> list`` and ``flush() -> list``.
Items are ProbTuples, window closures, read cycles or raw series rows
depending on the box.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

import numpy as np

from .. import operators as ops
from .. import rfid, timeseries
from ..distributions import Predicate
from ..errors import InputError, ValidationError
from ..operators import WindowClosure, WindowSpec
from ..tuples import ProbTuple, read_jsonl
from .graph import Box, DataflowGraph


@dataclass
class BoxMetrics:
    tuples_in: int = 0
    tuples_out: int = 0
    seconds: float = 0.0
    dropped: int = 0
    late: int = 0


@dataclass
class Context:
    graph: DataflowGraph
    seed: int = 0
    bindings: dict = field(default_factory=dict)
    archives: dict = field(default_factory=dict)

    def box_seed(self, box_id: str) -> int:
        ss = np.random.SeedSequence([self.seed, zlib.crc32(box_id.encode())])
        return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)

    def resolve(self, p: str | Path) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.graph.base_dir / p


def _need(cfg: dict, key: str, box: Box):
    if key not in cfg:
        raise ValidationError(f"box {box.id!r} ({box.kind}) needs config key {key!r}")
    return cfg[key]


def _load_world(spec, ctx: Context) -> rfid.WorldConfig:
    if isinstance(spec, (str, Path)):
        spec = json.loads(ctx.resolve(spec).read_text())
    return rfid.WorldConfig.from_dict(spec)


class BoxImpl:
    def __init__(self, box: Box, ctx: Context):
        self.box = box
        self.ctx = ctx
        self.cfg = box.config
        self.metrics = BoxMetrics()

    def process(self, item: Any, port: int) -> list:
        raise NotImplementedError

    def flush(self) -> list:
        return []


class SourceBox(BoxImpl):
    """Reads a JSONL tuple file, a readings CSV, or a series CSV/binary file."""

    def items(self) -> Iterator[Any]:
        bound = self.ctx.bindings.get(self.box.id)
        if bound is not None and not isinstance(bound, (str, Path)):
            yield from bound
            return
        path = self.ctx.resolve(bound if bound is not None else _need(self.cfg, "path", self.box))
        fmt = self.cfg.get("format", "jsonl")
        if fmt == "jsonl":
            yield from read_jsonl(path)
        elif fmt == "readings_csv":
            world = _load_world(_need(self.cfg, "world", self.box), self.ctx)
            yield from rfid.read_readings_csv(path, [s.id for s in world.shelves])
        elif fmt == "series_csv":
            yield from timeseries.read_series_csv(path)
        elif fmt == "series_bin":
            yield from timeseries.read_series_bin(path, float(self.cfg.get("period", 1.0)))
        else:
            raise ValidationError(f"source {self.box.id!r}: unknown format {fmt!r}")


class SinkBox(BoxImpl):
    def __init__(self, box, ctx):
        super().__init__(box, ctx)
        self.collected: list = []

    def process(self, item, port):
        if isinstance(item, WindowClosure):
            self.collected.extend(item.tuples)
        elif isinstance(item, ProbTuple):
            self.collected.append(item)
        else:
            raise InputError(f"sink {self.box.id!r} received a {type(item).__name__}, not a tuple")
        return []

    @property
    def path(self) -> Path | None:
        bound = self.ctx.bindings.get(self.box.id)
        if isinstance(bound, (str, Path)):
            return Path(bound)
        p = self.cfg.get("path")
        return self.ctx.resolve(p) if p else None


class EnrichBox(BoxImpl):
    """Attaches static attributes from a lookup table keyed by one attribute."""

    def __init__(self, box, ctx):
        super().__init__(box, ctx)
        self.key = _need(self.cfg, "key", box)
        table = self.cfg.get("rows")
        if table is None:
            path = ctx.resolve(_need(self.cfg, "table", box))
            table = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
        self.table = {str(row[self.key]): {k: v for k, v in row.items() if k != self.key} for row in table}
        self.keep_missing = self.cfg.get("on_missing", "drop") == "keep"

    def process(self, t, port):
        extra = self.table.get(str(t.attrs.get(self.key)))
        if extra is None:
            if self.keep_missing:
                return [t]
            self.metrics.dropped += 1
            return []
        attrs = dict(t.attrs)
        attrs.update(extra)
        derivs = dict(t.derivations)
        if not t.is_base:
            for k in extra:
                derivs[k] = None
        return [t.replace(attrs=attrs, derivations=derivs)]


_CMP = {"gt": lambda c: Predicate.gt(c), "lt": lambda c: Predicate.lt(c),
        "ge": lambda c: Predicate(lo=c, lo_closed=True), "le": lambda c: Predicate(hi=c, hi_closed=True)}


class SelectBox(BoxImpl):
    def __init__(self, box, ctx):
        super().__init__(box, ctx)
        self.attr = _need(self.cfg, "attr", box)
        self.tau = float(self.cfg.get("tau", ops.DROP_THRESHOLD))
        self.eq = self.cfg.get("eq")
        self.pred = None
        for name, make in _CMP.items():
            if name in self.cfg:
                self.pred = make(float(self.cfg[name]))
        if "between" in self.cfg:
            self.pred = Predicate.between(*map(float, self.cfg["between"]))
        if self.pred is None and self.eq is None:
            raise ValidationError(f"select box {box.id!r} needs one of gt, lt, ge, le, between, eq")
        self.op_metrics = ops.OpMetrics()

    def process(self, t, port):
        if self.eq is not None:
            if t.attrs.get(self.attr) == self.eq:
                return [t]
            self.metrics.dropped += 1
            return []
        before = self.op_metrics.dropped
        out = ops.select_filter(t, self.attr, self.pred, self.tau, self.op_metrics)
        self.metrics.dropped += self.op_metrics.dropped - before
        return [] if out is None else [out]


FUNCTIONS = {
    "square": (lambda x: x * x, lambda x: 2 * x),
    "sqrt": (np.sqrt, lambda x: 0.5 / np.sqrt(x)),
    "exp": (np.exp, np.exp),
    "log": (np.log, lambda x: 1.0 / x),
    "norm": (lambda x: float(np.linalg.norm(x)), lambda x: np.asarray(x) / np.linalg.norm(x)),
}


class TransformBox(BoxImpl):
    def __init__(self, box, ctx):
        super().__init__(box, ctx)
        self.attr = _need(self.cfg, "attr", box)
        self.out_attr = self.cfg.get("out_attr")
        self.affine = self.cfg.get("affine")
        fn = self.cfg.get("fn")
        if self.affine is None and fn not in FUNCTIONS:
            raise ValidationError(f"transform box {box.id!r} needs 'affine' or fn in {sorted(FUNCTIONS)}")
        self.g, self.grad = FUNCTIONS.get(fn, (None, None))

    def process(self, t, port):
        if self.affine is not None:
            return [ops.transform_delta(t, self.attr, affine=tuple(self.affine), out_attr=self.out_attr)]
        return [ops.transform_delta(t, self.attr, self.g, self.grad, out_attr=self.out_attr)]


class WindowBox(BoxImpl):
    def __init__(self, box, ctx):
        super().__init__(box, ctx)
        spec = WindowSpec(float(self.cfg.get("range", 0.0)), float(self.cfg.get("slide", 1.0)),
                          self.cfg.get("mode", "RANGE"))
        self.windower = ops.Windower(spec, float(self.cfg.get("disorder", 0.0)), float(self.cfg.get("origin", 0.0)))
        self.latest_by = self.cfg.get("latest_by")

    def _dedup(self, closures):
        if not self.latest_by:
            return closures
        for c in closures:
            latest: dict = {}
            for t in c.tuples:
                latest[t.attrs.get(self.latest_by)] = t
            c.tuples = list(latest.values())
        return closures

    def process(self, t, port):
        n_late = len(self.windower.late)
        out = self.windower.push(t)
        self.metrics.late += len(self.windower.late) - n_late
        return self._dedup(out)

    def flush(self):
        return self._dedup(self.windower.flush())


def _closure(item, box: Box) -> WindowClosure:
    if not isinstance(item, WindowClosure):
        raise InputError(f"box {box.id!r} ({box.kind}) needs window closures; put a window box upstream")
    return item


class AggBox(BoxImpl):
    def __init__(self, box, ctx):
        super().__init__(box, ctx)
        self.op = self.cfg.get("op", "sum")
        if self.op not in ("sum", "avg", "count", "max", "min"):
            raise ValidationError(f"agg box {box.id!r}: unknown op {self.op!r}")
        self.attr = self.cfg.get("attr")
        if self.op != "count" and not self.attr:
            raise ValidationError(f"agg box {box.id!r} needs 'attr'")
        self.method = ops.AggMethod.parse(self.cfg.get("method", "CF_INVERT"), seed=ctx.box_seed(box.id))
        self.out_attr = self.cfg.get("out_attr")

    def process(self, item, port):
        c = _closure(item, self.box)
        ids = lambda: f"{self.box.id}#{c.window_id}"  # noqa: E731
        if self.op == "count":
            return [ops.agg_count(c.tuples, out_attr=self.out_attr or "count", ids=ids)]
        if self.op in ("sum", "avg"):
            fn = ops.agg_sum if self.op == "sum" else ops.agg_avg
            return [fn(c.tuples, self.attr, self.method, out_attr=self.out_attr, ids=ids)]
        fn = ops.agg_max if self.op == "max" else ops.agg_min
        return [fn(c.tuples, self.attr, out_attr=self.out_attr, ids=ids)]


class GroupByRegionBox(BoxImpl):
    def __init__(self, box, ctx):
        super().__init__(box, ctx)
        self.loc_attr = _need(self.cfg, "loc_attr", box)
        self.weight_attr = _need(self.cfg, "weight_attr", box)
        self.partition = ops.RegionPartition.from_dict(_need(self.cfg, "partition", box))
        self.threshold = float(_need(self.cfg, "threshold", box))
        self.alpha = float(self.cfg.get("alpha", 0.5))
        self.alerts_only = self.cfg.get("emit", "alerts") == "alerts"

    def process(self, item, port):
        c = _closure(item, self.box)
        out = []
        for r in ops.group_by_region_sum(c.tuples, self.loc_attr, self.partition, self.weight_attr,
                                         self.threshold, self.alpha):
            if r.alert or not self.alerts_only:
                out.append(r.to_tuple(lambda: f"{self.box.id}#{c.window_id}:{r.region_id}"))
        return out


class JoinBox(BoxImpl):
    """Window-aligned epsilon-ball join; windows pair up by window id."""

    def __init__(self, box, ctx):
        super().__init__(box, ctx)
        inputs = ctx.graph.inputs(box.id)
        left = self.cfg.get("left", inputs[0])
        if left not in inputs:
            raise ValidationError(f"join box {box.id!r}: left input {left!r} is not connected")
        self.left_port = inputs.index(left)
        self.left_attr = _need(self.cfg, "left_attr", box)
        self.right_attr = self.cfg.get("right_attr", self.left_attr)
        self.eps = float(_need(self.cfg, "eps", box))
        self.rho = float(self.cfg.get("rho", 0.5))
        self.mc_samples = int(self.cfg.get("mc_samples", ops.JOIN_MC_SAMPLES))
        self.pending: list[dict] = [{}, {}]

    def process(self, item, port):
        c = _closure(item, self.box)
        side = 0 if port == self.left_port else 1
        other = self.pending[1 - side].pop(c.window_id, None)
        if other is None:
            self.pending[side][c.window_id] = c
            return []
        left, right = (c, other) if side == 0 else (other, c)
        seed = self.ctx.box_seed(f"{self.box.id}#{c.window_id}")
        return ops.join_prob_equal(left.tuples, right.tuples, self.left_attr, self.right_attr, self.eps,
                                   rho=self.rho, mc_samples=self.mc_samples, seed=seed)

    def flush(self):
        self.metrics.dropped += sum(len(c.tuples) for side in self.pending for c in side.values())
        self.pending = [{}, {}]
        return []


class RfidTransformBox(BoxImpl):
    """Read cycles in, one location tuple per tracked object per scan out."""

    def __init__(self, box, ctx):
        super().__init__(box, ctx)
        world = _load_world(_need(self.cfg, "world", box), ctx)
        pf = rfid.PFConfig(n_particles=int(self.cfg.get("particles", 128)),
                           compress=bool(self.cfg.get("compress", False)), seed=ctx.box_seed(box.id))
        self.tracker = rfid.Tracker(world, pf, track_reference=False)
        self.emitter = rfid.LocationEmitter(self.cfg.get("policy", "gaussian"), int(self.cfg.get("k_max", 3)))
        self.scan = 0
        # Optional static weight per object (e.g. mass or value) for region sums.
        self.weights = {str(k): float(v) for k, v in self.cfg.get("weights", {}).items()}
        self.default_weight = self.cfg.get("default_weight")

    def process(self, cycle, port):
        if not isinstance(cycle, rfid.ReadCycle):
            raise InputError(f"box {self.box.id!r} needs read cycles")
        self.tracker.step(cycle)
        out = self.emitter.emit(self.tracker.filters, cycle.time, self.scan)
        self.scan += 1
        if self.weights or self.default_weight is not None:
            weighted = []
            for t in out:
                w = self.weights.get(t.attrs["tag_id"], self.default_weight)
                weighted.append(t if w is None else t.replace(attrs={**t.attrs, "weight": float(w)}))
            out = weighted
        return out


class SeriesTransformBox(BoxImpl):
    """Raw (time, gate, value) rows in, one block-mean tuple per gate and block out."""

    def __init__(self, box, ctx):
        super().__init__(box, ctx)
        self.cfg_block = timeseries.BlockConfig(block=int(self.cfg.get("block", 100)),
                                                max_lag=int(self.cfg.get("max_lag", timeseries.DEFAULT_MAX_LAG)),
                                                max_order=self.cfg.get("max_order"),
                                                joint=bool(self.cfg.get("joint", True)))
        self.buffers: dict[int, list] = {}

    def process(self, row, port):
        t, gate, value = row
        buf = self.buffers.setdefault(int(gate), [])
        buf.append((float(t), float(value)))
        if len(buf) < self.cfg_block.block:
            return []
        self.buffers[int(gate)] = []
        block = np.array([v for _, v in buf])
        res = timeseries.summarize_block(int(gate), buf[0][0], block, self.cfg_block)
        tid = f"g{res.gate}@{res.time!r}"
        attrs = {"gate": res.gate, "value": res.value, "rejected": res.rejected, "q": -1 if res.q is None else res.q}
        return [ProbTuple(tid, buf[-1][0], attrs)]

    def flush(self):
        self.metrics.dropped += sum(len(b) for b in self.buffers.values())
        self.buffers = {}
        return []


class ArchiveBox(BoxImpl):
    """Pass-through that records base tuples for lineage replay downstream."""

    def __init__(self, box, ctx):
        super().__init__(box, ctx)
        name = self.cfg.get("name", box.id)
        self.archive = ctx.archives.setdefault(name, ops.BaseTupleArchive(float(self.cfg.get("horizon", math.inf))))

    def process(self, t, port):
        if t.is_base:
            self.archive.add(t)
        return [t]


class LineageAggBox(BoxImpl):
    def __init__(self, box, ctx):
        super().__init__(box, ctx)
        self.attr = _need(self.cfg, "attr", box)
        self.op = self.cfg.get("op", "sum")
        name = _need(self.cfg, "archive", box)
        self.archive = ctx.archives.setdefault(name, ops.BaseTupleArchive())
        self.mc_samples = int(self.cfg.get("mc_samples", ops.LINEAGE_MC_SAMPLES))

    def process(self, item, port):
        c = _closure(item, self.box)
        return [ops.lineage_aware_agg(c.tuples, self.attr, self.archive, self.op, mc_samples=self.mc_samples,
                                      seed=self.ctx.box_seed(f"{self.box.id}#{c.window_id}"),
                                      ids=lambda: f"{self.box.id}#{c.window_id}")]


BOX_TYPES = {
    "source": SourceBox, "sink": SinkBox, "enrich": EnrichBox, "select": SelectBox, "transform": TransformBox,
    "window": WindowBox, "agg": AggBox, "group_by_region_sum": GroupByRegionBox, "join": JoinBox,
    "rfid_transform": RfidTransformBox, "series_transform": SeriesTransformBox, "archive": ArchiveBox,
    "lineage_agg": LineageAggBox,
}


def make_box(box: Box, ctx: Context) -> BoxImpl:
    return BOX_TYPES[box.kind](box, ctx)
