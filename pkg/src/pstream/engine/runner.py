"""Pipeline execution: sequential (deterministic) or one thread per box."""

from __future__ import annotations

import queue
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..errors import PStreamError, ValidationError
from ..tuples import write_jsonl
from .boxes import BoxMetrics, Context, SinkBox, SourceBox, make_box
from .graph import DataflowGraph

QUEUE_CAPACITY = 1024
_EOS = object()
_POLL = 0.05


@dataclass
class RunMetrics:
    boxes: dict = field(default_factory=dict)  # id -> BoxMetrics
    source_tuples: int = 0
    wall_seconds: float = 0.0

    @property
    def throughput_tps(self) -> float:
        return self.source_tuples / self.wall_seconds if self.wall_seconds > 0 else 0.0

    def to_dict(self, timings: bool = True) -> dict:
        boxes = {}
        for bid, m in sorted(self.boxes.items()):
            d = asdict(m)
            if not timings:
                d.pop("seconds")
            boxes[bid] = d
        out = {"boxes": boxes, "source_tuples": self.source_tuples}
        if timings:
            out["wall_seconds"] = self.wall_seconds
            out["throughput_tps"] = self.throughput_tps
        return out


class RunError(PStreamError):
    def __init__(self, message: str, metrics: RunMetrics):
        super().__init__(message)
        self.metrics = metrics


def run(graph: DataflowGraph, bindings: dict | None = None, deterministic: bool = True, seed: int = 0,
        capacity: int = QUEUE_CAPACITY, write_sinks: bool = True) -> tuple[dict, RunMetrics]:
    """Execute ``graph`` to stream exhaustion.

    Returns the tuples collected by each sink and the run metrics. Sinks with
    a path (in their config or in ``bindings``) are written as JSONL.
    """
    unknown = sorted(set(bindings or {}) - set(graph.boxes))
    if unknown:
        raise ValidationError(f"bindings name unknown boxes: {', '.join(unknown)}")
    ctx = Context(graph, seed, dict(bindings or {}))
    order = graph.topo_order()
    impls = {bid: make_box(graph.boxes[bid], ctx) for bid in order}
    metrics = RunMetrics({bid: impl.metrics for bid, impl in impls.items()})
    t0 = time.perf_counter()
    try:
        if deterministic:
            _run_sequential(graph, impls, order, metrics)
        else:
            _run_threaded(graph, impls, order, metrics, capacity)
    except RunError:
        metrics.wall_seconds = time.perf_counter() - t0
        _count_sources(impls, metrics)
        raise
    except PStreamError as exc:
        metrics.wall_seconds = time.perf_counter() - t0
        _count_sources(impls, metrics)
        raise RunError(str(exc), metrics) from exc
    metrics.wall_seconds = time.perf_counter() - t0
    _count_sources(impls, metrics)
    outputs = {bid: impl.collected for bid, impl in impls.items() if isinstance(impl, SinkBox)}
    if write_sinks:
        for bid, impl in impls.items():
            if isinstance(impl, SinkBox) and impl.path is not None:
                Path(impl.path).parent.mkdir(parents=True, exist_ok=True)
                write_jsonl(impl.path, impl.collected)
    return outputs, metrics


def _count_sources(impls, metrics: RunMetrics) -> None:
    metrics.source_tuples = sum(i.metrics.tuples_in for i in impls.values() if isinstance(i, SourceBox))


def _ports(graph: DataflowGraph) -> dict:
    return {(a, b): graph.inputs(b).index(a) for a, b in graph.arrows}


def _run_sequential(graph, impls, order, metrics):
    ports = _ports(graph)
    succ = {bid: graph.outputs(bid) for bid in order}

    def push(bid: str, item, port: int):
        impl = impls[bid]
        impl.metrics.tuples_in += 1
        t = time.perf_counter()
        try:
            outs = impl.process(item, port)
        except PStreamError as exc:
            raise RunError(f"box {bid!r}: {exc}", metrics) from exc
        impl.metrics.seconds += time.perf_counter() - t
        emit(bid, outs)

    def emit(bid: str, outs: list):
        impls[bid].metrics.tuples_out += len(outs)
        for o in outs:
            for nxt in succ[bid]:
                push(nxt, o, ports[(bid, nxt)])

    for bid in order:
        impl = impls[bid]
        if isinstance(impl, SourceBox):
            for item in impl.items():
                impl.metrics.tuples_in += 1
                emit(bid, [item])
    for bid in order:
        impl = impls[bid]
        t = time.perf_counter()
        outs = impl.flush()
        impl.metrics.seconds += time.perf_counter() - t
        emit(bid, outs)


def _run_threaded(graph, impls, order, metrics, capacity):
    ports = _ports(graph)
    inbox = {bid: queue.Queue(maxsize=capacity) for bid in order}
    halt = threading.Event()
    errors: list = []

    def put(bid: str, msg) -> bool:
        while not halt.is_set():
            try:
                inbox[bid].put(msg, timeout=_POLL)
                return True
            except queue.Full:
                continue
        return False

    def emit(bid: str, outs: list) -> bool:
        impls[bid].metrics.tuples_out += len(outs)
        for o in outs:
            for nxt in graph.outputs(bid):
                if not put(nxt, (ports[(bid, nxt)], o)):
                    return False
        return True

    def finish(bid: str):
        for nxt in graph.outputs(bid):
            put(nxt, (ports[(bid, nxt)], _EOS))

    def worker(bid: str):
        impl = impls[bid]
        try:
            if isinstance(impl, SourceBox):
                for item in impl.items():
                    impl.metrics.tuples_in += 1
                    if not emit(bid, [item]):
                        return
            else:
                open_ports = len(graph.inputs(bid))
                while open_ports and not halt.is_set():
                    try:
                        port, item = inbox[bid].get(timeout=_POLL)
                    except queue.Empty:
                        continue
                    if item is _EOS:
                        open_ports -= 1
                        continue
                    impl.metrics.tuples_in += 1
                    t = time.perf_counter()
                    outs = impl.process(item, port)
                    impl.metrics.seconds += time.perf_counter() - t
                    if not emit(bid, outs):
                        return
                if halt.is_set():
                    return
            t = time.perf_counter()
            outs = impl.flush()
            impl.metrics.seconds += time.perf_counter() - t
            if emit(bid, outs):
                finish(bid)
        except Exception as exc:  # any failure halts the whole graph
            errors.append((bid, exc))
            halt.set()

    threads = [threading.Thread(target=worker, args=(bid,), name=f"box-{bid}", daemon=True) for bid in order]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    if errors:
        bid, exc = errors[0]
        raise RunError(f"box {bid!r}: {exc}", metrics) from exc


def box_metrics_line(bid: str, m: BoxMetrics) -> str:
    return f"{bid}: in={m.tuples_in} out={m.tuples_out} dropped={m.dropped} late={m.late} seconds={m.seconds:.4f}"
