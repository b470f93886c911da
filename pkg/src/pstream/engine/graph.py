"""Box-and-arrow pipeline descriptions."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..errors import ValidationError

SOURCE_KINDS = {"source"}
KINDS = {
    "source", "sink", "enrich", "select", "transform", "window", "agg", "group_by_region_sum", "join",
    "rfid_transform", "series_transform", "archive", "lineage_agg",
}
ARITY = {"join": 2}


@dataclass(frozen=True)
class Box:
    id: str
    kind: str
    config: dict = field(default_factory=dict)


@dataclass
class DataflowGraph:
    boxes: dict  # id -> Box, in file order
    arrows: list  # (from, to)
    base_dir: Path = Path(".")

    def inputs(self, box_id: str) -> list[str]:
        return [a for a, b in self.arrows if b == box_id]

    def outputs(self, box_id: str) -> list[str]:
        return [b for a, b in self.arrows if a == box_id]

    @property
    def sources(self) -> list[str]:
        return [b.id for b in self.boxes.values() if b.kind in SOURCE_KINDS]

    @property
    def sinks(self) -> list[str]:
        return [b.id for b in self.boxes.values() if b.kind == "sink"]

    def topo_order(self) -> list[str]:
        order, state = [], {}

        def visit(node: str, parent: str | None):
            mark = state.get(node)
            if mark == "done":
                return
            if mark == "active":
                raise ValidationError(f"cycle through arrow {parent} -> {node}")
            state[node] = "active"
            for nxt in self.outputs(node):
                visit(nxt, node)
            state[node] = "done"
            order.append(node)

        for b in self.boxes:
            visit(b, None)
        return order[::-1]

    def validate(self) -> None:
        for a, b in self.arrows:
            for end in (a, b):
                if end not in self.boxes:
                    raise ValidationError(f"arrow {a} -> {b} refers to unknown box {end!r}")
        for box in self.boxes.values():
            if box.kind not in KINDS:
                raise ValidationError(f"box {box.id!r} has unknown kind {box.kind!r}")
            n_in = len(self.inputs(box.id))
            if box.kind in SOURCE_KINDS:
                if n_in:
                    raise ValidationError(f"source box {box.id!r} has incoming arrows")
            elif n_in < 1:
                raise ValidationError(f"box {box.id!r} has no incoming arrow")
            if box.kind in ARITY and n_in != ARITY[box.kind]:
                raise ValidationError(f"{box.kind} box {box.id!r} needs exactly {ARITY[box.kind]} inputs, has {n_in}")
            if box.kind == "sink" and self.outputs(box.id):
                raise ValidationError(f"sink box {box.id!r} has outgoing arrows")
        if not self.sources:
            raise ValidationError("pipeline has no source box")
        self.topo_order()

    def to_dict(self) -> dict:
        return {"boxes": [{"id": b.id, "kind": b.kind, "config": b.config} for b in self.boxes.values()],
                "arrows": [list(a) for a in self.arrows]}


def graph_from_dict(obj: dict[str, Any], base_dir: Path | str = ".") -> DataflowGraph:
    try:
        raw_boxes = obj["boxes"]
        raw_arrows = obj.get("arrows", [])
    except (KeyError, TypeError):
        raise ValidationError("pipeline needs a 'boxes' list") from None
    boxes: dict[str, Box] = {}
    for i, b in enumerate(raw_boxes):
        if "id" not in b or "kind" not in b:
            raise ValidationError(f"box #{i} needs 'id' and 'kind'")
        bid = str(b["id"])
        if bid in boxes:
            raise ValidationError(f"duplicate box id {bid!r}")
        boxes[bid] = Box(bid, str(b["kind"]), dict(b.get("config", {})))
    arrows = []
    for i, a in enumerate(raw_arrows):
        if not isinstance(a, (list, tuple)) or len(a) != 2:
            raise ValidationError(f"arrow #{i} must be a [from, to] pair")
        arrows.append((str(a[0]), str(a[1])))
    g = DataflowGraph(boxes, arrows, Path(base_dir))
    g.validate()
    return g


def build_graph(path: str | Path) -> DataflowGraph:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    return graph_from_dict(obj, path.parent)
