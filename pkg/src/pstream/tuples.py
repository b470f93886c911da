"""Probabilistic tuples, lineage derivations, and the JSONL wire format."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Iterable, Iterator, Mapping

import numpy as np

from . import distributions as dist
from .errors import InputError


@dataclass(frozen=True)
class BaseRef:
    """Leaf of a derivation: attribute ``attr`` of archived base tuple ``tuple_id``."""

    tuple_id: str
    attr: str


@dataclass(frozen=True)
class Derived:
    """A replayable step applied to ``source``.

    ``op`` is one of ``affine`` (params ``(a, b)``) or ``truncate`` (params
    ``(lo, hi, lo_closed, hi_closed)``).
    """

    op: str
    params: tuple
    source: "BaseRef | Derived"


class IdGen:
    def __init__(self, prefix: str = "t"):
        self.prefix = prefix
        self._counter = itertools.count()

    def __call__(self) -> str:
        return f"{self.prefix}{next(self._counter)}"


_default_ids = IdGen("t")


def default_ids() -> IdGen:
    return _default_ids


@dataclass(frozen=True, eq=False)
class ProbTuple:
    id: str
    ts: float
    attrs: Mapping[str, Any]
    existence: float = 1.0
    lineage: frozenset = frozenset()
    derivations: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.existence <= 1.0 + 1e-12:
            raise InputError(f"existence probability {self.existence} outside (0, 1]")
        object.__setattr__(self, "existence", min(float(self.existence), 1.0))
        object.__setattr__(self, "attrs", MappingProxyType(dict(self.attrs)))
        object.__setattr__(self, "derivations", MappingProxyType(dict(self.derivations)))
        lineage = frozenset(self.lineage) if self.lineage else frozenset([self.id])
        object.__setattr__(self, "lineage", lineage)

    @property
    def is_base(self) -> bool:
        return self.lineage == frozenset([self.id])

    def derivation(self, attr: str):
        """How ``attr`` was computed from base tuples, or None if not replayable.

        An explicit None entry in ``derivations`` marks an opaque attribute.
        """
        if attr in self.derivations:
            return self.derivations[attr]
        if self.is_base:
            return BaseRef(self.id, attr)
        return None

    def all_derivations(self) -> dict:
        out = {}
        for name in self.attrs:
            d = self.derivation(name)
            if d is not None:
                out[name] = d
        return out

    def replace(self, **changes) -> "ProbTuple":
        fields = dict(id=self.id, ts=self.ts, attrs=dict(self.attrs), existence=self.existence,
                      lineage=self.lineage, derivations=dict(self.derivations))
        fields.update(changes)
        return ProbTuple(**fields)

    def __repr__(self):
        names = ", ".join(self.attrs)
        return f"ProbTuple({self.id!r}, ts={self.ts}, attrs=[{names}], e={self.existence:.4g})"


def base_tuple(tid: str, ts: float, attrs: Mapping[str, Any], existence: float = 1.0) -> ProbTuple:
    return ProbTuple(tid, ts, attrs, existence, frozenset([tid]))


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------

_DIST_TYPES = (dist.PointMass, dist.Gaussian1D, dist.GaussianMixture, dist.GaussianND, dist.WeightedSamples,
               dist.GridPdf, dist.AxisProduct)


def is_distribution(v: Any) -> bool:
    return isinstance(v, _DIST_TYPES)


def _value_to_json(v: Any):
    if is_distribution(v):
        return dist.to_dict(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, tuple):
        return list(v)
    return v


def _value_from_json(v: Any):
    if isinstance(v, dict) and "kind" in v:
        return dist.from_dict(v)
    return v


def _deriv_to_json(d) -> dict:
    if d is None:
        return {"opaque": True}
    if isinstance(d, BaseRef):
        return {"base": d.tuple_id, "attr": d.attr}
    return {"op": d.op, "params": [_finite(p) for p in d.params], "source": _deriv_to_json(d.source)}


def _finite(p):
    if isinstance(p, float) and math.isinf(p):
        return "inf" if p > 0 else "-inf"
    return p


def _unfinite(p):
    if p == "inf":
        return math.inf
    if p == "-inf":
        return -math.inf
    return p


def _deriv_from_json(obj: dict):
    if obj.get("opaque"):
        return None
    if "base" in obj:
        return BaseRef(obj["base"], obj["attr"])
    return Derived(obj["op"], tuple(_unfinite(p) for p in obj["params"]), _deriv_from_json(obj["source"]))


def tuple_to_dict(t: ProbTuple) -> dict:
    out = {
        "id": t.id,
        "ts": t.ts,
        "attrs": {k: _value_to_json(v) for k, v in t.attrs.items()},
        "existence": t.existence,
        "lineage": sorted(t.lineage),
    }
    if t.derivations:
        out["derivations"] = {k: _deriv_to_json(v) for k, v in sorted(t.derivations.items())}
    return out


def tuple_from_dict(obj: dict) -> ProbTuple:
    try:
        derivs = {k: _deriv_from_json(v) for k, v in obj.get("derivations", {}).items()}
        return ProbTuple(str(obj["id"]), float(obj["ts"]),
                         {k: _value_from_json(v) for k, v in obj["attrs"].items()},
                         float(obj.get("existence", 1.0)), frozenset(obj.get("lineage") or [obj["id"]]), derivs)
    except KeyError as exc:
        raise InputError(f"tuple object lacks field {exc}") from None


def dumps(t: ProbTuple) -> str:
    return json.dumps(tuple_to_dict(t), sort_keys=True, separators=(",", ":"))


def write_jsonl(path, tuples: Iterable[ProbTuple]) -> int:
    n = 0
    with open(path, "w") as fh:
        for t in tuples:
            fh.write(dumps(t))
            fh.write("\n")
            n += 1
    return n


def read_jsonl(path) -> Iterator[ProbTuple]:
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield tuple_from_dict(json.loads(line))
