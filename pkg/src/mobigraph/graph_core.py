"""Annotated mobility graphs, the node-relabeling action and the graph metric.

A graph is the pair (adjacency, node attributes). Node order is arbitrary but
shared between the two; ``permute_graph`` is the group action that changes it.
Edge weights are scalars, so the elementwise distance between corresponding
edges is ``|x - y|`` and ``graph_distance`` reduces to a Frobenius norm.
"""

from __future__ import annotations

import enum
import json
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import DataError, DimensionError

NodeId = int | str


class Modality(str, enum.Enum):
    AVG_TRAVEL_TIME = "avg-time"
    TRIP_COUNT = "trip-count"


class Period(str, enum.Enum):
    AM = "am"
    PM = "pm"
    UNSPECIFIED = "unspecified"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MobilityGraph:
    """Weighted undirected graph over locations with 2-D node attributes.

    Arrays are copied and made read-only on construction. Structural
    invariants are *not* enforced here; use :func:`validate_graph`.
    """

    node_ids: tuple[NodeId, ...]
    node_attrs: np.ndarray
    adjacency: np.ndarray
    modality: Modality = Modality.AVG_TRAVEL_TIME
    period: Period = Period.UNSPECIFIED
    null_mask: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        object.__setattr__(self, "node_ids", tuple(self.node_ids))
        object.__setattr__(self, "adjacency", _frozen(self.adjacency))
        attrs = np.asarray(self.node_attrs, dtype=float)
        if attrs.size == 0:
            attrs = attrs.reshape(0, 2)
        object.__setattr__(self, "node_attrs", _frozen(attrs))
        if self.null_mask is None:
            mask = np.zeros(len(self.node_ids), dtype=bool)
        else:
            mask = np.array(self.null_mask, dtype=bool, copy=True)
        mask.setflags(write=False)
        object.__setattr__(self, "null_mask", mask)
        object.__setattr__(self, "modality", Modality(self.modality))
        object.__setattr__(self, "period", Period(self.period))

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def real_nodes(self) -> np.ndarray:
        return np.flatnonzero(~self.null_mask)

    def edges(self) -> list[tuple[int, int]]:
        """Index pairs ``(i, j)`` with ``i < j`` and nonzero weight."""
        iu, ju = np.nonzero(np.triu(self.adjacency, k=1))
        return list(zip(iu.tolist(), ju.tolist()))

    def equals(self, other: MobilityGraph) -> bool:
        """Exact (bitwise) equality of every field."""
        return (
            self.node_ids == other.node_ids
            and self.modality == other.modality
            and self.period == other.period
            and np.array_equal(self.adjacency, other.adjacency)
            and np.array_equal(self.node_attrs, other.node_attrs)
            and np.array_equal(self.null_mask, other.null_mask)
        )


@dataclass(frozen=True, eq=False)
class Permutation:
    """Bijection on ``0..n-1``.

    ``mapping[i] = j`` registers node ``j`` of the second graph to node ``i``
    of the first. The matrix form has ``P[i, mapping[i]] = 1``, so
    ``P @ A @ P.T`` has entry ``(i, k) = A[mapping[i], mapping[k]]``.
    """

    mapping: np.ndarray

    def __post_init__(self) -> None:
        m = np.array(self.mapping, dtype=np.int64, copy=True).ravel()
        n = m.size
        if n and (m.min() < 0 or m.max() >= n or np.unique(m).size != n):
            raise DataError(f"not a bijection on 0..{n - 1}: {m.tolist()}")
        m.setflags(write=False)
        object.__setattr__(self, "mapping", m)

    def __len__(self) -> int:
        return self.mapping.size

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Permutation) and np.array_equal(self.mapping, other.mapping)

    def __hash__(self) -> int:
        return hash(self.mapping.tobytes())

    @classmethod
    def identity(cls, n: int) -> Permutation:
        return cls(np.arange(n))

    @classmethod
    def random(cls, n: int, rng: np.random.Generator) -> Permutation:
        return cls(rng.permutation(n))

    def inverse(self) -> Permutation:
        inv = np.empty_like(self.mapping)
        inv[self.mapping] = np.arange(self.mapping.size)
        return Permutation(inv)

    def compose(self, other: Permutation) -> Permutation:
        """Permutation equal to applying ``self`` first, then ``other``.

        ``permute_graph(permute_graph(g, self), other)`` equals
        ``permute_graph(g, self.compose(other))``.
        """
        return Permutation(self.mapping[other.mapping])

    def matrix(self) -> np.ndarray:
        n = self.mapping.size
        P = np.zeros((n, n))
        P[np.arange(n), self.mapping] = 1.0
        return P

    def tolist(self) -> list[int]:
        return self.mapping.tolist()


def permute_graph(g: MobilityGraph, p: Permutation) -> MobilityGraph:
    """Relabel ``g`` so that its new node ``i`` is its old node ``p.mapping[i]``."""
    if len(p) != g.n:
        raise DimensionError(f"permutation has length {len(p)} but graph has {g.n} nodes")
    idx = p.mapping
    return replace(
        g,
        node_ids=tuple(g.node_ids[i] for i in idx),
        node_attrs=g.node_attrs[idx],
        adjacency=g.adjacency[np.ix_(idx, idx)],
        null_mask=g.null_mask[idx],
    )


def graph_distance(a1: np.ndarray, a2: np.ndarray) -> float:
    """Root of the summed squared edgewise differences (Frobenius norm of ``a1 - a2``)."""
    a1 = np.asarray(a1, dtype=float)
    a2 = np.asarray(a2, dtype=float)
    if a1.shape != a2.shape:
        raise DimensionError(f"adjacency shapes differ: {a1.shape} vs {a2.shape}")
    return float(np.sqrt(np.sum(np.abs(a1 - a2) ** 2)))


@dataclass(frozen=True)
class InterpolationPath:
    steps: tuple[MobilityGraph, ...]
    ts: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.steps)


def _blend(x1: np.ndarray, x2: np.ndarray, t: float) -> np.ndarray:
    out = (1.0 - t) * x1 + t * x2
    # rounding must not push a blended entry outside its endpoint interval
    return np.clip(out, np.minimum(x1, x2), np.maximum(x1, x2))


def interpolate(g1: MobilityGraph, g2_registered: MobilityGraph, num_steps: int) -> InterpolationPath:
    """Straight-line walk from ``g1`` to an already registered ``g2``.

    Intermediate snapshots carry ``g1``'s node ids; a node counts as null only
    if it is null at both ends.
    """
    if num_steps < 2:
        raise DataError(f"num_steps must be >= 2, got {num_steps}")
    if g1.n != g2_registered.n:
        raise DimensionError(f"graphs have {g1.n} and {g2_registered.n} nodes")
    ts = [k / (num_steps - 1) for k in range(num_steps)]
    both_null = g1.null_mask & g2_registered.null_mask
    steps = [g1]
    for t in ts[1:-1]:
        steps.append(
            replace(
                g1,
                adjacency=_blend(g1.adjacency, g2_registered.adjacency, t),
                node_attrs=_blend(g1.node_attrs, g2_registered.node_attrs, t),
                null_mask=both_null,
            )
        )
    steps.append(g2_registered)
    return InterpolationPath(tuple(steps), tuple(ts))


def validate_graph(g: MobilityGraph) -> list[str]:
    """List every violated structural invariant; empty means the graph is well formed."""
    problems: list[str] = []
    A = g.adjacency
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        return [f"adjacency must be square, got shape {A.shape}"]
    n = A.shape[0]
    sizes = {
        "node_ids": len(g.node_ids),
        "node_attrs": g.node_attrs.shape[0],
        "null_mask": g.null_mask.shape[0],
    }
    for name, size in sizes.items():
        if size != n:
            problems.append(f"size: {name} has {size} entries but adjacency is {n}x{n}")
    if g.node_attrs.ndim != 2 or (g.node_attrs.size and g.node_attrs.shape[1] != 2):
        problems.append(f"node_attrs must be n x 2, got shape {g.node_attrs.shape}")
    if len(set(g.node_ids)) != len(g.node_ids):
        problems.append("node_ids: identifiers are not unique")
    if not np.all(np.isfinite(A)):
        for i, j in zip(*np.nonzero(~np.isfinite(A))):
            problems.append(f"finite: adjacency[{i},{j}] = {A[i, j]}")
        return problems
    for i, j in zip(*np.nonzero(A < 0)):
        problems.append(f"nonnegative: adjacency[{i},{j}] = {A[i, j]} < 0")
    for i in np.flatnonzero(np.diag(A) != 0):
        problems.append(f"zero diagonal: adjacency[{i},{i}] = {A[i, i]}")
    iu, ju = np.nonzero(np.triu(A != A.T, k=1))
    for i, j in zip(iu, ju):
        problems.append(f"symmetric: adjacency[{i},{j}] = {A[i, j]} != adjacency[{j},{i}] = {A[j, i]}")
    if sizes["null_mask"] == n:
        for i in np.flatnonzero(g.null_mask):
            if np.any(A[i] != 0) or np.any(A[:, i] != 0):
                problems.append(f"null node {i}: null-mask rule requires an all-zero adjacency row/column")
            if i < g.node_attrs.shape[0] and np.any(g.node_attrs[i] != 0):
                problems.append(f"null node {i}: null-mask rule requires zero node_attrs")
    return problems


# -- serialization ---------------------------------------------------------


def graph_to_dict(g: MobilityGraph) -> dict[str, Any]:
    return {
        "node_ids": list(g.node_ids),
        "node_attrs": g.node_attrs.tolist(),
        "adjacency": g.adjacency.tolist(),
        "modality": g.modality.value,
        "period": g.period.value,
        "null_mask": g.null_mask.tolist(),
    }


def graph_from_dict(doc: dict[str, Any]) -> MobilityGraph:
    try:
        n = len(doc["node_ids"])
        attrs = np.asarray(doc["node_attrs"], dtype=float).reshape(n, 2) if n else np.zeros((0, 2))
        adj = np.asarray(doc["adjacency"], dtype=float).reshape(n, n) if n else np.zeros((0, 0))
        return MobilityGraph(
            node_ids=tuple(doc["node_ids"]),
            node_attrs=attrs,
            adjacency=adj,
            modality=Modality(doc.get("modality", Modality.AVG_TRAVEL_TIME.value)),
            period=Period(doc.get("period", Period.UNSPECIFIED.value)),
            null_mask=doc.get("null_mask"),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"invalid graph document: {exc}") from exc


def dumps_graph(g: MobilityGraph) -> str:
    return json.dumps(graph_to_dict(g), indent=1) + "\n"


def save_graph(g: MobilityGraph, path: str | Path) -> None:
    Path(path).write_text(dumps_graph(g), encoding="utf-8")


def load_graph(path: str | Path, *, validate: bool = True) -> MobilityGraph:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read graph {path}: {exc}") from exc
    g = graph_from_dict(doc)
    if validate:
        problems = validate_graph(g)
        if problems:
            raise DataError(f"graph {path} is malformed: " + "; ".join(problems[:5]))
    return g


def to_graphml(g: MobilityGraph) -> str:
    """GraphML text: nodes carry ``x``/``y``, undirected edges carry ``weight``."""
    root = ET.Element("graphml", xmlns="http://graphml.graphdrawing.org/xmlns")
    for key_id, owner in (("x", "node"), ("y", "node"), ("null", "node"), ("weight", "edge")):
        ET.SubElement(
            root,
            "key",
            {
                "id": key_id,
                "for": owner,
                "attr.name": key_id,
                "attr.type": "boolean" if key_id == "null" else "double",
            },
        )
    graph = ET.SubElement(
        root,
        "graph",
        id=f"{g.modality.value}-{g.period.value}",
        edgedefault="undirected",
    )
    for i, nid in enumerate(g.node_ids):
        node = ET.SubElement(graph, "node", id=str(nid))
        ET.SubElement(node, "data", key="x").text = repr(float(g.node_attrs[i, 0]))
        ET.SubElement(node, "data", key="y").text = repr(float(g.node_attrs[i, 1]))
        ET.SubElement(node, "data", key="null").text = "true" if g.null_mask[i] else "false"
    for i, j in g.edges():
        edge = ET.SubElement(graph, "edge", source=str(g.node_ids[i]), target=str(g.node_ids[j]))
        ET.SubElement(edge, "data", key="weight").text = repr(float(g.adjacency[i, j]))
    ET.indent(root)
    return ET.tostring(root, encoding="unicode", xml_declaration=True) + "\n"


def make_graph(
    adjacency: Sequence[Sequence[float]] | np.ndarray,
    node_attrs: Sequence[Sequence[float]] | np.ndarray | None = None,
    node_ids: Sequence[NodeId] | None = None,
    **kwargs: Any,
) -> MobilityGraph:
    """Convenience constructor with zero attributes and ``0..n-1`` ids by default."""
    A = np.asarray(adjacency, dtype=float)
    n = A.shape[0]
    if node_attrs is None:
        node_attrs = np.zeros((n, 2))
    if node_ids is None:
        node_ids = range(n)
    return MobilityGraph(node_ids=tuple(node_ids), node_attrs=node_attrs, adjacency=A, **kwargs)
