"""Labelled graphs, the Levi transformation and edge augmentation.

A :class:`LabeledGraph` is what the task-specific readers produce (AMR
concepts and relations, dependency words and relations).  The encoder never
sees it directly: it is first turned into a :class:`LeviGraph`, where every
labelled edge becomes a node of its own and the remaining edges only carry a
structural :class:`EdgeTag`.
"""

from __future__ import annotations

import enum
import json
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

MAX_POSITION = 20
UNREACHABLE_POSITION = MAX_POSITION + 1
NUM_POSITIONS = MAX_POSITION + 2


class GraphError(ValueError):
    """Structural validation failure."""


class EdgeTag(str, enum.Enum):
    DEFAULT = "default"
    REVERSE = "reverse"
    SELF = "self"
    LEFT = "left"
    RIGHT = "right"


AMR_TAGS: tuple[EdgeTag, ...] = (EdgeTag.DEFAULT, EdgeTag.REVERSE, EdgeTag.SELF)
SEQUENTIAL_TAGS: tuple[EdgeTag, ...] = tuple(EdgeTag)

# edge blocks are emitted in this order by augment()
_BLOCK_ORDER = {tag: i for i, tag in enumerate(EdgeTag)}


class Origin(str, enum.Enum):
    NODE = "node"
    EDGE = "edge"


@dataclass(frozen=True)
class LabeledGraph:
    """Directed graph with labelled nodes and edges and a designated root.

    ``edges`` holds ``(src, dst, label)`` triples.  ``src`` may be ``None``
    for a virtual-root relation such as a dependency ``ROOT`` arc.
    """

    labels: tuple[str, ...]
    edges: tuple[tuple[Optional[int], int, str], ...]
    root: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "edges", tuple((s, d, l) for s, d, l in self.edges))
        n = len(self.labels)
        if n == 0:
            raise GraphError("graph has no nodes")
        if not 0 <= self.root < n:
            raise GraphError(f"root {self.root} is not a node (have {n} nodes)")
        for src, dst, label in self.edges:
            if src is not None and not 0 <= src < n:
                raise GraphError(f"edge ({src}, {dst}, {label!r}) has a dangling source")
            if not 0 <= dst < n:
                raise GraphError(f"edge ({src}, {dst}, {label!r}) has a dangling target")

    @classmethod
    def from_pairs(
        cls,
        nodes: Iterable[tuple[int, str]],
        edges: Iterable[tuple[Optional[int], int, str]],
        root: int,
    ) -> "LabeledGraph":
        """Build from explicit ``(id, label)`` pairs, checking id density."""
        nodes = list(nodes)
        ids = [i for i, _ in nodes]
        if len(set(ids)) != len(ids):
            raise GraphError("duplicate node ids")
        if sorted(ids) != list(range(len(ids))):
            raise GraphError("node ids must be contiguous from 0")
        labels = [label for _, label in sorted(nodes)]
        return cls(tuple(labels), tuple(edges), root)

    @property
    def num_nodes(self) -> int:
        return len(self.labels)

    def to_json(self) -> str:
        return json.dumps(
            {
                "nodes": [[i, label, Origin.NODE.value] for i, label in enumerate(self.labels)],
                "edges": [[s, d, l] for s, d, l in self.edges],
                "root": self.root,
                "positions": [],
            },
            ensure_ascii=False,
        )


@dataclass(frozen=True)
class LeviGraph:
    labels: tuple[str, ...]
    origins: tuple[Origin, ...]
    edges: tuple[tuple[int, int, EdgeTag], ...]
    root: int
    positions: tuple[int, ...] = field(default=())

    @property
    def num_nodes(self) -> int:
        return len(self.labels)

    def edges_with(self, tag: EdgeTag) -> list[tuple[int, int]]:
        return [(s, d) for s, d, t in self.edges if t is tag]

    def tag_counts(self) -> dict[EdgeTag, int]:
        counts = {tag: 0 for tag in EdgeTag}
        for _, _, t in self.edges:
            counts[t] += 1
        return counts

    @property
    def is_augmented(self) -> bool:
        return any(t in (EdgeTag.REVERSE, EdgeTag.SELF) for _, _, t in self.edges)

    def to_dict(self) -> dict:
        return {
            "nodes": [[i, label, o.value] for i, (label, o) in enumerate(zip(self.labels, self.origins))],
            "edges": [[s, d, t.value] for s, d, t in self.edges],
            "root": self.root,
            "positions": list(self.positions),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_dict(cls, obj: dict) -> "LeviGraph":
        nodes = sorted(obj["nodes"], key=lambda n: n[0])
        if [n[0] for n in nodes] != list(range(len(nodes))):
            raise GraphError("node ids must be contiguous from 0")
        n = len(nodes)
        edges = []
        for src, dst, tag in obj["edges"]:
            if src is None or not (0 <= src < n and 0 <= dst < n):
                raise GraphError(f"edge ({src}, {dst}, {tag}) has a dangling endpoint")
            edges.append((int(src), int(dst), EdgeTag(tag)))
        return cls(
            labels=tuple(node[1] for node in nodes),
            origins=tuple(Origin(node[2]) for node in nodes),
            edges=tuple(edges),
            root=int(obj["root"]),
            positions=tuple(int(p) for p in obj.get("positions", ())),
        )

    @classmethod
    def from_json(cls, line: str) -> "LeviGraph":
        return cls.from_dict(json.loads(line))

    def permuted(self, perm: Sequence[int]) -> "LeviGraph":
        """Relabel node ``i`` as ``perm[i]``; edge order is kept."""
        inv = [0] * len(perm)
        for old, new in enumerate(perm):
            inv[new] = old
        return LeviGraph(
            labels=tuple(self.labels[inv[i]] for i in range(len(perm))),
            origins=tuple(self.origins[inv[i]] for i in range(len(perm))),
            edges=tuple((perm[s], perm[d], t) for s, d, t in self.edges),
            root=perm[self.root],
            positions=tuple(self.positions[inv[i]] for i in range(len(perm))) if self.positions else (),
        )


def to_levi(g: LabeledGraph) -> LeviGraph:
    """Turn every edge of ``g`` into a node labelled with the edge label.

    Edge ``(u, v, l)`` becomes node ``w`` (ids follow the original nodes, in
    edge order) plus Default edges ``u -> w`` and ``w -> v``.  A virtual-root
    edge (``u is None``) only yields ``w -> v``; if it points at the root,
    ``w`` becomes the root of the Levi graph.
    """
    n = g.num_nodes
    labels = list(g.labels)
    origins = [Origin.NODE] * n
    edges: list[tuple[int, int, EdgeTag]] = []
    root = g.root
    for k, (src, dst, label) in enumerate(g.edges):
        w = n + k
        labels.append(label)
        origins.append(Origin.EDGE)
        if src is not None:
            edges.append((src, w, EdgeTag.DEFAULT))
        elif dst == g.root:
            root = w
        edges.append((w, dst, EdgeTag.DEFAULT))
    return LeviGraph(tuple(labels), tuple(origins), tuple(edges), root)


def add_sequential_edges(g: LeviGraph, order: Sequence[int]) -> LeviGraph:
    """Chain the given word nodes with Left (forward) and Right (backward) edges."""
    seen: set[int] = set()
    for node in order:
        if not 0 <= node < g.num_nodes:
            raise GraphError(f"node {node} is not in the graph")
        if g.origins[node] is not Origin.NODE:
            raise GraphError(f"node {node} comes from an edge; only word nodes can be chained")
        if node in seen:
            raise GraphError(f"node {node} appears twice in the sequence")
        seen.add(node)
    if len(order) < 2:
        return g
    extra = [(a, b, EdgeTag.LEFT) for a, b in zip(order, order[1:])]
    extra += [(b, a, EdgeTag.RIGHT) for a, b in zip(order, order[1:])]
    return replace(g, edges=g.edges + tuple(extra))


def augment(g: LeviGraph) -> LeviGraph:
    """Add one Reverse edge per Default edge and one Self edge per node.

    Output edge order: Default, Reverse, Self, Left, Right; insertion order
    inside each block.
    """
    if g.is_augmented:
        raise GraphError("graph already has reverse/self edges; augment() must run once")
    blocks: dict[EdgeTag, list[tuple[int, int, EdgeTag]]] = {tag: [] for tag in EdgeTag}
    for s, d, t in g.edges:
        blocks[t].append((s, d, t))
    blocks[EdgeTag.REVERSE] = [(d, s, EdgeTag.REVERSE) for s, d, _ in blocks[EdgeTag.DEFAULT]]
    blocks[EdgeTag.SELF] = [(v, v, EdgeTag.SELF) for v in range(g.num_nodes)]
    edges = tuple(e for tag in sorted(blocks, key=_BLOCK_ORDER.__getitem__) for e in blocks[tag])
    return replace(g, edges=edges)


def compute_positions(g: LeviGraph) -> dict[int, int]:
    """Breadth-first depth from the root over Default edges.

    Depths above MAX_POSITION are clamped; unreachable nodes get
    UNREACHABLE_POSITION.
    """
    succ: list[list[int]] = [[] for _ in range(g.num_nodes)]
    for s, d, t in g.edges:
        if t is EdgeTag.DEFAULT:
            succ[s].append(d)
    depth = {g.root: 0}
    queue = deque([g.root])
    while queue:
        u = queue.popleft()
        for v in succ[u]:
            if v not in depth:
                depth[v] = depth[u] + 1
                queue.append(v)
    return {
        v: min(depth[v], MAX_POSITION) if v in depth else UNREACHABLE_POSITION
        for v in range(g.num_nodes)
    }


def with_positions(g: LeviGraph) -> LeviGraph:
    pos = compute_positions(g)
    return replace(g, positions=tuple(pos[v] for v in range(g.num_nodes)))


def prepare(g: LabeledGraph, word_order: Optional[Sequence[int]] = None) -> LeviGraph:
    """Full input pipeline: Levi transform, optional word chain, augmentation, positions."""
    levi = to_levi(g)
    if word_order is not None:
        levi = add_sequential_edges(levi, word_order)
    return with_positions(augment(levi))


def check_bipartite(g: LeviGraph) -> bool:
    return all(g.origins[s] is not g.origins[d] for s, d, t in g.edges if t is EdgeTag.DEFAULT)
