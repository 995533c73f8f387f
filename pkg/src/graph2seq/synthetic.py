"""Small synthetic corpora for smoke tests, overfitting checks and demos."""

from __future__ import annotations

import calendar
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .amr import ordinal
from .graph import LabeledGraph, prepare
from .training import Instance

CONCEPTS = (
    "boy", "girl", "dog", "cat", "teacher", "city", "book", "river",
    "want", "see", "believe", "give", "read", "like", "find", "know",
)
RELATIONS = ("ARG0", "ARG1", "ARG2", "location", "time")
WORDS = {"ARG0": "by", "ARG1": "of", "ARG2": "to", "location": "in", "time": "when"}


def random_tree(rng: np.random.Generator, n_concepts: int) -> LabeledGraph:
    labels = [str(c) for c in rng.choice(CONCEPTS, size=n_concepts, replace=False)]
    edges = []
    for child in range(1, n_concepts):
        parent = int(rng.integers(0, child))
        edges.append((parent, child, str(rng.choice(RELATIONS))))
    return LabeledGraph(tuple(labels), tuple(edges), 0)


def realise(g: LabeledGraph) -> list[str]:
    """Depth-first surface string: concept word, then relation word + subtree per child."""
    children: dict[int, list[tuple[int, str]]] = {}
    for s, d, l in g.edges:
        children.setdefault(s, []).append((d, l))
    out: list[str] = []

    def visit(v: int) -> None:
        out.append(g.labels[v])
        for d, l in children.get(v, []):
            out.append(WORDS[l])
            visit(d)

    visit(g.root)
    return out


def toy_corpus(n: int = 50, seed: int = 0, max_concepts: int = 5, min_count: int = 2) -> list[Instance]:
    """``n`` distinct tree/sentence pairs; every source label and target token occurs ``min_count``+ times.

    With ``max_concepts = 5`` the Levi graphs have at most 9 nodes and the
    sentences at most 9 tokens.
    """
    rng = np.random.default_rng(seed)
    for _ in range(1000):
        seen: set[str] = set()
        pairs: list[tuple[LabeledGraph, list[str]]] = []
        while len(pairs) < n:
            g = random_tree(rng, int(rng.integers(2, max_concepts + 1)))
            sent = realise(g)
            key = " ".join(sent) + "|" + repr(g.edges)
            if key in seen:
                continue
            seen.add(key)
            pairs.append((g, sent))
        if _min_frequency(pairs) >= min_count:
            return [Instance(prepare(g), sent, i) for i, (g, sent) in enumerate(pairs)]
    raise RuntimeError("could not draw a corpus meeting the frequency constraint")


def _min_frequency(pairs) -> int:
    from collections import Counter

    counts: Counter[str] = Counter()
    for g, sent in pairs:
        counts.update(g.labels)
        counts.update(l for _, _, l in g.edges)
        counts.update(sent)
    return min(counts.values())


def random_levi(rng: np.random.Generator, max_nodes: int = 20, labels: Optional[list[str]] = None):
    """Random rooted graph (with occasional reentrancies) whose Levi form has at most ``max_nodes`` nodes."""
    labels = labels or list(CONCEPTS)
    n = int(rng.integers(1, max(2, (max_nodes + 1) // 2) + 1))
    edges = []
    for child in range(1, n):
        edges.append((int(rng.integers(0, child)), child, str(rng.choice(RELATIONS))))
    while n + len(edges) < max_nodes and n > 1 and rng.random() < 0.3:
        a, b = sorted(int(x) for x in rng.choice(n, 2, replace=False))
        edges.append((a, b, str(rng.choice(RELATIONS))))
    g = LabeledGraph(tuple(str(x) for x in rng.choice(labels, size=n)), tuple(edges), 0)
    return prepare(g)


# --- synthetic AMR with named entities and dates ------------------------------

_PREDICATES = {"visit-01": "visited", "meet-03": "met", "praise-01": "praised", "criticize-01": "criticized"}
_ENTITY_KINDS = {
    "person": ("Anna", "Boris", "Chen", "Dara", "Elif", "Okafor", "Ivanova", "Smith"),
    "city": ("Paris", "Lagos", "Kyoto", "Lima", "New", "York", "Porto"),
    "country": ("Russia", "India", "China", "Peru", "South", "Korea"),
    "organization": ("United", "Nations", "Red", "Cross", "Acme"),
}


@dataclass
class SyntheticAmr:
    penman: str
    tokens: list[str]
    alignments: list[tuple[str, int, int]]  # (node path, start, end exclusive)
    entity_spans: list[tuple[int, int]]

    def block(self) -> str:
        """Corpus block with ``::tok`` and ``::alignments`` comment lines."""
        al = " ".join(f"{s}-{e}|{p}" for p, s, e in self.alignments)
        return f"# ::tok {' '.join(self.tokens)}\n# ::alignments {al}\n{self.penman}\n"


def synthetic_amr(rng: np.random.Generator) -> SyntheticAmr:
    """One sentence with 1-3 named entities and an optional date, fully aligned."""
    pred = str(rng.choice(list(_PREDICATES)))
    n_ent = int(rng.integers(1, 4))
    roles = ["ARG0", "ARG1", "ARG2"][:n_ent]
    tokens: list[str] = []
    alignments: list[tuple[str, int, int]] = []
    spans: list[tuple[int, int]] = []
    parts = [f"(v0 / {pred}"]
    var = 1
    for k, role in enumerate(roles):
        kind = str(rng.choice(list(_ENTITY_KINDS)))
        names = [str(x) for x in rng.choice(_ENTITY_KINDS[kind], size=int(rng.integers(1, 3)), replace=False)]
        if k == 1:
            tokens.append(_PREDICATES[pred])
        elif k == 2:
            tokens.append("and")
        start = len(tokens)
        tokens.extend(names)
        spans.append((start, len(tokens)))
        alignments.append((f"0.{k}", start, len(tokens)))
        ops = " ".join(f':op{i + 1} "{n}"' for i, n in enumerate(names))
        wiki = f':wiki "{"_".join(names)}" ' if rng.random() < 0.6 else (":wiki - " if rng.random() < 0.5 else "")
        parts.append(f" :{role} (v{var} / {kind} {wiki}:name (v{var + 1} / name {ops}))")
        var += 2
    if n_ent == 1:
        tokens.append(_PREDICATES[pred])
    if rng.random() < 0.6:
        k = n_ent
        present = [r for r in ("year", "month", "day") if rng.random() < 0.7] or ["year"]
        values = {"year": int(rng.integers(1950, 2030)), "month": int(rng.integers(1, 13)), "day": int(rng.integers(1, 29))}
        parts.append(f" :time (v{var} / date-entity " + " ".join(f":{r} {values[r]}" for r in present) + ")")
        tokens.append("on")
        surface = {
            "month": calendar.month_name[values["month"]] if rng.random() < 0.5 else str(values["month"]),
            "day": ordinal(values["day"]) if rng.random() < 0.5 else str(values["day"]),
            "year": str(values["year"]),
        }
        for r in ("month", "day", "year"):
            if r in present:
                alignments.append((f"0.{k}.{present.index(r)}", len(tokens), len(tokens) + 1))
                tokens.append(surface[r])
    tokens.append(".")
    return SyntheticAmr("".join(parts) + ")", tokens, alignments, spans)
