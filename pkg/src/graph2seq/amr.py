"""PENMAN reading/writing and AMR simplification, anonymisation and its inverse."""

from __future__ import annotations

import calendar
import json
import logging
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional, Sequence

from .graph import LabeledGraph

log = logging.getLogger(__name__)

_VARIABLE_SHAPE = re.compile(r"^[a-z]\d*$")
_SENSE = re.compile(r"-\d+$")


class PenmanError(ValueError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{message} (line {line}, column {col})")
        self.line = line
        self.col = col


class AnonymizationError(ValueError):
    pass


@dataclass(frozen=True)
class AmrGraph:
    """Concept/constant nodes in definition order; node 0 is the top variable.

    ``paths`` maps tree addresses ("0", "0.1", "0.1.0", children counted
    from 0 in textual order) to node ids.
    """

    labels: tuple[str, ...]
    edges: tuple[tuple[int, int, str], ...]
    variables: tuple[Optional[str], ...]
    quoted: tuple[bool, ...]
    root: int = 0
    paths: Mapping[str, int] = field(default_factory=dict)

    @property
    def num_nodes(self) -> int:
        return len(self.labels)

    def is_constant(self, v: int) -> bool:
        return self.variables[v] is None

    def children(self, v: int) -> list[tuple[int, str]]:
        return [(d, r) for s, d, r in self.edges if s == v]

    def to_labeled(self) -> LabeledGraph:
        return LabeledGraph(self.labels, self.edges, self.root)


# --- parsing ------------------------------------------------------------------

_TOKEN = re.compile(r'\s+|(?P<lp>\()|(?P<rp>\))|(?P<slash>/)|(?P<role>:[^\s()"]*)|(?P<str>"(?:[^"\\]|\\.)*")|(?P<sym>[^\s()/:"][^\s()"]*)')


def _tokenize(text: str):
    pos = 0
    line, line_start = 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise PenmanError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind is not None:
            yield kind, m.group(), line, pos - line_start + 1
        chunk = m.group()
        nl = chunk.count("\n")
        if nl:
            line += nl
            line_start = pos + chunk.rfind("\n") + 1
        pos = m.end()
    yield "eof", "", line, pos - line_start + 1


def parse_penman(text: str) -> AmrGraph:
    """Parse one PENMAN expression (comment lines starting with ``#`` are skipped)."""
    body = "\n".join("" if ln.lstrip().startswith("#") else ln for ln in text.splitlines())
    tokens = list(_tokenize(body))
    pos = 0

    labels: list[str] = []
    variables: list[Optional[str]] = []
    quoted: list[bool] = []
    var_index: dict[str, int] = {}
    edges: list[tuple[int, Optional[int], str]] = []  # dst None => pending reference
    pending: dict[int, tuple[str, int, int]] = {}
    paths: dict[str, int] = {}

    def peek():
        return tokens[pos]

    def take(kind: str):
        nonlocal pos
        tok = tokens[pos]
        if tok[0] != kind:
            raise PenmanError(f"expected {kind}, found {tok[1] or 'end of input'!r}", tok[2], tok[3])
        pos += 1
        return tok

    def node(path: str) -> int:
        take("lp")
        _, var, line, col = take("sym")
        if var in var_index:
            raise PenmanError(f"variable {var!r} defined twice", line, col)
        concept = "amr-unknown"
        if peek()[0] == "slash":
            take("slash")
            kind, concept, l2, c2 = peek()
            if kind not in ("sym", "str"):
                raise PenmanError("missing concept after '/'", l2, c2)
            take(kind)
        me = len(labels)
        labels.append(concept)
        variables.append(var)
        quoted.append(False)
        var_index[var] = me
        paths[path] = me
        child = 0
        while peek()[0] == "role":
            _, role, rl, rc = take("role")
            role = role[1:]
            kind, val, vl, vc = peek()
            child_path = f"{path}.{child}"
            if kind == "lp":
                # reserve the slot so edges stay in textual order
                slot = len(edges)
                edges.append((me, -1, role))
                edges[slot] = (me, node(child_path), role)
            elif kind == "str":
                take("str")
                edges.append((me, _constant(val[1:-1], True, child_path), role))
            elif kind == "sym":
                take("sym")
                if _VARIABLE_SHAPE.match(val):
                    pending[len(edges)] = (val, vl, vc)
                    edges.append((me, None, role))
                else:
                    edges.append((me, _constant(val, False, child_path), role))
            else:
                raise PenmanError(f"role :{role} has no value", vl, vc)
            child += 1
        if peek()[0] != "rp":
            _, val, line, col = peek()
            raise PenmanError(f"unbalanced parentheses near {val or 'end of input'!r}", line, col)
        take("rp")
        return me

    def _constant(value: str, is_quoted: bool, path: str) -> int:
        labels.append(value)
        variables.append(None)
        quoted.append(is_quoted)
        paths[path] = len(labels) - 1
        return len(labels) - 1

    if peek()[0] != "lp":
        _, val, line, col = peek()
        raise PenmanError("expected '(' to start the graph", line, col)
    node("0")
    if peek()[0] != "eof":
        _, val, line, col = peek()
        raise PenmanError(f"unexpected {val!r} after the graph", line, col)

    resolved = []
    for i, (s, d, r) in enumerate(edges):
        if d is None:
            name, line, col = pending[i]
            if name not in var_index:
                raise PenmanError(f"undefined variable {name!r}", line, col)
            d = var_index[name]
        resolved.append((s, d, r))
    return AmrGraph(tuple(labels), tuple(resolved), tuple(variables), tuple(quoted), 0, paths)


def to_penman(g: AmrGraph) -> str:
    """Serialise depth-first from the root; every node reachable from it is printed."""
    names: dict[int, str] = {}
    for v in range(g.num_nodes):
        if g.is_constant(v):
            continue
        name = g.variables[v] or f"v{v}"
        names[v] = name
    printed: set[int] = set()
    kids: dict[int, list[tuple[int, str]]] = {}
    for s, d, r in g.edges:
        kids.setdefault(s, []).append((d, r))

    def fmt(v: int) -> str:
        if g.is_constant(v):
            return f'"{g.labels[v]}"' if g.quoted[v] else g.labels[v]
        if v in printed:
            return names[v]
        printed.add(v)
        parts = [f"({names[v]} / {g.labels[v]}"]
        for d, r in kids.get(v, []):
            parts.append(f":{r} {fmt(d)}")
        return " ".join(parts) + ")"

    return fmt(g.root)


@dataclass
class AmrEntry:
    graph: AmrGraph
    meta: dict[str, str]

    @property
    def tokens(self) -> Optional[list[str]]:
        tok = self.meta.get("tok") or self.meta.get("snt")
        return tok.split() if tok is not None else None


def read_amr_corpus(text: str) -> Iterable[AmrEntry]:
    """Yield ``AmrEntry`` per blank-line separated block, with ``# ::key value`` metadata."""
    for block in re.split(r"\n\s*\n", text):
        if not block.strip():
            continue
        meta: dict[str, str] = {}
        for line in block.splitlines():
            s = line.strip()
            if s.startswith("#"):
                for m in re.finditer(r"::(\S+)\s*((?:(?!\s::\S).)*)", s):
                    meta[m.group(1)] = m.group(2).strip()
        if all(line.strip().startswith("#") for line in block.splitlines() if line.strip()):
            continue
        yield AmrEntry(parse_penman(block), meta)


# --- alignments ---------------------------------------------------------------


@dataclass(frozen=True)
class Alignment:
    node: int
    start: int
    end: int  # exclusive


def alignments_from_paths(g: AmrGraph, triples: Iterable[Sequence]) -> list[Alignment]:
    """Resolve ``(node-path, token-start, token-end)`` triples against ``g``."""
    out = []
    for path, start, end in triples:
        if path not in g.paths:
            raise AnonymizationError(f"alignment refers to unknown node path {path!r}")
        out.append(Alignment(g.paths[path], int(start), int(end)))
    return out


def parse_alignment_comment(value: str) -> list[tuple[str, int, int]]:
    """Convert ``start-end|path+path ...`` (end exclusive) into path triples."""
    triples = []
    for item in value.split():
        if "|" not in item:
            continue
        span, paths = item.split("|", 1)
        start, end = (int(x) for x in span.split("-"))
        for path in paths.split("+"):
            triples.append((path, start, end))
    return triples


def read_alignment_jsonl(text: str) -> list[list[tuple[str, int, int]]]:
    """One JSON array of ``[path, start, end]`` triples per line."""
    return [[tuple(t) for t in json.loads(line)] for line in text.splitlines() if line.strip()]


# --- simplification -----------------------------------------------------------


def _restrict(g: AmrGraph, keep_edges: Sequence[tuple[int, int, str]], labels: Sequence[str]) -> AmrGraph:
    kids: dict[int, list[int]] = {}
    for s, d, _ in keep_edges:
        kids.setdefault(s, []).append(d)
    seen = [g.root]
    stack = [g.root]
    reach = {g.root}
    while stack:
        v = stack.pop()
        for d in kids.get(v, []):
            if d not in reach:
                reach.add(d)
                seen.append(d)
                stack.append(d)
    order = sorted(reach)
    remap = {old: new for new, old in enumerate(order)}
    return AmrGraph(
        labels=tuple(labels[v] for v in order),
        edges=tuple((remap[s], remap[d], r) for s, d, r in keep_edges if s in reach and d in reach),
        variables=tuple(g.variables[v] for v in order),
        quoted=tuple(g.quoted[v] for v in order),
        root=remap[g.root],
        paths={p: remap[v] for p, v in g.paths.items() if v in remap},
    )


def simplify(g: AmrGraph) -> AmrGraph:
    """Strip ``-NN`` sense suffixes from concepts and drop every ``:wiki`` subgraph."""
    labels = [lab if g.is_constant(v) else _SENSE.sub("", lab) for v, lab in enumerate(g.labels)]
    edges = [e for e in g.edges if e[2] != "wiki"]
    return _restrict(g, edges, labels)


# --- anonymisation ------------------------------------------------------------

DEFAULT_ENTITY_TYPES: dict[str, str] = {
    **{c: "person" for c in ("person", "family", "animal", "language", "nationality", "ethnic-group", "regional-group", "religious-group", "political-movement")},
    **{
        c: "loc"
        for c in (
            "country", "city", "state", "province", "territory", "county", "district", "continent",
            "world-region", "location", "local-region", "country-region", "city-district", "island",
            "ocean", "sea", "lake", "river", "mountain", "desert", "forest", "park", "road", "street",
            "bridge", "building", "airport", "port", "facility", "planet", "star", "canyon", "valley",
        )
    },
    **{
        c: "org"
        for c in (
            "organization", "company", "government-organization", "military", "criminal-organization",
            "political-party", "market-sector", "school", "university", "research-institute", "team",
            "league", "newspaper", "publication", "broadcast-program", "religious-organization",
        )
    },
}


@dataclass
class AnonymizationMap:
    entries: list[tuple[str, list[str]]] = field(default_factory=list)

    def as_dict(self) -> dict[str, list[str]]:
        return {tok: names for tok, names in self.entries}

    def to_json(self) -> list:
        return [[tok, list(names)] for tok, names in self.entries]

    @classmethod
    def from_json(cls, obj: list) -> "AnonymizationMap":
        return cls([(tok, list(names)) for tok, names in obj])


def coarse_type(concept: str, table: Optional[Mapping[str, str]]) -> str:
    if table is None:
        return concept
    return table.get(concept, "other")


def _subgraph(g: AmrGraph, start: int) -> list[int]:
    """Depth-first preorder over the subtree rooted at ``start``."""
    order, seen = [], set()

    def visit(v):
        if v in seen:
            return
        seen.add(v)
        order.append(v)
        for d, _ in g.children(v):
            visit(d)

    visit(start)
    return order


_DATE_ROLES = ("day", "month", "year")


def anonymize(
    g: AmrGraph,
    alignments: Sequence[Alignment] = (),
    surface: Optional[Sequence[str]] = None,
    entity_types: Optional[Mapping[str, str]] = DEFAULT_ENTITY_TYPES,
) -> tuple[AmrGraph, Optional[list[str]], AnonymizationMap]:
    """Collapse ``:name`` entities and date parts into indexed placeholder tokens.

    Indices run per placeholder type, in depth-first order from the root.
    With alignments and a surface sentence, each maximal run of aligned
    tokens becomes a single placeholder token.
    """
    for a in alignments:
        if not 0 <= a.node < g.num_nodes:
            raise AnonymizationError(f"alignment refers to node {a.node}, graph has {g.num_nodes}")
    labels = list(g.labels)
    dropped_edges: set[int] = set()
    amap = AnonymizationMap()
    counters: dict[str, int] = {}
    token_of: dict[int, str] = {}  # node -> placeholder (surface side)
    date_parts: dict[int, tuple[str, int, str]] = {}  # constant node -> (role, index, value)

    def next_index(kind: str) -> int:
        counters[kind] = counters.get(kind, 0) + 1
        return counters[kind] - 1

    for v in _subgraph(g, g.root):
        if g.is_constant(v):
            continue
        name_edges = [(i, e) for i, e in enumerate(g.edges) if e[0] == v and e[2] == "name" and not g.is_constant(e[1])]
        if name_edges:
            kind = coarse_type(g.labels[v], entity_types)
            token = f"{kind}_{next_index(kind)}"
            names = []
            members = {v}
            for i, (_, n, _) in name_edges:
                dropped_edges.add(i)
                sub = _subgraph(g, n)
                members.update(sub)
                names.extend(g.labels[u] for u in sub if g.is_constant(u))
            labels[v] = token
            amap.entries.append((token, names))
            for u in members:
                token_of[u] = token
        elif g.labels[v] == "date-entity":
            k = next_index("date")
            for d, role in g.children(v):
                if role in _DATE_ROLES and g.is_constant(d):
                    token = f"{role}_{k}"
                    amap.entries.append((token, [g.labels[d]]))
                    labels[d] = token
                    date_parts[d] = (role, k, g.labels[d])

    keep = [e for i, e in enumerate(g.edges) if i not in dropped_edges]
    out = _restrict(g, keep, labels)

    new_surface = None if surface is None else list(surface)
    if surface is not None:
        placeholder: list[Optional[str]] = [None] * len(surface)
        covered_nodes = set()
        for a in alignments:
            tok = None
            if a.node in token_of:
                tok = token_of[a.node]
            elif a.node in date_parts:
                role, k, _ = date_parts[a.node]
                word = " ".join(surface[a.start : a.end])
                if role == "year":
                    tok = f"year_{k}"
                else:
                    tok = f"{role}_{'number' if word.isdigit() else 'name'}_{k}"
            if tok is None:
                continue
            covered_nodes.add(a.node)
            for i in range(max(a.start, 0), min(a.end, len(surface))):
                placeholder[i] = tok
        entity_nodes = {v for v, t in token_of.items() if v in covered_nodes}
        for token, _ in amap.entries:
            if token.split("_")[0] in _DATE_ROLES:
                continue
            if not any(token_of[v] == token for v in entity_nodes):
                log.warning("no alignment for %s; surface left untouched", token)
        new_surface = []
        i = 0
        while i < len(surface):
            if placeholder[i] is None:
                new_surface.append(surface[i])
                i += 1
                continue
            j = i
            while j + 1 < len(surface) and placeholder[j + 1] == placeholder[i]:
                j += 1
            new_surface.append(placeholder[i])
            i = j + 1
    return out, new_surface, amap


_DATE_SURFACE = re.compile(r"^(day|month)_(name|number)_(\d+)$")


def ordinal(n: int) -> str:
    suffix = "th" if 10 <= n % 100 <= 20 else {1: "st", 2: "nd", 3: "rd"}.get(n % 10, "th")
    return f"{n}{suffix}"


def _render_date(kind: str, form: str, value: str) -> str:
    try:
        n = int(value)
    except ValueError:
        return value
    if kind == "month" and form == "name" and 1 <= n <= 12:
        return calendar.month_name[n]
    if kind == "day" and form == "name":
        return ordinal(n)
    return str(n)


def deanonymize(tokens: Sequence[str], amap: AnonymizationMap | Mapping[str, list[str]]) -> list[str]:
    """Replace every placeholder present in the map by its recorded names."""
    table = amap.as_dict() if isinstance(amap, AnonymizationMap) else dict(amap)
    out: list[str] = []
    for tok in tokens:
        if tok in table:
            out.extend(table[tok])
            continue
        m = _DATE_SURFACE.match(tok)
        if m and f"{m.group(1)}_{m.group(3)}" in table:
            value = table[f"{m.group(1)}_{m.group(3)}"][0]
            out.append(_render_date(m.group(1), m.group(2), value))
            continue
        out.append(tok)
    return out


def with_labels(g: AmrGraph, labels: Sequence[str]) -> AmrGraph:
    return replace(g, labels=tuple(labels))
