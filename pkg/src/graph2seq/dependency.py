"""Dependency-tree input for translation: CoNLL reading and graph construction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .graph import LabeledGraph, LeviGraph, add_sequential_edges, augment, to_levi, with_positions


class ConllError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class DepToken:
    form: str
    head: Optional[int]  # 1-based head index, None for the root
    rel: str


@dataclass(frozen=True)
class DependencySentence:
    tokens: tuple[DepToken, ...]

    @property
    def words(self) -> list[str]:
        return [t.form for t in self.tokens]

    @property
    def root(self) -> int:
        return next(i for i, t in enumerate(self.tokens) if t.head is None)


@dataclass(frozen=True)
class ConllColumns:
    form: int = 1
    head: int = 6
    rel: int = 7


def _validate(tokens: list[DepToken], line: int) -> None:
    roots = [i for i, t in enumerate(tokens) if t.head is None]
    if len(roots) != 1:
        raise ConllError(f"sentence has {len(roots)} roots, expected exactly one", line)
    n = len(tokens)
    for i, t in enumerate(tokens):
        if t.head is not None and not 1 <= t.head <= n:
            raise ConllError(f"token {i + 1} points at missing head {t.head}", line)
    for i in range(n):
        seen = set()
        v: Optional[int] = i
        while v is not None:
            if v in seen:
                raise ConllError(f"dependency cycle through token {i + 1}", line)
            seen.add(v)
            h = tokens[v].head
            v = None if h is None else h - 1


def parse_conll(text: str, columns: ConllColumns = ConllColumns()) -> list[DependencySentence]:
    """Read tab-separated dependency blocks; head ``0`` marks the root word.

    Comment lines (``#``) and multi-word / empty-node rows (ids with ``-`` or
    ``.``) are skipped.
    """
    sentences: list[DependencySentence] = []
    current: list[DepToken] = []
    start_line = 1
    lines = text.splitlines()
    for lineno, raw in enumerate(lines + [""], start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            if current:
                _validate(current, start_line)
                sentences.append(DependencySentence(tuple(current)))
                current = []
            start_line = lineno + 1
            continue
        if line.lstrip().startswith("#"):
            continue
        cols = line.split("\t")
        need = max(columns.form, columns.head, columns.rel)
        if len(cols) <= need:
            raise ConllError(f"expected at least {need + 1} tab-separated columns, got {len(cols)}", lineno)
        if "-" in cols[0] or "." in cols[0]:
            continue
        try:
            head = int(cols[columns.head])
        except ValueError:
            raise ConllError(f"head {cols[columns.head]!r} is not an integer", lineno) from None
        current.append(DepToken(cols[columns.form], None if head == 0 else head, cols[columns.rel]))
    return sentences


def dependency_graph(sent: DependencySentence) -> LabeledGraph:
    """Words as nodes, relations as labelled edges; the root relation has no source."""
    edges = []
    for i, t in enumerate(sent.tokens):
        edges.append((None if t.head is None else t.head - 1, i, t.rel))
    return LabeledGraph(tuple(sent.words), tuple(edges), sent.root)


def build_nmt_graph(sent: DependencySentence, with_sequential: bool) -> LeviGraph:
    """Levi graph of the tree, rooted at the root-relation node.

    With ``with_sequential`` the words are chained in surface order with
    Left/Right edges (punctuation included).
    """
    levi = to_levi(dependency_graph(sent))
    if with_sequential:
        levi = add_sequential_edges(levi, list(range(len(sent.tokens))))
    return with_positions(augment(levi))
