"""Parse, validate, and query a multi-parent is-a concept DAG.

Files are UTF-8 TSV. Edges are one ``child<TAB>parent`` per line (the
direction hypernym dumps use); metadata is ``id<TAB>image_count<TAB>name``
with everything after the third tab kept verbatim as the description.
Lines whose first non-blank character is ``#`` are comments.

A valid taxonomy is acyclic, has exactly one parentless node (the root),
and every node reaches the root along parent edges. Instances are immutable
after construction and safe to share across worker threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import IO, Iterable, Iterator, Mapping

from cogbench.errors import (
    CycleDetected,
    EmptyTaxonomy,
    MalformedLine,
    MultipleRoots,
    UnknownConcept,
    UnknownConceptInMeta,
)


@dataclass(frozen=True)
class ConceptMeta:
    """Per-concept metadata; absent metadata means image_count 0."""

    id: str
    image_count: int
    name: str = ""
    description: str = ""


def _is_valid_token(token: str) -> bool:
    return bool(token) and not any(ch.isspace() for ch in token)


class Taxonomy:
    """Immutable concept DAG rooted at a single node.

    Multi-parent nodes are allowed; all traversal results count shared
    subtrees once.
    """

    def __init__(self, edges: Iterable[tuple[str, str]]):
        edge_set: set[tuple[str, str]] = set()
        nodes: set[str] = set()
        for child, parent in edges:
            for token in (child, parent):
                if not _is_valid_token(token):
                    raise UnknownConcept(token)
            edge_set.add((child, parent))
            nodes.add(child)
            nodes.add(parent)
        if not nodes:
            raise EmptyTaxonomy()

        self._ids: list[str] = sorted(nodes)
        self._index: dict[str, int] = {c: i for i, c in enumerate(self._ids)}
        n = len(self._ids)
        parents: list[list[int]] = [[] for _ in range(n)]
        children: list[list[int]] = [[] for _ in range(n)]
        for child, parent in sorted(edge_set):
            ci, pi = self._index[child], self._index[parent]
            parents[ci].append(pi)
            children[pi].append(ci)
        self._parents = [tuple(p) for p in parents]
        self._children = [tuple(c) for c in children]

        self._check_acyclic()

        roots = [self._ids[i] for i in range(n) if not self._parents[i]]
        if len(roots) > 1:
            raise MultipleRoots(roots)
        # Acyclicity guarantees at least one parentless node.
        self._root = self._index[roots[0]]

        self._topo = self._toposort()
        self._anc: list[frozenset[int]] | None = None
        self._desc_counts: list[int] | None = None
        self._depths: list[int] | None = None
        self._updist_cache: dict[int, dict[int, int]] = {}

    @classmethod
    def from_edges(cls, edges: Iterable[tuple[str, str]]) -> "Taxonomy":
        return cls(edges)

    # -- validation helpers ----------------------------------------------

    def _check_acyclic(self) -> None:
        # Iterative DFS over parent edges; a gray target means a back edge.
        WHITE, GRAY, BLACK = 0, 1, 2
        color = [WHITE] * len(self._ids)
        for start in range(len(self._ids)):
            if color[start] != WHITE:
                continue
            stack: list[tuple[int, int]] = [(start, 0)]
            color[start] = GRAY
            while stack:
                node, edge_pos = stack[-1]
                if edge_pos < len(self._parents[node]):
                    stack[-1] = (node, edge_pos + 1)
                    target = self._parents[node][edge_pos]
                    if color[target] == GRAY:
                        raise CycleDetected(self._ids[node], self._ids[target])
                    if color[target] == WHITE:
                        color[target] = GRAY
                        stack.append((target, 0))
                else:
                    color[node] = BLACK
                    stack.pop()

    def _toposort(self) -> list[int]:
        # Parents come before children (root first).
        n = len(self._ids)
        pending = [len(self._parents[i]) for i in range(n)]
        order: list[int] = []
        frontier = [self._root]
        while frontier:
            node = frontier.pop()
            order.append(node)
            for child in self._children[node]:
                pending[child] -= 1
                if pending[child] == 0:
                    frontier.append(child)
        return order

    # -- basic accessors ---------------------------------------------------

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, concept: str) -> bool:
        return concept in self._index

    @property
    def nodes(self) -> frozenset[str]:
        return frozenset(self._ids)

    @property
    def root(self) -> str:
        return self._ids[self._root]

    def _idx(self, concept: str) -> int:
        try:
            return self._index[concept]
        except KeyError:
            raise UnknownConcept(concept) from None

    def parents(self, concept: str) -> frozenset[str]:
        return frozenset(self._ids[p] for p in self._parents[self._idx(concept)])

    def children(self, concept: str) -> frozenset[str]:
        return frozenset(self._ids[c] for c in self._children[self._idx(concept)])

    def leaves(self) -> frozenset[str]:
        return frozenset(self._ids[i] for i in range(len(self._ids)) if not self._children[i])

    def edges(self) -> Iterator[tuple[str, str]]:
        """Yield (child, parent) pairs; set-equal to the parsed input."""
        for ci, ps in enumerate(self._parents):
            for pi in ps:
                yield self._ids[ci], self._ids[pi]

    # -- derived structure, computed once and cached -----------------------

    def _ancestor_sets(self) -> list[frozenset[int]]:
        if self._anc is None:
            anc: list[frozenset[int]] = [frozenset()] * len(self._ids)
            for node in self._topo:
                acc: set[int] = set()
                for p in self._parents[node]:
                    acc.add(p)
                    acc.update(anc[p])
                anc[node] = frozenset(acc)
            self._anc = anc
        return self._anc

    def _descendant_counts(self) -> list[int]:
        if self._desc_counts is None:
            # Reachability as int bitmasks so shared subtrees count once.
            masks: list[int] = [0] * len(self._ids)
            for node in reversed(self._topo):
                mask = 1 << node
                for child in self._children[node]:
                    mask |= masks[child]
                masks[node] = mask
            self._desc_counts = [m.bit_count() for m in masks]
        return self._desc_counts

    def _node_depths(self) -> list[int]:
        if self._depths is None:
            depths = [0] * len(self._ids)
            depths[self._root] = 1
            for node in self._topo:
                if node == self._root:
                    continue
                depths[node] = 1 + min(depths[p] for p in self._parents[node])
            self._depths = depths
        return self._depths

    # -- queries -----------------------------------------------------------

    def ancestors(self, concept: str) -> frozenset[str]:
        """Transitive parents of concept, excluding itself."""
        idx = self._idx(concept)
        return frozenset(self._ids[a] for a in self._ancestor_sets()[idx])

    def descendant_count(self, concept: str) -> int:
        """Distinct nodes reachable via child edges, including concept itself."""
        return self._descendant_counts()[self._idx(concept)]

    def descendants(self, concept: str) -> frozenset[str]:
        """Distinct nodes strictly below concept."""
        start = self._idx(concept)
        seen = {start}
        stack = [start]
        while stack:
            for child in self._children[stack.pop()]:
                if child not in seen:
                    seen.add(child)
                    stack.append(child)
        seen.discard(start)
        return frozenset(self._ids[i] for i in seen)

    def depth(self, concept: str) -> int:
        """Shortest-path hops to the root, plus one (root has depth 1)."""
        return self._node_depths()[self._idx(concept)]

    def up_distances(self, concept: str) -> Mapping[str, int]:
        """Minimum parent-edge hops from concept to each ancestor-or-self."""
        idx = self._idx(concept)
        cached = self._updist_cache.get(idx)
        if cached is None:
            cached = {idx: 0}
            frontier = [idx]
            hops = 0
            while frontier:
                hops += 1
                nxt: list[int] = []
                for node in frontier:
                    for p in self._parents[node]:
                        if p not in cached:
                            cached[p] = hops
                            nxt.append(p)
                frontier = nxt
            self._updist_cache[idx] = cached
        return {self._ids[i]: h for i, h in cached.items()}

    def subsumers(self, concept: str) -> frozenset[str]:
        """Ancestors of concept plus concept itself."""
        idx = self._idx(concept)
        return frozenset(self._ids[a] for a in self._ancestor_sets()[idx]) | {concept}


def _iter_lines(source: Iterable[str] | IO[str]) -> Iterator[tuple[int, str]]:
    for line_no, raw in enumerate(source, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        yield line_no, line


def parse_edge_lines(source: Iterable[str] | IO[str]) -> list[tuple[str, str]]:
    """Read child<TAB>parent pairs, rejecting malformed lines."""
    edges: list[tuple[str, str]] = []
    for line_no, line in _iter_lines(source):
        fields = line.split("\t")
        if len(fields) != 2:
            raise MalformedLine(line_no, line, "expected exactly 2 tab-separated fields")
        child, parent = fields
        for token in (child, parent):
            if not _is_valid_token(token):
                raise MalformedLine(line_no, line, f"bad concept id {token!r}")
        edges.append((child, parent))
    return edges


def parse_metadata(
    source: Iterable[str] | IO[str],
    taxonomy: Taxonomy | None = None,
) -> dict[str, ConceptMeta]:
    """Read id<TAB>image_count<TAB>name[<TAB>description] records.

    When a taxonomy is given, ids outside it raise UnknownConceptInMeta.
    """
    meta: dict[str, ConceptMeta] = {}
    unknown: list[str] = []
    for line_no, line in _iter_lines(source):
        fields = line.split("\t", 3)
        if len(fields) < 3:
            raise MalformedLine(line_no, line, "expected at least 3 tab-separated fields")
        concept, count_str, name = fields[0], fields[1], fields[2]
        description = fields[3] if len(fields) == 4 else ""
        if not _is_valid_token(concept):
            raise MalformedLine(line_no, line, f"bad concept id {concept!r}")
        try:
            count = int(count_str)
        except ValueError:
            raise MalformedLine(line_no, line, f"image count {count_str!r} is not an integer") from None
        if count < 0:
            raise MalformedLine(line_no, line, f"negative image count {count}")
        if taxonomy is not None and concept not in taxonomy:
            unknown.append(concept)
        meta[concept] = ConceptMeta(id=concept, image_count=count, name=name, description=description)
    if unknown:
        raise UnknownConceptInMeta(sorted(set(unknown)))
    return meta


def parse_taxonomy(
    edges_source: Iterable[str] | IO[str],
    meta_source: Iterable[str] | IO[str] | None = None,
) -> tuple[Taxonomy, dict[str, ConceptMeta]]:
    """Build a validated Taxonomy and its metadata map from TSV streams."""
    taxonomy = Taxonomy(parse_edge_lines(edges_source))
    meta = parse_metadata(meta_source, taxonomy) if meta_source is not None else {}
    return taxonomy, meta


def serialize_edges(taxonomy: Taxonomy) -> Iterator[str]:
    """Edge lines in a canonical order; reparsing yields an equal edge set."""
    for child, parent in sorted(taxonomy.edges()):
        yield f"{child}\t{parent}\n"
