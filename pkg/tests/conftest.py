"""Shared fixtures: the 6-node toy taxonomy and friends."""

from __future__ import annotations

import io

import pytest

from cogbench.taxonomy import ConceptMeta, Taxonomy

# entity -> {A, B}; A -> {a1, a2}; B -> {b1}
TOY6_EDGES = [
    ("a1", "A"),
    ("a2", "A"),
    ("b1", "B"),
    ("A", "entity"),
    ("B", "entity"),
]

TOY6_EDGES_TSV = "".join(f"{c}\t{p}\n" for c, p in TOY6_EDGES)


@pytest.fixture
def toy6() -> Taxonomy:
    return Taxonomy(TOY6_EDGES)


def toy6_meta(**counts) -> dict[str, ConceptMeta]:
    """Metadata for the toy leaves; override per-concept counts by keyword."""
    base = {"a1": 1000, "a2": 1000, "b1": 1000}
    base.update(counts)
    return {c: ConceptMeta(id=c, image_count=n, name=c) for c, n in base.items()}


@pytest.fixture
def tsv():
    def make(text: str):
        return io.StringIO(text)

    return make
