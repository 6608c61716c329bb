"""Taxonomy parsing, validation, and query tests."""

from __future__ import annotations

import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cogbench.errors import (
    CycleDetected,
    EmptyTaxonomy,
    MalformedLine,
    MultipleRoots,
    UnknownConcept,
    UnknownConceptInMeta,
)
from cogbench.taxonomy import Taxonomy, parse_metadata, parse_taxonomy, serialize_edges

from conftest import TOY6_EDGES, TOY6_EDGES_TSV
from oracles import brute_ancestors, brute_descendant_count, random_dag_edges, random_tree_edges


def test_parse_toy6():
    taxonomy, meta = parse_taxonomy(io.StringIO(TOY6_EDGES_TSV))
    assert len(taxonomy) == 6
    assert taxonomy.root == "entity"
    assert meta == {}


def test_parse_skips_comments_and_blank_lines():
    text = "# a comment\n\n" + TOY6_EDGES_TSV + "   \n"
    taxonomy, _ = parse_taxonomy(io.StringIO(text))
    assert len(taxonomy) == 6


def test_parse_dedupes_edges():
    taxonomy, _ = parse_taxonomy(io.StringIO(TOY6_EDGES_TSV + "a1\tA\n"))
    assert sorted(taxonomy.edges()) == sorted(TOY6_EDGES)


def test_cycle_detected():
    with pytest.raises(CycleDetected):
        parse_taxonomy(io.StringIO(TOY6_EDGES_TSV + "entity\ta1\n"))


def test_self_loop_is_a_cycle():
    with pytest.raises(CycleDetected):
        Taxonomy([("x", "x"), ("x", "root")])


def test_multiple_roots():
    with pytest.raises(MultipleRoots) as info:
        parse_taxonomy(io.StringIO(TOY6_EDGES_TSV + "c1\tentity2\n"))
    assert set(info.value.roots) == {"entity", "entity2"}


def test_empty_input():
    with pytest.raises(EmptyTaxonomy):
        parse_taxonomy(io.StringIO("# nothing\n"))


@pytest.mark.parametrize(
    "line",
    ["a1\n", "a1\tA\textra\n", "\tA\n", "a 1\tA\n"],
)
def test_malformed_edge_lines(line):
    with pytest.raises(MalformedLine):
        parse_taxonomy(io.StringIO(TOY6_EDGES_TSV + line))


def test_ancestors(toy6):
    assert toy6.ancestors("a1") == {"A", "entity"}
    assert toy6.ancestors("entity") == frozenset()
    assert toy6.ancestors("b1") == {"B", "entity"}


def test_ancestors_unknown_concept(toy6):
    with pytest.raises(UnknownConcept):
        toy6.ancestors("nope")


def test_descendant_count(toy6):
    assert toy6.descendant_count("entity") == 6
    assert toy6.descendant_count("A") == 3
    assert toy6.descendant_count("a1") == 1


def test_descendants_and_children(toy6):
    assert toy6.descendants("A") == {"a1", "a2"}
    assert toy6.children("entity") == {"A", "B"}
    assert toy6.parents("a1") == {"A"}
    assert toy6.leaves() == {"a1", "a2", "b1"}


def test_depth(toy6):
    assert toy6.depth("entity") == 1
    assert toy6.depth("A") == 2
    assert toy6.depth("b1") == 3


def test_shared_child_counted_once():
    # diamond: d has two parents, must count once under the root
    taxonomy = Taxonomy([("b", "a"), ("c", "a"), ("d", "b"), ("d", "c")])
    assert taxonomy.descendant_count("a") == 4
    assert taxonomy.ancestors("d") == {"a", "b", "c"}
    assert taxonomy.depth("d") == 3


def test_metadata_parsing(toy6):
    text = "a1\t900\tcat one\tsome words\twith a tab\na2\t5\tcat two\n"
    meta = parse_metadata(io.StringIO(text), toy6)
    assert meta["a1"].image_count == 900
    assert meta["a1"].description == "some words\twith a tab"
    assert meta["a2"].description == ""


def test_metadata_unknown_concept(toy6):
    with pytest.raises(UnknownConceptInMeta) as info:
        parse_metadata(io.StringIO("zz\t10\tname\n"), toy6)
    assert info.value.concepts == ["zz"]


@pytest.mark.parametrize("line", ["a1\tx\tname\n", "a1\t-3\tname\n", "a1\t10\n"])
def test_metadata_malformed(toy6, line):
    with pytest.raises(MalformedLine):
        parse_metadata(io.StringIO(line), toy6)


def test_edge_round_trip(toy6):
    text = "".join(serialize_edges(toy6))
    reparsed, _ = parse_taxonomy(io.StringIO(text))
    assert set(reparsed.edges()) == set(toy6.edges())


def test_queries_match_brute_force_on_random_dags():
    rng = np.random.default_rng(7)
    for _ in range(20):
        edges = random_dag_edges(rng, int(rng.integers(2, 60)), int(rng.integers(0, 30)))
        taxonomy = Taxonomy(edges)
        nodes = sorted(taxonomy.nodes)
        for node in nodes:
            assert taxonomy.ancestors(node) == brute_ancestors(edges, node)
            assert taxonomy.descendant_count(node) == brute_descendant_count(edges, node)


def test_tree_descendant_counts_sum():
    rng = np.random.default_rng(3)
    for _ in range(10):
        edges = random_tree_edges(rng, int(rng.integers(2, 80)))
        taxonomy = Taxonomy(edges)
        root = taxonomy.root
        total = sum(taxonomy.descendant_count(c) for c in taxonomy.children(root)) + 1
        assert total == taxonomy.descendant_count(root) == len(taxonomy)
        # in a tree every child counts strictly fewer nodes than its parent
        for child, parent in taxonomy.edges():
            assert taxonomy.descendant_count(parent) > taxonomy.descendant_count(child) - 1
            assert taxonomy.descendant_count(parent) >= taxonomy.descendant_count(child)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=20), min_size=1, max_size=40))
def test_parent_choices_always_build_valid_taxonomy(choices):
    # node i+1 attaches to some earlier node: always a valid tree
    edges = [(f"n{i + 1}", f"n{min(c, i)}") for i, c in enumerate(choices)]
    taxonomy = Taxonomy(edges)
    assert taxonomy.root == "n0"
    for node in taxonomy.nodes:
        if node != taxonomy.root:
            assert taxonomy.root in taxonomy.ancestors(node)
        assert node not in taxonomy.ancestors(node)
