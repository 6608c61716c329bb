"""Eligibility filtering, ranking, level construction, and image splits.

Candidate unseen concepts survive a fixed sequence of rules, get ranked by
their similarity to the seen set (descending, ties by ascending id), and
the ranked list is cut into K levels of S concepts each. Surplus concepts
are dropped in K-1 gap blocks between consecutive levels so the levels
span the whole ranked list; the blocks are as equal as possible with the
remainder going to the last gaps (policy id "even-tail-remainder").

Per-concept train/test image manifests are sampled with a per-concept
derived seed, so any single concept's split can be regenerated without
touching the others.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping

from cogbench.errors import (
    BannedRootNotInTaxonomy,
    MalformedLine,
    NotEnoughConcepts,
    SeenNotInTaxonomy,
    TooFewImages,
)
from cogbench.rng import derive_seed, make_rng
from cogbench.semsim import Measure, set_similarity
from cogbench.taxonomy import ConceptMeta, Taxonomy, _iter_lines

logger = logging.getLogger(__name__)

GAP_POLICY = "even-tail-remainder"

DEFAULT_MIN_IMAGE_COUNT = 782
DEFAULT_TRAIN_CAP = 1300
DEFAULT_TEST_SIZE = 50


@dataclass(frozen=True)
class FilterRules:
    seen: frozenset[str]
    min_image_count: int = DEFAULT_MIN_IMAGE_COUNT
    banned_subtree_roots: frozenset[str] = frozenset()
    manual_exclusions: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.min_image_count < 0:
            raise ValueError("min_image_count must be nonnegative")


@dataclass(frozen=True)
class RankedList:
    """(concept, similarity) pairs, similarity non-increasing, ties by id."""

    entries: tuple[tuple[str, float], ...]

    def __len__(self) -> int:
        return len(self.entries)

    def concepts(self) -> list[str]:
        return [c for c, _ in self.entries]


@dataclass(frozen=True)
class LevelSet:
    levels: tuple[tuple[str, ...], ...]
    discarded: tuple[str, ...]
    k: int
    size: int
    gap_policy: str = GAP_POLICY
    similarities: Mapping[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class SplitEntry:
    """Train/test image ids for one concept; the two lists are disjoint."""

    train: tuple[str, ...]
    test: tuple[str, ...]


def filter_eligible(
    taxonomy: Taxonomy,
    meta: Mapping[str, ConceptMeta],
    rules: FilterRules,
) -> set[str]:
    """Apply the eligibility rules in their fixed order and return survivors.

    Order: (a) drop seen concepts; (b) drop ancestors of any seen concept;
    (c) drop banned subtrees, roots included; (d) drop concepts whose image
    count (0 when metadata is absent) is below the threshold; (e) drop any
    survivor that is an ancestor of another survivor; (f) drop manual
    exclusions.
    """
    missing_seen = sorted(c for c in rules.seen if c not in taxonomy)
    if missing_seen:
        raise SeenNotInTaxonomy(missing_seen)
    missing_banned = sorted(c for c in rules.banned_subtree_roots if c not in taxonomy)
    if missing_banned:
        raise BannedRootNotInTaxonomy(missing_banned)

    remaining = set(taxonomy.nodes)
    remaining -= rules.seen
    for seen_concept in rules.seen:
        remaining -= taxonomy.ancestors(seen_concept)
    for banned_root in rules.banned_subtree_roots:
        remaining.discard(banned_root)
        remaining -= taxonomy.descendants(banned_root)
    remaining = {
        c for c in remaining
        if (meta[c].image_count if c in meta else 0) >= rules.min_image_count
    }
    inner = set()
    for concept in remaining:
        inner |= taxonomy.ancestors(concept) & remaining
    remaining -= inner
    remaining -= rules.manual_exclusions
    return remaining


def rank_unseen(measure: Measure, seen: Iterable[str], eligible: Iterable[str]) -> RankedList:
    """Score every eligible concept against the seen set and sort."""
    seen = frozenset(seen)
    scored = [(c, set_similarity(measure, seen, c)) for c in eligible]
    scored.sort(key=lambda item: (-item[1], item[0]))
    return RankedList(entries=tuple(scored))


def build_levels(ranked: RankedList, k: int, size: int) -> LevelSet:
    """Cut the ranked list into k levels of `size`, discarding into gaps.

    With D = len(ranked) - k*size surplus entries, the k-1 gaps get
    floor(D/(k-1)) entries each and the remainder goes to the last gaps.
    For k = 1 the surplus is dropped from the tail.
    """
    if k < 1 or size < 1:
        raise ValueError("k and size must be at least 1")
    needed = k * size
    if len(ranked) < needed:
        raise NotEnoughConcepts(len(ranked), needed)

    surplus = len(ranked) - needed
    if k == 1:
        gaps = []
    else:
        base, rem = divmod(surplus, k - 1)
        gaps = [base] * (k - 1)
        for i in range(rem):
            gaps[-(i + 1)] += 1

    entries = ranked.entries
    levels: list[tuple[str, ...]] = []
    discarded: list[str] = []
    pos = 0
    for level_idx in range(k):
        levels.append(tuple(c for c, _ in entries[pos:pos + size]))
        pos += size
        if level_idx < k - 1:
            discarded.extend(c for c, _ in entries[pos:pos + gaps[level_idx]])
            pos += gaps[level_idx]
    if k == 1:
        discarded.extend(c for c, _ in entries[pos:])

    return LevelSet(
        levels=tuple(levels),
        discarded=tuple(discarded),
        k=k,
        size=size,
        similarities={c: s for c, s in entries},
    )


def sample_split(
    concept_images: Iterable[str],
    train_cap: int = DEFAULT_TRAIN_CAP,
    test_size: int = DEFAULT_TEST_SIZE,
    seed: int = 0,
    concept: str = "",
) -> SplitEntry:
    """Draw a disjoint test sample and a capped train sample of image ids.

    The image pool is deduplicated and sorted before sampling, so the split
    depends only on the id set and the seed. Output lists are sorted.
    """
    pool = sorted(set(concept_images))
    if len(pool) < test_size + 1:
        raise TooFewImages(concept, len(pool), test_size + 1)
    perm = make_rng(seed).permutation(len(pool))
    test = sorted(pool[i] for i in perm[:test_size])
    train = sorted(pool[i] for i in perm[test_size:test_size + train_cap])
    return SplitEntry(train=tuple(train), test=tuple(test))


def build_manifests(
    level_set: LevelSet,
    images: Mapping[str, list[str]],
    global_seed: int,
    train_cap: int = DEFAULT_TRAIN_CAP,
    test_size: int = DEFAULT_TEST_SIZE,
) -> list[dict[str, SplitEntry]]:
    """Per-level {concept: SplitEntry} maps with per-concept derived seeds."""
    manifests: list[dict[str, SplitEntry]] = []
    for level in level_set.levels:
        entry: dict[str, SplitEntry] = {}
        for concept in level:
            entry[concept] = sample_split(
                images.get(concept, []),
                train_cap=train_cap,
                test_size=test_size,
                seed=derive_seed(global_seed, "split", concept),
                concept=concept,
            )
        manifests.append(entry)
    return manifests


def parse_image_list(source: Iterable[str] | IO[str]) -> dict[str, list[str]]:
    """Read concept_id<TAB>image_id lines into per-concept id lists."""
    images: dict[str, list[str]] = {}
    for line_no, line in _iter_lines(source):
        fields = line.split("\t")
        if len(fields) != 2:
            raise MalformedLine(line_no, line, "expected exactly 2 tab-separated fields")
        concept, image_id = fields
        if not concept or not image_id:
            raise MalformedLine(line_no, line, "empty field")
        images.setdefault(concept, []).append(image_id)
    return images


def level_set_to_json_dict(level_set: LevelSet, measure_name: str, seed: int) -> dict:
    """JSON-ready structure for levels.json."""
    return {
        "params": {
            "K": level_set.k,
            "S": level_set.size,
            "measure": measure_name,
            "gap_policy": level_set.gap_policy,
            "seed": seed,
        },
        "levels": [list(level) for level in level_set.levels],
        "discarded": list(level_set.discarded),
        "similarities": dict(level_set.similarities),
    }


def manifests_to_json_list(manifests: list[dict[str, SplitEntry]]) -> list[dict]:
    return [
        {concept: {"train": list(e.train), "test": list(e.test)} for concept, e in level.items()}
        for level in manifests
    ]
