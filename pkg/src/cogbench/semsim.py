"""Information content and semantic similarity over a taxonomy.

The primary measure scores a pair of concepts by how informative their
most informative common subsumer is, relative to the concepts themselves:
2*IC(lcs) / (IC(c1) + IC(c2)), with IC(c) = -ln(p(c)) and p(c) the fraction
of taxonomy nodes at-or-under c (so the root carries zero information).
Path-based and distance-based alternatives plus an externally supplied
score table are available behind the same interface.

All measures return values in [0, 1], are symmetric, and score identical
concepts as 1. Pair queries are pure functions and safe to evaluate
concurrently.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import IO, Iterable, Mapping

from cogbench.errors import (
    ConceptInSeenSet,
    ConfigError,
    EmptySeenSet,
    MalformedLine,
    MissingScore,
    UnknownScoreConcept,
)
from cogbench.taxonomy import Taxonomy, _iter_lines

logger = logging.getLogger(__name__)

MEASURE_NAMES = ("lin", "wup", "jc", "path", "external")


@dataclass(frozen=True)
class IcTable:
    """Information content per concept, in nats."""

    ic: Mapping[str, float]
    total: int

    def __getitem__(self, concept: str) -> float:
        return self.ic[concept]


def build_ic_table(taxonomy: Taxonomy) -> IcTable:
    """IC(c) = -ln(descendant_count(c) / |nodes|); root gets exactly 0."""
    total = len(taxonomy)
    table = {}
    for concept in taxonomy.nodes:
        # + 0.0 normalizes the root's -0.0 to 0.0
        table[concept] = -math.log(taxonomy.descendant_count(concept) / total) + 0.0
    return IcTable(ic=table, total=total)


def lcs(taxonomy: Taxonomy, ic: IcTable, c1: str, c2: str) -> str:
    """Common subsumer with maximum IC; ties broken by smallest id.

    Self counts as its own subsumer, so lcs(c, c) == c.
    """
    candidates = taxonomy.subsumers(c1) & taxonomy.subsumers(c2)
    best = None
    best_ic = -1.0
    for s in candidates:
        s_ic = ic[s]
        if s_ic > best_ic or (s_ic == best_ic and s < best):
            best, best_ic = s, s_ic
    assert best is not None  # the root subsumes everything
    return best


def lin_similarity(ic: IcTable, lcs_ic: float, c1: str, c2: str) -> float:
    """2*IC(lcs) / (IC(c1)+IC(c2)); zero denominator means both are the root."""
    denom = ic[c1] + ic[c2]
    if denom == 0.0:
        return 1.0 if c1 == c2 else 0.0
    return 2.0 * lcs_ic / denom


def jiang_conrath(ic: IcTable, lcs_ic: float, c1: str, c2: str) -> float:
    """1 / (1 + IC(c1) + IC(c2) - 2*IC(lcs)): distance mapped onto (0, 1]."""
    dist = ic[c1] + ic[c2] - 2.0 * lcs_ic
    return 1.0 / (1.0 + dist)


def wu_palmer(taxonomy: Taxonomy, c1: str, c2: str) -> float:
    """Depth-based similarity 2*depth(s) / (depth(c1) + depth(c2)).

    The subsumer s is the common subsumer maximizing the score, with the
    concept depths measured through s (depth(s) + hops to s). On trees this
    is exactly the classic deepest-common-ancestor formula; on multi-parent
    graphs the routed form keeps the result in (0, 1] and the identity
    score at 1.
    """
    up1 = taxonomy.up_distances(c1)
    up2 = taxonomy.up_distances(c2)
    best = None
    best_score = -1.0
    for s in up1.keys() & up2.keys():
        d = taxonomy.depth(s)
        score = 2.0 * d / (2.0 * d + up1[s] + up2[s])
        if score > best_score or (score == best_score and s < best):
            best, best_score = s, score
    assert best is not None
    return best_score


def path_similarity(taxonomy: Taxonomy, c1: str, c2: str) -> float:
    """1 / (1 + hops), hops = shortest path through any common subsumer."""
    up1 = taxonomy.up_distances(c1)
    up2 = taxonomy.up_distances(c2)
    hops = min(up1[s] + up2[s] for s in up1.keys() & up2.keys())
    return 1.0 / (1.0 + hops)


# -- measure objects --------------------------------------------------------


class Measure:
    """A named pairwise similarity; External bypasses pair computation."""

    name: str = ""
    supports_pairs = True

    def pair(self, c1: str, c2: str) -> float:
        raise NotImplementedError

    def score_to_seen(self, concept: str) -> float:
        raise NotImplementedError


class LinMeasure(Measure):
    name = "lin"

    def __init__(self, taxonomy: Taxonomy, ic: IcTable | None = None):
        self.taxonomy = taxonomy
        self.ic = ic if ic is not None else build_ic_table(taxonomy)

    def pair(self, c1: str, c2: str) -> float:
        lcs_ic = self.ic[lcs(self.taxonomy, self.ic, c1, c2)]
        return lin_similarity(self.ic, lcs_ic, c1, c2)


class JiangConrathMeasure(Measure):
    name = "jc"

    def __init__(self, taxonomy: Taxonomy, ic: IcTable | None = None):
        self.taxonomy = taxonomy
        self.ic = ic if ic is not None else build_ic_table(taxonomy)

    def pair(self, c1: str, c2: str) -> float:
        lcs_ic = self.ic[lcs(self.taxonomy, self.ic, c1, c2)]
        return jiang_conrath(self.ic, lcs_ic, c1, c2)


class WuPalmerMeasure(Measure):
    name = "wup"

    def __init__(self, taxonomy: Taxonomy):
        self.taxonomy = taxonomy

    def pair(self, c1: str, c2: str) -> float:
        return wu_palmer(self.taxonomy, c1, c2)


class PathMeasure(Measure):
    name = "path"

    def __init__(self, taxonomy: Taxonomy):
        self.taxonomy = taxonomy

    def pair(self, c1: str, c2: str) -> float:
        return path_similarity(self.taxonomy, c1, c2)


class ExternalMeasure(Measure):
    """Precomputed seen-set similarity per concept, from a score table."""

    name = "external"
    supports_pairs = False

    def __init__(self, scores: Mapping[str, float]):
        self.scores = dict(scores)

    def score_to_seen(self, concept: str) -> float:
        try:
            return self.scores[concept]
        except KeyError:
            raise MissingScore(concept) from None


def set_similarity(measure: Measure, seen: Iterable[str], concept: str) -> float:
    """Similarity of concept to the seen set: the max over seen members."""
    seen = set(seen)
    if not seen:
        raise EmptySeenSet()
    if concept in seen:
        raise ConceptInSeenSet(concept)
    if not measure.supports_pairs:
        return measure.score_to_seen(concept)
    return max(measure.pair(concept, s) for s in seen)


def parse_score_table(
    source: Iterable[str] | IO[str],
    taxonomy: Taxonomy | None = None,
) -> dict[str, float]:
    """Read concept<TAB>score lines; scores clamped to [0, 1] with a warning."""
    scores: dict[str, float] = {}
    unknown: list[str] = []
    clamped = 0
    for line_no, line in _iter_lines(source):
        fields = line.split("\t")
        if len(fields) != 2:
            raise MalformedLine(line_no, line, "expected exactly 2 tab-separated fields")
        concept, value_str = fields
        try:
            value = float(value_str)
        except ValueError:
            raise MalformedLine(line_no, line, f"score {value_str!r} is not a number") from None
        if math.isnan(value):
            raise MalformedLine(line_no, line, "score is NaN")
        if taxonomy is not None and concept not in taxonomy:
            unknown.append(concept)
        if value < 0.0 or value > 1.0:
            value = min(1.0, max(0.0, value))
            clamped += 1
        scores[concept] = value
    if unknown:
        raise UnknownScoreConcept(sorted(set(unknown)))
    if clamped:
        logger.warning("clamped %d external scores into [0, 1]", clamped)
    return scores


def make_measure(
    name: str,
    taxonomy: Taxonomy | None = None,
    ic: IcTable | None = None,
    scores: Mapping[str, float] | None = None,
) -> Measure:
    """Instantiate a measure by CLI name."""
    if name == "external":
        if scores is None:
            raise ConfigError("external measure requires a score table")
        return ExternalMeasure(scores)
    if taxonomy is None:
        raise ConfigError(f"measure {name!r} requires a taxonomy")
    if name == "lin":
        return LinMeasure(taxonomy, ic)
    if name == "jc":
        return JiangConrathMeasure(taxonomy, ic)
    if name == "wup":
        return WuPalmerMeasure(taxonomy)
    if name == "path":
        return PathMeasure(taxonomy)
    raise ConfigError(f"unknown measure {name!r}; expected one of {', '.join(MEASURE_NAMES)}")
