"""Taxonomy-driven benchmark construction and linear-probe evaluation."""

__version__ = "0.1.0"

from cogbench.errors import CogError
from cogbench.taxonomy import ConceptMeta, Taxonomy, parse_metadata, parse_taxonomy
from cogbench.semsim import (
    IcTable,
    build_ic_table,
    jiang_conrath,
    lcs,
    lin_similarity,
    make_measure,
    set_similarity,
    wu_palmer,
)
from cogbench.levels import (
    FilterRules,
    LevelSet,
    RankedList,
    SplitEntry,
    build_levels,
    build_manifests,
    filter_eligible,
    rank_unseen,
    sample_split,
)
from cogbench.features import FeatureTable, l2_normalize, load_features, split_by_manifest, write_features
from cogbench.probe import (
    LinearModel,
    ProbeConfig,
    ProbeResult,
    evaluate_top1,
    fewshot_subsample,
    hyper_search,
    run_protocol,
    train_logreg,
)

__all__ = [
    "CogError",
    "ConceptMeta",
    "Taxonomy",
    "parse_metadata",
    "parse_taxonomy",
    "IcTable",
    "build_ic_table",
    "jiang_conrath",
    "lcs",
    "lin_similarity",
    "make_measure",
    "set_similarity",
    "wu_palmer",
    "FilterRules",
    "LevelSet",
    "RankedList",
    "SplitEntry",
    "build_levels",
    "build_manifests",
    "filter_eligible",
    "rank_unseen",
    "sample_split",
    "FeatureTable",
    "l2_normalize",
    "load_features",
    "split_by_manifest",
    "write_features",
    "LinearModel",
    "ProbeConfig",
    "ProbeResult",
    "evaluate_top1",
    "fewshot_subsample",
    "hyper_search",
    "run_protocol",
    "train_logreg",
]
