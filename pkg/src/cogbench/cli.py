"""Command-line pipelines.

Subcommands: taxonomy validate, sim, levels build, features pack,
probe run, report. Runs are configured by one TOML file; command-line
flags override config values. Exit codes: 0 success, 1 partial unit
failures, 2 configuration or input errors. COG_LOG sets the log level.

Every output file embeds a provenance block with the tool version, the
hash of the resolved configuration (excluding the output directory and
parallelism, which must not affect results), and the seed. Level files
additionally carry a hash of the level definitions themselves, which
probe results inherit so reports can refuse to mix incompatible runs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

import cogbench
from cogbench.errors import CogError, ConfigError
from cogbench.features import l2_normalize, load_features, pack_tsv, split_by_manifest
from cogbench.levels import (
    DEFAULT_MIN_IMAGE_COUNT,
    DEFAULT_TEST_SIZE,
    DEFAULT_TRAIN_CAP,
    FilterRules,
    build_levels,
    build_manifests,
    filter_eligible,
    level_set_to_json_dict,
    manifests_to_json_list,
    parse_image_list,
    rank_unseen,
)
from cogbench.probe import (
    ProbeConfig,
    result_to_csv_rows,
    result_to_json_dict,
    run_protocol,
    shots_key,
)
from cogbench.report import SCHEMA_VERSION, write_report
from cogbench.semsim import MEASURE_NAMES, make_measure, parse_score_table, set_similarity
from cogbench.taxonomy import parse_taxonomy

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2


def _setup_logging() -> None:
    level = os.environ.get("COG_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _canonical_hash(payload) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _provenance(config_hash: str, seed: int) -> dict:
    return {
        "tool": "cogbench",
        "version": cogbench.__version__,
        "schema_version": SCHEMA_VERSION,
        "config_hash": config_hash,
        "seed": seed,
    }


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, indent=2)
        f.write("\n")


def _load_toml(path: str | None) -> tuple[dict, Path]:
    if path is None:
        return {}, Path.cwd()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    with open(p, "rb") as f:
        return tomllib.load(f), p.parent


def _resolve_path(base: Path, value, key: str) -> Path:
    if value is None:
        raise ConfigError(f"missing config value: {key}")
    p = Path(value)
    return p if p.is_absolute() else base / p


def _require_file(path: Path) -> Path:
    if not path.is_file():
        raise ConfigError(f"input file not found: {path}")
    return path


def _read_concept_file(path: Path) -> list[str]:
    out = []
    with open(path, encoding="utf-8") as f:
        for raw in f:
            line = raw.strip()
            if line and not line.startswith("#"):
                out.append(line)
    return out


def _parse_shots(text: str) -> tuple[int | None, ...]:
    shots: list[int | None] = []
    for piece in text.split(","):
        piece = piece.strip()
        if not piece:
            continue
        if piece.lower() == "all":
            shots.append(None)
        else:
            try:
                shots.append(int(piece))
            except ValueError:
                raise ConfigError(f"bad shot count {piece!r}") from None
    if not shots:
        raise ConfigError("empty shot list")
    return tuple(shots)


def _shots_from_config(raw) -> tuple[int | None, ...]:
    shots: list[int | None] = []
    for item in raw:
        if isinstance(item, str):
            if item.lower() != "all":
                raise ConfigError(f"bad shot count {item!r}")
            shots.append(None)
        else:
            shots.append(int(item))
    return tuple(shots)


# -- cog taxonomy validate ----------------------------------------------------


def cmd_taxonomy_validate(args) -> int:
    edges_path = _require_file(Path(args.edges))
    with open(edges_path, encoding="utf-8") as f:
        meta_stream = None
        if args.meta:
            meta_stream = open(_require_file(Path(args.meta)), encoding="utf-8")
        try:
            taxonomy, meta = parse_taxonomy(f, meta_stream)
        finally:
            if meta_stream is not None:
                meta_stream.close()
    edge_count = sum(1 for _ in taxonomy.edges())
    print(
        f"ok: {len(taxonomy)} nodes, {edge_count} edges, root={taxonomy.root}, "
        f"{len(taxonomy.leaves())} leaves, {len(meta)} metadata records"
    )
    return EXIT_OK


# -- cog sim -------------------------------------------------------------------


def cmd_sim(args) -> int:
    with open(_require_file(Path(args.edges)), encoding="utf-8") as f:
        taxonomy, _ = parse_taxonomy(f)
    scores = None
    if args.measure == "external":
        if not args.scores:
            raise ConfigError("--measure external requires --scores")
        with open(_require_file(Path(args.scores)), encoding="utf-8") as f:
            scores = parse_score_table(f, taxonomy)
    measure = make_measure(args.measure, taxonomy=taxonomy, scores=scores)

    if args.pair:
        if not measure.supports_pairs:
            raise ConfigError("the external measure has no pairwise form; use --seen-file/--concept")
        c1, c2 = args.pair
        print(measure.pair(c1, c2))
    else:
        seen = _read_concept_file(_require_file(Path(args.seen_file)))
        print(set_similarity(measure, seen, args.concept))
    return EXIT_OK


# -- cog levels build ----------------------------------------------------------


def cmd_levels_build(args) -> int:
    config, base = _load_toml(args.config)
    paths_cfg = config.get("paths", {})
    levels_cfg = config.get("levels", {})

    taxonomy_path = _require_file(_resolve_path(base, paths_cfg.get("taxonomy"), "paths.taxonomy"))
    metadata_path = _require_file(_resolve_path(base, paths_cfg.get("metadata"), "paths.metadata"))
    images_path = _require_file(_resolve_path(base, paths_cfg.get("images"), "paths.images"))
    seen_path = _require_file(_resolve_path(base, levels_cfg.get("seen_file"), "levels.seen_file"))

    measure_name = args.measure or levels_cfg.get("measure", "lin")
    if measure_name not in MEASURE_NAMES:
        raise ConfigError(f"unknown measure {measure_name!r}")
    scores_path = None
    if measure_name == "external":
        scores_path = _require_file(_resolve_path(base, levels_cfg.get("scores"), "levels.scores"))

    k = int(levels_cfg.get("k", 5))
    size = int(levels_cfg.get("s", 1000))
    min_images = int(levels_cfg.get("min_image_count", DEFAULT_MIN_IMAGE_COUNT))
    train_cap = int(levels_cfg.get("train_cap", DEFAULT_TRAIN_CAP))
    test_size = int(levels_cfg.get("test_size", DEFAULT_TEST_SIZE))
    banned = levels_cfg.get("banned_subtree_roots", [])
    exclusions = levels_cfg.get("manual_exclusions", [])
    seed = int(args.seed if args.seed is not None else config.get("seed", 0))
    out_dir = Path(args.out if args.out else _resolve_path(base, paths_cfg.get("out", "out"), "paths.out"))

    config_hash = _canonical_hash({
        "command": "levels build",
        "taxonomy": _file_digest(taxonomy_path),
        "metadata": _file_digest(metadata_path),
        "images": _file_digest(images_path),
        "seen": _file_digest(seen_path),
        "scores": _file_digest(scores_path) if scores_path else None,
        "measure": measure_name,
        "k": k,
        "s": size,
        "min_image_count": min_images,
        "banned_subtree_roots": sorted(banned),
        "manual_exclusions": sorted(exclusions),
        "train_cap": train_cap,
        "test_size": test_size,
        "seed": seed,
    })

    with open(taxonomy_path, encoding="utf-8") as ef, open(metadata_path, encoding="utf-8") as mf:
        taxonomy, meta = parse_taxonomy(ef, mf)
    seen = frozenset(_read_concept_file(seen_path))
    rules = FilterRules(
        seen=seen,
        min_image_count=min_images,
        banned_subtree_roots=frozenset(banned),
        manual_exclusions=frozenset(exclusions),
    )
    scores = None
    if scores_path:
        with open(scores_path, encoding="utf-8") as f:
            scores = parse_score_table(f, taxonomy)
    measure = make_measure(measure_name, taxonomy=taxonomy, scores=scores)

    eligible = filter_eligible(taxonomy, meta, rules)
    ranked = rank_unseen(measure, seen, eligible)
    level_set = build_levels(ranked, k, size)
    with open(images_path, encoding="utf-8") as f:
        images = parse_image_list(f)
    manifests = build_manifests(level_set, images, seed, train_cap=train_cap, test_size=test_size)

    levels_doc = level_set_to_json_dict(level_set, measure_name, seed)
    levels_hash = _canonical_hash({k: levels_doc[k] for k in ("params", "levels", "discarded")})
    provenance = _provenance(config_hash, seed)
    provenance["levels_hash"] = levels_hash

    out_dir.mkdir(parents=True, exist_ok=True)
    levels_doc["provenance"] = provenance
    _write_json(out_dir / "levels.json", levels_doc)
    _write_json(out_dir / "manifests.json", {"provenance": provenance, "levels": manifests_to_json_list(manifests)})

    print(
        f"{len(eligible)} eligible concepts -> {k} levels x {size}"
        f" ({len(level_set.discarded)} discarded); wrote {out_dir / 'levels.json'} and {out_dir / 'manifests.json'}"
    )
    return EXIT_OK


# -- cog features pack ---------------------------------------------------------


def cmd_features_pack(args) -> int:
    input_path = _require_file(Path(args.input))
    output_path = Path(args.output)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    with open(input_path, encoding="utf-8") as src, open(output_path, "wb") as dst:
        table = pack_tsv(src, dst)
    print(f"packed {table.n} rows x {table.dim} dims -> {output_path}")
    return EXIT_OK


# -- cog probe run ---------------------------------------------------------------


def cmd_probe_run(args) -> int:
    config, base = _load_toml(args.config)
    paths_cfg = config.get("paths", {})
    probe_cfg_raw = dict(config.get("probe", {}))

    manifests_path = _require_file(_resolve_path(base, paths_cfg.get("manifests"), "paths.manifests"))
    feature_values = paths_cfg.get("features")
    if not feature_values:
        raise ConfigError("missing config value: paths.features")
    feature_paths = [_require_file(_resolve_path(base, v, "paths.features")) for v in feature_values]
    out_dir = Path(args.out if args.out else _resolve_path(base, paths_cfg.get("out", "out"), "paths.out"))
    seed = int(args.seed if args.seed is not None else config.get("seed", 0))
    jobs = int(args.jobs)
    model_id = probe_cfg_raw.pop("model_id", "model")

    config_shots = probe_cfg_raw.pop("shots", None)
    if args.shots is not None:
        probe_cfg_raw["shot_counts"] = _parse_shots(args.shots)
    elif config_shots is not None:
        probe_cfg_raw["shot_counts"] = _shots_from_config(config_shots)
    for key in ("lr_range", "wd_range"):
        if key in probe_cfg_raw:
            low, high = probe_cfg_raw[key]
            probe_cfg_raw[key] = (float(low), float(high))
    try:
        cfg = ProbeConfig(**probe_cfg_raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad probe config: {exc}") from None

    with open(manifests_path, encoding="utf-8") as f:
        manifests_doc = json.load(f)
    levels_hash = manifests_doc.get("provenance", {}).get("levels_hash")
    if levels_hash is None:
        raise ConfigError(f"{manifests_path} lacks provenance.levels_hash; rebuild with `cog levels build`")
    manifests = manifests_doc["levels"]
    if len(feature_paths) != len(manifests):
        raise ConfigError(f"{len(feature_paths)} feature files for {len(manifests)} levels")

    config_hash = _canonical_hash({
        "command": "probe run",
        "model_id": model_id,
        "manifests": _file_digest(manifests_path),
        "features": [_file_digest(p) for p in feature_paths],
        "probe": {
            "batch_size": cfg.batch_size,
            "momentum": cfg.momentum,
            "epochs": cfg.epochs,
            "trials": cfg.trials,
            "val_fraction": cfg.val_fraction,
            "seeds": cfg.seeds,
            "lr_range": list(cfg.lr_range),
            "wd_range": list(cfg.wd_range),
            "shot_counts": [shots_key(s) for s in cfg.shot_counts],
        },
        "seed": seed,
    })

    level_tables = {}
    started = time.monotonic()
    for index, (manifest, feature_path) in enumerate(zip(manifests, feature_paths), start=1):
        with open(feature_path, "rb") as f:
            table = load_features(f, expected_classes=None)
        table = l2_normalize(table)
        train, test = split_by_manifest(table, manifest)
        level_tables[f"L{index}"] = (train, test)

    result = run_protocol(level_tables, cfg, seed, jobs=jobs)
    elapsed = time.monotonic() - started

    provenance = _provenance(config_hash, seed)
    provenance["levels_hash"] = levels_hash
    doc = result_to_json_dict(result)
    doc["provenance"] = provenance
    doc["model_id"] = model_id

    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "results.json", doc)
    rows = result_to_csv_rows(result)
    with open(out_dir / "results.csv", "w", encoding="utf-8", newline="") as f:
        f.write("\n".join(",".join(row) for row in rows) + "\n")

    print(f"model {model_id}: {result.total_units} units in {elapsed:.1f}s "
          f"({result.failed_units} failed); wrote {out_dir / 'results.json'}")
    print(f"{'level':<8}{'shots':<8}{'mean_top1':<12}{'std':<10}ok")
    for agg in result.aggregates:
        mean = "-" if agg.mean_top1 is None else f"{agg.mean_top1:.4f}"
        std = "-" if agg.std_top1 is None else f"{agg.std_top1:.4f}"
        print(f"{agg.level:<8}{shots_key(agg.shots):<8}{mean:<12}{std:<10}{agg.seeds_ok}/{agg.seeds_total}")

    if result.failed_units == result.total_units:
        return EXIT_CONFIG
    if result.failed_units:
        return EXIT_PARTIAL
    return EXIT_OK


# -- cog report ------------------------------------------------------------------


def cmd_report(args) -> int:
    out_dir = Path(args.out) if args.out else Path("report")
    written = write_report(args.results, out_dir, baseline=args.baseline)
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cog", description="Concept-generalization benchmark tools")
    sub = parser.add_subparsers(dest="command", required=True)

    p_tax = sub.add_parser("taxonomy", help="taxonomy file tools")
    tax_sub = p_tax.add_subparsers(dest="subcommand", required=True)
    p_val = tax_sub.add_parser("validate", help="parse and validate a taxonomy")
    p_val.add_argument("--edges", required=True, help="child<TAB>parent TSV")
    p_val.add_argument("--meta", help="metadata TSV")
    p_val.set_defaults(func=cmd_taxonomy_validate)

    p_sim = sub.add_parser("sim", help="query semantic similarity")
    p_sim.add_argument("--edges", required=True)
    p_sim.add_argument("--measure", default="lin", choices=list(MEASURE_NAMES))
    p_sim.add_argument("--scores", help="external score table (concept<TAB>score)")
    group = p_sim.add_mutually_exclusive_group(required=True)
    group.add_argument("--pair", nargs=2, metavar=("C1", "C2"))
    group.add_argument("--seen-file", dest="seen_file")
    p_sim.add_argument("--concept", help="concept to score against --seen-file")
    p_sim.set_defaults(func=cmd_sim)

    p_levels = sub.add_parser("levels", help="level construction")
    levels_sub = p_levels.add_subparsers(dest="subcommand", required=True)
    p_build = levels_sub.add_parser("build", help="filter, rank, and split into levels")
    p_build.add_argument("--config", required=True)
    p_build.add_argument("--seed", type=int)
    p_build.add_argument("--out")
    p_build.add_argument("--measure", choices=list(MEASURE_NAMES))
    p_build.set_defaults(func=cmd_levels_build)

    p_features = sub.add_parser("features", help="feature table tools")
    features_sub = p_features.add_subparsers(dest="subcommand", required=True)
    p_pack = features_sub.add_parser("pack", help="convert a features TSV to COGF")
    p_pack.add_argument("--input", required=True, help="id<TAB>label<TAB>f1..fd TSV")
    p_pack.add_argument("--output", required=True)
    p_pack.set_defaults(func=cmd_features_pack)

    p_probe = sub.add_parser("probe", help="linear probe evaluation")
    probe_sub = p_probe.add_subparsers(dest="subcommand", required=True)
    p_run = probe_sub.add_parser("run", help="run the probing protocol on level features")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--out")
    p_run.add_argument("--jobs", type=int, default=1, help="worker threads; does not affect results")
    p_run.add_argument("--shots", help='comma list, e.g. "1,2,4" or "all"')
    p_run.set_defaults(func=cmd_probe_run)

    p_report = sub.add_parser("report", help="merge result files into report tables")
    p_report.add_argument("--results", nargs="+", required=True)
    p_report.add_argument("--baseline", help="model id for relative deltas")
    p_report.add_argument("--out")
    p_report.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "pair", None) is None and getattr(args, "seen_file", None) is not None:
        if getattr(args, "concept", None) is None:
            parser.error("--seen-file requires --concept")
    try:
        return args.func(args)
    except CogError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
