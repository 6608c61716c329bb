"""Merge probe result files into report tables and plot-data CSVs.

Result files are only mergeable when they were produced against the same
level definitions (matching levels_hash) and the same schema version. When
a baseline model is named, per-cell deltas (model mean minus baseline
mean) are emitted alongside the absolute tables.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

from cogbench.errors import BaselineMissing, SchemaMismatch

SCHEMA_VERSION = 1


def _shots_sort_key(shots: str) -> tuple[int, int]:
    return (1, 0) if shots == "all" else (0, int(shots))


def load_results_file(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as f:
        data = json.load(f)
    for key in ("provenance", "model_id", "runs", "aggregates"):
        if key not in data:
            raise SchemaMismatch(f"{path}: missing {key!r}")
    prov = data["provenance"]
    if prov.get("schema_version") != SCHEMA_VERSION:
        raise SchemaMismatch(f"{path}: schema_version {prov.get('schema_version')} != {SCHEMA_VERSION}")
    if "levels_hash" not in prov:
        raise SchemaMismatch(f"{path}: provenance lacks levels_hash")
    return data


def _check_mergeable(datas: list[dict], paths: list[str]) -> None:
    hashes = {d["provenance"]["levels_hash"] for d in datas}
    if len(hashes) > 1:
        raise SchemaMismatch(f"level definitions differ across inputs: {sorted(hashes)}")
    seen: dict[str, str] = {}
    for data, path in zip(datas, paths):
        model = data["model_id"]
        if model in seen:
            raise SchemaMismatch(f"duplicate model id {model!r} in {seen[model]} and {path}")
        seen[model] = str(path)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_report(
    results_paths: list[str | Path],
    out_dir: str | Path,
    baseline: str | None = None,
) -> list[Path]:
    """Write merged, delta, and plot-data CSVs; returns the written paths."""
    paths = [str(p) for p in results_paths]
    datas = [load_results_file(p) for p in paths]
    _check_mergeable(datas, paths)
    models = sorted(d["model_id"] for d in datas)
    by_model = {d["model_id"]: d for d in datas}
    if baseline is not None and baseline not in by_model:
        raise BaselineMissing(baseline, models)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    merged_rows = []
    for model in models:
        for r in by_model[model]["runs"]:
            merged_rows.append([
                model, r["level"], r["shots"], r["seed"],
                _fmt(r["lr"]), _fmt(r["wd"]), _fmt(r["val_top1"]), _fmt(r["test_top1"]),
                r["error"] or "",
            ])
    merged_rows.sort(key=lambda row: (row[0], row[1], _shots_sort_key(row[2]), row[3]))
    merged = out / "merged.csv"
    _write_csv(merged, ["model", "level", "shots", "seed", "lr", "wd", "val_top1", "test_top1", "error"], merged_rows)
    written.append(merged)

    # cell -> mean/std per model
    cells: dict[str, dict[tuple[str, str], dict]] = {
        model: {(a["level"], a["shots"]): a for a in by_model[model]["aggregates"]}
        for model in models
    }

    curve_rows = []
    for model in models:
        for (level, shots), agg in sorted(cells[model].items(), key=lambda kv: (kv[0][0], _shots_sort_key(kv[0][1]))):
            curve_rows.append([model, level, shots, _fmt(agg["mean_top1"]), _fmt(agg["std_top1"])])
    curves = out / "plot_fewshot_curves.csv"
    _write_csv(curves, ["model", "level", "shots", "mean_top1", "std_top1"], curve_rows)
    written.append(curves)

    absolute_rows = [row[:2] + row[3:] for row in curve_rows if row[2] == "all"]
    absolute = out / "plot_absolute_per_level.csv"
    _write_csv(absolute, ["model", "level", "mean_top1", "std_top1"], absolute_rows)
    written.append(absolute)

    if baseline is not None:
        base_cells = cells[baseline]
        delta_rows = []
        for model in models:
            for (level, shots), agg in sorted(cells[model].items(), key=lambda kv: (kv[0][0], _shots_sort_key(kv[0][1]))):
                base = base_cells.get((level, shots))
                if base is None or agg["mean_top1"] is None or base["mean_top1"] is None:
                    continue
                delta = agg["mean_top1"] - base["mean_top1"]
                delta_rows.append([model, level, shots, _fmt(agg["mean_top1"]), _fmt(base["mean_top1"]), _fmt(delta)])
        deltas = out / "relative_deltas.csv"
        _write_csv(deltas, ["model", "level", "shots", "mean_top1", "baseline_mean_top1", "delta_top1"], delta_rows)
        written.append(deltas)

        rel_rows = [row[:3] + [row[5]] for row in delta_rows if row[2] == "all"]
        relative = out / "plot_relative_per_level.csv"
        _write_csv(relative, ["model", "level", "shots", "delta_top1"], rel_rows)
        written.append(relative)

    return written
