"""End-to-end CLI tests: every subcommand, exit codes, determinism."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import pytest

from cogbench.cli import main

from conftest import TOY6_EDGES_TSV

LN2 = math.log(2.0)
LN6 = math.log(6.0)


def write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def make_workspace(tmp_path: Path, n_images=60, test_size=10, train_cap=20, k=2, s=1) -> Path:
    write(tmp_path / "taxonomy.tsv", TOY6_EDGES_TSV)
    write(tmp_path / "meta.tsv", "a1\t1000\tcat a1\na2\t900\tcat a2\nb1\t900\tcat b1\n")
    images = []
    for concept in ("a2", "b1"):
        for i in range(n_images):
            images.append(f"{concept}\t{concept}_img{i:03d}")
    write(tmp_path / "images.tsv", "\n".join(images) + "\n")
    write(tmp_path / "seen.txt", "a1\n")
    write(
        tmp_path / "levels.toml",
        f"""
seed = 7

[paths]
taxonomy = "taxonomy.tsv"
metadata = "meta.tsv"
images = "images.tsv"
out = "out"

[levels]
measure = "lin"
k = {k}
s = {s}
seen_file = "seen.txt"
min_image_count = 500
test_size = {test_size}
train_cap = {train_cap}
""",
    )
    return tmp_path


def synth_features_tsv(manifests_path: Path, level_idx: int, out_tsv: Path, dim=3, seed=0):
    """Per-concept Gaussian features for every image id in one level manifest."""
    manifest = json.loads(manifests_path.read_text())["levels"][level_idx]
    rng = np.random.default_rng(seed)
    lines = []
    for label, concept in enumerate(manifest):
        mean = np.zeros(dim)
        mean[label % dim] = 4.0 * (1 + label // dim)
        for image_id in manifest[concept]["train"] + manifest[concept]["test"]:
            row = mean + 0.3 * rng.standard_normal(dim)
            lines.append("\t".join([image_id, str(label)] + [repr(float(v)) for v in row]))
    write(out_tsv, "\n".join(lines) + "\n")
    return out_tsv


def build_levels(tmp_path: Path) -> Path:
    assert main(["levels", "build", "--config", str(tmp_path / "levels.toml")]) == 0
    return tmp_path / "out"


def pack_level_features(tmp_path: Path, out_dir: Path, n_levels=2):
    for i in range(n_levels):
        tsv = synth_features_tsv(out_dir / "manifests.json", i, tmp_path / f"l{i + 1}.tsv", seed=i)
        assert main(["features", "pack", "--input", str(tsv), "--output", str(tmp_path / f"l{i + 1}.cogf")]) == 0


def write_probe_config(tmp_path: Path, model_id="toy-model", n_levels=2, extra="") -> Path:
    features = ", ".join(f'"l{i + 1}.cogf"' for i in range(n_levels))
    return write(
        tmp_path / "probe.toml",
        f"""
seed = 7

[paths]
manifests = "out/manifests.json"
features = [{features}]
out = "probe_out"

[probe]
model_id = "{model_id}"
epochs = 10
trials = 2
seeds = 2
batch_size = 64
shots = [1, "all"]
{extra}
""",
    )


# -- taxonomy validate ------------------------------------------------------------


def test_taxonomy_validate_ok(tmp_path, capsys):
    edges = write(tmp_path / "t.tsv", TOY6_EDGES_TSV)
    assert main(["taxonomy", "validate", "--edges", str(edges)]) == 0
    out = capsys.readouterr().out
    assert "6 nodes" in out and "root=entity" in out


def test_taxonomy_validate_cycle_exit2(tmp_path, capsys):
    edges = write(tmp_path / "t.tsv", TOY6_EDGES_TSV + "entity\ta1\n")
    assert main(["taxonomy", "validate", "--edges", str(edges)]) == 2
    assert "cycle" in capsys.readouterr().err


def test_taxonomy_validate_missing_file(tmp_path, capsys):
    assert main(["taxonomy", "validate", "--edges", str(tmp_path / "none.tsv")]) == 2


# -- sim --------------------------------------------------------------------------


def test_sim_pair(tmp_path, capsys):
    edges = write(tmp_path / "t.tsv", TOY6_EDGES_TSV)
    assert main(["sim", "--edges", str(edges), "--measure", "lin", "--pair", "a1", "a2"]) == 0
    value = float(capsys.readouterr().out.strip())
    assert value == pytest.approx(LN2 / LN6, abs=1e-12)


def test_sim_seen_file(tmp_path, capsys):
    edges = write(tmp_path / "t.tsv", TOY6_EDGES_TSV)
    seen = write(tmp_path / "seen.txt", "a1\nb1\n")
    assert main(["sim", "--edges", str(edges), "--seen-file", str(seen), "--concept", "a2"]) == 0
    value = float(capsys.readouterr().out.strip())
    assert value == pytest.approx(LN2 / LN6, abs=1e-12)


def test_sim_external_pair_rejected(tmp_path, capsys):
    edges = write(tmp_path / "t.tsv", TOY6_EDGES_TSV)
    scores = write(tmp_path / "scores.tsv", "a2\t0.5\n")
    code = main(["sim", "--edges", str(edges), "--measure", "external", "--scores", str(scores), "--pair", "a1", "a2"])
    assert code == 2


def test_sim_external_seen(tmp_path, capsys):
    edges = write(tmp_path / "t.tsv", TOY6_EDGES_TSV)
    scores = write(tmp_path / "scores.tsv", "a2\t0.5\n")
    code = main(["sim", "--edges", str(edges), "--measure", "external", "--scores", str(scores),
                 "--seen-file", str(write(tmp_path / "seen.txt", "a1\n")), "--concept", "a2"])
    assert code == 0
    assert float(capsys.readouterr().out.strip()) == 0.5


# -- levels build ------------------------------------------------------------------


def test_levels_build_toy(tmp_path):
    make_workspace(tmp_path)
    out_dir = build_levels(tmp_path)
    levels = json.loads((out_dir / "levels.json").read_text())
    assert levels["levels"] == [["a2"], ["b1"]]
    assert levels["params"] == {"K": 2, "S": 1, "measure": "lin", "gap_policy": "even-tail-remainder", "seed": 7}
    assert levels["similarities"]["a2"] == pytest.approx(LN2 / LN6, abs=1e-12)
    assert levels["similarities"]["b1"] == 0.0
    assert "config_hash" in levels["provenance"]

    manifests = json.loads((out_dir / "manifests.json").read_text())
    assert manifests["provenance"]["levels_hash"] == levels["provenance"]["levels_hash"]
    entry = manifests["levels"][0]["a2"]
    assert len(entry["test"]) == 10 and len(entry["train"]) == 20
    assert not set(entry["test"]) & set(entry["train"])


def test_levels_build_not_enough_exit2(tmp_path, capsys):
    make_workspace(tmp_path, k=3, s=1)
    assert main(["levels", "build", "--config", str(tmp_path / "levels.toml")]) == 2
    assert "2" in capsys.readouterr().err


def test_levels_build_rerun_byte_identical(tmp_path):
    make_workspace(tmp_path)
    assert main(["levels", "build", "--config", str(tmp_path / "levels.toml"), "--out", str(tmp_path / "o1")]) == 0
    assert main(["levels", "build", "--config", str(tmp_path / "levels.toml"), "--out", str(tmp_path / "o2")]) == 0
    for name in ("levels.json", "manifests.json"):
        assert (tmp_path / "o1" / name).read_bytes() == (tmp_path / "o2" / name).read_bytes()


# -- probe run ----------------------------------------------------------------------


def test_probe_run_end_to_end(tmp_path, capsys):
    make_workspace(tmp_path)
    out_dir = build_levels(tmp_path)
    pack_level_features(tmp_path, out_dir)
    config = write_probe_config(tmp_path)
    assert main(["probe", "run", "--config", str(config)]) == 0

    results = json.loads((tmp_path / "probe_out" / "results.json").read_text())
    assert results["model_id"] == "toy-model"
    assert results["provenance"]["levels_hash"]
    # 2 levels x 2 shots x 2 seeds
    assert len(results["runs"]) == 8
    assert all(r["error"] is None for r in results["runs"])
    # single-concept levels: the probe is trivially perfect
    assert all(a["mean_top1"] == 1.0 for a in results["aggregates"])
    csv_text = (tmp_path / "probe_out" / "results.csv").read_text()
    assert csv_text.splitlines()[0] == "level,shots,seed,lr,wd,val_top1,test_top1,mean_top1,std_top1"
    assert "agg" in csv_text


def test_probe_missing_feature_file_exit2(tmp_path, capsys):
    make_workspace(tmp_path)
    build_levels(tmp_path)
    config = write_probe_config(tmp_path)
    assert main(["probe", "run", "--config", str(config)]) == 2
    assert "l1.cogf" in capsys.readouterr().err


def test_probe_shots_flag_overrides(tmp_path):
    make_workspace(tmp_path)
    out_dir = build_levels(tmp_path)
    pack_level_features(tmp_path, out_dir)
    config = write_probe_config(tmp_path)
    assert main(["probe", "run", "--config", str(config), "--shots", "all"]) == 0
    results = json.loads((tmp_path / "probe_out" / "results.json").read_text())
    assert {r["shots"] for r in results["runs"]} == {"all"}


def test_probe_partial_failure_exit1(tmp_path):
    # Hand-written manifests: L1 is a single concept (trivially learnable at
    # any lr since C=1); L2 holds two heavily overlapping concepts. With the
    # lr pinned at blow-up scale every L2 unit diverges while L1 succeeds.
    def ids(prefix, n):
        return [f"{prefix}{i:03d}" for i in range(n)]

    manifests = {
        "provenance": {"levels_hash": "test-levels-hash"},
        "levels": [
            {"cA": {"train": ids("a", 20), "test": ids("a", 25)[20:]}},
            {
                "cX": {"train": ids("x", 20), "test": ids("x", 25)[20:]},
                "cY": {"train": ids("y", 20), "test": ids("y", 25)[20:]},
            },
        ],
    }
    write(tmp_path / "manifests.json", json.dumps(manifests))

    rng = np.random.default_rng(0)
    for path, concepts in ((tmp_path / "l1.tsv", ["cA"]), (tmp_path / "l2.tsv", ["cX", "cY"])):
        lines = []
        for label, concept in enumerate(concepts):
            for image_id in ids(concept[1].lower(), 25):
                row = rng.standard_normal(3) + label * 0.1
                lines.append("\t".join([image_id, str(label)] + [repr(float(v)) for v in row]))
        write(path, "\n".join(lines) + "\n")
    for i in (1, 2):
        assert main(["features", "pack", "--input", str(tmp_path / f"l{i}.tsv"),
                     "--output", str(tmp_path / f"l{i}.cogf")]) == 0

    config = write(
        tmp_path / "probe.toml",
        """
seed = 7

[paths]
manifests = "manifests.json"
features = ["l1.cogf", "l2.cogf"]
out = "probe_out"

[probe]
model_id = "diverger"
epochs = 10
trials = 2
seeds = 2
batch_size = 64
shots = ["all"]
lr_range = [1e6, 1.1e6]
wd_range = [1e-7, 2e-7]
""",
    )
    assert main(["probe", "run", "--config", str(config)]) == 1
    results = json.loads((tmp_path / "probe_out" / "results.json").read_text())
    by_level = {level: [r for r in results["runs"] if r["level"] == level] for level in ("L1", "L2")}
    assert all(r["error"] is None for r in by_level["L1"])
    assert all(r["error"] and "DivergedLoss" in r["error"] for r in by_level["L2"])


def test_probe_jobs_do_not_change_bytes(tmp_path):
    make_workspace(tmp_path)
    out_dir = build_levels(tmp_path)
    pack_level_features(tmp_path, out_dir)
    config = write_probe_config(tmp_path)
    assert main(["probe", "run", "--config", str(config), "--jobs", "1", "--out", str(tmp_path / "p1")]) == 0
    assert main(["probe", "run", "--config", str(config), "--jobs", "8", "--out", str(tmp_path / "p2")]) == 0
    for name in ("results.json", "results.csv"):
        assert (tmp_path / "p1" / name).read_bytes() == (tmp_path / "p2" / name).read_bytes()


# -- report -------------------------------------------------------------------------


def _run_probe_as(tmp_path, model_id, out_name) -> Path:
    config = write_probe_config(tmp_path, model_id=model_id)
    out = tmp_path / out_name
    assert main(["probe", "run", "--config", str(config), "--out", str(out)]) == 0
    return out / "results.json"


def test_report_single_and_baseline_identity(tmp_path, capsys):
    make_workspace(tmp_path)
    out_dir = build_levels(tmp_path)
    pack_level_features(tmp_path, out_dir)
    results = _run_probe_as(tmp_path, "model-a", "pa")

    report_dir = tmp_path / "report"
    assert main(["report", "--results", str(results), "--out", str(report_dir)]) == 0
    merged = (report_dir / "merged.csv").read_text().splitlines()
    assert merged[0] == "model,level,shots,seed,lr,wd,val_top1,test_top1,error"
    assert len(merged) == 1 + 8
    assert not (report_dir / "relative_deltas.csv").exists()

    assert main(["report", "--results", str(results), "--baseline", "model-a", "--out", str(report_dir)]) == 0
    deltas = (report_dir / "relative_deltas.csv").read_text().splitlines()
    assert all(line.rsplit(",", 1)[1] == "0.0" for line in deltas[1:])


def test_report_two_models_deltas(tmp_path):
    make_workspace(tmp_path)
    out_dir = build_levels(tmp_path)
    pack_level_features(tmp_path, out_dir)
    res_a = _run_probe_as(tmp_path, "model-a", "pa")
    res_b = _run_probe_as(tmp_path, "model-b", "pb")

    report_dir = tmp_path / "report"
    assert main(["report", "--results", str(res_a), str(res_b), "--baseline", "model-a", "--out", str(report_dir)]) == 0
    rows = (report_dir / "relative_deltas.csv").read_text().splitlines()[1:]
    a_rows = [r for r in rows if r.startswith("model-a,")]
    b_rows = [r for r in rows if r.startswith("model-b,")]
    assert len(a_rows) == len(b_rows) == 4
    # identical features and protocol: every delta is exactly 0
    assert all(r.rsplit(",", 1)[1] == "0.0" for r in a_rows)


def test_report_baseline_missing_exit2(tmp_path, capsys):
    make_workspace(tmp_path)
    out_dir = build_levels(tmp_path)
    pack_level_features(tmp_path, out_dir)
    results = _run_probe_as(tmp_path, "model-a", "pa")
    assert main(["report", "--results", str(results), "--baseline", "nope", "--out", str(tmp_path / "r")]) == 2
    assert "nope" in capsys.readouterr().err


def test_report_refuses_mismatched_levels(tmp_path, capsys):
    make_workspace(tmp_path)
    out_dir = build_levels(tmp_path)
    pack_level_features(tmp_path, out_dir)
    results = _run_probe_as(tmp_path, "model-a", "pa")

    tampered = json.loads(results.read_text())
    tampered["model_id"] = "model-b"
    tampered["provenance"]["levels_hash"] = "0" * 64
    other = write(tmp_path / "tampered.json", json.dumps(tampered))
    assert main(["report", "--results", str(results), str(other), "--out", str(tmp_path / "r")]) == 2
    assert "level definitions differ" in capsys.readouterr().err
