"""Linear probes on frozen features: training, search, few-shot, protocol.

A probe is multinomial logistic regression trained with mini-batch SGD
(momentum, L2 penalty on the weights only, constant learning rate). For
each evaluation unit the learning rate and weight decay are picked by
seeded log-uniform random search scored on a stratified validation
hold-out, the probe is retrained on the full (possibly subsampled)
training set with the chosen pair, and top-1 accuracy is measured on the
test set. Units (level x shot count x seed) are independent: each derives
its own RNG streams from the global seed, so results are identical no
matter how many workers run them.

All accumulation happens in float64 with a fixed batch order.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from cogbench.errors import (
    DimensionMismatch,
    DivergedLoss,
    EmptyTestSet,
    CogError,
    MissingClass,
)
from cogbench.features import FeatureTable
from cogbench.rng import derive_seed, make_rng

logger = logging.getLogger(__name__)

DEFAULT_SHOTS: tuple[int | None, ...] = (1, 2, 4, 8, 16, 32, 64, 128, None)


def shots_key(shots: int | None) -> str:
    return "all" if shots is None else str(shots)


@dataclass(frozen=True)
class ProbeConfig:
    batch_size: int = 1024
    momentum: float = 0.9
    epochs: int = 100
    trials: int = 30
    val_fraction: float = 0.2
    seeds: int = 5
    lr_range: tuple[float, float] = (1e-4, 1e1)
    wd_range: tuple[float, float] = (1e-8, 1e-2)
    shot_counts: tuple[int | None, ...] = DEFAULT_SHOTS

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or self.trials < 1 or self.seeds < 1:
            raise ValueError("batch_size, epochs, trials, and seeds must be at least 1")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in (0, 1)")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        for low, high in (self.lr_range, self.wd_range):
            if not (0.0 < low < high):
                raise ValueError("search ranges must satisfy 0 < low < high")
        for shot in self.shot_counts:
            if shot is not None and shot < 1:
                raise ValueError("shot counts must be positive or None for all data")


@dataclass(frozen=True)
class LinearModel:
    weights: np.ndarray  # (C, d) float64
    bias: np.ndarray  # (C,) float64
    loss_history: tuple[float, ...] = ()


@dataclass(frozen=True)
class TrialResult:
    lr: float
    wd: float
    val_top1: float
    seed: int


@dataclass(frozen=True)
class HyperSearchResult:
    lr: float
    wd: float
    val_top1: float
    train_is_val: bool
    trials: tuple[TrialResult, ...]


def loss_and_grad(
    weights: np.ndarray,
    bias: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    weight_decay: float,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Softmax cross-entropy with L2 on weights; bias unpenalized.

    The per-sample loss is -log softmax(x W^T + b)[y]; a fully saturated
    wrong prediction underflows the true-class probability to 0 and the
    loss becomes inf, which is how divergence is detected upstream.
    """
    z = x @ weights.T
    z += bias
    z -= z.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    p = z  # softmax probabilities; reused as the gradient buffer below
    n = x.shape[0]
    idx = np.arange(n)
    with np.errstate(divide="ignore"):
        nll = -np.log(p[idx, y])
    loss = float(nll.mean() + 0.5 * weight_decay * np.dot(weights.ravel(), weights.ravel()))
    p[idx, y] -= 1.0
    p /= n
    grad_w = p.T @ x
    grad_w += weight_decay * weights
    grad_b = p.sum(axis=0)
    return loss, grad_w, grad_b


def train_logreg(
    train: FeatureTable,
    lr: float,
    wd: float,
    cfg: ProbeConfig,
    seed: int = 0,
) -> LinearModel:
    """Mini-batch SGD with momentum for cfg.epochs passes, seeded shuffling."""
    x = train.matrix.astype(np.float64)
    y = train.labels
    n, dim = x.shape
    num_classes = train.num_classes
    present = set(np.unique(y).tolist())
    missing = sorted(set(range(num_classes)) - present)
    if missing:
        raise MissingClass(missing)

    weights = np.zeros((num_classes, dim))
    bias = np.zeros(num_classes)
    vel_w = np.zeros_like(weights)
    vel_b = np.zeros_like(bias)
    rng = make_rng(seed, "shuffle")

    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grad_w, grad_b = loss_and_grad(weights, bias, x[idx], y[idx], wd)
            batch_losses.append(loss)
            vel_w *= cfg.momentum
            vel_w += grad_w
            vel_b *= cfg.momentum
            vel_b += grad_b
            weights -= lr * vel_w
            bias -= lr * vel_b
        epoch_loss = float(np.mean(batch_losses))
        history.append(epoch_loss)
        if not math.isfinite(epoch_loss):
            raise DivergedLoss(f"non-finite loss at epoch {epoch + 1}")
    if not (np.isfinite(weights).all() and np.isfinite(bias).all()):
        raise DivergedLoss("non-finite parameters after training")
    return LinearModel(weights=weights, bias=bias, loss_history=tuple(history))


def evaluate_top1(model: LinearModel, test: FeatureTable) -> float:
    """Fraction of rows whose argmax logit (ties to the smallest class) is correct."""
    if test.n == 0:
        raise EmptyTestSet()
    if model.weights.shape[1] != test.dim:
        raise DimensionMismatch(model.weights.shape[1], test.dim)
    logits = test.matrix.astype(np.float64) @ model.weights.T + model.bias
    predictions = logits.argmax(axis=1)
    return float((predictions == test.labels).mean())


def fewshot_subsample(train: FeatureTable, shots: int | None, seed: int) -> FeatureTable:
    """Keep at most `shots` rows per class, chosen by a per-class seeded draw."""
    if shots is None:
        return train
    keep: list[int] = []
    clamped = 0
    for label in np.unique(train.labels):
        rows = np.flatnonzero(train.labels == label)
        if len(rows) <= shots:
            clamped += len(rows) < shots
            keep.extend(rows.tolist())
        else:
            rng = make_rng(seed, "class", int(label))
            keep.extend(rows[rng.permutation(len(rows))[:shots]].tolist())
    if clamped:
        logger.warning("fewshot_subsample: %d classes have fewer than %d rows", clamped, shots)
    keep.sort()
    idx = np.array(keep, dtype=np.intp)
    return FeatureTable(
        matrix=train.matrix[idx],
        labels=train.labels[idx],
        image_ids=tuple(train.image_ids[i] for i in keep) if train.image_ids else None,
        concept_index=train.concept_index,
    )


def _stratified_val_split(train: FeatureTable, val_fraction: float, seed: int):
    """Per-class hold-out of ~val_fraction rows (at least 1, at most n-1)."""
    rng = make_rng(seed, "val-split")
    train_rows: list[int] = []
    val_rows: list[int] = []
    for label in np.unique(train.labels):
        rows = np.flatnonzero(train.labels == label)
        n_val = max(1, int(val_fraction * len(rows)))
        n_val = min(n_val, len(rows) - 1)
        perm = rows[rng.permutation(len(rows))]
        val_rows.extend(perm[:n_val].tolist())
        train_rows.extend(perm[n_val:].tolist())
    train_rows.sort()
    val_rows.sort()

    def take(rows: list[int]) -> FeatureTable:
        idx = np.array(rows, dtype=np.intp)
        return FeatureTable(
            matrix=train.matrix[idx],
            labels=train.labels[idx],
            image_ids=tuple(train.image_ids[i] for i in rows) if train.image_ids else None,
            concept_index=train.concept_index,
        )

    return take(train_rows), take(val_rows)


def sample_search_pairs(cfg: ProbeConfig, seed: int) -> list[tuple[float, float]]:
    """cfg.trials log-uniform (lr, wd) pairs from one seeded stream."""
    rng = make_rng(seed, "pairs")
    pairs = []
    for _ in range(cfg.trials):
        lr = math.exp(rng.uniform(math.log(cfg.lr_range[0]), math.log(cfg.lr_range[1])))
        wd = math.exp(rng.uniform(math.log(cfg.wd_range[0]), math.log(cfg.wd_range[1])))
        pairs.append((lr, wd))
    return pairs


def hyper_search(train: FeatureTable, cfg: ProbeConfig, seed: int) -> HyperSearchResult:
    """Pick the (lr, wd) pair with the best validation top-1.

    Classes with a single sample make a hold-out impossible; the search
    then validates on the training set itself and flags it. Diverged
    trials score 0. Ties go to the smaller lr, then the smaller wd.
    """
    counts = np.bincount(train.labels, minlength=train.num_classes)
    present = counts[counts > 0]
    train_is_val = bool(present.size and present.min() < 2)
    if train_is_val:
        fit_part, val_part = train, train
    else:
        fit_part, val_part = _stratified_val_split(train, cfg.val_fraction, seed)

    results = []
    for i, (lr, wd) in enumerate(sample_search_pairs(cfg, seed)):
        trial_seed = derive_seed(seed, "trial", i)
        try:
            model = train_logreg(fit_part, lr, wd, cfg, seed=trial_seed)
            val_top1 = evaluate_top1(model, val_part)
        except DivergedLoss:
            val_top1 = 0.0
        results.append(TrialResult(lr=lr, wd=wd, val_top1=val_top1, seed=trial_seed))

    best = min(results, key=lambda tr: (-tr.val_top1, tr.lr, tr.wd))
    return HyperSearchResult(
        lr=best.lr,
        wd=best.wd,
        val_top1=best.val_top1,
        train_is_val=train_is_val,
        trials=tuple(results),
    )


# -- full protocol ------------------------------------------------------------


@dataclass(frozen=True)
class RunRecord:
    level: str
    shots: int | None
    seed_index: int
    lr: float | None = None
    wd: float | None = None
    val_top1: float | None = None
    test_top1: float | None = None
    train_is_val: bool = False
    error: str | None = None


@dataclass(frozen=True)
class AggregateRecord:
    level: str
    shots: int | None
    mean_top1: float | None
    std_top1: float | None
    seeds_ok: int
    seeds_total: int


@dataclass(frozen=True)
class ProbeResult:
    runs: tuple[RunRecord, ...]
    aggregates: tuple[AggregateRecord, ...]
    config: ProbeConfig
    global_seed: int

    @property
    def failed_units(self) -> int:
        return sum(1 for r in self.runs if r.error is not None)

    @property
    def total_units(self) -> int:
        return len(self.runs)

    def dead_cells(self) -> list[tuple[str, int | None]]:
        """(level, shots) cells where every seed failed."""
        return [(a.level, a.shots) for a in self.aggregates if a.seeds_ok == 0]


def _run_unit(
    level: str,
    train: FeatureTable,
    test: FeatureTable,
    shots: int | None,
    seed_index: int,
    cfg: ProbeConfig,
    global_seed: int,
) -> RunRecord:
    unit_seed = derive_seed(global_seed, "probe", level, shots_key(shots), seed_index)
    try:
        subsampled = fewshot_subsample(train, shots, derive_seed(unit_seed, "subsample"))
        search = hyper_search(subsampled, cfg, derive_seed(unit_seed, "search"))
        model = train_logreg(subsampled, search.lr, search.wd, cfg, seed=derive_seed(unit_seed, "final"))
        top1 = evaluate_top1(model, test)
        return RunRecord(
            level=level,
            shots=shots,
            seed_index=seed_index,
            lr=search.lr,
            wd=search.wd,
            val_top1=search.val_top1,
            test_top1=top1,
            train_is_val=search.train_is_val,
        )
    except CogError as exc:
        logger.warning("unit (%s, %s, seed %d) failed: %s", level, shots_key(shots), seed_index, exc)
        return RunRecord(
            level=level,
            shots=shots,
            seed_index=seed_index,
            error=f"{type(exc).__name__}: {exc}",
        )


def run_protocol(
    level_tables: Mapping[str, tuple[FeatureTable, FeatureTable]],
    cfg: ProbeConfig,
    global_seed: int,
    jobs: int = 1,
) -> ProbeResult:
    """Evaluate every (level, shot count, seed) unit and aggregate.

    Units may run on up to `jobs` threads; each derives its own seeds, so
    the result is identical for any jobs value. Unit errors are recorded,
    not raised.
    """
    units = [
        (level, shots, seed_index)
        for level in level_tables
        for shots in cfg.shot_counts
        for seed_index in range(cfg.seeds)
    ]

    def work(unit):
        level, shots, seed_index = unit
        train, test = level_tables[level]
        return _run_unit(level, train, test, shots, seed_index, cfg, global_seed)

    if jobs <= 1:
        runs = [work(u) for u in units]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(work, units))

    aggregates = []
    for level in level_tables:
        for shots in cfg.shot_counts:
            cell = [r for r in runs if r.level == level and r.shots == shots]
            scores = [r.test_top1 for r in cell if r.error is None]
            aggregates.append(
                AggregateRecord(
                    level=level,
                    shots=shots,
                    mean_top1=float(np.mean(scores)) if scores else None,
                    std_top1=float(np.std(scores)) if scores else None,
                    seeds_ok=len(scores),
                    seeds_total=len(cell),
                )
            )
    return ProbeResult(runs=tuple(runs), aggregates=tuple(aggregates), config=cfg, global_seed=global_seed)


# -- serialization -------------------------------------------------------------


def config_to_dict(cfg: ProbeConfig) -> dict:
    return {
        "batch_size": cfg.batch_size,
        "momentum": cfg.momentum,
        "epochs": cfg.epochs,
        "trials": cfg.trials,
        "val_fraction": cfg.val_fraction,
        "seeds": cfg.seeds,
        "lr_range": list(cfg.lr_range),
        "wd_range": list(cfg.wd_range),
        "shot_counts": [shots_key(s) for s in cfg.shot_counts],
    }


def result_to_json_dict(result: ProbeResult) -> dict:
    return {
        "global_seed": result.global_seed,
        "config": config_to_dict(result.config),
        "runs": [
            {
                "level": r.level,
                "shots": shots_key(r.shots),
                "seed": r.seed_index,
                "lr": r.lr,
                "wd": r.wd,
                "val_top1": r.val_top1,
                "test_top1": r.test_top1,
                "train_is_val": r.train_is_val,
                "error": r.error,
            }
            for r in result.runs
        ],
        "aggregates": [
            {
                "level": a.level,
                "shots": shots_key(a.shots),
                "mean_top1": a.mean_top1,
                "std_top1": a.std_top1,
                "seeds_ok": a.seeds_ok,
                "seeds_total": a.seeds_total,
            }
            for a in result.aggregates
        ],
    }


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def result_to_csv_rows(result: ProbeResult) -> list[list[str]]:
    """Per-run rows followed by aggregate rows (seed column = "agg")."""
    rows = [["level", "shots", "seed", "lr", "wd", "val_top1", "test_top1", "mean_top1", "std_top1"]]
    for r in result.runs:
        rows.append([
            r.level, shots_key(r.shots), str(r.seed_index),
            _fmt(r.lr), _fmt(r.wd), _fmt(r.val_top1), _fmt(r.test_top1), "", "",
        ])
    for a in result.aggregates:
        rows.append([
            a.level, shots_key(a.shots), "agg", "", "", "", "",
            _fmt(a.mean_top1), _fmt(a.std_top1),
        ])
    return rows
