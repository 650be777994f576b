"""Cross-validation, ablations and the trivial baselines."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..augment import ensure_not_augmented
from ..corpus import Dialogue, IpuSample, split_dev, split_folds
from ..fusion import ABLATIONS
from .config import TrainConfig
from .data import FeatureStore
from .metrics import Metrics, compute_metrics
from .train import train


@dataclass
class FoldResult:
    fold: int
    metrics: Metrics
    ids: list[str]
    labels: list[int]
    predictions: list[int]
    best_epoch: int = 0

    def to_json(self) -> dict:
        return {
            "fold": self.fold,
            "metrics": self.metrics.to_json(),
            "best_epoch": self.best_epoch,
            "predictions": {i: p for i, p in zip(self.ids, self.predictions)},
        }


@dataclass
class CrossValResult:
    config: TrainConfig
    folds: list[FoldResult]
    corpus_hash: str | None = None

    def summary(self) -> dict:
        acc = np.array([f.metrics.accuracy for f in self.folds])
        f1 = np.array([f.metrics.macro_f1 for f in self.folds])
        return {
            "accuracy_mean": float(acc.mean()),
            "accuracy_std": float(acc.std()),
            "macro_f1_mean": float(f1.mean()),
            "macro_f1_std": float(f1.std()),
            "n_folds": len(self.folds),
        }

    @property
    def macro_f1(self) -> float:
        return self.summary()["macro_f1_mean"]

    def pooled(self) -> tuple[list[str], np.ndarray, np.ndarray]:
        """Sample ids, labels and predictions over all folds, sorted by id."""
        rows = sorted((i, y, p) for f in self.folds for i, y, p in zip(f.ids, f.labels, f.predictions))
        return [r[0] for r in rows], np.array([r[1] for r in rows]), np.array([r[2] for r in rows])

    def to_json(self) -> dict:
        return {
            "config": self.config.to_json(),
            "corpus_hash": self.corpus_hash,
            "folds": [f.to_json() for f in self.folds],
            "summary": self.summary(),
        }

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")


def scenario_samples(samples: Sequence[IpuSample], scenario: str) -> list[IpuSample]:
    return [s for s in samples if s.scenario == scenario and s.label is not None]


def cross_validate(
    cfg: TrainConfig,
    samples: Sequence[IpuSample],
    store: FeatureStore,
    dialogues: Sequence[Dialogue] = (),
    log: Callable[[str], None] | None = None,
    corpus_hash: str | None = None,
    folds: Sequence[int] | None = None,
) -> CrossValResult:
    """Dialogue-level k-fold cross-validation on the configured scenario.

    Each fold refits the vocabulary, timing buckets and model on its own
    training dialogues; a dev slice of those dialogues drives early stopping.
    ``folds`` restricts the run to a subset of fold indices.
    """
    data = scenario_samples(samples, cfg.scenario)
    ensure_not_augmented(data, "cross-validation")
    parts = split_folds(data, cfg.k_folds, cfg.seed)
    results = []
    for k, test in enumerate(parts):
        if folds is not None and k not in folds:
            continue
        rest = [s for j, p in enumerate(parts) if j != k for s in p]
        tr, dev = split_dev(rest, cfg.dev_frac, cfg.seed + k)
        if log:
            log(f"fold {k}: train {len(tr)} dev {len(dev)} test {len(test)}")
        fold_cfg = cfg.replace(seed=cfg.seed * 1000 + k)
        model = train(fold_cfg, tr, dev, store, dialogues, log=log)
        metrics, _, pred = model.evaluate(model.prep.encode(test, store))
        results.append(
            FoldResult(k, metrics, [s.id for s in test], [s.y for s in test], pred.tolist(), model.best_epoch)
        )
        if log:
            log(f"fold {k}: accuracy {metrics.accuracy:.4f} macro_f1 {metrics.macro_f1:.4f}")
    return CrossValResult(cfg, results, corpus_hash)


def run_ablation(
    cfg: TrainConfig,
    samples: Sequence[IpuSample],
    store: FeatureStore,
    drop: str,
    dialogues: Sequence[Dialogue] = (),
    **kwargs,
) -> CrossValResult:
    """Cross-validate with one modality removed; folds and seed match the full run."""
    if drop not in ABLATIONS:
        raise ValueError(f"drop must be one of {ABLATIONS}, got {drop!r}")
    return cross_validate(cfg.replace(drop=drop), samples, store, dialogues, **kwargs)


def baseline_random(samples: Sequence[IpuSample], seed: int) -> Metrics:
    """A fair coin per sample."""
    if not samples:
        raise ValueError("no samples to score")
    y = np.array([s.y for s in samples])
    return compute_metrics(y, np.random.default_rng(seed).integers(0, 2, size=len(y)))


def baseline_majority(train: Sequence[IpuSample], eval_samples: Sequence[IpuSample]) -> Metrics:
    """Predict the training majority class everywhere (ties go to switch)."""
    if not train or not eval_samples:
        raise ValueError("need labeled train and eval samples")
    ys = np.array([s.y for s in train])
    major = int(ys.mean() >= 0.5)
    y = np.array([s.y for s in eval_samples])
    return compute_metrics(y, np.full(len(y), major))
