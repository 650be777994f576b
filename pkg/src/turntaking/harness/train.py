"""Minibatch training with early stopping on dev macro-F1."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .. import nn
from ..augment import assemble_cl_batch, build_augmented_pool, dropout_views
from ..corpus import Dialogue, IpuSample
from ..fusion import Batch, TurnTakingModel, loss_ce, loss_contrastive, loss_total
from ..text import load_pretrained_embeddings
from .config import TrainConfig
from .data import Encoded, FeatureStore, Preprocessor, fit_preprocessor
from .metrics import Metrics, compute_metrics

EVAL_BATCH = 256


class TrainingDiverged(nn.NumericError):
    """A loss went non-finite; ``dump`` holds the state at the failing step."""

    def __init__(self, msg: str, dump: dict):
        super().__init__(msg)
        self.dump = dump


@dataclass
class TrainedModel:
    config: TrainConfig
    prep: Preprocessor
    model: TurnTakingModel
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0

    def predict_proba(self, enc: Encoded) -> np.ndarray:
        self.model.eval()
        out = []
        with nn.no_grad():
            for i in range(0, len(enc), EVAL_BATCH):
                rows = np.arange(i, min(i + EVAL_BATCH, len(enc)))
                out.append(self.model(enc.batch(rows))[1].data)
        return np.concatenate(out)

    def evaluate(self, enc: Encoded) -> tuple[Metrics, np.ndarray, np.ndarray]:
        if len(enc) == 0:
            raise ValueError("no samples to evaluate")
        proba = self.predict_proba(enc)
        pred = (proba >= 0.5).astype(int)
        return compute_metrics(enc.y.astype(int), pred), proba, pred

    def save(self, path) -> None:
        meta = {
            "train_config": self.config.to_json(),
            "preprocessor": self.prep.to_json(),
            "best_epoch": self.best_epoch,
        }
        nn.save_checkpoint(path, meta, self.model.state_dict())

    @classmethod
    def load(cls, path) -> "TrainedModel":
        meta, blobs = nn.load_checkpoint(path)
        cfg = TrainConfig.from_json(meta["train_config"])
        prep = Preprocessor.from_json(meta["preprocessor"])
        model = build_model(cfg, prep)
        model.load_state_dict(blobs)
        return cls(cfg, prep, model.eval(), [], meta.get("best_epoch", 0))


def build_model(cfg: TrainConfig, prep: Preprocessor, rng: np.random.Generator | None = None) -> TurnTakingModel:
    rng = rng if rng is not None else np.random.default_rng([cfg.seed, 0])
    pretrained = None
    if cfg.pretrained_path:
        enc_cfg = cfg.encoder_config(len(prep.vocab))
        pretrained, _ = load_pretrained_embeddings(cfg.pretrained_path, prep.vocab, enc_cfg.pretrained_dim or 300, cfg.seed)
    return TurnTakingModel(cfg.encoder_config(len(prep.vocab)), rng, cfg.fusion, cfg.model_drop(), pretrained)


def _snapshot(model: TurnTakingModel) -> dict[str, np.ndarray]:
    return model.state_dict()


def train(
    cfg: TrainConfig,
    train_samples: Sequence[IpuSample],
    dev_samples: Sequence[IpuSample],
    store: FeatureStore,
    dialogues: Sequence[Dialogue] = (),
    log: Callable[[str], None] | None = None,
) -> TrainedModel:
    """Fit a model; the returned weights are those of the best dev epoch.

    Random streams are derived from ``cfg.seed``: model initialization,
    batch order, and contrastive/augmentation draws each get their own, so
    toggling contrastive learning leaves initialization and data order intact.
    """
    if not train_samples or not dev_samples:
        raise ValueError("training and dev sets must be non-empty")
    if any(s.augmented for s in dev_samples):
        raise ValueError("augmented samples cannot be used for model selection")
    prep = fit_preprocessor(train_samples, cfg.n_buckets, cfg.effective_context_turns(), cfg.l_max, cfg.min_count)
    model = build_model(cfg, prep)
    order_rng = np.random.default_rng([cfg.seed, 1])
    cl_rng = np.random.default_rng([cfg.seed, 2])

    tr = prep.encode(train_samples, store)
    dev = prep.encode(dev_samples, store)
    if model.audio is not None:
        model.audio.fit_input_stats(tr.valid_rows())

    pool: Encoded | None = None
    if cfg.cl_enabled and cfg.aug_total > 0:
        aug = build_augmented_pool(cfg.scenario, train_samples, dialogues, cfg.aug_total, cl_rng)
        if aug:
            pool = prep.encode(aug, store)

    result = TrainedModel(cfg, prep, model)
    adam = nn.AdamState(lr=cfg.lr)
    params = model.parameters()
    best_f1, best_state, stale = -1.0, _snapshot(model), 0
    model.eval()
    best_f1 = result.evaluate(dev)[0].macro_f1
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        model.train()
        perm = order_rng.permutation(len(tr))
        sums = {"loss": 0.0, "ce": 0.0, "cl": 0.0}
        n_batches = cl_batches = excluded = skipped = 0
        for i in range(0, len(perm), cfg.batch_size):
            rows = perm[i : i + cfg.batch_size]
            if len(rows) < 2:
                continue
            batch = tr.batch(rows)
            l_ce, l_cl, info = _objective(model, batch, pool, cfg, cl_rng)
            loss = loss_total(l_ce, l_cl, cfg.cl_weight)
            if not np.isfinite(loss.item()):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}", {"epoch": epoch, "rows": rows.tolist()})
            nn.backward(loss)
            nn.adam_step(adam, params)
            sums["loss"] += loss.item()
            sums["ce"] += l_ce.item()
            if l_cl is not None:
                sums["cl"] += l_cl.item()
                cl_batches += 1
            excluded += info["excluded"]
            skipped += info["skipped"]
            n_batches += 1
        metrics = result.evaluate(dev)[0]
        entry = {
            "epoch": epoch,
            "train_loss": sums["loss"] / max(n_batches, 1),
            "ce": sums["ce"] / max(n_batches, 1),
            "cl": sums["cl"] / max(cl_batches, 1) if cl_batches else None,
            "dev_accuracy": metrics.accuracy,
            "dev_macro_f1": metrics.macro_f1,
            "excluded_anchors": excluded,
            "cl_skipped_batches": skipped,
        }
        result.history.append(entry)
        if log:
            log(json.dumps(entry, sort_keys=True) + f"  # {time.perf_counter() - t0:.1f}s")
        if metrics.macro_f1 > best_f1:
            best_f1, best_state, stale = metrics.macro_f1, _snapshot(model), 0
            result.best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.load_state_dict(best_state)
    model.eval()
    return result


def _objective(model: TurnTakingModel, batch: Batch, pool: Encoded | None, cfg: TrainConfig, rng):
    info = {"excluded": 0, "skipped": 0}
    if not cfg.cl_enabled:
        _, p = model(batch)
        return loss_ce(p, batch.y), None, info
    pool_y = pool.y if pool is not None else np.zeros(0)
    clb = assemble_cl_batch(batch.y, pool_y, cfg.aug_per_batch, rng)
    full = Batch.concat(batch, pool.batch(clb.pool_rows)) if len(clb.pool_rows) else batch
    r, p = model(full)
    if cfg.aug_in_ce or len(clb.pool_rows) == 0:
        l_ce = loss_ce(p, full.y)
    else:
        l_ce = loss_ce(p[: len(batch)], batch.y)
    info["excluded"] = clb.excluded
    if len(clb.anchors) == 0:
        info["skipped"] = 1
        return l_ce, None, info
    s1, s2 = (int(x) for x in rng.integers(0, 2**31, size=2))
    v1, v2 = dropout_views(r, cfg.cl_dropout_p, (s1, s2))
    a = clb.anchors
    l_cl = loss_contrastive(v1[a], v2[a], v2, cfg.tau, clb.neg_mask[a])
    return l_ce, l_cl, info


def write_log(path, lines: list[str]) -> None:
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))
