"""Finite-difference check of the complete training objective at toy size."""

from __future__ import annotations

import numpy as np

from .. import nn
from ..augment import dropout_views
from ..encoders import EncoderConfig
from ..fusion import Batch, TurnTakingModel, loss_ce, loss_contrastive, loss_total

TOY_ENCODER = dict(
    d_model=8,
    vocab_size=20,
    l_max=12,
    heads=2,
    resnet_channels=(2, 2, 4, 4),
    stage_time_strides=(1, 2, 2, 1),
    n_frames=4,
    n_buckets=5,
    dropout_p=0.1,
)


def toy_batch(cfg: EncoderConfig, n: int = 6, seed: int = 0) -> Batch:
    g = np.random.default_rng(seed)
    length = min(7, cfg.l_max)
    ids = g.integers(4, cfg.vocab_size, size=(n, length))
    ids[:, 0] = 2
    mask = np.ones((n, length), dtype=bool)
    for i in range(n):
        cut = int(g.integers(2, length + 1))
        mask[i, cut:] = False
        ids[i, cut:] = 0
    segs = np.ones((n, length), dtype=np.int64)
    segs[:, 1:3] = 0
    frames = g.normal(size=(n, cfg.n_frames, cfg.n_features))
    buckets = g.integers(0, cfg.n_buckets, size=(n, 4))
    y = (np.arange(n) % 2).astype(np.float64)
    return Batch(ids, segs, mask, frames, buckets, y)


def full_loss_gradient_check(
    fusion: str = "gmf", seed: int = 0, n_coords: int = 300, h: float = 1e-5, tau: float = 0.1
) -> float:
    """Max relative error of backprop vs central differences on CE + contrastive loss.

    Dropout masks are re-seeded before every evaluation so the objective is a
    deterministic function of the parameters.
    """
    cfg = EncoderConfig(**TOY_ENCODER)
    model = TurnTakingModel(cfg, np.random.default_rng(seed), fusion)
    batch = toy_batch(cfg, seed=seed + 1)
    neg = batch.y[:, None] != batch.y[None, :]

    def closure():
        model.reseed_dropout(seed + 2)
        r, y_hat = model(batch)
        v1, v2 = dropout_views(r, 0.1, (seed + 3, seed + 4))
        return loss_total(loss_ce(y_hat, batch.y), loss_contrastive(v1, v2, v2, tau, neg))

    return nn.gradient_check(closure, model.parameters(), h=h, n_coords=n_coords, seed=seed)
