"""Gated multimodal fusion, alternative fusion heads, the classifier and the losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .encoders import AudioEncoder, EncoderConfig, TextEncoder, TimingEncoder
from .nn import Module, Tensor
from .nn import tensor as T

FUSION_METHODS = ("gmf", "concat", "sum", "mult", "mfb")
ABLATIONS = ("semantic", "context", "acoustic", "timing")
MFB_FACTOR = 5
NEG_INF = -1e9


def _check_dims(*rs: Tensor) -> None:
    shapes = {r.shape for r in rs}
    if len(shapes) != 1:
        raise ValueError(f"modality representations differ in shape: {sorted(shapes)}")


class GatedFusion(Module):
    """r_sa = tanh(W_sa[r_s;r_a]+b), r_st = tanh(W_st[r_s;r_t]+b), g = sigma(W_g[r_sa;r_st])."""

    def __init__(self, d: int, rng: np.random.Generator, drop: str | None = None):
        super().__init__()
        # an ablated acoustic or timing branch bypasses its affine and the gate
        self.drop = drop
        self.sa = None if drop == "acoustic" else nn.Linear(2 * d, d, rng)
        self.st = None if drop == "timing" else nn.Linear(2 * d, d, rng)
        self.gate = None if drop in ("acoustic", "timing") else nn.Linear(2 * d, d, rng, bias=False)

    def forward(self, r_s, r_a, r_t, gate_override: float | None = None):
        """Returns ``(r, g)``; ``g`` is None when one branch is bypassed."""
        _check_dims(r_s, r_a, r_t)
        if self.sa is None:
            return T.tanh(self.st(T.concat([r_s, r_t]))), None
        if self.st is None:
            return T.tanh(self.sa(T.concat([r_s, r_a]))), None
        r_sa = T.tanh(self.sa(T.concat([r_s, r_a])))
        r_st = T.tanh(self.st(T.concat([r_s, r_t])))
        if gate_override is not None:
            g = Tensor(np.full(r_sa.shape, float(gate_override)))
        else:
            g = T.sigmoid(self.gate(T.concat([r_sa, r_st])))
        return g * r_sa + (1.0 - g) * r_st, g


def fuse_gated(r_s, r_a, r_t, params: GatedFusion, gate_override: float | None = None):
    return params(r_s, r_a, r_t, gate_override=gate_override)


def fuse_baseline(method: str, r_s, r_a, r_t, proj: nn.Linear | None = None) -> Tensor:
    """Parameter-light fusion: concat (+ affine to d), elementwise sum, or elementwise product."""
    _check_dims(r_s, r_a, r_t)
    if method == "concat":
        if proj is None:
            raise ValueError("concat fusion needs a projection layer")
        return proj(T.concat([r_a, r_s, r_t]))
    if method == "sum":
        return r_a + r_s + r_t
    if method == "mult":
        return r_a * r_s * r_t
    raise ValueError(f"{method!r} is not a baseline fusion method")


class MFB(Module):
    """Factorized bilinear pooling of the (s, a) and (s, t) pairs.

    Each pair gives sumpool_k(U x * V y), power-normalized and L2-normalized;
    the two pooled vectors are added and the sum is L2-normalized again.
    Projections carry no bias so a zero input yields a zero output.
    """

    def __init__(self, d: int, rng: np.random.Generator, k: int = MFB_FACTOR):
        super().__init__()
        self.d, self.k = d, k
        self.u_sa = nn.Linear(d, d * k, rng, bias=False)
        self.v_sa = nn.Linear(d, d * k, rng, bias=False)
        self.u_st = nn.Linear(d, d * k, rng, bias=False)
        self.v_st = nn.Linear(d, d * k, rng, bias=False)

    def _pair(self, u, v, x, y) -> Tensor:
        z = (u(x) * v(y)).reshape(x.shape[0], self.d, self.k).sum(axis=-1)
        return T.l2_normalize(T.signed_sqrt(z))

    def forward(self, r_s, r_a, r_t) -> Tensor:
        _check_dims(r_s, r_a, r_t)
        return T.l2_normalize(self._pair(self.u_sa, self.v_sa, r_s, r_a) + self._pair(self.u_st, self.v_st, r_s, r_t))


class Classifier(Module):
    def __init__(self, d: int, rng: np.random.Generator):
        super().__init__()
        self.out = nn.Linear(d, 1, rng)

    def forward(self, r: Tensor) -> Tensor:
        return T.sigmoid(self.out(r)).reshape(r.shape[0])


def predict(r: Tensor, head: Classifier) -> Tensor:
    """y_hat = sigma(W_f r + b), one probability per row of ``r``."""
    return head(r)


@dataclass
class Batch:
    ids: np.ndarray
    segments: np.ndarray
    mask: np.ndarray
    frames: np.ndarray
    buckets: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.y)

    def take(self, rows) -> "Batch":
        rows = np.asarray(rows)
        return Batch(self.ids[rows], self.segments[rows], self.mask[rows], self.frames[rows], self.buckets[rows], self.y[rows])

    @staticmethod
    def concat(a: "Batch", b: "Batch") -> "Batch":
        n = max(a.ids.shape[1], b.ids.shape[1])

        def pad(x, fill):
            out = np.full((x.shape[0], n), fill, dtype=x.dtype)
            out[:, : x.shape[1]] = x
            return out

        return Batch(
            np.concatenate([pad(a.ids, 0), pad(b.ids, 0)]),
            np.concatenate([pad(a.segments, 0), pad(b.segments, 0)]),
            np.concatenate([pad(a.mask, False), pad(b.mask, False)]),
            np.concatenate([a.frames, b.frames]),
            np.concatenate([a.buckets, b.buckets]),
            np.concatenate([a.y, b.y]),
        )


class TurnTakingModel(Module):
    """Encoders, a fusion head and the classifier.

    ``drop`` names an ablated modality.  A dropped semantic branch feeds zeros
    to both fusion affines and owns no text encoder; dropped acoustic or timing
    branches are bypassed inside the gated fusion.  Context ablation is a data
    change (no context turns) and leaves the model untouched.
    """

    def __init__(
        self,
        cfg: EncoderConfig,
        rng: np.random.Generator,
        fusion: str = "gmf",
        drop: str | None = None,
        pretrained: np.ndarray | None = None,
    ):
        super().__init__()
        if fusion not in FUSION_METHODS:
            raise ValueError(f"unknown fusion method {fusion!r}")
        if drop is not None and drop not in ABLATIONS:
            raise ValueError(f"unknown ablation {drop!r}")
        self.cfg, self.fusion, self.drop = cfg, fusion, drop
        d = cfg.d_model
        self.text = None if drop == "semantic" else TextEncoder(cfg, rng, pretrained)
        self.audio = None if drop == "acoustic" else AudioEncoder(cfg, rng)
        self.timing = None if drop == "timing" else TimingEncoder(cfg, rng)
        self.gmf = GatedFusion(d, rng, drop) if fusion == "gmf" else None
        self.proj = nn.Linear(3 * d, d, rng) if fusion == "concat" else None
        self.mfb = MFB(d, rng) if fusion == "mfb" else None
        self.head = Classifier(d, rng)

    def encode(self, batch: Batch) -> tuple[Tensor, Tensor, Tensor]:
        zeros = Tensor(np.zeros((len(batch), self.cfg.d_model)))
        r_s = self.text(batch.ids, batch.segments, batch.mask) if self.text else zeros
        r_a = self.audio(batch.frames) if self.audio else zeros
        r_t = self.timing(batch.buckets) if self.timing else zeros
        return r_s, r_a, r_t

    def fuse(self, r_s, r_a, r_t) -> Tensor:
        if self.fusion == "gmf":
            return self.gmf(r_s, r_a, r_t)[0]
        if self.fusion == "mfb":
            return self.mfb(r_s, r_a, r_t)
        return fuse_baseline(self.fusion, r_s, r_a, r_t, self.proj)

    def forward(self, batch: Batch) -> tuple[Tensor, Tensor]:
        """Returns the fused representation and the switch probability per sample."""
        r = self.fuse(*self.encode(batch))
        return r, self.head(r)

    def reseed_dropout(self, seed: int) -> None:
        """Point every dropout layer at one freshly seeded generator."""
        rng = np.random.default_rng(seed)
        stack = [self]
        while stack:
            m = stack.pop()
            if isinstance(m, nn.Dropout):
                m.rng = rng
            stack.extend(c for _, c in m.children())


# ------------------------------------------------------------------ losses


def loss_ce(y_hat: Tensor, y) -> Tensor:
    """Mean binary cross-entropy with y_hat clamped to [1e-12, 1 - 1e-12]."""
    return T.binary_cross_entropy(y_hat, np.asarray(y, dtype=np.float64))


def loss_contrastive(anchors: Tensor, positives: Tensor, negatives: Tensor, tau: float, neg_mask=None) -> Tensor:
    """InfoNCE with cosine similarity; the positive also sits in the denominator.

    ``anchors`` and ``positives`` are (A, d); ``negatives`` is (M, d) and
    ``neg_mask[i, j]`` says whether negative j counts for anchor i.  Anchors
    without any negative are skipped; at least one anchor must remain.
    """
    if tau <= 0:
        raise ValueError("temperature must be positive")
    if anchors.ndim == 1:
        anchors, positives = anchors.reshape(1, -1), positives.reshape(1, -1)
    if negatives.ndim == 1:
        negatives = negatives.reshape(1, -1)
    n_a, n_m = anchors.shape[0], negatives.shape[0]
    mask = np.ones((n_a, n_m), dtype=bool) if neg_mask is None else np.asarray(neg_mask, dtype=bool)
    if mask.shape != (n_a, n_m):
        raise ValueError(f"neg_mask shape {mask.shape} != {(n_a, n_m)}")
    valid = np.flatnonzero(mask.any(axis=1))
    if valid.size == 0:
        raise ValueError("no anchor has a negative")
    a = T.l2_normalize(anchors, strict=True)
    p = T.l2_normalize(positives, strict=True)
    n = T.l2_normalize(negatives, strict=True)
    pos = (a * p).sum(axis=-1, keepdims=True)
    logits = T.scale(T.concat([pos, a @ n.transpose(1, 0)], axis=1), 1.0 / tau)
    bias = np.concatenate([np.zeros((n_a, 1)), np.where(mask, 0.0, NEG_INF)], axis=1)
    nll = -T.log_softmax(logits + Tensor(bias), axis=1)[:, 0]
    if valid.size < n_a:
        nll = nll[valid]
    return nll.mean()


def loss_total(l_ce: Tensor, l_cl: Tensor | None = None, cl_weight: float = 1.0) -> Tensor:
    """L_ce + L_cl; without a contrastive term this is L_ce itself."""
    if l_cl is None:
        return l_ce
    return l_ce + (l_cl if cl_weight == 1.0 else T.scale(l_cl, cl_weight))
