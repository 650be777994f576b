"""Text, audio and timing encoders, each emitting a ``d_model`` vector per sample.

All encoders are batched: inputs carry a leading batch axis and outputs are
``(batch, d_model)`` tensors.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .nn import Module, Parameter, Tensor
from .nn import tensor as T

NEG_INF = -1e9


@dataclass
class EncoderConfig:
    d_model: int = 128
    vocab_size: int = 1000
    l_max: int = 128
    transformer_layers: int = 3
    heads: int = 4
    ffn_dim: int | None = None
    resnet_channels: tuple[int, ...] = (16, 32, 64, 128)
    stage_time_strides: tuple[int, ...] = (1, 2, 2, 2)
    stem_time_stride: int = 1
    stage_freq_strides: tuple[int, ...] = (1, 1, 1, 1)
    stem_freq_stride: int = 1
    blocks_per_stage: int = 2
    mlp_layers: int = 3
    dropout_p: float = 0.1
    n_buckets: int = 10
    n_frames: int = 40
    n_features: int = 30
    pretrained_dim: int | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.resnet_channels = tuple(self.resnet_channels)
        self.stage_time_strides = tuple(self.stage_time_strides)
        self.stage_freq_strides = tuple(self.stage_freq_strides)
        if self.d_model % self.heads:
            raise ValueError("d_model must be divisible by heads")
        if self.d_model % 4:
            raise ValueError("d_model must be divisible by 4 (timing embeddings)")
        if not len(self.resnet_channels) == len(self.stage_time_strides) == len(self.stage_freq_strides):
            raise ValueError("one time and one frequency stride per ResNet stage")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")

    @property
    def ffn(self) -> int:
        return self.ffn_dim or 4 * self.d_model

    def resnet_weight_layers(self) -> int:
        return 1 + 2 * self.blocks_per_stage * len(self.resnet_channels) + 1

    def to_json(self) -> dict:
        out = asdict(self)
        out["resnet_channels"] = list(self.resnet_channels)
        out["stage_time_strides"] = list(self.stage_time_strides)
        out["stage_freq_strides"] = list(self.stage_freq_strides)
        return out


# ------------------------------------------------------------------ text


class SelfAttention(Module):
    # no key bias: it shifts every score in a row equally and never receives gradient
    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        super().__init__()
        self.heads = heads
        self.q = nn.Linear(d, d, rng)
        self.k = nn.Linear(d, d, rng, bias=False)
        self.v = nn.Linear(d, d, rng)
        self.o = nn.Linear(d, d, rng)

    def _split(self, x: Tensor, b: int, n: int) -> Tensor:
        return x.reshape(b, n, self.heads, -1).transpose(0, 2, 1, 3)

    def forward(self, x: Tensor, key_bias: np.ndarray) -> Tensor:
        b, n, d = x.shape
        q, k, v = (self._split(f(x), b, n) for f in (self.q, self.k, self.v))
        scores = T.scale(q @ k.transpose(0, 1, 3, 2), 1.0 / np.sqrt(d // self.heads))
        att = T.softmax(scores + Tensor(key_bias), axis=-1)
        ctx = (att @ v).transpose(0, 2, 1, 3).reshape(b, n, d)
        return self.o(ctx)


class TransformerLayer(Module):
    """Pre-norm encoder layer: x + Attn(LN(x)), then x + FFN(LN(x))."""

    def __init__(self, d: int, heads: int, ffn: int, p: float, rng: np.random.Generator):
        super().__init__()
        self.ln1 = nn.LayerNorm(d)
        self.attn = SelfAttention(d, heads, rng)
        self.ln2 = nn.LayerNorm(d)
        self.ff1 = nn.Linear(d, ffn, rng)
        self.ff2 = nn.Linear(ffn, d, rng)
        self.drop = nn.Dropout(p, rng)

    def forward(self, x: Tensor, key_bias: np.ndarray) -> Tensor:
        x = x + self.drop(self.attn(self.ln1(x), key_bias))
        return x + self.drop(self.ff2(T.relu(self.ff1(self.ln2(x)))))


class TextEncoder(Module):
    """Token + position + segment embeddings into a stack of Transformer layers; CLS pooling."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, pretrained: np.ndarray | None = None):
        super().__init__()
        d = cfg.d_model
        if pretrained is not None:
            self.tok = nn.Embedding(cfg.vocab_size, pretrained.shape[1], rng)
            self.tok.weight.data[...] = pretrained
            self.proj = nn.Linear(pretrained.shape[1], d, rng, bias=False)
        else:
            self.tok = nn.Embedding(cfg.vocab_size, d, rng)
            self.proj = None
        self.pos = nn.Embedding(cfg.l_max, d, rng)
        self.seg = nn.Embedding(2, d, rng)
        self.layers = [TransformerLayer(d, cfg.heads, cfg.ffn, cfg.dropout_p, rng) for _ in range(cfg.transformer_layers)]
        self.ln = nn.LayerNorm(d)
        self.drop = nn.Dropout(cfg.dropout_p, rng)

    def forward(self, ids: np.ndarray, segments: np.ndarray, mask: np.ndarray) -> Tensor:
        ids = np.asarray(ids)
        b, n = ids.shape
        if n == 0:
            raise ValueError("empty token sequence")
        e = self.tok(ids)
        if self.proj is not None:
            e = self.proj(e)
        e = e + self.pos(np.arange(n)) + self.seg(np.asarray(segments))
        x = self.drop(e)
        key_bias = np.where(np.asarray(mask, dtype=bool), 0.0, NEG_INF)[:, None, None, :]
        for layer in self.layers:
            x = layer(x, key_bias)
        return self.ln(x)[:, 0, :]


# ------------------------------------------------------------------ audio


def _shortcut(x: Tensor, c_out: int, stride: tuple[int, int]) -> Tensor:
    """Parameter-free shortcut: strided subsampling plus zero channel padding."""
    if stride != (1, 1):
        x = x[:, :, :: stride[0], :: stride[1]]
    c_in = x.shape[0]
    if c_in == c_out:
        return x
    pad = Tensor(np.zeros((c_out - c_in,) + x.shape[1:]))
    return T.concat([x, pad], axis=0)


class BasicBlock(Module):
    def __init__(self, c_in: int, c_out: int, stride: tuple[int, int], rng: np.random.Generator):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, rng, stride)
        self.bn1 = nn.BatchNorm(c_out, axis=0)
        self.conv2 = nn.Conv2d(c_out, c_out, rng)
        self.bn2 = nn.BatchNorm(c_out, axis=0)
        self.c_out = c_out
        self.stride = stride

    def forward(self, x: Tensor) -> Tensor:
        h = T.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        return T.relu(h + _shortcut(x, self.c_out, self.stride))


class AudioEncoder(Module):
    """ResNet over the (time, frequency) feature image.

    Inputs are standardized per feature column with statistics from
    :meth:`fit_input_stats` (identity until fitted).  All-zero rows are left
    padding and stay zero, so padding looks like the average frame rather
    than an extreme one.
    """

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        super().__init__()
        self.n_frames, self.n_features = cfg.n_frames, cfg.n_features
        self._buffers = {"input_mean": np.zeros(cfg.n_features), "input_std": np.ones(cfg.n_features)}
        c0 = cfg.resnet_channels[0]
        self.stem = nn.Conv2d(1, c0, rng, (cfg.stem_time_stride, cfg.stem_freq_stride))
        self.stem_bn = nn.BatchNorm(c0, axis=0)
        self.blocks = []
        c_in = c0
        for c, ts, fs in zip(cfg.resnet_channels, cfg.stage_time_strides, cfg.stage_freq_strides):
            for i in range(cfg.blocks_per_stage):
                self.blocks.append(BasicBlock(c_in, c, (ts, fs) if i == 0 else (1, 1), rng))
                c_in = c
        self.out = nn.Linear(c_in, cfg.d_model, rng)

    def fit_input_stats(self, frames: np.ndarray) -> None:
        """Per-feature mean/std over the rows of ``frames`` (shape (..., n_features))."""
        rows = np.asarray(frames, dtype=np.float64).reshape(-1, self.n_features)
        self._buffers["input_mean"][...] = rows.mean(axis=0)
        self._buffers["input_std"][...] = np.maximum(rows.std(axis=0), 1e-6)

    def forward(self, frames: np.ndarray) -> Tensor:
        x = np.asarray(frames, dtype=np.float64)
        if x.ndim != 3 or x.shape[1:] != (self.n_frames, self.n_features):
            raise ValueError(f"expected (batch, {self.n_frames}, {self.n_features}) frames, got {x.shape}")
        pad = ~x.any(axis=-1, keepdims=True)
        x = np.where(pad, 0.0, (x - self._buffers["input_mean"]) / self._buffers["input_std"])
        h = T.relu(self.stem_bn(self.stem(Tensor(x[None]))))
        for block in self.blocks:
            h = block(h)
        return self.out(T.global_avg_pool(h))


# ------------------------------------------------------------------ timing


class TimingEncoder(Module):
    """Four bucket embeddings of width d/4, concatenated, then an affine+relu stack."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        super().__init__()
        d = cfg.d_model
        self.n_buckets = cfg.n_buckets
        self.emb = [nn.Embedding(cfg.n_buckets, d // 4, rng) for _ in range(4)]
        self.mlp = [nn.Linear(d, d, rng) for _ in range(cfg.mlp_layers)]

    def forward(self, bucket_ids: np.ndarray) -> Tensor:
        ids = np.asarray(bucket_ids)
        if ids.ndim != 2 or ids.shape[1] != 4:
            raise ValueError(f"expected (batch, 4) bucket ids, got {ids.shape}")
        if ids.min(initial=0) < 0 or ids.max(initial=0) >= self.n_buckets:
            raise ValueError(f"bucket id outside [0, {self.n_buckets - 1}]")
        x = T.concat([e(ids[:, j]) for j, e in enumerate(self.emb)], axis=-1)
        for layer in self.mlp:
            x = T.relu(layer(x))
        return x
