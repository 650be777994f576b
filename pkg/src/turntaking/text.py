"""Tokenization, vocabulary and Transformer input assembly for context + current turn."""

from __future__ import annotations

import json
import warnings
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD, UNK, CLS, SEP = 0, 1, 2, 3
RESERVED = ("[PAD]", "[UNK]", "[CLS]", "[SEP]")
SEGMENT_CONTEXT, SEGMENT_CURRENT = 0, 1


class TruncationWarning(UserWarning):
    """The current utterance alone did not fit in the sequence budget."""


def tokenize(text: str, mode: str = "whitespace") -> list[str]:
    if mode == "whitespace":
        return text.split()
    if mode == "char":
        return [c for c in text if not c.isspace()]
    raise ValueError(f"unknown tokenizer mode {mode!r}")


class Vocabulary:
    """Token/id bijection with ids 0..3 reserved for PAD, UNK, CLS, SEP."""

    def __init__(self, tokens: Sequence[str] = ()):
        self._itos = list(RESERVED)
        self._stoi = {t: i for i, t in enumerate(self._itos)}
        for t in tokens:
            if t in self._stoi:
                raise ValueError(f"duplicate token {t!r}")
            self._stoi[t] = len(self._itos)
            self._itos.append(t)

    def __len__(self) -> int:
        return len(self._itos)

    def __contains__(self, token: str) -> bool:
        return token in self._stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._itos == other._itos

    def id(self, token: str) -> int:
        return self._stoi.get(token, UNK)

    def token(self, idx: int) -> str:
        return self._itos[idx]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    @property
    def tokens(self) -> list[str]:
        """Non-reserved tokens in id order."""
        return self._itos[len(RESERVED) :]

    def to_json(self) -> dict[str, int]:
        return dict(self._stoi)

    @classmethod
    def from_json(cls, mapping: dict[str, int]) -> "Vocabulary":
        ordered = sorted(mapping.items(), key=lambda kv: kv[1])
        if [t for t, _ in ordered[: len(RESERVED)]] != list(RESERVED) or [i for _, i in ordered] != list(
            range(len(ordered))
        ):
            raise ValueError("vocabulary ids must be contiguous with reserved ids 0..3")
        return cls([t for t, _ in ordered[len(RESERVED) :]])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), ensure_ascii=False, indent=0), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def build_vocab(token_lists: Iterable[Sequence[str]], min_count: int = 1) -> Vocabulary:
    """Vocabulary over training tokens, ordered by count desc then token asc."""
    counts = Counter(t for toks in token_lists for t in toks)
    if not counts:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    kept = [(t, c) for t, c in counts.items() if c >= min_count and t not in RESERVED]
    kept.sort(key=lambda tc: (-tc[1], tc[0]))
    return Vocabulary([t for t, _ in kept])


def sample_tokens(sample) -> list[str]:
    """All tokens of an IPU sample (context and current), for vocabulary building."""
    out = list(sample.text)
    for _, toks in sample.context:
        out.extend(toks)
    return out


@dataclass(frozen=True)
class TokenSequence:
    token_ids: tuple[int, ...]
    segment_ids: tuple[int, ...]
    truncated_current: bool = False

    def __post_init__(self):
        if len(self.token_ids) != len(self.segment_ids):
            raise ValueError("token and segment sequences differ in length")

    def __len__(self) -> int:
        return len(self.token_ids)

    @property
    def positions(self) -> tuple[int, ...]:
        return tuple(range(len(self.token_ids)))


def encode_with_context(sample, vocab: Vocabulary, context_turns: int = 3, l_max: int = 128) -> TokenSequence:
    """Build ``[CLS] ctx_1 [SEP] ... ctx_k [SEP] current``.

    Overlong input loses context tokens from the left first.  If the current
    utterance alone does not fit, its tail is cut and a
    :class:`TruncationWarning` is emitted.
    """
    if l_max < 4:
        raise ValueError("l_max must be at least 4")
    current = vocab.encode(sample.text)
    if 1 + len(current) > l_max:
        warnings.warn(
            f"{sample.id}: current utterance of {len(current)} tokens truncated to {l_max - 1}",
            TruncationWarning,
            stacklevel=2,
        )
        ids = [CLS] + current[: l_max - 1]
        return TokenSequence(tuple(ids), (SEGMENT_CURRENT,) * len(ids), truncated_current=True)

    ctx: list[int] = []
    turns = sample.context[-context_turns:] if context_turns > 0 else ()
    for _, toks in turns:
        ctx.extend(vocab.encode(toks))
        ctx.append(SEP)
    budget = l_max - 1 - len(current)
    if len(ctx) > budget:
        ctx = ctx[len(ctx) - budget :]
    ids = [CLS] + ctx + current
    segs = [SEGMENT_CURRENT] + [SEGMENT_CONTEXT] * len(ctx) + [SEGMENT_CURRENT] * len(current)
    return TokenSequence(tuple(ids), tuple(segs))


def pad_batch(seqs: Sequence[TokenSequence], length: int | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Right-pad to a common length; returns (token ids, segment ids, key mask)."""
    n = max((len(s) for s in seqs), default=1) if length is None else length
    ids = np.full((len(seqs), n), PAD, dtype=np.int64)
    segs = np.zeros((len(seqs), n), dtype=np.int64)
    mask = np.zeros((len(seqs), n), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s.token_ids
        segs[i, : len(s)] = s.segment_ids
        mask[i, : len(s)] = True
    return ids, segs, mask


def load_pretrained_embeddings(path, vocab: Vocabulary, dim_in: int, seed: int = 0) -> tuple[np.ndarray, float]:
    """Token table of shape (len(vocab), dim_in) plus the fraction of vocabulary tokens found.

    Rows for tokens missing from the file are seeded N(0, 0.1^2) draws.
    """
    table = np.random.default_rng(seed).normal(0.0, 0.1, size=(len(vocab), dim_in))
    found = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split(" ")
            if not line.strip():
                continue
            if len(parts) != dim_in + 1:
                raise ValueError(f"{path}:{lineno}: expected {dim_in} values, got {len(parts) - 1}")
            try:
                vec = np.array([float(v) for v in parts[1:]])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: malformed vector") from exc
            tok = parts[0]
            if tok in vocab and tok not in RESERVED:
                table[vocab.id(tok)] = vec
                found.add(tok)
    n = len(vocab) - len(RESERVED)
    return table, (len(found) / n if n else 0.0)
