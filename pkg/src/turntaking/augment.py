"""Minority-class augmentation and contrastive batch assembly.

* dropout views: two independent dropout masks over the fused representation
  give an anchor and its positive;
* endpointing: complete (switch) answers lose their last 30% of tokens and
  the matching share of audio time and become hold samples;
* barge-in: a normal answer is moved earlier so it overlaps the robot
  question, yielding a switch sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .corpus import CorpusError, Dialogue, IpuSample, Utterance
from .nn import Tensor
from .nn import tensor as T

TRUNCATE_KEEP = 0.7
MIN_TRUNCATE_TOKENS = 10


def dropout_views(r: Tensor, p: float, seeds: tuple[int, int]) -> tuple[Tensor, Tensor]:
    """Apply two dropout masks drawn from generators seeded with ``seeds``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout p must be in [0, 1), got {p}")
    s1, s2 = seeds
    return T.dropout(r, p, np.random.default_rng(s1)), T.dropout(r, p, np.random.default_rng(s2))


def truncate_endpointing(sample: IpuSample) -> IpuSample | None:
    """Hold sample from a complete endpointing answer with more than 10 tokens, else None."""
    if sample.scenario != "endpointing" or sample.label != "switch":
        raise ValueError(f"{sample.id}: truncation needs an endpointing switch sample")
    n = len(sample.text)
    if n <= MIN_TRUNCATE_TOKENS:
        return None
    keep = math.ceil(TRUNCATE_KEEP * n)
    end = sample.ipu_start_ms + round(TRUNCATE_KEEP * sample.duration_ms)
    return replace(
        sample,
        id=f"{sample.id}_trunc",
        text=sample.text[:keep],
        ipu_end_ms=end,
        label="hold",
        augmented=True,
    )


def construct_bargein_overlap(question: Utterance, answer: IpuSample, shift_ms: int) -> IpuSample:
    """Move ``answer`` earlier by ``shift_ms`` so it overlaps ``question``; label switch."""
    if question.speaker != "robot":
        raise ValueError("question must be a robot utterance")
    if answer.ipu_start_ms < question.end_ms:
        raise ValueError(f"{answer.id}: answer must start after the question ends")
    if shift_ms <= 0:
        raise ValueError("shift_ms must be positive")
    start = answer.ipu_start_ms - shift_ms
    end = answer.ipu_end_ms - shift_ms
    if start >= question.end_ms:
        raise ValueError(f"shift {shift_ms} ms creates no overlap with the question")
    if start <= question.start_ms:
        raise ValueError(f"shift {shift_ms} ms moves the answer before the question starts")
    return replace(
        answer,
        id=f"{answer.id}_shift{shift_ms}",
        ipu_start_ms=start,
        ipu_end_ms=end,
        scenario="bargein",
        label="switch",
        prev_turn_end_ms=question.end_ms,
        robot_overlap_ms=min(question.end_ms, end) - start,
        augmented=True,
    )


def _question_before(dialogue: Dialogue, sample: IpuSample) -> Utterance | None:
    robot = [u for u in dialogue.utterances if u.speaker == "robot" and u.end_ms <= sample.ipu_start_ms]
    return robot[-1] if robot else None


def build_augmented_pool(
    scenario: str,
    train: Sequence[IpuSample],
    dialogues: Sequence[Dialogue],
    total: int,
    rng: np.random.Generator,
) -> list[IpuSample]:
    """Up to ``total`` augmented minority-class samples built from training samples only."""
    if scenario == "endpointing":
        cands = [s for s in train if s.scenario == "endpointing" and s.label == "switch" and not s.augmented]
        order = rng.permutation(len(cands))
        out = []
        for i in order:
            t = truncate_endpointing(cands[i])
            if t is not None:
                out.append(t)
                if len(out) == total:
                    break
        return out
    if scenario != "bargein":
        raise ValueError(f"unknown scenario {scenario!r}")
    by_id = {d.id: d for d in dialogues}
    out = []
    cands = [s for s in train if s.scenario == "endpointing" and s.label == "switch" and not s.augmented]
    for i in rng.permutation(len(cands)):
        s = cands[i]
        d = by_id.get(s.dialogue_id)
        q = _question_before(d, s) if d else None
        if q is None or q.end_ms - q.start_ms < 400:
            continue
        gap = s.ipu_start_ms - q.end_ms
        overlap = int(rng.integers(150, min(1200, q.end_ms - q.start_ms - 200) + 1))
        out.append(construct_bargein_overlap(q, s, gap + overlap))
        if len(out) == total:
            break
    return out


@dataclass
class ClBatch:
    """Contrastive layout for one minibatch extended by augmented samples.

    Rows ``0..n_real-1`` are the real batch, the rest are ``pool_rows`` of the
    augmented pool.  ``neg_mask[i, j]`` marks opposite-label pairs; anchors are
    rows with at least one negative.
    """

    pool_rows: np.ndarray
    labels: np.ndarray
    neg_mask: np.ndarray
    anchors: np.ndarray
    excluded: int


def assemble_cl_batch(
    batch_labels, pool_labels, aug_per_batch: int, rng: np.random.Generator | None = None
) -> ClBatch:
    batch_labels = np.asarray(batch_labels)
    pool_labels = np.asarray(pool_labels)
    k = min(aug_per_batch, len(pool_labels))
    if k and rng is not None:
        rows = np.sort(rng.choice(len(pool_labels), size=k, replace=False))
    else:
        rows = np.arange(k)
    labels = np.concatenate([batch_labels, pool_labels[rows]]) if k else batch_labels.copy()
    neg = labels[:, None] != labels[None, :]
    has = neg.any(axis=1)
    return ClBatch(rows, labels, neg, np.flatnonzero(has), int((~has).sum()))


def ensure_not_augmented(samples: Sequence[IpuSample], what: str = "evaluation") -> None:
    bad = [s.id for s in samples if s.augmented]
    if bad:
        raise CorpusError(f"augmented samples in {what} set: {bad[:3]}")
