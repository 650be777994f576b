"""Turning IPU samples into model-ready arrays.

Audio for a sample lives in a clip that starts at the IPU start, so the
clip-local end is the IPU duration.  This also holds for truncated samples
(same start, earlier end) and for shifted barge-in samples (both bounds move).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..corpus import (
    UNCLASSIFIABLE,
    CorpusError,
    Dialogue,
    IpuSample,
    classify_scenario,
    extract_ipus,
    merge_regions,
    read_wav,
)
from ..dsp import FEATURE_DIM, FRAME_MS, N_FRAMES, SAMPLE_RATE, AudioClip, detect_speech_regions, extract_frame_matrix
from ..fusion import Batch
from ..text import TokenSequence, Vocabulary, build_vocab, encode_with_context, sample_tokens
from ..timing import BucketSpec, compute_timing_features, discretize_many, fit_buckets


class FeatureStore:
    """Memoized 40x30 frame matrices keyed by (audio path, clip-local end)."""

    def __init__(self, audio_root=None, n_frames: int = N_FRAMES):
        self.root = Path(audio_root) if audio_root is not None else None
        self.n_frames = n_frames
        self._cache: dict[str, tuple[np.ndarray, int]] = {}

    @staticmethod
    def key(sample: IpuSample) -> str:
        return f"{sample.audio_path}@{sample.duration_ms}"

    def get(self, sample: IpuSample) -> tuple[np.ndarray, int]:
        k = self.key(sample)
        hit = self._cache.get(k)
        if hit is None:
            if sample.audio_path is None or self.root is None:
                hit = (np.zeros((self.n_frames, FEATURE_DIM)), 0)
            else:
                path = self.root / sample.audio_path
                if not path.exists():
                    raise CorpusError(f"{sample.id}: missing audio {path}")
                fm = extract_frame_matrix(read_wav(path), sample.duration_ms, 0, self.n_frames)
                hit = (fm.values, fm.valid_frames)
            self._cache[k] = hit
        return hit

    def __len__(self) -> int:
        return len(self._cache)

    def save(self, path) -> None:
        keys = sorted(self._cache)
        np.savez_compressed(
            path,
            keys=np.array(keys),
            values=np.stack([self._cache[k][0] for k in keys]) if keys else np.zeros((0, self.n_frames, FEATURE_DIM)),
            valid=np.array([self._cache[k][1] for k in keys], dtype=np.int64),
        )

    def load(self, path) -> None:
        with np.load(path) as z:
            for k, v, n in zip(z["keys"], z["values"], z["valid"]):
                self._cache[str(k)] = (v, int(n))


@dataclass
class Encoded:
    """Model inputs for a list of samples, in sample order."""

    ids: list[str]
    tokens: list[TokenSequence]
    frames: np.ndarray
    valid_frames: np.ndarray
    buckets: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    def batch(self, rows) -> Batch:
        rows = np.asarray(rows, dtype=np.int64)
        seqs = [self.tokens[i] for i in rows]
        n = max(len(s) for s in seqs)
        tok = np.zeros((len(rows), n), dtype=np.int64)
        seg = np.zeros((len(rows), n), dtype=np.int64)
        mask = np.zeros((len(rows), n), dtype=bool)
        for j, s in enumerate(seqs):
            tok[j, : len(s)] = s.token_ids
            seg[j, : len(s)] = s.segment_ids
            mask[j, : len(s)] = True
        return Batch(tok, seg, mask, self.frames[rows], self.buckets[rows], self.y[rows])

    def valid_rows(self) -> np.ndarray:
        """Frame rows that hold real audio (not left padding)."""
        n = self.frames.shape[1]
        keep = np.arange(n)[None, :] >= (n - self.valid_frames)[:, None]
        return self.frames[keep]


@dataclass
class Preprocessor:
    """Vocabulary and timing buckets fitted on training samples only."""

    vocab: Vocabulary
    buckets: BucketSpec
    context_turns: int
    l_max: int

    def encode(self, samples: Sequence[IpuSample], store: FeatureStore) -> Encoded:
        if not samples:
            raise ValueError("no samples to encode")
        tokens = [encode_with_context(s, self.vocab, self.context_turns, self.l_max) for s in samples]
        mats = [store.get(s) for s in samples]
        timing = [compute_timing_features(s) for s in samples]
        y = np.array([s.y if s.label is not None else -1 for s in samples], dtype=np.float64)
        return Encoded(
            [s.id for s in samples],
            tokens,
            np.stack([m[0] for m in mats]),
            np.array([m[1] for m in mats], dtype=np.int64),
            discretize_many(timing, self.buckets),
            y,
        )

    def to_json(self) -> dict:
        return {
            "vocab": self.vocab.to_json(),
            "buckets": self.buckets.to_json(),
            "context_turns": self.context_turns,
            "l_max": self.l_max,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Preprocessor":
        return cls(Vocabulary.from_json(obj["vocab"]), BucketSpec.from_json(obj["buckets"]), obj["context_turns"], obj["l_max"])


def fit_preprocessor(train: Sequence[IpuSample], n_buckets: int, context_turns: int, l_max: int, min_count: int = 1):
    if not train:
        raise ValueError("empty training set")
    vocab = build_vocab([sample_tokens(s) for s in train], min_count)
    spec = fit_buckets([compute_timing_features(s) for s in train], n_buckets)
    return Preprocessor(vocab, spec, context_turns, l_max)


def corpus_hash(corpus_dir) -> str:
    """SHA-256 over the corpus JSONL files and every referenced audio file."""
    root = Path(corpus_dir)
    h = hashlib.sha256()
    for name in ("dialogues.jsonl", "ipus.jsonl"):
        p = root / name
        if p.exists():
            h.update(name.encode())
            h.update(p.read_bytes())
    paths = set()
    ipus = root / "ipus.jsonl"
    if ipus.exists():
        for line in ipus.read_text(encoding="utf-8").splitlines():
            if line.strip():
                ap = json.loads(line).get("audio_path")
                if ap:
                    paths.add(ap)
    for ap in sorted(paths):
        p = root / ap
        if p.exists():
            h.update(ap.encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def customer_track(dialogue: Dialogue, audio_root) -> AudioClip:
    """The customer channel: every customer WAV placed at its start time, silence elsewhere."""
    root = Path(audio_root)
    clips = [(u.start_ms, read_wav(root / u.audio_path)) for u in dialogue.utterances
             if u.speaker == "customer" and u.audio_path]
    end_ms = max([u.end_ms for u in dialogue.utterances] + [0])
    n = end_ms * SAMPLE_RATE // 1000
    for start, clip in clips:
        n = max(n, start * SAMPLE_RATE // 1000 + len(clip.samples))
    x = np.zeros(n)
    for start, clip in clips:
        i = start * SAMPLE_RATE // 1000
        x[i : i + len(clip.samples)] += clip.samples
    return AudioClip(x)


def segment_dialogue(dialogue: Dialogue, audio_root) -> tuple[list[IpuSample], int]:
    """Run VAD on the customer track and cut it into IPUs with a scenario each.

    Customer utterances without audio contribute their annotated span.
    Returns the classifiable IPUs (unlabeled) and the number dropped as
    unclassifiable.
    """
    regions = detect_speech_regions(customer_track(dialogue, audio_root))
    regions += [(u.start_ms, u.end_ms) for u in dialogue.utterances if u.speaker == "customer" and not u.audio_path]
    robot = dialogue.regions("robot")
    kept, dropped = [], 0
    for ipu in extract_ipus(dialogue, merge_regions(sorted(regions), 0)):
        if classify_scenario(ipu, robot) == UNCLASSIFIABLE:
            dropped += 1
        else:
            kept.append(ipu)
    return kept, dropped


def transfer_labels(segmented: Sequence[IpuSample], labeled: Sequence[IpuSample], tol_ms: int = FRAME_MS) -> int:
    """Copy labels (and audio paths) onto segmented IPUs whose bounds match within ``tol_ms``."""
    by_dialogue: dict[str, list[IpuSample]] = {}
    for s in labeled:
        by_dialogue.setdefault(s.dialogue_id, []).append(s)
    hits = 0
    for ipu in segmented:
        for ref in by_dialogue.get(ipu.dialogue_id, []):
            if abs(ref.ipu_start_ms - ipu.ipu_start_ms) <= tol_ms and abs(ref.ipu_end_ms - ipu.ipu_end_ms) <= tol_ms:
                ipu.label = ref.label
                hits += 1
                break
    return hits
