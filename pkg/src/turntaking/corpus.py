"""Dialogue data model, JSONL/WAV corpus I/O, IPU extraction and corpus statistics.

On-disk layout of a corpus directory::

    dialogues.jsonl   {"id", "utterances": [{"speaker", "start_ms", "end_ms", "text", "audio_path"}]}
    ipus.jsonl        one IpuSample per line
    *.wav             PCM16 mono 8 kHz, paths relative to the corpus directory
"""

from __future__ import annotations

import json
import wave
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dsp import SAMPLE_RATE, AudioClip

SPEAKERS = ("customer", "robot")
SCENARIOS = ("endpointing", "bargein")
LABELS = ("switch", "hold")
IPU_GAP_MS = 200
UNCLASSIFIABLE = "unclassifiable"


class CorpusError(ValueError):
    """Malformed or inconsistent corpus data."""


@dataclass(frozen=True)
class Utterance:
    speaker: str
    start_ms: int
    end_ms: int
    text: tuple[str, ...] = ()
    audio_path: str | None = None

    def __post_init__(self):
        if self.speaker not in SPEAKERS:
            raise CorpusError(f"unknown speaker {self.speaker!r}")
        if self.end_ms <= self.start_ms:
            raise CorpusError(f"utterance end_ms {self.end_ms} <= start_ms {self.start_ms}")
        object.__setattr__(self, "text", tuple(self.text))

    def to_json(self) -> dict:
        return {
            "speaker": self.speaker,
            "start_ms": self.start_ms,
            "end_ms": self.end_ms,
            "text": list(self.text),
            "audio_path": self.audio_path,
        }


@dataclass
class Dialogue:
    id: str
    utterances: list[Utterance] = field(default_factory=list)

    def __post_init__(self):
        starts = [u.start_ms for u in self.utterances]
        if starts != sorted(starts):
            raise CorpusError(f"dialogue {self.id}: utterances not sorted by start_ms")
        for spk in SPEAKERS:
            own = [u for u in self.utterances if u.speaker == spk]
            for a, b in zip(own, own[1:]):
                if b.start_ms < a.end_ms:
                    raise CorpusError(
                        f"dialogue {self.id}: overlapping {spk} utterances at {a.start_ms}-{a.end_ms} and {b.start_ms}-{b.end_ms}"
                    )

    def regions(self, speaker: str) -> list[tuple[int, int]]:
        return [(u.start_ms, u.end_ms) for u in self.utterances if u.speaker == speaker]

    def to_json(self) -> dict:
        return {"id": self.id, "utterances": [u.to_json() for u in self.utterances]}


@dataclass
class IpuSample:
    """One inter-pausal unit of customer speech.

    ``scenario`` is ``None`` until :func:`classify_scenario` has run; ``label``
    is ``None`` for unannotated IPUs.  ``context`` holds ``(speaker, tokens)``
    for earlier turns, oldest first.
    """

    id: str
    dialogue_id: str
    ipu_start_ms: int
    ipu_end_ms: int
    scenario: str | None = None
    label: str | None = None
    text: tuple[str, ...] = ()
    context: tuple[tuple[str, tuple[str, ...]], ...] = ()
    audio_path: str | None = None
    prev_turn_end_ms: int | None = None
    robot_overlap_ms: int = 0
    augmented: bool = False

    def __post_init__(self):
        self.text = tuple(self.text)
        self.context = tuple((spk, tuple(toks)) for spk, toks in self.context)
        self.validate()

    def validate(self) -> None:
        if self.ipu_end_ms <= self.ipu_start_ms:
            raise CorpusError(f"sample {self.id}: ipu_end_ms {self.ipu_end_ms} <= ipu_start_ms {self.ipu_start_ms}")
        if self.scenario is not None:
            if self.scenario not in SCENARIOS:
                raise CorpusError(f"sample {self.id}: unknown scenario {self.scenario!r}")
            if (self.scenario == "endpointing") != (self.robot_overlap_ms == 0):
                raise CorpusError(
                    f"sample {self.id}: scenario {self.scenario} inconsistent with robot_overlap_ms={self.robot_overlap_ms}"
                )
        if self.label is not None and self.label not in LABELS:
            raise CorpusError(f"sample {self.id}: unknown label {self.label!r}")

    @property
    def duration_ms(self) -> int:
        return self.ipu_end_ms - self.ipu_start_ms

    @property
    def y(self) -> int:
        """Binary target: switch = 1, hold = 0."""
        if self.label is None:
            raise CorpusError(f"sample {self.id} is unlabeled")
        return 1 if self.label == "switch" else 0

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "dialogue_id": self.dialogue_id,
            "scenario": self.scenario,
            "label": self.label,
            "text": list(self.text),
            "context": [[spk, list(toks)] for spk, toks in self.context],
            "audio_path": self.audio_path,
            "ipu_start_ms": self.ipu_start_ms,
            "ipu_end_ms": self.ipu_end_ms,
            "prev_turn_end_ms": self.prev_turn_end_ms,
            "robot_overlap_ms": self.robot_overlap_ms,
            "augmented": self.augmented,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "IpuSample":
        text = obj.get("text", [])
        if isinstance(text, str):
            text = text.split()
        return cls(
            id=str(obj["id"]),
            dialogue_id=str(obj["dialogue_id"]),
            ipu_start_ms=int(obj["ipu_start_ms"]),
            ipu_end_ms=int(obj["ipu_end_ms"]),
            scenario=obj.get("scenario"),
            label=obj.get("label"),
            text=text,
            context=[(spk, toks.split() if isinstance(toks, str) else toks) for spk, toks in obj.get("context", [])],
            audio_path=obj.get("audio_path"),
            prev_turn_end_ms=obj.get("prev_turn_end_ms"),
            robot_overlap_ms=int(obj.get("robot_overlap_ms", 0)),
            augmented=bool(obj.get("augmented", False)),
        )


def _utterance_from_json(obj: dict) -> Utterance:
    text = obj.get("text", [])
    if isinstance(text, str):
        text = text.split()
    return Utterance(obj["speaker"], int(obj["start_ms"]), int(obj["end_ms"]), text, obj.get("audio_path"))


def _dumps(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False)


# ---------------------------------------------------------------- corpus I/O


def _read_jsonl(path: Path, parse):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(parse(json.loads(line)))
            except (CorpusError, KeyError, TypeError, ValueError) as exc:
                raise CorpusError(f"{path.name}:{lineno}: {exc}") from exc
    return out


def load_corpus(path, check_audio: bool = False) -> tuple[list[Dialogue], list[IpuSample]]:
    """Read ``dialogues.jsonl`` and/or ``ipus.jsonl`` from a corpus directory.

    Records come back in file order.  With ``check_audio`` every referenced
    WAV must exist.
    """
    root = Path(path)
    dpath, ipath = root / "dialogues.jsonl", root / "ipus.jsonl"
    if not dpath.exists() and not ipath.exists():
        raise CorpusError(f"{root}: neither dialogues.jsonl nor ipus.jsonl present")
    dialogues: list[Dialogue] = []
    samples: list[IpuSample] = []
    if dpath.exists():
        dialogues = _read_jsonl(
            dpath, lambda o: Dialogue(str(o["id"]), [_utterance_from_json(u) for u in o.get("utterances", [])])
        )
        _check_unique((d.id for d in dialogues), "dialogue")
    if ipath.exists():
        samples = _read_jsonl(ipath, IpuSample.from_json)
        _check_unique((s.id for s in samples), "sample")
    if check_audio:
        refs = [s.audio_path for s in samples] + [u.audio_path for d in dialogues for u in d.utterances]
        for ref in refs:
            if ref is not None and not (root / ref).exists():
                raise CorpusError(f"missing audio file {ref}")
    return dialogues, samples


def _check_unique(ids: Iterable[str], what: str) -> None:
    seen = set()
    for i in ids:
        if i in seen:
            raise CorpusError(f"duplicate {what} id {i!r}")
        seen.add(i)


def save_corpus(path, dialogues: Sequence[Dialogue] = (), samples: Sequence[IpuSample] = ()) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "dialogues.jsonl", "w", encoding="utf-8") as fh:
        for d in dialogues:
            fh.write(_dumps(d.to_json()) + "\n")
    with open(root / "ipus.jsonl", "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(_dumps(s.to_json()) + "\n")


def read_wav(path) -> AudioClip:
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1:
            raise CorpusError(f"{path}: expected mono audio, got {w.getnchannels()} channels")
        if w.getsampwidth() != 2:
            raise CorpusError(f"{path}: expected 16-bit PCM, got {8 * w.getsampwidth()}-bit")
        if w.getframerate() != SAMPLE_RATE:
            raise CorpusError(f"{path}: sample rate {w.getframerate()} Hz not supported (need {SAMPLE_RATE})")
        raw = w.readframes(w.getnframes())
    pcm = np.frombuffer(raw, dtype="<i2")
    return AudioClip(pcm.astype(np.float64) / 32768.0, SAMPLE_RATE)


def write_wav(path, clip: AudioClip) -> None:
    pcm = np.clip(np.round(np.asarray(clip.samples) * 32768.0), -32768, 32767).astype("<i2")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(clip.sample_rate_hz)
        w.writeframes(pcm.tobytes())


# ---------------------------------------------------------------- segmentation


def _check_regions(regions: Sequence[tuple[int, int]], what: str) -> None:
    for s, e in regions:
        if e <= s:
            raise CorpusError(f"{what} region ({s}, {e}) is empty")
    for (s0, e0), (s1, e1) in zip(regions, regions[1:]):
        if s1 < s0:
            raise CorpusError(f"{what} regions are not sorted")
        if s1 < e0:
            raise CorpusError(f"{what} regions ({s0}, {e0}) and ({s1}, {e1}) overlap")


def merge_regions(regions: Sequence[tuple[int, int]], max_gap_ms: int = IPU_GAP_MS) -> list[tuple[int, int]]:
    """Merge speech regions whose separating silence is at most ``max_gap_ms``."""
    merged: list[list[int]] = []
    for s, e in regions:
        if merged and s - merged[-1][1] <= max_gap_ms:
            merged[-1][1] = max(merged[-1][1], e)
        else:
            merged.append([s, e])
    return [(s, e) for s, e in merged]


def extract_ipus(dialogue: Dialogue, customer_regions: Sequence[tuple[int, int]]) -> list[IpuSample]:
    """Group customer speech regions into unlabeled IPUs.

    A silence strictly longer than 200 ms closes an IPU.  Text is gathered
    from customer utterances overlapping the IPU; context is every other
    utterance that starts before the IPU, so a system prompt that the
    customer barges into is part of the context.  The previous turn is the latest-starting
    other utterance that began before the IPU.
    """
    regions = [(int(s), int(e)) for s, e in customer_regions]
    _check_regions(regions, "customer")
    out = []
    for k, (start, end) in enumerate(merge_regions(regions)):
        own = [u for u in dialogue.utterances if u.speaker == "customer" and u.start_ms < end and u.end_ms > start]
        text = tuple(tok for u in own for tok in u.text)
        prior = [u for u in dialogue.utterances if u.start_ms < start and u not in own]
        context = tuple((u.speaker, u.text) for u in prior)
        prev_end = max(prior, key=lambda u: (u.start_ms, u.end_ms)).end_ms if prior else None
        audio = next((u.audio_path for u in own if u.audio_path), None)
        out.append(
            IpuSample(
                id=f"{dialogue.id}_ipu{k:03d}",
                dialogue_id=dialogue.id,
                ipu_start_ms=start,
                ipu_end_ms=end,
                text=text,
                context=context,
                audio_path=audio,
                prev_turn_end_ms=prev_end,
            )
        )
    return out


def overlap_ms(a: tuple[int, int], b: tuple[int, int]) -> int:
    return max(0, min(a[1], b[1]) - max(a[0], b[0]))


def classify_scenario(ipu: IpuSample, robot_regions: Sequence[tuple[int, int]]) -> str:
    """Assign ``ipu`` to endpointing or barge-in, updating it in place.

    Returns ``"unclassifiable"`` (and leaves the sample untouched) when the
    IPU overlaps robot speech that started at or after the customer did.
    """
    regions = [(int(s), int(e)) for s, e in robot_regions]
    _check_regions(regions, "robot")
    span = (ipu.ipu_start_ms, ipu.ipu_end_ms)
    hits = [r for r in regions if overlap_ms(span, r) > 0]
    if not hits:
        ipu.scenario, ipu.robot_overlap_ms = "endpointing", 0
        return "endpointing"
    if ipu.ipu_start_ms <= hits[0][0]:
        return UNCLASSIFIABLE
    ipu.scenario = "bargein"
    ipu.robot_overlap_ms = sum(overlap_ms(span, r) for r in hits)
    return "bargein"


# ---------------------------------------------------------------- statistics


@dataclass
class CorpusStats:
    counts: dict[tuple[str, str], int]

    @property
    def proportions(self) -> dict[tuple[str, str], float]:
        totals = Counter()
        for (scn, _), n in self.counts.items():
            totals[scn] += n
        return {key: n / totals[key[0]] for key, n in self.counts.items()}

    def total(self, scenario: str) -> int:
        return sum(n for (scn, _), n in self.counts.items() if scn == scenario)

    def table(self) -> str:
        rows = []
        for (scn, lab), n in sorted(self.counts.items()):
            rows.append(f"{scn:12s} {lab:6s} {n:6d} {self.proportions[(scn, lab)]:.3f}")
        return "\n".join(rows)


def compute_stats(samples: Iterable[IpuSample]) -> CorpusStats:
    counts: Counter = Counter()
    for s in samples:
        if s.label is None:
            raise CorpusError(f"sample {s.id} is unlabeled")
        counts[(s.scenario, s.label)] += 1
    return CorpusStats(dict(counts))


def fleiss_kappa(ratings, raters: int) -> float:
    """Fleiss' kappa for an items x categories matrix of rater counts."""
    n = np.asarray(ratings, dtype=np.float64)
    if n.ndim != 2 or n.shape[0] < 1:
        raise ValueError("ratings must be a non-empty items x categories matrix")
    if raters < 2:
        raise ValueError("need at least two raters")
    if not np.all(n.sum(axis=1) == raters):
        raise ValueError(f"every item's counts must sum to {raters}")
    items = n.shape[0]
    p_item = ((n * n).sum(axis=1) - raters) / (raters * (raters - 1))
    p_bar = p_item.mean()
    p_cat = n.sum(axis=0) / (items * raters)
    pe_bar = float((p_cat * p_cat).sum())
    if pe_bar >= 1.0:
        raise ValueError("all ratings fall in one category; kappa is undefined")
    return float((p_bar - pe_bar) / (1.0 - pe_bar))


# ---------------------------------------------------------------- folds


def split_folds(samples: Sequence[IpuSample], k: int, seed: int) -> list[list[IpuSample]]:
    """Dialogue-level k-fold partition.

    Dialogues are shuffled with ``seed`` and each goes to the currently
    smallest fold, so fold sizes differ by at most the largest dialogue.
    """
    if k < 2:
        raise ValueError("need k >= 2 folds")
    by_dialogue: dict[str, list[IpuSample]] = defaultdict(list)
    for s in samples:
        by_dialogue[s.dialogue_id].append(s)
    ids = sorted(by_dialogue)
    if len(ids) < k:
        raise ValueError(f"only {len(ids)} dialogues for {k} folds")
    order = np.random.default_rng(seed).permutation(len(ids))
    sizes = [0] * k
    fold_of: dict[str, int] = {}
    for i in order:
        f = min(range(k), key=lambda j: (sizes[j], j))
        fold_of[ids[i]] = f
        sizes[f] += len(by_dialogue[ids[i]])
    folds: list[list[IpuSample]] = [[] for _ in range(k)]
    for s in samples:
        folds[fold_of[s.dialogue_id]].append(s)
    return folds


def split_dev(samples: Sequence[IpuSample], frac: float, seed: int) -> tuple[list[IpuSample], list[IpuSample]]:
    """Hold out roughly ``frac`` of the dialogues as a dev set."""
    ids = sorted({s.dialogue_id for s in samples})
    n_dev = max(1, int(round(frac * len(ids)))) if len(ids) > 1 else 0
    dev_ids = set(np.random.default_rng(seed).permutation(ids)[:n_dev].tolist())
    train = [s for s in samples if s.dialogue_id not in dev_ids]
    dev = [s for s in samples if s.dialogue_id in dev_ids]
    return train, dev
