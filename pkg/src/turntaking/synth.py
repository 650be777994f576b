"""Synthetic customer-service dialogues with planted turn-taking cues.

Every labeled customer IPU carries three latent cues, one per modality, each
equal to the label unless flipped with probability ``modality_noise``:

* semantic (endpointing): the robot prompt before the answer is either a
  closed question that invites a short complete reply (switch-like) or an
  open request to describe something at length (hold-like).  The answer
  itself is neutral, so the cue lives in the context only.  In barge-in,
  switch-like text is a real answer and hold-like text is a backchannel.
* acoustic: a harmonic voiced waveform whose F0 and energy fall sharply
  over the final 500 ms for switch-like audio, and stays flat or
  rises for hold-like audio.  Barge-in hold-like audio is a quiet noise
  burst or hum.
* timing: in endpointing the silence after the robot question is short for
  switch-like and long for hold-like samples; in barge-in the gap is always
  zero, so the cue is speaking rate.

Hold-labeled endpointing IPUs are followed by a continuation utterance in the
dialogue timeline.  Ground truth goes to ``latent.jsonl``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .corpus import Dialogue, IpuSample, Utterance, classify_scenario, extract_ipus, save_corpus, write_wav
from .dsp import SAMPLE_RATE, AudioClip

PROMPTS = {
    "closed": [
        ["when", "can", "we", "deliver", "your", "package", "?"],
        ["is", "that", "all", "for", "today", "?"],
        ["where", "is", "the", "device", "installed", "?"],
        ["shall", "we", "send", "a", "technician", "?"],
    ],
    "open": [
        ["please", "describe", "the", "problem", "in", "detail"],
        ["tell", "me", "more", "about", "what", "happened"],
        ["go", "ahead", "and", "explain", "the", "issue"],
        ["walk", "me", "through", "your", "order", "history"],
    ],
}
CLOSERS = {
    "when": ["tomorrow", "tonight", "monday", "friday", "noon", "today", "weekend", "morning"],
    "where": ["home", "office", "downtown", "station", "airport", "store", "school", "garage"],
}
NEUTRAL = (
    "i we you it maybe probably please well so the a my our that this just can could would will "
    "think guess want need prefer like send bring be there come go get do okay sure actually really "
    "usually also then"
).split()
BACKCHANNEL = ["uh-huh", "mm", "yeah", "ok", "right", "hmm"]
GREETINGS = [["hello", "this", "is", "the", "service", "line"], ["hi", "thanks", "for", "calling"]]
ACKS = [["hello"], ["hi", "there"], ["yes"]]


@dataclass
class SynthConfig:
    n_endpointing: int = 3295
    n_bargein: int = 8254
    switch_ratio_endpointing: float = 0.744
    switch_ratio_bargein: float = 0.235
    modality_noise: float = 0.15
    exchanges_per_dialogue: int = 5
    write_audio: bool = True
    noise_sigma: float = 0.003

    def __post_init__(self):
        for name in ("switch_ratio_endpointing", "switch_ratio_bargein"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if not 0.0 <= self.modality_noise <= 0.5:
            raise ValueError("modality_noise must lie in [0, 0.5]")
        if self.n_endpointing < 0 or self.n_bargein < 0:
            raise ValueError("sample counts must be non-negative")
        if self.exchanges_per_dialogue < 1:
            raise ValueError("exchanges_per_dialogue must be >= 1")


@dataclass
class Latent:
    id: str
    label: str
    semantic_cue: str
    f0_slope_sign: int
    silence_ms: int
    speaking_rate: float
    flipped_modalities: list[str]

    def to_json(self) -> dict:
        return asdict(self)


def exact_labels(n: int, switch_ratio: float, rng: np.random.Generator) -> list[str]:
    """round(n * ratio) switch labels, the rest hold, in shuffled order."""
    n_switch = int(round(n * switch_ratio))
    labels = np.array(["switch"] * n_switch + ["hold"] * (n - n_switch))
    return [str(x) for x in labels[rng.permutation(n)]]


# ------------------------------------------------------------------ audio


def _harmonic(f0: np.ndarray, rng: np.random.Generator, n_harm: int = 5) -> np.ndarray:
    phase = 2 * np.pi * np.cumsum(f0) / SAMPLE_RATE + rng.uniform(0, 2 * np.pi)
    return sum(np.sin(k * phase) / k for k in range(1, n_harm + 1))


def _ramp(n: int, ramp: int = 160) -> np.ndarray:
    w = np.ones(n)
    r = min(ramp, n // 2)
    if r:
        w[:r] = np.linspace(0, 1, r)
        w[-r:] = np.linspace(1, 0, r)
    return w


def speech_audio(duration_ms: int, contour: str, rate: float, rng: np.random.Generator, amp: float = 0.3) -> np.ndarray:
    """Voiced waveform; ``contour`` in {fall, flat, rise} shapes the final 500 ms."""
    n = duration_ms * SAMPLE_RATE // 1000
    t = np.arange(n) / SAMPLE_RATE
    base = rng.uniform(110, 220)
    wobble = 0.03 * np.sin(2 * np.pi * rng.uniform(0.4, 1.2) * t + rng.uniform(0, 2 * np.pi))
    f0 = base * (1 + wobble)
    env = 0.6 + 0.4 * np.sin(np.pi * rate * t + rng.uniform(0, np.pi)) ** 2
    tail = min(n, SAMPLE_RATE // 2)
    prog = np.linspace(0, 1, tail)
    if contour == "fall":
        f0[-tail:] *= 1 - 0.4 * prog
        env[-tail:] *= 1 - 0.9 * prog
    elif contour == "rise":
        f0[-tail:] *= 1 + 0.25 * prog
    elif contour != "flat":
        raise ValueError(f"unknown contour {contour!r}")
    return amp * env * _harmonic(f0, rng) * _ramp(n)


def nonspeech_audio(duration_ms: int, rng: np.random.Generator) -> np.ndarray:
    """Quiet noise burst or hum, the acoustic face of a barge-in hold."""
    n = duration_ms * SAMPLE_RATE // 1000
    if rng.random() < 0.5:
        x = 0.03 * rng.normal(size=n)
    else:
        f0 = np.full(n, rng.uniform(100, 200))
        x = 0.04 * _harmonic(f0, rng)
    return x * _ramp(n)


# ------------------------------------------------------------------ text


def _answer_text(scenario: str, switch_like: bool, rng: np.random.Generator) -> list[str]:
    if scenario == "bargein" and not switch_like:
        return [str(x) for x in rng.choice(BACKCHANNEL, size=int(rng.integers(1, 3)))]
    lo, hi = (5, 15) if scenario == "endpointing" else (3, 10)
    body = [str(x) for x in rng.choice(NEUTRAL, size=int(rng.integers(lo, hi)))]
    kind = "when" if rng.random() < 0.5 else "where"
    return body + [str(rng.choice(CLOSERS[kind]))]


# ------------------------------------------------------------------ generation


@dataclass
class _Plan:
    label: str
    cues: dict
    flipped: list


def _plan(label: str, rho: float, rng: np.random.Generator) -> _Plan:
    cues, flipped = {}, []
    for m in ("semantic", "acoustic", "timing"):
        flip = rng.random() < rho
        cues[m] = (label == "switch") != flip
        if flip:
            flipped.append(m)
    return _Plan(label, cues, flipped)


def _dialogue(
    did: str, scenario: str, plans: list[_Plan], cfg: SynthConfig, rng: np.random.Generator
) -> tuple[Dialogue, list[IpuSample], list[Latent], dict[str, np.ndarray]]:
    utts: list[Utterance] = []
    t = 0
    greet = GREETINGS[int(rng.integers(len(GREETINGS)))]
    dur = int(rng.integers(1500, 2500))
    utts.append(Utterance("robot", t, t + dur, greet))
    t += dur + int(rng.integers(300, 600))
    ack = ACKS[int(rng.integers(len(ACKS)))]
    dur = int(rng.integers(400, 800))
    utts.append(Utterance("customer", t, t + dur, ack))
    t += dur
    pending = []
    for k, plan in enumerate(plans):
        if scenario == "endpointing":
            kind = "closed" if plan.cues["semantic"] else "open"
        else:
            kind = "closed" if rng.random() < 0.5 else "open"
        q = PROMPTS[kind][int(rng.integers(len(PROMPTS[kind])))]
        q_start = t + int(rng.integers(300, 800))
        q_end = q_start + int(rng.integers(1500, 2500))
        utts.append(Utterance("robot", q_start, q_end, q))
        text = _answer_text(scenario, plan.cues["semantic"], rng)
        if scenario == "endpointing":
            rate = float(rng.uniform(3.0, 5.0))
            silence = int(rng.integers(250, 701)) if plan.cues["timing"] else int(rng.integers(900, 1801))
            start = q_end + silence
        else:
            rate = float(rng.uniform(3.0, 5.0)) if plan.cues["timing"] else float(rng.uniform(1.0, 2.0))
            silence = 0
            start = q_end - int(rng.integers(200, min(1200, q_end - q_start - 300) + 1))
        duration = max(300, int(round(1000 * len(text) / rate)))
        end = start + duration
        if plan.cues["acoustic"]:
            contour, sign = "fall", -1
            audio = speech_audio(duration, contour, rate, rng)
        elif scenario == "bargein":
            sign = 0
            audio = nonspeech_audio(duration, rng)
        else:
            contour = "flat" if rng.random() < 0.5 else "rise"
            sign = 0 if contour == "flat" else 1
            audio = speech_audio(duration, contour, rate, rng)
        audio = audio + cfg.noise_sigma * rng.normal(size=audio.size)
        utt_index = len(utts)
        utts.append(Utterance("customer", start, end, text, None))
        pending.append((utt_index, plan, sign, silence, rate, audio))
        t = max(end, q_end)
        if scenario == "endpointing" and plan.label == "hold":
            c_start = end + int(rng.integers(300, 700))
            c_end = c_start + int(rng.integers(600, 1500))
            cont = [str(x) for x in rng.choice(NEUTRAL, size=2)] + [str(rng.choice(CLOSERS["when"] + CLOSERS["where"]))]
            utts.append(Utterance("customer", c_start, c_end, cont))
            t = c_end

    # audio paths need ids, which extract_ipus assigns; do a first pass for the ids
    dialogue = Dialogue(did, utts)
    regions = dialogue.regions("customer")
    ipus = extract_ipus(dialogue, regions)
    by_start = {s.ipu_start_ms: s for s in ipus}
    samples, latents, clips = [], [], {}
    for utt_index, plan, sign, silence, rate, audio in pending:
        u = utts[utt_index]
        s = by_start[u.start_ms]
        path = f"audio/{s.id}.wav"
        utts[utt_index] = Utterance(u.speaker, u.start_ms, u.end_ms, u.text, path)
        s.audio_path = path
        s.label = plan.label
        robot = dialogue.regions("robot")
        if classify_scenario(s, robot) != scenario:
            raise AssertionError(f"{s.id}: planned {scenario}, timeline says otherwise")
        samples.append(s)
        latents.append(
            Latent(
                s.id,
                plan.label,
                "switch" if plan.cues["semantic"] else "hold",
                sign,
                silence,
                round(rate, 6),
                plan.flipped,
            )
        )
        clips[path] = np.clip(audio, -1.0, 1.0)
    return Dialogue(did, utts), samples, latents, clips


def synth_corpus(out_dir, cfg: SynthConfig | None = None, seed: int = 0):
    """Write a synthetic corpus to ``out_dir``; returns (dialogues, samples, latents).

    Labels come in exact proportions.  Each dialogue draws from its own
    generator derived from ``(seed, scenario, index)``, so output is
    byte-identical for a fixed seed.
    """
    cfg = cfg or SynthConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dialogues, samples, latents = [], [], []
    for s_idx, (scenario, n, ratio) in enumerate(
        [
            ("endpointing", cfg.n_endpointing, cfg.switch_ratio_endpointing),
            ("bargein", cfg.n_bargein, cfg.switch_ratio_bargein),
        ]
    ):
        labels = exact_labels(n, ratio, np.random.default_rng([seed, s_idx]))
        per = cfg.exchanges_per_dialogue
        for d_idx in range(0, n, per):
            rng = np.random.default_rng([seed, s_idx, d_idx // per + 1])
            plans = [_plan(lab, cfg.modality_noise, rng) for lab in labels[d_idx : d_idx + per]]
            did = f"{'ep' if scenario == 'endpointing' else 'bi'}{d_idx // per:05d}"
            d, ss, lat, clips = _dialogue(did, scenario, plans, cfg, rng)
            dialogues.append(d)
            samples.extend(ss)
            latents.extend(lat)
            if cfg.write_audio:
                for path, x in clips.items():
                    write_wav(out / path, AudioClip(x))
    save_corpus(out, dialogues, samples)
    with open(out / "latent.jsonl", "w", encoding="utf-8") as fh:
        for lat in latents:
            fh.write(json.dumps(lat.to_json(), sort_keys=True) + "\n")
    return dialogues, samples, latents


def load_latents(path) -> dict[str, dict]:
    out = {}
    with open(Path(path), encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                out[obj["id"]] = obj
    return out
