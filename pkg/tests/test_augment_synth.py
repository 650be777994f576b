import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from turntaking import nn
from turntaking.augment import (
    assemble_cl_batch,
    build_augmented_pool,
    construct_bargein_overlap,
    dropout_views,
    ensure_not_augmented,
    truncate_endpointing,
)
from turntaking.corpus import CorpusError, IpuSample, Utterance, classify_scenario, load_corpus, read_wav
from turntaking.dsp import extract_frame_matrix
from turntaking.synth import CLOSERS, PROMPTS, SynthConfig, exact_labels, load_latents, synth_corpus


def answer(n_tokens=12, start=5000, dur=3000, label="switch", **kw):
    return IpuSample(
        id="d0_ipu001",
        dialogue_id="d0",
        ipu_start_ms=start,
        ipu_end_ms=start + dur,
        scenario="endpointing",
        label=label,
        text=tuple(f"w{i}" for i in range(n_tokens)),
        audio_path="audio/d0_ipu001.wav",
        prev_turn_end_ms=4500,
        **kw,
    )


QUESTION = Utterance("robot", 2500, 4500, ("when", "?"))


class TestTruncation:
    @given(st.integers(1, 40), st.integers(300, 9000))
    def test_keeps_ceil_seventy_percent(self, n, dur):
        out = truncate_endpointing(answer(n, dur=dur))
        if n <= 10:
            assert out is None
            return
        assert len(out.text) == math.ceil(0.7 * n)
        assert out.text == answer(n).text[: len(out.text)]
        assert out.label == "hold" and out.augmented
        assert out.ipu_start_ms == 5000
        assert out.duration_ms == round(0.7 * dur)

    def test_eleven_tokens_is_the_threshold(self):
        assert truncate_endpointing(answer(10)) is None
        assert len(truncate_endpointing(answer(11)).text) == 8

    def test_rejects_hold_source(self):
        with pytest.raises(ValueError):
            truncate_endpointing(answer(label="hold"))


class TestBargeinConstruction:
    @given(st.integers(1, 3000))
    def test_overlap_invariants(self, shift):
        a = answer()
        gap = a.ipu_start_ms - QUESTION.end_ms
        ok = gap < shift < a.ipu_start_ms - QUESTION.start_ms
        if not ok:
            with pytest.raises(ValueError):
                construct_bargein_overlap(QUESTION, a, shift)
            return
        out = construct_bargein_overlap(QUESTION, a, shift)
        assert out.robot_overlap_ms > 0
        assert out.scenario == "bargein" and out.label == "switch" and out.augmented
        assert out.duration_ms == a.duration_ms
        # classify_scenario agrees with the constructed overlap
        probe = IpuSample(out.id, "d0", out.ipu_start_ms, out.ipu_end_ms)
        assert classify_scenario(probe, [(QUESTION.start_ms, QUESTION.end_ms)]) == "bargein"
        assert probe.robot_overlap_ms == out.robot_overlap_ms

    def test_example_overlap(self):
        out = construct_bargein_overlap(QUESTION, answer(), 800)
        assert (out.ipu_start_ms, out.robot_overlap_ms) == (4200, 300)
        assert out.prev_turn_end_ms == 4500


class TestClBatch:
    def test_layout(self):
        clb = assemble_cl_batch([1, 1, 0], [0, 0, 0, 0], 2, np.random.default_rng(0))
        assert len(clb.pool_rows) == 2
        np.testing.assert_array_equal(clb.labels[:3], [1, 1, 0])
        assert clb.neg_mask.shape == (5, 5)
        np.testing.assert_array_equal(clb.anchors, np.arange(5))

    def test_single_class_batch_has_no_anchor(self):
        clb = assemble_cl_batch([1, 1, 1], [], 4)
        assert clb.anchors.size == 0 and clb.excluded == 3

    @given(st.lists(st.integers(0, 1), min_size=1, max_size=20), st.lists(st.integers(0, 1), max_size=10), st.integers(0, 5))
    def test_negatives_are_opposite_labels(self, batch, pool, k):
        clb = assemble_cl_batch(batch, pool, k, np.random.default_rng(1))
        lab = clb.labels
        np.testing.assert_array_equal(clb.neg_mask, lab[:, None] != lab[None, :])
        assert clb.excluded + clb.anchors.size == lab.size
        assert len(clb.pool_rows) == min(k, len(pool))

    def test_dropout_views_differ_and_are_seeded(self):
        r = nn.Tensor(np.ones((4, 16)))
        a1, b1 = dropout_views(r, 0.5, (1, 2))
        a2, _ = dropout_views(r, 0.5, (1, 3))
        assert not np.array_equal(a1.data, b1.data)
        np.testing.assert_array_equal(a1.data, a2.data)


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    cfg = SynthConfig(n_endpointing=60, n_bargein=40)
    dialogues, samples, latents = synth_corpus(out, cfg, seed=3)
    return out, dialogues, samples, latents


class TestSynth:
    def test_exact_label_counts(self):
        labels = exact_labels(3295, 0.744, np.random.default_rng(0))
        assert labels.count("switch") == round(3295 * 0.744)
        assert all(isinstance(x, str) for x in labels)

    def test_counts_and_ratios(self, small_corpus):
        _, _, samples, _ = small_corpus
        ep = [s for s in samples if s.scenario == "endpointing"]
        bi = [s for s in samples if s.scenario == "bargein"]
        assert len(ep) == 60 and len(bi) == 40
        assert sum(s.label == "switch" for s in ep) == round(60 * 0.744)
        assert sum(s.label == "switch" for s in bi) == round(40 * 0.235)
        assert all(s.robot_overlap_ms > 0 for s in bi)

    def test_round_trip_and_audio(self, small_corpus):
        out, dialogues, samples, _ = small_corpus
        d2, s2 = load_corpus(out, check_audio=True)
        assert [s.to_json() for s in s2] == [s.to_json() for s in samples]
        assert len(d2) == len(dialogues)
        clip = read_wav(out / samples[0].audio_path)
        assert abs(clip.duration_ms - samples[0].duration_ms) <= 1

    def test_deterministic(self, small_corpus, tmp_path):
        out, _, samples, _ = small_corpus
        synth_corpus(tmp_path, SynthConfig(n_endpointing=60, n_bargein=40), seed=3)
        assert (tmp_path / "ipus.jsonl").read_bytes() == (out / "ipus.jsonl").read_bytes()
        first = samples[0].audio_path
        assert (tmp_path / first).read_bytes() == (out / first).read_bytes()

    def test_planted_cues(self, small_corpus):
        out, _, samples, _ = small_corpus
        lat = load_latents(out / "latent.jsonl")
        closed = {" ".join(p) for p in PROMPTS["closed"]}
        for s in samples:
            z = lat[s.id]
            if s.scenario == "endpointing":
                prompt = " ".join(s.context[-1][1])
                assert (prompt in closed) == (z["semantic_cue"] == "switch")
                assert s.text[-1] in CLOSERS["when"] + CLOSERS["where"]
                gap = s.ipu_start_ms - s.prev_turn_end_ms
                assert gap == z["silence_ms"]
                expected = (s.label == "switch") != ("timing" in z["flipped_modalities"])
                assert (gap <= 700) == expected
            flipped = set(z["flipped_modalities"])
            assert (z["semantic_cue"] == s.label) != ("semantic" in flipped)

    def test_falling_pitch_is_recoverable(self, small_corpus):
        out, _, samples, _ = small_corpus
        lat = load_latents(out / "latent.jsonl")
        for s in samples:
            sign = lat[s.id]["f0_slope_sign"]
            if sign == 0 or s.duration_ms < 1500:
                continue
            fm = extract_frame_matrix(read_wav(out / s.audio_path), s.duration_ms)
            f0 = fm.values[:, 1]
            voiced = fm.values[:, 2] > 0
            tail, body = f0[-8:][voiced[-8:]], f0[-20:-10][voiced[-20:-10]]
            if len(tail) and len(body):
                assert np.sign(tail.mean() - body.mean()) == sign

    def test_bargein_context_includes_interrupted_prompt(self, small_corpus):
        _, _, samples, _ = small_corpus
        for s in samples:
            if s.scenario == "bargein":
                assert s.context[-1][0] == "robot"

    def test_rejects_bad_ratio(self):
        with pytest.raises(ValueError):
            SynthConfig(switch_ratio_endpointing=1.0)


class TestPool:
    def test_endpointing_pool(self, small_corpus):
        _, dialogues, samples, _ = small_corpus
        ep = [s for s in samples if s.scenario == "endpointing"]
        pool = build_augmented_pool("endpointing", ep, dialogues, 5, np.random.default_rng(0))
        assert 0 < len(pool) <= 5
        assert all(p.label == "hold" and p.augmented and p.id.endswith("_trunc") for p in pool)

    def test_bargein_pool(self, small_corpus):
        _, dialogues, samples, _ = small_corpus
        pool = build_augmented_pool("bargein", samples, dialogues, 6, np.random.default_rng(0))
        assert len(pool) == 6
        for p in pool:
            assert p.scenario == "bargein" and p.label == "switch" and p.robot_overlap_ms > 0

    def test_guard(self, small_corpus):
        _, dialogues, samples, _ = small_corpus
        pool = build_augmented_pool("endpointing", samples, dialogues, 2, np.random.default_rng(0))
        with pytest.raises(CorpusError):
            ensure_not_augmented(samples[:3] + pool)
