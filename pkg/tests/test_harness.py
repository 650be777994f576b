import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from turntaking.corpus import IpuSample, split_folds
from turntaking.harness import (
    FeatureStore,
    TrainConfig,
    TrainedModel,
    compute_metrics,
    fast_config,
    fit_preprocessor,
    from_confusion,
    sign_test,
    toy_config,
    train,
)
from turntaking.harness.experiment import (
    baseline_majority,
    baseline_random,
    cross_validate,
    run_ablation,
)
from turntaking.synth import SynthConfig, synth_corpus


def brute_force(y, p):
    """Per-class scores by looping over samples."""
    out = {}
    for cls in (0, 1):
        tp = sum(1 for a, b in zip(y, p) if a == cls and b == cls)
        pred = sum(1 for b in p if b == cls)
        true = sum(1 for a in y if a == cls)
        prec = tp / pred if pred else 0.0
        rec = tp / true if true else 0.0
        out[cls] = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    acc = sum(1 for a, b in zip(y, p) if a == b) / len(y)
    return acc, (out[0] + out[1]) / 2


class TestMetrics:
    def test_worked_confusion(self):
        m = from_confusion(tp=40, fn=10, fp=20, tn=30)
        assert m.accuracy == pytest.approx(0.7, abs=1e-12)
        assert m.per_class["switch"].f1 == pytest.approx(0.7273, abs=5e-5)
        assert m.per_class["hold"].f1 == pytest.approx(0.6667, abs=5e-5)
        assert m.macro_f1 == pytest.approx(0.6970, abs=5e-5)

    def test_perfect(self):
        m = compute_metrics([0, 1, 1, 0], [0, 1, 1, 0])
        assert (m.accuracy, m.macro_f1) == (1.0, 1.0)

    def test_degenerate_predictor(self):
        m = compute_metrics([1, 1, 1, 0], [1, 1, 1, 1])
        assert m.per_class["hold"].f1 == 0.0

    @given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=60))
    def test_matches_brute_force(self, pairs):
        y, p = zip(*pairs)
        m = compute_metrics(y, p)
        acc, macro = brute_force(y, p)
        assert m.accuracy == pytest.approx(acc, abs=1e-12)
        assert m.macro_f1 == pytest.approx(macro, abs=1e-12)
        assert m.tp + m.fn + m.fp + m.tn == len(y)

    def test_empty(self):
        with pytest.raises(ValueError):
            compute_metrics([], [])


class TestSignTest:
    def test_ten_nil(self):
        labels = np.ones(10, dtype=int)
        r = sign_test(np.ones(10), np.zeros(10), labels)
        oracle = 2 * math.comb(10, 0) * 0.5**10
        assert r.p_value == pytest.approx(oracle, rel=1e-12)
        assert r.p_value == pytest.approx(0.001953, abs=1e-6)
        assert (r.a_better, r.b_better, r.flagged) == (10, 0, False)

    def test_even_split(self):
        labels = np.ones(10, dtype=int)
        a = np.array([1] * 5 + [0] * 5)
        assert sign_test(a, 1 - a, labels).p_value == pytest.approx(1.0)

    def test_identical_predictions(self):
        r = sign_test([1, 0, 1], [1, 0, 1], [1, 1, 0])
        assert r.flagged and r.p_value == 1.0

    @settings(max_examples=40)
    @given(st.integers(0, 30), st.integers(0, 30), st.integers(0, 20))
    def test_matches_binomial_sum(self, a_only, b_only, ties):
        if a_only + b_only == 0:
            return
        labels = np.ones(a_only + b_only + ties, dtype=int)
        a = np.array([1] * a_only + [0] * b_only + [1] * ties)
        b = np.array([0] * a_only + [1] * b_only + [1] * ties)
        ours = sign_test(a, b, labels).p_value
        n, k = a_only + b_only, min(a_only, b_only)
        tail = sum(math.comb(n, i) for i in range(k + 1)) / 2**n
        ref = 1.0 if 2 * k == n else min(1.0, 2 * tail)
        assert ours == pytest.approx(ref, rel=1e-9)


def mk(i, label, dialogue=None):
    return IpuSample(
        id=f"s{i:04d}",
        dialogue_id=dialogue or f"d{i:04d}",
        ipu_start_ms=1000,
        ipu_end_ms=2000,
        scenario="endpointing",
        label=label,
        text=("a", "b"),
        prev_turn_end_ms=500,
    )


class TestBaselines:
    @pytest.mark.parametrize("p, macro", [(0.744, 0.4266), (0.765, 0.4334)])
    def test_majority_formula(self, p, macro):
        n = 1000
        k = round(p * n)
        ev = [mk(i, "switch") for i in range(k)] + [mk(i, "hold") for i in range(k, n)]
        m = baseline_majority(ev, ev)
        assert m.accuracy == pytest.approx(k / n)
        q = k / n
        assert m.macro_f1 == pytest.approx((2 * q / (q + 1)) / 2, abs=1e-12)
        assert m.macro_f1 == pytest.approx(macro, abs=5e-4)

    def test_majority_balanced(self):
        ev = [mk(i, "switch") for i in range(50)] + [mk(i, "hold") for i in range(50, 100)]
        assert baseline_majority(ev, ev).accuracy == 0.5

    def test_majority_uses_train_class(self):
        tr = [mk(i, "hold") for i in range(3)]
        ev = [mk(i, "switch") for i in range(4)]
        assert baseline_majority(tr, ev).accuracy == 0.0

    def test_random(self):
        ev = [mk(i, "switch" if i % 4 else "hold") for i in range(10_000)]
        m = baseline_random(ev, seed=0)
        assert abs(m.accuracy - 0.5) < 0.02
        assert baseline_random(ev, seed=0) == m


class TestConfig:
    def test_round_trip(self):
        cfg = fast_config(seed=4, drop="timing")
        assert TrainConfig.from_json(json.loads(json.dumps(cfg.to_json()))) == cfg

    @pytest.mark.parametrize(
        "bad",
        [{"tau": 0}, {"batch_size": 1}, {"fusion": "lstm"}, {"drop": "visual"}, {"encoder": {"depth": 3}}, {"k_folds": 1}],
    )
    def test_validation(self, bad):
        with pytest.raises(ValueError):
            TrainConfig(**bad)

    def test_unknown_key(self):
        with pytest.raises(ValueError):
            TrainConfig.from_json({"learning_rate": 0.1})

    def test_context_drop_is_data_only(self):
        cfg = TrainConfig(drop="context")
        assert cfg.effective_context_turns() == 0 and cfg.model_drop() is None


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    dialogues, samples, _ = synth_corpus(out, SynthConfig(n_endpointing=80, n_bargein=0, modality_noise=0.0), seed=1)
    return out, dialogues, samples


def quick_cfg(**kw):
    base = dict(epochs=2, k_folds=2, seed=0)
    base.update(kw)
    return toy_config(**base)


class TestData:
    def test_preprocessor_fits_train_only(self, corpus):
        _, _, samples = corpus
        tr = samples[:40]
        prep = fit_preprocessor(tr, 4, 3, 24)
        seen = {t for s in tr for t in s.text} | {t for s in tr for _, toks in s.context for t in toks}
        held_out = {t for s in samples[40:] for t in s.text} - seen
        assert all(t in prep.vocab for t in seen)
        assert not any(t in prep.vocab for t in held_out)

    def test_store_memo_and_round_trip(self, corpus, tmp_path):
        out, _, samples = corpus
        store = FeatureStore(out)
        v, n = store.get(samples[0])
        assert v.shape == (40, 30) and 0 < n <= 40
        assert store.get(samples[0])[0] is v
        store.save(tmp_path / "f.npz")
        other = FeatureStore(None)
        other.load(tmp_path / "f.npz")
        np.testing.assert_array_equal(other.get(samples[0])[0], v)

    def test_missing_audio_is_zero(self):
        v, n = FeatureStore(None).get(mk(0, "switch"))
        assert n == 0 and not v.any()


class TestTrain:
    def test_separable_toy_loss_decreases(self, corpus):
        out, dialogues, samples = corpus
        store = FeatureStore(out)
        tr = samples[:8]
        cfg = toy_config(epochs=5, batch_size=8, lr=1e-2)
        model = train(cfg, tr, samples[8:16], store)
        losses = [h["train_loss"] for h in model.history]
        assert len(losses) == 5
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_zero_epochs_is_initial_model(self, corpus):
        from turntaking.harness import build_model

        out, _, samples = corpus
        store = FeatureStore(out)
        cfg = toy_config(epochs=0)
        model = train(cfg, samples[:20], samples[20:30], store)
        fresh = build_model(cfg, model.prep)
        a, b = model.model.state_dict(), fresh.state_dict()
        for k in a:
            if k.endswith(("input_mean", "input_std")):
                continue
            np.testing.assert_array_equal(a[k], b[k])
        assert model.history == []

    def test_deterministic_and_checkpoint(self, corpus, tmp_path):
        out, dialogues, samples = corpus
        store = FeatureStore(out)
        cfg = toy_config(epochs=2, cl_enabled=True, aug_total=10, aug_per_batch=2)
        m1 = train(cfg, samples[:40], samples[40:60], store, dialogues)
        m2 = train(cfg, samples[:40], samples[40:60], store, dialogues)
        for k, v in m1.model.state_dict().items():
            np.testing.assert_array_equal(v, m2.model.state_dict()[k])
        m1.save(tmp_path / "m.npz")
        back = TrainedModel.load(tmp_path / "m.npz")
        enc = m1.prep.encode(samples[60:], store)
        np.testing.assert_array_equal(back.predict_proba(enc), m1.predict_proba(enc))
        assert any(h["cl"] is not None for h in m1.history)

    def test_rejects_augmented_dev(self, corpus):
        out, _, samples = corpus
        dev = [samples[0].__class__(**{**samples[0].__dict__, "augmented": True})]
        with pytest.raises(ValueError):
            train(toy_config(), samples[:10], dev, FeatureStore(out))

    def test_empty_split(self, corpus):
        out, _, samples = corpus
        with pytest.raises(ValueError):
            train(toy_config(), [], samples[:5], FeatureStore(out))


class TestCrossVal:
    def test_each_dialogue_evaluated_once(self, corpus):
        out, dialogues, samples = corpus
        r = cross_validate(quick_cfg(epochs=1), samples, FeatureStore(out), dialogues)
        seen = [i for f in r.folds for i in f.ids]
        assert sorted(seen) == sorted(s.id for s in samples)
        s = r.summary()
        assert s["macro_f1_mean"] == pytest.approx(np.mean([f.metrics.macro_f1 for f in r.folds]), abs=1e-12)

    def test_two_dialogues_two_folds(self, corpus):
        out, dialogues, samples = corpus
        two = {samples[0].dialogue_id, samples[-1].dialogue_id}
        sub = [s for s in samples if s.dialogue_id in two]
        folds = split_folds(sub, 2, 0)
        assert sorted({s.dialogue_id for f in folds for s in f}) == sorted(two)
        assert all(len({s.dialogue_id for s in f}) == 1 for f in folds)

    def test_results_json_is_reproducible(self, corpus, tmp_path):
        out, dialogues, samples = corpus
        cfg = quick_cfg(epochs=1)
        for name in ("a", "b"):
            cross_validate(cfg, samples, FeatureStore(out), dialogues, corpus_hash="h").write(tmp_path / f"{name}.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
        obj = json.loads((tmp_path / "a.json").read_text())
        assert obj["config"] == cfg.to_json() and obj["corpus_hash"] == "h"

    def test_ablation_key(self, corpus):
        out, dialogues, samples = corpus
        with pytest.raises(ValueError):
            run_ablation(quick_cfg(), samples, FeatureStore(out), "visual", dialogues)
