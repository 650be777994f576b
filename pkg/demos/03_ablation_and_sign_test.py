"""How much does each modality contribute, and is the difference significant?

Trains the full model and one ablation per modality on the same split and
seed, then compares each ablation with the full model using the paired sign
test over test samples.

    python demos/03_ablation_and_sign_test.py
"""

import tempfile

from turntaking.corpus import split_dev
from turntaking.harness import FeatureStore, fast_config, sign_test, train
from turntaking.synth import SynthConfig, synth_corpus

root = tempfile.mkdtemp(prefix="tt-demo-")
dialogues, samples, _ = synth_corpus(root, SynthConfig(n_endpointing=1500, n_bargein=0), seed=2)
rest, test = split_dev(samples, 0.2, 0)
tr, dev = split_dev(rest, 0.1, 1)
store = FeatureStore(root)
labels = [s.y for s in test]

runs = {}
for drop in (None, "semantic", "context", "acoustic", "timing"):
    model = train(fast_config(drop=drop), tr, dev, store, dialogues)
    metrics, _, pred = model.evaluate(model.prep.encode(test, store))
    runs[drop] = (metrics, pred)

full_metrics, full_pred = runs[None]
print(f"{'model':14s} {'macro-F1':>8s} {'full better':>11s} {'abl better':>10s} {'p':>8s}")
print(f"{'GMF':14s} {full_metrics.macro_f1:8.3f}")
for drop, (metrics, pred) in runs.items():
    if drop is None:
        continue
    t = sign_test(full_pred, pred, labels)
    print(f"{'w/o ' + drop:14s} {metrics.macro_f1:8.3f} {t.a_better:11d} {t.b_better:10d} {t.p_value:8.2g}")
