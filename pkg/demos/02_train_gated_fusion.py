"""Train the gated fusion model on a synthetic endpointing task.

Every modality carries a noisy cue for the label.
A dialogue-level split keeps test dialogues unseen during training; the
reduced ``fast_config`` model needs a few seconds per epoch on one core.

    python demos/02_train_gated_fusion.py
"""

import tempfile

from turntaking.corpus import split_dev
from turntaking.harness import FeatureStore, fast_config, train
from turntaking.harness.experiment import baseline_majority
from turntaking.synth import SynthConfig, synth_corpus

root = tempfile.mkdtemp(prefix="tt-demo-")
dialogues, samples, _ = synth_corpus(root, SynthConfig(n_endpointing=1500, n_bargein=0), seed=1)
rest, test = split_dev(samples, 0.2, 0)
tr, dev = split_dev(rest, 0.1, 1)
print(f"train {len(tr)}  dev {len(dev)}  test {len(test)}")

store = FeatureStore(root)
model = train(fast_config(), tr, dev, store, dialogues, log=print)
metrics, proba, _ = model.evaluate(model.prep.encode(test, store))
majority = baseline_majority(tr, test)

print(f"\nbest epoch {model.best_epoch}")
print(f"GMF       accuracy {metrics.accuracy:.3f}  macro-F1 {metrics.macro_f1:.3f}")
print(f"majority  accuracy {majority.accuracy:.3f}  macro-F1 {majority.macro_f1:.3f}")
print(f"per class: { {k: round(v.f1, 3) for k, v in metrics.per_class.items()} }")
