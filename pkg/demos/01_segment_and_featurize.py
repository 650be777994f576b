"""From raw dialogue audio to inter-pausal units and 40x30 feature images.

Writes a tiny synthetic corpus, rebuilds the customer track of one dialogue,
runs the energy VAD on it, merges short pauses into IPUs, and prints the last
few feature rows of one IPU.

    python demos/01_segment_and_featurize.py
"""

import tempfile

import numpy as np

from turntaking import dsp
from turntaking.corpus import read_wav
from turntaking.harness.data import customer_track, segment_dialogue
from turntaking.synth import SynthConfig, synth_corpus

root = tempfile.mkdtemp(prefix="tt-demo-")
dialogues, samples, _ = synth_corpus(root, SynthConfig(n_endpointing=6, n_bargein=4), seed=0)
d = dialogues[0]
print(f"corpus in {root}: {len(dialogues)} dialogues, {len(samples)} labeled IPUs")

for u in d.utterances:
    print(f"  {u.speaker:8s} {u.start_ms:6d}-{u.end_ms:6d}  {' '.join(u.text)}")

track = customer_track(d, root)
regions = dsp.detect_speech_regions(track)
print(f"\nVAD regions on the customer track: {regions}")

kept, dropped = segment_dialogue(d, root)
for ipu in kept:
    print(f"  IPU {ipu.ipu_start_ms}-{ipu.ipu_end_ms} -> {ipu.scenario}")
print(f"  unclassifiable: {dropped}")

s = next(x for x in samples if x.dialogue_id == d.id and x.audio_path)
fm = dsp.extract_frame_matrix(read_wav(f"{root}/{s.audio_path}"), s.duration_ms)
np.set_printoptions(precision=2, suppress=True, linewidth=120)
print(f"\n{s.id} ({s.label}): {fm.valid_frames} real frames of {fm.values.shape[0]}")
print("last 5 frames, columns energy/f0/voiced/zcr:")
print(fm.values[-5:, :4])
