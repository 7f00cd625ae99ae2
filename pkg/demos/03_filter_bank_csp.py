"""
Filter-bank CSP decoder
=======================

Train an EEG-only decoder (CS2) on two short sessions and check how well it
separates the conditions of a third.  Then add EMG channels and see what the
combined decoder (CS4) picks.
"""

import numpy as np

from neuroloop import (
    DecoderModel, SynthScenario, decode_stream, generate_synthetic, make_filter_bank,
    train_csp, train_model,
)
from neuroloop.decoder import csp_ratio, epoch_outputs, TrainingSet, train_cs4
from neuroloop.protocol import EXPERIMENT_DEFAULTS

bank = make_filter_bank()
print(f"{len(bank)} bands, {bank[0].low}-{bank[0].high} Hz up to {bank[-1].low}-{bank[-1].high} Hz")

schedule = [(0, 40, "Up"), (40, 80, "Down"), (80, 120, "Up"), (120, 160, "Down")]
base = SynthScenario(duration=160.0, schedule=schedule, **EXPERIMENT_DEFAULTS)
train = [generate_synthetic(base.replace(seed=s)) for s in (1, 2)]
held_out = generate_synthetic(base.replace(seed=3))

# %%
# CSP on its own: one band, class covariances, the two extreme filters.
tset = TrainingSet.from_recording(train[0], "EEG")
alpha_idx = [b.center for b in tset.bands].index(10)
covs = tset.covs[alpha_idx]
up = covs[tset.labels > 0].mean(axis=0)
down = covs[tset.labels < 0].mean(axis=0)
# Alpha drops in every direction during Up phases, so both ratios are below
# one.  The second filter is the one that shrinks the most.
for f in train_csp(up, down):
    print(f"10 Hz filter: Up/Down variance ratio {csp_ratio(f.weights, up, down):7.3f}")

# %%
# The full model ranks every (band, filter) pair by mutual information with
# the labels, keeps five and fits a linear map.
cs2 = train_model(train, "EEG")
for feat in cs2.features:
    print(f"  {feat.band.center:4.0f} Hz  {feat.source_set.value}")
print("weights", np.round(cs2.weights, 3), "bias", round(cs2.bias, 3))


def accuracy(model: DecoderModel, rec) -> float:
    sets = {m: TrainingSet.from_recording(rec, m) for m in model.channels}
    out = epoch_outputs(model, sets)
    labels = next(iter(sets.values())).labels
    return float(np.mean(np.sign(out) == labels))


print(f"CS2 held-out epoch accuracy: {accuracy(cs2, held_out):.2f}")

# %%
# EEG and EMG are ranked separately; the combined model keeps the best three
# EEG features and the best two EMG features, then refits the weights.
cs4 = train_cs4(train)
print("CS4 features:", [(f.band.center, f.source_set.value) for f in cs4.features])
print(f"CS4 held-out epoch accuracy: {accuracy(cs4, held_out):.2f}")

# %%
# Models serialize to JSON and decode a continuous stream at 16 values/s.
again = DecoderModel.from_json(cs4.to_json())
series = decode_stream(again, held_out)
print(f"{len(series)} control values from {series.start} s, range "
      f"[{series.values.min():+.2f}, {series.values.max():+.2f}]")
