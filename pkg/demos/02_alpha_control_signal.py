"""
Alpha power as a control signal
===============================

The simplest control signal is negated alpha band power at Pz, mapped so
that the calibration run spans roughly [-1, 1].  Relaxing lowers the value,
concentrating raises it.
"""

import numpy as np

from neuroloop import (
    Cs1Stream, SynthScenario, compute_cs1, design_band_filter, estimate_alpha_band,
    fit_calibration, generate_synthetic,
)
from neuroloop.dsp import raw_cs1

base = SynthScenario(seed=7, channel_set="EEG16", alpha_peak=10.5)

# %%
# Step 1: find the individual alpha peak from 30 s of eyes-closed rest.
eyes = generate_synthetic(base.replace(duration=30.0, schedule=[(0, 30, "Down")]))
alpha = estimate_alpha_band(eyes.channel("Pz"), eyes.sample_rate)
print(f"alpha peak {alpha.peak} Hz -> band {alpha.band.low}-{alpha.band.high} Hz")

sos = design_band_filter(alpha.band, eyes.sample_rate)
print("filter sections:", sos.shape[0])

# %%
# Step 2: a calibration run without feedback, relax then concentrate.
calib = generate_synthetic(base.replace(seed=8, duration=60.0,
                                        schedule=[(0, 30, "Down"), (30, 60, "Up")]))
raw = raw_cs1(calib, alpha)
cal = fit_calibration(raw.values)
print(f"calibration: gain {cal.gain:.4f}, offset {cal.offset:.3f}")

# %%
# Step 3: apply it to fresh data.  Blocks of 20 s alternate.
test = generate_synthetic(base.replace(
    seed=9, duration=80.0,
    schedule=[(0, 20, "Up"), (20, 40, "Down"), (40, 60, "Up"), (60, 80, "Down")]))
cs1 = compute_cs1(test, alpha, cal)
for a, b, cond in [(0, 20, "Up"), (20, 40, "Down"), (40, 60, "Up"), (60, 80, "Down")]:
    t = cs1.times
    sel = (t >= a + 5) & (t < b)
    print(f"{cond:>4} {a:2d}-{b:2d} s: mean control {cs1.values[sel].mean():+.2f}")

# %%
# The streaming version gives identical values when fed in arbitrary chunks.
stream = Cs1Stream(alpha, cal, test.sample_rate)
pz = test.channel("Pz")
rng = np.random.default_rng(0)
cuts = np.sort(rng.integers(0, pz.size, 40))
pieces = [stream.push(chunk) for chunk in np.split(pz, cuts)]
online = np.concatenate(pieces)
print("stream vs batch max difference:", np.abs(online - cs1.values).max())
