"""A tour of the synthetic I/Q dataset.

Builds a small dataset, checks the per-frame power normalization, and shows
how the channel degrades a QPSK constellation as SNR drops. Writes two SVG
scatters next to this script (constellation at high and low SNR).

    python3 demos/01_dataset_tour.py
"""

from pathlib import Path

import numpy as np

from sigident.plot import scatter_svg
from sigident.synth import MODULATIONS, DatasetConfig, build_dataset

out = Path(__file__).with_name("out")
out.mkdir(exist_ok=True)

# 11 classes x 2 SNRs x 20 frames; each frame is a (2, 128) I/Q array
ds = build_dataset(DatasetConfig(snr_grid=(-10, 18), frames_per_combo=20), seed=0)
print(f"{len(ds)} frames, frame shape {ds.frames.shape[1:]}, classes: {', '.join(MODULATIONS)}")

# every frame is scaled to unit mean power, whatever the SNR
power = np.mean(ds.frames[:, 0] ** 2 + ds.frames[:, 1] ** 2, axis=1)
print(f"mean power per frame: min {power.min():.4f} max {power.max():.4f}")

# simple per-class statistics at +18 dB: amplitude spread separates
# constant-envelope classes (PSK/FSK/FM) from QAM, PAM and AM
hi = ds.filter(min_snr=18)
print("\nclass    amplitude std   mean |phase step|")
for c, name in enumerate(MODULATIONS):
    f = hi.frames[hi.labels == c]
    z = f[:, 0] + 1j * f[:, 1]
    amp = np.abs(z)
    dphi = np.abs(np.angle(z[:, 1:] * np.conj(z[:, :-1])))
    print(f"{name:7s}  {amp.std(axis=1).mean():13.3f}   {dphi.mean():.3f}")

# QPSK samples in the I/Q plane at the two SNRs
qpsk = MODULATIONS.index("QPSK")
for snr in (18, -10):
    sel = (ds.labels == qpsk) & (ds.snrs == snr)
    iq = ds.frames[sel].transpose(0, 2, 1).reshape(-1, 2)
    path = out / f"qpsk_{snr:+d}dB.svg"
    path.write_text(scatter_svg(iq, title=f"QPSK samples at {snr:+d} dB"))
    print(f"wrote {path}")
