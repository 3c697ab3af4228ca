"""Where do unseen classes land?

The classifier is trained on 9 classes with BPSK and QAM16 held out. The
held-out frames are then pushed through the feature extractor and each one
looks at its 10 nearest labeled neighbors. The affinity table shows which
known classes the unseen ones resemble.

    python3 demos/04_holdout.py            # a few minutes
    python3 demos/04_holdout.py --quick    # smoke run: too small to separate classes
"""

import argparse

from sigident.bootstrap import HoldoutConfig, holdout_experiment
from sigident.nn import TrainConfig
from sigident.synth import DatasetConfig, build_dataset

ap = argparse.ArgumentParser()
ap.add_argument("--quick", action="store_true")
args = ap.parse_args()
per, epochs, per_eval = (20, 5, 10) if args.quick else (100, 30, 40)

snrs = (10, 12, 14, 16, 18)
train_set = build_dataset(DatasetConfig(snr_grid=snrs, frames_per_combo=per), seed=0)
eval_set = build_dataset(DatasetConfig(snr_grid=snrs, frames_per_combo=per_eval), seed=1)

res = holdout_experiment(train_set, eval_set, HoldoutConfig(("BPSK", "QAM16")),
                         config=TrainConfig(max_epochs=epochs))
rep = res["report"]
print(f"trained on: {', '.join(rep['train_classes'])}")
print(f"accuracy on the 9 known classes: {rep['accuracy']:.3f}")
for name, table in rep["affinity"].items():
    ranked = sorted(table.items(), key=lambda kv: -kv[1])
    print(f"\n{name} (never seen in training), share of 10 nearest neighbors:")
    for cls, share in ranked:
        print(f"  {cls:7s} {share:.3f} " + "#" * int(round(share * 40)))

bpsk = rep["affinity"]["BPSK"]
print(f"\nBPSK mass on QPSK + 8PSK: {bpsk['QPSK'] + bpsk['8PSK']:.3f}")
print(f"QAM16 top neighbor: {rep['top_neighbor']['QAM16']}")
