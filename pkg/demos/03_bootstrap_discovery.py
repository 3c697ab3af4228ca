"""Supervised bootstrap features and blind class discovery.

A small CNN classifier is trained on labeled high-SNR frames. Its softmax
layer is then dropped and the 128-wide penultimate activations become the
representation. t-SNE maps them to 2-D and DBSCAN looks for clusters
without using the labels; the labels come back only to score the result.

    python3 demos/03_bootstrap_discovery.py            # a few minutes
    python3 demos/03_bootstrap_discovery.py --quick    # smoke run: too small to separate classes
"""

import argparse
from pathlib import Path

import numpy as np

from sigident.bootstrap import accuracy_by_snr, feature_matrix, train_classifier
from sigident.clustering import DbscanConfig, discovery_report, per_class_purity
from sigident.embedding import TsneConfig
from sigident.nn import TrainConfig
from sigident.pipeline import plot_embedding
from sigident.synth import MODULATIONS, DatasetConfig, build_dataset

ap = argparse.ArgumentParser()
ap.add_argument("--quick", action="store_true")
args = ap.parse_args()
per, epochs, per_eval = (20, 5, 10) if args.quick else (100, 30, 40)

snrs = (10, 12, 14, 16, 18)
train_set = build_dataset(DatasetConfig(snr_grid=snrs, frames_per_combo=per), seed=0)
eval_set = build_dataset(DatasetConfig(snr_grid=snrs, frames_per_combo=per_eval), seed=1)

model, hist = train_classifier(train_set, config=TrainConfig(max_epochs=epochs))
acc = accuracy_by_snr(model, eval_set)
print(f"accuracy {acc.overall:.3f} (chance {1 / 11:.3f}); by SNR:",
      " ".join(f"{s:+d}:{a:.2f}" for s, a in acc.by_snr.items()))

# rows are true classes, columns predictions; the PSK and QAM pairs are
# where most of the confusion sits
print("confusion (rows true):")
print("        " + " ".join(f"{n[:5]:>5s}" for n in MODULATIONS))
for name, row in zip(MODULATIONS, acc.confusion):
    print(f"{name:7s} " + " ".join(f"{v:5d}" for v in row))

fm = feature_matrix(model, eval_set)
res = discovery_report(fm, TsneConfig(perplexity=30 if not args.quick else 15, seed=0), DbscanConfig())
rep = res.report
print(f"\nDBSCAN eps {res.eps:.3f}: {rep.discovered_cluster_count} clusters, purity {rep.purity:.3f}, "
      f"ARI {rep.ari:.3f}, noise {rep.noise_fraction:.3f}")
for c, cl_ids in sorted({v: [k for k, m in rep.mapping.items() if m == v] for v in rep.mapping.values()}.items()):
    print(f"  {MODULATIONS[c]:7s} <- clusters {cl_ids}")
pcp = per_class_purity(res.clusters, fm.labels)
print("per-class purity:", ", ".join(f"{MODULATIONS[c]} {v:.2f}" for c, v in pcp.items()))

out = Path(__file__).with_name("out")
out.mkdir(exist_ok=True)
(out / "bootstrap_classes.svg").write_text(plot_embedding(res.embedding, title="bootstrap features, t-SNE"))
(out / "bootstrap_clusters.svg").write_text(
    plot_embedding(res.embedding, res.clusters, "bootstrap features, DBSCAN", rep.mapping))
print(f"wrote {out}/bootstrap_classes.svg and bootstrap_clusters.svg")
print(f"noise points: {int(np.sum(res.clusters < 0))}")
