"""Unsupervised map: convolutional autoencoder codes -> t-SNE -> DBSCAN.

Trains the denoising autoencoder on high-SNR frames of all 11 classes,
embeds the 30-wide codes of a held-out evaluation set and scores the
clusters. The analog classes (WBFM, AM-DSB, AM-SSB) tend to separate well;
the linear digital classes overlap heavily without labels.

    python3 demos/02_autoencoder_map.py            # a few minutes
    python3 demos/02_autoencoder_map.py --quick    # smoke run: too small to separate classes
"""

import argparse
from pathlib import Path

from sigident.autoencoder import PRESETS, encode, train_convae
from sigident.clustering import DbscanConfig, discovery_report, restricted_purity
from sigident.embedding import TsneConfig
from sigident.features import FeatureMatrix
from sigident.nn import TrainConfig
from sigident.pipeline import plot_embedding
from sigident.synth import ANALOG, DatasetConfig, build_dataset, class_id

ap = argparse.ArgumentParser()
ap.add_argument("--quick", action="store_true")
args = ap.parse_args()
per, epochs, per_eval = (20, 5, 10) if args.quick else (100, 30, 40)

snrs = (10, 12, 14, 16, 18)
train_set = build_dataset(DatasetConfig(snr_grid=snrs, frames_per_combo=per), seed=0)
eval_set = build_dataset(DatasetConfig(snr_grid=snrs, frames_per_combo=per_eval), seed=1)

model, hist = train_convae(train_set, PRESETS["convae1"], TrainConfig(max_epochs=epochs))
print(f"validation MSE: untrained {hist.baseline_val_loss:.4f}, best {hist.best_val_loss:.4f} "
      f"(epoch {hist.best_epoch})")

codes = encode(model, eval_set.frames)
fm = FeatureMatrix.from_dataset(codes, eval_set)
print(f"codes: {codes.shape}")

res = discovery_report(fm, TsneConfig(perplexity=30 if not args.quick else 15, seed=0), DbscanConfig())
rep = res.report
analog = [class_id(n) for n in ANALOG]
print(f"DBSCAN eps {res.eps:.3f}: {rep.discovered_cluster_count} clusters, purity {rep.purity:.3f}, "
      f"ARI {rep.ari:.3f}, noise {rep.noise_fraction:.3f}")
print(f"purity restricted to {', '.join(ANALOG)}: {restricted_purity(res.clusters, fm.labels, analog):.3f}")

out = Path(__file__).with_name("out")
out.mkdir(exist_ok=True)
(out / "convae_classes.svg").write_text(plot_embedding(res.embedding, title="autoencoder codes, t-SNE"))
(out / "convae_clusters.svg").write_text(
    plot_embedding(res.embedding, res.clusters, "autoencoder codes, DBSCAN", rep.mapping))
print(f"wrote {out}/convae_classes.svg and convae_clusters.svg")
