"""Supervised bootstrap features.

A small CNN is trained to classify modulations (optionally with some classes
withheld). Dropping its logit layer leaves a ``dense_units``-wide ReLU layer
whose activations serve as the representation for every class, including
classes the classifier never saw.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .autoencoder import INPUT_SHAPE, as_input
from .features import FeatureMatrix
from .nn import Conv2D, Dense, Dropout, Network, TrainConfig, TrainHistory, train
from .synth import MODULATIONS, Dataset, class_id

DEFAULT_HOLDOUT = ("BPSK", "QAM16")


@dataclass(frozen=True)
class ClassifierSpec:
    conv1_filters: int = 64
    conv1_kernel: tuple = (1, 3)
    conv2_filters: int = 16
    conv2_kernel: tuple = (2, 3)
    dense_units: int = 128
    dropout_rate: float = 0.5
    n_classes: int = 11

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if min(self.conv1_filters, self.conv2_filters, self.dense_units) < 1:
            raise ValueError("filter and unit counts must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("conv1_kernel", "conv2_kernel"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


FULL_SCALE = ClassifierSpec(conv1_filters=256, conv2_filters=80, dense_units=256)


def build_classifier(spec: ClassifierSpec | None = None, seed: int = 0, dtype=np.float32) -> Network:
    """conv -> conv -> dense(ReLU) -> dense(logits), dropout after each hidden stage."""
    spec = spec or ClassifierSpec()
    layers = [
        Conv2D(spec.conv1_filters, spec.conv1_kernel, "same", "relu"),
        Dropout(spec.dropout_rate),
        Conv2D(spec.conv2_filters, spec.conv2_kernel, "valid", "relu"),
        Dropout(spec.dropout_rate),
        Dense(spec.dense_units, "relu"),
        Dropout(spec.dropout_rate),
        Dense(spec.n_classes, "linear"),
    ]
    meta = {"feature_layer": 4, "conv_layer": 2, "spec": spec.to_dict()}
    return Network(layers, INPUT_SHAPE, seed=seed, dtype=dtype, role="bootstrap", meta=meta)


@dataclass(frozen=True)
class HoldoutConfig:
    held_out: tuple = ()

    def __post_init__(self):
        names = tuple(sorted(set(self.held_out), key=class_id))
        object.__setattr__(self, "held_out", names)
        if len(MODULATIONS) - len(names) < 2:
            raise ValueError("at least two classes must remain for training")

    def retained(self, available) -> list[int]:
        """Sorted global ids of available classes that are not held out."""
        drop = {class_id(n) for n in self.held_out}
        return sorted(int(c) for c in set(np.asarray(available).tolist()) - drop)


def train_classifier(dataset: Dataset, holdout: HoldoutConfig | None = None,
                     spec: ClassifierSpec | None = None, config: TrainConfig | None = None,
                     seed: int | None = None) -> tuple[Network, TrainHistory]:
    """Cross-entropy training on retained classes only.

    Held-out examples are dropped before the validation split, so they can
    never influence an update. Labels are remapped to ``0..K-1``; the global
    class ids are kept in ``meta["train_classes"]``.
    """
    holdout = holdout or HoldoutConfig()
    config = config or TrainConfig()
    retained = holdout.retained(dataset.labels)
    if len(retained) < 2:
        raise ValueError(f"need >= 2 retained classes with examples, got {len(retained)}")
    spec = replace(spec or ClassifierSpec(), n_classes=len(retained))
    mask = np.isin(dataset.labels, retained)
    remap = np.full(256, -1, dtype=np.int64)
    remap[retained] = np.arange(len(retained))
    x = as_input(dataset.frames[mask])
    y = remap[dataset.labels[mask]]
    model = build_classifier(spec, seed=config.seed if seed is None else seed, dtype=config.dtype)
    history = train(model, x, y, loss="xent", config=config)
    model.meta.update(
        train_classes=[MODULATIONS[c] for c in retained],
        held_out=list(holdout.held_out),
        train=config.to_dict(),
    )
    return model, history


def trained_class_ids(model: Network) -> np.ndarray:
    """Global class id of each logit (an untrained model covers the first K classes)."""
    names = model.meta.get("train_classes") or MODULATIONS[: model.output_shape[0]]
    return np.array([class_id(n) for n in names], dtype=np.int64)


def predict_classes(model: Network, frames) -> np.ndarray:
    """Arg-max predictions as global class ids."""
    logits = model.predict(as_input(frames))
    return trained_class_ids(model)[np.argmax(logits, axis=1)]


def extract_features(model: Network, frames, conv_maps: bool = False) -> np.ndarray:
    """Penultimate dense activations (or flattened second-conv maps) in eval mode."""
    key = "conv_layer" if conv_maps else "feature_layer"
    out = model.predict(as_input(frames), stop=int(model.meta[key]) + 1)
    return out.reshape(len(out), -1)


def feature_matrix(model: Network, dataset: Dataset, conv_maps: bool = False) -> FeatureMatrix:
    return FeatureMatrix.from_dataset(extract_features(model, dataset.frames, conv_maps), dataset)


@dataclass
class AccuracyReport:
    classes: list
    overall: float
    by_snr: dict
    confusion: np.ndarray

    def to_dict(self):
        return {
            "classes": list(self.classes),
            "overall": self.overall,
            "by_snr": {str(k): v for k, v in self.by_snr.items()},
            "confusion": self.confusion.tolist(),
        }


def accuracy_table(pred, truth, snrs, classes) -> AccuracyReport:
    """Accuracy per SNR and a confusion matrix (rows = true, cols = predicted).

    Only rows whose true class is in ``classes`` are scored.
    """
    pred, truth, snrs = (np.asarray(a, dtype=np.int64) for a in (pred, truth, snrs))
    classes = [int(c) for c in classes]
    keep = np.isin(truth, classes)
    pred, truth, snrs = pred[keep], truth[keep], snrs[keep]
    index = {c: i for i, c in enumerate(classes)}
    conf = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(truth.tolist(), pred.tolist()):
        if p in index:
            conf[index[t], index[p]] += 1
    correct = pred == truth
    by_snr = {int(s): float(correct[snrs == s].mean()) for s in np.unique(snrs)}
    overall = float(correct.mean()) if len(correct) else float("nan")
    return AccuracyReport([MODULATIONS[c] for c in classes], overall, by_snr, conf)


def accuracy_by_snr(model: Network, dataset: Dataset) -> AccuracyReport:
    pred = predict_classes(model, dataset.frames)
    return accuracy_table(pred, dataset.labels, dataset.snrs, trained_class_ids(model))


def neighbor_affinity(values, labels, query_class, known_classes=None, k: int = 10) -> dict:
    """Average class histogram of the ``k`` nearest known rows of each query row.

    Query rows have label ``query_class``; known rows have a label in
    ``known_classes`` (default: every other label). Returns ``{class: share}``
    over the known classes, summing to 1.
    """
    values = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels)
    if k < 1:
        raise ValueError("k must be >= 1")
    if known_classes is None:
        known_classes = sorted(set(labels.tolist()) - {query_class})
    known_classes = list(known_classes)
    if query_class in known_classes:
        raise ValueError("query class must not be among the known classes")
    q = values[labels == query_class]
    known_mask = np.isin(labels, known_classes)
    kv, kl = values[known_mask], labels[known_mask]
    if len(kv) < k:
        raise ValueError(f"need >= {k} known rows, got {len(kv)}")
    counts = np.zeros(len(known_classes))
    pos = {c: i for i, c in enumerate(known_classes)}
    kl_idx = np.array([pos[c] for c in kl.tolist()], dtype=np.int64)
    kn = np.sum(kv**2, axis=1)
    for start in range(0, len(q), 256):
        block = q[start : start + 256]
        d2 = np.sum(block**2, axis=1)[:, None] + kn[None, :] - 2 * block @ kv.T
        nn = np.argsort(d2, axis=1, kind="stable")[:, :k]
        counts += np.bincount(kl_idx[nn].ravel(), minlength=len(known_classes))
    total = counts.sum()
    share = counts / total if total else counts
    return {c: float(s) for c, s in zip(known_classes, share)}


def holdout_experiment(train_set: Dataset, eval_set: Dataset, holdout: HoldoutConfig | None = None,
                       spec: ClassifierSpec | None = None, config: TrainConfig | None = None,
                       k: int = 10, discovery=None) -> dict:
    """Train without the held-out classes, then measure where they land.

    Features are extracted for every class of ``eval_set``; each held-out
    class gets a neighbor-affinity table over the trained classes. Pass a
    ``(TsneConfig, DbscanConfig)`` pair as ``discovery`` to also embed,
    cluster and score per-class purity.
    """
    holdout = holdout or HoldoutConfig(DEFAULT_HOLDOUT)
    model, history = train_classifier(train_set, holdout, spec, config)
    fm = feature_matrix(model, eval_set)
    known = trained_class_ids(model).tolist()
    report = {
        "held_out": list(holdout.held_out),
        "train_classes": list(model.meta["train_classes"]),
        "k": k,
        "affinity": {},
        "top_neighbor": {},
        "accuracy": accuracy_by_snr(model, eval_set).overall,
        "epochs": len(history.val_loss),
    }
    for name in holdout.held_out:
        aff = neighbor_affinity(fm.values, fm.labels, class_id(name), known, k)
        named = {MODULATIONS[c]: v for c, v in aff.items()}
        report["affinity"][name] = named
        report["top_neighbor"][name] = max(named, key=named.get)
    if discovery is not None:
        from .clustering import discovery_report, per_class_purity

        tsne_cfg, db_cfg = discovery
        result = discovery_report(fm, tsne_cfg, db_cfg)
        report["purity"] = result.report.purity
        report["per_class_purity"] = {
            MODULATIONS[c]: v for c, v in per_class_purity(result.clusters, fm.labels).items()
        }
    return {"report": report, "model": model, "features": fm, "history": history}
