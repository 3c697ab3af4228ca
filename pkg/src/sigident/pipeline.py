"""Experiment configuration, stage functions and the reproducible run driver.

A run goes dataset -> train -> extract -> embed -> cluster -> eval -> plot and
writes every artifact atomically into one output directory, followed by a
manifest of content hashes. Identical (config, seed) gives identical hashes.
"""

from __future__ import annotations

import hashlib
import json
import logging
import platform
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .autoencoder import PRESETS as AE_PRESETS
from .autoencoder import encode, train_convae
from .bootstrap import (
    FULL_SCALE, ClassifierSpec, HoldoutConfig, accuracy_by_snr, feature_matrix, neighbor_affinity,
    train_classifier, trained_class_ids,
)
from .clustering import (
    DbscanConfig, cluster_points, clusters_csv, map_clusters_to_classes, per_class_purity, restricted_purity,
)
from .embedding import EmbeddingResult, TsneConfig, pca_embedding, tsne
from .features import FeatureMatrix
from .io import atomic_write_text, sha256_file
from .nn import Network, TrainConfig
from .plot import scatter_svg
from .synth import ANALOG, MODULATIONS, Dataset, DatasetConfig, build_dataset, class_id, write_dataset

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
REPORT_VERSION = 1
REPRESENTATIONS = ("convae1", "convae2", "bootstrap", "pca")
CLASSIFIER_PRESETS = {"desk": ClassifierSpec(), "full": FULL_SCALE}
HIGH_SNR = (10, 12, 14, 16, 18)


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


def _from_dict(cls, d):
    return cls(**d) if isinstance(d, dict) else d


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one run. ``seed`` is mandatory.

    The training set uses master seed ``2*seed`` and the (disjoint) evaluation
    set ``2*seed + 1``; the evaluation set is what gets embedded and scored.
    ``eval_snr_grid`` (empty = same as training) lets the model see a wider
    SNR range than the frames that get plotted.
    """

    seed: int
    dataset: DatasetConfig = field(default_factory=lambda: DatasetConfig(snr_grid=HIGH_SNR))
    eval_frames_per_combo: int = 40
    eval_snr_grid: tuple = ()
    representation: str = "bootstrap"
    network: str = "desk"
    train: TrainConfig = field(default_factory=TrainConfig)
    holdout: tuple = ()
    embed_method: str = "tsne"
    tsne: TsneConfig = field(default_factory=TsneConfig)
    dbscan: DbscanConfig = field(default_factory=DbscanConfig)
    affinity_k: int = 10
    plots: tuple = ("classes",)
    name: str = "experiment"
    output_dir: str = ""

    def __post_init__(self):
        if self.seed is None:
            raise ValueError("seed is mandatory")
        self.seed = int(self.seed)
        if isinstance(self.dataset, dict):
            self.dataset = DatasetConfig.from_dict(self.dataset)
        self.train = _from_dict(TrainConfig, self.train)
        self.tsne = _from_dict(TsneConfig, self.tsne)
        self.dbscan = _from_dict(DbscanConfig, self.dbscan)
        self.holdout = tuple(self.holdout)
        self.eval_snr_grid = tuple(int(s) for s in self.eval_snr_grid)
        self.plots = tuple(self.plots)
        if self.representation not in REPRESENTATIONS:
            raise ValueError(f"unknown representation {self.representation!r}; choose from {REPRESENTATIONS}")
        if self.network not in CLASSIFIER_PRESETS:
            raise ValueError(f"unknown network preset {self.network!r}; choose from {sorted(CLASSIFIER_PRESETS)}")
        if self.embed_method not in ("tsne", "pca"):
            raise ValueError("embed_method must be 'tsne' or 'pca'")
        if self.holdout and self.representation != "bootstrap":
            raise ValueError("holdout only applies to the bootstrap representation")
        for name in self.holdout:
            class_id(name)
        for p in self.plots:
            if p not in ("classes", "clusters"):
                raise ValueError(f"unknown plot kind {p!r}")
        if self.eval_frames_per_combo < 1:
            raise ValueError("eval_frames_per_combo must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dataset"] = self.dataset.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if "seed" not in d:
            raise ValueError("config must set 'seed'")
        return cls(**d)

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def preset(name: str, seed: int = 0, **overrides) -> ExperimentConfig:
    """Named experiment families: convae-embed, bootstrap-embed, holdout, discovery."""
    base = dict(seed=seed, name=name)
    if name == "convae-embed":
        base.update(representation="convae1")
    elif name == "bootstrap-embed":
        base.update(representation="bootstrap")
    elif name == "holdout":
        base.update(representation="bootstrap", holdout=("BPSK", "QAM16"))
    elif name == "discovery":
        base.update(representation="bootstrap", plots=("classes", "clusters"))
    else:
        raise ValueError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")
    base.update(overrides)
    return ExperimentConfig(**base)


PRESET_NAMES = ("convae-embed", "bootstrap-embed", "holdout", "discovery")


def apply_overrides(d: dict, assignments) -> dict:
    """Apply ``a.b=value`` strings to a nested config dict (values parsed as JSON if possible)."""
    d = json.loads(json.dumps(d))
    for item in assignments or ():
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ValueError(f"override must look like key=value, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = d
        parts = key.split(".")
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise ValueError(f"unknown config section {part!r} in {key!r}")
            node = node[part]
        if parts[-1] not in node:
            raise ValueError(f"unknown config field {key!r}")
        node[parts[-1]] = value
    return d


# ---------------------------------------------------------------- stages

def make_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    train_set = build_dataset(cfg.dataset, seed=2 * cfg.seed)
    eval_cfg = replace(cfg.dataset, frames_per_combo=cfg.eval_frames_per_combo)
    if cfg.eval_snr_grid:
        eval_cfg = replace(eval_cfg, snr_grid=cfg.eval_snr_grid)
    return train_set, build_dataset(eval_cfg, seed=2 * cfg.seed + 1)


def train_model(cfg: ExperimentConfig, train_set: Dataset):
    """Returns (model or None, history or None) for the configured representation."""
    tcfg = replace(cfg.train, seed=cfg.seed)
    if cfg.representation in AE_PRESETS:
        return train_convae(train_set, AE_PRESETS[cfg.representation], tcfg)
    if cfg.representation == "bootstrap":
        return train_classifier(train_set, HoldoutConfig(cfg.holdout), CLASSIFIER_PRESETS[cfg.network], tcfg)
    return None, None


def extract(model: Network | None, dataset: Dataset, role: str | None = None,
            conv_maps: bool = False) -> FeatureMatrix:
    """Feature rows for ``dataset`` from a checkpoint; raw flattened frames when ``model`` is None.

    ``role`` (convae or bootstrap), when given, must match the checkpoint.
    """
    if model is None:
        return FeatureMatrix.from_dataset(dataset.frames.reshape(len(dataset), -1), dataset)
    if role is not None and model.role != role:
        raise ValueError(f"checkpoint role is {model.role!r}, not {role!r}")
    if model.role == "convae":
        return FeatureMatrix.from_dataset(encode(model, dataset.frames), dataset)
    if model.role == "bootstrap":
        return feature_matrix(model, dataset, conv_maps)
    raise ValueError(f"cannot extract features from role {model.role!r}")


def embed(features: FeatureMatrix, method: str = "tsne", tsne_config: TsneConfig | None = None) -> EmbeddingResult:
    if method == "pca":
        return pca_embedding(features)
    if method == "tsne":
        return tsne(features, tsne_config)
    raise ValueError(f"unknown embedding method {method!r}")


def cluster_report(points, truth, dbscan_config: DbscanConfig) -> tuple[np.ndarray, dict]:
    """DBSCAN + cluster/class scoring as a JSON-ready dict (with the eps used)."""
    clusters, eps = cluster_points(points, dbscan_config)
    rep = map_clusters_to_classes(clusters, truth)
    rep.eps, rep.min_pts = eps, dbscan_config.min_pts
    d = rep.to_dict()
    d["eps_requested"] = dbscan_config.eps
    d["status"] = "ok" if rep.purity_defined else "all_noise"
    return clusters, d


def scoring_extras(clusters, truth) -> dict:
    truth = np.asarray(truth)
    analog = [class_id(n) for n in ANALOG if class_id(n) in set(truth.tolist())]
    out = {
        "per_class_purity": {MODULATIONS[c]: v for c, v in per_class_purity(clusters, truth).items()},
    }
    if len(analog) >= 1 and np.any(np.isin(truth, analog) & (np.asarray(clusters) >= 0)):
        out["analog_purity"] = restricted_purity(clusters, truth, analog)
    return out


def holdout_affinities(model: Network, features: FeatureMatrix, held_out, k: int) -> dict:
    known = trained_class_ids(model).tolist()
    table, top = {}, {}
    for name in held_out:
        if not np.any(features.labels == class_id(name)):
            continue
        aff = neighbor_affinity(features.values, features.labels, class_id(name), known, k)
        named = {MODULATIONS[c]: v for c, v in aff.items()}
        table[name] = named
        top[name] = max(named, key=named.get)
    return {"k": k, "affinity": table, "top_neighbor": top}


def plot_embedding(emb: EmbeddingResult, clusters=None, title: str = "", mapping: dict | None = None) -> str:
    if clusters is None:
        groups = emb.labels if emb.labels is not None else np.zeros(len(emb.points), dtype=np.int64)
        names = {c: MODULATIONS[c] for c in range(len(MODULATIONS))} if emb.labels is not None else {}
        return scatter_svg(emb.points, groups, names, title)
    clusters = np.asarray(clusters)
    names = {}
    for c in sorted(set(clusters.tolist()) - {-1}):
        names[c] = f"cluster {c}" + (f" -> {MODULATIONS[mapping[c]]}" if mapping and c in mapping else "")
    return scatter_svg(emb.points, clusters, names, title)


# ---------------------------------------------------------------- manifest

def versions() -> dict:
    return {"sigident": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


@dataclass
class RunManifest:
    name: str
    config_hash: str
    config: dict
    artifacts: list = field(default_factory=list)  # {"path", "sha256", "bytes"}, paths relative
    timings: dict = field(default_factory=dict)
    versions: dict = field(default_factory=versions)
    format_version: int = MANIFEST_VERSION

    def add(self, root: Path, path: Path) -> None:
        path = Path(path)
        self.artifacts.append({"path": path.relative_to(root).as_posix(), "sha256": sha256_file(path),
                               "bytes": path.stat().st_size})

    def hashes(self) -> dict:
        return {a["path"]: a["sha256"] for a in self.artifacts}

    def verify(self, root) -> list[str]:
        """Problems found (missing files or hash mismatches); empty when intact."""
        root = Path(root)
        bad = []
        for a in self.artifacts:
            p = root / a["path"]
            if not p.exists():
                bad.append(f"missing: {a['path']}")
            elif sha256_file(p) != a["sha256"]:
                bad.append(f"hash mismatch: {a['path']}")
        return bad

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def load(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))


def run_all(cfg: ExperimentConfig, out_dir=None) -> RunManifest:
    """Execute every stage into ``out_dir`` and write ``manifest.json`` last."""
    root = Path(out_dir or cfg.output_dir or ".")
    root.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(cfg.name, cfg.config_hash(), cfg.to_dict())
    manifest.config.pop("output_dir", None)
    state: dict = {}

    def stage(name):
        def wrap(fn):
            t0 = time.perf_counter()
            log.info("stage %s", name)
            try:
                fn()
            except Exception as exc:
                raise StageError(name, exc) from exc
            manifest.timings[name] = round(time.perf_counter() - t0, 3)
            return fn
        return wrap

    def write(relpath, text):
        p = root / relpath
        atomic_write_text(p, text)
        manifest.add(root, p)

    @stage("dataset")
    def _():
        state["train"], state["eval"] = make_datasets(cfg)
        for key, fname in (("train", "train.rmld"), ("eval", "eval.rmld")):
            write_dataset(state[key], root / fname)
            manifest.add(root, root / fname)
            manifest.add(root, root / (fname + ".json"))

    @stage("train")
    def _():
        model, hist = train_model(cfg, state["train"])
        state["model"], state["history"] = model, hist
        if model is not None:
            model.save(root / "model.rmlw")
            manifest.add(root, root / "model.rmlw")
            write("history.csv", hist.to_csv())

    @stage("extract")
    def _():
        state["features"] = extract(state["model"], state["eval"])
        state["features"].save(root / "features.rmlf")
        manifest.add(root, root / "features.rmlf")

    @stage("embed")
    def _():
        tcfg = replace(cfg.tsne, seed=cfg.seed)
        state["embedding"] = emb = embed(state["features"], cfg.embed_method, tcfg)
        write("embedding.csv", emb.to_csv())
        if cfg.embed_method == "tsne":
            write("kl_history.csv", emb.kl_csv())

    @stage("cluster")
    def _():
        emb = state["embedding"]
        state["clusters"], state["clustering"] = cluster_report(emb.points, emb.labels, cfg.dbscan)
        write("clusters.csv", clusters_csv(emb.ids, state["clusters"]))

    @stage("eval")
    def _():
        fm, emb, model, hist = state["features"], state["embedding"], state["model"], state["history"]
        report = {
            "format_version": REPORT_VERSION,
            "name": cfg.name,
            "representation": cfg.representation,
            "embed_method": cfg.embed_method,
            "n_points": len(emb.points),
            "feature_width": int(fm.values.shape[1]),
            "held_out": list(cfg.holdout),
            "clustering": state["clustering"],
        }
        report.update(scoring_extras(state["clusters"], emb.labels))
        if hist is not None:
            report["training"] = {"epochs": len(hist.val_loss), "best_epoch": hist.best_epoch,
                                  "best_val_loss": hist.best_val_loss,
                                  "baseline_val_loss": hist.baseline_val_loss}
        if model is not None and model.role == "bootstrap":
            acc = accuracy_by_snr(model, state["eval"])
            report["accuracy"] = {"overall": acc.overall, "by_snr": {str(k): v for k, v in acc.by_snr.items()}}
            if cfg.holdout:
                report["holdout"] = holdout_affinities(model, fm, cfg.holdout, cfg.affinity_k)
        if emb.kl_history:
            report["final_kl"] = emb.kl_history[-1][1]
        state["report"] = report
        write("report.json", json.dumps(report, indent=2, sort_keys=True) + "\n")

    @stage("plot")
    def _():
        emb = state["embedding"]
        label = {"convae1": "ConvAE-1", "convae2": "ConvAE-2", "bootstrap": "bootstrap", "pca": "raw PCA"}
        base = f"{cfg.name}: {label[cfg.representation]} features, {cfg.embed_method}"
        if "classes" in cfg.plots:
            write("embedding_classes.svg", plot_embedding(emb, title=base))
        if "clusters" in cfg.plots:
            mapping = {int(k): v for k, v in state["clustering"]["mapping"].items()}
            write("embedding_clusters.svg", plot_embedding(emb, state["clusters"], base + ", DBSCAN", mapping))

    atomic_write_text(root / "manifest.json", manifest.to_json())
    return manifest
