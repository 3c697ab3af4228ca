"""Per-example feature matrices and their RMLF / CSV serializations."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .io import CSV_PREAMBLE, atomic_write_bytes, atomic_write_text, fmt_float
from .synth import MODULATIONS

RMLF_MAGIC = b"RMLF"
RMLF_VERSION = 1
_META_DTYPE = np.dtype([("id", "<u4"), ("cls", "u1"), ("snr", "i1")])


@dataclass
class FeatureMatrix:
    """``values`` is (N, D); ids, labels (global class ids) and snrs are per row."""

    values: np.ndarray
    ids: np.ndarray
    labels: np.ndarray
    snrs: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise ValueError("feature values must be 2-D")
        n = len(self.values)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.snrs = np.asarray(self.snrs, dtype=np.int64)
        if not (len(self.ids) == len(self.labels) == len(self.snrs) == n):
            raise ValueError("row metadata length must equal row count")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature values must be finite")

    @property
    def shape(self):
        return self.values.shape

    def __len__(self):
        return len(self.values)

    @classmethod
    def from_dataset(cls, values, dataset) -> "FeatureMatrix":
        return cls(values, np.arange(len(dataset)), dataset.labels, dataset.snrs)

    def subset(self, mask) -> "FeatureMatrix":
        return FeatureMatrix(self.values[mask], self.ids[mask], self.labels[mask], self.snrs[mask])

    def to_bytes(self) -> bytes:
        n, d = self.values.shape
        meta = np.empty(n, dtype=_META_DTYPE)
        meta["id"], meta["cls"], meta["snr"] = self.ids, self.labels, self.snrs
        head = RMLF_MAGIC + struct.pack("<HII", RMLF_VERSION, n, d)
        return head + meta.tobytes() + self.values.astype("<f4").tobytes()

    def save(self, path) -> None:
        atomic_write_bytes(Path(path), self.to_bytes())

    @classmethod
    def load(cls, path) -> "FeatureMatrix":
        raw = Path(path).read_bytes()
        if raw[:4] != RMLF_MAGIC:
            raise ValueError(f"{path}: not an RMLF feature file")
        version, n, d = struct.unpack_from("<HII", raw, 4)
        if version != RMLF_VERSION:
            raise ValueError(f"{path}: unsupported RMLF version {version}")
        pos = 14
        if len(raw) != pos + n * _META_DTYPE.itemsize + 4 * n * d:
            raise ValueError(f"{path}: size does not match header")
        meta = np.frombuffer(raw, dtype=_META_DTYPE, count=n, offset=pos)
        pos += n * _META_DTYPE.itemsize
        values = np.frombuffer(raw, dtype="<f4", count=n * d, offset=pos).reshape(n, d)
        return cls(values.astype(np.float32), meta["id"], meta["cls"], meta["snr"])

    def to_csv(self) -> str:
        d = self.values.shape[1]
        rows = [CSV_PREAMBLE + "id,class,snr," + ",".join(f"f{j}" for j in range(d))]
        for i in range(len(self)):
            vals = ",".join(fmt_float(v) for v in self.values[i])
            rows.append(f"{self.ids[i]},{MODULATIONS[self.labels[i]]},{self.snrs[i]},{vals}")
        return "\n".join(rows) + "\n"

    def save_csv(self, path) -> None:
        atomic_write_text(Path(path), self.to_csv())
