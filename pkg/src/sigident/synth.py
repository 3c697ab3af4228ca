"""Synthetic labeled IQ dataset with channel impairments.

Eleven modulation classes are generated at complex baseband (sample rate
normalized to 1), passed through a fading / clock-drift / oscillator-drift /
AWGN channel, and cut into power-normalized 2x128 I/Q frames.

Every random draw is keyed by an explicit seed, so a dataset is a pure
function of ``(DatasetConfig, seed)``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import signal as sps_signal
from scipy.interpolate import CubicSpline

MODULATIONS = (
    "BPSK", "QPSK", "8PSK", "QAM16", "QAM64", "PAM4",
    "GFSK", "CPFSK", "WBFM", "AM-DSB", "AM-SSB",
)
CLASS_IDS = {name: i for i, name in enumerate(MODULATIONS)}
DIGITAL = ("BPSK", "QPSK", "8PSK", "QAM16", "QAM64", "PAM4", "GFSK", "CPFSK")
ANALOG = ("WBFM", "AM-DSB", "AM-SSB")
LINEAR = ("BPSK", "QPSK", "8PSK", "QAM16", "QAM64", "PAM4")
BITS_PER_SYMBOL = {
    "BPSK": 1, "QPSK": 2, "8PSK": 3, "QAM16": 4, "QAM64": 6, "PAM4": 2,
    "GFSK": 1, "CPFSK": 1,
}

FRAME_LEN = 128
DEFAULT_SNR_GRID = tuple(range(-20, 20, 2))

RMLD_MAGIC = b"RMLD"
RMLD_VERSION = 1
_RECORD_DTYPE = np.dtype([("cls", "u1"), ("snr", "i1"), ("iq", "<f4", (2, FRAME_LEN))])


def class_id(name: str) -> int:
    try:
        return CLASS_IDS[name]
    except KeyError:
        raise ValueError(f"unknown modulation class {name!r}") from None


# ---------------------------------------------------------------- sources

def gen_bits(seed: int, n: int) -> np.ndarray:
    """Deterministic pseudorandom bits as a uint8 array of 0/1."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return np.random.default_rng(seed).integers(0, 2, size=n, dtype=np.uint8)


def lowpass_taps(cutoff: float) -> np.ndarray:
    """Blackman-windowed FIR low-pass; cutoff in cycles/sample."""
    numtaps = int(np.ceil(12.0 / cutoff)) | 1
    return sps_signal.firwin(numtaps, cutoff, window="blackman", fs=1.0)


def gen_audio(seed: int, n: int, bandwidth_frac: float = 0.05) -> np.ndarray:
    """Zero-mean, unit-variance band-limited Gaussian noise.

    White noise is low-pass filtered with cutoff ``bandwidth_frac`` (cycles
    per sample) and then standardized with its own sample moments.
    """
    if not 0.0 < bandwidth_frac < 0.5:
        raise ValueError("bandwidth_frac must lie in (0, 0.5)")
    taps = lowpass_taps(bandwidth_frac)
    white = np.random.default_rng(seed).standard_normal(n + len(taps) - 1)
    audio = np.convolve(white, taps, mode="valid")
    audio -= audio.mean()
    audio /= audio.std()
    return audio


# ---------------------------------------------------------------- pulse shaping

def rrc_taps(beta: float = 0.35, span_symbols: int = 8, sps: int = 8) -> np.ndarray:
    """Root-raised-cosine impulse response, length span*sps+1, unit energy."""
    if not 0.0 < beta <= 1.0:
        raise ValueError("beta must lie in (0, 1]")
    if span_symbols < 4 or sps < 2:
        raise ValueError("need span_symbols >= 4 and sps >= 2")
    n = span_symbols * sps + 1
    t = (np.arange(n) - (n - 1) / 2) / sps
    taps = np.empty(n)
    for k, tk in enumerate(t):
        if abs(tk) < 1e-12:
            taps[k] = 1.0 + beta * (4.0 / np.pi - 1.0)
        elif abs(abs(tk) - 1.0 / (4.0 * beta)) < 1e-9:
            taps[k] = (beta / np.sqrt(2.0)) * (
                (1 + 2 / np.pi) * np.sin(np.pi / (4 * beta))
                + (1 - 2 / np.pi) * np.cos(np.pi / (4 * beta))
            )
        else:
            num = np.sin(np.pi * tk * (1 - beta)) + 4 * beta * tk * np.cos(np.pi * tk * (1 + beta))
            den = np.pi * tk * (1 - (4 * beta * tk) ** 2)
            taps[k] = num / den
    return taps / np.sqrt(np.sum(taps**2))


# ---------------------------------------------------------------- constellations

def _gray(k):
    return k ^ (k >> 1)


def _gray_pam_levels(m: int) -> np.ndarray:
    # levels indexed by Gray-coded bit value
    levels = np.arange(-(m - 1), m, 2, dtype=float)
    out = np.empty(m)
    for pos in range(m):
        out[_gray(pos)] = levels[pos]
    return out


def constellation(name: str) -> np.ndarray:
    """Unit-average-power symbol alphabet, indexed by the integer bit value."""
    if name == "BPSK":
        pts = np.array([1.0, -1.0], dtype=complex)
    elif name == "PAM4":
        pts = _gray_pam_levels(4).astype(complex)
    elif name in ("QPSK", "8PSK"):
        m = 4 if name == "QPSK" else 8
        pts = np.empty(m, dtype=complex)
        for pos in range(m):
            pts[_gray(pos)] = np.exp(1j * (2 * np.pi * pos / m + (np.pi / 4 if m == 4 else 0.0)))
    elif name in ("QAM16", "QAM64"):
        side = 4 if name == "QAM16" else 8
        half = int(np.log2(side))
        axis = _gray_pam_levels(side)
        idx = np.arange(side * side)
        pts = axis[idx >> half] + 1j * axis[idx & (side - 1)]
    else:
        raise ValueError(f"{name} has no symbol constellation")
    return pts / np.sqrt(np.mean(np.abs(pts) ** 2))


def map_symbols(name: str, bits: np.ndarray) -> np.ndarray:
    """Group bits MSB-first into symbols and map them through the alphabet."""
    bps = BITS_PER_SYMBOL[name]
    bits = np.asarray(bits, dtype=np.int64)
    nsym = len(bits) // bps
    groups = bits[: nsym * bps].reshape(nsym, bps)
    values = groups @ (1 << np.arange(bps - 1, -1, -1))
    if name in ("GFSK", "CPFSK"):
        return (2.0 * values - 1.0).astype(complex)
    return constellation(name)[values]


def _gaussian_pulse(bt: float, sps: int, span: int = 4) -> np.ndarray:
    t = (np.arange(span * sps + 1) - span * sps / 2) / sps
    alpha = np.sqrt(np.log(2) / 2) / bt
    g = np.sqrt(np.pi) / alpha * np.exp(-((np.pi * t / alpha) ** 2))
    return g / g.sum()


def modulate_digital(
    name: str,
    bits: np.ndarray,
    sps: int = 8,
    beta: float = 0.35,
    span: int = 8,
    mod_index: float = 0.5,
    bt: float = 0.35,
) -> np.ndarray:
    """Map bits to a complex baseband waveform at ``sps`` samples per symbol.

    Linear classes are RRC shaped and scaled to unit average power. GFSK and
    CPFSK are continuous-phase FM with Gaussian-filtered and rectangular
    frequency pulses.
    """
    if name not in DIGITAL:
        raise ValueError(f"unsupported digital class {name!r}")
    nsym = len(bits) // BITS_PER_SYMBOL[name]
    if nsym < 32:
        raise ValueError(f"{name} needs bits for >= 32 symbols, got {nsym}")
    symbols = map_symbols(name, bits)
    if name in LINEAR:
        up = np.zeros(nsym * sps, dtype=complex)
        up[::sps] = symbols
        return np.convolve(up, rrc_taps(beta, span, sps), mode="same") * np.sqrt(sps)
    freq = np.repeat(symbols.real, sps)
    if name == "GFSK":
        freq = np.convolve(freq, _gaussian_pulse(bt, sps), mode="same")
    phase = np.pi * mod_index * np.cumsum(freq) / sps
    return np.exp(1j * phase)


def modulate_analog(
    name: str,
    audio: np.ndarray,
    am_index: float = 0.5,
    fm_deviation: float = 0.08,
) -> np.ndarray:
    if name not in ANALOG:
        raise ValueError(f"unsupported analog class {name!r}")
    audio = np.asarray(audio, dtype=float)
    if len(audio) < 256:
        raise ValueError("audio must have >= 256 samples")
    if name == "WBFM":
        return np.exp(1j * 2 * np.pi * fm_deviation * np.cumsum(audio))
    if name == "AM-DSB":
        return (1.0 + am_index * audio).astype(complex)
    # upper sideband: analytic signal has no negative-frequency content
    return sps_signal.hilbert(audio)


# ---------------------------------------------------------------- channel

@dataclass(frozen=True)
class ChannelParams:
    """Impairment settings for one channel realization.

    ``fading_delay_spread == 0`` disables multipath; ``snr_db = inf`` disables
    the noise stage.
    """

    snr_db: float = 10.0
    cfo_std_hz: float = 1e-4
    clock_offset_max_ppm: float = 50.0
    fading_tap_count: int = 3
    fading_delay_spread: float = 2.0
    rng_seed: int = 0

    def __post_init__(self):
        if np.isnan(self.snr_db) or self.snr_db == -np.inf:
            raise ValueError("snr_db must be a number (or +inf to disable noise)")
        if self.fading_tap_count < 1:
            raise ValueError("fading_tap_count must be >= 1")
        if min(self.cfo_std_hz, self.clock_offset_max_ppm, self.fading_delay_spread) < 0:
            raise ValueError("impairment spreads must be >= 0")


IDENTITY_CHANNEL = ChannelParams(
    snr_db=np.inf, cfo_std_hz=0.0, clock_offset_max_ppm=0.0,
    fading_tap_count=1, fading_delay_spread=0.0,
)


def fading_taps(rng: np.random.Generator, count: int, spread: float) -> np.ndarray:
    """Rayleigh taps with exponential power-delay profile, total power 1."""
    power = np.exp(-np.arange(count) / spread)
    power /= power.sum()
    h = (rng.standard_normal(count) + 1j * rng.standard_normal(count)) * np.sqrt(power / 2)
    return h / np.sqrt(np.sum(np.abs(h) ** 2))


def apply_channel(x: np.ndarray, params: ChannelParams) -> np.ndarray:
    """Fading, then clock offset, then oscillator drift, then AWGN.

    Random draws happen in that fixed order from one generator, so the
    noiseless output for ``snr_db=inf`` equals the noisy output minus noise.
    """
    x = np.asarray(x, dtype=complex)
    if len(x) < 256:
        raise ValueError("signal must have >= 256 samples")
    rng = np.random.default_rng(params.rng_seed)
    y = x

    if params.fading_delay_spread > 0:
        h = fading_taps(rng, params.fading_tap_count, params.fading_delay_spread)
        y = np.convolve(y, h)[: len(y)]

    delta = rng.uniform(-1.0, 1.0) * params.clock_offset_max_ppm * 1e-6
    if delta != 0.0:
        n = np.arange(len(y))
        t = n * (1.0 + delta)
        t = t[t <= n[-1]]
        y = CubicSpline(n, y)(t)

    if params.cfo_std_hz > 0:
        freq = np.cumsum(rng.normal(0.0, params.cfo_std_hz, len(y)))
        y = y * np.exp(2j * np.pi * np.cumsum(freq))

    if np.isfinite(params.snr_db):
        noise_var = np.mean(np.abs(y) ** 2) / 10 ** (params.snr_db / 10)
        noise = rng.standard_normal(len(y)) + 1j * rng.standard_normal(len(y))
        y = y + noise * np.sqrt(noise_var / 2)
    return y


# ---------------------------------------------------------------- framing

def normalize_frame(z: np.ndarray) -> np.ndarray:
    z = z / np.sqrt(np.mean(np.abs(z) ** 2))
    return np.stack([z.real, z.imag])


def extract_frames(
    x: np.ndarray, count: int, offset_seed: int, margin: int = 0
) -> np.ndarray:
    """Cut ``count`` randomly offset 128-sample windows as (count, 2, 128).

    Offsets are drawn uniformly from ``[margin, len(x) - 128 - margin]``; each
    frame is scaled to unit mean complex power.
    """
    hi = len(x) - FRAME_LEN - margin
    if count > 0 and hi < margin:
        raise ValueError(f"signal of length {len(x)} too short for framing with margin {margin}")
    if count == 0:
        return np.empty((0, 2, FRAME_LEN))
    offsets = np.random.default_rng(offset_seed).integers(margin, hi + 1, size=count)
    return np.stack([normalize_frame(x[o : o + FRAME_LEN]) for o in offsets])


def mean_power(frames: np.ndarray) -> np.ndarray:
    """Per-frame mean complex power of (N, 2, 128) frames."""
    return np.mean(np.asarray(frames, dtype=np.float64) ** 2, axis=-1).sum(axis=-1)


# ---------------------------------------------------------------- dataset

@dataclass(frozen=True)
class DatasetConfig:
    classes: tuple = MODULATIONS
    snr_grid: tuple = DEFAULT_SNR_GRID
    frames_per_combo: int = 100
    sps: int = 8
    rrc_beta: float = 0.35
    rrc_span: int = 8
    source_len: int = 1024
    frame_margin: int = 128
    audio_bandwidth: float = 0.05
    cfo_std_hz: float = 1e-4
    clock_offset_max_ppm: float = 50.0
    fading_tap_count: int = 3
    fading_delay_spread: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "snr_grid", tuple(int(s) for s in self.snr_grid))
        if not self.classes:
            raise ValueError("class list is empty")
        if not self.snr_grid:
            raise ValueError("snr grid is empty")
        for name in self.classes:
            class_id(name)
        if len(set(self.classes)) != len(self.classes):
            raise ValueError("duplicate classes in config")
        if any(not -128 <= s <= 127 for s in self.snr_grid):
            raise ValueError("snr values must fit in a signed byte")
        if self.frames_per_combo < 0:
            raise ValueError("frames_per_combo must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["classes"] = list(self.classes)
        d["snr_grid"] = list(self.snr_grid)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        return cls(**d)


@dataclass
class LabeledExample:
    frame: np.ndarray
    label: int
    snr_db: int

    @property
    def class_name(self) -> str:
        return MODULATIONS[self.label]


@dataclass
class Dataset:
    """Frames ``(N, 2, 128)`` float32 with global class ids and SNR tags."""

    frames: np.ndarray
    labels: np.ndarray
    snrs: np.ndarray
    class_table: dict = field(default_factory=lambda: dict(enumerate(MODULATIONS)))
    snr_grid: tuple = DEFAULT_SNR_GRID
    seed: int = 0

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i) -> LabeledExample:
        return LabeledExample(self.frames[i], int(self.labels[i]), int(self.snrs[i]))

    def subset(self, mask) -> "Dataset":
        return replace(self, frames=self.frames[mask], labels=self.labels[mask], snrs=self.snrs[mask])

    def filter(self, classes=None, min_snr=None) -> "Dataset":
        mask = np.ones(len(self), dtype=bool)
        if classes is not None:
            ids = [class_id(c) if isinstance(c, str) else int(c) for c in classes]
            mask &= np.isin(self.labels, ids)
        if min_snr is not None:
            mask &= self.snrs >= min_snr
        return self.subset(mask)

    def counts(self) -> dict:
        out = {}
        for lab, snr in zip(self.labels.tolist(), self.snrs.tolist()):
            key = (self.class_table[lab], snr)
            out[key] = out.get(key, 0) + 1
        return out

    def header(self) -> dict:
        return {
            "format": "RMLD",
            "format_version": RMLD_VERSION,
            "class_table": [self.class_table[k] for k in sorted(self.class_table)],
            "snr_grid": list(self.snr_grid),
            "count": len(self),
            "seed": int(self.seed),
        }

    def save(self, path) -> None:
        write_dataset(self, path)

    @classmethod
    def load(cls, path) -> "Dataset":
        return read_dataset(path)


def example_seed(master: int, cls_id: int, snr_db: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master), cls_id, snr_db + 128, index])


def synthesize_example(name: str, snr_db: float, ss: np.random.SeedSequence, cfg: DatasetConfig) -> np.ndarray:
    """One impaired (2, 128) float32 frame for class ``name``."""
    src_seed, chan_seed, off_seed = (int(s.generate_state(1, np.uint64)[0]) for s in ss.spawn(3))
    if name in DIGITAL:
        nsym = cfg.source_len // cfg.sps
        bits = gen_bits(src_seed, nsym * BITS_PER_SYMBOL[name])
        x = modulate_digital(name, bits, sps=cfg.sps, beta=cfg.rrc_beta, span=cfg.rrc_span)
    else:
        x = modulate_analog(name, gen_audio(src_seed, cfg.source_len, cfg.audio_bandwidth))
    params = ChannelParams(
        snr_db=snr_db,
        cfo_std_hz=cfg.cfo_std_hz,
        clock_offset_max_ppm=cfg.clock_offset_max_ppm,
        fading_tap_count=cfg.fading_tap_count,
        fading_delay_spread=cfg.fading_delay_spread,
        rng_seed=chan_seed,
    )
    y = apply_channel(x, params)
    return extract_frames(y, 1, off_seed, margin=cfg.frame_margin)[0].astype(np.float32)


def build_dataset(config: DatasetConfig | None = None, seed: int = 0) -> Dataset:
    """Stratified dataset: ``frames_per_combo`` examples per (class, snr)."""
    cfg = config or DatasetConfig()
    n = len(cfg.classes) * len(cfg.snr_grid) * cfg.frames_per_combo
    frames = np.empty((n, 2, FRAME_LEN), dtype=np.float32)
    labels = np.empty(n, dtype=np.uint8)
    snrs = np.empty(n, dtype=np.int8)
    row = 0
    for name in cfg.classes:
        cid = class_id(name)
        for snr in cfg.snr_grid:
            for i in range(cfg.frames_per_combo):
                frames[row] = synthesize_example(name, snr, example_seed(seed, cid, snr, i), cfg)
                labels[row] = cid
                snrs[row] = snr
                row += 1
    return Dataset(frames, labels, snrs, dict(enumerate(MODULATIONS)), cfg.snr_grid, seed)


# ---------------------------------------------------------------- RMLD I/O

def _pack_header(ds: Dataset) -> bytes:
    names = [ds.class_table[k] for k in sorted(ds.class_table)]
    out = [RMLD_MAGIC, struct.pack("<H", RMLD_VERSION), struct.pack("<H", len(names))]
    for name in names:
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
    out.append(struct.pack("<H", len(ds.snr_grid)))
    out.append(np.asarray(ds.snr_grid, dtype="<i1").tobytes())
    out.append(struct.pack("<IQ", len(ds), int(ds.seed) & (2**64 - 1)))
    return b"".join(out)


def dataset_bytes(ds: Dataset) -> bytes:
    rec = np.empty(len(ds), dtype=_RECORD_DTYPE)
    rec["cls"] = ds.labels
    rec["snr"] = ds.snrs
    rec["iq"] = ds.frames
    return _pack_header(ds) + rec.tobytes()


def write_dataset(ds: Dataset, path, sidecar: bool = True) -> None:
    from .io import atomic_write_bytes, atomic_write_text

    path = Path(path)
    atomic_write_bytes(path, dataset_bytes(ds))
    if sidecar:
        atomic_write_text(path.with_name(path.name + ".json"), json.dumps(ds.header(), indent=2) + "\n")


def read_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if raw[:4] != RMLD_MAGIC:
        raise ValueError(f"{path}: not an RMLD dataset file")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != RMLD_VERSION:
        raise ValueError(f"{path}: unsupported RMLD version {version}")
    pos = 6
    (ncls,) = struct.unpack_from("<H", raw, pos)
    pos += 2
    names = []
    for _ in range(ncls):
        (ln,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        names.append(raw[pos : pos + ln].decode("utf-8"))
        pos += ln
    (nsnr,) = struct.unpack_from("<H", raw, pos)
    pos += 2
    grid = tuple(np.frombuffer(raw, dtype="<i1", count=nsnr, offset=pos).tolist())
    pos += nsnr
    count, seed = struct.unpack_from("<IQ", raw, pos)
    pos += 12
    if len(raw) - pos != count * _RECORD_DTYPE.itemsize:
        raise ValueError(f"{path}: truncated or oversized record block")
    rec = np.frombuffer(raw, dtype=_RECORD_DTYPE, count=count, offset=pos)
    return Dataset(
        frames=np.array(rec["iq"], dtype=np.float32),
        labels=np.array(rec["cls"], dtype=np.uint8),
        snrs=np.array(rec["snr"], dtype=np.int8),
        class_table=dict(enumerate(names)),
        snr_grid=grid,
        seed=seed,
    )
