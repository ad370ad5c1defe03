"""Synthetic current traces, windowing, splits, and the dataset file format.

Normal operation is a steady baseline plus a small periodic ripple and
tight Gaussian noise.  Arc behavior keeps the same carrier but with wider
noise, and individual samples are replaced by heavy-tailed excursions at
a configurable rate.  That reproduces the separating observation the
classifier relies on: normal windows have a compact amplitude
distribution, arc windows a dispersed one.

The standard trace window is 1024 samples; reduced-scale runs may choose
a shorter window via GenConfig.window_len.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    ChecksumMismatchError,
    ConfigError,
    TruncatedBlobError,
    VersionMismatchError,
)

__all__ = [
    "WINDOW_LEN",
    "WindowMeta",
    "SignalWindow",
    "GenConfig",
    "SplitDataset",
    "DatasetManifest",
    "generate",
    "window_signal",
    "split",
    "save_dataset",
    "load_dataset",
    "windows_to_arrays",
]

WINDOW_LEN = 1024
PERIODIC_AMPLITUDE = 0.05
LABEL_NORMAL = 0
LABEL_ARC = 1
_UNLABELED_BYTE = 255
_FORMAT_VERSION = 1
_VOLTAGE_TAG_BYTES = 16


@dataclass(frozen=True)
class WindowMeta:
    voltage: str        # operating-point tag, e.g. "ac-1.7A"
    burst_rate: float
    seed: int


@dataclass(frozen=True)
class SignalWindow:
    samples: np.ndarray
    label: int | None           # 0 normal, 1 arc, None when unlabeled
    meta: WindowMeta | None = None

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1 or arr.size < 1:
            raise ValueError("samples must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(arr)):
            raise ValueError("samples must all be finite")
        if self.label is not None and self.label not in (LABEL_NORMAL, LABEL_ARC):
            raise ValueError("label must be 0 (normal), 1 (arc), or None")
        object.__setattr__(self, "samples", arr)


@dataclass(frozen=True)
class GenConfig:
    n_per_class: int
    baseline: float = 1.7
    normal_sigma: float = 0.01
    arc_sigma: float = 0.012
    burst_rate: float = 0.02
    burst_scale: float = 0.35
    gain_jitter: float = 0.25
    period: int = 64
    seed: int = 0
    window_len: int = WINDOW_LEN

    def __post_init__(self):
        if self.n_per_class < 1:
            raise ConfigError("n_per_class must be positive")
        if self.normal_sigma < 0 or self.arc_sigma <= 0:
            raise ConfigError("noise spreads must be positive")
        if self.arc_sigma <= self.normal_sigma:
            raise ConfigError("arc_sigma must exceed normal_sigma")
        if not 0.0 <= self.burst_rate <= 1.0:
            raise ConfigError("burst_rate must lie in [0, 1]")
        if self.burst_scale <= 0:
            raise ConfigError("burst_scale must be positive")
        if not 0.0 <= self.gain_jitter < 1.0:
            raise ConfigError("gain_jitter must lie in [0, 1)")
        if self.period < 1 or self.window_len < 1:
            raise ConfigError("period and window_len must be positive")

    def voltage_tag(self) -> str:
        return f"ac-{self.baseline:g}A"


@dataclass
class SplitDataset:
    train: list[SignalWindow]
    val: list[SignalWindow]
    test: list[SignalWindow]


@dataclass(frozen=True)
class DatasetManifest:
    format_version: int
    split: str
    window_len: int
    counts: dict[str, int]       # per-class record counts
    generator: dict | None       # GenConfig echo, when known
    checksum: str                # sha256 of the sample blob

    def n_windows(self) -> int:
        return sum(self.counts.values())


def generate(cfg: GenConfig) -> list[SignalWindow]:
    """Draw n_per_class normal and n_per_class arc windows, seeded."""
    rng = np.random.default_rng(cfg.seed)
    meta = WindowMeta(voltage=cfg.voltage_tag(), burst_rate=cfg.burst_rate, seed=cfg.seed)
    t = np.arange(cfg.window_len)
    windows = []
    for label, sigma in ((LABEL_NORMAL, cfg.normal_sigma), (LABEL_ARC, cfg.arc_sigma)):
        for _ in range(cfg.n_per_class):
            phase = rng.uniform(0.0, 2.0 * np.pi)
            # load-level jitter, shared by both classes: keeps per-window
            # energy distributions overlapping so amplitude statistics alone
            # do not separate the classes
            gain = rng.uniform(1.0 - cfg.gain_jitter, 1.0 + cfg.gain_jitter)
            samples = cfg.baseline + gain * (
                PERIODIC_AMPLITUDE * np.sin(2.0 * np.pi * t / cfg.period + phase)
                + rng.normal(0.0, sigma, cfg.window_len)
            )
            if label == LABEL_ARC and cfg.burst_rate > 0.0:
                hit = rng.random(cfg.window_len) < cfg.burst_rate
                magnitude = cfg.burst_scale * np.abs(rng.laplace(0.0, 1.0, cfg.window_len))
                sign = rng.integers(0, 2, cfg.window_len) * 2 - 1
                samples = np.where(hit, cfg.baseline + sign * magnitude, samples)
            windows.append(SignalWindow(samples=samples, label=label, meta=meta))
    return windows


def window_signal(raw: np.ndarray, length: int = WINDOW_LEN) -> list[SignalWindow]:
    """Cut a raw trace into consecutive non-overlapping unlabeled windows.

    The trailing remainder shorter than one window is discarded.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 1:
        raise ValueError("raw signal must be 1-D")
    if raw.size < length:
        raise ValueError(f"raw signal has {raw.size} samples, need at least {length}")
    n = raw.size // length
    return [
        SignalWindow(samples=raw[i * length:(i + 1) * length].copy(), label=None)
        for i in range(n)
    ]


def split(windows: list[SignalWindow], ratio_train: float = 0.7, seed: int = 0) -> SplitDataset:
    """Stratified shuffle into train / val / test.

    ratio_train of each class goes to the training pool, the rest to test;
    validation is carved from the last tenth of the pooled training part,
    spread over classes in label order.  Class balance holds within one
    sample per split.
    """
    if not 0.0 < ratio_train < 1.0:
        raise ConfigError("ratio_train must lie strictly between 0 and 1")
    by_label: dict[int, list[SignalWindow]] = {}
    for w in windows:
        if w.label is None:
            raise ConfigError("split requires labeled windows")
        by_label.setdefault(w.label, []).append(w)
    if not by_label or any(len(v) == 0 for v in by_label.values()):
        raise ConfigError("every class must be non-empty")
    rng = np.random.default_rng(seed)
    labels = sorted(by_label)
    pools, tests = {}, {}
    for label in labels:
        members = by_label[label]
        order = rng.permutation(len(members))
        n_pool = round(ratio_train * len(members))
        if n_pool == 0 or n_pool == len(members):
            raise ConfigError(f"class {label}: train/test split would leave a split empty")
        pools[label] = [members[i] for i in order[:n_pool]]
        tests[label] = [members[i] for i in order[n_pool:]]
    n_val_total = sum(len(p) for p in pools.values()) // 10
    if n_val_total == 0:
        raise ConfigError("training pool too small to carve out a validation part")
    base, extra = divmod(n_val_total, len(labels))
    train, val, test = [], [], []
    for i, label in enumerate(labels):
        n_val = base + (1 if i < extra else 0)
        if n_val > len(pools[label]):
            raise ConfigError(f"class {label}: validation carve-out exceeds its pool")
        cut = len(pools[label]) - n_val
        train.extend(pools[label][:cut])
        val.extend(pools[label][cut:])
        test.extend(tests[label])
    return SplitDataset(train=train, val=val, test=test)


def windows_to_arrays(windows: list[SignalWindow]) -> tuple[np.ndarray, np.ndarray]:
    """Stack labeled windows into (X, y) arrays for the pipeline."""
    x = np.stack([w.samples for w in windows])
    y = np.array([w.label for w in windows], dtype=np.int64)
    return x, y


# ---------------------------------------------------------------------------
# on-disk format: <path> holds fixed-width records, <path>.manifest.json the
# structured-text description including a sha256 of the record blob.
#
# record = window_len float64 LE | label byte | voltage tag (16 bytes, utf-8,
#          NUL padded) | burst_rate float64 LE | seed int64 LE


def _record_size(window_len: int) -> int:
    return 8 * window_len + 1 + _VOLTAGE_TAG_BYTES + 8 + 8


def _manifest_path(path) -> str:
    return f"{path}.manifest.json"


def save_dataset(
    path,
    windows: list[SignalWindow],
    *,
    split_name: str = "all",
    generator: GenConfig | None = None,
) -> DatasetManifest:
    if not windows:
        raise ConfigError("refusing to save an empty dataset")
    window_len = windows[0].samples.size
    counts: dict[str, int] = {}
    chunks = []
    for w in windows:
        if w.samples.size != window_len:
            raise ConfigError("all windows in a dataset must share one length")
        label_byte = _UNLABELED_BYTE if w.label is None else int(w.label)
        counts[str(w.label)] = counts.get(str(w.label), 0) + 1
        voltage = (w.meta.voltage if w.meta else "").encode()[:_VOLTAGE_TAG_BYTES]
        voltage = voltage.ljust(_VOLTAGE_TAG_BYTES, b"\x00")
        chunks.append(
            np.ascontiguousarray(w.samples, dtype="<f8").tobytes()
            + struct.pack("<B", label_byte)
            + voltage
            + struct.pack("<d", w.meta.burst_rate if w.meta else 0.0)
            + struct.pack("<q", w.meta.seed if w.meta else 0)
        )
    blob = b"".join(chunks)
    manifest = DatasetManifest(
        format_version=_FORMAT_VERSION,
        split=split_name,
        window_len=window_len,
        counts=counts,
        generator=dict(sorted(vars(generator).items())) if generator else None,
        checksum=hashlib.sha256(blob).hexdigest(),
    )
    with open(path, "wb") as f:
        f.write(blob)
    with open(_manifest_path(path), "w") as f:
        json.dump(vars(manifest), f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest


def load_dataset(path) -> tuple[DatasetManifest, list[SignalWindow]]:
    try:
        with open(_manifest_path(path)) as f:
            raw_manifest = json.load(f)
    except FileNotFoundError:
        raise TruncatedBlobError(f"dataset manifest missing: {_manifest_path(path)}")
    except json.JSONDecodeError as exc:
        raise VersionMismatchError(f"dataset manifest unreadable: {exc}") from exc
    version = raw_manifest.get("format_version")
    if version != _FORMAT_VERSION:
        raise VersionMismatchError(
            f"dataset format version {version!r}, reader supports {_FORMAT_VERSION}"
        )
    manifest = DatasetManifest(**raw_manifest)
    with open(path, "rb") as f:
        blob = f.read()
    record = _record_size(manifest.window_len)
    expected = manifest.n_windows() * record
    if len(blob) != expected:
        raise TruncatedBlobError(
            f"dataset blob holds {len(blob)} bytes, manifest declares {expected}"
        )
    if hashlib.sha256(blob).hexdigest() != manifest.checksum:
        raise ChecksumMismatchError("dataset blob does not match its manifest checksum")
    windows = []
    for i in range(manifest.n_windows()):
        off = i * record
        samples = np.frombuffer(blob, dtype="<f8", count=manifest.window_len, offset=off)
        off += 8 * manifest.window_len
        label_byte = blob[off]
        off += 1
        voltage = blob[off:off + _VOLTAGE_TAG_BYTES].rstrip(b"\x00").decode()
        off += _VOLTAGE_TAG_BYTES
        (burst_rate,) = struct.unpack_from("<d", blob, off)
        (seed,) = struct.unpack_from("<q", blob, off + 8)
        label = None if label_byte == _UNLABELED_BYTE else int(label_byte)
        meta = WindowMeta(voltage=voltage, burst_rate=burst_rate, seed=seed)
        windows.append(SignalWindow(samples=samples.copy(), label=label, meta=meta))
    return manifest, windows
