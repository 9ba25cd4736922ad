"""Bearing kinematics, synthetic fault vibration, noise injection and dataset files."""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

WINDOW_LEN = 2048


@dataclass(frozen=True)
class BearingGeometry:
    n_balls: int
    ball_d: float
    pitch_D: float
    contact_angle_deg: float = 0.0

    def __post_init__(self):
        if self.n_balls < 3:
            raise ValueError(f"n_balls must be >= 3, got {self.n_balls}")
        if not 0.0 < self.ball_d < self.pitch_D:
            raise ValueError(f"need 0 < ball_d < pitch_D, got d={self.ball_d}, D={self.pitch_D}")
        if not 0.0 <= self.contact_angle_deg < 90.0:
            raise ValueError(f"contact angle must lie in [0, 90), got {self.contact_angle_deg}")


# SKF 6205-2RS JEM drive-end bearing, dimensions in inches.
CWRU_6205 = BearingGeometry(n_balls=9, ball_d=0.3126, pitch_D=1.537)


class CharacteristicFrequencies(NamedTuple):
    bpfo: float
    bpfi: float
    ftf: float
    bsf: float


def characteristic_frequencies(g: BearingGeometry, f_r: float) -> CharacteristicFrequencies:
    """Outer/inner race ball-pass, cage and ball-spin frequencies in Hz for shaft speed ``f_r``."""
    if not f_r > 0:
        raise ValueError(f"shaft frequency must be > 0, got {f_r}")
    ratio = g.ball_d / g.pitch_D * np.cos(np.deg2rad(g.contact_angle_deg))
    n = g.n_balls
    return CharacteristicFrequencies(
        bpfo=float(n * f_r / 2 * (1 - ratio)),
        bpfi=float(n * f_r / 2 * (1 + ratio)),
        ftf=float(f_r / 2 * (1 - ratio)),
        bsf=float(g.pitch_D * f_r / (2 * g.ball_d) * (1 - ratio**2)),
    )


class FaultMode(enum.Enum):
    HEALTHY = "healthy"
    OUTER = "outer"
    INNER = "inner"
    BALL = "ball"


@dataclass(frozen=True)
class FaultSpec:
    """Recipe for one synthetic bearing condition.

    Each defect strike rings the structure at ``resonance_hz`` and decays at
    ``decay_rate`` (1/s). ``modulation_depth`` scales the once-per-revolution
    (inner race) or once-per-cage-turn (ball) amplitude modulation.
    """

    mode: FaultMode
    severity: float = 0.0
    resonance_hz: float = 3000.0
    decay_rate: float = 600.0
    slip_fraction: float = 0.0
    modulation_depth: float = 0.5

    def __post_init__(self):
        if self.severity < 0:
            raise ValueError("severity must be >= 0")
        if self.mode is FaultMode.HEALTHY and self.severity != 0:
            raise ValueError("a HEALTHY spec must have severity 0")
        if not 0.0 <= self.slip_fraction <= 0.05:
            raise ValueError("slip_fraction must lie in [0, 0.05]")


def fault_frequency(mode: FaultMode, freqs: CharacteristicFrequencies) -> float | None:
    return {FaultMode.OUTER: freqs.bpfo, FaultMode.INNER: freqs.bpfi,
            FaultMode.BALL: freqs.bsf}.get(mode)


def synthesize_fault_signal(
    spec: FaultSpec,
    g: BearingGeometry,
    f_r: float,
    fs: float,
    duration: float,
    noise_floor: float = 0.05,
    seed: int = 0,
    shaft_amplitude: float = 0.1,
) -> np.ndarray:
    """Shaft tone (fundamental + half-amplitude 2nd harmonic) + floor noise + defect bursts.

    Bursts repeat at the mode's characteristic frequency with per-strike timing
    jitter of up to ``slip_fraction`` of the period; inner-race bursts are
    amplitude-modulated at ``f_r`` and ball bursts at the cage frequency.
    """
    if fs <= 2 * spec.resonance_hz:
        raise ValueError(f"fs={fs} Hz violates Nyquist for resonance {spec.resonance_hz} Hz")
    rng = np.random.default_rng(seed)
    n = int(round(fs * duration))
    t = np.arange(n) / fs
    ph = rng.uniform(0, 2 * np.pi, size=2)
    x = shaft_amplitude * (np.sin(2 * np.pi * f_r * t + ph[0])
                           + 0.5 * np.sin(2 * np.pi * 2 * f_r * t + ph[1]))
    x += noise_floor * rng.standard_normal(n)

    freqs = characteristic_frequencies(g, f_r)
    f_c = fault_frequency(spec.mode, freqs)
    if f_c is None or spec.severity == 0:
        return x
    if duration * f_c < 5:
        raise ValueError(f"duration {duration}s holds fewer than 5 impacts at {f_c:.2f} Hz")

    period = 1.0 / f_c
    k = np.arange(int(np.ceil(duration * f_c)) + 1)
    strikes = rng.uniform(0, period) + k * period
    strikes += rng.uniform(-1, 1, size=k.size) * spec.slip_fraction * period
    strikes = strikes[(strikes >= 0) & (strikes < duration)]
    amp = np.full(strikes.size, spec.severity)
    f_mod = {FaultMode.INNER: f_r, FaultMode.BALL: freqs.ftf}.get(spec.mode)
    if f_mod is not None:
        amp *= 1 + spec.modulation_depth * np.cos(2 * np.pi * f_mod * strikes + rng.uniform(0, 2 * np.pi))

    support = int(np.ceil(fs * np.log(1e4) / spec.decay_rate))
    first = np.ceil(strikes * fs).astype(np.int64)
    idx = first[:, None] + np.arange(support)[None, :]
    tau = idx / fs - strikes[:, None]
    burst = amp[:, None] * np.exp(-spec.decay_rate * tau) * np.sin(2 * np.pi * spec.resonance_hz * tau)
    keep = idx < n
    np.add.at(x, idx[keep], burst[keep])
    return x


def signal_power(x, axis=-1) -> np.ndarray:
    return np.mean(np.square(np.asarray(x, dtype=np.float64)), axis=axis)


def add_noise_snr(x, snr_db: float, seed=None) -> np.ndarray:
    """Add white Gaussian noise with power ``P_s / 10**(snr_db / 10)``.

    ``P_s`` is the mean square of ``x`` (per row for 2-D input). ``seed`` may be
    an int or a ``numpy.random.Generator``.
    """
    x = np.asarray(x, dtype=np.float64)
    ps = signal_power(x, axis=-1)
    if np.any(ps == 0):
        raise ValueError("cannot set an SNR on a zero-power signal")
    pn = ps / 10 ** (snr_db / 10)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    noise = rng.standard_normal(x.shape) * np.sqrt(pn)[..., None]
    return x + noise


def extract_windows(signal, win_len: int = WINDOW_LEN, count: int = 1000, seed=None) -> np.ndarray:
    """``count`` windows at uniformly random start offsets (with replacement)."""
    signal = np.asarray(signal)
    if signal.size < win_len:
        raise ValueError(f"signal of length {signal.size} is shorter than window {win_len}")
    rng = np.random.default_rng(seed)
    starts = rng.integers(0, signal.size - win_len + 1, size=count)
    return signal[starts[:, None] + np.arange(win_len)[None, :]]


def normalize(window) -> np.ndarray:
    """Scale into ``[-1, 1]`` by the max absolute value (per row for 2-D input)."""
    w = np.asarray(window, dtype=np.float64)
    peak = np.max(np.abs(w), axis=-1, keepdims=True)
    if np.any(peak == 0):
        raise ValueError("cannot normalize an all-zero window")
    return w / peak


class Split(enum.IntEnum):
    TRAIN = 0
    VAL = 1
    TEST = 2
    UNASSIGNED = 255


@dataclass(eq=False)
class Dataset:
    """Labeled fixed-length windows, stored as float32."""

    windows: np.ndarray
    labels: np.ndarray
    class_names: list[str]
    sample_rate_hz: float
    split: np.ndarray = field(default=None)

    def __post_init__(self):
        self.windows = np.ascontiguousarray(self.windows, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.split is None:
            self.split = np.full(len(self.labels), Split.UNASSIGNED, dtype=np.uint8)
        self.split = np.asarray(self.split, dtype=np.uint8)
        if self.windows.ndim != 2 or not len(self.windows) == len(self.labels) == len(self.split):
            raise ValueError("windows, labels and split disagree in length")
        if len(self.class_names) > 65535:
            raise ValueError("too many classes")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def win_len(self) -> int:
        return self.windows.shape[1]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def subset(self, which: Split) -> "Dataset":
        mask = self.split == which
        return Dataset(self.windows[mask], self.labels[mask], list(self.class_names),
                       self.sample_rate_hz, self.split[mask])

    @property
    def train(self) -> "Dataset":
        return self.subset(Split.TRAIN)

    @property
    def val(self) -> "Dataset":
        return self.subset(Split.VAL)

    @property
    def test(self) -> "Dataset":
        return self.subset(Split.TEST)


def split(dataset: Dataset, ratios=(0.5, 0.25, 0.25), seed=None) -> Dataset:
    """Stratified TRAIN/VAL/TEST assignment; returns a new dataset sharing the windows."""
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.shape != (3,) or np.any(ratios < 0) or not np.isclose(ratios.sum(), 1.0):
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    codes = np.empty(len(dataset), dtype=np.uint8)
    for cls in np.unique(dataset.labels):
        idx = np.flatnonzero(dataset.labels == cls)
        if idx.size < 4:
            raise ValueError(f"class {cls} has only {idx.size} samples (need >= 4)")
        idx = rng.permutation(idx)
        n_tr = int(round(idx.size * ratios[0]))
        n_va = int(round(idx.size * ratios[1]))
        codes[idx[:n_tr]] = Split.TRAIN
        codes[idx[n_tr : n_tr + n_va]] = Split.VAL
        codes[idx[n_tr + n_va :]] = Split.TEST
    return replace(dataset, split=codes)


def with_noise(dataset: Dataset, snr_db: float | None, seed=None) -> Dataset:
    """Inject noise at ``snr_db`` into every window, then renormalize to ``[-1, 1]``."""
    if snr_db is None:
        return dataset
    rng = np.random.default_rng(seed)
    out = np.empty_like(dataset.windows)
    for lo in range(0, len(dataset), 1024):
        chunk = dataset.windows[lo : lo + 1024].astype(np.float64)
        out[lo : lo + 1024] = normalize(add_noise_snr(chunk, snr_db, rng))
    return replace(dataset, windows=out)


# Class order of the ten-condition rig: healthy, then ball, outer race, inner race
# at minor/moderate/severe levels.
SEVERITIES = {"minor": 0.5, "moderate": 1.0, "severe": 2.0}
DEFAULT_CLASSES = ["healthy"] + [
    f"{mode}_{level}" for mode in ("ball", "outer", "inner") for level in SEVERITIES
]


def class_fault_spec(name: str) -> FaultSpec:
    if name == "healthy":
        return FaultSpec(FaultMode.HEALTHY)
    mode, level = name.split("_")
    mode = FaultMode(mode)
    slip = 0.01 if mode is FaultMode.BALL else 0.0
    return FaultSpec(mode, severity=SEVERITIES[level], slip_fraction=slip)


def make_synthetic_dataset(
    per_class: int = 1000,
    fs: float = 12000.0,
    rpm: float = 1800.0,
    duration: float = 561152 / 12000.0,
    seed: int = 0,
    classes: list[str] | None = None,
    geometry: BearingGeometry = CWRU_6205,
    win_len: int = WINDOW_LEN,
    ratios=(0.5, 0.25, 0.25),
) -> Dataset:
    """Ten-class synthetic rig: one long record per class, random windows, normalized, split."""
    classes = list(classes or DEFAULT_CLASSES)
    f_r = rpm / 60.0
    seeds = np.random.SeedSequence(seed).spawn(2 * len(classes) + 1)
    windows, labels = [], []
    for label, name in enumerate(classes):
        sig_seed = int(seeds[2 * label].generate_state(1)[0])
        win_seed = int(seeds[2 * label + 1].generate_state(1)[0])
        x = synthesize_fault_signal(class_fault_spec(name), geometry, f_r, fs, duration, seed=sig_seed)
        windows.append(normalize(extract_windows(x, win_len, per_class, win_seed)))
        labels.append(np.full(per_class, label))
    ds = Dataset(np.concatenate(windows), np.concatenate(labels), classes, fs)
    split_seed = int(seeds[-1].generate_state(1)[0])
    return split(ds, ratios, split_seed)


MAGIC = b"QBRG"
VERSION = 1


class DatasetFormatError(ValueError):
    pass


def save_dataset(dataset: Dataset, path) -> Path:
    """Write the little-endian ``QBRG`` v1 format (windows as float32)."""
    path = Path(path)
    n, win = dataset.windows.shape
    parts = [MAGIC, struct.pack("<IIIId", VERSION, n, win, dataset.num_classes, dataset.sample_rate_hz)]
    for name in dataset.class_names:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
    parts.append(dataset.labels.astype("<u2").tobytes())
    parts.append(dataset.split.astype("u1").tobytes())
    parts.append(dataset.windows.astype("<f4").tobytes())
    path.write_bytes(b"".join(parts))
    return path


def load_dataset(path) -> Dataset:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {data[:4]!r}")
    head = struct.calcsize("<IIIId")
    if len(data) < 4 + head:
        raise DatasetFormatError(f"{path}: truncated header")
    version, n, win, n_cls, fs = struct.unpack_from("<IIIId", data, 4)
    if version != VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}")
    pos = 4 + head
    names = []
    try:
        for _ in range(n_cls):
            (ln,) = struct.unpack_from("<I", data, pos)
            names.append(data[pos + 4 : pos + 4 + ln].decode("utf-8"))
            pos += 4 + ln
    except struct.error:
        raise DatasetFormatError(f"{path}: truncated class table") from None
    need = pos + 2 * n + n + 4 * n * win
    if len(data) != need:
        raise DatasetFormatError(f"{path}: expected {need} bytes, found {len(data)}")
    labels = np.frombuffer(data, "<u2", n, pos).astype(np.int64)
    pos += 2 * n
    codes = np.frombuffer(data, "u1", n, pos).copy()
    pos += n
    windows = np.frombuffer(data, "<f4", n * win, pos).reshape(n, win).copy()
    return Dataset(windows, labels, names, fs, codes)
