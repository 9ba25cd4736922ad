"""FFT, Hilbert envelope and envelope spectra for bearing-defect frequency checks."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import find_peaks

PROMINENCE_FACTOR = 3.0


def next_pow2(n: int) -> int:
    return 1 << max(int(n) - 1, 0).bit_length()


def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def fft(x) -> np.ndarray:
    """Iterative radix-2 decimation-in-time DFT, ``X_k = sum_n x_n exp(-2j pi k n / N)``.

    Inputs whose length is not a power of two are zero-padded to the next one;
    the returned array has the padded length.
    """
    x = np.asarray(x, dtype=np.complex128).ravel()
    if x.size < 2:
        raise ValueError("fft needs at least 2 samples")
    n = next_pow2(x.size)
    if n != x.size:
        x = np.concatenate([x, np.zeros(n - x.size, dtype=np.complex128)])
    out = x[_bit_reverse(n)]
    half = 1
    while half < n:
        out = out.reshape(-1, 2 * half)
        twiddle = np.exp(-2j * np.pi * np.arange(half) / (2 * half))
        even = out[:, :half]
        odd = out[:, half:] * twiddle
        out = np.concatenate([even + odd, even - odd], axis=1)
        half *= 2
    return out.reshape(n)


def ifft(spec) -> np.ndarray:
    spec = np.asarray(spec, dtype=np.complex128)
    return np.conj(fft(np.conj(spec))) / next_pow2(spec.size)


def hilbert_envelope(x) -> np.ndarray:
    """Magnitude of the analytic signal (one-sided spectrum, DC and Nyquist kept once)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size < 4:
        raise ValueError("hilbert_envelope needs at least 4 samples")
    spec = fft(x)
    n = spec.size
    h = np.zeros(n)
    h[0] = 1.0
    h[1 : n // 2] = 2.0
    h[n // 2] = 1.0
    return np.abs(ifft(spec * h)[: x.size])


@dataclass
class Spectrum:
    freqs: np.ndarray
    magnitudes: np.ndarray
    resolution_hz: float

    def bin_of(self, freq: float) -> int:
        return int(round(freq / self.resolution_hz))

    def magnitude_at(self, freq: float, tol_bins: int = 1) -> float:
        """Largest magnitude within ``tol_bins`` of ``freq``."""
        k = self.bin_of(freq)
        lo, hi = max(k - tol_bins, 0), min(k + tol_bins + 1, self.magnitudes.size)
        return float(self.magnitudes[lo:hi].max())

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["freq_hz", "magnitude"])
            for f, m in zip(self.freqs, self.magnitudes):
                w.writerow([f"{f:.9g}", f"{m:.9g}"])
        return path


def amplitude_spectrum(x, fs: float, window: str | None = None) -> Spectrum:
    """One-sided amplitude spectrum (a unit-amplitude tone on a bin reads 1)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    n = x.size
    if window == "hann":
        x = x * np.hanning(n)
    elif window is not None:
        raise ValueError(f"unknown window {window!r}")
    spec = fft(x)
    n_fft = spec.size
    mags = np.abs(spec[: n_fft // 2 + 1]) / n
    mags[1 : n_fft // 2] *= 2.0
    freqs = np.arange(n_fft // 2 + 1) * fs / n_fft
    return Spectrum(freqs, mags, fs / n_fft)


def envelope_spectrum(x, fs: float, window: str | None = None) -> Spectrum:
    """Spectrum of the mean-removed Hilbert envelope."""
    env = hilbert_envelope(x)
    return amplitude_spectrum(env - env.mean(), fs, window)


@dataclass
class PeakMatch:
    target: float
    found: bool
    freq: float
    magnitude: float
    prominence: float


def match_peaks(
    s: Spectrum, targets, tol_bins: int = 1, prominence_factor: float = PROMINENCE_FACTOR
) -> list[PeakMatch]:
    """Look for a local maximum within ``tol_bins`` of each target frequency.

    A target counts as found when such a peak has prominence above
    ``prominence_factor * median(magnitudes)``. Unfound targets report the
    largest in-window magnitude with prominence 0.
    """
    if tol_bins < 1:
        raise ValueError("tol_bins must be >= 1")
    nyquist = s.freqs[-1]
    threshold = prominence_factor * float(np.median(s.magnitudes))
    peaks, props = find_peaks(s.magnitudes, prominence=0.0)
    prom = dict(zip(peaks.tolist(), props["prominences"].tolist()))
    out = []
    for t in targets:
        t = float(t)
        if t < 0 or t > nyquist:
            raise ValueError(f"target {t} Hz is outside [0, {nyquist}] Hz")
        k = s.bin_of(t)
        near = [p for p in prom if abs(p - k) <= tol_bins and prom[p] > threshold]
        if near:
            best = max(near, key=lambda p: s.magnitudes[p])
            out.append(PeakMatch(t, True, float(s.freqs[best]), float(s.magnitudes[best]), prom[best]))
        else:
            out.append(PeakMatch(t, False, t, s.magnitude_at(t, tol_bins), 0.0))
    return out
