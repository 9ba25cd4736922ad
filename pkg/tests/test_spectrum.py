import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qcnn.signals import CWRU_6205, FaultMode, FaultSpec, characteristic_frequencies, synthesize_fault_signal
from qcnn.spectrum import (
    amplitude_spectrum,
    envelope_spectrum,
    fft,
    hilbert_envelope,
    ifft,
    match_peaks,
    next_pow2,
)


def naive_dft(x):
    n = len(x)
    k = np.arange(n)
    return np.array([np.sum(x * np.exp(-2j * np.pi * kk * k / n)) for kk in k])


def am_signal(fs=1000.0, seconds=2.048):
    t = np.arange(int(fs * seconds)) / fs
    return t, (1 + 0.5 * np.cos(2 * np.pi * 5 * t)) * np.cos(2 * np.pi * 50 * t)


class TestFFT:
    def test_impulse(self):
        np.testing.assert_allclose(np.abs(fft(np.eye(16)[0])), 1.0, rtol=1e-15)

    def test_cosine_by_hand(self):
        mags = np.abs(fft(np.cos(2 * np.pi * 3 * np.arange(8) / 8)))
        np.testing.assert_allclose(mags, [0, 0, 0, 4, 0, 4, 0, 0], atol=1e-12)

    @pytest.mark.parametrize("n", [2, 4, 8, 32, 64])
    def test_matches_naive_dft(self, n):
        x = np.random.default_rng(n).normal(size=n)
        np.testing.assert_allclose(fft(x), naive_dft(x), atol=1e-10)

    @pytest.mark.parametrize("n", [2, 16, 1024, 4096])
    def test_matches_numpy(self, n):
        x = np.random.default_rng(n).normal(size=n)
        np.testing.assert_allclose(fft(x), np.fft.fft(x), atol=1e-9)

    def test_zero_pads_to_power_of_two(self):
        x = np.random.default_rng(0).normal(size=100)
        spec = fft(x)
        assert spec.size == next_pow2(100) == 128
        np.testing.assert_allclose(spec, np.fft.fft(x, 128), atol=1e-10)

    @given(st.integers(1, 12), st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_parseval_and_roundtrip(self, log_n, seed):
        n = 2**log_n
        x = np.random.default_rng(seed).normal(size=n)
        spec = fft(x)
        assert np.sum(x**2) == pytest.approx(np.sum(np.abs(spec) ** 2) / n, rel=1e-9)
        assert np.max(np.abs(ifft(spec) - x)) < 1e-9

    def test_too_short(self):
        with pytest.raises(ValueError):
            fft([1.0])


class TestEnvelope:
    def test_constant_amplitude_cosine(self):
        t = np.arange(4096) / 4096
        env = hilbert_envelope(2.5 * np.cos(2 * np.pi * 64 * t))
        np.testing.assert_allclose(env[200:-200], 2.5, rtol=0.01)

    def test_dominates_signal(self):
        x = np.random.default_rng(1).normal(size=1000)
        assert np.all(hilbert_envelope(x) >= np.abs(x) - 1e-9)

    def test_am_tracks_modulation(self):
        t, x = am_signal()
        env = hilbert_envelope(x)
        want = 1 + 0.5 * np.cos(2 * np.pi * 5 * t)
        inner = slice(200, -200)
        rmse = np.sqrt(np.mean((env[inner] - want[inner]) ** 2))
        assert rmse < 0.02

    def test_carrier_sign_flip(self):
        t, x = am_signal()
        np.testing.assert_allclose(hilbert_envelope(-x), hilbert_envelope(x), atol=1e-12)

    def test_too_short(self):
        with pytest.raises(ValueError):
            hilbert_envelope([1.0, 2.0, 3.0])


class TestSpectra:
    def test_amplitude_scaling(self):
        fs = 1024.0
        t = np.arange(1024) / fs
        s = amplitude_spectrum(0.7 * np.sin(2 * np.pi * 100 * t), fs)
        assert s.resolution_hz == 1.0
        assert s.magnitudes[100] == pytest.approx(0.7, rel=1e-12)
        assert s.freqs[0] == 0 and s.freqs[-1] == fs / 2
        assert np.all(np.diff(s.freqs) > 0)

    def test_am_peak(self):
        _, x = am_signal()
        for window in (None, "hann"):
            s = envelope_spectrum(x, 1000.0, window)
            k = int(np.argmax(s.magnitudes[1:])) + 1
            assert abs(s.freqs[k] - 5.0) <= s.resolution_hz

    def test_pure_tone_has_no_envelope_peak(self):
        t = np.arange(4096) / 1000.0
        s = envelope_spectrum(np.cos(2 * np.pi * 62.5 * t), 1000.0)
        assert s.magnitudes[1:].max() < 1e-3

    def test_outer_harmonics(self):
        fc = characteristic_frequencies(CWRU_6205, 30.0).bpfo
        x = synthesize_fault_signal(FaultSpec(FaultMode.OUTER, 1.0), CWRU_6205, 30.0, 12000.0, 1.0, seed=0)
        found = match_peaks(envelope_spectrum(x, 12000.0), [fc, 2 * fc, 3 * fc])
        assert all(p.found for p in found)

    def test_unknown_window(self):
        with pytest.raises(ValueError):
            amplitude_spectrum(np.ones(8), 1.0, "kaiser")

    def test_csv(self, tmp_path):
        s = amplitude_spectrum(np.arange(8.0), 8.0)
        lines = s.to_csv(tmp_path / "s.csv").read_text().splitlines()
        assert lines[0] == "freq_hz,magnitude" and len(lines) == 6


class TestMatchPeaks:
    def test_tone_found(self):
        fs = 2048.0
        t = np.arange(2048) / fs
        x = np.sin(2 * np.pi * 300 * t) + 0.05 * np.random.default_rng(0).normal(size=t.size)
        (m,) = match_peaks(amplitude_spectrum(x, fs), [300.0])
        assert m.found and m.freq == 300.0 and m.prominence > 0

    def test_flat_noise_rarely_matches(self):
        fs = 2048.0
        hits = 0
        for seed in range(50):
            x = np.random.default_rng(seed).normal(size=2048)
            hits += match_peaks(amplitude_spectrum(x, fs), [300.0])[0].found
        assert hits <= 5

    def test_errors(self):
        s = amplitude_spectrum(np.random.default_rng(0).normal(size=64), 64.0)
        with pytest.raises(ValueError):
            match_peaks(s, [40.0])
        with pytest.raises(ValueError):
            match_peaks(s, [10.0], tol_bins=0)
