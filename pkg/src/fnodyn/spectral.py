"""FFT-based analysis primitives: STFT, Welch PSD, magnitude-squared coherence.

Conventions, fixed so numbers are comparable across implementations:
periodic Hann window (denominator N); one-sided PSD with interior-bin
doubling (DC and Nyquist not doubled) and density scaling, so the sinusoid
power identity  integral(PSD df) = A^2/2  holds; no zero-padding and no
detrending in Welch segments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def rfft(x: np.ndarray, n: int | None = None) -> np.ndarray:
    """Forward real DFT along the last axis, unnormalized."""
    return np.fft.rfft(x, n=n, axis=-1)


def irfft(spectrum: np.ndarray, n: int) -> np.ndarray:
    """Inverse of :func:`rfft`, scaled by 1/n."""
    return np.fft.irfft(spectrum, n=n, axis=-1)


def hann(n: int) -> np.ndarray:
    """Periodic Hann window: 0.5*(1 - cos(2*pi*k/n))."""
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n))


@dataclass(frozen=True)
class SpectrogramData:
    """STFT frames: values[m, k] for frame m, bin k = k*fs/n_fft."""

    values: np.ndarray          # complex, (frames, n_fft//2 + 1)
    frame_times: np.ndarray     # frame centers, seconds
    bin_freqs: np.ndarray       # Hz
    n_fft: int
    hop: int
    fs: float

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def bins(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class PsdEstimate:
    freqs: np.ndarray           # Hz, ascending, 0..Nyquist
    values: np.ndarray          # signal-units^2 / Hz, >= 0
    seg_len: int
    overlap: float
    window_energy: float        # sum of squared window samples


def stft(x: np.ndarray, fs: float, n_fft: int = 1024, hop: int = 512) -> SpectrogramData:
    """Hann-windowed STFT; frame m covers samples [m*hop, m*hop + n_fft).

    A trailing partial frame is discarded.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("stft expects a 1-D series")
    if x.size < n_fft:
        raise ValueError(f"series length {x.size} shorter than n_fft={n_fft}")
    n_frames = (x.size - n_fft) // hop + 1
    window = hann(n_fft)
    frames = np.lib.stride_tricks.sliding_window_view(x, n_fft)[:: hop][:n_frames]
    values = np.fft.rfft(frames * window, axis=-1)
    frame_times = (np.arange(n_frames) * hop + n_fft / 2) / fs
    bin_freqs = np.arange(n_fft // 2 + 1) * fs / n_fft
    return SpectrogramData(values=values, frame_times=frame_times, bin_freqs=bin_freqs,
                           n_fft=n_fft, hop=hop, fs=fs)


def default_seg_len(n: int) -> int:
    """Welch segment length: min(256, n//4)."""
    return min(256, n // 4)


def _welch_segments(x: np.ndarray, seg_len: int, overlap: float) -> np.ndarray:
    step = int(round(seg_len * (1.0 - overlap)))
    if step < 1:
        raise ValueError("overlap too large: segment step would be < 1 sample")
    n_segs = (x.size - seg_len) // step + 1
    return np.lib.stride_tricks.sliding_window_view(x, seg_len)[::step][:n_segs]


def welch_psd(x: np.ndarray, fs: float, seg_len: int | None = None, overlap: float = 0.5) -> PsdEstimate:
    """Welch PSD: Hann-windowed overlapped segments, averaged periodograms.

    Normalized by the window energy W = sum(w^2) and fs, one-sided.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("welch_psd expects a 1-D series")
    if seg_len is None:
        seg_len = default_seg_len(x.size)
    if seg_len < 2:
        raise ValueError(f"segment length {seg_len} too small")
    if x.size < seg_len:
        raise ValueError(f"series length {x.size} shorter than segment length {seg_len}")
    window = hann(seg_len)
    w_energy = float(np.sum(window**2))
    segs = _welch_segments(x, seg_len, overlap)
    spectra = np.fft.rfft(segs * window, axis=-1)
    psd = np.mean(np.abs(spectra) ** 2, axis=0) / (w_energy * fs)
    psd[1:] *= 2.0
    if seg_len % 2 == 0:
        psd[-1] *= 0.5  # Nyquist bin exists only for even segment lengths
    freqs = np.arange(seg_len // 2 + 1) * fs / seg_len
    return PsdEstimate(freqs=freqs, values=psd, seg_len=seg_len, overlap=overlap,
                       window_energy=w_energy)


def coherence(a: np.ndarray, b: np.ndarray, fs: float, seg_len: int | None = None,
              overlap: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Magnitude-squared coherence |G_ab|^2 / (G_aa * G_bb), Welch-estimated.

    Returns (freqs, values) with values clipped to [0, 1].  Requires at least
    two segments: from a single segment the estimate is identically 1.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("coherence expects two equal-length 1-D series")
    if seg_len is None:
        seg_len = default_seg_len(a.size)
    if seg_len < 2 or a.size < seg_len:
        raise ValueError(f"series length {a.size} incompatible with segment length {seg_len}")
    window = hann(seg_len)
    sa = _welch_segments(a, seg_len, overlap)
    if sa.shape[0] < 2:
        raise ValueError("coherence needs at least 2 Welch segments")
    sb = _welch_segments(b, seg_len, overlap)
    fa = np.fft.rfft(sa * window, axis=-1)
    fb = np.fft.rfft(sb * window, axis=-1)
    # |G_ab|^2 in explicit real arithmetic so coherence(a,b) == coherence(b,a)
    # bit-for-bit (complex multiply is not bitwise-commutative under conjugation)
    ra, ia = fa.real, fa.imag
    rb, ib = fb.real, fb.imag
    cross_re = np.mean(ra * rb + ia * ib, axis=0)
    cross_im = np.mean(ia * rb - ra * ib, axis=0)
    g_aa = np.mean(ra**2 + ia**2, axis=0)
    g_bb = np.mean(rb**2 + ib**2, axis=0)
    denom = g_aa * g_bb
    values = np.zeros_like(g_aa)
    nz = denom > 0.0
    values[nz] = (cross_re[nz] ** 2 + cross_im[nz] ** 2) / denom[nz]
    np.clip(values, 0.0, 1.0, out=values)
    freqs = np.arange(seg_len // 2 + 1) * fs / seg_len
    return freqs, values
