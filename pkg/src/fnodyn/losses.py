"""Training losses: time-domain MSE and spectrogram magnitude/phase terms.

The spectral terms run on de-normalized physical-unit signals and are masked
to bins at or below f_max.  Magnitudes are epsilon-smoothed, so the loss is
differentiable at silent bins; phase error is the squared principal value of
the wrapped difference, and bins whose true magnitude is negligible within
their frame are excluded from the phase mean (their phase is numerical noise
and would destabilize gradients).
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dynamics import NormStats
from .spectral import hann


@dataclass(frozen=True)
class SpectralLossConfig:
    n_fft: int = 1024
    hop: int = 512
    f_max: float = 4.0
    lambda_mag: float = 1.0
    lambda_phase: float = 0.1
    alpha: float = 0.8
    epsilon: float = 1e-8

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if self.hop > self.n_fft:
            raise ValueError("hop must be <= n_fft")

    def kept_bins(self, fs: float) -> int:
        """Bins with k*fs/n_fft <= f_max."""
        if self.f_max > fs / 2:
            raise ValueError(f"f_max={self.f_max} exceeds Nyquist {fs / 2}")
        return min(int(np.floor(self.f_max * self.n_fft / fs)) + 1, self.n_fft // 2 + 1)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "SpectralLossConfig":
        return cls(**obj)


def mse(pred: Tensor, truth: Tensor) -> Tensor:
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    diff = pred - truth
    return (diff * diff).mean()


def _masked_stft_graph(x: Tensor, cfg: SpectralLossConfig, fs: float) -> tuple[Tensor, Tensor]:
    """Graph STFT of (B, C, T); returns (re, im) of the masked low bins."""
    b, c, t = x.shape
    if t < cfg.n_fft:
        raise ValueError(f"signal length {t} shorter than n_fft={cfg.n_fft}")
    n_frames = (t - cfg.n_fft) // cfg.hop + 1
    window = ad.constant(hann(cfg.n_fft))
    frames = []
    for m in range(n_frames):
        fr = ad.slice_axis(x, 2, m * cfg.hop, m * cfg.hop + cfg.n_fft)
        frames.append((fr * window).reshape(b, c, 1, cfg.n_fft))
    spec = ad.rfft_node(ad.concat(frames, axis=2))      # (B, C, M, K, 2)
    kept = ad.slice_axis(spec, 3, 0, cfg.kept_bins(fs))
    k = kept.shape[3]
    re = ad.slice_axis(kept, 4, 0, 1).reshape(b, c, n_frames, k)
    im = ad.slice_axis(kept, 4, 1, 2).reshape(b, c, n_frames, k)
    return re, im


def _masked_stft_data(x: np.ndarray, cfg: SpectralLossConfig, fs: float) -> tuple[np.ndarray, np.ndarray]:
    """Numpy mirror of _masked_stft_graph for the constant truth side."""
    b, c, t = x.shape
    if t < cfg.n_fft:
        raise ValueError(f"signal length {t} shorter than n_fft={cfg.n_fft}")
    n_frames = (t - cfg.n_fft) // cfg.hop + 1
    window = hann(cfg.n_fft)
    frames = np.stack([x[..., m * cfg.hop: m * cfg.hop + cfg.n_fft] * window
                       for m in range(n_frames)], axis=2)
    spec = np.fft.rfft(frames, axis=-1)[..., : cfg.kept_bins(fs)]
    return spec.real, spec.imag


def _smooth_mag_graph(re: Tensor, im: Tensor, eps: float) -> Tensor:
    return ad.sqrt(re * re + im * im + eps**2)


def _smooth_mag_data(re: np.ndarray, im: np.ndarray, eps: float) -> np.ndarray:
    return np.sqrt(re * re + im * im + eps**2)


def spec_mag_loss(pred: Tensor, truth: Tensor, cfg: SpectralLossConfig, fs: float = 25.0) -> Tensor:
    """Frobenius ratio ||(|X_pred| - |X_truth|)|| / (|||X_truth||| + eps) on masked bins.

    Expects physical-unit signals of shape (batch, channels, n_steps).
    """
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    re_p, im_p = _masked_stft_graph(pred, cfg, fs)
    re_t, im_t = _masked_stft_data(truth.data, cfg, fs)
    mag_p = _smooth_mag_graph(re_p, im_p, cfg.epsilon)
    mag_t = _smooth_mag_data(re_t, im_t, cfg.epsilon)
    diff = mag_p - ad.constant(mag_t)
    num = ad.sqrt((diff * diff).sum())
    den = float(np.sqrt(np.sum(mag_t**2))) + cfg.epsilon
    return num * (1.0 / den)


def spec_phase_loss(pred: Tensor, truth: Tensor, cfg: SpectralLossConfig, fs: float = 25.0) -> Tensor:
    """Mean squared wrapped phase difference over masked, non-silent bins."""
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    re_p, im_p = _masked_stft_graph(pred, cfg, fs)
    re_t, im_t = _masked_stft_data(truth.data, cfg, fs)

    mag_t = _smooth_mag_data(re_t, im_t, cfg.epsilon)
    frame_max = mag_t.max(axis=-1, keepdims=True)
    include = (mag_t >= cfg.epsilon * frame_max).astype(np.float64)
    n_included = float(include.sum())

    phase_p = ad.atan2(im_p, re_p)
    phase_t = np.arctan2(im_t, re_t)
    delta = phase_p - ad.constant(phase_t)
    wrapped = ad.atan2(ad.sin(delta), ad.cos(delta))
    weighted = wrapped * wrapped * ad.constant(include)
    return weighted.sum() * (1.0 / max(n_included, 1.0))


def blend(mse_term, mag_term, phase_term, cfg: SpectralLossConfig):
    """alpha * L_mse + (1 - alpha) * (lambda_mag * L_mag + lambda_phase * L_phase)."""
    spectral = cfg.lambda_mag * mag_term + cfg.lambda_phase * phase_term
    return cfg.alpha * mse_term + (1.0 - cfg.alpha) * spectral


def total_loss(pred: Tensor, truth: Tensor, cfg: SpectralLossConfig, norm_stats: NormStats,
               fs: float = 25.0) -> Tensor:
    """Blended loss on normalized pred/truth of shape (batch, 2, n_steps).

    MSE is computed in normalized space; the spectral terms de-normalize both
    signals to physical units per displacement channel first.
    """
    if norm_stats is None:
        raise ValueError("total_loss requires norm_stats to de-normalize spectral terms")
    if pred.shape[1] != 2:
        raise ValueError("total_loss expects the two displacement channels")
    mse_term = mse(pred, truth)
    if cfg.alpha == 1.0:
        return mse_term
    mean = norm_stats.mean[1:].reshape(1, 2, 1)
    std = norm_stats.std[1:].reshape(1, 2, 1)
    pred_phys = pred * ad.constant(std) + ad.constant(mean)
    truth_phys = ad.constant(truth.data * std + mean)
    mag_term = spec_mag_loss(pred_phys, truth_phys, cfg, fs)
    phase_term = spec_phase_loss(pred_phys, truth_phys, cfg, fs)
    return blend(mse_term, mag_term, phase_term, cfg)
