"""A-posteriori error measures: RMS energy ratio, PSD NRMSE, coherence score.

All metrics are computed on de-normalized physical-unit signals.  Test-set
aggregation is the arithmetic mean per channel across samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import coherence, welch_psd


class MetricError(ValueError):
    def __init__(self, message: str, sample_index: int | None = None):
        self.sample_index = sample_index
        where = f" (sample {sample_index})" if sample_index is not None else ""
        super().__init__(f"{message}{where}")


def energy_ratio(pred: np.ndarray, truth: np.ndarray) -> float:
    """RMS(pred) / RMS(truth); 1 means perfect energy preservation."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise MetricError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    rms_truth = np.sqrt(np.mean(truth**2))
    if rms_truth == 0.0:
        raise MetricError("energy ratio undefined for zero-energy truth")
    return float(np.sqrt(np.mean(pred**2)) / rms_truth)


def psd_nrmse(pred: np.ndarray, truth: np.ndarray, fs: float) -> float:
    """RMS of the Welch-PSD difference over the RMS of the true PSD, percent."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise MetricError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    s_pred = welch_psd(pred, fs).values
    s_truth = welch_psd(truth, fs).values
    denom = np.sqrt(np.mean(s_truth**2))
    if denom == 0.0:
        raise MetricError("PSD NRMSE undefined for zero-PSD truth")
    return float(np.sqrt(np.mean((s_pred - s_truth) ** 2)) / denom * 100.0)


def coherence_score(pred: np.ndarray, truth: np.ndarray, fs: float, f_max: float = 4.0) -> float:
    """Mean magnitude-squared coherence over bins with f <= f_max, percent."""
    freqs, values = coherence(np.asarray(pred, dtype=np.float64),
                              np.asarray(truth, dtype=np.float64), fs)
    band = freqs <= f_max
    if not np.any(band):
        raise MetricError(f"no coherence bins at or below f_max={f_max}")
    return float(np.mean(values[band]) * 100.0)


@dataclass(frozen=True)
class ChannelMetrics:
    energy_ratio: float
    psd_nrmse: float       # percent
    coherence: float       # percent


@dataclass(frozen=True)
class MetricsReport:
    channels: dict[str, ChannelMetrics]
    n_samples: int
    aggregation: str = "mean"

    def channel_means(self) -> ChannelMetrics:
        """Arithmetic mean of each metric across channels."""
        vals = list(self.channels.values())
        return ChannelMetrics(
            energy_ratio=float(np.mean([v.energy_ratio for v in vals])),
            psd_nrmse=float(np.mean([v.psd_nrmse for v in vals])),
            coherence=float(np.mean([v.coherence for v in vals])),
        )


def evaluate_testset(predictions: np.ndarray, truths: np.ndarray, fs: float,
                     channel_names: tuple[str, ...] = ("x1", "x2"),
                     f_max: float = 4.0) -> MetricsReport:
    """Per-sample metrics in physical units, then the mean per channel.

    predictions/truths: (n_samples, n_channels, n_steps), aligned by index.
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if predictions.shape != truths.shape:
        raise MetricError(f"prediction/truth shapes differ: {predictions.shape} vs {truths.shape}")
    n, n_ch, _ = predictions.shape
    if n_ch != len(channel_names):
        raise MetricError(f"expected {len(channel_names)} channels, got {n_ch}")

    per_channel = {name: {"er": [], "nrmse": [], "sc": []} for name in channel_names}
    for i in range(n):
        for ci, name in enumerate(channel_names):
            try:
                acc = per_channel[name]
                acc["er"].append(energy_ratio(predictions[i, ci], truths[i, ci]))
                acc["nrmse"].append(psd_nrmse(predictions[i, ci], truths[i, ci], fs))
                acc["sc"].append(coherence_score(predictions[i, ci], truths[i, ci], fs, f_max))
            except MetricError as exc:
                raise MetricError(str(exc), sample_index=i) from exc

    channels = {
        name: ChannelMetrics(
            energy_ratio=float(np.mean(acc["er"])),
            psd_nrmse=float(np.mean(acc["nrmse"])),
            coherence=float(np.mean(acc["sc"])),
        )
        for name, acc in per_channel.items()
    }
    return MetricsReport(channels=channels, n_samples=n)
