"""Split protocol, normalization, Adam, and the shared training loop.

The split follows the fixed evaluation protocol: the candidate pool is the
first `train_size` samples, a seeded 80% of it trains and the rest validates,
and samples [2048, 4096) are the test block regardless of training size, so
every model of every size is scored on identical data.  Training keeps the
parameters of the best validation epoch, reduces the learning rate on
plateaus, and stops early; with equal seeds the loss history is bit-identical
across reruns.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dynamics import CHANNELS, Dataset, NormStats, TEST_START, PROTOCOL_TOTAL
from .losses import SpectralLossConfig, mse, total_loss
from .rng import KeyedRng


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    train_size: int
    seed: int
    subset_fraction: float = 0.8
    batch_size: int = 16
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    plateau_factor: float = 0.5
    plateau_patience: int = 10
    early_stop_patience: int = 25
    max_epochs: int = 200
    loss: str = "mse"  # "mse" or "spectrogram"
    spectral: SpectralLossConfig = field(default_factory=SpectralLossConfig)

    def __post_init__(self):
        if not 0.0 < self.subset_fraction <= 1.0:
            raise ValueError("subset_fraction must be in (0, 1]")
        if self.plateau_patience < 1 or self.early_stop_patience < 1:
            raise ValueError("patiences must be >= 1")
        if self.loss not in ("mse", "spectrogram"):
            raise ValueError(f"unknown loss mode {self.loss!r}")

    def to_json(self) -> dict:
        d = asdict(self)
        d["spectral"] = self.spectral.to_json()
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        obj = dict(obj)
        obj["spectral"] = SpectralLossConfig.from_json(obj["spectral"])
        return cls(**obj)


def make_split(n_total: int, train_size: int, subset_fraction: float = 0.8,
               seed: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(train, val, test) indices under the fixed protocol.

    Pool = [0, train_size); train = seeded random floor(fraction * pool);
    val = remainder; test = [2048, min(n_total, 4096)).
    """
    if train_size < 1:
        raise ValueError("train_size must be >= 1")
    if train_size > TEST_START:
        raise ValueError(f"train_size {train_size} would overlap the test block at {TEST_START}")
    if train_size > n_total:
        raise ValueError(f"train_size {train_size} exceeds dataset size {n_total}")
    perm = KeyedRng(seed, "split").permutation(train_size)
    n_train = max(1, int(subset_fraction * train_size))
    train = np.sort(perm[:n_train])
    val = np.sort(perm[n_train:])
    test = np.arange(TEST_START, min(n_total, PROTOCOL_TOTAL))
    return train, val, test


def compute_norm_stats(dataset: Dataset, indices: np.ndarray) -> NormStats:
    """Per-channel mean/std over the given samples (training portion only)."""
    indices = np.asarray(indices)
    mean = np.empty(3)
    std = np.empty(3)
    for i, name in enumerate(CHANNELS):
        values = dataset.channel(name)[indices]
        mean[i] = values.mean()
        std[i] = values.std()
    if not np.all(std > 0):
        raise ValueError("degenerate channel: zero standard deviation in training portion")
    return NormStats(mean=mean, std=std)


def normalize(series: np.ndarray, stats: NormStats, channel: str) -> np.ndarray:
    mean, std = stats.channel(channel)
    return (series - mean) / std


def denormalize(series: np.ndarray, stats: NormStats, channel: str) -> np.ndarray:
    mean, std = stats.channel(channel)
    return series * std + mean


def adam_step(value: np.ndarray, grad: np.ndarray, state: dict, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> np.ndarray:
    """One bias-corrected Adam update; mutates `state` and returns the new value."""
    if state.get("m") is None:
        state["m"] = np.zeros_like(value)
        state["v"] = np.zeros_like(value)
        state["t"] = 0
    state["t"] += 1
    t = state["t"]
    state["m"] = beta1 * state["m"] + (1.0 - beta1) * grad
    state["v"] = beta2 * state["v"] + (1.0 - beta2) * grad**2
    m_hat = state["m"] / (1.0 - beta1**t)
    v_hat = state["v"] / (1.0 - beta2**t)
    return value - lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


def _normalized_inputs(dataset: Dataset, stats: NormStats) -> tuple[np.ndarray, np.ndarray]:
    forcing = normalize(dataset.forcing, stats, "forcing")
    disp = np.stack([
        normalize(dataset.x1, stats, "x1"),
        normalize(dataset.x2, stats, "x2"),
    ], axis=1)
    return forcing, disp


def train(model, dataset: Dataset, config: TrainConfig):
    """Optimize `model` in place; returns (model, history, norm_stats).

    The model keeps the parameters of the best validation epoch.
    """
    train_idx, val_idx, _ = make_split(dataset.n_samples, config.train_size,
                                       config.subset_fraction, config.seed)
    stats = compute_norm_stats(dataset, train_idx)
    # normalize only the pool rows; test samples stay untouched on purpose
    pool = np.arange(config.train_size)
    forcing_pool = normalize(dataset.forcing[pool], stats, "forcing")
    disp_pool = np.stack([
        normalize(dataset.x1[pool], stats, "x1"),
        normalize(dataset.x2[pool], stats, "x2"),
    ], axis=1)
    fs = dataset.grid.fs

    def loss_fn(pred: Tensor, truth: Tensor) -> Tensor:
        if config.loss == "spectrogram":
            return total_loss(pred, truth, config.spectral, stats, fs=fs)
        return mse(pred, truth)

    def eval_loss(indices: np.ndarray) -> float:
        total, count = 0.0, 0
        with ad.no_grad():
            for lo in range(0, len(indices), config.batch_size):
                batch = indices[lo: lo + config.batch_size]
                pred = model.forward(Tensor(forcing_pool[batch][:, None, :]), train=False)
                value = loss_fn(pred, Tensor(disp_pool[batch])).item()
                total += value * len(batch)
                count += len(batch)
        return total / max(count, 1)

    adam_states = {name: {} for name in model.params}
    lr = config.lr
    best_val = np.inf
    best_state = model.copy_state()
    epochs_since_improve = 0
    plateau_count = 0
    history: list[EpochRecord] = []

    for epoch in range(config.max_epochs):
        order = KeyedRng(config.seed, "shuffle", epoch).permutation(len(train_idx))
        shuffled = train_idx[order]
        train_total, train_count = 0.0, 0
        for b, lo in enumerate(range(0, len(shuffled), config.batch_size)):
            batch = shuffled[lo: lo + config.batch_size]
            assert np.all(batch < TEST_START), "test sample leaked into a gradient step"
            x = Tensor(forcing_pool[batch][:, None, :])
            y = Tensor(disp_pool[batch])
            pred = model.forward(x, train=True, dropout_key=(config.seed, "dropout", epoch, b))
            loss = loss_fn(pred, y)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            model.zero_grad()
            loss.backward()
            for name, p in model.params.items():
                if p.grad is None:
                    continue
                p.data = adam_step(p.data, p.grad, adam_states[name], lr,
                                   config.adam_beta1, config.adam_beta2, config.adam_eps)
            train_total += value * len(batch)
            train_count += len(batch)

        val_loss = eval_loss(val_idx) if len(val_idx) else train_total / max(train_count, 1)
        history.append(EpochRecord(epoch=epoch, train_loss=train_total / max(train_count, 1),
                                   val_loss=val_loss, lr=lr))

        if val_loss < best_val:
            best_val = val_loss
            best_state = model.copy_state()
            epochs_since_improve = 0
            plateau_count = 0
        else:
            epochs_since_improve += 1
            plateau_count += 1
            if plateau_count >= config.plateau_patience:
                lr *= config.plateau_factor
                plateau_count = 0
            if epochs_since_improve >= config.early_stop_patience:
                break

    model.load_state(best_state)
    return model, history, stats


def predict(model, forcing_phys: np.ndarray, stats: NormStats, batch_size: int = 32) -> np.ndarray:
    """De-normalized displacement predictions (n, 2, n_steps) for raw forcing."""
    forcing_phys = np.atleast_2d(np.asarray(forcing_phys, dtype=np.float64))
    forcing_n = normalize(forcing_phys, stats, "forcing")
    outputs = []
    with ad.no_grad():
        for lo in range(0, forcing_n.shape[0], batch_size):
            batch = forcing_n[lo: lo + batch_size]
            pred = model.forward(Tensor(batch[:, None, :]), train=False).data
            outputs.append(pred)
    pred_n = np.concatenate(outputs, axis=0)
    out = np.empty_like(pred_n)
    out[:, 0, :] = denormalize(pred_n[:, 0, :], stats, "x1")
    out[:, 1, :] = denormalize(pred_n[:, 1, :], stats, "x2")
    return out
