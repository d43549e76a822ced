"""Stacked-LSTM baseline: two recurrent layers and a fully connected head.

The unroll runs over every timestep on the autodiff graph (full
backpropagation through time, no truncation) and the head maps the top
hidden state to the two displacement channels at every step.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .rng import KeyedRng
from .fno import _glorot, channel_map


@dataclass(frozen=True)
class LstmConfig:
    input_size: int = 1
    hidden_size: int = 128
    n_layers: int = 2
    fc_sizes: tuple[int, int] = (128, 64)
    out_channels: int = 2

    def __post_init__(self):
        if min(self.input_size, self.hidden_size, self.n_layers, self.out_channels) < 1 \
                or min(self.fc_sizes) < 1:
            raise ValueError("all LSTM sizes must be >= 1")

    def to_json(self) -> dict:
        d = asdict(self)
        d["fc_sizes"] = list(self.fc_sizes)
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "LstmConfig":
        obj = dict(obj)
        obj["fc_sizes"] = tuple(obj["fc_sizes"])
        return cls(**obj)


class LstmModel:
    kind = "lstm"

    def __init__(self, config: LstmConfig, params: OrderedDict[str, Tensor]):
        self.config = config
        self.params = params

    def parameters(self):
        return self.params.values()

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def state_arrays(self) -> OrderedDict[str, np.ndarray]:
        return OrderedDict((name, p.data) for name, p in self.params.items())

    def load_state(self, arrays: dict[str, np.ndarray]):
        for name, p in self.params.items():
            src = arrays[name]
            if src.shape != p.data.shape:
                raise ValueError(f"parameter {name}: shape {src.shape} != {p.data.shape}")
            p.data = src.astype(np.float64).copy()

    def copy_state(self) -> OrderedDict[str, np.ndarray]:
        return OrderedDict((name, p.data.copy()) for name, p in self.params.items())

    def forward(self, f: Tensor, train: bool = False, dropout_key: tuple = (0,)) -> Tensor:
        return lstm_forward(self, f)


def init_params(config: LstmConfig, seed: int) -> LstmModel:
    """Glorot-uniform weights, zero biases except forget-gate bias of 1."""
    params: OrderedDict[str, Tensor] = OrderedDict()
    h = config.hidden_size

    def add(name, data):
        params[name] = ad.parameter(data)

    for layer in range(config.n_layers):
        in_size = config.input_size if layer == 0 else h
        add(f"lstm{layer}.wx", _glorot(KeyedRng(seed, "lstm", f"lstm{layer}.wx"), in_size, 4 * h))
        add(f"lstm{layer}.wh", _glorot(KeyedRng(seed, "lstm", f"lstm{layer}.wh"), h, 4 * h))
        bias = np.zeros(4 * h)
        bias[h: 2 * h] = 1.0  # forget gate open at init
        add(f"lstm{layer}.bias", bias)
    f1, f2 = config.fc_sizes
    add("fc1.weight", _glorot(KeyedRng(seed, "lstm", "fc1.weight"), h, f1))
    add("fc1.bias", np.zeros(f1))
    add("fc2.weight", _glorot(KeyedRng(seed, "lstm", "fc2.weight"), f1, f2))
    add("fc2.bias", np.zeros(f2))
    add("out.weight", _glorot(KeyedRng(seed, "lstm", "out.weight"), f2, config.out_channels))
    add("out.bias", np.zeros(config.out_channels))
    return LstmModel(config, params)


def lstm_step(wx: Tensor, wh: Tensor, bias: Tensor, x_t: Tensor, h_prev: Tensor,
              c_prev: Tensor) -> tuple[Tensor, Tensor]:
    """One cell update; gate order in the fused affine map is (i, f, g, o)."""
    hidden = h_prev.shape[-1]
    z = x_t @ wx + h_prev @ wh + bias
    i = ad.sigmoid(ad.slice_axis(z, 1, 0, hidden))
    f = ad.sigmoid(ad.slice_axis(z, 1, hidden, 2 * hidden))
    g = ad.tanh(ad.slice_axis(z, 1, 2 * hidden, 3 * hidden))
    o = ad.sigmoid(ad.slice_axis(z, 1, 3 * hidden, 4 * hidden))
    c_t = f * c_prev + i * g
    h_t = o * ad.tanh(c_t)
    return h_t, c_t


def lstm_forward(model: LstmModel, f: Tensor) -> Tensor:
    """Unroll over all steps from zero states; head applied at every step.

    f: (batch, input_size, n_steps) -> (batch, out_channels, n_steps).
    """
    cfg = model.config
    p = model.params
    batch, in_ch, n_steps = f.shape
    if in_ch != cfg.input_size:
        raise ValueError(f"expected {cfg.input_size} input channels, got {in_ch}")

    h = [ad.constant(np.zeros((batch, cfg.hidden_size))) for _ in range(cfg.n_layers)]
    c = [ad.constant(np.zeros((batch, cfg.hidden_size))) for _ in range(cfg.n_layers)]
    tops = []
    for t in range(n_steps):
        x = ad.slice_axis(f, 2, t, t + 1).reshape(batch, in_ch)
        for layer in range(cfg.n_layers):
            h[layer], c[layer] = lstm_step(
                p[f"lstm{layer}.wx"], p[f"lstm{layer}.wh"], p[f"lstm{layer}.bias"],
                x, h[layer], c[layer])
            x = h[layer]
        tops.append(x.reshape(batch, cfg.hidden_size, 1))
    # sigmoid * tanh keeps |h| <= 1; violation means numerical blow-up
    assert all(np.abs(state.data).max() <= 1.0 for state in h), "hidden state left [-1, 1]"
    seq = ad.concat(tops, axis=2)
    y = channel_map(seq, p["fc1.weight"], p["fc1.bias"])
    y = channel_map(ad.relu(y), p["fc2.weight"], p["fc2.bias"])
    return channel_map(ad.relu(y), p["out.weight"], p["out.bias"])
