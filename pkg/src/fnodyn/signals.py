"""Excitation time series: two-tone training forcings and stress-test signals.

All generators are pure functions of ``(spec, grid)``; randomness only enters
through :func:`draw_forcing`, which consumes an explicit :class:`KeyedRng`.
The force always acts on mass 1 only.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Union

import numpy as np

from .rng import KeyedRng

# two-tone carrier gains, fixed by the excitation definition
SIN_GAIN = 20.0
COS_GAIN = 16.0


@dataclass(frozen=True)
class TimeGrid:
    """Uniform sampling grid; time at index i is t0 + i*dt."""

    dt: float = 0.04
    n_steps: int = 5000
    t0: float = 0.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.n_steps < 2:
            raise ValueError(f"n_steps must be >= 2, got {self.n_steps}")

    @property
    def fs(self) -> float:
        return 1.0 / self.dt

    @property
    def span(self) -> float:
        """Duration from first to last sample."""
        return (self.n_steps - 1) * self.dt

    @property
    def t_end(self) -> float:
        return self.t0 + self.span

    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.n_steps) * self.dt


@dataclass(frozen=True)
class TwoTone:
    """F(t) = 20*a_sin*sin(2*pi*f1*t + phi1) + 16*a_cos*cos(2*pi*f2*t + phi2)."""

    a_sin: float
    a_cos: float
    f1: float
    f2: float
    phi1: float = 0.0
    phi2: float = 0.0

    def __post_init__(self):
        if self.f1 <= 0 or self.f2 <= 0:
            raise ValueError("two-tone frequencies must be positive")


@dataclass(frozen=True)
class Chirp:
    """Linear frequency sweep, f_start at the first sample to f_end at the last."""

    f_start: float = 0.01
    f_end: float = 2.0

    def __post_init__(self):
        if self.f_start <= 0 or self.f_end <= 0:
            raise ValueError("chirp frequencies must be positive")
        if not self.f_start < self.f_end:
            raise ValueError("chirp requires f_start < f_end")


@dataclass(frozen=True)
class Impulse:
    """Gaussian pulse: peak `amplitude` at t_center, hard-zeroed beyond 6 widths."""

    t_center: float = 50.0
    amplitude: float = 50.0
    width: float = 0.2

    def __post_init__(self):
        if self.width <= 0:
            raise ValueError("impulse width must be positive")


@dataclass(frozen=True)
class Step:
    """Piecewise-constant schedule of (t_switch, level); 0 before the first switch."""

    levels: tuple[tuple[float, float], ...] = (
        (0.0, 10.0),
        (50.0, -10.0),
        (100.0, 15.0),
        (150.0, 0.0),
    )

    def __post_init__(self):
        if len(self.levels) == 0:
            raise ValueError("step schedule must have at least one level")
        times = [t for t, _ in self.levels]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("step switch times must be strictly increasing")


ForcingSpec = Union[TwoTone, Chirp, Impulse, Step]

CHIRP_AMPLITUDE = 10.0  # stress-test default; sweep amplitude is not part of the spec type


class FreqConfig(Enum):
    """Forcing frequency configuration for the two-tone excitation."""

    BROADBAND = "broadband"  # f1 ~ U(0.04, 1.1), f2 ~ U(0.09, 2.1)
    HIGH = "high"            # f1 = 1 Hz, f2 = 2 Hz
    LOW = "low"              # f1 = 0.05 Hz, f2 = 0.1 Hz

    @classmethod
    def parse(cls, name: str) -> "FreqConfig":
        try:
            return cls(name.lower())
        except ValueError:
            valid = ", ".join(c.value for c in cls)
            raise ValueError(f"unknown frequency config {name!r} (expected one of: {valid})") from None


BROADBAND_F1 = (0.04, 1.1)
BROADBAND_F2 = (0.09, 2.1)
HIGH_FREQS = (1.0, 2.0)
LOW_FREQS = (0.05, 0.1)


def two_tone_value(spec: TwoTone, t):
    """Closed-form excitation, valid at any time (scalar or array)."""
    t = np.asarray(t, dtype=np.float64)
    return SIN_GAIN * spec.a_sin * np.sin(2.0 * np.pi * spec.f1 * t + spec.phi1) + COS_GAIN * spec.a_cos * np.cos(
        2.0 * np.pi * spec.f2 * t + spec.phi2
    )


def sample_two_tone(spec: TwoTone, grid: TimeGrid) -> np.ndarray:
    return two_tone_value(spec, grid.times())


def draw_forcing(config: FreqConfig, rng: KeyedRng) -> TwoTone:
    """Draw one two-tone spec.

    Draw order is fixed (a_sin, a_cos, phi1, phi2, then f1, f2 for broadband
    only); changing it would silently change every dataset.
    """
    a_sin = rng.uniform(0.0, 1.0)
    a_cos = rng.uniform(0.0, 1.0)
    phi1 = rng.uniform(0.0, 2.0 * np.pi)
    phi2 = rng.uniform(0.0, 2.0 * np.pi)
    if config is FreqConfig.BROADBAND:
        f1 = rng.uniform(*BROADBAND_F1)
        f2 = rng.uniform(*BROADBAND_F2)
    elif config is FreqConfig.HIGH:
        f1, f2 = HIGH_FREQS
    else:
        f1, f2 = LOW_FREQS
    return TwoTone(a_sin=a_sin, a_cos=a_cos, f1=f1, f2=f2, phi1=phi1, phi2=phi2)


def chirp_value(spec: Chirp, grid: TimeGrid, t, amplitude: float = CHIRP_AMPLITUDE):
    """Closed-form linear chirp; instantaneous frequency ramps over grid.span."""
    t = np.asarray(t, dtype=np.float64)
    tau = t - grid.t0
    rate = (spec.f_end - spec.f_start) / grid.span
    phase = 2.0 * np.pi * (spec.f_start * tau + 0.5 * rate * tau**2)
    return amplitude * np.sin(phase)


def sample_chirp(spec: Chirp, grid: TimeGrid, amplitude: float = CHIRP_AMPLITUDE) -> np.ndarray:
    return chirp_value(spec, grid, grid.times(), amplitude)


def chirp_instantaneous_freq(spec: Chirp, grid: TimeGrid, t):
    tau = np.asarray(t, dtype=np.float64) - grid.t0
    return spec.f_start + (spec.f_end - spec.f_start) * tau / grid.span


def sample_impulse(spec: Impulse, grid: TimeGrid) -> np.ndarray:
    if not (grid.t0 <= spec.t_center <= grid.t_end):
        raise ValueError(
            f"impulse center {spec.t_center} outside grid span [{grid.t0}, {grid.t_end}]"
        )
    t = grid.times()
    u = (t - spec.t_center) / spec.width
    series = spec.amplitude * np.exp(-0.5 * u**2)
    series[np.abs(u) > 6.0] = 0.0
    return series


def sample_step(spec: Step, grid: TimeGrid) -> np.ndarray:
    t = grid.times()
    switch_times = np.array([s for s, _ in spec.levels])
    values = np.concatenate([[0.0], [v for _, v in spec.levels]])
    idx = np.searchsorted(switch_times, t, side="right")
    return values[idx]


def sample(spec: ForcingSpec, grid: TimeGrid) -> np.ndarray:
    """Sample any forcing spec on the grid."""
    if isinstance(spec, TwoTone):
        return sample_two_tone(spec, grid)
    if isinstance(spec, Chirp):
        return sample_chirp(spec, grid)
    if isinstance(spec, Impulse):
        return sample_impulse(spec, grid)
    if isinstance(spec, Step):
        return sample_step(spec, grid)
    raise TypeError(f"not a forcing spec: {type(spec).__name__}")


def closed_form(spec: ForcingSpec, grid: TimeGrid) -> Callable[[np.ndarray], np.ndarray] | None:
    """Exact F(t) for specs the integrator should not interpolate.

    Two-tone and chirp have smooth closed forms; impulse and step are
    integrated from their sampled series via linear interpolation instead.
    """
    if isinstance(spec, TwoTone):
        return lambda t: two_tone_value(spec, t)
    if isinstance(spec, Chirp):
        return lambda t: chirp_value(spec, grid, t)
    return None
