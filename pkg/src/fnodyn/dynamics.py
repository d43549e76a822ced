"""Two-degree-of-freedom plant: equations of motion, integration, datasets.

The system is two masses coupled by a linear spring k2 and an optional cubic
spring k3, with the wall spring k1 either constant or exponentially softening:

    m1*x1'' + k1(t)*x1 + k2*(x1 - x2) + k3*(x1 - x2)^3 = F(t)
    m2*x2'' + k2*(x2 - x1) + k3*(x2 - x1)^3 = 0

Integration is an embedded Dormand-Prince 5(4) pair with quartic dense output
sampled exactly on the grid.  The step controller uses a deliberately
conservative safety factor (0.5) so that halving the tolerances moves sampled
trajectories by well under 1e-7 relative L2 and free-vibration energy is
conserved to better than 1e-6 relative over 200 s at the default tolerances.

Dataset samples are keyed by (seed, index): sample i of any dataset is
bit-identical to sample i of any larger dataset with the same seed, which is
what makes nested size sweeps exact.  The integrator advances samples in
lockstep but controls every sample's step size independently, so batching
never changes a trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Callable

import numpy as np

from .rng import KeyedRng
from .signals import FreqConfig, TimeGrid, TwoTone, draw_forcing, two_tone_value

# split protocol: samples [TEST_START, PROTOCOL_TOTAL) are never trained on
TEST_START = 2048
PROTOCOL_TOTAL = 4096

CHANNELS = ("forcing", "x1", "x2")

DEFAULT_RTOL = 1e-8
DEFAULT_ATOL = 1e-10
_SAFETY = 0.5
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0


class SystemCase(Enum):
    LINEAR = "linear"
    LINEAR_SOFTENING = "linear_softening"
    NONLINEAR = "nonlinear"
    NONLINEAR_SOFTENING = "nonlinear_softening"

    @property
    def softening(self) -> bool:
        return self in (SystemCase.LINEAR_SOFTENING, SystemCase.NONLINEAR_SOFTENING)

    @property
    def nonlinear(self) -> bool:
        return self in (SystemCase.NONLINEAR, SystemCase.NONLINEAR_SOFTENING)

    @classmethod
    def parse(cls, name: str) -> "SystemCase":
        try:
            return cls(name.lower())
        except ValueError:
            valid = ", ".join(c.value for c in cls)
            raise ValueError(f"unknown system case {name!r} (expected one of: {valid})") from None


@dataclass(frozen=True)
class SystemParams:
    m1: float = 5.0
    m2: float = 10.0
    k1_const: float = 30.0
    k1_soft_floor: float = 10.0
    k1_soft_amp: float = 30.0
    k1_soft_rate: float = 0.05
    k2: float = 50.0
    k3: float = 0.0

    def __post_init__(self):
        for name in ("m1", "m2", "k1_const", "k1_soft_floor", "k1_soft_amp", "k1_soft_rate", "k2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.k3 < 0:
            raise ValueError("k3 must be >= 0")

    @classmethod
    def for_case(cls, case: SystemCase) -> "SystemParams":
        return cls(k3=20.0 if case.nonlinear else 0.0)


@dataclass(frozen=True)
class State:
    x1: float
    v1: float
    x2: float
    v2: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.v1, self.x2, self.v2], dtype=np.float64)


PAPER_ICS = State(x1=0.1, v1=0.0, x2=0.2, v2=0.0)


class IntegrationError(RuntimeError):
    def __init__(self, message: str, t: float, sample_index: int | None = None):
        self.t = t
        self.sample_index = sample_index
        where = f" (sample {sample_index})" if sample_index is not None else ""
        super().__init__(f"{message} at t={t:.6g}{where}")


def stiffness_k1(case: SystemCase, params: SystemParams, t):
    """Wall-spring stiffness; softening cases decay floor + amp*exp(-rate*t)."""
    if case.softening:
        return params.k1_soft_floor + params.k1_soft_amp * np.exp(-params.k1_soft_rate * np.asarray(t, dtype=np.float64))
    return np.broadcast_to(np.float64(params.k1_const), np.shape(t)).copy() if np.ndim(t) else params.k1_const


def rhs(state: State, t: float, case: SystemCase, params: SystemParams, f: float) -> State:
    """State derivative (x1', a1, x2', a2) of the equations of motion."""
    y = state.as_array()
    if not np.all(np.isfinite(y)):
        raise ValueError(f"non-finite state: {state}")
    d = _rhs_batch(y[None, :], np.array([t]), case, params, np.array([float(f)]))[0]
    return State(x1=d[0], v1=d[1], x2=d[2], v2=d[3])


def _rhs_batch(y: np.ndarray, t: np.ndarray, case: SystemCase, params: SystemParams,
               f: np.ndarray) -> np.ndarray:
    """Vectorized equations of motion: y is (n, 4), t and f are (n,)."""
    x1, v1, x2, v2 = y[:, 0], y[:, 1], y[:, 2], y[:, 3]
    k1 = stiffness_k1(case, params, t)
    rel = x1 - x2
    coupling = params.k2 * rel + params.k3 * rel**3
    out = np.empty_like(y)
    out[:, 0] = v1
    out[:, 1] = (f - k1 * x1 - coupling) / params.m1
    out[:, 2] = v2
    out[:, 3] = coupling / params.m2
    return out


# Dormand-Prince 5(4) tableau and the quartic dense-output polynomial.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
_P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])


def _initial_step(f_of: Callable, t0: float, y0: np.ndarray, rtol: float, atol: float) -> np.ndarray:
    """Hairer-style starting step, one value per sample."""
    n = y0.shape[0]
    t0v = np.full(n, t0)
    f0 = f_of(t0v, y0)
    scale = atol + rtol * np.abs(y0)
    d0 = np.sqrt(np.mean((y0 / scale) ** 2, axis=1))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2, axis=1))
    h0 = np.where((d0 < 1e-5) | (d1 < 1e-5), 1e-6, 0.01 * d0 / np.maximum(d1, 1e-300))
    y1 = y0 + h0[:, None] * f0
    f1 = f_of(t0v + h0, y1)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2, axis=1)) / h0
    dm = np.maximum(d1, d2)
    h1 = np.where(dm <= 1e-15, np.maximum(1e-6, h0 * 1e-3), (0.01 / np.maximum(dm, 1e-300)) ** 0.2)
    return np.minimum(100.0 * h0, h1)


def _integrate_grid(case: SystemCase, params: SystemParams, grid: TimeGrid,
                    force_at: Callable[[np.ndarray, np.ndarray], np.ndarray],
                    y0: np.ndarray, rtol: float, atol: float,
                    h_max: float = np.inf) -> np.ndarray:
    """Advance n samples in lockstep; per-sample adaptive steps and dense output.

    force_at(t, idx) returns the force on mass 1 for each (time, sample-index)
    pair.  Returns states of shape (n, n_steps, 4).
    """
    n = y0.shape[0]
    n_steps = grid.n_steps
    out = np.empty((n, n_steps, 4))
    out[:, 0, :] = y0

    all_idx = np.arange(n)

    def f_of_global(t, y, idx):
        return _rhs_batch(y, t, case, params, force_at(t, idx))

    t = np.full(n, float(grid.t0))
    y = y0.astype(np.float64).copy()
    h = np.minimum(
        _initial_step(lambda tv, yv: f_of_global(tv, yv, all_idx), grid.t0, y, rtol, atol),
        h_max)
    next_i = np.ones(n, dtype=np.int64)
    done = np.zeros(n, dtype=bool)
    K = np.empty((7, n, 4))

    while not done.all():
        act = np.flatnonzero(~done)
        ta, ya, ha = t[act], y[act], h[act]

        if np.any(ha <= np.abs(ta) * 1e-14 + 1e-300) or not np.all(np.isfinite(ha)):
            bad = act[int(np.argmin(ha))]
            raise IntegrationError("step size underflow", float(t[bad]), int(bad))

        Ka = K[:, act, :]
        Ka[0] = f_of_global(ta, ya, act)
        for s in range(1, 7):
            ys = ya + ha[:, None] * np.einsum("j,jnd->nd", _A[s], Ka[:s])
            Ka[s] = f_of_global(ta + _C[s] * ha, ys, act)
        y5 = ya + ha[:, None] * np.einsum("j,jnd->nd", _B5, Ka)
        err_vec = ha[:, None] * np.einsum("j,jnd->nd", _E, Ka)
        scale = atol + rtol * np.maximum(np.abs(ya), np.abs(y5))
        err = np.sqrt(np.mean((err_vec / scale) ** 2, axis=1))
        err = np.where(np.isfinite(err), err, np.inf)
        err = np.where(np.isfinite(y5).all(axis=1), err, np.inf)

        accept = err <= 1.0
        if np.any(accept):
            acc = act[accept]
            ha_acc = ha[accept]
            ta_acc = ta[accept]
            # dense-output polynomial per accepted sample
            Q = np.einsum("jnd,jp->ndp", Ka[:, accept, :], _P)
            pending = next_i[acc] < n_steps
            t_out = grid.t0 + next_i[acc] * grid.dt
            pending &= t_out <= ta_acc + ha_acc + 1e-12 * np.maximum(1.0, np.abs(ta_acc))
            while np.any(pending):
                pi = np.flatnonzero(pending)
                gi = acc[pi]
                theta = (grid.t0 + next_i[gi] * grid.dt - ta_acc[pi]) / ha_acc[pi]
                tp = theta[:, None] * np.stack([np.ones_like(theta), theta, theta**2, theta**3], axis=1)
                out[gi, next_i[gi], :] = ya[accept][pi] + ha_acc[pi, None] * np.einsum(
                    "ndp,np->nd", Q[pi], tp)
                next_i[gi] += 1
                pending = next_i[acc] < n_steps
                t_out = grid.t0 + next_i[acc] * grid.dt
                pending &= t_out <= ta_acc + ha_acc + 1e-12 * np.maximum(1.0, np.abs(ta_acc))
            t[acc] = ta_acc + ha_acc
            y[acc] = y5[accept]
            done[acc] = next_i[acc] >= n_steps

        with np.errstate(divide="ignore"):
            fac = np.where(err > 0.0, _SAFETY * err**-0.2, _MAX_FACTOR)
        h[act] = np.minimum(ha * np.clip(fac, _MIN_FACTOR, _MAX_FACTOR), h_max)

    return out


@dataclass(frozen=True)
class Trajectory:
    grid: TimeGrid
    forcing: np.ndarray
    x1: np.ndarray
    x2: np.ndarray

    def __post_init__(self):
        n = self.grid.n_steps
        if not (len(self.forcing) == len(self.x1) == len(self.x2) == n):
            raise ValueError("trajectory series must all have length n_steps")


def _interp_force(grid: TimeGrid, series: np.ndarray) -> Callable:
    times = grid.times()

    def force_at(t, idx):
        return np.interp(t, times, series)

    return force_at


def integrate_states(case: SystemCase, params: SystemParams, grid: TimeGrid,
                     forcing: np.ndarray, ics: State = PAPER_ICS,
                     forcing_fn: Callable | None = None,
                     rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL) -> np.ndarray:
    """Full state history (n_steps, 4) on the grid.

    The sampled `forcing` is interpolated linearly between grid points unless
    `forcing_fn` supplies the exact closed form.
    """
    forcing = np.asarray(forcing, dtype=np.float64)
    if forcing.shape != (grid.n_steps,):
        raise ValueError(f"forcing length {forcing.shape} != grid n_steps {grid.n_steps}")
    y0 = ics.as_array()
    if not np.all(np.isfinite(y0)):
        raise ValueError("non-finite initial conditions")
    if forcing_fn is None:
        # interpolated series: cap the step at dt so no sample interval can
        # fall between stage evaluations (a narrow pulse in a quiescent
        # stretch would otherwise be skipped with a zero error estimate)
        force_at = _interp_force(grid, forcing)
        h_max = grid.dt
    else:
        def force_at(t, idx):
            return np.asarray(forcing_fn(t), dtype=np.float64)
        h_max = np.inf
    states = _integrate_grid(case, params, grid, force_at, y0[None, :], rtol, atol, h_max=h_max)
    return states[0]


def integrate(case: SystemCase, params: SystemParams, grid: TimeGrid, forcing: np.ndarray,
              ics: State = PAPER_ICS, forcing_fn: Callable | None = None,
              rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL) -> Trajectory:
    states = integrate_states(case, params, grid, forcing, ics, forcing_fn, rtol, atol)
    return Trajectory(grid=grid, forcing=np.asarray(forcing, dtype=np.float64),
                      x1=states[:, 0], x2=states[:, 2])


@dataclass(frozen=True)
class NormStats:
    """Per-channel standardization constants in CHANNELS order."""

    mean: np.ndarray  # (3,)
    std: np.ndarray   # (3,)

    def __post_init__(self):
        if not np.all(self.std > 0):
            raise ValueError("norm std must be positive per channel")

    def channel(self, name: str) -> tuple[float, float]:
        i = CHANNELS.index(name)
        return float(self.mean[i]), float(self.std[i])

    def to_json(self) -> dict:
        return {name: [float(self.mean[i]), float(self.std[i])] for i, name in enumerate(CHANNELS)}

    @classmethod
    def from_json(cls, obj: dict) -> "NormStats":
        mean = np.array([obj[name][0] for name in CHANNELS])
        std = np.array([obj[name][1] for name in CHANNELS])
        return cls(mean=mean, std=std)


@dataclass(frozen=True)
class Dataset:
    """Forcing inputs and displacement outputs on a shared grid.

    Channel arrays are (n_samples, n_steps); norm_stats are computed from the
    train-eligible prefix only (samples below TEST_START).
    """

    case: SystemCase
    config: FreqConfig
    grid: TimeGrid
    forcing: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    seed: int
    norm_stats: NormStats

    def __post_init__(self):
        n = self.n_samples
        if n < 1:
            raise ValueError("dataset needs at least one sample")
        for name in ("forcing", "x1", "x2"):
            if getattr(self, name).shape != (n, self.grid.n_steps):
                raise ValueError(f"channel {name} has wrong shape")

    @property
    def n_samples(self) -> int:
        return self.forcing.shape[0]

    def channel(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def sample(self, i: int) -> Trajectory:
        return Trajectory(grid=self.grid, forcing=self.forcing[i], x1=self.x1[i], x2=self.x2[i])

    @cached_property
    def samples(self) -> list[Trajectory]:
        return [self.sample(i) for i in range(self.n_samples)]

    def displacements(self) -> np.ndarray:
        """(n_samples, 2, n_steps) stacked x1, x2."""
        return np.stack([self.x1, self.x2], axis=1)


def sample_rng(seed: int, index: int) -> KeyedRng:
    """The sub-generator that owns dataset sample `index`."""
    return KeyedRng(seed, index)


def draw_dataset_specs(config: FreqConfig, n_samples: int, seed: int) -> list[TwoTone]:
    return [draw_forcing(config, sample_rng(seed, i)) for i in range(n_samples)]


def compute_prefix_stats(forcing: np.ndarray, x1: np.ndarray, x2: np.ndarray) -> NormStats:
    n_fit = min(forcing.shape[0], TEST_START)
    mean = np.array([c[:n_fit].mean() for c in (forcing, x1, x2)])
    std = np.array([c[:n_fit].std() for c in (forcing, x1, x2)])
    return NormStats(mean=mean, std=std)


def generate_dataset(case: SystemCase, config: FreqConfig, n_samples: int, seed: int,
                     grid: TimeGrid | None = None, params: SystemParams | None = None,
                     rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL) -> Dataset:
    """Integrate n_samples two-tone responses from the paper initial conditions.

    Sample i is keyed by (seed, i), so any size-m dataset is exactly the first
    m samples of the size-n dataset for m <= n.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    grid = grid or TimeGrid()
    params = params or SystemParams.for_case(case)
    specs = draw_dataset_specs(config, n_samples, seed)

    a_sin = np.array([s.a_sin for s in specs])
    a_cos = np.array([s.a_cos for s in specs])
    f1 = np.array([s.f1 for s in specs])
    f2 = np.array([s.f2 for s in specs])
    phi1 = np.array([s.phi1 for s in specs])
    phi2 = np.array([s.phi2 for s in specs])

    def force_at(t, idx):
        return 20.0 * a_sin[idx] * np.sin(2.0 * np.pi * f1[idx] * t + phi1[idx]) + \
            16.0 * a_cos[idx] * np.cos(2.0 * np.pi * f2[idx] * t + phi2[idx])

    y0 = np.tile(PAPER_ICS.as_array(), (n_samples, 1))
    states = _integrate_grid(case, params, grid, force_at, y0, rtol, atol)

    times = grid.times()
    forcing = np.stack([two_tone_value(s, times) for s in specs])
    x1 = np.ascontiguousarray(states[:, :, 0])
    x2 = np.ascontiguousarray(states[:, :, 2])
    stats = compute_prefix_stats(forcing, x1, x2)
    return Dataset(case=case, config=config, grid=grid, forcing=forcing, x1=x1, x2=x2,
                   seed=seed, norm_stats=stats)
