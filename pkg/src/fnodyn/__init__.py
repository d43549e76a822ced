"""Fourier neural operator surrogates for 2DOF structural dynamics.

Data generation (signals, dynamics), spectral analysis (spectral, metrics),
models on a built-in autodiff core (autodiff, fno, lstm), training with a
spectrogram-augmented loss (losses, training), binary containers (formats),
and a CLI (cli) for the full experiment workflow.
"""

from .dynamics import (
    Dataset,
    NormStats,
    PAPER_ICS,
    State,
    SystemCase,
    SystemParams,
    Trajectory,
    generate_dataset,
    integrate,
    integrate_states,
)
from .fno import FnoConfig, FnoModel
from .losses import SpectralLossConfig
from .lstm import LstmConfig, LstmModel
from .metrics import MetricsReport, coherence_score, energy_ratio, evaluate_testset, psd_nrmse
from .rng import KeyedRng
from .signals import Chirp, ForcingSpec, FreqConfig, Impulse, Step, TimeGrid, TwoTone
from .training import TrainConfig, make_split, predict, train

__all__ = [
    "Chirp",
    "Dataset",
    "FnoConfig",
    "FnoModel",
    "ForcingSpec",
    "FreqConfig",
    "Impulse",
    "KeyedRng",
    "LstmConfig",
    "LstmModel",
    "MetricsReport",
    "NormStats",
    "PAPER_ICS",
    "SpectralLossConfig",
    "State",
    "Step",
    "SystemCase",
    "SystemParams",
    "TimeGrid",
    "TrainConfig",
    "Trajectory",
    "TwoTone",
    "coherence_score",
    "energy_ratio",
    "evaluate_testset",
    "generate_dataset",
    "integrate",
    "integrate_states",
    "make_split",
    "predict",
    "psd_nrmse",
    "train",
]
