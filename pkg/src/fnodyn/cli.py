"""Command-line driver: dataset generation, training, evaluation, stress
tests, and dataset-size sweeps.

Every command is reproducible from its arguments plus seed: outputs carry a
provenance header with both, and no output embeds timestamps or machine
state.  Sweeps are resumable through per-cell marker files and emit one flat
CSV suitable for re-plotting the trend figures with any external tool.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import (
    PROTOCOL_TOTAL,
    TEST_START,
    Dataset,
    SystemCase,
    SystemParams,
    generate_dataset,
)
from .formats import (
    FORMAT_VERSION,
    load_checkpoint,
    load_dataset,
    save_checkpoint,
    save_dataset,
    verify_prefix,
    write_csv,
)
from .fno import FnoConfig
from .fno import init_params as fno_init
from .losses import SpectralLossConfig
from .lstm import LstmConfig
from .lstm import init_params as lstm_init
from .metrics import coherence_score, energy_ratio, evaluate_testset
from .signals import Chirp, FreqConfig, Impulse, Step, TimeGrid, closed_form, sample
from .training import TrainConfig, predict, train

SWEEP_SIZES = (64, 128, 256, 512, 1024, 2048)  # 2^6 .. 2^11; 2^12 is the pool

METRICS_COLUMNS = ["case", "config", "train_size", "channel",
                   "energy_ratio", "psd_nrmse_pct", "coherence_pct"]
STRESS_COLUMNS = ["case", "config", "signal", "channel", "energy_ratio", "coherence_pct"]
SWEEP_COLUMNS = ["case", "config", "size", "channel",
                 "energy_ratio", "psd_nrmse_pct", "coherence_pct", "status"]


def _provenance(command: str, args: dict) -> dict:
    return {
        "command": command,
        "args": json.dumps(args, sort_keys=True),
        "format_version": FORMAT_VERSION,
    }


# ------------------------------------------------------------------ generate

def cmd_generate(args) -> int:
    case = SystemCase.parse(args.case)
    config = FreqConfig.parse(args.config)
    grid = TimeGrid(dt=args.dt, n_steps=args.steps)
    dataset = generate_dataset(case, config, args.n, args.seed, grid=grid)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_dataset(args.out, dataset)
    print(f"wrote {args.out}: {dataset.n_samples} samples x {grid.n_steps} steps "
          f"({case.value}, {config.value}, seed {args.seed})")
    return 0


def cmd_verify(args) -> int:
    try:
        n = verify_prefix(args.subset, args.superset)
    except ValueError as exc:
        print(f"PREFIX CHECK FAILED: {exc}")
        return 1
    print(f"prefix check passed: first {n} samples bit-identical")
    return 0


# --------------------------------------------------------------------- train

def _build_model(kind: str, seed: int, n_steps: int, overrides: dict):
    if kind == "fno":
        config = FnoConfig(**{**dict(width=32, n_modes=64), **overrides})
        config.validate_steps(n_steps)
        return fno_init(config, seed)
    if kind == "lstm":
        return lstm_init(LstmConfig(**overrides), seed)
    raise ValueError(f"unknown model kind {kind!r}")


def _model_overrides_from_args(args) -> dict:
    overrides = {}
    if args.model == "fno":
        if args.width is not None:
            overrides["width"] = args.width
        if args.modes is not None:
            overrides["n_modes"] = args.modes
        if args.blocks is not None:
            overrides["n_blocks"] = args.blocks
        if args.no_grid_channel:
            overrides["grid_channel"] = False
    elif args.hidden is not None:
        overrides["hidden_size"] = args.hidden
    return overrides


def run_training(dataset: Dataset, kind: str, train_config: TrainConfig,
                 model_overrides: dict, out_dir: Path, provenance: dict) -> Path:
    """Train one model; writes checkpoint + history CSV, returns checkpoint path."""
    out_dir.mkdir(parents=True, exist_ok=True)
    model = _build_model(kind, train_config.seed, dataset.grid.n_steps, model_overrides)
    model, history, stats = train(model, dataset, train_config)

    history_rows = [[h.epoch, repr(h.train_loss), repr(h.val_loss), repr(h.lr)] for h in history]
    write_csv(out_dir / "history.csv", provenance,
              ["epoch", "train_loss", "val_loss", "lr"], history_rows)

    meta = {
        "norm_stats": stats.to_json(),
        "case": dataset.case.value,
        "freq_config": dataset.config.value,
        "dt": dataset.grid.dt,
        "n_steps": dataset.grid.n_steps,
        "dataset_seed": dataset.seed,
        "train_config": train_config.to_json(),
        "provenance": provenance,
    }
    ckpt_path = out_dir / "checkpoint.fnoc"
    save_checkpoint(ckpt_path, model, meta)
    return ckpt_path


def cmd_train(args) -> int:
    dataset = load_dataset(args.data)
    if args.train_size > TEST_START:
        print(f"error: train size {args.train_size} overlaps the test block at {TEST_START}")
        return 1
    spectral = SpectralLossConfig(alpha=args.alpha) if args.loss == "spectrogram" \
        else SpectralLossConfig()
    train_config = TrainConfig(
        train_size=args.train_size, seed=args.seed, batch_size=args.batch_size,
        lr=args.lr, max_epochs=args.epochs, loss="spectrogram" if args.loss == "spectrogram" else "mse",
        spectral=spectral)
    provenance = _provenance("train", {
        "data": str(args.data), "model": args.model, "loss": args.loss,
        "train_size": args.train_size, "seed": args.seed, "epochs": args.epochs,
        "batch_size": args.batch_size, "lr": args.lr, "alpha": args.alpha,
        "width": args.width, "modes": args.modes, "blocks": args.blocks,
        "hidden": args.hidden, "no_grid_channel": args.no_grid_channel,
    })
    ckpt = run_training(dataset, args.model, train_config,
                        _model_overrides_from_args(args), Path(args.out), provenance)
    print(f"wrote {ckpt} and {Path(args.out) / 'history.csv'}")
    return 0


# ------------------------------------------------------------------ evaluate

def _check_compatibility(meta: dict, dataset: Dataset):
    if meta.get("case") != dataset.case.value or meta.get("freq_config") != dataset.config.value:
        raise ValueError(
            f"checkpoint was trained on ({meta.get('case')}, {meta.get('freq_config')}), "
            f"dataset is ({dataset.case.value}, {dataset.config.value})")
    if meta.get("n_steps") != dataset.grid.n_steps or meta.get("dt") != dataset.grid.dt:
        raise ValueError("checkpoint and dataset grids differ")


def evaluate_checkpoint(ckpt_path, dataset: Dataset, max_test: int | None = None):
    """MetricsReport for the fixed test slice of `dataset`."""
    from .dynamics import NormStats

    model, meta = load_checkpoint(ckpt_path)
    _check_compatibility(meta, dataset)
    stats = NormStats.from_json(meta["norm_stats"])
    if dataset.n_samples <= TEST_START:
        raise ValueError(f"dataset has no test block (needs more than {TEST_START} samples)")
    test_idx = np.arange(TEST_START, min(dataset.n_samples, PROTOCOL_TOTAL))
    if max_test is not None:
        test_idx = test_idx[:max_test]
    preds = predict(model, dataset.forcing[test_idx], stats)
    truths = dataset.displacements()[test_idx]
    report = evaluate_testset(preds, truths, fs=dataset.grid.fs)
    return report, meta


def cmd_evaluate(args) -> int:
    dataset = load_dataset(args.data)
    report, meta = evaluate_checkpoint(args.checkpoint, dataset, args.max_test)
    train_size = meta.get("train_config", {}).get("train_size", "")
    rows = [[dataset.case.value, dataset.config.value, train_size, name,
             repr(ch.energy_ratio), repr(ch.psd_nrmse), repr(ch.coherence)]
            for name, ch in report.channels.items()]
    provenance = _provenance("evaluate", {
        "checkpoint": str(args.checkpoint), "data": str(args.data),
        "max_test": args.max_test, "n_samples": report.n_samples,
    })
    write_csv(args.out, provenance, METRICS_COLUMNS, rows)
    print(f"wrote {args.out} ({report.n_samples} test samples)")
    return 0


# -------------------------------------------------------------------- stress

def build_stress_signal(kind: str, grid: TimeGrid):
    if kind == "chirp":
        return Chirp()
    if kind == "impulse":
        return Impulse()
    if kind == "step":
        return Step()
    raise ValueError(f"unknown stress signal {kind!r}")


def stress_eval(predict_fn, case: SystemCase, grid: TimeGrid, signal_kind: str):
    """Ground truth + model prediction for one out-of-distribution forcing.

    predict_fn maps a (1, n_steps) physical forcing to (1, 2, n_steps)
    physical displacements.  Returns (forcing, truth, pred) arrays.
    """
    from .dynamics import integrate_states

    spec = build_stress_signal(signal_kind, grid)
    forcing = sample(spec, grid)
    params = SystemParams.for_case(case)
    states = integrate_states(case, params, grid, forcing, forcing_fn=closed_form(spec, grid))
    truth = np.stack([states[:, 0], states[:, 2]])[None]
    pred = predict_fn(forcing[None, :])
    return forcing, truth, pred


def stress_rows(truth: np.ndarray, pred: np.ndarray, fs: float,
                case: str, config: str, signal: str) -> list[list]:
    rows = []
    for ci, name in enumerate(("x1", "x2")):
        er = energy_ratio(pred[0, ci], truth[0, ci])
        sc = coherence_score(pred[0, ci], truth[0, ci], fs)
        rows.append([case, config, signal, name, repr(er), repr(sc)])
    return rows


def cmd_stress(args) -> int:
    from .dynamics import NormStats

    model, meta = load_checkpoint(args.checkpoint)
    stats = NormStats.from_json(meta["norm_stats"])
    case = SystemCase(meta["case"])
    grid = TimeGrid(dt=meta["dt"], n_steps=meta["n_steps"])
    _, truth, pred = stress_eval(lambda f: predict(model, f, stats), case, grid, args.signal)
    rows = stress_rows(truth, pred, grid.fs, case.value, meta["freq_config"], args.signal)
    provenance = _provenance("stress", {
        "checkpoint": str(args.checkpoint), "signal": args.signal,
    })
    write_csv(args.out, provenance, STRESS_COLUMNS, rows)
    print(f"wrote {args.out}")
    return 0


# --------------------------------------------------------------------- sweep

@dataclass(frozen=True)
class ExperimentSpec:
    cases: tuple[str, ...]
    configs: tuple[str, ...]
    train_sizes: tuple[int, ...]
    model: str = "fno"
    loss: str = "mse"
    seed: int = 0
    n_samples: int = PROTOCOL_TOTAL
    n_steps: int = 5000
    dt: float = 0.04
    max_test: int | None = None
    model_overrides: dict = field(default_factory=dict)
    train_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        bad = [s for s in self.train_sizes if s not in SWEEP_SIZES]
        if bad:
            raise ValueError(f"sweep train sizes must be in {SWEEP_SIZES}, got {bad}")
        if self.model not in ("fno", "lstm"):
            raise ValueError(f"unknown model {self.model!r}")
        if self.n_samples <= TEST_START:
            raise ValueError(f"sweep dataset needs more than {TEST_START} samples for the test slice")

    @classmethod
    def from_file(cls, path) -> "ExperimentSpec":
        obj = json.loads(Path(path).read_text())
        for key in ("cases", "configs", "train_sizes"):
            obj[key] = tuple(obj[key])
        return cls(**obj)


def _sweep_dataset_path(out_dir: Path, case: str, config: str) -> Path:
    return out_dir / "data" / f"{case}_{config}.fnod"


def _ensure_sweep_dataset(spec: ExperimentSpec, out_dir: Path, case: str, config: str) -> Path:
    path = _sweep_dataset_path(out_dir, case, config)
    if not path.exists():
        grid = TimeGrid(dt=spec.dt, n_steps=spec.n_steps)
        dataset = generate_dataset(SystemCase.parse(case), FreqConfig.parse(config),
                                   spec.n_samples, spec.seed, grid=grid)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_dataset(path, dataset)
    return path


def _run_sweep_cell(cell_args: tuple) -> tuple[str, str, int, str, list[list]]:
    """One (case, config, size) cell; returns rows for the aggregate."""
    spec_json, out_dir_str, case, config, size = cell_args
    spec = ExperimentSpec(**{**spec_json, "cases": tuple(spec_json["cases"]),
                             "configs": tuple(spec_json["configs"]),
                             "train_sizes": tuple(spec_json["train_sizes"])})
    out_dir = Path(out_dir_str)
    cell_dir = out_dir / "cells" / f"{case}_{config}_{size}"
    done = cell_dir / "DONE"
    cell_csv = cell_dir / "metrics.csv"
    if done.exists():
        from .formats import read_csv
        _, _, rows = read_csv(cell_csv)
        return case, config, size, "done", rows

    try:
        dataset = load_dataset(_sweep_dataset_path(out_dir, case, config))
        train_config = TrainConfig(
            train_size=size, seed=spec.seed, loss=spec.loss,
            spectral=SpectralLossConfig(), **spec.train_overrides)
        provenance = _provenance("sweep-cell", {
            "case": case, "config": config, "size": size, "model": spec.model,
            "loss": spec.loss, "seed": spec.seed,
        })
        ckpt = run_training(dataset, spec.model, train_config, dict(spec.model_overrides),
                            cell_dir, provenance)
        report, _ = evaluate_checkpoint(ckpt, dataset, spec.max_test)
        rows = [[case, config, size, name, repr(ch.energy_ratio), repr(ch.psd_nrmse),
                 repr(ch.coherence), "ok"] for name, ch in report.channels.items()]
        write_csv(cell_csv, provenance, SWEEP_COLUMNS, rows)
        done.write_text("ok\n")
        return case, config, size, "ok", rows
    except Exception as exc:  # partial-failure policy: record and continue
        cell_dir.mkdir(parents=True, exist_ok=True)
        (cell_dir / "FAILED").write_text(f"{exc}\n")
        rows = [[case, config, size, "", "", "", "", f"failed: {exc}"]]
        return case, config, size, "failed", rows


def run_sweep(spec: ExperimentSpec, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    for case in spec.cases:
        for config in spec.configs:
            _ensure_sweep_dataset(spec, out_dir, case, config)

    spec_json = {
        "cases": list(spec.cases), "configs": list(spec.configs),
        "train_sizes": list(spec.train_sizes), "model": spec.model, "loss": spec.loss,
        "seed": spec.seed, "n_samples": spec.n_samples, "n_steps": spec.n_steps,
        "dt": spec.dt, "max_test": spec.max_test,
        "model_overrides": dict(spec.model_overrides),
        "train_overrides": dict(spec.train_overrides),
    }
    cells = [(spec_json, str(out_dir), case, config, size)
             for case in spec.cases for config in spec.configs for size in spec.train_sizes]

    workers = int(os.environ.get("FNODYN_WORKERS", "1"))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_sweep_cell, cells))
    else:
        results = [_run_sweep_cell(cell) for cell in cells]

    all_rows = []
    for case, config, size, status, rows in results:
        all_rows.extend(rows)
    all_rows.sort(key=lambda r: (r[0], r[1], int(r[2]), r[3]))
    aggregate = out_dir / "aggregate.csv"
    write_csv(aggregate, _provenance("sweep", spec_json), SWEEP_COLUMNS, all_rows)
    return aggregate


def cmd_sweep(args) -> int:
    spec = ExperimentSpec.from_file(args.spec)
    aggregate = run_sweep(spec, Path(args.out))
    print(f"wrote {aggregate}")
    return 0


# ---------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fnodyn",
        description="Neural-operator surrogates for a 2DOF structural system: "
                    "data generation, training, evaluation, stress tests, sweeps. "
                    "Binary formats and CSV schemas are documented in FORMATS.md.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="integrate a dataset and write an FNOD1 file")
    p.add_argument("--case", required=True,
                   help="linear | linear_softening | nonlinear | nonlinear_softening")
    p.add_argument("--config", required=True, help="low | high | broadband")
    p.add_argument("--n", type=int, required=True, help="number of samples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=5000, help="samples per trajectory")
    p.add_argument("--dt", type=float, default=0.04, help="sample interval, seconds")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("verify", help="check the nested-subset property of two dataset files")
    p.add_argument("--subset", required=True)
    p.add_argument("--superset", required=True)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("train", help="train one model; writes checkpoint.fnoc + history.csv")
    p.add_argument("--data", required=True, help="FNOD1 dataset file")
    p.add_argument("--model", choices=("fno", "lstm"), default="fno")
    p.add_argument("--loss", choices=("mse", "spectrogram"), default="mse")
    p.add_argument("--train-size", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--alpha", type=float, default=0.8, help="MSE weight in the blended loss")
    p.add_argument("--width", type=int, default=None, help="FNO hidden channels")
    p.add_argument("--modes", type=int, default=None, help="FNO retained frequencies")
    p.add_argument("--blocks", type=int, default=None, help="FNO spectral blocks")
    p.add_argument("--no-grid-channel", action="store_true",
                   help="drop the normalized time coordinate input")
    p.add_argument("--hidden", type=int, default=None, help="LSTM hidden size")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on the fixed test slice")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="metrics CSV path")
    p.add_argument("--max-test", type=int, default=None,
                   help="limit the test slice to its first N samples")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stress", help="out-of-distribution single-signal test (ER + SC)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--signal", choices=("chirp", "impulse", "step"), required=True)
    p.add_argument("--out", required=True, help="stress CSV path")
    p.set_defaults(func=cmd_stress)

    p = sub.add_parser("sweep", help="run a (case x config x size) grid from a JSON spec")
    p.add_argument("--spec", required=True, help="ExperimentSpec JSON file")
    p.add_argument("--out", required=True, help="sweep output directory")
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
