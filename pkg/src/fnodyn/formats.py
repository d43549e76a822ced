"""On-disk containers: FNOD1 datasets, FNOC1 checkpoints, provenance CSVs.

Both binary formats share the same framing: a 5-byte magic, a 4-byte
little-endian header length, a UTF-8 JSON header, then contiguous
little-endian float64 blocks.  Nothing time- or environment-dependent is
written, so saving the same object twice produces identical bytes, and
save -> load -> save is byte-identical.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .dynamics import CHANNELS, Dataset, NormStats, SystemCase
from .signals import FreqConfig, TimeGrid

DATASET_MAGIC = b"FNOD1"
CHECKPOINT_MAGIC = b"FNOC1"
FORMAT_VERSION = 1


def _write_container(path, magic: bytes, header: dict, blocks: list[np.ndarray]):
    payload = json.dumps(header, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)
        for block in blocks:
            fh.write(np.ascontiguousarray(block, dtype="<f8").tobytes())


def _read_container(path, magic: bytes) -> tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    if raw[:5] != magic:
        raise ValueError(f"{path}: bad magic {raw[:5]!r}, expected {magic!r}")
    (header_len,) = struct.unpack("<I", raw[5:9])
    header = json.loads(raw[9: 9 + header_len].decode("utf-8"))
    return header, raw[9 + header_len:]


def save_dataset(path, dataset: Dataset):
    header = {
        "format_version": FORMAT_VERSION,
        "case": dataset.case.value,
        "freq_config": dataset.config.value,
        "n_samples": dataset.n_samples,
        "n_steps": dataset.grid.n_steps,
        "dt": dataset.grid.dt,
        "seed": dataset.seed,
        "channel_names": list(CHANNELS),
        "norm_stats": dataset.norm_stats.to_json(),
    }
    blocks = [dataset.channel(name) for name in CHANNELS]
    _write_container(path, DATASET_MAGIC, header, blocks)


def load_dataset(path) -> Dataset:
    header, data = _read_container(path, DATASET_MAGIC)
    n, steps = header["n_samples"], header["n_steps"]
    names = header["channel_names"]
    per_channel = n * steps * 8
    channels = {}
    for i, name in enumerate(names):
        buf = data[i * per_channel: (i + 1) * per_channel]
        channels[name] = np.frombuffer(buf, dtype="<f8").reshape(n, steps).astype(np.float64)
    return Dataset(
        case=SystemCase(header["case"]),
        config=FreqConfig(header["freq_config"]),
        grid=TimeGrid(dt=header["dt"], n_steps=steps),
        forcing=channels["forcing"],
        x1=channels["x1"],
        x2=channels["x2"],
        seed=header["seed"],
        norm_stats=NormStats.from_json(header["norm_stats"]),
    )


def verify_prefix(subset_path, superset_path) -> int:
    """Check the nested-subset property between two dataset files.

    Returns the number of shared samples; raises ValueError on mismatch.
    """
    small = load_dataset(subset_path)
    big = load_dataset(superset_path)
    if small.seed != big.seed:
        raise ValueError(f"seeds differ: {small.seed} vs {big.seed}")
    if (small.case, small.config) != (big.case, big.config):
        raise ValueError("case/config differ between files")
    if (small.grid.dt, small.grid.n_steps) != (big.grid.dt, big.grid.n_steps):
        raise ValueError("grids differ between files")
    n = min(small.n_samples, big.n_samples)
    for name in CHANNELS:
        if not np.array_equal(small.channel(name)[:n], big.channel(name)[:n]):
            raise ValueError(f"channel {name!r}: first {n} samples are not bit-identical")
    return n


def save_checkpoint(path, model, meta: dict | None = None):
    """Write a model checkpoint; `meta` carries training provenance
    (normalization stats, dataset identity, arguments)."""
    manifest = []
    offset = 0
    blocks = []
    for name, data in model.state_arrays().items():
        manifest.append({"name": name, "shape": list(data.shape), "offset": offset})
        offset += data.size * 8
        blocks.append(data)
    header = {
        "format_version": FORMAT_VERSION,
        "model_kind": model.kind,
        "config": model.config.to_json(),
        "params": manifest,
        "meta": meta or {},
    }
    _write_container(path, CHECKPOINT_MAGIC, header, blocks)


def load_checkpoint(path):
    """Returns (model, meta); the model kind is dispatched from the header."""
    header, data = _read_container(path, CHECKPOINT_MAGIC)
    kind = header["model_kind"]
    if kind == "fno":
        from .fno import FnoConfig, init_params
        config = FnoConfig.from_json(header["config"])
        model = init_params(config, seed=0)
    elif kind == "lstm":
        from .lstm import LstmConfig, init_params
        config = LstmConfig.from_json(header["config"])
        model = init_params(config, seed=0)
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    arrays = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arrays[entry["name"]] = np.frombuffer(
            data[start: start + count * 8], dtype="<f8").reshape(shape).astype(np.float64)
    model.load_state(arrays)
    return model, header["meta"]


def write_csv(path, provenance: dict, columns: list[str], rows: list[list]):
    """CSV with '# key=value' provenance comment lines before the header."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for key, value in provenance.items():
            fh.write(f"# {key}={value}\n")
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow(row)


def read_csv(path) -> tuple[dict, list[str], list[list[str]]]:
    provenance = {}
    with open(path, newline="", encoding="utf-8") as fh:
        lines = []
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                provenance[key.strip()] = value
            else:
                lines.append(line)
    reader = csv.reader(lines)
    columns = next(reader)
    return provenance, columns, [row for row in reader]
