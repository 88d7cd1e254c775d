"""Synthetic two-modality dataset, deterministic splitting and file I/O.

Two on-disk formats are supported:

* ``jsonl``: one object per line,
  ``{"eeg": {"shape": [C, T], "data": [...]}, "om": {"shape": [D, T], "data": [...]}, "label": 0}``
  with row-major data.
* ``csv``: a directory holding ``eeg.csv`` and ``om.csv`` (one flattened
  row-major sample per line), ``labels.csv`` (one integer per line) and a
  ``manifest.json`` sidecar giving the per-sample shapes.

Numbers are written as decimals with 9 significant digits. The generator
rounds its output to the same precision, so generated datasets survive a
write/load cycle bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

SIG_DIGITS = 9


class DataFormatError(ValueError):
    """Malformed dataset file; the message names the file and line."""


@dataclass(frozen=True)
class ModalitySample:
    eeg: np.ndarray
    om: np.ndarray
    label: int

    def __post_init__(self):
        eeg = np.asarray(self.eeg, dtype=np.float64)
        om = np.asarray(self.om, dtype=np.float64)
        if eeg.ndim != 2 or om.ndim != 2 or eeg.size == 0 or om.size == 0:
            raise ValueError(f"eeg and om must be non-empty matrices, got {eeg.shape} and {om.shape}")
        if not (np.all(np.isfinite(eeg)) and np.all(np.isfinite(om))):
            raise ValueError("sample contains non-finite values")
        if int(self.label) not in (0, 1) or int(self.label) != self.label:
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")
        object.__setattr__(self, "eeg", eeg)
        object.__setattr__(self, "om", om)
        object.__setattr__(self, "label", int(self.label))


@dataclass(frozen=True)
class GeneratorConfig:
    n_samples: int = 3000
    eeg_channels: int = 8
    om_dims: int = 4
    timesteps: int = 128
    class_balance: float = 0.5
    noise_sd: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n_samples", "eeg_channels", "om_dims", "timesteps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.class_balance < 1:
            raise ValueError(f"class_balance must lie in (0, 1), got {self.class_balance}")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be non-negative")


def _round_sig(x: np.ndarray) -> np.ndarray:
    return np.array([float(format(v, f".{SIG_DIGITS}g")) for v in x.ravel()]).reshape(x.shape)


def _pink_like(rng: np.random.Generator, shape: tuple[int, int], sd: float) -> np.ndarray:
    # AR(1) with strong persistence, rescaled to unit stationary variance
    phi = 0.9
    e = rng.standard_normal(shape) * np.sqrt(1 - phi**2)
    out = np.empty(shape)
    out[:, 0] = rng.standard_normal(shape[0])
    for t in range(1, shape[1]):
        out[:, t] = phi * out[:, t - 1] + e[:, t]
    return sd * out


def _burst(rng: np.random.Generator, channels: int, timesteps: int, amplitude: float) -> np.ndarray:
    out = np.zeros((channels, timesteps))
    subset = rng.random(channels) < 0.5
    subset[rng.integers(channels)] = True
    width = max(2, timesteps // 2)
    start = rng.integers(0, timesteps - width + 1)
    t = np.arange(width)
    envelope = np.sin(np.pi * (t + 0.5) / width) ** 2
    phase = rng.uniform(0, 2 * np.pi, size=channels)
    cycles = 6.0
    wave = np.sin(2 * np.pi * cycles * t[None, :] / width + phase[:, None])
    out[subset, start : start + width] = amplitude * envelope * wave[subset]
    return out


def generate(cfg: GeneratorConfig) -> list[ModalitySample]:
    """Draw a labelled synthetic dataset; a pure function of ``cfg``.

    Class 1 carries a windowed sine burst on a random EEG channel subset and
    an extra white-noise variance term on the OM channels. Both are scaled by
    one shared per-sample amplitude, which couples the two modalities.
    """
    rng = np.random.default_rng(cfg.seed)
    samples = []
    for _ in range(cfg.n_samples):
        z = int(rng.random() < cfg.class_balance)
        amplitude = rng.uniform(0.5, 1.5)
        eeg = _pink_like(rng, (cfg.eeg_channels, cfg.timesteps), cfg.noise_sd)
        burst = _burst(rng, cfg.eeg_channels, cfg.timesteps, 2.0 * amplitude)
        walk = np.cumsum(rng.standard_normal((cfg.om_dims, cfg.timesteps)) * 0.1 * cfg.noise_sd, axis=1)
        shift = amplitude * rng.standard_normal((cfg.om_dims, cfg.timesteps))
        eeg = eeg + z * burst
        om = walk + z * shift
        samples.append(ModalitySample(_round_sig(eeg), _round_sig(om), z))
    return samples


def stack(samples: Sequence[ModalitySample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Arrays ``(eeg [N, C, T], om [N, D, T'], labels [N])``."""
    if not samples:
        raise ValueError("empty dataset")
    eeg = np.stack([s.eeg for s in samples])
    om = np.stack([s.om for s in samples])
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return eeg, om, labels


def split(samples: Sequence[ModalitySample], train_frac: float = 0.7, seed: int = 0):
    """Stratified shuffled split; both parts contain both classes when possible."""
    if not 0 < train_frac < 1:
        raise ValueError(f"train_frac must lie in (0, 1), got {train_frac}")
    if not samples:
        raise ValueError("cannot split an empty dataset")
    n = len(samples)
    n_train = int(round(train_frac * n))
    n_train = min(max(n_train, 1), n - 1) if n > 1 else n_train
    rng = np.random.default_rng(seed)
    labels = np.array([s.label for s in samples])
    groups = [rng.permutation(np.flatnonzero(labels == c)) for c in (0, 1)]

    quotas = [train_frac * len(g) for g in groups]
    take = [int(np.floor(q)) for q in quotas]
    # largest remainder so the total hits n_train exactly
    order = sorted(range(2), key=lambda c: quotas[c] - take[c], reverse=True)
    for c in order:
        if sum(take) < n_train and take[c] < len(groups[c]):
            take[c] += 1
    while sum(take) > n_train:
        c = max(range(2), key=lambda c: take[c])
        take[c] -= 1
    for c in range(2):
        size = len(groups[c])
        if size >= 2:
            if take[c] == 0:
                take[c], take[1 - c] = 1, take[1 - c] - 1
            elif take[c] == size:
                take[c], take[1 - c] = size - 1, take[1 - c] + 1

    train_idx = np.concatenate([groups[c][: take[c]] for c in range(2)])
    test_idx = np.concatenate([groups[c][take[c] :] for c in range(2)])
    train_idx = train_idx[rng.permutation(train_idx.size)]
    test_idx = test_idx[rng.permutation(test_idx.size)]
    return [samples[i] for i in train_idx], [samples[i] for i in test_idx]


def _fmt(values: np.ndarray) -> str:
    return ",".join(format(float(v), f".{SIG_DIGITS}g") for v in values.ravel())


def write_jsonl(samples: Sequence[ModalitySample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(
                '{"eeg": {"shape": [%d, %d], "data": [%s]}, "om": {"shape": [%d, %d], "data": [%s]}, "label": %d}\n'
                % (*s.eeg.shape, _fmt(s.eeg), *s.om.shape, _fmt(s.om), s.label)
            )


def write_csv(samples: Sequence[ModalitySample], directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    eeg_shape, om_shape = samples[0].eeg.shape, samples[0].om.shape
    with open(directory / "eeg.csv", "w") as fe, open(directory / "om.csv", "w") as fo, open(
        directory / "labels.csv", "w"
    ) as fl:
        for s in samples:
            fe.write(_fmt(s.eeg) + "\n")
            fo.write(_fmt(s.om) + "\n")
            fl.write(f"{s.label}\n")
    manifest = {"format": "csv", "n_samples": len(samples), "eeg_shape": list(eeg_shape), "om_shape": list(om_shape)}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _matrix(block, where: str) -> np.ndarray:
    try:
        shape = tuple(int(d) for d in block["shape"])
        data = np.asarray(block["data"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"{where}: expected {{'shape': [r, c], 'data': [...]}}") from exc
    if len(shape) != 2 or data.ndim != 1 or data.size != shape[0] * shape[1]:
        raise DataFormatError(f"{where}: data length {data.size} does not match shape {list(shape)}")
    return data.reshape(shape)


def _load_jsonl(path: Path) -> list[ModalitySample]:
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{where}: unparseable record ({exc.msg} at column {exc.colno})") from exc
            if not isinstance(record, dict) or not {"eeg", "om", "label"} <= record.keys():
                raise DataFormatError(f"{where}: record needs fields eeg, om, label")
            label = record["label"]
            if not isinstance(label, int) or isinstance(label, bool) or label not in (0, 1):
                raise DataFormatError(f"{where}: label must be 0 or 1, got {label!r}")
            try:
                samples.append(ModalitySample(_matrix(record["eeg"], where + " eeg"), _matrix(record["om"], where + " om"), label))
            except DataFormatError:
                raise
            except ValueError as exc:
                raise DataFormatError(f"{where}: {exc}") from exc
    if not samples:
        raise DataFormatError(f"{path}: no records")
    return samples


def _read_rows(path: Path, width: int) -> list[np.ndarray]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = np.array([float(x) for x in line.strip().split(",")])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
            if row.size != width:
                raise DataFormatError(f"{path}:{lineno}: expected {width} values, got {row.size}")
            rows.append(row)
    return rows


def _load_csv(directory: Path) -> list[ModalitySample]:
    manifest_path = directory / "manifest.json"
    try:
        manifest = json.loads(manifest_path.read_text())
        eeg_shape = tuple(int(d) for d in manifest["eeg_shape"])
        om_shape = tuple(int(d) for d in manifest["om_shape"])
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"{manifest_path}: missing or invalid manifest ({exc})") from exc
    eeg = _read_rows(directory / "eeg.csv", int(np.prod(eeg_shape)))
    om = _read_rows(directory / "om.csv", int(np.prod(om_shape)))
    labels = []
    with open(directory / "labels.csv", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            text = line.strip()
            if text not in ("0", "1"):
                raise DataFormatError(f"{directory / 'labels.csv'}:{lineno}: label must be 0 or 1, got {text!r}")
            labels.append(int(text))
    n = manifest.get("n_samples", len(labels))
    if not len(eeg) == len(om) == len(labels) == n:
        raise DataFormatError(
            f"{directory}: row counts disagree (eeg {len(eeg)}, om {len(om)}, labels {len(labels)}, manifest {n})"
        )
    return [ModalitySample(e.reshape(eeg_shape), o.reshape(om_shape), y) for e, o, y in zip(eeg, om, labels)]


def load_external(path, format: str | None = None) -> list[ModalitySample]:  # noqa: A002
    """Load a dataset written in the ``jsonl`` or ``csv`` layout.

    ``format`` defaults to ``csv`` for directories and ``jsonl`` otherwise.
    A directory whose manifest says ``jsonl`` loads ``data.jsonl`` inside it.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if path.is_dir():
        manifest = path / "manifest.json"
        declared = json.loads(manifest.read_text()).get("format") if manifest.exists() else None
        fmt = format or declared or "csv"
        if fmt == "jsonl":
            return _load_jsonl(path / "data.jsonl")
        if fmt == "csv":
            return _load_csv(path)
    else:
        fmt = format or "jsonl"
        if fmt == "jsonl":
            return _load_jsonl(path)
    raise ValueError(f"unsupported format {fmt!r} for {path}")


def write_dataset(samples: Sequence[ModalitySample], directory, format: str = "jsonl", config=None) -> Path:  # noqa: A002
    """Write ``samples`` plus a manifest into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if format == "csv":
        write_csv(samples, directory)
    elif format == "jsonl":
        write_jsonl(samples, directory / "data.jsonl")
    else:
        raise ValueError(f"unsupported format {format!r}")
    labels = [s.label for s in samples]
    manifest = {
        "format": format,
        "n_samples": len(samples),
        "eeg_shape": list(samples[0].eeg.shape),
        "om_shape": list(samples[0].om.shape),
        "class_counts": [labels.count(0), labels.count(1)],
    }
    if config is not None:
        manifest["generator"] = asdict(config)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return directory
