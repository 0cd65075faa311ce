"""Per-device traffic datasets: CSV loading, train/test splitting and synthetic federations.

The on-disk layout follows the N-BaIoT convention of one CSV per traffic class::

    <root>/device_<k>/benign.csv
    <root>/device_<k>/gafgyt_combo.csv
    ...
    <root>/device_<k>/mirai_udpplain.csv

Every file carries one header row of feature names and one numeric row per
instance; the class of a row is given by the file it came from. An optional
``manifest.txt`` in the device directory maps class names to other file names
(``mirai_ack = 1.mirai.ack.csv``).
"""
from __future__ import annotations

import csv
import enum
import io
import logging
import math
import os
import re
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

BENIGN = "benign"
ATTACK_NAMES = (
    "gafgyt_combo",
    "gafgyt_junk",
    "gafgyt_scan",
    "gafgyt_tcp",
    "gafgyt_udp",
    "mirai_ack",
    "mirai_scan",
    "mirai_syn",
    "mirai_udp",
    "mirai_udpplain",
)
CLASS_NAMES = (BENIGN,) + ATTACK_NAMES
MANIFEST_NAME = "manifest.txt"

_DEVICE_DIR = re.compile(r"^device_(\d+)$")


class DataError(ValueError):
    """Raised for unreadable, inconsistent or incomplete input data."""


class LabelMode(enum.Enum):
    BINARY = "binary"
    MULTICLASS = "multiclass"

    @property
    def n_classes(self) -> int:
        return 2 if self is LabelMode.BINARY else len(CLASS_NAMES)

    @classmethod
    def parse(cls, value: "LabelMode | str") -> "LabelMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown label mode {value!r}; expected 'binary' or 'multiclass'") from None


def _frozen_array(a, dtype) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix and labels held by one node.

    ``device_id`` records the original device number when the node was loaded
    from disk (node ids are renumbered after incomplete devices are dropped).
    """

    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...]
    node_id: int = 1
    label_mode: LabelMode = LabelMode.MULTICLASS
    device_id: int | None = None

    def __post_init__(self):
        X = _frozen_array(self.features, np.float64)
        y = _frozen_array(self.labels, np.int64)
        if X.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {X.shape}")
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise ValueError(f"labels shape {y.shape} does not match {X.shape[0]} feature rows")
        names = tuple(str(n) for n in self.feature_names)
        if len(names) != X.shape[1]:
            raise ValueError(f"{len(names)} feature names for {X.shape[1]} columns")
        if not np.isfinite(X).all():
            raise ValueError("features contain NaN or infinite values")
        mode = LabelMode.parse(self.label_mode)
        if y.size and (y.min() < 0 or y.max() >= mode.n_classes):
            raise ValueError(f"label ids must lie in [0, {mode.n_classes - 1}] for {mode.value} mode")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "label_mode", mode)
        object.__setattr__(self, "node_id", int(self.node_id))

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return self.label_mode.n_classes

    def __len__(self) -> int:
        return self.n_rows

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return self.replace(features=self.features[idx], labels=self.labels[idx])

    def replace(self, **changes) -> "Dataset":
        fields = dict(
            features=self.features,
            labels=self.labels,
            feature_names=self.feature_names,
            node_id=self.node_id,
            label_mode=self.label_mode,
            device_id=self.device_id,
        )
        fields.update(changes)
        return Dataset(**fields)

    def to_binary(self) -> "Dataset":
        """Collapse every attack class onto label 1."""
        if self.label_mode is LabelMode.BINARY:
            return self
        return self.replace(labels=(self.labels > 0).astype(np.int64), label_mode=LabelMode.BINARY)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def _read_manifest(path: Path) -> dict[str, str]:
    mapping = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                key, sep, value = line.partition(":")
            if not sep or not key.strip() or not value.strip():
                raise DataError(f"{path}:{lineno}: expected 'class = file.csv', got {raw.strip()!r}")
            key = key.strip().lower()
            if key not in CLASS_NAMES:
                raise DataError(f"{path}:{lineno}: unknown class name {key!r}")
            mapping[key] = value.strip()
    return mapping


def _resolve_class_files(device_dir: Path, device_id: int) -> dict[str, Path]:
    """Map each class name to an existing CSV file, honouring the manifest."""
    manifest = device_dir / MANIFEST_NAME
    explicit = _read_manifest(manifest) if manifest.is_file() else {}
    found = {}
    for name in CLASS_NAMES:
        candidates = []
        if name in explicit:
            candidates.append(device_dir / explicit[name])
        candidates.append(device_dir / f"{name}.csv")
        # Kaggle-style naming: 1.benign.csv, 1.mirai.udpplain.csv
        candidates.append(device_dir / f"{device_id}.{name.replace('_', '.')}.csv")
        for c in candidates:
            if c.is_file():
                found[name] = c
                break
    return found


def read_header(path: Path) -> list[str]:
    with open(path, newline="", encoding="utf-8") as fh:
        try:
            header = next(csv.reader(fh))
        except StopIteration:
            raise DataError(f"{path}:1: empty file (no header row)") from None
    names = [h.strip() for h in header]
    if not names or any(not n for n in names):
        raise DataError(f"{path}:1: blank feature name in header")
    if len(set(names)) != len(names):
        raise DataError(f"{path}:1: duplicate feature names in header")
    return names


def read_feature_csv(path: Path) -> tuple[list[str], np.ndarray]:
    """Parse one class file into (header, float64 matrix); any bad cell is fatal."""
    path = Path(path)
    header = read_header(path)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)  # header-only files are reported below
            values = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.float64, ndmin=2, encoding="utf-8")
    except ValueError as exc:
        # numpy counts data rows from 0; file lines start at 1 and include the header
        msg = str(exc)
        m = re.search(r"at row (\d+)", msg)
        line = f":{int(m.group(1)) + 2}" if m else ""
        raise DataError(f"{path}{line}: {msg}") from None
    if values.size == 0:
        raise DataError(f"{path}:2: empty file (header but no data rows)")
    if values.shape[1] != len(header):
        raise DataError(f"{path}: {values.shape[1]} columns per row but {len(header)} header names")
    bad = ~np.isfinite(values)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise DataError(f"{path}:{r + 2}: non-finite value in column {header[c]!r}")
    return header, values


def load_device(
    dir_path,
    device_id: int,
    label_mode: LabelMode | str = LabelMode.MULTICLASS,
    *,
    node_id: int | None = None,
    require_complete: bool = True,
) -> Dataset:
    """Load every class file of one device and label rows by source file.

    ``dir_path`` is either the dataset root (containing ``device_<k>``
    directories) or the device directory itself. With ``require_complete``
    the device must provide all ten attack files; devices lacking some of
    them are rejected with a "missing data" error.
    """
    mode = LabelMode.parse(label_mode)
    root = Path(dir_path)
    device_dir = root / f"device_{device_id}"
    if not device_dir.is_dir():
        device_dir = root
    if not device_dir.is_dir():
        raise DataError(f"{device_dir}: device directory does not exist")

    files = _resolve_class_files(device_dir, device_id)
    if BENIGN not in files:
        raise DataError(f"{device_dir}: missing benign file (benign.csv)")
    missing = [n for n in ATTACK_NAMES if n not in files]
    if missing and require_complete:
        raise DataError(f"{device_dir}: device {device_id} has missing data: no file for {', '.join(missing)}")
    if len(files) == 1:
        raise DataError(f"{device_dir}: missing data: no attack files")

    benign_header, benign_rows = read_feature_csv(files[BENIGN])
    blocks, labels = [benign_rows], [np.zeros(len(benign_rows), dtype=np.int64)]
    for class_id, name in enumerate(ATTACK_NAMES, start=1):
        if name not in files:
            continue
        header, rows = read_feature_csv(files[name])
        if header != benign_header:
            if sorted(header) != sorted(benign_header):
                extra = sorted(set(header) ^ set(benign_header))
                raise DataError(f"{files[name]}:1: header mismatch with {files[BENIGN].name}: {extra[:5]}")
            order = [header.index(h) for h in benign_header]
            rows = rows[:, order]
        blocks.append(rows)
        label = class_id if mode is LabelMode.MULTICLASS else 1
        labels.append(np.full(len(rows), label, dtype=np.int64))

    return Dataset(
        features=np.vstack(blocks),
        labels=np.concatenate(labels),
        feature_names=tuple(benign_header),
        node_id=device_id if node_id is None else node_id,
        label_mode=mode,
        device_id=device_id,
    )


def discover_devices(root) -> list[int]:
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root}: dataset root does not exist")
    ids = []
    for entry in root.iterdir():
        m = _DEVICE_DIR.match(entry.name)
        if m and entry.is_dir():
            ids.append(int(m.group(1)))
    if not ids:
        raise DataError(f"{root}: no device_<k> directories found")
    return sorted(ids)


def load_federation(
    root,
    label_mode: LabelMode | str = LabelMode.MULTICLASS,
    *,
    devices: Sequence[int] | None = None,
    require_complete: bool = True,
    jobs: int = 1,
) -> list[Dataset]:
    """Load all devices under ``root`` as nodes 1..n in ascending device order.

    Devices rejected for missing data are skipped (the N-BaIoT devices 3 and
    7); any other data error propagates.
    """
    ids = list(devices) if devices is not None else discover_devices(root)

    def _load(dev):
        try:
            return load_device(root, dev, label_mode, require_complete=require_complete)
        except DataError as exc:
            if "missing data" in str(exc):
                logger.warning("skipping device %d: %s", dev, exc)
                return None
            raise

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        loaded = list(pool.map(_load, ids))
    nodes = [ds for ds in loaded if ds is not None]
    if not nodes:
        raise DataError(f"{root}: no complete devices")
    return [ds.replace(node_id=i) for i, ds in enumerate(nodes, start=1)]


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def _format_rows(rows: np.ndarray, extra: Iterable | None = None) -> str:
    buf = io.StringIO()
    if extra is None:
        for row in rows.tolist():
            buf.write(",".join(map(repr, row)))
            buf.write("\n")
    else:
        for row, e in zip(rows.tolist(), extra):
            buf.write(",".join(map(repr, row)))
            buf.write(f",{e}\n")
    return buf.getvalue()


def to_csv_bytes(ds: Dataset, include_labels: bool = True) -> bytes:
    """Encode a dataset as CSV (shortest round-trip float repr)."""
    header = list(ds.feature_names) + (["label"] if include_labels else [])
    body = _format_rows(ds.features, ds.labels.tolist() if include_labels else None)
    return (",".join(header) + "\n" + body).encode("utf-8")


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def write_device_csvs(ds: Dataset, device_dir) -> list[Path]:
    """Write a dataset back out in the per-class file layout ``load_device`` reads."""
    device_dir = Path(device_dir)
    device_dir.mkdir(parents=True, exist_ok=True)
    header = ",".join(ds.feature_names) + "\n"
    written = []
    for class_id in range(ds.n_classes):
        mask = ds.labels == class_id
        if not mask.any():
            continue
        if ds.label_mode is LabelMode.BINARY and class_id == 1:
            name = "attack"
        else:
            name = CLASS_NAMES[class_id]
        path = device_dir / f"{name}.csv"
        _atomic_write_bytes(path, (header + _format_rows(ds.features[mask])).encode("utf-8"))
        written.append(path)
    if ds.label_mode is LabelMode.BINARY and (device_dir / "attack.csv").exists():
        # the loader has no canonical "attack" class; route it through the manifest
        _atomic_write_bytes(device_dir / MANIFEST_NAME, b"mirai_ack = attack.csv\n")
    return written


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if not 0.0 < float(self.train_fraction) < 1.0:
            raise ValueError(f"train_fraction must be strictly between 0 and 1, got {self.train_fraction}")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _stratified_quota(counts: np.ndarray, frac: float) -> np.ndarray:
    """Per-class train counts summing to round(frac * n) where the caps allow it.

    Each class gets floor or ceil of its exact share, clamped so that both
    sides keep at least one row of every class.
    """
    exact = counts * frac
    lo = np.clip(np.floor(exact), 1, counts - 1).astype(np.int64)
    hi = np.clip(np.ceil(exact), 1, counts - 1).astype(np.int64)
    alloc = lo.copy()
    target = _round_half_up(frac * counts.sum())
    remainder = exact - np.floor(exact)
    # largest remainder first; stable so ties favour the lower class id
    for c in np.argsort(-remainder, kind="stable"):
        if alloc.sum() >= target:
            break
        if alloc[c] < hi[c]:
            alloc[c] += 1
    return alloc


def split(ds: Dataset, spec: SplitSpec = SplitSpec()) -> tuple[Dataset, Dataset]:
    """Seeded train/test partition; row order within each side follows the input."""
    n = ds.n_rows
    if n == 0:
        raise DataError("cannot split an empty dataset")
    rng = np.random.default_rng(spec.seed)
    if spec.stratified:
        classes, counts = np.unique(ds.labels, return_counts=True)
        if (counts < 2).any():
            bad = classes[counts < 2].tolist()
            raise DataError(f"stratified split needs at least 2 rows per class; classes {bad} have 1")
        quota = _stratified_quota(counts, spec.train_fraction)
        train_parts = []
        for c, q in zip(classes, quota):
            members = np.flatnonzero(ds.labels == c)
            train_parts.append(rng.permutation(members)[:q])
        train_idx = np.sort(np.concatenate(train_parts))
    else:
        n_train = _round_half_up(spec.train_fraction * n)
        if n_train < 1 or n_train > n - 1:
            raise DataError(f"{n} rows cannot be split {spec.train_fraction:g}/{1 - spec.train_fraction:g}")
        train_idx = np.sort(rng.permutation(n)[:n_train])
    mask = np.zeros(n, dtype=bool)
    mask[train_idx] = True
    return ds.subset(np.flatnonzero(mask)), ds.subset(np.flatnonzero(~mask))


# ---------------------------------------------------------------------------
# Synthetic federations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticFederationSpec:
    """Gaussian class clusters per node, displaced per node to create non-IID drift.

    Each class mean is ``±class_separation`` on a random ``informative_fraction``
    of the features and 0 elsewhere, so classes are separable along feature
    axes the way N-BaIoT traffic statistics are. Every node adds its own
    offset vector with per-feature scale ``node_shift`` to all of its class
    means. Within-class noise is unit variance per feature.
    """

    n_nodes: int = 7
    rows_per_node: int = 2000
    n_features: int = 115
    n_classes: int = 11
    class_separation: float = 4.0
    node_shift: float = 1.5
    seed: int = 0
    informative_fraction: float = 0.3

    def __post_init__(self):
        if self.n_nodes < 2:
            raise ValueError("n_nodes must be at least 2")
        for name in ("rows_per_node", "n_features"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_classes not in (2, len(CLASS_NAMES)):
            raise ValueError(f"n_classes must be 2 (binary) or {len(CLASS_NAMES)} (multiclass)")
        if not (self.class_separation > 0 and math.isfinite(self.class_separation)):
            raise ValueError("class_separation must be positive and finite")
        if not (self.node_shift >= 0 and math.isfinite(self.node_shift)):
            raise ValueError("node_shift must be non-negative and finite")
        if not 0 < self.informative_fraction <= 1:
            raise ValueError("informative_fraction must lie in (0, 1]")

    @property
    def label_mode(self) -> LabelMode:
        return LabelMode.BINARY if self.n_classes == 2 else LabelMode.MULTICLASS


def generate_synthetic_federation(spec: SyntheticFederationSpec) -> list[Dataset]:
    seeds = np.random.SeedSequence(spec.seed).spawn(spec.n_nodes + 1)
    shared = np.random.default_rng(seeds[0])
    half = spec.informative_fraction / 2
    signs = shared.choice([-1.0, 0.0, 1.0], size=(spec.n_classes, spec.n_features), p=[half, 1 - 2 * half, half])
    class_means = spec.class_separation * signs
    names = tuple(f"feature_{j:03d}" for j in range(spec.n_features))

    per_class = np.full(spec.n_classes, spec.rows_per_node // spec.n_classes)
    per_class[: spec.rows_per_node % spec.n_classes] += 1
    base_labels = np.repeat(np.arange(spec.n_classes), per_class)

    nodes = []
    for k in range(spec.n_nodes):
        rng = np.random.default_rng(seeds[k + 1])
        offset = spec.node_shift * rng.standard_normal(spec.n_features)
        labels = rng.permutation(base_labels)
        X = class_means[labels] + offset + rng.standard_normal((spec.rows_per_node, spec.n_features))
        nodes.append(Dataset(X, labels, names, node_id=k + 1, label_mode=spec.label_mode))
    return nodes
