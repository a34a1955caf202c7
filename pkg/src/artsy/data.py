"""Task streams: synthetic Gaussian generation, on-disk format, batching.

On-disk layout is a JSON manifest plus one binary file per split. Binary
files carry a 16-byte header (magic "ACLF", version u32=1, rows u32, cols
u32, little-endian) followed by row-major little-endian float32 with
cols = feature_dim + 1; the last column is the float-encoded integer label.
Features are widened to float64 on load.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from . import rng as rngmod
from .errors import (
    ClassOverlapError,
    DataSizeError,
    FeatureDimMismatchError,
    GenerationError,
    HeaderError,
    LabelError,
    ManifestError,
    MissingDataFileError,
)

MAGIC = b"ACLF"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIII")
TRAIN_FRACTION = 0.8


@dataclass
class Split:
    X: np.ndarray  # (n, d) float64
    y: np.ndarray  # (n,) int64

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        self.y = np.ascontiguousarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.y.ndim != 1 or self.X.shape[0] != self.y.shape[0]:
            raise GenerationError(f"split shapes inconsistent: X {self.X.shape}, y {self.y.shape}")

    def __len__(self) -> int:
        return self.X.shape[0]


@dataclass
class Task:
    task_id: int
    classes: tuple[int, ...]
    train: Split
    test: Split


@dataclass
class TaskStream:
    feature_dim: int
    base: Optional[Task]
    incremental: list[Task]
    pre_embedded: bool = False
    params: dict = field(default_factory=dict)

    @property
    def num_tasks(self) -> int:
        return len(self.incremental)

    def all_tasks(self) -> list[Task]:
        return ([self.base] if self.base is not None else []) + self.incremental


def gen_gaussian_stream(
    seed: int,
    num_tasks: int = 5,
    classes_per_task: int = 2,
    dim: int = 16,
    samples_per_class: int = 100,
    separation: float = 6.0,
    within_std: float = 1.0,
) -> TaskStream:
    """Gaussian blobs with disjoint label sets: every class mean (base and
    incremental alike) is drawn uniformly on the sphere of radius
    separation * within_std * sqrt(dim) around the origin, with isotropic
    within_std noise around it. separation controls how far apart class
    islands sit and therefore overall difficulty. Each class is split 80/20
    into train/test; task 0 is a base task generated the same way, used only
    for backbone pre-training.

    Features are quantized through float32 so the on-disk format round-trips
    bit-exactly.
    """
    if num_tasks < 1:
        raise GenerationError(f"num_tasks must be >= 1, got {num_tasks}")
    if classes_per_task < 2:
        raise GenerationError(f"classes_per_task must be >= 2, got {classes_per_task}")
    if dim < 2:
        raise GenerationError(f"dim must be >= 2, got {dim}")
    if samples_per_class < 5:
        raise GenerationError(f"samples_per_class must be >= 5, got {samples_per_class}")
    if separation <= 0 or within_std <= 0:
        raise GenerationError(f"separation and within_std must be positive, got {separation}, {within_std}")

    rng = rngmod.child_rng(seed, rngmod.STREAM)
    radius = separation * within_std * np.sqrt(dim)

    def sphere_point(r: float) -> np.ndarray:
        direction = rng.normal(size=dim)
        return direction * (r / np.linalg.norm(direction))

    def sample_class(mean: np.ndarray, std: float, n: int) -> np.ndarray:
        samples = mean + std * rng.normal(size=(n, dim))
        return samples.astype(np.float32).astype(np.float64)

    def make_task(task_id: int, class_ids: list[int]) -> Task:
        xs_train, ys_train, xs_test, ys_test = [], [], [], []
        for cid in class_ids:
            mean = sphere_point(radius)
            samples = sample_class(mean, within_std, samples_per_class)
            perm = rng.permutation(samples_per_class)
            n_train = int(samples_per_class * TRAIN_FRACTION)
            xs_train.append(samples[perm[:n_train]])
            ys_train.append(np.full(n_train, cid, dtype=np.int64))
            xs_test.append(samples[perm[n_train:]])
            ys_test.append(np.full(samples_per_class - n_train, cid, dtype=np.int64))
        return Task(
            task_id=task_id,
            classes=tuple(class_ids),
            train=Split(np.vstack(xs_train), np.concatenate(ys_train)),
            test=Split(np.vstack(xs_test), np.concatenate(ys_test)),
        )

    base = make_task(0, list(range(classes_per_task)))
    incremental = []
    for t in range(1, num_tasks + 1):
        start = classes_per_task + (t - 1) * classes_per_task
        incremental.append(make_task(t, list(range(start, start + classes_per_task))))

    params = {
        "seed": seed,
        "num_tasks": num_tasks,
        "classes_per_task": classes_per_task,
        "dim": dim,
        "samples_per_class": samples_per_class,
        "separation": separation,
        "within_std": within_std,
    }
    return TaskStream(feature_dim=dim, base=base, incremental=incremental, params=params)


def _write_split(path: Path, split: Split, feature_dim: int) -> None:
    rows = len(split)
    cols = feature_dim + 1
    payload = np.empty((rows, cols), dtype="<f4")
    payload[:, :feature_dim] = split.X
    payload[:, feature_dim] = split.y
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, rows, cols))
        fh.write(payload.tobytes())


def write_feature_stream(stream: TaskStream, out_dir) -> Path:
    """Write manifest.json plus one train/test file pair per task; returns the
    manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for task in stream.all_tasks():
        train_file = f"task{task.task_id}_train.bin"
        test_file = f"task{task.task_id}_test.bin"
        _write_split(out / train_file, task.train, stream.feature_dim)
        _write_split(out / test_file, task.test, stream.feature_dim)
        entries.append(
            {
                "task_id": task.task_id,
                "classes": [int(c) for c in task.classes],
                "train_file": train_file,
                "test_file": test_file,
            }
        )
    manifest = {
        "version": FORMAT_VERSION,
        "feature_dim": stream.feature_dim,
        "pre_embedded": stream.pre_embedded,
        "tasks": entries,
    }
    path = out / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path


def _read_split(path: Path, feature_dim: int, declared: tuple[int, ...]) -> Split:
    if not path.exists():
        raise MissingDataFileError(f"data file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise HeaderError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, rows, cols = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise HeaderError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise HeaderError(f"{path}: unsupported version {version}, expected {FORMAT_VERSION}")
    if cols != feature_dim + 1:
        raise FeatureDimMismatchError(
            f"{path}: {cols - 1} feature columns but manifest declares feature_dim={feature_dim}"
        )
    expected = _HEADER.size + rows * cols * 4
    if len(raw) != expected:
        raise DataSizeError(f"{path}: expected {expected} bytes for {rows}x{cols}, found {len(raw)}")
    payload = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(rows, cols)
    X = payload[:, :feature_dim].astype(np.float64)
    labels_f = payload[:, feature_dim].astype(np.float64)
    labels = labels_f.astype(np.int64)
    if not np.all(labels_f == labels):
        raise LabelError(f"{path}: label column contains non-integer values")
    extras = sorted(set(labels.tolist()) - set(declared))
    if extras:
        raise LabelError(f"{path}: labels {extras} not in declared classes {sorted(declared)}")
    return Split(X, labels)


def load_feature_stream(manifest_path) -> TaskStream:
    path = Path(manifest_path)
    if not path.exists():
        raise MissingDataFileError(f"manifest not found: {path}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(manifest, dict):
        raise ManifestError(f"{path}: manifest must be a JSON object")
    for key in ("version", "feature_dim", "tasks"):
        if key not in manifest:
            raise ManifestError(f"{path}: manifest missing key '{key}'")
    if manifest["version"] != FORMAT_VERSION:
        raise ManifestError(f"{path}: unsupported manifest version {manifest['version']}")
    feature_dim = manifest["feature_dim"]
    if not isinstance(feature_dim, int) or feature_dim < 1:
        raise ManifestError(f"{path}: feature_dim must be a positive integer, got {feature_dim!r}")
    pre_embedded = bool(manifest.get("pre_embedded", False))
    entries = manifest["tasks"]
    if not isinstance(entries, list) or not entries:
        raise ManifestError(f"{path}: 'tasks' must be a non-empty list")

    tasks: dict[int, Task] = {}
    seen_classes: dict[int, int] = {}
    for entry in entries:
        if not isinstance(entry, dict):
            raise ManifestError(f"{path}: task entries must be objects")
        for key in ("task_id", "classes", "train_file", "test_file"):
            if key not in entry:
                raise ManifestError(f"{path}: task entry missing key '{key}'")
        tid = entry["task_id"]
        if not isinstance(tid, int) or tid < 0:
            raise ManifestError(f"{path}: task_id must be a non-negative integer, got {tid!r}")
        if tid in tasks:
            raise ManifestError(f"{path}: duplicate task_id {tid}")
        classes = entry["classes"]
        if not isinstance(classes, list) or not classes or not all(isinstance(c, int) for c in classes):
            raise ManifestError(f"{path}: task {tid} classes must be a non-empty list of integers")
        overlap = sorted(c for c in classes if c in seen_classes)
        if overlap:
            other = seen_classes[overlap[0]]
            raise ClassOverlapError(f"{path}: classes {overlap} appear in both task {other} and task {tid}")
        for c in classes:
            seen_classes[c] = tid
        declared = tuple(sorted(classes))
        train = _read_split(path.parent / entry["train_file"], feature_dim, declared)
        test = _read_split(path.parent / entry["test_file"], feature_dim, declared)
        tasks[tid] = Task(task_id=tid, classes=declared, train=train, test=test)

    incremental_ids = sorted(t for t in tasks if t > 0)
    if incremental_ids != list(range(1, len(incremental_ids) + 1)):
        raise ManifestError(f"{path}: incremental task ids must be contiguous from 1, got {incremental_ids}")
    if not incremental_ids:
        raise ManifestError(f"{path}: no incremental tasks (ids >= 1) in manifest")
    base = tasks.get(0)
    if base is None and not pre_embedded:
        raise ManifestError(f"{path}: task_id 0 (base) required unless pre_embedded is true")
    return TaskStream(
        feature_dim=feature_dim,
        base=base,
        incremental=[tasks[t] for t in incremental_ids],
        pre_embedded=pre_embedded,
        params={"manifest": str(path)},
    )


def batches(
    split: Split, batch_size: int, rng: Optional[np.random.Generator] = None
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """One pass over the split. With an rng the order is a fresh permutation
    (training); without, stored order (evaluation). Final batch may be short."""
    if batch_size < 1:
        raise GenerationError(f"batch_size must be >= 1, got {batch_size}")
    n = len(split)
    idx = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        take = idx[start : start + batch_size]
        yield split.X[take], split.y[take]
