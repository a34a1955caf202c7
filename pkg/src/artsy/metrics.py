"""Accuracy bookkeeping and report emission.

The accuracy matrix stores integer (correct, total) counts per (step, task)
cell; derived rates are computed on demand. "last" at step t is the
sample-weighted accuracy over everything seen so far (the row-t combination,
accumulated in ascending task order, so the identity check is exact in
floating point); the accuracy on the newest task alone is emitted separately.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ArtsyError

REPORT_VERSION = 1
CURVE_COLUMNS = ["step", "last", "avg", "new_task_acc", "old_task_acc"]


class AccuracyMatrix:
    """Lower-triangular counts: cell (t, j) is performance on task j's test
    split after training step t; 1-based indices, j <= t."""

    def __init__(self, num_tasks: int):
        if num_tasks < 1:
            raise ArtsyError(f"num_tasks must be >= 1, got {num_tasks}")
        self.num_tasks = num_tasks
        self._correct = [[0] * num_tasks for _ in range(num_tasks)]
        self._total = [[0] * num_tasks for _ in range(num_tasks)]

    def _check(self, t: int, j: int) -> None:
        if not (1 <= j <= t <= self.num_tasks):
            raise ArtsyError(f"matrix cell (t={t}, j={j}) outside the lower triangle of size {self.num_tasks}")

    def record(self, t: int, j: int, correct: int, total: int) -> None:
        self._check(t, j)
        if total < 1 or correct < 0 or correct > total:
            raise ArtsyError(f"bad counts for cell (t={t}, j={j}): {correct}/{total}")
        self._correct[t - 1][j - 1] = int(correct)
        self._total[t - 1][j - 1] = int(total)

    def counts(self, t: int, j: int) -> tuple[int, int]:
        self._check(t, j)
        return self._correct[t - 1][j - 1], self._total[t - 1][j - 1]

    def acc(self, t: int, j: int) -> float:
        correct, total = self.counts(t, j)
        if total == 0:
            raise ArtsyError(f"cell (t={t}, j={j}) was never recorded")
        return correct / total

    def seen(self, t: int) -> float:
        """Sample-weighted combination of row t, ascending j."""
        num = 0.0
        den = 0.0
        for j in range(1, t + 1):
            _, total = self.counts(t, j)
            num += total * self.acc(t, j)
            den += total
        return num / den

    def old_tasks(self, t: int) -> Optional[float]:
        """Weighted accuracy over tasks before t, at step t; None at step 1."""
        if t == 1:
            return None
        num = 0.0
        den = 0.0
        for j in range(1, t):
            _, total = self.counts(t, j)
            num += total * self.acc(t, j)
            den += total
        return num / den

    def to_dict(self) -> dict:
        return {"correct": [row[:] for row in self._correct], "total": [row[:] for row in self._total]}

    @classmethod
    def from_dict(cls, d: dict) -> "AccuracyMatrix":
        m = cls(len(d["total"]))
        m._correct = [list(map(int, row)) for row in d["correct"]]
        m._total = [list(map(int, row)) for row in d["total"]]
        return m

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, AccuracyMatrix)
            and self._correct == other._correct
            and self._total == other._total
        )


def last_accuracy(matrix: AccuracyMatrix, t: int) -> float:
    """Accuracy over all test data seen up to step t."""
    return matrix.seen(t)


def avg_accuracy(matrix: AccuracyMatrix, t: int) -> float:
    """Mean of last_accuracy over steps 1..t."""
    if not 1 <= t <= matrix.num_tasks:
        raise ArtsyError(f"avg_accuracy step {t} outside [1, {matrix.num_tasks}]")
    return sum(matrix.seen(i) for i in range(1, t + 1)) / t


def routing_accuracy(gate_bits: np.ndarray, true_task_ids: np.ndarray) -> float:
    """Fraction of samples whose fired gate set is exactly {true task}."""
    bits = np.asarray(gate_bits)
    true_ids = np.asarray(true_task_ids)
    if bits.ndim != 2 or bits.shape[0] != true_ids.shape[0]:
        raise ArtsyError(f"gate bits {bits.shape} incompatible with {true_ids.shape} ids")
    if bits.shape[0] == 0:
        raise ArtsyError("routing_accuracy needs at least one sample")
    if true_ids.min() < 1 or true_ids.max() > bits.shape[1]:
        raise ArtsyError(f"true task ids must lie in [1, {bits.shape[1]}]")
    single = bits.sum(axis=1) == 1
    correct = bits[np.arange(len(true_ids)), true_ids - 1] == 1
    return float(np.mean(single & correct))


def multi_fire_rate(gate_bits: np.ndarray) -> float:
    """Fraction of samples with two or more fired gates."""
    bits = np.asarray(gate_bits)
    if bits.shape[0] == 0:
        raise ArtsyError("multi_fire_rate needs at least one sample")
    return float(np.mean(bits.sum(axis=1) >= 2))


@dataclass
class RunReport:
    kind: str  # "artsy" | "sequential_baseline"
    seed: int
    backend: str
    config: dict
    config_hash: str
    num_tasks: int
    matrix: AccuracyMatrix
    steps: list[dict]  # per-step metric records
    checksums: dict = field(default_factory=dict)
    training: list[dict] = field(default_factory=list)  # per-task phase stats
    backbone_stats: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)  # wall clock; excluded from determinism
    version: int = REPORT_VERSION

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "kind": self.kind,
            "seed": self.seed,
            "backend": self.backend,
            "config_hash": self.config_hash,
            "config": self.config,
            "num_tasks": self.num_tasks,
            "steps": self.steps,
            "matrix": self.matrix.to_dict(),
            "checksums": self.checksums,
            "training": self.training,
            "backbone_stats": self.backbone_stats,
            "timings": self.timings,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        return cls(
            kind=d["kind"],
            seed=d["seed"],
            backend=d["backend"],
            config=d["config"],
            config_hash=d["config_hash"],
            num_tasks=d["num_tasks"],
            matrix=AccuracyMatrix.from_dict(d["matrix"]),
            steps=d["steps"],
            checksums=d["checksums"],
            training=d["training"],
            backbone_stats=d["backbone_stats"],
            timings=d["timings"],
            version=d["version"],
        )


def _pct(v: Optional[float]) -> str:
    return "nan" if v is None else f"{100.0 * v:.2f}"


def emit_report(report: RunReport, out_dir) -> dict[str, Path]:
    """Write results.json, matrix.csv, curves.csv; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    results = out / "results.json"
    with open(results, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")

    matrix = out / "matrix.csv"
    with open(matrix, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step"] + [f"task{j}" for j in range(1, report.num_tasks + 1)])
        for t in range(1, report.num_tasks + 1):
            row = [str(t)]
            for j in range(1, report.num_tasks + 1):
                row.append(_pct(report.matrix.acc(t, j)) if j <= t else "")
            writer.writerow(row)

    curves = out / "curves.csv"
    with open(curves, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_COLUMNS)
        for rec in report.steps:
            writer.writerow(
                [
                    str(rec["step"]),
                    _pct(rec["last"]),
                    _pct(rec["avg"]),
                    _pct(rec["new_task_acc"]),
                    _pct(rec["old_task_acc"]),
                ]
            )

    return {"results": results, "matrix": matrix, "curves": curves}


def load_report(path) -> RunReport:
    with open(path) as fh:
        return RunReport.from_dict(json.load(fh))
