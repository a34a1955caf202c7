"""Prototype classifier: one mean vector per class, nearest wins.

A class prototype is the mean of l(h0 + h_t) over its training samples with
only its own task's adapter active. At inference the gated feature
l(h0 + sum of fired residuals) is scored against the prototypes of the
connected tasks: a fired gate admits its task's classes as candidates, and a
sample that fired nothing is scored against the whole table (silence carries
no information about where it belongs). Cosine scoring by default, dot
product by config. Prototypes are write-once.
"""

from __future__ import annotations

import hashlib
from typing import Optional

import numpy as np

from . import _kernels as K
from . import rng as rngmod
from .adapters import Adapter
from .backbone import Backbone
from .data import Task
from .errors import InferenceError, PrototypeError
from .gates import SynapseGate
from .nn import Linear, params_checksum
from .tensor import Tensor

NORM_EPS = 1e-12  # zero-feature guard in cosine scoring


class FeatureHead:
    """The l(.) transform before prototype space: identity by default, or a
    frozen seeded one-layer MLP for feature-quality ablations."""

    def __init__(self, kind: str = "identity", embed_dim: int = 0, seed: int = 0):
        if kind not in ("identity", "random_mlp"):
            raise InferenceError(f"unknown feature head kind {kind!r}")
        self.kind = kind
        self.layer: Optional[Linear] = None
        if kind == "random_mlp":
            rng = rngmod.child_rng(seed, rngmod.FEATURE_HEAD)
            self.layer = Linear(embed_dim, embed_dim, rng)
            self.layer.freeze()

    def apply(self, X: np.ndarray) -> np.ndarray:
        if self.layer is None:
            return X
        return K.relu(self.layer.apply(X))

    def params(self) -> list[tuple[str, Tensor]]:
        return [] if self.layer is None else self.layer.params("feature_head")

    def checksum(self) -> str:
        return params_checksum(self.params())


class PrototypeTable:
    """class id -> prototype vector; insert-only, rows served in id order."""

    def __init__(self):
        self._vecs: dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._vecs)

    def __contains__(self, class_id: int) -> bool:
        return int(class_id) in self._vecs

    def class_ids(self) -> list[int]:
        return sorted(self._vecs)

    def get(self, class_id: int) -> np.ndarray:
        try:
            return self._vecs[int(class_id)]
        except KeyError:
            raise PrototypeError(f"no prototype for class {class_id}") from None

    def add(self, class_id: int, vec: np.ndarray) -> None:
        class_id = int(class_id)
        if class_id in self._vecs:
            raise PrototypeError(f"prototype for class {class_id} already exists")
        self._vecs[class_id] = np.ascontiguousarray(vec, dtype=np.float64).reshape(-1)

    def matrix(self) -> np.ndarray:
        """(num_classes, d) stacked in ascending class-id order."""
        if not self._vecs:
            raise PrototypeError("prototype table is empty")
        return np.vstack([self._vecs[c] for c in self.class_ids()])

    def checksum(self) -> str:
        h = hashlib.sha256()
        for c in self.class_ids():
            h.update(str(c).encode())
            h.update(np.ascontiguousarray(self._vecs[c], dtype="<f8").tobytes())
        return h.hexdigest()


def build_prototypes(table: PrototypeTable, task: Task, bb: Backbone, adapter: Adapter, head: FeatureHead) -> None:
    """Add one prototype per class of the task; existing entries never move."""
    if adapter.task_id != task.task_id:
        raise PrototypeError(f"adapter is for task {adapter.task_id}, data is task {task.task_id}")
    H0 = bb.embed(task.train.X)
    feats = head.apply(H0 + adapter.transform(H0))
    for c in sorted(task.classes):
        mask = task.train.y == c
        if not mask.any():
            raise PrototypeError(f"class {c} has no training samples")
        table.add(c, feats[mask].mean(axis=0))


def _l2_rows(X: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    return X / np.maximum(norms, NORM_EPS)


def classify(
    features: np.ndarray,
    table: PrototypeTable,
    scoring: str = "cosine",
    candidates: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Nearest-prototype labels; ties go to the lowest class id.

    candidates, when given, is a boolean (n, num_classes) mask over the
    table's classes in ascending-id order; excluded classes never win. A row
    with no admitted class falls back to the full table.
    """
    if scoring not in ("cosine", "dot"):
        raise InferenceError(f"unknown scoring {scoring!r}")
    W = table.matrix()
    ids = np.array(table.class_ids(), dtype=np.int64)
    if scoring == "cosine":
        scores = K.matmul_nt(_l2_rows(features), _l2_rows(W))
    else:
        scores = K.matmul_nt(features, W)
    if candidates is not None:
        if candidates.shape != scores.shape:
            raise InferenceError(
                f"candidate mask shape {candidates.shape} does not match scores {scores.shape}"
            )
        open_rows = ~candidates.any(axis=1)
        masked = np.where(candidates, scores, -np.inf)
        if open_rows.any():
            masked[open_rows] = scores[open_rows]
        scores = masked
    # argmax returns the first maximum; rows are in ascending id order
    return ids[np.argmax(scores, axis=1)]


def gated_feature(
    X: np.ndarray,
    bb: Backbone,
    adapters: list[Adapter],
    gates: list[SynapseGate],
    head: FeatureHead,
    true_task_ids: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Routing pass: every gate scores its cumulative feature sum, fired
    residuals are added (silent ones never touch the rows), l(.) applied last.

    Returns (features, gate bits (n, num_tasks) uint8).
    """
    if len(adapters) != len(gates):
        raise InferenceError(f"{len(adapters)} adapters but {len(gates)} gates")
    h0 = bb.embed(X)
    running = h0.copy()
    feat = h0.copy()
    bits = np.zeros((h0.shape[0], len(gates)), dtype=np.uint8)
    for i, (adapter, gate) in enumerate(zip(adapters, gates)):
        h_i = adapter.transform(h0)
        running += h_i
        m = gate.fire(running, true_task_ids)
        bits[:, i] = m
        fired = m == 1
        if fired.any():
            feat[fired] = feat[fired] + h_i[fired]
    return head.apply(feat), bits


def candidate_mask(
    bits: np.ndarray,
    gates: list[SynapseGate],
    table: PrototypeTable,
    task_classes: dict[int, tuple[int, ...]],
) -> np.ndarray:
    """Boolean (n, num_classes) mask admitting the classes of fired tasks.

    Rows that fired nothing stay all-False; classify treats them as open
    (full-table) rows.
    """
    ids = table.class_ids()
    col_of = {cid: j for j, cid in enumerate(ids)}
    mask = np.zeros((bits.shape[0], len(ids)), dtype=bool)
    for i, gate in enumerate(gates):
        fired = bits[:, i] == 1
        if not fired.any():
            continue
        cols = [col_of[c] for c in task_classes[gate.task_id] if c in col_of]
        if cols:
            mask[np.ix_(fired, cols)] = True
    return mask


def predict(
    X: np.ndarray,
    bb: Backbone,
    adapters: list[Adapter],
    gates: list[SynapseGate],
    table: PrototypeTable,
    head: FeatureHead,
    scoring: str = "cosine",
    true_task_ids: Optional[np.ndarray] = None,
    task_classes: Optional[dict[int, tuple[int, ...]]] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Full inference; returns (predicted class ids, gate bits).

    With task_classes given, each sample competes only among the classes of
    the tasks whose gates fired for it (the connected subnetworks); silent
    samples compete across the whole table. Without the mapping, every sample
    uses the full table. All-fire gating admits every class either way, so
    the functional mode stays the plain no-routing baseline.
    """
    feats, bits = gated_feature(X, bb, adapters, gates, head, true_task_ids)
    candidates = None
    if task_classes is not None and len(table):
        candidates = candidate_mask(bits, gates, table, task_classes)
    return classify(feats, table, scoring, candidates), bits
