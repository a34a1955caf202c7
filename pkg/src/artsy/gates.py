"""Routing gates: one binary scorer per task decides whether its adapter fires.

A gate scores the cumulative feature h0 + sum_{i<=t} h_i with a small MLP and
fires when the sigmoid score clears its threshold (boundary inclusive, so a
zero threshold means always-on). Modes:

- learned: trained scorer, thresholded.
- functional: no scorer, fires on every sample (threshold 0 semantics).
- oracle: fires iff the sample's true task id equals the gate's task.
- noise: trained scorer fed standard Gaussian noise instead of features.
- random_projection: trained scorer fed features times a fixed random matrix.

Training data: positives are the current task, negatives are replayed
embeddings of the base split and all earlier tasks, both passed through the
frozen adapter sum. Batches are built half-and-half from each side (cycling
the smaller pool), so the class ratio per batch never exceeds 3:1.

Threshold policies, applied once training ends:

- fixed: keep the configured threshold (default 0.5).
- calibrated: sweep a 10% held-out slice for the best balanced accuracy.
"""

from __future__ import annotations

import hashlib
from typing import Iterator, Optional

import numpy as np

from . import _kernels as K
from . import rng as rngmod
from .adapters import Adapter
from .backbone import Backbone
from .data import Task
from .errors import InferenceError, NonFiniteError, TrainingError
from .nn import Linear, params_checksum
from .optim import Sgd, SgdConfig
from .tensor import Tape, Tensor, binary_cross_entropy, relu, sigmoid

GAUSS_SAMPLES_PER_CLASS = 50  # negatives drawn per old class in sampler mode
SCORE_MODES = ("learned", "noise", "random_projection")
ALL_MODES = SCORE_MODES + ("functional", "oracle")
THRESHOLD_POLICIES = ("fixed", "calibrated")


class SynapseGate:
    def __init__(
        self,
        task_id: int,
        mode: str = "learned",
        hidden: Optional[Linear] = None,
        out: Optional[Linear] = None,
        threshold: float = 0.5,
    ):
        if mode not in ALL_MODES:
            raise InferenceError(f"unknown gate mode {mode!r}")
        self.task_id = task_id
        self.mode = mode
        self.hidden = hidden
        self.out = out
        self.threshold = float(threshold)
        self.frozen = False
        self.noise_seed: Optional[int] = None
        self.projection: Optional[np.ndarray] = None

    def params(self) -> list[tuple[str, Tensor]]:
        if self.hidden is None or self.out is None:
            return []
        prefix = f"gate{self.task_id}"
        return self.hidden.params(f"{prefix}.hidden") + self.out.params(f"{prefix}.out")

    def checksum(self) -> str:
        return params_checksum(self.params())

    def freeze(self) -> None:
        if self.hidden is not None:
            self.hidden.freeze()
        if self.out is not None:
            self.out.freeze()
        self.frozen = True

    def _scorer_input(self, h_sum: np.ndarray) -> np.ndarray:
        if self.mode == "noise":
            # noise is a pure function of (seed, gate, input bytes): same batch,
            # same draw — keeps runs reproducible and threaded eval identical
            digest = hashlib.sha256(np.ascontiguousarray(h_sum).tobytes()).digest()
            entropy = [self.noise_seed, rngmod.ABLATION, self.task_id]
            entropy += [int.from_bytes(digest[i : i + 8], "little") for i in range(0, 32, 8)]
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
            return rng.standard_normal(h_sum.shape)
        if self.mode == "random_projection":
            return K.matmul(h_sum, self.projection)
        return h_sum

    def score(self, h_sum: np.ndarray) -> np.ndarray:
        """Sigmoid scores in (0,1), one per row."""
        if self.hidden is None or self.out is None:
            raise InferenceError(f"gate for task {self.task_id} has no scorer (mode={self.mode})")
        x = self._scorer_input(np.ascontiguousarray(h_sum, dtype=np.float64))
        return K.sigmoid(self.out.apply(K.relu(self.hidden.apply(x)))).ravel()

    def score_tensor(self, h_sum: Tensor) -> Tensor:
        return sigmoid(self.out.forward(relu(self.hidden.forward(h_sum))))

    def fire(self, h_sum: np.ndarray, true_task_ids: Optional[np.ndarray] = None) -> np.ndarray:
        """Per-sample 0/1 mask for a (n, embed_dim) cumulative feature batch."""
        n = h_sum.shape[0]
        if self.mode == "functional":
            return np.ones(n, dtype=np.uint8)
        if self.mode == "oracle":
            if true_task_ids is None:
                raise InferenceError("oracle gates need true_task_ids at inference")
            return (np.asarray(true_task_ids) == self.task_id).astype(np.uint8)
        return gate_fire(self.score(h_sum), self.threshold)


def gate_fire(scores: np.ndarray, threshold: float) -> np.ndarray:
    """m = 1 iff score >= threshold (inclusive; 0 threshold fires always)."""
    return (np.asarray(scores) >= threshold).astype(np.uint8)


def new_gate(task_id: int, embed_dim: int, hidden_dim: int = 32, threshold: float = 0.5, seed: int = 0) -> SynapseGate:
    """Fresh learned gate. The hidden layer gets the usual He init; the output
    layer starts at zero so the untrained scorer is exactly 0.5 everywhere and
    the two training epochs sculpt the decision region from neutrality. (A
    He-initialized output layer bakes in a random saturated score landscape
    that two epochs cannot unlearn, which costs recall on the gate's own task
    for some seeds.)"""
    rng = rngmod.child_rng(seed, rngmod.GATE, task_id)
    hidden = Linear(embed_dim, hidden_dim, rng)
    out = Linear(hidden_dim, 1, rng)
    out.weight.data[:] = 0.0
    return SynapseGate(
        task_id,
        mode="learned",
        hidden=hidden,
        out=out,
        threshold=threshold,
    )


def new_functional_gate(task_id: int) -> SynapseGate:
    g = SynapseGate(task_id, mode="functional", threshold=0.0)
    g.frozen = True
    return g


def new_oracle_gate(task_id: int) -> SynapseGate:
    g = SynapseGate(task_id, mode="oracle")
    g.frozen = True
    return g


def make_ablation_gate(gate: SynapseGate, kind: str, seed: int = 0, projection: Optional[np.ndarray] = None) -> SynapseGate:
    """Wrap a trained gate so its scorer sees corrupted inputs."""
    if kind not in ("noise", "random_projection"):
        raise InferenceError(f"unknown ablation kind {kind!r}")
    if not gate.frozen or gate.hidden is None:
        raise TrainingError("ablation requires a trained, frozen gate")
    out = SynapseGate(gate.task_id, mode=kind, hidden=gate.hidden, out=gate.out, threshold=gate.threshold)
    out.frozen = True
    if kind == "noise":
        out.noise_seed = int(seed)
    else:
        if projection is None:
            rng = rngmod.child_rng(seed, rngmod.ABLATION, gate.task_id)
            d = gate.hidden.in_dim
            projection = rng.normal(size=(d, d)) / np.sqrt(d)
        out.projection = np.ascontiguousarray(projection, dtype=np.float64)
    return out


class ReplayBuffer:
    """h0 embeddings of past data, capped per class; gate-training negatives.

    per_class = 0 switches to a sampler that stores only a per-class Gaussian
    fit (mean, per-dim std) and draws synthetic embeddings on demand, for
    replay-free operation.
    """

    def __init__(self, per_class: int = 50):
        if per_class < 0:
            raise TrainingError(f"buffer per_class must be >= 0, got {per_class}")
        self.per_class = per_class
        self.stored: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self.gaussian: dict[int, list[tuple[int, np.ndarray, np.ndarray, int]]] = {}

    @property
    def mode(self) -> str:
        return "gaussian" if self.per_class == 0 else "stored"

    def task_ids(self) -> list[int]:
        source = self.gaussian if self.mode == "gaussian" else self.stored
        return sorted(source)

    def __len__(self) -> int:
        if self.mode == "gaussian":
            return sum(len(stats) for stats in self.gaussian.values())
        return sum(len(y) for _, y in self.stored.values())

    def add_task(self, task_id: int, H0: np.ndarray, labels: np.ndarray, rng: np.random.Generator) -> None:
        if task_id in self.stored or task_id in self.gaussian:
            raise TrainingError(f"buffer already holds task {task_id}")
        H0 = np.ascontiguousarray(H0, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if self.mode == "gaussian":
            stats = []
            for c in sorted(set(labels.tolist())):
                rows = H0[labels == c]
                stats.append((int(c), rows.mean(axis=0), rows.std(axis=0), len(rows)))
            self.gaussian[task_id] = stats
            return
        keep_X, keep_y = [], []
        for c in sorted(set(labels.tolist())):
            rows = np.flatnonzero(labels == c)
            if len(rows) > self.per_class:
                rows = rng.permutation(rows)[: self.per_class]
            keep_X.append(H0[rows])
            keep_y.append(labels[rows])
        self.stored[task_id] = (np.vstack(keep_X), np.concatenate(keep_y))

    def negative_pool(self, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """All held embeddings (stored mode) or fresh synthetic draws (sampler)."""
        if self.mode == "gaussian":
            if rng is None:
                raise TrainingError("sampler-mode buffer needs an rng to draw negatives")
            draws = []
            for tid in sorted(self.gaussian):
                for _c, mean, std, count in self.gaussian[tid]:
                    n = min(count, GAUSS_SAMPLES_PER_CLASS)
                    draws.append(mean + std * rng.standard_normal((n, mean.size)))
            if not draws:
                raise TrainingError("replay buffer is empty")
            return np.vstack(draws)
        if not self.stored:
            raise TrainingError("replay buffer is empty")
        return np.vstack([X for X, _ in (self.stored[t] for t in sorted(self.stored))])


def adapter_sum(H0: np.ndarray, adapters: list[Adapter]) -> np.ndarray:
    """h0 + sum of all adapter residuals; the gate's input space."""
    out = H0.copy()
    for a in adapters:
        out += a.transform(H0)
    return out


def _cycling(rng: np.random.Generator, n: int) -> Iterator[int]:
    while True:
        for i in rng.permutation(n):
            yield int(i)


def _sweep_threshold(pos_scores: np.ndarray, neg_scores: np.ndarray) -> float:
    """Threshold maximizing balanced accuracy on held-out scores; ties resolve
    toward 0.5."""
    candidates = np.unique(np.concatenate([pos_scores, neg_scores, [0.5]]))
    best_thr, best_bal = 0.5, -1.0
    for thr in candidates:
        tpr = float(np.mean(pos_scores >= thr))
        tnr = float(np.mean(neg_scores < thr))
        bal = 0.5 * (tpr + tnr)
        if bal > best_bal + 1e-12 or (abs(bal - best_bal) <= 1e-12 and abs(thr - 0.5) < abs(best_thr - 0.5)):
            best_bal, best_thr = bal, float(thr)
    return best_thr


def train_gate(
    gate: SynapseGate,
    task: Task,
    buffer: ReplayBuffer,
    bb: Backbone,
    adapters: list[Adapter],
    cfg: SgdConfig,
    seed: int = 0,
    policy: str = "fixed",
) -> dict:
    """BCE-train the scorer: current task is the positive class, replayed past
    data the negative class. Applies the threshold policy, then freezes the
    gate."""
    if gate.mode != "learned":
        raise TrainingError(f"only learned gates train; got mode {gate.mode!r}")
    if gate.frozen:
        raise TrainingError(f"gate for task {gate.task_id} is already frozen")
    if any(not a.frozen for a in adapters):
        raise TrainingError("all adapters must be frozen before gate training")
    if policy not in THRESHOLD_POLICIES:
        raise TrainingError(f"threshold policy must be one of {THRESHOLD_POLICIES}, got {policy!r}")
    cfg = cfg.validated()
    if cfg.batch_size < 2:
        raise TrainingError("gate training needs batch_size >= 2 for class balance")

    data_rng = rngmod.child_rng(seed, rngmod.GATE, task.task_id, rngmod.SHUFFLE)
    H0_pos = bb.embed(task.train.X)
    pos = adapter_sum(H0_pos, adapters)
    neg = adapter_sum(buffer.negative_pool(data_rng), adapters)

    hold_pos = hold_neg = None
    if policy == "calibrated":
        def carve(arr: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
            n_hold = max(1, int(0.1 * len(arr)))
            perm = data_rng.permutation(len(arr))
            return arr[perm[n_hold:]], arr[perm[:n_hold]]

        pos, hold_pos = carve(pos)
        neg, hold_neg = carve(neg)

    half = cfg.batch_size // 2
    steps_per_epoch = -(-(len(pos) + len(neg)) // cfg.batch_size)
    opt = Sgd(gate.params(), cfg, total_steps=cfg.epochs * steps_per_epoch)
    pos_iter = _cycling(data_rng, len(pos))
    neg_iter = _cycling(data_rng, len(neg))
    labels = np.concatenate([np.ones(half), np.zeros(cfg.batch_size - half)])

    final_loss = float("nan")
    try:
        for _epoch in range(cfg.epochs):
            for _step in range(steps_per_epoch):
                rows = np.vstack(
                    [pos[[next(pos_iter) for _ in range(half)]], neg[[next(neg_iter) for _ in range(cfg.batch_size - half)]]]
                )
                with Tape() as tape:
                    scores = gate.score_tensor(Tensor(rows))
                    loss = binary_cross_entropy(scores, labels)
                    tape.backward(loss)
                opt.step()
                final_loss = loss.item()
    except NonFiniteError as exc:
        raise TrainingError(f"gate training diverged on task {task.task_id}: {exc}") from exc

    gate.freeze()
    if policy == "calibrated":
        gate.threshold = _sweep_threshold(gate.score(hold_pos), gate.score(hold_neg))

    bal = gate_balanced_accuracy(gate, pos, neg)
    return {
        "final_loss": final_loss,
        "balanced_accuracy": bal,
        "threshold": gate.threshold,
        "n_pos": len(pos),
        "n_neg": len(neg),
        "steps": opt.step_count,
    }


def gate_balanced_accuracy(gate: SynapseGate, pos_h: np.ndarray, neg_h: np.ndarray) -> float:
    """0.5 * (fire rate on positives + silence rate on negatives)."""
    tpr = float(np.mean(gate.fire(pos_h) == 1))
    tnr = float(np.mean(gate.fire(neg_h) == 0))
    return 0.5 * (tpr + tnr)
