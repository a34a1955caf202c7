"""Per-task bottleneck adapters over the frozen backbone embedding.

An adapter maps h0 -> alpha * up(relu(down(h0))). The up-projection starts
at zero so a fresh adapter is exactly the zero function and existing
behavior is untouched until training moves it.
"""

from __future__ import annotations

import warnings

import numpy as np

from . import _kernels as K
from . import rng as rngmod
from .backbone import Backbone
from .data import Task
from .errors import NonFiniteError, TrainingError
from .nn import Linear, params_checksum
from .optim import Sgd, SgdConfig
from .tensor import Tape, Tensor, add, relu, scale, softmax_cross_entropy

DEFAULT_HEAD_SCALE = 4.0  # relative logit gain of the throwaway fixed-direction head


class Adapter:
    def __init__(self, task_id: int, down: Linear, up: Linear, alpha: float):
        self.task_id = task_id
        self.down = down
        self.up = up
        self.alpha = float(alpha)
        self.frozen = False

    @property
    def embed_dim(self) -> int:
        return self.down.in_dim

    @property
    def bottleneck(self) -> int:
        return self.down.out_dim

    def params(self) -> list[tuple[str, Tensor]]:
        prefix = f"adapter{self.task_id}"
        return self.down.params(f"{prefix}.down") + self.up.params(f"{prefix}.up")

    def checksum(self) -> str:
        return params_checksum(self.params())

    def freeze(self) -> None:
        self.down.freeze()
        self.up.freeze()
        self.frozen = True

    def transform(self, h0: np.ndarray) -> np.ndarray:
        """Frozen-path residual for a (n, embed_dim) batch."""
        return self.alpha * self.up.apply(K.relu(self.down.apply(h0)))

    def transform_tensor(self, h0: Tensor) -> Tensor:
        return scale(self.up.forward(relu(self.down.forward(h0))), self.alpha)


def new_adapter(task_id: int, embed_dim: int, bottleneck: int = 16, alpha: float = 0.1, seed: int = 0) -> Adapter:
    if bottleneck > embed_dim:
        warnings.warn(
            f"adapter bottleneck {bottleneck} exceeds embed dim {embed_dim}; no compression",
            RuntimeWarning,
            stacklevel=2,
        )
    rng = rngmod.child_rng(seed, rngmod.ADAPTER, task_id)
    down = Linear(embed_dim, bottleneck, rng)
    up = Linear(bottleneck, embed_dim, zero_init=True)
    return Adapter(task_id, down, up, alpha)


def _fixed_direction_head(H0: np.ndarray, num_classes: int, rng: np.random.Generator) -> Linear:
    """Frozen linear head: orthonormal class directions chosen where the task's
    embeddings barely vary.

    Rows come from the lowest-variance subspace of the task's centered h0
    cloud, mixed by a seeded rotation. Against such directions every training
    sample projects to (almost) the same constant, so the per-sample logit
    noise that h0 would otherwise contribute vanishes and cross-entropy can
    only be reduced by the adapter writing class evidence along these rows.
    """
    embed_dim = H0.shape[1]
    k = max(num_classes, 1)
    if k > embed_dim:  # more classes than dimensions: orthogonality impossible
        raw = rng.standard_normal((embed_dim, k))
        weight = raw / np.linalg.norm(raw, axis=0, keepdims=True)
        return Linear.from_arrays(weight, np.zeros((1, k)), trainable=False)
    centered = H0 - H0.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=True)
    quiet = vt[-k:]  # directions of least (often exactly zero) sample variance
    rot, _ = np.linalg.qr(rng.standard_normal((k, k)))
    weight = (rot @ quiet).T
    return Linear.from_arrays(np.ascontiguousarray(weight), np.zeros((1, k)), trainable=False)


def train_adapter(
    adapter: Adapter,
    task: Task,
    bb: Backbone,
    frozen_adapters: list[Adapter],
    cfg: SgdConfig,
    seed: int = 0,
    train_with_old_adapters: bool = False,
    head_scale: float = DEFAULT_HEAD_SCALE,
) -> dict:
    """Fit the adapter on its task with a throwaway linear head, then freeze it.

    The temporary head is deliberately *fixed*: its rows are random orthonormal
    class directions that never train, and only the adapter receives gradients.
    With a trainable head the joint system has a shortcut — the head rotates to
    whatever the residual currently is, cross-entropy flattens, and the adapter
    settles on a class-independent offset. With fixed directions the only way
    to reduce the loss is to write genuine class evidence into the residual
    along stable axes, which is exactly what the deployed prototype classifier
    reads back. The logit gain is head_scale divided by the mean training
    feature norm, so the margin target (and with it the final residual
    amplitude) tracks the feature scale instead of fighting it. Before
    training, the bottleneck bias is set so each hidden unit hinges at the
    task's feature mean, letting units respond to within-task deviations
    rather than the shared direction all samples have in common. Old adapters
    contribute to the training feature only when train_with_old_adapters is
    set (frozen either way).
    """
    if adapter.frozen:
        raise TrainingError(f"adapter for task {adapter.task_id} is already frozen")
    if len(task.train) == 0:
        raise TrainingError(f"task {task.task_id} has no training samples")
    if not head_scale > 0:
        raise TrainingError(f"head_scale must be positive, got {head_scale}")
    cfg = cfg.validated()

    H0 = bb.embed(task.train.X)
    base_feat = H0
    if train_with_old_adapters:
        for old in frozen_adapters:
            base_feat = base_feat + old.transform(H0)

    class_index = {c: i for i, c in enumerate(sorted(task.classes))}
    y_local = np.array([class_index[c] for c in task.train.y], dtype=np.int64)

    # center the hinges on the task's feature cloud
    mu = H0.mean(axis=0)
    adapter.down.bias.data[:] = -(mu @ adapter.down.weight.data)

    head = _fixed_direction_head(
        base_feat,
        len(task.classes),
        rngmod.child_rng(seed, rngmod.ADAPTER_HEAD, task.task_id),
    )
    gain = head_scale / max(float(np.linalg.norm(base_feat, axis=1).mean()), 1e-12)

    shuffle_rng = rngmod.child_rng(seed, rngmod.ADAPTER, task.task_id, rngmod.SHUFFLE)
    n = len(task.train)
    n_batches = -(-n // cfg.batch_size)
    opt = Sgd(adapter.params(), cfg, total_steps=cfg.epochs * n_batches)

    def logits_tensor(base: np.ndarray, h0: np.ndarray) -> Tensor:
        h_t = adapter.transform_tensor(Tensor(h0))
        feat = add(Tensor(base), h_t)
        return scale(head.forward(feat), gain)

    final_loss = float("nan")
    try:
        for _epoch in range(cfg.epochs):
            idx = shuffle_rng.permutation(n)
            for start in range(0, n, cfg.batch_size):
                take = idx[start : start + cfg.batch_size]
                with Tape() as tape:
                    loss = softmax_cross_entropy(logits_tensor(base_feat[take], H0[take]), y_local[take])
                    tape.backward(loss)
                opt.step()
                final_loss = loss.item()
    except NonFiniteError as exc:
        raise TrainingError(f"adapter training diverged on task {task.task_id}: {exc}") from exc

    adapter.freeze()
    logits = logits_tensor(base_feat, H0)
    acc = float(np.mean(np.argmax(logits.data, axis=1) == y_local))
    return {"train_accuracy": acc, "final_loss": final_loss, "steps": opt.step_count}
