"""Frozen feature extractor: an MLP pre-trained on the base task.

The training net is hidden layers + a classification head; the head is
discarded afterwards and the penultimate activation is the embedding. Once
frozen, the backbone is pure: embed() runs on raw arrays with no tape.
"""

from __future__ import annotations

import numpy as np

from . import _kernels as K
from . import rng as rngmod
from .data import Split, Task, batches
from .errors import NonFiniteError, ShapeError, TrainingError
from .nn import Linear, params_checksum
from .optim import Sgd, SgdConfig
from .tensor import Tape, Tensor, relu, softmax_cross_entropy


class Backbone:
    def __init__(self, layers: list[Linear], input_dim: int, identity: bool = False):
        self.layers = layers
        self.input_dim = input_dim
        self.identity = identity
        self.frozen = False

    @property
    def embed_dim(self) -> int:
        return self.input_dim if self.identity else self.layers[-1].out_dim

    def params(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, layer in enumerate(self.layers):
            out.extend(layer.params(f"backbone.layer{i}"))
        return out

    def checksum(self) -> str:
        return params_checksum(self.params())

    def freeze(self) -> None:
        for layer in self.layers:
            layer.freeze()
        self.frozen = True

    def forward_tensor(self, x: Tensor) -> Tensor:
        h = x
        for layer in self.layers:
            h = relu(layer.forward(h))
        return h

    def embed(self, X: np.ndarray) -> np.ndarray:
        """Frozen embedding of a (n, input_dim) batch; no autodiff involvement."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise ShapeError(f"embed expects (n, {self.input_dim}), got {X.shape}")
        if self.identity:
            return X
        h = X
        for layer in self.layers:
            h = K.relu(layer.apply(h))
        return h


def identity_backbone(dim: int) -> Backbone:
    """Used when the stream is already embedded; embed(x) = x."""
    bb = Backbone([], input_dim=dim, identity=True)
    bb.frozen = True
    return bb


def pretrain(
    base: Task,
    hidden: tuple[int, ...] = (64, 64),
    cfg: SgdConfig = SgdConfig(),
    seed: int = 0,
) -> tuple[Backbone, dict]:
    """Train on the base task, drop the head, freeze. Returns (backbone, stats)."""
    if len(base.classes) < 2:
        raise TrainingError(f"backbone pretraining needs >= 2 base classes, got {len(base.classes)}")
    if len(base.train) == 0:
        raise TrainingError("backbone pretraining needs a non-empty base train split")
    cfg = cfg.validated()

    dim = base.train.X.shape[1]
    init_rng = rngmod.child_rng(seed, rngmod.BACKBONE)
    shuffle_rng = rngmod.child_rng(seed, rngmod.BACKBONE, rngmod.SHUFFLE)

    layers = []
    widths = [dim, *hidden]
    for i in range(len(hidden)):
        layers.append(Linear(widths[i], widths[i + 1], init_rng))
    head = Linear(widths[-1], len(base.classes), init_rng)
    bb = Backbone(layers, input_dim=dim)

    class_index = {c: i for i, c in enumerate(sorted(base.classes))}
    y_local = np.array([class_index[c] for c in base.train.y], dtype=np.int64)
    train = Split(base.train.X, y_local)

    n_batches = -(-len(train) // cfg.batch_size)
    opt = Sgd(bb.params() + head.params("backbone.head"), cfg, total_steps=cfg.epochs * n_batches)

    final_loss = float("nan")
    try:
        for _epoch in range(cfg.epochs):
            for Xb, yb in batches(train, cfg.batch_size, shuffle_rng):
                with Tape() as tape:
                    feats = bb.forward_tensor(Tensor(Xb))
                    loss = softmax_cross_entropy(head.forward(feats), yb)
                    tape.backward(loss)
                opt.step()
                final_loss = loss.item()
    except NonFiniteError as exc:
        raise TrainingError(f"backbone pretraining diverged: {exc}") from exc

    bb.freeze()
    head.freeze()
    logits = head.apply(bb.embed(base.train.X))
    acc = float(np.mean(np.argmax(logits, axis=1) == y_local))
    return bb, {"train_accuracy": acc, "final_loss": final_loss, "steps": opt.step_count}
