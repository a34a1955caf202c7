"""Incremental training engine and the sequential fine-tuning baseline.

Per task, in order: grow an adapter, train it against a throwaway head,
freeze it, add the task's prototypes, train the routing gate against
replayed past data, freeze it, extend the replay buffer. Everything already
frozen is checksummed before and after each step; any drift is a hard error.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _kernels as K
from . import rng as rngmod
from .adapters import Adapter, new_adapter, train_adapter
from .backbone import Backbone, identity_backbone, pretrain
from .data import Split, Task, TaskStream, batches
from .errors import FrozenError, InferenceError, NonFiniteError, SequencingError, TrainingError
from .gates import ReplayBuffer, SynapseGate, make_ablation_gate, new_functional_gate, new_gate, new_oracle_gate, train_gate
from .metrics import AccuracyMatrix, RunReport, avg_accuracy, last_accuracy, multi_fire_rate, routing_accuracy
from .nn import Linear, params_checksum
from .optim import Sgd, SgdConfig
from .prototypes import FeatureHead, PrototypeTable, build_prototypes, predict
from .tensor import Tape, Tensor, softmax_cross_entropy

GATE_MODES = ("learned", "oracle", "functional", "noise", "random_projection")


@dataclass(frozen=True)
class EngineConfig:
    seed: int = 7
    backbone_hidden: tuple[int, ...] = (64, 64)
    backbone_sgd: SgdConfig = field(default_factory=SgdConfig)
    adapter_sgd: SgdConfig = field(default_factory=lambda: SgdConfig(epochs=20))
    gate_sgd: SgdConfig = field(default_factory=lambda: SgdConfig(epochs=2))
    bottleneck: int = 16
    alpha: float = 0.1
    gate_hidden: int = 32
    threshold: float = 0.5
    threshold_policy: str = "fixed"  # fixed | calibrated
    gate_mode: str = "learned"
    buffer_per_class: int = 50
    scoring: str = "cosine"  # cosine | dot
    feature_head: str = "identity"  # identity | random_mlp
    train_with_old_adapters: bool = False

    def to_dict(self) -> dict:
        d = {
            "seed": self.seed,
            "backbone_hidden": list(self.backbone_hidden),
            "bottleneck": self.bottleneck,
            "alpha": self.alpha,
            "gate_hidden": self.gate_hidden,
            "threshold": self.threshold,
            "threshold_policy": self.threshold_policy,
            "gate_mode": self.gate_mode,
            "buffer_per_class": self.buffer_per_class,
            "scoring": self.scoring,
            "feature_head": self.feature_head,
            "train_with_old_adapters": self.train_with_old_adapters,
        }
        for name, sgd in (("backbone", self.backbone_sgd), ("adapter", self.adapter_sgd), ("gate", self.gate_sgd)):
            d[f"{name}_sgd"] = {
                "base_lr": sgd.base_lr,
                "momentum": sgd.momentum,
                "weight_decay": sgd.weight_decay,
                "batch_size": sgd.batch_size,
                "epochs": sgd.epochs,
            }
        return d


def config_hash(snapshot: dict) -> str:
    return hashlib.sha256(json.dumps(snapshot, sort_keys=True).encode()).hexdigest()


@dataclass
class ModelState:
    backbone: Backbone
    head: FeatureHead
    adapters: list[Adapter]
    gates: list[SynapseGate]
    prototypes: PrototypeTable
    buffer: ReplayBuffer
    seed: int
    gate_mode: str
    scoring: str = "cosine"
    step: int = 0
    task_classes: dict[int, tuple[int, ...]] = field(default_factory=dict)
    checksums: dict[str, str] = field(default_factory=dict)

    @property
    def embed_dim(self) -> int:
        return self.backbone.embed_dim


def _current_checksums(state: ModelState) -> dict[str, str]:
    sums = {"backbone": state.backbone.checksum()}
    if state.head.params():
        sums["feature_head"] = state.head.checksum()
    for a in state.adapters:
        sums[f"adapter{a.task_id}"] = a.checksum()
    for g in state.gates:
        if g.params():
            sums[f"gate{g.task_id}"] = g.checksum()
    if len(state.prototypes):
        sums["prototypes"] = state.prototypes.checksum()
    return sums


def verify_frozen(state: ModelState) -> None:
    """Recompute checksums of every frozen component; any drift is fatal."""
    current = _current_checksums(state)
    bad = sorted(name for name, digest in state.checksums.items() if current.get(name) != digest)
    if bad:
        raise FrozenError(f"frozen components changed: {', '.join(bad)}")


def init_state(stream: TaskStream, cfg: EngineConfig) -> tuple[ModelState, dict]:
    """Pre-train (or bypass) the backbone and prime the replay buffer with the
    base split. Returns (state, backbone stats)."""
    if cfg.gate_mode not in GATE_MODES:
        raise TrainingError(f"unknown gate mode {cfg.gate_mode!r}")
    if stream.pre_embedded:
        bb = identity_backbone(stream.feature_dim)
        stats = {"identity": True}
    else:
        if stream.base is None:
            raise TrainingError("stream has no base task and is not pre-embedded")
        bb, stats = pretrain(stream.base, cfg.backbone_hidden, cfg.backbone_sgd, cfg.seed)
    head = FeatureHead(cfg.feature_head, bb.embed_dim, cfg.seed)
    buffer = ReplayBuffer(cfg.buffer_per_class)
    state = ModelState(
        backbone=bb,
        head=head,
        adapters=[],
        gates=[],
        prototypes=PrototypeTable(),
        buffer=buffer,
        seed=cfg.seed,
        gate_mode=cfg.gate_mode,
        scoring=cfg.scoring,
    )
    if stream.base is not None:
        state.task_classes[0] = stream.base.classes
        buffer.add_task(0, bb.embed(stream.base.train.X), stream.base.train.y, rngmod.child_rng(cfg.seed, rngmod.BUFFER, 0))
    state.checksums = _current_checksums(state)
    return state, stats


def train_step(state: ModelState, task: Task, cfg: EngineConfig) -> dict:
    """One incremental task: adapter, prototypes, gate, buffer; in that order."""
    if task.task_id != state.step + 1:
        raise SequencingError(f"expected task {state.step + 1} next, got task {task.task_id}")
    verify_frozen(state)

    t = task.task_id
    stats: dict = {"task_id": t}

    adapter = new_adapter(t, state.embed_dim, cfg.bottleneck, cfg.alpha, state.seed)
    stats["adapter"] = train_adapter(
        adapter, task, state.backbone, state.adapters, cfg.adapter_sgd, state.seed, cfg.train_with_old_adapters
    )
    state.adapters.append(adapter)

    build_prototypes(state.prototypes, task, state.backbone, adapter, state.head)

    if cfg.gate_mode in ("learned", "noise", "random_projection"):
        gate = new_gate(t, state.embed_dim, cfg.gate_hidden, cfg.threshold, state.seed)
        stats["gate"] = train_gate(
            gate,
            task,
            state.buffer,
            state.backbone,
            state.adapters,
            cfg.gate_sgd,
            state.seed,
            policy=cfg.threshold_policy,
        )
        if cfg.gate_mode != "learned":
            gate = make_ablation_gate(gate, cfg.gate_mode, state.seed)
    elif cfg.gate_mode == "functional":
        gate = new_functional_gate(t)
    else:
        gate = new_oracle_gate(t)
    state.gates.append(gate)

    state.buffer.add_task(t, state.backbone.embed(task.train.X), task.train.y, rngmod.child_rng(state.seed, rngmod.BUFFER, t))
    state.task_classes[t] = task.classes
    state.step += 1
    state.checksums = _current_checksums(state)
    verify_frozen(state)
    return stats


def infer(state: ModelState, X: np.ndarray, true_task_ids: Optional[np.ndarray] = None) -> tuple[np.ndarray, np.ndarray]:
    """Returns (gate bits (n, step) uint8, predicted class ids (n,))."""
    if state.step == 0:
        raise InferenceError("no tasks trained yet")
    preds, bits = predict(
        X,
        state.backbone,
        state.adapters,
        state.gates,
        state.prototypes,
        state.head,
        state.scoring,
        true_task_ids,
        state.task_classes,
    )
    return bits, preds


def evaluate_seen(state: ModelState, tasks: list[Task], threads: int = 1) -> list[dict]:
    """Per-task test accuracy plus routing bits, for tasks seen so far.
    Inference only; thread count never changes the numbers."""

    def eval_one(task: Task) -> dict:
        ids = np.full(len(task.test), task.task_id, dtype=np.int64)
        bits, preds = infer(state, task.test.X, ids)
        return {
            "task_id": task.task_id,
            "correct": int(np.sum(preds == task.test.y)),
            "total": len(task.test),
            "bits": bits,
            "true_ids": ids,
        }

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(eval_one, tasks))
    return [eval_one(task) for task in tasks]


def _step_record(matrix: AccuracyMatrix, t: int, evals: list[dict], with_routing: bool) -> dict:
    rec = {
        "step": t,
        "last": last_accuracy(matrix, t),
        "avg": avg_accuracy(matrix, t),
        "new_task_acc": matrix.acc(t, t),
        "final_task_only": matrix.acc(t, t),
        "old_task_acc": matrix.old_tasks(t),
        "per_task": [matrix.acc(t, j) for j in range(1, t + 1)],
    }
    if with_routing:
        bits = np.vstack([e["bits"] for e in evals])
        ids = np.concatenate([e["true_ids"] for e in evals])
        rec["routing_accuracy"] = routing_accuracy(bits, ids)
        rec["multi_fire_rate"] = multi_fire_rate(bits)
    else:
        rec["routing_accuracy"] = None
        rec["multi_fire_rate"] = None
    return rec


def run_experiment(
    stream: TaskStream,
    cfg: EngineConfig,
    eval_threads: int = 1,
    config_snapshot: Optional[dict] = None,
    log: Optional[Callable[[str], None]] = None,
) -> tuple[ModelState, RunReport]:
    """Train through the whole stream, evaluating on all seen tasks after each
    step."""
    say = log or (lambda _msg: None)
    snapshot = config_snapshot if config_snapshot is not None else cfg.to_dict()
    timings: dict = {}

    t0 = time.perf_counter()
    state, bb_stats = init_state(stream, cfg)
    timings["backbone"] = time.perf_counter() - t0
    if not stream.pre_embedded:
        say(f"backbone: train accuracy {bb_stats['train_accuracy']:.4f}")

    matrix = AccuracyMatrix(stream.num_tasks)
    steps: list[dict] = []
    training: list[dict] = []
    step_times: list[float] = []
    eval_times: list[float] = []

    for task in stream.incremental:
        t0 = time.perf_counter()
        training.append(train_step(state, task, cfg))
        step_times.append(time.perf_counter() - t0)

        t0 = time.perf_counter()
        seen = stream.incremental[: state.step]
        evals = evaluate_seen(state, seen, eval_threads)
        eval_times.append(time.perf_counter() - t0)
        for e in evals:
            matrix.record(state.step, e["task_id"], e["correct"], e["total"])
        rec = _step_record(matrix, state.step, evals, with_routing=True)
        steps.append(rec)
        say(
            f"task {task.task_id}: last={rec['last']:.4f} avg={rec['avg']:.4f} "
            f"new={rec['new_task_acc']:.4f} routing={rec['routing_accuracy']:.4f}"
        )

    timings["train_steps"] = step_times
    timings["evals"] = eval_times
    report = RunReport(
        kind="artsy",
        seed=cfg.seed,
        backend=K.BACKEND,
        config=snapshot,
        config_hash=config_hash(snapshot),
        num_tasks=stream.num_tasks,
        matrix=matrix,
        steps=steps,
        checksums=dict(state.checksums),
        training=training,
        backbone_stats=bb_stats,
        timings=timings,
    )
    return state, report


def run_sequential_baseline(
    stream: TaskStream,
    cfg: EngineConfig,
    eval_threads: int = 1,
    config_snapshot: Optional[dict] = None,
    log: Optional[Callable[[str], None]] = None,
) -> tuple[dict, RunReport]:
    """Plain fine-tuning control: the whole feature net plus one all-class
    head, trained through the tasks in sequence with nothing frozen and no
    routing. Warm-started from the pre-trained backbone when one exists."""
    say = log or (lambda _msg: None)
    snapshot = config_snapshot if config_snapshot is not None else cfg.to_dict()
    timings: dict = {}
    init_rng = rngmod.child_rng(cfg.seed, rngmod.BASELINE)

    t0 = time.perf_counter()
    if stream.pre_embedded:
        dim = stream.feature_dim
        bb_stats = {"identity": True}
        widths = [dim, *cfg.backbone_hidden]
        net = Backbone([Linear(widths[i], widths[i + 1], init_rng) for i in range(len(cfg.backbone_hidden))], dim)
    else:
        if stream.base is None:
            raise TrainingError("stream has no base task and is not pre-embedded")
        bb, bb_stats = pretrain(stream.base, cfg.backbone_hidden, cfg.backbone_sgd, cfg.seed)
        net = Backbone(
            [Linear.from_arrays(l.weight.data.copy(), l.bias.data.copy(), trainable=True) for l in bb.layers],
            bb.input_dim,
        )
    timings["backbone"] = time.perf_counter() - t0

    all_classes = sorted(c for task in stream.incremental for c in task.classes)
    class_index = {c: i for i, c in enumerate(all_classes)}
    class_arr = np.array(all_classes, dtype=np.int64)
    clf = Linear(net.embed_dim, len(all_classes), init_rng)

    matrix = AccuracyMatrix(stream.num_tasks)
    steps: list[dict] = []
    training: list[dict] = []
    step_times: list[float] = []

    sgd = cfg.adapter_sgd.validated()
    for task in stream.incremental:
        t0 = time.perf_counter()
        y = np.array([class_index[c] for c in task.train.y], dtype=np.int64)
        train = Split(task.train.X, y)
        n_batches = -(-len(train) // sgd.batch_size)
        opt = Sgd(net.params() + clf.params("baseline.head"), sgd, total_steps=sgd.epochs * n_batches)
        shuffle_rng = rngmod.child_rng(cfg.seed, rngmod.BASELINE, task.task_id, rngmod.SHUFFLE)
        final_loss = float("nan")
        try:
            for _epoch in range(sgd.epochs):
                for Xb, yb in batches(train, sgd.batch_size, shuffle_rng):
                    with Tape() as tape:
                        loss = softmax_cross_entropy(clf.forward(net.forward_tensor(Tensor(Xb))), yb)
                        tape.backward(loss)
                    opt.step()
                    final_loss = loss.item()
        except NonFiniteError as exc:
            raise TrainingError(f"baseline diverged on task {task.task_id}: {exc}") from exc
        training.append({"task_id": task.task_id, "final_loss": final_loss})
        step_times.append(time.perf_counter() - t0)

        def eval_one(seen_task: Task) -> dict:
            preds = class_arr[np.argmax(clf.apply(net.embed(seen_task.test.X)), axis=1)]
            return {
                "task_id": seen_task.task_id,
                "correct": int(np.sum(preds == seen_task.test.y)),
                "total": len(seen_task.test),
            }

        seen = stream.incremental[: task.task_id]
        if eval_threads > 1:
            with ThreadPoolExecutor(max_workers=eval_threads) as pool:
                evals = list(pool.map(eval_one, seen))
        else:
            evals = [eval_one(s) for s in seen]
        for e in evals:
            matrix.record(task.task_id, e["task_id"], e["correct"], e["total"])
        rec = _step_record(matrix, task.task_id, evals, with_routing=False)
        steps.append(rec)
        say(f"baseline task {task.task_id}: last={rec['last']:.4f} new={rec['new_task_acc']:.4f}")

    timings["train_steps"] = step_times
    report = RunReport(
        kind="sequential_baseline",
        seed=cfg.seed,
        backend=K.BACKEND,
        config=snapshot,
        config_hash=config_hash(snapshot),
        num_tasks=stream.num_tasks,
        matrix=matrix,
        steps=steps,
        checksums={"model": net.checksum(), "head": params_checksum(clf.params("baseline.head"))},
        training=training,
        backbone_stats=bb_stats,
        timings=timings,
    )
    model = {"net": net, "head": clf, "classes": all_classes}
    return model, report
