"""Single-file model checkpoints.

Layout: magic "ACKP", u32 format version, u64 header length, a UTF-8 JSON
header, then the raw little-endian section payloads back to back. Every
section records shape, dtype, offset, and a sha256 of its bytes; loading
verifies all of them, so a flipped byte anywhere is caught and named.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .adapters import Adapter
from .backbone import Backbone, identity_backbone
from .engine import ModelState, _current_checksums
from .errors import CheckpointError
from .gates import ReplayBuffer, SynapseGate
from .nn import Linear
from .prototypes import FeatureHead, PrototypeTable

MAGIC = b"ACKP"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


class _Writer:
    def __init__(self):
        self.sections: list[dict] = []
        self.blobs: list[bytes] = []
        self.offset = 0

    def add(self, name: str, arr: np.ndarray, dtype: str = "<f8") -> None:
        data = np.ascontiguousarray(arr, dtype=dtype).tobytes()
        self.sections.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": dtype,
                "offset": self.offset,
                "nbytes": len(data),
                "sha256": hashlib.sha256(data).hexdigest(),
            }
        )
        self.blobs.append(data)
        self.offset += len(data)

    def add_linear(self, name: str, layer: Linear) -> None:
        self.add(f"{name}.weight", layer.weight.data)
        self.add(f"{name}.bias", layer.bias.data)


def save_checkpoint(state: ModelState, path) -> Path:
    w = _Writer()
    for i, layer in enumerate(state.backbone.layers):
        w.add_linear(f"backbone.layer{i}", layer)
    if state.head.layer is not None:
        w.add_linear("feature_head", state.head.layer)
    for a in state.adapters:
        w.add_linear(f"adapter{a.task_id}.down", a.down)
        w.add_linear(f"adapter{a.task_id}.up", a.up)
    gate_meta = []
    for g in state.gates:
        if g.hidden is not None:
            w.add_linear(f"gate{g.task_id}.hidden", g.hidden)
            w.add_linear(f"gate{g.task_id}.out", g.out)
        if g.projection is not None:
            w.add(f"gate{g.task_id}.projection", g.projection)
        gate_meta.append(
            {
                "task_id": g.task_id,
                "mode": g.mode,
                "threshold": g.threshold,
                "noise_seed": g.noise_seed,
                "has_scorer": g.hidden is not None,
                "has_projection": g.projection is not None,
            }
        )
    proto_ids = state.prototypes.class_ids()
    if proto_ids:
        w.add("prototypes.matrix", state.prototypes.matrix())
    buffer_meta: dict = {"per_class": state.buffer.per_class, "mode": state.buffer.mode}
    if state.buffer.mode == "stored":
        buffer_meta["tasks"] = state.buffer.task_ids()
        for tid in state.buffer.task_ids():
            X, y = state.buffer.stored[tid]
            w.add(f"buffer.task{tid}.X", X)
            w.add(f"buffer.task{tid}.y", y, dtype="<i8")
    else:
        gauss = {}
        for tid in state.buffer.task_ids():
            entries = []
            for c, mean, std, count in state.buffer.gaussian[tid]:
                w.add(f"buffer.task{tid}.class{c}.mean", mean.reshape(1, -1))
                w.add(f"buffer.task{tid}.class{c}.std", std.reshape(1, -1))
                entries.append({"class_id": c, "count": count})
            gauss[str(tid)] = entries
        buffer_meta["gaussian"] = gauss

    header = {
        "format_version": FORMAT_VERSION,
        "meta": {
            "step": state.step,
            "seed": state.seed,
            "gate_mode": state.gate_mode,
            "scoring": state.scoring,
            "feature_head": state.head.kind,
            "embed_dim": state.embed_dim,
            "input_dim": state.backbone.input_dim,
            "identity_backbone": state.backbone.identity,
            "num_backbone_layers": len(state.backbone.layers),
            "task_classes": {str(t): list(map(int, cs)) for t, cs in sorted(state.task_classes.items())},
            "adapters": [{"task_id": a.task_id, "alpha": a.alpha} for a in state.adapters],
            "gates": gate_meta,
            "prototype_ids": proto_ids,
            "buffer": buffer_meta,
            "checksums": dict(sorted(state.checksums.items())),
        },
        "sections": w.sections,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()

    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        for blob in w.blobs:
            fh.write(blob)
    return out


def _read_header(path: Path) -> tuple[dict, bytes]:
    raw = path.read_bytes()
    if len(raw) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated prefix ({len(raw)} bytes)")
    magic, version, header_len = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    if len(raw) < _PREFIX.size + header_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[_PREFIX.size : _PREFIX.size + header_len])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: header is not valid JSON ({exc})") from exc
    payload = raw[_PREFIX.size + header_len :]
    return header, payload


class _Reader:
    def __init__(self, header: dict, payload: bytes, path: Path):
        self.sections = {s["name"]: s for s in header["sections"]}
        self.payload = payload
        self.path = path
        expected = sum(s["nbytes"] for s in header["sections"])
        if len(payload) != expected:
            raise CheckpointError(f"{path}: payload is {len(payload)} bytes, header expects {expected}")

    def get(self, name: str) -> np.ndarray:
        s = self.sections.get(name)
        if s is None:
            raise CheckpointError(f"{self.path}: missing section '{name}'")
        blob = self.payload[s["offset"] : s["offset"] + s["nbytes"]]
        if hashlib.sha256(blob).hexdigest() != s["sha256"]:
            raise CheckpointError(f"{self.path}: checksum mismatch in section '{name}'")
        return np.frombuffer(blob, dtype=s["dtype"]).reshape(s["shape"]).copy()

    def linear(self, name: str) -> Linear:
        return Linear.from_arrays(self.get(f"{name}.weight"), self.get(f"{name}.bias"))


def load_checkpoint(path) -> ModelState:
    p = Path(path)
    if not p.exists():
        raise CheckpointError(f"checkpoint not found: {p}")
    header, payload = _read_header(p)
    meta = header["meta"]
    r = _Reader(header, payload, p)

    if meta["identity_backbone"]:
        bb = identity_backbone(meta["input_dim"])
    else:
        layers = [r.linear(f"backbone.layer{i}") for i in range(meta["num_backbone_layers"])]
        bb = Backbone(layers, input_dim=meta["input_dim"])
        bb.frozen = True

    head = FeatureHead.__new__(FeatureHead)
    head.kind = meta["feature_head"]
    head.layer = r.linear("feature_head") if meta["feature_head"] == "random_mlp" else None

    adapters = []
    for am in meta["adapters"]:
        t = am["task_id"]
        a = Adapter(t, r.linear(f"adapter{t}.down"), r.linear(f"adapter{t}.up"), am["alpha"])
        a.frozen = True
        adapters.append(a)

    gates = []
    for gm in meta["gates"]:
        t = gm["task_id"]
        hidden = out = None
        if gm["has_scorer"]:
            hidden = r.linear(f"gate{t}.hidden")
            out = r.linear(f"gate{t}.out")
        g = SynapseGate(t, mode=gm["mode"], hidden=hidden, out=out, threshold=gm["threshold"])
        g.frozen = True
        g.noise_seed = gm["noise_seed"]
        if gm["has_projection"]:
            g.projection = r.get(f"gate{t}.projection")
        gates.append(g)

    table = PrototypeTable()
    if meta["prototype_ids"]:
        mat = r.get("prototypes.matrix")
        for i, cid in enumerate(meta["prototype_ids"]):
            table.add(cid, mat[i])

    bmeta = meta["buffer"]
    buffer = ReplayBuffer(bmeta["per_class"])
    if bmeta["mode"] == "stored":
        for tid in bmeta["tasks"]:
            buffer.stored[tid] = (r.get(f"buffer.task{tid}.X"), r.get(f"buffer.task{tid}.y"))
    else:
        for tid_str, entries in sorted(bmeta["gaussian"].items(), key=lambda kv: int(kv[0])):
            tid = int(tid_str)
            stats = []
            for e in entries:
                c = e["class_id"]
                stats.append(
                    (c, r.get(f"buffer.task{tid}.class{c}.mean").ravel(), r.get(f"buffer.task{tid}.class{c}.std").ravel(), e["count"])
                )
            buffer.gaussian[tid] = stats

    state = ModelState(
        backbone=bb,
        head=head,
        adapters=adapters,
        gates=gates,
        prototypes=table,
        buffer=buffer,
        seed=meta["seed"],
        gate_mode=meta["gate_mode"],
        scoring=meta["scoring"],
        step=meta["step"],
        task_classes={int(t): tuple(cs) for t, cs in meta["task_classes"].items()},
    )
    state.checksums = _current_checksums(state)
    stored_sums = meta["checksums"]
    if state.checksums != stored_sums:
        bad = sorted(set(stored_sums) ^ set(state.checksums) | {k for k in stored_sums if state.checksums.get(k) != stored_sums[k]})
        raise CheckpointError(f"{p}: component checksums disagree after load: {', '.join(bad)}")
    return state


def inspect_checkpoint(path) -> dict:
    """Summary used by the CLI: meta, per-section info, parameter totals."""
    p = Path(path)
    if not p.exists():
        raise CheckpointError(f"checkpoint not found: {p}")
    header, payload = _read_header(p)
    r = _Reader(header, payload, p)
    meta = header["meta"]
    for s in header["sections"]:
        r.get(s["name"])  # verifies every sha256
    param_counts: dict[str, int] = {}
    for s in header["sections"]:
        component = s["name"].split(".")[0]
        param_counts[component] = param_counts.get(component, 0) + int(np.prod(s["shape"]))
    proto_by_task = {}
    ids = set(meta["prototype_ids"])
    for t, cs in meta["task_classes"].items():
        if int(t) > 0:
            proto_by_task[t] = len(ids & set(cs))
    return {
        "format_version": header["format_version"],
        "step": meta["step"],
        "seed": meta["seed"],
        "gate_mode": meta["gate_mode"],
        "scoring": meta["scoring"],
        "embed_dim": meta["embed_dim"],
        "adapters": len(meta["adapters"]),
        "gates": len(meta["gates"]),
        "prototypes": len(meta["prototype_ids"]),
        "prototypes_by_task": proto_by_task,
        "buffer_mode": meta["buffer"]["mode"],
        "sections": len(header["sections"]),
        "param_counts": param_counts,
        "total_params": sum(param_counts.values()),
        "checksums": meta["checksums"],
    }
