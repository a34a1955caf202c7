"""Gradient correctness by central finite differences, plus tape semantics.

Every differentiable op is checked against an independent numeric oracle:
rel error = |num - ana| / max(1e-5, |num|, |ana|) must stay <= 1e-4. Inputs
are small random matrices (dims <= 8); the suite runs well over 100 distinct
trials.
"""

from __future__ import annotations

import numpy as np
import pytest

from artsy.tensor import (
    Tape,
    Tensor,
    add,
    binary_cross_entropy,
    l2_normalize_rows,
    matmul,
    mul,
    relu,
    scale,
    sigmoid,
    softmax_cross_entropy,
    sub,
)

TOL = 1e-4
H = 1e-6


def _wsum(t, w: np.ndarray):
    """Scalarize: sum(t * w) as a 1x1 tensor, built from differentiable ops."""
    prod = mul(t, Tensor(w))
    ones_row = Tensor(np.ones((1, prod.data.shape[0])))
    ones_col = Tensor(np.ones((prod.data.shape[1], 1)))
    return matmul(matmul(ones_row, prod), ones_col)


def _rel_err(num: float, ana: float) -> float:
    return abs(num - ana) / max(1e-5, abs(num), abs(ana))


def _away_from_kinks(x: np.ndarray, margin: float = 1e-3) -> np.ndarray:
    """Push entries away from relu's kink so the numeric oracle is valid."""
    bumped = np.where(np.abs(x) < margin, x + np.sign(x + 0.5) * margin * 2, x)
    return bumped


def check_gradients(build, inputs: list[np.ndarray], trials_counter: list[int]) -> None:
    """build(tensors) -> scalar loss Tensor; checks d loss / d every input."""
    tensors = [Tensor(x.copy(), requires_grad=True) for x in inputs]
    with Tape() as tape:
        loss = build(tensors)
        tape.backward(loss)
    for ti, t in enumerate(tensors):
        assert t.grad is not None, f"input {ti} got no gradient"
        for idx in np.ndindex(*t.data.shape):
            orig = t.data[idx]
            t.data[idx] = orig + H
            up = build(tensors).item()
            t.data[idx] = orig - H
            down = build(tensors).item()
            t.data[idx] = orig
            num = (up - down) / (2 * H)
            ana = t.grad[idx]
            err = _rel_err(num, ana)
            assert err <= TOL, f"input {ti} entry {idx}: numeric {num:.8g} vs analytic {ana:.8g} (rel {err:.2e})"
    trials_counter[0] += 1


@pytest.fixture(scope="module")
def counter():
    return [0]


def _rand(rng, *shape):
    return rng.standard_normal(shape)


def test_matmul_grads(rng, counter):
    for _ in range(15):
        m, k, n = rng.integers(1, 8, size=3)
        a, b = _rand(rng, m, k), _rand(rng, k, n)
        w = _rand(rng, m, n)

        def build(ts):
            return _wsum(matmul(ts[0], ts[1]), w)

        check_gradients(build, [a, b], counter)


def test_add_sub_mul_scale_grads(rng, counter):
    for _ in range(15):
        m, n = rng.integers(1, 8, size=2)
        a, b = _rand(rng, m, n), _rand(rng, m, n)
        w = _rand(rng, m, n)
        kscale = float(rng.uniform(0.2, 3.0))

        def build(ts):
            out = scale(sub(add(ts[0], ts[1]), mul(ts[0], ts[1])), kscale)
            return _wsum(out, w)

        check_gradients(build, [a, b], counter)


def test_bias_broadcast_add_grads(rng, counter):
    for _ in range(10):
        m, n = rng.integers(1, 8, size=2)
        a, b = _rand(rng, m, n), _rand(rng, 1, n)
        w = _rand(rng, m, n)

        def build(ts):
            return _wsum(add(ts[0], ts[1]), w)

        check_gradients(build, [a, b], counter)


def test_relu_grads(rng, counter):
    for _ in range(15):
        m, n = rng.integers(1, 8, size=2)
        a = _away_from_kinks(_rand(rng, m, n))
        w = _rand(rng, m, n)

        def build(ts):
            return _wsum(relu(ts[0]), w)

        check_gradients(build, [a], counter)


def test_sigmoid_grads(rng, counter):
    for _ in range(15):
        m, n = rng.integers(1, 8, size=2)
        a = _rand(rng, m, n)
        w = _rand(rng, m, n)

        def build(ts):
            return _wsum(sigmoid(ts[0]), w)

        check_gradients(build, [a], counter)


def test_l2_normalize_rows_grads(rng, counter):
    for _ in range(15):
        m, n = rng.integers(1, 8, size=2)
        a = _rand(rng, m, n)
        a += np.sign(a.sum(axis=1, keepdims=True)) * 0.5  # keep rows off zero
        w = _rand(rng, m, n)

        def build(ts):
            return _wsum(l2_normalize_rows(ts[0]), w)

        check_gradients(build, [a], counter)


def test_softmax_cross_entropy_grads(rng, counter):
    for _ in range(15):
        m, c = int(rng.integers(1, 8)), int(rng.integers(2, 8))
        logits = _rand(rng, m, c)
        labels = rng.integers(0, c, size=m)

        def build(ts):
            return softmax_cross_entropy(ts[0], labels)

        check_gradients(build, [logits], counter)


def test_binary_cross_entropy_grads(rng, counter):
    for _ in range(15):
        m = int(rng.integers(1, 8))
        scores = sigmoid(Tensor(_rand(rng, m, 1))).data.copy()
        scores = np.clip(scores, 0.05, 0.95)  # keep away from the clamp
        labels = rng.integers(0, 2, size=m).astype(np.float64)

        def build(ts):
            return binary_cross_entropy(ts[0], labels)

        check_gradients(build, [scores], counter)


def test_trial_count(counter):
    assert counter[0] >= 100, f"only {counter[0]} gradient trials ran"


def test_tape_releases_gradients():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    w = np.ones((2, 2))
    with Tape() as tape:
        loss = _wsum(mul(a, a), w)
        tape.backward(loss)
    g1 = a.grad.copy()
    with Tape() as tape:
        loss = _wsum(mul(a, a), w)
        tape.backward(loss)
    assert np.array_equal(a.grad, g1), "second backward must not accumulate into stale grads"


def test_item_requires_scalar():
    a = Tensor(np.arange(6, dtype=np.float64).reshape(2, 3))
    with pytest.raises(Exception):
        a.item()
