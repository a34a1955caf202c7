"""Pure-numpy kernel backend.

Same call surface as the compiled core (`_core.pyx`); semantics match, bit
patterns need not (summation order differs). All arrays are C-contiguous
float64, labels int64. Shape checking lives one layer up.
"""

from __future__ import annotations

import numpy as np

# sigmoid saturation clamp keeps scores strictly inside (0, 1)
SIG_LO = 1e-300
SIG_HI = 1.0 - 1e-16


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b


def matmul_nt(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a @ b.T"""
    return a @ b.T


def matmul_tn(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a.T @ b"""
    return a.T @ b


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_grad(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    return np.where(x > 0.0, g, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # two-branch form avoids exp overflow on large negative inputs
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return np.clip(out, SIG_LO, SIG_HI)


def sigmoid_grad(y: np.ndarray, g: np.ndarray) -> np.ndarray:
    """y is the sigmoid output."""
    return g * y * (1.0 - y)


def add_bias(x: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise bias add; b is (1, n)."""
    return x + b


def l2rows(x: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise unit vectors; returns (x / norms, norms) with norms >= eps."""
    norms = np.sqrt((x * x).sum(axis=1, keepdims=True))
    norms = np.maximum(norms, eps)
    return x / norms, norms


def l2rows_grad(unit: np.ndarray, norms: np.ndarray, g: np.ndarray, eps: float) -> np.ndarray:
    """d(x/|x|)/dx times upstream: project g off the unit row, divide by norm.

    Rows whose norm hit the eps clamp were divided by the constant eps, so
    their exact gradient is plain g / eps (no projection term).
    """
    dots = (g * unit).sum(axis=1, keepdims=True)
    out = (g - unit * dots) / norms
    clamped = norms[:, 0] <= eps
    if clamped.any():
        out[clamped] = g[clamped] / eps
    return out


def bias_grad(g: np.ndarray) -> np.ndarray:
    return g.sum(axis=0, keepdims=True)


def softmax_xent(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy with max-subtraction; returns (loss, probs)."""
    m = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    denom = ex.sum(axis=1, keepdims=True)
    probs = ex / denom
    picked = shifted[np.arange(m), labels]
    loss = float(np.mean(np.log(denom[:, 0]) - picked))
    return loss, probs


def softmax_xent_grad(probs: np.ndarray, labels: np.ndarray, scale: float) -> np.ndarray:
    """d(loss)/d(logits) times upstream; scale = upstream / batch."""
    d = probs * scale
    d[np.arange(probs.shape[0]), labels] -= scale
    return d


def bce(scores: np.ndarray, labels: np.ndarray, eps: float) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy; scores (m,1), labels (m,) in {0,1}.

    Scores are clamped to [eps, 1-eps] before the logs; returns the clamped
    copy for the backward pass.
    """
    s = np.clip(scores, eps, 1.0 - eps)
    y = labels.reshape(-1, 1)
    loss = float(-np.mean(y * np.log(s) + (1.0 - y) * np.log(1.0 - s)))
    return loss, s


def bce_grad(clamped: np.ndarray, labels: np.ndarray, scale: float) -> np.ndarray:
    """d(loss)/d(scores) times upstream; scale = upstream / batch."""
    y = labels.reshape(-1, 1)
    return scale * (-y / clamped + (1.0 - y) / (1.0 - clamped))


def sgd_update(
    param: np.ndarray,
    grad: np.ndarray,
    vel: np.ndarray,
    lr: float,
    momentum: float,
    weight_decay: float,
) -> None:
    """In-place momentum step: v = mu*v + g + wd*p; p -= lr*v."""
    if weight_decay != 0.0:
        grad = grad + weight_decay * param
    vel *= momentum
    vel += grad
    param -= lr * vel
