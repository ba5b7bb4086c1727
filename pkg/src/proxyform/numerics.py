"""Minimal dense numerics with hand-written reverse-mode pullbacks.

Feature matrices are plain 2-D numpy arrays (float32 by default in the
pipeline, float64 in verification mode). Every differentiable operation
``op(...)`` has a companion ``op_vjp(...)`` that maps an output gradient
back to input gradients; composites chain the vjps in reverse order.
"""

from dataclasses import dataclass

import numpy as np

FeatureMatrix = np.ndarray

DEFAULT_DTYPE = np.float32


@dataclass
class LinearParams:
    """Weights of a dense layer x @ weight (+ bias)."""

    weight: np.ndarray  # (in, out)
    bias: np.ndarray | None = None  # (out,)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def astype(self, dtype) -> "LinearParams":
        b = None if self.bias is None else self.bias.astype(dtype)
        return LinearParams(self.weight.astype(dtype), b)


def check_finite(x: np.ndarray, what: str = "matrix") -> None:
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{what} contains non-finite entries")


def matmul(a: FeatureMatrix, b: FeatureMatrix) -> FeatureMatrix:
    """Standard matrix product."""
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return a @ b


def matmul_vjp(a, b, g):
    """Pullback of matmul: dA = g @ B^T, dB = A^T @ g."""
    return g @ b.T, a.T @ g


def linear(x: FeatureMatrix, p: LinearParams) -> FeatureMatrix:
    """Dense layer x @ W (+ bias broadcast per row)."""
    if x.shape[1] != p.in_dim:
        raise ValueError(f"linear shape mismatch: {x.shape} with weight {p.weight.shape}")
    out = x @ p.weight
    if p.bias is not None:
        out = out + p.bias
    return out


def linear_vjp(x, p: LinearParams, g):
    """Pullback of linear: (dx, dW, db). db is None when p has no bias."""
    dx = g @ p.weight.T
    dw = x.T @ g
    db = g.sum(axis=0) if p.bias is not None else None
    return dx, dw, db


def softmax_rows(x: FeatureMatrix) -> FeatureMatrix:
    """Row-wise softmax with max subtraction for stability."""
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_rows_vjp(y, g):
    """Pullback of softmax given its output y: dx = y * (g - sum(g*y))."""
    return y * (g - np.sum(g * y, axis=-1, keepdims=True))


def relu(x: FeatureMatrix) -> FeatureMatrix:
    return np.maximum(x, 0.0)


def relu_vjp(x, g):
    return g * (x > 0)


def avg_pool_rows(x: FeatureMatrix) -> FeatureMatrix:
    """Column means as a single row (1, C)."""
    if x.shape[0] == 0:
        raise ValueError("cannot pool an empty matrix")
    return x.mean(axis=0, keepdims=True)


def avg_pool_rows_vjp(x, g):
    return np.broadcast_to(g / x.shape[0], x.shape).copy()


def max_pool_rows(x: FeatureMatrix) -> FeatureMatrix:
    """Column maxima as a single row (1, C)."""
    if x.shape[0] == 0:
        raise ValueError("cannot pool an empty matrix")
    return x.max(axis=0, keepdims=True)


def max_pool_rows_vjp(x, g):
    # argmax picks the first (lowest-index) row among ties
    idx = x.argmax(axis=0)
    dx = np.zeros_like(x)
    dx[idx, np.arange(x.shape[1])] = g[0]
    return dx


def attention(q: FeatureMatrix, k: FeatureMatrix, v: FeatureMatrix,
              scaled: bool = True) -> FeatureMatrix:
    """Softmax attention softmax(q k^T / sqrt(d)) v.

    ``scaled=False`` drops the 1/sqrt(d) logit scaling and evaluates the
    unscaled form softmax(q k^T) v.
    """
    if q.shape[1] != k.shape[1]:
        raise ValueError(f"attention width mismatch: q {q.shape}, k {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise ValueError(f"attention row mismatch: k {k.shape}, v {v.shape}")
    s = 1.0 / np.sqrt(q.shape[1]) if scaled else 1.0
    weights = softmax_rows((q @ k.T) * s)
    return weights @ v


def attention_vjp(q, k, v, g, scaled: bool = True):
    """Pullback of attention: (dq, dk, dv). Recomputes the weight matrix."""
    s = 1.0 / np.sqrt(q.shape[1]) if scaled else 1.0
    weights = softmax_rows((q @ k.T) * s)
    dv = weights.T @ g
    dw = g @ v.T
    dz = softmax_rows_vjp(weights, dw) * s
    dq = dz @ k
    dk = dz.T @ q
    return dq, dk, dv


def flatten_arrays(arrays):
    """Pack a list of arrays into one float64 vector; returns (vec, unpack)."""
    shapes = [a.shape for a in arrays]
    sizes = [a.size for a in arrays]
    vec = np.concatenate([np.asarray(a, dtype=np.float64).ravel() for a in arrays])

    def unpack(v):
        out, pos = [], 0
        for shape, size in zip(shapes, sizes):
            out.append(np.asarray(v[pos:pos + size], dtype=np.float64).reshape(shape))
            pos += size
        return out

    return vec, unpack


def grad_check(f, x0: np.ndarray, step: float = 1e-6) -> float:
    """Compare analytic gradients against central finite differences.

    ``f`` maps a flat float64 parameter vector to ``(value, gradient)``
    where ``gradient`` has the same length as the vector. Each coordinate
    is perturbed by ``+-step`` and the relative error

        |g_fd - g_an| / max(1e-8, |g_fd| + |g_an|)

    is returned as its maximum over coordinates.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    value, g_an = f(x0)
    g_an = np.asarray(g_an, dtype=np.float64).ravel()
    if not np.isfinite(value) or not np.all(np.isfinite(g_an)):
        raise ValueError("function value or analytic gradient is non-finite")
    if g_an.shape != x0.shape:
        raise ValueError(f"gradient shape {g_an.shape} does not match parameters {x0.shape}")

    worst = 0.0
    for i in range(x0.size):
        x_plus = x0.copy()
        x_plus[i] += step
        x_minus = x0.copy()
        x_minus[i] -= step
        f_plus, _ = f(x_plus)
        f_minus, _ = f(x_minus)
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise ValueError("non-finite function value during finite differencing")
        g_fd = (f_plus - f_minus) / (2.0 * step)
        err = abs(g_fd - g_an[i]) / max(1e-8, abs(g_fd) + abs(g_an[i]))
        worst = max(worst, err)
    return worst
