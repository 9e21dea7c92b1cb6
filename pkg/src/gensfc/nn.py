"""Minimal dense/GCN kernels with hand-derived gradients.

Everything is float64 numpy with a fixed (row-major) summation order, so
results are bit-reproducible for a given seed.  Each forward returns a
cache consumed by the matching backward; backward passes are exact and
are cross-checked against central finite differences in the tests.  No
autodiff, no GPU: the graphs here are dense and tiny.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import StructuralError


def xavier_uniform(shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    """Uniform init in +-sqrt(6 / (fan_in + fan_out))."""
    fan_in, fan_out = shape[0], shape[-1]
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class ParamBundle:
    """Named parameter arrays plus per-parameter Adam state."""

    params: dict[str, np.ndarray] = field(default_factory=dict)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        self._m = {k: np.zeros_like(v) for k, v in self.params.items()}
        self._v = {k: np.zeros_like(v) for k, v in self.params.items()}
        self._step = 0

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        self.params[name] = np.asarray(value, dtype=np.float64)
        self._m[name] = np.zeros_like(self.params[name])
        self._v[name] = np.zeros_like(self.params[name])

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def copy(self) -> "ParamBundle":
        clone = ParamBundle(
            params={k: v.copy() for k, v in self.params.items()},
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
        )
        return clone

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for _, v in sorted(self.params.items())])

    def adam_step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        """Standard Adam update with bias correction; missing grads are
        treated as zero and leave their parameters untouched."""
        self._step += 1
        t = self._step
        for name, grad in grads.items():
            if name not in self.params:
                raise KeyError(f"unknown parameter {name!r}")
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            self.params[name] -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def adam_step(bundle: ParamBundle, grads: dict[str, np.ndarray], lr: float) -> ParamBundle:
    bundle.adam_step(grads, lr)
    return bundle


# ---------------------------------------------------------------------------
# graph kernels


def normalized_adjacency(adjacency: np.ndarray) -> np.ndarray:
    """Symmetric normalization D^-1/2 (A + I) D^-1/2 of a binary adjacency."""
    a = np.asarray(adjacency, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise StructuralError("adjacency must be square")
    if not np.array_equal(a, a.T):
        raise StructuralError("adjacency must be symmetric")
    if np.any(np.diag(a) != 0.0):
        raise StructuralError("adjacency must have a zero diagonal")
    a_hat = a + np.eye(a.shape[0])
    inv_sqrt = 1.0 / np.sqrt(a_hat.sum(axis=1))
    return a_hat * inv_sqrt[:, None] * inv_sqrt[None, :]


def gcn_forward(
    weights: list[np.ndarray], norm_adj: np.ndarray, x: np.ndarray
) -> tuple[np.ndarray, list]:
    """Stack of graph convolutions H' = relu(norm_adj @ H @ W)."""
    h = np.asarray(x, dtype=np.float64)
    cache = []
    for w in weights:
        agg = norm_adj @ h
        pre = agg @ w
        out = np.maximum(pre, 0.0)
        cache.append((h, agg, pre, w))
        h = out
    return h, cache


def gcn_backward(
    cache: list, norm_adj: np.ndarray, upstream: np.ndarray
) -> tuple[list[np.ndarray], np.ndarray]:
    """Gradients of a gcn_forward stack: per-layer weight grads plus the
    gradient w.r.t. the input features."""
    grad = np.asarray(upstream, dtype=np.float64)
    weight_grads: list[np.ndarray] = []
    for h, agg, pre, w in reversed(cache):
        grad = grad * (pre > 0.0)
        weight_grads.append(agg.T @ grad)
        grad = norm_adj.T @ (grad @ w.T)
    weight_grads.reverse()
    return weight_grads, grad


def mean_pool(h: np.ndarray) -> np.ndarray:
    """Column-wise mean over node embeddings."""
    if h.shape[0] < 1:
        raise ValueError("mean_pool needs at least one row")
    return h.mean(axis=0)


def mean_pool_backward(upstream: np.ndarray, n_rows: int) -> np.ndarray:
    return np.tile(upstream / n_rows, (n_rows, 1))


# ---------------------------------------------------------------------------
# dense kernels


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, tuple]:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    out = x @ w + b
    return out, (x, w)


def dense_backward(cache: tuple, upstream: np.ndarray):
    x, w = cache
    upstream = np.atleast_2d(upstream)
    return x.T @ upstream, upstream.sum(axis=0), upstream @ w.T


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    return upstream * (x > 0.0)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax, stabilized by max subtraction."""
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - log_norm
    return out if logits.ndim > 1 else out[0]


def log_softmax_backward(log_probs: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """d loss / d logits given d loss / d log_probs."""
    lp = np.atleast_2d(log_probs)
    up = np.atleast_2d(upstream)
    probs = np.exp(lp)
    grad = up - probs * up.sum(axis=1, keepdims=True)
    return grad if upstream.ndim > 1 else grad[0]


def softmax_xent(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of integer targets; returns (loss, dlogits)."""
    lp = np.atleast_2d(log_softmax(logits))
    targets = np.atleast_1d(targets)
    n = lp.shape[0]
    loss = -float(lp[np.arange(n), targets].sum()) / n
    grad = np.exp(lp)
    grad[np.arange(n), targets] -= 1.0
    grad /= n
    return loss, grad if logits.ndim > 1 else grad[0]


# ---------------------------------------------------------------------------
# gradient checking


def finite_diff_check(
    loss_fn,
    params: dict[str, np.ndarray],
    epsilon: float = 1e-6,
    max_coords: int = 120,
    seed: int = 0,
) -> float:
    """Max relative error between analytic gradients and central finite
    differences over a random subsample of coordinates.

    ``loss_fn(params) -> (loss, grads)`` must be pure.  The relative error
    per coordinate is |fd - an| / max(|fd|, |an|, 1e-8).
    """
    _, grads = loss_fn(params)
    coords = [
        (name, idx)
        for name, value in sorted(params.items())
        for idx in range(value.size)
    ]
    rng = np.random.default_rng(seed)
    if len(coords) > max_coords:
        picks = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in sorted(picks)]
    worst = 0.0
    for name, idx in coords:
        base = params[name].ravel()[idx]
        params[name].ravel()[idx] = base + epsilon
        up, _ = loss_fn(params)
        params[name].ravel()[idx] = base - epsilon
        down, _ = loss_fn(params)
        params[name].ravel()[idx] = base
        fd = (up - down) / (2.0 * epsilon)
        an = grads[name].ravel()[idx]
        err = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
        worst = max(worst, err)
    return worst
