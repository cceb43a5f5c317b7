"""Differentiable building blocks with hand-written reverse-mode gradients.

Layers cache what their backward pass needs on the instance (one forward per
backward). Parameters are plain numpy arrays updated in place, so training is
bit-reproducible for a fixed seed in single-threaded mode. Training runs in
float32; grad_check builds float64 layers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

_GELU_A = np.sqrt(2.0 / np.pi)
_GELU_B = 0.044715


@dataclass
class TrainConfig:
    learning_rate: float = 3e-5
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.01
    epochs: int = 80            # pretraining default; fine-tuning uses 40
    batch_size: int = 128
    max_grad_norm: float = 1.0
    layerdrop_p: float = 0.1
    warmup_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.layerdrop_p < 1.0:
            raise ValueError("layerdrop_p must be in [0, 1)")
        if self.max_grad_norm <= 0:
            raise ValueError("max_grad_norm must be positive")


class Module:
    """Tree of parameters plus accumulated gradients."""

    def __init__(self):
        self._params: dict[str, np.ndarray] = {}
        self._grads: dict[str, np.ndarray] = {}
        self._children: dict[str, Module] = {}

    def add_param(self, name: str, value: np.ndarray) -> np.ndarray:
        self._params[name] = value
        self._grads[name] = np.zeros_like(value)
        return value

    def add_child(self, name: str, child: "Module") -> "Module":
        self._children[name] = child
        return child

    def named_params(self, prefix: str = ""):
        for n, p in self._params.items():
            yield prefix + n, p
        for cn, c in self._children.items():
            yield from c.named_params(prefix + cn + ".")

    def named_grads(self, prefix: str = ""):
        for n, g in self._grads.items():
            yield prefix + n, g
        for cn, c in self._children.items():
            yield from c.named_grads(prefix + cn + ".")

    def zero_grads(self):
        for g in self._grads.values():
            g[...] = 0.0
        for c in self._children.values():
            c.zero_grads()

    def param_count(self) -> int:
        return sum(p.size for _, p in self.named_params())


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator,
                 dtype=np.float32):
        super().__init__()
        bound = np.sqrt(6.0 / (n_in + n_out))
        self.w = self.add_param("w", rng.uniform(-bound, bound, (n_in, n_out)).astype(dtype))
        self.b = self.add_param("b", np.zeros(n_out, dtype=dtype))
        self._x = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return x @ self.w + self.b

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x2 = self._x.reshape(-1, self.w.shape[0])
        dy2 = dy.reshape(-1, self.w.shape[1])
        self._grads["w"] += x2.T @ dy2
        self._grads["b"] += dy2.sum(axis=0)
        return dy @ self.w.T


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5, dtype=np.float32):
        super().__init__()
        self.gamma = self.add_param("gamma", np.ones(dim, dtype=dtype))
        self.beta = self.add_param("beta", np.zeros(dim, dtype=dtype))
        self.eps = eps

    def forward(self, x: np.ndarray) -> np.ndarray:
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        self._inv = 1.0 / np.sqrt(var + self.eps)
        self._xhat = (x - mu) * self._inv
        return self.gamma * self._xhat + self.beta

    def backward(self, dy: np.ndarray) -> np.ndarray:
        xhat, inv = self._xhat, self._inv
        d = xhat.shape[-1]
        self._grads["gamma"] += (dy * xhat).reshape(-1, d).sum(axis=0)
        self._grads["beta"] += dy.reshape(-1, d).sum(axis=0)
        dxhat = dy * self.gamma
        mean_dxhat = dxhat.mean(axis=-1, keepdims=True)
        mean_dxhat_xhat = (dxhat * xhat).mean(axis=-1, keepdims=True)
        return inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)


class Gelu(Module):
    """tanh-approximation GELU."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        self._t = np.tanh(_GELU_A * (x + _GELU_B * x ** 3))
        return 0.5 * x * (1.0 + self._t)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x, t = self._x, self._t
        du = _GELU_A * (1.0 + 3.0 * _GELU_B * x ** 2)
        return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * du)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


class MultiHeadSelfAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator,
                 dtype=np.float32):
        super().__init__()
        if dim % heads:
            raise ValueError("dim must be divisible by heads")
        self.dim, self.heads, self.dh = dim, heads, dim // heads
        self.wq = self.add_child("wq", Linear(dim, dim, rng, dtype))
        self.wk = self.add_child("wk", Linear(dim, dim, rng, dtype))
        self.wv = self.add_child("wv", Linear(dim, dim, rng, dtype))
        self.wo = self.add_child("wo", Linear(dim, dim, rng, dtype))

    def _split(self, x):
        b, t, _ = x.shape
        return x.reshape(b, t, self.heads, self.dh).transpose(0, 2, 1, 3)

    def _merge(self, x):
        b, h, t, dh = x.shape
        return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)

    def forward(self, x: np.ndarray, key_mask: np.ndarray | None = None) -> np.ndarray:
        q = self._split(self.wq.forward(x))
        k = self._split(self.wk.forward(x))
        v = self._split(self.wv.forward(x))
        scores = q @ k.transpose(0, 1, 3, 2) / np.sqrt(self.dh)
        if key_mask is not None:
            scores = scores + np.where(key_mask, 0.0, -1e9)[:, None, None, :]
        a = softmax(scores, axis=-1)
        self._a, self._q, self._k, self._v = a, q, k, v
        return self.wo.forward(self._merge(a @ v))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        a, q, k, v = self._a, self._q, self._k, self._v
        dctx = self._split(self.wo.backward(dy))
        da = dctx @ v.transpose(0, 1, 3, 2)
        dv = a.transpose(0, 1, 3, 2) @ dctx
        ds = a * (da - (da * a).sum(axis=-1, keepdims=True)) / np.sqrt(self.dh)
        dq = ds @ k
        dk = ds.transpose(0, 1, 3, 2) @ q
        dx = self.wq.backward(self._merge(dq))
        dx += self.wk.backward(self._merge(dk))
        dx += self.wv.backward(self._merge(dv))
        return dx


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator,
                 dtype=np.float32):
        super().__init__()
        self.lin1 = self.add_child("lin1", Linear(dim, hidden, rng, dtype))
        self.act = Gelu()
        self.lin2 = self.add_child("lin2", Linear(hidden, dim, rng, dtype))

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.lin2.forward(self.act.forward(self.lin1.forward(x)))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return self.lin1.backward(self.act.backward(self.lin2.backward(dy)))


class TransformerBlock(Module):
    """Pre-norm block: x + attn(ln1(x)), then x + ff(ln2(x))."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator,
                 ff_mult: int = 4, dtype=np.float32):
        super().__init__()
        self.ln1 = self.add_child("ln1", LayerNorm(dim, dtype=dtype))
        self.attn = self.add_child("attn", MultiHeadSelfAttention(dim, heads, rng, dtype))
        self.ln2 = self.add_child("ln2", LayerNorm(dim, dtype=dtype))
        self.ff = self.add_child("ff", FeedForward(dim, ff_mult * dim, rng, dtype))

    def forward(self, x: np.ndarray, key_mask: np.ndarray | None = None) -> np.ndarray:
        h = x + self.attn.forward(self.ln1.forward(x), key_mask)
        return h + self.ff.forward(self.ln2.forward(h))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dh = dy + self.ln2.backward(self.ff.backward(dy))
        return dh + self.ln1.backward(self.attn.backward(dh))


class MeanPool(Module):
    """Mean over time excluding padded frames. mask is (B, T) with True = real."""

    def forward(self, x: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
        b, t, _ = x.shape
        if mask is None:
            mask = np.ones((b, t), dtype=bool)
        if np.any(mask.sum(axis=1) == 0):
            raise ValueError("cannot mean-pool an all-padding sequence")
        self._mask = mask
        self._counts = mask.sum(axis=1, keepdims=True)
        return (x * mask[:, :, None]).sum(axis=1) / self._counts

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return self._mask[:, :, None] * dy[:, None, :] / self._counts[:, :, None]


class GradientReversal(Module):
    """Identity forward; backward multiplies by -lambda."""

    def __init__(self, lam: float):
        super().__init__()
        if lam < 0:
            raise ValueError("lambda must be >= 0")
        self.lam = lam

    def forward(self, x: np.ndarray) -> np.ndarray:
        return x

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return -self.lam * dy


def softmax_cross_entropy(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over rows plus the gradient wrt logits."""
    targets = np.asarray(targets)
    n, k = logits.shape
    if np.any(targets < 0) or np.any(targets >= k):
        raise ValueError(f"targets must lie in [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsumexp - z[np.arange(n), targets]))
    grad = softmax(logits, axis=1)
    grad[np.arange(n), targets] -= 1.0
    return loss, grad / n


# -- Optimization ------------------------------------------------------------

class AdamW:
    """Decoupled weight decay Adam over a named parameter dict."""

    def __init__(self, params: dict[str, np.ndarray], cfg: TrainConfig,
                 eps: float = 1e-8):
        self.params = dict(sorted(params.items()))
        self.cfg = cfg
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(p) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p) for n, p in self.params.items()}

    def step(self, grads: dict[str, np.ndarray], lr: float | None = None) -> None:
        lr = self.cfg.learning_rate if lr is None else lr
        b1, b2 = self.cfg.betas
        wd = self.cfg.weight_decay
        self.t += 1
        for name, p in self.params.items():
            g = grads[name]
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in {name!r}")
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            mhat = m / (1.0 - b1 ** self.t)
            vhat = v / (1.0 - b2 ** self.t)
            p -= lr * (mhat / (np.sqrt(vhat) + self.eps) + wd * p)


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float = 1.0) -> float:
    """Scale all gradients in place so the global L2 norm is at most max_norm;
    returns the pre-clip norm."""
    total = 0.0
    for name in sorted(grads):
        g = grads[name]
        total += float((g.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear warmup to cfg.learning_rate, then linear decay to zero."""
    if not 0 <= step <= total_steps:
        raise ValueError("step must lie in [0, total_steps]")
    warmup = int(round(cfg.warmup_fraction * total_steps))
    if warmup > 0 and step <= warmup:
        return cfg.learning_rate * step / warmup
    if total_steps == warmup:
        return cfg.learning_rate
    return cfg.learning_rate * (total_steps - step) / (total_steps - warmup)


# -- Gradient verification ---------------------------------------------------

def grad_check(loss_fn: Callable[[], float], params: list[np.ndarray],
               analytic: list[np.ndarray], eps: float = 1e-4) -> float:
    """Max relative error between analytic gradients and central finite
    differences, perturbing every element of every array in place."""
    worst = 0.0
    for p, g in zip(params, analytic):
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        for i in range(flat_p.size):
            orig = flat_p[i]
            flat_p[i] = orig + eps
            hi = loss_fn()
            flat_p[i] = orig - eps
            lo = loss_fn()
            flat_p[i] = orig
            num = (hi - lo) / (2.0 * eps)
            denom = max(abs(num) + abs(flat_g[i]), 1e-6)
            worst = max(worst, abs(num - flat_g[i]) / denom)
    return worst
