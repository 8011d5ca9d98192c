"""Attention and MLP building blocks plus finite-difference gradient checking."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, gelu, layer_norm, matmul, no_grad, softmax


@dataclass(frozen=True)
class AttentionConfig:
    n_heads: int
    model_dim: int

    def __post_init__(self):
        if self.model_dim % self.n_heads:
            raise ValueError(
                f"model_dim={self.model_dim} not divisible by n_heads={self.n_heads}")
        if self.head_dim < 1:
            raise ValueError("head dimension must be >= 1")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.n_heads


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return matmul(x, w) + b


def sdp_attention(q: Tensor, k: Tensor, v: Tensor, d_v: int) -> Tensor:
    """Scaled dot-product attention softmax(Q K^T / sqrt(d_v)) V.

    Works on (..., n, d) operands; the softmax is row-wise and max-subtracted.
    """
    if d_v <= 0:
        raise ValueError("d_v must be positive")
    scores = matmul(q, k.swapaxes(-1, -2)) * (1.0 / math.sqrt(d_v))
    return matmul(softmax(scores), v)


def _split_heads(x: Tensor, h: int) -> Tensor:
    # (..., n, D) -> (..., h, n, D/h)
    *lead, n, dm = x.shape
    return x.reshape((*lead, n, h, dm // h)).swapaxes(-3, -2)


def _merge_heads(x: Tensor) -> Tensor:
    # (..., h, n, d) -> (..., n, h*d)
    *lead, h, n, d = x.shape
    return x.swapaxes(-3, -2).reshape((*lead, n, h * d))


def multi_head_attention(x_q: Tensor, x_kv: Tensor, params: dict,
                         cfg: AttentionConfig) -> Tensor:
    """h parallel attention blocks over learned projections, concatenated and
    output-projected. Self-attention is the x_q is x_kv case; cross-view
    attention passes a different key/value stream."""
    if x_q.shape[-1] != cfg.model_dim or x_kv.shape[-1] != cfg.model_dim:
        raise ValueError(
            f"feature width must equal model_dim={cfg.model_dim}, "
            f"got {x_q.shape[-1]} and {x_kv.shape[-1]}")
    q = _split_heads(linear(x_q, params["wq"], params["bq"]), cfg.n_heads)
    k = _split_heads(linear(x_kv, params["wk"], params["bk"]), cfg.n_heads)
    v = _split_heads(linear(x_kv, params["wv"], params["bv"]), cfg.n_heads)
    out = _merge_heads(sdp_attention(q, k, v, cfg.head_dim))
    return linear(out, params["wo"], params["bo"])


def mlp_block(x: Tensor, params: dict) -> Tensor:
    """Two fully connected layers with a GeLU in between."""
    return linear(gelu(linear(x, params["w1"], params["b1"])),
                  params["w2"], params["b2"])


# -- parameter construction ----------------------------------------------------

def init_linear(rng: np.random.Generator, d_in: int, d_out: int,
                dtype=np.float32) -> tuple[Tensor, Tensor]:
    """Scaled-uniform fan-in weight and zero bias, both trainable."""
    bound = 1.0 / math.sqrt(d_in)
    w = rng.uniform(-bound, bound, size=(d_in, d_out)).astype(dtype)
    b = np.zeros(d_out, dtype=dtype)
    return Tensor(w, requires_grad=True), Tensor(b, requires_grad=True)


def init_attention(rng, model_dim, dtype=np.float32) -> dict:
    params = {}
    for name in ("q", "k", "v", "o"):
        w, b = init_linear(rng, model_dim, model_dim, dtype)
        params[f"w{name}"], params[f"b{name}"] = w, b
    return params


def init_mlp(rng, d_in, d_hidden, d_out, dtype=np.float32) -> dict:
    w1, b1 = init_linear(rng, d_in, d_hidden, dtype)
    w2, b2 = init_linear(rng, d_hidden, d_out, dtype)
    return {"w1": w1, "b1": b1, "w2": w2, "b2": b2}


def init_layer_norm(d, dtype=np.float32) -> dict:
    return {"g": Tensor(np.ones(d, dtype=dtype), requires_grad=True),
            "b": Tensor(np.zeros(d, dtype=dtype), requires_grad=True)}


# -- gradient checking ----------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_err: float
    tol: float
    per_param: dict[str, float] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.max_rel_err < self.tol


def gradient_check(f, params: dict[str, Tensor], step: float = 1e-5,
                   tol: float = 1e-4) -> GradCheckReport:
    """Compare reverse-mode gradients of a scalar function against central
    finite differences, elementwise over every parameter.

    ``f`` is called with no arguments and must read the (float64) parameter
    tensors it closes over. The relative error per element is
    |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    for p in params.values():
        if p.data.dtype != np.float64:
            raise ValueError("gradient_check requires float64 parameters")
        p.zero_grad()
    out = f()
    if out.data.size != 1:
        raise ValueError("gradient_check needs a scalar-valued function")
    out.backward()
    analytic = {name: (np.array(p.grad) if p.grad is not None
                       else np.zeros_like(p.data))
                for name, p in params.items()}

    per_param = {}
    with no_grad():
        for name, p in params.items():
            flat = p.data.reshape(-1)
            num = np.zeros_like(flat)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                f_plus = float(f().data)
                flat[i] = orig - step
                f_minus = float(f().data)
                flat[i] = orig
                num[i] = (f_plus - f_minus) / (2.0 * step)
            a = analytic[name].reshape(-1)
            denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(num)))
            per_param[name] = float(np.max(np.abs(a - num) / denom)) if flat.size else 0.0
    max_err = max(per_param.values()) if per_param else 0.0
    return GradCheckReport(max_rel_err=max_err, tol=tol, per_param=per_param)
