"""Scaled dot-product attention, its low-rank projected variant, and backprop.

Both head types compute ``softmax(Q K^T / sqrt(d)) V`` from per-head
projections ``Q = q @ wq`` etc.; the linear head first shortens keys and
values along the sequence axis with ``E`` and ``F`` so the attention map is
``n x k`` instead of ``n x n``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np

from . import numkit
from .errors import ConfigError, ShapeError, StateError
from .numkit import flop_region, matmul, scale, softmax_rows
from .projections import (
    PROJECTION_KINDS,
    SHARING_MODES,
    Projection,
    ProjectionSet,
    as_projection,
)

MECHANISMS = ("standard", "linear")


@dataclass
class AttnConfig:
    n: int
    d_model: int
    d: int
    heads: int = 1
    layers: int = 1
    mechanism: str = "standard"
    k: int | list[list[int]] | None = None
    sharing: str = "none"
    projection: str = "learned_gaussian"
    seed: int = 0
    causal: bool = False

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        for name in ("n", "d_model", "d", "heads", "layers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.mechanism not in MECHANISMS:
            raise ConfigError(f"mechanism must be one of {MECHANISMS}, got {self.mechanism!r}")
        if self.sharing not in SHARING_MODES:
            raise ConfigError(f"sharing must be one of {SHARING_MODES}, got {self.sharing!r}")
        if self.projection not in PROJECTION_KINDS:
            raise ConfigError(
                f"projection must be one of {PROJECTION_KINDS}, got {self.projection!r}"
            )
        if self.causal:
            raise ConfigError("causal masking is not defined for projected attention")
        if self.mechanism == "linear":
            if self.k is None:
                raise ConfigError("linear attention requires k")
            if isinstance(self.k, list):
                if len(self.k) != self.layers or any(len(r) != self.heads for r in self.k):
                    raise ConfigError(
                        f"k schedule must be {self.layers} x {self.heads}"
                    )
            for layer in range(self.layers):
                for head in range(self.heads):
                    k = self.k_at(layer, head)
                    if not 1 <= k <= self.n:
                        raise ConfigError(f"k={k} at ({layer}, {head}) outside [1, n={self.n}]")

    def k_at(self, layer: int, head: int) -> int:
        if isinstance(self.k, list):
            return int(self.k[layer][head])
        return int(self.k)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class HeadOutput:
    context: np.ndarray
    map: np.ndarray
    cache: dict[str, Any] | None = field(default=None, repr=False)


@dataclass
class LayerWeights:
    wq: list[np.ndarray]
    wk: list[np.ndarray]
    wv: list[np.ndarray]
    wo: np.ndarray


def init_weights(config: AttnConfig) -> list[LayerWeights]:
    """Seeded N(0, 1/d_model) weights for every layer and head."""
    var = 1.0 / config.d_model
    out = []
    stream = 0
    for _ in range(config.layers):
        per = {"wq": [], "wk": [], "wv": []}
        for _ in range(config.heads):
            for name in ("wq", "wk", "wv"):
                stream += 1
                per[name].append(
                    numkit.gaussian_matrix(config.d_model, config.d, var, config.seed, stream)
                )
        stream += 1
        wo = numkit.gaussian_matrix(
            config.heads * config.d, config.d_model, 1.0 / (config.heads * config.d),
            config.seed, stream,
        )
        out.append(LayerWeights(wo=wo, **per))
    return out


def _check_qkv(q, k, v, wq, wk, wv):
    q, k, v = (numkit.as_mat(x, nm) for x, nm in ((q, "q"), (k, "k"), (v, "v")))
    wq, wk, wv = (numkit.as_mat(x, nm) for x, nm in ((wq, "wq"), (wk, "wk"), (wv, "wv")))
    if k.shape[0] != v.shape[0]:
        raise ShapeError(f"k and v must share sequence length: {k.shape} vs {v.shape}")
    for x, w, nm in ((q, wq, "q/wq"), (k, wk, "k/wk"), (v, wv, "v/wv")):
        if x.shape[1] != w.shape[0]:
            raise ShapeError(f"{nm} inner dims differ: {x.shape} x {w.shape}")
    if wq.shape[1] != wk.shape[1]:
        raise ShapeError(f"query/key head dims differ: {wq.shape} vs {wk.shape}")
    if q.shape[0] < 1:
        raise ShapeError("sequence length must be >= 1")
    return q, k, v, wq, wk, wv


def standard_head(q, k, v, wq, wk, wv, keep_cache: bool = False) -> HeadOutput:
    q, k, v, wq, wk, wv = _check_qkv(q, k, v, wq, wk, wv)
    d = wq.shape[1]
    with flop_region("proj"):
        qp, kp, vp = matmul(q, wq), matmul(k, wk), matmul(v, wv)
    with flop_region("core"):
        s = scale(matmul(qp, kp.T), 1.0 / math.sqrt(d))
        p = softmax_rows(s)
        ctx = matmul(p, vp)
    cache = None
    if keep_cache:
        cache = dict(kind="standard", q=q, k=k, v=v, wq=wq, wk=wk, wv=wv,
                     qp=qp, kp=kp, vp=vp, p=p)
    return HeadOutput(ctx, p, cache)


def linear_head(q, k, v, wq, wk, wv, e, f, keep_cache: bool = False) -> HeadOutput:
    """Attention through sequence projections ``e`` and ``f`` (each n -> k).

    ``e``/``f`` may be ``k x n`` arrays or projection operators. No ``n x n``
    intermediate is formed.
    """
    q, k, v, wq, wk, wv = _check_qkv(q, k, v, wq, wk, wv)
    e, f = as_projection(e), as_projection(f)
    n = k.shape[0]
    for nm, p in (("e", e), ("f", f)):
        if p.n != n:
            raise ShapeError(f"{nm} expects sequence length {p.n}, inputs have {n}")
        if p.k > n:
            raise ShapeError(f"{nm} has k={p.k} > n={n}")
    if e.k != f.k:
        raise ShapeError(f"e and f disagree on k: {e.k} vs {f.k}")
    d = wq.shape[1]
    with flop_region("proj"):
        qp, kp, vp = matmul(q, wq), matmul(k, wk), matmul(v, wv)
    with flop_region("core"):
        kt = e.apply(kp)
        vt = f.apply(vp)
        s = scale(matmul(qp, kt.T), 1.0 / math.sqrt(d))
        pbar = softmax_rows(s)
        ctx = matmul(pbar, vt)
    cache = None
    if keep_cache:
        cache = dict(kind="linear", q=q, k=k, v=v, wq=wq, wk=wk, wv=wv, e=e, f=f,
                     qp=qp, kp=kp, vp=vp, kt=kt, vt=vt, p=pbar)
    return HeadOutput(ctx, pbar, cache)


def _softmax_backward(p: np.ndarray, gp: np.ndarray) -> np.ndarray:
    # per row: (diag(p) - p p^T) g
    return p * (gp - np.sum(gp * p, axis=1, keepdims=True))


def attention_backward(out: HeadOutput, grad_context: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar whose derivative wrt the context is ``grad_context``.

    Keys: q, k, v, wq, wk, wv, plus e and f for linear heads whose projections
    are trainable (for a conv projection these are kernel gradients).
    """
    c = out.cache
    if c is None:
        raise StateError("forward pass was run without keep_cache=True")
    g = numkit.as_mat(grad_context)
    if g.shape != out.context.shape:
        raise ShapeError(f"upstream gradient {g.shape} != context {out.context.shape}")
    p = c["p"]
    inv = 1.0 / math.sqrt(c["wq"].shape[1])
    grads: dict[str, np.ndarray] = {}
    if c["kind"] == "standard":
        gvp = p.T @ g
        gs = _softmax_backward(p, g @ c["vp"].T) * inv
        gqp = gs @ c["kp"]
        gkp = gs.T @ c["qp"]
    else:
        gvt = p.T @ g
        gs = _softmax_backward(p, g @ c["vt"].T) * inv
        gqp = gs @ c["kt"]
        gkt = gs.T @ c["qp"]
        gkp, ge = c["e"].backward(c["kp"], gkt)
        gvp, gf = c["f"].backward(c["vp"], gvt)
        if ge is not None:
            grads["e"] = ge
        if gf is not None:
            grads["f"] = gf
    grads["q"] = gqp @ c["wq"].T
    grads["k"] = gkp @ c["wk"].T
    grads["v"] = gvp @ c["wv"].T
    grads["wq"] = c["q"].T @ gqp
    grads["wk"] = c["k"].T @ gkp
    grads["wv"] = c["v"].T @ gvp
    return grads


def multihead(
    x: np.ndarray,
    weights: LayerWeights,
    config: AttnConfig,
    projections: ProjectionSet | None = None,
    layer: int = 0,
    return_maps: bool = False,
):
    """Self-attention over ``x`` with every head concatenated, then ``@ wo``."""
    x = numkit.as_mat(x, "x")
    if x.shape != (config.n, config.d_model):
        raise ShapeError(f"x must be {config.n} x {config.d_model}, got {x.shape}")
    linear = config.mechanism == "linear"
    if linear and projections is None:
        raise ConfigError("linear attention requires a ProjectionSet")
    if len(weights.wq) != config.heads:
        raise ConfigError(f"weights hold {len(weights.wq)} heads, config says {config.heads}")
    if weights.wo.shape[0] != config.heads * config.d:
        raise ShapeError(
            f"wo must have {config.heads * config.d} rows, got {weights.wo.shape}"
        )
    contexts, maps = [], []
    for i in range(config.heads):
        if linear:
            out = linear_head(
                x, x, x, weights.wq[i], weights.wk[i], weights.wv[i],
                projections.lookup(layer, i, "E"), projections.lookup(layer, i, "F"),
            )
        else:
            out = standard_head(x, x, x, weights.wq[i], weights.wk[i], weights.wv[i])
        contexts.append(out.context)
        maps.append(out.map)
    with flop_region("out"):
        y = matmul(np.concatenate(contexts, axis=1), weights.wo)
    if return_maps:
        return y, maps
    return y


def encoder(
    x: np.ndarray,
    weights: Sequence[LayerWeights],
    config: AttnConfig,
    projections: ProjectionSet | None = None,
    return_maps: bool = False,
):
    """Stack ``config.layers`` attention layers (no feed-forward or norms)."""
    maps = {}
    for layer, w in enumerate(weights):
        res = multihead(x, w, config, projections, layer=layer, return_maps=return_maps)
        if return_maps:
            x, per = res
            for head, m in enumerate(per):
                maps[(layer, head)] = m
        else:
            x = res
    return (x, maps) if return_maps else x
