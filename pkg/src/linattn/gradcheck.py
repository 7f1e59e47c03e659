"""Analytic-vs-finite-difference gradient verification for attention heads."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numkit
from .attention import attention_backward, linear_head, standard_head
from .projections import identity_projection, structured_projection, MatrixProjection

# entries whose gradient is below this magnitude are compared absolutely
REL_FLOOR = 1e-3


@dataclass
class GradReport:
    target: str
    tol: float
    errors: dict[str, float]
    absent: list[str] = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return all(err < self.tol for err in self.errors.values())


def loss(context: np.ndarray) -> float:
    """Sum of squared context entries."""
    return float(np.sum(context * context))


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def numeric_grad(fn, x: np.ndarray, rel_step: float = 1e-6) -> np.ndarray:
    """Central differences with step ``rel_step * (1 + |x_i|)``."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        h = rel_step * (1.0 + abs(orig))
        flat[i] = orig + h
        up = fn()
        flat[i] = orig - h
        down = fn()
        flat[i] = orig
        gf[i] = (up - down) / (2.0 * h)
    return g


def make_inputs(seed: int, n: int, d: int, d_model: int | None = None) -> dict[str, np.ndarray]:
    d_model = d_model or d
    names = ("q", "k", "v", "wq", "wk", "wv")
    shapes = [(n, d_model)] * 3 + [(d_model, d)] * 3
    return {
        nm: numkit.gaussian_matrix(r, c, 1.0 if nm in "qkv" else 1.0 / d_model, seed, s)
        for s, (nm, (r, c)) in enumerate(zip(names, shapes))
    }


def gradcheck(
    target: str = "standard",
    seed: int = 0,
    tol: float = 1e-5,
    n: int = 6,
    d: int = 3,
    k: int = 2,
    projection: str = "learned_gaussian",
    identity: bool = False,
    d_model: int | None = None,
) -> GradReport:
    """Compare analytic gradients against central differences.

    Failures are reported, never raised. ``identity=True`` uses ``E = F = I_n``
    (forces ``k = n``).
    """
    params = make_inputs(seed, n, d, d_model)
    e = f = None
    if target == "linear":
        if identity:
            e, f = identity_projection(n), identity_projection(n)
        elif projection == "learned_gaussian":
            e = MatrixProjection(numkit.gaussian_matrix(k, n, 1.0 / k, seed, 100))
            f = MatrixProjection(numkit.gaussian_matrix(k, n, 1.0 / k, seed, 101))
        else:
            kernel = None
            if projection == "conv":
                width = -(-n // k)
                kernel = numkit.gaussian_matrix(1, width, 1.0, seed, 102).ravel()
            e = structured_projection(projection, n, k, kernel)
            f = structured_projection(
                projection, n, k, None if kernel is None else kernel[::-1].copy()
            )
        for nm, p in (("e", e), ("f", f)):
            if p.trainable:
                params[nm] = p.param.copy()
    elif target != "standard":
        raise ValueError(f"unknown gradcheck target {target!r}")

    def forward(keep_cache: bool = False):
        base = [params[nm] for nm in ("q", "k", "v", "wq", "wk", "wv")]
        if target == "standard":
            return standard_head(*base, keep_cache=keep_cache)
        ee = e.with_param(params["e"]) if "e" in params else e
        ff = f.with_param(params["f"]) if "f" in params else f
        return linear_head(*base, ee, ff, keep_cache=keep_cache)

    out = forward(keep_cache=True)
    analytic = attention_backward(out, 2.0 * out.context)
    errors = {}
    for nm, val in params.items():
        num = numeric_grad(lambda: loss(forward().context), val)
        errors[nm] = relative_error(analytic[nm], num)
    absent = [nm for nm in ("e", "f") if target == "linear" and nm not in params]
    return GradReport(target=target, tol=tol, errors=errors, absent=absent)
