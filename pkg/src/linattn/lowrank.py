"""Singular-value spectra of attention maps and truncated-SVD approximation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numkit
from .errors import ShapeError
from .numkit import flop_region, matmul

log = logging.getLogger(__name__)

NORMS = ("sum", "energy")


@dataclass
class SpectrumReport:
    singular_values: list[np.ndarray]
    curve: np.ndarray
    probe: int
    probe_value: float
    norm: str = "sum"
    samples: int = 1
    labels: list[tuple[int, int] | None] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.curve.size


def cumulative_curve(s: np.ndarray, norm: str = "sum") -> np.ndarray:
    """``c(r) = sum_{i<=r} s_i / sum_i s_i`` (``energy`` squares the s_i first)."""
    if norm not in NORMS:
        raise ValueError(f"norm must be one of {NORMS}, got {norm!r}")
    w = np.asarray(s, dtype=np.float64)
    if norm == "energy":
        w = w * w
    total = w.sum()
    if total == 0:
        return np.ones_like(w)
    c = np.cumsum(w) / total
    c[-1] = 1.0
    return np.minimum(c, 1.0)


def spectrum(
    maps: np.ndarray | Sequence[np.ndarray],
    probe: int = 128,
    norm: str = "sum",
    labels: Sequence[tuple[int, int] | None] | None = None,
) -> SpectrumReport:
    """Spectrum of one attention map or the curve averaged over a batch.

    Normalized curves (not raw spectra) are averaged. ``probe`` is clamped to
    the map size.
    """
    if isinstance(maps, np.ndarray) and maps.ndim == 2:
        maps = [maps]
    maps = [numkit.as_mat(m, "map") for m in maps]
    if not maps:
        raise ValueError("spectrum needs at least one map")
    n = maps[0].shape[1]
    svals, curves = [], []
    for m in maps:
        if m.shape[1] != n:
            raise ShapeError(f"all maps in a batch must have {n} columns, got {m.shape}")
        dev = float(np.max(np.abs(m.sum(axis=1) - 1.0)))
        if dev > 1e-9 or (m < 0).any():
            log.warning("map is not row-stochastic (max row-sum deviation %.3e)", dev)
        s = numkit.svd(m).s
        svals.append(s)
        curves.append(cumulative_curve(s, norm))
    curve = np.mean(np.stack(curves), axis=0) if len(curves) > 1 else curves[0]
    r = min(max(probe, 1), curve.size)
    return SpectrumReport(
        singular_values=svals,
        curve=curve,
        probe=r,
        probe_value=float(curve[r - 1]),
        norm=norm,
        samples=len(maps),
        labels=list(labels) if labels is not None else [None] * len(maps),
    )


@dataclass
class LowRankApprox:
    rank: int
    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray
    residual: float
    singular_values: np.ndarray

    def dense(self) -> np.ndarray:
        return (self.u * self.s) @ self.vt


def svd_approx(p: np.ndarray, r: int) -> LowRankApprox:
    p = numkit.as_mat(p, "p")
    full = numkit.svd(p)
    if not 1 <= r <= full.s.size:
        raise ValueError(f"rank must be in [1, {full.s.size}], got {r}")
    tail = full.s[r:]
    return LowRankApprox(
        rank=r,
        u=full.u[:, :r].copy(),
        s=full.s[:r].copy(),
        vt=full.vt[:r].copy(),
        residual=float(np.sqrt(np.sum(tail * tail))),
        singular_values=full.s,
    )


def apply_lowrank(approx: LowRankApprox, v: np.ndarray) -> np.ndarray:
    """``u @ (diag(s) @ (vt @ v))`` evaluated right to left."""
    v = numkit.as_mat(v, "v")
    if v.shape[0] != approx.vt.shape[1]:
        raise ShapeError(f"value matrix needs {approx.vt.shape[1]} rows, got {v.shape}")
    with flop_region("lowrank"):
        t = matmul(approx.vt, v)
        t = numkit.scale(t, approx.s[:, None])
        return matmul(approx.u, t)
