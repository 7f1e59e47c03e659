"""Dense linear-algebra core.

Matrices are plain 2-D ``float64`` numpy arrays. Every arithmetic helper here
credits the active :class:`FlopCounter` (if any) using a fixed, shape-only cost
model so counts are comparable across runs and machines:

* ``matmul`` of (m x p)(p x q): ``2*m*p*q``
* row softmax of an m x p array: ``4*m*p``
* elementwise scale of an m x p array: ``m*p``

Random matrices come from numpy's Philox4x64 counter-based generator keyed by
``(seed, stream)``, so independent substreams never depend on draw order.
"""

from __future__ import annotations

import contextlib
import contextvars
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import NumericalError, ShapeError

_MASK64 = (1 << 64) - 1

JACOBI_MAX_SWEEPS = 60


# --------------------------------------------------------------------------
# FLOP accounting


class FlopCounter:
    """Accumulates operation counts per labeled region.

    Use as a context manager to make it the active counter; nested
    ``region()`` blocks change the label that subsequent operations are
    credited to.
    """

    def __init__(self) -> None:
        self.counts: dict[str, int] = defaultdict(int)
        self._labels: list[str] = ["main"]
        self._token = None

    def add(self, n: int) -> None:
        self.counts[self._labels[-1]] += int(n)

    @contextlib.contextmanager
    def region(self, label: str) -> Iterator[None]:
        self._labels.append(label)
        try:
            yield
        finally:
            self._labels.pop()

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def __getitem__(self, label: str) -> int:
        return self.counts.get(label, 0)

    def __enter__(self) -> "FlopCounter":
        self._token = _active.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _active.reset(self._token)
        self._token = None


_active: contextvars.ContextVar[FlopCounter | None] = contextvars.ContextVar(
    "linattn_flop_counter", default=None
)


def _credit(n: int) -> None:
    fc = _active.get()
    if fc is not None:
        fc.add(n)


@contextlib.contextmanager
def flop_region(label: str) -> Iterator[None]:
    """Label FLOPs credited inside the block (no-op when nothing is counting)."""
    fc = _active.get()
    if fc is None:
        yield
    else:
        with fc.region(label):
            yield


# --------------------------------------------------------------------------
# basic arithmetic


def as_mat(a, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = as_mat(a)
    b = as_mat(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    _credit(2 * a.shape[0] * a.shape[1] * b.shape[1])
    return a @ b


def scale(a: np.ndarray, c: float) -> np.ndarray:
    a = as_mat(a)
    _credit(a.size)
    return a * c


def softmax_rows(a: np.ndarray) -> np.ndarray:
    """Numerically stable softmax along each row.

    The row maximum is subtracted first, so finite input never overflows and
    adding a constant to a row leaves the result unchanged.
    """
    a = as_mat(a)
    _credit(4 * a.size)
    z = a - a.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def fro_norm(a: np.ndarray) -> float:
    a = as_mat(a)
    return float(math.sqrt(np.einsum("ij,ij->", a, a)))


def vec2_norm(v: np.ndarray) -> float:
    v = as_mat(v)
    if min(v.shape) != 1:
        raise ShapeError(f"vec2_norm expects a single row or column, got {v.shape}")
    return fro_norm(v)


# --------------------------------------------------------------------------
# random matrices


def rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox generator for substream ``stream`` of ``seed``."""
    key = np.array([int(seed) & _MASK64, int(stream) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def gaussian_matrix(
    rows: int, cols: int, variance: float, seed: int, stream: int = 0
) -> np.ndarray:
    if rows < 1 or cols < 1:
        raise ShapeError(f"gaussian_matrix needs positive dims, got {rows}x{cols}")
    if not variance > 0:
        raise ValueError(f"variance must be positive, got {variance}")
    g = rng(seed, stream).standard_normal((rows, cols))
    return g * math.sqrt(variance)


# --------------------------------------------------------------------------
# SVD


@dataclass(frozen=True)
class Svd:
    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.s) @ self.vt


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Disjoint column pairings covering every (p, q) once per sweep."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for i in range(m // 2):
            p, q = players[i], players[m - 1 - i]
            if p < n and q < n:
                ps.append(min(p, q))
                qs.append(max(p, q))
        if ps:
            rounds.append((np.array(ps), np.array(qs)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _complete_basis(u: np.ndarray, good: np.ndarray) -> np.ndarray:
    """Replace columns of ``u`` not flagged ``good`` by an orthonormal completion."""
    m, r = u.shape
    basis = [u[:, j] for j in range(r) if good[j]]
    fill = []
    for i in range(m):
        if len(basis) + len(fill) == r:
            break
        v = np.zeros(m)
        v[i] = 1.0
        for _ in range(2):
            for b in basis + fill:
                v -= (b @ v) * b
        nv = np.linalg.norm(v)
        if nv > 0.5:
            fill.append(v / nv)
    out = u.copy()
    it = iter(fill)
    for j in range(r):
        if not good[j]:
            out[:, j] = next(it)
    return out


def svd(a: np.ndarray) -> Svd:
    """Thin SVD by one-sided (Hestenes) Jacobi with round-robin pair ordering.

    A column pair is rotated while ``|a_p . a_q| > tol * |a_p| |a_q|`` with
    ``tol = rows * eps``; convergence is a sweep with no such pair. Raises
    :class:`NumericalError` after ``JACOBI_MAX_SWEEPS`` sweeps.
    """
    a = as_mat(a)
    if not np.all(np.isfinite(a)):
        raise NumericalError("svd input contains non-finite entries")
    m, n = a.shape
    if min(m, n) < 1:
        raise ShapeError(f"svd needs a non-empty matrix, got {a.shape}")
    if m < n:
        t = svd(a.T)
        return Svd(u=t.vt.T.copy(), s=t.s, vt=t.u.T.copy())

    # rows of ``wt`` are the working columns; row gathers stay contiguous
    wt = a.T.copy()
    vt = np.eye(n)
    tol = m * np.finfo(np.float64).eps
    floor = np.finfo(np.float64).eps * fro_norm(a)
    rounds = _round_robin(n)
    converged = n == 1
    worst = 0.0
    for _ in range(JACOBI_MAX_SWEEPS):
        if converged:
            break
        worst = 0.0
        for p, q in rounds:
            wp, wq = wt[p], wt[q]
            alpha = np.einsum("ij,ij->i", wp, wp)
            beta = np.einsum("ij,ij->i", wq, wq)
            gamma = np.einsum("ij,ij->i", wp, wq)
            denom = np.sqrt(alpha * beta)
            live = (np.minimum(alpha, beta) > floor * floor) & (denom > 0)
            rel = np.zeros_like(gamma)
            rel[live] = np.abs(gamma[live]) / denom[live]
            worst = max(worst, float(rel.max()))
            hit = rel > tol
            if not hit.any():
                continue
            p, q = p[hit], q[hit]
            alpha, beta, gamma = alpha[hit], beta[hit], gamma[hit]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.hypot(1.0, zeta))
            c = (1.0 / np.sqrt(1.0 + t * t))[:, None]
            s = c * t[:, None]
            wp, wq = wt[p], wt[q]
            wt[p] = c * wp - s * wq
            wt[q] = s * wp + c * wq
            vp, vq = vt[p], vt[q]
            vt[p] = c * vp - s * vq
            vt[q] = s * vp + c * vq
        converged = worst <= tol
    if not converged:
        g = wt @ wt.T
        off = math.sqrt(max(float(np.sum(g * g) - np.sum(np.diag(g) ** 2)), 0.0))
        raise NumericalError(
            f"Jacobi SVD did not converge in {JACOBI_MAX_SWEEPS} sweeps; "
            f"off-diagonal residual {off:.3e} (max relative {worst:.3e})"
        )

    sigma = np.sqrt(np.einsum("ij,ij->i", wt, wt))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    wt = wt[order]
    vt = vt[order]
    # columns at rounding-noise level carry no direction; complete them instead
    good = (sigma > floor) & (sigma > 0)
    u = np.zeros((m, n))
    u[:, good] = wt[good].T / sigma[good]
    if not good.all():
        u = _complete_basis(u, good)
    return Svd(u=u, s=sigma, vt=vt)
