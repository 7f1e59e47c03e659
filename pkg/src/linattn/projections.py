"""Length-reducing projection operators (n -> k) and their sharing layouts.

All operators map an ``n x d`` array to ``k x d`` along the sequence axis.
Learned projections are stored as ``k x n`` matrices so that ``E @ K`` is the
projected key block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from . import numkit
from .errors import ConfigError, ShapeError

if TYPE_CHECKING:
    from .attention import AttnConfig

SHARING_MODES = ("none", "headwise", "key_value", "layerwise")
PROJECTION_KINDS = ("learned_gaussian", "mean_pool", "max_pool", "conv")


def block_bounds(n: int, k: int) -> list[tuple[int, int]]:
    """Block b covers ``[floor(b*n/k), floor((b+1)*n/k))``."""
    _check_nk(n, k)
    return [((b * n) // k, ((b + 1) * n) // k) for b in range(k)]


def _check_nk(n: int, k: int) -> None:
    if k < 1 or n < 1:
        raise ShapeError(f"projection needs n >= 1 and k >= 1, got n={n}, k={k}")
    if k > n:
        raise ShapeError(f"projected dimension k={k} exceeds sequence length n={n}")


class MatrixProjection:
    """A k x n matrix applied on the left."""

    def __init__(self, mat: np.ndarray, trainable: bool = True, kind: str = "matrix"):
        mat = numkit.as_mat(mat, "projection")
        _check_nk(mat.shape[1], mat.shape[0])
        self.mat = mat
        self.trainable = trainable
        self.kind = kind

    @property
    def k(self) -> int:
        return self.mat.shape[0]

    @property
    def n(self) -> int:
        return self.mat.shape[1]

    @property
    def param(self) -> np.ndarray | None:
        return self.mat if self.trainable else None

    def with_param(self, value: np.ndarray) -> "MatrixProjection":
        return MatrixProjection(value, self.trainable, self.kind)

    def apply(self, x: np.ndarray) -> np.ndarray:
        if x.shape[0] != self.n:
            raise ShapeError(f"projection expects {self.n} rows, got {x.shape}")
        return numkit.matmul(self.mat, x)

    def backward(self, x: np.ndarray, grad: np.ndarray):
        """Return (grad wrt x, grad wrt the matrix or None)."""
        gx = self.mat.T @ grad
        return gx, (grad @ x.T if self.trainable else None)


class MaxPoolProjection:
    """Blockwise maximum along the sequence axis (nonlinear, no parameters).

    Ties route the gradient to the lowest-index maximizer.
    """

    kind = "max_pool"
    trainable = False
    param = None

    def __init__(self, n: int, k: int):
        self.bounds = block_bounds(n, k)
        self.n, self.k = n, k

    def argmax(self, x: np.ndarray) -> np.ndarray:
        return np.stack([lo + np.argmax(x[lo:hi], axis=0) for lo, hi in self.bounds])

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = numkit.as_mat(x)
        if x.shape[0] != self.n:
            raise ShapeError(f"projection expects {self.n} rows, got {x.shape}")
        idx = self.argmax(x)
        return np.take_along_axis(x, idx, axis=0)

    def backward(self, x: np.ndarray, grad: np.ndarray):
        idx = self.argmax(x)
        gx = np.zeros_like(x)
        cols = np.arange(x.shape[1])
        for b in range(self.k):
            np.add.at(gx, (idx[b], cols), grad[b])
        return gx, None


class ConvProjection:
    """Strided 1-D convolution along the sequence with one shared kernel.

    Kernel length is ``ceil(n/k)``; a block shorter than the kernel uses its
    leading taps.
    """

    kind = "conv"
    trainable = True

    def __init__(self, n: int, k: int, kernel: np.ndarray):
        self.bounds = block_bounds(n, k)
        self.n, self.k = n, k
        kernel = np.asarray(kernel, dtype=np.float64).ravel()
        width = math.ceil(n / k)
        if kernel.size != width:
            raise ShapeError(f"conv kernel must have length {width}, got {kernel.size}")
        self.kernel = kernel

    @property
    def param(self) -> np.ndarray:
        return self.kernel

    def with_param(self, value: np.ndarray) -> "ConvProjection":
        return ConvProjection(self.n, self.k, value)

    def as_matrix(self) -> np.ndarray:
        m = np.zeros((self.k, self.n))
        for b, (lo, hi) in enumerate(self.bounds):
            m[b, lo:hi] = self.kernel[: hi - lo]
        return m

    def apply(self, x: np.ndarray) -> np.ndarray:
        if x.shape[0] != self.n:
            raise ShapeError(f"projection expects {self.n} rows, got {x.shape}")
        return numkit.matmul(self.as_matrix(), x)

    def backward(self, x: np.ndarray, grad: np.ndarray):
        gx = self.as_matrix().T @ grad
        gk = np.zeros_like(self.kernel)
        for b, (lo, hi) in enumerate(self.bounds):
            gk[: hi - lo] += x[lo:hi] @ grad[b]
        return gx, gk


Projection = MatrixProjection | MaxPoolProjection | ConvProjection


def mean_pool_matrix(n: int, k: int) -> np.ndarray:
    m = np.zeros((k, n))
    for b, (lo, hi) in enumerate(block_bounds(n, k)):
        m[b, lo:hi] = 1.0 / (hi - lo)
    return m


def structured_projection(
    kind: str, n: int, k: int, conv_weights: np.ndarray | None = None, seed: int = 0
) -> Projection:
    if kind == "mean_pool":
        return MatrixProjection(mean_pool_matrix(n, k), trainable=False, kind="mean_pool")
    if kind == "max_pool":
        return MaxPoolProjection(n, k)
    if kind == "conv":
        width = math.ceil(n / k)
        if conv_weights is None:
            # averaging init, so an untrained conv starts as mean pooling
            conv_weights = np.full(width, 1.0 / width)
        return ConvProjection(n, k, conv_weights)
    raise ConfigError(f"unknown structured projection kind {kind!r}")


def identity_projection(n: int) -> MatrixProjection:
    return MatrixProjection(np.eye(n), trainable=True, kind="identity")


def as_projection(p) -> Projection:
    if isinstance(p, (MatrixProjection, MaxPoolProjection, ConvProjection)):
        return p
    return MatrixProjection(p)


# --------------------------------------------------------------------------
# sharing


def sharing_key(sharing: str, layer: int, head: int, role: str) -> tuple:
    if sharing == "none":
        return (layer, head, role)
    if sharing == "headwise":
        return (layer, role)
    if sharing == "key_value":
        return (layer,)
    if sharing == "layerwise":
        return ()
    raise ConfigError(f"unknown sharing mode {sharing!r}; expected one of {SHARING_MODES}")


def expected_distinct(sharing: str, layers: int, heads: int) -> int:
    return {
        "none": 2 * layers * heads,
        "headwise": 2 * layers,
        "key_value": layers,
        "layerwise": 1,
    }[sharing]


@dataclass
class ProjectionSet:
    """Maps (layer, head, role) to a projection; storage is deduplicated."""

    sharing: str
    lookup_table: dict[tuple[int, int, str], Projection] = field(default_factory=dict)

    def lookup(self, layer: int, head: int, role: str) -> Projection:
        if role not in ("E", "F"):
            raise KeyError(f"role must be 'E' or 'F', got {role!r}")
        return self.lookup_table[(layer, head, role)]

    @property
    def distinct(self) -> int:
        return len({id(p) for p in self.lookup_table.values()})

    def matrices(self) -> list[Projection]:
        seen: dict[int, Projection] = {}
        for p in self.lookup_table.values():
            seen.setdefault(id(p), p)
        return list(seen.values())


def make_projections(config: "AttnConfig", identity: bool = False) -> ProjectionSet:
    """Realize every E/F of ``config`` under its sharing mode.

    ``identity=True`` is the reduction debug hook: each stored projection is
    ``I_n`` (requires ``k == n`` everywhere).
    """
    ps = ProjectionSet(config.sharing)
    store: dict[tuple, Projection] = {}
    kdims: dict[tuple, int] = {}
    for layer in range(config.layers):
        for head in range(config.heads):
            k = config.k_at(layer, head)
            for role in ("E", "F"):
                key = sharing_key(config.sharing, layer, head, role)
                if key in store:
                    if kdims[key] != k:
                        raise ConfigError(
                            f"sharing mode {config.sharing!r} ties heads with different "
                            f"k ({kdims[key]} vs {k}) at layer {layer}, head {head}"
                        )
                else:
                    store[key] = _new_projection(config, k, len(store), identity)
                    kdims[key] = k
                ps.lookup_table[(layer, head, role)] = store[key]
    return ps


def _new_projection(config: "AttnConfig", k: int, index: int, identity: bool) -> Projection:
    n = config.n
    if identity:
        if k != n:
            raise ConfigError(f"identity projections need k == n, got k={k}, n={n}")
        return identity_projection(n)
    if config.projection == "learned_gaussian":
        # substreams 1_000_000+ are reserved for projections
        mat = numkit.gaussian_matrix(k, n, 1.0 / k, config.seed, stream=1_000_000 + index)
        return MatrixProjection(mat, kind="learned_gaussian")
    return structured_projection(config.projection, n, k)
