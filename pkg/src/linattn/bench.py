"""FLOP, transient-memory and wall-clock comparisons of the two mechanisms.

Memory figures come from an analytic count of the attention intermediates
(floats held per head), not from OS measurements.
"""

from __future__ import annotations

import contextlib
import statistics
import time
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import numkit
from .attention import AttnConfig, encoder, init_weights
from .errors import ConfigError
from .projections import make_projections

MIN_REPS = 5

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    threadpool_limits = None


@contextlib.contextmanager
def single_thread() -> Iterator[None]:
    if threadpool_limits is None:
        yield
    else:
        with threadpool_limits(limits=1):
            yield


# --------------------------------------------------------------------------
# FLOPs


def core_flops(mechanism: str, n: int, k: int | None, d: int) -> int:
    """Score, softmax and apply cost for one head (linear includes E/F)."""
    if mechanism == "standard":
        return 4 * n * n * d + 5 * n * n
    if mechanism == "linear":
        if k is None:
            raise ConfigError("linear flops need k")
        return 8 * n * k * d + 5 * n * k
    raise ConfigError(f"unknown mechanism {mechanism!r}")


def flops(
    mechanism: str,
    n: int,
    k: int | None,
    d: int,
    h: int = 1,
    d_model: int | None = None,
    portion: str = "full",
) -> dict[str, int] | int:
    """Closed-form FLOPs of one multi-head layer.

    ``portion`` is ``"core"`` (attention proper, all heads), ``"full"``
    (adds Q/K/V and output projections) or ``"regions"`` (a dict keyed like the
    instrumented counter: proj, core, out).
    """
    d_model = d_model or h * d
    regions = {
        "proj": h * 3 * 2 * n * d_model * d,
        "core": h * core_flops(mechanism, n, k, d),
        "out": 2 * n * (h * d) * d_model,
    }
    if portion == "regions":
        return regions
    if portion == "core":
        return regions["core"]
    if portion == "full":
        return sum(regions.values())
    raise ValueError(f"portion must be core, full or regions, got {portion!r}")


def instrumented_flops(
    mechanism: str, n: int, k: int | None, d: int, h: int = 1,
    d_model: int | None = None, seed: int = 0,
) -> dict[str, int]:
    cfg = AttnConfig(n=n, d_model=d_model or h * d, d=d, heads=h,
                     mechanism=mechanism, k=k, seed=seed)
    x, weights, projs = _setup(cfg)
    with numkit.FlopCounter() as fc:
        encoder(x, weights, cfg, projs)
    return dict(fc.counts)


# --------------------------------------------------------------------------
# memory model


def memory_terms(mechanism: str, n: int, k: int | None, d: int) -> dict[str, int]:
    """Per-head transient floats, one entry per named intermediate."""
    if mechanism == "standard":
        return {"map P (n x n)": n * n, "values V (n x d)": n * d, "context (n x d)": n * d}
    return {
        "map Pbar (n x k)": n * k,
        "projected values F V (k x d)": k * d,
        "context (n x d)": n * d,
    }


def transient_floats(mechanism: str, n: int, k: int | None, d: int) -> int:
    return sum(memory_terms(mechanism, n, k, d).values())


def memory_ratio(n: int, k: int, d: int) -> float:
    return transient_floats("standard", n, None, d) / transient_floats("linear", n, k, d)


# --------------------------------------------------------------------------
# timing


@dataclass
class Timing:
    median: float
    p10: float
    p90: float
    samples: list[float] = field(repr=False, default_factory=list)
    unreliable: bool = False


def clock_resolution() -> float:
    return time.get_clock_info("perf_counter").resolution


def time_call(fn, reps: int, warmup: int = 1) -> Timing:
    """Median-of-``reps`` wall time of ``fn()``; warmup runs are discarded."""
    if reps < MIN_REPS:
        raise ConfigError(f"reps must be >= {MIN_REPS}, got {reps}")
    for _ in range(warmup):
        fn()
    samples = []
    with single_thread():
        for _ in range(reps):
            t0 = time.perf_counter()
            fn()
            samples.append(time.perf_counter() - t0)
    q = np.quantile(samples, [0.1, 0.9])
    med = statistics.median(samples)
    return Timing(med, float(q[0]), float(q[1]), samples, med < 100 * clock_resolution())


def _setup(cfg: AttnConfig, batch: int = 1):
    xs = [numkit.gaussian_matrix(cfg.n, cfg.d_model, 1.0, cfg.seed, 2_000_000 + b)
          for b in range(batch)]
    weights = init_weights(cfg)
    projs = make_projections(cfg) if cfg.mechanism == "linear" else None
    return (xs[0] if batch == 1 else xs), weights, projs


@dataclass
class BenchRow:
    n: int
    k: int | None
    mechanism: str
    flops: int | None
    timing: Timing | None
    transient_floats: int | None
    speedup: float | None = None
    memory_ratio: float | None = None

    @property
    def unreliable(self) -> bool:
        return bool(self.timing and self.timing.unreliable)


@dataclass
class BenchTable:
    rows: list[BenchRow]
    d: int
    heads: int
    reps: int
    memory_note: str = (
        "memory_ratio is the analytic transient-float ratio per head, "
        "not a measured allocation or max-batch figure"
    )

    def cell(self, n: int, k: int | None, mechanism: str = "linear") -> BenchRow:
        for r in self.rows:
            if r.n == n and r.k == k and r.mechanism == mechanism:
                return r
        raise KeyError((n, k, mechanism))

    def speedup(self, n: int, k: int) -> float | None:
        return self.cell(n, k).speedup


def run_scaling(
    ns: Sequence[int],
    ks: Sequence[int],
    d: int = 64,
    h: int = 4,
    reps: int = 9,
    seed: int = 0,
) -> BenchTable:
    """Time a full multi-head forward pass for every (n, k) cell.

    Linear cells with ``k >= n`` are left empty (no projection saving is
    possible there); the CLI renders them as ``-``.
    """
    if reps < MIN_REPS:
        raise ConfigError(f"reps must be >= {MIN_REPS}, got {reps}")
    if not ns or not ks or min(ns) < 1 or min(ks) < 1:
        raise ConfigError("ns and ks must be non-empty lists of positive integers")
    rows = []
    for n in ns:
        cfg = AttnConfig(n=n, d_model=h * d, d=d, heads=h, seed=seed)
        x, w, _ = _setup(cfg)
        base = time_call(lambda: encoder(x, w, cfg), reps)
        rows.append(BenchRow(n, None, "standard", flops("standard", n, None, d, h), base,
                             transient_floats("standard", n, None, d)))
        for k in ks:
            if k >= n:
                rows.append(BenchRow(n, k, "linear", None, None, None))
                continue
            lcfg = AttnConfig(n=n, d_model=h * d, d=d, heads=h, mechanism="linear",
                              k=k, seed=seed)
            lx, lw, lp = _setup(lcfg)
            t = time_call(lambda: encoder(lx, lw, lcfg, lp), reps)
            rows.append(BenchRow(
                n, k, "linear", flops("linear", n, k, d, h), t,
                transient_floats("linear", n, k, d),
                speedup=base.median / t.median,
                memory_ratio=memory_ratio(n, k, d),
            ))
    return BenchTable(rows, d, h, reps)


@dataclass
class CurvePoint:
    mechanism: str
    n: int
    batch: int
    timing: Timing


def curve(
    n_list: Sequence[int],
    k: int,
    d: int = 64,
    h: int = 4,
    tokens_budget: int = 8192,
    reps: int = 5,
    seed: int = 0,
    mechanisms: Sequence[str] = ("standard", "linear"),
) -> list[CurvePoint]:
    """Time ``tokens_budget / n`` sequential forward passes for each ``n``."""
    bad = [n for n in n_list if tokens_budget % n]
    if bad:
        valid = [n for n in n_list if n not in bad]
        raise ConfigError(
            f"tokens budget {tokens_budget} is not divisible by {bad}; valid n: {valid}"
        )
    out = []
    for mech in mechanisms:
        for n in n_list:
            batch = tokens_budget // n
            cfg = AttnConfig(n=n, d_model=h * d, d=d, heads=h, mechanism=mech,
                             k=min(k, n) if mech == "linear" else None, seed=seed)
            xs, w, p = _setup(cfg, batch)
            xs = xs if batch > 1 else [xs]

            def run():
                for x in xs:
                    encoder(x, w, cfg, p)

            out.append(CurvePoint(mech, n, batch, time_call(run, reps)))
    return out
