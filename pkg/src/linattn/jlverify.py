"""Monte-Carlo checks of the random-projection approximation bounds.

Two constructions are exercised:

* low-rank map: ``P~ = P R^T R`` with ``R`` a ``k x n`` Gaussian (variance
  ``1/k``); the per-column error ``|P~ w - P w| / |P w|`` is measured for every
  column ``w`` of ``V = v @ wv``.
* projected attention: ``E = delta R`` and ``F = exp(-delta) R``; for every row
  ``a`` of the logits ``A`` the error
  ``|softmax(a E^T) F V - softmax(a) V| / (|softmax(a)| |V|_F)`` is measured.

Per-trial success means every column (resp. row) is within ``eps``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Sequence

import numpy as np

from . import numkit
from .errors import ConfigError, ShapeError


def _check_eps(eps: float) -> None:
    if not 0.0 < eps < 1.0:
        raise ConfigError(f"eps must lie in (0, 1), got {eps}")


def k_bound_thm1(n: int, eps: float) -> int:
    """``ceil(5 ln n / (eps^2 - eps^3))``."""
    if n < 2:
        raise ConfigError(f"n must be >= 2, got {n}")
    _check_eps(eps)
    return math.ceil(5.0 * math.log(n) / (eps**2 - eps**3))


def k_bound_thm2(n: int, d: int, eps: float) -> int:
    """``min(ceil(9 d ln d / eps^2), ceil(5 ln(n d) / (eps^2 - eps^3)))``."""
    if n < 2 or d < 2:
        raise ConfigError(f"need n >= 2 and d >= 2, got n={n}, d={d}")
    _check_eps(eps)
    first = math.ceil(9.0 * d * math.log(d) / eps**2)
    second = math.ceil(5.0 * math.log(n * d) / (eps**2 - eps**3))
    return min(first, second)


@dataclass
class JlTrialConfig:
    n: int
    d: int
    k: int
    eps: float = 0.5
    delta: float | None = None
    trials: int = 200
    seed: int = 0
    identity_hook: bool = False

    def __post_init__(self) -> None:
        _check_eps(self.eps)
        if not 1 <= self.k <= self.n:
            raise ConfigError(f"k must lie in [1, n={self.n}], got {self.k}")
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if self.d < 1:
            raise ConfigError(f"d must be >= 1, got {self.d}")
        if self.delta is None:
            self.delta = 1.0 / self.n
        if not self.delta > 0:
            raise ConfigError(f"delta must be positive, got {self.delta}")
        if self.identity_hook and self.k != self.n:
            raise ConfigError("identity hook requires k == n")


@dataclass
class JlReport:
    theorem: int
    config: JlTrialConfig
    ratios: np.ndarray
    successes: np.ndarray
    per_item: np.ndarray
    k_bound: int
    capped: bool
    degenerate: int = 0
    logit_range: tuple[float, float] = (0.0, 0.0)
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def success_frequency(self) -> float:
        return float(np.mean(self.successes))

    @property
    def median(self) -> float:
        return float(np.median(self.ratios))

    def quantiles(self) -> dict[str, float]:
        q = np.quantile(self.ratios, [0.1, 0.5, 0.9])
        return {"p10": float(q[0]), "p50": float(q[1]), "p90": float(q[2]),
                "max": float(self.ratios.max()), "mean": float(self.ratios.mean())}

    def summary(self) -> dict[str, Any]:
        return {
            "theorem": self.theorem,
            "config": asdict(self.config),
            "k": self.config.k,
            "k_bound": self.k_bound,
            "k_bound_capped": self.capped,
            "k_bound_effective": min(self.k_bound, self.config.n),
            "success_frequency": self.success_frequency,
            "quantiles": self.quantiles(),
            "degenerate_skipped": self.degenerate,
            "logit_range": list(self.logit_range),
            **self.extra,
        }


def random_inputs(n: int, d: int, seed: int, d_model: int | None = None) -> dict[str, np.ndarray]:
    """Standard-normal tokens and N(0, 1/d_model) weights (q = k = v)."""
    d_model = d_model or d
    x = numkit.gaussian_matrix(n, d_model, 1.0, seed, stream=0)
    w = {
        nm: numkit.gaussian_matrix(d_model, d, 1.0 / d_model, seed, stream=s)
        for s, nm in enumerate(("wq", "wk", "wv"), start=1)
    }
    return dict(q=x, k=x, v=x, **w)


def _logits(q, k, wq, wk) -> np.ndarray:
    qp = numkit.matmul(q, wq)
    kp = numkit.matmul(k, wk)
    return numkit.scale(numkit.matmul(qp, kp.T), 1.0 / math.sqrt(wq.shape[1]))


def _projection(cfg: JlTrialConfig, trial: int) -> np.ndarray:
    if cfg.identity_hook:
        return np.eye(cfg.n)
    return numkit.gaussian_matrix(cfg.k, cfg.n, 1.0 / cfg.k, cfg.seed, stream=trial)


def _run(fn, trials: int, workers: int) -> list:
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, range(trials)))
    return [fn(t) for t in range(trials)]


def _prepare(cfg, q, k, v, wq, wk, wv):
    q, k, v = (numkit.as_mat(x) for x in (q, k, v))
    if q.shape[0] != cfg.n or k.shape[0] != cfg.n or v.shape[0] != cfg.n:
        raise ShapeError(f"inputs must have n={cfg.n} rows")
    if not all(np.all(np.isfinite(x)) for x in (q, k, v, wq, wk, wv)):
        raise ShapeError("inputs must be finite")
    a = _logits(q, k, wq, wk)
    vv = numkit.matmul(v, wv)
    return a, vv


def theorem1_trial(cfg: JlTrialConfig, q, k, v, wq, wk, wv, workers: int = 1) -> JlReport:
    a, vv = _prepare(cfg, q, k, v, wq, wk, wv)
    p = numkit.softmax_rows(a)
    exact = p @ vv
    denom = np.linalg.norm(exact, axis=0)
    live = denom > 0
    pfro = numkit.fro_norm(p)
    wnorm = np.linalg.norm(vv, axis=0)

    def one(t: int):
        r = _projection(cfg, t)
        err = np.linalg.norm((p @ r.T) @ (r @ vv) - exact, axis=0)
        col = np.full(err.shape, np.nan)
        col[live] = err[live] / denom[live]
        # same error against the inner-product scale |P|_F |w|
        aux = err / np.where(wnorm > 0, pfro * wnorm, np.inf)
        return col, float(aux.max())

    res = _run(one, cfg.trials, workers)
    per = np.stack([c for c, _ in res])
    ratios = np.nanmax(per, axis=1) if live.any() else np.zeros(cfg.trials)
    bound = k_bound_thm1(cfg.n, cfg.eps) if cfg.n >= 2 else 1
    return JlReport(
        theorem=1,
        config=cfg,
        ratios=ratios,
        successes=ratios <= cfg.eps,
        per_item=per,
        k_bound=bound,
        capped=bound > cfg.n,
        degenerate=int((~live).sum()),
        logit_range=(float(a.min()), float(a.max())),
        extra={"frobenius_scaled_ratios_median": float(np.median([x for _, x in res]))},
    )


def theorem2_trial(cfg: JlTrialConfig, q, k, v, wq, wk, wv, workers: int = 1) -> JlReport:
    a, vv = _prepare(cfg, q, k, v, wq, wk, wv)
    p = numkit.softmax_rows(a)
    exact = p @ vv
    vfro = numkit.fro_norm(vv)
    vspec = float(np.linalg.norm(vv, 2))
    pnorm = np.linalg.norm(p, axis=1)

    def one(t: int):
        r = _projection(cfg, t)
        e = cfg.delta * r
        f = math.exp(-cfg.delta) * r
        approx = numkit.softmax_rows(a @ e.T) @ (f @ vv)
        err = np.linalg.norm(approx - exact, axis=1)
        return err / (pnorm * vfro), float(np.max(err / (pnorm * vspec)))

    res = _run(one, cfg.trials, workers)
    per = np.stack([r for r, _ in res])
    ratios = per.max(axis=1)
    d = vv.shape[1]
    bound = k_bound_thm2(cfg.n, max(d, 2), cfg.eps)
    return JlReport(
        theorem=2,
        config=cfg,
        ratios=ratios,
        successes=ratios <= cfg.eps,
        per_item=per,
        k_bound=bound,
        capped=bound > cfg.n,
        logit_range=(float(a.min()), float(a.max())),
        extra={
            "value_norm": "frobenius",
            "value_norm_frobenius": vfro,
            "value_norm_spectral": vspec,
            "spectral_scaled_ratios_median": float(np.median([x for _, x in res])),
        },
    )


@dataclass
class SweepRow:
    k: int
    median: float
    success_frequency: float
    k_bound: int
    capped: bool


def sweep(
    ks: Sequence[int],
    template: JlTrialConfig,
    theorem: int = 1,
    inputs: dict[str, np.ndarray] | None = None,
    input_seed: int | None = None,
    workers: int = 1,
) -> list[SweepRow]:
    """Run one trial batch per ``k``; the same inputs are used for every row."""
    if not ks:
        raise ConfigError("sweep needs at least one k")
    if inputs is None:
        seed = template.seed if input_seed is None else input_seed
        inputs = random_inputs(template.n, template.d, seed)
    fn = theorem1_trial if theorem == 1 else theorem2_trial
    rows = []
    for k in ks:
        cfg = replace(template, k=int(k))
        rep = fn(cfg, **inputs, workers=workers)
        rows.append(SweepRow(int(k), rep.median, rep.success_frequency, rep.k_bound, rep.capped))
    return rows


def inversions(values: Sequence[float], strict: bool = False) -> int:
    """Count adjacent pairs that break a decreasing order."""
    bad = 0
    for a, b in zip(values, values[1:]):
        if (b >= a) if strict else (b > a):
            bad += 1
    return bad
