"""``linattn`` command-line tool.

Exit codes: 0 success, 2 usage/configuration error, 3 numerical failure
(gradient check over tolerance, SVD non-convergence).
"""

from __future__ import annotations

import argparse
import csv
import glob
import json
import logging
import os
import re
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__, bench, jlverify, lmat, lowrank, numkit
from .attention import AttnConfig, encoder, init_weights
from .errors import ConfigError, FormatError, NumericalError, ShapeError
from .gradcheck import gradcheck
from .projections import make_projections

log = logging.getLogger("linattn")

SCHEMA_VERSION = 1
SEED_ENV = "LINATTN_SEED"

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    pass


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _k_schedule(text: str) -> int | list[list[int]]:
    """``64`` for a uniform k, or ``64,32;64,32`` (layers ';', heads ',')."""
    try:
        if ";" not in text and "," not in text:
            return int(text)
        return [[int(t) for t in layer.split(",")] for layer in text.split(";")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad k schedule {text!r}")


def _fmt(x: Any) -> str:
    if x is None:
        return "-"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _manifest(command: str, argv: Sequence[str], args: argparse.Namespace,
              outputs: Sequence[str], config: dict | None = None) -> dict:
    params = {k: v for k, v in vars(args).items() if k != "func"}
    return {
        "schema_version": SCHEMA_VERSION,
        "tool": "linattn",
        "version": __version__,
        "command": command,
        "argv": list(argv),
        "args": params,
        "seed": params.get("seed"),
        "config": config,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "outputs": list(outputs),
    }


def _write_json(path: str | Path, obj: dict) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


def _write_csv(path: str | Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def _ensure_parent(path: str | Path) -> None:
    parent = Path(path).parent
    if not parent.exists():
        raise UsageError(f"output directory {parent} does not exist")


# --------------------------------------------------------------------------
# commands


def cmd_gen(args, argv) -> int:
    if args.rows < 1 or args.cols < 1:
        raise UsageError(f"invalid dims {args.rows}x{args.cols}")
    if args.dist == "gauss":
        mat = numkit.gaussian_matrix(args.rows, args.cols, args.variance, args.seed)
    elif args.dist == "zeros":
        mat = np.zeros((args.rows, args.cols))
    else:
        mat = np.eye(args.rows, args.cols)
    _ensure_parent(args.out)
    lmat.write(args.out, mat)
    print(f"wrote {args.rows}x{args.cols} {args.dist} matrix to {args.out}")
    return EXIT_OK


def cmd_attn(args, argv) -> int:
    if args.mode == "linear" and args.k is None:
        raise UsageError("--mode linear requires --k")
    if args.mode == "standard" and args.sharing != "none":
        log.warning("--sharing is ignored with --mode standard")
    cfg = AttnConfig(
        n=args.n, d_model=args.dmodel, d=args.d, heads=args.heads, layers=args.layers,
        mechanism=args.mode, k=args.k if args.mode == "linear" else None,
        sharing=args.sharing if args.mode == "linear" else "none",
        projection=args.proj, seed=args.seed,
    )
    if args.inp:
        x = lmat.read(args.inp)
        if x.shape != (cfg.n, cfg.d_model):
            raise UsageError(f"input is {x.shape}, expected {(cfg.n, cfg.d_model)}")
    else:
        x = numkit.gaussian_matrix(cfg.n, cfg.d_model, 1.0, cfg.seed, stream=2_000_000)
    weights = init_weights(cfg)
    projs = None
    if cfg.mechanism == "linear":
        projs = make_projections(cfg, identity=args.debug_identity_proj)
    y, maps = encoder(x, weights, cfg, projs, return_maps=True)
    _ensure_parent(args.out)
    lmat.write(args.out, y)
    outputs = [args.out]
    if args.emit_map:
        mdir = Path(args.emit_map)
        mdir.mkdir(parents=True, exist_ok=True)
        for (layer, head), m in sorted(maps.items()):
            p = mdir / f"map_L{layer}_H{head}.lmat"
            lmat.write(p, m)
            outputs.append(str(p))
    man = _manifest("attn", argv, args, outputs, cfg.to_dict())
    man["distinct_projections"] = projs.distinct if projs is not None else 0
    _write_json(f"{args.out}.json", man)
    print(f"wrote {y.shape[0]}x{y.shape[1]} output to {args.out}"
          + (f" ({projs.distinct} distinct projections)" if projs is not None else ""))
    return EXIT_OK


_MAP_NAME = re.compile(r"map_L(\d+)_H(\d+)")


def cmd_spectrum(args, argv) -> int:
    files = sorted({f for pat in args.inp for f in glob.glob(pat)})
    if not files:
        raise UsageError(f"no files matched {args.inp}")
    maps, labels = [], []
    for f in files:
        maps.append(lmat.read(f))
        m = _MAP_NAME.search(Path(f).name)
        labels.append((int(m.group(1)), int(m.group(2))) if m else None)
    rep = lowrank.spectrum(maps, probe=args.probe, norm=args.norm, labels=labels)
    rows = []
    for f, lab, s in zip(files, labels, rep.singular_values):
        c = lowrank.cumulative_curve(s, args.norm)
        layer, head = lab if lab else (None, None)
        rows.extend((Path(f).name, layer, head, r + 1, float(c[r])) for r in range(c.size))
    rows.extend(("mean", None, None, r + 1, float(rep.curve[r])) for r in range(rep.n))
    _ensure_parent(args.out)
    _write_csv(args.out, ["source", "layer", "head", "r", "c"], rows)
    summary = {
        "probe": rep.probe,
        "probe_value": rep.probe_value,
        "norm": rep.norm,
        "samples": rep.samples,
        "per_source_probe": {
            Path(f).name: float(lowrank.cumulative_curve(s, args.norm)[rep.probe - 1])
            for f, s in zip(files, rep.singular_values)
        },
    }
    man = _manifest("spectrum", argv, args, [args.out])
    _write_json(f"{args.out}.json", {"schema_version": SCHEMA_VERSION, "summary": summary,
                                    "manifest": man})
    print(f"c({rep.probe}) = {rep.probe_value:.6f} averaged over {rep.samples} map(s)")
    return EXIT_OK


def cmd_verify_jl(args, argv) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    cfg = jlverify.JlTrialConfig(
        n=args.n, d=args.d, k=args.k, eps=args.eps, delta=args.delta,
        trials=args.trials, seed=args.seed, identity_hook=args.debug_identity_proj,
    )
    inputs = jlverify.random_inputs(args.n, args.d, args.seed)
    fn = jlverify.theorem1_trial if args.theorem == 1 else jlverify.theorem2_trial
    rep = fn(cfg, **inputs, workers=args.parallel)
    bound_name = "k_bound_thm1" if args.theorem == 1 else "k_bound_thm2"
    cap = " (exceeds n; capped at n)" if rep.capped else ""
    print(f"{bound_name} = {rep.k_bound}{cap}; supplied k = {cfg.k}")
    print(f"success frequency {rep.success_frequency:.4f} at eps={cfg.eps}, "
          f"median ratio {rep.median:.6f}")
    _ensure_parent(args.out)
    outputs = [args.out, f"{args.out}.trials.csv"]
    body = {"schema_version": SCHEMA_VERSION, "report": rep.summary()}
    if args.ks:
        rows = jlverify.sweep(args.ks, cfg, theorem=args.theorem, inputs=inputs,
                              workers=args.parallel)
        _write_csv(f"{args.out}.sweep.csv",
                   ["k", "median_ratio", "success_frequency", "k_bound", "capped"],
                   [(r.k, r.median, r.success_frequency, r.k_bound, r.capped) for r in rows])
        outputs.append(f"{args.out}.sweep.csv")
    body["manifest"] = _manifest("verify-jl", argv, args, outputs)
    _write_json(args.out, body)
    item = "column" if args.theorem == 1 else "row"
    _write_csv(
        f"{args.out}.trials.csv", ["trial", "ratio", "success", item, "item_ratio"],
        [(t, float(rep.ratios[t]), bool(rep.successes[t]), j, float(rep.per_item[t, j]))
         for t in range(cfg.trials) for j in range(rep.per_item.shape[1])],
    )
    return EXIT_OK


BENCH_HEADER = [
    "n", "k", "mechanism", "flops", "median_s", "p10_s", "p90_s",
    "transient_floats", "speedup", "memory_ratio", "unreliable",
]


def cmd_bench(args, argv) -> int:
    table = bench.run_scaling(args.ns, args.ks, d=args.d, h=args.heads, reps=args.reps,
                              seed=args.seed)
    _ensure_parent(args.out)
    rows, long_rows = [], []
    for r in table.rows:
        t = r.timing
        rows.append((r.n, r.k, r.mechanism, r.flops, t and t.median, t and t.p10,
                     t and t.p90, r.transient_floats,
                     r.speedup if r.mechanism == "linear" else None,
                     r.memory_ratio, r.unreliable if t else None))
        for metric, val in (("flops", r.flops), ("median_s", t and t.median),
                            ("speedup", r.speedup), ("memory_ratio", r.memory_ratio)):
            if val is not None:
                long_rows.append((r.n, r.k, r.mechanism, metric, val))
    _write_csv(args.out, BENCH_HEADER, rows)
    _write_csv(f"{args.out}.long.csv", ["n", "k", "mechanism", "metric", "value"], long_rows)
    outputs = [args.out, f"{args.out}.long.csv"]
    if args.tokens_budget:
        pts = bench.curve(args.ns, max(args.ks) if args.curve_k is None else args.curve_k,
                          d=args.d, h=args.heads, tokens_budget=args.tokens_budget,
                          reps=args.reps, seed=args.seed)
        _write_csv(f"{args.out}.curve.csv",
                   ["mechanism", "n", "batch", "median_s", "p10_s", "p90_s", "unreliable"],
                   [(p.mechanism, p.n, p.batch, p.timing.median, p.timing.p10,
                     p.timing.p90, p.timing.unreliable) for p in pts])
        outputs.append(f"{args.out}.curve.csv")
    flagged = sum(r.unreliable for r in table.rows)
    if flagged:
        log.warning("%d cell(s) below 100x clock resolution; flagged unreliable", flagged)
    man = _manifest("bench", argv, args, outputs)
    man["memory_note"] = table.memory_note
    _write_json(f"{args.out}.json", man)
    for r in table.rows:
        if r.mechanism == "linear":
            print(f"n={r.n:5d} k={r.k:4d} speedup={_fmt_ratio(r.speedup)} "
                  f"memory={_fmt_ratio(r.memory_ratio)}")
    return EXIT_OK


def _fmt_ratio(x: float | None) -> str:
    return "-" if x is None else f"{x:.2f}x"


def cmd_gradcheck(args, argv) -> int:
    k = args.n if args.debug_identity_proj else args.k
    rep = gradcheck(args.target, seed=args.seed, tol=args.tol, n=args.n, d=args.d, k=k,
                    projection=args.proj, identity=args.debug_identity_proj)
    for group, err in rep.errors.items():
        status = "ok" if err < args.tol else "FAIL"
        print(f"{group:3s} max_rel_err={err:.3e} {status}")
    for group in rep.absent:
        print(f"{group:3s} absent (projection has no trainable parameters)")
    print("PASS" if rep.passed else "FAIL")
    return EXIT_OK if rep.passed else EXIT_NUMERIC


def cmd_replay(args, argv) -> int:
    man = json.loads(Path(args.manifest).read_text())
    man = man.get("manifest", man)
    if "argv" not in man:
        raise UsageError(f"{args.manifest} carries no argv to replay")
    return main(man["argv"])


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    seed = _default_seed()
    p = argparse.ArgumentParser(prog="linattn", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"linattn {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a seeded LMAT matrix")
    g.add_argument("--rows", type=int, required=True)
    g.add_argument("--cols", type=int, required=True)
    g.add_argument("--dist", choices=["gauss", "zeros", "identity"], default="gauss")
    g.add_argument("--variance", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=seed)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    a = sub.add_parser("attn", help="run a stacked multi-head attention forward pass")
    a.add_argument("--mode", choices=["standard", "linear"], default="standard")
    a.add_argument("--n", type=int, required=True)
    a.add_argument("--dmodel", type=int, required=True)
    a.add_argument("--d", type=int, required=True)
    a.add_argument("--heads", type=int, default=1)
    a.add_argument("--layers", type=int, default=1)
    a.add_argument("--k", type=_k_schedule, default=None,
                   help="projected length: '64', or per layer/head '64,32;64,32'")
    a.add_argument("--sharing", choices=["none", "headwise", "key_value", "layerwise"],
                   default="none")
    a.add_argument("--proj", choices=["learned_gaussian", "mean_pool", "max_pool", "conv"],
                   default="learned_gaussian")
    a.add_argument("--seed", type=int, default=seed)
    a.add_argument("--in", dest="inp", default=None)
    a.add_argument("--out", required=True)
    a.add_argument("--emit-map", default=None, metavar="DIR")
    a.add_argument("--debug-identity-proj", action="store_true",
                   help="use E = F = I_n (requires k == n); for reduction checks only")
    a.set_defaults(func=cmd_attn)

    s = sub.add_parser("spectrum", help="normalized cumulative singular values of maps")
    s.add_argument("--in", dest="inp", nargs="+", required=True, metavar="GLOB")
    s.add_argument("--probe", type=int, default=128)
    s.add_argument("--norm", choices=["sum", "energy"], default="sum")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_spectrum)

    j = sub.add_parser("verify-jl", help="Monte-Carlo check of the projection bounds")
    j.add_argument("--theorem", type=int, choices=[1, 2], required=True)
    j.add_argument("--n", type=int, default=128)
    j.add_argument("--d", type=int, default=16)
    j.add_argument("--k", type=int, required=True)
    j.add_argument("--eps", type=float, default=0.5)
    j.add_argument("--delta", type=float, default=None)
    j.add_argument("--trials", type=int, default=200)
    j.add_argument("--ks", type=_int_list, default=None, help="also sweep these k values")
    j.add_argument("--seed", type=int, default=seed)
    j.add_argument("--parallel", type=int, default=1, metavar="WORKERS")
    j.add_argument("--debug-identity-proj", action="store_true")
    j.add_argument("--out", required=True)
    j.set_defaults(func=cmd_verify_jl)

    b = sub.add_parser("bench", help="wall-clock and FLOP scaling table")
    b.add_argument("--ns", type=_int_list, default=[512, 1024, 2048, 4096])
    b.add_argument("--ks", type=_int_list, default=[64, 128, 256])
    b.add_argument("--d", type=int, default=64)
    b.add_argument("--heads", type=int, default=4)
    b.add_argument("--reps", type=int, default=9)
    b.add_argument("--tokens-budget", type=int, default=None)
    b.add_argument("--curve-k", type=int, default=None)
    b.add_argument("--seed", type=int, default=seed)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bench)

    c = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    c.add_argument("--target", choices=["standard", "linear"], default="standard")
    c.add_argument("--n", type=int, default=6)
    c.add_argument("--d", type=int, default=3)
    c.add_argument("--k", type=int, default=2)
    c.add_argument("--proj", choices=["learned_gaussian", "mean_pool", "max_pool", "conv"],
                   default="learned_gaussian")
    c.add_argument("--seed", type=int, default=seed)
    c.add_argument("--tol", type=float, default=1e-5)
    c.add_argument("--debug-identity-proj", action="store_true")
    c.set_defaults(func=cmd_gradcheck)

    r = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    r.add_argument("manifest")
    r.set_defaults(func=cmd_replay)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        parser = build_parser()
    except UsageError as exc:
        print(f"linattn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args, argv)
    except (UsageError, ConfigError, ShapeError, FormatError, OSError) as exc:
        print(f"linattn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"linattn: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
