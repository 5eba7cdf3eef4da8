"""Command-line front end: theory | tune | simulate | bound | validate.

Settings come from flags, optionally seeded by a flat ``key = value``
config file (``--config``); flags always win. Exit codes: 0 success,
1 failed check or invariant violation, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import reporting
from .analysis import curve_rows, g_value
from .sketch_core import InvariantViolation, SketchConfig
from .sim_harness import run_once, sweep_lambda
from .stream_model import (
    ArrivalDistribution,
    StreamSpec,
    assign_buckets,
    derive_seed,
    make_uniform,
    make_zipf,
)
from .tuning import candidate_set, grid_search, hp_bound, lambda_star
from .validation import SUITES, run_suites

EXIT_OK, EXIT_CHECK, EXIT_USAGE = 0, 1, 2


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# parsing helpers
# ---------------------------------------------------------------------------


def parse_int_list(text: str) -> list[int]:
    """``"1,2,5"`` or ``"1:10"`` (inclusive) or ``"1:10:3"``, combinable with commas."""
    out: list[int] = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            bits = [int(x) for x in part.split(":")]
            if len(bits) not in (2, 3):
                raise argparse.ArgumentTypeError(f"bad range {part!r}")
            step = bits[2] if len(bits) == 3 else 1
            out.extend(range(bits[0], bits[1] + 1, step))
        else:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def read_config_file(path: str | Path) -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _apply_config(parser: argparse.ArgumentParser, values: dict[str, str]) -> None:
    actions = {a.dest: a for a in parser._actions}
    defaults = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            try:
                defaults[key] = action.type(raw)
            except (TypeError, ValueError, argparse.ArgumentTypeError) as exc:
                raise ConfigError(f"config key {key!r}: {exc}") from None
        else:
            defaults[key] = raw
        if action.choices is not None and defaults[key] not in action.choices:
            raise ConfigError(f"config key {key!r}: {raw!r} not in {list(action.choices)}")
    parser.set_defaults(**defaults)


def _add_dist(p):
    p.add_argument("--dist", choices=["zipf", "uniform", "file"], default="zipf")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--n-items", type=int)
    p.add_argument("--dist-file", help="one probability per line (with --dist file)")


def _add_common(p):
    p.add_argument("--config", help="flat key = value file; flags override it")
    p.add_argument("--out", help="output path stem (writes <out>.json / <out>.csv)")
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="elastitune", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("theory", help="g_beta curve, candidate set and optimal threshold")
    _add_common(p)
    _add_dist(p)
    p.add_argument("--m1", type=int)
    p.add_argument("--m2", type=int, default=1)
    p.add_argument("--beta-seed", type=int, default=0)
    p.add_argument("--lambda-grid", type=parse_int_list)
    p.add_argument("--candidates", action="store_true")

    p = sub.add_parser("tune", help="budgeted search over (m1, m2, lambda)")
    _add_common(p)
    _add_dist(p)
    p.add_argument("--budget", type=int)
    p.add_argument("--cost-per-bucket", type=int, default=3)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--m1-grid", type=parse_int_list)
    p.add_argument("--n-samp", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lambda", dest="lam", type=int, help="fix the threshold instead of tuning")

    p = sub.add_parser("simulate", help="run sketches on sampled streams")
    _add_common(p)
    _add_dist(p)
    p.add_argument("--m1", type=int)
    p.add_argument("--m2", type=int)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--lambda", dest="lam", type=int)
    p.add_argument("--lambda-grid", type=parse_int_list)
    p.add_argument("--candidates", action="store_true")
    p.add_argument("--tau", type=int)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--beta-seed", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instrumented", action="store_true")
    p.add_argument("--resample-beta", action="store_true")

    p = sub.add_parser("bound", help="high-probability bound on the optimal threshold")
    _add_common(p)
    p.add_argument("--n-items", type=int)
    p.add_argument("--m1", type=int)
    p.add_argument("--delta", type=float, default=0.05)

    p = sub.add_parser("validate", help="oracle, invariant and theory-vs-sim self-checks")
    _add_common(p)
    p.add_argument("--only", type=lambda s: [x.strip() for x in s.split(",") if x.strip()],
                   help=f"comma list of: {', '.join(SUITES)}")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-corruption", action="store_true")
    return parser


REQUIRED = {
    "theory": ["n_items", "m1"],
    "tune": ["n_items", "budget", "m1_grid"],
    "simulate": ["n_items", "m1", "m2", "tau"],
    "bound": ["n_items", "m1"],
    "validate": [],
}


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config and known.command:
        subparser = parser._subparsers._group_actions[0].choices.get(known.command)
        if subparser is not None:
            try:
                _apply_config(subparser, read_config_file(known.config))
            except (OSError, ConfigError) as exc:
                parser.error(str(exc))
    args = parser.parse_args(argv)
    missing = [k for k in REQUIRED[args.command] if getattr(args, k, None) is None]
    if args.command == "simulate" and args.lam is None and args.lambda_grid is None \
            and not args.candidates:
        missing.append("lambda (or lambda_grid / candidates)")
    if missing:
        parser.error(f"{args.command}: missing required settings: "
                     + ", ".join("--" + m.replace("_", "-") for m in missing))
    return args


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _dist(args) -> ArrivalDistribution:
    if args.dist == "file":
        if not args.dist_file:
            raise ConfigError("--dist file needs --dist-file")
        dist = ArrivalDistribution.from_file(args.dist_file)
        if args.n_items is not None and dist.n_items != args.n_items:
            raise ConfigError(f"--n-items {args.n_items} but file has {dist.n_items} items")
        return dist
    if args.dist == "uniform":
        return make_uniform(args.n_items)
    return make_zipf(args.n_items, args.alpha)


def _echo(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("config",)}


def _emit(args, payload: dict, rows: list[dict] | None = None) -> None:
    meta = payload["manifest"]
    if args.out:
        stem = Path(args.out)
        if stem.suffix in (".json", ".csv"):
            stem = stem.with_suffix("")
        reporting.write_json(stem.with_suffix(".json"), payload)
        if rows is not None:
            reporting.write_csv(stem.with_suffix(".csv"), rows, meta)
        return
    if args.format == "csv" and rows is not None:
        sys.stdout.write(reporting.csv_text(rows, meta))
    else:
        sys.stdout.write(reporting.dumps(payload) + "\n")


def cmd_theory(args) -> int:
    dist = _dist(args)
    a = assign_buckets(dist, args.m1, args.beta_seed)
    cands = candidate_set(a)
    lams = sorted(set(args.lambda_grid or []) | (set(cands.values) if args.candidates else set()))
    if not lams:
        raise ConfigError("theory needs --lambda-grid and/or --candidates")
    rows = curve_rows(a, lams, args.m2)
    star = lambda_star(a)
    nonempty = a.n_b > 0
    payload = {
        "manifest": reporting.manifest("theory", _echo(args)),
        "curve": rows,
        "candidates": cands.to_dict(),
        "lambda_star": star.lambda_star,
        "g_at_star": star.g_at_star,
        "buckets": {
            "m1": a.m1,
            "nonempty": int(nonempty.sum()),
            "max_load": int(a.n_b.max()),
            "lambda1_max": float(np.nanmax(a.lambda1_b)),
            "lambda1_min": float(np.nanmin(a.lambda1_b)),
        },
    }
    _emit(args, payload, rows)
    return EXIT_OK


def cmd_tune(args) -> int:
    dist = _dist(args)
    seeds = [derive_seed(args.seed, k) for k in range(args.n_samp)]
    res = grid_search(dist, args.budget, args.cost_per_bucket, args.d, args.m1_grid, seeds,
                      lam=args.lam)
    payload = {"manifest": reporting.manifest("tune", _echo(args), hash_seeds=seeds),
               "result": res.to_dict()}
    rows = [{k: v for k, v in c.items() if k != "table"} for c in res.configs]
    _emit(args, payload, rows)
    return EXIT_OK


def cmd_simulate(args) -> int:
    dist = _dist(args)
    if args.lam is not None and not args.lambda_grid and not args.candidates:
        return _simulate_single(args, dist)
    lams = set(args.lambda_grid or [])
    if args.lam is not None:
        lams.add(args.lam)
    if args.candidates:
        lams |= set(candidate_set(assign_buckets(dist, max(args.m1, 1), args.beta_seed)).values)
    template = SketchConfig(args.m1, args.m2, args.d, 1, args.beta_seed)
    res = sweep_lambda(dist, template, sorted(lams), args.tau, args.runs, args.seed,
                       resample_beta=args.resample_beta, workers=args.workers)
    payload = {
        "manifest": reporting.manifest("simulate", _echo(args), sweep=res.manifest),
        "summary": res.summary(),
        "per_lambda": res.rows(),
    }
    _emit(args, payload, res.rows())
    return EXIT_OK


def _simulate_single(args, dist) -> int:
    cfg = SketchConfig(args.m1, args.m2, args.d, args.lam, args.beta_seed)
    rows = []
    for k in range(args.runs):
        seed = derive_seed(args.seed, k)
        try:
            m = run_once(cfg, StreamSpec(args.tau, dist, seed), instrumented=args.instrumented)
        except InvariantViolation as exc:
            snap = Path(args.out or "elastitune").with_suffix(".violation.json")
            reporting.write_json(snap, {"error": str(exc), "run": k, "stream_seed": seed,
                                        "snapshot": exc.snapshot})
            print(f"invariant violation in run {k}: {exc}; snapshot at {snap}", file=sys.stderr)
            return EXIT_CHECK
        rows.append({"run": k, "stream_seed": seed, "v_bar": m.v_bar, "are": m.are,
                     "err0_mean": m.err0_mean})
    vb = np.array([r["v_bar"] for r in rows])
    aggregate = {
        "runs": len(rows),
        "v_bar_mean": float(vb.mean()),
        "v_bar_stderr": float(vb.std(ddof=1) / math.sqrt(len(vb))) if len(vb) > 1 else None,
        "are_mean": float(np.mean([r["are"] for r in rows])),
        "err0_mean": float(np.mean([r["err0_mean"] for r in rows])),
        "g_theory": g_value(assign_buckets(dist, args.m1, args.beta_seed), args.lam)
        if args.m1 else 0.0,
    }
    payload = {"manifest": reporting.manifest("simulate", _echo(args), config_resolved=cfg.to_dict()),
               "aggregate": aggregate, "runs": rows}
    _emit(args, payload, rows)
    return EXIT_OK


def cmd_bound(args) -> int:
    b = hp_bound(args.n_items, args.m1, args.delta)
    payload = {
        "manifest": reporting.manifest("bound", _echo(args)),
        "bound": b,
        "search_range": [1, math.floor(b)],
    }
    if args.out or args.format == "json":
        _emit(args, payload)
    else:
        print(f"{b:.6f}")
    return EXIT_OK


def cmd_validate(args) -> int:
    results = run_suites(args.only, seed=args.seed, inject_corruption=args.inject_corruption)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<18} {r.seconds:6.2f}s", file=sys.stderr)
    payload = {"manifest": reporting.manifest("validate", _echo(args)),
               "passed": all(r.passed for r in results),
               "checks": [r.to_dict() for r in results]}
    _emit(args, payload, [{"name": r.name, "passed": r.passed, "seconds": r.seconds}
                          for r in results])
    return EXIT_OK if payload["passed"] else EXIT_CHECK


COMMANDS = {"theory": cmd_theory, "tune": cmd_tune, "simulate": cmd_simulate,
            "bound": cmd_bound, "validate": cmd_validate}


def main(argv=None) -> int:
    args = parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"elastitune {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
