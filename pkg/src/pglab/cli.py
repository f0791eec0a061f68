"""Command line entry point ``pglab``.

Exit codes: 0 ok, 1 diagnostics failed, 2 I/O or data error, 3 configuration
error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import demos, runs
from . import store as stmod
from .data import DataError
from .diagnostics import all_pass
from .model import NonFiniteError

EXIT_OK, EXIT_DIAG, EXIT_IO, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3, 4


def threads_from(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("PGLAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise cfgmod.ConfigError(f"PGLAB_THREADS must be an integer, got {env!r}") from None
    return 1


def _sections(text):
    if text is None:
        return None
    return [s.strip() for s in text.split(",") if s.strip()]


def cmd_sample(args) -> int:
    if not args.config:
        raise cfgmod.ConfigError("sample needs --config")
    path = Path(args.config)
    cfg = cfgmod.load(path)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    run_dir = runs.sample(cfg, args.run_dir or "runs", threads_from(args), config_dir=path.parent)
    print(run_dir)
    return EXIT_OK


def _need_run_dir(args) -> Path:
    if not args.run_dir:
        raise cfgmod.ConfigError(f"{args.command} needs --run-dir")
    return Path(args.run_dir)


def cmd_diagnose(args) -> int:
    report = runs.diagnose(_need_run_dir(args), _sections(args.sections))
    for name in report["meta"]["sections"]:
        sec = report[name]
        status = sec.get("status") if isinstance(sec, dict) else None
        if status:
            print(f"{name:13s} {status}")
        else:
            print(f"{name:13s} {'pass' if all_pass(sec) else 'FAIL'}")
    print(f"all_pass {report['meta']['all_pass']}")
    return EXIT_OK if report["meta"]["all_pass"] else EXIT_DIAG


def cmd_eval(args) -> int:
    out = runs.evaluate(_need_run_dir(args), args.split)
    for k in ("lppd", "rmse", "accuracy"):
        if k in out:
            print(f"{k:9s} {out[k]:.6f}")
    if "cumulative" in out:
        c = out["cumulative"]
        print(f"cumulative curve -> {c['file']} (last/first quarter slope ratio {c['ratio']:.4f})")
    return EXIT_OK


def cmd_demo(args) -> int:
    seed = 0 if args.seed is None else args.seed
    out, summary = demos.run_demo(args.name, args.run_dir or "runs", seed, threads_from(args))
    print(f"{out}  all_pass {summary['all_pass']}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    target = Path(args.path or _need_run_dir(args))
    store_path = target / "samples.bnns" if target.is_dir() else target
    store = stmod.load(store_path)
    info = {
        "file": str(store_path),
        "layers": [{"rows": r, "cols": c, "bias": b} for r, c, b in store.layer_shapes],
        "n_chains": store.n_chains,
        "n_samples": store.n_samples,
        "dim": store.dim,
        "seed": store.seed,
        "config_hash": store.config_hash.hex(),
        "bytes": store_path.stat().st_size,
        "nan_draws": int(np.isnan(store.samples).any(-1).sum()),
    }
    meta_path = store_path.parent / "chains.json"
    if meta_path.exists():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        info["acceptance"] = [m.get("acceptance_rate") for m in meta]
        info["failed_chains"] = [m["chain"] for m in meta if m.get("failed")]
    print(json.dumps(info, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration file")
    common.add_argument("--run-dir", help="run directory (sample/demo: base directory for new runs)")
    common.add_argument("--seed", type=int, help="override the configured master seed")
    common.add_argument("--sections", help="comma list of report sections (diagnose)")
    common.add_argument("--threads", type=int, help="worker threads for chains (default: $PGLAB_THREADS or 1)")
    p = argparse.ArgumentParser(prog="pglab", description="Sample and diagnose small Bayesian neural network posteriors.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("sample", parents=[common], help="sample a configured posterior into a run directory")
    sub.add_parser("diagnose", parents=[common], help="write report.json for a run; exit 1 if any check fails")
    e = sub.add_parser("eval", parents=[common], help="predictive metrics and cumulative LPPD curve")
    e.add_argument("--split", default="test", choices=("train", "val", "test"))
    d = sub.add_parser("demo", parents=[common], help=f"run a bundled experiment: {', '.join(demos.DEMOS)}")
    d.add_argument("name")
    i = sub.add_parser("inspect", parents=[common], help="summarise a store or run directory")
    i.add_argument("path", nargs="?")
    return p


COMMANDS = {"sample": cmd_sample, "diagnose": cmd_diagnose, "eval": cmd_eval, "demo": cmd_demo,
            "inspect": cmd_inspect}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (cfgmod.ConfigError, demos.UnknownDemoError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as e:
        name = e.filename or str(e)
        print(f"I/O error: {name}: not found" if e.filename else f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except (OSError, stmod.StoreError, DataError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except (runs.NumericFailure, NonFiniteError, FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
