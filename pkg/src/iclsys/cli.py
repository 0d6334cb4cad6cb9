"""Command-line entry points.

  icl run <config.json>        run a configured experiment sweep
  icl verify                   run the closed-form / Monte-Carlo oracle suite
  icl diversity <config.json>  diversity verdict plus the trap comparison

Config schema (JSON object): see README.  ICL_THREADS caps worker count.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path


def _load(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _cmd_run(args) -> int:
    from .harness import run_experiment
    cfg = _load(args.config)
    out_dir = args.out if args.out else cfg.get("out_dir")
    result = run_experiment(cfg, out_dir=out_dir)
    print(f"experiment: {result.experiment}  axis: {result.axis}")
    print(f"fitted slope: {result.slope:.4f} +/- {result.slope_std_error:.4f}")
    for name, table in sorted(result.curves.items()):
        tail = table.mean_shifted[-1] if table.mean_shifted else float("nan")
        print(f"  curve {name}: {len(table.grid)} points, tail shifted error {tail:.4e}")
    return 0


def _cmd_verify(_args) -> int:
    from .verification import run_all
    records = run_all(verbose=True)
    return 0 if all(r.passed for r in records) else 1


def _cmd_diversity(args) -> int:
    from .diversity import diversity_verdict
    from .harness import build_task_dist, resolve_config, run_experiment
    from .numerics import Rng

    cfg = _load(args.config)
    cfg.setdefault("experiment", "diversity")
    resolved = resolve_config(cfg)
    d = resolved["d"]
    train_dist = build_task_dist(resolved["train_tasks"], d)
    out_dir = Path(args.out if args.out else resolved.get("out_dir", "results"))
    out_dir.mkdir(parents=True, exist_ok=True)
    verdicts = {}
    for ti, spec in enumerate(resolved["test_tasks"]):
        test_dist = build_task_dist(spec, d)
        verdict = diversity_verdict(train_dist, test_dist,
                                    rng=Rng(resolved["seed_base"], 0xD1).child(ti))
        label = spec.get("label", f"test_{ti}")
        verdicts[label] = json.loads(verdict.to_json())
        print(f"verdict vs {label}: {verdict.verdict}")
    with open(out_dir / "verdict.json", "w", encoding="utf-8") as fh:
        json.dump(verdicts, fh, indent=2)
    result = run_experiment(resolved, out_dir=out_dir)
    from .harness import tail_slope
    for name, table in sorted(result.curves.items()):
        print(f"  curve {name}: tail slope {tail_slope(table):.3f}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="icl", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run an experiment config")
    run_p.add_argument("config")
    run_p.add_argument("--out", default=None)
    run_p.set_defaults(fn=_cmd_run)

    verify_p = sub.add_parser("verify", help="run the oracle suite")
    verify_p.set_defaults(fn=_cmd_verify)

    div_p = sub.add_parser("diversity", help="diversity verdict + trap experiment")
    div_p.add_argument("config")
    div_p.add_argument("--out", default=None)
    div_p.set_defaults(fn=_cmd_diversity)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
