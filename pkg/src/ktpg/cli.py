"""Command-line entry point.

    ktpg run --map random --agents 20 50 --algo winktpg adg --eps 0 0.02 --seeds 5 --out results/
    ktpg generate --map empty --agents 10 --seed 3 --out inst/

Exit codes: 0 all runs succeeded with intact invariants, 1 some run failed,
2 invalid configuration or unreadable input. Log level is read from the
``KTPG_LOG_LEVEL`` environment variable (default WARNING).
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from pathlib import Path

from ktpg.experiment import ExperimentConfig, load_map, run_experiment, summarize, write_outputs
from ktpg.instances import MAPS, InstanceError, generate_instance
from ktpg.plan_model import serialize_map, serialize_plan, serialize_scenario

log = logging.getLogger("ktpg")


def _float(text: str) -> float:
    return math.inf if text.lower() in ("inf", "infinity") else float(text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ktpg", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a batch experiment and write CSV/JSON results")
    run.add_argument("--map", default="random",
                     help=f"MovingAI .map file or built-in map ({', '.join(MAPS)})")
    run.add_argument("--scen", help="MovingAI .scen file (tasks are planned with prioritized A*)")
    run.add_argument("--plan", help="plan file; overrides --scen/--agents")
    run.add_argument("--agents", type=int, nargs="+", default=[10])
    run.add_argument("--instances", type=int, default=1, help="random instances per agent count")
    run.add_argument("--algo", nargs="+", default=["winktpg"],
                     choices=["ktpg", "ktpgu", "winktpg", "adg"])
    run.add_argument("--model", default="omni", choices=["omni", "diff"])
    run.add_argument("--eps", type=float, nargs="+", default=[0.0],
                     help="move-time noise std per metre (K = eps^2)")
    run.add_argument("--pd", type=float, default=0.99, help="safety probability P_d")
    run.add_argument("--te", type=_float, default=5.0, help="replanning period in seconds (inf allowed)")
    run.add_argument("--tp", type=_float, default=20, help="planning window in vertices (inf allowed)")
    run.add_argument("--ne", type=int, default=1, help="enqueued vertices per agent")
    run.add_argument("--seeds", type=int, default=1, help="noise seeds 0..N-1 per configuration")
    run.add_argument("--time-limit", type=float, default=300.0, help="wall-clock limit per run (s)")
    run.add_argument("--out", default="results")

    gen = sub.add_parser("generate", help="write a random map/scen/plan instance")
    gen.add_argument("--map", default="random")
    gen.add_argument("--agents", type=int, default=10)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", default="instance")
    return p


def _run(args) -> int:
    cfg = ExperimentConfig(
        map=args.map, scen=args.scen, plan=args.plan, agents=args.agents, instances=args.instances,
        algos=args.algo, model=args.model, eps=args.eps, p_d=args.pd, t_e=args.te, t_p=args.tp,
        n_e=args.ne, seeds=args.seeds, time_limit=args.time_limit, out=args.out,
    )
    rows, timings = run_experiment(cfg)
    out = write_outputs(cfg, rows, timings)
    for key, s in summarize(rows).items():
        sub = s["mean_suboptimality"]
        print(f"{key:>16}: runs={s['runs']} success={s['success_rate']:.2f} "
              f"subopt={'n/a' if sub is None else f'{sub:.4f}'} "
              f"collisions={s['collisions']} violations={s['order_violations']}")
    print(f"results written to {out}/")
    return 0 if rows and all(r["invariant_ok"] for r in rows) else 1


def _generate(args) -> int:
    grid = load_map(args.map, args.seed)
    tasks, plan = generate_instance(grid, args.agents, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "map.map").write_text(serialize_map(grid))
    (out / "tasks.scen").write_text(serialize_scenario(tasks, grid, "map.map"))
    (out / "plan.txt").write_text(serialize_plan(plan))
    print(f"wrote {out}/map.map, tasks.scen, plan.txt")
    return 0


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("KTPG_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        return _run(args) if args.command == "run" else _generate(args)
    except (ValueError, InstanceError, OSError) as err:  # ConfigError and ParseError included
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
