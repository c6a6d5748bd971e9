"""Batch experiments: instances x algorithms x noise levels x seeds -> result rows."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ktpg.adg import run_adg_baseline
from ktpg.core import UncertaintyModel, run_ktpg
from ktpg.instances import MAPS, InstanceError, generate_instance, prioritized_plan
from ktpg.kinodynamics import RobotModel
from ktpg.plan_model import GridMap, MapfPlan, ideal_time_sum, parse_map, parse_plan, parse_scenario
from ktpg.sim import NoiseModel, check_trace, compute_metrics, execute_profiles
from ktpg.tpg import Tpg, build_tpg
from ktpg.window import WindowConfig, run_execution_loop

log = logging.getLogger(__name__)

ALGORITHMS = ("ktpg", "ktpgu", "winktpg", "adg")
SCHEMA_VERSION = 1
RESULT_FIELDS = [
    "instance", "map", "agents", "algo", "model", "eps", "p_d", "t_e", "t_p", "n_e", "seed",
    "success", "t_sum", "t_ideal", "suboptimality", "makespan", "windows",
    "collisions", "order_violations", "invariant_ok",
]
TIMING_FIELDS = ["instance", "algo", "eps", "seed", "wall_time", "planner_runtime",
                 "planner_runtime_mean", "planner_runtime_max"]


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    map: str = "random"
    scen: str | None = None
    plan: str | None = None
    agents: list[int] = field(default_factory=lambda: [10])
    instances: int = 1
    algos: list[str] = field(default_factory=lambda: ["winktpg"])
    model: str = "omni"
    eps: list[float] = field(default_factory=lambda: [0.0])
    p_d: float = 0.99
    t_e: float = 5.0
    t_p: float = 20
    n_e: int = 1
    seeds: int = 1
    time_limit: float = 300.0
    out: str | None = None

    def validate(self):
        for a in self.algos:
            if a not in ALGORITHMS:
                raise ConfigError(f"unknown algorithm {a!r}; choose from {', '.join(ALGORITHMS)}")
        if self.model not in ("omni", "diff"):
            raise ConfigError("model must be 'omni' or 'diff'")
        for p in (self.map, self.scen, self.plan):
            if p is not None and p not in MAPS and not Path(p).exists():
                raise ConfigError(f"file not found: {p}")
        if any(e < 0 for e in self.eps):
            raise ConfigError("eps must be non-negative")
        if not 0.5 < self.p_d < 1:
            raise ConfigError("p_d must lie in (0.5, 1)")
        if self.seeds < 1 or self.instances < 1:
            raise ConfigError("seeds and instances must be positive")
        if any(n < 1 for n in self.agents):
            raise ConfigError("agent counts must be positive")
        try:
            WindowConfig(self.t_e, self.t_p, self.n_e)
        except ValueError as err:
            raise ConfigError(str(err)) from None

    def robot_model(self) -> RobotModel:
        return RobotModel.omnidirectional() if self.model == "omni" else RobotModel.differential_drive()


@dataclass
class Instance:
    name: str
    map_name: str
    plan: MapfPlan
    tpg: Tpg


def load_map(spec: str, seed: int = 0) -> GridMap:
    if spec in MAPS:
        return MAPS[spec](seed)
    return parse_map(Path(spec).read_text())


def build_instances(cfg: ExperimentConfig) -> list[Instance]:
    grid = load_map(cfg.map)
    map_name = cfg.map if cfg.map in MAPS else Path(cfg.map).stem
    if cfg.plan:
        plan = parse_plan(Path(cfg.plan).read_text(), grid)
        return [Instance(Path(cfg.plan).stem, map_name, plan, build_tpg(plan))]
    out = []
    for n in cfg.agents:
        for k in range(cfg.instances):
            try:
                if cfg.scen:
                    tasks = parse_scenario(Path(cfg.scen).read_text(), n, grid)
                    plan = prioritized_plan(grid, tasks, seed=k)
                else:
                    _, plan = generate_instance(grid, n, seed=k)
            except InstanceError as err:
                log.warning("skipping instance %s/%d agents/#%d: %s", map_name, n, k, err)
                continue
            out.append(Instance(f"{map_name}-{n}-{k}", map_name, plan, build_tpg(plan)))
    return out


def run_one(inst: Instance, algo: str, model: RobotModel, eps: float, seed: int,
            cfg: ExperimentConfig):
    noise = NoiseModel.from_epsilon(eps, seed=seed)
    unc = UncertaintyModel.from_epsilon(eps, cfg.p_d)
    t0 = time.perf_counter()
    if algo in ("ktpg", "ktpgu"):
        tp0 = time.perf_counter()
        res = run_ktpg(inst.tpg, model, unc if algo == "ktpgu" else None)
        rt = time.perf_counter() - tp0
        trace = execute_profiles(inst.tpg, res.profiles, noise, {"window_runtimes": [rt]})
    elif algo == "winktpg":
        trace = run_execution_loop(inst.tpg, model, unc, WindowConfig(cfg.t_e, cfg.t_p, cfg.n_e),
                                   noise=noise, time_limit=cfg.time_limit)
    else:
        trace = run_adg_baseline(inst.tpg, model, noise=noise, time_limit=cfg.time_limit)
    wall = time.perf_counter() - t0
    return trace, wall


def run_experiment(cfg: ExperimentConfig) -> tuple[list[dict], list[dict]]:
    cfg.validate()
    model = cfg.robot_model()
    rows, timings = [], []
    for inst in build_instances(cfg):
        ideal = ideal_time_sum(inst.plan, model)
        for algo in cfg.algos:
            for eps in cfg.eps:
                for seed in range(cfg.seeds):
                    trace, wall = run_one(inst, algo, model, eps, seed, cfg)
                    report = check_trace(trace, inst.tpg)
                    met = compute_metrics(trace, ideal)
                    success = met.success and wall <= cfg.time_limit
                    # collisions are only a broken invariant where the method promises none
                    must_be_safe = eps == 0.0 or algo == "adg"
                    ok = success and (report.ok or not must_be_safe)
                    rows.append({
                        "instance": inst.name, "map": inst.map_name,
                        "agents": inst.tpg.num_agents, "algo": algo, "model": cfg.model,
                        "eps": eps, "p_d": cfg.p_d, "t_e": cfg.t_e, "t_p": cfg.t_p,
                        "n_e": cfg.n_e, "seed": seed, "success": success,
                        "t_sum": round(met.t_sum, 9), "t_ideal": round(ideal, 9),
                        "suboptimality": round(met.suboptimality, 9),
                        "makespan": round(met.makespan, 9), "windows": met.windows,
                        "collisions": len(report.collisions),
                        "order_violations": len(report.order_violations), "invariant_ok": ok,
                    })
                    timings.append({
                        "instance": inst.name, "algo": algo, "eps": eps, "seed": seed,
                        "wall_time": wall, "planner_runtime": met.planner_runtime,
                        "planner_runtime_mean": met.planner_runtime_mean,
                        "planner_runtime_max": met.planner_runtime_max,
                    })
                    log.info("%s %s eps=%g seed=%d subopt=%.4f collisions=%d violations=%d",
                             inst.name, algo, eps, seed, met.suboptimality,
                             len(report.collisions), len(report.order_violations))
    return rows, timings


def to_csv(rows: list[dict], fields: list[str], header: str | None = None) -> str:
    buf = io.StringIO()
    if header:
        buf.write(f"# {header}\n")
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def summarize(rows: list[dict]) -> dict:
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["algo"], r["eps"]), []).append(r)
    out = {}
    for (algo, eps), rs in sorted(groups.items()):
        sub = [r["suboptimality"] for r in rs if r["success"] and not math.isnan(r["suboptimality"])]
        out[f"{algo}@{eps}"] = {
            "runs": len(rs),
            "success_rate": sum(r["success"] for r in rs) / len(rs),
            "mean_suboptimality": float(np.mean(sub)) if sub else None,
            "collisions": sum(r["collisions"] for r in rs),
            "order_violations": sum(r["order_violations"] for r in rs),
        }
    return out


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_jsonable(x) for x in v]
    return v


def write_outputs(cfg: ExperimentConfig, rows: list[dict], timings: list[dict]) -> Path:
    out = Path(cfg.out or "results")
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(
        to_csv(rows, RESULT_FIELDS, f"ktpg results schema v{SCHEMA_VERSION}: " + ",".join(RESULT_FIELDS)))
    (out / "timings.csv").write_text(
        to_csv(timings, TIMING_FIELDS, f"ktpg timings schema v{SCHEMA_VERSION}"))
    config = {k: v for k, v in asdict(cfg).items() if k != "out"}  # keep files location-independent
    doc = {"schema": SCHEMA_VERSION, "config": config, "summary": summarize(rows), "rows": rows}
    (out / "results.json").write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")
    return out
