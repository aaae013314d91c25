"""Command line: ``modmaint build | reliability | cost-curve | optimize``.

Every command reads one configuration (the bundled SEM/BOP case study by
default), writes CSV/JSON results and PNG figures under ``--out`` and
returns 0 on success, 2 on configuration errors and 3 on numerical
failures.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import io, plotting
from .config import ModelConfig, bundled_config_path, load_config
from .errors import ConfigError, ModelError
from .maintenance import build_cost_matrix, build_maintenance_matrix, build_policy
from .markov import ph_density, ph_mean, transient_law
from .simulate import analytic_sweep, grid_optimize, make_grid, system_mean_lifetime

log = logging.getLogger("modmaint")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, default=None, help="model configuration (default: bundled SEM/BOP)")
    p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    p.add_argument("--out", type=Path, default=Path("results"), help="output directory")
    p.add_argument("--multi-cycle", action="store_true", help="simulate every cycle instead of the first one")
    p.add_argument("--accounting", choices=("per_module", "global"), default=None,
                   help="where the inspection cost is charged (overrides the config)")
    p.add_argument("--form", choices=("literal", "exact"), default=None, help="analytic cost form")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _sim_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--R", type=int, default=None, help="replications per grid point")
    p.add_argument("--M", type=int, default=None, help="grid size")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--a-rule", choices=("ceil", "round", "exact"), default=None,
                   help="how the inspection count A is derived from horizon/tau")
    p.add_argument("--horizon-hours", type=float, default=None, help="useful life over which inspections are counted")


def _scenario_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--scenario", default=None, help="scenario name")
    g.add_argument("--all", action="store_true", help="all scenarios (default)")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="modmaint", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("build", parents=[common], help="build generators, partitions and maintenance matrices")
    p = sub.add_parser("reliability", parents=[common], help="system reliability curve and mean lifetime")
    p.add_argument("--grid", type=int, default=200, help="number of grid points")
    p.add_argument("--tmax", type=float, default=None, help="last time point in hours (default 4 x mean)")
    p = sub.add_parser("cost-curve", parents=[common], help="objective against the inspection interval")
    p.add_argument("--method", choices=("analytic", "montecarlo"), default="analytic")
    p.add_argument("--analytic-mode", choices=("recursive", "first-cycle"), default="recursive")
    _sim_flags(p)
    _scenario_flags(p)
    p = sub.add_parser("optimize", parents=[common], help="Monte-Carlo grid search per scenario")
    _sim_flags(p)
    _scenario_flags(p)
    return parser


# -- helpers ---------------------------------------------------------------------

def _load(args) -> ModelConfig:
    return load_config(args.config or bundled_config_path())


def _policy(cfg: ModelConfig, costs, args):
    return build_policy(cfg.system, costs, args.accounting or cfg.accounting, args.form or cfg.form)


def _scenarios(cfg: ModelConfig, args):
    sc = cfg.scenarios()
    if getattr(args, "scenario", None):
        sc = [s for s in sc if s[0] == args.scenario]
        if not sc:
            raise ConfigError(f"no scenario named {args.scenario!r}", path=cfg.source)
    return sc


def _sim(cfg: ModelConfig, args):
    horizon = None if args.horizon_hours is None else float(cfg.to_model_time(args.horizon_hours))
    return cfg.sim_config(R=args.R, M=args.M, seed=args.seed, workers=args.workers, a_rule=args.a_rule,
                          horizon=horizon, multi_cycle=args.multi_cycle or None)


def _c_down_hour(cfg: ModelConfig, costs) -> float:
    return costs.C_down / cfg.time_unit_hours


# -- commands -------------------------------------------------------------------------

def cmd_build(cfg: ModelConfig, args) -> dict:
    out = args.out / "build"
    system = cfg.system
    classes = system.classes()
    io.write_csv(out / "system_states.csv", ["index", "label", "class", "alpha"],
                 ([i, lab, int(c), float(a)] for i, (lab, c, a) in enumerate(zip(system.labels, classes, system.alpha))))
    io.write_matrix(out / "Q_sys.txt", system.Q)
    costs = cfg.costs()
    modules = []
    for i, m in enumerate(system.modules, start=1):
        io.write_matrix(out / f"Q_{i}.txt", m.generator)
        io.write_matrix(out / f"M_{i}.txt", build_maintenance_matrix(m))
        io.write_matrix(out / f"C_{i}.txt", build_cost_matrix(m, costs, i - 1, args.accounting or cfg.accounting))
        io.write_csv(out / f"module_{i}_states.csv", ["index", "label", "class"],
                     ([k, lab, int(c)] for k, (lab, c) in enumerate(zip(m.ext_labels, m.ext_class()))))
        modules.append({"name": m.name, "n_states": int(m.n_ext), "n_optimal": int(len(m.ext_u1)),
                        "n_critical": int(len(m.ext_u2)), "n_down_raw": int(m.n_down_raw)})
    io.dump_model(system, out / "model.json", extra={"name": cfg.name, "time_unit_hours": cfg.time_unit_hours})
    summary = {
        "n_states": int(system.n_states), "n_up": int(system.n_up), "n_optimal": int(system.n_u1),
        "n_critical": int(system.n_up - system.n_u1),
        "n_down_raw_modules": int(system.n_down_raw), "n_down_raw_units": int(system.n_down_raw_units),
        "modules": modules,
    }
    print(f"{cfg.name}: {system.n_up} operative states ({system.n_u1} optimal, "
          f"{system.n_up - system.n_u1} critical) + 1 down state")
    print(f"down configurations before aggregation: {system.n_down_raw} (module level), "
          f"{system.n_down_raw_units} (unit level)")
    return summary


def cmd_reliability(cfg: ModelConfig, args) -> dict:
    ph = cfg.system.lifetime()
    mu = ph_mean(ph)
    tmax = 4 * mu if args.tmax is None else float(cfg.to_model_time(args.tmax))
    if args.grid < 2 or tmax <= 0:
        raise ConfigError("reliability needs --grid >= 2 and --tmax > 0")
    t = np.linspace(0.0, tmax, args.grid)
    R, f = [], []
    v = ph.alpha
    for k, tk in enumerate(t):
        # march the transient law along the grid instead of restarting at 0
        v = v if k == 0 else transient_law(v, ph.T, tk - t[k - 1])
        R.append(float(v.sum()))
        f.append(float(max(v @ ph.exit_vector, 0.0)))
    R = np.clip(R, 0.0, 1.0)
    io.write_csv(args.out / "reliability.csv", ["t", "t_hours", "R", "f"],
                 zip(t, cfg.to_hours(t), R, f))
    plotting.plot_reliability(cfg.to_hours(t), R, args.out / "reliability.png", float(cfg.to_hours(mu)))
    print(f"mean lifetime: {mu:.6f} model units = {cfg.to_hours(mu):,.1f} h")
    return {"mean": mu, "mean_hours": float(cfg.to_hours(mu)), "density_at_0": ph_density(ph, 0.0),
            "grid": int(args.grid), "tmax_hours": float(cfg.to_hours(tmax))}


def _result_rows(cfg, res):
    m = np.arange(1, res.taus.size + 1)
    return zip(m, res.taus, cfg.to_hours(res.taus), res.A, res.av_cost, res.av_se, res.objective, res.objective_se)


_CURVE_HEADER = ["m", "tau", "tau_hours", "A", "cycle_cost", "cycle_cost_se", "objective", "objective_se"]


def cmd_cost_curve(cfg: ModelConfig, args) -> dict:
    sim = _sim(cfg, args)
    curves, out = {}, {}
    for name, costs in _scenarios(cfg, args):
        policy = _policy(cfg, costs, args)
        if args.method == "montecarlo":
            res = grid_optimize(policy, sim)
        else:
            mu = system_mean_lifetime(cfg.system)
            taus = make_grid(mu if sim.tau_max is None else sim.tau_max, sim.M)
            res = analytic_sweep(policy, taus, sim.horizon, sim.a_rule, args.analytic_mode)
        io.write_csv(args.out / f"cost_curve_{args.method}_{name}.csv", _CURVE_HEADER, _result_rows(cfg, res))
        curves[name] = (cfg.to_hours(res.taus), res.objective, res.objective_se)
        out[name] = {"method": res.method, "tau_star_hours": float(cfg.to_hours(res.tau_star)),
                     "total_cost": res.total_cost, "total_se": res.total_se}
        print(f"scenario {name}: argmin tau = {cfg.to_hours(res.tau_star):,.0f} h, objective = {res.total_cost:.4f}")
    plotting.plot_cost_curves(curves, args.out / f"cost_curves_{args.method}.png", title=f"{cfg.name} ({args.method})")
    return {"method": args.method, "scenarios": out, "sim": vars(sim)}


def cmd_optimize(cfg: ModelConfig, args) -> dict:
    sim = _sim(cfg, args)
    rows, curves, table = [], {}, []
    for name, costs in _scenarios(cfg, args):
        res = grid_optimize(_policy(cfg, costs, args), sim)
        io.write_csv(args.out / f"cost_curve_montecarlo_{name}.csv", _CURVE_HEADER, _result_rows(cfg, res))
        curves[name] = (cfg.to_hours(res.taus), res.objective, res.objective_se)
        step = float(cfg.to_hours(res.taus[1] - res.taus[0]))
        row = {"scenario": name, "c_down_per_hour": _c_down_hour(cfg, costs),
               "tau_star": res.tau_star, "tau_star_hours": float(cfg.to_hours(res.tau_star)),
               "A_star": res.A_star, "total_cost": res.total_cost, "total_se": res.total_se,
               "grid_step_hours": step}
        rows.append(row)
        table.append(list(row.values()))
    io.write_csv(args.out / "optimize.csv", list(rows[0].keys()), table)
    plotting.plot_cost_curves(curves, args.out / "cost_curves_montecarlo.png", title=cfg.name)
    if len(rows) > 1:
        plotting.plot_optimum_summary([r["c_down_per_hour"] for r in rows], [r["tau_star_hours"] for r in rows],
                                      [r["total_cost"] for r in rows], args.out / "optimum_summary.png")
    print(f"{'scenario':>8} {'C_down':>8} {'tau (h)':>9} {'A':>4} {'cost':>10} {'SE':>7}")
    for r in rows:
        print(f"{r['scenario']:>8} {r['c_down_per_hour']:>8g} {r['tau_star_hours']:>9.0f} {r['A_star']:>4d} "
              f"{r['total_cost']:>10.4f} {r['total_se']:>7.3f}")
    return {"scenarios": rows, "sim": vars(sim)}


COMMANDS = {"build": cmd_build, "reliability": cmd_reliability, "cost-curve": cmd_cost_curve,
            "optimize": cmd_optimize}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    started = time.perf_counter()
    try:
        cfg = _load(args)
        payload = COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ModelError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    meta = io.run_metadata(args.seed if args.seed is not None else cfg.raw.get("simulation", {}).get("seed"),
                           command=args.command, config=cfg.source,
                           elapsed_s=round(time.perf_counter() - started, 3))
    io.write_json(args.out / f"summary_{args.command}.json", {"meta": meta, "result": payload})
    log.info("results written to %s", args.out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
