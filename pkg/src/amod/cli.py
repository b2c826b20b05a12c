"""Command-line interface.

Exit codes: 0 success, 2 validation/usage error, 3 solver failure.
AMOD_OUT_DIR, when set, overrides the output directory of any command.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import experiments, flowopt, plots, policy as pol, sim as simmod
from .errors import AmodError, InvalidSpec, NumericalFailure
from .model import (
    Config,
    FleetSpec,
    PriceDistribution,
    SimConfig,
    default_burn_in,
    load_config,
    save_config,
    validate_fleet,
    validate_network,
)


def _fmt(x: float) -> str:
    return f"{x:.12g}"


def _out_dir(requested: str | Path) -> Path:
    override = os.environ.get("AMOD_OUT_DIR")
    return Path(override) if override else Path(requested)


# ---------------------------------------------------------------- gen / solve


def _cmd_gen(args) -> int:
    net = experiments.generate_network(
        args.m,
        (args.support[0], args.support[1]),
        experiments.DemandOptions(theta_range=tuple(args.theta), wtp_max=args.wtp_max),
        seed=np.random.SeedSequence(args.seed),
    )
    out = Path(args.out)
    if os.environ.get("AMOD_OUT_DIR"):
        out = _out_dir(out.parent) / out.name
    save_config(out, Config(network=net, extras={"seed": args.seed}))
    print(f"wrote {out}")
    return 0


def _cmd_solve(args) -> int:
    cfg = load_config(args.config).require("network", "fleet")
    net, fleet = cfg.network, cfg.fleet
    if args.v_max is not None:
        fleet = fleet.with_v_max(args.v_max)
    report = validate_network(net)
    if report.issues:
        print("\n".join(report.issues), file=sys.stderr)
    report.raise_if_invalid()
    validate_fleet(fleet, network=net).raise_if_invalid()
    problem = flowopt.build_problem(net, fleet)
    solution = flowopt.solve(problem, flowopt.SolverTolerances(kkt=args.kkt_tol))
    paths = flowopt.export_solution(net, fleet, solution, _out_dir(args.out), stem=args.stem)
    print(f"status={solution.status} profit={_fmt(solution.profit)}")
    for name, path in paths.items():
        print(f"wrote {name}: {path}")
    return 0


# ------------------------------------------------------------------- policy


def _policy_from_args(args) -> pol.ChargingPolicy:
    return pol.thresholds_uniform(args.p_min, args.p_max, args.v_max, tau=args.tau)


def _cmd_policy(args) -> int:
    if args.policy_cmd == "thresholds":
        p = _policy_from_args(args)
        lines = ["v,C_v"] + [f"{v},{_fmt(c)}" for v, c in enumerate(p.thresholds)]
        text = "\n".join(lines) + "\n"
        if args.out:
            out = Path(args.out)
            if os.environ.get("AMOD_OUT_DIR"):
                out = _out_dir(out.parent) / out.name
            out.parent.mkdir(parents=True, exist_ok=True)
            out.write_text(text, encoding="utf-8")
            print(f"wrote {out}")
        else:
            print(text, end="")
    elif args.policy_cmd == "pavg":
        p = _policy_from_args(args)
        print(_fmt(pol.avg_cost_closed(p)))
    elif args.policy_cmd == "battery":
        sizing = pol.optimal_battery(args.xi, args.p_min, args.p_max)
        print(f"v_star={sizing.v_star}")
        print(f"p_avg={_fmt(sizing.p_avg)}")
        print(f"beta_component={_fmt(sizing.beta_component)}")
    elif args.policy_cmd == "rebalance":
        fleet = FleetSpec(
            beta0=args.beta0, xi=args.xi, v_max=args.v_max, tau=args.tau, p_s=args.p_s
        )
        b = pol.rebalancing_b(fleet)
        p = _policy_from_args(args)
        plan = pol.approx_rebalanced_cost(b, pol.avg_cost_closed(p), args.p_min, clamp=args.clamp)
        print(f"b={_fmt(b)}")
        print(f"n_star={_fmt(plan.n_star)}")
        print(f"p_avg_r={_fmt(plan.p_avg_r)}")
    return 0


# ---------------------------------------------------------------------- sim


def _sim_sections(args) -> tuple[PriceDistribution, FleetSpec | None, SimConfig]:
    """Assemble distribution/fleet/sim settings from a config file plus flag overrides."""
    cfg = load_config(args.config) if args.config else Config()
    dist = cfg.prices
    if args.p_min is not None and args.p_max is not None:
        dist = PriceDistribution.uniform(args.p_min, args.p_max)
    if dist is None:
        raise InvalidSpec("need either --config with a prices section or --p-min/--p-max")
    fleet = cfg.fleet
    if args.v_max is not None:
        base = fleet or FleetSpec(beta0=0.1, xi=0.003, v_max=args.v_max, tau=args.tau)
        fleet = base.with_v_max(args.v_max)
    if fleet is None:
        raise InvalidSpec("need either --config with a fleet section or --v-max")
    sim = cfg.sim or SimConfig(seed=0, horizon=200_000, replicates=16)
    overrides = {}
    for name in ("seed", "horizon", "replicates"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    burn = args.burn_in if args.burn_in is not None else default_burn_in(fleet.tau, fleet.v_max)
    sim = SimConfig(
        seed=overrides.get("seed", sim.seed),
        horizon=overrides.get("horizon", sim.horizon),
        replicates=overrides.get("replicates", sim.replicates),
        burn_in=burn,
    )
    return dist, fleet, sim


def _cmd_sim(args) -> int:
    dist, fleet, cfg = _sim_sections(args)
    policy = pol.thresholds_general(dist, fleet.v_max, tau=fleet.tau)
    if args.sim_cmd == "policy":
        res = simmod.simulate_policy(policy, cfg)
        print(f"p_avg={_fmt(res.p_avg.mean)} ci_half={_fmt(res.p_avg.ci_half)}")
        print(
            f"charging_fraction={_fmt(res.charging_fraction.mean)} "
            f"ci_half={_fmt(res.charging_fraction.ci_half)}"
        )
        print("soc_counts=" + ",".join(str(int(c)) for c in res.soc_counts))
        return 0
    if args.sim_cmd == "rebalance":
        if args.p_s is not None:
            from dataclasses import replace

            fleet = replace(fleet, p_s=args.p_s)
        validate_fleet(fleet, distribution=dist).raise_if_invalid()
        if fleet.p_s is None:
            raise InvalidSpec("rebalance simulation needs p_s (fleet section or --p-s)")
        gammas = [float(g) for g in args.gammas.split(",")]
        rows = experiments.run_gamma_sweep(policy, fleet, cfg, gammas)
        out = Path(args.out)
        if os.environ.get("AMOD_OUT_DIR"):
            out = _out_dir(out.parent) / out.name
        experiments.write_gamma_sweep_csv(out, rows)
        print(f"wrote {out}")
        return 0
    if args.sim_cmd == "brute":
        res = simmod.brute_force_threshold_search(fleet.v_max, dist, fleet.tau, args.grid, cfg)
        print("v,C_v")
        for v, c in enumerate(res.thresholds):
            print(f"{v},{_fmt(c)}")
        print(f"cost={_fmt(res.cost)} ci_half={_fmt(res.ci_half)}")
        return 0
    raise InvalidSpec(f"unknown sim subcommand {args.sim_cmd!r}")


# ---------------------------------------------------------------------- exp


def _cmd_exp(args) -> int:
    base = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            base = json.load(fh)
    cfg = experiments.ExperimentConfig.from_dict(base)
    updates = {"experiment": args.exp_cmd.replace("-", "_")}
    if args.seed is not None:
        updates["master_seed"] = args.seed
    if args.networks is not None:
        updates["networks"] = args.networks
    if args.jobs is not None:
        updates["jobs"] = args.jobs
    updates["out_dir"] = _out_dir(args.out)
    from dataclasses import replace

    cfg = replace(cfg, **updates)

    if args.exp_cmd in ("fig-a", "fig-b"):
        sweep = experiments.run_capacity_sweep(cfg)
        runner = experiments.run_fig_a if args.exp_cmd == "fig-a" else experiments.run_fig_b
        csv_path = runner(cfg, sweep)
    else:
        csv_path, summary_path = experiments.run_fig_c(cfg)
        print(f"wrote {summary_path}")
    print(f"wrote {csv_path}")
    if not args.no_plot:
        svg = plots.emit_plot(csv_path, plots.PlotSpec(kind=args.exp_cmd.replace("-", "_")))
        print(f"wrote {svg}")
    return 0


# -------------------------------------------------------------------- parser


def _add_uniform_args(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--p-min", type=float, required=required)
    p.add_argument("--p-max", type=float, required=required)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="amod",
        description="Electric mobility-on-demand fleet optimization and smart-charging analysis",
    )
    sub = parser.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen", help="generate a random network config")
    g.add_argument("--m", type=int, default=10)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--support", type=float, nargs=2, default=[0.8, 3.0], metavar=("LO", "HI"))
    g.add_argument("--theta", type=float, nargs=2, default=[0.5, 1.5], metavar=("LO", "HI"))
    g.add_argument("--wtp-max", type=float, default=40.0)
    g.add_argument("--out", default="network.json")
    g.set_defaults(func=_cmd_gen)

    s = sub.add_parser("solve", help="solve the fleet flow problem for one network")
    s.add_argument("--config", required=True)
    s.add_argument("--v-max", type=int, default=None)
    s.add_argument("--out", default="out")
    s.add_argument("--stem", default="solution")
    s.add_argument("--kkt-tol", type=float, default=1e-6)
    s.set_defaults(func=_cmd_solve)

    p = sub.add_parser("policy", help="closed-form charging policy quantities")
    psub = p.add_subparsers(dest="policy_cmd", required=True)
    for name in ("thresholds", "pavg"):
        q = psub.add_parser(name)
        _add_uniform_args(q)
        q.add_argument("--v-max", type=int, required=True)
        q.add_argument("--tau", type=int, default=pol.DEFAULT_TRIP_PERIODS)
        if name == "thresholds":
            q.add_argument("--out", default=None)
    q = psub.add_parser("battery")
    _add_uniform_args(q)
    q.add_argument("--xi", type=float, required=True)
    q = psub.add_parser("rebalance")
    _add_uniform_args(q)
    q.add_argument("--v-max", type=int, required=True)
    q.add_argument("--tau", type=int, default=pol.DEFAULT_TRIP_PERIODS)
    q.add_argument("--beta0", type=float, default=0.1)
    q.add_argument("--xi", type=float, default=0.003)
    q.add_argument("--p-s", type=float, required=True)
    q.add_argument("--clamp", action="store_true")
    p.set_defaults(func=_cmd_policy)

    m = sub.add_parser("sim", help="Monte Carlo simulation of the charging chain")
    msub = m.add_subparsers(dest="sim_cmd", required=True)
    for name in ("policy", "rebalance", "brute"):
        q = msub.add_parser(name)
        q.add_argument("--config", default=None)
        _add_uniform_args(q, required=False)
        q.add_argument("--v-max", type=int, default=None)
        q.add_argument("--tau", type=int, default=pol.DEFAULT_TRIP_PERIODS)
        q.add_argument("--seed", type=int, default=None)
        q.add_argument("--horizon", type=int, default=None)
        q.add_argument("--replicates", type=int, default=None)
        q.add_argument("--burn-in", type=int, default=None)
        if name == "rebalance":
            q.add_argument("--gammas", default="0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0")
            q.add_argument("--p-s", type=float, default=None)
            q.add_argument("--out", default="gamma_sweep.csv")
        if name == "brute":
            q.add_argument("--grid", type=int, default=21)
    m.set_defaults(func=_cmd_sim)

    e = sub.add_parser("exp", help="figure reproduction experiments")
    esub = e.add_subparsers(dest="exp_cmd", required=True)
    for name in ("fig-a", "fig-b", "fig-c"):
        q = esub.add_parser(name)
        q.add_argument("--config", default=None)
        q.add_argument("--seed", type=int, default=None)
        q.add_argument("--out", default="out")
        q.add_argument("--networks", type=int, default=None)
        q.add_argument("--jobs", type=int, default=None)
        q.add_argument("--no-plot", action="store_true")
    e.set_defaults(func=_cmd_exp)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    except InvalidSpec as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 2
    except AmodError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"file not found: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
