"""Command-line experiment runner.

Four subcommands, each taking a config file:

    trades run        <config>   iterate and persist trace + report
    trades validate   <config>   structural checks only, no iteration
    trades sweep      <config>   stepsize grid, one cell per (gamma, delta)
    trades case-study <config>   voltage scenario run with data provenance

Common flags: --out DIR replaces the configured output directory,
--seed N replaces the master seed, --oracle on|off toggles the
reference-equilibrium solve.  TRADES_OUTPUT_DIR in the environment
also overrides the output directory (the explicit flag wins).

Exit codes: 0 success, 1 usage or validation failure, 2 divergence
(or failed assumption checks under validate).
"""

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .algorithm import TradesConfig, run
from .config import (SPEC_VERSION, canonical_text, load_config,
                     load_quadratic_game, parse_config, split_scenario_seed)
from .errors import ConfigError, NonFiniteDetected, TradesError
from .games import (random_strongly_monotone_game, solve_ne_oracle,
                    validate_assumptions)
from .grid import (build_radial_network, build_voltage_game,
                   default_voltage_config, distflow_sensitivities,
                   evaluate_voltages, gen_agents, gen_baseline_profile,
                   gen_prices, load_agents, load_network, load_prices,
                   save_agents, save_network, save_prices)
from .network import (gen_digraph, is_strongly_connected,
                      make_doubly_stochastic, spectrum)

ERR_TARGET_SWEEP = 1e-6


# ---------------------------------------------------------------- assembly


def build_graph(cfg):
    graph = gen_digraph(cfg.graph.n_agents, cfg.graph.edge_prob, cfg.graph.seed)
    return make_doubly_stochastic(graph, method=cfg.graph.weight_method)


def assemble_game(cfg):
    """Game instance plus scenario data (empty dict for affine)."""
    if cfg.scenario == "affine":
        a = cfg.affine
        if a.game_file is not None:
            game = load_quadratic_game(a.game_file)
            if game.N != cfg.graph.n_agents:
                raise ConfigError(
                    f"game file has {game.N} agents, [graph] says "
                    f"{cfg.graph.n_agents}")
            return game, {}
        game = random_strongly_monotone_game(
            cfg.graph.n_agents, a.strategy_dim, a.agg_dim, seed=a.seed,
            coupling=a.coupling, box_halfwidth=a.box_halfwidth)
        return game, {}

    v = cfg.voltage
    net_seed, base_seed, price_seed, agent_seed = split_scenario_seed(v.seed)
    if v.network_file is not None:
        net = load_network(v.network_file)
        if net.n_buses != v.n_buses:
            raise ConfigError(f"network file has {net.n_buses} buses, "
                              f"[voltage] says {v.n_buses}")
    else:
        net = build_radial_network(v.n_buses, seed=net_seed)
    baseline = gen_baseline_profile(net, v.horizon, seed=base_seed)
    model = distflow_sensitivities(net, baseline, power_base_kw=v.power_base_kw)
    if v.prices_file is not None:
        prices = load_prices(v.prices_file)
        if prices.size != v.horizon:
            raise ConfigError(f"price file covers {prices.size} hours, "
                              f"[voltage] says {v.horizon}")
    else:
        prices = gen_prices(v.horizon, seed=price_seed)
    if v.agents_file is not None:
        agents = load_agents(v.agents_file)
        if len(agents) != cfg.graph.n_agents:
            raise ConfigError(f"agents file lists {len(agents)} agents, "
                              f"[graph] says {cfg.graph.n_agents}")
        for k, spec in enumerate(agents):
            if spec.horizon != v.horizon:
                raise ConfigError(f"agent {k} covers {spec.horizon} hours, "
                                  f"[voltage] says {v.horizon}")
    else:
        agents = gen_agents(cfg.graph.n_agents, net, v.horizon, seed=agent_seed)
    game_cfg = default_voltage_config(
        model, prices, voltage_scale=v.voltage_scale,
        penalty_weight=v.penalty_weight, active_weight=v.active_weight,
        reactive_weight=v.reactive_weight)
    game = build_voltage_game(model, agents, game_cfg)
    extras = {"network": net, "model": model, "prices": prices,
              "agents": agents, "game_config": game_cfg}
    return game, extras


# ----------------------------------------------------------------- outputs


def _write_atomic(path, text):
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _finite_or_none(value):
    if value is None:
        return None
    value = float(value)
    return value if np.isfinite(value) else None


def _scenario_seed(cfg):
    if cfg.scenario == "affine":
        return cfg.affine.seed
    return cfg.voltage.seed


def _report_payload(cfg, graph, game, report, trace, diverged_at, elapsed):
    spec = spectrum(graph)
    mu = lip = None
    if game.affine is not None:
        mu = game.affine.exact_modulus()
        lip = game.affine.exact_lipschitz()
    result = {"diverged": diverged_at is not None,
              "divergence_iteration": diverged_at}
    if report is not None:
        as_dict = report.as_dict()
        as_dict["a1"] = _finite_or_none(as_dict.get("a1"))
        as_dict["a2"] = _finite_or_none(as_dict.get("a2"))
        as_dict["r_squared"] = _finite_or_none(as_dict.get("r_squared"))
        as_dict["contraction_ratio"] = _finite_or_none(
            as_dict.get("contraction_ratio"))
        result.update(as_dict)
        result["verdict"] = report.verdict
    if trace is not None and len(trace) > 0:
        result["err_x_final"] = _finite_or_none(trace.err_x[-1])
        result["est_err_final"] = _finite_or_none(trace.est_err_max[-1])
        result["est_err_peak"] = _finite_or_none(np.max(trace.est_err_max))
        result["disagreement_final"] = _finite_or_none(trace.disagreement[-1])
        result["feas_residual_max"] = _finite_or_none(np.max(trace.feas_residual))
        result["z_mean_residual_max"] = _finite_or_none(
            np.max(trace.z_mean_residual))
    return {
        "spec_version": SPEC_VERSION,
        "scenario": cfg.scenario,
        "tracker": cfg.tracker,
        "oracle_enabled": cfg.oracle,
        "seeds": {"master": cfg.seed, "graph": cfg.graph.seed,
                  "scenario": _scenario_seed(cfg), "init": cfg.trades.seed},
        "graph": {"n_agents": cfg.graph.n_agents,
                  "edge_prob": cfg.graph.edge_prob,
                  "weight_method": cfg.graph.weight_method,
                  "stochasticity_residual": graph.stochasticity_residual(),
                  "rho_disagreement": spec.rho_disagreement,
                  "sigma_disagreement": spec.sigma_disagreement},
        "game": {"agents": game.N, "strategy_dim_total": game.n,
                 "aggregate_dim": game.d, "mu": mu, "lipschitz": lip},
        "trades": {"gamma": cfg.trades.gamma, "delta": cfg.trades.delta,
                   "stop_tol": cfg.trades.stop_tol,
                   "max_iter": cfg.trades.max_iter,
                   "trace_stride": cfg.trades.trace_stride},
        "result": result,
        "timing_seconds": round(elapsed, 3),
    }


# ------------------------------------------------------------ subcommands


def _execute_run(cfg, provenance=False):
    started = time.perf_counter()
    graph = build_graph(cfg)
    game, extras = assemble_game(cfg)
    oracle = solve_ne_oracle(game) if cfg.oracle else None

    diverged_at = None
    state = report = None
    try:
        state, trace, report = run(game, graph, cfg.trades, oracle=oracle,
                                   tracker_mode=cfg.tracker)
    except NonFiniteDetected as exc:
        diverged_at = exc.iteration
        trace = exc.trace
    elapsed = time.perf_counter() - started

    payload = _report_payload(cfg, graph, game, report, trace,
                              diverged_at, elapsed)
    if cfg.scenario == "voltage" and state is not None:
        summary = evaluate_voltages(extras["model"], extras["agents"],
                                    state.x, extras["game_config"])
        payload["voltage"] = {
            "deviation_score": summary.deviation_score,
            "base_score": summary.base_score,
            "improvement_ratio": summary.deviation_score / summary.base_score
            if summary.base_score > 0 else None,
            "voltage_scale": cfg.voltage.voltage_scale,
            "power_base_kw": cfg.voltage.power_base_kw,
        }

    out_dir = cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    if trace is not None:
        _write_atomic(os.path.join(out_dir, "trace.csv"), trace.csv_text())
    _write_atomic(os.path.join(out_dir, "report.json"),
                  json.dumps(payload, indent=2, sort_keys=True) + "\n")
    _write_atomic(os.path.join(out_dir, "config.echo"), canonical_text(cfg))
    if provenance and extras:
        save_network(extras["network"], os.path.join(out_dir, "network.csv"))
        save_prices(extras["prices"], os.path.join(out_dir, "prices.csv"))
        save_agents(extras["agents"], os.path.join(out_dir, "agents.csv"))

    if diverged_at is not None:
        print(f"DIVERGED at iteration {diverged_at}; outputs in {out_dir}")
        return 2
    print(f"stopped after {report.iterations} iterations ({report.stop_reason})")
    if report.a2 is not None:
        print(f"fitted decay exponent {report.a2:.6g} "
              f"(R^2 = {report.r_squared:.6g}), verdict {report.verdict}")
    if "voltage" in payload:
        v = payload["voltage"]
        print(f"voltage deviation score {v['deviation_score']:.6g} "
              f"vs base {v['base_score']:.6g}")
    print(f"outputs in {out_dir}")
    if report.a2 is not None and report.a2 <= 0:
        return 2
    return 0


def cmd_run(cfg):
    return _execute_run(cfg)


def cmd_case_study(cfg):
    if cfg.scenario != "voltage":
        raise ConfigError("case-study requires scenario = voltage")
    return _execute_run(cfg, provenance=True)


def cmd_validate(cfg):
    try:
        graph = build_graph(cfg)
        game, _ = assemble_game(cfg)
    except ConfigError:
        raise
    except (ValueError, TradesError) as exc:
        print(f"assembly: FAIL ({exc})")
        return 2

    ok = True
    connected = is_strongly_connected(graph)
    ok &= connected
    print(f"graph strongly connected: {'PASS' if connected else 'FAIL'}")
    residual = graph.stochasticity_residual()
    stochastic = residual <= 1e-9
    ok &= stochastic
    print(f"doubly stochastic weights: residual {residual:.3g} "
          f"({'PASS' if stochastic else 'FAIL'})")
    spec = spectrum(graph)
    gap = 1.0 - spec.rho_disagreement
    contracting = gap > 0
    ok &= contracting
    print(f"consensus spectral gap: {gap:.6g} "
          f"({'PASS' if contracting else 'FAIL'})")

    rng = np.random.default_rng(cfg.trades.seed)
    worst = 0.0
    for agent in game.agents:
        point = agent.projector(rng.normal(scale=3.0,
                                           size=agent.projector.dim))
        worst = max(worst, agent.projector.membership_residual(point))
    feasible = worst <= 1e-8
    ok &= feasible
    print(f"feasible-set projections: max membership residual {worst:.3g} "
          f"({'PASS' if feasible else 'FAIL'})")

    report = validate_assumptions(game, sample_budget=50,
                                  rng=np.random.default_rng(cfg.trades.seed))
    for line in report.summary_lines():
        print(line)
    ok &= report.passed
    return 0 if ok else 2


def _cell_dir(out_dir, i, j):
    return os.path.join(out_dir, f"cell-{i:02d}-{j:02d}")


def _sweep_cell(text, gamma, delta, max_iter, cell_dir, oracle_x):
    """One grid cell: isolated deterministic run, own trace file."""
    cfg = parse_config(text)
    trades = TradesConfig(gamma=gamma, delta=delta,
                          stop_tol=cfg.trades.stop_tol, max_iter=max_iter,
                          trace_stride=cfg.trades.trace_stride,
                          seed=cfg.trades.seed)
    graph = build_graph(cfg)
    game, _ = assemble_game(cfg)
    diverged = False
    report = None
    with np.errstate(over="ignore", invalid="ignore"):
        try:
            _, trace, report = run(game, graph, trades, oracle=oracle_x,
                                   tracker_mode=cfg.tracker)
        except NonFiniteDetected as exc:
            diverged = True
            trace = exc.trace
    os.makedirs(cell_dir, exist_ok=True)
    if trace is not None:
        _write_atomic(os.path.join(cell_dir, "trace.csv"), trace.csv_text())
    converged = (not diverged) and report.stop_reason == "stop_tol"
    a2 = float("nan")
    if report is not None and report.a2 is not None:
        a2 = report.a2
    iters = -1
    if trace is not None and len(trace) > 0:
        with np.errstate(invalid="ignore"):
            hits = np.nonzero(trace.err_x <= ERR_TARGET_SWEEP)[0]
        if hits.size:
            iters = int(trace.t[hits[0]])
    return gamma, delta, converged, a2, iters


def cmd_sweep(cfg):
    if cfg.sweep is None:
        raise ConfigError("sweep requires a [sweep] section")
    graph = build_graph(cfg)  # fail early on graph problems
    game, _ = assemble_game(cfg)
    del graph
    # two of the three per-cell metrics are errors to the equilibrium,
    # so the reference solve is not optional here
    oracle_x = solve_ne_oracle(game).stacked
    text = canonical_text(cfg)
    cells = [(i, j, g, d)
             for i, g in enumerate(cfg.sweep.gammas)
             for j, d in enumerate(cfg.sweep.deltas)]
    out_dir = cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    _write_atomic(os.path.join(out_dir, "config.echo"), text)

    workers = min(len(cells), os.cpu_count() or 1)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_sweep_cell, text, g, d, cfg.sweep.max_iter,
                               _cell_dir(out_dir, i, j), oracle_x)
                   for i, j, g, d in cells]
        rows = [f.result() for f in futures]

    lines = ["gamma,delta,converged,a2,iters"]
    for gamma, delta, converged, a2, iters in rows:
        lines.append(f"{float(gamma)!r},{float(delta)!r},"
                     f"{1 if converged else 0},{float(a2)!r},{iters}")
    _write_atomic(os.path.join(out_dir, "summary.csv"),
                  "\n".join(lines) + "\n")
    n_conv = sum(1 for row in rows if row[2])
    print(f"swept {len(rows)} cells, {n_conv} converged; "
          f"summary in {os.path.join(out_dir, 'summary.csv')}")
    return 0


# --------------------------------------------------------------- argparse


class _Parser(argparse.ArgumentParser):
    """Usage problems exit 1; code 2 is reserved for divergence."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser():
    parser = _Parser(prog="trades",
                     description="Distributed equilibrium-seeking experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("run", "iterate one configured experiment"),
            ("validate", "structural checks without iterating"),
            ("sweep", "grid of stepsize pairs"),
            ("case-study", "voltage scenario with data provenance")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="experiment config file")
        p.add_argument("--out", help="output directory override")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--oracle", choices=("on", "off"),
                       help="toggle the reference equilibrium solve")
    return parser


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {"run": cmd_run, "validate": cmd_validate,
                "sweep": cmd_sweep, "case-study": cmd_case_study}
    try:
        out = args.out if args.out is not None \
            else os.environ.get("TRADES_OUTPUT_DIR")
        cfg = load_config(args.config, seed=args.seed, output_dir=out,
                          oracle=args.oracle)
        return handlers[args.command](cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TradesError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
