"""Command-line surface: simulate, sweep, oracle, inspect-qtable, report."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import load_config
from .evaluate import make_policy, simulate_long_run
from .harness import run_sweep, run_trial, write_outputs
from .learning import load_snapshot
from .oracle import average_reward, enumerate_chain, irreducible
from .plotting import render_report
from .scenario import build_scenario


def _cmd_simulate(args) -> int:
    config = load_config(args.config)
    if args.mode:
        config.experiment.mode = args.mode
    seeds = [args.seed_override] if args.seed_override is not None else config.experiment.seeds
    scenario = build_scenario(config.scenario)
    records = []
    artifacts = {}
    for seed in seeds:
        record, table, log = run_trial(config, seed, scenario=scenario)
        records.append(record)
        if table is not None:
            artifacts[f"seed{seed}_{record.policy}"] = (table, log)
        print(f"seed {seed} policy {record.policy}: rate={record.avg_rate_gbps:.3f} Gbit/s "
              f"handovers={record.handovers:.2f}/trip disconnection={record.disconn_prob:.3f}")
    if args.out:
        written = write_outputs(records, artifacts, args.out, scenario)
        print(f"wrote {len(written)} files to {args.out}")
    return 0


def _cmd_sweep(args) -> int:
    config = load_config(args.config)
    records, artifacts, scenario = run_sweep(config)
    written = write_outputs(records, artifacts, args.out, scenario)
    print(f"wrote {len(written)} files to {args.out}")
    if args.plots:
        figures = render_report(args.out)
        print(f"rendered {len(figures)} figures")
    return 0


def _cmd_oracle(args) -> int:
    config = load_config(args.config)
    scenario = build_scenario(config.scenario)
    if args.policy in ("parallel_ql", "ql"):
        if not args.qtable:
            print("a trained policy needs --qtable <snapshot>", file=sys.stderr)
            return 2
        table, _ = load_snapshot(args.qtable, scenario)
        policy = make_policy(args.policy, table=table)
    else:
        policy = make_policy(args.policy, seed=config.experiment.seeds[0])
    chain = enumerate_chain(scenario, policy)
    exact_vec = average_reward(chain)
    exact = float(np.mean(exact_vec))
    spread = float(np.max(exact_vec) - np.min(exact_vec))
    simulated = simulate_long_run(scenario, policy, args.epochs, config.experiment.seeds[0])
    rel = abs(simulated - exact) / exact if exact else float("nan")
    print(f"states enumerated: {len(chain.states)} (irreducible={irreducible(chain.transition)})")
    print(f"exact average reward:     {exact:.6f} Gbit/s (start-state spread {spread:.2e})")
    print(f"simulated ({args.epochs} epochs): {simulated:.6f} Gbit/s")
    print(f"relative error:           {rel:.4%}")
    return 0


def _cmd_inspect(args) -> int:
    path = Path(args.snapshot)
    meta = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key] = value
            elif not line.startswith("rssi_level,"):
                rows.append(line.split(","))
    for key in sorted(meta):
        print(f"{key}: {meta[key]}")
    print(f"nonzero cells: {len(rows)}")
    rows.sort(key=lambda r: -abs(float(r[7])))
    print("top cells (state -> action : value):")
    for r in rows[: args.top]:
        print(f"  l={r[0]} beam=({r[1]},{r[2]}) v={r[3]} d={r[4]} -> ({r[5]},{r[6]}) : {r[7]}")
    return 0


def _cmd_report(args) -> int:
    figures = render_report(args.out)
    if not figures:
        print("nothing to render (no metrics.csv or convergence files found)", file=sys.stderr)
        return 1
    for path in figures:
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="beamsim",
                                     description="mmWave vehicular beam-association simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the config's policy over its seeds")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seed-override", type=int, default=None)
    p.add_argument("--mode", choices=["event_serial", "concurrent"], default=None)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("sweep", help="comparison sweep over the config's sweep block")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--plots", action="store_true", help="also render figures")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("oracle", help="exact vs simulated average reward on a small instance")
    p.add_argument("--config", required=True)
    p.add_argument("--policy", required=True,
                   choices=["max_rate", "blockage_aware", "upper_bound", "random",
                            "parallel_ql", "ql"])
    p.add_argument("--epochs", type=int, default=1_000_000)
    p.add_argument("--qtable", default=None, help="snapshot for a trained policy")
    p.set_defaults(func=_cmd_oracle)

    p = sub.add_parser("inspect-qtable", help="print snapshot metadata and top cells")
    p.add_argument("snapshot")
    p.add_argument("--top", type=int, default=10)
    p.set_defaults(func=_cmd_inspect)

    p = sub.add_parser("report", help="render figures from an output directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
