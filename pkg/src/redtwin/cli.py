"""Command-line entry point: reproducible experiments with CSV artifacts.

Every subcommand writes a run manifest into the output directory before
any computation, derives all randomness from the single ``--seed`` flag
via labelled stream splitting, and never mutates its inputs.

Exit codes: 0 success, 2 digest mismatch, 3 invalid configuration,
4 budget exceeded, 5 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .learners import (
    EpsilonSchedule,
    LearnerConfig,
    evaluate,
    load_policy,
    make_learner,
    save_policy,
    train,
    write_metrics_csv,
)
from .emulator import EmuEnv
from .oracle import NodeBudgetExceeded, enumerate_states, value_iteration
from .orchestrator import (
    LoopConfig,
    run_emulator_only,
    run_unified,
    write_baseline_report_csv,
)
from .scenario import Scenario, ScenarioParseError, builtin_default, parse_scenario
from .seeding import derive_seed
from .simgen import (
    BuildError,
    build,
    export_unknown_histogram,
    load_mdp,
    save_mdp,
    sim_reset,
    sufficiency_report,
    UnknownTransitionLedger,
)
from .traces import DigestMismatchError, TraceError, TraceHeader, load, open_writer, stats

EXIT_OK = 0
EXIT_DIGEST = 2
EXIT_CONFIG = 3
EXIT_BUDGET = 4
EXIT_IO = 5


class CliError(Exception):
    def __init__(self, exit_code: int, message: str):
        super().__init__(message)
        self.exit_code = exit_code


def _load_scenario(path: str | None) -> tuple[Scenario, str]:
    if path is None:
        return builtin_default(), "<builtin>"
    try:
        text = Path(path).read_text("utf-8")
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read scenario: {exc}") from None
    try:
        return parse_scenario(text), path
    except ScenarioParseError as exc:
        raise CliError(EXIT_CONFIG, f"invalid scenario: {exc.errors[0]}") from None


def _outdir(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot create output directory: {exc}") from None
    return out


def _write_manifest(
    out: Path, args: argparse.Namespace, scenario_digest: str | None, scenario_path: str | None
) -> None:
    config = {
        k: v for k, v in sorted(vars(args).items()) if k not in {"func"} and v is not None
    }
    manifest = {
        "subcommand": args.subcommand,
        "scenario_path": scenario_path,
        "scenario_digest": scenario_digest,
        "seed": getattr(args, "seed", None),
        "config": config,
        "out": str(out),
        "tool_version": __version__,
    }
    try:
        (out / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", "utf-8"
        )
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write manifest: {exc}") from None


def _learner_config(args: argparse.Namespace) -> LearnerConfig:
    try:
        return LearnerConfig(
            alpha=args.alpha,
            gamma=args.gamma,
            epsilon=EpsilonSchedule(
                start=args.epsilon_start,
                end=args.epsilon_end,
                decay_steps=args.epsilon_decay_steps,
            ),
            atoms=args.atoms,
            v_min=args.vmin,
            v_max=args.vmax,
            budget_episodes=args.budget_episodes,
            budget_steps=args.budget_steps,
            eval_every_episodes=args.eval_every,
            eval_runs=args.eval_runs,
        )
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"invalid config: {exc}") from None


def _add_learner_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--learner", default="q", help="learner name: q or c51")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--gamma", type=float, default=0.99)
    p.add_argument("--epsilon-start", type=float, default=1.0)
    p.add_argument("--epsilon-end", type=float, default=0.05)
    p.add_argument("--epsilon-decay-steps", type=int, default=20_000)
    p.add_argument("--atoms", type=int, default=51)
    p.add_argument("--vmin", type=float, default=-160.0)
    p.add_argument("--vmax", type=float, default=100.0)
    p.add_argument("--budget-episodes", type=int, default=None)
    p.add_argument("--budget-steps", type=int, default=None)
    p.add_argument("--eval-every", type=int, default=None, help="episodes between greedy evaluations")
    p.add_argument("--eval-runs", type=int, default=20)


# ---------------------------------------------------------------------------
# subcommands


def cmd_oracle(args: argparse.Namespace) -> int:
    scenario, path = _load_scenario(args.scenario)
    out = _outdir(args)
    _write_manifest(out, args, scenario.digest, path)
    try:
        graph = enumerate_states(scenario, cap=args.node_budget)
    except NodeBudgetExceeded as exc:
        raise CliError(EXIT_BUDGET, str(exc)) from None
    result = value_iteration(graph, scenario.game)
    print(f"optimal_expected_return={result.optimal_expected_return!r}")
    print(f"min_expected_steps={result.min_expected_steps!r}")
    print(f"nodes={result.node_count} edges={result.edge_count}")
    with (out / "oracle.csv").open("w", encoding="utf-8", newline="") as fh:
        fh.write("optimal_expected_return,min_expected_steps,nodes,edges\n")
        fh.write(
            f"{result.optimal_expected_return!r},{result.min_expected_steps!r},"
            f"{result.node_count},{result.edge_count}\n"
        )
    return EXIT_OK


def cmd_emu_train(args: argparse.Namespace) -> int:
    scenario, path = _load_scenario(args.scenario)
    out = _outdir(args)
    _write_manifest(out, args, scenario.digest, path)
    cfg = _learner_config(args)
    if cfg.budget_episodes is None and cfg.budget_steps is None:
        raise CliError(EXIT_CONFIG, "invalid config: set --budget-episodes or --budget-steps")
    try:
        learner = make_learner(args.learner, cfg)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"invalid config: {exc}") from None
    env = EmuEnv(scenario, derive_seed(args.seed, "emu"))
    trace_path = out / "trace.cgt"
    with open_writer(trace_path, TraceHeader(scenario.digest, args.seed, "emu-train")) as writer:
        result = train(
            env, learner, cfg, seed=derive_seed(args.seed, "learner"), trace_writer=writer
        )
    write_metrics_csv(result.metrics, out / "metrics.csv")
    save_policy(learner, out / "policy.jsonl")
    print(
        f"episodes={result.episodes} steps={result.steps} "
        f"virtual_time_s={env.virtual_time_s!r} trace={trace_path}"
    )
    return EXIT_OK


def cmd_simgen(args: argparse.Namespace) -> int:
    out = _outdir(args)
    digest = None
    scenario_path = None
    if args.scenario:
        scenario, scenario_path = _load_scenario(args.scenario)
        digest = scenario.digest
    _write_manifest(out, args, digest, scenario_path)
    try:
        idx = load(args.trace)
    except DigestMismatchError as exc:
        raise CliError(EXIT_DIGEST, str(exc)) from None
    except TraceError as exc:
        raise CliError(EXIT_IO, str(exc)) from None
    except OSError as exc:
        raise CliError(EXIT_IO, str(exc)) from None
    if digest is not None and idx.scenario_digest != digest:
        raise CliError(
            EXIT_DIGEST,
            f"trace digest {idx.scenario_digest} does not match scenario digest {digest}",
        )
    try:
        mdp = build(idx)
    except BuildError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    sim_path = out / "simulator.cgs"
    save_mdp(mdp, sim_path)
    report = sufficiency_report(mdp, UnknownTransitionLedger())
    with (out / "sufficiency.csv").open("w", encoding="utf-8", newline="") as fh:
        fh.write(
            "distinct_observations,distinct_pairs,total_transitions,"
            "unknown_pairs,unknown_events,eval_mean_return\n"
        )
        cov = report.coverage
        fh.write(
            f"{cov.distinct_observations},{cov.distinct_pairs},{cov.total_transitions},"
            f"{report.unknown_pairs},{report.unknown_events},\n"
        )
    export_unknown_histogram(UnknownTransitionLedger(), out / "unknown_histogram.csv")
    s = stats(idx)
    print(
        f"pairs={mdp.pair_count()} observations={s.distinct_observations} "
        f"transitions={s.total_transitions} simulator={sim_path}"
    )
    return EXIT_OK


def cmd_sim_train(args: argparse.Namespace) -> int:
    scenario, path = _load_scenario(args.scenario)
    out = _outdir(args)
    _write_manifest(out, args, scenario.digest, path)
    try:
        mdp = load_mdp(args.cgs)
    except TraceError as exc:
        raise CliError(EXIT_IO, str(exc)) from None
    except OSError as exc:
        raise CliError(EXIT_IO, str(exc)) from None
    if mdp.scenario_digest != scenario.digest:
        raise CliError(
            EXIT_DIGEST,
            f"simulator digest {mdp.scenario_digest} does not match scenario digest {scenario.digest}",
        )
    cfg = _learner_config(args)
    if cfg.budget_episodes is None and cfg.budget_steps is None:
        raise CliError(EXIT_CONFIG, "invalid config: set --budget-episodes or --budget-steps")
    try:
        learner = make_learner(args.learner, cfg)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"invalid config: {exc}") from None
    env, _ = sim_reset(mdp, scenario.game, derive_seed(args.seed, "sim"))
    result = train(env, learner, cfg, seed=derive_seed(args.seed, "learner"))
    write_metrics_csv(result.metrics, out / "metrics.csv")
    save_policy(learner, out / "policy.jsonl")
    export_unknown_histogram(env.ledger, out / "unknown_histogram.csv")
    print(
        f"episodes={result.episodes} steps={result.steps} "
        f"unknown_events={env.unknown_events} sim_virtual_time_s={env.virtual_time_s!r}"
    )
    return EXIT_OK


def cmd_cross_train(args: argparse.Namespace) -> int:
    scenario, path = _load_scenario(args.scenario)
    out = _outdir(args)
    _write_manifest(out, args, scenario.digest, path)
    emu_cfg = LearnerConfig(
        alpha=args.alpha,
        gamma=args.gamma,
        epsilon=EpsilonSchedule(args.epsilon_start, args.epsilon_end, args.epsilon_decay_steps),
    )
    sim_cfg = LearnerConfig(
        alpha=args.sim_alpha,
        gamma=args.gamma,
        epsilon=EpsilonSchedule(args.epsilon_start, args.epsilon_end, args.sim_epsilon_decay_steps),
        atoms=args.atoms,
        v_min=args.vmin,
        v_max=args.vmax,
    )
    try:
        cfg = LoopConfig(
            r_t=args.rt,
            delta_r_t=args.delta_rt,
            regen_every_k=args.regen_k,
            window=args.window,
            plateau_patience=args.plateau_patience,
            seg1_learner=args.seg1_learner,
            seg3_learner=args.seg3_learner,
            emu_learner_cfg=emu_cfg,
            sim_learner_cfg=sim_cfg,
            seg1_max_episodes=args.seg1_max_episodes,
            seg3_max_episodes=args.seg3_max_episodes,
            gate_eval_runs=args.eval_runs,
            max_loop_iterations=args.max_iterations,
            parallel=args.parallel,
        )
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"invalid config: {exc}") from None
    report = run_unified(scenario, cfg, args.seed, workdir=out)
    mean = report.final_eval.mean_return if report.final_eval else None
    print(
        f"completed={report.completed} iterations={report.loop_iterations} "
        f"emulator_virtual_s={report.total_emulator_virtual_s!r} "
        f"emulator_steps={report.total_emulator_steps} final_eval_mean={mean!r}"
    )
    if not report.completed:
        raise CliError(EXIT_BUDGET, "loop budget exhausted before reaching r_t")
    return EXIT_OK


def cmd_emu_only(args: argparse.Namespace) -> int:
    scenario, path = _load_scenario(args.scenario)
    out = _outdir(args)
    _write_manifest(out, args, scenario.digest, path)
    cfg = LearnerConfig(
        alpha=args.alpha,
        gamma=args.gamma,
        epsilon=EpsilonSchedule(args.epsilon_start, args.epsilon_end, args.epsilon_decay_steps),
    )
    report = run_emulator_only(
        scenario,
        args.learner,
        cfg,
        args.seed,
        r_t=args.rt,
        max_episodes=args.budget_episodes,
        eval_every=args.eval_every or 10,
        eval_runs=args.eval_runs,
        workdir=out,
    )
    write_baseline_report_csv(report, out / "baseline_report.csv")
    print(
        f"reached={report.reached} emulator_virtual_s={report.emulator_virtual_s!r} "
        f"episodes={report.episodes}"
    )
    if not report.reached:
        raise CliError(EXIT_BUDGET, "episode budget exhausted before reaching r_t")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    out = _outdir(args)
    scenario, path = _load_scenario(args.scenario)
    _write_manifest(out, args, scenario.digest, path)
    try:
        learner = load_policy(args.policy)
    except (OSError, ValueError) as exc:
        raise CliError(EXIT_IO, f"cannot load policy: {exc}") from None
    if args.cgs is not None:
        try:
            mdp = load_mdp(args.cgs)
        except (TraceError, OSError) as exc:
            raise CliError(EXIT_IO, str(exc)) from None
        if mdp.scenario_digest != scenario.digest:
            raise CliError(EXIT_DIGEST, "simulator digest does not match scenario digest")
        env, _ = sim_reset(mdp, scenario.game, derive_seed(args.seed, "eval"))
    else:
        env = EmuEnv(scenario, derive_seed(args.seed, "eval"))
    result = evaluate(env, learner, args.eval_runs)
    with (out / "eval.csv").open("w", encoding="utf-8", newline="") as fh:
        fh.write("run,episode_return,episode_length\n")
        for i, (ret, length) in enumerate(zip(result.returns, result.lengths)):
            fh.write(f"{i},{ret!r},{length}\n")
        fh.write(f"mean,{result.mean_return!r},{result.mean_length!r}\n")
    print(f"runs={args.eval_runs} mean_return={result.mean_return!r}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="redtwin",
        description="Red-agent training range: emulator, generated simulator, cross-training.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("oracle", help="solve a scenario by brute force")
    p.add_argument("--scenario", default=None, help="scenario JSON (default: builtin)")
    p.add_argument("--out", required=True)
    p.add_argument("--node-budget", type=int, default=200_000)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("emu-train", help="train in the emulator, logging a trace")
    p.add_argument("--scenario", default=None)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    _add_learner_flags(p)
    p.set_defaults(func=cmd_emu_train)

    p = sub.add_parser("simgen", help="build a simulator from trace logs")
    p.add_argument("--trace", nargs="+", required=True, help="one or more .cgt logs")
    p.add_argument("--scenario", default=None, help="optional digest cross-check")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simgen)

    p = sub.add_parser("sim-train", help="train in a generated simulator")
    p.add_argument("--cgs", required=True)
    p.add_argument("--scenario", default=None, help="scenario for game rules (default: builtin)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    _add_learner_flags(p)
    p.set_defaults(func=cmd_sim_train)

    p = sub.add_parser("cross-train", help="run the unified cross-training loop")
    p.add_argument("--scenario", default=None)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rt", type=float, required=True, help="required return gate")
    p.add_argument("--delta-rt", type=float, default=None)
    p.add_argument("--regen-k", type=int, default=4)
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--plateau-patience", type=int, default=3)
    p.add_argument("--seg1-learner", default="q")
    p.add_argument("--seg3-learner", default="c51")
    p.add_argument("--seg1-max-episodes", type=int, default=600)
    p.add_argument("--seg3-max-episodes", type=int, default=2000)
    p.add_argument("--max-iterations", type=int, default=10)
    p.add_argument("--eval-runs", type=int, default=50)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--sim-alpha", type=float, default=0.1)
    p.add_argument("--gamma", type=float, default=0.99)
    p.add_argument("--epsilon-start", type=float, default=1.0)
    p.add_argument("--epsilon-end", type=float, default=0.05)
    p.add_argument("--epsilon-decay-steps", type=int, default=20_000)
    p.add_argument("--sim-epsilon-decay-steps", type=int, default=8_000)
    p.add_argument("--atoms", type=int, default=51)
    p.add_argument("--vmin", type=float, default=-160.0)
    p.add_argument("--vmax", type=float, default=100.0)
    p.add_argument("--parallel", action="store_true")
    p.set_defaults(func=cmd_cross_train)

    p = sub.add_parser("emu-only", help="emulator-only baseline to the same gate")
    p.add_argument("--scenario", default=None)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rt", type=float, required=True)
    p.add_argument("--learner", default="q")
    p.add_argument("--budget-episodes", type=int, required=True)
    p.add_argument("--eval-every", type=int, default=10)
    p.add_argument("--eval-runs", type=int, default=50)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--gamma", type=float, default=0.99)
    p.add_argument("--epsilon-start", type=float, default=1.0)
    p.add_argument("--epsilon-end", type=float, default=0.05)
    p.add_argument("--epsilon-decay-steps", type=int, default=20_000)
    p.set_defaults(func=cmd_emu_only)

    p = sub.add_parser("eval", help="evaluate a saved policy table")
    p.add_argument("--scenario", default=None)
    p.add_argument("--cgs", default=None)
    p.add_argument("--policy", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--eval-runs", type=int, default=50)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(
            json.dumps({"error": str(exc), "exit_code": exc.exit_code}),
            file=sys.stderr,
        )
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
