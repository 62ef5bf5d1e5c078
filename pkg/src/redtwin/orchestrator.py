"""Unified cross-training loop.

Alternates between the ground-truth emulator and the generated twin
simulator: an initial emulator session runs until the training reward
jumps (representation learning), a simulator is built from everything
logged so far, a fresh agent trains in it until its evaluation reward
plateaus, the greedy policy transfers back to the emulator and is gated
against the required return, and short continued emulator sessions feed
periodic simulator regenerations until the gate passes. An
emulator-only baseline with identical accounting quantifies the saving.
"""

from __future__ import annotations

import dataclasses
import tempfile
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path

from .learners import (
    EpsilonSchedule,
    EvalResult,
    Learner,
    LearnerConfig,
    TrainResult,
    evaluate,
    make_learner,
    train,
    write_metrics_csv,
)
from .scenario import Scenario
from .seeding import derive_seed
from .simgen import EmpiricalMdp, build, save_mdp, sim_reset
from .traces import CountIndex, TraceHeader, load, open_writer
from .emulator import EmuEnv


@dataclass(frozen=True)
class LoopConfig:
    """Triggers, budgets, and per-segment learner assignment."""

    r_t: float
    delta_r_t: float | None = None
    regen_every_k: int = 4
    window: int = 10
    plateau_patience: int = 3
    seg1_learner: str = "q"
    seg3_learner: str = "c51"
    emu_learner_cfg: LearnerConfig = field(default_factory=LearnerConfig)
    sim_learner_cfg: LearnerConfig = field(default_factory=LearnerConfig)
    seg1_max_episodes: int = 600
    seg3_eval_every: int = 25
    seg3_eval_runs: int = 20
    seg3_max_episodes: int = 2000
    gate_eval_runs: int = 50
    seg5_epsilon_restart: float = 0.2
    seg5_epsilon_decay_steps: int = 2000
    max_loop_iterations: int = 10
    parallel: bool = False
    log_eval_episodes: bool = True

    def __post_init__(self) -> None:
        if self.regen_every_k < 1:
            raise ValueError("regen_every_k must be >= 1")
        if self.plateau_patience < 1:
            raise ValueError("plateau_patience must be >= 1")
        if self.delta_r_t is not None and self.delta_r_t <= 0:
            raise ValueError("delta_r_t must be positive")


@dataclass(frozen=True)
class SegmentRecord:
    segment: str
    env: str  # "emu" | "sim"
    learner: str
    elapsed_virtual_s: float
    avg_reward: float | None
    best_episode_len: int | None
    eval_reward: float | None


@dataclass
class UnifiedReport:
    records: list[SegmentRecord]
    total_emulator_virtual_s: float
    total_emulator_steps: int
    completed: bool
    final_eval: EvalResult | None
    r_t: float
    loop_iterations: int

    def emulator_time_identity_holds(self) -> bool:
        tracked = sum(r.elapsed_virtual_s for r in self.records if r.env == "emu")
        return abs(tracked - self.total_emulator_virtual_s) < 1e-6


@dataclass
class BaselineReport:
    reached: bool
    emulator_virtual_s: float
    emulator_steps: int
    episodes: int
    eval_means: list[float]
    final_eval: EvalResult | None
    r_t: float


def _mean(values: list[float]) -> float:
    return sum(values) / len(values) if values else 0.0


def seg1_trigger(history: list[float], cfg: LoopConfig) -> bool:
    """True when the moving W-episode mean has improved over the first
    W episodes' mean by more than the configured jump."""
    w = cfg.window
    if len(history) < 2 * w:
        return False
    first = _mean(history[:w])
    current = _mean(history[-w:])
    delta = cfg.delta_r_t if cfg.delta_r_t is not None else 0.5 * abs(first)
    return current - first > delta


def seg3_plateau(eval_history: list[float], cfg: LoopConfig) -> bool:
    """True when no new best evaluation mean has appeared for
    plateau_patience consecutive evaluations."""
    if not eval_history:
        return False
    best = max(eval_history)
    best_idx = eval_history.index(best)
    return len(eval_history) - 1 - best_idx >= cfg.plateau_patience


def _segment_row(
    segment: str,
    env_kind: str,
    learner_name: str,
    elapsed: float,
    result: TrainResult | None = None,
    eval_reward: float | None = None,
) -> SegmentRecord:
    avg_reward = None
    best_len = None
    if result is not None and result.episode_returns:
        avg_reward = _mean(result.episode_returns[-10:])
        best_len = min(result.episode_lengths)
    return SegmentRecord(
        segment=segment,
        env=env_kind,
        learner=learner_name,
        elapsed_virtual_s=elapsed,
        avg_reward=avg_reward,
        best_episode_len=best_len,
        eval_reward=eval_reward,
    )


def _train_seg3(
    mdp: EmpiricalMdp,
    scenario: Scenario,
    cfg: LoopConfig,
    seed: int,
    iteration: int,
) -> tuple[Learner, TrainResult | None, list[float], float]:
    """Fresh learner trained in the simulator until its evaluation reward
    plateaus (or the episode budget runs out)."""
    learner = make_learner(cfg.seg3_learner, cfg.sim_learner_cfg)
    assert learner.entry_count() == 0, "SEG3 learner must start empty"
    env, _ = sim_reset(mdp, scenario.game, derive_seed(seed, f"seg3.env.{iteration}"))
    eval_history: list[float] = []
    chunks = 0
    merged: TrainResult | None = None
    chunk_cfg = replace(cfg.sim_learner_cfg, budget_episodes=cfg.seg3_eval_every,
                        eval_every_episodes=None)
    episodes = 0
    steps = 0
    while episodes < cfg.seg3_max_episodes:
        result = train(
            env,
            learner,
            chunk_cfg,
            seed=derive_seed(seed, f"seg3.select.{iteration}.{chunks}"),
            step_offset=steps,
        )
        episodes += result.episodes
        steps += result.steps
        if merged is None:
            merged = result
        else:
            merged.episode_returns.extend(result.episode_returns)
            merged.episode_lengths.extend(result.episode_lengths)
            merged.metrics.extend(result.metrics)
        ev = evaluate(env, learner, cfg.seg3_eval_runs)
        eval_history.append(ev.mean_return)
        chunks += 1
        if seg3_plateau(eval_history, cfg):
            break
    return learner, merged, eval_history, env.virtual_time_s


def run_unified(
    scenario: Scenario,
    cfg: LoopConfig,
    seed: int,
    workdir: str | Path | None = None,
) -> UnifiedReport:
    """Execute the full loop; returns a report whether or not the gate
    was reached (completed=False when max_loop_iterations runs out)."""
    if workdir is None:
        with tempfile.TemporaryDirectory(prefix="redtwin-") as tmp:
            return run_unified(scenario, cfg, seed, tmp)
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    digest = scenario.digest

    records: list[SegmentRecord] = []
    emu = EmuEnv(scenario, derive_seed(seed, "emu"))
    trace_paths: list[Path] = []
    episode_counter = 0

    def emu_writer(name: str, created_by: str):
        path = workdir / name
        trace_paths.append(path)
        return open_writer(path, TraceHeader(digest, seed, created_by))

    # SEG1: representation learning in the emulator until the reward jump
    seg1_learner = make_learner(cfg.seg1_learner, cfg.emu_learner_cfg)
    seg1_cfg = replace(
        cfg.emu_learner_cfg,
        budget_episodes=cfg.seg1_max_episodes,
        eval_every_episodes=None,
        metrics_window=cfg.window,
    )
    t0 = emu.virtual_time_s
    with emu_writer("seg1.cgt", "seg1-train") as writer:
        seg1 = train(
            emu,
            seg1_learner,
            seg1_cfg,
            seed=derive_seed(seed, "seg1.select"),
            trace_writer=writer,
            stop_when=lambda history: seg1_trigger(history, cfg),
        )
    episode_counter += seg1.episodes
    write_metrics_csv(seg1.metrics, workdir / "seg1_metrics.csv")
    records.append(_segment_row("SEG1", "emu", cfg.seg1_learner, emu.virtual_time_s - t0, seg1))

    completed = False
    final_eval: EvalResult | None = None
    collector = seg1_learner
    prev_index: CountIndex | None = None
    iteration = 0

    while iteration < cfg.max_loop_iterations and not completed:
        iteration += 1

        # SEG2 (first pass) / SEG6 (later): merge logs, regenerate
        index = load(trace_paths)
        if prev_index is not None:
            assert index.dominates(prev_index), "count index must grow monotonically"
        prev_index = index
        mdp = build(index, n_actions=len(scenario.actions))
        save_mdp(mdp, workdir / f"sim_iter{iteration}.cgs")
        records.append(
            _segment_row("SEG2" if iteration == 1 else "SEG6", "sim", "-", 0.0)
        )

        # SEG5 collector: continued emulator training. In parallel mode it
        # overlaps SEG3 using the model transferred at the previous gate;
        # sequentially it runs after the gate below. Either way it only
        # exchanges frozen tables and closed log files with the sim side.
        seg5_cfg = replace(
            cfg.emu_learner_cfg,
            budget_episodes=cfg.regen_every_k,
            eval_every_episodes=None,
            epsilon=EpsilonSchedule(
                start=cfg.seg5_epsilon_restart,
                end=cfg.emu_learner_cfg.epsilon.end,
                decay_steps=cfg.seg5_epsilon_decay_steps,
            ),
            metrics_window=cfg.window,
        )

        def run_seg5(model: Learner, tag: int) -> TrainResult:
            t = emu.virtual_time_s
            with emu_writer(f"seg5_iter{tag}.cgt", "seg5-train") as writer:
                result = train(
                    emu,
                    model,
                    seg5_cfg,
                    seed=derive_seed(seed, f"seg5.select.{tag}"),
                    trace_writer=writer,
                    episode_offset=0,
                )
            write_metrics_csv(result.metrics, workdir / f"seg5_iter{tag}_metrics.csv")
            records.append(
                _segment_row("SEG5", "emu", model.name, emu.virtual_time_s - t, result)
            )
            return result

        seg5_box: dict[str, TrainResult] = {}
        seg5_thread = None
        if cfg.parallel:
            model = collector
            seg5_thread = threading.Thread(
                target=lambda: seg5_box.update(r=run_seg5(model, iteration)),
                daemon=True,
            )
            seg5_thread.start()

        # SEG3: fresh agent in the simulator until the eval plateau
        seg3_learner, seg3_result, seg3_evals, sim_time = _train_seg3(
            mdp, scenario, cfg, seed, iteration
        )
        if seg3_result is not None:
            write_metrics_csv(
                seg3_result.metrics, workdir / f"seg3_iter{iteration}_metrics.csv"
            )
        records.append(
            _segment_row(
                "SEG3",
                "sim",
                cfg.seg3_learner,
                sim_time,
                seg3_result,
                eval_reward=seg3_evals[-1] if seg3_evals else None,
            )
        )

        if seg5_thread is not None:
            seg5_thread.join()

        # SEG4: transfer the greedy policy into the emulator and gate it
        t4 = emu.virtual_time_s
        gate_writer = None
        if cfg.log_eval_episodes:
            gate_writer = emu_writer(f"seg4_eval_iter{iteration}.cgt", "seg4-eval")
        try:
            gate = evaluate(
                emu,
                seg3_learner,
                cfg.gate_eval_runs,
                trace_writer=gate_writer,
            )
        finally:
            if gate_writer is not None:
                gate_writer.close()
        records.append(
            _segment_row(
                "SEG4", "emu", cfg.seg3_learner, emu.virtual_time_s - t4,
                eval_reward=gate.mean_return,
            )
        )
        final_eval = gate
        if gate.mean_return >= cfg.r_t:
            completed = True
            break

        # transferred model continues in the emulator
        collector = seg3_learner
        if not cfg.parallel:
            run_seg5(collector, iteration)

    report = UnifiedReport(
        records=records,
        total_emulator_virtual_s=emu.virtual_time_s,
        total_emulator_steps=emu.total_steps,
        completed=completed,
        final_eval=final_eval,
        r_t=cfg.r_t,
        loop_iterations=iteration,
    )
    assert report.emulator_time_identity_holds(), "emulator time accounting drifted"
    write_unified_report_csv(report, workdir / "unified_report.csv")
    return report


def run_emulator_only(
    scenario: Scenario,
    learner_name: str,
    learner_cfg: LearnerConfig,
    seed: int,
    r_t: float,
    max_episodes: int,
    eval_every: int = 10,
    eval_runs: int = 50,
    workdir: str | Path | None = None,
) -> BaselineReport:
    """Plain emulator training with identical accounting, stopping at the
    same required-return gate (or the episode budget)."""
    emu = EmuEnv(scenario, derive_seed(seed, "emu"))
    learner = make_learner(learner_name, learner_cfg)
    eval_means: list[float] = []
    final_eval: EvalResult | None = None
    reached = False
    episodes = 0
    steps = 0
    chunk_cfg = replace(learner_cfg, budget_episodes=eval_every, eval_every_episodes=None)
    chunk = 0
    while episodes < max_episodes:
        budget = min(eval_every, max_episodes - episodes)
        result = train(
            emu,
            learner,
            replace(chunk_cfg, budget_episodes=budget),
            seed=derive_seed(seed, f"baseline.select.{chunk}"),
            step_offset=steps,
        )
        episodes += result.episodes
        steps += result.steps
        chunk += 1
        final_eval = evaluate(emu, learner, eval_runs)
        eval_means.append(final_eval.mean_return)
        if final_eval.mean_return >= r_t:
            reached = True
            break
    report = BaselineReport(
        reached=reached,
        emulator_virtual_s=emu.virtual_time_s,
        emulator_steps=emu.total_steps,
        episodes=episodes,
        eval_means=eval_means,
        final_eval=final_eval,
        r_t=r_t,
    )
    if workdir is not None:
        write_baseline_report_csv(report, Path(workdir) / "baseline_report.csv")
    return report


# ---------------------------------------------------------------------------
# CSV output


REPORT_COLUMNS = (
    "segment",
    "env",
    "learner",
    "elapsed_virtual_s",
    "avg_reward",
    "best_episode_len",
    "eval_reward",
)


def _fmt(value: float | int | None) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_unified_report_csv(report: UnifiedReport, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(REPORT_COLUMNS) + "\n")
        for r in report.records:
            fh.write(
                ",".join(
                    (
                        r.segment,
                        r.env,
                        r.learner,
                        _fmt(r.elapsed_virtual_s),
                        _fmt(r.avg_reward),
                        _fmt(r.best_episode_len),
                        _fmt(r.eval_reward),
                    )
                )
                + "\n"
            )
        final_mean = report.final_eval.mean_return if report.final_eval else None
        fh.write(
            "# total_emulator_virtual_s={} total_emulator_steps={} completed={} "
            "final_eval_mean={} r_t={} loop_iterations={}\n".format(
                _fmt(report.total_emulator_virtual_s),
                report.total_emulator_steps,
                report.completed,
                _fmt(final_mean),
                _fmt(report.r_t),
                report.loop_iterations,
            )
        )


def write_baseline_report_csv(report: BaselineReport, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write("eval_index,eval_mean\n")
        for i, mean in enumerate(report.eval_means):
            fh.write(f"{i},{_fmt(mean)}\n")
        fh.write(
            "# reached={} emulator_virtual_s={} emulator_steps={} episodes={} r_t={}\n".format(
                report.reached,
                _fmt(report.emulator_virtual_s),
                report.emulator_steps,
                report.episodes,
                _fmt(report.r_t),
            )
        )


def report_to_rows(report: UnifiedReport) -> list[dict]:
    return [dataclasses.asdict(r) for r in report.records]
