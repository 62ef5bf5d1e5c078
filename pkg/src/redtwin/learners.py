"""Desk-scale reinforcement learners and their training drivers.

Two table-backed agents cover the algorithm roles the training loop
needs: a sample-efficient off-policy Q-learner and a categorical
distributional learner (fixed support, linear-interpolation projection).
Both are environment-agnostic: they consume the shared reset/step
contract and behave identically on any source producing the same
transition stream. The fast on-policy slot is a pluggable registry
entry; register a factory under a new name to fill it.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Protocol

import numpy as np

from .facts import Observation
from .traces import TraceWriter, TransitionRecord


@dataclass(frozen=True)
class EpsilonSchedule:
    start: float = 1.0
    end: float = 0.05
    decay_steps: int = 20_000

    def value(self, step: int) -> float:
        if self.decay_steps <= 0:
            return self.end
        frac = min(1.0, step / self.decay_steps)
        return self.start + (self.end - self.start) * frac


@dataclass(frozen=True)
class LearnerConfig:
    """Hyperparameters and run budgets (none of these are dictated by
    the environment; defaults are tuned for the shipped scenario)."""

    alpha: float = 0.1
    gamma: float = 0.99
    epsilon: EpsilonSchedule = EpsilonSchedule()
    atoms: int = 51
    v_min: float = -160.0
    v_max: float = 100.0
    budget_episodes: int | None = None
    budget_steps: int | None = None
    eval_every_episodes: int | None = None
    eval_runs: int = 20
    metrics_window: int = 10

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must be in (0, 1]")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        for eps in (self.epsilon.start, self.epsilon.end):
            if not 0.0 <= eps <= 1.0:
                raise ValueError("epsilon must stay in [0, 1]")
        if self.atoms < 2:
            raise ValueError("atoms must be >= 2")
        if not self.v_min < self.v_max:
            raise ValueError("v_min must be < v_max")


# ---------------------------------------------------------------------------
# tables


@dataclass
class QTable:
    """Expected-return estimates; unseen pairs default to 0."""

    values: dict[tuple[str, int], float] = field(default_factory=dict)

    def get(self, o_key: str, action_id: int) -> float:
        return self.values.get((o_key, action_id), 0.0)

    def set(self, o_key: str, action_id: int, value: float) -> None:
        self.values[(o_key, action_id)] = value

    def action_values(self, o_key: str, n_actions: int) -> list[float]:
        return [self.get(o_key, a) for a in range(n_actions)]


@dataclass
class CategoricalTable:
    """Per-pair probability mass over a fixed evenly spaced support."""

    atoms: np.ndarray
    dists: dict[tuple[str, int], np.ndarray] = field(default_factory=dict)

    @classmethod
    def create(cls, n_atoms: int, v_min: float, v_max: float) -> CategoricalTable:
        return cls(atoms=np.linspace(v_min, v_max, n_atoms))

    def dist(self, o_key: str, action_id: int) -> np.ndarray:
        d = self.dists.get((o_key, action_id))
        if d is None:
            # unseen pairs start uniform over the support
            d = np.full(len(self.atoms), 1.0 / len(self.atoms))
        return d

    def mean(self, o_key: str, action_id: int) -> float:
        return float(np.dot(self.dist(o_key, action_id), self.atoms))

    def action_values(self, o_key: str, n_actions: int) -> list[float]:
        return [self.mean(o_key, a) for a in range(n_actions)]


def greedy_action(values: list[float]) -> int:
    """Argmax with ties broken by the lowest action id."""
    best = 0
    best_value = values[0]
    for a in range(1, len(values)):
        if values[a] > best_value:
            best, best_value = a, values[a]
    return best


def select_action(
    table: QTable | CategoricalTable,
    o_key: str,
    epsilon: float,
    rng: random.Random,
    n_actions: int,
) -> int:
    """Epsilon-greedy over the table's action-value estimates."""
    if epsilon > 0.0 and rng.random() < epsilon:
        return rng.randrange(n_actions)
    return greedy_action(table.action_values(o_key, n_actions))


# ---------------------------------------------------------------------------
# updates


@dataclass(frozen=True)
class Transition:
    o_key: str
    action_id: int
    reward: float
    o2_key: str
    done: bool


def q_update(table: QTable, transition: Transition, cfg: LearnerConfig, n_actions: int) -> None:
    """Q(o,a) += alpha * (r + gamma * max_a' Q(o',a') - Q(o,a))."""
    bootstrap = 0.0
    if not transition.done:
        bootstrap = max(table.action_values(transition.o2_key, n_actions))
    target = transition.reward + cfg.gamma * bootstrap
    old = table.get(transition.o_key, transition.action_id)
    table.set(transition.o_key, transition.action_id, old + cfg.alpha * (target - old))


def project_distribution(
    atoms: np.ndarray, values: np.ndarray, masses: np.ndarray
) -> np.ndarray:
    """Project point masses at `values` onto the fixed support by linear
    interpolation, clamping outside [v_min, v_max]."""
    n = len(atoms)
    v_min, v_max = float(atoms[0]), float(atoms[-1])
    delta = (v_max - v_min) / (n - 1)
    out = np.zeros(n)
    clipped = np.clip(values, v_min, v_max)
    b = (clipped - v_min) / delta
    lower = np.floor(b).astype(int)
    upper = np.ceil(b).astype(int)
    same = lower == upper
    np.add.at(out, lower[same], masses[same])
    np.add.at(out, lower[~same], masses[~same] * (upper[~same] - b[~same]))
    np.add.at(out, upper[~same], masses[~same] * (b[~same] - lower[~same]))
    return out


def c51_update(
    table: CategoricalTable, transition: Transition, cfg: LearnerConfig, n_actions: int
) -> None:
    """Distributional update: project r + gamma*z of the best next action
    (a point mass at r when done) onto the support, then move the stored
    distribution toward it by a convex step of size alpha."""
    atoms = table.atoms
    if transition.done:
        values = np.array([transition.reward])
        masses = np.array([1.0])
    else:
        next_action = greedy_action(table.action_values(transition.o2_key, n_actions))
        values = transition.reward + cfg.gamma * atoms
        masses = table.dist(transition.o2_key, next_action)
    target = project_distribution(atoms, values, masses)
    old = table.dist(transition.o_key, transition.action_id)
    table.dists[(transition.o_key, transition.action_id)] = (
        (1.0 - cfg.alpha) * old + cfg.alpha * target
    )


# ---------------------------------------------------------------------------
# learner facade


class Environment(Protocol):
    """Contract shared by the emulator and the generated simulator."""

    @property
    def action_count(self) -> int: ...
    @property
    def virtual_time_s(self) -> float: ...
    @property
    def episode_return(self) -> float: ...
    @property
    def unknown_events(self) -> int: ...
    def reset(self) -> Observation: ...
    def step(self, action_id: int): ...


class Learner:
    """Table + update rule behind one name; state lives in the table."""

    def __init__(self, name: str, table: QTable | CategoricalTable, cfg: LearnerConfig):
        self.name = name
        self.table = table
        self.cfg = cfg

    def select(self, o_key: str, epsilon: float, rng: random.Random, n_actions: int) -> int:
        return select_action(self.table, o_key, epsilon, rng, n_actions)

    def greedy(self, o_key: str, n_actions: int) -> int:
        return greedy_action(self.table.action_values(o_key, n_actions))

    def update(self, transition: Transition, n_actions: int) -> None:
        if isinstance(self.table, QTable):
            q_update(self.table, transition, self.cfg, n_actions)
        else:
            c51_update(self.table, transition, self.cfg, n_actions)

    def entry_count(self) -> int:
        if isinstance(self.table, QTable):
            return len(self.table.values)
        return len(self.table.dists)


def _make_q(cfg: LearnerConfig) -> Learner:
    return Learner("q", QTable(), cfg)


def _make_c51(cfg: LearnerConfig) -> Learner:
    return Learner("c51", CategoricalTable.create(cfg.atoms, cfg.v_min, cfg.v_max), cfg)


LEARNER_REGISTRY: dict[str, Callable[[LearnerConfig], Learner]] = {
    "q": _make_q,
    "c51": _make_c51,
}


def make_learner(name: str, cfg: LearnerConfig) -> Learner:
    try:
        factory = LEARNER_REGISTRY[name]
    except KeyError:
        raise ValueError(
            f"unknown learner {name!r} (registered: {sorted(LEARNER_REGISTRY)})"
        ) from None
    return factory(cfg)


# ---------------------------------------------------------------------------
# training / evaluation


@dataclass(frozen=True)
class MetricsRow:
    step: int
    episode: int
    avg_training_reward: float
    avg_episode_length: float
    avg_evaluation_reward: float | None
    unknown_transition_count: int
    virtual_time_s: float


METRICS_COLUMNS = (
    "step",
    "episode",
    "avg_training_reward",
    "avg_episode_length",
    "avg_evaluation_reward",
    "unknown_transition_count",
    "virtual_time_s",
)


def _fmt(value: float | int | None) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_metrics_csv(rows: Iterable[MetricsRow], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(METRICS_COLUMNS) + "\n")
        for r in rows:
            fh.write(
                ",".join(
                    (
                        str(r.step),
                        str(r.episode),
                        _fmt(r.avg_training_reward),
                        _fmt(r.avg_episode_length),
                        _fmt(r.avg_evaluation_reward),
                        str(r.unknown_transition_count),
                        _fmt(r.virtual_time_s),
                    )
                )
                + "\n"
            )


@dataclass(frozen=True)
class EvalResult:
    mean_return: float
    mean_length: float
    returns: tuple[float, ...]
    lengths: tuple[int, ...]


def evaluate(
    env: Environment,
    learner: Learner,
    n_runs: int,
    seed: int | None = None,
    trace_writer: TraceWriter | None = None,
    episode_offset: int = 0,
) -> EvalResult:
    """Greedy (epsilon=0) rollouts with fresh resets; no learning.

    Transitions are not logged unless a writer is passed explicitly.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    if seed is not None:
        env.reseed(seed)
    returns: list[float] = []
    lengths: list[int] = []
    for run in range(n_runs):
        obs = env.reset()
        done = False
        steps = 0
        while not done:
            action = learner.greedy(obs.key, env.action_count)
            outcome = env.step(action)
            if trace_writer is not None:
                trace_writer.append(
                    TransitionRecord(
                        episode=episode_offset + run,
                        step=steps,
                        o_key=obs.key,
                        action_id=action,
                        o2_key=outcome.observation.key,
                        reward=outcome.reward,
                        per_hand_executable=tuple(
                            h.executable for h in outcome.info.per_hand
                        ),
                        virtual_time_s=env.virtual_time_s,
                    )
                )
            obs = outcome.observation
            done = outcome.done
            steps += 1
        returns.append(env.episode_return)
        lengths.append(steps)
    return EvalResult(
        mean_return=sum(returns) / n_runs,
        mean_length=sum(lengths) / n_runs,
        returns=tuple(returns),
        lengths=tuple(lengths),
    )


@dataclass
class TrainResult:
    metrics: list[MetricsRow]
    episodes: int
    steps: int
    episode_returns: list[float]
    episode_lengths: list[int]
    eval_history: list[EvalResult]


def train(
    env: Environment,
    learner: Learner,
    cfg: LearnerConfig,
    seed: int = 0,
    trace_writer: TraceWriter | None = None,
    episode_offset: int = 0,
    step_offset: int = 0,
    stop_when: Callable[[list[float]], bool] | None = None,
) -> TrainResult:
    """Run episodes until the budget (or `stop_when`) is hit.

    Epsilon decays by global step; every transition goes to the trace
    writer when one is supplied; greedy evaluation interleaves at the
    configured cadence on the same handle, so on an emulator it advances
    the virtual clock exactly like the added evaluation episodes would.
    """
    rng = random.Random(seed)
    metrics: list[MetricsRow] = []
    episode_returns: list[float] = []
    episode_lengths: list[int] = []
    eval_history: list[EvalResult] = []
    window = max(1, cfg.metrics_window)
    global_step = step_offset
    episode = 0
    last_eval: EvalResult | None = None

    def budget_left() -> bool:
        if cfg.budget_episodes is not None and episode >= cfg.budget_episodes:
            return False
        if cfg.budget_steps is not None and global_step - step_offset >= cfg.budget_steps:
            return False
        return True

    while budget_left():
        obs = env.reset()
        done = False
        steps = 0
        while not done:
            epsilon = cfg.epsilon.value(global_step)
            action = learner.select(obs.key, epsilon, rng, env.action_count)
            outcome = env.step(action)
            transition = Transition(
                o_key=obs.key,
                action_id=action,
                reward=outcome.reward,
                o2_key=outcome.observation.key,
                done=outcome.done,
            )
            learner.update(transition, env.action_count)
            if trace_writer is not None:
                trace_writer.append(
                    TransitionRecord(
                        episode=episode_offset + episode,
                        step=steps,
                        o_key=transition.o_key,
                        action_id=action,
                        o2_key=transition.o2_key,
                        reward=outcome.reward,
                        per_hand_executable=tuple(
                            h.executable for h in outcome.info.per_hand
                        ),
                        virtual_time_s=env.virtual_time_s,
                    )
                )
            obs = outcome.observation
            done = outcome.done
            steps += 1
            global_step += 1
            if cfg.budget_steps is not None and global_step - step_offset >= cfg.budget_steps:
                done = True

        episode_returns.append(env.episode_return)
        episode_lengths.append(steps)
        episode += 1

        if (
            cfg.eval_every_episodes is not None
            and episode % cfg.eval_every_episodes == 0
        ):
            last_eval = evaluate(env, learner, cfg.eval_runs)
            eval_history.append(last_eval)

        metrics.append(
            MetricsRow(
                step=global_step,
                episode=episode_offset + episode,
                avg_training_reward=_mean(episode_returns[-window:]),
                avg_episode_length=_mean([float(x) for x in episode_lengths[-window:]]),
                avg_evaluation_reward=last_eval.mean_return if last_eval else None,
                unknown_transition_count=env.unknown_events,
                virtual_time_s=env.virtual_time_s,
            )
        )
        if stop_when is not None and stop_when(episode_returns):
            break

    return TrainResult(
        metrics=metrics,
        episodes=episode,
        steps=global_step - step_offset,
        episode_returns=episode_returns,
        episode_lengths=episode_lengths,
        eval_history=eval_history,
    )


def _mean(values: list[float]) -> float:
    return sum(values) / len(values) if values else 0.0


# ---------------------------------------------------------------------------
# policy table files


def save_policy(learner: Learner, path: str | Path) -> None:
    """One sorted line per (o_key, action_id, value-or-distribution)."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        if isinstance(learner.table, QTable):
            for (o_key, action_id), value in sorted(learner.table.values.items()):
                fh.write(
                    json.dumps(
                        {"o_key": o_key, "action_id": action_id, "value": value},
                        separators=(",", ":"),
                    )
                    + "\n"
                )
        else:
            atoms = learner.table.atoms
            for (o_key, action_id), dist in sorted(learner.table.dists.items()):
                fh.write(
                    json.dumps(
                        {
                            "o_key": o_key,
                            "action_id": action_id,
                            "dist": [float(x) for x in dist],
                            "v_min": float(atoms[0]),
                            "v_max": float(atoms[-1]),
                        },
                        separators=(",", ":"),
                    )
                    + "\n"
                )


def load_policy(path: str | Path, cfg: LearnerConfig | None = None) -> Learner:
    """Rebuild a learner from a policy table file (kind is inferred)."""
    path = Path(path)
    cfg = cfg or LearnerConfig()
    q_values: dict[tuple[str, int], float] = {}
    dists: dict[tuple[str, int], np.ndarray] = {}
    v_min = v_max = None
    n_atoms = None
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            pair = (str(doc["o_key"]), int(doc["action_id"]))
            if "dist" in doc:
                dists[pair] = np.asarray(doc["dist"], dtype=float)
                v_min, v_max = float(doc["v_min"]), float(doc["v_max"])
                n_atoms = len(doc["dist"])
            else:
                q_values[pair] = float(doc["value"])
    if dists:
        if q_values:
            raise ValueError(f"{path}: mixed value and distribution lines")
        cfg = replace(cfg, atoms=n_atoms, v_min=v_min, v_max=v_max)
        table = CategoricalTable.create(n_atoms, v_min, v_max)
        table.dists = dists
        return Learner("c51", table, cfg)
    return Learner("q", QTable(q_values), cfg)
