"""redtwin: a red-agent training range.

A ground-truth network-attack game engine (the emulator), an
unsupervised generator that mirrors it into a fast empirical simulator
from logged transition counts, table-backed reinforcement learners, a
brute-force optimality oracle, and a cross-training loop that alternates
between the two environments to reach an optimal course of action with
minimal emulator time.
"""

__version__ = "0.1.0"

from .facts import (
    EMPTY_OBSERVATION_KEY,
    Fact,
    FactKind,
    Observation,
    observation_key,
    parse_observation_key,
)
from .scenario import (
    ActionSpec,
    FirewallRule,
    GameSpec,
    GuardSpec,
    HostSpec,
    Scenario,
    ScenarioParseError,
    builtin_default,
    parse_scenario,
    reachable,
    scenario_digest,
    serialize_scenario,
    validate,
)
from .emulator import EmuEnv, StepOutcome, reset
from .traces import (
    CountIndex,
    TraceHeader,
    TransitionRecord,
    load,
    open_writer,
    read_log,
    stats,
)
from .simgen import (
    EmpiricalMdp,
    SimEnv,
    UnknownTransitionLedger,
    build,
    export_unknown_histogram,
    load_mdp,
    save_mdp,
    sim_reset,
    sim_step,
    sufficiency_report,
)
from .learners import (
    CategoricalTable,
    EpsilonSchedule,
    Learner,
    LearnerConfig,
    MetricsRow,
    QTable,
    Transition,
    c51_update,
    evaluate,
    make_learner,
    q_update,
    select_action,
    train,
)
from .oracle import (
    OracleResult,
    StateGraph,
    enumerate_states,
    exhaustive_trace,
    value_iteration,
)
from .orchestrator import (
    BaselineReport,
    LoopConfig,
    SegmentRecord,
    UnifiedReport,
    run_emulator_only,
    run_unified,
    seg1_trigger,
    seg3_plateau,
)
from .seeding import derive_seed

__all__ = [name for name in dir() if not name.startswith("_")]
