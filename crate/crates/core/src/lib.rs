//! treecast: a deterministic round-based simulator and analytics toolkit for
//! TDMA data collection in tree-structured sensor networks.
//!
//! Every round, a subset of nodes generates one measurement each; data flows
//! up link by link inside per-link contiguous slot windows, aggregated at
//! each hop, until it reaches the sink. Three slot-reservation disciplines
//! are implemented, differing in how a parent learns that a child's subtree
//! has nothing to send this round (and therefore how much energy is wasted
//! listening to silence):
//!
//! * `tpo` — every link reserves one slot per node in the child's subtree;
//!   the parent stays in receive mode for the whole window whenever fewer
//!   packets than that arrive.
//! * `mtpo` — same reservation, but each packet carries one extra framing
//!   bit that says whether more packets follow, so the parent wastes a
//!   listen only when the window is completely empty.
//! * `etpo` — children report their exact pending packet count in a short
//!   control exchange, so windows shrink to the actual traffic and an empty
//!   window costs only the control bits.
//!
//! The crate is split by concern:
//!
//! * [`topology`] — rooted trees: construction, generation, CSV round-trip.
//! * [`traffic`] — per-round generator patterns and the counter-based
//!   deterministic PRNG behind them.
//! * [`scheduling`] — per-round window plans, conflict-free slot assignment
//!   and an independent schedule verifier.
//! * [`simkernel`] — the energy ledger and the round/experiment loops.
//! * [`analytics`] — closed-form, exhaustive and Monte Carlo estimates of
//!   expected idle-listening events per round.
//! * [`experiment`] — config files, the run/sweep/analyze commands and
//!   their CSV outputs.
//!
//! Determinism is a hard guarantee throughout: all randomness flows through
//! one counter-based PRNG keyed by `(seed, round, node)`, nothing depends on
//! hash-map iteration order or wall-clock time, and identical inputs produce
//! byte-identical output files on every platform.

pub mod analytics;
pub mod experiment;
pub mod scheduling;
pub mod simkernel;
pub mod topology;
pub mod traffic;

pub use analytics::{
    exact_idle_by_enumeration, expected_idle, monte_carlo_idle, AnalyticsError, IdleSemantics,
};
pub use experiment::{
    cmd_analyze, cmd_run, cmd_sweep, dump_config, load_config, ConfigError, ExperimentConfig,
    RunError, SweepAxis, TopologySource, TrafficSpec,
};
pub use scheduling::{
    assign_slots, verify_schedule, window_plan, Discipline, LinkWindow, Schedule, ScheduleError,
    ScheduleViolation, SlotEntry, SlotKind,
};
pub use simkernel::{
    initial_states, run_experiment, run_round, EnergyBreakdown, EnergyParams, NodeState,
    RoundMetrics, RunSummary, SimError, StopPolicy,
};
pub use topology::{
    build_tree, gen_balanced, gen_random, parse_topology, serialize_topology, subtree_histogram,
    NodeId, TopologyError, Tree,
};
pub use traffic::{
    generate_pattern, parse_patterns, pattern_weight, prng_draw, PatternSource, TrafficError,
    TrafficModel, TrafficPattern,
};
