//! Round-based simulation with per-node energy accounting.
//!
//! Each round: prune the alive set to the sink-connected component, plan and
//! slot the windows for the round's traffic, charge every node's radio and
//! aggregation work against its residual energy, then let nodes whose
//! residual reached zero die at the round boundary. The sink is mains-powered:
//! it receives and idles like any parent but is never charged and never dies.
//!
//! All charges are per-bit (nano-joules) times the bits actually moved, so
//! the disciplines differ exactly where their listening behaviour differs.

use thiserror::Error;

use crate::scheduling::{assign_slots, window_plan, Discipline, ScheduleError};
use crate::topology::Tree;
use crate::traffic::{PatternSource, TrafficError, TrafficModel, TrafficPattern};

/// Radio and energy-budget parameters. Defaults: 25 nJ/bit for transmit,
/// receive and aggregation, free sleep, 5 J initial budget, 1024-bit data
/// packets, 16-bit control reports, one extra header bit per MTPO packet.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyParams {
    pub e_tx_nj_per_bit: f64,
    pub e_rx_nj_per_bit: f64,
    pub e_agg_nj_per_bit: f64,
    pub e_sleep_nj_per_slot: f64,
    pub initial_energy_j: f64,
    pub packet_bits: u64,
    pub control_bits: u64,
    /// Bits the MTPO last-packet flag adds to every data packet.
    pub mtpo_extra_bits: u64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        EnergyParams {
            e_tx_nj_per_bit: 25.0,
            e_rx_nj_per_bit: 25.0,
            e_agg_nj_per_bit: 25.0,
            e_sleep_nj_per_slot: 0.0,
            initial_energy_j: 5.0,
            packet_bits: 1024,
            control_bits: 16,
            mtpo_extra_bits: 1,
        }
    }
}

const NJ_PER_J: f64 = 1e9;

/// One node's battery.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeState {
    pub residual_j: f64,
    pub alive: bool,
}

/// Fresh batteries for every node.
pub fn initial_states(tree: &Tree, params: &EnergyParams) -> Vec<NodeState> {
    vec![
        NodeState {
            residual_j: params.initial_energy_j,
            alive: true,
        };
        tree.node_count()
    ]
}

/// Charged energy by category, in joules. The sink's consumption is not
/// included anywhere: it has no battery to drain.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyBreakdown {
    pub tx_j: f64,
    pub rx_j: f64,
    pub idle_j: f64,
    pub sleep_j: f64,
    pub agg_j: f64,
}

impl EnergyBreakdown {
    pub fn total_j(&self) -> f64 {
        self.tx_j + self.rx_j + self.idle_j + self.sleep_j + self.agg_j
    }
}

/// What one simulated round did.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: u64,
    /// Nodes participating this round (alive at its start, sink included).
    pub alive: usize,
    /// Packets generated by alive nodes, whether or not they could deliver.
    pub generated: u64,
    /// Packets that reached the sink.
    pub delivered: u64,
    /// Parent-listens-to-silence events, sink's included.
    pub idle_events: u64,
    pub energy: EnergyBreakdown,
    /// Data slots the round's schedule spanned.
    pub data_slots: u64,
}

/// Simulation errors. `SinkDead` is defensive: no code path charges the sink.
#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("sink cannot be dead")]
    SinkDead,
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

/// Sink-connected alive component: a node is in it iff it and all of its
/// ancestors are alive. Alive nodes below a dead ancestor are excluded —
/// they have no route to the sink.
pub fn prune_alive(tree: &Tree, states: &[NodeState]) -> Vec<bool> {
    let mut connected = vec![false; tree.node_count()];
    let sink = tree.sink();
    if states[sink].alive {
        connected[sink] = true;
        let mut queue = std::collections::VecDeque::from([sink]);
        while let Some(v) = queue.pop_front() {
            for &c in tree.children(v) {
                if states[c].alive {
                    connected[c] = true;
                    queue.push_back(c);
                }
            }
        }
    }
    connected
}

/// Simulates one round: schedule the alive component's traffic, charge every
/// battery, and apply end-of-round deaths. `pattern.round` is carried into
/// the metrics but the charging itself is round-agnostic.
pub fn run_round(
    tree: &Tree,
    states: &mut [NodeState],
    pattern: &TrafficPattern,
    discipline: Discipline,
    params: &EnergyParams,
) -> Result<RoundMetrics, SimError> {
    assert_eq!(states.len(), tree.node_count(), "state table size mismatch");
    let sink = tree.sink();
    if !states[sink].alive {
        return Err(SimError::SinkDead);
    }

    let alive_at_start = states.iter().filter(|s| s.alive).count();
    let connected = prune_alive(tree, states);
    let generated = pattern
        .generators
        .iter()
        .filter(|&&v| states[v].alive)
        .count() as u64;

    let windows = window_plan(tree, discipline, pattern, &connected)?;
    let schedule = assign_slots(&windows, tree, discipline);

    let packet_bits = match discipline {
        Discipline::Mtpo => params.packet_bits + params.mtpo_extra_bits,
        _ => params.packet_bits,
    };
    let tx_per_bit = params.e_tx_nj_per_bit / NJ_PER_J;
    let rx_per_bit = params.e_rx_nj_per_bit / NJ_PER_J;
    let agg_per_bit = params.e_agg_nj_per_bit / NJ_PER_J;

    let mut energy = EnergyBreakdown::default();
    let mut delivered = 0u64;
    let mut idle_events = 0u64;
    let charge = |states: &mut [NodeState], v: usize, joules: f64, bucket: &mut f64| {
        if v != sink {
            states[v].residual_j -= joules;
            *bucket += joules;
        }
    };

    for w in &schedule.windows {
        let m = w.expected_packets;
        if w.parent == sink {
            delivered += m;
        }
        // Data transfer: child transmits, parent receives.
        let data_bits = (m * packet_bits) as f64;
        charge(states, w.child, data_bits * tx_per_bit, &mut energy.tx_j);
        charge(states, w.parent, data_bits * rx_per_bit, &mut energy.rx_j);
        // ETPO exact-count report, exchanged only when there is data.
        if w.has_control_exchange && m > 0 {
            let control_bits = params.control_bits as f64;
            charge(states, w.child, control_bits * tx_per_bit, &mut energy.tx_j);
            charge(
                states,
                w.parent,
                control_bits * rx_per_bit,
                &mut energy.rx_j,
            );
        }
        // Listening to silence.
        if w.implies_idle_listen(discipline) {
            idle_events += 1;
            let bits = w.idle_listen_bits(params.packet_bits, params.control_bits) as f64;
            charge(states, w.parent, bits * rx_per_bit, &mut energy.idle_j);
        }
        // Aggregation work on the child's own and forwarded data.
        let agg_bits = (m * params.packet_bits) as f64;
        charge(states, w.child, agg_bits * agg_per_bit, &mut energy.agg_j);
    }

    // Sleep through every data slot the radio was not on for. Alive nodes
    // cut off from the sink have no schedule and sleep through all of it.
    if params.e_sleep_nj_per_slot > 0.0 {
        let active = schedule.active_slot_counts(tree.node_count());
        let sleep_per_slot = params.e_sleep_nj_per_slot / NJ_PER_J;
        for v in tree.nodes() {
            if v != sink && states[v].alive {
                let asleep = schedule.total_data_slots.saturating_sub(active[v]);
                charge(
                    states,
                    v,
                    asleep as f64 * sleep_per_slot,
                    &mut energy.sleep_j,
                );
            }
        }
    }

    // End-of-round deaths; the sink is never charged, so never dies.
    for v in tree.nodes() {
        if v != sink && states[v].alive && states[v].residual_j <= 0.0 {
            states[v].alive = false;
        }
    }

    debug_assert!(delivered <= generated);
    Ok(RoundMetrics {
        round: pattern.round,
        alive: alive_at_start,
        generated,
        delivered,
        idle_events,
        energy,
        data_slots: schedule.total_data_slots,
    })
}

/// When a run ends (always additionally capped by the round budget).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopPolicy {
    /// Run exactly the budgeted number of rounds.
    FixedRounds,
    /// Stop once every non-sink node is dead — or, since nodes cut off from
    /// the sink spend nothing and can never die, once no death can happen.
    UntilAllDead,
    /// Stop once this many packets have been delivered in total.
    UntilDelivered(u64),
}

/// A finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub per_round: Vec<RoundMetrics>,
    /// Round whose end saw the first non-sink death.
    pub first_death_round: Option<u64>,
    /// Round whose end saw the last non-sink node die.
    pub all_dead_round: Option<u64>,
    pub total_delivered: u64,
    pub total_energy_j: f64,
}

impl RunSummary {
    pub fn rounds_run(&self) -> u64 {
        self.per_round.len() as u64
    }
}

/// Runs rounds `0, 1, 2, ...` under one discipline until the stop policy or
/// the `rounds` budget ends the run. Fully deterministic for fixed inputs.
pub fn run_experiment(
    tree: &Tree,
    model: &TrafficModel,
    discipline: Discipline,
    params: &EnergyParams,
    rounds: u64,
    seed: u64,
    stop: StopPolicy,
) -> Result<RunSummary, SimError> {
    let sink = tree.sink();
    let mut states = initial_states(tree, params);
    let mut source = PatternSource::new(model, tree, seed);
    let mut summary = RunSummary {
        per_round: Vec::new(),
        first_death_round: None,
        all_dead_round: None,
        total_delivered: 0,
        total_energy_j: 0.0,
    };

    let non_sink_alive = |states: &[NodeState]| {
        tree.nodes()
            .filter(|&v| v != sink && states[v].alive)
            .count()
    };

    for round in 0..rounds {
        match stop {
            StopPolicy::FixedRounds => {}
            StopPolicy::UntilAllDead => {
                if non_sink_alive(&states) == 0 {
                    break;
                }
                // Survivors cut off from the sink spend nothing; once the
                // connected component is just the sink, nothing changes.
                if prune_alive(tree, &states).iter().filter(|&&a| a).count() == 1
                    && tree.node_count() > 1
                {
                    break;
                }
            }
            StopPolicy::UntilDelivered(k) => {
                if summary.total_delivered >= k {
                    break;
                }
                if prune_alive(tree, &states).iter().filter(|&&a| a).count() == 1
                    && tree.node_count() > 1
                {
                    break; // nothing can be delivered any more
                }
            }
        }

        let alive_before = non_sink_alive(&states);
        let pattern = source.next_pattern()?;
        let metrics = run_round(tree, &mut states, &pattern, discipline, params)?;
        let alive_after = non_sink_alive(&states);
        if alive_after < alive_before && summary.first_death_round.is_none() {
            summary.first_death_round = Some(round);
        }
        if alive_after == 0 && alive_before > 0 {
            summary.all_dead_round = Some(round);
        }
        summary.total_delivered += metrics.delivered;
        summary.total_energy_j += metrics.energy.total_j();
        summary.per_round.push(metrics);
    }
    Ok(summary)
}

// ======================================================================
// tests
// ======================================================================
