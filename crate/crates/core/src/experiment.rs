//! Experiment configuration and the run/sweep/analyze commands.
//!
//! Configs are flat `key=value` text (one pair per line, `#` comments),
//! validated strictly before anything runs: unknown keys, out-of-range
//! values and missing topology are all rejected up front. Every command
//! writes plain CSV; identical config and seed produce byte-identical files.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::analytics::{expected_idle, AnalyticsError, IdleSemantics};
use crate::scheduling::Discipline;
use crate::simkernel::{run_experiment, EnergyParams, RunSummary, SimError, StopPolicy};
use crate::topology::{gen_balanced, gen_random, parse_topology, TopologyError, Tree};
use crate::traffic::{parse_patterns, TrafficError, TrafficModel};

/// Configuration errors; all reported before any run starts.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {reason}")]
    BadValue { key: String, reason: String },
    #[error("no topology configured; set topology.kind")]
    MissingTopology,
}

impl ConfigError {
    fn bad(key: &str, reason: impl Into<String>) -> Self {
        ConfigError::BadValue {
            key: key.to_string(),
            reason: reason.into(),
        }
    }
}

/// Where the tree comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum TopologySource {
    Balanced {
        fanout: u64,
        height: u32,
    },
    Random {
        node_count: usize,
        max_children: usize,
    },
    File(PathBuf),
}

impl fmt::Display for TopologySource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopologySource::Balanced { fanout, height } => {
                write!(f, "balanced(r={fanout},l={height})")
            }
            TopologySource::Random {
                node_count,
                max_children,
            } => write!(f, "random(n={node_count},max_children={max_children})"),
            TopologySource::File(path) => write!(f, "{}", path.display()),
        }
    }
}

/// Where per-round traffic comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum TrafficSpec {
    Bernoulli { p: f64 },
    Burst { p_on: f64, p_off: f64 },
    File(PathBuf),
}

/// A fully validated experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub topology: TopologySource,
    pub disciplines: Vec<Discipline>,
    pub traffic: TrafficSpec,
    pub rounds: u64,
    pub stop: StopPolicy,
    pub seed: u64,
    pub energy: EnergyParams,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            topology: TopologySource::Balanced {
                fanout: 2,
                height: 2,
            },
            disciplines: Discipline::ALL.to_vec(),
            traffic: TrafficSpec::Bernoulli { p: 0.5 },
            rounds: 1000,
            stop: StopPolicy::FixedRounds,
            seed: 0,
            energy: EnergyParams::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

const CONFIG_KEYS: &[&str] = &[
    "topology.kind",
    "topology.r",
    "topology.l",
    "topology.n",
    "topology.max_children",
    "topology.path",
    "scheduler",
    "traffic.model",
    "traffic.p",
    "traffic.p_on",
    "traffic.p_off",
    "traffic.path",
    "sim.rounds",
    "sim.stop",
    "sim.seed",
    "energy.e_tx_nj",
    "energy.e_rx_nj",
    "energy.e_agg_nj",
    "energy.e_sleep_nj",
    "energy.initial_j",
    "packet.bits",
    "packet.control_bits",
    "out.dir",
];

/// Parses and validates a flat `key=value` config. Unset keys fall back to
/// defaults: a balanced r=2 l=2 topology is NOT defaulted — the topology
/// must be configured — but everything else is (scheduler=all, bernoulli
/// p=0.5 traffic, 1000 rounds, fixed-round stop, seed 0, default energy
/// table, out dir `out`).
pub fn load_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut pairs: BTreeMap<&str, &str> = BTreeMap::new();
    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::bad(line, "expected `key=value`"));
        };
        let key = key.trim();
        let value = value.trim();
        if !CONFIG_KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        if pairs.insert(key, value).is_some() {
            return Err(ConfigError::bad(key, "duplicate key"));
        }
    }

    let parse_u64 = |key: &str| -> Result<Option<u64>, ConfigError> {
        pairs
            .get(key)
            .map(|v| {
                v.parse::<u64>().map_err(|_| {
                    ConfigError::bad(key, format!("`{v}` is not a non-negative integer"))
                })
            })
            .transpose()
    };
    let parse_f64 = |key: &str| -> Result<Option<f64>, ConfigError> {
        pairs
            .get(key)
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| ConfigError::bad(key, format!("`{v}` is not a finite number")))
            })
            .transpose()
    };
    let parse_probability = |key: &str| -> Result<Option<f64>, ConfigError> {
        Ok(match parse_f64(key)? {
            Some(p) if (0.0..=1.0).contains(&p) => Some(p),
            Some(p) => return Err(ConfigError::bad(key, format!("{p} is not in [0, 1]"))),
            None => None,
        })
    };
    let forbid = |keys: &[&str], context: &str| -> Result<(), ConfigError> {
        for key in keys {
            if pairs.contains_key(key) {
                return Err(ConfigError::bad(key, format!("not applicable {context}")));
            }
        }
        Ok(())
    };

    // --- topology ---
    let topology = match pairs.get("topology.kind").copied() {
        None => return Err(ConfigError::MissingTopology),
        Some("balanced") => {
            forbid(
                &["topology.n", "topology.max_children", "topology.path"],
                "to a balanced topology",
            )?;
            let fanout = parse_u64("topology.r")?
                .ok_or_else(|| ConfigError::bad("topology.r", "required for balanced topology"))?;
            if fanout == 0 {
                return Err(ConfigError::bad("topology.r", "fanout must be at least 1"));
            }
            let height = parse_u64("topology.l")?
                .ok_or_else(|| ConfigError::bad("topology.l", "required for balanced topology"))?;
            let height = u32::try_from(height)
                .map_err(|_| ConfigError::bad("topology.l", "height is too large"))?;
            TopologySource::Balanced { fanout, height }
        }
        Some("random") => {
            forbid(
                &["topology.r", "topology.l", "topology.path"],
                "to a random topology",
            )?;
            let node_count = parse_u64("topology.n")?
                .ok_or_else(|| ConfigError::bad("topology.n", "required for random topology"))?;
            if node_count == 0 {
                return Err(ConfigError::bad("topology.n", "need at least one node"));
            }
            let max_children = parse_u64("topology.max_children")?.unwrap_or(3);
            if max_children == 0 && node_count > 1 {
                return Err(ConfigError::bad(
                    "topology.max_children",
                    "must be at least 1 for more than one node",
                ));
            }
            TopologySource::Random {
                node_count: node_count as usize,
                max_children: max_children as usize,
            }
        }
        Some("file") => {
            forbid(
                &[
                    "topology.r",
                    "topology.l",
                    "topology.n",
                    "topology.max_children",
                ],
                "to a file topology",
            )?;
            let path = pairs
                .get("topology.path")
                .ok_or_else(|| ConfigError::bad("topology.path", "required for file topology"))?;
            TopologySource::File(PathBuf::from(path))
        }
        Some(other) => {
            return Err(ConfigError::bad(
                "topology.kind",
                format!("`{other}` is not one of balanced|random|file"),
            ))
        }
    };

    // --- scheduler ---
    let disciplines = match pairs.get("scheduler").copied().unwrap_or("all") {
        "all" => Discipline::ALL.to_vec(),
        one => vec![one.parse::<Discipline>().map_err(|_| {
            ConfigError::bad("scheduler", format!("`{one}` is not tpo|mtpo|etpo|all"))
        })?],
    };

    // --- traffic ---
    let traffic = match pairs.get("traffic.model").copied().unwrap_or("bernoulli") {
        "bernoulli" => {
            forbid(
                &["traffic.p_on", "traffic.p_off", "traffic.path"],
                "to bernoulli traffic",
            )?;
            TrafficSpec::Bernoulli {
                p: parse_probability("traffic.p")?.unwrap_or(0.5),
            }
        }
        "burst" => {
            forbid(&["traffic.p", "traffic.path"], "to burst traffic")?;
            let p_on = parse_probability("traffic.p_on")?
                .ok_or_else(|| ConfigError::bad("traffic.p_on", "required for burst traffic"))?;
            let p_off = parse_probability("traffic.p_off")?
                .ok_or_else(|| ConfigError::bad("traffic.p_off", "required for burst traffic"))?;
            TrafficSpec::Burst { p_on, p_off }
        }
        "file" => {
            forbid(
                &["traffic.p", "traffic.p_on", "traffic.p_off"],
                "to file traffic",
            )?;
            let path = pairs
                .get("traffic.path")
                .ok_or_else(|| ConfigError::bad("traffic.path", "required for file traffic"))?;
            TrafficSpec::File(PathBuf::from(path))
        }
        other => {
            return Err(ConfigError::bad(
                "traffic.model",
                format!("`{other}` is not one of bernoulli|burst|file"),
            ))
        }
    };

    // --- simulation ---
    let rounds = parse_u64("sim.rounds")?.unwrap_or(1000);
    if rounds == 0 {
        return Err(ConfigError::bad("sim.rounds", "need at least one round"));
    }
    let stop = match pairs.get("sim.stop").copied().unwrap_or("rounds") {
        "rounds" => StopPolicy::FixedRounds,
        "all_dead" => StopPolicy::UntilAllDead,
        other => match other.strip_prefix("delivered:") {
            Some(k) => StopPolicy::UntilDelivered(k.parse::<u64>().map_err(|_| {
                ConfigError::bad("sim.stop", format!("`{k}` is not a packet count"))
            })?),
            None => {
                return Err(ConfigError::bad(
                    "sim.stop",
                    format!("`{other}` is not rounds|all_dead|delivered:<k>"),
                ))
            }
        },
    };
    let seed = parse_u64("sim.seed")?.unwrap_or(0);

    // --- energy ---
    let mut energy = EnergyParams::default();
    let non_negative = |key: &str, value: f64| -> Result<f64, ConfigError> {
        if value >= 0.0 {
            Ok(value)
        } else {
            Err(ConfigError::bad(key, "must be non-negative"))
        }
    };
    if let Some(v) = parse_f64("energy.e_tx_nj")? {
        energy.e_tx_nj_per_bit = non_negative("energy.e_tx_nj", v)?;
    }
    if let Some(v) = parse_f64("energy.e_rx_nj")? {
        energy.e_rx_nj_per_bit = non_negative("energy.e_rx_nj", v)?;
    }
    if let Some(v) = parse_f64("energy.e_agg_nj")? {
        energy.e_agg_nj_per_bit = non_negative("energy.e_agg_nj", v)?;
    }
    if let Some(v) = parse_f64("energy.e_sleep_nj")? {
        energy.e_sleep_nj_per_slot = non_negative("energy.e_sleep_nj", v)?;
    }
    if let Some(v) = parse_f64("energy.initial_j")? {
        energy.initial_energy_j = non_negative("energy.initial_j", v)?;
    }
    if let Some(v) = parse_u64("packet.bits")? {
        if v == 0 {
            return Err(ConfigError::bad(
                "packet.bits",
                "packets need at least one bit",
            ));
        }
        energy.packet_bits = v;
    }
    if let Some(v) = parse_u64("packet.control_bits")? {
        energy.control_bits = v;
    }

    let out_dir = PathBuf::from(pairs.get("out.dir").copied().unwrap_or("out"));

    Ok(ExperimentConfig {
        topology,
        disciplines,
        traffic,
        rounds,
        stop,
        seed,
        energy,
        out_dir,
    })
}

/// Canonical serialization of a config; `load_config(dump_config(c)) == c`
/// and dumping again reproduces the same text.
pub fn dump_config(cfg: &ExperimentConfig) -> String {
    let mut out = String::new();
    match &cfg.topology {
        TopologySource::Balanced { fanout, height } => {
            let _ = writeln!(out, "topology.kind=balanced");
            let _ = writeln!(out, "topology.r={fanout}");
            let _ = writeln!(out, "topology.l={height}");
        }
        TopologySource::Random {
            node_count,
            max_children,
        } => {
            let _ = writeln!(out, "topology.kind=random");
            let _ = writeln!(out, "topology.n={node_count}");
            let _ = writeln!(out, "topology.max_children={max_children}");
        }
        TopologySource::File(path) => {
            let _ = writeln!(out, "topology.kind=file");
            let _ = writeln!(out, "topology.path={}", path.display());
        }
    }
    let scheduler = if cfg.disciplines == Discipline::ALL {
        "all".to_string()
    } else {
        cfg.disciplines
            .iter()
            .map(|d| d.name())
            .collect::<Vec<_>>()
            .join(",")
    };
    let _ = writeln!(out, "scheduler={scheduler}");
    match &cfg.traffic {
        TrafficSpec::Bernoulli { p } => {
            let _ = writeln!(out, "traffic.model=bernoulli");
            let _ = writeln!(out, "traffic.p={p}");
        }
        TrafficSpec::Burst { p_on, p_off } => {
            let _ = writeln!(out, "traffic.model=burst");
            let _ = writeln!(out, "traffic.p_on={p_on}");
            let _ = writeln!(out, "traffic.p_off={p_off}");
        }
        TrafficSpec::File(path) => {
            let _ = writeln!(out, "traffic.model=file");
            let _ = writeln!(out, "traffic.path={}", path.display());
        }
    }
    let _ = writeln!(out, "sim.rounds={}", cfg.rounds);
    let stop = match cfg.stop {
        StopPolicy::FixedRounds => "rounds".to_string(),
        StopPolicy::UntilAllDead => "all_dead".to_string(),
        StopPolicy::UntilDelivered(k) => format!("delivered:{k}"),
    };
    let _ = writeln!(out, "sim.stop={stop}");
    let _ = writeln!(out, "sim.seed={}", cfg.seed);
    let _ = writeln!(out, "energy.e_tx_nj={}", cfg.energy.e_tx_nj_per_bit);
    let _ = writeln!(out, "energy.e_rx_nj={}", cfg.energy.e_rx_nj_per_bit);
    let _ = writeln!(out, "energy.e_agg_nj={}", cfg.energy.e_agg_nj_per_bit);
    let _ = writeln!(out, "energy.e_sleep_nj={}", cfg.energy.e_sleep_nj_per_slot);
    let _ = writeln!(out, "energy.initial_j={}", cfg.energy.initial_energy_j);
    let _ = writeln!(out, "packet.bits={}", cfg.energy.packet_bits);
    let _ = writeln!(out, "packet.control_bits={}", cfg.energy.control_bits);
    let _ = writeln!(out, "out.dir={}", cfg.out_dir.display());
    out
}

/// Anything a command can fail with; carries the process exit code split
/// between configuration problems (2) and I/O problems (3).
#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("topology: {0}")]
    Topology(#[from] TopologyError),
    #[error("traffic: {0}")]
    Traffic(#[from] TrafficError),
    #[error("simulation: {0}")]
    Sim(#[from] SimError),
    #[error("analytics: {0}")]
    Analytics(#[from] AnalyticsError),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Io { .. } => 3,
            _ => 2,
        }
    }
}

fn read_file(path: &Path) -> Result<String, RunError> {
    fs::read_to_string(path).map_err(|source| RunError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), RunError> {
    fs::write(path, contents).map_err(|source| RunError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn ensure_dir(path: &Path) -> Result<(), RunError> {
    fs::create_dir_all(path).map_err(|source| RunError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Materializes the configured topology. Generated topologies use the
/// experiment seed, so a config describes one reproducible tree.
pub fn build_topology(cfg: &ExperimentConfig) -> Result<Tree, RunError> {
    match &cfg.topology {
        TopologySource::Balanced { fanout, height } => Ok(gen_balanced(*fanout, *height)?),
        TopologySource::Random {
            node_count,
            max_children,
        } => Ok(gen_random(*node_count, *max_children, cfg.seed)?),
        TopologySource::File(path) => Ok(parse_topology(&read_file(path)?)?),
    }
}

/// Materializes the configured traffic model. Pattern files drive rounds
/// cyclically, so any round budget is valid.
pub fn build_traffic(cfg: &ExperimentConfig, tree: &Tree) -> Result<TrafficModel, RunError> {
    match &cfg.traffic {
        TrafficSpec::Bernoulli { p } => Ok(TrafficModel::bernoulli(*p)?),
        TrafficSpec::Burst { p_on, p_off } => Ok(TrafficModel::markov_burst(*p_on, *p_off)?),
        TrafficSpec::File(path) => {
            let rounds = parse_patterns(&read_file(path)?)?;
            for set in &rounds {
                for &v in set {
                    if v >= tree.node_count() {
                        return Err(ConfigError::bad(
                            "traffic.path",
                            format!(
                                "pattern names node {v}, tree has {} nodes",
                                tree.node_count()
                            ),
                        )
                        .into());
                    }
                }
            }
            Ok(TrafficModel::explicit(rounds, true)?)
        }
    }
}

/// Energy in joules, always 9 significant digits.
fn fmt_energy(x: f64) -> String {
    format!("{x:.8e}")
}

fn fmt_opt_round(r: Option<u64>) -> String {
    r.map(|v| v.to_string()).unwrap_or_default()
}

/// The bernoulli probability a run reports in its summary (empty for other
/// traffic models).
fn traffic_p_label(traffic: &TrafficSpec) -> String {
    match traffic {
        TrafficSpec::Bernoulli { p } => format!("{p}"),
        _ => String::new(),
    }
}

pub const PER_ROUND_HEADER: &str = "run_id,scheduler,round,alive,generated,delivered,idle_events,e_tx_j,e_rx_j,e_idle_j,e_sleep_j,e_agg_j,data_slots";
pub const SUMMARY_HEADER: &str = "run_id,scheduler,nodes,p,seed,rounds_run,first_death_round,all_dead_round,total_delivered,total_energy_j";
pub const SWEEP_HEADER: &str = "axis,axis_value,scheduler,mean_energy_per_delivered_j,total_delivered,first_death_round,mean_idle_events";
pub const ANALYSIS_HEADER: &str = "tree,p,semantics,expected_idle";

/// Files a `run` command produced.
#[derive(Debug)]
pub struct RunArtifacts {
    pub per_round_csv: PathBuf,
    pub summary_csv: PathBuf,
}

/// Runs the configured experiment once per configured discipline and writes
/// `per_round.csv` and `summary.csv` under the output directory.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunArtifacts, RunError> {
    let tree = build_topology(cfg)?;
    let model = build_traffic(cfg, &tree)?;
    let p_label = traffic_p_label(&cfg.traffic);

    let mut per_round = String::from(PER_ROUND_HEADER);
    per_round.push('\n');
    let mut summary = String::from(SUMMARY_HEADER);
    summary.push('\n');

    for (run_id, &discipline) in cfg.disciplines.iter().enumerate() {
        let result = run_experiment(
            &tree,
            &model,
            discipline,
            &cfg.energy,
            cfg.rounds,
            cfg.seed,
            cfg.stop,
        )?;
        for m in &result.per_round {
            let _ = writeln!(
                per_round,
                "{run_id},{scheduler},{round},{alive},{generated},{delivered},{idle},{tx},{rx},{idle_j},{sleep},{agg},{slots}",
                scheduler = discipline,
                round = m.round,
                alive = m.alive,
                generated = m.generated,
                delivered = m.delivered,
                idle = m.idle_events,
                tx = fmt_energy(m.energy.tx_j),
                rx = fmt_energy(m.energy.rx_j),
                idle_j = fmt_energy(m.energy.idle_j),
                sleep = fmt_energy(m.energy.sleep_j),
                agg = fmt_energy(m.energy.agg_j),
                slots = m.data_slots,
            );
        }
        let _ = writeln!(
            summary,
            "{run_id},{scheduler},{nodes},{p},{seed},{rounds},{first},{all},{delivered},{energy}",
            scheduler = discipline,
            nodes = tree.node_count(),
            p = p_label,
            seed = cfg.seed,
            rounds = result.rounds_run(),
            first = fmt_opt_round(result.first_death_round),
            all = fmt_opt_round(result.all_dead_round),
            delivered = result.total_delivered,
            energy = fmt_energy(result.total_energy_j),
        );
    }

    ensure_dir(&cfg.out_dir)?;
    let artifacts = RunArtifacts {
        per_round_csv: cfg.out_dir.join("per_round.csv"),
        summary_csv: cfg.out_dir.join("summary.csv"),
    };
    write_file(&artifacts.per_round_csv, &per_round)?;
    write_file(&artifacts.summary_csv, &summary)?;
    Ok(artifacts)
}

/// What a sweep varies.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    /// Network sizes; each value gets its own topology of that many nodes.
    Nodes(Vec<u64>),
    /// Traffic probabilities; requires bernoulli traffic.
    P(Vec<f64>),
}

/// Finds a perfect-tree shape with exactly `total` nodes: the configured
/// fanout if it fits, else the smallest fanout >= 2 that does (a star of
/// n-1 children always does), else a chain.
fn balanced_shape_for(total: u64, preferred_fanout: Option<u64>) -> (u64, u32) {
    fn height_for(fanout: u64, total: u64) -> Option<u32> {
        let mut count = 1u64;
        let mut width = 1u64;
        let mut height = 0u32;
        loop {
            if count == total {
                return Some(height);
            }
            if count > total {
                return None;
            }
            width = width.checked_mul(fanout)?;
            count = count.checked_add(width)?;
            height += 1;
        }
    }
    if let Some(r) = preferred_fanout {
        if let Some(l) = height_for(r, total) {
            return (r, l);
        }
    }
    for r in 2..total.max(2) {
        if let Some(l) = height_for(r, total) {
            return (r, l);
        }
    }
    (1, total.saturating_sub(1) as u32)
}

/// Runs the experiment grid (axis value x discipline) and writes
/// `sweep.csv`. Each grid cell is a fresh full run under the configured
/// stop policy; rows appear in axis-value-major, discipline-minor order.
pub fn cmd_sweep(cfg: &ExperimentConfig, axis: &SweepAxis) -> Result<PathBuf, RunError> {
    let mut rows = String::from(SWEEP_HEADER);
    rows.push('\n');

    let mut emit = |axis_name: &str,
                    axis_value: &str,
                    discipline: Discipline,
                    result: &RunSummary| {
        let energy_per_packet = if result.total_delivered > 0 {
            fmt_energy(result.total_energy_j / result.total_delivered as f64)
        } else {
            String::new()
        };
        let mean_idle = if result.rounds_run() > 0 {
            let total: u64 = result.per_round.iter().map(|m| m.idle_events).sum();
            format!("{}", total as f64 / result.rounds_run() as f64)
        } else {
            String::new()
        };
        let _ = writeln!(
            rows,
            "{axis_name},{axis_value},{discipline},{energy_per_packet},{delivered},{first},{mean_idle}",
            delivered = result.total_delivered,
            first = fmt_opt_round(result.first_death_round),
        );
    };

    match axis {
        SweepAxis::Nodes(values) => {
            for &total in values {
                if total == 0 {
                    return Err(ConfigError::bad("sweep", "node counts must be positive").into());
                }
                let mut point = cfg.clone();
                point.topology = match &cfg.topology {
                    TopologySource::Balanced { fanout, .. } => {
                        let (fanout, height) = balanced_shape_for(total, Some(*fanout));
                        TopologySource::Balanced { fanout, height }
                    }
                    TopologySource::Random { max_children, .. } => TopologySource::Random {
                        node_count: total as usize,
                        max_children: *max_children,
                    },
                    TopologySource::File(_) => {
                        return Err(ConfigError::bad(
                            "sweep",
                            "the nodes axis cannot resize a file topology",
                        )
                        .into())
                    }
                };
                let tree = build_topology(&point)?;
                let model = build_traffic(&point, &tree)?;
                for &discipline in &cfg.disciplines {
                    let result = run_experiment(
                        &tree,
                        &model,
                        discipline,
                        &point.energy,
                        point.rounds,
                        point.seed,
                        point.stop,
                    )?;
                    emit("nodes", &total.to_string(), discipline, &result);
                }
            }
        }
        SweepAxis::P(values) => {
            if !matches!(cfg.traffic, TrafficSpec::Bernoulli { .. }) {
                return Err(
                    ConfigError::bad("sweep", "the p axis requires bernoulli traffic").into(),
                );
            }
            let tree = build_topology(cfg)?;
            for &p in values {
                if !(0.0..=1.0).contains(&p) {
                    return Err(
                        ConfigError::bad("sweep", format!("{p} is not a probability")).into(),
                    );
                }
                let model = TrafficModel::bernoulli(p)?;
                for &discipline in &cfg.disciplines {
                    let result = run_experiment(
                        &tree,
                        &model,
                        discipline,
                        &cfg.energy,
                        cfg.rounds,
                        cfg.seed,
                        cfg.stop,
                    )?;
                    emit("p", &format!("{p}"), discipline, &result);
                }
            }
        }
    }

    ensure_dir(&cfg.out_dir)?;
    let path = cfg.out_dir.join("sweep.csv");
    write_file(&path, &rows)?;
    Ok(path)
}

/// Analyze output: the CSV path plus any rows skipped because a semantics
/// did not apply to the tree.
#[derive(Debug)]
pub struct AnalyzeArtifacts {
    pub analysis_csv: PathBuf,
    pub warnings: Vec<String>,
}

/// Computes every applicable expected-idle semantics for each probability
/// and writes `analysis.csv`. Semantics that do not apply to the tree
/// (balanced-only forms on an unbalanced tree) are skipped with a warning.
pub fn cmd_analyze(
    cfg: &ExperimentConfig,
    probabilities: &[f64],
) -> Result<AnalyzeArtifacts, RunError> {
    let tree = build_topology(cfg)?;
    let label = cfg.topology.to_string();
    let mut rows = String::from(ANALYSIS_HEADER);
    rows.push('\n');
    let mut warnings = Vec::new();
    for &p in probabilities {
        if !(0.0..=1.0).contains(&p) {
            return Err(ConfigError::bad("analyze", format!("{p} is not a probability")).into());
        }
        for semantics in IdleSemantics::ALL {
            match expected_idle(&tree, p, semantics) {
                Ok(value) => {
                    let _ = writeln!(rows, "{label},{p},{},{value}", semantics.name());
                }
                Err(AnalyticsError::NotBalanced) => warnings.push(format!(
                    "{}: tree is not balanced; row skipped for p={p}",
                    semantics.name()
                )),
                Err(e) => return Err(e.into()),
            }
        }
    }
    ensure_dir(&cfg.out_dir)?;
    let path = cfg.out_dir.join("analysis.csv");
    write_file(&path, &rows)?;
    Ok(AnalyzeArtifacts {
        analysis_csv: path,
        warnings,
    })
}

// ======================================================================
// tests
// ======================================================================

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg =
            load_config("topology.kind=balanced\ntopology.r=2\ntopology.l=2\nscheduler=tpo\n")
                .unwrap();
        assert_eq!(
            cfg.topology,
            TopologySource::Balanced {
                fanout: 2,
                height: 2
            }
        );
        assert_eq!(cfg.disciplines, vec![Discipline::Tpo]);
        assert_eq!(cfg.traffic, TrafficSpec::Bernoulli { p: 0.5 });
        assert_eq!(cfg.rounds, 1000);
        assert_eq!(cfg.stop, StopPolicy::FixedRounds);
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.energy, EnergyParams::default());
        assert_eq!(cfg.out_dir, PathBuf::from("out"));
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let cfg = load_config(
            "# experiment\n\ntopology.kind=balanced\ntopology.r=2\ntopology.l=1\n  # trailing\n",
        )
        .unwrap();
        assert_eq!(cfg.disciplines, Discipline::ALL.to_vec());
    }

    #[test]
    fn config_rejections() {
        assert_eq!(load_config(""), Err(ConfigError::MissingTopology));
        assert_eq!(
            load_config("topology.kindd=balanced\n"),
            Err(ConfigError::UnknownKey("topology.kindd".into()))
        );
        assert!(matches!(
            load_config("topology.kind=balanced\ntopology.r=2\ntopology.l=2\ntraffic.p=1.5\n"),
            Err(ConfigError::BadValue { .. })
        ));
        assert!(matches!(
            load_config("topology.kind=balanced\ntopology.r=2\n"),
            Err(ConfigError::BadValue { .. }) // missing topology.l
        ));
        assert!(matches!(
            load_config("topology.kind=random\ntopology.n=5\ntopology.r=2\n"),
            Err(ConfigError::BadValue { .. }) // r not applicable to random
        ));
        assert!(matches!(
            load_config("topology.kind=balanced\ntopology.r=2\ntopology.l=2\nsim.stop=sometimes\n"),
            Err(ConfigError::BadValue { .. })
        ));
        assert!(matches!(
            load_config("topology.kind=balanced\ntopology.r=2\ntopology.l=2\nsim.rounds=0\n"),
            Err(ConfigError::BadValue { .. })
        ));
        assert!(matches!(
            load_config("topology.kind=balanced\ntopology.r=2\ntopology.l=2\ntopology.r=3\n"),
            Err(ConfigError::BadValue { .. }) // duplicate key
        ));
        assert!(matches!(
            load_config("topology.kind=balanced topology.r=2\n"),
            Err(ConfigError::BadValue { .. }) // no '='
        ));
    }

    #[test]
    fn dump_load_round_trip_is_canonical() {
        let text = "sim.seed=7\ntopology.l=3\ntopology.kind=balanced\ntopology.r=4\nscheduler=etpo\nsim.stop=delivered:500\ntraffic.p=0.25\n";
        let cfg = load_config(text).unwrap();
        let dumped = dump_config(&cfg);
        let reloaded = load_config(&dumped).unwrap();
        assert_eq!(reloaded, cfg);
        assert_eq!(dump_config(&reloaded), dumped);
        // Canonical form spells out every effective value.
        assert!(dumped.contains("energy.e_tx_nj=25\n"));
        assert!(dumped.contains("sim.stop=delivered:500\n"));
        assert!(dumped.contains("packet.bits=1024\n"));
    }

    #[test]
    fn run_writes_expected_rows() {
        let dir = tmp();
        let mut cfg = load_config(
            "topology.kind=balanced\ntopology.r=1\ntopology.l=2\nscheduler=tpo\ntraffic.p=1\nsim.rounds=10\n",
        )
        .unwrap();
        cfg.out_dir = dir.path().to_path_buf();
        let artifacts = cmd_run(&cfg).unwrap();
        let per_round = fs::read_to_string(&artifacts.per_round_csv).unwrap();
        let lines: Vec<&str> = per_round.lines().collect();
        assert_eq!(lines[0], PER_ROUND_HEADER);
        assert_eq!(lines.len(), 11);
        // Chain of 3 at p=1: 2 delivered, no idling, 3 data slots per round.
        assert_eq!(
            lines[1],
            format!(
                "0,tpo,0,3,2,2,0,{tx},{rx},{z},{z},{agg},3",
                tx = fmt_energy(76.8e-6),
                rx = fmt_energy(25.6e-6),
                z = fmt_energy(0.0),
                agg = fmt_energy(76.8e-6),
            )
        );
        let summary = fs::read_to_string(&artifacts.summary_csv).unwrap();
        let lines: Vec<&str> = summary.lines().collect();
        assert_eq!(lines[0], SUMMARY_HEADER);
        assert_eq!(lines.len(), 2);
        let fields: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(fields[0..6], ["0", "tpo", "3", "1", "0", "10"]);
        assert_eq!(fields[6], ""); // no deaths in 10 rounds
        assert_eq!(fields[8], "20");
    }

    #[test]
    fn run_is_byte_identical_across_invocations() {
        let dir_a = tmp();
        let dir_b = tmp();
        let base = "topology.kind=random\ntopology.n=20\nscheduler=all\ntraffic.p=0.4\nsim.rounds=50\nsim.seed=11\n";
        let mut cfg_a = load_config(base).unwrap();
        cfg_a.out_dir = dir_a.path().to_path_buf();
        let mut cfg_b = load_config(base).unwrap();
        cfg_b.out_dir = dir_b.path().to_path_buf();
        let a = cmd_run(&cfg_a).unwrap();
        let b = cmd_run(&cfg_b).unwrap();
        assert_eq!(
            fs::read(&a.per_round_csv).unwrap(),
            fs::read(&b.per_round_csv).unwrap()
        );
        assert_eq!(
            fs::read(&a.summary_csv).unwrap(),
            fs::read(&b.summary_csv).unwrap()
        );
    }

    #[test]
    fn sweep_nodes_axis_row_grid() {
        let dir = tmp();
        let mut cfg = load_config(
            "topology.kind=balanced\ntopology.r=2\ntopology.l=2\nsim.rounds=40\ntraffic.p=0.5\n",
        )
        .unwrap();
        cfg.out_dir = dir.path().to_path_buf();
        let path = cmd_sweep(&cfg, &SweepAxis::Nodes(vec![7, 85])).unwrap();
        let text = fs::read_to_string(path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], SWEEP_HEADER);
        assert_eq!(lines.len(), 7); // 2 sizes x 3 disciplines
        assert!(lines[1].starts_with("nodes,7,tpo,"));
        assert!(lines[6].starts_with("nodes,85,etpo,"));
    }

    #[test]
    fn sweep_p_axis_boundary_idle_equality() {
        let dir = tmp();
        let mut cfg =
            load_config("topology.kind=balanced\ntopology.r=2\ntopology.l=2\nsim.rounds=30\n")
                .unwrap();
        cfg.out_dir = dir.path().to_path_buf();
        let path = cmd_sweep(&cfg, &SweepAxis::P(vec![0.0, 1.0])).unwrap();
        let text = fs::read_to_string(path).unwrap();
        let mean_idle = |line: &str| line.rsplit(',').next().unwrap().to_string();
        let lines: Vec<&str> = text.lines().collect();
        // p=0: every discipline idles once per link per round (6).
        assert_eq!(mean_idle(lines[1]), "6");
        assert_eq!(mean_idle(lines[2]), "6");
        assert_eq!(mean_idle(lines[3]), "6");
        // p=1: never.
        assert_eq!(mean_idle(lines[4]), "0");
        assert_eq!(mean_idle(lines[5]), "0");
        assert_eq!(mean_idle(lines[6]), "0");
    }

    #[test]
    fn sweep_rejects_bad_axes() {
        let cfg = load_config("topology.kind=file\ntopology.path=/nonexistent.csv\n").unwrap();
        assert!(matches!(
            cmd_sweep(&cfg, &SweepAxis::Nodes(vec![5])),
            Err(RunError::Config(_))
        ));
        let cfg =
            load_config("topology.kind=balanced\ntopology.r=2\ntopology.l=1\ntraffic.model=burst\ntraffic.p_on=0.2\ntraffic.p_off=0.5\n")
                .unwrap();
        assert!(matches!(
            cmd_sweep(&cfg, &SweepAxis::P(vec![0.5])),
            Err(RunError::Config(_))
        ));
    }

    #[test]
    fn balanced_shapes_for_sweep_sizes() {
        assert_eq!(balanced_shape_for(7, Some(2)), (2, 2));
        assert_eq!(balanced_shape_for(85, Some(2)), (4, 3)); // 2 cannot hit 85
        assert_eq!(balanced_shape_for(85, Some(4)), (4, 3));
        assert_eq!(balanced_shape_for(1, Some(3)), (3, 0));
        assert_eq!(balanced_shape_for(4, Some(2)), (3, 1)); // star of 3
        assert_eq!(balanced_shape_for(2, None), (1, 1)); // chain
    }

    #[test]
    fn analyze_reference_tree_values() {
        let dir = tmp();
        let topo = dir.path().join("tree.csv");
        let parents = [-1i64, 0, 0, 1, 1, 3, 3, 4, 4, 2, 2, 9, 9];
        let mut text = String::from("node_id,parent_id\n");
        for (v, p) in parents.iter().enumerate() {
            text.push_str(&format!("{v},{p}\n"));
        }
        fs::write(&topo, text).unwrap();
        let mut cfg = load_config(&format!(
            "topology.kind=file\ntopology.path={}\n",
            topo.display()
        ))
        .unwrap();
        cfg.out_dir = dir.path().to_path_buf();
        let artifacts = cmd_analyze(&cfg, &[0.5]).unwrap();
        let text = fs::read_to_string(&artifacts.analysis_csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], ANALYSIS_HEADER);
        assert!(
            lines[1].ends_with(",0.5,tpo_per_link,8.0859375"),
            "{}",
            lines[1]
        );
        assert!(
            lines[2].ends_with(",0.5,subtree_empty_per_link,3.9140625"),
            "{}",
            lines[2]
        );
        // The balanced-only rows were skipped, with warnings.
        assert_eq!(lines.len(), 3);
        assert_eq!(artifacts.warnings.len(), 2);
    }

    #[test]
    fn analyze_balanced_tree_emits_all_semantics() {
        let dir = tmp();
        let mut cfg = load_config("topology.kind=balanced\ntopology.r=2\ntopology.l=2\n").unwrap();
        cfg.out_dir = dir.path().to_path_buf();
        let artifacts = cmd_analyze(&cfg, &[0.5, 1.0]).unwrap();
        let text = fs::read_to_string(&artifacts.analysis_csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 9); // header + 2 probabilities x 4 semantics
        assert!(artifacts.warnings.is_empty());
        assert!(lines[1].starts_with("balanced(r=2,l=2),0.5,tpo_per_link,3.75"));
        assert!(lines[3].ends_with("balanced_tpo_formula,3.5"));
        assert!(lines[4].ends_with("balanced_leaf_formula,2"));
    }

    #[test]
    fn file_traffic_validates_node_ids() {
        let dir = tmp();
        let patterns = dir.path().join("patterns.csv");
        fs::write(&patterns, "round,node_id\n0,1\n1,9\n").unwrap();
        let cfg = load_config(&format!(
            "topology.kind=balanced\ntopology.r=1\ntopology.l=2\ntraffic.model=file\ntraffic.path={}\n",
            patterns.display()
        ))
        .unwrap();
        let tree = build_topology(&cfg).unwrap();
        let err = build_traffic(&cfg, &tree).unwrap_err();
        assert!(matches!(
            err,
            RunError::Config(ConfigError::BadValue { .. })
        ));
    }
}
