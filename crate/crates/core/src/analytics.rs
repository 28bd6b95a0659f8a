//! Expected idle-listening analysis.
//!
//! Closed-form predictors for the number of idle-listen events per round,
//! plus two independent ways to check them: exact enumeration over every
//! possible traffic pattern (small trees only) and Monte Carlo simulation.
//!
//! Per-link expectations under independent generation with probability `p`:
//! a TPO parent idles on a link unless the child's whole subtree generates
//! (probability `1 - p^K`), while a last-packet flag or an exact count
//! report confines idling to empty subtrees (probability `(1-p)^K`).

use thiserror::Error;

use crate::scheduling::{window_plan, Discipline};
use crate::topology::{NodeId, Tree};
use crate::traffic::{generate_pattern, pattern_weight, TrafficModel, TrafficPattern};

/// Largest tree [`exact_idle_by_enumeration`] will accept (2^20 patterns).
pub const MAX_ENUMERATION_NODES: usize = 21;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnalyticsError {
    /// The tree is not a perfect fanout-R depth-L tree, so the balanced
    /// closed forms do not apply.
    #[error("tree is not balanced; balanced closed forms do not apply")]
    NotBalanced,
    /// Exhaustive pattern enumeration would need more than 2^20 patterns.
    #[error("{node_count} nodes is too large to enumerate (max {max})")]
    TooLargeForEnumeration { node_count: usize, max: usize },
}

/// Which expected-idle quantity to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdleSemantics {
    /// Sum over links of `1 - p^K`: the parent idles unless the child's
    /// subtree is completely full. Matches TPO's listening rule.
    TpoPerLink,
    /// Sum over links of `(1-p)^K`: the parent idles only when the child's
    /// subtree is completely silent. Matches MTPO's and ETPO's rule.
    SubtreeEmptyPerLink,
    /// Simplified whole-tree form `(R^(L+1) - 1) * (1-p)` for perfect
    /// fanout-R depth-L trees under the full-subtree rule. A deliberately
    /// coarser reference curve; it does not equal the per-link sum.
    BalancedTpoFormula,
    /// Simplified whole-tree form `R^L * (1-p)` — one idle per silent
    /// leaf — for perfect trees under the empty-subtree rule. A deliberately
    /// coarser reference curve; it does not equal the per-link sum.
    BalancedLeafFormula,
}

impl IdleSemantics {
    pub const ALL: [IdleSemantics; 4] = [
        IdleSemantics::TpoPerLink,
        IdleSemantics::SubtreeEmptyPerLink,
        IdleSemantics::BalancedTpoFormula,
        IdleSemantics::BalancedLeafFormula,
    ];

    pub fn name(self) -> &'static str {
        match self {
            IdleSemantics::TpoPerLink => "tpo_per_link",
            IdleSemantics::SubtreeEmptyPerLink => "subtree_empty_per_link",
            IdleSemantics::BalancedTpoFormula => "balanced_tpo_formula",
            IdleSemantics::BalancedLeafFormula => "balanced_leaf_formula",
        }
    }
}

/// Recovers `(fanout, depth)` if the tree is perfect: every leaf at the same
/// depth and every internal node with the same child count. A chain is
/// fanout 1; a lone sink is the trivial `(1, 0)` tree.
fn balanced_shape(tree: &Tree) -> Option<(u64, u32)> {
    let depth = tree.nodes().map(|v| tree.level(v)).max().unwrap_or(0);
    let fanout = match tree.children(tree.sink()).len() {
        0 => return if depth == 0 { Some((1, 0)) } else { None },
        f => f,
    };
    for v in tree.nodes() {
        let kids = tree.children(v).len();
        let expected = if tree.level(v) == depth { 0 } else { fanout };
        if kids != expected {
            return None;
        }
    }
    Some((fanout as u64, depth))
}

/// Expected idle-listen events per round under independent generation with
/// probability `p`, for the chosen semantics, on a fully alive network.
pub fn expected_idle(tree: &Tree, p: f64, semantics: IdleSemantics) -> Result<f64, AnalyticsError> {
    match semantics {
        IdleSemantics::TpoPerLink => Ok(tree
            .nodes()
            .filter(|&v| v != tree.sink())
            .map(|v| 1.0 - p.powi(tree.subtree_size(v) as i32))
            .sum()),
        IdleSemantics::SubtreeEmptyPerLink => Ok(tree
            .nodes()
            .filter(|&v| v != tree.sink())
            .map(|v| (1.0 - p).powi(tree.subtree_size(v) as i32))
            .sum()),
        IdleSemantics::BalancedTpoFormula => {
            let (fanout, depth) = balanced_shape(tree).ok_or(AnalyticsError::NotBalanced)?;
            Ok(((fanout as f64).powi(depth as i32 + 1) - 1.0) * (1.0 - p))
        }
        IdleSemantics::BalancedLeafFormula => {
            let (fanout, depth) = balanced_shape(tree).ok_or(AnalyticsError::NotBalanced)?;
            Ok((fanout as f64).powi(depth as i32) * (1.0 - p))
        }
    }
}

/// Exact expected idle events for a discipline: enumerates every generator
/// subset, weights it by its probability, and counts idle events with the
/// same window-planning rules the simulator charges by.
pub fn exact_idle_by_enumeration(
    tree: &Tree,
    p: f64,
    discipline: Discipline,
) -> Result<f64, AnalyticsError> {
    let n = tree.node_count();
    if n > MAX_ENUMERATION_NODES {
        return Err(AnalyticsError::TooLargeForEnumeration {
            node_count: n,
            max: MAX_ENUMERATION_NODES,
        });
    }
    let non_sink: Vec<NodeId> = tree.nodes().filter(|&v| v != tree.sink()).collect();
    let alive = vec![true; n];
    let mut expectation = 0.0;
    for mask in 0u64..(1u64 << non_sink.len()) {
        let pattern = TrafficPattern {
            round: 0,
            generators: non_sink
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, &v)| v)
                .collect(),
        };
        let weight = pattern_weight(&pattern, tree, p);
        if weight == 0.0 {
            continue;
        }
        let windows = window_plan(tree, discipline, &pattern, &alive)
            .expect("fully alive network is always connected");
        let idle = windows
            .iter()
            .filter(|w| w.implies_idle_listen(discipline))
            .count();
        expectation += weight * idle as f64;
    }
    Ok(expectation)
}

/// Monte Carlo estimate of mean idle events per round for a discipline under
/// independent generation: `(sample mean, standard error)` over `rounds`
/// simulated patterns, energy disabled (nothing ever dies).
pub fn monte_carlo_idle(
    tree: &Tree,
    p: f64,
    discipline: Discipline,
    rounds: u64,
    seed: u64,
) -> (f64, f64) {
    assert!(rounds >= 1, "need at least one round");
    let model = TrafficModel::bernoulli(p).expect("probability validated by caller");
    let alive = vec![true; tree.node_count()];
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for round in 0..rounds {
        let pattern =
            generate_pattern(&model, tree, round, seed).expect("bernoulli generation cannot fail");
        let windows = window_plan(tree, discipline, &pattern, &alive)
            .expect("fully alive network is always connected");
        let idle = windows
            .iter()
            .filter(|w| w.implies_idle_listen(discipline))
            .count() as f64;
        sum += idle;
        sum_sq += idle * idle;
    }
    let n = rounds as f64;
    let mean = sum / n;
    if rounds == 1 {
        return (mean, 0.0);
    }
    let variance = ((sum_sq - sum * sum / n) / (n - 1.0)).max(0.0);
    (mean, (variance / n).sqrt())
}

// ======================================================================
// tests
// ======================================================================
