//! TDMA window planning and conflict-free slot assignment.
//!
//! Each round, every alive non-sink node gets one transmission window on the
//! link to its parent. The three disciplines differ only in how long that
//! window is and in when the parent ends up listening to silence:
//!
//! * **TPO** (traffic-pattern oblivious): reserve one slot per node in the
//!   child's subtree; the parent listens until the reservation is exhausted
//!   or a slot stays silent, so it idles whenever the subtree is not full.
//! * **MTPO**: same reservation, but every packet carries one extra bit
//!   flagging whether it is the last; the parent idles only when the subtree
//!   sends nothing at all.
//! * **ETPO**: leaf windows are a single slot; a non-leaf child first reports
//!   its exact packet count in a control exchange, so its window is exactly
//!   as long as its load and the parent's empty-subtree idle shrinks to a
//!   control-sized mini-slot.
//!
//! Slot assignment is a deterministic greedy: processing nodes bottom-up
//! (level descending, id ascending), each window takes the earliest slot
//! range that starts after all windows from the child's own children and
//! never puts two links that share a node in the same slot.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::topology::{NodeId, Tree};
use crate::traffic::TrafficPattern;

/// The three scheduling disciplines under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Discipline {
    Tpo,
    Mtpo,
    Etpo,
}

impl Discipline {
    pub const ALL: [Discipline; 3] = [Discipline::Tpo, Discipline::Mtpo, Discipline::Etpo];

    pub fn name(self) -> &'static str {
        match self {
            Discipline::Tpo => "tpo",
            Discipline::Mtpo => "mtpo",
            Discipline::Etpo => "etpo",
        }
    }
}

impl fmt::Display for Discipline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Discipline {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tpo" => Ok(Discipline::Tpo),
            "mtpo" => Ok(Discipline::Mtpo),
            "etpo" => Ok(Discipline::Etpo),
            other => Err(format!("unknown discipline `{other}`")),
        }
    }
}

/// Scheduling errors; the alive-set check is defensive, the simulator always
/// hands over a pruned set.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("alive set is not a sink-connected subtree (node {node} has a dead parent)")]
    DisconnectedAliveSet { node: NodeId },
}

/// One child -> parent transmission window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkWindow {
    pub child: NodeId,
    pub parent: NodeId,
    /// First reserved slot; filled by [`assign_slots`].
    pub start_slot: u64,
    /// Reserved slots. Zero for an ETPO non-leaf link with nothing to send,
    /// which still occupies a control mini-slot for bookkeeping.
    pub length_slots: u64,
    /// Packets the child will actually forward this round (`m`).
    pub expected_packets: u64,
    /// Alive nodes in the child's subtree (`K`), the worst-case load.
    pub capacity: u64,
    /// ETPO non-leaf links open with an exact-count control report.
    pub has_control_exchange: bool,
}

impl LinkWindow {
    /// One past the last reserved slot. Zero-length windows end where they
    /// start; their control mini-slot is bookkeeping, not reservation.
    pub fn end_slot(&self) -> u64 {
        self.start_slot + self.length_slots
    }

    /// Whether the parent ends up listening to silence on this link:
    /// TPO whenever the subtree is not full, MTPO/ETPO only when it is empty.
    pub fn implies_idle_listen(self: &LinkWindow, discipline: Discipline) -> bool {
        match discipline {
            Discipline::Tpo => self.expected_packets < self.capacity,
            Discipline::Mtpo | Discipline::Etpo => self.expected_packets == 0,
        }
    }

    /// Bits the parent listens for during an idle event on this link: a full
    /// packet slot, except the ETPO control mini-slot on non-leaf links.
    pub fn idle_listen_bits(&self, packet_bits: u64, control_bits: u64) -> u64 {
        if self.has_control_exchange {
            control_bits
        } else {
            packet_bits
        }
    }
}

/// Plans one window per alive non-sink node for the given round's traffic.
///
/// `alive` must hold the sink-connected alive component (every alive node's
/// parent alive); packets and capacities count alive subtree members only.
pub fn window_plan(
    tree: &Tree,
    discipline: Discipline,
    pattern: &TrafficPattern,
    alive: &[bool],
) -> Result<Vec<LinkWindow>, ScheduleError> {
    assert_eq!(alive.len(), tree.node_count(), "alive mask size mismatch");
    if !alive[tree.sink()] {
        return Err(ScheduleError::DisconnectedAliveSet { node: tree.sink() });
    }
    for v in tree.nodes() {
        if alive[v] {
            if let Some(p) = tree.parent(v) {
                if !alive[p] {
                    return Err(ScheduleError::DisconnectedAliveSet { node: v });
                }
            }
        }
    }

    let n = tree.node_count();
    let mut packets = vec![0u64; n]; // m: generated in the alive subtree
    let mut capacity = vec![0u64; n]; // K: alive subtree size
    let mut alive_children = vec![0u32; n];
    let order = tree.bottom_up_order();
    for &v in &order {
        if !alive[v] {
            continue;
        }
        packets[v] += u64::from(pattern.generators.contains(&v));
        capacity[v] += 1;
        if let Some(p) = tree.parent(v) {
            packets[p] += packets[v];
            capacity[p] += capacity[v];
            alive_children[p] += 1;
        }
    }

    let mut windows = Vec::with_capacity(n.saturating_sub(1));
    for &v in &order {
        if !alive[v] {
            continue;
        }
        let Some(parent) = tree.parent(v) else {
            continue; // sink
        };
        let is_leaf = alive_children[v] == 0;
        let (length_slots, has_control_exchange) = match discipline {
            Discipline::Tpo | Discipline::Mtpo => (capacity[v], false),
            Discipline::Etpo if is_leaf => (1, false),
            Discipline::Etpo => (packets[v], true),
        };
        windows.push(LinkWindow {
            child: v,
            parent,
            start_slot: 0,
            length_slots,
            expected_packets: packets[v],
            capacity: capacity[v],
            has_control_exchange,
        });
    }
    Ok(windows)
}

/// What a node's radio is doing in one slot of the activity map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    /// The child transmits one data packet, the parent receives it.
    Data,
    /// ETPO control mini-slot: the parent listens for an omitted count
    /// report on an empty non-leaf link.
    Control,
    /// The parent listens a full data slot and nothing arrives.
    IdleProbe,
}

impl SlotKind {
    pub fn name(self) -> &'static str {
        match self {
            SlotKind::Data => "data",
            SlotKind::Control => "control",
            SlotKind::IdleProbe => "idle-probe",
        }
    }
}

/// One activity-map entry: what happens on a link in a given slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotEntry {
    pub child: NodeId,
    pub parent: NodeId,
    pub kind: SlotKind,
}

/// A fully slotted round schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub discipline: Discipline,
    /// Windows in assignment order (level descending, child id ascending).
    pub windows: Vec<LinkWindow>,
    /// Highest reserved data slot index plus one; control mini-slots of
    /// zero-length windows are excluded.
    pub total_data_slots: u64,
    /// Slot -> radio activity. Data slots where the child actually
    /// transmits, plus idle probes and control mini-slots where a parent
    /// listens to silence; reserved-but-unused slots do not appear.
    pub slots: BTreeMap<u64, Vec<SlotEntry>>,
}

/// Sorted, disjoint busy intervals `[start, end)` for one node, coalesced on
/// insert so first-fit scans stay short even on long serialized schedules.
#[derive(Default)]
struct BusyList(Vec<(u64, u64)>);

impl BusyList {
    /// End of some busy interval overlapping `[s, s+len)`, if any.
    fn conflict_end(&self, s: u64, len: u64) -> Option<u64> {
        let i = self.0.partition_point(|iv| iv.1 <= s);
        match self.0.get(i) {
            Some(&(start, end)) if start < s + len => Some(end),
            _ => None,
        }
    }

    fn insert(&mut self, start: u64, end: u64) {
        let i = self.0.partition_point(|iv| iv.0 < start);
        debug_assert!(i == 0 || self.0[i - 1].1 <= start, "overlapping insert");
        debug_assert!(
            i == self.0.len() || end <= self.0[i].0,
            "overlapping insert"
        );
        let merge_left = i > 0 && self.0[i - 1].1 == start;
        let merge_right = i < self.0.len() && self.0[i].0 == end;
        match (merge_left, merge_right) {
            (true, true) => {
                self.0[i - 1].1 = self.0[i].1;
                self.0.remove(i);
            }
            (true, false) => self.0[i - 1].1 = end,
            (false, true) => self.0[i].0 = start,
            (false, false) => self.0.insert(i, (start, end)),
        }
    }
}

/// Earliest `s >= from` such that `[s, s+len)` is free in both lists.
fn first_fit(a: &BusyList, b: &BusyList, from: u64, len: u64) -> u64 {
    debug_assert!(len >= 1);
    let mut s = from;
    loop {
        if let Some(end) = a.conflict_end(s, len) {
            s = end;
            continue;
        }
        if let Some(end) = b.conflict_end(s, len) {
            s = end;
            continue;
        }
        return s;
    }
}

/// Assigns start slots to the planned windows.
///
/// Deterministic greedy: windows are processed bottom-up (child level
/// descending, child id ascending); each takes the smallest start satisfying
/// precedence — a node transmits only after all of its own children's
/// windows have ended — and conflict-freedom: no two links sharing a node
/// ever occupy the same slot, counting the one-slot control mini-slot a
/// zero-length window occupies for bookkeeping.
pub fn assign_slots(windows: &[LinkWindow], tree: &Tree, discipline: Discipline) -> Schedule {
    let n = tree.node_count();
    let mut order: Vec<usize> = (0..windows.len()).collect();
    order.sort_by_key(|&i| {
        let w = &windows[i];
        (std::cmp::Reverse(tree.level(w.child)), w.child)
    });

    let mut busy: Vec<BusyList> = (0..n).map(|_| BusyList::default()).collect();
    // Earliest start each node's own window may take (precedence).
    let mut ready = vec![0u64; n];
    let mut placed: Vec<LinkWindow> = Vec::with_capacity(windows.len());
    for &i in &order {
        let mut w = windows[i].clone();
        // A zero-length window still occupies one slot for its control
        // mini-slot; reservation and precedence keep using the true length.
        let occupied = w.length_slots.max(1);
        let start = first_fit(&busy[w.child], &busy[w.parent], ready[w.child], occupied);
        w.start_slot = start;
        busy[w.child].insert(start, start + occupied);
        busy[w.parent].insert(start, start + occupied);
        ready[w.parent] = ready[w.parent].max(start + w.length_slots);
        placed.push(w);
    }

    let total_data_slots = placed.iter().map(LinkWindow::end_slot).max().unwrap_or(0);

    let mut slots: BTreeMap<u64, Vec<SlotEntry>> = BTreeMap::new();
    let mut push = |slot: u64, child: NodeId, parent: NodeId, kind: SlotKind| {
        slots.entry(slot).or_default().push(SlotEntry {
            child,
            parent,
            kind,
        });
    };
    for w in &placed {
        for k in 0..w.expected_packets {
            push(w.start_slot + k, w.child, w.parent, SlotKind::Data);
        }
        match discipline {
            Discipline::Tpo => {
                if w.expected_packets < w.capacity {
                    // The parent hears the first silent slot of the window.
                    push(
                        w.start_slot + w.expected_packets,
                        w.child,
                        w.parent,
                        SlotKind::IdleProbe,
                    );
                }
            }
            Discipline::Mtpo => {
                if w.expected_packets == 0 {
                    push(w.start_slot, w.child, w.parent, SlotKind::IdleProbe);
                }
            }
            Discipline::Etpo => {
                if w.expected_packets == 0 {
                    let kind = if w.has_control_exchange {
                        SlotKind::Control
                    } else {
                        SlotKind::IdleProbe
                    };
                    push(w.start_slot, w.child, w.parent, kind);
                }
            }
        }
    }

    Schedule {
        discipline,
        windows: placed,
        total_data_slots,
        slots,
    }
}

impl Schedule {
    /// Slots in `[0, total_data_slots)` during which each node's radio is on
    /// (transmitting, receiving, or probing); everything else is sleep.
    pub fn active_slot_counts(&self, node_count: usize) -> Vec<u64> {
        let mut counts = vec![0u64; node_count];
        for (&slot, entries) in &self.slots {
            if slot >= self.total_data_slots {
                continue; // trailing control mini-slot; no data slot to sleep through
            }
            for e in entries {
                counts[e.parent] += 1;
                if e.kind == SlotKind::Data {
                    counts[e.child] += 1;
                }
            }
        }
        counts
    }

    /// Debug dump: CSV `slot,child,parent,kind`, rows ordered by slot then
    /// child id.
    pub fn dump_csv(&self) -> String {
        let mut out = String::from("slot,child,parent,kind\n");
        for (&slot, entries) in &self.slots {
            let mut rows: Vec<&SlotEntry> = entries.iter().collect();
            rows.sort_by_key(|e| e.child);
            for e in rows {
                let _ = writeln!(out, "{},{},{},{}", slot, e.child, e.parent, e.kind.name());
            }
        }
        out
    }
}

/// A broken invariant found by [`verify_schedule`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScheduleViolation {
    /// Window names a parent other than the child's tree parent.
    WrongParent {
        child: NodeId,
        expected: NodeId,
        actual: NodeId,
    },
    /// Two windows for the same child.
    DuplicateWindow { child: NodeId },
    /// A window's child hangs below a node that has no window of its own.
    OrphanWindow { child: NodeId },
    /// Stored subtree capacity disagrees with the windowed alive set.
    CapacityMismatch {
        child: NodeId,
        expected: u64,
        actual: u64,
    },
    /// More expected packets than subtree members.
    ExpectedExceedsCapacity {
        child: NodeId,
        expected_packets: u64,
        capacity: u64,
    },
    /// Window length breaks the discipline's length rule.
    WindowLength {
        child: NodeId,
        expected: u64,
        actual: u64,
    },
    /// Control exchange flagged on a link where the discipline forbids it,
    /// or missing where it is required.
    ControlFlag { child: NodeId, expected: bool },
    /// A node's window starts before one of its children's windows ends.
    Precedence {
        node: NodeId,
        child: NodeId,
        start: u64,
        child_end: u64,
    },
    /// Two links sharing `node` in the same role occupy the same slot.
    Conflict {
        slot: u64,
        node: NodeId,
        first: (NodeId, NodeId),
        second: (NodeId, NodeId),
    },
    /// `node` would have to transmit and receive in the same slot.
    HalfDuplex {
        slot: u64,
        node: NodeId,
        transmit: (NodeId, NodeId),
        receive: (NodeId, NodeId),
    },
    /// Stored `total_data_slots` disagrees with the windows.
    TotalSlots { stored: u64, derived: u64 },
}

/// Re-derives every schedule invariant from the windows and the tree,
/// independently of how the schedule was built. Returns all violations;
/// an empty vector means the schedule is valid.
pub fn verify_schedule(schedule: &Schedule, tree: &Tree) -> Vec<ScheduleViolation> {
    let mut violations = Vec::new();
    let n = tree.node_count();
    let windows = &schedule.windows;

    // --- structural: parents, duplicates, orphans ---
    let mut window_of: Vec<Option<&LinkWindow>> = vec![None; n];
    let mut structural_ok = true;
    for w in windows {
        match tree.parent(w.child) {
            Some(p) if p == w.parent => {}
            Some(p) => {
                violations.push(ScheduleViolation::WrongParent {
                    child: w.child,
                    expected: p,
                    actual: w.parent,
                });
                structural_ok = false;
            }
            None => {
                violations.push(ScheduleViolation::WrongParent {
                    child: w.child,
                    expected: w.child,
                    actual: w.parent,
                });
                structural_ok = false;
            }
        }
        if window_of[w.child].is_some() {
            violations.push(ScheduleViolation::DuplicateWindow { child: w.child });
            structural_ok = false;
        } else {
            window_of[w.child] = Some(w);
        }
    }
    for w in windows {
        let p = w.parent;
        if p < n && p != tree.sink() && window_of[p].is_none() {
            violations.push(ScheduleViolation::OrphanWindow { child: w.child });
            structural_ok = false;
        }
    }

    // --- capacities and length rules over the windowed alive set ---
    if structural_ok {
        let mut capacity = vec![0u64; n];
        let mut has_window_child = vec![false; n];
        for &v in tree.bottom_up_order().iter() {
            let windowed = v == tree.sink() || window_of[v].is_some();
            if !windowed {
                continue;
            }
            capacity[v] += 1;
            if let Some(p) = tree.parent(v) {
                capacity[p] += capacity[v];
                has_window_child[p] = true;
            }
        }
        for w in windows {
            if w.capacity != capacity[w.child] {
                violations.push(ScheduleViolation::CapacityMismatch {
                    child: w.child,
                    expected: capacity[w.child],
                    actual: w.capacity,
                });
            }
            if w.expected_packets > w.capacity {
                violations.push(ScheduleViolation::ExpectedExceedsCapacity {
                    child: w.child,
                    expected_packets: w.expected_packets,
                    capacity: w.capacity,
                });
            }
            let is_leaf = !has_window_child[w.child];
            let (expected_len, expected_flag) = match schedule.discipline {
                Discipline::Tpo | Discipline::Mtpo => (w.capacity, false),
                Discipline::Etpo if is_leaf => (1, false),
                Discipline::Etpo => (w.expected_packets, true),
            };
            if w.length_slots != expected_len {
                violations.push(ScheduleViolation::WindowLength {
                    child: w.child,
                    expected: expected_len,
                    actual: w.length_slots,
                });
            }
            if w.has_control_exchange != expected_flag {
                violations.push(ScheduleViolation::ControlFlag {
                    child: w.child,
                    expected: expected_flag,
                });
            }
        }

        // --- precedence ---
        for w in windows {
            for &c in tree.children(w.child) {
                if let Some(u) = window_of[c] {
                    if w.start_slot < u.end_slot() {
                        violations.push(ScheduleViolation::Precedence {
                            node: w.child,
                            child: c,
                            start: w.start_slot,
                            child_end: u.end_slot(),
                        });
                    }
                }
            }
        }
    }

    // --- conflict-freedom and half-duplex ---
    // Occupied range per window: the reservation, or the one-slot control
    // mini-slot of a zero-length window.
    #[derive(Clone, Copy)]
    struct Use {
        start: u64,
        end: u64,
        link: (NodeId, NodeId),
        transmits: bool,
    }
    let mut uses: Vec<Vec<Use>> = vec![Vec::new(); n];
    for w in windows {
        let end = if w.length_slots == 0 {
            if w.has_control_exchange {
                w.start_slot + 1
            } else {
                w.start_slot // degenerate: occupies nothing
            }
        } else {
            w.end_slot()
        };
        if end == w.start_slot {
            continue;
        }
        let link = (w.child, w.parent);
        if w.child < n {
            uses[w.child].push(Use {
                start: w.start_slot,
                end,
                link,
                transmits: true,
            });
        }
        if w.parent < n {
            uses[w.parent].push(Use {
                start: w.start_slot,
                end,
                link,
                transmits: false,
            });
        }
    }
    for (node, mut node_uses) in uses.into_iter().enumerate() {
        node_uses.sort_by_key(|u| (u.start, u.link));
        let mut active: Vec<Use> = Vec::new();
        for u in node_uses {
            active.retain(|a| a.end > u.start);
            for a in &active {
                let slot = u.start.max(a.start);
                match (a.transmits, u.transmits) {
                    (true, false) => violations.push(ScheduleViolation::HalfDuplex {
                        slot,
                        node,
                        transmit: a.link,
                        receive: u.link,
                    }),
                    (false, true) => violations.push(ScheduleViolation::HalfDuplex {
                        slot,
                        node,
                        transmit: u.link,
                        receive: a.link,
                    }),
                    _ => violations.push(ScheduleViolation::Conflict {
                        slot,
                        node,
                        first: a.link,
                        second: u.link,
                    }),
                }
            }
            active.push(u);
        }
    }

    // --- stored totals ---
    let derived = windows.iter().map(LinkWindow::end_slot).max().unwrap_or(0);
    if schedule.total_data_slots != derived {
        violations.push(ScheduleViolation::TotalSlots {
            stored: schedule.total_data_slots,
            derived,
        });
    }

    violations
}

// ======================================================================
// tests
// ======================================================================
