//! Slotted synchronous-transmission flooding.
//!
//! One flooding instance disseminates a single packet from an initiator over
//! a node set. Time is quantized into alternating TX/RX slots: a node that
//! decodes a packet retransmits it in the next slot with the relay counter
//! incremented, until it has spent its per-node transmission budget (`ntx`).
//! The initiator re-initiates after `initiator_timeout` while it has heard
//! nothing back. In `persistent` mode (two-node measurement links) every one
//! of the `ntx` packet copies is retried until acknowledged, not just the
//! first.
//!
//! [`run_chaos_share`] runs the companion all-to-all primitive: nodes merge
//! flag vectors until everyone holds the full set.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::util::RunningStats;
use crate::{Error, Micros, NodeId, Result};

/// Parameters of one flooding instance.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GlossyConfig {
    /// Transmission budget per node.
    pub ntx: u32,
    /// Microseconds per TX-or-RX slot.
    pub slot_duration: Micros,
    /// How long the initiator waits for a reply before re-initiating.
    pub initiator_timeout: Micros,
    /// Hard bound on the instance (the Glossy duration).
    pub max_duration: Micros,
    /// Transmission power index, 0..=31.
    pub txp: u8,
    /// Retry every unacknowledged packet copy, not only the first.
    pub persistent: bool,
}

impl GlossyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ntx < 1
            || self.slot_duration == 0
            || self.initiator_timeout < self.slot_duration
            || self.max_duration < u64::from(self.ntx) * 2 * self.slot_duration
        {
            return Err(Error::Config(format!(
                "inconsistent flood config: {self:?}"
            )));
        }
        if self.txp > 31 {
            return Err(Error::UnknownPowerIndex(self.txp));
        }
        Ok(())
    }
}

/// A transmission active in the current slot.
#[derive(Debug, Clone, Copy)]
pub struct SlotTx {
    pub sender: NodeId,
    /// Relay counter carried in the packet; equal counters mean identical
    /// packet content.
    pub counter: u32,
}

/// What a receiver decoded in one slot.
#[derive(Debug, Clone, Copy)]
pub struct Decoded {
    pub counter: u32,
    pub rssi_dbm: f64,
    pub lqi: f64,
}

/// Answers reception queries for the flood state machine.
pub trait LinkOracle {
    /// Resolve what `receiver` decodes out of the slot's transmissions, if
    /// anything. `txs` may include the receiver's own transmission; the
    /// oracle must ignore it.
    fn resolve(
        &self,
        receiver: NodeId,
        txs: &[SlotTx],
        txp: u8,
        at: Micros,
        rng: &mut ChaCha8Rng,
    ) -> Option<Decoded>;
}

/// Ideal channel: everything within `range_m` decodes, no noise.
///
/// Ties between distinct contents go to the nearest transmitter, then the
/// lowest node id, which keeps runs deterministic.
pub struct PerfectChannel<'a> {
    pub positions: &'a [(f64, f64)],
    pub range_m: f64,
}

impl<'a> PerfectChannel<'a> {
    fn dist(&self, a: NodeId, b: NodeId) -> f64 {
        let (ax, ay) = self.positions[a];
        let (bx, by) = self.positions[b];
        ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
    }

    /// Connectivity edges implied by the range, as an adjacency list.
    pub fn adjacency(&self, nodes: &[NodeId]) -> Vec<Vec<NodeId>> {
        let mut adj = vec![Vec::new(); self.positions.len()];
        for (i, &a) in nodes.iter().enumerate() {
            for &b in &nodes[i + 1..] {
                if self.dist(a, b) <= self.range_m {
                    adj[a].push(b);
                    adj[b].push(a);
                }
            }
        }
        adj
    }
}

impl<'a> LinkOracle for PerfectChannel<'a> {
    fn resolve(
        &self,
        receiver: NodeId,
        txs: &[SlotTx],
        _txp: u8,
        _at: Micros,
        _rng: &mut ChaCha8Rng,
    ) -> Option<Decoded> {
        let mut best: Option<(f64, NodeId, u32)> = None;
        for tx in txs {
            if tx.sender == receiver {
                continue;
            }
            let d = self.dist(tx.sender, receiver);
            if d > self.range_m {
                continue;
            }
            let candidate = (d, tx.sender, tx.counter);
            best = match best {
                None => Some(candidate),
                Some(b) if (candidate.0, candidate.1) < (b.0, b.1) => Some(candidate),
                b => b,
            };
        }
        best.map(|(_, _, counter)| Decoded {
            counter,
            rssi_dbm: -60.0,
            lqi: 108.0,
        })
    }
}

/// Per-node outcome of one flooding instance.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NodeOutcome {
    pub received: bool,
    /// Relay counter of the first decoded packet (hops travelled before the
    /// packet reached this node).
    pub first_rx_relay_count: Option<u32>,
    /// Distinct packet copies decoded; duplicate retries do not count.
    pub rx_count: u32,
    /// Distinct packet copies transmitted (at most `ntx`); persistent
    /// retries of the same copy fold into the timeout count instead.
    pub tx_count: u32,
    pub radio_on: Micros,
    /// Microseconds from instance start to the first decode.
    pub latency: Option<Micros>,
    /// Initiation attempts including the first; 0 for non-initiators.
    pub initiator_timeout_count: u32,
    pub rssi: RunningStats,
    pub lqi: RunningStats,
}

/// Outcome of one flooding instance over the whole node set.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GlossyRunResult {
    pub initiator: NodeId,
    pub start_time: Micros,
    pub max_duration: Micros,
    pub ntx: u32,
    pub nodes: BTreeMap<NodeId, NodeOutcome>,
}

impl GlossyRunResult {
    pub fn outcome(&self, node: NodeId) -> Result<&NodeOutcome> {
        self.nodes.get(&node).ok_or(Error::ReceiverMissing(node))
    }
}

struct NodeState {
    rx_count: u32,
    tx_count: u32,
    first_rx: Option<(u32, Micros)>,
    timeout_count: u32,
    seen: Vec<bool>,
    pending: Option<(u32, bool)>, // (counter, is_retry)
    last_tx_start: Option<Micros>,
    awaiting: Option<u32>,
    last_relay: Option<(u32, u32)>, // (decoded counter, relayed counter)
    done_at: Option<Micros>,
    rssi: RunningStats,
    lqi: RunningStats,
}

impl NodeState {
    fn new(seen_capacity: usize) -> Self {
        NodeState {
            rx_count: 0,
            tx_count: 0,
            first_rx: None,
            timeout_count: 0,
            seen: vec![false; seen_capacity],
            pending: None,
            last_tx_start: None,
            awaiting: None,
            last_relay: None,
            done_at: None,
            rssi: RunningStats::new(),
            lqi: RunningStats::new(),
        }
    }
}

/// Run one flooding instance. Deterministic given inputs and the RNG state.
pub fn run_flood(
    nodes: &[NodeId],
    initiator: NodeId,
    config: &GlossyConfig,
    oracle: &dyn LinkOracle,
    start_time: Micros,
    rng: &mut ChaCha8Rng,
) -> Result<GlossyRunResult> {
    config.validate()?;
    if nodes.is_empty() {
        return Err(Error::EmptyNodeSet);
    }
    if !nodes.contains(&initiator) {
        return Err(Error::InitiatorNotInSet(initiator));
    }

    let slots = (config.max_duration / config.slot_duration) as usize;
    // Relay counters grow by at most one per slot.
    let counter_cap = slots + 2;
    let mut order: Vec<NodeId> = nodes.to_vec();
    order.sort_unstable();
    order.dedup();
    let mut states: BTreeMap<NodeId, NodeState> = order
        .iter()
        .map(|&n| (n, NodeState::new(counter_cap)))
        .collect();

    // First initiation.
    states.get_mut(&initiator).unwrap().pending = Some((0, false));
    states.get_mut(&initiator).unwrap().timeout_count = 1;

    let mut txs: Vec<SlotTx> = Vec::new();
    for slot in 0..slots {
        let now = start_time + slot as u64 * config.slot_duration;
        let slot_end = now + config.slot_duration;

        // Timeout-driven re-initiation / retry.
        {
            let st = states.get_mut(&initiator).unwrap();
            let idle = st.pending.is_none() && st.done_at.is_none();
            let wants_retry = if config.persistent {
                st.awaiting.is_some()
            } else {
                st.rx_count == 0 && st.tx_count > 0
            };
            if idle && wants_retry {
                if let Some(last) = st.last_tx_start {
                    if now - last >= config.initiator_timeout {
                        let counter = st.awaiting.unwrap_or(0);
                        st.pending = Some((counter, true));
                        st.timeout_count += 1;
                    }
                }
            }
        }

        // Gather this slot's transmissions.
        txs.clear();
        for &n in &order {
            let st = states.get_mut(&n).unwrap();
            if let Some((counter, is_retry)) = st.pending.take() {
                if !is_retry {
                    st.tx_count += 1;
                }
                st.last_tx_start = Some(now);
                if n == initiator {
                    st.awaiting = Some(counter);
                }
                txs.push(SlotTx { sender: n, counter });
                // A relay is finished once its budget is spent; the
                // initiator in persistent mode still waits for the ack.
                let must_wait = n == initiator && config.persistent;
                if st.tx_count >= config.ntx && !must_wait && st.done_at.is_none() {
                    st.done_at = Some(slot_end);
                }
            }
        }

        // Receptions.
        if !txs.is_empty() {
            for &n in &order {
                let st = &states[&n];
                if st.done_at.is_some() || txs.iter().any(|t| t.sender == n) {
                    continue;
                }
                let decoded = oracle.resolve(n, &txs, config.txp, now, rng);
                let st = states.get_mut(&n).unwrap();
                if let Some(d) = decoded {
                    st.rssi.push(d.rssi_dbm);
                    st.lqi.push(d.lqi);
                    let c = d.counter as usize;
                    let is_new = c < st.seen.len() && !st.seen[c];
                    if is_new {
                        st.seen[c] = true;
                        st.rx_count += 1;
                        if st.first_rx.is_none() {
                            st.first_rx = Some((d.counter, slot_end - start_time));
                        }
                        if st.tx_count < config.ntx {
                            st.pending = Some((d.counter + 1, false));
                            st.last_relay = Some((d.counter, d.counter + 1));
                        }
                    } else if config.persistent {
                        // Duplicate decode: the far side missed our relay, so
                        // repeat it without touching the budget.
                        if let Some((rxc, relayed)) = st.last_relay {
                            if rxc == d.counter && st.pending.is_none() {
                                st.pending = Some((relayed, true));
                            }
                        }
                    }
                    if n == initiator {
                        if let Some(awaited) = st.awaiting {
                            if d.counter > awaited {
                                st.awaiting = None;
                                if config.persistent
                                    && st.tx_count >= config.ntx
                                    && st.done_at.is_none()
                                    && st.pending.is_none()
                                {
                                    st.done_at = Some(slot_end);
                                }
                            }
                        }
                    }
                }
            }
        }

        // Stop early once nothing can happen any more.
        let all_done = states.values().all(|s| s.done_at.is_some());
        if all_done {
            break;
        }
        let any_pending = states.values().any(|s| s.pending.is_some());
        if !any_pending && txs.is_empty() {
            let init = &states[&initiator];
            let init_may_retry = init.done_at.is_none()
                && if config.persistent {
                    init.awaiting.is_some()
                } else {
                    init.rx_count == 0
                };
            if !init_may_retry {
                break;
            }
        }
    }

    let nodes_out = states
        .into_iter()
        .map(|(n, st)| {
            let outcome = NodeOutcome {
                received: st.rx_count > 0,
                first_rx_relay_count: st.first_rx.map(|(c, _)| c),
                rx_count: st.rx_count,
                tx_count: st.tx_count,
                radio_on: st.done_at.map_or(config.max_duration, |t| t - start_time),
                latency: st.first_rx.map(|(_, lat)| lat),
                initiator_timeout_count: st.timeout_count,
                rssi: st.rssi,
                lqi: st.lqi,
            };
            (n, outcome)
        })
        .collect();

    Ok(GlossyRunResult {
        initiator,
        start_time,
        max_duration: config.max_duration,
        ntx: config.ntx,
        nodes: nodes_out,
    })
}

/// Fixed-width flag vector shared in the all-to-all phase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlagSet {
    words: Vec<u64>,
    len: usize,
}

impl FlagSet {
    pub fn new(len: usize) -> Self {
        FlagSet {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn set(&mut self, bit: usize) {
        assert!(bit < self.len);
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn get(&self, bit: usize) -> bool {
        self.words[bit / 64] >> (bit % 64) & 1 == 1
    }

    /// Union in another set; returns whether this set changed.
    pub fn union_in(&mut self, other: &FlagSet) -> bool {
        let mut changed = false;
        for (w, o) in self.words.iter_mut().zip(&other.words) {
            let merged = *w | *o;
            changed |= merged != *w;
            *w = merged;
        }
        changed
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_full(&self) -> bool {
        self.count() == self.len
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Parameters for one all-to-all sharing round.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ChaosConfig {
    pub slot_duration: Micros,
    pub max_duration: Micros,
    pub txp: u8,
    /// Transmission budget per node.
    pub tx_budget: u32,
    /// Probability that an armed node actually transmits in a slot; the
    /// jitter lets the capture margin pick a winner on symmetric topologies.
    pub gate_prob: f64,
    /// Re-arm after this many silent slots while the share is incomplete.
    pub retry_slots: u32,
    /// Transmissions a node still makes after completing its own vector.
    pub settle_tx: u32,
}

impl Default for ChaosConfig {
    fn default() -> Self {
        ChaosConfig {
            slot_duration: 4_000,
            max_duration: 400_000,
            txp: 31,
            tx_budget: 60,
            gate_prob: 0.75,
            retry_slots: 3,
            settle_tx: 4,
        }
    }
}

/// Per-node result of an all-to-all share.
#[derive(Debug, Clone, PartialEq)]
pub struct ChaosNodeResult {
    pub flags: FlagSet,
    /// Microseconds from round start until the node held the full vector.
    pub completion: Option<Micros>,
    pub radio_on: Micros,
    pub tx_count: u32,
}

struct ChaosNodeState {
    flags: FlagSet,
    armed: bool,
    tx_count: u32,
    silent_slots: u32,
    completion: Option<Micros>,
    txs_since_full: u32,
    off_at: Option<Micros>,
}

/// All-to-all sharing of per-contributor flags.
///
/// Every contributor claims one flag slot; nodes merge whatever they decode
/// and keep gossiping until everyone holds the full vector, budgets run out,
/// or `max_duration` passes.
pub fn run_chaos_share(
    nodes: &[NodeId],
    contributions: &[(NodeId, usize)],
    config: &ChaosConfig,
    oracle: &dyn LinkOracle,
    start_time: Micros,
    rng: &mut ChaCha8Rng,
) -> Result<BTreeMap<NodeId, ChaosNodeResult>> {
    if nodes.is_empty() {
        return Err(Error::EmptyNodeSet);
    }
    let flag_count = contributions.len();
    let mut claimed: BTreeMap<usize, NodeId> = BTreeMap::new();
    for &(node, slot) in contributions {
        if slot >= flag_count {
            return Err(Error::Config(format!(
                "contribution slot {slot} out of range 0..{flag_count}"
            )));
        }
        if let Some(&first) = claimed.get(&slot) {
            return Err(Error::SlotCollision {
                slot,
                first,
                second: node,
            });
        }
        if !nodes.contains(&node) {
            return Err(Error::InitiatorNotInSet(node));
        }
        claimed.insert(slot, node);
    }

    let mut order: Vec<NodeId> = nodes.to_vec();
    order.sort_unstable();
    order.dedup();
    let mut states: BTreeMap<NodeId, ChaosNodeState> = order
        .iter()
        .map(|&n| {
            (
                n,
                ChaosNodeState {
                    flags: FlagSet::new(flag_count),
                    armed: false,
                    tx_count: 0,
                    silent_slots: 0,
                    completion: None,
                    txs_since_full: 0,
                    off_at: None,
                },
            )
        })
        .collect();
    for (&slot, &node) in &claimed {
        let st = states.get_mut(&node).unwrap();
        st.flags.set(slot);
        st.armed = true;
        if st.flags.is_full() {
            st.completion = Some(0);
        }
    }

    let slots = (config.max_duration / config.slot_duration) as usize;
    let mut group_vectors: Vec<FlagSet> = Vec::new();
    let mut txs: Vec<SlotTx> = Vec::new();
    for slot in 0..slots {
        let now = start_time + slot as u64 * config.slot_duration;
        let slot_end = now + config.slot_duration;

        txs.clear();
        group_vectors.clear();
        for &n in &order {
            let st = states.get_mut(&n).unwrap();
            if st.off_at.is_some() || !st.armed || st.tx_count >= config.tx_budget {
                continue;
            }
            let gate: f64 = rng.gen();
            if gate >= config.gate_prob {
                continue;
            }
            st.armed = false;
            st.tx_count += 1;
            if st.flags.is_full() {
                st.txs_since_full += 1;
            }
            let key = match group_vectors.iter().position(|v| *v == st.flags) {
                Some(k) => k,
                None => {
                    group_vectors.push(st.flags.clone());
                    group_vectors.len() - 1
                }
            };
            txs.push(SlotTx {
                sender: n,
                counter: key as u32,
            });
        }

        for &n in &order {
            let st = &states[&n];
            if st.off_at.is_some() || txs.iter().any(|t| t.sender == n) {
                continue;
            }
            let decoded = if txs.is_empty() {
                None
            } else {
                oracle.resolve(n, &txs, config.txp, now, rng)
            };
            let st = states.get_mut(&n).unwrap();
            match decoded {
                Some(d) => {
                    st.silent_slots = 0;
                    let rx = &group_vectors[d.counter as usize];
                    let changed = st.flags.union_in(rx);
                    if changed {
                        st.armed = true;
                        if st.flags.is_full() && st.completion.is_none() {
                            st.completion = Some(slot_end - start_time);
                        }
                    } else if rx != &st.flags {
                        // The sender lags behind; help it catch up.
                        st.armed = true;
                    }
                }
                None => {
                    st.silent_slots += 1;
                    if st.silent_slots >= config.retry_slots
                        && !st.flags.is_full()
                        && st.flags.count() > 0
                        && st.tx_count < config.tx_budget
                    {
                        st.armed = true;
                        st.silent_slots = 0;
                    }
                }
            }
        }

        // Nodes leave once they are complete and have settled (or nothing is
        // moving around them any more), or ran out of budget after completing.
        for &n in &order {
            let st = states.get_mut(&n).unwrap();
            if st.off_at.is_none()
                && st.flags.is_full()
                && (st.txs_since_full >= config.settle_tx
                    || st.tx_count >= config.tx_budget
                    || st.silent_slots >= 2 * config.retry_slots)
            {
                st.off_at = Some(slot_end);
            }
        }

        if states.values().all(|s| s.off_at.is_some()) {
            break;
        }
    }

    Ok(states
        .into_iter()
        .map(|(n, st)| {
            (
                n,
                ChaosNodeResult {
                    completion: st.completion,
                    radio_on: st.off_at.map_or(config.max_duration, |t| t - start_time),
                    tx_count: st.tx_count,
                    flags: st.flags,
                },
            )
        })
        .collect())
}


#[cfg(test)]
mod tests {
    use super::test_channels::*;
    use super::*;
    use crate::util::rng_from_seed;

    fn two_node_positions() -> Vec<(f64, f64)> {
        vec![(0.0, 0.0), (0.0, 12.0)]
    }

    fn dc_config(ntx: u32) -> GlossyConfig {
        GlossyConfig {
            ntx,
            slot_duration: 1_000,
            initiator_timeout: 3_000,
            max_duration: 10_000,
            txp: 15,
            persistent: false,
        }
    }

    #[test]
    fn two_nodes_perfect_channel() {
        let pos = two_node_positions();
        let oracle = PerfectChannel {
            positions: &pos,
            range_m: 20.0,
        };
        let mut rng = rng_from_seed(1);
        let res = run_flood(&[0, 1], 0, &dc_config(3), &oracle, 0, &mut rng).unwrap();
        let rx = res.outcome(1).unwrap();
        assert!(rx.received);
        assert_eq!(rx.rx_count, 3);
        assert_eq!(rx.first_rx_relay_count, Some(0));
        assert_eq!(rx.latency, Some(1_000));
        let init = res.outcome(0).unwrap();
        assert_eq!(init.initiator_timeout_count, 1);
        assert_eq!(init.tx_count, 3);
        assert_eq!(rx.initiator_timeout_count, 0);
    }

    #[test]
    fn two_nodes_fully_blocked() {
        let mut rng = rng_from_seed(2);
        let res = run_flood(&[0, 1], 0, &dc_config(3), &BlockedChannel, 0, &mut rng).unwrap();
        let rx = res.outcome(1).unwrap();
        assert!(!rx.received);
        assert_eq!(rx.rx_count, 0);
        assert_eq!(rx.latency, None);
        assert_eq!(rx.first_rx_relay_count, None);
        let init = res.outcome(0).unwrap();
        assert!(
            init.initiator_timeout_count > 1,
            "tc {}",
            init.initiator_timeout_count
        );
        assert_eq!(init.rx_count, 0);
        // Attempts land at slots 0, 3, 6, 9.
        assert_eq!(init.initiator_timeout_count, 4);
    }

    #[test]
    fn persistent_mode_recovers_from_mid_exchange_loss() {
        let pos = two_node_positions();
        // Block the air during slots 2..5 (the middle of the exchange).
        let gated = GatedChannel {
            inner: PerfectChannel {
                positions: &pos,
                range_m: 20.0,
            },
            blocked: vec![(2_000, 5_000)],
        };
        let base = GlossyConfig {
            ntx: 3,
            slot_duration: 1_000,
            initiator_timeout: 2_000,
            max_duration: 20_000,
            txp: 15,
            persistent: false,
        };
        let mut rng = rng_from_seed(3);
        let stalled = run_flood(&[0, 1], 0, &base, &gated, 0, &mut rng).unwrap();
        let mut rng = rng_from_seed(3);
        let persistent = run_flood(
            &[0, 1],
            0,
            &GlossyConfig {
                persistent: true,
                ..base
            },
            &gated,
            0,
            &mut rng,
        )
        .unwrap();
        let stalled_rx = stalled.outcome(1).unwrap().rx_count;
        let persistent_rx = persistent.outcome(1).unwrap().rx_count;
        assert!(
            stalled_rx < base.ntx,
            "standard mode should stall, got {stalled_rx}"
        );
        assert_eq!(persistent_rx, base.ntx, "persistent mode should recover");
        assert!(persistent.outcome(0).unwrap().initiator_timeout_count > 1);
    }

    #[test]
    fn grid_relay_counts_match_bfs_oracle() {
        // 5x5 grid, 10 m pitch, range just over one pitch.
        let mut pos = Vec::new();
        for y in 0..5 {
            for x in 0..5 {
                pos.push((x as f64 * 10.0, y as f64 * 10.0));
            }
        }
        let nodes: Vec<NodeId> = (0..pos.len()).collect();
        let oracle = PerfectChannel {
            positions: &pos,
            range_m: 10.5,
        };
        let cfg = GlossyConfig {
            ntx: 5,
            slot_duration: 4_000,
            initiator_timeout: 12_000,
            max_duration: 120_000,
            txp: 31,
            persistent: false,
        };
        let mut rng = rng_from_seed(4);
        let res = run_flood(&nodes, 0, &cfg, &oracle, 0, &mut rng).unwrap();

        // Independent BFS over the same connectivity graph.
        let adj = oracle.adjacency(&nodes);
        let mut dist = vec![usize::MAX; nodes.len()];
        dist[0] = 0;
        let mut queue = std::collections::VecDeque::from([0usize]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        for &n in &nodes[1..] {
            let out = res.outcome(n).unwrap();
            assert!(out.received, "node {n} missed the flood");
            assert_eq!(
                out.first_rx_relay_count,
                Some(dist[n] as u32 - 1),
                "node {n} at bfs depth {}",
                dist[n]
            );
            assert_eq!(out.latency, Some(dist[n] as u64 * 4_000));
        }
    }

    #[test]
    fn budgets_hold_under_lossy_channel() {
        let nodes: Vec<NodeId> = (0..8).collect();
        let cfg = GlossyConfig {
            ntx: 4,
            slot_duration: 1_000,
            initiator_timeout: 3_000,
            max_duration: 60_000,
            txp: 15,
            persistent: false,
        };
        for seed in 0..30 {
            let mut rng = rng_from_seed(seed);
            let res =
                run_flood(&nodes, 0, &cfg, &BernoulliChannel { p: 0.5 }, 0, &mut rng).unwrap();
            for (n, out) in &res.nodes {
                assert!(out.tx_count <= cfg.ntx, "node {n} tx {}", out.tx_count);
                assert!(out.rx_count <= cfg.ntx, "node {n} rx {}", out.rx_count);
                assert!(out.radio_on <= cfg.max_duration);
                assert_eq!(out.received, out.rx_count > 0);
                assert_eq!(out.received, out.latency.is_some());
                assert_eq!(out.received, out.first_rx_relay_count.is_some());
            }
        }
    }

    #[test]
    fn identical_seed_identical_result() {
        let pos = two_node_positions();
        let oracle = PerfectChannel {
            positions: &pos,
            range_m: 20.0,
        };
        let run = |seed| {
            let mut rng = rng_from_seed(seed);
            run_flood(&[0, 1], 0, &dc_config(5), &oracle, 0, &mut rng).unwrap()
        };
        assert_eq!(run(9), run(9));
    }

    #[test]
    fn more_reliable_channel_never_hurts_coverage() {
        let nodes: Vec<NodeId> = (0..4).collect();
        let cfg = dc_config(3);
        let mean_rx = |p: f64| {
            let mut total = 0u64;
            for seed in 0..500 {
                let mut rng = rng_from_seed(1_000 + seed);
                let res = run_flood(&nodes, 0, &cfg, &BernoulliChannel { p }, 0, &mut rng).unwrap();
                total += res
                    .nodes
                    .values()
                    .map(|o| u64::from(o.rx_count))
                    .sum::<u64>();
            }
            total as f64 / 500.0
        };
        let low = mean_rx(0.4);
        let high = mean_rx(0.7);
        assert!(high >= low - 0.05, "coverage dropped: {low} -> {high}");
    }

    #[test]
    fn flood_input_validation() {
        let mut rng = rng_from_seed(0);
        assert!(matches!(
            run_flood(&[], 0, &dc_config(3), &BlockedChannel, 0, &mut rng),
            Err(Error::EmptyNodeSet)
        ));
        assert!(matches!(
            run_flood(&[1, 2], 0, &dc_config(3), &BlockedChannel, 0, &mut rng),
            Err(Error::InitiatorNotInSet(0))
        ));
    }

    #[test]
    fn chaos_single_contributor_completes_immediately() {
        let pos = vec![(0.0, 0.0)];
        let oracle = PerfectChannel {
            positions: &pos,
            range_m: 10.0,
        };
        let mut rng = rng_from_seed(5);
        let res = run_chaos_share(
            &[0],
            &[(0, 0)],
            &ChaosConfig::default(),
            &oracle,
            0,
            &mut rng,
        )
        .unwrap();
        let r = &res[&0];
        assert!(r.flags.is_full());
        assert_eq!(r.completion, Some(0));
    }

    #[test]
    fn chaos_slot_collision_rejected() {
        let pos = vec![(0.0, 0.0), (10.0, 0.0)];
        let oracle = PerfectChannel {
            positions: &pos,
            range_m: 20.0,
        };
        let mut rng = rng_from_seed(6);
        let err = run_chaos_share(
            &[0, 1],
            &[(0, 0), (1, 0)],
            &ChaosConfig::default(),
            &oracle,
            0,
            &mut rng,
        )
        .unwrap_err();
        assert!(matches!(err, Error::SlotCollision { slot: 0, .. }));
    }

    #[test]
    fn chaos_connected_grid_reaches_full_union() {
        // 4x5 grid of contributors, plus two passive forwarders.
        let mut pos = Vec::new();
        for y in 0..4 {
            for x in 0..5 {
                pos.push((x as f64 * 10.0, y as f64 * 10.0));
            }
        }
        pos.push((45.0, 15.0));
        pos.push((45.0, 25.0));
        let nodes: Vec<NodeId> = (0..pos.len()).collect();
        let contributions: Vec<(NodeId, usize)> = (0..20).map(|i| (i, i)).collect();
        let oracle = PerfectChannel {
            positions: &pos,
            range_m: 12.0,
        };
        let mut rng = rng_from_seed(7);
        let res = run_chaos_share(
            &nodes,
            &contributions,
            &ChaosConfig::default(),
            &oracle,
            0,
            &mut rng,
        )
        .unwrap();
        for (n, r) in &res {
            assert!(
                r.flags.is_full(),
                "node {n} holds {}/{} flags",
                r.flags.count(),
                20
            );
            assert!(r.completion.is_some());
        }
    }

    #[test]
    fn flagset_union_counts() {
        let mut a = FlagSet::new(70);
        let mut b = FlagSet::new(70);
        a.set(0);
        b.set(69);
        assert!(a.union_in(&b));
        assert!(!a.union_in(&b));
        assert_eq!(a.count(), 2);
        assert!(a.get(69));
        assert!(!a.is_full());
    }
}
