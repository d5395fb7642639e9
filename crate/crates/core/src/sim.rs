//! Experiment runner: topology construction plus the periodic three-phase
//! loop over it.
//!
//! Each period runs the network-wide sync flood, then the per-MP two-node
//! measurement instances (with DMPG runtime compression), then optionally
//! the all-to-all share. Measurement points are simulated independently of
//! each other inside the measurement phase; vehicles obstruct any link whose
//! line-of-sight corridor they cross, capped at one grid cell around their
//! own crossing point.
//!
//! Everything is driven by seeds derived from `(seed, phase, period, mp,
//! instance)`, so sweeps stay aligned across configurations and a wide-area
//! run reproduces an isolated measurement point bit-for-bit.

use std::cell::RefCell;
use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelConfig, LinkCalibration, ObstructionModel, ObstructionSource};
use crate::flood::{
    run_chaos_share, run_flood, ChaosConfig, Decoded, GlossyConfig, LinkOracle, PerfectChannel,
    SlotTx,
};
use crate::metrics::{extract_window, FeatureVector, InstanceRecord, MetricsConfig};
use crate::schedule::{reschedule_dmpg, PhaseKind, PhaseSchedule, Strategy};
use crate::traffic::{GroundTruthLog, LabelMode, TrafficConfig, VehicleClass};
use crate::util::{derive_seed, rng_from_seed, RunningStats};
use crate::{Error, Micros, NodeId, Result};

const TAG_SC: u64 = 0;
const TAG_DC: u64 = 1;
const TAG_IPHASE: u64 = 2;
const TAG_TRAFFIC: u64 = 3;
const TAG_SWEEP: u64 = 4;

/// One measurement point: two devices across the road.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MpPair {
    pub initiator: NodeId,
    pub receiver: NodeId,
}

/// Node placement plus role assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub positions: Vec<(f64, f64)>,
    pub mp_pairs: Vec<MpPair>,
    pub forwarders: Vec<NodeId>,
}

impl Topology {
    pub fn node_count(&self) -> usize {
        self.positions.len()
    }

    pub fn all_nodes(&self) -> Vec<NodeId> {
        (0..self.positions.len()).collect()
    }

    /// Midpoint of an MP's line of sight.
    pub fn mp_midpoint(&self, mp: usize) -> (f64, f64) {
        let pair = self.mp_pairs[mp];
        let (ax, ay) = self.positions[pair.initiator];
        let (bx, by) = self.positions[pair.receiver];
        ((ax + bx) / 2.0, (ay + by) / 2.0)
    }

    /// Unit vector along the MP link (initiator towards receiver).
    fn mp_link_dir(&self, mp: usize) -> (f64, f64) {
        let pair = self.mp_pairs[mp];
        let (ax, ay) = self.positions[pair.initiator];
        let (bx, by) = self.positions[pair.receiver];
        let len = ((bx - ax).powi(2) + (by - ay).powi(2)).sqrt();
        ((bx - ax) / len, (by - ay) / len)
    }

    pub fn mp_nodes(&self) -> Vec<NodeId> {
        self.mp_pairs
            .iter()
            .flat_map(|p| [p.initiator, p.receiver])
            .collect()
    }
}

/// Named deployment geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub area_m: (f64, f64),
    pub inter_mp_distance_m: f64,
    pub mp_count: usize,
    pub fn_count: usize,
    /// Parallel roads carrying the measurement points.
    pub roads: usize,
    /// Distance between the two devices of an MP.
    pub mp_link_length_m: f64,
}

impl Scenario {
    /// 100 nodes over 2000 x 2000 m, one road, 50 m between MPs.
    pub fn es1() -> Scenario {
        Scenario {
            name: "ES-1".to_string(),
            area_m: (2000.0, 2000.0),
            inter_mp_distance_m: 50.0,
            mp_count: 20,
            fn_count: 60,
            roads: 1,
            mp_link_length_m: 12.0,
        }
    }

    /// 100 nodes over 1000 x 1000 m, two roads, 75 m between MPs.
    pub fn es2() -> Scenario {
        Scenario {
            name: "ES-2".to_string(),
            area_m: (1000.0, 1000.0),
            inter_mp_distance_m: 75.0,
            mp_count: 20,
            fn_count: 60,
            roads: 2,
            mp_link_length_m: 12.0,
        }
    }

    /// The two-node roadside measurement setup.
    pub fn single_mp() -> Scenario {
        Scenario {
            name: "single-mp".to_string(),
            area_m: (30.0, 30.0),
            inter_mp_distance_m: 50.0,
            mp_count: 1,
            fn_count: 0,
            roads: 1,
            mp_link_length_m: 12.0,
        }
    }

    pub fn with_mp_count(mut self, n: usize) -> Scenario {
        self.mp_count = n;
        self
    }

    pub fn with_fn_count(mut self, n: usize) -> Scenario {
        self.fn_count = n;
        self
    }
}

fn split_between_roads(total: usize, roads: usize) -> Vec<usize> {
    let mut out = vec![total / roads; roads];
    for slot in out.iter_mut().take(total % roads) {
        *slot += 1;
    }
    out
}

/// Deterministic node placement for a scenario.
///
/// MPs straddle their road at `inter_mp_distance` pitch; forwarders fill
/// rows parallel to the roads, nearest rows first. Node ids: MP devices
/// first (initiator before receiver), then forwarders.
pub fn make_grid(scenario: &Scenario) -> Result<Topology> {
    if scenario.mp_count == 0 {
        return Err(Error::NoMeasurementPoints);
    }
    let (w, h) = scenario.area_m;
    let roads = scenario.roads.max(1);
    let per_road = split_between_roads(scenario.mp_count, roads);
    let max_span = (*per_road.iter().max().unwrap() as f64 - 1.0) * scenario.inter_mp_distance_m;
    if max_span > w {
        return Err(Error::Config(format!(
            "{} MPs at {} m pitch exceed the {} m area width",
            scenario.mp_count, scenario.inter_mp_distance_m, w
        )));
    }
    // Roads cluster around the grid's horizontal midline, 150 m apart.
    let road_y: Vec<f64> = (0..roads)
        .map(|r| h / 2.0 + (r as f64 - (roads as f64 - 1.0) / 2.0) * 150.0)
        .collect();
    let half_link = scenario.mp_link_length_m / 2.0;

    let mut positions = Vec::new();
    let mut mp_pairs = Vec::new();
    let mut margins = Vec::new();
    for (r, &count) in per_road.iter().enumerate() {
        let span = (count as f64 - 1.0) * scenario.inter_mp_distance_m;
        let margin = (w - span) / 2.0;
        margins.push(margin);
        for j in 0..count {
            let x = margin + j as f64 * scenario.inter_mp_distance_m;
            let initiator = positions.len();
            positions.push((x, road_y[r] - half_link));
            let receiver = positions.len();
            positions.push((x, road_y[r] + half_link));
            mp_pairs.push(MpPair {
                initiator,
                receiver,
            });
        }
    }

    let mut forwarders = Vec::new();
    for j in 0..scenario.fn_count {
        let road = j % roads;
        let rest = j / roads;
        let side = if rest.is_multiple_of(2) { 1.0 } else { -1.0 };
        let rest = rest / 2;
        let row_len = per_road[road].max(1);
        let ring = rest / row_len;
        let slot = rest % row_len;
        let x = margins[road] + (slot as f64 + 0.5) * scenario.inter_mp_distance_m;
        let y = road_y[road] + side * (half_link + 19.0 + 24.0 * ring as f64);
        let id = positions.len();
        positions.push((x, y));
        forwarders.push(id);
    }

    Ok(Topology {
        positions,
        mp_pairs,
        forwarders,
    })
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (px, py) = p;
    let (ax, ay) = a;
    let (bx, by) = b;
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((px - ax) * dx + (py - ay) * dy) / len2
    };
    let t = t.clamp(0.0, 1.0);
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

/// Sorted per-MP vehicle index for fast occupancy queries.
struct LogIndex {
    arrivals: Vec<Micros>,
    ends: Vec<Micros>,
    classes: Vec<VehicleClass>,
    lane_offsets: Vec<f64>,
    max_cp: Micros,
}

impl LogIndex {
    fn build(log: &GroundTruthLog) -> LogIndex {
        let mut arrivals = Vec::with_capacity(log.vehicles.len());
        let mut ends = Vec::with_capacity(log.vehicles.len());
        let mut classes = Vec::with_capacity(log.vehicles.len());
        let mut lane_offsets = Vec::with_capacity(log.vehicles.len());
        let mut max_cp = 0;
        for v in &log.vehicles {
            let cp = crate::traffic::contact_period(v, log.corridor_width_m)
                .expect("log vehicles have positive speed");
            arrivals.push(v.arrival);
            ends.push(v.arrival + cp);
            classes.push(v.class);
            lane_offsets.push(v.lane_offset_m);
            max_cp = max_cp.max(cp);
        }
        LogIndex {
            arrivals,
            ends,
            classes,
            lane_offsets,
            max_cp,
        }
    }

    fn for_each_present(&self, t: Micros, mut f: impl FnMut(VehicleClass, f64)) {
        let from = self.arrivals.partition_point(|&a| a + self.max_cp <= t);
        for i in from..self.arrivals.len() {
            if self.arrivals[i] > t {
                break;
            }
            if t < self.ends[i] {
                f(self.classes[i], self.lane_offsets[i]);
            }
        }
    }
}

/// Vehicles from every MP's log, mapped onto the links they cross.
struct TrafficObstructions<'a> {
    topology: &'a Topology,
    indices: Vec<LogIndex>,
    /// MPs whose midpoint lies within the cap radius of each node.
    mps_near_node: Vec<Vec<usize>>,
    /// Lateral reach of a vehicle body around its crossing point.
    blocking_radius_m: f64,
    scratch: RefCell<Vec<usize>>,
}

impl<'a> TrafficObstructions<'a> {
    fn new(
        topology: &'a Topology,
        logs: &[GroundTruthLog],
        cap_radius_m: f64,
        blocking_radius_m: f64,
    ) -> Self {
        let indices: Vec<LogIndex> = logs.iter().map(LogIndex::build).collect();
        let mut mps_near_node = vec![Vec::new(); topology.node_count()];
        for mp in 0..topology.mp_pairs.len() {
            let mid = topology.mp_midpoint(mp);
            for (n, &pos) in topology.positions.iter().enumerate() {
                let d = ((pos.0 - mid.0).powi(2) + (pos.1 - mid.1).powi(2)).sqrt();
                if d <= cap_radius_m {
                    mps_near_node[n].push(mp);
                }
            }
        }
        TrafficObstructions {
            topology,
            indices,
            mps_near_node,
            blocking_radius_m,
            scratch: RefCell::new(Vec::new()),
        }
    }
}

impl<'a> ObstructionSource for TrafficObstructions<'a> {
    fn obstructions_at(
        &self,
        from: NodeId,
        to: NodeId,
        at: Micros,
        out: &mut Vec<(VehicleClass, f64)>,
    ) {
        let mut candidates = self.scratch.borrow_mut();
        candidates.clear();
        for &mp in &self.mps_near_node[from] {
            candidates.push(mp);
        }
        for &mp in &self.mps_near_node[to] {
            if !candidates.contains(&mp) {
                candidates.push(mp);
            }
        }
        for &mp in candidates.iter() {
            let mid = self.topology.mp_midpoint(mp);
            let dir = self.topology.mp_link_dir(mp);
            let a = self.topology.positions[from];
            let b = self.topology.positions[to];
            self.indices[mp].for_each_present(at, |class, lane_offset| {
                let crossing = (mid.0 + dir.0 * lane_offset, mid.1 + dir.1 * lane_offset);
                if point_segment_distance(crossing, a, b) <= self.blocking_radius_m {
                    out.push((class, 1.0));
                }
            });
        }
    }
}

/// Calibrated channel over a topology with obstruction lookup and cached
/// path-loss spreads.
pub struct ExperimentChannel<'a> {
    calibration: &'a LinkCalibration,
    obstruction: &'a ObstructionModel,
    source: &'a dyn ObstructionSource,
    n: usize,
    /// Path-loss spread (dB) per ordered node pair.
    spread: Vec<f64>,
    /// Received power at reference distance per power index.
    anchor: Vec<f64>,
    blockers: RefCell<Vec<(VehicleClass, f64)>>,
}

impl<'a> ExperimentChannel<'a> {
    pub fn new(
        calibration: &'a LinkCalibration,
        obstruction: &'a ObstructionModel,
        positions: &[(f64, f64)],
        source: &'a dyn ObstructionSource,
    ) -> Result<Self> {
        let n = positions.len();
        let mut spread = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let d = ((positions[i].0 - positions[j].0).powi(2)
                    + (positions[i].1 - positions[j].1).powi(2))
                .sqrt()
                .max(0.1);
                spread[i * n + j] = 10.0
                    * calibration.path_loss_exponent
                    * (d / calibration.reference_distance_m).log10();
            }
        }
        let anchor: Vec<f64> = (0..=31)
            .map(|i| calibration.rx_at_reference(i))
            .collect::<Result<_>>()?;
        Ok(ExperimentChannel {
            calibration,
            obstruction,
            source,
            n,
            spread,
            anchor,
            blockers: RefCell::new(Vec::new()),
        })
    }

    fn rx_power(&self, from: NodeId, to: NodeId, txp: u8, at: Micros) -> f64 {
        let mut blockers = self.blockers.borrow_mut();
        blockers.clear();
        self.source.obstructions_at(from, to, at, &mut blockers);
        let blocked: f64 = blockers
            .iter()
            .map(|&(class, overlap)| self.obstruction.attenuation_db(class) * overlap)
            .sum();
        self.anchor[txp as usize] - self.spread[from * self.n + to] - blocked
    }

    /// Unobstructed reception probability between two nodes.
    pub fn idle_prr(&self, from: NodeId, to: NodeId, txp: u8) -> f64 {
        self.calibration
            .prr(self.anchor[txp as usize] - self.spread[from * self.n + to])
    }
}

impl<'a> LinkOracle for ExperimentChannel<'a> {
    fn resolve(
        &self,
        receiver: NodeId,
        txs: &[SlotTx],
        txp: u8,
        at: Micros,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Option<Decoded> {
        // Group by packet content, tracking a handful of distinct groups.
        let mut groups: [(u32, f64); 8] = [(0, f64::NEG_INFINITY); 8];
        let mut n_groups = 0usize;
        for tx in txs {
            if tx.sender == receiver {
                continue;
            }
            let p = self.rx_power(tx.sender, receiver, txp, at);
            match groups[..n_groups]
                .iter_mut()
                .find(|(c, _)| *c == tx.counter)
            {
                Some(slot) => slot.1 = slot.1.max(p),
                None => {
                    if n_groups < groups.len() {
                        groups[n_groups] = (tx.counter, p);
                        n_groups += 1;
                    }
                }
            }
        }
        if n_groups == 0 {
            return None;
        }
        let mut best = 0;
        let mut second = f64::NEG_INFINITY;
        for (i, g) in groups[..n_groups].iter().enumerate() {
            if i == 0 {
                continue;
            }
            if g.1 > groups[best].1 {
                second = groups[best].1;
                best = i;
            } else if g.1 > second {
                second = g.1;
            }
        }
        let (counter, power) = groups[best];
        let sample = self.calibration.sample_reception(power, rng);
        if n_groups > 1 && power - second < self.calibration.capture_margin_db {
            return None;
        }
        if sample.received {
            Some(Decoded {
                counter,
                rssi_dbm: sample.rssi_dbm,
                lqi: sample.lqi,
            })
        } else {
            None
        }
    }
}

/// Everything one experiment run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub scenario: Scenario,
    pub schedule: PhaseSchedule,
    /// `None` disables traffic entirely.
    pub traffic: Option<TrafficConfig>,
    pub channel: ChannelConfig,
    pub metrics: MetricsConfig,
    /// Sync-phase slot and budget.
    pub sc_slot_us: Micros,
    pub sc_ntx: u32,
    /// Measurement-phase slot; the budget follows the strategy (PG uses
    /// `dc_ntx_pg`, the split layouts run single-transmission instances).
    pub dc_slot_us: Micros,
    pub dc_ntx_pg: u32,
    pub iphase: Option<ChaosConfig>,
    pub periods: u64,
    /// Replace the calibrated channel with an ideal one of this range.
    pub perfect_range_m: Option<f64>,
    pub seed: u64,
}

impl SimParams {
    /// Roadside single-MP study.
    pub fn single_mp(strategy: Strategy, seed: u64) -> SimParams {
        SimParams {
            scenario: Scenario::single_mp(),
            schedule: PhaseSchedule::roadside_default(strategy),
            traffic: Some(TrafficConfig::default()),
            channel: ChannelConfig::default(),
            metrics: MetricsConfig::default(),
            sc_slot_us: 2_000,
            sc_ntx: 5,
            dc_slot_us: 1_000,
            dc_ntx_pg: 5,
            iphase: None,
            periods: 600,
            perfect_range_m: None,
            seed,
        }
    }

    /// Wide-area grid study (no traffic, PG layout, optional share phase).
    pub fn wide_area(scenario: Scenario, seed: u64) -> SimParams {
        SimParams {
            scenario,
            schedule: PhaseSchedule::wide_area_default(),
            traffic: None,
            channel: ChannelConfig::default(),
            metrics: MetricsConfig::default(),
            sc_slot_us: 4_000,
            sc_ntx: 5,
            dc_slot_us: 1_000,
            dc_ntx_pg: 5,
            iphase: None,
            periods: 100,
            perfect_range_m: None,
            seed,
        }
    }

    fn sc_config(&self) -> GlossyConfig {
        GlossyConfig {
            ntx: self.sc_ntx,
            slot_duration: self.sc_slot_us,
            initiator_timeout: 3 * self.sc_slot_us,
            max_duration: self.schedule.t_sc,
            txp: self.schedule.txp_sc,
            persistent: false,
        }
    }

    fn dc_config(&self) -> GlossyConfig {
        // The split layouts run persistent single-transmission instances;
        // the plain layout keeps the stock multi-copy exchange.
        let persistent = self.schedule.strategy != Strategy::Pg;
        GlossyConfig {
            ntx: if persistent { 1 } else { self.dc_ntx_pg },
            slot_duration: self.dc_slot_us,
            initiator_timeout: if persistent {
                2 * self.dc_slot_us
            } else {
                3 * self.dc_slot_us
            },
            max_duration: self.schedule.t_dc,
            txp: self.schedule.txp_dc,
            persistent,
        }
    }
}

/// Per-node aggregate over all sync floods of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeScAgg {
    pub node: NodeId,
    /// Latency, with the flood duration as the missing-value sentinel.
    pub lt_us: RunningStats,
    pub ro_us: RunningStats,
    pub rxct: RunningStats,
    /// Hop count over floods that reached the node.
    pub hc: RunningStats,
    pub received: u64,
    pub periods: u64,
}

/// Aggregates of the all-to-all share phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IphaseStats {
    /// Per-node completion latency over all periods.
    pub completion_us: RunningStats,
    pub radio_on_us: RunningStats,
    /// Periods in which every node finished with the full vector.
    pub complete_periods: u64,
    pub periods: u64,
}

/// One labeled measurement window of one MP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpWindow {
    pub mp: usize,
    pub row: FeatureVector,
}

/// Full output of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub topology: Topology,
    pub windows: Vec<MpWindow>,
    /// Per-instance rows, per MP, in execution order.
    pub traces: Vec<Vec<InstanceRecord>>,
    pub sc: Vec<NodeScAgg>,
    pub iphase: Option<IphaseStats>,
    pub logs: Vec<GroundTruthLog>,
    /// Vehicles that overlapped at least one executed measurement window,
    /// and the total vehicle count (detection-opportunity bookkeeping).
    pub vehicles_covered: u64,
    pub vehicles_total: u64,
}

impl ExperimentRecord {
    pub fn feature_rows(&self) -> Vec<FeatureVector> {
        self.windows.iter().map(|w| w.row.clone()).collect()
    }

    /// Mean of a per-node statistic over a node subset.
    pub fn sc_mean<F: Fn(&NodeScAgg) -> f64>(&self, nodes: &[NodeId], f: F) -> f64 {
        let vals: Vec<f64> = self
            .sc
            .iter()
            .filter(|a| nodes.contains(&a.node))
            .map(f)
            .collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

/// Verify every node can reach node 0 over solid unobstructed links.
#[allow(clippy::needless_range_loop)]
pub fn check_connected(
    topology: &Topology,
    calibration: &LinkCalibration,
    txp: u8,
    perfect_range_m: Option<f64>,
) -> Result<()> {
    let n = topology.node_count();
    let mut visited = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    visited[0] = true;
    let reachable = |a: usize, b: usize| -> bool {
        let d = ((topology.positions[a].0 - topology.positions[b].0).powi(2)
            + (topology.positions[a].1 - topology.positions[b].1).powi(2))
        .sqrt();
        match perfect_range_m {
            Some(range) => d <= range,
            None => {
                let rx = calibration.rx_at_reference(txp).unwrap()
                    - 10.0
                        * calibration.path_loss_exponent
                        * (d.max(0.1) / calibration.reference_distance_m).log10();
                calibration.prr(rx) >= 0.9
            }
        }
    };
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if !visited[v] && reachable(u, v) {
                visited[v] = true;
                queue.push_back(v);
            }
        }
    }
    match visited.iter().position(|&v| !v) {
        Some(node) => Err(Error::DisconnectedTopology(node)),
        None => Ok(()),
    }
}

/// Run one experiment. Deterministic for a given parameter set.
pub fn run_experiment(params: &SimParams) -> Result<ExperimentRecord> {
    let topology = make_grid(&params.scenario)?;
    params.channel.validate()?;
    if params.schedule.strategy != Strategy::Pg {
        let report = params.schedule.validate();
        if !report.is_ok() {
            return Err(Error::InvalidSchedule(report.to_string()));
        }
    }
    check_connected(
        &topology,
        &params.channel.calibration,
        params.schedule.txp_sc,
        params.perfect_range_m,
    )?;

    let duration_s = (params.periods * params.schedule.gp) as f64 / 1e6;
    let logs: Vec<GroundTruthLog> = match &params.traffic {
        Some(cfg) => (0..topology.mp_pairs.len())
            .map(|mp| {
                let mut rng = rng_from_seed(derive_seed(params.seed, &[TAG_TRAFFIC, mp as u64]));
                GroundTruthLog::generate(duration_s, cfg, &mut rng)
            })
            .collect::<Result<_>>()?,
        None => vec![GroundTruthLog::empty(); topology.mp_pairs.len()],
    };

    let source = TrafficObstructions::new(
        &topology,
        &logs,
        params
            .scenario
            .inter_mp_distance_m
            .max(params.scenario.mp_link_length_m),
        3.5,
    );
    let channel = ExperimentChannel::new(
        &params.channel.calibration,
        &params.channel.obstruction,
        &topology.positions,
        &source,
    )?;
    let perfect = params.perfect_range_m.map(|range_m| PerfectChannel {
        positions: &topology.positions,
        range_m,
    });
    let oracle: &dyn LinkOracle = match &perfect {
        Some(p) => p,
        None => &channel,
    };

    let all_nodes = topology.all_nodes();
    let sc_cfg = params.sc_config();
    sc_cfg.validate()?;
    let dc_cfg = params.dc_config();
    dc_cfg.validate()?;

    let mut sc: Vec<NodeScAgg> = all_nodes
        .iter()
        .map(|&node| NodeScAgg {
            node,
            lt_us: RunningStats::new(),
            ro_us: RunningStats::new(),
            rxct: RunningStats::new(),
            hc: RunningStats::new(),
            received: 0,
            periods: 0,
        })
        .collect();
    let mut windows = Vec::new();
    let mut traces: Vec<Vec<InstanceRecord>> = vec![Vec::new(); topology.mp_pairs.len()];
    let mut iphase_stats = params.iphase.as_ref().map(|_| IphaseStats {
        completion_us: RunningStats::new(),
        radio_on_us: RunningStats::new(),
        complete_periods: 0,
        periods: 0,
    });
    // Executed measurement windows per MP, for coverage bookkeeping.
    let mut executed_windows: Vec<Vec<(Micros, Micros)>> =
        vec![Vec::new(); topology.mp_pairs.len()];

    for period in 0..params.periods {
        let period_start = period * params.schedule.gp;
        let period_end = period_start + params.schedule.gp;
        let timeline = params.schedule.build_timeline(period)?;

        // Sync flood over the whole network.
        let mut rng = rng_from_seed(derive_seed(params.seed, &[TAG_SC, period]));
        let sc_run = run_flood(&all_nodes, 0, &sc_cfg, oracle, period_start, &mut rng)?;
        let mut sc_hc = vec![0u32; topology.node_count()];
        for (node, out) in &sc_run.nodes {
            let agg = &mut sc[*node];
            agg.lt_us
                .push(out.latency.unwrap_or(sc_cfg.max_duration) as f64);
            agg.ro_us.push(out.radio_on as f64);
            agg.rxct.push(f64::from(out.rx_count));
            if let Some(hc) = out.first_rx_relay_count {
                agg.hc.push(f64::from(hc));
                sc_hc[*node] = hc;
            }
            agg.received += u64::from(out.received);
            agg.periods += 1;
        }

        // Measurement phase, one MP at a time (no cross-MP interference).
        let static_starts: Vec<Micros> = timeline
            .iter()
            .filter(|w| w.phase == PhaseKind::Measurement)
            .map(|w| w.start)
            .collect();
        let (span_from, span_to) = params.schedule.sensing_span();
        let (label_from, label_to) = (period_start + span_from, period_start + span_to);
        for (mp, pair) in topology.mp_pairs.iter().enumerate() {
            let pair_nodes = [pair.initiator, pair.receiver];
            let mut pending: VecDeque<Micros> = static_starts.iter().copied().collect();
            let mut compressed = false;
            let mut records = Vec::new();
            let mut ordinal = 0u64;
            while let Some(start) = pending.pop_front() {
                let mut rng = rng_from_seed(derive_seed(
                    params.seed,
                    &[TAG_DC, period, mp as u64, ordinal],
                ));
                let run = run_flood(
                    &pair_nodes,
                    pair.initiator,
                    &dc_cfg,
                    oracle,
                    start,
                    &mut rng,
                )?;
                let rec = InstanceRecord::from_run(
                    &run,
                    pair.receiver,
                    period,
                    ordinal as u32,
                    label_from,
                    label_to,
                )?;
                executed_windows[mp].push((start, start + dc_cfg.max_duration));
                let disturbed = rec.tc > 1 || rec.rx_count < dc_cfg.ntx;
                records.push(rec);
                ordinal += 1;
                if params.schedule.strategy == Strategy::Dmpg && !compressed && disturbed {
                    let trigger = start + dc_cfg.max_duration;
                    let remaining: Vec<Micros> = pending.iter().copied().collect();
                    let (packed, _dropped) = reschedule_dmpg(&params.schedule, &remaining, trigger);
                    pending = packed.into_iter().collect();
                    compressed = true;
                }
            }
            let mut row = extract_window(&records, &params.metrics)?;
            row.hc = sc_hc[pair.receiver];
            row.label = Some(logs[mp].label_window(label_from, label_to, LabelMode::SevenClass)?);
            traces[mp].extend(records);
            windows.push(MpWindow { mp, row });
        }

        // Optional all-to-all share of the MP flags.
        if let (Some(chaos), Some(stats)) = (&params.iphase, iphase_stats.as_mut()) {
            let contributions: Vec<(NodeId, usize)> = topology
                .mp_pairs
                .iter()
                .enumerate()
                .map(|(i, p)| (p.receiver, i))
                .collect();
            let start = period_end.saturating_sub(chaos.max_duration);
            let mut rng = rng_from_seed(derive_seed(params.seed, &[TAG_IPHASE, period]));
            let result =
                run_chaos_share(&all_nodes, &contributions, chaos, oracle, start, &mut rng)?;
            let mut all_full = true;
            for node in result.values() {
                match node.completion {
                    Some(t) => stats.completion_us.push(t as f64),
                    None => all_full = false,
                }
                stats.radio_on_us.push(node.radio_on as f64);
            }
            stats.complete_periods += u64::from(all_full);
            stats.periods += 1;
        }
    }

    // Coverage bookkeeping: vehicles whose contact window met an executed
    // measurement window.
    let mut vehicles_covered = 0;
    let mut vehicles_total = 0;
    for (mp, log) in logs.iter().enumerate() {
        for v in &log.vehicles {
            let cp = crate::traffic::contact_period(v, log.corridor_width_m)?;
            let (a, b) = (v.arrival, v.arrival + cp);
            vehicles_total += 1;
            if executed_windows[mp].iter().any(|&(s, e)| s < b && e > a) {
                vehicles_covered += 1;
            }
        }
    }

    Ok(ExperimentRecord {
        topology,
        windows,
        traces,
        sc,
        iphase: iphase_stats,
        logs,
        vehicles_covered,
        vehicles_total,
    })
}

/// A single measurement instance for the power-level study.
fn sweep_instance_config(txp: u8) -> GlossyConfig {
    GlossyConfig {
        ntx: 5,
        slot_duration: 1_000,
        initiator_timeout: 3_000,
        max_duration: 12_000,
        txp,
        persistent: false,
    }
}

/// Reliability of the two-node link across power levels.
///
/// Runs `windows` independent instances per level, 100 ms apart, optionally
/// under traffic. Instance seeds depend on the window index but not the
/// level, so the level curves share their random draws.
pub fn txp_reliability_sweep(
    levels: &[u8],
    windows: usize,
    traffic: Option<&TrafficConfig>,
    channel: &ChannelConfig,
    seed: u64,
) -> Result<Vec<crate::metrics::TxpPoint>> {
    let topology = make_grid(&Scenario::single_mp())?;
    let pair = topology.mp_pairs[0];
    let duration_s = windows as f64 * 0.1;
    let log = match traffic {
        Some(cfg) => {
            let mut rng = rng_from_seed(derive_seed(seed, &[TAG_TRAFFIC, 0]));
            GroundTruthLog::generate(duration_s, cfg, &mut rng)?
        }
        None => GroundTruthLog::empty(),
    };
    let logs = vec![log];
    let source = TrafficObstructions::new(&topology, &logs, 50.0, 3.5);
    let chan = ExperimentChannel::new(
        &channel.calibration,
        &channel.obstruction,
        &topology.positions,
        &source,
    )?;
    let mut samples = Vec::with_capacity(levels.len() * windows);
    for &txp in levels {
        let cfg = sweep_instance_config(txp);
        for w in 0..windows {
            let mut rng = rng_from_seed(derive_seed(seed, &[TAG_SWEEP, w as u64]));
            let start = w as u64 * 100_000;
            let run = run_flood(
                &[pair.initiator, pair.receiver],
                pair.initiator,
                &cfg,
                &chan,
                start,
                &mut rng,
            )?;
            let r = f64::from(u8::from(run.outcome(pair.receiver)?.received));
            samples.push((txp, r));
        }
    }
    crate::metrics::reliability_curve(&samples, 100)
}
