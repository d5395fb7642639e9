//! Probabilistic link model.
//!
//! Maps a transmission power index (0..=31, CC2420 convention) to received
//! power at the reference geometry, extrapolates over distance with a
//! log-distance law, subtracts per-vehicle obstruction losses, and turns the
//! resulting power into reception outcomes, RSSI and LQI samples. Concurrent
//! transmissions are resolved with a capture model: identical-content packets
//! merge (strongest copy counts), distinct-content packets require a power
//! margin.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::flood::{Decoded, LinkOracle, SlotTx};
use crate::traffic::VehicleClass;
use crate::util::sample_gaussian;
use crate::{Error, Micros, NodeId, Result};

/// Received power at the reference distance for one power index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerAnchor {
    pub index: u8,
    pub rx_dbm: f64,
}

/// Calibration of the link model.
///
/// All powers are in dBm; the anchor table holds received powers measured at
/// `reference_distance_m`. Intermediate power indices interpolate linearly in
/// dBm between anchors, indices outside the anchor span extrapolate with the
/// nearest segment's slope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkCalibration {
    pub anchors: Vec<PowerAnchor>,
    pub reference_distance_m: f64,
    pub path_loss_exponent: f64,
    pub noise_floor_dbm: f64,
    /// Packet reception probability is logistic in received power:
    /// `1 / (1 + exp(-slope * (p - midpoint)))`.
    pub prr_midpoint_dbm: f64,
    pub prr_slope_per_db: f64,
    /// Power advantage the strongest distinct-content transmission needs to
    /// be decodable at all.
    pub capture_margin_db: f64,
    pub rssi_noise_db: f64,
    pub lqi_noise: f64,
}

impl Default for LinkCalibration {
    fn default() -> Self {
        // Published operating points: index 3 decodes at -98 dBm and index 31
        // at -66 dBm across the 12 m reference link.
        LinkCalibration {
            anchors: vec![
                PowerAnchor {
                    index: 3,
                    rx_dbm: -98.0,
                },
                PowerAnchor {
                    index: 31,
                    rx_dbm: -66.0,
                },
            ],
            reference_distance_m: 12.0,
            path_loss_exponent: 2.0,
            noise_floor_dbm: -99.0,
            prr_midpoint_dbm: -94.0,
            prr_slope_per_db: 1.1,
            capture_margin_db: 3.0,
            rssi_noise_db: 1.0,
            lqi_noise: 2.0,
        }
    }
}

pub const LQI_MIN: f64 = 50.0;
pub const LQI_MAX: f64 = 110.0;
pub const MAX_POWER_INDEX: u8 = 31;

/// Outcome of one reception attempt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReceptionSample {
    pub received: bool,
    pub rssi_dbm: f64,
    pub lqi: f64,
}

/// One of several transmissions arriving at a receiver in the same slot.
#[derive(Debug, Clone, Copy)]
pub struct ConcurrentTx {
    pub sender: NodeId,
    /// Content key; transmissions with equal keys carry identical packets.
    pub content: u32,
    pub rx_power_dbm: f64,
}

impl LinkCalibration {
    /// Received power at the reference distance for a power index.
    pub fn rx_at_reference(&self, txp: u8) -> Result<f64> {
        if txp > MAX_POWER_INDEX || self.anchors.is_empty() {
            return Err(Error::UnknownPowerIndex(txp));
        }
        let a = &self.anchors;
        if a.len() == 1 {
            return Ok(a[0].rx_dbm);
        }
        // Segment slope reused beyond both ends of the table.
        let seg = |lo: &PowerAnchor, hi: &PowerAnchor, i: f64| {
            let slope = (hi.rx_dbm - lo.rx_dbm) / f64::from(hi.index - lo.index);
            lo.rx_dbm + slope * (i - f64::from(lo.index))
        };
        let i = f64::from(txp);
        if txp <= a[0].index {
            return Ok(seg(&a[0], &a[1], i));
        }
        for w in a.windows(2) {
            if txp <= w[1].index {
                return Ok(seg(&w[0], &w[1], i));
            }
        }
        let n = a.len();
        Ok(seg(&a[n - 2], &a[n - 1], i))
    }

    /// Received power over a link of `distance_m`, after obstruction losses.
    ///
    /// `obstructions` lists vehicles crossing the line-of-sight corridor as
    /// (class, overlap fraction). Requires `distance_m > 0`.
    pub fn received_power(
        &self,
        txp: u8,
        distance_m: f64,
        obstructions: &[(VehicleClass, f64)],
        model: &ObstructionModel,
    ) -> Result<f64> {
        assert!(distance_m > 0.0, "distance must be positive");
        let at_ref = self.rx_at_reference(txp)?;
        let spread =
            10.0 * self.path_loss_exponent * (distance_m / self.reference_distance_m).log10();
        let blocked: f64 = obstructions
            .iter()
            .map(|&(class, overlap)| model.attenuation_db(class) * overlap)
            .sum();
        Ok(at_ref - spread - blocked)
    }

    /// Packet reception probability at a received power.
    pub fn prr(&self, rx_power_dbm: f64) -> f64 {
        1.0 / (1.0 + (-self.prr_slope_per_db * (rx_power_dbm - self.prr_midpoint_dbm)).exp())
    }

    /// Received power at which `prr` crosses one half.
    pub fn prr_midpoint(&self) -> f64 {
        self.prr_midpoint_dbm
    }

    /// Draw one reception attempt at the given received power.
    ///
    /// Always consumes exactly five uniform draws so that runs sharing a seed
    /// stay aligned draw-for-draw across different power settings.
    pub fn sample_reception<R: Rng>(&self, rx_power_dbm: f64, rng: &mut R) -> ReceptionSample {
        let u: f64 = rng.gen();
        let rssi = sample_gaussian(rng, rx_power_dbm, self.rssi_noise_db);
        let prr = self.prr(rx_power_dbm);
        let lqi_center = LQI_MIN + (LQI_MAX - LQI_MIN) * prr;
        let lqi = sample_gaussian(rng, lqi_center, self.lqi_noise).clamp(LQI_MIN, LQI_MAX);
        ReceptionSample {
            received: u < prr,
            rssi_dbm: rssi,
            lqi,
        }
    }

    /// Resolve which of several concurrent transmissions a receiver decodes.
    ///
    /// Identical-content transmissions merge: the strongest copy carries the
    /// group. With several distinct contents, the strongest group must exceed
    /// the runner-up by at least `capture_margin_db`, otherwise nothing is
    /// decodable. Returns the decoded content key with its sample, or `None`.
    pub fn capture_resolve<R: Rng>(
        &self,
        concurrent: &[ConcurrentTx],
        rng: &mut R,
    ) -> Option<(u32, ReceptionSample)> {
        assert!(
            !concurrent.is_empty(),
            "capture_resolve needs at least one transmission"
        );
        // Per-content maximum power, tracked over a handful of entries.
        let mut groups: Vec<(u32, f64)> = Vec::with_capacity(4);
        for tx in concurrent {
            match groups.iter_mut().find(|(c, _)| *c == tx.content) {
                Some((_, p)) => *p = p.max(tx.rx_power_dbm),
                None => groups.push((tx.content, tx.rx_power_dbm)),
            }
        }
        let (&(content, strongest), rest_max) = {
            let mut best = &groups[0];
            let mut second = f64::NEG_INFINITY;
            for g in &groups[1..] {
                if g.1 > best.1 {
                    second = best.1;
                    best = g;
                } else if g.1 > second {
                    second = g.1;
                }
            }
            (best, second)
        };
        // One sample is drawn regardless of the margin outcome to keep the
        // draw count constant per resolution.
        let sample = self.sample_reception(strongest, rng);
        if groups.len() > 1 && strongest - rest_max < self.capture_margin_db {
            return None;
        }
        if sample.received {
            Some((content, sample))
        } else {
            None
        }
    }
}

/// Extra path loss while a vehicle body crosses the line of sight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstructionModel {
    pub small_db: f64,
    pub medium_db: f64,
    pub large_db: f64,
    /// Fraction of the attenuation applied when a vehicle overlaps the
    /// corridor but not its center line. Unused by the rectangular occupancy
    /// profile, which always reports full overlap.
    pub partial_factor: f64,
}

impl Default for ObstructionModel {
    fn default() -> Self {
        // Calibration knobs, sized so the sensitive band (index ~15) tells
        // the classes apart through the reception-probability sigmoid:
        // small bodies leave most packets alive, medium ones let an
        // occasional packet through, large ones block the link outright.
        ObstructionModel {
            small_db: 10.0,
            medium_db: 11.0,
            large_db: 30.0,
            partial_factor: 0.5,
        }
    }
}

impl ObstructionModel {
    pub fn attenuation_db(&self, class: VehicleClass) -> f64 {
        match class {
            VehicleClass::Small => self.small_db,
            VehicleClass::Medium => self.medium_db,
            VehicleClass::Large => self.large_db,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.small_db <= 0.0 || self.medium_db < self.small_db || self.large_db < self.medium_db
        {
            return Err(Error::Config(format!(
                "obstruction attenuations must satisfy L >= M >= S > 0, got S={} M={} L={}",
                self.small_db, self.medium_db, self.large_db
            )));
        }
        Ok(())
    }
}

/// Channel configuration as stored in experiment config files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    #[serde(default)]
    pub calibration: LinkCalibration,
    #[serde(default)]
    pub obstruction: ObstructionModel,
}

impl ChannelConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ChannelConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("channel config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.obstruction.validate()?;
        let mut last = f64::NEG_INFINITY;
        for i in 0..=MAX_POWER_INDEX {
            let p = self.calibration.rx_at_reference(i)?;
            if p < last {
                return Err(Error::Config(format!(
                    "anchor table not monotone at index {i}: {p} dBm after {last} dBm"
                )));
            }
            last = p;
        }
        Ok(())
    }
}

/// Where a receiver's links pick up vehicle obstructions from.
pub trait ObstructionSource {
    /// Append vehicles obstructing the directed link `from -> to` at time
    /// `at` as (class, overlap fraction).
    fn obstructions_at(
        &self,
        from: NodeId,
        to: NodeId,
        at: Micros,
        out: &mut Vec<(VehicleClass, f64)>,
    );
}

/// No traffic anywhere.
pub struct NoTraffic;

impl ObstructionSource for NoTraffic {
    fn obstructions_at(&self, _: NodeId, _: NodeId, _: Micros, _: &mut Vec<(VehicleClass, f64)>) {}
}

/// Concrete link oracle used by the simulator: geometry plus calibration plus
/// an obstruction source.
pub struct SimChannel<'a> {
    pub calibration: &'a LinkCalibration,
    pub obstruction: &'a ObstructionModel,
    pub positions: &'a [(f64, f64)],
    pub source: &'a dyn ObstructionSource,
}

impl<'a> SimChannel<'a> {
    pub fn distance(&self, a: NodeId, b: NodeId) -> f64 {
        let (ax, ay) = self.positions[a];
        let (bx, by) = self.positions[b];
        ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
    }

    fn link_power(&self, from: NodeId, to: NodeId, txp: u8, at: Micros) -> f64 {
        let mut blockers = Vec::new();
        self.source.obstructions_at(from, to, at, &mut blockers);
        self.calibration
            .received_power(txp, self.distance(from, to), &blockers, self.obstruction)
            .expect("power index validated by config")
    }
}

impl<'a> LinkOracle for SimChannel<'a> {
    fn resolve(
        &self,
        receiver: NodeId,
        txs: &[SlotTx],
        txp: u8,
        at: Micros,
        rng: &mut ChaCha8Rng,
    ) -> Option<Decoded> {
        let concurrent: Vec<ConcurrentTx> = txs
            .iter()
            .filter(|tx| tx.sender != receiver)
            .map(|tx| ConcurrentTx {
                sender: tx.sender,
                content: tx.counter,
                rx_power_dbm: self.link_power(tx.sender, receiver, txp, at),
            })
            .collect();
        if concurrent.is_empty() {
            return None;
        }
        self.calibration
            .capture_resolve(&concurrent, rng)
            .map(|(counter, s)| Decoded {
                counter,
                rssi_dbm: s.rssi_dbm,
                lqi: s.lqi,
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng_from_seed;

    #[test]
    fn anchor_points_are_exact() {
        let cal = LinkCalibration::default();
        let m = ObstructionModel::default();
        assert_eq!(cal.received_power(31, 12.0, &[], &m).unwrap(), -66.0);
        assert_eq!(cal.received_power(3, 12.0, &[], &m).unwrap(), -98.0);
    }

    #[test]
    fn full_overlap_large_subtracts_attenuation() {
        let cal = LinkCalibration::default();
        let m = ObstructionModel::default();
        let p = cal
            .received_power(31, 12.0, &[(VehicleClass::Large, 1.0)], &m)
            .unwrap();
        assert!((p - -96.0).abs() < 1e-12, "got {p}");
    }

    #[test]
    fn unknown_power_index_errors() {
        let cal = LinkCalibration::default();
        assert!(matches!(
            cal.rx_at_reference(32),
            Err(Error::UnknownPowerIndex(32))
        ));
    }

    #[test]
    fn anchor_table_monotone_over_full_index_range() {
        let cal = LinkCalibration::default();
        let mut last = f64::NEG_INFINITY;
        for i in 0..=MAX_POWER_INDEX {
            let p = cal.rx_at_reference(i).unwrap();
            assert!(p >= last, "index {i}: {p} < {last}");
            last = p;
        }
    }

    #[test]
    fn reception_far_below_floor_is_dead() {
        let cal = LinkCalibration::default();
        let mut rng = rng_from_seed(11);
        let p = cal.noise_floor_dbm - 20.0;
        let received = (0..10_000)
            .filter(|_| cal.sample_reception(p, &mut rng).received)
            .count();
        assert!(received == 0, "{received} receptions 20 dB under the floor");
    }

    #[test]
    fn reception_at_minus_66_exceeds_99_percent() {
        let cal = LinkCalibration::default();
        let mut rng = rng_from_seed(12);
        let received = (0..10_000)
            .filter(|_| cal.sample_reception(-66.0, &mut rng).received)
            .count();
        assert!(received > 9_900, "{received}/10000");
    }

    #[test]
    fn reception_rate_at_midpoint_is_half() {
        let cal = LinkCalibration::default();
        let mut rng = rng_from_seed(13);
        let mid = cal.prr_midpoint();
        let n = 10_000;
        let received = (0..n)
            .filter(|_| cal.sample_reception(mid, &mut rng).received)
            .count();
        let rate = received as f64 / n as f64;
        assert!((rate - 0.5).abs() < 0.02, "rate {rate}");
    }

    #[test]
    fn empirical_prr_is_monotone_in_power() {
        let cal = LinkCalibration::default();
        let mut last = 0.0;
        for (i, p) in [-100.0, -96.0, -94.0, -92.0, -88.0, -70.0]
            .iter()
            .enumerate()
        {
            let mut rng = rng_from_seed(20 + i as u64);
            let rate = (0..10_000)
                .filter(|_| cal.sample_reception(*p, &mut rng).received)
                .count() as f64
                / 10_000.0;
            assert!(rate >= last - 0.01, "rate({p}) = {rate} < {last}");
            last = rate;
        }
    }

    #[test]
    fn rssi_mean_tracks_rx_power() {
        let cal = LinkCalibration::default();
        let mut rng = rng_from_seed(14);
        let p = -80.0;
        let mean = (0..10_000)
            .map(|_| cal.sample_reception(p, &mut rng).rssi_dbm)
            .sum::<f64>()
            / 10_000.0;
        assert!((mean - p).abs() < 0.2, "mean rssi {mean}");
    }

    #[test]
    fn single_transmitter_capture_equals_sample_reception() {
        let cal = LinkCalibration::default();
        for seed in 0..50 {
            let mut a = rng_from_seed(seed);
            let mut b = rng_from_seed(seed);
            let direct = cal.sample_reception(-90.0, &mut a);
            let via_capture = cal.capture_resolve(
                &[ConcurrentTx {
                    sender: 0,
                    content: 7,
                    rx_power_dbm: -90.0,
                }],
                &mut b,
            );
            match via_capture {
                Some((content, s)) => {
                    assert_eq!(content, 7);
                    assert!(direct.received);
                    assert_eq!(s, direct);
                }
                None => assert!(!direct.received),
            }
        }
    }

    #[test]
    fn identical_content_merges_to_strongest() {
        let cal = LinkCalibration::default();
        let mut rng = rng_from_seed(15);
        let n = 10_000;
        let mut decoded = 0;
        for _ in 0..n {
            let txs = [
                ConcurrentTx {
                    sender: 0,
                    content: 2,
                    rx_power_dbm: -70.0,
                },
                ConcurrentTx {
                    sender: 1,
                    content: 2,
                    rx_power_dbm: -90.0,
                },
            ];
            if cal.capture_resolve(&txs, &mut rng).is_some() {
                decoded += 1;
            }
        }
        let rate = decoded as f64 / n as f64;
        let expected = cal.prr(-70.0);
        assert!(
            (rate - expected).abs() < 0.02,
            "rate {rate} vs prr {expected}"
        );
    }

    #[test]
    fn distinct_content_within_margin_decodes_nothing() {
        let cal = LinkCalibration::default();
        let mut rng = rng_from_seed(16);
        let txs = [
            ConcurrentTx {
                sender: 0,
                content: 1,
                rx_power_dbm: -70.0,
            },
            ConcurrentTx {
                sender: 1,
                content: 2,
                rx_power_dbm: -71.0,
            },
        ];
        for _ in 0..100 {
            assert_eq!(cal.capture_resolve(&txs, &mut rng), None);
        }
    }

    #[test]
    fn distinct_content_beyond_margin_captures_strongest() {
        let cal = LinkCalibration::default();
        let mut rng = rng_from_seed(17);
        let txs = [
            ConcurrentTx {
                sender: 0,
                content: 1,
                rx_power_dbm: -66.0,
            },
            ConcurrentTx {
                sender: 1,
                content: 2,
                rx_power_dbm: -80.0,
            },
        ];
        let decoded = (0..100)
            .filter_map(|_| cal.capture_resolve(&txs, &mut rng))
            .map(|(c, _)| c)
            .collect::<Vec<_>>();
        assert!(!decoded.is_empty());
        assert!(decoded.iter().all(|&c| c == 1));
    }

    #[test]
    fn obstruction_classes_order_prr() {
        let cal = LinkCalibration::default();
        let m = ObstructionModel::default();
        let base = cal.received_power(15, 12.0, &[], &m).unwrap();
        let s = cal
            .received_power(15, 12.0, &[(VehicleClass::Small, 1.0)], &m)
            .unwrap();
        let med = cal
            .received_power(15, 12.0, &[(VehicleClass::Medium, 1.0)], &m)
            .unwrap();
        let l = cal
            .received_power(15, 12.0, &[(VehicleClass::Large, 1.0)], &m)
            .unwrap();
        assert!(cal.prr(l) <= cal.prr(med));
        assert!(cal.prr(med) <= cal.prr(s));
        assert!(cal.prr(s) <= cal.prr(base));
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = ChannelConfig::default();
        let text = cfg.to_toml_string();
        let back = ChannelConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn bad_obstruction_ordering_rejected() {
        let cfg = ChannelConfig {
            obstruction: ObstructionModel {
                small_db: 20.0,
                medium_db: 10.0,
                large_db: 30.0,
                partial_factor: 0.5,
            },
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
