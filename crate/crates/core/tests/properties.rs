//! Property tests for the cross-cutting invariants.

use proptest::prelude::*;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vdsim::channel::{ConcurrentTx, LinkCalibration};
use vdsim::flood::{run_flood, GlossyConfig, LinkOracle, SlotTx};
use vdsim::metrics::{read_feature_csv, write_feature_csv, FeatureVector};
use vdsim::schedule::{reschedule_dmpg, PhaseKind, PhaseSchedule, Strategy as Layout};
use vdsim::svm::{self, LabeledSample};
use vdsim::traffic::{contact_period, GroundTruthLog, Label, LabelMode, Vehicle, VehicleClass};
use vdsim::{Micros, NodeId};

fn vehicle_strategy() -> impl Strategy<Value = Vehicle> {
    (
        0u64..1000,
        prop_oneof![
            Just(VehicleClass::Small),
            Just(VehicleClass::Medium),
            Just(VehicleClass::Large)
        ],
        2.5f64..14.0,
        4.0f64..22.0,
        0u64..60_000_000,
    )
        .prop_map(|(id, class, length_m, speed_mps, arrival)| Vehicle {
            id,
            class,
            speed_mps,
            length_m,
            arrival,
            lane_offset_m: 0.0,
        })
}

fn log_strategy() -> impl Strategy<Value = GroundTruthLog> {
    prop::collection::vec(vehicle_strategy(), 0..24).prop_map(|mut vehicles| {
        vehicles.sort_by_key(|v| v.arrival);
        for (i, v) in vehicles.iter_mut().enumerate() {
            v.id = i as u64;
        }
        GroundTruthLog {
            vehicles,
            mean_headway_s: 1.0,
            corridor_width_m: 0.2,
        }
    })
}

/// Brute-force window classifier used as the labeling oracle.
fn brute_force_label(log: &GroundTruthLog, t0: Micros, t1: Micros) -> Label {
    let mut classes = Vec::new();
    for v in &log.vehicles {
        let cp = contact_period(v, log.corridor_width_m).unwrap();
        let mut t = v.arrival;
        // Sample the occupancy window densely instead of comparing bounds.
        let mut overlaps = false;
        while t < v.arrival + cp {
            if t >= t0 && t < t1 {
                overlaps = true;
                break;
            }
            t += 1_000;
        }
        // Catch sub-millisecond overlaps at the edges.
        overlaps |= v.arrival < t1 && v.arrival + cp > t0;
        if overlaps {
            classes.push(v.class);
        }
    }
    match classes.len() {
        0 => Label::None,
        1 => match classes[0] {
            VehicleClass::Small => Label::Small,
            VehicleClass::Medium => Label::Medium,
            VehicleClass::Large => Label::Large,
        },
        _ => {
            if classes.contains(&VehicleClass::Large) {
                Label::LargeMix
            } else if classes.iter().all(|&c| c == VehicleClass::Small) {
                Label::SmallMix
            } else {
                Label::MediumMix
            }
        }
    }
}

proptest! {
    /// Exactly one seven-class label applies to every window, and it is the
    /// one the brute-force classifier picks.
    #[test]
    fn seven_class_labels_partition(log in log_strategy(), t0 in 0u64..80_000_000, len in 1u64..4_000_000) {
        let t1 = t0 + len;
        let label = log.label_window(t0, t1, LabelMode::SevenClass).unwrap();
        prop_assert_eq!(label, brute_force_label(&log, t0, t1));
        // Four-class agrees whenever it does not refuse.
        match log.label_window(t0, t1, LabelMode::FourClass) {
            Ok(four) => prop_assert_eq!(four, label),
            Err(_) => prop_assert!(label.is_mix()),
        }
    }

    /// Occupancy counts match an independent interval check at any instant.
    #[test]
    fn occupancy_matches_interval_oracle(log in log_strategy(), t in 0u64..80_000_000) {
        let fast = log.occupancy(t).len();
        let slow = log
            .vehicles
            .iter()
            .filter(|v| {
                let cp = contact_period(v, log.corridor_width_m).unwrap();
                t >= v.arrival && t < v.arrival + cp
            })
            .count();
        prop_assert_eq!(fast, slow);
    }

    /// Single-transmitter capture resolution reduces to plain sampling.
    #[test]
    fn capture_single_equals_sample(power in -110.0f64..-60.0, seed in 0u64..1000) {
        let cal = LinkCalibration::default();
        let mut a = ChaCha8Rng::seed_from_u64(seed);
        let mut b = ChaCha8Rng::seed_from_u64(seed);
        let direct = cal.sample_reception(power, &mut a);
        let via = cal.capture_resolve(
            &[ConcurrentTx { sender: 0, content: 1, rx_power_dbm: power }],
            &mut b,
        );
        match via {
            Some((_, s)) => prop_assert_eq!(s, direct),
            None => prop_assert!(!direct.received),
        }
    }

    /// Valid schedules always produce disjoint in-period windows, at any
    /// period index.
    #[test]
    fn timelines_disjoint_for_valid_schedules(
        t_dc in 1_000u64..40_000,
        gap_extra in 0u64..200_000,
        k in 0u64..50,
    ) {
        let mut s = PhaseSchedule::roadside_default(Layout::Mpg);
        s.t_dc = t_dc;
        let floor = (s.t_sc + s.t_scdc_gap).saturating_sub(2 * s.t_dc).max(1);
        s.t_dc_gap = floor + gap_extra;
        s.ni = s.default_ni();
        prop_assume!(s.validate().is_ok());
        if let Ok(tl) = s.build_timeline(k) {
            for pair in tl.windows(2) {
                prop_assert!(pair[0].end() <= pair[1].start);
            }
            for w in &tl {
                prop_assert!(w.start >= k * s.gp && w.end() <= (k + 1) * s.gp);
            }
        }
    }

    /// Runtime compression never overlaps instances or leaves the period.
    #[test]
    fn compressed_instances_stay_disjoint(trigger in 50_000u64..500_000) {
        let s = PhaseSchedule::roadside_default(Layout::Dmpg);
        let starts: Vec<Micros> = s
            .build_timeline(0)
            .unwrap()
            .iter()
            .filter(|w| w.phase == PhaseKind::Measurement)
            .map(|w| w.start)
            .collect();
        let (packed, _) = reschedule_dmpg(&s, &starts, trigger);
        for pair in packed.windows(2) {
            prop_assert!(pair[0] + s.t_dc <= pair[1]);
        }
        for &st in &packed {
            prop_assert!(st > trigger && st + s.t_dc <= s.gp);
        }
    }

    /// Budget and consistency invariants hold on random loss patterns.
    #[test]
    fn flood_budgets_hold(seed in 0u64..200, p in 0.05f64..0.95, n_nodes in 2usize..7) {
        struct Lossy { p: f64 }
        impl LinkOracle for Lossy {
            fn resolve(
                &self,
                receiver: NodeId,
                txs: &[SlotTx],
                _txp: u8,
                _at: Micros,
                rng: &mut ChaCha8Rng,
            ) -> Option<vdsim::flood::Decoded> {
                let u: f64 = rand::Rng::gen(rng);
                let tx = txs.iter().filter(|t| t.sender != receiver).min_by_key(|t| t.sender)?;
                (u < self.p).then_some(vdsim::flood::Decoded {
                    counter: tx.counter,
                    rssi_dbm: -85.0,
                    lqi: 95.0,
                })
            }
        }
        let nodes: Vec<NodeId> = (0..n_nodes).collect();
        let cfg = GlossyConfig {
            ntx: 3,
            slot_duration: 1_000,
            initiator_timeout: 3_000,
            max_duration: 30_000,
            txp: 15,
            persistent: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let res = run_flood(&nodes, 0, &cfg, &Lossy { p }, 0, &mut rng).unwrap();
        for (n, out) in &res.nodes {
            prop_assert!(out.tx_count <= cfg.ntx, "node {} tx {}", n, out.tx_count);
            prop_assert!(out.rx_count <= cfg.ntx);
            prop_assert!(out.radio_on <= cfg.max_duration);
            prop_assert_eq!(out.received, out.rx_count > 0);
            prop_assert_eq!(out.received, out.latency.is_some());
            prop_assert_eq!(out.received, out.first_rx_relay_count.is_some());
            if *n == 0 {
                prop_assert!(out.initiator_timeout_count >= 1);
            } else {
                prop_assert_eq!(out.initiator_timeout_count, 0);
            }
        }
    }

    /// Stratified splits are exhaustive, disjoint and proportion-preserving.
    #[test]
    fn split_partitions_preserve_classes(
        counts in prop::collection::vec(2usize..40, 2..5),
        fraction in 0.1f64..0.9,
        seed in 0u64..1000,
    ) {
        let mut samples: Vec<LabeledSample> = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            for i in 0..n {
                samples.push((vec![c as f64, i as f64], format!("c{c}")));
            }
        }
        let (train, test) = svm::split(&samples, fraction, seed).unwrap();
        prop_assert_eq!(train.len() + test.len(), samples.len());
        for (c, &n) in counts.iter().enumerate() {
            let label = format!("c{c}");
            let in_train = train.iter().filter(|(_, l)| *l == label).count();
            let expected = (n as f64 * fraction).round();
            prop_assert!((in_train as f64 - expected).abs() <= 1.0);
            prop_assert!((1..n).contains(&in_train));
        }
        // Disjoint and exhaustive as multisets.
        let mut union: Vec<String> = train
            .iter()
            .chain(&test)
            .map(|(x, l)| format!("{x:?}{l}"))
            .collect();
        union.sort();
        let mut original: Vec<String> =
            samples.iter().map(|(x, l)| format!("{x:?}{l}")).collect();
        original.sort();
        prop_assert_eq!(union, original);
    }

    /// Feature rows survive the CSV interchange format exactly.
    #[test]
    fn feature_csv_roundtrip(
        tc in 0u32..100,
        lt in 0u64..1_000_000,
        r in 0.0f64..1.0,
        rssi in -110.0f64..-60.0,
        period in 0u64..10_000,
    ) {
        let row = FeatureVector {
            tc,
            lt_us: lt,
            rxct: tc / 2,
            ro_us: lt * 2,
            r,
            rssi_avg_dbm: rssi,
            rssi_sd_db: r * 3.0,
            lqi_avg: 50.0 + r * 60.0,
            lqi_sd: r,
            hc: tc % 7,
            t_start_us: period * 500_000,
            period,
            label: Some(Label::MediumMix),
        };
        let mut buf = Vec::new();
        write_feature_csv(&mut buf, std::slice::from_ref(&row)).unwrap();
        let back = read_feature_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back, vec![row]);
    }
}
