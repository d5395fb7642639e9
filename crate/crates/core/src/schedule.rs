//! Periodic three-phase timeline and its constraint validator.
//!
//! A period of length `gp` starts with the network-wide sync flood
//! (duration `t_sc`), leaves `t_scdc_gap`, then runs the sensitive two-node
//! measurement windows. Three layouts exist: one long instance (PG), `ni`
//! short instances pitched `t_dc + t_dc_gap` apart (MPG), and MPG with
//! runtime compression to pitch `d_x` once a disturbance is seen (DMPG).
//!
//! The validator checks the inequality chain that guarantees a vehicle with
//! contact period at least `t_cp_min` cannot slip between windows:
//!
//! ```text
//! 2*t_sc + t_sc_gap > t_cp_min > 2*t_dc + t_dc_gap >= t_sc + t_scdc_gap
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Micros, Result};

/// Measurement-phase layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Pg,
    Mpg,
    Dmpg,
}

/// Upper bound on any single schedule duration field (about 11.5 days).
pub const MAX_DURATION_US: Micros = 1_000_000_000_000;

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Pg => "pg",
            Strategy::Mpg => "mpg",
            Strategy::Dmpg => "dmpg",
        })
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pg" => Ok(Strategy::Pg),
            "mpg" => Ok(Strategy::Mpg),
            "dmpg" => Ok(Strategy::Dmpg),
            other => Err(Error::Config(format!("unknown strategy {other:?}"))),
        }
    }
}

/// Timing of one period, all in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSchedule {
    /// Whole period (sync phase cadence).
    pub gp: Micros,
    /// Sync flood duration.
    pub t_sc: Micros,
    /// Idle remainder of the period after the sync flood.
    pub t_sc_gap: Micros,
    /// Duration of one measurement instance.
    pub t_dc: Micros,
    /// Gap between consecutive measurement instances.
    pub t_dc_gap: Micros,
    /// Gap between sync flood end and the first measurement instance.
    pub t_scdc_gap: Micros,
    /// Measurement instances per period (MPG/DMPG).
    pub ni: u32,
    /// Compressed inter-instance gap used after a disturbance trigger.
    pub d_x: Micros,
    pub strategy: Strategy,
    /// Sync-phase power index (operating band 25..=31).
    pub txp_sc: u8,
    /// Measurement-phase power index (operating band 11..=25).
    pub txp_dc: u8,
    /// Design floor for the vehicle contact period.
    pub t_cp_min: Micros,
    /// Permit power indices outside the operating bands.
    #[serde(default)]
    pub allow_txp_outside_bands: bool,
}

impl PhaseSchedule {
    /// Largest instance count that keeps the chain satisfiable: the period
    /// after sync and lead gap, divided by the instance pitch.
    pub fn default_ni(&self) -> u32 {
        let budget = self.gp.saturating_sub(self.t_sc + self.t_scdc_gap);
        let pitch = self.t_dc + self.t_dc_gap;
        ((budget / pitch) as u32).max(1)
    }

    /// Single-MP roadside defaults (500 ms period, 5 instances).
    pub fn roadside_default(strategy: Strategy) -> Self {
        let mut s = PhaseSchedule {
            gp: 500_000,
            t_sc: 20_000,
            t_sc_gap: 480_000,
            t_dc: 10_000,
            t_dc_gap: 80_000,
            t_scdc_gap: 30_000,
            ni: 0,
            d_x: 10_000,
            strategy,
            txp_sc: 31,
            txp_dc: 15,
            t_cp_min: 250_000,
            allow_txp_outside_bands: false,
        };
        s.ni = s.default_ni();
        s
    }

    /// Wide-area grid defaults (1 s period, long sync flood, PG layout).
    pub fn wide_area_default() -> Self {
        let mut s = PhaseSchedule {
            gp: 1_000_000,
            t_sc: 120_000,
            t_sc_gap: 880_000,
            t_dc: 10_000,
            t_dc_gap: 160_000,
            t_scdc_gap: 60_000,
            ni: 0,
            d_x: 10_000,
            strategy: Strategy::Pg,
            txp_sc: 31,
            txp_dc: 15,
            t_cp_min: 250_000,
            allow_txp_outside_bands: false,
        };
        s.ni = s.default_ni();
        s
    }

    /// Check the full constraint set; violations are data, not faults.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        if self.gp != self.t_sc + self.t_sc_gap {
            violations.push(Violation::PeriodMismatch {
                gp: self.gp,
                parts: self.t_sc + self.t_sc_gap,
            });
        }
        for (name, v) in [
            ("gp", self.gp),
            ("t_sc", self.t_sc),
            ("t_sc_gap", self.t_sc_gap),
            ("t_dc", self.t_dc),
            ("t_dc_gap", self.t_dc_gap),
            ("t_scdc_gap", self.t_scdc_gap),
            ("t_cp_min", self.t_cp_min),
        ] {
            if v == 0 {
                violations.push(Violation::ZeroDuration {
                    field: name.to_string(),
                });
            }
            // Keeps all downstream microsecond arithmetic far from overflow.
            if v > MAX_DURATION_US {
                violations.push(Violation::DurationTooLarge {
                    field: name.to_string(),
                    value: v,
                });
            }
        }
        if self.d_x >= self.t_dc_gap {
            violations.push(Violation::CompressedGapTooLarge {
                d_x: self.d_x,
                t_dc_gap: self.t_dc_gap,
            });
        }
        let period_floor = 2 * self.t_sc + self.t_sc_gap;
        if period_floor <= self.t_cp_min {
            violations.push(Violation::PeriodFloor {
                lhs: period_floor,
                rhs: self.t_cp_min,
            });
        }
        let pitch = 2 * self.t_dc + self.t_dc_gap;
        if self.t_cp_min <= pitch {
            violations.push(Violation::InstanceSpacing {
                lhs: self.t_cp_min,
                rhs: pitch,
            });
        }
        let entry = self.t_sc + self.t_scdc_gap;
        if self.t_cp_min <= entry {
            violations.push(Violation::SyncShadow {
                lhs: self.t_cp_min,
                rhs: entry,
            });
        }
        if pitch < entry {
            violations.push(Violation::GapOrdering {
                lhs: pitch,
                rhs: entry,
            });
        }
        if !self.allow_txp_outside_bands {
            if !(25..=31).contains(&self.txp_sc) {
                violations.push(Violation::SyncPowerBand { txp: self.txp_sc });
            }
            if !(11..=25).contains(&self.txp_dc) {
                violations.push(Violation::MeasurementPowerBand { txp: self.txp_dc });
            }
        }
        ValidationReport { violations }
    }

    /// Instance starts within period `k` for the static (MPG) layout.
    fn instance_starts(&self, period_index: u64) -> Vec<Micros> {
        let base = period_index * self.gp + self.t_sc + self.t_scdc_gap;
        let count = match self.strategy {
            Strategy::Pg => 1,
            Strategy::Mpg | Strategy::Dmpg => self.ni.max(1),
        };
        (0..u64::from(count))
            .map(|i| base + i * (self.t_dc + self.t_dc_gap))
            .collect()
    }

    /// Build the static window list for period `k`.
    ///
    /// PG lays out one measurement window; MPG and DMPG lay out `ni` (DMPG
    /// compression is a runtime transformation, see [`reschedule_dmpg`]).
    pub fn build_timeline(&self, period_index: u64) -> Result<Vec<PhaseWindow>> {
        if self.strategy != Strategy::Pg {
            let report = self.validate();
            if !report.is_ok() {
                return Err(Error::InvalidSchedule(report.to_string()));
            }
        }
        // Overflow-safe fit check before any u64 start arithmetic.
        let count = match self.strategy {
            Strategy::Pg => 1,
            Strategy::Mpg | Strategy::Dmpg => u64::from(self.ni.max(1)),
        };
        let last_end = u128::from(self.t_sc)
            + u128::from(self.t_scdc_gap)
            + u128::from(count - 1) * (u128::from(self.t_dc) + u128::from(self.t_dc_gap))
            + u128::from(self.t_dc);
        if last_end > u128::from(self.gp) {
            return Err(Error::TimelineOverflow {
                count: count as u32,
                each_us: self.t_dc,
                period_us: self.gp,
                overflow_us: (last_end - u128::from(self.gp)) as u64,
            });
        }
        let period_start = period_index * self.gp;
        let mut windows = vec![PhaseWindow {
            phase: PhaseKind::Sync,
            start: period_start,
            duration: self.t_sc,
            txp: self.txp_sc,
        }];
        let starts = self.instance_starts(period_index);
        for start in starts {
            windows.push(PhaseWindow {
                phase: PhaseKind::Measurement,
                start,
                duration: self.t_dc,
                txp: self.txp_dc,
            });
        }
        Ok(windows)
    }

    /// Planned sensing span within each period: from the first instance
    /// start to the last instance end of the static split layout, clamped to
    /// the period. Windows are labeled against this span, so every labeled
    /// vehicle had a chance to meet an instance. The span uses `ni` for all
    /// strategies, which keeps labels identical when comparing layouts on
    /// the same traffic.
    pub fn sensing_span(&self) -> (Micros, Micros) {
        let first = self.t_sc + self.t_scdc_gap;
        let last_end =
            first + u64::from(self.ni.max(1) - 1) * (self.t_dc + self.t_dc_gap) + self.t_dc;
        (first.min(self.gp), last_end.min(self.gp))
    }

    /// Longest stretch not covered by any measurement window, including the
    /// wrap from the last window of one period to the first of the next.
    /// A vehicle whose contact period exceeds this cannot be missed.
    pub fn max_uncovered_gap(&self) -> Micros {
        let starts = self.instance_starts(0);
        let mut worst = starts[0]; // from period start to the first window
        for w in starts.windows(2) {
            worst = worst.max(w[1] - (w[0] + self.t_dc));
        }
        let last_end = starts.last().unwrap() + self.t_dc;
        worst.max(self.gp - last_end + starts[0])
    }
}

/// Repack the not-yet-started instances after a disturbance at
/// `trigger_time`: the remaining instances run from `trigger_time + d_x`
/// with gap `d_x`. Instances that no longer fit inside the current period
/// are dropped and counted.
pub fn reschedule_dmpg(
    schedule: &PhaseSchedule,
    remaining_starts: &[Micros],
    trigger_time: Micros,
) -> (Vec<Micros>, u32) {
    let period_end = (trigger_time / schedule.gp + 1) * schedule.gp;
    let pending = remaining_starts
        .iter()
        .filter(|&&s| s > trigger_time)
        .count() as u64;
    let mut kept = Vec::new();
    let mut dropped = 0;
    for j in 0..pending {
        let start = trigger_time + schedule.d_x + j * (schedule.t_dc + schedule.d_x);
        if start + schedule.t_dc <= period_end {
            kept.push(start);
        } else {
            dropped += 1;
        }
    }
    (kept, dropped)
}

/// Phase tag of one timeline window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseKind {
    Sync,
    Measurement,
    Share,
}

/// One scheduled window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseWindow {
    pub phase: PhaseKind,
    pub start: Micros,
    pub duration: Micros,
    pub txp: u8,
}

impl PhaseWindow {
    pub fn end(&self) -> Micros {
        self.start + self.duration
    }
}

/// One violated constraint, with both sides of the inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Violation {
    /// `gp` must equal `t_sc + t_sc_gap`.
    PeriodMismatch {
        gp: Micros,
        parts: Micros,
    },
    ZeroDuration {
        field: String,
    },
    DurationTooLarge {
        field: String,
        value: Micros,
    },
    /// `d_x` must stay below `t_dc_gap`.
    CompressedGapTooLarge {
        d_x: Micros,
        t_dc_gap: Micros,
    },
    /// `2*t_sc + t_sc_gap > t_cp_min` failed.
    PeriodFloor {
        lhs: Micros,
        rhs: Micros,
    },
    /// `t_cp_min > 2*t_dc + t_dc_gap` failed.
    InstanceSpacing {
        lhs: Micros,
        rhs: Micros,
    },
    /// `t_cp_min > t_sc + t_scdc_gap` failed.
    SyncShadow {
        lhs: Micros,
        rhs: Micros,
    },
    /// `2*t_dc + t_dc_gap >= t_sc + t_scdc_gap` failed.
    GapOrdering {
        lhs: Micros,
        rhs: Micros,
    },
    SyncPowerBand {
        txp: u8,
    },
    MeasurementPowerBand {
        txp: u8,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::PeriodMismatch { gp, parts } => {
                write!(f, "gp = {gp} us but t_sc + t_sc_gap = {parts} us")
            }
            Violation::ZeroDuration { field } => write!(f, "{field} must be positive"),
            Violation::DurationTooLarge { field, value } => {
                write!(
                    f,
                    "{field} = {value} us exceeds the supported bound {MAX_DURATION_US} us"
                )
            }
            Violation::CompressedGapTooLarge { d_x, t_dc_gap } => {
                write!(f, "d_x = {d_x} us must stay below t_dc_gap = {t_dc_gap} us")
            }
            Violation::PeriodFloor { lhs, rhs } => {
                write!(
                    f,
                    "2*t_sc + t_sc_gap = {lhs} us must exceed t_cp_min = {rhs} us"
                )
            }
            Violation::InstanceSpacing { lhs, rhs } => {
                write!(
                    f,
                    "t_cp_min = {lhs} us must exceed 2*t_dc + t_dc_gap = {rhs} us"
                )
            }
            Violation::SyncShadow { lhs, rhs } => {
                write!(
                    f,
                    "t_cp_min = {lhs} us must exceed t_sc + t_scdc_gap = {rhs} us"
                )
            }
            Violation::GapOrdering { lhs, rhs } => write!(
                f,
                "2*t_dc + t_dc_gap = {lhs} us must reach t_sc + t_scdc_gap = {rhs} us"
            ),
            Violation::SyncPowerBand { txp } => {
                write!(f, "sync power index {txp} outside operating band 25..=31")
            }
            Violation::MeasurementPowerBand { txp } => {
                write!(
                    f,
                    "measurement power index {txp} outside operating band 11..=25"
                )
            }
        }
    }
}

/// Validation outcome: empty means the schedule is sound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return f.write_str("schedule ok");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}
