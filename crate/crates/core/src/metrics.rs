//! Feature extraction from raw flooding results.
//!
//! One measurement window spans the instances of one period at one
//! measurement point. The extracted features are the timeout count (TC),
//! worst-case latency (LT), reception count (RXCT), radio-on time (RO),
//! per-instance reliability (R), pooled RSSI/LQI statistics and, for
//! wide-area nodes, the hop count (HC).
//!
//! [`InstanceRecord`] is the canonical per-instance row: the simulator emits
//! it, trace files store it, and extraction consumes it, so simulated and
//! replayed pipelines share one code path.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::flood::GlossyRunResult;
use crate::traffic::Label;
use crate::util::RunningStats;
use crate::{Error, Micros, NodeId, Result};

/// Receiver-side record of one flooding instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub period: u64,
    pub instance: u32,
    /// Label/window bounds this instance belongs to.
    pub window_start_us: Micros,
    pub window_end_us: Micros,
    /// Instance start (absolute).
    pub t_start_us: Micros,
    /// Instance duration bound.
    pub gd_us: Micros,
    pub ntx: u32,
    /// Initiator attempts during the instance, first one included.
    pub tc: u32,
    pub received: bool,
    pub rx_count: u32,
    pub latency_us: Option<Micros>,
    pub radio_on_us: Micros,
    pub rssi: RunningStats,
    pub lqi: RunningStats,
}

impl InstanceRecord {
    /// Pull the receiver-side record out of a raw run result.
    pub fn from_run(
        run: &GlossyRunResult,
        receiver: NodeId,
        period: u64,
        instance: u32,
        window_start_us: Micros,
        window_end_us: Micros,
    ) -> Result<Self> {
        let rx = run.outcome(receiver)?;
        let init = run.outcome(run.initiator)?;
        Ok(InstanceRecord {
            period,
            instance,
            window_start_us,
            window_end_us,
            t_start_us: run.start_time,
            gd_us: run.max_duration,
            ntx: run.ntx,
            tc: init.initiator_timeout_count,
            received: rx.received,
            rx_count: rx.rx_count,
            latency_us: rx.latency,
            radio_on_us: rx.radio_on,
            rssi: rx.rssi,
            lqi: rx.lqi,
        })
    }
}

/// Sentinels used when a window saw no successful reception at all.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub rssi_sentinel_dbm: f64,
    pub lqi_sentinel: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            rssi_sentinel_dbm: -99.0,
            lqi_sentinel: 50.0,
        }
    }
}

/// Feature row for one measurement window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub tc: u32,
    pub lt_us: Micros,
    pub rxct: u32,
    pub ro_us: Micros,
    pub r: f64,
    pub rssi_avg_dbm: f64,
    pub rssi_sd_db: f64,
    pub lqi_avg: f64,
    pub lqi_sd: f64,
    /// Hop count; 0 outside wide-area sync floods.
    pub hc: u32,
    pub t_start_us: Micros,
    pub period: u64,
    pub label: Option<Label>,
}

pub const FEATURE_CSV_HEADER: [&str; 13] = [
    "tc",
    "lt_us",
    "rxct",
    "ro_us",
    "r",
    "rssi_avg_dbm",
    "rssi_sd_db",
    "lqi_avg",
    "lqi_sd",
    "hc",
    "t_start_us",
    "period",
    "label",
];

impl FeatureVector {
    /// Numeric feature slice consumed by the classifier, in header order.
    pub fn features(&self) -> [f64; 10] {
        [
            f64::from(self.tc),
            self.lt_us as f64,
            f64::from(self.rxct),
            self.ro_us as f64,
            self.r,
            self.rssi_avg_dbm,
            self.rssi_sd_db,
            self.lqi_avg,
            self.lqi_sd,
            f64::from(self.hc),
        ]
    }

    pub const FEATURE_NAMES: [&'static str; 10] = [
        "tc",
        "lt_us",
        "rxct",
        "ro_us",
        "r",
        "rssi_avg_dbm",
        "rssi_sd_db",
        "lqi_avg",
        "lqi_sd",
        "hc",
    ];
}

/// Aggregate one window's instance records into a feature row.
///
/// TC, RXCT and RO sum over instances, LT takes the worst case (an instance
/// that never delivered counts as its full duration), R is the fraction of
/// instances that delivered at least one packet, PHY statistics pool every
/// successful reception of the window.
pub fn extract_window(records: &[InstanceRecord], cfg: &MetricsConfig) -> Result<FeatureVector> {
    if records.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let mut tc = 0u32;
    let mut rxct = 0u32;
    let mut ro: Micros = 0;
    let mut lt: Micros = 0;
    let mut received = 0usize;
    let mut rssi = RunningStats::new();
    let mut lqi = RunningStats::new();
    for rec in records {
        tc += rec.tc;
        rxct += rec.rx_count;
        ro += rec.radio_on_us;
        lt = lt.max(rec.latency_us.unwrap_or(rec.gd_us));
        if rec.received {
            received += 1;
        }
        rssi.merge(&rec.rssi);
        lqi.merge(&rec.lqi);
    }
    let (rssi_avg, rssi_sd) = if rssi.count == 0 {
        (cfg.rssi_sentinel_dbm, 0.0)
    } else {
        (rssi.mean, rssi.stddev())
    };
    let (lqi_avg, lqi_sd) = if lqi.count == 0 {
        (cfg.lqi_sentinel, 0.0)
    } else {
        (lqi.mean, lqi.stddev())
    };
    Ok(FeatureVector {
        tc,
        lt_us: lt,
        rxct,
        ro_us: ro,
        r: received as f64 / records.len() as f64,
        rssi_avg_dbm: rssi_avg,
        rssi_sd_db: rssi_sd,
        lqi_avg,
        lqi_sd,
        hc: 0,
        t_start_us: records[0].window_start_us,
        period: records[0].period,
        label: None,
    })
}

/// Convenience wrapper: aggregate raw run results for one receiver.
pub fn extract_window_from_runs(
    runs: &[GlossyRunResult],
    receiver: NodeId,
    cfg: &MetricsConfig,
) -> Result<FeatureVector> {
    if runs.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let window_start = runs.iter().map(|r| r.start_time).min().unwrap();
    let window_end = runs
        .iter()
        .map(|r| r.start_time + r.max_duration)
        .max()
        .unwrap();
    let records: Vec<InstanceRecord> = runs
        .iter()
        .enumerate()
        .map(|(i, run)| {
            InstanceRecord::from_run(run, receiver, 0, i as u32, window_start, window_end)
        })
        .collect::<Result<_>>()?;
    extract_window(&records, cfg)
}

/// Mean and spread of per-window reliability at one power level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TxpPoint {
    pub txp: u8,
    pub mean_r: f64,
    pub sd_r: f64,
    pub windows: usize,
}

/// Group per-window reliability samples by power level.
///
/// Requires at least `min_samples` windows per level and reports the level
/// that falls short.
pub fn reliability_curve(samples: &[(u8, f64)], min_samples: usize) -> Result<Vec<TxpPoint>> {
    let mut by_level: std::collections::BTreeMap<u8, RunningStats> = Default::default();
    for &(txp, r) in samples {
        by_level.entry(txp).or_default().push(r);
    }
    let mut points = Vec::new();
    for (txp, stats) in by_level {
        if (stats.count as usize) < min_samples {
            return Err(Error::InsufficientSamples {
                level: txp,
                got: stats.count as usize,
                need: min_samples,
            });
        }
        points.push(TxpPoint {
            txp,
            mean_r: stats.mean,
            sd_r: stats.stddev(),
            windows: stats.count as usize,
        });
    }
    Ok(points)
}

fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

/// Write feature rows with the canonical header.
pub fn write_feature_csv<W: Write>(w: W, rows: &[FeatureVector]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(FEATURE_CSV_HEADER)?;
    for row in rows {
        out.write_record([
            row.tc.to_string(),
            row.lt_us.to_string(),
            row.rxct.to_string(),
            row.ro_us.to_string(),
            fmt_f64(row.r),
            fmt_f64(row.rssi_avg_dbm),
            fmt_f64(row.rssi_sd_db),
            fmt_f64(row.lqi_avg),
            fmt_f64(row.lqi_sd),
            row.hc.to_string(),
            row.t_start_us.to_string(),
            row.period.to_string(),
            row.label.map(|l| l.tag().to_string()).unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Read feature rows; lines starting with `#` carry run metadata and are
/// skipped.
pub fn read_feature_csv<R: Read>(r: R) -> Result<Vec<FeatureVector>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().ne(FEATURE_CSV_HEADER) {
        return Err(Error::HeaderMismatch {
            expected: FEATURE_CSV_HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let get = |i: usize| rec.get(i).unwrap_or("");
        let bad = |i: usize| {
            Error::Config(format!(
                "bad value {:?} in column {}",
                get(i),
                FEATURE_CSV_HEADER[i]
            ))
        };
        let parse_u = |i: usize| get(i).parse::<u64>().map_err(|_| bad(i));
        let parse_f = |i: usize| get(i).parse::<f64>().map_err(|_| bad(i));
        rows.push(FeatureVector {
            tc: parse_u(0)? as u32,
            lt_us: parse_u(1)?,
            rxct: parse_u(2)? as u32,
            ro_us: parse_u(3)?,
            r: parse_f(4)?,
            rssi_avg_dbm: parse_f(5)?,
            rssi_sd_db: parse_f(6)?,
            lqi_avg: parse_f(7)?,
            lqi_sd: parse_f(8)?,
            hc: parse_u(9)? as u32,
            t_start_us: parse_u(10)?,
            period: parse_u(11)?,
            label: match get(12) {
                "" => None,
                tag => Some(tag.parse()?),
            },
        });
    }
    Ok(rows)
}

pub const TRACE_CSV_HEADER: [&str; 18] = [
    "period",
    "instance",
    "window_start_us",
    "window_end_us",
    "t_start_us",
    "gd_us",
    "ntx",
    "tc",
    "received",
    "rx_count",
    "latency_us",
    "radio_on_us",
    "rssi_n",
    "rssi_avg",
    "rssi_sd",
    "lqi_n",
    "lqi_avg",
    "lqi_sd",
];

/// Write per-instance trace rows.
pub fn write_trace_csv<W: Write>(w: W, rows: &[InstanceRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TRACE_CSV_HEADER)?;
    for r in rows {
        out.write_record([
            r.period.to_string(),
            r.instance.to_string(),
            r.window_start_us.to_string(),
            r.window_end_us.to_string(),
            r.t_start_us.to_string(),
            r.gd_us.to_string(),
            r.ntx.to_string(),
            r.tc.to_string(),
            (r.received as u8).to_string(),
            r.rx_count.to_string(),
            r.latency_us.map(|l| l.to_string()).unwrap_or_default(),
            r.radio_on_us.to_string(),
            r.rssi.count.to_string(),
            fmt_f64(r.rssi.mean),
            fmt_f64(r.rssi.stddev()),
            r.lqi.count.to_string(),
            fmt_f64(r.lqi.mean),
            fmt_f64(r.lqi.stddev()),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Read per-instance trace rows; instance starts must be non-decreasing.
pub fn read_trace_csv<R: Read>(r: R) -> Result<Vec<InstanceRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().ne(TRACE_CSV_HEADER) {
        return Err(Error::HeaderMismatch {
            expected: TRACE_CSV_HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut rows: Vec<InstanceRecord> = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let get = |i: usize| rec.get(i).unwrap_or("");
        let bad = |i: usize| {
            Error::Config(format!(
                "bad value {:?} in column {}",
                get(i),
                TRACE_CSV_HEADER[i]
            ))
        };
        let parse_u = |i: usize| get(i).parse::<u64>().map_err(|_| bad(i));
        let parse_f = |i: usize| get(i).parse::<f64>().map_err(|_| bad(i));
        let row = InstanceRecord {
            period: parse_u(0)?,
            instance: parse_u(1)? as u32,
            window_start_us: parse_u(2)?,
            window_end_us: parse_u(3)?,
            t_start_us: parse_u(4)?,
            gd_us: parse_u(5)?,
            ntx: parse_u(6)? as u32,
            tc: parse_u(7)? as u32,
            received: parse_u(8)? != 0,
            rx_count: parse_u(9)? as u32,
            latency_us: match get(10) {
                "" => None,
                _ => Some(parse_u(10)?),
            },
            radio_on_us: parse_u(11)?,
            rssi: RunningStats::from_moments(parse_u(12)?, parse_f(13)?, parse_f(14)?),
            lqi: RunningStats::from_moments(parse_u(15)?, parse_f(16)?, parse_f(17)?),
        };
        if let Some(prev) = rows.last() {
            if row.t_start_us < prev.t_start_us {
                return Err(Error::TimestampDisorder(idx + 1));
            }
        }
        rows.push(row);
    }
    Ok(rows)
}
