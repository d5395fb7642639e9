//! Command implementations: sweeps with per-point output directories,
//! training/evaluation, and trace replay.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use vdsim::metrics::{
    extract_window, read_feature_csv, read_trace_csv, write_feature_csv, write_trace_csv,
    FeatureVector,
};
use vdsim::schedule::Strategy;
use vdsim::sim::{run_experiment, txp_reliability_sweep, ExperimentRecord};
use vdsim::svm::{self, ConfusionMatrix, LabelScheme, SvmConfig, SvmModel};
use vdsim::traffic::{GroundTruthLog, LabelMode};
use vdsim::util::RunningStats;

use crate::config::{FileConfig, SweepAxis};
use crate::ClassesArg;

/// One row of the sweep summary file.
struct SummaryRow {
    axis: String,
    value: String,
    metric: String,
    mean: f64,
    stddev: f64,
    n: usize,
}

/// Hash that stamps every output file of a run.
fn manifest_hash(manifest: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(manifest.as_bytes());
    hex::encode(&hasher.finalize()[..16])
}

fn point_manifest(cfg: &FileConfig, axis: &str, value: &str) -> (String, String) {
    // The output location is not part of the experiment's identity.
    let mut canonical = cfg.clone();
    canonical.experiment.out = PathBuf::from("out");
    let mut manifest = String::new();
    let _ = writeln!(manifest, "# run manifest");
    let _ = writeln!(manifest, "version = {:?}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(manifest, "axis = {axis:?}");
    let _ = writeln!(manifest, "value = {value:?}");
    manifest.push_str(&canonical.to_toml());
    let hash = manifest_hash(&manifest);
    (manifest, hash)
}

/// Write a file atomically: temp file in the same directory, then rename.
fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_features_with_manifest(
    path: &Path,
    hash: &str,
    rows: &[FeatureVector],
) -> anyhow::Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "# manifest: {hash}")?;
    write_feature_csv(&mut buf, rows)?;
    write_atomic(path, &buf)
}

/// Classifier defaults per labeling task. The balanced variants protect the
/// minority vehicle classes; the seven-class task trains unbalanced so rare
/// mixed classes cannot annex the saturated-feature region.
fn classifier_config(base: &SvmConfig, classes: ClassesArg) -> SvmConfig {
    SvmConfig {
        balance_classes: match classes {
            ClassesArg::Seven => false,
            _ => base.balance_classes,
        },
        ..*base
    }
}

fn dataset(
    rows: &[FeatureVector],
    classes: ClassesArg,
) -> anyhow::Result<(Vec<svm::LabeledSample>, usize)> {
    match classes {
        ClassesArg::Binary => Ok((
            svm::dataset_from_rows(rows, LabelScheme::BinaryDetection)?,
            0,
        )),
        ClassesArg::Seven => Ok((svm::dataset_from_rows(rows, LabelScheme::AsIs)?, 0)),
        ClassesArg::Four => {
            let kept: Vec<FeatureVector> = rows
                .iter()
                .filter(|r| r.label.map(|l| !l.is_mix()).unwrap_or(false))
                .cloned()
                .collect();
            let dropped = rows.len() - kept.len();
            Ok((svm::dataset_from_rows(&kept, LabelScheme::AsIs)?, dropped))
        }
    }
}

/// Train/evaluate once on an 80/20-style split; returns the held-out matrix.
fn split_train_eval(
    samples: &[svm::LabeledSample],
    fraction: f64,
    cfg: &SvmConfig,
    seed: u64,
    projected: bool,
) -> anyhow::Result<(SvmModel, ConfusionMatrix)> {
    let (samples, _) = svm::drop_rare_classes(samples, 8);
    let (train, test) = svm::split(&samples, fraction, seed)?;
    let (model, _) = svm::train_on_frequent(&train, cfg)?;
    let cm = if projected {
        svm::evaluate_projected(&model, &test)?
    } else {
        svm::evaluate(&model, &test)?
    };
    Ok((model, cm))
}

struct PointOutput {
    rows: Vec<SummaryRow>,
}

fn run_point(
    cfg: &FileConfig,
    axis: SweepAxis,
    value: f64,
    dir: &Path,
) -> anyhow::Result<PointOutput> {
    fs::create_dir_all(dir)?;
    let value_tag = match axis {
        SweepAxis::Strategy => ["pg", "mpg", "dmpg"][value as usize].to_string(),
        _ => format!("{value}"),
    };
    let (manifest, hash) = point_manifest(cfg, &axis.to_string(), &value_tag);
    write_atomic(&dir.join("manifest.toml"), manifest.as_bytes())?;

    let mut rows = Vec::new();
    let mut acc_stats = RunningStats::new();
    let mut coverage_stats = RunningStats::new();
    let mut per_seed_records: Vec<ExperimentRecord> = Vec::new();

    for &seed in &cfg.experiment.seeds {
        let params = cfg.sim_params(seed)?;
        let record = run_experiment(&params)?;
        let feature_rows = record.feature_rows();
        write_features_with_manifest(
            &dir.join(format!("features_seed{seed}.csv")),
            &hash,
            &feature_rows,
        )?;
        if cfg.sweep.emit_trace {
            for (mp, trace) in record.traces.iter().enumerate() {
                let mut buf = Vec::new();
                writeln!(buf, "# manifest: {hash}")?;
                write_trace_csv(&mut buf, trace)?;
                write_atomic(&dir.join(format!("trace_seed{seed}_mp{mp}.csv")), &buf)?;
                let mut gt = Vec::new();
                record.logs[mp].write_csv(&mut gt)?;
                write_atomic(
                    &dir.join(format!("ground_truth_seed{seed}_mp{mp}.csv")),
                    &gt,
                )?;
            }
        }
        if record.vehicles_total > 0 {
            coverage_stats.push(record.vehicles_covered as f64 / record.vehicles_total as f64);
        }

        // Per-axis evaluation.
        match axis {
            SweepAxis::Headway => {
                let (samples, _) = dataset(&feature_rows, ClassesArg::Seven)?;
                let vehicles = samples.iter().filter(|(_, l)| l != "N").count();
                let samples = svm::cap_class(&samples, "N", 2 * vehicles.max(1));
                let svm_cfg = classifier_config(&cfg.classifier, ClassesArg::Seven);
                let (_, cm) = split_train_eval(&samples, 0.75, &svm_cfg, seed, true)?;
                acc_stats.push(cm.mean_accuracy());
            }
            SweepAxis::Gp | SweepAxis::Strategy => {
                let (samples, _) = dataset(&feature_rows, ClassesArg::Binary)?;
                let svm_cfg = classifier_config(&cfg.classifier, ClassesArg::Binary);
                let (_, cm) = split_train_eval(&samples, 0.8, &svm_cfg, seed, false)?;
                acc_stats.push(cm.mean_accuracy());
            }
            _ => {}
        }
        per_seed_records.push(record);
    }

    let axis_name = axis.to_string();
    let mut push = |metric: &str, stats: &RunningStats| {
        rows.push(SummaryRow {
            axis: axis_name.clone(),
            value: value_tag.clone(),
            metric: metric.to_string(),
            mean: stats.mean,
            stddev: stats.stddev(),
            n: stats.count as usize,
        });
    };

    match axis {
        SweepAxis::Headway | SweepAxis::Gp | SweepAxis::Strategy => {
            push("accuracy", &acc_stats);
            push("coverage", &coverage_stats);
        }
        SweepAxis::MpCount | SweepAxis::FnCount => {
            for metric in ["sc_lt_us", "sc_ro_us", "sc_hc", "sc_rxct"] {
                let mut stats = RunningStats::new();
                for record in &per_seed_records {
                    let nodes = match axis {
                        // The forwarder sweep tracks the fixed MP population.
                        SweepAxis::FnCount => record.topology.mp_nodes(),
                        _ => record.topology.all_nodes(),
                    };
                    let v = match metric {
                        "sc_lt_us" => record.sc_mean(&nodes, |a| a.lt_us.mean),
                        "sc_ro_us" => record.sc_mean(&nodes, |a| a.ro_us.mean),
                        "sc_hc" => record.sc_mean(&nodes, |a| a.hc.mean),
                        _ => record.sc_mean(&nodes, |a| a.rxct.mean),
                    };
                    stats.push(v);
                }
                push(metric, &stats);
            }
            let mut completion = RunningStats::new();
            let mut radio_on = RunningStats::new();
            for record in &per_seed_records {
                if let Some(ip) = &record.iphase {
                    completion.push(ip.completion_us.mean);
                    radio_on.push(ip.radio_on_us.mean);
                }
            }
            if completion.count > 0 {
                push("iphase_completion_us", &completion);
                push("iphase_radio_on_us", &radio_on);
            }
        }
        SweepAxis::Txp => {}
    }
    Ok(PointOutput { rows })
}

/// Run the configured sweep.
pub fn sweep(cfg: &FileConfig, jobs: usize) -> anyhow::Result<()> {
    let out = cfg.experiment.out.clone();
    fs::create_dir_all(&out)?;
    let axis = cfg.sweep.axis;

    validate_sweep_values(cfg)?;
    let mut summary: Vec<SummaryRow> = Vec::new();
    if axis == SweepAxis::Txp {
        // The power study runs its own two-node harness, off-road and
        // on-road, with draws shared across levels.
        let levels: Vec<u8> = cfg.sweep.values.iter().map(|&v| v as u8).collect();
        let windows = cfg.experiment.periods as usize;
        let seed = cfg.experiment.seeds[0];
        let (manifest, hash) = point_manifest(cfg, "txp", "all");
        write_atomic(&out.join("manifest.toml"), manifest.as_bytes())?;
        let mut buf = Vec::new();
        writeln!(buf, "# manifest: {hash}")?;
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["setting", "txp", "mean_r", "sd_r", "windows"])?;
        for (setting, traffic) in [("off-road", None), ("on-road", Some(&cfg.traffic.config))] {
            let points = txp_reliability_sweep(&levels, windows, traffic, &cfg.channel, seed)?;
            for p in &points {
                w.write_record([
                    setting.to_string(),
                    p.txp.to_string(),
                    format!("{}", p.mean_r),
                    format!("{}", p.sd_r),
                    p.windows.to_string(),
                ])?;
                summary.push(SummaryRow {
                    axis: "txp".to_string(),
                    value: format!("{}:{}", setting, p.txp),
                    metric: "mean_r".to_string(),
                    mean: p.mean_r,
                    stddev: p.sd_r,
                    n: p.windows,
                });
            }
        }
        w.flush()?;
        drop(w);
        write_atomic(&out.join("reliability.csv"), &buf)?;
    } else {
        let points: Vec<(usize, f64)> = match axis {
            SweepAxis::Strategy => (0..3).map(|i| (i, i as f64)).collect(),
            _ => cfg.sweep.values.iter().copied().enumerate().collect(),
        };
        if points.is_empty() {
            bail!("sweep.values must not be empty for axis {axis}");
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .context("building worker pool")?;
        let results: Vec<anyhow::Result<(usize, PointOutput)>> = pool.install(|| {
            points
                .par_iter()
                .map(|&(idx, value)| {
                    let mut point_cfg = cfg.clone();
                    let dir_name = apply_axis(&mut point_cfg, axis, value)?;
                    let dir = out.join(dir_name);
                    let output = run_point(&point_cfg, axis, value, &dir)?;
                    Ok((idx, output))
                })
                .collect()
        });
        let mut ordered: Vec<(usize, PointOutput)> =
            results.into_iter().collect::<anyhow::Result<_>>()?;
        ordered.sort_by_key(|(idx, _)| *idx);
        for (_, output) in ordered {
            summary.extend(output.rows);
        }
    }

    let mut buf = Vec::new();
    let mut w = csv::Writer::from_writer(&mut buf);
    w.write_record(["axis", "value", "metric", "mean", "stddev", "n"])?;
    for row in &summary {
        w.write_record([
            row.axis.clone(),
            row.value.clone(),
            row.metric.clone(),
            format!("{}", row.mean),
            format!("{}", row.stddev),
            row.n.to_string(),
        ])?;
    }
    w.flush()?;
    drop(w);
    write_atomic(&out.join("summary.csv"), &buf)?;
    println!(
        "sweep complete: {} summary rows in {}",
        summary.len(),
        out.display()
    );
    Ok(())
}

/// Reject sweep values outside their documented domains up front.
fn validate_sweep_values(cfg: &FileConfig) -> anyhow::Result<()> {
    for &v in &cfg.sweep.values {
        let ok = match cfg.sweep.axis {
            SweepAxis::Txp => (0.0..=31.0).contains(&v) && v.fract() == 0.0,
            SweepAxis::Headway => v > cfg.traffic.config.min_gap_s,
            SweepAxis::Gp => v > 0.0 && (v * 1e6) as u64 > cfg.schedule.0.t_sc,
            SweepAxis::Strategy => true,
            SweepAxis::MpCount | SweepAxis::FnCount => v >= 0.0 && v.fract() == 0.0,
        };
        if !ok {
            bail!(
                "sweep value {v} outside the domain of axis {}",
                cfg.sweep.axis
            );
        }
    }
    if cfg.sweep.axis == SweepAxis::MpCount && cfg.sweep.values.iter().any(|&v| v < 1.0) {
        bail!("mp_count sweep needs at least one measurement point per value");
    }
    Ok(())
}

/// Apply one axis value to a point config; returns the point directory name.
fn apply_axis(cfg: &mut FileConfig, axis: SweepAxis, value: f64) -> anyhow::Result<String> {
    match axis {
        SweepAxis::Txp => unreachable!("txp sweep has a dedicated path"),
        SweepAxis::Headway => {
            cfg.traffic.config.mean_headway_s = value;
            // Equalize vehicle counts across levels.
            let periods = (2_400.0 * value) as u64;
            cfg.experiment.periods = periods.max(cfg.experiment.periods);
            Ok(format!("headway_{value}"))
        }
        SweepAxis::Gp => {
            let gp = (value * 1e6) as u64;
            let s = &mut cfg.schedule.0;
            s.gp = gp;
            s.t_sc_gap = gp - s.t_sc;
            s.ni = s.default_ni();
            Ok(format!("gp_{value}"))
        }
        SweepAxis::Strategy => {
            let strategy = [Strategy::Pg, Strategy::Mpg, Strategy::Dmpg][value as usize];
            cfg.schedule.0.strategy = strategy;
            Ok(format!("strategy_{strategy}"))
        }
        SweepAxis::MpCount => {
            cfg.scenario.mp_count = Some(value as usize);
            Ok(format!("mp_{}", value as usize))
        }
        SweepAxis::FnCount => {
            cfg.scenario.fn_count = Some(value as usize);
            Ok(format!("fn_{}", value as usize))
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn train(
    data: &[PathBuf],
    classes: ClassesArg,
    split: f64,
    seed: u64,
    model_out: &Path,
    report_out: Option<&Path>,
    balanced: Option<bool>,
    linear: bool,
    c: f64,
) -> anyhow::Result<()> {
    let mut rows = Vec::new();
    for path in data {
        let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        rows.extend(read_feature_csv(file)?);
    }
    let (samples, dropped_mixed) = dataset(&rows, classes)?;
    if dropped_mixed > 0 {
        println!("cleaned {dropped_mixed} mixed/overlapped windows");
    }
    let mut svm_cfg = classifier_config(
        &SvmConfig {
            rbf: !linear,
            c,
            seed,
            ..Default::default()
        },
        classes,
    );
    if let Some(balanced) = balanced {
        svm_cfg.balance_classes = balanced;
    }
    let (samples, rare) = svm::drop_rare_classes(&samples, 8);
    if !rare.is_empty() {
        println!("dropped rare classes: {rare:?}");
    }
    let (train_set, test_set) = svm::split(&samples, split, seed)?;
    let (model, skipped) = svm::train_on_frequent(&train_set, &svm_cfg)?;
    if !skipped.is_empty() {
        println!("classes too sparse to train: {skipped:?}");
    }
    let cm = svm::evaluate(&model, &test_set)?;
    let report = format!(
        "trained on {} samples, evaluated on {}\n{cm}",
        train_set.len(),
        test_set.len()
    );
    println!("{report}");
    let mut buf = Vec::new();
    model.write(&mut buf)?;
    write_atomic(model_out, &buf)?;
    if let Some(path) = report_out {
        write_atomic(path, report.as_bytes())?;
    }
    Ok(())
}

pub fn eval(
    model_path: &Path,
    data: &Path,
    project: bool,
    report_out: Option<&Path>,
) -> anyhow::Result<()> {
    let model = SvmModel::read(fs::File::open(model_path)?)?;
    let rows = read_feature_csv(fs::File::open(data)?)?;
    let (samples, _) = dataset(&rows, ClassesArg::Seven)?;
    let cm = if project {
        svm::evaluate_projected(&model, &samples)?
    } else {
        svm::evaluate(&model, &samples)?
    };
    let report = format!("{cm}");
    println!("{report}");
    if let Some(path) = report_out {
        write_atomic(path, report.as_bytes())?;
    }
    Ok(())
}

pub fn replay(
    trace: &Path,
    ground_truth: &Path,
    out: &Path,
    classes: ClassesArg,
    corridor_width_m: f64,
    per_instance: bool,
) -> anyhow::Result<()> {
    let records = read_trace_csv(fs::File::open(trace)?)?;
    let log = GroundTruthLog::read_csv(fs::File::open(ground_truth)?, corridor_width_m)?;
    let metrics_cfg = vdsim::metrics::MetricsConfig::default();

    let mut rows: Vec<FeatureVector> = Vec::new();
    let mut dropped_mixed = 0usize;
    let mut group: Vec<vdsim::metrics::InstanceRecord> = Vec::new();
    let flush = |group: &mut Vec<vdsim::metrics::InstanceRecord>,
                 rows: &mut Vec<FeatureVector>,
                 dropped: &mut usize|
     -> anyhow::Result<()> {
        if group.is_empty() {
            return Ok(());
        }
        let mut fv = extract_window(group, &metrics_cfg)?;
        if per_instance {
            // One row per instance: the label interval stays the window's.
            fv.t_start_us = group[0].t_start_us;
        }
        let (from, to) = (group[0].window_start_us, group[0].window_end_us);
        match classes {
            ClassesArg::Four => match log.label_window(from, to, LabelMode::FourClass) {
                Ok(label) => fv.label = Some(label),
                Err(vdsim::Error::MixedOccupancy) => {
                    *dropped += 1;
                    group.clear();
                    return Ok(());
                }
                Err(e) => return Err(e.into()),
            },
            _ => fv.label = Some(log.label_window(from, to, LabelMode::SevenClass)?),
        }
        rows.push(fv);
        group.clear();
        Ok(())
    };
    for rec in records {
        if let Some(last) = group.last() {
            let boundary = if per_instance {
                true
            } else {
                last.period != rec.period
            };
            if boundary {
                flush(&mut group, &mut rows, &mut dropped_mixed)?;
            }
        }
        group.push(rec);
    }
    flush(&mut group, &mut rows, &mut dropped_mixed)?;

    if dropped_mixed > 0 {
        println!("dropped {dropped_mixed} mixed/overlapped windows");
    }

    let trace_text = fs::read_to_string(trace)?;
    let hash = trace_text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix("# manifest: "))
        .map(str::to_string)
        .unwrap_or_else(|| manifest_hash(&trace_text));
    write_features_with_manifest(out, &hash, &rows)?;
    println!("replayed {} windows into {}", rows.len(), out.display());
    Ok(())
}
