//! Lightweight SVM: binary detection and one-vs-rest size classification.
//!
//! Training standardizes the features, then solves each binary subproblem
//! with an SMO-style dual solver (maximal-violating-pair working set,
//! LIBSVM-shape pair updates). Models are label-agnostic: classes are
//! strings, so the same pipeline trains four-class, seven-class and binary
//! detectors.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::FeatureVector;
use crate::traffic::Label;
use crate::util::rng_from_seed;
use crate::{Error, Result};

/// A labeled feature row.
pub type LabeledSample = (Vec<f64>, String);

/// Kernel choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

impl Kernel {
    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
        }
    }
}

/// Training configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub rbf: bool,
    /// `None` picks `1 / (n_features * mean feature variance)` on the
    /// standardized data.
    pub gamma: Option<f64>,
    pub c: f64,
    /// KKT-gap stopping tolerance.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Scale each sample's penalty by the inverse frequency of its class.
    pub balance_classes: bool,
    /// Minimum samples required per class.
    pub min_class_size: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            rbf: true,
            gamma: None,
            c: 1.0,
            tol: 1e-4,
            max_iter: 2_000_000,
            seed: 0,
            balance_classes: true,
            min_class_size: 10,
        }
    }
}

/// Per-feature standardization fitted on the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Input indices kept (non-constant on the training set).
    pub kept: Vec<usize>,
    /// Constant input features dropped during fitting.
    pub dropped: Vec<usize>,
    pub input_dim: usize,
}

impl Scaler {
    pub fn fit(samples: &[LabeledSample]) -> Scaler {
        let input_dim = samples[0].0.len();
        let n = samples.len() as f64;
        let mut mean = vec![0.0; input_dim];
        for (x, _) in samples {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; input_dim];
        for (x, _) in samples {
            for ((v, m), xi) in var.iter_mut().zip(&mean).zip(x) {
                *v += (xi - m) * (xi - m);
            }
        }
        for v in &mut var {
            *v /= n;
        }
        let mut kept = Vec::new();
        let mut dropped = Vec::new();
        for (i, &v) in var.iter().enumerate() {
            if v.sqrt() > 1e-12 {
                kept.push(i);
            } else {
                dropped.push(i);
            }
        }
        Scaler {
            mean: kept.iter().map(|&i| mean[i]).collect(),
            std: kept.iter().map(|&i| var[i].sqrt()).collect(),
            kept,
            dropped,
            input_dim,
        }
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::ArityMismatch {
                got: x.len(),
                expected: self.input_dim,
            });
        }
        Ok(self
            .kept
            .iter()
            .enumerate()
            .map(|(j, &i)| (x[i] - self.mean[j]) / self.std[j])
            .collect())
    }
}

/// One margin classifier of the one-vs-rest ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMachine {
    /// Class this machine separates from the rest.
    pub positive: String,
    /// `alpha_i * y_i` per support vector.
    pub sv_coef: Vec<f64>,
    /// Support vectors in standardized coordinates.
    pub support_vectors: Vec<Vec<f64>>,
    pub bias: f64,
    /// Collapsed weight vector (linear kernel only).
    pub weights: Option<Vec<f64>>,
    pub iterations: usize,
}

impl BinaryMachine {
    /// Decision value on a standardized sample.
    pub fn decision(&self, kernel: &Kernel, x: &[f64]) -> f64 {
        if let (Kernel::Linear, Some(w)) = (kernel, &self.weights) {
            return w.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>() + self.bias;
        }
        self.sv_coef
            .iter()
            .zip(&self.support_vectors)
            .map(|(coef, sv)| coef * kernel.eval(sv, x))
            .sum::<f64>()
            + self.bias
    }
}

/// Trained model: scaler, kernel, margin machines and the class order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub version: u32,
    pub scaler: Scaler,
    pub kernel: Kernel,
    pub classes: Vec<String>,
    pub machines: Vec<BinaryMachine>,
    pub config: SvmConfig,
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

impl SvmModel {
    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<SvmModel> {
        let model: SvmModel = serde_json::from_reader(r)?;
        if model.version != MODEL_FORMAT_VERSION {
            return Err(Error::UnsupportedModelVersion(model.version));
        }
        Ok(model)
    }

    /// Predicted label plus per-class decision values. Ties go to the
    /// earlier class in the fixed class order.
    pub fn predict(&self, features: &[f64]) -> Result<(String, Vec<(String, f64)>)> {
        let x = self.scaler.transform(features)?;
        let decisions: Vec<(String, f64)> = if self.classes.len() == 2 {
            let d = self.machines[0].decision(&self.kernel, &x);
            vec![(self.classes[0].clone(), -d), (self.classes[1].clone(), d)]
        } else {
            self.machines
                .iter()
                .map(|m| (m.positive.clone(), m.decision(&self.kernel, &x)))
                .collect()
        };
        let mut best = 0;
        for (i, d) in decisions.iter().enumerate() {
            if d.1 > decisions[best].1 {
                best = i;
            }
        }
        Ok((decisions[best].0.clone(), decisions))
    }
}

/// Confusion matrix over an ordered class list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    /// `counts[true][predicted]`
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    fn new(classes: Vec<String>) -> Self {
        let n = classes.len();
        ConfusionMatrix {
            classes,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn overall_accuracy(&self) -> f64 {
        let correct: u64 = (0..self.classes.len()).map(|i| self.counts[i][i]).sum();
        correct as f64 / self.total() as f64
    }

    /// Accuracy per truth class, skipping classes with no test samples.
    pub fn per_class_accuracy(&self) -> Vec<(String, f64)> {
        self.classes
            .iter()
            .enumerate()
            .filter_map(|(i, c)| {
                let row: u64 = self.counts[i].iter().sum();
                (row > 0).then(|| (c.clone(), self.counts[i][i] as f64 / row as f64))
            })
            .collect()
    }

    /// Unweighted mean of the per-class accuracies.
    pub fn mean_accuracy(&self) -> f64 {
        let per = self.per_class_accuracy();
        per.iter().map(|(_, a)| a).sum::<f64>() / per.len() as f64
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:>9}", "true/pred")?;
        for c in &self.classes {
            write!(f, "{c:>8}")?;
        }
        writeln!(f, "{:>10}", "accuracy")?;
        for (i, c) in self.classes.iter().enumerate() {
            write!(f, "{c:>9}")?;
            for v in &self.counts[i] {
                write!(f, "{v:>8}")?;
            }
            let row: u64 = self.counts[i].iter().sum();
            if row > 0 {
                writeln!(f, "{:>9.1}%", 100.0 * self.counts[i][i] as f64 / row as f64)?;
            } else {
                writeln!(f, "{:>10}", "-")?;
            }
        }
        writeln!(
            f,
            "mean accuracy {:.2}%  overall {:.2}%",
            100.0 * self.mean_accuracy(),
            100.0 * self.overall_accuracy()
        )
    }
}

fn class_counts(samples: &[LabeledSample]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for (_, label) in samples {
        *counts.entry(label.clone()).or_insert(0) += 1;
    }
    counts
}

/// Train a model. Deterministic for a given dataset and configuration.
pub fn train(samples: &[LabeledSample], config: &SvmConfig) -> Result<SvmModel> {
    let counts = class_counts(samples);
    if counts.len() < 2 {
        return Err(Error::DegenerateClasses(counts.len()));
    }
    for (label, &n) in &counts {
        if n < config.min_class_size {
            return Err(Error::TooFewSamples {
                label: label.clone(),
                got: n,
                need: config.min_class_size,
            });
        }
    }
    let classes: Vec<String> = counts.keys().cloned().collect();

    let scaler = Scaler::fit(samples);
    let scaled: Vec<Vec<f64>> = samples
        .iter()
        .map(|(x, _)| scaler.transform(x))
        .collect::<Result<_>>()?;
    let dim = scaler.kept.len();

    let kernel = if config.rbf {
        let gamma = config.gamma.unwrap_or_else(|| {
            let n = scaled.len() as f64;
            let mean_var = if dim == 0 {
                1.0
            } else {
                let mut acc = 0.0;
                for j in 0..dim {
                    let m: f64 = scaled.iter().map(|x| x[j]).sum::<f64>() / n;
                    acc += scaled.iter().map(|x| (x[j] - m) * (x[j] - m)).sum::<f64>() / n;
                }
                acc / dim as f64
            };
            1.0 / (dim.max(1) as f64 * mean_var.max(1e-12))
        });
        Kernel::Rbf { gamma }
    } else {
        Kernel::Linear
    };

    // The kernel matrix does not depend on labels; share it across machines.
    let n = scaled.len();
    let mut k = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i..n {
            let v = kernel.eval(&scaled[i], &scaled[j]);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }

    let total = samples.len() as f64;
    let n_classes = classes.len() as f64;
    let penalty: Vec<f64> = samples
        .iter()
        .map(|(_, label)| {
            if config.balance_classes {
                config.c * total / (n_classes * counts[label] as f64)
            } else {
                config.c
            }
        })
        .collect();

    let machine_targets: Vec<&String> = if classes.len() == 2 {
        vec![&classes[1]]
    } else {
        classes.iter().collect()
    };
    let mut machines = Vec::new();
    for positive in machine_targets {
        let y: Vec<f64> = samples
            .iter()
            .map(|(_, l)| if l == positive { 1.0 } else { -1.0 })
            .collect();
        let solution = smo_solve(&k, n, &y, &penalty, config.tol, config.max_iter)?;
        let mut sv_coef = Vec::new();
        let mut support_vectors = Vec::new();
        for i in 0..n {
            if solution.alpha[i] > 1e-12 {
                sv_coef.push(solution.alpha[i] * y[i]);
                support_vectors.push(scaled[i].clone());
            }
        }
        let weights = match kernel {
            Kernel::Linear => {
                let mut w = vec![0.0; dim];
                for (coef, sv) in sv_coef.iter().zip(&support_vectors) {
                    for (wj, xj) in w.iter_mut().zip(sv) {
                        *wj += coef * xj;
                    }
                }
                Some(w)
            }
            Kernel::Rbf { .. } => None,
        };
        machines.push(BinaryMachine {
            positive: positive.clone(),
            sv_coef,
            support_vectors,
            bias: solution.bias,
            weights,
            iterations: solution.iterations,
        });
    }

    Ok(SvmModel {
        version: MODEL_FORMAT_VERSION,
        scaler,
        kernel,
        classes,
        machines,
        config: *config,
    })
}

struct SmoSolution {
    alpha: Vec<f64>,
    bias: f64,
    iterations: usize,
}

/// Minimize `0.5 a'Qa - e'a` over `0 <= a_i <= C_i`, `y'a = 0`, where
/// `Q_ij = y_i y_j K_ij`, by repeatedly optimizing the maximal violating
/// pair. Fully deterministic.
fn smo_solve(
    k: &[f64],
    n: usize,
    y: &[f64],
    c: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<SmoSolution> {
    const TAU: f64 = 1e-12;
    let q = |i: usize, j: usize| y[i] * y[j] * k[i * n + j];
    let mut alpha = vec![0.0f64; n];
    let mut grad = vec![-1.0f64; n]; // G = Qa - e
    let mut iterations = 0;
    let (mut m_up, mut m_low);
    loop {
        // Maximal violating pair: the largest -yG among coordinates free to
        // grow versus the smallest among those free to shrink.
        let mut i_up: Option<usize> = None;
        let mut i_low: Option<usize> = None;
        m_up = f64::NEG_INFINITY;
        m_low = f64::INFINITY;
        for t in 0..n {
            let v = -y[t] * grad[t];
            let positive = y[t] > 0.0;
            let in_up = (positive && alpha[t] < c[t]) || (!positive && alpha[t] > 0.0);
            let in_low = (positive && alpha[t] > 0.0) || (!positive && alpha[t] < c[t]);
            if in_up && v > m_up {
                m_up = v;
                i_up = Some(t);
            }
            if in_low && v < m_low {
                m_low = v;
                i_low = Some(t);
            }
        }
        if m_up - m_low <= tol {
            break;
        }
        if iterations >= max_iter {
            return Err(Error::NotConverged {
                iterations,
                gap: m_up - m_low,
            });
        }
        let (i, j) = (i_up.unwrap(), i_low.unwrap());

        // Both label cases share the curvature along the pair direction:
        // ||phi(x_i) - phi(x_j)||^2.
        let quad = (k[i * n + i] + k[j * n + j] - 2.0 * k[i * n + j]).max(TAU);
        let (old_ai, old_aj) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > c[i] - c[j] {
                if alpha[i] > c[i] {
                    alpha[i] = c[i];
                    alpha[j] = c[i] - diff;
                }
            } else if alpha[j] > c[j] {
                alpha[j] = c[j];
                alpha[i] = c[j] + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c[i] {
                if alpha[i] > c[i] {
                    alpha[i] = c[i];
                    alpha[j] = sum - c[i];
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c[j] {
                if alpha[j] > c[j] {
                    alpha[j] = c[j];
                    alpha[i] = sum - c[j];
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let (d_i, d_j) = (alpha[i] - old_ai, alpha[j] - old_aj);
        for (t, g) in grad.iter_mut().enumerate() {
            *g += q(t, i) * d_i + q(t, j) * d_j;
        }
        iterations += 1;
    }
    Ok(SmoSolution {
        alpha,
        bias: (m_up + m_low) / 2.0,
        iterations,
    })
}

/// Cap one class at `max` rows, keeping an even stride through the set.
/// Deterministic; rows of other classes pass through untouched.
pub fn cap_class(samples: &[LabeledSample], label: &str, max: usize) -> Vec<LabeledSample> {
    let total = samples.iter().filter(|(_, l)| l == label).count();
    if total <= max || max == 0 {
        return samples.to_vec();
    }
    let mut kept = 0usize;
    let mut seen = 0usize;
    samples
        .iter()
        .filter(|(_, l)| {
            if l != label {
                return true;
            }
            seen += 1;
            let want = seen * max / total;
            if want > kept {
                kept += 1;
                true
            } else {
                false
            }
        })
        .cloned()
        .collect()
}

/// Remove classes rarer than `min` rows. Returns the kept rows and the
/// dropped class labels.
pub fn drop_rare_classes(
    samples: &[LabeledSample],
    min: usize,
) -> (Vec<LabeledSample>, Vec<String>) {
    let counts = class_counts(samples);
    let dropped: Vec<String> = counts
        .iter()
        .filter(|(_, &n)| n < min)
        .map(|(l, _)| l.clone())
        .collect();
    let kept = samples
        .iter()
        .filter(|(_, l)| !dropped.contains(l))
        .cloned()
        .collect();
    (kept, dropped)
}

/// Train on the classes that have enough samples, dropping the rest.
///
/// Sparse classes (fewer than `min_class_size` rows) cannot be learned;
/// they stay in any test set and simply score as errors there. Returns the
/// model and the dropped class labels.
pub fn train_on_frequent(
    samples: &[LabeledSample],
    config: &SvmConfig,
) -> Result<(SvmModel, Vec<String>)> {
    let counts = class_counts(samples);
    let dropped: Vec<String> = counts
        .iter()
        .filter(|(_, &n)| n < config.min_class_size)
        .map(|(l, _)| l.clone())
        .collect();
    let kept: Vec<LabeledSample> = samples
        .iter()
        .filter(|(_, l)| !dropped.contains(l))
        .cloned()
        .collect();
    let model = train(&kept, config)?;
    Ok((model, dropped))
}

/// Evaluate a model on labeled samples.
pub fn evaluate(model: &SvmModel, samples: &[LabeledSample]) -> Result<ConfusionMatrix> {
    if samples.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let mut classes: Vec<String> = model.classes.clone();
    for (_, label) in samples {
        if !classes.contains(label) {
            classes.push(label.clone());
        }
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (x, label) in samples {
        let (pred, _) = model.predict(x)?;
        let t = cm.index(label).unwrap();
        let p = cm.index(&pred).unwrap();
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

fn base_of(label: &str) -> String {
    label
        .parse::<Label>()
        .map(|l| l.base().tag().to_string())
        .unwrap_or_else(|_| label.to_string())
}

fn is_mix(label: &str) -> bool {
    label.parse::<Label>().map(|l| l.is_mix()).unwrap_or(false)
}

/// Score a seven-class model in four-class space.
///
/// Mixed truth collapses onto its base class and a mixed prediction is
/// accepted for it; a mixed prediction on single-vehicle truth stays a
/// distinct (wrong) column.
pub fn evaluate_projected(model: &SvmModel, samples: &[LabeledSample]) -> Result<ConfusionMatrix> {
    if samples.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let mut classes: Vec<String> = Vec::new();
    let push = |c: String, classes: &mut Vec<String>| {
        if !classes.contains(&c) {
            classes.push(c);
        }
    };
    for c in &model.classes {
        push(base_of(c), &mut classes);
    }
    for (_, label) in samples {
        push(base_of(label), &mut classes);
    }
    for c in &model.classes {
        push(c.clone(), &mut classes);
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (x, label) in samples {
        let (pred, _) = model.predict(x)?;
        let truth = base_of(label);
        let pred = if is_mix(label) { base_of(&pred) } else { pred };
        let t = cm.index(&truth).unwrap();
        let p = cm.index(&pred).unwrap();
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

/// Stratified split: per-class proportions preserved within one sample.
pub fn split(
    samples: &[LabeledSample],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<LabeledSample>, Vec<LabeledSample>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::BadSplitFraction(fraction));
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, (_, label)) in samples.iter().enumerate() {
        by_class.entry(label).or_default().push(i);
    }
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (class_no, (label, mut idx)) in by_class.into_iter().enumerate() {
        if idx.len() < 2 {
            return Err(Error::TooFewSamples {
                label: label.to_string(),
                got: idx.len(),
                need: 2,
            });
        }
        let mut rng = rng_from_seed(seed.wrapping_add(class_no as u64));
        for i in (1..idx.len()).rev() {
            let j = rng.gen_range(0..=i);
            idx.swap(i, j);
        }
        let take = ((idx.len() as f64 * fraction).round() as usize).clamp(1, idx.len() - 1);
        train_idx.extend_from_slice(&idx[..take]);
        test_idx.extend_from_slice(&idx[take..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let pick = |ids: &[usize]| ids.iter().map(|&i| samples[i].clone()).collect();
    Ok((pick(&train_idx), pick(&test_idx)))
}

/// How feature rows map onto training labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelScheme {
    /// Keep window labels as they are (four- or seven-class data).
    AsIs,
    /// Vehicle present (`V`) versus none (`N`).
    BinaryDetection,
}

/// Turn labeled feature rows into classifier samples.
pub fn dataset_from_rows(
    rows: &[FeatureVector],
    scheme: LabelScheme,
) -> Result<Vec<LabeledSample>> {
    rows.iter()
        .map(|row| {
            let label = row
                .label
                .ok_or_else(|| Error::Config("unlabeled feature row".to_string()))?;
            let tag = match scheme {
                LabelScheme::AsIs => label.tag().to_string(),
                LabelScheme::BinaryDetection => {
                    if label == Label::None { "N" } else { "V" }.to_string()
                }
            };
            Ok((row.features().to_vec(), tag))
        })
        .collect()
}
