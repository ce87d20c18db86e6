//! Stage-1 shared-covariance discriminant fits for fault classification and
//! communication reduction, plus stage-2 per-mode Gaussian fault statistics.
//!
//! Features are standardized inside the fit (binary topology statuses kept
//! as 0/1 beforehand), so the stored coefficient vectors are directly
//! comparable across features and the importance ranking needs no second
//! pass. Classification is unaffected by the standardization.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::RealLu;
use crate::scenario::{Dataset, FaultClass, FaultRecord, FAULT_CLASSES};

/// Ridge factor applied to the pooled covariance: `lambda = RIDGE * tr/d`.
const RIDGE: f64 = 1e-6;

/// Shared-covariance discriminant model over standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    pub classes: Vec<FaultClass>,
    pub feature_names: Vec<String>,
    /// Per-feature (mean, scale) used to standardize inputs.
    pub standardization: Vec<(f64, f64)>,
    /// Class means in standardized space, one row per class.
    pub means: Vec<Vec<f64>>,
    /// Pooled within-class covariance (standardized space), row-major d x d.
    pub covariance: Vec<f64>,
    /// Its (ridge-regularized) inverse.
    pub precision: Vec<f64>,
    pub priors: Vec<f64>,
}

/// Importance of every feature for class separation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature_names: Vec<String>,
    /// Coefficient vectors `precision * mean_k`, one per class.
    pub class_coefficients: Vec<Vec<f64>>,
    /// Per feature: max over classes of |coefficient|.
    pub scores: Vec<f64>,
    /// Feature indices sorted by descending score.
    pub ranking: Vec<usize>,
}

/// How to pick the communicated feature subset.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    /// Keep discrete features scoring at least `fraction * max_score`.
    ThresholdFraction(f64),
    /// Keep the best `k` discrete features.
    TopK(usize),
}

impl Default for SelectionRule {
    fn default() -> Self {
        SelectionRule::ThresholdFraction(0.1)
    }
}

/// The discrete features a relay needs communicated, in canonical model
/// order. Local measurements (current, voltage) are always available and
/// never part of this set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReducedFeatureSet {
    /// Indices into the model's canonical topology-feature order.
    pub discrete: Vec<usize>,
    pub discrete_names: Vec<String>,
    pub local_names: Vec<String>,
}

/// One class's 2-D Gaussian over (I_F amps, V_F pu) within a mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassGaussian {
    pub mean_i: f64,
    pub mean_v: f64,
    pub var_i: f64,
    pub var_v: f64,
    pub cov_iv: f64,
    pub count: usize,
    /// Set when a variance had to be floored during regularization.
    pub degenerate: bool,
}

/// Per-mode fault statistics for one relay.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeStatistics {
    /// Mode id encoded little-endian over the reduced set's canonical order.
    pub mode_bits: usize,
    pub sample_count: usize,
    pub supported: bool,
    pub per_class: BTreeMap<String, ClassGaussian>,
}

/// Record partition over the 2^k modes of a reduced feature set.
#[derive(Debug, Clone)]
pub struct ModePartition {
    pub mode_count: usize,
    /// Mode id per record (parallel to the input records).
    pub mode_of_record: Vec<usize>,
    pub counts: Vec<usize>,
}

/// Minimum samples for a mode to be optimized, and per present class.
pub const MODE_SUPPORT_FLOOR: usize = 10;
pub const CLASS_FLOOR: usize = 3;
const VARIANCE_FLOOR: f64 = 1e-12;

/// Feature rows for one relay: topology statuses as 0/1, then local current
/// and voltage.
pub fn relay_rows(dataset: &Dataset, relay: usize) -> (Vec<Vec<f64>>, Vec<FaultClass>) {
    let mut rows = Vec::new();
    let mut classes = Vec::new();
    for rec in dataset.for_relay(relay) {
        rows.push(record_features(rec));
        classes.push(rec.class);
    }
    (rows, classes)
}

pub fn record_features(rec: &FaultRecord) -> Vec<f64> {
    rec.features
        .iter()
        .map(|&b| f64::from(u8::from(b)))
        .chain([rec.i_f_a, rec.v_f_pu])
        .collect()
}

/// Names for [`relay_rows`] columns.
pub fn row_feature_names(dataset: &Dataset) -> Vec<String> {
    dataset
        .feature_names
        .iter()
        .cloned()
        .chain(["I_F".to_string(), "V_F".to_string()])
        .collect()
}

/// Fit the shared-covariance discriminant: class sample means, pooled
/// within-class covariance with a ridge, priors from class frequencies.
pub fn fit_lda(
    rows: &[Vec<f64>],
    classes: &[FaultClass],
    feature_names: &[String],
) -> Result<LdaModel> {
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = feature_names.len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: rows.iter().map(|r| r.len()).find(|&l| l != d).unwrap_or(0),
        });
    }
    let n = rows.len();

    let present: Vec<FaultClass> = FAULT_CLASSES
        .iter()
        .copied()
        .filter(|c| classes.contains(c))
        .collect();
    if present.len() < 2 {
        return Err(Error::MissingClass(format!(
            "need at least 2 classes, found {:?}",
            present
        )));
    }
    for &c in &present {
        let count = classes.iter().filter(|&&x| x == c).count();
        if count < d + 1 {
            return Err(Error::TooFewSamples {
                class: c.to_string(),
                got: count,
                need: d + 1,
            });
        }
    }

    // standardize: constant columns keep scale 1 and center to zero
    let mut standardization = Vec::with_capacity(d);
    for j in 0..d {
        let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        let m = crate::stats::mean(&col);
        let sd = crate::stats::variance(&col).sqrt();
        standardization.push((m, if sd > 0.0 { sd } else { 1.0 }));
    }
    let std_rows: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            r.iter()
                .zip(&standardization)
                .map(|(x, (m, s))| (x - m) / s)
                .collect()
        })
        .collect();

    let k = present.len();
    let mut means = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (row, &c) in std_rows.iter().zip(classes) {
        let ki = present.iter().position(|&p| p == c).unwrap();
        counts[ki] += 1;
        for j in 0..d {
            means[ki][j] += row[j];
        }
    }
    for ki in 0..k {
        for j in 0..d {
            means[ki][j] /= counts[ki] as f64;
        }
    }

    let mut cov = vec![0.0; d * d];
    for (row, &c) in std_rows.iter().zip(classes) {
        let ki = present.iter().position(|&p| p == c).unwrap();
        for a in 0..d {
            let da = row[a] - means[ki][a];
            for b in a..d {
                let db = row[b] - means[ki][b];
                cov[a * d + b] += da * db;
            }
        }
    }
    let denom = (n - k).max(1) as f64;
    for a in 0..d {
        for b in a..d {
            let v = cov[a * d + b] / denom;
            cov[a * d + b] = v;
            cov[b * d + a] = v;
        }
    }
    let trace: f64 = (0..d).map(|j| cov[j * d + j]).sum();
    let lambda = (RIDGE * trace / d as f64).max(1e-12);
    for j in 0..d {
        cov[j * d + j] += lambda;
    }

    let lu = RealLu::factor(&cov, d, 1e-14).ok_or(Error::RankDeficient)?;
    let precision = lu.inverse();

    let priors: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();

    Ok(LdaModel {
        classes: present,
        feature_names: feature_names.to_vec(),
        standardization,
        means,
        covariance: cov,
        precision,
        priors,
    })
}

impl LdaModel {
    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.standardization)
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    /// Linear discriminant value per class (log posterior up to a shared
    /// constant).
    fn discriminants(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        let z = self.standardize(x);
        let mut out = Vec::with_capacity(self.classes.len());
        for (ki, mean) in self.means.iter().enumerate() {
            // w = precision * mean_k
            let mut wx = 0.0;
            let mut wm = 0.0;
            for a in 0..d {
                let mut w_a = 0.0;
                for b in 0..d {
                    w_a += self.precision[a * d + b] * mean[b];
                }
                wx += w_a * z[a];
                wm += w_a * mean[a];
            }
            out.push(wx - 0.5 * wm + self.priors[ki].ln());
        }
        Ok(out)
    }

    /// Posterior class probabilities via log-sum-exp.
    pub fn posterior(&self, x: &[f64]) -> Result<Vec<f64>> {
        let disc = self.discriminants(x)?;
        let max = disc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = disc.iter().map(|&v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        Ok(exps.into_iter().map(|e| e / sum).collect())
    }

    pub fn predict(&self, x: &[f64]) -> Result<FaultClass> {
        let p = self.posterior(x)?;
        let ki = p
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.partial_cmp(b).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        Ok(self.classes[ki])
    }
}

/// Fraction of argmax-posterior matches, with per-class confusion counts.
pub fn accuracy(
    model: &LdaModel,
    rows: &[Vec<f64>],
    classes: &[FaultClass],
) -> Result<(f64, BTreeMap<String, BTreeMap<String, usize>>)> {
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut hits = 0usize;
    let mut confusion: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for (row, &truth) in rows.iter().zip(classes) {
        let pred = model.predict(row)?;
        if pred == truth {
            hits += 1;
        }
        *confusion
            .entry(truth.to_string())
            .or_default()
            .entry(pred.to_string())
            .or_insert(0) += 1;
    }
    Ok((hits as f64 / rows.len() as f64, confusion))
}

/// Coefficients and per-feature scores. The model is already standardized,
/// so coefficients compare directly across features.
pub fn feature_importance(model: &LdaModel) -> FeatureImportance {
    let d = model.dim();
    let mut class_coefficients = Vec::with_capacity(model.classes.len());
    for mean in &model.means {
        let mut w = vec![0.0; d];
        for a in 0..d {
            for b in 0..d {
                w[a] += model.precision[a * d + b] * mean[b];
            }
        }
        class_coefficients.push(w);
    }
    let scores: Vec<f64> = (0..d)
        .map(|j| {
            class_coefficients
                .iter()
                .map(|w| w[j].abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let mut ranking: Vec<usize> = (0..d).collect();
    ranking.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    FeatureImportance {
        feature_names: model.feature_names.clone(),
        class_coefficients,
        scores,
        ranking,
    }
}

/// Pick the discrete features to communicate. `n_discrete` leading features
/// of the row layout are discrete; the trailing ones are local. The result
/// keeps canonical order so mode bits are stable.
pub fn select_features(
    imp: &FeatureImportance,
    rule: SelectionRule,
    n_discrete: usize,
) -> ReducedFeatureSet {
    let mut chosen: Vec<usize> = match rule {
        SelectionRule::ThresholdFraction(frac) => {
            let max = imp.scores.iter().copied().fold(0.0, f64::max);
            if max == 0.0 {
                Vec::new()
            } else {
                let cut = frac * max;
                (0..n_discrete).filter(|&j| imp.scores[j] >= cut).collect()
            }
        }
        SelectionRule::TopK(k) => {
            let mut discrete_ranked: Vec<usize> = imp
                .ranking
                .iter()
                .copied()
                .filter(|&j| j < n_discrete)
                .collect();
            discrete_ranked.truncate(k);
            discrete_ranked
        }
    };
    chosen.sort_unstable();
    ReducedFeatureSet {
        discrete_names: chosen
            .iter()
            .map(|&j| imp.feature_names[j].clone())
            .collect(),
        local_names: imp.feature_names[n_discrete..].to_vec(),
        discrete: chosen,
    }
}

impl ReducedFeatureSet {
    /// Mode id of a topology feature vector: bit i is the value of the i-th
    /// selected feature (canonical order, little-endian).
    pub fn mode_of(&self, features: &[bool]) -> usize {
        self.discrete
            .iter()
            .enumerate()
            .map(|(i, &j)| usize::from(features[j]) << i)
            .sum()
    }

    pub fn mode_count(&self) -> usize {
        1 << self.discrete.len()
    }

    /// Human-readable mode description like `S1=open,PC2=closed`.
    pub fn describe_mode(&self, mode: usize) -> String {
        if self.discrete.is_empty() {
            return "single-mode".to_string();
        }
        self.discrete_names
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let closed = (mode >> i) & 1 == 1;
                format!("{name}={}", if closed { "closed" } else { "open" })
            })
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Assign every record to its mode. Errors when 2^k would exceed the cap.
pub fn enumerate_modes(
    set: &ReducedFeatureSet,
    records: &[&FaultRecord],
    cap: usize,
) -> Result<ModePartition> {
    if set.discrete.len() > cap {
        return Err(Error::ModeCapExceeded(set.discrete.len(), cap));
    }
    let mode_count = set.mode_count();
    let mut counts = vec![0usize; mode_count];
    let mode_of_record: Vec<usize> = records
        .iter()
        .map(|rec| {
            let m = set.mode_of(&rec.features);
            counts[m] += 1;
            m
        })
        .collect();
    Ok(ModePartition {
        mode_count,
        mode_of_record,
        counts,
    })
}

/// Per-mode, per-class sample mean and covariance of (I_F, V_F). Classes
/// absent from a mode are simply not listed; thin modes are flagged
/// unsupported.
pub fn fit_mode_statistics(
    records: &[&FaultRecord],
    partition: &ModePartition,
) -> Vec<ModeStatistics> {
    (0..partition.mode_count)
        .map(|mode| {
            let idx: Vec<usize> = (0..records.len())
                .filter(|&i| partition.mode_of_record[i] == mode)
                .collect();
            let mut per_class = BTreeMap::new();
            for &class in FAULT_CLASSES.iter() {
                let pts: Vec<(f64, f64)> = idx
                    .iter()
                    .map(|&i| records[i])
                    .filter(|r| r.class == class)
                    .map(|r| (r.i_f_a, r.v_f_pu))
                    .collect();
                if pts.len() < CLASS_FLOOR {
                    continue;
                }
                let is: Vec<f64> = pts.iter().map(|p| p.0).collect();
                let vs: Vec<f64> = pts.iter().map(|p| p.1).collect();
                let mut var_i = crate::stats::variance(&is);
                let mut var_v = crate::stats::variance(&vs);
                let degenerate = var_i < VARIANCE_FLOOR || var_v < VARIANCE_FLOOR;
                var_i = var_i.max(VARIANCE_FLOOR);
                var_v = var_v.max(VARIANCE_FLOOR);
                per_class.insert(
                    class.to_string(),
                    ClassGaussian {
                        mean_i: crate::stats::mean(&is),
                        mean_v: crate::stats::mean(&vs),
                        var_i,
                        var_v,
                        cov_iv: crate::stats::covariance(&is, &vs),
                        count: pts.len(),
                        degenerate,
                    },
                );
            }
            ModeStatistics {
                mode_bits: mode,
                sample_count: idx.len(),
                supported: idx.len() >= MODE_SUPPORT_FLOOR && !per_class.is_empty(),
                per_class,
            }
        })
        .collect()
}

/// Serialized per-relay model artifact: stage-1 fit, importance, selection,
/// stage-2 statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelayModelFile {
    pub version: String,
    pub relay: String,
    pub lda: LdaModel,
    pub importance: FeatureImportance,
    pub selected: ReducedFeatureSet,
    pub mode_statistics: Vec<ModeStatistics>,
}

pub const MODEL_FILE_VERSION: &str = "mgprot model v1";

pub fn write_model_file(file: &RelayModelFile, path: &std::path::Path) -> Result<()> {
    let text = serde_json::to_string_pretty(file).map_err(|e| Error::Serde(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_model_file(path: &std::path::Path) -> Result<RelayModelFile> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let file: RelayModelFile =
        serde_json::from_str(&text).map_err(|e| Error::Serde(e.to_string()))?;
    if file.version != MODEL_FILE_VERSION {
        return Err(Error::SchemaVersion {
            found: file.version,
            expected: MODEL_FILE_VERSION.to_string(),
        });
    }
    Ok(file)
}
