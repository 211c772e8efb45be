//! Post-hoc open-set confidence scores.
//!
//! Four scores are available, all computed from a sample's logits (and, for
//! COSTARR, its penultimate features):
//!
//! * COSTARR: `GNL-normalized max logit * 0.5 (1 + cos(C_m(x), mu_m))`, where
//!   `C_m(x) = [F(x), F(x) ⊙ W_m]` and `mu_m` is the training mean of
//!   `C_m` over class `m`.
//! * MSP: the largest softmax probability.
//! * MaxLogit: the largest logit.
//! * Energy: the negative free energy `T log sum_k exp(l_k / T)`.
//!
//! Predicted class is always the argmax of the logits, ties going to the
//! lowest index. All arithmetic is `f64`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{OsrError, Result};
use crate::fmt::sig9;
use crate::pack::{FeaturePack, UNKNOWN_LABEL};

pub const DEFAULT_TEMPERATURE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "lowercase")]
pub enum ScoreMethod {
    Costarr,
    Msp,
    MaxLogit,
    Energy { temperature: f64 },
}

impl ScoreMethod {
    pub fn name(&self) -> &'static str {
        match self {
            ScoreMethod::Costarr => "costarr",
            ScoreMethod::Msp => "msp",
            ScoreMethod::MaxLogit => "maxlogit",
            ScoreMethod::Energy { .. } => "energy",
        }
    }

    pub fn all(temperature: f64) -> Vec<ScoreMethod> {
        vec![
            ScoreMethod::Costarr,
            ScoreMethod::Msp,
            ScoreMethod::MaxLogit,
            ScoreMethod::Energy { temperature },
        ]
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ScoreMethod::Energy { temperature } if !(*temperature > 0.0 && temperature.is_finite()) => {
                Err(OsrError::InvalidArgument(format!(
                    "energy temperature must be positive, got {temperature}"
                )))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for ScoreMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Accepts `costarr`, `msp`, `maxlogit`, `energy` and `energy:<T>`.
impl FromStr for ScoreMethod {
    type Err = OsrError;

    fn from_str(s: &str) -> Result<Self> {
        let method = match s.trim().to_ascii_lowercase().as_str() {
            "costarr" => ScoreMethod::Costarr,
            "msp" => ScoreMethod::Msp,
            "maxlogit" => ScoreMethod::MaxLogit,
            "energy" => ScoreMethod::Energy {
                temperature: DEFAULT_TEMPERATURE,
            },
            other => match other.strip_prefix("energy:") {
                Some(t) => ScoreMethod::Energy {
                    temperature: t.parse().map_err(|_| {
                        OsrError::InvalidArgument(format!("bad energy temperature {t:?}"))
                    })?,
                },
                None => return Err(OsrError::InvalidArgument(format!("unknown score method {s:?}"))),
            },
        };
        method.validate()?;
        Ok(method)
    }
}

/// Where MaxLogit reads its value from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaxLogitSource {
    /// Largest classification-head logit.
    #[default]
    Head,
    /// Largest coordinate of the penultimate feature vector.
    PenultimateMax,
}

impl FromStr for MaxLogitSource {
    type Err = OsrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "head" => Ok(MaxLogitSource::Head),
            "penultimate-max" => Ok(MaxLogitSource::PenultimateMax),
            other => Err(OsrError::InvalidArgument(format!(
                "unknown maxlogit source {other:?} (expected head or penultimate-max)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreOptions {
    pub maxlogit_source: MaxLogitSource,
}

// ---------------------------------------------------------------------------
// Kernels

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn hadamard(features: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    if features.len() != weights.len() {
        return Err(OsrError::InvalidArgument(format!(
            "hadamard length mismatch: {} vs {}",
            features.len(),
            weights.len()
        )));
    }
    Ok(features.iter().zip(weights).map(|(f, w)| f * w).collect())
}

pub fn concat(features: &[f64], hadamard: &[f64]) -> Result<Vec<f64>> {
    if features.len() != hadamard.len() {
        return Err(OsrError::InvalidArgument(format!(
            "concat length mismatch: {} vs {}",
            features.len(),
            hadamard.len()
        )));
    }
    let mut out = Vec::with_capacity(2 * features.len());
    out.extend_from_slice(features);
    out.extend_from_slice(hadamard);
    Ok(out)
}

/// `log sum exp(values)`, shifted by the maximum.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn msp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // exp(max - max) = 1 is the numerator of the top class.
    1.0 / logits.iter().map(|l| (l - max).exp()).sum::<f64>()
}

pub fn max_logit(logits: &[f64]) -> f64 {
    logits.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Negative free energy `T log sum_k exp(l_k / T)`.
pub fn neg_energy(logits: &[f64], temperature: f64) -> f64 {
    let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
    temperature * log_sum_exp(&scaled)
}

/// Cosine similarity, defined as 0 when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Cosine rescaled to `[0, 1]`.
pub fn similarity(a: &[f64], b: &[f64]) -> f64 {
    0.5 * (1.0 + cosine(a, b))
}

// ---------------------------------------------------------------------------
// Calibration

/// Training statistics used by COSTARR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    /// `K x 2d`: mean of `[F(x), F(x) ⊙ W_j]` over training samples of class `j`.
    pub mu: Vec<Vec<f64>>,
    pub logit_min: f64,
    pub logit_max: f64,
    pub class_counts: Vec<usize>,
}

/// Fits class means of the concatenated features and the global logit range
/// over `train`.
pub fn fit_calibration(pack: &FeaturePack, train: &[usize]) -> Result<CalibrationModel> {
    if train.is_empty() {
        return Err(OsrError::EmptySplit("training"));
    }
    let d = pack.dim;
    let mut sums = vec![vec![0.0f64; 2 * d]; pack.classes];
    let mut counts = vec![0usize; pack.classes];
    let mut logit_min = f64::INFINITY;
    let mut logit_max = f64::NEG_INFINITY;

    for &i in train {
        let label = *pack
            .labels
            .get(i)
            .ok_or_else(|| OsrError::InvalidArgument(format!("training index {i} out of range")))?;
        if label == UNKNOWN_LABEL || label as usize >= pack.classes {
            return Err(OsrError::InvalidArgument(format!(
                "training sample {i} has label {label}, not a known class"
            )));
        }
        let class = label as usize;
        let f = pack.feature_row(i);
        let w = pack.weight_row(class);
        let sum = &mut sums[class];
        for k in 0..d {
            let fk = f[k] as f64;
            sum[k] += fk;
            sum[d + k] += fk * w[k] as f64;
        }
        counts[class] += 1;
        for l in pack.logits_row(i) {
            logit_min = logit_min.min(l);
            logit_max = logit_max.max(l);
        }
    }

    let mu = sums
        .into_iter()
        .zip(&counts)
        .map(|(sum, &count)| {
            if count == 0 {
                sum
            } else {
                sum.into_iter().map(|s| s / count as f64).collect()
            }
        })
        .collect();
    Ok(CalibrationModel {
        mu,
        logit_min,
        logit_max,
        class_counts: counts,
    })
}

impl CalibrationModel {
    /// Widens the GNL range to cover the logits of `indices` as well.
    pub fn with_logit_range_from(mut self, pack: &FeaturePack, indices: &[usize]) -> Self {
        for &i in indices {
            for l in pack.logits_row(i) {
                self.logit_min = self.logit_min.min(l);
                self.logit_max = self.logit_max.max(l);
            }
        }
        self
    }

    /// Global min-max normalization of a logit, clamped to `[0, 1]`; 0.5 when
    /// the fitted range is degenerate.
    pub fn gnl(&self, logit: f64) -> f64 {
        let span = self.logit_max - self.logit_min;
        if span <= 0.0 {
            return 0.5;
        }
        ((logit - self.logit_min) / span).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostarrScore {
    pub pred: usize,
    pub score: f64,
    pub similarity: f64,
    pub lambda: f64,
    /// Predicted class had no training samples; similarity fell back to 0.5.
    pub empty_class: bool,
}

pub fn score_costarr(pack: &FeaturePack, i: usize, model: &CalibrationModel) -> Result<CostarrScore> {
    if model.mu.len() != pack.classes || model.mu.iter().any(|m| m.len() != 2 * pack.dim) {
        return Err(OsrError::InvalidArgument(
            "calibration model shape does not match pack".into(),
        ));
    }
    let logits = pack.logits_row(i);
    let pred = argmax(&logits);
    let lambda = logits
        .iter()
        .map(|&l| model.gnl(l))
        .fold(f64::NEG_INFINITY, f64::max);
    let empty_class = model.class_counts[pred] == 0;
    let similarity = if empty_class {
        0.5
    } else {
        let f = pack.features_f64(i);
        let h = hadamard(&f, &pack.weights_f64(pred))?;
        similarity(&concat(&f, &h)?, &model.mu[pred])
    };
    Ok(CostarrScore {
        pred,
        score: lambda * similarity,
        similarity,
        lambda,
        empty_class,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleScore {
    pub pred: usize,
    pub raw: f64,
    pub flagged: bool,
}

pub fn score_msp(pack: &FeaturePack, i: usize) -> SampleScore {
    let logits = pack.logits_row(i);
    SampleScore {
        pred: argmax(&logits),
        raw: msp(&logits),
        flagged: false,
    }
}

pub fn score_maxlogit(pack: &FeaturePack, i: usize, source: MaxLogitSource) -> SampleScore {
    let logits = pack.logits_row(i);
    let raw = match source {
        MaxLogitSource::Head => max_logit(&logits),
        MaxLogitSource::PenultimateMax => max_logit(&pack.features_f64(i)),
    };
    SampleScore {
        pred: argmax(&logits),
        raw,
        flagged: false,
    }
}

pub fn score_energy(pack: &FeaturePack, i: usize, temperature: f64) -> SampleScore {
    let logits = pack.logits_row(i);
    SampleScore {
        pred: argmax(&logits),
        raw: neg_energy(&logits, temperature),
        flagged: false,
    }
}

pub fn score_sample(
    pack: &FeaturePack,
    i: usize,
    method: ScoreMethod,
    model: Option<&CalibrationModel>,
    options: &ScoreOptions,
) -> Result<SampleScore> {
    Ok(match method {
        ScoreMethod::Costarr => {
            let s = score_costarr(pack, i, model.ok_or(OsrError::MissingCalibration)?)?;
            SampleScore {
                pred: s.pred,
                raw: s.score,
                flagged: s.empty_class,
            }
        }
        ScoreMethod::Msp => score_msp(pack, i),
        ScoreMethod::MaxLogit => score_maxlogit(pack, i, options.maxlogit_source),
        ScoreMethod::Energy { temperature } => score_energy(pack, i, temperature),
    })
}

// ---------------------------------------------------------------------------
// Scored sets

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub sample_id: usize,
    pub true_label: i32,
    pub pred_class: usize,
    pub raw_score: f64,
    pub norm_score: f64,
    pub flagged: bool,
}

impl ScoreRecord {
    pub fn is_known(&self) -> bool {
        self.true_label != UNKNOWN_LABEL
    }

    pub fn is_correct(&self) -> bool {
        self.is_known() && self.pred_class as i32 == self.true_label
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    pub method: ScoreMethod,
    pub records: Vec<ScoreRecord>,
}

pub const SCORED_CSV_HEADER: &str = "sample_id,true_label,pred_class,raw_score,norm_score,flag";

impl ScoredSet {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(SCORED_CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.sample_id,
                r.true_label,
                r.pred_class,
                sig9(r.raw_score),
                sig9(r.norm_score),
                u8::from(r.flagged)
            ));
        }
        out
    }

    /// Re-derives every `norm_score` from `raw_score` with `normalizer`.
    pub fn normalized_with(&self, normalizer: &Normalizer) -> ScoredSet {
        ScoredSet {
            method: self.method,
            records: self
                .records
                .iter()
                .map(|r| ScoreRecord {
                    norm_score: normalizer.apply(r.raw_score),
                    ..r.clone()
                })
                .collect(),
        }
    }
}

/// Min-max map onto `[0, 1]` fitted on a reference set of raw scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub min: f64,
    pub max: f64,
}

impl Normalizer {
    /// `None` for an empty input.
    pub fn fit(raw: impl IntoIterator<Item = f64>) -> Option<Normalizer> {
        raw.into_iter().fold(None, |acc, v| match acc {
            None => Some(Normalizer { min: v, max: v }),
            Some(n) => Some(Normalizer {
                min: n.min.min(v),
                max: n.max.max(v),
            }),
        })
    }

    pub fn apply(&self, raw: f64) -> f64 {
        if self.max <= self.min {
            return 0.5;
        }
        ((raw - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
    }
}

/// Scores every sample in `indices`. Normalized scores are provisionally
/// min-max mapped over this set's own raw scores; the evaluation pipeline
/// replaces them with validation-fitted ones.
pub fn score_all(
    pack: &FeaturePack,
    indices: &[usize],
    method: ScoreMethod,
    model: Option<&CalibrationModel>,
    options: &ScoreOptions,
) -> Result<ScoredSet> {
    method.validate()?;
    if method == ScoreMethod::Costarr && model.is_none() {
        return Err(OsrError::MissingCalibration);
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= pack.len()) {
        return Err(OsrError::InvalidArgument(format!(
            "sample index {bad} out of range for n = {}",
            pack.len()
        )));
    }
    let records = indices
        .par_iter()
        .map(|&i| {
            let s = score_sample(pack, i, method, model, options)?;
            Ok(ScoreRecord {
                sample_id: i,
                true_label: pack.labels[i],
                pred_class: s.pred,
                raw_score: s.raw,
                norm_score: 0.0,
                flagged: s.flagged,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let set = ScoredSet { method, records };
    Ok(match Normalizer::fit(set.records.iter().map(|r| r.raw_score)) {
        Some(n) => set.normalized_with(&n),
        None => set,
    })
}
