//! Shared fixtures and independent reference implementations for the
//! integration tests. Nothing here calls into the scoring or metrics code
//! paths it is used to check.

#![allow(dead_code)]

use osr_bench::pack::FeaturePack;
use osr_bench::scoring::{ScoreMethod, ScoreRecord, ScoredSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random pack with `d <= 8`, `K <= 5`, `n <= 64`; at least one sample of
/// class 0 so a training set exists. Stored logits are present half the time.
pub fn random_pack(rng: &mut ChaCha8Rng) -> FeaturePack {
    let dim = rng.random_range(1..=8);
    let classes = rng.random_range(1..=5);
    let n = rng.random_range(1..=64);
    let scale = [0.1, 1.0, 5.0][rng.random_range(0..3)];
    let draw = |rng: &mut ChaCha8Rng, len: usize| -> Vec<f32> {
        (0..len).map(|_| (rng.random_range(-1.0..1.0) * scale) as f32).collect()
    };
    let features = draw(rng, n * dim);
    let weights = draw(rng, classes * dim);
    let bias = draw(rng, classes);
    let logits = if rng.random_bool(0.5) {
        Some(draw(rng, n * classes))
    } else {
        None
    };
    let mut labels: Vec<i32> = (0..n).map(|_| rng.random_range(-1..classes as i32)).collect();
    labels[0] = 0;
    FeaturePack {
        dim,
        classes,
        features,
        logits,
        labels,
        weights,
        bias,
        class_names: (0..classes).map(|c| format!("c{c}")).collect(),
    }
}

// ---------------------------------------------------------------------------
// Score oracles: direct transcriptions of the defining formulas.

pub fn row_f64(values: &[f32], row: usize, width: usize) -> Vec<f64> {
    values[row * width..(row + 1) * width].iter().map(|&v| v as f64).collect()
}

pub fn oracle_logits(pack: &FeaturePack, i: usize) -> Vec<f64> {
    match &pack.logits {
        Some(l) => row_f64(l, i, pack.classes),
        None => {
            let f = row_f64(&pack.features, i, pack.dim);
            (0..pack.classes)
                .map(|j| {
                    let w = row_f64(&pack.weights, j, pack.dim);
                    let mut acc = 0.0;
                    for k in 0..pack.dim {
                        acc += f[k] * w[k];
                    }
                    acc + pack.bias[j] as f64
                })
                .collect()
        }
    }
}

fn first_argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for j in 0..v.len() {
        if v[j] > v[best] {
            best = j;
        }
    }
    best
}

/// `C_j(x) = Concat(F(x), F(x) ⊙ W_j)`.
fn concat_features(pack: &FeaturePack, i: usize, j: usize) -> Vec<f64> {
    let f = row_f64(&pack.features, i, pack.dim);
    let w = row_f64(&pack.weights, j, pack.dim);
    let mut c = f.clone();
    for k in 0..pack.dim {
        c.push(f[k] * w[k]);
    }
    c
}

pub struct CostarrOracle {
    pub pred: usize,
    pub similarity: f64,
    pub lambda: f64,
    pub score: f64,
}

/// COSTARR for sample `x` with class means and logit range taken from `train`.
pub fn oracle_costarr(pack: &FeaturePack, train: &[usize], x: usize) -> CostarrOracle {
    let logits = oracle_logits(pack, x);
    let m = first_argmax(&logits);

    // Two-pass class mean of C_m over training samples of class m.
    let members: Vec<usize> = train.iter().copied().filter(|&t| pack.labels[t] == m as i32).collect();
    let mut mu = vec![0.0; 2 * pack.dim];
    for &t in &members {
        for (acc, v) in mu.iter_mut().zip(concat_features(pack, t, m)) {
            *acc += v;
        }
    }
    for v in mu.iter_mut() {
        *v /= members.len().max(1) as f64;
    }

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &t in train {
        for l in oracle_logits(pack, t) {
            lo = lo.min(l);
            hi = hi.max(l);
        }
    }
    let gnl = |l: f64| if hi > lo { ((l - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.5 };

    let c = concat_features(pack, x, m);
    let dot: f64 = c.iter().zip(&mu).map(|(a, b)| a * b).sum();
    let nc = c.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nm = mu.iter().map(|a| a * a).sum::<f64>().sqrt();
    let cos = if members.is_empty() || nc == 0.0 || nm == 0.0 { 0.0 } else { dot / (nc * nm) };
    let similarity = 0.5 * (1.0 + cos);
    let lambda = logits.iter().map(|&l| gnl(l)).fold(0.0, f64::max);
    CostarrOracle {
        pred: m,
        similarity,
        lambda,
        score: lambda * similarity,
    }
}

/// `max_j exp(l_j) / sum_k exp(l_k)` without any shift.
pub fn oracle_msp(logits: &[f64]) -> (usize, f64) {
    let m = first_argmax(logits);
    let total: f64 = logits.iter().map(|l| l.exp()).sum();
    (m, logits[m].exp() / total)
}

pub fn oracle_maxlogit(logits: &[f64]) -> (usize, f64) {
    let m = first_argmax(logits);
    (m, logits[m])
}

/// `T log sum exp(l / T)` without any shift.
pub fn oracle_energy(logits: &[f64], t: f64) -> f64 {
    t * logits.iter().map(|l| (l / t).exp()).sum::<f64>().ln()
}

/// `T log sum exp(l / T)` accumulated pairwise with `log1p`, usable where
/// the unshifted sum overflows.
pub fn oracle_energy_pairwise(logits: &[f64], t: f64) -> f64 {
    let mut acc = f64::NEG_INFINITY;
    for &l in logits {
        let v = l / t;
        acc = if acc == f64::NEG_INFINITY {
            v
        } else {
            acc.max(v) + (-(acc - v).abs()).exp().ln_1p()
        };
    }
    t * acc
}

// ---------------------------------------------------------------------------
// Metric oracles: naive recounts.

/// Random scored set with ties in both raw and normalized scores, at least
/// one known and one unknown sample.
pub fn random_scored_set(rng: &mut ChaCha8Rng, max_n: usize) -> ScoredSet {
    let n = rng.random_range(2..=max_n);
    let classes = rng.random_range(1..=4);
    let raw_levels = rng.random_range(2..=200) as f64;
    let records = (0..n)
        .map(|i| {
            let true_label = if i == 0 {
                -1
            } else if i == 1 {
                0
            } else {
                rng.random_range(-1..classes as i32)
            };
            ScoreRecord {
                sample_id: i,
                true_label,
                pred_class: rng.random_range(0..classes),
                raw_score: (rng.random_range(0.0..1.0) * raw_levels).floor() / raw_levels * 6.0 - 3.0,
                norm_score: (rng.random_range(0.0..1.0f64) * 20.0).round() / 20.0,
                flagged: false,
            }
        })
        .collect();
    ScoredSet {
        method: ScoreMethod::Msp,
        records,
    }
}

pub fn naive_oosa(set: &ScoredSet, tau: f64) -> f64 {
    let mut good = 0usize;
    for r in &set.records {
        let accepted = r.norm_score >= tau;
        if r.true_label == -1 {
            if !accepted {
                good += 1;
            }
        } else if accepted && r.pred_class as i32 == r.true_label {
            good += 1;
        }
    }
    good as f64 / set.records.len() as f64
}

/// `(points, area)` of the OSCR curve by recounting at every distinct raw score.
pub fn naive_oscr(set: &ScoredSet) -> (Vec<(f64, f64)>, f64) {
    let knowns = set.records.iter().filter(|r| r.true_label != -1).count();
    let unknowns = set.records.len() - knowns;
    let mut thresholds: Vec<f64> = set.records.iter().map(|r| r.raw_score).collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();

    let mut points = vec![(0.0, 0.0)];
    let mut accuracy = 0.0;
    for &t in &thresholds {
        let fp = set.records.iter().filter(|r| r.true_label == -1 && r.raw_score >= t).count();
        let cc = set
            .records
            .iter()
            .filter(|r| r.true_label != -1 && r.raw_score >= t && r.pred_class as i32 == r.true_label)
            .count();
        accuracy = cc as f64 / knowns as f64;
        points.push((fp as f64 / unknowns as f64, accuracy));
    }
    points.push((1.0, accuracy));
    let mut area = 0.0;
    for k in 1..points.len() {
        area += (points[k].0 - points[k - 1].0) * (points[k].1 + points[k - 1].1) / 2.0;
    }
    (points, area)
}
