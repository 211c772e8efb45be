//! Synthetic open-set feature packs.
//!
//! Every class gets a centroid on a random orthant direction `s / sqrt(d)`
//! (`s` a sign vector), chosen greedily among random candidates to keep sign
//! vectors far apart in Hamming distance. Centroids are then scaled so the
//! closest pair sits exactly `class_sep` apart. Samples are centroid plus
//! isotropic Gaussian noise. The head weights are the known-class centroids
//! with zero bias, so logits are `<x, centroid_j>`.
//!
//! The random stream is ChaCha8 seeded from `seed`; Gaussian draws use the
//! ziggurat sampler of `rand_distr::StandardNormal`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{OsrError, Result};
use crate::pack::{FeaturePack, UNKNOWN_LABEL};

const CANDIDATES_PER_CLASS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub known_classes: usize,
    pub unknown_classes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub class_sep: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(OsrError::InvalidSpec(msg));
        if self.known_classes == 0 || self.unknown_classes == 0 {
            return bad("known and unknown class counts must be at least 1".into());
        }
        if self.dim == 0 || self.samples_per_class == 0 {
            return bad("dimension and samples per class must be at least 1".into());
        }
        if !(self.class_sep >= 0.0 && self.class_sep.is_finite()) {
            return bad(format!("class_sep must be non-negative, got {}", self.class_sep));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be positive, got {}", self.noise_sigma));
        }
        let total = self.known_classes + self.unknown_classes;
        if self.dim < 64 && (1u64 << self.dim) < total as u64 {
            return bad(format!(
                "dimension {} too small to place {total} distinct orthant centroids",
                self.dim
            ));
        }
        Ok(())
    }
}

fn hamming(a: &[bool], b: &[bool]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

fn random_signs(rng: &mut ChaCha8Rng, dim: usize) -> Vec<bool> {
    (0..dim).map(|_| rng.random::<bool>()).collect()
}

/// Picks `count` distinct sign vectors, each the best of a batch of random
/// candidates by minimum Hamming distance to those already chosen.
fn place_orthants(rng: &mut ChaCha8Rng, dim: usize, count: usize) -> Vec<Vec<bool>> {
    let mut chosen: Vec<Vec<bool>> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut best: Option<(usize, Vec<bool>)> = None;
        for _ in 0..CANDIDATES_PER_CLASS {
            let candidate = random_signs(rng, dim);
            let distance = chosen.iter().map(|c| hamming(c, &candidate)).min().unwrap_or(dim);
            if best.as_ref().is_none_or(|(d, _)| distance > *d) {
                best = Some((distance, candidate));
            }
        }
        let (distance, mut signs) = best.expect("at least one candidate");
        if distance == 0 {
            // Nearly saturated orthant space: scan codes from a random start.
            // validate() guarantees dim < 64 here and a free code exists.
            let space = 1u64 << dim;
            let start = rng.random_range(0..space);
            signs = (0..space)
                .map(|k| (start + k) % space)
                .map(|code| (0..dim).map(|bit| code >> bit & 1 == 1).collect::<Vec<bool>>())
                .find(|s| !chosen.contains(s))
                .expect("free orthant exists");
        }
        chosen.push(signs);
    }
    chosen
}

/// Generates a pack with `known_classes` labelled classes followed by
/// `unknown_classes` classes labelled `-1`, `samples_per_class` each.
pub fn generate(spec: &SynthSpec) -> Result<FeaturePack> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.dim;
    let total = spec.known_classes + spec.unknown_classes;
    let orthants = place_orthants(&mut rng, d, total);

    let min_hamming = orthants
        .iter()
        .enumerate()
        .flat_map(|(i, a)| orthants[i + 1..].iter().map(move |b| hamming(a, b)))
        .min()
        .unwrap_or(d);
    // Unit orthant directions differing in h coordinates are 2 sqrt(h / d) apart.
    let unit_gap = 2.0 * (min_hamming as f64 / d as f64).sqrt();
    let scale = spec.class_sep / unit_gap;
    let coordinate = scale / (d as f64).sqrt();
    let centroids: Vec<Vec<f64>> = orthants
        .iter()
        .map(|signs| signs.iter().map(|&s| if s { coordinate } else { -coordinate }).collect())
        .collect();

    let n = total * spec.samples_per_class;
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for (class, centroid) in centroids.iter().enumerate() {
        let label = if class < spec.known_classes { class as i32 } else { UNKNOWN_LABEL };
        for _ in 0..spec.samples_per_class {
            for &c in centroid {
                let noise: f64 = rng.sample(StandardNormal);
                features.push((c + spec.noise_sigma * noise) as f32);
            }
            labels.push(label);
        }
    }

    let pack = FeaturePack {
        dim: d,
        classes: spec.known_classes,
        features,
        logits: None,
        labels,
        weights: centroids[..spec.known_classes]
            .iter()
            .flatten()
            .map(|&v| v as f32)
            .collect(),
        bias: vec![0.0; spec.known_classes],
        class_names: (0..spec.known_classes).map(|c| format!("class_{c}")).collect(),
    };
    pack.validate()?;
    Ok(pack)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SynthSpec {
        SynthSpec {
            known_classes: 2,
            unknown_classes: 1,
            dim: 4,
            samples_per_class: 10,
            class_sep: 10.0,
            noise_sigma: 0.1,
            seed: 3,
        }
    }

    fn centroid_distance(pack: &FeaturePack, a: usize, b: usize) -> f64 {
        pack.weight_row(a)
            .iter()
            .zip(pack.weight_row(b))
            .map(|(x, y)| ((x - y) as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn counts_and_labels() {
        let pack = generate(&spec()).unwrap();
        assert_eq!(pack.len(), 30);
        assert_eq!(pack.labels.iter().filter(|&&l| l == -1).count(), 10);
        assert_eq!(pack.labels.iter().filter(|&&l| l == 0).count(), 10);
        assert_eq!(pack.labels.iter().filter(|&&l| l == 1).count(), 10);
        assert_eq!((pack.classes, pack.dim), (2, 4));
    }

    #[test]
    fn centroids_respect_separation() {
        let s = SynthSpec {
            known_classes: 5,
            ..spec()
        };
        let pack = generate(&s).unwrap();
        for a in 0..5 {
            for b in a + 1..5 {
                assert!(centroid_distance(&pack, a, b) >= s.class_sep * (1.0 - 1e-6));
            }
        }
    }

    #[test]
    fn zero_separation_collapses_centroids() {
        let pack = generate(&SynthSpec { class_sep: 0.0, ..spec() }).unwrap();
        assert!(pack.weights.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn seed_determinism() {
        assert_eq!(generate(&spec()).unwrap(), generate(&spec()).unwrap());
        assert_ne!(
            generate(&spec()).unwrap(),
            generate(&SynthSpec { seed: 4, ..spec() }).unwrap()
        );
    }

    #[test]
    fn saturated_orthant_space() {
        let s = SynthSpec {
            known_classes: 3,
            unknown_classes: 1,
            dim: 2,
            ..spec()
        };
        let pack = generate(&s).unwrap();
        assert_eq!(pack.len(), 40);
        let err = generate(&SynthSpec { unknown_classes: 2, ..s }).unwrap_err();
        assert!(matches!(err, OsrError::InvalidSpec(_)));
    }

    #[test]
    fn rejects_bad_noise() {
        assert!(generate(&SynthSpec { noise_sigma: 0.0, ..spec() }).is_err());
        assert!(generate(&SynthSpec { known_classes: 0, ..spec() }).is_err());
    }
}
