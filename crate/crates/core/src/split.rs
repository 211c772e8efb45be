//! Known/unknown class partitioning and train/validation/test sample splits.
//!
//! All randomness comes from ChaCha8 seeded with `SplitSpec::seed`; class
//! selection and sample selection draw from separate ChaCha streams so that
//! changing one never perturbs the other.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{OsrError, Result};
use crate::pack::{FeaturePack, UNKNOWN_LABEL};

const CLASS_STREAM: u64 = 0;
const SAMPLE_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub known_fraction: f64,
    pub test_fraction: f64,
    pub val_fraction: f64,
    pub seed: u64,
    /// Reserve the test fraction within each label group instead of over
    /// the whole pack.
    #[serde(default)]
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            known_fraction: 0.75,
            test_fraction: 0.10,
            val_fraction: 0.10,
            seed: 0,
            stratified: false,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.known_fraction > 0.0 && self.known_fraction <= 1.0) {
            return Err(OsrError::InvalidSplit(format!(
                "known_fraction {} outside (0, 1]",
                self.known_fraction
            )));
        }
        for (name, value) in [("test_fraction", self.test_fraction), ("val_fraction", self.val_fraction)] {
            if !(value > 0.0 && value < 1.0) {
                return Err(OsrError::InvalidSplit(format!("{name} {value} outside (0, 1)")));
            }
        }
        Ok(())
    }
}

/// Round-half-up of `fraction * total`. The epsilon absorbs products such as
/// `0.7 * 5 = 3.4999999999999996`.
pub fn round_half_up(fraction: f64, total: usize) -> usize {
    (fraction * total as f64 + 0.5 + 1e-9).floor() as usize
}

/// Split size for a non-empty population: rounded, at least one, at most all.
fn split_count(fraction: f64, total: usize) -> usize {
    if total == 0 {
        return 0;
    }
    round_half_up(fraction, total).clamp(1, total)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassSplit {
    pub known: Vec<usize>,
    pub unknown: Vec<usize>,
}

/// Randomly designates `round(known_fraction * class_count)` classes as known.
pub fn split_classes(class_count: usize, spec: &SplitSpec) -> Result<ClassSplit> {
    spec.validate()?;
    if class_count < 2 {
        return Err(OsrError::InvalidSplit(format!(
            "class_count {class_count} < 2"
        )));
    }
    let known_count = round_half_up(spec.known_fraction, class_count).min(class_count);
    if known_count < 2 {
        return Err(OsrError::InvalidSplit(format!(
            "only {known_count} known classes; at least 2 required"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(CLASS_STREAM);
    let mut ids: Vec<usize> = (0..class_count).collect();
    ids.shuffle(&mut rng);
    let mut known = ids[..known_count].to_vec();
    let mut unknown = ids[known_count..].to_vec();
    known.sort_unstable();
    unknown.sort_unstable();
    Ok(ClassSplit { known, unknown })
}

/// Index sets produced by [`split_samples`], each sorted ascending.
/// `unused` holds held-out unknowns that were not drawn into validation.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SampleSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub unused: Vec<usize>,
}

/// Splits the samples of `pack` into train/validation/test.
///
/// The test reserve is drawn from all samples. Of the remainder, known-class
/// samples are divided between validation and training; unknown samples
/// contribute the same validation fraction and never reach training.
pub fn split_samples(pack: &FeaturePack, known: &[usize], spec: &SplitSpec) -> Result<SampleSplit> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(SAMPLE_STREAM);

    let n = pack.len();
    let mut in_test = vec![false; n];
    if spec.stratified {
        let mut groups: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
        for (i, &label) in pack.labels.iter().enumerate() {
            groups.entry(label).or_default().push(i);
        }
        for members in groups.values_mut() {
            members.shuffle(&mut rng);
            let take = round_half_up(spec.test_fraction, members.len()).min(members.len());
            for &i in &members[..take] {
                in_test[i] = true;
            }
        }
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for &i in &order[..split_count(spec.test_fraction, n)] {
            in_test[i] = true;
        }
    }

    let is_known = |label: i32| label != UNKNOWN_LABEL && known.contains(&(label as usize));
    let (mut known_rest, mut unknown_rest): (Vec<usize>, Vec<usize>) =
        (0..n).filter(|&i| !in_test[i]).partition(|&i| is_known(pack.labels[i]));
    known_rest.shuffle(&mut rng);
    unknown_rest.shuffle(&mut rng);

    let val_known = split_count(spec.val_fraction, known_rest.len());
    let val_unknown = split_count(spec.val_fraction, unknown_rest.len());

    let mut split = SampleSplit {
        test: (0..n).filter(|&i| in_test[i]).collect(),
        val: known_rest[..val_known]
            .iter()
            .chain(&unknown_rest[..val_unknown])
            .copied()
            .collect(),
        train: known_rest[val_known..].to_vec(),
        unused: unknown_rest[val_unknown..].to_vec(),
    };
    split.val.sort_unstable();
    split.train.sort_unstable();
    split.unused.sort_unstable();

    if split.train.is_empty() {
        return Err(OsrError::EmptySplit("training"));
    }
    if split.val.is_empty() {
        return Err(OsrError::EmptySplit("validation"));
    }
    Ok(split)
}

/// A pack restricted to a set of known classes, with the labels it had
/// before relabeling.
#[derive(Debug, Clone)]
pub struct RelabeledPack {
    pub pack: FeaturePack,
    pub original_labels: Vec<i32>,
}

/// Restricts `pack` to the `known` classes: their samples are relabeled to
/// `0..known.len()` in ascending id order, every other sample becomes `-1`,
/// and the head (weights, bias, stored logits, names) keeps only known rows.
pub fn apply_class_split(pack: &FeaturePack, known: &[usize]) -> Result<RelabeledPack> {
    let mut known = known.to_vec();
    known.sort_unstable();
    known.dedup();
    if let Some(&bad) = known.iter().find(|&&c| c >= pack.classes) {
        return Err(OsrError::InvalidSplit(format!(
            "known class {bad} outside 0..{}",
            pack.classes
        )));
    }
    let mut remap = vec![None; pack.classes];
    for (new, &old) in known.iter().enumerate() {
        remap[old] = Some(new as i32);
    }
    let labels = pack
        .labels
        .iter()
        .map(|&l| {
            if l == UNKNOWN_LABEL {
                UNKNOWN_LABEL
            } else {
                remap[l as usize].unwrap_or(UNKNOWN_LABEL)
            }
        })
        .collect();
    let weights = known.iter().flat_map(|&c| pack.weight_row(c).to_vec()).collect();
    let bias = known.iter().map(|&c| pack.bias[c]).collect();
    let class_names = known.iter().map(|&c| pack.class_names[c].clone()).collect();
    let logits = pack.logits.as_ref().map(|logits| {
        (0..pack.len())
            .flat_map(|i| known.iter().map(move |&c| logits[i * pack.classes + c]))
            .collect()
    });
    Ok(RelabeledPack {
        pack: FeaturePack {
            dim: pack.dim,
            classes: known.len(),
            features: pack.features.clone(),
            logits,
            labels,
            weights,
            bias,
            class_names,
        },
        original_labels: pack.labels.clone(),
    })
}
