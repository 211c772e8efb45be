//! Attenuation diagnostics: a class's head weights sorted ascending, and the
//! features and Hadamard products of chosen samples reordered by the same
//! permutation, ready to be drawn as aligned color bars.

use crate::error::{OsrError, Result};
use crate::fmt::sig9;
use crate::pack::FeaturePack;
use crate::scoring::hadamard;

#[derive(Debug, Clone, PartialEq)]
pub struct AttenuationMatrix {
    pub class_id: usize,
    pub sorted_weights: Vec<f64>,
    /// `order[k]` is the feature dimension shown in column `k`.
    pub order: Vec<usize>,
    pub sample_ids: Vec<usize>,
    /// One row per sample: `F(x) ⊙ W_j`, reordered.
    pub hadamard: Vec<Vec<f64>>,
    /// One row per sample: `F(x)`, reordered.
    pub features: Vec<Vec<f64>>,
}

pub fn attenuation(pack: &FeaturePack, class_id: usize, sample_ids: &[usize]) -> Result<AttenuationMatrix> {
    if class_id >= pack.classes {
        return Err(OsrError::InvalidArgument(format!(
            "class {class_id} outside 0..{}",
            pack.classes
        )));
    }
    if let Some(&bad) = sample_ids.iter().find(|&&i| i >= pack.len()) {
        return Err(OsrError::InvalidArgument(format!(
            "sample {bad} outside 0..{}",
            pack.len()
        )));
    }
    let weights = pack.weights_f64(class_id);
    let mut order: Vec<usize> = (0..pack.dim).collect();
    // Stable sort keeps equal weights in dimension order.
    order.sort_by(|&a, &b| weights[a].total_cmp(&weights[b]));
    let reorder = |row: &[f64]| order.iter().map(|&k| row[k]).collect::<Vec<f64>>();

    let mut hadamard_rows = Vec::with_capacity(sample_ids.len());
    let mut feature_rows = Vec::with_capacity(sample_ids.len());
    for &i in sample_ids {
        let f = pack.features_f64(i);
        hadamard_rows.push(reorder(&hadamard(&f, &weights)?));
        feature_rows.push(reorder(&f));
    }
    Ok(AttenuationMatrix {
        class_id,
        sorted_weights: reorder(&weights),
        order,
        sample_ids: sample_ids.to_vec(),
        hadamard: hadamard_rows,
        features: feature_rows,
    })
}

impl AttenuationMatrix {
    /// Rows: `weights_sorted`, `sort_index`, one `hadamard_<id>` per sample,
    /// then one `features_<id>` per sample. First column is the row name.
    pub fn to_csv(&self) -> String {
        let join = |values: &[f64]| values.iter().map(|&v| sig9(v)).collect::<Vec<_>>().join(",");
        let mut out = format!("weights_sorted,{}\n", join(&self.sorted_weights));
        out.push_str("sort_index");
        for k in &self.order {
            out.push_str(&format!(",{k}"));
        }
        out.push('\n');
        for (id, row) in self.sample_ids.iter().zip(&self.hadamard) {
            out.push_str(&format!("hadamard_{id},{}\n", join(row)));
        }
        for (id, row) in self.sample_ids.iter().zip(&self.features) {
            out.push_str(&format!("features_{id},{}\n", join(row)));
        }
        out
    }
}
