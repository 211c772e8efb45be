//! Open-set evaluation: OOSA over a threshold grid with a validation-chosen
//! operating point, and the OSCR curve with its area.
//!
//! A sample is accepted when its normalized score is `>= tau` and rejected
//! when it is strictly below. OOSA counts known samples that are accepted and
//! correctly classified plus unknown samples that are rejected, over all
//! samples.

use serde::Serialize;

use crate::error::{OsrError, Result};
use crate::fmt::sig9;
use crate::scoring::{Normalizer, ScoredSet};

pub const OOSA_DEFINITION: &str = "OOSA(tau) = (#known with norm_score >= tau and pred == label + #unknown with norm_score < tau) / n";

/// The 11 thresholds `0.0, 0.1, ..., 1.0`.
pub fn default_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(OsrError::InvalidArgument("threshold grid is empty".into()));
    }
    if grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(OsrError::InvalidArgument("thresholds must lie in [0, 1]".into()));
    }
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(OsrError::InvalidArgument("threshold grid must be ascending".into()));
    }
    Ok(())
}

/// OOSA of `scored` at threshold `tau`.
pub fn oosa_at(scored: &ScoredSet, tau: f64) -> Result<f64> {
    Ok(OosaCounter::new(scored)?.at(tau))
}

/// Sorted score lists that answer OOSA queries in `O(log n)`.
struct OosaCounter {
    correct_known: Vec<f64>,
    unknown: Vec<f64>,
    total: usize,
}

impl OosaCounter {
    fn new(scored: &ScoredSet) -> Result<Self> {
        if scored.is_empty() {
            return Err(OsrError::EmptyScoredSet);
        }
        let mut correct_known = Vec::new();
        let mut unknown = Vec::new();
        for r in &scored.records {
            if !r.is_known() {
                unknown.push(r.norm_score);
            } else if r.is_correct() {
                correct_known.push(r.norm_score);
            }
        }
        correct_known.sort_by(f64::total_cmp);
        unknown.sort_by(f64::total_cmp);
        Ok(OosaCounter {
            correct_known,
            unknown,
            total: scored.len(),
        })
    }

    fn at(&self, tau: f64) -> f64 {
        let accepted = self.correct_known.len() - self.correct_known.partition_point(|&s| s < tau);
        let rejected = self.unknown.partition_point(|&s| s < tau);
        (accepted + rejected) as f64 / self.total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OosaTable {
    pub thresholds: Vec<f64>,
    /// Test-set OOSA at each threshold.
    pub oosa: Vec<f64>,
    /// Validation-set OOSA at each threshold.
    pub val_oosa: Vec<f64>,
    pub tau_star: f64,
    pub oosa_at_tau_star: f64,
}

/// Picks the validation-optimal threshold from `grid` (ties go to the
/// smallest) and tabulates test OOSA over the whole grid.
pub fn oosa_table(val: &ScoredSet, test: &ScoredSet, grid: &[f64]) -> Result<OosaTable> {
    validate_grid(grid)?;
    let val_counter = OosaCounter::new(val)?;
    let test_counter = OosaCounter::new(test)?;
    let val_oosa: Vec<f64> = grid.iter().map(|&t| val_counter.at(t)).collect();
    let oosa: Vec<f64> = grid.iter().map(|&t| test_counter.at(t)).collect();

    let mut best = 0;
    for (i, &v) in val_oosa.iter().enumerate().skip(1) {
        if v > val_oosa[best] {
            best = i;
        }
    }
    Ok(OosaTable {
        thresholds: grid.to_vec(),
        tau_star: grid[best],
        oosa_at_tau_star: oosa[best],
        oosa,
        val_oosa,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OscrPoint {
    pub fpr: f64,
    pub ccr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OscrCurve {
    /// Ordered by descending threshold, starting at `(0, 0)` and ending at
    /// `(1, closed-set accuracy)`.
    pub points: Vec<OscrPoint>,
    pub auoscr: f64,
}

/// Trapezoidal area under a polyline given in non-decreasing FPR order.
pub fn trapezoid_area(points: &[OscrPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].ccr + w[1].ccr) / 2.0)
        .sum()
}

/// OSCR curve over the distinct raw scores of `scored`.
///
/// Raw scores are used rather than normalized ones: test-set normalization
/// clamps, which could merge distinct scores and change the curve.
pub fn oscr_curve(scored: &ScoredSet) -> Result<OscrCurve> {
    let knowns = scored.records.iter().filter(|r| r.is_known()).count();
    let unknowns = scored.len() - knowns;
    if knowns == 0 {
        return Err(OsrError::MissingPopulation("known"));
    }
    if unknowns == 0 {
        return Err(OsrError::MissingPopulation("unknown"));
    }

    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored.records[b].raw_score.total_cmp(&scored.records[a].raw_score));

    let mut points = vec![OscrPoint { fpr: 0.0, ccr: 0.0 }];
    let (mut accepted_unknown, mut accepted_correct) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scored.records[order[i]].raw_score;
        while i < order.len() && scored.records[order[i]].raw_score == threshold {
            let r = &scored.records[order[i]];
            if !r.is_known() {
                accepted_unknown += 1;
            } else if r.is_correct() {
                accepted_correct += 1;
            }
            i += 1;
        }
        points.push(OscrPoint {
            fpr: accepted_unknown as f64 / unknowns as f64,
            ccr: accepted_correct as f64 / knowns as f64,
        });
    }
    points.push(OscrPoint {
        fpr: 1.0,
        ccr: accepted_correct as f64 / knowns as f64,
    });
    let auoscr = trapezoid_area(&points);
    Ok(OscrCurve { points, auoscr })
}

/// Min-max normalizes both sets with the validation extrema; test scores
/// outside that range are clamped.
pub fn normalize_scores(val: &ScoredSet, test: &ScoredSet) -> Result<(ScoredSet, ScoredSet, Normalizer)> {
    let normalizer =
        Normalizer::fit(val.records.iter().map(|r| r.raw_score)).ok_or(OsrError::EmptyScoredSet)?;
    Ok((
        val.normalized_with(&normalizer),
        test.normalized_with(&normalizer),
        normalizer,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridEntry {
    pub tau: f64,
    pub oosa: f64,
}

/// Per-method evaluation result in its serialized report layout.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub method: String,
    pub tau_star: f64,
    pub oosa_at_tau_star: f64,
    pub oosa_grid: Vec<GridEntry>,
    pub auoscr: f64,
    pub oscr_points: Vec<OscrPoint>,
    pub val_oosa_grid: Vec<GridEntry>,
    pub normalizer: Normalizer,
    pub oosa_definition: &'static str,
}

impl EvalReport {
    pub fn new(method: &str, table: &OosaTable, curve: &OscrCurve, normalizer: Normalizer) -> Self {
        let grid = |values: &[f64]| {
            table
                .thresholds
                .iter()
                .zip(values)
                .map(|(&tau, &oosa)| GridEntry { tau, oosa })
                .collect()
        };
        EvalReport {
            method: method.to_string(),
            tau_star: table.tau_star,
            oosa_at_tau_star: table.oosa_at_tau_star,
            oosa_grid: grid(&table.oosa),
            auoscr: curve.auoscr,
            oscr_points: curve.points.clone(),
            val_oosa_grid: grid(&table.val_oosa),
            normalizer,
            oosa_definition: OOSA_DEFINITION,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn oosa_csv(&self) -> String {
        let mut out = String::from("tau,test_oosa,val_oosa\n");
        for (t, v) in self.oosa_grid.iter().zip(&self.val_oosa_grid) {
            out.push_str(&format!("{},{},{}\n", sig9(t.tau), sig9(t.oosa), sig9(v.oosa)));
        }
        out
    }

    pub fn oscr_csv(&self) -> String {
        let mut out = String::from("fpr,ccr\n");
        for p in &self.oscr_points {
            out.push_str(&format!("{},{}\n", sig9(p.fpr), sig9(p.ccr)));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::{ScoreMethod, ScoreRecord};

    /// (label, pred, score) triples; score is used as both raw and normalized.
    fn set(rows: &[(i32, usize, f64)]) -> ScoredSet {
        ScoredSet {
            method: ScoreMethod::Msp,
            records: rows
                .iter()
                .enumerate()
                .map(|(i, &(true_label, pred_class, s))| ScoreRecord {
                    sample_id: i,
                    true_label,
                    pred_class,
                    raw_score: s,
                    norm_score: s,
                    flagged: false,
                })
                .collect(),
        }
    }

    #[test]
    fn default_grid_has_eleven_steps() {
        let grid = default_grid();
        assert_eq!(grid.len(), 11);
        assert_eq!(grid[0], 0.0);
        assert_eq!(grid[3], 0.3);
        assert_eq!(grid[10], 1.0);
    }

    #[test]
    fn hand_enumerated_oosa() {
        let s = set(&[(0, 0, 0.9), (1, 0, 0.8), (-1, 0, 0.3), (-1, 1, 0.7)]);
        assert_eq!(oosa_at(&s, 0.5).unwrap(), 0.5);
        assert_eq!(oosa_at(&s, 0.0).unwrap(), 0.25);
        assert_eq!(oosa_at(&s, 1.5).unwrap(), 0.5);
        assert!(oosa_at(&set(&[]), 0.5).is_err());
    }

    #[test]
    fn acceptance_is_inclusive() {
        let s = set(&[(0, 0, 0.5), (-1, 0, 0.5)]);
        assert_eq!(oosa_at(&s, 0.5).unwrap(), 0.5);
        assert_eq!(oosa_at(&s, 0.50001).unwrap(), 0.5);
        assert_eq!(oosa_at(&s, 0.49999).unwrap(), 0.5);
        let s = set(&[(0, 0, 0.5), (-1, 0, 0.2)]);
        assert_eq!(oosa_at(&s, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn tau_star_ties_to_smallest() {
        // Validation OOSA is 1.0 at both 0.3 and 0.4.
        let val = set(&[(0, 0, 0.45), (-1, 0, 0.25)]);
        let table = oosa_table(&val, &val, &[0.2, 0.3, 0.4, 0.5]).unwrap();
        assert_eq!(table.val_oosa, vec![0.5, 1.0, 1.0, 0.5]);
        assert_eq!(table.tau_star, 0.3);
        assert_eq!(table.oosa_at_tau_star, 1.0);
    }

    #[test]
    fn grid_validation() {
        let s = set(&[(0, 0, 0.5)]);
        assert!(oosa_table(&s, &s, &[]).is_err());
        assert!(oosa_table(&s, &s, &[0.5, 0.1]).is_err());
        assert!(oosa_table(&s, &s, &[1.5]).is_err());
        assert!(oosa_table(&set(&[]), &s, &[0.5]).is_err());
    }

    #[test]
    fn perfect_separation_area_is_one() {
        let s = set(&[(0, 0, 0.9), (1, 1, 0.8), (-1, 0, 0.2), (-1, 1, 0.1)]);
        let curve = oscr_curve(&s).unwrap();
        assert_eq!(curve.auoscr, 1.0);
        assert_eq!(curve.points.first(), Some(&OscrPoint { fpr: 0.0, ccr: 0.0 }));
        assert_eq!(curve.points.last(), Some(&OscrPoint { fpr: 1.0, ccr: 1.0 }));
    }

    #[test]
    fn all_misclassified_area_is_zero() {
        let s = set(&[(0, 1, 0.9), (1, 0, 0.2), (-1, 0, 0.5)]);
        let curve = oscr_curve(&s).unwrap();
        assert_eq!(curve.auoscr, 0.0);
        assert!(curve.points.iter().all(|p| p.ccr == 0.0));
    }

    #[test]
    fn six_sample_curve() {
        // Descending: 0.9 K✓, 0.8 U, 0.7 K✗, 0.6 K✓, 0.6 U, 0.1 K✓
        let s = set(&[
            (0, 0, 0.9),
            (-1, 0, 0.8),
            (1, 0, 0.7),
            (2, 2, 0.6),
            (-1, 1, 0.6),
            (0, 0, 0.1),
        ]);
        let curve = oscr_curve(&s).unwrap();
        let expected = [
            (0.0, 0.0),
            (0.0, 0.25),
            (0.5, 0.25),
            (0.5, 0.25),
            (1.0, 0.5),
            (1.0, 0.75),
            (1.0, 0.75),
        ];
        let got: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.fpr, p.ccr)).collect();
        assert_eq!(got, expected);
        // 0.5 * 0.25 + 0.5 * (0.25 + 0.5) / 2
        assert_eq!(curve.auoscr, 0.3125);
    }

    #[test]
    fn curve_needs_both_populations() {
        assert!(matches!(
            oscr_curve(&set(&[(0, 0, 0.5)])),
            Err(OsrError::MissingPopulation("unknown"))
        ));
        assert!(matches!(
            oscr_curve(&set(&[(-1, 0, 0.5)])),
            Err(OsrError::MissingPopulation("known"))
        ));
    }

    #[test]
    fn normalization_uses_validation_extrema() {
        let val = set(&[(0, 0, 1.0), (-1, 0, 3.0)]);
        let test = set(&[(0, 0, 2.0), (0, 0, 10.0)]);
        let (v, t, n) = normalize_scores(&val, &test).unwrap();
        assert_eq!((n.min, n.max), (1.0, 3.0));
        assert_eq!(v.records[1].norm_score, 1.0);
        assert_eq!(t.records[0].norm_score, 0.5);
        assert_eq!(t.records[1].norm_score, 1.0);
        assert!(normalize_scores(&set(&[]), &test).is_err());
    }

    #[test]
    fn report_layout() {
        let s = set(&[(0, 0, 0.9), (-1, 0, 0.2)]);
        let table = oosa_table(&s, &s, &default_grid()).unwrap();
        let curve = oscr_curve(&s).unwrap();
        let report = EvalReport::new("msp", &table, &curve, Normalizer { min: 0.0, max: 1.0 });
        let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        let keys: Vec<&str> = json.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        for k in ["method", "tau_star", "oosa_at_tau_star", "oosa_grid", "auoscr", "oscr_points"] {
            assert!(keys.contains(&k), "missing {k}");
        }
        assert_eq!(json["oosa_grid"].as_array().unwrap().len(), 11);
        assert_eq!(report.oosa_csv().lines().count(), 12);
        assert_eq!(report.oscr_csv().lines().next(), Some("fpr,ccr"));
    }
}
