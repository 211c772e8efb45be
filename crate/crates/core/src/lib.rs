//! Post-hoc open-set recognition scoring and evaluation.
//!
//! The engine reads exported classifier outputs (penultimate features,
//! logits, head weights) from a framework-independent feature pack, computes
//! COSTARR, MSP, MaxLogit and free-energy confidence scores, and evaluates
//! them with OOSA and the OSCR curve.

pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod fmt;
pub mod metrics;
pub mod pack;
pub mod scoring;
pub mod split;
pub mod synth;

pub use error::{OsrError, Result};
pub use eval::{run_eval, RunConfig};
pub use metrics::{oosa_at, oosa_table, oscr_curve, EvalReport, OosaTable, OscrCurve};
pub use pack::{read_pack, write_pack, FeaturePack};
pub use scoring::{fit_calibration, score_all, CalibrationModel, ScoreMethod, ScoredSet};
pub use split::{split_classes, split_samples, SplitSpec};
pub use synth::{generate, SynthSpec};
