//! End-to-end evaluation runs: split, calibrate, score, normalize, evaluate
//! and write reports for each requested method.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{OsrError, Result};
use crate::fmt::sig9;
use crate::metrics::{self, EvalReport};
use crate::pack::{read_pack, FeaturePack};
use crate::scoring::{fit_calibration, score_all, MaxLogitSource, ScoreMethod, ScoreOptions, ScoredSet};
use crate::split::{apply_class_split, split_classes, split_samples, SampleSplit, SplitSpec};

pub const CONFIG_ECHO_FILE: &str = "config.json";
pub const SUMMARY_FILE: &str = "summary.csv";

/// Fully resolved settings of an `eval` run. The output directory is not
/// part of the config so an echo reproduces the same bytes wherever it is
/// replayed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub pack: PathBuf,
    pub methods: Vec<ScoreMethod>,
    pub split: SplitSpec,
    /// Designate a random `split.known_fraction` of the pack's classes as
    /// unknown before splitting samples.
    pub class_split: bool,
    pub grid: Vec<f64>,
    pub maxlogit_source: MaxLogitSource,
    /// Fit the GNL logit range over training and validation samples.
    pub gnl_include_val: bool,
}

impl RunConfig {
    pub fn new(pack: impl Into<PathBuf>) -> Self {
        RunConfig {
            pack: pack.into(),
            methods: ScoreMethod::all(crate::scoring::DEFAULT_TEMPERATURE),
            split: SplitSpec::default(),
            class_split: false,
            grid: metrics::default_grid(),
            maxlogit_source: MaxLogitSource::Head,
            gnl_include_val: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(OsrError::InvalidArgument("no score methods selected".into()));
        }
        let mut labels: Vec<String> = Vec::new();
        for m in &self.methods {
            m.validate()?;
            let label = method_label(m);
            if labels.contains(&label) {
                return Err(OsrError::InvalidArgument(format!("method {label} listed twice")));
            }
            labels.push(label);
        }
        metrics::validate_grid(&self.grid)?;
        self.split.validate()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| OsrError::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| OsrError::InvalidArgument(format!("config {}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

/// File-name stem for a method; energy runs carry a non-default temperature.
pub fn method_label(method: &ScoreMethod) -> String {
    match method {
        ScoreMethod::Energy { temperature } if *temperature != crate::scoring::DEFAULT_TEMPERATURE => {
            format!("energy_t{temperature}")
        }
        m => m.name().to_string(),
    }
}

#[derive(Debug)]
pub struct MethodOutcome {
    pub label: String,
    pub result: std::result::Result<MethodResult, OsrError>,
}

#[derive(Debug, Clone)]
pub struct MethodResult {
    pub report: EvalReport,
    pub val: ScoredSet,
    pub test: ScoredSet,
}

#[derive(Debug)]
pub struct EvalSummary {
    pub split: SampleSplit,
    pub outcomes: Vec<MethodOutcome>,
}

impl EvalSummary {
    pub fn all_succeeded(&self) -> bool {
        self.outcomes.iter().all(|o| o.result.is_ok())
    }

    pub fn report(&self, label: &str) -> Option<&EvalReport> {
        self.outcomes
            .iter()
            .find(|o| o.label == label)
            .and_then(|o| o.result.as_ref().ok())
            .map(|r| &r.report)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,status,tau_star,oosa_at_tau_star,auoscr,error\n");
        for o in &self.outcomes {
            match &o.result {
                Ok(r) => out.push_str(&format!(
                    "{},ok,{},{},{},\n",
                    o.label,
                    sig9(r.report.tau_star),
                    sig9(r.report.oosa_at_tau_star),
                    sig9(r.report.auoscr)
                )),
                Err(e) => out.push_str(&format!(
                    "{},failed,,,,\"{}\"\n",
                    o.label,
                    e.to_string().replace('"', "'")
                )),
            }
        }
        out
    }
}

#[derive(Serialize)]
struct SplitEcho<'a> {
    known_classes: &'a [usize],
    unknown_classes: &'a [usize],
    train: &'a [usize],
    val: &'a [usize],
    test: &'a [usize],
    unused: &'a [usize],
}

/// Evaluates one method on prepared splits.
pub fn evaluate_method(
    pack: &FeaturePack,
    split: &SampleSplit,
    method: ScoreMethod,
    config: &RunConfig,
) -> Result<MethodResult> {
    let options = ScoreOptions {
        maxlogit_source: config.maxlogit_source,
    };
    let model = match method {
        ScoreMethod::Costarr => {
            let model = fit_calibration(pack, &split.train)?;
            Some(if config.gnl_include_val {
                model.with_logit_range_from(pack, &split.val)
            } else {
                model
            })
        }
        _ => None,
    };
    let val = score_all(pack, &split.val, method, model.as_ref(), &options)?;
    let test = score_all(pack, &split.test, method, model.as_ref(), &options)?;
    let (val, test, normalizer) = metrics::normalize_scores(&val, &test)?;
    let table = metrics::oosa_table(&val, &test, &config.grid)?;
    let curve = metrics::oscr_curve(&test)?;
    let report = EvalReport::new(&method_label(&method), &table, &curve, normalizer);
    Ok(MethodResult { report, val, test })
}

/// Runs every configured method and returns their outcomes without touching
/// the filesystem beyond reading the pack.
pub fn run(config: &RunConfig) -> Result<(EvalSummary, Vec<usize>, Vec<usize>)> {
    config.validate()?;
    let raw = read_pack(&config.pack)?;
    let (pack, known, unknown) = if config.class_split {
        let classes = split_classes(raw.classes, &config.split)?;
        let relabeled = apply_class_split(&raw, &classes.known)?;
        (relabeled.pack, classes.known, classes.unknown)
    } else {
        (raw.clone(), (0..raw.classes).collect(), Vec::new())
    };
    let all_known: Vec<usize> = (0..pack.classes).collect();
    let split = split_samples(&pack, &all_known, &config.split)?;

    let outcomes = config
        .methods
        .par_iter()
        .map(|&method| MethodOutcome {
            label: method_label(&method),
            result: evaluate_method(&pack, &split, method, config),
        })
        .collect();
    Ok((EvalSummary { split, outcomes }, known, unknown))
}

/// Runs the evaluation and writes every artifact into `out_dir`: the config
/// echo, the split, per-method reports and score tables, and `summary.csv`.
pub fn run_eval(config: &RunConfig, out_dir: impl AsRef<Path>) -> Result<EvalSummary> {
    let out_dir = out_dir.as_ref();
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| OsrError::io(out_dir, e))?;
    write(out_dir, CONFIG_ECHO_FILE, &config.to_json())?;

    let (summary, known, unknown) = run(config)?;
    let echo = SplitEcho {
        known_classes: &known,
        unknown_classes: &unknown,
        train: &summary.split.train,
        val: &summary.split.val,
        test: &summary.split.test,
        unused: &summary.split.unused,
    };
    write(out_dir, "split.json", &(serde_json::to_string(&echo).expect("split serializes") + "\n"))?;

    for outcome in &summary.outcomes {
        if let Ok(r) = &outcome.result {
            let label = &outcome.label;
            write(out_dir, &format!("{label}_report.json"), &r.report.to_json())?;
            write(out_dir, &format!("{label}_oosa.csv"), &r.report.oosa_csv())?;
            write(out_dir, &format!("{label}_oscr.csv"), &r.report.oscr_csv())?;
            write(out_dir, &format!("{label}_val_scores.csv"), &r.val.to_csv())?;
            write(out_dir, &format!("{label}_test_scores.csv"), &r.test.to_csv())?;
        }
    }
    write(out_dir, SUMMARY_FILE, &summary.to_csv())?;
    Ok(summary)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| OsrError::io(path, e))
}
