//! Experiment protocols: surface-level splits, recognition and friction
//! metrics, and the end-to-end pipeline.

mod pipeline;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::disksynth::Manifest;
use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

pub use pipeline::{
    compute_descriptors, descriptor_file, fit_representation, fit_sample, run_pipeline, ClassScatter, DescriptorSource, FitScope, FoldReport, FoldStatus, Method,
    PipelineConfig, PipelineOutput, Prediction, RegressorSettings, Report, Representation, ReportSettings, Summary, TsneSettings,
    REPORT_SCHEMA_VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    LeaveOneSurfaceOut,
    RandomFraction,
    LeaveOneInstancePerClass,
}

/// How surfaces are divided between training and test. Splits work on
/// surfaces, never on single disks, so one physical sample cannot sit on both
/// sides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub kind: SplitKind,
    #[serde(default)]
    pub seed: u64,
    /// Test share for `random_fraction`; ignored otherwise.
    #[serde(default = "default_fraction")]
    pub fraction: f64,
}

fn default_fraction() -> f64 {
    0.2
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { kind: SplitKind::LeaveOneSurfaceOut, seed: 0, fraction: default_fraction() }
    }
}

impl SplitSpec {
    pub fn leave_one_surface_out() -> Self {
        Self::default()
    }

    pub fn random_fraction(fraction: f64, seed: u64) -> Self {
        Self { kind: SplitKind::RandomFraction, seed, fraction }
    }

    pub fn leave_one_instance_per_class(seed: u64) -> Self {
        Self { kind: SplitKind::LeaveOneInstancePerClass, seed, fraction: default_fraction() }
    }

    /// Whether the split depends on its seed, i.e. repeated runs differ.
    pub fn is_random(&self) -> bool {
        self.kind != SplitKind::LeaveOneSurfaceOut
    }
}

/// Surface ids on each side of one fold, in manifest order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Splits the surfaces of `manifest` into folds.
pub fn split(manifest: &Manifest, spec: &SplitSpec) -> Result<Vec<Fold>> {
    let ids: Vec<&str> = manifest.surfaces.iter().map(|s| s.surface_id.as_str()).collect();
    if ids.len() < 2 {
        return Err(Error::Config(format!("a split needs at least 2 surfaces, got {}", ids.len())));
    }
    let fold_from = |test: &BTreeSet<usize>| Fold {
        train: (0..ids.len()).filter(|i| !test.contains(i)).map(|i| ids[i].to_string()).collect(),
        test: test.iter().map(|&i| ids[i].to_string()).collect(),
    };
    let mut rng = rng_from_seed(spec.seed);
    match spec.kind {
        SplitKind::LeaveOneSurfaceOut => Ok((0..ids.len()).map(|i| fold_from(&BTreeSet::from([i]))).collect()),
        SplitKind::RandomFraction => {
            let f = spec.fraction;
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Config(format!("split fraction {f} outside (0, 1)")));
            }
            let n = ids.len();
            let n_test = ((f * n as f64).round() as usize).clamp(1, n - 1);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            Ok(vec![fold_from(&order[..n_test].iter().copied().collect())])
        }
        SplitKind::LeaveOneInstancePerClass => {
            let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, s) in manifest.surfaces.iter().enumerate() {
                by_class.entry(s.label.as_str()).or_default().push(i);
            }
            if let Some((label, members)) = by_class.iter().find(|(_, m)| m.len() < 2) {
                return Err(Error::Config(format!(
                    "class `{label}` has {} surface(s); holding one out needs at least 2",
                    members.len()
                )));
            }
            let mut test = BTreeSet::new();
            for members in by_class.values() {
                test.insert(*members.choose(&mut rng).expect("class has members"));
            }
            Ok(vec![fold_from(&test)])
        }
    }
}

/// Errors unless the two sides of a fold share no surface.
pub fn check_disjoint<'a>(
    train: impl IntoIterator<Item = &'a str>,
    test: impl IntoIterator<Item = &'a str>,
) -> Result<()> {
    let test: BTreeSet<&str> = test.into_iter().collect();
    match train.into_iter().find(|id| test.contains(id)) {
        Some(id) => Err(Error::Domain(format!("surface `{id}` appears in both training and test data"))),
        None => Ok(()),
    }
}

/// Fraction of `(true, predicted)` pairs that agree.
pub fn recognition_precision<L: PartialEq>(predictions: &[(L, L)]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Empty("no predictions to score".into()));
    }
    let correct = predictions.iter().filter(|(t, p)| t == p).count();
    Ok(correct as f64 / predictions.len() as f64)
}

fn percentage_error(truth: f64, predicted: f64) -> Result<f64> {
    if !(truth > 0.0 && truth.is_finite()) {
        return Err(Error::Domain(format!("true friction {truth} must be positive")));
    }
    if !predicted.is_finite() {
        return Err(Error::Domain(format!("predicted friction {predicted} is not finite")));
    }
    Ok(100.0 * (predicted - truth).abs() / truth)
}

/// Mean of `100 · |pred − true| / true` over `(true, predicted)` pairs.
pub fn mean_percentage_error(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("no friction predictions to score".into()));
    }
    let mut total = 0.0;
    for &(t, p) in pairs {
        total += percentage_error(t, p)?;
    }
    Ok(total / pairs.len() as f64)
}

/// Bin count and width of the percentage-error histogram.
pub const HISTOGRAM_BINS: usize = 14;
pub const HISTOGRAM_BIN_WIDTH: f64 = 5.0;

/// Counts of percentage errors in equal-width bins starting at zero. Errors
/// at or above the last edge are counted in `overflow`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub overflow: usize,
}

impl Default for ErrorHistogram {
    fn default() -> Self {
        Self {
            edges: (0..=HISTOGRAM_BINS).map(|i| i as f64 * HISTOGRAM_BIN_WIDTH).collect(),
            counts: vec![0; HISTOGRAM_BINS],
            overflow: 0,
        }
    }
}

impl ErrorHistogram {
    pub fn from_errors(errors: impl IntoIterator<Item = f64>) -> Self {
        let mut h = Self::default();
        for e in errors {
            h.add(e);
        }
        h
    }

    pub fn add(&mut self, error: f64) {
        let bin = (error / HISTOGRAM_BIN_WIDTH).floor();
        if bin >= 0.0 && (bin as usize) < self.counts.len() {
            self.counts[bin as usize] += 1;
        } else {
            self.overflow += 1;
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.overflow
    }
}
