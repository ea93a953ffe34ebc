use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{
    check_disjoint, mean_percentage_error, percentage_error, recognition_precision, split, ErrorHistogram, Fold,
    SplitSpec,
};
use crate::descriptors::{extract_dense, pca_apply, pca_fit, DescriptorSet, ExtractParams};
use crate::disksynth::{Dataset, DiskRef, ReflectanceDisk};
use crate::embed::{encode_binary, itq_fit, BinaryCode, Embedding, ProjectionModel};
use crate::encode::{fisher_encode, vlad_encode, EncodingKind, Normalization};
use crate::error::{Error, Result};
use crate::gmm::{gmm_fit, kmeans_fit};
use crate::index::HashIndex;
use crate::regressor::{net_forward, net_train_with, TrainConfig};
use crate::seed::{derive_indexed_seed, derive_seed, rng_from_seed};
use crate::tsne::{tsne_embed, TsneInput, TsneParams, TsneRow};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Sign of a random projection, kNN in Hamming space.
    Drc,
    /// Learned rotation before the sign, kNN in Hamming space.
    DrcOpt,
    /// Feed-forward regression on the projected vector.
    Regressor,
}

/// Which disks the unsupervised stages (PCA, mixture, rotation) are fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitScope {
    /// Once, on every disk. No labels or friction values are used.
    Global,
    /// Again in every fold, on the training disks only.
    PerFold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptorSource {
    /// Dense filter-bank descriptors computed from the disks.
    Dense,
    /// Precomputed descriptor files, one per disk, laid out by [`descriptor_file`].
    Files(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressorSettings {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
}

impl Default for RegressorSettings {
    fn default() -> Self {
        Self { epochs: 300, lr: 1e-3, momentum: 0.9, batch_size: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneSettings {
    pub perplexity: f64,
    pub iters: usize,
}

impl Default for TsneSettings {
    fn default() -> Self {
        let p = TsneParams::default();
        Self { perplexity: p.perplexity, iters: p.iters }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub method: Method,
    pub encoding: EncodingKind,
    pub descriptors: DescriptorSource,
    pub extract: ExtractParams,
    pub pca_dim: usize,
    pub whiten: bool,
    /// Mixture components (FV) or centres (VLAD).
    pub gmm_k: usize,
    pub gmm_max_iter: usize,
    pub gmm_tol: f64,
    pub bits: usize,
    pub itq_iters: usize,
    /// Neighbours used for the label vote and the friction mean.
    pub k: usize,
    pub split: SplitSpec,
    /// Repetitions of a random split, each with its own split seed.
    pub runs: usize,
    pub fit_scope: FitScope,
    /// Cap on the descriptors used to fit PCA and the mixture; a seeded
    /// subset is drawn when there are more.
    pub max_fit_descriptors: usize,
    pub regressor: RegressorSettings,
    pub tsne: Option<TsneSettings>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            method: Method::DrcOpt,
            encoding: EncodingKind::Fv,
            descriptors: DescriptorSource::Dense,
            extract: ExtractParams::default(),
            pca_dim: 64,
            whiten: false,
            gmm_k: 16,
            gmm_max_iter: 100,
            gmm_tol: 1e-5,
            bits: 1024,
            itq_iters: 50,
            k: 10,
            split: SplitSpec::default(),
            runs: 1,
            fit_scope: FitScope::Global,
            max_fit_descriptors: 20_000,
            regressor: RegressorSettings::default(),
            tsne: None,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.pca_dim == 0 || self.gmm_k == 0 || self.k == 0 {
            return fail("pca_dim, gmm_k and k must be positive".into());
        }
        if self.bits == 0 || !self.bits.is_multiple_of(64) {
            return fail(format!("bits must be a positive multiple of 64, got {}", self.bits));
        }
        if self.runs == 0 {
            return fail("runs must be at least 1".into());
        }
        if self.runs > 1 && !self.split.is_random() {
            return fail("repeated runs need a random split; leave-one-surface-out is deterministic".into());
        }
        if self.max_fit_descriptors <= self.pca_dim.max(self.gmm_k) {
            return fail("max_fit_descriptors must exceed both pca_dim and gmm_k".into());
        }
        if !(self.gmm_tol >= 0.0) {
            return fail("gmm_tol must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldStatus {
    Ok,
    Failed,
}

/// The configuration values that shape the results. The method itself is not
/// echoed: it shows through `predictor` and the embedding ids, so runs that
/// reduce to the same computation produce the same report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSettings {
    pub predictor: String,
    pub encoding: EncodingKind,
    pub descriptor_dim: usize,
    pub pca_dim: usize,
    pub gmm_k: usize,
    pub bits: usize,
    pub k: usize,
    pub split: SplitSpec,
    pub runs: usize,
    pub fit_scope: FitScope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub run: usize,
    pub fold: usize,
    pub test_surfaces: Vec<String>,
    pub train_disks: usize,
    pub test_disks: usize,
    pub embedding_id: Option<String>,
    pub status: FoldStatus,
    pub diagnostic: Option<String>,
    pub precision: Option<f64>,
    pub mpe: Option<f64>,
}

/// One query disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub run: usize,
    pub fold: usize,
    pub surface_id: String,
    pub disk: String,
    pub label: String,
    pub predicted_label: Option<String>,
    pub mu: f64,
    pub predicted_mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub queries: usize,
    pub precision: Option<f64>,
    pub mpe: Option<f64>,
    /// Pooled values of each run, in run order.
    pub run_precision: Vec<f64>,
    pub run_mpe: Vec<f64>,
    pub failed_folds: usize,
    pub partial: bool,
}

/// Measured against predicted friction for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScatter {
    pub mean_mu: f64,
    pub mean_predicted_mu: f64,
    /// `[measured, predicted]` per query.
    pub points: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub seed: u64,
    pub settings: ReportSettings,
    pub summary: Summary,
    pub histogram: ErrorHistogram,
    pub classes: BTreeMap<String, ClassScatter>,
    pub folds: Vec<FoldReport>,
    pub predictions: Vec<Prediction>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub report: Report,
    pub tsne: Option<Vec<TsneRow>>,
}

/// Where the descriptor file of disk `name` lives under `dir`.
pub fn descriptor_file(dir: &Path, name: &str) -> PathBuf {
    dir.join(Path::new(name).with_extension("desc"))
}

/// Descriptor sets for every disk of `dataset`, in manifest order.
pub fn compute_descriptors(
    dataset: &Dataset,
    source: &DescriptorSource,
    params: &ExtractParams,
) -> Result<Vec<DescriptorSet>> {
    let refs = dataset.disk_refs();
    match source {
        DescriptorSource::Files(dir) => refs.iter().map(|r| DescriptorSet::load(&descriptor_file(dir, &r.name))).collect(),
        DescriptorSource::Dense => refs
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let surface = &dataset.manifest.surfaces[r.surface].surface_id;
                let mut set = match (&dataset.disks, &dataset.root) {
                    (Some(disks), _) => extract_dense(&disks[i], params)?,
                    (None, Some(root)) => extract_dense(&ReflectanceDisk::load(&root.join(&r.name))?, params)?,
                    (None, None) => return Err(Error::NotFound("dataset has neither disks nor a root directory".into())),
                };
                set.source_surface = surface.clone();
                Ok(set)
            })
            .collect(),
    }
}

/// Pools the descriptors of `disks` into one set, keeping a seeded subset of
/// `cap` rows (in their original order) when there are more.
pub fn fit_sample(sets: &[DescriptorSet], disks: &[usize], cap: usize, seed: u64) -> Result<DescriptorSet> {
    let rows: Vec<(usize, usize)> = disks.iter().flat_map(|&d| (0..sets[d].len()).map(move |r| (d, r))).collect();
    let chosen: Vec<(usize, usize)> = if rows.len() > cap {
        let mut idx = sample(&mut rng_from_seed(seed), rows.len(), cap).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| rows[i]).collect()
    } else {
        rows
    };
    DescriptorSet::from_vectors(
        chosen.iter().map(|&(d, r)| sets[d].vectors[r].clone()).collect(),
        chosen.iter().map(|&(d, r)| sets[d].positions[r]).collect(),
        "fit-sample",
    )
}

/// Per-disk outputs of the unsupervised stages, indexed like the descriptor sets.
#[derive(Debug, Clone)]
pub struct Representation {
    /// Pooled FV or VLAD vectors.
    pub pooled: Vec<Vec<f64>>,
    pub embedding: Embedding,
    pub codes: Vec<BinaryCode>,
    /// Real-valued projection of each pooled vector; only filled for the regressor.
    pub projected: Vec<Vec<f64>>,
}

/// Fits PCA, the mixture (or k-means centres) and the embedding on the disks
/// listed in `fit_disks`, then encodes every disk.
pub fn fit_representation(cfg: &PipelineConfig, sets: &[DescriptorSet], fit_disks: &[usize]) -> Result<Representation> {
    if fit_disks.is_empty() {
        return Err(Error::Empty("no disks to fit the representation on".into()));
    }
    let seed = cfg.seed;
    let sample_set = fit_sample(sets, fit_disks, cfg.max_fit_descriptors, derive_seed(seed, "eval/fit-sample"))?;
    let pca = pca_fit(std::slice::from_ref(&sample_set), cfg.pca_dim, cfg.whiten)?;
    let fit_rows = pca_apply(&pca, &sample_set)?.vectors;
    let reduced: Vec<DescriptorSet> = sets.iter().map(|s| pca_apply(&pca, s)).collect::<Result<_>>()?;

    let pooled_dim = match cfg.encoding {
        EncodingKind::Fv => 2 * cfg.gmm_k * cfg.pca_dim,
        EncodingKind::Vlad => cfg.gmm_k * cfg.pca_dim,
    };
    let pool_each = |f: &dyn Fn(&DescriptorSet) -> Result<Vec<f64>>| -> Result<Vec<Vec<f64>>> {
        reduced
            .iter()
            .map(|s| {
                if s.is_empty() {
                    log::warn!("no descriptors for a disk of `{}`; using a zero vector", s.source_surface);
                    Ok(vec![0.0; pooled_dim])
                } else {
                    f(s)
                }
            })
            .collect()
    };
    let model_seed = derive_seed(seed, "eval/mixture");
    let pooled = match cfg.encoding {
        EncodingKind::Fv => {
            let gmm = gmm_fit(&fit_rows, cfg.gmm_k, model_seed, cfg.gmm_max_iter, cfg.gmm_tol)?;
            pool_each(&|s| Ok(fisher_encode(&gmm, s, Normalization::Improved)?.values))?
        }
        EncodingKind::Vlad => {
            let km = kmeans_fit(&fit_rows, cfg.gmm_k, model_seed, cfg.gmm_max_iter)?;
            pool_each(&|s| Ok(vlad_encode(&km, s)?.values))?
        }
    };

    let embed_seed = derive_seed(seed, "eval/embedding");
    let embedding = match cfg.method {
        Method::DrcOpt => {
            let fit: Vec<Vec<f64>> = fit_disks.iter().map(|&d| pooled[d].clone()).collect();
            Embedding::Itq(itq_fit(&fit, cfg.bits, cfg.itq_iters, embed_seed)?)
        }
        Method::Drc | Method::Regressor => Embedding::Lsh(ProjectionModel::new(pooled_dim, cfg.bits, embed_seed)?),
    };
    let codes = pooled.iter().map(|v| encode_binary(&embedding, v)).collect::<Result<_>>()?;
    let projected = match cfg.method {
        Method::Regressor => pooled.iter().map(|v| embedding.pre_quantization(v)).collect::<Result<_>>()?,
        _ => Vec::new(),
    };
    Ok(Representation { pooled, embedding, codes, projected })
}

/// Runs every fold of every run and assembles the report.
pub fn run_pipeline(dataset: &Dataset, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let refs = dataset.disk_refs();
    if refs.is_empty() {
        return Err(Error::Empty("dataset lists no disks".into()));
    }
    log::info!("computing descriptors for {} disks", refs.len());
    let sets = compute_descriptors(dataset, &cfg.descriptors, &cfg.extract)?;
    let descriptor_dim = sets.iter().find(|s| !s.is_empty()).map_or(0, DescriptorSet::dim);
    let all_disks: Vec<usize> = (0..refs.len()).collect();

    let global = match cfg.fit_scope {
        FitScope::Global => Some(fit_representation(cfg, &sets, &all_disks)?),
        FitScope::PerFold => None,
    };

    let mut folds_out = Vec::new();
    let mut predictions = Vec::new();
    for run in 0..cfg.runs {
        let spec = SplitSpec { seed: derive_indexed_seed(cfg.seed, "eval/split", cfg.split.seed.wrapping_add(run as u64)), ..cfg.split.clone() };
        let folds = split(&dataset.manifest, &spec)?;
        for (f, fold) in folds.iter().enumerate() {
            log::info!("run {run} fold {}/{}", f + 1, folds.len());
            check_disjoint(fold.train.iter().map(String::as_str), fold.test.iter().map(String::as_str))?;
            let (train, test) = disks_of(dataset, &refs, fold);
            let mut report = FoldReport {
                run,
                fold: f,
                test_surfaces: fold.test.clone(),
                train_disks: train.len(),
                test_disks: test.len(),
                embedding_id: None,
                status: FoldStatus::Ok,
                diagnostic: None,
                precision: None,
                mpe: None,
            };
            let predict = |feats: &Representation| {
                predict_fold(cfg, dataset, &refs, feats, fold, &train, &test, run, f)
                    .map(|preds| (feats.embedding.embedding_id(), preds))
            };
            let outcome = match &global {
                Some(g) => predict(g),
                None => fit_representation(cfg, &sets, &train).and_then(|feats| predict(&feats)),
            };
            match outcome {
                Ok((embedding_id, preds)) => {
                    report.embedding_id = Some(embedding_id);
                    let labels: Vec<(&str, &str)> = preds
                        .iter()
                        .filter_map(|p| p.predicted_label.as_deref().map(|l| (p.label.as_str(), l)))
                        .collect();
                    report.precision = recognition_precision(&labels).ok();
                    let pairs: Vec<(f64, f64)> = preds.iter().map(|p| (p.mu, p.predicted_mu)).collect();
                    report.mpe = mean_percentage_error(&pairs).ok();
                    predictions.extend(preds);
                }
                Err(e) if is_leak(&e) => return Err(e),
                Err(e) => {
                    log::warn!("run {run} fold {f} failed: {e}");
                    report.status = FoldStatus::Failed;
                    report.diagnostic = Some(e.to_string());
                }
            }
            folds_out.push(report);
        }
    }

    let tsne = match &cfg.tsne {
        None => None,
        Some(t) => {
            let owned;
            let feats = match &global {
                Some(g) => g,
                None => {
                    owned = fit_representation(cfg, &sets, &all_disks)?;
                    &owned
                }
            };
            Some(tsne_rows(dataset, &refs, feats, t, cfg.seed)?)
        }
    };

    let report = assemble_report(cfg, descriptor_dim, folds_out, predictions)?;
    Ok(PipelineOutput { report, tsne })
}

const LEAK_PREFIX: &str = "leakage: ";

fn is_leak(e: &Error) -> bool {
    matches!(e, Error::Domain(m) if m.starts_with(LEAK_PREFIX))
}

fn assert_no_leak<'a>(train: impl IntoIterator<Item = &'a str>, test: &'a [String]) -> Result<()> {
    check_disjoint(train, test.iter().map(String::as_str)).map_err(|e| Error::Domain(format!("{LEAK_PREFIX}{e}")))
}

fn disks_of(dataset: &Dataset, refs: &[DiskRef], fold: &Fold) -> (Vec<usize>, Vec<usize>) {
    let train: BTreeSet<&str> = fold.train.iter().map(String::as_str).collect();
    let test: BTreeSet<&str> = fold.test.iter().map(String::as_str).collect();
    let side = |set: &BTreeSet<&str>| -> Vec<usize> {
        (0..refs.len())
            .filter(|&d| set.contains(dataset.manifest.surfaces[refs[d].surface].surface_id.as_str()))
            .collect()
    };
    (side(&train), side(&test))
}

#[allow(clippy::too_many_arguments)]
fn predict_fold(
    cfg: &PipelineConfig,
    dataset: &Dataset,
    refs: &[DiskRef],
    feats: &Representation,
    fold: &Fold,
    train: &[usize],
    test: &[usize],
    run: usize,
    fold_no: usize,
) -> Result<Vec<Prediction>> {
    let surfaces = &dataset.manifest.surfaces;
    let surface_of = |d: usize| &surfaces[refs[d].surface];
    let prediction = |d: usize, predicted_label: Option<String>, predicted_mu: f64| Prediction {
        run,
        fold: fold_no,
        surface_id: surface_of(d).surface_id.clone(),
        disk: refs[d].name.clone(),
        label: surface_of(d).label.clone(),
        predicted_label,
        mu: surface_of(d).mu,
        predicted_mu,
    };

    match cfg.method {
        Method::Drc | Method::DrcOpt => {
            let mut index = HashIndex::new(cfg.bits, feats.embedding.embedding_id());
            for &d in train {
                let s = surface_of(d);
                index.insert(feats.codes[d].clone(), s.label.clone(), s.mu, s.surface_id.clone())?;
            }
            assert_no_leak(index.entries().iter().map(|e| e.surface_id.as_str()), &fold.test)?;
            test.iter()
                .map(|&d| {
                    let code = &feats.codes[d];
                    Ok(prediction(d, Some(index.classify(code, cfg.k)?), index.predict_friction(code, cfg.k)?))
                })
                .collect()
        }
        Method::Regressor => {
            let rows: Vec<(Vec<f64>, f64)> = train.iter().map(|&d| (feats.projected[d].clone(), surface_of(d).mu)).collect();
            assert_no_leak(train.iter().map(|&d| surface_of(d).surface_id.as_str()), &fold.test)?;
            let r = &cfg.regressor;
            let tc = TrainConfig {
                sizes: vec![cfg.bits, 16, 8, 1],
                epochs: r.epochs,
                lr: r.lr,
                momentum: r.momentum,
                batch_size: r.batch_size,
                seed: derive_seed(cfg.seed, "eval/regressor"),
            };
            let net = net_train_with(&rows, None, &tc)?.net;
            test.iter().map(|&d| Ok(prediction(d, None, net_forward(&net, &feats.projected[d])?))).collect()
        }
    }
}

fn tsne_rows(
    dataset: &Dataset,
    refs: &[DiskRef],
    feats: &Representation,
    t: &TsneSettings,
    seed: u64,
) -> Result<Vec<TsneRow>> {
    let params = TsneParams {
        perplexity: t.perplexity,
        iters: t.iters,
        seed: derive_seed(seed, "eval/tsne"),
        ..TsneParams::default()
    };
    let result = tsne_embed(TsneInput::Codes(&feats.codes), &params)?;
    Ok(refs
        .iter()
        .zip(&result.points)
        .map(|(r, p)| {
            let s = &dataset.manifest.surfaces[r.surface];
            TsneRow { surface_id: s.surface_id.clone(), label: s.label.clone(), mu: s.mu, x: p[0], y: p[1] }
        })
        .collect())
}

fn assemble_report(
    cfg: &PipelineConfig,
    descriptor_dim: usize,
    folds: Vec<FoldReport>,
    predictions: Vec<Prediction>,
) -> Result<Report> {
    let precision_of = |preds: &[&Prediction]| {
        let labels: Vec<(&str, &str)> = preds
            .iter()
            .filter_map(|p| p.predicted_label.as_deref().map(|l| (p.label.as_str(), l)))
            .collect();
        recognition_precision(&labels).ok()
    };
    let mpe_of = |preds: &[&Prediction]| {
        let pairs: Vec<(f64, f64)> = preds.iter().map(|p| (p.mu, p.predicted_mu)).collect();
        mean_percentage_error(&pairs).ok()
    };
    let all: Vec<&Prediction> = predictions.iter().collect();
    let mut run_precision = Vec::new();
    let mut run_mpe = Vec::new();
    for run in 0..cfg.runs {
        let preds: Vec<&Prediction> = predictions.iter().filter(|p| p.run == run).collect();
        run_precision.extend(precision_of(&preds));
        run_mpe.extend(mpe_of(&preds));
    }
    let failed_folds = folds.iter().filter(|f| f.status == FoldStatus::Failed).count();

    let mut histogram = ErrorHistogram::default();
    for p in &predictions {
        histogram.add(percentage_error(p.mu, p.predicted_mu)?);
    }
    let mut classes: BTreeMap<String, ClassScatter> = BTreeMap::new();
    for p in &predictions {
        let c = classes.entry(p.label.clone()).or_insert(ClassScatter { mean_mu: 0.0, mean_predicted_mu: 0.0, points: Vec::new() });
        c.points.push([p.mu, p.predicted_mu]);
    }
    for c in classes.values_mut() {
        let n = c.points.len() as f64;
        c.mean_mu = c.points.iter().map(|p| p[0]).sum::<f64>() / n;
        c.mean_predicted_mu = c.points.iter().map(|p| p[1]).sum::<f64>() / n;
    }

    Ok(Report {
        schema_version: REPORT_SCHEMA_VERSION,
        seed: cfg.seed,
        settings: ReportSettings {
            predictor: match cfg.method {
                Method::Regressor => "regressor".into(),
                Method::Drc | Method::DrcOpt => "knn".into(),
            },
            encoding: cfg.encoding,
            descriptor_dim,
            pca_dim: cfg.pca_dim,
            gmm_k: cfg.gmm_k,
            bits: cfg.bits,
            k: cfg.k,
            split: cfg.split.clone(),
            runs: cfg.runs,
            fit_scope: cfg.fit_scope,
        },
        summary: Summary {
            queries: predictions.len(),
            precision: precision_of(&all),
            mpe: mpe_of(&all),
            run_precision,
            run_mpe,
            failed_folds,
            partial: failed_folds > 0,
        },
        histogram,
        classes,
        folds,
        predictions,
    })
}
