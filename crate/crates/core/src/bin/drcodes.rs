//! Command line front end: dataset synthesis, the individual pipeline stages
//! and full evaluations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

use drcodes::container;
use drcodes::descriptors::{pca_apply, pca_fit, DescriptorSet, ExtractParams, PcaModel};
use drcodes::disksynth::{make_synthetic_dataset, Dataset, DatasetSpec, RIG_ILLUMINATION_ANGLES};
use drcodes::embed::{encode_binary, itq_fit, CodeBatch, Embedding, ProjectionModel};
use drcodes::encode::{fisher_encode, vlad_encode, EncodedVectors, EncodingKind, Normalization};
use drcodes::eval::{
    compute_descriptors, descriptor_file, fit_sample, mean_percentage_error, recognition_precision, run_pipeline,
    DescriptorSource, FitScope, Method, PipelineConfig, TsneSettings,
};
use drcodes::gmm::{gmm_fit, kmeans_fit, GmmModel, KmeansModel};
use drcodes::index::HashIndex;
use drcodes::seed::derive_seed;
use drcodes::tsne::{tsne_embed, write_tsne_csv, TsneInput, TsneParams, TsneRow};
use drcodes::{Error, Result};

const PCA_FILE: &str = "pca.model";
const GMM_FILE: &str = "gmm.model";
const KMEANS_FILE: &str = "kmeans.model";
const ENCODED_FILE: &str = "encoded.vec";
const EMBEDDING_FILE: &str = "embedding.model";
const CODES_FILE: &str = "codes.bin";
const INDEX_FILE: &str = "index.bin";
const PREDICTIONS_FILE: &str = "predictions.csv";
const REPORT_FILE: &str = "report.json";
const TSNE_FILE: &str = "tsne.csv";

#[derive(Parser)]
#[command(name = "drcodes", version, about = "Binary reflectance codes for material recognition and friction prediction")]
struct Cli {
    /// Root seed; overrides the seed of a config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON config for the chosen verb.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic labelled dataset (config: dataset spec).
    Synth(SynthArgs),
    /// Dense descriptors for every disk of a dataset (config: extraction parameters).
    Extract(DatasetArg),
    /// Fit PCA and the mixture model (or k-means centres) on descriptors.
    Gmm(GmmArgs),
    /// Pool each disk's descriptors into a Fisher or VLAD vector.
    Encode(EncodeArgs),
    /// Fit a hashing model and write one binary code per disk.
    Embed(EmbedArgs),
    /// Build or query a Hamming index.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Query an index (same as `index query`).
    Query(QueryArgs),
    /// Run the full cross-validated pipeline (config: pipeline config).
    Eval(EvalArgs),
    /// Two-dimensional t-SNE layout of a code file.
    Tsne(TsneArgs),
}

#[derive(Args)]
struct DatasetArg {
    /// Dataset directory holding manifest.json.
    #[arg(long)]
    dataset: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    instances: Option<usize>,
    /// Illumination angles as `x,y;x,y;...` in degrees; defaults to the seven rig angles.
    #[arg(long)]
    angles: Option<String>,
    #[arg(long)]
    diameter: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Args)]
struct GmmArgs {
    #[command(flatten)]
    dataset: DatasetArg,
    /// Directory written by `extract`.
    #[arg(long)]
    descriptors: PathBuf,
    #[arg(long, default_value_t = 16)]
    k: usize,
    #[arg(long, default_value_t = 64)]
    pca_dim: usize,
    #[arg(long)]
    whiten: bool,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[arg(long, default_value_t = 20_000)]
    max_fit_descriptors: usize,
    /// Fit k-means centres for VLAD instead of a mixture.
    #[arg(long)]
    vlad: bool,
}

#[derive(Args)]
struct EncodeArgs {
    #[command(flatten)]
    dataset: DatasetArg,
    #[arg(long)]
    descriptors: PathBuf,
    /// Directory written by `gmm`.
    #[arg(long)]
    models: PathBuf,
    #[arg(long)]
    vlad: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum HashMethod {
    Drc,
    DrcOpt,
}

#[derive(Args)]
struct EmbedArgs {
    /// File written by `encode`.
    #[arg(long)]
    encoded: PathBuf,
    #[arg(long, default_value_t = 1024)]
    bits: usize,
    #[arg(long, value_enum, default_value = "drc-opt")]
    method: HashMethod,
    #[arg(long, default_value_t = 50)]
    itq_iters: usize,
}

#[derive(Subcommand)]
enum IndexCommand {
    /// Index every code of a code file with its surface's label and friction.
    Build(BuildArgs),
    /// Predict label and friction for every code of a code file.
    Query(QueryArgs),
}

#[derive(Args)]
struct BuildArgs {
    #[command(flatten)]
    dataset: DatasetArg,
    #[arg(long)]
    codes: PathBuf,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    codes: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Dataset to score the predictions against.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalMethod {
    Drc,
    DrcOpt,
    Regressor,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    dataset: DatasetArg,
    #[arg(long, value_enum)]
    method: Option<EvalMethod>,
    /// Repetitions of a random split.
    #[arg(long)]
    runs: Option<usize>,
    /// Refit the unsupervised stages inside every fold.
    #[arg(long)]
    per_fold_fit: bool,
    /// Also write a t-SNE layout of all codes.
    #[arg(long)]
    tsne: bool,
}

#[derive(Args)]
struct TsneArgs {
    #[command(flatten)]
    dataset: DatasetArg,
    #[arg(long)]
    codes: PathBuf,
    #[arg(long, default_value_t = 30.0)]
    perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    iters: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    std::fs::create_dir_all(&cli.out).map_err(|e| Error::Io { path: cli.out.clone(), source: e })?;
    match &cli.command {
        Command::Synth(a) => synth(cli, a),
        Command::Extract(a) => extract(cli, a),
        Command::Gmm(a) => gmm(cli, a),
        Command::Encode(a) => encode(cli, a),
        Command::Embed(a) => embed(cli, a),
        Command::Index(IndexCommand::Build(a)) => index_build(cli, a),
        Command::Index(IndexCommand::Query(a)) | Command::Query(a) => query(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::Tsne(a) => tsne(cli, a),
    }
}

fn read_config<T: DeserializeOwned>(cli: &Cli) -> Result<Option<T>> {
    cli.config.as_deref().map(container::read_json).transpose().map_err(|e| match e {
        Error::Format { path, reason } => Error::Config(format!("{}: {reason}", path.display())),
        other => other,
    })
}

fn parse_angles(text: &str) -> Result<Vec<(f64, f64)>> {
    text.split(';')
        .map(|pair| {
            let parts: Vec<&str> = pair.split(',').map(str::trim).collect();
            match parts.as_slice() {
                [x, y] => match (x.parse(), y.parse()) {
                    (Ok(x), Ok(y)) => Ok((x, y)),
                    _ => Err(Error::Config(format!("bad angle pair `{pair}`"))),
                },
                _ => Err(Error::Config(format!("bad angle pair `{pair}`; expected `x,y`"))),
            }
        })
        .collect()
}

fn synth(cli: &Cli, a: &SynthArgs) -> Result<()> {
    let mut spec = read_config::<DatasetSpec>(cli)?
        .unwrap_or_else(|| DatasetSpec::new(12, 6, RIG_ILLUMINATION_ANGLES.to_vec(), 0));
    if let Some(v) = a.classes {
        spec.n_classes = v;
    }
    if let Some(v) = a.instances {
        spec.instances_per_class = v;
    }
    if let Some(v) = &a.angles {
        spec.illum_angles = parse_angles(v)?;
    }
    if let Some(v) = a.diameter {
        spec.diameter_px = v;
    }
    if let Some(v) = a.noise {
        spec.noise_sigma = v;
    }
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    let manifest = make_synthetic_dataset(&spec, &cli.out)?;
    let disks: usize = manifest.surfaces.iter().map(|s| s.disks.len()).sum();
    println!("wrote {} surfaces, {disks} disks to {}", manifest.surfaces.len(), cli.out.display());
    Ok(())
}

fn extract(cli: &Cli, a: &DatasetArg) -> Result<()> {
    let params = read_config::<ExtractParams>(cli)?.unwrap_or_default();
    let dataset = Dataset::load_manifest(&a.dataset)?;
    let sets = compute_descriptors(&dataset, &DescriptorSource::Dense, &params)?;
    for (r, set) in dataset.disk_refs().iter().zip(&sets) {
        let path = descriptor_file(&cli.out, &r.name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::Io { path: parent.to_path_buf(), source: e })?;
        }
        set.save(&path)?;
    }
    let total: usize = sets.iter().map(DescriptorSet::len).sum();
    println!("wrote {total} descriptors of dimension {} for {} disks", params.descriptor_dim(), sets.len());
    Ok(())
}

fn load_descriptors(dataset_dir: &Path, dir: &Path) -> Result<(Dataset, Vec<DescriptorSet>)> {
    let dataset = Dataset::load_manifest(dataset_dir)?;
    let sets = compute_descriptors(&dataset, &DescriptorSource::Files(dir.to_path_buf()), &ExtractParams::default())?;
    Ok((dataset, sets))
}

fn gmm(cli: &Cli, a: &GmmArgs) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    let (_, sets) = load_descriptors(&a.dataset.dataset, &a.descriptors)?;
    let all: Vec<usize> = (0..sets.len()).collect();
    let sample = fit_sample(&sets, &all, a.max_fit_descriptors, derive_seed(seed, "eval/fit-sample"))?;
    let pca = pca_fit(std::slice::from_ref(&sample), a.pca_dim, a.whiten)?;
    let rows = pca_apply(&pca, &sample)?.vectors;
    pca.save(&cli.out.join(PCA_FILE))?;
    let model_seed = derive_seed(seed, "eval/mixture");
    if a.vlad {
        let km = kmeans_fit(&rows, a.k, model_seed, a.max_iter)?;
        km.save(&cli.out.join(KMEANS_FILE))?;
        println!("k-means: {} centres, final wcss {:.6}", km.k(), km.wcss(&rows));
    } else {
        let g = gmm_fit(&rows, a.k, model_seed, a.max_iter, a.tol)?;
        g.save(&cli.out.join(GMM_FILE))?;
        println!(
            "gmm: {} components, {} EM evaluations, avg log-likelihood {:.6}",
            g.k(),
            g.loglik_trace.len(),
            g.loglik_trace.last().copied().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

fn encode(cli: &Cli, a: &EncodeArgs) -> Result<()> {
    let (dataset, sets) = load_descriptors(&a.dataset.dataset, &a.descriptors)?;
    let pca = PcaModel::load(&a.models.join(PCA_FILE))?;
    enum Pool {
        Fv(GmmModel),
        Vlad(KmeansModel),
    }
    let pool = if a.vlad {
        Pool::Vlad(KmeansModel::load(&a.models.join(KMEANS_FILE))?)
    } else {
        Pool::Fv(GmmModel::load(&a.models.join(GMM_FILE))?)
    };
    let (kind, model_id, dim) = match &pool {
        Pool::Fv(g) => (EncodingKind::Fv, g.model_id(), 2 * g.k() * g.dim()),
        Pool::Vlad(m) => (EncodingKind::Vlad, m.model_id(), m.k() * m.dim()),
    };
    let mut out = EncodedVectors::new(kind, model_id);
    for (r, set) in dataset.disk_refs().iter().zip(&sets) {
        let reduced = pca_apply(&pca, set)?;
        let (values, degenerate) = if reduced.is_empty() {
            log::warn!("{}: no descriptors, writing a zero vector", r.name);
            (vec![0.0; dim], true)
        } else {
            match &pool {
                Pool::Fv(g) => {
                    let f = fisher_encode(g, &reduced, Normalization::Improved)?;
                    (f.values, f.degenerate)
                }
                Pool::Vlad(m) => {
                    let v = vlad_encode(m, &reduced)?;
                    (v.values, v.degenerate)
                }
            }
        };
        out.push(r.name.clone(), values, degenerate)?;
    }
    out.save(&cli.out.join(ENCODED_FILE))?;
    println!("encoded {} disks as {}-dimensional {} vectors", out.ids.len(), dim, kind.tag());
    Ok(())
}

fn embed(cli: &Cli, a: &EmbedArgs) -> Result<()> {
    let seed = derive_seed(cli.seed.unwrap_or(0), "eval/embedding");
    let encoded = EncodedVectors::load(&a.encoded)?;
    let model = match a.method {
        HashMethod::Drc => Embedding::Lsh(ProjectionModel::new(encoded.dim(), a.bits, seed)?),
        HashMethod::DrcOpt => Embedding::Itq(itq_fit(&encoded.vectors, a.bits, a.itq_iters, seed)?),
    };
    let mut batch = CodeBatch::new(a.bits, model.embedding_id());
    for (id, v) in encoded.ids.iter().zip(&encoded.vectors) {
        batch.push(id.clone(), encode_binary(&model, v)?)?;
    }
    model.save(&cli.out.join(EMBEDDING_FILE))?;
    batch.save(&cli.out.join(CODES_FILE))?;
    println!("embedding {}: {} codes of {} bits", model.embedding_id(), batch.codes.len(), a.bits);
    Ok(())
}

/// Surface index of every disk, keyed by disk name.
fn disk_surfaces(dataset: &Dataset) -> BTreeMap<String, usize> {
    dataset.disk_refs().into_iter().map(|r| (r.name, r.surface)).collect()
}

fn surface_for<'a>(dataset: &'a Dataset, names: &BTreeMap<String, usize>, id: &str) -> Result<&'a drcodes::disksynth::SurfaceEntry> {
    names
        .get(id)
        .map(|&s| &dataset.manifest.surfaces[s])
        .ok_or_else(|| Error::NotFound(format!("disk `{id}` is not in the dataset manifest")))
}

fn index_build(cli: &Cli, a: &BuildArgs) -> Result<()> {
    let dataset = Dataset::load_manifest(&a.dataset.dataset)?;
    let names = disk_surfaces(&dataset);
    let batch = CodeBatch::load(&a.codes)?;
    let mut index = HashIndex::new(batch.bit_count, batch.embedding_id.clone());
    for (id, code) in batch.ids.iter().zip(batch.codes) {
        let s = surface_for(&dataset, &names, id)?;
        index.insert(code, s.label.clone(), s.mu, s.surface_id.clone())?;
    }
    index.save(&cli.out.join(INDEX_FILE))?;
    println!("indexed {} codes", index.len());
    Ok(())
}

#[derive(serde::Serialize)]
struct PredictionRow<'a> {
    id: &'a str,
    predicted_label: String,
    predicted_mu: f64,
    label: Option<&'a str>,
    mu: Option<f64>,
}

fn query(cli: &Cli, a: &QueryArgs) -> Result<()> {
    let index = HashIndex::load(&a.index)?;
    let batch = CodeBatch::load(&a.codes)?;
    let dataset = a.dataset.as_deref().map(Dataset::load_manifest).transpose()?;
    let names = dataset.as_ref().map(disk_surfaces);
    let path = cli.out.join(PREDICTIONS_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut labels = Vec::new();
    let mut frictions = Vec::new();
    for (id, code) in batch.ids.iter().zip(&batch.codes) {
        let predicted_label = index.classify(code, a.k)?;
        let predicted_mu = index.predict_friction(code, a.k)?;
        let truth = match (&dataset, &names) {
            (Some(d), Some(n)) => Some(surface_for(d, n, id)?),
            _ => None,
        };
        if let Some(s) = truth {
            labels.push((s.label.clone(), predicted_label.clone()));
            frictions.push((s.mu, predicted_mu));
        }
        w.serialize(PredictionRow {
            id,
            predicted_label,
            predicted_mu,
            label: truth.map(|s| s.label.as_str()),
            mu: truth.map(|s| s.mu),
        })
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::Io { path: path.clone(), source: e })?;
    println!("wrote {} predictions to {}", batch.codes.len(), path.display());
    if !labels.is_empty() {
        println!(
            "precision {:.4}, mean percentage error {:.2}%",
            recognition_precision(&labels)?,
            mean_percentage_error(&frictions)?
        );
    }
    Ok(())
}

fn eval(cli: &Cli, a: &EvalArgs) -> Result<()> {
    let mut cfg = read_config::<PipelineConfig>(cli)?.unwrap_or_default();
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(m) = a.method {
        cfg.method = match m {
            EvalMethod::Drc => Method::Drc,
            EvalMethod::DrcOpt => Method::DrcOpt,
            EvalMethod::Regressor => Method::Regressor,
        };
    }
    if let Some(r) = a.runs {
        cfg.runs = r;
    }
    if a.per_fold_fit {
        cfg.fit_scope = FitScope::PerFold;
    }
    if a.tsne && cfg.tsne.is_none() {
        cfg.tsne = Some(TsneSettings::default());
    }
    let dataset = Dataset::load_manifest(&a.dataset.dataset)?;
    let out = run_pipeline(&dataset, &cfg)?;
    let report_path = cli.out.join(REPORT_FILE);
    std::fs::write(&report_path, out.report.to_json()).map_err(|e| Error::Io { path: report_path.clone(), source: e })?;
    if let Some(rows) = &out.tsne {
        write_tsne_csv(&cli.out.join(TSNE_FILE), rows)?;
    }
    let s = &out.report.summary;
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    println!(
        "{} queries, precision {}, mean percentage error {}%, {} failed folds; report at {}",
        s.queries,
        fmt(s.precision),
        fmt(s.mpe),
        s.failed_folds,
        report_path.display()
    );
    Ok(())
}

fn tsne(cli: &Cli, a: &TsneArgs) -> Result<()> {
    let dataset = Dataset::load_manifest(&a.dataset.dataset)?;
    let names = disk_surfaces(&dataset);
    let batch = CodeBatch::load(&a.codes)?;
    let params = TsneParams {
        perplexity: a.perplexity,
        iters: a.iters,
        seed: derive_seed(cli.seed.unwrap_or(0), "eval/tsne"),
        ..TsneParams::default()
    };
    let result = tsne_embed(TsneInput::Codes(&batch.codes), &params)?;
    let rows = batch
        .ids
        .iter()
        .zip(&result.points)
        .map(|(id, p)| {
            let s = surface_for(&dataset, &names, id)?;
            Ok(TsneRow { surface_id: s.surface_id.clone(), label: s.label.clone(), mu: s.mu, x: p[0], y: p[1] })
        })
        .collect::<Result<Vec<_>>>()?;
    let path = cli.out.join(TSNE_FILE);
    write_tsne_csv(&path, &rows)?;
    println!("wrote {} points to {} (final KL {:.4})", rows.len(), path.display(), result.kl_trace.last().copied().unwrap_or(0.0));
    Ok(())
}
