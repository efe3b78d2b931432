//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use hmme_core::ensemble::train_ensemble_with_reports;
use hmme_core::report::{read_features, write_features, write_scores, write_sequences, Header};
use hmme_core::{
    choose_threshold, mlp_predict, mlp_train, similarity_matrix, CompositeScore, EnsembleModel,
    EvalReport, LabeledDataset, MlpModel, Provenance,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{LoadedConfig, RunConfig};
use crate::error::CliError;
use crate::{Class, Cli, Command};

/// A trained ensemble with the provenance of the run that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub config_hash: String,
    pub seed: u64,
    pub ensemble: EnsembleModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpFile {
    pub config_hash: String,
    pub seed: u64,
    pub model: MlpModel,
}

/// Evaluation output: metrics plus where they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub config_hash: String,
    pub seed: u64,
    pub model_config_hash: Option<String>,
    pub imbalance_ratio: Option<f64>,
    pub calibration_fraction: Option<f64>,
    pub n_calibration: Option<usize>,
    pub evaluated_on: String,
    #[serde(flatten)]
    pub metrics: EvalReport,
}

/// Resolved state shared by all commands.
pub struct Context {
    pub config: RunConfig,
    pub hash: String,
    pub out: PathBuf,
    loaded: LoadedConfig,
}

impl Context {
    pub fn new(cli: &Cli) -> Result<Self, CliError> {
        let loaded = LoadedConfig::load(cli.config.as_deref())?;
        let mut config = loaded.config.clone();
        if let Some(seed) = cli.seed {
            config.seed = seed;
        }
        if let Command::Evaluate {
            calibration: Some(f), ..
        } = &cli.command
        {
            config.data.calibration_fraction = *f;
        }
        config.validate()?;
        let out = match &cli.out {
            Some(p) => p.clone(),
            None => loaded.resolve(&config.output.dir),
        };
        Ok(Self {
            hash: config.hash(),
            config,
            out,
            loaded,
        })
    }

    fn header(&self, command: &str) -> Header {
        Header::new()
            .with("tool", concat!("hmme ", env!("CARGO_PKG_VERSION")))
            .with("command", command)
            .with("config_hash", &self.hash)
            .with("seed", self.config.seed)
    }

    fn output(&self, name: &str) -> Result<PathBuf, CliError> {
        fs::create_dir_all(&self.out)
            .map_err(|e| CliError::Data(format!("cannot create output directory {}: {e}", self.out.display())))?;
        Ok(self.out.join(name))
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.output(name)?;
        fs::write(&path, bytes).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }
}

fn read_input(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Prints AUC and AP scaled by 100, the convention of published result tables.
fn print_summary(m: &EvalReport) {
    println!(
        "auc_roc {:.2}  average_precision {:.2}  threshold {}  tp {} fp {} tn {} fn {}",
        100.0 * m.auc_roc,
        100.0 * m.average_precision,
        m.threshold,
        m.confusion.tp,
        m.confusion.fp,
        m.confusion.tn,
        m.confusion.fn_
    );
}

pub fn load_model(path: &Path) -> Result<ModelFile, CliError> {
    let bytes = read_input(path)?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Data(format!("{}: not a model file: {e}", path.display())))
}

pub fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let ctx = Context::new(cli)?;
    let written = match &cli.command {
        Command::Train => cmd_train(&ctx)?,
        Command::Score { model, corpus } => vec![cmd_score(&ctx, model, corpus)?],
        Command::Evaluate { model, corpus, .. } => cmd_evaluate(&ctx, model, corpus.as_deref())?,
        Command::Features { model, corpus } => vec![cmd_features(&ctx, model, corpus)?],
        Command::Diversity { model } => vec![cmd_diversity(&ctx, model)?],
        Command::Generate {
            model,
            class,
            count,
            length,
        } => vec![cmd_generate(&ctx, model, *class, *count, *length)?],
        Command::ClassifyNn {
            features,
            labels,
            test_features,
            test_labels,
        } => {
            let test = test_features.as_deref().zip(test_labels.as_deref());
            cmd_classify_nn(&ctx, features, labels, test)?
        }
    };
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// Trains on `data.train`; writes the model, per-job likelihood histories
/// and the resolved configuration.
pub fn cmd_train(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let c = &ctx.config;
    let written = c
        .data
        .train
        .as_ref()
        .ok_or_else(|| CliError::Config("data.train is not set".into()))?;
    let path = ctx.loaded.resolve(written);
    if !path.exists() {
        return Err(CliError::Data(format!("training data not found: {}", path.display())));
    }
    let bytes = read_input(&path)?;
    let mut dataset = hmme_core::dataset::load_csv_from(
        bytes.as_slice(),
        &written.display().to_string(),
        &c.data.sequence_column,
        &c.data.label_column,
    )
    .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if let Some(ratio) = c.data.imbalance_ratio {
        dataset = dataset.subsample_imbalance(ratio, c.seed)?;
    }

    let (ensemble, reports) = train_ensemble_with_reports(&dataset, &c.ensemble_config(), true)?;
    let model = ModelFile {
        config_hash: ctx.hash.clone(),
        seed: c.seed,
        ensemble,
    };
    let model_path = ctx.write_json("model.json", &model)?;

    let mut log = Vec::new();
    ctx.header("train").with("train_sha256", sha256(&bytes)).write(&mut log)?;
    {
        let mut w = csv::Writer::from_writer(&mut log);
        w.write_record(["job", "class", "n_states", "subset_size", "seed", "iteration", "log_likelihood", "converged"])?;
        for r in &reports {
            for (it, ll) in r.history.iter().enumerate() {
                w.write_record([
                    r.job.to_string(),
                    if r.label { "positive" } else { "negative" }.to_string(),
                    r.n_states.to_string(),
                    r.subset_len.to_string(),
                    r.seed.to_string(),
                    it.to_string(),
                    ll.to_string(),
                    r.converged.to_string(),
                ])?;
            }
        }
        w.flush()?;
    }
    let log_path = ctx.write("training_log.csv", &log)?;

    let resolved = format!("# config_hash={}\n{}", ctx.hash, c.to_toml());
    let config_path = ctx.write("config.resolved.toml", resolved.as_bytes())?;
    Ok(vec![model_path, log_path, config_path])
}

fn load_sequences(
    ctx: &Context,
    model: &EnsembleModel,
    path: &Path,
    labeled: bool,
) -> Result<(hmme_core::Corpus, String), CliError> {
    let bytes = read_input(path)?;
    let label = labeled.then_some(ctx.config.data.label_column.as_str());
    let corpus = hmme_core::dataset::load_corpus_from(
        bytes.as_slice(),
        model.vocabulary(),
        &ctx.config.data.sequence_column,
        label,
    )
    .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok((corpus, sha256(&bytes)))
}

fn model_header(ctx: &Context, command: &str, model: &ModelFile) -> Header {
    ctx.header(command).with("model_config_hash", &model.config_hash)
}

/// One row per corpus sequence: index, composite score, member log-likelihoods.
pub fn cmd_score(ctx: &Context, model_path: &Path, corpus_path: &Path) -> Result<PathBuf, CliError> {
    let model = load_model(model_path)?;
    let (corpus, digest) = load_sequences(ctx, &model.ensemble, corpus_path, false)?;
    let profiles = model.ensemble.profiles(&corpus.sequences)?;
    let scores: Vec<CompositeScore> = profiles.iter().map(|p| p.composite()).collect();
    let mut buf = Vec::new();
    let header = model_header(ctx, "score", &model).with("corpus_sha256", digest);
    write_scores(&mut buf, &header, &scores, &profiles)?;
    ctx.write("scores.csv", &buf)
}

/// Splits off a calibration share to pick the threshold and reports metrics
/// on the rest.
pub fn cmd_evaluate(ctx: &Context, model_path: &Path, corpus: Option<&Path>) -> Result<Vec<PathBuf>, CliError> {
    let model = load_model(model_path)?;
    let corpus_path = match corpus {
        Some(p) => p.to_path_buf(),
        None => ctx.loaded.resolve(
            ctx.config
                .data
                .test
                .as_ref()
                .ok_or_else(|| CliError::Config("no --corpus given and data.test is not set".into()))?,
        ),
    };
    let (corpus, digest) = load_sequences(ctx, &model.ensemble, &corpus_path, true)?;
    let labels = corpus
        .labels
        .ok_or_else(|| CliError::Data(format!("{}: evaluation needs a label column", corpus_path.display())))?;
    let dataset = LabeledDataset::new(
        corpus.sequences,
        labels,
        model.ensemble.vocabulary().clone(),
        Provenance::default(),
    )
    .map_err(|e| CliError::Data(format!("{}: {e}", corpus_path.display())))?;
    if dataset.n_positive() == 0 || dataset.n_negative() == 0 {
        return Err(CliError::Data(format!(
            "{}: evaluation needs both classes ({} positive, {} negative)",
            corpus_path.display(),
            dataset.n_positive(),
            dataset.n_negative()
        )));
    }
    let fraction = ctx.config.data.calibration_fraction;
    let (calibration, rest) = dataset.split(fraction, ctx.config.seed)?;
    let threshold = choose_threshold(&model.ensemble.score_corpus(calibration.sequences())?, calibration.labels())?;
    let scores: Vec<f64> = model
        .ensemble
        .score_corpus(rest.sequences())?
        .iter()
        .map(|s| s.0 as f64)
        .collect();
    let metrics = EvalReport::compute(rest.labels(), &scores, threshold as f64)?;
    print_summary(&metrics);

    let report = ReportFile {
        config_hash: ctx.hash.clone(),
        seed: ctx.config.seed,
        model_config_hash: Some(model.config_hash.clone()),
        imbalance_ratio: model.ensemble.provenance().imbalance_ratio,
        calibration_fraction: Some(fraction),
        n_calibration: Some(calibration.len()),
        evaluated_on: "held-out".into(),
        metrics,
    };
    let report_path = ctx.write_json("report.json", &report)?;

    let mut buf = Vec::new();
    model_header(ctx, "evaluate", &model)
        .with("corpus_sha256", digest)
        .with("threshold", threshold)
        .write(&mut buf)?;
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["index", "label", "score"])?;
        for (i, (s, &l)) in scores.iter().zip(rest.labels()).enumerate() {
            w.write_record([i.to_string(), (l as u8).to_string(), s.to_string()])?;
        }
        w.flush()?;
    }
    let scores_path = ctx.write("evaluation_scores.csv", &buf)?;
    Ok(vec![report_path, scores_path])
}

pub fn cmd_features(ctx: &Context, model_path: &Path, corpus_path: &Path) -> Result<PathBuf, CliError> {
    let model = load_model(model_path)?;
    let (corpus, digest) = load_sequences(ctx, &model.ensemble, corpus_path, false)?;
    let features = model.ensemble.feature_vectors(&corpus.sequences)?;
    let mut buf = Vec::new();
    let header = model_header(ctx, "features", &model).with("corpus_sha256", digest);
    write_features(&mut buf, &header, &features, model.ensemble.positive_models().len())?;
    ctx.write("features.csv", &buf)
}

pub fn cmd_diversity(ctx: &Context, model_path: &Path) -> Result<PathBuf, CliError> {
    let model = load_model(model_path)?;
    let sim = similarity_matrix(&model.ensemble)?;
    let mut buf = Vec::new();
    let mut header = model_header(ctx, "diversity", &model);
    if let Some(mean) = sim.mean_intra_class_similarity() {
        header = header.with("mean_intra_class_similarity", mean);
    }
    header.write(&mut buf)?;
    sim.write_csv(&mut buf)?;
    ctx.write("similarity.csv", &buf)
}

pub fn cmd_generate(
    ctx: &Context,
    model_path: &Path,
    class: Class,
    count: usize,
    length: usize,
) -> Result<PathBuf, CliError> {
    if count == 0 {
        return Err(CliError::Config("--count must be at least 1".into()));
    }
    let model = load_model(model_path)?;
    let positive = class == Class::Positive;
    let seqs = model.ensemble.generate(positive, count, length, ctx.config.seed)?;
    let mut buf = Vec::new();
    let header = model_header(ctx, "generate", &model)
        .with("class", if positive { "positive" } else { "negative" })
        .with("length", length);
    write_sequences(&mut buf, &header, model.ensemble.vocabulary(), &seqs, Some(positive))?;
    ctx.write("generated.csv", &buf)
}

/// Reads the configured label column from a CSV, skipping `#` lines.
pub fn read_labels(path: &Path, column: &str) -> Result<Vec<bool>, CliError> {
    let bytes = read_input(path)?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(bytes.as_slice());
    let idx = rdr
        .headers()?
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| CliError::Data(format!("{}: missing column {column:?}", path.display())))?;
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        labels.push(match rec.get(idx) {
            Some("1") => true,
            Some("0") => false,
            other => {
                return Err(CliError::Data(format!(
                    "{} line {line}: label {other:?} is not 0 or 1",
                    path.display()
                )))
            }
        });
    }
    Ok(labels)
}

fn read_feature_file(path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    read_features(read_input(path)?.as_slice()).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Trains the neural head and reports metrics at probability threshold 0.5,
/// on the test pair when given and on the training rows otherwise.
pub fn cmd_classify_nn(
    ctx: &Context,
    features: &Path,
    labels: &Path,
    test: Option<(&Path, &Path)>,
) -> Result<Vec<PathBuf>, CliError> {
    let column = &ctx.config.data.label_column;
    let x = read_feature_file(features)?;
    let y = read_labels(labels, column)?;
    if x.len() != y.len() {
        return Err(CliError::Data(format!(
            "{} has {} rows but {} has {} labels",
            features.display(),
            x.len(),
            labels.display(),
            y.len()
        )));
    }
    let model = mlp_train(&x, &y, &ctx.config.mlp_config())?;
    let (ex, ey, on) = match test {
        Some((tf, tl)) => (read_feature_file(tf)?, read_labels(tl, column)?, "test"),
        None => (x, y, "train"),
    };
    if ex.len() != ey.len() {
        return Err(CliError::Data("test features and labels differ in length".into()));
    }
    let probs = mlp_predict(&model, &ex)?;
    let metrics = EvalReport::compute(&ey, &probs, 0.5)?;
    print_summary(&metrics);

    let model_path = ctx.write_json(
        "mlp_model.json",
        &MlpFile {
            config_hash: ctx.hash.clone(),
            seed: ctx.config.seed,
            model,
        },
    )?;
    let report_path = ctx.write_json(
        "mlp_report.json",
        &ReportFile {
            config_hash: ctx.hash.clone(),
            seed: ctx.config.seed,
            model_config_hash: None,
            imbalance_ratio: None,
            calibration_fraction: None,
            n_calibration: None,
            evaluated_on: on.into(),
            metrics,
        },
    )?;
    let mut buf = Vec::new();
    ctx.header("classify-nn").with("evaluated_on", on).write(&mut buf)?;
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["index", "label", "probability"])?;
        for (i, (p, &l)) in probs.iter().zip(&ey).enumerate() {
            w.write_record([i.to_string(), (l as u8).to_string(), p.to_string()])?;
        }
        w.flush()?;
    }
    let scores_path = ctx.write("mlp_scores.csv", &buf)?;
    Ok(vec![model_path, report_path, scores_path])
}
