//! Command-line front end.
//!
//! Every subcommand resolves a [`RunConfig`] from defaults, then an optional
//! `--config` file, then `--set key=value` pairs, then dedicated flags, and
//! writes `manifest.conf` (a loadable config plus commented run metadata)
//! into the output directory before doing any work. Exit codes: 0 success,
//! 1 usage or configuration error, 2 data error, 3 numeric failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::archive::ModelArchive;
use crate::binio::write_atomic;
use crate::config::RunConfig;
use crate::dataset::{load_dataset, ClassLabel, Schema};
use crate::error::{Error, Result};
use crate::model::{argmax, evaluate, fit, scenario_layout};
use crate::pipeline::{embedding_source, encode_records, prepare, train_embeddings};
use crate::search::{run_grid_search_observed, ModelContext};
use crate::text::{clean_text, encode_pad};

#[derive(Debug, Parser)]
#[command(name = "hybridsent", version, about = "Tweet sentiment with hybrid CNN / Bi-LSTM models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean a dataset and write the cleaned CSV and vocabulary.
    Preprocess(RunArgs),
    /// Train GloVe vectors on a dataset's cleaned texts.
    TrainGlove(RunArgs),
    /// Grid search with inner cross-validation, then train the best model.
    GridSearch(RunArgs),
    /// Train one model with the configured widths and batch size.
    Train(RunArgs),
    /// Accuracy and loss of a saved model on a labelled dataset.
    Evaluate(RunArgs),
    /// Classify texts with a saved model.
    Predict(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long = "batch-size")]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub filter1: Option<String>,
    #[arg(long)]
    pub filter2: Option<String>,
    #[arg(long = "seq-len")]
    pub seq_len: Option<String>,
    #[arg(long)]
    pub head: Option<String>,
    #[arg(long = "glove-vectors")]
    pub glove_vectors: Option<String>,
    #[arg(long = "encoder-weights")]
    pub encoder_weights: Option<String>,
    /// Saved model archive (evaluate, predict).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Text to classify (predict); repeatable.
    #[arg(long)]
    pub text: Vec<String>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for pair in &self.set {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{pair}`")))?;
            cfg.set(k.trim(), v)?;
        }
        let flags = [
            ("data", &self.data),
            ("scenario", &self.scenario),
            ("seed", &self.seed),
            ("out", &self.out),
            ("epochs", &self.epochs),
            ("batch_size", &self.batch_size),
            ("filter1", &self.filter1),
            ("filter2", &self.filter2),
            ("seq_len", &self.seq_len),
            ("head", &self.head),
            ("glove_vectors", &self.glove_vectors),
            ("encoder_weights", &self.encoder_weights),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn require_model(&self) -> Result<&Path> {
        self.model
            .as_deref()
            .ok_or_else(|| Error::Config("--model is required".into()))
    }
}

/// Exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 1,
        e if e.is_numeric() => 3,
        _ => 2,
    }
}

/// Parse `argv` (including the program name), run the subcommand and return
/// the exit status. Results go to `out`, diagnostics to `err`.
pub fn run_command<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    match dispatch(&cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: &Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Preprocess(a) => preprocess(a, out),
        Command::TrainGlove(a) => train_glove_cmd(a, out),
        Command::GridSearch(a) => grid_search(a, out, err),
        Command::Train(a) => train(a, out),
        Command::Evaluate(a) => evaluate_cmd(a, out),
        Command::Predict(a) => predict(a, out),
    }
}

fn write_out(out: &mut dyn Write, s: std::fmt::Arguments<'_>) -> Result<()> {
    out.write_fmt(s)
        .map_err(|e| Error::io("<stdout>", e))
}

/// Write `manifest.conf`: run metadata as comments, then the full config.
pub fn write_manifest(cfg: &RunConfig, command: &str, extra: &[(&str, String)]) -> Result<()> {
    let mut s = format!(
        "# command = {command}\n# version = {}\n# seed = {}\n",
        env!("CARGO_PKG_VERSION"),
        cfg.seed
    );
    for (k, v) in extra {
        s.push_str(&format!("# {k} = {v}\n"));
    }
    s.push_str(&cfg.to_text());
    write_atomic(&cfg.out.join("manifest.conf"), s.as_bytes())
}

fn schema(cfg: &RunConfig) -> Schema {
    Schema {
        text_column: cfg.text_column.clone(),
        label_column: cfg.label_column.clone(),
    }
}

fn csv_bytes(rows: impl Iterator<Item = [String; 2]>, header: [&str; 2]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner()
        .map_err(|e| Error::io("<memory>", e.into_error()))
}

fn preprocess(a: &RunArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = a.resolve()?;
    write_manifest(&cfg, "preprocess", &[])?;
    let records = load_dataset(cfg.require_data()?, &schema(&cfg))?;
    let p = prepare(&records, &cfg.cleaning()?, cfg.min_count, cfg.seq_len)?;
    let cleaned = csv_bytes(
        p.cleaned
            .iter()
            .zip(&p.examples)
            .map(|(t, e)| [t.clone(), e.label.name().to_string()]),
        ["text", "label"],
    )?;
    write_atomic(&cfg.out.join("cleaned.csv"), &cleaned)?;
    write_atomic(&cfg.out.join("vocab.tsv"), p.vocab.to_tsv().as_bytes())?;
    write_out(
        out,
        format_args!("{} rows, vocabulary {}\n", p.examples.len(), p.vocab.size()),
    )
}

fn train_glove_cmd(a: &RunArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = a.resolve()?;
    write_manifest(&cfg, "train-glove", &[])?;
    let records = load_dataset(cfg.require_data()?, &schema(&cfg))?;
    let p = prepare(&records, &cfg.cleaning()?, cfg.min_count, cfg.seq_len)?;
    let (table, trace) = train_embeddings(&cfg, &p.cleaned, &p.vocab)?;
    let mut vectors = Vec::new();
    table
        .write_text(&p.vocab, &mut vectors)
        .map_err(|e| Error::io("<memory>", e))?;
    write_atomic(&cfg.out.join("glove.txt"), &vectors)?;
    write_atomic(&cfg.out.join("vocab.tsv"), p.vocab.to_tsv().as_bytes())?;
    let mut objective = String::from("epoch,objective\n");
    for (i, j) in trace.iter().enumerate() {
        objective.push_str(&format!("{i},{j:.6}\n"));
    }
    write_atomic(&cfg.out.join("glove_objective.csv"), objective.as_bytes())?;
    write_out(
        out,
        format_args!(
            "objective {:.6} -> {:.6}\n",
            trace.first().copied().unwrap_or(f64::NAN),
            trace.last().copied().unwrap_or(f64::NAN)
        ),
    )
}

struct Loaded {
    scenario: u8,
    prepared: crate::pipeline::Prepared,
    context: ModelContext,
}

fn load_for_training(cfg: &RunConfig) -> Result<Loaded> {
    let scenario = cfg.require_scenario()?;
    let records = load_dataset(cfg.require_data()?, &schema(cfg))?;
    let prepared = prepare(&records, &cfg.cleaning()?, cfg.min_count, cfg.seq_len)?;
    let (kind, _) = scenario_layout(scenario)?;
    let source = embedding_source(cfg, kind, &prepared.cleaned, &prepared.vocab)?;
    let context = ModelContext {
        source,
        seq_len: cfg.seq_len,
        options: cfg.model_options(),
    };
    Ok(Loaded {
        scenario,
        prepared,
        context,
    })
}

/// Train the configured grid point on all data and save archive and history.
fn train_and_save(cfg: &RunConfig, loaded: &Loaded) -> Result<ModelArchive> {
    let gc = cfg.grid_config(loaded.scenario)?;
    let mut model = loaded.context.build(loaded.scenario, &gc, cfg.seed)?;
    let train_cfg = crate::model::TrainConfig {
        batch_size: gc.batch_size,
        ..cfg.train_config()
    };
    fit(&mut model, &loaded.prepared.examples, &train_cfg)?;
    let mut saved = cfg.clone();
    saved.set_grid_config(&gc);
    let archive = ModelArchive {
        config: saved,
        vocab: loaded.prepared.vocab.clone(),
        model,
    };
    archive.save(&cfg.out.join("model.bin"))?;
    let mut hist = Vec::new();
    archive
        .model
        .write_history_csv(&mut hist)
        .map_err(|e| Error::io("<memory>", e))?;
    write_atomic(&cfg.out.join("history.csv"), &hist)?;
    Ok(archive)
}

fn grid_search(a: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let cfg = a.resolve()?;
    write_manifest(&cfg, "grid-search", &[])?;
    let loaded = load_for_training(&cfg)?;
    let grid = cfg.grid_spec(loaded.scenario)?;
    let report = run_grid_search_observed(
        loaded.scenario,
        &grid,
        &loaded.context,
        &loaded.prepared.examples,
        &cfg.search_config(),
        |i, row| {
            let _ = match &row.failure {
                Some(f) => writeln!(err, "config {}: failed ({f})", i + 1),
                None => writeln!(
                    err,
                    "config {}: accuracy {:.4} loss {:.4}",
                    i + 1,
                    row.mean_accuracy,
                    row.mean_loss
                ),
            };
        },
    )?;
    write_atomic(&cfg.out.join("report.csv"), report.to_csv().as_bytes())?;
    let mut best_cfg = cfg.clone();
    best_cfg.set_grid_config(&report.best_config());
    write_atomic(&cfg.out.join("best.conf"), best_cfg.to_text().as_bytes())?;
    train_and_save(&best_cfg, &loaded)?;
    let b = report.best_config();
    write_out(
        out,
        format_args!(
            "best batch_size={} filter1={} filter2={} cv_accuracy={:.6} final_accuracy={:.6}\n",
            b.batch_size,
            b.filter1,
            b.filter2.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
            report.rows[report.best].mean_accuracy,
            report.final_eval
        ),
    )
}

fn train(a: &RunArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = a.resolve()?;
    write_manifest(&cfg, "train", &[])?;
    let loaded = load_for_training(&cfg)?;
    let archive = train_and_save(&cfg, &loaded)?;
    let last = archive.model.history.last();
    write_out(
        out,
        format_args!(
            "trained {} epochs, final loss {:.6}\n",
            archive.model.history.len(),
            last.map_or(f64::NAN, |h| h.loss)
        ),
    )
}

fn evaluate_cmd(a: &RunArgs, out: &mut dyn Write) -> Result<()> {
    let cli_cfg = a.resolve()?;
    let model_path = a.require_model()?;
    write_manifest(&cli_cfg, "evaluate", &[("model", model_path.display().to_string())])?;
    let archive = ModelArchive::load(model_path)?;
    let cfg = &archive.config;
    let records = load_dataset(cli_cfg.require_data()?, &schema(cfg))?;
    let data = encode_records(&records, &cfg.cleaning()?, &archive.vocab, archive.model.seq_len)?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("dataset has no rows".into()));
    }
    let (acc, loss) = evaluate(&archive.model, &data)?;
    write_out(out, format_args!("accuracy {acc:.6}\nloss {loss:.6}\n"))
}

fn predict(a: &RunArgs, out: &mut dyn Write) -> Result<()> {
    let cli_cfg = a.resolve()?;
    let model_path = a.require_model()?;
    write_manifest(&cli_cfg, "predict", &[("model", model_path.display().to_string())])?;
    if a.text.is_empty() {
        return Err(Error::Config("--text is required".into()));
    }
    let archive = ModelArchive::load(model_path)?;
    let cleaning = archive.config.cleaning()?;
    for t in &a.text {
        let seq = encode_pad(&clean_text(t, &cleaning), &archive.vocab, archive.model.seq_len)?;
        let p = archive.model.predict_proba(&seq)?;
        let label = ClassLabel::new(argmax(p.view()))?;
        write_out(out, format_args!("{} {}\n", label.name(), label.index()))?;
    }
    Ok(())
}
