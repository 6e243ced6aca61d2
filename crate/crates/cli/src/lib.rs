//! Command-line front end: `dlens <command> …`.
//!
//! Every file written with `--out` gets a `<file>.manifest.json` sidecar
//! recording the command, configuration, seed, inputs and a SHA-256 digest
//! of the output, so identical runs can be compared by manifest alone.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use dlens_core::dataset::{
    load_metrics_table, load_source_corpus, save_metrics_table, write_source_corpus,
};
use dlens_core::evaluation::{evaluate_model, generate_synthetic_corpus, SyntheticSpec};
use dlens_core::explain::{discretize_features, explain_instance, ExplainerConfig, Instance};
use dlens_core::forest::{train_forest, ForestConfig};
use dlens_core::guidance::{guide_instance, GuidanceConfig};
use dlens_core::localize::{rank_lines, score_lines, LocalizationReport};
use dlens_core::report::{
    render_explanation_report, render_localization_report, render_plan_report, Format,
};
use dlens_core::tokenizer::{build_token_features, corpus_vocabulary, token_dataset};
use dlens_core::{ForestModel, SourceCorpus, TabularDataset, CLASS_THRESHOLD};

const TOOL_VERSION: &str = concat!("dlens ", env!("CARGO_PKG_VERSION"));

#[derive(Parser, Debug)]
#[command(
    name = "dlens",
    version,
    about = "Defect risk models with local explanations and guidance"
)]
struct Cli {
    /// Seed for every random choice in the run.
    #[arg(long, global = true, env = "DLENS_SEED", default_value_t = 42)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a random forest on a metric table or on token counts of a corpus.
    Train(TrainArgs),
    /// Score every row of a metric table.
    Predict(PredictArgs),
    /// Explain one file's prediction.
    Explain(ExplainArgs),
    /// Rank the lines of one file by risk.
    Localize(LocalizeArgs),
    /// Derive do/avoid guidance for one file.
    Guide(GuideArgs),
    /// Score a model on a labelled table.
    Evaluate(EvaluateArgs),
    /// Write a planted-defect corpus and matching metric table.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct CorpusArgs {
    /// Root directory of the source files.
    #[arg(long, requires = "annotations")]
    corpus: Option<PathBuf>,
    /// CSV of `file_id,line_number` defective lines.
    #[arg(long, requires = "corpus")]
    annotations: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("input").required(true).args(["data", "corpus"]))]
struct TrainArgs {
    /// Metric table (`file_id,<metrics…>,defective`).
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Keep tokens that occur in at least this many files.
    #[arg(long, default_value_t = 2)]
    min_files: usize,
    /// Where to write the model JSON.
    #[arg(long, visible_alias = "out")]
    model: PathBuf,
    #[arg(long, default_value_t = 100)]
    trees: usize,
    #[arg(long, default_value_t = 5)]
    min_leaf: usize,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    mtry: Option<usize>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExplainerArgs {
    #[arg(long, default_value_t = 5000)]
    samples: usize,
    #[arg(long, default_value_t = 0.75)]
    kernel_width: f64,
    /// Number of factors kept; defaults to 10 for metrics and 20 for tokens.
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
}

impl ExplainerArgs {
    fn config(&self, tokens: bool, seed: u64) -> ExplainerConfig {
        let base = if tokens {
            ExplainerConfig::tokens(seed)
        } else {
            ExplainerConfig::tabular(seed)
        };
        ExplainerConfig {
            n_samples: self.samples,
            kernel_width: self.kernel_width,
            top_k: self.top_k.unwrap_or(base.top_k),
            ridge_lambda: self.lambda,
            seed,
        }
    }
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("input").required(true).args(["data", "corpus"]))]
struct ExplainArgs {
    #[arg(long)]
    model: PathBuf,
    /// Metric table holding the file; also used for binning unless `--train` is given.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Training table whose quartiles define the bins.
    #[arg(long, requires = "data")]
    train: Option<PathBuf>,
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    file_id: String,
    #[arg(long, default_value = "json")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    explainer: ExplainerArgs,
}

#[derive(Args, Debug)]
struct LocalizeArgs {
    /// Token model trained with `train --corpus`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    file_id: String,
    #[arg(long, default_value = "json")]
    format: Format,
    /// Lines shown in markdown/html reports.
    #[arg(long, default_value_t = 20)]
    top: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    explainer: ExplainerArgs,
}

#[derive(Args, Debug)]
struct GuideArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    file_id: String,
    #[arg(long, default_value = "json")]
    format: Format,
    #[arg(long, default_value_t = 2000)]
    neighborhood: usize,
    #[arg(long, default_value_t = 3)]
    max_depth: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory; receives `corpus/`, `annotations.csv` and `metrics.csv`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    files: usize,
    #[arg(long, default_value_t = 100)]
    lines: usize,
    #[arg(long, default_value_t = 0.02)]
    defect_rate: f64,
    #[arg(long, default_value_t = 200)]
    vocabulary: usize,
    #[arg(long = "signal", default_value = "bugmagic")]
    signals: Vec<String>,
}

#[derive(Serialize)]
struct InputRecord {
    path: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    sha256: Option<String>,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config: serde_json::Value,
    seed: u64,
    inputs: Vec<InputRecord>,
    tool_version: &'a str,
    output_digest: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Input record; regular files also get a content digest.
fn input(path: &Path) -> InputRecord {
    let sha256 = if path.is_file() {
        fs::read(path).ok().map(|b| sha256_hex(&b))
    } else {
        None
    };
    InputRecord {
        path: path.display().to_string(),
        sha256,
    }
}

struct Run<'a> {
    command: &'a str,
    seed: u64,
    config: serde_json::Value,
    inputs: Vec<InputRecord>,
}

impl Run<'_> {
    fn manifest(self, digest: String) -> String {
        let m = RunManifest {
            command: self.command,
            config: self.config,
            seed: self.seed,
            inputs: self.inputs,
            tool_version: TOOL_VERSION,
            output_digest: digest,
        };
        let mut text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        text.push('\n');
        text
    }

    /// Writes `text` to `out` plus its manifest sidecar, or to stdout.
    fn emit(self, out: Option<&Path>, text: &str) -> Result<()> {
        let Some(out) = out else {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            if !text.ends_with('\n') {
                stdout.write_all(b"\n")?;
            }
            return Ok(());
        };
        write_file(out, text.as_bytes())?;
        let sidecar = sidecar_path(out);
        write_file(
            &sidecar,
            self.manifest(sha256_hex(text.as_bytes())).as_bytes(),
        )
    }
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(OsString::from).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("config serializes")
}

fn load_model(path: &Path) -> Result<ForestModel> {
    ForestModel::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn load_table(path: &Path) -> Result<TabularDataset> {
    load_metrics_table(path).with_context(|| format!("reading {}", path.display()))
}

fn load_corpus(root: &Path, annotations: &Path) -> Result<SourceCorpus> {
    load_source_corpus(root, annotations)
        .with_context(|| format!("reading corpus {}", root.display()))
}

fn check_columns(model: &ForestModel, data: &TabularDataset, path: &Path) -> Result<()> {
    if model.feature_names != data.feature_names {
        bail!(
            "{} has columns [{}] but the model expects [{}]",
            path.display(),
            data.feature_names.join(", "),
            model.feature_names.join(", ")
        );
    }
    Ok(())
}

fn find_row<'a>(data: &'a TabularDataset, file_id: &str, path: &Path) -> Result<&'a [f64]> {
    data.find(file_id)
        .map(|r| r.features.as_slice())
        .ok_or_else(|| anyhow!("no row for `{file_id}` in {}", path.display()))
}

fn train(args: &TrainArgs, seed: u64) -> Result<()> {
    let (data, inputs, vocabulary_note) =
        match (&args.data, &args.corpus.corpus, &args.corpus.annotations) {
            (Some(path), _, _) => (load_table(path)?, vec![input(path)], None),
            (None, Some(root), Some(ann)) => {
                let corpus = load_corpus(root, ann)?;
                let vocab = corpus_vocabulary(&corpus, args.min_files);
                let n = vocab.len();
                (
                    token_dataset(&corpus, &vocab),
                    vec![input(root), input(ann)],
                    Some(n),
                )
            }
            _ => bail!("either --data or --corpus with --annotations is required"),
        };
    let config = ForestConfig {
        n_trees: args.trees,
        min_leaf: args.min_leaf,
        max_depth: args.max_depth,
        mtry: args.mtry,
        seed,
    };
    let model = train_forest(&data, &config)?;
    let text = model.to_json();
    let mut cfg = to_value(&model.config);
    if vocabulary_note.is_some() {
        cfg["min_files"] = args.min_files.into();
    }
    Run {
        command: "train",
        seed,
        config: cfg,
        inputs,
    }
    .emit(Some(&args.model), &text)?;
    if let Some(n) = vocabulary_note {
        println!("vocabulary: {n} tokens");
    }
    println!(
        "trained {} trees on {} rows; OOB accuracy {:.4}",
        model.trees.len(),
        data.len(),
        model.oob_accuracy
    );
    Ok(())
}

fn predict(args: &PredictArgs, seed: u64) -> Result<()> {
    let model = load_model(&args.model)?;
    let data = load_table(&args.data)?;
    check_columns(&model, &data, &args.data)?;
    let mut text = String::from("file_id,risk,predicted_defective\n");
    for r in &data.records {
        let risk = model.predict_risk(&r.features)?;
        let id = if r.file_id.contains([',', '"', '\n']) {
            format!("\"{}\"", r.file_id.replace('"', "\"\""))
        } else {
            r.file_id.clone()
        };
        text.push_str(&format!(
            "{id},{risk},{}\n",
            u8::from(risk >= CLASS_THRESHOLD)
        ));
    }
    Run {
        command: "predict",
        seed,
        config: serde_json::json!({ "class_threshold": CLASS_THRESHOLD }),
        inputs: vec![input(&args.model), input(&args.data)],
    }
    .emit(args.out.as_deref(), &text)
}

fn explain(args: &ExplainArgs, seed: u64) -> Result<()> {
    let model = load_model(&args.model)?;
    let tokens = args.corpus.corpus.is_some();
    let config = args.explainer.config(tokens, seed);
    let (explanation, inputs) = if let Some(path) = &args.data {
        let data = load_table(path)?;
        check_columns(&model, &data, path)?;
        let train = match &args.train {
            Some(t) => load_table(t)?,
            None => data.clone(),
        };
        let scheme = discretize_features(&train)?;
        let values = find_row(&data, &args.file_id, path)?;
        let e = explain_instance(
            &model,
            &args.file_id,
            Instance::Tabular {
                values,
                scheme: &scheme,
            },
            &config,
        )?;
        let mut inputs = vec![input(&args.model), input(path)];
        inputs.extend(args.train.as_deref().map(input));
        (e, inputs)
    } else {
        let (root, ann) = (
            args.corpus.corpus.as_ref().unwrap(),
            args.corpus.annotations.as_ref().unwrap(),
        );
        let corpus = load_corpus(root, ann)?;
        let file = corpus
            .get(&args.file_id)
            .ok_or_else(|| anyhow!("no file `{}` under {}", args.file_id, root.display()))?;
        let (tv, _) = build_token_features(file);
        let e = explain_instance(
            &model,
            &args.file_id,
            Instance::Tokens {
                tokens: &tv,
                vocabulary: &model.feature_names,
            },
            &config,
        )?;
        (e, vec![input(&args.model), input(root), input(ann)])
    };
    let text = render_explanation_report(&explanation, args.format);
    let mut cfg = to_value(&config);
    cfg["format"] = to_value(&args.format);
    Run {
        command: "explain",
        seed,
        config: cfg,
        inputs,
    }
    .emit(args.out.as_deref(), &text)
}

fn localize(args: &LocalizeArgs, seed: u64) -> Result<()> {
    let model = load_model(&args.model)?;
    let corpus = load_corpus(&args.corpus, &args.annotations)?;
    let file = corpus
        .get(&args.file_id)
        .ok_or_else(|| anyhow!("no file `{}` under {}", args.file_id, args.corpus.display()))?;
    let config = args.explainer.config(true, seed);
    let (tv, index) = build_token_features(file);
    let explanation = explain_instance(
        &model,
        &args.file_id,
        Instance::Tokens {
            tokens: &tv,
            vocabulary: &model.feature_names,
        },
        &config,
    )?;
    let ranked = rank_lines(score_lines(&explanation, &index, file.line_count())?);
    let report = LocalizationReport::new(&args.file_id, &ranked, &file.defective_lines, seed)?;
    let text = render_localization_report(&report, args.format, args.top);
    let mut cfg = to_value(&config);
    cfg["format"] = to_value(&args.format);
    Run {
        command: "localize",
        seed,
        config: cfg,
        inputs: vec![
            input(&args.model),
            input(&args.corpus),
            input(&args.annotations),
        ],
    }
    .emit(args.out.as_deref(), &text)
}

fn guide(args: &GuideArgs, seed: u64) -> Result<()> {
    let model = load_model(&args.model)?;
    let data = load_table(&args.data)?;
    check_columns(&model, &data, &args.data)?;
    let train = match &args.train {
        Some(t) => load_table(t)?,
        None => data.clone(),
    };
    let scheme = discretize_features(&train)?;
    let values = find_row(&data, &args.file_id, &args.data)?;
    let config = GuidanceConfig {
        neighborhood_size: args.neighborhood,
        max_depth: args.max_depth,
        seed,
    };
    let plan = guide_instance(&model, &args.file_id, values, &scheme, &config)?;
    let text = render_plan_report(&plan, args.format);
    let mut cfg = to_value(&config);
    cfg["format"] = to_value(&args.format);
    let mut inputs = vec![input(&args.model), input(&args.data)];
    inputs.extend(args.train.as_deref().map(input));
    Run {
        command: "guide",
        seed,
        config: cfg,
        inputs,
    }
    .emit(args.out.as_deref(), &text)
}

fn evaluate(args: &EvaluateArgs, seed: u64) -> Result<()> {
    let model = load_model(&args.model)?;
    let data = load_table(&args.data)?;
    check_columns(&model, &data, &args.data)?;
    let report = evaluate_model(&model, &data)?;
    let text = serde_json::to_string_pretty(&report)?;
    Run {
        command: "evaluate",
        seed,
        config: serde_json::json!({ "class_threshold": CLASS_THRESHOLD }),
        inputs: vec![input(&args.model), input(&args.data)],
    }
    .emit(args.out.as_deref(), &text)
}

fn synth(args: &SynthArgs, seed: u64) -> Result<()> {
    let spec = SyntheticSpec {
        n_files: args.files,
        lines_per_file: args.lines,
        defect_rate_lines: args.defect_rate,
        vocabulary_size: args.vocabulary,
        signal_tokens: args.signals.clone(),
        seed,
    };
    let (corpus, metrics) = generate_synthetic_corpus(&spec)?;
    let root = args.out.join("corpus");
    let ann = args.out.join("annotations.csv");
    let table = args.out.join("metrics.csv");
    if root.exists() {
        bail!(
            "{} already exists; choose an empty output directory",
            root.display()
        );
    }
    write_source_corpus(&corpus, &root, &ann)?;
    save_metrics_table(&metrics, &table)?;

    // digest over the annotation and metric tables plus every source file
    let mut hasher = Sha256::new();
    for path in [&ann, &table] {
        hasher.update(fs::read(path)?);
    }
    for f in &corpus.files {
        hasher.update(f.file_id.as_bytes());
        hasher.update(fs::read(root.join(&f.file_id))?);
    }
    let manifest = Run {
        command: "synth",
        seed,
        config: to_value(&spec),
        inputs: Vec::new(),
    }
    .manifest(hex::encode(hasher.finalize()));
    write_file(&args.out.join("manifest.json"), manifest.as_bytes())?;
    let defective = corpus.files.iter().filter(|f| f.label == 1).count();
    println!(
        "wrote {} files ({defective} defective) to {}",
        corpus.files.len(),
        args.out.display()
    );
    Ok(())
}

/// Parses `argv` (including the program name) and runs the command.
/// Returns 0 on success, 1 on runtime errors and 2 on usage errors.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let seed = cli.seed;
    let result = match &cli.command {
        Command::Train(a) => train(a, seed),
        Command::Predict(a) => predict(a, seed),
        Command::Explain(a) => explain(a, seed),
        Command::Localize(a) => localize(a, seed),
        Command::Guide(a) => guide(a, seed),
        Command::Evaluate(a) => evaluate(a, seed),
        Command::Synth(a) => synth(a, seed),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
