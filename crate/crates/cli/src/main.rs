use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use breath_stress::augment::Normalization;
use breath_stress::eval::{run_loso, train_model, LabeledExample, TrainConfig};
use breath_stress::labeling::{LabelsFile, Task};
use breath_stress::models::{ModelVariant, NetworkModel};
use breath_stress::pipeline::{augment_dir, load_dataset, predict_rvs, spectrogram_dir, vas_records, PatchIndex};
use breath_stress::signal::BandConfig;
use breath_stress::spectrogram::{read_rvs, SpectrogramConfig};
use breath_stress::synth::{generate_dataset, SynthConfig};
use breath_stress::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Stress recognition from breathing signals: respiration variability
/// spectrograms, patch augmentation, self-report labels and classifiers
/// evaluated leave-one-participant-out.
#[derive(Debug, Parser)]
#[command(name = "breath-stress", version)]
struct Cli {
    /// More log output (-v info, -vv debug). Overridden by RUST_LOG.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus of breathing sessions.
    Synth(SynthArgs),
    /// Compute one spectrogram (.rvs) per session of a corpus.
    Spectrogram(SpectrogramArgs),
    /// Crop spectrograms into square patches and write the patch index.
    Augment(AugmentArgs),
    /// Normalize self-report scores and cluster them into stress labels.
    Label(LabelArgs),
    /// Train one model on every labelled patch.
    Train(TrainArgs),
    /// Leave-one-participant-out evaluation.
    Loso(LosoArgs),
    /// Classify a patch or a whole session spectrogram.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    participants: usize,
    #[arg(long, default_value_t = 4)]
    sessions: usize,
    #[arg(long, default_value_t = 261.0)]
    duration_s: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SpectrogramArgs {
    /// Corpus directory with `<stem>.csv` + `<stem>.json` pairs.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Pass band in Hz as `low:high`.
    #[arg(long, default_value = "0.1:0.85", value_parser = parse_band)]
    band: BandConfig,
    #[arg(long, default_value_t = 20)]
    window_s: u32,
    /// Number of frequency bins.
    #[arg(long, default_value_t = 120)]
    m: usize,
    /// Also render a normalized 16-bit PGM per session.
    #[arg(long)]
    pgm: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NormArg {
    Session,
    Patch,
}

impl From<NormArg> for Normalization {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::Session => Normalization::Session,
            NormArg::Patch => Normalization::Patch,
        }
    }
}

#[derive(Debug, Args)]
struct AugmentArgs {
    /// Directory of `.rvs` files.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "session")]
    normalization: NormArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TaskArg {
    Binary,
    Three,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Binary => Task::Binary,
            TaskArg::Three => Task::ThreeClass,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelArg {
    Cnn,
    Nn1,
    Nn2,
    Nn3,
}

impl From<ModelArg> for ModelVariant {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Cnn => ModelVariant::Cnn,
            ModelArg::Nn1 => ModelVariant::Nn1,
            ModelArg::Nn2 => ModelVariant::Nn2,
            ModelArg::Nn3 => ModelVariant::Nn3,
        }
    }
}

#[derive(Debug, Args)]
struct LabelArgs {
    /// Corpus directory; scores are read from the session manifests.
    #[arg(long)]
    input: PathBuf,
    /// Labels JSON to write.
    #[arg(long)]
    out: PathBuf,
    /// Patch directory whose index gets the labels attached.
    #[arg(long)]
    patches: Option<PathBuf>,
    /// Task whose class counts are logged. Both label sets are always written.
    #[arg(long, value_enum, default_value = "three")]
    task: TaskArg,
}

/// Settings shared by training commands. Defaults are the reference
/// hyperparameters.
#[derive(Debug, Args)]
struct RunConfig {
    /// Patch directory produced by `augment`.
    #[arg(long)]
    patches: PathBuf,
    /// Labels JSON produced by `label`.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, value_enum, default_value = "binary")]
    task: TaskArg,
    #[arg(long, value_enum, default_value = "cnn")]
    model: ModelArg,
    #[arg(long, default_value_t = 0.5)]
    lr: f64,
    #[arg(long, default_value_t = 50)]
    batch: usize,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl RunConfig {
    fn train_config(&self) -> Result<TrainConfig> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)).into());
        }
        if self.batch == 0 {
            return Err(Error::Config("batch size must be positive".into()).into());
        }
        Ok(TrainConfig { lr: self.lr, batch_size: self.batch, epochs: self.epochs, seed: self.seed })
    }

    fn load(&self) -> Result<(ModelVariant, breath_stress::eval::Dataset)> {
        let variant = ModelVariant::from(self.model);
        let labels = LabelsFile::read(&self.labels)?;
        let dataset = load_dataset(&self.patches, &labels, self.task.into(), variant.input_side())?;
        log::info!(
            "{} patches from {} participants, class counts {:?}",
            dataset.examples.len(),
            dataset.participants().len(),
            dataset.class_counts()
        );
        Ok((variant, dataset))
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunConfig,
    /// Output directory for `model.json` and `loss.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct LosoArgs {
    #[command(flatten)]
    run: RunConfig,
    /// Report directory.
    #[arg(long)]
    out: PathBuf,
    /// Train folds concurrently. Results are identical to a sequential run.
    #[arg(long)]
    parallel_folds: bool,
    /// Also render the pooled confusion matrix as PGM.
    #[arg(long)]
    pgm: bool,
    /// Keep each fold's trained model as `model_fold_XX.json`.
    #[arg(long)]
    save_models: bool,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Trained model JSON.
    #[arg(long)]
    model_file: PathBuf,
    /// A patch or session `.rvs` file.
    #[arg(long)]
    input: PathBuf,
    /// Expected task; an error if the model was trained for the other one.
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    /// Expected architecture; an error on mismatch.
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    #[arg(long, value_enum, default_value = "session")]
    normalization: NormArg,
}

fn parse_band(s: &str) -> std::result::Result<BandConfig, String> {
    let (lo, hi) = s.split_once(':').ok_or("expected LOW:HIGH")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("low edge: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("high edge: {e}"))?;
    BandConfig::new(lo, hi).map_err(|e| e.to_string())
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let config = SynthConfig {
        n_participants: a.participants,
        sessions_per_participant: a.sessions,
        duration_s: a.duration_s,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let truth = generate_dataset(&config, &a.out)?;
    println!("wrote {} sessions to {}", truth.sessions.len(), a.out.display());
    Ok(())
}

fn cmd_spectrogram(a: &SpectrogramArgs) -> Result<()> {
    let config = SpectrogramConfig { band: a.band, m: a.m, window_s: a.window_s, ..SpectrogramConfig::default() };
    config.validate()?;
    let written = spectrogram_dir(&a.input, &a.out, &config, a.pgm)?;
    println!("wrote {} spectrograms to {}", written.len(), a.out.display());
    Ok(())
}

fn cmd_augment(a: &AugmentArgs) -> Result<()> {
    let summary = augment_dir(&a.input, &a.out, a.normalization.into())?;
    println!(
        "{} patches written to {}, {} sessions skipped",
        summary.index.patches.len(),
        a.out.display(),
        summary.skipped.len()
    );
    Ok(())
}

fn cmd_label(a: &LabelArgs) -> Result<()> {
    let records = vas_records(&a.input)?;
    let labels = LabelsFile::from_records(&records)?;
    labels.write(&a.out)?;
    let task = Task::from(a.task);
    let mut counts = vec![0usize; task.n_classes()];
    for s in &labels.sessions {
        let label = breath_stress::labeling::StressLabel::from_three_class(s.three_class);
        counts[label.class_index(task)] += 1;
    }
    if let Some(dir) = &a.patches {
        let mut index = PatchIndex::read(dir)?;
        index.annotate(&labels)?;
        index.write(dir)?;
    }
    println!(
        "labelled {} sessions, centers {:?}, {:?} counts {:?}",
        labels.sessions.len(),
        labels.centers,
        task,
        counts
    );
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let config = a.run.train_config()?;
    let (variant, dataset) = a.run.load()?;
    let examples: Vec<&LabeledExample> = dataset.examples.iter().collect();
    let outcome = train_model(&variant.arch(dataset.task), &examples, &config)?;

    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    outcome.model.write(&a.out.join("model.json"))?;
    let mut log = String::from("epoch,loss\n");
    for (i, loss) in outcome.epoch_losses.iter().enumerate() {
        log.push_str(&format!("{},{loss}\n", i + 1));
    }
    write_file(&a.out.join("loss.csv"), &log)?;
    println!(
        "trained {variant} on {} patches, final loss {}",
        examples.len(),
        outcome.epoch_losses.last().map_or("n/a".to_string(), |l| format!("{l:.6}"))
    );
    Ok(())
}

fn cmd_loso(a: &LosoArgs) -> Result<()> {
    let config = a.run.train_config()?;
    let (variant, dataset) = a.run.load()?;
    let outcome = run_loso(&dataset, variant, &config, a.parallel_folds)?;
    let report = &outcome.report;
    report.write_dir(&a.out, a.pgm)?;
    if a.save_models {
        for (fold, model) in report.folds.iter().zip(&outcome.models) {
            model.write(&a.out.join(format!("model_fold_{:02}.json", fold.fold_id)))?;
        }
    }
    for f in &report.folds {
        println!(
            "fold {:02} test {}: accuracy {:.4} macro-F1 {:.4}",
            f.fold_id, f.test_participant, f.metrics.accuracy, f.metrics.macro_f1
        );
    }
    println!(
        "{variant} {:?}: accuracy {:.4} ± {:.4}, macro-F1 {:.4} ± {:.4}",
        report.task, report.mean_accuracy, report.sd_accuracy, report.mean_macro_f1, report.sd_macro_f1
    );
    Ok(())
}

fn task_key(task: Task) -> &'static str {
    match task {
        Task::Binary => "binary",
        Task::ThreeClass => "three_class",
    }
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let model = NetworkModel::read(&a.model_file)?;
    let task = model.task();
    let variant = model.arch.variant()?;
    if let Some(expected) = a.task.map(Task::from) {
        if expected != task {
            return Err(Error::Config(format!("model was trained for {task:?}, {expected:?} requested")).into());
        }
    }
    if let Some(expected) = a.model.map(ModelVariant::from) {
        if expected != variant {
            return Err(Error::Config(format!("model is {variant}, {expected} requested")).into());
        }
    }
    let rvs = read_rvs(&a.input)?;
    let prediction = predict_rvs(&model, &rvs, a.normalization.into())?;

    let names = task.class_names();
    let key = task_key(task);
    let mut out = serde_json::Map::new();
    out.insert(key.into(), names[prediction.class].into());
    if let [single] = prediction.patches.as_slice() {
        out.insert("scores".into(), serde_json::to_value(&single.scores)?);
    } else {
        out.insert("votes".into(), serde_json::to_value(&prediction.votes)?);
        let patches: Vec<serde_json::Value> = prediction
            .patches
            .iter()
            .map(|p| {
                let mut entry = serde_json::Map::new();
                entry.insert("origin_col".into(), p.origin_col.into());
                entry.insert(key.into(), names[p.class].into());
                entry.insert("scores".into(), serde_json::to_value(&p.scores).expect("finite scores"));
                serde_json::Value::Object(entry)
            })
            .collect();
        out.insert("patches".into(), patches.into());
    }
    println!("{}", serde_json::to_string(&serde_json::Value::Object(out))?);
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Configuration problems exit with 2, like usage errors; everything else with 1.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Spectrogram(a) => cmd_spectrogram(a),
        Command::Augment(a) => cmd_augment(a),
        Command::Label(a) => cmd_label(a),
        Command::Train(a) => cmd_train(a),
        Command::Loso(a) => cmd_loso(a),
        Command::Predict(a) => cmd_predict(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
