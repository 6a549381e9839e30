//! `adaptts` command-line front end.
//!
//! Failures print one line, `error[<category>]: <message>`, to stderr and
//! exit with status 1. Usage errors are reported by the argument parser and
//! exit with status 2.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adaptts::config::{Config, Mode, ModelKind, PlanVariant, RunConfig, Task};
use adaptts::dataio::synth::{generate_corpus, CorpusSpec, VoiceProfile};
use adaptts::dataio::wav::write_wav;
use adaptts::dataio::{load_manifest, Dataset};
use adaptts::eval::{
    ctc_train, evaluate, load_mushra_pairs, load_utterances, validate_against_mushra, ConvRecognizer, CtcTrainOptions,
    EvaluateOptions, ExternalScorer, Metric, RecognizerConfig,
};
use adaptts::training::checkpoint::Checkpoint;
use adaptts::training::metrics::MetricsLog;
use adaptts::training::{epoch_summaries, Trainer, LAST_CHECKPOINT};
use clap::{Args, Parser, Subcommand};

/// Environment variable naming the directory searched for config files.
const CONFIG_DIR_ENV: &str = "ADAPTTS_CONFIG_DIR";
const DEFAULT_CONFIG_NAME: &str = "default.toml";

#[derive(Parser)]
#[command(name = "adaptts", version, about = "Lightweight adapter-based TTS: training, fine-tuning, synthesis and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the acoustic model and vocoder from scratch.
    TrainBackbone(TrainBackbone),
    /// Adapt a backbone checkpoint to a new language or speaker.
    Finetune(Finetune),
    /// Synthesize one phoneme sequence to a WAV file.
    Synthesize(Synthesize),
    /// Report backbone and adapter parameter counts.
    CountParams(CountParams),
    /// Score a checkpoint's synthesis of a manifest.
    Evaluate(Evaluate),
    /// Train the reference phoneme recognizer with CTC.
    TrainRecognizer(TrainRecognizer),
    /// Check that corpus PSR reproduces listening-test rankings.
    ValidateMushra(ValidateMushra),
    /// Generate a procedural speech-like corpus with a manifest.
    MakeCorpus(MakeCorpus),
}

#[derive(Args)]
struct RunDirArgs {
    /// Parent of timestamped run directories.
    #[arg(long, default_value = "runs")]
    runs_dir: PathBuf,
    /// Exact run directory, instead of a timestamped one under --runs-dir.
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

#[derive(Args)]
struct TrainBackbone {
    /// Config file; relative names are also looked up in $ADAPTTS_CONFIG_DIR.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training manifest, overriding training.manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[command(flatten)]
    dirs: RunDirArgs,
}

#[derive(Args)]
struct Finetune {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// language | speaker
    #[arg(long)]
    task: String,
    /// full | adapters
    #[arg(long)]
    mode: String,
    /// paper_default | vocoder_reduced | full_model
    #[arg(long, default_value = "paper_default")]
    plan: String,
    /// acoustic | vocoder | both
    #[arg(long, default_value = "both")]
    adapt: String,
    #[arg(long)]
    epochs: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    dirs: RunDirArgs,
}

#[derive(Args)]
struct Synthesize {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Space-separated phoneme symbols.
    #[arg(long)]
    text_phonemes: String,
    #[arg(long)]
    speaker: String,
    #[arg(long)]
    language: String,
    #[arg(long)]
    out: PathBuf,
    /// Remove injected adapters and restore the backbone tables first.
    #[arg(long)]
    strip_adapters: bool,
}

#[derive(Args)]
struct CountParams {
    /// Count against this checkpoint's backbone.
    #[arg(long, conflicts_with = "config")]
    checkpoint: Option<PathBuf>,
    /// Or against a freshly built model of this config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Phoneme inventory size when counting from a config.
    #[arg(long, default_value_t = 40)]
    phonemes: usize,
    #[arg(long, default_value = "paper_default")]
    plan: String,
    #[arg(long, default_value = "both")]
    adapt: String,
}

#[derive(Args)]
struct Evaluate {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated: secs, psr, or the metric name of an external scorer.
    #[arg(long, default_value = "secs,psr")]
    metrics: String,
    /// Recognizer file from train-recognizer; required for psr.
    #[arg(long)]
    recognizer: Option<PathBuf>,
    /// External scorer as `metric=command args...`; repeatable.
    #[arg(long)]
    scorer: Vec<String>,
    /// Where to write synthesized audio.
    #[arg(long)]
    audio_dir: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainRecognizer {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
    #[arg(long, default_value_t = 2e-3)]
    lr: f64,
    #[arg(long, default_value_t = 96)]
    hidden: usize,
    #[arg(long, default_value_t = 11)]
    seed: u64,
}

#[derive(Args)]
struct ValidateMushra {
    /// Pairs file (see the eval documentation for the format).
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    recognizer: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MakeCorpus {
    #[arg(long)]
    out: PathBuf,
    /// en | es
    #[arg(long, default_value = "en")]
    language: String,
    /// Voice as `name:f0_hz:formant_scale`; repeatable.
    #[arg(long, required = true)]
    voice: Vec<String>,
    #[arg(long, default_value_t = 8)]
    per_voice: usize,
    #[arg(long, default_value_t = 4)]
    min_phonemes: usize,
    #[arg(long, default_value_t = 8)]
    max_phonemes: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Config whose audio settings to use.
    #[arg(long)]
    config: Option<PathBuf>,
}

struct Failure {
    category: &'static str,
    message: String,
}

impl From<adaptts::Error> for Failure {
    fn from(e: adaptts::Error) -> Self {
        Self {
            category: e.category(),
            message: e.to_string(),
        }
    }
}

fn fail(category: &'static str, message: impl Into<String>) -> Failure {
    Failure {
        category,
        message: message.into(),
    }
}

type CliResult<T> = Result<T, Failure>;

fn io_fail(path: &Path, e: std::io::Error) -> Failure {
    fail("io", format!("{}: {e}", path.display()))
}

/// Finds a config file: as given, then under `$ADAPTTS_CONFIG_DIR`. Without
/// a path, `default.toml` in that directory.
fn resolve_config_path(arg: Option<&Path>) -> CliResult<PathBuf> {
    let env_dir = std::env::var_os(CONFIG_DIR_ENV).map(PathBuf::from);
    let candidates: Vec<PathBuf> = match (arg, &env_dir) {
        (Some(p), Some(dir)) if p.is_relative() => vec![p.to_path_buf(), dir.join(p)],
        (Some(p), _) => vec![p.to_path_buf()],
        (None, Some(dir)) => vec![dir.join(DEFAULT_CONFIG_NAME)],
        (None, None) => {
            return Err(fail(
                "config-not-found",
                format!("no --config given and ${CONFIG_DIR_ENV} is not set"),
            ))
        }
    };
    candidates.iter().find(|p| p.is_file()).cloned().ok_or_else(|| {
        let tried: Vec<String> = candidates.iter().map(|p| p.display().to_string()).collect();
        fail("config-not-found", format!("config file not found (tried {})", tried.join(", ")))
    })
}

fn load_config(arg: Option<&Path>) -> CliResult<Config> {
    Ok(Config::load(&resolve_config_path(arg)?)?)
}

/// Creates `runs_dir/<timestamp>-seed<seed>` (or the explicit run dir).
fn make_run_dir(dirs: &RunDirArgs, seed: u64) -> CliResult<PathBuf> {
    let dir = match &dirs.run_dir {
        Some(d) => d.clone(),
        None => {
            let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
            let base = dirs.runs_dir.join(format!("{stamp}-seed{seed}"));
            let mut dir = base.clone();
            let mut n = 1;
            while dir.exists() {
                n += 1;
                dir = PathBuf::from(format!("{}-{n}", base.display()));
            }
            dir
        }
    };
    std::fs::create_dir_all(&dir).map_err(|e| io_fail(&dir, e))?;
    Ok(dir)
}

/// Writes the fully resolved config and run settings next to the outputs.
fn snapshot(dir: &Path, cfg: &Config, run: &RunConfig, inputs: serde_json::Value) -> CliResult<()> {
    let cfg_path = dir.join("config.toml");
    std::fs::write(&cfg_path, cfg.to_toml_string()).map_err(|e| io_fail(&cfg_path, e))?;
    let run_path = dir.join("run.json");
    let doc = serde_json::json!({ "run": run, "inputs": inputs });
    std::fs::write(&run_path, serde_json::to_string_pretty(&doc).expect("json")).map_err(|e| io_fail(&run_path, e))?;
    Ok(())
}

fn parse<T: std::str::FromStr<Err = adaptts::Error>>(s: &str) -> CliResult<T> {
    s.parse::<T>().map_err(|e| fail("usage", e.to_string()))
}

fn train_backbone(a: TrainBackbone) -> CliResult<()> {
    let (mut trainer, cfg) = match &a.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let t = Trainer::resume(&ckpt)?;
            let cfg = ckpt.config.clone();
            (Some(t), cfg)
        }
        None => (None, load_config(a.config.as_deref())?),
    };
    let mut cfg = cfg;
    if let Some(m) = &a.manifest {
        cfg.training.manifest = Some(m.clone());
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(s) = a.steps {
        cfg.training.steps = s;
    }
    cfg.validate()?;
    let manifest_path = cfg
        .training
        .manifest
        .clone()
        .ok_or_else(|| fail("config-invalid", "no training manifest: set training.manifest or pass --manifest"))?;
    let manifest = load_manifest(&manifest_path, &cfg.audio)?;
    let vocab = match &trainer {
        Some(t) => t.model.vocab.clone(),
        None => manifest.vocab(),
    };
    let data = Dataset::from_manifest(&manifest, &vocab, &cfg.audio, None)?;
    let mut trainer = match trainer.take() {
        Some(mut t) => {
            t.run.steps = cfg.training.steps;
            t
        }
        None => Trainer::backbone(&cfg, &vocab, RunConfig::backbone(&cfg))?,
    };
    let dir = make_run_dir(&a.dirs, trainer.run.seed)?;
    snapshot(
        &dir,
        trainer.config(),
        &trainer.run,
        serde_json::json!({ "manifest": manifest_path, "resume": a.resume }),
    )?;
    let mut log = MetricsLog::create(&dir.join("metrics.tsv"))?;
    let ckpt_dir = dir.join("checkpoints");
    let first = trainer.step;
    let history = trainer.run_until(&data, cfg.training.steps, &mut log, Some(&ckpt_dir))?;
    if let Some(last) = history.last() {
        println!("steps {}..{}: final total loss {}", first, trainer.step, last.total);
    }
    println!("run directory: {}", dir.display());
    println!("checkpoint: {}", ckpt_dir.join(LAST_CHECKPOINT).display());
    Ok(())
}

fn finetune(a: Finetune) -> CliResult<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let mut cfg = ckpt.config.clone();
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.training.finetune_epochs = e;
    }
    let task = match parse::<Task>(&a.task)? {
        Task::Backbone => return Err(fail("usage", "fine-tuning task must be `language` or `speaker`")),
        t => t,
    };
    let mut run = RunConfig::finetune(&cfg, task, parse::<Mode>(&a.mode)?, parse::<PlanVariant>(&a.plan)?);
    run.adapt = parse::<ModelKind>(&a.adapt)?;
    let manifest = load_manifest(&a.manifest, &cfg.audio)?;
    let mut trainer = Trainer::finetune(&ckpt, &manifest.vocab(), run)?;
    let data = Dataset::from_manifest(&manifest, &trainer.model.vocab, &cfg.audio, None)?;
    let dir = make_run_dir(&a.dirs, trainer.run.seed)?;
    snapshot(
        &dir,
        trainer.config(),
        &trainer.run,
        serde_json::json!({ "manifest": a.manifest, "checkpoint": a.checkpoint }),
    )?;
    let counts = trainer.param_counts()?;
    println!(
        "trainable {} / frozen {} (backbone {}, ratio {:.4})",
        counts.trainable, counts.frozen, counts.backbone, counts.ratio
    );
    let steps = trainer.steps_for_epochs(trainer.run.epochs as u64, &data);
    let mut log = MetricsLog::create(&dir.join("metrics.tsv"))?;
    let ckpt_dir = dir.join("checkpoints");
    let history = trainer.run_until(&data, steps, &mut log, Some(&ckpt_dir))?;
    for s in epoch_summaries(&history, 0, |step| trainer.epoch_of(step, &data)) {
        println!("epoch {}: mean total loss {} over {} steps", s.epoch, s.mean_total, s.steps);
    }
    println!("run directory: {}", dir.display());
    println!("checkpoint: {}", ckpt_dir.join(LAST_CHECKPOINT).display());
    Ok(())
}

fn synthesize(a: Synthesize) -> CliResult<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let mut model = ckpt.model()?;
    if a.strip_adapters {
        model.strip_adapters()?;
    }
    let phonemes: Vec<&str> = a.text_phonemes.split_whitespace().collect();
    if phonemes.is_empty() {
        return Err(fail("usage", "--text-phonemes is empty"));
    }
    let wav = model.synthesize(&phonemes, &a.speaker, &a.language)?;
    write_wav(&a.out, &wav, model.cfg.audio.sample_rate)?;
    println!("{} samples written to {}", wav.len(), a.out.display());
    Ok(())
}

fn count_params(a: CountParams) -> CliResult<()> {
    let mut model = match (&a.checkpoint, &a.config) {
        (Some(p), _) => Checkpoint::load(p)?.model()?,
        (None, c) => {
            let cfg = load_config(c.as_deref())?;
            let vocab = adaptts::dataio::Vocab {
                phonemes: (0..a.phonemes).map(|i| format!("p{i}")).collect(),
                speakers: vec!["S1".into()],
                languages: vec!["L1".into()],
            };
            adaptts::model::TtsModel::new(&cfg, &vocab, cfg.seed)?
        }
    };
    model.strip_adapters()?;
    let budget = model.parameter_budget(parse::<ModelKind>(&a.adapt)?, parse::<PlanVariant>(&a.plan)?)?;
    println!("{}", serde_json::to_string_pretty(&budget).expect("json"));
    Ok(())
}

fn write_json(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_fail(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_fail(path, e))
}

fn evaluate_cmd(a: Evaluate) -> CliResult<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let model = ckpt.model()?;
    let manifest = load_manifest(&a.manifest, &model.cfg.audio)?;
    let recognizer = a.recognizer.as_deref().map(ConvRecognizer::load).transpose()?;
    let scorers = a.scorer.iter().map(|s| ExternalScorer::parse(s)).collect::<Result<Vec<_>, _>>()?;
    let opts = EvaluateOptions {
        metrics: Metric::parse_list(&a.metrics)?,
        recognizer: recognizer.as_ref().map(|r| r as &dyn adaptts::eval::PhonemeRecognizer),
        scorers,
        audio_dir: a.audio_dir.clone(),
    };
    let report = evaluate(&model, &manifest, &opts)?;
    write_json(&a.out, &report.to_json())?;
    for (name, agg) in &report.aggregates {
        println!("{name}: {} ± {} over {} utterances", agg.mean, agg.std, agg.count);
    }
    for (name, why) in &report.not_evaluated {
        println!("{name}: not evaluated ({why})");
    }
    println!("report: {}", a.out.display());
    Ok(())
}

fn train_recognizer(a: TrainRecognizer) -> CliResult<()> {
    let audio = match &a.config {
        Some(_) => load_config(a.config.as_deref())?.audio,
        None => adaptts::config::AudioConfig::default(),
    };
    let manifest = load_manifest(&a.manifest, &audio)?;
    let mut inventory = manifest.phonemes.clone();
    inventory.sort();
    let cfg = RecognizerConfig {
        hidden: a.hidden,
        ..RecognizerConfig::default()
    };
    let mut rec = ConvRecognizer::new(inventory.clone(), &audio, &cfg)?;
    let corpus = load_utterances(&manifest, &inventory)?;
    let opts = CtcTrainOptions {
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        seed: a.seed,
    };
    let history = ctc_train(&mut rec, &corpus, &opts)?;
    if let (Some(first), Some(last)) = (history.first(), history.last()) {
        println!("ctc loss: epoch 0 {first}, epoch {} {last}", history.len() - 1);
    }
    rec.save(&a.out)?;
    println!("recognizer: {}", a.out.display());
    Ok(())
}

fn validate_mushra(a: ValidateMushra) -> CliResult<()> {
    let rec = ConvRecognizer::load(&a.recognizer)?;
    let pairs = load_mushra_pairs(&a.pairs, adaptts::eval::PhonemeRecognizer::phonemes(&rec), rec.audio())?;
    let v = validate_against_mushra(&pairs, &rec)?;
    for (x, y) in &v.skipped {
        println!("skipped {x} vs {y}: equal MUSHRA scores");
    }
    println!("accuracy {} over {} pairs", v.accuracy, v.outcomes.len());
    if let Some(out) = &a.out {
        write_json(out, &serde_json::to_string_pretty(&v).expect("json"))?;
    }
    Ok(())
}

fn make_corpus(a: MakeCorpus) -> CliResult<()> {
    let audio = match &a.config {
        Some(_) => load_config(a.config.as_deref())?.audio,
        None => adaptts::config::AudioConfig::default(),
    };
    let voices = a
        .voice
        .iter()
        .map(|v| {
            let f: Vec<&str> = v.split(':').collect();
            let num = |s: &str| s.parse::<f64>().map_err(|_| fail("usage", format!("bad voice `{v}`")));
            match f.as_slice() {
                [name, f0, scale] => Ok(VoiceProfile::new(name, num(f0)?, num(scale)?)),
                _ => Err(fail("usage", format!("voice `{v}` is not name:f0_hz:formant_scale"))),
            }
        })
        .collect::<CliResult<Vec<_>>>()?;
    let spec = CorpusSpec {
        voices,
        language: a.language,
        utterances_per_voice: a.per_voice,
        min_phonemes: a.min_phonemes,
        max_phonemes: a.max_phonemes,
        sample_rate: audio.sample_rate,
        hop: audio.hop_length,
        seed: a.seed,
    };
    let (path, m) = generate_corpus(&spec, &a.out)?;
    println!("{} utterances, manifest: {}", m.entries.len(), path.display());
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::TrainBackbone(a) => train_backbone(a),
        Command::Finetune(a) => finetune(a),
        Command::Synthesize(a) => synthesize(a),
        Command::CountParams(a) => count_params(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::TrainRecognizer(a) => train_recognizer(a),
        Command::ValidateMushra(a) => validate_mushra(a),
        Command::MakeCorpus(a) => make_corpus(a),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let msg = f.message.replace('\n', " ");
            eprintln!("error[{}]: {msg}", f.category);
            ExitCode::FAILURE
        }
    }
}
