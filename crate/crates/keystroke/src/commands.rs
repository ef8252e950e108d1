//! Command-line interface: argument definitions and the five subcommands.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, CommandFactory, Parser, Subcommand, ValueEnum};
use keystroke_core::labels::{class_weights_partial, DatasetStats, Window};
use keystroke_core::nn::{ModelConfig, ModelParams};
use keystroke_core::stream::{latency_stats, LatencyStats, StreamState};
use keystroke_core::synth::{
    generate_corpus, generate_session, CorpusOptions, HandKinematicModel, KeyboardLayout, TypingScript, PANGRAMS,
};
use keystroke_core::train::{
    evaluate_loss, make_folds, prepare_windows, train_model_with_callback, EpochRecord, LossKind, TrainConfig,
    WindowOptions,
};
use keystroke_core::FrameLandmarks;

use crate::checkpoint::{load_checkpoint_for, save_checkpoint};
use crate::config::{merge_config_args, render_config};
use crate::corpus::{write_corpus, Dataset, LabeledSession, Manifest};
use crate::error::{Error, Result};
use crate::evaluate::{
    evaluate_sessions, write_confusion_csv, write_metrics_csv, write_nld_csv, write_transcripts_csv, Evaluation,
    FramePredictor, ModelPredictor, OraclePredictor,
};
use crate::live::{format_latency, run_stream, FrameSource, StdClock, StreamOptions, StreamReport};

#[derive(Debug, Clone, Parser)]
#[command(name = "keystroke", version, about = "Keystroke identification from hand landmarks")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Seed for every random choice of the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Flat key=value file of flag values; command-line flags win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generate a synthetic typing corpus.
    #[command(args_override_self = true)]
    Synth(SynthArgs),
    /// Cross-validated training on a dataset directory.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Frame metrics and text NLD of a checkpoint on a dataset.
    #[command(args_override_self = true)]
    Eval(EvalArgs),
    /// Frame-by-frame inference over a CSV file or a socket.
    #[command(args_override_self = true)]
    Stream(StreamArgs),
    /// Per-frame latency of streaming inference.
    #[command(args_override_self = true)]
    Bench(BenchArgs),
}

fn positive_f64(s: &str) -> std::result::Result<f64, String> {
    match s.trim().parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("must be positive, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn non_negative_f64(s: &str) -> std::result::Result<f64, String> {
    match s.trim().parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("must be non-negative, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn dropout_rate(s: &str) -> std::result::Result<f64, String> {
    match s.trim().parse::<f64>() {
        Ok(v) if (0.0..1.0).contains(&v) => Ok(v),
        Ok(v) => Err(format!("must be in [0, 1), got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn positive_usize(s: &str) -> std::result::Result<usize, String> {
    match s.trim().parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 32, value_parser = positive_usize)]
    pub conv1_channels: usize,
    #[arg(long, default_value_t = 64, value_parser = positive_usize)]
    pub conv2_channels: usize,
    #[arg(long, default_value_t = 128, value_parser = positive_usize)]
    pub gru_hidden: usize,
    #[arg(long, default_value_t = 64, value_parser = positive_usize)]
    pub fc_hidden: usize,
    #[arg(long, default_value_t = 0.2, value_parser = dropout_rate)]
    pub dropout: f64,
    /// Training window length in frames.
    #[arg(long, default_value_t = 128, value_parser = positive_usize)]
    pub window: usize,
}

impl ModelArgs {
    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            conv1_channels: self.conv1_channels,
            conv2_channels: self.conv2_channels,
            gru_hidden: self.gru_hidden,
            fc_hidden: self.fc_hidden,
            dropout: self.dropout,
            window: self.window,
            ..ModelConfig::default()
        }
    }

    fn pairs(&self) -> Vec<(String, String)> {
        vec![
            ("conv1-channels".into(), self.conv1_channels.to_string()),
            ("conv2-channels".into(), self.conv2_channels.to_string()),
            ("gru-hidden".into(), self.gru_hidden.to_string()),
            ("fc-hidden".into(), self.fc_hidden.to_string()),
            ("dropout".into(), self.dropout.to_string()),
            ("window".into(), self.window.to_string()),
        ]
    }
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Comma-separated texts: `pangrams`, `pangrams:A..B`, `@FILE` (one text
    /// per line) or literal lowercase text.
    #[arg(long, value_delimiter = ',', default_value = "pangrams")]
    pub text: Vec<String>,
    /// Comma-separated typing speeds.
    #[arg(long, value_delimiter = ',', default_value = "40", value_parser = positive_f64)]
    pub wpm: Vec<f64>,
    /// Sessions per (text, wpm) pair, seeded seed, seed+1, ...
    #[arg(long, default_value_t = 1, value_parser = positive_usize)]
    pub repeats: usize,
    /// Per-coordinate Gaussian jitter.
    #[arg(long, default_value_t = 0.0015, value_parser = non_negative_f64)]
    pub noise: f64,
    /// Step size of the shared random-walk drift.
    #[arg(long, default_value_t = 0.0005, value_parser = non_negative_f64)]
    pub drift: f64,
    #[arg(long, default_value_t = 30.0, value_parser = positive_f64)]
    pub fps: f64,
    #[arg(long, default_value_t = 100)]
    pub press_ms: u64,
    /// Cycle each text for this long instead of typing it once.
    #[arg(long)]
    pub duration_ms: Option<u64>,
    /// Blend size of the exported label vectors.
    #[arg(long, default_value_t = 3)]
    pub smoothing: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Mse,
    Wce,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Dataset directory written by `synth`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Train only this fold.
    #[arg(long)]
    pub fold: Option<usize>,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64, value_parser = positive_usize)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.01, value_parser = positive_f64)]
    pub lr: f64,
    #[arg(long, default_value_t = 64, value_parser = positive_usize)]
    pub step: usize,
    #[arg(long, default_value_t = 3)]
    pub smoothing: usize,
    #[arg(long, value_enum, default_value_t = LossArg::Mse)]
    pub loss: LossArg,
    /// Add one randomly transformed copy of every training recording.
    #[arg(long, num_args = 0..=1, default_value_t = false, default_missing_value = "true", action = ArgAction::Set)]
    pub augment: bool,
    #[arg(long, default_value_t = 2, value_parser = positive_usize)]
    pub debounce: usize,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, required_unless_present = "oracle")]
    pub checkpoint: Option<PathBuf>,
    /// Score the ground truth itself instead of a model.
    #[arg(long, num_args = 0..=1, default_value_t = false, default_missing_value = "true", action = ArgAction::Set)]
    pub oracle: bool,
    #[arg(long, default_value_t = 2, value_parser = positive_usize)]
    pub debounce: usize,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Clone, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["input", "listen"])))]
pub struct StreamArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Landmark CSV file.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Address to accept one binary frame connection on.
    #[arg(long)]
    pub listen: Option<String>,
    /// Maximum ingestion rate in frames per second.
    #[arg(long, value_parser = positive_f64)]
    pub fps_cap: Option<f64>,
    #[arg(long, default_value_t = 2, value_parser = positive_usize)]
    pub debounce: usize,
    /// Capacity of the frame queue between reader and model.
    #[arg(long, default_value_t = 64, value_parser = positive_usize)]
    pub queue: usize,
    /// Also write per-frame probabilities to this CSV.
    #[arg(long)]
    pub probs: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Benchmark these weights instead of a seeded initialization.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000, value_parser = positive_usize)]
    pub frames: usize,
    #[arg(long, default_value_t = 2, value_parser = positive_usize)]
    pub debounce: usize,
    #[command(flatten)]
    pub model: ModelArgs,
}

/// Parses argv after expanding `--config`.
pub fn parse_args<I, T>(args: I) -> std::result::Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let merged = merge_config_args(&Cli::command(), args)?;
    Cli::try_parse_from(merged)
}

fn out_dir(global: &GlobalArgs, default: &str) -> Result<PathBuf> {
    let dir = global.out.clone().unwrap_or_else(|| PathBuf::from(default));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn csv_file(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

fn expand_texts(specs: &[String]) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for spec in specs {
        let spec = spec.trim();
        if spec == "pangrams" {
            out.extend(PANGRAMS.iter().map(|s| s.to_string()));
        } else if let Some(range) = spec.strip_prefix("pangrams:") {
            let bad = || Error::format("--text", format!("bad pangram range {range:?}"));
            let (a, b) = range.split_once("..").ok_or_else(bad)?;
            let (a, b): (usize, usize) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
            if a >= b || b > PANGRAMS.len() {
                return Err(bad());
            }
            out.extend(PANGRAMS[a..b].iter().map(|s| s.to_string()));
        } else if let Some(path) = spec.strip_prefix('@') {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            out.extend(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string));
        } else if !spec.is_empty() {
            out.push(spec.to_string());
        }
    }
    Ok(out)
}

pub fn cmd_synth(global: &GlobalArgs, args: &SynthArgs) -> Result<Manifest> {
    let texts = expand_texts(&args.text)?;
    let seeds: Vec<u64> = (0..args.repeats as u64).map(|i| global.seed.wrapping_add(i)).collect();
    let options = CorpusOptions {
        fps: args.fps,
        press_ms: args.press_ms,
        duration_ms: args.duration_ms,
        model: HandKinematicModel {
            noise_std: args.noise,
            drift_std: args.drift,
            ..HandKinematicModel::default()
        },
    };
    let sessions = generate_corpus(&texts, &args.wpm, &seeds, &options, &KeyboardLayout::qwerty())?;
    let dir = out_dir(global, "data")?;
    let manifest = write_corpus(&dir, &sessions, args.fps, args.smoothing)?;
    log::info!(
        "wrote {} sessions, {} frames to {}",
        manifest.sessions.len(),
        manifest.total_frames,
        dir.display()
    );
    Ok(manifest)
}

fn train_snapshot(global: &GlobalArgs, args: &TrainArgs, out: &Path) -> String {
    let mut pairs: Vec<(String, String)> = vec![
        ("seed".into(), global.seed.to_string()),
        ("out".into(), out.display().to_string()),
        ("data".into(), args.data.display().to_string()),
        ("folds".into(), args.folds.to_string()),
    ];
    if let Some(f) = args.fold {
        pairs.push(("fold".into(), f.to_string()));
    }
    pairs.extend([
        ("epochs".into(), args.epochs.to_string()),
        ("batch".into(), args.batch.to_string()),
        ("lr".into(), args.lr.to_string()),
        ("step".into(), args.step.to_string()),
        ("smoothing".into(), args.smoothing.to_string()),
        (
            "loss".into(),
            match args.loss {
                LossArg::Mse => "mse",
                LossArg::Wce => "wce",
            }
            .into(),
        ),
        ("augment".into(), args.augment.to_string()),
        ("debounce".into(), args.debounce.to_string()),
    ]);
    pairs.extend(args.model.pairs());
    render_config(&pairs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldSummary {
    pub fold: usize,
    pub best_epoch: Option<usize>,
    pub best_val_loss: f64,
    pub macro_recall: f64,
    pub macro_precision: f64,
    pub macro_f1: f64,
    pub mean_nld: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub dir: PathBuf,
    pub folds: Vec<FoldSummary>,
}

fn window_options(args: &TrainArgs) -> WindowOptions {
    WindowOptions {
        size: args.model.window,
        step: args.step,
        smoothing: args.smoothing,
        ..WindowOptions::default()
    }
}

fn windows_of(sessions: &[&LabeledSession], opts: &WindowOptions, augment: Option<u64>) -> Result<Vec<Window>> {
    let mut out = Vec::new();
    for (i, s) in sessions.iter().enumerate() {
        let rec = s.recording();
        out.extend(prepare_windows(&rec, opts)?);
        if let Some(seed) = augment {
            let aug = WindowOptions {
                augment_seed: Some(seed.wrapping_add(i as u64)),
                ..*opts
            };
            out.extend(prepare_windows(&rec, &aug)?);
        }
    }
    Ok(out)
}

fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(csv_file(path)?);
    w.write_record(["epoch", "train_loss", "val_loss", "lr"])?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.val_loss.to_string(),
            r.lr.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn cmd_train(global: &GlobalArgs, args: &TrainArgs) -> Result<TrainReport> {
    let config = args.model.config();
    config.validate()?;
    let dataset = Dataset::open(&args.data)?;
    let sessions = dataset.load_all()?;
    if sessions.is_empty() {
        return Err(keystroke_core::Error::EmptyDataset.into());
    }
    let ids: Vec<String> = sessions.iter().map(|s| s.id.clone()).collect();
    let plan = make_folds(&ids, args.folds, global.seed)?;
    if let Some(f) = args.fold.filter(|&f| f >= plan.k()) {
        return Err(keystroke_core::Error::InvalidConfig(format!("fold {f} out of range for {} folds", plan.k())).into());
    }
    let dir = out_dir(global, "run")?;
    write_file(&dir.join("config.txt"), train_snapshot(global, args, &dir).as_bytes())?;
    {
        let path = dir.join("folds.csv");
        let mut w = csv::Writer::from_writer(csv_file(&path)?);
        w.write_record(["fold", "recording"])?;
        for fold in 0..plan.k() {
            for id in plan.validation(fold) {
                w.write_record([fold.to_string(), id.clone()])?;
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }

    let opts = window_options(args);
    let mut summaries = Vec::new();
    for fold in (0..plan.k()).filter(|f| args.fold.is_none_or(|only| only == *f)) {
        let val_ids = plan.validation(fold);
        let (val_sessions, train_sessions): (Vec<&LabeledSession>, Vec<&LabeledSession>) =
            sessions.iter().partition(|s| val_ids.contains(&s.id));
        let augment = args.augment.then_some(global.seed ^ 0xa0a0_0000 ^ fold as u64);
        let train = windows_of(&train_sessions, &opts, augment)?;
        let val = windows_of(&val_sessions, &opts, None)?;
        let loss = match args.loss {
            LossArg::Mse => LossKind::Mse,
            LossArg::Wce => {
                let mut stats = DatasetStats::default();
                for s in &train_sessions {
                    stats.add(&s.labels);
                }
                LossKind::WeightedCrossEntropy(class_weights_partial(&stats))
            }
        };
        let hyper = TrainConfig {
            lr: args.lr,
            batch_size: args.batch,
            epochs: args.epochs,
            loss,
            seed: global.seed,
        };
        log::info!("fold {fold}: {} training windows, {} validation windows", train.len(), val.len());
        let outcome = train_model_with_callback(&train, &val, &config, &hyper, |r| {
            log::info!(
                "fold {fold} epoch {}: train {:.6} val {:.6} lr {}",
                r.epoch,
                r.train_loss,
                r.val_loss,
                r.lr
            );
        })?;
        let fold_dir = dir.join(format!("fold{fold}"));
        fs::create_dir_all(&fold_dir).map_err(|e| Error::io(&fold_dir, e))?;
        write_history(&fold_dir.join("history.csv"), &outcome.history)?;
        save_checkpoint(&fold_dir.join("best.ckpt"), &config, &outcome.best)?;

        let best_val_loss = evaluate_loss(&outcome.best, &config, &val, &hyper.loss, args.batch)?;
        let owned: Vec<LabeledSession> = val_sessions.into_iter().cloned().collect();
        let predictor = ModelPredictor {
            params: &outcome.best,
            config,
        };
        let eval = evaluate_sessions(&owned, &predictor, args.debounce)?;
        summaries.push(FoldSummary {
            fold,
            best_epoch: outcome.best_epoch,
            best_val_loss,
            macro_recall: eval.metrics.macro_recall,
            macro_precision: eval.metrics.macro_precision,
            macro_f1: eval.metrics.macro_f1,
            mean_nld: eval.mean_nld(),
        });
    }
    write_summary(&dir.join("summary.csv"), &summaries)?;
    Ok(TrainReport { dir, folds: summaries })
}

fn write_summary(path: &Path, folds: &[FoldSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(csv_file(path)?);
    w.write_record([
        "fold",
        "best_epoch",
        "best_val_loss",
        "macro_recall",
        "macro_precision",
        "macro_f1",
        "mean_nld",
    ])?;
    let row = |f: &FoldSummary| {
        [
            f.best_val_loss,
            f.macro_recall,
            f.macro_precision,
            f.macro_f1,
            f.mean_nld,
        ]
    };
    for f in folds {
        let mut rec = vec![f.fold.to_string(), f.best_epoch.map(|e| e.to_string()).unwrap_or_default()];
        rec.extend(row(f).iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    if !folds.is_empty() {
        let n = folds.len() as f64;
        let mut mean = [0.0; 5];
        for f in folds {
            for (m, v) in mean.iter_mut().zip(row(f)) {
                *m += v / n;
            }
        }
        let mut rec = vec!["mean".to_string(), String::new()];
        rec.extend(mean.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn load_params(path: &Path, model: &ModelArgs) -> Result<(ModelConfig, ModelParams)> {
    let config = model.config();
    config.validate()?;
    Ok((config, load_checkpoint_for(path, &config)?))
}

pub fn cmd_eval(global: &GlobalArgs, args: &EvalArgs) -> Result<Evaluation> {
    let dataset = Dataset::open(&args.data)?;
    let loaded = match (&args.checkpoint, args.oracle) {
        (Some(path), false) => Some(load_params(path, &args.model)?),
        _ => None,
    };
    let sessions = dataset.load_all()?;
    if sessions.is_empty() {
        return Err(keystroke_core::Error::EmptyDataset.into());
    }
    let eval = match &loaded {
        Some((config, params)) => {
            let predictor = ModelPredictor { params, config: *config };
            evaluate_sessions(&sessions, &predictor as &dyn FramePredictor, args.debounce)?
        }
        None => evaluate_sessions(&sessions, &OraclePredictor, args.debounce)?,
    };
    let dir = out_dir(global, "eval")?;
    write_metrics_csv(csv_file(&dir.join("metrics.csv"))?, &eval.metrics, &eval.confusion)?;
    write_confusion_csv(csv_file(&dir.join("confusion.csv"))?, &eval.confusion)?;
    write_nld_csv(csv_file(&dir.join("nld.csv"))?, &eval)?;
    write_transcripts_csv(csv_file(&dir.join("transcripts.csv"))?, &eval)?;
    for w in &eval.metrics.warnings {
        log::warn!(
            "class {} left out of macro averages (no true frames: {}, never predicted: {})",
            w.class,
            w.empty_row,
            w.empty_col
        );
    }
    log::info!(
        "macro recall {:.4}, mean NLD {:.4}",
        eval.metrics.macro_recall,
        eval.mean_nld()
    );
    Ok(eval)
}

/// Runs the stream subcommand; events go to `events_out`, the latency report
/// to `report_out`.
pub fn cmd_stream(
    args: &StreamArgs,
    events_out: &mut dyn Write,
    report_out: &mut dyn Write,
) -> Result<StreamReport> {
    let (config, params) = load_params(&args.checkpoint, &args.model)?;
    let source = match (&args.input, &args.listen) {
        (Some(path), _) => FrameSource::Csv(path.clone()),
        (None, Some(addr)) => {
            let listener = TcpListener::bind(addr).map_err(|e| Error::SourceUnavailable(format!("{addr}: {e}")))?;
            let local = listener.local_addr().map_err(|e| Error::SourceUnavailable(e.to_string()))?;
            writeln!(report_out, "listening on {local}").map_err(|e| Error::io("<stderr>", e))?;
            FrameSource::Socket(listener)
        }
        (None, None) => return Err(Error::SourceUnavailable("no --input or --listen given".into())),
    };
    stream_from(args, &config, &params, source, events_out, report_out)
}

/// [`cmd_stream`] with an already opened source.
pub fn stream_from(
    args: &StreamArgs,
    config: &ModelConfig,
    params: &ModelParams,
    source: FrameSource,
    events_out: &mut dyn Write,
    report_out: &mut dyn Write,
) -> Result<StreamReport> {
    let options = StreamOptions {
        debounce: args.debounce,
        queue: args.queue,
        fps_cap: args.fps_cap,
    };
    let report = run_stream(params, config, source, &options, events_out, args.probs.as_deref())?;
    let line = match &report.latency {
        Some(stats) => format!("{} events={}", format_latency(stats), report.events.len()),
        None => "frames=0 events=0".to_string(),
    };
    writeln!(report_out, "{line}").map_err(|e| Error::io("<stderr>", e))?;
    Ok(report)
}

/// Synthetic frames for benchmarking: pangrams typed at 40 wpm.
pub fn bench_frames(count: usize, seed: u64) -> Result<Vec<FrameLandmarks>> {
    let text = PANGRAMS.join(" ");
    let script = TypingScript {
        duration_ms: Some((count as u64 * 1000).div_ceil(30) + 1000),
        ..TypingScript::new(&text, 40.0, seed)
    };
    let session = generate_session(&script, &HandKinematicModel::default(), &KeyboardLayout::qwerty())?;
    let mut frames = session.frames;
    frames.truncate(count);
    Ok(frames)
}

pub const BENCH_HEADER: &str = "frames,mean_us,p95_us,max_us,fps";

pub fn bench_row(stats: &LatencyStats) -> String {
    format!(
        "{},{:.3},{:.3},{:.3},{:.3}",
        stats.frames, stats.mean_us, stats.p95_us, stats.max_us, stats.fps
    )
}

pub fn cmd_bench(global: &GlobalArgs, args: &BenchArgs, table_out: &mut dyn Write) -> Result<LatencyStats> {
    let (config, params) = match &args.checkpoint {
        Some(path) => load_params(path, &args.model)?,
        None => {
            let config = args.model.config();
            config.validate()?;
            (config, ModelParams::init(&config, global.seed))
        }
    };
    let frames = bench_frames(args.frames, global.seed)?;
    let mut state = StreamState::new(&params, &config, args.debounce)?;
    let mut clock = StdClock::new();
    for f in &frames {
        state.push_frame(f, &mut clock);
    }
    state.finish();
    let stats = latency_stats(state.latencies())?;
    let table = format!("{BENCH_HEADER}\n{}\n", bench_row(&stats));
    table_out.write_all(table.as_bytes()).map_err(|e| Error::io("<stdout>", e))?;
    if let Some(dir) = &global.out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join("bench.csv"), table.as_bytes())?;
    }
    Ok(stats)
}

/// Dispatches a parsed command line, using the process's stdout and stderr.
pub fn run(cli: &Cli) -> Result<()> {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    match &cli.command {
        Command::Synth(a) => cmd_synth(&cli.global, a).map(|_| ()),
        Command::Train(a) => cmd_train(&cli.global, a).map(|_| ()),
        Command::Eval(a) => cmd_eval(&cli.global, a).map(|_| ()),
        Command::Stream(a) => cmd_stream(a, &mut stdout.lock(), &mut stderr.lock()).map(|_| ()),
        Command::Bench(a) => cmd_bench(&cli.global, a, &mut stdout.lock()).map(|_| ()),
    }
}
