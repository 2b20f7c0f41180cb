//! Command-line entry point.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use signdigit_core::augment::{random_augment, AugmentPolicy};
use signdigit_core::dataset::{
    load_dataset_with, stratified_split, SplitSpec, DEFAULT_TEST_FRACTION,
};
use signdigit_core::imaging::{decode_netpbm, encode_netpbm, preprocess};
use signdigit_core::metrics::{confusion, export_report, roc_one_vs_all, summarize};
use signdigit_core::model_io::{load_model, save_model};
use signdigit_core::nn::{NetworkSpec, Parameters};
use signdigit_core::speech::{speak_digit, wav_encode};
use signdigit_core::synthetic::write_glyph_tree;
use signdigit_core::train::{evaluate, fit_with_progress, history_csv, predict, TrainConfig};

use crate::backends;
use crate::config::ServiceConfig;
use crate::server;

#[derive(Debug, Parser)]
#[command(
    name = "signdigit",
    version,
    about = "Hand-sign digit recognition with Bangla speech"
)]
pub struct Cli {
    /// TOML config (defaults to $SIGNDIGIT_CONFIG)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a `<root>/<digit>/*.pgm|ppm` tree
    Train(TrainArgs),
    /// Evaluate a model and write confusion, ROC and summary files
    Eval(EvalArgs),
    /// Classify one image
    Predict(PredictArgs),
    /// Run the HTTP service
    Serve(ServeArgs),
    /// Write augmented variants of one image
    AugmentPreview(PreviewArgs),
    /// Write a procedural glyph dataset
    GenGlyphs(GlyphArgs),
}

fn fraction(s: &str) -> Result<f64, String> {
    let f: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if f > 0.0 && f < 1.0 {
        Ok(f)
    } else {
        Err(format!("{f} is not strictly between 0 and 1"))
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u32).range(1..))]
    pub epochs: u32,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u32).range(1..))]
    pub batch: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random rotation, shear and flip on every epoch
    #[arg(long)]
    pub augment: bool,
    #[arg(long, default_value_t = DEFAULT_TEST_FRACTION, value_parser = fraction)]
    pub test_fraction: f64,
    /// Defaults to `<out>.history.csv`
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Defaults to `<out>.report.json`
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// No per-epoch progress on stderr
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "report")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    pub image: PathBuf,
    /// Also write `<image stem>.wav` next to the image
    #[arg(long)]
    pub speak: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long, value_parser = clap::value_parser!(u16).range(1..))]
    pub port: Option<u16>,
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PreviewArgs {
    pub image: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GlyphArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses `std::env::args` and runs. Usage errors exit 2, failures exit 1.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let config = ServiceConfig::resolve(cli.config.as_deref())?;
    match cli.command {
        Command::Train(a) => train(a, &config),
        Command::Eval(a) => eval(a, &config),
        Command::Predict(a) => predict_one(a, &config),
        Command::Serve(a) => serve(a, config),
        Command::AugmentPreview(a) => augment_preview(a, &config),
        Command::GenGlyphs(a) => {
            let written = write_glyph_tree(&a.out, a.per_class, a.seed)
                .with_context(|| format!("cannot write glyphs under {}", a.out.display()))?;
            println!("wrote {} images to {}", written.len(), a.out.display());
            Ok(())
        }
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

fn read_model(path: &Path) -> anyhow::Result<(NetworkSpec, Parameters)> {
    let file = std::fs::File::open(path)
        .with_context(|| format!("cannot open model {}", path.display()))?;
    load_model(std::io::BufReader::new(file))
        .with_context(|| format!("cannot load model {}", path.display()))
}

fn train(a: TrainArgs, cfg: &ServiceConfig) -> anyhow::Result<()> {
    let manifest = load_dataset_with(&a.data, &cfg.skin)?;
    for s in &manifest.skipped {
        eprintln!("skipped {}: {}", s.path.display(), s.reason);
    }
    let split = stratified_split(
        &manifest,
        &SplitSpec {
            test_fraction: a.test_fraction,
            seed: a.seed,
        },
    )?;
    let train_set = manifest.select(&split.train);
    let test_set = manifest.select(&split.test);
    let config = TrainConfig {
        epochs: a.epochs as usize,
        batch_size: a.batch as usize,
        seed: a.seed,
        augment: a.augment.then(|| AugmentPolicy {
            seed: a.seed,
            ..AugmentPolicy::default()
        }),
        ..TrainConfig::default()
    };
    let spec = NetworkSpec::sign_digits();
    if !a.quiet {
        eprintln!(
            "training on {} images, validating on {}",
            train_set.len(),
            test_set.len()
        );
    }
    let fitted = fit_with_progress(&spec, &train_set, &test_set, &config, |r| {
        if !a.quiet {
            eprintln!(
                "epoch {:>3}  loss {:.4}  acc {:.4}  val_loss {:.4}  val_acc {:.4}",
                r.epoch, r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy
            );
        }
    })?;

    let file = std::fs::File::create(&a.out)
        .with_context(|| format!("cannot create {}", a.out.display()))?;
    save_model(&spec, &fitted.params, std::io::BufWriter::new(file))?;
    let history_path = a.history.unwrap_or_else(|| sibling(&a.out, "history.csv"));
    std::fs::write(&history_path, history_csv(&fitted.history))
        .with_context(|| format!("cannot write {}", history_path.display()))?;

    let eval = evaluate(&spec, &fitted.params, &test_set)?;
    let labels: Vec<usize> = test_set.iter().map(|s| s.label).collect();
    let cm = confusion(&eval.predictions, &labels)?;
    let curves: Vec<_> = (0..10)
        .map(|k| roc_one_vs_all(&eval.probabilities, &labels, k).ok())
        .collect();
    let summary = summarize(&cm, &curves)?;
    let report_path = a.report.unwrap_or_else(|| sibling(&a.out, "report.json"));
    let report = serde_json::json!({
        "summary": summary,
        "confusion": cm,
        "history": fitted.history,
        "train_samples": train_set.len(),
        "test_samples": test_set.len(),
    });
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)
        .with_context(|| format!("cannot write {}", report_path.display()))?;
    println!("val_accuracy={:.4}", eval.accuracy);
    Ok(())
}

fn eval(a: EvalArgs, cfg: &ServiceConfig) -> anyhow::Result<()> {
    let (spec, params) = read_model(&a.model)?;
    let manifest = load_dataset_with(&a.data, &cfg.skin)?;
    let result = evaluate(&spec, &params, &manifest.entries)?;
    let labels: Vec<usize> = manifest.entries.iter().map(|s| s.label).collect();
    let cm = confusion(&result.predictions, &labels)?;
    let curves: Vec<_> = (0..10)
        .map(|k| roc_one_vs_all(&result.probabilities, &labels, k).ok())
        .collect();
    let summary = export_report(&a.out, &cm, &curves, None)?;
    println!(
        "accuracy={:.4} samples={} report={}",
        summary.accuracy,
        summary.samples,
        a.out.display()
    );
    Ok(())
}

fn predict_one(a: PredictArgs, cfg: &ServiceConfig) -> anyhow::Result<()> {
    let (spec, params) = read_model(&a.model)?;
    let bytes =
        std::fs::read(&a.image).with_context(|| format!("cannot read {}", a.image.display()))?;
    let raster =
        decode_netpbm(&bytes).with_context(|| format!("cannot decode {}", a.image.display()))?;
    let (digit, probs) = predict(&spec, &params, &preprocess(&raster, &cfg.skin))?;
    let translator = backends::translator(cfg);
    let tts = backends::synthesizer(cfg);
    let (bangla, clip) = speak_digit(digit as i64, translator.as_ref(), tts.as_ref())?;
    println!("digit={digit} p={:.6} bangla={bangla}", probs.data()[digit]);
    if a.speak {
        let wav = a.image.with_extension("wav");
        std::fs::write(&wav, wav_encode(&clip))
            .with_context(|| format!("cannot write {}", wav.display()))?;
    }
    Ok(())
}

fn serve(a: ServeArgs, mut cfg: ServiceConfig) -> anyhow::Result<()> {
    if let Some(m) = a.model {
        cfg.model = m;
    }
    if let Some(h) = a.host {
        cfg.host = h;
    }
    if let Some(p) = a.port {
        cfg.port = p;
    }
    if let Some(d) = a.static_dir {
        cfg.static_dir = Some(d);
    }
    tokio::runtime::Runtime::new()?.block_on(server::serve(cfg))
}

fn augment_preview(a: PreviewArgs, cfg: &ServiceConfig) -> anyhow::Result<()> {
    if a.count == 0 {
        bail!("--count must be positive");
    }
    let bytes =
        std::fs::read(&a.image).with_context(|| format!("cannot read {}", a.image.display()))?;
    let raster =
        decode_netpbm(&bytes).with_context(|| format!("cannot decode {}", a.image.display()))?;
    let base = preprocess(&raster, &cfg.skin);
    std::fs::create_dir_all(&a.out)
        .with_context(|| format!("cannot create {}", a.out.display()))?;
    std::fs::write(a.out.join("original.pgm"), encode_netpbm(&base.to_raster()))?;
    let policy = AugmentPolicy {
        seed: a.seed,
        apply_prob: 1.0,
        ..AugmentPolicy::default()
    };
    for i in 0..a.count {
        let img = random_augment(&base, &policy, i as u64);
        std::fs::write(
            a.out.join(format!("augmented_{i:03}.pgm")),
            encode_netpbm(&img.to_raster()),
        )?;
    }
    println!("wrote {} variants to {}", a.count, a.out.display());
    Ok(())
}
