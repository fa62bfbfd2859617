//! Command-line front end: `synth`, `train`, `eval`, `predict`, `curves`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use super::{evaluate, load_coarse, Phase, TrainConfig, TrainState};
use crate::data::{generate_dataset, load_dataset, read_image, save_dataset, write_predictions, PredictionRecord, SynthConfig};
use crate::metrics::{export_curves, read_curve_data, MetricConfig};
use crate::model::{inference_filter, Checkpoint, Depth, Stage};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "letr", version, about = "Line segment detection with line-entity transformers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset (PPM images plus annotations.jsonl).
    Synth(SynthArgs),
    /// Train one stage from a key = value config file.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset and write report.json and PR curves.
    Eval(EvalArgs),
    /// Predict line segments for one image.
    Predict(PredictArgs),
    /// Rebuild PR curve CSVs from a saved matches.json.
    Curves(CurvesArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    extent: usize,
    #[arg(long, default_value_t = 1)]
    min_segments: usize,
    #[arg(long, default_value_t = 4)]
    max_segments: usize,
    #[arg(long, default_value_t = 0.25)]
    min_length: f64,
    #[arg(long, default_value_t = 1.5)]
    thickness: f64,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value = "scene")]
    prefix: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StageArg {
    Coarse,
    Fine,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_enum, default_value = "coarse")]
    stage: StageArg,
    #[arg(long)]
    config: PathBuf,
    /// Continue from a checkpoint written by an earlier run of this stage.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Train coarse and fine layers together in one stage.
    #[arg(long)]
    joint: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DepthArg {
    Coarse,
    Full,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Structural thresholds in grid pixels, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [10.0, 15.0])]
    thresholds: Vec<f64>,
    #[arg(long, default_value_t = 128)]
    grid: usize,
    #[arg(long, default_value_t = 128)]
    raster: usize,
    #[arg(long, default_value_t = 1)]
    tolerance: usize,
    /// Quantize the PR sweep to this many levels.
    #[arg(long)]
    levels: Option<usize>,
    /// Also score every decoder layer.
    #[arg(long)]
    per_layer: bool,
    /// Defaults to the checkpoint's stage.
    #[arg(long, value_enum)]
    depth: Option<DepthArg>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, value_enum)]
    depth: Option<DepthArg>,
    /// Write the record here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CurvesArgs {
    #[arg(long)]
    matches: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Parses `args` (program name first) and runs the subcommand. Returns the
/// process exit code: 0 on success, 1 on a runtime failure, 2 on bad usage.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::Curves(a) => curves(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        extent: a.extent,
        min_segments: a.min_segments,
        max_segments: a.max_segments,
        min_length: a.min_length,
        thickness: a.thickness,
        noise: a.noise,
        seed: a.seed,
    };
    let samples = generate_dataset(&cfg, a.count, &a.prefix)?;
    save_dataset(&samples, &a.out)?;
    let segments: usize = samples.iter().map(|s| s.targets.len()).sum();
    println!("wrote {} scenes ({segments} segments) to {}", samples.len(), a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = TrainConfig::load(&a.config)?;
    cfg.joint |= a.joint;
    let phase = match (cfg.joint, a.stage) {
        (true, StageArg::Fine) => return Err(Error::Config("joint training is a single stage; drop --stage fine".into())),
        (true, StageArg::Coarse) => Phase::Joint,
        (false, StageArg::Coarse) => Phase::Coarse,
        (false, StageArg::Fine) => Phase::Fine,
    };
    let train_dir = cfg.train_dir.clone().ok_or_else(|| Error::Config("config sets no train_dir".into()))?;
    create_dir(&cfg.out_dir)?;
    let name = match phase {
        Phase::Coarse => "coarse",
        Phase::Fine => "fine",
        Phase::Joint => "joint",
    };
    let checkpoint = cfg.out_dir.join(format!("{name}.ckpt"));
    let log = cfg.out_dir.join("train.log.jsonl");

    let mut state = match &a.resume {
        Some(path) => {
            let s = TrainState::load(path)?;
            if s.phase != phase {
                return Err(Error::Config(format!("{} holds a {:?} run, not {:?}", path.display(), s.phase, phase)));
            }
            let mut s = s;
            // A finished run continues when the config grants more epochs.
            s.finished &= s.epoch >= phase.epochs(&cfg);
            s
        }
        None => match phase {
            Phase::Coarse => TrainState::coarse(&cfg)?,
            Phase::Joint => TrainState::joint(&cfg)?,
            Phase::Fine => TrainState::fine_from(load_coarse(&cfg.out_dir.join("coarse.ckpt"))?, &cfg)?,
        },
    };
    let cfg_copy = cfg.out_dir.join(format!("{name}.cfg"));
    std::fs::write(&cfg_copy, cfg.to_kv()).map_err(|e| Error::io(&cfg_copy, e))?;

    let train = load_dataset(&train_dir)?;
    let val = cfg.val_dir.as_deref().map(load_dataset).transpose()?;
    eprintln!("{name} stage: {} training scenes, {} validation scenes, starting at epoch {}", train.len(), val.as_ref().map_or(0, Vec::len), state.epoch);
    let report = |r: &super::EpochRecord| {
        let eval = r.eval.as_ref().map_or_else(String::new, |e| format!("  val sAP{} {:.4}", e.structural[0].0, e.structural[0].1));
        eprintln!("epoch {:>4}  loss {:.5}  lr {:.1e}  gamma {}{eval}", r.epoch, r.loss, r.lr, r.gamma);
    };
    state.run_observed(&train, val.as_deref(), &cfg, Some(&log), Some(&checkpoint), report)?;
    if let Some(r) = state.history.last() {
        eprintln!("finished after epoch {} (step {}), last loss {:.5}", r.epoch, r.step, r.loss);
    }
    if let Some(b) = &state.best {
        eprintln!("best validation sAP{} = {:.4} at epoch {}", cfg.metric.thresholds[0], b.score, b.epoch);
    }
    println!("{}", checkpoint.display());
    Ok(())
}

fn depth_for(arg: Option<DepthArg>, stage: Stage) -> Depth {
    match (arg, stage) {
        (Some(DepthArg::Coarse), _) | (None, Stage::Coarse) => Depth::CoarseOnly,
        (Some(DepthArg::Full), _) | (None, Stage::Fine) => Depth::Full,
    }
}

fn eval(a: EvalArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let model = ck.to_model()?;
    let depth = depth_for(a.depth, ck.header.stage);
    let data = load_dataset(&a.dataset)?;
    let metric = MetricConfig {
        thresholds: a.thresholds,
        grid_extent: a.grid,
        raster_extent: a.raster,
        heatmap_tolerance: a.tolerance,
        sweep_levels: a.levels,
    };
    let report = evaluate(&model, &data, &metric, depth, a.per_layer)?;
    report.write(&a.out)?;
    let records: Vec<PredictionRecord> = data
        .iter()
        .map(|s| Ok(PredictionRecord::new(s.id.clone(), s.width(), s.height(), &model.predict(&s.image, depth)?)))
        .collect::<Result<_>>()?;
    write_predictions(&records, &a.out.join("predictions.jsonl"))?;
    for s in &report.structural {
        println!("sAP{} = {:.4}  sF{} = {:.4}", s.threshold, s.sap, s.threshold, s.sf);
    }
    println!("APH = {:.4}  FH = {:.4}", report.heatmap_ap, report.heatmap_f);
    if !report.per_layer_sap.is_empty() {
        let cells: Vec<String> = report.per_layer_sap.iter().map(|v| format!("{v:.4}")).collect();
        println!("per-layer sAP{} = [{}]", metric.thresholds[0], cells.join(", "));
    }
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let model = ck.to_model()?;
    let image = read_image(&a.image)?;
    let preds = inference_filter(&model.predict(&image, depth_for(a.depth, ck.header.stage))?, a.threshold)?;
    let id = a.image.file_stem().map_or_else(|| "image".to_string(), |s| s.to_string_lossy().into_owned());
    let record = PredictionRecord::new(id, image.shape()[1], image.shape()[0], &preds);
    match &a.out {
        Some(path) => write_predictions(&[record], path)?,
        None => println!("{}", serde_json::to_string(&record)?),
    }
    Ok(())
}

fn curves(a: CurvesArgs) -> Result<()> {
    let data = read_curve_data(&a.matches)?;
    create_dir(&a.out)?;
    export_curves(&data, &a.out)?;
    for d in &data {
        println!("{}: AP = {:.4}", d.name, d.curve()?.average_precision());
    }
    Ok(())
}
