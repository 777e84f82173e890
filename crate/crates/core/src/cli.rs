//! Command implementations behind the `skelact` binary.
//!
//! Every command reads its inputs, writes its outputs and prints a JSON
//! summary to stdout. Failures map onto exit codes via [`exit_code`].

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::engine::{load_checkpoint, save_checkpoint};
use crate::heatmap::{build_volume, to_canvas, DEFAULT_SIGMA};
use crate::models::{build_model, profile, Model, ModelSpec, Variant};
use crate::skeleton::{
    generate_synthetic, load_container, save_container, DatasetContainer, SynthSpec,
};
use crate::training::{
    default_fusion_weights, evaluate, fuse_scores, train, write_log, ScoreTable,
};
use crate::transforms::{
    derive_stream, normalize_2d, pad_loop, pad_zero, pre_normalize_3d, PreNormOptions, Stream,
};
use crate::verify::{run_suite, SuiteOptions};
use crate::{Error, Result};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

pub const CHECKPOINT_FILE: &str = "model.skw";
pub const LOG_FILE: &str = "log.jsonl";

/// Exit status for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Spec(_) | Error::Name(_) => EXIT_CONFIG,
        Error::Verification(_) => EXIT_VERIFY,
        Error::Format(_)
        | Error::Io(_)
        | Error::Data(_)
        | Error::Label { .. }
        | Error::Shape(_)
        | Error::Length(_)
        | Error::DegenerateInput(_)
        | Error::MissingMetadata(_)
        | Error::CoordType(_)
        | Error::Tape(_) => EXIT_DATA,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "skelact",
    version,
    about = "Skeleton action recognition toolkit"
)]
pub struct Cli {
    /// Worker threads (default: all cores). `1` gives bit-reproducible runs.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic periodic-motion dataset.
    GenSynth(GenSynthArgs),
    /// Apply preprocessing steps to every sample of a container.
    Preprocess(PreprocessArgs),
    /// Train a model; writes a checkpoint, a JSONL log and the resolved config.
    Train(RunArgs),
    /// Score a split with a trained checkpoint.
    Eval(EvalArgs),
    /// Weighted fusion of score files.
    Fuse(FuseArgs),
    /// Report parameters and FLOPs.
    Profile(ProfileArgs),
    /// Render a heatmap volume for one sample.
    DumpHeatmap(HeatmapArgs),
    /// Finite-difference check of every engine op and a tiny network.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "ntu25")]
    pub layout: String,
    #[arg(long, default_value_t = 50)]
    pub per_class: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// TOML synthetic spec; replaces the built-in one for `--layout`.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub persons: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Comma separated: pre-normalize, pre-normalize-shoulders,
    /// normalize-2d, pad-zero:T, pad-loop:T, stream:NAME.
    #[arg(long, value_delimiter = ',')]
    pub steps: Vec<String>,
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub stream: Option<String>,
    #[arg(long)]
    pub clip_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Defaults to the checkpoint in the output directory.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Defaults to the config's test split.
    #[arg(long)]
    pub split: Option<String>,
    /// Defaults to `scores_<stream>.sks` in the output directory.
    #[arg(long)]
    pub scores: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub scores: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long, default_value_t = 100)]
    pub frames: usize,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub sample: usize,
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    pub sigma: f64,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    /// Also write one `[H][W]` slice as PGM.
    #[arg(long)]
    pub pgm: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub pgm_joint: usize,
    #[arg(long, default_value_t = 0)]
    pub pgm_frame: usize,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    #[arg(long, default_value_t = 2)]
    pub per_param: usize,
    /// Skip the end-to-end network check.
    #[arg(long)]
    pub ops_only: bool,
}

fn print_json(value: &impl Serialize) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("json output")
    );
}

/// Parses a lowercase enum name through its serde representation.
fn parse_name<T: DeserializeOwned>(kind: &str, s: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| Error::Config(format!("unknown {kind} {s:?}")))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSynth(a) => cmd_gen_synth(&a),
        Command::Preprocess(a) => cmd_preprocess(&a),
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
        Command::Fuse(a) => cmd_fuse(&a),
        Command::Profile(a) => cmd_profile(&a),
        Command::DumpHeatmap(a) => cmd_dump_heatmap(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
    }
}

pub fn cmd_gen_synth(a: &GenSynthArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            toml::from_str::<SynthSpec>(&text).map_err(|e| Error::Config(e.to_string()))?
        }
        None => SynthSpec::default_for(&a.layout)?,
    };
    if let Some(f) = a.frames {
        spec.frames = f;
    }
    if let Some(m) = a.persons {
        spec.persons = m;
    }
    spec.validate().map_err(|e| match e {
        Error::Name(_) => e,
        other => Error::Config(other.to_string()),
    })?;
    let data = generate_synthetic(&spec, a.per_class, a.seed)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_container(&data, &a.out)?;
    print_json(&json!({
        "container": a.out,
        "samples": data.samples.len(),
        "num_classes": data.num_classes,
        "splits": data.splits.iter().map(|(k, v)| (k.clone(), v.len())).collect::<std::collections::BTreeMap<_, _>>(),
    }));
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    PreNormalize { align_shoulders: bool },
    Normalize2d,
    PadZero(usize),
    PadLoop(usize),
    Stream(Stream),
}

pub fn parse_step(s: &str) -> Result<Step> {
    let (name, arg) = match s.split_once(':') {
        Some((n, a)) => (n.trim(), Some(a.trim())),
        None => (s.trim(), None),
    };
    let frames = || -> Result<usize> {
        arg.and_then(|a| a.parse().ok()).ok_or_else(|| {
            Error::Config(format!("step {s:?} needs a frame count, e.g. {name}:300"))
        })
    };
    match name {
        "pre-normalize" => Ok(Step::PreNormalize {
            align_shoulders: false,
        }),
        "pre-normalize-shoulders" => Ok(Step::PreNormalize {
            align_shoulders: true,
        }),
        "normalize-2d" => Ok(Step::Normalize2d),
        "pad-zero" => Ok(Step::PadZero(frames()?)),
        "pad-loop" => Ok(Step::PadLoop(frames()?)),
        "stream" => {
            let a = arg.ok_or_else(|| Error::Config(format!("step {s:?} needs a stream name")))?;
            Ok(Step::Stream(parse_name("stream", a)?))
        }
        _ => Err(Error::Config(format!("unknown preprocessing step {s:?}"))),
    }
}

pub fn apply_steps(data: &DatasetContainer, steps: &[Step]) -> Result<DatasetContainer> {
    let mut out = data.clone();
    for (i, sample) in out.samples.iter_mut().enumerate() {
        for step in steps {
            let next = match step {
                Step::PreNormalize { align_shoulders } => pre_normalize_3d(
                    sample,
                    PreNormOptions {
                        align_shoulders: *align_shoulders,
                    },
                ),
                Step::Normalize2d => normalize_2d(sample),
                Step::PadZero(t) => pad_zero(sample, *t),
                Step::PadLoop(t) => pad_loop(sample, *t),
                Step::Stream(s) => Ok(derive_stream(sample, *s)),
            };
            *sample = next.map_err(|e| annotate(e, i))?;
        }
    }
    Ok(out)
}

fn annotate(e: Error, sample: usize) -> Error {
    match e {
        Error::DegenerateInput(m) => Error::DegenerateInput(format!("sample {sample}: {m}")),
        Error::MissingMetadata(m) => Error::MissingMetadata(format!("sample {sample}: {m}")),
        Error::CoordType(m) => Error::CoordType(format!("sample {sample}: {m}")),
        Error::Length(m) => Error::Length(format!("sample {sample}: {m}")),
        other => other,
    }
}

pub fn cmd_preprocess(a: &PreprocessArgs) -> Result<()> {
    let steps = a
        .steps
        .iter()
        .map(|s| parse_step(s))
        .collect::<Result<Vec<_>>>()?;
    let data = load_container(&a.input)?;
    let out = apply_steps(&data, &steps)?;
    save_container(&out, &a.output)?;
    print_json(&json!({ "container": a.output, "samples": out.samples.len(), "steps": a.steps }));
    Ok(())
}

/// Loads the config file (or defaults) and applies command-line overrides.
pub fn resolve_config(a: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &a.output_dir {
        cfg.output_dir = d.clone();
    }
    if let Some(d) = &a.data {
        cfg.data.container = d.clone();
    }
    if let Some(v) = &a.variant {
        cfg.model.variant = parse_name::<Variant>("variant", v)?;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.train.base_lr = lr;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(s) = &a.stream {
        cfg.train.stream = parse_name("stream", s)?;
    }
    if let Some(t) = a.clip_len {
        cfg.transform.clip_len = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Checks that the dataset fits the model spec.
pub fn check_compatible(spec: &ModelSpec, data: &DatasetContainer) -> Result<()> {
    if data.num_classes != spec.num_classes {
        return Err(Error::Config(format!(
            "model.num_classes = {} but the dataset has {} classes",
            spec.num_classes, data.num_classes
        )));
    }
    let joints = spec.num_joints()?;
    if let Some(s) = data.samples.first() {
        if s.shape.joints != joints || s.shape.channels != spec.in_channels {
            return Err(Error::Config(format!(
                "model expects {joints} joints x {} channels, dataset has {} x {}",
                spec.in_channels, s.shape.joints, s.shape.channels
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub config: PathBuf,
    pub epochs: usize,
    pub final_loss: Option<f64>,
    pub final_train_top1: Option<f64>,
}

pub fn cmd_train(a: &RunArgs) -> Result<TrainSummary> {
    let cfg = resolve_config(a)?;
    let config = cfg.persist()?;
    let data = load_container(&cfg.data.container)?;
    check_compatible(&cfg.model, &data)?;
    let mut model = build_model::<f32>(&cfg.model, cfg.train.seed)?;
    let logs = train(&mut model, &data, &cfg.transform, &cfg.train, |_| {})?;
    let checkpoint = cfg.output_dir.join(CHECKPOINT_FILE);
    save_checkpoint(&model.params, &checkpoint)?;
    let log = cfg.output_dir.join(LOG_FILE);
    write_log(&log, &logs)?;
    let summary = TrainSummary {
        checkpoint,
        log,
        config,
        epochs: logs.len(),
        final_loss: logs.last().map(|l| l.loss),
        final_train_top1: logs.last().map(|l| l.top1),
    };
    print_json(&summary);
    Ok(summary)
}

pub fn load_model(spec: &ModelSpec, checkpoint: &Path) -> Result<Model<f32>> {
    let mut model = build_model::<f32>(spec, 0)?;
    model.params.load_entries(&load_checkpoint(checkpoint)?)?;
    Ok(model)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<ScoreTable> {
    let cfg = resolve_config(&a.run)?;
    let data = load_container(&cfg.data.container)?;
    check_compatible(&cfg.model, &data)?;
    let checkpoint = a
        .checkpoint
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join(CHECKPOINT_FILE));
    let mut model = load_model(&cfg.model, &checkpoint)?;
    let split = a
        .split
        .clone()
        .unwrap_or_else(|| cfg.train.test_split.clone());
    let (metrics, table) = evaluate(
        &mut model,
        &data,
        &split,
        &cfg.transform,
        cfg.train.stream,
        cfg.train.batch_size,
    )?;
    let scores = match &a.scores {
        Some(p) => p.clone(),
        None => {
            let stream = serde_json::to_value(cfg.train.stream).expect("stream name");
            cfg.output_dir
                .join(format!("scores_{}.sks", stream.as_str().unwrap_or("joint")))
        }
    };
    if let Some(dir) = scores.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    table.save(&scores)?;
    print_json(&json!({ "split": split, "scores": scores, "metrics": metrics }));
    Ok(table)
}

pub fn cmd_fuse(a: &FuseArgs) -> Result<()> {
    let tables = a
        .scores
        .iter()
        .map(|p| ScoreTable::load(p))
        .collect::<Result<Vec<_>>>()?;
    let weights = a
        .weights
        .clone()
        .unwrap_or_else(|| default_fusion_weights(tables.len()));
    if weights.len() != tables.len() {
        return Err(Error::Config(format!(
            "{} weights for {} score files",
            weights.len(),
            tables.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
        return Err(Error::Config(format!(
            "fusion weights must be finite and non-negative, got {w}"
        )));
    }
    let (fused, metrics) = fuse_scores(&tables, &weights)?;
    if let Some(p) = &a.output {
        fused.save(p)?;
    }
    print_json(&json!({ "weights": weights, "metrics": metrics }));
    Ok(())
}

pub fn cmd_profile(a: &ProfileArgs) -> Result<()> {
    let mut spec = match &a.config {
        Some(p) => RunConfig::load(p)?.model,
        None => ModelSpec::default(),
    };
    if let Some(v) = &a.variant {
        spec.variant = parse_name("variant", v)?;
    }
    print_json(&profile(&spec, a.frames)?);
    Ok(())
}

pub fn cmd_dump_heatmap(a: &HeatmapArgs) -> Result<()> {
    let data = load_container(&a.input)?;
    let seq = data.samples.get(a.sample).ok_or_else(|| {
        Error::Data(format!(
            "sample {} out of range ({} samples)",
            a.sample,
            data.samples.len()
        ))
    })?;
    let canvas = to_canvas(seq, a.height, a.width)?;
    let volume = build_volume(&canvas, a.sigma, a.height, a.width)?;
    volume.save(&a.output)?;
    if let Some(p) = &a.pgm {
        volume.write_pgm(a.pgm_joint, a.pgm_frame, p)?;
    }
    print_json(&json!({
        "volume": a.output,
        "shape": [volume.joints, volume.frames, volume.height, volume.width],
        "sigma": a.sigma,
    }));
    Ok(())
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> Result<()> {
    let results = run_suite(SuiteOptions {
        seeds: a.seeds,
        per_param: a.per_param,
        include_network: !a.ops_only,
    })?;
    print_json(&results);
    let failed: Vec<&str> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.name.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Verification(format!(
            "gradient check failed for {}",
            failed.join(", ")
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Spec("x".into())), 2);
        assert_eq!(exit_code(&Error::Format("x".into())), 3);
        assert_eq!(exit_code(&Error::Verification("x".into())), 4);
    }

    #[test]
    fn step_parsing() {
        assert_eq!(parse_step("pad-zero:300").unwrap(), Step::PadZero(300));
        assert_eq!(
            parse_step("stream:bone").unwrap(),
            Step::Stream(Stream::Bone)
        );
        assert_eq!(
            parse_step("pre-normalize").unwrap(),
            Step::PreNormalize {
                align_shoulders: false
            }
        );
        assert!(matches!(parse_step("pad-loop"), Err(Error::Config(_))));
        assert!(matches!(
            parse_step("stream:sideways"),
            Err(Error::Config(_))
        ));
        assert!(matches!(parse_step("flip"), Err(Error::Config(_))));
    }

    #[test]
    fn overrides_beat_defaults() {
        let a = RunArgs {
            epochs: Some(3),
            lr: Some(0.05),
            variant: Some("stgcn".into()),
            stream: Some("bone_motion".into()),
            ..Default::default()
        };
        let cfg = resolve_config(&a).unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.base_lr, 0.05);
        assert_eq!(cfg.model.variant, Variant::Stgcn);
        assert_eq!(cfg.train.stream, Stream::BoneMotion);
        let bad = RunArgs {
            variant: Some("resnet".into()),
            ..Default::default()
        };
        assert!(matches!(resolve_config(&bad), Err(Error::Config(_))));
    }
}
