//! `artieval` command-line front end.
//!
//! Exit codes: 0 success, 1 validation or gradient check failed,
//! 2 input error, 3 coverage error (missing predictions or images).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use artieval::aj;
use artieval::annotation::{validate_manifest, ParseOptions};
use artieval::attention::{
    alignment_grad, alignment_loss, attention_rollout, bce_loss, gradient_check,
    patch_artifact_heatmap, total_loss, AlignmentParams, GradCheck, Heatmap, RolloutOptions,
};
use artieval::fidelity::{self, FidelityBinSpec};
use artieval::fixture::{self, FixtureSpec};
use artieval::formats;
use artieval::pad::{union_ground_truth, InstanceMode, Pooling};
use artieval::predictions::{parse_aj_predictions, ImageIndex};
use artieval::report::{self, EvalConfig, TOOL_VERSION};
use artieval::{Error, Result, Role};

const GRADCHECK_STEP: f64 = 1e-5;
const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(
    name = "artieval",
    version,
    about = "Scoring engine for interpretable AI-generated image detection"
)]
struct Cli {
    /// Write the JSON result here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for per-image work.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Drop annotations whose mean confidence is below this value.
    #[arg(long, global = true, default_value_t = 0.0)]
    tau: f64,
    /// Treat degenerate geometry as an error and drop exact duplicate annotations.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a manifest and report every problem found.
    Validate { manifest: PathBuf },
    /// Score predictions against a manifest.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Fidelity stratification.
    #[command(subcommand)]
    Fidelity(FidelityCommand),
    /// Attention alignment numerics.
    #[command(subcommand)]
    Align(AlignCommand),
    /// Write a deterministic synthetic manifest and prediction suite.
    Fixture(FixtureArgs),
}

#[derive(Args)]
struct EvalInputs {
    manifest: PathBuf,
    predictions: PathBuf,
    /// Fake-score threshold for AJ verdicts.
    #[arg(long, default_value_t = aj::DEFAULT_THRESHOLD)]
    threshold: f64,
}

#[derive(Args)]
struct PadFlags {
    #[arg(long, value_enum, default_value_t = PoolingArg::Micro)]
    pooling: PoolingArg,
    /// Only score localization on images the AJ file calls fake.
    #[arg(long, value_name = "AJ_PREDICTIONS")]
    gate_on_aj: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PoolingArg {
    Micro,
    Macro,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Real/fake detection scores, overall and per generator.
    Aj {
        #[command(flatten)]
        inputs: EvalInputs,
    },
    /// Per-category pixel localization.
    Pad {
        #[command(flatten)]
        inputs: EvalInputs,
        #[command(flatten)]
        pad: PadFlags,
    },
    /// Category-agnostic pixel localization from masks or heatmaps.
    CaPad {
        #[command(flatten)]
        inputs: EvalInputs,
        #[command(flatten)]
        pad: PadFlags,
        #[arg(long, default_value_t = artieval::pad::DEFAULT_BINARIZE_THRESHOLD)]
        binarize_threshold: f64,
    },
    /// Per-annotation coverage matching.
    Instances {
        #[command(flatten)]
        inputs: EvalInputs,
        #[command(flatten)]
        pad: PadFlags,
        /// Coverage threshold.
        #[arg(long, default_value_t = 0.5)]
        t: f64,
        /// Ignore predicted categories.
        #[arg(long)]
        agnostic: bool,
    },
}

#[derive(Subcommand)]
enum FidelityCommand {
    /// Artifact ratio of every fake image.
    Par { manifest: PathBuf },
    /// Fake detection accuracy per artifact-ratio bin.
    Bins {
        manifest: PathBuf,
        predictions: PathBuf,
        #[arg(long, default_value_t = aj::DEFAULT_THRESHOLD)]
        threshold: f64,
        /// Comma-separated fixed edges from 0 to 1.
        #[arg(long, value_delimiter = ',', conflicts_with = "quantiles")]
        edges: Option<Vec<f64>>,
        /// Equal-count bins over the positive ratios.
        #[arg(long, default_value_t = 4)]
        quantiles: usize,
    },
    /// Histogram of per-instance mean confidence.
    Confidence {
        manifest: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        bin_width: f64,
    },
}

#[derive(Args)]
struct LossFlags {
    #[arg(long, default_value_t = 0.4)]
    lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
}

#[derive(Subcommand)]
enum AlignCommand {
    /// Alignment loss between two heatmaps, optionally combined with BCE.
    Loss {
        a_cls: PathBuf,
        a_art: PathBuf,
        #[command(flatten)]
        flags: LossFlags,
        /// Detector fake score for the BCE term.
        #[arg(long, requires = "label")]
        score: Option<f64>,
        /// Ground-truth label (1 = fake) for the BCE term.
        #[arg(long, requires = "score")]
        label: Option<u8>,
    },
    /// Analytic gradient of the alignment loss, written as a heatmap file.
    Grad {
        a_cls: PathBuf,
        a_art: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        flags: LossFlags,
    },
    /// Compare the analytic gradient with central differences.
    Gradcheck {
        /// Heatmap pair to check; random pairs are drawn when omitted.
        #[arg(num_args = 2, value_names = ["A_CLS", "A_ART"])]
        files: Vec<PathBuf>,
        #[command(flatten)]
        flags: LossFlags,
        #[arg(long, default_value_t = 20)]
        pairs: usize,
        #[arg(long, default_value_t = 8)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Attention rollout of a layer stack, written as a heatmap file.
    Rollout {
        stack: PathBuf,
        output: PathBuf,
        /// Patch grid as HxW.
        #[arg(long, value_parser = parse_grid)]
        grid: (usize, usize),
        #[arg(long)]
        no_normalize: bool,
    },
    /// Per-patch artifact fraction of an image's annotation union.
    ArtHeatmap {
        manifest: PathBuf,
        output: PathBuf,
        #[arg(long)]
        uid: String,
        #[arg(long)]
        generator: Option<String>,
        #[arg(long, default_value_t = 16)]
        patch: u32,
    },
}

#[derive(Args)]
struct FixtureArgs {
    /// Output directory.
    dir: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    uids: usize,
    #[arg(long, default_value_t = 3)]
    generators: usize,
    #[arg(long, default_value_t = 64)]
    width: u32,
    #[arg(long, default_value_t = 48)]
    height: u32,
    /// Skip the heatmap files for the CA-PAD tier.
    #[arg(long)]
    no_heatmaps: bool,
}

fn parse_grid(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or("expected HxW")?;
    let h = h
        .trim()
        .parse()
        .map_err(|_| format!("bad height in {s:?}"))?;
    let w = w
        .trim()
        .parse()
        .map_err(|_| format!("bad width in {s:?}"))?;
    Ok((h, w))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn read_heatmap(path: &Path) -> Result<Heatmap> {
    formats::read_heatmap(&read(path)?).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Loss inputs must be attention or artifact fractions.
fn read_unit_heatmap(path: &Path) -> Result<Heatmap> {
    let h = read_heatmap(path)?;
    if let Some(i) = h.first_out_of_unit_range() {
        return Err(Error::InvalidArgument(format!(
            "{}: value {} at index {i} outside [0, 1]",
            path.display(),
            h.values()[i]
        )));
    }
    Ok(h)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

enum Outcome {
    Ok(Value),
    Failed(Value),
}

fn config(cli: &Cli) -> Result<EvalConfig> {
    if cli.jobs == 0 {
        return Err(Error::InvalidArgument("--jobs must be at least 1".into()));
    }
    Ok(EvalConfig {
        tau: cli.tau,
        strict: cli.strict,
        jobs: cli.jobs,
        ..Default::default()
    })
}

fn apply_pad_flags(cfg: &mut EvalConfig, pad: &PadFlags) -> Result<Option<Vec<u8>>> {
    cfg.pooling = match pad.pooling {
        PoolingArg::Micro => Pooling::Micro,
        PoolingArg::Macro => Pooling::Macro,
    };
    cfg.gate_on_aj = pad.gate_on_aj.is_some();
    pad.gate_on_aj.as_deref().map(read).transpose()
}

fn run_eval(cli: &Cli, cmd: &EvalCommand) -> Result<Value> {
    let mut cfg = config(cli)?;
    let report = match cmd {
        EvalCommand::Aj { inputs } => {
            cfg.threshold = inputs.threshold;
            report::run_aj(&read(&inputs.manifest)?, &read(&inputs.predictions)?, &cfg)?
        }
        EvalCommand::Pad { inputs, pad } => {
            cfg.threshold = inputs.threshold;
            let aj = apply_pad_flags(&mut cfg, pad)?;
            report::run_pad(
                &read(&inputs.manifest)?,
                &read(&inputs.predictions)?,
                aj.as_deref(),
                &cfg,
            )?
        }
        EvalCommand::CaPad {
            inputs,
            pad,
            binarize_threshold,
        } => {
            cfg.threshold = inputs.threshold;
            cfg.binarize_threshold = *binarize_threshold;
            let aj = apply_pad_flags(&mut cfg, pad)?;
            let dir = inputs.predictions.parent().unwrap_or(Path::new("."));
            report::run_ca_pad(
                &read(&inputs.manifest)?,
                &read(&inputs.predictions)?,
                dir,
                aj.as_deref(),
                &cfg,
            )?
        }
        EvalCommand::Instances {
            inputs,
            pad,
            t,
            agnostic,
        } => {
            cfg.threshold = inputs.threshold;
            cfg.t = *t;
            if *agnostic {
                cfg.instance_mode = InstanceMode::CategoryAgnostic;
            }
            let aj = apply_pad_flags(&mut cfg, pad)?;
            report::run_instances(
                &read(&inputs.manifest)?,
                &read(&inputs.predictions)?,
                aj.as_deref(),
                &cfg,
            )?
        }
    };
    Ok(report.to_value())
}

fn run_validate(cli: &Cli, path: &Path) -> Result<Outcome> {
    let bytes = read(path)?;
    let rep = validate_manifest(&bytes, ParseOptions { strict: cli.strict });
    let errors: Vec<Value> = rep
        .errors
        .iter()
        .map(|e| {
            let mut v = json!({"kind": e.kind(), "message": e.to_string()});
            if let Error::Validation { uid, .. } = e {
                v["uid"] = json!(uid);
            }
            v
        })
        .collect();
    let out = json!({
        "tool_version": TOOL_VERSION,
        "file": path.display().to_string(),
        "valid": rep.is_valid(),
        "images": rep.manifest.as_ref().map(|m| m.images.len()),
        "instances": rep.manifest.as_ref().map(|m| m.instance_count()),
        "errors": errors,
        "warnings": rep.warnings,
    });
    Ok(if rep.is_valid() {
        Outcome::Ok(out)
    } else {
        Outcome::Failed(out)
    })
}

fn run_fidelity(cli: &Cli, cmd: &FidelityCommand) -> Result<Value> {
    let cfg = config(cli)?;
    match cmd {
        FidelityCommand::Par { manifest } => {
            let m = report::load_manifest(&read(manifest)?, &cfg)?;
            let rows: Vec<Value> = fidelity::fake_pars(&m)
                .into_iter()
                .map(|(i, p)| {
                    let r = &m.images[i];
                    json!({"uid": r.uid, "generator": r.generator, "par": p})
                })
                .collect();
            Ok(json!({"tool_version": TOOL_VERSION, "task": "par", "tau": cfg.tau, "rows": rows}))
        }
        FidelityCommand::Bins {
            manifest,
            predictions,
            threshold,
            edges,
            quantiles,
        } => {
            if !(0.0..=1.0).contains(threshold) {
                return Err(Error::InvalidArgument(format!(
                    "threshold {threshold} outside [0, 1]"
                )));
            }
            let m = report::load_manifest(&read(manifest)?, &cfg)?;
            let preds = parse_aj_predictions(&read(predictions)?)?;
            let spec = match edges {
                Some(e) => FidelityBinSpec::fixed(e.clone())?,
                None => {
                    let pars: Vec<f64> = fidelity::fake_pars(&m)
                        .into_iter()
                        .map(|(_, p)| p)
                        .collect();
                    FidelityBinSpec::quantiles(&pars, *quantiles)?
                }
            };
            let mut warnings = Vec::new();
            let table = fidelity::accuracy_by_par(&m, &preds, *threshold, &spec, &mut warnings)?;
            Ok(json!({
                "tool_version": TOOL_VERSION,
                "task": "fidelity-bins",
                "threshold": threshold,
                "tau": cfg.tau,
                "table": table,
                "warnings": warnings,
            }))
        }
        FidelityCommand::Confidence {
            manifest,
            bin_width,
        } => {
            let no_filter = EvalConfig { tau: 0.0, ..cfg };
            let m = report::load_manifest(&read(manifest)?, &no_filter)?;
            let h = fidelity::confidence_histogram(&m, *bin_width)?;
            Ok(json!({"tool_version": TOOL_VERSION, "task": "confidence", "histogram": h}))
        }
    }
}

fn random_pair(rng: &mut ChaCha8Rng, size: usize) -> (Heatmap, Heatmap) {
    let cls = (0..size * size).map(|_| rng.gen_range(0.0..=1.0)).collect();
    let art = (0..size * size)
        .map(|_| {
            if rng.gen_bool(0.5) {
                0.0
            } else {
                rng.gen_range(0.0..=1.0)
            }
        })
        .collect();
    (
        Heatmap::new(size, size, cls).expect("square"),
        Heatmap::new(size, size, art).expect("square"),
    )
}

fn run_align(cmd: &AlignCommand) -> Result<Outcome> {
    let ok = |v: Value| Ok(Outcome::Ok(v));
    match cmd {
        AlignCommand::Loss {
            a_cls,
            a_art,
            flags,
            score,
            label,
        } => {
            let p = AlignmentParams::new(flags.lambda, flags.beta)?;
            let cls = read_unit_heatmap(a_cls)?;
            let art = read_unit_heatmap(a_art)?;
            let align = alignment_loss(&cls, &art, p.lambda)?;
            let mut out = json!({"tool_version": TOOL_VERSION, "config": p, "alignment": align});
            if let (Some(s), Some(l)) = (score, label) {
                if !(0.0..=1.0).contains(s) {
                    return Err(Error::InvalidArgument(format!("score {s} outside [0, 1]")));
                }
                if *l > 1 {
                    return Err(Error::InvalidArgument(format!("label {l} must be 0 or 1")));
                }
                let bce = bce_loss(*s, *l);
                out["bce"] = json!(bce.value);
                out["bce_clamped"] = json!(bce.clamped);
                out["total"] = json!(total_loss(bce.value, align, p.beta));
            }
            ok(out)
        }
        AlignCommand::Grad {
            a_cls,
            a_art,
            output,
            flags,
        } => {
            let p = AlignmentParams::new(flags.lambda, flags.beta)?;
            let g = alignment_grad(
                &read_unit_heatmap(a_cls)?,
                &read_unit_heatmap(a_art)?,
                p.lambda,
            )?;
            write_file(output, &formats::write_heatmap(&g))?;
            let max_abs = g.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            ok(json!({
                "tool_version": TOOL_VERSION,
                "config": p,
                "written": output.display().to_string(),
                "height": g.height(),
                "width": g.width(),
                "max_abs": max_abs,
            }))
        }
        AlignCommand::Gradcheck {
            files,
            flags,
            pairs,
            size,
            seed,
        } => {
            let p = AlignmentParams::new(flags.lambda, flags.beta)?;
            let mut check = GradCheck {
                max_rel_error: 0.0,
                max_abs_error: 0.0,
                cells: 0,
            };
            let mut checked = 0;
            if files.len() == 2 {
                let (cls, art) = (read_unit_heatmap(&files[0])?, read_unit_heatmap(&files[1])?);
                check = gradient_check(&cls, &art, p.lambda, GRADCHECK_STEP)?;
                checked = 1;
            } else {
                if *size == 0 {
                    return Err(Error::InvalidArgument("--size must be at least 1".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                for _ in 0..*pairs {
                    let (cls, art) = random_pair(&mut rng, *size);
                    check = check.merge(gradient_check(&cls, &art, p.lambda, GRADCHECK_STEP)?);
                    checked += 1;
                }
            }
            let passed = check.max_rel_error < GRADCHECK_TOLERANCE;
            let out = json!({
                "tool_version": TOOL_VERSION,
                "config": p,
                "pairs": checked,
                "step": GRADCHECK_STEP,
                "tolerance": GRADCHECK_TOLERANCE,
                "max_rel_error": check.max_rel_error,
                "max_abs_error": check.max_abs_error,
                "cells": check.cells,
                "passed": passed,
            });
            Ok(if passed {
                Outcome::Ok(out)
            } else {
                Outcome::Failed(out)
            })
        }
        AlignCommand::Rollout {
            stack,
            output,
            grid,
            no_normalize,
        } => {
            let s = formats::read_attention_stack(&read(stack)?)?;
            let r = attention_rollout(
                &s,
                grid.0,
                grid.1,
                RolloutOptions {
                    normalize: !no_normalize,
                },
            )?;
            write_file(output, &formats::write_heatmap(&r.heatmap))?;
            ok(json!({
                "tool_version": TOOL_VERSION,
                "written": output.display().to_string(),
                "layers": s.layers().len(),
                "tokens": s.tokens(),
                "gradient_weighted": s.gradients().is_some(),
                "normalized": !no_normalize,
                "degenerate": r.degenerate,
            }))
        }
        AlignCommand::ArtHeatmap {
            manifest,
            output,
            uid,
            generator,
            patch,
        } => {
            let m = artieval::parse_manifest(&read(manifest)?)?;
            let idx = ImageIndex::new(&m).resolve_fake(uid, generator.as_deref())?;
            let record = &m.images[idx];
            let mask = union_ground_truth(record);
            let h = patch_artifact_heatmap(&mask, *patch)?;
            write_file(output, &formats::write_heatmap(&h))?;
            ok(json!({
                "tool_version": TOOL_VERSION,
                "written": output.display().to_string(),
                "uid": record.uid,
                "generator": record.generator,
                "patch": patch,
                "height": h.height(),
                "width": h.width(),
                "artifact_pixels": mask.area(),
            }))
        }
    }
}

fn run_fixture(args: &FixtureArgs) -> Result<Value> {
    if args.uids == 0 || args.generators == 0 || args.width < 8 || args.height < 8 {
        return Err(Error::InvalidArgument(
            "fixture needs at least one uid and generator and an 8x8 frame".into(),
        ));
    }
    let spec = FixtureSpec {
        seed: args.seed,
        uids: args.uids,
        generators: args.generators,
        width: args.width,
        height: args.height,
        heatmaps: !args.no_heatmaps,
    };
    let f = fixture::generate(&spec);
    f.write_to(&args.dir)?;
    Ok(json!({
        "tool_version": TOOL_VERSION,
        "dir": args.dir.display().to_string(),
        "seed": args.seed,
        "images": f.manifest.images.len(),
        "fakes": f.manifest.images.iter().filter(|r| r.role == Role::Fake).count(),
        "instances": f.manifest.instance_count(),
        "files": f.files.keys().collect::<Vec<_>>(),
    }))
}

fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Validate { manifest } => run_validate(cli, manifest),
        Command::Eval(cmd) => run_eval(cli, cmd).map(Outcome::Ok),
        Command::Fidelity(cmd) => run_fidelity(cli, cmd).map(Outcome::Ok),
        Command::Align(cmd) => run_align(cmd),
        Command::Fixture(args) => run_fixture(args).map(Outcome::Ok),
    }
}

fn emit(cli: &Cli, value: &Value) -> Result<()> {
    let bytes = report::to_json_bytes(value);
    match &cli.out {
        Some(path) => write_file(path, &bytes),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(&bytes).map_err(Error::from)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = run(&cli).and_then(|outcome| match outcome {
        Outcome::Ok(v) => emit(&cli, &v).map(|_| 0),
        Outcome::Failed(v) => emit(&cli, &v).map(|_| 1),
    });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
