//! Command-line entry points.
//!
//! One command per process. Every artifact-producing command writes a
//! `run-config.json` snapshot next to its outputs; pointing `--config` at
//! that snapshot repeats the run. Exit codes: 0 success, 1 invalid flags or
//! configuration, 2 runtime failure (divergence, i/o, failed audit).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{pnm, ImageRgb, MaskImage};
use crate::losses::audit_gradients;
use crate::networks::Segmentor;
use crate::synth::{self, DiskDataset, DomainSpec, Sample};
use crate::train::{
    evaluate_system, load_generator, load_segmentor, save_net, train_lcgan, train_segmentor,
    translate, AblationFlags, Architecture, GanLogRow, GanTrainOutput, Metadata, TrainConfig,
};

/// Precision every command runs in. Training at desk scale is f32; the
/// gradient audit always runs in f64 regardless.
type S = f32;

const SNAPSHOT_FILE: &str = "run-config.json";

#[derive(Parser)]
#[command(
    name = "lcgan",
    version,
    about = "Cross-domain surgical-instrument segmentation: synthetic data, \
             unpaired translation training, and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the two synthetic image domains with ground-truth masks.
    Synth(SynthArgs),
    /// Train the segmentor on the labeled source domain.
    TrainSeg(TrainSegArgs),
    /// Train the translation cycle between the two domains.
    TrainLcgan(TrainLcganArgs),
    /// Run every image in a directory through a generator checkpoint.
    Translate(TranslateArgs),
    /// Score a segmentor on a domain's holdout, optionally after translation.
    Evaluate(EvaluateArgs),
    /// Audit analytic loss gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Train all eight loss/backbone flag combinations and compare them.
    Ablate(AblateArgs),
    /// Write a real | translated | mask contact sheet for visual inspection.
    Preview(PreviewArgs),
}

/// Synthesis settings: the two domain specifications plus how many images
/// to draw from each. This is what `synth` snapshots and accepts back.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
struct SynthManifest {
    x: DomainSpec,
    y: DomainSpec,
    count: usize,
}

impl Default for SynthManifest {
    fn default() -> Self {
        let (x, y) = synth::default_specs();
        SynthManifest { x, y, count: 400 }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Synthesis manifest JSON; defaults are used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root; domains land in <OUT>/X and <OUT>/Y.
    #[arg(long, default_value = "data")]
    out: PathBuf,
    /// Images per domain.
    #[arg(long)]
    count: Option<usize>,
    /// Square image side in pixels.
    #[arg(long)]
    size: Option<usize>,
    /// Seed for both domains (their streams differ by domain tag).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainSegArgs {
    /// Run configuration JSON; missing sections fill from defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root containing the domain directories.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Domain to train on; overrides the configured source domain.
    #[arg(long)]
    domain: Option<String>,
    #[arg(long, default_value = "runs/seg")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct TrainLcganArgs {
    /// Run configuration JSON; missing sections fill from defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root containing the domain directories.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Segmentor checkpoint; required when segmentation consistency or the
    /// trained backbone is on.
    #[arg(long)]
    segmentor: Option<PathBuf>,
    #[arg(long, default_value = "runs/lcgan")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Three 0/1 digits: structural similarity, segmentation consistency,
    /// trained backbone. Example: 101.
    #[arg(long)]
    ablation: Option<String>,
}

#[derive(Args)]
struct TranslateArgs {
    /// Generator checkpoint directory.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory of .ppm images to translate.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Run configuration JSON; missing sections fill from defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root containing the domain directories.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Segmentor checkpoint directory.
    #[arg(long)]
    segmentor: PathBuf,
    /// Optional generator checkpoint applied before segmentation.
    #[arg(long)]
    translator: Option<PathBuf>,
    /// Domain whose holdout is scored; overrides the configured target.
    #[arg(long)]
    domain: Option<String>,
    #[arg(long, default_value = "runs/eval")]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Seeds audited, starting at --seed.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional directory for the text report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// Run configuration JSON; missing sections fill from defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root containing the domain directories.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Segmentor checkpoint directory.
    #[arg(long)]
    segmentor: PathBuf,
    #[arg(long, default_value = "runs/ablate")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
}

#[derive(Args)]
struct PreviewArgs {
    /// Run configuration JSON; missing sections fill from defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root containing the domain directories.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Optional generator checkpoint for the middle column; without it the
    /// input is repeated there.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Domain sampled for the sheet; overrides the configured target.
    #[arg(long)]
    domain: Option<String>,
    /// Rows on the sheet, drawn from the start of the domain's holdout.
    #[arg(long, default_value_t = 8)]
    count: usize,
    #[arg(long, default_value = "runs/preview")]
    out: PathBuf,
}

/// Runs the CLI; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes, not flag errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = thread_count() {
        eprintln!("error: {e}");
        return 1;
    }
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Validation failures exit 1; failures of the run itself exit 2.
fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Dataset(_) | Error::Checkpoint { .. } => 1,
        _ => 2,
    }
}

/// LCGAN_THREADS is accepted for interface stability but this build always
/// executes single-threaded so runs stay bit-reproducible.
fn thread_count() -> Result<usize> {
    match std::env::var("LCGAN_THREADS") {
        Err(_) => Ok(1),
        Ok(raw) => match raw.trim().parse::<usize>() {
            Ok(n) if n >= 1 => {
                if n > 1 {
                    eprintln!(
                        "note: LCGAN_THREADS={n} requested; execution is \
                         single-threaded for reproducibility"
                    );
                }
                Ok(n)
            }
            _ => Err(Error::Config(format!(
                "LCGAN_THREADS must be a positive integer, got {raw:?}"
            ))),
        },
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth(args) => cmd_synth(args),
        Command::TrainSeg(args) => cmd_train_seg(args),
        Command::TrainLcgan(args) => cmd_train_lcgan(args),
        Command::Translate(args) => cmd_translate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Preview(args) => cmd_preview(args),
    }
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let mut manifest = match &args.config {
        None => SynthManifest::default(),
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?
        }
    };
    if let Some(n) = args.count {
        manifest.count = n;
    }
    if let Some(size) = args.size {
        manifest.x.image_size = size;
        manifest.y.image_size = size;
    }
    if let Some(seed) = args.seed {
        manifest.x.seed = seed;
        manifest.y.seed = seed;
    }
    manifest.x.validate()?;
    manifest.y.validate()?;
    if manifest.count == 0 {
        return Err(Error::Config("count must be at least 1".into()));
    }

    synth::generate(&manifest.x, manifest.count, &args.out)?;
    synth::generate(&manifest.y, manifest.count, &args.out)?;
    write_snapshot(&args.out, &manifest)?;
    println!(
        "wrote {count} {xs}x{xs} images per domain under {root} ({xd} and {yd})",
        count = manifest.count,
        xs = manifest.x.image_size,
        root = args.out.display(),
        xd = manifest.x.domain.tag(),
        yd = manifest.y.domain.tag(),
    );
    Ok(())
}

fn cmd_train_seg(args: TrainSegArgs) -> Result<()> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(data) = args.data {
        config.data.root = data;
    }
    if let Some(domain) = args.domain {
        config.data.source_domain = domain;
    }
    if let Some(seed) = args.seed {
        config.run.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        config.run.epochs = epochs;
    }
    config.validate()?;

    let samples = load_domain(&config, &config.data.source_domain)?;
    let (train, val) = split_holdout(&samples, config.data.holdout)?;
    println!(
        "training segmentor on {} ({} train / {} holdout), {} epochs",
        config.data.source_domain,
        train.len(),
        val.len(),
        config.run.epochs
    );

    let (net, report) = train_segmentor::<S>(train, val, &config)?;

    let mut metadata = Metadata::new();
    metadata.insert("domain".into(), config.data.source_domain.clone().into());
    metadata.insert("seed".into(), config.run.seed.into());
    metadata.insert("epochs".into(), config.run.epochs.into());
    metadata.insert("best_epoch".into(), report.best_epoch.into());
    metadata.insert("best_val_dsc".into(), report.best_val.dsc.into());
    metadata.insert("best_val_iou".into(), report.best_val.iou.into());
    save_net(
        &args.out.join("segmentor"),
        &net,
        &Architecture::Segmentor {
            config: net.config.clone(),
        },
        metadata,
    )?;

    let mut log = String::from("epoch,loss,val_dsc,val_iou\n");
    for (epoch, loss) in report.epoch_losses.iter().enumerate() {
        let val = &report.val_history[epoch];
        let _ = writeln!(log, "{epoch},{loss:.6},{:.6},{:.6}", val.dsc, val.iou);
    }
    write_file(&args.out.join("train_log.csv"), &log)?;
    write_snapshot(&args.out, &config)?;

    println!(
        "best holdout mDSC {:.3} / mIoU {:.3} at epoch {}; checkpoint in {}",
        report.best_val.dsc,
        report.best_val.iou,
        report.best_epoch,
        args.out.join("segmentor").display()
    );
    Ok(())
}

fn cmd_train_lcgan(args: TrainLcganArgs) -> Result<()> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(data) = args.data {
        config.data.root = data;
    }
    if let Some(seed) = args.seed {
        config.run.seed = seed;
    }
    if let Some(iterations) = args.iterations {
        config.run.iterations = iterations;
    }
    if let Some(tag) = &args.ablation {
        config.run.ablation = AblationFlags::from_tag(tag)?;
    }
    config.validate()?;

    let segmentor = match &args.segmentor {
        Some(dir) => Some(load_segmentor::<S>(checkpoint_dir(dir)?)?),
        None => None,
    };
    let output = run_lcgan(&config, segmentor.as_ref(), &args.out)?;
    write_snapshot(&args.out, &config)?;

    let last = output.log.last().expect("at least one iteration");
    println!(
        "finished {} iterations (flags {}); final generator objective {:.4}; \
         checkpoints in {}",
        config.run.iterations,
        config.run.ablation.tag(),
        last.total_generator,
        args.out.display()
    );
    Ok(())
}

/// Loads both training splits, trains the cycle, writes checkpoints and the
/// iteration log under `out`.
fn run_lcgan(
    config: &TrainConfig,
    segmentor: Option<&Segmentor<S>>,
    out: &Path,
) -> Result<GanTrainOutput<S>> {
    let x = load_domain(config, &config.data.source_domain)?;
    let y = load_domain(config, &config.data.target_domain)?;
    let (x_train, _) = split_holdout(&x, config.data.holdout)?;
    let (y_train, _) = split_holdout(&y, config.data.holdout)?;

    let output = train_lcgan::<S>(x_train, y_train, segmentor, config, Some(out))?;

    let mut log = GanLogRow::csv_header();
    log.push('\n');
    for row in &output.log {
        log.push_str(&row.csv_line());
        log.push('\n');
    }
    write_file(&out.join("log.csv"), &log)?;
    Ok(output)
}

fn cmd_translate(args: TranslateArgs) -> Result<()> {
    checkpoint_dir(&args.checkpoint)?;
    if !args.input.is_dir() {
        return Err(Error::Config(format!(
            "no input directory at {}",
            args.input.display()
        )));
    }
    let names = translate::<S>(&args.checkpoint, &args.input, &args.out)?;
    write_snapshot(
        &args.out,
        &serde_json::json!({
            "command": "translate",
            "checkpoint": args.checkpoint,
            "input": args.input,
        }),
    )?;
    println!("translated {} images into {}", names.len(), args.out.display());
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(data) = args.data {
        config.data.root = data;
    }
    if let Some(domain) = args.domain {
        config.data.target_domain = domain;
    }
    config.validate()?;

    let segmentor = load_segmentor::<S>(checkpoint_dir(&args.segmentor)?)?;
    let translator = match &args.translator {
        Some(dir) => Some(load_generator::<S>(checkpoint_dir(dir)?)?),
        None => None,
    };
    let samples = load_domain(&config, &config.data.target_domain)?;
    let (_, holdout) = split_holdout(&samples, config.data.holdout)?;

    let name = match &args.translator {
        Some(_) => format!("{} via translation", config.data.target_domain),
        None => config.data.target_domain.clone(),
    };
    let report = evaluate_system(&name, &segmentor, translator.as_ref(), holdout)?;
    write_file(&args.out.join("report.csv"), &report.csv())?;
    write_snapshot(&args.out, &config)?;

    println!(
        "{}: mDSC {:.1} / mIoU {:.1} over {} holdout images",
        report.name,
        100.0 * report.mean.dsc,
        100.0 * report.mean.iou,
        report.per_image.len()
    );
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<()> {
    let mut report = String::new();
    let mut worst: f64 = 0.0;
    let mut all_passed = true;
    for seed in args.seed..args.seed + args.seeds {
        for (name, audit) in audit_gradients(seed)? {
            let _ = writeln!(
                report,
                "seed {seed} {name:<26} max rel err {:9.3e} {}",
                audit.max_relative_error,
                if audit.passed { "pass" } else { "FAIL" }
            );
            worst = worst.max(audit.max_relative_error);
            all_passed &= audit.passed;
        }
    }
    let _ = writeln!(
        report,
        "worst over {} seeds: {worst:.3e} (tolerance 1e-4)",
        args.seeds
    );
    print!("{report}");
    if let Some(out) = &args.out {
        write_file(&out.join("gradcheck.txt"), &report)?;
    }
    if all_passed {
        Ok(())
    } else {
        Err(Error::AuditFailed { worst })
    }
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(data) = args.data {
        config.data.root = data;
    }
    if let Some(seed) = args.seed {
        config.run.seed = seed;
    }
    if let Some(iterations) = args.iterations {
        config.run.iterations = iterations;
    }
    config.validate()?;

    let segmentor = load_segmentor::<S>(checkpoint_dir(&args.segmentor)?)?;
    let y = load_domain(&config, &config.data.target_domain)?;
    let (_, y_holdout) = split_holdout(&y, config.data.holdout)?;

    let baseline = evaluate_system("baseline", &segmentor, None, y_holdout)?;
    println!(
        "no-translation baseline on {}: mDSC {:.1} / mIoU {:.1}",
        config.data.target_domain,
        100.0 * baseline.mean.dsc,
        100.0 * baseline.mean.iou
    );

    let mut table = String::from("ssim,seg,trained_backbone,dsc,iou\n");
    for flags in AblationFlags::all_combinations() {
        let mut run_config = config.clone();
        run_config.run.ablation = flags;
        let run_dir = args.out.join(flags.tag());
        let output = run_lcgan(&run_config, Some(&segmentor), &run_dir)?;
        let report = evaluate_system(&flags.tag(), &segmentor, Some(&output.f), y_holdout)?;
        let _ = writeln!(
            table,
            "{},{},{},{:.1},{:.1}",
            u8::from(flags.ssim_on),
            u8::from(flags.seg_on),
            u8::from(flags.trained_backbone_on),
            100.0 * report.mean.dsc,
            100.0 * report.mean.iou
        );
        println!(
            "flags {}: mDSC {:.1} / mIoU {:.1}",
            flags.tag(),
            100.0 * report.mean.dsc,
            100.0 * report.mean.iou
        );
    }
    write_file(&args.out.join("comparison.csv"), &table)?;
    write_snapshot(&args.out, &config)?;
    println!("comparison table in {}", args.out.join("comparison.csv").display());
    Ok(())
}

fn cmd_preview(args: PreviewArgs) -> Result<()> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(data) = args.data {
        config.data.root = data;
    }
    if let Some(domain) = args.domain {
        config.data.target_domain = domain;
    }
    config.validate()?;
    if args.count == 0 {
        return Err(Error::Config("count must be at least 1".into()));
    }

    let translator = match &args.checkpoint {
        Some(dir) => Some(load_generator::<S>(checkpoint_dir(dir)?)?),
        None => None,
    };
    let samples = load_domain(&config, &config.data.target_domain)?;
    let (_, holdout) = split_holdout(&samples, config.data.holdout)?;
    let rows = holdout.len().min(args.count);

    let mut sheet_rows = Vec::with_capacity(rows);
    for sample in &holdout[..rows] {
        let translated = match &translator {
            None => sample.image.clone(),
            Some(gen) => {
                let x = crate::image::to_model_range(&sample.image.to_tensor::<S>());
                ImageRgb::from_tensor(&crate::image::to_unit_range(&gen.forward(&x)?))?
            }
        };
        sheet_rows.push((sample.image.clone(), translated, sample.mask.clone()));
    }
    let sheet = compose_sheet(&sheet_rows);
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let path = args.out.join("preview.ppm");
    pnm::write_ppm(&path, &sheet)?;
    write_snapshot(&args.out, &config)?;
    println!(
        "{} rows (real | translated | mask) in {}",
        rows,
        path.display()
    );
    Ok(())
}

/// Stacks (real, translated, mask) triples into one image, each row
/// `real | translated | mask` with a 2-pixel white gutter.
fn compose_sheet(rows: &[(ImageRgb, ImageRgb, MaskImage)]) -> ImageRgb {
    const GUTTER: usize = 2;
    let (w, h) = (rows[0].0.width, rows[0].0.height);
    let sheet_w = 3 * w + 2 * GUTTER;
    let sheet_h = rows.len() * h + (rows.len() - 1) * GUTTER;
    let mut sheet = ImageRgb::new(sheet_w, sheet_h);
    sheet.data.fill(1.0);

    let mut blit = |dst_x: usize, dst_y: usize, pixel: &dyn Fn(usize, usize) -> [f32; 3]| {
        for r in 0..h {
            for c in 0..w {
                let o = ((dst_y + r) * sheet_w + dst_x + c) * 3;
                sheet.data[o..o + 3].copy_from_slice(&pixel(c, r));
            }
        }
    };
    for (i, (real, fake, mask)) in rows.iter().enumerate() {
        let y0 = i * (h + GUTTER);
        blit(0, y0, &|c, r| real.pixel(c, r));
        blit(w + GUTTER, y0, &|c, r| fake.pixel(c, r));
        blit(2 * (w + GUTTER), y0, &|c, r| {
            let v = f32::from(mask.labels[r * w + c]);
            [v, v, v]
        });
    }
    sheet
}

/// Everything wrong with a user-supplied config file is a validation error,
/// including the file being unreadable or malformed.
fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        None => Ok(TrainConfig::default()),
        Some(p) => TrainConfig::load(p).map_err(|e| match e {
            Error::Config(_) => e,
            other => Error::Config(format!("config {}: {other}", p.display())),
        }),
    }
}

/// Rejects a missing checkpoint directory as a validation error before the
/// loader reports it as an i/o failure.
fn checkpoint_dir(dir: &Path) -> Result<&Path> {
    if dir.is_dir() {
        Ok(dir)
    } else {
        Err(Error::Config(format!(
            "no checkpoint directory at {}",
            dir.display()
        )))
    }
}

fn load_domain(config: &TrainConfig, domain: &str) -> Result<Vec<Sample>> {
    let dir = config.data.root.join(domain);
    if !dir.is_dir() {
        return Err(Error::Config(format!(
            "no dataset directory at {} (run synth first?)",
            dir.display()
        )));
    }
    let dataset = DiskDataset::open(&dir)?;
    (0..dataset.len()).map(|i| dataset.load(i)).collect()
}

/// Leading samples train, trailing `holdout` samples are reserved.
fn split_holdout(samples: &[Sample], holdout: usize) -> Result<(&[Sample], &[Sample])> {
    if holdout == 0 || holdout >= samples.len() {
        return Err(Error::Config(format!(
            "holdout must be between 1 and {} (dataset size {}), got {holdout}",
            samples.len().saturating_sub(1),
            samples.len()
        )));
    }
    Ok(samples.split_at(samples.len() - holdout))
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

fn write_snapshot(out: &Path, config: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(config)?;
    text.push('\n');
    write_file(&out.join(SNAPSHOT_FILE), &text)
}
