//! `ccp` — command-line front end for the color channel perturbation
//! toolkit.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error, 3 internal
//! invariant violation. All randomness flows from `--seed` flags; no
//! subcommand writes any output file before its inputs validate.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ccp_core::analysis::{emit_csv, emit_histogram_csv, histogram};
use ccp_core::attacks::{fgsm_attack, one_pixel_attack, FgsmParams, OnePixelParams};
use ccp_core::ccp::{attack_dataset, CcpParams, CcpTrialPlan, Scheme};
use ccp_core::dataset::{load_ppm_dir, load_records_auto, write_ppm_dir, write_records, Dataset};
use ccp_core::error::Error;
use ccp_core::harness::{parse_plan, run_experiment};
use ccp_core::image::read_ppm;
use ccp_core::model::{checkpoint, evaluate, train, Augmentation, Model, ModelSpec, TrainConfig};
use ccp_core::prng::{Purpose, SeedPath};
use ccp_core::synthetic::gen_synthetic;

#[derive(Parser)]
#[command(
    name = "ccp",
    about = "Color channel perturbation attacks, CNN training, and experiment harness",
    version
)]
struct Cli {
    /// Worker threads for parallel sections (output is identical for any
    /// value).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Transform a dataset with a CCP, sign-gradient or one-pixel attack.
    Attack(AttackArgs),
    /// Train the small CNN, optionally with CCP augmentation.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Per-channel histogram of a PPM image as CSV.
    Hist(HistArgs),
    /// Run a full multi-trial experiment from a plan file.
    Experiment(ExperimentArgs),
    /// Generate the dominant-channel synthetic dataset.
    GenSynthetic(GenSyntheticArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackMethod {
    Ccp,
    Fgsm,
    Onepixel,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Fixed,
    Variable,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Scheme {
        match s {
            SchemeArg::Fixed => Scheme::Fixed,
            SchemeArg::Variable => Scheme::Variable,
        }
    }
}

#[derive(Args)]
struct DataGeometry {
    /// Image height for binary record files.
    #[arg(long, default_value_t = 32)]
    height: usize,
    /// Image width for binary record files.
    #[arg(long, default_value_t = 32)]
    width: usize,
    /// Class count; inferred from the labels when omitted.
    #[arg(long)]
    num_classes: Option<usize>,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long, value_enum)]
    method: AttackMethod,
    /// Input dataset: binary record file, or a directory of
    /// <index>_<label>.ppm files.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output dataset: .bin file or directory (PPMs).
    #[arg(long = "out")]
    output: PathBuf,
    #[command(flatten)]
    geometry: DataGeometry,

    /// CCP weight-sharing scheme.
    #[arg(long, value_enum, default_value = "variable")]
    scheme: SchemeArg,
    /// CCP scale factor s.
    #[arg(long, default_value_t = 2.0)]
    scale: f64,
    /// CCP bias b.
    #[arg(long, default_value_t = 0.0)]
    bias: f64,
    /// Lower weight bound L.
    #[arg(long, default_value_t = 0.0)]
    lower: f64,
    /// Upper weight bound U.
    #[arg(long, default_value_t = 1.0)]
    upper: f64,
    /// Base seed for stochastic attacks.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trial index for stochastic attacks.
    #[arg(long, default_value_t = 0)]
    trial: u64,

    /// Model checkpoint (required by fgsm and onepixel).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Sign-gradient step in raw intensity units.
    #[arg(long, default_value_t = 8.0)]
    epsilon: f64,

    /// One-pixel DE population size.
    #[arg(long, default_value_t = 50)]
    pop: usize,
    /// One-pixel DE iterations.
    #[arg(long, default_value_t = 40)]
    iters: usize,
    /// One-pixel DE differential weight F.
    #[arg(long, default_value_t = 0.5)]
    de_f: f64,
    /// One-pixel DE crossover rate CR.
    #[arg(long, default_value_t = 0.9)]
    de_cr: f64,
    /// Pixels the one-pixel attack may change.
    #[arg(long, default_value_t = 1)]
    budget: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset (.bin records or PPM directory).
    #[arg(long = "train")]
    train_path: PathBuf,
    /// Checkpoint output path.
    #[arg(long = "out")]
    output: PathBuf,
    #[command(flatten)]
    geometry: DataGeometry,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    /// Constant learning rate (ignored when --lr-schedule is given).
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Staged schedule, e.g. "10x0.001,5x0.0001"; stage counts must sum
    /// to --epochs.
    #[arg(long)]
    lr_schedule: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Enable on-the-fly CCP augmentation (variable-scheme weights).
    #[arg(long, default_value_t = false)]
    augment: bool,
    /// Probability an image is replaced by its CCP transform.
    #[arg(long, default_value_t = 0.5)]
    aug_prob: f64,
    #[arg(long, default_value_t = 2.0)]
    scale: f64,
    #[arg(long, default_value_t = 0.0)]
    bias: f64,
    #[arg(long, default_value_t = 0.0)]
    lower: f64,
    #[arg(long, default_value_t = 1.0)]
    upper: f64,
    /// Random horizontal flips.
    #[arg(long, default_value_t = false)]
    flip: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Dataset to score (.bin records or PPM directory).
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    geometry: DataGeometry,
}

#[derive(Args)]
struct HistArgs {
    /// PPM image to histogram.
    #[arg(long = "in")]
    input: PathBuf,
    /// CSV output (channel,bin,count).
    #[arg(long = "out")]
    output: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Plan file (flat key = value lines).
    #[arg(long)]
    plan: PathBuf,
    /// Output directory for checkpoints and CSVs.
    #[arg(long = "out")]
    output: PathBuf,
}

#[derive(Args)]
struct GenSyntheticArgs {
    #[arg(long, default_value_t = 200)]
    num_per_class: usize,
    /// Square image side length.
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output record file.
    #[arg(long = "out")]
    output: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version arrive as Err but exit cleanly
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };

    if let Some(workers) = cli.workers {
        if workers == 0 {
            eprintln!("error: --workers must be >= 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
        {
            eprintln!("error: cannot size thread pool: {e}");
            return ExitCode::from(3);
        }
    }

    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) | Error::ModelSpec(_) => 1,
        Error::Io { .. } | Error::Format { .. } | Error::CorruptRecord { .. } => 2,
        Error::Internal(_) => 3,
    }
}

fn run(command: Command) -> ccp_core::Result<()> {
    match command {
        Command::Attack(args) => cmd_attack(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Hist(args) => cmd_hist(args),
        Command::Experiment(args) => cmd_experiment(args),
        Command::GenSynthetic(args) => cmd_gen_synthetic(args),
    }
}

/// Load a dataset from a record file or a PPM directory.
fn load_dataset(path: &Path, geometry: &DataGeometry) -> ccp_core::Result<Dataset> {
    if path.is_dir() {
        load_ppm_dir(path, geometry.num_classes)
    } else {
        load_records_auto(path, geometry.height, geometry.width, geometry.num_classes)
    }
}

/// Write a dataset to a record file, or to a PPM directory when the path
/// is an existing directory or has no file extension.
fn write_dataset(ds: &Dataset, path: &Path) -> ccp_core::Result<()> {
    if path.is_dir() || path.extension().is_none() {
        write_ppm_dir(ds, path)
    } else {
        write_records(ds, path)
    }
}

fn cmd_attack(args: AttackArgs) -> ccp_core::Result<()> {
    let ds = load_dataset(&args.input, &args.geometry)?;
    let attacked = match args.method {
        AttackMethod::Ccp => {
            let params = CcpParams {
                scale: args.scale,
                bias: args.bias,
                lower: args.lower,
                upper: args.upper,
                scheme: args.scheme.into(),
            };
            params.validate()?;
            attack_dataset(&ds, &CcpTrialPlan::new(params, args.seed, args.trial))?
        }
        AttackMethod::Fgsm => {
            let model = load_model_for(&args, &ds)?;
            let params = FgsmParams {
                epsilon: args.epsilon,
            };
            let images = map_images(&ds, |i, image, label| {
                let _ = i;
                fgsm_attack(&model, image, label, &params)
            })?;
            ds.with_images(images)?
        }
        AttackMethod::Onepixel => {
            let model = load_model_for(&args, &ds)?;
            let params = OnePixelParams {
                pixel_budget: args.budget,
                population: args.pop,
                iterations: args.iters,
                de_f: args.de_f,
                de_cr: args.de_cr,
            };
            let images = map_images(&ds, |i, image, label| {
                let path = SeedPath::new(args.seed, args.trial, i as u64, Purpose::AttackSearch);
                one_pixel_attack(&model, image, label, &params, path)
            })?;
            ds.with_images(images)?
        }
    };
    write_dataset(&attacked, &args.output)
}

fn load_model_for(args: &AttackArgs, ds: &Dataset) -> ccp_core::Result<Model> {
    let path = args.model.as_ref().ok_or_else(|| {
        Error::InvalidArgument("--model is required for this attack method".into())
    })?;
    let model = checkpoint::load(path)?;
    if let Some((h, w)) = ds.dims() {
        if h != model.spec().input_height || w != model.spec().input_width {
            return Err(Error::InvalidArgument(format!(
                "dataset images are {}x{} but the model expects {}x{}",
                h,
                w,
                model.spec().input_height,
                model.spec().input_width
            )));
        }
    }
    Ok(model)
}

fn map_images<F>(ds: &Dataset, f: F) -> ccp_core::Result<Vec<ccp_core::image::Image>>
where
    F: Fn(usize, &ccp_core::image::Image, ccp_core::dataset::Label) -> ccp_core::Result<ccp_core::image::Image>
        + Sync,
{
    use rayon::prelude::*;
    ds.images()
        .par_iter()
        .zip(ds.labels().par_iter())
        .enumerate()
        .map(|(i, (image, &label))| f(i, image, label))
        .collect()
}

fn parse_lr_schedule(spec: &str, epochs: usize) -> ccp_core::Result<Vec<(usize, f64)>> {
    let mut out = Vec::new();
    for stage in spec.split(',') {
        let (count, rate) = stage.trim().split_once('x').ok_or_else(|| {
            Error::InvalidArgument(format!("lr schedule stage {stage:?} is not COUNTxRATE"))
        })?;
        let count: usize = count
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad stage count in {stage:?}")))?;
        let rate: f64 = rate
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad stage rate in {stage:?}")))?;
        out.push((count, rate));
    }
    let total: usize = out.iter().map(|(c, _)| c).sum();
    if total != epochs {
        return Err(Error::InvalidArgument(format!(
            "lr schedule covers {total} epochs but --epochs is {epochs}"
        )));
    }
    Ok(out)
}

fn cmd_train(args: TrainArgs) -> ccp_core::Result<()> {
    let ds = load_dataset(&args.train_path, &args.geometry)?;
    let (h, w) = ds
        .dims()
        .ok_or_else(|| Error::InvalidArgument("training set is empty".into()))?;
    let schedule = match &args.lr_schedule {
        Some(spec) => parse_lr_schedule(spec, args.epochs)?,
        None => vec![(args.epochs, args.lr)],
    };
    let augmentation = if args.augment {
        Augmentation::CcpVariable {
            params: CcpParams {
                scale: args.scale,
                bias: args.bias,
                lower: args.lower,
                upper: args.upper,
                scheme: Scheme::Variable,
            },
            probability: args.aug_prob,
        }
    } else {
        Augmentation::None
    };
    let config = TrainConfig {
        schedule,
        batch_size: args.batch,
        seed: args.seed,
        augmentation,
        horizontal_flip: args.flip,
    };

    let mut model = Model::init(ModelSpec::small_cnn(h, w, ds.num_classes()), args.seed)?;
    let log = train(&mut model, &ds, &config)?;
    for record in &log.epochs {
        eprintln!(
            "epoch {:>3}  lr {:<8}  loss {:.6}  train-acc {:.4}",
            record.epoch, record.learning_rate, record.mean_loss, record.train_accuracy
        );
    }
    checkpoint::save(&model, &args.output)?;
    println!("saved {}", args.output.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> ccp_core::Result<()> {
    let model = checkpoint::load(&args.model)?;
    let ds = load_dataset(&args.data, &args.geometry)?;
    if ds.num_classes() > model.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "dataset has {} classes but the model outputs {}",
            ds.num_classes(),
            model.num_classes()
        )));
    }
    let accuracy = evaluate(&model, &ds);
    println!("accuracy {:.4}", accuracy);
    Ok(())
}

fn cmd_hist(args: HistArgs) -> ccp_core::Result<()> {
    let image = read_ppm(&args.input)?;
    let hist = histogram(&image)?;
    emit_histogram_csv(&hist, &args.output)
}

fn cmd_experiment(args: ExperimentArgs) -> ccp_core::Result<()> {
    let plan = parse_plan(&args.plan)?;
    let results = run_experiment(&plan, &args.output)?;
    let mut reports = results.plain.reports.clone();
    if let Some(aug) = &results.augmented {
        reports.extend(aug.reports.clone());
    }
    // Combined convenience summary next to the per-model CSVs.
    emit_csv(&reports, &args.output.join("summary.csv"))?;
    for model in std::iter::once(&results.plain).chain(results.augmented.as_ref()) {
        println!("[{}] clean accuracy {:.4}", model.label, model.clean_accuracy);
        for report in &model.reports {
            println!(
                "[{}] {:<10} mean {:.4}  std {:.4}  min {:.4}  max {:.4}  drop {:.2}%",
                model.label,
                report.attack_name,
                report.mean,
                report.std,
                report.min,
                report.max,
                report.drop_percent
            );
        }
    }
    Ok(())
}

fn cmd_gen_synthetic(args: GenSyntheticArgs) -> ccp_core::Result<()> {
    let ds = gen_synthetic(args.num_per_class, args.size, args.seed)?;
    write_records(&ds, &args.output)?;
    println!(
        "wrote {} records ({} classes, {}x{}) to {}",
        ds.len(),
        ds.num_classes(),
        args.size,
        args.size,
        args.output.display()
    );
    Ok(())
}
