//! Multi-trial experiment orchestrator.
//!
//! One run trains a plain model, evaluates the whole attack roster over N
//! trials, optionally repeats with a CCP-augmented model, and emits CSV
//! reports. The roster is: clean (evaluated once, replicated across
//! trials), the CCP attack in the schemes the plan selects (fresh weights
//! per trial), the sign-gradient attack (deterministic given the model,
//! so evaluated once and replicated with std 0), and the one-pixel attack
//! (per-trial search seeds).
//!
//! Everything derives from the plan's base seed; rerunning a plan, with
//! any worker count, reproduces the CSVs byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::analysis::{aggregate, emit_csv, TrialReport};
use crate::attacks::{fgsm_attack, one_pixel_attack, FgsmParams, OnePixelParams};
use crate::ccp::{attack_dataset, CcpParams, CcpTrialPlan, Scheme};
use crate::dataset::{load_records_auto, Dataset};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{
    checkpoint, evaluate, train, Augmentation, Model, ModelSpec, TrainConfig, TrainingLog,
};
use crate::prng::{Purpose, SeedPath};

/// Which CCP schemes the roster includes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeFilter {
    Fixed,
    Variable,
    Both,
}

impl SchemeFilter {
    fn includes(self, scheme: Scheme) -> bool {
        matches!(
            (self, scheme),
            (SchemeFilter::Both, _)
                | (SchemeFilter::Fixed, Scheme::Fixed)
                | (SchemeFilter::Variable, Scheme::Variable)
        )
    }
}

/// Fully resolved experiment description (see [`parse_plan`] for the file
/// format).
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub train_path: PathBuf,
    pub test_path: PathBuf,
    pub trials: u64,
    pub base_seed: u64,
    pub scheme: SchemeFilter,
    pub scale: f64,
    pub bias: f64,
    pub lower: f64,
    pub upper: f64,
    pub epsilon: f64,
    pub de: OnePixelParams,
    /// Probability of the training-time CCP augmentation; zero disables
    /// the augmented phase entirely.
    pub aug_prob: f64,
    pub batch: usize,
    pub lr_schedule: Vec<(usize, f64)>,
    pub num_classes: Option<usize>,
    pub height: usize,
    pub width: usize,
    pub flip: bool,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            train_path: PathBuf::new(),
            test_path: PathBuf::new(),
            trials: 30,
            base_seed: 0,
            scheme: SchemeFilter::Both,
            scale: 2.0,
            bias: 0.0,
            lower: 0.0,
            upper: 1.0,
            epsilon: 8.0,
            de: OnePixelParams::default(),
            aug_prob: 0.0,
            batch: 32,
            lr_schedule: vec![(10, 1e-3)],
            num_classes: None,
            height: 32,
            width: 32,
            flip: false,
        }
    }
}

impl ExperimentPlan {
    fn ccp_params(&self, scheme: Scheme) -> CcpParams {
        CcpParams {
            scale: self.scale,
            bias: self.bias,
            lower: self.lower,
            upper: self.upper,
            scheme,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be >= 1".into()));
        }
        if self.batch == 0 {
            return Err(Error::InvalidArgument("batch must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.aug_prob) {
            return Err(Error::InvalidArgument(format!(
                "aug_prob {} outside [0, 1]",
                self.aug_prob
            )));
        }
        self.ccp_params(Scheme::Variable).validate()?;
        if self.epsilon < 0.0 {
            return Err(Error::InvalidArgument("epsilon must be >= 0".into()));
        }
        Ok(())
    }
}

/// Parse the flat key-value plan format: one `key = value` per line, `#`
/// comments and blank lines ignored.
///
/// Keys: `train_path`, `test_path`, `trials`, `seed`, `scheme`
/// (fixed|variable|both), `scale`, `bias`, `lower`, `upper`, `epsilon`,
/// `de_pop`, `de_iters`, `de_budget`, `de_f`, `de_cr`, `aug_prob`,
/// `epochs`, `batch`, `lr_schedule` (comma list of COUNTxRATE stages),
/// `num_classes`, `height`, `width`, `flip`. `train_path` and `test_path`
/// are required; when both `epochs` and `lr_schedule` appear the stage
/// counts must sum to `epochs`.
pub fn parse_plan(path: &Path) -> Result<ExperimentPlan> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut plan = ExperimentPlan::default();
    let mut epochs: Option<usize> = None;
    let mut schedule: Option<Vec<(usize, f64)>> = None;
    let mut saw_train = false;
    let mut saw_test = false;

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::format(path, format!("line {}: expected key = value", lineno + 1))
        })?;
        let (key, value) = (key.trim(), value.trim());
        let bad = |what: &str| Error::format(path, format!("line {}: {}", lineno + 1, what));
        match key {
            "train_path" => {
                plan.train_path = PathBuf::from(value);
                saw_train = true;
            }
            "test_path" => {
                plan.test_path = PathBuf::from(value);
                saw_test = true;
            }
            "trials" => plan.trials = value.parse().map_err(|_| bad("bad trials"))?,
            "seed" => plan.base_seed = value.parse().map_err(|_| bad("bad seed"))?,
            "scheme" => {
                plan.scheme = match value {
                    "fixed" => SchemeFilter::Fixed,
                    "variable" => SchemeFilter::Variable,
                    "both" => SchemeFilter::Both,
                    _ => return Err(bad("scheme must be fixed, variable or both")),
                }
            }
            "scale" => plan.scale = value.parse().map_err(|_| bad("bad scale"))?,
            "bias" => plan.bias = value.parse().map_err(|_| bad("bad bias"))?,
            "lower" => plan.lower = value.parse().map_err(|_| bad("bad lower"))?,
            "upper" => plan.upper = value.parse().map_err(|_| bad("bad upper"))?,
            "epsilon" => plan.epsilon = value.parse().map_err(|_| bad("bad epsilon"))?,
            "de_pop" => plan.de.population = value.parse().map_err(|_| bad("bad de_pop"))?,
            "de_iters" => plan.de.iterations = value.parse().map_err(|_| bad("bad de_iters"))?,
            "de_budget" => {
                plan.de.pixel_budget = value.parse().map_err(|_| bad("bad de_budget"))?
            }
            "de_f" => plan.de.de_f = value.parse().map_err(|_| bad("bad de_f"))?,
            "de_cr" => plan.de.de_cr = value.parse().map_err(|_| bad("bad de_cr"))?,
            "aug_prob" => plan.aug_prob = value.parse().map_err(|_| bad("bad aug_prob"))?,
            "epochs" => epochs = Some(value.parse().map_err(|_| bad("bad epochs"))?),
            "batch" => plan.batch = value.parse().map_err(|_| bad("bad batch"))?,
            "lr_schedule" => schedule = Some(parse_schedule(path, lineno + 1, value)?),
            "num_classes" => {
                plan.num_classes = Some(value.parse().map_err(|_| bad("bad num_classes"))?)
            }
            "height" => plan.height = value.parse().map_err(|_| bad("bad height"))?,
            "width" => plan.width = value.parse().map_err(|_| bad("bad width"))?,
            "flip" => {
                plan.flip = match value {
                    "true" => true,
                    "false" => false,
                    _ => return Err(bad("flip must be true or false")),
                }
            }
            other => {
                return Err(Error::format(
                    path,
                    format!("line {}: unknown key {other}", lineno + 1),
                ))
            }
        }
    }

    if !saw_train || !saw_test {
        return Err(Error::format(path, "train_path and test_path are required"));
    }
    plan.lr_schedule = match (epochs, schedule) {
        (None, None) => plan.lr_schedule,
        (Some(n), None) => vec![(n, 1e-3)],
        (None, Some(s)) => s,
        (Some(n), Some(s)) => {
            let total: usize = s.iter().map(|(c, _)| c).sum();
            if total != n {
                return Err(Error::format(
                    path,
                    format!("lr_schedule stages sum to {total} but epochs = {n}"),
                ));
            }
            s
        }
    };
    plan.validate()?;
    Ok(plan)
}

fn parse_schedule(path: &Path, lineno: usize, value: &str) -> Result<Vec<(usize, f64)>> {
    let mut out = Vec::new();
    for stage in value.split(',') {
        let (count, rate) = stage.trim().split_once('x').ok_or_else(|| {
            Error::format(path, format!("line {lineno}: stage {stage:?} not COUNTxRATE"))
        })?;
        let count = count
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::format(path, format!("line {lineno}: bad stage count")))?;
        let rate = rate
            .trim()
            .parse::<f64>()
            .map_err(|_| Error::format(path, format!("line {lineno}: bad stage rate")))?;
        out.push((count, rate));
    }
    Ok(out)
}

/// One trained model's worth of results.
#[derive(Debug)]
pub struct ModelResults {
    pub label: String,
    pub clean_accuracy: f64,
    pub reports: Vec<TrialReport>,
    pub checkpoint_path: PathBuf,
    pub csv_path: PathBuf,
    pub training_log: TrainingLog,
}

/// Full experiment output: the plain model, and the CCP-augmented model
/// when the plan enables it.
#[derive(Debug)]
pub struct ExperimentResults {
    pub plain: ModelResults,
    pub augmented: Option<ModelResults>,
}

fn stage_err(stage: &str, e: Error) -> Error {
    match e {
        Error::InvalidArgument(m) => Error::InvalidArgument(format!("{stage}: {m}")),
        Error::ModelSpec(m) => Error::ModelSpec(format!("{stage}: {m}")),
        Error::Internal(m) => Error::Internal(format!("{stage}: {m}")),
        other => other,
    }
}

/// Run the whole experiment, writing checkpoints, per-model result CSVs
/// and training logs under `out_dir`.
pub fn run_experiment(plan: &ExperimentPlan, out_dir: &Path) -> Result<ExperimentResults> {
    plan.validate()?;
    let train_ds = load_records_auto(&plan.train_path, plan.height, plan.width, plan.num_classes)?;
    let test_ds = load_records_auto(&plan.test_path, plan.height, plan.width, plan.num_classes)?;
    if train_ds.is_empty() || test_ds.is_empty() {
        return Err(Error::InvalidArgument("empty train or test set".into()));
    }
    // Unify the class count across both splits when it was inferred.
    let num_classes = plan
        .num_classes
        .unwrap_or_else(|| train_ds.num_classes().max(test_ds.num_classes()));
    let train_ds = Dataset::new(train_ds.images().to_vec(), train_ds.labels().to_vec(), num_classes)?;
    let test_ds = Dataset::new(test_ds.images().to_vec(), test_ds.labels().to_vec(), num_classes)?;

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let plain = run_model_phase(plan, &train_ds, &test_ds, num_classes, out_dir, false)
        .map_err(|e| stage_err("plain phase", e))?;
    let augmented = if plan.aug_prob > 0.0 {
        Some(
            run_model_phase(plan, &train_ds, &test_ds, num_classes, out_dir, true)
                .map_err(|e| stage_err("augmented phase", e))?,
        )
    } else {
        None
    };
    Ok(ExperimentResults { plain, augmented })
}

fn run_model_phase(
    plan: &ExperimentPlan,
    train_ds: &Dataset,
    test_ds: &Dataset,
    num_classes: usize,
    out_dir: &Path,
    augmented: bool,
) -> Result<ModelResults> {
    let label = if augmented { "augmented" } else { "plain" };
    let spec = ModelSpec::small_cnn(plan.height, plan.width, num_classes);
    let mut model = Model::init(spec, plan.base_seed)?;
    let config = TrainConfig {
        schedule: plan.lr_schedule.clone(),
        batch_size: plan.batch,
        seed: plan.base_seed,
        augmentation: if augmented {
            Augmentation::CcpVariable {
                params: plan.ccp_params(Scheme::Variable),
                probability: plan.aug_prob,
            }
        } else {
            Augmentation::None
        },
        horizontal_flip: plan.flip,
    };
    eprintln!("[{label}] training ({} epochs)", config.total_epochs());
    let training_log = train(&mut model, train_ds, &config)?;

    let checkpoint_path = out_dir.join(format!("{label}_model.ckpt"));
    checkpoint::save(&model, &checkpoint_path)?;
    write_training_log(&training_log, &out_dir.join(format!("{label}_training.csv")))?;

    eprintln!("[{label}] evaluating attack roster ({} trials)", plan.trials);
    let reports = evaluate_roster(&model, test_ds, plan)?;
    let csv_path = out_dir.join(format!("{label}_results.csv"));
    emit_csv(&reports, &csv_path)?;

    let clean_accuracy = reports[0].baseline_accuracy;
    Ok(ModelResults {
        label: label.to_string(),
        clean_accuracy,
        reports,
        checkpoint_path,
        csv_path,
        training_log,
    })
}

/// Evaluate clean, CCP (per plan scheme), sign-gradient and one-pixel
/// rows for one trained model. Report order is frozen: clean, ccp_f,
/// ccp_v, fgsm, one_pixel.
pub fn evaluate_roster(
    model: &Model,
    test_ds: &Dataset,
    plan: &ExperimentPlan,
) -> Result<Vec<TrialReport>> {
    let trials = plan.trials as usize;
    let clean = evaluate(model, test_ds);
    let mut reports = vec![aggregate("clean", &vec![clean; trials], clean)?];

    for (scheme, name) in [(Scheme::Fixed, "ccp_f"), (Scheme::Variable, "ccp_v")] {
        if !plan.scheme.includes(scheme) {
            continue;
        }
        let params = plan.ccp_params(scheme);
        let mut accs = Vec::with_capacity(trials);
        for t in 0..plan.trials {
            let attacked =
                attack_dataset(test_ds, &CcpTrialPlan::new(params, plan.base_seed, t))?;
            accs.push(evaluate(model, &attacked));
        }
        reports.push(aggregate(name, &accs, clean)?);
    }

    // Deterministic given the model and epsilon: one evaluation,
    // replicated across trials (std 0 by construction).
    let fgsm_params = FgsmParams {
        epsilon: plan.epsilon,
    };
    let fgsm_images: Vec<Image> = test_ds
        .images()
        .par_iter()
        .zip(test_ds.labels().par_iter())
        .map(|(image, &label)| fgsm_attack(model, image, label, &fgsm_params))
        .collect::<Result<_>>()?;
    let fgsm_acc = evaluate(model, &test_ds.with_images(fgsm_images)?);
    reports.push(aggregate("fgsm", &vec![fgsm_acc; trials], clean)?);

    let mut one_pixel_accs = Vec::with_capacity(trials);
    for t in 0..plan.trials {
        let attacked: Vec<Image> = test_ds
            .images()
            .par_iter()
            .zip(test_ds.labels().par_iter())
            .enumerate()
            .map(|(i, (image, &label))| {
                let path = SeedPath::new(plan.base_seed, t, i as u64, Purpose::AttackSearch);
                one_pixel_attack(model, image, label, &plan.de, path)
            })
            .collect::<Result<_>>()?;
        one_pixel_accs.push(evaluate(model, &test_ds.with_images(attacked)?));
    }
    reports.push(aggregate("one_pixel", &one_pixel_accs, clean)?);

    Ok(reports)
}

fn write_training_log(log: &TrainingLog, path: &Path) -> Result<()> {
    let mut out = String::from("epoch,learning_rate,mean_loss,train_accuracy\n");
    for record in &log.epochs {
        writeln!(
            out,
            "{},{},{:.6},{:.4}",
            record.epoch, record.learning_rate, record.mean_loss, record.train_accuracy
        )
        .expect("writing to a String cannot fail");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
