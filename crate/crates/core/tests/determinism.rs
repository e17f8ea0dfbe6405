//! Worker-count independence and cross-trial dispersion.

use ccp_core::ccp::{attack_dataset, CcpParams, CcpTrialPlan, Scheme};
use ccp_core::dataset::Dataset;
use ccp_core::synthetic::gen_synthetic;

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

#[test]
fn attack_dataset_is_identical_for_any_worker_count() {
    let ds = gen_synthetic(22, 16, 5).unwrap().take(64);
    let params = CcpParams {
        scale: 2.0,
        bias: 0.0,
        lower: 0.0,
        upper: 1.0,
        scheme: Scheme::Variable,
    };
    let plan = CcpTrialPlan::new(params, 9, 0);
    let sequential: Dataset = in_pool(1, || attack_dataset(&ds, &plan).unwrap());
    for threads in [2, 4, 8] {
        let parallel = in_pool(threads, || attack_dataset(&ds, &plan).unwrap());
        assert_eq!(parallel, sequential, "{threads}-worker run diverged");
    }
}

#[test]
fn training_is_identical_for_any_worker_count() {
    use ccp_core::model::{train, Model, ModelSpec, TrainConfig};
    let ds = gen_synthetic(8, 8, 3).unwrap();
    let run = |threads: usize| {
        in_pool(threads, || {
            let mut model = Model::init(ModelSpec::small_cnn(8, 8, 3), 2).unwrap();
            train(&mut model, &ds, &TrainConfig::new(2, 1e-3, 5, 2)).unwrap();
            model.params().to_vec()
        })
    };
    let single = run(1);
    assert_eq!(run(4), single);
    assert_eq!(run(8), single);
}

/// The fixed scheme shares one weight matrix per trial, so the mean
/// transformed intensity swings hard between trials; the variable scheme
/// averages over per-image draws and barely moves. The std-over-trials of
/// the mean intensity must separate the two schemes by a wide factor.
#[test]
fn fixed_scheme_disperses_more_than_variable_across_trials() {
    for seed in [11u64, 12, 13] {
        let ds = gen_synthetic(34, 16, seed).unwrap().take(100);
        let mut stds = Vec::new();
        for scheme in [Scheme::Fixed, Scheme::Variable] {
            let params = CcpParams {
                scale: 1.0,
                bias: 0.0,
                lower: 0.0,
                upper: 1.0,
                scheme,
            };
            let mut trial_means = Vec::with_capacity(30);
            for t in 0..30 {
                let attacked = attack_dataset(&ds, &CcpTrialPlan::new(params, seed, t)).unwrap();
                let (mut sum, mut count) = (0.0, 0usize);
                for img in attacked.images() {
                    sum += img.data().iter().sum::<f64>();
                    count += img.data().len();
                }
                trial_means.push(sum / count as f64);
            }
            let mean = trial_means.iter().sum::<f64>() / trial_means.len() as f64;
            let var = trial_means
                .iter()
                .map(|m| (m - mean) * (m - mean))
                .sum::<f64>()
                / trial_means.len() as f64;
            stds.push(var.sqrt());
        }
        let ratio = stds[0] / stds[1];
        assert!(
            ratio >= 3.0,
            "seed {seed}: fixed std {} vs variable std {} (ratio {ratio})",
            stds[0],
            stds[1]
        );
    }
}
