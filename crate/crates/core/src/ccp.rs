//! The color channel perturbation transform.
//!
//! Each output channel of a transformed image is a weighted combination of
//! the three input channels:
//!
//! ```text
//! R'(p) = s * ((ar*R(p) + ag*G(p) + ab*B(p)) / 3) + b
//! G'(p) = s * ((br*R(p) + bg*G(p) + bb*B(p)) / 3) + b
//! B'(p) = s * ((cr*R(p) + cg*G(p) + cb*B(p)) / 3) + b
//! ```
//!
//! with the nine weights drawn uniformly from [L, U] and shared by every
//! pixel of an image. The floating-point evaluation order is frozen —
//! products summed left to right, then the division by 3, then the scale,
//! then the bias — so independent implementations agree bit for bit.
//!
//! Two schemes differ in weight sharing across a test set: the fixed
//! scheme draws one weight matrix per trial and applies it to every image;
//! the variable scheme draws an independent matrix per image. Either way a
//! fresh trial index redraws everything.

use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::Result;
use crate::image::Image;
use crate::prng::{Purpose, RngState, SeedPath};

/// Weight-sharing scheme across the images of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// One weight matrix for every image in the trial.
    Fixed,
    /// An independent weight matrix per image.
    Variable,
}

/// Transform hyperparameters: scale `s`, bias `b`, weight bounds [L, U],
/// and the weight-sharing scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CcpParams {
    pub scale: f64,
    pub bias: f64,
    pub lower: f64,
    pub upper: f64,
    pub scheme: Scheme,
}

impl CcpParams {
    /// Low-resolution profile: s=2, b=0, weights in [0, 1].
    pub fn cifar_profile(scheme: Scheme) -> CcpParams {
        CcpParams {
            scale: 2.0,
            bias: 0.0,
            lower: 0.0,
            upper: 1.0,
            scheme,
        }
    }

    /// High-resolution profile: s=1, b=30, weights in [0, 1].
    pub fn highres_profile(scheme: Scheme) -> CcpParams {
        CcpParams {
            scale: 1.0,
            bias: 30.0,
            lower: 0.0,
            upper: 1.0,
            scheme,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower > self.upper {
            return Err(crate::error::Error::InvalidArgument(format!(
                "weight bounds lower {} > upper {}",
                self.lower, self.upper
            )));
        }
        Ok(())
    }
}

/// The nine per-image random weights. Row `alpha` builds the output red
/// channel, `beta` green, `gamma` blue; within a row the entries weight
/// the input R, G, B channels in that order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightMatrix {
    pub alpha: [f64; 3],
    pub beta: [f64; 3],
    pub gamma: [f64; 3],
}

impl WeightMatrix {
    pub fn rows(&self) -> [[f64; 3]; 3] {
        [self.alpha, self.beta, self.gamma]
    }

    /// Draw the nine weights from an already-derived stream, in the frozen
    /// order ar, ag, ab, br, bg, bb, cr, cg, cb.
    pub fn draw(rng: &mut RngState, lower: f64, upper: f64) -> WeightMatrix {
        let mut nine = [0.0; 9];
        for w in nine.iter_mut() {
            *w = rng.uniform_in(lower, upper);
        }
        WeightMatrix {
            alpha: [nine[0], nine[1], nine[2]],
            beta: [nine[3], nine[4], nine[5]],
            gamma: [nine[6], nine[7], nine[8]],
        }
    }
}

/// Everything that determines the weights of one trial: the transform
/// parameters, the experiment base seed, and the trial number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CcpTrialPlan {
    pub params: CcpParams,
    pub base_seed: u64,
    pub trial_index: u64,
}

impl CcpTrialPlan {
    pub fn new(params: CcpParams, base_seed: u64, trial_index: u64) -> CcpTrialPlan {
        CcpTrialPlan {
            params,
            base_seed,
            trial_index,
        }
    }
}

/// Weights for image `image_index` under the plan. The fixed scheme
/// derives from image index 0 regardless of the argument, which is what
/// makes its matrix identical across a trial; a fresh trial index redraws
/// the fixed matrix too.
pub fn draw_weights(plan: &CcpTrialPlan, image_index: u64) -> WeightMatrix {
    let effective_index = match plan.params.scheme {
        Scheme::Fixed => 0,
        Scheme::Variable => image_index,
    };
    let mut rng = SeedPath::new(
        plan.base_seed,
        plan.trial_index,
        effective_index,
        Purpose::CcpWeights,
    )
    .derive();
    WeightMatrix::draw(&mut rng, plan.params.lower, plan.params.upper)
}

/// Apply the transform to a compute-domain image. No clipping happens
/// here; callers convert with `to_storage` at the boundary.
pub fn apply_ccp(image: &Image, weights: &WeightMatrix, params: &CcpParams) -> Image {
    let n = image.plane_len();
    let (r, g, b) = (image.plane(0), image.plane(1), image.plane(2));
    let (s, bias) = (params.scale, params.bias);
    let mut out = Vec::with_capacity(3 * n);
    for row in [weights.alpha, weights.beta, weights.gamma] {
        let [wr, wg, wb] = row;
        for p in 0..n {
            // Frozen order: left-to-right sum, /3, *s, +b.
            out.push(s * ((wr * r[p] + wg * g[p] + wb * b[p]) / 3.0) + bias);
        }
    }
    Image::from_planar(image.height(), image.width(), out)
        .expect("output layout mirrors input layout")
}

/// Transform a storage-domain dataset: labels, order and length are
/// preserved; every image passes through compute domain, the transform,
/// and storage conversion. Images fan out across the rayon pool; the
/// result is identical for any worker count because each image's weights
/// come from its own derived seed.
pub fn attack_dataset(ds: &Dataset, plan: &CcpTrialPlan) -> Result<Dataset> {
    plan.params.validate()?;
    let images: Vec<Image> = ds
        .images()
        .par_iter()
        .enumerate()
        .map(|(i, image)| {
            let weights = draw_weights(plan, i as u64);
            apply_ccp(&image.to_compute(), &weights, &plan.params).to_storage()
        })
        .collect();
    ds.with_images(images)
}
