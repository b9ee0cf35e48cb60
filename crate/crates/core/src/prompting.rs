//! Prompt generation from specialist predictions, prompt-perturbation
//! uncertainty, and the confidence-aware generalist regularizer.

use crate::config::{ConfidenceMode, Discrepancy, ExperimentConfig, PromptStrategy};
use crate::data::PatchSource;
use crate::error::{Error, Result};
use crate::generalist::{snapped_centroid, GeneralistHandle, Prompt};
use crate::nn::Scalar;
use crate::rng::{substream, Stream};
use crate::ssl::{predictive_entropy, region_selective_loss, RegionMask, UncertaintyMap};
use crate::ssl::uncertainty::mean_of;
use ndarray::{Array3, ArrayView3, Zip};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PromptPlan {
    pub strategy: PromptStrategy,
    pub n_point_variants: usize,
    pub points_per_variant: usize,
    pub threshold: f64,
}

impl PromptPlan {
    pub fn from_config(c: &ExperimentConfig) -> Self {
        PromptPlan {
            strategy: c.prompt_strategy,
            n_point_variants: c.n_point_variants,
            points_per_variant: c.points_per_variant,
            threshold: c.binarization_threshold,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_point_variants == 0 || self.points_per_variant == 0 {
            return Err(Error::Invalid("prompt plan needs at least one point per variant and one variant".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Invalid(format!("binarization threshold {} outside (0,1)", self.threshold)));
        }
        Ok(())
    }

    pub fn variant_count(&self) -> usize {
        match self.strategy {
            PromptStrategy::Mask => 1,
            PromptStrategy::Point => self.n_point_variants,
            PromptStrategy::Both => 1 + self.n_point_variants,
        }
    }
}

/// Loss value, gradient w.r.t. the specialist probability, and diagnostics.
#[derive(Debug, Clone)]
pub struct RegularizationResult<S> {
    pub loss: S,
    pub grad: Array3<S>,
    pub confidence_mask: RegionMask,
    pub uncertainty: UncertaintyMap,
    /// The coarse mask was empty, so no prompt could be built.
    pub skipped: bool,
}

fn binarize<S: Scalar>(prob: &ArrayView3<S>, threshold: f64) -> Array3<u8> {
    prob.mapv(|p| u8::from(p.to_f64().unwrap_or(0.0) >= threshold))
}

fn dims<T>(a: &ArrayView3<T>) -> [usize; 3] {
    let s = a.shape();
    [s[0], s[1], s[2]]
}

/// The binarized prediction as a mask prompt, `None` when it is empty.
pub fn build_mask_prompt<S: Scalar>(prob: &ArrayView3<S>, threshold: f64) -> Option<Prompt> {
    let m = binarize(prob, threshold);
    m.iter().any(|&v| v == 1).then_some(Prompt::Mask(m))
}

/// `n_variants` point prompts of `points_per_variant` positive points each.
/// Variant 0 starts at the snapped foreground centroid; every other point is
/// drawn uniformly from the foreground, each variant from its own substream.
pub fn build_point_prompts<S: Scalar>(
    prob: &ArrayView3<S>,
    threshold: f64,
    points_per_variant: usize,
    n_variants: usize,
    stream: &mut Stream,
) -> Option<Vec<Prompt>> {
    let m = binarize(prob, threshold);
    let fg: Vec<[usize; 3]> = m.indexed_iter().filter(|(_, &v)| v == 1).map(|((i, j, k), _)| [i, j, k]).collect();
    if fg.is_empty() {
        return None;
    }
    let centroid = snapped_centroid(&m)?;
    let prompts = (0..n_variants)
        .map(|v| {
            let mut rng = substream(stream, &format!("variant/{v}"));
            let pts = (0..points_per_variant).map(|i| {
                if v == 0 && i == 0 {
                    centroid
                } else {
                    fg[rng.random_range(0..fg.len())]
                }
            });
            Prompt::positive_points(pts.collect::<Vec<_>>())
        })
        .collect();
    Some(prompts)
}

/// All prompt variants of the plan, `None` when the coarse mask is empty.
pub fn build_prompt_variants<S: Scalar>(prob: &ArrayView3<S>, plan: &PromptPlan, stream: &mut Stream) -> Option<Vec<Prompt>> {
    let mut out = Vec::with_capacity(plan.variant_count());
    if matches!(plan.strategy, PromptStrategy::Mask | PromptStrategy::Both) {
        out.push(build_mask_prompt(prob, plan.threshold)?);
    }
    if matches!(plan.strategy, PromptStrategy::Point | PromptStrategy::Both) {
        out.extend(build_point_prompts(prob, plan.threshold, plan.points_per_variant, plan.n_point_variants, stream)?);
    }
    Some(out)
}

/// Voxelwise discrepancy across prompt-variant predictions: population
/// variance, or the binary entropy of the mean.
pub fn generalist_uncertainty(preds: &[Array3<f32>], discrepancy: Discrepancy) -> Result<UncertaintyMap> {
    if preds.len() < 2 {
        return Err(Error::Invalid(format!("uncertainty needs >= 2 prompt variants, got {}", preds.len())));
    }
    let mean = mean_of(preds)?;
    match discrepancy {
        Discrepancy::EntropyOfMean => Ok(predictive_entropy(&mean)),
        Discrepancy::Variance => {
            let mut acc = Array3::<f64>::zeros(mean.raw_dim());
            for p in preds {
                Zip::from(&mut acc).and(p).and(&mean).for_each(|a, &v, &m| *a += (v as f64 - m as f64).powi(2));
            }
            let n = preds.len() as f64;
            UncertaintyMap::new(acc.mapv(|v| (v / n) as f32))
        }
    }
}

/// `M = 1[U_x < tau]`
pub fn confidence_mask(u: &UncertaintyMap, tau: f64) -> RegionMask {
    crate::ssl::uncertainty_mask(u, tau)
}

/// Settings shared by every generalist query of one step.
#[derive(Debug, Clone, Copy)]
pub struct SamSettings {
    pub tau: f64,
    pub confidence_mode: ConfidenceMode,
    pub discrepancy: Discrepancy,
}

/// Confidence-aware regularization against one generalist, given prebuilt
/// prompt variants (`None` = no prompt could be built).
///
/// Target is the mean of the variant predictions; voxels whose
/// prompt-perturbation uncertainty reaches `tau` are excluded. With a single
/// variant or confidence filtering off, every voxel is kept.
pub fn sam_regularization_with_prompts<S: Scalar>(
    spec_prob: &ArrayView3<S>,
    handle: &GeneralistHandle,
    image: &Array3<f32>,
    source: &PatchSource,
    prompts: Option<&[Prompt]>,
    settings: SamSettings,
) -> Result<RegularizationResult<S>> {
    let shape = dims(spec_prob);
    if image.shape() != spec_prob.shape() {
        return crate::error::shape_err("sam_regularization image/prob", image.shape(), spec_prob.shape());
    }
    let prompts = match prompts {
        Some(p) if !p.is_empty() => p,
        _ => {
            return Ok(RegularizationResult {
                loss: S::zero(),
                grad: Array3::zeros(spec_prob.raw_dim()),
                confidence_mask: RegionMask::new(Array3::zeros(shape))?,
                uncertainty: UncertaintyMap::zeros(shape),
                skipped: true,
            })
        }
    };
    let preds = prompts.iter().map(|p| handle.predict(image, p, source)).collect::<Result<Vec<_>>>()?;
    let target = mean_of(&preds)?;
    let (uncertainty, mask) = if preds.len() < 2 || settings.confidence_mode == ConfidenceMode::None {
        (UncertaintyMap::zeros(shape), RegionMask::ones(shape))
    } else {
        let u = generalist_uncertainty(&preds, settings.discrepancy)?;
        let m = confidence_mask(&u, settings.tau);
        (u, m)
    };
    let target_s = target.mapv(|v| S::lit(v as f64));
    let lg = region_selective_loss(spec_prob, &target_s.view(), &mask.data().view())?;
    Ok(RegularizationResult { loss: lg.value, grad: lg.grad, confidence_mask: mask, uncertainty, skipped: false })
}

/// Builds prompt variants from the (detached) specialist probability and
/// regularizes against one generalist.
pub fn sam_regularization<S: Scalar>(
    spec_prob: &ArrayView3<S>,
    handle: &GeneralistHandle,
    image: &Array3<f32>,
    source: &PatchSource,
    plan: &PromptPlan,
    settings: SamSettings,
    stream: &mut Stream,
) -> Result<RegularizationResult<S>> {
    plan.validate()?;
    let prompts = build_prompt_variants(spec_prob, plan, stream);
    sam_regularization_with_prompts(spec_prob, handle, image, source, prompts.as_deref(), settings)
}
