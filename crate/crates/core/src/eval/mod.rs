//! Full-volume inference and segmentation metrics.

pub mod metrics;
pub mod window;

use crate::data::Case;
use crate::error::{Error, Result};
use crate::nn::{sigmoid, ParamSet, Tensor};
use crate::specialist::UNetArch;
use ndarray::Array3;
use rayon::prelude::*;
use serde::Serialize;
use std::path::Path;

pub use metrics::{dice, jaccard, percentile, surface_distances};
pub use window::sliding_window_infer;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseMetrics {
    pub case_id: String,
    pub dice: f64,
    pub jaccard: f64,
    /// `None` when either mask is empty.
    pub hd95: Option<f64>,
    pub asd: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Aggregate {
    pub dice: f64,
    pub jaccard: f64,
    pub hd95: f64,
    pub asd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub cases: Vec<CaseMetrics>,
    pub mean: Aggregate,
    pub std: Aggregate,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

impl MetricReport {
    /// Aggregates per-case rows. Surface metrics skip undefined cases.
    pub fn from_cases(cases: Vec<CaseMetrics>) -> Self {
        let col = |f: &dyn Fn(&CaseMetrics) -> Option<f64>| cases.iter().filter_map(f).collect::<Vec<_>>();
        let (dm, ds) = mean_std(&col(&|c| Some(c.dice)));
        let (jm, js) = mean_std(&col(&|c| Some(c.jaccard)));
        let (hm, hs) = mean_std(&col(&|c| c.hd95));
        let (am, as_) = mean_std(&col(&|c| c.asd));
        MetricReport {
            cases,
            mean: Aggregate { dice: dm, jaccard: jm, hd95: hm, asd: am },
            std: Aggregate { dice: ds, jaccard: js, hd95: hs, asd: as_ },
        }
    }

    /// `case_id,dice,jaccard,hd95,asd` rows followed by `mean` and `std` rows.
    /// Undefined surface metrics are left empty.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(e.to_string()))?;
        let fmt = |v: Option<f64>| v.filter(|x| x.is_finite()).map(|x| format!("{x:.6}")).unwrap_or_default();
        w.write_record(["case_id", "dice", "jaccard", "hd95", "asd"]).map_err(|e| Error::Data(e.to_string()))?;
        for c in &self.cases {
            w.write_record([c.case_id.clone(), fmt(Some(c.dice)), fmt(Some(c.jaccard)), fmt(c.hd95), fmt(c.asd)])
                .map_err(|e| Error::Data(e.to_string()))?;
        }
        for (name, a) in [("mean", self.mean), ("std", self.std)] {
            w.write_record([name.to_string(), fmt(Some(a.dice)), fmt(Some(a.jaccard)), fmt(Some(a.hd95)), fmt(Some(a.asd))])
                .map_err(|e| Error::Data(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Metrics of one binarized prediction against its label.
pub fn case_metrics(id: &str, pred: &Array3<u8>, label: &Array3<u8>, spacing: [f64; 3]) -> Result<CaseMetrics> {
    let surface = surface_distances(&pred.view(), &label.view(), spacing).ok();
    if surface.is_none() {
        log::warn!("case {id}: empty mask, surface metrics undefined");
    }
    Ok(CaseMetrics {
        case_id: id.to_string(),
        dice: dice(&pred.view(), &label.view())?,
        jaccard: jaccard(&pred.view(), &label.view())?,
        hd95: surface.map(|s| s.0),
        asd: surface.map(|s| s.1),
    })
}

/// Foreground probability of a full volume by sliding-window inference.
pub fn predict_volume(arch: &UNetArch, params: &ParamSet<f32>, volume: &Array3<f32>, stride: [usize; 3]) -> Result<Array3<f32>> {
    sliding_window_infer(volume, arch.patch, stride, |patch| {
        let sh = patch.shape();
        let x = Tensor::from_vec([1, sh[0], sh[1], sh[2]], patch.iter().copied().collect());
        let out = arch.forward(params, &x, None)?;
        let p: Vec<f32> = out.logits.data.iter().map(|&z| sigmoid(z)).collect();
        Ok(Array3::from_shape_vec((sh[0], sh[1], sh[2]), p).expect("window shape"))
    })
}

/// Evaluates labeled cases with `predict`, which maps a case to a
/// probability map. Cases are processed in parallel and reported in order.
pub fn evaluate_with<F>(cases: &[Case], threshold: f32, predict: F) -> Result<MetricReport>
where
    F: Fn(&Case) -> Result<Array3<f32>> + Sync,
{
    let rows = cases
        .par_iter()
        .map(|c| {
            let label = c.mask.as_ref().ok_or_else(|| Error::Data(format!("case {} has no label", c.id())))?;
            let prob = predict(c)?;
            let pred = prob.mapv(|p| u8::from(p >= threshold));
            let sp = label.spacing().map(f64::from);
            case_metrics(c.id(), &pred, label.data(), sp)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::from_cases(rows))
}

/// Sliding-window evaluation of a specialist at threshold 0.5.
pub fn evaluate(arch: &UNetArch, params: &ParamSet<f32>, cases: &[Case], stride: [usize; 3]) -> Result<MetricReport> {
    if cases.is_empty() {
        return Err(Error::Data("no cases to evaluate".into()));
    }
    evaluate_with(cases, 0.5, |c| predict_volume(arch, params, c.volume.data(), stride))
}
