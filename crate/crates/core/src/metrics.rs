//! Binarization and Intersection-over-Union evaluation.

use thiserror::Error;

use crate::losses::ProbMap;
use crate::raster::Mask;

/// Per-image and aggregate IoU for one evaluation pass.
///
/// `mean_iou` is the macro average (mean of per-image IoUs); `global_iou`
/// pools intersection and union counts over all images first (micro).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_image_iou: Vec<(String, f64)>,
    pub mean_iou: f64,
    pub global_iou: f64,
    pub threshold: f64,
}

impl EvalReport {
    /// CSV rendering: `scene_id,iou` rows followed by `__mean__` and
    /// `__global__` footer rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scene_id,iou\n");
        for (id, iou) in &self.per_image_iou {
            out.push_str(&format!("{id},{iou}\n"));
        }
        out.push_str(&format!("__mean__,{}\n", self.mean_iou));
        out.push_str(&format!("__global__,{}\n", self.global_iou));
        out
    }
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("mask shapes differ: {a:?} vs {b:?}")]
    ShapeMismatch { a: (usize, usize), b: (usize, usize) },
    #[error("cannot evaluate an empty dataset")]
    EmptyDataset,
}

/// Threshold a probability map into a mask; `p ≥ threshold` maps to 1.
pub fn binarize(p: &ProbMap, threshold: f64) -> Mask {
    debug_assert!(threshold > 0.0 && threshold < 1.0);
    Mask::from_data(
        p.height,
        p.width,
        p.data.iter().map(|&v| u8::from(v >= threshold)).collect(),
    )
}

/// Intersection over union of two binary masks.
/// Two empty masks agree perfectly on absence: IoU = 1.
pub fn iou(a: &Mask, b: &Mask) -> Result<f64, MetricsError> {
    if a.height != b.height || a.width != b.width {
        return Err(MetricsError::ShapeMismatch {
            a: (a.height, a.width),
            b: (b.height, b.width),
        });
    }
    let (i, u) = intersection_union(a, b);
    Ok(if u == 0 { 1.0 } else { i as f64 / u as f64 })
}

fn intersection_union(a: &Mask, b: &Mask) -> (u64, u64) {
    let mut inter = 0u64;
    let mut union = 0u64;
    for (&x, &y) in a.data.iter().zip(b.data.iter()) {
        inter += (x & y) as u64;
        union += (x | y) as u64;
    }
    (inter, union)
}

/// Binarize each probability map and report per-image, macro, and micro IoU.
pub fn evaluate_dataset(
    pairs: &[(String, ProbMap, Mask)],
    threshold: f64,
) -> Result<EvalReport, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    let mut per_image_iou = Vec::with_capacity(pairs.len());
    let mut pooled_i = 0u64;
    let mut pooled_u = 0u64;
    for (id, p, g) in pairs {
        let pred = binarize(p, threshold);
        let value = iou(&pred, g)?;
        per_image_iou.push((id.clone(), value));
        let (i, u) = intersection_union(&pred, g);
        pooled_i += i;
        pooled_u += u;
    }
    let mean_iou =
        per_image_iou.iter().map(|(_, v)| v).sum::<f64>() / per_image_iou.len() as f64;
    let global_iou = if pooled_u == 0 { 1.0 } else { pooled_i as f64 / pooled_u as f64 };
    Ok(EvalReport { per_image_iou, mean_iou, global_iou, threshold })
}
