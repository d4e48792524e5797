//! Side-by-side inspection panels.

use crate::raster::{ImagePlane, Mask};

use super::HarnessError;

/// Render `[input | ground truth | prediction | disagreement]` as one
/// 3-channel image. Masks render white-on-black; the disagreement panel
/// marks false positives in the red channel and false negatives in blue,
/// leaving agreement black.
pub fn render_overlay(
    image: &ImagePlane,
    ground_truth: &Mask,
    prediction: &Mask,
) -> Result<ImagePlane, HarnessError> {
    let (h, w) = (image.height, image.width);
    for (name, mask) in [("ground truth", ground_truth), ("prediction", prediction)] {
        if mask.height != h || mask.width != w {
            return Err(HarnessError::ShapeMismatch(format!(
                "{name} mask is {}x{}, image is {h}x{w}",
                mask.height, mask.width
            )));
        }
    }
    let mut out = ImagePlane::zeros(h, 4 * w, 3);
    for r in 0..h {
        for c in 0..w {
            // Panel 0: the input image (grayscale replicated if single-channel).
            for ch in 0..3 {
                let v = if image.channels == 3 { image.get(r, c, ch) } else { image.get(r, c, 0) };
                out.set(r, c, ch, v);
            }
            // Panels 1 and 2: masks as white on black.
            let gt = ground_truth.get(r, c) as f32;
            let pred = prediction.get(r, c) as f32;
            for ch in 0..3 {
                out.set(r, w + c, ch, gt);
                out.set(r, 2 * w + c, ch, pred);
            }
            // Panel 3: disagreement. FP -> red, FN -> blue.
            let fp = prediction.get(r, c) == 1 && ground_truth.get(r, c) == 0;
            let fn_ = prediction.get(r, c) == 0 && ground_truth.get(r, c) == 1;
            out.set(r, 3 * w + c, 0, if fp { 1.0 } else { 0.0 });
            out.set(r, 3 * w + c, 2, if fn_ { 1.0 } else { 0.0 });
        }
    }
    Ok(out)
}
