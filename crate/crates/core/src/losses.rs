//! Region-based segmentation losses with analytic gradients.
//!
//! All losses take a predicted probability map `p`, a binary ground-truth
//! mask `g`, and a [`LossParams`], and return the scalar loss together with
//! `∂loss/∂p` for every pixel. Everything is evaluated in f64 with a fixed
//! row-major accumulation order, so values and gradients are reproducible
//! and finite-difference checks hold tightly.
//!
//! With `S_tp = Σ p·g`, `S_fn = Σ (1−p)·g`, `S_fp = Σ p·(1−g)`,
//! `S_p = Σ p`, `S_g = Σ g`:
//!
//! - Dice (conventional): `1 − (2·S_tp + ε)/(S_p + S_g + ε)`; the verbatim
//!   variant drops the factor 2 and bottoms out at 0.5 instead of 0.
//! - Tversky: `1 − TI`, `TI = (S_tp + ε)/(S_tp + α·S_fn + β·S_fp + ε)`.
//! - Focal-Tversky: `(1 − TI)^(1/γ)`.
//! - Jaccard: `1 − (S_tp + ε)/(S_p + S_g − S_tp + ε)`.
//! - Focal: pixel mean of
//!   `−α_f·(1−p)^γ_f·g·ln p − (1−α_f)·p^γ_f·(1−g)·ln(1−p)`.
//! - Combined: `δ·dice + (1−δ)·focal_tversky`, the training objective.

use thiserror::Error;

use crate::raster::Mask;

/// Per-pixel predicted probabilities, row-major, each within `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl ProbMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self, LossError> {
        if data.len() != height * width {
            return Err(LossError::ShapeMismatch {
                expected: (height, width),
                got_len: data.len(),
            });
        }
        if !data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
            return Err(LossError::InvalidProbability);
        }
        Ok(Self { height, width, data })
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        Self::new(height, width, vec![value; height * width]).expect("constant in [0,1]")
    }
}

/// Which printed form of the Dice term to use.
///
/// `Conventional` carries the factor 2 and vanishes at perfect prediction;
/// `Verbatim` matches the combined-loss formula exactly as printed, which
/// bottoms out at 0.5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiceVariant {
    Conventional,
    Verbatim,
}

/// Hyperparameters shared by the loss family.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct LossParams {
    /// False-negative weight α of the Tversky index.
    pub alpha: f64,
    /// False-positive weight β of the Tversky index.
    pub beta: f64,
    /// Focal-Tversky exponent parameter γ; the loss is `(1−TI)^(1/γ)`.
    pub gamma: f64,
    /// Mix weight δ ∈ [0, 1] between Dice (δ) and Focal-Tversky (1−δ).
    pub delta: f64,
    /// Smoothing ε > 0 added to numerators and denominators.
    pub epsilon: f64,
    pub dice_variant: DiceVariant,
    /// Focal-loss class weight α_f.
    pub focal_alpha: f64,
    /// Focal-loss focusing exponent γ_f.
    pub focal_gamma: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            alpha: 0.7,
            beta: 0.3,
            gamma: 4.0 / 3.0,
            delta: 0.5,
            epsilon: 1e-6,
            dice_variant: DiceVariant::Conventional,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<(), LossError> {
        let ok = self.alpha >= 0.0
            && self.beta >= 0.0
            && self.gamma > 0.0
            && (0.0..=1.0).contains(&self.delta)
            && self.epsilon >= 0.0
            && self.focal_alpha >= 0.0
            && self.focal_gamma >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(LossError::InvalidParams)
        }
    }
}

/// A scalar loss value and its exact gradient with respect to `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub grad: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum LossError {
    #[error("shape mismatch: expected {expected:?}, got buffer of length {got_len}")]
    ShapeMismatch { expected: (usize, usize), got_len: usize },
    #[error("probability map and mask shapes differ: {p:?} vs {g:?}")]
    GridMismatch { p: (usize, usize), g: (usize, usize) },
    #[error("probabilities must be finite and within [0, 1]")]
    InvalidProbability,
    #[error("invalid loss hyperparameters")]
    InvalidParams,
}

/// Loss selector used by configs and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Dice,
    Jaccard,
    Tversky,
    FocalTversky,
    Focal,
    #[default]
    Combined,
}

impl LossKind {
    pub const ALL: [LossKind; 6] = [
        LossKind::Dice,
        LossKind::Jaccard,
        LossKind::Tversky,
        LossKind::FocalTversky,
        LossKind::Focal,
        LossKind::Combined,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Dice => "dice",
            LossKind::Jaccard => "jaccard",
            LossKind::Tversky => "tversky",
            LossKind::FocalTversky => "focal_tversky",
            LossKind::Focal => "focal",
            LossKind::Combined => "combined",
        }
    }

    pub fn evaluate(
        &self,
        p: &ProbMap,
        g: &Mask,
        params: &LossParams,
    ) -> Result<LossResult, LossError> {
        match self {
            LossKind::Dice => dice_loss(p, g, params),
            LossKind::Jaccard => jaccard_loss(p, g, params),
            LossKind::Tversky => tversky_loss(p, g, params),
            LossKind::FocalTversky => focal_tversky_loss(p, g, params),
            LossKind::Focal => focal_loss(p, g, params),
            LossKind::Combined => combined_loss(p, g, params),
        }
    }
}

struct Sums {
    tp: f64,
    fn_: f64,
    fp: f64,
    p: f64,
    g: f64,
}

fn check_shapes(p: &ProbMap, g: &Mask) -> Result<(), LossError> {
    if p.height != g.height || p.width != g.width {
        return Err(LossError::GridMismatch {
            p: (p.height, p.width),
            g: (g.height, g.width),
        });
    }
    Ok(())
}

/// Row-major accumulation; the fixed order keeps results reproducible.
fn sums(p: &ProbMap, g: &Mask) -> Sums {
    let mut s = Sums { tp: 0.0, fn_: 0.0, fp: 0.0, p: 0.0, g: 0.0 };
    for (&pv, &gv) in p.data.iter().zip(g.data.iter()) {
        let gv = gv as f64;
        s.tp += pv * gv;
        s.fn_ += (1.0 - pv) * gv;
        s.fp += pv * (1.0 - gv);
        s.p += pv;
        s.g += gv;
    }
    s
}

/// Dice loss; the variant in `params` picks the conventional factor-2 form
/// or the as-printed form without it.
pub fn dice_loss(p: &ProbMap, g: &Mask, params: &LossParams) -> Result<LossResult, LossError> {
    check_shapes(p, g)?;
    let s = sums(p, g);
    let eps = params.epsilon;
    let denom = s.p + s.g + eps;
    let (numer, numer_scale) = match params.dice_variant {
        DiceVariant::Conventional => (2.0 * s.tp + eps, 2.0),
        DiceVariant::Verbatim => (s.tp + eps, 1.0),
    };
    let value = 1.0 - numer / denom;
    // d/dp_i [ -numer/denom ] = (numer - scale*g_i*denom) / denom^2
    let d2 = denom * denom;
    let grad = g
        .data
        .iter()
        .map(|&gv| (numer - numer_scale * gv as f64 * denom) / d2)
        .collect();
    Ok(LossResult { value, grad })
}

/// Tversky loss `1 − TI` with α weighting false negatives and β false positives.
pub fn tversky_loss(p: &ProbMap, g: &Mask, params: &LossParams) -> Result<LossResult, LossError> {
    check_shapes(p, g)?;
    let (value, grad, _) = tversky_parts(p, g, params);
    Ok(LossResult { value, grad })
}

/// Shared Tversky computation: returns `(1 − TI, ∂(1−TI)/∂p, TI)`.
fn tversky_parts(p: &ProbMap, g: &Mask, params: &LossParams) -> (f64, Vec<f64>, f64) {
    let s = sums(p, g);
    let eps = params.epsilon;
    let (alpha, beta) = (params.alpha, params.beta);
    let numer = s.tp + eps;
    let denom = s.tp + alpha * s.fn_ + beta * s.fp + eps;
    let ti = numer / denom;
    let d2 = denom * denom;
    // ∂numer/∂p_i = g_i; ∂denom/∂p_i = g_i(1 − α − β) + β.
    let grad = g
        .data
        .iter()
        .map(|&gv| {
            let gv = gv as f64;
            let dn = gv;
            let dd = gv * (1.0 - alpha - beta) + beta;
            (numer * dd - dn * denom) / d2
        })
        .collect();
    (1.0 - ti, grad, ti)
}

/// Focal-Tversky loss `(1 − TI)^(1/γ)`.
///
/// At `TI = 1` with `1/γ < 1` the chain-rule factor is singular; the loss
/// sits at its minimum there, so the gradient is defined as zero (guarded
/// by `1 − TI < 1e-12`).
pub fn focal_tversky_loss(
    p: &ProbMap,
    g: &Mask,
    params: &LossParams,
) -> Result<LossResult, LossError> {
    check_shapes(p, g)?;
    let (one_minus_ti, tversky_grad, _) = tversky_parts(p, g, params);
    let exponent = 1.0 / params.gamma;
    let value = one_minus_ti.max(0.0).powf(exponent);
    let grad = if one_minus_ti < 1e-12 {
        vec![0.0; tversky_grad.len()]
    } else {
        let chain = exponent * one_minus_ti.powf(exponent - 1.0);
        tversky_grad.iter().map(|&d| chain * d).collect()
    };
    Ok(LossResult { value, grad })
}

/// Jaccard (soft IoU) loss `1 − (S_tp + ε)/(S_p + S_g − S_tp + ε)`.
pub fn jaccard_loss(p: &ProbMap, g: &Mask, params: &LossParams) -> Result<LossResult, LossError> {
    check_shapes(p, g)?;
    let s = sums(p, g);
    let eps = params.epsilon;
    let numer = s.tp + eps;
    let denom = s.p + s.g - s.tp + eps;
    let value = 1.0 - numer / denom;
    let d2 = denom * denom;
    let grad = g
        .data
        .iter()
        .map(|&gv| {
            let gv = gv as f64;
            let dn = gv;
            let dd = 1.0 - gv;
            (numer * dd - dn * denom) / d2
        })
        .collect();
    Ok(LossResult { value, grad })
}

const FOCAL_PROB_CLAMP: f64 = 1e-7;

/// Focal loss, mean over pixels, with probabilities clamped to
/// `[1e-7, 1 − 1e-7]` to keep the logs finite. Pixels whose probability sits
/// outside the clamp range get zero gradient (the clamped function is
/// locally constant there).
pub fn focal_loss(p: &ProbMap, g: &Mask, params: &LossParams) -> Result<LossResult, LossError> {
    check_shapes(p, g)?;
    let (af, gf) = (params.focal_alpha, params.focal_gamma);
    let n = p.data.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(p.data.len());
    for (&pv_raw, &gv) in p.data.iter().zip(g.data.iter()) {
        let clamped = pv_raw.clamp(FOCAL_PROB_CLAMP, 1.0 - FOCAL_PROB_CLAMP);
        let gv = gv as f64;
        let pv = clamped;
        let q = 1.0 - pv;
        total += -af * q.powf(gf) * gv * pv.ln() - (1.0 - af) * pv.powf(gf) * (1.0 - gv) * q.ln();
        let d = if clamped != pv_raw {
            0.0
        } else {
            // d/dp [-α_f (1-p)^γ g ln p] = α_f g [γ (1-p)^(γ-1) ln p - (1-p)^γ / p]
            let pos = af * gv * (gf * q.powf(gf - 1.0) * pv.ln() - q.powf(gf) / pv);
            // d/dp [-(1-α_f) p^γ (1-g) ln(1-p)]
            //   = -(1-α_f)(1-g) [γ p^(γ-1) ln(1-p) - p^γ / (1-p)]
            let neg = -(1.0 - af) * (1.0 - gv) * (gf * pv.powf(gf - 1.0) * q.ln() - pv.powf(gf) / q);
            pos + neg
        };
        grad.push(d / n);
    }
    Ok(LossResult { value: total / n, grad })
}

/// The training objective: `δ·dice + (1−δ)·focal_tversky`, gradients included.
pub fn combined_loss(p: &ProbMap, g: &Mask, params: &LossParams) -> Result<LossResult, LossError> {
    check_shapes(p, g)?;
    let delta = params.delta;
    let dice = dice_loss(p, g, params)?;
    let ft = focal_tversky_loss(p, g, params)?;
    let value = delta * dice.value + (1.0 - delta) * ft.value;
    let grad = dice
        .grad
        .iter()
        .zip(ft.grad.iter())
        .map(|(&d, &f)| delta * d + (1.0 - delta) * f)
        .collect();
    Ok(LossResult { value, grad })
}

/// Central-difference gradient oracle: perturbs each pixel by `±h` and
/// differences the scalar loss. Only touches the value path of `loss_fn`,
/// never its analytic gradient. Requires `p` interior to `[h, 1−h]`.
pub fn finite_difference_gradient<F>(
    loss_fn: F,
    p: &ProbMap,
    g: &Mask,
    params: &LossParams,
    h: f64,
) -> Result<Vec<f64>, LossError>
where
    F: Fn(&ProbMap, &Mask, &LossParams) -> Result<LossResult, LossError>,
{
    let mut grad = Vec::with_capacity(p.data.len());
    let mut work = p.clone();
    for i in 0..p.data.len() {
        let original = work.data[i];
        work.data[i] = original + h;
        let plus = loss_fn(&work, g, params)?.value;
        work.data[i] = original - h;
        let minus = loss_fn(&work, g, params)?.value;
        work.data[i] = original;
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// Worst relative disagreement between two gradient grids, with the
/// denominator floored at `max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fixture_2x2() -> (ProbMap, Mask) {
        let p = ProbMap::new(2, 2, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let g = Mask::from_data(2, 2, vec![1, 1, 0, 0]);
        (p, g)
    }

    fn params_eps0() -> LossParams {
        LossParams { epsilon: 0.0, ..Default::default() }
    }

    fn random_pair(rng: &mut ChaCha8Rng, h: usize, w: usize) -> (ProbMap, Mask) {
        let p = ProbMap::new(h, w, (0..h * w).map(|_| rng.random_range(0.01..0.99)).collect())
            .unwrap();
        let g = Mask::from_data(h, w, (0..h * w).map(|_| rng.random_range(0..2u8)).collect());
        (p, g)
    }

    #[test]
    fn dice_conventional_fixture_value() {
        let (p, g) = fixture_2x2();
        let params = LossParams { epsilon: 1e-6, ..Default::default() };
        let r = dice_loss(&p, &g, &params).unwrap();
        let expected = 1.0 - (2.0 + 1e-6) / (4.0 + 1e-6);
        assert!((r.value - expected).abs() < 1e-12);
        assert!((r.value - 0.5).abs() < 1e-6);
    }

    #[test]
    fn dice_verbatim_fixture_value() {
        let (p, g) = fixture_2x2();
        let params = LossParams {
            epsilon: 1e-6,
            dice_variant: DiceVariant::Verbatim,
            ..Default::default()
        };
        let r = dice_loss(&p, &g, &params).unwrap();
        let expected = 1.0 - (1.0 + 1e-6) / (4.0 + 1e-6);
        assert!((r.value - expected).abs() < 1e-12);
        assert!((r.value - 0.75).abs() < 1e-6);
    }

    #[test]
    fn dice_perfect_prediction_is_zero() {
        let g = Mask::from_data(2, 3, vec![1, 0, 1, 0, 0, 1]);
        let p = ProbMap::new(2, 3, g.data.iter().map(|&v| v as f64).collect()).unwrap();
        let r = dice_loss(&p, &g, &LossParams::default()).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn tversky_fixture_value() {
        let (p, g) = fixture_2x2();
        let r = tversky_loss(&p, &g, &params_eps0()).unwrap();
        assert!((r.value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn tversky_perfect_prediction_is_exactly_zero() {
        let g = Mask::from_data(2, 2, vec![1, 0, 0, 1]);
        let p = ProbMap::new(2, 2, g.data.iter().map(|&v| v as f64).collect()).unwrap();
        // ε cancels: TI = (S_tp + ε)/(S_tp + ε) = 1 exactly.
        let r = tversky_loss(&p, &g, &LossParams::default()).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn focal_tversky_fixture_value() {
        let (p, g) = fixture_2x2();
        let r = focal_tversky_loss(&p, &g, &params_eps0()).unwrap();
        assert!((r.value - 0.5f64.powf(0.75)).abs() < 1e-12);
        assert!((r.value - 0.59460).abs() < 1e-5);
    }

    #[test]
    fn jaccard_fixture_value() {
        let (p, g) = fixture_2x2();
        let r = jaccard_loss(&p, &g, &params_eps0()).unwrap();
        assert!((r.value - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn combined_fixture_value_matches_hand_arithmetic() {
        let (p, g) = fixture_2x2();
        let r = combined_loss(&p, &g, &params_eps0()).unwrap();
        let expected = 0.5 * 0.5 + 0.5 * 0.5f64.powf(0.75);
        assert!((r.value - expected).abs() < 1e-12);
        assert!((r.value - 0.54730).abs() < 1e-5);
    }

    #[test]
    fn focal_single_pixel_fixture() {
        let p = ProbMap::new(1, 1, vec![0.5]).unwrap();
        let g = Mask::from_data(1, 1, vec![1]);
        let r = focal_loss(&p, &g, &LossParams::default()).unwrap();
        let expected = 0.25 * 0.25 * std::f64::consts::LN_2;
        assert!((r.value - expected).abs() < 1e-12);
        assert!((r.value - 0.04332).abs() < 1e-5);
    }

    #[test]
    fn focal_with_gamma_zero_reduces_to_scaled_bce() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let params = LossParams { focal_alpha: 0.5, focal_gamma: 0.0, ..Default::default() };
        for _ in 0..10 {
            let (p, g) = random_pair(&mut rng, 4, 4);
            let r = focal_loss(&p, &g, &params).unwrap();
            let bce = p
                .data
                .iter()
                .zip(g.data.iter())
                .map(|(&pv, &gv)| {
                    let gv = gv as f64;
                    -gv * pv.ln() - (1.0 - gv) * (1.0 - pv).ln()
                })
                .sum::<f64>()
                / p.data.len() as f64;
            assert!((r.value - 0.5 * bce).abs() < 1e-12);
        }
    }

    #[test]
    fn focal_perfect_prediction_tends_to_zero() {
        let g = Mask::from_data(1, 2, vec![1, 0]);
        let p = ProbMap::new(1, 2, vec![1.0, 0.0]).unwrap();
        let r = focal_loss(&p, &g, &LossParams::default()).unwrap();
        // Clamped at 1e-7, so the residual is of order α_f·εc²·|ln εc|.
        assert!(r.value.abs() < 1e-12, "value {}", r.value);
    }

    #[test]
    fn reduction_focal_tversky_gamma_one_is_tversky() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = LossParams { gamma: 1.0, ..Default::default() };
        for _ in 0..20 {
            let (p, g) = random_pair(&mut rng, 5, 3);
            let a = focal_tversky_loss(&p, &g, &params).unwrap();
            let b = tversky_loss(&p, &g, &params).unwrap();
            assert!((a.value - b.value).abs() < 1e-12);
            for (x, y) in a.grad.iter().zip(b.grad.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reduction_tversky_half_half_is_conventional_dice() {
        // S_tp + 0.5·S_fn + 0.5·S_fp = 0.5·(S_p + S_g), so at ε = 0 the
        // Tversky loss with α = β = 0.5 is exactly the conventional Dice loss.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let params = LossParams { alpha: 0.5, beta: 0.5, epsilon: 0.0, ..Default::default() };
        for _ in 0..20 {
            let (p, g) = random_pair(&mut rng, 4, 4);
            let a = tversky_loss(&p, &g, &params).unwrap();
            let b = dice_loss(&p, &g, &params).unwrap();
            assert!((a.value - b.value).abs() < 1e-12);
            for (x, y) in a.grad.iter().zip(b.grad.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reduction_combined_delta_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let (p, g) = random_pair(&mut rng, 4, 4);
            let d1 = LossParams { delta: 1.0, ..Default::default() };
            let a = combined_loss(&p, &g, &d1).unwrap();
            let b = dice_loss(&p, &g, &d1).unwrap();
            assert_eq!(a.value, b.value);
            assert_eq!(a.grad, b.grad);
            let d0 = LossParams { delta: 0.0, ..Default::default() };
            let a = combined_loss(&p, &g, &d0).unwrap();
            let b = focal_tversky_loss(&p, &g, &d0).unwrap();
            assert_eq!(a.value, b.value);
            assert_eq!(a.grad, b.grad);
        }
    }

    #[test]
    fn soft_dice_jaccard_relation_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let params = params_eps0();
        for _ in 0..20 {
            let (p, g) = random_pair(&mut rng, 6, 6);
            let dice_sim = 1.0 - dice_loss(&p, &g, &params).unwrap().value;
            let jaccard_sim = 1.0 - jaccard_loss(&p, &g, &params).unwrap().value;
            assert!((dice_sim - 2.0 * jaccard_sim / (1.0 + jaccard_sim)).abs() < 1e-12);
        }
    }

    #[test]
    fn all_losses_pass_finite_difference_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let h = 1e-4;
        for kind in LossKind::ALL {
            for trial in 0..20 {
                let (p, g) = random_pair(&mut rng, 8, 8);
                let params = LossParams::default();
                let analytic = kind.evaluate(&p, &g, &params).unwrap().grad;
                let numeric = finite_difference_gradient(
                    |p, g, params| kind.evaluate(p, g, params),
                    &p,
                    &g,
                    &params,
                    h,
                )
                .unwrap();
                let err = max_relative_error(&analytic, &numeric, 1e-8);
                assert!(err < 1e-4, "{} trial {trial}: max rel err {err}", kind.name());
            }
        }
    }

    #[test]
    fn dice_verbatim_passes_finite_difference_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let params = LossParams { dice_variant: DiceVariant::Verbatim, ..Default::default() };
        for _ in 0..20 {
            let (p, g) = random_pair(&mut rng, 8, 8);
            let analytic = dice_loss(&p, &g, &params).unwrap().grad;
            let numeric =
                finite_difference_gradient(dice_loss, &p, &g, &params, 1e-4).unwrap();
            assert!(max_relative_error(&analytic, &numeric, 1e-8) < 1e-4);
        }
    }

    #[test]
    fn finite_difference_of_linear_functional_is_exact() {
        let p = ProbMap::constant(3, 3, 0.5);
        let g = Mask::zeros(3, 3);
        let mean_loss = |p: &ProbMap, _g: &Mask, _params: &LossParams| {
            Ok(LossResult {
                value: p.data.iter().sum::<f64>() / p.data.len() as f64,
                grad: vec![],
            })
        };
        let grad =
            finite_difference_gradient(mean_loss, &p, &g, &LossParams::default(), 1e-4).unwrap();
        for v in grad {
            assert!((v - 1.0 / 9.0).abs() < 1e-10);
        }
    }

    #[test]
    fn region_losses_stay_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let (p, g) = random_pair(&mut rng, 5, 5);
            for kind in
                [LossKind::Dice, LossKind::Jaccard, LossKind::Tversky, LossKind::FocalTversky]
            {
                let v = kind.evaluate(&p, &g, &LossParams::default()).unwrap().value;
                assert!((0.0..=1.0).contains(&v), "{} value {v}", kind.name());
            }
        }
    }

    #[test]
    fn tversky_penalty_is_monotone_in_false_positives() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let (mut p, mut g) = random_pair(&mut rng, 4, 4);
            let i = rng.random_range(0..16);
            g.data[i] = 0;
            p.data[i] = rng.random_range(0.01..0.5);
            let before = tversky_loss(&p, &g, &LossParams::default()).unwrap().value;
            p.data[i] += 0.4;
            let after = tversky_loss(&p, &g, &LossParams::default()).unwrap().value;
            assert!(after >= before, "raising a g=0 pixel lowered the loss");
        }
    }

    #[test]
    fn focal_tversky_gradient_is_zero_at_optimum() {
        let g = Mask::from_data(2, 2, vec![1, 0, 1, 1]);
        let p = ProbMap::new(2, 2, g.data.iter().map(|&v| v as f64).collect()).unwrap();
        let r = focal_tversky_loss(&p, &g, &LossParams::default()).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.grad.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let p = ProbMap::constant(2, 2, 0.5);
        let g = Mask::zeros(2, 3);
        for kind in LossKind::ALL {
            assert!(matches!(
                kind.evaluate(&p, &g, &LossParams::default()),
                Err(LossError::GridMismatch { .. })
            ));
        }
    }

    #[test]
    fn probability_outside_unit_interval_is_rejected() {
        assert!(ProbMap::new(1, 2, vec![0.5, 1.2]).is_err());
        assert!(ProbMap::new(1, 2, vec![0.5, f64::NAN]).is_err());
        assert!(ProbMap::new(1, 1, vec![0.5, 0.5]).is_err());
    }
}
