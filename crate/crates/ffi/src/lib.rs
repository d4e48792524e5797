//! C ABI over the contrail segmentation toolkit.
//!
//! Every function returns a [`CsegStatus`]; results travel through caller
//! provided buffers or opaque handles. On failure the per-thread message
//! from [`cseg_last_error_message`] carries the details. The matching C
//! header lives at `include/contrail_seg.h` and is regenerated with
//! `cargo build -p contrail-seg-ffi --features generate-header`.
//!
//! Buffer conventions: masks are one byte per pixel (0 or 1), probability
//! maps are `double` per pixel, images are row-major interleaved RGB
//! `float` triples in `[0, 1]`, all row-major with `height * width` pixels.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use contrail_seg::annotations::Polygon;
use contrail_seg::composite::{false_color, BandStack, ChannelRanges};
use contrail_seg::harness;
use contrail_seg::losses::{DiceVariant, LossKind, LossParams, ProbMap};
use contrail_seg::metrics;
use contrail_seg::nn::{checkpoint, NetConfig, UNet};
use contrail_seg::raster::{rasterize_polygon, ImagePlane, Mask};
use contrail_seg::synth;

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsegStatus {
    CsegOk = 0,
    CsegNullPointer = 1,
    CsegInvalidArgument = 2,
    CsegShapeMismatch = 3,
    CsegIoError = 4,
    CsegParseError = 5,
    CsegInternalError = 6,
}

/// Loss selector mirroring the toolkit's loss zoo.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsegLossKind {
    CsegLossDice = 0,
    CsegLossJaccard = 1,
    CsegLossTversky = 2,
    CsegLossFocalTversky = 3,
    CsegLossFocal = 4,
    CsegLossCombined = 5,
}

impl From<CsegLossKind> for LossKind {
    fn from(kind: CsegLossKind) -> Self {
        match kind {
            CsegLossKind::CsegLossDice => LossKind::Dice,
            CsegLossKind::CsegLossJaccard => LossKind::Jaccard,
            CsegLossKind::CsegLossTversky => LossKind::Tversky,
            CsegLossKind::CsegLossFocalTversky => LossKind::FocalTversky,
            CsegLossKind::CsegLossFocal => LossKind::Focal,
            CsegLossKind::CsegLossCombined => LossKind::Combined,
        }
    }
}

/// Loss hyperparameters; see the toolkit docs for semantics.
/// `dice_verbatim != 0` selects the factor-2-free printed Dice form.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CsegLossParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub dice_verbatim: i32,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
}

impl From<CsegLossParams> for LossParams {
    fn from(p: CsegLossParams) -> Self {
        LossParams {
            alpha: p.alpha,
            beta: p.beta,
            gamma: p.gamma,
            delta: p.delta,
            epsilon: p.epsilon,
            dice_variant: if p.dice_verbatim != 0 {
                DiceVariant::Verbatim
            } else {
                DiceVariant::Conventional
            },
            focal_alpha: p.focal_alpha,
            focal_gamma: p.focal_gamma,
        }
    }
}

/// Synthetic-scene generator knobs (inclusive ranges).
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CsegSynthParams {
    pub height: usize,
    pub width: usize,
    pub n_contrails_min: usize,
    pub n_contrails_max: usize,
    pub line_width_min: f64,
    pub line_width_max: f64,
    pub blur_sigma: f64,
    pub n_clutter_min: usize,
    pub n_clutter_max: usize,
    pub noise_std: f64,
    pub seed: u64,
}

/// Opaque network handle created by `cseg_net_create`/`cseg_net_load`.
pub struct CsegNet {
    net: UNet,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn run<F: FnOnce() -> Result<(), (CsegStatus, String)>>(f: F) -> CsegStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CsegStatus::CsegOk,
        Ok(Err((status, message))) => {
            set_error(&message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CsegStatus::CsegInternalError
        }
    }
}

fn invalid(message: impl Into<String>) -> (CsegStatus, String) {
    (CsegStatus::CsegInvalidArgument, message.into())
}

fn null_err(name: &str) -> (CsegStatus, String) {
    (CsegStatus::CsegNullPointer, format!("{name} must not be null"))
}

/// Library version as a static C string.
#[no_mangle]
pub extern "C" fn cseg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cseg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Fill `out` with the toolkit's default loss hyperparameters.
#[no_mangle]
pub extern "C" fn cseg_loss_params_default(out: *mut CsegLossParams) -> CsegStatus {
    run(|| {
        if out.is_null() {
            return Err(null_err("out"));
        }
        let d = LossParams::default();
        unsafe {
            *out = CsegLossParams {
                alpha: d.alpha,
                beta: d.beta,
                gamma: d.gamma,
                delta: d.delta,
                epsilon: d.epsilon,
                dice_verbatim: 0,
                focal_alpha: d.focal_alpha,
                focal_gamma: d.focal_gamma,
            };
        }
        Ok(())
    })
}

unsafe fn probmap_from_raw(
    probs: *const f64,
    height: usize,
    width: usize,
) -> Result<ProbMap, (CsegStatus, String)> {
    let data = std::slice::from_raw_parts(probs, height * width).to_vec();
    ProbMap::new(height, width, data)
        .map_err(|e| (CsegStatus::CsegInvalidArgument, e.to_string()))
}

unsafe fn mask_from_raw(
    mask: *const u8,
    height: usize,
    width: usize,
) -> Result<Mask, (CsegStatus, String)> {
    let data = std::slice::from_raw_parts(mask, height * width);
    if !data.iter().all(|&v| v <= 1) {
        return Err(invalid("mask values must be 0 or 1"));
    }
    Ok(Mask::from_data(height, width, data.to_vec()))
}

/// Evaluate a loss on `height*width` buffers. `value_out` receives the
/// scalar; `grad_out` (nullable) receives `∂loss/∂p` per pixel.
///
/// # Safety
/// `probs` and `mask` must point to `height*width` readable elements;
/// `grad_out`, when non-null, to as many writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cseg_loss_evaluate(
    kind: CsegLossKind,
    probs: *const f64,
    mask: *const u8,
    height: usize,
    width: usize,
    params: *const CsegLossParams,
    value_out: *mut f64,
    grad_out: *mut f64,
) -> CsegStatus {
    run(|| {
        if probs.is_null() {
            return Err(null_err("probs"));
        }
        if mask.is_null() {
            return Err(null_err("mask"));
        }
        if value_out.is_null() {
            return Err(null_err("value_out"));
        }
        if height == 0 || width == 0 {
            return Err(invalid("height and width must be positive"));
        }
        let params: LossParams =
            if params.is_null() { LossParams::default() } else { (*params).into() };
        params.validate().map_err(|e| invalid(e.to_string()))?;
        let p = probmap_from_raw(probs, height, width)?;
        let g = mask_from_raw(mask, height, width)?;
        let result = LossKind::from(kind)
            .evaluate(&p, &g, &params)
            .map_err(|e| (CsegStatus::CsegShapeMismatch, e.to_string()))?;
        *value_out = result.value;
        if !grad_out.is_null() {
            std::slice::from_raw_parts_mut(grad_out, height * width)
                .copy_from_slice(&result.grad);
        }
        Ok(())
    })
}

/// Intersection over union of two binary masks (1.0 when both are empty).
///
/// # Safety
/// `a` and `b` must point to `height*width` readable bytes.
#[no_mangle]
pub unsafe extern "C" fn cseg_iou(
    a: *const u8,
    b: *const u8,
    height: usize,
    width: usize,
    out: *mut f64,
) -> CsegStatus {
    run(|| {
        if a.is_null() || b.is_null() {
            return Err(null_err("a/b"));
        }
        if out.is_null() {
            return Err(null_err("out"));
        }
        let ma = mask_from_raw(a, height, width)?;
        let mb = mask_from_raw(b, height, width)?;
        let value =
            metrics::iou(&ma, &mb).map_err(|e| (CsegStatus::CsegShapeMismatch, e.to_string()))?;
        *out = value;
        Ok(())
    })
}

/// Threshold probabilities into a mask (`p >= threshold` maps to 1).
///
/// # Safety
/// `probs` must point to `height*width` doubles and `mask_out` to as many
/// writable bytes.
#[no_mangle]
pub unsafe extern "C" fn cseg_binarize(
    probs: *const f64,
    height: usize,
    width: usize,
    threshold: f64,
    mask_out: *mut u8,
) -> CsegStatus {
    run(|| {
        if probs.is_null() {
            return Err(null_err("probs"));
        }
        if mask_out.is_null() {
            return Err(null_err("mask_out"));
        }
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(invalid(format!("threshold must be in (0, 1), got {threshold}")));
        }
        let p = probmap_from_raw(probs, height, width)?;
        let mask = metrics::binarize(&p, threshold);
        std::slice::from_raw_parts_mut(mask_out, height * width).copy_from_slice(&mask.data);
        Ok(())
    })
}

/// Rasterize one polygon (row, col vertex pairs, pixel coordinates) onto a
/// `height`×`width` mask under the toolkit's even-odd pixel-center rule.
///
/// # Safety
/// `vertices` must point to `2*n_vertices` doubles and `mask_out` to
/// `height*width` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn cseg_rasterize_polygon(
    vertices: *const f64,
    n_vertices: usize,
    height: usize,
    width: usize,
    mask_out: *mut u8,
) -> CsegStatus {
    run(|| {
        if vertices.is_null() {
            return Err(null_err("vertices"));
        }
        if mask_out.is_null() {
            return Err(null_err("mask_out"));
        }
        let flat = std::slice::from_raw_parts(vertices, n_vertices * 2);
        let poly =
            Polygon::new(flat.chunks_exact(2).map(|pair| [pair[0], pair[1]]).collect());
        let mask = rasterize_polygon(&poly, height, width)
            .map_err(|e| invalid(e.to_string()))?;
        std::slice::from_raw_parts_mut(mask_out, height * width).copy_from_slice(&mask.data);
        Ok(())
    })
}

/// Build the false-color composite from band buffers. `cirrus` may be null
/// for nighttime scenes; `ranges6` (nullable) is `{red_lo, red_hi, green_lo,
/// green_hi, blue_lo, blue_hi}` and defaults to the toolkit stretches.
/// `rgb_out` receives `height*width*3` interleaved floats in `[0, 1]`.
///
/// # Safety
/// Band pointers must cover `height*width` floats; `rgb_out` must cover
/// `height*width*3` writable floats; `ranges6`, when non-null, 6 floats.
#[no_mangle]
pub unsafe extern "C" fn cseg_false_color(
    bt11: *const f32,
    bt12: *const f32,
    cirrus: *const f32,
    height: usize,
    width: usize,
    is_night: i32,
    ranges6: *const f32,
    rgb_out: *mut f32,
) -> CsegStatus {
    run(|| {
        if bt11.is_null() || bt12.is_null() {
            return Err(null_err("bt11/bt12"));
        }
        if rgb_out.is_null() {
            return Err(null_err("rgb_out"));
        }
        let n = height * width;
        let bands = BandStack::new(
            height,
            width,
            std::slice::from_raw_parts(bt11, n).to_vec(),
            std::slice::from_raw_parts(bt12, n).to_vec(),
            if cirrus.is_null() {
                None
            } else {
                Some(std::slice::from_raw_parts(cirrus, n).to_vec())
            },
            is_night != 0,
        )
        .map_err(|e| invalid(e.to_string()))?;
        let ranges = if ranges6.is_null() {
            ChannelRanges::default()
        } else {
            let r = std::slice::from_raw_parts(ranges6, 6);
            ChannelRanges {
                red_lo: r[0],
                red_hi: r[1],
                green_lo: r[2],
                green_hi: r[3],
                blue_lo: r[4],
                blue_hi: r[5],
            }
        };
        let img = false_color(&bands, &ranges).map_err(|e| invalid(e.to_string()))?;
        std::slice::from_raw_parts_mut(rgb_out, n * 3).copy_from_slice(&img.data);
        Ok(())
    })
}

/// Generate synthetic scene `index`: interleaved RGB floats plus the exact
/// strip mask.
///
/// # Safety
/// `image_out` must cover `height*width*3` floats and `mask_out`
/// `height*width` bytes for the dimensions in `params`.
#[no_mangle]
pub unsafe extern "C" fn cseg_synth_scene(
    params: *const CsegSynthParams,
    index: u64,
    image_out: *mut f32,
    mask_out: *mut u8,
) -> CsegStatus {
    run(|| {
        if params.is_null() {
            return Err(null_err("params"));
        }
        if image_out.is_null() || mask_out.is_null() {
            return Err(null_err("image_out/mask_out"));
        }
        let p = *params;
        if p.height == 0 || p.width == 0 {
            return Err(invalid("height and width must be positive"));
        }
        let sp = synth::SynthParams {
            height: p.height,
            width: p.width,
            n_contrails: (p.n_contrails_min, p.n_contrails_max),
            line_width: (p.line_width_min, p.line_width_max),
            blur_sigma: p.blur_sigma,
            n_clutter_blobs: (p.n_clutter_min, p.n_clutter_max),
            noise_std: p.noise_std,
            seed: p.seed,
        };
        let (img, mask) = synth::generate_scene(&sp, index);
        std::slice::from_raw_parts_mut(image_out, p.height * p.width * 3)
            .copy_from_slice(&img.data);
        std::slice::from_raw_parts_mut(mask_out, p.height * p.width).copy_from_slice(&mask.data);
        Ok(())
    })
}

/// Create a freshly initialized network handle.
///
/// # Safety
/// `out` must be a valid pointer to receive the handle.
#[no_mangle]
pub unsafe extern "C" fn cseg_net_create(
    in_channels: u32,
    base_width: u32,
    depth: u32,
    seed: u64,
    out: *mut *mut CsegNet,
) -> CsegStatus {
    run(|| {
        if out.is_null() {
            return Err(null_err("out"));
        }
        let config = NetConfig {
            in_channels: in_channels as usize,
            base_width: base_width as usize,
            depth: depth as usize,
            seed,
        };
        let net = UNet::init(&config).map_err(|e| invalid(e.to_string()))?;
        *out = Box::into_raw(Box::new(CsegNet { net }));
        Ok(())
    })
}

/// Load a network handle from a `.cnet` checkpoint file.
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cseg_net_load(path: *const c_char, out: *mut *mut CsegNet) -> CsegStatus {
    run(|| {
        if path.is_null() {
            return Err(null_err("path"));
        }
        if out.is_null() {
            return Err(null_err("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not valid utf-8"))?;
        let (net, _) = checkpoint::load_file(path)
            .map_err(|e| (CsegStatus::CsegIoError, e.to_string()))?;
        *out = Box::into_raw(Box::new(CsegNet { net }));
        Ok(())
    })
}

/// Save a network handle to a `.cnet` checkpoint file.
///
/// # Safety
/// `net` must be a live handle from this library; `path` a valid
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cseg_net_save(net: *const CsegNet, path: *const c_char) -> CsegStatus {
    run(|| {
        if net.is_null() {
            return Err(null_err("net"));
        }
        if path.is_null() {
            return Err(null_err("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not valid utf-8"))?;
        checkpoint::save_file(&(*net).net, None, path)
            .map_err(|e| (CsegStatus::CsegIoError, e.to_string()))?;
        Ok(())
    })
}

/// Run inference: interleaved channel floats in, per-pixel probabilities out.
/// The image must be square-shaped per the network's input contract
/// (`height` and `width` divisible by `2^depth`, channels matching).
///
/// # Safety
/// `image` must cover `height*width*channels` floats where `channels` is the
/// network's input width; `probs_out` must cover `height*width` doubles.
#[no_mangle]
pub unsafe extern "C" fn cseg_net_predict(
    net: *const CsegNet,
    image: *const f32,
    height: usize,
    width: usize,
    probs_out: *mut f64,
) -> CsegStatus {
    run(|| {
        if net.is_null() {
            return Err(null_err("net"));
        }
        if image.is_null() {
            return Err(null_err("image"));
        }
        if probs_out.is_null() {
            return Err(null_err("probs_out"));
        }
        let handle = &*net;
        let channels = handle.net.config().in_channels;
        if channels != 1 && channels != 3 {
            return Err(invalid("only 1- or 3-channel networks are supported here"));
        }
        let data = std::slice::from_raw_parts(image, height * width * channels).to_vec();
        let plane = ImagePlane::from_data(height, width, channels, data);
        let probs = harness::predict_probmap(&handle.net, &plane)
            .map_err(|e| (CsegStatus::CsegShapeMismatch, e.to_string()))?;
        std::slice::from_raw_parts_mut(probs_out, height * width).copy_from_slice(&probs.data);
        Ok(())
    })
}

/// Release a network handle. Null is a no-op.
///
/// # Safety
/// `net` must be null or a handle returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cseg_net_free(net: *mut CsegNet) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}
