//! Polygon rasterization and image/mask resizing.
//!
//! Rasterization samples each pixel at its center `(row + 0.5, col + 0.5)`
//! and fills under the even-odd rule. The exact coverage convention, which
//! boundary tests rely on, is:
//!
//! 1. A pixel center lying exactly on a polygon edge segment is covered.
//!    "Exactly on" means the cross product `(b−a) × (p−a)` is `0.0` and `p`
//!    falls inside the segment's bounding box, evaluated in f64.
//! 2. Otherwise a horizontal ray is shot toward +col. An edge `(a, b)`
//!    contributes a crossing when `(a.row <= y) != (b.row <= y)` (half-open
//!    vertical span, horizontal edges never cross) and the intersection
//!    `xi = a.col + (y − a.row)·(b.col − a.col)/(b.row − a.row)` satisfies
//!    `xi > x`. The center is covered when the crossing count is odd.
//!
//! Vertices may lie outside the frame; the filled set is clipped to it.

use std::path::Path;

use thiserror::Error;

use crate::annotations::Polygon;

/// A binary grid, row-major, one byte per pixel, values in `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0; height * width] }
    }

    pub fn from_data(height: usize, width: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), height * width, "mask data length must be height*width");
        debug_assert!(data.iter().all(|&v| v <= 1), "mask values must be 0 or 1");
        Self { height, width, data }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        self.data[row * self.width + col] = value;
    }

    /// Number of positive pixels.
    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_empty_mask(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }
}

/// A row-major float image with interleaved channels (`HWC` layout):
/// the sample for `(row, col, ch)` lives at `(row·width + col)·channels + ch`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl ImagePlane {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        Self { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    pub fn from_data(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        assert_eq!(data.len(), height * width * channels);
        Self { height, width, channels, data }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f32) {
        self.data[(row * self.width + col) * self.channels + ch] = value;
    }
}

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("polygon has {count} vertices, need at least 3")]
    TooFewVertices { count: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),
    #[error("unsupported PNG layout: {0}")]
    UnsupportedPng(String),
}

/// Rasterize one polygon onto a `height`×`width` grid.
///
/// Pixel `(r, c)` is set iff its center `(r + 0.5, c + 0.5)` is covered
/// under the module-level convention. Regions outside the frame are clipped.
pub fn rasterize_polygon(poly: &Polygon, height: usize, width: usize) -> Result<Mask, RasterError> {
    if poly.vertices.len() < 3 {
        return Err(RasterError::TooFewVertices { count: poly.vertices.len() });
    }
    let mut mask = Mask::zeros(height, width);
    let verts = &poly.vertices;

    // Clip the scan to the polygon's bounding box.
    let (mut rmin, mut rmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut cmin, mut cmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in verts {
        rmin = rmin.min(v[0]);
        rmax = rmax.max(v[0]);
        cmin = cmin.min(v[1]);
        cmax = cmax.max(v[1]);
    }
    let r0 = rmin.floor().max(0.0) as usize;
    let r1 = (rmax.ceil() as isize).clamp(0, height as isize) as usize;
    let c0 = cmin.floor().max(0.0) as usize;
    let c1 = (cmax.ceil() as isize).clamp(0, width as isize) as usize;

    for r in r0..r1 {
        let y = r as f64 + 0.5;
        // Only edges whose vertical extent reaches this scanline matter.
        let active: Vec<[[f64; 2]; 2]> = (0..verts.len())
            .map(|i| [verts[i], verts[(i + 1) % verts.len()]])
            .filter(|[a, b]| y >= a[0].min(b[0]) && y <= a[0].max(b[0]))
            .collect();
        if active.is_empty() {
            continue;
        }
        for c in c0..c1 {
            let x = c as f64 + 0.5;
            if point_covered_edges(y, x, &active) {
                mask.set(r, c, 1);
            }
        }
    }
    Ok(mask)
}

/// Same convention as [`point_covered`] over a pre-filtered edge list.
fn point_covered_edges(y: f64, x: f64, edges: &[[[f64; 2]; 2]]) -> bool {
    let mut crossings = 0u32;
    for [a, b] in edges {
        let cross = (b[0] - a[0]) * (x - a[1]) - (b[1] - a[1]) * (y - a[0]);
        if cross == 0.0
            && y >= a[0].min(b[0])
            && y <= a[0].max(b[0])
            && x >= a[1].min(b[1])
            && x <= a[1].max(b[1])
        {
            return true;
        }
        if (a[0] <= y) != (b[0] <= y) {
            let xi = a[1] + (y - a[0]) * (b[1] - a[1]) / (b[0] - a[0]);
            if xi > x {
                crossings += 1;
            }
        }
    }
    crossings % 2 == 1
}

/// Ground-truth mask for a scene: pixel-wise union of all polygon fills.
/// An empty polygon list yields an all-zeros mask.
pub fn render_ground_truth(
    record: &crate::annotations::SceneRecord,
    height: usize,
    width: usize,
) -> Result<Mask, RasterError> {
    render_polygons(&record.polygons, height, width)
}

/// Pixel-wise union (logical OR) of [`rasterize_polygon`] over `polygons`.
pub fn render_polygons(
    polygons: &[Polygon],
    height: usize,
    width: usize,
) -> Result<Mask, RasterError> {
    let mut out = Mask::zeros(height, width);
    for poly in polygons {
        let m = rasterize_polygon(poly, height, width)?;
        for (dst, src) in out.data.iter_mut().zip(m.data.iter()) {
            *dst |= *src;
        }
    }
    Ok(out)
}

/// Nearest-neighbor mask resize with half-pixel-center alignment.
/// Output stays binary by construction.
pub fn resize_mask(mask: &Mask, out_h: usize, out_w: usize) -> Mask {
    assert!(out_h > 0 && out_w > 0);
    let sy = mask.height as f64 / out_h as f64;
    let sx = mask.width as f64 / out_w as f64;
    let mut out = Mask::zeros(out_h, out_w);
    for r in 0..out_h {
        let src_r = (((r as f64 + 0.5) * sy) as usize).min(mask.height - 1);
        for c in 0..out_w {
            let src_c = (((c as f64 + 0.5) * sx) as usize).min(mask.width - 1);
            out.set(r, c, mask.get(src_r, src_c));
        }
    }
    out
}

/// Bilinear image resize with half-pixel-center alignment.
///
/// Each output sample is a convex combination of input samples, so values
/// stay within the input's per-channel range; identity dimensions copy
/// bit-exactly.
pub fn resize_image(img: &ImagePlane, out_h: usize, out_w: usize) -> ImagePlane {
    assert!(out_h > 0 && out_w > 0);
    let sy = img.height as f64 / out_h as f64;
    let sx = img.width as f64 / out_w as f64;
    let mut out = ImagePlane::zeros(out_h, out_w, img.channels);
    let last_r = img.height - 1;
    let last_c = img.width - 1;
    for r in 0..out_h {
        let fy = (r as f64 + 0.5) * sy - 0.5;
        let y0f = fy.floor();
        let ty = fy - y0f;
        let y0 = (y0f as isize).clamp(0, last_r as isize) as usize;
        let y1 = ((y0f as isize + 1).clamp(0, last_r as isize)) as usize;
        for c in 0..out_w {
            let fx = (c as f64 + 0.5) * sx - 0.5;
            let x0f = fx.floor();
            let tx = fx - x0f;
            let x0 = (x0f as isize).clamp(0, last_c as isize) as usize;
            let x1 = ((x0f as isize + 1).clamp(0, last_c as isize)) as usize;
            for ch in 0..img.channels {
                let v00 = img.get(y0, x0, ch) as f64;
                let v01 = img.get(y0, x1, ch) as f64;
                let v10 = img.get(y1, x0, ch) as f64;
                let v11 = img.get(y1, x1, ch) as f64;
                let top = v00 * (1.0 - tx) + v01 * tx;
                let bot = v10 * (1.0 - tx) + v11 * tx;
                out.set(r, c, ch, (top * (1.0 - ty) + bot * ty) as f32);
            }
        }
    }
    out
}

/// Write a mask as an 8-bit single-channel PNG (0 ↦ 0, 1 ↦ 255).
pub fn write_mask_png<P: AsRef<Path>>(mask: &Mask, path: P) -> Result<(), RasterError> {
    let bytes: Vec<u8> = mask.data.iter().map(|&v| if v == 0 { 0 } else { 255 }).collect();
    let img = image::GrayImage::from_raw(mask.width as u32, mask.height as u32, bytes)
        .expect("mask buffer matches dimensions");
    img.save(path)?;
    Ok(())
}

/// Read a mask written by [`write_mask_png`]; values ≥ 128 map to 1.
pub fn read_mask_png<P: AsRef<Path>>(path: P) -> Result<Mask, RasterError> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| u8::from(v >= 128)).collect();
    Ok(Mask::from_data(h as usize, w as usize, data))
}

/// Write a float image (values in `[0, 1]`) as an 8-bit PNG,
/// gray for 1 channel, RGB for 3; each value maps to `round(v·255)`.
pub fn write_image_png<P: AsRef<Path>>(img: &ImagePlane, path: P) -> Result<(), RasterError> {
    let to_byte = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let bytes: Vec<u8> = img.data.iter().map(|&v| to_byte(v)).collect();
    match img.channels {
        1 => {
            let buf = image::GrayImage::from_raw(img.width as u32, img.height as u32, bytes)
                .expect("buffer matches dimensions");
            buf.save(path)?;
        }
        3 => {
            let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, bytes)
                .expect("buffer matches dimensions");
            buf.save(path)?;
        }
        other => return Err(RasterError::UnsupportedPng(format!("{other} channels"))),
    }
    Ok(())
}

/// Read an 8-bit PNG into a float image with values in `[0, 1]`.
/// Grayscale files become 1-channel planes, everything else 3-channel RGB.
pub fn read_image_png<P: AsRef<Path>>(path: P) -> Result<ImagePlane, RasterError> {
    let img = image::open(path)?;
    match img {
        image::DynamicImage::ImageLuma8(g) => {
            let (w, h) = g.dimensions();
            let data = g.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
            Ok(ImagePlane::from_data(h as usize, w as usize, 1, data))
        }
        other => {
            let rgb = other.into_rgb8();
            let (w, h) = rgb.dimensions();
            let data = rgb.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
            Ok(ImagePlane::from_data(h as usize, w as usize, 3, data))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force oracle: evaluates the documented coverage convention
    /// directly for every pixel center against every edge, with no scanline
    /// culling or shared code with the implementation above.
    fn oracle_rasterize(verts: &[[f64; 2]], height: usize, width: usize) -> Mask {
        let mut mask = Mask::zeros(height, width);
        for r in 0..height {
            for c in 0..width {
                let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
                let mut on_edge = false;
                let mut crossings = 0u32;
                for i in 0..verts.len() {
                    let a = verts[i];
                    let b = verts[(i + 1) % verts.len()];
                    let cross = (b[0] - a[0]) * (x - a[1]) - (b[1] - a[1]) * (y - a[0]);
                    if cross == 0.0
                        && y >= a[0].min(b[0])
                        && y <= a[0].max(b[0])
                        && x >= a[1].min(b[1])
                        && x <= a[1].max(b[1])
                    {
                        on_edge = true;
                        break;
                    }
                    if (a[0] <= y) != (b[0] <= y) {
                        let xi = a[1] + (y - a[0]) * (b[1] - a[1]) / (b[0] - a[0]);
                        if xi > x {
                            crossings += 1;
                        }
                    }
                }
                if on_edge || crossings % 2 == 1 {
                    mask.set(r, c, 1);
                }
            }
        }
        mask
    }

    fn poly(verts: &[[f64; 2]]) -> Polygon {
        Polygon::new(verts.to_vec())
    }

    #[test]
    fn full_cover_rectangle_fills_grid() {
        let p = poly(&[[0.0, 0.0], [0.0, 4.0], [4.0, 4.0], [4.0, 0.0]]);
        let m = rasterize_polygon(&p, 4, 4).unwrap();
        assert!(m.data.iter().all(|&v| v == 1), "expected all ones, got {:?}", m.data);
    }

    #[test]
    fn triangle_matches_brute_force_oracle() {
        let verts = [[0.0, 0.0], [0.0, 4.0], [4.0, 0.0]];
        let m = rasterize_polygon(&poly(&verts), 4, 4).unwrap();
        assert_eq!(m, oracle_rasterize(&verts, 4, 4));
    }

    #[test]
    fn polygon_outside_frame_yields_zeros() {
        let p = poly(&[[10.0, 10.0], [10.0, 14.0], [14.0, 10.0]]);
        let m = rasterize_polygon(&p, 4, 4).unwrap();
        assert!(m.is_empty_mask());
    }

    #[test]
    fn negative_coordinates_clip_to_frame() {
        let p = poly(&[[-2.0, -2.0], [-2.0, 2.0], [2.0, 2.0], [2.0, -2.0]]);
        let m = rasterize_polygon(&p, 4, 4).unwrap();
        let oracle = oracle_rasterize(&[[-2.0, -2.0], [-2.0, 2.0], [2.0, 2.0], [2.0, -2.0]], 4, 4);
        assert_eq!(m, oracle);
        assert_eq!(m.get(0, 0), 1);
        assert_eq!(m.get(3, 3), 0);
    }

    #[test]
    fn degenerate_polygon_is_rejected() {
        let p = poly(&[[0.0, 0.0], [1.0, 1.0]]);
        assert!(matches!(
            rasterize_polygon(&p, 4, 4),
            Err(RasterError::TooFewVertices { count: 2 })
        ));
    }

    #[test]
    fn random_polygons_match_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..40 {
            let h = rng.random_range(4..=32);
            let w = rng.random_range(4..=32);
            let n = rng.random_range(3..=12);
            let verts: Vec<[f64; 2]> = (0..n)
                .map(|_| {
                    [
                        rng.random_range(-8.0..(h as f64 + 8.0)),
                        rng.random_range(-8.0..(w as f64 + 8.0)),
                    ]
                })
                .collect();
            let m = rasterize_polygon(&poly(&verts), h, w).unwrap();
            assert_eq!(m, oracle_rasterize(&verts, h, w), "mismatch for verts {verts:?}");
        }
    }

    #[test]
    fn ground_truth_unions_disjoint_rectangles() {
        let a = poly(&[[0.0, 0.0], [0.0, 2.0], [2.0, 2.0], [2.0, 0.0]]);
        let b = poly(&[[4.0, 4.0], [4.0, 6.0], [6.0, 6.0], [6.0, 4.0]]);
        let ma = rasterize_polygon(&a, 8, 8).unwrap();
        let mb = rasterize_polygon(&b, 8, 8).unwrap();
        let union = render_polygons(&[a, b], 8, 8).unwrap();
        assert_eq!(union.count_ones(), ma.count_ones() + mb.count_ones());
        for i in 0..union.data.len() {
            assert_eq!(union.data[i], ma.data[i] | mb.data[i]);
        }
    }

    #[test]
    fn ground_truth_union_is_idempotent() {
        let a = poly(&[[1.0, 1.0], [1.0, 5.0], [5.0, 3.0]]);
        let single = render_polygons(&[a.clone()], 8, 8).unwrap();
        let twice = render_polygons(&[a.clone(), a], 8, 8).unwrap();
        assert_eq!(single, twice);
    }

    #[test]
    fn ground_truth_empty_scene_is_zeros() {
        let m = render_polygons(&[], 6, 6).unwrap();
        assert!(m.is_empty_mask());
        let record = crate::annotations::SceneRecord {
            scene_id: "empty".into(),
            width: 6,
            height: 6,
            is_night: false,
            polygons: vec![],
            waypoints: vec![],
        };
        assert!(render_ground_truth(&record, 6, 6).unwrap().is_empty_mask());
    }

    #[test]
    fn ground_truth_covers_each_polygon() {
        let a = poly(&[[0.0, 0.0], [0.0, 3.0], [3.0, 0.0]]);
        let b = poly(&[[2.0, 2.0], [2.0, 7.0], [7.0, 7.0], [7.0, 2.0]]);
        let union = render_polygons(&[a.clone(), b.clone()], 8, 8).unwrap();
        for p in [a, b] {
            let m = rasterize_polygon(&p, 8, 8).unwrap();
            for i in 0..m.data.len() {
                assert!(union.data[i] >= m.data[i]);
            }
        }
    }

    #[test]
    fn resize_mask_identity_is_exact() {
        let m = Mask::from_data(2, 2, vec![1, 0, 0, 1]);
        assert_eq!(resize_mask(&m, 2, 2), m);
    }

    #[test]
    fn resize_mask_checkerboard_replicates_blocks() {
        let m = Mask::from_data(2, 2, vec![1, 0, 0, 1]);
        let big = resize_mask(&m, 4, 4);
        #[rustfmt::skip]
        let expected = vec![
            1, 1, 0, 0,
            1, 1, 0, 0,
            0, 0, 1, 1,
            0, 0, 1, 1,
        ];
        assert_eq!(big.data, expected);
    }

    #[test]
    fn resize_mask_preserves_binarity_and_ones() {
        let m = Mask::from_data(3, 5, vec![1; 15]);
        let out = resize_mask(&m, 7, 2);
        assert!(out.data.iter().all(|&v| v == 1));
    }

    #[test]
    fn resize_image_identity_is_bit_exact() {
        let img = ImagePlane::from_data(2, 3, 1, vec![0.1, 0.5, 0.9, 0.2, 0.4, 0.6]);
        assert_eq!(resize_image(&img, 2, 3), img);
    }

    #[test]
    fn resize_image_constant_stays_constant() {
        let img = ImagePlane::from_data(2, 2, 3, vec![0.25; 12]);
        let out = resize_image(&img, 5, 7);
        assert!(out.data.iter().all(|&v| v == 0.25));
    }

    #[test]
    fn resize_image_upsample_matches_closed_form_weights() {
        // 2x1 column [0, 1] -> 4x1: centers sample at fy = -0.25, 0.25, 0.75, 1.25.
        let img = ImagePlane::from_data(2, 1, 1, vec![0.0, 1.0]);
        let out = resize_image(&img, 4, 1);
        let expected = [0.0f32, 0.25, 0.75, 1.0];
        for (got, want) in out.data.iter().zip(expected.iter()) {
            assert!((got - want).abs() < 1e-6, "got {got}, want {want}");
        }
        for w in out.data.windows(2) {
            assert!(w[0] <= w[1], "not monotone: {:?}", out.data);
        }
    }

    #[test]
    fn resize_image_preserves_channel_range() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let img = ImagePlane::from_data(
            5,
            4,
            3,
            (0..60).map(|_| rng.random_range(-2.0..2.0)).collect(),
        );
        let out = resize_image(&img, 13, 9);
        for ch in 0..3 {
            let vals = |p: &ImagePlane| -> Vec<f32> {
                p.data.iter().skip(ch).step_by(3).copied().collect()
            };
            let src = vals(&img);
            let dst = vals(&out);
            let (lo, hi) = src
                .iter()
                .fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
            assert!(dst.iter().all(|&v| v >= lo && v <= hi));
        }
    }

    #[test]
    fn mask_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let m = Mask::from_data(3, 2, vec![1, 0, 0, 1, 1, 1]);
        write_mask_png(&m, &path).unwrap();
        assert_eq!(read_mask_png(&path).unwrap(), m);
    }

    #[test]
    fn image_png_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.png");
        let img = ImagePlane::from_data(2, 2, 3, (0..12).map(|i| i as f32 / 12.0).collect());
        write_image_png(&img, &path).unwrap();
        let back = read_image_png(&path).unwrap();
        assert_eq!(back.channels, 3);
        for (a, b) in img.data.iter().zip(back.data.iter()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }
}
