//! False-color composites from infrared band stacks.
//!
//! The channel recipe: red is the 12µm−11µm brightness-temperature
//! difference, green the 1.37µm cirrus reflectance (forced to zero for
//! nighttime scenes, where the band carries no signal), and blue the 12µm
//! brightness temperature. Each channel is linearly stretched to `[0, 1]`
//! over a configurable range and clamped.
//!
//! Band stacks travel in a small binary container (`.bstk`):
//!
//! ```text
//! magic  "BSTK"
//! u16le  version (currently 1)
//! u32le  height
//! u32le  width
//! u8     flags (bit0 = is_night, bit1 = cirrus band present)
//! f32le  bt11[height*width]   row-major, kelvin
//! f32le  bt12[height*width]   row-major, kelvin
//! f32le  cirrus[height*width] row-major, reflectance; only when bit1 set
//! ```

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::raster::ImagePlane;

pub const BANDSTACK_MAGIC: &[u8; 4] = b"BSTK";
pub const BANDSTACK_VERSION: u16 = 1;

/// Per-scene infrared bands, row-major grids of identical shape.
#[derive(Debug, Clone, PartialEq)]
pub struct BandStack {
    pub height: usize,
    pub width: usize,
    /// 11µm brightness temperature, kelvin.
    pub bt11: Vec<f32>,
    /// 12µm brightness temperature, kelvin.
    pub bt12: Vec<f32>,
    /// 1.37µm cirrus reflectance; absent for (most) nighttime scenes.
    pub cirrus: Option<Vec<f32>>,
    pub is_night: bool,
}

impl BandStack {
    pub fn new(
        height: usize,
        width: usize,
        bt11: Vec<f32>,
        bt12: Vec<f32>,
        cirrus: Option<Vec<f32>>,
        is_night: bool,
    ) -> Result<Self, CompositeError> {
        let n = height * width;
        let check = |name: &'static str, grid: &[f32]| -> Result<(), CompositeError> {
            if grid.len() != n {
                return Err(CompositeError::ShapeMismatch {
                    band: name,
                    expected: n,
                    got: grid.len(),
                });
            }
            if !grid.iter().all(|v| v.is_finite()) {
                return Err(CompositeError::NonFinite { band: name });
            }
            Ok(())
        };
        check("bt11", &bt11)?;
        check("bt12", &bt12)?;
        if let Some(c) = &cirrus {
            check("cirrus", c)?;
        }
        Ok(Self { height, width, bt11, bt12, cirrus, is_night })
    }
}

/// Per-channel stretch ranges mapping raw band values to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ChannelRanges {
    /// Brightness-temperature difference (kelvin) mapped to red.
    pub red_lo: f32,
    pub red_hi: f32,
    /// Cirrus reflectance mapped to green.
    pub green_lo: f32,
    pub green_hi: f32,
    /// Brightness temperature (kelvin) mapped to blue.
    pub blue_lo: f32,
    pub blue_hi: f32,
}

impl Default for ChannelRanges {
    /// Conventional split-window / ash-style stretches: the recipe fixes the
    /// bands, not the ranges, so these are explicit overridable choices.
    fn default() -> Self {
        Self {
            red_lo: -4.0,
            red_hi: 2.0,
            green_lo: 0.0,
            green_hi: 0.25,
            blue_lo: 243.0,
            blue_hi: 303.0,
        }
    }
}

impl ChannelRanges {
    fn validate(&self) -> Result<(), CompositeError> {
        for (name, lo, hi) in [
            ("red", self.red_lo, self.red_hi),
            ("green", self.green_lo, self.green_hi),
            ("blue", self.blue_lo, self.blue_hi),
        ] {
            if !(lo < hi) {
                return Err(CompositeError::InvalidRange { channel: name, lo, hi });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum CompositeError {
    #[error("band {band}: expected {expected} samples, got {got}")]
    ShapeMismatch { band: &'static str, expected: usize, got: usize },
    #[error("band {band} contains non-finite values")]
    NonFinite { band: &'static str },
    #[error("daytime scene requires a cirrus band for the green channel")]
    MissingCirrus,
    #[error("channel {channel}: invalid range [{lo}, {hi}]")]
    InvalidRange { channel: &'static str, lo: f32, hi: f32 },
    #[error("not a band stack: bad magic")]
    BadMagic,
    #[error("unsupported band stack version {0}")]
    UnsupportedVersion(u16),
    #[error("band stack truncated or trailing bytes")]
    Corrupt,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Build the 3-channel false-color composite, values in `[0, 1]`.
///
/// Nighttime scenes get an identically zero green channel regardless of any
/// cirrus grid present; daytime scenes without a cirrus band are an error.
pub fn false_color(
    bands: &BandStack,
    ranges: &ChannelRanges,
) -> Result<ImagePlane, CompositeError> {
    ranges.validate()?;
    let n = bands.height * bands.width;
    for (name, grid) in [("bt11", &bands.bt11), ("bt12", &bands.bt12)] {
        if grid.len() != n {
            return Err(CompositeError::ShapeMismatch { band: name, expected: n, got: grid.len() });
        }
    }
    if let Some(c) = &bands.cirrus {
        if c.len() != n {
            return Err(CompositeError::ShapeMismatch { band: "cirrus", expected: n, got: c.len() });
        }
    }
    let cirrus = match (&bands.cirrus, bands.is_night) {
        (_, true) => None,
        (Some(c), false) => Some(c.as_slice()),
        (None, false) => return Err(CompositeError::MissingCirrus),
    };

    let stretch = |v: f32, lo: f32, hi: f32| ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
    let mut out = ImagePlane::zeros(bands.height, bands.width, 3);
    for i in 0..n {
        let red = stretch(bands.bt12[i] - bands.bt11[i], ranges.red_lo, ranges.red_hi);
        let green = match cirrus {
            Some(c) => stretch(c[i], ranges.green_lo, ranges.green_hi),
            None => 0.0,
        };
        let blue = stretch(bands.bt12[i], ranges.blue_lo, ranges.blue_hi);
        out.data[i * 3] = red;
        out.data[i * 3 + 1] = green;
        out.data[i * 3 + 2] = blue;
    }
    Ok(out)
}

/// Serialize a band stack into the `.bstk` container.
pub fn write_bandstack<W: Write>(bands: &BandStack, mut w: W) -> Result<(), CompositeError> {
    w.write_all(BANDSTACK_MAGIC)?;
    w.write_all(&BANDSTACK_VERSION.to_le_bytes())?;
    w.write_all(&(bands.height as u32).to_le_bytes())?;
    w.write_all(&(bands.width as u32).to_le_bytes())?;
    let mut flags = 0u8;
    if bands.is_night {
        flags |= 1;
    }
    if bands.cirrus.is_some() {
        flags |= 2;
    }
    w.write_all(&[flags])?;
    let write_grid = |w: &mut W, grid: &[f32]| -> Result<(), CompositeError> {
        for v in grid {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    };
    write_grid(&mut w, &bands.bt11)?;
    write_grid(&mut w, &bands.bt12)?;
    if let Some(c) = &bands.cirrus {
        write_grid(&mut w, c)?;
    }
    Ok(())
}

pub fn write_bandstack_file<P: AsRef<Path>>(
    bands: &BandStack,
    path: P,
) -> Result<(), CompositeError> {
    let file = std::fs::File::create(path)?;
    write_bandstack(bands, std::io::BufWriter::new(file))
}

/// Parse a `.bstk` container, validating shape, flags, and finiteness.
pub fn read_bandstack<R: Read>(mut r: R) -> Result<BandStack, CompositeError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| CompositeError::Corrupt)?;
    if &magic != BANDSTACK_MAGIC {
        return Err(CompositeError::BadMagic);
    }
    let mut buf2 = [0u8; 2];
    r.read_exact(&mut buf2).map_err(|_| CompositeError::Corrupt)?;
    let version = u16::from_le_bytes(buf2);
    if version != BANDSTACK_VERSION {
        return Err(CompositeError::UnsupportedVersion(version));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4).map_err(|_| CompositeError::Corrupt)?;
    let height = u32::from_le_bytes(buf4) as usize;
    r.read_exact(&mut buf4).map_err(|_| CompositeError::Corrupt)?;
    let width = u32::from_le_bytes(buf4) as usize;
    let mut flag_byte = [0u8; 1];
    r.read_exact(&mut flag_byte).map_err(|_| CompositeError::Corrupt)?;
    let is_night = flag_byte[0] & 1 != 0;
    let has_cirrus = flag_byte[0] & 2 != 0;

    let n = height * width;
    let read_grid = |r: &mut R| -> Result<Vec<f32>, CompositeError> {
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes).map_err(|_| CompositeError::Corrupt)?;
        Ok(bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect())
    };
    let bt11 = read_grid(&mut r)?;
    let bt12 = read_grid(&mut r)?;
    let cirrus = if has_cirrus { Some(read_grid(&mut r)?) } else { None };
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(CompositeError::Corrupt);
    }
    BandStack::new(height, width, bt11, bt12, cirrus, is_night)
}

pub fn read_bandstack_file<P: AsRef<Path>>(path: P) -> Result<BandStack, CompositeError> {
    let file = std::fs::File::open(path)?;
    read_bandstack(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stack(h: usize, w: usize, bt11: f32, bt12: f32, cirrus: Option<f32>, night: bool) -> BandStack {
        let n = h * w;
        BandStack::new(h, w, vec![bt11; n], vec![bt12; n], cirrus.map(|v| vec![v; n]), night)
            .unwrap()
    }

    #[test]
    fn nighttime_green_is_identically_zero() {
        let bands = stack(3, 4, 278.0, 280.0, Some(0.9), true);
        let img = false_color(&bands, &ChannelRanges::default()).unwrap();
        for i in 0..12 {
            assert_eq!(img.get(i / 4, i % 4, 1), 0.0);
        }
    }

    #[test]
    fn nighttime_output_ignores_cirrus_grid() {
        let a = stack(2, 2, 278.0, 280.0, Some(0.1), true);
        let mut b = a.clone();
        b.cirrus = Some(vec![0.7, 0.0, 0.3, 1.0]);
        let ranges = ChannelRanges::default();
        assert_eq!(false_color(&a, &ranges).unwrap(), false_color(&b, &ranges).unwrap());
        let c = BandStack { cirrus: None, ..a };
        assert_eq!(false_color(&c, &ranges).unwrap().data, false_color(&b, &ranges).unwrap().data);
    }

    #[test]
    fn red_channel_saturates_at_upper_stretch() {
        // bt12 - bt11 = 2 K at the top of the default [-4, 2] range.
        let bands = stack(2, 2, 278.0, 280.0, Some(0.0), false);
        let img = false_color(&bands, &ChannelRanges::default()).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                assert_eq!(img.get(r, c, 0), 1.0);
            }
        }
    }

    #[test]
    fn blue_channel_clamps_at_lower_bound() {
        let ranges = ChannelRanges::default();
        let bands = stack(2, 2, ranges.blue_lo, ranges.blue_lo, Some(0.0), false);
        let img = false_color(&bands, &ranges).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                assert_eq!(img.get(r, c, 2), 0.0);
            }
        }
    }

    #[test]
    fn daytime_without_cirrus_is_an_error() {
        let bands = stack(2, 2, 270.0, 271.0, None, false);
        assert!(matches!(
            false_color(&bands, &ChannelRanges::default()),
            Err(CompositeError::MissingCirrus)
        ));
    }

    #[test]
    fn output_is_always_in_unit_cube() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = 16;
            let bands = BandStack::new(
                4,
                4,
                (0..n).map(|_| rng.random_range(200.0..320.0)).collect(),
                (0..n).map(|_| rng.random_range(200.0..320.0)).collect(),
                Some((0..n).map(|_| rng.random_range(-0.2..1.2)).collect()),
                false,
            )
            .unwrap();
            let img = false_color(&bands, &ChannelRanges::default()).unwrap();
            assert!(img.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn red_is_monotone_in_band_difference() {
        let ranges = ChannelRanges::default();
        let base = stack(1, 1, 280.0, 280.0, Some(0.0), false);
        let mut hotter = base.clone();
        hotter.bt12[0] = 281.0; // larger difference -> larger red
        let mut cooler = base.clone();
        cooler.bt11[0] = 281.0; // larger bt11 -> smaller red
        let v = |b: &BandStack| false_color(b, &ranges).unwrap().data[0];
        assert!(v(&hotter) >= v(&base));
        assert!(v(&cooler) <= v(&base));
    }

    #[test]
    fn bandstack_container_round_trips() {
        let bands = BandStack::new(
            2,
            3,
            (0..6).map(|i| 270.0 + i as f32).collect(),
            (0..6).map(|i| 272.0 + i as f32 * 0.5).collect(),
            Some((0..6).map(|i| i as f32 / 6.0).collect()),
            false,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_bandstack(&bands, &mut buf).unwrap();
        assert_eq!(&buf[0..4], BANDSTACK_MAGIC);
        let back = read_bandstack(buf.as_slice()).unwrap();
        assert_eq!(back, bands);
    }

    #[test]
    fn bandstack_no_cirrus_round_trips() {
        let bands = stack(2, 2, 270.0, 272.0, None, true);
        let mut buf = Vec::new();
        write_bandstack(&bands, &mut buf).unwrap();
        let back = read_bandstack(buf.as_slice()).unwrap();
        assert_eq!(back, bands);
    }

    #[test]
    fn bad_magic_and_truncation_are_rejected() {
        assert!(matches!(read_bandstack(&b"NOPE"[..]), Err(CompositeError::BadMagic)));
        let bands = stack(4, 4, 270.0, 272.0, None, true);
        let mut buf = Vec::new();
        write_bandstack(&bands, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_bandstack(buf.as_slice()), Err(CompositeError::Corrupt)));
        let mut extended = Vec::new();
        write_bandstack(&bands, &mut extended).unwrap();
        extended.push(0);
        assert!(matches!(read_bandstack(extended.as_slice()), Err(CompositeError::Corrupt)));
    }

    #[test]
    fn invalid_stretch_range_is_rejected() {
        let bands = stack(1, 1, 270.0, 272.0, Some(0.1), false);
        let ranges = ChannelRanges { red_lo: 2.0, red_hi: 2.0, ..Default::default() };
        assert!(matches!(
            false_color(&bands, &ranges),
            Err(CompositeError::InvalidRange { channel: "red", .. })
        ));
    }
}
