//! Contrail segmentation toolkit.
//!
//! Everything needed to go from labelled satellite scenes to a trained
//! segmentation network on a single CPU core:
//!
//! - [`annotations`]: JSON scene records (contrail polygons, flight waypoints).
//! - [`raster`]: polygon rasterization into binary masks, mask/image resizing.
//! - [`composite`]: false-color images from infrared band stacks
//!   (12µm−11µm brightness-temperature difference, cirrus reflectance, 12µm).
//! - [`losses`]: Dice, Jaccard, Tversky, Focal-Tversky, Focal, and the
//!   combined Dice + Focal-Tversky loss, each with its analytic gradient.
//! - [`metrics`]: binarization and per-image/pooled IoU reports.
//! - [`nn`]: a from-scratch micro UNet with exact backpropagation and Adam.
//! - [`synth`]: deterministic synthetic contrail scenes for desk-scale runs.
//! - [`harness`]: config-driven splitting, augmentation, training,
//!   evaluation, and overlay rendering; backs the `contrail-seg` CLI.

pub mod annotations;
pub mod composite;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod raster;
pub mod synth;
