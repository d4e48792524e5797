//! `contrail-seg`: dataset preparation, synthetic data, training,
//! evaluation, gradient checking, and overlay rendering.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use contrail_seg::composite::{read_bandstack_file, false_color, ChannelRanges};
use contrail_seg::harness::{self, RunConfig, TrainPair};
use contrail_seg::losses::{
    finite_difference_gradient, max_relative_error, LossKind, LossParams, ProbMap,
};
use contrail_seg::metrics::binarize;
use contrail_seg::nn::{checkpoint, NetConfig, Tensor, UNet};
use contrail_seg::raster::{
    read_image_png, read_mask_png, render_ground_truth, resize_image, resize_mask,
    write_image_png, write_mask_png, Mask,
};
use contrail_seg::synth::SynthParams;

#[derive(Parser)]
#[command(name = "contrail-seg", about = "Contrail segmentation toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert annotations + band stacks into resized image/mask PNG pairs.
    Prepare {
        /// Annotation JSON document.
        #[arg(long)]
        annotations: PathBuf,
        /// Directory holding `{scene_id}.bstk` band stacks.
        #[arg(long)]
        bandstacks: PathBuf,
        /// Output dataset directory (`images/` and `masks/` subdirs).
        #[arg(long)]
        out: PathBuf,
        /// Square output side in pixels.
        #[arg(long, default_value_t = 512)]
        target_size: usize,
    },
    /// Emit a synthetic dataset as image/mask PNG pairs.
    Synth {
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
    },
    /// Train per a TOML run config; writes checkpoint and CSV log.
    Train {
        config: PathBuf,
        /// Output directory (default: alongside the config).
        #[arg(long, default_value = "train_out")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a prepared dataset directory.
    Eval {
        checkpoint: PathBuf,
        /// Dataset directory with `images/` and `masks/`.
        dataset: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Write the CSV report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the loss and network finite-difference suites; exits nonzero on failure.
    Gradcheck {
        /// Random (probability, mask) pairs per loss.
        #[arg(long, default_value_t = 20)]
        pairs: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Render input/truth/prediction/disagreement panels for one scene.
    Overlay {
        checkpoint: PathBuf,
        /// Dataset directory with `images/` and `masks/`.
        dataset: PathBuf,
        /// Scene id (the PNG stem).
        scene: String,
        #[arg(long, default_value = "overlay.png")]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Prepare { annotations, bandstacks, out, target_size } => {
            prepare(&annotations, &bandstacks, &out, target_size)
        }
        Command::Synth { out, count, seed, height, width } => synth(&out, count, seed, height, width),
        Command::Train { config, out } => train(&config, &out),
        Command::Eval { checkpoint, dataset, threshold, out } => {
            eval(&checkpoint, &dataset, threshold, out.as_deref())
        }
        Command::Gradcheck { pairs, seed } => gradcheck(pairs, seed),
        Command::Overlay { checkpoint, dataset, scene, out, threshold } => {
            overlay(&checkpoint, &dataset, &scene, &out, threshold)
        }
    }
}

fn dataset_dirs(out: &Path) -> Result<(PathBuf, PathBuf)> {
    let images = out.join("images");
    let masks = out.join("masks");
    std::fs::create_dir_all(&images)?;
    std::fs::create_dir_all(&masks)?;
    Ok((images, masks))
}

fn prepare(annotations: &Path, bandstacks: &Path, out: &Path, target_size: usize) -> Result<()> {
    let document = std::fs::read(annotations)
        .with_context(|| format!("reading {}", annotations.display()))?;
    let records = contrail_seg::annotations::parse_scene_records(&document)?;
    let (images_dir, masks_dir) = dataset_dirs(out)?;
    let ranges = ChannelRanges::default();
    let mut written = 0usize;
    for record in &records {
        let stack_path = bandstacks.join(format!("{}.bstk", record.scene_id));
        let bands = read_bandstack_file(&stack_path)
            .with_context(|| format!("reading {}", stack_path.display()))?;
        let composite = false_color(&bands, &ranges)
            .with_context(|| format!("compositing scene {}", record.scene_id))?;
        let image = resize_image(&composite, target_size, target_size);
        let native = render_ground_truth(record, bands.height, bands.width)?;
        let mask = resize_mask(&native, target_size, target_size);
        write_image_png(&image, images_dir.join(format!("{}.png", record.scene_id)))?;
        write_mask_png(&mask, masks_dir.join(format!("{}.png", record.scene_id)))?;
        written += 1;
    }
    println!("prepared {written} scenes into {}", out.display());
    Ok(())
}

fn synth(out: &Path, count: usize, seed: u64, height: usize, width: usize) -> Result<()> {
    let params = SynthParams { height, width, seed, ..Default::default() };
    let scenes = contrail_seg::synth::generate_dataset(&params, count);
    let (images_dir, masks_dir) = dataset_dirs(out)?;
    for (id, image, mask) in &scenes {
        write_image_png(image, images_dir.join(format!("{id}.png")))?;
        write_mask_png(mask, masks_dir.join(format!("{id}.png")))?;
    }
    println!("wrote {} synthetic scenes into {}", scenes.len(), out.display());
    Ok(())
}

fn train(config_path: &Path, out: &Path) -> Result<()> {
    let config = RunConfig::from_file(config_path)
        .with_context(|| format!("loading {}", config_path.display()))?;
    let report = harness::train(&config, out)?;
    println!(
        "trained {} steps on {} scenes ({} held out); final loss {}, train IoU {}",
        report.steps_run,
        report.train_size,
        report.test_size,
        report.final_loss.map_or("n/a".into(), |v| format!("{v:.6}")),
        report.final_train_iou.map_or("n/a".into(), |v| format!("{v:.4}")),
    );
    println!("checkpoint: {}", report.checkpoint_path.display());
    println!("log: {}", report.log_path.display());
    Ok(())
}

/// Load a prepared dataset directory (sorted by scene id for determinism).
fn load_dataset_dir(dir: &Path) -> Result<Vec<TrainPair>> {
    let images_dir = dir.join("images");
    let masks_dir = dir.join("masks");
    if !images_dir.is_dir() || !masks_dir.is_dir() {
        bail!("{} is not a dataset directory (needs images/ and masks/)", dir.display());
    }
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(&images_dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    if ids.is_empty() {
        bail!("no PNG images under {}", images_dir.display());
    }
    let mut pairs = Vec::with_capacity(ids.len());
    for id in ids {
        let image = read_image_png(images_dir.join(format!("{id}.png")))?;
        let mask_path = masks_dir.join(format!("{id}.png"));
        let mask = read_mask_png(&mask_path)
            .with_context(|| format!("reading {}", mask_path.display()))?;
        pairs.push(TrainPair { id, image, mask });
    }
    Ok(pairs)
}

fn eval(checkpoint: &Path, dataset: &Path, threshold: f64, out: Option<&Path>) -> Result<()> {
    if !(threshold > 0.0 && threshold < 1.0) {
        bail!("threshold must be in (0, 1), got {threshold}");
    }
    let pairs = load_dataset_dir(dataset)?;
    let report = harness::evaluate_checkpoint(checkpoint, &pairs, threshold)?;
    let csv = report.to_csv();
    match out {
        Some(path) => {
            std::fs::write(path, &csv)?;
            println!(
                "evaluated {} scenes: mean IoU {:.4}, global IoU {:.4} -> {}",
                report.per_image_iou.len(),
                report.mean_iou,
                report.global_iou,
                path.display()
            );
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn gradcheck(pairs: usize, seed: u64) -> Result<()> {
    use rand::{Rng, SeedableRng};
    let mut failures = 0usize;

    // Loss suite: analytic gradients against central differences, f64.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let params = LossParams::default();
    for kind in LossKind::ALL {
        let mut worst = 0.0f64;
        for _ in 0..pairs {
            let p = ProbMap::new(8, 8, (0..64).map(|_| rng.random_range(0.01..0.99)).collect())
                .expect("probabilities in range");
            let g = Mask::from_data(8, 8, (0..64).map(|_| rng.random_range(0..2u8)).collect());
            let analytic = kind.evaluate(&p, &g, &params)?.grad;
            let numeric = finite_difference_gradient(
                |p, g, params| kind.evaluate(p, g, params),
                &p,
                &g,
                &params,
                1e-4,
            )?;
            worst = worst.max(max_relative_error(&analytic, &numeric, 1e-8));
        }
        let ok = worst < 1e-4;
        println!(
            "[{}] loss {:<14} max rel err {:.3e} (tol 1e-4, {pairs} pairs)",
            if ok { "PASS" } else { "FAIL" },
            kind.name(),
            worst
        );
        if !ok {
            failures += 1;
        }
    }

    // Network suite: every parameter of a small net against central
    // differences of the combined loss at 32-bit forward precision.
    let cfg = NetConfig { in_channels: 3, base_width: 4, depth: 2, seed };
    let mut net = UNet::init(&cfg)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b9);
    let x = Tensor::from_vec(
        [1, 3, 16, 16],
        (0..3 * 256).map(|_| rng.random_range(-1.0..1.0)).collect(),
    );
    let g = Mask::from_data(16, 16, (0..256).map(|_| rng.random_range(0..2u8)).collect());
    let loss_of = |net: &UNet| -> Result<f64> {
        let (probs, _) = net.forward(&x)?;
        let p = ProbMap::new(16, 16, probs.data.iter().map(|&v| v as f64).collect())?;
        Ok(contrail_seg::losses::combined_loss(&p, &g, &params)?.value)
    };
    let (probs, cache) = net.forward(&x)?;
    let p = ProbMap::new(16, 16, probs.data.iter().map(|&v| v as f64).collect())?;
    let loss = contrail_seg::losses::combined_loss(&p, &g, &params)?;
    let grad_probs =
        Tensor::from_vec([1, 1, 16, 16], loss.grad.iter().map(|&v| v as f32).collect());
    let analytic = net.backward(&cache, &grad_probs)?;
    let h = 1e-3f32;
    let mut numeric = vec![0.0f64; net.params().len()];
    for i in 0..net.params().len() {
        let orig = net.params().data()[i];
        net.params_mut().data_mut()[i] = orig + h;
        let plus = loss_of(&net)?;
        net.params_mut().data_mut()[i] = orig - h;
        let minus = loss_of(&net)?;
        net.params_mut().data_mut()[i] = orig;
        numeric[i] = (plus - minus) / (2.0 * h as f64);
    }
    let analytic: Vec<f64> = analytic.iter().map(|&v| v as f64).collect();
    let err = max_relative_error(&analytic, &numeric, 1e-2);
    let ok = err < 1e-3;
    println!(
        "[{}] network backward  max rel err {:.3e} (tol 1e-3, {} parameters)",
        if ok { "PASS" } else { "FAIL" },
        err,
        numeric.len()
    );
    if !ok {
        failures += 1;
    }

    if failures > 0 {
        bail!("{failures} gradient check(s) failed");
    }
    Ok(())
}

fn overlay(
    checkpoint_path: &Path,
    dataset: &Path,
    scene: &str,
    out: &Path,
    threshold: f64,
) -> Result<()> {
    let image = read_image_png(dataset.join("images").join(format!("{scene}.png")))
        .with_context(|| format!("loading scene {scene}"))?;
    let mask = read_mask_png(dataset.join("masks").join(format!("{scene}.png")))
        .with_context(|| format!("loading mask for {scene}"))?;
    let (net, _) = checkpoint::load_file(checkpoint_path)?;
    let probs = harness::predict_probmap(&net, &image)?;
    let prediction = binarize(&probs, threshold);
    let panel = harness::render_overlay(&image, &mask, &prediction)?;
    write_image_png(&panel, out)?;
    println!("wrote {}", out.display());
    Ok(())
}
