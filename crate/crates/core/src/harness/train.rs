//! The training loop and checkpoint evaluation.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::losses::ProbMap;
use crate::metrics::EvalReport;
use crate::nn::{checkpoint, AdamState, Tensor, UNet};
use crate::raster::ImagePlane;

use super::{build_datasets, AugmentMode, HarnessError, RunConfig, TrainPair};

/// What a training run produced.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub steps_run: usize,
    pub final_loss: Option<f64>,
    pub final_train_iou: Option<f64>,
    pub train_size: usize,
    pub test_size: usize,
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
}

/// Pack images (all the same shape) into one NCHW batch tensor.
pub fn image_batch_tensor(images: &[&ImagePlane]) -> Tensor {
    assert!(!images.is_empty());
    let (h, w, c) = (images[0].height, images[0].width, images[0].channels);
    let mut t = Tensor::zeros([images.len(), c, h, w]);
    for (n, img) in images.iter().enumerate() {
        assert_eq!((img.height, img.width, img.channels), (h, w, c), "inconsistent batch shapes");
        for ch in 0..c {
            let plane = t.plane_mut(n, ch);
            for r in 0..h {
                for col in 0..w {
                    plane[r * w + col] = img.get(r, col, ch);
                }
            }
        }
    }
    t
}

/// Run inference on one image and return its probability map.
pub fn predict_probmap(net: &UNet, image: &ImagePlane) -> Result<ProbMap, HarnessError> {
    let input = image_batch_tensor(&[image]);
    let (probs, _) = net.forward(&input)?;
    let p = ProbMap::new(
        image.height,
        image.width,
        probs.data.iter().map(|&v| v as f64).collect(),
    )?;
    Ok(p)
}

/// Inference over a pair list (in chunks) followed by IoU aggregation.
pub fn evaluate_pairs(
    net: &UNet,
    pairs: &[TrainPair],
    threshold: f64,
) -> Result<EvalReport, HarnessError> {
    const CHUNK: usize = 8;
    let mut scored = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(CHUNK) {
        let images: Vec<&ImagePlane> = chunk.iter().map(|p| &p.image).collect();
        let input = image_batch_tensor(&images);
        let (probs, _) = net.forward(&input)?;
        let plane = probs.plane_len();
        for (i, pair) in chunk.iter().enumerate() {
            let data: Vec<f64> =
                probs.data[i * plane..(i + 1) * plane].iter().map(|&v| v as f64).collect();
            let p = ProbMap::new(pair.image.height, pair.image.width, data)?;
            scored.push((pair.id.clone(), p, pair.mask.clone()));
        }
    }
    Ok(crate::metrics::evaluate_dataset(&scored, threshold)?)
}

/// Load a checkpoint and evaluate it on a pair list.
pub fn evaluate_checkpoint<P: AsRef<Path>>(
    checkpoint_path: P,
    pairs: &[TrainPair],
    threshold: f64,
) -> Result<EvalReport, HarnessError> {
    let (net, _) = checkpoint::load_file(checkpoint_path)?;
    evaluate_pairs(&net, pairs, threshold)
}

/// Train per the config, writing `train_log.csv` and `checkpoint.cnet`
/// under `out_dir`. Deterministic: identical configs produce byte-identical
/// logs and checkpoints.
pub fn train(config: &RunConfig, out_dir: &Path) -> Result<TrainReport, HarnessError> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let (train_pairs, test_pairs) = build_datasets(config)?;
    if train_pairs.is_empty() {
        return Err(HarnessError::TooFewRecords { count: 0 });
    }
    let size = config.resolved_target_size();
    for pair in train_pairs.iter().chain(test_pairs.iter()) {
        if pair.image.height != size || pair.image.width != size {
            return Err(HarnessError::ShapeMismatch(format!(
                "pair {} is {}x{}, expected {size}x{size}",
                pair.id, pair.image.height, pair.image.width
            )));
        }
        if pair.image.channels != config.net.in_channels {
            return Err(HarnessError::ShapeMismatch(format!(
                "pair {} has {} channels, network expects {}",
                pair.id, pair.image.channels, config.net.in_channels
            )));
        }
    }

    let mut net = UNet::init(&config.net)?;
    let mut adam = AdamState::new(config.optimizer.lr, net.params().len());
    adam.beta1 = config.optimizer.beta1;
    adam.beta2 = config.optimizer.beta2;
    adam.eps = config.optimizer.eps;

    let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
    let mut log = String::from("step,loss,train_iou\n");
    let mut last_loss = None;
    let mut last_iou = None;
    let mut steps_run = 0;

    let batch = config.train.batch_size;
    let plane = size * size;
    for step in 1..=config.train.steps {
        // Assemble the batch, drawing augmentation seeds per sample.
        let mut images = Vec::with_capacity(batch);
        let mut masks = Vec::with_capacity(batch);
        for _ in 0..batch {
            let pick = rng.random_range(0..train_pairs.len());
            let pair = &train_pairs[pick];
            match config.train.augment {
                AugmentMode::None => {
                    images.push(pair.image.clone());
                    masks.push(pair.mask.clone());
                }
                mode => {
                    let draw = rng.random::<u64>();
                    let (img, mask) = super::augment_pair(&pair.image, &pair.mask, mode, draw)?;
                    images.push(img);
                    masks.push(mask);
                }
            }
        }
        let image_refs: Vec<&ImagePlane> = images.iter().collect();
        let input = image_batch_tensor(&image_refs);
        let (probs, cache) = net.forward(&input)?;

        // Batch-mean loss: average values, per-image gradients scaled by 1/B.
        let mut grad = Tensor::zeros(probs.shape);
        let mut loss_sum = 0.0;
        for (i, mask) in masks.iter().enumerate() {
            let data: Vec<f64> =
                probs.data[i * plane..(i + 1) * plane].iter().map(|&v| v as f64).collect();
            let p = ProbMap::new(size, size, data)?;
            let result = config.loss.name.evaluate(&p, mask, &config.loss.params)?;
            loss_sum += result.value;
            let scale = 1.0 / batch as f64;
            for (dst, &g) in grad.data[i * plane..(i + 1) * plane]
                .iter_mut()
                .zip(result.grad.iter())
            {
                *dst = (g * scale) as f32;
            }
        }
        let loss = loss_sum / batch as f64;
        last_loss = Some(loss);

        let grads = net.backward(&cache, &grad)?;
        adam.step(net.params_mut().data_mut(), &grads)?;
        steps_run = step;

        let eval_now = step % config.train.log_every == 0 || step == config.train.steps;
        if eval_now {
            let report = evaluate_pairs(&net, &train_pairs, config.train.eval_threshold)?;
            last_iou = Some(report.mean_iou);
            log.push_str(&format!("{step},{loss},{}\n", report.mean_iou));
            if let Some(stop) = config.train.early_stop_iou {
                if report.mean_iou >= stop {
                    break;
                }
            }
        } else {
            log.push_str(&format!("{step},{loss},\n"));
        }
    }

    let log_path = out_dir.join("train_log.csv");
    let mut file = std::fs::File::create(&log_path)?;
    file.write_all(log.as_bytes())?;
    let checkpoint_path = out_dir.join("checkpoint.cnet");
    checkpoint::save_file(&net, Some(&adam), &checkpoint_path)?;

    Ok(TrainReport {
        steps_run,
        final_loss: last_loss,
        final_train_iou: last_iou,
        train_size: train_pairs.len(),
        test_size: test_pairs.len(),
        checkpoint_path,
        log_path,
    })
}
