// Temporary diagnostic for the end-to-end FD check. Will be removed.
use contrail_seg::losses::{combined_loss, LossParams, ProbMap};
use contrail_seg::nn::{NetConfig, Tensor, UNet};
use contrail_seg::raster::Mask;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
#[ignore]
fn fd_diagnose() {
    let cfg = NetConfig { in_channels: 3, base_width: 2, depth: 2, seed: 3 };
    let mut net = UNet::init(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    // Smooth regime: shrink weights and push biases positive so every
    // pre-activation is comfortably positive (ReLU = identity, no pool ties).
    {
        let metas = net.params().metas().to_vec();
        for (id, meta) in metas.iter().enumerate() {
            if meta.shape.len() == 4 {
                for v in net.params_mut().slice_mut(id) {
                    *v *= 0.05;
                }
            } else {
                for v in net.params_mut().slice_mut(id) {
                    *v = 0.5 + rng.random_range(0.0..0.1f32);
                }
            }
        }
    }
    let shape = [1usize, 3, 8, 8];
    let x = Tensor::from_vec(
        shape,
        (0..shape.iter().product::<usize>()).map(|_| rng.random_range(0.1..1.0f32)).collect(),
    );
    let g = Mask::from_data(8, 8, (0..64).map(|_| rng.random_range(0..2u8)).collect());
    let params = LossParams::default();

    let loss_of = |net: &UNet| -> f64 {
        let (probs, _) = net.forward(&x).unwrap();
        let p = ProbMap::new(8, 8, probs.data.iter().map(|&v| v as f64).collect()).unwrap();
        combined_loss(&p, &g, &params).unwrap().value
    };

    let (probs, cache) = net.forward(&x).unwrap();
    let p = ProbMap::new(8, 8, probs.data.iter().map(|&v| v as f64).collect()).unwrap();
    let loss = combined_loss(&p, &g, &params).unwrap();
    let grad_probs =
        Tensor::from_vec([1, 1, 8, 8], loss.grad.iter().map(|&v| v as f32).collect());
    let analytic = net.backward(&cache, &grad_probs).unwrap();

    let h = 1e-3f32;
    let n = net.params().len();
    let mut bad = Vec::new();
    for i in 0..n {
        let orig = net.params().data()[i];
        net.params_mut().data_mut()[i] = orig + h;
        let plus = loss_of(&net);
        net.params_mut().data_mut()[i] = orig - h;
        let minus = loss_of(&net);
        net.params_mut().data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * h as f64);
        let a = analytic[i] as f64;
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-2);
        if rel > 1e-3 {
            bad.push((i, a, numeric, rel));
        }
    }
    bad.sort_by(|x, y| y.3.partial_cmp(&x.3).unwrap());
    println!("total params {n}, failing {}", bad.len());
    for (i, a, num, rel) in bad.iter().take(15) {
        let meta = net
            .params()
            .metas()
            .iter()
            .find(|m| *i >= m.offset && *i < m.offset + m.len)
            .unwrap();
        println!(
            "param {i} ({} [{}]) analytic {a:.6e} numeric {num:.6e} rel {rel:.3e}",
            meta.name,
            i - meta.offset
        );
    }
    // Try h sweep on the worst one
    if let Some((i, a, _, _)) = bad.first().copied() {
        for h in [1e-2f32, 3e-3, 1e-3, 3e-4, 1e-4] {
            let orig = net.params().data()[i];
            net.params_mut().data_mut()[i] = orig + h;
            let plus = loss_of(&net);
            net.params_mut().data_mut()[i] = orig - h;
            let minus = loss_of(&net);
            net.params_mut().data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h as f64);
            println!("h {h:.1e}: numeric {numeric:.6e} (analytic {a:.6e})");
        }
    }
}
