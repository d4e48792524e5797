//! A from-scratch micro encoder-decoder segmentation network.
//!
//! UNet-style topology: each encoder level applies two 3×3 same-padding
//! convolutions with ReLU and halves the resolution with a 2×2 max-pool;
//! the decoder mirrors it with nearest-neighbor 2× upsampling, a channel
//! concatenation of the matching skip, and two conv+ReLU blocks; a 1×1
//! convolution plus sigmoid produces per-pixel probabilities. Channel width
//! doubles per level from `base_width`.
//!
//! Backpropagation is exact and hand-written ([`UNet::backward`]), with all
//! parameters stored in one flat arena so the Adam step, finite-difference
//! checks, and checkpointing stay simple. Given a fixed seed, forward,
//! backward, and training trajectories are bit-reproducible.

pub mod adam;
pub mod checkpoint;
pub mod layers;
pub mod tensor;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::AdamState;
pub use tensor::Tensor;

use layers::{
    concat_channels, conv2d_backward, conv2d_forward, maxpool2_backward, maxpool2_forward,
    relu_backward, relu_forward, sigmoid, split_channels, upsample2_backward, upsample2_forward,
};

/// Architecture hyperparameters; `seed` drives weight initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub in_channels: usize,
    pub base_width: usize,
    pub depth: usize,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { in_channels: 3, base_width: 8, depth: 3, seed: 42 }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.depth < 1 {
            return Err(NnError::InvalidConfig("depth must be at least 1".into()));
        }
        if self.base_width < 1 {
            return Err(NnError::InvalidConfig("base_width must be at least 1".into()));
        }
        if self.in_channels < 1 {
            return Err(NnError::InvalidConfig("in_channels must be at least 1".into()));
        }
        Ok(())
    }

    /// Spatial dimensions must be divisible by this for pooling to bottom out.
    pub fn spatial_divisor(&self) -> usize {
        1 << self.depth
    }
}

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("forward cache does not match this call: {0}")]
    CacheMismatch(String),
}

/// Name, shape, and flat location of one parameter grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamMeta {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// All network parameters in one flat buffer plus layout metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamArena {
    metas: Vec<ParamMeta>,
    data: Vec<f32>,
}

impl ParamArena {
    fn new() -> Self {
        Self { metas: Vec::new(), data: Vec::new() }
    }

    fn alloc(&mut self, name: String, shape: Vec<usize>) -> usize {
        let len = shape.iter().product();
        let offset = self.data.len();
        self.data.resize(offset + len, 0.0);
        self.metas.push(ParamMeta { name, shape, offset, len });
        self.metas.len() - 1
    }

    pub fn metas(&self) -> &[ParamMeta] {
        &self.metas
    }

    pub fn slice(&self, id: usize) -> &[f32] {
        let m = &self.metas[id];
        &self.data[m.offset..m.offset + m.len]
    }

    pub fn slice_mut(&mut self, id: usize) -> &mut [f32] {
        let m = &self.metas[id];
        &mut self.data[m.offset..m.offset + m.len]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvSpec {
    out_c: usize,
    k: usize,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct DoubleConvSpec {
    conv1: ConvSpec,
    conv2: ConvSpec,
}

/// The micro UNet: layer descriptors over a flat parameter arena.
#[derive(Debug, Clone)]
pub struct UNet {
    config: NetConfig,
    encoders: Vec<DoubleConvSpec>,
    bottleneck: DoubleConvSpec,
    /// In application order: deepest level first.
    decoders: Vec<DoubleConvSpec>,
    head: ConvSpec,
    params: ParamArena,
}

struct DcCache {
    input: Tensor,
    mid: Tensor,
    out: Tensor,
}

struct DecStage {
    dc: DcCache,
    up_c: usize,
    skip_c: usize,
}

/// Activations recorded by [`UNet::forward`] for the exact backward pass.
pub struct ForwardCache {
    input_shape: [usize; 4],
    enc: Vec<DcCache>,
    pool_idx: Vec<Vec<u32>>,
    pool_in_shapes: Vec<[usize; 4]>,
    bottleneck: DcCache,
    dec: Vec<DecStage>,
    probs: Tensor,
}

impl ForwardCache {
    pub fn probs(&self) -> &Tensor {
        &self.probs
    }
}

/// Build a network with He-style fan-in random weights and zero biases,
/// deterministic in `config.seed`.
pub fn init_params(config: &NetConfig) -> Result<UNet, NnError> {
    UNet::init(config)
}

impl UNet {
    pub fn init(config: &NetConfig) -> Result<Self, NnError> {
        let mut net = Self::build_structure(config)?;
        net.randomize_weights();
        Ok(net)
    }

    /// Allocate the layer layout with all parameters zeroed.
    pub(crate) fn build_structure(config: &NetConfig) -> Result<Self, NnError> {
        config.validate()?;
        let mut params = ParamArena::new();
        let mut conv = |name: String, in_c: usize, out_c: usize, k: usize| ConvSpec {
            out_c,
            k,
            w: params.alloc(format!("{name}.weight"), vec![out_c, in_c, k, k]),
            b: params.alloc(format!("{name}.bias"), vec![out_c]),
        };
        let mut double = |name: &str, in_c: usize, out_c: usize| DoubleConvSpec {
            conv1: conv(format!("{name}.conv1"), in_c, out_c, 3),
            conv2: conv(format!("{name}.conv2"), out_c, out_c, 3),
        };

        let depth = config.depth;
        let width = |level: usize| config.base_width << level;
        let mut encoders = Vec::with_capacity(depth);
        let mut in_c = config.in_channels;
        for level in 0..depth {
            encoders.push(double(&format!("enc{level}"), in_c, width(level)));
            in_c = width(level);
        }
        let bottleneck = double("bottleneck", width(depth - 1), width(depth));
        let mut decoders = Vec::with_capacity(depth);
        let mut up_c = width(depth);
        for level in (0..depth).rev() {
            let skip_c = width(level);
            decoders.push(double(&format!("dec{level}"), up_c + skip_c, skip_c));
            up_c = skip_c;
        }
        let head = conv("head".to_string(), config.base_width, 1, 1);
        Ok(Self { config: *config, encoders, bottleneck, decoders, head, params })
    }

    fn randomize_weights(&mut self) {
        use rand::SeedableRng;
        use rand_distr::Distribution;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.config.seed);
        // Weights and biases alternate in the arena; weight shapes have 4 dims.
        let metas: Vec<ParamMeta> = self.params.metas().to_vec();
        for (id, meta) in metas.iter().enumerate() {
            if meta.shape.len() == 4 {
                let fan_in: usize = meta.shape[1] * meta.shape[2] * meta.shape[3];
                let std = (2.0 / fan_in as f32).sqrt();
                let dist = rand_distr::Normal::new(0.0f32, std).expect("valid std");
                for v in self.params.slice_mut(id) {
                    *v = dist.sample(&mut rng);
                }
            } else {
                for v in self.params.slice_mut(id) {
                    *v = 0.0;
                }
            }
        }
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamArena {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamArena {
        &mut self.params
    }

    fn dc_forward(&self, spec: &DoubleConvSpec, x: Tensor) -> (Tensor, DcCache) {
        let z1 = conv2d_forward(
            &x,
            self.params.slice(spec.conv1.w),
            self.params.slice(spec.conv1.b),
            spec.conv1.out_c,
            spec.conv1.k,
        );
        let mid = relu_forward(&z1);
        let z2 = conv2d_forward(
            &mid,
            self.params.slice(spec.conv2.w),
            self.params.slice(spec.conv2.b),
            spec.conv2.out_c,
            spec.conv2.k,
        );
        let out = relu_forward(&z2);
        (out.clone(), DcCache { input: x, mid, out })
    }

    /// Writes conv gradients into `grads` and returns the input gradient.
    fn dc_backward(
        &self,
        spec: &DoubleConvSpec,
        cache: &DcCache,
        grad_out: &Tensor,
        grads: &mut [f32],
    ) -> Tensor {
        let dz2 = relu_backward(&cache.out, grad_out);
        let (dmid, gw2, gb2) = conv2d_backward(
            &cache.mid,
            self.params.slice(spec.conv2.w),
            spec.conv2.out_c,
            spec.conv2.k,
            &dz2,
        );
        accumulate(grads, self.params.metas(), spec.conv2.w, &gw2);
        accumulate(grads, self.params.metas(), spec.conv2.b, &gb2);
        let dz1 = relu_backward(&cache.mid, &dmid);
        let (dinput, gw1, gb1) = conv2d_backward(
            &cache.input,
            self.params.slice(spec.conv1.w),
            spec.conv1.out_c,
            spec.conv1.k,
            &dz1,
        );
        accumulate(grads, self.params.metas(), spec.conv1.w, &gw1);
        accumulate(grads, self.params.metas(), spec.conv1.b, &gb1);
        dinput
    }

    /// Full forward pass: probabilities in `(0, 1)` plus the activation
    /// cache needed by [`UNet::backward`].
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, ForwardCache), NnError> {
        let [_, c, h, w] = input.shape;
        if c != self.config.in_channels {
            return Err(NnError::ShapeMismatch(format!(
                "input has {c} channels, network expects {}",
                self.config.in_channels
            )));
        }
        let div = self.config.spatial_divisor();
        if h == 0 || w == 0 || h % div != 0 || w % div != 0 {
            return Err(NnError::ShapeMismatch(format!(
                "spatial dims {h}x{w} must be positive multiples of {div}"
            )));
        }

        let depth = self.config.depth;
        let mut enc_caches = Vec::with_capacity(depth);
        let mut pool_idx = Vec::with_capacity(depth);
        let mut pool_in_shapes = Vec::with_capacity(depth);
        let mut cur = input.clone();
        for level in 0..depth {
            let (out, cache) = self.dc_forward(&self.encoders[level], cur);
            pool_in_shapes.push(out.shape);
            let (pooled, idx) = maxpool2_forward(&out);
            enc_caches.push(cache);
            pool_idx.push(idx);
            cur = pooled;
        }
        let (bott_out, bott_cache) = self.dc_forward(&self.bottleneck, cur);
        cur = bott_out;
        let mut dec_stages = Vec::with_capacity(depth);
        for (j, level) in (0..depth).rev().enumerate() {
            let up = upsample2_forward(&cur);
            let skip = &enc_caches[level].out;
            let cat = concat_channels(&up, skip);
            let (up_c, skip_c) = (up.channels(), skip.channels());
            let (out, dcache) = self.dc_forward(&self.decoders[j], cat);
            dec_stages.push(DecStage { dc: dcache, up_c, skip_c });
            cur = out;
        }
        let logits = conv2d_forward(
            &cur,
            self.params.slice(self.head.w),
            self.params.slice(self.head.b),
            1,
            1,
        );
        let probs = sigmoid(&logits);
        let cache = ForwardCache {
            input_shape: input.shape,
            enc: enc_caches,
            pool_idx,
            pool_in_shapes,
            bottleneck: bott_cache,
            dec: dec_stages,
            probs: probs.clone(),
        };
        Ok((probs, cache))
    }

    /// Exact reverse-mode pass. `grad_probs` is `∂loss/∂probs`; the result
    /// is `∂loss/∂θ` as one flat buffer aligned with the parameter arena.
    pub fn backward(&self, cache: &ForwardCache, grad_probs: &Tensor) -> Result<Vec<f32>, NnError> {
        if cache.enc.len() != self.config.depth || cache.dec.len() != self.config.depth {
            return Err(NnError::CacheMismatch(format!(
                "cache has {} encoder / {} decoder stages, network depth is {}",
                cache.enc.len(),
                cache.dec.len(),
                self.config.depth
            )));
        }
        if grad_probs.shape != cache.probs.shape {
            return Err(NnError::CacheMismatch(format!(
                "grad shape {:?} does not match cached probs {:?}",
                grad_probs.shape, cache.probs.shape
            )));
        }
        if cache.input_shape[1] != self.config.in_channels
            || cache.enc[0].input.shape != cache.input_shape
        {
            return Err(NnError::CacheMismatch(
                "cached input does not match this network's input contract".into(),
            ));
        }

        let mut grads = vec![0.0f32; self.params.len()];
        let depth = self.config.depth;

        // Sigmoid: dL/dz = dL/dp · p(1−p).
        let p = &cache.probs;
        let dlogits = Tensor {
            shape: p.shape,
            data: p
                .data
                .iter()
                .zip(grad_probs.data.iter())
                .map(|(&pv, &gv)| gv * pv * (1.0 - pv))
                .collect(),
        };
        let head_input = match cache.dec.last() {
            Some(stage) => &stage.dc.out,
            None => &cache.bottleneck.out,
        };
        let (mut dcur, gwh, gbh) = conv2d_backward(
            head_input,
            self.params.slice(self.head.w),
            1,
            1,
            &dlogits,
        );
        accumulate(&mut grads, self.params.metas(), self.head.w, &gwh);
        accumulate(&mut grads, self.params.metas(), self.head.b, &gbh);

        // Decoder stages in reverse application order; stage j decoded level
        // depth-1-j, so its skip gradient belongs to that encoder level.
        let mut skip_grads: Vec<Option<Tensor>> = (0..depth).map(|_| None).collect();
        for j in (0..depth).rev() {
            let stage = &cache.dec[j];
            let dcat = self.dc_backward(&self.decoders[j], &stage.dc, &dcur, &mut grads);
            let (dup, dskip) = split_channels(&dcat, stage.up_c, stage.skip_c);
            skip_grads[depth - 1 - j] = Some(dskip);
            dcur = upsample2_backward(&dup);
        }

        dcur = self.dc_backward(&self.bottleneck, &cache.bottleneck, &dcur, &mut grads);

        for level in (0..depth).rev() {
            let mut dpool_in =
                maxpool2_backward(&cache.pool_idx[level], &dcur, cache.pool_in_shapes[level]);
            if let Some(skip) = &skip_grads[level] {
                for (d, s) in dpool_in.data.iter_mut().zip(skip.data.iter()) {
                    *d += s;
                }
            }
            dcur = self.dc_backward(&self.encoders[level], &cache.enc[level], &dpool_in, &mut grads);
        }
        Ok(grads)
    }
}

fn accumulate(grads: &mut [f32], metas: &[ParamMeta], id: usize, values: &[f32]) {
    let m = &metas[id];
    debug_assert_eq!(m.len, values.len());
    for (dst, src) in grads[m.offset..m.offset + m.len].iter_mut().zip(values.iter()) {
        *dst += src;
    }
}
