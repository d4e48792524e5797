//! Layer primitives with exact backward passes.
//!
//! Convolutions are same-padding (zero pad `k/2`, odd `k`), stride 1,
//! written as per-row slice operations so the inner loops stay contiguous.
//! All reductions run in a fixed row-major order; results are deterministic
//! for identical inputs.

use super::tensor::Tensor;

/// 2-D convolution, weights laid out `[out_c][in_c][k][k]`, one bias per
/// output channel.
pub fn conv2d_forward(x: &Tensor, weight: &[f32], bias: &[f32], out_c: usize, k: usize) -> Tensor {
    let [n, in_c, h, w] = x.shape;
    assert_eq!(weight.len(), out_c * in_c * k * k, "weight layout mismatch");
    assert_eq!(bias.len(), out_c, "bias length mismatch");
    assert!(k % 2 == 1, "kernel size must be odd for same padding");
    let pad = k / 2;
    let mut y = Tensor::zeros([n, out_c, h, w]);
    for img in 0..n {
        for oc in 0..out_c {
            let yp = y.plane_mut(img, oc);
            yp.fill(bias[oc]);
            for ic in 0..in_c {
                let xp = x.plane(img, ic);
                let wbase = ((oc * in_c) + ic) * k * k;
                for r in 0..h {
                    let ydst = &mut yp[r * w..(r + 1) * w];
                    for ky in 0..k {
                        let sr = r as isize + ky as isize - pad as isize;
                        if sr < 0 || sr >= h as isize {
                            continue;
                        }
                        let xrow = &xp[sr as usize * w..(sr as usize + 1) * w];
                        for kx in 0..k {
                            let ox = kx as isize - pad as isize;
                            let wv = weight[wbase + ky * k + kx];
                            let c0 = (-ox).max(0) as usize;
                            let c1 = ((w as isize - ox).min(w as isize)) as usize;
                            if c0 >= c1 {
                                continue;
                            }
                            let src = &xrow[(c0 as isize + ox) as usize..(c1 as isize + ox) as usize];
                            let dst = &mut ydst[c0..c1];
                            for (d, s) in dst.iter_mut().zip(src.iter()) {
                                *d += wv * s;
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

/// Backward pass of [`conv2d_forward`]: gradients for the input, the weight
/// grid, and the biases.
pub fn conv2d_backward(
    x: &Tensor,
    weight: &[f32],
    out_c: usize,
    k: usize,
    grad_out: &Tensor,
) -> (Tensor, Vec<f32>, Vec<f32>) {
    let [n, in_c, h, w] = x.shape;
    assert_eq!(grad_out.shape, [n, out_c, h, w], "grad_out shape mismatch");
    let pad = k / 2;
    let mut grad_x = Tensor::zeros(x.shape);
    let mut grad_w = vec![0.0f32; weight.len()];
    let mut grad_b = vec![0.0f32; out_c];

    for img in 0..n {
        for oc in 0..out_c {
            let gp = grad_out.plane(img, oc);
            grad_b[oc] += gp.iter().sum::<f32>();
            for ic in 0..in_c {
                let xp = x.plane(img, ic);
                let gxp = grad_x.plane_mut(img, ic);
                let wbase = ((oc * in_c) + ic) * k * k;
                for r in 0..h {
                    let grow = &gp[r * w..(r + 1) * w];
                    for ky in 0..k {
                        let sr = r as isize + ky as isize - pad as isize;
                        if sr < 0 || sr >= h as isize {
                            continue;
                        }
                        let sr = sr as usize;
                        for kx in 0..k {
                            let ox = kx as isize - pad as isize;
                            let c0 = (-ox).max(0) as usize;
                            let c1 = ((w as isize - ox).min(w as isize)) as usize;
                            if c0 >= c1 {
                                continue;
                            }
                            let s0 = (c0 as isize + ox) as usize;
                            let s1 = (c1 as isize + ox) as usize;
                            // dL/dw += <grad_row, x_row shifted>
                            let xs = &xp[sr * w + s0..sr * w + s1];
                            let gs = &grow[c0..c1];
                            let mut acc = 0.0f32;
                            for (gv, xv) in gs.iter().zip(xs.iter()) {
                                acc += gv * xv;
                            }
                            grad_w[wbase + ky * k + kx] += acc;
                            // dL/dx[sr][c+ox] += w * grad[r][c]
                            let wv = weight[wbase + ky * k + kx];
                            let xdst = &mut gxp[sr * w + s0..sr * w + s1];
                            for (d, gv) in xdst.iter_mut().zip(gs.iter()) {
                                *d += wv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    (grad_x, grad_w, grad_b)
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape,
        data: x.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

/// ReLU backward from the post-activation values: passes gradient where the
/// output was strictly positive.
pub fn relu_backward(post: &Tensor, grad_out: &Tensor) -> Tensor {
    assert_eq!(post.shape, grad_out.shape);
    Tensor {
        shape: post.shape,
        data: post
            .data
            .iter()
            .zip(grad_out.data.iter())
            .map(|(&a, &g)| if a > 0.0 { g } else { 0.0 })
            .collect(),
    }
}

/// 2×2 max-pool, stride 2. Returns the pooled tensor and, per output
/// element, the flat within-plane index of the argmax. Ties keep the first
/// index in scan order (top-left, top-right, bottom-left, bottom-right).
pub fn maxpool2_forward(x: &Tensor) -> (Tensor, Vec<u32>) {
    let [n, c, h, w] = x.shape;
    assert!(h % 2 == 0 && w % 2 == 0, "pooling needs even spatial dims");
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor::zeros([n, c, oh, ow]);
    let mut idx = vec![0u32; n * c * oh * ow];
    for img in 0..n {
        for ch in 0..c {
            let xp = x.plane(img, ch);
            let yp = y.plane_mut(img, ch);
            let ibase = (img * c + ch) * oh * ow;
            for r in 0..oh {
                for col in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_i = 0u32;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let fi = (2 * r + dy) * w + 2 * col + dx;
                            let v = xp[fi];
                            if v > best {
                                best = v;
                                best_i = fi as u32;
                            }
                        }
                    }
                    yp[r * ow + col] = best;
                    idx[ibase + r * ow + col] = best_i;
                }
            }
        }
    }
    (y, idx)
}

/// Routes each pooled gradient back to its argmax position.
pub fn maxpool2_backward(idx: &[u32], grad_out: &Tensor, in_shape: [usize; 4]) -> Tensor {
    let [n, c, oh, ow] = grad_out.shape;
    assert_eq!(in_shape[0], n);
    assert_eq!(in_shape[1], c);
    assert_eq!(idx.len(), n * c * oh * ow);
    let mut grad_x = Tensor::zeros(in_shape);
    for img in 0..n {
        for ch in 0..c {
            let gp = grad_out.plane(img, ch);
            let gxp = grad_x.plane_mut(img, ch);
            let ibase = (img * c + ch) * oh * ow;
            for (o, &g) in gp.iter().enumerate() {
                gxp[idx[ibase + o] as usize] += g;
            }
        }
    }
    grad_x
}

/// Nearest-neighbor 2× upsample: each input value fills a 2×2 block.
pub fn upsample2_forward(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape;
    let mut y = Tensor::zeros([n, c, 2 * h, 2 * w]);
    for img in 0..n {
        for ch in 0..c {
            let xp = x.plane(img, ch);
            let yp = y.plane_mut(img, ch);
            for r in 0..h {
                for col in 0..w {
                    let v = xp[r * w + col];
                    let base = 2 * r * 2 * w + 2 * col;
                    yp[base] = v;
                    yp[base + 1] = v;
                    yp[base + 2 * w] = v;
                    yp[base + 2 * w + 1] = v;
                }
            }
        }
    }
    y
}

/// Sums the gradient over each replicated 2×2 block.
pub fn upsample2_backward(grad_out: &Tensor) -> Tensor {
    let [n, c, h2, w2] = grad_out.shape;
    assert!(h2 % 2 == 0 && w2 % 2 == 0);
    let (h, w) = (h2 / 2, w2 / 2);
    let mut grad_x = Tensor::zeros([n, c, h, w]);
    for img in 0..n {
        for ch in 0..c {
            let gp = grad_out.plane(img, ch);
            let gxp = grad_x.plane_mut(img, ch);
            for r in 0..h {
                for col in 0..w {
                    let base = 2 * r * w2 + 2 * col;
                    gxp[r * w + col] = gp[base] + gp[base + 1] + gp[base + w2] + gp[base + w2 + 1];
                }
            }
        }
    }
    grad_x
}

/// Concatenate along the channel axis: `a`'s channels first, then `b`'s.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
    let [n, ca, h, w] = a.shape;
    let [nb, cb, hb, wb] = b.shape;
    assert_eq!((n, h, w), (nb, hb, wb), "concat spatial/batch mismatch");
    let mut y = Tensor::zeros([n, ca + cb, h, w]);
    for img in 0..n {
        for c in 0..ca {
            y.plane_mut(img, c).copy_from_slice(a.plane(img, c));
        }
        for c in 0..cb {
            y.plane_mut(img, ca + c).copy_from_slice(b.plane(img, c));
        }
    }
    y
}

/// Split a channel-concatenated gradient back into its two parts.
pub fn split_channels(grad: &Tensor, ca: usize, cb: usize) -> (Tensor, Tensor) {
    let [n, c, h, w] = grad.shape;
    assert_eq!(c, ca + cb, "split size mismatch");
    let mut ga = Tensor::zeros([n, ca, h, w]);
    let mut gb = Tensor::zeros([n, cb, h, w]);
    for img in 0..n {
        for ch in 0..ca {
            ga.plane_mut(img, ch).copy_from_slice(grad.plane(img, ch));
        }
        for ch in 0..cb {
            gb.plane_mut(img, ch).copy_from_slice(grad.plane(img, ca + ch));
        }
    }
    (ga, gb)
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape,
        data: x.data.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect(),
    }
}
