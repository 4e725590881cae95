//! Dense compute kernels behind the tape ops.
//!
//! Everything is f64 and row-major, with fixed loop order so results are
//! reproducible bit-for-bit. The convolution kernels optionally split their
//! leading dimension across threads (`D2E_THREADS`, default 1); each thread
//! writes a disjoint output block and reduces in fixed index order, so the
//! result is identical for any thread count.

use std::sync::OnceLock;

use crate::error::{D2eError, Result};
use crate::tensor::Tensor;

/// Thread cap for the batched kernels, read once from `D2E_THREADS`.
pub fn configured_threads() -> usize {
    static THREADS: OnceLock<usize> = OnceLock::new();
    *THREADS.get_or_init(|| {
        std::env::var("D2E_THREADS")
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .unwrap_or(1)
    })
}

/// Applies `work` to every `block_len`-sized chunk of `out`, spreading chunks
/// over at most `configured_threads()` threads. `work(i, block)` must derive
/// `block` purely from shared inputs and `i`.
fn for_each_block(out: &mut [f64], block_len: usize, work: impl Fn(usize, &mut [f64]) + Sync) {
    let n_blocks = if block_len == 0 { 0 } else { out.len() / block_len };
    let threads = configured_threads().min(n_blocks.max(1));
    if threads <= 1 {
        for (i, block) in out.chunks_mut(block_len.max(1)).enumerate() {
            work(i, block);
        }
        return;
    }
    let per_thread = n_blocks.div_ceil(threads);
    std::thread::scope(|scope| {
        for (t, run) in out.chunks_mut(per_thread * block_len).enumerate() {
            let work = &work;
            scope.spawn(move || {
                for (j, block) in run.chunks_mut(block_len).enumerate() {
                    work(t * per_thread + j, block);
                }
            });
        }
    });
}

// ── affine ──

/// out[i][j] = sum_k x[i][k] * w[j][k] + b[j]; x is [B×n], w is [m×n], b is [m].
pub fn affine_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    if x.ndim() != 2 || w.ndim() != 2 {
        return Err(D2eError::Dimension(format!(
            "affine expects 2-d input and weight, got {:?} and {:?}",
            x.shape, w.shape
        )));
    }
    let (batch, n_in) = (x.shape[0], x.shape[1]);
    let (m_out, w_in) = (w.shape[0], w.shape[1]);
    if w_in != n_in || b.shape != vec![m_out] {
        return Err(D2eError::Dimension(format!(
            "affine shapes: x {:?}, w {:?}, b {:?}",
            x.shape, w.shape, b.shape
        )));
    }
    let mut out = Tensor::zeros(&[batch, m_out]);
    for i in 0..batch {
        let xi = &x.data[i * n_in..(i + 1) * n_in];
        for j in 0..m_out {
            let wj = &w.data[j * n_in..(j + 1) * n_in];
            let mut acc = b.data[j];
            for k in 0..n_in {
                acc += xi[k] * wj[k];
            }
            out.data[i * m_out + j] = acc;
        }
    }
    Ok(out)
}

/// Gradients of the affine op given upstream grad g [B×m].
pub fn affine_backward(x: &Tensor, w: &Tensor, g: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (batch, n_in) = (x.shape[0], x.shape[1]);
    let m_out = w.shape[0];
    let mut dx = Tensor::zeros(&x.shape);
    let mut dw = Tensor::zeros(&w.shape);
    let mut db = Tensor::zeros(&[m_out]);
    for i in 0..batch {
        for j in 0..m_out {
            let gij = g.data[i * m_out + j];
            db.data[j] += gij;
            for k in 0..n_in {
                dx.data[i * n_in + k] += gij * w.data[j * n_in + k];
                dw.data[j * n_in + k] += gij * x.data[i * n_in + k];
            }
        }
    }
    (dx, dw, db)
}

// ── conv2d ──

/// Output spatial size for one axis; errors unless (len + 2p - k) is a
/// non-negative multiple of the stride.
pub fn conv_out_len(len: usize, k: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 || k == 0 {
        return Err(D2eError::Geometry("conv kernel and stride must be >= 1".into()));
    }
    let span = len + 2 * padding;
    if span < k || (span - k) % stride != 0 {
        return Err(D2eError::Geometry(format!(
            "conv geometry: input {}, kernel {}, stride {}, padding {} does not tile",
            len, k, stride, padding
        )));
    }
    Ok((span - k) / stride + 1)
}

/// x is [B×Cin×H×W], kernel is [Cout×Cin×K×K]; zero padding.
pub fn conv2d_forward(x: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    if x.ndim() != 4 || kernel.ndim() != 4 {
        return Err(D2eError::Dimension(format!(
            "conv2d expects 4-d input and kernel, got {:?} and {:?}",
            x.shape, kernel.shape
        )));
    }
    let (batch, c_in, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let (c_out, kc_in, kh, kw) = (kernel.shape[0], kernel.shape[1], kernel.shape[2], kernel.shape[3]);
    if kc_in != c_in || kh != kw {
        return Err(D2eError::Dimension(format!(
            "conv2d kernel {:?} does not match input {:?}",
            kernel.shape, x.shape
        )));
    }
    let h_out = conv_out_len(h, kh, stride, padding)?;
    let w_out = conv_out_len(w, kw, stride, padding)?;
    let mut out = Tensor::zeros(&[batch, c_out, h_out, w_out]);
    let block = c_out * h_out * w_out;
    for_each_block(&mut out.data, block, |b, ob| {
        for o in 0..c_out {
            for i in 0..h_out {
                for j in 0..w_out {
                    let mut acc = 0.0;
                    for c in 0..c_in {
                        for p in 0..kh {
                            let y = (i * stride + p) as isize - padding as isize;
                            if y < 0 || y >= h as isize {
                                continue;
                            }
                            for q in 0..kw {
                                let xx = (j * stride + q) as isize - padding as isize;
                                if xx < 0 || xx >= w as isize {
                                    continue;
                                }
                                acc += x.at4(b, c, y as usize, xx as usize)
                                    * kernel.at4(o, c, p, q);
                            }
                        }
                    }
                    ob[(o * h_out + i) * w_out + j] = acc;
                }
            }
        }
    });
    Ok(out)
}

/// Gradients of conv2d given upstream grad g [B×Cout×H'×W'].
pub fn conv2d_backward(
    x: &Tensor,
    kernel: &Tensor,
    g: &Tensor,
    stride: usize,
    padding: usize,
) -> (Tensor, Tensor) {
    let (batch, c_in, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let (c_out, _, kh, kw) = (kernel.shape[0], kernel.shape[1], kernel.shape[2], kernel.shape[3]);
    let (h_out, w_out) = (g.shape[2], g.shape[3]);

    let mut dx = Tensor::zeros(&x.shape);
    let dx_block = c_in * h * w;
    for_each_block(&mut dx.data, dx_block, |b, dxb| {
        for o in 0..c_out {
            for i in 0..h_out {
                for j in 0..w_out {
                    let gv = g.at4(b, o, i, j);
                    if gv == 0.0 {
                        continue;
                    }
                    for c in 0..c_in {
                        for p in 0..kh {
                            let y = (i * stride + p) as isize - padding as isize;
                            if y < 0 || y >= h as isize {
                                continue;
                            }
                            for q in 0..kw {
                                let xx = (j * stride + q) as isize - padding as isize;
                                if xx < 0 || xx >= w as isize {
                                    continue;
                                }
                                dxb[(c * h + y as usize) * w + xx as usize] +=
                                    gv * kernel.at4(o, c, p, q);
                            }
                        }
                    }
                }
            }
        }
    });

    let mut dk = Tensor::zeros(&kernel.shape);
    let dk_block = c_in * kh * kw;
    for_each_block(&mut dk.data, dk_block, |o, dko| {
        for b in 0..batch {
            for i in 0..h_out {
                for j in 0..w_out {
                    let gv = g.at4(b, o, i, j);
                    if gv == 0.0 {
                        continue;
                    }
                    for c in 0..c_in {
                        for p in 0..kh {
                            let y = (i * stride + p) as isize - padding as isize;
                            if y < 0 || y >= h as isize {
                                continue;
                            }
                            for q in 0..kw {
                                let xx = (j * stride + q) as isize - padding as isize;
                                if xx < 0 || xx >= w as isize {
                                    continue;
                                }
                                dko[(c * kh + p) * kw + q] +=
                                    gv * x.at4(b, c, y as usize, xx as usize);
                            }
                        }
                    }
                }
            }
        }
    });
    (dx, dk)
}

// ── per-channel bias ──

/// Adds b[c] to every spatial position of channel c; x is [B×C×H×W], b is [C].
pub fn channel_bias_forward(x: &Tensor, b: &Tensor) -> Result<Tensor> {
    if x.ndim() != 4 || b.shape != vec![x.shape[1]] {
        return Err(D2eError::Dimension(format!(
            "channel bias: x {:?}, b {:?}",
            x.shape, b.shape
        )));
    }
    let (batch, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let mut out = x.clone();
    for bi in 0..batch {
        for ci in 0..c {
            let base = ((bi * c + ci) * h) * w;
            for i in 0..h * w {
                out.data[base + i] += b.data[ci];
            }
        }
    }
    Ok(out)
}

pub fn channel_bias_backward(g: &Tensor) -> Tensor {
    let (batch, c, h, w) = (g.shape[0], g.shape[1], g.shape[2], g.shape[3]);
    let mut db = Tensor::zeros(&[c]);
    for bi in 0..batch {
        for ci in 0..c {
            let base = ((bi * c + ci) * h) * w;
            for i in 0..h * w {
                db.data[ci] += g.data[base + i];
            }
        }
    }
    db
}

// ── average pooling ──

/// Non-overlapping k×k mean pooling; H and W must divide by k.
pub fn avg_pool_forward(x: &Tensor, k: usize) -> Result<Tensor> {
    if x.ndim() != 4 {
        return Err(D2eError::Dimension(format!("avg_pool expects 4-d input, got {:?}", x.shape)));
    }
    let (batch, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    if k == 0 || h % k != 0 || w % k != 0 {
        return Err(D2eError::Geometry(format!(
            "avg_pool window {} does not tile {}x{}",
            k, h, w
        )));
    }
    let (ho, wo) = (h / k, w / k);
    let inv = 1.0 / (k * k) as f64;
    let mut out = Tensor::zeros(&[batch, c, ho, wo]);
    for b in 0..batch {
        for ci in 0..c {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = 0.0;
                    for p in 0..k {
                        for q in 0..k {
                            acc += x.at4(b, ci, i * k + p, j * k + q);
                        }
                    }
                    out.set4(b, ci, i, j, acc * inv);
                }
            }
        }
    }
    Ok(out)
}

pub fn avg_pool_backward(x_shape: &[usize], g: &Tensor, k: usize) -> Tensor {
    let (batch, c) = (x_shape[0], x_shape[1]);
    let (ho, wo) = (g.shape[2], g.shape[3]);
    let inv = 1.0 / (k * k) as f64;
    let mut dx = Tensor::zeros(x_shape);
    for b in 0..batch {
        for ci in 0..c {
            for i in 0..ho {
                for j in 0..wo {
                    let gv = g.at4(b, ci, i, j) * inv;
                    for p in 0..k {
                        for q in 0..k {
                            dx.set4(b, ci, i * k + p, j * k + q, gv);
                        }
                    }
                }
            }
        }
    }
    dx
}

// ── softmax ──

/// Row-wise softmax of a [B×C] tensor, stabilized by max subtraction.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    if x.ndim() != 2 {
        return Err(D2eError::Dimension(format!("softmax expects 2-d input, got {:?}", x.shape)));
    }
    let (batch, c) = (x.shape[0], x.shape[1]);
    let mut out = Tensor::zeros(&[batch, c]);
    for i in 0..batch {
        let row = &x.data[i * c..(i + 1) * c];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for j in 0..c {
            let e = (row[j] - max).exp();
            out.data[i * c + j] = e;
            denom += e;
        }
        for j in 0..c {
            out.data[i * c + j] /= denom;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_matches_hand_example() {
        let x = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let b = Tensor::new(vec![1], vec![0.0]).unwrap();
        let out = affine_forward(&x, &w, &b).unwrap();
        assert_eq!(out.data, vec![3.0]);
    }

    #[test]
    fn affine_rejects_mismatched_shapes() {
        let x = Tensor::zeros(&[1, 3]);
        let w = Tensor::zeros(&[2, 2]);
        let b = Tensor::zeros(&[2]);
        assert!(affine_forward(&x, &w, &b).is_err());
    }

    #[test]
    fn conv_constant_image_hand_value() {
        // every 2x2 window over a constant -1 image sums to -4
        let x = Tensor::full(&[1, 1, 3, 3], -1.0);
        let k = Tensor::full(&[1, 1, 2, 2], 1.0);
        let out = conv2d_forward(&x, &k, 1, 0).unwrap();
        assert_eq!(out.shape, vec![1, 1, 2, 2]);
        assert!(out.data.iter().all(|&v| v == -4.0));
    }

    #[test]
    fn conv_center_cell_seen_once_per_window() {
        // 3x3 image of -1 with a -2 center; each 2x2 window covers the center
        // exactly once: 3*(-1) + (-2) = -5
        let mut x = Tensor::full(&[1, 1, 3, 3], -1.0);
        x.set4(0, 0, 1, 1, -2.0);
        let k = Tensor::full(&[1, 1, 2, 2], 1.0);
        let out = conv2d_forward(&x, &k, 1, 0).unwrap();
        assert!(out.data.iter().all(|&v| v == -5.0));
    }

    #[test]
    fn conv_geometry_errors() {
        let x = Tensor::zeros(&[1, 1, 5, 5]);
        let k = Tensor::zeros(&[1, 1, 2, 2]);
        // (5 - 2) % 2 != 0
        assert!(conv2d_forward(&x, &k, 2, 0).is_err());
        assert!(conv2d_forward(&x, &k, 1, 0).is_ok());
    }

    #[test]
    fn padding_keeps_resolution_for_k3() {
        let x = Tensor::zeros(&[2, 3, 16, 16]);
        let k = Tensor::zeros(&[8, 3, 3, 3]);
        let out = conv2d_forward(&x, &k, 1, 1).unwrap();
        assert_eq!(out.shape, vec![2, 8, 16, 16]);
    }

    #[test]
    fn avg_pool_means_blocks() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        let out = avg_pool_forward(&x, 2).unwrap();
        assert_eq!(out.data, vec![3.0]);
        assert!(avg_pool_forward(&Tensor::zeros(&[1, 1, 3, 3]), 2).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -5.0, 0.0, 5.0]).unwrap();
        let p = softmax_rows(&x).unwrap();
        for i in 0..2 {
            let s: f64 = p.data[i * 3..(i + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn softmax_stability_at_large_logits() {
        let x = Tensor::new(vec![1, 2], vec![1000.0, 1000.0 + (9.0f64).ln()]).unwrap();
        let p = softmax_rows(&x).unwrap();
        assert!((p.data[0] - 0.1).abs() < 1e-9);
        assert!((p.data[1] - 0.9).abs() < 1e-9);
    }
}
