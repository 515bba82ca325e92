//! Raw loop kernels behind the graph ops. Hot paths parallelize over
//! independent output slices only, so results are bit-identical to the
//! sequential order.

use rayon::prelude::*;

/// C[m,n] = A[m,k] * B[k,n], accumulated row by row so the inner loop
/// vectorizes.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for (i, out_row) in out.chunks_exact_mut(n).enumerate() {
        out_row.fill(0.0);
        for (p, b_row) in b.chunks_exact(n).enumerate() {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
}

/// C[m,n] = A[k,m]^T * B[k,n].
pub fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), m * n);
    for out_row in out.iter_mut() {
        *out_row = 0.0;
    }
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let apm = a_row[i];
            if apm == 0.0 {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += apm * bv;
            }
        }
    }
}

/// C[m,n] = A[m,k] * B[n,k]^T. B is transposed into a scratch buffer so
/// the accumulation runs over contiguous rows.
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), m * n);
    let mut bt = vec![0.0; k * n];
    for (j, b_row) in b.chunks_exact(k).enumerate() {
        for (p, &v) in b_row.iter().enumerate() {
            bt[p * n + j] = v;
        }
    }
    matmul(a, &bt, m, k, n, out);
}

/// Batched matmul: out[b] = A[b] * B[b] for b independent batch items.
pub fn bmm(
    a: &[f64],
    b: &[f64],
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    out: &mut [f64],
) {
    debug_assert_eq!(out.len(), batch * m * n);
    out.par_chunks_exact_mut(m * n)
        .enumerate()
        .for_each(|(bi, out_b)| {
            matmul(&a[bi * m * k..(bi + 1) * m * k], &b[bi * k * n..(bi + 1) * k * n], m, k, n, out_b)
        });
    let _ = batch;
}

/// out[b] = W * X[b] with one shared weight matrix.
pub fn linear_map(
    w: &[f64],
    x: &[f64],
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    out: &mut [f64],
) {
    debug_assert_eq!(out.len(), batch * m * n);
    out.par_chunks_exact_mut(m * n)
        .enumerate()
        .for_each(|(bi, out_b)| matmul(w, &x[bi * k * n..(bi + 1) * k * n], m, k, n, out_b));
    let _ = batch;
}

/// Valid output range for one kernel tap: all `ow` with
/// 0 <= ow*stride - padding + kw < w_in.
#[inline]
fn tap_range(w_in: usize, w_out: usize, stride: usize, padding: usize, kw: usize) -> (usize, usize) {
    let lo = if kw >= padding {
        0
    } else {
        (padding - kw).div_ceil(stride)
    };
    // ow*stride + kw - padding <= w_in - 1
    let hi_num = w_in + padding;
    let hi = if hi_num > kw {
        (((hi_num - kw - 1) / stride) + 1).min(w_out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Cross-correlation forward: out[b,co,oh,ow] = sum_{ci,kh,kw}
/// x[b,ci,oh*s-p+kh,ow*s-p+kw] * k[co,ci,kh,kw]. Zero padding.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward(
    x: &[f64],
    kernel: &[f64],
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    h_out: usize,
    w_out: usize,
    out: &mut [f64],
) {
    debug_assert_eq!(out.len(), batch * c_out * h_out * w_out);
    out.par_chunks_exact_mut(c_out * h_out * w_out)
        .enumerate()
        .for_each(|(b, out_b)| {
            let x_b = &x[b * c_in * h * w..(b + 1) * c_in * h * w];
            out_b.fill(0.0);
            for co in 0..c_out {
                let out_c = &mut out_b[co * h_out * w_out..(co + 1) * h_out * w_out];
                for ci in 0..c_in {
                    let x_c = &x_b[ci * h * w..(ci + 1) * h * w];
                    let k_base = (co * c_in + ci) * kh * kw;
                    for dkh in 0..kh {
                        let (oh_lo, oh_hi) = tap_range(h, h_out, stride, padding, dkh);
                        for dkw in 0..kw {
                            let kv = kernel[k_base + dkh * kw + dkw];
                            if kv == 0.0 {
                                continue;
                            }
                            let (ow_lo, ow_hi) = tap_range(w, w_out, stride, padding, dkw);
                            for oh in oh_lo..oh_hi {
                                let ih = oh * stride + dkh - padding;
                                let x_row = &x_c[ih * w..(ih + 1) * w];
                                let out_row = &mut out_c[oh * w_out..(oh + 1) * w_out];
                                if stride == 1 {
                                    let ishift = ow_lo + dkw - padding;
                                    for (o, &xv) in out_row[ow_lo..ow_hi]
                                        .iter_mut()
                                        .zip(&x_row[ishift..ishift + (ow_hi - ow_lo)])
                                    {
                                        *o += kv * xv;
                                    }
                                } else {
                                    for ow in ow_lo..ow_hi {
                                        let iw = ow * stride + dkw - padding;
                                        out_row[ow] += kv * x_row[iw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    let _ = batch;
}

/// Gradient of conv2d w.r.t. the input.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward_input(
    grad_out: &[f64],
    kernel: &[f64],
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    h_out: usize,
    w_out: usize,
    grad_x: &mut [f64],
) {
    debug_assert_eq!(grad_x.len(), batch * c_in * h * w);
    grad_x
        .par_chunks_exact_mut(c_in * h * w)
        .enumerate()
        .for_each(|(b, gx_b)| {
            let go_b = &grad_out[b * c_out * h_out * w_out..(b + 1) * c_out * h_out * w_out];
            gx_b.fill(0.0);
            for co in 0..c_out {
                let go_c = &go_b[co * h_out * w_out..(co + 1) * h_out * w_out];
                for ci in 0..c_in {
                    let gx_c = &mut gx_b[ci * h * w..(ci + 1) * h * w];
                    let k_base = (co * c_in + ci) * kh * kw;
                    for dkh in 0..kh {
                        let (oh_lo, oh_hi) = tap_range(h, h_out, stride, padding, dkh);
                        for dkw in 0..kw {
                            let kv = kernel[k_base + dkh * kw + dkw];
                            if kv == 0.0 {
                                continue;
                            }
                            let (ow_lo, ow_hi) = tap_range(w, w_out, stride, padding, dkw);
                            for oh in oh_lo..oh_hi {
                                let ih = oh * stride + dkh - padding;
                                let go_row = &go_c[oh * w_out..(oh + 1) * w_out];
                                let gx_row = &mut gx_c[ih * w..(ih + 1) * w];
                                for ow in ow_lo..ow_hi {
                                    let iw = ow * stride + dkw - padding;
                                    gx_row[iw] += kv * go_row[ow];
                                }
                            }
                        }
                    }
                }
            }
        });
    let _ = batch;
}

/// Gradient of conv2d w.r.t. the kernel. Parallel over output channels;
/// each kernel element is reduced in fixed (b, oh, ow) order.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward_kernel(
    grad_out: &[f64],
    x: &[f64],
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    h_out: usize,
    w_out: usize,
    grad_k: &mut [f64],
) {
    debug_assert_eq!(grad_k.len(), c_out * c_in * kh * kw);
    grad_k
        .par_chunks_exact_mut(c_in * kh * kw)
        .enumerate()
        .for_each(|(co, gk_co)| {
            gk_co.fill(0.0);
            for b in 0..batch {
                let x_b = &x[b * c_in * h * w..(b + 1) * c_in * h * w];
                let go_c = &grad_out[(b * c_out + co) * h_out * w_out..][..h_out * w_out];
                for ci in 0..c_in {
                    let x_c = &x_b[ci * h * w..(ci + 1) * h * w];
                    for dkh in 0..kh {
                        let (oh_lo, oh_hi) = tap_range(h, h_out, stride, padding, dkh);
                        for dkw in 0..kw {
                            let (ow_lo, ow_hi) = tap_range(w, w_out, stride, padding, dkw);
                            let mut acc = 0.0;
                            for oh in oh_lo..oh_hi {
                                let ih = oh * stride + dkh - padding;
                                let x_row = &x_c[ih * w..(ih + 1) * w];
                                let go_row = &go_c[oh * w_out..(oh + 1) * w_out];
                                for ow in ow_lo..ow_hi {
                                    let iw = ow * stride + dkw - padding;
                                    acc += go_row[ow] * x_row[iw];
                                }
                            }
                            gk_co[ci * kh * kw + dkh * kw + dkw] += acc;
                        }
                    }
                }
            }
        });
    let _ = batch;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv_reference(
        x: &[f64],
        k: &[f64],
        (b, ci, h, w): (usize, usize, usize, usize),
        (co, kh, kw): (usize, usize, usize),
        stride: usize,
        padding: usize,
    ) -> Vec<f64> {
        let h_out = (h + 2 * padding - kh) / stride + 1;
        let w_out = (w + 2 * padding - kw) / stride + 1;
        let mut out = vec![0.0; b * co * h_out * w_out];
        for bi in 0..b {
            for oc in 0..co {
                for oh in 0..h_out {
                    for ow in 0..w_out {
                        let mut acc = 0.0;
                        for ic in 0..ci {
                            for dh in 0..kh {
                                for dw in 0..kw {
                                    let ih = (oh * stride + dh) as isize - padding as isize;
                                    let iw = (ow * stride + dw) as isize - padding as isize;
                                    if ih >= 0 && iw >= 0 && (ih as usize) < h && (iw as usize) < w
                                    {
                                        acc += x[((bi * ci + ic) * h + ih as usize) * w
                                            + iw as usize]
                                            * k[((oc * ci + ic) * kh + dh) * kw + dw];
                                    }
                                }
                            }
                        }
                        out[((bi * co + oc) * h_out + oh) * w_out + ow] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_forward_matches_naive_reference() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for &(b, ci, h, w, co, k, s, p) in &[
            (2usize, 3usize, 5usize, 5usize, 4usize, 3usize, 1usize, 1usize),
            (1, 2, 6, 6, 3, 3, 2, 1),
            (2, 4, 4, 7, 2, 1, 1, 0),
            (1, 1, 5, 5, 1, 3, 2, 0),
        ] {
            let x: Vec<f64> = (0..b * ci * h * w).map(|_| rng.random::<f64>() - 0.5).collect();
            let kern: Vec<f64> = (0..co * ci * k * k).map(|_| rng.random::<f64>() - 0.5).collect();
            let h_out = (h + 2 * p - k) / s + 1;
            let w_out = (w + 2 * p - k) / s + 1;
            let mut out = vec![0.0; b * co * h_out * w_out];
            conv2d_forward(&x, &kern, b, ci, h, w, co, k, k, s, p, h_out, w_out, &mut out);
            let want = conv_reference(&x, &kern, (b, ci, h, w), (co, k, k), s, p);
            for (a, e) in out.iter().zip(&want) {
                assert!((a - e).abs() < 1e-12, "conv mismatch: {a} vs {e}");
            }
        }
    }

    #[test]
    fn matmul_variants_agree() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let (m, k, n) = (4, 5, 6);
        let a: Vec<f64> = (0..m * k).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.random::<f64>()).collect();
        let mut c = vec![0.0; m * n];
        matmul(&a, &b, m, k, n, &mut c);
        // Transposed copies.
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        let mut bt = vec![0.0; n * k];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b[p * n + j];
            }
        }
        let mut c_tn = vec![0.0; m * n];
        matmul_tn(&at, &b, m, k, n, &mut c_tn);
        let mut c_nt = vec![0.0; m * n];
        matmul_nt(&a, &bt, m, k, n, &mut c_nt);
        for i in 0..m * n {
            assert!((c[i] - c_tn[i]).abs() < 1e-12);
            assert!((c[i] - c_nt[i]).abs() < 1e-12);
        }
    }
}
