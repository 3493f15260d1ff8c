//! Raw math kernels on flat f64 slices. Outer loops are data-parallel over
//! disjoint output chunks; the per-element computation is identical in the
//! sequential and parallel builds, so results are bit-identical regardless
//! of the `parallel` feature or thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this output size the rayon dispatch overhead is not worth paying.
const PAR_MIN_ELEMS: usize = 32768;
/// Minimum elements a single rayon task should own.
#[cfg(feature = "parallel")]
const TASK_MIN_ELEMS: usize = 8192;

/// Applies `f(offset, chunk)` over consecutive `chunk`-sized pieces of `out`,
/// where `offset` is the element index of the chunk start. The final chunk
/// may be shorter.
pub fn for_each_chunk<F>(out: &mut [f64], chunk: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    debug_assert!(chunk > 0);
    #[cfg(feature = "parallel")]
    {
        if out.len() >= PAR_MIN_ELEMS {
            let min_chunks = TASK_MIN_ELEMS.div_ceil(chunk);
            out.par_chunks_mut(chunk)
                .with_min_len(min_chunks)
                .enumerate()
                .for_each(|(i, c)| f(i * chunk, c));
            return;
        }
    }
    for (i, c) in out.chunks_mut(chunk).enumerate() {
        f(i * chunk, c);
    }
}

// ── shape helpers ────────────────────────────────────────────────────────

pub fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for (s, d) in strides.iter_mut().zip(shape).rev() {
        *s = acc;
        acc *= d;
    }
    strides
}

/// Strides for indexing `rhs` while iterating `lhs` linearly; broadcast
/// dimensions get stride 0. `rhs` is aligned to the trailing dims of `lhs`.
/// Returns None when the shapes are incompatible.
pub fn broadcast_strides(lhs: &[usize], rhs: &[usize]) -> Option<Vec<usize>> {
    if rhs.len() > lhs.len() {
        return None;
    }
    let offset = lhs.len() - rhs.len();
    let rhs_strides = strides_of(rhs);
    let mut out = vec![0usize; lhs.len()];
    for i in 0..rhs.len() {
        let (ld, rd) = (lhs[offset + i], rhs[i]);
        if rd == ld {
            out[offset + i] = rhs_strides[i];
        } else if rd == 1 {
            out[offset + i] = 0;
        } else {
            return None;
        }
    }
    Some(out)
}

/// Maps a linear index in `shape` to a linear index under `strides`.
#[inline]
pub fn remap_index(mut lin: usize, shape: &[usize], strides: &[usize]) -> usize {
    let mut idx = 0;
    for k in (0..shape.len()).rev() {
        let d = shape[k];
        idx += (lin % d) * strides[k];
        lin /= d;
    }
    idx
}

// ── elementwise ──────────────────────────────────────────────────────────

pub fn map_unary(x: &[f64], f: impl Fn(f64) -> f64 + Sync) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for_each_chunk(&mut out, 1024, |offset, c| {
        for (j, o) in c.iter_mut().enumerate() {
            *o = f(x[offset + j]);
        }
    });
    out
}

pub fn map_binary_same(x: &[f64], y: &[f64], f: impl Fn(f64, f64) -> f64 + Sync) -> Vec<f64> {
    debug_assert_eq!(x.len(), y.len());
    let mut out = vec![0.0; x.len()];
    for_each_chunk(&mut out, 1024, |offset, c| {
        for (j, o) in c.iter_mut().enumerate() {
            *o = f(x[offset + j], y[offset + j]);
        }
    });
    out
}

/// out[i] = f(a[i], b[broadcast(i)])
pub fn zip_broadcast(
    a: &[f64],
    a_shape: &[usize],
    b: &[f64],
    b_strides: &[usize],
    f: impl Fn(f64, f64) -> f64 + Sync,
) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    let chunk = (*a_shape.last().unwrap_or(&1)).max(1);
    for_each_chunk(&mut out, chunk, |offset, c| {
        for (j, o) in c.iter_mut().enumerate() {
            let bi = remap_index(offset + j, a_shape, b_strides);
            *o = f(a[offset + j], b[bi]);
        }
    });
    out
}

/// Accumulates `grad` (shaped like lhs) into the rhs gradient buffer,
/// summing over broadcast axes.
pub fn reduce_into_rhs(grad: &[f64], lhs_shape: &[usize], b_strides: &[usize], out: &mut [f64]) {
    for (i, g) in grad.iter().enumerate() {
        out[remap_index(i, lhs_shape, b_strides)] += g;
    }
}

// ── matmul family ────────────────────────────────────────────────────────

/// C[m,n] = A[m,k] · B[k,n]
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    let n1 = n.max(1);
    for_each_chunk(&mut out, n1, |offset, row| {
        let i = offset / n1;
        let a_row = &a[i * k..(i + 1) * k];
        for (kk, &av) in a_row.iter().enumerate() {
            if av != 0.0 {
                let b_row = &b[kk * n..kk * n + row.len()];
                for (o, &bv) in row.iter_mut().zip(b_row) {
                    *o += av * bv;
                }
            }
        }
    });
    out
}

/// C[m,k] = A[m,n] · B[k,n]^T, i.e. matmul with the second operand transposed.
pub fn matmul_bt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    let k1 = k.max(1);
    for_each_chunk(&mut out, k1, |offset, row| {
        let i = offset / k1;
        let a_row = &a[i * n..(i + 1) * n];
        for (kk, o) in row.iter_mut().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            let mut acc = 0.0;
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            *o = acc;
        }
    });
    let _ = m;
    out
}

/// C[k,n] = A[m,k]^T · B[m,n]
pub fn matmul_at(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    let n1 = n.max(1);
    for_each_chunk(&mut out, n1, |offset, row| {
        let kk = offset / n1;
        for i in 0..m {
            let av = a[i * k + kk];
            if av != 0.0 {
                let b_row = &b[i * n..i * n + row.len()];
                for (o, &bv) in row.iter_mut().zip(b_row) {
                    *o += av * bv;
                }
            }
        }
    });
    out
}

pub fn batched_matmul(a: &[f64], b: &[f64], bt: usize, m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; bt * m * n];
    let plane = (m * n).max(1);
    for_each_chunk(&mut out, plane, |offset, c| {
        let i = offset / plane;
        let r = matmul(
            &a[i * m * k..(i + 1) * m * k],
            &b[i * k * n..(i + 1) * k * n],
            m,
            k,
            n,
        );
        c.copy_from_slice(&r);
    });
    out
}

// ── softmax / normalization ──────────────────────────────────────────────

/// Additive constant applied to masked scores before exponentiation.
/// Large enough that exp underflows to exactly 0.0 for any sane input.
pub const MASK_NEG: f64 = -1e30;

/// Row-wise softmax over the last dimension. `mask`, when present, is indexed
/// through broadcast strides (0.0 = masked). Fully masked rows produce
/// all-zero output.
pub fn softmax_rows(
    x: &[f64],
    shape: &[usize],
    mask: Option<(&[f64], &[usize])>,
    out: &mut [f64],
) {
    let last = (*shape.last().unwrap_or(&1)).max(1);
    for_each_chunk(out, last, |base, o| {
        let xs = &x[base..base + last];
        let mut any_live = false;
        let mut max = f64::NEG_INFINITY;
        for (j, &xj) in xs.iter().enumerate() {
            let masked = match mask {
                Some((m, ms)) => m[remap_index(base + j, shape, ms)] == 0.0,
                None => false,
            };
            let v = if masked { xj + MASK_NEG } else { xj };
            if !masked {
                any_live = true;
            }
            if v > max {
                max = v;
            }
        }
        if !any_live {
            o.fill(0.0);
            return;
        }
        let mut sum = 0.0;
        for (j, &xj) in xs.iter().enumerate() {
            let masked = match mask {
                Some((m, ms)) => m[remap_index(base + j, shape, ms)] == 0.0,
                None => false,
            };
            let v = if masked { xj + MASK_NEG } else { xj };
            let e = (v - max).exp();
            o[j] = e;
            sum += e;
        }
        let inv = 1.0 / sum;
        for v in o.iter_mut() {
            *v *= inv;
        }
    });
}

/// dX for softmax given the saved output `y` and upstream grad `g`:
/// dx_j = y_j * (g_j - sum_k g_k y_k). Masked positions have y_j = 0.
pub fn softmax_backward(y: &[f64], g: &[f64], last: usize, out: &mut [f64]) {
    for_each_chunk(out, last, |base, o| {
        let mut dot = 0.0;
        for j in 0..o.len() {
            dot += g[base + j] * y[base + j];
        }
        for (j, oj) in o.iter_mut().enumerate() {
            *oj = y[base + j] * (g[base + j] - dot);
        }
    });
}

/// Layer normalization over the last dim. Fills per-row (mean, rstd).
pub fn layernorm_rows(
    x: &[f64],
    last: usize,
    eps: f64,
    gamma: &[f64],
    beta: &[f64],
    out: &mut [f64],
    mean_out: &mut [f64],
    rstd_out: &mut [f64],
) {
    let rows = x.len() / last;
    for r in 0..rows {
        let base = r * last;
        let xs = &x[base..base + last];
        let mean = xs.iter().sum::<f64>() / last as f64;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / last as f64;
        let rstd = 1.0 / (var + eps).sqrt();
        mean_out[r] = mean;
        rstd_out[r] = rstd;
        for j in 0..last {
            out[base + j] = (xs[j] - mean) * rstd * gamma[j] + beta[j];
        }
    }
}

// ── conv ─────────────────────────────────────────────────────────────────

/// Output length of a padded strided 1-D convolution.
pub fn conv_out_len(t: usize, k: usize, stride: usize, pad: usize) -> usize {
    (t + 2 * pad - k) / stride + 1
}

/// Temporal 1-D convolution on x[N,Cin,T,V] with w[Cout,Cin,K], zero padding.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_time(
    x: &[f64],
    w: &[f64],
    bias: &[f64],
    n: usize,
    cin: usize,
    t: usize,
    v: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let to = conv_out_len(t, k, stride, pad);
    let mut out = vec![0.0; n * cout * to * v];
    let plane = to * v;
    for_each_chunk(&mut out, plane, |offset, chunk| {
        let nc = offset / plane;
        let ni = nc / cout;
        let co = nc % cout;
        for tt in 0..to {
            let row = &mut chunk[tt * v..(tt + 1) * v];
            row.fill(bias[co]);
            for ci in 0..cin {
                let x_plane = &x[(ni * cin + ci) * t * v..(ni * cin + ci + 1) * t * v];
                for kk in 0..k {
                    let ti = (tt * stride + kk) as isize - pad as isize;
                    if ti < 0 || ti >= t as isize {
                        continue;
                    }
                    let wv = w[(co * cin + ci) * k + kk];
                    if wv == 0.0 {
                        continue;
                    }
                    let x_row = &x_plane[ti as usize * v..(ti as usize + 1) * v];
                    for (o, &xv) in row.iter_mut().zip(x_row) {
                        *o += wv * xv;
                    }
                }
            }
        }
    });
    out
}

#[allow(clippy::too_many_arguments)]
pub fn conv1d_time_backward(
    x: &[f64],
    w: &[f64],
    g: &[f64],
    n: usize,
    cin: usize,
    t: usize,
    v: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let to = conv_out_len(t, k, stride, pad);
    let mut dx = vec![0.0; x.len()];
    let x_plane_len = t * v;
    for_each_chunk(&mut dx, x_plane_len, |offset, plane| {
        let nc = offset / x_plane_len;
        let ni = nc / cin;
        let ci = nc % cin;
        for co in 0..cout {
            let g_plane = &g[(ni * cout + co) * to * v..(ni * cout + co + 1) * to * v];
            for kk in 0..k {
                let wv = w[(co * cin + ci) * k + kk];
                if wv == 0.0 {
                    continue;
                }
                for tt in 0..to {
                    let ti = (tt * stride + kk) as isize - pad as isize;
                    if ti < 0 || ti >= t as isize {
                        continue;
                    }
                    let g_row = &g_plane[tt * v..(tt + 1) * v];
                    let x_row = &mut plane[ti as usize * v..(ti as usize + 1) * v];
                    for (o, &gv) in x_row.iter_mut().zip(g_row) {
                        *o += wv * gv;
                    }
                }
            }
        }
    });
    let mut dw = vec![0.0; w.len()];
    for_each_chunk(&mut dw, k, |offset, wrow| {
        let cc = offset / k;
        let co = cc / cin;
        let ci = cc % cin;
        for ni in 0..n {
            let g_plane = &g[(ni * cout + co) * to * v..(ni * cout + co + 1) * to * v];
            let x_plane = &x[(ni * cin + ci) * t * v..(ni * cin + ci + 1) * t * v];
            for (kk, o) in wrow.iter_mut().enumerate() {
                let mut acc = 0.0;
                for tt in 0..to {
                    let ti = (tt * stride + kk) as isize - pad as isize;
                    if ti < 0 || ti >= t as isize {
                        continue;
                    }
                    let g_row = &g_plane[tt * v..(tt + 1) * v];
                    let x_row = &x_plane[ti as usize * v..(ti as usize + 1) * v];
                    for (&gv, &xv) in g_row.iter().zip(x_row) {
                        acc += gv * xv;
                    }
                }
                *o += acc;
            }
        }
    });
    let mut db = vec![0.0; cout];
    for (co, o) in db.iter_mut().enumerate() {
        let mut acc = 0.0;
        for ni in 0..n {
            let g_plane = &g[(ni * cout + co) * to * v..(ni * cout + co + 1) * to * v];
            acc += g_plane.iter().sum::<f64>();
        }
        *o = acc;
    }
    (dx, dw, db)
}

// ── reductions / movement ────────────────────────────────────────────────

/// Sum (or mean) over the given axes, which are removed from the shape.
pub fn reduce_axes(x: &[f64], shape: &[usize], axes: &[usize], mean: bool) -> Vec<f64> {
    let keep: Vec<usize> = (0..shape.len()).filter(|d| !axes.contains(d)).collect();
    let out_shape: Vec<usize> = keep.iter().map(|&d| shape[d]).collect();
    let red_shape: Vec<usize> = axes.iter().map(|&d| shape[d]).collect();
    let out_numel: usize = out_shape.iter().product::<usize>().max(1);
    let red_numel: usize = red_shape.iter().product::<usize>().max(1);
    let strides = strides_of(shape);
    let keep_strides: Vec<usize> = keep.iter().map(|&d| strides[d]).collect();
    let red_strides: Vec<usize> = axes.iter().map(|&d| strides[d]).collect();
    let mut out = vec![0.0; out_numel];
    let scale = if mean { 1.0 / red_numel as f64 } else { 1.0 };
    for_each_chunk(&mut out, 64, |offset, c| {
        for (j, o) in c.iter_mut().enumerate() {
            let base = remap_index(offset + j, &out_shape, &keep_strides);
            let mut acc = 0.0;
            for ri in 0..red_numel {
                acc += x[base + remap_index(ri, &red_shape, &red_strides)];
            }
            *o = acc * scale;
        }
    });
    out
}

/// Scatter of the reduced gradient back to the input shape.
pub fn reduce_axes_backward(g: &[f64], shape: &[usize], axes: &[usize], mean: bool) -> Vec<f64> {
    let keep: Vec<usize> = (0..shape.len()).filter(|d| !axes.contains(d)).collect();
    let out_shape: Vec<usize> = keep.iter().map(|&d| shape[d]).collect();
    let red_numel: usize = axes.iter().map(|&d| shape[d]).product::<usize>().max(1);
    let out_strides_full = {
        let os = strides_of(&out_shape);
        let mut full = vec![0usize; shape.len()];
        for (i, &d) in keep.iter().enumerate() {
            full[d] = os[i];
        }
        full
    };
    let scale = if mean { 1.0 / red_numel as f64 } else { 1.0 };
    let numel: usize = shape.iter().product();
    let mut dx = vec![0.0; numel];
    for_each_chunk(&mut dx, 1024, |offset, c| {
        for (j, o) in c.iter_mut().enumerate() {
            *o = g[remap_index(offset + j, shape, &out_strides_full)] * scale;
        }
    });
    dx
}

pub fn permute(x: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let out_shape: Vec<usize> = perm.iter().map(|&d| shape[d]).collect();
    let in_strides = strides_of(shape);
    let src_strides: Vec<usize> = perm.iter().map(|&d| in_strides[d]).collect();
    let mut out = vec![0.0; x.len()];
    let chunk = (*out_shape.last().unwrap_or(&1)).max(1);
    for_each_chunk(&mut out, chunk, |offset, c| {
        for (j, o) in c.iter_mut().enumerate() {
            *o = x[remap_index(offset + j, &out_shape, &src_strides)];
        }
    });
    out
}
