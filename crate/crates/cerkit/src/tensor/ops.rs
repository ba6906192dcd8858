//! Differentiable tensor operations.
//!
//! Every op validates shapes, computes its forward value, and — when the tape
//! is recording and an input requires gradients — registers a backward closure
//! that accumulates vector-Jacobian products into its inputs.

use rand::Rng;

use super::{Scalar, Tape, Tensor, TensorError};

fn dims2<E: Scalar>(t: &Tensor<E>, op: &'static str) -> Result<(usize, usize), TensorError> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        other => Err(TensorError::InvalidShape {
            op,
            shape: other.to_vec(),
            detail: "expected a rank-2 tensor".into(),
        }),
    }
}

/// Plain row-major matrix product used by forward and backward passes.
///
/// ikj loop order keeps the inner loop contiguous in both `b` and `out`.
pub(crate) fn matmul_raw<E: Scalar>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    let mut out = vec![E::zero(); m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == E::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + aip * bv;
            }
        }
    }
    out
}

fn transpose_raw<E: Scalar>(a: &[E], rows: usize, cols: usize) -> Vec<E> {
    let mut out = vec![E::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Matrix product of an `M×K` and a `K×P` tensor.
pub fn matmul<E: Scalar>(
    tape: &Tape<E>,
    a: &Tensor<E>,
    b: &Tensor<E>,
) -> Result<Tensor<E>, TensorError> {
    let (m, k) = dims2(a, "matmul")?;
    let (k2, n) = dims2(b, "matmul")?;
    if k != k2 {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let data = matmul_raw(a.data(), b.data(), m, k, n);
    let track = tape.tracks(&[a, b]);
    let out = Tensor::raw(vec![m, n], data, track);
    if track {
        let (a, b, out_h) = (a.clone(), b.clone(), out.clone());
        tape.record(move || {
            let Some(d_out) = out_h.grad() else { return };
            if a.requires_grad() {
                // dA = dOut · Bᵀ
                let bt = transpose_raw(b.data(), k, n);
                let da = matmul_raw(&d_out, &bt, m, n, k);
                a.accumulate_grad(&da);
            }
            if b.requires_grad() {
                // dB = Aᵀ · dOut
                let at = transpose_raw(a.data(), m, k);
                let db = matmul_raw(&at, &d_out, k, m, n);
                b.accumulate_grad(&db);
            }
        });
    }
    Ok(out)
}

/// Transpose of a rank-2 tensor.
pub fn transpose<E: Scalar>(tape: &Tape<E>, x: &Tensor<E>) -> Result<Tensor<E>, TensorError> {
    let (r, c) = dims2(x, "transpose")?;
    let out = Tensor::raw(vec![c, r], transpose_raw(x.data(), r, c), tape.tracks(&[x]));
    if out.requires_grad() {
        let (x, out_h) = (x.clone(), out.clone());
        tape.record(move || {
            let Some(d_out) = out_h.grad() else { return };
            x.accumulate_grad(&transpose_raw(&d_out, c, r));
        });
    }
    Ok(out)
}

fn same_shape<E: Scalar>(
    op: &'static str,
    a: &Tensor<E>,
    b: &Tensor<E>,
) -> Result<(), TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// Elementwise sum of two same-shape tensors.
pub fn add<E: Scalar>(
    tape: &Tape<E>,
    a: &Tensor<E>,
    b: &Tensor<E>,
) -> Result<Tensor<E>, TensorError> {
    same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    let out = Tensor::raw(a.shape().to_vec(), data, tape.tracks(&[a, b]));
    if out.requires_grad() {
        let (a, b, out_h) = (a.clone(), b.clone(), out.clone());
        tape.record(move || {
            let Some(d_out) = out_h.grad() else { return };
            if a.requires_grad() {
                a.accumulate_grad(&d_out);
            }
            if b.requires_grad() {
                b.accumulate_grad(&d_out);
            }
        });
    }
    Ok(out)
}

/// Elementwise (Hadamard) product.
pub fn mul<E: Scalar>(
    tape: &Tape<E>,
    a: &Tensor<E>,
    b: &Tensor<E>,
) -> Result<Tensor<E>, TensorError> {
    same_shape("mul", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    let out = Tensor::raw(a.shape().to_vec(), data, tape.tracks(&[a, b]));
    if out.requires_grad() {
        let (a, b, out_h) = (a.clone(), b.clone(), out.clone());
        tape.record(move || {
            let Some(d_out) = out_h.grad() else { return };
            if a.requires_grad() {
                let da: Vec<E> = d_out.iter().zip(b.data()).map(|(&d, &y)| d * y).collect();
                a.accumulate_grad(&da);
            }
            if b.requires_grad() {
                let db: Vec<E> = d_out.iter().zip(a.data()).map(|(&d, &x)| d * x).collect();
                b.accumulate_grad(&db);
            }
        });
    }
    Ok(out)
}

/// Multiply every element by a constant.
pub fn scale<E: Scalar>(tape: &Tape<E>, x: &Tensor<E>, c: f64) -> Result<Tensor<E>, TensorError> {
    let ce = E::of_f64(c);
    let data = x.data().iter().map(|&v| v * ce).collect();
    let out = Tensor::raw(x.shape().to_vec(), data, tape.tracks(&[x]));
    if out.requires_grad() {
        let (x, out_h) = (x.clone(), out.clone());
        tape.record(move || {
            let Some(d_out) = out_h.grad() else { return };
            let dx: Vec<E> = d_out.iter().map(|&d| d * ce).collect();
            x.accumulate_grad(&dx);
        });
    }
    Ok(out)
}

/// Add a length-`D` bias vector to every row of an `L×D` tensor.
pub fn add_bias<E: Scalar>(
    tape: &Tape<E>,
    x: &Tensor<E>,
    bias: &Tensor<E>,
) -> Result<Tensor<E>, TensorError> {
    let (rows, cols) = dims2(x, "add_bias")?;
    if bias.shape() != [cols] {
        return Err(TensorError::ShapeMismatch {
            op: "add_bias",
            lhs: x.shape().to_vec(),
            rhs: bias.shape().to_vec(),
        });
    }
    let mut data = x.data().to_vec();
    for r in 0..rows {
        for (v, &b) in data[r * cols..(r + 1) * cols].iter_mut().zip(bias.data()) {
            *v = *v + b;
        }
    }
    let out = Tensor::raw(vec![rows, cols], data, tape.tracks(&[x, bias]));
    if out.requires_grad() {
        let (x, bias, out_h) = (x.clone(), bias.clone(), out.clone());
        tape.record(move || {
            let Some(d_out) = out_h.grad() else { return };
            if x.requires_grad() {
                x.accumulate_grad(&d_out);
            }
            if bias.requires_grad() {
                let mut db = vec![E::zero(); cols];
                for r in 0..rows {
                    for (acc, &d) in db.iter_mut().zip(&d_out[r * cols..(r + 1) * cols]) {
                        *acc = *acc + d;
                    }
                }
                bias.accumulate_grad(&db);
            }
        });
    }
    Ok(out)
}

/// Sum of all elements, as a scalar tensor.
pub fn sum<E: Scalar>(tape: &Tape<E>, x: &Tensor<E>) -> Result<Tensor<E>, TensorError> {
    let s: E = x.data().iter().copied().sum();
    let out = Tensor::raw(vec![], vec![s], tape.tracks(&[x]));
    if out.requires_grad() {
        let (x, out_h) = (x.clone(), out.clone());
        tape.record(move || {
            let Some(d_out) = out_h.grad() else { return };
            x.accumulate_grad(&vec![d_out[0]; x.numel()]);
        });
    }
    Ok(out)
}

/// Mean of all elements, as a scalar tensor.
pub fn mean<E: Scalar>(tape: &Tape<E>, x: &Tensor<E>) -> Result<Tensor<E>, TensorError> {
    let n = x.numel().max(1);
    let s = sum(tape, x)?;
    scale(tape, &s, 1.0 / n as f64)
}

/// Row-wise softmax of a rank-2 tensor, stabilized by max subtraction.
pub fn softmax_rows<E: Scalar>(tape: &Tape<E>, x: &Tensor<E>) -> Result<Tensor<E>, TensorError> {
    let (rows, cols) = dims2(x, "softmax_rows")?;
    if cols == 0 {
        return Err(TensorError::InvalidShape {
            op: "softmax_rows",
            shape: x.shape().to_vec(),
            detail: "rows must be non-empty".into(),
        });
    }
    let mut data = vec![E::zero(); rows * cols];
    for r in 0..rows {
        let row = &x.data()[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(E::neg_infinity(), E::max);
        let out_row = &mut data[r * cols..(r + 1) * cols];
        let mut denom = E::zero();
        for (o, &v) in out_row.iter_mut().zip(row) {
            let e = (v - max).exp();
            *o = e;
            denom = denom + e;
        }
        for o in out_row.iter_mut() {
            *o = *o / denom;
        }
    }
    let out = Tensor::raw(vec![rows, cols], data, tape.tracks(&[x]));
    if out.requires_grad() {
        let (x, out_h) = (x.clone(), out.clone());
        tape.record(move || {
            let Some(d_out) = out_h.grad() else { return };
            let y = out_h.data();
            let mut dx = vec![E::zero(); rows * cols];
            for r in 0..rows {
                let base = r * cols;
                let mut dot = E::zero();
                for c in 0..cols {
                    dot = dot + d_out[base + c] * y[base + c];
                }
                for c in 0..cols {
                    dx[base + c] = y[base + c] * (d_out[base + c] - dot);
                }
            }
            x.accumulate_grad(&dx);
        });
    }
    Ok(out)
}

/// Per-row layer normalization with learned gain and shift.
pub fn layer_norm<E: Scalar>(
    tape: &Tape<E>,
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    eps: f64,
) -> Result<Tensor<E>, TensorError> {
    let (rows, cols) = dims2(x, "layer_norm")?;
    if gamma.shape() != [cols] || beta.shape() != [cols] {
        return Err(TensorError::ShapeMismatch {
            op: "layer_norm",
            lhs: x.shape().to_vec(),
            rhs: gamma.shape().to_vec(),
        });
    }
    let epse = E::of_f64(eps);
    let ncols = E::of_f64(cols as f64);
    let mut data = vec![E::zero(); rows * cols];
    let mut inv_std = vec![E::zero(); rows];
    let mut means = vec![E::zero(); rows];
    for r in 0..rows {
        let row = &x.data()[r * cols..(r + 1) * cols];
        let mean = row.iter().copied().sum::<E>() / ncols;
        let var = row
            .iter()
            .map(|&v| (v - mean) * (v - mean))
            .sum::<E>()
            / ncols;
        let istd = (var + epse).sqrt().recip();
        means[r] = mean;
        inv_std[r] = istd;
        for c in 0..cols {
            let xhat = (row[c] - mean) * istd;
            data[r * cols + c] = xhat * gamma.data()[c] + beta.data()[c];
        }
    }
    let out = Tensor::raw(vec![rows, cols], data, tape.tracks(&[x, gamma, beta]));
    if out.requires_grad() {
        let (x, gamma, beta, out_h) = (x.clone(), gamma.clone(), beta.clone(), out.clone());
        tape.record(move || {
            let Some(d_out) = out_h.grad() else { return };
            let mut dx = vec![E::zero(); rows * cols];
            let mut dgamma = vec![E::zero(); cols];
            let mut dbeta = vec![E::zero(); cols];
            for r in 0..rows {
                let base = r * cols;
                let row = &x.data()[base..base + cols];
                let istd = inv_std[r];
                let mean = means[r];
                // dxhat = d_out ⊙ gamma; dx = (dxhat − mean(dxhat) − xhat·mean(dxhat ⊙ xhat)) · istd
                let mut mean_dxhat = E::zero();
                let mut mean_dxhat_xhat = E::zero();
                for c in 0..cols {
                    let xhat = (row[c] - mean) * istd;
                    let dxhat = d_out[base + c] * gamma.data()[c];
                    mean_dxhat = mean_dxhat + dxhat;
                    mean_dxhat_xhat = mean_dxhat_xhat + dxhat * xhat;
                    dgamma[c] = dgamma[c] + d_out[base + c] * xhat;
                    dbeta[c] = dbeta[c] + d_out[base + c];
                }
                mean_dxhat = mean_dxhat / ncols;
                mean_dxhat_xhat = mean_dxhat_xhat / ncols;
                for c in 0..cols {
                    let xhat = (row[c] - mean) * istd;
                    let dxhat = d_out[base + c] * gamma.data()[c];
                    dx[base + c] = (dxhat - mean_dxhat - xhat * mean_dxhat_xhat) * istd;
                }
            }
            if x.requires_grad() {
                x.accumulate_grad(&dx);
            }
            if gamma.requires_grad() {
                gamma.accumulate_grad(&dgamma);
            }
            if beta.requires_grad() {
                beta.accumulate_grad(&dbeta);
            }
        });
    }
    Ok(out)
}

/// Smooth GELU nonlinearity (tanh form).
pub fn gelu<E: Scalar>(tape: &Tape<E>, x: &Tensor<E>) -> Result<Tensor<E>, TensorError> {
    let c = E::of_f64(0.7978845608028654); // sqrt(2/π)
    let a = E::of_f64(0.044715);
    let half = E::of_f64(0.5);
    let one = E::one();
    let three = E::of_f64(3.0);
    let data = x
        .data()
        .iter()
        .map(|&v| {
            let u = c * (v + a * v * v * v);
            half * v * (one + u.tanh())
        })
        .collect();
    let out = Tensor::raw(x.shape().to_vec(), data, tape.tracks(&[x]));
    if out.requires_grad() {
        let (x, out_h) = (x.clone(), out.clone());
        tape.record(move || {
            let Some(d_out) = out_h.grad() else { return };
            let dx: Vec<E> = x
                .data()
                .iter()
                .zip(&d_out)
                .map(|(&v, &d)| {
                    let u = c * (v + a * v * v * v);
                    let t = u.tanh();
                    let du = c * (one + three * a * v * v);
                    d * (half * (one + t) + half * v * (one - t * t) * du)
                })
                .collect();
            x.accumulate_grad(&dx);
        });
    }
    Ok(out)
}

/// Inverted dropout with keep-probability `1 − p`; training mode only.
///
/// Callers in eval mode must skip the call entirely: the op always applies a
/// fresh mask from `rng`.
pub fn dropout<E: Scalar, R: Rng + ?Sized>(
    tape: &Tape<E>,
    x: &Tensor<E>,
    p: f64,
    rng: &mut R,
) -> Result<Tensor<E>, TensorError> {
    if !(0.0..1.0).contains(&p) {
        return Err(TensorError::InvalidShape {
            op: "dropout",
            shape: x.shape().to_vec(),
            detail: format!("dropout probability {p} outside [0, 1)"),
        });
    }
    if p == 0.0 {
        return Ok(x.clone());
    }
    let keep = E::of_f64(1.0 / (1.0 - p));
    let mask: Vec<E> = (0..x.numel())
        .map(|_| {
            if rng.random::<f64>() < p {
                E::zero()
            } else {
                keep
            }
        })
        .collect();
    let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    let out = Tensor::raw(x.shape().to_vec(), data, tape.tracks(&[x]));
    if out.requires_grad() {
        let (x, out_h) = (x.clone(), out.clone());
        tape.record(move || {
            let Some(d_out) = out_h.grad() else { return };
            let dx: Vec<E> = d_out.iter().zip(&mask).map(|(&d, &m)| d * m).collect();
            x.accumulate_grad(&dx);
        });
    }
    Ok(out)
}

/// Look up rows of `table` by index; index −1 yields a fixed all-zero row that
/// receives no gradient.
pub fn gather_rows<E: Scalar>(
    tape: &Tape<E>,
    table: &Tensor<E>,
    indices: &[i64],
) -> Result<Tensor<E>, TensorError> {
    let (rows, cols) = dims2(table, "gather_rows")?;
    for &idx in indices {
        if idx < -1 || idx >= rows as i64 {
            return Err(TensorError::IndexOutOfRange {
                op: "gather_rows",
                index: idx,
                limit: rows,
            });
        }
    }
    let mut data = vec![E::zero(); indices.len() * cols];
    for (i, &idx) in indices.iter().enumerate() {
        if idx >= 0 {
            let src = &table.data()[idx as usize * cols..(idx as usize + 1) * cols];
            data[i * cols..(i + 1) * cols].copy_from_slice(src);
        }
    }
    let out = Tensor::raw(vec![indices.len(), cols], data, tape.tracks(&[table]));
    if out.requires_grad() {
        let (table, out_h) = (table.clone(), out.clone());
        let indices = indices.to_vec();
        tape.record(move || {
            let Some(d_out) = out_h.grad() else { return };
            let mut dt = vec![E::zero(); rows * cols];
            for (i, &idx) in indices.iter().enumerate() {
                if idx >= 0 {
                    let dst = &mut dt[idx as usize * cols..(idx as usize + 1) * cols];
                    for (acc, &d) in dst.iter_mut().zip(&d_out[i * cols..(i + 1) * cols]) {
                        *acc = *acc + d;
                    }
                }
            }
            table.accumulate_grad(&dt);
        });
    }
    Ok(out)
}

/// Columns `[start, start+len)` of a rank-2 tensor.
pub fn slice_cols<E: Scalar>(
    tape: &Tape<E>,
    x: &Tensor<E>,
    start: usize,
    len: usize,
) -> Result<Tensor<E>, TensorError> {
    let (rows, cols) = dims2(x, "slice_cols")?;
    if start + len > cols || len == 0 {
        return Err(TensorError::InvalidShape {
            op: "slice_cols",
            shape: x.shape().to_vec(),
            detail: format!("slice [{start}, {}) of {cols} columns", start + len),
        });
    }
    let mut data = vec![E::zero(); rows * len];
    for r in 0..rows {
        data[r * len..(r + 1) * len]
            .copy_from_slice(&x.data()[r * cols + start..r * cols + start + len]);
    }
    let out = Tensor::raw(vec![rows, len], data, tape.tracks(&[x]));
    if out.requires_grad() {
        let (x, out_h) = (x.clone(), out.clone());
        tape.record(move || {
            let Some(d_out) = out_h.grad() else { return };
            let mut dx = vec![E::zero(); rows * cols];
            for r in 0..rows {
                dx[r * cols + start..r * cols + start + len]
                    .copy_from_slice(&d_out[r * len..(r + 1) * len]);
            }
            x.accumulate_grad(&dx);
        });
    }
    Ok(out)
}

/// Concatenate rank-2 tensors with equal row counts along the column axis.
pub fn concat_cols<E: Scalar>(
    tape: &Tape<E>,
    parts: &[Tensor<E>],
) -> Result<Tensor<E>, TensorError> {
    if parts.is_empty() {
        return Err(TensorError::InvalidShape {
            op: "concat_cols",
            shape: vec![],
            detail: "no tensors to concatenate".into(),
        });
    }
    let (rows, _) = dims2(&parts[0], "concat_cols")?;
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        let (r, c) = dims2(p, "concat_cols")?;
        if r != rows {
            return Err(TensorError::ShapeMismatch {
                op: "concat_cols",
                lhs: parts[0].shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
        widths.push(c);
    }
    let total: usize = widths.iter().sum();
    let mut data = vec![E::zero(); rows * total];
    let mut offset = 0;
    for (p, &w) in parts.iter().zip(&widths) {
        for r in 0..rows {
            data[r * total + offset..r * total + offset + w]
                .copy_from_slice(&p.data()[r * w..(r + 1) * w]);
        }
        offset += w;
    }
    let input_refs: Vec<&Tensor<E>> = parts.iter().collect();
    let track = tape.tracks(&input_refs);
    let out = Tensor::raw(vec![rows, total], data, track);
    if track {
        let parts = parts.to_vec();
        let out_h = out.clone();
        tape.record(move || {
            let Some(d_out) = out_h.grad() else { return };
            let mut offset = 0;
            for (p, &w) in parts.iter().zip(&widths) {
                if p.requires_grad() {
                    let mut dp = vec![E::zero(); rows * w];
                    for r in 0..rows {
                        dp[r * w..(r + 1) * w]
                            .copy_from_slice(&d_out[r * total + offset..r * total + offset + w]);
                    }
                    p.accumulate_grad(&dp);
                }
                offset += w;
            }
        });
    }
    Ok(out)
}

/// Additive key mask for attention scores: a large negative constant is added
/// to every column whose key frame is padding, so those keys get zero weight
/// after the softmax.
pub fn add_key_mask<E: Scalar>(
    tape: &Tape<E>,
    scores: &Tensor<E>,
    key_is_pad: &[bool],
) -> Result<Tensor<E>, TensorError> {
    let (rows, cols) = dims2(scores, "add_key_mask")?;
    if key_is_pad.len() != cols {
        return Err(TensorError::InvalidShape {
            op: "add_key_mask",
            shape: scores.shape().to_vec(),
            detail: format!("mask has {} entries for {cols} keys", key_is_pad.len()),
        });
    }
    if key_is_pad.iter().all(|&p| !p) {
        return Ok(scores.clone());
    }
    let neg = E::of_f64(-1.0e9);
    let mut data = scores.data().to_vec();
    for r in 0..rows {
        for (c, &pad) in key_is_pad.iter().enumerate() {
            if pad {
                data[r * cols + c] = data[r * cols + c] + neg;
            }
        }
    }
    let out = Tensor::raw(vec![rows, cols], data, tape.tracks(&[scores]));
    if out.requires_grad() {
        let (scores, out_h) = (scores.clone(), out.clone());
        tape.record(move || {
            let Some(d_out) = out_h.grad() else { return };
            scores.accumulate_grad(&d_out);
        });
    }
    Ok(out)
}

/// Frame label for the masked cross-entropy loss: a class index or ignore.
pub const IGNORE_LABEL: i64 = -1;

/// Mean negative log-likelihood over the non-ignored rows of `N×C` logits.
///
/// Rows labeled [`IGNORE_LABEL`] contribute neither loss nor gradient. A batch
/// in which every row is ignored is an error, never a silent zero.
pub fn cross_entropy_masked<E: Scalar>(
    tape: &Tape<E>,
    logits: &Tensor<E>,
    labels: &[i64],
) -> Result<Tensor<E>, TensorError> {
    let (rows, cols) = dims2(logits, "cross_entropy_masked")?;
    if labels.len() != rows {
        return Err(TensorError::InvalidShape {
            op: "cross_entropy_masked",
            shape: logits.shape().to_vec(),
            detail: format!("{} labels for {rows} rows", labels.len()),
        });
    }
    for &l in labels {
        if l != IGNORE_LABEL && !(0..cols as i64).contains(&l) {
            return Err(TensorError::IndexOutOfRange {
                op: "cross_entropy_masked",
                index: l,
                limit: cols,
            });
        }
    }
    let n_valid = labels.iter().filter(|&&l| l != IGNORE_LABEL).count();
    if n_valid == 0 {
        return Err(TensorError::EmptyLoss);
    }
    let mut total = E::zero();
    for (r, &label) in labels.iter().enumerate() {
        if label == IGNORE_LABEL {
            continue;
        }
        let row = &logits.data()[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(E::neg_infinity(), E::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<E>().ln();
        total = total + (lse - row[label as usize]);
    }
    let inv_n = E::of_f64(1.0 / n_valid as f64);
    let out = Tensor::raw(vec![], vec![total * inv_n], tape.tracks(&[logits]));
    if out.requires_grad() {
        let (logits, out_h) = (logits.clone(), out.clone());
        let labels = labels.to_vec();
        tape.record(move || {
            let Some(d_out) = out_h.grad() else { return };
            let d = d_out[0] * inv_n;
            let mut dl = vec![E::zero(); rows * cols];
            for (r, &label) in labels.iter().enumerate() {
                if label == IGNORE_LABEL {
                    continue;
                }
                let row = &logits.data()[r * cols..(r + 1) * cols];
                let max = row.iter().copied().fold(E::neg_infinity(), E::max);
                let denom: E = row.iter().map(|&v| (v - max).exp()).sum();
                for c in 0..cols {
                    let p = (row[c] - max).exp() / denom;
                    let target = if c as i64 == label { E::one() } else { E::zero() };
                    dl[r * cols + c] = (p - target) * d;
                }
            }
            logits.accumulate_grad(&dl);
        });
    }
    Ok(out)
}

/// 1-D convolution over time with stride 1 and zero same-padding.
///
/// `x` is `L×F`, the kernel is `C×K×F` (odd `K`), the bias has length `C`;
/// the output is `L×C`.
pub fn conv1d<E: Scalar>(
    tape: &Tape<E>,
    x: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
) -> Result<Tensor<E>, TensorError> {
    let (len, in_dim) = dims2(x, "conv1d")?;
    let (out_ch, k, f) = match weight.shape() {
        [c, k, f] => (*c, *k, *f),
        other => {
            return Err(TensorError::InvalidShape {
                op: "conv1d",
                shape: other.to_vec(),
                detail: "kernel must be rank-3 (out_channels × taps × in_dim)".into(),
            })
        }
    };
    if f != in_dim || bias.shape() != [out_ch] {
        return Err(TensorError::ShapeMismatch {
            op: "conv1d",
            lhs: x.shape().to_vec(),
            rhs: weight.shape().to_vec(),
        });
    }
    if k % 2 == 0 {
        return Err(TensorError::InvalidShape {
            op: "conv1d",
            shape: weight.shape().to_vec(),
            detail: "kernel width must be odd for same-padding".into(),
        });
    }
    let half = (k / 2) as i64;
    let mut data = vec![E::zero(); len * out_ch];
    for t in 0..len as i64 {
        for c in 0..out_ch {
            let mut acc = bias.data()[c];
            for tap in 0..k as i64 {
                let src = t + tap - half;
                if src < 0 || src >= len as i64 {
                    continue;
                }
                let xrow = &x.data()[src as usize * in_dim..(src as usize + 1) * in_dim];
                let wrow = &weight.data()[(c * k + tap as usize) * in_dim..(c * k + tap as usize + 1) * in_dim];
                for (xv, wv) in xrow.iter().zip(wrow) {
                    acc = acc + *xv * *wv;
                }
            }
            data[t as usize * out_ch + c] = acc;
        }
    }
    let out = Tensor::raw(vec![len, out_ch], data, tape.tracks(&[x, weight, bias]));
    if out.requires_grad() {
        let (x, weight, bias, out_h) = (x.clone(), weight.clone(), bias.clone(), out.clone());
        tape.record(move || {
            let Some(d_out) = out_h.grad() else { return };
            let mut dx = vec![E::zero(); len * in_dim];
            let mut dw = vec![E::zero(); out_ch * k * in_dim];
            let mut db = vec![E::zero(); out_ch];
            for t in 0..len as i64 {
                for c in 0..out_ch {
                    let d = d_out[t as usize * out_ch + c];
                    db[c] = db[c] + d;
                    for tap in 0..k as i64 {
                        let src = t + tap - half;
                        if src < 0 || src >= len as i64 {
                            continue;
                        }
                        let xbase = src as usize * in_dim;
                        let wbase = (c * k + tap as usize) * in_dim;
                        for i in 0..in_dim {
                            dx[xbase + i] = dx[xbase + i] + d * weight.data()[wbase + i];
                            dw[wbase + i] = dw[wbase + i] + d * x.data()[xbase + i];
                        }
                    }
                }
            }
            if x.requires_grad() {
                x.accumulate_grad(&dx);
            }
            if weight.requires_grad() {
                weight.accumulate_grad(&dw);
            }
            if bias.requires_grad() {
                bias.accumulate_grad(&db);
            }
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn t2<E: Scalar>(rows: usize, cols: usize, v: Vec<E>) -> Tensor<E> {
        Tensor::from_vec(vec![rows, cols], v).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let tape = Tape::disabled();
        let eye = t2(2, 2, vec![1.0f64, 0.0, 0.0, 1.0]);
        let m = t2(2, 2, vec![3.0, 4.0, 5.0, 6.0]);
        let out = matmul(&tape, &eye, &m).unwrap();
        assert_eq!(out.data(), m.data());
    }

    #[test]
    fn matmul_hand_arithmetic() {
        // [[1,2]] × [[3],[4]] = [[11]]
        let tape = Tape::disabled();
        let a = t2(1, 2, vec![1.0f64, 2.0]);
        let b = t2(2, 1, vec![3.0, 4.0]);
        let out = matmul(&tape, &a, &b).unwrap();
        assert_eq!(out.data(), &[11.0]);
    }

    #[test]
    fn matmul_zero_annihilates() {
        let tape = Tape::disabled();
        let z = Tensor::zeros(vec![2, 3]);
        let m = t2(3, 2, vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let out = matmul(&tape, &z, &m).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let tape = Tape::<f64>::disabled();
        let a = t2(1, 2, vec![1.0, 2.0]);
        let b = t2(3, 1, vec![1.0, 2.0, 3.0]);
        let err = matmul(&tape, &a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 2]") && msg.contains("[3, 1]"), "{msg}");
    }

    #[test]
    fn softmax_symmetry_and_uniformity() {
        let tape = Tape::disabled();
        let x = t2(2, 2, vec![0.0f64, 0.0, 7.5, 7.5]);
        let y = softmax_rows(&tape, &x).unwrap();
        for &v in y.data() {
            assert_abs_diff_eq!(v, 0.5, epsilon = 1e-12);
        }
        let k = 7;
        let xk = t2(1, k, vec![3.25f64; k]);
        let yk = softmax_rows(&tape, &xk).unwrap();
        for &v in yk.data() {
            assert_abs_diff_eq!(v, 1.0 / k as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn softmax_ln2_row() {
        // row [0, ln 2] → [1/3, 2/3]
        let tape = Tape::disabled();
        let x = t2(1, 2, vec![0.0f64, 2.0f64.ln()]);
        let y = softmax_rows(&tape, &x).unwrap();
        assert_abs_diff_eq!(y.data()[0], 1.0 / 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(y.data()[1], 2.0 / 3.0, epsilon = 1e-9);
    }

    #[test]
    fn softmax_stable_at_large_magnitude() {
        let tape = Tape::disabled();
        let x = t2(1, 3, vec![1.0e4f64, -1.0e4, 0.0]);
        let y = softmax_rows(&tape, &x).unwrap();
        assert!(!y.has_non_finite());
        let sum: f64 = y.data().iter().sum();
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        // uniform logits, C=5, one labeled frame → ln 5
        let tape = Tape::disabled();
        let logits = t2(1, 5, vec![0.3f64; 5]);
        let loss = cross_entropy_masked(&tape, &logits, &[2]).unwrap();
        assert_abs_diff_eq!(loss.item(), 5.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn cross_entropy_confident_correct() {
        let tape = Tape::disabled();
        let logits = t2(1, 2, vec![10.0f64, -10.0]);
        let loss = cross_entropy_masked(&tape, &logits, &[0]).unwrap();
        assert!(loss.item() < 1e-4);
    }

    #[test]
    fn cross_entropy_masking() {
        // logits [[0,0],[0,ln 3]], labels [0, ignore] → ln 2
        let tape = Tape::disabled();
        let logits = t2(2, 2, vec![0.0f64, 0.0, 0.0, 3.0f64.ln()]);
        let loss = cross_entropy_masked(&tape, &logits, &[0, IGNORE_LABEL]).unwrap();
        assert_abs_diff_eq!(loss.item(), 2.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn cross_entropy_all_ignored_is_an_error() {
        let tape = Tape::<f64>::disabled();
        let logits = t2(2, 3, vec![0.0; 6]);
        let err = cross_entropy_masked(&tape, &logits, &[IGNORE_LABEL, IGNORE_LABEL]).unwrap_err();
        assert!(matches!(err, TensorError::EmptyLoss));
    }

    #[test]
    fn gather_rows_minus_one_is_zero_row() {
        let tape = Tape::disabled();
        let table = t2(2, 3, vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let out = gather_rows(&tape, &table, &[1, -1, 0]).unwrap();
        assert_eq!(out.data(), &[4.0, 5.0, 6.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn gather_rows_rejects_out_of_range() {
        let tape = Tape::<f64>::disabled();
        let table = t2(2, 2, vec![0.0; 4]);
        assert!(gather_rows(&tape, &table, &[2]).is_err());
        assert!(gather_rows(&tape, &table, &[-2]).is_err());
    }

    #[test]
    fn key_mask_zeroes_pad_weights() {
        let tape = Tape::disabled();
        let scores = t2(2, 3, vec![0.5f64; 6]);
        let masked = add_key_mask(&tape, &scores, &[false, true, false]).unwrap();
        let w = softmax_rows(&tape, &masked).unwrap();
        for r in 0..2 {
            assert_eq!(w.data()[r * 3 + 1], 0.0);
            assert_abs_diff_eq!(w.data()[r * 3], 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn slice_concat_roundtrip() {
        let tape = Tape::disabled();
        let x = t2(2, 4, (0..8).map(|v| v as f64).collect());
        let a = slice_cols(&tape, &x, 0, 2).unwrap();
        let b = slice_cols(&tape, &x, 2, 2).unwrap();
        let back = concat_cols(&tape, &[a, b]).unwrap();
        assert_eq!(back.data(), x.data());
    }

    #[test]
    fn conv1d_shape_and_identity_kernel() {
        let tape = Tape::disabled();
        let x = t2(5, 2, (0..10).map(|v| v as f64).collect());
        // single output channel, kernel 1, picks feature 0
        let w = Tensor::from_vec(vec![1, 1, 2], vec![1.0, 0.0]).unwrap();
        let b = Tensor::from_vec(vec![1], vec![0.0]).unwrap();
        let y = conv1d(&tape, &x, &w, &b).unwrap();
        assert_eq!(y.shape(), &[5, 1]);
        assert_eq!(y.data(), &[0.0, 2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn dropout_scales_kept_values() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let tape = Tape::disabled();
        let x = t2(4, 4, vec![1.0f64; 16]);
        let y = dropout(&tape, &x, 0.5, &mut rng).unwrap();
        for &v in y.data() {
            assert!(v == 0.0 || (v - 2.0).abs() < 1e-12);
        }
    }
}
