//! Matrix and activation primitives with hand-written backward passes.
//!
//! Every primitive the model uses lives here; each one is covered by the
//! finite-difference checker in `gradcheck`.

use super::tensor::{Scalar, Tensor};
use crate::error::{DetourError, Result};

/// `a [m×k] · b [k×n] -> [m×n]`, accumulated into `out`.
///
/// Row-pair blocking over `a` reuses each `b` row twice per pass, which
/// roughly halves memory traffic and doubles FMA ILP.
pub fn matmul_into<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>, out: &mut Tensor<E>) {
    let (m, k) = (a.rows(), a.cols());
    let n = b.cols();
    debug_assert_eq!(b.rows(), k);
    debug_assert_eq!(out.shape(), &[m, n]);
    let bd = b.data();
    let mut i = 0;
    while i + 1 < m {
        let (a0, a1) = (a.row(i), a.row(i + 1));
        let (lo, hi) = out.data_mut().split_at_mut((i + 1) * n);
        let o0 = &mut lo[i * n..];
        let o1 = &mut hi[..n];
        for p in 0..k {
            let (v0, v1) = (a0[p], a1[p]);
            let brow = &bd[p * n..(p + 1) * n];
            for ((x0, x1), &bv) in o0.iter_mut().zip(o1.iter_mut()).zip(brow) {
                *x0 += v0 * bv;
                *x1 += v1 * bv;
            }
        }
        i += 2;
    }
    if i < m {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for (p, &av) in arow.iter().enumerate() {
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

pub fn matmul<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Tensor<E> {
    let mut out = Tensor::zeros(&[a.rows(), b.cols()]);
    matmul_into(a, b, &mut out);
    out
}

/// Dot product with eight independent accumulators so the reduction
/// vectorizes despite strict FP ordering within each lane.
#[inline(always)]
pub fn dot_lanes<E: Scalar>(a: &[E], b: &[E]) -> E {
    let mut lanes = [E::ZERO; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let ac = &a[c * 8..c * 8 + 8];
        let bc = &b[c * 8..c * 8 + 8];
        for l in 0..8 {
            lanes[l] += ac[l] * bc[l];
        }
    }
    let mut tail = E::ZERO;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    let pair0 = (lanes[0] + lanes[4]) + (lanes[2] + lanes[6]);
    let pair1 = (lanes[1] + lanes[5]) + (lanes[3] + lanes[7]);
    pair0 + pair1 + tail
}

/// `a [m×k] · bᵀ` with `b [n×k] -> [m×n]`, accumulated into `out`.
pub fn matmul_bt_into<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>, out: &mut Tensor<E>) {
    let m = a.rows();
    let k = a.cols();
    let n = b.rows();
    debug_assert_eq!(b.cols(), k);
    debug_assert_eq!(out.shape(), &[m, n]);
    for i in 0..m {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for (j, o) in orow.iter_mut().enumerate() {
            *o += dot_lanes(arow, b.row(j));
        }
    }
}

pub fn matmul_bt<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Tensor<E> {
    let mut out = Tensor::zeros(&[a.rows(), b.rows()]);
    matmul_bt_into(a, b, &mut out);
    out
}

/// `aᵀ · b` with `a [m×k]`, `b [m×n] -> [k×n]`, accumulated into `out`.
pub fn matmul_at_b_into<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>, out: &mut Tensor<E>) {
    let m = a.rows();
    let k = a.cols();
    let n = b.cols();
    debug_assert_eq!(b.rows(), m);
    debug_assert_eq!(out.shape(), &[k, n]);
    for i in 0..m {
        let arow = a.row(i);
        let brow = b.row(i);
        for (p, &av) in arow.iter().enumerate() {
            let orow = out.row_mut(p);
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

pub fn matmul_at_b<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Tensor<E> {
    let mut out = Tensor::zeros(&[a.cols(), b.cols()]);
    matmul_at_b_into(a, b, &mut out);
    out
}

/// Saved forward state for the layer-norm backward.
#[derive(Debug, Clone)]
pub struct LayerNormCache<E: Scalar> {
    /// Normalized input (x - mean) / std, before the affine transform.
    pub xhat: Tensor<E>,
    /// 1 / sqrt(var + eps) per row.
    pub inv_std: Vec<E>,
}

/// Row-wise layer norm: each row of `x [n×d]` is normalized to zero mean and
/// unit variance (eps-regularized), then scaled by `gamma` and shifted by `beta`.
pub fn layer_norm<E: Scalar>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    eps: E,
) -> Result<(Tensor<E>, LayerNormCache<E>)> {
    let d = x.cols();
    if d < 1 {
        return Err(DetourError::InvalidInput("layer_norm: d must be >= 1".into()));
    }
    if eps <= E::ZERO {
        return Err(DetourError::InvalidInput("layer_norm: eps must be > 0".into()));
    }
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(DetourError::ShapeMismatch(format!(
            "layer_norm: x has d={}, gamma {:?}, beta {:?}",
            d,
            gamma.shape(),
            beta.shape()
        )));
    }
    x.check_finite("layer_norm input")?;
    let n = x.rows();
    let mut y = Tensor::zeros(&[n, d]);
    let mut xhat = Tensor::zeros(&[n, d]);
    let mut inv_std = Vec::with_capacity(n);
    let inv_d = E::ONE / E::from_f64(d as f64);
    for r in 0..n {
        let row = x.row(r);
        let mut mean = E::ZERO;
        for &v in row {
            mean += v;
        }
        mean *= inv_d;
        let mut var = E::ZERO;
        for &v in row {
            let c = v - mean;
            var += c * c;
        }
        var *= inv_d;
        let istd = E::ONE / (var + eps).sqrt();
        inv_std.push(istd);
        let xh = xhat.row_mut(r);
        for (i, &v) in row.iter().enumerate() {
            xh[i] = (v - mean) * istd;
        }
        let yr = y.row_mut(r);
        for i in 0..d {
            yr[i] = xh[i] * gamma.data()[i] + beta.data()[i];
        }
    }
    Ok((y, LayerNormCache { xhat, inv_std }))
}

/// Backward for `layer_norm`; returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_backward<E: Scalar>(
    dy: &Tensor<E>,
    cache: &LayerNormCache<E>,
    gamma: &Tensor<E>,
) -> (Tensor<E>, Tensor<E>, Tensor<E>) {
    let n = dy.rows();
    let d = dy.cols();
    let mut dx = Tensor::zeros(&[n, d]);
    let mut dgamma = Tensor::zeros(&[d]);
    let mut dbeta = Tensor::zeros(&[d]);
    let inv_d = E::ONE / E::from_f64(d as f64);
    for r in 0..n {
        let dyr = dy.row(r);
        let xh = cache.xhat.row(r);
        let istd = cache.inv_std[r];
        // dgamma/dbeta accumulate over rows
        {
            let dg = dgamma.data_mut();
            let db = dbeta.data_mut();
            for i in 0..d {
                dg[i] += dyr[i] * xh[i];
                db[i] += dyr[i];
            }
        }
        // dx = istd * (g - mean(g) - xhat * mean(g * xhat)), g = dy * gamma
        let mut mean_g = E::ZERO;
        let mut mean_gx = E::ZERO;
        for i in 0..d {
            let g = dyr[i] * gamma.data()[i];
            mean_g += g;
            mean_gx += g * xh[i];
        }
        mean_g *= inv_d;
        mean_gx *= inv_d;
        let dxr = dx.row_mut(r);
        for i in 0..d {
            let g = dyr[i] * gamma.data()[i];
            dxr[i] = istd * (g - mean_g - xh[i] * mean_gx);
        }
    }
    (dx, dgamma, dbeta)
}

/// Numerically-stable softmax over a mutable slice, in place.
#[inline]
pub fn softmax_in_place<E: Scalar>(row: &mut [E]) {
    let mut max = row[0];
    for &v in row.iter() {
        max = max.max_val(v);
    }
    let mut sum = E::ZERO;
    for v in row.iter_mut() {
        *v = (*v - max).exp_fast();
        sum += *v;
    }
    let inv = E::ONE / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// Mean negative log-likelihood over supervised positions.
///
/// `logits [n×V]`, `targets[i] < V`, `mask[i]` selects supervised rows. The
/// reduction accumulates in f64 regardless of `E`.
pub fn cross_entropy<E: Scalar>(
    logits: &Tensor<E>,
    targets: &[u32],
    mask: &[bool],
) -> Result<f64> {
    let (sum, count) = cross_entropy_sums(logits, targets, mask)?;
    Ok(sum / count as f64)
}

/// Unreduced variant: `(NLL sum, supervised count)`. Batch-level means are
/// assembled from these so that single-sequence batches reduce bit-exactly
/// like `cross_entropy`.
pub fn cross_entropy_sums<E: Scalar>(
    logits: &Tensor<E>,
    targets: &[u32],
    mask: &[bool],
) -> Result<(f64, usize)> {
    let n = logits.rows();
    let v = logits.cols();
    if targets.len() != n || mask.len() != n {
        return Err(DetourError::ShapeMismatch(format!(
            "cross_entropy: {} rows, {} targets, {} mask entries",
            n,
            targets.len(),
            mask.len()
        )));
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(DetourError::EmptySupervision);
    }
    let mut total = 0.0f64;
    for i in 0..n {
        if !mask[i] {
            continue;
        }
        let t = targets[i] as usize;
        if t >= v {
            return Err(DetourError::InvalidInput(format!(
                "cross_entropy: target {} out of vocab {}",
                t, v
            )));
        }
        let row = logits.row(i);
        let mut max = row[0];
        for &x in row {
            max = max.max_val(x);
        }
        let mut sum = 0.0f64;
        for &x in row {
            sum += (x - max).to_f64().exp();
        }
        total += sum.ln() + max.to_f64() - row[t].to_f64();
    }
    Ok((total, count))
}

/// Cross-entropy loss plus logit gradients.
///
/// Gradient rows at unsupervised positions are exactly zero. When batches
/// span several sequences the mean runs over the batch-wide supervision set;
/// `global_count` overrides the per-call denominator in that case.
pub fn cross_entropy_with_grad<E: Scalar>(
    logits: &Tensor<E>,
    targets: &[u32],
    mask: &[bool],
    global_count: Option<usize>,
) -> Result<(f64, Tensor<E>)> {
    let (sum, count, dlogits) = cross_entropy_with_grad_sums(logits, targets, mask, global_count)?;
    Ok((sum / count as f64, dlogits))
}

/// Unreduced gradient variant: `(NLL sum, local supervised count, dlogits)`.
pub fn cross_entropy_with_grad_sums<E: Scalar>(
    logits: &Tensor<E>,
    targets: &[u32],
    mask: &[bool],
    global_count: Option<usize>,
) -> Result<(f64, usize, Tensor<E>)> {
    let (_, local_count) = cross_entropy_sums(logits, targets, mask)?;
    let denom = global_count.unwrap_or(local_count);
    let n = logits.rows();
    let v = logits.cols();
    let mut dlogits = Tensor::zeros(&[n, v]);
    let inv = 1.0 / denom as f64;
    let inv_e = E::from_f64(inv);
    let mut total = 0.0f64;
    let mut exps = vec![0.0f64; v];
    for i in 0..n {
        if !mask[i] {
            continue;
        }
        let t = targets[i] as usize;
        let row = logits.row(i);
        let mut max = row[0];
        for &x in row {
            max = max.max_val(x);
        }
        let mut sum = 0.0f64;
        for (e, &x) in exps.iter_mut().zip(row) {
            *e = (x - max).to_f64().exp();
            sum += *e;
        }
        total += sum.ln() + max.to_f64() - row[t].to_f64();
        let scale = inv / sum;
        let drow = dlogits.row_mut(i);
        for (d, &e) in drow.iter_mut().zip(&exps) {
            *d = E::from_f64(e * scale);
        }
        drow[t] -= inv_e;
    }
    Ok((total, local_count, dlogits))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// GELU activation (tanh approximation), element-wise.
pub fn gelu<E: Scalar>(x: &Tensor<E>) -> Tensor<E> {
    let c = E::from_f64(GELU_C);
    let a = E::from_f64(GELU_A);
    let half = E::from_f64(0.5);
    x.map(|v| {
        let inner = c * (v + a * v * v * v);
        half * v * (E::ONE + inner.tanh_fast())
    })
}

/// Backward for `gelu`; takes the forward input.
pub fn gelu_backward<E: Scalar>(dy: &Tensor<E>, x: &Tensor<E>) -> Tensor<E> {
    let c = E::from_f64(GELU_C);
    let a = E::from_f64(GELU_A);
    let three_a = E::from_f64(3.0 * GELU_A);
    let half = E::from_f64(0.5);
    let mut dx = x.clone();
    for (d, (&g, &v)) in dx
        .data_mut()
        .iter_mut()
        .zip(dy.data().iter().zip(x.data()))
    {
        let inner = c * (v + a * v * v * v);
        let t = inner.tanh_fast();
        let sech2 = E::ONE - t * t;
        let dinner = c * (E::ONE + three_a * v * v);
        *d = g * (half * (E::ONE + t) + half * v * sech2 * dinner);
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{} vs {} (tol {})", a, b, tol);
    }

    #[test]
    fn matmul_small_known() {
        let a = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::from_vec(&[3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = matmul(&a, &b);
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_transpose_variants_agree() {
        // a·bᵀ and aᵀ·b checked against plain matmul with materialized transposes
        let a = Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 0.5, 4.0, 5.0, -6.0]).unwrap();
        let b = Tensor::from_vec(&[4, 3], (0..12).map(|i| i as f64 * 0.3 - 1.0).collect()).unwrap();
        let mut bt = Tensor::zeros(&[3, 4]);
        for i in 0..4 {
            for j in 0..3 {
                bt.set(j, i, b.at(i, j));
            }
        }
        let direct = matmul(&a, &bt);
        let fused = matmul_bt(&a, &b);
        for (x, y) in direct.data().iter().zip(fused.data()) {
            approx(*x, *y, 1e-12);
        }

        let c = Tensor::from_vec(&[2, 4], (0..8).map(|i| (i as f64).sin()).collect()).unwrap();
        let mut at = Tensor::zeros(&[3, 2]);
        for i in 0..2 {
            for j in 0..3 {
                at.set(j, i, a.at(i, j));
            }
        }
        let direct = matmul(&at, &c);
        let fused = matmul_at_b(&a, &c);
        for (x, y) in direct.data().iter().zip(fused.data()) {
            approx(*x, *y, 1e-12);
        }
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        // zero variance limit: output is pure beta (here 0)
        let x = Tensor::from_vec(&[1, 5], vec![3.25; 5]).unwrap();
        let gamma = Tensor::filled(&[5], 1.0f64);
        let beta = Tensor::zeros(&[5]);
        let (y, _) = layer_norm(&x, &gamma, &beta, 1e-5).unwrap();
        for &v in y.data() {
            approx(v, 0.0, 1e-12);
        }
    }

    #[test]
    fn layer_norm_beta_shifts_output() {
        let x = Tensor::from_vec(&[2, 4], vec![0.1, -0.4, 2.0, 0.7, -1.0, 0.0, 1.0, 3.0]).unwrap();
        let gamma = Tensor::filled(&[4], 1.0f64);
        let beta0 = Tensor::zeros(&[4]);
        let betab = Tensor::filled(&[4], 0.75f64);
        let (y0, _) = layer_norm(&x, &gamma, &beta0, 1e-5).unwrap();
        let (yb, _) = layer_norm(&x, &gamma, &betab, 1e-5).unwrap();
        for (a, b) in y0.data().iter().zip(yb.data()) {
            approx(*a + 0.75, *b, 1e-12);
        }
    }

    #[test]
    fn layer_norm_rejects_bad_inputs() {
        let x = Tensor::from_vec(&[1, 3], vec![1.0, f64::NAN, 0.0]).unwrap();
        let gamma = Tensor::filled(&[3], 1.0f64);
        let beta = Tensor::zeros(&[3]);
        assert!(layer_norm(&x, &gamma, &beta, 1e-5).is_err());
        let x = Tensor::from_vec(&[1, 3], vec![1.0, 2.0, 0.0]).unwrap();
        let gamma2 = Tensor::filled(&[4], 1.0f64);
        assert!(layer_norm(&x, &gamma2, &beta, 1e-5).is_err());
        assert!(layer_norm(&x, &gamma, &beta, 0.0).is_err());
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        // uniform distribution over V=16: loss = ln 16
        let logits = Tensor::<f64>::zeros(&[3, 16]);
        let loss = cross_entropy(&logits, &[0, 5, 15], &[true, true, true]).unwrap();
        approx(loss, (16.0f64).ln(), 1e-12);
    }

    #[test]
    fn cross_entropy_two_class_closed_form() {
        // logits [2,0], target 0: loss = ln(1 + e^{-2})
        let logits = Tensor::from_vec(&[1, 2], vec![2.0, 0.0]).unwrap();
        let loss = cross_entropy(&logits, &[0], &[true]).unwrap();
        approx(loss, (1.0 + (-2.0f64).exp()).ln(), 1e-12);
    }

    #[test]
    fn cross_entropy_vs_double_loop_oracle() {
        // brute-force softmax CE oracle on a random case, 64-bit
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (n, v) = (8usize, 11usize);
        let logits = Tensor::from_vec(
            &[n, v],
            (0..n * v).map(|_| rng.gen_range(-3.0..3.0)).collect(),
        )
        .unwrap();
        let targets: Vec<u32> = (0..n).map(|_| rng.gen_range(0..v as u32)).collect();
        let mask: Vec<bool> = (0..n).map(|i| i != 3).collect();

        // oracle: explicit softmax double loop
        let mut oracle_loss = 0.0;
        let mut count = 0;
        let mut oracle_grad = Tensor::<f64>::zeros(&[n, v]);
        for i in 0..n {
            if !mask[i] {
                continue;
            }
            count += 1;
            let mut denom = 0.0;
            for j in 0..v {
                denom += logits.at(i, j).exp();
            }
            let p_t = logits.at(i, targets[i] as usize).exp() / denom;
            oracle_loss += -p_t.ln();
            for j in 0..v {
                let p = logits.at(i, j).exp() / denom;
                let indicator = if j == targets[i] as usize { 1.0 } else { 0.0 };
                oracle_grad.set(i, j, p - indicator);
            }
        }
        oracle_loss /= count as f64;
        oracle_grad.scale(1.0 / count as f64);

        let (loss, grad) = cross_entropy_with_grad(&logits, &targets, &mask, None).unwrap();
        assert!((loss - oracle_loss).abs() / oracle_loss.abs() < 1e-10);
        for (g, o) in grad.data().iter().zip(oracle_grad.data()) {
            assert!((g - o).abs() <= 1e-10 * o.abs().max(1.0));
        }
        // unsupervised row gradient is exactly zero
        for j in 0..v {
            assert_eq!(grad.at(3, j), 0.0);
        }
    }

    #[test]
    fn cross_entropy_errors() {
        let logits = Tensor::<f64>::zeros(&[2, 4]);
        assert!(matches!(
            cross_entropy(&logits, &[0, 1], &[false, false]),
            Err(DetourError::EmptySupervision)
        ));
        assert!(cross_entropy(&logits, &[0, 9], &[true, true]).is_err());
    }
}
