//! Linear centered kernel alignment in float64.

use crate::error::{DetourError, Result};
use crate::numerics::Tensor;

/// Column-center a representation matrix.
fn center_columns(x: &Tensor<f64>) -> Tensor<f64> {
    let (n, p) = (x.rows(), x.cols());
    let mut means = vec![0.0f64; p];
    for r in 0..n {
        for (m, &v) in means.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= n as f64;
    }
    let mut out = x.clone();
    for r in 0..n {
        for (v, m) in out.row_mut(r).iter_mut().zip(&means) {
            *v -= m;
        }
    }
    out
}

/// Gram matrix `X Xᵀ` of a centered matrix.
fn gram(x: &Tensor<f64>) -> Tensor<f64> {
    let n = x.rows();
    let mut k = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..=i {
            let v: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| a * b).sum();
            k.set(i, j, v);
            k.set(j, i, v);
        }
    }
    k
}

fn trace_product(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    // tr(AB) = sum_ij A_ij B_ji; both symmetric here
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// `CKA(X, Y) = tr(KL) / sqrt(tr(K²) tr(L²))` with column-centered inputs
/// and `K = XXᵀ`, `L = YYᵀ`. Symmetric, invariant to orthogonal transforms
/// and isotropic scaling of either argument.
pub fn linear_cka(x: &Tensor<f64>, y: &Tensor<f64>) -> Result<f64> {
    let n = x.rows();
    if n < 2 {
        return Err(DetourError::InvalidInput("linear_cka: need n >= 2 rows".into()));
    }
    if y.rows() != n {
        return Err(DetourError::ShapeMismatch(format!(
            "linear_cka: {} vs {} rows",
            n,
            y.rows()
        )));
    }
    x.check_finite("linear_cka X")?;
    y.check_finite("linear_cka Y")?;
    let xc = center_columns(x);
    let yc = center_columns(y);
    let k = gram(&xc);
    let l = gram(&yc);
    let kk = trace_product(&k, &k);
    let ll = trace_product(&l, &l);
    if kk <= 0.0 || ll <= 0.0 {
        return Err(DetourError::InvalidInput(
            "linear_cka: zero-variance input (all rows identical)".into(),
        ));
    }
    Ok(trace_product(&k, &l) / (kk * ll).sqrt())
}
