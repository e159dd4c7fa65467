//! Rotary positional embeddings.

use crate::error::{DetourError, Result};
use crate::numerics::{Scalar, Tensor};

/// Precomputed rotation angles for a run of positions.
#[derive(Debug, Clone)]
pub struct RopeTable<E: Scalar> {
    /// `[pos][freq]` cosines, frequencies indexed over pairs within a head.
    cos: Vec<Vec<E>>,
    sin: Vec<Vec<E>>,
    head_dim: usize,
}

impl<E: Scalar> RopeTable<E> {
    /// Rotation angle for pair `i` at position `pos` is `pos * base^(-2i/head_dim)`.
    pub fn new(positions: &[usize], head_dim: usize, base: f64) -> Result<Self> {
        if head_dim % 2 != 0 {
            return Err(DetourError::InvalidInput(format!(
                "rope: head_dim {} must be even",
                head_dim
            )));
        }
        let half = head_dim / 2;
        let mut cos = Vec::with_capacity(positions.len());
        let mut sin = Vec::with_capacity(positions.len());
        for &p in positions {
            let mut crow = Vec::with_capacity(half);
            let mut srow = Vec::with_capacity(half);
            for i in 0..half {
                let freq = base.powf(-2.0 * i as f64 / head_dim as f64);
                let angle = p as f64 * freq;
                crow.push(E::from_f64(angle.cos()));
                srow.push(E::from_f64(angle.sin()));
            }
            cos.push(crow);
            sin.push(srow);
        }
        Ok(RopeTable {
            cos,
            sin,
            head_dim,
        })
    }

    /// Rotate `x [L×(n_heads*head_dim)]` in place; `inverse` applies the
    /// transpose rotation (used by the backward pass).
    pub fn apply_in_place(&self, x: &mut Tensor<E>, n_heads: usize, inverse: bool) {
        let half = self.head_dim / 2;
        let rows = x.rows();
        debug_assert_eq!(rows, self.cos.len());
        debug_assert_eq!(x.cols(), n_heads * self.head_dim);
        for r in 0..rows {
            let crow = &self.cos[r];
            let srow = &self.sin[r];
            let row = x.row_mut(r);
            for h in 0..n_heads {
                let base = h * self.head_dim;
                for i in 0..half {
                    let a = row[base + 2 * i];
                    let b = row[base + 2 * i + 1];
                    let (c, s) = (crow[i], srow[i]);
                    if inverse {
                        row[base + 2 * i] = a * c + b * s;
                        row[base + 2 * i + 1] = b * c - a * s;
                    } else {
                        row[base + 2 * i] = a * c - b * s;
                        row[base + 2 * i + 1] = a * s + b * c;
                    }
                }
            }
        }
    }
}

/// Rotate query and key matrices `[L×(n_heads*head_dim)]` by their positions.
pub fn apply_rope<E: Scalar>(
    q: &Tensor<E>,
    k: &Tensor<E>,
    positions: &[usize],
    n_heads: usize,
    base: f64,
) -> Result<(Tensor<E>, Tensor<E>)> {
    if q.shape() != k.shape() {
        return Err(DetourError::ShapeMismatch(format!(
            "rope: q {:?} vs k {:?}",
            q.shape(),
            k.shape()
        )));
    }
    if positions.len() != q.rows() {
        return Err(DetourError::ShapeMismatch(format!(
            "rope: {} positions for {} rows",
            positions.len(),
            q.rows()
        )));
    }
    if q.cols() % n_heads != 0 {
        return Err(DetourError::ShapeMismatch(format!(
            "rope: width {} not divisible by {} heads",
            q.cols(),
            n_heads
        )));
    }
    let table = RopeTable::new(positions, q.cols() / n_heads, base)?;
    let mut qr = q.clone();
    let mut kr = k.clone();
    table.apply_in_place(&mut qr, n_heads, false);
    table.apply_in_place(&mut kr, n_heads, false);
    Ok((qr, kr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(
            &[rows, cols],
            (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn position_zero_is_identity() {
        let q = rand_mat(1, 8, 1);
        let k = rand_mat(1, 8, 2);
        let (qr, kr) = apply_rope(&q, &k, &[0], 2, 10_000.0).unwrap();
        assert_eq!(qr, q);
        assert_eq!(kr, k);
    }

    #[test]
    fn rotation_preserves_norm() {
        let q = rand_mat(6, 16, 3);
        let k = rand_mat(6, 16, 4);
        let (qr, _) = apply_rope(&q, &k, &[0, 3, 7, 100, 31, 255], 4, 10_000.0).unwrap();
        for r in 0..6 {
            let n0: f64 = q.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            let n1: f64 = qr.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n0 - n1).abs() < 1e-6, "row {}: {} vs {}", r, n0, n1);
        }
    }

    #[test]
    fn dot_products_depend_on_relative_position() {
        // <R_m q, R_n k> must equal the dot computed with a single relative
        // rotation by (n - m), checked against an explicit trig oracle.
        let head_dim = 8;
        let base = 10_000.0;
        let q = rand_mat(1, head_dim, 5);
        let k = rand_mat(1, head_dim, 6);
        let (m, n) = (13usize, 40usize);

        let (qm, _) = apply_rope(&q, &q, &[m], 1, base).unwrap();
        let (kn, _) = apply_rope(&k, &k, &[n], 1, base).unwrap();
        let direct: f64 = qm.row(0).iter().zip(kn.row(0)).map(|(a, b)| a * b).sum();

        // oracle: rotate k by relative position (n - m) with explicit trig,
        // leave q unrotated
        let mut oracle = 0.0;
        for i in 0..head_dim / 2 {
            let freq = base.powf(-2.0 * i as f64 / head_dim as f64);
            let angle = (n as f64 - m as f64) * freq;
            let (c, s) = (angle.cos(), angle.sin());
            let (qa, qb) = (q.at(0, 2 * i), q.at(0, 2 * i + 1));
            let (ka, kb) = (k.at(0, 2 * i), k.at(0, 2 * i + 1));
            let kra = ka * c - kb * s;
            let krb = ka * s + kb * c;
            oracle += qa * kra + qb * krb;
        }
        assert!(
            (direct - oracle).abs() < 1e-6,
            "direct {} vs oracle {}",
            direct,
            oracle
        );
    }

    #[test]
    fn inverse_rotation_undoes_forward() {
        let q = rand_mat(4, 16, 9);
        let table = RopeTable::<f64>::new(&[2, 9, 17, 33], 4, 10_000.0).unwrap();
        let mut x = q.clone();
        table.apply_in_place(&mut x, 4, false);
        table.apply_in_place(&mut x, 4, true);
        for (a, b) in x.data().iter().zip(q.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn odd_head_dim_is_rejected() {
        let q = rand_mat(1, 3, 1);
        assert!(apply_rope(&q, &q, &[0], 1, 10_000.0).is_err());
    }
}
