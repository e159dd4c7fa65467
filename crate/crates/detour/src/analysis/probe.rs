//! Linear probing of frozen representations: multinomial logistic
//! regression trained by full-batch gradient descent to a convergence
//! tolerance, which keeps stochastic-solver variance out of probe
//! comparisons.

use crate::error::{DetourError, Result};
use crate::numerics::ops::softmax_in_place;
use crate::numerics::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// Initial gradient-descent step on standardized features.
    pub lr: f64,
    /// L2 penalty on the weights.
    pub l2: f64,
    /// Stop when the absolute loss delta falls below this.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            lr: 1.0,
            l2: 1e-4,
            tol: 1e-6,
            max_iters: 5_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub task: String,
    pub per_seed_f1: Vec<f64>,
    pub mean_f1: f64,
}

/// Macro-averaged F1 over the classes present in `labels`.
pub fn macro_f1(labels: &[usize], preds: &[usize], n_classes: usize) -> f64 {
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fn_ = vec![0usize; n_classes];
    for (&l, &p) in labels.iter().zip(preds) {
        if l == p {
            tp[l] += 1;
        } else {
            fp[p] += 1;
            fn_[l] += 1;
        }
    }
    let mut sum = 0.0;
    let mut classes = 0usize;
    for c in 0..n_classes {
        if tp[c] + fp[c] + fn_[c] == 0 {
            continue; // class absent entirely
        }
        classes += 1;
        let denom = 2 * tp[c] + fp[c] + fn_[c];
        if denom > 0 {
            sum += 2.0 * tp[c] as f64 / denom as f64;
        }
    }
    if classes == 0 {
        0.0
    } else {
        sum / classes as f64
    }
}

struct Standardized {
    x: Tensor<f64>,
}

fn standardize(x: &Tensor<f64>) -> Standardized {
    let (n, p) = (x.rows(), x.cols());
    let mut mean = vec![0.0; p];
    for r in 0..n {
        for (m, &v) in mean.iter_mut().zip(x.row(r)) {
            *m += v / n as f64;
        }
    }
    let mut std = vec![0.0; p];
    for r in 0..n {
        for (s, (&v, m)) in std.iter_mut().zip(x.row(r).iter().zip(&mean)) {
            *s += (v - m) * (v - m) / n as f64;
        }
    }
    for s in &mut std {
        *s = s.sqrt().max(1e-12);
    }
    let mut out = x.clone();
    for r in 0..n {
        for (v, (m, s)) in out.row_mut(r).iter_mut().zip(mean.iter().zip(&std)) {
            *v = (*v - m) / s;
        }
    }
    Standardized { x: out }
}

fn probe_loss_and_grads(
    x: &Tensor<f64>,
    labels: &[usize],
    w: &Tensor<f64>,
    b: &[f64],
    l2: f64,
) -> (f64, Tensor<f64>, Vec<f64>) {
    let (n, p) = (x.rows(), x.cols());
    let c = w.rows();
    let mut dw = Tensor::zeros(&[c, p]);
    let mut db = vec![0.0; c];
    let mut loss = 0.0;
    let mut logits = vec![0.0f64; c];
    let inv_n = 1.0 / n as f64;
    for r in 0..n {
        let row = x.row(r);
        for (ci, l) in logits.iter_mut().enumerate() {
            *l = b[ci] + w.row(ci).iter().zip(row).map(|(a, v)| a * v).sum::<f64>();
        }
        softmax_in_place(&mut logits);
        loss -= logits[labels[r]].max(1e-300).ln();
        for ci in 0..c {
            let g = (logits[ci] - if ci == labels[r] { 1.0 } else { 0.0 }) * inv_n;
            db[ci] += g;
            for (d, &v) in dw.row_mut(ci).iter_mut().zip(row) {
                *d += g * v;
            }
        }
    }
    loss *= inv_n;
    for ci in 0..c {
        for (d, &wv) in dw.row_mut(ci).iter_mut().zip(w.row(ci)) {
            *d += l2 * wv;
        }
        loss += 0.5 * l2 * w.row(ci).iter().map(|v| v * v).sum::<f64>();
    }
    (loss, dw, db)
}

fn fit_and_predict(
    x: &Tensor<f64>,
    labels: &[usize],
    n_classes: usize,
    cfg: &ProbeConfig,
    seed: u64,
) -> Vec<usize> {
    let p = x.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Tensor::zeros(&[n_classes, p]);
    for v in w.data_mut() {
        *v = rng.gen_range(-0.01..0.01);
    }
    let mut b = vec![0.0f64; n_classes];
    let mut lr = cfg.lr;
    let (mut loss, mut dw, mut db) = probe_loss_and_grads(x, labels, &w, &b, cfg.l2);
    for _ in 0..cfg.max_iters {
        let mut w_try = w.clone();
        for (v, &g) in w_try.data_mut().iter_mut().zip(dw.data()) {
            *v -= lr * g;
        }
        let b_try: Vec<f64> = b.iter().zip(&db).map(|(v, g)| v - lr * g).collect();
        let (loss_try, dw_try, db_try) = probe_loss_and_grads(x, labels, &w_try, &b_try, cfg.l2);
        if loss_try > loss {
            lr *= 0.5;
            if lr < 1e-12 {
                break;
            }
            continue;
        }
        let delta = loss - loss_try;
        w = w_try;
        b = b_try;
        loss = loss_try;
        dw = dw_try;
        db = db_try;
        if delta < cfg.tol {
            break;
        }
    }
    (0..x.rows())
        .map(|r| {
            let row = x.row(r);
            let mut best = 0usize;
            let mut best_v = f64::NEG_INFINITY;
            for ci in 0..n_classes {
                let v = b[ci] + w.row(ci).iter().zip(row).map(|(a, u)| a * u).sum::<f64>();
                if v > best_v {
                    best_v = v;
                    best = ci;
                }
            }
            best
        })
        .collect()
}

/// Train a logistic probe per seed on the given representations and report
/// macro-F1 of its decision function on the same data.
pub fn linear_probe(
    representations: &Tensor<f64>,
    labels: &[usize],
    seeds: &[u64],
    cfg: &ProbeConfig,
    task: &str,
) -> Result<ProbeResult> {
    let n = representations.rows();
    if labels.len() != n {
        return Err(DetourError::ShapeMismatch(format!(
            "linear_probe: {} rows, {} labels",
            n,
            labels.len()
        )));
    }
    if seeds.is_empty() {
        return Err(DetourError::InvalidInput("linear_probe: no seeds".into()));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let distinct = {
        let mut seen = vec![false; n_classes];
        for &l in labels {
            seen[l] = true;
        }
        seen.iter().filter(|&&s| s).count()
    };
    if distinct < 2 {
        return Err(DetourError::InvalidInput(
            "linear_probe: need at least two classes".into(),
        ));
    }
    let std = standardize(representations);
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let preds = fit_and_predict(&std.x, labels, n_classes, cfg, seed);
        per_seed.push(macro_f1(labels, &preds, n_classes));
    }
    let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
    Ok(ProbeResult {
        task: task.to_string(),
        per_seed_f1: per_seed,
        mean_f1: mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(n_per: usize, sep: f64, seed: u64) -> (Tensor<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..2 {
            for _ in 0..n_per {
                let cx = if c == 0 { -sep } else { sep };
                rows.push(cx + rng.gen_range(-0.5..0.5));
                rows.push(rng.gen_range(-0.5..0.5));
                labels.push(c);
            }
        }
        (
            Tensor::from_vec(&[2 * n_per, 2], rows).unwrap(),
            labels,
        )
    }

    #[test]
    fn separable_blobs_reach_perfect_f1() {
        let (x, y) = blobs(30, 3.0, 1);
        let r = linear_probe(&x, &y, &[1, 2, 3], &ProbeConfig::default(), "blobs").unwrap();
        assert_eq!(r.mean_f1, 1.0, "{:?}", r.per_seed_f1);
    }

    #[test]
    fn shuffled_labels_sit_at_chance_per_permutation_oracle() {
        use rand::seq::SliceRandom;
        let (x, y) = blobs(40, 2.0, 2);
        let cfg = ProbeConfig::default();
        // permutation oracle: distribution of probe F1 under random labelings
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut perm_f1 = Vec::new();
        for _ in 0..20 {
            let mut yp = y.clone();
            yp.shuffle(&mut rng);
            let r = linear_probe(&x, &yp, &[5], &cfg, "perm").unwrap();
            perm_f1.push(r.mean_f1);
        }
        let mu = perm_f1.iter().sum::<f64>() / perm_f1.len() as f64;
        let sd = (perm_f1.iter().map(|v| (v - mu).powi(2)).sum::<f64>()
            / (perm_f1.len() - 1) as f64)
            .sqrt();
        let mut ys = y.clone();
        ys.shuffle(&mut rng);
        let shuffled = linear_probe(&x, &ys, &[9], &cfg, "shuffled").unwrap();
        assert!(
            (shuffled.mean_f1 - mu).abs() <= 3.0 * sd.max(0.02),
            "shuffled {} vs permutation mean {} (sd {})",
            shuffled.mean_f1,
            mu,
            sd
        );
    }

    #[test]
    fn duplicated_rows_give_the_same_decision_function() {
        let (x, y) = blobs(25, 1.5, 3);
        let cfg = ProbeConfig::default();
        let base = linear_probe(&x, &y, &[4], &cfg, "base").unwrap();
        let mut dup_rows = x.data().to_vec();
        dup_rows.extend_from_slice(x.data());
        let xdup = Tensor::from_vec(&[2 * x.rows(), 2], dup_rows).unwrap();
        let mut ydup = y.clone();
        ydup.extend_from_slice(&y);
        let dup = linear_probe(&xdup, &ydup, &[4], &cfg, "dup").unwrap();
        assert!(
            (base.mean_f1 - dup.mean_f1).abs() < 1e-9,
            "{} vs {}",
            base.mean_f1,
            dup.mean_f1
        );
    }

    #[test]
    fn single_class_labels_error() {
        let (x, _) = blobs(10, 1.0, 4);
        let y = vec![0usize; x.rows()];
        assert!(linear_probe(&x, &y, &[1], &ProbeConfig::default(), "t").is_err());
    }

    #[test]
    fn macro_f1_basics() {
        // perfect
        assert_eq!(macro_f1(&[0, 1, 0, 1], &[0, 1, 0, 1], 2), 1.0);
        // one class entirely wrong: F1(0) = 2*1/(2*1+1+1) = 0.5, F1(1) = 0.5
        let f1 = macro_f1(&[0, 0, 1, 1], &[0, 1, 0, 1], 2);
        assert!((f1 - 0.5).abs() < 1e-12);
    }
}
