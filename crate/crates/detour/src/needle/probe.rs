//! Frozen-encoder probing: a 2-layer MLP (Dropout -> Linear -> GELU ->
//! Dropout -> Linear) over pooled sequence representations.

use super::dataset::NeedleExample;
use crate::error::{DetourError, Result};
use crate::model::{AttentionMaskMode, TransformerModel};
use crate::numerics::{Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeedleProbeConfig {
    pub hidden: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Representation layer fed to the probe; `None` means the final block.
    pub layer: Option<i32>,
    pub seed: u64,
}

impl Default for NeedleProbeConfig {
    fn default() -> Self {
        NeedleProbeConfig {
            hidden: 64,
            dropout: 0.1,
            epochs: 3,
            lr: 2e-5,
            batch_size: 4,
            layer: None,
            seed: 0,
        }
    }
}

/// Trained probe parameters (f64 throughout).
#[derive(Debug, Clone)]
pub struct NeedleProbe {
    pub w1: Tensor<f64>,
    pub b1: Vec<f64>,
    pub w2: Tensor<f64>,
    pub b2: Vec<f64>,
    pub layer: i32,
    pub val_accuracy: f64,
}

fn gelu_scalar(x: f64) -> f64 {
    let inner = (2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x);
    0.5 * x * (1.0 + inner.tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let inner = c * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x)
}

impl NeedleProbe {
    fn new(d_in: usize, hidden: usize, layer: i32, rng: &mut ChaCha8Rng) -> Self {
        let scale1 = (2.0 / d_in as f64).sqrt();
        let scale2 = (2.0 / hidden as f64).sqrt();
        let mut w1 = Tensor::zeros(&[d_in, hidden]);
        for v in w1.data_mut() {
            *v = rng.gen_range(-scale1..scale1);
        }
        let mut w2 = Tensor::zeros(&[hidden, 2]);
        for v in w2.data_mut() {
            *v = rng.gen_range(-scale2..scale2);
        }
        NeedleProbe {
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: vec![0.0; 2],
            layer,
            val_accuracy: 0.0,
        }
    }

    /// Forward pass; dropout multiplier masks apply only during training.
    fn forward(
        &self,
        x: &[f64],
        drop: Option<(&[f64], &[f64])>,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let hidden = self.b1.len();
        let xd: Vec<f64> = match drop {
            Some((m_in, _)) => x.iter().zip(m_in).map(|(v, m)| v * m).collect(),
            None => x.to_vec(),
        };
        let mut h_pre = self.b1.clone();
        for (i, &v) in xd.iter().enumerate() {
            let row = self.w1.row(i);
            for (hp, &w) in h_pre.iter_mut().zip(row) {
                *hp += v * w;
            }
        }
        let mut h: Vec<f64> = h_pre.iter().map(|&v| gelu_scalar(v)).collect();
        if let Some((_, m_h)) = drop {
            for (hv, m) in h.iter_mut().zip(m_h) {
                *hv *= m;
            }
        }
        let mut logits = self.b2.clone();
        for i in 0..hidden {
            let row = self.w2.row(i);
            for (l, &w) in logits.iter_mut().zip(row) {
                *l += h[i] * w;
            }
        }
        (logits, h_pre, h, xd)
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        let (logits, _, _, _) = self.forward(x, None);
        logits[1] > logits[0]
    }
}

/// Mean-pooled (over all non-pad tokens) representation of each example's
/// haystack + EOS + query input, at the probe layer, in f64.
pub fn pool_examples<E: Scalar>(
    encoder: &TransformerModel<E>,
    examples: &[NeedleExample],
    layer: i32,
    mode: AttentionMaskMode,
    eos_id: u32,
    pad_id: u32,
) -> Result<Tensor<f64>> {
    let texts: Vec<Vec<u32>> = examples.iter().map(|e| e.encoder_input(eos_id)).collect();
    encoder.extract_representations(&texts, layer, mode, pad_id)
}

/// AdamW over one flat parameter slice (probe-local optimizer).
struct FlatAdam {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl FlatAdam {
    fn new(n: usize) -> Self {
        FlatAdam {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn step(&mut self, t: u64, params: &mut [f64], grads: &[f64], lr: f64) {
        let (b1, b2, eps, wd) = (0.9f64, 0.999f64, 1e-8f64, 0.01f64);
        let c1 = 1.0 - b1.powi(t as i32);
        let c2 = 1.0 - b2.powi(t as i32);
        for i in 0..params.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grads[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grads[i] * grads[i];
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= lr * (mhat / (vhat.sqrt() + eps)) + lr * wd * params[i];
        }
    }
}

fn accuracy_on(probe: &NeedleProbe, feats: &Tensor<f64>, labels: &[bool]) -> f64 {
    let correct = (0..feats.rows())
        .filter(|&r| probe.predict(feats.row(r)) == labels[r])
        .count();
    correct as f64 / feats.rows() as f64
}

/// Train the probe on cached frozen-encoder features, keeping the epoch
/// checkpoint with the best validation accuracy. Errors if any encoder
/// parameter changes while features are extracted.
pub fn train_needle_probe<E: Scalar>(
    encoder: &TransformerModel<E>,
    train: &[NeedleExample],
    val: &[NeedleExample],
    cfg: &NeedleProbeConfig,
    mode: AttentionMaskMode,
    eos_id: u32,
    pad_id: u32,
) -> Result<NeedleProbe> {
    if train.is_empty() || val.is_empty() {
        return Err(DetourError::InvalidInput("needle probe: empty split".into()));
    }
    let layer = cfg.layer.unwrap_or(encoder.config.n_layers as i32 - 1);
    let snapshot = encoder.params.clone();
    let train_x = pool_examples(encoder, train, layer, mode, eos_id, pad_id)?;
    let val_x = pool_examples(encoder, val, layer, mode, eos_id, pad_id)?;
    if encoder.params != snapshot {
        return Err(DetourError::InvalidInput(
            "needle probe: encoder parameters changed during feature extraction".into(),
        ));
    }
    let train_y: Vec<bool> = train.iter().map(|e| e.present).collect();
    let val_y: Vec<bool> = val.iter().map(|e| e.present).collect();

    let d_in = train_x.cols();
    let hidden = cfg.hidden;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut probe = NeedleProbe::new(d_in, hidden, layer, &mut rng);
    let mut opt_w1 = FlatAdam::new(probe.w1.len());
    let mut opt_b1 = FlatAdam::new(hidden);
    let mut opt_w2 = FlatAdam::new(probe.w2.len());
    let mut opt_b2 = FlatAdam::new(2);
    let mut step = 0u64;

    probe.val_accuracy = accuracy_on(&probe, &val_x, &val_y);
    let mut best = probe.clone();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _epoch in 0..cfg.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let mut gw1 = vec![0.0f64; probe.w1.len()];
            let mut gb1 = vec![0.0f64; hidden];
            let mut gw2 = vec![0.0f64; probe.w2.len()];
            let mut gb2 = vec![0.0f64; 2];
            let inv = 1.0 / chunk.len() as f64;
            for &ri in chunk {
                let x = train_x.row(ri);
                let keep = 1.0 / (1.0 - cfg.dropout);
                let m_in: Vec<f64> = (0..d_in)
                    .map(|_| if rng.gen::<f64>() < cfg.dropout { 0.0 } else { keep })
                    .collect();
                let m_h: Vec<f64> = (0..hidden)
                    .map(|_| if rng.gen::<f64>() < cfg.dropout { 0.0 } else { keep })
                    .collect();
                let (logits, h_pre, h, xd) = probe.forward(x, Some((&m_in, &m_h)));
                let max = logits[0].max(logits[1]);
                let z = (logits[0] - max).exp() + (logits[1] - max).exp();
                let target = train_y[ri] as usize;
                let dlogits: Vec<f64> = (0..2)
                    .map(|c| {
                        let p = (logits[c] - max).exp() / z;
                        (p - if c == target { 1.0 } else { 0.0 }) * inv
                    })
                    .collect();
                let mut dh = vec![0.0f64; hidden];
                for i in 0..hidden {
                    for c in 0..2 {
                        gw2[i * 2 + c] += h[i] * dlogits[c];
                        dh[i] += probe.w2.at(i, c) * dlogits[c];
                    }
                }
                gb2[0] += dlogits[0];
                gb2[1] += dlogits[1];
                for i in 0..hidden {
                    let d_pre = dh[i] * m_h[i] * gelu_grad(h_pre[i]);
                    gb1[i] += d_pre;
                    for (j, &xv) in xd.iter().enumerate() {
                        gw1[j * hidden + i] += xv * d_pre;
                    }
                }
            }
            step += 1;
            opt_w1.step(step, probe.w1.data_mut(), &gw1, cfg.lr);
            opt_b1.step(step, &mut probe.b1, &gb1, cfg.lr);
            opt_w2.step(step, probe.w2.data_mut(), &gw2, cfg.lr);
            opt_b2.step(step, &mut probe.b2, &gb2, cfg.lr);
        }
        let acc = accuracy_on(&probe, &val_x, &val_y);
        if acc >= best.val_accuracy {
            probe.val_accuracy = acc;
            best = probe.clone();
        }
    }
    Ok(best)
}
