//! Learning-rate schedules. The scheduler clock resets at every phase start;
//! `t` and `total` are token counts within the current phase.

use crate::error::{DetourError, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Schedule {
    /// Linear 0 -> peak over `warmup_tokens`, then constant at peak.
    WarmupThenConstant { warmup_tokens: u64 },
    /// `lr(t) = floor + (peak - floor) * (1 - sqrt(t / total))`, no warmup;
    /// `floor = floor_fraction * peak`.
    SqrtDecay { floor_fraction: f64 },
}

/// Learning rate at `t` consumed tokens of a `total`-token phase.
pub fn lr_at(schedule: &Schedule, t: u64, total: u64, peak: f64) -> Result<f64> {
    if t > total {
        return Err(DetourError::InvalidInput(format!(
            "lr_at: t {} beyond phase budget {}",
            t, total
        )));
    }
    match schedule {
        Schedule::WarmupThenConstant { warmup_tokens } => {
            if *warmup_tokens == 0 || t >= *warmup_tokens {
                Ok(peak)
            } else {
                Ok(peak * t as f64 / *warmup_tokens as f64)
            }
        }
        Schedule::SqrtDecay { floor_fraction } => {
            let floor = floor_fraction * peak;
            Ok(floor + (peak - floor) * (1.0 - (t as f64 / total as f64).sqrt()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PEAK: f64 = 2e-4;

    #[test]
    fn sqrt_decay_endpoints_are_exact() {
        let s = Schedule::SqrtDecay { floor_fraction: 0.1 };
        assert_eq!(lr_at(&s, 0, 1000, PEAK).unwrap(), PEAK);
        assert_eq!(lr_at(&s, 1000, 1000, PEAK).unwrap(), 0.1 * PEAK);
    }

    #[test]
    fn sqrt_decay_quarter_point() {
        // t = T/4: floor + (peak - floor) * (1 - 1/2) = 2e-5 + 0.5 * 1.8e-4
        let s = Schedule::SqrtDecay { floor_fraction: 0.1 };
        let lr = lr_at(&s, 250, 1000, PEAK).unwrap();
        assert!((lr - 1.1e-4).abs() < 1e-18);
    }

    #[test]
    fn warmup_is_linear_then_flat() {
        let s = Schedule::WarmupThenConstant { warmup_tokens: 400 };
        for t in [0u64, 100, 200, 300, 399] {
            let lr = lr_at(&s, t, 1000, PEAK).unwrap();
            let expect = PEAK * t as f64 / 400.0;
            assert!((lr - expect).abs() <= 1e-12 * PEAK);
        }
        assert_eq!(lr_at(&s, 400, 1000, PEAK).unwrap(), PEAK);
        assert_eq!(lr_at(&s, 1000, 1000, PEAK).unwrap(), PEAK);
    }

    #[test]
    fn t_beyond_budget_errors() {
        let s = Schedule::SqrtDecay { floor_fraction: 0.1 };
        assert!(lr_at(&s, 1001, 1000, PEAK).is_err());
    }
}
