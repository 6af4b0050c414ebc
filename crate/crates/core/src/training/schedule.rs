//! One-cycle learning-rate schedule with cosine annealing.

use std::f64::consts::PI;

pub const WARMUP_FRACTION: f64 = 0.3;
pub const DIV_FACTOR: f64 = 25.0;
pub const FINAL_DIV_FACTOR: f64 = 1e4;

fn cos_anneal(start: f64, end: f64, frac: f64) -> f64 {
    end + (start - end) / 2.0 * ((PI * frac).cos() + 1.0)
}

/// Learning rate at `step` of `total_steps`.
///
/// Rises from `lr_max / 25` to `lr_max` over the first 30 % of the run, then
/// falls to `(lr_max / 25) / 1e4`; both phases follow a half cosine.
pub fn one_cycle_lr(step: usize, total_steps: usize, lr_max: f64) -> f64 {
    let initial = lr_max / DIV_FACTOR;
    let min = initial / FINAL_DIV_FACTOR;
    if total_steps == 0 {
        return initial;
    }
    let s = step.min(total_steps) as f64;
    let total = total_steps as f64;
    let peak = WARMUP_FRACTION * total;
    if s <= peak {
        if peak == 0.0 {
            return lr_max;
        }
        cos_anneal(initial, lr_max, s / peak)
    } else {
        cos_anneal(lr_max, min, (s - peak) / (total - peak))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchors() {
        assert!((one_cycle_lr(0, 1000, 1e-3) - 1e-3 / 25.0).abs() < 1e-18);
        assert!((one_cycle_lr(300, 1000, 1e-3) - 1e-3).abs() < 1e-18);
        assert!((one_cycle_lr(1000, 1000, 1e-3) - 1e-3 / 25.0 / 1e4).abs() < 1e-18);
    }

    #[test]
    fn monotone_up_then_down() {
        let total = 5000;
        let lrs: Vec<f64> = (0..=total).map(|s| one_cycle_lr(s, total, 0.01)).collect();
        let peak = (0.3 * total as f64) as usize;
        for w in lrs[..=peak].windows(2) {
            assert!(w[1] >= w[0]);
        }
        for w in lrs[peak..].windows(2) {
            assert!(w[1] <= w[0]);
        }
        // continuity: no jump larger than the steepest cosine slope allows
        let max_jump = lrs.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
        assert!(max_jump < 0.01 * PI / (0.3 * total as f64));
    }
}
