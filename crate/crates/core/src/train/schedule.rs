/// Cosine annealing with warm restarts, evaluated per epoch.
///
/// Cycle `k` lasts `t0·t_mult^k` epochs and peaks at `base_lr·gamma^k`;
/// inside it `lr = peak·(1 + cos(π·t/T_k))/2` with `t` the epochs since the
/// cycle began.
pub fn lr_schedule(epoch: f64, base_lr: f64, t0: f64, t_mult: f64, gamma: f64) -> f64 {
    let (k, start, len) = cycle_of(epoch.max(0.0), t0, t_mult);
    let peak = base_lr * gamma.powi(k as i32);
    let t = epoch.max(0.0) - start;
    peak * (1.0 + (std::f64::consts::PI * t / len).cos()) / 2.0
}

/// `(index, start epoch, length)` of the cycle containing `epoch`.
pub fn cycle_of(epoch: f64, t0: f64, t_mult: f64) -> (u32, f64, f64) {
    if t_mult == 1.0 {
        let k = (epoch / t0).floor();
        return (k as u32, k * t0, t0);
    }
    let (mut k, mut start, mut len) = (0u32, 0.0, t0);
    while epoch >= start + len {
        start += len;
        len *= t_mult;
        k += 1;
    }
    (k, start, len)
}

/// True when `epoch` is the first epoch of a cycle after the first one.
pub fn is_restart(epoch: usize, t0: f64, t_mult: f64) -> bool {
    epoch > 0 && cycle_of(epoch as f64, t0, t_mult).1 == epoch as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lr(e: f64) -> f64 {
        lr_schedule(e, 3e-4, 10.0, 2.0, 0.5)
    }

    #[test]
    fn peaks_midpoint_and_restarts() {
        assert_eq!(lr(0.0), 3e-4);
        assert!((lr(5.0) - 1.5e-4).abs() < 1e-12);
        for (e, peak) in [(10.0, 1.5e-4), (30.0, 7.5e-5), (70.0, 3.75e-5)] {
            assert!((lr(e) - peak).abs() < 1e-18, "epoch {e}");
            // just before the restart the rate has annealed to ~0
            assert!(lr(e - 1e-9) < 1e-15);
        }
        let restarts: Vec<usize> = (0..200).filter(|&e| is_restart(e, 10.0, 2.0)).collect();
        assert_eq!(restarts, [10, 30, 70, 150]);
    }

    #[test]
    fn constant_period_when_t_mult_is_one() {
        let a = lr_schedule(3.0, 1.0, 4.0, 1.0, 1.0);
        assert!((lr_schedule(7.0, 1.0, 4.0, 1.0, 1.0) - a).abs() < 1e-15);
        assert!((lr_schedule(11.0, 1.0, 4.0, 1.0, 0.5) - a / 4.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn bounded_and_nonincreasing_within_a_cycle(e in 0.0f64..300.0, step in 0.0f64..1.0) {
            let (_, start, len) = cycle_of(e, 10.0, 2.0);
            let later = (e + step).min(start + len - 1e-9).max(e);
            prop_assert!(lr(e) <= 3e-4 && lr(e) >= 0.0);
            prop_assert!(lr(later) <= lr(e) + 1e-18);
        }
    }
}
