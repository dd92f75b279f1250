use crate::error::{invalid, Result};

/// Reduces `t` modulo the period: `t - floor(t / period) * period`, in `[0, period)`.
pub fn wrap_time(t: f64, period: f64) -> Result<f64> {
    if !t.is_finite() {
        return invalid(format!("time must be finite, got {t}"));
    }
    if !(period > 0.0) || !period.is_finite() {
        return invalid(format!("period must be positive and finite, got {period}"));
    }
    Ok(wrap_unchecked(t, period))
}

#[inline]
pub(crate) fn wrap_unchecked(t: f64, period: f64) -> f64 {
    let r = t - (t / period).floor() * period;
    // rounding can land exactly on `period` or a hair below zero
    if r >= period {
        r - period
    } else if r < 0.0 {
        let r = r + period;
        if r >= period {
            0.0
        } else {
            r
        }
    } else {
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(wrap_time(2.5, 1.0).unwrap(), 0.5);
        assert_eq!(wrap_time(1.0, 1.0).unwrap(), 0.0);
        assert_eq!(wrap_time(7.25, 2.0).unwrap(), 1.25);
        assert_eq!(wrap_time(0.0, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(wrap_time(f64::NAN, 1.0).is_err());
        assert!(wrap_time(f64::INFINITY, 1.0).is_err());
        assert!(wrap_time(1.0, 0.0).is_err());
        assert!(wrap_time(1.0, -2.0).is_err());
    }

    proptest! {
        #[test]
        fn result_in_range(t in 0.0f64..1e9, period in 1e-3f64..1e3) {
            let r = wrap_time(t, period).unwrap();
            prop_assert!((0.0..period).contains(&r));
        }

        // dyadic inputs keep t + k*T exact, so the wrap must be bit-identical
        #[test]
        fn exact_shift_invariance(n in 0u32..(1 << 26), p in 0usize..4, k in prop::sample::select(vec![1u32, 2, 17])) {
            let period = [1.0, 0.5, 2.0, 0.25][p];
            let t = n as f64 / (1u64 << 20) as f64;
            let shifted = t + k as f64 * period;
            prop_assert_eq!(wrap_time(t, period).unwrap().to_bits(), wrap_time(shifted, period).unwrap().to_bits());
        }
    }
}
