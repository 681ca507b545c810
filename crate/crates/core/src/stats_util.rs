//! Small order-statistic helpers shared across modules.

use std::cmp::Ordering;

fn cmp_f64(a: &f64, b: &f64) -> Ordering {
    a.partial_cmp(b).expect("NaN in order statistic")
}

/// Percentile with linear interpolation between order statistics
/// (position `p/100 · (n−1)` on the sorted sample).
///
/// Returns `None` for an empty sample. `p` is clamped to `[0, 100]`.
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    Some(percentile_in_place(&mut v, p))
}

/// As [`percentile`] but reorders `values` instead of copying. Uses
/// selection, so it runs in linear time.
pub fn percentile_in_place(values: &mut [f64], p: f64) -> f64 {
    let n = values.len();
    assert!(n > 0, "percentile of empty sample");
    let pos = p.clamp(0.0, 100.0) / 100.0 * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    let (_, lo_val, rest) = values.select_nth_unstable_by(lo, cmp_f64);
    let lo_val = *lo_val;
    if frac == 0.0 || rest.is_empty() {
        return lo_val;
    }
    let hi_val = rest.iter().copied().min_by(cmp_f64).unwrap();
    lo_val + frac * (hi_val - lo_val)
}

/// Median; the mean of the two middle values for even-length samples.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(cmp_f64);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Unscaled median absolute deviation, `median(|x − median(x)|)`.
pub fn mad(values: &[f64]) -> Option<f64> {
    let m = median(values)?;
    let dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    median(&dev)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_linear_rule() {
        let v: Vec<f64> = (0..=100).map(f64::from).collect();
        assert!((percentile(&v, 0.1).unwrap() - 0.1).abs() < 1e-12);
        assert!((percentile(&v, 99.9).unwrap() - 99.9).abs() < 1e-12);
        assert_eq!(percentile(&v, 50.0).unwrap(), 50.0);
        assert_eq!(percentile(&[3.0], 99.0).unwrap(), 3.0);
        assert!(percentile(&[], 50.0).is_none());
        // unsorted input, interpolated between 2 and 4
        assert_eq!(percentile(&[4.0, 1.0, 2.0], 75.0).unwrap(), 3.0);
    }

    #[test]
    fn median_and_mad() {
        assert_eq!(median(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]).unwrap(), 2.5);
        assert_eq!(mad(&[1.0, 1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(mad(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap(), 1.0);
    }
}
