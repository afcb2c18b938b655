//! Small order-statistic helpers.

use crate::error::{Error, Result};

/// Linear-interpolated quantile (`q ∈ [0, 1]`) over the finite entries of
/// `values`, with order statistic `j` at `j/(n − 1)`.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid(format!("quantile {q} outside [0, 1]")));
    }
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return Err(Error::invalid("quantile of an empty sample"));
    }
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi || v[lo] == v[hi] {
        return Ok(v[lo]);
    }
    Ok(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}
