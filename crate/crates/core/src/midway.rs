//! Midway histogram equalization across video frames.
//!
//! Every frame-channel is remapped onto the average of the per-frame inverse
//! CDFs, so all frames end up sharing one intensity distribution while each
//! frame keeps its own pixel ordering.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::FalseColorVideo;

pub const DEFAULT_LEVELS: usize = 1024;

/// Per-channel midway quantile functions sampled at `(i + 0.5)/Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileTable {
    pub levels: usize,
    pub channels: Vec<Vec<f64>>,
}

/// Samples the empirical inverse CDF of one frame-channel on the Q-point grid.
pub fn frame_quantile_function(values: &[f64], levels: usize) -> Result<Vec<f64>> {
    if levels < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 quantile levels, got {levels}"
        )));
    }
    if values.is_empty() {
        return Err(Error::invalid("cannot take quantiles of an empty frame"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(grid_quantiles(&sorted, levels))
}

/// Empirical inverse CDF on the grid `(i + 0.5)/Q`: order statistic `j` sits at
/// quantile `(j + 0.5)/n`, linear in between, clamped at the ends.
fn grid_quantiles(sorted: &[f64], levels: usize) -> Vec<f64> {
    // Position (i + 0.5)·n/Q − 0.5 as the exact fraction ((2i + 1)·n − Q)/(2Q).
    let n = sorted.len() as i64;
    let den = 2 * levels as i64;
    (0..levels as i64)
        .map(|i| {
            let num = ((2 * i + 1) * n - levels as i64).clamp(0, (n - 1) * den);
            let lo = (num / den) as usize;
            let hi = (lo + 1).min(sorted.len() - 1);
            let frac = (num % den) as f64 / den as f64;
            sorted[lo] + frac * (sorted[hi] - sorted[lo])
        })
        .collect()
}

/// Evaluates a grid-sampled quantile function at `q`, linear between grid points.
fn eval_table(table: &[f64], q: f64) -> f64 {
    let levels = table.len();
    let pos = (q * levels as f64 - 0.5).clamp(0.0, (levels - 1) as f64);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(levels - 1);
    let frac = pos - lo as f64;
    table[lo] + frac * (table[hi] - table[lo])
}

/// Mid-rank quantile `(rank + 0.5)/n` of every value; ties share the
/// average rank of their group so equal inputs map to equal outputs.
fn pixel_quantiles(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut q = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let mid_rank = (start + end - 1) as f64 / 2.0;
        for &i in &order[start..end] {
            q[i] = (mid_rank + 0.5) / n as f64;
        }
        start = end;
    }
    q
}

/// Equalizes `frames` (each a slice of one channel's values) in place.
fn equalize_channel(frames: &mut [Vec<f64>], levels: usize) -> Vec<f64> {
    let tables: Vec<Vec<f64>> = frames
        .par_iter()
        .map(|f| {
            let mut sorted = f.clone();
            sorted.sort_by(f64::total_cmp);
            grid_quantiles(&sorted, levels)
        })
        .collect();
    let t = tables.len() as f64;
    let midway: Vec<f64> = (0..levels)
        .map(|i| tables.iter().map(|tab| tab[i]).sum::<f64>() / t)
        .collect();
    frames.par_iter_mut().for_each(|f| {
        let q = pixel_quantiles(f);
        for (v, qi) in f.iter_mut().zip(q) {
            *v = eval_table(&midway, qi).clamp(0.0, 1.0);
        }
    });
    midway
}

/// Midway equalization with `levels` quantile grid points per channel.
pub fn midway_equalize_with(
    video: &FalseColorVideo,
    levels: usize,
) -> Result<(FalseColorVideo, QuantileTable)> {
    if levels < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 quantile levels, got {levels}"
        )));
    }
    let (t_n, n) = (video.frames(), video.pixels_per_frame());
    if t_n == 0 || n == 0 {
        return Err(Error::invalid("video has no pixels"));
    }
    let mut out = video.data().to_vec();
    let mut channels = Vec::with_capacity(3);
    for c in 0..3 {
        let mut frames: Vec<Vec<f64>> = (0..t_n).map(|t| video.channel(t, c)).collect();
        channels.push(equalize_channel(&mut frames, levels));
        for (t, f) in frames.iter().enumerate() {
            for (i, v) in f.iter().enumerate() {
                out[(t * n + i) * 3 + c] = *v;
            }
        }
    }
    let eq = FalseColorVideo::new(t_n, video.height(), video.width(), out)?;
    Ok((eq, QuantileTable { levels, channels }))
}

pub fn midway_equalize(video: &FalseColorVideo) -> Result<FalseColorVideo> {
    Ok(midway_equalize_with(video, DEFAULT_LEVELS)?.0)
}
