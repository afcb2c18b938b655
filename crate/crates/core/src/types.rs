//! Data model shared by every processing stage.

use crate::error::{Error, Result};

/// Physical meaning of the samples stored in a [`HyperCube`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CubeKind {
    Radiance,
    Emissivity,
    /// Principal-component scores; "wavelengths" are then component ordinals.
    Scores,
}

impl CubeKind {
    pub fn code(self) -> u8 {
        match self {
            CubeKind::Radiance => 0,
            CubeKind::Emissivity => 1,
            CubeKind::Scores => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(CubeKind::Radiance),
            1 => Some(CubeKind::Emissivity),
            2 => Some(CubeKind::Scores),
            _ => None,
        }
    }
}

/// A T×H×W×B hyperspectral video stored in (t, h, w, b) row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperCube {
    frames: usize,
    height: usize,
    width: usize,
    wavelengths: Vec<f64>,
    kind: CubeKind,
    data: Vec<f64>,
}

pub(crate) fn checked_volume(dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::invalid("dimensions overflow usize"))
}

impl HyperCube {
    pub fn new(
        frames: usize,
        height: usize,
        width: usize,
        wavelengths: Vec<f64>,
        kind: CubeKind,
        data: Vec<f64>,
    ) -> Result<Self> {
        let bands = wavelengths.len();
        let expected = checked_volume(&[frames, height, width, bands])?;
        if data.len() != expected {
            return Err(Error::dims(format!(
                "cube {frames}x{height}x{width}x{bands} needs {expected} samples, got {}",
                data.len()
            )));
        }
        validate_wavelengths(&wavelengths)?;
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            frames,
            height,
            width,
            wavelengths,
            kind,
            data,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn bands(&self) -> usize {
        self.wavelengths.len()
    }
    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }
    pub fn kind(&self) -> CubeKind {
        self.kind
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
    pub fn pixels_per_frame(&self) -> usize {
        self.height * self.width
    }
    /// Total number of pixel spectra (T·H·W).
    pub fn pixel_count(&self) -> usize {
        self.frames * self.height * self.width
    }

    #[inline]
    pub fn index(&self, t: usize, h: usize, w: usize, b: usize) -> usize {
        ((t * self.height + h) * self.width + w) * self.bands() + b
    }

    pub fn get(&self, t: usize, h: usize, w: usize, b: usize) -> f64 {
        self.data[self.index(t, h, w, b)]
    }

    pub fn spectrum(&self, t: usize, h: usize, w: usize) -> &[f64] {
        let i = self.index(t, h, w, 0);
        &self.data[i..i + self.bands()]
    }

    /// Spectra of pixel `p` counted over the whole video (frame-major).
    pub fn pixel(&self, p: usize) -> &[f64] {
        let b = self.bands();
        &self.data[p * b..(p + 1) * b]
    }

    pub fn frame_data(&self, t: usize) -> &[f64] {
        let len = self.pixels_per_frame() * self.bands();
        &self.data[t * len..(t + 1) * len]
    }

    pub fn frame(&self, t: usize) -> FeatureImage {
        FeatureImage {
            height: self.height,
            width: self.width,
            dim: self.bands(),
            data: self.frame_data(t).to_vec(),
        }
    }

    /// Frames `[start, end)` as a new cube.
    pub fn sub_frames(&self, start: usize, end: usize) -> Result<HyperCube> {
        if start >= end || end > self.frames {
            return Err(Error::invalid(format!(
                "frame range {start}..{end} invalid for {} frames",
                self.frames
            )));
        }
        let len = self.pixels_per_frame() * self.bands();
        Ok(HyperCube {
            frames: end - start,
            height: self.height,
            width: self.width,
            wavelengths: self.wavelengths.clone(),
            kind: self.kind,
            data: self.data[start * len..end * len].to_vec(),
        })
    }
}

pub(crate) fn validate_wavelengths(w: &[f64]) -> Result<()> {
    if let Some(i) = w.iter().position(|x| !x.is_finite()) {
        return Err(Error::invalid(format!("wavelength {i} is not finite")));
    }
    if let Some(i) = w.windows(2).position(|p| p[1] <= p[0]) {
        return Err(Error::invalid(format!(
            "wavelengths not strictly ascending at index {}",
            i + 1
        )));
    }
    Ok(())
}

/// Per-pixel vectors on an H×W grid: raw spectra (dim B) or 3×3 features (dim 9B).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImage {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl FeatureImage {
    pub fn new(height: usize, width: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != checked_volume(&[height, width, dim])? {
            return Err(Error::dims(format!(
                "feature image {height}x{width}x{dim} needs {} values, got {}",
                height * width * dim,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite feature value at index {i}"
            )));
        }
        Ok(Self {
            height,
            width,
            dim,
            data,
        })
    }

    /// Treats a list of points as a 1×n image.
    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map_or(0, Vec::len);
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::dims("points have differing dimensions"));
        }
        Self::new(1, points.len(), dim, points.concat())
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn pixel_at(&self, h: usize, w: usize) -> &[f64] {
        self.pixel(h * self.width + w)
    }
}

/// A single H×W frame with 1 (gray) or 3 (RGB) channels, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Raster {
    pub fn gray(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(height, width, 1, data)
    }

    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!(
                "raster must have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != checked_volume(&[height, width, channels])? {
            return Err(Error::dims(format!(
                "raster {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_mask(height: usize, width: usize, mask: &[bool]) -> Result<Self> {
        Self::gray(
            height,
            width,
            mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
        )
    }
}

/// Min-max normalizes `values` to [0, 1]; a constant input maps to 0.5.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    let range = hi - lo;
    if !(range > 0.0) {
        return vec![0.5; values.len()];
    }
    values
        .iter()
        .map(|&x| ((x - lo) / range).clamp(0.0, 1.0))
        .collect()
}

/// T×H×W×3 false-color frames with every value in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct FalseColorVideo {
    frames: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FalseColorVideo {
    pub const CHANNELS: usize = 3;

    pub fn new(frames: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != checked_volume(&[frames, height, width, Self::CHANNELS])? {
            return Err(Error::dims(format!(
                "false-color video {frames}x{height}x{width}x3 needs {} values, got {}",
                frames * height * width * 3,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::OutOfRange {
                index: i / Self::CHANNELS,
                value: data[i],
            });
        }
        Ok(Self {
            frames,
            height,
            width,
            data,
        })
    }

    pub fn from_frames(frames: &[Raster]) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::invalid("video needs at least one frame"))?;
        let mut data = Vec::with_capacity(frames.len() * first.data.len());
        for f in frames {
            if f.channels != 3 || f.height != first.height || f.width != first.width {
                return Err(Error::dims("frames must share size and have 3 channels"));
            }
            data.extend_from_slice(&f.data);
        }
        Self::new(frames.len(), first.height, first.width, data)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn pixels_per_frame(&self) -> usize {
        self.height * self.width
    }

    /// Values of channel `c` in frame `t`, in pixel order.
    pub fn channel(&self, t: usize, c: usize) -> Vec<f64> {
        let n = self.pixels_per_frame();
        let base = t * n * 3;
        (0..n).map(|i| self.data[base + i * 3 + c]).collect()
    }

    pub fn frame(&self, t: usize) -> Raster {
        let len = self.pixels_per_frame() * 3;
        Raster {
            height: self.height,
            width: self.width,
            channels: 3,
            data: self.data[t * len..(t + 1) * len].to_vec(),
        }
    }

    /// Frame `t` as a 3-dimensional per-pixel feature image.
    pub fn frame_features(&self, t: usize) -> FeatureImage {
        let f = self.frame(t);
        FeatureImage {
            height: f.height,
            width: f.width,
            dim: 3,
            data: f.data,
        }
    }
}

/// Integer cluster assignment per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labeling {
    pub height: usize,
    pub width: usize,
    pub k: usize,
    pub labels: Vec<usize>,
}

impl Labeling {
    pub fn new(height: usize, width: usize, k: usize, labels: Vec<usize>) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("labeling needs k >= 1"));
        }
        if labels.len() != height * width {
            return Err(Error::dims(format!(
                "labeling {height}x{width} needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        if let Some(i) = labels.iter().position(|&l| l >= k) {
            return Err(Error::invalid(format!(
                "label {} at pixel {i} is not below k = {k}",
                labels[i]
            )));
        }
        Ok(Self {
            height,
            width,
            k,
            labels,
        })
    }
}

/// Real-valued phase field; ±1 after the MBO threshold step.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseField {
    pub height: usize,
    pub width: usize,
    pub u: Vec<f64>,
}

impl PhaseField {
    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            u: vec![value; height * width],
        }
    }

    /// Pixels in the +1 phase.
    pub fn mask(&self) -> Vec<bool> {
        self.u.iter().map(|&x| x >= 0.0).collect()
    }
}

/// Per-pixel detector statistic plus the mask `statistic >= threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionMap {
    pub height: usize,
    pub width: usize,
    pub statistic: Vec<f64>,
    pub mask: Vec<bool>,
    pub threshold: f64,
}

impl DetectionMap {
    pub fn from_statistic(
        height: usize,
        width: usize,
        statistic: Vec<f64>,
        threshold: f64,
    ) -> Self {
        let mask = statistic.iter().map(|&s| s >= threshold).collect();
        Self {
            height,
            width,
            statistic,
            mask,
            threshold,
        }
    }

    pub fn rethreshold(&mut self, threshold: f64) {
        self.threshold = threshold;
        self.mask = self.statistic.iter().map(|&s| s >= threshold).collect();
    }
}

/// |A ∩ B| / |A ∪ B|; two empty masks score 1.
pub fn jaccard(a: &[bool], b: &[bool]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_invariants() {
        assert!(
            HyperCube::new(1, 1, 1, vec![1.0, 1.0], CubeKind::Radiance, vec![0.0, 0.0]).is_err()
        );
        assert!(HyperCube::new(1, 1, 1, vec![1.0], CubeKind::Radiance, vec![f64::NAN]).is_err());
        assert!(HyperCube::new(1, 1, 2, vec![1.0], CubeKind::Radiance, vec![0.0]).is_err());
        let c = HyperCube::new(
            2,
            1,
            2,
            vec![1.0, 2.0],
            CubeKind::Emissivity,
            (0..8).map(f64::from).collect(),
        )
        .unwrap();
        assert_eq!(c.spectrum(1, 0, 1), &[6.0, 7.0]);
        assert_eq!(c.sub_frames(1, 2).unwrap().data(), &[4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn normalize_rules() {
        assert_eq!(min_max_normalize(&[0.0, 10.0]), vec![0.0, 1.0]);
        assert_eq!(min_max_normalize(&[3.0, 3.0, 3.0]), vec![0.5; 3]);
    }

    #[test]
    fn labeling_rejects_out_of_range() {
        assert!(Labeling::new(1, 2, 2, vec![0, 2]).is_err());
        assert!(Labeling::new(1, 2, 0, vec![0, 0]).is_err());
    }

    #[test]
    fn jaccard_basics() {
        assert_eq!(jaccard(&[true, false], &[true, true]), 0.5);
        assert_eq!(jaccard(&[false], &[false]), 1.0);
    }
}
