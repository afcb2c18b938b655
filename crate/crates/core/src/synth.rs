//! Synthetic LWIR hyperspectral videos with a dispersing plume and ground truth.
//!
//! Each pixel belongs to one background region with a fixed temperature and an
//! emissivity spectrum. A Gaussian plume released at `release_frame` mixes its
//! signature into the background emissivity linearly by concentration. Radiance
//! is emissivity times the blackbody curve of the region temperature plus
//! Gaussian noise.
//!
//! All randomness comes from ChaCha streams keyed by pixel, so output does not
//! depend on evaluation order or thread count.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::config::{parse_list, KvConfig};
use crate::error::{Error, Result};
use crate::radiometry::blackbody_spectrum;
use crate::types::{CubeKind, HyperCube};

/// Emissivity as a function of wavelength (nm).
#[derive(Debug, Clone, PartialEq)]
pub enum SpectrumShape {
    Flat(f64),
    /// `mean + amplitude·sin(2π(λ − λ₀)/period + phase)` with λ₀ the first band.
    Sinusoid {
        mean: f64,
        amplitude: f64,
        period_nm: f64,
        phase: f64,
    },
    /// Gaussian emission feature on a flat baseline.
    Feature {
        baseline: f64,
        peak: f64,
        center_nm: f64,
        width_nm: f64,
    },
    Table(Vec<f64>),
}

impl SpectrumShape {
    pub fn sample(&self, wavelengths: &[f64]) -> Result<Vec<f64>> {
        let w0 = wavelengths.first().copied().unwrap_or(0.0);
        let v: Vec<f64> = match self {
            SpectrumShape::Flat(v) => vec![*v; wavelengths.len()],
            SpectrumShape::Sinusoid {
                mean,
                amplitude,
                period_nm,
                phase,
            } => wavelengths
                .iter()
                .map(|w| mean + amplitude * (2.0 * PI * (w - w0) / period_nm + phase).sin())
                .collect(),
            SpectrumShape::Feature {
                baseline,
                peak,
                center_nm,
                width_nm,
            } => wavelengths
                .iter()
                .map(|w| baseline + peak * (-0.5 * ((w - center_nm) / width_nm).powi(2)).exp())
                .collect(),
            SpectrumShape::Table(t) => {
                if t.len() != wavelengths.len() {
                    return Err(Error::dims(format!(
                        "spectrum table has {} entries for {} bands",
                        t.len(),
                        wavelengths.len()
                    )));
                }
                t.clone()
            }
        };
        if let Some(i) = v.iter().position(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::invalid(format!(
                "emissivity {} at band {i} is outside [0, 1]",
                v[i]
            )));
        }
        Ok(v)
    }

    /// Text form used in configs: `flat:v`, `sin:mean,amp,period,phase`,
    /// `feature:baseline,peak,center,width`, `table:v1,v2,...`.
    pub fn parse(s: &str) -> Result<Self> {
        let (tag, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("spectrum {s:?} lacks a `kind:` prefix")))?;
        let nums: Vec<f64> = parse_list(rest)
            .ok_or_else(|| Error::invalid(format!("spectrum {s:?} has a bad number")))?;
        let need = |n: usize| -> Result<()> {
            if nums.len() == n {
                Ok(())
            } else {
                Err(Error::invalid(format!("spectrum {s:?} needs {n} numbers")))
            }
        };
        Ok(match tag.trim() {
            "flat" => {
                need(1)?;
                SpectrumShape::Flat(nums[0])
            }
            "sin" => {
                need(4)?;
                SpectrumShape::Sinusoid {
                    mean: nums[0],
                    amplitude: nums[1],
                    period_nm: nums[2],
                    phase: nums[3],
                }
            }
            "feature" => {
                need(4)?;
                SpectrumShape::Feature {
                    baseline: nums[0],
                    peak: nums[1],
                    center_nm: nums[2],
                    width_nm: nums[3],
                }
            }
            "table" => SpectrumShape::Table(nums),
            other => return Err(Error::invalid(format!("unknown spectrum kind {other:?}"))),
        })
    }
}

/// One background region: polygon in pixel coordinates (x = column, y = row).
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub name: String,
    pub polygon: Vec<(f64, f64)>,
    pub temperature: f64,
    pub emissivity: SpectrumShape,
    /// Std of a static per-pixel additive emissivity offset (all bands).
    pub texture_std: f64,
    /// Fraction of pixels replaced by a bright, near-black-body material.
    pub speckle_fraction: f64,
    pub speckle_emissivity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlumeSpec {
    pub release_frame: usize,
    /// Center (row, col) at the release frame.
    pub center: (f64, f64),
    /// Center displacement (rows, cols) per frame.
    pub velocity: (f64, f64),
    /// Gaussian spread in pixels at release.
    pub sigma: f64,
    /// Spread increase per frame.
    pub sigma_growth: f64,
    pub peak_concentration: f64,
    /// Exponential decay rate of the peak concentration per frame.
    pub decay_rate: f64,
    /// Relative puffing amplitude: the peak is scaled by `1 + a` on even
    /// frames after release and `1 − a` on odd ones.
    pub pulsation: f64,
    pub signature: SpectrumShape,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub wavelength_start_nm: f64,
    pub wavelength_step_nm: f64,
    pub regions: Vec<Region>,
    pub plume: Option<PlumeSpec>,
    /// Gaussian noise std in radiance units, identical for every band.
    pub noise_std: f64,
    /// Ground truth marks concentration ≥ `mask_cutoff`·(frame peak).
    pub mask_cutoff: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub height: usize,
    pub width: usize,
    /// One H·W mask per frame.
    pub masks: Vec<Vec<bool>>,
    pub signature: Vec<f64>,
    pub release_frame: Option<usize>,
}

impl GroundTruth {
    pub fn plume_pixels(&self, t: usize) -> usize {
        self.masks[t].iter().filter(|&&m| m).count()
    }
}

/// Stream ids: noise streams use the video pixel index, texture streams are
/// offset far above any realistic pixel count.
const TEXTURE_STREAM_BASE: u64 = 1 << 48;

fn point_in_polygon(x: f64, y: f64, poly: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

impl SceneSpec {
    /// Desk-scale default: 40 frames of 32×64 pixels, 32 bands from 7830 nm
    /// in 30 nm steps; sky, mountains and desert foreground; plume released
    /// at frame 5 over the foreground.
    pub fn desk_default() -> Self {
        let (h, w) = (32usize, 64usize);
        let (wf, hf) = (w as f64, h as f64);
        let ridge = [
            (wf, 9.0),
            (48.0, 6.0),
            (34.0, 10.0),
            (20.0, 7.0),
            (0.0, 11.0),
        ];
        let mut sky = vec![(0.0, 0.0), (wf, 0.0)];
        sky.extend(ridge);
        let mut mountains: Vec<(f64, f64)> = ridge.iter().rev().copied().collect();
        mountains.extend([(wf, 17.0), (0.0, 19.0)]);
        let foreground = vec![(0.0, 19.0), (wf, 17.0), (wf, hf), (0.0, hf)];
        SceneSpec {
            frames: 40,
            height: h,
            width: w,
            bands: 32,
            wavelength_start_nm: 7830.0,
            wavelength_step_nm: 30.0,
            regions: vec![
                Region {
                    name: "sky".into(),
                    polygon: sky,
                    temperature: 255.0,
                    emissivity: SpectrumShape::Sinusoid {
                        mean: 0.45,
                        amplitude: 0.1,
                        period_nm: 900.0,
                        phase: 0.0,
                    },
                    texture_std: 0.003,
                    speckle_fraction: 0.0,
                    speckle_emissivity: 1.0,
                },
                Region {
                    name: "mountains".into(),
                    polygon: mountains,
                    temperature: 285.0,
                    emissivity: SpectrumShape::Sinusoid {
                        mean: 0.86,
                        amplitude: 0.04,
                        period_nm: 1500.0,
                        phase: 1.0,
                    },
                    texture_std: 0.005,
                    speckle_fraction: 0.0,
                    speckle_emissivity: 1.0,
                },
                Region {
                    name: "foreground".into(),
                    polygon: foreground,
                    temperature: 303.0,
                    emissivity: SpectrumShape::Sinusoid {
                        mean: 0.88,
                        amplitude: 0.02,
                        period_nm: 700.0,
                        phase: 2.0,
                    },
                    texture_std: 0.006,
                    speckle_fraction: 0.03,
                    speckle_emissivity: 0.99,
                },
            ],
            plume: Some(PlumeSpec {
                release_frame: 5,
                center: (22.0, 20.0),
                velocity: (-0.15, 0.35),
                sigma: 3.5,
                sigma_growth: 0.01,
                peak_concentration: 0.75,
                decay_rate: 0.03,
                pulsation: 0.2,
                signature: SpectrumShape::Feature {
                    baseline: 0.25,
                    peak: 0.7,
                    center_nm: 8300.0,
                    width_nm: 120.0,
                },
            }),
            noise_std: 6e-7,
            mask_cutoff: 0.1,
            seed: 7,
        }
    }

    /// Single region covering the frame; no plume, no noise.
    pub fn uniform(
        frames: usize,
        height: usize,
        width: usize,
        bands: usize,
        temperature: f64,
        emissivity: SpectrumShape,
    ) -> Self {
        let (wf, hf) = (width as f64, height as f64);
        SceneSpec {
            frames,
            height,
            width,
            bands,
            wavelength_start_nm: 7830.0,
            wavelength_step_nm: 30.0,
            regions: vec![Region {
                name: "uniform".into(),
                polygon: vec![(0.0, 0.0), (wf, 0.0), (wf, hf), (0.0, hf)],
                temperature,
                emissivity,
                texture_std: 0.0,
                speckle_fraction: 0.0,
                speckle_emissivity: 1.0,
            }],
            plume: None,
            noise_std: 0.0,
            mask_cutoff: 0.1,
            seed: 0,
        }
    }

    pub fn wavelengths(&self) -> Vec<f64> {
        (0..self.bands)
            .map(|b| self.wavelength_start_nm + self.wavelength_step_nm * b as f64)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.height == 0 || self.width == 0 || self.bands == 0 {
            return Err(Error::invalid(format!(
                "degenerate scene dimensions {}x{}x{}x{}",
                self.frames, self.height, self.width, self.bands
            )));
        }
        if !(self.wavelength_start_nm > 0.0) || !(self.wavelength_step_nm > 0.0) {
            return Err(Error::invalid("wavelength start and step must be positive"));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::invalid("noise std must be non-negative"));
        }
        if !(self.mask_cutoff > 0.0 && self.mask_cutoff <= 1.0) {
            return Err(Error::invalid("mask cutoff must lie in (0, 1]"));
        }
        if self.regions.is_empty() {
            return Err(Error::invalid("scene needs at least one region"));
        }
        let wl = self.wavelengths();
        for r in &self.regions {
            if r.polygon.len() < 3 {
                return Err(Error::invalid(format!(
                    "region {} polygon needs 3+ vertices",
                    r.name
                )));
            }
            if !(r.temperature > 0.0) {
                return Err(Error::invalid(format!(
                    "region {} temperature must be positive",
                    r.name
                )));
            }
            if !(r.texture_std >= 0.0)
                || !(0.0..=1.0).contains(&r.speckle_fraction)
                || !(0.0..=1.0).contains(&r.speckle_emissivity)
            {
                return Err(Error::invalid(format!(
                    "region {} texture parameters invalid",
                    r.name
                )));
            }
            r.emissivity.sample(&wl)?;
        }
        if let Some(p) = &self.plume {
            if p.release_frame >= self.frames {
                return Err(Error::invalid(format!(
                    "plume release frame {} is not before T = {}",
                    p.release_frame, self.frames
                )));
            }
            if !(p.peak_concentration >= 0.0 && p.peak_concentration * (1.0 + p.pulsation) <= 1.0) {
                return Err(Error::invalid(
                    "plume peak concentration (including pulsation) must lie in [0, 1]",
                ));
            }
            if !(p.sigma > 0.0)
                || !(p.sigma_growth >= 0.0)
                || !(p.decay_rate >= 0.0)
                || !(0.0..1.0).contains(&p.pulsation)
            {
                return Err(Error::invalid(
                    "plume spread and decay must be non-negative and pulsation in [0, 1)",
                ));
            }
            p.signature.sample(&wl)?;
        }
        self.region_map()?;
        Ok(())
    }

    /// Region index of every pixel (row-major). Errors unless the polygons
    /// partition the frame.
    pub fn region_map(&self) -> Result<Vec<usize>> {
        let mut map = Vec::with_capacity(self.height * self.width);
        for h in 0..self.height {
            for w in 0..self.width {
                let (x, y) = (w as f64 + 0.5, h as f64 + 0.5);
                let hits: Vec<usize> = self
                    .regions
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| point_in_polygon(x, y, &r.polygon))
                    .map(|(i, _)| i)
                    .collect();
                if hits.len() != 1 {
                    return Err(Error::invalid(format!(
                        "pixel ({h}, {w}) lies in {} regions; masks must partition the frame",
                        hits.len()
                    )));
                }
                map.push(hits[0]);
            }
        }
        Ok(map)
    }

    /// Peak plume concentration in frame `t` (zero before release).
    pub fn peak_concentration(&self, t: usize) -> f64 {
        match &self.plume {
            Some(p) if t >= p.release_frame => {
                let dt = t - p.release_frame;
                let pulse = if dt.is_multiple_of(2) {
                    1.0 + p.pulsation
                } else {
                    1.0 - p.pulsation
                };
                p.peak_concentration * pulse * (-p.decay_rate * dt as f64).exp()
            }
            _ => 0.0,
        }
    }

    pub fn concentration(&self, t: usize, h: usize, w: usize) -> f64 {
        let Some(p) = &self.plume else { return 0.0 };
        if t < p.release_frame {
            return 0.0;
        }
        let dt = (t - p.release_frame) as f64;
        let (cy, cx) = (
            p.center.0 + p.velocity.0 * dt,
            p.center.1 + p.velocity.1 * dt,
        );
        let sigma = p.sigma + p.sigma_growth * dt;
        let r2 = (h as f64 - cy).powi(2) + (w as f64 - cx).powi(2);
        self.peak_concentration(t) * (-0.5 * r2 / (sigma * sigma)).exp()
    }

    fn texture_rng(&self, h: usize, w: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(TEXTURE_STREAM_BASE + (h * self.width + w) as u64);
        rng
    }

    /// Static (frame-independent) background emissivity of pixel (h, w).
    fn background_emissivity(&self, region: &Region, base: &[f64], h: usize, w: usize) -> Vec<f64> {
        if region.texture_std == 0.0 && region.speckle_fraction == 0.0 {
            return base.to_vec();
        }
        let mut rng = self.texture_rng(h, w);
        let offset: f64 = rng.sample::<f64, _>(StandardNormal) * region.texture_std;
        let u: f64 = rng.random();
        if u < region.speckle_fraction {
            return vec![region.speckle_emissivity; base.len()];
        }
        base.iter().map(|e| (e + offset).clamp(0.0, 1.0)).collect()
    }

    /// Noise-free emissivity spectrum of pixel (h, w) in frame `t`.
    pub fn emissivity(&self, t: usize, h: usize, w: usize) -> Result<Vec<f64>> {
        let map = self.region_map()?;
        let tables = self.tables()?;
        Ok(self.emissivity_with(&tables, map[h * self.width + w], t, h, w))
    }

    fn emissivity_with(
        &self,
        tables: &Tables,
        region: usize,
        t: usize,
        h: usize,
        w: usize,
    ) -> Vec<f64> {
        let mut eps = self.background_emissivity(&self.regions[region], &tables.base[region], h, w);
        let c = self.concentration(t, h, w);
        if c > 0.0 {
            for (e, s) in eps.iter_mut().zip(&tables.signature) {
                *e = (1.0 - c) * *e + c * s;
            }
        }
        eps
    }

    /// Noise-free radiance spectrum of pixel (h, w) in frame `t`.
    pub fn noise_free_radiance(&self, t: usize, h: usize, w: usize) -> Result<Vec<f64>> {
        let map = self.region_map()?;
        let tables = self.tables()?;
        let r = map[h * self.width + w];
        Ok(self
            .emissivity_with(&tables, r, t, h, w)
            .iter()
            .zip(&tables.blackbody[r])
            .map(|(e, b)| e * b)
            .collect())
    }

    fn tables(&self) -> Result<Tables> {
        let wl = self.wavelengths();
        let base = self
            .regions
            .iter()
            .map(|r| r.emissivity.sample(&wl))
            .collect::<Result<Vec<_>>>()?;
        let blackbody = self
            .regions
            .iter()
            .map(|r| blackbody_spectrum(&wl, r.temperature))
            .collect::<Result<Vec<_>>>()?;
        let signature = match &self.plume {
            Some(p) => p.signature.sample(&wl)?,
            None => vec![0.0; wl.len()],
        };
        Ok(Tables {
            base,
            blackbody,
            signature,
        })
    }

    /// Applies `key = value` overrides (see README for the key list).
    pub fn apply_config(&mut self, cfg: &mut KvConfig) -> Result<()> {
        macro_rules! set {
            ($field:expr, $key:expr) => {
                if let Some(v) = cfg.take($key)? {
                    $field = v;
                }
            };
        }
        set!(self.frames, "frames");
        set!(self.height, "height");
        set!(self.width, "width");
        set!(self.bands, "bands");
        set!(self.wavelength_start_nm, "wavelength_start_nm");
        set!(self.wavelength_step_nm, "wavelength_step_nm");
        set!(self.noise_std, "noise_std");
        set!(self.mask_cutoff, "mask_cutoff");
        set!(self.seed, "seed");

        let mut indices = Vec::new();
        for key in cfg.keys_with_prefix("region.") {
            let idx = key["region.".len()..]
                .split('.')
                .next()
                .and_then(|s| s.parse::<usize>().ok())
                .ok_or_else(|| Error::invalid(format!("bad region key `{key}`")))?;
            indices.push(idx);
        }
        indices.sort_unstable();
        indices.dedup();
        for idx in indices {
            let prefix = format!("region.{idx}.");
            if idx == self.regions.len() {
                let required = ["polygon", "temperature", "emissivity"];
                for r in required {
                    if !cfg.contains(&format!("{prefix}{r}")) {
                        return Err(Error::invalid(format!(
                            "new region {idx} needs `{prefix}{r}`"
                        )));
                    }
                }
                self.regions.push(Region {
                    name: format!("region{idx}"),
                    polygon: Vec::new(),
                    temperature: 300.0,
                    emissivity: SpectrumShape::Flat(1.0),
                    texture_std: 0.0,
                    speckle_fraction: 0.0,
                    speckle_emissivity: 1.0,
                });
            } else if idx > self.regions.len() {
                return Err(Error::invalid(format!(
                    "region indices must be contiguous; got {idx}"
                )));
            }
            let r = &mut self.regions[idx];
            if let Some(v) = cfg.take_str(&format!("{prefix}name")) {
                r.name = v;
            }
            if let Some(v) = cfg.take_str(&format!("{prefix}polygon")) {
                r.polygon = parse_polygon(&v)?;
            }
            set!(r.temperature, &format!("{prefix}temperature"));
            if let Some(v) = cfg.take_str(&format!("{prefix}emissivity")) {
                r.emissivity = SpectrumShape::parse(&v)?;
            }
            set!(r.texture_std, &format!("{prefix}texture_std"));
            set!(r.speckle_fraction, &format!("{prefix}speckle_fraction"));
            set!(r.speckle_emissivity, &format!("{prefix}speckle_emissivity"));
        }
        if let Some(n) = cfg.take::<usize>("region_count")? {
            if n == 0 || n > self.regions.len() {
                return Err(Error::invalid(format!("region_count {n} out of range")));
            }
            self.regions.truncate(n);
        }

        if cfg.take_str("plume").as_deref() == Some("none") {
            self.plume = None;
        }
        if !cfg.keys_with_prefix("plume.").is_empty() {
            let p = self.plume.get_or_insert_with(|| {
                SceneSpec::desk_default()
                    .plume
                    .expect("default scene has a plume")
            });
            set!(p.release_frame, "plume.release_frame");
            set!(p.center.0, "plume.row");
            set!(p.center.1, "plume.col");
            set!(p.velocity.0, "plume.row_velocity");
            set!(p.velocity.1, "plume.col_velocity");
            set!(p.sigma, "plume.sigma");
            set!(p.sigma_growth, "plume.sigma_growth");
            set!(p.peak_concentration, "plume.peak");
            set!(p.decay_rate, "plume.decay");
            set!(p.pulsation, "plume.pulsation");
            if let Some(v) = cfg.take_str("plume.signature") {
                p.signature = SpectrumShape::parse(&v)?;
            }
        }
        Ok(())
    }
}

fn parse_polygon(s: &str) -> Result<Vec<(f64, f64)>> {
    s.split(';')
        .map(|pt| {
            let v: Vec<f64> = parse_list(pt)
                .ok_or_else(|| Error::invalid(format!("bad polygon vertex {pt:?}")))?;
            match v.as_slice() {
                [x, y] => Ok((*x, *y)),
                _ => Err(Error::invalid(format!("polygon vertex {pt:?} needs `x,y`"))),
            }
        })
        .collect()
}

struct Tables {
    base: Vec<Vec<f64>>,
    blackbody: Vec<Vec<f64>>,
    signature: Vec<f64>,
}

/// Renders the scene. Deterministic in `spec` (including its seed).
pub fn generate(spec: &SceneSpec) -> Result<(HyperCube, GroundTruth)> {
    spec.validate()?;
    let map = spec.region_map()?;
    let tables = spec.tables()?;
    let (t_n, h_n, w_n, b_n) = (spec.frames, spec.height, spec.width, spec.bands);
    let hw = h_n * w_n;
    let mut data = vec![0.0; t_n * hw * b_n];
    data.par_chunks_mut(b_n).enumerate().for_each(|(p, out)| {
        let t = p / hw;
        let (h, w) = ((p % hw) / w_n, p % w_n);
        let r = map[h * w_n + w];
        let eps = spec.emissivity_with(&tables, r, t, h, w);
        for ((o, e), bb) in out.iter_mut().zip(&eps).zip(&tables.blackbody[r]) {
            *o = e * bb;
        }
        if spec.noise_std > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(p as u64);
            for o in out.iter_mut() {
                *o += spec.noise_std * rng.sample::<f64, _>(StandardNormal);
            }
        }
    });
    let cube = HyperCube::new(t_n, h_n, w_n, spec.wavelengths(), CubeKind::Radiance, data)?;

    let masks = (0..t_n)
        .map(|t| {
            let peak = spec.peak_concentration(t);
            (0..hw)
                .map(|i| {
                    peak > 0.0 && spec.concentration(t, i / w_n, i % w_n) >= spec.mask_cutoff * peak
                })
                .collect()
        })
        .collect();
    let truth = GroundTruth {
        height: h_n,
        width: w_n,
        masks,
        signature: tables.signature.clone(),
        release_frame: spec.plume.as_ref().map(|p| p.release_frame),
    };
    Ok((cube, truth))
}
