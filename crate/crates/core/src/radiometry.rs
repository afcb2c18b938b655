//! Radiance to emissivity conversion through Planck's law, plus the median
//! filters used to clean conversion outliers and MBO initial masks.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{CubeKind, HyperCube};

/// Physical constants entering Planck's law (CODATA 2018, exact SI values).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanckParams {
    /// Planck constant, J·s.
    pub h: f64,
    /// Speed of light, m/s.
    pub c: f64,
    /// Boltzmann constant, J/K.
    pub k: f64,
}

impl Default for PlanckParams {
    fn default() -> Self {
        Self {
            h: 6.626_070_15e-34,
            c: 299_792_458.0,
            k: 1.380_649e-23,
        }
    }
}

/// Exponent above which the excitance is reported as exactly zero.
const EXP_SATURATION: f64 = 700.0;

impl PlanckParams {
    /// Spectral excitance 2hc²ν³ / (exp(hcν/kT) − 1) at wavenumber `nu` (m⁻¹).
    pub fn excitance(&self, nu: f64, temp: f64) -> Result<f64> {
        if !(nu > 0.0) || !nu.is_finite() {
            return Err(Error::domain(format!(
                "wavenumber must be positive, got {nu}"
            )));
        }
        if !(temp > 0.0) || !temp.is_finite() {
            return Err(Error::domain(format!(
                "temperature must be positive, got {temp}"
            )));
        }
        let x = self.h * self.c * nu / (self.k * temp);
        if x > EXP_SATURATION {
            return Ok(0.0);
        }
        Ok(2.0 * self.h * self.c * self.c * nu.powi(3) / x.exp_m1())
    }
}

pub fn planck_excitance(nu: f64, temp: f64) -> Result<f64> {
    PlanckParams::default().excitance(nu, temp)
}

/// ν = 1/λ with λ converted from nanometers to meters.
pub fn wavelength_nm_to_wavenumber(nm: f64) -> f64 {
    1.0 / (nm * 1e-9)
}

/// Blackbody excitance for every band of a wavelength table.
pub fn blackbody_spectrum(wavelengths_nm: &[f64], temp: f64) -> Result<Vec<f64>> {
    wavelengths_nm
        .iter()
        .map(|&w| planck_excitance(wavelength_nm_to_wavenumber(w), temp))
        .collect()
}

#[derive(Debug, Clone)]
pub struct EmissivityResult {
    pub cube: HyperCube,
    /// One flag per (t, h, w): some band fell outside [0, 1].
    pub outlier_mask: Vec<bool>,
}

impl EmissivityResult {
    pub fn outlier_count(&self) -> usize {
        self.outlier_mask.iter().filter(|&&m| m).count()
    }
}

/// Divides every spectrum by the blackbody curve at `t_assumed`.
pub fn radiance_to_emissivity(cube: &HyperCube, t_assumed: f64) -> Result<EmissivityResult> {
    if cube.kind() != CubeKind::Radiance {
        return Err(Error::invalid(format!(
            "expected a radiance cube, got {:?}",
            cube.kind()
        )));
    }
    let bb = blackbody_spectrum(cube.wavelengths(), t_assumed)?;
    if let Some(b) = bb.iter().position(|&x| x == 0.0) {
        return Err(Error::domain(format!(
            "blackbody excitance underflows at band {b} for T = {t_assumed} K"
        )));
    }
    let bands = cube.bands();
    let mut data = cube.data().to_vec();
    let outlier_mask: Vec<bool> = data
        .par_chunks_mut(bands.max(1))
        .map(|spec| {
            let mut outlier = false;
            for (x, b) in spec.iter_mut().zip(&bb) {
                *x /= b;
                outlier |= !(0.0..=1.0).contains(x);
            }
            outlier
        })
        .collect();
    let cube = HyperCube::new(
        cube.frames(),
        cube.height(),
        cube.width(),
        cube.wavelengths().to_vec(),
        CubeKind::Emissivity,
        data,
    )?;
    Ok(EmissivityResult { cube, outlier_mask })
}

/// Lower median: element `(len − 1) / 2` of the sorted values.
pub fn lower_median(values: &mut [f64]) -> f64 {
    let mid = (values.len() - 1) / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

/// Replaces each flagged spectrum by the per-band median of its 3×3
/// neighbourhood (replicate padding). Unflagged pixels are copied unchanged.
pub fn spectral_median_filter_3x3(res: &EmissivityResult) -> HyperCube {
    let src = &res.cube;
    let (t_n, h_n, w_n, b_n) = (src.frames(), src.height(), src.width(), src.bands());
    let mut data = src.data().to_vec();
    let frame_len = h_n * w_n * b_n;
    if frame_len == 0 {
        return src.clone();
    }
    data.par_chunks_mut(frame_len)
        .enumerate()
        .for_each(|(t, frame)| {
            let mut window = [0.0f64; 9];
            for h in 0..h_n {
                for w in 0..w_n {
                    if !res.outlier_mask[(t * h_n + h) * w_n + w] {
                        continue;
                    }
                    for b in 0..b_n {
                        let mut k = 0;
                        for dh in -1i64..=1 {
                            for dw in -1i64..=1 {
                                let hh = (h as i64 + dh).clamp(0, h_n as i64 - 1) as usize;
                                let ww = (w as i64 + dw).clamp(0, w_n as i64 - 1) as usize;
                                window[k] = src.get(t, hh, ww, b);
                                k += 1;
                            }
                        }
                        frame[(h * w_n + w) * b_n + b] = lower_median(&mut window);
                    }
                }
            }
        });
    HyperCube::new(
        t_n,
        h_n,
        w_n,
        src.wavelengths().to_vec(),
        CubeKind::Emissivity,
        data,
    )
    .expect("median of finite values is finite")
}

/// Square median filter of side `2·radius + 1` with replicate padding.
pub fn median_filter(img: &[f64], height: usize, width: usize, radius: usize) -> Vec<f64> {
    assert_eq!(
        img.len(),
        height * width,
        "image length must be height*width"
    );
    let r = radius as i64;
    let side = 2 * radius + 1;
    (0..height * width)
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(side * side),
            |window, i| {
                let (h, w) = ((i / width) as i64, (i % width) as i64);
                window.clear();
                for dh in -r..=r {
                    let hh = (h + dh).clamp(0, height as i64 - 1) as usize;
                    for dw in -r..=r {
                        let ww = (w + dw).clamp(0, width as i64 - 1) as usize;
                        window.push(img[hh * width + ww]);
                    }
                }
                lower_median(window)
            },
        )
        .collect()
}

pub fn median_filter_9x9(img: &[f64], height: usize, width: usize) -> Vec<f64> {
    median_filter(img, height, width, 4)
}
