//! Whole-video PCA over pixel spectra and false-color assembly.

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::jacobi_eigen;
use crate::types::{min_max_normalize, CubeKind, FalseColorVideo, HyperCube};

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    /// Zero vector when fitted without centering.
    pub mean: Vec<f64>,
    /// B×k, orthonormal columns in descending eigenvalue order.
    pub components: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub centered: bool,
    /// Set when the data had no variance at all; components are then an
    /// arbitrary fixed orthonormal set.
    pub degenerate: bool,
}

impl PcaModel {
    pub fn bands(&self) -> usize {
        self.mean.len()
    }

    pub fn k(&self) -> usize {
        self.components.ncols()
    }

    pub fn component(&self, j: usize) -> Vec<f64> {
        self.components.column(j).iter().copied().collect()
    }
}

/// Pixels per partial sum in the covariance reduction. Fixed so the
/// summation order, and hence the result, is independent of thread count.
const CHUNK_PIXELS: usize = 4096;

/// Second-moment matrix of `pixels` (each of length `bands`) about `mean`.
fn scatter_matrix(data: &[f64], bands: usize, mean: &[f64]) -> Vec<f64> {
    let partials: Vec<Vec<f64>> = data
        .par_chunks(CHUNK_PIXELS * bands)
        .map(|chunk| {
            let mut acc = vec![0.0; bands * bands];
            let mut centered = vec![0.0; bands];
            for px in chunk.chunks_exact(bands) {
                for (c, (x, m)) in centered.iter_mut().zip(px.iter().zip(mean)) {
                    *c = x - m;
                }
                for i in 0..bands {
                    let ci = centered[i];
                    let row = &mut acc[i * bands..=i * bands + i];
                    for (a, cj) in row.iter_mut().zip(&centered) {
                        *a += ci * cj;
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; bands * bands];
    for p in &partials {
        for (t, x) in total.iter_mut().zip(p) {
            *t += x;
        }
    }
    // Mirror the lower triangle.
    for i in 0..bands {
        for j in 0..i {
            total[j * bands + i] = total[i * bands + j];
        }
    }
    total
}

fn column_mean(data: &[f64], bands: usize) -> Vec<f64> {
    let n = data.len() / bands;
    let partials: Vec<Vec<f64>> = data
        .par_chunks(CHUNK_PIXELS * bands)
        .map(|chunk| {
            let mut acc = vec![0.0; bands];
            for px in chunk.chunks_exact(bands) {
                for (a, x) in acc.iter_mut().zip(px) {
                    *a += x;
                }
            }
            acc
        })
        .collect();
    let mut mean = vec![0.0; bands];
    for p in &partials {
        for (m, x) in mean.iter_mut().zip(p) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    mean
}

/// Fits PCA on all T·H·W pixel spectra of `cube`.
///
/// Centered mode uses the sample covariance `1/(n−1)·Σ(x−μ)(x−μ)ᵀ`.
/// Uncentered mode uses the raw second moment `1/n·Σ x xᵀ`.
pub fn fit_pca_with(cube: &HyperCube, k: usize, centered: bool) -> Result<PcaModel> {
    let bands = cube.bands();
    let n = cube.pixel_count();
    if k == 0 || k > bands {
        return Err(Error::invalid(format!("k = {k} must lie in 1..={bands}")));
    }
    if n < k {
        return Err(Error::invalid(format!(
            "{n} pixels cannot support {k} components"
        )));
    }
    let mean = if centered {
        column_mean(cube.data(), bands)
    } else {
        vec![0.0; bands]
    };
    let scatter = scatter_matrix(cube.data(), bands, &mean);
    let denom = if centered { (n - 1).max(1) } else { n } as f64;
    let cov = DMatrix::from_row_slice(bands, bands, &scatter) / denom;
    let eig = jacobi_eigen(&cov)?.into_descending();

    let components = eig.vectors.columns(0, k).clone_owned();
    let scale = cube.data().iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let degenerate = eig
        .values
        .iter()
        .all(|&v| v.abs() <= (1e-14 * scale).powi(2));
    let eigenvalues: Vec<f64> = eig.values[..k]
        .iter()
        .map(|&v| if degenerate || v < 0.0 { 0.0 } else { v })
        .collect();
    if degenerate {
        warn!("PCA input has zero variance; components are an arbitrary orthonormal set");
    }
    Ok(PcaModel {
        mean,
        components,
        eigenvalues,
        centered,
        degenerate,
    })
}

/// Centered PCA, the default mode.
pub fn fit_pca(cube: &HyperCube, k: usize) -> Result<PcaModel> {
    fit_pca_with(cube, k, true)
}

/// Scores `componentsᵀ(x − mean)` for every pixel, as a cube of kind `Scores`
/// whose "wavelengths" are the component ordinals 1..=k.
pub fn project(cube: &HyperCube, model: &PcaModel) -> Result<HyperCube> {
    let bands = cube.bands();
    if bands != model.bands() {
        return Err(Error::dims(format!(
            "model expects {} bands, cube has {bands}",
            model.bands()
        )));
    }
    let k = model.k();
    let rows: Vec<Vec<f64>> = (0..k).map(|j| model.component(j)).collect();
    let mut scores = vec![0.0; cube.pixel_count() * k];
    scores
        .par_chunks_mut(k)
        .zip(cube.data().par_chunks(bands))
        .for_each(|(out, px)| {
            for (o, row) in out.iter_mut().zip(&rows) {
                *o = row
                    .iter()
                    .zip(px.iter().zip(&model.mean))
                    .map(|(c, (x, m))| c * (x - m))
                    .sum();
            }
        });
    HyperCube::new(
        cube.frames(),
        cube.height(),
        cube.width(),
        (1..=k).map(|j| j as f64).collect(),
        CubeKind::Scores,
        scores,
    )
}

/// Three distinct 1-based component indices mapped to R, G, B.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComponentSelection(pub [usize; 3]);

impl Default for ComponentSelection {
    fn default() -> Self {
        ComponentSelection([1, 3, 5])
    }
}

impl ComponentSelection {
    pub fn new(indices: [usize; 3]) -> Result<Self> {
        let [a, b, c] = indices;
        if a == 0 || b == 0 || c == 0 {
            return Err(Error::invalid("component indices are 1-based"));
        }
        if a == b || b == c || a == c {
            return Err(Error::invalid(format!(
                "component indices {indices:?} must be distinct"
            )));
        }
        Ok(ComponentSelection(indices))
    }
}

/// Maps three score channels to RGB, each min-max normalized over the whole
/// video (not per frame). A constant channel becomes 0.5.
pub fn false_color(scores: &HyperCube, sel: ComponentSelection) -> Result<FalseColorVideo> {
    let k = scores.bands();
    if let Some(&bad) = sel.0.iter().find(|&&i| i > k) {
        return Err(Error::invalid(format!(
            "component {bad} requested but only {k} are available"
        )));
    }
    let n = scores.pixel_count();
    let channels: Vec<Vec<f64>> = sel
        .0
        .iter()
        .map(|&j| {
            let raw: Vec<f64> = (0..n).map(|p| scores.pixel(p)[j - 1]).collect();
            min_max_normalize(&raw)
        })
        .collect();
    let mut data = Vec::with_capacity(n * 3);
    for p in 0..n {
        for ch in &channels {
            data.push(ch[p]);
        }
    }
    FalseColorVideo::new(scores.frames(), scores.height(), scores.width(), data)
}
