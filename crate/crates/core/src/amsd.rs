//! Adaptive matched subspace detector.
//!
//! For a pixel `x`, target signatures `S_t` and background signatures `S_b`,
//! the statistic is
//!
//! ```text
//! T(x) = xᵀ(P_b⊥ − P_S⊥)x / xᵀP_S⊥x,      S = [S_t | S_b]
//! ```
//!
//! where `P⊥` is the orthogonal projector onto the complement of a span. It is
//! a ratio of quadratic forms, so `T(αx) = T(x)` for any `α ≠ 0`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dimred::fit_pca_with;
use crate::error::{Error, Result};
use crate::linalg::{orthonormal_basis, singular_values};
use crate::types::{DetectionMap, FeatureImage, HyperCube};

/// Orthogonal projector onto the column span of a matrix (or its complement).
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    pub matrix: DMatrix<f64>,
    pub complement: bool,
}

impl Projector {
    pub fn complement(&self) -> Projector {
        let n = self.matrix.nrows();
        Projector {
            matrix: DMatrix::identity(n, n) - &self.matrix,
            complement: !self.complement,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (&self.matrix * DVector::from_column_slice(x))
            .iter()
            .copied()
            .collect()
    }
}

/// `P = QQᵀ` with `Q` an orthonormal basis of the columns of `m`.
pub fn build_projector(m: &DMatrix<f64>) -> Result<Projector> {
    let q = orthonormal_basis(m)?;
    Ok(Projector {
        matrix: &q * q.transpose(),
        complement: false,
    })
}

#[derive(Debug, Clone)]
pub struct SubspaceModel {
    target: DMatrix<f64>,
    background: DMatrix<f64>,
    /// Detection threshold `l0`.
    pub threshold: f64,
    basis_background: DMatrix<f64>,
    basis_full: DMatrix<f64>,
}

impl SubspaceModel {
    pub fn new(target: DMatrix<f64>, background: DMatrix<f64>, threshold: f64) -> Result<Self> {
        let bands = target.nrows();
        if background.nrows() != bands {
            return Err(Error::dims(format!(
                "target has {bands} bands, background has {}",
                background.nrows()
            )));
        }
        let (pt, pb) = (target.ncols(), background.ncols());
        if pt == 0 || pb == 0 {
            return Err(Error::invalid(
                "need at least one target and one background signature",
            ));
        }
        if pt + pb >= bands {
            return Err(Error::invalid(format!(
                "{pt} target + {pb} background signatures must be fewer than {bands} bands"
            )));
        }
        let mut full = DMatrix::zeros(bands, pt + pb);
        full.columns_mut(0, pt).copy_from(&target);
        full.columns_mut(pt, pb).copy_from(&background);
        let sv = singular_values(&full)?;
        let (largest, smallest) = (sv[0], sv[sv.len() - 1]);
        if !(smallest > 1e-10 * largest) {
            return Err(Error::invalid(format!(
                "signature columns are not linearly independent (singular values {largest:e} .. {smallest:e})"
            )));
        }
        let basis_background = orthonormal_basis(&background)?;
        let basis_full = orthonormal_basis(&full)?;
        Ok(Self {
            target,
            background,
            threshold,
            basis_background,
            basis_full,
        })
    }

    /// Single target spectrum as `S_t`.
    pub fn from_signature(
        signature: &[f64],
        background: DMatrix<f64>,
        threshold: f64,
    ) -> Result<Self> {
        Self::new(
            DMatrix::from_column_slice(signature.len(), 1, signature),
            background,
            threshold,
        )
    }

    pub fn bands(&self) -> usize {
        self.target.nrows()
    }
    pub fn target(&self) -> &DMatrix<f64> {
        &self.target
    }
    pub fn background(&self) -> &DMatrix<f64> {
        &self.background
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }
}

/// ‖x − QQᵀx‖².
fn residual_energy(q: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    let coef = q.tr_mul(x);
    (x - q * coef).norm_squared()
}

pub fn amsd_statistic(x: &[f64], model: &SubspaceModel) -> Result<f64> {
    if x.len() != model.bands() {
        return Err(Error::dims(format!(
            "pixel has {} bands, model has {}",
            x.len(),
            model.bands()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("pixel contains non-finite values"));
    }
    let xv = DVector::from_column_slice(x);
    let energy = xv.norm_squared();
    if energy == 0.0 {
        return Err(Error::invalid("pixel spectrum is identically zero"));
    }
    let rb = residual_energy(&model.basis_background, &xv);
    let rs = residual_energy(&model.basis_full, &xv);
    let mut num = rb - rs;
    if num < 0.0 {
        if num < -1e-12 * energy {
            return Err(Error::domain(format!(
                "negative numerator {num:e}: background span not contained in full span"
            )));
        }
        num = 0.0;
    }
    if rs < 1e-30 * energy {
        return Ok(f64::INFINITY);
    }
    Ok(num / rs)
}

/// Evaluates the statistic on every pixel; `mask = statistic ≥ threshold`.
pub fn detect(frame: &FeatureImage, model: &SubspaceModel) -> Result<DetectionMap> {
    if frame.dim != model.bands() {
        return Err(Error::dims(format!(
            "frame has {} bands, model has {}",
            frame.dim,
            model.bands()
        )));
    }
    let statistic = (0..frame.len())
        .into_par_iter()
        .map(|i| amsd_statistic(frame.pixel(i), model))
        .collect::<Result<Vec<f64>>>()?;
    Ok(DetectionMap::from_statistic(
        frame.height,
        frame.width,
        statistic,
        model.threshold,
    ))
}

/// Top `p_b` uncentered principal directions of the pooled pre-release spectra.
pub fn estimate_background(pre_release: &HyperCube, p_b: usize) -> Result<DMatrix<f64>> {
    if pre_release.frames() == 0 {
        return Err(Error::invalid("need at least one pre-release frame"));
    }
    if p_b == 0 || p_b >= pre_release.bands() {
        return Err(Error::invalid(format!(
            "p_b = {p_b} must lie in 1..{}",
            pre_release.bands()
        )));
    }
    Ok(fit_pca_with(pre_release, p_b, false)?.components)
}
