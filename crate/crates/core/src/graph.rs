//! Pixel similarity graphs, the symmetric normalized Laplacian and its
//! eigenpairs (dense or Nyström).

use std::fmt;
use std::str::FromStr;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{fix_sign, max_asymmetry, tridiagonal_ql_eigen};
use crate::types::FeatureImage;

/// Number of blocks in a 3×3 neighbourhood feature vector.
pub const NEIGHBOURHOOD: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Cosine,
    Euclidean,
    /// Spectral angle within each of the nine blocks, 2-norm across blocks.
    ModifiedCosine,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" | "cos" => Ok(Metric::Cosine),
            "euclidean" | "euc" => Ok(Metric::Euclidean),
            "modified-cosine" | "mcos" => Ok(Metric::ModifiedCosine),
            _ => Err(Error::invalid(format!(
                "unknown metric {s:?} (expected cosine, euclidean or mcos)"
            ))),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Cosine => "cosine",
            Metric::Euclidean => "euclidean",
            Metric::ModifiedCosine => "mcos",
        })
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn unit(x: &[f64]) -> Option<Vec<f64>> {
    let n = norm(x);
    (n > 0.0 && n.is_finite()).then(|| x.iter().map(|v| v / n).collect())
}

/// `1 − cos∠(x, y)` from unit vectors, computed as `‖x̂ − ŷ‖²/2`.
fn angle_distance(xu: &[f64], yu: &[f64]) -> f64 {
    (0.5 * sq_dist(xu, yu)).clamp(0.0, 2.0)
}

fn check_dims(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::dims(format!(
            "vectors of length {} and {}",
            x.len(),
            y.len()
        )));
    }
    Ok(())
}

pub fn cosine_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    check_dims(x, y)?;
    let xu = unit(x).ok_or_else(|| Error::domain("cosine distance of a zero vector"))?;
    let yu = unit(y).ok_or_else(|| Error::domain("cosine distance of a zero vector"))?;
    Ok(angle_distance(&xu, &yu))
}

pub fn euclidean_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    check_dims(x, y)?;
    Ok(sq_dist(x, y).sqrt())
}

/// `x` and `y` are nine concatenated blocks of equal length.
pub fn modified_cosine_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    check_dims(x, y)?;
    if x.is_empty() || !x.len().is_multiple_of(NEIGHBOURHOOD) {
        return Err(Error::dims(format!(
            "feature length {} is not a positive multiple of {NEIGHBOURHOOD}",
            x.len()
        )));
    }
    let b = x.len() / NEIGHBOURHOOD;
    let mut acc = 0.0;
    for (xb, yb) in x.chunks_exact(b).zip(y.chunks_exact(b)) {
        let d = cosine_distance(xb, yb)
            .map_err(|_| Error::domain("modified cosine distance with a zero block"))?;
        acc += d * d;
    }
    Ok(acc.sqrt())
}

pub fn distance(metric: Metric, x: &[f64], y: &[f64]) -> Result<f64> {
    match metric {
        Metric::Cosine => cosine_distance(x, y),
        Metric::Euclidean => euclidean_distance(x, y),
        Metric::ModifiedCosine => modified_cosine_distance(x, y),
    }
}

/// Features pre-normalized for fast repeated distance evaluation.
pub(crate) struct Prepared {
    metric: Metric,
    dim: usize,
    data: Vec<f64>,
}

impl Prepared {
    pub(crate) fn new(f: &FeatureImage, metric: Metric) -> Result<Self> {
        let dim = f.dim;
        let block = match metric {
            Metric::Euclidean => {
                return Ok(Self {
                    metric,
                    dim,
                    data: f.data.clone(),
                })
            }
            Metric::Cosine => dim,
            Metric::ModifiedCosine => {
                if !dim.is_multiple_of(NEIGHBOURHOOD) {
                    return Err(Error::dims(format!(
                        "modified cosine needs 9-block features, got dimension {dim}"
                    )));
                }
                dim / NEIGHBOURHOOD
            }
        };
        let mut data = Vec::with_capacity(f.data.len());
        for i in 0..f.len() {
            for blk in f.pixel(i).chunks_exact(block) {
                let u = unit(blk).ok_or_else(|| {
                    Error::domain(format!("pixel {i} has a zero spectrum (metric {metric})"))
                })?;
                data.extend(u);
            }
        }
        Ok(Self { metric, dim, data })
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub(crate) fn sq_distance(&self, i: usize, j: usize) -> f64 {
        let (x, y) = (self.row(i), self.row(j));
        match self.metric {
            Metric::Euclidean => sq_dist(x, y),
            Metric::Cosine => angle_distance(x, y).powi(2),
            Metric::ModifiedCosine => {
                let b = self.dim / NEIGHBOURHOOD;
                x.chunks_exact(b)
                    .zip(y.chunks_exact(b))
                    .map(|(a, c)| angle_distance(a, c).powi(2))
                    .sum()
            }
        }
    }

    pub(crate) fn similarity(&self, i: usize, j: usize, sigma: f64) -> f64 {
        if i == j {
            return 1.0;
        }
        (-self.sq_distance(i, j) / (sigma * sigma)).exp()
    }
}

/// Concatenates every pixel's 3×3 neighbourhood (NW, N, NE, W, C, E, SW, S,
/// SE) with replicate padding.
pub fn build_features(frame: &FeatureImage) -> FeatureImage {
    let (h_n, w_n, b) = (frame.height, frame.width, frame.dim);
    let mut data = Vec::with_capacity(h_n * w_n * NEIGHBOURHOOD * b);
    for h in 0..h_n {
        for w in 0..w_n {
            for dh in -1i64..=1 {
                for dw in -1i64..=1 {
                    let hh = (h as i64 + dh).clamp(0, h_n as i64 - 1) as usize;
                    let ww = (w as i64 + dw).clamp(0, w_n as i64 - 1) as usize;
                    data.extend_from_slice(frame.pixel_at(hh, ww));
                }
            }
        }
    }
    FeatureImage {
        height: h_n,
        width: w_n,
        dim: NEIGHBOURHOOD * b,
        data,
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!(
            "sigma must be positive and finite, got {sigma}"
        )));
    }
    Ok(())
}

/// Dense Gaussian similarity graph with unit diagonal.
#[derive(Debug, Clone)]
pub struct WeightedGraph {
    pub weights: DMatrix<f64>,
    pub degrees: Vec<f64>,
}

impl WeightedGraph {
    /// Validates symmetry, range and degrees of a given weight matrix.
    pub fn from_weights(weights: DMatrix<f64>) -> Result<Self> {
        if weights.nrows() != weights.ncols() {
            return Err(Error::dims("weight matrix is not square"));
        }
        let asym = max_asymmetry(&weights);
        if asym > 0.0 {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::invalid("weights must lie in [0, 1]"));
        }
        let degrees: Vec<f64> = weights.row_iter().map(|r| r.sum()).collect();
        if let Some((node, &degree)) = degrees.iter().enumerate().find(|(_, d)| **d <= 0.0) {
            return Err(Error::NonPositiveDegree { node, degree });
        }
        Ok(Self { weights, degrees })
    }

    pub fn nodes(&self) -> usize {
        self.degrees.len()
    }
}

pub fn build_graph(f: &FeatureImage, metric: Metric, sigma: f64) -> Result<WeightedGraph> {
    check_sigma(sigma)?;
    let prep = Prepared::new(f, metric)?;
    let n = f.len();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i + 1..n).map(|j| prep.similarity(i, j, sigma)).collect())
        .collect();
    let mut weights = DMatrix::identity(n, n);
    for (i, row) in upper.iter().enumerate() {
        for (off, &s) in row.iter().enumerate() {
            let j = i + 1 + off;
            weights[(i, j)] = s;
            weights[(j, i)] = s;
        }
    }
    let degrees: Vec<f64> = weights.row_iter().map(|r| r.sum()).collect();
    Ok(WeightedGraph { weights, degrees })
}

/// `L_s = I − D^{-1/2} S D^{-1/2}`.
pub fn symmetric_laplacian(g: &WeightedGraph) -> Result<DMatrix<f64>> {
    if let Some((node, &degree)) = g.degrees.iter().enumerate().find(|(_, d)| !(**d > 0.0)) {
        return Err(Error::NonPositiveDegree { node, degree });
    }
    let n = g.nodes();
    let inv_sqrt: Vec<f64> = g.degrees.iter().map(|d| 1.0 / d.sqrt()).collect();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        let v = -g.weights[(i, j)] * inv_sqrt[i] * inv_sqrt[j];
        if i == j {
            1.0 + v
        } else {
            v
        }
    }))
}

/// The `m` smallest eigenpairs of a symmetric normalized Laplacian.
#[derive(Debug, Clone)]
pub struct LaplacianEigs {
    /// Ascending.
    pub values: Vec<f64>,
    /// n×m, orthonormal columns.
    pub vectors: DMatrix<f64>,
    pub nystrom: bool,
}

impl LaplacianEigs {
    pub fn count(&self) -> usize {
        self.values.len()
    }

    pub fn nodes(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn vector(&self, k: usize) -> Vec<f64> {
        self.vectors.column(k).iter().copied().collect()
    }
}

pub fn exact_eigs(laplacian: &DMatrix<f64>, m: usize) -> Result<LaplacianEigs> {
    let n = laplacian.nrows();
    if m == 0 || m > n {
        return Err(Error::invalid(format!(
            "eigenpair count {m} must lie in 1..={n}"
        )));
    }
    let eig = tridiagonal_ql_eigen(laplacian)?;
    Ok(LaplacianEigs {
        values: eig.values[..m].to_vec(),
        vectors: eig.vectors.columns(0, m).clone_owned(),
        nystrom: false,
    })
}

/// Landmark selection and conditioning for [`nystrom_eigs`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NystromConfig {
    pub landmarks: usize,
    pub seed: u64,
    /// `0` demands a well-conditioned landmark block (condition ≤ 1e12).
    /// A positive value instead pseudo-inverts it, discarding eigenvalues
    /// below `rcond · λ_max`.
    pub rcond: f64,
}

pub const MAX_LANDMARK_CONDITION: f64 = 1e12;

/// Pseudo-inverse cutoff used by the segmentation defaults.
pub const DEFAULT_RCOND: f64 = 1e-10;

impl NystromConfig {
    pub fn new(landmarks: usize, seed: u64) -> Self {
        Self {
            landmarks,
            seed,
            rcond: 0.0,
        }
    }

    pub fn with_rcond(mut self, rcond: f64) -> Self {
        self.rcond = rcond;
        self
    }
}

/// Eigen-decomposition of the landmark block as a spectral function helper.
struct SpectralFn {
    values: Vec<f64>,
    vectors: DMatrix<f64>,
}

impl SpectralFn {
    fn new(a: &DMatrix<f64>, rcond: f64) -> Result<Self> {
        let eig = tridiagonal_ql_eigen(a)?;
        let max = eig.values.last().copied().unwrap_or(0.0);
        let min = eig.values.first().copied().unwrap_or(0.0);
        if rcond == 0.0 {
            let condition = if min > 0.0 { max / min } else { f64::INFINITY };
            if !(condition <= MAX_LANDMARK_CONDITION) {
                return Err(Error::SingularLandmarks { condition });
            }
            return Ok(Self {
                values: eig.values,
                vectors: eig.vectors,
            });
        }
        let cutoff = rcond * max;
        let keep: Vec<usize> = (0..eig.values.len())
            .filter(|&k| eig.values[k] > cutoff)
            .collect();
        if keep.is_empty() {
            return Err(Error::SingularLandmarks {
                condition: f64::INFINITY,
            });
        }
        debug!(
            "landmark block: kept {} of {} eigenvalues",
            keep.len(),
            eig.values.len()
        );
        Ok(Self {
            values: keep.iter().map(|&k| eig.values[k]).collect(),
            vectors: eig.vectors.select_columns(&keep),
        })
    }

    /// `U f(Λ) Uᵀ`.
    fn apply(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            col *= f(self.values[k]);
        }
        &scaled * self.vectors.transpose()
    }
}

/// One-shot Nyström approximation of the `m` smallest `L_s` eigenpairs.
pub fn nystrom_eigs(
    f: &FeatureImage,
    metric: Metric,
    sigma: f64,
    m: usize,
    cfg: &NystromConfig,
) -> Result<LaplacianEigs> {
    check_sigma(sigma)?;
    let n = f.len();
    let ml = cfg.landmarks;
    if m == 0 || m > ml || ml > n {
        return Err(Error::invalid(format!(
            "need 1 ≤ eigenpairs ({m}) ≤ landmarks ({ml}) ≤ pixels ({n})"
        )));
    }
    if !(cfg.rcond >= 0.0 && cfg.rcond < 1.0) {
        return Err(Error::invalid(format!(
            "rcond {} outside [0, 1)",
            cfg.rcond
        )));
    }
    let prep = Prepared::new(f, metric)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut landmarks = rand::seq::index::sample(&mut rng, n, ml).into_vec();
    landmarks.sort_unstable();
    let mut is_landmark = vec![false; n];
    for &i in &landmarks {
        is_landmark[i] = true;
    }
    let others: Vec<usize> = (0..n).filter(|&i| !is_landmark[i]).collect();
    let order: Vec<usize> = landmarks.iter().chain(&others).copied().collect();
    let nr = others.len();

    let mut a = DMatrix::from_fn(ml, ml, |i, j| {
        prep.similarity(landmarks[i], landmarks[j], sigma)
    });
    // Columns of C are independent; compute them in parallel.
    let c_cols: Vec<Vec<f64>> = others
        .par_iter()
        .map(|&o| {
            landmarks
                .iter()
                .map(|&l| prep.similarity(l, o, sigma))
                .collect()
        })
        .collect();
    let mut c = DMatrix::zeros(ml, nr);
    for (j, col) in c_cols.iter().enumerate() {
        c.column_mut(j).copy_from_slice(col);
    }

    // Approximate degrees of the full similarity matrix.
    let a_fn = SpectralFn::new(&a, cfg.rcond)?;
    let a_inv = a_fn.apply(|v| 1.0 / v);
    let a_row = a.column_sum();
    let c_row = c.column_sum();
    let c_col = c.row_sum().transpose();
    let ct_ainv_c1 = c.tr_mul(&(&a_inv * &c_row));
    let mut degrees = Vec::with_capacity(n);
    degrees.extend((0..ml).map(|i| a_row[i] + c_row[i]));
    degrees.extend((0..nr).map(|j| c_col[j] + ct_ainv_c1[j]));
    if let Some((pos, &degree)) = degrees.iter().enumerate().find(|(_, d)| !(**d > 0.0)) {
        return Err(Error::NonPositiveDegree {
            node: order[pos],
            degree,
        });
    }
    let inv_sqrt: Vec<f64> = degrees.iter().map(|d| 1.0 / d.sqrt()).collect();
    for i in 0..ml {
        for j in 0..ml {
            a[(i, j)] *= inv_sqrt[i] * inv_sqrt[j];
        }
        for j in 0..nr {
            c[(i, j)] *= inv_sqrt[i] * inv_sqrt[ml + j];
        }
    }

    // Orthogonalized extension: R = A + A^{-1/2} C Cᵀ A^{-1/2} = U Λ Uᵀ,
    // V = [A; Cᵀ] A^{-1/2} U Λ^{-1/2}.
    let a_fn = SpectralFn::new(&a, cfg.rcond)?;
    let a_isqrt = a_fn.apply(|v| 1.0 / v.sqrt());
    let q = &a_isqrt * &c;
    let mut r = &a + &q * q.transpose();
    r = (&r + r.transpose()) * 0.5;
    let r_eig = tridiagonal_ql_eigen(&r)?.into_descending();
    let lam_max = r_eig.values.first().copied().unwrap_or(0.0);
    // Directions outside the retained rank of A carry no information.
    let cutoff = cfg.rcond.max(1e-12) * lam_max.max(f64::MIN_POSITIVE);
    let usable: Vec<usize> = (0..r_eig.values.len())
        .filter(|&k| r_eig.values[k] > cutoff)
        .take(m.min(a_fn.values.len()))
        .collect();
    if usable.len() < m {
        warn!(
            "Nyström: only {} of {m} requested eigenpairs are numerically usable",
            usable.len()
        );
    }
    if usable.is_empty() {
        return Err(Error::SingularLandmarks {
            condition: f64::INFINITY,
        });
    }
    let mut u = r_eig.vectors.select_columns(&usable);
    for (k, mut col) in u.column_iter_mut().enumerate() {
        col /= r_eig.values[usable[k]].sqrt();
    }
    let proj = &a_isqrt * &u;
    let top = &a * &proj;
    let bottom = c.tr_mul(&proj);

    let k_n = usable.len();
    let mut vectors = DMatrix::zeros(n, k_n);
    let mut values = Vec::with_capacity(k_n);
    for k in 0..k_n {
        let mut v = vec![0.0; n];
        for i in 0..ml {
            v[order[i]] = top[(i, k)];
        }
        for j in 0..nr {
            v[order[ml + j]] = bottom[(j, k)];
        }
        let nv = norm(&v);
        if nv > 0.0 {
            v.iter_mut().for_each(|x| *x /= nv);
        }
        fix_sign(&mut v);
        vectors.column_mut(k).copy_from(&DVector::from_vec(v));
        values.push((1.0 - r_eig.values[usable[k]]).clamp(0.0, 2.0));
    }
    Ok(LaplacianEigs {
        values,
        vectors,
        nystrom: true,
    })
}

/// Dense graph + exact solve, convenient for small frames and tests.
pub fn dense_eigs(f: &FeatureImage, metric: Metric, sigma: f64, m: usize) -> Result<LaplacianEigs> {
    let g = build_graph(f, metric, sigma)?;
    exact_eigs(&symmetric_laplacian(&g)?, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn img(h: usize, w: usize, dim: usize, data: Vec<f64>) -> FeatureImage {
        FeatureImage::new(h, w, dim, data).unwrap()
    }

    #[test]
    fn metric_examples() {
        let x = [0.3, -1.2, 2.0];
        assert_eq!(cosine_distance(&x, &x).unwrap(), 0.0);
        assert!((cosine_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((cosine_distance(&x, &neg).unwrap() - 2.0).abs() < 1e-15);
        assert!(cosine_distance(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert_eq!(euclidean_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert!(euclidean_distance(&[0.0], &[3.0, 4.0]).is_err());
    }

    #[test]
    fn modified_cosine_extremes() {
        let x: Vec<f64> = (0..18).map(|i| 1.0 + i as f64).collect();
        assert_eq!(modified_cosine_distance(&x, &x).unwrap(), 0.0);
        let a = [1.0, 0.0].repeat(9);
        let b = [0.0, 1.0].repeat(9);
        assert!((modified_cosine_distance(&a, &b).unwrap() - 3.0).abs() < 1e-15);
        let mut z = a.clone();
        z[4] = 0.0;
        assert!(modified_cosine_distance(&z, &b).is_err());
        assert!(modified_cosine_distance(&[1.0; 10], &[1.0; 10]).is_err());
    }

    #[test]
    fn features_constant_and_center() {
        let f = img(2, 3, 2, [0.5, 1.5].repeat(6));
        let feats = build_features(&f);
        assert_eq!(feats.dim, 18);
        assert!(feats.data.chunks(2).all(|c| c == [0.5, 1.5]));

        let ramp = img(3, 4, 1, (0..12).map(|v| v as f64).collect());
        let feats = build_features(&ramp);
        for i in 0..12 {
            assert_eq!(feats.pixel(i)[4], i as f64);
        }
        // Interior pixel (1, 1) = index 5.
        assert_eq!(
            feats.pixel(5),
            &[0.0, 1.0, 2.0, 4.0, 5.0, 6.0, 8.0, 9.0, 10.0]
        );
        // Corner (0, 0) replicates.
        assert_eq!(
            feats.pixel(0),
            &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 4.0, 4.0, 5.0]
        );
    }

    #[test]
    fn graph_matches_loop_oracle() {
        let f = img(2, 2, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, 0.5]);
        for metric in [Metric::Cosine, Metric::Euclidean] {
            let g = build_graph(&f, metric, 0.7).unwrap();
            for i in 0..4 {
                for j in 0..4 {
                    let d = distance(metric, f.pixel(i), f.pixel(j)).unwrap();
                    let expect = (-d * d / 0.49).exp();
                    assert!((g.weights[(i, j)] - expect).abs() < 1e-14);
                }
                assert!((g.degrees[i] - g.weights.row(i).sum()).abs() < 1e-15);
            }
        }
        let g = build_graph(&img(1, 2, 1, vec![0.0, 2.0]), Metric::Euclidean, 2.0).unwrap();
        assert!((g.weights[(0, 1)] - (-1.0f64).exp()).abs() < 1e-15);
        assert!(build_graph(&f, Metric::Euclidean, 0.0).is_err());
        assert!(build_graph(&f, Metric::ModifiedCosine, 1.0).is_err());
    }

    #[test]
    fn zero_pixel_reports_index() {
        let f = img(1, 3, 2, vec![1.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
        let err = build_graph(&f, Metric::Cosine, 1.0).unwrap_err();
        assert!(err.to_string().contains("pixel 1"));
    }

    #[test]
    fn two_node_laplacian() {
        let g = WeightedGraph::from_weights(DMatrix::from_element(2, 2, 1.0)).unwrap();
        let l = symmetric_laplacian(&g).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]);
        assert!((l.clone() - expect).amax() < 1e-15);
        let e = exact_eigs(&l, 2).unwrap();
        assert!(e.values[0].abs() < 1e-15 && (e.values[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn path_graph_spectrum() {
        let w = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
        let l = symmetric_laplacian(&WeightedGraph::from_weights(w).unwrap()).unwrap();
        let e = exact_eigs(&l, 3).unwrap();
        // Degrees (2, 3, 2): characteristic polynomial λ(2λ − 1)(6λ − 7) = 0.
        let expect = [0.0, 0.5, 7.0 / 6.0];
        for (a, b) in e.values.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{:?}", e.values);
        }
    }

    fn random_graph(n: usize, seed: u64) -> WeightedGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        build_graph(
            &FeatureImage::from_points(&pts).unwrap(),
            Metric::Euclidean,
            0.8,
        )
        .unwrap()
    }

    #[test]
    fn random_graph_eigs() {
        let g = random_graph(50, 4);
        let l = symmetric_laplacian(&g).unwrap();
        let e = exact_eigs(&l, 50).unwrap();
        for k in 0..50 {
            let v = e.vectors.column(k);
            assert!((&l * v - v * e.values[k]).norm() < 1e-8);
            assert!(e.values[k] >= -1e-12 && e.values[k] <= 2.0 + 1e-10);
        }
        let gram = e.vectors.transpose() * &e.vectors;
        assert!((gram - DMatrix::identity(50, 50)).amax() < 1e-10);
        let null: DVector<f64> = DVector::from_iterator(50, g.degrees.iter().map(|d| d.sqrt()));
        assert!((&l * &null).norm() < 1e-10 * null.norm());
        assert!(e.values[0].abs() < 1e-10);
    }

    #[test]
    fn disconnected_multiplicity() {
        let mut w = DMatrix::zeros(5, 5);
        for i in 0..5 {
            for j in 0..5 {
                if (i < 2) == (j < 2) {
                    w[(i, j)] = if i == j { 1.0 } else { 0.4 };
                }
            }
        }
        let l = symmetric_laplacian(&WeightedGraph::from_weights(w).unwrap()).unwrap();
        let e = exact_eigs(&l, 5).unwrap();
        assert!(e.values[0].abs() < 1e-12 && e.values[1].abs() < 1e-12);
        assert!(e.values[2] > 0.1);
    }

    #[test]
    fn asymmetric_rejected() {
        let mut l = DMatrix::identity(3, 3);
        l[(0, 1)] = 1e-6;
        assert!(exact_eigs(&l, 2).is_err());
    }

    #[test]
    fn nystrom_full_sample_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let f = FeatureImage::from_points(&pts).unwrap();
        let exact = dense_eigs(&f, Metric::Euclidean, 0.3, 6).unwrap();
        let ny = nystrom_eigs(&f, Metric::Euclidean, 0.3, 6, &NystromConfig::new(40, 1)).unwrap();
        assert!(ny.nystrom);
        for (a, b) in ny.values.iter().zip(&exact.values) {
            assert!(
                (a - b).abs() < 1e-6,
                "{:?} vs {:?}",
                ny.values,
                exact.values
            );
        }
    }

    #[test]
    fn nystrom_argument_checks() {
        let f = FeatureImage::from_points(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        assert!(nystrom_eigs(&f, Metric::Euclidean, 1.0, 3, &NystromConfig::new(2, 0)).is_err());
        assert!(nystrom_eigs(&f, Metric::Euclidean, 1.0, 1, &NystromConfig::new(4, 0)).is_err());
        let dup = FeatureImage::from_points(&[vec![1.0], vec![1.0], vec![3.0]]).unwrap();
        assert!(matches!(
            nystrom_eigs(&dup, Metric::Euclidean, 1.0, 2, &NystromConfig::new(3, 0)),
            Err(Error::SingularLandmarks { .. })
        ));
    }
}
