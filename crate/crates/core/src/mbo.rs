//! Two-class graph MBO segmentation with a fidelity term.
//!
//! Each outer iteration diffuses the phase field `u` in the span of the
//! smallest Laplacian eigenvectors while pulling it towards the seed `u0`
//! where `λ(x) = 1`, then thresholds back to ±1.

use log::{debug, warn};
use rayon::prelude::*;

use crate::cluster::Eigensolver;
use crate::error::{Error, Result};
use crate::graph::{
    build_graph, exact_eigs, nystrom_eigs, symmetric_laplacian, LaplacianEigs, Metric,
    NystromConfig, DEFAULT_RCOND,
};
use crate::radiometry::median_filter_9x9;
use crate::stats::quantile;
use crate::types::{FeatureImage, PhaseField};

/// Width of the untrusted ring around the seed region.
pub const RING_RADIUS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MboConfig {
    /// Fidelity strength `C1`.
    pub c1: f64,
    /// Diffusion time `δt` per outer iteration.
    pub dt: f64,
    pub inner_steps: usize,
    pub max_outer_iters: usize,
    pub stop_tol: f64,
}

impl Default for MboConfig {
    fn default() -> Self {
        Self {
            c1: 30.0,
            dt: 0.1,
            inner_steps: 3,
            max_outer_iters: 100,
            stop_tol: 1e-6,
        }
    }
}

impl MboConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c1 >= 0.0 && self.c1.is_finite()) {
            return Err(Error::invalid(format!(
                "C1 must be non-negative, got {}",
                self.c1
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if self.inner_steps == 0 || self.max_outer_iters == 0 {
            return Err(Error::invalid(
                "inner_steps and max_outer_iters must be positive",
            ));
        }
        if !(self.stop_tol > 0.0) {
            return Err(Error::invalid(format!(
                "stop_tol must be positive, got {}",
                self.stop_tol
            )));
        }
        Ok(())
    }
}

/// Trusted labels: `u0 = ±1`, `λ ∈ {0, 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FidelityMask {
    pub height: usize,
    pub width: usize,
    pub lambda: Vec<f64>,
    pub u0: Vec<f64>,
}

impl FidelityMask {
    pub fn new(height: usize, width: usize, lambda: Vec<f64>, u0: Vec<f64>) -> Result<Self> {
        let n = height * width;
        if lambda.len() != n || u0.len() != n {
            return Err(Error::dims(format!(
                "fidelity arrays must have {n} entries"
            )));
        }
        if lambda.iter().any(|&l| l != 0.0 && l != 1.0) {
            return Err(Error::invalid("fidelity weights must be 0 or 1"));
        }
        if u0.iter().any(|&u| u != 1.0 && u != -1.0) {
            return Err(Error::invalid("seed labels must be +1 or -1"));
        }
        if lambda.iter().all(|&l| l == 0.0) {
            return Err(Error::invalid("fidelity weight is zero everywhere"));
        }
        Ok(Self {
            height,
            width,
            lambda,
            u0,
        })
    }

    pub fn len(&self) -> usize {
        self.u0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u0.is_empty()
    }

    pub fn seed_mask(&self) -> Vec<bool> {
        self.u0.iter().map(|&u| u > 0.0).collect()
    }
}

/// Chebyshev dilation of a binary mask.
pub fn dilate(mask: &[bool], height: usize, width: usize, radius: usize) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for h in 0..height {
        for w in 0..width {
            if !mask[h * width + w] {
                continue;
            }
            for hh in h.saturating_sub(radius)..(h + radius + 1).min(height) {
                for ww in w.saturating_sub(radius)..(w + radius + 1).min(width) {
                    out[hh * width + ww] = true;
                }
            }
        }
    }
    out
}

/// Seeds a fidelity mask from the change between consecutive frames.
///
/// Pixels whose Euclidean difference exceeds the `q`-quantile of all
/// differences are marked, cleaned by a 9×9 median filter, and labelled +1.
/// A ring of [`RING_RADIUS`] pixels around them is left untrusted; all other
/// pixels are trusted as −1.
pub fn initialize_from_background_subtraction(
    frame: &FeatureImage,
    prev: &FeatureImage,
    q: f64,
) -> Result<FidelityMask> {
    if (frame.height, frame.width, frame.dim) != (prev.height, prev.width, prev.dim) {
        return Err(Error::dims(format!(
            "frames {}x{}x{} and {}x{}x{} differ",
            frame.height, frame.width, frame.dim, prev.height, prev.width, prev.dim
        )));
    }
    let (h, w) = (frame.height, frame.width);
    let diff: Vec<f64> = (0..frame.len())
        .map(|i| {
            frame
                .pixel(i)
                .iter()
                .zip(prev.pixel(i))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    if diff.iter().all(|&d| d == 0.0) {
        return Err(Error::NoChangeDetected);
    }
    let thr = quantile(&diff, q)?;
    let raw: Vec<f64> = diff
        .iter()
        .map(|&d| if d > thr { 1.0 } else { 0.0 })
        .collect();
    let mask: Vec<bool> = median_filter_9x9(&raw, h, w)
        .iter()
        .map(|&v| v >= 0.5)
        .collect();
    if !mask.iter().any(|&m| m) {
        return Err(Error::NoChangeDetected);
    }
    let ring = dilate(&mask, h, w, RING_RADIUS);
    let lambda = mask
        .iter()
        .zip(&ring)
        .map(|(&m, &r)| if m || !r { 1.0 } else { 0.0 })
        .collect();
    let u0 = mask.iter().map(|&m| if m { 1.0 } else { -1.0 }).collect();
    FidelityMask::new(h, w, lambda, u0)
}

/// Ginzburg-Landau energy components of a phase field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlEnergy {
    pub dirichlet: f64,
    pub potential: f64,
    pub fidelity: f64,
}

impl GlEnergy {
    pub fn total(&self) -> f64 {
        self.dirichlet + self.potential + self.fidelity
    }
}

/// Energy with `ε = 1`; `u·L_s u` is evaluated in the truncated eigenbasis.
pub fn gl_energy(u: &[f64], eigs: &LaplacianEigs, fid: &FidelityMask, c1: f64) -> GlEnergy {
    let coef = project(eigs, u);
    let dirichlet = coef
        .iter()
        .zip(&eigs.values)
        .map(|(a, l)| l * a * a)
        .sum::<f64>()
        .max(0.0);
    let potential = u.iter().map(|x| (x * x - 1.0).powi(2)).sum();
    let fidelity = u
        .iter()
        .zip(&fid.u0)
        .zip(&fid.lambda)
        .map(|((x, x0), l)| 0.5 * c1 * l * (x - x0).powi(2))
        .sum();
    GlEnergy {
        dirichlet,
        potential,
        fidelity,
    }
}

fn project(eigs: &LaplacianEigs, u: &[f64]) -> Vec<f64> {
    let n = u.len();
    (0..eigs.count())
        .map(|k| {
            let col = eigs.vectors.column(k);
            (0..n).map(|i| col[i] * u[i]).sum()
        })
        .collect()
}

fn reconstruct(eigs: &LaplacianEigs, a: &[f64]) -> Vec<f64> {
    let n = eigs.nodes();
    let mut u = vec![0.0; n];
    for (k, &ak) in a.iter().enumerate() {
        let col = eigs.vectors.column(k);
        for i in 0..n {
            u[i] += ak * col[i];
        }
    }
    u
}

/// `+1` where `u ≥ 0`, `−1` elsewhere.
pub fn threshold(u: &[f64]) -> Vec<f64> {
    u.iter()
        .map(|&x| if x >= 0.0 { 1.0 } else { -1.0 })
        .collect()
}

/// `‖u_new − u_old‖² / ‖u_new‖²`.
pub fn relative_change(u_new: &[f64], u_old: &[f64]) -> f64 {
    let num: f64 = u_new
        .iter()
        .zip(u_old)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let den: f64 = u_new.iter().map(|a| a * a).sum();
    num / den
}

/// Diffusion with semi-implicit fidelity, `inner_steps` sub-steps of
/// `dt / inner_steps` in eigen-coordinates.
pub fn diffuse(u: &[f64], eigs: &LaplacianEigs, fid: &FidelityMask, cfg: &MboConfig) -> Vec<f64> {
    let step = cfg.dt / cfg.inner_steps as f64;
    let mut a = project(eigs, u);
    let mut cur = u.to_vec();
    for s in 0..cfg.inner_steps {
        if s > 0 {
            cur = reconstruct(eigs, &a);
        }
        let force: Vec<f64> = cur
            .iter()
            .zip(&fid.u0)
            .zip(&fid.lambda)
            .map(|((x, x0), l)| cfg.c1 * l * (x - x0))
            .collect();
        let b = project(eigs, &force);
        for k in 0..a.len() {
            a[k] = (a[k] - step * b[k]) / (1.0 + step * eigs.values[k]);
        }
    }
    reconstruct(eigs, &a)
}

#[derive(Debug, Clone)]
pub struct MboResult {
    pub field: PhaseField,
    pub iterations: usize,
    pub converged: bool,
    /// Energy of the initial field followed by one entry per iteration.
    pub gl_trace: Vec<GlEnergy>,
    /// Everything ended up in one phase although the seed trusts both.
    pub collapsed: bool,
}

pub fn mbo_segment(eigs: &LaplacianEigs, fid: &FidelityMask, cfg: &MboConfig) -> Result<MboResult> {
    cfg.validate()?;
    if eigs.count() < 2 {
        return Err(Error::invalid("MBO needs at least two eigenpairs"));
    }
    if eigs.values.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("eigenvalues must be ascending"));
    }
    if eigs.nodes() != fid.len() {
        return Err(Error::dims(format!(
            "{} graph nodes but {} fidelity entries",
            eigs.nodes(),
            fid.len()
        )));
    }
    let mut u = fid.u0.clone();
    let mut gl_trace = vec![gl_energy(&u, eigs, fid, cfg.c1)];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_outer_iters {
        iterations += 1;
        let next = threshold(&diffuse(&u, eigs, fid, cfg));
        let change = relative_change(&next, &u);
        u = next;
        gl_trace.push(gl_energy(&u, eigs, fid, cfg.c1));
        if change < cfg.stop_tol {
            converged = true;
            break;
        }
    }
    let trusted = |sign: f64| {
        fid.u0
            .iter()
            .zip(&fid.lambda)
            .any(|(&x0, &l)| l > 0.0 && x0 == sign)
    };
    let all_pos = u.iter().all(|&x| x > 0.0);
    let all_neg = u.iter().all(|&x| x < 0.0);
    let collapsed = (all_pos && trusted(-1.0)) || (all_neg && trusted(1.0));
    if collapsed {
        warn!("MBO collapsed to a single phase after {iterations} iterations");
    }
    debug!("MBO: {iterations} iterations, converged = {converged}");
    Ok(MboResult {
        field: PhaseField {
            height: fid.height,
            width: fid.width,
            u,
        },
        iterations,
        converged,
        gl_trace,
        collapsed,
    })
}

/// Graph and initialization settings for whole-video segmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentConfig {
    pub mbo: MboConfig,
    pub eigs: usize,
    pub metric: Metric,
    pub sigma: f64,
    pub solver: Eigensolver,
    /// Quantile of the frame difference above which pixels seed the plume.
    pub init_quantile: f64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            mbo: MboConfig::default(),
            eigs: 100,
            metric: Metric::Euclidean,
            sigma: 0.2,
            solver: Eigensolver::Nystrom(NystromConfig::new(300, 0).with_rcond(DEFAULT_RCOND)),
            init_quantile: 0.91,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FrameSegmentation {
    pub field: PhaseField,
    /// `None` when no change was detected and the frame is all background.
    pub result: Option<MboResult>,
}

pub fn frame_eigs(f: &FeatureImage, cfg: &SegmentConfig) -> Result<LaplacianEigs> {
    match &cfg.solver {
        Eigensolver::Exact => {
            let g = build_graph(f, cfg.metric, cfg.sigma)?;
            exact_eigs(&symmetric_laplacian(&g)?, cfg.eigs)
        }
        Eigensolver::Nystrom(ny) => nystrom_eigs(f, cfg.metric, cfg.sigma, cfg.eigs, ny),
    }
}

pub fn segment_frame(
    frame: &FeatureImage,
    prev: &FeatureImage,
    cfg: &SegmentConfig,
) -> Result<FrameSegmentation> {
    let fid = match initialize_from_background_subtraction(frame, prev, cfg.init_quantile) {
        Ok(f) => f,
        Err(Error::NoChangeDetected) => {
            return Ok(FrameSegmentation {
                field: PhaseField::constant(frame.height, frame.width, -1.0),
                result: None,
            })
        }
        Err(e) => return Err(e),
    };
    let eigs = frame_eigs(frame, cfg)?;
    let res = mbo_segment(&eigs, &fid, &cfg.mbo)?;
    Ok(FrameSegmentation {
        field: res.field.clone(),
        result: Some(res),
    })
}

/// Segments every frame against its predecessor; frame 0 has none and is
/// reported as all background.
pub fn segment_video(
    frames: &[FeatureImage],
    cfg: &SegmentConfig,
) -> Result<Vec<FrameSegmentation>> {
    if frames.len() < 2 {
        return Err(Error::invalid(
            "video segmentation needs at least two frames",
        ));
    }
    cfg.mbo.validate()?;
    (0..frames.len())
        .into_par_iter()
        .map(|t| {
            if t == 0 {
                let f = &frames[0];
                return Ok(FrameSegmentation {
                    field: PhaseField::constant(f.height, f.width, -1.0),
                    result: None,
                });
            }
            segment_frame(&frames[t], &frames[t - 1], cfg)
                .map_err(|e| Error::invalid(format!("frame {t}: {e}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn toy_eigs(n: usize) -> LaplacianEigs {
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|i| vec![(i / (n / 2)) as f64 * 5.0 + (i % 7) as f64 * 0.1])
            .collect();
        let f = FeatureImage::from_points(&pts).unwrap();
        let g = build_graph(&f, Metric::Euclidean, 1.0).unwrap();
        exact_eigs(&symmetric_laplacian(&g).unwrap(), 10.min(n)).unwrap()
    }

    #[test]
    fn threshold_zero_is_positive() {
        assert_eq!(threshold(&[0.0, -1e-300, 2.0]), vec![1.0, -1.0, 1.0]);
    }

    #[test]
    fn all_positive_is_fixed_point() {
        let eigs = toy_eigs(20);
        let fid = FidelityMask::new(1, 20, vec![1.0; 20], vec![1.0; 20]).unwrap();
        let r = mbo_segment(&eigs, &fid, &MboConfig::default()).unwrap();
        assert!(r.field.u.iter().all(|&x| x == 1.0));
        assert_eq!(r.iterations, 1);
        assert!(r.converged && !r.collapsed);
    }

    #[test]
    fn zero_fidelity_keeps_constant() {
        let eigs = toy_eigs(20);
        let mut lambda = vec![0.0; 20];
        lambda[0] = 1.0;
        let fid = FidelityMask::new(1, 20, lambda, vec![1.0; 20]).unwrap();
        let cfg = MboConfig {
            c1: 0.0,
            ..MboConfig::default()
        };
        let r = mbo_segment(&eigs, &fid, &cfg).unwrap();
        assert!(r.field.u.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn flips_identity() {
        let old = vec![1.0, -1.0, 1.0, 1.0, -1.0];
        let new = vec![1.0, 1.0, -1.0, 1.0, -1.0];
        assert!((relative_change(&new, &old) - 4.0 * 2.0 / 5.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        let eigs = toy_eigs(20);
        assert!(FidelityMask::new(1, 20, vec![0.0; 20], vec![1.0; 20]).is_err());
        assert!(FidelityMask::new(1, 20, vec![0.5; 20], vec![1.0; 20]).is_err());
        let fid = FidelityMask::new(1, 20, vec![1.0; 20], vec![1.0; 20]).unwrap();
        let mut bad = eigs.clone();
        bad.values.swap(1, 2);
        bad.values[1] = 5.0;
        assert!(mbo_segment(&bad, &fid, &MboConfig::default()).is_err());
        let one = LaplacianEigs {
            values: vec![0.0],
            vectors: DMatrix::from_element(20, 1, 1.0 / 20f64.sqrt()),
            nystrom: false,
        };
        assert!(mbo_segment(&one, &fid, &MboConfig::default()).is_err());
        let cfg = MboConfig {
            dt: 0.0,
            ..MboConfig::default()
        };
        assert!(mbo_segment(&eigs, &fid, &cfg).is_err());
    }

    #[test]
    fn diffusion_lowers_dirichlet_energy() {
        let eigs = toy_eigs(30);
        let u: Vec<f64> = (0..30)
            .map(|i| if i % 3 == 0 { 1.0 } else { -1.0 })
            .collect();
        let fid = FidelityMask::new(1, 30, vec![1.0; 30], u.clone()).unwrap();
        let cfg = MboConfig {
            c1: 0.0,
            ..MboConfig::default()
        };
        let before = gl_energy(&u, &eigs, &fid, 0.0).dirichlet;
        let after = gl_energy(&diffuse(&u, &eigs, &fid, &cfg), &eigs, &fid, 0.0).dirichlet;
        assert!(after < before);
    }

    #[test]
    fn dilation() {
        let mut m = vec![false; 49];
        m[24] = true;
        let d = dilate(&m, 7, 7, 3);
        assert!(d.iter().all(|&x| x));
        let d = dilate(&m, 7, 7, 1);
        assert_eq!(d.iter().filter(|&&x| x).count(), 9);
    }

    fn gray(h: usize, w: usize, data: Vec<f64>) -> FeatureImage {
        FeatureImage::new(h, w, 1, data).unwrap()
    }

    #[test]
    fn identical_frames_report_no_change() {
        let f = gray(4, 4, vec![0.3; 16]);
        assert!(matches!(
            initialize_from_background_subtraction(&f, &f, 0.9),
            Err(Error::NoChangeDetected)
        ));
    }

    #[test]
    fn isolated_change_is_filtered_out() {
        let prev = gray(16, 16, vec![0.0; 256]);
        let mut cur = prev.clone();
        cur.data[100] = 1.0;
        assert!(matches!(
            initialize_from_background_subtraction(&cur, &prev, 0.0),
            Err(Error::NoChangeDetected)
        ));
    }

    #[test]
    fn video_first_frame_background() {
        let f = gray(4, 4, vec![0.3; 16]);
        let cfg = SegmentConfig {
            mbo: MboConfig::default(),
            eigs: 4,
            metric: Metric::Euclidean,
            sigma: 1.0,
            solver: Eigensolver::Exact,
            init_quantile: 0.9,
        };
        let out = segment_video(&[f.clone(), f], &cfg).unwrap();
        assert!(out
            .iter()
            .all(|s| s.result.is_none() && s.field.u.iter().all(|&x| x == -1.0)));
    }
}
