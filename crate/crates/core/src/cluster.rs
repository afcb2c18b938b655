//! Lloyd k-means under the graph metrics and normalized spectral clustering.

use log::debug;
use pathfinding::prelude::{kuhn_munkres, Matrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{
    build_graph, exact_eigs, nystrom_eigs, symmetric_laplacian, LaplacianEigs, Metric,
    NystromConfig, Prepared, WeightedGraph,
};
use crate::types::{min_max_normalize, FeatureImage, Labeling, Raster};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub metric: Metric,
    pub max_iters: usize,
    pub seed: u64,
    /// Pixel indices used as the initial centroids of the first restart.
    pub init: Option<Vec<usize>>,
    /// Independent seeded starts; the lowest final cost wins.
    pub restarts: usize,
}

impl KMeansConfig {
    pub fn new(k: usize, metric: Metric, seed: u64) -> Self {
        Self {
            k,
            metric,
            max_iters: 300,
            seed,
            init: None,
            restarts: 1,
        }
    }

    pub fn with_restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts;
        self
    }

    pub fn with_init(mut self, init: Vec<usize>) -> Self {
        self.init = Some(init);
        self
    }
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub labeling: Labeling,
    pub centroids: Vec<Vec<f64>>,
    /// Update-then-reassign rounds after the initial assignment.
    pub iterations: usize,
    pub converged: bool,
    /// Squared distances summed for Euclidean, plain distances otherwise.
    pub cost: f64,
    /// Cost after every assignment step, starting with the initial one.
    pub cost_trace: Vec<f64>,
}

fn point_cost(metric: Metric, d: f64) -> f64 {
    match metric {
        Metric::Euclidean => d * d,
        _ => d,
    }
}

struct Lloyd<'a> {
    f: &'a FeatureImage,
    metric: Metric,
    k: usize,
}

impl Lloyd<'_> {
    fn distance(&self, x: &[f64], c: &[f64]) -> Result<f64> {
        crate::graph::distance(self.metric, x, c)
    }

    /// Nearest centroid per pixel (ties to the lowest index) and its distance.
    fn assign(&self, centroids: &[Vec<f64>]) -> Result<Vec<(usize, f64)>> {
        (0..self.f.len())
            .into_par_iter()
            .map(|i| {
                let x = self.f.pixel(i);
                let mut best = (0, f64::INFINITY);
                for (c, cen) in centroids.iter().enumerate() {
                    let d = self
                        .distance(x, cen)
                        .map_err(|e| Error::domain(format!("pixel {i} vs centroid {c}: {e}")))?;
                    if d < best.1 {
                        best = (c, d);
                    }
                }
                Ok(best)
            })
            .collect()
    }

    fn update(&self, assign: &mut [(usize, f64)]) -> Vec<Vec<f64>> {
        let dim = self.f.dim;
        let mut sums = vec![vec![0.0; dim]; self.k];
        let mut counts = vec![0usize; self.k];
        for (i, &(c, _)) in assign.iter().enumerate() {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(self.f.pixel(i)) {
                *s += x;
            }
        }
        for c in 0..self.k {
            if counts[c] > 0 {
                let n = counts[c] as f64;
                sums[c].iter_mut().for_each(|s| *s /= n);
                continue;
            }
            // Re-seed an empty cluster with the point farthest from its centroid,
            // taken from a cluster that can spare it.
            let far = (0..assign.len()).filter(|&i| counts[assign[i].0] > 1).fold(
                None,
                |best: Option<usize>, i| match best {
                    Some(b) if assign[b].1 >= assign[i].1 => Some(b),
                    _ => Some(i),
                },
            );
            if let Some(i) = far {
                debug!("k-means: cluster {c} empty, re-seeded with pixel {i}");
                counts[assign[i].0] -= 1;
                counts[c] = 1;
                assign[i] = (c, 0.0);
                sums[c] = self.f.pixel(i).to_vec();
            }
        }
        sums
    }

    fn cost(&self, assign: &[(usize, f64)]) -> f64 {
        assign
            .iter()
            .map(|&(_, d)| point_cost(self.metric, d))
            .sum()
    }

    fn run(&self, init: &[usize], max_iters: usize) -> Result<KMeansResult> {
        let mut centroids: Vec<Vec<f64>> = init.iter().map(|&i| self.f.pixel(i).to_vec()).collect();
        let mut assign = self.assign(&centroids)?;
        let mut cost_trace = vec![self.cost(&assign)];
        let mut iterations = 0;
        let mut converged = false;
        while iterations < max_iters {
            iterations += 1;
            centroids = self.update(&mut assign);
            let next = self.assign(&centroids)?;
            cost_trace.push(self.cost(&next));
            let unchanged = next.iter().zip(&assign).all(|(a, b)| a.0 == b.0);
            assign = next;
            if unchanged {
                converged = true;
                break;
            }
        }
        let labels: Vec<usize> = assign.iter().map(|a| a.0).collect();
        Ok(KMeansResult {
            labeling: Labeling::new(self.f.height, self.f.width, self.k, labels)?,
            centroids,
            iterations,
            converged,
            cost: self.cost(&assign),
            cost_trace,
        })
    }
}

pub fn kmeans(f: &FeatureImage, cfg: &KMeansConfig) -> Result<KMeansResult> {
    let n = f.len();
    if cfg.k == 0 || cfg.k > n {
        return Err(Error::invalid(format!("k = {} must lie in 1..={n}", cfg.k)));
    }
    if cfg.restarts == 0 {
        return Err(Error::invalid("need at least one k-means start"));
    }
    if cfg.metric != Metric::Euclidean {
        // Surfaces zero spectra with their pixel index before iterating.
        Prepared::new(f, cfg.metric)?;
    }
    if let Some(init) = &cfg.init {
        if init.len() != cfg.k {
            return Err(Error::invalid(format!(
                "{} initial centroids given for k = {}",
                init.len(),
                cfg.k
            )));
        }
        if let Some(&bad) = init.iter().find(|&&i| i >= n) {
            return Err(Error::invalid(format!(
                "initial centroid pixel {bad} out of range"
            )));
        }
    }
    let lloyd = Lloyd {
        f,
        metric: cfg.metric,
        k: cfg.k,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<KMeansResult> = None;
    for r in 0..cfg.restarts {
        let init = match (&cfg.init, r) {
            (Some(init), 0) => init.clone(),
            _ => rand::seq::index::sample(&mut rng, n, cfg.k).into_vec(),
        };
        let res = lloyd.run(&init, cfg.max_iters)?;
        if best.as_ref().is_none_or(|b| res.cost < b.cost) {
            best = Some(res);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Eigensolver {
    Exact,
    Nystrom(NystromConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralConfig {
    pub k: usize,
    /// Eigenvectors computed; the first is discarded before embedding.
    pub eigs: usize,
    pub metric: Metric,
    pub sigma: f64,
    pub solver: Eigensolver,
    pub seed: u64,
    pub restarts: usize,
}

impl SpectralConfig {
    pub fn new(k: usize, metric: Metric, sigma: f64, seed: u64) -> Self {
        Self {
            k,
            eigs: k,
            metric,
            sigma,
            solver: Eigensolver::Exact,
            seed,
            restarts: 10,
        }
    }
}

fn check_spectral(k: usize, eigs: usize) -> Result<()> {
    if k == 0 || eigs < k {
        return Err(Error::invalid(format!(
            "spectral clustering needs eigs ({eigs}) >= k ({k}) >= 1"
        )));
    }
    Ok(())
}

/// Clusters the row-normalized embedding formed by eigenvectors `2..=m`.
pub fn cluster_embedding(
    eigs: &LaplacianEigs,
    height: usize,
    width: usize,
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<Labeling> {
    let n = eigs.nodes();
    if n != height * width {
        return Err(Error::dims(format!(
            "{n} eigenvector entries for a {height}x{width} image"
        )));
    }
    let cols = eigs.count().saturating_sub(1).max(1);
    let mut data = vec![0.0; n * cols];
    if eigs.count() > 1 {
        for i in 0..n {
            let row = &mut data[i * cols..(i + 1) * cols];
            for (c, v) in row.iter_mut().enumerate() {
                *v = eigs.vectors[(i, c + 1)];
            }
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                row.iter_mut().for_each(|v| *v /= norm);
            } else {
                row.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
    let emb = FeatureImage::new(height, width, cols, data)?;
    let cfg = KMeansConfig::new(k, Metric::Euclidean, seed).with_restarts(restarts.max(1));
    Ok(kmeans(&emb, &cfg)?.labeling)
}

pub fn spectral_from_graph(
    g: &WeightedGraph,
    height: usize,
    width: usize,
    k: usize,
    eigs: usize,
    seed: u64,
) -> Result<(Labeling, LaplacianEigs)> {
    check_spectral(k, eigs)?;
    let e = exact_eigs(&symmetric_laplacian(g)?, eigs)?;
    let labels = cluster_embedding(&e, height, width, k, seed, 10)?;
    Ok((labels, e))
}

pub fn spectral_cluster(
    f: &FeatureImage,
    cfg: &SpectralConfig,
) -> Result<(Labeling, LaplacianEigs)> {
    check_spectral(cfg.k, cfg.eigs)?;
    let eigs = match &cfg.solver {
        Eigensolver::Exact => {
            let g = build_graph(f, cfg.metric, cfg.sigma)?;
            exact_eigs(&symmetric_laplacian(&g)?, cfg.eigs)?
        }
        Eigensolver::Nystrom(ny) => nystrom_eigs(f, cfg.metric, cfg.sigma, cfg.eigs, ny)?,
    };
    let labels = cluster_embedding(&eigs, f.height, f.width, cfg.k, cfg.seed, cfg.restarts)?;
    Ok((labels, eigs))
}

/// Each eigenvector reshaped row-major to H×W and min-max normalized.
pub fn eigenvector_images(
    eigs: &LaplacianEigs,
    height: usize,
    width: usize,
) -> Result<Vec<Raster>> {
    if eigs.nodes() != height * width {
        return Err(Error::dims(format!(
            "{} eigenvector entries for a {height}x{width} image",
            eigs.nodes()
        )));
    }
    (0..eigs.count())
        .map(|k| Raster::gray(height, width, min_max_normalize(&eigs.vector(k))))
        .collect()
}

/// Fraction of pixels on which two labelings agree under the best one-to-one
/// matching of their labels.
pub fn label_agreement(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dims(format!(
            "labelings of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Ok(1.0);
    }
    let k = a.iter().chain(b).max().map_or(0, |m| m + 1);
    let mut confusion = Matrix::new(k, k, 0i64);
    for (&x, &y) in a.iter().zip(b) {
        confusion[(x, y)] += 1;
    }
    let (matched, _) = kuhn_munkres(&confusion);
    Ok(matched as f64 / a.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn points(v: &[&[f64]]) -> FeatureImage {
        FeatureImage::from_points(&v.iter().map(|p| p.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn single_cluster_is_mean() {
        let f = points(&[&[0.0, 1.0], &[2.0, 3.0], &[4.0, 2.0]]);
        let r = kmeans(&f, &KMeansConfig::new(1, Metric::Euclidean, 0)).unwrap();
        assert_eq!(r.labeling.labels, vec![0, 0, 0]);
        assert_eq!(r.centroids[0], vec![2.0, 2.0]);
    }

    #[test]
    fn one_d_two_clusters() {
        let f = points(&[&[0.0], &[1.0], &[10.0], &[11.0]]);
        let r = kmeans(
            &f,
            &KMeansConfig::new(2, Metric::Euclidean, 3).with_restarts(5),
        )
        .unwrap();
        let l = &r.labeling.labels;
        assert_eq!(l[0], l[1]);
        assert_eq!(l[2], l[3]);
        assert_ne!(l[0], l[2]);
        let mut c: Vec<f64> = r.centroids.iter().map(|c| c[0]).collect();
        c.sort_by(f64::total_cmp);
        assert_eq!(c, vec![0.5, 10.5]);
        assert!((r.cost - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fixed_point_converges_in_one() {
        let f = points(&[&[0.0], &[5.0], &[9.0]]);
        let r = kmeans(
            &f,
            &KMeansConfig::new(3, Metric::Euclidean, 0).with_init(vec![0, 1, 2]),
        )
        .unwrap();
        assert_eq!(r.iterations, 1);
        assert!(r.converged);
        assert_eq!(r.labeling.labels, vec![0, 1, 2]);
    }

    #[test]
    fn cosine_groups_by_direction() {
        let f = points(&[&[1.0, 0.0], &[2.0, 0.0], &[0.0, 1.0], &[0.0, 3.0]]);
        let r = kmeans(
            &f,
            &KMeansConfig::new(2, Metric::Cosine, 1).with_restarts(4),
        )
        .unwrap();
        let l = &r.labeling.labels;
        assert_eq!(l[0], l[1]);
        assert_eq!(l[2], l[3]);
        assert_ne!(l[0], l[2]);
    }

    #[test]
    fn empty_cluster_reseeded() {
        // Duplicate starting centroids force an empty cluster.
        let f = points(&[&[0.0], &[0.0], &[7.0], &[8.0]]);
        let r = kmeans(
            &f,
            &KMeansConfig::new(2, Metric::Euclidean, 0).with_init(vec![0, 1]),
        )
        .unwrap();
        let l = &r.labeling.labels;
        assert_eq!(l[0], l[1]);
        assert_eq!(l[2], l[3]);
        assert_ne!(l[0], l[2]);
    }

    #[test]
    fn kmeans_errors() {
        let f = points(&[&[0.0], &[1.0]]);
        assert!(kmeans(&f, &KMeansConfig::new(3, Metric::Euclidean, 0)).is_err());
        let z = points(&[&[0.0, 0.0], &[1.0, 1.0]]);
        let err = kmeans(&z, &KMeansConfig::new(1, Metric::Cosine, 0)).unwrap_err();
        assert!(err.to_string().contains("pixel 0"));
    }

    #[test]
    fn deterministic() {
        let f = points(&[&[0.1], &[0.4], &[2.0], &[2.2], &[5.0], &[4.1]]);
        let cfg = KMeansConfig::new(3, Metric::Euclidean, 17).with_restarts(3);
        assert_eq!(
            kmeans(&f, &cfg).unwrap().labeling,
            kmeans(&f, &cfg).unwrap().labeling
        );
    }

    #[test]
    fn block_diagonal_split() {
        let mut w = DMatrix::zeros(6, 6);
        for i in 0..6 {
            for j in 0..6 {
                if (i < 3) == (j < 3) {
                    w[(i, j)] = if i == j { 1.0 } else { 0.6 };
                }
            }
        }
        let g = WeightedGraph::from_weights(w).unwrap();
        let (l, e) = spectral_from_graph(&g, 1, 6, 2, 2, 0).unwrap();
        assert_eq!(
            label_agreement(&l.labels, &[0, 0, 0, 1, 1, 1]).unwrap(),
            1.0
        );
        assert_eq!(e.count(), 2);
    }

    #[test]
    fn agreement_under_permutation() {
        assert_eq!(label_agreement(&[0, 0, 1, 2], &[2, 2, 0, 1]).unwrap(), 1.0);
        assert_eq!(label_agreement(&[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap(), 0.75);
        assert_eq!(label_agreement(&[0, 0, 0], &[0, 1, 2]).unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn eigenvector_image_shapes() {
        let e = LaplacianEigs {
            values: vec![0.0, 0.5],
            vectors: DMatrix::from_column_slice(4, 2, &[0.5, 0.5, 0.5, 0.5, 1.0, -1.0, 0.0, 3.0]),
            nystrom: false,
        };
        let imgs = eigenvector_images(&e, 2, 2).unwrap();
        assert_eq!(imgs[0].data, vec![0.5; 4]);
        assert_eq!(imgs[1].data, vec![0.5, 0.0, 0.25, 1.0]);
        assert!(eigenvector_images(&e, 1, 3).is_err());
    }
}
