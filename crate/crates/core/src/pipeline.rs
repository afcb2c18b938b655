//! End-to-end batch runs driven by a flat key-value configuration.
//!
//! Stages always execute in the order of [`Stage::ALL`]; a config selects a
//! subset. Every artifact lands in `output_dir`, followed by `timings.csv`.

use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;

use crate::amsd::{detect, estimate_background, SubspaceModel};
use crate::cluster::{
    eigenvector_images, kmeans, spectral_cluster, Eigensolver, KMeansConfig, SpectralConfig,
};
use crate::config::{parse_list, KvConfig};
use crate::dimred::{false_color, fit_pca, project, ComponentSelection};
use crate::error::{Error, Result};
use crate::graph::{build_features, Metric, NystromConfig, DEFAULT_RCOND};
use crate::io::{
    emit_image, emit_labeling_csv, read_cube, read_signature_csv, write_csv, write_cube,
};
use crate::mbo::{segment_video, MboConfig, SegmentConfig};
use crate::midway::{midway_equalize_with, DEFAULT_LEVELS};
use crate::radiometry::{radiance_to_emissivity, spectral_median_filter_3x3};
use crate::stats::quantile;
use crate::synth::{generate, GroundTruth, SceneSpec};
use crate::types::{CubeKind, FalseColorVideo, FeatureImage, HyperCube, Labeling, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Synth,
    Convert,
    Pca,
    Midway,
    Amsd,
    Kmeans,
    Spectral,
    Mbo,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Synth,
        Stage::Convert,
        Stage::Pca,
        Stage::Midway,
        Stage::Amsd,
        Stage::Kmeans,
        Stage::Spectral,
        Stage::Mbo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Convert => "convert",
            Stage::Pca => "pca",
            Stage::Midway => "midway",
            Stage::Amsd => "amsd",
            Stage::Kmeans => "kmeans",
            Stage::Spectral => "spectral",
            Stage::Mbo => "mbo",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s.trim())
            .ok_or_else(|| Error::invalid(format!("unknown stage {s:?}")))
    }
}

/// Half-open frame interval `a..b`; `a..` and `all` run to the last frame and
/// a single number selects one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FrameRange {
    pub start: usize,
    pub end: Option<usize>,
}

impl FrameRange {
    pub fn resolve(&self, frames: usize) -> Result<Range<usize>> {
        let end = self.end.unwrap_or(frames);
        if self.start >= end || end > frames {
            return Err(Error::invalid(format!(
                "frame range {self} is empty or exceeds {frames} frames"
            )));
        }
        Ok(self.start..end)
    }
}

impl fmt::Display for FrameRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.end {
            Some(e) => write!(f, "{}..{e}", self.start),
            None => write!(f, "{}..", self.start),
        }
    }
}

impl FromStr for FrameRange {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::invalid(format!("bad frame range {s:?}, expected `a..b`"));
        if s == "all" {
            return Ok(FrameRange::default());
        }
        match s.split_once("..") {
            Some((a, b)) => {
                let start = if a.is_empty() {
                    0
                } else {
                    a.parse().map_err(|_| bad())?
                };
                let end = if b.is_empty() {
                    None
                } else {
                    Some(b.parse().map_err(|_| bad())?)
                };
                Ok(FrameRange { start, end })
            }
            None => {
                let t: usize = s.parse().map_err(|_| bad())?;
                Ok(FrameRange {
                    start: t,
                    end: Some(t + 1),
                })
            }
        }
    }
}

/// Per-pixel features fed to the clustering stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMode {
    Pixel,
    /// The pixel and its 8 neighbours, concatenated.
    Neighbourhood,
}

impl FeatureMode {
    pub fn apply(self, frame: &FeatureImage) -> FeatureImage {
        match self {
            FeatureMode::Pixel => frame.clone(),
            FeatureMode::Neighbourhood => build_features(frame),
        }
    }
}

impl FromStr for FeatureMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "pixel" | "1x1" => Ok(FeatureMode::Pixel),
            "3x3" | "neighbourhood" => Ok(FeatureMode::Neighbourhood),
            other => Err(Error::invalid(format!("unknown feature mode {other:?}"))),
        }
    }
}

impl FromStr for ComponentSelection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let v: Vec<usize> =
            parse_list(s).ok_or_else(|| Error::invalid(format!("bad component list {s:?}")))?;
        match v.as_slice() {
            [a, b, c] => ComponentSelection::new([*a, *b, *c]),
            _ => Err(Error::invalid(format!(
                "need exactly three components, got {s:?}"
            ))),
        }
    }
}

/// Which frames the MBO graph is built on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MboInput {
    /// The first `n` principal component scores.
    Scores(usize),
    /// The (equalized, if available) false-colour video.
    FalseColor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansStage {
    pub k: usize,
    pub metric: Metric,
    pub features: FeatureMode,
    pub frames: FrameRange,
    pub restarts: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralStage {
    pub k: usize,
    pub eigs: usize,
    pub metric: Metric,
    pub sigma: f64,
    /// 0 selects the exact dense eigensolver.
    pub landmarks: usize,
    pub rcond: f64,
    pub features: FeatureMode,
    pub frames: FrameRange,
    pub restarts: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmsdStage {
    pub target: Option<PathBuf>,
    pub pre_frames: Option<FrameRange>,
    pub background_dim: usize,
    pub threshold_quantile: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MboStage {
    pub segment: SegmentConfig,
    pub input: MboInput,
    pub frames: FrameRange,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Radiance (or emissivity) cube used when `synth` is not selected.
    pub input: Option<PathBuf>,
    pub stages: Vec<Stage>,
    pub scene: SceneSpec,
    pub temp_k: f64,
    pub median_filter: bool,
    pub pca_k: usize,
    pub select: ComponentSelection,
    pub midway_levels: usize,
    pub amsd: AmsdStage,
    pub kmeans: Option<KMeansStage>,
    pub spectral: Option<SpectralStage>,
    pub mbo: MboStage,
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv(KvConfig::load(path)?)
    }

    /// Builds a config, rejecting unknown keys and missing required ones.
    pub fn from_kv(mut cfg: KvConfig) -> Result<Self> {
        let seed = cfg.take_or("seed", 0u64)?;
        let output_dir: PathBuf = cfg.take_required::<String>("output_dir")?.into();
        let input = cfg.take_str("input").map(PathBuf::from);
        let mut stages: Vec<Stage> = match cfg.take_str("stages") {
            Some(s) => s
                .split(',')
                .map(str::trim)
                .filter(|x| !x.is_empty())
                .map(str::parse)
                .collect::<Result<_>>()?,
            None => Stage::ALL.to_vec(),
        };
        stages.sort_unstable();
        stages.dedup();
        if stages.is_empty() {
            return Err(Error::invalid("no stages selected"));
        }

        let mut scene = SceneSpec::desk_default();
        scene.seed = seed;
        let mut synth = cfg.take_prefixed("synth.");
        scene.apply_config(&mut synth)?;
        synth.finish().map_err(|e| prefix_error("synth.", e))?;

        let temp_k = cfg.take_or("convert.temp_k", 300.0)?;
        let median_filter = cfg.take_or("convert.median_filter", true)?;
        let pca_k = cfg.take_or("pca.k", 5usize)?;
        let select = cfg.take_or("pca.select", ComponentSelection::default())?;
        let midway_levels = cfg.take_or("midway.levels", DEFAULT_LEVELS)?;

        let amsd = AmsdStage {
            target: cfg.take_str("amsd.target").map(PathBuf::from),
            pre_frames: cfg.take("amsd.pre_frames")?,
            background_dim: cfg.take_or("amsd.background_dim", 4usize)?,
            threshold_quantile: cfg.take_or("amsd.threshold_quantile", 0.999)?,
        };

        let kmeans_k: Option<usize> = cfg.take("kmeans.k")?;
        let kmeans_stage = KMeansStage {
            k: kmeans_k.unwrap_or(0),
            metric: cfg.take_or("kmeans.metric", Metric::ModifiedCosine)?,
            features: cfg.take_or("kmeans.features", FeatureMode::Neighbourhood)?,
            frames: cfg.take_or("kmeans.frames", FrameRange::default())?,
            restarts: cfg.take_or("kmeans.restarts", 5usize)?,
        };
        let kmeans = match kmeans_k {
            Some(_) => Some(kmeans_stage),
            None if stages.contains(&Stage::Kmeans) => {
                return Err(Error::invalid("stage `kmeans` needs `kmeans.k`"))
            }
            None => None,
        };

        let spectral_k: Option<usize> = cfg.take("spectral.k")?;
        let spectral_stage = SpectralStage {
            k: spectral_k.unwrap_or(0),
            eigs: cfg.take_or("spectral.eigs", spectral_k.unwrap_or(0))?,
            metric: cfg.take_or("spectral.metric", Metric::ModifiedCosine)?,
            sigma: cfg.take_or("spectral.sigma", 1.0)?,
            landmarks: cfg.take_or("spectral.nystrom", 300usize)?,
            rcond: cfg.take_or("spectral.rcond", DEFAULT_RCOND)?,
            features: cfg.take_or("spectral.features", FeatureMode::Neighbourhood)?,
            frames: cfg.take_or("spectral.frames", FrameRange::default())?,
            restarts: cfg.take_or("spectral.restarts", 10usize)?,
        };
        let spectral = match spectral_k {
            Some(_) => Some(spectral_stage),
            None if stages.contains(&Stage::Spectral) => {
                return Err(Error::invalid("stage `spectral` needs `spectral.k`"))
            }
            None => None,
        };

        let defaults = SegmentConfig::default();
        let mbo_cfg = MboConfig {
            c1: cfg.take_or("mbo.c1", defaults.mbo.c1)?,
            dt: cfg.take_or("mbo.dt", defaults.mbo.dt)?,
            inner_steps: cfg.take_or("mbo.inner_steps", defaults.mbo.inner_steps)?,
            max_outer_iters: cfg.take_or("mbo.max_iters", defaults.mbo.max_outer_iters)?,
            stop_tol: cfg.take_or("mbo.tol", defaults.mbo.stop_tol)?,
        };
        let landmarks = cfg.take_or("mbo.nystrom", 300usize)?;
        let rcond = cfg.take_or("mbo.rcond", DEFAULT_RCOND)?;
        let segment = SegmentConfig {
            mbo: mbo_cfg,
            eigs: cfg.take_or("mbo.eigs", defaults.eigs)?,
            metric: cfg.take_or("mbo.metric", defaults.metric)?,
            sigma: cfg.take_or("mbo.sigma", defaults.sigma)?,
            solver: solver_for(landmarks, seed, rcond),
            init_quantile: cfg.take_or("mbo.init_quantile", defaults.init_quantile)?,
        };
        let components = cfg.take_or("mbo.components", 5usize)?;
        let input_mode = match cfg.take_str("mbo.input").as_deref() {
            None | Some("scores") => MboInput::Scores(components),
            Some("false-color") => MboInput::FalseColor,
            Some(other) => return Err(Error::invalid(format!("unknown mbo.input {other:?}"))),
        };
        let mbo = MboStage {
            segment,
            input: input_mode,
            frames: cfg.take_or("mbo.frames", FrameRange::default())?,
        };
        cfg.finish()?;

        let config = PipelineConfig {
            seed,
            output_dir,
            input,
            stages,
            scene,
            temp_k,
            median_filter,
            pca_k,
            select,
            midway_levels,
            amsd,
            kmeans,
            spectral,
            mbo,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn runs(&self, stage: Stage) -> bool {
        self.stages.contains(&stage)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.runs(Stage::Synth) && self.input.is_none() {
            return Err(Error::invalid(
                "without the `synth` stage an `input` cube is required",
            ));
        }
        if self.runs(Stage::Synth) {
            self.scene.validate()?;
        }
        if !(self.temp_k > 0.0) {
            return Err(Error::invalid(format!(
                "convert.temp_k must be positive, got {}",
                self.temp_k
            )));
        }
        let needs_pca = [Stage::Midway, Stage::Kmeans, Stage::Spectral, Stage::Mbo];
        if needs_pca.iter().any(|&s| self.runs(s)) && !self.runs(Stage::Pca) {
            return Err(Error::invalid(
                "midway and the segmentation stages need the `pca` stage",
            ));
        }
        if let MboInput::Scores(n) = self.mbo.input {
            if n == 0 || n > self.pca_k {
                return Err(Error::invalid(format!(
                    "mbo.components {n} must lie in 1..={}",
                    self.pca_k
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.amsd.threshold_quantile) {
            return Err(Error::invalid("amsd.threshold_quantile must lie in [0, 1]"));
        }
        if self.runs(Stage::Mbo) {
            self.mbo.segment.mbo.validate()?;
        }
        Ok(())
    }
}

fn prefix_error(prefix: &str, e: Error) -> Error {
    match e {
        Error::InvalidInput(msg) => Error::invalid(msg.replacen('`', &format!("`{prefix}"), 1)),
        other => other,
    }
}

/// `landmarks == 0` selects the exact solver.
pub fn solver_for(landmarks: usize, seed: u64, rcond: f64) -> Eigensolver {
    if landmarks == 0 {
        Eigensolver::Exact
    } else {
        Eigensolver::Nystrom(NystromConfig::new(landmarks, seed).with_rcond(rcond))
    }
}

/// Substitutes a frame number into a printf-style `%0Nd` (or `%d`) pattern.
pub fn frame_path(pattern: &str, t: usize) -> String {
    if let Some(pos) = pattern.find('%') {
        let rest = &pattern[pos + 1..];
        if let Some(d) = rest.find('d') {
            let spec = &rest[..d];
            if spec.chars().all(|c| c.is_ascii_digit()) {
                let width: usize = spec.trim_start_matches('0').parse().unwrap_or(0);
                return format!("{}{:0width$}{}", &pattern[..pos], t, &rest[d + 1..]);
            }
        }
    }
    format!("{pattern}.{t:04}")
}

const PALETTE: [[f64; 3]; 10] = [
    [0.90, 0.10, 0.10],
    [0.10, 0.60, 0.90],
    [0.20, 0.80, 0.20],
    [0.95, 0.75, 0.10],
    [0.60, 0.20, 0.80],
    [0.10, 0.85, 0.80],
    [0.95, 0.45, 0.70],
    [0.55, 0.35, 0.15],
    [0.50, 0.50, 0.50],
    [1.00, 1.00, 1.00],
];

/// Label colours blended half-and-half with the frame's luminance.
pub fn label_overlay(frame: &Raster, labels: &Labeling) -> Result<Raster> {
    if (frame.height, frame.width) != (labels.height, labels.width) {
        return Err(Error::dims("overlay frame and labeling differ in size"));
    }
    let c = frame.channels;
    let mut data = Vec::with_capacity(labels.labels.len() * 3);
    for (i, &l) in labels.labels.iter().enumerate() {
        let px = &frame.data[i * c..(i + 1) * c];
        let lum = px.iter().sum::<f64>() / c as f64;
        let col = PALETTE[l % PALETTE.len()];
        data.extend(col.iter().map(|v| 0.5 * v + 0.5 * lum));
    }
    Raster::new(frame.height, frame.width, 3, data)
}

/// `stage,seconds` rows in execution order.
pub fn report_timings(stage_durations: &[(String, f64)]) -> String {
    let mut s = String::from("stage,seconds\n");
    for (stage, secs) in stage_durations {
        s.push_str(&format!("{stage},{:.6}\n", secs.max(0.0)));
    }
    s
}

#[derive(Debug, Clone, Default)]
pub struct PipelineReport {
    pub timings: Vec<(String, f64)>,
    pub artifacts: Vec<PathBuf>,
}

#[derive(Default)]
struct State {
    cube: Option<HyperCube>,
    truth: Option<GroundTruth>,
    scores: Option<HyperCube>,
    video: Option<FalseColorVideo>,
    equalized: Option<FalseColorVideo>,
}

struct Runner<'a> {
    cfg: &'a PipelineConfig,
    state: State,
    artifacts: Vec<PathBuf>,
}

impl Runner<'_> {
    fn out(&mut self, name: String) -> PathBuf {
        let p = self.cfg.output_dir.join(name);
        self.artifacts.push(p.clone());
        p
    }

    fn cube(&self) -> Result<&HyperCube> {
        self.state
            .cube
            .as_ref()
            .ok_or_else(|| Error::invalid("no input cube"))
    }

    fn video(&self) -> Result<&FalseColorVideo> {
        self.state
            .equalized
            .as_ref()
            .or(self.state.video.as_ref())
            .ok_or_else(|| Error::invalid("no false-colour video; run `pca` first"))
    }

    fn run(&mut self, stage: Stage) -> Result<()> {
        match stage {
            Stage::Synth => self.synth(),
            Stage::Convert => self.convert(),
            Stage::Pca => self.pca(),
            Stage::Midway => self.midway(),
            Stage::Amsd => self.amsd(),
            Stage::Kmeans => self.kmeans(),
            Stage::Spectral => self.spectral(),
            Stage::Mbo => self.mbo(),
        }
    }

    fn synth(&mut self) -> Result<()> {
        let (cube, truth) = generate(&self.cfg.scene)?;
        let p = self.out("radiance.hsc".into());
        write_cube(&cube, p)?;
        for (t, m) in truth.masks.iter().enumerate() {
            let p = self.out(format!("truth_{t:04}.pgm"));
            emit_image(&Raster::from_mask(truth.height, truth.width, m)?, p)?;
        }
        let rows: Vec<Vec<String>> = cube
            .wavelengths()
            .iter()
            .zip(&truth.signature)
            .map(|(w, s)| vec![format!("{w}"), format!("{s:e}")])
            .collect();
        let p = self.out("signature.csv".into());
        write_csv(p, &["wavelength_nm", "emissivity"], &rows)?;
        self.state.cube = Some(cube);
        self.state.truth = Some(truth);
        Ok(())
    }

    fn convert(&mut self) -> Result<()> {
        let cube = self.cube()?;
        if cube.kind() != CubeKind::Radiance {
            return Err(Error::invalid("convert needs a radiance cube"));
        }
        let res = radiance_to_emissivity(cube, self.cfg.temp_k)?;
        info!("{} pixels flagged outside [0, 1]", res.outlier_count());
        let em = if self.cfg.median_filter {
            spectral_median_filter_3x3(&res)
        } else {
            res.cube
        };
        let p = self.out("emissivity.hsc".into());
        write_cube(&em, p)?;
        self.state.cube = Some(em);
        Ok(())
    }

    fn pca(&mut self) -> Result<()> {
        let cube = self.cube()?;
        let model = fit_pca(cube, self.cfg.pca_k)?;
        let scores = project(cube, &model)?;
        let video = false_color(&scores, self.cfg.select)?;
        let rows: Vec<Vec<String>> = model
            .eigenvalues
            .iter()
            .enumerate()
            .map(|(j, l)| vec![(j + 1).to_string(), format!("{l:e}")])
            .collect();
        let p = self.out("pca_eigenvalues.csv".into());
        write_csv(p, &["component", "eigenvalue"], &rows)?;
        let p = self.out("scores.hsc".into());
        write_cube(&scores, p)?;
        for t in 0..video.frames() {
            let p = self.out(format!("rgb_{t:04}.ppm"));
            emit_image(&video.frame(t), p)?;
        }
        self.state.scores = Some(scores);
        self.state.video = Some(video);
        Ok(())
    }

    fn midway(&mut self) -> Result<()> {
        let video = self
            .state
            .video
            .as_ref()
            .ok_or_else(|| Error::invalid("no video"))?;
        let (eq, _) = midway_equalize_with(video, self.cfg.midway_levels)?;
        for t in 0..eq.frames() {
            let p = self.out(format!("eq_{t:04}.ppm"));
            emit_image(&eq.frame(t), p)?;
        }
        self.state.equalized = Some(eq);
        Ok(())
    }

    fn amsd(&mut self) -> Result<()> {
        let cfg = &self.cfg.amsd;
        let cube = self.cube()?;
        let signature = match (&cfg.target, &self.state.truth) {
            (Some(path), _) => read_signature_column(path)?,
            (None, Some(truth)) => truth.signature.clone(),
            (None, None) => return Err(Error::invalid("amsd needs `amsd.target`")),
        };
        let pre = match (cfg.pre_frames, &self.state.truth) {
            (Some(r), _) => r.resolve(cube.frames())?,
            (
                None,
                Some(GroundTruth {
                    release_frame: Some(r),
                    ..
                }),
            ) if *r > 0 => 0..*r,
            _ => return Err(Error::invalid("amsd needs `amsd.pre_frames`")),
        };
        let background =
            estimate_background(&cube.sub_frames(pre.start, pre.end)?, cfg.background_dim)?;
        let model = SubspaceModel::from_signature(&signature, background, 0.0)?;
        let mut maps = (0..cube.frames())
            .into_par_iter()
            .map(|t| detect(&cube.frame(t), &model))
            .collect::<Result<Vec<_>>>()?;
        let all: Vec<f64> = maps
            .iter()
            .flat_map(|m| m.statistic.iter().copied())
            .filter(|v| v.is_finite())
            .collect();
        let thr = quantile(&all, cfg.threshold_quantile)?;
        let mut rows = Vec::new();
        for (t, m) in maps.iter_mut().enumerate() {
            m.rethreshold(thr);
            rows.push(vec![
                t.to_string(),
                m.mask.iter().filter(|&&x| x).count().to_string(),
            ]);
            let p = self.out(format!("amsd_{t:04}.pgm"));
            emit_image(&Raster::from_mask(m.height, m.width, &m.mask)?, p)?;
        }
        let p = self.out("amsd_detections.csv".into());
        write_csv(p, &["frame", "detections"], &rows)?;
        Ok(())
    }

    fn kmeans(&mut self) -> Result<()> {
        let st = self
            .cfg
            .kmeans
            .as_ref()
            .ok_or_else(|| Error::invalid("missing kmeans.k"))?;
        let video = self.video()?;
        let range = st.frames.resolve(video.frames())?;
        let results = range
            .clone()
            .into_par_iter()
            .map(|t| {
                let f = st.features.apply(&video.frame_features(t));
                let cfg =
                    KMeansConfig::new(st.k, st.metric, self.cfg.seed).with_restarts(st.restarts);
                kmeans(&f, &cfg).map_err(|e| Error::invalid(format!("frame {t}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let frames: Vec<Raster> = range.clone().map(|t| video.frame(t)).collect();
        for ((t, res), frame) in range.zip(results).zip(frames) {
            let p = self.out(format!("kmeans_{t:04}.csv"));
            emit_labeling_csv(&res.labeling, p)?;
            let p = self.out(format!("kmeans_{t:04}.ppm"));
            emit_image(&label_overlay(&frame, &res.labeling)?, p)?;
        }
        Ok(())
    }

    fn spectral(&mut self) -> Result<()> {
        let st = self
            .cfg
            .spectral
            .as_ref()
            .ok_or_else(|| Error::invalid("missing spectral.k"))?;
        let video = self.video()?;
        let range = st.frames.resolve(video.frames())?;
        let cfg = SpectralConfig {
            eigs: st.eigs,
            solver: solver_for(st.landmarks, self.cfg.seed, st.rcond),
            restarts: st.restarts,
            ..SpectralConfig::new(st.k, st.metric, st.sigma, self.cfg.seed)
        };
        let results = range
            .clone()
            .into_par_iter()
            .map(|t| {
                let f = st.features.apply(&video.frame_features(t));
                spectral_cluster(&f, &cfg).map_err(|e| Error::invalid(format!("frame {t}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let frames: Vec<Raster> = range.clone().map(|t| video.frame(t)).collect();
        let (h, w) = (video.height(), video.width());
        for ((t, (labels, eigs)), frame) in range.zip(results).zip(frames) {
            let p = self.out(format!("spectral_{t:04}.csv"));
            emit_labeling_csv(&labels, p)?;
            let p = self.out(format!("spectral_{t:04}.ppm"));
            emit_image(&label_overlay(&frame, &labels)?, p)?;
            for (j, img) in eigenvector_images(&eigs, h, w)?.iter().enumerate() {
                let p = self.out(format!("eigvec_{t:04}_{j:02}.pgm"));
                emit_image(img, p)?;
            }
        }
        Ok(())
    }

    fn mbo(&mut self) -> Result<()> {
        let st = &self.cfg.mbo;
        let features: Vec<FeatureImage> = match st.input {
            MboInput::Scores(n) => {
                let scores = self
                    .state
                    .scores
                    .as_ref()
                    .ok_or_else(|| Error::invalid("no scores"))?;
                (0..scores.frames())
                    .map(|t| leading_bands(&scores.frame(t), n))
                    .collect()
            }
            MboInput::FalseColor => {
                let v = self.video()?;
                (0..v.frames()).map(|t| v.frame_features(t)).collect()
            }
        };
        let range = st.frames.resolve(features.len())?;
        let first = range.start.saturating_sub(1);
        let segs = if range.end - first >= 2 {
            segment_video(&features[first..range.end], &st.segment)?
        } else {
            segment_video(&features[..2], &st.segment)?
                .into_iter()
                .take(1)
                .collect()
        };
        let skip = range.start - first;
        let mut trace = Vec::new();
        let mut summary = Vec::new();
        for (t, seg) in range.clone().zip(segs.into_iter().skip(skip)) {
            let mask = seg.field.mask();
            let p = self.out(format!("mbo_{t:04}.pgm"));
            emit_image(
                &Raster::from_mask(seg.field.height, seg.field.width, &mask)?,
                p,
            )?;
            let (iters, conv, coll) = match &seg.result {
                Some(r) => {
                    for (i, e) in r.gl_trace.iter().enumerate() {
                        trace.push(vec![
                            t.to_string(),
                            i.to_string(),
                            format!("{:e}", e.dirichlet),
                            format!("{:e}", e.potential),
                            format!("{:e}", e.fidelity),
                            format!("{:e}", e.total()),
                        ]);
                    }
                    if r.collapsed {
                        warn!("frame {t}: segmentation collapsed to a single phase");
                    }
                    (r.iterations, r.converged, r.collapsed)
                }
                None => (0, true, false),
            };
            summary.push(vec![
                t.to_string(),
                iters.to_string(),
                conv.to_string(),
                coll.to_string(),
                mask.iter().filter(|&&m| m).count().to_string(),
            ]);
        }
        let p = self.out("gl_trace.csv".into());
        write_csv(
            p,
            &[
                "frame",
                "iteration",
                "dirichlet",
                "potential",
                "fidelity",
                "total",
            ],
            &trace,
        )?;
        let p = self.out("mbo_summary.csv".into());
        write_csv(
            p,
            &[
                "frame",
                "iterations",
                "converged",
                "collapsed",
                "plume_pixels",
            ],
            &summary,
        )?;
        Ok(())
    }
}

/// Reads a signature CSV, accepting either one value per row or
/// `wavelength,value` pairs with a header (as written by the synth stage).
pub fn read_signature_column(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(&path)?;
    let first = text
        .lines()
        .find(|l| !l.trim().is_empty() && !l.trim().starts_with('#'));
    let two_col = first
        .is_some_and(|l| l.contains(',') && l.split(',').any(|f| f.trim().parse::<f64>().is_err()));
    if !two_col {
        return read_signature_csv(path);
    }
    text.lines()
        .skip_while(|l| Some(*l) != first)
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .nth(1)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::invalid(format!("bad signature row {l:?}")))
        })
        .collect()
}

/// Keeps the first `n` bands of every pixel.
pub fn leading_bands(f: &FeatureImage, n: usize) -> FeatureImage {
    let n = n.min(f.dim);
    let data = (0..f.len())
        .flat_map(|i| f.pixel(i)[..n].to_vec())
        .collect();
    FeatureImage {
        height: f.height,
        width: f.width,
        dim: n,
        data,
    }
}

/// Runs the selected stages in order, stopping at the first failure.
///
/// Artifacts of completed stages stay on disk when a later stage fails.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineReport> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let mut runner = Runner {
        cfg,
        state: State::default(),
        artifacts: Vec::new(),
    };
    if !cfg.runs(Stage::Synth) {
        let path = cfg.input.as_ref().expect("validated");
        runner.state.cube = Some(read_cube(path).map_err(|e| Error::Stage {
            stage: "input".into(),
            source: Box::new(e),
        })?);
    }
    let mut timings = Vec::new();
    let timing_path = cfg.output_dir.join("timings.csv");
    for &stage in &cfg.stages {
        info!("stage {stage}");
        let start = Instant::now();
        let res = runner.run(stage);
        timings.push((stage.name().to_string(), start.elapsed().as_secs_f64()));
        if let Err(e) = res {
            std::fs::write(&timing_path, report_timings(&timings))?;
            return Err(Error::Stage {
                stage: stage.name().into(),
                source: Box::new(e),
            });
        }
    }
    std::fs::write(&timing_path, report_timings(&timings))?;
    runner.artifacts.push(timing_path);
    Ok(PipelineReport {
        timings,
        artifacts: runner.artifacts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_ranges() {
        assert_eq!(
            "2..5".parse::<FrameRange>().unwrap().resolve(10).unwrap(),
            2..5
        );
        assert_eq!(
            "3..".parse::<FrameRange>().unwrap().resolve(10).unwrap(),
            3..10
        );
        assert_eq!(
            "all".parse::<FrameRange>().unwrap().resolve(4).unwrap(),
            0..4
        );
        assert_eq!(
            "7".parse::<FrameRange>().unwrap().resolve(10).unwrap(),
            7..8
        );
        assert!("5..2".parse::<FrameRange>().unwrap().resolve(10).is_err());
        assert!("0..11".parse::<FrameRange>().unwrap().resolve(10).is_err());
        assert!("x..2".parse::<FrameRange>().is_err());
    }

    #[test]
    fn frame_patterns() {
        assert_eq!(frame_path("out_%04d.pgm", 7), "out_0007.pgm");
        assert_eq!(frame_path("m%d.pgm", 12), "m12.pgm");
        assert_eq!(frame_path("plain.pgm", 3), "plain.pgm.0003");
    }

    #[test]
    fn timing_report_format() {
        assert_eq!(report_timings(&[]), "stage,seconds\n");
        let s = report_timings(&[("synth".into(), 0.5), ("pca".into(), 1.25)]);
        assert_eq!(s, "stage,seconds\nsynth,0.500000\npca,1.250000\n");
    }

    fn base() -> KvConfig {
        KvConfig::parse("output_dir = /tmp/x\nkmeans.k = 3\nspectral.k = 3").unwrap()
    }

    #[test]
    fn config_defaults_and_stage_order() {
        let mut kv = base();
        kv.set("stages", "pca,synth,convert");
        let c = PipelineConfig::from_kv(kv).unwrap();
        assert_eq!(c.stages, vec![Stage::Synth, Stage::Convert, Stage::Pca]);
        assert_eq!(c.temp_k, 300.0);
        assert_eq!(c.select, ComponentSelection([1, 3, 5]));
        assert_eq!(c.spectral.unwrap().eigs, 3);
    }

    #[test]
    fn config_rejects_unknown_and_missing() {
        let mut kv = base();
        kv.set("mbo.bogus", "1");
        assert!(PipelineConfig::from_kv(kv).is_err());
        let mut kv = base();
        kv.set("synth.bogus", "1");
        let err = PipelineConfig::from_kv(kv).unwrap_err().to_string();
        assert!(err.contains("synth.bogus"), "{err}");
        let kv = KvConfig::parse("output_dir = /tmp/x\nspectral.k = 2").unwrap();
        assert!(PipelineConfig::from_kv(kv)
            .unwrap_err()
            .to_string()
            .contains("kmeans.k"));
        let kv = KvConfig::parse("kmeans.k = 2\nspectral.k = 2").unwrap();
        assert!(PipelineConfig::from_kv(kv).is_err());
        let kv = KvConfig::parse("output_dir = o\nstages = convert").unwrap();
        assert!(PipelineConfig::from_kv(kv).is_err());
    }

    #[test]
    fn overlay_uses_palette() {
        let frame = Raster::gray(1, 2, vec![0.0, 1.0]).unwrap();
        let labels = Labeling::new(1, 2, 2, vec![0, 1]).unwrap();
        let o = label_overlay(&frame, &labels).unwrap();
        assert_eq!(o.channels, 3);
        assert!((o.data[0] - 0.45).abs() < 1e-12);
        assert!((o.data[3] - 0.55).abs() < 1e-12);
    }

    #[test]
    fn leading_bands_truncates() {
        let f = FeatureImage::new(1, 2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let g = leading_bands(&f, 2);
        assert_eq!(g.data, vec![1.0, 2.0, 4.0, 5.0]);
    }
}
