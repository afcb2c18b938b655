//! `plumeseg`: hyperspectral plume segmentation from the command line.
//!
//! Thread count follows `RAYON_NUM_THREADS`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use plumeseg::amsd::{detect, estimate_background, SubspaceModel};
use plumeseg::cluster::{
    eigenvector_images, kmeans, spectral_cluster, KMeansConfig, SpectralConfig,
};
use plumeseg::config::KvConfig;
use plumeseg::dimred::{false_color, fit_pca, project, ComponentSelection};
use plumeseg::graph::{Metric, DEFAULT_RCOND};
use plumeseg::io::{emit_image, emit_labeling_csv, read_cube, read_image, write_csv, write_cube};
use plumeseg::mbo::{segment_video, MboConfig, SegmentConfig};
use plumeseg::midway::{midway_equalize_with, DEFAULT_LEVELS};
use plumeseg::pipeline::{
    frame_path, label_overlay, leading_bands, read_signature_column, run_pipeline, solver_for,
    FeatureMode, FrameRange, PipelineConfig,
};
use plumeseg::radiometry::{radiance_to_emissivity, spectral_median_filter_3x3};
use plumeseg::stats::quantile;
use plumeseg::synth::{generate, SceneSpec};
use plumeseg::types::min_max_normalize;
use plumeseg::{FalseColorVideo, FeatureImage, Raster};

#[derive(Parser)]
#[command(
    name = "plumeseg",
    version,
    about = "Hyperspectral video plume segmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic plume scene and its ground-truth masks.
    Synth(SynthArgs),
    /// Convert a radiance cube to emissivity.
    Convert(ConvertArgs),
    /// Run the adaptive matched subspace detector.
    Amsd(AmsdArgs),
    /// Project onto principal components and write false-colour frames.
    Pca(PcaArgs),
    /// Midway-equalize a sequence of PPM frames.
    Midway(MidwayArgs),
    /// K-means clustering of one frame.
    Kmeans(KmeansArgs),
    /// Spectral clustering of one frame.
    Spectral(SpectralArgs),
    /// Graph MBO plume segmentation of a video.
    Mbo(MboArgs),
    /// Smallest eigenpairs of a frame's graph Laplacian.
    GraphEigs(GraphEigsArgs),
    /// Run the configured chain of stages.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Scene config (`key = value` lines); defaults to the desk scene.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a scene key, e.g. `--set plume.peak=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the plume signature sampled at the band wavelengths.
    #[arg(long)]
    signature: Option<PathBuf>,
    output: PathBuf,
    /// Mask pattern such as `truth_%04d.pgm`.
    masks: String,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long, default_value_t = 300.0)]
    temp_k: f64,
    /// Skip the 3×3 spectral median filter on out-of-range pixels.
    #[arg(long)]
    no_filter: bool,
    input: PathBuf,
    output: PathBuf,
}

#[derive(Args)]
struct AmsdArgs {
    /// Target signature CSV.
    #[arg(long)]
    target: PathBuf,
    /// Target-free frames for the background subspace, `a..b`.
    #[arg(long)]
    pre_frames: FrameRange,
    #[arg(long, default_value_t = 4)]
    background_dim: usize,
    #[arg(long, default_value_t = 0.999)]
    threshold_quantile: f64,
    /// Frames to score; default all.
    #[arg(long, default_value = "all")]
    frames: FrameRange,
    input: PathBuf,
    /// Output mask; use a `%04d` pattern for more than one frame.
    output: String,
}

#[derive(Args)]
struct PcaArgs {
    #[arg(short, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value = "1,3,5")]
    select: ComponentSelection,
    input: PathBuf,
    scores: PathBuf,
    /// Frame pattern such as `rgb_%04d.ppm`.
    frames: String,
}

#[derive(Args)]
struct MidwayArgs {
    #[arg(long, default_value_t = DEFAULT_LEVELS)]
    levels: usize,
    /// First frame number of the input sequence.
    #[arg(long, default_value_t = 0)]
    start: usize,
    input: String,
    output: String,
}

#[derive(Args)]
struct FrameInput {
    /// Frame index within a cube input.
    #[arg(long, default_value_t = 0)]
    frame: usize,
    #[arg(long, default_value = "3x3")]
    features: FeatureMode,
    #[arg(long, default_value = "mcos")]
    metric: Metric,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// HSC1 cube or PPM/PGM image.
    input: PathBuf,
}

#[derive(Args)]
struct KmeansArgs {
    #[arg(short)]
    k: usize,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    #[command(flatten)]
    src: FrameInput,
    labels: PathBuf,
    overlay: PathBuf,
}

#[derive(Args)]
struct SpectralArgs {
    #[arg(short)]
    k: usize,
    /// Eigenvectors to compute; defaults to k.
    #[arg(long)]
    eigs: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Landmark count; 0 uses the exact eigensolver.
    #[arg(long, default_value_t = 0)]
    nystrom: usize,
    #[arg(long, default_value_t = DEFAULT_RCOND)]
    rcond: f64,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    /// Eigenvector image pattern such as `eig_%02d.pgm`.
    #[arg(long)]
    eigvecs: Option<String>,
    #[command(flatten)]
    src: FrameInput,
    labels: PathBuf,
    overlay: PathBuf,
}

#[derive(Args)]
struct MboArgs {
    #[arg(long, default_value = "all")]
    frames: FrameRange,
    #[arg(long, default_value_t = 30.0)]
    c1: f64,
    #[arg(long, default_value_t = 0.1)]
    dt: f64,
    #[arg(long, default_value_t = 3)]
    inner_steps: usize,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 100)]
    eigs: usize,
    #[arg(long, default_value_t = 300)]
    nystrom: usize,
    #[arg(long, default_value_t = DEFAULT_RCOND)]
    rcond: f64,
    #[arg(long, default_value_t = 0.2)]
    sigma: f64,
    #[arg(long, default_value = "euclidean")]
    metric: Metric,
    /// Leading bands of the input used as features.
    #[arg(long, default_value_t = 5)]
    components: usize,
    #[arg(long, default_value_t = 0.91)]
    init_quantile: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// GL energy trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Scores cube (HSC1).
    input: PathBuf,
    /// Mask pattern such as `masks_%04d.pgm`.
    masks: String,
}

#[derive(Args)]
struct GraphEigsArgs {
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 10)]
    eigs: usize,
    #[arg(long, default_value_t = 0)]
    nystrom: usize,
    #[arg(long, default_value_t = DEFAULT_RCOND)]
    rcond: f64,
    #[command(flatten)]
    src: FrameInput,
    output: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set kmeans.k=4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn apply_overrides(kv: &mut KvConfig, overrides: &[String]) -> Result<()> {
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .with_context(|| format!("override {o:?} is not KEY=VALUE"))?;
        kv.set(k.trim(), v.trim());
    }
    Ok(())
}

fn load_kv(path: Option<&Path>) -> Result<KvConfig> {
    Ok(match path {
        Some(p) => KvConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => KvConfig::default(),
    })
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut kv = load_kv(a.config.as_deref())?;
    apply_overrides(&mut kv, &a.overrides)?;
    let mut spec = SceneSpec::desk_default();
    spec.apply_config(&mut kv)?;
    kv.finish()?;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let (cube, truth) = generate(&spec)?;
    write_cube(&cube, &a.output)?;
    for (t, m) in truth.masks.iter().enumerate() {
        emit_image(
            &Raster::from_mask(truth.height, truth.width, m)?,
            frame_path(&a.masks, t),
        )?;
    }
    if let Some(p) = a.signature {
        let rows: Vec<Vec<String>> = cube
            .wavelengths()
            .iter()
            .zip(&truth.signature)
            .map(|(w, s)| vec![format!("{w}"), format!("{s:e}")])
            .collect();
        write_csv(p, &["wavelength_nm", "emissivity"], &rows)?;
    }
    Ok(())
}

fn convert(a: ConvertArgs) -> Result<()> {
    let cube = read_cube(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let res = radiance_to_emissivity(&cube, a.temp_k)?;
    log::info!("{} pixels flagged outside [0, 1]", res.outlier_count());
    let out = if a.no_filter {
        res.cube
    } else {
        spectral_median_filter_3x3(&res)
    };
    write_cube(&out, &a.output)?;
    Ok(())
}

fn check_pattern(pattern: &str, frames: usize) -> Result<()> {
    if frames > 1 && !pattern.contains('%') {
        bail!("{frames} frames selected; output {pattern:?} needs a `%04d` frame pattern");
    }
    Ok(())
}

fn amsd(a: AmsdArgs) -> Result<()> {
    let cube = read_cube(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let signature = read_signature_column(&a.target)?;
    let pre = a.pre_frames.resolve(cube.frames())?;
    let range = a.frames.resolve(cube.frames())?;
    check_pattern(&a.output, range.len())?;
    let background = estimate_background(&cube.sub_frames(pre.start, pre.end)?, a.background_dim)?;
    let model = SubspaceModel::from_signature(&signature, background, 0.0)?;
    let mut maps = Vec::new();
    for t in range.clone() {
        maps.push(detect(&cube.frame(t), &model)?);
    }
    let all: Vec<f64> = maps
        .iter()
        .flat_map(|m| m.statistic.iter().copied())
        .filter(|v| v.is_finite())
        .collect();
    let thr = quantile(&all, a.threshold_quantile)?;
    for (t, mut m) in range.zip(maps) {
        m.rethreshold(thr);
        let path = if a.output.contains('%') {
            frame_path(&a.output, t)
        } else {
            a.output.clone()
        };
        emit_image(&Raster::from_mask(m.height, m.width, &m.mask)?, path)?;
    }
    Ok(())
}

fn pca(a: PcaArgs) -> Result<()> {
    let cube = read_cube(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let model = fit_pca(&cube, a.k)?;
    let scores = project(&cube, &model)?;
    write_cube(&scores, &a.scores)?;
    let video = false_color(&scores, a.select)?;
    check_pattern(&a.frames, video.frames())?;
    for t in 0..video.frames() {
        emit_image(&video.frame(t), frame_path(&a.frames, t))?;
    }
    Ok(())
}

fn midway(a: MidwayArgs) -> Result<()> {
    let mut frames = Vec::new();
    loop {
        let p = frame_path(&a.input, a.start + frames.len());
        if !Path::new(&p).exists() {
            break;
        }
        frames.push(read_image(&p).with_context(|| format!("reading {p}"))?);
        if !a.input.contains('%') {
            break;
        }
    }
    if frames.is_empty() {
        bail!("no input frames match {:?}", a.input);
    }
    let video = FalseColorVideo::from_frames(&frames)?;
    let (eq, _) = midway_equalize_with(&video, a.levels)?;
    check_pattern(&a.output, eq.frames())?;
    for t in 0..eq.frames() {
        emit_image(&eq.frame(t), frame_path(&a.output, a.start + t))?;
    }
    Ok(())
}

/// Features for clustering plus a displayable raster of the same frame.
fn load_frame(src: &FrameInput) -> Result<(FeatureImage, Raster)> {
    let ext = src.input.extension().and_then(|e| e.to_str()).unwrap_or("");
    let (frame, display) = if matches!(ext, "ppm" | "pgm") {
        let r = read_image(&src.input)?;
        let f = FeatureImage::new(r.height, r.width, r.channels, r.data.clone())?;
        (f, r)
    } else {
        let cube =
            read_cube(&src.input).with_context(|| format!("reading {}", src.input.display()))?;
        if src.frame >= cube.frames() {
            bail!(
                "frame {} requested but the cube has {}",
                src.frame,
                cube.frames()
            );
        }
        let f = cube.frame(src.frame);
        let display = display_raster(&f)?;
        (f, display)
    };
    Ok((src.features.apply(&frame), display))
}

fn display_raster(f: &FeatureImage) -> Result<Raster> {
    let chans: Vec<Vec<f64>> = (0..f.dim.min(3))
        .map(|b| min_max_normalize(&(0..f.len()).map(|i| f.pixel(i)[b]).collect::<Vec<_>>()))
        .collect();
    if chans.len() < 3 {
        return Ok(Raster::gray(f.height, f.width, chans[0].clone())?);
    }
    let data = (0..f.len())
        .flat_map(|i| chans.iter().map(move |c| c[i]))
        .collect();
    Ok(Raster::new(f.height, f.width, 3, data)?)
}

fn kmeans_cmd(a: KmeansArgs) -> Result<()> {
    let (f, display) = load_frame(&a.src)?;
    let cfg = KMeansConfig::new(a.k, a.src.metric, a.src.seed).with_restarts(a.restarts);
    let res = kmeans(&f, &cfg)?;
    log::info!(
        "cost {:e} after {} iterations (converged: {})",
        res.cost,
        res.iterations,
        res.converged
    );
    emit_labeling_csv(&res.labeling, &a.labels)?;
    emit_image(&label_overlay(&display, &res.labeling)?, &a.overlay)?;
    Ok(())
}

fn spectral_cmd(a: SpectralArgs) -> Result<()> {
    let (f, display) = load_frame(&a.src)?;
    let cfg = SpectralConfig {
        eigs: a.eigs.unwrap_or(a.k),
        solver: solver_for(a.nystrom, a.src.seed, a.rcond),
        restarts: a.restarts,
        ..SpectralConfig::new(a.k, a.src.metric, a.sigma, a.src.seed)
    };
    let (labels, eigs) = spectral_cluster(&f, &cfg)?;
    emit_labeling_csv(&labels, &a.labels)?;
    emit_image(&label_overlay(&display, &labels)?, &a.overlay)?;
    if let Some(pattern) = a.eigvecs {
        for (j, img) in eigenvector_images(&eigs, f.height, f.width)?
            .iter()
            .enumerate()
        {
            emit_image(img, frame_path(&pattern, j))?;
        }
    }
    Ok(())
}

fn mbo_cmd(a: MboArgs) -> Result<()> {
    let cube = read_cube(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let range = a.frames.resolve(cube.frames())?;
    check_pattern(&a.masks, range.len())?;
    let cfg = SegmentConfig {
        mbo: MboConfig {
            c1: a.c1,
            dt: a.dt,
            inner_steps: a.inner_steps,
            max_outer_iters: a.max_iters,
            stop_tol: a.tol,
        },
        eigs: a.eigs,
        metric: a.metric,
        sigma: a.sigma,
        solver: solver_for(a.nystrom, a.seed, a.rcond),
        init_quantile: a.init_quantile,
    };
    let first = range.start.saturating_sub(1);
    let features: Vec<FeatureImage> = (first..range.end.max(first + 2).min(cube.frames()))
        .map(|t| leading_bands(&cube.frame(t), a.components))
        .collect();
    let segs = segment_video(&features, &cfg)?;
    let mut trace = Vec::new();
    for (t, seg) in range
        .clone()
        .zip(segs.into_iter().skip(range.start - first))
    {
        let mask = seg.field.mask();
        emit_image(
            &Raster::from_mask(seg.field.height, seg.field.width, &mask)?,
            frame_path(&a.masks, t),
        )?;
        if let Some(r) = seg.result {
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
        }
    }
    if let Some(p) = a.trace {
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
    }
    Ok(())
}

fn graph_eigs(a: GraphEigsArgs) -> Result<()> {
    let (f, _) = load_frame(&a.src)?;
    let cfg = SegmentConfig {
        eigs: a.eigs,
        metric: a.src.metric,
        sigma: a.sigma,
        solver: solver_for(a.nystrom, a.src.seed, a.rcond),
        ..SegmentConfig::default()
    };
    let eigs = plumeseg::mbo::frame_eigs(&f, &cfg)?;
    let mut header = vec!["index".to_string(), "eigenvalue".to_string()];
    header.extend((0..eigs.nodes()).map(|i| format!("v{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = (0..eigs.count())
        .map(|k| {
            let mut row = vec![k.to_string(), format!("{:e}", eigs.values[k])];
            row.extend(eigs.vector(k).iter().map(|v| format!("{v:e}")));
            row
        })
        .collect();
    write_csv(&a.output, &header, &rows)?;
    Ok(())
}

fn pipeline(a: PipelineArgs) -> Result<()> {
    let mut kv = load_kv(a.config.as_deref())?;
    apply_overrides(&mut kv, &a.overrides)?;
    if let Some(s) = a.seed {
        kv.set("seed", s.to_string());
    }
    if let Some(o) = a.out {
        kv.set("output_dir", o.to_string_lossy().into_owned());
    }
    let cfg = PipelineConfig::from_kv(kv)?;
    let report = run_pipeline(&cfg)?;
    for (stage, secs) in &report.timings {
        println!("{stage:<10} {secs:>10.3} s");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Convert(a) => convert(a),
        Command::Amsd(a) => amsd(a),
        Command::Pca(a) => pca(a),
        Command::Midway(a) => midway(a),
        Command::Kmeans(a) => kmeans_cmd(a),
        Command::Spectral(a) => spectral_cmd(a),
        Command::Mbo(a) => mbo_cmd(a),
        Command::GraphEigs(a) => graph_eigs(a),
        Command::Pipeline(a) => pipeline(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
