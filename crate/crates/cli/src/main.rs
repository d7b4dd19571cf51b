use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use lcamv::cam_lca::{calibrate_cam_lca, CamLcaModel};
use lcamv::eval::{fit_plane, plane_error_map, roi_points, run_pipeline, CalibrationBundle, Mode, PipelineConfig};
use lcamv::fusion::{monte_carlo_ci, McCiConfig};
use lcamv::io::{self, BitDepth, ConfigFile, CornerFile};
use lcamv::noise::{estimate_pixel_noise, fit_noise_model, NoiseParams, RgbNoise};
use lcamv::phase::{decode_channel, phase_to_pixel, DecodeOptions, FringeConfig};
use lcamv::prj_lca::{pose_samples, MomentAccumulator, PrjLcaMaps};
use lcamv::simulator::{
    self, compact_rig, default_rig, fringe_for, make_colorboard_scene, render, render_flat_pair, synthetic_corners,
    typical_cam_lca_model, OrderFault, PrjLcaTruth, Scene, SceneGeometry, SimManifest,
};
use lcamv::{Channel, ChannelRaster, Roi, StereoCalibration};

#[derive(Parser)]
#[command(name = "lcamv", version, about = "Structured-light reconstruction with chromatic-aberration correction and RGB fusion")]
struct Cli {
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true, env = "LCAMV_THREADS")]
    threads: Option<usize>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset.
    Simulate(SimulateArgs),
    /// Fit camera LCA from corner correspondences.
    CalibCamLca(CalibCamArgs),
    /// Fit projector LCA maps from plane poses.
    CalibPrjLca(CalibPrjArgs),
    /// Fit per-channel noise coefficients from flat-field pairs.
    CalibNoise(CalibNoiseArgs),
    /// Reconstruct a point cloud from a capture directory.
    Reconstruct(ReconstructArgs),
    /// Fit a plane to a depth map region and report the error.
    EvalPlane(EvalPlaneArgs),
    /// Monte-Carlo study of the decoded phase confidence interval.
    McCi(McCiArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Preset {
    /// White plane.
    White,
    /// Plane with a board of random colour patches.
    Colorboard,
    /// Flat-field image pairs for noise calibration.
    Flat,
    /// White plane poses for projector LCA calibration.
    PrjCal,
    /// Corner correspondences for camera LCA calibration.
    Corners,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RigChoice {
    Default,
    Compact,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Bits {
    #[value(name = "8")]
    Eight,
    #[value(name = "16")]
    Sixteen,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "white")]
    preset: Preset,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value = "default")]
    rig: RigChoice,
    /// Phase steps per period.
    #[arg(long, default_value_t = 3)]
    steps: usize,
    /// Plane depth (mm) for single-plane presets.
    #[arg(long, default_value_t = 320.0)]
    depth: f64,
    /// Render without noise.
    #[arg(long)]
    noiseless: bool,
    /// Render without chromatic aberration.
    #[arg(long)]
    no_lca: bool,
    /// PNG sample depth.
    #[arg(long, value_enum, default_value = "8")]
    bits: Bits,
    /// Flip the last gray-code bit of the red channel inside this rectangle.
    #[arg(long)]
    fault_roi: Option<Roi>,
    /// Flat-field levels (flat preset).
    #[arg(long, default_value_t = 40)]
    levels: usize,
    /// Plane poses (prj-cal preset).
    #[arg(long, default_value_t = 18)]
    poses: usize,
    /// Patch grid rows x cols (colorboard preset).
    #[arg(long, default_value = "6x8")]
    grid: String,
    /// Corner position jitter in pixels (corners preset).
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
}

#[derive(Args)]
struct CalibCamArgs {
    /// JSON with `reference`, `R` and `B` corner lists.
    #[arg(long)]
    corners: PathBuf,
    /// Calibration bundle to update.
    #[arg(long)]
    calib: PathBuf,
}

#[derive(Args, Clone)]
struct FringeArgs {
    /// Pipeline settings file (flat key = value).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    wavelength: Option<f64>,
    #[arg(long)]
    periods: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    min_modulation: Option<f64>,
    /// Fringe-order slip repair radius; 0 disables repair.
    #[arg(long)]
    repair_radius: Option<usize>,
}

#[derive(Args)]
struct CalibPrjArgs {
    /// Directory of `pose_NN` capture directories.
    #[arg(long)]
    poses: PathBuf,
    #[arg(long)]
    calib: PathBuf,
    /// Also write per-channel Pearson correlation maps to this directory.
    #[arg(long)]
    rho_out: Option<PathBuf>,
    #[command(flatten)]
    fringe: FringeArgs,
}

#[derive(Args)]
struct CalibNoiseArgs {
    /// Directory of `level_NN` flat-field pairs.
    #[arg(long)]
    flat: PathBuf,
    /// Uniformly lit rectangle `x0,y0,x1,y1`.
    #[arg(long)]
    roi: Roi,
    #[arg(long)]
    calib: PathBuf,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    calib: Option<PathBuf>,
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Output PLY.
    #[arg(short, long)]
    output: PathBuf,
    /// Also write the depth map (F32R).
    #[arg(long)]
    depth_out: Option<PathBuf>,
    /// Also write the fused column variance (F32R).
    #[arg(long)]
    variance_out: Option<PathBuf>,
    #[arg(long)]
    ci_multiplier: Option<f64>,
    #[command(flatten)]
    fringe: FringeArgs,
}

#[derive(Args)]
struct EvalPlaneArgs {
    /// Depth map (F32R).
    #[arg(long)]
    depth: PathBuf,
    #[arg(long)]
    calib: PathBuf,
    #[arg(long)]
    roi: Roi,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10_000)]
    subsample: usize,
    /// Write the report here (JSON, or CSV if the name ends in .csv).
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Write the signed error map (F32R).
    #[arg(long)]
    errors_out: Option<PathBuf>,
}

#[derive(Args)]
struct McCiArgs {
    #[arg(long, default_value_t = 0.0133)]
    k0: f64,
    #[arg(long, default_value_t = 0.1212)]
    k1: f64,
    #[arg(long, default_value_t = 8.0)]
    ia: f64,
    #[arg(long, default_value_t = 4.0)]
    ib: f64,
    #[arg(long, default_value_t = 3)]
    steps: usize,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 64)]
    grid: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV output.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .parse_default_env()
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::CalibCamLca(a) => calib_cam(a),
        Command::CalibPrjLca(a) => calib_prj(a),
        Command::CalibNoise(a) => calib_noise(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::EvalPlane(a) => eval_plane(a),
        Command::McCi(a) => mc_ci(a),
    }
}

fn bit_depth(b: Bits) -> BitDepth {
    match b {
        Bits::Eight => BitDepth::Eight,
        Bits::Sixteen => BitDepth::Sixteen,
    }
}

fn parse_grid(s: &str) -> Result<(usize, usize)> {
    let (r, c) = s.split_once(['x', 'X']).context("grid must look like ROWSxCOLS")?;
    Ok((r.trim().parse()?, c.trim().parse()?))
}

fn write_truth(dir: &Path, truth: &simulator::GroundTruth) -> Result<()> {
    let t = dir.join("truth");
    io::write_f32r(&t.join("depth.f32r"), &truth.depth)?;
    io::write_f32r(&t.join("u_p.f32r"), &truth.u_p)?;
    io::write_f32r(&t.join("z_p.f32r"), &truth.z_p)?;
    io::write_f32r(&t.join("delta_R.f32r"), &truth.delta_r)?;
    io::write_f32r(&t.join("delta_B.f32r"), &truth.delta_b)?;
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let calib = match a.rig {
        RigChoice::Default => default_rig(),
        RigChoice::Compact => compact_rig(),
    };
    let fringe = fringe_for(&calib, a.steps);
    let base = match a.preset {
        Preset::Colorboard => {
            let (rows, cols) = parse_grid(&a.grid)?;
            make_colorboard_scene(rows, cols, a.seed)
        }
        _ => Scene {
            seed: a.seed,
            ..Scene::plane(a.depth)
        },
    };
    let scene = Scene {
        geometry: SceneGeometry::fronto_parallel(a.depth),
        noise: if a.noiseless { RgbNoise::zero() } else { RgbNoise::TABLE },
        cam_lca: if a.no_lca { CamLcaModel::identity() } else { typical_cam_lca_model(calib.cam_size()) },
        prj_lca: if a.no_lca { PrjLcaTruth::default() } else { PrjLcaTruth::typical() },
        quantize: matches!(a.bits, Bits::Eight),
        fault: a.fault_roi.map(|roi| OrderFault { channel: Channel::R, roi }),
        ..base
    };
    let out = &a.output;
    let depth = bit_depth(a.bits);
    let preset_name = a.preset.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default();
    io::save_bundle(&out.join("calib.json"), &CalibrationBundle::geometry_only(calib.clone()))?;
    io::save_bundle(&out.join("truth").join("calib.json"), &simulator::truth_bundle(&scene, &calib))?;
    io::write_json(&out.join("manifest.json"), &SimManifest::new(&preset_name, &scene, &calib, &fringe))?;
    match a.preset {
        Preset::White | Preset::Colorboard => {
            let stack = render(&scene, &calib, &fringe)?;
            io::write_capture(out, &stack.images, depth)?;
            write_truth(out, &stack.truth)?;
        }
        Preset::PrjCal => {
            for (i, z) in simulator::calibration_depths(a.poses, 180.0, 340.0).into_iter().enumerate() {
                log::info!("rendering pose {i} at {z:.1} mm");
                let pose = Scene {
                    geometry: SceneGeometry::fronto_parallel(z),
                    seed: a.seed.wrapping_add(i as u64),
                    ..scene.clone()
                };
                let stack = render(&pose, &calib, &fringe)?;
                io::write_capture(&out.join(format!("pose_{i:02}")), &stack.images, depth)?;
            }
        }
        Preset::Flat => {
            let levels = simulator::flat_levels(a.levels, 5.0, 245.0);
            for (i, &level) in levels.iter().enumerate() {
                let pair = render_flat_pair(&scene, &calib, level, i);
                let dir = out.join(format!("level_{i:02}"));
                for ch in Channel::ALL {
                    for (m, img) in pair[ch.index()].iter().enumerate() {
                        io::write_png(&dir.join(ch.name()).join(format!("pair_{m}.png")), img, depth)?;
                    }
                }
            }
            io::write_json(&out.join("levels.json"), &levels)?;
        }
        Preset::Corners => {
            let grid = (20, 10);
            let (reference, r) = synthetic_corners(calib.cam_size(), grid, &scene.cam_lca.r, a.jitter, a.seed);
            let (_, b) = synthetic_corners(calib.cam_size(), grid, &scene.cam_lca.b, a.jitter, a.seed ^ 0x9e37);
            let pts = |v: Vec<(f64, f64)>| v.into_iter().map(|(u, v)| [u, v]).collect();
            io::write_json(
                &out.join("corners.json"),
                &CornerFile {
                    reference: pts(reference),
                    r: pts(r),
                    b: pts(b),
                },
            )?;
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn load_or_fail(path: &Path) -> Result<CalibrationBundle> {
    io::load_bundle(path).with_context(|| format!("loading calibration bundle {}", path.display()))
}

fn calib_cam(a: CalibCamArgs) -> Result<()> {
    let corners: CornerFile = io::read_json(&a.corners)?;
    let reference: Vec<(f64, f64)> = corners.reference.iter().map(|p| (p[0], p[1])).collect();
    let fit = |obs: &[[f64; 2]], name: &str| -> Result<lcamv::cam_lca::CamLcaFit> {
        let obs: Vec<(f64, f64)> = obs.iter().map(|p| (p[0], p[1])).collect();
        let f = calibrate_cam_lca(&reference, &obs).with_context(|| format!("fitting channel {name}"))?;
        println!("{name}: rms {:.4} px after {} iterations", f.rms, f.iterations);
        Ok(f)
    };
    let r = fit(&corners.r, "R")?;
    let b = fit(&corners.b, "B")?;
    let mut bundle = load_or_fail(&a.calib)?;
    bundle.cam_lca = Some(CamLcaModel { r: r.params, b: b.params });
    io::save_bundle(&a.calib, &bundle)?;
    Ok(())
}

/// Fringe settings from flags, then the config file, then the dataset
/// manifest, in that order of precedence.
fn fringe_config(args: &FringeArgs, file: &ConfigFile, data_dir: Option<&Path>, prj_size: (usize, usize)) -> Result<FringeConfig> {
    let manifest: Option<FringeConfig> = data_dir
        .map(|d| d.join("manifest.json"))
        .filter(|p| p.exists())
        .map(|p| io::read_json::<serde_json::Value>(&p))
        .transpose()?
        .and_then(|v| serde_json::from_value(v.get("fringe")?.clone()).ok());
    let wavelength = args.wavelength.or(file.wavelength).or(manifest.map(|m| m.wavelength));
    let periods = args.periods.or(file.periods).or(manifest.map(|m| m.periods));
    let steps = args.steps.or(file.steps).or(manifest.map(|m| m.steps));
    match (wavelength, periods, steps) {
        (Some(w), Some(p), Some(s)) => Ok(FringeConfig::new(w, p, s, prj_size)?),
        _ => bail!("fringe wavelength, periods and steps are needed (flags, --config or a manifest.json)"),
    }
}

fn read_config_opt(path: Option<&PathBuf>) -> Result<ConfigFile> {
    Ok(match path {
        Some(p) => io::read_config(p)?,
        None => ConfigFile::default(),
    })
}

fn decode_opts(args: &FringeArgs, file: &ConfigFile) -> (DecodeOptions, Option<usize>) {
    let mut opts = DecodeOptions::default();
    if let Some(m) = args.min_modulation.or(file.min_modulation) {
        opts.min_modulation = m;
    }
    let radius = args
        .repair_radius
        .or(file.repair_radius)
        .unwrap_or(lcamv::eval::DEFAULT_REPAIR_RADIUS);
    (opts, (radius > 0).then_some(radius))
}

fn calib_prj(a: CalibPrjArgs) -> Result<()> {
    let mut bundle = load_or_fail(&a.calib)?;
    let file = read_config_opt(a.fringe.config.as_ref())?;
    let mut pose_dirs: Vec<PathBuf> = std::fs::read_dir(&a.poses)
        .with_context(|| format!("reading {}", a.poses.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("pose_")))
        .collect();
    pose_dirs.sort();
    if pose_dirs.len() < 2 {
        bail!("{}: need at least two pose_NN directories", a.poses.display());
    }
    let calib = bundle.stereo.clone();
    let fringe = fringe_config(&a.fringe, &file, Some(&a.poses), calib.prj_size())?;
    let (opts, radius) = decode_opts(&a.fringe, &file);
    let (pw, ph) = calib.prj_size();
    let mut acc = [MomentAccumulator::new(pw, ph), MomentAccumulator::new(pw, ph)];
    for dir in &pose_dirs {
        log::info!("decoding {}", dir.display());
        let images = io::read_capture(dir)?;
        let mut fields = Vec::with_capacity(3);
        for ch in Channel::ALL {
            let mut cap = images.channel(ch).clone();
            if let Some(p) = bundle.cam_lca.as_ref().and_then(|m| m.for_channel(ch)) {
                cap.fringes = cap.fringes.iter().map(|i| lcamv::cam_lca::correct_image(i, p)).collect();
                cap.gray = cap.gray.iter().map(|i| lcamv::cam_lca::correct_image(i, p)).collect();
            }
            let (phase, _) = decode_channel(&cap.fringes, &cap.gray, &fringe, opts, radius)
                .with_context(|| format!("decoding {} channel {}", dir.display(), ch))?;
            fields.push(phase_to_pixel(&phase, fringe.wavelength, ch));
        }
        for (slot, ci) in [(0usize, 0usize), (1, 2)] {
            let pose = pose_samples(&fields[1], &fields[ci], &calib)?;
            acc[slot].add_pose(&pose.delta, &pose.z_p)?;
        }
    }
    let maps = PrjLcaMaps {
        r: acc[0].fit(),
        b: acc[1].fit(),
    };
    for (name, m) in [("R", &maps.r), ("B", &maps.b)] {
        let s = m.stats();
        println!(
            "{name}: {} valid projector pixels, mean alpha {:.3e} px/mm, mean beta {:.4} px",
            s.valid, s.alpha_mean, s.beta_mean
        );
    }
    if let Some(dir) = &a.rho_out {
        io::write_f32r(&dir.join("rho_R.f32r"), &acc[0].correlation())?;
        io::write_f32r(&dir.join("rho_B.f32r"), &acc[1].correlation())?;
    }
    bundle.prj_lca = Some(maps);
    io::save_bundle(&a.calib, &bundle)?;
    Ok(())
}

fn calib_noise(a: CalibNoiseArgs) -> Result<()> {
    let mut bundle = load_or_fail(&a.calib)?;
    let mut level_dirs: Vec<PathBuf> = std::fs::read_dir(&a.flat)
        .with_context(|| format!("reading {}", a.flat.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("level_")))
        .collect();
    level_dirs.sort();
    let mut noise = RgbNoise::zero();
    for ch in Channel::ALL {
        let mut samples = Vec::with_capacity(level_dirs.len());
        for dir in &level_dirs {
            let sub = dir.join(ch.name());
            let i1 = io::read_png(&sub.join("pair_0.png"))?;
            let i2 = io::read_png(&sub.join("pair_1.png"))?;
            samples.push(estimate_pixel_noise(&i1, &i2, a.roi).with_context(|| format!("{}", sub.display()))?);
        }
        let fit = fit_noise_model(&samples).with_context(|| format!("fitting channel {ch}"))?;
        if fit.clamped {
            eprintln!("warning: channel {ch} coefficients clamped at zero");
        }
        println!("{ch}: k0 = {:.5}, k1 = {:.5}", fit.params.k0, fit.params.k1);
        noise.set(ch, NoiseParams::new(fit.params.k0, fit.params.k1)?);
    }
    bundle.noise = Some(noise);
    io::save_bundle(&a.calib, &bundle)?;
    Ok(())
}

fn reconstruct(a: ReconstructArgs) -> Result<()> {
    let file = read_config_opt(a.fringe.config.as_ref())?;
    let input = a.input.clone().or(file.input.clone()).context("no input directory (--in or config `input`)")?;
    let calib_path = a
        .calib
        .clone()
        .or(file.calib.clone())
        .context("no calibration bundle (--calib or config `calib`)")?;
    let bundle = load_or_fail(&calib_path)?;
    let images = io::read_capture(&input)?;
    let fringe = fringe_config(&a.fringe, &file, Some(&input), bundle.stereo.prj_size())?;
    let mode = a.mode.or(file.mode).unwrap_or(Mode::Lcamv);
    let mut cfg = PipelineConfig::new(fringe, mode);
    if let Some(m) = a.ci_multiplier.or(file.ci_multiplier) {
        if !(m > 0.0) {
            bail!("CI multiplier must be positive");
        }
        cfg.ci_multiplier = m;
    }
    let (opts, radius) = decode_opts(&a.fringe, &file);
    cfg.min_modulation = opts.min_modulation;
    cfg.repair_radius = radius;
    let out = run_pipeline(&images, &bundle, &cfg)?;
    let points = out.colored_points(&bundle.stereo);
    io::write_ply(&a.output, &points)?;
    if let Some(p) = &a.depth_out {
        io::write_f32r(p, &out.depth)?;
    }
    if let (Some(p), Some(v)) = (&a.variance_out, &out.variance) {
        io::write_f32r(p, v)?;
    }
    println!("{}: {} points ({mode})", a.output.display(), points.len());
    Ok(())
}

fn eval_plane(a: EvalPlaneArgs) -> Result<()> {
    let bundle = load_or_fail(&a.calib)?;
    let depth: ChannelRaster = io::read_f32r(&a.depth)?;
    let calib: &StereoCalibration = &bundle.stereo;
    let points = roi_points(&depth, calib, a.roi);
    let report = fit_plane(&points, a.subsample, a.seed)?;
    let json = serde_json::to_string_pretty(&report)?;
    match &a.output {
        Some(p) if p.extension().is_some_and(|e| e == "csv") => {
            let csv = format!(
                "mse,n_total,n_subsampled,nx,ny,nz,distance\n{:.9e},{},{},{:.12},{:.12},{:.12},{:.9}\n",
                report.mse,
                report.n_total,
                report.n_subsampled,
                report.normal[0],
                report.normal[1],
                report.normal[2],
                report.distance
            );
            std::fs::write(p, csv).with_context(|| format!("writing {}", p.display()))?;
        }
        Some(p) => io::write_json(p, &report)?,
        None => {}
    }
    if let Some(p) = &a.errors_out {
        io::write_f32r(p, &plane_error_map(&depth, calib, &report))?;
    }
    println!("{json}");
    Ok(())
}

fn mc_ci(a: McCiArgs) -> Result<()> {
    let cfg = McCiConfig {
        noise: NoiseParams::new(a.k0, a.k1)?,
        i_a: a.ia,
        i_b: a.ib,
        steps: a.steps,
        samples: a.samples,
        grid: a.grid,
        seed: a.seed,
        ..Default::default()
    };
    let report = monte_carlo_ci(&cfg)?;
    if let Some(p) = &a.output {
        std::fs::write(p, report.to_csv()).with_context(|| format!("writing {}", p.display()))?;
    }
    println!("mean 99% CI half-width: {:.4} sigma", report.mean_multiplier);
    Ok(())
}
