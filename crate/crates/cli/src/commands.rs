//! Subcommand implementations.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scattrack::forward::{FarFieldVector, WaveContext};
use scattrack::geometry::{random_shape, sample_boundary, PerturbedEllipse, Pose, ShapeRanges, Vec2};
use scattrack::inneropt::{objective_f, ObjectiveContext, FALLBACK_RADIUS};
use scattrack::motion::{build_rotation_library, lipschitz_probe, loglog_slope, ratio_spread, translate_far_field};
use scattrack::nn::{features_of, generate_dataset, train, Dataset, Model, Scaler, TrainConfig, DEFAULT_LOSS_WEIGHTS};
use scattrack::tracker::{evaluate, make_mask, read_track_poses, synthesize_measurements, track, TrackMetrics};
use scattrack::trajectory::{read_trajectory, simulate, write_trajectory};

use crate::config::Config;
use crate::error::CliError;
use crate::plot::{unwrap_degrees, Chart, Series};

const BOUNDARY_SAMPLES: usize = 256;

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

/// Writes a text file whose first line is `# <header>`.
fn write_text(path: &Path, cfg: &Config, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
    let mut out = create(path)?;
    writeln!(out, "# {}", cfg.header())
        .and_then(|_| body(&mut out))
        .and_then(|_| out.flush())
        .map_err(|e| CliError::io(path, e))
}

fn write_svg(path: &Path, cfg: &Config, chart: &Chart) -> Result<(), CliError> {
    fs::write(path, chart.render(&cfg.header())).map_err(|e| CliError::io(path, e))
}

pub fn write_shapes(path: &Path, cfg: &Config, shapes: &[PerturbedEllipse]) -> Result<(), CliError> {
    write_text(path, cfg, |out| {
        for s in shapes {
            writeln!(out, "{}", serde_json::to_string(s).map_err(std::io::Error::other)?)?;
        }
        Ok(())
    })
}

/// Shape records from a JSON-lines file; `#` lines are skipped.
pub fn read_shapes(path: &Path) -> Result<Vec<PerturbedEllipse>, CliError> {
    let mut shapes = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let shape = serde_json::from_str(line).map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        shapes.push(shape);
    }
    if shapes.is_empty() {
        return Err(CliError::Data(format!("{}: no shape records", path.display())));
    }
    Ok(shapes)
}

fn first_shape(path: &Path) -> Result<PerturbedEllipse, CliError> {
    Ok(read_shapes(path)?.swap_remove(0))
}

fn shape_or_random(path: Option<&Path>, cfg: &Config) -> Result<PerturbedEllipse, CliError> {
    match path {
        Some(p) => first_shape(p),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(Config::seed_of(cfg.shape_seed));
            Ok(random_shape(&mut rng, &ShapeRanges::default())?)
        }
    }
}

pub fn generate_shapes(cfg: &Config, count: Option<usize>, out: &Path) -> Result<(), CliError> {
    let count = count.unwrap_or(cfg.shape_count);
    let mut rng = ChaCha8Rng::seed_from_u64(Config::seed_of(cfg.shape_seed));
    let ranges = ShapeRanges::default();
    let shapes = (0..count).map(|_| random_shape(&mut rng, &ranges)).collect::<Result<Vec<_>, _>>()?;
    write_shapes(out, cfg, &shapes)?;
    info!("wrote {count} shapes to {}", out.display());
    Ok(())
}

pub fn measurement_path(dir: &Path, n: usize) -> PathBuf {
    dir.join("measurements").join(format!("step_{n:04}.txt"))
}

pub fn simulate_cmd(cfg: &Config, shape: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let shape = shape_or_random(shape, cfg)?;
    let ctx = cfg.wave_context()?;
    let params = cfg.motion()?;
    let mut motion_rng = ChaCha8Rng::seed_from_u64(Config::seed_of(cfg.motion_seed));
    let truth = simulate(&params, cfg.steps, &mut motion_rng)?;
    let mask = make_mask(cfg.view()?, cfg.receivers)?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(Config::seed_of(cfg.noise_seed));
    let measurements = synthesize_measurements(&shape, &ctx, &truth, &mask, cfg.noise, &mut noise_rng)?;

    write_shapes(&out.join("shape.jsonl"), cfg, std::slice::from_ref(&shape))?;
    write_text(&out.join("trajectory.txt"), cfg, |w| write_trajectory(w, &truth))?;
    let comments = [cfg.header(), mask.describe(), format!("noise {}", cfg.noise)];
    for (n, u) in measurements.iter().enumerate() {
        let path = measurement_path(out, n);
        let mut w = create(&path)?;
        let mut c = comments.to_vec();
        c.push(format!("step {n}"));
        u.write_text(&mut w, &c).and_then(|_| w.flush()).map_err(|e| CliError::io(&path, e))?;
    }
    info!("simulated {} measurements into {}", measurements.len(), out.display());
    Ok(())
}

/// Measurement files `step_*.txt` in `dir` or `dir/measurements`, by name.
pub fn read_measurements(dir: &Path) -> Result<Vec<FarFieldVector>, CliError> {
    let nested = dir.join("measurements");
    let root = if nested.is_dir() { nested } else { dir.to_path_buf() };
    let mut files: Vec<PathBuf> = fs::read_dir(&root)
        .map_err(|e| CliError::io(&root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("step_") && n.ends_with(".txt"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Data(format!("{}: no step_*.txt measurement files", root.display())));
    }
    files
        .iter()
        .map(|p| FarFieldVector::read_text(open(p)?).map_err(|e| CliError::Data(format!("{}: {e}", p.display()))))
        .collect()
}

fn read_truth(path: &Path) -> Result<Vec<Pose>, CliError> {
    read_trajectory(open(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn pose_charts(estimates: &[Pose], truth: Option<&[Pose]>) -> [(&'static str, Chart); 3] {
    let series = |poses: &[Pose], f: &dyn Fn(&Pose) -> f64| -> Vec<(f64, f64)> {
        poses.iter().enumerate().map(|(n, p)| (n as f64, f(p))).collect()
    };
    let angles = |poses: &[Pose]| -> Vec<(f64, f64)> {
        let th: Vec<f64> = poses.iter().map(Pose::theta).collect();
        unwrap_degrees(&th).into_iter().enumerate().map(|(n, d)| (n as f64, d)).collect()
    };
    let build = |title: &str, label: &str, est: Vec<(f64, f64)>, tru: Option<Vec<(f64, f64)>>| {
        let mut c = Chart::new(title, "step n", label).with(Series::line("estimate", est).with_markers());
        if let Some(t) = tru {
            c = c.with(Series::line("truth", t).dashed());
        }
        c
    };
    [
        ("x.svg", build("Horizontal position", "x", series(estimates, &|p| p.tau.x), truth.map(|t| series(t, &|p| p.tau.x)))),
        ("y.svg", build("Vertical position", "y", series(estimates, &|p| p.tau.y), truth.map(|t| series(t, &|p| p.tau.y)))),
        ("theta.svg", build("Orientation", "theta (deg)", angles(estimates), truth.map(angles))),
    ]
}

fn write_metrics(path: &Path, cfg: &Config, metrics: &TrackMetrics) -> Result<(), CliError> {
    write_text(path, cfg, |w| metrics.write_to(w))
}

pub struct TrackArgs<'a> {
    pub input: &'a Path,
    pub shape: Option<&'a Path>,
    pub model: Option<&'a Path>,
    pub truth: Option<&'a Path>,
}

pub fn track_cmd(cfg: &Config, args: TrackArgs, out: &Path) -> Result<(), CliError> {
    let measurements = read_measurements(args.input)?;
    let shape0 = match (args.shape, args.model) {
        (Some(_), Some(_)) => return Err(CliError::Usage("--shape and --model are mutually exclusive".into())),
        (Some(p), None) => first_shape(p)?,
        (None, Some(m)) => {
            let (model, _) = Model::read_from(&mut open(m)?)?;
            let features = features_of(&measurements[0]);
            if features.len() != model.net.input_len() {
                return Err(CliError::Data(format!(
                    "model expects {} inputs, measurement 0 provides {}",
                    model.net.input_len(),
                    features.len()
                )));
            }
            model.predict_shape(&features)?
        }
        (None, None) => {
            let default = args.input.join("shape.jsonl");
            if !default.is_file() {
                return Err(CliError::Usage("reference shape required: pass --shape or --model".into()));
            }
            first_shape(&default)?
        }
    };
    let config = cfg.track();
    let record = track(&measurements, &shape0, &config)?;
    let estimates = record.poses();

    write_text(&out.join("track.csv"), cfg, |w| record.write_to(w))?;
    write_text(&out.join("bo_trace.csv"), cfg, |w| record.write_traces(w))?;
    write_shapes(&out.join("reference_shape.jsonl"), cfg, std::slice::from_ref(&shape0))?;

    let truth_path = args.truth.map(Path::to_path_buf).or_else(|| {
        let p = args.input.join("trajectory.txt");
        p.is_file().then_some(p)
    });
    let truth = match truth_path {
        Some(p) => Some(read_truth(&p)?),
        None => {
            info!("no ground truth found; skipping error metrics");
            None
        }
    };
    if let Some(t) = &truth {
        let metrics = evaluate(&estimates, t, &shape0)?;
        write_metrics(&out.join("metrics.txt"), cfg, &metrics)?;
        info!(
            "mean position error {:.3e} ({:.3}% of diameter), mean angle error {:.3} deg",
            metrics.mean_position,
            100.0 * metrics.mean_position_relative(),
            metrics.mean_angle_deg
        );
    }
    for (name, chart) in pose_charts(&estimates, truth.as_deref()) {
        write_svg(&out.join(name), cfg, &chart)?;
    }
    let flagged = record.entries.iter().filter(|e| e.flagged).count();
    if flagged > 0 {
        log::warn!("{flagged} step(s) flagged as optimizer failures");
    }
    Ok(())
}

pub fn evaluate_cmd(cfg: &Config, track_file: &Path, truth: &Path, shape: &Path, out: &Path) -> Result<(), CliError> {
    let estimates = read_track_poses(open(track_file)?).map_err(|e| CliError::Data(format!("{}: {e}", track_file.display())))?;
    let truth_poses = read_truth(truth)?;
    let shape = first_shape(shape)?;
    let metrics = evaluate(&estimates, &truth_poses, &shape)?;
    write_metrics(&out.join("metrics.txt"), cfg, &metrics)?;
    for (name, chart) in pose_charts(&estimates, Some(&truth_poses)) {
        write_svg(&out.join(name), cfg, &chart)?;
    }
    let last = estimates.len() - 1;
    let overlay = Chart {
        equal_aspect: true,
        ..Chart::new("Final boundary", "x", "y")
            .with(Series::line("estimate", closed(sample_boundary(&shape, &estimates[last], BOUNDARY_SAMPLES))))
            .with(Series::line("truth", closed(sample_boundary(&shape, &truth_poses[last], BOUNDARY_SAMPLES))).dashed())
    };
    write_svg(&out.join("boundary.svg"), cfg, &overlay)
}

fn closed(points: Vec<Vec2>) -> Vec<(f64, f64)> {
    let mut v: Vec<(f64, f64)> = points.iter().map(|p| (p.x, p.y)).collect();
    if let Some(&first) = v.first() {
        v.push(first);
    }
    v
}

pub struct TrainArgs<'a> {
    pub dataset: Option<&'a Path>,
    pub resume: Option<&'a Path>,
}

fn provenance(cfg: &Config) -> String {
    cfg.header()
}

pub fn train_cmd(cfg: &Config, args: TrainArgs, out: &Path) -> Result<(), CliError> {
    let dataset = match args.dataset {
        Some(p) => Dataset::read_from(&mut open(p)?)?.0,
        None => {
            let ctx: WaveContext = cfg.wave_context()?;
            let mask = make_mask(cfg.view()?, cfg.receivers)?;
            info!("generating {} training samples", cfg.samples);
            let ds = generate_dataset(
                cfg.samples,
                Config::seed_of(cfg.dataset_seed),
                &ctx,
                cfg.receivers,
                &mask.active,
                &ShapeRanges::default(),
            )?;
            let path = out.join("dataset.bin");
            let mut w = create(&path)?;
            ds.write_to(&mut w, &provenance(cfg))?;
            w.flush().map_err(|e| CliError::io(&path, e))?;
            ds
        }
    };
    let (train_set, test_set) = dataset.split(cfg.train_fraction)?;
    let mut model = match args.resume {
        Some(p) => Model::read_from(&mut open(p)?)?.0,
        None => {
            let features: Vec<Vec<f64>> = train_set.iter().map(|s| s.features.clone()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(Config::seed_of(cfg.init_seed));
            Model::initialize(features[0].len(), Scaler::fit(&features), &mut rng)?
        }
    };
    let tc = TrainConfig {
        learning_rate: cfg.learning_rate,
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        loss_weights: DEFAULT_LOSS_WEIGHTS.to_vec(),
        train_fraction: cfg.train_fraction,
        seed: Config::seed_of(cfg.train_seed),
    };
    let history = train(&mut model, train_set, test_set, &tc)?;

    let path = out.join("model.bin");
    let mut w = create(&path)?;
    model.write_to(&mut w, &provenance(cfg))?;
    w.flush().map_err(|e| CliError::io(&path, e))?;
    write_text(&out.join("history.csv"), cfg, |w| history.write_csv(w))?;
    let points = |pick: fn(&(f64, f64)) -> f64| -> Vec<(f64, f64)> {
        history.epochs.iter().enumerate().map(|(i, e)| ((i + 1) as f64, pick(e).log10())).collect()
    };
    let chart = Chart::new("Training loss", "epoch", "log10 loss")
        .with(Series::line("train", points(|e| e.0)))
        .with(Series::line("test", points(|e| e.1)).dashed());
    write_svg(&out.join("loss.svg"), cfg, &chart)?;
    if let Some(&(tr, te)) = history.epochs.last() {
        info!("final train loss {tr:.4e}, test loss {te:.4e} (initial test {:.4e})", history.initial_test);
    }
    Ok(())
}

pub fn probe_cmd(cfg: &Config, shape: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let shape = shape_or_random(shape, cfg)?;
    let ctx = cfg.wave_context()?;

    let points = lipschitz_probe(&shape, &ctx, &cfg.probe_thetas)?;
    let slope = loglog_slope(&points);
    let spread = ratio_spread(&points);
    write_text(&out.join("probe.csv"), cfg, |w| {
        writeln!(w, "# loglog_slope {slope:.6} ratio_spread {spread:.6}")?;
        writeln!(w, "theta_rad,difference,ratio")?;
        for p in &points {
            writeln!(w, "{:.6e},{:.10e},{:.10e}", p.theta, p.difference, p.difference / p.theta)?;
        }
        Ok(())
    })?;
    let chart = Chart::new("Far-field change under rotation", "log10 theta", "log10 max difference")
        .with(Series::line("measured", points.iter().map(|p| (p.theta.log10(), p.difference.log10())).collect()).with_markers());
    write_svg(&out.join("probe.svg"), cfg, &chart)?;
    info!("log-log slope {slope:.4}, ratio spread {spread:.4}");

    let library = build_rotation_library(&shape, &ctx, cfg.library_grid, cfg.library_grid)?;
    let mask = make_mask(cfg.view()?, cfg.receivers)?;
    let dirs = mask.directions();
    let planted_tau = Vec2::new(cfg.planted_tau_x, cfg.planted_tau_y);
    let measured = translate_far_field(&library.query(cfg.planted_theta_deg.to_radians(), &dirs), &planted_tau);
    let octx = ObjectiveContext::new(measured, &library, Vec2::zeros(), FALLBACK_RADIUS.max(planted_tau.norm() * 1.5))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let m = cfg.landscape_points;
    let landscape: Vec<(f64, f64)> = (0..m)
        .map(|i| {
            let deg = -180.0 + 360.0 * i as f64 / (m - 1) as f64;
            (deg, objective_f(deg.to_radians(), &octx))
        })
        .collect();
    write_text(&out.join("landscape.csv"), cfg, |w| {
        writeln!(w, "# planted_theta_deg {} planted_tau {} {}", cfg.planted_theta_deg, planted_tau.x, planted_tau.y)?;
        writeln!(w, "theta_deg,objective")?;
        for (d, f) in &landscape {
            writeln!(w, "{d:.6},{f:.10e}")?;
        }
        Ok(())
    })?;
    let chart = Chart::new("Objective landscape", "theta (deg)", "F(theta)").with(Series::line("F", landscape));
    write_svg(&out.join("landscape.svg"), cfg, &chart)
}
