//! The tracking loop: simulated measurements, per-step pose estimation and
//! error metrics.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use log::{debug, warn};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::bayesopt::{minimize_angle, Evaluation, SearchError, DEFAULT_BUDGET};
use crate::forward::{solve_far_field, FarFieldVector, SolverError, WaveContext, DEFAULT_NODES};
use crate::geometry::{sample_boundary, wrap_angle, PerturbedEllipse, Pose, Vec2};
use crate::inneropt::{minimize_tau, residual, search_radius, ObjectiveContext, TauSearch};
use crate::motion::{build_rotation_library, MotionError, RotationLibrary, DEFAULT_GRID};

pub const DEFAULT_RECEIVERS: usize = 24;

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("no measurements")]
    NoMeasurements,
    #[error("receiver count must be at least 4 and divisible by 4, got {0}")]
    ReceiverCount(usize),
    #[error("unknown view '{0}' (expected full, half or quarter)")]
    View(String),
    #[error("noise level must be non-negative, got {0}")]
    NoiseLevel(f64),
    #[error("length mismatch: {0} estimates, {1} truth poses")]
    Length(usize, usize),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Motion(#[from] MotionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    Full,
    Half,
    Quarter,
}

impl FromStr for View {
    type Err = TrackError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(View::Full),
            "half" => Ok(View::Half),
            "quarter" => Ok(View::Quarter),
            other => Err(TrackError::View(other.into())),
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            View::Full => "full",
            View::Half => "half",
            View::Quarter => "quarter",
        })
    }
}

/// Active subset of `K` equispaced receiver directions `2πi/K`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReceiverMask {
    pub k: usize,
    pub active: Vec<usize>,
}

impl ReceiverMask {
    pub fn angles(&self) -> Vec<f64> {
        self.active.iter().map(|&i| TAU * i as f64 / self.k as f64).collect()
    }

    pub fn directions(&self) -> Vec<Vec2> {
        self.angles().into_iter().map(|a| Vec2::new(a.cos(), a.sin())).collect()
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn describe(&self) -> String {
        let idx: Vec<String> = self.active.iter().map(usize::to_string).collect();
        format!("mask K={} active={}", self.k, idx.join(","))
    }
}

/// Full view, upper half-plane `[0, π)`, or first quadrant `[0, π/2)`.
pub fn make_mask(view: View, k: usize) -> Result<ReceiverMask, TrackError> {
    if k < 4 || !k.is_multiple_of(4) {
        return Err(TrackError::ReceiverCount(k));
    }
    let count = match view {
        View::Full => k,
        View::Half => k / 2,
        View::Quarter => k / 4,
    };
    Ok(ReceiverMask { k, active: (0..count).collect() })
}

/// Adds complex white noise with per-component standard deviation
/// `level · RMS(|u|) / √2` to each entry.
pub fn add_noise<R: Rng + ?Sized>(u: &FarFieldVector, level: f64, rng: &mut R) -> FarFieldVector {
    let mut out = u.clone();
    if level == 0.0 || u.is_empty() {
        return out;
    }
    let rms = (u.values.iter().map(|v| v.norm_sqr()).sum::<f64>() / u.len() as f64).sqrt();
    let sd = level * rms / 2f64.sqrt();
    for v in &mut out.values {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *v += Complex64::new(re, im) * sd;
    }
    out
}

/// Far fields of `shape` at each pose on the active receivers, noise drawn
/// after masking in pose order.
pub fn synthesize_measurements<R: Rng + ?Sized>(
    shape: &PerturbedEllipse,
    ctx: &WaveContext,
    poses: &[Pose],
    mask: &ReceiverMask,
    noise: f64,
    rng: &mut R,
) -> Result<Vec<FarFieldVector>, TrackError> {
    if !(noise >= 0.0) {
        return Err(TrackError::NoiseLevel(noise));
    }
    let dirs = mask.directions();
    let clean: Vec<FarFieldVector> = poses
        .par_iter()
        .map(|pose| solve_far_field(shape, pose, ctx, DEFAULT_NODES, &dirs))
        .collect::<Result<_, _>>()?;
    Ok(clean.iter().map(|u| add_noise(u, noise, rng)).collect())
}

/// Optimizer settings of the tracking loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackConfig {
    pub budget: usize,
    pub phi: f64,
    pub sigma_v: f64,
    pub delta: f64,
    pub library_grid: usize,
    /// Overrides the velocity-based search radius when set.
    pub radius: Option<f64>,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self {
            budget: DEFAULT_BUDGET,
            phi: 50f64.to_radians(),
            sigma_v: 1.5,
            delta: crate::trajectory::DEFAULT_DELTA,
            library_grid: DEFAULT_GRID,
            radius: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackEntry {
    pub n: usize,
    pub measured: FarFieldVector,
    pub estimated: Pose,
    pub objective: f64,
    pub trace: Vec<Evaluation>,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrackRecord {
    pub entries: Vec<TrackEntry>,
}

impl TrackRecord {
    pub fn poses(&self) -> Vec<Pose> {
        self.entries.iter().map(|e| e.estimated).collect()
    }

    /// CSV rows `n,tau_x_est,tau_y_est,theta_est_deg,objective,flag`.
    pub fn write_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "n,tau_x_est,tau_y_est,theta_est_deg,objective,flag")?;
        for e in &self.entries {
            writeln!(
                out,
                "{},{:.16e},{:.16e},{:.12},{:.16e},{}",
                e.n,
                e.estimated.tau.x,
                e.estimated.tau.y,
                e.estimated.theta().to_degrees(),
                e.objective,
                u8::from(e.flagged)
            )?;
        }
        Ok(())
    }

    /// BO evaluations of every step, one row each.
    pub fn write_traces<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "n,eval,theta_deg,objective_value,proposed_by")?;
        for e in &self.entries {
            for t in &e.trace {
                writeln!(out, "{},{},{:.10},{:.16e},{}", e.n, t.step, t.theta.to_degrees(), t.value, t.source)?;
            }
        }
        Ok(())
    }
}

/// Estimated poses from a record written by [`TrackRecord::write_to`].
pub fn read_track_poses<R: BufRead>(input: R) -> Result<Vec<Pose>, TrackError> {
    let mut poses = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("n,") {
            continue;
        }
        let bad = |m: &str| TrackError::Parse { line: i + 1, message: m.into() };
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 6 {
            return Err(bad("expected 6 fields"));
        }
        if f[0].parse::<usize>().ok() != Some(poses.len()) {
            return Err(bad("step indices must be contiguous from 0"));
        }
        let num = |s: &str| s.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| bad("bad number"));
        poses.push(Pose::new(Vec2::new(num(f[1])?, num(f[2])?), num(f[3])?.to_radians()));
    }
    Ok(poses)
}

#[derive(Debug, Error)]
#[error("objective is not finite at theta = {0}")]
struct NonFinite(f64);

/// One tracking step against a prebuilt library.
pub fn estimate_step(
    library: &RotationLibrary,
    measured: &FarFieldVector,
    previous: &Pose,
    previous_theta: f64,
    radius: f64,
    config: &TrackConfig,
) -> Result<(Pose, f64, Vec<Evaluation>, f64), String> {
    let ctx = ObjectiveContext::new(measured.clone(), library, previous.tau, radius).map_err(|e| e.to_string())?;
    let mut solved: Vec<(f64, TauSearch)> = Vec::with_capacity(config.budget);
    let search = minimize_angle(
        |theta| {
            let r = minimize_tau(theta, &ctx);
            solved.push((theta, r));
            if r.value.is_finite() { Ok(r.value) } else { Err(NonFinite(theta)) }
        },
        previous_theta,
        config.phi,
        config.budget,
    );
    match search {
        Ok(s) => {
            let (_, tau) = solved.iter().find(|(t, _)| *t == s.theta_star).copied().expect("evaluated");
            Ok((Pose::new(tau.tau, s.theta_star), s.value, s.trace, s.theta_star))
        }
        Err(SearchError::Objective { source, .. }) => Err(source.to_string()),
        Err(SearchError::Optimizer(e)) => Err(e.to_string()),
    }
}

/// Runs the loop over measurements `0..=T` with the reference shape known.
/// The first pose is the identity.
pub fn track(
    measurements: &[FarFieldVector],
    shape0: &PerturbedEllipse,
    config: &TrackConfig,
) -> Result<TrackRecord, TrackError> {
    let first = measurements.first().ok_or(TrackError::NoMeasurements)?;
    let library = build_rotation_library(shape0, &first.context, config.library_grid, config.library_grid)?;
    Ok(track_with_library(measurements, &library, config))
}

pub fn track_with_library(measurements: &[FarFieldVector], library: &RotationLibrary, config: &TrackConfig) -> TrackRecord {
    let mut record = TrackRecord::default();
    let mut theta = 0.0;
    let mut poses: Vec<Pose> = Vec::with_capacity(measurements.len());
    for (n, measured) in measurements.iter().enumerate() {
        if n == 0 {
            let pose = Pose::identity();
            let objective = ObjectiveContext::new(measured.clone(), library, Vec2::zeros(), 1.0)
                .and_then(|ctx| residual(0.0, &Vec2::zeros(), &ctx))
                .unwrap_or(f64::NAN);
            poses.push(pose);
            record.entries.push(TrackEntry {
                n,
                measured: measured.clone(),
                estimated: pose,
                objective,
                trace: Vec::new(),
                flagged: false,
            });
            continue;
        }
        let prev = poses[n - 1];
        let velocity = (n >= 2).then(|| (poses[n - 1].tau - poses[n - 2].tau) / config.delta);
        let radius = config.radius.unwrap_or_else(|| search_radius(config.sigma_v, config.delta, velocity.as_ref()));
        let entry = match estimate_step(library, measured, &prev, theta, radius, config) {
            Ok((pose, objective, trace, raw_theta)) => {
                theta = raw_theta;
                debug!("step {n}: theta {:.3} deg, objective {objective:.3e}", raw_theta.to_degrees());
                TrackEntry { n, measured: measured.clone(), estimated: pose, objective, trace, flagged: false }
            }
            Err(message) => {
                warn!("step {n}: {message}; carrying the previous pose forward");
                TrackEntry { n, measured: measured.clone(), estimated: prev, objective: f64::NAN, trace: Vec::new(), flagged: true }
            }
        };
        poses.push(entry.estimated);
        record.entries.push(entry);
    }
    record
}

/// A shape placed at a pose.
#[derive(Debug, Clone, PartialEq)]
pub struct PosedShape {
    pub shape: PerturbedEllipse,
    pub pose: Pose,
}

impl PosedShape {
    pub fn boundary(&self, samples: usize) -> Vec<Vec2> {
        sample_boundary(&self.shape, &self.pose, samples)
    }
}

pub fn reconstruct(shape0: &PerturbedEllipse, poses: &[Pose]) -> Vec<PosedShape> {
    poses.iter().map(|&pose| PosedShape { shape: shape0.clone(), pose }).collect()
}

/// Signed angular difference in `(−π, π]`.
pub fn angle_difference(a: f64, b: f64) -> f64 {
    let d = wrap_angle(a - b);
    if d > PI { d - TAU } else { d }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepError {
    pub dx: f64,
    pub dy: f64,
    pub angle_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackMetrics {
    pub per_step: Vec<StepError>,
    pub mean_abs_x: f64,
    pub mean_abs_y: f64,
    pub mean_angle_deg: f64,
    pub mean_position: f64,
    pub diameter: f64,
}

impl TrackMetrics {
    pub fn mean_position_relative(&self) -> f64 {
        self.mean_position / self.diameter
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "# n err_x err_y err_angle_deg")?;
        for (n, e) in self.per_step.iter().enumerate() {
            writeln!(out, "{n} {:.10e} {:.10e} {:.10e}", e.dx, e.dy, e.angle_deg)?;
        }
        writeln!(out, "# mean_abs_x {:.10e}", self.mean_abs_x)?;
        writeln!(out, "# mean_abs_y {:.10e}", self.mean_abs_y)?;
        writeln!(out, "# mean_angle_deg {:.10e}", self.mean_angle_deg)?;
        writeln!(out, "# mean_position {:.10e}", self.mean_position)?;
        writeln!(out, "# mean_position_over_diameter {:.10e}", self.mean_position_relative())
    }
}

/// Absolute errors per step; angles compared on the circle.
pub fn evaluate(estimates: &[Pose], truth: &[Pose], shape: &PerturbedEllipse) -> Result<TrackMetrics, TrackError> {
    if estimates.len() != truth.len() || truth.is_empty() {
        return Err(TrackError::Length(estimates.len(), truth.len()));
    }
    let per_step: Vec<StepError> = estimates
        .iter()
        .zip(truth)
        .map(|(e, t)| StepError {
            dx: (e.tau.x - t.tau.x).abs(),
            dy: (e.tau.y - t.tau.y).abs(),
            angle_deg: angle_difference(e.theta(), t.theta()).abs().to_degrees(),
        })
        .collect();
    let n = per_step.len() as f64;
    let mean = |f: fn(&StepError) -> f64| per_step.iter().map(f).sum::<f64>() / n;
    Ok(TrackMetrics {
        mean_abs_x: mean(|e| e.dx),
        mean_abs_y: mean(|e| e.dy),
        mean_angle_deg: mean(|e| e.angle_deg),
        mean_position: mean(|e| e.dx.hypot(e.dy)),
        diameter: shape.diameter(512),
        per_step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::direction_grid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ctx() -> WaveContext {
        WaveContext::new(1.0, Vec2::new(1.0, 0.0), 1.0).unwrap()
    }

    #[test]
    fn masks() {
        assert_eq!(make_mask(View::Full, 24).unwrap().len(), 24);
        let q = make_mask(View::Quarter, 24).unwrap();
        assert_eq!(q.active, (0..6).collect::<Vec<_>>());
        assert!((q.angles()[5].to_degrees() - 75.0).abs() < 1e-12);
        let h = make_mask(View::Half, 24).unwrap();
        assert!(h.angles().iter().all(|&a| (0.0..PI).contains(&a)));
        assert!(h.angles().windows(2).all(|w| (w[1] - w[0] - TAU / 24.0).abs() < 1e-12));
        assert!(make_mask(View::Full, 2).is_err());
        assert_eq!("half".parse::<View>().unwrap(), View::Half);
        assert!("side".parse::<View>().is_err());
    }

    #[test]
    fn zero_noise_is_identity_and_noise_is_seeded() {
        let disk = PerturbedEllipse::disk(1.0).unwrap();
        let u = solve_far_field(&disk, &Pose::identity(), &ctx(), 64, &direction_grid(24)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(add_noise(&u, 0.0, &mut rng), u);
        let a = add_noise(&u, 0.1, &mut ChaCha8Rng::seed_from_u64(2));
        let b = add_noise(&u, 0.1, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(a, b);
        assert_ne!(a, u);
    }

    #[test]
    fn noise_energy_matches_level() {
        let disk = PerturbedEllipse::disk(2.0).unwrap();
        let u = solve_far_field(&disk, &Pose::identity(), &ctx(), 64, &direction_grid(24)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = 10_000;
        let mut ratio = 0.0;
        for _ in 0..draws {
            let n = add_noise(&u, 0.2, &mut rng);
            ratio += n.values.iter().zip(&u.values).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / u.norm().powi(2);
        }
        assert!((ratio / draws as f64 / 0.04 - 1.0).abs() < 0.03);
    }

    #[test]
    fn circular_angle_metric() {
        let shape = PerturbedEllipse::disk(1.0).unwrap();
        let truth = vec![Pose::new(Vec2::zeros(), 359f64.to_radians())];
        let est = vec![Pose::new(Vec2::zeros(), 1f64.to_radians())];
        let m = evaluate(&est, &truth, &shape).unwrap();
        assert!((m.mean_angle_deg - 2.0).abs() < 1e-9);
        let m = evaluate(&truth, &truth, &shape).unwrap();
        assert_eq!(m.mean_position, 0.0);
        assert_eq!(m.mean_angle_deg, 0.0);
        assert!(evaluate(&est, &[], &shape).is_err());
    }

    #[test]
    fn constant_offset_metric() {
        let shape = PerturbedEllipse::disk(1.0).unwrap();
        let truth: Vec<Pose> = (0..5).map(|i| Pose::new(Vec2::new(i as f64, 0.0), 0.3 * i as f64)).collect();
        let est: Vec<Pose> = truth.iter().map(|p| Pose::new(p.tau, p.theta() + 10f64.to_radians())).collect();
        assert!((evaluate(&est, &truth, &shape).unwrap().mean_angle_deg - 10.0).abs() < 1e-9);
    }

    #[test]
    fn reconstruct_poses() {
        let shape = PerturbedEllipse::disk(2.0).unwrap();
        let tau = Vec2::new(1.0, -3.0);
        let posed = reconstruct(&shape, &[Pose::identity(), Pose::new(tau, 0.0)]);
        let base = posed[0].boundary(16);
        let moved = posed[1].boundary(16);
        for (a, b) in base.iter().zip(&moved) {
            assert!((b - a - tau).norm() < 1e-12);
        }
    }

    #[test]
    fn record_file_round_trip() {
        let entry = TrackEntry {
            n: 0,
            measured: FarFieldVector { directions: vec![], values: vec![], context: ctx() },
            estimated: Pose::new(Vec2::new(0.5, 1.5), 0.25),
            objective: 0.1,
            trace: vec![],
            flagged: false,
        };
        let record = TrackRecord { entries: vec![entry] };
        let mut buf = Vec::new();
        record.write_to(&mut buf).unwrap();
        let poses = read_track_poses(buf.as_slice()).unwrap();
        assert_eq!(poses[0].tau, Vec2::new(0.5, 1.5));
        assert!((poses[0].theta() - 0.25).abs() < 1e-12);
        assert!(read_track_poses("0,1,2\n".as_bytes()).is_err());
    }
}
