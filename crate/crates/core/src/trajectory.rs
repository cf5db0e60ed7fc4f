//! Random rigid motion: integrated Brownian location, Brownian orientation.

use std::io::{BufRead, Write};

use nalgebra::Matrix2;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::geometry::{Pose, Vec2};

pub const DEFAULT_DELTA: f64 = 0.05;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("time step must be positive and finite, got {0}")]
    Delta(f64),
    #[error("diffusion coefficients must be non-negative, got sigma_v = {0}, sigma_theta = {1}")]
    Sigma(f64, f64),
    #[error("increment covariance is not positive semi-definite")]
    Covariance,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which increment covariance to sample from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceModel {
    /// `[[σ²δ, σ²δ²/2], [σ²δ²/2, σ²δ³/3]]` per axis.
    #[default]
    IntegratedBrownian,
    /// `[[σ²δ, σ²δ/2], [σ²δ/2, σ³δ/3]]` per axis, as literally printed in
    /// some presentations of the model.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionParams {
    pub delta: f64,
    pub sigma_v: f64,
    pub sigma_theta: f64,
    pub v0: Vec2,
    pub theta0: f64,
    pub covariance: CovarianceModel,
}

impl MotionParams {
    pub fn new(delta: f64, sigma_v: f64, sigma_theta: f64, v0: Vec2, theta0: f64) -> Result<Self, TrajectoryError> {
        let p = Self { delta, sigma_v, sigma_theta, v0, theta0, covariance: CovarianceModel::default() };
        p.validate()?;
        Ok(p)
    }

    pub fn with_covariance(mut self, covariance: CovarianceModel) -> Self {
        self.covariance = covariance;
        self
    }

    fn validate(&self) -> Result<(), TrajectoryError> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(TrajectoryError::Delta(self.delta));
        }
        if !(self.sigma_v >= 0.0 && self.sigma_theta >= 0.0) {
            return Err(TrajectoryError::Sigma(self.sigma_v, self.sigma_theta));
        }
        Ok(())
    }

    /// Per-axis covariance of `(A_v, A_τ)`.
    pub fn increment_covariance(&self) -> Matrix2<f64> {
        let (s, d) = (self.sigma_v, self.delta);
        match self.covariance {
            CovarianceModel::IntegratedBrownian => {
                let s2 = s * s;
                Matrix2::new(s2 * d, s2 * d * d / 2.0, s2 * d * d / 2.0, s2 * d * d * d / 3.0)
            }
            CovarianceModel::Literal => {
                let s2 = s * s;
                Matrix2::new(s2 * d, s2 * d / 2.0, s2 * d / 2.0, s2 * s * d / 3.0)
            }
        }
    }

    /// Lower factor `L` with `L Lᵀ = Σ`; zero when `σ_v = 0`.
    pub fn increment_factor(&self) -> Result<Matrix2<f64>, TrajectoryError> {
        let c = self.increment_covariance();
        let l11 = c[(0, 0)].sqrt();
        if l11 == 0.0 {
            return Ok(Matrix2::zeros());
        }
        let l21 = c[(1, 0)] / l11;
        let rest = c[(1, 1)] - l21 * l21;
        if rest < -1e-14 * c[(1, 1)].abs() {
            return Err(TrajectoryError::Covariance);
        }
        Ok(Matrix2::new(l11, 0.0, l21, rest.max(0.0).sqrt()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicState {
    pub v: Vec2,
    pub tau: Vec2,
    /// unwrapped
    pub theta: f64,
    pub n: usize,
}

impl KinematicState {
    pub fn initial(params: &MotionParams) -> Self {
        Self { v: params.v0, tau: Vec2::zeros(), theta: params.theta0, n: 0 }
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.tau, self.theta)
    }
}

/// One step of the motion model.
pub fn step<R: Rng + ?Sized>(
    state: &KinematicState,
    params: &MotionParams,
    rng: &mut R,
) -> Result<KinematicState, TrajectoryError> {
    let l = params.increment_factor()?;
    let mut v = state.v;
    let mut tau = state.tau + state.v * params.delta;
    for axis in 0..2 {
        let z0: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        v[axis] += l[(0, 0)] * z0;
        tau[axis] += l[(1, 0)] * z0 + l[(1, 1)] * z1;
    }
    let zt: f64 = rng.sample(StandardNormal);
    let theta = state.theta + params.sigma_theta * params.delta.sqrt() * zt;
    Ok(KinematicState { v, tau, theta, n: state.n + 1 })
}

/// States `0..=steps`, starting at the origin with angle `theta0`.
pub fn simulate_states<R: Rng + ?Sized>(
    params: &MotionParams,
    steps: usize,
    rng: &mut R,
) -> Result<Vec<KinematicState>, TrajectoryError> {
    params.validate()?;
    let mut states = Vec::with_capacity(steps + 1);
    states.push(KinematicState::initial(params));
    for _ in 0..steps {
        let next = step(states.last().expect("non-empty"), params, rng)?;
        states.push(next);
    }
    Ok(states)
}

/// Poses `0..=steps`; see [`simulate_states`] for unwrapped angles.
pub fn simulate<R: Rng + ?Sized>(params: &MotionParams, steps: usize, rng: &mut R) -> Result<Vec<Pose>, TrajectoryError> {
    Ok(simulate_states(params, steps, rng)?.iter().map(KinematicState::pose).collect())
}

/// Rows `n tau_x tau_y theta_rad` with angles wrapped to `[0, 2π)`.
pub fn write_trajectory<W: Write>(out: &mut W, poses: &[Pose]) -> std::io::Result<()> {
    writeln!(out, "# n tau_x tau_y theta_rad")?;
    for (n, p) in poses.iter().enumerate() {
        writeln!(out, "{n} {:.16e} {:.16e} {:.16e}", p.tau.x, p.tau.y, p.theta())?;
    }
    Ok(())
}

pub fn read_trajectory<R: BufRead>(input: R) -> Result<Vec<Pose>, TrajectoryError> {
    let mut poses = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse = |message: &str| TrajectoryError::Parse { line: i + 1, message: message.into() };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(parse("expected 4 fields"));
        }
        let n: usize = fields[0].parse().map_err(|_| parse("bad step index"))?;
        if n != poses.len() {
            return Err(parse("step indices must be contiguous from 0"));
        }
        let v: Vec<f64> = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<_>>()
            .ok_or_else(|| parse("bad number"))?;
        poses.push(Pose::new(Vec2::new(v[0], v[1]), v[2]));
    }
    Ok(poses)
}
