//! Inner translation search: for a trial angle, the best translation inside a
//! ball explaining the measured far field.

use num_complex::Complex64;
use thiserror::Error;

use crate::forward::FarFieldVector;
use crate::geometry::Vec2;
use crate::motion::RotationLibrary;

pub const ADAM_ITERATIONS: usize = 200;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const STEP_FRACTION: f64 = 0.05;
/// Points per axis of the coarse start scan.
pub const SCAN_POINTS: usize = 41;
/// Ball radius used before any velocity estimate exists.
pub const FALLBACK_RADIUS: f64 = 5.0;
pub const MIN_RADIUS: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum InnerOptError {
    #[error("translation is {distance} from the centre, outside the search radius {radius}")]
    OutsideBall { distance: f64, radius: f64 },
    #[error("search radius must be positive and finite, got {0}")]
    Radius(f64),
    #[error("measured far field is empty")]
    Empty,
}

/// Everything the objective needs besides the trial pose.
#[derive(Debug, Clone)]
pub struct ObjectiveContext<'a> {
    pub measured: FarFieldVector,
    pub library: &'a RotationLibrary,
    pub tau_center: Vec2,
    pub radius: f64,
}

impl<'a> ObjectiveContext<'a> {
    pub fn new(
        measured: FarFieldVector,
        library: &'a RotationLibrary,
        tau_center: Vec2,
        radius: f64,
    ) -> Result<Self, InnerOptError> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(InnerOptError::Radius(radius));
        }
        if measured.is_empty() {
            return Err(InnerOptError::Empty);
        }
        Ok(Self { measured, library, tau_center, radius })
    }

    /// Library far field of the rotated reference shape at the measured
    /// directions.
    pub fn rotated(&self, theta: f64) -> RotatedField<'_> {
        let u = self.library.query(theta, &self.measured.directions);
        let k = self.library.context().k();
        let d = self.library.context().d();
        let shifts = self.measured.directions.iter().map(|x| x - d).collect();
        RotatedField { k, shifts, u: u.values, measured: &self.measured.values }
    }

    fn check(&self, tau: &Vec2) -> Result<(), InnerOptError> {
        let distance = (tau - self.tau_center).norm();
        if distance > self.radius * (1.0 + 1e-12) {
            return Err(InnerOptError::OutsideBall { distance, radius: self.radius });
        }
        Ok(())
    }

    fn project(&self, tau: Vec2) -> Vec2 {
        let offset = tau - self.tau_center;
        let n = offset.norm();
        if n > self.radius { self.tau_center + offset * (self.radius / n) } else { tau }
    }
}

/// Rotated far field with the residual and its gradient in `τ`.
pub struct RotatedField<'m> {
    k: f64,
    shifts: Vec<Vec2>,
    u: Vec<Complex64>,
    measured: &'m [Complex64],
}

impl RotatedField<'_> {
    /// `‖e^{−ikτ·(x̂−d)}u − measured‖²` and its gradient.
    pub fn squared_with_gradient(&self, tau: &Vec2) -> (f64, Vec2) {
        let mut value = 0.0;
        let mut grad = Vec2::zeros();
        for ((w, u), m) in self.shifts.iter().zip(&self.u).zip(self.measured) {
            let shifted = u * Complex64::from_polar(1.0, -self.k * tau.dot(w));
            let r = shifted - m;
            value += r.norm_sqr();
            let g = -2.0 * (r.conj() * Complex64::i() * self.k * shifted).re;
            grad += w * g;
        }
        (value, grad)
    }

    pub fn residual(&self, tau: &Vec2) -> f64 {
        self.squared_with_gradient(tau).0.sqrt()
    }
}

/// Discrete ℓ² misfit of the rotated and translated library far field.
pub fn residual(theta: f64, tau: &Vec2, ctx: &ObjectiveContext) -> Result<f64, InnerOptError> {
    ctx.check(tau)?;
    Ok(ctx.rotated(theta).residual(tau))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauSearch {
    pub tau: Vec2,
    pub value: f64,
}

fn adam(field: &RotatedField, ctx: &ObjectiveContext, start: Vec2) -> TauSearch {
    let lr = STEP_FRACTION * ctx.radius;
    let mut tau = start;
    let (mut m, mut v) = (Vec2::zeros(), Vec2::zeros());
    let (v0, _) = field.squared_with_gradient(&tau);
    let mut best = TauSearch { tau, value: v0 };
    for t in 1..=ADAM_ITERATIONS {
        let (value, g) = field.squared_with_gradient(&tau);
        if value < best.value {
            best = TauSearch { tau, value };
        }
        m = m * ADAM_BETA1 + g * (1.0 - ADAM_BETA1);
        v = v * ADAM_BETA2 + g.component_mul(&g) * (1.0 - ADAM_BETA2);
        let mh = m / (1.0 - ADAM_BETA1.powi(t as i32));
        let vh = v / (1.0 - ADAM_BETA2.powi(t as i32));
        let step = mh.zip_map(&vh, |a, b| lr * a / (b.sqrt() + 1e-300));
        let next = ctx.project(tau - step);
        let moved = (next - tau).norm();
        tau = next;
        if moved < 1e-8 * ctx.radius {
            break;
        }
    }
    let (value, _) = field.squared_with_gradient(&tau);
    if value < best.value {
        best = TauSearch { tau, value };
    }
    best
}

fn scan_start(field: &RotatedField, ctx: &ObjectiveContext) -> Vec2 {
    let h = 2.0 * ctx.radius / (SCAN_POINTS - 1) as f64;
    let mut best = (f64::INFINITY, ctx.tau_center);
    for i in 0..SCAN_POINTS {
        for j in 0..SCAN_POINTS {
            let off = Vec2::new(-ctx.radius + i as f64 * h, -ctx.radius + j as f64 * h);
            if off.norm() > ctx.radius {
                continue;
            }
            let tau = ctx.tau_center + off;
            let (value, _) = field.squared_with_gradient(&tau);
            if value < best.0 {
                best = (value, tau);
            }
        }
    }
    best.1
}

/// Best translation in the ball for a fixed angle, by projected Adam from the
/// centre, four axis offsets of `M/2`, and the best point of a coarse scan.
pub fn minimize_tau(theta: f64, ctx: &ObjectiveContext) -> TauSearch {
    let field = ctx.rotated(theta);
    let c = ctx.tau_center;
    let h = ctx.radius / 2.0;
    let starts = [
        c,
        c + Vec2::new(h, 0.0),
        c - Vec2::new(h, 0.0),
        c + Vec2::new(0.0, h),
        c - Vec2::new(0.0, h),
        scan_start(&field, ctx),
    ];
    let best = starts
        .iter()
        .map(|&s| adam(&field, ctx, s))
        .reduce(|a, b| if b.value < a.value { b } else { a })
        .expect("non-empty starts");
    TauSearch { tau: best.tau, value: best.value.sqrt() }
}

/// Minimal residual over the ball at angle `theta`.
pub fn objective_f(theta: f64, ctx: &ObjectiveContext) -> f64 {
    minimize_tau(theta, ctx).value
}

/// Search radius `3σ_v δ^{3/2} + ‖v̂‖δ`, or [`FALLBACK_RADIUS`] without a
/// velocity estimate; never below [`MIN_RADIUS`].
pub fn search_radius(sigma_v: f64, delta: f64, velocity: Option<&Vec2>) -> f64 {
    match velocity {
        None => FALLBACK_RADIUS,
        Some(v) => (3.0 * sigma_v * delta.powf(1.5) + v.norm() * delta).max(MIN_RADIUS),
    }
}
