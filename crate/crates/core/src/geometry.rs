//! Perturbed-ellipse boundaries, rigid motions and random shape generation.
//!
//! A boundary is the image of the circle `|w| = r` under
//!
//! ```text
//! w ↦ w + e0 + e1/w + ε (w − e1/w) · 2 Re Σ_{n<N} f_n e^{i n t},   w = r e^{i t}
//! ```
//!
//! with complex points identified with the plane via `(Re, Im)`.

use std::f64::consts::{PI, TAU};

use nalgebra::{Rotation2, Vector2};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec2 = Vector2<f64>;

/// Smallest number of boundary nodes accepted by [`discretize`].
pub const MIN_NODES: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShapeError {
    #[error("base radius must be positive and finite, got {0}")]
    Radius(f64),
    #[error("perturbation scale must be positive and finite, got {0}")]
    Epsilon(f64),
    #[error("|e1| = {e1} must be below r^2 = {r2}")]
    Eccentricity { e1: f64, r2: f64 },
    #[error("max |f_n| = {max} violates the origin-enclosure bound {bound}")]
    Perturbation { max: f64, bound: f64 },
    #[error("node count {0} must be even and at least {MIN_NODES}")]
    NodeCount(usize),
    #[error("no admissible shape after {0} attempts; parameter ranges are inconsistent")]
    Infeasible(usize),
    #[error("invalid parameter range: {0}")]
    Range(String),
}

/// Boundary shape parameters of a perturbed ellipse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ShapeRecord", into = "ShapeRecord")]
pub struct PerturbedEllipse {
    r: f64,
    eps: f64,
    e0: Complex64,
    e1: Complex64,
    fourier: Vec<Complex64>,
}

/// Plain serialized form; validated on the way back in.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ShapeRecord {
    r: f64,
    eps: f64,
    e0: [f64; 2],
    e1: [f64; 2],
    fourier: Vec<[f64; 2]>,
}

impl TryFrom<ShapeRecord> for PerturbedEllipse {
    type Error = ShapeError;

    fn try_from(rec: ShapeRecord) -> Result<Self, ShapeError> {
        PerturbedEllipse::new(
            rec.r,
            rec.eps,
            Complex64::new(rec.e0[0], rec.e0[1]),
            Complex64::new(rec.e1[0], rec.e1[1]),
            rec.fourier.iter().map(|f| Complex64::new(f[0], f[1])).collect(),
        )
    }
}

impl From<PerturbedEllipse> for ShapeRecord {
    fn from(s: PerturbedEllipse) -> Self {
        ShapeRecord {
            r: s.r,
            eps: s.eps,
            e0: [s.e0.re, s.e0.im],
            e1: [s.e1.re, s.e1.im],
            fourier: s.fourier.iter().map(|f| [f.re, f.im]).collect(),
        }
    }
}

impl PerturbedEllipse {
    pub fn new(
        r: f64,
        eps: f64,
        e0: Complex64,
        e1: Complex64,
        fourier: Vec<Complex64>,
    ) -> Result<Self, ShapeError> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(ShapeError::Radius(r));
        }
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(ShapeError::Epsilon(eps));
        }
        let e1_abs = e1.norm();
        if !(e1_abs < r * r) {
            return Err(ShapeError::Eccentricity { e1: e1_abs, r2: r * r });
        }
        let max = max_modulus(&fourier);
        let bound = fourier_bound(r, e1_abs, fourier.len(), eps);
        if !(max < bound) {
            return Err(ShapeError::Perturbation { max, bound });
        }
        Ok(Self { r, eps, e0, e1, fourier })
    }

    /// Circle of the given radius centred at the origin.
    pub fn disk(radius: f64) -> Result<Self, ShapeError> {
        Self::new(radius, 0.01, Complex64::default(), Complex64::default(), Vec::new())
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn e0(&self) -> Complex64 {
        self.e0
    }

    pub fn e1(&self) -> Complex64 {
        self.e1
    }

    pub fn fourier(&self) -> &[Complex64] {
        &self.fourier
    }

    /// Right-hand side of the origin-enclosure inequality,
    /// `(r² − |e1|)/(r² + |e1|) · 1/(2Nε)`.
    pub fn fourier_bound(&self) -> f64 {
        fourier_bound(self.r, self.e1.norm(), self.fourier.len(), self.eps)
    }

    pub fn satisfies_enclosure_condition(&self) -> bool {
        max_modulus(&self.fourier) < self.fourier_bound()
    }

    /// Point, first and second derivative of the boundary map at parameter `t`.
    pub fn evaluate(&self, t: f64) -> (Vec2, Vec2, Vec2) {
        let i = Complex64::i();
        let w = Complex64::from_polar(self.r, t);
        let e1_w = self.e1 / w;

        let base = w + self.e0 + e1_w;
        let base_d = i * (w - e1_w);
        let base_dd = -(w + e1_w);

        let pert = w - e1_w;
        let pert_d = i * (w + e1_w);
        let pert_dd = -pert;

        let (mut g, mut g_d, mut g_dd) = (0.0, 0.0, 0.0);
        for (n, f) in self.fourier.iter().enumerate() {
            let nf = n as f64;
            let z = f * Complex64::from_polar(1.0, nf * t);
            g += 2.0 * z.re;
            g_d += 2.0 * (i * nf * z).re;
            g_dd += -2.0 * nf * nf * z.re;
        }

        let eps = self.eps;
        let p = base + eps * pert * g;
        let d = base_d + eps * (pert_d * g + pert * g_d);
        let dd = base_dd + eps * (pert_dd * g + 2.0 * pert_d * g_d + pert * g_dd);
        (to_vec(p), to_vec(d), to_vec(dd))
    }

    /// Diameter estimated from `samples` equispaced boundary points.
    pub fn diameter(&self, samples: usize) -> f64 {
        let pts: Vec<Vec2> = (0..samples)
            .map(|j| self.evaluate(TAU * j as f64 / samples as f64).0)
            .collect();
        point_set_diameter(&pts)
    }
}

fn to_vec(z: Complex64) -> Vec2 {
    Vec2::new(z.re, z.im)
}

fn max_modulus(values: &[Complex64]) -> f64 {
    values.iter().map(|f| f.norm()).fold(0.0, f64::max)
}

fn fourier_bound(r: f64, e1_abs: f64, n: usize, eps: f64) -> f64 {
    let r2 = r * r;
    let ratio = (r2 - e1_abs) / (r2 + e1_abs);
    if n == 0 {
        return f64::INFINITY;
    }
    ratio / (2.0 * n as f64 * eps)
}

pub(crate) fn point_set_diameter(pts: &[Vec2]) -> f64 {
    let mut best: f64 = 0.0;
    for (a, p) in pts.iter().enumerate() {
        for q in &pts[a + 1..] {
            best = best.max((p - q).norm());
        }
    }
    best
}

/// Boundary point and its exact parameter derivative at `t`.
pub fn boundary_point(shape: &PerturbedEllipse, t: f64) -> (Vec2, Vec2) {
    let (p, d, _) = shape.evaluate(t);
    (p, d)
}

/// Lower bound on the distance from the origin to the boundary.
pub fn min_origin_distance_bound(shape: &PerturbedEllipse) -> f64 {
    let r = shape.r;
    let e1 = shape.e1.norm();
    let n = shape.fourier.len() as f64;
    r - e1 / r - shape.e0.norm() - 2.0 * n * shape.eps * max_modulus(&shape.fourier) * (r + e1 / r)
}

/// Displacement and orientation of a rigidly moved scatterer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub tau: Vec2,
    theta: f64,
}

impl Pose {
    pub fn new(tau: Vec2, theta: f64) -> Self {
        Self { tau, theta: wrap_angle(theta) }
    }

    pub fn identity() -> Self {
        Self::new(Vec2::zeros(), 0.0)
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn rotation(&self) -> Rotation2<f64> {
        Rotation2::new(self.theta)
    }

    /// `R_θ p + τ`.
    pub fn apply(&self, p: &Vec2) -> Vec2 {
        self.rotation() * p + self.tau
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

/// Reduces an angle into `[0, 2π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(TAU);
    if t >= TAU {
        0.0
    } else {
        t
    }
}

/// Boundary samples at equispaced parameters, after a rigid motion.
#[derive(Debug, Clone)]
pub struct BoundaryDiscretization {
    pub nodes: Vec<Vec2>,
    pub tangents: Vec<Vec2>,
    pub second_derivatives: Vec<Vec2>,
    pub normals: Vec<Vec2>,
    pub jacobians: Vec<f64>,
    pub n_points: usize,
}

impl BoundaryDiscretization {
    pub fn centroid(&self) -> Vec2 {
        self.nodes.iter().sum::<Vec2>() / self.n_points as f64
    }

    pub fn diameter(&self) -> f64 {
        point_set_diameter(&self.nodes)
    }

    /// Parameter spacing `2π / n`.
    pub fn step(&self) -> f64 {
        TAU / self.n_points as f64
    }
}

/// Samples the posed boundary at `t_j = 2πj/n`.
pub fn discretize(
    shape: &PerturbedEllipse,
    pose: &Pose,
    n_points: usize,
) -> Result<BoundaryDiscretization, ShapeError> {
    if n_points < MIN_NODES || !n_points.is_multiple_of(2) {
        return Err(ShapeError::NodeCount(n_points));
    }
    let rot = pose.rotation();
    let mut disc = BoundaryDiscretization {
        nodes: Vec::with_capacity(n_points),
        tangents: Vec::with_capacity(n_points),
        second_derivatives: Vec::with_capacity(n_points),
        normals: Vec::with_capacity(n_points),
        jacobians: Vec::with_capacity(n_points),
        n_points,
    };
    for j in 0..n_points {
        let t = TAU * j as f64 / n_points as f64;
        let (p, d, dd) = shape.evaluate(t);
        let d = rot * d;
        let jac = d.norm();
        disc.nodes.push(rot * p + pose.tau);
        disc.tangents.push(d);
        disc.second_derivatives.push(rot * dd);
        // counter-clockwise curve: outward normal is the tangent turned by −π/2
        disc.normals.push(Vec2::new(d.y, -d.x) / jac);
        disc.jacobians.push(jac);
    }
    Ok(disc)
}

/// Posed boundary samples, for plotting and shape metrics.
pub fn sample_boundary(shape: &PerturbedEllipse, pose: &Pose, samples: usize) -> Vec<Vec2> {
    (0..samples)
        .map(|j| pose.apply(&shape.evaluate(TAU * j as f64 / samples as f64).0))
        .collect()
}

/// Symmetric Hausdorff distance between two point clouds.
pub fn hausdorff_distance(a: &[Vec2], b: &[Vec2]) -> f64 {
    let directed = |from: &[Vec2], to: &[Vec2]| {
        from.iter()
            .map(|p| to.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    directed(a, b).max(directed(b, a))
}

/// Sampling ranges for random perturbed ellipses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeRanges {
    pub n_fourier: usize,
    pub eps: f64,
    pub r: (f64, f64),
    pub e1_modulus: (f64, f64),
    pub f_modulus: (f64, f64),
    pub max_attempts: usize,
}

impl Default for ShapeRanges {
    fn default() -> Self {
        Self {
            n_fourier: 5,
            eps: 0.01,
            r: (9.5, 13.5),
            e1_modulus: (0.0, 70.0),
            f_modulus: (0.0, 1.0),
            max_attempts: 1000,
        }
    }
}

impl ShapeRanges {
    fn validate(&self) -> Result<(), ShapeError> {
        let ordered = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi && lo >= 0.0;
        if !ordered(self.r) || self.r.0 <= 0.0 {
            return Err(ShapeError::Range(format!("r range {:?}", self.r)));
        }
        if !ordered(self.e1_modulus) {
            return Err(ShapeError::Range(format!("|e1| range {:?}", self.e1_modulus)));
        }
        if !ordered(self.f_modulus) {
            return Err(ShapeError::Range(format!("|f_n| range {:?}", self.f_modulus)));
        }
        if !(self.eps > 0.0) {
            return Err(ShapeError::Epsilon(self.eps));
        }
        if self.max_attempts == 0 {
            return Err(ShapeError::Range("max_attempts must be positive".into()));
        }
        Ok(())
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Draws a perturbed ellipse whose boundary encloses the origin.
///
/// Moduli are uniform in their ranges, phases uniform in `[0, 2π)`. The
/// Fourier coefficients are redrawn until the enclosure inequality holds;
/// `r` and `e1` are redrawn when `|e1| >= r²` or the diameter is at most 2π.
pub fn random_shape<R: Rng + ?Sized>(
    rng: &mut R,
    ranges: &ShapeRanges,
) -> Result<PerturbedEllipse, ShapeError> {
    ranges.validate()?;
    let mut attempts = 0;
    while attempts < ranges.max_attempts {
        attempts += 1;
        let r = uniform(rng, ranges.r);
        let e1 = Complex64::from_polar(uniform(rng, ranges.e1_modulus), rng.random_range(0.0..TAU));
        if e1.norm() >= r * r {
            continue;
        }
        let bound = fourier_bound(r, e1.norm(), ranges.n_fourier, ranges.eps);
        let mut fourier = Vec::new();
        let mut found = false;
        while attempts < ranges.max_attempts {
            fourier = (0..ranges.n_fourier)
                .map(|_| Complex64::from_polar(uniform(rng, ranges.f_modulus), rng.random_range(0.0..TAU)))
                .collect();
            if max_modulus(&fourier) < bound {
                found = true;
                break;
            }
            attempts += 1;
        }
        if !found {
            break;
        }
        let shape = PerturbedEllipse::new(r, ranges.eps, Complex64::default(), e1, fourier)?;
        if shape.diameter(256) > 2.0 * PI {
            return Ok(shape);
        }
    }
    Err(ShapeError::Infeasible(ranges.max_attempts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: &Vec2, b: &Vec2, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    /// Winding number about the origin by accumulating wrapped angle increments.
    fn winding_number(pts: &[Vec2]) -> f64 {
        let mut total = 0.0;
        for j in 0..pts.len() {
            let a = pts[j];
            let b = pts[(j + 1) % pts.len()];
            let mut d = b.y.atan2(b.x) - a.y.atan2(a.x);
            if d > PI {
                d -= TAU;
            } else if d < -PI {
                d += TAU;
            }
            total += d;
        }
        total / TAU
    }

    #[test]
    fn unit_circle_parametrization() {
        let disk = PerturbedEllipse::disk(1.0).unwrap();
        for &t in &[0.0, 0.3, 1.7, 4.0] {
            let (p, d) = boundary_point(&disk, t);
            assert!(close(&p, &Vec2::new(t.cos(), t.sin()), 1e-15));
            assert!(close(&d, &Vec2::new(-t.sin(), t.cos()), 1e-15));
        }
    }

    #[test]
    fn unperturbed_ellipse_matches_closed_form() {
        let (r, xi) = (3.0, 2.0);
        let shape = PerturbedEllipse::new(r, 0.01, Complex64::default(), Complex64::new(xi, 0.0), vec![]).unwrap();
        for &t in &[0.1, 1.0, 2.5, 5.9] {
            let (p, _) = boundary_point(&shape, t);
            let want = Vec2::new((r + xi / r) * t.cos(), (r - xi / r) * t.sin());
            assert!(close(&p, &want, 1e-14));
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shape = random_shape(&mut rng, &ShapeRanges::default()).unwrap();
        let h = 1e-5;
        for &t in &[0.2, 1.1, 3.3, 5.0] {
            let (_, d, dd) = shape.evaluate(t);
            let (pp, dp, _) = shape.evaluate(t + h);
            let (pm, dm, _) = shape.evaluate(t - h);
            assert!(close(&((pp - pm) / (2.0 * h)), &d, 1e-6 * d.norm()));
            assert!(close(&((dp - dm) / (2.0 * h)), &dd, 1e-6 * dd.norm()));
        }
    }

    #[test]
    fn boundary_is_periodic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let shape = random_shape(&mut rng, &ShapeRanges::default()).unwrap();
            let (p0, d0) = boundary_point(&shape, 0.0);
            let (p1, d1) = boundary_point(&shape, TAU);
            assert!(close(&p0, &p1, 1e-12 * p0.norm()));
            assert!(close(&d0, &d1, 1e-12 * d0.norm()));
        }
    }

    #[test]
    fn discretize_unit_circle_and_poses() {
        let disk = PerturbedEllipse::disk(1.0).unwrap();
        let disc = discretize(&disk, &Pose::identity(), 16).unwrap();
        let quarter = [(0, 1.0, 0.0), (4, 0.0, 1.0), (8, -1.0, 0.0), (12, 0.0, -1.0)];
        for (j, x, y) in quarter {
            assert!(close(&disc.nodes[j], &Vec2::new(x, y), 1e-15));
        }
        let shifted = discretize(&disk, &Pose::new(Vec2::new(1.0, 0.0), 0.0), 16).unwrap();
        for (a, b) in disc.nodes.iter().zip(&shifted.nodes) {
            assert!(close(&(a + Vec2::new(1.0, 0.0)), b, 1e-15));
        }
    }

    #[test]
    fn discretize_quarter_turn_rotates_nodes_and_normals() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let shape = random_shape(&mut rng, &ShapeRanges::default()).unwrap();
        let base = discretize(&shape, &Pose::identity(), 64).unwrap();
        let turned = discretize(&shape, &Pose::new(Vec2::zeros(), PI / 2.0), 64).unwrap();
        for j in 0..64 {
            let p = base.nodes[j];
            assert!(close(&turned.nodes[j], &Vec2::new(-p.y, p.x), 1e-12));
            let n = base.normals[j];
            assert!(close(&turned.normals[j], &Vec2::new(-n.y, n.x), 1e-12));
        }
    }

    #[test]
    fn discretize_rejects_bad_counts() {
        let disk = PerturbedEllipse::disk(1.0).unwrap();
        assert_eq!(discretize(&disk, &Pose::identity(), 4).unwrap_err(), ShapeError::NodeCount(4));
        assert_eq!(discretize(&disk, &Pose::identity(), 33).unwrap_err(), ShapeError::NodeCount(33));
    }

    #[test]
    fn normals_unit_and_outward() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..5 {
            let shape = random_shape(&mut rng, &ShapeRanges::default()).unwrap();
            let disc = discretize(&shape, &Pose::new(Vec2::new(2.0, -1.0), 0.7), 128).unwrap();
            let c = disc.centroid();
            for (p, n) in disc.nodes.iter().zip(&disc.normals) {
                assert!((n.norm() - 1.0).abs() < 1e-12);
                assert!((p - c).dot(n) > 0.0);
            }
        }
    }

    #[test]
    fn translations_compose() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let shape = random_shape(&mut rng, &ShapeRanges::default()).unwrap();
        let (t1, t2) = (Vec2::new(0.5, -2.0), Vec2::new(3.25, 1.5));
        let single = discretize(&shape, &Pose::new(t1 + t2, 0.0), 32).unwrap();
        let first = discretize(&shape, &Pose::new(t1, 0.0), 32).unwrap();
        for (a, b) in first.nodes.iter().zip(&single.nodes) {
            assert!(close(&(a + t2), b, 1e-14));
        }
    }

    #[test]
    fn distance_bound_examples() {
        let circle = PerturbedEllipse::disk(2.0).unwrap();
        assert!((min_origin_distance_bound(&circle) - 2.0).abs() < 1e-15);
        let ellipse = PerturbedEllipse::new(10.0, 0.01, Complex64::default(), Complex64::new(0.0, 50.0), vec![]).unwrap();
        assert!((min_origin_distance_bound(&ellipse) - 5.0).abs() < 1e-14);
    }

    #[test]
    fn random_shapes_enclose_origin() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for _ in 0..40 {
            let shape = random_shape(&mut rng, &ShapeRanges::default()).unwrap();
            assert!(shape.satisfies_enclosure_condition());
            let r = shape.r();
            assert!(r - shape.e1().norm() / r > 0.0);
            let dense = sample_boundary(&shape, &Pose::identity(), 10_000);
            let min_dist = dense.iter().map(|p| p.norm()).fold(f64::INFINITY, f64::min);
            let bound = min_origin_distance_bound(&shape);
            assert!(bound > 0.0 && bound <= min_dist, "bound {bound} vs {min_dist}");
            assert!((winding_number(&dense) - 1.0).abs() < 1e-9);
            assert!(shape.diameter(256) > TAU);
        }
    }

    #[test]
    fn infeasible_ranges_are_reported() {
        let ranges = ShapeRanges {
            r: (5.0, 5.0),
            e1_modulus: (25.0, 25.0),
            max_attempts: 50,
            ..ShapeRanges::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(random_shape(&mut rng, &ranges).unwrap_err(), ShapeError::Infeasible(50));
    }

    #[test]
    fn constructor_enforces_invariants() {
        let z = Complex64::default();
        assert!(PerturbedEllipse::new(-1.0, 0.01, z, z, vec![]).is_err());
        assert!(PerturbedEllipse::new(2.0, 0.01, z, Complex64::new(4.0, 0.0), vec![]).is_err());
        // bound at r=10, e1=0, N=1, eps=0.01 is 50
        assert!(PerturbedEllipse::new(10.0, 0.01, z, z, vec![Complex64::new(50.0, 0.0)]).is_err());
        assert!(PerturbedEllipse::new(10.0, 0.01, z, z, vec![Complex64::new(49.0, 0.0)]).is_ok());
    }

    #[test]
    fn pose_wraps_angle() {
        let p = Pose::new(Vec2::zeros(), -0.5);
        assert!((p.theta() - (TAU - 0.5)).abs() < 1e-15);
        assert!(Pose::new(Vec2::zeros(), 7.0 * TAU).theta() < 1e-12);
    }

    #[test]
    fn serde_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let shape = random_shape(&mut rng, &ShapeRanges::default()).unwrap();
        let text = serde_json::to_string(&shape).unwrap();
        let back: PerturbedEllipse = serde_json::from_str(&text).unwrap();
        assert_eq!(back, shape);
        let bad = r#"{"r":2.0,"eps":0.01,"e0":[0,0],"e1":[5.0,0],"fourier":[]}"#;
        assert!(serde_json::from_str::<PerturbedEllipse>(bad).is_err());
    }
}
