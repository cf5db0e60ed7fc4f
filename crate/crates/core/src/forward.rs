//! Direct scattering by a sound-soft obstacle.
//!
//! The scattered field is the combined potential
//! `u^s = ∫ (∂Φ/∂n(y) − iηΦ) φ ds`, whose density solves
//! `(½I + K − iηS) φ = −u^i` on the boundary. The equation is discretized by
//! the Nyström method with the logarithmic kernel split of Kress: each kernel
//! is written as `K₁(t,s) ln(4 sin²((t−s)/2)) + K₂(t,s)`, the log part is
//! integrated exactly against the trigonometric interpolant and the smooth
//! part with the trapezoidal rule. This converges exponentially on analytic
//! boundaries.

use std::f64::consts::{FRAC_1_PI, PI, TAU};
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector, LU};
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{discretize, BoundaryDiscretization, PerturbedEllipse, Pose, ShapeError, Vec2};
use crate::specfun::{bessel_all, EULER_GAMMA};

/// Minimum points per wavelength accepted by [`assemble_cfie`].
pub const POINTS_PER_WAVELENGTH: f64 = 10.0;

/// Node count used for the default shape class (diameters up to about 45 at k = 1).
pub const DEFAULT_NODES: usize = 192;

/// Relative residual above which a density solve is rejected.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("invalid wave context: {0}")]
    Context(String),
    #[error(
        "{n_points} nodes under-resolve the boundary: need at least {required} \
         ({points_per_wavelength:.2} points per wavelength at diameter {diameter:.3})"
    )]
    UnderResolved {
        n_points: usize,
        required: usize,
        diameter: f64,
        points_per_wavelength: f64,
    },
    #[error("integral equation matrix is singular (condition estimate {condition:e})")]
    Singular { condition: f64 },
    #[error("density residual {residual:e} exceeds tolerance (condition estimate {condition:e})")]
    IllConditioned { residual: f64, condition: f64 },
    #[error("right-hand side has {got} entries, expected {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("far-field file: {0}")]
    Format(String),
}

/// Wavenumber, incident direction and coupling parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveContext {
    k: f64,
    d: Vec2,
    eta: f64,
}

impl WaveContext {
    pub fn new(k: f64, d: Vec2, eta: f64) -> Result<Self, SolverError> {
        if !(k > 0.0) || !k.is_finite() {
            return Err(SolverError::Context(format!("wavenumber must be positive, got {k}")));
        }
        if ((d.norm() - 1.0).abs()) > 1e-12 {
            return Err(SolverError::Context(format!("incident direction must be a unit vector, |d| = {}", d.norm())));
        }
        if eta == 0.0 || !eta.is_finite() {
            return Err(SolverError::Context(format!("coupling parameter must be nonzero and finite, got {eta}")));
        }
        Ok(Self { k, d, eta })
    }

    /// `η = k`, the usual choice for a well-conditioned equation.
    pub fn with_default_eta(k: f64, d: Vec2) -> Result<Self, SolverError> {
        Self::new(k, d, k)
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn d(&self) -> Vec2 {
        self.d
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Same wavenumber and coupling, different incident direction.
    pub fn with_direction(&self, d: Vec2) -> Result<Self, SolverError> {
        Self::new(self.k, d, self.eta)
    }

    /// Incident angle `atan2(d_y, d_x)`.
    pub fn incident_angle(&self) -> f64 {
        self.d.y.atan2(self.d.x)
    }
}

/// Unit vector at angle `angle`.
pub fn unit(angle: f64) -> Vec2 {
    Vec2::new(angle.cos(), angle.sin())
}

/// `count` equispaced directions starting at angle 0.
pub fn direction_grid(count: usize) -> Vec<Vec2> {
    (0..count).map(|j| unit(TAU * j as f64 / count as f64)).collect()
}

/// Density values at the discretization nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryDensity {
    pub values: Vec<Complex64>,
    pub context: WaveContext,
}

/// Far-field samples over a set of observation directions.
#[derive(Debug, Clone, PartialEq)]
pub struct FarFieldVector {
    pub directions: Vec<Vec2>,
    pub values: Vec<Complex64>,
    pub context: WaveContext,
}

impl FarFieldVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn angles(&self) -> Vec<f64> {
        self.directions.iter().map(|x| x.y.atan2(x.x)).collect()
    }

    /// Discrete ℓ² norm of the values.
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Max-norm distance between two far fields sampled at the same directions.
    pub fn max_diff(&self, other: &FarFieldVector) -> f64 {
        assert_eq!(self.len(), other.len(), "far fields sampled on different grids");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// `max_diff` divided by `other.max_abs()`.
    pub fn relative_max_diff(&self, reference: &FarFieldVector) -> f64 {
        self.max_diff(reference) / reference.max_abs()
    }

    /// Keeps the entries at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> FarFieldVector {
        FarFieldVector {
            directions: indices.iter().map(|&i| self.directions[i]).collect(),
            values: indices.iter().map(|&i| self.values[i]).collect(),
            context: self.context,
        }
    }

    /// Text form: `k`, `d`, `eta` header lines, then one `angle re im` row per direction.
    /// Extra `#` comment lines may precede the data.
    pub fn write_text<W: Write>(&self, out: &mut W, comments: &[String]) -> std::io::Result<()> {
        writeln!(out, "# farfield v1")?;
        for c in comments {
            writeln!(out, "# {c}")?;
        }
        writeln!(out, "k {:.16e}", self.context.k)?;
        writeln!(out, "d {:.16e} {:.16e}", self.context.d.x, self.context.d.y)?;
        writeln!(out, "eta {:.16e}", self.context.eta)?;
        writeln!(out, "samples {}", self.len())?;
        for (x, v) in self.directions.iter().zip(&self.values) {
            writeln!(out, "{:.16e} {:.16e} {:.16e}", x.y.atan2(x.x), v.re, v.im)?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<Self, SolverError> {
        let bad = |line: usize, msg: &str| SolverError::Format(format!("line {line}: {msg}"));
        let mut k = None;
        let mut d = None;
        let mut eta = None;
        let mut expected = None;
        let mut directions = Vec::new();
        let mut values = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|e| SolverError::Format(e.to_string()))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split_whitespace();
            let head = fields.next().unwrap_or_default();
            let mut nums = |n: usize| -> Result<Vec<f64>, SolverError> {
                let v: Result<Vec<f64>, _> = fields.by_ref().map(str::parse::<f64>).collect();
                let v = v.map_err(|e| bad(lineno, &e.to_string()))?;
                if v.len() != n {
                    return Err(bad(lineno, &format!("expected {n} numbers")));
                }
                Ok(v)
            };
            match head {
                "k" => k = Some(nums(1)?[0]),
                "d" => {
                    let v = nums(2)?;
                    d = Some(Vec2::new(v[0], v[1]));
                }
                "eta" => eta = Some(nums(1)?[0]),
                "samples" => {
                    let n = fields
                        .next()
                        .and_then(|s| s.parse::<usize>().ok())
                        .ok_or_else(|| bad(lineno, "bad sample count"))?;
                    expected = Some(n);
                }
                _ => {
                    let angle: f64 = head.parse().map_err(|_| bad(lineno, "unrecognized record"))?;
                    let v = nums(2)?;
                    directions.push(unit(angle));
                    values.push(Complex64::new(v[0], v[1]));
                }
            }
        }
        let missing = |what: &str| SolverError::Format(format!("missing {what} header"));
        let context = WaveContext::new(k.ok_or_else(|| missing("k"))?, d.ok_or_else(|| missing("d"))?, eta.ok_or_else(|| missing("eta"))?)?;
        if let Some(n) = expected {
            if n != values.len() {
                return Err(SolverError::Format(format!("declared {n} samples, found {}", values.len())));
            }
        }
        Ok(FarFieldVector { directions, values, context })
    }
}

/// Nyström matrix of `½I + K − iηS` on a discretized boundary.
#[derive(Debug, Clone)]
pub struct CfieMatrix {
    matrix: DMatrix<Complex64>,
    context: WaveContext,
}

/// Smallest even node count satisfying the resolution rule for a diameter.
pub fn required_nodes(k: f64, diameter: f64) -> usize {
    let n = (POINTS_PER_WAVELENGTH * k * diameter / TAU).ceil() as usize;
    n + n % 2
}

/// Weights of the trigonometric quadrature for `∫ ln(4 sin²((t−s)/2)) f(s) ds`,
/// indexed by `|i − j|` for `2m` equispaced nodes.
fn log_weights(n_points: usize) -> Vec<f64> {
    let m = n_points / 2;
    let mf = m as f64;
    (0..n_points)
        .map(|j| {
            let jf = j as f64;
            let sum: f64 = (1..m).map(|q| (q as f64 * jf * PI / mf).cos() / q as f64).sum();
            let alt = if j % 2 == 0 { 1.0 } else { -1.0 };
            -TAU / mf * sum - PI / (mf * mf) * alt
        })
        .collect()
}

/// Assembles the Nyström matrix. Rows are computed in parallel.
pub fn assemble_cfie(disc: &BoundaryDiscretization, ctx: &WaveContext) -> Result<CfieMatrix, SolverError> {
    let n = disc.n_points;
    let diameter = disc.diameter();
    let required = required_nodes(ctx.k, diameter);
    if n < required {
        return Err(SolverError::UnderResolved {
            n_points: n,
            required,
            diameter,
            points_per_wavelength: n as f64 * TAU / (ctx.k * diameter),
        });
    }

    let k = ctx.k;
    let eta = ctx.eta;
    let i = Complex64::i();
    let weights = log_weights(n);
    let smooth_weight = TAU / n as f64;
    let inv_2pi = 0.5 * FRAC_1_PI;

    let rows: Vec<Vec<Complex64>> = (0..n)
        .into_par_iter()
        .map(|row| {
            let t_row = TAU * row as f64 / n as f64;
            let x = disc.nodes[row];
            (0..n)
                .map(|col| {
                    let jac = disc.jacobians[col];
                    let (l1, l2, m1, m2);
                    if row == col {
                        let d = disc.tangents[col];
                        let dd = disc.second_derivatives[col];
                        l1 = 0.0;
                        l2 = Complex64::from(inv_2pi * (d.y * dd.x - d.x * dd.y) / (jac * jac));
                        m1 = -inv_2pi * jac;
                        m2 = Complex64::new(-EULER_GAMMA * FRAC_1_PI - FRAC_1_PI * (0.5 * k * jac).ln(), 0.5) * jac;
                    } else {
                        let y = disc.nodes[col];
                        let diff = x - y;
                        let r = diff.norm();
                        let b = bessel_all(k * r).expect("distinct nodes give positive arguments");
                        // ⟨ν(s), x(t) − x(s)⟩ with ν the unnormalized normal
                        let nu_dot = disc.normals[col].dot(&diff) * jac;
                        let t_col = TAU * col as f64 / n as f64;
                        let s = (0.5 * (t_row - t_col)).sin();
                        let log_term = (4.0 * s * s).ln();

                        let l = 0.5 * i * k * nu_dot * b.h1() / r;
                        l1 = -k * inv_2pi * nu_dot * b.j1 / r;
                        l2 = l - l1 * log_term;
                        let m = 0.5 * i * b.h0() * jac;
                        m1 = -inv_2pi * b.j0 * jac;
                        m2 = m - m1 * log_term;
                    }
                    let k1 = Complex64::from(l1) - i * eta * m1;
                    let k2 = l2 - i * eta * m2;
                    let w = weights[row.abs_diff(col)];
                    let delta = if row == col { 1.0 } else { 0.0 };
                    0.5 * (delta + w * k1 + smooth_weight * k2)
                })
                .collect()
        })
        .collect();

    let flat: Vec<Complex64> = rows.into_iter().flatten().collect();
    Ok(CfieMatrix {
        matrix: DMatrix::from_row_slice(n, n, &flat),
        context: *ctx,
    })
}

impl CfieMatrix {
    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn context(&self) -> &WaveContext {
        &self.context
    }

    pub fn n_points(&self) -> usize {
        self.matrix.nrows()
    }

    /// LU factorization with partial pivoting, reusable for every incident direction.
    pub fn factor(&self) -> FactoredCfie {
        FactoredCfie {
            lu: self.matrix.clone().lu(),
            matrix: self.matrix.clone(),
            context: self.context,
        }
    }
}

/// A factored system; one factorization serves all incident directions.
#[derive(Debug, Clone)]
pub struct FactoredCfie {
    lu: LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
    matrix: DMatrix<Complex64>,
    context: WaveContext,
}

fn one_norm(m: &DMatrix<Complex64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Incident trace `e^{ik x·d}` at the nodes.
pub fn incident_trace(disc: &BoundaryDiscretization, k: f64, d: &Vec2) -> Vec<Complex64> {
    disc.nodes
        .iter()
        .map(|x| Complex64::from_polar(1.0, k * x.dot(d)))
        .collect()
}

impl FactoredCfie {
    pub fn context(&self) -> &WaveContext {
        &self.context
    }

    /// 1-norm condition number `‖A‖₁‖A⁻¹‖₁`; infinite when singular.
    pub fn condition_estimate(&self) -> f64 {
        match self.lu.try_inverse() {
            Some(inv) => one_norm(&self.matrix) * one_norm(&inv),
            None => f64::INFINITY,
        }
    }

    /// Solves `A φ = rhs` and checks the relative residual.
    pub fn solve_rhs(&self, rhs: &[Complex64]) -> Result<Vec<Complex64>, SolverError> {
        let n = self.matrix.nrows();
        if rhs.len() != n {
            return Err(SolverError::Dimension { got: rhs.len(), expected: n });
        }
        let b = DVector::from_column_slice(rhs);
        let x = self
            .lu
            .solve(&b)
            .ok_or(SolverError::Singular { condition: f64::INFINITY })?;
        let scale = b.norm();
        if scale > 0.0 {
            let residual = (&self.matrix * &x - &b).norm() / scale;
            if !(residual <= RESIDUAL_TOLERANCE) {
                return Err(SolverError::IllConditioned { residual, condition: self.condition_estimate() });
            }
        }
        Ok(x.iter().copied().collect())
    }

    /// Densities for several incident directions, one column per direction.
    pub fn solve_incident_many(
        &self,
        disc: &BoundaryDiscretization,
        directions: &[Vec2],
    ) -> Result<DMatrix<Complex64>, SolverError> {
        let n = self.matrix.nrows();
        let k = self.context.k;
        let rhs = DMatrix::from_fn(n, directions.len(), |row, col| {
            -Complex64::from_polar(1.0, k * disc.nodes[row].dot(&directions[col]))
        });
        let x = self
            .lu
            .solve(&rhs)
            .ok_or(SolverError::Singular { condition: f64::INFINITY })?;
        let residual_norm = (&self.matrix * &x - &rhs).norm();
        let residual = residual_norm / rhs.norm();
        if !(residual <= RESIDUAL_TOLERANCE) {
            return Err(SolverError::IllConditioned { residual, condition: self.condition_estimate() });
        }
        Ok(x)
    }

    /// Density for the plane wave travelling along `d`.
    pub fn solve_incident(&self, disc: &BoundaryDiscretization, d: Vec2) -> Result<BoundaryDensity, SolverError> {
        let context = self.context.with_direction(d)?;
        let rhs: Vec<Complex64> = incident_trace(disc, context.k, &d).into_iter().map(|u| -u).collect();
        Ok(BoundaryDensity { values: self.solve_rhs(&rhs)?, context })
    }
}

/// Density solving `(½I + K − iηS) φ = −u^i` for the context's incident direction.
pub fn solve_density(
    matrix: &CfieMatrix,
    disc: &BoundaryDiscretization,
    ctx: &WaveContext,
) -> Result<BoundaryDensity, SolverError> {
    matrix.factor().solve_incident(disc, ctx.d)
}

/// `u^∞(x̂) = e^{−iπ/4}/√(8πk) ∮ (k x̂·n(y) + η) e^{−ik x̂·y} φ(y) ds(y)`, trapezoidal in the parameter.
pub fn far_field(disc: &BoundaryDiscretization, density: &BoundaryDensity, directions: &[Vec2]) -> FarFieldVector {
    let ctx = density.context;
    let k = ctx.k;
    let prefactor = Complex64::from_polar(1.0, -0.25 * PI) / (8.0 * PI * k).sqrt() * (TAU / disc.n_points as f64);
    let values = directions
        .iter()
        .map(|xh| {
            let sum: Complex64 = (0..disc.n_points)
                .map(|j| {
                    let weight = (k * xh.dot(&disc.normals[j]) + ctx.eta) * disc.jacobians[j];
                    Complex64::from_polar(weight, -k * xh.dot(&disc.nodes[j])) * density.values[j]
                })
                .sum();
            prefactor * sum
        })
        .collect();
    FarFieldVector { directions: directions.to_vec(), values, context: ctx }
}

/// Linear map from node densities to far-field values at `directions`
/// (one row per direction).
pub fn far_field_matrix(disc: &BoundaryDiscretization, ctx: &WaveContext, directions: &[Vec2]) -> DMatrix<Complex64> {
    let k = ctx.k;
    let prefactor = Complex64::from_polar(1.0, -0.25 * PI) / (8.0 * PI * k).sqrt() * (TAU / disc.n_points as f64);
    DMatrix::from_fn(directions.len(), disc.n_points, |row, j| {
        let xh = &directions[row];
        let weight = (k * xh.dot(&disc.normals[j]) + ctx.eta) * disc.jacobians[j];
        prefactor * Complex64::from_polar(weight, -k * xh.dot(&disc.nodes[j]))
    })
}

/// Discretizes, assembles, solves and evaluates the far field in one call.
pub fn solve_far_field(
    shape: &PerturbedEllipse,
    pose: &Pose,
    ctx: &WaveContext,
    n_points: usize,
    directions: &[Vec2],
) -> Result<FarFieldVector, SolverError> {
    let disc = discretize(shape, pose, n_points)?;
    let matrix = assemble_cfie(&disc, ctx)?;
    let density = solve_density(&matrix, &disc, ctx)?;
    Ok(far_field(&disc, &density, directions))
}

/// `J_0..J_{m_max}` by Miller's backward recurrence, normalized with
/// `J_0 + 2 Σ J_{2k} = 1`.
fn bessel_j_sequence(x: f64, m_max: usize) -> Vec<f64> {
    let start = (m_max.max(x as usize) + 40 + (1.2 * x) as usize) | 1;
    let mut values = vec![0.0; start + 2];
    values[start] = 1e-30;
    for m in (1..=start).rev() {
        values[m - 1] = 2.0 * m as f64 / x * values[m] - values[m + 1];
        if values[m - 1].abs() > 1e250 {
            for v in values[m - 1..].iter_mut() {
                *v *= 1e-250;
            }
        }
    }
    let norm = values[0] + 2.0 * values.iter().skip(2).step_by(2).sum::<f64>();
    values.truncate(m_max + 1);
    values.iter().map(|v| v / norm).collect()
}

/// `Y_0..Y_{m_max}` by forward recurrence (stable for Y).
fn bessel_y_sequence(x: f64, m_max: usize) -> Vec<f64> {
    let b = bessel_all(x).expect("positive radius");
    let mut values = vec![b.y0, b.y1];
    for m in 1..m_max {
        let next = 2.0 * m as f64 / x * values[m] - values[m - 1];
        values.push(next);
    }
    values.truncate(m_max + 1);
    values
}

/// Coefficients `J_m(ka)/H_m(ka)` for `m = 0..=m_max`.
fn mie_ratios(ka: f64, m_max: usize) -> Vec<Complex64> {
    let j = bessel_j_sequence(ka, m_max);
    let y = bessel_y_sequence(ka, m_max);
    j.iter().zip(&y).map(|(&jm, &ym)| jm / Complex64::new(jm, ym)).collect()
}

/// Separation-of-variables far field of the sound-soft disk of radius `a`,
/// truncated at order `m_max`.
pub fn mie_far_field_disk_truncated(a: f64, ctx: &WaveContext, directions: &[Vec2], m_max: usize) -> FarFieldVector {
    let ratios = mie_ratios(ctx.k * a, m_max);
    let alpha = ctx.incident_angle();
    let prefactor = -(2.0 / (PI * ctx.k)).sqrt() * Complex64::from_polar(1.0, -0.25 * PI);
    let values = directions
        .iter()
        .map(|xh| {
            let phi = xh.y.atan2(xh.x) - alpha;
            let series: Complex64 = ratios[0]
                + ratios
                    .iter()
                    .enumerate()
                    .skip(1)
                    .map(|(m, c)| 2.0 * c * (m as f64 * phi).cos())
                    .sum::<Complex64>();
            prefactor * series
        })
        .collect();
    FarFieldVector { directions: directions.to_vec(), values, context: *ctx }
}

/// Truncation order for [`mie_far_field_disk`]: first order past `ka` whose
/// coefficient falls below `1e-16` relative to the zeroth.
pub fn mie_truncation_order(a: f64, k: f64) -> usize {
    let ka = k * a;
    let cap = (ka as usize) * 2 + 60;
    let ratios = mie_ratios(ka, cap);
    let scale = ratios[0].norm();
    (1..=cap)
        .find(|&m| m as f64 > ka && ratios[m].norm() < 1e-16 * scale)
        .unwrap_or(cap)
}

/// Analytic far field of the sound-soft disk of radius `a` at the origin.
pub fn mie_far_field_disk(a: f64, ctx: &WaveContext, directions: &[Vec2]) -> FarFieldVector {
    let m_max = mie_truncation_order(a, ctx.k);
    mie_far_field_disk_truncated(a, ctx, directions, m_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{random_shape, ShapeRanges};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ctx(k: f64, eta: f64) -> WaveContext {
        WaveContext::new(k, Vec2::new(1.0, 0.0), eta).unwrap()
    }

    #[test]
    fn context_validation() {
        assert!(WaveContext::new(0.0, Vec2::new(1.0, 0.0), 1.0).is_err());
        assert!(WaveContext::new(1.0, Vec2::new(1.0, 0.1), 1.0).is_err());
        assert!(WaveContext::new(1.0, Vec2::new(0.0, 1.0), 0.0).is_err());
        assert_eq!(WaveContext::with_default_eta(2.0, Vec2::new(0.0, -1.0)).unwrap().eta(), 2.0);
    }

    #[test]
    fn log_weights_integrate_constant() {
        // ∫_0^{2π} ln(4 sin²(s/2)) ds = 0
        for n in [16, 64, 256] {
            let sum: f64 = log_weights(n).iter().sum();
            assert!(sum.abs() < 1e-12, "n = {n}: {sum}");
        }
        // ∫ ln(4 sin²((t−s)/2)) cos(s) ds at t=0 equals −2π
        let n = 64;
        let w = log_weights(n);
        let val: f64 = (0..n).map(|j| w[j] * (TAU * j as f64 / n as f64).cos()).sum();
        assert!((val + TAU).abs() < 1e-12, "{val}");
    }

    #[test]
    fn disk_matches_mie_series() {
        let c = ctx(1.0, 1.0);
        let disk = PerturbedEllipse::disk(1.0).unwrap();
        let dirs = direction_grid(24);
        let solved = solve_far_field(&disk, &Pose::identity(), &c, 64, &dirs).unwrap();
        let exact = mie_far_field_disk(1.0, &c, &dirs);
        assert!(solved.relative_max_diff(&exact) < 1e-8, "{}", solved.relative_max_diff(&exact));
    }

    #[test]
    fn matrix_entries_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let shape = random_shape(&mut rng, &ShapeRanges::default()).unwrap();
        let disc = discretize(&shape, &Pose::identity(), 128).unwrap();
        let m = assemble_cfie(&disc, &ctx(1.0, 1.0)).unwrap();
        assert!(m.matrix().iter().all(|v| v.re.is_finite() && v.im.is_finite()));
    }

    #[test]
    fn under_resolved_rejected() {
        let disk = PerturbedEllipse::disk(10.0).unwrap();
        let disc = discretize(&disk, &Pose::identity(), 32).unwrap();
        match assemble_cfie(&disc, &ctx(2.0, 2.0)) {
            Err(SolverError::UnderResolved { required, .. }) => assert_eq!(required, 64),
            other => panic!("expected under-resolution error, got {other:?}"),
        }
    }

    #[test]
    fn disk_density_mirror_symmetric() {
        let c = ctx(1.0, 1.0);
        let disk = PerturbedEllipse::disk(1.5).unwrap();
        let disc = discretize(&disk, &Pose::identity(), 64).unwrap();
        let m = assemble_cfie(&disc, &c).unwrap();
        let phi = solve_density(&m, &disc, &c).unwrap();
        for j in 1..32 {
            let a = phi.values[j].norm();
            let b = phi.values[64 - j].norm();
            assert!((a - b).abs() < 1e-12 * a.max(1.0));
        }
    }

    #[test]
    fn density_residual_and_linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let shape = random_shape(&mut rng, &ShapeRanges::default()).unwrap();
        let c = ctx(1.0, 1.0);
        let disc = discretize(&shape, &Pose::identity(), 128).unwrap();
        let m = assemble_cfie(&disc, &c).unwrap();
        let f = m.factor();
        let ui = incident_trace(&disc, 1.0, &c.d());
        let rhs: Vec<Complex64> = ui.iter().map(|u| -u).collect();
        let phi = f.solve_rhs(&rhs).unwrap();
        let a = m.matrix();
        let x = DVector::from_column_slice(&phi);
        let b = DVector::from_column_slice(&rhs);
        assert!((a * x - &b).norm() / b.norm() <= 1e-10);

        let scale = Complex64::new(0.3, -2.0);
        let scaled: Vec<Complex64> = rhs.iter().map(|v| v * scale).collect();
        let phi2 = f.solve_rhs(&scaled).unwrap();
        for (p, q) in phi.iter().zip(&phi2) {
            assert!((p * scale - q).norm() <= 1e-12 * q.norm().max(1.0));
        }
    }

    #[test]
    fn factorization_reuse_matches_fresh_solves() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let shape = random_shape(&mut rng, &ShapeRanges::default()).unwrap();
        let disc = discretize(&shape, &Pose::identity(), 128).unwrap();
        let base = ctx(1.0, 1.0);
        let factored = assemble_cfie(&disc, &base).unwrap().factor();
        let dirs = direction_grid(24);
        for angle in [0.3, 2.0, 4.4] {
            let d = unit(angle);
            let c = base.with_direction(d).unwrap();
            let reused = far_field(&disc, &factored.solve_incident(&disc, d).unwrap(), &dirs);
            let fresh = far_field(&disc, &solve_density(&assemble_cfie(&disc, &c).unwrap(), &disc, &c).unwrap(), &dirs);
            assert!(reused.max_diff(&fresh) <= 1e-12 * fresh.max_abs());
        }
    }

    #[test]
    fn self_convergence_on_random_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let c = ctx(1.0, 1.0);
        let dirs = direction_grid(24);
        for _ in 0..3 {
            let shape = random_shape(&mut rng, &ShapeRanges::default()).unwrap();
            let coarse = solve_far_field(&shape, &Pose::identity(), &c, 128, &dirs).unwrap();
            let fine = solve_far_field(&shape, &Pose::identity(), &c, 256, &dirs).unwrap();
            assert!(coarse.max_diff(&fine) <= 1e-6);
        }
    }

    #[test]
    fn reciprocity_on_random_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let shape = random_shape(&mut rng, &ShapeRanges::default()).unwrap();
        let disc = discretize(&shape, &Pose::new(Vec2::new(1.0, -0.5), 0.3), DEFAULT_NODES).unwrap();
        let base = ctx(1.0, 1.0);
        let factored = assemble_cfie(&disc, &base).unwrap().factor();
        for (a, b) in [(0.0, 2.1), (1.3, 4.0), (5.5, 0.2)] {
            let (xh, d) = (unit(a), unit(b));
            let forward = far_field(&disc, &factored.solve_incident(&disc, d).unwrap(), &[xh]);
            let swapped = far_field(&disc, &factored.solve_incident(&disc, -xh).unwrap(), &[-d]);
            assert!((forward.values[0] - swapped.values[0]).norm() < 1e-8);
        }
    }

    #[test]
    fn zero_density_gives_zero_far_field() {
        let disk = PerturbedEllipse::disk(1.0).unwrap();
        let disc = discretize(&disk, &Pose::identity(), 32).unwrap();
        let zero = BoundaryDensity { values: vec![Complex64::default(); 32], context: ctx(1.0, 1.0) };
        let u = far_field(&disc, &zero, &direction_grid(8));
        assert!(u.values.iter().all(|v| *v == Complex64::default()));
    }

    #[test]
    fn mie_series_properties() {
        let c = WaveContext::new(1.0, unit(0.4), 1.0).unwrap();
        let dirs: Vec<Vec2> = [0.7, -0.7].iter().map(|s| unit(0.4 + s)).collect();
        let u = mie_far_field_disk(2.0, &c, &dirs);
        assert!((u.values[0].norm() - u.values[1].norm()).abs() < 1e-14);

        let dirs = direction_grid(36);
        let m = mie_truncation_order(3.0, 1.0);
        let a = mie_far_field_disk_truncated(3.0, &c, &dirs, m);
        let b = mie_far_field_disk_truncated(3.0, &c, &dirs, m + 5);
        assert!(a.max_diff(&b) < 1e-12);
    }

    #[test]
    fn bessel_sequences_agree_with_low_orders() {
        for x in [0.5, 3.0, 12.0, 40.0] {
            let j = bessel_j_sequence(x, 5);
            let b = bessel_all(x).unwrap();
            assert!((j[0] - b.j0).abs() < 1e-13);
            assert!((j[1] - b.j1).abs() < 1e-13);
            // Wronskian for order 2: J_3 Y_2 − J_2 Y_3 = 2/(πx)
            let y = bessel_y_sequence(x, 5);
            let w = j[3] * y[2] - j[2] * y[3];
            assert!((w - 2.0 / (PI * x)).abs() < 1e-10 * (2.0 / (PI * x)));
        }
    }

    #[test]
    fn text_round_trip_keeps_17_digits() {
        let c = WaveContext::new(1.0, unit(0.25), 0.5).unwrap();
        let u = mie_far_field_disk(1.0, &c, &direction_grid(12));
        let mut buf = Vec::new();
        u.write_text(&mut buf, &["config 1234".into()]).unwrap();
        let back = FarFieldVector::read_text(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 12);
        assert!(back.max_diff(&u) <= 1e-15 * u.max_abs());
        assert!((back.context.eta() - 0.5).abs() < 1e-16);
    }

    #[test]
    fn malformed_text_rejected() {
        assert!(FarFieldVector::read_text("k 1\nd 1 0\n0.0 1.0 2.0\n".as_bytes()).is_err());
        assert!(FarFieldVector::read_text("k 1\nd 1 0\neta 1\nsamples 2\n0.0 1.0 2.0\n".as_bytes()).is_err());
        assert!(FarFieldVector::read_text("k 1\nd 1 0\neta 1\nbogus 1 2\n".as_bytes()).is_err());
    }
}
