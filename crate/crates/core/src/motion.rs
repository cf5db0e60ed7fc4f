//! Far fields under rigid motion.
//!
//! Translating the scatterer by `τ` multiplies the far field by the unimodular
//! factor `e^{−ikτ·(x̂−d)}`; rotating it by `θ` is the same as rotating both the
//! observation and incident directions by `−θ`:
//!
//! ```text
//! u∞_{Ω+τ}(x̂; d)  = e^{−ikτ·(x̂−d)} u∞_Ω(x̂; d)
//! u∞_{R_θΩ}(x̂; d) = u∞_Ω(R_{−θ}x̂; R_{−θ}d)
//! ```
//!
//! [`RotationLibrary`] tabulates `u∞_Ω` over a product grid of incident and
//! observation angles so that rotated far fields become table lookups.

use std::f64::consts::TAU;
use std::io::{Read, Write};

use num_complex::Complex64;
use thiserror::Error;

use crate::forward::{
    assemble_cfie, direction_grid, far_field_matrix, solve_far_field, unit, FarFieldVector, SolverError, WaveContext,
    DEFAULT_NODES,
};
use crate::geometry::{discretize, PerturbedEllipse, Pose, Vec2};
use crate::spline;

/// Smallest grid accepted for either library axis.
pub const MIN_GRID: usize = 128;

/// Default incident and observation grid size.
pub const DEFAULT_GRID: usize = 256;

const LIBRARY_MAGIC: &[u8; 4] = b"SCRL";
const LIBRARY_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum MotionError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("library grids must have at least {MIN_GRID} angles, got P = {p}, Q = {q}")]
    GridTooSmall { p: usize, q: usize },
    #[error("probe angles must lie in (0, 0.2], number at least 4 and span two decades")]
    ProbeAngles,
    #[error("library file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `u · e^{−ikτ·(x̂−d)}` at every sampled direction.
pub fn translate_far_field(u: &FarFieldVector, tau: &Vec2) -> FarFieldVector {
    let k = u.context.k();
    let d = u.context.d();
    let values = u
        .directions
        .iter()
        .zip(&u.values)
        .map(|(xh, v)| v * Complex64::from_polar(1.0, -k * tau.dot(&(xh - d))))
        .collect();
    FarFieldVector { directions: u.directions.clone(), values, context: u.context }
}

/// Tabulated far fields `u∞_Ω(x̂_q; d_p)` of one shape.
#[derive(Debug, Clone)]
pub struct RotationLibrary {
    shape: PerturbedEllipse,
    ctx: WaveContext,
    n_points: usize,
    p: usize,
    q: usize,
    /// row-major, `table[p * q_len + q]`
    table: Vec<Complex64>,
    /// second derivatives of the incident-direction splines, same layout
    incident_second: Vec<Complex64>,
}

/// Tabulates far fields of `shape` with one boundary factorization and `p`
/// right-hand sides. Incident angles are `2πi/p`, observation angles `2πj/q`.
pub fn build_rotation_library(
    shape: &PerturbedEllipse,
    ctx: &WaveContext,
    p: usize,
    q: usize,
) -> Result<RotationLibrary, MotionError> {
    build_rotation_library_with_nodes(shape, ctx, p, q, DEFAULT_NODES)
}

pub fn build_rotation_library_with_nodes(
    shape: &PerturbedEllipse,
    ctx: &WaveContext,
    p: usize,
    q: usize,
    n_points: usize,
) -> Result<RotationLibrary, MotionError> {
    if p < MIN_GRID || q < MIN_GRID {
        return Err(MotionError::GridTooSmall { p, q });
    }
    let disc = discretize(shape, &Pose::identity(), n_points).map_err(SolverError::from)?;
    let factored = assemble_cfie(&disc, ctx)?.factor();
    let densities = factored.solve_incident_many(&disc, &direction_grid(p))?;
    let observe = far_field_matrix(&disc, ctx, &direction_grid(q));
    // (q × n)(n × p) = q × p, stored transposed as p × q
    let by_column = observe * densities;
    let mut table = vec![Complex64::default(); p * q];
    for ip in 0..p {
        for iq in 0..q {
            table[ip * q + iq] = by_column[(iq, ip)];
        }
    }
    Ok(RotationLibrary::from_table(shape.clone(), *ctx, n_points, p, q, table))
}

impl RotationLibrary {
    fn from_table(
        shape: PerturbedEllipse,
        ctx: WaveContext,
        n_points: usize,
        p: usize,
        q: usize,
        table: Vec<Complex64>,
    ) -> Self {
        let h = TAU / p as f64;
        let mut incident_second = vec![Complex64::default(); p * q];
        let mut column = vec![Complex64::default(); p];
        for iq in 0..q {
            for ip in 0..p {
                column[ip] = table[ip * q + iq];
            }
            for (ip, m) in spline::second_derivatives(&column, h).into_iter().enumerate() {
                incident_second[ip * q + iq] = m;
            }
        }
        Self { shape, ctx, n_points, p, q, table, incident_second }
    }

    pub fn shape(&self) -> &PerturbedEllipse {
        &self.shape
    }

    pub fn context(&self) -> &WaveContext {
        &self.ctx
    }

    pub fn incident_count(&self) -> usize {
        self.p
    }

    pub fn observation_count(&self) -> usize {
        self.q
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    /// Raw entry `u∞(x̂_q; d_p)`.
    pub fn entry(&self, p: usize, q: usize) -> Complex64 {
        self.table[p * self.q + q]
    }

    /// Observation directions of the table.
    pub fn observation_grid(&self) -> Vec<Vec2> {
        direction_grid(self.q)
    }

    /// Far-field row for an arbitrary incident angle, interpolated along the
    /// incident axis, together with its spline second derivatives along the
    /// observation axis.
    fn incident_row(&self, incident_angle: f64) -> (Vec<Complex64>, Vec<Complex64>) {
        let h = TAU / self.p as f64;
        let (i, j, s) = spline::locate(incident_angle / h, self.p);
        let row = if s == 0.0 {
            self.table[i * self.q..(i + 1) * self.q].to_vec()
        } else {
            let w = spline::weights(s, h);
            (0..self.q)
                .map(|iq| {
                    w[0] * self.table[i * self.q + iq]
                        + w[1] * self.table[j * self.q + iq]
                        + w[2] * self.incident_second[i * self.q + iq]
                        + w[3] * self.incident_second[j * self.q + iq]
                })
                .collect()
        };
        let second = spline::second_derivatives(&row, TAU / self.q as f64);
        (row, second)
    }

    /// Far field of `R_θΩ` for the library's incident direction,
    /// `u∞_Ω(R_{−θ}x̂; R_{−θ}d)`, by bicubic periodic interpolation.
    pub fn query(&self, theta: f64, directions: &[Vec2]) -> FarFieldVector {
        let (row, second) = self.incident_row(self.ctx.incident_angle() - theta);
        let h = TAU / self.q as f64;
        let values = directions
            .iter()
            .map(|xh| spline::evaluate(&row, &second, h, xh.y.atan2(xh.x) - theta))
            .collect();
        FarFieldVector { directions: directions.to_vec(), values, context: self.ctx }
    }

    /// Binary form: magic, version byte, shape record (length-prefixed JSON),
    /// `k`, `d`, `η`, node count, `P`, `Q`, then the row-major table as
    /// little-endian `(re, im)` pairs.
    pub fn write_to<W: Write>(&self, out: &mut W) -> Result<(), MotionError> {
        out.write_all(LIBRARY_MAGIC)?;
        out.write_all(&[LIBRARY_VERSION])?;
        let shape = serde_json::to_vec(&self.shape).map_err(|e| MotionError::Format(e.to_string()))?;
        out.write_all(&(shape.len() as u32).to_le_bytes())?;
        out.write_all(&shape)?;
        for v in [self.ctx.k(), self.ctx.d().x, self.ctx.d().y, self.ctx.eta()] {
            out.write_all(&v.to_le_bytes())?;
        }
        for v in [self.n_points, self.p, self.q] {
            out.write_all(&(v as u32).to_le_bytes())?;
        }
        for v in &self.table {
            out.write_all(&v.re.to_le_bytes())?;
            out.write_all(&v.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(input: &mut R) -> Result<Self, MotionError> {
        let mut magic = [0u8; 5];
        input.read_exact(&mut magic)?;
        if &magic[..4] != LIBRARY_MAGIC {
            return Err(MotionError::Format("not a rotation library file".into()));
        }
        if magic[4] != LIBRARY_VERSION {
            return Err(MotionError::Format(format!("unsupported version {}", magic[4])));
        }
        let shape_len = read_u32(input)? as usize;
        let mut shape = vec![0u8; shape_len];
        input.read_exact(&mut shape)?;
        let shape: PerturbedEllipse =
            serde_json::from_slice(&shape).map_err(|e| MotionError::Format(e.to_string()))?;
        let k = read_f64(input)?;
        let d = Vec2::new(read_f64(input)?, read_f64(input)?);
        let eta = read_f64(input)?;
        let ctx = WaveContext::new(k, d, eta)?;
        let n_points = read_u32(input)? as usize;
        let p = read_u32(input)? as usize;
        let q = read_u32(input)? as usize;
        if p < MIN_GRID || q < MIN_GRID {
            return Err(MotionError::GridTooSmall { p, q });
        }
        let mut table = Vec::with_capacity(p * q);
        for _ in 0..p * q {
            table.push(Complex64::new(read_f64(input)?, read_f64(input)?));
        }
        Ok(Self::from_table(shape, ctx, n_points, p, q, table))
    }
}

fn read_u32<R: Read>(input: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(input: &mut R) -> std::io::Result<f64> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Free-function form of [`RotationLibrary::query`].
pub fn query_rotated_far_field(lib: &RotationLibrary, theta: f64, directions: &[Vec2]) -> FarFieldVector {
    lib.query(theta, directions)
}

/// Right-hand side of the rotation formula computed by a fresh solve:
/// `u∞_Ω(R_{−θ}x̂; R_{−θ}d)` on the given directions.
pub fn rotated_by_formula(
    shape: &PerturbedEllipse,
    ctx: &WaveContext,
    theta: f64,
    directions: &[Vec2],
    n_points: usize,
) -> Result<FarFieldVector, SolverError> {
    let back = |v: &Vec2| unit(v.y.atan2(v.x) - theta);
    let rotated_ctx = ctx.with_direction(back(&ctx.d()))?;
    let rotated_dirs: Vec<Vec2> = directions.iter().map(back).collect();
    let u = solve_far_field(shape, &Pose::identity(), &rotated_ctx, n_points, &rotated_dirs)?;
    Ok(FarFieldVector { directions: directions.to_vec(), values: u.values, context: *ctx })
}

/// One row of the stability probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbePoint {
    pub theta: f64,
    pub difference: f64,
}

/// Sup-norm change of the far field over the 24-direction grid when the
/// shape is rotated by each `θ`, by fresh forward solves.
pub fn lipschitz_probe(
    shape: &PerturbedEllipse,
    ctx: &WaveContext,
    thetas: &[f64],
) -> Result<Vec<ProbePoint>, MotionError> {
    let valid = thetas.len() >= 4
        && thetas.iter().all(|&t| t > 0.0 && t <= 0.2)
        && thetas.windows(2).all(|w| w[0] > w[1]);
    let span = thetas.first().zip(thetas.last()).map(|(a, b)| a / b).unwrap_or(0.0);
    if !valid || span < 100.0 - 1e-9 {
        return Err(MotionError::ProbeAngles);
    }
    let dirs = direction_grid(24);
    let base = solve_far_field(shape, &Pose::identity(), ctx, DEFAULT_NODES, &dirs)?;
    thetas
        .iter()
        .map(|&theta| {
            let turned = solve_far_field(shape, &Pose::new(Vec2::zeros(), theta), ctx, DEFAULT_NODES, &dirs)?;
            Ok(ProbePoint { theta, difference: turned.max_diff(&base) })
        })
        .collect()
}

/// Least-squares slope of `ln(difference)` against `ln(θ)`.
pub fn loglog_slope(points: &[ProbePoint]) -> f64 {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.theta.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.difference.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// `max(difference/θ) / min(difference/θ)` over the probe.
pub fn ratio_spread(points: &[ProbePoint]) -> f64 {
    let ratios: Vec<f64> = points.iter().map(|p| p.difference / p.theta).collect();
    let max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    max / min
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::mie_far_field_disk;
    use crate::geometry::{random_shape, ShapeRanges};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ctx() -> WaveContext {
        WaveContext::new(1.0, Vec2::new(1.0, 0.0), 1.0).unwrap()
    }

    #[test]
    fn zero_translation_is_identity_and_moduli_are_kept() {
        let u = mie_far_field_disk(2.0, &ctx(), &direction_grid(24));
        assert_eq!(translate_far_field(&u, &Vec2::zeros()), u);
        let moved = translate_far_field(&u, &Vec2::new(3.0, -1.0));
        for (a, b) in u.values.iter().zip(&moved.values) {
            assert!((a.norm() - b.norm()).abs() <= 1e-15 * a.norm().max(1.0));
        }
    }

    #[test]
    fn translations_compose() {
        let u = mie_far_field_disk(1.0, &ctx(), &direction_grid(24));
        let (t1, t2) = (Vec2::new(0.7, 2.0), Vec2::new(-3.0, 0.4));
        let twice = translate_far_field(&translate_far_field(&u, &t1), &t2);
        let once = translate_far_field(&u, &(t1 + t2));
        assert!(twice.max_diff(&once) < 1e-14);
    }

    #[test]
    fn translated_disk_matches_fresh_solve() {
        let c = ctx();
        let dirs = direction_grid(24);
        let disk = PerturbedEllipse::disk(1.0).unwrap();
        let tau = Vec2::new(1.0, 2.0);
        let shifted = solve_far_field(&disk, &Pose::new(tau, 0.0), &c, 64, &dirs).unwrap();
        let formula = translate_far_field(&mie_far_field_disk(1.0, &c, &dirs), &tau);
        assert!(shifted.max_diff(&formula) < 1e-8);
    }

    #[test]
    fn rotation_formula_by_fresh_solves() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let shape = random_shape(&mut rng, &ShapeRanges::default()).unwrap();
        let c = ctx();
        let dirs = direction_grid(24);
        for deg in [10.0f64, 90.0] {
            let theta = deg.to_radians();
            let turned = solve_far_field(&shape, &Pose::new(Vec2::zeros(), theta), &c, DEFAULT_NODES, &dirs).unwrap();
            let formula = rotated_by_formula(&shape, &c, theta, &dirs, DEFAULT_NODES).unwrap();
            assert!(turned.max_diff(&formula) < 1e-8);
        }
    }

    #[test]
    fn library_rejects_small_grids() {
        let disk = PerturbedEllipse::disk(1.0).unwrap();
        assert!(matches!(
            build_rotation_library(&disk, &ctx(), 64, 256),
            Err(MotionError::GridTooSmall { .. })
        ));
    }

    #[test]
    fn library_lookup_is_exact_on_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let shape = random_shape(&mut rng, &ShapeRanges::default()).unwrap();
        let c = ctx();
        let lib = build_rotation_library(&shape, &c, 128, 128).unwrap();
        let grid = lib.observation_grid();
        let direct = solve_far_field(&shape, &Pose::identity(), &c, DEFAULT_NODES, &grid).unwrap();
        assert!(lib.query(0.0, &grid).max_diff(&direct) < 1e-10);

        // a grid-aligned rotation lands on table entries
        let step = TAU / 128.0;
        let theta = 5.0 * step;
        let turned = lib.query(theta, &grid);
        for (iq, v) in turned.values.iter().enumerate() {
            let want = lib.entry(128 - 5, (iq + 128 - 5) % 128);
            assert!((v - want).norm() < 1e-12 * want.norm().max(1.0));
        }
    }

    #[test]
    fn disk_library_rows_are_rotations_of_each_other() {
        let disk = PerturbedEllipse::disk(2.0).unwrap();
        let lib = build_rotation_library_with_nodes(&disk, &ctx(), 128, 128, 64).unwrap();
        for ip in [1, 17, 64] {
            for iq in 0..128 {
                let a = lib.entry(ip, (iq + ip) % 128);
                let b = lib.entry(0, iq);
                assert!((a - b).norm() < 1e-10);
            }
        }
        let dirs = direction_grid(24);
        let base = lib.query(0.0, &dirs);
        for theta in [0.3, 2.0, 4.1] {
            assert!(lib.query(theta, &dirs).max_diff(&base) < 1e-5);
        }
    }

    #[test]
    fn library_interpolation_error_on_random_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let shape = random_shape(&mut rng, &ShapeRanges::default()).unwrap();
        let c = ctx();
        let dirs = direction_grid(24);
        let lib = build_rotation_library(&shape, &c, DEFAULT_GRID, DEFAULT_GRID).unwrap();
        for _ in 0..16 {
            let theta: f64 = rng.random_range(0.0..TAU);
            let fresh = solve_far_field(&shape, &Pose::new(Vec2::zeros(), theta), &c, DEFAULT_NODES, &dirs).unwrap();
            assert!(lib.query(theta, &dirs).relative_max_diff(&fresh) <= 1e-4);
        }
    }

    #[test]
    fn binary_round_trip() {
        let disk = PerturbedEllipse::disk(1.0).unwrap();
        let lib = build_rotation_library_with_nodes(&disk, &ctx(), 128, 128, 32).unwrap();
        let mut buf = Vec::new();
        lib.write_to(&mut buf).unwrap();
        assert_eq!(buf[4], LIBRARY_VERSION);
        let back = RotationLibrary::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.table, lib.table);
        assert_eq!(back.shape(), lib.shape());
        buf[4] = 9;
        assert!(RotationLibrary::read_from(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn probe_validates_angles() {
        let disk = PerturbedEllipse::disk(1.0).unwrap();
        assert!(lipschitz_probe(&disk, &ctx(), &[0.1, 0.01]).is_err());
        assert!(lipschitz_probe(&disk, &ctx(), &[0.3, 0.1, 0.01, 0.001]).is_err());
        assert!(lipschitz_probe(&disk, &ctx(), &[0.1, 0.05, 0.02, 0.01]).is_err());
    }

    #[test]
    fn disk_probe_is_flat() {
        let disk = PerturbedEllipse::disk(3.0).unwrap();
        let probe = lipschitz_probe(&disk, &ctx(), &[0.1, 0.01, 0.001, 0.0001]).unwrap();
        assert!(probe.iter().all(|p| p.difference <= 1e-6));
    }

    #[test]
    fn slope_of_exact_power_law() {
        let pts: Vec<ProbePoint> = [1e-1, 1e-2, 1e-3]
            .iter()
            .map(|&t: &f64| ProbePoint { theta: t, difference: 3.0 * t.powf(1.5) })
            .collect();
        assert!((loglog_slope(&pts) - 1.5).abs() < 1e-12);
        assert!((ratio_spread(&pts) - 10f64.powf(1.0)).abs() < 1e-9);
    }
}
