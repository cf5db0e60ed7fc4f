//! Periodic cubic splines on uniform grids.

use num_complex::Complex64;

/// Second derivatives of the periodic cubic spline through `values`
/// sampled with spacing `h`.
pub(crate) fn second_derivatives(values: &[Complex64], h: f64) -> Vec<Complex64> {
    let n = values.len();
    assert!(n >= 3, "periodic spline needs at least three samples");
    let scale = 6.0 / (h * h);
    let rhs: Vec<Complex64> = (0..n)
        .map(|i| {
            let prev = values[(i + n - 1) % n];
            let next = values[(i + 1) % n];
            scale * (next - 2.0 * values[i] + prev)
        })
        .collect();
    solve_cyclic_141(&rhs)
}

/// Solves the cyclic system with rows `x[i-1] + 4 x[i] + x[i+1] = rhs[i]`
/// (Sherman–Morrison on top of the Thomas algorithm).
fn solve_cyclic_141(rhs: &[Complex64]) -> Vec<Complex64> {
    let n = rhs.len();
    let (alpha, beta) = (1.0, 1.0);
    let gamma = -4.0;
    let mut diag = vec![4.0; n];
    diag[0] -= gamma;
    diag[n - 1] -= alpha * beta / gamma;

    let x = thomas(&diag, rhs);
    let mut u = vec![Complex64::default(); n];
    u[0] = Complex64::from(gamma);
    u[n - 1] = Complex64::from(alpha);
    let z = thomas(&diag, &u);
    let factor = (x[0] + beta * x[n - 1] / gamma) / (1.0 + z[0] + beta * z[n - 1] / gamma);
    x.iter().zip(&z).map(|(xi, zi)| xi - factor * zi).collect()
}

/// Tridiagonal solve with unit off-diagonals.
fn thomas(diag: &[f64], rhs: &[Complex64]) -> Vec<Complex64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![Complex64::default(); n];
    c[0] = 1.0 / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - c[i - 1];
        c[i] = 1.0 / m;
        d[i] = (rhs[i] - d[i - 1]) / m;
    }
    let mut x = vec![Complex64::default(); n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// Cell index and offset for position `u` (in grid units) on a periodic grid of `n` nodes.
pub(crate) fn locate(u: f64, n: usize) -> (usize, usize, f64) {
    let floor = u.floor();
    let s = u - floor;
    let i = (floor as i64).rem_euclid(n as i64) as usize;
    (i, (i + 1) % n, s)
}

/// Spline basis weights `(value_i, value_j, m_i, m_j)` at offset `s` in a cell of width `h`.
pub(crate) fn weights(s: f64, h: f64) -> [f64; 4] {
    let t = 1.0 - s;
    let c = h * h / 6.0;
    [t, s, c * (t * t * t - t), c * (s * s * s - s)]
}

/// Evaluates the spline at `x` (same units as `h`).
pub(crate) fn evaluate(values: &[Complex64], second: &[Complex64], h: f64, x: f64) -> Complex64 {
    let (i, j, s) = locate(x / h, values.len());
    let w = weights(s, h);
    w[0] * values[i] + w[1] * values[j] + w[2] * second[i] + w[3] * second[j]
}
