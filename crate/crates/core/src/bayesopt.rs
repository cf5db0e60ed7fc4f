//! One-dimensional Bayesian optimization of the rotation angle.
//!
//! A Gaussian process with the Matérn-1/2 (exponential) kernel models the
//! objective; the next point maximizes Expected Improvement over a search
//! interval that shrinks around the incumbent as evaluations accumulate.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

/// Exploration margin of the acquisition.
pub const DEFAULT_XI: f64 = 0.1;
/// Number of acquisition grid points.
pub const ACQUISITION_GRID: usize = 2001;
/// Default evaluation budget.
pub const DEFAULT_BUDGET: usize = 9;
/// Contraction factor of a domain reduction step.
pub const REDUCTION_FACTOR: f64 = 0.7;
/// Evaluations completed before the domain starts contracting.
pub const REDUCTION_START: usize = 5;
/// Narrowest search interval, radians.
pub const MIN_WIDTH: f64 = PI / 180.0;

const MAX_JITTER_STEPS: usize = 12;

#[derive(Debug, Error)]
pub enum BayesOptError {
    #[error("kernel matrix is not positive definite even with jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },
    #[error("invalid model: {0}")]
    Model(String),
    #[error("budget must be at least 4, got {0}")]
    Budget(usize),
    #[error("search half-width must be positive, got {0}")]
    Phi(f64),
}

#[derive(Debug, Error)]
pub enum SearchError<E: std::error::Error + 'static> {
    #[error(transparent)]
    Optimizer(#[from] BayesOptError),
    #[error("objective failed at step {} (theta = {theta})", trace.len())]
    Objective {
        theta: f64,
        trace: Vec<Evaluation>,
        #[source]
        source: E,
    },
}

/// Gaussian process with zero prior mean and kernel
/// `signal_variance · exp(−|a−b| / length_scale)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GPModel {
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub observations: Vec<(f64, f64)>,
}

impl GPModel {
    pub fn new(length_scale: f64, signal_variance: f64, noise_variance: f64) -> Result<Self, BayesOptError> {
        let model = Self { length_scale, signal_variance, noise_variance, observations: Vec::new() };
        model.validate()?;
        Ok(model)
    }

    pub fn with_observations(mut self, observations: Vec<(f64, f64)>) -> Self {
        self.observations = observations;
        self
    }

    fn validate(&self) -> Result<(), BayesOptError> {
        if !(self.length_scale > 0.0 && self.length_scale.is_finite()) {
            return Err(BayesOptError::Model(format!("length scale {}", self.length_scale)));
        }
        if !(self.signal_variance >= 0.0 && self.signal_variance.is_finite()) {
            return Err(BayesOptError::Model(format!("signal variance {}", self.signal_variance)));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(BayesOptError::Model(format!("noise variance {}", self.noise_variance)));
        }
        Ok(())
    }

    pub fn kernel(&self, a: f64, b: f64) -> f64 {
        self.signal_variance * (-(a - b).abs() / self.length_scale).exp()
    }

    /// Factors the training covariance once for repeated posterior queries.
    pub fn condition(&self) -> Result<Posterior<'_>, BayesOptError> {
        self.validate()?;
        let n = self.observations.len();
        let mut k = DMatrix::from_fn(n, n, |i, j| self.kernel(self.observations[i].0, self.observations[j].0));
        for i in 0..n {
            k[(i, i)] += self.noise_variance;
        }
        let scale = self.signal_variance.max(f64::MIN_POSITIVE);
        let mut jitter = 0.0;
        let mut chol = Cholesky::new(k.clone());
        for step in 0..MAX_JITTER_STEPS {
            if chol.is_some() {
                break;
            }
            jitter = scale * 1e-12 * 10f64.powi(step as i32);
            let mut kj = k.clone();
            for i in 0..n {
                kj[(i, i)] += jitter;
            }
            chol = Cholesky::new(kj);
        }
        let chol = chol.ok_or(BayesOptError::NotPositiveDefinite { jitter })?;
        let y = DVector::from_iterator(n, self.observations.iter().map(|o| o.1));
        let alpha = chol.solve(&y);
        Ok(Posterior { model: self, chol, alpha })
    }
}

/// A conditioned GP ready for queries.
pub struct Posterior<'a> {
    model: &'a GPModel,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

impl Posterior<'_> {
    pub fn at(&self, x: f64) -> (f64, f64) {
        let obs = &self.model.observations;
        if obs.is_empty() {
            return (0.0, self.model.signal_variance);
        }
        let kx = DVector::from_iterator(obs.len(), obs.iter().map(|o| self.model.kernel(x, o.0)));
        let mean = kx.dot(&self.alpha);
        let v = self.chol.solve(&kx);
        let var = self.model.signal_variance - kx.dot(&v);
        (mean, var.max(0.0))
    }
}

/// Posterior mean and variance at each query.
pub fn gp_posterior(model: &GPModel, queries: &[f64]) -> Result<Vec<(f64, f64)>, BayesOptError> {
    let post = model.condition()?;
    Ok(queries.iter().map(|&x| post.at(x)).collect())
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// Expected Improvement below `best` for a minimization problem.
pub fn expected_improvement(mean: f64, variance: f64, best: f64, xi: f64) -> f64 {
    let improvement = best - mean - xi;
    let s = variance.max(0.0).sqrt();
    if s == 0.0 {
        return improvement.max(0.0);
    }
    let z = improvement / s;
    (improvement * normal_cdf(z) + s * normal_pdf(z)).max(0.0)
}

/// Current search interval.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchDomain {
    pub lower: f64,
    pub upper: f64,
    pub history: Vec<f64>,
    bounds: (f64, f64),
}

impl SearchDomain {
    pub fn new(lower: f64, upper: f64) -> Self {
        assert!(lower < upper, "empty search domain");
        Self { lower, upper, history: Vec::new(), bounds: (lower, upper) }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }
}

/// Recentres on the incumbent and contracts by [`REDUCTION_FACTOR`], never
/// below [`MIN_WIDTH`] and never outside the original interval.
pub fn reduce_domain(domain: &SearchDomain, incumbent: f64, _step_index: usize) -> SearchDomain {
    let width = (domain.width() * REDUCTION_FACTOR).max(MIN_WIDTH.min(domain.width()));
    let (lo, hi) = domain.bounds;
    let mut lower = incumbent - width / 2.0;
    let mut upper = incumbent + width / 2.0;
    if lower < lo {
        upper += lo - lower;
        lower = lo;
    }
    if upper > hi {
        lower -= upper - hi;
        upper = hi;
    }
    SearchDomain { lower: lower.max(lo), upper: upper.min(hi), history: domain.history.clone(), bounds: domain.bounds }
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, iterations: usize) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iterations {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd { (c, fc) } else { (d, fd) }
}

/// Maximizer of EI over the domain: grid scan then golden-section refinement
/// around the best grid cell.
pub fn propose_next(model: &GPModel, domain: &SearchDomain) -> Result<f64, BayesOptError> {
    propose_with_xi(model, domain, DEFAULT_XI)
}

pub fn propose_with_xi(model: &GPModel, domain: &SearchDomain, xi: f64) -> Result<f64, BayesOptError> {
    if model.observations.is_empty() {
        return Err(BayesOptError::Model("no observations".into()));
    }
    let post = model.condition()?;
    let best = model.observations.iter().map(|o| o.1).fold(f64::INFINITY, f64::min);
    let ei = |x: f64| {
        let (m, v) = post.at(x);
        expected_improvement(m, v, best, xi)
    };
    let h = domain.width() / (ACQUISITION_GRID - 1) as f64;
    let (mut arg, mut top) = (domain.lower, f64::NEG_INFINITY);
    for i in 0..ACQUISITION_GRID {
        let x = domain.lower + i as f64 * h;
        let e = ei(x);
        if e > top {
            top = e;
            arg = x;
        }
    }
    let a = (arg - h).max(domain.lower);
    let b = (arg + h).min(domain.upper);
    let (x, e) = golden_max(ei, a, b, 40);
    Ok(if e > top { x } else { arg })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposalSource {
    Forced,
    Acquisition,
}

impl fmt::Display for ProposalSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProposalSource::Forced => "forced",
            ProposalSource::Acquisition => "acquisition",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub step: usize,
    pub theta: f64,
    pub value: f64,
    pub source: ProposalSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AngleSearch {
    pub theta_star: f64,
    pub value: f64,
    pub trace: Vec<Evaluation>,
}

/// GP over the evaluations so far: length scale `φ/2`, signal variance from
/// the forced values.
fn fit_model(trace: &[Evaluation], phi: f64) -> Result<GPModel, BayesOptError> {
    let forced: Vec<f64> = trace.iter().take(3).map(|e| e.value).collect();
    let fm = forced.iter().sum::<f64>() / forced.len() as f64;
    let signal = (forced.iter().map(|v| (v - fm).powi(2)).sum::<f64>() / (forced.len() - 1) as f64).max(1e-12);
    let obs = trace.iter().map(|e| (e.theta, e.value)).collect();
    Ok(GPModel::new(phi / 2.0, signal, 1e-6 * signal)?.with_observations(obs))
}

/// Spends `budget` evaluations of `objective` on `[θc − φ, θc + φ]`, starting
/// with `θc`, `θc − φ`, `θc + φ`, and returns the best evaluated point.
pub fn minimize_angle<E, F>(
    mut objective: F,
    theta_center: f64,
    phi: f64,
    budget: usize,
) -> Result<AngleSearch, SearchError<E>>
where
    E: std::error::Error + 'static,
    F: FnMut(f64) -> Result<f64, E>,
{
    if budget < 4 {
        return Err(BayesOptError::Budget(budget).into());
    }
    if !(phi > 0.0 && phi.is_finite()) {
        return Err(BayesOptError::Phi(phi).into());
    }
    let mut domain = SearchDomain::new(theta_center - phi, theta_center + phi);
    let mut trace: Vec<Evaluation> = Vec::with_capacity(budget);
    let mut evaluate = |theta: f64, source, trace: &mut Vec<Evaluation>| match objective(theta) {
        Ok(value) => {
            trace.push(Evaluation { step: trace.len(), theta, value, source });
            Ok(())
        }
        Err(source) => Err(SearchError::Objective { theta, trace: trace.clone(), source }),
    };
    for theta in [theta_center, theta_center - phi, theta_center + phi] {
        evaluate(theta, ProposalSource::Forced, &mut trace)?;
        domain.history.push(theta);
    }
    while trace.len() < budget {
        let incumbent = best_of(&trace);
        if trace.len() >= REDUCTION_START {
            domain = reduce_domain(&domain, incumbent.theta, trace.len());
        }
        let model = fit_model(&trace, phi)?;
        let theta = propose_next(&model, &domain)?;
        evaluate(theta, ProposalSource::Acquisition, &mut trace)?;
        domain.history.push(theta);
    }
    let best = best_of(&trace);
    Ok(AngleSearch { theta_star: best.theta, value: best.value, trace })
}

fn best_of(trace: &[Evaluation]) -> Evaluation {
    *trace.iter().min_by(|a, b| a.value.total_cmp(&b.value)).expect("non-empty trace")
}

/// Rows of `step theta_deg objective_value proposed_by`.
pub fn write_trace<W: Write>(out: &mut W, trace: &[Evaluation]) -> std::io::Result<()> {
    writeln!(out, "# step theta_deg objective_value proposed_by")?;
    for e in trace {
        writeln!(out, "{} {:.10} {:.16e} {}", e.step, e.theta.to_degrees(), e.value, e.source)?;
    }
    Ok(())
}
