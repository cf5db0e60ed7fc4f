//! Fully connected network mapping far-field samples to shape parameters.
//!
//! Layer widths follow `[n_i, 2n_i, 3n_i, 5n_o, 2n_o, n_o]` with SELU between
//! affine layers. Outputs are magnitudes then arguments of seven complex
//! slots `(e1, f_0, …, f_4, r)`. The `e1` magnitude is divided by
//! [`E1_SCALE`] and the `r` slot carries `r − R_OFFSET`, so every output is of
//! order one and a unit error moves the boundary by a comparable amount.

use std::f64::consts::TAU;
use std::io::{Read, Write};

use log::info;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::forward::{solve_far_field, FarFieldVector, SolverError, WaveContext};
use crate::geometry::{random_shape, PerturbedEllipse, Pose, ShapeRanges, Vec2};

pub const SELU_LAMBDA: f64 = 1.0507009873554805;
pub const SELU_ALPHA: f64 = 1.6732632423543772;

/// Complex slots: `e1`, five Fourier coefficients, `r`.
pub const SLOTS: usize = 7;
pub const FOURIER_SLOTS: usize = 5;
pub const E1_SCALE: f64 = 10.0;
pub const R_OFFSET: f64 = 9.5;
pub const DEFAULT_LOSS_WEIGHTS: [f64; SLOTS] = [1.0, 2.5, 2.5, 2.5, 2.5, 2.5, 1.0];
/// Boundary nodes of dataset forward solves.
pub const DATASET_NODES: usize = 128;

const CODEC_VERSION: u8 = 1;
const MODEL_MAGIC: &[u8; 4] = b"SCNN";
const DATASET_MAGIC: &[u8; 4] = b"SCDS";
const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },
    #[error("invalid widths {0:?}")]
    Widths(Vec<usize>),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize, history: TrainHistory },
    #[error("dataset is empty or too small to split")]
    EmptyDataset,
    #[error("could not draw a solvable shape for sample {0}")]
    Sampling(usize),
    #[error("file format: {0}")]
    Format(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn selu(x: f64) -> f64 {
    if x > 0.0 { SELU_LAMBDA * x } else { SELU_LAMBDA * SELU_ALPHA * x.exp_m1() }
}

pub fn selu_derivative(x: f64) -> f64 {
    if x > 0.0 { SELU_LAMBDA } else { SELU_LAMBDA * SELU_ALPHA * x.exp() }
}

/// `[n_i, 2n_i, 3n_i, 5n_o, 2n_o, n_o]`.
pub fn layer_widths(n_in: usize, n_out: usize) -> Vec<usize> {
    vec![n_in, 2 * n_in, 3 * n_in, 5 * n_out, 2 * n_out, n_out]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
}

/// Activations kept for the backward pass.
struct Tape {
    pre: Vec<DMatrix<f64>>,
    post: Vec<DMatrix<f64>>,
}

/// Parameter-shaped gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl Mlp {
    pub fn zeros(widths: &[usize]) -> Result<Self, NnError> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(NnError::Widths(widths.to_vec()));
        }
        let weights = widths.windows(2).map(|w| DMatrix::zeros(w[1], w[0])).collect();
        let biases = widths[1..].iter().map(|&n| DVector::zeros(n)).collect();
        Ok(Self { widths: widths.to_vec(), weights, biases })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn weights(&self) -> &[DMatrix<f64>] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [DMatrix<f64>] {
        &mut self.weights
    }

    pub fn biases(&self) -> &[DVector<f64>] {
        &self.biases
    }

    pub fn biases_mut(&mut self) -> &mut [DVector<f64>] {
        &mut self.biases
    }

    pub fn input_len(&self) -> usize {
        self.widths[0]
    }

    pub fn output_len(&self) -> usize {
        *self.widths.last().expect("validated widths")
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Affine layers with SELU between them and none after the last.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        if input.len() != self.input_len() {
            return Err(NnError::Length { expected: self.input_len(), got: input.len() });
        }
        let x = DMatrix::from_column_slice(input.len(), 1, input);
        Ok(self.forward_batch(&x).column(0).iter().copied().collect())
    }

    /// Columns are samples.
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.run(x, false).1
    }

    fn run(&self, x: &DMatrix<f64>, keep: bool) -> (Option<Tape>, DMatrix<f64>) {
        let last = self.weights.len() - 1;
        let mut tape = keep.then(|| Tape { pre: Vec::new(), post: vec![x.clone()] });
        let mut h = x.clone();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut a = w * &h;
            for mut col in a.column_iter_mut() {
                col += b;
            }
            h = if l == last { a.clone() } else { a.map(selu) };
            if let Some(t) = tape.as_mut() {
                t.pre.push(a);
                t.post.push(h.clone());
            }
        }
        (tape, h)
    }

    /// Back-propagates `d_out` (∂loss/∂output, columns are samples).
    fn backward(&self, tape: &Tape, d_out: DMatrix<f64>) -> Gradient {
        let layers = self.weights.len();
        let mut weights = vec![DMatrix::zeros(0, 0); layers];
        let mut biases = vec![DVector::zeros(0); layers];
        let mut delta = d_out;
        for l in (0..layers).rev() {
            weights[l] = &delta * tape.post[l].transpose();
            biases[l] = DVector::from_iterator(delta.nrows(), delta.row_iter().map(|r| r.sum()));
            if l > 0 {
                let back = self.weights[l].transpose() * &delta;
                delta = back.zip_map(&tape.pre[l - 1], |g, a| g * selu_derivative(a));
            }
        }
        Gradient { weights, biases }
    }
}

/// Entries uniform on `±√(3/fan_in)`, biases zero.
pub fn init_lecun_uniform<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Mlp, NnError> {
    let mut net = Mlp::zeros(widths)?;
    for w in &mut net.weights {
        let bound = (3.0 / w.ncols() as f64).sqrt();
        for v in w.iter_mut() {
            *v = rng.random_range(-bound..=bound);
        }
    }
    Ok(net)
}

/// Shape parameters as slot magnitudes and arguments.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeTarget {
    pub magnitudes: Vec<f64>,
    pub arguments: Vec<f64>,
}

impl ShapeTarget {
    /// Requires exactly five Fourier coefficients.
    pub fn encode(shape: &PerturbedEllipse) -> Result<Self, NnError> {
        if shape.fourier().len() != FOURIER_SLOTS {
            return Err(NnError::Length { expected: FOURIER_SLOTS, got: shape.fourier().len() });
        }
        let mut slots = Vec::with_capacity(SLOTS);
        slots.push(shape.e1());
        slots.extend_from_slice(shape.fourier());
        slots.push(Complex64::new(shape.r() - R_OFFSET, 0.0));
        let mut magnitudes: Vec<f64> = slots.iter().map(|z| z.norm()).collect();
        magnitudes[0] /= E1_SCALE;
        let arguments = slots.iter().map(|z| z.arg()).collect();
        Ok(Self { magnitudes, arguments })
    }

    pub fn from_slice(values: &[f64]) -> Result<Self, NnError> {
        if values.len() != 2 * SLOTS {
            return Err(NnError::Length { expected: 2 * SLOTS, got: values.len() });
        }
        Ok(Self { magnitudes: values[..SLOTS].to_vec(), arguments: values[SLOTS..].to_vec() })
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.magnitudes.iter().chain(&self.arguments).copied().collect()
    }

    /// Slot values in the codec's units.
    pub fn complex(&self) -> Vec<Complex64> {
        self.magnitudes.iter().zip(&self.arguments).map(|(&m, &a)| Complex64::from_polar(m, a)).collect()
    }

    /// Shape with `ε = 0.01`, `e0 = 0`: `r` from its magnitude, clamped to
    /// the generation ranges, `|e1| ≤ 70`, `|f_n| ≤ 1`, Fourier part scaled
    /// down until the enclosure inequality holds.
    pub fn decode(&self, ranges: &ShapeRanges) -> PerturbedEllipse {
        let z = self.complex();
        let r = (self.magnitudes[SLOTS - 1] + R_OFFSET).clamp(ranges.r.0, ranges.r.1);
        let mut e1 = z[0] * E1_SCALE;
        let e1_max = ranges.e1_modulus.1.min(0.999 * r * r);
        if e1.norm() > e1_max {
            e1 *= e1_max / e1.norm();
        }
        let mut fourier: Vec<Complex64> = z[1..=FOURIER_SLOTS]
            .iter()
            .map(|&f| if f.norm() > ranges.f_modulus.1 { f * (ranges.f_modulus.1 / f.norm()) } else { f })
            .collect();
        let e0 = Complex64::default();
        loop {
            if let Ok(shape) = PerturbedEllipse::new(r, ranges.eps, e0, e1, fourier.clone()) {
                return shape;
            }
            let max = fourier.iter().map(|f| f.norm()).fold(0.0, f64::max);
            let bound = (r * r - e1.norm()) / (r * r + e1.norm()) / (2.0 * FOURIER_SLOTS as f64 * ranges.eps);
            let factor = if max > 0.0 { (0.99 * bound / max).min(0.99) } else { 0.0 };
            fourier.iter_mut().for_each(|f| *f *= factor);
        }
    }
}

/// `Σ_j w_j |z_pred,j − z_target,j|²` over complex slots.
pub fn weighted_complex_loss(pred: &ShapeTarget, target: &ShapeTarget, weights: &[f64]) -> f64 {
    pred.complex().iter().zip(target.complex()).zip(weights).map(|((p, t), w)| w * (p - t).norm_sqr()).sum()
}

/// Loss of one flat output column and its gradient.
fn slot_loss_gradient(out: &[f64], target: &[f64], weights: &[f64], grad: &mut [f64]) -> f64 {
    let j = weights.len();
    let mut loss = 0.0;
    for s in 0..j {
        let (m, a) = (out[s], out[j + s]);
        let e = Complex64::from_polar(1.0, a);
        let zp = e * m;
        let zt = Complex64::from_polar(target[s], target[j + s]);
        let diff = zp - zt;
        loss += weights[s] * diff.norm_sqr();
        grad[s] = 2.0 * weights[s] * (diff.conj() * e).re;
        grad[j + s] = 2.0 * weights[s] * (diff.conj() * Complex64::i() * zp).re;
    }
    loss
}

/// Per-dimension standardization fitted on training features.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn identity(n: usize) -> Self {
        Self { mean: vec![0.0; n], std: vec![1.0; n] }
    }

    pub fn fit(features: &[Vec<f64>]) -> Self {
        let n = features.len() as f64;
        let dim = features[0].len();
        let mut mean = vec![0.0; dim];
        for f in features {
            mean.iter_mut().zip(f).for_each(|(m, x)| *m += x / n);
        }
        let mut std = vec![0.0; dim];
        for f in features {
            std.iter_mut().zip(f).zip(&mean).for_each(|((s, x), m)| *s += (x - m).powi(2) / n);
        }
        let std = std.into_iter().map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 }).collect();
        Self { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| (x - m) / s).collect()
    }
}

/// Adam moments for every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub epochs: u32,
    m: Gradient,
    v: Gradient,
}

impl AdamState {
    fn new(net: &Mlp) -> Self {
        let zero = Gradient {
            weights: net.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            biases: net.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
        };
        Self { step: 0, epochs: 0, m: zero.clone(), v: zero }
    }
}

/// Network, input scaling and optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub net: Mlp,
    pub scaler: Scaler,
    pub adam: AdamState,
}

impl Model {
    pub fn new(net: Mlp, scaler: Scaler) -> Result<Self, NnError> {
        if scaler.mean.len() != net.input_len() {
            return Err(NnError::Length { expected: net.input_len(), got: scaler.mean.len() });
        }
        let adam = AdamState::new(&net);
        Ok(Self { net, scaler, adam })
    }

    /// Fresh network for `n_in` features and the seven-slot codec.
    pub fn initialize<R: Rng + ?Sized>(n_in: usize, scaler: Scaler, rng: &mut R) -> Result<Self, NnError> {
        Self::new(init_lecun_uniform(&layer_widths(n_in, 2 * SLOTS), rng)?, scaler)
    }

    fn batch(&self, samples: &[&Sample]) -> (DMatrix<f64>, DMatrix<f64>) {
        let n_in = self.net.input_len();
        let n_out = self.net.output_len();
        let mut x = DMatrix::zeros(n_in, samples.len());
        let mut y = DMatrix::zeros(n_out, samples.len());
        for (c, s) in samples.iter().enumerate() {
            x.column_mut(c).copy_from_slice(&self.scaler.apply(&s.features));
            y.column_mut(c).copy_from_slice(&s.target);
        }
        (x, y)
    }

    /// Mean loss over the samples and its gradient.
    pub fn loss_and_gradient(&self, samples: &[&Sample], weights: &[f64]) -> (f64, Gradient) {
        let (x, y) = self.batch(samples);
        let (tape, out) = self.net.run(&x, true);
        let b = samples.len() as f64;
        let mut d_out = DMatrix::zeros(out.nrows(), out.ncols());
        let mut loss = 0.0;
        let mut g = vec![0.0; out.nrows()];
        for c in 0..out.ncols() {
            let o: Vec<f64> = out.column(c).iter().copied().collect();
            let t: Vec<f64> = y.column(c).iter().copied().collect();
            loss += slot_loss_gradient(&o, &t, weights, &mut g) / b;
            d_out.column_mut(c).copy_from_slice(&g.iter().map(|v| v / b).collect::<Vec<_>>());
        }
        (loss, self.net.backward(&tape.expect("tape kept"), d_out))
    }

    pub fn mean_loss(&self, samples: &[Sample], weights: &[f64]) -> f64 {
        if samples.is_empty() {
            return f64::NAN;
        }
        let refs: Vec<&Sample> = samples.iter().collect();
        refs.chunks(512)
            .map(|c| {
                let (x, y) = self.batch(c);
                let out = self.net.forward_batch(&x);
                let mut g = vec![0.0; out.nrows()];
                (0..out.ncols())
                    .map(|i| {
                        let o: Vec<f64> = out.column(i).iter().copied().collect();
                        let t: Vec<f64> = y.column(i).iter().copied().collect();
                        slot_loss_gradient(&o, &t, weights, &mut g)
                    })
                    .sum::<f64>()
            })
            .sum::<f64>()
            / samples.len() as f64
    }

    fn adam_update(&mut self, grad: &Gradient, lr: f64) {
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        self.adam.step += 1;
        let t = self.adam.step as i32;
        let c1 = 1.0 - f64::powi(b1, t);
        let c2 = 1.0 - f64::powi(b2, t);
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for l in 0..self.net.weights.len() {
            let w = self.net.weights[l].iter_mut();
            let gw = grad.weights[l].iter();
            let mw = self.adam.m.weights[l].iter_mut();
            let vw = self.adam.v.weights[l].iter_mut();
            for (((p, g), m), v) in w.zip(gw).zip(mw).zip(vw) {
                update(p, *g, m, v);
            }
            let b = self.net.biases[l].iter_mut();
            let gb = grad.biases[l].iter();
            let mb = self.adam.m.biases[l].iter_mut();
            let vb = self.adam.v.biases[l].iter_mut();
            for (((p, g), m), v) in b.zip(gb).zip(mb).zip(vb) {
                update(p, *g, m, v);
            }
        }
    }

    /// Decoded shape for raw (unscaled) far-field features.
    pub fn predict_shape(&self, features: &[f64]) -> Result<PerturbedEllipse, NnError> {
        let out = self.net.forward(&self.scaler.apply(features))?;
        Ok(ShapeTarget::from_slice(&out)?.decode(&ShapeRanges::default()))
    }

    /// Magic, version, codec version, widths, scaler, weights and biases
    /// (row-major), then Adam state; little-endian 8-byte floats.
    pub fn write_to<W: Write>(&self, out: &mut W, provenance: &str) -> Result<(), NnError> {
        out.write_all(MODEL_MAGIC)?;
        out.write_all(&[FORMAT_VERSION, CODEC_VERSION])?;
        write_str(out, provenance)?;
        write_u32(out, self.net.widths.len() as u32)?;
        for &w in &self.net.widths {
            write_u32(out, w as u32)?;
        }
        write_f64s(out, &self.scaler.mean)?;
        write_f64s(out, &self.scaler.std)?;
        write_params(out, &self.net.weights, &self.net.biases)?;
        out.write_all(&self.adam.step.to_le_bytes())?;
        write_u32(out, self.adam.epochs)?;
        write_params(out, &self.adam.m.weights, &self.adam.m.biases)?;
        write_params(out, &self.adam.v.weights, &self.adam.v.biases)?;
        Ok(())
    }

    pub fn read_from<R: Read>(input: &mut R) -> Result<(Self, String), NnError> {
        let mut head = [0u8; 6];
        input.read_exact(&mut head)?;
        if &head[..4] != MODEL_MAGIC {
            return Err(NnError::Format("not a model snapshot".into()));
        }
        if head[4] != FORMAT_VERSION || head[5] != CODEC_VERSION {
            return Err(NnError::Format(format!("unsupported version {}/{}", head[4], head[5])));
        }
        let provenance = read_str(input)?;
        let layers = read_u32(input)? as usize;
        if !(2..=64).contains(&layers) {
            return Err(NnError::Format(format!("bad layer count {layers}")));
        }
        let widths: Vec<usize> = (0..layers).map(|_| read_u32(input).map(|w| w as usize)).collect::<Result<_, _>>()?;
        let mut net = Mlp::zeros(&widths)?;
        let n_in = widths[0];
        let scaler = Scaler { mean: read_f64s(input, n_in)?, std: read_f64s(input, n_in)? };
        read_params(input, &mut net.weights, &mut net.biases)?;
        let mut model = Model::new(net, scaler)?;
        let mut step = [0u8; 8];
        input.read_exact(&mut step)?;
        model.adam.step = u64::from_le_bytes(step);
        model.adam.epochs = read_u32(input)?;
        read_params(input, &mut model.adam.m.weights, &mut model.adam.m.biases)?;
        read_params(input, &mut model.adam.v.weights, &mut model.adam.v.biases)?;
        Ok((model, provenance))
    }
}

/// One training example: far-field features and encoded target.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub target: Vec<f64>,
}

impl Sample {
    pub fn shape(&self) -> Result<PerturbedEllipse, NnError> {
        Ok(ShapeTarget::from_slice(&self.target)?.decode(&ShapeRanges::default()))
    }
}

/// Re and im parts of the far field, interleaved per receiver.
pub fn features_of(u: &FarFieldVector) -> Vec<f64> {
    u.values.iter().flat_map(|v| [v.re, v.im]).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub context: WaveContext,
    pub receivers: usize,
    pub active: Vec<usize>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn directions(&self) -> Vec<Vec2> {
        self.active
            .iter()
            .map(|&i| {
                let a = TAU * i as f64 / self.receivers as f64;
                Vec2::new(a.cos(), a.sin())
            })
            .collect()
    }

    /// First `fraction` of samples for training, the rest for testing.
    pub fn split(&self, fraction: f64) -> Result<(&[Sample], &[Sample]), NnError> {
        let cut = ((self.samples.len() as f64) * fraction).round() as usize;
        if cut == 0 || cut > self.samples.len() {
            return Err(NnError::EmptyDataset);
        }
        Ok(self.samples.split_at(cut))
    }

    /// Magic, version, provenance, `k`, `d`, `η`, receiver count and active
    /// indices, sample count and lengths, then features and targets.
    pub fn write_to<W: Write>(&self, out: &mut W, provenance: &str) -> Result<(), NnError> {
        out.write_all(DATASET_MAGIC)?;
        out.write_all(&[FORMAT_VERSION])?;
        write_str(out, provenance)?;
        let c = &self.context;
        write_f64s(out, &[c.k(), c.d().x, c.d().y, c.eta()])?;
        write_u32(out, self.receivers as u32)?;
        write_u32(out, self.active.len() as u32)?;
        for &i in &self.active {
            write_u32(out, i as u32)?;
        }
        let n_f = self.samples.first().map_or(0, |s| s.features.len());
        let n_t = self.samples.first().map_or(0, |s| s.target.len());
        write_u32(out, self.samples.len() as u32)?;
        write_u32(out, n_f as u32)?;
        write_u32(out, n_t as u32)?;
        for s in &self.samples {
            write_f64s(out, &s.features)?;
            write_f64s(out, &s.target)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(input: &mut R) -> Result<(Self, String), NnError> {
        let mut head = [0u8; 5];
        input.read_exact(&mut head)?;
        if &head[..4] != DATASET_MAGIC {
            return Err(NnError::Format("not a dataset file".into()));
        }
        if head[4] != FORMAT_VERSION {
            return Err(NnError::Format(format!("unsupported version {}", head[4])));
        }
        let provenance = read_str(input)?;
        let c = read_f64s(input, 4)?;
        let context = WaveContext::new(c[0], Vec2::new(c[1], c[2]), c[3])?;
        let receivers = read_u32(input)? as usize;
        let n_active = read_u32(input)? as usize;
        if n_active > receivers {
            return Err(NnError::Format("more active receivers than receivers".into()));
        }
        let active = (0..n_active).map(|_| read_u32(input).map(|i| i as usize)).collect::<Result<Vec<_>, _>>()?;
        let count = read_u32(input)? as usize;
        let n_f = read_u32(input)? as usize;
        let n_t = read_u32(input)? as usize;
        if n_f != 2 * n_active || n_t != 2 * SLOTS {
            return Err(NnError::Format(format!("sample lengths {n_f}/{n_t} do not match the header")));
        }
        let mut samples = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            samples.push(Sample { features: read_f64s(input, n_f)?, target: read_f64s(input, n_t)? });
        }
        Ok((Self { context, receivers, active, samples }, provenance))
    }
}

/// `count` samples; sample `i` draws from its own ChaCha stream of `seed`,
/// redrawing the shape if a forward solve fails.
pub fn generate_dataset(
    count: usize,
    seed: u64,
    context: &WaveContext,
    receivers: usize,
    active: &[usize],
    ranges: &ShapeRanges,
) -> Result<Dataset, NnError> {
    if count == 0 {
        return Err(NnError::EmptyDataset);
    }
    let directions = Dataset { context: *context, receivers, active: active.to_vec(), samples: Vec::new() }.directions();
    let samples = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            for _ in 0..16 {
                let shape = random_shape(&mut rng, ranges).map_err(|_| NnError::Sampling(i))?;
                match solve_far_field(&shape, &Pose::identity(), context, DATASET_NODES, &directions) {
                    Ok(u) => {
                        return Ok(Sample { features: features_of(&u), target: ShapeTarget::encode(&shape)?.to_vec() });
                    }
                    Err(e) => log::warn!("sample {i}: {e}; redrawing"),
                }
            }
            Err(NnError::Sampling(i))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset { context: *context, receivers, active: active.to_vec(), samples })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss_weights: Vec<f64>,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 128,
            epochs: 200,
            loss_weights: DEFAULT_LOSS_WEIGHTS.to_vec(),
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), NnError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::Config(format!("learning rate {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(NnError::Config("batch size 0".into()));
        }
        if self.loss_weights.len() != SLOTS || self.loss_weights.iter().any(|w| !(*w > 0.0)) {
            return Err(NnError::Config(format!("loss weights {:?}", self.loss_weights)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(NnError::Config(format!("train fraction {}", self.train_fraction)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub initial_train: f64,
    pub initial_test: f64,
    /// `(train, test)` mean loss after each epoch.
    pub epochs: Vec<(f64, f64)>,
}

impl TrainHistory {
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "# initial_train {:.10e} initial_test {:.10e}", self.initial_train, self.initial_test)?;
        writeln!(out, "epoch,train_loss,test_loss")?;
        for (i, (a, b)) in self.epochs.iter().enumerate() {
            writeln!(out, "{},{a:.10e},{b:.10e}", i + 1)?;
        }
        Ok(())
    }
}

/// Adam on shuffled mini-batches. The shuffle of epoch `e` (counted over the
/// model's lifetime) depends only on `config.seed` and `e`, so training in
/// several calls matches one long call.
pub fn train(model: &mut Model, train_set: &[Sample], test_set: &[Sample], config: &TrainConfig) -> Result<TrainHistory, NnError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let w = &config.loss_weights;
    let mut history = TrainHistory {
        initial_train: model.mean_loss(train_set, w),
        initial_test: model.mean_loss(test_set, w),
        epochs: Vec::with_capacity(config.epochs),
    };
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for _ in 0..config.epochs {
        let epoch = model.adam.epochs;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(u64::from(epoch));
        order.sort_unstable();
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (_, grad) = model.loss_and_gradient(&batch, w);
            model.adam_update(&grad, config.learning_rate);
        }
        model.adam.epochs += 1;
        let losses = (model.mean_loss(train_set, w), model.mean_loss(test_set, w));
        history.epochs.push(losses);
        if !losses.0.is_finite() {
            return Err(NnError::Diverged { epoch: epoch as usize, history });
        }
        if (epoch + 1).is_multiple_of(20) {
            info!("epoch {}: train {:.4e} test {:.4e}", epoch + 1, losses.0, losses.1);
        }
    }
    Ok(history)
}

fn write_u32<W: Write>(out: &mut W, v: u32) -> std::io::Result<()> {
    out.write_all(&v.to_le_bytes())
}

fn read_u32<R: Read>(input: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn write_str<W: Write>(out: &mut W, s: &str) -> std::io::Result<()> {
    write_u32(out, s.len() as u32)?;
    out.write_all(s.as_bytes())
}

fn read_str<R: Read>(input: &mut R) -> Result<String, NnError> {
    let len = read_u32(input)? as usize;
    if len > 1 << 16 {
        return Err(NnError::Format("provenance string too long".into()));
    }
    let mut b = vec![0u8; len];
    input.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| NnError::Format(e.to_string()))
}

fn write_f64s<W: Write>(out: &mut W, values: &[f64]) -> std::io::Result<()> {
    for v in values {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s<R: Read>(input: &mut R, n: usize) -> std::io::Result<Vec<f64>> {
    let mut b = vec![0u8; 8 * n];
    input.read_exact(&mut b)?;
    Ok(b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

fn write_params<W: Write>(out: &mut W, weights: &[DMatrix<f64>], biases: &[DVector<f64>]) -> std::io::Result<()> {
    for (w, b) in weights.iter().zip(biases) {
        for r in 0..w.nrows() {
            write_f64s(out, &w.row(r).iter().copied().collect::<Vec<_>>())?;
        }
        write_f64s(out, b.as_slice())?;
    }
    Ok(())
}

fn read_params<R: Read>(input: &mut R, weights: &mut [DMatrix<f64>], biases: &mut [DVector<f64>]) -> std::io::Result<()> {
    for (w, b) in weights.iter_mut().zip(biases.iter_mut()) {
        let (rows, cols) = w.shape();
        let flat = read_f64s(input, rows * cols)?;
        *w = DMatrix::from_row_slice(rows, cols, &flat);
        let len = b.len();
        *b = DVector::from_vec(read_f64s(input, len)?);
    }
    Ok(())
}
