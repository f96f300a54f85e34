//! Softplus multilayer-perceptron densities and their training on plane waves.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Scalar;
use crate::error::{Error, Result};
use crate::lagrangian::{Jet, LagrangianDensity, Layout};

const MAGIC: &[u8; 4] = b"ELMD";
const VERSION: u8 = 1;

/// One affine layer, `W` stored row-major as `rows × cols`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// Scalar density `L(q, q_t, q_x[, q_y])` given by a softplus MLP.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpDensity {
    layout: Layout,
    layers: Vec<Dense>,
}

impl MlpDensity {
    /// Fresh network with the given hidden widths; weights are uniform with
    /// variance `1/fan_in`, biases start at zero.
    pub fn new(layout: Layout, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut widths = vec![layout.slots()];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let layers = widths
            .windows(2)
            .map(|w| {
                let limit = (3.0 / w[0] as f64).sqrt();
                Dense {
                    rows: w[1],
                    cols: w[0],
                    w: (0..w[0] * w[1]).map(|_| rng.gen_range(-limit..limit)).collect(),
                    b: vec![0.0; w[1]],
                }
            })
            .collect();
        Self::from_layers(layout, layers)
    }

    pub fn from_layers(layout: Layout, layers: Vec<Dense>) -> Result<Self> {
        if layout.field_dim() != 1 {
            return Err(Error::UnsupportedLayout {
                spatial_dim: layout.spatial_dim(),
                field_dim: layout.field_dim(),
            });
        }
        let mut width = layout.slots();
        for (i, l) in layers.iter().enumerate() {
            if l.cols != width || l.w.len() != l.rows * l.cols || l.b.len() != l.rows || l.rows == 0 {
                return Err(Error::DimensionMismatch(format!("layer {i} has inconsistent shape")));
            }
            width = l.rows;
        }
        if layers.is_empty() || width != 1 {
            return Err(Error::DimensionMismatch("network must end in a single output".into()));
        }
        Ok(Self { layout, layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    /// Input width followed by every layer's output width.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].cols];
        w.extend(self.layers.iter().map(|l| l.rows));
        w
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            p.extend(&l.w);
            p.extend(&l.b);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.param_count(), "parameter count");
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.copy_from_slice(&p[at..at + nw]);
            at += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&p[at..at + nb]);
            at += nb;
        }
    }
}

impl LagrangianDensity for MlpDensity {
    fn layout(&self) -> Layout {
        self.layout
    }

    fn lagrangian<S: Scalar>(&self, slots: &[S], _coord: &[S]) -> S {
        let mut h: Vec<S> = slots.to_vec();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            h = (0..l.rows)
                .map(|j| {
                    let row = &l.w[j * l.cols..(j + 1) * l.cols];
                    let mut acc = S::cst(l.b[j]);
                    for (x, &w) in h.iter().zip(row) {
                        acc += *x * w;
                    }
                    if i == last {
                        acc
                    } else {
                        acc.softplus()
                    }
                })
                .collect();
        }
        h[0]
    }
}

/// One travelling mode `A sin(k·x − ω t + φ)` with `ω = c|k|`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneWaveMode {
    pub amplitude: f64,
    pub k: Vec<f64>,
    pub phase: f64,
}

/// Superposition of plane waves solving `q_tt = c² Δq`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneWave {
    pub c2: f64,
    pub modes: Vec<PlaneWaveMode>,
}

impl PlaneWave {
    fn omega(&self, m: &PlaneWaveMode) -> f64 {
        self.c2.sqrt() * m.k.iter().map(|k| k * k).sum::<f64>().sqrt()
    }

    /// Wave-vector component along spacetime axis `a` (time uses `−ω`).
    fn axis_k(&self, m: &PlaneWaveMode, a: usize) -> f64 {
        if a == 0 {
            -self.omega(m)
        } else {
            m.k[a - 1]
        }
    }

    fn phase(&self, m: &PlaneWaveMode, coord: &[f64]) -> f64 {
        (0..coord.len()).map(|a| self.axis_k(m, a) * coord[a]).sum::<f64>() + m.phase
    }

    pub fn value(&self, coord: &[f64]) -> f64 {
        self.modes
            .iter()
            .map(|m| m.amplitude * self.phase(m, coord).sin())
            .sum()
    }

    /// Exact jet with first and second derivatives at `coord = (t, x[, y])`.
    pub fn jet(&self, coord: &[f64]) -> Jet {
        let axes = coord.len();
        let layout = Layout::wave(axes - 1);
        let mut first = vec![0.0; 1 + axes];
        let mut second = vec![0.0; layout.pairs()];
        for m in &self.modes {
            let (s, c) = self.phase(m, coord).sin_cos();
            first[0] += m.amplitude * s;
            for a in 0..axes {
                let ka = self.axis_k(m, a);
                first[1 + a] += m.amplitude * ka * c;
                for b in 0..=a {
                    second[Layout::pair(a, b)] -= m.amplitude * ka * self.axis_k(m, b) * s;
                }
            }
        }
        Jet {
            layout,
            first,
            second: Some(second),
            coord: coord.to_vec(),
        }
    }
}

/// Parameters of the random plane-wave superpositions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlaneWaveConfig {
    pub spatial_dim: usize,
    pub modes: usize,
    pub k_bound: f64,
    pub c2: f64,
    /// Mode amplitudes are uniform in `[-max_amplitude, max_amplitude]`.
    pub max_amplitude: f64,
    /// Sampling points are uniform in `[0, span]` along every axis.
    pub span: f64,
}

impl Default for PlaneWaveConfig {
    fn default() -> Self {
        Self {
            spatial_dim: 1,
            modes: 5,
            k_bound: 4.0,
            c2: 0.05,
            max_amplitude: 0.5,
            span: 10.0,
        }
    }
}

/// A training jet together with the superposition it was taken from.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneWaveSample {
    pub jet: Jet,
    pub wave: PlaneWave,
}

/// Draws `count` jets, each from its own random superposition.
pub fn sample_plane_waves(count: usize, config: &PlaneWaveConfig, seed: u64) -> Vec<PlaneWaveSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = config.spatial_dim;
    (0..count)
        .map(|_| {
            let modes = (0..config.modes)
                .map(|_| PlaneWaveMode {
                    amplitude: rng.gen_range(-1.0..=1.0) * config.max_amplitude,
                    k: (0..d).map(|_| rng.gen_range(-config.k_bound..=config.k_bound)).collect(),
                    phase: rng.gen_range(0.0..2.0 * PI),
                })
                .collect();
            let wave = PlaneWave { c2: config.c2, modes };
            let coord: Vec<f64> = (0..=d).map(|_| rng.gen_range(0.0..=config.span)).collect();
            PlaneWaveSample {
                jet: wave.jet(&coord),
                wave,
            }
        })
        .collect()
}

/// Forward Taylor propagation of a batch through the network.
///
/// Each sample occupies `K = 1 + m + m²` columns: value, input gradient and
/// full input Hessian of every neuron.
struct Tape {
    m: usize,
    /// Layer inputs (post-activation), starting with the network input.
    inputs: Vec<DMatrix<f64>>,
    /// Pre-activations of every layer.
    pre: Vec<DMatrix<f64>>,
}

impl Tape {
    fn k(&self) -> usize {
        1 + self.m + self.m * self.m
    }
}

fn sigmoid(x: f64) -> f64 {
    x.sigmoid()
}

fn forward(net: &MlpDensity, points: &[&[f64]]) -> Tape {
    let m = net.layout.slots();
    let k = 1 + m + m * m;
    let mut h = DMatrix::zeros(m, k * points.len());
    for (s, x) in points.iter().enumerate() {
        for i in 0..m {
            h[(i, s * k)] = x[i];
            h[(i, s * k + 1 + i)] = 1.0;
        }
    }
    let mut tape = Tape {
        m,
        inputs: Vec::new(),
        pre: Vec::new(),
    };
    let last = net.layers.len() - 1;
    for (li, l) in net.layers.iter().enumerate() {
        let w = DMatrix::from_row_slice(l.rows, l.cols, &l.w);
        let mut z = &w * &h;
        for s in 0..points.len() {
            for j in 0..l.rows {
                z[(j, s * k)] += l.b[j];
            }
        }
        tape.inputs.push(h);
        if li == last {
            h = z.clone();
        } else {
            let mut a = DMatrix::zeros(l.rows, z.ncols());
            for s in 0..points.len() {
                for j in 0..l.rows {
                    let zc = |c: usize| z[(j, s * k + c)];
                    let v = zc(0);
                    let sg = sigmoid(v);
                    let s1 = sg * (1.0 - sg);
                    a[(j, s * k)] = v.softplus();
                    for i in 0..m {
                        a[(j, s * k + 1 + i)] = sg * zc(1 + i);
                        for t in 0..m {
                            a[(j, s * k + 1 + m + i * m + t)] =
                                sg * zc(1 + m + i * m + t) + s1 * zc(1 + i) * zc(1 + t);
                        }
                    }
                }
            }
            h = a;
        }
        tape.pre.push(z);
    }
    tape.inputs.push(h);
    tape
}

/// Backpropagates output adjoints (`1 × K·B`) to parameter gradients.
fn backward(net: &MlpDensity, tape: &Tape, out_adj: DMatrix<f64>) -> Vec<f64> {
    let k = tape.k();
    let m = tape.m;
    let batch = out_adj.ncols() / k;
    let last = net.layers.len() - 1;
    let mut grads: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(net.layers.len());
    let mut adj = out_adj;
    for li in (0..net.layers.len()).rev() {
        let l = &net.layers[li];
        let zbar = if li == last {
            adj
        } else {
            let z = &tape.pre[li];
            let mut zb = DMatrix::zeros(l.rows, z.ncols());
            for s in 0..batch {
                for j in 0..l.rows {
                    let zc = |c: usize| z[(j, s * k + c)];
                    let hb = |c: usize| adj[(j, s * k + c)];
                    let v = zc(0);
                    let sg = sigmoid(v);
                    let s1 = sg * (1.0 - sg);
                    let s2 = s1 * (1.0 - 2.0 * sg);
                    let mut vb = sg * hb(0);
                    for i in 0..m {
                        vb += s1 * hb(1 + i) * zc(1 + i);
                        let mut gb = sg * hb(1 + i);
                        for t in 0..m {
                            let hit = hb(1 + m + i * m + t);
                            vb += s1 * hit * zc(1 + m + i * m + t) + s2 * zc(1 + i) * hit * zc(1 + t);
                            gb += s1 * (hit + hb(1 + m + t * m + i)) * zc(1 + t);
                            zb[(j, s * k + 1 + m + i * m + t)] = sg * hit;
                        }
                        zb[(j, s * k + 1 + i)] = gb;
                    }
                    zb[(j, s * k)] = vb;
                }
            }
            zb
        };
        let dw = &zbar * tape.inputs[li].transpose();
        let db: Vec<f64> = (0..l.rows)
            .map(|j| (0..batch).map(|s| zbar[(j, s * k)]).sum())
            .collect();
        let mut dw_rows = Vec::with_capacity(l.rows * l.cols);
        for j in 0..l.rows {
            for c in 0..l.cols {
                dw_rows.push(dw[(j, c)]);
            }
        }
        grads.push((dw_rows, db));
        if li > 0 {
            let w = DMatrix::from_row_slice(l.rows, l.cols, &l.w);
            adj = w.transpose() * zbar;
        } else {
            adj = DMatrix::zeros(0, 0);
        }
    }
    grads.reverse();
    grads.into_iter().flat_map(|(w, b)| w.into_iter().chain(b)).collect()
}

/// Loss and its gradient with respect to [`MlpDensity::params`].
///
/// `loss = mean R² + (∂²L(0)/∂q_t² − 1)² + (∂L(0)/∂q_t)² + L(0)²`.
pub fn gauge_loss_and_gradient(net: &MlpDensity, batch: &[&PlaneWaveSample]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let layout = net.layout;
    let m = layout.slots();
    let axes = layout.axes();
    let zero = vec![0.0; m];
    let mut points: Vec<&[f64]> = Vec::with_capacity(batch.len() + 1);
    for s in batch {
        if s.jet.layout != layout {
            return Err(Error::DimensionMismatch("sample layout does not match the network".into()));
        }
        points.push(&s.jet.first);
    }
    points.push(&zero);
    let tape = forward(net, &points);
    let k = tape.k();
    let out = tape.inputs.last().expect("output row");
    let g = |s: usize, i: usize| out[(0, s * k + 1 + i)];
    let h = |s: usize, i: usize, j: usize| out[(0, s * k + 1 + m + i * m + j)];
    let mut adj = DMatrix::zeros(1, out.ncols());
    let n = batch.len() as f64;
    let mut loss = 0.0;
    for (s, sample) in batch.iter().enumerate() {
        let first = &sample.jet.first;
        let second = sample.jet.second.as_ref().ok_or(Error::MissingSecondDerivatives)?;
        // R = L_q − Σ_a (L_{p_a q} p_a + Σ_b L_{p_a p_b} q_ab)
        let mut r = g(s, 0);
        for a in 0..axes {
            r -= h(s, 1 + a, 0) * first[1 + a];
            for b in 0..axes {
                r -= h(s, 1 + a, 1 + b) * second[Layout::pair(a, b)];
            }
        }
        loss += r * r / n;
        let seed = 2.0 * r / n;
        adj[(0, s * k + 1)] += seed;
        for a in 0..axes {
            adj[(0, s * k + 1 + m + (1 + a) * m)] -= seed * first[1 + a];
            for b in 0..axes {
                adj[(0, s * k + 1 + m + (1 + a) * m + 1 + b)] -= seed * second[Layout::pair(a, b)];
            }
        }
    }
    let z = batch.len();
    let (v0, g0, h0) = (out[(0, z * k)], g(z, 1), h(z, 1, 1));
    loss += (h0 - 1.0).powi(2) + g0 * g0 + v0 * v0;
    adj[(0, z * k)] += 2.0 * v0;
    adj[(0, z * k + 2)] += 2.0 * g0;
    adj[(0, z * k + 1 + m + m + 1)] += 2.0 * (h0 - 1.0);
    Ok((loss, backward(net, &tape, adj)))
}

/// Mean squared residual over `batch` plus the three gauge penalties at the
/// zero jet, for any density.
pub fn gauge_loss<L: LagrangianDensity>(density: &L, batch: &[PlaneWaveSample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let mut acc = 0.0;
    for s in batch {
        let r = crate::patch::residual(density, &s.jet)?[0];
        acc += r * r;
    }
    let layout = density.layout();
    let e = crate::lagrangian::eval_density(density, &Jet::zero(layout))?;
    let t = layout.slot(1, 0);
    Ok(acc / batch.len() as f64
        + (e.hessian[t][t] - 1.0).powi(2)
        + e.gradient[t].powi(2)
        + e.value.powi(2))
}

/// Training hyperparameters; the seed determines the run bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub samples: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr_initial: f64,
    pub lr_peak: f64,
    pub lr_final: f64,
    /// Fraction of the steps spent warming up to the peak rate.
    pub warmup: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub waves: PlaneWaveConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            samples: 2000,
            steps: 5000,
            batch: 64,
            lr_initial: 1e-3,
            lr_peak: 1e-2,
            lr_final: 1e-5,
            warmup: 0.3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            waves: PlaneWaveConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden widths must be non-empty and positive");
        }
        if self.samples == 0 || self.steps == 0 || self.batch == 0 {
            return bad("samples, steps and batch must be positive");
        }
        if !(self.lr_initial > 0.0 && self.lr_peak > 0.0 && self.lr_final > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(0.0..1.0).contains(&self.warmup) {
            return bad("warmup fraction must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return bad("Adam parameters out of range");
        }
        if !(self.waves.k_bound > 0.0) || self.waves.modes == 0 || !(1..=2).contains(&self.waves.spatial_dim) {
            return bad("plane-wave parameters out of range");
        }
        Ok(())
    }

    /// Cosine one-cycle learning rate at `step`.
    pub fn learning_rate(&self, step: usize) -> f64 {
        let warm = (self.warmup * self.steps as f64).round() as usize;
        if step < warm {
            let f = step as f64 / warm as f64;
            self.lr_initial + (self.lr_peak - self.lr_initial) * 0.5 * (1.0 - (PI * f).cos())
        } else {
            let span = (self.steps - warm).max(1) as f64;
            let f = ((step - warm) as f64 / span).min(1.0);
            self.lr_final + (self.lr_peak - self.lr_final) * 0.5 * (1.0 + (PI * f).cos())
        }
    }
}

/// Result of [`train`]: the density and the per-step batch loss.
#[derive(Clone, Debug)]
pub struct Trained {
    pub density: MlpDensity,
    pub losses: Vec<f64>,
}

/// Trains a fresh network on `samples` with Adam.
pub fn train(config: &TrainConfig, samples: &[PlaneWaveSample]) -> Result<Trained> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("no training samples".into()));
    }
    let layout = Layout::wave(config.waves.spatial_dim);
    let mut net = MlpDensity::new(layout, &config.hidden, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut params = net.params();
    let mut m1 = vec![0.0; params.len()];
    let mut m2 = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut cursor = order.len();
    let mut losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let mut batch = Vec::with_capacity(config.batch);
        while batch.len() < config.batch.min(samples.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&samples[order[cursor]]);
            cursor += 1;
        }
        let (loss, grad) = gauge_loss_and_gradient(&net, &batch)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::TrainingDiverged { step, loss });
        }
        losses.push(loss);
        let lr = config.learning_rate(step);
        let t = (step + 1) as i32;
        let c1 = 1.0 - config.beta1.powi(t);
        let c2 = 1.0 - config.beta2.powi(t);
        for i in 0..params.len() {
            m1[i] = config.beta1 * m1[i] + (1.0 - config.beta1) * grad[i];
            m2[i] = config.beta2 * m2[i] + (1.0 - config.beta2) * grad[i] * grad[i];
            params[i] -= lr * (m1[i] / c1) / ((m2[i] / c2).sqrt() + config.eps);
        }
        net.set_params(&params);
    }
    Ok(Trained { density: net, losses })
}

/// Writes the self-describing `ELMD` container.
pub fn save_density(density: &MlpDensity, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.push(density.layout.slots() as u8);
    let widths = density.widths();
    buf.extend_from_slice(&(widths.len() as u32).to_le_bytes());
    for w in &widths {
        buf.extend_from_slice(&(*w as u32).to_le_bytes());
    }
    for p in density.params() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.at + n > self.buf.len() {
            return Err(Error::ModelFormat(format!(
                "truncated at byte {} (need {n} more)",
                self.at
            )));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn load_density(path: &Path) -> Result<MlpDensity> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let mut r = Reader { buf: &buf, at: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::ModelFormat("bad magic bytes".into()));
    }
    let version = r.take(1)?[0];
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let arity = r.take(1)?[0] as usize;
    if !(3..=4).contains(&arity) {
        return Err(Error::ModelFormat(format!("unsupported input arity {arity}")));
    }
    let layout = Layout::wave(arity - 2);
    let count = r.u32()? as usize;
    if !(2..=64).contains(&count) {
        return Err(Error::ModelFormat(format!("implausible layer count {count}")));
    }
    let widths = (0..count)
        .map(|_| r.u32().map(|w| w as usize))
        .collect::<Result<Vec<_>>>()?;
    if widths[0] != arity {
        return Err(Error::ModelFormat("input width does not match arity".into()));
    }
    let mut layers = Vec::with_capacity(count - 1);
    for w in widths.windows(2) {
        let (cols, rows) = (w[0], w[1]);
        if rows.checked_mul(cols).map_or(true, |n| n * 8 > buf.len()) {
            return Err(Error::ModelFormat("layer larger than file".into()));
        }
        let w = (0..rows * cols).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let b = (0..rows).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        layers.push(Dense { rows, cols, w, b });
    }
    if r.at != buf.len() {
        return Err(Error::ModelFormat(format!("{} trailing bytes", buf.len() - r.at)));
    }
    MlpDensity::from_layers(layout, layers)
}
