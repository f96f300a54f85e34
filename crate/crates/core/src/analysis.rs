//! Energy, error metrics and reference solutions.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Dual, Scalar};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::hermite::HermiteBasis;
use crate::integrator::{ode_energy, FieldState};
use crate::lagrangian::{Jet, LagrangianDensity, Layout};
use crate::quadrature::QuadratureRule;

/// Energy samples over time.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EnergySeries {
    pub t: Vec<f64>,
    pub e: Vec<f64>,
}

impl EnergySeries {
    pub fn push(&mut self, t: f64, e: f64) {
        self.t.push(t);
        self.e.push(e);
    }

    pub fn e0(&self) -> f64 {
        self.e.first().copied().unwrap_or(f64::NAN)
    }

    /// `|E_t − E₀| / |E₀|` per sample.
    pub fn rel_err(&self) -> Vec<f64> {
        let e0 = self.e0();
        self.e.iter().map(|e| (e - e0).abs() / e0.abs()).collect()
    }

    pub fn final_rel(&self) -> f64 {
        self.rel_err().last().copied().unwrap_or(f64::NAN)
    }

    pub fn max_rel(&self) -> f64 {
        self.rel_err().into_iter().fold(0.0, f64::max)
    }
}

/// `E = q_t·∂L/∂q_t − L` at one jet (scalar field).
fn energy_density<L: LagrangianDensity>(density: &L, slots: &[f64], coord: &[f64]) -> f64 {
    let t = density.layout().slot(1, 0);
    let u: Vec<Dual<f64, 1>> = slots
        .iter()
        .enumerate()
        .map(|(i, &v)| if i == t { Dual::variable(v, 0) } else { Dual::constant(v) })
        .collect();
    let xi: Vec<Dual<f64, 1>> = coord.iter().map(|&c| Dual::cst(c)).collect();
    let l = density.lagrangian(&u, &xi);
    slots[t] * l.d[0] - l.v
}

/// Spatial energy integral of field states on a fixed grid.
///
/// Inside each spatial cell `q` and `q_t` are the spatial Hermite
/// interpolants of the node data, integrated with a tensor Gauss-Legendre
/// rule (6 points in 1D, 5×5 in 2D).
#[derive(Clone, Debug)]
pub struct FieldEnergy {
    grid: Grid,
    layout: Layout,
    /// Per quadrature point: stencil rows (value, spatial gradient) over the
    /// spatial basis data.
    rows: Vec<Vec<Vec<f64>>>,
    offsets: Vec<Vec<f64>>,
    weights: Vec<f64>,
    /// Full-mask position of sub-mask `m` with time bit 0 and 1.
    mask_pos: Vec<[usize; 2]>,
}

impl FieldEnergy {
    pub fn new(layout: Layout, grid: &Grid) -> Result<Self> {
        let sd = layout.spatial_dim();
        if sd == 0 || layout.field_dim() != 1 || grid.spatial_dim() != sd {
            return Err(Error::DimensionMismatch("field energy needs a scalar field on a matching grid".into()));
        }
        let full = HermiteBasis::new(layout);
        let sub = HermiteBasis::new(Layout::new(sd - 1, 1)?);
        let h = grid.spacing();
        let counts = if sd == 1 { vec![6] } else { vec![5, 5] };
        let bounds: Vec<(f64, f64)> = (0..sd).map(|_| (0.0, 1.0)).collect();
        let rule = QuadratureRule::tensor(&counts, &bounds);
        let mut rows = Vec::with_capacity(rule.len());
        let mut offsets = Vec::with_capacity(rule.len());
        let mut weights = Vec::with_capacity(rule.len());
        let vol: f64 = h.iter().product();
        for (u, w) in rule.points.iter().zip(&rule.weights) {
            let st = sub.stencil(u, &h);
            rows.push(st[..1 + sd].to_vec());
            offsets.push(u.iter().zip(&h).map(|(u, h)| u * h).collect());
            weights.push(w * vol);
        }
        let position = |m: usize| full.masks().iter().position(|&x| x == m).expect("mask present");
        let mask_pos = sub
            .masks()
            .iter()
            .map(|&m| [position(m << 1), position((m << 1) | 1)])
            .collect();
        Ok(Self {
            grid: grid.clone(),
            layout,
            rows,
            offsets,
            weights,
            mask_pos,
        })
    }

    /// Spatial node data of the sub-basis for one cell: `q` data, `q_t` data.
    fn cell_data(&self, state: &FieldState, cell: usize) -> (Vec<f64>, Vec<f64>) {
        let nodes = self.grid.cell_nodes(cell);
        let mut q = Vec::with_capacity(nodes.len() * self.mask_pos.len());
        let mut qt = Vec::with_capacity(q.capacity());
        for &n in &nodes {
            let g = state.node(n);
            for p in &self.mask_pos {
                q.push(g[p[0]]);
                qt.push(g[p[1]]);
            }
        }
        (q, qt)
    }

    /// Jets at every quadrature point of every cell, in cell order.
    pub fn jets(&self, state: &FieldState) -> Vec<Jet> {
        let sd = self.layout.spatial_dim();
        let mut out = Vec::new();
        for cell in 0..self.grid.cell_count() {
            let lo = self.grid.cell_lo(cell);
            let (q, qt) = self.cell_data(state, cell);
            for (rows, off) in self.rows.iter().zip(&self.offsets) {
                let dot = |r: &Vec<f64>, d: &[f64]| r.iter().zip(d).map(|(a, b)| a * b).sum::<f64>();
                let mut first = vec![dot(&rows[0], &q), dot(&rows[0], &qt)];
                for a in 0..sd {
                    first.push(dot(&rows[1 + a], &q));
                }
                let mut coord = vec![state.t];
                coord.extend(lo.iter().zip(off).map(|(l, o)| l + o));
                out.push(Jet {
                    layout: self.layout,
                    first,
                    second: None,
                    coord,
                });
            }
        }
        out
    }

    pub fn energy<L: LagrangianDensity>(&self, density: &L, state: &FieldState) -> f64 {
        self.cell_energies(density, state).iter().sum()
    }

    /// Energy contained in each cell, in cell order.
    pub fn cell_energies<L: LagrangianDensity>(&self, density: &L, state: &FieldState) -> Vec<f64> {
        let per_cell = self.rows.len();
        let jets = self.jets(state);
        jets.chunks(per_cell)
            .map(|cell| {
                cell.iter()
                    .zip(&self.weights)
                    .map(|(j, w)| w * energy_density(density, &j.first, &j.coord))
                    .sum()
            })
            .collect()
    }
}

/// Energy density at a node, read directly from its Hermite data.
pub fn nodal_energy_density<L: LagrangianDensity>(density: &L, grid: &Grid, state: &FieldState, node: usize) -> f64 {
    let sd = grid.spatial_dim();
    let g = state.node(node);
    // Node data order puts q, q_t, then the spatial first derivatives.
    let first: Vec<f64> = g[..2 + sd].to_vec();
    let mut coord = vec![state.t];
    coord.extend(grid.node_coord(node));
    energy_density(density, &first, &coord)
}

/// Energy of a state: the Legendre transform for ODEs, its spatial integral
/// for fields.
pub fn energy<L: LagrangianDensity>(density: &L, grid: &Grid, state: &FieldState) -> Result<f64> {
    if density.layout().spatial_dim() == 0 {
        ode_energy(density, state)
    } else {
        Ok(FieldEnergy::new(density.layout(), grid)?.energy(density, state))
    }
}

/// `‖q − q_ref‖₂ / ‖q_ref‖₂` over matching samples.
pub fn relative_l2(values: &[f64], reference: &[f64]) -> Result<f64> {
    if values.len() != reference.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} values against {} reference samples",
            values.len(),
            reference.len()
        )));
    }
    let den: f64 = reference.iter().map(|r| r * r).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(Error::UndefinedMetric);
    }
    let num: f64 = values
        .iter()
        .zip(reference)
        .map(|(v, r)| (v - r) * (v - r))
        .sum::<f64>()
        .sqrt();
    Ok(num / den)
}

/// Centered moving average; the window shrinks symmetrically at the edges.
pub fn moving_average(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::Config("moving-average window must be at least 1".into()));
    }
    let half = (window - 1) / 2;
    let n = series.len();
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + series[i];
    }
    Ok((0..n)
        .map(|i| {
            let r = half.min(i).min(n - 1 - i);
            let (a, b) = (i - r, i + r + 1);
            if r == 0 {
                series[i]
            } else {
                (prefix[b] - prefix[a]) / (b - a) as f64
            }
        })
        .collect())
}

/// Closed-form solution of `q_tt = c² q_xx` on a periodic interval from an
/// initial displacement at rest, as a truncated Fourier series.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierReference1d {
    pub lo: f64,
    pub length: f64,
    pub c2: f64,
    /// `q(0, x) = a[0] + Σ_k a[k] cos(κ_k x) + b[k] sin(κ_k x)`.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl FourierReference1d {
    /// Projects `initial` onto `modes` harmonics with a periodic trapezoid
    /// rule on `8·modes` points (spectrally accurate for smooth periodic data).
    pub fn new(initial: impl Fn(f64) -> f64, lo: f64, length: f64, c2: f64, modes: usize) -> Result<Self> {
        if modes == 0 {
            return Err(Error::Config("Fourier reference needs at least one mode".into()));
        }
        let m = 8 * modes.max(64);
        let xs: Vec<f64> = (0..m).map(|i| length * i as f64 / m as f64).collect();
        let fs: Vec<f64> = xs.iter().map(|&x| initial(lo + x)).collect();
        let mut a = vec![0.0; modes + 1];
        let mut b = vec![0.0; modes + 1];
        a[0] = fs.iter().sum::<f64>() / m as f64;
        for k in 1..=modes {
            let kap = 2.0 * PI * k as f64 / length;
            for (x, f) in xs.iter().zip(&fs) {
                let (s, c) = (kap * x).sin_cos();
                a[k] += f * c;
                b[k] += f * s;
            }
            a[k] *= 2.0 / m as f64;
            b[k] *= 2.0 / m as f64;
        }
        Ok(Self { lo, length, c2, a, b })
    }

    fn kappa(&self, k: usize) -> f64 {
        2.0 * PI * k as f64 / self.length
    }

    pub fn value(&self, t: f64, x: f64) -> f64 {
        self.jet(t, x).first[0]
    }

    /// Exact jet including second derivatives.
    pub fn jet(&self, t: f64, x: f64) -> Jet {
        let c = self.c2.sqrt();
        let mut first = vec![self.a[0], 0.0, 0.0];
        let mut second = vec![0.0; 3];
        for k in 1..self.a.len() {
            let kap = self.kappa(k);
            let (s, co) = (kap * (x - self.lo)).sin_cos();
            let (st, ct) = (c * kap * t).sin_cos();
            let w = c * kap;
            let sp = self.a[k] * co + self.b[k] * s;
            let dsp = kap * (-self.a[k] * s + self.b[k] * co);
            first[0] += sp * ct;
            first[1] -= w * sp * st;
            first[2] += dsp * ct;
            second[0] -= w * w * sp * ct;
            second[1] -= w * dsp * st;
            second[2] -= kap * kap * sp * ct;
        }
        Jet {
            layout: Layout::wave(1),
            first,
            second: Some(second),
            coord: vec![t, x],
        }
    }
}

/// Sine-eigenmode solution of `q_tt = c²(q_xx + q_yy)` in a Dirichlet box
/// from an initial displacement at rest.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenmodeReference2d {
    pub lo: [f64; 2],
    pub size: [f64; 2],
    pub c2: f64,
    /// `coeff[(m−1, n−1)]` multiplies `sin(mπx̂) sin(nπŷ)`.
    pub coeff: DMatrix<f64>,
}

impl EigenmodeReference2d {
    /// Projects `initial` with composite Gauss-Legendre quadrature.
    pub fn new(
        initial: impl Fn(f64, f64) -> f64,
        lo: [f64; 2],
        size: [f64; 2],
        c2: f64,
        modes: [usize; 2],
    ) -> Result<Self> {
        if modes[0] == 0 || modes[1] == 0 {
            return Err(Error::Config("eigenmode reference needs at least one mode per axis".into()));
        }
        let panels = 4 * modes[0].max(modes[1]).max(16);
        let axis = |a: usize| {
            let rule = QuadratureRule::tensor(&[8], &[(0.0, 1.0)]);
            let mut xs = Vec::new();
            let mut ws = Vec::new();
            for p in 0..panels {
                for (pt, w) in rule.points.iter().zip(&rule.weights) {
                    xs.push((p as f64 + pt[0]) / panels as f64);
                    ws.push(w / panels as f64);
                }
            }
            let basis = DMatrix::from_fn(modes[a], xs.len(), |m, i| ((m + 1) as f64 * PI * xs[i]).sin() * ws[i]);
            (xs, basis)
        };
        let (xs, sx) = axis(0);
        let (ys, sy) = axis(1);
        let f = DMatrix::from_fn(xs.len(), ys.len(), |i, j| {
            initial(lo[0] + xs[i] * size[0], lo[1] + ys[j] * size[1])
        });
        let coeff = (&sx * f * sy.transpose()) * 4.0;
        Ok(Self { lo, size, c2, coeff })
    }

    pub fn omega(&self, m: usize, n: usize) -> f64 {
        self.c2.sqrt() * PI * ((m as f64 / self.size[0]).powi(2) + (n as f64 / self.size[1]).powi(2)).sqrt()
    }

    pub fn value(&self, t: f64, x: f64, y: f64) -> f64 {
        let u = (x - self.lo[0]) / self.size[0];
        let v = (y - self.lo[1]) / self.size[1];
        let sx: Vec<f64> = (1..=self.coeff.nrows()).map(|m| (m as f64 * PI * u).sin()).collect();
        let sy: Vec<f64> = (1..=self.coeff.ncols()).map(|n| (n as f64 * PI * v).sin()).collect();
        let mut acc = 0.0;
        for m in 0..self.coeff.nrows() {
            for n in 0..self.coeff.ncols() {
                acc += self.coeff[(m, n)] * sx[m] * sy[n] * (self.omega(m + 1, n + 1) * t).cos();
            }
        }
        acc
    }

    /// Exact jet including second derivatives.
    pub fn jet(&self, t: f64, x: f64, y: f64) -> Jet {
        let layout = Layout::wave(2);
        let u = (x - self.lo[0]) / self.size[0];
        let v = (y - self.lo[1]) / self.size[1];
        let mut first = vec![0.0; 4];
        let mut second = vec![0.0; 6];
        for m in 1..=self.coeff.nrows() {
            let kx = m as f64 * PI / self.size[0];
            let (sx, cx) = (m as f64 * PI * u).sin_cos();
            for n in 1..=self.coeff.ncols() {
                let ky = n as f64 * PI / self.size[1];
                let (sy, cy) = (n as f64 * PI * v).sin_cos();
                let w = self.omega(m, n);
                let (st, ct) = (w * t).sin_cos();
                let a = self.coeff[(m - 1, n - 1)];
                first[0] += a * sx * sy * ct;
                first[1] -= a * w * sx * sy * st;
                first[2] += a * kx * cx * sy * ct;
                first[3] += a * ky * sx * cy * ct;
                second[Layout::pair(0, 0)] -= a * w * w * sx * sy * ct;
                second[Layout::pair(0, 1)] -= a * w * kx * cx * sy * st;
                second[Layout::pair(1, 1)] -= a * kx * kx * sx * sy * ct;
                second[Layout::pair(0, 2)] -= a * w * ky * sx * cy * st;
                second[Layout::pair(1, 2)] += a * kx * ky * cx * cy * ct;
                second[Layout::pair(2, 2)] -= a * ky * ky * sx * sy * ct;
            }
        }
        Jet {
            layout,
            first,
            second: Some(second),
            coord: vec![t, x, y],
        }
    }
}

/// Local minima of a sampled profile and the matching two-slit prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct Fringes {
    pub detected: Vec<f64>,
    pub theory: Vec<f64>,
    /// Fewer than two minima were found.
    pub failed: bool,
}

impl Fringes {
    /// Largest distance from a detected minimum to its nearest prediction.
    pub fn max_mismatch(&self) -> f64 {
        self.detected
            .iter()
            .map(|d| self.theory.iter().map(|t| (d - t).abs()).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    }
}

/// Two-slit geometry: slits centred at `center ± separation/2`, an
/// observation line at `distance` behind the barrier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlitGeometry {
    pub center: f64,
    pub separation: f64,
    pub distance: f64,
    pub wavelength: f64,
}

impl SlitGeometry {
    /// Far-field minima `d sin θ = (m + ½)λ`, mapped to the line by `tan θ`.
    pub fn theoretical_minima(&self, lo: f64, hi: f64) -> Vec<f64> {
        let mut out = Vec::new();
        for m in 0.. {
            let s = (m as f64 + 0.5) * self.wavelength / self.separation;
            if s >= 1.0 {
                break;
            }
            let y = self.distance * s.asin().tan();
            let mut any = false;
            for p in [self.center - y, self.center + y] {
                if p >= lo && p <= hi {
                    out.push(p);
                    any = true;
                }
            }
            if !any {
                break;
            }
        }
        out.sort_by(f64::total_cmp);
        out
    }
}

/// A 1D medium whose squared wave speed jumps from `c2_left` to `c2_right`
/// at `x0`, with homogeneous Neumann ends at `lo` and `hi`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInterface {
    pub lo: f64,
    pub hi: f64,
    pub x0: f64,
    pub c2_left: f64,
    pub c2_right: f64,
}

/// Fractions of the total energy on either side of an interface.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergySplit {
    pub reflected: f64,
    pub transmitted: f64,
}

impl StepInterface {
    /// Energy reflected by the interface for a wave arriving from the left,
    /// `((Z₁ − Z₂)/(Z₁ + Z₂))²` with impedance `Z = c` at unit inertia.
    pub fn reflection_coefficient(&self) -> f64 {
        let (z1, z2) = (self.c2_left.sqrt(), self.c2_right.sqrt());
        ((z1 - z2) / (z1 + z2)).powi(2)
    }

    /// Energy left and right of `x0` at `t_end`, from a leapfrog solution of
    /// `q_tt = (c² q_x)_x` on `cells` uniform cells. `initial` returns
    /// `(q, q_t)` at a point.
    pub fn split(&self, initial: impl Fn(f64) -> (f64, f64), t_end: f64, cells: usize) -> Result<EnergySplit> {
        if cells < 4 || !(self.hi > self.lo) || !(self.x0 > self.lo && self.x0 < self.hi) {
            return Err(Error::Config("step interface needs x0 inside a non-empty domain".into()));
        }
        let h = (self.hi - self.lo) / cells as f64;
        let n = cells + 1;
        let x = |i: usize| self.lo + i as f64 * h;
        // Wave speed on each edge, sampled at its midpoint.
        let c2: Vec<f64> = (0..cells)
            .map(|i| if x(i) + 0.5 * h < self.x0 { self.c2_left } else { self.c2_right })
            .collect();
        // Lumped masses: half cells at the Neumann ends.
        let mass: Vec<f64> = (0..n).map(|i| if i == 0 || i == cells { 0.5 * h } else { h }).collect();
        let accel = |q: &[f64], out: &mut [f64]| {
            out.iter_mut().for_each(|a| *a = 0.0);
            for i in 0..cells {
                let flux = c2[i] * (q[i + 1] - q[i]) / h;
                out[i] += flux;
                out[i + 1] -= flux;
            }
            for (a, m) in out.iter_mut().zip(&mass) {
                *a /= m;
            }
        };
        let cmax = self.c2_left.max(self.c2_right).sqrt();
        let steps = (t_end / (0.5 * h / cmax)).ceil().max(1.0) as usize;
        let dt = t_end / steps as f64;
        let (mut q, mut v): (Vec<f64>, Vec<f64>) = (0..n).map(|i| initial(x(i))).unzip();
        let mut a = vec![0.0; n];
        accel(&q, &mut a);
        for _ in 0..steps {
            for i in 0..n {
                v[i] += 0.5 * dt * a[i];
                q[i] += dt * v[i];
            }
            accel(&q, &mut a);
            for i in 0..n {
                v[i] += 0.5 * dt * a[i];
            }
        }
        let (mut left, mut right) = (0.0, 0.0);
        for i in 0..n {
            let e = 0.5 * mass[i] * v[i] * v[i];
            if x(i) < self.x0 {
                left += e;
            } else if x(i) > self.x0 {
                right += e;
            } else {
                left += 0.5 * e;
                right += 0.5 * e;
            }
        }
        for i in 0..cells {
            let g = (q[i + 1] - q[i]) / h;
            let e = 0.5 * c2[i] * g * g * h;
            if x(i) + 0.5 * h < self.x0 {
                left += e;
            } else {
                right += e;
            }
        }
        let total = left + right;
        if !(total > 0.0) {
            return Err(Error::UndefinedMetric);
        }
        Ok(EnergySplit {
            reflected: left / total,
            transmitted: right / total,
        })
    }
}

/// Interior local minima of `values` sampled at `ys`, ignoring dips shallower
/// than 1% of the profile's range.
pub fn fringe_minima(ys: &[f64], values: &[f64], geometry: &SlitGeometry) -> Fringes {
    let (lo, hi) = (ys[0], ys[ys.len() - 1]);
    let range = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - values.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut detected = Vec::new();
    if range > 0.0 {
        for i in 1..values.len() - 1 {
            if values[i] < values[i - 1] && values[i] <= values[i + 1] {
                let left = values[..i].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let right = values[i + 1..].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if left.min(right) - values[i] > 0.01 * range {
                    // Parabolic refinement through the three samples.
                    let (a, b, c) = (values[i - 1], values[i], values[i + 1]);
                    let den = a - 2.0 * b + c;
                    let shift = if den > 0.0 { 0.5 * (a - c) / den } else { 0.0 };
                    detected.push(ys[i] + shift * (ys[i + 1] - ys[i - 1]) / 2.0);
                }
            }
        }
    }
    Fringes {
        failed: detected.len() < 2,
        detected,
        theory: geometry.theoretical_minima(lo, hi),
    }
}
