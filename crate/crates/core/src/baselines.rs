//! Classical reference integrators and discretizations.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::Axis;
use crate::lagrangian::{eval_density, Jet, LagrangianDensity, Layout};
use crate::patch::residual;

/// First-order system `y' = f(t, y)`.
pub trait OdeSystem: Sync {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], out: &mut [f64]) -> Result<()>;
    fn energy(&self, _y: &[f64]) -> Option<f64> {
        None
    }
}

/// Runge–Kutta coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct ButcherTableau {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl ButcherTableau {
    pub fn rk4() -> Self {
        Self {
            a: vec![
                vec![0.0; 4],
                vec![0.5, 0.0, 0.0, 0.0],
                vec![0.0, 0.5, 0.0, 0.0],
                vec![0.0, 0.0, 1.0, 0.0],
            ],
            b: vec![1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
            c: vec![0.0, 0.5, 0.5, 1.0],
        }
    }

    /// Two-stage Gauss–Legendre collocation (order 4).
    pub fn gauss2() -> Self {
        let s = 3f64.sqrt() / 6.0;
        Self {
            a: vec![vec![0.25, 0.25 - s], vec![0.25 + s, 0.25]],
            b: vec![0.5, 0.5],
            c: vec![0.5 - s, 0.5 + s],
        }
    }

    /// Dormand–Prince 5(4); `b` is the fifth-order solution.
    pub fn dopri5() -> Self {
        Self {
            a: vec![
                vec![],
                vec![1.0 / 5.0],
                vec![3.0 / 40.0, 9.0 / 40.0],
                vec![44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
                vec![19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
                vec![
                    9017.0 / 3168.0,
                    -355.0 / 33.0,
                    46732.0 / 5247.0,
                    49.0 / 176.0,
                    -5103.0 / 18656.0,
                ],
                vec![
                    35.0 / 384.0,
                    0.0,
                    500.0 / 1113.0,
                    125.0 / 192.0,
                    -2187.0 / 6784.0,
                    11.0 / 84.0,
                ],
            ],
            b: vec![
                35.0 / 384.0,
                0.0,
                500.0 / 1113.0,
                125.0 / 192.0,
                -2187.0 / 6784.0,
                11.0 / 84.0,
                0.0,
            ],
            c: vec![0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0],
        }
    }
}

const DOPRI_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

fn axpy(y: &[f64], terms: &[(f64, &[f64])]) -> Vec<f64> {
    let mut out = y.to_vec();
    for &(s, v) in terms {
        if s != 0.0 {
            for (o, x) in out.iter_mut().zip(v) {
                *o += s * x;
            }
        }
    }
    out
}

fn explicit_stages<S: OdeSystem + ?Sized>(
    sys: &S,
    tab: &ButcherTableau,
    t: f64,
    y: &[f64],
    dt: f64,
) -> Result<Vec<Vec<f64>>> {
    let mut k: Vec<Vec<f64>> = Vec::with_capacity(tab.c.len());
    for i in 0..tab.c.len() {
        let terms: Vec<(f64, &[f64])> = (0..i)
            .map(|j| (dt * tab.a[i][j], k[j].as_slice()))
            .collect();
        let yi = axpy(y, &terms);
        let mut ki = vec![0.0; y.len()];
        sys.rhs(t + tab.c[i] * dt, &yi, &mut ki)?;
        k.push(ki);
    }
    Ok(k)
}

pub fn rk4_step<S: OdeSystem + ?Sized>(sys: &S, t: f64, y: &[f64], dt: f64) -> Result<Vec<f64>> {
    let tab = ButcherTableau::rk4();
    let k = explicit_stages(sys, &tab, t, y, dt)?;
    let terms: Vec<(f64, &[f64])> = tab.b.iter().zip(&k).map(|(b, k)| (dt * b, k.as_slice())).collect();
    Ok(axpy(y, &terms))
}

/// One Dormand–Prince attempt.
#[derive(Clone, Debug, PartialEq)]
pub struct DopriStep {
    pub y: Vec<f64>,
    /// Scaled RMS error estimate; the step is acceptable when `≤ 1`.
    pub error: f64,
    pub dt_next: f64,
}

const DOPRI_SAFETY: f64 = 0.9;
const DOPRI_BETA: f64 = 0.04;

/// One Dormand–Prince 5(4) step with PI step-size proposal; `prev_error` is
/// the error of the last accepted step.
pub fn dopri_step<S: OdeSystem + ?Sized>(
    sys: &S,
    t: f64,
    y: &[f64],
    dt: f64,
    tol: f64,
    prev_error: f64,
) -> Result<DopriStep> {
    let tab = ButcherTableau::dopri5();
    let k = explicit_stages(sys, &tab, t, y, dt)?;
    let terms: Vec<(f64, &[f64])> = tab.b.iter().zip(&k).map(|(b, k)| (dt * b, k.as_slice())).collect();
    let y5 = axpy(y, &terms);
    let mut acc = 0.0;
    for i in 0..y.len() {
        let e: f64 = (0..7).map(|s| (tab.b[s] - DOPRI_B4[s]) * k[s][i]).sum::<f64>() * dt;
        let scale = tol + tol * y[i].abs().max(y5[i].abs());
        acc += (e / scale).powi(2);
    }
    let error = (acc / y.len() as f64).sqrt();
    let alpha = 0.2 - 0.75 * DOPRI_BETA;
    let factor = if error == 0.0 {
        10.0
    } else {
        (DOPRI_SAFETY * error.powf(-alpha) * prev_error.max(1e-4).powf(DOPRI_BETA)).clamp(0.2, 10.0)
    };
    let factor = if error > 1.0 { factor.min(1.0) } else { factor };
    Ok(DopriStep {
        y: y5,
        error,
        dt_next: dt * factor,
    })
}

/// Adaptive Dormand–Prince driver.
#[derive(Clone, Debug)]
pub struct Dopri {
    pub tol: f64,
    pub dt: f64,
    prev_error: f64,
    pub accepted: usize,
    pub rejected: usize,
}

impl Dopri {
    pub fn new(tol: f64, dt0: f64) -> Self {
        Self {
            tol,
            dt: dt0,
            prev_error: 1e-4,
            accepted: 0,
            rejected: 0,
        }
    }

    /// Integrates from `t` to `t_end`, landing exactly on `t_end`.
    pub fn advance<S: OdeSystem + ?Sized>(&mut self, sys: &S, t: f64, y: &[f64], t_end: f64) -> Result<Vec<f64>> {
        let mut t = t;
        let mut y = y.to_vec();
        while t < t_end {
            let remaining = t_end - t;
            let last = self.dt >= remaining * (1.0 - 1e-12);
            let h = if last { remaining } else { self.dt };
            let s = dopri_step(sys, t, &y, h, self.tol, self.prev_error)?;
            if !s.error.is_finite() {
                return Err(Error::Divergence {
                    step: self.accepted,
                    node: 0,
                    round: 0,
                });
            }
            if s.error <= 1.0 {
                t = if last { t_end } else { t + h };
                y = s.y;
                self.prev_error = s.error;
                self.accepted += 1;
                // A step shortened to land on t_end says nothing about the
                // step size the solution needs.
                if !last {
                    self.dt = s.dt_next;
                }
            } else {
                self.rejected += 1;
                self.dt = s.dt_next;
            }
            if self.dt < 1e-14 * t_end.abs().max(1.0) {
                return Err(Error::StepSizeUnderflow(self.dt));
            }
        }
        Ok(y)
    }
}

const IMPLICIT_TOL: f64 = 1e-12;
const IMPLICIT_CAP: usize = 50;

/// Solves the stacked stage equations `K = F(K)` by fixed-point iteration,
/// switching to Newton with a finite-difference Jacobian when it stalls.
fn solve_stages(
    n: usize,
    init: Vec<f64>,
    map: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
) -> Result<Vec<f64>> {
    let close = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs() / x.abs().max(1.0))
            .fold(0.0, f64::max)
    };
    let mut k = init;
    for _ in 0..IMPLICIT_CAP {
        let next = map(&k)?;
        let d = close(&next, &k);
        k = next;
        if !d.is_finite() {
            break;
        }
        if d <= IMPLICIT_TOL {
            return Ok(k);
        }
    }
    if k.iter().any(|v| !v.is_finite()) {
        k = vec![0.0; n];
    }
    let mut residual = f64::INFINITY;
    for it in 0..IMPLICIT_CAP {
        let fk = map(&k)?;
        let r: Vec<f64> = k.iter().zip(&fk).map(|(a, b)| a - b).collect();
        residual = close(&fk, &k);
        if residual <= IMPLICIT_TOL {
            return Ok(fk);
        }
        let mut jac = DMatrix::identity(n, n);
        for col in 0..n {
            let h = 1e-7 * k[col].abs().max(1.0);
            let mut kp = k.clone();
            kp[col] += h;
            let fp = map(&kp)?;
            for row in 0..n {
                jac[(row, col)] -= (fp[row] - fk[row]) / h;
            }
        }
        let dk = jac
            .lu()
            .solve(&DVector::from_vec(r))
            .ok_or(Error::ImplicitSolve {
                iterations: IMPLICIT_CAP + it,
                residual,
            })?;
        for (a, d) in k.iter_mut().zip(dk.iter()) {
            *a -= d;
        }
    }
    Err(Error::ImplicitSolve {
        iterations: 2 * IMPLICIT_CAP,
        residual,
    })
}

/// Implicit midpoint rule `y₁ = y₀ + Δt f(t + Δt/2, (y₀ + y₁)/2)`.
pub fn implicit_midpoint_step<S: OdeSystem + ?Sized>(sys: &S, t: f64, y: &[f64], dt: f64) -> Result<Vec<f64>> {
    let n = y.len();
    let mut k0 = vec![0.0; n];
    sys.rhs(t, y, &mut k0)?;
    let map = |k: &[f64]| -> Result<Vec<f64>> {
        let mid = axpy(y, &[(0.5 * dt, k)]);
        let mut out = vec![0.0; n];
        sys.rhs(t + 0.5 * dt, &mid, &mut out)?;
        Ok(out)
    };
    let k = solve_stages(n, k0, &map)?;
    Ok(axpy(y, &[(dt, &k)]))
}

/// Two-stage Gauss–Legendre Runge–Kutta step.
pub fn glrk_step<S: OdeSystem + ?Sized>(sys: &S, t: f64, y: &[f64], dt: f64) -> Result<Vec<f64>> {
    let tab = ButcherTableau::gauss2();
    let n = y.len();
    let mut k0 = vec![0.0; n];
    sys.rhs(t, y, &mut k0)?;
    let mut init = k0.clone();
    init.extend(&k0);
    let map = |k: &[f64]| -> Result<Vec<f64>> {
        let (k1, k2) = k.split_at(n);
        let mut out = vec![0.0; 2 * n];
        for i in 0..2 {
            let yi = axpy(y, &[(dt * tab.a[i][0], k1), (dt * tab.a[i][1], k2)]);
            sys.rhs(t + tab.c[i] * dt, &yi, &mut out[i * n..(i + 1) * n])?;
        }
        Ok(out)
    };
    let k = solve_stages(2 * n, init, &map)?;
    let (k1, k2) = k.split_at(n);
    Ok(axpy(y, &[(dt * tab.b[0], k1), (dt * tab.b[1], k2)]))
}

/// Fixed-step methods selectable by name.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FixedMethod {
    Rk4,
    Midpoint,
    Glrk,
}

impl FixedMethod {
    pub fn step<S: OdeSystem + ?Sized>(&self, sys: &S, t: f64, y: &[f64], dt: f64) -> Result<Vec<f64>> {
        match self {
            Self::Rk4 => rk4_step(sys, t, y, dt),
            Self::Midpoint => implicit_midpoint_step(sys, t, y, dt),
            Self::Glrk => glrk_step(sys, t, y, dt),
        }
    }
}

/// `q_tt = M⁻¹(∂L/∂q − ∂²L/∂q_t∂q · q_t)` with `M = ∂²L/∂q_t²`.
pub fn lnn_acceleration<L: LagrangianDensity>(density: &L, q: &[f64], qt: &[f64]) -> Result<Vec<f64>> {
    let layout = density.layout();
    if layout.spatial_dim() != 0 {
        return Err(Error::DimensionMismatch("acceleration needs an ODE density".into()));
    }
    let dq = layout.field_dim();
    let mut first = q.to_vec();
    first.extend(qt);
    let e = eval_density(density, &Jet::first_order(layout, first, vec![0.0])?)?;
    let m = DMatrix::from_fn(dq, dq, |a, b| e.hessian[dq + a][dq + b]);
    let det = m.determinant();
    if det.abs() < 1e-12 {
        return Err(Error::MassMatrixCollapse(det.abs()));
    }
    let rhs = DVector::from_fn(dq, |a, _| {
        e.gradient[a] - (0..dq).map(|b| e.hessian[dq + a][b] * qt[b]).sum::<f64>()
    });
    let acc = m.lu().solve(&rhs).ok_or(Error::MassMatrixCollapse(det.abs()))?;
    Ok(acc.iter().copied().collect())
}

/// ODE `(q, q_t)' = (q_t, q_tt)` driven by a Lagrangian.
#[derive(Clone, Debug)]
pub struct LagrangianOde<L> {
    pub density: L,
}

impl<L: LagrangianDensity> OdeSystem for LagrangianOde<L> {
    fn dim(&self) -> usize {
        2 * self.density.layout().field_dim()
    }

    fn rhs(&self, _t: f64, y: &[f64], out: &mut [f64]) -> Result<()> {
        let dq = self.density.layout().field_dim();
        let acc = lnn_acceleration(&self.density, &y[..dq], &y[dq..])?;
        out[..dq].copy_from_slice(&y[dq..]);
        out[dq..].copy_from_slice(&acc);
        Ok(())
    }

    fn energy(&self, y: &[f64]) -> Option<f64> {
        let layout = self.density.layout();
        let dq = layout.field_dim();
        let jet = Jet::first_order(layout, y.to_vec(), vec![0.0]).ok()?;
        let e = eval_density(&self.density, &jet).ok()?;
        Some((0..dq).map(|c| y[dq + c] * e.gradient[dq + c]).sum::<f64>() - e.value)
    }
}

/// State of the periodic stencil chain.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
}

fn chain_accel(q: &[f64], c2: f64, dx: f64) -> Vec<f64> {
    let n = q.len();
    (0..n)
        .map(|i| c2 * (q[(i + 1) % n] - 2.0 * q[i] + q[(i + n - 1) % n]) / (dx * dx))
        .collect()
}

/// Velocity-Verlet step of `L_d = Σ ½q̇_i² − ½c²((q_{i+1} − q_i)/Δx)²` on a
/// periodic chain.
pub fn stencil_verlet_step(state: &ChainState, dt: f64, c2: f64, dx: f64) -> ChainState {
    let a0 = chain_accel(&state.q, c2, dx);
    let vh: Vec<f64> = state.v.iter().zip(&a0).map(|(v, a)| v + 0.5 * dt * a).collect();
    let q: Vec<f64> = state.q.iter().zip(&vh).map(|(q, v)| q + dt * v).collect();
    let a1 = chain_accel(&q, c2, dx);
    let v = vh.iter().zip(&a1).map(|(v, a)| v + 0.5 * dt * a).collect();
    ChainState { q, v }
}

/// Discrete Hamiltonian of the stencil chain, scaled by `Δx`.
pub fn stencil_energy(state: &ChainState, c2: f64, dx: f64) -> f64 {
    let n = state.q.len();
    (0..n)
        .map(|i| {
            let s = (state.q[(i + 1) % n] - state.q[i]) / dx;
            0.5 * state.v[i] * state.v[i] + 0.5 * c2 * s * s
        })
        .sum::<f64>()
        * dx
}

/// Fourth-order central differences on a periodic grid.
pub fn fd4_first(q: &[f64], dx: f64) -> Vec<f64> {
    let n = q.len();
    (0..n)
        .map(|i| {
            let at = |o: isize| q[(i as isize + o).rem_euclid(n as isize) as usize];
            (-at(2) + 8.0 * at(1) - 8.0 * at(-1) + at(-2)) / (12.0 * dx)
        })
        .collect()
}

pub fn fd4_second(q: &[f64], dx: f64) -> Vec<f64> {
    let n = q.len();
    (0..n)
        .map(|i| {
            let at = |o: isize| q[(i as isize + o).rem_euclid(n as isize) as usize];
            (-at(2) + 16.0 * at(1) - 30.0 * at(0) + 16.0 * at(-1) - at(-2)) / (12.0 * dx * dx)
        })
        .collect()
}

/// Method-of-lines system over `(q_0..q_{n−1}, q_t,0..q_t,n−1)`.
#[derive(Clone, Debug)]
pub struct Fd4System<L> {
    pub density: L,
    pub xs: Vec<f64>,
    pub dx: f64,
}

/// Semi-discretizes a 1D density on a periodic axis with fourth-order
/// differences; the acceleration solves the residual for `q_tt`.
pub fn fd4_semidiscretize<L: LagrangianDensity>(density: L, axis: &Axis) -> Result<Fd4System<L>> {
    if density.layout() != Layout::wave(1) {
        return Err(Error::DimensionMismatch("FD4 needs a 1D scalar density".into()));
    }
    if !axis.is_periodic() {
        return Err(Error::Config("FD4 baseline needs a periodic axis".into()));
    }
    let n = axis.unique();
    if n < 5 {
        return Err(Error::GridTooSmall(format!("{n} nodes, FD4 needs at least 5")));
    }
    Ok(Fd4System {
        xs: (0..n).map(|i| axis.coord(i)).collect(),
        dx: axis.spacing(),
        density,
    })
}

impl<L: LagrangianDensity> Fd4System<L> {
    pub fn nodes(&self) -> usize {
        self.xs.len()
    }
}

impl<L: LagrangianDensity> OdeSystem for Fd4System<L> {
    fn dim(&self) -> usize {
        2 * self.xs.len()
    }

    fn rhs(&self, t: f64, y: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.xs.len();
        let (q, qt) = y.split_at(n);
        let qx = fd4_first(q, self.dx);
        let qxx = fd4_second(q, self.dx);
        let qtx = fd4_first(qt, self.dx);
        let layout = self.density.layout();
        for i in 0..n {
            let mut jet = Jet {
                layout,
                first: vec![q[i], qt[i], qx[i]],
                second: Some(vec![0.0, qtx[i], qxx[i]]),
                coord: vec![t, self.xs[i]],
            };
            let r0 = residual(&self.density, &jet)?[0];
            jet.second.as_mut().expect("set above")[0] = 1.0;
            let slope = residual(&self.density, &jet)?[0] - r0;
            if slope.abs() < 1e-12 {
                return Err(Error::MassMatrixCollapse(slope.abs()));
            }
            out[i] = qt[i];
            out[n + i] = -r0 / slope;
        }
        Ok(())
    }

    /// `Σ_i (q_t ∂L/∂q_t − L) Δx` with the same FD4 `q_x`.
    fn energy(&self, y: &[f64]) -> Option<f64> {
        let n = self.xs.len();
        let (q, qt) = y.split_at(n);
        let qx = fd4_first(q, self.dx);
        let layout = self.density.layout();
        let mut total = 0.0;
        for i in 0..n {
            let jet = Jet::first_order(layout, vec![q[i], qt[i], qx[i]], vec![0.0, self.xs[i]]).ok()?;
            let e = eval_density(&self.density, &jet).ok()?;
            total += qt[i] * e.gradient[1] - e.value;
        }
        Some(total * self.dx)
    }
}
