//! The ELM time stepper: damped Newton on patch errors, swept by Jacobi
//! iteration over the nodes of each new time level.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{node_spaces, Grid, NodeSpace};
use crate::hermite::HermiteBasis;
use crate::lagrangian::{dispatch_layout, estimate_wave_speed, eval_density, Jet, LagrangianDensity, Layout};
use crate::patch::{cell_derivs, cell_error, AffineCell, CellStencil};

const DIVERGENCE_LIMIT: f64 = 1e12;

/// How the first Newton iterate of a step is formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuessMode {
    Copy,
    #[default]
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub damping: f64,
    pub rounds: usize,
    /// Gauss–Legendre points per axis, time first.
    pub quadrature: Vec<usize>,
    #[serde(default)]
    pub guess: GuessMode,
}

impl IntegratorConfig {
    /// Defaults for a layout: λ = 1 (ODE, 1D) or 0.5 (2D), enough Jacobi rounds
    /// for the sweep to settle, and the standard quadrature counts.
    pub fn defaults(layout: Layout, dt: f64) -> Self {
        let (damping, rounds, quadrature) = match layout.spatial_dim() {
            0 => (1.0, 10, vec![2]),
            1 => (1.0, 30, vec![3, 6]),
            _ => (0.5, 20, vec![3, 5, 5]),
        };
        Self {
            dt,
            damping,
            rounds,
            quadrature,
            guess: GuessMode::Linear,
        }
    }

    pub fn validate(&self, layout: Layout) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config(format!("damping {} outside (0, 1]", self.damping)));
        }
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("invalid time step {}", self.dt)));
        }
        if self.quadrature.len() != layout.axes() || self.quadrature.contains(&0) {
            return Err(Error::Config(format!(
                "quadrature needs {} positive counts",
                layout.axes()
            )));
        }
        Ok(())
    }
}

/// Node states of one time level.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldState {
    pub t: f64,
    /// Degrees of freedom per node.
    pub nd: usize,
    /// Node-major, then derivative mask, then component.
    pub gamma: Vec<f64>,
}

impl FieldState {
    pub fn node(&self, i: usize) -> &[f64] {
        &self.gamma[i * self.nd..(i + 1) * self.nd]
    }

    pub fn nodes(&self) -> usize {
        self.gamma.len() / self.nd
    }

    /// Field values per node for a scalar field (component `comp`).
    pub fn values(&self, comp: usize) -> Vec<f64> {
        (0..self.nodes()).map(|i| self.gamma[i * self.nd + comp]).collect()
    }
}

/// First Newton iterate: a copy of the last state or the linear
/// extrapolation `2γ_k − γ_{k−1}`.
pub fn initial_guess(history: &[FieldState], mode: GuessMode) -> Result<FieldState> {
    let last = history
        .last()
        .ok_or_else(|| Error::Config("initial guess needs at least one state".into()))?;
    if mode == GuessMode::Copy || history.len() < 2 {
        return Ok(last.clone());
    }
    let prev = &history[history.len() - 2];
    Ok(FieldState {
        t: last.t,
        nd: last.nd,
        gamma: last
            .gamma
            .iter()
            .zip(&prev.gamma)
            .map(|(a, b)| 2.0 * a - b)
            .collect(),
    })
}

/// Damped Newton update of one node. Falls back to a short gradient step
/// when the Hessian is singular or `objective` reports an increase; when
/// `objective` is given and neither step decreases it, the node is kept.
pub fn newton_update(
    gamma: &[f64],
    g: &[f64],
    h: &[f64],
    space: Option<&NodeSpace>,
    damping: f64,
    objective: Option<(&dyn Fn(&[f64]) -> f64, f64)>,
) -> Result<Vec<f64>> {
    let nd = gamma.len();
    if g.iter().chain(h).any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            step: 0,
            node: 0,
            round: 0,
        });
    }
    if g.iter().all(|&v| v == 0.0) {
        return Ok(gamma.to_vec());
    }
    let hm = DMatrix::from_row_slice(nd, nd, h);
    let gv = DMatrix::from_column_slice(nd, 1, g);
    let step = match space {
        Some(s) if !s.is_free() => {
            let n = &s.basis;
            let hz = n.tr_mul(&hm) * n;
            let gz = n.tr_mul(&gv);
            hz.lu().solve(&gz).map(|z| n * z)
        }
        _ => hm.lu().solve(&gv),
    };
    let newton = step.filter(|s| s.iter().all(|v| v.is_finite())).map(|s| {
        gamma
            .iter()
            .zip(s.iter())
            .map(|(x, d)| x - damping * d)
            .collect::<Vec<f64>>()
    });
    let gradient = || {
        let mut d = g.to_vec();
        if let Some(s) = space {
            s.project_direction(&mut d);
        }
        gamma
            .iter()
            .zip(&d)
            .map(|(x, d)| x - damping * 1e-2 * d)
            .collect::<Vec<f64>>()
    };
    Ok(match (newton, objective) {
        (Some(candidate), Some((f, j0))) => {
            if f(&candidate) <= j0 {
                candidate
            } else {
                let fallback = gradient();
                if f(&fallback) <= j0 {
                    fallback
                } else {
                    gamma.to_vec()
                }
            }
        }
        (Some(candidate), None) => candidate,
        (None, Some((f, j0))) => {
            let fallback = gradient();
            if f(&fallback) <= j0 {
                fallback
            } else {
                gamma.to_vec()
            }
        }
        (None, None) => gradient(),
    })
}

/// Per-step diagnostics.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    pub step: usize,
    /// Total patch error over the new slab after the last round; NaN when
    /// tracking is disabled.
    pub error: f64,
}

struct Cell {
    lo: Vec<f64>,
    nodes: Vec<usize>,
}

struct AffineData {
    /// One form per cell, or a single shared form for homogeneous densities.
    forms: Vec<Arc<AffineCell>>,
    /// `N (NᵀHN)⁻¹ Nᵀ` per node; `None` when singular.
    steps: Vec<Option<DMatrix<f64>>>,
}

/// ELM integrator over a fixed grid.
pub struct Integrator<L> {
    density: L,
    grid: Grid,
    config: IntegratorConfig,
    layout: Layout,
    nd: usize,
    stencil: CellStencil,
    cells: Vec<Cell>,
    node_cells: Vec<Vec<(usize, usize)>>,
    spaces: Vec<NodeSpace>,
    affine: Option<AffineData>,
    history: Vec<FieldState>,
    steps_taken: usize,
    track_error: bool,
}

impl<L: LagrangianDensity> Integrator<L> {
    pub fn new(density: L, grid: Grid, config: IntegratorConfig, initial: FieldState) -> Result<Self> {
        let layout = density.layout();
        grid.validate()?;
        config.validate(layout)?;
        if grid.spatial_dim() != layout.spatial_dim() {
            return Err(Error::DimensionMismatch(format!(
                "grid has {} spatial axes, density {}",
                grid.spatial_dim(),
                layout.spatial_dim()
            )));
        }
        let nd = layout.node_dofs();
        if initial.nd != nd || initial.gamma.len() != nd * grid.node_count() {
            return Err(Error::DimensionMismatch(format!(
                "initial state has {} entries, grid needs {}",
                initial.gamma.len(),
                nd * grid.node_count()
            )));
        }
        let needs_speed = grid.axes.iter().any(|a| {
            matches!(a.low, crate::grid::BoundaryCondition::Mur { speed: None })
                || matches!(a.high, crate::grid::BoundaryCondition::Mur { speed: None })
        });
        let mur_speed = if needs_speed {
            Some(estimate_wave_speed(&density)?.sqrt())
        } else {
            None
        };
        let spaces = node_spaces(&grid, layout, mur_speed)?;
        let mut size = vec![config.dt];
        size.extend(grid.spacing());
        let basis = HermiteBasis::new(layout);
        let stencil = CellStencil::new(basis, &size, &config.quadrature);
        let cells: Vec<Cell> = (0..grid.cell_count().max(1))
            .map(|c| Cell {
                lo: grid.cell_lo(c),
                nodes: if grid.spatial_dim() == 0 {
                    vec![0]
                } else {
                    grid.cell_nodes(c)
                },
            })
            .collect();
        let mut node_cells = vec![Vec::new(); grid.node_count()];
        for (ci, cell) in cells.iter().enumerate() {
            for (sc, &n) in cell.nodes.iter().enumerate() {
                node_cells[n].push((ci, sc));
            }
        }
        let mut state = initial;
        for (i, s) in spaces.iter().enumerate() {
            s.project(&mut state.gamma[i * nd..(i + 1) * nd], state.t);
        }
        let mut me = Self {
            density,
            grid,
            config,
            layout,
            nd,
            stencil,
            cells,
            node_cells,
            spaces,
            affine: None,
            history: vec![state],
            steps_taken: 0,
            track_error: true,
        };
        if me.density.quadratic_in_slots() {
            me.affine = Some(me.build_affine());
        }
        Ok(me)
    }

    pub fn density(&self) -> &L {
        &self.density
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn config(&self) -> &IntegratorConfig {
        &self.config
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn state(&self) -> &FieldState {
        self.history.last().expect("history is never empty")
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    pub fn spaces(&self) -> &[NodeSpace] {
        &self.spaces
    }

    /// Space-time lower corner of a cell in the slab starting at `t`.
    fn cell_origin(&self, cell: &Cell, t: f64) -> Vec<f64> {
        let mut lo = Vec::with_capacity(cell.lo.len() + 1);
        lo.push(t);
        lo.extend(&cell.lo);
        lo
    }

    fn build_affine(&self) -> AffineData {
        let per_cell = self.density.coordinate_dependent();
        // Coordinate-dependent densities are assumed autonomous in time, so
        // each cell's form is built once with its slab starting at t = 0.
        let forms: Vec<Arc<AffineCell>> = dispatch_layout!(self.layout, P, D, NJ => {
            if per_cell {
                self.cells
                    .par_iter()
                    .map(|c| {
                        let lo = self.cell_origin(c, 0.0);
                        Arc::new(AffineCell::build::<L, P, D, NJ>(&self.density, &self.stencil, &lo))
                    })
                    .collect()
            } else {
                let lo = vec![0.0; self.layout.axes()];
                vec![Arc::new(AffineCell::build::<L, P, D, NJ>(&self.density, &self.stencil, &lo))]
            }
        });
        let nd = self.nd;
        let steps = (0..self.grid.node_count().max(1))
            .map(|node| {
                let mut h = DMatrix::zeros(nd, nd);
                for &(ci, sc) in &self.node_cells[node] {
                    let form = &forms[if per_cell { ci } else { 0 }];
                    let r0 = (2 * sc + 1) * nd;
                    for a in 0..nd {
                        for b in 0..nd {
                            h[(a, b)] += form.k_mat[(r0 + a) * form.n + r0 + b];
                        }
                    }
                }
                let n = &self.spaces[node].basis;
                if n.ncols() == 0 {
                    return Some(DMatrix::zeros(nd, nd));
                }
                let hz = n.tr_mul(&h) * n;
                hz.try_inverse().map(|inv| n * inv * n.transpose())
            })
            .collect();
        AffineData { forms, steps }
    }

    fn cell_data(&self, cell: &Cell, old: &[f64], new: &[f64], out: &mut Vec<f64>) {
        let nd = self.nd;
        out.clear();
        for &n in &cell.nodes {
            out.extend_from_slice(&old[n * nd..(n + 1) * nd]);
            out.extend_from_slice(&new[n * nd..(n + 1) * nd]);
        }
    }

    fn par_threshold(&self) -> usize {
        8
    }

    /// Summed patch error over the new slab.
    fn slab_error(&self, old: &FieldState, new: &[f64]) -> f64 {
        let per_cell: Vec<f64> = dispatch_layout!(self.layout, P, D, NJ => self.map_cells(|_, cell, buf| {
            self.cell_data(cell, &old.gamma, new, buf);
            let lo = self.cell_origin(cell, old.t);
            cell_error::<L, P, D, NJ>(&self.density, &self.stencil, &lo, buf)
        }));
        per_cell.iter().sum()
    }

    /// Enables or disables the per-step patch error in [`StepStats`]
    /// (on by default; it costs about one residual sweep per step).
    pub fn set_error_tracking(&mut self, on: bool) {
        self.track_error = on;
    }

    fn map_cells<T: Send>(&self, f: impl Fn(usize, &Cell, &mut Vec<f64>) -> T + Sync) -> Vec<T> {
        if self.cells.len() < self.par_threshold() {
            let mut buf = Vec::new();
            self.cells.iter().enumerate().map(|(i, c)| f(i, c, &mut buf)).collect()
        } else {
            self.cells
                .par_iter()
                .enumerate()
                .map_init(Vec::new, |buf, (i, c)| f(i, c, buf))
                .collect()
        }
    }

    fn map_nodes<T: Send>(&self, order: &[usize], f: impl Fn(usize) -> T + Sync) -> Vec<T> {
        if order.len() < self.par_threshold() {
            order.iter().map(|&n| f(n)).collect()
        } else {
            order.par_iter().map(|&n| f(n)).collect()
        }
    }

    /// One Jacobi round: every node update is computed from `current`.
    fn round(&self, old: &FieldState, current: &[f64], order: &[usize]) -> Result<Vec<f64>> {
        let nd = self.nd;
        let lambda = self.config.damping;
        let updates: Vec<Result<Vec<f64>>> = if let Some(aff) = &self.affine {
            let grads: Vec<Vec<f64>> = self.map_cells(|ci, cell, buf| {
                self.cell_data(cell, &old.gamma, current, buf);
                let form = &aff.forms[if aff.forms.len() == 1 { 0 } else { ci }];
                let mut g = vec![0.0; cell.nodes.len() * nd];
                for sc in 0..cell.nodes.len() {
                    let r0 = (2 * sc + 1) * nd;
                    for a in 0..nd {
                        let row = &form.k_mat[(r0 + a) * form.n..(r0 + a + 1) * form.n];
                        g[sc * nd + a] =
                            row.iter().zip(buf.iter()).map(|(k, d)| k * d).sum::<f64>() + form.k_vec[r0 + a];
                    }
                }
                g
            });
            self.map_nodes(order, |node| {
                let gamma = &current[node * nd..(node + 1) * nd];
                let mut g = vec![0.0; nd];
                for &(ci, sc) in &self.node_cells[node] {
                    for a in 0..nd {
                        g[a] += grads[ci][sc * nd + a];
                    }
                }
                Ok(match &aff.steps[node] {
                    Some(s) => (0..nd)
                        .map(|a| gamma[a] - lambda * (0..nd).map(|b| s[(a, b)] * g[b]).sum::<f64>())
                        .collect(),
                    None => {
                        let mut d = g;
                        self.spaces[node].project_direction(&mut d);
                        gamma.iter().zip(&d).map(|(x, d)| x - lambda * 1e-2 * d).collect()
                    }
                })
            })
        } else {
            dispatch_layout!(self.layout, P, D, NJ => self.general_updates::<P, D, NJ>(old, current, order))
        };
        let mut next = current.to_vec();
        for (&node, u) in order.iter().zip(updates) {
            next[node * nd..(node + 1) * nd].copy_from_slice(&u?);
        }
        Ok(next)
    }

    fn general_updates<const P: usize, const D: usize, const NJ: usize>(
        &self,
        old: &FieldState,
        current: &[f64],
        order: &[usize],
    ) -> Vec<Result<Vec<f64>>> {
        let nd = self.nd;
        let corners = 1usize << self.layout.spatial_dim();
        let free: Vec<usize> = (0..corners)
            .flat_map(|sc| ((2 * sc + 1) * nd)..((2 * sc + 2) * nd))
            .collect();
        let nf = free.len();
        let derivs: Vec<(f64, Vec<f64>, Vec<f64>)> = self.map_cells(|_, cell, buf| {
            self.cell_data(cell, &old.gamma, current, buf);
            let lo = self.cell_origin(cell, old.t);
            let d = cell_derivs::<L, P, D, NJ>(&self.density, &self.stencil, &lo, buf, &free);
            (d.j, d.g, d.h)
        });
        self.map_nodes(order, |node| {
            let gamma = &current[node * nd..(node + 1) * nd];
            let mut g = vec![0.0; nd];
            let mut h = vec![0.0; nd * nd];
            let mut j = 0.0;
            for &(ci, sc) in &self.node_cells[node] {
                let (cj, cg, ch) = &derivs[ci];
                j += cj;
                for a in 0..nd {
                    g[a] += cg[sc * nd + a];
                    for b in 0..nd {
                        h[a * nd + b] += ch[(sc * nd + a) * nf + sc * nd + b];
                    }
                }
            }
            let objective = |cand: &[f64]| -> f64 {
                let mut buf = Vec::new();
                let mut total = 0.0;
                for &(ci, sc) in &self.node_cells[node] {
                    let cell = &self.cells[ci];
                    self.cell_data(cell, &old.gamma, current, &mut buf);
                    let r0 = (2 * sc + 1) * nd;
                    buf[r0..r0 + nd].copy_from_slice(cand);
                    let lo = self.cell_origin(cell, old.t);
                    total += cell_error::<L, P, D, NJ>(&self.density, &self.stencil, &lo, &buf);
                }
                total
            };
            let space = &self.spaces[node];
            if space.free_dim() == 0 {
                return Ok(gamma.to_vec());
            }
            newton_update(gamma, &g, &h, Some(space), self.config.damping, Some((&objective, j))).map_err(
                |e| match e {
                    Error::Divergence { .. } => Error::Divergence {
                        step: 0,
                        node,
                        round: 0,
                    },
                    e => e,
                },
            )
        })
    }

    fn check(&self, gamma: &[f64], round: usize) -> Result<()> {
        if let Some(k) = gamma.iter().position(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
            return Err(Error::Divergence {
                step: self.steps_taken + 1,
                node: k / self.nd,
                round,
            });
        }
        Ok(())
    }

    /// One Jacobi round followed by constraint re-imposition.
    fn projected_round(&self, current: &[f64], t_new: f64, order: &[usize], round: usize) -> Result<Vec<f64>> {
        let mut next = self.round(self.state(), current, order).map_err(|e| match e {
            Error::Divergence { node, .. } => Error::Divergence {
                step: self.steps_taken + 1,
                node,
                round,
            },
            e => e,
        })?;
        for (i, s) in self.spaces.iter().enumerate() {
            s.project(&mut next[i * self.nd..(i + 1) * self.nd], t_new);
        }
        self.check(&next, round)?;
        Ok(next)
    }

    /// Runs `rounds` Jacobi rounds from `guess`, visiting nodes in `order`.
    pub fn jacobi_sweep_with_order(&self, guess: &FieldState, order: &[usize]) -> Result<FieldState> {
        let mut current = guess.gamma.clone();
        for round in 0..self.config.rounds {
            current = self.projected_round(&current, guess.t, order, round)?;
        }
        Ok(FieldState {
            t: guess.t,
            nd: self.nd,
            gamma: current,
        })
    }

    /// Rounds needed from the next step's guess until the slab error drops
    /// below `tol`; `None` if `max_rounds` do not suffice. The state is left
    /// untouched.
    pub fn rounds_to_converge(&self, tol: f64, max_rounds: usize) -> Result<Option<usize>> {
        let guess = self.guess()?;
        let order: Vec<usize> = (0..self.grid.node_count().max(1)).collect();
        let mut current = guess.gamma;
        for round in 0..=max_rounds {
            if self.slab_error(self.state(), &current) < tol {
                return Ok(Some(round));
            }
            if round < max_rounds {
                current = self.projected_round(&current, guess.t, &order, round)?;
            }
        }
        Ok(None)
    }

    pub fn jacobi_sweep(&self, guess: &FieldState) -> Result<FieldState> {
        let order: Vec<usize> = (0..self.grid.node_count().max(1)).collect();
        self.jacobi_sweep_with_order(guess, &order)
    }

    /// Boundary-projected first iterate for the next step.
    pub fn guess(&self) -> Result<FieldState> {
        let mut g = initial_guess(&self.history, self.config.guess)?;
        g.t = self.state().t + self.config.dt;
        for (i, s) in self.spaces.iter().enumerate() {
            s.project(&mut g.gamma[i * self.nd..(i + 1) * self.nd], g.t);
        }
        Ok(g)
    }

    /// Advances one time step.
    pub fn step(&mut self) -> Result<StepStats> {
        let guess = self.guess()?;
        let next = self.jacobi_sweep(&guess)?;
        let error = if self.track_error {
            self.slab_error(self.state(), &next.gamma)
        } else {
            f64::NAN
        };
        self.steps_taken += 1;
        self.history.push(next);
        if self.history.len() > 2 {
            self.history.remove(0);
        }
        Ok(StepStats {
            step: self.steps_taken,
            error,
        })
    }

    /// Energy `E = q_t·∂L/∂q_t − L` of the current state of an ODE system.
    pub fn ode_energy(&self) -> Result<f64> {
        ode_energy(&self.density, self.state())
    }
}

/// Energy of an ODE node state `γ = (q, q_t)`.
pub fn ode_energy<L: LagrangianDensity>(density: &L, state: &FieldState) -> Result<f64> {
    let layout = density.layout();
    if layout.spatial_dim() != 0 {
        return Err(Error::DimensionMismatch("ODE energy needs an ODE density".into()));
    }
    let jet = Jet::first_order(layout, state.gamma.clone(), vec![state.t])?;
    let e = eval_density(density, &jet)?;
    let dq = layout.field_dim();
    let kinetic: f64 = (0..dq).map(|c| jet.first[dq + c] * e.gradient[dq + c]).sum();
    Ok(kinetic - e.value)
}

/// Receives states streamed by [`rollout`].
pub trait Sink {
    fn accept(&mut self, state: &FieldState, stats: &StepStats) -> Result<()>;
    fn finish(&mut self) -> Result<()> {
        Ok(())
    }
}

impl<F: FnMut(&FieldState, &StepStats) -> Result<()>> Sink for F {
    fn accept(&mut self, state: &FieldState, stats: &StepStats) -> Result<()> {
        self(state, stats)
    }
}

/// Steps `n_steps` times, streaming the initial state and every new state
/// to `sinks`. Sinks are finished even when a step fails.
pub fn rollout<L: LagrangianDensity>(
    integrator: &mut Integrator<L>,
    n_steps: usize,
    sinks: &mut [&mut dyn Sink],
) -> Result<()> {
    if n_steps == 0 {
        return Err(Error::Config("rollout needs at least one step".into()));
    }
    let run = |integrator: &mut Integrator<L>, sinks: &mut [&mut dyn Sink]| -> Result<()> {
        let initial = StepStats::default();
        for s in sinks.iter_mut() {
            s.accept(integrator.state(), &initial)?;
        }
        for _ in 0..n_steps {
            let stats = integrator.step()?;
            for s in sinks.iter_mut() {
                s.accept(integrator.state(), &stats)?;
            }
        }
        Ok(())
    };
    let result = run(integrator, sinks);
    for s in sinks.iter_mut() {
        s.finish()?;
    }
    result
}

/// Result of [`check_symplecticity`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymplecticCheck {
    /// `‖DΦᵀ Ω DΦ − Ω‖_∞`.
    pub deviation: f64,
    /// Largest post-step patch error seen while differencing.
    pub max_error: f64,
    /// Newton did not reach `J ≤ 1e-16`.
    pub inconclusive: bool,
}

/// Velocities with `∂L/∂q_t = p` at position `q`, by Newton iteration.
pub fn inverse_legendre<L: LagrangianDensity>(density: &L, q: &[f64], p: &[f64], v0: &[f64]) -> Result<Vec<f64>> {
    let layout = density.layout();
    let dq = layout.field_dim();
    let mut v = v0.to_vec();
    for _ in 0..50 {
        let mut first = q.to_vec();
        first.extend(&v);
        let e = eval_density(density, &Jet::first_order(layout, first, vec![0.0])?)?;
        let r: Vec<f64> = (0..dq).map(|c| e.gradient[dq + c] - p[c]).collect();
        let m = DMatrix::from_fn(dq, dq, |a, b| e.hessian[dq + a][dq + b]);
        let step = m
            .lu()
            .solve(&DMatrix::from_column_slice(dq, 1, &r))
            .ok_or(Error::MassMatrixCollapse(0.0))?;
        let mut done = true;
        for c in 0..dq {
            v[c] -= step[c];
            done &= step[c].abs() <= 1e-15 * v[c].abs().max(1.0);
        }
        if done {
            break;
        }
    }
    Ok(v)
}

/// Numerical symplecticity of the one-step map in canonical coordinates,
/// from central differences of the map with perturbation `1e-6`.
pub fn check_symplecticity<L: LagrangianDensity + Clone>(
    density: &L,
    state: &FieldState,
    config: &IntegratorConfig,
) -> Result<SymplecticCheck> {
    let layout = density.layout();
    if layout.spatial_dim() != 0 {
        return Err(Error::DimensionMismatch("symplecticity check needs an ODE".into()));
    }
    let dq = layout.field_dim();
    let q0 = &state.gamma[..dq];
    let v0 = &state.gamma[dq..];
    let momentum = |q: &[f64], v: &[f64]| -> Result<Vec<f64>> {
        let mut first = q.to_vec();
        first.extend(v);
        let e = eval_density(density, &Jet::first_order(layout, first, vec![0.0])?)?;
        Ok(e.gradient[dq..].to_vec())
    };
    let p0 = momentum(q0, v0)?;
    let mut max_error: f64 = 0.0;
    let mut map = |z: &[f64]| -> Result<Vec<f64>> {
        let v = inverse_legendre(density, &z[..dq], &z[dq..], v0)?;
        let mut gamma = z[..dq].to_vec();
        gamma.extend(&v);
        let initial = FieldState {
            t: state.t,
            nd: 2 * dq,
            gamma,
        };
        let mut integ = Integrator::new(density.clone(), Grid::ode(), config.clone(), initial)?;
        let stats = integ.step()?;
        max_error = max_error.max(stats.error);
        let s = integ.state();
        let mut out = s.gamma[..dq].to_vec();
        out.extend(momentum(&s.gamma[..dq], &s.gamma[dq..])?);
        Ok(out)
    };
    let n = 2 * dq;
    let mut z0 = q0.to_vec();
    z0.extend(&p0);
    let h = 1e-6;
    let mut jac = DMatrix::zeros(n, n);
    for k in 0..n {
        let mut zp = z0.clone();
        let mut zm = z0.clone();
        zp[k] += h;
        zm[k] -= h;
        let fp = map(&zp)?;
        let fm = map(&zm)?;
        for r in 0..n {
            jac[(r, k)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    let mut omega = DMatrix::zeros(n, n);
    for c in 0..dq {
        omega[(c, dq + c)] = 1.0;
        omega[(dq + c, c)] = -1.0;
    }
    let defect = jac.transpose() * &omega * &jac - &omega;
    let deviation = defect.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Ok(SymplecticCheck {
        deviation,
        max_error,
        inconclusive: max_error > 1e-16,
    })
}
