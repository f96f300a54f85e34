//! Uniform space-time grids, boundary assignments and per-node constraints.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermite::HermiteBasis;
use crate::lagrangian::Layout;

/// Boundary condition on one grid face.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundaryCondition {
    Periodic,
    Dirichlet {
        #[serde(default)]
        value: f64,
    },
    Neumann,
    /// `q = A sin(ωt)` on the face.
    Driven { amplitude: f64, frequency: f64 },
    /// First-order absorbing boundary `q_t + s·c·q_x = 0`; `c` defaults to the
    /// density's estimated wave speed.
    Mur {
        #[serde(default)]
        speed: Option<f64>,
    },
}

/// One spatial axis: `nodes` points spanning `[lo, hi]` including both ends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub nodes: usize,
    pub low: BoundaryCondition,
    pub high: BoundaryCondition,
}

impl Axis {
    pub fn periodic(lo: f64, hi: f64, nodes: usize) -> Self {
        Self {
            lo,
            hi,
            nodes,
            low: BoundaryCondition::Periodic,
            high: BoundaryCondition::Periodic,
        }
    }

    pub fn with(lo: f64, hi: f64, nodes: usize, bc: BoundaryCondition) -> Self {
        Self {
            lo,
            hi,
            nodes,
            low: bc.clone(),
            high: bc,
        }
    }

    pub fn is_periodic(&self) -> bool {
        self.low == BoundaryCondition::Periodic
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.nodes - 1) as f64
    }

    /// Stored nodes; periodic axes store the shared end node once.
    pub fn unique(&self) -> usize {
        if self.is_periodic() {
            self.nodes - 1
        } else {
            self.nodes
        }
    }

    pub fn cells(&self) -> usize {
        self.nodes - 1
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.spacing()
    }
}

/// An internal wall on the line `axis = position`, open over `gaps`
/// (intervals along the other spatial axis). Wall nodes are held at `q = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Wall {
    pub axis: usize,
    pub position: f64,
    #[serde(default)]
    pub gaps: Vec<(f64, f64)>,
}

/// Spatial grid; empty for ODE systems (a single node).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub axes: Vec<Axis>,
    #[serde(default)]
    pub walls: Vec<Wall>,
}

impl Grid {
    pub fn ode() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        for (a, axis) in self.axes.iter().enumerate() {
            if axis.nodes < 3 {
                return Err(Error::GridTooSmall(format!(
                    "axis {a} has {} nodes, need at least 3",
                    axis.nodes
                )));
            }
            if !(axis.hi > axis.lo) {
                return Err(Error::Config(format!("axis {a} has an empty extent")));
            }
            let lp = axis.low == BoundaryCondition::Periodic;
            let hp = axis.high == BoundaryCondition::Periodic;
            if lp != hp {
                return Err(Error::Config(format!(
                    "axis {a}: periodic must apply to both faces"
                )));
            }
        }
        for w in &self.walls {
            if w.axis >= self.axes.len() {
                return Err(Error::Config(format!("wall on missing axis {}", w.axis)));
            }
        }
        Ok(())
    }

    pub fn spatial_dim(&self) -> usize {
        self.axes.len()
    }

    pub fn node_count(&self) -> usize {
        self.axes.iter().map(Axis::unique).product()
    }

    pub fn cell_count(&self) -> usize {
        self.axes.iter().map(Axis::cells).product()
    }

    pub fn spacing(&self) -> Vec<f64> {
        self.axes.iter().map(Axis::spacing).collect()
    }

    /// Multi-index of a node; the last axis varies fastest.
    pub fn node_index(&self, node: usize) -> Vec<usize> {
        let mut rest = node;
        let mut idx = vec![0; self.axes.len()];
        for a in (0..self.axes.len()).rev() {
            let n = self.axes[a].unique();
            idx[a] = rest % n;
            rest /= n;
        }
        idx
    }

    /// Node id of a multi-index, wrapping periodic axes.
    pub fn node_id(&self, idx: &[usize]) -> usize {
        let mut id = 0;
        for (a, axis) in self.axes.iter().enumerate() {
            id = id * axis.unique() + idx[a] % axis.unique();
        }
        id
    }

    pub fn node_coord(&self, node: usize) -> Vec<f64> {
        self.node_index(node)
            .iter()
            .zip(&self.axes)
            .map(|(&i, axis)| axis.coord(i))
            .collect()
    }

    /// Lower-corner multi-index of a cell.
    pub fn cell_index(&self, cell: usize) -> Vec<usize> {
        let mut rest = cell;
        let mut idx = vec![0; self.axes.len()];
        for a in (0..self.axes.len()).rev() {
            let n = self.axes[a].cells();
            idx[a] = rest % n;
            rest /= n;
        }
        idx
    }

    /// Corner nodes of a cell; spatial corner bit `a` selects the upper node
    /// on axis `a`.
    pub fn cell_nodes(&self, cell: usize) -> Vec<usize> {
        let base = self.cell_index(cell);
        let d = self.axes.len();
        (0..1usize << d)
            .map(|sc| {
                let idx: Vec<usize> = (0..d).map(|a| base[a] + ((sc >> a) & 1)).collect();
                self.node_id(&idx)
            })
            .collect()
    }

    pub fn cell_lo(&self, cell: usize) -> Vec<f64> {
        self.cell_index(cell)
            .iter()
            .zip(&self.axes)
            .map(|(&i, axis)| axis.coord(i))
            .collect()
    }

    /// True when `node` lies on an internal wall.
    pub fn on_wall(&self, node: usize) -> Option<&Wall> {
        let idx = self.node_index(node);
        let x = self.node_coord(node);
        self.walls.iter().find(|w| {
            let axis = &self.axes[w.axis];
            let i = ((w.position - axis.lo) / axis.spacing()).round() as usize;
            if idx[w.axis] != i {
                return false;
            }
            let along: Vec<f64> = (0..x.len()).filter(|&a| a != w.axis).map(|a| x[a]).collect();
            !w.gaps.iter().any(|&(a, b)| along.iter().all(|&y| y > a && y < b))
        })
    }
}

/// Right-hand side of a fixed degree of freedom.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Rhs {
    Const(f64),
    /// `A sin(ωt)`.
    Sin { amplitude: f64, frequency: f64 },
    /// `Aω cos(ωt)`.
    SinRate { amplitude: f64, frequency: f64 },
}

impl Rhs {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            Rhs::Const(v) => v,
            Rhs::Sin {
                amplitude,
                frequency,
            } => amplitude * (frequency * t).sin(),
            Rhs::SinRate {
                amplitude,
                frequency,
            } => amplitude * frequency * (frequency * t).cos(),
        }
    }
}

/// One linear equation `Σ coeff·γ[dof] = rhs(t)` on a node state.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintRow {
    pub terms: Vec<(usize, f64)>,
    pub rhs: Rhs,
}

/// Affine subspace `γ = γ_p(t) + N z` of admissible node states.
#[derive(Clone, Debug)]
pub struct NodeSpace {
    pub rows: Vec<ConstraintRow>,
    /// Orthonormal null-space basis, `nd × free`.
    pub basis: DMatrix<f64>,
    pinv: DMatrix<f64>,
}

impl NodeSpace {
    pub fn new(nd: usize, rows: Vec<ConstraintRow>) -> Self {
        if rows.is_empty() {
            return Self {
                rows,
                basis: DMatrix::identity(nd, nd),
                pinv: DMatrix::zeros(nd, 0),
            };
        }
        let nc = rows.len();
        let mut c = DMatrix::zeros(nc.max(nd), nd);
        for (r, row) in rows.iter().enumerate() {
            for &(k, v) in &row.terms {
                c[(r, k)] += v;
            }
        }
        let svd = c.clone().svd(false, true);
        let v_t = svd.v_t.expect("requested");
        let smax: f64 = svd.singular_values.max();
        let free: Vec<usize> = (0..nd)
            .filter(|&i| svd.singular_values[i] <= 1e-12 * smax.max(1.0))
            .collect();
        let mut basis = DMatrix::zeros(nd, free.len());
        for (col, &i) in free.iter().enumerate() {
            for k in 0..nd {
                basis[(k, col)] = v_t[(i, k)];
            }
        }
        let pinv = c.rows(0, nc).into_owned().pseudo_inverse(1e-12).expect("eps is positive");
        Self { rows, basis, pinv }
    }

    pub fn is_free(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn free_dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Particular admissible state at time `t`.
    pub fn particular(&self, t: f64) -> Vec<f64> {
        let nd = self.basis.nrows();
        let mut p = vec![0.0; nd];
        for (r, row) in self.rows.iter().enumerate() {
            let v = row.rhs.at(t);
            if v != 0.0 {
                for (k, pk) in p.iter_mut().enumerate() {
                    *pk += self.pinv[(k, r)] * v;
                }
            }
        }
        p
    }

    /// Orthogonal projection of `g` onto the free directions.
    pub fn project_direction(&self, g: &mut [f64]) {
        if self.is_free() {
            return;
        }
        let z = self.basis.tr_mul(&DMatrix::from_column_slice(g.len(), 1, g));
        let back = &self.basis * z;
        g.copy_from_slice(back.as_slice());
    }

    /// Closest admissible state at time `t`.
    pub fn project(&self, gamma: &mut [f64], t: f64) {
        if self.is_free() {
            return;
        }
        let p = self.particular(t);
        let mut d: Vec<f64> = gamma.iter().zip(&p).map(|(g, p)| g - p).collect();
        self.project_direction(&mut d);
        for (k, g) in gamma.iter_mut().enumerate() {
            *g = p[k] + d[k];
        }
    }

    pub fn residual(&self, gamma: &[f64], t: f64) -> f64 {
        self.rows
            .iter()
            .map(|row| {
                let lhs: f64 = row.terms.iter().map(|&(k, v)| v * gamma[k]).sum();
                (lhs - row.rhs.at(t)).abs()
            })
            .fold(0.0, f64::max)
    }
}

fn mask_pos(basis: &HermiteBasis, mask: usize) -> usize {
    basis
        .masks()
        .iter()
        .position(|&m| m == mask)
        .expect("mask exists")
}

/// Constraint rows on a node of a scalar field lying on a face with normal
/// axis `axis` (space-time axis index, time is 0) and outward sign `sign`.
fn face_rows(
    basis: &HermiteBasis,
    bc: &BoundaryCondition,
    axis: usize,
    sign: f64,
    mur_speed: f64,
) -> Vec<ConstraintRow> {
    let a = 1 << axis;
    let t = 1;
    let masks = basis.masks();
    let fix = |m: usize, rhs: Rhs| ConstraintRow {
        terms: vec![(mask_pos(basis, m), 1.0)],
        rhs,
    };
    match bc {
        BoundaryCondition::Periodic => vec![],
        BoundaryCondition::Dirichlet { value } => masks
            .iter()
            .filter(|&&m| m & a == 0)
            .map(|&m| fix(m, Rhs::Const(if m == 0 { *value } else { 0.0 })))
            .collect(),
        BoundaryCondition::Neumann => masks
            .iter()
            .filter(|&&m| m & a != 0)
            .map(|&m| fix(m, Rhs::Const(0.0)))
            .collect(),
        BoundaryCondition::Driven {
            amplitude,
            frequency,
        } => masks
            .iter()
            .filter(|&&m| m & a == 0)
            .map(|&m| {
                let rhs = match m {
                    0 => Rhs::Sin {
                        amplitude: *amplitude,
                        frequency: *frequency,
                    },
                    1 => Rhs::SinRate {
                        amplitude: *amplitude,
                        frequency: *frequency,
                    },
                    _ => Rhs::Const(0.0),
                };
                fix(m, rhs)
            })
            .collect(),
        BoundaryCondition::Mur { .. } => masks
            .iter()
            .filter(|&&m| m & a == 0 && m & t == 0)
            .map(|&m| ConstraintRow {
                terms: vec![
                    (mask_pos(basis, m | t), 1.0),
                    (mask_pos(basis, m | a), sign * mur_speed),
                ],
                rhs: Rhs::Const(0.0),
            })
            .collect(),
    }
}

/// Builds the admissible subspace of every node.
///
/// `mur_speed` supplies the wave speed for Mur faces without an explicit one.
/// Where a driven face meets an absorbing face the driven rows win.
pub fn node_spaces(grid: &Grid, layout: Layout, mur_speed: Option<f64>) -> Result<Vec<NodeSpace>> {
    let basis = HermiteBasis::new(layout);
    let nd = layout.node_dofs();
    let constrained = grid.axes.iter().any(|a| !a.is_periodic()) || !grid.walls.is_empty();
    if constrained && layout.field_dim() != 1 {
        return Err(Error::Config(
            "boundary constraints need a scalar field".into(),
        ));
    }
    let mut spaces = Vec::with_capacity(grid.node_count());
    for node in 0..grid.node_count() {
        let idx = grid.node_index(node);
        let mut rows = Vec::new();
        let mut mur = Vec::new();
        let mut driven = false;
        for (a, axis) in grid.axes.iter().enumerate() {
            for (bc, sign, on) in [
                (&axis.low, -1.0, idx[a] == 0),
                (&axis.high, 1.0, idx[a] + 1 == axis.nodes),
            ] {
                if !on {
                    continue;
                }
                let speed = match bc {
                    BoundaryCondition::Mur { speed } => speed.or(mur_speed).ok_or_else(|| {
                        Error::Config("absorbing boundary needs a wave speed".into())
                    })?,
                    _ => 0.0,
                };
                let r = face_rows(&basis, bc, a + 1, sign, speed);
                match bc {
                    BoundaryCondition::Mur { .. } => mur.extend(r),
                    BoundaryCondition::Driven { .. } => {
                        driven = true;
                        rows.extend(r)
                    }
                    _ => rows.extend(r),
                }
            }
        }
        if let Some(w) = grid.on_wall(node) {
            rows.extend(face_rows(
                &basis,
                &BoundaryCondition::Dirichlet { value: 0.0 },
                w.axis + 1,
                1.0,
                0.0,
            ));
        }
        if !driven {
            rows.extend(mur);
        }
        spaces.push(NodeSpace::new(nd, rows));
    }
    Ok(spaces)
}
