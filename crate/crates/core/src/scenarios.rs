//! Shipped experiment definitions and the closed-form initial conditions that
//! seed them.
//!
//! Every preset lives in `scenarios/*.toml` and is embedded at build time, so
//! the files double as documentation of the geometry each experiment uses.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::{
    EigenmodeReference2d, EnergySplit, FieldEnergy, FourierReference1d, SlitGeometry, StepInterface,
};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::hermite::HermiteBasis;
use crate::integrator::{FieldState, Integrator, IntegratorConfig};
use crate::lagrangian::{estimate_wave_speed, AnyDensity, DensitySpec, LagrangianDensity, Layout};

const PRESETS: &[(&str, &str)] = &[
    ("double_pendulum", include_str!("../scenarios/double_pendulum.toml")),
    ("wave1d_n21", include_str!("../scenarios/wave1d_n21.toml")),
    ("wave1d_n31", include_str!("../scenarios/wave1d_n31.toml")),
    ("wave1d_n51", include_str!("../scenarios/wave1d_n51.toml")),
    ("wave2d", include_str!("../scenarios/wave2d.toml")),
    ("interface", include_str!("../scenarios/interface.toml")),
    ("double_slit", include_str!("../scenarios/double_slit.toml")),
];

/// Closed-form initial data. Hermite node data are seeded from exact
/// derivatives, never from finite differences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    /// Generalized coordinates and velocities of a mechanical system.
    Ode { q: Vec<f64>, qt: Vec<f64> },
    /// `A exp(-|x - center|² / 2σ²)`. A nonzero `velocity` launches the pulse
    /// along +x as `q(x - vt)`, i.e. `q_t = -v q_x`.
    Gaussian {
        amplitude: f64,
        center: Vec<f64>,
        width: f64,
        #[serde(default)]
        velocity: f64,
    },
    /// Field at rest everywhere.
    Rest,
}

impl InitialCondition {
    /// Field value at `x` for field conditions; zero for ODE data.
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Self::Gaussian {
                amplitude,
                center,
                width,
                ..
            } => amplitude * gaussian_factors(x, center, *width).iter().map(|h| h[0]).product::<f64>(),
            _ => 0.0,
        }
    }

    /// Mixed partial `∂ᵗ ∂^α q` at `x`, where bit 0 of `mask` selects time and
    /// bit `a + 1` selects spatial axis `a`.
    pub fn derivative(&self, mask: usize, x: &[f64]) -> f64 {
        match self {
            Self::Gaussian {
                amplitude,
                center,
                width,
                velocity,
            } => {
                let h = gaussian_factors(x, center, *width);
                let mut orders: Vec<usize> = (0..x.len()).map(|a| (mask >> (a + 1)) & 1).collect();
                let mut scale = *amplitude;
                if mask & 1 != 0 {
                    // ∂_t = -v ∂_x along the direction of travel.
                    if orders.is_empty() {
                        return 0.0;
                    }
                    orders[0] += 1;
                    scale *= -velocity;
                }
                scale * orders.iter().zip(&h).map(|(&o, h)| h[o]).product::<f64>()
            }
            _ => 0.0,
        }
    }

    /// Node data for every grid node.
    pub fn seed(&self, layout: Layout, grid: &Grid) -> Result<FieldState> {
        let nd = layout.node_dofs();
        match self {
            Self::Ode { q, qt } => {
                if layout.spatial_dim() != 0 || q.len() != layout.field_dim() || qt.len() != q.len() {
                    return Err(Error::DimensionMismatch(format!(
                        "ODE initial condition with {} coordinates for a {}-component layout",
                        q.len(),
                        layout.field_dim()
                    )));
                }
                let mut gamma = q.clone();
                gamma.extend(qt);
                Ok(FieldState { t: 0.0, nd, gamma })
            }
            _ => {
                if layout.spatial_dim() == 0 || layout.spatial_dim() != grid.spatial_dim() {
                    return Err(Error::DimensionMismatch(format!(
                        "field initial condition for a {}D layout on a {}D grid",
                        layout.spatial_dim(),
                        grid.spatial_dim()
                    )));
                }
                if let Self::Gaussian { center, width, .. } = self {
                    if center.len() != grid.spatial_dim() {
                        return Err(Error::DimensionMismatch(format!(
                            "Gaussian centre has {} coordinates, grid has {} axes",
                            center.len(),
                            grid.spatial_dim()
                        )));
                    }
                    if !(*width > 0.0) {
                        return Err(Error::Config(format!("Gaussian width {width} must be positive")));
                    }
                }
                if layout.field_dim() != 1 {
                    return Err(Error::Config("field initial conditions need a scalar field".into()));
                }
                let masks = HermiteBasis::new(layout).masks().to_vec();
                let mut gamma = Vec::with_capacity(nd * grid.node_count());
                for n in 0..grid.node_count() {
                    let x = grid.node_coord(n);
                    gamma.extend(masks.iter().map(|&m| self.derivative(m, &x)));
                }
                Ok(FieldState { t: 0.0, nd, gamma })
            }
        }
    }
}

/// Per-axis `[g, g', g'', g''']` of the unit Gaussian factor.
fn gaussian_factors(x: &[f64], center: &[f64], width: f64) -> Vec<[f64; 4]> {
    let s2 = width * width;
    x.iter()
        .zip(center)
        .map(|(x, c)| {
            let d = x - c;
            let g = (-d * d / (2.0 * s2)).exp();
            [
                g,
                -d / s2 * g,
                (d * d / s2 - 1.0) / s2 * g,
                (3.0 * d / s2 - d * d * d / (s2 * s2)) / s2 * g,
            ]
        })
        .collect()
}

/// Analytic or oracle solution the run is compared against.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceSpec {
    #[default]
    None,
    /// Periodic 1D Fourier series.
    Fourier { modes: usize },
    /// Dirichlet-box eigenmode expansion.
    Eigenmode { modes: [usize; 2] },
    /// Fine-grid finite differences with a step interface at the blend
    /// centre; energies are split at `measure_at`.
    Interface {
        measure_at: f64,
        #[serde(default = "default_oracle_cells")]
        cells: usize,
    },
}

fn default_oracle_cells() -> usize {
    4000
}

/// Time-averaged energy density on the line `x = const`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Observation {
    pub x: f64,
    /// Averaging starts here, once transients have passed.
    pub average_from: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Simulated time between field snapshots; none when absent.
    #[serde(default)]
    pub snapshot_interval: Option<f64>,
    #[serde(default)]
    pub observation: Option<Observation>,
    /// Slit geometry behind the observation line, for fringe theory.
    #[serde(default)]
    pub slits: Option<SlitGeometry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub horizon: f64,
    pub density: DensitySpec,
    pub grid: Grid,
    pub initial: InitialCondition,
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub reference: ReferenceSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

/// A reference evaluated at the grid nodes.
#[derive(Clone, Debug)]
pub enum Reference {
    Fourier(FourierReference1d),
    Eigenmode(EigenmodeReference2d),
}

impl Reference {
    pub fn value(&self, t: f64, x: &[f64]) -> f64 {
        match self {
            Self::Fourier(r) => r.value(t, x[0]),
            Self::Eigenmode(r) => r.value(t, x[0], x[1]),
        }
    }

    /// Values at every grid node at time `t`.
    pub fn nodal(&self, grid: &Grid, t: f64) -> Vec<f64> {
        (0..grid.node_count()).map(|n| self.value(t, &grid.node_coord(n))).collect()
    }
}

/// Names of the shipped presets.
pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

impl Scenario {
    pub fn preset(name: &str) -> Result<Self> {
        let (_, text) = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::Config(format!("unknown scenario {name:?}")))?;
        Self::from_toml(text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!("horizon {} must be positive", self.horizon)));
        }
        self.grid.validate()?;
        if let Some(dt) = self.output.snapshot_interval {
            if !(dt > 0.0) {
                return Err(Error::Config(format!("snapshot interval {dt} must be positive")));
            }
        }
        Ok(())
    }

    /// Number of steps that covers the horizon.
    pub fn steps(&self) -> usize {
        ((self.horizon / self.integrator.dt).round() as usize).max(1)
    }

    pub fn build_density(&self) -> Result<AnyDensity> {
        self.density.build()
    }

    pub fn initial_state(&self, layout: Layout) -> Result<FieldState> {
        self.initial.seed(layout, &self.grid)
    }

    /// Integrator seeded with the closed-form initial condition.
    pub fn integrator(&self) -> Result<Integrator<AnyDensity>> {
        let density = self.build_density()?;
        self.integrator_with(density)
    }

    pub fn integrator_with<L: LagrangianDensity>(&self, density: L) -> Result<Integrator<L>> {
        let state = self.initial_state(density.layout())?;
        Integrator::new(density, self.grid.clone(), self.integrator.clone(), state)
    }

    /// Builds the configured node-wise reference, if any. `density` supplies
    /// the wave speed.
    pub fn reference<L: LagrangianDensity>(&self, density: &L) -> Result<Option<Reference>> {
        let Self { grid, initial, .. } = self;
        let axis = |a: usize| -> Result<(f64, f64)> {
            let ax = grid
                .axes
                .get(a)
                .ok_or_else(|| Error::DimensionMismatch(format!("reference needs axis {a}")))?;
            Ok((ax.lo, ax.hi - ax.lo))
        };
        match &self.reference {
            ReferenceSpec::Fourier { modes } => {
                let c2 = estimate_wave_speed(density)?;
                let (lo, len) = axis(0)?;
                let r = FourierReference1d::new(|x| initial.value(&[x]), lo, len, c2, *modes)?;
                Ok(Some(Reference::Fourier(r)))
            }
            ReferenceSpec::Eigenmode { modes } => {
                let c2 = estimate_wave_speed(density)?;
                let (x0, lx) = axis(0)?;
                let (y0, ly) = axis(1)?;
                let r = EigenmodeReference2d::new(|x, y| initial.value(&[x, y]), [x0, y0], [lx, ly], c2, *modes)?;
                Ok(Some(Reference::Eigenmode(r)))
            }
            ReferenceSpec::None | ReferenceSpec::Interface { .. } => Ok(None),
        }
    }

    /// Step-interface oracle split for a blend of two 1D wave densities.
    pub fn interface_oracle(&self) -> Result<EnergySplit> {
        let ReferenceSpec::Interface { measure_at, cells } = self.reference else {
            return Err(Error::Config(format!("scenario {:?} has no interface reference", self.name)));
        };
        let DensitySpec::Blend { left, right, x0, .. } = &self.density else {
            return Err(Error::Config("interface oracle needs a blended density".into()));
        };
        let c2_left = estimate_wave_speed(&left.build()?)?;
        let c2_right = estimate_wave_speed(&right.build()?)?;
        let (lo, len) = match self.grid.axes.as_slice() {
            [a] => (a.lo, a.hi - a.lo),
            _ => return Err(Error::DimensionMismatch("interface oracle is one-dimensional".into())),
        };
        let medium = StepInterface {
            lo,
            hi: lo + len,
            x0: *x0,
            c2_left,
            c2_right,
        };
        let init = &self.initial;
        medium.split(|x| (init.value(&[x]), init.derivative(1, &[x])), measure_at, cells)
    }

    /// Energy split of a run's state about the blend centre.
    pub fn interface_split<L: LagrangianDensity>(&self, density: &L, state: &FieldState) -> Result<EnergySplit> {
        let DensitySpec::Blend { x0, .. } = &self.density else {
            return Err(Error::Config("interface split needs a blended density".into()));
        };
        let fe = FieldEnergy::new(density.layout(), &self.grid)?;
        let h = self.grid.spacing()[0];
        let (mut left, mut right) = (0.0, 0.0);
        for (c, e) in fe.cell_energies(density, state).into_iter().enumerate() {
            if self.grid.cell_lo(c)[0] + 0.5 * h < *x0 {
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

    /// Nodes on the observation line, ordered along y.
    pub fn observation_nodes(&self) -> Result<Vec<usize>> {
        let obs = self
            .output
            .observation
            .as_ref()
            .ok_or_else(|| Error::Config(format!("scenario {:?} has no observation line", self.name)))?;
        let [ax, ay] = self.grid.axes.as_slice() else {
            return Err(Error::DimensionMismatch("observation lines need a 2D grid".into()));
        };
        let i = ((obs.x - ax.lo) / ax.spacing()).round();
        if i < 0.0 || i as usize >= ax.nodes {
            return Err(Error::Config(format!("observation line x = {} lies outside the grid", obs.x)));
        }
        Ok((0..ay.nodes).map(|j| self.grid.node_id(&[i as usize, j])).collect())
    }
}

/// The double pendulum from (3π/7, 3π/4) at rest.
pub fn double_pendulum() -> Scenario {
    Scenario::preset("double_pendulum").expect("shipped preset parses")
}

/// Periodic 1D wave. The shipped node counts 21, 31 and 51 keep their paired
/// time steps unless `dt` overrides them; other counts start from the n = 51
/// preset.
pub fn wave_1d(nodes: usize, dt: Option<f64>) -> Scenario {
    let name = format!("wave1d_n{nodes}");
    let mut s = Scenario::preset(&name).unwrap_or_else(|_| {
        let mut s = Scenario::preset("wave1d_n51").expect("shipped preset parses");
        s.name = name;
        s.grid.axes[0].nodes = nodes;
        s
    });
    if let Some(dt) = dt {
        s.integrator.dt = dt;
    }
    s
}

/// Gaussian in the Dirichlet box [-1, 1]².
pub fn wave_2d() -> Scenario {
    Scenario::preset("wave2d").expect("shipped preset parses")
}

/// Rightward pulse crossing a sigmoid impedance interface.
pub fn interface() -> Scenario {
    Scenario::preset("interface").expect("shipped preset parses")
}

/// Driven plane wave through a two-slit barrier.
pub fn double_slit() -> Scenario {
    Scenario::preset("double_slit").expect("shipped preset parses")
}
