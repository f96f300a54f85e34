use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use elm_core::analysis::{relative_l2, FieldEnergy};
use elm_core::baselines::{
    fd4_semidiscretize, glrk_step, stencil_energy, stencil_verlet_step, ChainState, Dopri, FixedMethod,
    LagrangianOde, OdeSystem,
};
use elm_core::scenarios::{self, Reference};
use elm_core::{DensitySpec, LagrangianDensity, Scenario};
use serde::Deserialize;

use crate::output::{divergence_line, RunOutput};
use crate::SimulateArgs;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Elm,
    Rk4,
    Dopri,
    Midpoint,
    Glrk,
    Verlet,
    Fd4Glrk,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Self::Elm => "elm",
            Self::Rk4 => "rk4",
            Self::Dopri => "dopri",
            Self::Midpoint => "midpoint",
            Self::Glrk => "glrk",
            Self::Verlet => "verlet",
            Self::Fd4Glrk => "fd4-glrk",
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Overrides {
    dt: Option<f64>,
    rounds: Option<usize>,
    damping: Option<f64>,
    horizon: Option<f64>,
    tol: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    dir: Option<PathBuf>,
    snapshot_every: Option<f64>,
}

/// Contents of a run file. Flags take precedence over every entry.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    scenario: Option<String>,
    method: Option<Method>,
    density: Option<PathBuf>,
    #[serde(default)]
    overrides: Overrides,
    #[serde(default)]
    output: OutputSection,
}

impl RunConfig {
    fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    fn merge(mut self, args: SimulateArgs) -> Self {
        self.scenario = args.scenario.or(self.scenario);
        self.method = args.method.or(self.method);
        self.density = args.density.or(self.density);
        let o = &mut self.overrides;
        o.dt = args.dt.or(o.dt);
        o.rounds = args.rounds.or(o.rounds);
        o.damping = args.damping.or(o.damping);
        o.horizon = args.horizon.or(o.horizon);
        o.tol = args.tol.or(o.tol);
        self.output.dir = args.out.or(self.output.dir.take());
        self.output.snapshot_every = args.snapshot_every.or(self.output.snapshot_every);
        self
    }
}

fn load_scenario(name: &str) -> Result<Scenario> {
    if scenarios::preset_names().any(|p| p == name) {
        return Ok(Scenario::preset(name)?);
    }
    let path = Path::new(name);
    if path.exists() {
        return Ok(Scenario::load(path)?);
    }
    let presets: Vec<&str> = scenarios::preset_names().collect();
    bail!("unknown scenario {name:?}: not a preset ({}) or a file", presets.join(", "))
}

enum Outcome {
    Completed,
    Diverged { step: usize, t: f64, message: String },
}

struct Run {
    scenario: Scenario,
    method: Method,
    tol: f64,
    out: RunOutput,
}

pub fn run(args: SimulateArgs) -> Result<ExitCode> {
    let file = match &args.config {
        Some(p) => RunConfig::read(p)?,
        None => RunConfig::default(),
    };
    let cfg = file.merge(args);
    let name = cfg.scenario.context("no scenario given (use --scenario or a run file)")?;
    let mut scenario = load_scenario(&name)?;
    let o = &cfg.overrides;
    if let Some(dt) = o.dt {
        scenario.integrator.dt = dt;
    }
    if let Some(r) = o.rounds {
        scenario.integrator.rounds = r;
    }
    if let Some(l) = o.damping {
        scenario.integrator.damping = l;
    }
    if let Some(h) = o.horizon {
        scenario.horizon = h;
    }
    if let Some(path) = &cfg.density {
        scenario.density = DensitySpec::Mlp { path: path.clone() };
    }
    if let Some(s) = cfg.output.snapshot_every {
        scenario.output.snapshot_interval = Some(s);
    }
    scenario.validate()?;

    let method = cfg.method.unwrap_or(Method::Elm);
    let dir = cfg
        .output
        .dir
        .unwrap_or_else(|| PathBuf::from("out").join(&scenario.name));
    let density = scenario.build_density()?;
    scenario.integrator.validate(density.layout())?;
    let reference = scenario.reference(&density)?;
    let out = RunOutput::new(&dir, reference.is_some(), scenario.output.snapshot_interval)?;
    let mut run = Run {
        scenario,
        method,
        tol: o.tol.unwrap_or(1e-6),
        out,
    };
    let outcome = match method {
        Method::Elm => run.elm(&density, reference.as_ref()),
        Method::Rk4 | Method::Dopri | Method::Midpoint | Method::Glrk => run.ode(&density),
        Method::Verlet => run.verlet(reference.as_ref()),
        Method::Fd4Glrk => run.fd4(&density, reference.as_ref()),
    }?;
    run.out.finish()?;
    match outcome {
        Outcome::Completed => Ok(ExitCode::SUCCESS),
        Outcome::Diverged { step, t, message } => {
            eprintln!("{}", divergence_line(method.name(), step, t, &message));
            Ok(ExitCode::from(2))
        }
    }
}

/// Writes L² against the reference at most ~1000 times per run.
fn l2_stride(steps: usize) -> usize {
    steps.div_ceil(1000).max(1)
}

impl Run {
    fn elm<L: LagrangianDensity>(&mut self, density: &L, reference: Option<&Reference>) -> Result<Outcome> {
        let s = &self.scenario;
        let mut elm = s.integrator_with(density)?;
        elm.set_error_tracking(false);
        let grid = s.grid.clone();
        let ode = grid.spatial_dim() == 0;
        let field = if ode { None } else { Some(FieldEnergy::new(elm.layout(), &grid)?) };
        let dims: Vec<usize> = grid.axes.iter().map(|a| a.unique()).collect();
        let dq = elm.layout().field_dim();
        let steps = s.steps();
        let stride = l2_stride(steps);
        for k in 0..=steps {
            if k > 0 {
                if let Err(e) = elm.step() {
                    return Ok(Outcome::Diverged {
                        step: k,
                        t: elm.state().t,
                        message: e.to_string(),
                    });
                }
            }
            let st = elm.state();
            let e = match &field {
                Some(f) => f.energy(density, st),
                None => elm.ode_energy()?,
            };
            if !e.is_finite() {
                return Ok(diverged_energy(k, st.t));
            }
            self.out.energy(st.t, e)?;
            if ode {
                self.out.snapshot(st.t, &[dq], &st.gamma[..dq])?;
            } else {
                let values = st.values(0);
                self.out.snapshot(st.t, &dims, &values)?;
                if let (Some(r), true) = (reference, k % stride == 0) {
                    self.out.l2(st.t, relative_l2(&values, &r.nodal(&grid, st.t))?)?;
                }
            }
        }
        Ok(Outcome::Completed)
    }

    fn ode<L: LagrangianDensity>(&mut self, density: &L) -> Result<Outcome> {
        let layout = density.layout();
        if layout.spatial_dim() != 0 {
            bail!(
                "method {} needs an ODE scenario; use fd4-glrk or verlet for fields",
                self.method.name()
            );
        }
        let s = &self.scenario;
        let sys = LagrangianOde { density };
        let mut y = s.initial_state(layout)?.gamma;
        let dt = s.integrator.dt;
        let dq = layout.field_dim();
        let mut dopri = Dopri::new(self.tol, dt);
        let fixed = match self.method {
            Method::Rk4 => Some(FixedMethod::Rk4),
            Method::Midpoint => Some(FixedMethod::Midpoint),
            Method::Glrk => Some(FixedMethod::Glrk),
            _ => None,
        };
        for k in 0..=s.steps() {
            let t = k as f64 * dt;
            if k > 0 {
                let t0 = t - dt;
                let next = match fixed {
                    Some(m) => m.step(&sys, t0, &y, dt),
                    None => dopri.advance(&sys, t0, &y, t),
                };
                match next {
                    Ok(v) => y = v,
                    Err(e) => {
                        return Ok(Outcome::Diverged {
                            step: k,
                            t,
                            message: e.to_string(),
                        })
                    }
                }
            }
            let e = sys.energy(&y).context("density has no energy")?;
            if !e.is_finite() {
                return Ok(diverged_energy(k, t));
            }
            self.out.energy(t, e)?;
            self.out.snapshot(t, &[dq], &y[..dq])?;
        }
        Ok(Outcome::Completed)
    }

    fn fd4<L: LagrangianDensity>(&mut self, density: &L, reference: Option<&Reference>) -> Result<Outcome> {
        let s = &self.scenario;
        if s.grid.axes.len() != 1 {
            bail!("fd4-glrk needs a 1D scenario");
        }
        let sys = fd4_semidiscretize(density, &s.grid.axes[0])?;
        let xs = sys.xs.clone();
        let n = xs.len();
        let mut y: Vec<f64> = xs.iter().map(|&x| s.initial.value(&[x])).collect();
        y.extend(xs.iter().map(|&x| s.initial.derivative(1, &[x])));
        let dt = s.integrator.dt;
        let steps = s.steps();
        let stride = l2_stride(steps);
        for k in 0..=steps {
            let t = k as f64 * dt;
            if k > 0 {
                match glrk_step(&sys, t - dt, &y, dt) {
                    Ok(v) => y = v,
                    Err(e) => {
                        return Ok(Outcome::Diverged {
                            step: k,
                            t,
                            message: e.to_string(),
                        })
                    }
                }
            }
            let e = sys.energy(&y).context("energy evaluation failed")?;
            if !e.is_finite() {
                return Ok(diverged_energy(k, t));
            }
            self.out.energy(t, e)?;
            self.out.snapshot(t, &[n], &y[..n])?;
            if let (Some(r), true) = (reference, k % stride == 0) {
                let exact: Vec<f64> = xs.iter().map(|&x| r.value(t, &[x])).collect();
                self.out.l2(t, relative_l2(&y[..n], &exact)?)?;
            }
        }
        Ok(Outcome::Completed)
    }

    fn verlet(&mut self, reference: Option<&Reference>) -> Result<Outcome> {
        let s = &self.scenario;
        let DensitySpec::Wave1d { c2 } = s.density else {
            bail!("verlet runs the stencil wave chain and needs a wave1d density");
        };
        let axis = &s.grid.axes[0];
        if s.grid.axes.len() != 1 || !axis.is_periodic() {
            bail!("verlet needs a periodic 1D grid");
        }
        let n = axis.unique();
        let dx = axis.spacing();
        let xs: Vec<f64> = (0..n).map(|i| axis.coord(i)).collect();
        let mut chain = ChainState {
            q: xs.iter().map(|&x| s.initial.value(&[x])).collect(),
            v: xs.iter().map(|&x| s.initial.derivative(1, &[x])).collect(),
        };
        let dt = s.integrator.dt;
        let steps = s.steps();
        let stride = l2_stride(steps);
        for k in 0..=steps {
            let t = k as f64 * dt;
            if k > 0 {
                chain = stencil_verlet_step(&chain, dt, c2, dx);
            }
            let e = stencil_energy(&chain, c2, dx);
            if !e.is_finite() {
                return Ok(diverged_energy(k, t));
            }
            self.out.energy(t, e)?;
            self.out.snapshot(t, &[n], &chain.q)?;
            if let (Some(r), true) = (reference, k % stride == 0) {
                let exact: Vec<f64> = xs.iter().map(|&x| r.value(t, &[x])).collect();
                self.out.l2(t, relative_l2(&chain.q, &exact)?)?;
            }
        }
        Ok(Outcome::Completed)
    }
}

fn diverged_energy(step: usize, t: f64) -> Outcome {
    Outcome::Diverged {
        step,
        t,
        message: "energy is not finite".into(),
    }
}
