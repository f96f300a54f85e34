use std::process::ExitCode;

use anyhow::Result;
use clap::ValueEnum;
use elm_core::analysis::{relative_l2, FieldEnergy};
use elm_core::baselines::{glrk_step, LagrangianOde};
use elm_core::hermite::{cell_nodes, data_index, eval_patch, fit_hermite, HermiteBasis};
use elm_core::integrator::check_symplecticity;
use elm_core::mlp::{PlaneWave, PlaneWaveMode};
use elm_core::patch::residual;
use elm_core::quadrature::QuadratureRule;
use elm_core::scenarios::{self, ReferenceSpec};
use elm_core::{DoublePendulum, Jet, LagrangianDensity, Layout, Scenario, Wave1d, Wave2d};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::VerifyArgs;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Quadrature,
    Hermite,
    Residual,
    Symplectic,
    Order,
    #[value(name = "energy-1d")]
    Energy1d,
    #[value(name = "energy-2d")]
    Energy2d,
    Interface,
}

struct Check {
    name: String,
    measured: String,
    limit: String,
    pass: bool,
}

fn check(name: impl Into<String>, measured: impl Into<String>, limit: impl Into<String>, pass: bool) -> Check {
    Check {
        name: name.into(),
        measured: measured.into(),
        limit: limit.into(),
        pass,
    }
}

pub fn run(args: VerifyArgs) -> Result<ExitCode> {
    let checks = match args.suite {
        Suite::Quadrature => quadrature(),
        Suite::Hermite => hermite()?,
        Suite::Residual => residuals()?,
        Suite::Symplectic => symplectic()?,
        Suite::Order => order()?,
        Suite::Energy1d => energy_1d(args.horizon)?,
        Suite::Energy2d => energy_2d(args.horizon)?,
        Suite::Interface => interface(args.horizon)?,
    };
    let w = checks.iter().map(|c| c.name.len()).max().unwrap_or(5).max(5);
    let m = checks.iter().map(|c| c.measured.len()).max().unwrap_or(8).max(8);
    let l = checks.iter().map(|c| c.limit.len()).max().unwrap_or(5).max(5);
    println!("{:<w$}  {:<m$}  {:<l$}  result", "check", "measured", "limit");
    for c in &checks {
        let verdict = if c.pass { "PASS" } else { "FAIL" };
        println!("{:<w$}  {:<m$}  {:<l$}  {verdict}", c.name, c.measured, c.limit);
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    println!("{} of {} checks passed", checks.len() - failed, checks.len());
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn quadrature() -> Vec<Check> {
    let mut out = Vec::new();
    for n in 1..=10 {
        let rule = QuadratureRule::tensor(&[n], &[(0.0, 1.0)]);
        let err = |deg: usize| (rule.integrate(|x| x[0].powi(deg as i32)) * (deg + 1) as f64 - 1.0).abs();
        let worst = (0..2 * n).map(err).fold(0.0, f64::max);
        out.push(check(
            format!("{n}-point exact through degree {}", 2 * n - 1),
            format!("{worst:.1e}"),
            "< 1e-13",
            worst < 1e-13,
        ));
        let above = err(2 * n);
        out.push(check(
            format!("{n}-point inexact at degree {}", 2 * n),
            format!("{above:.1e}"),
            "> 1e-13",
            above > 1e-13,
        ));
    }
    out
}

fn hermite() -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut out = Vec::new();
    for layout in [Layout::ode(1), Layout::ode(2), Layout::wave(1), Layout::wave(2)] {
        let basis = HermiteBasis::new(layout);
        let d = basis.axes();
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let lo: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let h: Vec<f64> = (0..d).map(|_| rng.gen_range(0.05..2.0)).collect();
            let nodes = cell_nodes(&lo, &h);
            let data: Vec<f64> = (0..basis.data_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let patch = fit_hermite(&nodes, &data, &basis)?;
            for (ni, x) in nodes.iter().enumerate() {
                let jet = eval_patch(&patch, x)?;
                for c in 0..layout.field_dim() {
                    worst = worst.max((jet.value(c) - data[data_index(&basis, ni, 0, c)]).abs());
                    for a in 0..d {
                        let pos = basis.masks().iter().position(|&m| m == 1 << a).unwrap_or(0);
                        let want = data[data_index(&basis, ni, pos, c)];
                        worst = worst.max((jet.d(a, c) - want).abs() / want.abs().max(1.0));
                    }
                }
            }
        }
        out.push(check(
            format!("node data, {} space / {} field", layout.spatial_dim(), layout.field_dim()),
            format!("{worst:.1e}"),
            "< 1e-9",
            worst < 1e-9,
        ));
    }
    Ok(out)
}

fn residuals() -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut out = Vec::new();
    for spatial in [1usize, 2] {
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let c2 = rng.gen_range(0.05..2.0);
            let modes = (0..3)
                .map(|_| PlaneWaveMode {
                    amplitude: rng.gen_range(-1.0..1.0),
                    k: (0..spatial).map(|_| rng.gen_range(-4.0..4.0)).collect(),
                    phase: rng.gen_range(0.0..6.3),
                })
                .collect();
            let wave = PlaneWave { c2, modes };
            let coord: Vec<f64> = (0..=spatial).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let jet = wave.jet(&coord);
            let r = if spatial == 1 {
                residual(&Wave1d { c2 }, &jet)?
            } else {
                residual(&Wave2d { c2 }, &jet)?
            };
            worst = worst.max(r[0].abs());
        }
        out.push(check(
            format!("{spatial}D plane-wave residual"),
            format!("{worst:.1e}"),
            "< 1e-10",
            worst < 1e-10,
        ));
    }
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let v: Vec<f64> = (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let (q1, q2, v1, v2, a1, a2) = (v[0], v[1], v[2], v[3], v[4], v[5]);
        let jet = Jet {
            layout: DoublePendulum.layout(),
            first: vec![q1, q2, v1, v2],
            second: Some(vec![a1, a2]),
            coord: vec![0.0],
        };
        let r = residual(&DoublePendulum, &jet)?;
        let (s, c) = (q1 - q2).sin_cos();
        let want = [
            -(2.0 * a1 + a2 * c + v2 * v2 * s + 2.0 * q1.sin()),
            -(a2 + a1 * c - v1 * v1 * s + q2.sin()),
        ];
        for i in 0..2 {
            worst = worst.max((r[i] - want[i]).abs() / want[i].abs().max(1.0));
        }
    }
    out.push(check(
        "double pendulum vs equations of motion",
        format!("{worst:.1e}"),
        "< 1e-9",
        worst < 1e-9,
    ));
    Ok(out)
}

fn symplectic() -> Result<Vec<Check>> {
    let s = scenarios::double_pendulum();
    let state = s.initial_state(DoublePendulum.layout())?;
    let full = check_symplecticity(&DoublePendulum, &state, &s.integrator)?;
    let mut one = s.integrator.clone();
    one.rounds = 1;
    let truncated = check_symplecticity(&DoublePendulum, &state, &one)?;
    let ratio = truncated.deviation / full.deviation;
    Ok(vec![
        check(
            format!("deviation, {} rounds", s.integrator.rounds),
            format!("{:.2e}", full.deviation),
            "< 1e-5",
            full.deviation < 1e-5 && !full.inconclusive,
        ),
        check(
            "deviation, 1 round",
            format!("{:.2e}", truncated.deviation),
            "",
            true,
        ),
        check("truncation ratio", format!("{ratio:.1}"), ">= 10", ratio >= 10.0),
    ])
}

fn order() -> Result<Vec<Check>> {
    let t_end: f64 = 2.0;
    let s = scenarios::double_pendulum();
    let sys = LagrangianOde { density: DoublePendulum };
    let fine: f64 = 1e-5;
    let mut reference = s.initial_state(DoublePendulum.layout())?.gamma;
    for k in 0..(t_end / fine).round() as usize {
        reference = glrk_step(&sys, k as f64 * fine, &reference, fine)?;
    }
    let dts = [0.04, 0.02, 0.01];
    let mut out = Vec::new();
    let mut logs = Vec::new();
    for dt in dts {
        let mut sc = s.clone();
        sc.integrator.dt = dt;
        let mut elm = sc.integrator()?;
        for _ in 0..(t_end / dt).round() as usize {
            elm.step()?;
        }
        let err = elm
            .state()
            .gamma
            .iter()
            .zip(&reference)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        logs.push((dt.ln(), err.ln()));
        out.push(check(format!("global error, dt = {dt}"), format!("{err:.3e}"), "", true));
    }
    let n = logs.len() as f64;
    let xm = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let slope = logs.iter().map(|(x, y)| (x - xm) * (y - ym)).sum::<f64>()
        / logs.iter().map(|(x, _)| (x - xm).powi(2)).sum::<f64>();
    out.push(check("order", format!("{slope:.2}"), "4.0 ± 0.3", (slope - 4.0).abs() <= 0.3));
    Ok(out)
}

fn field_drift(s: &Scenario) -> Result<f64> {
    let density = s.build_density()?;
    let mut elm = s.integrator()?;
    elm.set_error_tracking(false);
    let fe = FieldEnergy::new(elm.layout(), &s.grid)?;
    let e0 = fe.energy(&density, elm.state());
    let mut worst: f64 = 0.0;
    for _ in 0..s.steps() {
        elm.step()?;
        worst = worst.max(((fe.energy(&density, elm.state()) - e0) / e0).abs());
    }
    Ok(worst)
}

fn energy_1d(horizon: Option<f64>) -> Result<Vec<Check>> {
    let mut drifts = Vec::new();
    let mut out = Vec::new();
    for n in [51, 31, 21] {
        let mut s = scenarios::wave_1d(n, None);
        if let Some(h) = horizon {
            s.horizon = h;
        }
        let d = field_drift(&s)?;
        drifts.push(d);
        let limit = if n == 51 { "< 2%" } else { "" };
        out.push(check(
            format!("drift n = {n}, {} s", s.horizon),
            format!("{:.3}%", 100.0 * d),
            limit,
            n != 51 || d < 0.02,
        ));
    }
    out.push(check(
        "resolution ordering",
        format!("{:.2e} < {:.2e} < {:.2e}", drifts[0], drifts[1], drifts[2]),
        "increasing",
        drifts[0] < drifts[1] && drifts[1] < drifts[2],
    ));
    Ok(out)
}

fn energy_2d(horizon: Option<f64>) -> Result<Vec<Check>> {
    let mut s = scenarios::wave_2d();
    if let Some(h) = horizon {
        s.horizon = h;
    }
    let density = s.build_density()?;
    let reference = s.reference(&density)?;
    let mut elm = s.integrator()?;
    elm.set_error_tracking(false);
    let fe = FieldEnergy::new(elm.layout(), &s.grid)?;
    let e0 = fe.energy(&density, elm.state());
    let mut drift: f64 = 0.0;
    let mut boundary: f64 = 0.0;
    for _ in 0..s.steps() {
        elm.step()?;
        let st = elm.state();
        drift = drift.max(((fe.energy(&density, st) - e0) / e0).abs());
        for (n, space) in elm.spaces().iter().enumerate() {
            boundary = boundary.max(space.residual(st.node(n), st.t));
        }
    }
    let mut out = vec![
        check(
            format!("energy drift, {} s", s.horizon),
            format!("{:.2}%", 100.0 * drift),
            "< 5%",
            drift < 0.05,
        ),
        check("Dirichlet residual", format!("{boundary:.1e}"), "< 1e-12", boundary < 1e-12),
    ];
    if let Some(r) = reference {
        let st = elm.state();
        let l2 = relative_l2(&st.values(0), &r.nodal(&s.grid, st.t))?;
        out.push(check("relative L² vs eigenmodes", format!("{l2:.3}"), "< 0.3", l2 < 0.3));
    }
    Ok(out)
}

fn interface(horizon: Option<f64>) -> Result<Vec<Check>> {
    let mut s = scenarios::interface();
    if let Some(h) = horizon {
        s.horizon = h;
    }
    let ReferenceSpec::Interface { measure_at, .. } = s.reference else {
        anyhow::bail!("interface preset lost its reference");
    };
    let density = s.build_density()?;
    let mut elm = s.integrator()?;
    elm.set_error_tracking(false);
    let fe = FieldEnergy::new(elm.layout(), &s.grid)?;
    let e0 = fe.energy(&density, elm.state());
    let mut drift: f64 = 0.0;
    let mut split = None;
    for _ in 0..s.steps() {
        elm.step()?;
        drift = drift.max(((fe.energy(&density, elm.state()) - e0) / e0).abs());
        if split.is_none() && elm.state().t >= measure_at - 1e-9 {
            split = Some(s.interface_split(&density, elm.state())?);
        }
    }
    let mut out = vec![check(
        format!("energy drift, {} s", s.horizon),
        format!("{:.3}%", 100.0 * drift),
        "< 2%",
        drift < 0.02,
    )];
    if let Some(split) = split {
        let oracle = s.interface_oracle()?;
        let err = ((split.reflected - oracle.reflected) / oracle.reflected).abs();
        out.push(check(
            format!("reflected fraction at t = {measure_at}"),
            format!("{:.4} (oracle {:.4})", split.reflected, oracle.reflected),
            "within 5%",
            err < 0.05,
        ));
        let err = ((split.transmitted - oracle.transmitted) / oracle.transmitted).abs();
        out.push(check(
            "transmitted fraction",
            format!("{:.4} (oracle {:.4})", split.transmitted, oracle.transmitted),
            "within 5%",
            err < 0.05,
        ));
    }
    Ok(out)
}
