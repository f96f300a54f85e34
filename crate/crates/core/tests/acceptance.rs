//! End-to-end acceptance checks. Each test prints one `criterion N:` line.
//!
//! Run with `cargo test --release -p elm-core --test acceptance`; the long
//! double-slit run needs `-- --ignored`.

use std::io::Write;
use std::time::Instant;

use elm_core::analysis::{fringe_minima, nodal_energy_density, relative_l2, FieldEnergy};
use elm_core::baselines::{fd4_semidiscretize, glrk_step, Dopri, FixedMethod, LagrangianOde, OdeSystem};
use elm_core::hermite::{cell_nodes, data_index, eval_patch, fit_hermite, HermiteBasis};
use elm_core::integrator::check_symplecticity;
use elm_core::lagrangian::{estimate_wave_speed, DensitySpec};
use elm_core::mlp::{gauge_loss, sample_plane_waves, train, PlaneWave, PlaneWaveMode, TrainConfig};
use elm_core::patch::residual;
use elm_core::quadrature::QuadratureRule;
use elm_core::scenarios;
use elm_core::{DoublePendulum, Jet, LagrangianDensity, Layout, Wave1d, Wave2d};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: usize, pass: bool, detail: String) {
    // Written straight to the handle so the line survives test capture.
    let line = format!("criterion {n}: {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    std::io::stderr().lock().write_all(line.as_bytes()).unwrap();
    assert!(pass, "criterion {n} failed: {detail}");
}

fn rel_errors(es: &[f64]) -> Vec<f64> {
    let e0 = es[0];
    es.iter().map(|e| ((e - e0) / e0).abs()).collect()
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

#[test]
fn criterion_01_quadrature_exactness() {
    let mut exact = true;
    let mut fails_above = true;
    let mut worst: f64 = 0.0;
    for n in 1..=10 {
        let rule = QuadratureRule::tensor(&[n], &[(0.0, 1.0)]);
        for deg in 0..=2 * n {
            let got = rule.integrate(|x| x[0].powi(deg as i32));
            let rel = (got * (deg + 1) as f64 - 1.0).abs();
            if deg < 2 * n {
                worst = worst.max(rel);
                exact &= rel < 1e-13;
            } else {
                fails_above &= rel > 1e-13;
            }
        }
    }
    report(
        1,
        exact && fails_above,
        format!("worst exact-degree error {worst:.1e}, degree 2n detected: {fails_above}"),
    );
}

/// `Π x_a^{e_a}` differentiated `m_a` times along each axis.
fn monomial(e: &[usize], m: &[usize], x: &[f64]) -> f64 {
    let mut v = 1.0;
    for a in 0..e.len() {
        if m[a] > e[a] {
            return 0.0;
        }
        let fall: usize = (e[a] - m[a] + 1..=e[a]).product();
        v *= fall as f64 * x[a].powi((e[a] - m[a]) as i32);
    }
    v
}

#[test]
fn criterion_02_hermite_reproduction() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut node_err: f64 = 0.0;
    let mut span_err: f64 = 0.0;
    for layout in [Layout::ode(1), Layout::ode(2), Layout::wave(1), Layout::wave(2)] {
        let basis = HermiteBasis::new(layout);
        let d = basis.axes();
        let dq = layout.field_dim();
        for _ in 0..50 {
            let lo: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let h: Vec<f64> = (0..d).map(|_| rng.gen_range(0.05..2.0)).collect();
            let nodes = cell_nodes(&lo, &h);

            let data: Vec<f64> = (0..basis.data_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let patch = fit_hermite(&nodes, &data, &basis).unwrap();
            for (ni, x) in nodes.iter().enumerate() {
                let jet = eval_patch(&patch, x).unwrap();
                for (pos, &mask) in basis.masks().iter().enumerate() {
                    let axes: Vec<usize> = (0..d).filter(|a| mask >> a & 1 == 1).collect();
                    for c in 0..dq {
                        let got = match axes.as_slice() {
                            [] => jet.value(c),
                            [a] => jet.d(*a, c),
                            [a, b] => jet.dd(*a, *b, c).unwrap(),
                            _ => continue,
                        };
                        let want = data[data_index(&basis, ni, pos, c)];
                        node_err = node_err.max((got - want).abs() / want.abs().max(1.0));
                    }
                }
            }

            // Random member of the span: degree ≤ 3 along every axis.
            let exps: Vec<Vec<usize>> = (0..1usize << (2 * d))
                .map(|i| (0..d).map(|a| (i >> (2 * a)) & 3).collect())
                .collect();
            let coef: Vec<Vec<f64>> = (0..dq)
                .map(|_| exps.iter().map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let f = |c: usize, m: &[usize], x: &[f64]| -> f64 {
                exps.iter().zip(&coef[c]).map(|(e, k)| k * monomial(e, m, x)).sum()
            };
            let mut data = vec![0.0; basis.data_len()];
            for (ni, x) in nodes.iter().enumerate() {
                for (pos, &mask) in basis.masks().iter().enumerate() {
                    let m: Vec<usize> = (0..d).map(|a| mask >> a & 1).collect();
                    for c in 0..dq {
                        data[data_index(&basis, ni, pos, c)] = f(c, &m, x);
                    }
                }
            }
            let patch = fit_hermite(&nodes, &data, &basis).unwrap();
            for _ in 0..10 {
                let x: Vec<f64> = (0..d).map(|a| lo[a] + rng.gen_range(0.0..=1.0) * h[a]).collect();
                let jet = eval_patch(&patch, &x).unwrap();
                let scale = (0..dq).map(|c| f(c, &vec![0; d], &x).abs()).fold(1.0, f64::max);
                for c in 0..dq {
                    let mut err = (jet.value(c) - f(c, &vec![0; d], &x)).abs();
                    for a in 0..d {
                        let mut m = vec![0; d];
                        m[a] = 1;
                        err = err.max((jet.d(a, c) - f(c, &m, &x)).abs());
                        for b in 0..=a {
                            let mut m = vec![0; d];
                            m[a] += 1;
                            m[b] += 1;
                            err = err.max((jet.dd(a, b, c).unwrap() - f(c, &m, &x)).abs());
                        }
                    }
                    span_err = span_err.max(err / scale);
                }
            }
        }
    }
    report(
        2,
        node_err < 1e-9 && span_err < 1e-10,
        format!("node data {node_err:.1e}, span {span_err:.1e}"),
    );
}

#[test]
fn criterion_03_residual_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut wave_r: f64 = 0.0;
    for spatial in [1, 2] {
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
                residual(&Wave1d { c2 }, &jet).unwrap()
            } else {
                residual(&Wave2d { c2 }, &jet).unwrap()
            };
            wave_r = wave_r.max(r[0].abs());
        }
    }

    let mut eom_err: f64 = 0.0;
    let layout = DoublePendulum.layout();
    for _ in 0..100 {
        let q1 = rng.gen_range(-3.0..3.0);
        let q2 = rng.gen_range(-3.0..3.0);
        let v1 = rng.gen_range(-3.0..3.0);
        let v2 = rng.gen_range(-3.0..3.0);
        let a1 = rng.gen_range(-5.0..5.0);
        let a2 = rng.gen_range(-5.0..5.0);
        let jet = Jet {
            layout,
            first: vec![q1, q2, v1, v2],
            second: Some(vec![a1, a2]),
            coord: vec![rng.gen_range(0.0..10.0)],
        };
        let r = residual(&DoublePendulum, &jet).unwrap();
        let (s, c) = (q1 - q2).sin_cos();
        let want = [
            -(2.0 * a1 + a2 * c + v2 * v2 * s + 2.0 * q1.sin()),
            -(a2 + a1 * c - v1 * v1 * s + q2.sin()),
        ];
        for i in 0..2 {
            eom_err = eom_err.max((r[i] - want[i]).abs() / want[i].abs().max(1.0));
        }
    }
    report(
        3,
        wave_r < 1e-10 && eom_err < 1e-9,
        format!("plane-wave residual {wave_r:.1e}, pendulum EOM mismatch {eom_err:.1e}"),
    );
}

#[test]
fn criterion_04_machine_precision_convergence() {
    let scenario = scenarios::double_pendulum();
    let mut elm = scenario.integrator().unwrap();
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        worst = worst.max(elm.step().unwrap().error);
    }
    report(
        4,
        worst < 1e-20,
        format!("max J {worst:.1e} over 1000 steps in {:.1?}", start.elapsed()),
    );
}

#[test]
fn criterion_05_symplecticity() {
    let scenario = scenarios::double_pendulum();
    let state = scenario.initial_state(DoublePendulum.layout()).unwrap();
    let converged = check_symplecticity(&DoublePendulum, &state, &scenario.integrator).unwrap();
    let mut truncated_config = scenario.integrator.clone();
    truncated_config.rounds = 1;
    let truncated = check_symplecticity(&DoublePendulum, &state, &truncated_config).unwrap();
    let ratio = truncated.deviation / converged.deviation;
    report(
        5,
        converged.deviation < 1e-5 && !converged.inconclusive && ratio >= 10.0,
        format!(
            "deviation {:.1e} (J {:.1e}), one round {:.1e}, ratio {ratio:.0}",
            converged.deviation, converged.max_error, truncated.deviation
        ),
    );
}

#[test]
fn criterion_06_order_of_accuracy() {
    let t_end: f64 = 2.0;
    let scenario = scenarios::double_pendulum();
    let y0 = scenario.initial_state(DoublePendulum.layout()).unwrap().gamma;
    let sys = LagrangianOde { density: DoublePendulum };
    let fine = 1e-5;
    let mut reference = y0.clone();
    let n_fine = (t_end / fine).round() as usize;
    for k in 0..n_fine {
        reference = glrk_step(&sys, k as f64 * fine, &reference, fine).unwrap();
    }

    let dts = [0.04, 0.02, 0.01];
    let mut errors = Vec::new();
    for dt in dts {
        let mut s = scenario.clone();
        s.integrator.dt = dt;
        let mut elm = s.integrator().unwrap();
        for _ in 0..(t_end / dt).round() as usize {
            elm.step().unwrap();
        }
        let err = elm
            .state()
            .gamma
            .iter()
            .zip(&reference)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        errors.push(err);
    }
    let xs: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let xm = xs.iter().sum::<f64>() / 3.0;
    let ym = ys.iter().sum::<f64>() / 3.0;
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum::<f64>()
        / xs.iter().map(|x| (x - xm).powi(2)).sum::<f64>();
    report(
        6,
        (slope - 4.0).abs() <= 0.3,
        format!("slope {slope:.2}, errors {errors:?}"),
    );
}

#[test]
fn criterion_07_long_horizon_ode_energy() {
    let horizon: f64 = 1000.0;
    let dt: f64 = 0.02;
    let steps = (horizon / dt).round() as usize;
    let scenario = scenarios::double_pendulum();
    let y0 = scenario.initial_state(DoublePendulum.layout()).unwrap().gamma;
    let sys = LagrangianOde { density: DoublePendulum };

    let fixed = |m: FixedMethod| -> Vec<f64> {
        let mut y = y0.clone();
        let mut es = vec![sys.energy(&y).unwrap()];
        for k in 0..steps {
            y = m.step(&sys, k as f64 * dt, &y, dt).unwrap();
            es.push(sys.energy(&y).unwrap());
        }
        rel_errors(&es)
    };
    let rk4 = fixed(FixedMethod::Rk4);
    let midpoint = fixed(FixedMethod::Midpoint);
    let glrk = fixed(FixedMethod::Glrk);

    let mut dopri = Dopri::new(1e-6, dt);
    let mut y = y0.clone();
    let mut es = vec![sys.energy(&y).unwrap()];
    for k in 0..horizon as usize {
        y = dopri.advance(&sys, k as f64, &y, (k + 1) as f64).unwrap();
        es.push(sys.energy(&y).unwrap());
    }
    let dopri = rel_errors(&es);

    let mut elm = scenario.integrator().unwrap();
    let mut es = vec![elm.ode_energy().unwrap()];
    for _ in 0..steps {
        elm.step().unwrap();
        es.push(elm.ode_energy().unwrap());
    }
    let elm = rel_errors(&es);

    let n = elm.len();
    let first = max_of(&elm[..n / 10]);
    let last = max_of(&elm[n - n / 10..]);
    let elm_max = max_of(&elm);
    let fin = |v: &Vec<f64>| v[v.len() - 1];
    let bounded = elm_max < 1e-3 && last <= 3.0 * first;
    let rk4_ratio = fin(&rk4) / elm_max;
    let ordering = fin(&rk4) > fin(&dopri)
        && fin(&dopri) > fin(&midpoint)
        && fin(&midpoint) > fin(&glrk).max(fin(&elm));
    let glrk_matches = {
        let r = max_of(&glrk) / elm_max;
        (0.1..=10.0).contains(&r)
    };
    report(
        7,
        bounded && rk4_ratio >= 10.0 && ordering && glrk_matches,
        format!(
            "ELM max {elm_max:.2e} (deciles {first:.2e} → {last:.2e}); final drift RK4 {:.2e}, \
             DOPRI {:.2e}, midpoint {:.2e}, GLRK {:.2e}, ELM {:.2e}; RK4/ELM {rk4_ratio:.0}; ordering {ordering}",
            fin(&rk4),
            fin(&dopri),
            fin(&midpoint),
            fin(&glrk),
            fin(&elm)
        ),
    );
}

fn wave_1d_drift(nodes: usize, horizon: f64) -> f64 {
    let mut s = scenarios::wave_1d(nodes, None);
    s.horizon = horizon;
    let density = s.build_density().unwrap();
    let mut elm = s.integrator().unwrap();
    elm.set_error_tracking(false);
    let fe = FieldEnergy::new(elm.layout(), &s.grid).unwrap();
    let mut es = vec![fe.energy(&density, elm.state())];
    for _ in 0..s.steps() {
        elm.step().unwrap();
        es.push(fe.energy(&density, elm.state()));
    }
    max_of(&rel_errors(&es))
}

#[test]
fn criterion_08_wave_1d_energy() {
    let start = Instant::now();
    let d51 = wave_1d_drift(51, 1000.0);
    let d31 = wave_1d_drift(31, 1000.0);
    let d21 = wave_1d_drift(21, 1000.0);
    report(
        8,
        d51 < 0.02 && d51 < d31 && d31 < d21,
        format!(
            "drift n=51 {d51:.2e}, n=31 {d31:.2e}, n=21 {d21:.2e} in {:.0?}",
            start.elapsed()
        ),
    );
}

#[test]
fn criterion_09_baseline_agreement() {
    let s = scenarios::wave_1d(51, None);
    let dt = s.integrator.dt;
    let density = s.build_density().unwrap();
    let reference = s.reference(&density).unwrap().unwrap();
    let mut elm = s.integrator().unwrap();
    elm.set_error_tracking(false);

    let axis = &s.grid.axes[0];
    let sys = fd4_semidiscretize(Wave1d { c2: 0.05 }, axis).unwrap();
    let xs = sys.xs.clone();
    let mut y: Vec<f64> = xs.iter().map(|&x| s.initial.value(&[x])).collect();
    y.extend(xs.iter().map(|&x| s.initial.derivative(1, &[x])));

    let unique = axis.unique();
    let per_second = (1.0 / dt).round() as usize;
    let mut worst: f64 = 1.0;
    for k in 1..=100 * per_second {
        elm.step().unwrap();
        y = glrk_step(&sys, (k - 1) as f64 * dt, &y, dt).unwrap();
        if k % per_second != 0 || k < 10 * per_second {
            continue;
        }
        let t = k as f64 * dt;
        let exact: Vec<f64> = xs.iter().map(|&x| reference.value(t, &[x])).collect();
        let ours = &elm.state().values(0)[..unique];
        let e_elm = relative_l2(ours, &exact).unwrap();
        let e_fd = relative_l2(&y[..unique], &exact).unwrap();
        let r = e_elm / e_fd;
        worst = worst.max(r.max(1.0 / r));
    }
    report(
        9,
        worst <= 2.0,
        format!("worst ELM/FD4+GLRK L² ratio over 10–100 s {worst:.2}"),
    );
}

#[test]
fn criterion_10_wave_2d() {
    let start = Instant::now();
    let s = scenarios::wave_2d();
    let density = s.build_density().unwrap();
    let reference = s.reference(&density).unwrap().unwrap();
    let mut elm = s.integrator().unwrap();
    elm.set_error_tracking(false);
    let fe = FieldEnergy::new(elm.layout(), &s.grid).unwrap();
    let mut es = vec![fe.energy(&density, elm.state())];
    let mut invariant: f64 = 0.0;
    for _ in 0..s.steps() {
        elm.step().unwrap();
        es.push(fe.energy(&density, elm.state()));
        let st = elm.state();
        for (n, space) in elm.spaces().iter().enumerate() {
            invariant = invariant.max(space.residual(st.node(n), st.t));
        }
    }
    let drift = max_of(&rel_errors(&es));
    let st = elm.state();
    let l2 = relative_l2(&st.values(0), &reference.nodal(&s.grid, st.t)).unwrap();
    report(
        10,
        drift < 0.05 && l2 < 0.3 && invariant < 1e-12,
        format!(
            "drift {drift:.2e}, L² {l2:.3}, boundary residual {invariant:.1e} in {:.0?}",
            start.elapsed()
        ),
    );
}

#[test]
fn criterion_11_interface() {
    let s = scenarios::interface();
    let density = s.build_density().unwrap();
    let mut elm = s.integrator().unwrap();
    elm.set_error_tracking(false);
    let fe = FieldEnergy::new(elm.layout(), &s.grid).unwrap();
    let measure_at = match s.reference {
        scenarios::ReferenceSpec::Interface { measure_at, .. } => measure_at,
        _ => unreachable!("interface preset carries an interface reference"),
    };
    let mut es = vec![fe.energy(&density, elm.state())];
    let mut split = None;
    for _ in 0..s.steps() {
        elm.step().unwrap();
        es.push(fe.energy(&density, elm.state()));
        if split.is_none() && elm.state().t >= measure_at - 1e-9 {
            split = Some(s.interface_split(&density, elm.state()).unwrap());
        }
    }
    let drift = max_of(&rel_errors(&es));
    let split = split.unwrap();
    let oracle = s.interface_oracle().unwrap();
    let split_err = ((split.reflected - oracle.reflected) / oracle.reflected)
        .abs()
        .max(((split.transmitted - oracle.transmitted) / oracle.transmitted).abs());

    // Same medium on both sides of the blend against the plain density.
    let mut same = s.clone();
    let DensitySpec::Blend { left, .. } = &s.density else {
        unreachable!("interface preset uses a blend")
    };
    if let DensitySpec::Blend { right, .. } = &mut same.density {
        *right = left.clone();
    }
    same.horizon = 2.0;
    let mut plain = same.clone();
    plain.density = (**left).clone();
    let mut a = same.integrator().unwrap();
    let mut b = plain.integrator().unwrap();
    let mut identical: f64 = 0.0;
    for _ in 0..same.steps() {
        a.step().unwrap();
        b.step().unwrap();
        for (x, y) in a.state().gamma.iter().zip(&b.state().gamma) {
            identical = identical.max((x - y).abs());
        }
    }
    report(
        11,
        drift < 0.02 && identical < 1e-10 && split_err < 0.05,
        format!(
            "drift {drift:.2e}, identical blend {identical:.1e}, reflected {:.4} vs oracle {:.4} \
             (split error {:.1}%)",
            split.reflected,
            oracle.reflected,
            100.0 * split_err
        ),
    );
}

#[test]
fn criterion_12_learned_density() {
    let start = Instant::now();
    let config = TrainConfig::default();
    let samples = sample_plane_waves(config.samples, &config.waves, config.seed);
    let trained = train(&config, &samples).unwrap();
    let held_out = sample_plane_waves(500, &config.waves, config.seed + 1000);
    let loss = gauge_loss(&trained.density, &held_out).unwrap();
    let c2 = estimate_wave_speed(&trained.density).unwrap();
    let c2_err = (c2 - config.waves.c2).abs() / config.waves.c2;

    let density = std::sync::Arc::new(trained.density);
    let mut s = scenarios::wave_1d(21, None);
    s.horizon = 100.0;
    let mut elm = s.integrator_with(density.clone()).unwrap();
    elm.set_error_tracking(false);
    let fe = FieldEnergy::new(elm.layout(), &s.grid).unwrap();
    let mut es = vec![fe.energy(&density, elm.state())];
    let mut diverged = None;
    for _ in 0..s.steps() {
        if let Err(e) = elm.step() {
            diverged = Some(e.to_string());
            break;
        }
        es.push(fe.energy(&density, elm.state()));
    }
    let rel: Vec<f64> = es.iter().map(|e| (e - es[0]) / es[0]).collect();
    let drift = rel.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let turns = rel
        .windows(3)
        .filter(|w| (w[1] - w[0]) * (w[2] - w[1]) < 0.0)
        .count();
    let finite = rel.iter().all(|v| v.is_finite());
    report(
        12,
        loss < 1e-2 && c2_err < 0.1 && diverged.is_none() && finite && drift < 0.05 && turns >= 10,
        format!(
            "held-out loss {loss:.2e}, ĉ² {c2:.4} ({:.1}% off), rollout max |ΔE/E₀| {drift:.2e} \
             with {turns} turning points{}, {:.0?}",
            100.0 * c2_err,
            diverged.map(|e| format!(", diverged: {e}")).unwrap_or_default(),
            start.elapsed()
        ),
    );
}

#[test]
#[ignore = "runs for hours"]
fn criterion_13_double_slit() {
    let s = scenarios::double_slit();
    let density = s.build_density().unwrap();
    let mut elm = s.integrator().unwrap();
    elm.set_error_tracking(false);
    let observation = s.output.observation.clone().unwrap();
    let geometry = s.output.slits.clone().unwrap();
    let line = s.observation_nodes().unwrap();
    let mut sums = vec![0.0; line.len()];
    let mut invariant: f64 = 0.0;
    for _ in 0..s.steps() {
        elm.step().unwrap();
        let st = elm.state();
        for (n, space) in elm.spaces().iter().enumerate() {
            invariant = invariant.max(space.residual(st.node(n), st.t));
        }
        if st.t >= observation.average_from {
            for (sum, &n) in sums.iter_mut().zip(&line) {
                *sum += nodal_energy_density(&density, &s.grid, st, n);
            }
        }
    }
    let ys: Vec<f64> = line.iter().map(|&n| s.grid.node_coord(n)[1]).collect();
    let fringes = fringe_minima(&ys, &sums, &geometry);
    let mismatch = fringes.max_mismatch();
    report(
        13,
        mismatch < 0.1 && invariant < 1e-12,
        format!("fringe mismatch {mismatch:.3}, constraint residual {invariant:.1e}"),
    );
}
