use std::time::{Duration, Instant};

use elm_core::baselines::{fd4_semidiscretize, glrk_step};
use elm_core::grid::BoundaryCondition;
use elm_core::integrator::{rollout, GuessMode, StepStats};
use elm_core::scenarios;
use elm_core::{FieldState, Integrator, Scenario, Wave1d};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn jacobi_round_order_does_not_matter() {
    let mut s = scenarios::wave_1d(31, None);
    s.integrator.rounds = 3;
    let mut elm = s.integrator().unwrap();
    elm.step().unwrap();
    let guess = elm.guess().unwrap();
    let natural = elm.jacobi_sweep(&guess).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        let mut order: Vec<usize> = (0..s.grid.node_count()).collect();
        order.shuffle(&mut rng);
        let permuted = elm.jacobi_sweep_with_order(&guess, &order).unwrap();
        assert_eq!(natural.gamma, permuted.gamma);
    }
}

#[test]
fn rollouts_are_deterministic() {
    let run = || {
        let mut elm = scenarios::double_pendulum().integrator().unwrap();
        for _ in 0..200 {
            elm.step().unwrap();
        }
        elm.state().clone()
    };
    assert_eq!(run(), run());
}

#[test]
fn extrapolated_guess_saves_newton_rounds() {
    let count = |mode: GuessMode| -> usize {
        let mut s = scenarios::double_pendulum();
        s.integrator.guess = mode;
        let mut elm = s.integrator().unwrap();
        let mut total = 0;
        for _ in 0..100 {
            total += elm.rounds_to_converge(1e-18, 50).unwrap().expect("converges");
            elm.step().unwrap();
        }
        total
    };
    let copy = count(GuessMode::Copy);
    let linear = count(GuessMode::Linear);
    eprintln!("rounds to J < 1e-18 over 100 steps: copy {copy}, linear {linear}");
    assert!(linear < copy);
}

#[test]
fn pendulum_step_conserves_energy() {
    let mut elm = scenarios::double_pendulum().integrator().unwrap();
    let e0 = elm.ode_energy().unwrap();
    elm.step().unwrap();
    let e1 = elm.ode_energy().unwrap();
    assert!(((e1 - e0) / e0).abs() < 1e-9);
}

#[test]
fn wave_step_matches_method_of_lines() {
    let s = scenarios::wave_1d(51, Some(0.01));
    let mut elm = s.integrator().unwrap();
    elm.step().unwrap();
    let sys = fd4_semidiscretize(Wave1d { c2: 0.05 }, &s.grid.axes[0]).unwrap();
    let mut y: Vec<f64> = sys.xs.iter().map(|&x| s.initial.value(&[x])).collect();
    y.extend(sys.xs.iter().map(|&x| s.initial.derivative(1, &[x])));
    // Many small GLRK steps so the reference time error is negligible.
    for k in 0..10 {
        y = glrk_step(&sys, k as f64 * 1e-3, &y, 1e-3).unwrap();
    }
    let ours = elm.state().values(0);
    let diff = ours.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-4, "{diff}");
}

fn per_step(s: &Scenario) -> Duration {
    let mut elm = s.integrator().unwrap();
    elm.set_error_tracking(false);
    elm.step().unwrap();
    (0..3)
        .map(|_| {
            let start = Instant::now();
            for _ in 0..20 {
                elm.step().unwrap();
            }
            start.elapsed() / 20
        })
        .min()
        .unwrap()
}

#[test]
fn work_scales_linearly_with_nodes() {
    let mut small = scenarios::wave_1d(51, None);
    let mut large = scenarios::wave_1d(101, None);
    // Same step and round count; only the node count changes.
    large.integrator = small.integrator.clone();
    small.integrator.rounds = 5;
    large.integrator.rounds = 5;
    let a = per_step(&small);
    let b = per_step(&large);
    let ratio = b.as_secs_f64() / a.as_secs_f64();
    eprintln!("per-step time 51 nodes {a:?}, 101 nodes {b:?}, ratio {ratio:.2}");
    assert!(ratio <= 2.2);
}

#[test]
fn dirichlet_values_are_never_touched() {
    let mut s = scenarios::wave_2d();
    s.grid.axes[0].nodes = 11;
    s.grid.axes[1].nodes = 11;
    s.initial = scenarios::InitialCondition::Gaussian {
        amplitude: 1.0,
        center: vec![0.0, 0.0],
        width: 0.3,
        velocity: 0.0,
    };
    let mut elm = s.integrator().unwrap();
    for _ in 0..20 {
        elm.step().unwrap();
        let st = elm.state();
        for n in 0..s.grid.node_count() {
            let idx = s.grid.node_index(n);
            if idx.iter().zip(&s.grid.axes).any(|(&i, a)| i == 0 || i + 1 == a.nodes) {
                assert_eq!(st.node(n)[0], 0.0);
                assert_eq!(st.node(n)[1], 0.0);
            }
        }
    }
}

#[test]
fn driven_and_mur_faces_hold_every_step() {
    let mut s = scenarios::double_slit();
    s.grid.axes[0].nodes = 21;
    s.grid.axes[1].nodes = 21;
    let BoundaryCondition::Driven { amplitude, frequency } = s.grid.axes[0].low else {
        panic!("double slit drives its low x face");
    };
    let mut elm = s.integrator().unwrap();
    elm.set_error_tracking(false);
    for _ in 0..10 {
        elm.step().unwrap();
        let st = elm.state();
        let want = amplitude * (frequency * st.t).sin();
        for n in 0..s.grid.node_count() {
            if s.grid.node_index(n)[0] == 0 {
                assert!((st.node(n)[0] - want).abs() < 1e-12);
            }
            assert!(elm.spaces()[n].residual(st.node(n), st.t) < 1e-12);
        }
    }
}

#[test]
fn zero_field_stays_zero_under_dirichlet() {
    let mut s = scenarios::wave_2d();
    s.grid.axes[0].nodes = 9;
    s.grid.axes[1].nodes = 9;
    s.initial = scenarios::InitialCondition::Rest;
    let mut elm = s.integrator().unwrap();
    for _ in 0..5 {
        elm.step().unwrap();
    }
    assert!(elm.state().gamma.iter().all(|&v| v == 0.0));
}

#[test]
fn long_pendulum_rollout_emits_every_sample() {
    let s = scenarios::double_pendulum();
    let mut elm = s.integrator().unwrap();
    elm.set_error_tracking(false);
    let mut energies = Vec::new();
    // The initial state arrives with step 0 and is not counted.
    let mut sink = |st: &FieldState, stats: &StepStats| -> elm_core::Result<()> {
        if stats.step > 0 {
            energies.push(elm_core::integrator::ode_energy(&elm_core::DoublePendulum, st)?);
        }
        Ok(())
    };
    rollout(&mut elm, 50_000, &mut [&mut sink]).unwrap();
    assert_eq!(energies.len(), 50_000);
    assert!(energies.iter().all(|e| e.is_finite()));
}

#[test]
fn integrator_rejects_mismatched_state() {
    let s = scenarios::wave_1d(21, None);
    let density = s.build_density().unwrap();
    let bad = FieldState {
        t: 0.0,
        nd: 4,
        gamma: vec![0.0; 4 * 3],
    };
    assert!(Integrator::new(density, s.grid.clone(), s.integrator.clone(), bad).is_err());
}
