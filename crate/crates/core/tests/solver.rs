use std::sync::Arc;

use mvsde::coefficients::{CustomCoefficients, Example5Family, Functional, MeasureMap, Nonlinearity};
use mvsde::monotone::{BuiltinOperator, MonotoneOperator};
use mvsde::noise::NoiseSource;
use mvsde::path::{SegmentBuf, TimeGrid, Trajectory};
use mvsde::presets::Preset;
use mvsde::solver::*;
use mvsde::{Error, Execution};

fn linear(c0: f64, c1: f64, c2: f64) -> Functional {
    Functional {
        c0,
        c1,
        c2,
        ..Functional::default()
    }
}

fn family(f: Functional, g: Functional) -> Example5Family {
    Example5Family::new(f, g, MeasureMap::default())
}

fn config(grid: TimeGrid, op: BuiltinOperator, c: Example5Family, xi: f64) -> SimConfig {
    SimConfig::new(grid, Arc::new(op), Arc::new(c), SegmentBuf::constant(&[xi], &grid)).unwrap()
}

fn zero_op() -> BuiltinOperator {
    BuiltinOperator::Zero { dim: 1 }
}

fn half_line() -> BuiltinOperator {
    BuiltinOperator::nonnegative_half_line()
}

fn brownian() -> Example5Family {
    family(Functional::default(), Functional::constant(1.0))
}

fn tanh_reflected() -> SimConfig {
    Preset::Example5TanhReflected.problem().sim_config().unwrap()
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[test]
fn no_dynamics_keeps_initial_value() {
    let g = TimeGrid::from_lengths(0.1, 0.5, 2.0).unwrap();
    let xi = SegmentBuf::from_fn(1, &g, |t| vec![1.0 + t]);
    let cfg = SimConfig::new(
        g,
        Arc::new(zero_op()),
        Arc::new(family(Functional::default(), Functional::default())),
        xi,
    )
    .unwrap();
    let b = simulate_perturbed(&cfg).unwrap();
    for k in 0..=g.n_steps() {
        assert_eq!(b.particles[0].at_step(k), &[1.0]);
    }
    assert!(b.noise.is_none());
}

#[test]
fn brownian_terminal_variance() {
    let g = TimeGrid::from_lengths(0.01, 0.01, 1.0).unwrap();
    let n = 10_000;
    let cfg = config(g, zero_op(), brownian(), 0.0)
        .with_particles(n)
        .with_epsilon(1.0)
        .with_seed(11);
    let b = simulate_perturbed(&cfg).unwrap();
    let x: Vec<f64> = b.particles.iter().map(|p| p.terminal()[0]).collect();
    let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
    let (var, sd) = mean_sd(&sq);
    let se = sd / (n as f64).sqrt();
    assert!((var - 1.0).abs() < 3.0 * se, "var {var} se {se}");
}

#[test]
fn reflected_brownian_mean_modulus() {
    // projected Euler has an O(√h) weak bias at the boundary; a fine step keeps
    // it well inside the sampling error here
    let g = TimeGrid::from_lengths(1e-4, 1e-4, 1.0).unwrap();
    let n = 2000;
    let cfg = config(g, half_line(), brownian(), 0.0)
        .with_particles(n)
        .with_epsilon(1.0)
        .with_seed(12);
    let b = simulate_perturbed(&cfg).unwrap();
    let x: Vec<f64> = b.particles.iter().map(|p| p.terminal()[0].abs()).collect();
    let (m, sd) = mean_sd(&x);
    let se = sd / (n as f64).sqrt();
    let target = (2.0 / std::f64::consts::PI).sqrt();
    assert!((m - target).abs() < 3.0 * se, "mean {m} se {se}");
}

#[test]
fn zero_control_matches_perturbed_run() {
    let cfg = tanh_reflected().with_particles(6).with_epsilon(0.3).with_seed(5);
    let free = simulate_perturbed(&cfg).unwrap();
    let ctrl = simulate_controlled(&cfg, &Control::zeros(&cfg.grid, 1)).unwrap();
    assert_eq!(free.particles, ctrl.particles);
    assert_eq!(free.k_processes, ctrl.k_processes);

    let indep = cfg.clone().with_companion(CompanionNoise::Independent);
    let other = simulate_controlled(&indep, &Control::zeros(&cfg.grid, 1)).unwrap();
    assert_ne!(free.particles, other.particles);
}

#[test]
fn constant_control_integrates_exactly() {
    let g = TimeGrid::from_lengths(0.01, 0.1, 1.0).unwrap();
    let cfg = config(g, zero_op(), brownian(), 0.4);
    let c = 1.5;
    let b = simulate_controlled(&cfg, &Control::constant(&g, &[c])).unwrap();
    for k in 0..=g.n_steps() {
        let t = k as f64 * g.h();
        assert!((b.particles[0].at_step(k)[0] - (0.4 + c * t)).abs() < 1e-12);
    }
}

#[test]
fn controlled_reproduces_deterministic_limit() {
    let cfg = tanh_reflected();
    let x0 = solve_deterministic_limit(&cfg).unwrap();
    let b = simulate_controlled(&cfg, &Control::zeros(&cfg.grid, 1)).unwrap();
    assert_eq!(b.particles[0], x0.path);
}

#[test]
fn control_shape_is_checked() {
    let cfg = tanh_reflected();
    let g2 = cfg.grid.refined();
    assert!(matches!(
        simulate_controlled(&cfg, &Control::zeros(&g2, 1)),
        Err(Error::GridMismatch(_))
    ));
}

#[test]
fn exponential_decay_recursion() {
    let h = 0.01;
    let g = TimeGrid::from_lengths(h, h, 1.0).unwrap();
    let cfg = config(g, zero_op(), family(linear(0.0, -1.0, 0.0), Functional::default()), 1.0);
    let x = solve_deterministic_limit(&cfg).unwrap();
    let exact_scheme = (1.0 - h).powi(100);
    assert!((x.path.terminal()[0] - exact_scheme).abs() < 1e-13);
    assert!((x.path.terminal()[0] - (-1.0f64).exp()).abs() < h);
}

#[test]
fn delay_equation_method_of_steps() {
    for h in [1e-2, 1e-3] {
        let p = Preset::DelayLinear.problem().with_step(h).unwrap();
        let x = solve_deterministic_limit(&p.sim_config().unwrap()).unwrap();
        let g = p.grid;
        let at = |t: f64| x.path.at_step((t / g.h()).round() as usize)[0];
        assert!(at(1.0).abs() <= 5.0 * h, "{}", at(1.0));
        assert!((at(2.0) + 0.5).abs() <= 5.0 * h, "{}", at(2.0));
        assert_eq!(x.k_variation, 0.0);
    }
}

#[test]
fn reflection_absorbs_constant_push() {
    let g = TimeGrid::from_lengths(0.01, 0.1, 2.0).unwrap();
    let cfg = config(
        g,
        half_line(),
        family(Functional::constant(-1.0), Functional::default()),
        0.0,
    );
    let x = solve_deterministic_limit(&cfg).unwrap();
    assert!(x.path.values().iter().all(|&v| v == 0.0));
    assert!((x.k_variation - 2.0).abs() < 1e-10);
    assert!((x.k.terminal()[0] + 2.0).abs() < 1e-10);
    assert_eq!(x.k.at_step(0), &[0.0]);
}

#[test]
fn skeleton_examples() {
    let cfg = tanh_reflected();
    let x0 = solve_deterministic_limit(&cfg).unwrap();
    let s = solve_skeleton(&cfg, &Control::zeros(&cfg.grid, 1), &x0.path).unwrap();
    assert_eq!(s.path, x0.path);

    let g = TimeGrid::from_lengths(0.01, 0.1, 1.0).unwrap();
    let free = config(g, zero_op(), brownian(), 0.0);
    let x0 = solve_deterministic_limit(&free).unwrap();
    let s = solve_skeleton(&free, &Control::constant(&g, &[1.0]), &x0.path).unwrap();
    for k in 0..=g.n_steps() {
        assert!((s.path.at_step(k)[0] - k as f64 * g.h()).abs() < 1e-12);
    }

    let refl = config(g, half_line(), brownian(), 0.0);
    let x0 = solve_deterministic_limit(&refl).unwrap();
    let s = solve_skeleton(&refl, &Control::constant(&g, &[-1.0]), &x0.path).unwrap();
    assert!(s.path.values().iter().all(|&v| v == 0.0));
}

#[test]
fn mdp_linear_case_matches_direct_subtraction() {
    let g = TimeGrid::from_lengths(0.01, 0.2, 1.0).unwrap();
    let c = Example5Family::new(
        Functional {
            c0: 0.3,
            c1: -0.7,
            c2: 0.2,
            c3: 0.4,
            ..Functional::default()
        },
        linear(1.0, 0.2, 0.0),
        MeasureMap { alpha: 0.3, beta: 0.1 },
    );
    let cfg = config(g, zero_op(), c, 0.5)
        .with_particles(8)
        .with_epsilon(0.04)
        .with_seed(3);
    let x0 = solve_deterministic_limit(&cfg).unwrap();
    let xe = simulate_perturbed(&cfg).unwrap();
    let m = simulate_mdp_with_scale(&cfg, &x0.path, 1.0, None).unwrap();
    for (p, q) in xe.particles.iter().zip(&m.particles) {
        let diff = p.difference(&x0.path).unwrap();
        assert!(diff.sup_distance(q).unwrap() < 1e-10);
    }
}

#[test]
fn mdp_zero_control_matches_uncontrolled() {
    let cfg = tanh_reflected().with_particles(5).with_epsilon(1e-2).with_seed(9);
    let x0 = solve_deterministic_limit(&cfg).unwrap();
    let a = simulate_mdp_deviation(&cfg, &x0.path, None).unwrap();
    let b = simulate_mdp_deviation(&cfg, &x0.path, Some(&Control::zeros(&cfg.grid, 1))).unwrap();
    assert_eq!(a.particles, b.particles);
    // M̃ starts at 0 on the history
    assert!(a.particles[0].segment_at(0).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn mdp_requires_zero_in_a_of_zero() {
    let g = TimeGrid::from_lengths(0.1, 0.1, 1.0).unwrap();
    let op = BuiltinOperator::Box {
        lower: vec![1.0],
        upper: vec![2.0],
    };
    let cfg = config(g, op, brownian(), 1.5).with_epsilon(0.1);
    let x0 = solve_deterministic_limit(&cfg).unwrap();
    assert!(matches!(
        simulate_mdp_deviation(&cfg, &x0.path, None),
        Err(Error::Precondition(_))
    ));
    assert!(matches!(simulate_clt_pair(&cfg, &x0.path), Err(Error::Precondition(_))));
}

#[test]
fn mdp_skeleton_examples() {
    let cfg = tanh_reflected();
    let x0 = solve_deterministic_limit(&cfg).unwrap();
    let m = solve_mdp_skeleton(&cfg, &Control::zeros(&cfg.grid, 1), &x0.path).unwrap();
    assert!(m.path.values().iter().all(|&v| v == 0.0));

    let beta = 0.8;
    let mut errs = Vec::new();
    for h in [1e-2, 5e-3] {
        let g = TimeGrid::from_lengths(h, 0.5, 1.0).unwrap();
        let c = config(
            g,
            zero_op(),
            family(linear(0.0, beta, 0.0), Functional::constant(1.0)),
            0.7,
        );
        let x0 = solve_deterministic_limit(&c).unwrap();
        let m = solve_mdp_skeleton(&c, &Control::constant(&g, &[1.0]), &x0.path).unwrap();
        let err = (0..=g.n_steps())
            .map(|k| {
                let t = k as f64 * h;
                (m.path.at_step(k)[0] - ((beta * t).exp() - 1.0) / beta).abs()
            })
            .fold(0.0, f64::max);
        assert!(err < 2.0 * h, "{err}");
        errs.push(err);
    }
    assert!(errs[0] / errs[1] > 1.8);

    let g = TimeGrid::from_lengths(0.01, 0.1, 1.0).unwrap();
    let refl = config(g, half_line(), brownian(), 0.0);
    let x0 = solve_deterministic_limit(&refl).unwrap();
    let m = solve_mdp_skeleton(&refl, &Control::constant(&g, &[-1.0]), &x0.path).unwrap();
    assert!(m.path.values().iter().all(|&v| v == 0.0));
}

#[test]
fn clt_pair_degenerate_cases() {
    let g = TimeGrid::from_lengths(0.01, 0.1, 1.0).unwrap();
    let quiet = config(
        g,
        half_line(),
        family(linear(0.3, -1.0, 0.0), Functional::default()),
        0.0,
    )
    .with_particles(4)
    .with_epsilon(0.1);
    let x0 = solve_deterministic_limit(&quiet).unwrap();
    let (ze, z) = simulate_clt_pair(&quiet, &x0.path).unwrap();
    for b in [&ze, &z] {
        assert!(b.particles.iter().all(|p| p.values().iter().all(|&v| v == 0.0)));
    }

    let bm = config(g, zero_op(), brownian(), 0.0)
        .with_particles(16)
        .with_epsilon(0.05)
        .with_seed(4);
    let x0 = solve_deterministic_limit(&bm).unwrap();
    let (ze, z) = simulate_clt_pair(&bm, &x0.path).unwrap();
    assert_eq!(ze.particles, z.particles);
    assert!(ze.particles[0].terminal()[0] != 0.0);
}

#[test]
fn clt_limit_uses_finite_difference_fallback() {
    // b(ζ, μ) = tanh(ζ(0)) + mean of atom heads, without closed-form derivatives
    let g = TimeGrid::from_lengths(0.02, 0.1, 0.5).unwrap();
    let custom = CustomCoefficients::new(
        1,
        1,
        |z, mu, out| {
            let mean = mu.atoms().iter().map(|a| a.head()[0]).sum::<f64>() / mu.len() as f64;
            out[0] = z.head()[0].tanh() - 0.5 * mean;
        },
        |_, _, out| out[0] = 1.0,
    );
    let cfg = SimConfig::new(
        g,
        Arc::new(zero_op()),
        Arc::new(custom),
        SegmentBuf::constant(&[0.3], &g),
    )
    .unwrap()
    .with_particles(4)
    .with_epsilon(1e-6)
    .with_seed(2);
    let x0 = solve_deterministic_limit(&cfg).unwrap();
    let (ze, z) = simulate_clt_pair(&cfg, &x0.path).unwrap();
    for (a, b) in ze.particles.iter().zip(&z.particles) {
        assert!(a.sup_distance(b).unwrap() < 1e-2);
    }
}

#[test]
fn resolvent_keeps_every_node_in_domain() {
    let op = BuiltinOperator::Box {
        lower: vec![0.0],
        upper: vec![0.5],
    };
    let p = Preset::Example5TanhReflected.problem();
    let cfg = SimConfig::new(p.grid, Arc::new(op), Arc::new(p.coefficients), p.initial)
        .unwrap()
        .with_particles(20)
        .with_epsilon(0.5)
        .with_seed(8);
    let b = simulate_perturbed(&cfg).unwrap();
    for t in &b.particles {
        assert!(t.values().iter().all(|&v| (0.0..=0.5).contains(&v)));
    }
    for (i, kp) in b.k_processes.iter().enumerate() {
        assert_eq!(kp.at_step(0), &[0.0]);
        let total: f64 = (0..cfg.grid.n_steps()).map(|k| b.k_increment(i, k)[0].abs()).sum();
        assert!((total - b.k_variation[i]).abs() < 1e-9);
    }
}

#[test]
fn discrete_pairing_is_nonnegative() {
    let base = tanh_reflected().with_particles(10).with_epsilon(0.5).with_seed(21);
    let other = SimConfig {
        initial: SegmentBuf::constant(&[1.3], &base.grid),
        ..base.clone()
    };
    let a = simulate_perturbed(&base).unwrap();
    let b = simulate_perturbed(&other).unwrap();
    let mut min: f64 = f64::INFINITY;
    for i in 0..10 {
        for k in 0..base.grid.n_steps() {
            let dx = a.particles[i].at_step(k + 1)[0] - b.particles[i].at_step(k + 1)[0];
            let dk = a.k_increment(i, k)[0] - b.k_increment(i, k)[0];
            min = min.min(dx * dk);
        }
    }
    assert!(min >= -1e-10, "{min}");
}

#[test]
fn zero_operator_is_euler_maruyama() {
    let p = Preset::Example5TanhReflected.problem();
    let c = p.coefficients.clone();
    let cfg = SimConfig::new(p.grid, Arc::new(zero_op()), Arc::new(c.clone()), p.initial.clone())
        .unwrap()
        .with_particles(1)
        .with_epsilon(0.2)
        .with_seed(17);
    let b = simulate_perturbed(&cfg).unwrap();
    assert!(b.k_variation[0] == 0.0);

    // independent explicit recursion
    let g = p.grid;
    let h = g.h();
    let noise = NoiseSource::new(17, 1);
    let mut x = p.initial.data().to_vec();
    for k in 0..g.n_steps() {
        let seg = mvsde::path::Segment::new(1, h, &x[k..k + g.n_history() + 1]);
        let mu = mvsde::measure::EmpiricalMeasure::dirac(seg);
        let bb = mvsde::coefficients::eval_b(&c, &seg, &mu).unwrap()[0];
        let ss = mvsde::coefficients::eval_sigma(&c, &seg, &mu).unwrap()[0];
        let mut dw = [0.0];
        noise.brownian_increment(0, k as u64, h, &mut dw);
        let next = x[k + g.n_history()] + (h * bb + (0.2f64.sqrt() * ss) * dw[0]);
        x.push(next);
    }
    assert_eq!(b.particles[0].values(), x.as_slice());
}

#[test]
fn seed_determinism_and_schedule_independence() {
    let cfg = tanh_reflected().with_particles(32).with_epsilon(0.1).with_seed(99);
    let a = simulate_perturbed(&cfg).unwrap();
    let b = simulate_perturbed(&cfg).unwrap();
    assert_eq!(a, b);
    let s = simulate_perturbed(&cfg.clone().with_execution(Execution::Sequential)).unwrap();
    assert_eq!(a, s);
    let c = simulate_perturbed(&cfg.clone().with_seed(100)).unwrap();
    assert_ne!(a.particles, c.particles);

    let x0 = solve_deterministic_limit(&cfg).unwrap();
    let (p1, q1) = simulate_clt_pair(&cfg, &x0.path).unwrap();
    let (p2, q2) = simulate_clt_pair(&cfg.clone().with_execution(Execution::Sequential), &x0.path).unwrap();
    assert_eq!((p1, q1), (p2, q2));
}

#[test]
fn grid_refinement_is_first_order() {
    let err = |h: f64| {
        let g = TimeGrid::from_lengths(h, h, 1.0).unwrap();
        let cfg = config(g, zero_op(), family(linear(0.0, -1.0, 0.0), Functional::default()), 1.0);
        (solve_deterministic_limit(&cfg).unwrap().path.terminal()[0] - (-1.0f64).exp()).abs()
    };
    let (e1, e2) = (err(0.02), err(0.01));
    assert!(e1 / e2 > 1.8, "{e1} {e2}");

    let delay = |h: f64| {
        let p = Preset::DelayLinear.problem().with_step(h).unwrap();
        let x = solve_deterministic_limit(&p.sim_config().unwrap()).unwrap();
        // exact: x(2) = 1 - 2 + 1/2 = -0.5
        (x.path.terminal()[0] + 0.5).abs()
    };
    assert!(delay(0.02) / delay(0.01) > 1.8);
}

#[test]
fn invalid_configs_are_rejected() {
    let g = TimeGrid::from_lengths(0.1, 0.1, 1.0).unwrap();
    let outside = SimConfig::new(
        g,
        Arc::new(half_line()),
        Arc::new(brownian()),
        SegmentBuf::constant(&[-1.0], &g),
    );
    assert!(matches!(outside, Err(Error::Precondition(_))));
    let cfg = config(g, zero_op(), brownian(), 0.0).with_epsilon(-1.0);
    assert!(simulate_perturbed(&cfg).is_err());
    let op2: Arc<dyn MonotoneOperator> = Arc::new(BuiltinOperator::Zero { dim: 2 });
    assert!(SimConfig::new(g, op2, Arc::new(brownian()), SegmentBuf::constant(&[0.0], &g)).is_err());
    let x0 = Trajectory::from_fn(g.refined(), 1, |_| vec![0.0]);
    let cfg = config(g, zero_op(), brownian(), 0.0);
    assert!(matches!(
        solve_skeleton(&cfg, &Control::zeros(&g, 1), &x0),
        Err(Error::GridMismatch(_))
    ));
}

#[test]
fn non_finite_coefficients_raise_evaluation_error() {
    let g = TimeGrid::from_lengths(0.1, 0.1, 1.0).unwrap();
    let c = CustomCoefficients::new(
        1,
        1,
        |z, _, out| out[0] = (z.head()[0] - 0.25).sqrt(),
        |_, _, o| o[0] = 0.0,
    );
    let cfg = SimConfig::new(g, Arc::new(zero_op()), Arc::new(c), SegmentBuf::constant(&[0.2], &g)).unwrap();
    let r = solve_deterministic_limit(&cfg);
    assert!(matches!(r, Err(Error::CoefficientEvaluation { .. })), "{r:?}");
    let ok = Example5Family::new(
        Functional {
            s: Nonlinearity::Tanh,
            ..Functional::default()
        },
        Functional::default(),
        MeasureMap::default(),
    );
    assert!(SimConfig::new(g, Arc::new(zero_op()), Arc::new(ok), SegmentBuf::constant(&[0.2], &g)).is_ok());
}
