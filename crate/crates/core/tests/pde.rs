use lvfront::pde::{
    discrete_linear_speed, make_initial, output_grid, simulate, stability_bound, step, FieldState,
    Grid, InitialCondition, Integrator, Scheme,
};
use lvfront::{Error, Exec, ModelParams};
use proptest::prelude::*;

fn params(d: f64, r: f64, a: f64, b: f64) -> ModelParams {
    ModelParams::new(d, r, a, b).unwrap()
}

fn uniform(grid: &Grid, u: f64, v: f64) -> FieldState {
    make_initial(
        grid,
        &InitialCondition::Custom {
            u: vec![u; grid.n],
            v: vec![v; grid.n],
        },
    )
    .unwrap()
}

/// Classical RK4 on the kinetic system with a tiny step.
fn kinetics(p: &ModelParams, mut u: f64, mut v: f64, t: f64) -> (f64, f64) {
    let f = |u: f64, v: f64| (p.r * u * (1.0 - u - p.a * v), v * (1.0 - v - p.b * u));
    let n = 200_000;
    let h = t / n as f64;
    for _ in 0..n {
        let k1 = f(u, v);
        let k2 = f(u + 0.5 * h * k1.0, v + 0.5 * h * k1.1);
        let k3 = f(u + 0.5 * h * k2.0, v + 0.5 * h * k2.1);
        let k4 = f(u + h * k3.0, v + h * k3.1);
        u += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        v += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
    }
    (u, v)
}

#[test]
fn uniform_state_follows_logistic_law() {
    let p = params(1.0, 1.0, 2.0, 3.0);
    let grid = Grid::with_spacing(-5.0, 5.0, 0.1).unwrap();
    let traj = simulate(
        &p,
        &grid,
        &uniform(&grid, 0.1, 0.0),
        &Scheme::default(),
        5.0,
        &[5.0],
        Exec::Sequential,
    )
    .unwrap();
    let exact = 1.0 / (1.0 + 9.0 * (-5.0f64).exp());
    let last = &traj.snapshots[0];
    assert!(last.u.iter().all(|u| (u - exact).abs() < 1e-9));
    assert!(last.v.iter().all(|&v| v == 0.0));
}

#[test]
fn uniform_state_follows_kinetics() {
    let p = params(0.7, 1.6, 2.0, 3.0);
    let grid = Grid::with_spacing(-5.0, 5.0, 0.1).unwrap();
    let (u_ref, v_ref) = kinetics(&p, 0.3, 0.4, 4.0);
    for (integrator, tol) in [(Integrator::SspRk3, 1e-8), (Integrator::Euler, 1e-2)] {
        let scheme = Scheme {
            integrator,
            ..Scheme::default()
        };
        let traj = simulate(
            &p,
            &grid,
            &uniform(&grid, 0.3, 0.4),
            &scheme,
            4.0,
            &[4.0],
            Exec::Sequential,
        )
        .unwrap();
        let s = &traj.snapshots[0];
        assert!(
            (s.u[50] - u_ref).abs() < tol,
            "{integrator:?}: {} vs {u_ref}",
            s.u[50]
        );
        assert!(
            (s.v[50] - v_ref).abs() < tol,
            "{integrator:?}: {} vs {v_ref}",
            s.v[50]
        );
    }
}

#[test]
fn modes_agree_bitwise() {
    let p = params(1.0, 1.0, 2.0, 3.0);
    let grid = Grid::with_spacing(-60.0, 60.0, 0.1).unwrap();
    let ic = InitialCondition::A1 {
        u_support: (-20.0, 5.0),
        u_amplitude: 1.0,
        taper: 2.0,
        v_background: 1.0,
        v_inside: 1e-6,
    };
    let s0 = make_initial(&grid, &ic).unwrap();
    let times = output_grid(0.0, 10.0, 2.5);
    let seq = simulate(
        &p,
        &grid,
        &s0,
        &Scheme::default(),
        10.0,
        &times,
        Exec::Sequential,
    )
    .unwrap();
    let par = simulate(
        &p,
        &grid,
        &s0,
        &Scheme::default(),
        10.0,
        &times,
        Exec::Parallel,
    )
    .unwrap();
    assert_eq!(seq.snapshots, par.snapshots);
    let one = step(&s0, &p, &grid, &Scheme::default(), Exec::Parallel).unwrap();
    assert_eq!(
        one,
        step(&s0, &p, &grid, &Scheme::default(), Exec::Sequential).unwrap()
    );
}

#[test]
fn symmetric_data_stay_symmetric() {
    let p = params(0.8, 1.5, 1.5, 2.5);
    let grid = Grid::with_spacing(-30.0, 30.0, 0.1).unwrap();
    let ic = InitialCondition::A2 {
        u_support: (-8.0, 8.0),
        u_amplitude: 0.9,
        v_support: (-20.0, 20.0),
        v_amplitude: 0.6,
        taper: 3.0,
    };
    let s0 = make_initial(&grid, &ic).unwrap();
    let traj = simulate(
        &p,
        &grid,
        &s0,
        &Scheme::default(),
        8.0,
        &[8.0],
        Exec::Sequential,
    )
    .unwrap();
    let s = &traj.snapshots[0];
    let m = s.mirrored();
    let gap =
        s.u.iter()
            .zip(&m.u)
            .chain(s.v.iter().zip(&m.v))
            .fold(0.0f64, |g, (x, y)| g.max((x - y).abs()));
    assert!(gap < 1e-13, "{gap}");
}

#[test]
fn output_times_are_hit_exactly() {
    let p = params(1.0, 1.0, 2.0, 3.0);
    let grid = Grid::with_spacing(-5.0, 5.0, 0.1).unwrap();
    let times = [0.3, 1.0 / 3.0, 1.0, 2.0];
    let traj = simulate(
        &p,
        &grid,
        &uniform(&grid, 0.5, 0.5),
        &Scheme::default(),
        2.5,
        &times,
        Exec::Sequential,
    )
    .unwrap();
    let got: Vec<f64> = traj.snapshots.iter().map(|s| s.t).collect();
    assert_eq!(got, times);
    assert_eq!(output_grid(0.0, 1.0, 0.25), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
}

#[test]
fn unstable_step_is_rejected() {
    let p = params(1.0, 1.0, 2.0, 3.0);
    let grid = Grid::with_spacing(-5.0, 5.0, 0.1).unwrap();
    let s0 = uniform(&grid, 0.5, 0.5);
    let bad = Scheme {
        dt: 0.01,
        ..Scheme::default()
    };
    assert!(stability_bound(&p, &grid, 0.5, 0.5) < 0.01);
    assert!(matches!(
        step(&s0, &p, &grid, &bad, Exec::Sequential),
        Err(Error::UnstableStep { .. })
    ));
    assert!(matches!(
        simulate(&p, &grid, &s0, &bad, 1.0, &[1.0], Exec::Sequential),
        Err(Error::UnstableStep { .. })
    ));
}

#[test]
fn support_must_respect_margin() {
    let grid = Grid::with_spacing(-10.0, 10.0, 0.1).unwrap();
    let near = InitialCondition::A2 {
        u_support: (-9.5, 0.0),
        u_amplitude: 1.0,
        v_support: (0.0, 5.0),
        v_amplitude: 1.0,
        taper: 1.0,
    };
    assert!(matches!(
        make_initial(&grid, &near),
        Err(Error::InitialCondition(_))
    ));
    let fine = InitialCondition::A2 {
        u_support: (-9.0, 0.0),
        u_amplitude: 1.0,
        v_support: (0.0, 5.0),
        v_amplitude: 1.0,
        taper: 1.0,
    };
    assert!(make_initial(&grid, &fine).is_ok());
    let negative = InitialCondition::Custom {
        u: vec![-0.1; grid.n],
        v: vec![0.0; grid.n],
    };
    assert!(make_initial(&grid, &negative).is_err());
}

#[test]
fn boundary_contact_is_a_warning() {
    let p = params(1.0, 1.0, 2.0, 2.0);
    let grid = Grid::with_spacing(-10.0, 10.0, 0.1).unwrap();
    let s0 = make_initial(&grid, &InitialCondition::Step { x0: 5.0 }).unwrap();
    let times = output_grid(0.5, 4.0, 0.5);
    let traj = simulate(
        &p,
        &grid,
        &s0,
        &Scheme::default(),
        4.0,
        &times,
        Exec::Sequential,
    )
    .unwrap();
    assert!(traj.boundary_contact.is_some());
    assert_eq!(traj.warnings.len(), 1);
}

/// `min over lambda of ln G(lambda) / (dt lambda)` by dense scan.
fn scanned_speed(d: f64, r: f64, dx: f64, dt: f64, rk3: bool) -> f64 {
    (1..200_000)
        .map(|k| {
            let lam = k as f64 * 1e-5;
            let z = dt * (2.0 * d * ((lam * dx).cosh() - 1.0) / (dx * dx) + r);
            let g = if rk3 {
                1.0 + z + z * z / 2.0 + z * z * z / 6.0
            } else {
                1.0 + z
            };
            g.ln() / (dt * lam)
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn discrete_speed_matches_scan() {
    for (d, r, rk3) in [(1.0, 1.0, true), (1.0, 1.0, false), (4.0, 0.5, true)] {
        let integrator = if rk3 {
            Integrator::SspRk3
        } else {
            Integrator::Euler
        };
        let got = discrete_linear_speed(d, r, 0.1, 0.004, integrator);
        assert!(
            (got - scanned_speed(d, r, 0.1, 0.004, rk3)).abs() < 1e-8,
            "{d} {r} {rk3}"
        );
    }
    let c = discrete_linear_speed(1.0, 1.0, 0.1, 0.004, Integrator::SspRk3);
    assert!(c > 2.0 && c < 2.0 + 0.1f64.powi(2) / 12.0 + 1e-4);
}

fn noisy_state(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (
        prop::collection::vec(0.0f64..=1.0, n),
        prop::collection::vec(0.0f64..=1.0, n),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn invariant_box_is_preserved(
        (u, v) in noisy_state(201),
        d in 0.1f64..4.0,
        r in 0.1f64..3.0,
        a in 0.2f64..5.0,
        b in 0.2f64..5.0,
    ) {
        let p = params(d, r, a, b);
        let grid = Grid::with_spacing(-10.0, 10.0, 0.1).unwrap();
        let s0 = make_initial(&grid, &InitialCondition::Custom { u, v }).unwrap();
        let scheme = Scheme { dt: stability_bound(&p, &grid, 1.0, 1.0), ..Scheme::default() };
        let traj = simulate(&p, &grid, &s0, &scheme, 0.5, &[0.5], Exec::Sequential).unwrap();
        let s = &traj.snapshots[0];
        for x in s.u.iter().chain(&s.v) {
            prop_assert!(*x >= 0.0 && *x <= 1.0 + 1e-12, "{}", x);
        }
    }
}
