use lvfront::front::{
    detect_terrace, estimate_shift, estimate_speed, fit_bramson, level_set, log_linear_decay,
    segregation_value, shift_gap, Extreme, FrontTrace, ShiftEstimate, DECAY_FLOOR,
};
use lvfront::pde::{
    make_initial, output_grid, simulate, FieldState, Grid, InitialCondition, Scheme, Species,
};
use lvfront::wave::{solve_bistable_wave, WaveConfig};
use lvfront::{canonical_speeds, Error, Exec, ModelParams};
use proptest::prelude::*;

fn params(d: f64, r: f64, a: f64, b: f64) -> ModelParams {
    ModelParams::new(d, r, a, b).unwrap()
}

/// `u` falling linearly through 1/2 at `x0` with slope `-s`, clipped to [0, 1]; `v = 1 - u`.
fn ramp(grid: &Grid, t: f64, x0: f64, s: f64) -> FieldState {
    let u: Vec<f64> = grid
        .xs()
        .iter()
        .map(|x| (0.5 - s * (x - x0)).clamp(0.0, 1.0))
        .collect();
    let v = u.iter().map(|u| 1.0 - u).collect();
    FieldState { t, u, v }
}

fn trace_of(grid: &Grid, times: &[f64], x: impl Fn(f64) -> f64) -> FrontTrace {
    let mut trace = FrontTrace::new(Species::U, 0.5);
    for &t in times {
        trace.push(&ramp(grid, t, x(t), 0.2), grid);
    }
    trace
}

#[test]
fn smooth_profile_level_set_is_second_order() {
    let x0 = 7.31;
    let mut errs = Vec::new();
    for dx in [0.2, 0.1, 0.05] {
        let grid = Grid::with_spacing(-20.0, 20.0, dx).unwrap();
        let u: Vec<f64> = grid
            .xs()
            .iter()
            .map(|x| 0.5 * (1.0 - ((x - x0) / 1.5).tanh()))
            .collect();
        let s = FieldState {
            t: 0.0,
            v: vec![0.0; grid.n],
            u,
        };
        let set = level_set(&s, &grid, Species::U, 0.3).unwrap();
        assert_eq!(set.len(), 1);
        let exact = x0 + 1.5 * (0.4f64).atanh();
        errs.push((set[0] - exact).abs());
        assert!(errs.last().unwrap() < &(dx * dx));
    }
    assert!(errs[0] / errs[2] > 12.0);
}

#[test]
fn level_set_only_looks_right_of_origin() {
    let grid = Grid::with_spacing(-20.0, 20.0, 0.1).unwrap();
    let s = ramp(&grid, 0.0, -5.0, 0.2);
    assert!(level_set(&s, &grid, Species::U, 0.5).unwrap().is_empty());
    assert!(level_set(&s, &grid, Species::U, 1.0).is_err());
}

#[test]
fn linear_motion_gives_exact_speed() {
    let grid = Grid::with_spacing(-10.0, 200.0, 0.1).unwrap();
    let times = output_grid(0.0, 50.0, 1.0);
    let trace = trace_of(&grid, &times, |t| 3.0 + 1.7 * t);
    let est = estimate_speed(&trace, Extreme::Max, (10.0, 50.0)).unwrap();
    assert!((est.speed - 1.7).abs() < 1e-9);
    assert!(est.half_width < 1e-9);
    assert_eq!(est.samples, 41);
    assert!(matches!(
        estimate_speed(&trace, Extreme::Min, (10.0, 15.0)),
        Err(Error::BadWindow(_))
    ));
}

#[test]
fn bramson_window_must_start_late() {
    let grid = Grid::with_spacing(-10.0, 500.0, 0.1).unwrap();
    let times = output_grid(0.0, 100.0, 1.0);
    let trace = trace_of(&grid, &times, |t| 2.0 * t);
    assert!(matches!(
        fit_bramson(&trace, Extreme::Max, 2.0, (10.0, 100.0), &[0.0]),
        Err(Error::BadWindow(_))
    ));
    let exact = fit_bramson(&trace, Extreme::Max, 2.0, (20.0, 100.0), &[0.0]).unwrap();
    assert!(exact.kappa.abs() < 1e-9);
}

#[test]
fn shift_recovers_a_known_translate() {
    let p = params(1.0, 1.0, 2.0, 3.0);
    let wave = solve_bistable_wave(&p, &WaveConfig::default()).unwrap();
    let grid = Grid::with_spacing(-60.0, 80.0, 0.1).unwrap();
    let (t, h0) = (10.0, 3.7);
    let (mut u, mut v) = (Vec::new(), Vec::new());
    for x in grid.xs() {
        let s = wave.sample(x - wave.speed * t - h0).unwrap();
        u.push(s.u.value);
        v.push(s.v.value);
    }
    let state = FieldState { t, u, v };
    let est = estimate_shift(&state, &grid, &wave, wave.speed * t + h0 + 1.0, 30.0).unwrap();
    assert!((est.shift - h0).abs() < 1e-6, "{est:?}");
    assert!(est.distance < 1e-6);
    let series = [
        ShiftEstimate { shift: 1.0, ..est },
        ShiftEstimate { shift: 1.5, ..est },
        ShiftEstimate { shift: 0.75, ..est },
    ];
    assert_eq!(shift_gap(&series), 0.75);
    assert!(matches!(
        estimate_shift(&state, &grid, &wave, 0.0, 10.0),
        Err(Error::Precondition(_))
    ));
}

#[test]
fn segregation_inside_the_cone() {
    let grid = Grid::with_spacing(-30.0, 30.0, 0.1).unwrap();
    let mut s = FieldState {
        t: 10.0,
        u: vec![1.0; grid.n],
        v: vec![0.0; grid.n],
    };
    assert_eq!(segregation_value(&s, &grid, 1.0), (0.0, false));
    s.v[350] = 0.3;
    s.u[100] = 0.4;
    let (m, cut) = segregation_value(&s, &grid, 1.0);
    assert!((m - 0.3).abs() < 1e-15 && !cut);
    let (m, cut) = segregation_value(&s, &grid, 2.5);
    assert!((m - 0.9).abs() < 1e-15 && !cut);
    assert!(segregation_value(&s, &grid, 4.0).1);
}

#[test]
fn decay_fit_drops_underflow() {
    let times = output_grid(0.0, 100.0, 1.0);
    let mut values: Vec<f64> = times.iter().map(|t| 3.0 * (-0.7 * t).exp()).collect();
    values[90] = 0.0;
    let fit = log_linear_decay(&times, &values, (50.0, 100.0), DECAY_FLOOR).unwrap();
    assert!((fit.slope + 0.7).abs() < 1e-12);
    assert_eq!((fit.samples, fit.dropped), (50, 1));
    assert!(fit.r_squared > 1.0 - 1e-12);
}

#[test]
fn terrace_needs_ordered_spreading_speeds() {
    let p = params(1.0, 1.0, 2.0, 3.0);
    let grid = Grid::with_spacing(-20.0, 20.0, 0.1).unwrap();
    let wave = solve_bistable_wave(&p, &WaveConfig::default()).unwrap();
    let s0 = make_initial(&grid, &InitialCondition::Step { x0: 0.0 }).unwrap();
    let traj = simulate(
        &p,
        &grid,
        &s0,
        &Scheme::default(),
        1.0,
        &[1.0],
        Exec::Sequential,
    )
    .unwrap();
    let speeds = canonical_speeds(&p).unwrap().with_cuv(wave.speed);
    assert!(matches!(
        detect_terrace(&traj, &speeds, &wave, None),
        Err(Error::Precondition(_))
    ));
}

#[test]
fn single_species_has_no_terrace() {
    let p = params(0.25, 1.0, 1.2, 20.0);
    let wave = solve_bistable_wave(&p, &WaveConfig::default()).unwrap();
    let grid = Grid::with_spacing(-20.0, 120.0, 0.1).unwrap();
    let s0 = make_initial(&grid, &InitialCondition::Step { x0: 0.0 }).unwrap();
    let times = output_grid(1.0, 40.0, 1.0);
    let traj = simulate(
        &p,
        &grid,
        &s0,
        &Scheme::default(),
        40.0,
        &times,
        Exec::Parallel,
    )
    .unwrap();
    let speeds = canonical_speeds(&p).unwrap().with_cuv(wave.speed);
    let report = detect_terrace(&traj, &speeds, &wave, None).unwrap();
    assert!(!report.terrace);
    assert!(report.v_speed.is_none());
    assert!(report.u_speed.is_some_and(|s| (s.speed - 1.0).abs() < 0.1));
}

proptest! {
    #[test]
    fn ramp_level_set_is_exact(x0 in 0.5f64..15.0, s in 0.05f64..0.5, level in 0.1f64..0.9) {
        let grid = Grid::with_spacing(-20.0, 20.0, 0.1).unwrap();
        let state = ramp(&grid, 0.0, x0, s);
        let set = level_set(&state, &grid, Species::U, level).unwrap();
        let exact = x0 + (0.5 - level) / s;
        prop_assume!(exact > 0.1 && exact < 19.0);
        prop_assert_eq!(set.len(), 1);
        prop_assert!((set[0] - exact).abs() < 1e-9);
    }

    #[test]
    fn bramson_delay_is_recovered(kappa in 0.2f64..3.0, offset in -5.0f64..5.0, k0 in 0usize..4) {
        let t0_grid = [0.0, 1.0, 5.0, 10.0];
        let t0 = t0_grid[k0];
        let grid = Grid::with_spacing(-10.0, 450.0, 0.1).unwrap();
        let times = output_grid(0.0, 200.0, 2.0);
        let trace = trace_of(&grid, &times, |t| 20.0 + 2.0 * t - kappa * (t + t0).ln() - offset);
        let fit = fit_bramson(&trace, Extreme::Max, 2.0, (20.0, 200.0), &t0_grid).unwrap();
        prop_assert!((fit.kappa - kappa).abs() < 1e-6, "{} vs {}", fit.kappa, kappa);
        prop_assert_eq!(fit.t0, t0);
        prop_assert!(fit.sup_omega < 1e-6);
    }
}
