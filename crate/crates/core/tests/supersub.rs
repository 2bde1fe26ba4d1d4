use lvfront::model::char_roots_perturbed;
use lvfront::pde::{comparison_check, output_grid, simulate, FieldState, Grid, Scheme, Trajectory};
use lvfront::supersub::{
    build_pair, check_constraints, evaluate_residuals, invasion_certificate, Family, Lattice, Pair,
    SuperSubParams,
};
use lvfront::wave::{solve_bistable_wave, solve_perturbed_wave, WaveConfig, WaveProfile};
use lvfront::{Exec, ModelParams};

const EPS: f64 = 0.05;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn params(d: f64, r: f64, a: f64, b: f64) -> ModelParams {
    ModelParams::new(d, r, a, b).unwrap()
}

fn ssp(family: Family, p0: f64, q0: f64, rate: f64, shift0: f64, shift1: f64) -> SuperSubParams {
    SuperSubParams {
        family,
        p0,
        q0,
        rate,
        shift0,
        shift1,
        epsilon: None,
        center: 0.0,
    }
}

/// Random model with `b` well above `a`, so that the bistable front moves right.
fn random_model(rng: &mut ChaCha8Rng) -> ModelParams {
    let a = rng.random_range(1.8..3.0);
    params(
        rng.random_range(0.7..1.4),
        rng.random_range(0.7..1.5),
        a,
        a + rng.random_range(0.8..2.0),
    )
}

fn random_pair(
    rng: &mut ChaCha8Rng,
    family: Family,
    p: &ModelParams,
    wave: &WaveProfile,
) -> SuperSubParams {
    let ModelParams { r, a, b, .. } = *p;
    let frac = |rng: &mut ChaCha8Rng| rng.random_range(0.2..0.8);
    let q0 = rng.random_range(0.2..0.8);
    match family {
        Family::LowerSimple => {
            let rate = frac(rng) * r.min(1.0).min((a - 1.0) * r);
            let p0 = frac(rng) * q0 / b * (1.0 - rate) / 2.0;
            ssp(
                family,
                p0,
                q0,
                rate,
                rng.random_range(-2.0..2.0),
                rng.random_range(0.5..2.0),
            )
        }
        Family::UpperSimple => {
            let rate = frac(rng) * r.min(1.0).min(b - 1.0);
            let p0 = frac(rng) * q0 * (1.0 - rate) / (2.0 * a);
            ssp(
                family,
                p0,
                q0,
                rate,
                rng.random_range(-2.0..2.0),
                -rng.random_range(0.5..2.0),
            )
        }
        Family::UpperTwoSided => {
            let p0 = frac(rng) * q0 / (2.0 * b);
            let s0 = -rng.random_range(15.0..25.0);
            ssp(
                family,
                p0,
                q0,
                rng.random_range(0.05..0.1),
                s0,
                -rng.random_range(0.5..2.0),
            )
        }
        Family::LowerTwoSided => {
            let p0 = frac(rng) * q0 / (2.0 * b * (1.0 + q0));
            let s0 = -rng.random_range(3.0..8.0);
            ssp(
                family,
                p0,
                q0,
                rng.random_range(0.05..0.1),
                s0,
                rng.random_range(0.5..2.0),
            )
        }
        Family::AppendixLower => {
            let c = wave.speed;
            let roots = char_roots_perturbed(p, c, EPS).unwrap();
            let bound = (r * (a - 1.0))
                .min(b - 1.0)
                .min(roots.lambda_minus * c)
                .min(roots.lambda4 * c);
            let p0 = rng.random_range(0.01..0.06);
            let rate = frac(rng) * bound;
            let mut s = ssp(
                family,
                p0,
                p0 / a,
                rate,
                -rng.random_range(3.0..8.0),
                rng.random_range(0.5..2.0),
            );
            s.epsilon = Some(EPS);
            s
        }
    }
}

#[test]
fn random_passing_sets_clear_the_default_lattice() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let cfg = WaveConfig::default();
    let lattice = Lattice::default();
    for family in Family::ALL {
        for k in 0..5 {
            let p = random_model(&mut rng);
            let wave = if family == Family::AppendixLower {
                solve_perturbed_wave(&p, EPS, &cfg).unwrap()
            } else {
                solve_bistable_wave(&p, &cfg).unwrap()
            };
            let s = random_pair(&mut rng, family, &p, &wave);
            assert!(
                check_constraints(&p, &s).pass,
                "{family:?} #{k}: {:?}",
                check_constraints(&p, &s)
            );
            let pair = build_pair(&p, &wave, &s).unwrap();
            let report = evaluate_residuals(&pair, &lattice, Exec::Parallel).unwrap();
            println!(
                "{} #{k}: {p:?} {s:?} T* = {:?}",
                family.name(),
                report.t_star
            );
            assert!(
                report.constraints.pass,
                "{family:?} #{k}: {:?}",
                report.constraints
            );
            let t_star = report
                .t_star
                .unwrap_or_else(|| panic!("{family:?} #{k}: no T*"));
            assert!(report.clean_from(t_star));
            assert!(report.fd_check.within_budget);
        }
    }
}

#[test]
fn constraint_clauses_are_named() {
    let p = params(1.0, 1.0, 2.0, 2.0);
    assert!(check_constraints(&p, &ssp(Family::LowerSimple, 0.05, 0.5, 0.3, 0.0, 1.0)).pass);
    let v = check_constraints(&p, &ssp(Family::LowerSimple, 0.05, 0.5, 1.2, 0.0, 1.0));
    assert!(
        v.failed.iter().any(|c| c == "alpha<min{r,1,(a-1)r}"),
        "{v:?}"
    );
    assert!(check_constraints(&p, &ssp(Family::UpperTwoSided, 0.2, 1.0, 0.05, -20.0, -1.0)).pass);
    let v = check_constraints(&p, &ssp(Family::LowerTwoSided, 0.2, 1.0, 0.05, -5.0, 1.0));
    assert_eq!(v.failed, vec!["q0>2b(1+q0)p0".to_string()]);
    let v = check_constraints(&p, &ssp(Family::UpperSimple, 0.05, 0.5, 0.3, 0.0, 1.0));
    assert_eq!(v.failed, vec!["eta1<0".to_string()]);
}

#[test]
fn exact_front_has_vanishing_residuals() {
    let p = params(1.0, 1.0, 2.0, 3.0);
    let wave = solve_bistable_wave(&p, &WaveConfig::default()).unwrap();
    let pair = build_pair(
        &p,
        &wave,
        &ssp(Family::LowerSimple, 0.0, 0.0, 0.3, 0.7, 0.0),
    )
    .unwrap();
    for t in [0.0, 3.0, 50.0] {
        for k in -300..=300 {
            let x = wave.speed * t + 0.1 * k as f64;
            let r = pair.residual(t, x).unwrap();
            assert!(
                r.n1_smooth.abs() < 1e-7 && r.n2_smooth.abs() < 1e-7,
                "t = {t}, x = {x}: {r:?}"
            );
        }
    }
}

#[test]
fn inflated_amplitude_is_flagged() {
    let p = params(1.0, 1.0, 2.0, 3.0);
    let wave = solve_bistable_wave(&p, &WaveConfig::default()).unwrap();
    let good = ssp(Family::LowerSimple, 0.05, 0.5, 0.3, 0.0, 1.0);
    let bad = SuperSubParams {
        p0: 100.0 * good.p0,
        ..good
    };
    let lattice = Lattice::default();
    let ok = evaluate_residuals(
        &build_pair(&p, &wave, &good).unwrap(),
        &lattice,
        Exec::Parallel,
    )
    .unwrap();
    let rb = evaluate_residuals(
        &build_pair(&p, &wave, &bad).unwrap(),
        &lattice,
        Exec::Parallel,
    )
    .unwrap();
    assert!(ok.t_star.is_some() && ok.constraints.pass);
    assert!(!rb.constraints.pass && rb.violations > 0);
    assert!(rb.n2_worst_sign_violation.is_some() || rb.n1_worst_sign_violation.is_some());
}

#[test]
fn truncated_points_have_zero_n1() {
    let p = params(1.0, 1.0, 2.0, 3.0);
    let wave = solve_bistable_wave(&p, &WaveConfig::default()).unwrap();
    let lattice = Lattice {
        t_max: 20.0,
        dt: 2.0,
        ..Lattice::default()
    };
    for s in [
        ssp(Family::LowerSimple, 0.05, 0.5, 0.3, 0.0, 1.0),
        ssp(Family::LowerTwoSided, 0.002, 0.05, 0.2, -5.0, 1.0),
    ] {
        let pair = build_pair(&p, &wave, &s).unwrap();
        let mut kinks = 0;
        for t in lattice.times() {
            for x in lattice.positions(&s, wave.speed, t) {
                let r = pair.residual(t, x).unwrap();
                if r.u == 0.0 {
                    assert_eq!(r.n1, 0.0, "{:?} at ({t}, {x})", s.family);
                    kinks += 1;
                }
            }
        }
        assert!(kinks > 0, "{:?}", s.family);
        let report = evaluate_residuals(&pair, &lattice, Exec::Sequential).unwrap();
        assert!(report.kink_points > 0);
    }
}

#[test]
fn two_sided_residuals_are_even() {
    let p = params(1.0, 1.0, 2.0, 3.0);
    let wave = solve_bistable_wave(&p, &WaveConfig::default()).unwrap();
    for s in [
        ssp(Family::UpperTwoSided, 0.05, 0.5, 0.05, -20.0, -1.0),
        ssp(Family::LowerTwoSided, 0.04, 0.5, 0.05, -5.0, 1.0),
    ] {
        let pair = build_pair(&p, &wave, &s).unwrap();
        for t in [0.0, 7.5, 60.0] {
            for k in 0..400 {
                let x = 0.173 * k as f64;
                let (a, b) = (pair.residual(t, x).unwrap(), pair.residual(t, -x).unwrap());
                assert_eq!(
                    (a.u, a.v, a.n1, a.n2),
                    (b.u, b.v, b.n1, b.n2),
                    "{:?} at ({t}, {x})",
                    s.family
                );
            }
        }
        let lattice = Lattice {
            t_max: 30.0,
            ..Lattice::default()
        };
        let report = evaluate_residuals(&pair, &lattice, Exec::Parallel).unwrap();
        assert_eq!(report.violations % 2, 0);
        assert!(report.violations > 0);
    }
}

#[test]
fn modes_agree_on_reports() {
    let p = params(1.0, 1.0, 2.0, 3.0);
    let wave = solve_bistable_wave(&p, &WaveConfig::default()).unwrap();
    let pair = build_pair(
        &p,
        &wave,
        &ssp(Family::LowerTwoSided, 0.04, 0.5, 0.05, -5.0, 1.0),
    )
    .unwrap();
    let lattice = Lattice {
        t_max: 40.0,
        ..Lattice::default()
    };
    assert_eq!(
        evaluate_residuals(&pair, &lattice, Exec::Sequential).unwrap(),
        evaluate_residuals(&pair, &lattice, Exec::Parallel).unwrap()
    );
}

#[test]
fn solution_stays_squeezed_between_simple_pairs() {
    let p = params(1.0, 1.0, 2.0, 3.0);
    let wave = solve_bistable_wave(&p, &WaveConfig::default()).unwrap();
    let lower = ssp(Family::LowerSimple, 0.05, 0.5, 0.3, 2.0, 1.0);
    let upper = ssp(Family::UpperSimple, 0.05, 0.5, 0.3, -2.0, -1.0);
    let lattice = Lattice::default();
    let lo_pair = build_pair(&p, &wave, &lower).unwrap();
    let hi_pair = build_pair(&p, &wave, &upper).unwrap();
    let t0 = [&lo_pair, &hi_pair]
        .iter()
        .map(|pair| {
            evaluate_residuals(pair, &lattice, Exec::Parallel)
                .unwrap()
                .t_star
                .unwrap()
        })
        .fold(0.0, f64::max);
    let grid = Grid::with_spacing(-80.0, 80.0, 0.1).unwrap();
    let (a, b) = (
        lo_pair.state_at(t0, &grid).unwrap(),
        hi_pair.state_at(t0, &grid).unwrap(),
    );
    let start = FieldState {
        t: t0,
        u: a.u.iter().zip(&b.u).map(|(x, y)| 0.5 * (x + y)).collect(),
        v: a.v.iter().zip(&b.v).map(|(x, y)| 0.5 * (x + y)).collect(),
    };
    let times = output_grid(t0, t0 + 40.0, 1.0);
    let scheme = Scheme::default();
    let traj = simulate(
        &p,
        &grid,
        &start,
        &scheme,
        t0 + 40.0,
        &times,
        Exec::Parallel,
    )
    .unwrap();
    let frozen = |pair: &Pair| Trajectory {
        snapshots: times
            .iter()
            .map(|&t| pair.state_at(t, &grid).unwrap())
            .collect(),
        ..traj.clone()
    };
    let below = comparison_check(&traj, &frozen(&lo_pair), 1e-4).unwrap();
    let above = comparison_check(&frozen(&hi_pair), &traj, 1e-4).unwrap();
    assert!(below.ordered, "{below:?}");
    assert!(above.ordered, "{above:?}");
}

#[test]
fn invasion_certificate_cases() {
    let p = params(1.0, 1.0, 2.0, 3.0);
    let wave = solve_bistable_wave(&p, &WaveConfig::default()).unwrap();
    let s = ssp(Family::LowerTwoSided, 0.002, 0.05, 0.2, -20.0, 1.0);
    let pair = build_pair(&p, &wave, &s).unwrap();
    let report = evaluate_residuals(&pair, &Lattice::default(), Exec::Parallel).unwrap();
    let grid = Grid::with_spacing(-100.0, 100.0, 0.1).unwrap();
    let taper = |x: f64| 0.5 * (1.0 - ((x.abs() - 40.0) / 2.0).tanh());
    let field = |u: &dyn Fn(f64) -> f64, v: f64| FieldState {
        t: 0.0,
        u: grid.xs().into_iter().map(u).collect(),
        v: vec![v; grid.n],
    };
    let good = invasion_certificate(&field(&taper, 0.0), &grid, &pair, &report).unwrap();
    assert!(good.holds && good.margin >= 0.0, "{good:?}");
    let empty = invasion_certificate(&field(&|_| 0.0, 0.0), &grid, &pair, &report).unwrap();
    assert!(!empty.holds && empty.margin < 0.0);
    let crowded = invasion_certificate(&field(&taper, 3.0), &grid, &pair, &report).unwrap();
    assert!(!crowded.holds);
}
