//! Explicit monotone finite-difference solver for the competition system on a
//! truncated line.
//!
//! Space uses the three-point Laplacian, time either forward Euler or the
//! three-stage strong-stability-preserving Runge-Kutta method. Under
//! [`stability_bound`] every Euler stage is a monotone map in the competitive
//! order (nondecreasing in `u`, nonincreasing in `v` for the `u` update and
//! vice versa), and the Runge-Kutta stages are convex combinations of Euler
//! stages, so both integrators preserve ordering, positivity and the
//! invariant box.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::par::{self, Exec};

pub const SCHEME_VERSION: &str = "central-3pt/monotone-explicit/v1";

/// Levels watched by the boundary guard.
pub const GUARD_LEVELS: [f64; 3] = [0.1, 0.5, 0.9];
/// Width of the boundary guard in grid spacings.
pub const GUARD_CELLS: usize = 20;

const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Mirror ghost node.
    ZeroFlux,
    /// The end node keeps its initial values.
    Pinned,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub x_min: f64,
    pub x_max: f64,
    pub n: usize,
    pub left: Boundary,
    pub right: Boundary,
}

impl Grid {
    pub fn new(x_min: f64, x_max: f64, n: usize, left: Boundary, right: Boundary) -> Result<Self> {
        let g = Grid {
            x_min,
            x_max,
            n,
            left,
            right,
        };
        g.validate()?;
        Ok(g)
    }

    /// Zero-flux grid with spacing as close to `dx` as the endpoints allow.
    pub fn with_spacing(x_min: f64, x_max: f64, dx: f64) -> Result<Self> {
        let n = ((x_max - x_min) / dx).round() as usize + 1;
        Grid::new(x_min, x_max, n, Boundary::ZeroFlux, Boundary::ZeroFlux)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 16 {
            return Err(Error::InvalidParameter {
                name: "n",
                value: self.n as f64,
                rule: "grid needs at least 16 nodes",
            });
        }
        if !(self.x_min.is_finite() && self.x_max.is_finite() && self.x_max > self.x_min) {
            return Err(Error::InvalidParameter {
                name: "x_max",
                value: self.x_max,
                rule: "x_max must exceed x_min",
            });
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx()
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.x(i)).collect()
    }

    /// Same nodes and closures.
    pub fn same_as(&self, other: &Grid) -> bool {
        self == other
    }
}

/// Smooth plateau: 1 on `[s0 + w, s1 - w]`, cosine ramps, exactly 0 outside `(s0, s1)`.
fn plateau(x: f64, s0: f64, s1: f64, taper: f64) -> f64 {
    if x <= s0 || x >= s1 {
        return 0.0;
    }
    let w = taper.min(0.5 * (s1 - s0));
    if w <= 0.0 {
        return 1.0;
    }
    let e = (x - s0).min(s1 - x);
    if e >= w {
        1.0
    } else {
        0.5 * (1.0 - (std::f64::consts::PI * e / w).cos())
    }
}

/// Smooth step from 1 (for `x <= x0 - w`) to exactly 0 (for `x >= x0`).
fn step_down(x: f64, x0: f64, w: f64) -> f64 {
    if x >= x0 {
        0.0
    } else if w <= 0.0 || x <= x0 - w {
        1.0
    } else {
        0.5 * (1.0 + (std::f64::consts::PI * (x - x0 + w) / w).cos())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario")]
pub enum InitialCondition {
    /// Compactly supported invader `u`; resident `v` equal to `v_background`
    /// outside the support of `u`, lowered towards `v_inside > 0` on it.
    A1 {
        u_support: (f64, f64),
        u_amplitude: f64,
        taper: f64,
        v_background: f64,
        v_inside: f64,
    },
    /// Both species compactly supported.
    A2 {
        u_support: (f64, f64),
        u_amplitude: f64,
        v_support: (f64, f64),
        v_amplitude: f64,
        taper: f64,
    },
    /// `u = 1` far left and `0` right of `x_u`; `v = 0` left of `x_v` and `1` far right.
    Simple {
        x_u: f64,
        x_v: f64,
        width: f64,
    },
    /// `u = 1` for `x <= x0` and `0` beyond; `v = 0`.
    Step {
        x0: f64,
    },
    Custom {
        u: Vec<f64>,
        v: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldState {
    pub t: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl FieldState {
    pub fn sup_u(&self) -> f64 {
        self.u.iter().fold(0.0f64, |m, &x| m.max(x))
    }

    pub fn sup_v(&self) -> f64 {
        self.v.iter().fold(0.0f64, |m, &x| m.max(x))
    }

    /// Spatial mirror image `x -> x_min + x_max - x`.
    pub fn mirrored(&self) -> FieldState {
        let mut u = self.u.clone();
        let mut v = self.v.clone();
        u.reverse();
        v.reverse();
        FieldState { t: self.t, u, v }
    }
}

fn require_inside(grid: &Grid, what: &str, lo: f64, hi: f64) -> Result<()> {
    let margin = 10.0 * grid.dx();
    if !(lo < hi) {
        return Err(Error::InitialCondition(format!(
            "{what}: empty interval [{lo}, {hi}]"
        )));
    }
    if lo < grid.x_min + margin || hi > grid.x_max - margin {
        return Err(Error::InitialCondition(format!(
            "{what} [{lo}, {hi}] must stay 10 dx = {margin} inside the grid [{}, {}]",
            grid.x_min, grid.x_max
        )));
    }
    Ok(())
}

fn require_positive(what: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::InitialCondition(format!(
            "{what} must be positive, got {x}"
        )))
    }
}

pub fn make_initial(grid: &Grid, ic: &InitialCondition) -> Result<FieldState> {
    grid.validate()?;
    let xs = grid.xs();
    let (u, v) = match ic {
        InitialCondition::A1 {
            u_support,
            u_amplitude,
            taper,
            v_background,
            v_inside,
        } => {
            require_inside(grid, "u support", u_support.0, u_support.1)?;
            require_positive("u amplitude", *u_amplitude)?;
            require_positive("v background", *v_background)?;
            require_positive("v lower bound", *v_inside)?;
            if v_inside > v_background {
                return Err(Error::InitialCondition(
                    "v_inside may not exceed v_background".into(),
                ));
            }
            let shape: Vec<f64> = xs
                .iter()
                .map(|&x| plateau(x, u_support.0, u_support.1, *taper))
                .collect();
            (
                shape.iter().map(|s| u_amplitude * s).collect(),
                shape
                    .iter()
                    .map(|s| v_inside * s + v_background * (1.0 - s))
                    .collect(),
            )
        }
        InitialCondition::A2 {
            u_support,
            u_amplitude,
            v_support,
            v_amplitude,
            taper,
        } => {
            require_inside(grid, "u support", u_support.0, u_support.1)?;
            require_inside(grid, "v support", v_support.0, v_support.1)?;
            require_positive("u amplitude", *u_amplitude)?;
            require_positive("v amplitude", *v_amplitude)?;
            (
                xs.iter()
                    .map(|&x| u_amplitude * plateau(x, u_support.0, u_support.1, *taper))
                    .collect(),
                xs.iter()
                    .map(|&x| v_amplitude * plateau(x, v_support.0, v_support.1, *taper))
                    .collect(),
            )
        }
        InitialCondition::Simple { x_u, x_v, width } => {
            require_inside(grid, "u transition", x_u - width, *x_u + grid.dx())?;
            require_inside(grid, "v transition", *x_v - grid.dx(), x_v + width)?;
            (
                xs.iter().map(|&x| step_down(x, *x_u, *width)).collect(),
                xs.iter().map(|&x| step_down(-x, -x_v, *width)).collect(),
            )
        }
        InitialCondition::Step { x0 } => {
            require_inside(grid, "step", *x0, *x0 + grid.dx())?;
            (
                xs.iter()
                    .map(|&x| if x <= *x0 { 1.0 } else { 0.0 })
                    .collect(),
                vec![0.0; grid.n],
            )
        }
        InitialCondition::Custom { u, v } => {
            if u.len() != grid.n || v.len() != grid.n {
                return Err(Error::InitialCondition(format!(
                    "custom data has {} / {} samples for {} nodes",
                    u.len(),
                    v.len(),
                    grid.n
                )));
            }
            if u.iter().chain(v).any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::InitialCondition(
                    "custom data must be finite and nonnegative".into(),
                ));
            }
            (u.clone(), v.clone())
        }
    };
    Ok(FieldState { t: 0.0, u, v })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    Euler,
    SspRk3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scheme {
    pub dt: f64,
    pub integrator: Integrator,
    /// Values below this are set to zero after each stage (0 disables).
    pub flush_below: f64,
}

impl Default for Scheme {
    fn default() -> Self {
        Scheme {
            dt: 0.004,
            integrator: Integrator::SspRk3,
            flush_below: 1e-300,
        }
    }
}

/// Lipschitz bound of the reaction terms on `[0, u_max] x [0, v_max]`.
pub fn reaction_lipschitz(params: &ModelParams, u_max: f64, v_max: f64) -> f64 {
    let ModelParams { r, a, b, .. } = *params;
    (r * (1.0 + 2.0 * u_max + a * v_max)).max(1.0 + 2.0 * v_max + b * u_max)
}

/// Largest monotone time step: `dt (2 max(d, 1) / dx^2 + L_reac) <= 1`.
pub fn stability_bound(params: &ModelParams, grid: &Grid, u_max: f64, v_max: f64) -> f64 {
    let dx = grid.dx();
    1.0 / (2.0 * params.d.max(1.0) / (dx * dx) + reaction_lipschitz(params, u_max, v_max))
}

/// Linear spreading speed of the discretized scalar equation
/// `w_t = d w_xx + r w`: `min over lambda > 0` of `ln G(lambda) / (dt lambda)`,
/// where `G` is the one-step amplification of `exp(-lambda x)`.
pub fn discrete_linear_speed(d: f64, r: f64, dx: f64, dt: f64, integrator: Integrator) -> f64 {
    let growth = |lam: f64| {
        let z = dt * (d * 2.0 * ((lam * dx).cosh() - 1.0) / (dx * dx) + r);
        let g = match integrator {
            Integrator::Euler => 1.0 + z,
            Integrator::SspRk3 => 1.0 + z + z * z / 2.0 + z * z * z / 6.0,
        };
        g.ln() / (dt * lam)
    };
    let guess = (r / d).sqrt();
    let (mut a, mut b) = (0.05 * guess, 20.0 * guess);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    while b - a > 1e-12 * guess {
        let c = b - phi * (b - a);
        let e = a + phi * (b - a);
        if growth(c) < growth(e) {
            b = e;
        } else {
            a = c;
        }
    }
    growth(0.5 * (a + b))
}

fn box_of(state: &FieldState) -> (f64, f64) {
    (state.sup_u().max(1.0), state.sup_v().max(1.0))
}

struct Kernel<'a> {
    params: ModelParams,
    grid: &'a Grid,
    flush: f64,
}

impl Kernel<'_> {
    /// `out = alpha * base + (1 - alpha) * (cur + dt * F(cur))` node by node.
    #[allow(clippy::too_many_arguments)]
    fn stage(
        &self,
        exec: Exec,
        dt: f64,
        alpha: f64,
        base: (&[f64], &[f64]),
        cur: (&[f64], &[f64]),
        out: (&mut [f64], &mut [f64]),
    ) {
        let n = self.grid.n;
        let dx = self.grid.dx();
        let (mu_u, mu_v) = (self.params.d / (dx * dx), 1.0 / (dx * dx));
        let ModelParams { r, a, b, .. } = self.params;
        let (cu, cv) = cur;
        let (bu, bv) = base;
        let (left, right) = (self.grid.left, self.grid.right);
        let flush = self.flush;
        par::for_each_chunk_pair_mut(exec, out.0, out.1, CHUNK, |start, ou, ov| {
            for k in 0..ou.len() {
                let i = start + k;
                let (u, v) = (cu[i], cv[i]);
                let (su, sv) = if i == 0 {
                    match left {
                        Boundary::Pinned => (2.0 * u, 2.0 * v),
                        Boundary::ZeroFlux => (2.0 * cu[1], 2.0 * cv[1]),
                    }
                } else if i == n - 1 {
                    match right {
                        Boundary::Pinned => (2.0 * u, 2.0 * v),
                        Boundary::ZeroFlux => (2.0 * cu[n - 2], 2.0 * cv[n - 2]),
                    }
                } else {
                    (cu[i - 1] + cu[i + 1], cv[i - 1] + cv[i + 1])
                };
                let pinned = (i == 0 && left == Boundary::Pinned)
                    || (i == n - 1 && right == Boundary::Pinned);
                let (fu, fv) = if pinned {
                    (0.0, 0.0)
                } else {
                    (r * u * (1.0 - u - a * v), v * (1.0 - v - b * u))
                };
                let eu = u + dt * (mu_u * (su - 2.0 * u) + fu);
                let ev = v + dt * (mu_v * (sv - 2.0 * v) + fv);
                let (mut nu, mut nv) = if alpha == 0.0 {
                    (eu, ev)
                } else {
                    (
                        alpha * bu[i] + (1.0 - alpha) * eu,
                        alpha * bv[i] + (1.0 - alpha) * ev,
                    )
                };
                if !(nu >= flush) {
                    nu = 0.0;
                }
                if !(nv >= flush) {
                    nv = 0.0;
                }
                ou[k] = nu;
                ov[k] = nv;
            }
        });
    }
}

struct Buffers {
    u1: Vec<f64>,
    v1: Vec<f64>,
    u2: Vec<f64>,
    v2: Vec<f64>,
}

impl Buffers {
    fn new(n: usize) -> Self {
        Buffers {
            u1: vec![0.0; n],
            v1: vec![0.0; n],
            u2: vec![0.0; n],
            v2: vec![0.0; n],
        }
    }
}

fn advance(
    k: &Kernel,
    exec: Exec,
    integrator: Integrator,
    dt: f64,
    state: &mut FieldState,
    buf: &mut Buffers,
) {
    match integrator {
        Integrator::Euler => {
            k.stage(
                exec,
                dt,
                0.0,
                (&state.u, &state.v),
                (&state.u, &state.v),
                (&mut buf.u1, &mut buf.v1),
            );
            std::mem::swap(&mut state.u, &mut buf.u1);
            std::mem::swap(&mut state.v, &mut buf.v1);
        }
        Integrator::SspRk3 => {
            k.stage(
                exec,
                dt,
                0.0,
                (&state.u, &state.v),
                (&state.u, &state.v),
                (&mut buf.u1, &mut buf.v1),
            );
            k.stage(
                exec,
                dt,
                0.75,
                (&state.u, &state.v),
                (&buf.u1, &buf.v1),
                (&mut buf.u2, &mut buf.v2),
            );
            k.stage(
                exec,
                dt,
                1.0 / 3.0,
                (&state.u, &state.v),
                (&buf.u2, &buf.v2),
                (&mut buf.u1, &mut buf.v1),
            );
            std::mem::swap(&mut state.u, &mut buf.u1);
            std::mem::swap(&mut state.v, &mut buf.v1);
        }
    }
}

/// One step of size `dt`. The stability bound is evaluated on the box spanned
/// by the current state.
pub fn step(
    state: &FieldState,
    params: &ModelParams,
    grid: &Grid,
    scheme: &Scheme,
    exec: Exec,
) -> Result<FieldState> {
    params.validate()?;
    check_state(state, grid)?;
    let (um, vm) = box_of(state);
    let bound = stability_bound(params, grid, um, vm);
    if !(scheme.dt > 0.0 && scheme.dt <= bound) {
        return Err(Error::UnstableStep {
            dt: scheme.dt,
            bound,
        });
    }
    let k = Kernel {
        params: *params,
        grid,
        flush: scheme.flush_below,
    };
    let mut next = state.clone();
    let mut buf = Buffers::new(grid.n);
    advance(&k, exec, scheme.integrator, scheme.dt, &mut next, &mut buf);
    next.t = state.t + scheme.dt;
    Ok(next)
}

fn check_state(state: &FieldState, grid: &Grid) -> Result<()> {
    if state.u.len() != grid.n || state.v.len() != grid.n {
        return Err(Error::Mismatch(format!(
            "state has {} / {} samples, grid has {} nodes",
            state.u.len(),
            state.v.len(),
            grid.n
        )));
    }
    Ok(())
}

/// True when `field` crosses one of the guard levels within `GUARD_CELLS` nodes of an end.
fn touches_boundary(field: &[f64]) -> bool {
    let n = field.len();
    let m = GUARD_CELLS.min(n / 2);
    let crosses = |i: usize| {
        GUARD_LEVELS
            .iter()
            .any(|&l| (field[i] - l) * (field[i + 1] - l) <= 0.0 && field[i] != field[i + 1])
    };
    (0..m).any(crosses) || (n - 1 - m..n - 1).any(crosses)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub final_state: FieldState,
    pub steps: usize,
    pub dt_bound: f64,
    pub boundary_contact: Option<f64>,
    pub warnings: Vec<String>,
}

fn validate_times(t0: f64, t_end: f64, times: &[f64]) -> Result<()> {
    if !(t_end.is_finite() && t_end >= t0) {
        return Err(Error::InvalidParameter {
            name: "t_end",
            value: t_end,
            rule: "final time must not precede the initial time",
        });
    }
    for w in times.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::InvalidParameter {
                name: "output_times",
                value: w[1],
                rule: "output times must be strictly increasing",
            });
        }
    }
    if let (Some(&first), Some(&last)) = (times.first(), times.last()) {
        if first < t0 || last > t_end {
            return Err(Error::InvalidParameter {
                name: "output_times",
                value: if first < t0 { first } else { last },
                rule: "output times must lie in [t0, t_end]",
            });
        }
    }
    Ok(())
}

/// Integrate from `initial` to `t_end`, calling `observer` at each output time.
///
/// The step between consecutive stops is `dt` shrunk so that every stop is hit
/// exactly.
#[allow(clippy::too_many_arguments)]
pub fn simulate_observed(
    params: &ModelParams,
    grid: &Grid,
    initial: &FieldState,
    scheme: &Scheme,
    t_end: f64,
    output_times: &[f64],
    exec: Exec,
    mut observer: impl FnMut(&FieldState),
) -> Result<RunSummary> {
    params.validate()?;
    grid.validate()?;
    check_state(initial, grid)?;
    validate_times(initial.t, t_end, output_times)?;
    let (um, vm) = box_of(initial);
    let bound = stability_bound(params, grid, um, vm);
    if !(scheme.dt > 0.0 && scheme.dt <= bound) {
        return Err(Error::UnstableStep {
            dt: scheme.dt,
            bound,
        });
    }
    let k = Kernel {
        params: *params,
        grid,
        flush: scheme.flush_below,
    };
    let mut state = initial.clone();
    let mut buf = Buffers::new(grid.n);
    let mut steps = 0;
    let mut contact = None;
    let mut stops: Vec<(f64, bool)> = output_times.iter().map(|&t| (t, true)).collect();
    if stops.last().is_none_or(|s| s.0 < t_end) {
        stops.push((t_end, false));
    }
    for (t_stop, emit) in stops {
        let span = t_stop - state.t;
        if span > 0.0 {
            let n = (span / scheme.dt - 1e-9).ceil().max(1.0) as usize;
            let dt = span / n as f64;
            for _ in 0..n {
                advance(&k, exec, scheme.integrator, dt, &mut state, &mut buf);
            }
            steps += n;
            state.t = t_stop;
        }
        if contact.is_none() && (touches_boundary(&state.u) || touches_boundary(&state.v)) {
            log::warn!(
                "a front is within {GUARD_CELLS} dx of the boundary at t = {}",
                state.t
            );
            contact = Some(state.t);
        }
        if emit {
            observer(&state);
        }
    }
    let warnings = contact
        .map(|t| {
            vec![format!(
                "front within {GUARD_CELLS} dx of a boundary from t = {t}"
            )]
        })
        .unwrap_or_default();
    Ok(RunSummary {
        final_state: state,
        steps,
        dt_bound: bound,
        boundary_contact: contact,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub params: ModelParams,
    pub grid: Grid,
    pub scheme: Scheme,
    pub snapshots: Vec<FieldState>,
    pub steps: usize,
    pub dt_bound: f64,
    pub boundary_contact: Option<f64>,
    pub warnings: Vec<String>,
}

pub fn simulate(
    params: &ModelParams,
    grid: &Grid,
    initial: &FieldState,
    scheme: &Scheme,
    t_end: f64,
    output_times: &[f64],
    exec: Exec,
) -> Result<Trajectory> {
    let mut snapshots = Vec::with_capacity(output_times.len());
    let summary = simulate_observed(
        params,
        grid,
        initial,
        scheme,
        t_end,
        output_times,
        exec,
        |s| snapshots.push(s.clone()),
    )?;
    Ok(Trajectory {
        params: *params,
        grid: *grid,
        scheme: *scheme,
        snapshots,
        steps: summary.steps,
        dt_bound: summary.dt_bound,
        boundary_contact: summary.boundary_contact,
        warnings: summary.warnings,
    })
}

/// Evenly spaced output times `t0 + k * every` up to and including `t_end`.
pub fn output_grid(t0: f64, t_end: f64, every: f64) -> Vec<f64> {
    let n = ((t_end - t0) / every + 1e-9).floor() as usize;
    (0..=n).map(|k| t0 + k as f64 * every).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Species {
    U,
    V,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderViolation {
    pub t: f64,
    pub x: f64,
    pub species: Species,
    pub amount: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// Largest of `u_lower - u_upper` and `v_upper - v_lower`; 0 if none is positive.
    pub max_violation: f64,
    pub worst: Option<OrderViolation>,
    pub snapshots: usize,
    pub tol: f64,
    pub ordered: bool,
}

/// Check that `upper` stays above `lower` in the competitive order.
pub fn comparison_check(
    upper: &Trajectory,
    lower: &Trajectory,
    tol: f64,
) -> Result<ComparisonReport> {
    if !upper.grid.same_as(&lower.grid) {
        return Err(Error::Mismatch("grids differ".into()));
    }
    if upper.params != lower.params {
        return Err(Error::Mismatch("model parameters differ".into()));
    }
    if upper.snapshots.len() != lower.snapshots.len()
        || upper
            .snapshots
            .iter()
            .zip(&lower.snapshots)
            .any(|(a, b)| a.t != b.t)
    {
        return Err(Error::Mismatch("snapshot times differ".into()));
    }
    let mut worst: Option<OrderViolation> = None;
    for (hi, lo) in upper.snapshots.iter().zip(&lower.snapshots) {
        for i in 0..upper.grid.n {
            for (species, amount) in [
                (Species::U, lo.u[i] - hi.u[i]),
                (Species::V, hi.v[i] - lo.v[i]),
            ] {
                if amount > 0.0 && worst.is_none_or(|w| amount > w.amount) {
                    worst = Some(OrderViolation {
                        t: hi.t,
                        x: upper.grid.x(i),
                        species,
                        amount,
                    });
                }
            }
        }
    }
    let max_violation = worst.map_or(0.0, |w| w.amount);
    Ok(ComparisonReport {
        max_violation,
        worst,
        snapshots: upper.snapshots.len(),
        tol,
        ordered: max_violation <= tol,
    })
}

impl Trajectory {
    /// Long-format CSV with columns `t,x,u,v`.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "x", "u", "v"])?;
        for s in &self.snapshots {
            for i in 0..self.grid.n {
                w.write_record(&[
                    format!("{}", s.t),
                    format!("{}", self.grid.x(i)),
                    format!("{:.17e}", s.u[i]),
                    format!("{:.17e}", s.v[i]),
                ])?;
            }
        }
        w.flush()
    }

    pub fn metadata(&self) -> serde_json::Value {
        serde_json::json!({
            "params": self.params,
            "grid": self.grid,
            "dx": self.grid.dx(),
            "scheme": self.scheme,
            "scheme_version": SCHEME_VERSION,
            "dt_bound": self.dt_bound,
            "steps": self.steps,
            "snapshot_times": self.snapshots.iter().map(|s| s.t).collect::<Vec<_>>(),
            "boundary_contact": self.boundary_contact,
            "warnings": self.warnings,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> ModelParams {
        ModelParams::new(1.0, 1.0, 2.0, 3.0).unwrap()
    }

    fn small_grid() -> Grid {
        Grid::new(-10.0, 10.0, 201, Boundary::ZeroFlux, Boundary::ZeroFlux).unwrap()
    }

    #[test]
    fn compact_supports_are_exact() {
        let g = Grid::with_spacing(-30.0, 30.0, 0.1).unwrap();
        let ic = InitialCondition::A2 {
            u_support: (-5.0, 5.0),
            u_amplitude: 1.0,
            v_support: (10.0, 20.0),
            v_amplitude: 1.0,
            taper: 1.0,
        };
        let s = make_initial(&g, &ic).unwrap();
        for i in 0..g.n {
            let x = g.x(i);
            if x.abs() > 5.0 {
                assert_eq!(s.u[i], 0.0);
            }
            if !(10.0..=20.0).contains(&x) {
                assert_eq!(s.v[i], 0.0);
            }
        }
        assert!(s.sup_u() == 1.0 && s.sup_v() == 1.0);
    }

    #[test]
    fn a1_background_and_lower_bound() {
        let g = Grid::with_spacing(-30.0, 30.0, 0.1).unwrap();
        let ic = InitialCondition::A1 {
            u_support: (-5.0, 5.0),
            u_amplitude: 1.0,
            taper: 1.0,
            v_background: 1.0,
            v_inside: 1.0,
        };
        let s = make_initial(&g, &ic).unwrap();
        assert_eq!(s.v.iter().cloned().fold(f64::INFINITY, f64::min), 1.0);
        let ic = InitialCondition::A1 {
            u_support: (-5.0, 5.0),
            u_amplitude: 1.0,
            taper: 1.0,
            v_background: 1.0,
            v_inside: 1e-6,
        };
        let s = make_initial(&g, &ic).unwrap();
        assert_eq!(s.v.iter().cloned().fold(f64::INFINITY, f64::min), 1e-6);
    }

    #[test]
    fn simple_ic_limits_and_disjointness() {
        let g = Grid::with_spacing(-30.0, 30.0, 0.1).unwrap();
        let s = make_initial(
            &g,
            &InitialCondition::Simple {
                x_u: 0.0,
                x_v: 0.0,
                width: 2.0,
            },
        )
        .unwrap();
        assert_eq!(s.u[0], 1.0);
        assert_eq!(s.v[g.n - 1], 1.0);
        assert!(s.u.iter().zip(&s.v).all(|(a, b)| a * b == 0.0));
    }

    #[test]
    fn support_outside_grid_rejected() {
        let g = Grid::with_spacing(-10.0, 10.0, 0.1).unwrap();
        let ic = InitialCondition::A2 {
            u_support: (-9.5, 0.0),
            u_amplitude: 1.0,
            v_support: (1.0, 2.0),
            v_amplitude: 1.0,
            taper: 0.5,
        };
        assert!(matches!(
            make_initial(&g, &ic),
            Err(Error::InitialCondition(_))
        ));
    }

    #[test]
    fn equilibria_are_fixed() {
        let g = small_grid();
        let scheme = Scheme::default();
        for (u0, v0) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)] {
            let s = FieldState {
                t: 0.0,
                u: vec![u0; g.n],
                v: vec![v0; g.n],
            };
            let tr = simulate(&params(), &g, &s, &scheme, 1.0, &[1.0], Exec::Sequential).unwrap();
            let last = &tr.snapshots[0];
            assert!(last.u.iter().all(|&x| x == u0) && last.v.iter().all(|&x| x == v0));
        }
    }

    #[test]
    fn unstable_step_rejected() {
        let g = small_grid();
        let s = make_initial(
            &g,
            &InitialCondition::A2 {
                u_support: (-2.0, 2.0),
                u_amplitude: 1.0,
                v_support: (3.0, 5.0),
                v_amplitude: 1.0,
                taper: 0.5,
            },
        )
        .unwrap();
        let scheme = Scheme {
            dt: 0.01,
            ..Scheme::default()
        };
        assert!(matches!(
            step(&s, &params(), &g, &scheme, Exec::Sequential),
            Err(Error::UnstableStep { .. })
        ));
    }

    #[test]
    fn pinned_ends_hold_their_values() {
        let g = Grid::new(-20.0, 20.0, 401, Boundary::Pinned, Boundary::Pinned).unwrap();
        let s = make_initial(
            &g,
            &InitialCondition::Simple {
                x_u: -1.0,
                x_v: 1.0,
                width: 1.0,
            },
        )
        .unwrap();
        let tr = simulate(
            &params(),
            &g,
            &s,
            &Scheme::default(),
            5.0,
            &[5.0],
            Exec::Sequential,
        )
        .unwrap();
        let last = &tr.snapshots[0];
        assert_eq!((last.u[0], last.v[0]), (1.0, 0.0));
        assert_eq!((last.u[g.n - 1], last.v[g.n - 1]), (0.0, 1.0));
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let g = Grid::with_spacing(-60.0, 60.0, 0.01).unwrap();
        let s = make_initial(
            &g,
            &InitialCondition::A2 {
                u_support: (-5.0, 0.0),
                u_amplitude: 1.0,
                v_support: (0.0, 5.0),
                v_amplitude: 1.0,
                taper: 1.0,
            },
        )
        .unwrap();
        let scheme = Scheme {
            dt: 2e-5,
            ..Scheme::default()
        };
        let a = simulate(&params(), &g, &s, &scheme, 0.01, &[0.01], Exec::Sequential).unwrap();
        let b = simulate(&params(), &g, &s, &scheme, 0.01, &[0.01], Exec::Parallel).unwrap();
        assert_eq!(a.snapshots, b.snapshots);
    }

    #[test]
    fn mirrored_data_give_mirrored_runs() {
        let g = small_grid();
        let s = make_initial(
            &g,
            &InitialCondition::A2 {
                u_support: (-6.0, -1.0),
                u_amplitude: 0.8,
                v_support: (0.5, 7.0),
                v_amplitude: 1.2,
                taper: 1.0,
            },
        )
        .unwrap();
        let sc = Scheme::default();
        let a = simulate(&params(), &g, &s, &sc, 3.0, &[3.0], Exec::Sequential).unwrap();
        let b = simulate(
            &params(),
            &g,
            &s.mirrored(),
            &sc,
            3.0,
            &[3.0],
            Exec::Sequential,
        )
        .unwrap();
        assert_eq!(a.snapshots[0].mirrored(), b.snapshots[0]);
    }

    #[test]
    fn comparison_detects_corruption() {
        let g = small_grid();
        let s = make_initial(
            &g,
            &InitialCondition::A2 {
                u_support: (-3.0, 0.0),
                u_amplitude: 1.0,
                v_support: (0.0, 3.0),
                v_amplitude: 1.0,
                taper: 1.0,
            },
        )
        .unwrap();
        let tr = simulate(
            &params(),
            &g,
            &s,
            &Scheme::default(),
            2.0,
            &[1.0, 2.0],
            Exec::Sequential,
        )
        .unwrap();
        let same = comparison_check(&tr, &tr, 0.0).unwrap();
        assert_eq!(same.max_violation, 0.0);
        assert!(same.ordered);
        let mut bad = tr.clone();
        let snap = &mut bad.snapshots[1];
        std::mem::swap(&mut snap.u, &mut snap.v);
        let rep = comparison_check(&bad, &tr, 1e-10).unwrap();
        assert!(!rep.ordered && rep.worst.unwrap().t == 2.0);
        let mut other = tr.clone();
        other.grid.x_max = 11.0;
        assert!(comparison_check(&other, &tr, 0.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn box_and_positivity(
            ua in 0.1f64..2.5, va in 0.1f64..2.5,
            c1 in -6.0f64..0.0, c2 in 0.0f64..6.0,
            euler in any::<bool>(),
        ) {
            let g = small_grid();
            let s = make_initial(&g, &InitialCondition::A2 {
                u_support: (c1 - 2.0, c1 + 2.0),
                u_amplitude: ua,
                v_support: (c2 - 2.0, c2 + 2.0),
                v_amplitude: va,
                taper: 0.5,
            }).unwrap();
            let (um, vm) = (ua.max(1.0), va.max(1.0));
            let p = params();
            let dt = 0.9 * stability_bound(&p, &g, um, vm);
            let sc = Scheme { dt, integrator: if euler { Integrator::Euler } else { Integrator::SspRk3 }, flush_below: 0.0 };
            let tr = simulate(&p, &g, &s, &sc, 3.0, &output_grid(0.5, 3.0, 0.5), Exec::Sequential).unwrap();
            for snap in &tr.snapshots {
                prop_assert!(snap.u.iter().all(|&x| x >= 0.0 && x <= um));
                prop_assert!(snap.v.iter().all(|&x| x >= 0.0 && x <= vm));
            }
        }
    }

    #[test]
    fn discrete_speed_tends_to_continuum() {
        let fine = discrete_linear_speed(1.0, 1.0, 1e-3, 1e-7, Integrator::SspRk3);
        assert!((fine - 2.0).abs() < 1e-5);
        let c = discrete_linear_speed(1.0, 1.0, 0.1, 0.004, Integrator::SspRk3);
        assert!(c > 2.0 && c < 2.002);
        assert!(discrete_linear_speed(1.0, 1.0, 0.1, 0.004, Integrator::Euler) < 2.0);
    }
}
