//! Level sets, front positions, speeds, the logarithmic delay, distances to
//! translated profiles and the terrace diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SpeedSet;
use crate::pde::{FieldState, Grid, Species, Trajectory, GUARD_CELLS};
use crate::stats::{linear_fit, LineFit};
use crate::wave::{WaveKind, WaveProfile};

fn field(state: &FieldState, species: Species) -> &[f64] {
    match species {
        Species::U => &state.u,
        Species::V => &state.v,
    }
}

/// Crossings of `level` on `x > 0`, linearly interpolated, ascending.
pub fn level_set(
    state: &FieldState,
    grid: &Grid,
    species: Species,
    level: f64,
) -> Result<Vec<f64>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter {
            name: "level",
            value: level,
            rule: "level must lie in (0, 1)",
        });
    }
    Ok(crossings(field(state, species), grid, level, 0.0))
}

fn crossings(y: &[f64], grid: &Grid, level: f64, x_from: f64) -> Vec<f64> {
    let dx = grid.dx();
    let mut out = Vec::new();
    for i in 0..grid.n - 1 {
        if grid.x(i + 1) <= x_from {
            continue;
        }
        let (a, b) = (y[i] - level, y[i + 1] - level);
        if (a >= 0.0) != (b >= 0.0) {
            let x = grid.x(i) + dx * a / (a - b);
            if x > x_from {
                out.push(x);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extreme {
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontTrace {
    pub level: f64,
    pub species: Species,
    pub times: Vec<f64>,
    pub positions_min: Vec<Option<f64>>,
    pub positions_max: Vec<Option<f64>>,
    pub boundary_contact: Option<f64>,
}

impl FrontTrace {
    pub fn new(species: Species, level: f64) -> Self {
        FrontTrace {
            level,
            species,
            times: Vec::new(),
            positions_min: Vec::new(),
            positions_max: Vec::new(),
            boundary_contact: None,
        }
    }

    /// Append the level-set extremes of one snapshot.
    pub fn push(&mut self, state: &FieldState, grid: &Grid) {
        let set = crossings(field(state, self.species), grid, self.level, 0.0);
        self.times.push(state.t);
        self.positions_min.push(set.first().copied());
        self.positions_max.push(set.last().copied());
    }

    pub fn positions(&self, extreme: Extreme) -> &[Option<f64>] {
        match extreme {
            Extreme::Min => &self.positions_min,
            Extreme::Max => &self.positions_max,
        }
    }

    /// `(t, x)` pairs with `t` in `[t0, t1]`; errors on empty snapshots.
    pub fn window(&self, extreme: Extreme, window: (f64, f64)) -> Result<(Vec<f64>, Vec<f64>)> {
        let (mut ts, mut xs) = (Vec::new(), Vec::new());
        for (&t, p) in self.times.iter().zip(self.positions(extreme)) {
            if t < window.0 || t > window.1 {
                continue;
            }
            match p {
                Some(x) => {
                    ts.push(t);
                    xs.push(*x);
                }
                None => return Err(Error::BadWindow(format!("empty level set at t = {t}"))),
            }
        }
        Ok((ts, xs))
    }

    /// Columns `t,x_min,x_max`; empty level sets are left blank.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "x_min", "x_max"])?;
        let cell = |p: &Option<f64>| p.map(|x| format!("{x}")).unwrap_or_default();
        for i in 0..self.times.len() {
            w.write_record(&[
                format!("{}", self.times[i]),
                cell(&self.positions_min[i]),
                cell(&self.positions_max[i]),
            ])?;
        }
        w.flush()
    }
}

pub fn track_front(traj: &Trajectory, species: Species, level: f64) -> Result<FrontTrace> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter {
            name: "level",
            value: level,
            rule: "level must lie in (0, 1)",
        });
    }
    let mut trace = FrontTrace::new(species, level);
    for s in &traj.snapshots {
        trace.push(s, &traj.grid);
    }
    trace.boundary_contact = traj.boundary_contact;
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedEstimate {
    pub speed: f64,
    /// Two standard errors of the slope.
    pub half_width: f64,
    pub samples: usize,
    pub window: (f64, f64),
}

pub fn estimate_speed(
    trace: &FrontTrace,
    extreme: Extreme,
    window: (f64, f64),
) -> Result<SpeedEstimate> {
    let (ts, xs) = trace.window(extreme, window)?;
    if ts.len() < 10 {
        return Err(Error::BadWindow(format!(
            "{} samples in window, need 10",
            ts.len()
        )));
    }
    let fit = linear_fit(&ts, &xs).ok_or_else(|| Error::BadWindow("degenerate window".into()))?;
    Ok(SpeedEstimate {
        speed: fit.slope,
        half_width: 2.0 * fit.slope_se,
        samples: ts.len(),
        window,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BramsonFit {
    pub speed: f64,
    pub kappa: f64,
    pub offset: f64,
    pub t0: f64,
    pub window: (f64, f64),
    pub times: Vec<f64>,
    /// `c t - kappa ln(t + t0) - offset - x(t)` at the window samples.
    pub omega: Vec<f64>,
    pub sup_omega: f64,
    pub r_squared: f64,
}

/// Regress `c t - x(t)` on `ln(t + t0)`; `t0` is picked from `t0_grid` by least squares.
pub fn fit_bramson(
    trace: &FrontTrace,
    extreme: Extreme,
    c: f64,
    window: (f64, f64),
    t0_grid: &[f64],
) -> Result<BramsonFit> {
    if window.0 < 20.0 {
        return Err(Error::BadWindow(format!(
            "window must start at t >= 20, got {}",
            window.0
        )));
    }
    let (ts, xs) = trace.window(extreme, window)?;
    if ts.len() < 10 {
        return Err(Error::BadWindow(format!(
            "{} samples in window, need 10",
            ts.len()
        )));
    }
    let y: Vec<f64> = ts.iter().zip(&xs).map(|(t, x)| c * t - x).collect();
    let grid: &[f64] = if t0_grid.is_empty() { &[0.0] } else { t0_grid };
    let mut best: Option<(f64, f64, LineFit)> = None;
    for &t0 in grid {
        if ts[0] + t0 <= 0.0 {
            continue;
        }
        let lx: Vec<f64> = ts.iter().map(|t| (t + t0).ln()).collect();
        if lx[lx.len() - 1] - lx[0] < 0.3 {
            continue;
        }
        if let Some(fit) = linear_fit(&lx, &y) {
            let sse = (1.0 - fit.r_squared) * y.iter().map(|v| v * v).sum::<f64>();
            let sse = if fit.r_squared.is_finite() {
                sse
            } else {
                f64::INFINITY
            };
            if best.as_ref().is_none_or(|b| sse < b.0) {
                best = Some((sse, t0, fit));
            }
        }
    }
    let (_, t0, fit) =
        best.ok_or_else(|| Error::BadWindow("log regressor too flat over the window".into()))?;
    let omega: Vec<f64> = ts
        .iter()
        .zip(&y)
        .map(|(t, yv)| yv - fit.slope * (t + t0).ln() - fit.intercept)
        .collect();
    let sup_omega = omega.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    Ok(BramsonFit {
        speed: c,
        kappa: fit.slope,
        offset: fit.intercept,
        t0,
        window,
        times: ts,
        omega,
        sup_omega,
        r_squared: fit.r_squared,
    })
}

impl BramsonFit {
    /// Columns `t,omega`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "omega"])?;
        for (t, o) in self.times.iter().zip(&self.omega) {
            w.write_record(&[format!("{t}"), format!("{o:e}")])?;
        }
        w.flush()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftEstimate {
    pub t: f64,
    pub shift: f64,
    pub distance: f64,
    pub window: (f64, f64),
}

/// Sup over the window nodes of `|u - U(x - offset - h)| + |v - V(x - offset - h)|`.
fn sup_distance(
    state: &FieldState,
    grid: &Grid,
    wave: &WaveProfile,
    offset: f64,
    h: f64,
    nodes: (usize, usize),
) -> Result<f64> {
    let mut worst = 0.0f64;
    for i in nodes.0..=nodes.1 {
        let s = wave.sample(grid.x(i) - offset - h)?;
        worst = worst.max((state.u[i] - s.u.value).abs() + (state.v[i] - s.v.value).abs());
    }
    Ok(worst)
}

fn window_nodes(grid: &Grid, window: (f64, f64)) -> Result<(usize, usize)> {
    if !(window.1 - window.0 >= 40.0 - 1e-9) {
        return Err(Error::Precondition(format!(
            "comparison window [{}, {}] is narrower than 40",
            window.0, window.1
        )));
    }
    let dx = grid.dx();
    let lo_x = window.0.max(grid.x_min + GUARD_CELLS as f64 * dx);
    let hi_x = window.1.min(grid.x_max - GUARD_CELLS as f64 * dx);
    let lo = ((lo_x - grid.x_min) / dx).ceil() as usize;
    let hi = ((hi_x - grid.x_min) / dx).floor() as usize;
    if hi <= lo {
        return Err(Error::Precondition(
            "comparison window misses the grid".into(),
        ));
    }
    Ok((lo, hi))
}

/// Fit the translate `h` minimising the sup-distance between a snapshot and
/// the profile placed at `x - offset - h`.
///
/// The bracket `h_guess +- reach` is scanned on 81 points first; more than one
/// separated local minimum is reported as [`Error::NotUnimodal`]. The best
/// bracket is then refined by golden-section search.
pub fn align_profile(
    state: &FieldState,
    grid: &Grid,
    wave: &WaveProfile,
    offset: f64,
    window: (f64, f64),
    h_guess: f64,
    reach: f64,
) -> Result<ShiftEstimate> {
    let nodes = window_nodes(grid, window)?;
    let f = |h: f64| sup_distance(state, grid, wave, offset, h, nodes);
    let m = 81;
    let hs: Vec<f64> = (0..m)
        .map(|k| h_guess - reach + 2.0 * reach * k as f64 / (m - 1) as f64)
        .collect();
    let vals: Vec<f64> = hs.iter().map(|&h| f(h)).collect::<Result<_>>()?;
    let mut minima = Vec::new();
    for k in 0..m {
        let left = k == 0 || vals[k] < vals[k - 1];
        let right = k == m - 1 || vals[k] <= vals[k + 1];
        if left && right {
            minima.push(k);
        }
    }
    let best_val = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    // Shallow ripples from interpolation are not separate basins.
    let deep: Vec<usize> = minima
        .iter()
        .copied()
        .filter(|&k| vals[k] <= best_val + 0.1 * (best_val + 1e-3))
        .collect();
    let spread = deep
        .iter()
        .map(|&k| hs[k])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), h| {
            (a.min(h), b.max(h))
        });
    if deep.len() > 1 && spread.1 - spread.0 > 4.0 * (hs[1] - hs[0]) {
        return Err(Error::NotUnimodal {
            minima: deep.iter().map(|&k| hs[k]).collect(),
        });
    }
    let k = *deep
        .first()
        .ok_or_else(|| Error::NotUnimodal { minima: vec![] })?;
    let (mut a, mut b) = (hs[k.saturating_sub(1)], hs[(k + 1).min(m - 1)]);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while b - a > 1e-7 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d)?;
        }
    }
    let shift = 0.5 * (a + b);
    Ok(ShiftEstimate {
        t: state.t,
        shift,
        distance: f(shift)?,
        window,
    })
}

/// Shift of a bistable front moving at its own speed: the snapshot is
/// compared with `U(x - c t - h)`, `V(x - c t - h)` on a window of width >= 40
/// centered at `expected_center`.
pub fn estimate_shift(
    state: &FieldState,
    grid: &Grid,
    wave: &WaveProfile,
    expected_center: f64,
    half_width: f64,
) -> Result<ShiftEstimate> {
    if wave.kind != WaveKind::Bistable {
        return Err(Error::WrongWaveKind(format!(
            "expected a bistable front, got {:?}",
            wave.kind
        )));
    }
    let offset = wave.speed * state.t;
    let guess = expected_center - offset - wave.phase_anchor;
    align_profile(
        state,
        grid,
        wave,
        offset,
        (expected_center - half_width, expected_center + half_width),
        guess,
        4.0,
    )
}

/// Largest pairwise gap of the fitted shifts.
pub fn shift_gap(series: &[ShiftEstimate]) -> f64 {
    let (lo, hi) = series
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| {
            (a.min(s.shift), b.max(s.shift))
        });
    if series.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

/// Log-linear decay fit of a positive series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecaySeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub window: (f64, f64),
    /// Slope of `ln(value)` against `t` over the window.
    pub slope: f64,
    pub r_squared: f64,
    pub samples: usize,
    /// Window samples dropped because they were not above `floor`.
    pub dropped: usize,
    pub truncated: bool,
}

pub fn log_linear_decay(
    times: &[f64],
    values: &[f64],
    window: (f64, f64),
    floor: f64,
) -> Result<DecaySeries> {
    let (mut ts, mut ys, mut dropped) = (Vec::new(), Vec::new(), 0);
    for (&t, &v) in times.iter().zip(values) {
        if t < window.0 || t > window.1 {
            continue;
        }
        if v > floor {
            ts.push(t);
            ys.push(v.ln());
        } else {
            dropped += 1;
        }
    }
    if ts.len() < 5 {
        return Err(Error::BadWindow(format!(
            "{} usable samples in the decay window",
            ts.len()
        )));
    }
    let fit =
        linear_fit(&ts, &ys).ok_or_else(|| Error::BadWindow("degenerate decay window".into()))?;
    Ok(DecaySeries {
        times: times.to_vec(),
        values: values.to_vec(),
        window,
        slope: fit.slope,
        r_squared: fit.r_squared,
        samples: ts.len(),
        dropped,
        truncated: false,
    })
}

/// Values of a positive quantity below this are treated as lost to rounding.
pub const DECAY_FLOOR: f64 = 1e-250;

/// `max |u - 1| + max v` over `|x| <= c t`, one value per snapshot, with a
/// log-linear fit over the second half of the run.
/// `sup |u - 1| + sup v` over `|x| <= c t`, and whether that cone leaves the grid.
pub fn segregation_value(state: &FieldState, grid: &Grid, c: f64) -> (f64, bool) {
    let reach = c * state.t;
    let truncated = -reach < grid.x_min || reach > grid.x_max;
    let (mut du, mut mv) = (0.0f64, 0.0f64);
    for i in 0..grid.n {
        if grid.x(i).abs() <= reach + 1e-12 {
            du = du.max((state.u[i] - 1.0).abs());
            mv = mv.max(state.v[i]);
        }
    }
    (du + mv, truncated)
}

/// Segregation metric per snapshot, fitted over the second half of the run.
pub fn segregation_metric(traj: &Trajectory, c: f64) -> Result<DecaySeries> {
    let mut truncated = false;
    let mut times = Vec::new();
    let mut values = Vec::new();
    for s in &traj.snapshots {
        let (v, cut) = segregation_value(s, &traj.grid, c);
        truncated |= cut;
        times.push(s.t);
        values.push(v);
    }
    segregation_fit(&times, &values, truncated)
}

/// Fit of a segregation series over the second half of its time span.
pub fn segregation_fit(times: &[f64], values: &[f64], truncated: bool) -> Result<DecaySeries> {
    let t_end = times.last().copied().unwrap_or(0.0);
    let t_start = times.first().copied().unwrap_or(0.0);
    let mut out = log_linear_decay(times, values, (0.5 * (t_start + t_end), t_end), DECAY_FLOOR)?;
    out.truncated = truncated;
    Ok(out)
}

/// `sup_{x >= 0}` of one species.
pub fn sup_positive(state: &FieldState, grid: &Grid, species: Species) -> f64 {
    let f = field(state, species);
    (0..grid.n)
        .filter(|&i| grid.x(i) >= 0.0)
        .fold(0.0f64, |m, i| m.max(f[i]))
}

/// `sup_{x >= 0}` of one species per snapshot with a log-linear fit over `window`.
pub fn extinction_series(
    traj: &Trajectory,
    species: Species,
    window: (f64, f64),
) -> Result<DecaySeries> {
    let times: Vec<f64> = traj.snapshots.iter().map(|s| s.t).collect();
    let values: Vec<f64> = traj
        .snapshots
        .iter()
        .map(|s| sup_positive(s, &traj.grid, species))
        .collect();
    log_linear_decay(&times, &values, window, DECAY_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerraceReport {
    pub u_speed: Option<SpeedEstimate>,
    pub v_speed: Option<SpeedEstimate>,
    pub c_uv: f64,
    pub c_0: f64,
    /// Final time of the run.
    pub t: f64,
    /// `sup u` over `x >= c_0 t` at the final time.
    pub u_beyond_midpoint: f64,
    /// Whether that sup decreased over the second half of the run.
    pub u_beyond_decreasing: bool,
    /// Distance to the shifted bistable front on `[0, c_0 t)` at the final time.
    pub bistable_zone: Option<ShiftEstimate>,
    /// Distance of `v` to the shifted KPP front on `[c_0 t, ...)` at the final time.
    pub kpp_zone: Option<ShiftEstimate>,
    pub terrace: bool,
    pub diagnostics: Vec<String>,
}

/// Streaming accumulator behind [`detect_terrace`].
#[derive(Debug, Clone)]
pub struct TerraceMonitor {
    speeds: SpeedSet,
    c_uv: f64,
    c_0: f64,
    u_trace: FrontTrace,
    v_trace: FrontTrace,
    beyond: Vec<(f64, f64)>,
}

impl TerraceMonitor {
    pub fn new(speeds: &SpeedSet) -> Result<Self> {
        if !(speeds.c_u < speeds.c_v) {
            return Err(Error::Precondition(format!(
                "a terrace needs c_u < c_v, got c_u = {} and c_v = {}",
                speeds.c_u, speeds.c_v
            )));
        }
        let c_uv = speeds
            .c_uv
            .ok_or_else(|| Error::Precondition("c_uv is unresolved".into()))?;
        Ok(TerraceMonitor {
            speeds: *speeds,
            c_uv,
            c_0: 0.5 * (c_uv + speeds.c_v),
            u_trace: FrontTrace::new(Species::U, 0.5),
            v_trace: FrontTrace::new(Species::V, 0.5),
            beyond: Vec::new(),
        })
    }

    pub fn push(&mut self, state: &FieldState, grid: &Grid) {
        self.u_trace.push(state, grid);
        self.v_trace.push(state, grid);
        let sup = (0..grid.n)
            .filter(|&i| grid.x(i) >= self.c_0 * state.t)
            .fold(0.0f64, |m, i| m.max(state.u[i]));
        self.beyond.push((state.t, sup));
    }

    /// `last` must be the most recently pushed state.
    pub fn finish(
        self,
        last: &FieldState,
        grid: &Grid,
        wave: &WaveProfile,
        kpp_v: Option<&WaveProfile>,
    ) -> Result<TerraceReport> {
        let TerraceMonitor {
            speeds,
            c_uv,
            c_0,
            u_trace,
            v_trace,
            beyond,
        } = self;
        let &(t, u_beyond_midpoint) = beyond
            .last()
            .ok_or_else(|| Error::Precondition("trajectory has no snapshots".into()))?;
        if last.t != t {
            return Err(Error::Mismatch(format!(
                "final state at t = {} but last push at t = {t}",
                last.t
            )));
        }
        let window = (0.5 * t, t);
        let mut diagnostics = Vec::new();
        let u_speed = estimate_speed(&u_trace, Extreme::Max, window)
            .map_err(|e| diagnostics.push(format!("u front: {e}")))
            .ok();
        let v_speed = estimate_speed(&v_trace, Extreme::Max, window)
            .map_err(|e| diagnostics.push(format!("v front: {e}")))
            .ok();

        let tail: Vec<f64> = beyond
            .iter()
            .filter(|b| b.0 >= window.0)
            .map(|b| b.1)
            .collect();
        let u_beyond_decreasing = tail.len() >= 2 && tail.windows(2).all(|w| w[1] <= w[0]);

        let bistable_zone = u_trace
            .positions_max
            .last()
            .copied()
            .flatten()
            .and_then(|xf| {
                let lo = (xf - 40.0).max(0.0);
                let hi = (c_0 * t).max(lo + 40.0);
                align_profile(
                    last,
                    grid,
                    wave,
                    wave.speed * t,
                    (lo, hi),
                    xf - wave.speed * t - wave.phase_anchor,
                    4.0,
                )
                .map_err(|e| diagnostics.push(format!("bistable zone: {e}")))
                .ok()
            });
        let kpp_zone = match (kpp_v, v_trace.positions_max.last().copied().flatten()) {
            (Some(k), Some(xf)) => {
                let lo = c_0 * t;
                let hi = (xf + 40.0).max(lo + 40.0);
                let offset = k.speed * t - 3.0 / k.speed * t.ln();
                align_profile(
                    last,
                    grid,
                    k,
                    offset,
                    (lo, hi),
                    xf - offset - k.phase_anchor,
                    6.0,
                )
                .map_err(|e| diagnostics.push(format!("kpp zone: {e}")))
                .ok()
            }
            _ => None,
        };

        let separated = match (u_trace.positions_max.last(), v_trace.positions_max.last()) {
            (Some(Some(xu)), Some(Some(xv))) => xv - xu > 0.25 * (speeds.c_v - c_uv) * t,
            _ => false,
        };
        if !separated {
            diagnostics.push("fronts are not separated".into());
        }
        let ordered = matches!((u_speed, v_speed), (Some(a), Some(b)) if a.speed < b.speed);
        if !ordered {
            diagnostics.push("front speeds are not ordered".into());
        }
        Ok(TerraceReport {
            u_speed,
            v_speed,
            c_uv,
            c_0,
            t,
            u_beyond_midpoint,
            u_beyond_decreasing,
            bistable_zone,
            kpp_zone,
            terrace: separated && ordered,
            diagnostics,
        })
    }
}

/// Two stacked fronts: `u` at `c_uv` behind `v` at `c_v`.
///
/// `kpp_v` (a KPP front carried in the `v` slot) enables the check ahead of
/// `c_0 t`; it is optional.
pub fn detect_terrace(
    traj: &Trajectory,
    speeds: &SpeedSet,
    wave: &WaveProfile,
    kpp_v: Option<&WaveProfile>,
) -> Result<TerraceReport> {
    let mut m = TerraceMonitor::new(speeds)?;
    for s in &traj.snapshots {
        m.push(s, &traj.grid);
    }
    let last = traj
        .snapshots
        .last()
        .ok_or_else(|| Error::Precondition("trajectory has no snapshots".into()))?;
    m.finish(last, &traj.grid, wave, kpp_v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::{Boundary, Grid};

    fn grid(lo: f64, hi: f64, dx: f64) -> Grid {
        Grid::with_spacing(lo, hi, dx).unwrap()
    }

    fn state_from(g: &Grid, f: impl Fn(f64) -> f64) -> FieldState {
        FieldState {
            t: 0.0,
            u: g.xs().into_iter().map(f).collect(),
            v: vec![0.0; g.n],
        }
    }

    #[test]
    fn linear_profile_crossing() {
        let g = grid(-1.0, 2.0, 0.01);
        let s = state_from(&g, |x| (1.0 - x).clamp(0.0, 1.0));
        let set = level_set(&s, &g, Species::U, 0.5).unwrap();
        assert_eq!(set.len(), 1);
        assert!((set[0] - 0.5).abs() < 1e-3);
    }

    #[test]
    fn no_crossing_and_bad_level() {
        let g = grid(-1.0, 2.0, 0.01);
        let s = state_from(&g, |_| 0.2);
        assert!(level_set(&s, &g, Species::U, 0.5).unwrap().is_empty());
        assert!(level_set(&s, &g, Species::U, 1.0).is_err());
    }

    #[test]
    fn two_bumps_four_crossings() {
        let g = grid(-1.0, 20.0, 0.01);
        let bump = |x: f64, c: f64| (1.0 - (x - c).abs() / 2.0).max(0.0);
        let s = state_from(&g, |x| bump(x, 5.0) + bump(x, 12.0));
        let set = level_set(&s, &g, Species::U, 0.5).unwrap();
        let expected = [4.0, 6.0, 11.0, 13.0];
        assert_eq!(set.len(), 4);
        for (a, b) in set.iter().zip(expected) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    fn synthetic(f: impl Fn(f64) -> f64, ts: &[f64]) -> FrontTrace {
        FrontTrace {
            level: 0.5,
            species: Species::U,
            times: ts.to_vec(),
            positions_min: ts.iter().map(|&t| Some(f(t))).collect(),
            positions_max: ts.iter().map(|&t| Some(f(t))).collect(),
            boundary_contact: None,
        }
    }

    #[test]
    fn bramson_on_exact_log_trace() {
        let ts: Vec<f64> = (20..=1000).map(|k| k as f64).collect();
        let tr = synthetic(|t| 2.0 * t - 1.5 * t.ln() + 3.0, &ts);
        let fit = fit_bramson(&tr, Extreme::Max, 2.0, (20.0, 1000.0), &[0.0, 1.0, 5.0]).unwrap();
        assert!((fit.kappa - 1.5).abs() < 1e-6);
        assert!((fit.offset + 3.0).abs() < 1e-6);
        assert_eq!(fit.t0, 0.0);
        assert!(fit.sup_omega < 1e-6);
        let lin = synthetic(|t| 2.0 * t, &ts);
        let fit = fit_bramson(&lin, Extreme::Max, 2.0, (20.0, 1000.0), &[0.0]).unwrap();
        assert!(fit.kappa.abs() < 1e-9);
        assert!(fit_bramson(&lin, Extreme::Max, 2.0, (10.0, 1000.0), &[0.0]).is_err());
        assert!(fit_bramson(&lin, Extreme::Max, 2.0, (20.0, 21.0), &[0.0]).is_err());
    }

    #[test]
    fn speed_with_gap_rejected() {
        let ts: Vec<f64> = (0..30).map(|k| k as f64).collect();
        let mut tr = synthetic(|t| 0.5 * t, &ts);
        tr.positions_max[10] = None;
        assert!(estimate_speed(&tr, Extreme::Max, (0.0, 29.0)).is_err());
        let s = estimate_speed(&tr, Extreme::Max, (11.0, 29.0)).unwrap();
        assert!((s.speed - 0.5).abs() < 1e-12);
    }

    #[test]
    fn shift_rejects_narrow_window_and_kpp() {
        let g = Grid::new(-50.0, 50.0, 1001, Boundary::ZeroFlux, Boundary::ZeroFlux).unwrap();
        let xi: Vec<f64> = (0..801).map(|i| -40.0 + 0.1 * i as f64).collect();
        let u: Vec<f64> = xi.iter().map(|x| 0.5 * (1.0 - (x / 2.0).tanh())).collect();
        let v: Vec<f64> = u.iter().map(|x| 1.0 - x).collect();
        let w = WaveProfile::from_samples(WaveKind::Bistable, 0.0, xi, u, v).unwrap();
        let s = state_from(&g, |x| 0.5 * (1.0 - (x / 2.0).tanh()));
        assert!(matches!(
            estimate_shift(&s, &g, &w, 0.0, 10.0),
            Err(Error::Precondition(_))
        ));
        let mut k = w.clone();
        k.kind = WaveKind::KppU;
        assert!(matches!(
            estimate_shift(&s, &g, &k, 0.0, 25.0),
            Err(Error::WrongWaveKind(_))
        ));
    }

    #[test]
    fn decay_fit_of_exponential() {
        let ts: Vec<f64> = (0..100).map(|k| k as f64).collect();
        let vs: Vec<f64> = ts.iter().map(|t| 3.0 * (-0.2 * t).exp()).collect();
        let d = log_linear_decay(&ts, &vs, (50.0, 99.0), DECAY_FLOOR).unwrap();
        assert!((d.slope + 0.2).abs() < 1e-12);
        assert!(d.r_squared > 0.999999);
    }
}
