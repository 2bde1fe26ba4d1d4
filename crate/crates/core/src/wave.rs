//! Traveling fronts of the competition system and of the single-species KPP
//! equation, sampled on a uniform grid and extended by exponential tails.
//!
//! The bistable front solves
//!
//! ```text
//! d U'' + c U' + r U (g_u - U - a V) = 0
//!   V'' + c V' +   V (g_v - V - b U) = 0
//! ```
//!
//! with `g_u = 1 - eps`, `g_v = 1 + eps` (`eps = 0` for the plain front),
//! limits `(g_u, 0)` at `-inf` and `(0, g_v)` at `+inf`, and the speed `c` as an
//! extra unknown fixed by the phase condition `U(anchor) = g_u / 2`.
//!
//! Discretization uses central differences. The speed is carried as a field
//! `c_i` tied together by difference rows `c_{i+1} - c_i = 0`, which keeps the
//! Newton matrix banded (3 unknowns per node, bandwidths 3 and 4).

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::banded::BandMatrix;
use crate::error::{Error, Result};
use crate::model::{char_roots_perturbed, CharacteristicRoots, ModelParams, DOUBLE_ROOT_TOL};
use crate::stats::linear_fit;

/// Samples whose deviation from the limit is below this are not used in tail fits.
pub const TAIL_FLOOR: f64 = 1e-12;
/// Samples whose deviation exceeds this are too close to the front core for tail fits.
pub const TAIL_CEILING: f64 = 1e-3;
/// Minimal number of usable samples for a tail fit.
pub const TAIL_MIN_SAMPLES: usize = 30;
/// How far beyond the sampled window the tail model may be evaluated.
pub const EXTRAPOLATION_LIMIT: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WaveKind {
    Bistable,
    KppU,
    KppV,
    PerturbedBistable { epsilon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WaveConfig {
    /// Half-length `L` of the computational window `[-L, L]`.
    pub half_width: f64,
    /// Number of grid nodes (odd, so that 0 is a node).
    pub nodes: usize,
    /// Max-norm residual tolerance for Newton.
    pub tol: f64,
    pub max_newton: usize,
    /// Location of the phase condition.
    pub anchor: f64,
    pub monotone_tol: f64,
    /// Required size of the slowest predicted tail at the truncation boundary.
    pub tail_target: f64,
    /// How many times the window may be enlarged by the a posteriori tail check.
    pub max_widenings: usize,
    pub continuation_steps: usize,
}

impl Default for WaveConfig {
    fn default() -> Self {
        WaveConfig {
            half_width: 60.0,
            nodes: 4801,
            tol: 1e-10,
            max_newton: 40,
            anchor: 0.0,
            monotone_tol: 1e-9,
            tail_target: 1e-8,
            max_widenings: 3,
            continuation_steps: 20,
        }
    }
}

impl WaveConfig {
    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.nodes - 1) as f64
    }

    fn validate(&self) -> Result<()> {
        if !(self.half_width.is_finite() && self.half_width > 0.0) {
            return Err(Error::InvalidParameter {
                name: "half_width",
                value: self.half_width,
                rule: "window half-length must be positive",
            });
        }
        if self.nodes < 64 {
            return Err(Error::InvalidParameter {
                name: "nodes",
                value: self.nodes as f64,
                rule: "at least 64 nodes",
            });
        }
        if self.anchor.abs() > 0.5 * self.half_width {
            return Err(Error::InvalidParameter {
                name: "anchor",
                value: self.anchor,
                rule: "phase anchor must lie in the inner half of the window",
            });
        }
        Ok(())
    }
}

/// Exponential continuation of a component beyond its last trusted sample:
/// `deviation * (|xi| / |anchor|)^gamma * exp(rate * (xi - anchor))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailModel {
    pub anchor: f64,
    pub deviation: f64,
    pub rate: f64,
    pub gamma: u8,
}

impl TailModel {
    fn flat(anchor: f64) -> Self {
        TailModel {
            anchor,
            deviation: 0.0,
            rate: 0.0,
            gamma: 0,
        }
    }

    fn eval(&self, xi: f64) -> (f64, f64) {
        if self.deviation == 0.0 {
            return (0.0, 0.0);
        }
        let mut value = self.deviation * (self.rate * (xi - self.anchor)).exp();
        let mut log_slope = self.rate;
        if self.gamma == 1 {
            value *= xi.abs() / self.anchor.abs();
            log_slope += 1.0 / xi;
        }
        (value, value * log_slope)
    }
}

/// One sampled component of a front with its limits and tails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub values: Vec<f64>,
    pub slopes: Vec<f64>,
    pub left_limit: f64,
    pub right_limit: f64,
    pub left_tail: TailModel,
    pub right_tail: TailModel,
}

/// Value of a component at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub value: f64,
    pub slope: f64,
    /// `value - left_limit`, accurate in the left tail.
    pub from_left: f64,
    /// `value - right_limit`, accurate in the right tail.
    pub from_right: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveSample {
    pub u: Point,
    pub v: Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveProfile {
    pub kind: WaveKind,
    /// Coefficients of the competition system; `None` for KPP profiles.
    pub params: Option<ModelParams>,
    /// `(d, r)` of the scalar equation for KPP profiles.
    pub kpp_coefficients: Option<(f64, f64)>,
    pub speed: f64,
    pub xi: Vec<f64>,
    pub u: Component,
    pub v: Component,
    pub phase_anchor: f64,
    pub half_width: f64,
    pub residual: f64,
    pub newton_iterations: usize,
    /// Largest step against the expected monotonicity (negative when strict).
    pub monotonicity_violation: f64,
}

/// JSON-friendly summary of a profile.
#[derive(Debug, Clone, Serialize)]
pub struct WaveMetadata<'a> {
    pub kind: WaveKind,
    pub speed: f64,
    pub params: Option<ModelParams>,
    pub kpp_coefficients: Option<(f64, f64)>,
    pub half_width: f64,
    pub nodes: usize,
    pub spacing: f64,
    pub residual: f64,
    pub newton_iterations: usize,
    pub monotonicity_violation: f64,
    pub phase_anchor: f64,
    pub u_limits: (f64, f64),
    pub v_limits: (f64, f64),
    pub u_tails: (&'a TailModel, &'a TailModel),
    pub v_tails: (&'a TailModel, &'a TailModel),
}

fn hermite(x0: f64, h: f64, y0: f64, y1: f64, m0: f64, m1: f64, x: f64) -> (f64, f64) {
    let t = (x - x0) / h;
    let t2 = t * t;
    let t3 = t2 * t;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + t;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    let value = h00 * y0 + h10 * h * m0 + h01 * y1 + h11 * h * m1;
    let d00 = (6.0 * t2 - 6.0 * t) / h;
    let d10 = 3.0 * t2 - 4.0 * t + 1.0;
    let d01 = (-6.0 * t2 + 6.0 * t) / h;
    let d11 = 3.0 * t2 - 2.0 * t;
    let slope = d00 * y0 + d10 * m0 + d01 * y1 + d11 * m1;
    (value, slope)
}

/// Fourth-order central differences inside, lower order near the ends.
fn derivative_samples(y: &[f64], h: f64) -> Vec<f64> {
    let n = y.len();
    let mut out = vec![0.0; n];
    if n < 5 {
        for i in 0..n {
            let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
            out[i] = (y[b] - y[a]) / ((b - a) as f64 * h);
        }
        return out;
    }
    out[0] = (-3.0 * y[0] + 4.0 * y[1] - y[2]) / (2.0 * h);
    out[n - 1] = (3.0 * y[n - 1] - 4.0 * y[n - 2] + y[n - 3]) / (2.0 * h);
    out[1] = (y[2] - y[0]) / (2.0 * h);
    out[n - 2] = (y[n - 1] - y[n - 3]) / (2.0 * h);
    for i in 2..n - 2 {
        out[i] = (-y[i + 2] + 8.0 * y[i + 1] - 8.0 * y[i - 1] + y[i - 2]) / (12.0 * h);
    }
    out
}

/// Which side of the front a tail lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    PlusInfinity,
    MinusInfinity,
}

/// The four tails of a bistable front.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TailQuantity {
    /// `U` ahead of the front, rate `lambda1`.
    UPlus,
    /// `1 - V` ahead of the front, rate `Lambda+`.
    VDeficitPlus,
    /// `V` behind the front, rate `lambda4`.
    VMinus,
    /// `1 - U` behind the front, rate `Lambda-`.
    UDeficitMinus,
}

impl TailQuantity {
    pub const ALL: [TailQuantity; 4] = [
        TailQuantity::UPlus,
        TailQuantity::VDeficitPlus,
        TailQuantity::VMinus,
        TailQuantity::UDeficitMinus,
    ];

    pub fn side(self) -> Side {
        match self {
            TailQuantity::UPlus | TailQuantity::VDeficitPlus => Side::PlusInfinity,
            _ => Side::MinusInfinity,
        }
    }

    /// Predicted rate and prefactor exponent.
    pub fn predicted(self, roots: &CharacteristicRoots) -> (f64, u8) {
        match self {
            TailQuantity::UPlus => (roots.lambda1, 0),
            TailQuantity::VDeficitPlus => (roots.lambda_plus, roots.gamma_plus),
            TailQuantity::VMinus => (roots.lambda4, 0),
            TailQuantity::UDeficitMinus => (roots.lambda_minus, roots.gamma_minus),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub side: Side,
    pub measured_rate: f64,
    pub predicted_rate: f64,
    /// Fitted prefactor of `|xi|^gamma exp(rate xi)`.
    pub amplitude: f64,
    pub gamma: u8,
    pub window: (f64, f64),
    pub samples: usize,
    pub r_squared: f64,
    pub relative_deviation: f64,
}

/// Least-squares fit of `log(q) - gamma log|xi|` against `xi` on one side.
///
/// The window keeps samples strictly on `side` of `anchor`, inside the inner
/// 80% of the sampled range, and with `TAIL_FLOOR <= q <= TAIL_CEILING`.
pub fn fit_decay(
    xi: &[f64],
    q: &[f64],
    anchor: f64,
    side: Side,
    gamma: u8,
    predicted_rate: f64,
) -> Result<DecayFit> {
    let (lo, hi) = (xi[0], xi[xi.len() - 1]);
    let margin = 0.1 * (hi - lo);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (&x, &y) in xi.iter().zip(q) {
        let on_side = match side {
            Side::PlusInfinity => x > anchor,
            Side::MinusInfinity => x < anchor,
        };
        if on_side
            && x >= lo + margin
            && x <= hi - margin
            && (TAIL_FLOOR..=TAIL_CEILING).contains(&y)
        {
            xs.push(x);
            ys.push(y.ln() - if gamma == 1 { x.abs().ln() } else { 0.0 });
        }
    }
    if xs.len() < TAIL_MIN_SAMPLES {
        return Err(Error::TailUnderflow {
            found: xs.len(),
            needed: TAIL_MIN_SAMPLES,
        });
    }
    let fit =
        linear_fit(&xs, &ys).ok_or_else(|| Error::BadWindow("degenerate tail window".into()))?;
    Ok(DecayFit {
        side,
        measured_rate: fit.slope,
        predicted_rate,
        amplitude: fit.intercept.exp(),
        gamma,
        window: (xs[0], xs[xs.len() - 1]),
        samples: xs.len(),
        r_squared: fit.r_squared,
        relative_deviation: ((fit.slope - predicted_rate) / predicted_rate).abs(),
    })
}

/// Fit one of the four bistable tails against its predicted rate.
pub fn fit_tail_decay(
    profile: &WaveProfile,
    roots: &CharacteristicRoots,
    quantity: TailQuantity,
) -> Result<DecayFit> {
    let (rate, gamma) = quantity.predicted(roots);
    let q: Vec<f64> = match quantity {
        TailQuantity::UPlus => profile
            .u
            .values
            .iter()
            .map(|u| u - profile.u.right_limit)
            .collect(),
        TailQuantity::VDeficitPlus => profile
            .v
            .values
            .iter()
            .map(|v| profile.v.right_limit - v)
            .collect(),
        TailQuantity::VMinus => profile
            .v
            .values
            .iter()
            .map(|v| v - profile.v.left_limit)
            .collect(),
        TailQuantity::UDeficitMinus => profile
            .u
            .values
            .iter()
            .map(|u| profile.u.left_limit - u)
            .collect(),
    };
    fit_decay(
        &profile.xi,
        &q,
        profile.phase_anchor,
        quantity.side(),
        gamma,
        rate,
    )
}

/// Decay rate and prefactor exponent of a KPP front ahead of its core:
/// the smaller root of `d l^2 - c l + r = 0`, negated.
pub fn kpp_leading_decay(d: f64, r: f64, c: f64) -> (f64, u8) {
    let disc = (c * c - 4.0 * d * r).max(0.0);
    let slow = 2.0 * r / (c + disc.sqrt());
    let double = disc.sqrt() < DOUBLE_ROOT_TOL * c.abs().max(1.0);
    (-slow, double as u8)
}

impl Component {
    fn new(values: Vec<f64>, h: f64, left_limit: f64, right_limit: f64) -> Self {
        let slopes = derivative_samples(&values, h);
        Component {
            values,
            slopes,
            left_limit,
            right_limit,
            left_tail: TailModel::flat(0.0),
            right_tail: TailModel::flat(0.0),
        }
    }

    /// Fix the tail models. The anchor is the outermost node in the inner 90%
    /// of the window whose deviation from the limit is still resolved.
    fn attach_tails(&mut self, xi: &[f64], phase: f64, gammas: (u8, u8)) {
        let n = xi.len();
        let (lo, hi) = (xi[0], xi[n - 1]);
        let reach = 0.05 * (hi - lo);
        for side in [Side::MinusInfinity, Side::PlusInfinity] {
            let limit = match side {
                Side::MinusInfinity => self.left_limit,
                Side::PlusInfinity => self.right_limit,
            };
            let gamma = match side {
                Side::MinusInfinity => gammas.0,
                Side::PlusInfinity => gammas.1,
            };
            let floor = if limit != 0.0 { 1e-10 } else { 1e-250 };
            let dev: Vec<f64> = self.values.iter().map(|v| v - limit).collect();
            let trusted =
                |i: usize| xi[i] >= lo + reach && xi[i] <= hi - reach && dev[i].abs() >= floor;
            // Walk outward from the phase; deep in the tail the samples are
            // eventually swamped by rounding-level modes from the window edge,
            // which shows up as a jump in the local log-slope or a sign change.
            let outward: Vec<usize> = match side {
                Side::MinusInfinity => (0..n).rev().filter(|&i| xi[i] < phase).collect(),
                Side::PlusInfinity => (0..n).filter(|&i| xi[i] > phase).collect(),
            };
            let mut idx = None;
            let mut last_rate: Option<f64> = None;
            for w in outward.windows(2) {
                let (inner, i) = (w[0], w[1]);
                if dev[i] == 0.0 || dev[i].signum() != dev[inner].signum() {
                    break;
                }
                if dev[i].abs() < 1e-8 {
                    let rate = (dev[inner].abs() / dev[i].abs()).ln();
                    if last_rate.is_some_and(|r| (rate - r).abs() > 1e-3 * r.abs().max(1e-3)) {
                        break;
                    }
                    last_rate = Some(rate);
                }
                if trusted(i) {
                    idx = Some(i);
                }
            }
            let tail = match idx {
                None => {
                    let edge = if side == Side::MinusInfinity {
                        lo + reach
                    } else {
                        hi - reach
                    };
                    TailModel::flat(edge)
                }
                Some(i) => {
                    let q: Vec<f64> = dev.iter().map(|x| x.abs()).collect();
                    let rate = match fit_decay(xi, &q, phase, side, gamma, f64::NAN) {
                        Ok(f) => f.measured_rate,
                        Err(_) => {
                            let j = if side == Side::MinusInfinity {
                                i + 1
                            } else {
                                i - 1
                            };
                            let g = |k: usize| {
                                q[k].ln() - if gamma == 1 { xi[k].abs().ln() } else { 0.0 }
                            };
                            (g(i) - g(j)) / (xi[i] - xi[j])
                        }
                    };
                    TailModel {
                        anchor: xi[i],
                        deviation: dev[i],
                        rate,
                        gamma,
                    }
                }
            };
            match side {
                Side::MinusInfinity => self.left_tail = tail,
                Side::PlusInfinity => self.right_tail = tail,
            }
        }
    }

    fn point(&self, xi: &[f64], h: f64, x: f64) -> Point {
        if x < self.left_tail.anchor {
            let (dev, slope) = self.left_tail.eval(x);
            let value = self.left_limit + dev;
            return Point {
                value,
                slope,
                from_left: dev,
                from_right: value - self.right_limit,
            };
        }
        if x > self.right_tail.anchor {
            let (dev, slope) = self.right_tail.eval(x);
            let value = self.right_limit + dev;
            return Point {
                value,
                slope,
                from_left: value - self.left_limit,
                from_right: dev,
            };
        }
        let k = (((x - xi[0]) / h).floor().max(0.0) as usize).min(xi.len() - 2);
        let (value, slope) = hermite(
            xi[k],
            h,
            self.values[k],
            self.values[k + 1],
            self.slopes[k],
            self.slopes[k + 1],
            x,
        );
        Point {
            value,
            slope,
            from_left: value - self.left_limit,
            from_right: value - self.right_limit,
        }
    }
}

impl WaveProfile {
    /// Build a profile from raw samples on a uniform grid. Tails are fitted
    /// with pure exponentials.
    pub fn from_samples(
        kind: WaveKind,
        speed: f64,
        xi: Vec<f64>,
        u: Vec<f64>,
        v: Vec<f64>,
    ) -> Result<Self> {
        let n = xi.len();
        if n < 8 || u.len() != n || v.len() != n {
            return Err(Error::Precondition(
                "profile samples must share a grid of at least 8 nodes".into(),
            ));
        }
        let h = xi[1] - xi[0];
        let phase = crossing(&xi, &u, 0.5 * (u[0] + u[n - 1])).unwrap_or(0.5 * (xi[0] + xi[n - 1]));
        let mut uc = Component::new(u, h, 0.0, 0.0);
        uc.left_limit = uc.values[0];
        uc.right_limit = uc.values[n - 1];
        let mut vc = Component::new(v, h, 0.0, 0.0);
        vc.left_limit = vc.values[0];
        vc.right_limit = vc.values[n - 1];
        uc.attach_tails(&xi, phase, (0, 0));
        vc.attach_tails(&xi, phase, (0, 0));
        let half_width = 0.5 * (xi[n - 1] - xi[0]);
        Ok(WaveProfile {
            kind,
            params: None,
            kpp_coefficients: None,
            speed,
            xi,
            u: uc,
            v: vc,
            phase_anchor: phase,
            half_width,
            residual: f64::NAN,
            newton_iterations: 0,
            monotonicity_violation: f64::NAN,
        })
    }

    pub fn spacing(&self) -> f64 {
        self.xi[1] - self.xi[0]
    }

    pub fn nodes(&self) -> usize {
        self.xi.len()
    }

    /// Range on which [`WaveProfile::sample`] is defined.
    pub fn extendable_range(&self) -> (f64, f64) {
        (
            self.xi[0] - EXTRAPOLATION_LIMIT,
            self.xi[self.xi.len() - 1] + EXTRAPOLATION_LIMIT,
        )
    }

    pub fn sample(&self, x: f64) -> Result<WaveSample> {
        let (min, max) = self.extendable_range();
        if !(x >= min && x <= max) {
            return Err(Error::OutOfRange { xi: x, min, max });
        }
        let h = self.spacing();
        Ok(WaveSample {
            u: self.u.point(&self.xi, h, x),
            v: self.v.point(&self.xi, h, x),
        })
    }

    /// The same front with the `v` slot carrying the `u` samples (for KPP fronts).
    pub fn into_v_component(mut self) -> Self {
        std::mem::swap(&mut self.u, &mut self.v);
        if self.kind == WaveKind::KppU {
            self.kind = WaveKind::KppV;
        }
        self
    }

    pub fn metadata(&self) -> WaveMetadata<'_> {
        WaveMetadata {
            kind: self.kind,
            speed: self.speed,
            params: self.params,
            kpp_coefficients: self.kpp_coefficients,
            half_width: self.half_width,
            nodes: self.nodes(),
            spacing: self.spacing(),
            residual: self.residual,
            newton_iterations: self.newton_iterations,
            monotonicity_violation: self.monotonicity_violation,
            phase_anchor: self.phase_anchor,
            u_limits: (self.u.left_limit, self.u.right_limit),
            v_limits: (self.v.left_limit, self.v.right_limit),
            u_tails: (&self.u.left_tail, &self.u.right_tail),
            v_tails: (&self.v.left_tail, &self.v.right_tail),
        }
    }

    /// CSV with columns `xi,U,V`.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["xi", "U", "V"])?;
        for i in 0..self.nodes() {
            w.write_record(&[
                format!("{:.17e}", self.xi[i]),
                format!("{:.17e}", self.u.values[i]),
                format!("{:.17e}", self.v.values[i]),
            ])?;
        }
        w.flush()
    }
}

/// First `x` where `y` crosses `level`, by linear interpolation.
fn crossing(x: &[f64], y: &[f64], level: f64) -> Option<f64> {
    (0..x.len() - 1).find_map(|i| {
        let (a, b) = (y[i] - level, y[i + 1] - level);
        if a == 0.0 {
            Some(x[i])
        } else if a * b < 0.0 {
            Some(x[i] + (x[i + 1] - x[i]) * a / (a - b))
        } else {
            None
        }
    })
}

fn uniform_grid(half_width: f64, nodes: usize) -> (Vec<f64>, f64) {
    let h = 2.0 * half_width / (nodes - 1) as f64;
    let xi = (0..nodes).map(|i| -half_width + i as f64 * h).collect();
    (xi, h)
}

fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Damped Newton on a banded system.
fn newton<R, J>(
    z: &mut [f64],
    tol: f64,
    max_iter: usize,
    speed_of: impl Fn(&[f64]) -> f64,
    residual: R,
    jacobian: J,
) -> Result<(f64, usize)>
where
    R: Fn(&[f64], &mut [f64]),
    J: Fn(&[f64]) -> BandMatrix,
{
    let n = z.len();
    let mut f = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut ft = vec![0.0; n];
    residual(z, &mut f);
    let mut norm = max_abs(&f);
    for it in 0..max_iter {
        if !norm.is_finite() {
            break;
        }
        if norm < tol {
            return Ok((norm, it));
        }
        let mut step = f.clone();
        jacobian(z).factor()?.solve_in_place(&mut step);
        let mut lambda = 1.0;
        loop {
            for i in 0..n {
                trial[i] = z[i] - lambda * step[i];
            }
            residual(&trial, &mut ft);
            let tn = max_abs(&ft);
            if tn.is_finite() && (tn < (1.0 - 1e-4 * lambda) * norm || lambda < 1.0 / 512.0) {
                z.copy_from_slice(&trial);
                std::mem::swap(&mut f, &mut ft);
                norm = tn;
                break;
            }
            lambda *= 0.5;
        }
    }
    if norm < tol {
        return Ok((norm, max_iter));
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: norm,
        speed: speed_of(z),
    })
}

#[derive(Debug, Clone, Copy)]
struct Bistable {
    d: f64,
    r: f64,
    a: f64,
    b: f64,
    gu: f64,
    gv: f64,
    h: f64,
    n: usize,
    mid: usize,
}

impl Bistable {
    fn new(p: &ModelParams, eps: f64, h: f64, n: usize, mid: usize) -> Self {
        Bistable {
            d: p.d,
            r: p.r,
            a: p.a,
            b: p.b,
            gu: 1.0 - eps,
            gv: 1.0 + eps,
            h,
            n,
            mid,
        }
    }

    fn residual(&self, z: &[f64], f: &mut [f64]) {
        let Bistable {
            d,
            r,
            a,
            b,
            gu,
            gv,
            h,
            n,
            mid,
        } = *self;
        let (ih2, i2h) = (1.0 / (h * h), 0.5 / h);
        f[0] = z[0] - gu;
        f[1] = z[1];
        f[3 * (n - 1)] = z[3 * (n - 1)];
        f[3 * (n - 1) + 1] = z[3 * (n - 1) + 1] - gv;
        for i in 1..n - 1 {
            let (u, v, c) = (z[3 * i], z[3 * i + 1], z[3 * i + 2]);
            let (ul, vl) = (z[3 * i - 3], z[3 * i - 2]);
            let (ur, vr) = (z[3 * i + 3], z[3 * i + 4]);
            f[3 * i] =
                d * (ur - 2.0 * u + ul) * ih2 + c * (ur - ul) * i2h + r * u * (gu - u - a * v);
            f[3 * i + 1] = (vr - 2.0 * v + vl) * ih2 + c * (vr - vl) * i2h + v * (gv - v - b * u);
        }
        for i in 0..n {
            f[3 * i + 2] = if i < mid {
                z[3 * i + 5] - z[3 * i + 2]
            } else if i == mid {
                z[3 * mid] - 0.5 * gu
            } else {
                z[3 * i + 2] - z[3 * i - 1]
            };
        }
    }

    fn jacobian(&self, z: &[f64]) -> BandMatrix {
        let Bistable {
            d,
            r,
            a,
            b,
            gu,
            gv,
            h,
            n,
            mid,
        } = *self;
        let (ih2, i2h) = (1.0 / (h * h), 0.5 / h);
        let mut m = BandMatrix::zeros(3 * n, 3, 4);
        m.set(0, 0, 1.0);
        m.set(1, 1, 1.0);
        m.set(3 * (n - 1), 3 * (n - 1), 1.0);
        m.set(3 * (n - 1) + 1, 3 * (n - 1) + 1, 1.0);
        for i in 1..n - 1 {
            let (u, v, c) = (z[3 * i], z[3 * i + 1], z[3 * i + 2]);
            let (ul, vl) = (z[3 * i - 3], z[3 * i - 2]);
            let (ur, vr) = (z[3 * i + 3], z[3 * i + 4]);
            let (ru, rv) = (3 * i, 3 * i + 1);
            m.set(ru, 3 * i - 3, d * ih2 - c * i2h);
            m.set(ru, 3 * i + 3, d * ih2 + c * i2h);
            m.set(ru, 3 * i, -2.0 * d * ih2 + r * (gu - 2.0 * u - a * v));
            m.set(ru, 3 * i + 1, -r * a * u);
            m.set(ru, 3 * i + 2, (ur - ul) * i2h);
            m.set(rv, 3 * i - 2, ih2 - c * i2h);
            m.set(rv, 3 * i + 4, ih2 + c * i2h);
            m.set(rv, 3 * i + 1, -2.0 * ih2 + (gv - 2.0 * v - b * u));
            m.set(rv, 3 * i, -b * v);
            m.set(rv, 3 * i + 2, (vr - vl) * i2h);
        }
        for i in 0..n {
            let row = 3 * i + 2;
            if i < mid {
                m.set(row, 3 * i + 5, 1.0);
                m.set(row, 3 * i + 2, -1.0);
            } else if i == mid {
                m.set(row, 3 * mid, 1.0);
            } else {
                m.set(row, 3 * i + 2, 1.0);
                m.set(row, 3 * i - 1, -1.0);
            }
        }
        m
    }
}

fn tanh_guess(p: &ModelParams, eps: f64, xi: &[f64], anchor: f64) -> Vec<f64> {
    let k = (p.r * (p.a - 1.0) / p.d).sqrt() / 2.0;
    let mut z = vec![0.0; 3 * xi.len()];
    for (i, &x) in xi.iter().enumerate() {
        let t = (k * (x - anchor)).tanh();
        z[3 * i] = (1.0 - eps) * 0.5 * (1.0 - t);
        z[3 * i + 1] = (1.0 + eps) * 0.5 * (1.0 + t);
    }
    z
}

fn phase_index(xi: &[f64], h: f64, anchor: f64) -> usize {
    (((anchor - xi[0]) / h).round() as usize).clamp(1, xi.len() - 2)
}

/// Solve the bistable system on a fixed window from an initial iterate.
fn bistable_newton(
    p: &ModelParams,
    eps: f64,
    cfg: &WaveConfig,
    z: &mut [f64],
) -> Result<(f64, usize)> {
    let (xi, h) = uniform_grid(cfg.half_width, cfg.nodes);
    let mid = phase_index(&xi, h, cfg.anchor);
    let sys = Bistable::new(p, eps, h, cfg.nodes, mid);
    newton(
        z,
        cfg.tol,
        cfg.max_newton,
        |z| z[3 * mid + 2],
        |z, f| sys.residual(z, f),
        |z| sys.jacobian(z),
    )
}

/// Continuation in `(d, r, a, b)` from the symmetric problem with `d = r = 1`
/// and `a = b = max(a, b)`.
fn continuation(p: &ModelParams, eps: f64, cfg: &WaveConfig) -> Result<(Vec<f64>, f64, usize)> {
    let m = p.a.max(p.b);
    let start = ModelParams {
        d: 1.0,
        r: 1.0,
        a: m,
        b: m,
    };
    let (xi, _) = uniform_grid(cfg.half_width, cfg.nodes);
    let mut z = tanh_guess(&start, eps, &xi, cfg.anchor);
    let (mut res, mut its) = bistable_newton(&start, eps, cfg, &mut z)?;
    let steps = cfg.continuation_steps.max(1);
    for k in 1..=steps {
        let s = k as f64 / steps as f64;
        let q = ModelParams {
            d: start.d + s * (p.d - start.d),
            r: start.r + s * (p.r - start.r),
            a: start.a + s * (p.a - start.a),
            b: start.b + s * (p.b - start.b),
        };
        let (r2, i2) = bistable_newton(&q, eps, cfg, &mut z)?;
        res = r2;
        its += i2;
    }
    Ok((z, res, its))
}

/// Interpolate an iterate onto a wider window, padding with the limits.
fn widen(z: &[f64], old: &WaveConfig, new: &WaveConfig, eps: f64) -> Vec<f64> {
    let (xo, h) = uniform_grid(old.half_width, old.nodes);
    let (xn, _) = uniform_grid(new.half_width, new.nodes);
    let c = z[3 * (old.nodes / 2) + 2];
    let mut out = vec![0.0; 3 * new.nodes];
    for (i, &x) in xn.iter().enumerate() {
        let (u, v) = if x <= xo[0] {
            (1.0 - eps, 0.0)
        } else if x >= xo[old.nodes - 1] {
            (0.0, 1.0 + eps)
        } else {
            let k = (((x - xo[0]) / h).floor() as usize).min(old.nodes - 2);
            let t = (x - xo[k]) / h;
            (
                z[3 * k] * (1.0 - t) + z[3 * k + 3] * t,
                z[3 * k + 1] * (1.0 - t) + z[3 * k + 4] * t,
            )
        };
        out[3 * i] = u;
        out[3 * i + 1] = v;
        out[3 * i + 2] = c;
    }
    out
}

fn monotone_violation(u: &[f64], v: &[f64]) -> (f64, usize) {
    let mut worst = f64::NEG_INFINITY;
    let mut at = 0;
    for i in 0..u.len() - 1 {
        let w = (u[i + 1] - u[i]).max(v[i] - v[i + 1]);
        if w > worst {
            worst = w;
            at = i;
        }
    }
    (worst, at)
}

fn bistable_profile(
    p: &ModelParams,
    eps: f64,
    cfg: &WaveConfig,
    z: Vec<f64>,
    residual: f64,
    iterations: usize,
) -> Result<WaveProfile> {
    let (xi, h) = uniform_grid(cfg.half_width, cfg.nodes);
    let n = cfg.nodes;
    let mid = phase_index(&xi, h, cfg.anchor);
    let speed = z[3 * mid + 2];
    let u: Vec<f64> = (0..n).map(|i| z[3 * i]).collect();
    let v: Vec<f64> = (0..n).map(|i| z[3 * i + 1]).collect();
    let (viol, at) = monotone_violation(&u, &v);
    if viol > cfg.monotone_tol {
        return Err(Error::NotMonotone {
            violation: viol,
            xi: xi[at],
        });
    }
    let roots = char_roots_perturbed(p, speed, eps)?;
    let mut uc = Component::new(u, h, 1.0 - eps, 0.0);
    let mut vc = Component::new(v, h, 0.0, 1.0 + eps);
    uc.attach_tails(&xi, xi[mid], (roots.gamma_minus, 0));
    vc.attach_tails(&xi, xi[mid], (0, roots.gamma_plus));
    let kind = if eps == 0.0 {
        WaveKind::Bistable
    } else {
        WaveKind::PerturbedBistable { epsilon: eps }
    };
    Ok(WaveProfile {
        kind,
        params: Some(*p),
        kpp_coefficients: None,
        speed,
        xi: xi.clone(),
        u: uc,
        v: vc,
        phase_anchor: xi[mid],
        half_width: cfg.half_width,
        residual,
        newton_iterations: iterations,
        monotonicity_violation: viol,
    })
}

fn tails_resolved(p: &ModelParams, eps: f64, cfg: &WaveConfig, speed: f64) -> Result<bool> {
    let roots = char_roots_perturbed(p, speed, eps)?;
    let rate = roots.lambda_minus.min(-roots.lambda_plus);
    let reach = cfg.half_width - cfg.anchor.abs();
    Ok((-rate * reach).exp() < cfg.tail_target)
}

fn solve_front(
    p: &ModelParams,
    eps: f64,
    cfg: &WaveConfig,
    guess: Option<Vec<f64>>,
) -> Result<WaveProfile> {
    p.require_strong_competition()?;
    cfg.validate()?;
    char_roots_perturbed(p, 0.0, eps)?;
    let mut cfg = *cfg;
    let (xi, _) = uniform_grid(cfg.half_width, cfg.nodes);
    let mut z = guess.unwrap_or_else(|| tanh_guess(p, eps, &xi, cfg.anchor));
    let (mut residual, mut its) = match bistable_newton(p, eps, &cfg, &mut z) {
        Ok(r) => r,
        Err(direct) => {
            log::debug!("direct Newton failed ({direct}); continuing from the symmetric problem");
            let (z2, r, i) = continuation(p, eps, &cfg)?;
            z = z2;
            (r, i)
        }
    };
    let mut widenings = 0;
    loop {
        let speed = z[3 * (cfg.nodes / 2) + 2];
        if tails_resolved(p, eps, &cfg, speed)? || widenings >= cfg.max_widenings {
            break;
        }
        let h = cfg.spacing();
        let mut wider = cfg;
        wider.half_width = 1.5 * cfg.half_width;
        let half_nodes = (wider.half_width / h).round() as usize;
        wider.nodes = 2 * half_nodes + 1;
        wider.half_width = half_nodes as f64 * h;
        log::info!("widening wave window to L = {}", wider.half_width);
        let mut z2 = widen(&z, &cfg, &wider, eps);
        let (r, i) = bistable_newton(p, eps, &wider, &mut z2)?;
        z = z2;
        residual = r;
        its += i;
        cfg = wider;
        widenings += 1;
    }
    bistable_profile(p, eps, &cfg, z, residual, its)
}

/// The bistable front connecting `(1, 0)` to `(0, 1)` together with its speed.
pub fn solve_bistable_wave(params: &ModelParams, cfg: &WaveConfig) -> Result<WaveProfile> {
    solve_front(params, 0.0, cfg, None)
}

/// The front of the system with growth rates `1 - eps` and `1 + eps`.
pub fn solve_perturbed_wave(
    params: &ModelParams,
    eps: f64,
    cfg: &WaveConfig,
) -> Result<WaveProfile> {
    params.require_strong_competition()?;
    char_roots_perturbed(params, 0.0, eps)?;
    if eps == 0.0 {
        return solve_bistable_wave(params, cfg);
    }
    let base = solve_front(params, 0.0, cfg, None)?;
    let mut guess = Vec::with_capacity(3 * base.nodes());
    for i in 0..base.nodes() {
        guess.push((1.0 - eps) * base.u.values[i]);
        guess.push((1.0 + eps) * base.v.values[i]);
        guess.push(base.speed);
    }
    let mut wcfg = *cfg;
    wcfg.half_width = base.half_width;
    wcfg.nodes = base.nodes();
    solve_front(params, eps, &wcfg, Some(guess))
}

struct Kpp {
    d: f64,
    r: f64,
    c: f64,
    h: f64,
    n: usize,
    mid: usize,
}

impl Kpp {
    fn ode(&self, w: &[f64], i: usize) -> f64 {
        let (ih2, i2h) = (1.0 / (self.h * self.h), 0.5 / self.h);
        self.d * (w[i + 1] - 2.0 * w[i] + w[i - 1]) * ih2
            + self.c * (w[i + 1] - w[i - 1]) * i2h
            + self.r * w[i] * (1.0 - w[i])
    }

    // Row order: left boundary, equations at nodes 1..mid, phase row, then the
    // equations at nodes mid..n-2 shifted down by one row.
    fn residual(&self, w: &[f64], f: &mut [f64]) {
        f[0] = w[0] - 1.0;
        for k in 1..self.n {
            f[k] = if k < self.mid {
                self.ode(w, k)
            } else if k == self.mid {
                w[self.mid] - 0.5
            } else {
                self.ode(w, k - 1)
            };
        }
    }

    fn jacobian(&self, w: &[f64]) -> BandMatrix {
        let (ih2, i2h) = (1.0 / (self.h * self.h), 0.5 / self.h);
        let mut m = BandMatrix::zeros(self.n, 2, 1);
        m.set(0, 0, 1.0);
        for k in 1..self.n {
            if k == self.mid {
                m.set(k, k, 1.0);
                continue;
            }
            let i = if k < self.mid { k } else { k - 1 };
            m.set(k, i - 1, self.d * ih2 - self.c * i2h);
            m.set(k, i, -2.0 * self.d * ih2 + self.r * (1.0 - 2.0 * w[i]));
            m.set(k, i + 1, self.d * ih2 + self.c * i2h);
        }
        m
    }
}

/// Shooting from the unstable manifold of `w = 1`; used as the Newton start.
fn kpp_guess(d: f64, r: f64, c: f64, xi: &[f64], anchor: f64) -> Vec<f64> {
    let mu = crate::model::split_roots(d, c, -r).1;
    let h = xi[1] - xi[0];
    let sub = 8;
    let hs = h / sub as f64;
    let rhs = |w: f64, p: f64| (p, -(c * p + r * w * (1.0 - w)) / d);
    let z0 = 1e-8;
    let (mut w, mut p) = (1.0 - z0, -mu * z0);
    let mut samples = vec![w];
    let mut s_cross = None;
    let span = xi[xi.len() - 1] - xi[0];
    let mut k = 0usize;
    while k < 1_000_000 {
        for _ in 0..sub {
            let (k1w, k1p) = rhs(w, p);
            let (k2w, k2p) = rhs(w + 0.5 * hs * k1w, p + 0.5 * hs * k1p);
            let (k3w, k3p) = rhs(w + 0.5 * hs * k2w, p + 0.5 * hs * k2p);
            let (k4w, k4p) = rhs(w + hs * k3w, p + hs * k3p);
            w += hs / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w);
            p += hs / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
        }
        k += 1;
        samples.push(w);
        if s_cross.is_none() && w <= 0.5 {
            let prev = samples[k - 1];
            s_cross = Some((k - 1) as f64 * h + h * (prev - 0.5) / (prev - w));
        }
        if let Some(s) = s_cross {
            if k as f64 * h > s + span {
                break;
            }
        }
    }
    let s = s_cross.unwrap_or(0.0);
    xi.iter()
        .map(|&x| {
            let t = x - anchor + s;
            if t <= 0.0 {
                1.0 - z0 * (mu * t).exp()
            } else {
                let j = ((t / h).floor() as usize).min(samples.len() - 2);
                let f = t / h - j as f64;
                (samples[j] * (1.0 - f) + samples[j + 1] * f).clamp(0.0, 1.0)
            }
        })
        .collect()
}

/// Front of `d w'' + c w' + r w (1 - w) = 0` with `w(-inf) = 1`, `w(+inf) = 0`
/// and `w(anchor) = 1/2`, returned as a `KppU` profile.
///
/// Only the left end carries a boundary condition; to the right the discrete
/// equations act as a forward recurrence, which is stable for `c >= 2 sqrt(rd)`.
pub fn solve_kpp_profile(d: f64, r: f64, c: f64, cfg: &WaveConfig) -> Result<WaveProfile> {
    for (name, value) in [("d", d), ("r", r)] {
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::InvalidParameter {
                name,
                value,
                rule: "coefficients must be finite and positive",
            });
        }
    }
    cfg.validate()?;
    let minimal = 2.0 * (r * d).sqrt();
    if !(c >= minimal * (1.0 - 1e-12)) {
        return Err(Error::BelowMinimalSpeed { speed: c, minimal });
    }
    let (xi, h) = uniform_grid(cfg.half_width, cfg.nodes);
    let n = cfg.nodes;
    let mid = phase_index(&xi, h, cfg.anchor);
    let sys = Kpp { d, r, c, h, n, mid };
    let mut w = kpp_guess(d, r, c, &xi, xi[mid]);
    let (residual, iterations) = newton(
        &mut w,
        cfg.tol,
        cfg.max_newton,
        |_| c,
        |z, f| sys.residual(z, f),
        |z| sys.jacobian(z),
    )?;
    let zeros = vec![0.0; n];
    let (viol, at) = monotone_violation(&w, &zeros);
    if viol > cfg.monotone_tol {
        return Err(Error::NotMonotone {
            violation: viol,
            xi: xi[at],
        });
    }
    let (_, gamma) = kpp_leading_decay(d, r, c);
    let mut uc = Component::new(w, h, 1.0, 0.0);
    uc.attach_tails(&xi, xi[mid], (0, gamma));
    let mut vc = Component::new(zeros, h, 0.0, 0.0);
    vc.attach_tails(&xi, xi[mid], (0, 0));
    Ok(WaveProfile {
        kind: WaveKind::KppU,
        params: None,
        kpp_coefficients: Some((d, r)),
        speed: c,
        xi: xi.clone(),
        u: uc,
        v: vc,
        phase_anchor: xi[mid],
        half_width: cfg.half_width,
        residual,
        newton_iterations: iterations,
        monotonicity_violation: viol,
    })
}
