//! Super- and subsolution pairs built from a computed bistable front, their
//! parameter constraints, and sign checks of the residual operators
//!
//! ```text
//! N1[u, v] = u_t - d u_xx - r u (1 - u - a v)
//! N2[u, v] = v_t - v_xx - v (1 - v - b u)
//! ```
//!
//! on space-time lattices.
//!
//! The residuals are evaluated in closed form. Time derivatives of the
//! amplitudes and shifts are exact, profile slopes come from the Hermite
//! interpolant, and second derivatives are eliminated with the traveling-wave
//! equations. The result is then written as a Taylor expansion of the
//! quadratic reaction terms around the dominant branch, so every term carries
//! a factor of the vanishing perturbations and the sign stays resolvable long
//! after the perturbations drop below the rounding level of the profile
//! itself. A finite-difference evaluation of the same pair serves as an
//! independent cross-check.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{char_roots_perturbed, ModelParams};
use crate::par::{map_indexed, Exec};
use crate::pde::{FieldState, Grid};
use crate::wave::{WaveKind, WaveProfile};

/// Wrong-signed residuals below this multiple of the rounding bound are not
/// counted as violations.
pub const ROUNDING_FACTOR: f64 = 64.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `u = max{U(xi) - p, 0}`, `v = (1 + q) V(xi)`, `xi = x - c t + eta(t)`.
    LowerSimple,
    /// `u = (1 + q) U(xi)`, `v = max{V(xi) - p, 0}`.
    UpperSimple,
    /// `u = U(xi+) + U(xi-) - 1 + p`, `v = (1 - q)(V(xi+) + V(xi-))`,
    /// `xi+- = +-x - c t + zeta(t)`.
    UpperTwoSided,
    /// `u = max{U(xi+) + U(xi-) - 1 - p, 0}`, `v = (1 + q)(V(xi+) + V(xi-))`.
    LowerTwoSided,
    /// Two-sided lower pair on the perturbed front `(U_eps, V_eps)` with speed
    /// `c_eps`: `u = max{U+ + U- - (1 - eps) - p, 0}`, `v = V+ + V- + q`.
    AppendixLower,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::LowerSimple,
        Family::UpperSimple,
        Family::UpperTwoSided,
        Family::LowerTwoSided,
        Family::AppendixLower,
    ];

    /// Lower pairs need `N1 <= 0`, `N2 >= 0`; upper pairs the reverse.
    pub fn is_lower(self) -> bool {
        matches!(
            self,
            Family::LowerSimple | Family::LowerTwoSided | Family::AppendixLower
        )
    }

    pub fn two_sided(self) -> bool {
        !matches!(self, Family::LowerSimple | Family::UpperSimple)
    }

    fn truncates_u(self) -> bool {
        self.is_lower()
    }

    fn truncates_v(self) -> bool {
        self == Family::UpperSimple
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::LowerSimple => "lower_simple",
            Family::UpperSimple => "upper_simple",
            Family::UpperTwoSided => "upper_two_sided",
            Family::LowerTwoSided => "lower_two_sided",
            Family::AppendixLower => "appendix_lower",
        }
    }
}

/// Amplitudes `p(t) = p0 e^{-rate t}`, `q(t) = q0 e^{-rate t}` and the shift
/// `s(t) = shift0 - shift1 e^{-k t}` entering the profile argument as
/// `+-(x - center) - c t + s(t)`. `k` is `rate / 2` except for
/// [`Family::AppendixLower`], where it is `rate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuperSubParams {
    pub family: Family,
    pub p0: f64,
    pub q0: f64,
    pub rate: f64,
    pub shift0: f64,
    pub shift1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Translation of the whole pair in `x`.
    #[serde(default)]
    pub center: f64,
}

impl SuperSubParams {
    fn shift_rate(&self) -> f64 {
        if self.family == Family::AppendixLower {
            self.rate
        } else {
            0.5 * self.rate
        }
    }

    pub fn p(&self, t: f64) -> f64 {
        self.p0 * (-self.rate * t).exp()
    }

    pub fn q(&self, t: f64) -> f64 {
        self.q0 * (-self.rate * t).exp()
    }

    pub fn shift(&self, t: f64) -> f64 {
        self.shift0 - self.shift1 * (-self.shift_rate() * t).exp()
    }

    pub fn shift_derivative(&self, t: f64) -> f64 {
        let k = self.shift_rate();
        k * self.shift1 * (-k * t).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintVerdict {
    pub pass: bool,
    pub failed: Vec<String>,
}

impl ConstraintVerdict {
    fn from_failed(failed: Vec<String>) -> Self {
        ConstraintVerdict {
            pass: failed.is_empty(),
            failed,
        }
    }
}

/// Parameter-only clauses of the sign lemmas, each failure named.
///
/// Clauses that involve the wave speed are added by [`Pair::constraints`].
pub fn check_constraints(params: &ModelParams, ssp: &SuperSubParams) -> ConstraintVerdict {
    let ModelParams { r, a, b, .. } = *params;
    let SuperSubParams {
        family,
        p0,
        q0,
        rate,
        shift0,
        shift1,
        epsilon,
        ..
    } = *ssp;
    let mut failed = Vec::new();
    let mut need = |ok: bool, clause: &str| {
        if !ok {
            failed.push(clause.to_string());
        }
    };
    need(p0 > 0.0, "p0>0");
    need(q0 > 0.0, "q0>0");
    need(rate > 0.0, "rate>0");
    match family {
        Family::LowerSimple => {
            need(shift1 > 0.0, "eta1>0");
            need(
                rate < r.min(1.0).min((a - 1.0) * r),
                "alpha<min{r,1,(a-1)r}",
            );
            need(p0 < q0 / b * (1.0 - rate) / 2.0, "p0<(q0/b)(1-alpha)/2");
        }
        Family::UpperSimple => {
            need(shift1 < 0.0, "eta1<0");
            need(rate < r.min(1.0).min(b - 1.0), "alpha<min{r,1,b-1}");
            need(p0 < q0 * (1.0 - rate) / (2.0 * a), "p0<q0(1-alpha)/(2a)");
        }
        Family::UpperTwoSided => {
            need(shift1 < 0.0, "zeta1<0");
            need(q0 > 2.0 * b * p0, "q0>2b*p0");
        }
        Family::LowerTwoSided => {
            need(shift1 > 0.0, "zeta1>0");
            need(shift0 <= 0.0, "zeta0<=0");
            need(q0 > 2.0 * b * (1.0 + q0) * p0, "q0>2b(1+q0)p0");
        }
        Family::AppendixLower => {
            need(shift1 > 0.0, "zeta1>0");
            need(epsilon.is_some_and(|e| e > 0.0), "epsilon>0");
            need(
                (p0 - a * q0).abs() <= 1e-12 * p0.abs().max(a * q0.abs()),
                "p0=a*q0",
            );
            need(rate < (r * (a - 1.0)).min(b - 1.0), "mu<min{r(a-1),b-1}");
        }
    }
    ConstraintVerdict::from_failed(failed)
}

/// Residuals and values at one space-time point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointResidual {
    pub u: f64,
    pub v: f64,
    /// Residuals as reported: zero on the truncated part of a component.
    pub n1: f64,
    pub n2: f64,
    /// Residuals of the untruncated (smooth) branch.
    pub n1_smooth: f64,
    pub n2_smooth: f64,
    /// Sum of absolute values of the terms, for the rounding bound.
    pub scale1: f64,
    pub scale2: f64,
    /// The `max{., 0}` truncation is active at this point.
    pub kink: bool,
}

/// A super/subsolution pair evaluable at any `(t, x)` in range.
#[derive(Debug, Clone)]
pub struct Pair<'a> {
    pub params: ModelParams,
    pub wave: &'a WaveProfile,
    pub ssp: SuperSubParams,
    eps: f64,
}

pub fn build_pair<'a>(
    params: &ModelParams,
    wave: &'a WaveProfile,
    ssp: &SuperSubParams,
) -> Result<Pair<'a>> {
    params.validate()?;
    let eps = match (ssp.family, wave.kind) {
        (Family::AppendixLower, WaveKind::PerturbedBistable { epsilon }) => {
            if let Some(e) = ssp.epsilon {
                if (e - epsilon).abs() > 1e-12 * epsilon.abs().max(1e-300) {
                    return Err(Error::Mismatch(format!(
                        "pair epsilon {e} differs from the profile's {epsilon}"
                    )));
                }
            }
            epsilon
        }
        (Family::AppendixLower, k) => {
            return Err(Error::WrongWaveKind(format!(
                "the appendix pair needs a perturbed front, got {k:?}"
            )))
        }
        (_, WaveKind::Bistable) => 0.0,
        (f, k) => {
            return Err(Error::WrongWaveKind(format!(
                "{} needs a bistable front, got {k:?}",
                f.name()
            )))
        }
    };
    if let Some(p) = wave.params {
        if p != *params {
            return Err(Error::Mismatch(
                "pair parameters differ from the profile's".into(),
            ));
        }
    }
    if ssp.family.two_sided() && !(wave.speed > 0.0) {
        return Err(Error::Precondition(format!(
            "two-sided pairs need a positive front speed, got {}",
            wave.speed
        )));
    }
    Ok(Pair {
        params: *params,
        wave,
        ssp: *ssp,
        eps,
    })
}

struct Branch {
    u: f64,
    du: f64,
    /// `U - left_limit`.
    u_from_left: f64,
    v: f64,
    dv: f64,
}

impl Pair<'_> {
    /// All constraint clauses, including those that involve the wave speed.
    pub fn constraints(&self) -> ConstraintVerdict {
        let mut verdict = check_constraints(&self.params, &self.ssp);
        if self.ssp.family == Family::AppendixLower {
            let c = self.wave.speed;
            match char_roots_perturbed(&self.params, c, self.eps) {
                Ok(roots) => {
                    let bound = (roots.lambda_minus * c).min(roots.lambda4 * c);
                    if !(self.ssp.rate < bound) {
                        verdict
                            .failed
                            .push("mu<min{lambda_u c_eps,lambda_v c_eps}".into());
                    }
                }
                Err(e) => verdict.failed.push(format!("roots: {e}")),
            }
        }
        verdict.pass = verdict.failed.is_empty();
        verdict
    }

    fn branch(&self, z: f64) -> Result<Branch> {
        let s = self.wave.sample(z)?;
        Ok(Branch {
            u: s.u.value,
            du: s.u.slope,
            u_from_left: s.u.from_left,
            v: s.v.value,
            dv: s.v.slope,
        })
    }

    /// Coefficients `(A - 1, A', P, P', B - 1, B', Q, Q')` of
    /// `u = A sum U - K (n - 1) + P`, `v = B sum V + Q`. The offsets from 1 are
    /// kept separately since `1 + q` rounds to 1 long before `q` vanishes.
    fn coefficients(&self, t: f64) -> [f64; 8] {
        let (p, q, k) = (self.ssp.p(t), self.ssp.q(t), self.ssp.rate);
        let (dp, dq) = (-k * p, -k * q);
        match self.ssp.family {
            Family::LowerSimple | Family::LowerTwoSided => [0.0, 0.0, -p, -dp, q, dq, 0.0, 0.0],
            Family::UpperSimple => [q, dq, 0.0, 0.0, 0.0, 0.0, -p, -dp],
            Family::UpperTwoSided => [0.0, 0.0, p, dp, -q, -dq, 0.0, 0.0],
            Family::AppendixLower => [0.0, 0.0, -p, -dp, 0.0, 0.0, q, dq],
        }
    }

    pub fn residual(&self, t: f64, x: f64) -> Result<PointResidual> {
        let x = x - self.ssp.center;
        let ModelParams { d: _, r, a, b } = self.params;
        let eps = self.eps;
        let (gu, gv) = (1.0 - eps, 1.0 + eps);
        let c = self.wave.speed;
        let s = self.ssp.shift(t);
        let sp = self.ssp.shift_derivative(t);
        let [am, da, pp, dpp, bm, db, qq, dqq] = self.coefficients(t);
        let (aa, bb) = (1.0 + am, 1.0 + bm);

        let (base, other) = if self.ssp.family.two_sided() {
            let (zp, zm) = (x - c * t + s, -x - c * t + s);
            let (z0, z1) = if x >= 0.0 { (zp, zm) } else { (zm, zp) };
            (self.branch(z0)?, Some(self.branch(z1)?))
        } else {
            (self.branch(x - c * t + s)?, None)
        };
        let (u0, v0) = (base.u, base.v);

        let (mut du, mut dv) = (am * u0 + pp, bm * v0 + qq);
        let (mut sum_u, mut sum_du, mut sum_v, mut sum_dv) = (u0, base.du, v0, base.dv);
        let mut far1 = 0.0;
        let mut far2 = 0.0;
        if let Some(o) = &other {
            let e = -o.u_from_left;
            let w = o.v;
            du += am * gu - aa * e;
            dv += bb * w;
            sum_u += o.u;
            sum_du += o.du;
            sum_v += o.v;
            sum_dv += o.dv;
            far1 = aa * r * o.u * (e - a * w);
            far2 = bb * w * (gv - w - b * o.u);
        }

        let u_smooth = u0 + du;
        let v_smooth = v0 + dv;
        let cut_u = self.ssp.family.truncates_u() && u_smooth <= 0.0;
        let cut_v = self.ssp.family.truncates_v() && v_smooth <= 0.0;

        let terms1 = |du: f64, dv: f64| {
            let ft0 = r * u0 * (gu - u0 - a * v0);
            let fu = r * (1.0 - 2.0 * u0 - a * v0);
            let fv = -r * a * u0;
            [
                da * sum_u,
                aa * sp * sum_du,
                dpp,
                am * ft0,
                -r * eps * u0,
                far1,
                -fu * du,
                -fv * dv,
                r * du * du,
                r * a * du * dv,
            ]
        };
        let terms2 = |du: f64, dv: f64| {
            let gt0 = v0 * (gv - v0 - b * u0);
            let gu_ = -b * v0;
            let gv_ = 1.0 - 2.0 * v0 - b * u0;
            [
                db * sum_v,
                bb * sp * sum_dv,
                dqq,
                bm * gt0,
                eps * v0,
                far2,
                -gu_ * du,
                -gv_ * dv,
                dv * dv,
                b * du * dv,
            ]
        };
        let sum = |t: &[f64; 10]| t.iter().sum::<f64>();
        let abs_sum = |t: &[f64; 10]| t.iter().map(|x| x.abs()).sum::<f64>();

        let s1 = terms1(du, dv);
        let s2 = terms2(du, dv);
        let (n1_smooth, n2_smooth) = (sum(&s1), sum(&s2));
        if cut_u {
            du = -u0;
        }
        if cut_v {
            dv = -v0;
        }
        let r1 = terms1(du, dv);
        let r2 = terms2(du, dv);
        Ok(PointResidual {
            u: if cut_u { 0.0 } else { u_smooth },
            v: if cut_v { 0.0 } else { v_smooth },
            n1: if cut_u { 0.0 } else { sum(&r1) },
            n2: if cut_v { 0.0 } else { sum(&r2) },
            n1_smooth,
            n2_smooth,
            scale1: abs_sum(&r1),
            scale2: abs_sum(&r2),
            kink: cut_u || cut_v,
        })
    }

    /// `(u, v)` of the pair, truncation applied.
    pub fn eval(&self, t: f64, x: f64) -> Result<(f64, f64)> {
        let p = self.residual(t, x)?;
        Ok((p.u, p.v))
    }

    /// `(u, v)` of the untruncated branch.
    fn eval_smooth(&self, t: f64, x: f64) -> Result<(f64, f64, bool)> {
        let p = self.residual(t, x)?;
        let x = x - self.ssp.center;
        let [am, _, pp, _, bm, _, qq, _] = self.coefficients(t);
        let (aa, bb) = (1.0 + am, 1.0 + bm);
        let c = self.wave.speed;
        let s = self.ssp.shift(t);
        let gu = 1.0 - self.eps;
        let (u, v) = if self.ssp.family.two_sided() {
            let wp = self.wave.sample(x - c * t + s)?;
            let wm = self.wave.sample(-x - c * t + s)?;
            (
                aa * (wp.u.value + wm.u.value) - gu + pp,
                bb * (wp.v.value + wm.v.value) + qq,
            )
        } else {
            let w = self.wave.sample(x - c * t + s)?;
            (aa * w.u.value + pp, bb * w.v.value + qq)
        };
        Ok((u, v, p.kink))
    }

    /// Sample the pair on a grid at time `t`.
    pub fn state_at(&self, t: f64, grid: &Grid) -> Result<FieldState> {
        let mut u = Vec::with_capacity(grid.n);
        let mut v = Vec::with_capacity(grid.n);
        for x in grid.xs() {
            let (a, b) = self.eval(t, x)?;
            u.push(a);
            v.push(b);
        }
        Ok(FieldState { t, u, v })
    }

    /// `(N1 violation, N2 violation)`: wrong-signed parts beyond the rounding bound.
    fn violations(&self, p: &PointResidual) -> (f64, f64) {
        let eps = f64::EPSILON * ROUNDING_FACTOR;
        let sign = if self.ssp.family.is_lower() {
            1.0
        } else {
            -1.0
        };
        let w1 = sign * p.n1 - eps * p.scale1;
        let w2 = -sign * p.n2 - eps * p.scale2;
        (w1.max(0.0), w2.max(0.0))
    }

    fn wrong_signed(&self, p: &PointResidual) -> bool {
        let sign = if self.ssp.family.is_lower() {
            1.0
        } else {
            -1.0
        };
        sign * p.n1 > 0.0 || sign * p.n2 < 0.0
    }
}

/// Space-time lattice; `xi` is the comoving coordinate `x - center - c t`.
/// Two-sided pairs are evaluated at `x = center +- (xi + c t)`, covering both
/// fronts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Lattice {
    pub t_min: f64,
    pub t_max: f64,
    pub dt: f64,
    pub xi_min: f64,
    pub xi_max: f64,
    pub dxi: f64,
}

impl Default for Lattice {
    fn default() -> Self {
        Lattice {
            t_min: 0.0,
            t_max: 200.0,
            dt: 0.5,
            xi_min: -40.0,
            xi_max: 40.0,
            dxi: 0.05,
        }
    }
}

impl Lattice {
    fn count(lo: f64, hi: f64, h: f64) -> usize {
        ((hi - lo) / h + 1e-9).floor() as usize + 1
    }

    pub fn times(&self) -> Vec<f64> {
        (0..Self::count(self.t_min, self.t_max, self.dt))
            .map(|k| self.t_min + k as f64 * self.dt)
            .collect()
    }

    pub fn xis(&self) -> Vec<f64> {
        (0..Self::count(self.xi_min, self.xi_max, self.dxi))
            .map(|k| self.xi_min + k as f64 * self.dxi)
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let ok = self.dt > 0.0
            && self.dxi > 0.0
            && self.t_max >= self.t_min
            && self.xi_max > self.xi_min;
        if ok && self.t_min >= 0.0 {
            Ok(())
        } else {
            Err(Error::Precondition(
                "lattice needs positive steps, t_min >= 0 and nonempty ranges".into(),
            ))
        }
    }

    /// The `x` positions evaluated at time `t`.
    pub fn positions(&self, ssp: &SuperSubParams, c: f64, t: f64) -> Vec<f64> {
        let right = self.xis().into_iter().map(|xi| xi + c * t);
        let x0 = ssp.center;
        if ssp.family.two_sided() {
            right.flat_map(|x| [x0 + x, x0 - x]).collect()
        } else {
            right.map(|x| x0 + x).collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignViolation {
    pub value: f64,
    pub t: f64,
    pub x: f64,
}

fn worse(a: Option<SignViolation>, b: Option<SignViolation>) -> Option<SignViolation> {
    match (a, b) {
        (Some(x), Some(y)) => Some(if y.value > x.value { y } else { x }),
        (x, None) => x,
        (None, y) => y,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct RowSummary {
    n1: Option<SignViolation>,
    n2: Option<SignViolation>,
    violations: usize,
    kinks: usize,
    undetermined: usize,
}

/// Finite-difference cross-check on a lattice subsample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdCheck {
    pub samples: usize,
    /// Points whose stencil touches the truncation; evaluated on the smooth branch.
    pub flagged: usize,
    pub step: f64,
    /// Largest `|N_fd - N_closed_form|` over both operators.
    pub max_abs_diff: f64,
    /// Largest Richardson estimate of the finite-difference error.
    pub max_richardson: f64,
    /// Largest `|f| + |g|` over the sample.
    pub reaction_scale: f64,
    /// Richardson error below 10% of the reaction scale.
    pub within_budget: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub family: Family,
    pub params: ModelParams,
    pub ssp: SuperSubParams,
    pub speed: f64,
    pub lattice: Lattice,
    pub constraints: ConstraintVerdict,
    pub n1_worst_sign_violation: Option<SignViolation>,
    pub n2_worst_sign_violation: Option<SignViolation>,
    pub violations: usize,
    /// Wrong-signed values inside the rounding bound.
    pub undetermined: usize,
    pub kink_points: usize,
    pub points: usize,
    pub last_violation_time: Option<f64>,
    /// First lattice time from which no violation occurs; `None` if the last row violates.
    pub t_star: Option<f64>,
    pub fd_check: FdCheck,
}

impl ResidualReport {
    pub fn clean_from(&self, t: f64) -> bool {
        self.last_violation_time.is_none_or(|tv| tv < t)
    }
}

pub fn evaluate_residuals(pair: &Pair, lattice: &Lattice, exec: Exec) -> Result<ResidualReport> {
    lattice.validate()?;
    let times = lattice.times();
    let c = pair.wave.speed;
    let rows: Vec<Result<RowSummary>> = map_indexed(exec, times.len(), |k| {
        let t = times[k];
        let mut row = RowSummary::default();
        for x in lattice.positions(&pair.ssp, c, t) {
            let p = pair.residual(t, x)?;
            if p.kink {
                row.kinks += 1;
            }
            let (w1, w2) = pair.violations(&p);
            if w1 > 0.0 || w2 > 0.0 {
                row.violations += 1;
            } else if pair.wrong_signed(&p) {
                row.undetermined += 1;
            }
            if w1 > 0.0 {
                row.n1 = worse(row.n1, Some(SignViolation { value: w1, t, x }));
            }
            if w2 > 0.0 {
                row.n2 = worse(row.n2, Some(SignViolation { value: w2, t, x }));
            }
        }
        Ok(row)
    });
    let mut n1 = None;
    let mut n2 = None;
    let (mut violations, mut kinks, mut undetermined, mut points) = (0, 0, 0, 0);
    let mut last = None;
    for (k, row) in rows.into_iter().enumerate() {
        let row = row?;
        n1 = worse(n1, row.n1);
        n2 = worse(n2, row.n2);
        violations += row.violations;
        kinks += row.kinks;
        undetermined += row.undetermined;
        points += lattice.positions(&pair.ssp, c, times[k]).len();
        if row.violations > 0 {
            last = Some(k);
        }
    }
    let t_star = match last {
        None => Some(times[0]),
        Some(k) if k + 1 < times.len() => Some(times[k + 1]),
        Some(_) => None,
    };
    Ok(ResidualReport {
        family: pair.ssp.family,
        params: pair.params,
        ssp: pair.ssp,
        speed: c,
        lattice: *lattice,
        constraints: pair.constraints(),
        n1_worst_sign_violation: n1,
        n2_worst_sign_violation: n2,
        violations,
        undetermined,
        kink_points: kinks,
        points,
        last_violation_time: last.map(|k| times[k]),
        t_star,
        fd_check: fd_cross_check(pair, lattice, 1e-2)?,
    })
}

/// Central-difference residuals of the smooth branch at steps `h` and `h/2`,
/// Richardson-extrapolated and compared with the closed form on a 9 x 41
/// subsample of the lattice.
pub fn fd_cross_check(pair: &Pair, lattice: &Lattice, h: f64) -> Result<FdCheck> {
    let ModelParams { d, r, a, b } = pair.params;
    let times = lattice.times();
    let xis = lattice.xis();
    let pick = |n: usize, m: usize| -> Vec<usize> {
        if n <= m {
            (0..n).collect()
        } else {
            (0..m).map(|k| k * (n - 1) / (m - 1)).collect()
        }
    };
    let fd = |t: f64, x: f64, h: f64| -> Result<(f64, f64, bool)> {
        let (u, v, k0) = pair.eval_smooth(t, x)?;
        let (ue, ve, k1) = pair.eval_smooth(t, x + h)?;
        let (uw, vw, k2) = pair.eval_smooth(t, x - h)?;
        let (un, vn, k3) = pair.eval_smooth(t + h, x)?;
        let (us, vs, k4) = pair.eval_smooth(t - h, x)?;
        let ut = (un - us) / (2.0 * h);
        let vt = (vn - vs) / (2.0 * h);
        let uxx = (ue - 2.0 * u + uw) / (h * h);
        let vxx = (ve - 2.0 * v + vw) / (h * h);
        let n1 = ut - d * uxx - r * u * (1.0 - u - a * v);
        let n2 = vt - vxx - v * (1.0 - v - b * u);
        Ok((n1, n2, k0 || k1 || k2 || k3 || k4))
    };
    let mut out = FdCheck {
        samples: 0,
        flagged: 0,
        step: h,
        max_abs_diff: 0.0,
        max_richardson: 0.0,
        reaction_scale: 0.0,
        within_budget: true,
    };
    let c = pair.wave.speed;
    for &kt in &pick(times.len(), 9) {
        let t = times[kt].max(h);
        for &kx in &pick(xis.len(), 41) {
            let x = pair.ssp.center + xis[kx] + c * t;
            let exact = pair.residual(t, x)?;
            let (a1, a2, flag) = fd(t, x, h)?;
            let (b1, b2, _) = fd(t, x, 0.5 * h)?;
            let (u, v, _) = pair.eval_smooth(t, x)?;
            let rich1 = (4.0 * b1 - a1) / 3.0;
            let rich2 = (4.0 * b2 - a2) / 3.0;
            let err = ((b1 - a1).abs() / 3.0).max((b2 - a2).abs() / 3.0);
            out.samples += 1;
            if flag {
                out.flagged += 1;
            }
            out.max_abs_diff = out
                .max_abs_diff
                .max((rich1 - exact.n1_smooth).abs())
                .max((rich2 - exact.n2_smooth).abs());
            out.max_richardson = out.max_richardson.max(err);
            let reac = (r * u * (1.0 - u - a * v)).abs() + (v * (1.0 - v - b * u)).abs();
            out.reaction_scale = out.reaction_scale.max(reac);
        }
    }
    out.within_budget = out.max_richardson < 0.1 * out.reaction_scale;
    Ok(out)
}

/// Full residual fields, columns `t,x,N1,N2,kink`.
pub fn write_residual_csv<W: std::io::Write>(pair: &Pair, lattice: &Lattice, out: W) -> Result<()> {
    let io = |e: csv::Error| Error::Precondition(format!("csv output failed: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "x", "N1", "N2", "kink"]).map_err(io)?;
    for t in lattice.times() {
        for x in lattice.positions(&pair.ssp, pair.wave.speed, t) {
            let p = pair.residual(t, x)?;
            w.write_record(&[
                format!("{t}"),
                format!("{x}"),
                format!("{:e}", p.n1),
                format!("{:e}", p.n2),
                format!("{}", p.kink as u8),
            ])
            .map_err(io)?;
        }
    }
    w.flush()
        .map_err(|e| Error::Precondition(format!("csv output failed: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvasionCertificate {
    pub holds: bool,
    /// `min over the grid of min(u0 - u_lower, v_upper - v0)`.
    pub margin: f64,
    pub worst_x: f64,
    /// Time at which the pair is sampled.
    pub t_start: f64,
}

/// Whether `u0 >= u_lower(T, .)` and `v0 <= v_upper(T, .)` on the grid, with
/// `T` the residual report's `t_star`.
pub fn invasion_certificate(
    initial: &FieldState,
    grid: &Grid,
    pair: &Pair,
    report: &ResidualReport,
) -> Result<InvasionCertificate> {
    if pair.ssp.family != Family::LowerTwoSided {
        return Err(Error::WrongWaveKind(format!(
            "the certificate uses the two-sided lower pair, got {}",
            pair.ssp.family.name()
        )));
    }
    if initial.u.len() != grid.n || initial.v.len() != grid.n {
        return Err(Error::Mismatch(format!(
            "initial data has {} / {} samples for {} grid nodes",
            initial.u.len(),
            initial.v.len(),
            grid.n
        )));
    }
    if report.family != pair.ssp.family || report.ssp != pair.ssp || report.params != pair.params {
        return Err(Error::Mismatch(
            "residual report belongs to a different pair".into(),
        ));
    }
    let verdict = pair.constraints();
    if !verdict.pass {
        return Err(Error::Precondition(format!(
            "pair constraints fail: {:?}",
            verdict.failed
        )));
    }
    let t_start = report
        .t_star
        .ok_or_else(|| Error::Precondition("the pair's residual report never clears".into()))?;
    let mut margin = f64::INFINITY;
    let mut worst_x = grid.x_min;
    for (i, x) in grid.xs().into_iter().enumerate() {
        let (ul, vu) = pair.eval(t_start, x)?;
        let m = (initial.u[i] - ul).min(vu - initial.v[i]);
        if m < margin {
            margin = m;
            worst_x = x;
        }
    }
    Ok(InvasionCertificate {
        holds: margin >= 0.0,
        margin,
        worst_x,
        t_start,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ssp(family: Family, p0: f64, q0: f64, rate: f64, s0: f64, s1: f64) -> SuperSubParams {
        SuperSubParams {
            family,
            p0,
            q0,
            rate,
            shift0: s0,
            shift1: s1,
            epsilon: None,
            center: 0.0,
        }
    }

    #[test]
    fn constraint_examples() {
        let p = ModelParams::new(1.0, 1.0, 2.0, 2.0).unwrap();
        let v = check_constraints(&p, &ssp(Family::LowerSimple, 0.05, 0.5, 0.3, 0.0, 1.0));
        assert!(v.pass, "{:?}", v.failed);
        let v = check_constraints(&p, &ssp(Family::LowerSimple, 0.05, 0.5, 1.2, 0.0, 1.0));
        assert!(!v.pass);
        assert!(v.failed.contains(&"alpha<min{r,1,(a-1)r}".to_string()));
        let v = check_constraints(&p, &ssp(Family::UpperTwoSided, 0.2, 1.0, 0.05, -20.0, -1.0));
        assert!(v.pass, "{:?}", v.failed);
        let v = check_constraints(&p, &ssp(Family::LowerTwoSided, 0.2, 1.0, 0.05, -20.0, 1.0));
        assert_eq!(v.failed, vec!["q0>2b(1+q0)p0".to_string()]);
        let v = check_constraints(&p, &ssp(Family::UpperSimple, 0.01, 0.5, 0.3, 0.0, 1.0));
        assert_eq!(v.failed, vec!["eta1<0".to_string()]);
    }

    #[test]
    fn shift_and_amplitudes() {
        let s = ssp(Family::LowerSimple, 0.1, 0.2, 0.4, 3.0, 2.0);
        assert_eq!(s.shift(0.0), 1.0);
        let h = 1e-6;
        let fd = (s.shift(1.0 + h) - s.shift(1.0 - h)) / (2.0 * h);
        assert!((fd - s.shift_derivative(1.0)).abs() < 1e-8);
        assert!((s.p(10.0) - 0.1 * (-4.0f64).exp()).abs() < 1e-15);
        let mut a = s;
        a.family = Family::AppendixLower;
        let fd = (a.shift(1.0 + h) - a.shift(1.0 - h)) / (2.0 * h);
        assert!((fd - 0.4 * 2.0 * (-0.4f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn lattice_shape() {
        let l = Lattice::default();
        assert_eq!(l.times().len(), 401);
        assert_eq!(l.xis().len(), 1601);
        let s = ssp(Family::LowerTwoSided, 0.01, 0.2, 0.1, -5.0, 1.0);
        assert_eq!(l.positions(&s, 0.5, 2.0).len(), 3202);
    }
}
