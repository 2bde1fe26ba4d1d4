//! Model coefficients, canonical speeds and the characteristic roots that
//! govern the exponential tails of the bistable front.
//!
//! The system is
//!
//! ```text
//! u_t = d u_xx + r u (1 - u - a v)
//! v_t =   v_xx +   v (1 - v - b u)
//! ```
//!
//! with all coefficients positive. Everything here is a pure function of the
//! four coefficients (and a trial speed for the roots).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative threshold under which two characteristic roots are treated as a
/// double root (the polynomial prefactor exponent switches from 0 to 1).
pub const DOUBLE_ROOT_TOL: f64 = 1e-8;

/// The four positive coefficients `(d, r, a, b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Diffusion rate of `u` (the diffusion of `v` is scaled to 1).
    pub d: f64,
    /// Intrinsic growth rate of `u`.
    pub r: f64,
    /// Competition pressure of `v` on `u`.
    pub a: f64,
    /// Competition pressure of `u` on `v`.
    pub b: f64,
}

impl ModelParams {
    pub fn new(d: f64, r: f64, a: f64, b: f64) -> Result<Self> {
        let p = ModelParams { d, r, a, b };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [("d", self.d), ("r", self.r), ("a", self.a), ("b", self.b)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    value,
                    rule: "all coefficients must be finite and strictly positive",
                });
            }
        }
        Ok(())
    }

    /// Both single-species states are stable: `a > 1` and `b > 1`.
    pub fn is_strong_competition(&self) -> bool {
        self.a > 1.0 && self.b > 1.0
    }

    pub fn require_strong_competition(&self) -> Result<()> {
        self.validate()?;
        if self.is_strong_competition() {
            Ok(())
        } else {
            Err(Error::NotStrongCompetition {
                a: self.a,
                b: self.b,
            })
        }
    }

    /// Relabel the species (`u <-> v`). Only meaningful when `d = r = 1`.
    pub fn swapped(&self) -> ModelParams {
        ModelParams {
            d: self.d,
            r: self.r,
            a: self.b,
            b: self.a,
        }
    }

    /// Minimal KPP speed of `u` alone, `2 sqrt(r d)`.
    pub fn c_u(&self) -> f64 {
        2.0 * (self.r * self.d).sqrt()
    }
}

/// The canonical speeds. `c_uv` and `c_0` stay `None` until a front solve
/// resolves the bistable speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedSet {
    pub c_u: f64,
    pub c_v: f64,
    pub c_uv: Option<f64>,
    pub c_0: Option<f64>,
}

impl SpeedSet {
    /// Attach a computed bistable speed; also fills the midpoint speed.
    pub fn with_cuv(mut self, c_uv: f64) -> SpeedSet {
        self.c_uv = Some(c_uv);
        self.c_0 = Some(0.5 * (c_uv + self.c_v));
        self
    }

    /// True when a resolved `c_uv` lies inside the admissible bracket `(-c_v, c_u)`.
    pub fn cuv_in_bracket(&self) -> Option<bool> {
        self.c_uv.map(|c| c > -self.c_v && c < self.c_u)
    }
}

pub fn canonical_speeds(params: &ModelParams) -> Result<SpeedSet> {
    params.validate()?;
    Ok(SpeedSet {
        c_u: params.c_u(),
        c_v: 2.0,
        c_uv: None,
        c_0: None,
    })
}

/// Exponential tail rates of a front moving at speed `c`.
///
/// `lambda1`, `lambda2` are the negative roots of the linearizations at
/// `(0, 1)` (right tail), `lambda3`, `lambda4` the positive roots at `(1, 0)`
/// (left tail).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicRoots {
    pub speed: f64,
    /// Negative root of `c l + d l^2 + r (1 - a) = 0`.
    pub lambda1: f64,
    /// Negative root of `c l + l^2 - 1 = 0`.
    pub lambda2: f64,
    /// Positive root of `c l + d l^2 - r = 0`.
    pub lambda3: f64,
    /// Positive root of `c l + l^2 + 1 - b = 0`.
    pub lambda4: f64,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    pub gamma_plus: u8,
    pub gamma_minus: u8,
}

/// Roots of `q2 x^2 + q1 x + q0 = 0` with `q0 / q2 < 0`, as (negative, positive).
///
/// Uses the cancellation-free form: one root from `-(q1 + sgn(q1) sqrt(D)) / 2`,
/// the other from the product of the roots.
pub(crate) fn split_roots(q2: f64, q1: f64, q0: f64) -> (f64, f64) {
    debug_assert!(q0 / q2 < 0.0);
    let disc = q1 * q1 - 4.0 * q2 * q0;
    let sgn = if q1 >= 0.0 { 1.0 } else { -1.0 };
    let q = -0.5 * (q1 + sgn * disc.sqrt());
    let x1 = q / q2;
    let x2 = q0 / q;
    if x1 < x2 {
        (x1, x2)
    } else {
        (x2, x1)
    }
}

fn nearly_equal(x: f64, y: f64) -> bool {
    (x - y).abs() < DOUBLE_ROOT_TOL * x.abs().max(1.0)
}

pub fn char_roots(params: &ModelParams, c: f64) -> Result<CharacteristicRoots> {
    char_roots_perturbed(params, c, 0.0)
}

/// Roots for the system whose growth rates are shifted to `1 - eps` (for `u`)
/// and `1 + eps` (for `v`), linearized at `(1 - eps, 0)` and `(0, 1 + eps)`.
/// `eps = 0` gives [`char_roots`].
pub fn char_roots_perturbed(params: &ModelParams, c: f64, eps: f64) -> Result<CharacteristicRoots> {
    params.require_strong_competition()?;
    if !c.is_finite() {
        return Err(Error::InvalidParameter {
            name: "c",
            value: c,
            rule: "wave speed must be finite",
        });
    }
    let ModelParams { d, r, a, b } = *params;
    let (gu, gv) = (1.0 - eps, 1.0 + eps);
    if !(eps.is_finite() && gu > 0.0 && a * gv > gu && b * gu > gv) {
        return Err(Error::BistabilityLost { epsilon: eps });
    }
    let (lambda1, _) = split_roots(d, c, r * (gu - a * gv));
    let (lambda2, _) = split_roots(1.0, c, -gv);
    let (_, lambda3) = split_roots(d, c, -r * gu);
    let (_, lambda4) = split_roots(1.0, c, gv - b * gu);
    Ok(CharacteristicRoots {
        speed: c,
        lambda1,
        lambda2,
        lambda3,
        lambda4,
        lambda_plus: lambda1.max(lambda2),
        lambda_minus: lambda3.min(lambda4),
        gamma_plus: nearly_equal(lambda1, lambda2) as u8,
        gamma_minus: nearly_equal(lambda3, lambda4) as u8,
    })
}

/// Sign of `c_uv` according to the classical explicit criteria.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Positive,
    Zero,
    Negative,
    Unknown,
}

/// Which criterion fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignRule {
    /// `r = d`: the sign of `c_uv` is the sign of `b - a`.
    EqualRates,
    /// `r > d` and `b >= (r/d)^2 a`: positive.
    FastGrowthOfU,
    /// `r < d` and `a >= (d/r)^2 b`: negative.
    FastDiffusionOfU,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignPrediction {
    pub verdict: Verdict,
    pub rule: SignRule,
}

fn same(x: f64, y: f64) -> bool {
    (x - y).abs() <= 1e-12 * x.abs().max(y.abs())
}

pub fn cuv_sign_prediction(params: &ModelParams) -> Result<SignPrediction> {
    params.require_strong_competition()?;
    let ModelParams { d, r, a, b } = *params;
    let (verdict, rule) = if same(r, d) {
        let v = if same(a, b) {
            Verdict::Zero
        } else if b > a {
            Verdict::Positive
        } else {
            Verdict::Negative
        };
        (v, SignRule::EqualRates)
    } else if r > d && b >= (r / d).powi(2) * a {
        (Verdict::Positive, SignRule::FastGrowthOfU)
    } else if r < d && a >= (d / r).powi(2) * b {
        (Verdict::Negative, SignRule::FastDiffusionOfU)
    } else {
        (Verdict::Unknown, SignRule::None)
    };
    Ok(SignPrediction { verdict, rule })
}
