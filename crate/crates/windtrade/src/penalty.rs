//! Volume-mismatch penalties: the convex terminal cost `u` with its
//! derivative, derivative inverse, and Fenchel transform, the shortfall-only
//! clip `u_bar`, and the production-averaged forms used when trading without
//! a forecast.

use std::sync::Arc;

use thiserror::Error;

use crate::dist::ProductionLaw;
use crate::num::roots::bisect_expanding;

#[derive(Debug, Error)]
pub enum PenaltyError {
    #[error("invalid penalty parameter: {0}")]
    InvalidParam(String),
    #[error("averaged-derivative inversion failed at target {target}: {reason}")]
    InversionFailed { target: f64, reason: String },
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Kind {
    Quadratic { kappa: f64 },
    Custom { u: ScalarFn, du: ScalarFn, inv_du: ScalarFn },
}

/// Convex penalty on the terminal volume mismatch, with `u(0) = 0` and
/// `u'(0) = 0` so that over-delivery near zero is costless to first order.
#[derive(Clone)]
pub struct PenaltyFunction {
    kind: Kind,
}

impl PenaltyFunction {
    /// `u(x) = kappa x^2 / 2`.
    pub fn quadratic(kappa: f64) -> Result<Self, PenaltyError> {
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(PenaltyError::InvalidParam(format!(
                "kappa = {kappa} must be positive"
            )));
        }
        Ok(Self {
            kind: Kind::Quadratic { kappa },
        })
    }

    /// Caller-supplied `u`, its derivative, and the derivative's inverse.
    /// The caller vouches for convexity, `u'(0) = 0`, and `u'` strictly
    /// increasing; nothing here can check those globally.
    pub fn custom(u: ScalarFn, du: ScalarFn, inv_du: ScalarFn) -> Self {
        Self {
            kind: Kind::Custom { u, du, inv_du },
        }
    }

    /// The quadratic coefficient, when this is the quadratic penalty.
    pub fn kappa(&self) -> Option<f64> {
        match &self.kind {
            Kind::Quadratic { kappa } => Some(*kappa),
            Kind::Custom { .. } => None,
        }
    }

    pub fn u(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::Quadratic { kappa } => kappa * x * x / 2.0,
            Kind::Custom { u, .. } => u(x),
        }
    }

    /// Derivative `u'`.
    pub fn du(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::Quadratic { kappa } => kappa * x,
            Kind::Custom { du, .. } => du(x),
        }
    }

    /// Inverse of the derivative, `I = (u')^{-1}`.
    pub fn inv_du(&self, y: f64) -> f64 {
        match &self.kind {
            Kind::Quadratic { kappa } => y / kappa,
            Kind::Custom { inv_du, .. } => inv_du(y),
        }
    }

    /// Fenchel transform `v(y) = sup_x (xy - u(x)) = y I(y) - u(I(y))`.
    pub fn fenchel(&self, y: f64) -> f64 {
        match &self.kind {
            Kind::Quadratic { kappa } => y * y / (2.0 * kappa),
            Kind::Custom { .. } => {
                let x = self.inv_du(y);
                x * y - self.u(x)
            }
        }
    }

    /// Shortfall-only penalty `u_bar(x) = u(x) for x <= 0, u(0) otherwise`:
    /// producing more than the committed volume costs nothing.
    pub fn u_bar(&self, x: f64) -> f64 {
        self.u(x.min(0.0))
    }

    /// Derivative of `u_bar` (continuous because `u'(0) = 0`).
    pub fn du_bar(&self, x: f64) -> f64 {
        if x < 0.0 {
            self.du(x)
        } else {
            0.0
        }
    }
}

impl std::fmt::Debug for PenaltyFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.kind {
            Kind::Quadratic { kappa } => write!(f, "PenaltyFunction::Quadratic({kappa})"),
            Kind::Custom { .. } => write!(f, "PenaltyFunction::Custom"),
        }
    }
}

/// Penalty averaged over the production law: the functions that replace
/// `u` when the trader holds no forecast and only knows the distribution.
///
/// Two flavors coexist. The clipped flavor averages `u_bar` and drives the
/// frictionless no-forecast plan (unsold surplus can still be dumped at
/// delivery). The unclipped flavor averages `u` itself and drives the
/// market-impact variant, where a terminal block trade is not free.
pub struct AveragedPenalty<'a> {
    penalty: &'a PenaltyFunction,
    law: &'a dyn ProductionLaw,
    mean: f64,
}

impl<'a> AveragedPenalty<'a> {
    pub fn new(penalty: &'a PenaltyFunction, law: &'a dyn ProductionLaw) -> Self {
        let mean = law.mean();
        Self { penalty, law, mean }
    }

    /// `E[F_T]` for the underlying law.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Clipped average `u_tilde(x) = E[u_bar(F_T - E[F_T] + x)]`.
    pub fn u_tilde(&self, x: f64) -> f64 {
        // u_bar(F - c) with c = mean - x keeps only the F < c region.
        let c = self.mean - x;
        match self.penalty.kind {
            Kind::Quadratic { kappa } => {
                if c <= 0.0 {
                    return 0.0;
                }
                let m = self.law.partial_moments(c);
                kappa / 2.0 * (m.second - 2.0 * c * m.first + c * c * m.prob)
            }
            Kind::Custom { .. } => self
                .law
                .expectation(&|y| self.penalty.u_bar(y - c)),
        }
    }

    /// Derivative of the clipped average; nondecreasing, nonpositive,
    /// and zero once `x` exceeds the largest possible shortfall.
    pub fn du_tilde(&self, x: f64) -> f64 {
        let c = self.mean - x;
        match self.penalty.kind {
            Kind::Quadratic { kappa } => {
                if c <= 0.0 {
                    return 0.0;
                }
                let m = self.law.partial_moments(c);
                kappa * (m.first - c * m.prob)
            }
            Kind::Custom { .. } => self
                .law
                .expectation(&|y| self.penalty.du_bar(y - c)),
        }
    }

    /// Generalized inverse `I_tilde` of the clipped averaged derivative,
    /// defined for targets `z < 0` (where the root is unique).
    pub fn i_tilde(&self, z: f64) -> Result<f64, PenaltyError> {
        if !(z < 0.0) {
            return Err(PenaltyError::InversionFailed {
                target: z,
                reason: "clipped averaged derivative only reaches negative values".into(),
            });
        }
        bisect_expanding(|x| self.du_tilde(x) - z, -1.0, 1.0, 1e-12, 60).ok_or_else(|| {
            PenaltyError::InversionFailed {
                target: z,
                reason: "no sign change found while expanding the bracket".into(),
            }
        })
    }

    /// Fenchel transform of `u_tilde`, evaluated as `z I_tilde(z) -
    /// u_tilde(I_tilde(z))`; the supremum is attained where the slope is `z`.
    pub fn fenchel_tilde(&self, z: f64) -> Result<f64, PenaltyError> {
        let x = self.i_tilde(z)?;
        Ok(x * z - self.u_tilde(x))
    }

    /// Unclipped average `E[u(F_T - E[F_T] + x)]`.
    pub fn u_tilde_unclipped(&self, x: f64) -> f64 {
        match self.penalty.kind {
            Kind::Quadratic { kappa } => {
                let var = self.law.second_moment() - self.mean * self.mean;
                kappa / 2.0 * (var + x * x)
            }
            Kind::Custom { .. } => self
                .law
                .expectation(&|y| self.penalty.u(y - self.mean + x)),
        }
    }

    /// Derivative of the unclipped average (strictly increasing).
    pub fn du_tilde_unclipped(&self, x: f64) -> f64 {
        match self.penalty.kind {
            Kind::Quadratic { kappa } => kappa * x,
            Kind::Custom { .. } => self
                .law
                .expectation(&|y| self.penalty.du(y - self.mean + x)),
        }
    }

    /// Inverse of the unclipped averaged derivative.
    pub fn i_tilde_unclipped(&self, z: f64) -> Result<f64, PenaltyError> {
        match self.penalty.kind {
            Kind::Quadratic { kappa } => Ok(z / kappa),
            Kind::Custom { .. } => {
                bisect_expanding(|x| self.du_tilde_unclipped(x) - z, -1.0, 1.0, 1e-12, 60)
                    .ok_or_else(|| PenaltyError::InversionFailed {
                        target: z,
                        reason: "no sign change found while expanding the bracket".into(),
                    })
            }
        }
    }
}
