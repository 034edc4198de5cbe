//! Trade plans: right-continuous cumulative sold positions with an optional
//! production-dependent lump at delivery, plus realized-cost bookkeeping.

use thiserror::Error;

use crate::drift::DriftCurve;
use crate::penalty::PenaltyFunction;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("invalid trade plan: {0}")]
    Invalid(String),
}

/// Cumulative sold quantity over time (normalized power units). `positions`
/// holds the value right after any trade at the matching time, so a block
/// trade shows up as a jump between consecutive knots. Selling only: the
/// sequence never decreases. The pre-trading position is zero by
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TradePlan {
    times: Vec<f64>,
    positions: Vec<f64>,
    terminal_lump: f64,
}

impl TradePlan {
    pub fn new(times: Vec<f64>, positions: Vec<f64>, terminal_lump: f64) -> Result<Self, PlanError> {
        if times.len() != positions.len() || times.is_empty() {
            return Err(PlanError::Invalid(format!(
                "{} times vs {} positions",
                times.len(),
                positions.len()
            )));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(PlanError::Invalid("times must be strictly ascending".into()));
        }
        if positions[0] < 0.0 || positions.windows(2).any(|w| w[1] < w[0] - 1e-12) {
            return Err(PlanError::Invalid(
                "positions must be nonnegative and nondecreasing".into(),
            ));
        }
        if !(terminal_lump >= 0.0) {
            return Err(PlanError::Invalid(format!(
                "terminal lump {terminal_lump} must be nonnegative"
            )));
        }
        Ok(Self {
            times,
            positions,
            terminal_lump,
        })
    }

    /// A single block of `quantity` sold at time `t` (quantity 0 allowed:
    /// the empty plan).
    pub fn single_block(t: f64, quantity: f64) -> Result<Self, PlanError> {
        if !(quantity >= 0.0) {
            return Err(PlanError::Invalid(format!(
                "block quantity {quantity} must be nonnegative"
            )));
        }
        if t > 0.0 {
            Self::new(vec![0.0, t], vec![0.0, quantity], 0.0)
        } else {
            Self::new(vec![0.0], vec![quantity], 0.0)
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn terminal_lump(&self) -> f64 {
        self.terminal_lump
    }

    pub fn with_terminal_lump(mut self, lump: f64) -> Result<Self, PlanError> {
        if !(lump >= 0.0) {
            return Err(PlanError::Invalid(format!(
                "terminal lump {lump} must be nonnegative"
            )));
        }
        self.terminal_lump = lump;
        Ok(self)
    }

    /// Position right after time `t` (step interpolation; zero before the
    /// first knot). The terminal lump is not included.
    pub fn position_at(&self, t: f64) -> f64 {
        let i = self.times.partition_point(|&k| k <= t);
        if i == 0 {
            0.0
        } else {
            self.positions[i - 1]
        }
    }

    /// Total quantity sold including the delivery-time lump.
    pub fn final_position(&self) -> f64 {
        self.positions[self.positions.len() - 1] + self.terminal_lump
    }

    /// Realized cost of the plan against a drift curve and penalty, given
    /// the delivered production `f_t`. The drift term integrates the step
    /// position exactly against the drift (a lump at delivery accrues no
    /// drift); block trades carry no impact cost.
    pub fn frictionless_cost(
        &self,
        drift: &DriftCurve,
        penalty: &PenaltyFunction,
        f_t: f64,
    ) -> CostBreakdown {
        let t_end = drift.horizon();
        let mut drift_cost = 0.0;
        for (i, &t) in self.times.iter().enumerate() {
            if t >= t_end {
                break;
            }
            let next = self.times.get(i + 1).copied().unwrap_or(t_end).min(t_end);
            drift_cost += self.positions[i] * drift.integral(t, next);
        }
        CostBreakdown {
            drift: drift_cost,
            impact: 0.0,
            volume: penalty.u(f_t - self.final_position()),
        }
    }
}

/// Per-path cost components; they always sum to the realized penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostBreakdown {
    /// Price-trend loss `integral of phi_t mu_t dt`.
    pub drift: f64,
    /// Market-impact cost `(gamma/2) integral of psi^2 dt`.
    pub impact: f64,
    /// Terminal volume penalty `u(F_T - phi_T)`.
    pub volume: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.drift + self.impact + self.volume
    }
}
