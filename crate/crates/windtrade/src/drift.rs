//! Deterministic forward-price drift over the trading window, with the
//! remaining-integral minimization that decides when a block trade fires.

use std::sync::Arc;

use thiserror::Error;

use crate::num::quad;

#[derive(Debug, Error)]
pub enum DriftError {
    #[error("invalid drift parameter: {0}")]
    InvalidParam(String),
    #[error("drift integral over [0, {0}] is not finite")]
    NotIntegrable(f64),
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Kind {
    Constant(f64),
    /// Piecewise-linear in time between knots spanning exactly [0, T].
    Table { times: Vec<f64>, values: Vec<f64> },
    Custom(ScalarFn),
}

/// Deterministic drift `mu_t` of the forward price on `[0, T]`, in price
/// units per unit time.
#[derive(Clone)]
pub struct DriftCurve {
    kind: Kind,
    horizon: f64,
}

impl DriftCurve {
    pub fn constant(mu: f64, horizon: f64) -> Result<Self, DriftError> {
        if !mu.is_finite() {
            return Err(DriftError::InvalidParam(format!("mu = {mu}")));
        }
        Self::finish(Kind::Constant(mu), horizon)
    }

    pub fn table(times: Vec<f64>, values: Vec<f64>, horizon: f64) -> Result<Self, DriftError> {
        if times.len() != values.len() || times.len() < 2 {
            return Err(DriftError::InvalidParam(format!(
                "need matching knot lists of length >= 2, got {} and {}",
                times.len(),
                values.len()
            )));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(DriftError::InvalidParam(
                "knot times must be strictly ascending".into(),
            ));
        }
        if times[0] != 0.0 || (times[times.len() - 1] - horizon).abs() > 1e-9 {
            return Err(DriftError::InvalidParam(
                "knots must span exactly [0, horizon]".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DriftError::InvalidParam("non-finite knot value".into()));
        }
        Self::finish(Kind::Table { times, values }, horizon)
    }

    pub fn custom(mu: ScalarFn, horizon: f64) -> Result<Self, DriftError> {
        Self::finish(Kind::Custom(mu), horizon)
    }

    fn finish(kind: Kind, horizon: f64) -> Result<Self, DriftError> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(DriftError::InvalidParam(format!("horizon = {horizon}")));
        }
        let d = Self { kind, horizon };
        if !d.integral(0.0, horizon).is_finite() {
            return Err(DriftError::NotIntegrable(horizon));
        }
        Ok(d)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn mu(&self, t: f64) -> f64 {
        match &self.kind {
            Kind::Constant(m) => *m,
            Kind::Table { times, values } => {
                let t = t.clamp(0.0, self.horizon);
                let i = times.partition_point(|&k| k <= t).clamp(1, times.len() - 1);
                let w = (t - times[i - 1]) / (times[i] - times[i - 1]);
                values[i - 1] * (1.0 - w) + values[i] * w
            }
            Kind::Custom(f) => f(t),
        }
    }

    /// `integral(a, b)` of `mu` with `a <= b`; exact for the constant and
    /// piecewise-linear forms, adaptive quadrature otherwise.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        debug_assert!(a <= b + 1e-12);
        match &self.kind {
            Kind::Constant(m) => m * (b - a),
            Kind::Table { times, .. } => {
                let mut total = 0.0;
                let mut lo = a;
                while lo < b {
                    let i = times.partition_point(|&k| k <= lo).min(times.len() - 1);
                    let hi = times[i].min(b).max(lo);
                    if hi <= lo {
                        break;
                    }
                    total += 0.5 * (self.mu(lo) + self.mu(hi)) * (hi - lo);
                    lo = hi;
                }
                total
            }
            Kind::Custom(f) => {
                if b - a < 1e-14 {
                    0.0
                } else {
                    quad::integrate(&|t| f(t), a, b, 1e-12)
                }
            }
        }
    }

    /// Remaining drift integral to delivery.
    pub fn remaining(&self, t: f64) -> f64 {
        self.integral(t, self.horizon)
    }

    /// Minimize the remaining integral over an evaluation grid of
    /// `resolution` points: the best time to drop a block trade and the
    /// most negative remaining drift. Exact ties go to the earliest time.
    pub fn minimum(&self, resolution: usize) -> (f64, f64) {
        assert!(resolution >= 2, "need at least two grid points");
        let n = resolution;
        let grid: Vec<f64> = (0..n)
            .map(|j| self.horizon * j as f64 / (n - 1) as f64)
            .collect();
        // Suffix-sum the per-segment integrals so each node's remaining
        // integral is consistent with its neighbors to rounding error.
        let mut remaining = vec![0.0; n];
        for j in (0..n - 1).rev() {
            remaining[j] = remaining[j + 1] + self.integral(grid[j], grid[j + 1]);
        }
        let mut best = 0usize;
        for j in 1..n {
            if remaining[j] < remaining[best] {
                best = j;
            }
        }
        (grid[best], remaining[best])
    }

    /// Largest drift value seen on a sampling grid; the discrete-update
    /// solver rejects instances where this is positive.
    pub fn max_on_grid(&self, resolution: usize) -> f64 {
        assert!(resolution >= 2);
        match &self.kind {
            Kind::Constant(m) => *m,
            Kind::Table { values, .. } => values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            Kind::Custom(_) => (0..resolution)
                .map(|j| self.mu(self.horizon * j as f64 / (resolution - 1) as f64))
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

impl std::fmt::Debug for DriftCurve {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.kind {
            Kind::Constant(m) => write!(f, "DriftCurve::Constant({m}, T={})", self.horizon),
            Kind::Table { times, .. } => {
                write!(f, "DriftCurve::Table({} knots, T={})", times.len(), self.horizon)
            }
            Kind::Custom(_) => write!(f, "DriftCurve::Custom(T={})", self.horizon),
        }
    }
}
