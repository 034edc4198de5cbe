//! The forecast process and its variance structure.
//!
//! The forecast at time `t` is `F_t = g(X_t, theta(t))` where `X` is a
//! unit-mean log-normal martingale and `theta(t)` is the log-variance of
//! `X_T / X_t` (remaining uncertainty, including a terminal jump of variance
//! `b^2` that models the never-predictable component). `g` is the
//! conditional expectation of the power curve output and has a closed form
//! in normal CDFs. The forecast-error variance `phi(theta) =
//! Var[F_t - F_T]` links the model to data: it is strictly increasing in
//! `theta`, so observed error variances pin the schedule down.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::dist::{LatentParams, PowerCurve, ProductionLaw, TruncatedLogNormal};
use crate::num::hermite::gauss_hermite_std;
use crate::num::normal;
use crate::num::quad;
use crate::num::streams::substream;

/// Below this, `theta` is treated as exactly zero (perfect forecast); the
/// closed form for `g` would otherwise divide by `sqrt(theta)`.
pub(crate) const THETA_EPS: f64 = 1e-14;

#[derive(Debug, Error, PartialEq)]
pub enum ForecastError {
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParam {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("time {t} outside schedule domain [{lo}, {hi}]")]
    OutOfRange { t: f64, lo: f64, hi: f64 },
    #[error("tabulated schedule must be nonincreasing in time: theta rises at knot {index}")]
    NotMonotone { index: usize },
    #[error("simulation grid invalid: {0}")]
    BadGrid(String),
}

#[derive(Debug, Clone, PartialEq)]
enum Variant {
    Parametric {
        sigma0: f64,
        eta: f64,
        b: f64,
        tau_star: f64,
    },
    Tabulated {
        times: Vec<f64>,
        thetas: Vec<f64>,
    },
}

/// The remaining-variance schedule `theta(t)` on `[0, T]`, capped at
/// `nu_x^2` (beyond that horizon the forecast carries no information).
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaSchedule {
    variant: Variant,
    horizon: f64,
    cap: f64,
}

impl ThetaSchedule {
    /// Exponential-volatility form `theta(t) = min(b^2 +
    /// sigma0^2/(2 eta) (e^{2 eta (T-t)} - 1), cap)`. `tau_star` is the
    /// horizon at which the cap is reached (metadata from calibration; the
    /// min already encodes it).
    pub fn parametric(
        sigma0: f64,
        eta: f64,
        b: f64,
        tau_star: f64,
        horizon: f64,
        nu_x_sq_cap: f64,
    ) -> Result<Self, ForecastError> {
        for (name, value, ok) in [
            ("sigma0", sigma0, sigma0.is_finite() && sigma0 >= 0.0),
            ("eta", eta, eta.is_finite()),
            ("b", b, b.is_finite() && b >= 0.0),
            ("tau_star", tau_star, tau_star.is_finite() && tau_star > 0.0),
            ("horizon", horizon, horizon.is_finite() && horizon > 0.0),
            ("nu_x_sq_cap", nu_x_sq_cap, nu_x_sq_cap.is_finite() && nu_x_sq_cap > 0.0),
        ] {
            if !ok {
                return Err(ForecastError::InvalidParam {
                    name,
                    value,
                    reason: "out of admissible range",
                });
            }
        }
        Ok(Self {
            variant: Variant::Parametric { sigma0, eta, b, tau_star },
            horizon,
            cap: nu_x_sq_cap,
        })
    }

    /// Piecewise-linear schedule through `(times[i], thetas[i])`. Values are
    /// clamped into `[0, cap]` (estimation noise can overshoot the cap); the
    /// clamped sequence must be nonincreasing. Evaluation outside the knot
    /// range is an error: extrapolating forecast quality invents data.
    pub fn tabulated(
        times: Vec<f64>,
        thetas: Vec<f64>,
        horizon: f64,
        nu_x_sq_cap: f64,
    ) -> Result<Self, ForecastError> {
        if times.len() != thetas.len() || times.is_empty() {
            return Err(ForecastError::BadGrid(format!(
                "{} knot times vs {} values",
                times.len(),
                thetas.len()
            )));
        }
        if !(horizon.is_finite() && horizon > 0.0 && nu_x_sq_cap > 0.0) {
            return Err(ForecastError::InvalidParam {
                name: "horizon/cap",
                value: horizon,
                reason: "must be positive",
            });
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(ForecastError::BadGrid("knot times must be strictly ascending".into()));
        }
        let thetas: Vec<f64> = thetas.iter().map(|&v| v.clamp(0.0, nu_x_sq_cap)).collect();
        if let Some(i) = thetas.windows(2).position(|w| w[1] > w[0] + 1e-12) {
            return Err(ForecastError::NotMonotone { index: i + 1 });
        }
        Ok(Self {
            variant: Variant::Tabulated { times, thetas },
            horizon,
            cap: nu_x_sq_cap,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    /// Fitted parameters `(sigma0, eta, b, tau_star)` if parametric.
    pub fn parametric_values(&self) -> Option<(f64, f64, f64, f64)> {
        match self.variant {
            Variant::Parametric { sigma0, eta, b, tau_star } => Some((sigma0, eta, b, tau_star)),
            Variant::Tabulated { .. } => None,
        }
    }

    /// Knot view `(times, thetas)` if tabulated.
    pub fn knots(&self) -> Option<(&[f64], &[f64])> {
        match &self.variant {
            Variant::Tabulated { times, thetas } => Some((times, thetas)),
            Variant::Parametric { .. } => None,
        }
    }

    /// Remaining variance at time `t in [0, T]`.
    pub fn theta_at(&self, t: f64) -> Result<f64, ForecastError> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(ForecastError::OutOfRange {
                t,
                lo: 0.0,
                hi: self.horizon,
            });
        }
        match &self.variant {
            Variant::Parametric { sigma0, eta, b, .. } => {
                let s = self.horizon - t;
                // exp_m1 keeps the ratio form accurate for small eta; at
                // exactly zero take the limit b^2 + sigma0^2 s.
                let accrued = if *eta == 0.0 {
                    sigma0 * sigma0 * s
                } else {
                    sigma0 * sigma0 / (2.0 * eta) * (2.0 * eta * s).exp_m1()
                };
                Ok((b * b + accrued).min(self.cap))
            }
            Variant::Tabulated { times, thetas } => {
                let (lo, hi) = (times[0], *times.last().unwrap());
                if !(lo..=hi).contains(&t) {
                    return Err(ForecastError::OutOfRange { t, lo, hi });
                }
                let i = match times.binary_search_by(|probe| probe.partial_cmp(&t).unwrap()) {
                    Ok(i) => return Ok(thetas[i]),
                    Err(i) => i,
                };
                let (t0, t1) = (times[i - 1], times[i]);
                let w = (t - t0) / (t1 - t0);
                Ok(thetas[i - 1] * (1.0 - w) + thetas[i] * w)
            }
        }
    }
}

/// The conditional expectation `E[f_prod(x e^{sqrt(theta) N - theta/2})]`:
/// the forecast given latent level `x` and remaining variance `theta`.
pub fn g(curve: &PowerCurve, x: f64, theta: f64) -> f64 {
    debug_assert!(x > 0.0 && theta >= 0.0);
    if theta < THETA_EPS {
        return curve.f_prod(x);
    }
    let (x_min, x_max) = (curve.x_min(), curve.x_max());
    let rt = theta.sqrt();
    let d_plus = |a: f64| ((x / a).ln() + theta / 2.0) / rt;
    let d_minus = |a: f64| ((x / a).ln() - theta / 2.0) / rt;
    let val = (x * (normal::cdf(d_plus(x_min)) - normal::cdf(d_plus(x_max)))
        - x_min * normal::cdf(d_minus(x_min))
        + x_max * normal::cdf(d_minus(x_max)))
        / (x_max - x_min);
    // The expression is a probability mixture, but catastrophic cancellation
    // for x far outside [x_min, x_max] can leave dust outside [0, 1].
    val.clamp(0.0, 1.0)
}

/// Forecast-error variance `phi(theta) = E[(F_t - F_T)^2]` as a function of
/// remaining variance, for the production model `lat`.
///
/// `theta` slightly outside `[0, nu_x^2]` (estimation noise) is clamped.
/// Endpoints are exact: `phi(0) = 0`, `phi(nu_x^2) = Var[f_prod(X_T)]`. The
/// interior uses `E[g(X_t, theta)^2]` via a 128-node Hermite rule, except
/// for `theta < 0.1 nu_x^2` where `g(., theta)` is nearly kinked at the
/// curve knots and the fixed rule degrades; there an adaptive rule split at
/// the kink images keeps the error below 1e-9.
pub fn error_variance(lat: &LatentParams, theta: f64) -> f64 {
    let cap = lat.nu_x * lat.nu_x;
    let theta = theta.clamp(0.0, cap);
    let law = TruncatedLogNormal::from_latent(lat).expect("valid latent params");
    let m2 = law.second_moment();
    if theta < THETA_EPS {
        return 0.0;
    }
    if theta > cap - THETA_EPS {
        let m = law.mean();
        return m2 - m * m;
    }
    let curve = lat.curve();
    let s2 = cap - theta; // log-variance of X_t itself
    let s = s2.sqrt();
    let x_of = |z: f64| (s * z - s2 / 2.0).exp();
    let eg2 = if theta >= 0.1 * cap {
        let (nodes, weights) = gauss_hermite_std(128);
        nodes
            .iter()
            .zip(&weights)
            .map(|(&z, &w)| {
                let v = g(&curve, x_of(z), theta);
                w * v * v
            })
            .sum::<f64>()
    } else {
        // z-images of the curve knots, where g(., small theta) bends hard.
        let mut kinks: Vec<f64> = [curve.x_min(), curve.x_max()]
            .iter()
            .map(|a| (a.ln() + s2 / 2.0) / s)
            .filter(|z| z.abs() < 10.0)
            .collect();
        kinks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        quad::integrate_split(
            &|z: f64| {
                let v = g(&curve, x_of(z), theta);
                v * v * normal::pdf(z)
            },
            -10.0,
            10.0,
            &kinks,
            1e-10,
        )
    };
    (m2 - eg2).max(0.0)
}

/// One simulated joint trajectory of the latent factor and the forecast.
/// The last entry is delivery: `f_values` ends with realized production.
#[derive(Debug, Clone)]
pub struct ForecastPath {
    pub times: Vec<f64>,
    pub x_values: Vec<f64>,
    pub f_values: Vec<f64>,
}

impl ForecastPath {
    pub fn realized(&self) -> f64 {
        *self.f_values.last().unwrap()
    }
}

/// Purpose tag for path substreams; shared by every consumer that wants
/// common random numbers across policies.
pub const PATHS_STREAM: &str = "forecast-paths";

/// Simulate `n_paths` exact joint trajectories on `grid` (ascending, last
/// point = schedule horizon). Interior steps are log-normal with variance
/// `theta(t_k) - theta(t_{k+1})`; the final step to delivery carries the
/// whole remaining variance `theta(t_{n-1})`, which folds in the terminal
/// jump. Deterministic given `seed`; paths are generated in parallel from
/// per-path substreams.
pub fn simulate_paths(
    lat: &LatentParams,
    schedule: &ThetaSchedule,
    grid: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<Vec<ForecastPath>, ForecastError> {
    let thetas = validate_grid(schedule, grid)?;
    let curve = lat.curve();
    Ok((0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = substream(seed, PATHS_STREAM, p as u64);
            simulate_one(&curve, grid, &thetas, &mut rng)
        })
        .collect())
}

/// Check the grid and return `theta` at each node.
pub(crate) fn validate_grid(
    schedule: &ThetaSchedule,
    grid: &[f64],
) -> Result<Vec<f64>, ForecastError> {
    if grid.len() < 2 {
        return Err(ForecastError::BadGrid("need at least two time points".into()));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(ForecastError::BadGrid("times must be strictly ascending".into()));
    }
    let t_last = *grid.last().unwrap();
    if (t_last - schedule.horizon()).abs() > 1e-9 {
        return Err(ForecastError::BadGrid(format!(
            "last grid point {t_last} must equal the horizon {}",
            schedule.horizon()
        )));
    }
    let thetas: Vec<f64> = grid
        .iter()
        .map(|&t| schedule.theta_at(t))
        .collect::<Result<_, _>>()?;
    if let Some(i) = thetas.windows(2).position(|w| w[1] > w[0] + 1e-12) {
        return Err(ForecastError::NotMonotone { index: i + 1 });
    }
    Ok(thetas)
}

pub(crate) fn simulate_one<R: Rng>(
    curve: &PowerCurve,
    grid: &[f64],
    thetas: &[f64],
    rng: &mut R,
) -> ForecastPath {
    let n = grid.len();
    let mut x = vec![1.0f64; n];
    for k in 0..n - 1 {
        // Interior steps consume theta(t_k) - theta(t_{k+1}); the final step
        // consumes everything left, including the jump variance.
        let dv = if k + 1 == n - 1 {
            thetas[k]
        } else {
            (thetas[k] - thetas[k + 1]).max(0.0)
        };
        let z: f64 = rng.sample(StandardNormal);
        x[k + 1] = x[k] * (dv.sqrt() * z - dv / 2.0).exp();
    }
    let f = (0..n)
        .map(|i| {
            if i == n - 1 {
                curve.f_prod(x[i])
            } else {
                g(curve, x[i], thetas[i])
            }
        })
        .collect();
    ForecastPath {
        times: grid.to_vec(),
        x_values: x,
        f_values: f,
    }
}
