//! Optimal selling without market impact: closed-form plans for the exact-
//! forecast and no-forecast cases, and the backward induction that turns
//! discrete forecast updates into running-maximum threshold policies.

use rayon::prelude::*;
use thiserror::Error;

use crate::dist::{LatentParams, ProductionLaw, TruncatedLogNormal};
use crate::drift::DriftCurve;
use crate::forecast::{ForecastPath, ThetaSchedule, THETA_EPS};
use crate::num::hermite::gauss_hermite_std;
use crate::num::normal;
use crate::penalty::{AveragedPenalty, PenaltyFunction};
use crate::plan::TradePlan;

#[derive(Debug, Error)]
pub enum FrictionlessError {
    #[error("terminal forecast {0} outside [0, 1]")]
    BadForecast(f64),
    #[error("drift must be nonpositive for the threshold solver (max on grid = {0})")]
    PositiveDrift(f64),
    #[error("update times invalid: {0}")]
    BadUpdateTimes(String),
    #[error("threshold bracket [0, {xi_max}] too small at stage {stage} even after {doublings} doublings")]
    BracketFailure { stage: usize, xi_max: f64, doublings: u32 },
    #[error("path grid does not match the update times: {0}")]
    GridMismatch(String),
    #[error(transparent)]
    Penalty(#[from] crate::penalty::PenaltyError),
    #[error(transparent)]
    Plan(#[from] crate::plan::PlanError),
    #[error(transparent)]
    Dist(#[from] crate::dist::DistError),
    #[error(transparent)]
    Forecast(#[from] crate::forecast::ForecastError),
}

/// Grid resolution used when minimizing the remaining drift integral.
const DRIFT_RESOLUTION: usize = 1201;

/// Optimal plan when the terminal production `f_t` is known exactly:
/// a single block of `f_t - I(m*)` at the drift minimizer `t*`, worth
/// `f_t m* - v(m*)`. With no drift advantage anywhere (`m* = 0`) the block
/// waits until delivery and sells exactly `f_t`.
pub fn exact_forecast_plan(
    penalty: &PenaltyFunction,
    drift: &DriftCurve,
    f_t: f64,
) -> Result<(TradePlan, f64), FrictionlessError> {
    if !(0.0..=1.0).contains(&f_t) {
        return Err(FrictionlessError::BadForecast(f_t));
    }
    let (t_star, m_star) = drift.minimum(DRIFT_RESOLUTION);
    if m_star >= 0.0 {
        let plan = TradePlan::single_block(drift.horizon(), f_t)?;
        return Ok((plan, penalty.u(0.0)));
    }
    let quantity = f_t - penalty.inv_du(m_star);
    let plan = TradePlan::single_block(t_star, quantity)?;
    let value = f_t * m_star - penalty.fenchel(m_star);
    Ok((plan, value))
}

/// The no-forecast optimum: a deterministic block plus a terminal top-up
/// rule that depends on the realized production.
#[derive(Debug)]
pub struct NoForecastPlan {
    /// The deterministic part: one block at the drift minimizer.
    pub plan: TradePlan,
    /// Expected objective value `E[F_T] m* - v_tilde(m*)`.
    pub value: f64,
    mean: f64,
    i_star: f64,
}

impl NoForecastPlan {
    /// Quantity sold at delivery once production `f_t` is realized:
    /// `(f_t - E[F_T] + I_tilde(m*))^+`.
    pub fn terminal_lump(&self, f_t: f64) -> f64 {
        (f_t - self.mean + self.i_star).max(0.0)
    }

    /// The full realized plan for a given delivered production.
    pub fn realized_plan(&self, f_t: f64) -> TradePlan {
        self.plan
            .clone()
            .with_terminal_lump(self.terminal_lump(f_t))
            .expect("lump is clamped nonnegative")
    }
}

/// Optimal plan when only the production law is known: sell
/// `E[F_T] - I_tilde(m*)` at `t*`, then dump any surplus at delivery.
pub fn no_forecast_plan(
    penalty: &PenaltyFunction,
    law: &dyn ProductionLaw,
    drift: &DriftCurve,
) -> Result<NoForecastPlan, FrictionlessError> {
    let averaged = AveragedPenalty::new(penalty, law);
    let mean = averaged.mean();
    let (t_star, m_star) = drift.minimum(DRIFT_RESOLUTION);
    if m_star >= 0.0 {
        // No drift advantage: wait and sell the realized production at T.
        return Ok(NoForecastPlan {
            plan: TradePlan::single_block(drift.horizon(), 0.0)?,
            value: penalty.u(0.0),
            mean,
            i_star: mean,
        });
    }
    let i_star = averaged.i_tilde(m_star)?;
    let block = mean - i_star;
    let plan = TradePlan::single_block(t_star, block.max(0.0))?;
    let value = mean * m_star - averaged.fenchel_tilde(m_star)?;
    Ok(NoForecastPlan {
        plan,
        value,
        mean,
        i_star,
    })
}

/// Numerical knobs for the threshold backward induction.
#[derive(Debug, Clone)]
pub struct XiConfig {
    /// State-grid nodes per stage (log-spaced in the wind proxy).
    pub n_x: usize,
    /// Committed-position nodes, quadratically clustered toward zero.
    pub n_m: usize,
    /// Hermite nodes for the stage transition expectation.
    pub gh_nodes: usize,
    /// Bisection tolerance on the threshold.
    pub bisect_tol: f64,
    /// Tail mass cut for the per-stage state-grid range.
    pub quantile_eps: f64,
    /// Bracket top for thresholds; `None` derives it from the drift and
    /// penalty and doubles on bracket failure.
    pub xi_max: Option<f64>,
    /// Overrides the per-stage state range (applied to every stage).
    pub x_range: Option<(f64, f64)>,
    /// How many bracket doublings to attempt before giving up.
    pub max_doublings: u32,
}

impl Default for XiConfig {
    fn default() -> Self {
        Self {
            n_x: 201,
            n_m: 201,
            gh_nodes: 64,
            bisect_tol: 1e-10,
            quantile_eps: 1e-5,
            xi_max: None,
            x_range: None,
            max_doublings: 4,
        }
    }
}

/// Threshold functions `xi_k` tabulated on per-stage state grids. The
/// optimal position is the running maximum of `xi_k(X_k)` along the path.
#[derive(Debug, Clone)]
pub struct XiTables {
    update_times: Vec<f64>,
    x_grids: Vec<Vec<f64>>,
    xi: Vec<Vec<f64>>,
    xi_max: f64,
}

impl XiTables {
    /// Decision times `t_0 < ... < t_{n-1}` plus delivery `t_n = T`.
    pub fn update_times(&self) -> &[f64] {
        &self.update_times
    }

    pub fn stages(&self) -> usize {
        self.xi.len()
    }

    pub fn x_grid(&self, stage: usize) -> &[f64] {
        &self.x_grids[stage]
    }

    pub fn xi_values(&self, stage: usize) -> &[f64] {
        &self.xi[stage]
    }

    pub fn xi_max(&self) -> f64 {
        self.xi_max
    }

    /// Threshold at an arbitrary state, linear in `ln x` with constant
    /// extrapolation beyond the tabulated tail quantiles.
    pub fn xi_at(&self, stage: usize, x: f64) -> f64 {
        interp_log(&self.x_grids[stage], &self.xi[stage], x)
    }
}

fn interp_log(grid: &[f64], values: &[f64], x: f64) -> f64 {
    if grid.len() == 1 {
        return values[0];
    }
    let lx = x.ln().clamp(grid[0].ln(), grid[grid.len() - 1].ln());
    let lo = grid[0].ln();
    let step = (grid[grid.len() - 1].ln() - lo) / (grid.len() - 1) as f64;
    let pos = (lx - lo) / step;
    let i = (pos.floor() as usize).min(grid.len() - 2);
    let w = (pos - i as f64).clamp(0.0, 1.0);
    values[i] * (1.0 - w) + values[i + 1] * w
}

/// Committed-position grid, quadratically clustered toward zero where the
/// thresholds live; a uniform grid wastes nodes on rarely-reached high
/// commitments and visibly biases the induction.
fn m_grid(n_m: usize, xi_max: f64) -> Vec<f64> {
    (0..n_m)
        .map(|j| {
            let s = j as f64 / (n_m - 1) as f64;
            xi_max * s * s
        })
        .collect()
}

fn m_interp(m_values: &[f64], xi_max: f64, h_row: &[f64], m: f64) -> f64 {
    let n = m_values.len();
    let m = m.clamp(0.0, xi_max);
    let pos = (n - 1) as f64 * (m / xi_max).sqrt();
    let i = (pos.floor() as usize).min(n - 2);
    let w = (pos - i as f64).clamp(0.0, 1.0);
    h_row[i] * (1.0 - w) + h_row[i + 1] * w
}

/// One solved stage: thresholds plus the value table consumed by the
/// previous stage.
struct Stage {
    x_grid: Vec<f64>,
    xi: Vec<f64>,
    /// `h_k(x_i, m_j)` row-major over (x, m).
    h: Vec<f64>,
}

/// Expected marginal penalty at the final stage,
/// `E[u_bar'(f_prod(X_T) - m) | X = x]`, with the closed quadratic path
/// through the conditional law's partial moments.
fn terminal_h(
    penalty: &PenaltyFunction,
    lat: &LatentParams,
    theta: f64,
    gh: &(Vec<f64>, Vec<f64>),
    x: f64,
    m: f64,
) -> f64 {
    let curve = lat.curve();
    if theta < THETA_EPS {
        return penalty.du_bar(curve.f_prod(x) - m);
    }
    if let Some(kappa) = penalty.kappa() {
        if m <= 0.0 {
            return 0.0;
        }
        let span = lat.x_max - lat.x_min;
        let cond = TruncatedLogNormal::new(
            x.ln() - theta / 2.0 - span.ln(),
            theta.sqrt(),
            -lat.x_min / span,
        )
        .expect("conditional parameters are valid by construction");
        let pm = cond.partial_moments(m);
        return kappa * (pm.first - m * pm.prob);
    }
    let s = theta.sqrt();
    gh.0.iter()
        .zip(&gh.1)
        .map(|(&z, &w)| w * penalty.du_bar(curve.f_prod(x * (s * z - theta / 2.0).exp()) - m))
        .sum()
}

/// `h_k(x, m)` for an interior stage: the transition expectation of the
/// next stage's table with the committed position bumped by `xi_{k+1}`.
fn interior_h(
    next: &Stage,
    m_values: &[f64],
    xi_max: f64,
    dtheta: f64,
    gh: &(Vec<f64>, Vec<f64>),
    x: f64,
    m: f64,
) -> f64 {
    let lookup = |x_next: f64| -> f64 {
        let committed = m.max(interp_log(&next.x_grid, &next.xi, x_next));
        if next.x_grid.len() == 1 {
            return m_interp(m_values, xi_max, &next.h, committed);
        }
        let lo = next.x_grid[0].ln();
        let hi = next.x_grid[next.x_grid.len() - 1].ln();
        let step = (hi - lo) / (next.x_grid.len() - 1) as f64;
        let pos = ((x_next.ln().clamp(lo, hi)) - lo) / step;
        let i = (pos.floor() as usize).min(next.x_grid.len() - 2);
        let w = (pos - i as f64).clamp(0.0, 1.0);
        let n_m = m_values.len();
        let row0 = &next.h[i * n_m..(i + 1) * n_m];
        let row1 = &next.h[(i + 1) * n_m..(i + 2) * n_m];
        m_interp(m_values, xi_max, row0, committed) * (1.0 - w)
            + m_interp(m_values, xi_max, row1, committed) * w
    };
    if dtheta < THETA_EPS {
        return lookup(x);
    }
    let s = dtheta.sqrt();
    gh.0.iter()
        .zip(&gh.1)
        .map(|(&z, &w)| w * lookup(x * (s * z - dtheta / 2.0).exp()))
        .sum()
}

/// Backward induction for the discrete-update thresholds: at every stage
/// `xi_k(x)` solves `h_k(x, xi) = M_k` (remaining drift), where `h_k` is
/// the expected marginal penalty of the running-maximum policy from `k` on.
pub fn solve_xi_thresholds(
    penalty: &PenaltyFunction,
    lat: &LatentParams,
    schedule: &ThetaSchedule,
    update_times: &[f64],
    drift: &DriftCurve,
    cfg: &XiConfig,
) -> Result<XiTables, FrictionlessError> {
    if update_times.len() < 2 {
        return Err(FrictionlessError::BadUpdateTimes(
            "need at least one decision time plus delivery".into(),
        ));
    }
    if update_times.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(FrictionlessError::BadUpdateTimes(
            "update times must be strictly ascending".into(),
        ));
    }
    let t_end = *update_times.last().unwrap();
    if (t_end - drift.horizon()).abs() > 1e-9 || (t_end - schedule.horizon()).abs() > 1e-9 {
        return Err(FrictionlessError::BadUpdateTimes(format!(
            "last update time {t_end} must equal the drift and schedule horizon"
        )));
    }
    let max_mu = drift.max_on_grid(512);
    if max_mu > 1e-12 {
        return Err(FrictionlessError::PositiveDrift(max_mu));
    }
    let n = update_times.len() - 1;
    let thetas: Vec<f64> = update_times[..n]
        .iter()
        .map(|&t| schedule.theta_at(t))
        .collect::<Result<_, _>>()?;
    let remaining_drift: Vec<f64> = update_times[..n]
        .iter()
        .map(|&t| drift.integral(t, t_end))
        .collect();

    // Per-stage state grids: X starts at 1 when the first forecast issues,
    // so the stage-k marginal spread is theta_0 - theta_k.
    let x_grids: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            if let Some((lo, hi)) = cfg.x_range {
                return log_spaced(lo, hi, cfg.n_x);
            }
            let spread = (thetas[0] - thetas[k]).max(0.0);
            if spread < 1e-18 {
                return vec![1.0];
            }
            let s = spread.sqrt();
            let half = s * normal::inv_cdf(1.0 - cfg.quantile_eps);
            let center = -spread / 2.0;
            log_spaced((center - half).exp(), (center + half).exp(), cfg.n_x)
        })
        .collect();

    // Fully informative schedule: every threshold is the exact-forecast
    // block size and no induction is needed.
    let final_theta = thetas[n - 1];
    let all_deterministic =
        final_theta < THETA_EPS && thetas.windows(2).all(|w| w[0] - w[1] < THETA_EPS);
    if all_deterministic {
        let curve = lat.curve();
        let xi: Vec<Vec<f64>> = (0..n)
            .map(|k| {
                x_grids[k]
                    .iter()
                    .map(|&x| (curve.f_prod(x) - penalty.inv_du(remaining_drift[k])).max(0.0))
                    .collect()
            })
            .collect();
        return Ok(XiTables {
            update_times: update_times.to_vec(),
            x_grids,
            xi,
            xi_max: f64::INFINITY,
        });
    }

    let mut xi_max = cfg.xi_max.unwrap_or_else(|| {
        2.0 + 2.0 * penalty.inv_du(remaining_drift[0]).abs()
    });
    let gh = gauss_hermite_std(cfg.gh_nodes);

    'attempt: for attempt in 0..=cfg.max_doublings {
        let m_values = m_grid(cfg.n_m, xi_max);
        let mut stages: Vec<Stage> = Vec::with_capacity(n);
        for k in (0..n).rev() {
            let x_grid = x_grids[k].clone();
            let target = remaining_drift[k];
            let eval = |x: f64, m: f64| -> f64 {
                if k == n - 1 {
                    terminal_h(penalty, lat, final_theta, &gh, x, m)
                } else {
                    let next = stages.last().unwrap();
                    let dtheta = (thetas[k] - thetas[k + 1]).max(0.0);
                    interior_h(next, &m_values, xi_max, dtheta, &gh, x, m)
                }
            };
            // Solve h(x, xi) = target per node; h is nonincreasing in the
            // commitment, starting from h(x, 0) >= target.
            let solved: Vec<Option<f64>> = x_grid
                .par_iter()
                .map(|&x| {
                    let at_zero = eval(x, 0.0);
                    if at_zero <= target {
                        return Some(0.0);
                    }
                    if eval(x, xi_max) > target {
                        return None;
                    }
                    let (mut lo, mut hi) = (0.0f64, xi_max);
                    while hi - lo > cfg.bisect_tol {
                        let mid = 0.5 * (lo + hi);
                        if eval(x, mid) > target {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    Some(0.5 * (lo + hi))
                })
                .collect();
            if solved.iter().any(|v| v.is_none()) {
                if attempt == cfg.max_doublings {
                    return Err(FrictionlessError::BracketFailure {
                        stage: k,
                        xi_max,
                        doublings: attempt,
                    });
                }
                xi_max *= 2.0;
                continue 'attempt;
            }
            let xi: Vec<f64> = solved.into_iter().map(|v| v.unwrap()).collect();
            // Tabulate h_k for the previous stage (stage 0's table is
            // never read).
            let h = if k == 0 {
                Vec::new()
            } else {
                x_grid
                    .par_iter()
                    .flat_map_iter(|&x| {
                        m_values
                            .iter()
                            .map(|&m| eval(x, m))
                            .collect::<Vec<f64>>()
                    })
                    .collect()
            };
            stages.push(Stage { x_grid, xi, h });
        }
        stages.reverse();
        return Ok(XiTables {
            update_times: update_times.to_vec(),
            x_grids: stages.iter().map(|s| s.x_grid.clone()).collect(),
            xi: stages.into_iter().map(|s| s.xi).collect(),
            xi_max,
        });
    }
    unreachable!("loop either returns tables or errors out");
}

fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (llo + (lhi - llo) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Run the running-maximum policy along one simulated forecast path:
/// each increment trades at the start of its interval, and any surplus
/// production is dumped at delivery.
pub fn apply_threshold_policy(
    tables: &XiTables,
    path: &ForecastPath,
) -> Result<TradePlan, FrictionlessError> {
    let times = tables.update_times();
    if path.times.len() != times.len()
        || path
            .times
            .iter()
            .zip(times)
            .any(|(a, b)| (a - b).abs() > 1e-9)
    {
        return Err(FrictionlessError::GridMismatch(format!(
            "path has {} points, tables expect {}",
            path.times.len(),
            times.len()
        )));
    }
    let n = tables.stages();
    let mut positions = Vec::with_capacity(n);
    let mut running = 0.0f64;
    for k in 0..n {
        running = running.max(tables.xi_at(k, path.x_values[k]));
        positions.push(running);
    }
    let lump = (path.realized() - running).max(0.0);
    Ok(TradePlan::new(times[..n].to_vec(), positions, lump)?)
}
