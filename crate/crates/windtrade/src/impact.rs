//! Trading with quadratic market impact: the deterministic Pontryagin
//! solution when the terminal production (or only its law) is known, an
//! explicit monotone finite-difference solver for the sell-only control
//! problem with continuous forecast updates, forward simulation of solved
//! policies, and the explicit buy/sell strategy.

use rayon::prelude::*;
use thiserror::Error;

use crate::dist::{LatentParams, ProductionLaw};
use crate::drift::DriftCurve;
use crate::forecast::ForecastPath;
use crate::num::{normal, quad};
use crate::penalty::{AveragedPenalty, PenaltyFunction};
use crate::plan::{CostBreakdown, TradePlan};

#[derive(Debug, Error)]
pub enum ImpactError {
    #[error("invalid impact parameter: {0}")]
    InvalidParam(String),
    #[error("time stepping infeasible: stage at t = {t} needs more than {max_substeps} substeps; try a coarser rate bound (larger gamma), more time nodes, or fewer state nodes")]
    CflInfeasible { t: f64, max_substeps: usize },
    #[error("numerical blowup: non-finite value at t = {t} (phi index {i}, y index {j})")]
    NumericalBlowup { t: f64, i: usize, j: usize },
    #[error("path does not fit the solved grid: {0}")]
    GridMismatch(String),
    #[error(transparent)]
    Penalty(#[from] crate::penalty::PenaltyError),
    #[error(transparent)]
    Plan(#[from] crate::plan::PlanError),
    #[error(transparent)]
    Forecast(#[from] crate::forecast::ForecastError),
}

/// Market-impact problem data: quadratic trading friction `gamma`
/// (cost `(gamma/2) integral of psi^2`), price drift, and terminal penalty.
pub struct ImpactParams {
    gamma: f64,
    pub drift: DriftCurve,
    pub penalty: PenaltyFunction,
}

impl ImpactParams {
    pub fn new(
        gamma: f64,
        drift: DriftCurve,
        penalty: PenaltyFunction,
    ) -> Result<Self, ImpactError> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(ImpactError::InvalidParam(format!(
                "gamma = {gamma} must be positive"
            )));
        }
        Ok(Self {
            gamma,
            drift,
            penalty,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// Deterministic optimal schedule under market impact.
#[derive(Debug, Clone)]
pub struct PontryaginPlan {
    pub times: Vec<f64>,
    /// Selling rate at each time node.
    pub rates: Vec<f64>,
    /// Cumulative position at each time node.
    pub positions: Vec<f64>,
    pub phi_terminal: f64,
    /// Objective value (drift loss + impact cost + volume penalty).
    pub value: f64,
    /// The three components of `value`; for the no-forecast variant the
    /// volume part is the penalty averaged over the production law.
    pub breakdown: CostBreakdown,
}

/// Shared fixed-point solver: the optimal rate is
/// `psi_t = (1/gamma)(du(f_ref - phi_T) - R(t))^+` with `R(t)` the
/// remaining drift, and `phi_T` must equal its own time integral.
fn pontryagin_core(
    ip: &ImpactParams,
    du: &dyn Fn(f64) -> f64,
    u_terminal: &dyn Fn(f64) -> f64,
    f_ref: f64,
    grid: &[f64],
) -> Result<PontryaginPlan, ImpactError> {
    if grid.len() < 2 || grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(ImpactError::InvalidParam(
            "rate grid must be ascending with at least two nodes".into(),
        ));
    }
    let t_end = ip.drift.horizon();
    if (grid[0] - 0.0).abs() > 1e-12 || (grid[grid.len() - 1] - t_end).abs() > 1e-9 {
        return Err(ImpactError::InvalidParam(
            "rate grid must span [0, horizon]".into(),
        ));
    }
    let gamma = ip.gamma;
    let total_rate = |phi_t: f64| -> f64 {
        quad::integrate(
            &|t| (du(f_ref - phi_t) - ip.drift.remaining(t)).max(0.0) / gamma,
            0.0,
            t_end,
            1e-13,
        )
    };
    // The map phi -> total_rate(phi) is nonincreasing, so g(phi) =
    // total_rate(phi) - phi crosses zero exactly once.
    let mut hi = 1.0f64;
    while total_rate(hi) - hi > 0.0 && hi < 1e6 {
        hi *= 2.0;
    }
    let (mut lo, mut hi) = (0.0f64, hi);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total_rate(mid) - mid > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-10 {
            break;
        }
    }
    let phi_terminal = 0.5 * (lo + hi);

    let rate_at = |t: f64| (du(f_ref - phi_terminal) - ip.drift.remaining(t)).max(0.0) / gamma;
    let rates: Vec<f64> = grid.iter().map(|&t| rate_at(t)).collect();
    // Cumulative position and objective on a refined grid (4 Simpson cells
    // per segment keep the quadrature error far below solver tolerance).
    let mut positions = Vec::with_capacity(grid.len());
    positions.push(0.0);
    let mut phi = 0.0;
    let mut drift_loss = 0.0;
    let mut impact_cost = 0.0;
    for w in grid.windows(2) {
        let (a, b) = (w[0], w[1]);
        let sub = 8usize;
        for s in 0..sub {
            let t0 = a + (b - a) * s as f64 / sub as f64;
            let t1 = a + (b - a) * (s + 1) as f64 / sub as f64;
            let dt = t1 - t0;
            let (r0, rm, r1) = (rate_at(t0), rate_at(0.5 * (t0 + t1)), rate_at(t1));
            let phi0 = phi;
            let dphi = dt / 6.0 * (r0 + 4.0 * rm + r1);
            phi += dphi;
            drift_loss += 0.5 * (phi0 + phi) * ip.drift.integral(t0, t1);
            impact_cost += gamma / 2.0 * dt / 6.0 * (r0 * r0 + 4.0 * rm * rm + r1 * r1);
        }
        positions.push(phi);
    }
    let breakdown = CostBreakdown {
        drift: drift_loss,
        impact: impact_cost,
        volume: u_terminal(f_ref - phi),
    };
    Ok(PontryaginPlan {
        times: grid.to_vec(),
        rates,
        positions,
        phi_terminal,
        value: breakdown.total(),
        breakdown,
    })
}

/// Optimal deterministic schedule when the delivered volume `f_t` is known:
/// trade at rate `(1/gamma)(u'(f_t - phi_T) - remaining drift)^+` with the
/// terminal position solving the scalar fixed point.
pub fn pontryagin_plan(
    ip: &ImpactParams,
    f_t: f64,
    grid: &[f64],
) -> Result<PontryaginPlan, ImpactError> {
    if !(0.0..=1.0).contains(&f_t) {
        return Err(ImpactError::InvalidParam(format!(
            "terminal forecast {f_t} outside [0, 1]"
        )));
    }
    pontryagin_core(
        ip,
        &|x| ip.penalty.du(x),
        &|x| ip.penalty.u(x),
        f_t,
        grid,
    )
}

/// No-forecast variant: the terminal penalty is averaged over the
/// production law (unclipped, since surplus cannot be dumped for free when
/// every trade costs impact), and the reference volume is the mean.
pub fn pontryagin_plan_no_forecast(
    ip: &ImpactParams,
    law: &dyn ProductionLaw,
    grid: &[f64],
) -> Result<PontryaginPlan, ImpactError> {
    let averaged = AveragedPenalty::new(&ip.penalty, law);
    let mean = averaged.mean();
    pontryagin_core(
        ip,
        &|x| averaged.du_tilde_unclipped(x),
        &|x| averaged.u_tilde_unclipped(x),
        mean,
        grid,
    )
}

/// Grid configuration for the finite-difference solver.
#[derive(Debug, Clone)]
pub struct HjbConfig {
    pub n_t: usize,
    pub n_phi: usize,
    pub n_y: usize,
    /// Largest position on the grid; the reflecting boundary sits here.
    pub phi_max: f64,
    /// Tail mass cut for the y-range derived from the schedule.
    pub quantile_eps: f64,
    /// Overrides the state range in `y = ln x`.
    pub y_range: Option<(f64, f64)>,
    /// Constant volatility override (per unit time); otherwise sigma^2 is
    /// the per-cell difference quotient of the schedule.
    pub sigma_override: Option<f64>,
    /// Substep cap per macro time step before giving up.
    pub max_substeps: usize,
}

impl Default for HjbConfig {
    fn default() -> Self {
        Self {
            n_t: 121,
            n_phi: 151,
            n_y: 151,
            phi_max: 1.5,
            quantile_eps: 1e-5,
            y_range: None,
            sigma_override: None,
            max_substeps: 20_000,
        }
    }
}

/// Solved value function and trading-rate policy on a (t, phi, y) tensor
/// grid, `y = ln x`.
pub struct HjbSolution {
    pub t_grid: Vec<f64>,
    pub phi_grid: Vec<f64>,
    pub y_grid: Vec<f64>,
    /// Value tensor, row-major over (t, phi, y).
    pub w: Vec<f64>,
    /// Rate tensor, same layout, `psi = (-D_phi w / gamma)^+`.
    pub psi: Vec<f64>,
}

impl HjbSolution {
    fn slice_len(&self) -> usize {
        self.phi_grid.len() * self.y_grid.len()
    }

    /// Trilinear interpolation of the value at `(t, phi, x)`; coordinates
    /// clamp to the grid box.
    pub fn value_at(&self, t: f64, phi: f64, x: f64) -> f64 {
        self.interp(&self.w, t, phi, x)
    }

    /// Trilinear interpolation of the trading rate at `(t, phi, x)`.
    pub fn policy_at(&self, t: f64, phi: f64, x: f64) -> f64 {
        self.interp(&self.psi, t, phi, x).max(0.0)
    }

    fn interp(&self, tensor: &[f64], t: f64, phi: f64, x: f64) -> f64 {
        let (kt, wt) = locate(&self.t_grid, t);
        let (kp, wp) = locate(&self.phi_grid, phi);
        let (ky, wy) = locate(&self.y_grid, x.ln());
        let n_y = self.y_grid.len();
        let sl = self.slice_len();
        let mut acc = 0.0;
        for (dt, tw) in [(0usize, 1.0 - wt), (1, wt)] {
            for (dp, pw) in [(0usize, 1.0 - wp), (1, wp)] {
                for (dy, yw) in [(0usize, 1.0 - wy), (1, wy)] {
                    let idx = (kt + dt) * sl + (kp + dp) * n_y + (ky + dy);
                    acc += tensor[idx] * tw * pw * yw;
                }
            }
        }
        acc
    }
}

/// Cell index and interpolation weight for a clamped coordinate on an
/// ascending grid (always leaves room for `index + 1`).
fn locate(grid: &[f64], v: f64) -> (usize, f64) {
    let n = grid.len();
    if v <= grid[0] {
        return (0, 0.0);
    }
    if v >= grid[n - 1] {
        return (n - 2, 1.0);
    }
    let i = grid.partition_point(|&g| g <= v) - 1;
    let i = i.min(n - 2);
    let w = (v - grid[i]) / (grid[i + 1] - grid[i]);
    (i, w)
}

/// Explicit monotone backward scheme for the sell-only control problem:
///
/// `w_t + phi mu_t + (sigma^2/2)(w_yy - w_y) - (1/(2 gamma))((D_phi w) ^ 0)^2 = 0`
///
/// with `w(T, phi, y) = u(f_prod(e^y) - phi)`. Diffusion uses a central
/// second difference and an upwinded (backward) first difference; the
/// Hamiltonian uses a forward difference, so positive rates transport value
/// toward larger positions. Each macro step substeps to satisfy both the
/// diffusion bound `dt <= dy^2 / (sigma^2 (1 + dy/2))` and the rate bound
/// `dt * psi_max <= dphi`, which together keep the scheme monotone.
pub fn solve_hjb(
    ip: &ImpactParams,
    lat: &LatentParams,
    schedule: &crate::forecast::ThetaSchedule,
    cfg: &HjbConfig,
) -> Result<HjbSolution, ImpactError> {
    if cfg.n_t < 3 || cfg.n_phi < 3 || cfg.n_y < 3 {
        return Err(ImpactError::InvalidParam(
            "need at least 3 nodes per axis".into(),
        ));
    }
    let t_end = ip.drift.horizon();
    if (schedule.horizon() - t_end).abs() > 1e-9 {
        return Err(ImpactError::InvalidParam(format!(
            "schedule horizon {} != drift horizon {t_end}",
            schedule.horizon()
        )));
    }
    let t_grid: Vec<f64> = (0..cfg.n_t)
        .map(|k| t_end * k as f64 / (cfg.n_t - 1) as f64)
        .collect();
    let phi_grid: Vec<f64> = (0..cfg.n_phi)
        .map(|i| cfg.phi_max * i as f64 / (cfg.n_phi - 1) as f64)
        .collect();
    let (y_lo, y_hi) = match cfg.y_range {
        Some(r) => r,
        None => {
            let theta0 = schedule.theta_at(0.0)?;
            if theta0 < 1e-16 {
                return Err(ImpactError::InvalidParam(
                    "flat schedule needs an explicit y_range".into(),
                ));
            }
            let half = normal::inv_cdf(1.0 - cfg.quantile_eps) * theta0.sqrt();
            (-theta0 / 2.0 - half, -theta0 / 2.0 + half)
        }
    };
    if !(y_lo < y_hi) {
        return Err(ImpactError::InvalidParam("empty y range".into()));
    }
    let y_grid: Vec<f64> = (0..cfg.n_y)
        .map(|j| y_lo + (y_hi - y_lo) * j as f64 / (cfg.n_y - 1) as f64)
        .collect();
    let dy = y_grid[1] - y_grid[0];
    let dphi = phi_grid[1] - phi_grid[0];
    let gamma = ip.gamma;
    let (n_phi, n_y) = (cfg.n_phi, cfg.n_y);
    let sl = n_phi * n_y;

    // sigma^2 per macro cell: the schedule's variance release rate, or the
    // override squared.
    let mut sigma2 = vec![0.0f64; cfg.n_t - 1];
    for k in 0..cfg.n_t - 1 {
        sigma2[k] = match cfg.sigma_override {
            Some(s) => s * s,
            None => {
                let a = schedule.theta_at(t_grid[k])?;
                let b = schedule.theta_at(t_grid[k + 1])?;
                ((a - b) / (t_grid[k + 1] - t_grid[k])).max(0.0)
            }
        };
    }

    let curve = lat.curve();
    let f_of_y: Vec<f64> = y_grid.iter().map(|&y| curve.f_prod(y.exp())).collect();

    let mut w = vec![0.0f64; cfg.n_t * sl];
    let mut psi = vec![0.0f64; cfg.n_t * sl];
    // Terminal condition, exact on nodes.
    {
        let last = (cfg.n_t - 1) * sl;
        for i in 0..n_phi {
            for j in 0..n_y {
                w[last + i * n_y + j] = ip.penalty.u(f_of_y[j] - phi_grid[i]);
            }
        }
    }
    let fill_psi = |slice: &[f64], out: &mut [f64]| {
        for i in 0..n_phi {
            for j in 0..n_y {
                let d = if i == n_phi - 1 {
                    0.0
                } else {
                    (slice[(i + 1) * n_y + j] - slice[i * n_y + j]) / dphi
                };
                out[i * n_y + j] = (-d.min(0.0)) / gamma;
            }
        }
    };
    {
        let (head, tail) = psi.split_at_mut((cfg.n_t - 1) * sl);
        let _ = head;
        let last_w = &w[(cfg.n_t - 1) * sl..];
        fill_psi(last_w, tail);
    }

    let mut slice: Vec<f64> = w[(cfg.n_t - 1) * sl..].to_vec();
    let mut next = vec![0.0f64; sl];

    for k in (0..cfg.n_t - 1).rev() {
        let s2 = sigma2[k];
        let macro_dt = t_grid[k + 1] - t_grid[k];
        let mut remaining = macro_dt;
        let mut tau = t_grid[k + 1];
        let mut substeps = 0usize;
        while remaining > 1e-15 {
            // Current worst rate decides the largest monotone step.
            let mut psi_max = 0.0f64;
            for i in 0..n_phi - 1 {
                for j in 0..n_y {
                    let d = (slice[(i + 1) * n_y + j] - slice[i * n_y + j]) / dphi;
                    psi_max = psi_max.max(-d.min(0.0) / gamma);
                }
            }
            let mut dt = remaining;
            if s2 > 0.0 {
                dt = dt.min(dy * dy / (s2 * (1.0 + dy / 2.0)));
            }
            if psi_max > 0.0 {
                dt = dt.min(dphi / psi_max);
            }
            substeps += 1;
            if substeps > cfg.max_substeps {
                return Err(ImpactError::CflInfeasible {
                    t: t_grid[k],
                    max_substeps: cfg.max_substeps,
                });
            }
            let mu_now = ip.drift.mu(tau - dt / 2.0);
            {
                let slice_ref = &slice;
                next.par_chunks_mut(n_y).enumerate().for_each(|(i, row)| {
                    let base = i * n_y;
                    for j in 0..n_y {
                        let wij = slice_ref[base + j];
                        let dplus = if i == n_phi - 1 {
                            0.0
                        } else {
                            (slice_ref[base + n_y + j] - wij) / dphi
                        };
                        let ham = -(dplus.min(0.0)).powi(2) / (2.0 * gamma);
                        let diffusion = if s2 > 0.0 {
                            let wyy = if j == 0 || j == n_y - 1 {
                                0.0
                            } else {
                                (slice_ref[base + j + 1] - 2.0 * wij + slice_ref[base + j - 1])
                                    / (dy * dy)
                            };
                            let wy = if j == 0 {
                                (slice_ref[base + 1] - wij) / dy
                            } else {
                                (wij - slice_ref[base + j - 1]) / dy
                            };
                            0.5 * s2 * (wyy - wy)
                        } else {
                            0.0
                        };
                        row[j] = wij + dt * (phi_grid[i] * mu_now + diffusion + ham);
                    }
                });
            }
            std::mem::swap(&mut slice, &mut next);
            tau -= dt;
            remaining -= dt;
        }
        if let Some(bad) = slice.iter().position(|v| !v.is_finite()) {
            return Err(ImpactError::NumericalBlowup {
                t: t_grid[k],
                i: bad / n_y,
                j: bad % n_y,
            });
        }
        w[k * sl..(k + 1) * sl].copy_from_slice(&slice);
        fill_psi(&slice, &mut psi[k * sl..(k + 1) * sl]);
    }

    Ok(HjbSolution {
        t_grid,
        phi_grid,
        y_grid,
        w,
        psi,
    })
}

/// Forward simulation results for a rate policy over a path set.
pub struct PolicySimulation {
    pub results: Vec<(TradePlan, CostBreakdown)>,
    /// Paths whose position ran into the top of the solved phi-grid.
    pub phi_max_hits: usize,
}

/// Run an arbitrary nonnegative rate policy `(t, phi, x) -> psi` forward
/// along simulated forecast paths, with explicit Euler position updates,
/// and account the realized penalty per path.
pub fn simulate_rate_policy(
    policy: &(dyn Fn(f64, f64, f64) -> f64 + Sync),
    ip: &ImpactParams,
    paths: &[ForecastPath],
    phi_cap: f64,
) -> Result<PolicySimulation, ImpactError> {
    let t_end = ip.drift.horizon();
    let results: Result<Vec<_>, ImpactError> = paths
        .par_iter()
        .map(|path| {
            if path.times.len() < 2 || (path.times[path.times.len() - 1] - t_end).abs() > 1e-9 {
                return Err(ImpactError::GridMismatch(format!(
                    "path must end at the horizon {t_end}"
                )));
            }
            let n = path.times.len();
            let mut positions = Vec::with_capacity(n);
            let mut phi = 0.0f64;
            let mut drift_loss = 0.0;
            let mut impact_cost = 0.0;
            let mut hit = false;
            for k in 0..n - 1 {
                let dt = path.times[k + 1] - path.times[k];
                let rate = policy(path.times[k], phi, path.x_values[k]).max(0.0);
                positions.push(phi);
                let phi_next = (phi + rate * dt).min(phi_cap);
                if phi + rate * dt > phi_cap {
                    hit = true;
                }
                drift_loss +=
                    0.5 * (phi + phi_next) * ip.drift.integral(path.times[k], path.times[k + 1]);
                impact_cost += ip.gamma / 2.0 * rate * rate * dt;
                phi = phi_next;
            }
            positions.push(phi);
            let plan = TradePlan::new(path.times.clone(), positions, 0.0)?;
            let volume = ip.penalty.u(path.realized() - phi);
            Ok((
                plan,
                CostBreakdown {
                    drift: drift_loss,
                    impact: impact_cost,
                    volume,
                },
                hit,
            ))
        })
        .collect();
    let results = results?;
    let phi_max_hits = results.iter().filter(|r| r.2).count();
    Ok(PolicySimulation {
        results: results.into_iter().map(|(p, c, _)| (p, c)).collect(),
        phi_max_hits,
    })
}

/// Simulate the solved HJB policy along forecast paths.
pub fn simulate_policy(
    sol: &HjbSolution,
    ip: &ImpactParams,
    paths: &[ForecastPath],
) -> Result<PolicySimulation, ImpactError> {
    let cap = sol.phi_grid[sol.phi_grid.len() - 1];
    simulate_rate_policy(&|t, phi, x| sol.policy_at(t, phi, x), ip, paths, cap)
}

/// Buy-and-sell plan along one forecast path: the explicit linear-quadratic
/// optimum for `u(x) = x^2/2` after rescaling `(gamma, mu)` by `kappa`, so
/// the same formula serves any quadratic penalty. Positions may decrease.
#[derive(Debug, Clone)]
pub struct BuySellPlan {
    pub times: Vec<f64>,
    pub positions: Vec<f64>,
    pub rates: Vec<f64>,
}

pub fn buy_sell_plan(
    gamma: f64,
    kappa: f64,
    drift: &DriftCurve,
    path: &ForecastPath,
) -> Result<BuySellPlan, ImpactError> {
    if !(gamma > 0.0 && kappa > 0.0) {
        return Err(ImpactError::InvalidParam(format!(
            "gamma = {gamma}, kappa = {kappa} must be positive"
        )));
    }
    let t_end = drift.horizon();
    if (path.times[path.times.len() - 1] - t_end).abs() > 1e-9 {
        return Err(ImpactError::GridMismatch(format!(
            "path must end at the horizon {t_end}"
        )));
    }
    // Work in kappa = 1 units: dividing the objective by kappa rescales
    // both the friction and the drift without moving the optimizer.
    let gt = gamma / kappa;
    let n = path.times.len();
    // inner(t) = integral_t^T (gt + T - s) mu(s)/kappa ds, backward
    // accumulated per grid cell.
    let mut inner = vec![0.0f64; n];
    for k in (0..n - 1).rev() {
        let (a, b) = (path.times[k], path.times[k + 1]);
        let cell = quad::integrate(&|s| (gt + t_end - s) * drift.mu(s) / kappa, a, b, 1e-12);
        inner[k] = inner[k + 1] + cell;
    }
    let mut positions = Vec::with_capacity(n);
    let mut rates = Vec::with_capacity(n);
    let mut phi = 0.0f64;
    for k in 0..n {
        positions.push(phi);
        let rate = (path.f_values[k] - phi - inner[k] / gt) / (gt + t_end - path.times[k]);
        rates.push(rate);
        if k + 1 < n {
            phi += rate * (path.times[k + 1] - path.times[k]);
        }
    }
    Ok(BuySellPlan {
        times: path.times.clone(),
        positions,
        rates,
    })
}

impl BuySellPlan {
    pub fn final_position(&self) -> f64 {
        self.positions[self.positions.len() - 1]
    }

    /// Realized penalty of the signed plan: drift loss, impact cost, and
    /// the symmetric volume penalty at delivery.
    pub fn cost(
        &self,
        gamma: f64,
        kappa: f64,
        drift: &DriftCurve,
        realized: f64,
    ) -> CostBreakdown {
        let mut drift_loss = 0.0;
        let mut impact_cost = 0.0;
        for k in 0..self.times.len() - 1 {
            let dt = self.times[k + 1] - self.times[k];
            let phi_next = if k + 1 < self.positions.len() {
                self.positions[k + 1]
            } else {
                self.positions[k]
            };
            drift_loss +=
                0.5 * (self.positions[k] + phi_next) * drift.integral(self.times[k], self.times[k + 1]);
            impact_cost += gamma / 2.0 * self.rates[k] * self.rates[k] * dt;
        }
        let mismatch = realized - self.final_position();
        CostBreakdown {
            drift: drift_loss,
            impact: impact_cost,
            volume: kappa * mismatch * mismatch / 2.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::TruncatedLogNormal;
    use crate::forecast::ThetaSchedule;
    use approx::assert_abs_diff_eq;

    fn plant1() -> LatentParams {
        LatentParams::new(0.66020, 0.46129, 3.94322).unwrap()
    }

    fn reference_params(gamma: f64) -> ImpactParams {
        ImpactParams::new(
            gamma,
            DriftCurve::constant(-0.2, 6.0).unwrap(),
            PenaltyFunction::quadratic(200.0).unwrap(),
        )
        .unwrap()
    }

    fn uniform_grid(t_end: f64, n: usize) -> Vec<f64> {
        (0..=n).map(|i| t_end * i as f64 / n as f64).collect()
    }

    #[test]
    fn pontryagin_continuous_trading_regime() {
        // kappa=200, mu=-0.2, gamma=4800, T=6, F=0.5: mu T^2/2 + gamma F =
        // 2396.4 > 0, so trading never stops and
        // phi_T = (kappa T F - mu T^2/2) / (gamma + kappa T) = 0.1006.
        let ip = reference_params(4800.0);
        let grid = uniform_grid(6.0, 240);
        let plan = pontryagin_plan(&ip, 0.5, &grid).unwrap();
        assert_abs_diff_eq!(plan.phi_terminal, 0.1006, epsilon = 1e-8);
        // Fixed-point residual.
        let residual = plan.positions[plan.positions.len() - 1] - plan.phi_terminal;
        assert!(residual.abs() < 1e-7, "residual {residual}");
        // Rate is affine and decreasing in t, positive through delivery.
        let d0 = plan.rates[1] - plan.rates[0];
        for k in 1..plan.rates.len() - 1 {
            let d = plan.rates[k + 1] - plan.rates[k];
            assert_abs_diff_eq!(d, d0, epsilon = 1e-12);
        }
        assert!(d0 < 0.0);
        assert!(plan.rates[plan.rates.len() - 1] >= 0.0);
    }

    #[test]
    fn pontryagin_early_stop_regime() {
        // Small gamma and F flip the sign of mu T^2/2 + gamma F, so trading
        // stops strictly before delivery at the closed-form t*.
        let (kappa, gamma, mu, t_end, f_t) = (200.0f64, 20.0f64, -0.2f64, 6.0f64, 0.05f64);
        assert!(mu * t_end * t_end / 2.0 + gamma * f_t < 0.0);
        let ip = ImpactParams::new(
            gamma,
            DriftCurve::constant(mu, t_end).unwrap(),
            PenaltyFunction::quadratic(kappa).unwrap(),
        )
        .unwrap();
        let grid = uniform_grid(t_end, 6000);
        let plan = pontryagin_plan(&ip, f_t, &grid).unwrap();
        let g_over_k = gamma / kappa;
        let disc = (mu / (kappa * kappa)) * (mu / (kappa * kappa)) * (gamma + kappa * t_end).powi(2)
            - 2.0 * mu / (kappa * kappa) * (mu * t_end * t_end / 2.0 + gamma * f_t);
        let phi_closed = f_t - mu / (kappa * kappa) * (gamma + kappa * t_end) - disc.sqrt();
        assert_abs_diff_eq!(plan.phi_terminal, phi_closed, epsilon = 1e-8);
        let t_star = t_end - (t_end + g_over_k)
            + ((t_end + g_over_k).powi(2)
                - 2.0 / mu * (mu * t_end * t_end / 2.0 + gamma * f_t))
                .sqrt();
        assert!(t_star > 0.0 && t_star < t_end);
        // The rate hits zero at t* (within grid resolution) and stays there.
        let first_zero = plan
            .times
            .iter()
            .zip(&plan.rates)
            .find(|(_, &r)| r <= 0.0)
            .map(|(&t, _)| t)
            .unwrap();
        assert_abs_diff_eq!(first_zero, t_star, epsilon = 2.0 * t_end / 6000.0);
        for (&t, &r) in plan.times.iter().zip(&plan.rates) {
            if t > t_star + 1e-9 {
                assert_eq!(r, 0.0);
            }
        }
    }

    #[test]
    fn pontryagin_no_forecast_equals_exact_at_the_mean() {
        // For a quadratic penalty the unclipped averaged derivative is
        // kappa x, so the no-forecast schedule is the exact schedule run
        // at F = E[F_T].
        let ip = reference_params(4800.0);
        let law = TruncatedLogNormal::from_latent(&plant1()).unwrap();
        let grid = uniform_grid(6.0, 120);
        let nf = pontryagin_plan_no_forecast(&ip, &law, &grid).unwrap();
        let exact = pontryagin_plan(&ip, law.mean(), &grid).unwrap();
        assert_abs_diff_eq!(nf.phi_terminal, exact.phi_terminal, epsilon = 1e-9);
        for (a, b) in nf.rates.iter().zip(&exact.rates) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
        // Averaging the penalty costs the variance term relative to exact.
        let var = law.second_moment() - law.mean() * law.mean();
        assert_abs_diff_eq!(
            nf.value - exact.value,
            200.0 / 2.0 * var,
            epsilon = 1e-9
        );
    }

    fn flat_schedule(t_end: f64, cap: f64) -> ThetaSchedule {
        ThetaSchedule::tabulated(vec![0.0, t_end], vec![0.0, 0.0], t_end, cap).unwrap()
    }

    #[test]
    fn hjb_no_noise_no_drift_matches_constant_rate_oracle() {
        // sigma = 0, mu = 0: the optimum trades at constant rate
        // a* = kappa T (F - phi) / (gamma + kappa T), worth
        // gamma kappa (F - phi)^2 / (2 (gamma + kappa T)) when F >= phi.
        let (kappa, gamma, t_end) = (200.0f64, 4800.0f64, 6.0f64);
        let ip = ImpactParams::new(
            gamma,
            DriftCurve::constant(0.0, t_end).unwrap(),
            PenaltyFunction::quadratic(kappa).unwrap(),
        )
        .unwrap();
        let lat = plant1();
        let cap = lat.nu_x * lat.nu_x;
        let cfg = HjbConfig {
            n_t: 81,
            n_phi: 151,
            n_y: 41,
            phi_max: 1.2,
            y_range: Some((-1.5, 1.45)),
            ..Default::default()
        };
        let sol = solve_hjb(&ip, &lat, &flat_schedule(t_end, cap), &cfg).unwrap();
        let curve = lat.curve();
        // Trades shorter than a phi-cell cannot be resolved, so probe where
        // the optimal trade kappa T (F - phi) / (gamma + kappa T) spans
        // several cells, plus the exact never-trade region F < phi.
        for &(x, phi) in &[
            (3.94322, 0.0),
            (2.6, 0.2),
            (1.8, 0.0),
            (1.0, 0.45),
            (2.6, 0.8),
        ] {
            let f = curve.f_prod(x);
            let want = if f >= phi {
                gamma * kappa * (f - phi) * (f - phi) / (2.0 * (gamma + kappa * t_end))
            } else {
                kappa * (f - phi) * (f - phi) / 2.0
            };
            let got = sol.value_at(0.0, phi, x);
            let tol = 0.02 * want.abs() + 5e-3;
            assert!(
                (got - want).abs() < tol,
                "x={x}, phi={phi}: {got} vs {want}"
            );
        }
        // The f - phi = 1 benchmark: gamma kappa / (2 (gamma + kappa T)) = 80.
        let bench = sol.value_at(0.0, 0.0, 3.94322);
        assert!((bench - 80.0).abs() < 0.02 * 80.0, "benchmark {bench}");
    }

    #[test]
    fn hjb_terminal_slice_is_exact_and_psi_nonnegative() {
        let ip = reference_params(4800.0);
        let lat = plant1();
        let cap = lat.nu_x * lat.nu_x;
        let schedule =
            ThetaSchedule::tabulated(vec![0.0, 6.0], vec![cap, 0.0], 6.0, cap).unwrap();
        let cfg = HjbConfig {
            n_t: 25,
            n_phi: 41,
            n_y: 41,
            ..Default::default()
        };
        let sol = solve_hjb(&ip, &lat, &schedule, &cfg).unwrap();
        let curve = lat.curve();
        let sl = sol.phi_grid.len() * sol.y_grid.len();
        let last = (sol.t_grid.len() - 1) * sl;
        for (i, &phi) in sol.phi_grid.iter().enumerate() {
            for (j, &y) in sol.y_grid.iter().enumerate() {
                let want = ip.penalty.u(curve.f_prod(y.exp()) - phi);
                assert_abs_diff_eq!(sol.w[last + i * sol.y_grid.len() + j], want, epsilon = 0.0);
            }
        }
        assert!(sol.psi.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn hjb_no_noise_with_drift_matches_pontryagin() {
        let (t_end, gamma) = (6.0f64, 4800.0f64);
        let ip = reference_params(gamma);
        let lat = plant1();
        let cap = lat.nu_x * lat.nu_x;
        let cfg = HjbConfig {
            n_t: 81,
            n_phi: 121,
            n_y: 41,
            phi_max: 1.2,
            y_range: Some((-1.5, 1.2)),
            ..Default::default()
        };
        let sol = solve_hjb(&ip, &lat, &flat_schedule(t_end, cap), &cfg).unwrap();
        let grid = uniform_grid(t_end, 240);
        let curve = lat.curve();
        for &x in &[0.8, 1.4, 2.2] {
            let f = curve.f_prod(x);
            let plan = pontryagin_plan(&ip, f, &grid).unwrap();
            let got = sol.value_at(0.0, 0.0, x);
            assert!(
                (got - plan.value).abs() < 0.025 * plan.value.abs() + 2e-3,
                "x = {x}: HJB {got} vs Pontryagin {}",
                plan.value
            );
        }
    }

    #[test]
    fn zero_rate_policy_pays_exactly_the_volume_penalty() {
        let ip = reference_params(4800.0);
        let lat = plant1();
        let cap = lat.nu_x * lat.nu_x;
        let schedule =
            ThetaSchedule::tabulated(vec![0.0, 6.0], vec![cap, 0.0], 6.0, cap).unwrap();
        let grid = uniform_grid(6.0, 24);
        let paths = crate::forecast::simulate_paths(&lat, &schedule, &grid, 50, 3).unwrap();
        let sim = simulate_rate_policy(&|_, _, _| 0.0, &ip, &paths, 1.5).unwrap();
        assert_eq!(sim.phi_max_hits, 0);
        for (path, (plan, cost)) in paths.iter().zip(&sim.results) {
            assert_eq!(plan.final_position(), 0.0);
            assert_eq!(cost.drift, 0.0);
            assert_eq!(cost.impact, 0.0);
            assert_abs_diff_eq!(
                cost.total(),
                ip.penalty.u(path.realized()),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn buy_sell_no_drift_formula_and_constant_forecast_closed_form() {
        let (gamma, kappa, t_end) = (4800.0f64, 200.0f64, 6.0f64);
        let gt = gamma / kappa;
        let drift = DriftCurve::constant(0.0, t_end).unwrap();
        let n = 6000usize;
        let times: Vec<f64> = (0..=n).map(|k| t_end * k as f64 / n as f64).collect();
        let f_const = 0.4f64;
        let path = ForecastPath {
            times: times.clone(),
            x_values: vec![1.0; n + 1],
            f_values: vec![f_const; n + 1],
        };
        let plan = buy_sell_plan(gamma, kappa, &drift, &path).unwrap();
        // mu = 0 simplifies the rate to (F - phi) / (gt + T - t); the
        // resulting linear recursion has the closed form below.
        for (k, &t) in times.iter().enumerate().step_by(500) {
            let want = f_const * (1.0 - (gt + t_end - t) / (gt + t_end));
            assert_abs_diff_eq!(plan.positions[k], want, epsilon = 1e-4);
            let rate_want = (f_const - plan.positions[k]) / (gt + t_end - t);
            assert_abs_diff_eq!(plan.rates[k], rate_want, epsilon = 1e-12);
        }
    }

    #[test]
    fn buy_sell_first_order_condition_on_simulated_paths() {
        // E[gt psi + integral of mu/kappa - (F_T - phi_T)] = 0 at probe
        // times (kappa = 1 units).
        let (gamma, kappa, t_end) = (4800.0f64, 200.0f64, 6.0f64);
        let gt = gamma / kappa;
        let lat = plant1();
        let cap = lat.nu_x * lat.nu_x;
        let drift = DriftCurve::constant(-0.2, t_end).unwrap();
        let schedule =
            ThetaSchedule::tabulated(vec![0.0, t_end], vec![cap, 0.2 * cap], t_end, cap).unwrap();
        let grid = uniform_grid(t_end, 72);
        let n_paths = 4000usize;
        let paths = crate::forecast::simulate_paths(&lat, &schedule, &grid, n_paths, 17).unwrap();
        let probes = [6usize, 18, 36, 54, 66];
        let mut sums = [0.0f64; 5];
        let mut sprod = [0.0f64; 5];
        for path in &paths {
            let plan = buy_sell_plan(gamma, kappa, &drift, path).unwrap();
            let f_t = path.realized();
            for (pi, &k) in probes.iter().enumerate() {
                let t = grid[k];
                let resid = gt * plan.rates[k] + drift.integral(t, t_end) / kappa
                    - (f_t - plan.final_position());
                sums[pi] += resid;
                sprod[pi] += resid * resid;
            }
        }
        for pi in 0..probes.len() {
            let mean = sums[pi] / n_paths as f64;
            let var = (sprod[pi] / n_paths as f64 - mean * mean).max(0.0);
            let se = (var / n_paths as f64).sqrt();
            assert!(
                mean.abs() < 3.0 * se.max(1e-6),
                "probe {pi}: residual {mean} vs se {se}"
            );
        }
    }
}
