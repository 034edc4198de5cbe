//! Strategy registry: every selling strategy sits behind the [`Policy`]
//! trait, is registered under a short name, and is built at runtime from a
//! problem [`Instance`], so experiment drivers and the command line select
//! strategies by string without knowing their construction details.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::dist::{LatentParams, TruncatedLogNormal};
use crate::drift::DriftCurve;
use crate::forecast::{ForecastPath, ThetaSchedule};
use crate::frictionless::{
    apply_threshold_policy, exact_forecast_plan, no_forecast_plan, solve_xi_thresholds,
    NoForecastPlan, XiConfig, XiTables,
};
use crate::impact::{
    buy_sell_plan, pontryagin_plan, pontryagin_plan_no_forecast, simulate_policy, solve_hjb,
    HjbConfig, HjbSolution, ImpactParams, PontryaginPlan,
};
use crate::penalty::PenaltyFunction;
use crate::plan::CostBreakdown;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("unknown policy {name:?}; registered: {known}")]
    UnknownPolicy { name: String, known: String },
    #[error("policy {policy:?} does not apply here: {reason}")]
    UnsupportedSetting { policy: String, reason: String },
    #[error(transparent)]
    Dist(#[from] crate::dist::DistError),
    #[error(transparent)]
    Frictionless(#[from] crate::frictionless::FrictionlessError),
    #[error(transparent)]
    Impact(#[from] crate::impact::ImpactError),
    #[error(transparent)]
    Plan(#[from] crate::plan::PlanError),
    #[error(transparent)]
    Penalty(#[from] crate::penalty::PenaltyError),
}

/// One fully specified selling problem: production law, forecast dynamics,
/// price drift, mismatch penalty, optional market impact, and the decision
/// grid shared by forecast updates and simulation.
#[derive(Clone)]
pub struct Instance {
    pub lat: LatentParams,
    pub schedule: ThetaSchedule,
    pub drift: DriftCurve,
    pub penalty: PenaltyFunction,
    /// Quadratic trading friction; `None` is the frictionless problem.
    pub gamma: Option<f64>,
    /// Decision times, ascending from 0 to the horizon.
    pub grid: Vec<f64>,
    pub xi_config: XiConfig,
    pub hjb_config: HjbConfig,
}

impl Instance {
    pub fn new(
        lat: LatentParams,
        schedule: ThetaSchedule,
        drift: DriftCurve,
        penalty: PenaltyFunction,
        gamma: Option<f64>,
        grid: Vec<f64>,
    ) -> Result<Self, PolicyError> {
        if grid.len() < 2 || grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(PolicyError::InvalidInstance(
                "grid must be ascending with at least two nodes".into(),
            ));
        }
        if grid[0].abs() > 1e-12 {
            return Err(PolicyError::InvalidInstance(format!(
                "grid must start at 0, got {}",
                grid[0]
            )));
        }
        let t_end = grid[grid.len() - 1];
        if (drift.horizon() - t_end).abs() > 1e-9 || (schedule.horizon() - t_end).abs() > 1e-9 {
            return Err(PolicyError::InvalidInstance(format!(
                "grid ends at {t_end} but drift horizon is {} and schedule horizon is {}",
                drift.horizon(),
                schedule.horizon()
            )));
        }
        if let Some(g) = gamma {
            if !(g.is_finite() && g > 0.0) {
                return Err(PolicyError::InvalidInstance(format!(
                    "gamma = {g} must be positive"
                )));
            }
        }
        Ok(Self {
            lat,
            schedule,
            drift,
            penalty,
            gamma,
            grid,
            xi_config: XiConfig::default(),
            hjb_config: HjbConfig::default(),
        })
    }

    pub fn with_xi_config(mut self, cfg: XiConfig) -> Self {
        self.xi_config = cfg;
        self
    }

    pub fn with_hjb_config(mut self, cfg: HjbConfig) -> Self {
        self.hjb_config = cfg;
        self
    }

    pub fn horizon(&self) -> f64 {
        self.grid[self.grid.len() - 1]
    }

    pub fn law(&self) -> Result<TruncatedLogNormal, PolicyError> {
        Ok(TruncatedLogNormal::from_latent(&self.lat)?)
    }

    fn impact_params(&self, policy: &str) -> Result<ImpactParams, PolicyError> {
        match self.gamma {
            Some(g) => Ok(ImpactParams::new(
                g,
                self.drift.clone(),
                self.penalty.clone(),
            )?),
            None => Err(PolicyError::UnsupportedSetting {
                policy: policy.into(),
                reason: "needs a market-impact coefficient gamma".into(),
            }),
        }
    }
}

/// What one strategy did on one path.
#[derive(Debug, Clone, Copy)]
pub struct PolicyOutcome {
    /// Position held at delivery (signed for buy/sell strategies).
    pub final_position: f64,
    pub cost: CostBreakdown,
    /// The simulated position ran into the top of a solved grid.
    pub hit_position_cap: bool,
}

/// A selling strategy evaluated path by path. Implementations own whatever
/// precomputation they need (threshold tables, value tensors), so `run` is
/// safe to call from many threads at once.
pub trait Policy: Send + Sync {
    fn name(&self) -> &str;

    fn run(&self, path: &ForecastPath) -> Result<PolicyOutcome, PolicyError>;
}

pub type PolicyFactory = fn(&Instance) -> Result<Box<dyn Policy>, PolicyError>;

/// Name-to-factory table. `with_builtins` registers the six standard
/// strategies; callers can add their own under new names.
pub struct PolicyRegistry {
    factories: BTreeMap<String, PolicyFactory>,
}

impl PolicyRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut reg = Self::empty();
        reg.register("exact", make_exact);
        reg.register("no_forecast", make_no_forecast);
        reg.register("thresholds", make_thresholds);
        reg.register("hjb", make_hjb);
        reg.register("buy_sell", make_buy_sell);
        reg.register("never_trade", make_never_trade);
        reg
    }

    pub fn register(&mut self, name: &str, factory: PolicyFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(|s| s.as_str()).collect()
    }

    pub fn build(&self, name: &str, instance: &Instance) -> Result<Box<dyn Policy>, PolicyError> {
        match self.factories.get(name) {
            Some(f) => f(instance),
            None => Err(PolicyError::UnknownPolicy {
                name: name.to_string(),
                known: self.names().join(", "),
            }),
        }
    }
}

impl Default for PolicyRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

/// Sells nothing and pays the full volume penalty; the baseline every
/// strategy should beat on average.
struct NeverTrade {
    penalty: PenaltyFunction,
}

impl Policy for NeverTrade {
    fn name(&self) -> &str {
        "never_trade"
    }

    fn run(&self, path: &ForecastPath) -> Result<PolicyOutcome, PolicyError> {
        Ok(PolicyOutcome {
            final_position: 0.0,
            cost: CostBreakdown {
                drift: 0.0,
                impact: 0.0,
                volume: self.penalty.u(path.realized()),
            },
            hit_position_cap: false,
        })
    }
}

fn make_never_trade(inst: &Instance) -> Result<Box<dyn Policy>, PolicyError> {
    Ok(Box::new(NeverTrade {
        penalty: inst.penalty.clone(),
    }))
}

/// Clairvoyant benchmark: solves the deterministic problem with the
/// realized production known from the start.
enum Exact {
    Frictionless {
        penalty: PenaltyFunction,
        drift: DriftCurve,
    },
    Impact {
        ip: ImpactParams,
        grid: Vec<f64>,
    },
}

impl Policy for Exact {
    fn name(&self) -> &str {
        "exact"
    }

    fn run(&self, path: &ForecastPath) -> Result<PolicyOutcome, PolicyError> {
        let f_t = path.realized();
        match self {
            Exact::Frictionless { penalty, drift } => {
                let (plan, _) = exact_forecast_plan(penalty, drift, f_t)?;
                let cost = plan.frictionless_cost(drift, penalty, f_t);
                Ok(PolicyOutcome {
                    final_position: plan.final_position(),
                    cost,
                    hit_position_cap: false,
                })
            }
            Exact::Impact { ip, grid } => {
                let plan = pontryagin_plan(ip, f_t, grid)?;
                Ok(PolicyOutcome {
                    final_position: plan.phi_terminal,
                    cost: plan.breakdown,
                    hit_position_cap: false,
                })
            }
        }
    }
}

fn make_exact(inst: &Instance) -> Result<Box<dyn Policy>, PolicyError> {
    Ok(match inst.gamma {
        None => Box::new(Exact::Frictionless {
            penalty: inst.penalty.clone(),
            drift: inst.drift.clone(),
        }),
        Some(_) => Box::new(Exact::Impact {
            ip: inst.impact_params("exact")?,
            grid: inst.grid.clone(),
        }),
    })
}

/// Ignores forecast updates entirely: the deterministic plan is computed
/// once from the production law, and only the realized production enters
/// at delivery.
enum NoForecast {
    Frictionless {
        nf: NoForecastPlan,
        penalty: PenaltyFunction,
        drift: DriftCurve,
    },
    Impact {
        plan: PontryaginPlan,
        penalty: PenaltyFunction,
    },
}

impl Policy for NoForecast {
    fn name(&self) -> &str {
        "no_forecast"
    }

    fn run(&self, path: &ForecastPath) -> Result<PolicyOutcome, PolicyError> {
        let f_t = path.realized();
        match self {
            NoForecast::Frictionless { nf, penalty, drift } => {
                let plan = nf.realized_plan(f_t);
                let cost = plan.frictionless_cost(drift, penalty, f_t);
                Ok(PolicyOutcome {
                    final_position: plan.final_position(),
                    cost,
                    hit_position_cap: false,
                })
            }
            NoForecast::Impact { plan, penalty } => Ok(PolicyOutcome {
                final_position: plan.phi_terminal,
                cost: CostBreakdown {
                    drift: plan.breakdown.drift,
                    impact: plan.breakdown.impact,
                    volume: penalty.u(f_t - plan.phi_terminal),
                },
                hit_position_cap: false,
            }),
        }
    }
}

fn make_no_forecast(inst: &Instance) -> Result<Box<dyn Policy>, PolicyError> {
    Ok(match inst.gamma {
        None => {
            let law = inst.law()?;
            let nf = no_forecast_plan(&inst.penalty, &law, &inst.drift)?;
            Box::new(NoForecast::Frictionless {
                nf,
                penalty: inst.penalty.clone(),
                drift: inst.drift.clone(),
            })
        }
        Some(_) => {
            let ip = inst.impact_params("no_forecast")?;
            let law = inst.law()?;
            let plan = pontryagin_plan_no_forecast(&ip, &law, &inst.grid)?;
            Box::new(NoForecast::Impact {
                plan,
                penalty: inst.penalty.clone(),
            })
        }
    })
}

/// Frictionless running-maximum strategy driven by precomputed threshold
/// tables at the instance's decision times.
struct Thresholds {
    tables: XiTables,
    penalty: PenaltyFunction,
    drift: DriftCurve,
}

impl Policy for Thresholds {
    fn name(&self) -> &str {
        "thresholds"
    }

    fn run(&self, path: &ForecastPath) -> Result<PolicyOutcome, PolicyError> {
        let plan = apply_threshold_policy(&self.tables, path)?;
        let cost = plan.frictionless_cost(&self.drift, &self.penalty, path.realized());
        Ok(PolicyOutcome {
            final_position: plan.final_position(),
            cost,
            hit_position_cap: false,
        })
    }
}

fn make_thresholds(inst: &Instance) -> Result<Box<dyn Policy>, PolicyError> {
    if inst.gamma.is_some() {
        return Err(PolicyError::UnsupportedSetting {
            policy: "thresholds".into(),
            reason: "threshold tables solve the frictionless problem; use hjb under impact".into(),
        });
    }
    let tables = solve_xi_thresholds(
        &inst.penalty,
        &inst.lat,
        &inst.schedule,
        &inst.grid,
        &inst.drift,
        &inst.xi_config,
    )?;
    Ok(Box::new(Thresholds {
        tables,
        penalty: inst.penalty.clone(),
        drift: inst.drift.clone(),
    }))
}

/// Sell-only strategy under market impact from the finite-difference value
/// function, simulated forward with explicit position updates.
struct Hjb {
    sol: HjbSolution,
    ip: ImpactParams,
}

impl Policy for Hjb {
    fn name(&self) -> &str {
        "hjb"
    }

    fn run(&self, path: &ForecastPath) -> Result<PolicyOutcome, PolicyError> {
        let sim = simulate_policy(&self.sol, &self.ip, std::slice::from_ref(path))?;
        let (plan, cost) = &sim.results[0];
        Ok(PolicyOutcome {
            final_position: plan.final_position(),
            cost: *cost,
            hit_position_cap: sim.phi_max_hits > 0,
        })
    }
}

fn make_hjb(inst: &Instance) -> Result<Box<dyn Policy>, PolicyError> {
    let ip = inst.impact_params("hjb")?;
    let sol = solve_hjb(&ip, &inst.lat, &inst.schedule, &inst.hjb_config)?;
    Ok(Box::new(Hjb { sol, ip }))
}

/// Buy-and-sell strategy for quadratic penalties: explicit linear-quadratic
/// optimum along each path, positions signed.
struct BuySell {
    gamma: f64,
    kappa: f64,
    drift: DriftCurve,
}

impl Policy for BuySell {
    fn name(&self) -> &str {
        "buy_sell"
    }

    fn run(&self, path: &ForecastPath) -> Result<PolicyOutcome, PolicyError> {
        let plan = buy_sell_plan(self.gamma, self.kappa, &self.drift, path)?;
        let cost = plan.cost(self.gamma, self.kappa, &self.drift, path.realized());
        Ok(PolicyOutcome {
            final_position: plan.final_position(),
            cost,
            hit_position_cap: false,
        })
    }
}

fn make_buy_sell(inst: &Instance) -> Result<Box<dyn Policy>, PolicyError> {
    let gamma = match inst.gamma {
        Some(g) => g,
        None => {
            return Err(PolicyError::UnsupportedSetting {
                policy: "buy_sell".into(),
                reason: "needs a market-impact coefficient gamma".into(),
            })
        }
    };
    let kappa = match inst.penalty.kappa() {
        Some(k) => k,
        None => {
            return Err(PolicyError::UnsupportedSetting {
                policy: "buy_sell".into(),
                reason: "closed form requires a quadratic penalty".into(),
            })
        }
    };
    Ok(Box::new(BuySell {
        gamma,
        kappa,
        drift: inst.drift.clone(),
    }))
}
