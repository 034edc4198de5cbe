//! TOML configuration schema and the conversion from physical units to the
//! core library's normalized, hour-based quantities. Unknown keys are
//! rejected everywhere so typos fail loudly, and every physical key carries
//! its unit in the name.

use std::path::Path;

use serde::Deserialize;
use windtrade::dist::LatentParams;
use windtrade::drift::DriftCurve;
use windtrade::forecast::ThetaSchedule;
use windtrade::frictionless::XiConfig;
use windtrade::impact::HjbConfig;
use windtrade::penalty::PenaltyFunction;
use windtrade::policy::Instance;

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub model: ModelSection,
    pub theta: ThetaSection,
    pub market: MarketSection,
    #[serde(default)]
    pub grids: GridsSection,
    #[serde(default)]
    pub simulate: SimulateSection,
}

/// Latent production-law parameters, as written by fit-production.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub nu_x: f64,
    pub x_min: f64,
    pub x_max: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaSection {
    /// "parametric" or "tabulated".
    pub mode: String,
    pub sigma0: Option<f64>,
    pub eta: Option<f64>,
    pub b: Option<f64>,
    pub tau_star_hours: Option<f64>,
    pub times_hours: Option<Vec<f64>>,
    pub values: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    pub horizon_hours: f64,
    pub rated_power_kw: f64,
    /// Energy delivered at full rated power over the contract, in MWh;
    /// rescales the normalized core quantities back to physical units.
    pub reference_energy_mwh: f64,
    /// Volume penalty `u(x) = P x^2` with x in MWh.
    pub penalty_p_eur_per_mwh2: f64,
    /// Quadratic impact on the MWh/h trading rate; absent = frictionless.
    pub gamma_eur_per_mwh2_h: Option<f64>,
    /// Constant price drift, or a piecewise-linear table below.
    pub mu_eur_per_mwh_h: Option<f64>,
    pub mu_times_hours: Option<Vec<f64>>,
    pub mu_values_eur_per_mwh_h: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridsSection {
    /// Decision intervals on [0, T] for updates and simulation.
    pub n_updates: Option<usize>,
    pub n_t: Option<usize>,
    pub n_phi: Option<usize>,
    pub n_y: Option<usize>,
    pub phi_max: Option<f64>,
    pub n_x: Option<usize>,
    pub n_m: Option<usize>,
    pub gh_nodes: Option<usize>,
    pub max_substeps: Option<usize>,
    pub sigma_override_per_sqrt_hour: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub n_paths: Option<usize>,
    pub seed: Option<u64>,
}

pub fn load(path: &Path) -> Result<ConfigFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Parse(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| CliError::Parse(format!("config {}: {e}", path.display())))
}

impl ConfigFile {
    pub fn latent(&self) -> Result<LatentParams, CliError> {
        LatentParams::new(self.model.nu_x, self.model.x_min, self.model.x_max)
            .map_err(|e| CliError::Parse(format!("[model]: {e}")))
    }

    pub fn schedule(&self) -> Result<ThetaSchedule, CliError> {
        let cap = self.model.nu_x * self.model.nu_x;
        let horizon = self.market.horizon_hours;
        let t = &self.theta;
        match t.mode.as_str() {
            "parametric" => {
                let missing = || {
                    CliError::Parse(
                        "[theta] parametric mode needs sigma0, eta, b, tau_star_hours".into(),
                    )
                };
                ThetaSchedule::parametric(
                    t.sigma0.ok_or_else(missing)?,
                    t.eta.ok_or_else(missing)?,
                    t.b.ok_or_else(missing)?,
                    t.tau_star_hours.ok_or_else(missing)?,
                    horizon,
                    cap,
                )
                .map_err(|e| CliError::Parse(format!("[theta]: {e}")))
            }
            "tabulated" => {
                let missing = || {
                    CliError::Parse("[theta] tabulated mode needs times_hours and values".into())
                };
                let times = t.times_hours.clone().ok_or_else(missing)?;
                let values = t.values.clone().ok_or_else(missing)?;
                if let (Some(&first), Some(&last)) = (times.first(), times.last()) {
                    if first.abs() > 1e-9 || (last - horizon).abs() > 1e-9 {
                        return Err(CliError::Parse(format!(
                            "[theta] tabulated times_hours must span [0, {horizon}] to \
                             cover the contract, got [{first}, {last}]"
                        )));
                    }
                }
                ThetaSchedule::tabulated(times, values, horizon, cap)
                    .map_err(|e| CliError::Parse(format!("[theta]: {e}")))
            }
            other => Err(CliError::Parse(format!(
                "[theta] mode must be \"parametric\" or \"tabulated\", got {other:?}"
            ))),
        }
    }

    pub fn drift(&self) -> Result<DriftCurve, CliError> {
        let m = &self.market;
        let energy = m.reference_energy_mwh;
        let horizon = m.horizon_hours;
        match (&m.mu_eur_per_mwh_h, &m.mu_times_hours, &m.mu_values_eur_per_mwh_h) {
            (Some(mu), None, None) => DriftCurve::constant(mu * energy, horizon)
                .map_err(|e| CliError::Parse(format!("[market] drift: {e}"))),
            (None, Some(times), Some(values)) => DriftCurve::table(
                times.clone(),
                values.iter().map(|v| v * energy).collect(),
                horizon,
            )
            .map_err(|e| CliError::Parse(format!("[market] drift: {e}"))),
            _ => Err(CliError::Parse(
                "[market] needs either mu_eur_per_mwh_h or both mu_times_hours and \
                 mu_values_eur_per_mwh_h"
                    .into(),
            )),
        }
    }

    pub fn penalty(&self) -> Result<PenaltyFunction, CliError> {
        let m = &self.market;
        if !(m.penalty_p_eur_per_mwh2 > 0.0) {
            return Err(CliError::Parse(format!(
                "[market] penalty_p_eur_per_mwh2 = {} must be positive",
                m.penalty_p_eur_per_mwh2
            )));
        }
        // u_phys(x) = P x^2 on MWh mismatch; on normalized mismatch this is
        // (kappa/2) x^2 with kappa = 2 P E^2.
        let kappa = 2.0 * m.penalty_p_eur_per_mwh2 * m.reference_energy_mwh.powi(2);
        PenaltyFunction::quadratic(kappa).map_err(|e| CliError::Parse(format!("[market]: {e}")))
    }

    pub fn gamma_core(&self) -> Option<f64> {
        self.market
            .gamma_eur_per_mwh2_h
            .map(|g| g * self.market.reference_energy_mwh.powi(2))
    }

    pub fn instance(&self) -> Result<Instance, CliError> {
        if !(self.market.rated_power_kw > 0.0) {
            return Err(CliError::Parse(format!(
                "[market] rated_power_kw = {} must be positive",
                self.market.rated_power_kw
            )));
        }
        if !(self.market.reference_energy_mwh > 0.0) {
            return Err(CliError::Parse(format!(
                "[market] reference_energy_mwh = {} must be positive",
                self.market.reference_energy_mwh
            )));
        }
        let n_updates = self.grids.n_updates.unwrap_or(12).max(1);
        let horizon = self.market.horizon_hours;
        let grid: Vec<f64> = (0..=n_updates)
            .map(|k| horizon * k as f64 / n_updates as f64)
            .collect();
        let inst = Instance::new(
            self.latent()?,
            self.schedule()?,
            self.drift()?,
            self.penalty()?,
            self.gamma_core(),
            grid,
        )
        .map_err(|e| CliError::Parse(e.to_string()))?;
        let g = &self.grids;
        let xi = XiConfig {
            n_x: g.n_x.unwrap_or_else(|| XiConfig::default().n_x),
            n_m: g.n_m.unwrap_or_else(|| XiConfig::default().n_m),
            gh_nodes: g.gh_nodes.unwrap_or_else(|| XiConfig::default().gh_nodes),
            ..Default::default()
        };
        let hjb = HjbConfig {
            n_t: g.n_t.unwrap_or_else(|| HjbConfig::default().n_t),
            n_phi: g.n_phi.unwrap_or_else(|| HjbConfig::default().n_phi),
            n_y: g.n_y.unwrap_or_else(|| HjbConfig::default().n_y),
            phi_max: g.phi_max.unwrap_or_else(|| HjbConfig::default().phi_max),
            sigma_override: g.sigma_override_per_sqrt_hour,
            max_substeps: g
                .max_substeps
                .unwrap_or_else(|| HjbConfig::default().max_substeps),
            ..Default::default()
        };
        Ok(inst.with_xi_config(xi).with_hjb_config(hjb))
    }
}

/// The file written by fit-production, read back by fit-theta.
#[derive(Debug, Deserialize)]
pub struct ProductionParamsFile {
    pub production: ProductionParams,
}

/// Only the latent parameters are read back; fit diagnostics in the same
/// file are ignored.
#[derive(Debug, Deserialize)]
pub struct ProductionParams {
    pub nu_x: f64,
    pub x_min: f64,
    pub x_max: f64,
}

pub fn load_production_params(path: &Path) -> Result<ProductionParamsFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::Parse(format!(
            "cannot read production params {}: {e}",
            path.display()
        ))
    })?;
    toml::from_str(&text)
        .map_err(|e| CliError::Parse(format!("production params {}: {e}", path.display())))
}
