//! The four subcommand implementations: two calibration commands that turn
//! CSV records into parameter files, and two strategy commands that solve or
//! simulate a configured selling problem.

use std::fmt::Write as _;
use std::path::Path;

use windtrade::calib::{self, CalibError, ProductionSample};
use windtrade::dist::{LatentParams, TruncatedLogNormal};
use windtrade::frictionless::{
    exact_forecast_plan, no_forecast_plan, solve_xi_thresholds, FrictionlessError, XiTables,
};
use windtrade::impact::{
    pontryagin_plan, pontryagin_plan_no_forecast, solve_hjb, ImpactError, ImpactParams,
    PontryaginPlan,
};
use windtrade::mc::{run_experiment, ExperimentSpec, McError};
use windtrade::plan::TradePlan;
use windtrade::policy::{PolicyError, PolicyRegistry};

use crate::config::{self, ConfigFile};
use crate::{data, tensor, CliError, ThetaMode};

/// Tolerance for matching a forecast target time to a production reading.
const ALIGN_TOLERANCE_MINUTES: i64 = 5;

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Parse(format!("cannot write {}: {e}", path.display())))
}

/// Bad inputs are usage errors; everything past validation is a fit failure.
fn map_calib(e: CalibError) -> CliError {
    match e {
        CalibError::EmptySample | CalibError::OutOfRange(_) => CliError::Parse(e.to_string()),
        other => CliError::Fit(other.to_string()),
    }
}

fn map_impact(e: &ImpactError) -> CliError {
    match e {
        ImpactError::CflInfeasible { .. } => CliError::Cfl(format!(
            "{e}; in [grids] lower n_phi or n_y, raise n_t, or raise max_substeps"
        )),
        ImpactError::InvalidParam(_) | ImpactError::GridMismatch(_) => {
            CliError::Parse(e.to_string())
        }
        other => CliError::Fit(other.to_string()),
    }
}

fn map_frictionless(e: &FrictionlessError) -> CliError {
    match e {
        FrictionlessError::BadForecast(_)
        | FrictionlessError::BadUpdateTimes(_)
        | FrictionlessError::GridMismatch(_) => CliError::Parse(e.to_string()),
        other => CliError::Fit(other.to_string()),
    }
}

fn map_policy(e: &PolicyError) -> CliError {
    match e {
        PolicyError::UnknownPolicy { .. }
        | PolicyError::UnsupportedSetting { .. }
        | PolicyError::InvalidInstance(_) => CliError::Parse(e.to_string()),
        PolicyError::Impact(ie) => map_impact(ie),
        PolicyError::Frictionless(fe) => map_frictionless(fe),
        other => CliError::Fit(other.to_string()),
    }
}

fn map_mc(e: &McError) -> CliError {
    match e {
        McError::BadSpec(_) => CliError::Parse(e.to_string()),
        McError::Policy(pe) => map_policy(pe),
        McError::Forecast(_) => CliError::Fit(e.to_string()),
    }
}

pub fn fit_production(
    data_path: &Path,
    rated_power_kw: f64,
    subsample: usize,
    out: &Path,
) -> Result<(), CliError> {
    let (rows, clamps) = data::read_production(data_path, rated_power_kw, subsample)?;
    if clamps.low + clamps.high > 0 {
        eprintln!(
            "warning: clamped {} reading(s) below 0 kW and {} above rated power",
            clamps.low, clamps.high
        );
    }
    let values: Vec<f64> = rows.iter().map(|(_, v)| *v).collect();
    let rows_used = values.len();
    let sample = ProductionSample::new(values).map_err(map_calib)?;
    let (law, report) = calib::fit_production(&sample, 100, None).map_err(map_calib)?;
    let lat = law.to_latent();

    let mut text = String::from("[production]\n");
    let _ = writeln!(text, "mu = {:?}", law.mu());
    let _ = writeln!(text, "nu = {:?}", law.nu());
    let _ = writeln!(text, "zeta = {:?}", law.zeta());
    let _ = writeln!(text, "nu_x = {:?}", lat.nu_x);
    let _ = writeln!(text, "x_min = {:?}", lat.x_min);
    let _ = writeln!(text, "x_max = {:?}", lat.x_max);
    let _ = writeln!(text, "objective = {:?}", report.objective);
    let _ = writeln!(text, "evaluations = {}", report.evaluations);
    let _ = writeln!(text, "converged = {}", report.converged);
    let _ = writeln!(text, "rows_used = {rows_used}");
    let _ = writeln!(text, "clamped_low = {}", clamps.low);
    let _ = writeln!(text, "clamped_high = {}", clamps.high);
    write_text(out, &text)?;

    println!(
        "fitted production law from {} rows: nu_x = {:.5}, x_min = {:.5}, x_max = {:.5} \
         (quantile-distance objective {:.3e})",
        rows_used, lat.nu_x, lat.x_min, lat.x_max, report.objective
    );
    println!("wrote {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn fit_theta(
    forecasts: &Path,
    production: &Path,
    production_params: &Path,
    rated_power_kw: f64,
    mode: ThetaMode,
    bucket_hours: f64,
    min_per_bucket: usize,
    out: &Path,
) -> Result<(), CliError> {
    if !(bucket_hours.is_finite() && bucket_hours > 0.0) {
        return Err(CliError::Parse(format!(
            "--bucket-hours {bucket_hours} must be positive"
        )));
    }
    let params = config::load_production_params(production_params)?;
    let p = &params.production;
    let lat = LatentParams::new(p.nu_x, p.x_min, p.x_max)
        .map_err(|e| CliError::Parse(format!("{}: {e}", production_params.display())))?;

    let (prod_rows, prod_clamps) = data::read_production(production, rated_power_kw, 1)?;
    let (fc_rows, fc_clamps) = data::read_forecasts(forecasts, rated_power_kw)?;
    let (obs, dropped) = data::align(&fc_rows, &prod_rows, ALIGN_TOLERANCE_MINUTES);
    if dropped > 0 {
        eprintln!(
            "warning: dropped {dropped} forecast(s) with no production reading within \
             {ALIGN_TOLERANCE_MINUTES} minutes of the target time"
        );
    }
    if obs.is_empty() {
        return Err(CliError::Parse(
            "no forecast lines up with a production reading; check the two time axes".into(),
        ));
    }

    let (targets, warnings) =
        calib::error_variances_from_data(&obs, bucket_hours, min_per_bucket).map_err(map_calib)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let law = TruncatedLogNormal::from_latent(&lat).map_err(|e| CliError::Parse(e.to_string()))?;
    let var_max = law.variance();
    for (h, v) in targets.horizons.iter().zip(&targets.variances) {
        if *v >= var_max - 1e-12 {
            eprintln!(
                "warning: empirical error variance {v:.6} at horizon {h} h reaches the \
                 production variance {var_max:.6}; theta is capped at nu_x^2 there"
            );
        }
    }

    let mut text = String::from("[theta]\n");
    match mode {
        ThetaMode::Parametric => {
            let (schedule, report) =
                calib::fit_theta_parametric(&lat, &targets).map_err(map_calib)?;
            let (sigma0, eta, b, tau_star) = schedule
                .parametric_values()
                .expect("parametric fit returns a parametric schedule");
            let _ = writeln!(text, "mode = \"parametric\"");
            let _ = writeln!(text, "sigma0 = {sigma0:?}");
            let _ = writeln!(text, "eta = {eta:?}");
            let _ = writeln!(text, "b = {b:?}");
            let _ = writeln!(text, "tau_star_hours = {tau_star:?}");
            text.push_str("\n[fit]\n");
            let _ = writeln!(text, "objective = {:?}", report.objective);
            let _ = writeln!(text, "evaluations = {}", report.evaluations);
            let _ = writeln!(text, "converged = {}", report.converged);
            println!(
                "fitted variance intensity from {} horizon bucket(s): sigma0 = {:.5}, \
                 eta = {:.5}, b = {:.5}, tau_star_hours = {:.2}",
                targets.horizons.len(),
                sigma0,
                eta,
                b,
                tau_star
            );
        }
        ThetaMode::Nonparametric => {
            let schedule = calib::fit_theta_nonparametric(&lat, &targets).map_err(map_calib)?;
            let (times, values) = schedule
                .knots()
                .expect("nonparametric fit returns a tabulated schedule");
            let _ = writeln!(text, "mode = \"tabulated\"");
            let _ = writeln!(text, "times_hours = {times:?}");
            let _ = writeln!(text, "values = {values:?}");
            text.push_str("\n[fit]\n");
            println!(
                "fitted tabulated theta schedule with {} knot(s) over {} h",
                times.len(),
                schedule.horizon()
            );
        }
    }
    let _ = writeln!(text, "rows_aligned = {}", obs.len());
    let _ = writeln!(text, "rows_dropped = {dropped}");
    let _ = writeln!(
        text,
        "rows_clamped = {}",
        prod_clamps.low + prod_clamps.high + fc_clamps.low + fc_clamps.high
    );
    let _ = writeln!(text, "bucket_horizons_hours = {:?}", targets.horizons);
    let _ = writeln!(text, "bucket_variances = {:?}", targets.variances);
    let _ = writeln!(text, "bucket_counts = {:?}", targets.counts);
    write_text(out, &text)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn numbers_line(values: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{v:?}");
    }
    s
}

fn threshold_tables_text(tables: &XiTables) -> String {
    let mut text = String::from(
        "# position floors: at each update time, sell up to max(position, xi(forecast))\n",
    );
    let times = tables.update_times();
    let _ = writeln!(text, "horizon_hours: {:?}", times[times.len() - 1]);
    let _ = writeln!(text, "xi_max: {:?}", tables.xi_max());
    let _ = writeln!(text, "update_times_hours: {}", numbers_line(times));
    for stage in 0..times.len() - 1 {
        let _ = writeln!(text, "stage {stage} time_hours: {:?}", times[stage]);
        let _ = writeln!(text, "stage {stage} x: {}", numbers_line(tables.x_grid(stage)));
        let _ = writeln!(
            text,
            "stage {stage} xi: {}",
            numbers_line(tables.xi_values(stage))
        );
    }
    text
}

fn block_plan_text(policy: &str, plan: &TradePlan, value: f64, extra: &[(&str, f64)]) -> String {
    let mut text = String::new();
    let _ = writeln!(text, "policy: {policy}");
    let _ = writeln!(text, "value: {value:?}");
    for (key, v) in extra {
        let _ = writeln!(text, "{key}: {v:?}");
    }
    let _ = writeln!(text, "times_hours: {}", numbers_line(plan.times()));
    let _ = writeln!(text, "positions: {}", numbers_line(plan.positions()));
    let last = plan.positions().last().copied().unwrap_or(0.0);
    let _ = writeln!(text, "sold_at_delivery: {:?}", plan.final_position() - last);
    let _ = writeln!(text, "final_position: {:?}", plan.final_position());
    text
}

fn rate_plan_text(policy: &str, plan: &PontryaginPlan) -> String {
    let mut text = String::new();
    let _ = writeln!(text, "policy: {policy}");
    let _ = writeln!(text, "value: {:?}", plan.value);
    let _ = writeln!(text, "phi_terminal: {:?}", plan.phi_terminal);
    let _ = writeln!(text, "drift_loss: {:?}", plan.breakdown.drift);
    let _ = writeln!(text, "impact_cost: {:?}", plan.breakdown.impact);
    let _ = writeln!(text, "volume_penalty: {:?}", plan.breakdown.volume);
    let _ = writeln!(text, "times_hours: {}", numbers_line(&plan.times));
    let _ = writeln!(text, "rates: {}", numbers_line(&plan.rates));
    let _ = writeln!(text, "positions: {}", numbers_line(&plan.positions));
    text
}

fn require_out_policy<'a>(out_policy: Option<&'a Path>, what: &str) -> Result<&'a Path, CliError> {
    out_policy.ok_or_else(|| CliError::Parse(format!("pass --out-policy for the {what}")))
}

fn impact_params_from(cfg: &ConfigFile, gamma: f64) -> Result<ImpactParams, CliError> {
    let ip = ImpactParams::new(gamma, cfg.drift()?, cfg.penalty()?);
    ip.map_err(|e| map_impact(&e))
}

pub fn solve(
    config_path: &Path,
    policy: &str,
    out_grid: Option<&Path>,
    out_policy: Option<&Path>,
    f_terminal: Option<f64>,
) -> Result<(), CliError> {
    let cfg = config::load(config_path)?;
    let inst = cfg.instance()?;
    match policy {
        "hjb" => {
            let gamma = cfg.gamma_core().ok_or_else(|| {
                CliError::Parse(
                    "policy \"hjb\" needs gamma_eur_per_mwh2_h in [market]".into(),
                )
            })?;
            if out_grid.is_none() && out_policy.is_none() {
                return Err(CliError::Parse(
                    "nothing to write: pass --out-grid (value) and/or --out-policy (rate)".into(),
                ));
            }
            let ip = impact_params_from(&cfg, gamma)?;
            let sol = solve_hjb(&ip, &inst.lat, &inst.schedule, &inst.hjb_config)
                .map_err(|e| map_impact(&e))?;
            let dims = [sol.t_grid.len(), sol.phi_grid.len(), sol.y_grid.len()];
            let axes: [(&str, &[f64]); 3] = [
                ("t_hours", &sol.t_grid),
                ("phi", &sol.phi_grid),
                ("y", &sol.y_grid),
            ];
            if let Some(path) = out_grid {
                tensor::write_tensor(path, &dims, &sol.w)?;
                tensor::write_manifest(path, "cost-to-go w(t, phi, y)", &axes)?;
                println!(
                    "wrote value tensor {} ({} x {} x {})",
                    path.display(),
                    dims[0],
                    dims[1],
                    dims[2]
                );
            }
            if let Some(path) = out_policy {
                tensor::write_tensor(path, &dims, &sol.psi)?;
                tensor::write_manifest(path, "selling rate psi(t, phi, y)", &axes)?;
                println!(
                    "wrote rate tensor {} ({} x {} x {})",
                    path.display(),
                    dims[0],
                    dims[1],
                    dims[2]
                );
            }
            Ok(())
        }
        "thresholds" => {
            if cfg.gamma_core().is_some() {
                return Err(CliError::Parse(
                    "policy \"thresholds\" is frictionless; remove gamma_eur_per_mwh2_h \
                     or pick hjb"
                        .into(),
                ));
            }
            let path = require_out_policy(out_policy, "threshold tables")?;
            let tables = solve_xi_thresholds(
                &inst.penalty,
                &inst.lat,
                &inst.schedule,
                &inst.grid,
                &inst.drift,
                &inst.xi_config,
            )
            .map_err(|e| map_frictionless(&e))?;
            write_text(path, &threshold_tables_text(&tables))?;
            println!(
                "wrote threshold tables {} ({} decision stages)",
                path.display(),
                tables.update_times().len() - 1
            );
            Ok(())
        }
        "exact" => {
            let f_t = f_terminal.ok_or_else(|| {
                CliError::Parse(
                    "policy \"exact\" needs --f-terminal (the known production in [0, 1])".into(),
                )
            })?;
            let path = require_out_policy(out_policy, "plan")?;
            let text = match cfg.gamma_core() {
                None => {
                    let (plan, value) = exact_forecast_plan(&inst.penalty, &inst.drift, f_t)
                        .map_err(|e| map_frictionless(&e))?;
                    block_plan_text("exact", &plan, value, &[("f_terminal", f_t)])
                }
                Some(gamma) => {
                    let ip = impact_params_from(&cfg, gamma)?;
                    let plan =
                        pontryagin_plan(&ip, f_t, &inst.grid).map_err(|e| map_impact(&e))?;
                    rate_plan_text("exact", &plan)
                }
            };
            write_text(path, &text)?;
            println!("wrote plan {}", path.display());
            Ok(())
        }
        "no_forecast" => {
            let path = require_out_policy(out_policy, "plan")?;
            let law = inst.law().map_err(|e| map_policy(&e))?;
            let text = match cfg.gamma_core() {
                None => {
                    let nf = no_forecast_plan(&inst.penalty, &law, &inst.drift)
                        .map_err(|e| map_frictionless(&e))?;
                    let mut text = block_plan_text("no_forecast", &nf.plan, nf.value, &[]);
                    text.push_str(
                        "# at delivery, additionally sell (f_T - mean + I(m*))^+ once \
                         production is realized\n",
                    );
                    text
                }
                Some(gamma) => {
                    let ip = impact_params_from(&cfg, gamma)?;
                    let plan = pontryagin_plan_no_forecast(&ip, &law, &inst.grid)
                        .map_err(|e| map_impact(&e))?;
                    rate_plan_text("no_forecast", &plan)
                }
            };
            write_text(path, &text)?;
            println!("wrote plan {}", path.display());
            Ok(())
        }
        "buy_sell" | "never_trade" => Err(CliError::Parse(format!(
            "policy {policy:?} has no offline artifact; evaluate it with `simulate`"
        ))),
        other => Err(CliError::Parse(format!(
            "unknown policy {other:?}; solve accepts exact, no_forecast, thresholds, hjb"
        ))),
    }
}

pub fn simulate(
    config_path: &Path,
    policy: &str,
    n_paths: Option<usize>,
    seed: Option<u64>,
    out: &Path,
) -> Result<(), CliError> {
    let cfg = config::load(config_path)?;
    let instance = cfg.instance()?;
    let n_paths = n_paths.or(cfg.simulate.n_paths).ok_or_else(|| {
        CliError::Parse("pass --n-paths or set n_paths in [simulate]".into())
    })?;
    let seed = seed.or(cfg.simulate.seed).ok_or_else(|| {
        CliError::Parse("pass --seed or set seed in [simulate]".into())
    })?;
    let spec = ExperimentSpec {
        instance,
        policy: policy.to_string(),
        n_paths,
        seed,
    };
    let registry = PolicyRegistry::with_builtins();
    let result = run_experiment(&spec, &registry).map_err(|e| map_mc(&e))?;
    write_text(out, &result.records_csv())?;
    print!("{}", result.summary_text());
    if result.position_cap_hits > 0 {
        eprintln!(
            "warning: {} path(s) hit the top of the position grid; raise phi_max in [grids]",
            result.position_cap_hits
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}
