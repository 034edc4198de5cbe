//! Calibration: the production law from observed output levels by
//! quantile-distance minimization, and the variance schedule `theta` from
//! empirical forecast-error variances, either non-parametrically (inverting
//! `phi` per horizon) or by parametric least squares.

use thiserror::Error;

use crate::dist::{LatentParams, TruncatedLogNormal};
use crate::forecast::{error_variance, ThetaSchedule};
use crate::num::isotonic::pava_nondecreasing;
use crate::num::optim::{nelder_mead_restarted, NmOptions};

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("sample is empty")]
    EmptySample,
    #[error("sample value {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("degenerate sample: all values equal {0}")]
    Degenerate(f64),
    #[error("alpha = {alpha} has no order statistic (smallest is 1/N = {min_alpha})")]
    AlphaBelowRange { alpha: f64, min_alpha: f64 },
    #[error("alpha = {0} outside [0, 1]")]
    BadAlpha(f64),
    #[error("variance target {0} is negative")]
    NegativeVariance(f64),
    #[error("horizons must be positive, ascending, and match variances: {0}")]
    BadTargets(String),
    #[error("need at least {need} horizon buckets, got {got}")]
    TooFewHorizons { need: usize, got: usize },
    #[error("no horizon bucket has the required {min} observations")]
    AllBucketsEmpty { min: usize },
    #[error(transparent)]
    Dist(#[from] crate::dist::DistError),
    #[error(transparent)]
    Forecast(#[from] crate::forecast::ForecastError),
}

/// Observed normalized production levels, sorted ascending on ingestion.
#[derive(Debug, Clone)]
pub struct ProductionSample {
    values: Vec<f64>,
}

impl ProductionSample {
    pub fn new(mut values: Vec<f64>) -> Result<Self, CalibError> {
        if values.is_empty() {
            return Err(CalibError::EmptySample);
        }
        if let Some(&bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(CalibError::OutOfRange(bad));
        }
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The order statistic `max{F^(k) | k/N <= alpha}` (1-based `k`).
    pub fn empirical_quantile(&self, alpha: f64) -> Result<f64, CalibError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(CalibError::BadAlpha(alpha));
        }
        let n = self.values.len();
        match self.quantile_index(alpha) {
            Some(k) => Ok(self.values[k - 1]),
            None => Err(CalibError::AlphaBelowRange {
                alpha,
                min_alpha: 1.0 / n as f64,
            }),
        }
    }

    /// Largest 1-based `k` with `k/N <= alpha`, testing the inequality in
    /// the same floating arithmetic as the definition (a plain
    /// `floor(alpha N)` misreads exact ties like 3/10 <= 0.3).
    fn quantile_index(&self, alpha: f64) -> Option<usize> {
        let n = self.values.len();
        let mut k = ((alpha * n as f64).floor() as usize).min(n);
        while k < n && (k + 1) as f64 / n as f64 <= alpha {
            k += 1;
        }
        while k >= 1 && k as f64 / n as f64 > alpha {
            k -= 1;
        }
        (k >= 1).then_some(k)
    }
}

/// Outcome bookkeeping for the derivative-free fits.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub objective: f64,
    pub evaluations: usize,
    pub converged: bool,
    /// Index of the winning start in the multi-start sweep.
    pub best_start: usize,
}

/// Quantile-distance fit of the production law.
///
/// Minimizes the squared distance between empirical and model quantiles at
/// `levels` probability levels spaced uniformly across the continuous range
/// `[P0, 1 - P1]`; the levels move with the candidate parameters at every
/// evaluation, as the atoms do. The search runs in `(mu, ln nu, ln(-zeta))`
/// so the positivity constraints are structural, from a method-of-moments
/// start plus deterministic perturbations.
pub fn fit_production(
    sample: &ProductionSample,
    levels: usize,
    init: Option<TruncatedLogNormal>,
) -> Result<(TruncatedLogNormal, FitReport), CalibError> {
    assert!(levels >= 2, "need at least two probability levels");
    let vals = sample.values();
    let n = vals.len();
    let (lo, hi) = (vals[0], vals[n - 1]);
    if lo == hi {
        return Err(CalibError::Degenerate(lo));
    }

    let objective = |p: &[f64]| -> f64 {
        let (mu, nu, zeta) = (p[0], p[1].exp(), -p[2].exp());
        let law = match TruncatedLogNormal::new(mu, nu, zeta) {
            Ok(d) => d,
            Err(_) => return f64::INFINITY,
        };
        let (p0, p1) = law.atoms();
        let span = 1.0 - p1 - p0;
        if !(span > 1e-6) {
            return f64::INFINITY;
        }
        let mut sum = 0.0;
        for l in 1..=levels {
            let alpha = p0 + (l - 1) as f64 / levels as f64 * span;
            let q_model = match law.quantile(alpha) {
                Ok(q) => q,
                Err(_) => return f64::INFINITY,
            };
            // Levels below the first order statistic (possible for candidate
            // parameters with near-zero P0 on small samples) read the sample
            // minimum instead of erroring out mid-search.
            let q_emp = match sample.quantile_index(alpha) {
                Some(k) => vals[k - 1],
                None => vals[0],
            };
            let d = q_emp - q_model;
            sum += d * d;
        }
        sum
    };

    // Method-of-moments start on ln(y - zeta0) with zeta0 = -0.25 (mid-range
    // of typical fitted values), unless the caller supplies one.
    let x0 = match init {
        Some(d) => vec![d.mu(), d.nu().ln(), (-d.zeta()).ln()],
        None => {
            let zeta0 = -0.25f64;
            let logs: Vec<f64> = vals.iter().map(|&y| (y - zeta0).ln()).collect();
            let m = logs.iter().sum::<f64>() / n as f64;
            let var = logs.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
            vec![m, var.sqrt().max(1e-3).ln(), (-zeta0).ln()]
        }
    };

    let opts = NmOptions {
        max_iter: 600,
        x_tol: 1e-8,
        f_tol: 1e-13,
        ..Default::default()
    };
    let offsets: [(f64, f64, f64); 6] = [
        (0.0, 0.0, 0.0),
        (0.4, 0.0, 0.0),
        (-0.4, 0.0, 0.0),
        (0.0, 0.3, 0.5),
        (0.0, -0.3, -0.5),
        (0.3, 0.3, -0.7),
    ];
    let mut best: Option<(Vec<f64>, f64, usize, bool, usize)> = None;
    for (i, (da, db, dc)) in offsets.iter().enumerate() {
        let start = vec![x0[0] + da, x0[1] + db, x0[2] + dc];
        let r = nelder_mead_restarted(objective, &start, &[0.2, 0.2, 0.2], &opts, 2);
        let better = best.as_ref().is_none_or(|b| r.fx < b.1);
        let evals = best.as_ref().map_or(0, |b| b.4) + r.evals;
        if better {
            best = Some((r.x, r.fx, i, r.converged, evals));
        } else if let Some(b) = best.as_mut() {
            b.4 = evals;
        }
    }
    let (x, fx, best_start, converged, evaluations) = best.unwrap();
    let law = TruncatedLogNormal::new(x[0], x[1].exp(), -x[2].exp())?;
    Ok((
        law,
        FitReport {
            objective: fx,
            evaluations,
            converged,
            best_start,
        },
    ))
}

/// One forecast record: the forecast value issued `horizon` time units
/// before delivery, and the production realized at delivery.
#[derive(Debug, Clone, Copy)]
pub struct ForecastObs {
    pub forecast: f64,
    pub realized: f64,
    pub horizon: f64,
}

/// Empirical forecast-error variances per horizon bucket.
#[derive(Debug, Clone)]
pub struct VarianceTargets {
    pub horizons: Vec<f64>,
    pub variances: Vec<f64>,
    pub counts: Vec<usize>,
}

impl VarianceTargets {
    pub fn new(horizons: Vec<f64>, variances: Vec<f64>) -> Result<Self, CalibError> {
        if horizons.len() != variances.len() || horizons.is_empty() {
            return Err(CalibError::BadTargets(format!(
                "{} horizons vs {} variances",
                horizons.len(),
                variances.len()
            )));
        }
        if horizons.windows(2).any(|w| !(w[0] < w[1])) || horizons[0] <= 0.0 {
            return Err(CalibError::BadTargets(
                "horizons must be positive and strictly ascending".into(),
            ));
        }
        if let Some(&v) = variances.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(CalibError::NegativeVariance(v));
        }
        let counts = vec![1; horizons.len()];
        Ok(Self {
            horizons,
            variances,
            counts,
        })
    }

    pub fn len(&self) -> usize {
        self.horizons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.horizons.is_empty()
    }
}

/// Bucket forecast records by horizon (bucket width `bucket_hours`, centers
/// at integer multiples) and return the unbiased per-bucket variance of
/// `forecast - realized`. Buckets with fewer than `min_per_bucket` records
/// are dropped, reported in the returned warning strings.
pub fn error_variances_from_data(
    records: &[ForecastObs],
    bucket_hours: f64,
    min_per_bucket: usize,
) -> Result<(VarianceTargets, Vec<String>), CalibError> {
    assert!(bucket_hours > 0.0);
    let min = min_per_bucket.max(2);
    use std::collections::BTreeMap;
    let mut buckets: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for r in records {
        if r.horizon <= 0.0 {
            return Err(CalibError::BadTargets(format!(
                "nonpositive horizon {}",
                r.horizon
            )));
        }
        let idx = (r.horizon / bucket_hours).round() as i64;
        buckets.entry(idx.max(1)).or_default().push(r.forecast - r.realized);
    }
    let mut warnings = Vec::new();
    let (mut horizons, mut variances, mut counts) = (Vec::new(), Vec::new(), Vec::new());
    for (idx, diffs) in &buckets {
        let h = *idx as f64 * bucket_hours;
        if diffs.len() < min {
            warnings.push(format!(
                "horizon bucket {h:.2}h dropped: {} records < required {min}",
                diffs.len()
            ));
            continue;
        }
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
        horizons.push(h);
        variances.push(var);
        counts.push(diffs.len());
    }
    if horizons.is_empty() {
        return Err(CalibError::AllBucketsEmpty { min });
    }
    let mut t = VarianceTargets::new(horizons, variances)?;
    t.counts = counts;
    Ok((t, warnings))
}

/// Solve `phi(theta) = v` on `[0, cap]` to `|phi - v| < 1e-10`. `phi` is
/// continuous and strictly increasing, so plain bisection is enough.
fn invert_phi(lat: &LatentParams, v: f64, var_max: f64) -> f64 {
    let cap = lat.nu_x * lat.nu_x;
    if v <= 0.0 {
        return 0.0;
    }
    if v >= var_max - 1e-12 {
        return cap;
    }
    let (mut lo, mut hi) = (0.0f64, cap);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f = error_variance(lat, mid);
        if (f - v).abs() < 1e-10 {
            return mid;
        }
        if f < v {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Non-parametric schedule: invert `phi` at every target horizon, then
/// monotonize. Targets at or above the unconditional variance map to the
/// cap (the forecast carries no information there).
///
/// The returned schedule lives on `t in [0, T]` with `T` the largest target
/// horizon; knots sit at `t = T - horizon`.
pub fn fit_theta_nonparametric(
    lat: &LatentParams,
    targets: &VarianceTargets,
) -> Result<ThetaSchedule, CalibError> {
    let law = TruncatedLogNormal::from_latent(lat)?;
    let var_max = law.variance();
    let cap = lat.nu_x * lat.nu_x;
    if let Some(&v) = targets.variances.iter().find(|v| **v < 0.0) {
        return Err(CalibError::NegativeVariance(v));
    }
    // theta per horizon, in ascending-horizon order, then forced
    // nondecreasing: raw inversions wiggle with sampling noise (the data's
    // short-period forecast-refresh cycle) while the model needs monotone.
    let raw: Vec<f64> = targets
        .variances
        .iter()
        .map(|&v| invert_phi(lat, v, var_max))
        .collect();
    let monotone = pava_nondecreasing(&raw, None);
    let t_max = *targets.horizons.last().unwrap();
    let mut times: Vec<f64> = targets.horizons.iter().map(|&h| t_max - h).collect();
    times.reverse();
    let mut thetas = monotone;
    thetas.reverse();
    // The observed buckets stop one horizon step short of delivery, where
    // the remaining variance is zero by definition (the production is
    // realized). Carry that terminal knot so the schedule covers the whole
    // contract; the final segment is linear like every other one.
    if *times.last().unwrap() < t_max {
        times.push(t_max);
        thetas.push(0.0);
    }
    Ok(ThetaSchedule::tabulated(times, thetas, t_max, cap)?)
}

/// Parametric schedule `(sigma0, eta, b)` by nonlinear least squares in
/// variance space: minimize `sum_h (phi(theta_param(h)) - v_h)^2` with a
/// multi-start simplex. `tau_star` is fixed to the smallest horizon whose
/// target reaches the unconditional variance (120h when none does).
pub fn fit_theta_parametric(
    lat: &LatentParams,
    targets: &VarianceTargets,
) -> Result<(ThetaSchedule, FitReport), CalibError> {
    if targets.len() < 3 {
        return Err(CalibError::TooFewHorizons {
            need: 3,
            got: targets.len(),
        });
    }
    let law = TruncatedLogNormal::from_latent(lat)?;
    let var_max = law.variance();
    let cap = lat.nu_x * lat.nu_x;
    let tau_star = targets
        .horizons
        .iter()
        .zip(&targets.variances)
        .find(|(_, &v)| v >= var_max - 1e-12)
        .map(|(&h, _)| h)
        .unwrap_or(120.0);

    // phi is an expensive strictly monotone scalar map; tabulate it once on
    // a dense theta grid and interpolate inside the search loop, then score
    // the winner with the exact phi.
    let n_grid = 257;
    let grid: Vec<f64> = (0..n_grid).map(|i| cap * i as f64 / (n_grid - 1) as f64).collect();
    let phis: Vec<f64> = grid.iter().map(|&th| error_variance(lat, th)).collect();
    let phi_interp = |theta: f64| -> f64 {
        let th = theta.clamp(0.0, cap);
        let pos = th / cap * (n_grid - 1) as f64;
        let i = (pos.floor() as usize).min(n_grid - 2);
        let w = pos - i as f64;
        phis[i] * (1.0 - w) + phis[i + 1] * w
    };
    let theta_param = |p: &[f64], h: f64| -> f64 {
        let (s0, eta, b) = (p[0].exp(), p[1], p[2].exp());
        let accrued = if eta == 0.0 {
            s0 * s0 * h
        } else {
            s0 * s0 / (2.0 * eta) * (2.0 * eta * h).exp_m1()
        };
        (b * b + accrued).min(cap)
    };
    let objective_with = |phi_of: &dyn Fn(f64) -> f64, p: &[f64]| -> f64 {
        if !p.iter().all(|v| v.is_finite()) || p[1].abs() > 1.0 {
            return f64::INFINITY;
        }
        targets
            .horizons
            .iter()
            .zip(&targets.variances)
            .map(|(&h, &v)| {
                let d = phi_of(theta_param(p, h)) - v;
                d * d
            })
            .sum()
    };

    // Deterministic starts: invert the targets through phi to theta space,
    // then for a ladder of eta candidates regress theta on the accrual
    // basis to seed (sigma0, b).
    let inv_thetas: Vec<f64> = targets
        .variances
        .iter()
        .map(|&v| invert_phi(lat, v, var_max))
        .collect();
    let h_max = *targets.horizons.last().unwrap();
    let eta_ladder = [
        0.0,
        0.5 / h_max,
        1.0 / h_max,
        2.0 / h_max,
        4.0 / h_max,
        -0.5 / h_max,
        -1.0 / h_max,
        8.0 / h_max,
    ];
    let mut starts = Vec::with_capacity(eta_ladder.len());
    for &eta in &eta_ladder {
        // Least squares theta_h ~ b^2 + sigma0^2 basis(h) over uncapped rows.
        let basis = |h: f64| {
            if eta == 0.0 {
                h
            } else {
                (2.0 * eta * h).exp_m1() / (2.0 * eta)
            }
        };
        let rows: Vec<(f64, f64)> = targets
            .horizons
            .iter()
            .zip(&inv_thetas)
            .filter(|(_, &th)| th < cap - 1e-12)
            .map(|(&h, &th)| (basis(h), th))
            .collect();
        let (mut b2, mut s02) = (inv_thetas[0].max(1e-6), 1e-4);
        if rows.len() >= 2 {
            let n = rows.len() as f64;
            let sx = rows.iter().map(|r| r.0).sum::<f64>() / n;
            let sy = rows.iter().map(|r| r.1).sum::<f64>() / n;
            let sxx = rows.iter().map(|r| (r.0 - sx) * (r.0 - sx)).sum::<f64>();
            let sxy = rows.iter().map(|r| (r.0 - sx) * (r.1 - sy)).sum::<f64>();
            if sxx > 0.0 {
                let slope = (sxy / sxx).max(1e-10);
                s02 = slope;
                b2 = (sy - slope * sx).max(1e-8);
            }
        }
        starts.push(vec![s02.sqrt().ln(), eta, b2.sqrt().ln()]);
    }

    let opts = NmOptions {
        max_iter: 400,
        x_tol: 1e-9,
        f_tol: 1e-16,
        ..Default::default()
    };
    let mut best: Option<(Vec<f64>, f64, usize)> = None;
    let mut evaluations = 0usize;
    for (i, start) in starts.iter().enumerate() {
        let r = nelder_mead_restarted(
            |p| objective_with(&phi_interp, p),
            start,
            &[0.3, 0.3 / h_max, 0.3],
            &opts,
            2,
        );
        evaluations += r.evals;
        if best.as_ref().is_none_or(|b| r.fx < b.1) {
            best = Some((r.x, r.fx, i));
        }
    }
    let (x_search, _, best_start) = best.unwrap();
    // Polish against the exact phi so the report reflects the true objective.
    let exact_phi = |th: f64| error_variance(lat, th);
    let polish = nelder_mead_restarted(
        |p| objective_with(&exact_phi, p),
        &x_search,
        &[1e-3, 1e-4 / h_max, 1e-3],
        &opts,
        1,
    );
    evaluations += polish.evals;
    let (sigma0, eta, b) = (polish.x[0].exp(), polish.x[1], polish.x[2].exp());
    let schedule = ThetaSchedule::parametric(sigma0, eta, b, tau_star, h_max, cap)?;
    Ok((
        schedule,
        FitReport {
            objective: polish.fx,
            evaluations,
            converged: polish.converged,
            best_start,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::simulate_paths;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    fn plant1() -> LatentParams {
        LatentParams::new(0.66020, 0.46129, 3.94322).unwrap()
    }

    const SIGMA0: f64 = 0.040113;
    const ETA: f64 = 0.004423;
    const B: f64 = 0.308817;

    #[test]
    fn empirical_quantile_order_statistics() {
        let s = ProductionSample::new(vec![0.4, 0.2, 0.1, 0.3]).unwrap();
        assert_eq!(s.values(), &[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(s.empirical_quantile(0.5).unwrap(), 0.2);
        assert_eq!(s.empirical_quantile(0.49).unwrap(), 0.1);
        assert_eq!(s.empirical_quantile(1.0).unwrap(), 0.4);
        assert_eq!(s.empirical_quantile(0.75).unwrap(), 0.3);
        // Exact tie k/N = alpha counts (k = 1 at alpha = 0.25).
        assert_eq!(s.empirical_quantile(0.25).unwrap(), 0.1);
        assert!(matches!(
            s.empirical_quantile(0.2),
            Err(CalibError::AlphaBelowRange { .. })
        ));
        assert!(s.empirical_quantile(-0.1).is_err());
        assert!(s.empirical_quantile(1.1).is_err());
    }

    #[test]
    fn sample_validation() {
        assert!(matches!(
            ProductionSample::new(vec![]),
            Err(CalibError::EmptySample)
        ));
        assert!(matches!(
            ProductionSample::new(vec![0.5, 1.2]),
            Err(CalibError::OutOfRange(_))
        ));
        let all_zero = ProductionSample::new(vec![0.0; 50]).unwrap();
        assert!(matches!(
            fit_production(&all_zero, 100, None),
            Err(CalibError::Degenerate(_))
        ));
    }

    #[test]
    fn fit_production_recovers_generator_parameters() {
        // Draw from known laws, fit, and require recovery within +-0.05.
        let truths = [
            TruncatedLogNormal::new(-1.46551, 0.66020, -0.13248).unwrap(),
            TruncatedLogNormal::new(-0.60213, 0.46158, -0.33757).unwrap(),
        ];
        for (i, truth) in truths.iter().enumerate() {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(100 + i as u64);
            let draws: Vec<f64> = (0..100_000).map(|_| truth.sample(&mut rng)).collect();
            let sample = ProductionSample::new(draws).unwrap();
            let (fit, report) = fit_production(&sample, 100, None).unwrap();
            assert!(
                (fit.mu() - truth.mu()).abs() < 0.05
                    && (fit.nu() - truth.nu()).abs() < 0.05
                    && (fit.zeta() - truth.zeta()).abs() < 0.05,
                "law {i}: fit ({}, {}, {}) vs truth ({}, {}, {}), objective {}",
                fit.mu(),
                fit.nu(),
                fit.zeta(),
                truth.mu(),
                truth.nu(),
                truth.zeta(),
                report.objective
            );
            // A fresh sample from the fitted law stays KS-close to it.
            let mut rng2 = rand_chacha::ChaCha8Rng::seed_from_u64(200);
            let mut redraw: Vec<f64> = (0..100_000).map(|_| fit.sample(&mut rng2)).collect();
            redraw.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut ks: f64 = 0.0;
            for j in 0..=500 {
                let y = j as f64 / 500.0;
                let emp = redraw.partition_point(|&v| v <= y) as f64 / redraw.len() as f64;
                ks = ks.max((emp - fit.cdf(y)).abs());
            }
            assert!(ks < 0.01, "law {i}: KS {ks}");
        }
    }

    #[test]
    fn fit_production_accepts_caller_init() {
        let truth = TruncatedLogNormal::new(-0.76199, 0.48778, -0.26449).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let draws: Vec<f64> = (0..20_000).map(|_| truth.sample(&mut rng)).collect();
        let sample = ProductionSample::new(draws).unwrap();
        let (fit, _) = fit_production(&sample, 100, Some(truth)).unwrap();
        assert!((fit.mu() - truth.mu()).abs() < 0.05);
    }

    #[test]
    fn variance_bucketing_two_point_example() {
        let records = [
            ForecastObs { forecast: 0.5, realized: 0.7, horizon: 6.0 },
            ForecastObs { forecast: 0.5, realized: 0.3, horizon: 6.1 },
        ];
        let (t, warnings) = error_variances_from_data(&records, 0.25, 2).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(t.len(), 1);
        assert_abs_diff_eq!(t.horizons[0], 6.0, epsilon = 0.13);
        assert_abs_diff_eq!(t.variances[0], 0.08, epsilon = 1e-12);
        assert_eq!(t.counts[0], 2);
    }

    #[test]
    fn variance_bucketing_drops_thin_buckets_with_warning() {
        let mut records = vec![];
        for i in 0..40 {
            records.push(ForecastObs {
                forecast: 0.5 + 0.01 * (i % 5) as f64,
                realized: 0.5,
                horizon: 12.0,
            });
        }
        records.push(ForecastObs { forecast: 0.9, realized: 0.1, horizon: 48.0 });
        let (t, warnings) = error_variances_from_data(&records, 0.25, 30).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("48.00h"));
        // Exact forecasts give zero variance.
        let exact = [
            ForecastObs { forecast: 0.4, realized: 0.4, horizon: 1.0 },
            ForecastObs { forecast: 0.6, realized: 0.6, horizon: 1.0 },
        ];
        let (t0, _) = error_variances_from_data(&exact, 0.25, 2).unwrap();
        assert_eq!(t0.variances[0], 0.0);
        assert!(matches!(
            error_variances_from_data(&exact, 0.25, 5),
            Err(CalibError::AllBucketsEmpty { .. })
        ));
    }

    #[test]
    fn nonparametric_inversion_endpoints() {
        let lat = plant1();
        let law = TruncatedLogNormal::from_latent(&lat).unwrap();
        let cap = lat.nu_x * lat.nu_x;
        let targets =
            VarianceTargets::new(vec![1.0, 2.0, 3.0], vec![0.0, law.variance() / 2.0, law.variance()])
                .unwrap();
        let s = fit_theta_nonparametric(&lat, &targets).unwrap();
        // Horizon 1 (t = 2) -> theta 0; horizon 3 (t = 0) -> cap.
        assert_abs_diff_eq!(s.theta_at(2.0).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.theta_at(0.0).unwrap(), cap, epsilon = 1e-12);
        let mid = s.theta_at(1.0).unwrap();
        assert_abs_diff_eq!(error_variance(&lat, mid), law.variance() / 2.0, epsilon = 1e-9);
    }

    #[test]
    fn nonparametric_round_trip_matches_generator() {
        let lat = plant1();
        let cap = lat.nu_x * lat.nu_x;
        let generator = ThetaSchedule::parametric(SIGMA0, ETA, B, 120.0, 144.0, cap).unwrap();
        let horizons: Vec<f64> = (1..=24).map(|i| 6.0 * i as f64).collect();
        let variances: Vec<f64> = horizons
            .iter()
            .map(|&h| error_variance(&lat, generator.theta_at(144.0 - h).unwrap()))
            .collect();
        let targets = VarianceTargets::new(horizons.clone(), variances).unwrap();
        let fitted = fit_theta_nonparametric(&lat, &targets).unwrap();
        for &h in &horizons {
            let got = fitted.theta_at(144.0 - h).unwrap();
            let want = generator.theta_at(144.0 - h).unwrap();
            assert!(
                (got - want).abs() < 1e-6,
                "horizon {h}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn nonparametric_monotonizes_noisy_targets() {
        let lat = plant1();
        let law = TruncatedLogNormal::from_latent(&lat).unwrap();
        let v = law.variance();
        // 6-hourly sawtooth noise on an increasing profile.
        let horizons: Vec<f64> = (1..=10).map(|i| 6.0 * i as f64).collect();
        let variances: Vec<f64> = (1..=10)
            .map(|i| (v * i as f64 / 12.0) * (1.0 + if i % 2 == 0 { 0.3 } else { -0.3 }))
            .collect();
        let targets = VarianceTargets::new(horizons, variances).unwrap();
        let s = fit_theta_nonparametric(&lat, &targets).unwrap();
        let (times, thetas) = s.knots().unwrap();
        assert!(times.windows(2).all(|w| w[0] < w[1]));
        assert!(thetas.windows(2).all(|w| w[0] >= w[1] - 1e-12));
    }

    #[test]
    fn parametric_fit_recovers_generator_within_ten_percent() {
        let lat = plant1();
        let cap = lat.nu_x * lat.nu_x;
        let generator = ThetaSchedule::parametric(SIGMA0, ETA, B, 120.0, 144.0, cap).unwrap();
        let horizons: Vec<f64> = (1..=48).map(|i| 3.0 * i as f64).collect();
        let variances: Vec<f64> = horizons
            .iter()
            .map(|&h| error_variance(&lat, generator.theta_at(144.0 - h).unwrap()))
            .collect();
        let targets = VarianceTargets::new(horizons, variances).unwrap();
        let (fitted, report) = fit_theta_parametric(&lat, &targets).unwrap();
        let (s0, eta, b, tau) = fitted.parametric_values().unwrap();
        assert!((s0 - SIGMA0).abs() < 0.1 * SIGMA0, "sigma0 {s0} vs {SIGMA0}");
        assert!((eta - ETA).abs() < 0.1 * ETA, "eta {eta} vs {ETA}");
        assert!((b - B).abs() < 0.1 * B, "b {b} vs {B}");
        assert_abs_diff_eq!(tau, 120.0, epsilon = 3.0);
        // No spurious local trap: the optimum scores at least as well as
        // the generator itself.
        let truth_obj: f64 = targets
            .horizons
            .iter()
            .zip(&targets.variances)
            .map(|(&h, &v)| {
                let d = error_variance(&lat, generator.theta_at(144.0 - h).unwrap()) - v;
                d * d
            })
            .sum();
        assert!(report.objective <= truth_obj + 1e-12);
    }

    #[test]
    fn parametric_fit_degenerate_jump_only_world() {
        let lat = plant1();
        let cap = lat.nu_x * lat.nu_x;
        let b_true = 0.3f64;
        let flat = error_variance(&lat, b_true * b_true);
        let horizons: Vec<f64> = (1..=12).map(|i| 6.0 * i as f64).collect();
        let variances = vec![flat; horizons.len()];
        let targets = VarianceTargets::new(horizons, variances).unwrap();
        let (fitted, _) = fit_theta_parametric(&lat, &targets).unwrap();
        let (_s0, _, b, _) = fitted.parametric_values().unwrap();
        assert!((b - b_true).abs() < 0.01 * b_true, "b {b}");
        // sigma0's accrued variance over the whole range is negligible
        // against b^2.
        let accrued = fitted.theta_at(0.0).unwrap() - fitted.theta_at(72.0 - 1e-9).unwrap_or(b * b);
        assert!(accrued.abs() < 0.01 * b_true * b_true, "accrued {accrued}");
        let _ = cap;
    }

    #[test]
    fn parametric_fit_needs_three_horizons() {
        let lat = plant1();
        let targets = VarianceTargets::new(vec![1.0, 2.0], vec![0.01, 0.02]).unwrap();
        assert!(matches!(
            fit_theta_parametric(&lat, &targets),
            Err(CalibError::TooFewHorizons { .. })
        ));
    }

    #[test]
    fn simulated_paths_round_trip_through_bucketing() {
        // simulate -> collect (forecast, realized, horizon) -> bucket ->
        // the bucket variances match phi(theta) within 3 standard errors.
        let lat = plant1();
        let cap = lat.nu_x * lat.nu_x;
        let t_end = 144.0;
        let schedule = ThetaSchedule::parametric(SIGMA0, ETA, B, 120.0, t_end, cap).unwrap();
        let grid: Vec<f64> = (0..=6).map(|i| t_end * i as f64 / 6.0).collect();
        let n = 20_000usize;
        let paths = simulate_paths(&lat, &schedule, &grid, n, 31).unwrap();
        let mut records = Vec::new();
        for p in &paths {
            let f_t = p.f_values[3];
            records.push(ForecastObs {
                forecast: f_t,
                realized: p.realized(),
                horizon: t_end - p.times[3],
            });
        }
        let (targets, _) = error_variances_from_data(&records, 1.0, 30).unwrap();
        assert_eq!(targets.len(), 1);
        let theta = schedule.theta_at(grid[3]).unwrap();
        let want = error_variance(&lat, theta);
        // Standard error of a sample variance ~ var * sqrt(2/(n-1)) for
        // roughly normal errors; inflate by 2 for the fat-tailed mixture.
        let se = want * (2.0 / (n as f64 - 1.0)).sqrt() * 2.0;
        assert!(
            (targets.variances[0] - want).abs() < 3.0 * se,
            "{} vs {want}",
            targets.variances[0]
        );
    }
}
