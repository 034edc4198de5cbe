//! Experiment orchestration: simulate forecast paths, run a named strategy
//! along each, and reduce the realized penalties to summary statistics and
//! paired policy comparisons under common random numbers.

use rayon::prelude::*;
use thiserror::Error;

use crate::forecast::simulate_paths;
use crate::num::sum::pairwise_sum;
use crate::policy::{Instance, PolicyRegistry};

#[derive(Debug, Error)]
pub enum McError {
    #[error("invalid experiment: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Policy(#[from] crate::policy::PolicyError),
    #[error(transparent)]
    Forecast(#[from] crate::forecast::ForecastError),
}

/// One batch experiment: a problem instance, a registered strategy name,
/// and the simulation size and seed.
#[derive(Clone)]
pub struct ExperimentSpec {
    pub instance: Instance,
    pub policy: String,
    pub n_paths: usize,
    pub seed: u64,
}

/// What one strategy did on one simulated path; the three penalty
/// components sum to the realized penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathRecord {
    pub path_index: usize,
    pub f_terminal: f64,
    pub phi_terminal: f64,
    pub drift_loss: f64,
    pub impact_cost: f64,
    pub volume_penalty: f64,
}

impl PathRecord {
    pub fn total(&self) -> f64 {
        self.drift_loss + self.impact_cost + self.volume_penalty
    }
}

/// Distribution summary of the realized penalty across paths.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltySummary {
    pub n_paths: usize,
    pub mean: f64,
    pub std_error: f64,
    pub median: f64,
    pub q05: f64,
    pub q25: f64,
    pub q75: f64,
    pub q95: f64,
    /// 51 uniform bin edges over [min, max].
    pub hist_edges: Vec<f64>,
    /// 50 counts, summing to `n_paths`.
    pub hist_counts: Vec<usize>,
}

const HIST_BINS: usize = 50;

/// Linear-interpolation quantile on a sorted sample (the common `h =
/// (n - 1) p` convention, so min and max are the 0 and 1 quantiles).
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = (h.floor() as usize).min(n - 2);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

impl PenaltySummary {
    pub fn from_totals(totals: &[f64]) -> Self {
        let n = totals.len();
        assert!(n >= 1, "summary needs at least one path");
        let mean = pairwise_sum(totals) / n as f64;
        let sq: Vec<f64> = totals.iter().map(|x| (x - mean) * (x - mean)).collect();
        let std_error = if n > 1 {
            (pairwise_sum(&sq) / (n - 1) as f64 / n as f64).sqrt()
        } else {
            0.0
        };
        let mut sorted = totals.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (lo, hi) = (sorted[0], sorted[n - 1]);
        // Degenerate spread still gets well-formed edges.
        let span = if hi > lo { hi - lo } else { 1.0 };
        let hist_edges: Vec<f64> = (0..=HIST_BINS)
            .map(|k| lo + span * k as f64 / HIST_BINS as f64)
            .collect();
        let mut hist_counts = vec![0usize; HIST_BINS];
        for &x in totals {
            let bin = (((x - lo) / span * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
            hist_counts[bin] += 1;
        }
        Self {
            n_paths: n,
            mean,
            std_error,
            median: quantile_sorted(&sorted, 0.5),
            q05: quantile_sorted(&sorted, 0.05),
            q25: quantile_sorted(&sorted, 0.25),
            q75: quantile_sorted(&sorted, 0.75),
            q95: quantile_sorted(&sorted, 0.95),
            hist_edges,
            hist_counts,
        }
    }
}

/// Full output of [`run_experiment`]: the reduction plus every per-path
/// record it was computed from.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub policy: String,
    pub summary: PenaltySummary,
    pub records: Vec<PathRecord>,
    /// Paths whose position hit the top of a solved grid; nonzero values
    /// suggest enlarging the position range.
    pub position_cap_hits: usize,
}

impl ExperimentResult {
    /// Per-path records as CSV, one row per path in path order.
    pub fn records_csv(&self) -> String {
        let mut out = String::from(
            "path_index,f_terminal,phi_terminal,drift_loss,impact_cost,volume_penalty,total\n",
        );
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.path_index,
                r.f_terminal,
                r.phi_terminal,
                r.drift_loss,
                r.impact_cost,
                r.volume_penalty,
                r.total()
            ));
        }
        out
    }

    /// Structured text summary, one `key: value` per line.
    pub fn summary_text(&self) -> String {
        let s = &self.summary;
        let mut out = String::new();
        out.push_str(&format!("policy: {}\n", self.policy));
        out.push_str(&format!("paths: {}\n", s.n_paths));
        out.push_str(&format!("mean: {}\n", s.mean));
        out.push_str(&format!("std_error: {}\n", s.std_error));
        out.push_str(&format!("median: {}\n", s.median));
        out.push_str(&format!("q05: {}\n", s.q05));
        out.push_str(&format!("q25: {}\n", s.q25));
        out.push_str(&format!("q75: {}\n", s.q75));
        out.push_str(&format!("q95: {}\n", s.q95));
        out.push_str(&format!("position_cap_hits: {}\n", self.position_cap_hits));
        out.push_str(&format!(
            "histogram: {} bins over [{}, {}]\n",
            s.hist_counts.len(),
            s.hist_edges[0],
            s.hist_edges[s.hist_edges.len() - 1]
        ));
        for (k, &c) in s.hist_counts.iter().enumerate() {
            out.push_str(&format!(
                "bin {}: [{}, {}) {}\n",
                k,
                s.hist_edges[k],
                s.hist_edges[k + 1],
                c
            ));
        }
        out
    }
}

/// Simulate `n_paths` forecast paths on the instance grid and run the named
/// strategy along each. Deterministic given the seed: path `i` always draws
/// from the same substream, so results are stable under any thread count
/// and adding policies never perturbs existing draws.
pub fn run_experiment(
    spec: &ExperimentSpec,
    registry: &PolicyRegistry,
) -> Result<ExperimentResult, McError> {
    if spec.n_paths == 0 {
        return Err(McError::BadSpec("n_paths must be at least 1".into()));
    }
    let policy = registry.build(&spec.policy, &spec.instance)?;
    let paths = simulate_paths(
        &spec.instance.lat,
        &spec.instance.schedule,
        &spec.instance.grid,
        spec.n_paths,
        spec.seed,
    )?;
    let outcomes: Result<Vec<_>, _> = paths
        .par_iter()
        .map(|path| policy.run(path))
        .collect::<Result<Vec<_>, _>>();
    let outcomes = outcomes?;
    let records: Vec<PathRecord> = outcomes
        .iter()
        .zip(&paths)
        .enumerate()
        .map(|(i, (o, path))| PathRecord {
            path_index: i,
            f_terminal: path.realized(),
            phi_terminal: o.final_position,
            drift_loss: o.cost.drift,
            impact_cost: o.cost.impact,
            volume_penalty: o.cost.volume,
        })
        .collect();
    let totals: Vec<f64> = records.iter().map(|r| r.total()).collect();
    Ok(ExperimentResult {
        policy: spec.policy.clone(),
        summary: PenaltySummary::from_totals(&totals),
        records,
        position_cap_hits: outcomes.iter().filter(|o| o.hit_position_cap).count(),
    })
}

/// One strategy's column in a comparison.
#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub index: usize,
    pub policy: String,
    pub mean: f64,
    pub std_error: f64,
}

/// Mean penalty difference between two compared specs, with the standard
/// error of the paired per-path differences.
#[derive(Debug, Clone)]
pub struct PairedDiff {
    pub a: usize,
    pub b: usize,
    pub mean_diff: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub pairs: Vec<PairedDiff>,
}

impl Comparison {
    /// Human-readable table: per-spec means, then pairwise differences.
    pub fn table_text(&self) -> String {
        let mut out = String::from("index  policy  mean  std_error\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}  {}  {}  {}\n",
                r.index, r.policy, r.mean, r.std_error
            ));
        }
        out.push_str("pair  mean_diff  paired_std_error\n");
        for p in &self.pairs {
            out.push_str(&format!(
                "{}-{}  {}  {}\n",
                p.a, p.b, p.mean_diff, p.std_error
            ));
        }
        out
    }
}

/// Run every spec with the same seed (common random numbers: path `i` sees
/// identical latent draws in every spec) and report paired differences for
/// each spec pair. Specs must share the horizon and the path count so the
/// pairing is meaningful.
pub fn compare(
    specs: &[ExperimentSpec],
    registry: &PolicyRegistry,
    common_seed: u64,
) -> Result<(Comparison, Vec<ExperimentResult>), McError> {
    if specs.is_empty() {
        return Err(McError::BadSpec("need at least one spec".into()));
    }
    let horizon = specs[0].instance.horizon();
    let n_paths = specs[0].n_paths;
    for (i, s) in specs.iter().enumerate() {
        if (s.instance.horizon() - horizon).abs() > 1e-9 {
            return Err(McError::BadSpec(format!(
                "spec {i} horizon {} != spec 0 horizon {horizon}",
                s.instance.horizon()
            )));
        }
        if s.n_paths != n_paths {
            return Err(McError::BadSpec(format!(
                "spec {i} has {} paths, spec 0 has {n_paths}; pairing needs equal counts",
                s.n_paths
            )));
        }
    }
    let results: Vec<ExperimentResult> = specs
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.seed = common_seed;
            run_experiment(&s, registry)
        })
        .collect::<Result<_, _>>()?;
    let rows: Vec<ComparisonRow> = results
        .iter()
        .enumerate()
        .map(|(i, r)| ComparisonRow {
            index: i,
            policy: r.policy.clone(),
            mean: r.summary.mean,
            std_error: r.summary.std_error,
        })
        .collect();
    let mut pairs = Vec::new();
    for a in 0..results.len() {
        for b in a + 1..results.len() {
            let diffs: Vec<f64> = results[a]
                .records
                .iter()
                .zip(&results[b].records)
                .map(|(x, y)| x.total() - y.total())
                .collect();
            let mean_diff = pairwise_sum(&diffs) / n_paths as f64;
            let sq: Vec<f64> = diffs
                .iter()
                .map(|d| (d - mean_diff) * (d - mean_diff))
                .collect();
            let std_error = if n_paths > 1 {
                (pairwise_sum(&sq) / (n_paths - 1) as f64 / n_paths as f64).sqrt()
            } else {
                0.0
            };
            pairs.push(PairedDiff {
                a,
                b,
                mean_diff,
                std_error,
            });
        }
    }
    Ok((Comparison { rows, pairs }, results))
}
