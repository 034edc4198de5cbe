//! End-to-end tests that drive the compiled binary: calibration round trips
//! on synthetic CSV data, artifact formats, exit codes, and determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::rngs::StdRng;
use rand::SeedableRng;
use windtrade::dist::{LatentParams, ProductionLaw, TruncatedLogNormal};
use windtrade::forecast::{simulate_paths, ThetaSchedule};

const RATED_KW: f64 = 2000.0;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_windtrade"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "expected exit {code}\nstdout: {}\nstderr: {}",
        stdout_of(out),
        stderr_of(out)
    );
}

fn write_file(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

/// Hourly timestamps starting 2020-01-01, RFC 3339 with a Z suffix.
fn timestamp(hours: i64) -> String {
    let base = chrono::DateTime::parse_from_rfc3339("2020-01-01T00:00:00Z").unwrap();
    (base + chrono::Duration::hours(hours))
        .to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn plant() -> LatentParams {
    LatentParams::new(0.66020, 0.46129, 3.94322).unwrap()
}

fn production_csv(lat: &LatentParams, n: usize, seed: u64) -> String {
    let law = TruncatedLogNormal::from_latent(lat).unwrap();
    let mut rng = StdRng::seed_from_u64(seed);
    let mut text = String::from("timestamp,power\n");
    for i in 0..n {
        let f = law.sample(&mut rng);
        text.push_str(&format!("{},{}\n", timestamp(i as i64), f * RATED_KW));
    }
    text
}

fn toml_f64(table: &toml::Table, section: &str, key: &str) -> f64 {
    table[section][key]
        .as_float()
        .unwrap_or_else(|| panic!("{section}.{key} is a float"))
}

#[test]
fn fit_production_recovers_synthetic_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let lat = plant();
    let data = write_file(dir.path(), "prod.csv", &production_csv(&lat, 50_000, 41));
    let out = dir.path().join("params.toml");

    let res = run(&[
        "fit-production",
        "--data",
        data.to_str().unwrap(),
        "--rated-power-kw",
        "2000",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_exit(&res, 0);

    let table: toml::Table = std::fs::read_to_string(&out).unwrap().parse().unwrap();
    let nu_x = toml_f64(&table, "production", "nu_x");
    let x_min = toml_f64(&table, "production", "x_min");
    let x_max = toml_f64(&table, "production", "x_max");
    assert!((nu_x - lat.nu_x).abs() < 0.05, "nu_x = {nu_x}");
    assert!((x_min - lat.x_min).abs() < 0.05, "x_min = {x_min}");
    assert!((x_max - lat.x_max).abs() < 0.05, "x_max = {x_max}");
    assert_eq!(table["production"]["rows_used"].as_integer(), Some(50_000));
}

#[test]
fn fit_production_rejects_empty_and_degenerate_data() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write_file(dir.path(), "empty.csv", "timestamp,power\n");
    let out = dir.path().join("params.toml");
    let res = run(&[
        "fit-production",
        "--data",
        empty.to_str().unwrap(),
        "--rated-power-kw",
        "2000",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_exit(&res, 2);

    let mut zeros = String::from("timestamp,power\n");
    for i in 0..500 {
        zeros.push_str(&format!("{},0.0\n", timestamp(i)));
    }
    let flat = write_file(dir.path(), "flat.csv", &zeros);
    let res = run(&[
        "fit-production",
        "--data",
        flat.to_str().unwrap(),
        "--rated-power-kw",
        "2000",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_exit(&res, 3);
    assert!(
        stderr_of(&res).contains("degenerate sample"),
        "stderr: {}",
        stderr_of(&res)
    );
}

#[test]
fn naive_timestamps_are_rejected_with_the_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_file(
        dir.path(),
        "prod.csv",
        "timestamp,power\n2020-01-01T00:00:00Z,5.0\n2020-01-01T01:00:00,6.0\n",
    );
    let out = dir.path().join("params.toml");
    let res = run(&[
        "fit-production",
        "--data",
        data.to_str().unwrap(),
        "--rated-power-kw",
        "2000",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_exit(&res, 2);
    let err = stderr_of(&res);
    assert!(err.contains(":3:"), "line number missing: {err}");
    assert!(err.contains("RFC 3339"), "format hint missing: {err}");
}

#[test]
fn fit_theta_recovers_the_variance_intensity() {
    let dir = tempfile::tempdir().unwrap();
    let lat = plant();
    let (sigma0, eta, b, tau_star) = (0.040113, 0.004423, 0.308817, 120.0);
    let horizon = 144.0;
    let schedule =
        ThetaSchedule::parametric(sigma0, eta, b, tau_star, horizon, lat.nu_x * lat.nu_x).unwrap();
    let grid: Vec<f64> = (0..=24).map(|k| 6.0 * k as f64).collect();
    let n_events = 4000;
    let paths = simulate_paths(&lat, &schedule, &grid, n_events, 99).unwrap();

    // One delivery event per path: forecasts issued every 6 h up to the
    // target, production recorded at the target only.
    let mut forecasts = String::from("issue_time,target_time,forecast\n");
    let mut production = String::from("timestamp,power\n");
    for (i, path) in paths.iter().enumerate() {
        let base = 200 * i as i64;
        let target = timestamp(base + 144);
        for (k, t) in path.times.iter().enumerate().take(path.times.len() - 1) {
            forecasts.push_str(&format!(
                "{},{},{}\n",
                timestamp(base + *t as i64),
                target,
                path.f_values[k] * RATED_KW
            ));
        }
        production.push_str(&format!("{},{}\n", target, path.realized() * RATED_KW));
    }
    let fc = write_file(dir.path(), "forecasts.csv", &forecasts);
    let pr = write_file(dir.path(), "production.csv", &production);
    let pp = write_file(
        dir.path(),
        "params.toml",
        &format!(
            "[production]\nnu_x = {}\nx_min = {}\nx_max = {}\n",
            lat.nu_x, lat.x_min, lat.x_max
        ),
    );
    let out = dir.path().join("theta.toml");

    let res = run(&[
        "fit-theta",
        "--forecasts",
        fc.to_str().unwrap(),
        "--production",
        pr.to_str().unwrap(),
        "--production-params",
        pp.to_str().unwrap(),
        "--rated-power-kw",
        "2000",
        "--mode",
        "parametric",
        "--bucket-hours",
        "6",
        "--min-per-bucket",
        "50",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_exit(&res, 0);

    let table: toml::Table = std::fs::read_to_string(&out).unwrap().parse().unwrap();
    assert_eq!(table["theta"]["mode"].as_str(), Some("parametric"));
    let got_sigma0 = toml_f64(&table, "theta", "sigma0");
    let got_eta = toml_f64(&table, "theta", "eta");
    let got_b = toml_f64(&table, "theta", "b");
    assert!(
        (got_sigma0 - sigma0).abs() < 0.1 * sigma0,
        "sigma0 = {got_sigma0}"
    );
    assert!((got_eta - eta).abs() < 0.1 * eta, "eta = {got_eta}");
    assert!((got_b - b).abs() < 0.1 * b, "b = {got_b}");

    // The nonparametric mode on the same data writes a pasteable tabulated
    // section with one knot per horizon bucket.
    let out_np = dir.path().join("theta_np.toml");
    let res = run(&[
        "fit-theta",
        "--forecasts",
        fc.to_str().unwrap(),
        "--production",
        pr.to_str().unwrap(),
        "--production-params",
        pp.to_str().unwrap(),
        "--rated-power-kw",
        "2000",
        "--mode",
        "nonparametric",
        "--bucket-hours",
        "6",
        "--min-per-bucket",
        "50",
        "--out",
        out_np.to_str().unwrap(),
    ]);
    assert_exit(&res, 0);
    let table: toml::Table = std::fs::read_to_string(&out_np).unwrap().parse().unwrap();
    assert_eq!(table["theta"]["mode"].as_str(), Some("tabulated"));
    let times = table["theta"]["times_hours"].as_array().unwrap();
    let values = table["theta"]["values"].as_array().unwrap();
    assert_eq!(times.len(), values.len());
    assert!(times.len() >= 24, "{} knots", times.len());
    // Tabulated values must decrease toward delivery and stay under the cap.
    let vals: Vec<f64> = values.iter().map(|v| v.as_float().unwrap()).collect();
    assert!(vals.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    assert!(vals[0] <= lat.nu_x * lat.nu_x + 1e-12);
}

fn impact_config() -> String {
    "[model]\n\
     nu_x = 0.6\n\
     x_min = 0.46129\n\
     x_max = 3.94322\n\n\
     [theta]\n\
     mode = \"tabulated\"\n\
     times_hours = [0.0, 6.0]\n\
     values = [0.36, 0.0]\n\n\
     [market]\n\
     horizon_hours = 6.0\n\
     rated_power_kw = 2000.0\n\
     reference_energy_mwh = 1.0\n\
     penalty_p_eur_per_mwh2 = 5.0\n\
     gamma_eur_per_mwh2_h = 5.0\n\
     mu_eur_per_mwh_h = -0.05\n"
        .into()
}

#[test]
fn solve_hjb_writes_tensors_with_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_file(
        dir.path(),
        "config.toml",
        &format!(
            "{}\n[grids]\nn_t = 9\nn_phi = 11\nn_y = 21\n",
            impact_config()
        ),
    );
    let w_path = dir.path().join("w.bin");
    let psi_path = dir.path().join("psi.bin");
    let res = run(&[
        "solve",
        "--config",
        config.to_str().unwrap(),
        "--policy",
        "hjb",
        "--out-grid",
        w_path.to_str().unwrap(),
        "--out-policy",
        psi_path.to_str().unwrap(),
    ]);
    assert_exit(&res, 0);

    for path in [&w_path, &psi_path] {
        let bytes = std::fs::read(path).unwrap();
        assert_eq!(&bytes[..8], b"WTGRID01");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        let dims: Vec<u64> = (0..3)
            .map(|k| u64::from_le_bytes(bytes[12 + 8 * k..20 + 8 * k].try_into().unwrap()))
            .collect();
        assert_eq!(dims, vec![9, 11, 21]);
        assert_eq!(bytes.len(), 8 + 4 + 24 + 8 * 9 * 11 * 21);
        let manifest =
            std::fs::read_to_string(path.with_extension("bin.manifest.txt")).unwrap();
        assert!(manifest.contains("axis t_hours"), "{manifest}");
        assert!(manifest.contains("axis phi"), "{manifest}");
        assert!(manifest.contains("axis y"), "{manifest}");
    }

    // Rates are nonnegative everywhere.
    let bytes = std::fs::read(&psi_path).unwrap();
    let body = &bytes[36..];
    assert!(body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .all(|v| v >= 0.0));
}

#[test]
fn infeasible_time_stepping_exits_with_its_own_code() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_file(
        dir.path(),
        "config.toml",
        &format!(
            "{}\n[grids]\nn_t = 9\nn_phi = 11\nn_y = 21\nmax_substeps = 1\n",
            impact_config()
        ),
    );
    let res = run(&[
        "solve",
        "--config",
        config.to_str().unwrap(),
        "--policy",
        "hjb",
        "--out-policy",
        dir.path().join("psi.bin").to_str().unwrap(),
    ]);
    assert_exit(&res, 4);
    assert!(stderr_of(&res).contains("substeps"), "{}", stderr_of(&res));
}

fn frictionless_config() -> String {
    "[model]\n\
     nu_x = 0.6\n\
     x_min = 0.46129\n\
     x_max = 3.94322\n\n\
     [theta]\n\
     mode = \"tabulated\"\n\
     times_hours = [0.0, 6.0]\n\
     values = [0.36, 0.0]\n\n\
     [market]\n\
     horizon_hours = 6.0\n\
     rated_power_kw = 2000.0\n\
     reference_energy_mwh = 1.0\n\
     penalty_p_eur_per_mwh2 = 5.0\n\
     mu_eur_per_mwh_h = -0.05\n\n\
     [grids]\n\
     n_updates = 4\n\
     n_x = 61\n\
     n_m = 61\n\
     gh_nodes = 32\n\n\
     [simulate]\n\
     n_paths = 4000\n\
     seed = 7\n"
        .into()
}

fn summary_value(stdout: &str, key: &str) -> f64 {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}: ")))
        .unwrap_or_else(|| panic!("missing {key} in:\n{stdout}"))
        .parse()
        .unwrap()
}

#[test]
fn simulated_never_trade_mean_matches_the_analytic_expectation() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_file(dir.path(), "config.toml", &frictionless_config());
    let out = dir.path().join("records.csv");
    let res = run(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--policy",
        "never_trade",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_exit(&res, 0);

    let stdout = stdout_of(&res);
    let mean = summary_value(&stdout, "mean");
    let se = summary_value(&stdout, "std_error");
    // kappa = 2 * penalty_p * reference_energy^2 = 10, so u(f) = 5 f^2.
    let lat = LatentParams::new(0.6, 0.46129, 3.94322).unwrap();
    let law = TruncatedLogNormal::from_latent(&lat).unwrap();
    let expected = law.expectation(&|f| 5.0 * f * f);
    assert!(
        (mean - expected).abs() < 4.0 * se,
        "mean {mean} vs analytic {expected} (se {se})"
    );

    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with(
        "path_index,f_terminal,phi_terminal,drift_loss,impact_cost,volume_penalty,total\n"
    ));
    assert_eq!(csv.lines().count(), 4001);
}

#[test]
fn repeated_runs_with_one_seed_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_file(dir.path(), "config.toml", &frictionless_config());
    let out1 = dir.path().join("a.csv");
    let out2 = dir.path().join("b.csv");
    let mut outputs = Vec::new();
    for out in [&out1, &out2] {
        let res = run(&[
            "simulate",
            "--config",
            config.to_str().unwrap(),
            "--policy",
            "thresholds",
            "--n-paths",
            "200",
            "--seed",
            "12345",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_exit(&res, 0);
        // Drop the one line naming the output file; the runs write to
        // different paths on purpose.
        let summary: String = stdout_of(&res)
            .lines()
            .filter(|l| !l.starts_with("wrote "))
            .collect();
        outputs.push(summary);
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(
        std::fs::read(&out1).unwrap(),
        std::fs::read(&out2).unwrap()
    );
}

#[test]
fn usage_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_file(dir.path(), "config.toml", &frictionless_config());
    let out = dir.path().join("x.csv");

    // Unknown policy names list the registered ones.
    let res = run(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--policy",
        "oracle",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_exit(&res, 2);
    assert!(stderr_of(&res).contains("thresholds"), "{}", stderr_of(&res));

    // Impact-only strategies on a frictionless config are a config error.
    let res = run(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--policy",
        "hjb",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_exit(&res, 2);

    // Path-dependent strategies have no offline artifact.
    let res = run(&[
        "solve",
        "--config",
        config.to_str().unwrap(),
        "--policy",
        "buy_sell",
        "--out-policy",
        out.to_str().unwrap(),
    ]);
    assert_exit(&res, 2);
    assert!(stderr_of(&res).contains("simulate"), "{}", stderr_of(&res));

    // Unknown config keys are rejected, pointing at the stray key.
    let bad = write_file(
        dir.path(),
        "bad.toml",
        &format!("{}gamma = 5.0\n", frictionless_config()),
    );
    let res = run(&[
        "simulate",
        "--config",
        bad.to_str().unwrap(),
        "--policy",
        "never_trade",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_exit(&res, 2);
}

#[test]
fn solve_writes_threshold_tables_and_plans() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_file(dir.path(), "config.toml", &frictionless_config());

    let tables = dir.path().join("xi.txt");
    let res = run(&[
        "solve",
        "--config",
        config.to_str().unwrap(),
        "--policy",
        "thresholds",
        "--out-policy",
        tables.to_str().unwrap(),
    ]);
    assert_exit(&res, 0);
    let text = std::fs::read_to_string(&tables).unwrap();
    assert!(text.contains("update_times_hours:"), "{text}");
    assert!(text.contains("stage 3 xi:"), "{text}");
    assert!(!text.contains("stage 4"), "{text}");

    // The exact plan needs the realized production.
    let plan = dir.path().join("plan.txt");
    let res = run(&[
        "solve",
        "--config",
        config.to_str().unwrap(),
        "--policy",
        "exact",
        "--out-policy",
        plan.to_str().unwrap(),
    ]);
    assert_exit(&res, 2);
    let res = run(&[
        "solve",
        "--config",
        config.to_str().unwrap(),
        "--policy",
        "exact",
        "--f-terminal",
        "0.4",
        "--out-policy",
        plan.to_str().unwrap(),
    ]);
    assert_exit(&res, 0);
    let text = std::fs::read_to_string(&plan).unwrap();
    assert!(text.contains("value:"), "{text}");
    assert!(text.contains("final_position: 0.4"), "{text}");
}
