use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mgfactor::io::{read_curves, read_dataset, read_loadings, read_table};
use mgfactor::simulate::{generate_replicate, generate_truth, ScenarioConfig};

const SMALL: &str = r#"
seed = 3
[scenario]
preset = "A-322-n40-40"
t = 20
r = 10
replicates = 2
[sampler]
iterations = 160
burn_in = 40
l_max = 4
k_max = 3
"#;

fn mgfactor(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mgfactor"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = mgfactor(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

#[test]
fn simulate_writes_scenario_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "a.toml", "[scenario]\npreset = \"A-322-n40-80\"\n");
    ok(d, &["simulate", "--config", "a.toml", "--out", "sim"]);
    let (header, rows) = read_table(&d.join("sim/dataset_r1.csv")).unwrap();
    assert_eq!(header.len(), 62);
    assert_eq!(&header[..3], ["subject_id", "group_id", "t_1"]);
    assert_eq!(rows.len(), 120);
    assert!(!d.join("sim/dataset_r2.csv").exists());
    for name in ["grid.csv", "truth_curves.csv", "truth_loadings_shared.csv", "truth_loadings_g2.csv", "manifest.json"] {
        assert!(d.join("sim").join(name).exists(), "{name}");
    }
    assert_eq!(read_loadings(&d.join("sim/truth_loadings_shared.csv"), 60).unwrap().ncols(), 3);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("sim/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["config_digest"].as_str().unwrap().len(), 64);
}

#[test]
fn simulate_is_reproducible_and_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "run.toml", SMALL);
    ok(d, &["simulate", "--config", "run.toml", "--out", "a"]);
    ok(d, &["simulate", "--config", "run.toml", "--out", "b"]);
    ok(d, &["simulate", "--config", "run.toml", "--seed", "4", "--out", "c"]);
    for name in ["dataset_r1.csv", "dataset_r2.csv", "truth_curves.csv", "truth_params.json"] {
        let a = fs::read(d.join("a").join(name)).unwrap();
        assert_eq!(a, fs::read(d.join("b").join(name)).unwrap(), "{name}");
        assert_ne!(a, fs::read(d.join("c").join(name)).unwrap(), "{name}");
    }
}

#[test]
fn dataset_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "run.toml", SMALL);
    ok(d, &["simulate", "--config", "run.toml", "--out", "sim"]);
    let mut scenario = ScenarioConfig::preset("A-322-n40-40").unwrap();
    scenario.t = 20;
    scenario.r = 10;
    scenario.seed = 3;
    let truth = generate_truth(&scenario).unwrap();
    let data = read_dataset(&d.join("sim/dataset_r2.csv"), &d.join("sim/grid.csv")).unwrap();
    let direct = generate_replicate(&truth, 1).unwrap();
    assert_eq!(data.grid, direct.grid);
    for s in 0..2 {
        assert_eq!(data.groups[s].y, direct.groups[s].y);
    }
    let curves = read_curves(&d.join("sim/truth_curves.csv")).unwrap();
    assert_eq!(curves[1].y, truth.f[1]);
}

#[test]
fn validation_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "zero.toml", "[scenario]\npreset = \"B-300-n40-40\"\nreplicates = 0\n");
    write(d, "burn.toml", "[sampler]\niterations = 10\nburn_in = 10\n");
    write(d, "typo.toml", "[sampler]\niteration = 10\n");
    write(d, "preset.toml", "[scenario]\npreset = \"Z-999\"\n");
    assert_eq!(code(&mgfactor(d, &["simulate", "--config", "zero.toml", "--out", "x"])), 2);
    assert_eq!(code(&mgfactor(d, &["simulate", "--config", "typo.toml", "--out", "x"])), 2);
    assert_eq!(code(&mgfactor(d, &["simulate", "--config", "preset.toml", "--out", "x"])), 2);

    write(d, "run.toml", SMALL);
    ok(d, &["simulate", "--config", "run.toml", "--out", "sim"]);
    let burn = mgfactor(d, &["fit", "--config", "burn.toml", "--data", "sim/dataset_r1.csv", "--out", "f"]);
    assert_eq!(code(&burn), 2);
    assert!(String::from_utf8_lossy(&burn.stderr).contains("burn_in"));
    // missing required flag is a usage error
    assert_eq!(code(&mgfactor(d, &["simulate"])), 2);
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = mgfactor(d, &["fit", "--data", "missing.csv", "--grid", "missing_grid.csv", "--out", "f"]);
    assert_eq!(code(&out), 1);
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn non_default_basis_size_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(
        d,
        "eeg.toml",
        "[scenario]\npreset = \"A-322-n40-40\"\nt = 78\nn = [6, 6]\n[sampler]\nnum_basis = 40\nl_max = 2\nk_max = 2\niterations = 20\nburn_in = 10\n",
    );
    ok(d, &["simulate", "--config", "eeg.toml", "--out", "sim"]);
    ok(d, &["fit", "--config", "eeg.toml", "--data", "sim/dataset_r1.csv", "--out", "fit"]);
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("fit/meta.json")).unwrap()).unwrap();
    assert_eq!(meta["num_basis"], 40);
}

/// Write `curves_g{s}.csv` in the postprocess layout with the truth as mean.
fn write_truth_as_curves(truth: &Path, out: &Path) {
    for (s, g) in read_curves(&truth.join("truth_curves.csv")).unwrap().iter().enumerate() {
        let mut w = csv::Writer::from_path(out.join(format!("curves_g{}.csv", s + 1))).unwrap();
        w.write_record(["subject_id", "time", "mean", "lower", "upper"]).unwrap();
        for (i, id) in g.subject_ids.iter().enumerate() {
            for j in 0..g.y.ncols() {
                let v = format!("{:.16e}", g.y[(i, j)]);
                w.write_record([id.as_str(), &(j + 1).to_string(), &v, &v, &v]).unwrap();
            }
        }
        w.flush().unwrap();
    }
}

#[test]
fn full_pipeline_and_metric_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "run.toml", SMALL);
    ok(d, &["simulate", "--config", "run.toml", "--out", "sim"]);
    ok(d, &["fit", "--config", "run.toml", "--data", "sim", "--out", "fit", "--threads", "2"]);
    for k in [1, 2] {
        for name in ["draws/lambda.csv", "configurations.csv", "geweke.csv", "meta.json"] {
            assert!(d.join(format!("fit/r{k}/{name}")).exists(), "r{k}/{name}");
        }
    }
    let (_, geweke) = read_table(&d.join("fit/r1/geweke.csv")).unwrap();
    // σ²_ε and σ²_β per group plus three distinct β components
    assert_eq!(geweke.len(), 7);
    let betas: std::collections::BTreeSet<(String, String)> =
        geweke.iter().filter(|r| &r[0] == "beta").map(|r| (r[1].to_string(), r[2].to_string())).collect();
    assert_eq!(betas.len(), 3);
    let (_, configs) = read_table(&d.join("fit/r1/configurations.csv")).unwrap();
    assert_eq!(configs.len(), 160);

    ok(d, &["postprocess", "--draws", "fit", "--out", "post"]);
    for k in [1, 2] {
        let p = d.join(format!("post/r{k}"));
        let summary: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(p.join("summary.json")).unwrap()).unwrap();
        let config: Vec<usize> = serde_json::from_value(summary["configuration"].clone()).unwrap();
        let (_, hist) = read_table(&p.join("configuration_histogram.csv")).unwrap();
        assert!(!hist.is_empty() && hist.len() <= 15);
        let counts: Vec<usize> = hist.iter().map(|r| r[r.len() - 1].parse().unwrap()).collect();
        assert!(counts.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(read_loadings(&p.join("loadings_shared.csv"), 20).unwrap().ncols(), config[0]);
        for s in 1..=2 {
            let m = read_loadings(&p.join(format!("loadings_g{s}.csv")), 20).unwrap();
            assert_eq!(m.shape(), (20, config[s]));
        }
    }

    ok(d, &["metrics", "--truth", "sim", "--results", "post", "--out", "metrics"]);
    let (_, rv) = read_table(&d.join("metrics/rv.csv")).unwrap();
    assert_eq!(rv.len(), 6);
    let (_, mse) = read_table(&d.join("metrics/mse.csv")).unwrap();
    assert!(mse.iter().all(|r| r[2].parse::<f64>().unwrap() >= 0.0));

    // results equal to the truth give zero error and unit RV
    let fixture = d.join("fixture");
    for k in [1, 2] {
        let rk = fixture.join(format!("r{k}"));
        fs::create_dir_all(&rk).unwrap();
        fs::copy(d.join(format!("post/r{k}/summary.json")), rk.join("summary.json")).unwrap();
        fs::copy(d.join("sim/truth_loadings_shared.csv"), rk.join("loadings_shared.csv")).unwrap();
        for s in 1..=2 {
            fs::copy(d.join(format!("sim/truth_loadings_g{s}.csv")), rk.join(format!("loadings_g{s}.csv"))).unwrap();
        }
        write_truth_as_curves(&d.join("sim"), &rk);
    }
    ok(d, &["metrics", "--truth", "sim", "--results", "fixture", "--out", "m2"]);
    let (_, rv) = read_table(&d.join("m2/rv.csv")).unwrap();
    assert!(rv.iter().all(|r| (r[3].parse::<f64>().unwrap() - 1.0).abs() < 1e-12));
    let (_, mse) = read_table(&d.join("m2/mse.csv")).unwrap();
    assert!(mse.iter().all(|r| r[2].parse::<f64>().unwrap() == 0.0));

    // a missing replicate is reported by key
    fs::remove_dir_all(fixture.join("r2")).unwrap();
    let out = mgfactor(d, &["metrics", "--truth", "sim", "--results", "fixture", "--out", "m3"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("r2 (no results)"));
}
