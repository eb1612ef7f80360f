//! End-to-end tests of the binary: every subcommand, exit codes, output
//! schemas, and byte-level reproducibility.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_goalskit"));
    // Keep stderr quiet unless a test asserts on a warning.
    cmd.env("RUST_LOG", "warn");
    cmd
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawning goalskit");
    assert!(
        out.status.success(),
        "goalskit {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_err(args: &[&str], expect_code: i32) -> Output {
    let out = bin().args(args).output().expect("spawning goalskit");
    assert_eq!(
        out.status.code(),
        Some(expect_code),
        "goalskit {:?}\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read_json(path: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("reading {}: {e}", path.display()));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("parsing {}: {e}", path.display()))
}

fn csv_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
        .lines()
        .map(str::to_string)
        .collect()
}

fn simulate_small(dir: &Path, scenario: &str, n: usize, seed: u64, replicates: usize) {
    run_ok(&[
        "simulate",
        "--scenario",
        scenario,
        "--n",
        &n.to_string(),
        "--seed",
        &seed.to_string(),
        "--replicates",
        &replicates.to_string(),
        "--out",
        dir.to_str().unwrap(),
    ]);
}

#[test]
fn simulate_writes_data_and_truth() {
    let tmp = TempDir::new().unwrap();
    simulate_small(tmp.path(), "I", 60, 7, 1);
    let data = csv_lines(&tmp.path().join("rep_000.csv"));
    assert_eq!(data.len(), 61, "header + 60 sample rows");
    assert!(data[0].starts_with("x1,x2,"));
    assert!(data[0].ends_with(",y"));

    let truth = read_json(&tmp.path().join("rep_000_truth.json"));
    assert_eq!(truth["format"], "goalskit.sim.v1");
    assert_eq!(truth["config"]["scenario"], "I");
    let names: Vec<String> = truth["causal_names"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    assert_eq!(names, vec!["x23", "x24", "x25"]);

    let manifest = read_json(&tmp.path().join("manifest.json"));
    assert_eq!(manifest["format"], "goalskit.manifest.v1");
    assert_eq!(manifest["seeds"], serde_json::json!([7]));
    let outputs: Vec<&str> = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert!(outputs.contains(&"rep_000.csv"));
    assert!(outputs.contains(&"rep_000_truth.json"));
}

#[test]
fn simulate_documented_example_has_expected_causal_set() {
    let tmp = TempDir::new().unwrap();
    run_ok(&[
        "simulate",
        "--scenario",
        "I",
        "--n",
        "2000",
        "--p",
        "25",
        "--v2",
        "0.6",
        "--seed",
        "7",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    let data = csv_lines(&tmp.path().join("rep_000.csv"));
    assert_eq!(data.len(), 2001);
    let truth = read_json(&tmp.path().join("rep_000_truth.json"));
    let causal: Vec<u64> = truth["truth"]["causal"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    // 0-based indices for the features named x23, x24, x25.
    assert_eq!(causal, vec![22, 23, 24]);
}

#[test]
fn simulate_hd_preset_draws_causal_structure() {
    let tmp = TempDir::new().unwrap();
    run_ok(&[
        "simulate",
        "--scenario",
        "hd3",
        "--n",
        "80",
        "--p",
        "120",
        "--seed",
        "3",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    let truth = read_json(&tmp.path().join("rep_000_truth.json"));
    assert_eq!(truth["config"]["design"], "genotype");
    assert_eq!(truth["config"]["rho"], 0.5);
    assert_eq!(truth["config"]["pop_var"], 0.0);
    assert_eq!(truth["truth"]["causal"].as_array().unwrap().len(), 30);
    assert!(
        !truth["truth"]["interaction_pairs"]
            .as_array()
            .unwrap()
            .is_empty(),
        "rho < 1 must inject interactions"
    );
}

#[test]
fn config_file_merges_and_flags_win() {
    let tmp = TempDir::new().unwrap();
    let cfg_path = tmp.path().join("sim.json");
    std::fs::write(&cfg_path, r#"{"scenario": "V", "n": 50, "seed": 9}"#).unwrap();
    let out_a = tmp.path().join("a");
    run_ok(&[
        "simulate",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        out_a.to_str().unwrap(),
    ]);
    assert_eq!(csv_lines(&out_a.join("rep_000.csv")).len(), 51);

    let out_b = tmp.path().join("b");
    run_ok(&[
        "simulate",
        "--config",
        cfg_path.to_str().unwrap(),
        "--n",
        "40",
        "--out",
        out_b.to_str().unwrap(),
    ]);
    assert_eq!(
        csv_lines(&out_b.join("rep_000.csv")).len(),
        41,
        "command-line flag must override the config file"
    );

    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"scnario": "V"}"#).unwrap();
    run_err(
        &[
            "simulate",
            "--config",
            bad.to_str().unwrap(),
            "--out",
            tmp.path().join("c").to_str().unwrap(),
        ],
        2,
    );
}

#[test]
fn usage_and_data_errors_get_distinct_exit_codes() {
    // Missing required --out is a clap-level usage error.
    run_err(&["simulate", "--scenario", "I"], 2);
    // An unknown scenario is a usage error too.
    let tmp = TempDir::new().unwrap();
    run_err(
        &[
            "simulate",
            "--scenario",
            "XIV",
            "--out",
            tmp.path().to_str().unwrap(),
        ],
        2,
    );
    // A nonexistent data file is a data error.
    run_err(
        &[
            "score",
            "--method",
            "goals",
            "--data",
            "/nonexistent/data.csv",
            "--out",
            tmp.path().to_str().unwrap(),
        ],
        3,
    );
}

#[test]
fn score_goals_writes_full_report() {
    let tmp = TempDir::new().unwrap();
    let sim = tmp.path().join("sim");
    simulate_small(&sim, "I", 60, 7, 1);
    let out = tmp.path().join("scores");
    run_ok(&[
        "score",
        "--method",
        "goals",
        "--data",
        sim.join("rep_000.csv").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--xi",
        "0.05",
        "--with-global-cov",
    ]);
    let header = read_json(&out.join("goals_xi0.05.json"));
    assert_eq!(header["format"], "goalskit.report.v1");
    assert_eq!(header["method"], "goals");
    assert_eq!(header["n_samples"], 60);
    assert_eq!(header["n_features"], 25);
    assert_eq!(header["metadata"]["xi"]["constant"], 0.05);
    assert_eq!(header["csv"], "goals_xi0.05.csv");

    let csv = csv_lines(&out.join("goals_xi0.05.csv"));
    assert_eq!(csv.len(), 63, "header + 60 samples + two summary rows");
    assert!(csv[0].starts_with("row,x1,"));
    assert!(csv[1].starts_with("sample_1,"));
    assert!(csv[61].starts_with("global,"));
    assert!(csv[62].starts_with("global_abs,"));

    let cov = csv_lines(&out.join("goals_xi0.05_cov.csv"));
    assert_eq!(cov.len(), 26, "label row + one row per feature");
}

#[test]
fn score_rate_is_global_only() {
    let tmp = TempDir::new().unwrap();
    let sim = tmp.path().join("sim");
    simulate_small(&sim, "I", 60, 7, 1);
    let out = tmp.path().join("scores");
    run_ok(&[
        "score",
        "--method",
        "rate",
        "--data",
        sim.join("rep_000.csv").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let header = read_json(&out.join("rate.json"));
    assert_eq!(header["method"], "rate");
    assert_eq!(header["n_samples"], serde_json::Value::Null);
    let csv = csv_lines(&out.join("rate.csv"));
    assert_eq!(csv.len(), 2, "header + global row only");
    // RATE scores are a probability distribution over features.
    let sum: f64 = csv[1]
        .split(',')
        .skip(1)
        .map(|v| v.parse::<f64>().unwrap())
        .sum();
    assert!((sum - 1.0).abs() < 1e-10, "rate row sums to {sum}");
}

#[test]
fn score_xi_zero_yields_zero_scores_and_a_warning() {
    let tmp = TempDir::new().unwrap();
    let sim = tmp.path().join("sim");
    simulate_small(&sim, "V", 40, 2, 1);
    let out = tmp.path().join("scores");
    let output = run_ok(&[
        "score",
        "--method",
        "goals",
        "--data",
        sim.join("rep_000.csv").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--xi",
        "0",
    ]);
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("exactly zero"),
        "expected a degeneracy warning, got: {stderr}"
    );
    let header = read_json(&out.join("goals_xi0.json"));
    for v in header["global"].as_array().unwrap() {
        assert_eq!(v.as_f64().unwrap(), 0.0);
    }
    for v in header["global_abs"].as_array().unwrap() {
        assert_eq!(v.as_f64().unwrap(), 0.0);
    }
}

#[test]
fn pipeline_is_byte_reproducible() {
    let tmp = TempDir::new().unwrap();
    let mut trees: Vec<PathBuf> = Vec::new();
    for round in 0..2 {
        let root = tmp.path().join(format!("round{round}"));
        let sim = root.join("sim");
        simulate_small(&sim, "I", 50, 13, 1);
        let scores = root.join("scores");
        run_ok(&[
            "score",
            "--method",
            "goals",
            "--data",
            sim.join("rep_000.csv").to_str().unwrap(),
            "--out",
            scores.to_str().unwrap(),
            "--xi",
            "1",
        ]);
        let eval = root.join("eval");
        run_ok(&[
            "eval",
            "--reports",
            scores.join("goals_xi1.json").to_str().unwrap(),
            "--truth",
            sim.join("rep_000_truth.json").to_str().unwrap(),
            "--out",
            eval.to_str().unwrap(),
        ]);
        trees.push(root);
    }
    let mut compared = 0;
    for entry in walk(&trees[0]) {
        let rel = entry.strip_prefix(&trees[0]).unwrap();
        if rel.file_name().map(|n| n == "manifest.json").unwrap_or(false) {
            continue; // timings legitimately differ between runs
        }
        let twin = trees[1].join(rel);
        let a = std::fs::read(&entry).unwrap();
        let b = std::fs::read(&twin)
            .unwrap_or_else(|e| panic!("missing twin {}: {e}", twin.display()));
        assert_eq!(a, b, "bytes differ for {}", rel.display());
        compared += 1;
    }
    assert!(compared >= 5, "only {compared} files compared");
}

fn walk(root: &Path) -> Vec<PathBuf> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push(path);
            }
        }
    }
    files.sort();
    files
}

#[test]
fn eval_writes_grid_curve_and_auc_table() {
    let tmp = TempDir::new().unwrap();
    let sim = tmp.path().join("sim");
    simulate_small(&sim, "I", 60, 21, 2);
    let scores = tmp.path().join("scores");
    for k in 0..2 {
        let out = scores.join(format!("rep{k}"));
        run_ok(&[
            "score",
            "--method",
            "goals",
            "--data",
            sim.join(format!("rep_00{k}.csv")).to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
    }
    let eval = tmp.path().join("eval");
    run_ok(&[
        "eval",
        "--reports",
        scores.join("rep*/goals_xi1.json").to_str().unwrap(),
        "--truth",
        sim.join("rep_*_truth.json").to_str().unwrap(),
        "--out",
        eval.to_str().unwrap(),
    ]);

    let mean_curve = csv_lines(&eval.join("I_goals_roc.csv"));
    assert_eq!(mean_curve.len(), 1002, "header + one row per grid point");
    assert_eq!(mean_curve[0], "fpr,tpr");
    let first: Vec<f64> = mean_curve[1].split(',').map(|v| v.parse().unwrap()).collect();
    let last: Vec<f64> = mean_curve[1001].split(',').map(|v| v.parse().unwrap()).collect();
    // The grid curve evaluates the right-continuous step TPR, so the value
    // at fpr = 0 is already the hit rate among top-ranked features.
    assert_eq!(first[0], 0.0);
    assert!((0.0..=1.0).contains(&first[1]));
    assert_eq!((last[0], last[1]), (1.0, 1.0));

    let table = csv_lines(&eval.join("I_auc.csv"));
    assert_eq!(table[0], "method,mean_auc,replicates");
    assert_eq!(table.len(), 2);
    let fields: Vec<&str> = table[1].split(',').collect();
    assert_eq!(fields[0], "goals");
    let auc: f64 = fields[1].parse().unwrap();
    assert!((0.0..=1.0).contains(&auc), "AUC {auc} out of range");
    assert_eq!(fields[2], "2");

    assert!(eval.join("I_goals_rep000_roc.csv").exists());
    assert!(eval.join("I_goals_rep001_roc.csv").exists());
}

#[test]
fn eval_rejects_replicate_count_mismatch() {
    let tmp = TempDir::new().unwrap();
    let sim = tmp.path().join("sim");
    simulate_small(&sim, "I", 60, 5, 2);
    let scores = tmp.path().join("scores");
    run_ok(&[
        "score",
        "--method",
        "goals",
        "--data",
        sim.join("rep_000.csv").to_str().unwrap(),
        "--out",
        scores.to_str().unwrap(),
    ]);
    let out = run_err(
        &[
            "eval",
            "--reports",
            scores.join("goals_xi1.json").to_str().unwrap(),
            "--truth",
            sim.join("rep_*_truth.json").to_str().unwrap(),
            "--out",
            tmp.path().join("eval").to_str().unwrap(),
        ],
        3,
    );
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("1 reports for 2 truth replicates"),
        "unexpected message: {stderr}"
    );
}

#[test]
fn bench_emits_exact_schema_and_scales_with_n() {
    let tmp = TempDir::new().unwrap();
    run_ok(&[
        "bench",
        "--n",
        "100,800",
        "--p",
        "8,16",
        "--methods",
        "goals",
        "--seed",
        "1",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    let lines = csv_lines(&tmp.path().join("bench.csv"));
    assert_eq!(lines[0], "method,n,p,seconds");
    assert_eq!(lines.len(), 5, "2x2 grid of (n, p)");
    let mut seconds = std::collections::HashMap::new();
    for line in &lines[1..] {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 4);
        assert_eq!(f[0], "goals");
        let n: usize = f[1].parse().unwrap();
        let p: usize = f[2].parse().unwrap();
        let s: f64 = f[3].parse().unwrap();
        assert!(s >= 0.0);
        seconds.insert((n, p), s);
    }
    // Timings are monotone nondecreasing in N for fixed p, up to a 20%
    // noise margin (the quadratic work grows 64x here).
    for p in [8usize, 16] {
        assert!(
            seconds[&(800, p)] >= 0.8 * seconds[&(100, p)],
            "scoring at n=800 should not undercut n=100 at p={p}: {seconds:?}"
        );
    }
}

#[test]
fn numerical_breakdown_exits_4() {
    // 30 of 40 rows are the same point, so the median pairwise distance is
    // exactly zero and the bandwidth heuristic cannot produce a kernel.
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("degenerate.csv");
    let mut rows = String::from("x1,x2,y\n");
    for i in 0..40 {
        if i < 30 {
            rows.push_str(&format!("1.0,-1.0,{}\n", i as f64 / 10.0));
        } else {
            rows.push_str(&format!("-1.0,1.0,{}\n", -(i as f64) / 10.0));
        }
    }
    std::fs::write(&data, rows).unwrap();
    let out = run_err(
        &[
            "score",
            "--method",
            "goals",
            "--data",
            data.to_str().unwrap(),
            "--out",
            tmp.path().join("scores").to_str().unwrap(),
        ],
        4,
    );
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("median"),
        "expected a bandwidth failure, got: {stderr}"
    );
}

#[test]
fn gzip_compresses_the_local_sidecar() {
    let tmp = TempDir::new().unwrap();
    let sim = tmp.path().join("sim");
    simulate_small(&sim, "V", 40, 8, 1);
    let out = tmp.path().join("scores");
    run_ok(&[
        "score",
        "--method",
        "goals",
        "--data",
        sim.join("rep_000.csv").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--gzip",
    ]);
    let header = read_json(&out.join("goals_xi1.json"));
    assert_eq!(header["csv"], "goals_xi1.csv.gz");
    let gz = std::fs::read(out.join("goals_xi1.csv.gz")).unwrap();
    assert_eq!(&gz[..2], &[0x1f, 0x8b], "gzip magic bytes");
    assert!(!out.join("goals_xi1.csv").exists());
}

#[test]
fn saved_model_reloads_and_reproduces_scores() {
    let tmp = TempDir::new().unwrap();
    let sim = tmp.path().join("sim");
    simulate_small(&sim, "V", 40, 4, 1);
    let data = sim.join("rep_000.csv");
    let model = tmp.path().join("gp.json");
    let out_fit = tmp.path().join("fit");
    run_ok(&[
        "score",
        "--method",
        "goals",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out_fit.to_str().unwrap(),
        "--save-model",
        model.to_str().unwrap(),
    ]);
    let out_reload = tmp.path().join("reload");
    run_ok(&[
        "score",
        "--method",
        "goals",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out_reload.to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
    ]);
    let a = std::fs::read(out_fit.join("goals_xi1.csv")).unwrap();
    let b = std::fs::read(out_reload.join("goals_xi1.csv")).unwrap();
    assert_eq!(a, b, "reloaded model must reproduce the scores");
}
