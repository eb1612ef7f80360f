//! `goalskit bench` — time the scoring stage over a grid of dataset sizes.
//!
//! Fitting is excluded from the timed region: the point is the per-call cost
//! of producing scores from an already-fitted model.

use std::io::Write as _;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;

use goalskit_core::dataset::Dataset;
use goalskit_core::evalrank::scanone;
use goalskit_core::goals::{goals_local, XiSpec};
use goalskit_core::gp;
use goalskit_core::kernel::{median_bandwidth, KernelConfig};
use goalskit_core::nn::{fit_random_features, nn_goals_scores, Activation};
use goalskit_core::rate::{effect_size_analog, rate_scores};
use goalskit_core::shapley::exact_shap;
use goalskit_core::simgen::{simulate, DesignKind, SimConfig};

use crate::manifest::RunManifest;
use crate::score::Method;
use crate::usage;

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Sample counts to benchmark (comma-separated).
    #[arg(long, value_delimiter = ',', default_value = "500")]
    n: Vec<usize>,
    /// Feature counts to benchmark (comma-separated).
    #[arg(long, value_delimiter = ',', default_value = "100")]
    p: Vec<usize>,
    /// Methods to time (comma-separated).
    #[arg(long, value_enum, value_delimiter = ',', default_value = "goals,rate")]
    methods: Vec<Method>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Perturbation size for the perturbation-based methods.
    #[arg(long, default_value_t = 1.0)]
    xi: f64,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

/// Synthetic pure-noise regression of the requested shape.
fn bench_dataset(n: usize, p: usize, seed: u64) -> Result<Dataset> {
    let cfg = SimConfig {
        n,
        j: p,
        v2: 0.5,
        rho: 1.0,
        pop_var: 0.0,
        scenario: "bench".to_string(),
        additive: vec![],
        interaction_pairs: vec![],
        half_population_feature: None,
        random_causal: None,
        seed,
        design: DesignKind::Gaussian,
    };
    let (d, _) = simulate(&cfg)?;
    Ok(d)
}

pub fn run(args: BenchArgs) -> Result<()> {
    if !args.xi.is_finite() {
        return Err(usage(format!("--xi must be finite, got {}", args.xi)).into());
    }
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating output directory {}", args.out.display()))?;
    let mut manifest = RunManifest::new(
        "bench",
        serde_json::json!({
            "n": args.n,
            "p": args.p,
            "methods": args.methods.iter().map(|m| m.name()).collect::<Vec<_>>(),
            "seed": args.seed,
            "xi": args.xi,
        }),
    );
    manifest.seeds.push(args.seed);

    let mut rows: Vec<(String, usize, usize, f64)> = Vec::new();
    for &n in &args.n {
        for &p in &args.p {
            let d = bench_dataset(n, p, args.seed)?;
            let rbf = KernelConfig::Rbf {
                theta: median_bandwidth(d.x())?,
            };
            for &method in &args.methods {
                let start;
                match method {
                    Method::Goals => {
                        let g = gp::fit(&d, &rbf, None)?;
                        start = std::time::Instant::now();
                        goals_local(&g, &d, &XiSpec::Constant(args.xi), None)?;
                    }
                    Method::Rate => {
                        let g = gp::fit(&d, &rbf, None)?;
                        start = std::time::Instant::now();
                        let esa = effect_size_analog(&g, &d)?;
                        rate_scores(&esa)?;
                    }
                    Method::NnGoals => {
                        let m = fit_random_features(&d, 512, Activation::Relu, args.seed)?;
                        start = std::time::Instant::now();
                        nn_goals_scores(&m, &d, args.xi)?;
                    }
                    Method::Scanone => {
                        start = std::time::Instant::now();
                        scanone(&d)?;
                    }
                    Method::Shap => {
                        // Coalition fits are the cost being measured here.
                        let g = gp::fit(&d, &rbf, None)?;
                        start = std::time::Instant::now();
                        exact_shap(&d, &rbf, g.sigma2())?;
                    }
                }
                let seconds = start.elapsed().as_secs_f64();
                println!("{},{n},{p},{seconds:.4}", method.name());
                log::info!("{} at n={n}, p={p}: {seconds:.4}s", method.name());
                rows.push((method.name().to_string(), n, p, seconds));
            }
        }
    }

    let csv_path = args.out.join("bench.csv");
    let file = std::fs::File::create(&csv_path)
        .with_context(|| format!("writing {}", csv_path.display()))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "method,n,p,seconds")?;
    for (method, n, p, seconds) in &rows {
        writeln!(w, "{method},{n},{p},{seconds:.6}")?;
    }
    w.flush()?;
    manifest.add_output(&csv_path);
    let manifest_path = manifest.write(&args.out)?;
    log::info!("wrote {}", manifest_path.display());
    Ok(())
}
