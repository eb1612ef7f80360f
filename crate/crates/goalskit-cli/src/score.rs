//! `goalskit score` — fit a model on a dataset and write importance reports.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use nalgebra::DMatrix;
use serde::Deserialize;
use serde_json::Value;

use goalskit_core::dataset::{load_csv, Dataset};
use goalskit_core::evalrank::scanone;
use goalskit_core::goals::{goals_local_full, GoalsOptions, GoalsReport, XiSpec};
use goalskit_core::gp::{self, FittedGP};
use goalskit_core::kernel::{median_bandwidth, KernelConfig};
use goalskit_core::nn::{fit_random_features, nn_goals_scores, Activation};
use goalskit_core::rate::{effect_size_analog, rate_scores};
use goalskit_core::report::{write_matrix_csv, Report};
use goalskit_core::shapley::exact_shap;

use crate::manifest::RunManifest;
use crate::{load_file_config, usage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// Local + global perturbation scores from a GP fit.
    Goals,
    /// KL-divergence effect-size ranking (global only).
    Rate,
    /// Exact Shapley values over all feature coalitions (J ≤ 15).
    Shap,
    /// Perturbation scores for a random-feature network model.
    NnGoals,
    /// Univariate OLS p-values (global only).
    Scanone,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Goals => "goals",
            Method::Rate => "rate",
            Method::Shap => "shap",
            Method::NnGoals => "nn-goals",
            Method::Scanone => "scanone",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Rbf,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ActivationArg {
    Relu,
    Tanh,
    Identity,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[arg(long, value_enum)]
    method: Method,
    /// Input CSV with a header row; one column is the response.
    #[arg(long)]
    data: PathBuf,
    /// Name of the response column in the data file [default: y].
    #[arg(long)]
    response_column: Option<String>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Perturbation size; repeat the flag to score several values.
    #[arg(long = "xi")]
    xi: Vec<f64>,
    /// Covariance family for GP-based methods.
    #[arg(long, value_enum)]
    kernel: Option<KernelArg>,
    /// Fixed RBF bandwidth (default: median heuristic).
    #[arg(long)]
    theta: Option<f64>,
    /// Fixed noise variance (default: marginal-likelihood selection).
    #[arg(long)]
    sigma2: Option<f64>,
    /// Seed for the random-feature inner weights.
    #[arg(long)]
    seed: Option<u64>,
    /// Hidden width for nn-goals.
    #[arg(long)]
    width: Option<usize>,
    /// Activation for nn-goals.
    #[arg(long, value_enum)]
    activation: Option<ActivationArg>,
    /// Grouping CSV (column `group`, one row per sample); local scores are
    /// additionally averaged per group.
    #[arg(long)]
    cages: Option<PathBuf>,
    /// Also write per-sample posterior SDs of the local scores.
    #[arg(long)]
    with_local_sd: bool,
    /// Also write the global-score posterior covariance.
    #[arg(long)]
    with_global_cov: bool,
    /// Save the fitted GP for reuse.
    #[arg(long)]
    save_model: Option<PathBuf>,
    /// Load a previously saved GP instead of fitting.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Gzip the local-score CSVs.
    #[arg(long)]
    gzip: bool,
    /// JSON config file supplying any of the above; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ScoreFileConfig {
    xi: Option<Vec<f64>>,
    kernel: Option<String>,
    theta: Option<f64>,
    sigma2: Option<f64>,
    seed: Option<u64>,
    width: Option<usize>,
    activation: Option<String>,
    response_column: Option<String>,
}

struct Resolved {
    xi: Vec<f64>,
    kernel: KernelArg,
    theta: Option<f64>,
    sigma2: Option<f64>,
    seed: u64,
    width: usize,
    activation: Activation,
    response_column: String,
}

fn resolve(args: &ScoreArgs) -> Result<Resolved> {
    let file: ScoreFileConfig = load_file_config(args.config.as_deref())?;
    let xi = if !args.xi.is_empty() {
        args.xi.clone()
    } else {
        file.xi.unwrap_or_else(|| vec![1.0])
    };
    let kernel = match args.kernel {
        Some(k) => k,
        None => match file.kernel.as_deref() {
            None => KernelArg::Rbf,
            Some("rbf") => KernelArg::Rbf,
            Some("linear") => KernelArg::Linear,
            Some(other) => return Err(usage(format!("unknown kernel '{other}'")).into()),
        },
    };
    let activation = match args.activation {
        Some(ActivationArg::Relu) => Activation::Relu,
        Some(ActivationArg::Tanh) => Activation::Tanh,
        Some(ActivationArg::Identity) => Activation::Identity,
        None => match file.activation.as_deref() {
            None | Some("relu") => Activation::Relu,
            Some("tanh") => Activation::Tanh,
            Some("identity") => Activation::Identity,
            Some(other) => return Err(usage(format!("unknown activation '{other}'")).into()),
        },
    };
    let response_column = args
        .response_column
        .clone()
        .or(file.response_column)
        .unwrap_or_else(|| "y".to_string());
    Ok(Resolved {
        xi,
        kernel,
        theta: args.theta.or(file.theta),
        sigma2: args.sigma2.or(file.sigma2),
        seed: args.seed.or(file.seed).unwrap_or(0),
        width: args.width.or(file.width).unwrap_or(512),
        activation,
        response_column,
    })
}

fn kernel_config(r: &Resolved, d: &Dataset) -> Result<KernelConfig> {
    Ok(match r.kernel {
        KernelArg::Rbf => {
            let theta = match r.theta {
                Some(t) => t,
                None => median_bandwidth(d.x())?,
            };
            KernelConfig::Rbf { theta }
        }
        KernelArg::Linear => KernelConfig::Linear,
    })
}

pub fn run(args: ScoreArgs) -> Result<()> {
    let r = resolve(&args)?;
    for &xi in &r.xi {
        if !xi.is_finite() {
            return Err(usage(format!("--xi must be finite, got {xi}")).into());
        }
    }
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating output directory {}", args.out.display()))?;

    let mut manifest = RunManifest::new(
        "score",
        serde_json::json!({
            "method": args.method.name(),
            "data": args.data.display().to_string(),
            "response_column": r.response_column,
            "xi": r.xi,
            "kernel": match r.kernel { KernelArg::Rbf => "rbf", KernelArg::Linear => "linear" },
            "theta": r.theta,
            "sigma2": r.sigma2,
            "seed": r.seed,
            "width": r.width,
            "activation": r.activation.name(),
            "gzip": args.gzip,
        }),
    );
    manifest.add_input(&args.data)?;
    if let Some(p) = &args.config {
        manifest.add_input(p)?;
    }
    if let Some(p) = &args.cages {
        manifest.add_input(p)?;
    }
    manifest.seeds.push(r.seed);

    let d = manifest.time("load", || -> Result<Dataset> {
        Ok(load_csv(&args.data, &r.response_column)?.standardize()?)
    })?;
    log::info!("loaded {} samples x {} features", d.n(), d.j());
    let groups = match &args.cages {
        Some(path) => Some(read_groups(path, d.n())?),
        None => None,
    };

    match args.method {
        Method::Goals => {
            let cfg = kernel_config(&r, &d)?;
            let g = obtain_gp(&args, &mut manifest, &d, &cfg, r.sigma2)?;
            let opts = GoalsOptions {
                features: None,
                with_local_sd: args.with_local_sd,
                with_global_cov: args.with_global_cov,
            };
            for &xi in &r.xi {
                warn_if_degenerate(xi);
                let scores = manifest
                    .time("score", || goals_local_full(&g, &d, &XiSpec::Constant(xi), &opts))?;
                let stem = format!("goals_xi{xi}");
                write_goals_outputs(
                    &args, &mut manifest, &d, &scores, &stem, "goals", groups.as_ref(), &[],
                )?;
            }
        }
        Method::NnGoals => {
            let m = manifest.time("fit", || {
                fit_random_features(&d, r.width, r.activation, r.seed)
            })?;
            log::info!(
                "random features: width {}, v = {:.4e}, sigma2 = {:.4e}",
                r.width,
                m.v_diag()[0],
                m.sigma2()
            );
            let extra = [
                ("width".to_string(), serde_json::json!(r.width)),
                (
                    "activation".to_string(),
                    serde_json::json!(r.activation.name()),
                ),
                ("v".to_string(), serde_json::json!(m.v_diag()[0])),
            ];
            for &xi in &r.xi {
                warn_if_degenerate(xi);
                let scores = manifest.time("score", || nn_goals_scores(&m, &d, xi))?;
                let stem = format!("nn-goals_xi{xi}");
                write_goals_outputs(
                    &args, &mut manifest, &d, &scores, &stem, "nn-goals", groups.as_ref(), &extra,
                )?;
            }
        }
        Method::Rate => {
            let cfg = kernel_config(&r, &d)?;
            let g = obtain_gp(&args, &mut manifest, &d, &cfg, r.sigma2)?;
            let scores = manifest.time("score", || -> goalskit_core::Result<_> {
                let esa = effect_size_analog(&g, &d)?;
                rate_scores(&esa)
            })?;
            let report = Report::from_rate(&scores, d.feature_names())?;
            write_report(&args, &mut manifest, &report, "rate")?;
        }
        Method::Shap => {
            let cfg = kernel_config(&r, &d)?;
            let sigma2 = match r.sigma2 {
                Some(s) => s,
                None => {
                    // Select the noise on the full-feature model, then share
                    // it across every coalition fit.
                    let g = manifest.time("fit", || gp::fit(&d, &cfg, None))?;
                    g.sigma2()
                }
            };
            let scores = manifest.time("score", || exact_shap(&d, &cfg, sigma2))?;
            let report = Report::from_shap(&scores, d.feature_names())?;
            let paths = write_report(&args, &mut manifest, &report, "shap")?;
            if let Some(g) = &groups {
                write_group_means(&args, &mut manifest, &scores.local, d.feature_names(), g, &paths.0)?;
            }
        }
        Method::Scanone => {
            let p = manifest.time("score", || scanone(&d))?;
            let report = Report::from_scanone(&p, d.feature_names())?;
            write_report(&args, &mut manifest, &report, "scanone")?;
        }
    }

    let manifest_path = manifest.write(&args.out)?;
    log::info!("wrote {}", manifest_path.display());
    Ok(())
}

fn warn_if_degenerate(xi: f64) {
    if xi == 0.0 {
        log::warn!("xi = 0 compares the model with itself; every score will be exactly zero");
    }
}

fn obtain_gp(
    args: &ScoreArgs,
    manifest: &mut RunManifest,
    d: &Dataset,
    cfg: &KernelConfig,
    sigma2: Option<f64>,
) -> Result<FittedGP> {
    let g = match &args.model {
        Some(path) => {
            manifest.add_input(path)?;
            let g = manifest.time("load-model", || gp::load_gp(path, d))?;
            log::info!("loaded model from {}", path.display());
            g
        }
        None => manifest.time("fit", || gp::fit(d, cfg, sigma2))?,
    };
    log::info!(
        "gp: sigma2 = {:.4e}, log marginal = {:.4}",
        g.sigma2(),
        g.log_marginal()
    );
    if let Some(path) = &args.save_model {
        gp::save_gp(&g, path)?;
        manifest.add_output(path);
        log::info!("saved model to {}", path.display());
    }
    Ok(g)
}

/// Write a report's JSON + CSV (CSV optionally gzipped); returns the paths.
fn write_report(
    args: &ScoreArgs,
    manifest: &mut RunManifest,
    report: &Report,
    stem: &str,
) -> Result<(PathBuf, PathBuf)> {
    let json_path = args.out.join(format!("{stem}.json"));
    let csv_path = if args.gzip && report.local.is_some() {
        let csv_path = args.out.join(format!("{stem}.csv.gz"));
        let file = std::fs::File::create(&json_path)
            .with_context(|| format!("writing {}", json_path.display()))?;
        report.write_json_to(std::io::BufWriter::new(file), &format!("{stem}.csv.gz"))?;
        let file = std::fs::File::create(&csv_path)
            .with_context(|| format!("writing {}", csv_path.display()))?;
        let mut gz = flate2::write::GzEncoder::new(
            std::io::BufWriter::new(file),
            flate2::Compression::default(),
        );
        report.write_csv_to(&mut gz)?;
        gz.finish()?.flush()?;
        csv_path
    } else {
        manifest.time("write", || report.write(&json_path))?
    };
    manifest.add_output(&json_path);
    manifest.add_output(&csv_path);
    Ok((json_path, csv_path))
}

#[allow(clippy::too_many_arguments)]
fn write_goals_outputs(
    args: &ScoreArgs,
    manifest: &mut RunManifest,
    d: &Dataset,
    scores: &GoalsReport,
    stem: &str,
    method: &str,
    groups: Option<&Vec<String>>,
    extra_metadata: &[(String, Value)],
) -> Result<()> {
    let mut report = Report::from_goals(scores, d.feature_names(), method)?;
    for (k, v) in extra_metadata {
        report.metadata.insert(k.clone(), v.clone());
    }
    let (json_path, _) = write_report(args, manifest, &report, stem)?;
    if let Some(sd) = &scores.local_sd {
        let path = args.out.join(format!("{stem}_sd.csv"));
        let rows: Vec<String> = (1..=sd.nrows()).map(|i| format!("sample_{i}")).collect();
        write_matrix_csv(&path, &rows, &report.feature_names, sd)?;
        manifest.add_output(&path);
    }
    if let Some(cov) = &scores.global_cov {
        let path = args.out.join(format!("{stem}_cov.csv"));
        write_matrix_csv(&path, &report.feature_names, &report.feature_names, cov)?;
        manifest.add_output(&path);
    }
    if let Some(g) = groups {
        write_group_means(args, manifest, &scores.local, &report.feature_names, g, &json_path)?;
    }
    Ok(())
}

/// Average local scores per group label and write them next to the report.
fn write_group_means(
    args: &ScoreArgs,
    manifest: &mut RunManifest,
    local: &DMatrix<f64>,
    feature_names: &[String],
    groups: &[String],
    report_json: &Path,
) -> Result<()> {
    let mut labels: Vec<String> = groups.to_vec();
    labels.sort();
    labels.dedup();
    let mut means = DMatrix::zeros(labels.len(), local.ncols());
    for (g, label) in labels.iter().enumerate() {
        let members: Vec<usize> = (0..groups.len())
            .filter(|&i| &groups[i] == label)
            .collect();
        for c in 0..local.ncols() {
            let sum: f64 = members.iter().map(|&i| local[(i, c)]).sum();
            means[(g, c)] = sum / members.len() as f64;
        }
    }
    let stem = report_json
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("report");
    let path = args.out.join(format!("{stem}_groups.csv"));
    write_matrix_csv(&path, &labels, feature_names, &means)?;
    manifest.add_output(&path);
    log::info!("aggregated local scores over {} groups", labels.len());
    Ok(())
}

/// Read the grouping file: CSV with a header containing a `group` column
/// (or exactly one column), one row per sample, dataset order.
fn read_groups(path: &Path, n: usize) -> Result<Vec<String>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading groups from {}", path.display()))?;
    let headers = reader.headers().context("reading group file header")?;
    let col = match headers.iter().position(|h| h == "group") {
        Some(c) => c,
        None if headers.len() == 1 => 0,
        None => {
            return Err(usage(format!(
                "{} needs a 'group' column (or a single column)",
                path.display()
            ))
            .into())
        }
    };
    let mut groups = Vec::new();
    for record in reader.records() {
        let record = record.context("reading group file row")?;
        groups.push(
            record
                .get(col)
                .ok_or_else(|| usage("short row in groups file"))?
                .to_string(),
        );
    }
    if groups.len() != n {
        return Err(usage(format!(
            "groups file has {} rows for {} samples",
            groups.len(),
            n
        ))
        .into());
    }
    Ok(groups)
}
