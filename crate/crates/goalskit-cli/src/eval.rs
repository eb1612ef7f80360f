//! `goalskit eval` — score reports against simulation truth: ROC curves per
//! replicate, an FPR-grid mean curve per method, and an AUC summary table.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::Deserialize;

use goalskit_core::evalrank::{auc_summary, roc_from_scores};
use goalskit_core::report::{read_sim_truth, write_auc_table, write_roc_csv, REPORT_FORMAT};
use goalskit_core::RankKey;

use crate::manifest::RunManifest;
use crate::usage;

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Glob matching report JSON headers (repeatable).
    #[arg(long, required = true)]
    reports: Vec<String>,
    /// Glob matching simulation truth JSON files (repeatable).
    #[arg(long, required = true)]
    truth: Vec<String>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

/// The slice of a report header eval needs: global scores live in the JSON,
/// so the CSV sidecar never has to be opened (or un-gzipped) here.
#[derive(Deserialize)]
struct ReportHead {
    format: String,
    method: String,
    n_features: usize,
    global: Vec<f64>,
    #[serde(default)]
    global_abs: Option<Vec<f64>>,
}

fn read_head(path: &Path) -> Result<ReportHead> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let head: serde_json::Result<ReportHead> = serde_json::from_str(&text);
    let head = head.with_context(|| format!("parsing report header {}", path.display()))?;
    if head.format != REPORT_FORMAT {
        anyhow::bail!(
            "{}: format tag '{}', expected '{REPORT_FORMAT}'",
            path.display(),
            head.format
        );
    }
    if head.global.len() != head.n_features {
        anyhow::bail!("{}: global row length disagrees with n_features", path.display());
    }
    if let Some(abs) = &head.global_abs {
        if abs.len() != head.n_features {
            anyhow::bail!(
                "{}: global_abs row length disagrees with n_features",
                path.display()
            );
        }
    }
    Ok(head)
}

fn expand(globs: &[String], what: &str) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for pattern in globs {
        let matches =
            glob::glob(pattern).map_err(|e| usage(format!("bad {what} glob '{pattern}': {e}")))?;
        for entry in matches {
            paths.push(entry.with_context(|| format!("expanding {what} glob '{pattern}'"))?);
        }
    }
    paths.sort();
    paths.dedup();
    if paths.is_empty() {
        return Err(usage(format!("no {what} files matched {globs:?}")).into());
    }
    Ok(paths)
}

/// The scores a report ranks by, descending. Methods with local scores
/// carry a magnitude summary (mean |local| per feature) that stays
/// informative when per-sample effects cancel in the signed mean; when it is
/// present it is the ranking statistic. Otherwise: SCANONE p-values rank
/// ascending (negate), RATE ranks by its signed centrality, and anything
/// else ranks by absolute global score.
fn ranking_scores(head: &ReportHead) -> (Vec<f64>, RankKey) {
    if let Some(abs) = &head.global_abs {
        return (abs.clone(), RankKey::Signed);
    }
    match head.method.as_str() {
        "scanone" => (head.global.iter().map(|v| -v).collect(), RankKey::Signed),
        "rate" => (head.global.clone(), RankKey::Signed),
        _ => (head.global.clone(), RankKey::Abs),
    }
}

pub fn run(args: EvalArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating output directory {}", args.out.display()))?;
    let report_paths = expand(&args.reports, "report")?;
    let truth_paths = expand(&args.truth, "truth")?;

    let mut manifest = RunManifest::new(
        "eval",
        serde_json::json!({
            "reports": args.reports,
            "truth": args.truth,
        }),
    );
    for p in report_paths.iter().chain(truth_paths.iter()) {
        manifest.add_input(p)?;
    }

    let truths: Vec<_> = truth_paths
        .iter()
        .map(|p| read_sim_truth(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<_>>()?;
    let mut scenario = truths[0].config.scenario.clone();
    if truths.iter().any(|t| t.config.scenario != scenario) {
        log::warn!("truth files come from different scenarios; labelling outputs 'mixed'");
        scenario = "mixed".to_string();
    }
    log::info!(
        "scenario {scenario}: {} truth replicates, {} reports",
        truths.len(),
        report_paths.len()
    );

    // Group report files by method, keeping the sorted path order within
    // each group so replicate k pairs with truth file k.
    let mut groups: Vec<(String, Vec<(PathBuf, ReportHead)>)> = Vec::new();
    for path in &report_paths {
        let head = read_head(path)?;
        match groups.iter_mut().find(|(m, _)| *m == head.method) {
            Some((_, v)) => v.push((path.clone(), head)),
            None => {
                let method = head.method.clone();
                groups.push((method, vec![(path.clone(), head)]));
            }
        }
    }
    groups.sort_by(|a, b| a.0.cmp(&b.0));

    let mut table: Vec<(String, f64, usize)> = Vec::new();
    for (method, reports) in &groups {
        if reports.len() != truths.len() {
            let files: Vec<String> = reports
                .iter()
                .map(|(p, _)| p.display().to_string())
                .collect();
            anyhow::bail!(
                "method '{method}' has {} reports for {} truth replicates: {}",
                reports.len(),
                truths.len(),
                files.join(", ")
            );
        }
        let mut curves = Vec::with_capacity(reports.len());
        for (k, ((path, head), truth)) in reports.iter().zip(truths.iter()).enumerate() {
            if head.n_features != truth.config.j {
                anyhow::bail!(
                    "{}: {} features scored, truth expects {}",
                    path.display(),
                    head.n_features,
                    truth.config.j
                );
            }
            let (scores, key) = ranking_scores(head);
            let curve = roc_from_scores(&scores, &truth.truth.causal, key)
                .with_context(|| format!("ranking {}", path.display()))?;
            let rep_path = args
                .out
                .join(format!("{scenario}_{method}_rep{k:03}_roc.csv"));
            write_roc_csv(&rep_path, &curve)?;
            manifest.add_output(&rep_path);
            curves.push(curve);
        }
        let (mean_curve, mean_auc) = auc_summary(&curves)?;
        let mean_path = args.out.join(format!("{scenario}_{method}_roc.csv"));
        write_roc_csv(&mean_path, &mean_curve)?;
        manifest.add_output(&mean_path);
        table.push((method.clone(), mean_auc, curves.len()));
        log::info!(
            "{method}: mean AUC {mean_auc:.4} over {} replicates",
            curves.len()
        );
    }

    let table_path = args.out.join(format!("{scenario}_auc.csv"));
    write_auc_table(&table_path, &table)?;
    manifest.add_output(&table_path);
    let manifest_path = manifest.write(&args.out)?;
    log::info!("wrote {}", manifest_path.display());
    Ok(())
}
