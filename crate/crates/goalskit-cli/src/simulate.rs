//! `goalskit simulate` — write replicate datasets plus their truth records.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use serde::Deserialize;

use goalskit_core::dataset::write_csv;
use goalskit_core::report::write_sim_truth;
use goalskit_core::simgen::{hd_preset, scenario_preset, simulate, DesignKind, SimConfig};

use crate::manifest::RunManifest;
use crate::{load_file_config, usage, UsageError};

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Scenario preset: I..VI or hd1..hd4.
    #[arg(long)]
    scenario: Option<String>,
    /// Samples per replicate (overrides the preset).
    #[arg(long)]
    n: Option<usize>,
    /// Feature count (overrides the preset).
    #[arg(long)]
    p: Option<usize>,
    /// Causal signal share of the response variance, in (0,1).
    #[arg(long)]
    v2: Option<f64>,
    /// Additive fraction of the signal, in (0,1].
    #[arg(long)]
    rho: Option<f64>,
    /// Structure (principal-component) share of the variance.
    #[arg(long = "pop-var")]
    pop_var: Option<f64>,
    /// Design matrix family: gaussian or genotype.
    #[arg(long)]
    design: Option<String>,
    /// Base RNG seed; replicate k uses seed + k.
    #[arg(long)]
    seed: Option<u64>,
    /// How many independent replicates to write.
    #[arg(long)]
    replicates: Option<usize>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// JSON config file supplying any of the above; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct SimulateFileConfig {
    scenario: Option<String>,
    n: Option<usize>,
    p: Option<usize>,
    v2: Option<f64>,
    rho: Option<f64>,
    pop_var: Option<f64>,
    design: Option<String>,
    seed: Option<u64>,
    replicates: Option<usize>,
}

pub fn preset_from_name(name: &str) -> Result<SimConfig> {
    let lower = name.to_lowercase();
    if let Some(rest) = lower.strip_prefix("hd") {
        let variant: usize = rest
            .parse()
            .map_err(|_| usage(format!("unknown scenario '{name}'")))?;
        return hd_preset(variant).map_err(|e| usage(e.to_string()).into());
    }
    scenario_preset(name).map_err(|e| usage(e.to_string()).into())
}

pub fn parse_design(name: &str) -> Result<DesignKind> {
    match name.to_lowercase().as_str() {
        "gaussian" => Ok(DesignKind::Gaussian),
        "genotype" => Ok(DesignKind::Genotype),
        other => Err(usage(format!(
            "unknown design '{other}'; expected gaussian or genotype"
        ))
        .into()),
    }
}

pub fn run(args: SimulateArgs) -> Result<()> {
    let file: SimulateFileConfig = load_file_config(args.config.as_deref())?;
    let scenario = args
        .scenario
        .or(file.scenario)
        .ok_or_else(|| UsageError("--scenario is required (or set it in --config)".into()))?;
    let mut cfg = preset_from_name(&scenario)?;
    if let Some(n) = args.n.or(file.n) {
        cfg.n = n;
    }
    if let Some(p) = args.p.or(file.p) {
        cfg.j = p;
    }
    if let Some(v2) = args.v2.or(file.v2) {
        cfg.v2 = v2;
    }
    if let Some(rho) = args.rho.or(file.rho) {
        cfg.rho = rho;
    }
    if let Some(pop_var) = args.pop_var.or(file.pop_var) {
        cfg.pop_var = pop_var;
    }
    if let Some(design) = args.design.as_deref().or(file.design.as_deref()) {
        cfg.design = parse_design(design)?;
    }
    if let Some(seed) = args.seed.or(file.seed) {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let replicates = args.replicates.or(file.replicates).unwrap_or(1);
    if replicates == 0 {
        return Err(usage("--replicates must be at least 1").into());
    }

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating output directory {}", args.out.display()))?;
    let mut manifest = RunManifest::new("simulate", serde_json::to_value(&cfg)?);
    if let Some(config_path) = &args.config {
        manifest.add_input(config_path)?;
    }

    let base_seed = cfg.seed;
    for k in 0..replicates {
        let mut rep_cfg = cfg.clone();
        rep_cfg.seed = base_seed + k as u64;
        manifest.seeds.push(rep_cfg.seed);
        let (d, truth) = manifest.time("simulate", || simulate(&rep_cfg))?;
        let data_path = args.out.join(format!("rep_{k:03}.csv"));
        let truth_path = args.out.join(format!("rep_{k:03}_truth.json"));
        manifest.time("write", || -> Result<()> {
            write_csv(&d, &data_path)?;
            write_sim_truth(&truth_path, &rep_cfg, &truth, d.feature_names())?;
            Ok(())
        })?;
        manifest.add_output(&data_path);
        manifest.add_output(&truth_path);
        log::info!(
            "replicate {k}: {} samples x {} features, {} causal features",
            d.n(),
            d.j(),
            truth.causal.len()
        );
    }
    let manifest_path = manifest.write(&args.out)?;
    log::info!("wrote {}", manifest_path.display());
    Ok(())
}
