//! Synthetic benchmark generator.
//!
//! Responses follow the additive-plus-interaction-plus-structure model
//!
//!   y = Σ_{c} x_c β_c + Wτ + Zω + ε,
//!
//! where W holds element-wise products of feature pairs and Z holds the top
//! principal components of the design. Effects are drawn standard normal and
//! every component is centered, orthogonalized against the components before
//! it, and rescaled so its realized *sample* variance hits its target
//! exactly: the additive part explains ρv², interactions (1−ρ)v², the PC
//! structure its configured share, and noise fills the rest so the total
//! sample variance of y is 1. That exactness is what lets downstream checks
//! assert variance shares at 1e−10 instead of statistically.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg;

/// XOR'd into the seed for the response stream so design and response draws
/// never share a generator state.
const RESPONSE_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// Number of principal components used for the population-structure term.
pub const POP_PCS: usize = 10;

/// Attempts to redraw a monomorphic genotype column before giving up.
const GENOTYPE_RESAMPLE_LIMIT: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignKind {
    /// iid standard-normal entries, columns z-scored.
    Gaussian,
    /// Synthetic biallelic genotypes: per-column minor-allele frequency drawn
    /// Uniform(0.01, 0.5), entries Binomial(2, MAF), columns z-scored.
    Genotype,
}

/// Full description of one synthetic dataset.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub j: usize,
    /// Fraction of the response variance carried by the causal signal.
    pub v2: f64,
    /// Fraction of the signal that is additive (the rest is interactions).
    pub rho: f64,
    /// Variance share of the principal-component structure term.
    pub pop_var: f64,
    /// Label recorded in outputs ("I".."VI", "hd1".."hd4", "custom").
    pub scenario: String,
    /// 0-based indices with additive effects.
    pub additive: Vec<usize>,
    /// 0-based index pairs whose element-wise products carry interactions.
    pub interaction_pairs: Vec<(usize, usize)>,
    /// A feature whose additive effect applies to only half of the samples:
    /// the half with the largest values of the feature (the affected rows
    /// are exported in the truth record, and the effect is centered within
    /// the affected half).
    pub half_population_feature: Option<usize>,
    /// Draw this many causal features at generation time instead of listing
    /// them: all of them get additive effects, and when rho < 1 each is also
    /// paired with one random causal partner for an interaction.
    pub random_causal: Option<usize>,
    pub seed: u64,
    pub design: DesignKind,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::TooFewRows {
                need: 2,
                found: self.n,
            });
        }
        if self.j == 0 {
            return Err(Error::invalid("j", "need at least one feature"));
        }
        if !(self.v2 > 0.0 && self.v2 < 1.0) {
            return Err(Error::invalid(
                "v2",
                format!("signal fraction must lie in (0,1), got {}", self.v2),
            ));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::invalid(
                "rho",
                format!("additive fraction must lie in (0,1], got {}", self.rho),
            ));
        }
        if !(0.0..=1.0).contains(&self.pop_var) || self.v2 + self.pop_var > 1.0 {
            return Err(Error::invalid(
                "pop_var",
                format!(
                    "structure share must lie in [0, 1 - v2] = [0, {}], got {}",
                    1.0 - self.v2,
                    self.pop_var
                ),
            ));
        }
        for &c in &self.additive {
            self.check_index(c)?;
        }
        for &(a, b) in &self.interaction_pairs {
            self.check_index(a)?;
            self.check_index(b)?;
        }
        if let Some(f) = self.half_population_feature {
            self.check_index(f)?;
        }
        if self.rho == 1.0 && !self.interaction_pairs.is_empty() {
            return Err(Error::invalid(
                "rho",
                "rho = 1 assigns the whole signal to additive effects, which contradicts a nonempty interaction list",
            ));
        }
        if let Some(c) = self.random_causal {
            if c == 0 || c > self.j {
                return Err(Error::invalid(
                    "random_causal",
                    format!("need 1..=j causal features, got {c} of {}", self.j),
                ));
            }
            if !self.additive.is_empty() || !self.interaction_pairs.is_empty() {
                return Err(Error::invalid(
                    "random_causal",
                    "either list the causal structure explicitly or draw it randomly, not both",
                ));
            }
        }
        Ok(())
    }

    fn check_index(&self, c: usize) -> Result<()> {
        if c >= self.j {
            return Err(Error::FeatureIndexOutOfRange {
                index: c,
                limit: self.j,
            });
        }
        Ok(())
    }

    /// Union of every feature the response depends on, sorted.
    pub fn causal_features(&self) -> Vec<usize> {
        let mut set: Vec<usize> = self
            .additive
            .iter()
            .copied()
            .chain(self.interaction_pairs.iter().flat_map(|&(a, b)| [a, b]))
            .chain(self.half_population_feature)
            .collect();
        set.sort_unstable();
        set.dedup();
        set
    }
}

/// Benchmark presets on 25 features (indices are 0-based, so the feature
/// displayed as x23 is index 22):
///
/// * I   — additive {22,23,24} with interactions (22,24), (23,24)
/// * II  — additive {22,23,24}; separate group {7,8,9} interacts only
/// * III — additive {22,23,24}; interactions straddle both groups
/// * IV  — interactions only, no additive effects
/// * V   — pure noise, no causal features
/// * VI  — Scenario I plus feature 21 additive on the half of samples where
///   the feature value is largest
pub fn scenario_preset(name: &str) -> Result<SimConfig> {
    let mut cfg = SimConfig {
        n: 500,
        j: 25,
        v2: 0.6,
        rho: 0.5,
        pop_var: 0.0,
        scenario: name.to_uppercase(),
        additive: vec![],
        interaction_pairs: vec![],
        half_population_feature: None,
        random_causal: None,
        seed: 0,
        design: DesignKind::Gaussian,
    };
    match cfg.scenario.as_str() {
        "I" => {
            cfg.additive = vec![22, 23, 24];
            cfg.interaction_pairs = vec![(22, 24), (23, 24)];
        }
        "II" => {
            cfg.additive = vec![22, 23, 24];
            cfg.interaction_pairs = vec![(7, 9), (8, 9)];
        }
        "III" => {
            cfg.additive = vec![22, 23, 24];
            cfg.interaction_pairs = vec![(7, 9), (8, 24)];
        }
        "IV" => {
            cfg.interaction_pairs = vec![(7, 9), (8, 9), (22, 24), (23, 24)];
        }
        "V" => {}
        "VI" => {
            cfg.additive = vec![22, 23, 24];
            cfg.interaction_pairs = vec![(22, 24), (23, 24)];
            cfg.half_population_feature = Some(21);
        }
        other => {
            return Err(Error::invalid(
                "scenario",
                format!("unknown preset {other:?}; expected I..VI"),
            ))
        }
    }
    Ok(cfg)
}

/// High-dimensional genotype presets (1000 features, 30 random causal,
/// v² = 0.3): variant 1 = all-additive without structure, 2 = all-additive
/// with a 10% PC-structure share, 3 and 4 = the same pair at ρ = 0.5.
pub fn hd_preset(variant: usize) -> Result<SimConfig> {
    let (rho, pop_var) = match variant {
        1 => (1.0, 0.0),
        2 => (1.0, 0.1),
        3 => (0.5, 0.0),
        4 => (0.5, 0.1),
        other => {
            return Err(Error::invalid(
                "variant",
                format!("high-dimensional presets are 1..=4, got {other}"),
            ))
        }
    };
    Ok(SimConfig {
        n: 500,
        j: 1000,
        v2: 0.3,
        rho,
        pop_var,
        scenario: format!("hd{variant}"),
        additive: vec![],
        interaction_pairs: vec![],
        half_population_feature: None,
        random_causal: Some(30),
        seed: 0,
        design: DesignKind::Genotype,
    })
}

/// Everything injected into one synthetic response.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimTruth {
    /// Sorted union of all features the response depends on (0-based).
    pub causal: Vec<usize>,
    pub additive: Vec<usize>,
    /// Additive effects after component rescaling, aligned with `additive`.
    pub beta: Vec<f64>,
    pub interaction_pairs: Vec<(usize, usize)>,
    /// Interaction effects after rescaling, aligned with `interaction_pairs`.
    pub tau: Vec<f64>,
    /// Principal-component effects after rescaling (empty when unused).
    pub omega: Vec<f64>,
    pub half_population_feature: Option<usize>,
    pub half_population_beta: Option<f64>,
    /// Which samples the half-population effect applies to.
    pub affected_mask: Option<Vec<bool>>,
    pub realized_variance: RealizedVariance,
}

/// Sample variances (N−1 denominator) of the final response components.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RealizedVariance {
    pub additive: f64,
    pub interaction: f64,
    pub population: f64,
    pub noise: f64,
    pub total: f64,
}

/// Design metadata kept for tests and truth records.
#[derive(Clone, Debug)]
#[cfg_attr(not(test), allow(dead_code))]
pub(crate) struct DesignDetails {
    /// Drawn minor-allele frequency per column (genotype designs only).
    pub mafs: Option<Vec<f64>>,
    /// Raw allele counts before standardization (genotype designs only).
    pub raw: Option<DMatrix<f64>>,
}

/// Draw the design matrix. Columns are z-scored (sample mean 0, sample SD 1)
/// so the assembled dataset is honestly standardized; the response is
/// generated from these same columns. The placeholder response is zero and
/// the returned dataset is deliberately *not* flagged standardized — it is
/// input material for [`generate_response`], not a fittable dataset.
pub fn generate_design(cfg: &SimConfig) -> Result<Dataset> {
    Ok(generate_design_details(cfg)?.0)
}

pub(crate) fn generate_design_details(cfg: &SimConfig) -> Result<(Dataset, DesignDetails)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut x, details) = match cfg.design {
        DesignKind::Gaussian => {
            let x = DMatrix::from_fn(cfg.n, cfg.j, |_, _| {
                let v: f64 = StandardNormal.sample(&mut rng);
                v
            });
            (
                x,
                DesignDetails {
                    mafs: None,
                    raw: None,
                },
            )
        }
        DesignKind::Genotype => {
            let mut x = DMatrix::zeros(cfg.n, cfg.j);
            let mut mafs = Vec::with_capacity(cfg.j);
            for c in 0..cfg.j {
                let (maf, col) = draw_genotype_column(&mut rng, cfg.n, c)?;
                x.column_mut(c).copy_from_slice(&col);
                mafs.push(maf);
            }
            let raw = x.clone();
            (
                x,
                DesignDetails {
                    mafs: Some(mafs),
                    raw: Some(raw),
                },
            )
        }
    };
    zscore_columns(&mut x)?;
    let names = (0..cfg.j).map(|c| format!("x{}", c + 1)).collect();
    let d = Dataset::from_parts(x, DVector::zeros(cfg.n), Some(names))?;
    Ok((d, details))
}

fn draw_genotype_column(rng: &mut ChaCha8Rng, n: usize, c: usize) -> Result<(f64, Vec<f64>)> {
    for _ in 0..GENOTYPE_RESAMPLE_LIMIT {
        let maf = rng.gen_range(0.01..0.5);
        let binom = Binomial::new(2, maf).expect("maf in (0,1)");
        let mut col = Vec::with_capacity(n);
        for _ in 0..n {
            col.push(binom.sample(&mut *rng) as f64);
        }
        let first = col[0];
        if col.iter().any(|v| *v != first) {
            return Ok((maf, col));
        }
    }
    Err(Error::invalid(
        "design",
        format!(
            "genotype column {} stayed monomorphic after {GENOTYPE_RESAMPLE_LIMIT} resamples",
            c + 1
        ),
    ))
}

fn zscore_columns(x: &mut DMatrix<f64>) -> Result<()> {
    let n = x.nrows();
    for c in 0..x.ncols() {
        let mut col = x.column_mut(c);
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
        if var == 0.0 {
            return Err(Error::ConstantColumn {
                name: format!("x{}", c + 1),
            });
        }
        let sd = var.sqrt();
        for v in col.iter_mut() {
            *v = (*v - mean) / sd;
        }
    }
    Ok(())
}

/// Generate the response for a design produced by [`generate_design`] and
/// return it with the full truth record.
pub fn generate_response(d: &Dataset, cfg: &SimConfig) -> Result<(DVector<f64>, SimTruth)> {
    cfg.validate()?;
    if d.n() != cfg.n || d.j() != cfg.j {
        return Err(Error::Mismatch {
            what: "design shape".to_string(),
            detail: format!(
                "config expects {}x{}, design is {}x{}",
                cfg.n,
                cfg.j,
                d.n(),
                d.j()
            ),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ RESPONSE_STREAM);
    let n = cfg.n;
    let x = d.x();

    // Causal structure: as configured, or drawn now for the random presets.
    let (additive, pairs) = match cfg.random_causal {
        None => (cfg.additive.clone(), cfg.interaction_pairs.clone()),
        Some(c) => {
            let causal = rand::seq::index::sample(&mut rng, cfg.j, c).into_vec();
            let pairs = if cfg.rho < 1.0 && c >= 2 {
                let mut seen = std::collections::BTreeSet::new();
                for (slot, &a) in causal.iter().enumerate() {
                    let mut pick = rng.gen_range(0..c - 1);
                    if pick >= slot {
                        pick += 1;
                    }
                    let b = causal[pick];
                    seen.insert((a.min(b), a.max(b)));
                }
                seen.into_iter().collect()
            } else {
                vec![]
            };
            (causal, pairs)
        }
    };

    // Effective additive fraction: all signal is additive when there are no
    // interactions, and all of it is interactive when nothing is additive.
    let has_additive = !additive.is_empty() || cfg.half_population_feature.is_some();
    let has_interactions = !pairs.is_empty();
    let rho_eff = match (has_additive, has_interactions) {
        (true, true) => cfg.rho,
        (true, false) => 1.0,
        (false, true) => 0.0,
        (false, false) => 0.0,
    };
    let v2_eff = if has_additive || has_interactions {
        cfg.v2
    } else {
        0.0
    };
    let t_additive = rho_eff * v2_eff;
    let t_interaction = (1.0 - rho_eff) * v2_eff;
    let t_pop = cfg.pop_var;
    let t_noise = 1.0 - v2_eff - t_pop;

    // Raw components, before centering/orthogonalization/rescaling.
    let mut beta: Vec<f64> = (0..additive.len())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let mut additive_raw = DVector::zeros(n);
    for (k, &c) in additive.iter().enumerate() {
        additive_raw.axpy(beta[k], &x.column(c).clone_owned(), 1.0);
    }
    let mut half_beta = None;
    let mut affected_mask = None;
    if let Some(f) = cfg.half_population_feature {
        let b: f64 = StandardNormal.sample(&mut rng);
        // The affected half is the carrier-style half: the ⌊n/2⌋ samples with
        // the largest values of the feature itself. Defining the subgroup
        // through the covariate (rather than an unobservable random label)
        // is what lets a fitted model carry a different slope for each half,
        // which is the whole point of a subgroup-specific effect. The effect
        // is centered within the affected half so the two halves keep the
        // same mean response; otherwise the subgroup offset bleeds into the
        // local scores of every feature instead of just this one.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_unstable_by(|&a, &c| x[(a, f)].total_cmp(&x[(c, f)]));
        let mut mask = vec![false; n];
        for &i in &order[n - n / 2..] {
            mask[i] = true;
        }
        let m_aff = order[n - n / 2..]
            .iter()
            .map(|&i| x[(i, f)])
            .sum::<f64>()
            / (n / 2) as f64;
        for i in 0..n {
            if mask[i] {
                additive_raw[i] += b * (x[(i, f)] - m_aff);
            }
        }
        half_beta = Some(b);
        affected_mask = Some(mask);
    }

    let mut tau: Vec<f64> = (0..pairs.len())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let mut interaction_raw = DVector::zeros(n);
    for (k, &(a, b)) in pairs.iter().enumerate() {
        for i in 0..n {
            interaction_raw[i] += tau[k] * x[(i, a)] * x[(i, b)];
        }
    }

    let mut omega: Vec<f64> = vec![];
    let mut pop_raw = DVector::zeros(n);
    if t_pop > 0.0 {
        if POP_PCS > (cfg.n - 1).min(cfg.j) {
            return Err(Error::invalid(
                "pop_var",
                format!(
                    "the structure term needs {POP_PCS} principal components, but only {} are available",
                    (cfg.n - 1).min(cfg.j)
                ),
            ));
        }
        // The design columns are already z-scored; wrap them with the
        // standardized flag to run the PC decomposition.
        let std_view = Dataset::from_standardized_parts(
            x.clone(),
            DVector::zeros(n),
            d.feature_names().to_vec(),
            DVector::zeros(cfg.j),
            DVector::from_element(cfg.j, 1.0),
            0.0,
            1.0,
        )?;
        let z = std_view.top_principal_components(POP_PCS)?;
        omega = (0..POP_PCS).map(|_| StandardNormal.sample(&mut rng)).collect();
        for (k, w) in omega.iter().enumerate() {
            pop_raw.axpy(*w, &z.column(k).clone_owned(), 1.0);
        }
    }

    let noise_raw = DVector::from_fn(n, |_, _| {
        let v: f64 = StandardNormal.sample(&mut rng);
        v
    });

    // Center, orthogonalize sequentially, scale to the exact targets.
    let mut accepted: Vec<DVector<f64>> = vec![];
    let mut finalize = |raw: DVector<f64>, target: f64, what: &str| -> Result<(DVector<f64>, f64)> {
        if target == 0.0 {
            return Ok((DVector::zeros(n), 0.0));
        }
        let mut v = raw;
        let mean = v.sum() / n as f64;
        for e in v.iter_mut() {
            *e -= mean;
        }
        for u in &accepted {
            let coef = v.dot(u) / u.dot(u);
            v.axpy(-coef, u, 1.0);
        }
        let var = linalg::sample_variance(v.as_slice());
        if var <= f64::EPSILON * n as f64 {
            return Err(Error::invalid(
                "component",
                format!("the {what} component is degenerate after orthogonalization; cannot scale it to variance {target}"),
            ));
        }
        let scale = (target / var).sqrt();
        v *= scale;
        accepted.push(v.clone());
        Ok((v, scale))
    };

    let (additive_final, s_add) = finalize(additive_raw, t_additive, "additive")?;
    let (interaction_final, s_int) = finalize(interaction_raw, t_interaction, "interaction")?;
    let (pop_final, s_pop) = finalize(pop_raw, t_pop, "structure")?;
    let (noise_final, _) = finalize(noise_raw, t_noise, "noise")?;

    let y = &additive_final + &interaction_final + &pop_final + &noise_final;

    for v in beta.iter_mut() {
        *v *= s_add;
    }
    for v in tau.iter_mut() {
        *v *= s_int;
    }
    for v in omega.iter_mut() {
        *v *= s_pop;
    }
    let realized = RealizedVariance {
        additive: linalg::sample_variance(additive_final.as_slice()),
        interaction: linalg::sample_variance(interaction_final.as_slice()),
        population: linalg::sample_variance(pop_final.as_slice()),
        noise: linalg::sample_variance(noise_final.as_slice()),
        total: linalg::sample_variance(y.as_slice()),
    };
    let causal = {
        let mut set: Vec<usize> = additive
            .iter()
            .copied()
            .chain(pairs.iter().flat_map(|&(a, b)| [a, b]))
            .chain(cfg.half_population_feature)
            .collect();
        set.sort_unstable();
        set.dedup();
        set
    };
    let truth = SimTruth {
        causal,
        additive,
        beta,
        interaction_pairs: pairs,
        tau,
        omega,
        half_population_feature: cfg.half_population_feature,
        half_population_beta: half_beta.map(|b| b * s_add),
        affected_mask,
        realized_variance: realized,
    };
    Ok((y, truth))
}

/// Design + response in one call, assembled into a standardized dataset
/// ready for fitting.
pub fn simulate(cfg: &SimConfig) -> Result<(Dataset, SimTruth)> {
    let design = generate_design(cfg)?;
    let (y, truth) = generate_response(&design, cfg)?;
    let names = design.feature_names().to_vec();
    let j = design.j();
    let x = design.x().clone();
    let d = Dataset::from_standardized_parts(
        x,
        y,
        names,
        DVector::zeros(j),
        DVector::from_element(j, 1.0),
        0.0,
        1.0,
    )?;
    Ok((d, truth))
}
