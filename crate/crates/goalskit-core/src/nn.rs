//! Local/global scores for a probabilistic last-layer network.
//!
//! A single hidden layer with fixed random inner weights ϑ (entries
//! N(0, 1/J)) maps inputs to activations H = act(Xϑ). With an isotropic
//! Gaussian over the outer weights w ~ N(0, v·I), the latent function
//! f = Hw is a Gaussian process with kernel K = v·HHᵀ, so scoring reduces
//! exactly to the GP machinery with this induced kernel. Perturbing feature
//! j shifts every pre-activation row by ξ·ϑ_{j,:} — a rank-one update of the
//! cached pre-activations — which makes the per-feature cross-gram products
//! O(N·L) instead of a fresh forward pass through the input layer.
//!
//! The outer-weight scale v and the residual variance σ² are selected by
//! maximizing the induced-GP log marginal likelihood on a refined grid; one
//! eigendecomposition of HHᵀ makes every (v, σ²) candidate an O(N) evaluation.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::goals::{GoalsReport, ModelMeta, XiSpec};
use crate::gp;
use crate::kernel::GramMatrix;
use crate::linalg;

/// Cap on N×L activation entries (512 MiB of f64) so an oversized width
/// fails fast instead of thrashing.
pub const MAX_ACTIVATION_ENTRIES: usize = 1 << 26;

/// Grid points per axis and refinement passes for the (v, σ²) search.
const GRID_POINTS: usize = 17;
const REFINE_LEVELS: usize = 4;
/// v is searched within this factor of 1/mean(diag HHᵀ) on both sides.
pub(crate) const V_BOX_FACTOR: f64 = 1e3;
/// σ² search range for a unit-variance response.
pub(crate) const SIGMA2_BOX: (f64, f64) = (1e-4, 10.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    /// Pass-through; with unit inner weights this makes the induced kernel
    /// the linear kernel, which anchors the module to the GP path in tests.
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }
}

/// A fitted random-feature model: fixed inner weights, an isotropic (by
/// default) Gaussian over outer weights, and a residual variance.
#[derive(Clone, Debug)]
pub struct RandomFeatureModel {
    /// J×L inner weights ϑ, drawn once and never trained.
    inner_weights: DMatrix<f64>,
    activation: Activation,
    /// Per-unit outer-weight variances (the shipped estimator is isotropic;
    /// the diagonal is kept general so a non-uniform estimate can plug in).
    v_diag: DVector<f64>,
    sigma2: f64,
    /// Cached N×L activations of the training inputs.
    h: DMatrix<f64>,
}

impl RandomFeatureModel {
    /// Assemble a model from explicit parts (used by tests and by callers
    /// that bring their own outer-weight variances).
    pub fn from_parts(
        d: &Dataset,
        inner_weights: DMatrix<f64>,
        activation: Activation,
        v_diag: DVector<f64>,
        sigma2: f64,
    ) -> Result<Self> {
        if inner_weights.nrows() != d.j() {
            return Err(Error::Mismatch {
                what: "inner weights".to_string(),
                detail: format!(
                    "{} weight rows for {} features",
                    inner_weights.nrows(),
                    d.j()
                ),
            });
        }
        let l = inner_weights.ncols();
        if l == 0 {
            return Err(Error::invalid("l", "need at least one hidden unit"));
        }
        if v_diag.len() != l {
            return Err(Error::Mismatch {
                what: "outer-weight variances".to_string(),
                detail: format!("{} variances for {} units", v_diag.len(), l),
            });
        }
        if v_diag.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::invalid(
                "v_diag",
                "outer-weight variances must be positive and finite",
            ));
        }
        if !sigma2.is_finite() || sigma2 <= 0.0 {
            return Err(Error::invalid("sigma2", "need a positive noise variance"));
        }
        let p = d.x() * &inner_weights;
        let h = p.map(|x| activation.apply(x));
        Ok(RandomFeatureModel {
            inner_weights,
            activation,
            v_diag,
            sigma2,
            h,
        })
    }

    pub fn inner_weights(&self) -> &DMatrix<f64> {
        &self.inner_weights
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn v_diag(&self) -> &DVector<f64> {
        &self.v_diag
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn width(&self) -> usize {
        self.inner_weights.ncols()
    }

    /// The kernel the model induces on the latent function: H·diag(V)·Hᵀ.
    pub fn induced_gram(&self) -> Result<GramMatrix> {
        let mut hs = self.h.clone();
        for (k, mut col) in hs.column_iter_mut().enumerate() {
            col *= self.v_diag[k];
        }
        GramMatrix::new(hs * self.h.transpose())
    }
}

/// Draw fixed random inner weights, then pick the outer-weight scale v and
/// noise σ² that maximize the induced-GP log marginal likelihood.
pub fn fit_random_features(
    d: &Dataset,
    l: usize,
    activation: Activation,
    seed: u64,
) -> Result<RandomFeatureModel> {
    if !d.is_standardized() {
        return Err(Error::NotStandardized {
            operation: "random-feature fit".to_string(),
        });
    }
    if l == 0 {
        return Err(Error::invalid("l", "need at least one hidden unit"));
    }
    let n = d.n();
    let j = d.j();
    if n.saturating_mul(l) > MAX_ACTIVATION_ENTRIES {
        return Err(Error::invalid(
            "l",
            format!(
                "N×L = {} activation entries exceeds the budget of {}",
                n * l,
                MAX_ACTIVATION_ENTRIES
            ),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = (1.0 / j as f64).sqrt();
    let inner_weights = DMatrix::from_fn(j, l, |_, _| {
        let v: f64 = StandardNormal.sample(&mut rng);
        v * scale
    });
    let p = d.x() * &inner_weights;
    let h = p.map(|x| activation.apply(x));

    // One symmetric eigendecomposition of G = HHᵀ turns every (v, σ²)
    // marginal-likelihood evaluation into an O(N) pass: A = vG + σ²I shares
    // G's eigenvectors, so both the quadratic form and the determinant
    // reduce to the eigenvalues.
    let g = &h * h.transpose();
    let mean_diag = g.diagonal().sum() / n as f64;
    if mean_diag <= 0.0 {
        return Err(Error::invalid(
            "activation",
            "the hidden activations are identically zero; the induced kernel is degenerate",
        ));
    }
    let eig = nalgebra::SymmetricEigen::new(g);
    let lambda: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0)).collect();
    let z = eig.eigenvectors.transpose() * d.y();

    let v0 = 1.0 / mean_diag;
    let (mut v_lo, mut v_hi) = (v0 / V_BOX_FACTOR, v0 * V_BOX_FACTOR);
    let (mut s_lo, mut s_hi) = SIGMA2_BOX;
    let mut best = (v0, s_lo, f64::NEG_INFINITY);
    for _ in 0..REFINE_LEVELS {
        let vs = log_grid(v_lo, v_hi, GRID_POINTS);
        let ss = log_grid(s_lo, s_hi, GRID_POINTS);
        let (mut bi, mut bk) = (0, 0);
        let mut bval = f64::NEG_INFINITY;
        for (i, &v) in vs.iter().enumerate() {
            for (k, &s2) in ss.iter().enumerate() {
                let val = lml_from_spectrum(&lambda, &z, v, s2);
                if val > bval {
                    bval = val;
                    bi = i;
                    bk = k;
                }
            }
        }
        best = (vs[bi], ss[bk], bval);
        v_lo = vs[bi.saturating_sub(1)];
        v_hi = vs[(bi + 1).min(GRID_POINTS - 1)];
        s_lo = ss[bk.saturating_sub(1)];
        s_hi = ss[(bk + 1).min(GRID_POINTS - 1)];
    }
    let (v, sigma2, _) = best;

    // Residual sanity: the posterior-mean network leaves y − Hw̄ = σ²A⁻¹y,
    // whose sample variance should sit near σ² on data the model explains.
    // A large gap flags a misspecified fit without distorting the selection.
    let denom: Vec<f64> = lambda.iter().map(|l| v * l + sigma2).collect();
    let scaled = DVector::from_fn(n, |i, _| sigma2 * z[i] / denom[i]);
    let resid = &eig.eigenvectors * scaled;
    let resid_var = linalg::sample_variance(resid.as_slice());
    if resid_var < sigma2 / 2.0 || resid_var > sigma2 * 2.0 {
        log::warn!(
            "selected noise variance {sigma2:.3e} is more than a factor 2 away from the residual variance {resid_var:.3e}"
        );
    }

    Ok(RandomFeatureModel {
        inner_weights,
        activation,
        v_diag: DVector::from_element(l, v),
        sigma2,
        h,
    })
}

fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..points)
        .map(|i| (llo + (lhi - llo) * i as f64 / (points - 1) as f64).exp())
        .collect()
}

/// Log marginal likelihood of y under N(0, vG + σ²I) given G's spectrum and
/// z = Qᵀy.
pub(crate) fn lml_from_spectrum(lambda: &[f64], z: &DVector<f64>, v: f64, sigma2: f64) -> f64 {
    let n = lambda.len();
    let mut quad = 0.0;
    let mut logdet = 0.0;
    for (l, zi) in lambda.iter().zip(z.iter()) {
        let d = v * l + sigma2;
        quad += zi * zi / d;
        logdet += d.ln();
    }
    -0.5 * (quad + logdet + n as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// Local and global scores under the induced kernel. The response surface
/// is the GP posterior mean with K = H·diag(V)·Hᵀ; each feature's perturbed
/// cross-gram acts through the cached pre-activations, never re-touching the
/// input layer.
pub fn nn_goals_scores(m: &RandomFeatureModel, d: &Dataset, xi: f64) -> Result<GoalsReport> {
    if !xi.is_finite() {
        return Err(Error::invalid("xi", "perturbation must be finite"));
    }
    if m.h.nrows() != d.n() || m.inner_weights.nrows() != d.j() {
        return Err(Error::Mismatch {
            what: "model/dataset".to_string(),
            detail: format!(
                "model built for {}x{}, dataset is {}x{}",
                m.h.nrows(),
                m.inner_weights.nrows(),
                d.n(),
                d.j()
            ),
        });
    }
    let p = d.x() * &m.inner_weights;
    // The stored activations must be exactly what this dataset produces;
    // anything else means the model was fitted elsewhere.
    for (cached, fresh) in m.h.iter().zip(p.iter()) {
        if *cached != m.activation.apply(*fresh) {
            return Err(Error::Mismatch {
                what: "model/dataset".to_string(),
                detail: "cached activations do not reproduce from this dataset".to_string(),
            });
        }
    }
    let g = gp::fit_with_gram(d, m.induced_gram()?, Some(m.sigma2))?;
    let n = d.n();
    let j_all = d.j();
    let l = m.width();

    // B^(j)ᵀα = H^(j)·(V∘(Hᵀα)) — precompute the L-vector once.
    let vt = {
        let mut t = m.h.transpose() * g.alpha();
        for (k, e) in t.iter_mut().enumerate() {
            *e *= m.v_diag[k];
        }
        t
    };

    let columns: Vec<DVector<f64>> = (0..j_all)
        .into_par_iter()
        .map(|j| {
            if xi == 0.0 {
                return DVector::zeros(n);
            }
            // Perturbing feature j adds ξ·ϑ_{j,:} to every pre-activation
            // row; walk the cached pre-activations column by column.
            let mut bta = DVector::zeros(n);
            for k in 0..l {
                let shift = xi * m.inner_weights[(j, k)];
                let c = vt[k];
                if c == 0.0 && shift == 0.0 {
                    continue;
                }
                let col = p.column(k);
                for i in 0..n {
                    bta[i] += m.activation.apply(col[i] + shift) * c;
                }
            }
            g.f_hat() - bta
        })
        .collect();

    let mut local = DMatrix::zeros(n, j_all);
    let mut global = DVector::zeros(j_all);
    let mut global_abs = DVector::zeros(j_all);
    for (j, col) in columns.iter().enumerate() {
        local.set_column(j, col);
        global[j] = col.sum() / n as f64;
        global_abs[j] = col.iter().map(|v| v.abs()).sum::<f64>() / n as f64;
    }
    Ok(GoalsReport {
        xi: XiSpec::Constant(xi),
        features: (0..j_all).collect(),
        local,
        global,
        global_abs,
        meta: ModelMeta {
            kernel: format!("random-features({}, width {})", m.activation.name(), l),
            theta: None,
            sigma2: m.sigma2,
        },
        local_sd: None,
        global_cov: None,
    })
}
