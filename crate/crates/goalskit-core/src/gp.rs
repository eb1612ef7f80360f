//! Weight-space Gaussian-process regression.
//!
//! The model is y = f + ε with f ~ N(0, K) and ε ~ N(0, σ²I), so the marginal
//! covariance of the response is A = K + σ²I. Everything downstream hangs off
//! the Cholesky factor of A and the solve α = A⁻¹y: the posterior mean of f
//! is Kα and its covariance is K − KA⁻¹K. A is never inverted densely — all
//! solves go through the factor.

use std::io::Write as _;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::kernel::{gram_matrix, GramMatrix, KernelConfig};
use crate::linalg;

/// Format tag written into serialized model headers.
pub const GP_FORMAT: &str = "goalskit.gp.v1";

/// Noise-variance search range, as multiples of Var(y).
const SIGMA2_RANGE: (f64, f64) = (1e-4, 10.0);
/// Absolute bracket tolerance for the golden-section search.
const SIGMA2_TOL: f64 = 1e-4;

/// How the training covariance was obtained.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FitKernel {
    /// Built from the design matrix with this kernel.
    Kernel(KernelConfig),
    /// Supplied directly (e.g. induced by a random-feature model). Models fit
    /// this way cannot be serialized because the covariance is not
    /// reconstructible from the dataset alone.
    Precomputed,
}

impl FitKernel {
    /// The kernel config, if the covariance came from one.
    pub fn config(&self) -> Option<&KernelConfig> {
        match self {
            FitKernel::Kernel(cfg) => Some(cfg),
            FitKernel::Precomputed => None,
        }
    }
}

/// A fitted GP: kernel, noise variance, and the solver state derived from it.
#[derive(Clone, Debug)]
pub struct FittedGP {
    kernel: FitKernel,
    k: GramMatrix,
    sigma2: f64,
    chol_a: Cholesky<f64, Dyn>,
    jitter: f64,
    alpha: DVector<f64>,
    f_hat: DVector<f64>,
    log_marginal: f64,
    data_hash: String,
    n_features: usize,
}

impl FittedGP {
    pub fn kernel(&self) -> &FitKernel {
        &self.kernel
    }

    pub fn gram(&self) -> &GramMatrix {
        &self.k
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// Diagonal ridge added to A during factorization (usually zero).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// α = A⁻¹y for the training response.
    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Posterior mean of f at the training inputs, Kα.
    pub fn f_hat(&self) -> &DVector<f64> {
        &self.f_hat
    }

    pub fn log_marginal(&self) -> f64 {
        self.log_marginal
    }

    pub fn n(&self) -> usize {
        self.alpha.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Digest of the dataset the model was fit on.
    pub fn data_hash(&self) -> &str {
        &self.data_hash
    }

    /// A⁻¹v via the Cholesky factor.
    pub fn solve_a_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol_a.solve(v)
    }

    /// A⁻¹M via the Cholesky factor (one triangular pair per column).
    pub fn solve_a_mat(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol_a.solve(m)
    }

    /// Lower-triangular factor L with LLᵀ = A (+ jitter).
    pub fn chol_l(&self) -> DMatrix<f64> {
        self.chol_a.l()
    }

    /// Posterior distribution of the latent f given a response vector:
    /// mean KA⁻¹y, covariance K − KA⁻¹K (symmetrized).
    ///
    /// `y` may be any vector of the right length — the posterior mean is
    /// linear in it — though the model's own training response is the usual
    /// argument.
    pub fn posterior_f(&self, y: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        if y.len() != self.n() {
            return Err(Error::Mismatch {
                what: "response length".to_string(),
                detail: format!("{} entries for a model fit on {} rows", y.len(), self.n()),
            });
        }
        let kv = self.k.values();
        let mean = kv * self.chol_a.solve(y);
        let ainv_k = self.chol_a.solve(kv);
        let mut cov = kv - kv * ainv_k;
        linalg::symmetrize(&mut cov);
        Ok((mean, cov))
    }
}

/// Fit the GP on a standardized dataset. When `sigma2` is `None` the noise
/// variance is chosen by golden-section maximization of the log marginal
/// likelihood over [1e−4, 10]·Var(y).
pub fn fit(d: &Dataset, cfg: &KernelConfig, sigma2: Option<f64>) -> Result<FittedGP> {
    require_standardized(d, "gp fit")?;
    cfg.validate()?;
    let k = gram_matrix(cfg, d.x())?;
    fit_on_gram(d, FitKernel::Kernel(*cfg), k, sigma2)
}

/// Fit on a precomputed covariance instead of a kernel evaluation. Used for
/// covariances induced by other models (e.g. scaled HHᵀ from random features).
pub fn fit_with_gram(d: &Dataset, k: GramMatrix, sigma2: Option<f64>) -> Result<FittedGP> {
    require_standardized(d, "gp fit")?;
    fit_on_gram(d, FitKernel::Precomputed, k, sigma2)
}

fn fit_on_gram(
    d: &Dataset,
    kernel: FitKernel,
    k: GramMatrix,
    sigma2: Option<f64>,
) -> Result<FittedGP> {
    if k.n() != d.n() {
        return Err(Error::Mismatch {
            what: "gram size".to_string(),
            detail: format!("{}x{} gram for {} rows", k.n(), k.n(), d.n()),
        });
    }
    let y = d.y();
    let sigma2 = match sigma2 {
        Some(s) => {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::invalid(
                    "sigma2",
                    format!("noise variance must be finite and positive, got {s}"),
                ));
            }
            s
        }
        None => select_sigma2(&k, y),
    };
    let (chol_a, jitter) = factor_a(&k, sigma2)?;
    let alpha = chol_a.solve(y);
    let f_hat = k.values() * &alpha;
    let log_marginal = lml_from_parts(&chol_a, y, &alpha);
    Ok(FittedGP {
        kernel,
        k,
        sigma2,
        chol_a,
        jitter,
        alpha,
        f_hat,
        log_marginal,
        data_hash: d.content_hash(),
        n_features: d.j(),
    })
}

/// Log marginal likelihood −½yᵀA⁻¹y − ½ log det A − (N/2) log 2π.
pub fn log_marginal_likelihood(d: &Dataset, cfg: &KernelConfig, sigma2: f64) -> Result<f64> {
    require_standardized(d, "log marginal likelihood")?;
    cfg.validate()?;
    let k = gram_matrix(cfg, d.x())?;
    log_marginal_likelihood_from_gram(&k, d.y(), sigma2)
}

/// Log marginal likelihood for an explicit covariance.
pub fn log_marginal_likelihood_from_gram(
    k: &GramMatrix,
    y: &DVector<f64>,
    sigma2: f64,
) -> Result<f64> {
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(Error::invalid(
            "sigma2",
            format!("noise variance must be finite and positive, got {sigma2}"),
        ));
    }
    if y.len() != k.n() {
        return Err(Error::Mismatch {
            what: "response length".to_string(),
            detail: format!("{} entries for a {}-row gram", y.len(), k.n()),
        });
    }
    let (chol, _) = factor_a(k, sigma2)?;
    let alpha = chol.solve(y);
    Ok(lml_from_parts(&chol, y, &alpha))
}

fn lml_from_parts(chol: &Cholesky<f64, Dyn>, y: &DVector<f64>, alpha: &DVector<f64>) -> f64 {
    let n = y.len() as f64;
    -0.5 * y.dot(alpha) - 0.5 * chol.ln_determinant() - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
}

fn factor_a(k: &GramMatrix, sigma2: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let mut a = k.values().clone();
    for i in 0..a.nrows() {
        a[(i, i)] += sigma2;
    }
    linalg::cholesky_with_jitter(&a, "marginal covariance A = K + sigma2*I")
}

/// Golden-section maximization of the marginal likelihood in σ².
fn select_sigma2(k: &GramMatrix, y: &DVector<f64>) -> f64 {
    let var_y = linalg::sample_variance(y.as_slice());
    let scale = if var_y > 0.0 { var_y } else { 1.0 };
    let (mut a, mut b) = (SIGMA2_RANGE.0 * scale, SIGMA2_RANGE.1 * scale);
    let eval = |s: f64| -> f64 {
        match factor_a(k, s) {
            Ok((chol, _)) => {
                let alpha = chol.solve(y);
                lml_from_parts(&chol, y, &alpha)
            }
            Err(_) => f64::NEG_INFINITY,
        }
    };
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = eval(c);
    let mut fd = eval(d);
    while b - a > SIGMA2_TOL {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = eval(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = eval(d);
        }
    }
    0.5 * (a + b)
}

fn require_standardized(d: &Dataset, operation: &str) -> Result<()> {
    if !d.is_standardized() {
        return Err(Error::NotStandardized {
            operation: operation.to_string(),
        });
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct GpHeader {
    format: String,
    kernel: KernelConfig,
    sigma2: f64,
    jitter: f64,
    n: usize,
    n_features: usize,
    log_marginal: f64,
    data_hash: String,
    sidecar: String,
    payload_sha256: String,
}

/// Serialize a fitted model: a JSON header at `path` plus a binary sidecar
/// `<path>.bin` holding the Cholesky factor (column-major f64 LE) followed by
/// α. Models fit on precomputed covariances cannot be saved.
pub fn save_gp(g: &FittedGP, path: &Path) -> Result<()> {
    let cfg = match g.kernel {
        FitKernel::Kernel(cfg) => cfg,
        FitKernel::Precomputed => {
            return Err(Error::invalid(
                "model",
                "precomputed-covariance fits cannot be serialized; refit from the dataset",
            ))
        }
    };
    let n = g.n();
    let l = g.chol_a.l();
    let mut payload = Vec::with_capacity((n * n + n) * 8);
    for v in l.iter() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    for v in g.alpha.iter() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    let payload_sha256 = format!("{:x}", Sha256::digest(&payload));
    let sidecar_name = match path.file_name() {
        Some(f) => format!("{}.bin", f.to_string_lossy()),
        None => return Err(Error::invalid("path", "model path has no file name")),
    };
    let header = GpHeader {
        format: GP_FORMAT.to_string(),
        kernel: cfg,
        sigma2: g.sigma2,
        jitter: g.jitter,
        n,
        n_features: g.n_features,
        log_marginal: g.log_marginal,
        data_hash: g.data_hash.clone(),
        sidecar: sidecar_name.clone(),
        payload_sha256,
    };
    let json = serde_json::to_string_pretty(&header).map_err(|e| Error::ReportFormat {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(json.as_bytes()).map_err(|e| Error::io(path, e))?;
    let sidecar_path = path.with_file_name(&sidecar_name);
    std::fs::write(&sidecar_path, &payload).map_err(|e| Error::io(&sidecar_path, e))?;
    Ok(())
}

/// Rehydrate a saved model against the dataset it was fit on. The dataset
/// digest, payload digest, and the LLᵀ ≈ K + σ²I reconstruction are all
/// verified before the model is returned.
pub fn load_gp(path: &Path, d: &Dataset) -> Result<FittedGP> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header: GpHeader = serde_json::from_str(&raw).map_err(|e| Error::ReportFormat {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    if header.format != GP_FORMAT {
        return Err(Error::ReportFormat {
            path: path.to_path_buf(),
            detail: format!("expected format {GP_FORMAT}, found {}", header.format),
        });
    }
    if d.content_hash() != header.data_hash {
        return Err(Error::Mismatch {
            what: "dataset digest".to_string(),
            detail: "the provided dataset is not the one the model was fit on".to_string(),
        });
    }
    if d.n() != header.n || d.j() != header.n_features {
        return Err(Error::Mismatch {
            what: "dataset shape".to_string(),
            detail: format!(
                "model expects {}x{}, dataset is {}x{}",
                header.n,
                header.n_features,
                d.n(),
                d.j()
            ),
        });
    }
    let sidecar_path = path.with_file_name(&header.sidecar);
    let payload = std::fs::read(&sidecar_path).map_err(|e| Error::io(&sidecar_path, e))?;
    let n = header.n;
    let expected_len = (n * n + n) * 8;
    if payload.len() != expected_len {
        return Err(Error::ReportFormat {
            path: sidecar_path.clone(),
            detail: format!("payload is {} bytes, expected {expected_len}", payload.len()),
        });
    }
    let digest = format!("{:x}", Sha256::digest(&payload));
    if digest != header.payload_sha256 {
        return Err(Error::ReportFormat {
            path: sidecar_path.clone(),
            detail: "payload digest mismatch (file corrupted or replaced)".to_string(),
        });
    }
    let mut take = payload.chunks_exact(8);
    let mut l = DMatrix::<f64>::zeros(n, n);
    for v in l.iter_mut() {
        *v = f64::from_le_bytes(take.next().unwrap().try_into().unwrap());
    }
    let mut alpha = DVector::<f64>::zeros(n);
    for v in alpha.iter_mut() {
        *v = f64::from_le_bytes(take.next().unwrap().try_into().unwrap());
    }
    let k = gram_matrix(&header.kernel, d.x())?;
    // Verify the stored factor actually reproduces K + σ²I (+ jitter).
    let recon = &l * l.transpose();
    let mut a = k.values().clone();
    for i in 0..n {
        a[(i, i)] += header.sigma2 + header.jitter;
    }
    let rel = (&recon - &a).norm() / a.norm();
    if rel > 1e-8 {
        return Err(Error::Mismatch {
            what: "stored Cholesky factor".to_string(),
            detail: format!("LLt deviates from K + sigma2*I by relative error {rel:.3e}"),
        });
    }
    let chol_a = Cholesky::pack_dirty(l);
    let f_hat = k.values() * &alpha;
    Ok(FittedGP {
        kernel: FitKernel::Kernel(header.kernel),
        k,
        sigma2: header.sigma2,
        chol_a,
        jitter: header.jitter,
        alpha,
        f_hat,
        log_marginal: header.log_marginal,
        data_hash: header.data_hash,
        n_features: header.n_features,
    })
}
