//! Tabular regression data: loading, validation, standardization, and
//! principal-component covariates.
//!
//! A [`Dataset`] owns an N×J design matrix `x`, a length-N response `y`, and
//! the bookkeeping needed to undo standardization. All downstream model code
//! requires standardized data; the flag makes that precondition checkable and
//! guarantees standardization happens exactly once.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Immutable regression dataset.
///
/// Invariants enforced at construction: N ≥ 2, J ≥ 1, every entry finite,
/// `y.len() == N`, `feature_names.len() == J`. When `standardized` is true,
/// every column of `x` and `y` itself have sample mean 0 and sample SD 1
/// (N−1 denominator) up to roundoff, and the original moments are retained.
#[derive(Clone, Debug)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    feature_names: Vec<String>,
    standardized: bool,
    column_means: DVector<f64>,
    column_sds: DVector<f64>,
    y_mean: f64,
    y_sd: f64,
}

impl Dataset {
    /// Build a dataset from an in-memory matrix and response.
    ///
    /// `feature_names` defaults to `x1..xJ` when `None`.
    pub fn from_parts(
        x: DMatrix<f64>,
        y: DVector<f64>,
        feature_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let n = x.nrows();
        let j = x.ncols();
        if n < 2 {
            return Err(Error::TooFewRows { need: 2, found: n });
        }
        if j == 0 {
            return Err(Error::invalid("x", "need at least one feature column"));
        }
        if y.len() != n {
            return Err(Error::Mismatch {
                what: "response length".to_string(),
                detail: format!("y has {} entries for {} rows", y.len(), n),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "design matrix".to_string(),
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "response vector".to_string(),
            });
        }
        let names = match feature_names {
            Some(names) => {
                if names.len() != j {
                    return Err(Error::Mismatch {
                        what: "feature names".to_string(),
                        detail: format!("{} names for {} columns", names.len(), j),
                    });
                }
                names
            }
            None => default_feature_names(j),
        };
        Ok(Dataset {
            x,
            y,
            feature_names: names,
            standardized: false,
            column_means: DVector::zeros(j),
            column_sds: DVector::from_element(j, 1.0),
            y_mean: 0.0,
            y_sd: 1.0,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn j(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    /// Per-column means of the data as loaded (identity until standardization).
    pub fn column_means(&self) -> &DVector<f64> {
        &self.column_means
    }

    /// Per-column sample SDs of the data as loaded (identity until standardization).
    pub fn column_sds(&self) -> &DVector<f64> {
        &self.column_sds
    }

    pub fn y_moments(&self) -> (f64, f64) {
        (self.y_mean, self.y_sd)
    }

    /// SHA-256 hex digest over the numeric content: dimensions, the
    /// standardization flag, X column-major, then y, all as little-endian
    /// bytes. Saved models carry this digest so a reload against different
    /// data fails loudly instead of silently producing garbage.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update((self.x.nrows() as u64).to_le_bytes());
        h.update((self.x.ncols() as u64).to_le_bytes());
        h.update([self.standardized as u8]);
        for v in self.x.iter() {
            h.update(v.to_le_bytes());
        }
        for v in self.y.iter() {
            h.update(v.to_le_bytes());
        }
        format!("{:x}", h.finalize())
    }

    /// Center and scale every feature column and the response to sample mean 0
    /// and sample SD 1 (N−1 denominator). The pre-standardization moments are
    /// kept on the result for inverse transforms. Standardizing twice is an
    /// error rather than a silent no-op.
    pub fn standardize(mut self) -> Result<Self> {
        if self.standardized {
            return Err(Error::AlreadyStandardized);
        }
        let n = self.n();
        let j = self.j();
        let mut means = DVector::zeros(j);
        let mut sds = DVector::zeros(j);
        for c in 0..j {
            let col: Vec<f64> = self.x.column(c).iter().copied().collect();
            let m = linalg::mean(&col);
            let sd = linalg::sample_variance(&col).sqrt();
            if sd == 0.0 {
                return Err(Error::ConstantColumn {
                    name: self.feature_names[c].clone(),
                });
            }
            means[c] = m;
            sds[c] = sd;
            for r in 0..n {
                self.x[(r, c)] = (self.x[(r, c)] - m) / sd;
            }
        }
        let yvec: Vec<f64> = self.y.iter().copied().collect();
        let ym = linalg::mean(&yvec);
        let ysd = linalg::sample_variance(&yvec).sqrt();
        if ysd == 0.0 {
            return Err(Error::ConstantColumn {
                name: "y".to_string(),
            });
        }
        for r in 0..n {
            self.y[r] = (self.y[r] - ym) / ysd;
        }
        self.column_means = means;
        self.column_sds = sds;
        self.y_mean = ym;
        self.y_sd = ysd;
        self.standardized = true;
        Ok(self)
    }

    /// Construct a dataset that is already in standardized units (used by the
    /// simulator, whose outputs are built to have unit variance by design).
    /// The stated moments describe the raw scale the caller standardized away.
    pub(crate) fn from_standardized_parts(
        x: DMatrix<f64>,
        y: DVector<f64>,
        feature_names: Vec<String>,
        column_means: DVector<f64>,
        column_sds: DVector<f64>,
        y_mean: f64,
        y_sd: f64,
    ) -> Result<Self> {
        let mut d = Dataset::from_parts(x, y, Some(feature_names))?;
        d.standardized = true;
        d.column_means = column_means;
        d.column_sds = column_sds;
        d.y_mean = y_mean;
        d.y_sd = y_sd;
        Ok(d)
    }

    /// First k principal-component score vectors of `XᵀX/(N−1)`, ordered by
    /// descending eigenvalue, sign-fixed (largest-magnitude loading positive),
    /// and rescaled to unit sample SD.
    pub fn top_principal_components(&self, k: usize) -> Result<DMatrix<f64>> {
        Ok(self.top_principal_components_with_details(k)?.scores)
    }

    /// Principal components plus the loadings and eigenvalues behind them.
    pub fn top_principal_components_with_details(&self, k: usize) -> Result<PcDecomposition> {
        if !self.standardized {
            return Err(Error::NotStandardized {
                operation: "top_principal_components".to_string(),
            });
        }
        let n = self.n();
        let j = self.j();
        let k_max = (n - 1).min(j);
        if k == 0 || k > k_max {
            return Err(Error::invalid(
                "k",
                format!("must be in 1..={k_max} for N={n}, J={j}, got {k}"),
            ));
        }
        let denom = (n - 1) as f64;
        // Eigendecompose the smaller of the two gram matrices; both routes
        // yield the same spectrum and are related by X.
        let (eigenvalues, mut loadings, mut scores) = if j <= n {
            let c = self.x.transpose() * &self.x / denom;
            let eig = nalgebra::SymmetricEigen::new(c);
            let order = descending_order(&eig.eigenvalues);
            let mut vals = Vec::with_capacity(k);
            let mut load = DMatrix::zeros(j, k);
            for (out, &idx) in order.iter().take(k).enumerate() {
                vals.push(eig.eigenvalues[idx]);
                load.set_column(out, &eig.eigenvectors.column(idx));
            }
            let scores = &self.x * &load;
            (vals, load, scores)
        } else {
            let g = &self.x * self.x.transpose() / denom;
            let eig = nalgebra::SymmetricEigen::new(g);
            let order = descending_order(&eig.eigenvalues);
            let mut vals = Vec::with_capacity(k);
            let mut load = DMatrix::zeros(j, k);
            let mut scores = DMatrix::zeros(n, k);
            for (out, &idx) in order.iter().take(k).enumerate() {
                let lambda = eig.eigenvalues[idx];
                vals.push(lambda);
                if lambda <= 0.0 {
                    continue; // caught by the rank check below
                }
                let u = eig.eigenvectors.column(idx);
                let sigma = (denom * lambda).sqrt();
                load.set_column(out, &(self.x.transpose() * u / sigma));
                scores.set_column(out, &(u * sigma));
            }
            (vals, load, scores)
        };
        let lambda_max = eigenvalues.first().copied().unwrap_or(0.0);
        for (i, &lambda) in eigenvalues.iter().enumerate() {
            if lambda <= 1e-12 * lambda_max.max(1.0) {
                return Err(Error::invalid(
                    "k",
                    format!("component {} exceeds the numerical rank of x", i + 1),
                ));
            }
        }
        // Sign convention: largest-magnitude loading positive (first index on ties).
        for c in 0..k {
            let col = loadings.column(c);
            let mut arg = 0usize;
            for i in 1..col.len() {
                if col[i].abs() > col[arg].abs() {
                    arg = i;
                }
            }
            if col[arg] < 0.0 {
                loadings.column_mut(c).neg_mut();
                scores.column_mut(c).neg_mut();
            }
        }
        // Rescale each score column to unit sample SD (centering is a no-op up
        // to roundoff because the design columns are centered).
        for c in 0..k {
            let col: Vec<f64> = scores.column(c).iter().copied().collect();
            let m = linalg::mean(&col);
            let sd = linalg::sample_variance(&col).sqrt();
            for r in 0..n {
                scores[(r, c)] = (scores[(r, c)] - m) / sd;
            }
        }
        Ok(PcDecomposition {
            scores,
            loadings,
            eigenvalues,
        })
    }
}

/// Principal-component scores with their loadings and eigenvalues.
pub struct PcDecomposition {
    /// N×k score matrix, unit sample SD per column.
    pub scores: DMatrix<f64>,
    /// J×k loading matrix (unit-norm columns, sign-fixed).
    pub loadings: DMatrix<f64>,
    /// Eigenvalues of XᵀX/(N−1), descending.
    pub eigenvalues: Vec<f64>,
}

pub(crate) fn default_feature_names(j: usize) -> Vec<String> {
    (1..=j).map(|i| format!("x{i}")).collect()
}

fn descending_order(values: &DVector<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap());
    order
}

/// Load a CSV file with a header row; `response_column` names the y column and
/// every other column becomes a feature. All cells must parse as finite
/// numbers. The result is *not* standardized.
pub fn load_csv(path: &Path, response_column: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(|h| h.to_string())
        .collect();
    let response_idx = headers
        .iter()
        .position(|h| h == response_column)
        .ok_or_else(|| Error::MissingResponseColumn {
            name: response_column.to_string(),
        })?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != response_idx)
        .map(|(_, h)| h.clone())
        .collect();
    if feature_names.is_empty() {
        return Err(Error::Csv {
            path: path.to_path_buf(),
            detail: "no feature columns besides the response".to_string(),
        });
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != headers.len() {
            return Err(Error::Csv {
                path: path.to_path_buf(),
                detail: format!(
                    "data row {} has {} cells, header has {}",
                    row_idx + 1,
                    record.len(),
                    headers.len()
                ),
            });
        }
        let mut row = Vec::with_capacity(feature_names.len());
        for (col_idx, token) in record.iter().enumerate() {
            let value: f64 = token.parse().map_err(|_| Error::NonNumericCell {
                row: row_idx + 1,
                column: headers[col_idx].clone(),
                token: token.to_string(),
            })?;
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("cell at data row {}, column '{}'", row_idx + 1, headers[col_idx]),
                });
            }
            if col_idx == response_idx {
                ys.push(value);
            } else {
                row.push(value);
            }
        }
        rows.push(row);
    }
    if rows.len() < 2 {
        return Err(Error::TooFewRows {
            need: 2,
            found: rows.len(),
        });
    }
    let n = rows.len();
    let j = feature_names.len();
    let x = DMatrix::from_fn(n, j, |r, c| rows[r][c]);
    Dataset::from_parts(x, DVector::from_vec(ys), Some(feature_names))
}

/// Write the dataset as CSV: feature columns under their names, then the
/// response as `y`. Values carry 17 significant digits, which round-trips
/// every finite f64 bit-exactly.
pub fn write_csv(d: &Dataset, path: &Path) -> Result<()> {
    use std::io::Write;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let mut write = |line: &str| -> Result<()> {
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))
    };
    let mut header = d.feature_names().join(",");
    header.push_str(",y");
    write(&header)?;
    let mut line = String::new();
    for r in 0..d.n() {
        line.clear();
        for c in 0..d.j() {
            line.push_str(&format!("{:.16e},", d.x()[(r, c)]));
        }
        line.push_str(&format!("{:.16e}", d.y()[r]));
        write(&line)?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}


fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        detail: e.to_string(),
    }
}
