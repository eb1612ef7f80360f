//! Versioned on-disk documents: score reports, simulation truth records,
//! and ROC/AUC tables.
//!
//! A score report is a JSON header (format tag, method, feature names,
//! global scores, method-specific metadata, and the name of its CSV sidecar)
//! plus a CSV holding the full score matrix. The CSV is written row-by-row
//! so sample-major matrices stream at any N; every float is printed with 17
//! significant digits, which round-trips f64 bit-exactly. Readers verify the
//! format tag and cross-check the CSV's global row against the JSON header
//! so a mixed-up sidecar fails loudly.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::evalrank::RocCurve;
use crate::goals::GoalsReport;
use crate::rate::RateReport;
use crate::shapley::ShapReport;
use crate::simgen::{SimConfig, SimTruth};

pub const REPORT_FORMAT: &str = "goalskit.report.v1";
pub const SIM_FORMAT: &str = "goalskit.sim.v1";

/// A method's scores in exchange form: per-feature global scores, an
/// optional N×J local matrix, and free-form metadata. Methods with local
/// scores also carry a magnitude summary (mean absolute local score per
/// feature), which is the ranking statistic — it stays informative when a
/// feature's per-sample effects cancel in the signed mean.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub method: String,
    pub feature_names: Vec<String>,
    pub global: DVector<f64>,
    pub global_abs: Option<DVector<f64>>,
    pub local: Option<DMatrix<f64>>,
    pub metadata: Map<String, Value>,
}

#[derive(Serialize, Deserialize)]
struct ReportHeader {
    format: String,
    method: String,
    n_samples: Option<usize>,
    n_features: usize,
    feature_names: Vec<String>,
    global: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    global_abs: Option<Vec<f64>>,
    metadata: Map<String, Value>,
    csv: String,
}

impl Report {
    /// Package local/global scores (the GP path and the random-feature path
    /// share this; they differ only in the `method` tag and metadata).
    pub fn from_goals(r: &GoalsReport, feature_names: &[String], method: &str) -> Result<Self> {
        let names = select_names(feature_names, &r.features)?;
        let mut metadata = Map::new();
        metadata.insert("xi".to_string(), to_value(&r.xi)?);
        metadata.insert("kernel".to_string(), Value::String(r.meta.kernel.clone()));
        if let Some(theta) = r.meta.theta {
            metadata.insert("theta".to_string(), to_value(&theta)?);
        }
        metadata.insert("sigma2".to_string(), to_value(&r.meta.sigma2)?);
        Ok(Report {
            method: method.to_string(),
            feature_names: names,
            global: r.global.clone(),
            global_abs: Some(r.global_abs.clone()),
            local: Some(r.local.clone()),
            metadata,
        })
    }

    pub fn from_rate(r: &RateReport, feature_names: &[String]) -> Result<Self> {
        if feature_names.len() != r.rate.len() {
            return Err(Error::Mismatch {
                what: "feature names".to_string(),
                detail: format!("{} names for {} scores", feature_names.len(), r.rate.len()),
            });
        }
        let mut metadata = Map::new();
        metadata.insert(
            "kld".to_string(),
            to_value(&r.kld.iter().copied().collect::<Vec<f64>>())?,
        );
        Ok(Report {
            method: "rate".to_string(),
            feature_names: feature_names.to_vec(),
            global: r.rate.clone(),
            global_abs: None,
            local: None,
            metadata,
        })
    }

    pub fn from_shap(r: &ShapReport, feature_names: &[String]) -> Result<Self> {
        if feature_names.len() != r.global.len() {
            return Err(Error::Mismatch {
                what: "feature names".to_string(),
                detail: format!("{} names for {} scores", feature_names.len(), r.global.len()),
            });
        }
        let mut metadata = Map::new();
        metadata.insert("subsets_fitted".to_string(), to_value(&r.subset_count)?);
        let n = r.local.nrows() as f64;
        let global_abs = DVector::from_iterator(
            r.local.ncols(),
            r.local
                .column_iter()
                .map(|col| col.iter().map(|v| v.abs()).sum::<f64>() / n),
        );
        Ok(Report {
            method: "shap".to_string(),
            feature_names: feature_names.to_vec(),
            global: r.global.clone(),
            global_abs: Some(global_abs),
            local: Some(r.local.clone()),
            metadata,
        })
    }

    /// p-values from the univariate baseline; small means associated, so
    /// the metadata records that rankings run ascending.
    pub fn from_scanone(p: &DVector<f64>, feature_names: &[String]) -> Result<Self> {
        if feature_names.len() != p.len() {
            return Err(Error::Mismatch {
                what: "feature names".to_string(),
                detail: format!("{} names for {} p-values", feature_names.len(), p.len()),
            });
        }
        let mut metadata = Map::new();
        metadata.insert(
            "ranking".to_string(),
            Value::String("ascending".to_string()),
        );
        Ok(Report {
            method: "scanone".to_string(),
            feature_names: feature_names.to_vec(),
            global: p.clone(),
            global_abs: None,
            local: None,
            metadata,
        })
    }

    /// Write `<stem>.json` + `<stem>.csv` next to each other; returns the
    /// CSV path.
    pub fn write(&self, json_path: &Path) -> Result<PathBuf> {
        let csv_path = json_path.with_extension("csv");
        let csv_name = file_name(&csv_path)?;
        let file = std::fs::File::create(json_path).map_err(|e| Error::io(json_path, e))?;
        self.write_json_to(std::io::BufWriter::new(file), &csv_name)
            .map_err(|e| Error::io(json_path, e))?;
        let file = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        self.write_csv_to(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(&csv_path, e))?;
        Ok(csv_path)
    }

    /// Stream the JSON header; `csv_name` is recorded as the sidecar.
    pub fn write_json_to<W: Write>(&self, mut w: W, csv_name: &str) -> std::io::Result<()> {
        let header = ReportHeader {
            format: REPORT_FORMAT.to_string(),
            method: self.method.clone(),
            n_samples: self.local.as_ref().map(|m| m.nrows()),
            n_features: self.feature_names.len(),
            feature_names: self.feature_names.clone(),
            global: self.global.iter().copied().collect(),
            global_abs: self
                .global_abs
                .as_ref()
                .map(|v| v.iter().copied().collect()),
            metadata: self.metadata.clone(),
            csv: csv_name.to_string(),
        };
        serde_json::to_writer_pretty(&mut w, &header)?;
        writeln!(w)
    }

    /// Stream the score matrix: one labeled row per sample (when local
    /// scores exist), then a final `global` summary row.
    pub fn write_csv_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "row")?;
        for name in &self.feature_names {
            write!(w, ",{name}")?;
        }
        writeln!(w)?;
        if let Some(local) = &self.local {
            let mut line = String::new();
            for r in 0..local.nrows() {
                line.clear();
                line.push_str(&format!("sample_{}", r + 1));
                for c in 0..local.ncols() {
                    line.push_str(&format!(",{:.16e}", local[(r, c)]));
                }
                writeln!(w, "{line}")?;
            }
        }
        write!(w, "global")?;
        for v in self.global.iter() {
            write!(w, ",{v:.16e}")?;
        }
        writeln!(w)?;
        if let Some(abs) = &self.global_abs {
            write!(w, "global_abs")?;
            for v in abs.iter() {
                write!(w, ",{v:.16e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Read a report back from its JSON header, pulling the matrix from the
    /// CSV sidecar recorded in it.
    pub fn read(json_path: &Path) -> Result<Report> {
        let text =
            std::fs::read_to_string(json_path).map_err(|e| Error::io(json_path, e))?;
        let header: ReportHeader =
            serde_json::from_str(&text).map_err(|e| Error::ReportFormat {
                path: json_path.to_path_buf(),
                detail: e.to_string(),
            })?;
        if header.format != REPORT_FORMAT {
            return Err(Error::ReportFormat {
                path: json_path.to_path_buf(),
                detail: format!("format tag '{}', expected '{REPORT_FORMAT}'", header.format),
            });
        }
        if header.feature_names.len() != header.n_features
            || header.global.len() != header.n_features
        {
            return Err(Error::ReportFormat {
                path: json_path.to_path_buf(),
                detail: "feature_names/global length disagrees with n_features".to_string(),
            });
        }
        if let Some(abs) = &header.global_abs {
            if abs.len() != header.n_features {
                return Err(Error::ReportFormat {
                    path: json_path.to_path_buf(),
                    detail: "global_abs length disagrees with n_features".to_string(),
                });
            }
        }
        let csv_path = json_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&header.csv);
        let (local, csv_global, csv_abs) = read_score_csv(
            &csv_path,
            header.n_features,
            header.n_samples,
            header.global_abs.is_some(),
        )?;
        for (a, b) in header.global.iter().zip(csv_global.iter()) {
            if a != b {
                return Err(Error::ReportFormat {
                    path: csv_path.clone(),
                    detail: "global row disagrees with the JSON header".to_string(),
                });
            }
        }
        if let (Some(h), Some(c)) = (&header.global_abs, &csv_abs) {
            if h.iter().zip(c.iter()).any(|(a, b)| a != b) {
                return Err(Error::ReportFormat {
                    path: csv_path.clone(),
                    detail: "global_abs row disagrees with the JSON header".to_string(),
                });
            }
        }
        Ok(Report {
            method: header.method,
            feature_names: header.feature_names,
            global: DVector::from_vec(header.global),
            global_abs: header.global_abs.map(DVector::from_vec),
            local,
            metadata: header.metadata,
        })
    }
}

fn select_names(all: &[String], features: &[usize]) -> Result<Vec<String>> {
    features
        .iter()
        .map(|&f| {
            all.get(f).cloned().ok_or(Error::FeatureIndexOutOfRange {
                index: f,
                limit: all.len(),
            })
        })
        .collect()
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| Error::ReportFormat {
        path: PathBuf::from("<metadata>"),
        detail: e.to_string(),
    })
}

fn file_name(path: &Path) -> Result<String> {
    path.file_name()
        .and_then(|n| n.to_str())
        .map(|n| n.to_string())
        .ok_or_else(|| Error::ReportFormat {
            path: path.to_path_buf(),
            detail: "path has no usable file name".to_string(),
        })
}

fn read_score_csv(
    path: &Path,
    n_features: usize,
    n_samples: Option<usize>,
    expect_abs: bool,
) -> Result<(Option<DMatrix<f64>>, Vec<f64>, Option<Vec<f64>>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = std::io::BufReader::new(file).lines();
    let bad = |detail: String| Error::ReportFormat {
        path: path.to_path_buf(),
        detail,
    };
    let header = lines
        .next()
        .transpose()
        .map_err(|e| Error::io(path, e))?
        .ok_or_else(|| bad("empty file".to_string()))?;
    let cols = header.split(',').count();
    if cols != n_features + 1 {
        return Err(bad(format!(
            "{cols} columns for {n_features} features plus a label"
        )));
    }
    let parse_row = |line: &str, label: &str| -> Result<Vec<f64>> {
        let mut parts = line.split(',');
        let got = parts.next().unwrap_or("");
        if got != label {
            return Err(bad(format!("expected row '{label}', found '{got}'")));
        }
        let vals: Vec<f64> = parts
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(format!("row '{label}': {e}")))?;
        if vals.len() != n_features {
            return Err(bad(format!(
                "row '{label}' has {} values, expected {n_features}",
                vals.len()
            )));
        }
        Ok(vals)
    };
    let mut local = None;
    if let Some(n) = n_samples {
        let mut m = DMatrix::zeros(n, n_features);
        for r in 0..n {
            let line = lines
                .next()
                .transpose()
                .map_err(|e| Error::io(path, e))?
                .ok_or_else(|| bad(format!("missing sample row {}", r + 1)))?;
            let vals = parse_row(&line, &format!("sample_{}", r + 1))?;
            for (c, v) in vals.iter().enumerate() {
                m[(r, c)] = *v;
            }
        }
        local = Some(m);
    }
    let line = lines
        .next()
        .transpose()
        .map_err(|e| Error::io(path, e))?
        .ok_or_else(|| bad("missing global row".to_string()))?;
    let global = parse_row(&line, "global")?;
    let abs = if expect_abs {
        let line = lines
            .next()
            .transpose()
            .map_err(|e| Error::io(path, e))?
            .ok_or_else(|| bad("missing global_abs row".to_string()))?;
        Some(parse_row(&line, "global_abs")?)
    } else {
        None
    };
    if lines.next().is_some() {
        return Err(bad("trailing rows after the summary rows".to_string()));
    }
    Ok((local, global, abs))
}

/// The truth record written next to each simulated dataset: the generating
/// config, everything injected, and the causal features by display name.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimDocument {
    pub format: String,
    pub config: SimConfig,
    pub truth: SimTruth,
    /// Causal features by name (`x23` is column index 22), so the record is
    /// readable without knowing the 0-based index convention.
    pub causal_names: Vec<String>,
}

pub fn write_sim_truth(
    path: &Path,
    config: &SimConfig,
    truth: &SimTruth,
    feature_names: &[String],
) -> Result<()> {
    let causal_names = select_names(feature_names, &truth.causal)?;
    let doc = SimDocument {
        format: SIM_FORMAT.to_string(),
        config: config.clone(),
        truth: truth.clone(),
        causal_names,
    };
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, &doc).map_err(|e| Error::ReportFormat {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    writeln!(w).map_err(|e| Error::io(path, e))
}

pub fn read_sim_truth(path: &Path) -> Result<SimDocument> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: SimDocument = serde_json::from_str(&text).map_err(|e| Error::ReportFormat {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    if doc.format != SIM_FORMAT {
        return Err(Error::ReportFormat {
            path: path.to_path_buf(),
            detail: format!("format tag '{}', expected '{SIM_FORMAT}'", doc.format),
        });
    }
    Ok(doc)
}

/// ROC points as `fpr,tpr` rows for external plotting.
pub fn write_roc_csv(path: &Path, curve: &RocCurve) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut emit = |line: String| writeln!(w, "{line}").map_err(|e| Error::io(path, e));
    emit("fpr,tpr".to_string())?;
    for &(fpr, tpr) in &curve.points {
        emit(format!("{fpr:.16e},{tpr:.16e}"))?;
    }
    Ok(())
}

/// One row per method: mean AUC and how many replicates it covers.
pub fn write_auc_table(path: &Path, rows: &[(String, f64, usize)]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut emit = |line: String| writeln!(w, "{line}").map_err(|e| Error::io(path, e));
    emit("method,mean_auc,replicates".to_string())?;
    for (method, auc, reps) in rows {
        emit(format!("{method},{auc:.16e},{reps}"))?;
    }
    Ok(())
}

/// Square or rectangular labeled matrix (e.g. the global-score covariance).
pub fn write_matrix_csv(
    path: &Path,
    row_labels: &[String],
    col_labels: &[String],
    m: &DMatrix<f64>,
) -> Result<()> {
    if m.nrows() != row_labels.len() || m.ncols() != col_labels.len() {
        return Err(Error::Mismatch {
            what: "matrix labels".to_string(),
            detail: format!(
                "{}x{} matrix with {} row and {} column labels",
                m.nrows(),
                m.ncols(),
                row_labels.len(),
                col_labels.len()
            ),
        });
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut emit = |line: &str| writeln!(w, "{line}").map_err(|e| Error::io(path, e));
    emit(&format!("row,{}", col_labels.join(",")))?;
    let mut line = String::new();
    for r in 0..m.nrows() {
        line.clear();
        line.push_str(&row_labels[r]);
        for c in 0..m.ncols() {
            line.push_str(&format!(",{:.16e}", m[(r, c)]));
        }
        emit(&line)?;
    }
    Ok(())
}
