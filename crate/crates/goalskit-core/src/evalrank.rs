//! Ranking evaluation: ROC curves and AUC against a known causal set, plus
//! the single-feature regression baseline.
//!
//! A score vector induces a feature ranking (descending by the chosen key,
//! ties broken by feature index so results are deterministic). Sliding a
//! threshold down that ranking traces a staircase ROC curve; its trapezoidal
//! area equals the probability that a randomly chosen causal feature outranks
//! a randomly chosen null one, which the tests cross-check directly.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Number of fixed abscissae used when averaging curves across replicates.
pub const FPR_GRID_POINTS: usize = 1001;

/// How scores are turned into a ranking key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankKey {
    /// Rank by |score| — for measures where magnitude carries the evidence.
    Abs,
    /// Rank by the raw score — for measures that are already one-sided.
    Signed,
}

impl RankKey {
    fn apply(self, s: f64) -> f64 {
        match self {
            RankKey::Abs => s.abs(),
            RankKey::Signed => s,
        }
    }
}

/// A staircase ROC curve with its exact trapezoidal area.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RocCurve {
    /// (false-positive rate, true-positive rate), from (0,0) to (1,1).
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
    pub n_causal: usize,
    pub n_null: usize,
}

/// Rank features by `key` (descending, ties by index) and trace the ROC
/// curve of the ranking against the 0-based `causal` index set.
pub fn roc_from_scores(scores: &[f64], causal: &[usize], key: RankKey) -> Result<RocCurve> {
    let j = scores.len();
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite {
            what: "importance scores".to_string(),
        });
    }
    let mut causal_mask = vec![false; j];
    for &c in causal {
        if c >= j {
            return Err(Error::FeatureIndexOutOfRange { index: c, limit: j });
        }
        causal_mask[c] = true;
    }
    let n_causal = causal_mask.iter().filter(|&&m| m).count();
    if n_causal == 0 || n_causal == j {
        return Err(Error::invalid(
            "causal",
            format!("need a nonempty, proper causal subset; got {n_causal} of {j} features"),
        ));
    }
    let n_null = j - n_causal;

    let mut order: Vec<usize> = (0..j).collect();
    order.sort_by(|&a, &b| {
        key.apply(scores[b])
            .partial_cmp(&key.apply(scores[a]))
            .expect("scores checked finite")
            .then(a.cmp(&b))
    });

    let mut points = Vec::with_capacity(j + 1);
    points.push((0.0, 0.0));
    let (mut tp, mut fp) = (0usize, 0usize);
    for &f in &order {
        if causal_mask[f] {
            tp += 1;
        } else {
            fp += 1;
        }
        points.push((fp as f64 / n_null as f64, tp as f64 / n_causal as f64));
    }
    let auc = trapezoid(&points);
    Ok(RocCurve {
        points,
        auc,
        n_causal,
        n_null,
    })
}

/// Area under a piecewise-linear curve given by ordered points.
pub(crate) fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// Average replicate curves on a fixed FPR grid and return the grid curve
/// together with the mean of the per-replicate AUCs.
///
/// The staircase is treated as a right-continuous step function (the value
/// attained at an FPR is the best TPR reachable without exceeding it), which
/// is how a sliding threshold behaves. The returned curve's `auc` field is
/// the trapezoidal area of the grid curve itself; the scalar is the mean of
/// the exact per-replicate areas and is the number to report.
pub fn auc_summary(replicates: &[RocCurve]) -> Result<(RocCurve, f64)> {
    let first = replicates.first().ok_or_else(|| {
        Error::invalid("replicates", "need at least one curve to summarize")
    })?;
    for r in replicates {
        if (r.n_causal, r.n_null) != (first.n_causal, first.n_null) {
            return Err(Error::Mismatch {
                what: "replicate shapes".to_string(),
                detail: format!(
                    "curves mix {}+{} and {}+{} causal+null features",
                    first.n_causal, first.n_null, r.n_causal, r.n_null
                ),
            });
        }
    }
    let m = (FPR_GRID_POINTS - 1) as f64;
    let mut mean_tpr = vec![0.0f64; FPR_GRID_POINTS];
    for r in replicates {
        for (k, acc) in mean_tpr.iter_mut().enumerate() {
            *acc += step_tpr(&r.points, k as f64 / m);
        }
    }
    let count = replicates.len() as f64;
    let points: Vec<(f64, f64)> = mean_tpr
        .iter()
        .enumerate()
        .map(|(k, t)| (k as f64 / m, t / count))
        .collect();
    let auc = trapezoid(&points);
    let mean_auc = replicates.iter().map(|r| r.auc).sum::<f64>() / count;
    Ok((
        RocCurve {
            points,
            auc,
            n_causal: first.n_causal,
            n_null: first.n_null,
        },
        mean_auc,
    ))
}

/// TPR of the staircase at `fpr`: the largest TPR among points whose FPR
/// does not exceed it.
fn step_tpr(points: &[(f64, f64)], fpr: f64) -> f64 {
    let mut best = 0.0f64;
    for &(x, y) in points {
        if x <= fpr {
            best = best.max(y);
        } else {
            break;
        }
    }
    best
}

/// Single-feature baseline: for every column, fit an ordinary least-squares
/// line of y on that column plus an intercept and return the two-sided
/// t-test p-value on the slope. Small p-values mark associated features, so
/// rankings use ascending p.
pub fn scanone(d: &Dataset) -> Result<DVector<f64>> {
    if !d.is_standardized() {
        return Err(Error::NotStandardized {
            operation: "scanone".to_string(),
        });
    }
    let n = d.n();
    if n < 3 {
        return Err(Error::TooFewRows { need: 3, found: n });
    }
    let nf = n as f64;
    let df = nf - 2.0;
    let y = d.y();
    let y_mean = y.sum() / nf;
    let syy: f64 = y.iter().map(|v| (v - y_mean) * (v - y_mean)).sum();
    let t_dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
    let mut p = DVector::zeros(d.j());
    for c in 0..d.j() {
        let col = d.x().column(c);
        let x_mean = col.sum() / nf;
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        for i in 0..n {
            let dx = col[i] - x_mean;
            sxx += dx * dx;
            sxy += dx * (y[i] - y_mean);
        }
        let slope = sxy / sxx;
        let rss = syy - slope * sxy;
        // A numerically perfect fit leaves no residual to estimate the noise
        // from; the evidence is as strong as it gets.
        if rss <= f64::EPSILON * syy {
            p[c] = 0.0;
            continue;
        }
        let se = (rss / df / sxx).sqrt();
        let t = slope / se;
        p[c] = 2.0 * t_dist.sf(t.abs());
    }
    Ok(p)
}
