//! Error metrics in minutes, the kinematic baseline, and ablation tables.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contour::ArrivalContour;
use crate::geo::GeoPoint;

/// Below this speed (knots) distance / speed is meaningless.
pub const MIN_BASELINE_SOG: f64 = 0.1;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no predictions to evaluate")]
    EmptyInput,
    #[error("{pred} predictions vs {truth} truths")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
    #[error("vessel is stationary (sog {0} kn)")]
    StationaryVessel(f64),
    #[error("ablation needs at least two variants, got {0}")]
    TooFewVariants(usize),
    #[error("reference variant {0:?} not present")]
    UnknownVariant(String),
}

/// Absolute-residual counts over `[0, 5]`, `(5, 10]` and `(10, ∞)` minutes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResidualHistogram {
    pub le_5: usize,
    pub le_10: usize,
    pub gt_10: usize,
}

impl ResidualHistogram {
    pub fn total(&self) -> usize {
        self.le_5 + self.le_10 + self.gt_10
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.total().max(1) as f64;
        writeln!(w, "bin,lower_min,upper_min,count,fraction")?;
        writeln!(w, "0-5,0,5,{},{}", self.le_5, self.le_5 as f64 / n)?;
        writeln!(w, "5-10,5,10,{},{}", self.le_10, self.le_10 as f64 / n)?;
        writeln!(w, "10+,10,inf,{},{}", self.gt_10, self.gt_10 as f64 / n)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    /// Minutes.
    pub mae: f64,
    /// Minutes.
    pub rmse: f64,
    /// `None` when every truth is equal and R² is undefined.
    pub r2: Option<f64>,
    pub zero_variance: bool,
    /// Fraction of absolute residuals ≤ 5 min.
    pub within_5: f64,
    /// Fraction of absolute residuals ≤ 10 min.
    pub within_10: f64,
    pub histogram: ResidualHistogram,
    pub config_echo: Option<serde_json::Value>,
}

impl MetricsReport {
    pub fn with_config(mut self, echo: serde_json::Value) -> Self {
        self.config_echo = Some(echo);
        self
    }

    pub fn r2_or_nan(&self) -> f64 {
        self.r2.unwrap_or(f64::NAN)
    }
}

pub fn compute_metrics(pred_minutes: &[f64], truth_minutes: &[f64]) -> Result<MetricsReport, EvalError> {
    if pred_minutes.len() != truth_minutes.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred_minutes.len(),
            truth: truth_minutes.len(),
        });
    }
    if pred_minutes.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    for (i, (p, t)) in pred_minutes.iter().zip(truth_minutes).enumerate() {
        if !p.is_finite() || !t.is_finite() {
            return Err(EvalError::NonFinite(i));
        }
    }
    let n = pred_minutes.len();
    let nf = n as f64;
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut hist = ResidualHistogram {
        le_5: 0,
        le_10: 0,
        gt_10: 0,
    };
    for (p, t) in pred_minutes.iter().zip(truth_minutes) {
        let r = (p - t).abs();
        abs_sum += r;
        sq_sum += r * r;
        if r <= 5.0 {
            hist.le_5 += 1;
        } else if r <= 10.0 {
            hist.le_10 += 1;
        } else {
            hist.gt_10 += 1;
        }
    }
    let mean_truth = truth_minutes.iter().sum::<f64>() / nf;
    let ss_tot: f64 = truth_minutes.iter().map(|t| (t - mean_truth).powi(2)).sum();
    let zero_variance = ss_tot == 0.0;
    Ok(MetricsReport {
        n,
        mae: abs_sum / nf,
        rmse: (sq_sum / nf).sqrt(),
        r2: (!zero_variance).then(|| 1.0 - sq_sum / ss_tot),
        zero_variance,
        within_5: hist.le_5 as f64 / nf,
        within_10: (hist.le_5 + hist.le_10) as f64 / nf,
        histogram: hist,
        config_echo: None,
    })
}

/// Minutes to reach the nearest contour vertex at the current speed, or
/// zero when already inside the contour.
pub fn naive_baseline(position: &GeoPoint, sog_kn: f64, contour: &ArrivalContour) -> Result<f64, EvalError> {
    if !(sog_kn > MIN_BASELINE_SOG) {
        return Err(EvalError::StationaryVessel(sog_kn));
    }
    if contour.contains(position) {
        return Ok(0.0);
    }
    Ok(contour.vertex_distance_nm(position) / sog_kn * 60.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub mae: f64,
    pub rmse: f64,
    pub r2: Option<f64>,
    pub within_10: f64,
    /// `mae − mae(reference)`.
    pub delta_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub reference: String,
    /// Ascending MAE; ties keep input order.
    pub rows: Vec<AblationRow>,
    pub config_echo: Option<serde_json::Value>,
}

pub fn ablation_report(variants: &[(String, MetricsReport)], reference: &str) -> Result<AblationReport, EvalError> {
    if variants.len() < 2 {
        return Err(EvalError::TooFewVariants(variants.len()));
    }
    let base = variants
        .iter()
        .find(|(name, _)| name == reference)
        .ok_or_else(|| EvalError::UnknownVariant(reference.to_string()))?
        .1
        .mae;
    let mut rows: Vec<AblationRow> = variants
        .iter()
        .map(|(name, m)| AblationRow {
            variant: name.clone(),
            mae: m.mae,
            rmse: m.rmse,
            r2: m.r2,
            within_10: m.within_10,
            delta_mae: m.mae - base,
        })
        .collect();
    rows.sort_by(|a, b| a.mae.total_cmp(&b.mae));
    Ok(AblationReport {
        reference: reference.to_string(),
        rows,
        config_echo: None,
    })
}

impl AblationReport {
    pub fn mae_of(&self, variant: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.variant == variant).map(|r| r.mae)
    }

    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.variant.len()).max().unwrap_or(0).max(7);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<width$}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}",
            "variant", "MAE", "RMSE", "R2", "<=10min", "dMAE"
        );
        for r in &self.rows {
            let r2 = r.r2.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(
                s,
                "{:<width$}  {:>8.2}  {:>8.2}  {:>8}  {:>7.2}%  {:>+8.2}",
                r.variant,
                r.mae,
                r.rmse,
                r2,
                100.0 * r.within_10,
                r.delta_mae
            );
        }
        s
    }
}
