//! Per-component variance shares shared by OLD and the color-space baselines.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SHARE_TOL: f64 = 1e-9;

/// Fraction of total variance carried by each component of a decomposition,
/// split into luminance-related (principal) and luminance-unrelated
/// (residual) parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub method: String,
    pub component_names: Vec<String>,
    pub variance_shares: Vec<f64>,
    pub principal_indices: Vec<usize>,
    pub principal_share: f64,
    pub residual_share: f64,
}

impl VarianceReport {
    /// Normalizes `variances` to shares; `principal` lists the
    /// luminance-related components.
    pub fn from_variances(
        method: impl Into<String>,
        component_names: Vec<String>,
        variances: &[f64],
        principal: Vec<usize>,
    ) -> Result<Self> {
        let method = method.into();
        if component_names.len() != variances.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} component names for {} variances",
                component_names.len(),
                variances.len()
            )));
        }
        if let Some(&bad) = principal.iter().find(|&&i| i >= variances.len()) {
            return Err(Error::InvalidParameter(format!("principal index {bad} out of range")));
        }
        if variances.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NumericFailure(format!("{method}: variances must be finite and non-negative")));
        }
        let total: f64 = variances.iter().sum();
        if !total.is_finite() || total <= 1e-300 {
            return Err(Error::DegenerateData(format!("{method}: total variance is zero")));
        }
        let variance_shares: Vec<f64> = variances.iter().map(|v| v / total).collect();
        let principal_share: f64 = principal.iter().map(|&i| variance_shares[i]).sum();
        let residual_share: f64 =
            (0..variances.len()).filter(|i| !principal.contains(i)).map(|i| variance_shares[i]).sum();
        Ok(Self {
            method,
            component_names,
            variance_shares,
            principal_indices: principal,
            principal_share,
            residual_share,
        })
    }

    /// Checks that shares are non-negative and sum to one.
    pub fn check(&self) -> Result<()> {
        let sum: f64 = self.variance_shares.iter().sum();
        let ok = self.variance_shares.iter().all(|&s| s >= 0.0)
            && (sum - 1.0).abs() <= SHARE_TOL
            && (self.principal_share + self.residual_share - 1.0).abs() <= SHARE_TOL;
        if ok {
            Ok(())
        } else {
            Err(Error::NumericFailure(format!("{}: variance shares do not sum to 1 ({sum})", self.method)))
        }
    }

    /// CSV rows `method,component,share` (no header).
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for (name, share) in self.component_names.iter().zip(&self.variance_shares) {
            let _ = writeln!(out, "{},{},{:.12e}", self.method, name, share);
        }
        out
    }

    pub const CSV_HEADER: &'static str = "method,component,share\n";

    /// Header plus rows for a set of reports.
    pub fn to_csv(reports: &[VarianceReport]) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        for r in reports {
            out.push_str(&r.csv_rows());
        }
        out
    }

    /// JSON document with one panel per method.
    pub fn to_json(reports: &[VarianceReport]) -> String {
        let panels: Vec<_> = reports
            .iter()
            .map(|r| {
                let components: Vec<_> = r
                    .component_names
                    .iter()
                    .zip(&r.variance_shares)
                    .enumerate()
                    .map(|(i, (name, share))| {
                        serde_json::json!({
                            "name": name,
                            "share": share,
                            "luminance_related": r.principal_indices.contains(&i),
                        })
                    })
                    .collect();
                serde_json::json!({
                    "method": r.method,
                    "components": components,
                    "principal_share": r.principal_share,
                    "residual_share": r.residual_share,
                })
            })
            .collect();
        serde_json::to_string_pretty(&serde_json::json!({ "panels": panels })).expect("serializable")
    }
}
