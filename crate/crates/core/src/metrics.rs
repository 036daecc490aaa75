//! Regression quality metrics: mean squared error, mean absolute error and
//! the coefficient of determination.
//!
//! R² is reported for comparability only; it is not a sound goodness-of-fit
//! measure for a nonlinear regressor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mse: f64,
    pub mae: f64,
    /// `None` when the true targets are constant.
    pub r2: Option<f64>,
    pub n: usize,
}

impl MetricReport {
    /// `config_name,r2,mse,mae,n`; an undefined R² is written as `NaN`.
    pub fn csv_row(&self, config_name: &str) -> String {
        format!(
            "{config_name},{},{},{},{}",
            self.r2.unwrap_or(f64::NAN),
            self.mse,
            self.mae,
            self.n
        )
    }
}

pub const REPORT_HEADER: &str = "config_name,r2,mse,mae,n";

pub fn evaluate(y_true: &[f64], y_pred: &[f64]) -> Result<MetricReport> {
    if y_true.len() != y_pred.len() {
        return Err(Error::LengthMismatch(y_true.len(), y_pred.len()));
    }
    let n = y_true.len();
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    let nf = n as f64;
    let mean = y_true.iter().sum::<f64>() / nf;

    let (mut sse, mut sae, mut sst) = (0.0, 0.0, 0.0);
    for (&y, &p) in y_true.iter().zip(y_pred) {
        let e = y - p;
        sse += e * e;
        sae += e.abs();
        sst += (y - mean) * (y - mean);
    }
    Ok(MetricReport {
        mse: sse / nf,
        mae: sae / nf,
        r2: (sst > 0.0).then(|| 1.0 - sse / sst),
        n,
    })
}
