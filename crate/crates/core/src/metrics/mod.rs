//! Estimation error metrics and confidence intervals over repeated runs.
//!
//! MAPE and angle MAE are averaged jointly over every (t, phase) entry.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::gridmodel::CMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ci95 {
    pub mape_magnitude: f64,
    pub mae_angle: f64,
    pub rmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    /// Percent.
    pub mape_magnitude: f64,
    /// Degrees.
    pub mae_angle: f64,
    /// Per-unit, over stacked real and imaginary parts.
    pub rmse: f64,
    pub n_runs: usize,
    /// Half-widths; present only when `n_runs >= 2`.
    pub ci95: Option<Ci95>,
}

/// Angle of `est` relative to `truth` in degrees, on (−180, 180].
pub fn angle_difference_deg(est: f64, truth: f64) -> f64 {
    let mut d = (est - truth).rem_euclid(360.0);
    if d > 180.0 {
        d -= 360.0;
    }
    d
}

pub fn evaluate_estimate(v_est: &CMatrix, v_true: &CMatrix) -> Result<EstimateReport> {
    if v_est.shape() != v_true.shape() {
        return Err(Error::Dimension(format!(
            "estimate is {}x{}, truth is {}x{}",
            v_est.nrows(),
            v_est.ncols(),
            v_true.nrows(),
            v_true.ncols()
        )));
    }
    if v_true.is_empty() {
        return Err(Error::UndefinedMetric("empty voltage matrix".into()));
    }
    let mut mape = 0.0;
    let mut mae = 0.0;
    let mut sq = 0.0;
    for t in 0..v_true.nrows() {
        for i in 0..v_true.ncols() {
            let (e, z) = (v_est[(t, i)], v_true[(t, i)]);
            let mag = z.norm();
            if mag == 0.0 {
                return Err(Error::ZeroMagnitude { t, phase: i });
            }
            mape += 100.0 * (e.norm() - mag).abs() / mag;
            mae += angle_difference_deg(e.arg().to_degrees(), z.arg().to_degrees()).abs();
            sq += (e - z).norm_sqr();
        }
    }
    let count = v_true.len() as f64;
    Ok(EstimateReport {
        mape_magnitude: mape / count,
        mae_angle: mae / count,
        rmse: (sq / (2.0 * count)).sqrt(),
        n_runs: 1,
        ci95: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub half_width: f64,
}

/// Student-t 95% interval: mean ± t₀.₉₇₅,ₙ₋₁·s/√n.
pub fn confidence_interval(samples: &[f64]) -> Result<Interval> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let t = StudentsT::new(0.0, 1.0, nf - 1.0)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?
        .inverse_cdf(0.975);
    Ok(Interval {
        mean,
        half_width: t * var.sqrt() / nf.sqrt(),
    })
}

/// Mean of every metric over runs, with 95% half-widths when there are at
/// least two.
pub fn aggregate(reports: &[EstimateReport]) -> Result<EstimateReport> {
    let n = reports.len();
    if n == 0 {
        return Err(Error::UndefinedMetric("no runs to aggregate".into()));
    }
    let pick = |f: fn(&EstimateReport) -> f64| reports.iter().map(f).collect::<Vec<_>>();
    let (mape, mae, rmse) = (pick(|r| r.mape_magnitude), pick(|r| r.mae_angle), pick(|r| r.rmse));
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let ci95 = if n >= 2 {
        Some(Ci95 {
            mape_magnitude: confidence_interval(&mape)?.half_width,
            mae_angle: confidence_interval(&mae)?.half_width,
            rmse: confidence_interval(&rmse)?.half_width,
        })
    } else {
        None
    };
    Ok(EstimateReport {
        mape_magnitude: mean(&mape),
        mae_angle: mean(&mae),
        rmse: mean(&rmse),
        n_runs: n,
        ci95,
    })
}
