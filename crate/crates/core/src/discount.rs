//! The weighting measure kappa on time, its density, and the random-horizon
//! reductions.
//!
//! All kappa-integrals in this crate are discretized with the left-endpoint
//! rule, `sum_i f(t_i) * (kappa(t_{i+1}) - kappa(t_i))`, matching the
//! adapted-integrand convention; jumps (the stopping-time indicator) are
//! applied atomically at the jump grid node.

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;

/// A non-decreasing, bounded weighting process kappa with kappa(0) = 0.
#[derive(Debug, Clone, PartialEq)]
pub enum DiscountMeasure {
    /// `kappa(t) = (1 - e^{-alpha t}) / alpha`, i.e. `d kappa = e^{-alpha t} dt`.
    ExponentialRate { alpha: f64 },
    /// `kappa(t) = 1 - e^{-lambda_T t} = P[T <= t]` for an independent
    /// exponential horizon `T`.
    RandomHorizonRate { lambda_t: f64 },
    /// `kappa(t) = 1_{t >= T}` for a deterministic time `T`.
    StoppingIndicator { t_stop: f64 },
    /// Piecewise-linear interpolation of `(t_i, kappa_i)` pairs, constant
    /// after the last point.
    Tabulated { times: Vec<f64>, values: Vec<f64> },
}

impl DiscountMeasure {
    pub fn exponential_rate(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::domain("exponential_rate", format!("alpha must be positive, got {alpha}")));
        }
        Ok(DiscountMeasure::ExponentialRate { alpha })
    }

    pub fn random_horizon_rate(lambda_t: f64) -> Result<Self> {
        if !(lambda_t > 0.0) || !lambda_t.is_finite() {
            return Err(Error::domain("random_horizon_rate", format!("hazard rate must be positive, got {lambda_t}")));
        }
        Ok(DiscountMeasure::RandomHorizonRate { lambda_t })
    }

    pub fn stopping_indicator(t_stop: f64) -> Result<Self> {
        if !(t_stop >= 0.0) || !t_stop.is_finite() {
            return Err(Error::domain("stopping_indicator", format!("T must be non-negative, got {t_stop}")));
        }
        Ok(DiscountMeasure::StoppingIndicator { t_stop })
    }

    pub fn tabulated(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() || times.len() < 2 {
            return Err(Error::domain("tabulated", "need at least two (t, kappa) pairs of equal length"));
        }
        if times[0] != 0.0 || values[0] != 0.0 {
            return Err(Error::domain("tabulated", "table must start at (0, 0)"));
        }
        for w in times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::domain("tabulated", "times must be strictly increasing"));
            }
        }
        for w in values.windows(2) {
            if w[1] < w[0] {
                return Err(Error::domain("tabulated", "kappa values must be non-decreasing"));
            }
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::domain("tabulated", "kappa values must be finite"));
        }
        Ok(DiscountMeasure::Tabulated { times, values })
    }

    /// Loads a tabulated measure from two-column CSV `(t, kappa)` with a
    /// header row.
    pub fn tabulated_from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let mut times = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() < 2 {
                return Err(Error::domain("tabulated_from_csv", "rows must have two columns"));
            }
            let t: f64 = rec[0].trim().parse().map_err(|e| {
                Error::domain("tabulated_from_csv", format!("bad time {:?}: {e}", &rec[0]))
            })?;
            let k: f64 = rec[1].trim().parse().map_err(|e| {
                Error::domain("tabulated_from_csv", format!("bad kappa {:?}: {e}", &rec[1]))
            })?;
            times.push(t);
            values.push(k);
        }
        Self::tabulated(times, values)
    }

    pub fn tabulated_from_csv_path(path: &Path) -> Result<Self> {
        Self::tabulated_from_csv(std::fs::File::open(path)?)
    }

    pub fn has_density(&self) -> bool {
        matches!(
            self,
            DiscountMeasure::ExponentialRate { .. } | DiscountMeasure::RandomHorizonRate { .. }
        )
    }
}

/// `kappa(t)`.
pub fn kappa_at(m: &DiscountMeasure, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::domain("kappa_at", format!("t must be non-negative, got {t}")));
    }
    Ok(match m {
        DiscountMeasure::ExponentialRate { alpha } => (-(-alpha * t).exp_m1()) / alpha,
        DiscountMeasure::RandomHorizonRate { lambda_t } => -(-lambda_t * t).exp_m1(),
        DiscountMeasure::StoppingIndicator { t_stop } => {
            if t >= *t_stop {
                1.0
            } else {
                0.0
            }
        }
        DiscountMeasure::Tabulated { times, values } => {
            let n = times.len();
            if t >= times[n - 1] {
                values[n - 1]
            } else {
                let i = times.partition_point(|&s| s <= t) - 1;
                let w = (t - times[i]) / (times[i + 1] - times[i]);
                values[i] + w * (values[i + 1] - values[i])
            }
        }
    })
}

/// Increments `kappa(t_{i+1}) - kappa(t_i)` over the grid, length N.
pub fn kappa_increments(m: &DiscountMeasure, grid: &TimeGrid) -> Vec<f64> {
    let mut prev = 0.0;
    (1..grid.n_nodes())
        .map(|i| {
            let k = kappa_at(m, grid.t(i)).expect("grid times are non-negative");
            let d = k - prev;
            prev = k;
            d
        })
        .collect()
}

/// Reciprocal density `gamma(t) = (d kappa / dt)^{-1}`.
pub fn gamma_at(m: &DiscountMeasure, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::domain("gamma_at", format!("t must be non-negative, got {t}")));
    }
    match m {
        DiscountMeasure::ExponentialRate { alpha } => Ok((alpha * t).exp()),
        DiscountMeasure::RandomHorizonRate { lambda_t } => Ok((lambda_t * t).exp() / lambda_t),
        _ => Err(Error::Unsupported {
            op: "gamma_at",
            detail: "this measure has no Lebesgue density".into(),
        }),
    }
}

/// Folds an independent exponential horizon into the discount rate:
/// `E[int_0^T e^{-alpha t} .. dt] = E[int_0^inf e^{-(alpha+lambda) t} .. dt]`.
pub fn collapse_random_horizon(alpha: f64, lambda_t: f64) -> Result<DiscountMeasure> {
    if !(alpha >= 0.0) || !(lambda_t >= 0.0) {
        return Err(Error::domain("collapse_random_horizon", "rates must be non-negative"));
    }
    if alpha + lambda_t == 0.0 {
        return Err(Error::DegenerateMeasure);
    }
    DiscountMeasure::exponential_rate(alpha + lambda_t)
}

/// Total mass `kappa_inf`.
pub fn total_mass(m: &DiscountMeasure) -> f64 {
    match m {
        DiscountMeasure::ExponentialRate { alpha } => 1.0 / alpha,
        DiscountMeasure::RandomHorizonRate { .. } => 1.0,
        DiscountMeasure::StoppingIndicator { .. } => 1.0,
        DiscountMeasure::Tabulated { values, .. } => *values.last().unwrap(),
    }
}

/// Mass beyond `t`: `kappa_inf - kappa(t)`; the truncation error bound
/// reported by every infinite-horizon estimator.
pub fn tail_mass(m: &DiscountMeasure, t: f64) -> f64 {
    total_mass(m) - kappa_at(m, t).unwrap_or(0.0)
}
