//! Analytic oracles for the constant-coefficient Black-Scholes market
//! (and the log-utility limits shared with the Bessel(3) example).
//!
//! With market price of risk lambda, discounting `dkappa = e^{-alpha t} dt`
//! and CRRA utility, the dual problem restricted to constant beta and the
//! local martingale deflator `S = y Z`, `Z = E(-lambda W)`, has objective
//!
//! ```text
//!     f(beta) = V(y) beta^q / D(beta),
//!     D(beta) = q beta + (1 - q)(alpha + q lambda^2 / 2),
//! ```
//!
//! finite on `D(beta) > 0` and minimized at
//! `beta_hat = alpha + q lambda^2 / 2` where `D(beta_hat) = beta_hat` and
//! `f(beta_hat) = V(y) beta_hat^{q-1}`. The primal value follows by
//! conjugacy: `u(x) = U(x) / beta_hat`, `u'(x) = x^{p-1} / beta_hat`.
//!
//! For log utility the pointwise minimization gives `beta_hat = alpha`,
//! `v(y) = (1/alpha)(-log y - 1 + lambda^2/(2 alpha) - log alpha)` and
//! `u(x) = (log x + lambda^2/(2 alpha)) / alpha`.
//!
//! The optimal wealth is the Merton portfolio,
//! `X_hat = x E(-q lambda W) / Z`, and along it the deflated wealth decays
//! as `E[X_hat_t R_hat_t] = x e^{-beta_hat t}` (per unit of initial dual
//! value), so `X_hat R_hat` is a potential and
//! `M = X_hat R_hat + int X_hat Y_hat dt` is a martingale.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{PathBundle, TimeGrid};
use crate::preference::{conjugate_value, u_value, UtilitySpec};

/// Parameter set for the Black-Scholes closed forms.
#[derive(Debug, Clone)]
pub struct BSParams {
    pub lambda: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub utility: UtilitySpec,
    pub x: f64,
    pub y: f64,
}

impl BSParams {
    pub fn new(
        lambda: f64,
        sigma: f64,
        alpha: f64,
        utility: UtilitySpec,
        x: f64,
        y: f64,
    ) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::domain("BSParams::new", format!("sigma must be positive, got {sigma}")));
        }
        if !(alpha > 0.0) {
            return Err(Error::domain("BSParams::new", format!("alpha must be positive, got {alpha}")));
        }
        if !(x > 0.0) || !(y > 0.0) {
            return Err(Error::domain("BSParams::new", "x and y must be positive"));
        }
        Ok(BSParams { lambda, sigma, alpha, utility, x, y })
    }

    pub fn beta_hat(&self) -> Result<f64> {
        bs_beta_hat(self.alpha, self.lambda, &self.utility)
    }
}

/// Optimal constant fraction of wealth in the risky asset:
/// `lambda / (sigma (1 - p))`, the myopic `lambda / sigma` for log.
pub fn merton_fraction(lambda: f64, sigma: f64, u: &UtilitySpec) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::domain("merton_fraction", format!("sigma must be positive, got {sigma}")));
    }
    let p = u.p();
    Ok(lambda / (sigma * (1.0 - p)))
}

/// The constant dual optimizer `beta_hat = alpha + q lambda^2 / 2`
/// (power) or `alpha` (log).
///
/// A non-positive result means the dual problem is not finitely valued at
/// these parameters and is surfaced as [`Error::InfiniteDual`].
pub fn bs_beta_hat(alpha: f64, lambda: f64, u: &UtilitySpec) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::domain("bs_beta_hat", format!("alpha must be positive, got {alpha}")));
    }
    let beta = alpha + 0.5 * u.q() * lambda * lambda;
    if beta <= 0.0 {
        return Err(Error::InfiniteDual {
            detail: format!(
                "beta_hat = alpha + q lambda^2 / 2 = {beta} <= 0: the dual value is \
                 infinite and the standing assumption v(y) < infinity fails"
            ),
        });
    }
    Ok(beta)
}

/// Dual objective over constant controls, `V(y) beta^q / D(beta)` with
/// `D(beta) = q beta + (1-q) beta_hat` for power utility; for log utility
/// the analogous profile
/// `(1/alpha)(-log y - log beta - 1) + (beta - alpha + lambda^2/2)/alpha^2`.
pub fn bs_dual_objective(beta: f64, y: f64, alpha: f64, lambda: f64, u: &UtilitySpec) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::domain("bs_dual_objective", format!("beta must be positive, got {beta}")));
    }
    if u.is_log() {
        if !(alpha > 0.0) {
            return Err(Error::domain("bs_dual_objective", "alpha must be positive"));
        }
        if !(y > 0.0) {
            return Err(Error::domain("bs_dual_objective", "y must be positive"));
        }
        return Ok((-y.ln() - beta.ln() - 1.0) / alpha
            + (beta - alpha + 0.5 * lambda * lambda) / (alpha * alpha));
    }
    let q = u.q();
    let beta_hat = bs_beta_hat(alpha, lambda, u)?;
    let denom = q * beta + (1.0 - q) * beta_hat;
    if denom <= 0.0 {
        return Err(Error::InfiniteDual {
            detail: format!(
                "dual integrand diverges at beta = {beta}: q beta + (1-q) beta_hat = \
                 {denom} <= 0, so v(y) = infinity on this control"
            ),
        });
    }
    Ok(conjugate_value(u, y)? * beta.powf(q) / denom)
}

/// Expected mass of the dual integral beyond a truncation horizon for the
/// constant-beta family with `S = y Z`:
/// `int_T^inf e^{-alpha t} E[V(gamma_t Y_t)] dt`.
///
/// For power utility the mean integrand is `V(y) beta^q e^{-D(beta) t}`,
/// so the tail is the full objective damped by `e^{-D(beta) T}`; for log
/// it is `e^{-alpha T} ((c + b T)/alpha + b/alpha^2)` with
/// `c = -1 - log(y beta)`, `b = beta - alpha + lambda^2/2`. Added to
/// truncated Monte-Carlo estimates so they target the untruncated value.
pub fn bs_dual_tail(
    beta: f64,
    y: f64,
    alpha: f64,
    lambda: f64,
    u: &UtilitySpec,
    t_max: f64,
) -> Result<f64> {
    if !(t_max > 0.0) {
        return Err(Error::domain("bs_dual_tail", "t_max must be positive"));
    }
    if u.is_log() {
        if !(beta > 0.0) || !(y > 0.0) || !(alpha > 0.0) {
            return Err(Error::domain("bs_dual_tail", "need beta, y, alpha positive"));
        }
        let c = -1.0 - (y * beta).ln();
        let b = beta - alpha + 0.5 * lambda * lambda;
        return Ok((-alpha * t_max).exp() * ((c + b * t_max) / alpha + b / (alpha * alpha)));
    }
    let q = u.q();
    let beta_hat = bs_beta_hat(alpha, lambda, u)?;
    let denom = q * beta + (1.0 - q) * beta_hat;
    let objective = bs_dual_objective(beta, y, alpha, lambda, u)?;
    Ok(objective * (-denom * t_max).exp())
}

/// Minimal dual value `v(y) = V(y) beta_hat^{q-1}` (power) or the log
/// closed form.
pub fn bs_dual_value(y: f64, alpha: f64, lambda: f64, u: &UtilitySpec) -> Result<f64> {
    if u.is_log() {
        return log_dual_value(y, alpha, lambda);
    }
    let beta_hat = bs_beta_hat(alpha, lambda, u)?;
    Ok(conjugate_value(u, y)? * beta_hat.powf(u.q() - 1.0))
}

/// Log-utility dual value
/// `(1/alpha)(-log y - 1 + lambda^2/(2 alpha) - log alpha)`.
pub fn log_dual_value(y: f64, alpha: f64, lambda: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::domain("log_dual_value", format!("alpha must be positive, got {alpha}")));
    }
    if !(y > 0.0) {
        return Err(Error::domain("log_dual_value", format!("y must be positive, got {y}")));
    }
    Ok((-y.ln() - 1.0 + 0.5 * lambda * lambda / alpha - alpha.ln()) / alpha)
}

/// Primal value by conjugacy: `u(x) = U(x) / beta_hat` (power),
/// `(log x + lambda^2/(2 alpha)) / alpha` (log).
pub fn bs_primal_value(x: f64, alpha: f64, lambda: f64, u: &UtilitySpec) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::domain("bs_primal_value", format!("x must be positive, got {x}")));
    }
    if u.is_log() {
        if !(alpha > 0.0) {
            return Err(Error::domain("bs_primal_value", "alpha must be positive"));
        }
        return Ok((x.ln() + 0.5 * lambda * lambda / alpha) / alpha);
    }
    Ok(u_value(u, x)? / bs_beta_hat(alpha, lambda, u)?)
}

/// Marginal primal value `u'(x) = x^{p-1} / beta_hat` (power),
/// `1/(alpha x)` (log); the conjugate minimizer `y = u'(x)`.
pub fn bs_marginal_primal(x: f64, alpha: f64, lambda: f64, u: &UtilitySpec) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::domain("bs_marginal_primal", format!("x must be positive, got {x}")));
    }
    if u.is_log() {
        if !(alpha > 0.0) {
            return Err(Error::domain("bs_marginal_primal", "alpha must be positive"));
        }
        return Ok(1.0 / (alpha * x));
    }
    Ok(x.powf(u.p() - 1.0) / bs_beta_hat(alpha, lambda, u)?)
}

/// The non-negative martingale `H_t = beta_hat^{-(1-q)} E(-q lambda W)_t`;
/// for log utility `H = 1/alpha` is constant.
pub fn bs_h(exp_neg_qlw: f64, alpha: f64, lambda: f64, u: &UtilitySpec) -> Result<f64> {
    if u.is_log() {
        if !(alpha > 0.0) {
            return Err(Error::domain("bs_h", "alpha must be positive"));
        }
        return Ok(1.0 / alpha);
    }
    let beta_hat = bs_beta_hat(alpha, lambda, u)?;
    Ok(beta_hat.powf(u.q() - 1.0) * exp_neg_qlw)
}

/// Optimal wealth `X_hat = x E(-q lambda W) / Z`, evaluated pathwise as
/// `x exp((1-q) lambda W_t + lambda^2 (1 - q^2) t / 2)`; the log case
/// reduces to `x / Z`.
pub fn bs_optimal_wealth(
    x: f64,
    w: &PathBundle,
    lambda: f64,
    u: &UtilitySpec,
    grid: &Arc<TimeGrid>,
) -> Result<PathBundle> {
    if !(x > 0.0) {
        return Err(Error::domain("bs_optimal_wealth", format!("x must be positive, got {x}")));
    }
    let q = u.q();
    let a = (1.0 - q) * lambda;
    let drift = 0.5 * lambda * lambda * (1.0 - q * q);
    let n_nodes = grid.n_nodes();
    let mut values = Vec::with_capacity(w.n_paths() * n_nodes);
    for wp in w.paths() {
        for i in 0..n_nodes {
            values.push(x * (a * wp[i] + drift * grid.t(i)).exp());
        }
    }
    PathBundle::from_values(grid.clone(), w.n_paths(), values, "X_hat")
}

/// `E[Z_u^q | F_t] = E(-q lambda W)_t exp(-q(1-q) lambda^2 u / 2)` for the
/// Black-Scholes deflator `Z = E(-lambda W)`.
pub fn zq_conditional_mean(q: f64, lambda: f64, t: f64, u_time: f64, exp_neg_qlw_t: f64) -> Result<f64> {
    if t > u_time || t < 0.0 {
        return Err(Error::domain(
            "zq_conditional_mean",
            format!("need 0 <= t <= u, got t = {t}, u = {u_time}"),
        ));
    }
    Ok(exp_neg_qlw_t * (-0.5 * q * (1.0 - q) * lambda * lambda * u_time).exp())
}

/// `E[X_hat_t R_hat_t] = x e^{-beta_hat t}` per unit of initial dual value
/// (i.e. with `R_hat` normalized to `R_hat_0 = 1`); exact pathwise in the
/// log case.
pub fn bs_expected_deflated_wealth(t: f64, x: f64, alpha: f64, lambda: f64, u: &UtilitySpec) -> Result<f64> {
    if t < 0.0 {
        return Err(Error::domain("bs_expected_deflated_wealth", "t must be non-negative"));
    }
    let beta_hat = bs_beta_hat(alpha, lambda, u)?;
    Ok(x * (-beta_hat * t).exp())
}
