//! Minimization of the dual objective over constant auxiliary controls
//! beta (with psi = 0), against closed-form and Monte-Carlo objectives.
//!
//! The search is a derivative-free golden-section bracket shrink: MC
//! objectives are noisy, so no derivatives are trusted. Domain errors
//! (the dual integral diverges for beta outside `D(beta) > 0`) shrink the
//! bracket toward the feasible side and retry, up to three times.
//!
//! MC objectives are evaluated under common random numbers: one seed, one
//! set of deflator paths, shared across every beta in a profile, so the
//! profile is smooth in beta and differences between nearby beta values
//! have far less variance than the values themselves. Truncated estimates
//! can be recentred with the analytic tail from
//! [`closed_form::bs_dual_tail`]. For a noisy profile the resolution on
//! the minimizer follows from the local curvature: a vertical uncertainty
//! `se` on the objective translates to `delta_beta = sqrt(2 se / f'')`.

use std::sync::Arc;

use crate::closed_form;
use crate::deflator::PsiSpec;
use crate::discount::{self, DiscountMeasure};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::market::{
    mpr_path, simulate_bessel3_block, simulate_brownian_block, stochastic_exponential_const,
    BesselMethod, MarketModel,
};
use crate::pipeline::run_mc_multi;
use crate::preference::UtilitySpec;
use crate::verify::{MCEstimate, Verdict};

/// A bracketed scalar minimization task; the objective is assumed
/// unimodal on the bracket interior.
pub struct ScalarMinProblem<'a> {
    pub objective: Box<dyn FnMut(f64) -> Result<f64> + 'a>,
    pub bracket: (f64, f64),
    /// Absolute tolerance on the minimizer.
    pub tol: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct MinResult {
    pub beta: f64,
    pub value: f64,
    pub evaluations: u32,
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

fn golden(
    f: &mut dyn FnMut(f64) -> Result<f64>,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    evals: &mut u32,
) -> std::result::Result<MinResult, (f64, Error)> {
    // An infinite dual value is a valid objective value (+infinity), not a
    // failure: comparisons steer the bracket away from the divergent
    // region. Other errors abort the pass and trigger a bracket retry.
    let mut eval = |x: f64, evals: &mut u32| -> std::result::Result<f64, (f64, Error)> {
        *evals += 1;
        match f(x) {
            Ok(v) => Ok(v),
            Err(Error::InfiniteDual { .. }) => Ok(f64::INFINITY),
            Err(e) => Err((x, e)),
        }
    };
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = eval(x1, evals)?;
    let mut f2 = eval(x2, evals)?;
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = eval(x1, evals)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = eval(x2, evals)?;
        }
    }
    let (beta, value) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    if value.is_infinite() {
        return Err((
            beta,
            Error::InfiniteDual {
                detail: "the objective is infinite on the whole bracket".into(),
            },
        ));
    }
    Ok(MinResult { beta, value, evaluations: *evals })
}

/// Golden-section minimization over the bracket; on a domain error the
/// bracket is shrunk toward the feasible side (the failing endpoint
/// becomes the new boundary) and the search restarts, at most three
/// times.
pub fn minimize_constant_beta(mut prob: ScalarMinProblem<'_>) -> Result<MinResult> {
    let (mut lo, mut hi) = prob.bracket;
    if !(lo > 0.0) || !(hi > lo) || !(prob.tol > 0.0) {
        return Err(Error::domain(
            "minimize_constant_beta",
            format!("need 0 < lo < hi and tol > 0, got ({lo}, {hi}), tol {}", prob.tol),
        ));
    }
    let mut evals = 0u32;
    let mut retries = 0;
    loop {
        match golden(&mut prob.objective, lo, hi, prob.tol, &mut evals) {
            Ok(res) => return Ok(res),
            Err((at, err)) => {
                if retries >= 3 {
                    return Err(err);
                }
                retries += 1;
                // Probe the endpoints to find the feasible side: the domain
                // of the dual objective is an interval, so whichever
                // endpoint evaluates cleanly tells us where to shrink.
                evals += 1;
                if (prob.objective)(lo).is_ok() {
                    hi = at;
                } else {
                    evals += 1;
                    if (prob.objective)(hi).is_ok() {
                        lo = at;
                    } else {
                        return Err(err);
                    }
                }
                if hi - lo <= prob.tol {
                    return Err(err);
                }
            }
        }
    }
}

/// Curvature-derived uncertainty on a noisy minimizer: second difference
/// of the profile at spacing `h` plus the vertical noise level `se`
/// give `delta_beta = sqrt(2 se / f'')`. Returns `(f'', delta_beta)`.
pub fn curvature_uncertainty(h: f64, f_minus: f64, f_mid: f64, f_plus: f64, se: f64) -> (f64, f64) {
    let f2 = (f_minus - 2.0 * f_mid + f_plus) / (h * h);
    if f2 > 0.0 {
        (f2, (2.0 * se.abs() / f2).sqrt())
    } else {
        (f2, f64::INFINITY)
    }
}

/// Monte-Carlo dual objective profile over constant beta values under
/// common random numbers.
///
/// For every beta the deflator family is `Y = y beta e^{-beta t} Z` with
/// `Z = E(-lambda W - psi Wperp)` (for the Bessel market, `Z0 = 1/B`
/// times the orthogonal leg), and the objective is the change-of-variable
/// dual integral `E[int V(gamma_t Y_t) dkappa_t]`. All betas share one
/// simulated deflator per path, so profile differences are smooth in
/// beta.
pub fn mc_dual_profile(
    model: &MarketModel,
    u: &UtilitySpec,
    kappa: &DiscountMeasure,
    grid: &Arc<TimeGrid>,
    y: f64,
    betas: &[f64],
    psi: f64,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<MCEstimate>> {
    if betas.iter().any(|&b| !(b > 0.0)) {
        return Err(Error::domain("mc_dual_profile", "every beta must be positive"));
    }
    if !(y > 0.0) {
        return Err(Error::domain("mc_dual_profile", format!("y must be positive, got {y}")));
    }
    let n_nodes = grid.n_nodes();
    let dkappa = discount::kappa_increments(kappa, grid);
    let gamma: Vec<f64> =
        grid.times().map(|t| discount::gamma_at(kappa, t)).collect::<Result<_>>()?;
    // Deterministic per-node factor gamma_i * y * beta * e^{-beta t_i} for
    // each beta; the dual integrand only sees its product with Z.
    let is_log = u.is_log();
    let q = u.q();
    let factors: Vec<Vec<f64>> = betas
        .iter()
        .map(|&b| {
            (0..n_nodes)
                .map(|i| {
                    let fac = gamma[i] * y * b * (-b * grid.t(i)).exp();
                    if is_log {
                        fac.ln()
                    } else {
                        fac.powf(q)
                    }
                })
                .collect()
        })
        .collect();

    let accs = run_mc_multi(n_paths, betas.len(), |range| {
        let z = match model {
            MarketModel::BlackScholes { lambda, .. } => {
                let (w, w_perp) = simulate_brownian_block(grid, range, seed);
                let mut z = stochastic_exponential_const(-lambda, &w, grid);
                if psi != 0.0 {
                    let zp = stochastic_exponential_const(-psi, &w_perp, grid);
                    z = z.zip_map(&zp, "Z", |a, b| a * b)?;
                }
                z
            }
            MarketModel::Bessel3Market { .. } => {
                let sim = simulate_bessel3_block(grid, range, seed, BesselMethod::Norm3d);
                let mut z = mpr_path(&sim.b)?;
                if psi != 0.0 {
                    let (_, w_perp) = simulate_brownian_block(grid, range, seed);
                    let zp = stochastic_exponential_const(-psi, &w_perp, grid);
                    z = z.zip_map(&zp, "Z", |a, b| a * b)?;
                }
                z
            }
        };
        let mut accs = vec![crate::verify::Accumulator::default(); betas.len()];
        let mut z_pow = vec![0.0f64; n_nodes];
        for zp in z.paths() {
            // One transcendental pass per path, shared by all betas.
            if is_log {
                for i in 0..n_nodes {
                    z_pow[i] = zp[i].ln();
                }
            } else {
                for i in 0..n_nodes {
                    z_pow[i] = zp[i].powf(q);
                }
            }
            for (k, fac) in factors.iter().enumerate() {
                let mut acc = 0.0;
                if is_log {
                    // V(v) = -(1 + log v)
                    for i in 0..n_nodes - 1 {
                        acc -= (1.0 + fac[i] + z_pow[i]) * dkappa[i];
                    }
                } else {
                    // V(v) = -v^q / q
                    for i in 0..n_nodes - 1 {
                        acc -= fac[i] * z_pow[i] / q * dkappa[i];
                    }
                }
                accs[k].push(acc);
            }
        }
        Ok(accs)
    })?;
    let tail_mass = discount::tail_mass(kappa, grid.t_max());
    accs.into_iter().map(|a| a.into_estimate(tail_mass)).collect()
}

/// Single-beta convenience wrapper around [`mc_dual_profile`].
pub fn mc_dual_objective(
    model: &MarketModel,
    u: &UtilitySpec,
    kappa: &DiscountMeasure,
    grid: &Arc<TimeGrid>,
    y: f64,
    beta: f64,
    psi: &PsiSpec,
    n_paths: usize,
    seed: u64,
) -> Result<MCEstimate> {
    let psi = match psi {
        PsiSpec::Constant(c) => *c,
        PsiSpec::StateFeedback(_) => {
            return Err(Error::Unsupported {
                op: "mc_dual_objective",
                detail: "only constant psi profiles are scanned".into(),
            })
        }
    };
    Ok(mc_dual_profile(model, u, kappa, grid, y, &[beta], psi, n_paths, seed)?
        .pop()
        .expect("one estimate per beta"))
}

/// Verifies that the orthogonal control psi = 0 minimizes the log-utility
/// dual objective: under common random numbers, the objective at psi = 0
/// must not exceed the objective at any scanned psi beyond 3 combined
/// standard errors.
pub fn psi_zero_optimality_check(
    model: &MarketModel,
    kappa: &DiscountMeasure,
    grid: &Arc<TimeGrid>,
    beta: f64,
    psi_values: &[f64],
    y: f64,
    n_paths: usize,
    seed: u64,
) -> Result<Verdict> {
    if !psi_values.contains(&0.0) {
        return Err(Error::structural("psi_zero_optimality_check", "psi grid must contain 0"));
    }
    let u = UtilitySpec::Log;
    let mut estimates = Vec::with_capacity(psi_values.len());
    for &psi in psi_values {
        estimates.push(mc_dual_profile(model, &u, kappa, grid, y, &[beta], psi, n_paths, seed)?[0]);
    }
    let at_zero = estimates[psi_values.iter().position(|&p| p == 0.0).unwrap()];
    let mut worst: f64 = 0.0;
    let mut detail = format!("psi scan at beta = {beta}:");
    for (&psi, est) in psi_values.iter().zip(&estimates) {
        detail.push_str(&format!(" f({psi}) = {:.4} +- {:.4};", est.mean, est.std_error));
        if psi == 0.0 {
            continue;
        }
        let band = 3.0
            * (at_zero.std_error.powi(2) + est.std_error.powi(2)).sqrt()
            + 1e-10 * est.mean.abs().max(1.0);
        worst = worst.max((at_zero.mean - est.mean) / band);
    }
    Ok(Verdict::from_bound(worst, 1.0, detail))
}

/// Closed-form Black-Scholes dual objective wrapped as a minimization
/// problem over the given bracket.
pub fn bs_closed_form_problem<'a>(
    y: f64,
    alpha: f64,
    lambda: f64,
    u: &'a UtilitySpec,
    bracket: (f64, f64),
    tol: f64,
) -> ScalarMinProblem<'a> {
    ScalarMinProblem {
        objective: Box::new(move |beta| closed_form::bs_dual_objective(beta, y, alpha, lambda, u)),
        bracket,
        tol,
    }
}
