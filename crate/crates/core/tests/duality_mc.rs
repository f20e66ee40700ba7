//! Monte-Carlo integration tests for the dual-side machinery: the budget
//! inequality across randomized admissible controls, weak duality across a
//! grid of strategies and dual controls, and consistency of the two
//! integral conventions for the auxiliary control beta.

use std::sync::Arc;

use deflator_lab::closed_form::{bs_dual_tail, merton_fraction};
use deflator_lab::deflator::{
    BaseDeflator, BetaControl, Convention, DeflatorSpec, PsiSpec,
};
use deflator_lab::discount::{self, DiscountMeasure};
use deflator_lab::dual_opt::mc_dual_profile;
use deflator_lab::grid::{PathBundle, TimeGrid};
use deflator_lab::market::{simulate_brownian, MarketModel, Strategy};
use deflator_lab::preference::UtilitySpec;
use deflator_lab::rng::{uniform, Stream};
use deflator_lab::verify::{
    budget_verdict, estimate_budget, estimate_dual, estimate_primal, gamma_nodes,
    weak_duality_gap, BudgetMode, MCEstimate,
};

const ALPHA: f64 = 0.1;
const LAMBDA: f64 = 0.4;
const SIGMA: f64 = 0.2;

fn grid(t_max: f64, n_steps: usize) -> Arc<TimeGrid> {
    Arc::new(TimeGrid::new(t_max, n_steps).unwrap())
}

/// The budget constraint `E[int X Y dt] <= x y` must hold for *every*
/// admissible wealth process and deflator, not just at the optimum.
/// Randomize the proportional strategy theta, the auxiliary control beta,
/// and the orthogonal exposure psi of the base deflator.
#[test]
fn budget_inequality_randomized_controls() {
    let g = grid(20.0, 200);
    let n_paths = 4096;
    let (x0, y0) = (1.0, 1.0);
    let model = MarketModel::black_scholes(LAMBDA, SIGMA).unwrap();
    let kappa = DiscountMeasure::exponential_rate(ALPHA).unwrap();
    let (w, wperp) = simulate_brownian(&g, n_paths, 2024);
    let lam = model.constant_mpr_bundle(g.clone(), n_paths).unwrap();

    for k in 0..20u64 {
        // Deterministic draws from the counter RNG, decoupled from the
        // Brownian streams by the seed.
        let theta = 8.0 * uniform(9001, Stream::Scenario, k, 0);
        let beta = 0.005 + 0.495 * uniform(9001, Stream::Scenario, k, 1);
        let psi = -1.0 + 2.0 * uniform(9001, Stream::Scenario, k, 2);

        let x = deflator_lab::market::simulate_wealth(
            &model,
            &Strategy::Constant(theta),
            &g,
            &w,
            &lam,
            x0,
        )
        .unwrap();
        let spec = DeflatorSpec::new(
            BaseDeflator::LocalMartingale { psi: PsiSpec::Constant(psi) },
            BetaControl::constant(beta).unwrap(),
            y0,
        )
        .unwrap();
        let triple = spec
            .build(&w, &wperp, &lam, &kappa, &g, Convention::Lebesgue)
            .unwrap();
        let est = estimate_budget(&x, &triple, &kappa, &g).unwrap();
        // Truncation only discards non-negative mass, so no tail allowance
        // is needed on the upper bound.
        let verdict = budget_verdict(&est, x0, y0, BudgetMode::Inequality, 0.0);
        assert!(
            verdict.passed(),
            "triple {k} (theta={theta:.3}, beta={beta:.3}, psi={psi:.3}): {}",
            verdict.detail
        );
    }
}

/// Weak duality `E[int V(gamma Y) dkappa] + xy >= E[int U(X) dkappa]` for
/// every pairing of candidate strategies (scalings of the Merton fraction)
/// with candidate constant-beta deflators. The dual side carries its exact
/// analytic tail beyond the truncation horizon, so the comparison is not
/// biased in the favorable direction.
#[test]
fn weak_duality_across_strategy_and_beta_grid() {
    let u = UtilitySpec::power(0.5).unwrap();
    let g = grid(40.0, 400);
    let n_paths = 20_000;
    let (x0, y0) = (1.0, 50.0);
    let model = MarketModel::black_scholes(LAMBDA, SIGMA).unwrap();
    let kappa = DiscountMeasure::exponential_rate(ALPHA).unwrap();
    let theta_hat = merton_fraction(LAMBDA, SIGMA, &u).unwrap();
    let betas = [0.008, 0.015, 0.02, 0.03];

    // Common deflator sample across all betas.
    let duals = mc_dual_profile(&model, &u, &kappa, &g, y0, &betas, 0.0, n_paths, 7)
        .unwrap()
        .into_iter()
        .zip(betas)
        .map(|(est, beta)| {
            let tail = bs_dual_tail(beta, y0, ALPHA, LAMBDA, &u, g.t_max()).unwrap();
            MCEstimate { mean: est.mean + tail, ..est }
        })
        .collect::<Vec<_>>();

    let (w, _) = simulate_brownian(&g, n_paths, 11);
    let lam = model.constant_mpr_bundle(g.clone(), n_paths).unwrap();
    for scale in [0.25, 0.5, 1.0, 2.0, 4.0] {
        let x = deflator_lab::market::simulate_wealth(
            &model,
            &Strategy::Constant(scale * theta_hat),
            &g,
            &w,
            &lam,
            x0,
        )
        .unwrap();
        // Truncated primal: a lower bound on the value of this strategy
        // since U >= 0 for p = 0.5.
        let primal = estimate_primal(&u, &x, &kappa, &g).unwrap();
        for (beta, dual) in betas.iter().zip(&duals) {
            let verdict = weak_duality_gap(&primal, dual, x0, y0);
            assert!(
                verdict.passed(),
                "scale {scale} x Merton vs beta {beta}: {}",
                verdict.detail
            );
        }
    }
}

/// The Lebesgue-convention dual estimator `E[int V(gamma Y) dkappa]` must
/// coincide with the kappa-convention estimator applied to the
/// pre-multiplied bundle `gamma Y`.
#[test]
fn dual_conventions_agree_after_change_of_variable() {
    let u = UtilitySpec::power(0.5).unwrap();
    let g = grid(10.0, 100);
    let n_paths = 2000;
    let model = MarketModel::black_scholes(LAMBDA, SIGMA).unwrap();
    let kappa = DiscountMeasure::exponential_rate(ALPHA).unwrap();
    let (w, wperp) = simulate_brownian(&g, n_paths, 5);
    let lam = model.constant_mpr_bundle(g.clone(), n_paths).unwrap();
    let spec = DeflatorSpec::new(
        BaseDeflator::LocalMartingale { psi: PsiSpec::zero() },
        BetaControl::constant(0.02).unwrap(),
        1.0,
    )
    .unwrap();
    let triple = spec
        .build(&w, &wperp, &lam, &kappa, &g, Convention::Lebesgue)
        .unwrap();

    let lebesgue = estimate_dual(&u, &triple.y, &kappa, &g, Convention::Lebesgue).unwrap();

    let gamma = gamma_nodes(&kappa, &g).unwrap();
    let n_nodes = g.n_nodes();
    let mut scaled = triple.y.map("gammaY", |v| v);
    for row in scaled.paths_mut() {
        for i in 0..n_nodes {
            row[i] *= gamma[i];
        }
    }
    let kappa_form = estimate_dual(&u, &scaled, &kappa, &g, Convention::Kappa).unwrap();

    let rel = (lebesgue.mean - kappa_form.mean).abs() / lebesgue.mean.abs().max(1.0);
    assert!(rel < 1e-12, "convention mismatch: rel diff {rel:.3e}");
}

/// A constant beta under the Lebesgue convention equals the time-varying
/// control `beta gamma(t)` under the kappa convention in the continuum
/// (`beta dt = beta gamma dkappa`); the discretizations converge to each
/// other at first order in dt.
#[test]
fn beta_conventions_converge_with_refinement() {
    let beta = 0.05;
    let kappa = DiscountMeasure::exponential_rate(ALPHA).unwrap();

    let rel_diff = |n_steps: usize| -> f64 {
        let g = grid(20.0, n_steps);
        // Deterministic base S == 1: R is then a pure exponential of the
        // accumulated control and the comparison is noise-free.
        let dummy_w = PathBundle::constant(g.clone(), 1, 0.0, "W");
        let lam = PathBundle::constant(g.clone(), 1, LAMBDA, "lambda");

        let lebesgue = DeflatorSpec::new(
            BaseDeflator::UnitProcess,
            BetaControl::constant(beta).unwrap(),
            1.0,
        )
        .unwrap()
        .build(&dummy_w, &dummy_w, &lam, &kappa, &g, Convention::Lebesgue)
        .unwrap();

        let times: Vec<f64> = g.times().collect();
        let values: Vec<f64> = times
            .iter()
            .map(|&t| beta * discount::gamma_at(&kappa, t).unwrap())
            .collect();
        let tabulated = DeflatorSpec::new(
            BaseDeflator::UnitProcess,
            BetaControl::DeterministicTabulated { times, values },
            1.0,
        )
        .unwrap()
        .build(&dummy_w, &dummy_w, &lam, &kappa, &g, Convention::Kappa)
        .unwrap();

        let a = lebesgue.r.path(0);
        let b = tabulated.r.path(0);
        a.iter()
            .zip(b)
            .map(|(&ra, &rb)| (ra - rb).abs() / ra)
            .fold(0.0f64, f64::max)
    };

    let coarse = rel_diff(2000);
    let fine = rel_diff(4000);
    assert!(coarse < 1e-3, "conventions differ by {coarse:.3e} at dt = 0.01");
    assert!(
        fine < 0.6 * coarse,
        "discrepancy not first-order in dt: {coarse:.3e} -> {fine:.3e}"
    );
}
