//! Seeded Monte-Carlo simulation of Brownian drivers, the two market
//! models, wealth paths under proportional strategies, and stochastic
//! exponentials.
//!
//! The stock price is never simulated: every quantity of interest depends
//! only on `(lambda, sigma, W)`, so wealth evolves directly from
//! `dX = sigma * theta * X * (lambda dt + dW)` via a positivity-preserving
//! log-Euler update. For constant coefficients the update is exact in law.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{PathBundle, TimeGrid};
use crate::rng::{standard_normal, Stream};

/// Volatility specification: constant or a deterministic table of
/// `(t, sigma)` pairs (piecewise-linear, constant after the last point).
#[derive(Debug, Clone)]
pub enum VolSpec {
    Constant(f64),
    Tabulated { times: Vec<f64>, values: Vec<f64> },
}

impl VolSpec {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            VolSpec::Constant(s) => *s,
            VolSpec::Tabulated { times, values } => {
                let n = times.len();
                if t <= times[0] {
                    values[0]
                } else if t >= times[n - 1] {
                    values[n - 1]
                } else {
                    let i = times.partition_point(|&s| s <= t) - 1;
                    let w = (t - times[i]) / (times[i + 1] - times[i]);
                    values[i] + w * (values[i + 1] - values[i])
                }
            }
        }
    }
}

/// The two market models of interest.
#[derive(Debug, Clone)]
pub enum MarketModel {
    /// Constant market price of risk and volatility.
    BlackScholes { lambda: f64, sigma: f64 },
    /// Market price of risk `lambda = 1/B` for a three-dimensional Bessel
    /// process `B` with `B_0 = 1`.
    Bessel3Market { sigma: VolSpec },
}

impl MarketModel {
    pub fn black_scholes(lambda: f64, sigma: f64) -> Result<Self> {
        if !lambda.is_finite() {
            return Err(Error::domain("black_scholes", format!("lambda must be finite, got {lambda}")));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::domain("black_scholes", format!("sigma must be positive, got {sigma}")));
        }
        Ok(MarketModel::BlackScholes { lambda, sigma })
    }

    pub fn bessel3(sigma: VolSpec) -> Result<Self> {
        if let VolSpec::Constant(s) = sigma {
            if !(s > 0.0) {
                return Err(Error::domain("bessel3", format!("sigma must be positive, got {s}")));
            }
        }
        Ok(MarketModel::Bessel3Market { sigma })
    }

    pub fn sigma_at(&self, t: f64) -> f64 {
        match self {
            MarketModel::BlackScholes { sigma, .. } => *sigma,
            MarketModel::Bessel3Market { sigma } => sigma.at(t),
        }
    }

    /// The constant MPR bundle for Black-Scholes; Bessel markets get their
    /// MPR from [`mpr_path`].
    pub fn constant_mpr_bundle(&self, grid: Arc<TimeGrid>, n_paths: usize) -> Option<PathBundle> {
        match self {
            MarketModel::BlackScholes { lambda, .. } => {
                Some(PathBundle::constant(grid, n_paths, *lambda, "lambda"))
            }
            MarketModel::Bessel3Market { .. } => None,
        }
    }
}

/// A proportional (fraction-of-wealth) trading strategy `theta(t, lambda_t)`.
#[derive(Clone)]
pub enum Strategy {
    Constant(f64),
    Feedback(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

impl Strategy {
    pub fn at(&self, t: f64, lambda: f64) -> f64 {
        match self {
            Strategy::Constant(c) => *c,
            Strategy::Feedback(f) => f(t, lambda),
        }
    }

    /// The myopic strategy `theta = lambda / sigma`, log-optimal.
    pub fn myopic(sigma: f64) -> Strategy {
        Strategy::Feedback(Arc::new(move |_t, lam| lam / sigma))
    }
}

impl fmt::Debug for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Constant(c) => write!(f, "Strategy::Constant({c})"),
            Strategy::Feedback(_) => write!(f, "Strategy::Feedback(..)"),
        }
    }
}

/// Which path indices a simulation covers. Absolute indices feed the
/// counter-based RNG, so a block decomposition reproduces the monolithic
/// simulation bitwise.
#[derive(Debug, Clone, Copy)]
pub struct PathRange {
    pub first: u64,
    pub count: usize,
}

impl PathRange {
    pub fn from_zero(count: usize) -> Self {
        PathRange { first: 0, count }
    }
}

fn fill_rows(
    grid: &Arc<TimeGrid>,
    range: PathRange,
    label: &str,
    row_fn: impl Fn(u64, &mut [f64]) + Sync,
) -> PathBundle {
    let n_nodes = grid.n_nodes();
    let mut values = vec![0.0; range.count * n_nodes];
    values
        .par_chunks_mut(n_nodes)
        .enumerate()
        .for_each(|(j, row)| row_fn(range.first + j as u64, row));
    PathBundle::from_values(grid.clone(), range.count, values, label)
        .expect("sized by construction")
}

/// Two independent Brownian motions `(W, W_perp)` on the grid.
pub fn simulate_brownian(
    grid: &Arc<TimeGrid>,
    n_paths: usize,
    seed: u64,
) -> (PathBundle, PathBundle) {
    simulate_brownian_block(grid, PathRange::from_zero(n_paths), seed)
}

/// Block variant used by streaming estimators; `range.first` is the
/// absolute index of the first path.
pub fn simulate_brownian_block(
    grid: &Arc<TimeGrid>,
    range: PathRange,
    seed: u64,
) -> (PathBundle, PathBundle) {
    let dt_sqrt = grid.dt().sqrt();
    let make = |stream: Stream, label: &str| {
        fill_rows(grid, range, label, |path, row| {
            row[0] = 0.0;
            let mut acc = 0.0;
            for i in 1..row.len() {
                acc += dt_sqrt * standard_normal(seed, stream, path, (i - 1) as u64);
                row[i] = acc;
            }
        })
    };
    (make(Stream::BrownianW, "W"), make(Stream::BrownianWPerp, "Wperp"))
}

/// Simulation scheme for the three-dimensional Bessel process.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BesselMethod {
    /// Explicit Euler on `dB = (1/B) dt + dW` with a positivity clamp;
    /// returns the driving `W`, which the pathwise `Z0 = 1/B` check needs.
    Euler,
    /// `B_t = |(1,0,0) + BM_3(t)|`, exact in law; no driver is available.
    Norm3d,
}

/// Result of a Bessel-3 simulation.
#[derive(Debug)]
pub struct Bessel3Sim {
    pub b: PathBundle,
    pub w: Option<PathBundle>,
    pub clamp_count: u64,
    /// Clamps per simulated increment; runs above 1e-4 are flagged invalid.
    pub clamp_rate: f64,
}

impl Bessel3Sim {
    pub const CLAMP_EPS: f64 = 1e-8;
    pub const MAX_VALID_CLAMP_RATE: f64 = 1e-4;

    pub fn is_valid(&self) -> bool {
        self.clamp_rate <= Self::MAX_VALID_CLAMP_RATE
    }
}

/// Three-dimensional Bessel process with `B_0 = 1`.
pub fn simulate_bessel3(
    grid: &Arc<TimeGrid>,
    n_paths: usize,
    seed: u64,
    method: BesselMethod,
) -> Bessel3Sim {
    simulate_bessel3_block(grid, PathRange::from_zero(n_paths), seed, method)
}

pub fn simulate_bessel3_block(
    grid: &Arc<TimeGrid>,
    range: PathRange,
    seed: u64,
    method: BesselMethod,
) -> Bessel3Sim {
    match method {
        BesselMethod::Norm3d => {
            let dt_sqrt = grid.dt().sqrt();
            let b = fill_rows(grid, range, "B", |path, row| {
                row[0] = 1.0;
                let (mut x, mut y, mut z) = (1.0f64, 0.0f64, 0.0f64);
                for i in 1..row.len() {
                    let step = (i - 1) as u64;
                    x += dt_sqrt * standard_normal(seed, Stream::Bessel3Dim1, path, step);
                    y += dt_sqrt * standard_normal(seed, Stream::Bessel3Dim2, path, step);
                    z += dt_sqrt * standard_normal(seed, Stream::Bessel3Dim3, path, step);
                    row[i] = (x * x + y * y + z * z).sqrt();
                }
            });
            Bessel3Sim { b, w: None, clamp_count: 0, clamp_rate: 0.0 }
        }
        BesselMethod::Euler => {
            use std::sync::atomic::{AtomicU64, Ordering};
            let dt = grid.dt();
            let dt_sqrt = dt.sqrt();
            let clamps = AtomicU64::new(0);
            let b = fill_rows(grid, range, "B", |path, row| {
                row[0] = 1.0;
                let mut b = 1.0f64;
                let mut local_clamps = 0u64;
                for i in 1..row.len() {
                    let dw = dt_sqrt
                        * standard_normal(seed, Stream::BrownianW, path, (i - 1) as u64);
                    // Drift-implicit step: solve b' = b + dt / b' + dw in
                    // closed form. The explicit update b + dt/b + dw blows
                    // up after any excursion near zero (the next drift is
                    // dt/b ~ 1/eps); the implicit root stays positive and
                    // agrees with the explicit step to O(dt^2) away from
                    // the origin.
                    let c = b + dw;
                    b = 0.5 * (c + (c * c + 4.0 * dt).sqrt());
                    if b < Bessel3Sim::CLAMP_EPS {
                        b = Bessel3Sim::CLAMP_EPS;
                        local_clamps += 1;
                    }
                    row[i] = b;
                }
                if local_clamps > 0 {
                    clamps.fetch_add(local_clamps, Ordering::Relaxed);
                }
            });
            // Same W stream, so the driver matches the increments used above.
            let (w, _) = simulate_brownian_block(grid, range, seed);
            let clamp_count = clamps.into_inner();
            let total = (range.count * grid.n_steps()) as f64;
            Bessel3Sim { b, w: Some(w), clamp_count, clamp_rate: clamp_count as f64 / total }
        }
    }
}

/// Market price of risk `lambda = 1/B`, elementwise.
pub fn mpr_path(b: &PathBundle) -> Result<PathBundle> {
    if b.values().iter().any(|&v| !(v > 0.0)) {
        return Err(Error::SimulationIntegrity {
            op: "mpr_path",
            detail: "Bessel path has a non-positive entry".into(),
        });
    }
    Ok(b.map("lambda", |v| 1.0 / v))
}

/// Wealth under a proportional strategy, log-Euler:
/// `X_{i+1} = X_i * exp((s*th*lam - s^2*th^2/2) dt + s*th*dW)`.
pub fn simulate_wealth(
    model: &MarketModel,
    strat: &Strategy,
    grid: &Arc<TimeGrid>,
    w: &PathBundle,
    lambda: &PathBundle,
    x0: f64,
) -> Result<PathBundle> {
    if !(x0 > 0.0) {
        return Err(Error::domain("simulate_wealth", format!("initial wealth must be positive, got {x0}")));
    }
    w.check_compatible(lambda, "simulate_wealth")?;
    let n_nodes = grid.n_nodes();
    let dt = grid.dt();
    let mut values = vec![0.0; w.n_paths() * n_nodes];
    let bad = std::sync::atomic::AtomicBool::new(false);
    values
        .par_chunks_mut(n_nodes)
        .enumerate()
        .for_each(|(j, row)| {
            let wj = w.path(j);
            let lj = lambda.path(j);
            row[0] = x0;
            let mut x = x0;
            for i in 1..n_nodes {
                let t = grid.t(i - 1);
                let lam = lj[i - 1];
                let theta = strat.at(t, lam);
                if !theta.is_finite() {
                    bad.store(true, std::sync::atomic::Ordering::Relaxed);
                    return;
                }
                let s = model.sigma_at(t) * theta;
                let dw = wj[i] - wj[i - 1];
                x *= ((s * lam - 0.5 * s * s) * dt + s * dw).exp();
                row[i] = x;
            }
        });
    if bad.into_inner() {
        return Err(Error::Control {
            op: "simulate_wealth",
            detail: "strategy evaluated to a non-finite value".into(),
        });
    }
    PathBundle::from_values(grid.clone(), w.n_paths(), values, "X")
}

/// Doleans-Dade exponential of `a . W + b . Wperp` on the grid:
/// `E_{i+1} = E_i * exp(a_i dW + b_i dWperp - (a_i^2 + b_i^2) dt / 2)`.
///
/// Integrands are sampled at the left endpoint of each step. Pass `None`
/// for the orthogonal leg when `b == 0`.
pub fn stochastic_exponential(
    a: &PathBundle,
    b: Option<&PathBundle>,
    w: &PathBundle,
    w_perp: Option<&PathBundle>,
    grid: &Arc<TimeGrid>,
) -> Result<PathBundle> {
    a.check_compatible(w, "stochastic_exponential")?;
    if let Some(bb) = b {
        bb.check_compatible(w, "stochastic_exponential")?;
        if w_perp.is_none() {
            return Err(Error::structural(
                "stochastic_exponential",
                "orthogonal integrand given without its driver",
            ));
        }
    }
    if let Some(wp) = w_perp {
        wp.check_compatible(w, "stochastic_exponential")?;
    }
    let n_nodes = grid.n_nodes();
    let dt = grid.dt();
    let mut values = vec![0.0; w.n_paths() * n_nodes];
    values
        .par_chunks_mut(n_nodes)
        .enumerate()
        .for_each(|(j, row)| {
            let aj = a.path(j);
            let wj = w.path(j);
            row[0] = 1.0;
            let mut log_e = 0.0;
            for i in 1..n_nodes {
                let ai = aj[i - 1];
                let mut incr = ai * (wj[i] - wj[i - 1]) - 0.5 * ai * ai * dt;
                if let (Some(bb), Some(wp)) = (b, w_perp) {
                    let bi = bb.path(j)[i - 1];
                    let wpj = wp.path(j);
                    incr += bi * (wpj[i] - wpj[i - 1]) - 0.5 * bi * bi * dt;
                }
                log_e += incr;
                row[i] = log_e.exp();
            }
        });
    PathBundle::from_values(grid.clone(), w.n_paths(), values, "E")
}

/// Stochastic exponential with constant integrands.
pub fn stochastic_exponential_const(
    a: f64,
    w: &PathBundle,
    grid: &Arc<TimeGrid>,
) -> PathBundle {
    let ab = PathBundle::constant(grid.clone(), w.n_paths(), a, "a");
    stochastic_exponential(&ab, None, w, None, grid).expect("compatible by construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_se(vals: impl Iterator<Item = f64>) -> (f64, f64, usize) {
        let (mut s, mut s2, mut n) = (0.0, 0.0, 0usize);
        for v in vals {
            s += v;
            s2 += v * v;
            n += 1;
        }
        let m = s / n as f64;
        let var = (s2 / n as f64 - m * m).max(0.0);
        (m, (var / n as f64).sqrt(), n)
    }

    #[test]
    fn brownian_moments_and_determinism() {
        let grid = Arc::new(TimeGrid::new(2.0, 16).unwrap());
        let n = 100_000;
        let (w, wp) = simulate_brownian(&grid, n, 123);
        let last = grid.n_steps();
        let (m, se, _) = mean_se(w.at_node(last));
        assert!(m.abs() < 3.0 * se.max(3.0 * (2.0 / n as f64).sqrt()), "mean {m}");
        let (m2, _, _) = mean_se(w.at_node(last).map(|v| v * v));
        assert!((m2 / 2.0 - 1.0).abs() < 0.05, "var {m2}");
        assert!(w.at_node(0).all(|v| v == 0.0));
        // Orthogonal driver is distinct but same-seed reruns are bitwise equal.
        let (w2, wp2) = simulate_brownian(&grid, n, 123);
        assert_eq!(w.values(), w2.values());
        assert_eq!(wp.values(), wp2.values());
        assert_ne!(w.values()[1], wp.values()[1]);
    }

    #[test]
    fn brownian_blocks_match_monolithic() {
        let grid = Arc::new(TimeGrid::new(1.0, 8).unwrap());
        let (w, _) = simulate_brownian(&grid, 10, 5);
        let (head, _) = simulate_brownian_block(&grid, PathRange { first: 0, count: 4 }, 5);
        let (tail, _) = simulate_brownian_block(&grid, PathRange { first: 4, count: 6 }, 5);
        for j in 0..4 {
            assert_eq!(w.path(j), head.path(j));
        }
        for j in 0..6 {
            assert_eq!(w.path(4 + j), tail.path(j));
        }
    }

    #[test]
    fn bessel3_norm3d_second_moment() {
        // E[B_t^2] = 1 + 3t.
        let grid = Arc::new(TimeGrid::new(1.0, 4).unwrap());
        let sim = simulate_bessel3(&grid, 100_000, 21, BesselMethod::Norm3d);
        assert!(sim.b.at_node(0).all(|v| v == 1.0));
        let (m, se, _) = mean_se(sim.b.at_node(4).map(|v| v * v));
        assert!((m - 4.0).abs() < 3.0 * se, "E[B_1^2] = {m} +- {se}");
    }

    #[test]
    fn bessel3_euler_agrees_with_norm3d() {
        let grid = Arc::new(TimeGrid::new(1.0, 1000).unwrap());
        let e = simulate_bessel3(&grid, 40_000, 31, BesselMethod::Euler);
        assert!(e.is_valid(), "clamp rate {}", e.clamp_rate);
        let n = simulate_bessel3(&grid, 40_000, 32, BesselMethod::Norm3d);
        let (me, se_e, _) = mean_se(e.b.at_node(1000));
        let (mn, se_n, _) = mean_se(n.b.at_node(1000));
        let se = (se_e * se_e + se_n * se_n).sqrt();
        assert!((me - mn).abs() < 3.0 * se, "euler {me} norm3d {mn} se {se}");
    }

    #[test]
    fn mpr_reciprocal() {
        let grid = Arc::new(TimeGrid::new(1.0, 2).unwrap());
        let b = PathBundle::constant(grid.clone(), 3, 1.0, "B");
        let lam = mpr_path(&b).unwrap();
        assert!(lam.values().iter().all(|&v| v == 1.0));
        let sim = simulate_bessel3(&grid, 100, 3, BesselMethod::Norm3d);
        let lam = mpr_path(&sim.b).unwrap();
        assert!(lam.at_node(0).all(|v| v == 1.0));
        for (lp, bp) in lam.paths().zip(sim.b.paths()) {
            for (l, b) in lp.iter().zip(bp) {
                assert!((l * b - 1.0).abs() < 1e-12);
            }
        }
        let bad = PathBundle::constant(grid, 1, 0.0, "B");
        assert!(mpr_path(&bad).is_err());
    }

    #[test]
    fn wealth_zero_strategy_constant() {
        let grid = Arc::new(TimeGrid::new(1.0, 10).unwrap());
        let (w, _) = simulate_brownian(&grid, 50, 77);
        let model = MarketModel::black_scholes(0.4, 0.2).unwrap();
        let lam = model.constant_mpr_bundle(grid.clone(), 50).unwrap();
        let x = simulate_wealth(&model, &Strategy::Constant(0.0), &grid, &w, &lam, 2.5).unwrap();
        assert!(x.values().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn wealth_gbm_mean() {
        // E[X_T] = x exp(sigma*theta*lambda*T) for constant theta.
        let grid = Arc::new(TimeGrid::new(1.0, 4).unwrap());
        let n = 100_000;
        let (w, _) = simulate_brownian(&grid, n, 99);
        let model = MarketModel::black_scholes(0.4, 0.2).unwrap();
        let lam = model.constant_mpr_bundle(grid.clone(), n).unwrap();
        let x = simulate_wealth(&model, &Strategy::Constant(1.5), &grid, &w, &lam, 1.0).unwrap();
        let (m, se, _) = mean_se(x.at_node(4));
        let target = (0.2f64 * 1.5 * 0.4).exp();
        assert!((m - target).abs() < 3.0 * se, "mean {m} target {target} se {se}");
        assert!(x.values().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn wealth_rejects_bad_strategy() {
        let grid = Arc::new(TimeGrid::new(1.0, 4).unwrap());
        let (w, _) = simulate_brownian(&grid, 3, 1);
        let model = MarketModel::black_scholes(0.4, 0.2).unwrap();
        let lam = model.constant_mpr_bundle(grid.clone(), 3).unwrap();
        let strat = Strategy::Feedback(Arc::new(|_, _| f64::NAN));
        assert!(matches!(
            simulate_wealth(&model, &strat, &grid, &w, &lam, 1.0),
            Err(Error::Control { .. })
        ));
    }

    #[test]
    fn stochastic_exponential_cases() {
        let grid = Arc::new(TimeGrid::new(1.0, 8).unwrap());
        let n = 100_000;
        let (w, _) = simulate_brownian(&grid, n, 404);
        // Zero integrand: identically one.
        let e0 = stochastic_exponential_const(0.0, &w, &grid);
        assert!(e0.values().iter().all(|&v| v == 1.0));
        // Constant a = -lambda: true exponential martingale, mean one.
        let e = stochastic_exponential_const(-0.4, &w, &grid);
        let (m, se, _) = mean_se(e.at_node(8));
        assert!((m - 1.0).abs() < 3.0 * se, "mean {m} se {se}");
        assert!(e.values().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn bessel_euler_z0_identity_tightens_with_dt() {
        // Z0 = E(-lambda . W) equals 1/B pathwise; the deviation shrinks as
        // the step is halved.
        let dev = |steps: usize| {
            let grid = Arc::new(TimeGrid::new(1.0, steps).unwrap());
            let sim = simulate_bessel3(&grid, 500, 314, BesselMethod::Euler);
            let w = sim.w.as_ref().unwrap();
            let lam = mpr_path(&sim.b).unwrap();
            let neg = lam.map("-lambda", |v| -v);
            let z = stochastic_exponential(&neg, None, w, None, &grid).unwrap();
            let mut worst = 0.0f64;
            for (zp, bp) in z.paths().zip(sim.b.paths()) {
                for (zi, bi) in zp.iter().zip(bp) {
                    worst = worst.max((zi - 1.0 / bi).abs() * bi);
                }
            }
            worst
        };
        let coarse = dev(1000);
        let fine = dev(2000);
        assert!(fine < coarse, "coarse {coarse} fine {fine}");
    }
}
