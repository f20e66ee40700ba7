//! Monte-Carlo estimators and verdicts for the duality relations.
//!
//! Everything here reduces path bundles to scalar estimates with standard
//! errors and compares them against the bounds the theory guarantees:
//!
//! * budget constraint  `E[int X Y dkappa] <= x y`, saturated at optima;
//! * weak duality       `v(y) + x y - u(x) >= 0`;
//! * martingale / supermartingale behaviour of
//!   `M = X R + int X Y dkappa`;
//! * the potential property `E[X_t R_t] -> 0` at optima;
//! * the representation `X_t R_t = E[int_t^inf X_s Y_s dkappa_s | F_t]`;
//! * the first-order condition `U'(X_t) = gamma_t Y_t`.
//!
//! Tolerances are 3-standard-error bands (about 99.7% pointwise). Infinite
//! horizons are truncated at the grid end; every estimate carries the
//! untruncated kappa tail mass, and callers with a decay oracle pass an
//! analytic tail bound that widens the band. Verdict statistics are
//! normalized so that `statistic <= threshold` always means Pass.

use std::fmt;

use crate::deflator::{budget_step_weight, control_increments, Convention, DeflatedTriple};
use crate::discount::{self, DiscountMeasure};
use crate::error::{Error, Result};
use crate::grid::{PathBundle, TimeGrid};
use crate::preference::{conjugate_value, marginal, u_value, UtilitySpec};

/// A Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MCEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: u64,
    /// kappa mass beyond the truncation horizon.
    pub tail_mass: f64,
}

/// Running sums for a sample mean; merges associatively so block results
/// can be combined in a fixed order regardless of worker count.
#[derive(Debug, Clone, Copy, Default)]
pub struct Accumulator {
    pub n: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Accumulator {
    pub fn push(&mut self, v: f64) {
        self.n += 1;
        self.sum += v;
        self.sum_sq += v * v;
    }

    pub fn merge(&mut self, other: &Accumulator) {
        self.n += other.n;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn into_estimate(self, tail_mass: f64) -> Result<MCEstimate> {
        if self.n < 2 {
            return Err(Error::domain("Accumulator::into_estimate", "need at least two samples"));
        }
        let n = self.n as f64;
        let mean = self.sum / n;
        let var = (self.sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
        Ok(MCEstimate { mean, std_error: (var / n).sqrt(), n: self.n, tail_mass })
    }
}

impl MCEstimate {
    pub fn from_values(values: impl IntoIterator<Item = f64>, tail_mass: f64) -> Result<Self> {
        let mut acc = Accumulator::default();
        for v in values {
            acc.push(v);
        }
        acc.into_estimate(tail_mass)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerdictKind {
    Pass,
    Fail,
    Inconclusive,
}

impl fmt::Display for VerdictKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VerdictKind::Pass => write!(f, "PASS"),
            VerdictKind::Fail => write!(f, "FAIL"),
            VerdictKind::Inconclusive => write!(f, "INCONCLUSIVE"),
        }
    }
}

/// Outcome of a single check: Pass iff `statistic <= threshold`.
#[derive(Debug, Clone)]
pub struct Verdict {
    pub kind: VerdictKind,
    pub statistic: f64,
    pub threshold: f64,
    pub detail: String,
}

impl Verdict {
    pub fn from_bound(statistic: f64, threshold: f64, detail: String) -> Self {
        let kind = if statistic.is_nan() {
            VerdictKind::Inconclusive
        } else if statistic <= threshold {
            VerdictKind::Pass
        } else {
            VerdictKind::Fail
        };
        Verdict { kind, statistic, threshold, detail }
    }

    pub fn passed(&self) -> bool {
        self.kind == VerdictKind::Pass
    }
}

/// Floor added to zero-variance thresholds so exact identities compare at
/// float precision rather than literal zero.
pub fn zero_var_floor(scale: f64) -> f64 {
    1e-10 * scale.abs().max(1.0)
}

// ---------------------------------------------------------------------------
// Per-path functionals, shared by the bundle estimators and the block
// streaming pipeline.
// ---------------------------------------------------------------------------

/// `int X Y d.` along one path via exact exponential-factor increments.
pub fn budget_path(xp: &[f64], rp: &[f64], yp: &[f64], incs: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..incs.len() {
        acc += budget_step_weight(xp[i], rp[i], yp[i], incs[i]);
    }
    acc
}

/// `int U(X) dkappa` along one path (left endpoints); non-positive wealth
/// contributes the -infinity sentinel rather than an error.
pub fn primal_path(u: &UtilitySpec, xp: &[f64], dkappa: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..dkappa.len() {
        if dkappa[i] == 0.0 {
            continue;
        }
        match u_value(u, xp[i]) {
            Ok(v) => acc += v * dkappa[i],
            Err(_) => return f64::NEG_INFINITY,
        }
    }
    acc
}

/// `int V(Y) dkappa` (kappa-form) or `int V(gamma Y) dkappa` (Lebesgue /
/// change-of-variable form) along one path. A vanishing deflator on a
/// charged node makes the dual value infinite for log and `p in (0,1)`
/// utilities; that is surfaced as [`Error::InfiniteDual`].
pub fn dual_path(
    u: &UtilitySpec,
    yp: &[f64],
    dkappa: &[f64],
    gamma: Option<&[f64]>,
) -> Result<f64> {
    let unbounded_at_zero = u.is_log() || u.q() < 0.0;
    let mut acc = 0.0;
    for i in 0..dkappa.len() {
        if dkappa[i] == 0.0 {
            continue;
        }
        let y = match gamma {
            Some(g) => g[i] * yp[i],
            None => yp[i],
        };
        if y <= 0.0 {
            if unbounded_at_zero {
                return Err(Error::InfiniteDual {
                    detail: format!(
                        "deflator vanishes on a kappa-charged node (node {i}); V(0) is \
                         infinite for this utility, so v(y) = infinity"
                    ),
                });
            }
            continue; // V(0) = 0 for p < 0
        }
        acc += conjugate_value(u, y)? * dkappa[i];
    }
    Ok(acc)
}

/// Node-wise reciprocal density `gamma_i = gamma(t_i)`.
pub fn gamma_nodes(kappa: &DiscountMeasure, grid: &TimeGrid) -> Result<Vec<f64>> {
    grid.times().map(|t| discount::gamma_at(kappa, t)).collect()
}

// ---------------------------------------------------------------------------
// Bundle estimators
// ---------------------------------------------------------------------------

/// MC estimate of `E[int X Y d.]` under the triple's convention.
pub fn estimate_budget(
    x: &PathBundle,
    triple: &DeflatedTriple,
    kappa: &DiscountMeasure,
    grid: &TimeGrid,
) -> Result<MCEstimate> {
    x.check_compatible(&triple.r, "estimate_budget")?;
    x.check_compatible(&triple.y, "estimate_budget")?;
    let incs = control_increments(triple.convention, kappa, grid);
    let mut acc = Accumulator::default();
    for ((xp, rp), yp) in x.paths().zip(triple.r.paths()).zip(triple.y.paths()) {
        acc.push(budget_path(xp, rp, yp, &incs));
    }
    acc.into_estimate(discount::tail_mass(kappa, grid.t_max()))
}

/// MC estimate of the primal objective `E[int U(X) dkappa]`.
pub fn estimate_primal(
    u: &UtilitySpec,
    x: &PathBundle,
    kappa: &DiscountMeasure,
    grid: &TimeGrid,
) -> Result<MCEstimate> {
    let dkappa = discount::kappa_increments(kappa, grid);
    let mut acc = Accumulator::default();
    for xp in x.paths() {
        acc.push(primal_path(u, xp, &dkappa));
    }
    acc.into_estimate(discount::tail_mass(kappa, grid.t_max()))
}

/// MC estimate of the dual objective; `Convention::Lebesgue` applies the
/// change of variable `V(gamma_t Y_t)` inside the kappa integral.
pub fn estimate_dual(
    u: &UtilitySpec,
    y: &PathBundle,
    kappa: &DiscountMeasure,
    grid: &TimeGrid,
    convention: Convention,
) -> Result<MCEstimate> {
    let dkappa = discount::kappa_increments(kappa, grid);
    let gamma = match convention {
        Convention::Kappa => None,
        Convention::Lebesgue => Some(gamma_nodes(kappa, grid)?),
    };
    let mut acc = Accumulator::default();
    for yp in y.paths() {
        acc.push(dual_path(u, yp, &dkappa, gamma.as_deref())?);
    }
    acc.into_estimate(discount::tail_mass(kappa, grid.t_max()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetMode {
    /// `E[int X Y d.] <= x y` must hold for every admissible pair.
    Inequality,
    /// Equality at a claimed optimum, up to the analytic tail bound.
    Saturation,
}

/// Checks the budget estimate against `x y`; `tail_bound` is an analytic
/// bound on the truncated part of the integral (zero when unknown).
pub fn budget_verdict(est: &MCEstimate, x: f64, y: f64, mode: BudgetMode, tail_bound: f64) -> Verdict {
    let xy = x * y;
    let band = 3.0 * est.std_error + tail_bound + zero_var_floor(xy);
    match mode {
        BudgetMode::Inequality => Verdict::from_bound(
            est.mean - xy,
            band,
            format!("budget inequality: E[int XY] = {:.6e} +- {:.2e} vs xy = {xy:.6e}", est.mean, est.std_error),
        ),
        BudgetMode::Saturation => Verdict::from_bound(
            (est.mean - xy).abs(),
            band,
            format!(
                "budget saturation: E[int XY] = {:.6e} +- {:.2e} vs xy = {xy:.6e}, tail bound {tail_bound:.2e}",
                est.mean, est.std_error
            ),
        ),
    }
}

/// Weak duality: `v(y) + x y - u(x) >= 0` up to combined MC noise.
pub fn weak_duality_gap(u_est: &MCEstimate, v_est: &MCEstimate, x: f64, y: f64) -> Verdict {
    let gap = v_est.mean + x * y - u_est.mean;
    let se = (u_est.std_error.powi(2) + v_est.std_error.powi(2)).sqrt();
    let band = 3.0 * se + zero_var_floor(x * y);
    Verdict::from_bound(
        -gap,
        band,
        format!("weak duality: v + xy - u = {gap:.6e}, combined SE {se:.2e}"),
    )
}

fn checkpoint_nodes(grid: &TimeGrid, checkpoints: &[f64]) -> Vec<usize> {
    checkpoints.iter().map(|&t| grid.node_at(t)).collect()
}

fn mean_se_diff(a: impl Iterator<Item = f64>) -> (f64, f64, u64) {
    let mut acc = Accumulator::default();
    for v in a {
        acc.push(v);
    }
    let n = acc.n as f64;
    let mean = acc.sum / n;
    let var = (acc.sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt(), acc.n)
}

/// Martingale test: paired mean `E[M_t - M_0] = 0` within 3 SE at every
/// checkpoint, plus orthogonality of increments to the running level
/// (sample correlation within `3/sqrt(n)`).
pub fn martingale_mean_test(m: &PathBundle, checkpoints: &[f64]) -> Verdict {
    let grid = m.grid().clone();
    let nodes = checkpoint_nodes(&grid, checkpoints);
    let n = m.n_paths() as f64;
    let mut worst: f64 = 0.0;
    let mut detail = String::from("martingale mean test:");
    for &node in &nodes {
        let (mean, se, _) = mean_se_diff(
            m.paths().map(|p| p[node] - p[0]),
        );
        let band = 3.0 * se + zero_var_floor(m.path(0)[0]) * 1e-2;
        let ratio = mean.abs() / band;
        worst = worst.max(ratio);
        detail.push_str(&format!(" t={:.3}: dmean={mean:.3e} (3SE={:.3e});", grid.t(node), 3.0 * se));
    }
    // Increment orthogonality between consecutive checkpoints.
    for pair in nodes.windows(2) {
        let (i0, i1) = (pair[0], pair[1]);
        let mut sx = Accumulator::default();
        let mut sy = Accumulator::default();
        let mut sxy = 0.0;
        for p in m.paths() {
            let level = p[i0];
            let incr = p[i1] - p[i0];
            sx.push(level);
            sy.push(incr);
            sxy += level * incr;
        }
        let mx = sx.sum / n;
        let my = sy.sum / n;
        let vx = (sx.sum_sq / n - mx * mx).max(0.0);
        let vy = (sy.sum_sq / n - my * my).max(0.0);
        let corr = if vx > 0.0 && vy > 0.0 {
            (sxy / n - mx * my) / (vx * vy).sqrt()
        } else {
            0.0
        };
        let ratio = corr.abs() / (3.0 / n.sqrt());
        worst = worst.max(ratio);
        detail.push_str(&format!(" corr[{:.3},{:.3}]={corr:.3e};", grid.t(i0), grid.t(i1)));
    }
    Verdict::from_bound(worst, 1.0, detail)
}

/// Supermartingale test: checkpoint means must be non-increasing within
/// 3 SE of each paired difference.
pub fn supermartingale_mean_test(m: &PathBundle, checkpoints: &[f64]) -> Verdict {
    let grid = m.grid().clone();
    let nodes = checkpoint_nodes(&grid, checkpoints);
    let mut worst: f64 = 0.0;
    let mut detail = String::from("supermartingale mean test:");
    for pair in nodes.windows(2) {
        let (i0, i1) = (pair[0], pair[1]);
        let (mean, se, _) = mean_se_diff(m.paths().map(|p| p[i1] - p[i0]));
        let band = 3.0 * se + zero_var_floor(m.path(0)[0]) * 1e-2;
        let ratio = mean / band; // must be <= 0 up to noise
        worst = worst.max(ratio);
        detail.push_str(&format!(" d[{:.3},{:.3}]={mean:.3e} (3SE={:.3e});", grid.t(i0), grid.t(i1), 3.0 * se));
    }
    Verdict::from_bound(worst, 1.0, detail)
}

/// Potential test on the deflated wealth `X R`: checkpoint means are
/// non-increasing, the final mean is small, and (if supplied) every
/// checkpoint matches the decay oracle within 3 SE.
pub fn potential_test(
    xr: &PathBundle,
    checkpoints: &[f64],
    decay_oracle: Option<&dyn Fn(f64) -> f64>,
) -> Verdict {
    let grid = xr.grid().clone();
    let nodes = checkpoint_nodes(&grid, checkpoints);
    let mut worst: f64 = 0.0;
    let mut detail = String::from("potential test:");
    let mut prev: Option<(f64, f64)> = None;
    let mut last = (0.0, 0.0);
    for &node in &nodes {
        let (mean, se, _) = mean_se_diff(xr.at_node(node));
        if let Some((pm, pse)) = prev {
            let band = 3.0 * (se * se + pse * pse).sqrt() + zero_var_floor(pm) * 1e-2;
            worst = worst.max((mean - pm) / band);
        }
        if let Some(oracle) = decay_oracle {
            let target = oracle(grid.t(node));
            let band = 3.0 * se + zero_var_floor(target) * 1e-2;
            worst = worst.max((mean - target).abs() / band);
            detail.push_str(&format!(" t={:.3}: {mean:.4e} vs {target:.4e};", grid.t(node)));
        } else {
            detail.push_str(&format!(" t={:.3}: {mean:.4e};", grid.t(node)));
        }
        prev = Some((mean, se));
        last = (mean, se);
    }
    // Vanishing at the horizon: final mean below its own band or the
    // oracle's tail value.
    let tail_target = decay_oracle.map(|o| o(grid.t_max())).unwrap_or(0.0);
    let final_band = 3.0 * last.1 + tail_target.abs() + zero_var_floor(0.0) * 1e-2;
    worst = worst.max((last.0 - tail_target).abs() / final_band);
    Verdict::from_bound(worst, 1.0, detail)
}

/// Aggregate form of the optimal-wealth representation
/// `E[X_t R_t] = E[int_t^inf X_s Y_s d.]` at each checkpoint;
/// `tail_bound(t)` bounds the truncated part of the right-hand side.
pub fn owp_representation_check(
    x: &PathBundle,
    triple: &DeflatedTriple,
    kappa: &DiscountMeasure,
    grid: &TimeGrid,
    checkpoints: &[f64],
    tail_bound: &dyn Fn(f64) -> f64,
) -> Result<Verdict> {
    x.check_compatible(&triple.r, "owp_representation_check")?;
    let incs = control_increments(triple.convention, kappa, grid);
    let nodes = checkpoint_nodes(grid, checkpoints);
    let mut worst: f64 = 0.0;
    let mut detail = String::from("deflated-wealth representation:");
    for &node in &nodes {
        // Paired per-path difference between the two sides.
        let diffs = x
            .paths()
            .zip(triple.r.paths())
            .zip(triple.y.paths())
            .map(|((xp, rp), yp)| {
                let mut tail_integral = 0.0;
                for i in node..incs.len() {
                    tail_integral += budget_step_weight(xp[i], rp[i], yp[i], incs[i]);
                }
                xp[node] * rp[node] - tail_integral
            });
        let (mean, se, _) = mean_se_diff(diffs);
        let t = grid.t(node);
        let band = 3.0 * se + tail_bound(t) + zero_var_floor(x.path(0)[0]) * 1e-2;
        worst = worst.max(mean.abs() / band);
        detail.push_str(&format!(" t={t:.3}: XR - tail-integral = {mean:.3e} (band {band:.3e});"));
    }
    Ok(Verdict::from_bound(worst, 1.0, detail))
}

/// Pathwise check of a deterministic identity `f(t_i)` for the deflated
/// wealth (log-utility closed form): every path, every node, relative
/// error below `rel_tol`.
pub fn owp_pathwise_check(
    x: &PathBundle,
    r: &PathBundle,
    oracle: &dyn Fn(f64) -> f64,
    rel_tol: f64,
) -> Result<Verdict> {
    x.check_compatible(r, "owp_pathwise_check")?;
    let grid = x.grid().clone();
    let mut worst: f64 = 0.0;
    for (xp, rp) in x.paths().zip(r.paths()) {
        for i in 0..grid.n_nodes() {
            let target = oracle(grid.t(i));
            let err = (xp[i] * rp[i] - target).abs() / target.abs().max(f64::MIN_POSITIVE);
            worst = worst.max(err);
        }
    }
    Ok(Verdict::from_bound(
        worst,
        rel_tol,
        format!("pathwise deflated wealth vs oracle: max relative error {worst:.3e}"),
    ))
}

/// First-order condition `U'(X_t) = gamma_t Y_t` at a claimed optimum,
/// checked pathwise to `rel_tol`.
pub fn foc_check(
    u: &UtilitySpec,
    x: &PathBundle,
    y: &PathBundle,
    kappa: &DiscountMeasure,
    grid: &TimeGrid,
    rel_tol: f64,
) -> Result<Verdict> {
    x.check_compatible(y, "foc_check")?;
    let gamma = gamma_nodes(kappa, grid)?;
    let mut worst: f64 = 0.0;
    for (xp, yp) in x.paths().zip(y.paths()) {
        for i in 0..grid.n_nodes() {
            let lhs = marginal(u, xp[i])?;
            let rhs = gamma[i] * yp[i];
            if !(rhs > 0.0) {
                return Err(Error::domain("foc_check", format!("gamma Y vanished at node {i}")));
            }
            worst = worst.max((lhs - rhs).abs() / rhs);
        }
    }
    Ok(Verdict::from_bound(
        worst,
        rel_tol,
        format!("first-order condition U'(X) = gamma Y: max relative error {worst:.3e}"),
    ))
}
