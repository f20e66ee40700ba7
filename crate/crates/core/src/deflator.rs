//! Supermartingale deflators S, local martingale deflators Z, the damped
//! processes `R = exp(-int beta dkappa) S`, the wealth-path deflators
//! `Y = beta R`, and the verification process `M = XR + int X Y dkappa`.
//!
//! Two integration conventions coexist: the kappa-form (beta integrated
//! against dkappa) and the Lebesgue form (beta integrated against dt, the
//! natural choice when kappa has a density). Every [`DeflatedTriple`]
//! carries its convention tag so estimators apply the reciprocal density
//! gamma exactly once; silent convention mixing is the likeliest bug in
//! this construction.
//!
//! Discrete budget increments use the exact per-step increment of the
//! exponential damping factor, `X_i R_i (1 - exp(-beta_i d_i))`, with X, S
//! and beta held at the left endpoint. For constant controls this makes the
//! telescoping identities of the closed-form optima hold to float precision
//! at any step size.

use std::fmt;
use std::sync::Arc;

use crate::discount::{kappa_increments, DiscountMeasure};
use crate::error::{Error, Result};
use crate::grid::{PathBundle, TimeGrid};
use crate::market::stochastic_exponential;

/// Which measure the control beta is integrated against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convention {
    /// `R = exp(-int beta dkappa) S`.
    Kappa,
    /// `R = exp(-int beta dt) S`; used when kappa has a Lebesgue density.
    Lebesgue,
}

impl fmt::Display for Convention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Convention::Kappa => write!(f, "kappa"),
            Convention::Lebesgue => write!(f, "lebesgue"),
        }
    }
}

/// The auxiliary dual control beta >= 0.
#[derive(Clone)]
pub enum BetaControl {
    Constant(f64),
    /// Deterministic table, piecewise-linear, constant after the last point.
    DeterministicTabulated { times: Vec<f64>, values: Vec<f64> },
    /// State feedback on `(t, lambda_t)`.
    StateFeedback(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

impl BetaControl {
    pub fn constant(value: f64) -> Result<Self> {
        if !(value >= 0.0) || !value.is_finite() {
            return Err(Error::domain("BetaControl::constant", format!("beta must be non-negative, got {value}")));
        }
        Ok(BetaControl::Constant(value))
    }

    fn needs_state(&self) -> bool {
        matches!(self, BetaControl::StateFeedback(_))
    }

    fn eval(&self, t: f64, lambda: f64) -> Result<f64> {
        let v = match self {
            BetaControl::Constant(c) => *c,
            BetaControl::DeterministicTabulated { times, values } => {
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
            BetaControl::StateFeedback(f) => f(t, lambda),
        };
        if !v.is_finite() || v < 0.0 {
            return Err(Error::Control {
                op: "BetaControl::eval",
                detail: format!("beta({t}, {lambda}) = {v} is not a finite non-negative value"),
            });
        }
        Ok(v)
    }
}

impl fmt::Debug for BetaControl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BetaControl::Constant(c) => write!(f, "BetaControl::Constant({c})"),
            BetaControl::DeterministicTabulated { .. } => write!(f, "BetaControl::Tabulated(..)"),
            BetaControl::StateFeedback(_) => write!(f, "BetaControl::StateFeedback(..)"),
        }
    }
}

/// Orthogonal integrand psi in `Z = E(-lambda . W - psi . Wperp)`.
#[derive(Clone)]
pub enum PsiSpec {
    Constant(f64),
    StateFeedback(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

impl PsiSpec {
    pub fn zero() -> Self {
        PsiSpec::Constant(0.0)
    }

    fn is_zero(&self) -> bool {
        matches!(self, PsiSpec::Constant(c) if *c == 0.0)
    }
}

impl fmt::Debug for PsiSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PsiSpec::Constant(c) => write!(f, "PsiSpec::Constant({c})"),
            PsiSpec::StateFeedback(_) => write!(f, "PsiSpec::StateFeedback(..)"),
        }
    }
}

/// Recipe for the base deflator S.
#[derive(Debug, Clone)]
pub enum BaseDeflator {
    /// `S = y * E(-lambda . W - psi . Wperp)`, a local martingale deflator.
    LocalMartingale { psi: PsiSpec },
    /// The constant supermartingale `S == y`.
    UnitProcess,
    /// A caller-supplied positive bundle with `S_0 = y` after scaling.
    Explicit(PathBundle),
}

/// An auxiliary control plus a base deflator recipe, defining
/// `R = exp(-int beta d.) S` and `Y = beta R`.
#[derive(Debug, Clone)]
pub struct DeflatorSpec {
    pub base: BaseDeflator,
    pub beta: BetaControl,
    /// Initial value `S_0 = y > 0`.
    pub y0: f64,
}

/// The deflated processes and, when assembled, the verification process M.
#[derive(Debug)]
pub struct DeflatedTriple {
    pub r: PathBundle,
    pub y: PathBundle,
    pub m: Option<PathBundle>,
    pub convention: Convention,
}

/// Per-step weights d_i that beta is integrated against.
pub fn control_increments(
    convention: Convention,
    kappa: &DiscountMeasure,
    grid: &TimeGrid,
) -> Vec<f64> {
    match convention {
        Convention::Kappa => kappa_increments(kappa, grid),
        Convention::Lebesgue => vec![grid.dt(); grid.n_steps()],
    }
}

/// Local martingale deflator `Z = E(-lambda . W - psi . Wperp)` with
/// `Z_0 = 1`.
pub fn build_z(
    psi: &PsiSpec,
    w: &PathBundle,
    w_perp: &PathBundle,
    lambda: &PathBundle,
    grid: &Arc<TimeGrid>,
) -> Result<PathBundle> {
    let neg_lambda = lambda.map("-lambda", |v| -v);
    let mut z = if psi.is_zero() {
        stochastic_exponential(&neg_lambda, None, w, None, grid)?
    } else {
        let psi_bundle = match psi {
            PsiSpec::Constant(c) => PathBundle::constant(grid.clone(), w.n_paths(), -c, "-psi"),
            PsiSpec::StateFeedback(f) => {
                let mut b = PathBundle::constant(grid.clone(), w.n_paths(), 0.0, "-psi");
                for (j, row) in b.paths_mut().enumerate() {
                    let lam = lambda.path(j);
                    for (i, v) in row.iter_mut().enumerate() {
                        *v = -f(grid.t(i), lam[i]);
                    }
                }
                b
            }
        };
        stochastic_exponential(&neg_lambda, Some(&psi_bundle), w, Some(w_perp), grid)?
    };
    z.set_label("Z");
    Ok(z)
}

fn beta_at(
    beta: &BetaControl,
    t: f64,
    lambda: Option<&[f64]>,
    node: usize,
) -> Result<f64> {
    let lam = lambda.map(|l| l[node]).unwrap_or(f64::NAN);
    beta.eval(t, lam)
}

fn require_lambda<'a>(
    beta: &BetaControl,
    lambda: Option<&'a PathBundle>,
    op: &'static str,
) -> Result<Option<&'a PathBundle>> {
    if beta.needs_state() && lambda.is_none() {
        return Err(Error::structural(op, "state-feedback beta requires the lambda bundle"));
    }
    Ok(lambda)
}

/// `R_i = exp(-sum_{j<i} beta_j d_j) * S_i`.
pub fn build_r(
    s: &PathBundle,
    beta: &BetaControl,
    kappa: &DiscountMeasure,
    grid: &Arc<TimeGrid>,
    convention: Convention,
    lambda: Option<&PathBundle>,
) -> Result<PathBundle> {
    let lambda = require_lambda(beta, lambda, "build_r")?;
    let incs = control_increments(convention, kappa, grid);
    let n_nodes = grid.n_nodes();
    let mut values = Vec::with_capacity(s.n_paths() * n_nodes);
    for (j, sp) in s.paths().enumerate() {
        let lam = lambda.map(|l| l.path(j));
        let mut int_beta = 0.0;
        values.push(sp[0]);
        for i in 1..n_nodes {
            let b = beta_at(beta, grid.t(i - 1), lam, i - 1)?;
            int_beta += b * incs[i - 1];
            values.push((-int_beta).exp() * sp[i]);
        }
    }
    let mut r = PathBundle::from_values(grid.clone(), s.n_paths(), values, "R")?;
    r.set_label("R");
    Ok(r)
}

/// `Y_i = beta_i * R_i` elementwise.
pub fn build_y(
    r: &PathBundle,
    beta: &BetaControl,
    grid: &Arc<TimeGrid>,
    lambda: Option<&PathBundle>,
) -> Result<PathBundle> {
    let lambda = require_lambda(beta, lambda, "build_y")?;
    let n_nodes = grid.n_nodes();
    let mut values = Vec::with_capacity(r.n_paths() * n_nodes);
    for (j, rp) in r.paths().enumerate() {
        let lam = lambda.map(|l| l.path(j));
        for i in 0..n_nodes {
            values.push(beta_at(beta, grid.t(i), lam, i)? * rp[i]);
        }
    }
    PathBundle::from_values(grid.clone(), r.n_paths(), values, "Y")
}

/// Per-path, per-step budget increments for `int X_s Y_s d.`, using the
/// exact exponential-factor increment `X_i R_i (1 - exp(-beta_i d_i))`
/// recovered from `beta_i = Y_i / R_i`.
pub fn budget_step_weight(x_i: f64, r_i: f64, y_i: f64, d_i: f64) -> f64 {
    // -expm1(-u) = 1 - e^{-u}, accurate for small u.
    let u = (y_i / r_i) * d_i;
    x_i * r_i * (-(-u).exp_m1())
}

/// `M_i = X_i R_i + sum_{j<i} X_j R_j (1 - exp(-beta_j d_j))`.
pub fn assemble_m(
    x: &PathBundle,
    r: &PathBundle,
    y: &PathBundle,
    kappa: &DiscountMeasure,
    grid: &Arc<TimeGrid>,
    convention: Convention,
) -> Result<PathBundle> {
    x.check_compatible(r, "assemble_m")?;
    x.check_compatible(y, "assemble_m")?;
    let incs = control_increments(convention, kappa, grid);
    let n_nodes = grid.n_nodes();
    let mut values = Vec::with_capacity(x.n_paths() * n_nodes);
    for j in 0..x.n_paths() {
        let (xp, rp, yp) = (x.path(j), r.path(j), y.path(j));
        let mut integral = 0.0;
        values.push(xp[0] * rp[0]);
        for i in 1..n_nodes {
            integral += budget_step_weight(xp[i - 1], rp[i - 1], yp[i - 1], incs[i - 1]);
            values.push(xp[i] * rp[i] + integral);
        }
    }
    PathBundle::from_values(grid.clone(), x.n_paths(), values, "M")
}

impl DeflatorSpec {
    pub fn new(base: BaseDeflator, beta: BetaControl, y0: f64) -> Result<Self> {
        if !(y0 > 0.0) || !y0.is_finite() {
            return Err(Error::domain("DeflatorSpec::new", format!("initial value must be positive, got {y0}")));
        }
        Ok(DeflatorSpec { base, beta, y0 })
    }

    /// Builds the base deflator S (with `S_0 = y`) from the drivers.
    pub fn build_s(
        &self,
        w: &PathBundle,
        w_perp: &PathBundle,
        lambda: &PathBundle,
        grid: &Arc<TimeGrid>,
    ) -> Result<PathBundle> {
        let mut s = match &self.base {
            BaseDeflator::LocalMartingale { psi } => {
                let z = build_z(psi, w, w_perp, lambda, grid)?;
                if self.y0 == 1.0 {
                    z
                } else {
                    let y0 = self.y0;
                    z.map("S", move |v| y0 * v)
                }
            }
            BaseDeflator::UnitProcess => {
                PathBundle::constant(grid.clone(), w.n_paths(), self.y0, "S")
            }
            BaseDeflator::Explicit(bundle) => {
                if bundle.values().iter().any(|&v| !(v > 0.0)) {
                    return Err(Error::domain("DeflatorSpec::build_s", "explicit S must be strictly positive"));
                }
                let first = bundle.path(0)[0];
                let scale = self.y0 / first;
                bundle.map("S", move |v| scale * v)
            }
        };
        s.set_label("S");
        Ok(s)
    }

    /// Builds the full deflated pair `(R, Y)` under the given convention.
    pub fn build(
        &self,
        w: &PathBundle,
        w_perp: &PathBundle,
        lambda: &PathBundle,
        kappa: &DiscountMeasure,
        grid: &Arc<TimeGrid>,
        convention: Convention,
    ) -> Result<DeflatedTriple> {
        let s = self.build_s(w, w_perp, lambda, grid)?;
        let r = build_r(&s, &self.beta, kappa, grid, convention, Some(lambda))?;
        let y = build_y(&r, &self.beta, grid, Some(lambda))?;
        Ok(DeflatedTriple { r, y, m: None, convention })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discount;
    use crate::market::{simulate_brownian, MarketModel};

    fn grid(t: f64, n: usize) -> Arc<TimeGrid> {
        Arc::new(TimeGrid::new(t, n).unwrap())
    }

    fn mean_se(vals: impl Iterator<Item = f64>) -> (f64, f64) {
        let (mut s, mut s2, mut n) = (0.0, 0.0, 0usize);
        for v in vals {
            s += v;
            s2 += v * v;
            n += 1;
        }
        let m = s / n as f64;
        ((s / n as f64), ((s2 / n as f64 - m * m).max(0.0) / n as f64).sqrt())
    }

    #[test]
    fn z_martingale_bs() {
        let g = grid(1.0, 8);
        let n = 100_000;
        let (w, wp) = simulate_brownian(&g, n, 8);
        let model = MarketModel::black_scholes(0.4, 0.2).unwrap();
        let lam = model.constant_mpr_bundle(g.clone(), n).unwrap();
        let z = build_z(&PsiSpec::zero(), &w, &wp, &lam, &g).unwrap();
        assert!(z.at_node(0).all(|v| v == 1.0));
        let (m, se) = mean_se(z.at_node(8));
        assert!((m - 1.0).abs() < 3.0 * se, "E[Z_1] = {m} +- {se}");
        // Nonzero psi keeps Z positive with Z_0 = 1.
        let z2 = build_z(&PsiSpec::Constant(0.3), &w, &wp, &lam, &g).unwrap();
        assert!(z2.at_node(0).all(|v| v == 1.0));
        assert!(z2.values().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn z_bessel_strict_local_martingale() {
        // E[Z0_1] = 2*Phi(1) - 1 ~ 0.6827 < 1.
        use crate::market::{mpr_path, simulate_bessel3, BesselMethod};
        let g = grid(1.0, 4);
        let sim = simulate_bessel3(&g, 100_000, 9, BesselMethod::Norm3d);
        // Z0 = lambda = 1/B pathwise, so use the reciprocal directly.
        let lam = mpr_path(&sim.b).unwrap();
        let (m, se) = mean_se(lam.at_node(4));
        assert!((m - 0.6827).abs() < 0.01, "E[Z0_1] = {m}");
        assert!(m + 3.0 * se < 1.0);
    }

    #[test]
    fn r_equals_s_for_zero_beta() {
        let g = grid(5.0, 50);
        let kappa = DiscountMeasure::exponential_rate(0.1).unwrap();
        let s = PathBundle::constant(g.clone(), 4, 2.0, "S");
        let r = build_r(&s, &BetaControl::Constant(0.0), &kappa, &g, Convention::Kappa, None)
            .unwrap();
        assert_eq!(r.values(), s.values());
        let y = build_y(&r, &BetaControl::Constant(0.0), &g, None).unwrap();
        assert!(y.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn r_deterministic_exponential() {
        // beta = alpha constant, S = 1, kappa-form: R_t = exp(-alpha kappa(t)).
        let alpha = 0.1;
        let g = grid(30.0, 300);
        let kappa = DiscountMeasure::exponential_rate(alpha).unwrap();
        let s = PathBundle::constant(g.clone(), 1, 1.0, "S");
        let r = build_r(&s, &BetaControl::Constant(alpha), &kappa, &g, Convention::Kappa, None)
            .unwrap();
        for (i, v) in r.path(0).iter().enumerate() {
            let expect = (-alpha * discount::kappa_at(&kappa, g.t(i)).unwrap()).exp();
            assert!((v - expect).abs() < 1e-12, "node {i}: {v} vs {expect}");
        }
        // Y_t = alpha * exp(-alpha kappa(t)).
        let y = build_y(&r, &BetaControl::Constant(alpha), &g, None).unwrap();
        for (i, v) in y.path(0).iter().enumerate() {
            let expect = alpha * (-alpha * discount::kappa_at(&kappa, g.t(i)).unwrap()).exp();
            assert!((v - expect).abs() < 1e-12);
        }
        // R is bounded below by exp(-beta_max * kappa_inf) * S.
        let floor = (-alpha * discount::total_mass(&kappa)).exp();
        assert!(r.values().iter().all(|&v| v >= floor - 1e-15));
    }

    #[test]
    fn r_leq_s_and_y_eq_beta_r() {
        let g = grid(2.0, 40);
        let n = 200;
        let (w, wp) = simulate_brownian(&g, n, 17);
        let model = MarketModel::black_scholes(0.4, 0.2).unwrap();
        let lam = model.constant_mpr_bundle(g.clone(), n).unwrap();
        let kappa = DiscountMeasure::exponential_rate(0.1).unwrap();
        let beta = BetaControl::StateFeedback(Arc::new(|t: f64, l: f64| 0.1 + 0.05 * l + 0.01 * t));
        let spec = DeflatorSpec::new(
            BaseDeflator::LocalMartingale { psi: PsiSpec::Constant(0.2) },
            beta.clone(),
            1.0,
        )
        .unwrap();
        let s = spec.build_s(&w, &wp, &lam, &g).unwrap();
        let triple = spec.build(&w, &wp, &lam, &kappa, &g, Convention::Kappa).unwrap();
        for ((sp, rp), yp) in s.paths().zip(triple.r.paths()).zip(triple.y.paths()) {
            for i in 0..g.n_nodes() {
                assert!(rp[i] <= sp[i] + 1e-15);
                let b = beta.eval(g.t(i), lam.path(0)[i]).unwrap();
                assert!((yp[i] - b * rp[i]).abs() <= 1e-12 * yp[i].abs().max(1.0));
            }
        }
    }

    #[test]
    fn m_constant_for_unit_wealth_and_unit_s() {
        // X = x, S = 1, beta = c: M telescopes to x exactly.
        let g = grid(40.0, 400);
        let kappa = DiscountMeasure::exponential_rate(0.1).unwrap();
        let x = PathBundle::constant(g.clone(), 3, 1.7, "X");
        let s = PathBundle::constant(g.clone(), 3, 1.0, "S");
        let beta = BetaControl::Constant(0.5);
        let r = build_r(&s, &beta, &kappa, &g, Convention::Kappa, None).unwrap();
        let y = build_y(&r, &beta, &g, None).unwrap();
        let m = assemble_m(&x, &r, &y, &kappa, &g, Convention::Kappa).unwrap();
        for v in m.values() {
            assert!((v - 1.7).abs() < 1e-6, "M = {v}");
        }
    }

    #[test]
    fn m_reduces_to_xs_for_zero_beta() {
        let g = grid(1.0, 10);
        let n = 20;
        let (w, wp) = simulate_brownian(&g, n, 3);
        let model = MarketModel::black_scholes(0.4, 0.2).unwrap();
        let lam = model.constant_mpr_bundle(g.clone(), n).unwrap();
        let kappa = DiscountMeasure::exponential_rate(0.1).unwrap();
        let z = build_z(&PsiSpec::zero(), &w, &wp, &lam, &g).unwrap();
        let beta = BetaControl::Constant(0.0);
        let r = build_r(&z, &beta, &kappa, &g, Convention::Kappa, None).unwrap();
        let y = build_y(&r, &beta, &g, None).unwrap();
        let x = PathBundle::constant(g.clone(), n, 1.0, "X");
        let m = assemble_m(&x, &r, &y, &kappa, &g, Convention::Kappa).unwrap();
        assert_eq!(m.values(), z.values());
    }

    #[test]
    fn shape_mismatch_is_structural() {
        let g = grid(1.0, 4);
        let g2 = grid(1.0, 5);
        let kappa = DiscountMeasure::exponential_rate(0.1).unwrap();
        let x = PathBundle::constant(g.clone(), 2, 1.0, "X");
        let r = PathBundle::constant(g2.clone(), 2, 1.0, "R");
        let y = PathBundle::constant(g2, 2, 0.0, "Y");
        assert!(matches!(
            assemble_m(&x, &r, &y, &kappa, &g, Convention::Kappa),
            Err(Error::Structural { .. })
        ));
    }

    #[test]
    fn conventions_give_identical_budget_integrals() {
        // With kappa = ExponentialRate(alpha), the Lebesgue-form pair (R, Y)
        // converted through gamma charges the same budget as the kappa-form
        // pair: int X Y dt == int X (gamma Y) dkappa by the change of
        // variable; both equal the respective per-step exact increments here.
        let alpha = 0.1;
        let g = grid(20.0, 2000);
        let kappa = DiscountMeasure::exponential_rate(alpha).unwrap();
        let n = 50;
        let (w, wp) = simulate_brownian(&g, n, 23);
        let model = MarketModel::black_scholes(0.4, 0.2).unwrap();
        let lam = model.constant_mpr_bundle(g.clone(), n).unwrap();
        let spec = DeflatorSpec::new(
            BaseDeflator::LocalMartingale { psi: PsiSpec::zero() },
            BetaControl::Constant(0.25),
            1.0,
        )
        .unwrap();
        let leb = spec.build(&w, &wp, &lam, &kappa, &g, Convention::Lebesgue).unwrap();
        let kap = spec.build(&w, &wp, &lam, &kappa, &g, Convention::Kappa).unwrap();
        let x = PathBundle::constant(g.clone(), n, 1.0, "X");
        // Lebesgue-form: sum X Y dt; kappa-form equivalent: sum X (gamma Y) dkappa.
        let dkap = kappa_increments(&kappa, &g);
        let dt = g.dt();
        for j in 0..n {
            let (yl, yk) = (leb.y.path(j), kap.y.path(j));
            let xj = x.path(j);
            let mut int_leb = 0.0;
            let mut int_kap = 0.0;
            for i in 0..g.n_steps() {
                let gamma = discount::gamma_at(&kappa, g.t(i)).unwrap();
                int_leb += xj[i] * yl[i] * dt;
                int_kap += xj[i] * gamma * yl[i] * dkap[i];
                // kappa-form Y differs from Lebesgue-form Y through the
                // damping integral only; both stay positive.
                assert!(yk[i] >= 0.0);
            }
            assert!(
                (int_leb - int_kap).abs() < 2e-3 * int_leb.abs().max(1e-12),
                "path {j}: {int_leb} vs {int_kap}"
            );
        }
    }
}
