//! Command-line driver for the duality verification suite.
//!
//! Exit codes: 0 when every selected verdict passes, 1 when any verdict
//! fails, 2 on configuration or domain errors (including the infinite-dual
//! regime, where the standing assumption v(y) < infinity is violated).

mod config;
mod output;
mod suite;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use deflator_lab::closed_form;
use deflator_lab::dual_opt::{
    bs_closed_form_problem, curvature_uncertainty, mc_dual_profile, minimize_constant_beta,
    ScalarMinProblem,
};
use deflator_lab::grid::TimeGrid;
use deflator_lab::market::{
    simulate_bessel3, simulate_brownian, simulate_wealth, BesselMethod, MarketModel, Strategy,
};
use deflator_lab::preference::{fenchel_gap, marginal, UtilitySpec};
use deflator_lab::verify::{budget_verdict, zero_var_floor, BudgetMode, Verdict};
use deflator_lab::Error;

use config::ExperimentConfig;

/// Error carrying the process exit code (always 2: config/domain).
pub struct CliError {
    pub code: u8,
    pub msg: String,
}

impl CliError {
    fn config(msg: impl Into<String>) -> Self {
        CliError { code: 2, msg: msg.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = match &e {
            Error::InfiniteDual { detail } => format!(
                "{detail}\nthe dual problem is not finitely valued for these parameters; \
                 the standing assumption v(y) < infinity is violated"
            ),
            _ => e.to_string(),
        };
        CliError { code: 2, msg }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError { code: 2, msg: e.to_string() }
    }
}

#[derive(Parser)]
#[command(
    name = "deflator-lab",
    version,
    about = "Monte-Carlo verification of convex duality for utility maximization \
             from inter-temporal wealth"
)]
struct Cli {
    /// Worker pool size; estimates are bitwise independent of this value.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a configured experiment suite and write verdicts + estimates.
    Run {
        /// Flat TOML experiment configuration.
        #[arg(long)]
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Print closed-form Black-Scholes quantities.
    ClosedForm {
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value_t = 0.4)]
        lambda: f64,
        #[arg(long, default_value_t = 0.2)]
        sigma: f64,
        /// CRRA exponent; omit together with --log for log utility.
        #[arg(long, conflicts_with = "log")]
        p: Option<f64>,
        #[arg(long)]
        log: bool,
        #[arg(long, default_value_t = 1.0)]
        x: f64,
        #[arg(long, default_value_t = 1.0)]
        y: f64,
    },
    /// Maximum Fenchel-gap residual at y = U'(x) over an x-grid.
    ConjugateCheck {
        /// Check a single CRRA exponent; omit to sweep p in {-1, 0.5, 0.9} and log.
        #[arg(long)]
        p: Option<f64>,
        #[arg(long, default_value_t = 50)]
        points: usize,
    },
    /// Simulate wealth paths and write them to CSV.
    Simulate {
        #[arg(long, default_value = "black-scholes")]
        model: String,
        #[arg(long, default_value_t = 0.4)]
        lambda: f64,
        #[arg(long, default_value_t = 0.2)]
        sigma: f64,
        /// Constant fraction of wealth in the risky asset.
        #[arg(long, default_value_t = 1.0)]
        theta: f64,
        #[arg(long, default_value_t = 1.0)]
        x: f64,
        #[arg(long, default_value_t = 10.0)]
        t_max: f64,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long, default_value_t = 8)]
        paths: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        stride: usize,
        /// Bessel(3) driver: "euler" or "norm3d".
        #[arg(long, default_value = "euler")]
        bessel_method: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Budget inequality and saturation for a (possibly detuned) strategy.
    VerifyBudget {
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Primal/dual estimates, weak duality, and the martingale test.
    VerifyDuality {
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Minimize the dual objective over constant beta.
    DualOpt {
        /// "closed-form" or "mc".
        #[arg(long, default_value = "closed-form")]
        mode: String,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value_t = 0.4)]
        lambda: f64,
        #[arg(long, conflicts_with = "log")]
        p: Option<f64>,
        #[arg(long)]
        log: bool,
        #[arg(long, default_value_t = 1.0)]
        y: f64,
        #[arg(long, default_value_t = 1e-4)]
        lo: f64,
        #[arg(long, default_value_t = 1.0)]
        hi: f64,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 50_000)]
        paths: usize,
        #[arg(long, default_value_t = 60.0)]
        t_max: f64,
        #[arg(long, default_value_t = 600)]
        steps: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Summarize a previously written verdicts.jsonl.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

/// Shared experiment flags for the verify-* subcommands.
#[derive(clap::Args)]
struct ExperimentArgs {
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 0.4)]
    lambda: f64,
    #[arg(long, default_value_t = 0.2)]
    sigma: f64,
    #[arg(long, conflicts_with = "log")]
    p: Option<f64>,
    #[arg(long)]
    log: bool,
    #[arg(long, default_value_t = 1.0)]
    x: f64,
    /// Multiplier on the closed-form optimal fraction.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, default_value_t = 40.0)]
    t_max: f64,
    #[arg(long, default_value_t = 400)]
    steps: usize,
    #[arg(long, default_value_t = 16384)]
    paths: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

impl ExperimentArgs {
    fn into_config(self, tests: &str) -> Result<ExperimentConfig, CliError> {
        let raw = config::RawConfig {
            model: "black-scholes".into(),
            utility: if self.log || self.p.is_none() { "log".into() } else { "power".into() },
            p: self.p,
            lambda: self.lambda,
            sigma: self.sigma,
            alpha: self.alpha,
            t_max: self.t_max,
            n_steps: self.steps,
            n_paths: self.paths,
            seed: self.seed,
            convention: "lebesgue".into(),
            x: self.x,
            y: None,
            tests: tests.into(),
            strategy_scale: self.scale,
            output_dir: "out".into(),
            path_sample: 0,
            path_stride: 10,
            psi_values: "-0.5,0,0.5".into(),
        };
        ExperimentConfig::from_raw(raw)
    }
}

fn utility_from(p: Option<f64>) -> Result<UtilitySpec, CliError> {
    Ok(match p {
        Some(p) => UtilitySpec::power(p)?,
        None => UtilitySpec::log(),
    })
}

/// `DEFLATOR_LAB_SEED` overrides any configured or flagged seed.
fn resolve_seed(base: u64) -> Result<u64, CliError> {
    match std::env::var("DEFLATOR_LAB_SEED") {
        Ok(s) => s
            .trim()
            .parse::<u64>()
            .map_err(|e| CliError::config(format!("bad DEFLATOR_LAB_SEED {s:?}: {e}"))),
        Err(_) => Ok(base),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        // Ignore "already built": only the first initialization wins, which
        // can only happen if this line ran before.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match dispatch(cli.cmd) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}

fn print_verdict(name: &str, v: &Verdict) {
    println!("{name}: {} (statistic {:.6e} vs threshold {:.6e})", v.kind, v.statistic, v.threshold);
    println!("    {}", v.detail);
}

fn dispatch(cmd: Cmd) -> Result<u8, CliError> {
    match cmd {
        Cmd::Run { config, out_dir } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.seed = resolve_seed(cfg.seed)?;
            let dir = out_dir.unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
            suite::run_suite(&cfg, &dir)
        }
        Cmd::ClosedForm { alpha, lambda, sigma, p, log: _, x, y } => {
            let u = utility_from(p)?;
            let beta_hat = closed_form::bs_beta_hat(alpha, lambda, &u)?;
            let theta_hat = closed_form::merton_fraction(lambda, sigma, &u)?;
            println!("beta_hat    = {beta_hat}");
            println!("theta_hat   = {theta_hat}");
            println!("u({x})      = {}", closed_form::bs_primal_value(x, alpha, lambda, &u)?);
            println!("u'({x})     = {}", closed_form::bs_marginal_primal(x, alpha, lambda, &u)?);
            println!("v({y})      = {}", closed_form::bs_dual_value(y, alpha, lambda, &u)?);
            Ok(0)
        }
        Cmd::ConjugateCheck { p, points } => {
            let utilities: Vec<UtilitySpec> = match p {
                Some(p) => vec![UtilitySpec::power(p)?],
                None => {
                    let mut v: Vec<UtilitySpec> = [-1.0, 0.5, 0.9]
                        .iter()
                        .map(|&p| UtilitySpec::power(p))
                        .collect::<Result<_, _>>()?;
                    v.push(UtilitySpec::log());
                    v
                }
            };
            let mut worst: f64 = 0.0;
            for u in &utilities {
                for i in 0..points.max(2) {
                    // Log-spaced grid over six decades around 1.
                    let e = -3.0 + 6.0 * i as f64 / (points.max(2) - 1) as f64;
                    let x = 10f64.powf(e);
                    let gap = fenchel_gap(u, x, marginal(u, x)?)?;
                    worst = worst.max(gap.abs());
                }
            }
            println!("max Fenchel residual at y = U'(x): {worst:.3e} over {points}-point grids");
            Ok(if worst < 1e-12 { 0 } else { 1 })
        }
        Cmd::Simulate {
            model,
            lambda,
            sigma,
            theta,
            x,
            t_max,
            steps,
            paths,
            seed,
            stride,
            bessel_method,
            out,
        } => {
            let seed = resolve_seed(seed)?;
            let grid = Arc::new(TimeGrid::new(t_max, steps)?);
            let bundle = match model.as_str() {
                "black-scholes" => {
                    let m = MarketModel::black_scholes(lambda, sigma)?;
                    let (w, _) = simulate_brownian(&grid, paths, seed);
                    let lam = m.constant_mpr_bundle(grid.clone(), paths).unwrap();
                    simulate_wealth(&m, &Strategy::Constant(theta), &grid, &w, &lam, x)?
                }
                "bessel3" => {
                    let method = match bessel_method.as_str() {
                        "euler" => BesselMethod::Euler,
                        "norm3d" => BesselMethod::Norm3d,
                        other => {
                            return Err(CliError::config(format!(
                                "unknown bessel method {other:?}; expected euler or norm3d"
                            )))
                        }
                    };
                    let sim = simulate_bessel3(&grid, paths, seed, method);
                    println!("bessel clamp rate: {:.3e}", sim.clamp_rate);
                    sim.b
                }
                other => {
                    return Err(CliError::config(format!(
                        "unknown model {other:?}; expected black-scholes or bessel3"
                    )))
                }
            };
            let f = std::fs::File::create(&out)?;
            bundle.write_csv(f, stride)?;
            println!("wrote {} paths to {}", paths, out.display());
            Ok(0)
        }
        Cmd::VerifyBudget { exp } => {
            let mut cfg = exp.into_config("budget")?;
            cfg.seed = resolve_seed(cfg.seed)?;
            let grid = Arc::new(cfg.grid.clone());
            let beta_hat = closed_form::bs_beta_hat(cfg.alpha, cfg.lambda, &cfg.utility)?;
            let theta_hat = closed_form::merton_fraction(cfg.lambda, cfg.sigma, &cfg.utility)?;
            let st = suite::stream_black_scholes(&cfg, &grid, cfg.strategy_scale * theta_hat, beta_hat)?;
            let ineq = budget_verdict(&st.budget, cfg.x, cfg.y, BudgetMode::Inequality, 0.0);
            let tail = cfg.x * cfg.y * (-beta_hat * grid.t_max()).exp();
            let sat = budget_verdict(&st.budget, cfg.x, cfg.y, BudgetMode::Saturation, tail);
            print_verdict("budget-inequality", &ineq);
            print_verdict("budget-saturation", &sat);
            Ok(if ineq.passed() && sat.passed() { 0 } else { 1 })
        }
        Cmd::VerifyDuality { exp } => {
            let mut cfg = exp.into_config("duality")?;
            cfg.seed = resolve_seed(cfg.seed)?;
            let grid = Arc::new(cfg.grid.clone());
            let u = &cfg.utility;
            let beta_hat = closed_form::bs_beta_hat(cfg.alpha, cfg.lambda, u)?;
            let theta_hat = closed_form::merton_fraction(cfg.lambda, cfg.sigma, u)?;
            let st = suite::stream_black_scholes(&cfg, &grid, cfg.strategy_scale * theta_hat, beta_hat)?;
            let v_val = closed_form::bs_dual_value(cfg.y, cfg.alpha, cfg.lambda, u)?;
            let d_tail =
                closed_form::bs_dual_tail(beta_hat, cfg.y, cfg.alpha, cfg.lambda, u, grid.t_max())?;
            println!(
                "primal (truncated)      = {:.6} +- {:.3e}",
                st.primal.mean, st.primal.std_error
            );
            println!(
                "dual (tail-corrected)   = {:.6} +- {:.3e}  (closed form {v_val:.6})",
                st.dual.mean + d_tail,
                st.dual.std_error
            );
            let dual_v = Verdict::from_bound(
                (st.dual.mean + d_tail - v_val).abs(),
                3.0 * st.dual.std_error + zero_var_floor(v_val),
                format!("tail-corrected dual vs closed form {v_val:.6}"),
            );
            let gap = st.dual.mean + d_tail + cfg.x * cfg.y - st.primal.mean;
            let se = (st.primal.std_error.powi(2) + st.dual.std_error.powi(2)).sqrt();
            let weak = Verdict::from_bound(
                -gap,
                3.0 * se + zero_var_floor(cfg.x * cfg.y),
                format!("v(y) + xy - u = {gap:.6e}"),
            );
            print_verdict("duality-dual-value", &dual_v);
            print_verdict("weak-duality", &weak);
            Ok(if dual_v.passed() && weak.passed() { 0 } else { 1 })
        }
        Cmd::DualOpt {
            mode,
            alpha,
            lambda,
            p,
            log: _,
            y,
            lo,
            hi,
            tol,
            paths,
            t_max,
            steps,
            seed,
        } => {
            let seed = resolve_seed(seed)?;
            let u = utility_from(p)?;
            let beta_hat = closed_form::bs_beta_hat(alpha, lambda, &u)?;
            match mode.as_str() {
                "closed-form" => {
                    let prob = bs_closed_form_problem(y, alpha, lambda, &u, (lo, hi), tol);
                    let res = minimize_constant_beta(prob)?;
                    println!(
                        "beta* = {} (objective {}, {} evaluations; closed-form beta_hat = {beta_hat})",
                        res.beta, res.value, res.evaluations
                    );
                    Ok(0)
                }
                "mc" => {
                    let grid = Arc::new(TimeGrid::new(t_max, steps)?);
                    let model = MarketModel::black_scholes(lambda, 0.2)?;
                    let kappa = deflator_lab::discount::DiscountMeasure::exponential_rate(alpha)?;
                    // Re-simulating with one seed at every beta is a
                    // common-random-numbers evaluation: the profile is
                    // smooth in beta and golden-section search applies.
                    let objective = |beta: f64| -> deflator_lab::Result<f64> {
                        let est =
                            mc_dual_profile(&model, &u, &kappa, &grid, y, &[beta], 0.0, paths, seed)?;
                        let tail = closed_form::bs_dual_tail(beta, y, alpha, lambda, &u, t_max)?;
                        Ok(est[0].mean + tail)
                    };
                    let res = minimize_constant_beta(ScalarMinProblem {
                        objective: Box::new(objective),
                        bracket: (lo, hi),
                        tol,
                    })?;
                    let h = (0.25 * res.beta).max(10.0 * tol);
                    let betas = [res.beta - h, res.beta, res.beta + h];
                    let prof = mc_dual_profile(&model, &u, &kappa, &grid, y, &betas, 0.0, paths, seed)?;
                    let mut c = [0.0f64; 3];
                    for i in 0..3 {
                        c[i] = prof[i].mean
                            + closed_form::bs_dual_tail(betas[i], y, alpha, lambda, &u, t_max)?;
                    }
                    let se = prof.iter().map(|e| e.std_error).fold(0.0f64, f64::max);
                    let (f2, dbeta) = curvature_uncertainty(h, c[0], c[1], c[2], se);
                    println!(
                        "beta* = {} +- {dbeta:.3e} (objective {:.6} +- {:.3e}, curvature {f2:.3e}, \
                         {} evaluations; closed-form beta_hat = {beta_hat})",
                        res.beta, res.value, se, res.evaluations
                    );
                    Ok(0)
                }
                other => Err(CliError::config(format!(
                    "unknown mode {other:?}; expected closed-form or mc"
                ))),
            }
        }
        Cmd::Report { dir } => {
            let ok = output::summarize_verdicts(&dir.join("verdicts.jsonl"))?;
            Ok(if ok { 0 } else { 1 })
        }
    }
}
