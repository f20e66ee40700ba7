//! Flat key-value experiment configuration.
//!
//! The file format is a flat TOML document (no nested tables) so that any
//! language's INI/TOML reader can parse it. Every module-level precondition
//! is re-validated at load time; validation failures map to exit code 2.

use std::path::Path;

use serde::Deserialize;

use deflator_lab::closed_form;
use deflator_lab::deflator::Convention;
use deflator_lab::discount::DiscountMeasure;
use deflator_lab::grid::TimeGrid;
use deflator_lab::market::{MarketModel, VolSpec};
use deflator_lab::preference::UtilitySpec;

use crate::CliError;

fn default_x() -> f64 {
    1.0
}
fn default_scale() -> f64 {
    1.0
}
fn default_convention() -> String {
    "lebesgue".into()
}
fn default_output_dir() -> String {
    "out".into()
}
fn default_path_sample() -> usize {
    8
}
fn default_path_stride() -> usize {
    20
}
fn default_psi_values() -> String {
    "-0.5,0,0.5".into()
}

/// Raw deserialized form of the config file; flat keys only.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub model: String,
    pub utility: String,
    #[serde(default)]
    pub p: Option<f64>,
    pub lambda: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub t_max: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    #[serde(default = "default_convention")]
    pub convention: String,
    #[serde(default = "default_x")]
    pub x: f64,
    #[serde(default)]
    pub y: Option<f64>,
    /// Comma-separated test selection, e.g. "closed-form,budget,duality".
    pub tests: String,
    /// Multiplier on the closed-form optimal fraction; 1.0 is the optimum.
    #[serde(default = "default_scale")]
    pub strategy_scale: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    /// Number of paths written to the sample CSV.
    #[serde(default = "default_path_sample")]
    pub path_sample: usize,
    /// Keep every n-th grid node in the sample CSV.
    #[serde(default = "default_path_stride")]
    pub path_stride: usize,
    /// Comma-separated constant psi perturbations for the psi-zero scan.
    #[serde(default = "default_psi_values")]
    pub psi_values: String,
}

/// Validated experiment configuration.
pub struct ExperimentConfig {
    pub model: MarketModel,
    pub is_bessel: bool,
    pub utility: UtilitySpec,
    pub lambda: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub kappa: DiscountMeasure,
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub seed: u64,
    pub convention: Convention,
    pub x: f64,
    /// Initial dual value; defaults to the closed-form marginal value u'(x).
    pub y: f64,
    pub tests: Vec<String>,
    pub strategy_scale: f64,
    pub output_dir: String,
    pub path_sample: usize,
    pub path_stride: usize,
    pub psi_values: Vec<f64>,
}

const KNOWN_TESTS: &[&str] = &[
    "closed-form",
    "pathwise",
    "budget",
    "duality",
    "potential",
    "martingale",
    "dual-opt",
    "local-martingale",
    "psi-zero",
];

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let raw: RawConfig = toml::from_str(&text)
            .map_err(|e| CliError::config(format!("config parse error: {e}")))?;
        Self::from_raw(raw)
    }

    pub fn from_raw(raw: RawConfig) -> Result<Self, CliError> {
        let utility = match raw.utility.as_str() {
            "log" => UtilitySpec::log(),
            "power" => {
                let p = raw
                    .p
                    .ok_or_else(|| CliError::config("utility = \"power\" requires a p key"))?;
                UtilitySpec::power(p)?
            }
            other => {
                return Err(CliError::config(format!(
                    "unknown utility {other:?}; expected \"power\" or \"log\""
                )))
            }
        };
        let (model, is_bessel) = match raw.model.as_str() {
            "black-scholes" => (MarketModel::black_scholes(raw.lambda, raw.sigma)?, false),
            "bessel3" => (MarketModel::bessel3(VolSpec::Constant(raw.sigma))?, true),
            other => {
                return Err(CliError::config(format!(
                    "unknown model {other:?}; expected \"black-scholes\" or \"bessel3\""
                )))
            }
        };
        let convention = match raw.convention.as_str() {
            "lebesgue" => Convention::Lebesgue,
            "kappa" => Convention::Kappa,
            other => {
                return Err(CliError::config(format!(
                    "unknown convention {other:?}; expected \"lebesgue\" or \"kappa\""
                )))
            }
        };
        let kappa = DiscountMeasure::exponential_rate(raw.alpha)?;
        let grid = TimeGrid::new(raw.t_max, raw.n_steps)?;
        if raw.n_paths < 2 {
            return Err(CliError::config("n_paths must be at least 2"));
        }
        if !(raw.x > 0.0) {
            return Err(CliError::config(format!("x must be positive, got {}", raw.x)));
        }
        if !(raw.strategy_scale.is_finite()) {
            return Err(CliError::config("strategy_scale must be finite"));
        }
        let tests: Vec<String> = raw
            .tests
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if tests.is_empty() {
            return Err(CliError::config("tests must select at least one test"));
        }
        for t in &tests {
            if !KNOWN_TESTS.contains(&t.as_str()) {
                return Err(CliError::config(format!(
                    "unknown test {t:?}; known tests: {}",
                    KNOWN_TESTS.join(", ")
                )));
            }
        }
        if is_bessel && !utility.is_log() {
            return Err(CliError::config(
                "the Bessel(3) market only has closed-form oracles for log utility",
            ));
        }
        if is_bessel {
            let bs_only = ["closed-form", "duality", "potential", "dual-opt"];
            if let Some(t) = tests.iter().find(|t| bs_only.contains(&t.as_str())) {
                return Err(CliError::config(format!(
                    "test {t:?} needs the Black-Scholes closed forms; \
                     Bessel(3) supports pathwise, budget, martingale, local-martingale, psi-zero"
                )));
            }
        } else if let Some(t) =
            tests.iter().find(|t| ["local-martingale", "psi-zero"].contains(&t.as_str()))
        {
            return Err(CliError::config(format!(
                "test {t:?} targets the Bessel(3) strict-local-martingale example; \
                 use model = \"bessel3\""
            )));
        }
        if tests.iter().any(|t| t == "pathwise")
            && !is_bessel
            && (!utility.is_log() || raw.strategy_scale != 1.0)
        {
            return Err(CliError::config(
                "the pathwise identities are exact only for log utility at the optimal \
                 strategy (strategy_scale = 1)",
            ));
        }
        let oracle_tests = ["pathwise", "budget", "duality", "potential", "dual-opt"];
        if convention == Convention::Kappa && tests.iter().any(|t| oracle_tests.contains(&t.as_str()))
        {
            return Err(CliError::config(
                "closed-form oracle tests are stated in the \"lebesgue\" convention; \
                 use convention = \"lebesgue\" or restrict the test selection",
            ));
        }
        // The closed-form marginal value; for the Black-Scholes market this
        // also fails fast on the infinite-dual regime (beta_hat <= 0).
        let y = match raw.y {
            Some(y) if y > 0.0 => y,
            Some(y) => return Err(CliError::config(format!("y must be positive, got {y}"))),
            None => {
                if is_bessel {
                    // Log utility is myopic: u'(x) = 1 / (alpha x) for any
                    // market with a locally finite opportunity set.
                    1.0 / (raw.alpha * raw.x)
                } else {
                    closed_form::bs_marginal_primal(raw.x, raw.alpha, raw.lambda, &utility)?
                }
            }
        };
        if !is_bessel {
            // Surface the violated finiteness assumption at load time.
            closed_form::bs_beta_hat(raw.alpha, raw.lambda, &utility)?;
        }
        let psi_values: Vec<f64> = raw
            .psi_values
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| CliError::config(format!("bad psi value {s:?}: {e}")))
            })
            .collect::<Result<_, _>>()?;
        Ok(ExperimentConfig {
            model,
            is_bessel,
            utility,
            lambda: raw.lambda,
            sigma: raw.sigma,
            alpha: raw.alpha,
            kappa,
            grid,
            n_paths: raw.n_paths,
            seed: raw.seed,
            convention,
            x: raw.x,
            y,
            tests,
            strategy_scale: raw.strategy_scale,
            output_dir: raw.output_dir,
            path_sample: raw.path_sample,
            path_stride: raw.path_stride,
            psi_values,
        })
    }

    pub fn has_test(&self, name: &str) -> bool {
        self.tests.iter().any(|t| t == name)
    }
}
