//! Verdict and estimate reporting: JSON-lines verdicts, a flat estimates
//! CSV, and console summaries.
//!
//! Every estimate row carries the seed, path count, grid, truncation tail
//! mass and integration convention so a row is reproducible in isolation.
//! Floats are printed with a fixed 17-significant-digit scientific format,
//! which makes reruns byte-comparable.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde_json::json;

use deflator_lab::verify::{MCEstimate, Verdict};

use crate::CliError;

/// Fixed float formatting shared by all CSV output.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.17e}")
}

/// Context stamped onto every output row.
#[derive(Clone)]
pub struct RunContext {
    pub seed: u64,
    pub n_paths: usize,
    pub t_max: f64,
    pub n_steps: usize,
    pub tail_mass: f64,
    pub convention: String,
}

pub struct Reporter {
    verdicts: Vec<(String, String, Verdict)>,
    estimates_csv: String,
    ctx: RunContext,
}

impl Reporter {
    pub fn new(ctx: RunContext) -> Self {
        let mut estimates_csv = String::new();
        estimates_csv.push_str(
            "test,quantity,value,std_error,n_paths,seed,t_max,n_steps,tail_mass,convention\n",
        );
        Reporter { verdicts: Vec::new(), estimates_csv, ctx }
    }

    /// Records a verdict under a test name, with a human-readable
    /// parameter string for the JSON record.
    pub fn verdict(&mut self, test: &str, params: &str, v: Verdict) {
        println!("{}: {} (statistic {:.6e} vs threshold {:.6e})", test, v.kind, v.statistic, v.threshold);
        println!("    {}", v.detail);
        self.verdicts.push((test.to_string(), params.to_string(), v));
    }

    /// Records a scalar estimate row; exact quantities use std_error = 0
    /// and n_paths = 0.
    pub fn scalar(&mut self, test: &str, quantity: &str, value: f64) {
        self.row(test, quantity, value, 0.0, 0);
    }

    pub fn estimate(&mut self, test: &str, quantity: &str, est: &MCEstimate) {
        self.row(test, quantity, est.mean, est.std_error, est.n as usize);
    }

    fn row(&mut self, test: &str, quantity: &str, value: f64, se: f64, n: usize) {
        let c = &self.ctx;
        writeln!(
            self.estimates_csv,
            "{test},{quantity},{},{},{n},{},{},{},{},{}",
            fmt_f64(value),
            fmt_f64(se),
            c.seed,
            fmt_f64(c.t_max),
            c.n_steps,
            fmt_f64(c.tail_mass),
            c.convention,
        )
        .expect("string write");
    }

    pub fn all_passed(&self) -> bool {
        self.verdicts.iter().all(|(_, _, v)| v.passed())
    }

    /// Writes verdicts.jsonl and estimates.csv into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::config(format!("cannot create {}: {e}", dir.display())))?;
        let mut vf = BufWriter::new(File::create(dir.join("verdicts.jsonl"))?);
        let header = json!({
            "record": "header",
            "note": "verdicts certify only the sampled parameter families, controls and \
                     random seeds below; Pass is statistical evidence, not a proof",
            "seed": self.ctx.seed,
            "n_paths": self.ctx.n_paths,
            "t_max": self.ctx.t_max,
            "n_steps": self.ctx.n_steps,
            "convention": self.ctx.convention,
        });
        writeln!(vf, "{header}")?;
        for (test, params, v) in &self.verdicts {
            let rec = json!({
                "record": "verdict",
                "test": test,
                "params": params,
                "statistic": v.statistic,
                "threshold": v.threshold,
                "pass": v.passed(),
                "detail": v.detail,
                "seed": self.ctx.seed,
                "n_paths": self.ctx.n_paths,
                "tail_mass": self.ctx.tail_mass,
            });
            writeln!(vf, "{rec}")?;
        }
        vf.flush()?;
        std::fs::write(dir.join("estimates.csv"), &self.estimates_csv)?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let passed = self.verdicts.iter().filter(|(_, _, v)| v.passed()).count();
        format!("{passed}/{} verdicts passed", self.verdicts.len())
    }
}

/// Reads a verdicts.jsonl written by [`Reporter::write`] and prints a
/// summary table; returns whether every verdict passed.
pub fn summarize_verdicts(path: &Path) -> Result<bool, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let mut all_pass = true;
    let mut n = 0usize;
    println!("{:<40} {:>14} {:>14}  verdict", "test", "statistic", "threshold");
    for line in text.lines() {
        let rec: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| CliError::config(format!("bad JSON line in {}: {e}", path.display())))?;
        if rec["record"] != "verdict" {
            continue;
        }
        n += 1;
        let pass = rec["pass"].as_bool().unwrap_or(false);
        all_pass &= pass;
        println!(
            "{:<40} {:>14.6e} {:>14.6e}  {}",
            rec["test"].as_str().unwrap_or("?"),
            rec["statistic"].as_f64().unwrap_or(f64::NAN),
            rec["threshold"].as_f64().unwrap_or(f64::NAN),
            if pass { "PASS" } else { "FAIL" },
        );
    }
    if n == 0 {
        return Err(CliError::config(format!("no verdict records in {}", path.display())));
    }
    Ok(all_pass)
}
