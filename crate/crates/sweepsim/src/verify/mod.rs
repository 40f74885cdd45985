//! Verification suites: each suite runs a batch of simulations against
//! the configured model, evaluates closed-form or distributional
//! predictions, and produces a [`Report`] whose JSON and text renderings
//! are byte-deterministic for a fixed configuration and master seed.

pub mod branching;
pub mod classical;
pub mod corollary;
pub mod couplings;
pub mod theorem1;

use serde::Serialize;

use crate::config::{ExperimentConfig, Suite};
use crate::io::{CouplingRow, SweepRow};

/// Report format version.
pub const REPORT_SCHEMA: u32 = 1;

/// How a check's observed value relates to its expected value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    /// `|observed - expected| <= margin`.
    Within,
    /// `observed > expected` (strict; `margin` unused).
    Exceeds,
    /// `observed >= expected` (`margin` unused).
    AtLeast,
    /// `observed <= expected` (`margin` unused).
    AtMost,
}

/// One verified claim.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub relation: Relation,
    pub observed: f64,
    pub expected: f64,
    pub margin: f64,
    pub pass: bool,
    pub detail: String,
}

impl CheckResult {
    /// Two-sided check: observed within `margin` of `expected`.
    pub fn within(
        name: impl Into<String>,
        observed: f64,
        expected: f64,
        margin: f64,
        detail: String,
    ) -> Self {
        CheckResult {
            name: name.into(),
            relation: Relation::Within,
            observed,
            expected,
            margin,
            pass: (observed - expected).abs() <= margin,
            detail,
        }
    }

    /// Strict threshold check, e.g. `p_value > significance`.
    pub fn exceeds(name: impl Into<String>, observed: f64, floor: f64, detail: String) -> Self {
        CheckResult {
            name: name.into(),
            relation: Relation::Exceeds,
            observed,
            expected: floor,
            margin: 0.0,
            pass: observed > floor,
            detail,
        }
    }

    /// Lower-bound check, e.g. a pass fraction against its threshold.
    pub fn at_least(name: impl Into<String>, observed: f64, floor: f64, detail: String) -> Self {
        CheckResult {
            name: name.into(),
            relation: Relation::AtLeast,
            observed,
            expected: floor,
            margin: 0.0,
            pass: observed >= floor,
            detail,
        }
    }

    /// Upper-bound check, e.g. a violation count against zero.
    pub fn at_most(name: impl Into<String>, observed: f64, ceiling: f64, detail: String) -> Self {
        CheckResult {
            name: name.into(),
            relation: Relation::AtMost,
            observed,
            expected: ceiling,
            margin: 0.0,
            pass: observed <= ceiling,
            detail,
        }
    }
}

/// A replicate that produced no usable result, and why.
#[derive(Debug, Clone, Serialize)]
pub struct Exclusion {
    pub replicate: u64,
    pub reason: String,
}

/// Complete, deterministic result of one suite run.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema: u32,
    pub suite: String,
    pub config: ExperimentConfig,
    pub config_sha256: String,
    pub master_seed: u64,
    pub replicates_total: u64,
    pub replicates_included: u64,
    pub checks: Vec<CheckResult>,
    pub exclusions: Vec<Exclusion>,
    pub passed: bool,
}

impl Report {
    /// Assemble a report, enforcing the exclusion accounting invariant
    /// `included + excluded == total`.
    pub fn assemble(
        config: &ExperimentConfig,
        master_seed: u64,
        replicates_total: u64,
        checks: Vec<CheckResult>,
        exclusions: Vec<Exclusion>,
    ) -> Self {
        let excluded = exclusions.len() as u64;
        assert!(
            excluded <= replicates_total,
            "exclusion accounting broken: {excluded} exclusions from {replicates_total} replicates"
        );
        let passed = checks.iter().all(|c| c.pass);
        Report {
            schema: REPORT_SCHEMA,
            suite: config.suite.name().into(),
            config: config.clone(),
            config_sha256: config.sha256(),
            master_seed,
            replicates_total,
            replicates_included: replicates_total - excluded,
            checks,
            exclusions,
            passed,
        }
    }

    /// JSON rendering with a trailing newline (byte-deterministic).
    pub fn to_json(&self) -> String {
        let mut text =
            serde_json::to_string_pretty(self).expect("report serialization cannot fail");
        text.push('\n');
        text
    }

    /// Plain-text rendering: one line per check plus exclusions and the
    /// final verdict (byte-deterministic).
    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        writeln!(out, "verification report (schema {})", self.schema).unwrap();
        writeln!(out, "suite: {}", self.suite).unwrap();
        writeln!(out, "config sha256: {}", self.config_sha256).unwrap();
        writeln!(out, "master seed: {}", self.master_seed).unwrap();
        writeln!(
            out,
            "replicates: {} total, {} included, {} excluded",
            self.replicates_total,
            self.replicates_included,
            self.exclusions.len()
        )
        .unwrap();
        writeln!(out).unwrap();
        let name_width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        for check in &self.checks {
            let verdict = if check.pass { "PASS" } else { "FAIL" };
            let bound = match check.relation {
                Relation::Within => {
                    format!("expected {} within {}", check.expected, check.margin)
                }
                Relation::Exceeds => format!("required > {}", check.expected),
                Relation::AtLeast => format!("required >= {}", check.expected),
                Relation::AtMost => format!("required <= {}", check.expected),
            };
            writeln!(
                out,
                "[{verdict}] {:<name_width$}  observed {}  ({bound})",
                check.name, check.observed
            )
            .unwrap();
            if !check.detail.is_empty() {
                writeln!(out, "       {}{}", " ".repeat(name_width), check.detail).unwrap();
            }
        }
        if !self.exclusions.is_empty() {
            writeln!(out).unwrap();
            writeln!(out, "excluded replicates:").unwrap();
            for e in &self.exclusions {
                writeln!(out, "  replicate {}: {}", e.replicate, e.reason).unwrap();
            }
        }
        writeln!(out).unwrap();
        writeln!(out, "verdict: {}", if self.passed { "PASS" } else { "FAIL" }).unwrap();
        out
    }
}

/// Everything a suite run produces: the report plus any tabular samples
/// and the total simulated event count (for the manifest's metrics).
#[derive(Debug, Clone)]
pub struct SuiteOutput {
    pub report: Report,
    pub sweep_rows: Vec<SweepRow>,
    pub coupling_rows: Vec<CouplingRow>,
    pub events_total: u64,
}

impl SuiteOutput {
    fn tableless(report: Report, events_total: u64) -> Self {
        SuiteOutput { report, sweep_rows: Vec::new(), coupling_rows: Vec::new(), events_total }
    }
}

/// Run the suite named by the configuration.
pub fn run_suite(config: &ExperimentConfig, master_seed: u64, workers: usize) -> SuiteOutput {
    match config.suite {
        Suite::Theorem1 => theorem1::run(config, master_seed, workers),
        Suite::Corollary => corollary::run(config, master_seed, workers),
        Suite::Classical => classical::run(config, master_seed, workers),
        Suite::Couplings => couplings::run(config, master_seed, workers),
        Suite::Branching => branching::run(config, master_seed, workers),
    }
}
