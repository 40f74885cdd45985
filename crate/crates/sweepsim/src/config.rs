//! Experiment configuration: per-suite defaults, a flat `key = value`
//! config-file format, CLI overrides, and a canonical SHA-256 hash of the
//! resolved configuration for manifests and reports.

use std::fmt;

use serde::Serialize;
use sha2::{Digest, Sha256};
use sweepsim_core::{observe, Parameters};

/// Which verification suite to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    /// Rescaled establishment increments against the unit exponential,
    /// plus sweep-width and post-sweep occupancy profiles.
    Theorem1,
    /// Mean-versus-count comparison and the Poisson marginal of the
    /// rescaled sweep count.
    Corollary,
    /// Single-sweep baselines: fixation probability and sweep duration.
    Classical,
    /// Domination couplings and their marginal laws across a grid of
    /// population sizes.
    Couplings,
    /// Closed-form laws of the branching-process lab against simulation.
    Branching,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Theorem1 => "theorem1",
            Suite::Corollary => "corollary",
            Suite::Classical => "classical",
            Suite::Couplings => "couplings",
            Suite::Branching => "branching",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A configuration problem that should abort the run before any
/// simulation starts (CLI exit code 2).
#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    /// A config-file line that is not `key = value`.
    Malformed { line: usize, text: String },
    /// A key the harness does not know.
    UnknownKey { line: usize, key: String },
    /// A value that does not parse as the key's type.
    BadValue { line: usize, key: String, value: String },
    /// A resolved configuration that cannot be run.
    Invalid(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Malformed { line, text } => {
                write!(f, "config line {line}: expected `key = value`, got `{text}`")
            }
            ConfigError::UnknownKey { line, key } => {
                write!(f, "config line {line}: unknown key `{key}`")
            }
            ConfigError::BadValue { line, key, value } => {
                write!(f, "config line {line}: cannot parse `{value}` for key `{key}`")
            }
            ConfigError::Invalid(msg) => write!(f, "invalid configuration: {msg}"),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Partially specified configuration: config-file contents and CLI flags
/// both land here, then [`Draft::resolve`] fills suite defaults.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Draft {
    pub n: Option<u32>,
    pub s: Option<f64>,
    pub mu: Option<f64>,
    pub eta: Option<f64>,
    pub k_sweeps: Option<usize>,
    pub replicates: Option<u64>,
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub zeta: Option<f64>,
    pub kappa: Option<f64>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub t_checks: Option<Vec<f64>>,
    pub grid_ns: Option<Vec<u32>>,
    pub significance: Option<f64>,
    pub pass_threshold: Option<f64>,
    pub event_cap: Option<u64>,
    pub dump_cap: Option<u64>,
    pub workers: Option<usize>,
    pub out_dir: Option<String>,
}

impl Draft {
    /// Fill any unset field from `weaker` (typically: CLI draft absorbs
    /// the config file, so explicit flags win).
    pub fn fill_from(&mut self, weaker: &Draft) {
        macro_rules! take {
            ($($field:ident),*) => {
                $(if self.$field.is_none() { self.$field = weaker.$field.clone(); })*
            };
        }
        take!(
            n, s, mu, eta, k_sweeps, replicates, seed, alpha, gamma, zeta, kappa, c1, c2,
            t_checks, grid_ns, significance, pass_threshold, event_cap, dump_cap, workers,
            out_dir
        );
    }

    /// Resolve against the defaults of `suite` into a runnable
    /// configuration.
    pub fn resolve(&self, suite: Suite) -> Result<ExperimentConfig, ConfigError> {
        let d = suite_defaults(suite);
        let n = self.n.or(d.n).expect("defaults always set n");
        let s = self.s.or(d.s).expect("defaults always set s");
        let eta = self.eta.or(d.eta).expect("defaults always set eta");
        // The couplings suite keeps a fixed distance below the rare-
        // mutation boundary 1/(n ln n) so that every grid size probes the
        // same corner of the regime.
        let mu = self.mu.or(d.mu).unwrap_or_else(|| coupling_mu(n));
        let config = ExperimentConfig {
            suite,
            n,
            s,
            mu,
            eta,
            k_sweeps: self.k_sweeps.or(d.k_sweeps).unwrap_or(0),
            replicates: self.replicates.or(d.replicates).expect("defaults set replicates"),
            alpha: self.alpha.or(d.alpha).unwrap_or(0.5),
            gamma: self.gamma.or(d.gamma).unwrap_or(0.9),
            zeta: self.zeta.or(d.zeta).unwrap_or(0.05),
            kappa: self.kappa.or(d.kappa).unwrap_or(0.05),
            c1: self.c1.or(d.c1).unwrap_or(0.0),
            c2: self.c2.or(d.c2).unwrap_or(0.0),
            t_checks: self.t_checks.clone().or_else(|| d.t_checks.clone()).unwrap_or_default(),
            grid_ns: self.grid_ns.clone().or_else(|| d.grid_ns.clone()).unwrap_or_default(),
            significance: self.significance.or(d.significance).unwrap_or(0.01),
            pass_threshold: self.pass_threshold.or(d.pass_threshold).unwrap_or(0.9),
            event_cap: self.event_cap.or(d.event_cap).unwrap_or(1_000_000_000),
        };
        config.finish(self.c1.is_none() && d.c1.is_none(), self.c2.is_none() && d.c2.is_none())
    }
}

/// Regime-anchored mutation rate used by the couplings grid: a fixed
/// multiple of the rare-mutation boundary,`3.3 / (n ln n)`.
pub fn coupling_mu(n: u32) -> f64 {
    let nf = f64::from(n);
    3.3 / (nf * nf.ln())
}

fn suite_defaults(suite: Suite) -> Draft {
    let mut d = Draft::default();
    match suite {
        Suite::Theorem1 => {
            d.n = Some(2000);
            d.s = Some(0.15);
            d.mu = Some(1e-6);
            d.eta = Some(0.5);
            d.k_sweeps = Some(10);
            d.replicates = Some(20);
        }
        Suite::Corollary => {
            d.n = Some(2000);
            d.s = Some(0.15);
            d.mu = Some(1e-6);
            d.eta = Some(0.5);
            d.replicates = Some(50);
            d.t_checks = Some(vec![0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0]);
        }
        Suite::Classical => {
            // Size chosen where the (2/s) log N duration approximation
            // sits inside its band; replicates sized so a ~9.1% fixation
            // rate still yields 2000+ conditioned runs.
            d.n = Some(1000);
            d.s = Some(0.1);
            d.mu = Some(0.0);
            d.eta = Some(0.5);
            d.replicates = Some(24_000);
        }
        Suite::Couplings => {
            d.n = Some(1000);
            d.s = Some(0.15);
            d.eta = Some(0.5);
            d.replicates = Some(100);
            d.grid_ns = Some(vec![200, 1000, 5000]);
        }
        Suite::Branching => {
            d.n = Some(1000);
            d.s = Some(0.1);
            d.mu = Some(0.0);
            d.eta = Some(0.5);
            d.replicates = Some(100_000);
        }
    }
    d
}

/// Fully resolved experiment configuration. Serialization order is the
/// declaration order below; the SHA-256 of the serialized form
/// identifies the experiment in manifests and reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub suite: Suite,
    pub n: u32,
    pub s: f64,
    pub mu: f64,
    pub eta: f64,
    pub k_sweeps: usize,
    pub replicates: u64,
    pub alpha: f64,
    pub gamma: f64,
    pub zeta: f64,
    pub kappa: f64,
    pub c1: f64,
    pub c2: f64,
    pub t_checks: Vec<f64>,
    pub grid_ns: Vec<u32>,
    pub significance: f64,
    pub pass_threshold: f64,
    pub event_cap: u64,
}

impl ExperimentConfig {
    /// Validate and fill the derived window constants where they were
    /// left to default.
    fn finish(mut self, default_c1: bool, default_c2: bool) -> Result<Self, ConfigError> {
        let params = self.parameters()?;
        for (name, v) in [
            ("alpha", self.alpha),
            ("gamma", self.gamma),
            ("zeta", self.zeta),
            ("kappa", self.kappa),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(ConfigError::Invalid(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if !(self.significance > 0.0 && self.significance < 1.0) {
            return Err(ConfigError::Invalid(format!(
                "significance must lie in (0, 1), got {}",
                self.significance
            )));
        }
        if !(self.pass_threshold > 0.0 && self.pass_threshold <= 1.0) {
            return Err(ConfigError::Invalid(format!(
                "pass_threshold must lie in (0, 1], got {}",
                self.pass_threshold
            )));
        }
        if self.replicates == 0 {
            return Err(ConfigError::Invalid("replicates must be positive".into()));
        }
        if self.event_cap == 0 {
            return Err(ConfigError::Invalid("event_cap must be positive".into()));
        }
        if self.mu == 0.0 && self.k_sweeps >= 1 && matches!(self.suite, Suite::Theorem1) {
            return Err(ConfigError::Invalid(
                "mu = 0 with k_sweeps >= 1: no sweeps possible".into(),
            ));
        }
        if matches!(self.suite, Suite::Corollary) && (self.mu == 0.0 || self.t_checks.is_empty()) {
            return Err(ConfigError::Invalid(
                "the mean-path suite needs mu > 0 and at least one entry in t_checks".into(),
            ));
        }
        if matches!(self.suite, Suite::Classical) && self.mu != 0.0 {
            return Err(ConfigError::Invalid(
                "the classical baseline suite runs without recurrent mutation (mu = 0)".into(),
            ));
        }
        if matches!(self.suite, Suite::Couplings) && self.mu == 0.0 {
            return Err(ConfigError::Invalid(
                "the coupling suite needs mu > 0 for its immigration laws".into(),
            ));
        }
        if let Some(&bad) = self.t_checks.iter().find(|&&t| !(t > 0.0) || !t.is_finite()) {
            return Err(ConfigError::Invalid(format!(
                "t_checks entries must be positive and finite, got {bad}"
            )));
        }
        if self.grid_ns.iter().any(|&g| g < 2) {
            return Err(ConfigError::Invalid("grid_ns entries must be at least 2".into()));
        }
        // Fill the sweep-window constants from the derived profile where
        // they were left to default; without a mutation-selection profile
        // (mu = 0 or s = 0) the windows are undefined and stay at 0,
        // which only the sweep suites ever read.
        if default_c1 || default_c2 {
            if let Ok(derived) = observe::derived_constants(&params) {
                let delta = f64::from(derived.delta);
                if default_c1 {
                    self.c1 = delta;
                }
                if default_c2 {
                    self.c2 = 4.0 * (1.0 + self.s) / self.alpha + delta;
                }
            }
        }
        Ok(self)
    }

    /// Core model parameters for this configuration.
    pub fn parameters(&self) -> Result<Parameters, ConfigError> {
        Parameters::new(self.n, self.s, self.mu, Some(self.eta))
            .map_err(|e| ConfigError::Invalid(format!("{e:?}")))
    }

    /// Model parameters at a different population size, with the
    /// mutation rate rescaled to the same multiple of `1/(n ln n)`.
    pub fn parameters_at(&self, n: u32) -> Result<Parameters, ConfigError> {
        let base = coupling_mu(self.n);
        let mu = if base > 0.0 { self.mu / base * coupling_mu(n) } else { self.mu };
        Parameters::new(n, self.s, mu, Some(self.eta))
            .map_err(|e| ConfigError::Invalid(format!("{e:?}")))
    }

    /// Canonical JSON serialization (fixed field order, shortest
    /// round-trip floats).
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serialization cannot fail")
    }

    /// Lowercase hex SHA-256 of the canonical serialization.
    pub fn sha256(&self) -> String {
        sha256_hex(self.canonical_json().as_bytes())
    }
}

/// Lowercase hex SHA-256 digest of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        use std::fmt::Write;
        write!(hex, "{byte:02x}").expect("writing to a String cannot fail");
    }
    hex
}

/// Resolved configuration for the `simulate` command: run replicates of
/// the population until a target number of sweeps completes, recording
/// stopping times (and optionally the full event stream of replicate 0).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateConfig {
    pub n: u32,
    pub s: f64,
    pub mu: f64,
    pub eta: f64,
    pub k_sweeps: usize,
    pub replicates: u64,
    pub alpha: f64,
    pub event_cap: u64,
    pub dump_cap: u64,
}

impl SimulateConfig {
    /// Resolve CLI/file values against the simulate defaults.
    pub fn resolve(draft: &Draft) -> Result<Self, ConfigError> {
        let config = SimulateConfig {
            n: draft.n.unwrap_or(1000),
            s: draft.s.unwrap_or(0.1),
            mu: draft.mu.unwrap_or(1e-5),
            eta: draft.eta.unwrap_or(0.5),
            k_sweeps: draft.k_sweeps.unwrap_or(3),
            replicates: draft.replicates.unwrap_or(10),
            alpha: draft.alpha.unwrap_or(0.5),
            event_cap: draft.event_cap.unwrap_or(1_000_000_000),
            dump_cap: draft.dump_cap.unwrap_or(10_000_000),
        };
        if config.k_sweeps == 0 {
            return Err(ConfigError::Invalid("simulate needs k_sweeps >= 1".into()));
        }
        if config.mu == 0.0 {
            return Err(ConfigError::Invalid(
                "mu = 0 with k_sweeps >= 1: no sweeps possible".into(),
            ));
        }
        if config.replicates == 0 {
            return Err(ConfigError::Invalid("replicates must be positive".into()));
        }
        if !(config.alpha > 0.0 && config.alpha < 1.0) {
            return Err(ConfigError::Invalid(format!(
                "alpha must lie in (0, 1), got {}",
                config.alpha
            )));
        }
        if config.event_cap == 0 || config.dump_cap == 0 {
            return Err(ConfigError::Invalid("event_cap and dump_cap must be positive".into()));
        }
        // Surface parameter-domain problems (n = 0, negative rates) now.
        config.parameters()?;
        Ok(config)
    }

    /// Core model parameters for this configuration.
    pub fn parameters(&self) -> Result<Parameters, ConfigError> {
        Parameters::new(self.n, self.s, self.mu, Some(self.eta))
            .map_err(|e| ConfigError::Invalid(format!("{e:?}")))
    }

    /// Canonical JSON serialization (fixed field order).
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serialization cannot fail")
    }

    /// Lowercase hex SHA-256 of the canonical serialization.
    pub fn sha256(&self) -> String {
        sha256_hex(self.canonical_json().as_bytes())
    }
}

// ─── Config-file parsing ───

/// Parse a flat `key = value` config file. Blank lines and `#` comments
/// are ignored; unknown keys and unparsable values are hard errors with
/// the offending line number.
pub fn parse_config_file(text: &str) -> Result<Draft, ConfigError> {
    let mut draft = Draft::default();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::Malformed { line: line_no, text: raw.trim().into() })?;
        let key = key.trim();
        let value = value.trim();
        apply_key(&mut draft, key, value, line_no)?;
    }
    Ok(draft)
}

fn apply_key(draft: &mut Draft, key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
    fn parse<T: std::str::FromStr>(
        key: &str,
        value: &str,
        line: usize,
    ) -> Result<T, ConfigError> {
        value.parse().map_err(|_| ConfigError::BadValue {
            line,
            key: key.into(),
            value: value.into(),
        })
    }
    fn parse_list<T: std::str::FromStr>(
        key: &str,
        value: &str,
        line: usize,
    ) -> Result<Vec<T>, ConfigError> {
        value
            .split(',')
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .map(|v| parse(key, v, line))
            .collect()
    }
    match key {
        "n" => draft.n = Some(parse(key, value, line)?),
        "s" => draft.s = Some(parse(key, value, line)?),
        "mu" => draft.mu = Some(parse(key, value, line)?),
        "eta" => draft.eta = Some(parse(key, value, line)?),
        "k_sweeps" => draft.k_sweeps = Some(parse(key, value, line)?),
        "replicates" => draft.replicates = Some(parse(key, value, line)?),
        "seed" => draft.seed = Some(parse(key, value, line)?),
        "alpha" => draft.alpha = Some(parse(key, value, line)?),
        "gamma" => draft.gamma = Some(parse(key, value, line)?),
        "zeta" => draft.zeta = Some(parse(key, value, line)?),
        "kappa" => draft.kappa = Some(parse(key, value, line)?),
        "c1" => draft.c1 = Some(parse(key, value, line)?),
        "c2" => draft.c2 = Some(parse(key, value, line)?),
        "t_checks" => draft.t_checks = Some(parse_list(key, value, line)?),
        "grid_ns" => draft.grid_ns = Some(parse_list(key, value, line)?),
        "significance" => draft.significance = Some(parse(key, value, line)?),
        "pass_threshold" => draft.pass_threshold = Some(parse(key, value, line)?),
        "event_cap" => draft.event_cap = Some(parse(key, value, line)?),
        "dump_cap" => draft.dump_cap = Some(parse(key, value, line)?),
        "workers" => draft.workers = Some(parse(key, value, line)?),
        "out_dir" => draft.out_dir = Some(value.to_string()),
        _ => return Err(ConfigError::UnknownKey { line, key: key.into() }),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_defaults_resolve_to_runnable_configs() {
        for suite in [
            Suite::Theorem1,
            Suite::Corollary,
            Suite::Classical,
            Suite::Couplings,
            Suite::Branching,
        ] {
            let config = Draft::default().resolve(suite).expect("defaults must resolve");
            assert_eq!(config.suite, suite);
            assert!(config.replicates > 0);
            config.parameters().expect("defaults must produce valid parameters");
        }
    }

    #[test]
    fn window_constants_default_from_the_derived_profile() {
        let config = Draft::default().resolve(Suite::Theorem1).unwrap();
        // eta = 0.5 puts the profile width at floor(1/(1-eta)) + 1 = 3.
        assert_eq!(config.c1, 3.0);
        assert!((config.c2 - (4.0 * 1.15 / 0.5 + 3.0)).abs() < 1e-12);
        // Explicit values override the derivation.
        let mut draft = Draft::default();
        draft.c1 = Some(7.5);
        let config = draft.resolve(Suite::Theorem1).unwrap();
        assert_eq!(config.c1, 7.5);
    }

    #[test]
    fn coupling_mu_tracks_the_rare_mutation_boundary() {
        for n in [200u32, 1000, 5000] {
            let nf = f64::from(n);
            assert!((coupling_mu(n) * nf * nf.ln() - 3.3).abs() < 1e-12);
        }
        // The couplings default leaves mu unset and picks up the scaled rate.
        let config = Draft::default().resolve(Suite::Couplings).unwrap();
        assert!((config.mu - coupling_mu(1000)).abs() < 1e-18);
        // parameters_at rescales to the same regime multiple.
        let p = config.parameters_at(5000).unwrap();
        assert!((p.mu - coupling_mu(5000)).abs() < 1e-18);
    }

    #[test]
    fn config_file_round_trips_and_reports_bad_lines() {
        let text = "\
# experiment sizing
n = 500
s = 0.2          # selective advantage
mu = 1e-5
t_checks = 0.5, 1.0, 1.5
grid_ns = 100,200

replicates = 7
";
        let draft = parse_config_file(text).unwrap();
        assert_eq!(draft.n, Some(500));
        assert_eq!(draft.s, Some(0.2));
        assert_eq!(draft.t_checks.as_deref(), Some(&[0.5, 1.0, 1.5][..]));
        assert_eq!(draft.grid_ns.as_deref(), Some(&[100, 200][..]));
        assert_eq!(draft.replicates, Some(7));

        match parse_config_file("n = 500\nwhat even is this\n") {
            Err(ConfigError::Malformed { line: 2, .. }) => {}
            other => panic!("expected a malformed-line error, got {other:?}"),
        }
        match parse_config_file("frobnicate = 3\n") {
            Err(ConfigError::UnknownKey { line: 1, ref key }) if key == "frobnicate" => {}
            other => panic!("expected an unknown-key error, got {other:?}"),
        }
        match parse_config_file("n = lots\n") {
            Err(ConfigError::BadValue { line: 1, ref key, .. }) if key == "n" => {}
            other => panic!("expected a bad-value error, got {other:?}"),
        }
    }

    #[test]
    fn cli_flags_override_the_config_file() {
        let file = parse_config_file("n = 500\ns = 0.2\n").unwrap();
        let mut cli = Draft::default();
        cli.s = Some(0.3);
        cli.fill_from(&file);
        let config = cli.resolve(Suite::Classical).unwrap();
        assert_eq!(config.n, 500, "file value survives where the CLI is silent");
        assert_eq!(config.s, 0.3, "CLI value wins where both are set");
    }

    #[test]
    fn impossible_sweep_requests_are_rejected() {
        let mut draft = Draft::default();
        draft.mu = Some(0.0);
        draft.k_sweeps = Some(3);
        match draft.resolve(Suite::Theorem1) {
            Err(ConfigError::Invalid(msg)) => {
                assert!(msg.contains("no sweeps possible"), "message was: {msg}")
            }
            other => panic!("expected an invalid-config error, got {other:?}"),
        }
    }

    #[test]
    fn simulate_config_resolves_and_guards_impossible_requests() {
        let config = SimulateConfig::resolve(&Draft::default()).unwrap();
        assert_eq!(config.n, 1000);
        assert_eq!(config.k_sweeps, 3);
        config.parameters().unwrap();

        let mut draft = Draft::default();
        draft.mu = Some(0.0);
        match SimulateConfig::resolve(&draft) {
            Err(ConfigError::Invalid(msg)) => {
                assert!(msg.contains("no sweeps possible"), "message was: {msg}")
            }
            other => panic!("expected an invalid-config error, got {other:?}"),
        }
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = Draft::default().resolve(Suite::Classical).unwrap();
        let b = Draft::default().resolve(Suite::Classical).unwrap();
        assert_eq!(a.sha256(), b.sha256(), "identical configs must hash identically");
        assert_eq!(a.sha256().len(), 64);
        let mut draft = Draft::default();
        draft.replicates = Some(12_345);
        let c = draft.resolve(Suite::Classical).unwrap();
        assert_ne!(a.sha256(), c.sha256(), "any field change must change the hash");
    }
}
