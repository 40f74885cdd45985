//! File formats: a JSONL event-stream format for recorded trajectories
//! (bit-exact round trip), CSV tables for stopping times and coupling
//! audits, and the JSON run manifest that ties every output of a run to
//! its configuration and seeds.

use std::fmt;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use sweepsim_core::rng::derive_seed;
use sweepsim_core::state::{Event, EventKind, Trajectory};
use sweepsim_core::{observe::StoppingTimeLog, Parameters};

// ─── JSONL trajectories ───

/// Why a trajectory file could not be read.
#[derive(Debug)]
pub enum JsonlError {
    Io(io::Error),
    /// A line that is not valid for its position (malformed JSON, an
    /// unknown event kind, a replacement without a parent, a bad
    /// header). Lines are numbered from 1.
    Line { line: usize, detail: String },
}

impl fmt::Display for JsonlError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JsonlError::Io(e) => write!(f, "trajectory file: {e}"),
            JsonlError::Line { line, detail } => write!(f, "trajectory line {line}: {detail}"),
        }
    }
}

impl std::error::Error for JsonlError {}

impl From<io::Error> for JsonlError {
    fn from(e: io::Error) -> Self {
        JsonlError::Io(e)
    }
}

/// First line of a trajectory file: model parameters, the initial
/// composition, and the time the recording ended (which can exceed the
/// last event time when a horizon stopped the run).
#[derive(Serialize, Deserialize)]
struct HeaderLine {
    n: u32,
    s: f64,
    mu: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    eta: Option<f64>,
    initial: Vec<u32>,
    final_time: f64,
}

/// One event per line: `t`, a kind tag (`"repl"` with the dying type `i`
/// and parent type `j`, or `"mut"` with the source type `i`).
#[derive(Serialize, Deserialize)]
struct EventLine {
    t: f64,
    kind: String,
    i: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    j: Option<u32>,
}

/// Write a recorded trajectory as JSONL. Floats are rendered in shortest
/// round-trip form, so reading the file back reproduces every bit.
pub fn write_trajectory_jsonl(mut w: impl Write, traj: &Trajectory) -> io::Result<()> {
    let header = HeaderLine {
        n: traj.params.n,
        s: traj.params.s,
        mu: traj.params.mu,
        eta: traj.params.eta,
        initial: traj.initial.clone(),
        final_time: traj.final_time,
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for event in &traj.events {
        let line = match event.kind {
            EventKind::Replacement { dying, parent } => {
                EventLine { t: event.time, kind: "repl".into(), i: dying, j: Some(parent) }
            }
            EventKind::Mutation { from } => {
                EventLine { t: event.time, kind: "mut".into(), i: from, j: None }
            }
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Read a JSONL trajectory. Structural problems abort with the offending
/// line number; whether the events can actually be applied in sequence
/// is the replayer's job, not the reader's.
pub fn read_trajectory_jsonl(r: impl BufRead) -> Result<Trajectory, JsonlError> {
    let mut lines = r.lines();
    let header_text = match lines.next() {
        Some(text) => text?,
        None => {
            return Err(JsonlError::Line { line: 1, detail: "empty file: missing header".into() })
        }
    };
    let header: HeaderLine = serde_json::from_str(&header_text)
        .map_err(|e| JsonlError::Line { line: 1, detail: format!("bad header: {e}") })?;
    let params = Parameters::new(header.n, header.s, header.mu, header.eta)
        .map_err(|e| JsonlError::Line { line: 1, detail: format!("bad parameters: {e:?}") })?;

    let mut traj = Trajectory::new(params, header.initial);
    traj.final_time = header.final_time;
    for (idx, text) in lines.enumerate() {
        let line_no = idx + 2;
        let text = text?;
        if text.trim().is_empty() {
            continue;
        }
        let line: EventLine = serde_json::from_str(&text)
            .map_err(|e| JsonlError::Line { line: line_no, detail: format!("bad event: {e}") })?;
        let kind = match (line.kind.as_str(), line.j) {
            ("repl", Some(parent)) => EventKind::Replacement { dying: line.i, parent },
            ("repl", None) => {
                return Err(JsonlError::Line {
                    line: line_no,
                    detail: "replacement event without a parent field `j`".into(),
                })
            }
            ("mut", None) => EventKind::Mutation { from: line.i },
            ("mut", Some(_)) => {
                return Err(JsonlError::Line {
                    line: line_no,
                    detail: "mutation event with a stray `j` field".into(),
                })
            }
            (other, _) => {
                return Err(JsonlError::Line {
                    line: line_no,
                    detail: format!("unknown event kind `{other}`"),
                })
            }
        };
        traj.events.push(Event { time: line.t, kind });
    }
    Ok(traj)
}

// ─── CSV tables ───

/// One row of the stopping-time table: crossing times for one type in
/// one replicate, blank where the run never crossed.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub replicate: u64,
    pub k: usize,
    pub establishment: Option<f64>,
    pub takeover_completion: Option<f64>,
    pub alpha_crossing: Option<f64>,
    pub count_crossing: Option<f64>,
    pub mutation_crossing: Option<f64>,
    /// `N mu s (T_k - T_(k-1))` between consecutive establishments.
    pub rescaled_increment: Option<f64>,
}

pub const SWEEP_CSV_HEADER: &str = "replicate,k,establishment,takeover_completion,\
alpha_crossing,count_crossing,mutation_crossing,rescaled_increment";

fn push_opt(out: &mut String, value: Option<f64>) {
    use std::fmt::Write;
    if let Some(v) = value {
        write!(out, "{v}").expect("writing to a String cannot fail");
    }
}

/// Render sweep rows as CSV (header included).
pub fn write_sweep_csv(mut w: impl Write, rows: &[SweepRow]) -> io::Result<()> {
    let mut out = String::new();
    out.push_str(SWEEP_CSV_HEADER);
    out.push('\n');
    for row in rows {
        use std::fmt::Write;
        write!(out, "{},{},", row.replicate, row.k).expect("writing to a String cannot fail");
        push_opt(&mut out, row.establishment);
        out.push(',');
        push_opt(&mut out, row.takeover_completion);
        out.push(',');
        push_opt(&mut out, row.alpha_crossing);
        out.push(',');
        push_opt(&mut out, row.count_crossing);
        out.push(',');
        push_opt(&mut out, row.mutation_crossing);
        out.push(',');
        push_opt(&mut out, row.rescaled_increment);
        out.push('\n');
    }
    w.write_all(out.as_bytes())
}

/// Expand a stopping-time log into sweep rows for types `1..=k_max`,
/// attaching the rescaled establishment increment where both endpoints
/// exist.
pub fn sweep_rows_from_log(
    replicate: u64,
    log: &StoppingTimeLog,
    params: &Parameters,
) -> Vec<SweepRow> {
    let scale = params.n_f64() * params.mu * params.s;
    (1..=log.k_max())
        .map(|k| {
            let increment = match (log.establishment[k], log.establishment[k - 1]) {
                (Some(tk), Some(prev)) => Some(scale * (tk - prev)),
                _ => None,
            };
            SweepRow {
                replicate,
                k,
                establishment: log.establishment[k],
                takeover_completion: log.lower_extinction[k],
                alpha_crossing: log.alpha_crossing[k],
                count_crossing: log.beta_crossing[k],
                mutation_crossing: log.mutation_crossing[k],
                rescaled_increment: increment,
            }
        })
        .collect()
}

/// One row of the coupling audit table.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingRow {
    pub construction: String,
    pub n: u32,
    pub run: u64,
    pub events_checked: u64,
    pub violations: u64,
    pub flagged: bool,
}

pub const COUPLING_CSV_HEADER: &str = "construction,n,run,events_checked,violations,flagged";

/// Render coupling audit rows as CSV (header included).
pub fn write_coupling_csv(mut w: impl Write, rows: &[CouplingRow]) -> io::Result<()> {
    let mut out = String::new();
    out.push_str(COUPLING_CSV_HEADER);
    out.push('\n');
    for row in rows {
        use std::fmt::Write;
        writeln!(
            out,
            "{},{},{},{},{},{}",
            row.construction, row.n, row.run, row.events_checked, row.violations, row.flagged
        )
        .expect("writing to a String cannot fail");
    }
    w.write_all(out.as_bytes())
}

// ─── Run manifest ───

/// Per-replicate seed record: an explicit list while small, otherwise
/// the derivation scheme so any replicate can be reproduced on demand.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum SeedRecord {
    Explicit { replicate_seeds: Vec<u64> },
    Scheme { seed_scheme: String, replicates: u64 },
}

/// Largest replicate count for which the manifest lists seeds verbatim.
pub const SEED_LIST_CAP: u64 = 10_000;

/// Build the seed record for a run.
pub fn seed_record(master_seed: u64, replicates: u64) -> SeedRecord {
    if replicates <= SEED_LIST_CAP {
        SeedRecord::Explicit {
            replicate_seeds: (0..replicates).map(|i| derive_seed(master_seed, i)).collect(),
        }
    } else {
        SeedRecord::Scheme {
            seed_scheme: "replicate i uses derive_seed(master_seed, i) \
                          (splitmix64 mix of master_seed + i)"
                .into(),
            replicates,
        }
    }
}

/// Manifest written next to every run's outputs: enough to re-run the
/// experiment (config and seeds) and to account for every file the run
/// produced. Wall-clock timing lives here and only here — reports must
/// be byte-deterministic, manifests need not be.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub config_sha256: String,
    pub master_seed: u64,
    pub seeds: SeedRecord,
    /// File names (relative to the manifest's directory) this run owns.
    pub outputs: Vec<String>,
    pub events_total: u64,
    pub wall_clock_seconds: f64,
}

/// The version string recorded in manifests.
pub fn tool_version() -> String {
    format!("sweepsim {}", env!("CARGO_PKG_VERSION"))
}

/// Render a manifest as pretty JSON with a trailing newline.
pub fn manifest_json(manifest: &RunManifest) -> String {
    let mut text =
        serde_json::to_string_pretty(manifest).expect("manifest serialization cannot fail");
    text.push('\n');
    text
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::BufReader;
    use sweepsim_core::engine::simulate_recorded;
    use sweepsim_core::rng::replicate_rng;
    use sweepsim_core::StopCondition;

    fn recorded_trajectory() -> Trajectory {
        // Mutation-heavy so the stream mixes kinds: monomorphic stretches
        // only produce mutation events (all replacements would be
        // self-replacements), so the horizon must cover several sweeps.
        let params = Parameters::new(60, 0.2, 0.02, Some(0.5)).unwrap();
        let mut rng = replicate_rng(0xF11E, 0);
        let stop = StopCondition::at_time(150.0).with_event_cap(50_000);
        let (traj, _) = simulate_recorded(params, &[60], &stop, &mut rng).unwrap();
        assert!(traj.events.len() > 100, "fixture run should produce a real event stream");
        assert!(
            traj.events.iter().any(|e| matches!(e.kind, EventKind::Mutation { .. })),
            "fixture run should contain mutations"
        );
        traj
    }

    #[test]
    fn jsonl_round_trip_preserves_every_bit() {
        let traj = recorded_trajectory();
        let mut buf = Vec::new();
        write_trajectory_jsonl(&mut buf, &traj).unwrap();
        let back = read_trajectory_jsonl(BufReader::new(buf.as_slice())).unwrap();

        assert_eq!(back.params.n, traj.params.n);
        assert_eq!(back.params.s.to_bits(), traj.params.s.to_bits());
        assert_eq!(back.params.mu.to_bits(), traj.params.mu.to_bits());
        assert_eq!(back.params.eta.map(f64::to_bits), traj.params.eta.map(f64::to_bits));
        assert_eq!(back.initial, traj.initial);
        assert_eq!(back.final_time.to_bits(), traj.final_time.to_bits());
        assert_eq!(back.events.len(), traj.events.len());
        for (a, b) in back.events.iter().zip(&traj.events) {
            assert_eq!(a.time.to_bits(), b.time.to_bits());
            assert_eq!(a.kind, b.kind);
        }
        // And the round-tripped trajectory still replays cleanly.
        back.final_state().expect("round-tripped trajectory must replay");
    }

    #[test]
    fn jsonl_reader_reports_the_offending_line() {
        let traj = recorded_trajectory();
        let mut buf = Vec::new();
        write_trajectory_jsonl(&mut buf, &traj).unwrap();
        let mut text = String::from_utf8(buf).unwrap();
        text.push_str("this is not json\n");
        let bad_line = text.lines().count();
        match read_trajectory_jsonl(BufReader::new(text.as_bytes())) {
            Err(JsonlError::Line { line, .. }) => assert_eq!(line, bad_line),
            other => panic!("expected a line error, got {other:?}"),
        }

        match read_trajectory_jsonl(BufReader::new(&b""[..])) {
            Err(JsonlError::Line { line: 1, .. }) => {}
            other => panic!("expected a header error, got {other:?}"),
        }

        let header = r#"{"n":10,"s":0.1,"mu":0.001,"eta":0.5,"initial":[10],"final_time":1.0}"#;
        let stray = format!("{header}\n{{\"t\":0.5,\"kind\":\"mut\",\"i\":0,\"j\":3}}\n");
        match read_trajectory_jsonl(BufReader::new(stray.as_bytes())) {
            Err(JsonlError::Line { line: 2, detail }) => {
                assert!(detail.contains("stray"), "detail was: {detail}")
            }
            other => panic!("expected a stray-j error, got {other:?}"),
        }
        let orphan = format!("{header}\n{{\"t\":0.5,\"kind\":\"repl\",\"i\":0}}\n");
        match read_trajectory_jsonl(BufReader::new(orphan.as_bytes())) {
            Err(JsonlError::Line { line: 2, detail }) => {
                assert!(detail.contains("parent"), "detail was: {detail}")
            }
            other => panic!("expected a missing-parent error, got {other:?}"),
        }
    }

    #[test]
    fn header_only_files_replay_to_the_initial_state() {
        let header = r#"{"n":10,"s":0.1,"mu":0.001,"eta":0.5,"initial":[7,3],"final_time":2.5}"#;
        let text = format!("{header}\n");
        let traj = read_trajectory_jsonl(BufReader::new(text.as_bytes())).unwrap();
        assert!(traj.events.is_empty());
        let final_state = traj.final_state().unwrap();
        assert_eq!(final_state.counts, vec![7, 3]);
        assert_eq!(final_state.time, 2.5);
    }

    #[test]
    fn sweep_csv_blanks_missing_crossings() {
        let rows = vec![
            SweepRow {
                replicate: 0,
                k: 1,
                establishment: Some(12.5),
                takeover_completion: Some(20.0),
                alpha_crossing: Some(15.25),
                count_crossing: None,
                mutation_crossing: None,
                rescaled_increment: Some(0.75),
            },
            SweepRow {
                replicate: 0,
                k: 2,
                establishment: None,
                takeover_completion: None,
                alpha_crossing: None,
                count_crossing: None,
                mutation_crossing: None,
                rescaled_increment: None,
            },
        ];
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(SWEEP_CSV_HEADER));
        assert_eq!(lines.next(), Some("0,1,12.5,20,15.25,,,0.75"));
        assert_eq!(lines.next(), Some("0,2,,,,,,"));
        assert_eq!(lines.next(), None);
    }

    #[test]
    fn sweep_rows_rescale_establishment_increments() {
        let params = Parameters::new(100, 0.1, 1e-3, Some(0.5)).unwrap();
        let mut log = StoppingTimeLog {
            alpha: 0.5,
            establishment: vec![Some(0.0), Some(40.0), None],
            lower_extinction: vec![Some(0.0), None, None],
            alpha_crossing: vec![None, Some(55.0), None],
            beta_crossing: vec![None, None, None],
            mutation_crossing: vec![None, None, None],
        };
        let rows = sweep_rows_from_log(3, &log, &params);
        assert_eq!(rows.len(), 2);
        // N mu s = 100 * 1e-3 * 0.1 = 0.01; increment 40 rescales to 0.4.
        assert!((rows[0].rescaled_increment.unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(rows[0].replicate, 3);
        assert_eq!(rows[1].rescaled_increment, None, "missing endpoint leaves a blank");

        // A missing predecessor also blanks the increment.
        log.establishment = vec![None, Some(40.0), Some(41.0)];
        let rows = sweep_rows_from_log(0, &log, &params);
        assert_eq!(rows[0].rescaled_increment, None);
        assert!(rows[1].rescaled_increment.is_some());
    }

    #[test]
    fn coupling_csv_renders_flags_as_booleans() {
        let rows = vec![CouplingRow {
            construction: "family-upper".into(),
            n: 1000,
            run: 4,
            events_checked: 123_456,
            violations: 0,
            flagged: false,
        }];
        let mut buf = Vec::new();
        write_coupling_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, format!("{COUPLING_CSV_HEADER}\nfamily-upper,1000,4,123456,0,false\n"));
    }

    #[test]
    fn seed_records_switch_to_a_scheme_past_the_cap() {
        match seed_record(42, 3) {
            SeedRecord::Explicit { replicate_seeds } => {
                assert_eq!(
                    replicate_seeds,
                    vec![derive_seed(42, 0), derive_seed(42, 1), derive_seed(42, 2)]
                );
            }
            other => panic!("expected an explicit list, got {other:?}"),
        }
        match seed_record(42, SEED_LIST_CAP + 1) {
            SeedRecord::Scheme { replicates, ref seed_scheme } => {
                assert_eq!(replicates, SEED_LIST_CAP + 1);
                assert!(seed_scheme.contains("derive_seed"));
            }
            other => panic!("expected a scheme record, got {other:?}"),
        }
    }

    #[test]
    fn manifest_json_carries_config_and_outputs() {
        let manifest = RunManifest {
            tool_version: tool_version(),
            command: "simulate".into(),
            config: serde_json::json!({"n": 100}),
            config_sha256: "ab".repeat(32),
            master_seed: 99,
            seeds: seed_record(99, 2),
            outputs: vec!["sweeps.csv".into(), "events.jsonl".into()],
            events_total: 12_345,
            wall_clock_seconds: 1.25,
        };
        let text = manifest_json(&manifest);
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["master_seed"], 99);
        assert_eq!(value["outputs"].as_array().unwrap().len(), 2);
        assert_eq!(value["seeds"]["replicate_seeds"].as_array().unwrap().len(), 2);
        assert_eq!(value["config"]["n"], 100);
        assert!(text.ends_with('\n'));
    }
}
