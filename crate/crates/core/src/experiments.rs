//! Distillation and repeat-until-success programs, shot statistics and reports.

use std::f64::consts::FRAC_PI_4;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::emulator::noise::NoiseModel;
use crate::emulator::{run_shots, EmuError, Program, ShotResult};
use crate::ir::Module;
use crate::pipeline::{compile, CompileError, CompileOptions, Compiled};
use crate::textir::{fmt_float, parse, ParseError};

/// Preparation angle of the magic state, arccos(1/sqrt 3).
pub const PHI: f64 = 0.9553166181245093;
pub const THETA: f64 = FRAC_PI_4;
/// Final target correction, 2 atan 2.
pub const ALPHA: f64 = 2.214297435588181;

/// Decoder of the five-qubit code: output on q0, syndrome on q1..q4.
pub const MSD_DECODER: &str = "\
cx q0, q1
cx q0, q2
cx q0, q3
cx q0, q4
cx q1, q0
cx q2, q0
cx q3, q0
cx q4, q0
s q3
s q4
cx q1, q3
cx q3, q1
cx q1, q3
cx q1, q4
s q2
h q2
s q3
h q3
s q4
h q4
cx q2, q1
cx q3, q1
cx q4, q1
h q2
h q4
cx q2, q4
s q3
h q3
h q4
cx q3, q2
cx q4, q2
s q3
cx q3, q4
s q4
x q2
x q3
x q4
";

/// Clifford applied to the output qubit after a zero syndrome.
pub const MSD_CORRECTION: &str = "s q0\nh q0\nsdg q0\n";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Basis {
    X,
    Y,
    Z,
}

impl FromStr for Basis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "X" | "x" => Ok(Basis::X),
            "Y" | "y" => Ok(Basis::Y),
            "Z" | "z" => Ok(Basis::Z),
            _ => Err(format!("unknown basis `{s}` (expected X|Y|Z)")),
        }
    }
}

impl std::fmt::Display for Basis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Style {
    Loop,
    Recursion,
}

impl FromStr for Style {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "loop" => Ok(Style::Loop),
            "recursion" => Ok(Style::Recursion),
            _ => Err(format!("unknown style `{s}` (expected loop|recursion)")),
        }
    }
}

impl std::fmt::Display for Style {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Style::Loop => "loop",
            Style::Recursion => "recursion",
        })
    }
}

/// Gates that rotate `basis` onto Z before a computational measurement.
fn unprepare(basis: Basis, q: u32) -> String {
    match basis {
        Basis::X => format!("h q{q}\n"),
        Basis::Y => format!("sdg q{q}\nh q{q}\n"),
        Basis::Z => String::new(),
    }
}

/// Gates that take |0> to the +1 eigenstate of `basis`.
fn prepare(basis: Basis, q: u32) -> String {
    match basis {
        Basis::X => format!("h q{q}\n"),
        Basis::Y => format!("h q{q}\ns q{q}\n"),
        Basis::Z => String::new(),
    }
}

fn magic_prep(q: u32) -> String {
    format!("ry({}) q{q}\nrz({}) q{q}\n", fmt_float(PHI), fmt_float(THETA))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MsdConfig {
    pub limit: u32,
    pub basis: Basis,
}

/// Distillation with up to `limit` attempts. Outputs the success flag, the
/// attempt count and the output-qubit measurement.
pub fn msd_source(cfg: MsdConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "module msd\nattrs required_qubits=5 required_results=5\n\nfunc @main() {{\nblock entry:");
    if cfg.limit == 0 {
        s += &magic_prep(0);
        s += &unprepare(cfg.basis, 0);
        s += "mz q0 -> r0\noutput bool true\noutput int 0\noutput result r0\nret\n}\n";
        return s;
    }
    let _ = writeln!(s, "repeat {} (%done = false, %att = 0) {{", cfg.limit);
    s += "br %done, skip, go\nblock go:\n";
    for q in 0..5 {
        let _ = writeln!(s, "reset q{q}");
        s += &magic_prep(q);
    }
    s += MSD_DECODER;
    for q in 1..5 {
        let _ = writeln!(s, "mz q{q} -> r{q}");
    }
    s += "%s1 = read_result r1\n%s2 = read_result r2\n%s3 = read_result r3\n%s4 = read_result r4\n";
    s += "%o12 = or %s1, %s2\n%o34 = or %s3, %s4\n%bad = or %o12, %o34\n";
    s += "%ok = cmp eq %bad, 0\n%na = add %att, 1\njmp join\nblock skip:\njmp join\n";
    s += "block join:\n%d2 = phi [%ok, go], [true, skip]\n";
    s += "%a2 = phi [%na, go], [%att, skip]\nyield %d2, %a2\n}\n";
    s += "br %done, correct, measure\nblock correct:\n";
    s += MSD_CORRECTION;
    s += "jmp measure\nblock measure:\n";
    s += &unprepare(cfg.basis, 0);
    s += "mz q0 -> r0\noutput bool %done\noutput int %att\noutput result r0\nret\n}\n";
    s
}

pub fn build_msd(cfg: MsdConfig) -> Module {
    parse(&msd_source(cfg)).expect("distillation source parses")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RusConfig {
    pub limit: u32,
    pub basis: Basis,
    pub style: Style,
}

/// One attempt: hard reset, target preparation, both stages. Leaves the
/// stage-one outcome in `%m0` and branches to `stage2` or `fail`.
fn rus_round(basis: Basis) -> String {
    let mut s = String::from("reset q0\nreset q1\nreset q2\n");
    s += &prepare(basis, 2);
    s += "t q2\nz q2\nh q0\nh q1\ntdg q0\ncx q1, q0\nt q0\nh q0\nmz q0 -> r0\n%m0 = read_result r0\n";
    s
}

const RUS_STAGE2: &str = "cx q2, q1\nt q1\nh q1\nmz q1 -> r1\n%m1 = read_result r1\n";

fn rus_finale(basis: Basis) -> String {
    let mut s = format!("rz({}) q2\n", fmt_float(ALPHA));
    s += &unprepare(basis, 2);
    s += "mz q2 -> r2\n";
    s
}

/// Repeat-until-success with at most `limit` attempts. Outputs the success
/// flag, the attempt count and the target measurement.
pub fn rus_source(cfg: RusConfig) -> String {
    let n = cfg.limit.max(1);
    let mut s = String::from("module rus\nattrs required_qubits=3 required_results=3\n\n");
    match cfg.style {
        Style::Loop => {
            s += "func @main() {\nblock entry:\n";
            let _ = writeln!(s, "repeat {n} (%done = false, %att = 0) {{");
            s += "br %done, skip, go\nblock go:\n";
            s += &rus_round(cfg.basis);
            s += "%na = add %att, 1\nbr %m0, join, stage2\nblock stage2:\n";
            s += RUS_STAGE2;
            s += "%ok = cmp eq %m1, 0\njmp join\nblock skip:\njmp join\n";
            s += "block join:\n%d2 = phi [false, go], [%ok, stage2], [true, skip]\n";
            s += "%a2 = phi [%na, go], [%na, stage2], [%att, skip]\nyield %d2, %a2\n}\n";
            s += &rus_finale(cfg.basis);
            s += "output bool %done\noutput int %att\noutput result r2\nret\n}\n";
        }
        Style::Recursion => {
            s += "func @main() {\nblock entry:\n";
            let _ = writeln!(s, "%k = call @rus({n})");
            s += "%ok = cmp gt %k, 0\n";
            let _ = writeln!(s, "%att = select %ok, %k, {n}");
            s += &rus_finale(cfg.basis);
            s += "output bool %ok\noutput int %att\noutput result r2\nret\n}\n\n";
            s += "func @rus(%n: int) -> int {\nblock entry:\n";
            s += &rus_round(cfg.basis);
            s += "br %m0, fail, stage2\nblock stage2:\n";
            s += RUS_STAGE2;
            s += "br %m1, fail, win\nblock win:\n";
            let _ = writeln!(s, "%k = sub {}, %n\nret %k", n + 1);
            s += "block fail:\n%more = cmp gt %n, 1\nbr %more, again, giveup\n";
            s += "block again:\n%n1 = sub %n, 1\n%r = call @rus(%n1)\nret %r\n";
            s += "block giveup:\nret 0\n}\n";
        }
    }
    s
}

pub fn build_rus(cfg: RusConfig) -> Module {
    parse(&rus_source(cfg)).expect("repeat-until-success source parses")
}

// ---------------------------------------------------------------------------
// Statistics

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("no shots to summarize")]
    EmptyInput,
    #[error("shot output record is malformed: {0:?}")]
    BadRecord(Vec<String>),
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Emulator(#[from] EmuError),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

/// Success flag, attempt count and final bit of one shot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShotRecord {
    pub success: bool,
    pub attempts: i64,
    pub bit: bool,
}

pub fn parse_record(outputs: &[String]) -> Result<ShotRecord, ExperimentError> {
    let bad = || ExperimentError::BadRecord(outputs.to_vec());
    if outputs.len() != 3 {
        return Err(bad());
    }
    let success = match outputs[0].as_str() {
        "b1" => true,
        "b0" => false,
        _ => return Err(bad()),
    };
    let attempts = outputs[1].strip_prefix('i').and_then(|x| x.parse().ok()).ok_or_else(bad)?;
    let bit = match outputs[2].as_str() {
        "r1" => true,
        "r0" => false,
        _ => return Err(bad()),
    };
    Ok(ShotRecord {
        success,
        attempts,
        bit,
    })
}

/// (N0 - N1) / N over the given bits.
pub fn expectation(bits: impl IntoIterator<Item = bool>) -> Option<f64> {
    let (mut n0, mut n1) = (0usize, 0usize);
    for b in bits {
        if b {
            n1 += 1;
        } else {
            n0 += 1;
        }
    }
    let n = n0 + n1;
    (n > 0).then(|| (n0 as f64 - n1 as f64) / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub style: String,
    pub basis: Basis,
    pub limit: u32,
    pub shots: usize,
    pub success_count: usize,
    pub success_fraction: f64,
    /// Expectation of the measured basis over successful shots.
    pub expectation_post: Option<f64>,
    /// Expectation of the measured basis over all shots.
    pub expectation_all: Option<f64>,
    /// Fraction of successful shots whose target returned to its prepared state.
    pub survival: Option<f64>,
    pub avg_transport: f64,
    pub blocks: usize,
    pub colors: usize,
    /// Attempt counts of successful shots.
    #[serde(skip)]
    pub attempts: Vec<i64>,
}

#[derive(Clone, Debug)]
pub struct ProgramMeta {
    pub experiment: String,
    pub style: Style,
    pub basis: Basis,
    pub limit: u32,
    pub blocks: usize,
    pub colors: usize,
}

pub fn summarize(shots: &[ShotResult], meta: &ProgramMeta) -> Result<ExperimentReport, ExperimentError> {
    if shots.is_empty() {
        return Err(ExperimentError::EmptyInput);
    }
    let recs: Vec<ShotRecord> = shots.iter().map(|s| parse_record(&s.outputs)).collect::<Result<_, _>>()?;
    let ok: Vec<&ShotRecord> = recs.iter().filter(|r| r.success).collect();
    let survival = (meta.experiment == "rus" && !ok.is_empty())
        .then(|| ok.iter().filter(|r| !r.bit).count() as f64 / ok.len() as f64);
    Ok(ExperimentReport {
        experiment: meta.experiment.clone(),
        style: meta.style.to_string(),
        basis: meta.basis,
        limit: meta.limit,
        shots: shots.len(),
        success_count: ok.len(),
        success_fraction: ok.len() as f64 / shots.len() as f64,
        expectation_post: expectation(ok.iter().map(|r| r.bit)),
        expectation_all: expectation(recs.iter().map(|r| r.bit)),
        survival,
        avg_transport: shots.iter().map(|s| s.counters.executed_transport_steps as f64).sum::<f64>() / shots.len() as f64,
        blocks: meta.blocks,
        colors: meta.colors,
        attempts: ok.iter().map(|r| r.attempts).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Reference {
    MsdCumulative(u32),
    MsdExpectation,
    RusSurvival,
}

pub fn ideal_reference(r: Reference) -> f64 {
    match r {
        Reference::MsdCumulative(n) => 1.0 - (5.0f64 / 6.0).powi(n as i32),
        Reference::MsdExpectation => 1.0 / 3.0f64.sqrt(),
        Reference::RusSurvival => 1.0,
    }
}

// ---------------------------------------------------------------------------
// Running

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Experiment {
    Msd(MsdConfig),
    Rus(RusConfig),
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Msd(_) => "msd",
            Experiment::Rus(_) => "rus",
        }
    }

    pub fn source(&self) -> String {
        match *self {
            Experiment::Msd(c) => msd_source(c),
            Experiment::Rus(c) => rus_source(c),
        }
    }

    pub fn module(&self) -> Module {
        match *self {
            Experiment::Msd(c) => build_msd(c),
            Experiment::Rus(c) => build_rus(c),
        }
    }

    pub fn meta(&self, compiled: &Compiled) -> ProgramMeta {
        let (style, basis, limit) = match *self {
            Experiment::Msd(c) => (Style::Loop, c.basis, c.limit),
            Experiment::Rus(c) => (c.style, c.basis, c.limit),
        };
        ProgramMeta {
            experiment: self.name().to_string(),
            style,
            basis,
            limit,
            blocks: compiled.block_count(),
            colors: compiled.colors_used(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunSettings {
    pub shots: usize,
    pub seed: u64,
    pub jobs: usize,
    pub noise: NoiseModel,
    pub compile: CompileOptions,
}

pub struct ExperimentRun {
    pub compiled: Compiled,
    pub shots: Vec<ShotResult>,
    pub report: ExperimentReport,
}

pub fn run_experiment(e: Experiment, s: &RunSettings) -> Result<ExperimentRun, ExperimentError> {
    let compiled = compile(&e.module(), &s.compile)?;
    let shots = run_shots(Program::Exec(&compiled.exec), &s.noise, s.shots, s.seed, s.jobs)?;
    let report = summarize(&shots, &e.meta(&compiled))?;
    Ok(ExperimentRun {
        compiled,
        shots,
        report,
    })
}

// ---------------------------------------------------------------------------
// Report files

pub const CSV_HEADER: [&str; 13] = [
    "experiment",
    "style",
    "basis",
    "limit",
    "shots",
    "success_fraction",
    "exp_x",
    "exp_y",
    "exp_z",
    "survival",
    "avg_transport",
    "blocks",
    "colors",
];

/// One row of the summary table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub experiment: String,
    pub style: String,
    pub basis: String,
    pub limit: u32,
    pub shots: usize,
    pub success_fraction: f64,
    pub exp_x: Option<f64>,
    pub exp_y: Option<f64>,
    pub exp_z: Option<f64>,
    pub survival: Option<f64>,
    pub avg_transport: f64,
    pub blocks: usize,
    pub colors: usize,
}

impl From<&ExperimentReport> for ReportRow {
    fn from(r: &ExperimentReport) -> Self {
        let e = |b: Basis| if r.basis == b { r.expectation_post } else { None };
        ReportRow {
            experiment: r.experiment.clone(),
            style: r.style.clone(),
            basis: r.basis.to_string(),
            limit: r.limit,
            shots: r.shots,
            success_fraction: r.success_fraction,
            exp_x: e(Basis::X),
            exp_y: e(Basis::Y),
            exp_z: e(Basis::Z),
            survival: r.survival,
            avg_transport: r.avg_transport,
            blocks: r.blocks,
            colors: r.colors,
        }
    }
}

pub fn rows_to_csv(rows: &[ReportRow]) -> Result<String, csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn rows_from_csv(text: &str) -> Result<Vec<ReportRow>, csv::Error> {
    csv::Reader::from_reader(text.as_bytes()).deserialize().collect()
}

pub fn rows_to_json(rows: &[ReportRow]) -> String {
    serde_json::to_string_pretty(rows).expect("rows serialize")
}

/// Concatenates rows and orders them by experiment, style, basis and limit.
pub fn merge_rows(mut rows: Vec<ReportRow>) -> Vec<ReportRow> {
    rows.sort_by(|a, b| {
        (&a.experiment, &a.style, &a.basis, a.limit).cmp(&(&b.experiment, &b.style, &b.basis, b.limit))
    });
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expectation_examples() {
        assert_eq!(expectation([false, false, true, true]), Some(0.0));
        assert_eq!(expectation([false]), Some(1.0));
        assert_eq!(expectation(Vec::new()), None);
    }

    #[test]
    fn references() {
        assert!((ideal_reference(Reference::MsdCumulative(1)) - 1.0 / 6.0).abs() < 1e-12);
        assert!((ideal_reference(Reference::MsdCumulative(6)) - 0.665).abs() < 1e-3);
        assert!((ideal_reference(Reference::MsdExpectation) - 0.57735).abs() < 1e-5);
        assert!((ALPHA - 2.0 * 2f64.atan()).abs() < 1e-15);
        assert!((PHI - (1.0 / 3f64.sqrt()).acos()).abs() < 1e-15);
    }

    #[test]
    fn builders_parse() {
        for limit in 0..4 {
            for basis in [Basis::X, Basis::Y, Basis::Z] {
                build_msd(MsdConfig { limit, basis });
            }
        }
        for limit in 1..4 {
            for style in [Style::Loop, Style::Recursion] {
                build_rus(RusConfig {
                    limit,
                    basis: Basis::X,
                    style,
                });
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let row = ReportRow {
            experiment: "msd".into(),
            style: "loop".into(),
            basis: "X".into(),
            limit: 2,
            shots: 10,
            success_fraction: 0.3,
            exp_x: Some(0.5),
            exp_y: None,
            exp_z: None,
            survival: None,
            avg_transport: 1.25,
            blocks: 7,
            colors: 3,
        };
        let text = rows_to_csv(std::slice::from_ref(&row)).unwrap();
        assert!(text.starts_with(&CSV_HEADER.join(",")));
        assert_eq!(rows_from_csv(&text).unwrap(), vec![row]);
    }
}
