//! Shot-based execution, noise, and exact outcome enumeration.

pub mod machine;
pub mod noise;
pub mod state;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::Module;
use crate::predication::GuardedFunction;
use crate::qccd::ExecProgram;
use machine::{Counters, Machine};
use noise::{Chooser, NoiseModel, Replay, Sampler};
use state::StateVector;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmuError {
    #[error("zone violation in block {block}: `{op}` operands are not in their gate zone")]
    ZoneViolation { block: String, op: String },
    #[error("more than {0} measurement branch points; enumeration refused")]
    TooManyBranches(usize),
    #[error("invalid noise model: {0}")]
    BadNoise(String),
    #[error("unknown gate `{0}`")]
    UnknownGate(String),
    #[error("result slot r{0} out of range")]
    ResultRange(u32),
    #[error("qubit q{0} out of range")]
    QubitRange(u32),
    #[error("qubit operand {0} is unresolved")]
    UnresolvedQubit(String),
    #[error("program has no entry function")]
    NoEntry,
    #[error("call to unknown function @{0}")]
    UnknownFunction(String),
    #[error("jump to unknown block {0}")]
    UnknownBlock(String),
    #[error("argument count mismatch calling @{0}")]
    CallArity(String),
    #[error("call to @{0} in a flattened program")]
    UnexpectedCall(String),
    #[error("execution exceeded {0} steps")]
    StepLimit(u64),
    #[error("thread pool: {0}")]
    Threads(String),
}

/// Any program form the emulator can run.
#[derive(Clone, Copy, Debug)]
pub enum Program<'a> {
    Cfg(&'a Module),
    Guarded {
        func: &'a GuardedFunction,
        qubits: u32,
        results: u32,
    },
    Exec(&'a ExecProgram),
}

impl Program<'_> {
    pub fn run(&self, noise: &NoiseModel, ch: &mut dyn Chooser) -> Result<Machine, EmuError> {
        match *self {
            Program::Cfg(m) => machine::run_module(m, noise, ch),
            Program::Guarded { func, qubits, results } => machine::run_guarded(func, qubits, results, noise, ch),
            Program::Exec(p) => machine::run_exec(p, noise, ch),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotResult {
    pub outputs: Vec<String>,
    pub results: Vec<bool>,
    pub counters: Counters,
    pub seed: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-shot seed derived from the master seed and the shot index.
pub fn shot_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

pub fn run_shot(p: Program<'_>, noise: &NoiseModel, seed: u64) -> Result<ShotResult, EmuError> {
    let mut s = Sampler {
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let m = p.run(noise, &mut s)?;
    Ok(ShotResult {
        outputs: m.outputs,
        results: m.results,
        counters: m.counters,
        seed,
    })
}

/// Runs `n` shots on `jobs` threads; results are ordered by shot index and
/// do not depend on `jobs`.
pub fn run_shots(
    p: Program<'_>,
    noise: &NoiseModel,
    n: usize,
    master_seed: u64,
    jobs: usize,
) -> Result<Vec<ShotResult>, EmuError> {
    noise.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| EmuError::Threads(e.to_string()))?;
    pool.install(|| {
        (0..n)
            .into_par_iter()
            .map(|i| run_shot(p, noise, shot_seed(master_seed, i as u64)))
            .collect()
    })
}

pub const DEFAULT_MAX_BRANCHES: usize = 20;

/// One measurement history with its exact probability and final state.
#[derive(Clone, Debug)]
pub struct Leaf {
    pub prob: f64,
    pub outcomes: Vec<bool>,
    pub outputs: Vec<String>,
    pub results: Vec<bool>,
    pub counters: Counters,
    pub state: StateVector,
}

impl Leaf {
    pub fn key(&self) -> String {
        outcome_key(&self.outputs, &self.results)
    }
}

/// Canonical record used to compare distributions: outputs then result slots.
pub fn outcome_key(outputs: &[String], results: &[bool]) -> String {
    let bits: String = results.iter().map(|&b| if b { '1' } else { '0' }).collect();
    format!("{}|{}", outputs.join(" "), bits)
}

/// Depth-first enumeration of every noiseless measurement history.
pub fn enumerate_leaves(p: Program<'_>, max_branches: usize) -> Result<Vec<Leaf>, EmuError> {
    let noise = NoiseModel::noiseless();
    let mut stack: Vec<Vec<bool>> = vec![Vec::new()];
    let mut leaves = Vec::new();
    while let Some(prefix) = stack.pop() {
        let mut r = Replay::new(prefix, max_branches);
        let m = p.run(&noise, &mut r)?;
        // later branch points first so the search stays depth-first
        stack.append(&mut r.pending);
        if r.prob > 0.0 {
            leaves.push(Leaf {
                prob: r.prob,
                outcomes: r.taken,
                outputs: m.outputs,
                results: m.results,
                counters: m.counters,
                state: m.state,
            });
        }
    }
    Ok(leaves)
}

/// Exact outcome distribution keyed by [`outcome_key`].
pub fn enumerate_outcomes(p: Program<'_>) -> Result<BTreeMap<String, f64>, EmuError> {
    let mut out = BTreeMap::new();
    for l in enumerate_leaves(p, DEFAULT_MAX_BRANCHES)? {
        *out.entry(l.key()).or_insert(0.0) += l.prob;
    }
    Ok(out)
}

/// Largest pointwise probability difference between two distributions.
pub fn distribution_distance(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> f64 {
    a.keys()
        .chain(b.keys())
        .map(|k| (a.get(k).copied().unwrap_or(0.0) - b.get(k).copied().unwrap_or(0.0)).abs())
        .fold(0.0, f64::max)
}
