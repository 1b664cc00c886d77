//! The standard compile pipeline from a parsed module to an executable program.

use std::str::FromStr;

use thiserror::Error;

use crate::ir::*;
use crate::passes::{default_rules, flatten, fold_constants, peephole, FlattenConfig, PassError};
use crate::predication::{if_convert, GuardedFunction, PredError};
use crate::qccd::{lower, ExecProgram, QccdError, TransportMode, TrapLayout};
use crate::regalloc::{allocate, rewrite, Allocation, RegallocError, DEFAULT_REGISTERS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PassName {
    Fold,
    Flatten,
    Peephole,
}

impl FromStr for PassName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fold" => Ok(PassName::Fold),
            "flatten" => Ok(PassName::Flatten),
            "peephole" => Ok(PassName::Peephole),
            _ => Err(format!("unknown pass `{s}` (expected fold|flatten|peephole)")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CompileOptions {
    pub passes: Vec<PassName>,
    pub flatten: FlattenConfig,
    pub registers: usize,
    /// Defaults to [`TrapLayout::default_for`] the module's qubit count.
    pub trap: Option<TrapLayout>,
    pub mode: TransportMode,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions {
            passes: vec![PassName::Fold, PassName::Flatten, PassName::Peephole],
            flatten: FlattenConfig::default(),
            registers: DEFAULT_REGISTERS,
            trap: None,
            mode: TransportMode::Conditional,
        }
    }
}

#[derive(Debug, Error)]
pub enum CompileError {
    #[error("validation failed:\n{0}")]
    Validation(Diagnostics),
    #[error(transparent)]
    Pass(#[from] PassError),
    #[error(transparent)]
    Pred(#[from] PredError),
    #[error(transparent)]
    Regalloc(#[from] RegallocError),
    #[error(transparent)]
    Qccd(#[from] QccdError),
}

#[derive(Clone, Debug)]
pub struct Compiled {
    /// Module after the optimization passes.
    pub module: Module,
    pub warnings: Diagnostics,
    pub guarded: GuardedFunction,
    pub alloc: Allocation,
    /// Guarded form over physical registers.
    pub allocated: GuardedFunction,
    pub exec: ExecProgram,
}

impl Compiled {
    /// Basic blocks of the entry function after the passes.
    pub fn block_count(&self) -> usize {
        self.module.entry_function().map_or(0, |f| f.blocks.len())
    }

    pub fn colors_used(&self) -> usize {
        self.alloc.regfile.colors_used()
    }
}

pub fn run_passes(module: &Module, opts: &CompileOptions) -> Result<Module, CompileError> {
    let mut m = module.clone();
    for p in &opts.passes {
        m = match p {
            PassName::Fold => fold_constants(&m),
            PassName::Flatten => flatten(&m, opts.flatten)?,
            PassName::Peephole => peephole(&m, &default_rules()),
        };
    }
    Ok(m)
}

pub fn compile(module: &Module, opts: &CompileOptions) -> Result<Compiled, CompileError> {
    let d = validate_profile(module, Strictness::Lenient);
    if d.has_errors() {
        return Err(CompileError::Validation(d));
    }
    let m = run_passes(module, opts)?;
    let warnings = validate_profile(&m, Strictness::Strict);
    if warnings.has_errors() {
        return Err(CompileError::Validation(warnings));
    }
    let entry = m
        .entry_function()
        .ok_or_else(|| PassError::NoEntry(m.entry.clone()))?;
    let guarded = if_convert(entry)?;
    let alloc = allocate(&guarded, opts.registers)?;
    let allocated = rewrite(&guarded, &alloc.regfile);
    let trap = opts
        .trap
        .clone()
        .unwrap_or_else(|| TrapLayout::default_for(m.attrs.required_qubits as usize));
    let exec = lower(&allocated, &m.attrs, &trap, opts.mode, opts.registers)?;
    Ok(Compiled {
        module: m,
        warnings,
        guarded,
        alloc,
        allocated,
        exec,
    })
}
