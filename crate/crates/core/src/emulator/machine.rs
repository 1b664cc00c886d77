//! Interpreters for the three program forms: CFG module, guarded function and
//! executable program. They share the quantum and classical step functions.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::noise::{Chooser, NoiseModel};
use super::state::StateVector;
use super::EmuError;
use crate::ir::*;
use crate::predication::{GItem, GuardedFunction};
use crate::qccd::{op_in_place, phys_qubits, ExecItem, ExecOp, ExecProgram, Placement, TransportStep};

pub const MAX_STEPS: u64 = 50_000_000;
pub const MAX_CALL_DEPTH: usize = 4096;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub executed_transport_steps: u64,
    pub executed_gates: u64,
    pub skipped_blocks: u64,
}

#[derive(Clone, Debug)]
pub struct Machine {
    pub state: StateVector,
    pub results: Vec<bool>,
    pub outputs: Vec<String>,
    pub counters: Counters,
    pub placement: Option<Placement>,
    steps: u64,
}

pub type Regs = HashMap<Vreg, Value>;

impl Machine {
    pub fn new(qubits: u32, results: u32) -> Self {
        Machine {
            state: StateVector::new(qubits as usize),
            results: vec![false; results as usize],
            outputs: Vec::new(),
            counters: Counters::default(),
            placement: None,
            steps: 0,
        }
    }

    fn tick(&mut self) -> Result<(), EmuError> {
        self.steps += 1;
        if self.steps > MAX_STEPS {
            return Err(EmuError::StepLimit(MAX_STEPS));
        }
        Ok(())
    }

    fn result(&self, r: u32) -> Result<bool, EmuError> {
        self.results.get(r as usize).copied().ok_or(EmuError::ResultRange(r))
    }
}

/// Unset registers read as integer zero.
pub fn value(regs: &Regs, o: &Operand) -> Value {
    match o {
        Operand::Reg(v) => regs.get(v).copied().unwrap_or_default(),
        lit => Value::from_literal(lit).unwrap_or_default(),
    }
}

fn render_output(kind: &OutputKind, regs: &Regs, m: &Machine) -> Result<String, EmuError> {
    Ok(match kind {
        OutputKind::ArrayStart => "[".into(),
        OutputKind::ArrayEnd => "]".into(),
        OutputKind::TupleStart => "(".into(),
        OutputKind::TupleEnd => ")".into(),
        OutputKind::Result(r) => format!("r{}", m.result(*r)? as u8),
        OutputKind::Bool(o) => format!("b{}", value(regs, o).truthy() as u8),
        OutputKind::Int(o) => format!("i{}", value(regs, o).as_i64()),
    })
}

/// Executes a classical instruction or output.
pub fn classical(i: &Instruction, regs: &mut Regs, m: &mut Machine) -> Result<(), EmuError> {
    m.tick()?;
    match i {
        Instruction::ReadResult { dst, result } => {
            let b = m.result(*result)?;
            regs.insert(dst.clone(), Value::Bool(b));
        }
        Instruction::BinOp { dst, op, lhs, rhs } => {
            let v = eval_binop(*op, value(regs, lhs), value(regs, rhs));
            regs.insert(dst.clone(), v);
        }
        Instruction::Cmp { dst, op, lhs, rhs } => {
            let v = eval_cmp(*op, value(regs, lhs), value(regs, rhs));
            regs.insert(dst.clone(), Value::Bool(v));
        }
        Instruction::Select {
            dst,
            cond,
            then_val,
            else_val,
        } => {
            let v = if value(regs, cond).truthy() {
                value(regs, then_val)
            } else {
                value(regs, else_val)
            };
            regs.insert(dst.clone(), v);
        }
        Instruction::Output(k) => {
            let s = render_output(k, regs, m)?;
            m.outputs.push(s);
        }
        Instruction::Call { callee, .. } => return Err(EmuError::UnexpectedCall(callee.clone())),
        Instruction::Gate { .. } | Instruction::Measure { .. } | Instruction::Reset { .. } => {
            unreachable!("quantum instruction routed to the classical step")
        }
    }
    Ok(())
}

/// Applies a gate, measurement or reset on resolved qubit indices, followed by its noise.
pub fn quantum(
    i: &Instruction,
    qubits: &[usize],
    regs: &Regs,
    m: &mut Machine,
    noise: &NoiseModel,
    ch: &mut dyn Chooser,
) -> Result<(), EmuError> {
    m.tick()?;
    for &q in qubits {
        if q >= m.state.n {
            return Err(EmuError::QubitRange(q as u32));
        }
    }
    m.counters.executed_gates += 1;
    match i {
        Instruction::Gate { kind, angle, .. } => {
            if !kind.is_known() {
                return Err(EmuError::UnknownGate(kind.name().to_string()));
            }
            let mut theta = angle.as_ref().map(|a| value(regs, a).as_f64());
            if *kind == GateKind::Ry {
                theta = theta.map(|t| t + noise.prep_overrotation);
            }
            m.state.apply_gate(kind, qubits, theta);
            if qubits.len() == 2 {
                if ch.event(noise.p2) {
                    let k = ch.index(15) + 1;
                    m.state.apply_pauli((k / 4) as u8, qubits[0]);
                    m.state.apply_pauli((k % 4) as u8, qubits[1]);
                }
            } else if ch.event(noise.p1) {
                let p = ch.index(3) as u8 + 1;
                m.state.apply_pauli(p, qubits[0]);
            }
        }
        Instruction::Measure { result, .. } => {
            let q = qubits[0];
            if *result as usize >= m.results.len() {
                return Err(EmuError::ResultRange(*result));
            }
            let o = ch.outcome(m.state.prob_one(q).clamp(0.0, 1.0))?;
            m.state.collapse(q, o);
            m.results[*result as usize] = o ^ ch.event(noise.p_meas);
        }
        Instruction::Reset { .. } => {
            let q = qubits[0];
            let o = ch.outcome(m.state.prob_one(q).clamp(0.0, 1.0))?;
            m.state.collapse(q, o);
            m.state.flip_to_zero(q, o);
            if ch.event(noise.p_reset) {
                m.state.apply_pauli(1, q);
            }
        }
        _ => unreachable!("classical instruction routed to the quantum step"),
    }
    Ok(())
}

fn index_qubits(i: &Instruction) -> Result<Vec<usize>, EmuError> {
    i.qubits()
        .into_iter()
        .map(|q| match q {
            QubitRef::Index(x) => Ok(*x as usize),
            QubitRef::Param(v) => Err(EmuError::UnresolvedQubit(v.to_string())),
        })
        .collect()
}

// ---------------------------------------------------------------------------
// CFG interpreter

#[derive(Clone, Debug)]
enum Arg {
    Qubit(u32),
    Val(Value),
}

struct Cfg<'a> {
    module: &'a Module,
    noise: &'a NoiseModel,
}

impl Cfg<'_> {
    fn call(
        &self,
        f: &Function,
        args: Vec<Arg>,
        m: &mut Machine,
        ch: &mut dyn Chooser,
        depth: usize,
    ) -> Result<Option<Value>, EmuError> {
        if depth > MAX_CALL_DEPTH {
            return Err(EmuError::StepLimit(MAX_CALL_DEPTH as u64));
        }
        if args.len() != f.params.len() {
            return Err(EmuError::CallArity(f.name.clone()));
        }
        let mut regs: Regs = HashMap::new();
        let mut qmap: HashMap<Vreg, u32> = HashMap::new();
        for ((p, _), a) in f.params.iter().zip(args) {
            match a {
                Arg::Qubit(q) => {
                    qmap.insert(p.clone(), q);
                }
                Arg::Val(v) => {
                    regs.insert(p.clone(), v);
                }
            }
        }
        let resolve = |q: &QubitRef, qmap: &HashMap<Vreg, u32>| -> Result<u32, EmuError> {
            match q {
                QubitRef::Index(i) => Ok(*i),
                QubitRef::Param(v) => qmap.get(v).copied().ok_or_else(|| EmuError::UnresolvedQubit(v.to_string())),
            }
        };
        let idx = f.block_index();
        let mut cur = 0usize;
        let mut prev: Option<&str> = None;
        loop {
            let b = f.blocks.get(cur).ok_or(EmuError::NoEntry)?;
            if let Some(p) = prev {
                let vals: Vec<(Vreg, Value)> = b
                    .phis
                    .iter()
                    .map(|phi| {
                        let v = phi
                            .incoming
                            .iter()
                            .find(|(_, l)| l == p)
                            .map(|(o, _)| value(&regs, o))
                            .unwrap_or_default();
                        (phi.dst.clone(), v)
                    })
                    .collect();
                regs.extend(vals);
            }
            for i in &b.body {
                match i {
                    Instruction::Call { dst, callee, args } => {
                        let g = self
                            .module
                            .function(callee)
                            .ok_or_else(|| EmuError::UnknownFunction(callee.clone()))?;
                        let mut av = Vec::with_capacity(args.len());
                        for a in args {
                            av.push(match a {
                                CallArg::Qubit(q) => Arg::Qubit(resolve(q, &qmap)?),
                                CallArg::Value(o) => Arg::Val(value(&regs, o)),
                            });
                        }
                        m.tick()?;
                        let r = self.call(g, av, m, ch, depth + 1)?;
                        if let Some(d) = dst {
                            regs.insert(d.clone(), r.unwrap_or_default());
                        }
                    }
                    i if i.is_quantum() => {
                        let qs: Vec<usize> = i
                            .qubits()
                            .into_iter()
                            .map(|q| resolve(q, &qmap).map(|x| x as usize))
                            .collect::<Result<_, _>>()?;
                        quantum(i, &qs, &regs, m, self.noise, ch)?;
                    }
                    i => classical(i, &mut regs, m)?,
                }
            }
            m.tick()?;
            let next = match &b.terminator {
                Terminator::Return(v) => return Ok(v.as_ref().map(|o| value(&regs, o))),
                Terminator::Jump(t) => t,
                Terminator::Branch {
                    cond,
                    then_target,
                    else_target,
                } => {
                    if value(&regs, cond).truthy() {
                        then_target
                    } else {
                        else_target
                    }
                }
            };
            prev = Some(&b.label);
            cur = *idx.get(next.as_str()).ok_or_else(|| EmuError::UnknownBlock(next.clone()))?;
        }
    }
}

pub fn run_module(module: &Module, noise: &NoiseModel, ch: &mut dyn Chooser) -> Result<Machine, EmuError> {
    let f = module.entry_function().ok_or(EmuError::NoEntry)?;
    if !f.params.is_empty() {
        return Err(EmuError::CallArity(f.name.clone()));
    }
    let mut m = Machine::new(module.attrs.required_qubits, module.attrs.required_results);
    Cfg { module, noise }.call(f, Vec::new(), &mut m, ch, 0)?;
    Ok(m)
}

// ---------------------------------------------------------------------------
// Guarded interpreter

pub fn run_guarded(
    gf: &GuardedFunction,
    qubits: u32,
    results: u32,
    noise: &NoiseModel,
    ch: &mut dyn Chooser,
) -> Result<Machine, EmuError> {
    let mut m = Machine::new(qubits, results);
    let mut regs: Regs = HashMap::new();
    for it in &gf.items {
        match it {
            GItem::Op(i) => classical(i, &mut regs, &mut m)?,
            GItem::Block(b) => {
                if !value(&regs, &b.guard).truthy() {
                    m.counters.skipped_blocks += 1;
                    continue;
                }
                for i in &b.body {
                    if i.is_quantum() {
                        let qs = index_qubits(i)?;
                        quantum(i, &qs, &regs, &mut m, noise, ch)?;
                    } else {
                        classical(i, &mut regs, &mut m)?;
                    }
                }
            }
        }
    }
    Ok(m)
}

// ---------------------------------------------------------------------------
// Executable-program interpreter

fn transport(step: &TransportStep, m: &mut Machine, noise: &NoiseModel, ch: &mut dyn Chooser) {
    let p = m.placement.as_mut().expect("exec machine tracks placement");
    p.apply(step);
    m.counters.executed_transport_steps += 1;
    if noise.p_transport > 0.0 {
        let ions: Vec<u32> = p.slots.iter().flatten().copied().collect();
        for q in ions {
            if ch.event(noise.p_transport) {
                m.state.apply_pauli(3, q as usize);
            }
        }
    }
}

pub fn run_exec(p: &ExecProgram, noise: &NoiseModel, ch: &mut dyn Chooser) -> Result<Machine, EmuError> {
    let mut m = Machine::new(p.num_qubits, p.num_results);
    m.placement = Some(p.canonical.clone());
    let mut regs: Regs = HashMap::new();
    for it in &p.items {
        let b = match it {
            ExecItem::Classical(i) => {
                classical(i, &mut regs, &mut m)?;
                continue;
            }
            ExecItem::Block(b) => b,
        };
        let on = value(&regs, &b.guard).truthy();
        if !on {
            m.counters.skipped_blocks += 1;
            if p.conditional_transport {
                continue;
            }
        }
        for op in &b.ops {
            match op {
                ExecOp::Transport(s) => transport(s, &mut m, noise, ch),
                ExecOp::Layer(layer) if on => {
                    let placement = m.placement.as_ref().unwrap();
                    for lo in &layer.ops {
                        if !op_in_place(lo, placement) {
                            return Err(EmuError::ZoneViolation {
                                block: b.label.clone(),
                                op: crate::textir::fmt_instruction(&lo.instr),
                            });
                        }
                    }
                    let mut busy = vec![false; p.num_qubits as usize];
                    for lo in &layer.ops {
                        let qs: Vec<usize> = phys_qubits(&lo.instr).into_iter().map(|q| q as usize).collect();
                        for &q in &qs {
                            busy[q] = true;
                        }
                        quantum(&lo.instr, &qs, &regs, &mut m, noise, ch)?;
                    }
                    if noise.p_idle > 0.0 {
                        for (q, b) in busy.iter().enumerate() {
                            if !b && ch.event(noise.p_idle) {
                                m.state.apply_pauli(3, q);
                            }
                        }
                    }
                }
                ExecOp::Classical(i) if on => classical(i, &mut regs, &mut m)?,
                _ => {}
            }
        }
        for s in &b.epilogue {
            transport(s, &mut m, noise, ch);
        }
    }
    Ok(m)
}
