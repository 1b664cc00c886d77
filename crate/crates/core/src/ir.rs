//! Core IR: modules, functions, blocks, instructions, and the CFG view.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// SSA virtual register, identified by name (without the leading `%`).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Vreg(pub String);

impl Vreg {
    pub fn new(s: impl Into<String>) -> Self {
        Vreg(s.into())
    }
}

impl fmt::Display for Vreg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "%{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Operand {
    Reg(Vreg),
    Int(i64),
    Bool(bool),
    Float(f64),
}

impl Operand {
    pub fn reg(name: &str) -> Self {
        Operand::Reg(Vreg::new(name))
    }

    pub fn as_reg(&self) -> Option<&Vreg> {
        match self {
            Operand::Reg(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_literal(&self) -> bool {
        !matches!(self, Operand::Reg(_))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QubitRef {
    Index(u32),
    /// A qubit-typed function parameter; resolved by inlining.
    Param(Vreg),
}

impl QubitRef {
    pub fn index(&self) -> Option<u32> {
        match self {
            QubitRef::Index(i) => Some(*i),
            QubitRef::Param(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GateKind {
    X,
    Y,
    Z,
    H,
    S,
    Sdg,
    T,
    Tdg,
    Rx,
    Ry,
    Rz,
    Cx,
    /// Anything outside the supported gate set; rejected by validation.
    Other(String),
}

impl GateKind {
    pub fn from_name(s: &str) -> GateKind {
        match s {
            "x" => GateKind::X,
            "y" => GateKind::Y,
            "z" => GateKind::Z,
            "h" => GateKind::H,
            "s" => GateKind::S,
            "sdg" => GateKind::Sdg,
            "t" => GateKind::T,
            "tdg" => GateKind::Tdg,
            "rx" => GateKind::Rx,
            "ry" => GateKind::Ry,
            "rz" => GateKind::Rz,
            "cx" => GateKind::Cx,
            other => GateKind::Other(other.to_string()),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            GateKind::X => "x",
            GateKind::Y => "y",
            GateKind::Z => "z",
            GateKind::H => "h",
            GateKind::S => "s",
            GateKind::Sdg => "sdg",
            GateKind::T => "t",
            GateKind::Tdg => "tdg",
            GateKind::Rx => "rx",
            GateKind::Ry => "ry",
            GateKind::Rz => "rz",
            GateKind::Cx => "cx",
            GateKind::Other(s) => s,
        }
    }

    pub fn arity(&self) -> Option<usize> {
        match self {
            GateKind::Cx => Some(2),
            GateKind::Other(_) => None,
            _ => Some(1),
        }
    }

    pub fn takes_angle(&self) -> bool {
        matches!(self, GateKind::Rx | GateKind::Ry | GateKind::Rz)
    }

    pub fn is_known(&self) -> bool {
        !matches!(self, GateKind::Other(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinOpKind {
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
}

impl BinOpKind {
    pub fn name(self) -> &'static str {
        match self {
            BinOpKind::Add => "add",
            BinOpKind::Sub => "sub",
            BinOpKind::Mul => "mul",
            BinOpKind::And => "and",
            BinOpKind::Or => "or",
            BinOpKind::Xor => "xor",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "add" => BinOpKind::Add,
            "sub" => BinOpKind::Sub,
            "mul" => BinOpKind::Mul,
            "and" => BinOpKind::And,
            "or" => BinOpKind::Or,
            "xor" => BinOpKind::Xor,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpKind {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpKind {
    pub fn name(self) -> &'static str {
        match self {
            CmpKind::Eq => "eq",
            CmpKind::Ne => "ne",
            CmpKind::Lt => "lt",
            CmpKind::Le => "le",
            CmpKind::Gt => "gt",
            CmpKind::Ge => "ge",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "eq" => CmpKind::Eq,
            "ne" => CmpKind::Ne,
            "lt" => CmpKind::Lt,
            "le" => CmpKind::Le,
            "gt" => CmpKind::Gt,
            "ge" => CmpKind::Ge,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum OutputKind {
    ArrayStart,
    ArrayEnd,
    TupleStart,
    TupleEnd,
    Result(u32),
    /// Records a classical boolean (e.g. a success flag).
    Bool(Operand),
    /// Records a classical integer (e.g. an attempt count).
    Int(Operand),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum CallArg {
    Qubit(QubitRef),
    Value(Operand),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Instruction {
    Gate {
        kind: GateKind,
        qubits: Vec<QubitRef>,
        angle: Option<Operand>,
    },
    Measure {
        qubit: QubitRef,
        result: u32,
    },
    Reset {
        qubit: QubitRef,
    },
    ReadResult {
        dst: Vreg,
        result: u32,
    },
    BinOp {
        dst: Vreg,
        op: BinOpKind,
        lhs: Operand,
        rhs: Operand,
    },
    Cmp {
        dst: Vreg,
        op: CmpKind,
        lhs: Operand,
        rhs: Operand,
    },
    /// `dst = cond ? a : b`. Produced by if-conversion; also accepted in source.
    Select {
        dst: Vreg,
        cond: Operand,
        then_val: Operand,
        else_val: Operand,
    },
    Output(OutputKind),
    Call {
        dst: Option<Vreg>,
        callee: String,
        args: Vec<CallArg>,
    },
}

impl Instruction {
    pub fn gate(kind: GateKind, qubits: &[u32]) -> Self {
        Instruction::Gate {
            kind,
            qubits: qubits.iter().map(|&q| QubitRef::Index(q)).collect(),
            angle: None,
        }
    }

    pub fn rot(kind: GateKind, q: u32, angle: f64) -> Self {
        Instruction::Gate {
            kind,
            qubits: vec![QubitRef::Index(q)],
            angle: Some(Operand::Float(angle)),
        }
    }

    pub fn def(&self) -> Option<&Vreg> {
        match self {
            Instruction::ReadResult { dst, .. }
            | Instruction::BinOp { dst, .. }
            | Instruction::Cmp { dst, .. }
            | Instruction::Select { dst, .. } => Some(dst),
            Instruction::Call { dst, .. } => dst.as_ref(),
            _ => None,
        }
    }

    /// Operands read by this instruction, in source order.
    pub fn operands(&self) -> Vec<&Operand> {
        match self {
            Instruction::Gate { angle, .. } => angle.iter().collect(),
            Instruction::BinOp { lhs, rhs, .. } | Instruction::Cmp { lhs, rhs, .. } => {
                vec![lhs, rhs]
            }
            Instruction::Select {
                cond,
                then_val,
                else_val,
                ..
            } => vec![cond, then_val, else_val],
            Instruction::Output(OutputKind::Bool(o)) | Instruction::Output(OutputKind::Int(o)) => {
                vec![o]
            }
            Instruction::Call { args, .. } => args
                .iter()
                .filter_map(|a| match a {
                    CallArg::Value(o) => Some(o),
                    CallArg::Qubit(_) => None,
                })
                .collect(),
            _ => vec![],
        }
    }

    pub fn operands_mut(&mut self) -> Vec<&mut Operand> {
        match self {
            Instruction::Gate { angle, .. } => angle.iter_mut().collect(),
            Instruction::BinOp { lhs, rhs, .. } | Instruction::Cmp { lhs, rhs, .. } => {
                vec![lhs, rhs]
            }
            Instruction::Select {
                cond,
                then_val,
                else_val,
                ..
            } => vec![cond, then_val, else_val],
            Instruction::Output(OutputKind::Bool(o)) | Instruction::Output(OutputKind::Int(o)) => {
                vec![o]
            }
            Instruction::Call { args, .. } => args
                .iter_mut()
                .filter_map(|a| match a {
                    CallArg::Value(o) => Some(o),
                    CallArg::Qubit(_) => None,
                })
                .collect(),
            _ => vec![],
        }
    }

    pub fn qubits(&self) -> Vec<&QubitRef> {
        match self {
            Instruction::Gate { qubits, .. } => qubits.iter().collect(),
            Instruction::Measure { qubit, .. } | Instruction::Reset { qubit } => vec![qubit],
            Instruction::Call { args, .. } => args
                .iter()
                .filter_map(|a| match a {
                    CallArg::Qubit(q) => Some(q),
                    CallArg::Value(_) => None,
                })
                .collect(),
            _ => vec![],
        }
    }

    pub fn qubits_mut(&mut self) -> Vec<&mut QubitRef> {
        match self {
            Instruction::Gate { qubits, .. } => qubits.iter_mut().collect(),
            Instruction::Measure { qubit, .. } | Instruction::Reset { qubit } => vec![qubit],
            Instruction::Call { args, .. } => args
                .iter_mut()
                .filter_map(|a| match a {
                    CallArg::Qubit(q) => Some(q),
                    CallArg::Value(_) => None,
                })
                .collect(),
            _ => vec![],
        }
    }

    pub fn result_slot(&self) -> Option<u32> {
        match self {
            Instruction::Measure { result, .. }
            | Instruction::ReadResult { result, .. }
            | Instruction::Output(OutputKind::Result(result)) => Some(*result),
            _ => None,
        }
    }

    pub fn is_quantum(&self) -> bool {
        matches!(
            self,
            Instruction::Gate { .. } | Instruction::Measure { .. } | Instruction::Reset { .. }
        )
    }

    /// Classical instruction without side effects beyond defining `dst`.
    pub fn is_pure(&self) -> bool {
        matches!(
            self,
            Instruction::ReadResult { .. }
                | Instruction::BinOp { .. }
                | Instruction::Cmp { .. }
                | Instruction::Select { .. }
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phi {
    pub dst: Vreg,
    pub incoming: Vec<(Operand, String)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Terminator {
    Jump(String),
    Branch {
        cond: Operand,
        then_target: String,
        else_target: String,
    },
    Return(Option<Operand>),
}

impl Terminator {
    pub fn targets(&self) -> Vec<&str> {
        match self {
            Terminator::Jump(t) => vec![t.as_str()],
            Terminator::Branch {
                then_target,
                else_target,
                ..
            } => vec![then_target.as_str(), else_target.as_str()],
            Terminator::Return(_) => vec![],
        }
    }

    pub fn targets_mut(&mut self) -> Vec<&mut String> {
        match self {
            Terminator::Jump(t) => vec![t],
            Terminator::Branch {
                then_target,
                else_target,
                ..
            } => vec![then_target, else_target],
            Terminator::Return(_) => vec![],
        }
    }

    pub fn operand(&self) -> Option<&Operand> {
        match self {
            Terminator::Branch { cond, .. } => Some(cond),
            Terminator::Return(v) => v.as_ref(),
            Terminator::Jump(_) => None,
        }
    }

    pub fn operand_mut(&mut self) -> Option<&mut Operand> {
        match self {
            Terminator::Branch { cond, .. } => Some(cond),
            Terminator::Return(v) => v.as_mut(),
            Terminator::Jump(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasicBlock {
    pub label: String,
    pub phis: Vec<Phi>,
    pub body: Vec<Instruction>,
    pub terminator: Terminator,
}

impl BasicBlock {
    pub fn new(label: impl Into<String>, body: Vec<Instruction>, terminator: Terminator) -> Self {
        BasicBlock {
            label: label.into(),
            phis: vec![],
            body,
            terminator,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamType {
    Int,
    Bool,
    Float,
    Qubit,
}

impl ParamType {
    pub fn name(self) -> &'static str {
        match self {
            ParamType::Int => "int",
            ParamType::Bool => "bool",
            ParamType::Float => "float",
            ParamType::Qubit => "qubit",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "int" => ParamType::Int,
            "bool" => ParamType::Bool,
            "float" => ParamType::Float,
            "qubit" => ParamType::Qubit,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Function {
    pub name: String,
    pub params: Vec<(Vreg, ParamType)>,
    /// Declared return type, if the function returns a value.
    pub ret: Option<ParamType>,
    pub blocks: Vec<BasicBlock>,
}

impl Function {
    pub fn block(&self, label: &str) -> Option<&BasicBlock> {
        self.blocks.iter().find(|b| b.label == label)
    }

    pub fn block_index(&self) -> HashMap<&str, usize> {
        self.blocks
            .iter()
            .enumerate()
            .map(|(i, b)| (b.label.as_str(), i))
            .collect()
    }

    pub fn instruction_count(&self) -> usize {
        self.blocks.iter().map(|b| b.body.len() + b.phis.len() + 1).sum()
    }

    pub fn gate_count(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| b.body.iter().filter(|i| i.is_quantum()).count())
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attrs {
    pub required_qubits: u32,
    pub required_results: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Module {
    pub name: String,
    pub attrs: Attrs,
    pub functions: Vec<Function>,
    pub entry: String,
}

impl Module {
    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn entry_function(&self) -> Option<&Function> {
        self.function(&self.entry)
    }

    pub fn entry_function_mut(&mut self) -> Option<&mut Function> {
        let entry = self.entry.clone();
        self.functions.iter_mut().find(|f| f.name == entry)
    }
}

// ---------------------------------------------------------------------------
// Classical values. Shared by constant folding and every interpreter so that
// folded and executed arithmetic agree bit for bit.

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Int(i64),
    Bool(bool),
    Float(f64),
}

impl Default for Value {
    fn default() -> Self {
        Value::Int(0)
    }
}

impl Value {
    pub fn from_literal(o: &Operand) -> Option<Value> {
        match o {
            Operand::Int(i) => Some(Value::Int(*i)),
            Operand::Bool(b) => Some(Value::Bool(*b)),
            Operand::Float(f) => Some(Value::Float(*f)),
            Operand::Reg(_) => None,
        }
    }

    pub fn to_operand(self) -> Operand {
        match self {
            Value::Int(i) => Operand::Int(i),
            Value::Bool(b) => Operand::Bool(b),
            Value::Float(f) => Operand::Float(f),
        }
    }

    pub fn as_i64(self) -> i64 {
        match self {
            Value::Int(i) => i,
            Value::Bool(b) => b as i64,
            Value::Float(f) => f as i64,
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Value::Int(i) => i as f64,
            Value::Bool(b) => b as i64 as f64,
            Value::Float(f) => f,
        }
    }

    pub fn truthy(self) -> bool {
        match self {
            Value::Int(i) => i != 0,
            Value::Bool(b) => b,
            Value::Float(f) => f != 0.0,
        }
    }

    /// Canonical text used in output records.
    pub fn render(self) -> String {
        match self {
            Value::Int(i) => i.to_string(),
            Value::Bool(b) => (b as u8).to_string(),
            Value::Float(f) => format!("{f:?}"),
        }
    }
}

/// Integer arithmetic wraps; any float operand makes the op a float op.
pub fn eval_binop(op: BinOpKind, a: Value, b: Value) -> Value {
    use Value::*;
    let float = matches!(a, Float(_)) || matches!(b, Float(_));
    match op {
        BinOpKind::Add | BinOpKind::Sub | BinOpKind::Mul if float => {
            let (x, y) = (a.as_f64(), b.as_f64());
            Float(match op {
                BinOpKind::Add => x + y,
                BinOpKind::Sub => x - y,
                _ => x * y,
            })
        }
        BinOpKind::Add => Int(a.as_i64().wrapping_add(b.as_i64())),
        BinOpKind::Sub => Int(a.as_i64().wrapping_sub(b.as_i64())),
        BinOpKind::Mul => Int(a.as_i64().wrapping_mul(b.as_i64())),
        _ => match (a, b) {
            (Bool(x), Bool(y)) => Bool(match op {
                BinOpKind::And => x & y,
                BinOpKind::Or => x | y,
                _ => x ^ y,
            }),
            _ => {
                let (x, y) = (a.as_i64(), b.as_i64());
                Int(match op {
                    BinOpKind::And => x & y,
                    BinOpKind::Or => x | y,
                    _ => x ^ y,
                })
            }
        },
    }
}

pub fn eval_cmp(op: CmpKind, a: Value, b: Value) -> bool {
    use std::cmp::Ordering;
    let ord = if matches!(a, Value::Float(_)) || matches!(b, Value::Float(_)) {
        a.as_f64().partial_cmp(&b.as_f64())
    } else {
        Some(a.as_i64().cmp(&b.as_i64()))
    };
    match (op, ord) {
        (CmpKind::Ne, None) => true,
        (_, None) => false,
        (CmpKind::Eq, Some(o)) => o == Ordering::Equal,
        (CmpKind::Ne, Some(o)) => o != Ordering::Equal,
        (CmpKind::Lt, Some(o)) => o == Ordering::Less,
        (CmpKind::Le, Some(o)) => o != Ordering::Greater,
        (CmpKind::Gt, Some(o)) => o == Ordering::Greater,
        (CmpKind::Ge, Some(o)) => o != Ordering::Less,
    }
}

// ---------------------------------------------------------------------------
// CFG

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum EdgeKind {
    Unconditional,
    TrueArm(Operand),
    FalseArm(Operand),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CfgEdge {
    pub from: usize,
    pub to: usize,
    pub kind: EdgeKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cfg {
    pub nodes: Vec<String>,
    pub edges: Vec<CfgEdge>,
    /// Value returned by each returning node, kept so terminators can be rebuilt.
    pub returns: Vec<Option<Operand>>,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum CfgError {
    #[error("branch target `{0}` does not exist")]
    MissingTarget(String),
    #[error("cycle detected through block `{0}`")]
    CycleDetected(String),
}

impl Cfg {
    pub fn from_function(f: &Function) -> Result<Cfg, CfgError> {
        let idx = f.block_index();
        let look = |l: &str| idx.get(l).copied().ok_or_else(|| CfgError::MissingTarget(l.into()));
        let mut edges = Vec::new();
        let mut returns = Vec::new();
        for (i, b) in f.blocks.iter().enumerate() {
            let mut ret = None;
            match &b.terminator {
                Terminator::Jump(t) => edges.push(CfgEdge {
                    from: i,
                    to: look(t)?,
                    kind: EdgeKind::Unconditional,
                }),
                Terminator::Branch {
                    cond,
                    then_target,
                    else_target,
                } => {
                    edges.push(CfgEdge {
                        from: i,
                        to: look(then_target)?,
                        kind: EdgeKind::TrueArm(cond.clone()),
                    });
                    edges.push(CfgEdge {
                        from: i,
                        to: look(else_target)?,
                        kind: EdgeKind::FalseArm(cond.clone()),
                    });
                }
                Terminator::Return(v) => ret = v.clone(),
            }
            returns.push(ret);
        }
        Ok(Cfg {
            nodes: f.blocks.iter().map(|b| b.label.clone()).collect(),
            edges,
            returns,
        })
    }

    pub fn succs(&self, n: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.from == n).map(|e| e.to).collect()
    }

    pub fn preds(&self, n: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.to == n).map(|e| e.from).collect()
    }

    pub fn out_edges(&self, n: usize) -> impl Iterator<Item = &CfgEdge> {
        self.edges.iter().filter(move |e| e.from == n)
    }

    pub fn in_edges(&self, n: usize) -> impl Iterator<Item = &CfgEdge> {
        self.edges.iter().filter(move |e| e.to == n)
    }

    /// Rebuilds each node's terminator by walking its outgoing edges.
    pub fn terminators(&self) -> Vec<Terminator> {
        (0..self.nodes.len())
            .map(|n| {
                let out: Vec<&CfgEdge> = self.out_edges(n).collect();
                match out.as_slice() {
                    [] => Terminator::Return(self.returns[n].clone()),
                    [e] => Terminator::Jump(self.nodes[e.to].clone()),
                    [a, b] => {
                        let (t, f) = match (&a.kind, &b.kind) {
                            (EdgeKind::TrueArm(_), _) => (a, b),
                            _ => (b, a),
                        };
                        let cond = match &t.kind {
                            EdgeKind::TrueArm(c) => c.clone(),
                            _ => unreachable!("branch without a true arm"),
                        };
                        Terminator::Branch {
                            cond,
                            then_target: self.nodes[t.to].clone(),
                            else_target: self.nodes[f.to].clone(),
                        }
                    }
                    _ => unreachable!("node with more than two successors"),
                }
            })
            .collect()
    }

    /// Nodes reachable from the entry (node 0).
    pub fn reachable(&self) -> Vec<bool> {
        let mut seen = vec![false; self.nodes.len()];
        if self.nodes.is_empty() {
            return seen;
        }
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(n) = stack.pop() {
            for s in self.succs(n) {
                if !seen[s] {
                    seen[s] = true;
                    stack.push(s);
                }
            }
        }
        seen
    }

    /// Edges (u, v) where v is on the DFS stack when reached from u.
    pub fn back_edges(&self) -> Vec<(usize, usize)> {
        let n = self.nodes.len();
        let mut state = vec![0u8; n];
        let mut out = Vec::new();
        for root in 0..n {
            if state[root] != 0 {
                continue;
            }
            let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
            state[root] = 1;
            while let Some(&mut (node, ref mut i)) = stack.last_mut() {
                let succ = self.succs(node);
                if *i < succ.len() {
                    let s = succ[*i];
                    *i += 1;
                    match state[s] {
                        0 => {
                            state[s] = 1;
                            stack.push((s, 0));
                        }
                        1 => out.push((node, s)),
                        _ => {}
                    }
                } else {
                    state[node] = 2;
                    stack.pop();
                }
            }
        }
        out
    }

    pub fn is_acyclic(&self) -> bool {
        self.back_edges().is_empty()
    }

    /// Kahn's algorithm; among ready nodes the earliest in source order wins.
    pub fn topo_order(&self) -> Result<Vec<usize>, CfgError> {
        let n = self.nodes.len();
        let mut indeg = vec![0usize; n];
        for e in &self.edges {
            indeg[e.to] += 1;
        }
        let mut ready: std::collections::BTreeSet<usize> =
            (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(&u) = ready.iter().next() {
            ready.remove(&u);
            order.push(u);
            for e in self.edges.iter().filter(|e| e.from == u) {
                indeg[e.to] -= 1;
                if indeg[e.to] == 0 {
                    ready.insert(e.to);
                }
            }
        }
        if order.len() < n {
            let stuck = (0..n).find(|&i| indeg[i] > 0).unwrap_or(0);
            return Err(CfgError::CycleDetected(self.nodes[stuck].clone()));
        }
        Ok(order)
    }

    /// Immediate dominators over reachable nodes (entry maps to itself).
    pub fn idoms(&self) -> Vec<Option<usize>> {
        let n = self.nodes.len();
        let mut idom: Vec<Option<usize>> = vec![None; n];
        if n == 0 {
            return idom;
        }
        let rpo = self.reverse_postorder();
        let mut rpo_pos = vec![usize::MAX; n];
        for (i, &b) in rpo.iter().enumerate() {
            rpo_pos[b] = i;
        }
        idom[0] = Some(0);
        let preds: Vec<Vec<usize>> = (0..n).map(|b| self.preds(b)).collect();
        let mut changed = true;
        while changed {
            changed = false;
            for &b in rpo.iter().skip(1) {
                let mut new: Option<usize> = None;
                for &p in &preds[b] {
                    if idom[p].is_none() {
                        continue;
                    }
                    new = Some(match new {
                        None => p,
                        Some(cur) => {
                            let (mut x, mut y) = (p, cur);
                            while x != y {
                                while rpo_pos[x] > rpo_pos[y] {
                                    x = idom[x].unwrap();
                                }
                                while rpo_pos[y] > rpo_pos[x] {
                                    y = idom[y].unwrap();
                                }
                            }
                            x
                        }
                    });
                }
                if new.is_some() && idom[b] != new {
                    idom[b] = new;
                    changed = true;
                }
            }
        }
        idom
    }

    pub fn reverse_postorder(&self) -> Vec<usize> {
        let n = self.nodes.len();
        let mut seen = vec![false; n];
        let mut post = Vec::new();
        if n == 0 {
            return post;
        }
        let mut stack: Vec<(usize, usize)> = vec![(0, 0)];
        seen[0] = true;
        while let Some(&mut (node, ref mut i)) = stack.last_mut() {
            let succ = self.succs(node);
            if *i < succ.len() {
                let s = succ[*i];
                *i += 1;
                if !seen[s] {
                    seen[s] = true;
                    stack.push((s, 0));
                }
            } else {
                post.push(node);
                stack.pop();
            }
        }
        post.reverse();
        post
    }

    /// True if `a` dominates `b` given the idom table.
    pub fn dominates(idom: &[Option<usize>], a: usize, b: usize) -> bool {
        let mut cur = b;
        loop {
            if cur == a {
                return true;
            }
            match idom[cur] {
                Some(p) if p != cur => cur = p,
                _ => return false,
            }
        }
    }
}

/// Topological order of block labels; ties broken by source order.
pub fn topo_sort(cfg: &Cfg) -> Result<Vec<String>, CfgError> {
    Ok(cfg
        .topo_order()?
        .into_iter()
        .map(|i| cfg.nodes[i].clone())
        .collect())
}

// ---------------------------------------------------------------------------
// Diagnostics

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Location {
    pub function: String,
    pub block: Option<String>,
    pub instr: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: String,
    pub message: String,
    pub location: Location,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev} {}: {} (@{}", self.code, self.message, self.location.function)?;
        if let Some(b) = &self.location.block {
            write!(f, ", block {b}")?;
        }
        if let Some(i) = self.location.instr {
            write!(f, ", instr {i}")?;
        }
        write!(f, ")")
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics(pub Vec<Diagnostic>);

impl Diagnostics {
    pub fn has_errors(&self) -> bool {
        self.0.iter().any(|d| d.severity == Severity::Error)
    }

    pub fn errors(&self) -> impl Iterator<Item = &Diagnostic> {
        self.0.iter().filter(|d| d.severity == Severity::Error)
    }

    pub fn codes(&self) -> Vec<&str> {
        self.0.iter().map(|d| d.code.as_str()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Diagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in &self.0 {
            writeln!(f, "{d}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strictness {
    /// Before flattening: calls allowed, back edges reported as warnings.
    Lenient,
    /// After flattening: the executable profile.
    Strict,
}

struct Checker<'a> {
    module: &'a Module,
    strict: Strictness,
    out: Vec<Diagnostic>,
}

impl Checker<'_> {
    fn push(&mut self, sev: Severity, code: &str, msg: String, f: &str, b: Option<&str>, i: Option<usize>) {
        self.out.push(Diagnostic {
            severity: sev,
            code: code.to_string(),
            message: msg,
            location: Location {
                function: f.to_string(),
                block: b.map(str::to_string),
                instr: i,
            },
        });
    }

    fn error(&mut self, code: &str, msg: String, f: &str, b: Option<&str>, i: Option<usize>) {
        self.push(Severity::Error, code, msg, f, b, i);
    }

    fn function(&mut self, func: &Function) {
        let fname = func.name.as_str();
        let mut labels = HashSet::new();
        for b in &func.blocks {
            if !labels.insert(b.label.as_str()) {
                self.error("DUPLICATE_LABEL", format!("label `{}` defined twice", b.label), fname, Some(&b.label), None);
            }
        }
        if func.blocks.is_empty() {
            self.error("EMPTY_FUNCTION", "function has no blocks".into(), fname, None, None);
            return;
        }
        let mut missing = false;
        for b in &func.blocks {
            for t in b.terminator.targets() {
                if !labels.contains(t) {
                    missing = true;
                    self.error("UNKNOWN_TARGET", format!("branch target `{t}` does not exist"), fname, Some(&b.label), None);
                }
            }
        }
        self.instructions(func);
        if missing {
            return;
        }
        let cfg = Cfg::from_function(func).expect("targets checked");
        for (u, v) in cfg.back_edges() {
            let sev = match self.strict {
                Strictness::Strict => Severity::Error,
                Strictness::Lenient => Severity::Warning,
            };
            self.push(
                sev,
                "BACK_EDGE",
                format!("edge {} -> {} closes a cycle", cfg.nodes[u], cfg.nodes[v]),
                fname,
                Some(&cfg.nodes[u]),
                None,
            );
        }
        self.phis(func, &cfg);
        self.ssa(func, &cfg);
    }

    fn instructions(&mut self, func: &Function) {
        let fname = func.name.as_str();
        let nq = self.module.attrs.required_qubits;
        let nr = self.module.attrs.required_results;
        let qubit_params: HashSet<&Vreg> = func
            .params
            .iter()
            .filter(|(_, t)| *t == ParamType::Qubit)
            .map(|(v, _)| v)
            .collect();
        for b in &func.blocks {
            let bl = Some(b.label.as_str());
            for (i, ins) in b.body.iter().enumerate() {
                let at = Some(i);
                for q in ins.qubits() {
                    match q {
                        QubitRef::Index(k) if *k >= nq => self.error(
                            "QUBIT_RANGE",
                            format!("qubit q{k} outside required_qubits={nq}"),
                            fname,
                            bl,
                            at,
                        ),
                        QubitRef::Param(v) if !qubit_params.contains(v) => self.error(
                            "UNKNOWN_QUBIT",
                            format!("{v} is not a qubit parameter"),
                            fname,
                            bl,
                            at,
                        ),
                        _ => {}
                    }
                }
                if let Some(r) = ins.result_slot() {
                    if r >= nr {
                        self.error("RESULT_RANGE", format!("result r{r} outside required_results={nr}"), fname, bl, at);
                    }
                }
                match ins {
                    Instruction::Gate { kind, qubits, angle } => {
                        if !kind.is_known() {
                            self.error("UNKNOWN_GATE", format!("unknown gate `{}`", kind.name()), fname, bl, at);
                            continue;
                        }
                        if Some(qubits.len()) != kind.arity() {
                            self.error("GATE_ARITY", format!("`{}` takes {} qubit(s)", kind.name(), kind.arity().unwrap()), fname, bl, at);
                        } else if qubits.len() == 2 && qubits[0] == qubits[1] {
                            self.error("GATE_ARITY", "cx operands must be distinct".into(), fname, bl, at);
                        }
                        if kind.takes_angle() != angle.is_some() {
                            self.error("GATE_ANGLE", format!("`{}` angle operand mismatch", kind.name()), fname, bl, at);
                        }
                    }
                    Instruction::Call { callee, args, dst } => match self.module.function(callee) {
                        None => self.error("UNRESOLVED_CALL", format!("call to undefined @{callee}"), fname, bl, at),
                        Some(target) => {
                            if target.params.len() != args.len() {
                                self.error("CALL_ARITY", format!("@{callee} expects {} args", target.params.len()), fname, bl, at);
                            }
                            if dst.is_some() && target.ret.is_none() {
                                self.error("CALL_RESULT", format!("@{callee} returns no value"), fname, bl, at);
                            }
                            if self.strict == Strictness::Strict {
                                self.error("CALL", format!("call to @{callee} remains after flattening"), fname, bl, at);
                            }
                        }
                    },
                    _ => {}
                }
            }
            if let Terminator::Return(v) = &b.terminator {
                if v.is_some() != func.ret.is_some() {
                    self.error("RETURN_TYPE", "return value does not match signature".into(), fname, bl, None);
                }
            }
        }
    }

    fn phis(&mut self, func: &Function, cfg: &Cfg) {
        for (n, b) in func.blocks.iter().enumerate() {
            let mut preds: Vec<&str> = cfg.preds(n).iter().map(|&p| cfg.nodes[p].as_str()).collect();
            preds.sort_unstable();
            preds.dedup();
            for phi in &b.phis {
                let mut inc: Vec<&str> = phi.incoming.iter().map(|(_, l)| l.as_str()).collect();
                inc.sort_unstable();
                let before = inc.len();
                inc.dedup();
                if inc != preds || before != inc.len() {
                    self.error(
                        "PHI_PREDS",
                        format!("phi {} incoming labels do not match predecessors", phi.dst),
                        &func.name,
                        Some(&b.label),
                        None,
                    );
                }
            }
        }
    }

    fn ssa(&mut self, func: &Function, cfg: &Cfg) {
        let fname = func.name.as_str();
        // def site: (block, position); params at block usize::MAX.
        let mut defs: HashMap<&Vreg, (usize, usize)> = HashMap::new();
        for (p, _) in &func.params {
            if defs.insert(p, (usize::MAX, 0)).is_some() {
                self.error("SSA_REDEF", format!("{p} defined twice"), fname, None, None);
            }
        }
        for (bi, b) in func.blocks.iter().enumerate() {
            let defs_here = b
                .phis
                .iter()
                .map(|p| &p.dst)
                .chain(b.body.iter().filter_map(|i| i.def()));
            for (pos, d) in defs_here.enumerate() {
                if defs.insert(d, (bi, pos)).is_some() {
                    self.error("SSA_REDEF", format!("{d} defined twice"), fname, Some(&b.label), None);
                }
            }
        }
        let idom = cfg.idoms();
        let reach = cfg.reachable();
        let idx = func.block_index();
        let available = |v: &Vreg, bi: usize, pos: usize| -> bool {
            match defs.get(v) {
                None => false,
                Some(&(db, _)) if db == usize::MAX => true,
                Some(&(db, dp)) => {
                    if db == bi {
                        dp < pos
                    } else {
                        Cfg::dominates(&idom, db, bi)
                    }
                }
            }
        };
        let mut errs = Vec::new();
        for (bi, b) in func.blocks.iter().enumerate() {
            if !reach[bi] {
                continue;
            }
            for phi in &b.phis {
                for (op, l) in &phi.incoming {
                    if let (Operand::Reg(v), Some(&p)) = (op, idx.get(l.as_str())) {
                        if reach[p] && !available(v, p, usize::MAX) {
                            errs.push((format!("{v} not defined on edge from {l}"), b.label.clone(), None));
                        }
                    }
                }
            }
            let nphi = b.phis.len();
            for (i, ins) in b.body.iter().enumerate() {
                let uses = ins
                    .operands()
                    .into_iter()
                    .filter_map(Operand::as_reg)
                    .chain(ins.qubits().into_iter().filter_map(|q| match q {
                        QubitRef::Param(v) => Some(v),
                        _ => None,
                    }));
                for v in uses {
                    if !available(v, bi, nphi + i) {
                        errs.push((format!("{v} used before definition"), b.label.clone(), Some(i)));
                    }
                }
            }
            if let Some(Operand::Reg(v)) = b.terminator.operand() {
                if !available(v, bi, usize::MAX) {
                    errs.push((format!("{v} used before definition"), b.label.clone(), None));
                }
            }
        }
        for (m, bl, i) in errs {
            self.error("USE_BEFORE_DEF", m, fname, Some(&bl), i);
        }
    }
}

/// Checks a module against the executable profile. Empty result means accepted.
pub fn validate_profile(module: &Module, strict: Strictness) -> Diagnostics {
    let mut c = Checker {
        module,
        strict,
        out: Vec::new(),
    };
    if module.function(&module.entry).is_none() {
        c.error("NO_ENTRY", format!("entry @{} not found", module.entry), &module.entry, None, None);
    }
    let mut names = HashSet::new();
    for f in &module.functions {
        if !names.insert(f.name.as_str()) {
            c.error("DUPLICATE_FUNCTION", format!("@{} defined twice", f.name), &f.name, None, None);
        }
        c.function(f);
    }
    Diagnostics(c.out)
}

/// Number of blocks across all functions.
pub fn block_count(module: &Module) -> usize {
    module.functions.iter().map(|f| f.blocks.len()).sum()
}

/// Per-vreg use count in a function, including phis and terminators.
pub fn use_counts(func: &Function) -> BTreeMap<Vreg, usize> {
    let mut m = BTreeMap::new();
    for b in &func.blocks {
        for p in &b.phis {
            for (o, _) in &p.incoming {
                if let Operand::Reg(v) = o {
                    *m.entry(v.clone()).or_default() += 1;
                }
            }
        }
        for i in &b.body {
            for o in i.operands() {
                if let Operand::Reg(v) = o {
                    *m.entry(v.clone()).or_default() += 1;
                }
            }
            for q in i.qubits() {
                if let QubitRef::Param(v) = q {
                    *m.entry(v.clone()).or_default() += 1;
                }
            }
        }
        if let Some(Operand::Reg(v)) = b.terminator.operand() {
            *m.entry(v.clone()).or_default() += 1;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn jmp(l: &str) -> Terminator {
        Terminator::Jump(l.into())
    }

    fn br(c: &str, t: &str, e: &str) -> Terminator {
        Terminator::Branch {
            cond: Operand::reg(c),
            then_target: t.into(),
            else_target: e.into(),
        }
    }

    fn module(blocks: Vec<BasicBlock>, nq: u32) -> Module {
        Module {
            name: "m".into(),
            attrs: Attrs {
                required_qubits: nq,
                required_results: 1,
            },
            functions: vec![Function {
                name: "main".into(),
                params: vec![],
                ret: None,
                blocks,
            }],
            entry: "main".into(),
        }
    }

    fn diamond() -> Module {
        let read = Instruction::ReadResult {
            dst: Vreg::new("c"),
            result: 0,
        };
        module(
            vec![
                BasicBlock::new(
                    "entry",
                    vec![
                        Instruction::gate(GateKind::H, &[0]),
                        Instruction::Measure {
                            qubit: QubitRef::Index(0),
                            result: 0,
                        },
                        read,
                    ],
                    br("c", "then", "else"),
                ),
                BasicBlock::new("then", vec![Instruction::gate(GateKind::X, &[1])], jmp("merge")),
                BasicBlock::new("else", vec![Instruction::gate(GateKind::Z, &[1])], jmp("merge")),
                BasicBlock::new("merge", vec![], Terminator::Return(None)),
            ],
            2,
        )
    }

    #[test]
    fn diamond_is_clean() {
        let m = diamond();
        assert!(validate_profile(&m, Strictness::Strict).is_empty());
    }

    #[test]
    fn self_loop_is_back_edge() {
        let m = module(vec![BasicBlock::new("entry", vec![], jmp("entry"))], 1);
        let d = validate_profile(&m, Strictness::Strict);
        assert_eq!(d.codes(), vec!["BACK_EDGE"]);
        assert!(d.has_errors());
        let lenient = validate_profile(&m, Strictness::Lenient);
        assert!(!lenient.has_errors());
        assert_eq!(lenient.codes(), vec!["BACK_EDGE"]);
    }

    #[test]
    fn qubit_out_of_range() {
        let m = module(
            vec![BasicBlock::new(
                "entry",
                vec![Instruction::gate(GateKind::H, &[5])],
                Terminator::Return(None),
            )],
            3,
        );
        assert_eq!(validate_profile(&m, Strictness::Strict).codes(), vec!["QUBIT_RANGE"]);
    }

    #[test]
    fn topo_examples() {
        let m = diamond();
        let cfg = Cfg::from_function(&m.functions[0]).unwrap();
        assert_eq!(topo_sort(&cfg).unwrap(), vec!["entry", "then", "else", "merge"]);

        let single = module(vec![BasicBlock::new("only", vec![], Terminator::Return(None))], 1);
        let cfg = Cfg::from_function(&single.functions[0]).unwrap();
        assert_eq!(topo_sort(&cfg).unwrap(), vec!["only"]);

        let chain = module(
            vec![
                BasicBlock::new("A", vec![], jmp("B")),
                BasicBlock::new("B", vec![], jmp("C")),
                BasicBlock::new("C", vec![], Terminator::Return(None)),
            ],
            1,
        );
        let cfg = Cfg::from_function(&chain.functions[0]).unwrap();
        assert_eq!(topo_sort(&cfg).unwrap(), vec!["A", "B", "C"]);
    }

    #[test]
    fn topo_rejects_cycle() {
        let m = module(
            vec![
                BasicBlock::new("a", vec![], jmp("b")),
                BasicBlock::new("b", vec![], jmp("a")),
            ],
            1,
        );
        let cfg = Cfg::from_function(&m.functions[0]).unwrap();
        assert!(matches!(topo_sort(&cfg), Err(CfgError::CycleDetected(_))));
    }

    #[test]
    fn cfg_terminators_round_trip() {
        let m = diamond();
        let f = &m.functions[0];
        let cfg = Cfg::from_function(f).unwrap();
        let rebuilt = cfg.terminators();
        for (b, t) in f.blocks.iter().zip(rebuilt) {
            assert_eq!(b.terminator, t);
        }
    }

    #[test]
    fn use_before_def_detected() {
        let m = module(
            vec![
                BasicBlock::new("entry", vec![], br("c", "a", "b")),
                BasicBlock::new(
                    "a",
                    vec![Instruction::ReadResult {
                        dst: Vreg::new("c"),
                        result: 0,
                    }],
                    Terminator::Return(None),
                ),
                BasicBlock::new("b", vec![], Terminator::Return(None)),
            ],
            1,
        );
        let d = validate_profile(&m, Strictness::Strict);
        assert!(d.codes().contains(&"USE_BEFORE_DEF"));
    }

    #[test]
    fn redefinition_detected() {
        let rd = Instruction::ReadResult {
            dst: Vreg::new("c"),
            result: 0,
        };
        let m = module(
            vec![BasicBlock::new("entry", vec![rd.clone(), rd], Terminator::Return(None))],
            1,
        );
        assert!(validate_profile(&m, Strictness::Strict).codes().contains(&"SSA_REDEF"));
    }

    #[test]
    fn dominators_of_diamond() {
        let m = diamond();
        let cfg = Cfg::from_function(&m.functions[0]).unwrap();
        let idom = cfg.idoms();
        assert_eq!(idom, vec![Some(0), Some(0), Some(0), Some(0)]);
        assert!(Cfg::dominates(&idom, 0, 3));
        assert!(!Cfg::dominates(&idom, 1, 3));
    }
}
