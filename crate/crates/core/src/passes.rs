//! Target-independent passes: constant folding, flattening, peephole rewriting.

use std::collections::{BTreeSet, HashMap, HashSet};

use thiserror::Error;

use crate::emulator::state::{circuit_unitary, equal_up_to_phase};
use crate::ir::*;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PassError {
    #[error("budget exceeded: {what} exceeds {limit}")]
    BudgetExceeded { what: String, limit: usize },
    #[error("unsupported loop at `{header}`: {reason}")]
    UnsupportedLoop { header: String, reason: String },
    #[error("call to undefined function @{0}")]
    UnresolvedCall(String),
    #[error("call to @{callee}: {reason}")]
    BadCall { callee: String, reason: String },
    #[error("entry function @{0} not found")]
    NoEntry(String),
    #[error(transparent)]
    Cfg(#[from] CfgError),
}

// ---------------------------------------------------------------------------
// Renaming and substitution

#[derive(Default)]
struct Renamer {
    labels: HashMap<String, String>,
    regs: HashMap<Vreg, Operand>,
    qubits: HashMap<Vreg, QubitRef>,
}

impl Renamer {
    fn label(&self, l: &mut String) {
        if let Some(n) = self.labels.get(l.as_str()) {
            *l = n.clone();
        }
    }

    fn operand(&self, o: &mut Operand) {
        if let Operand::Reg(v) = o {
            if let Some(n) = self.regs.get(v) {
                *o = n.clone();
            }
        }
    }

    fn dst(&self, v: &mut Vreg) {
        if let Some(Operand::Reg(n)) = self.regs.get(v) {
            *v = n.clone();
        }
    }

    fn block(&self, b: &mut BasicBlock) {
        self.label(&mut b.label);
        for p in &mut b.phis {
            self.dst(&mut p.dst);
            for (o, l) in &mut p.incoming {
                self.operand(o);
                self.label(l);
            }
        }
        for ins in &mut b.body {
            self.instruction(ins);
        }
        for t in b.terminator.targets_mut() {
            self.label(t);
        }
        if let Some(o) = b.terminator.operand_mut() {
            self.operand(o);
        }
    }

    fn instruction(&self, ins: &mut Instruction) {
        for o in ins.operands_mut() {
            self.operand(o);
        }
        for q in ins.qubits_mut() {
            if let QubitRef::Param(v) = q {
                if let Some(n) = self.qubits.get(v) {
                    *q = n.clone();
                }
            }
        }
        match ins {
            Instruction::ReadResult { dst, .. }
            | Instruction::BinOp { dst, .. }
            | Instruction::Cmp { dst, .. }
            | Instruction::Select { dst, .. } => self.dst(dst),
            Instruction::Call { dst: Some(d), .. } => self.dst(d),
            _ => {}
        }
    }
}

fn defs_in<'a>(blocks: impl Iterator<Item = &'a BasicBlock>) -> Vec<Vreg> {
    let mut out = Vec::new();
    for b in blocks {
        out.extend(b.phis.iter().map(|p| p.dst.clone()));
        out.extend(b.body.iter().filter_map(|i| i.def().cloned()));
    }
    out
}

fn substitute(f: &mut Function, map: HashMap<Vreg, Operand>) {
    let r = Renamer {
        regs: map,
        ..Default::default()
    };
    for b in &mut f.blocks {
        for p in &mut b.phis {
            for (o, _) in &mut p.incoming {
                r.operand(o);
            }
        }
        for ins in &mut b.body {
            for o in ins.operands_mut() {
                r.operand(o);
            }
        }
        if let Some(o) = b.terminator.operand_mut() {
            r.operand(o);
        }
    }
}

/// Follows chains `a -> %b -> lit` so a single substitution pass is complete.
fn resolve(map: &mut HashMap<Vreg, Operand>) {
    let keys: Vec<Vreg> = map.keys().cloned().collect();
    for k in keys {
        let mut cur = map[&k].clone();
        let mut guard = 0;
        while let Operand::Reg(v) = &cur {
            match map.get(v) {
                Some(n) if guard < map.len() => {
                    cur = n.clone();
                    guard += 1;
                }
                _ => break,
            }
        }
        map.insert(k, cur);
    }
}

// ---------------------------------------------------------------------------
// Constant folding

fn literal(o: &Operand) -> Option<Value> {
    Value::from_literal(o)
}

/// Folds literal arithmetic in one function until nothing changes.
pub fn fold_function(f: &mut Function) -> bool {
    let mut any = false;
    loop {
        let mut map: HashMap<Vreg, Operand> = HashMap::new();
        for b in &mut f.blocks {
            b.phis.retain(|p| {
                let first = match p.incoming.first() {
                    Some((o, _)) if o.is_literal() => o,
                    _ => return true,
                };
                if p.incoming.iter().all(|(o, _)| o == first) {
                    map.insert(p.dst.clone(), first.clone());
                    false
                } else {
                    true
                }
            });
            b.body.retain(|ins| {
                let folded = match ins {
                    Instruction::BinOp { dst, op, lhs, rhs } => match (literal(lhs), literal(rhs)) {
                        (Some(a), Some(b)) => Some((dst, eval_binop(*op, a, b).to_operand())),
                        _ => None,
                    },
                    Instruction::Cmp { dst, op, lhs, rhs } => match (literal(lhs), literal(rhs)) {
                        (Some(a), Some(b)) => Some((dst, Operand::Bool(eval_cmp(*op, a, b)))),
                        _ => None,
                    },
                    Instruction::Select {
                        dst,
                        cond,
                        then_val,
                        else_val,
                    } => literal(cond).map(|c| (dst, if c.truthy() { then_val.clone() } else { else_val.clone() })),
                    _ => None,
                };
                match folded {
                    Some((d, v)) => {
                        map.insert(d.clone(), v);
                        false
                    }
                    None => true,
                }
            });
        }
        if map.is_empty() {
            return any;
        }
        any = true;
        resolve(&mut map);
        substitute(f, map);
    }
}

/// Replaces literal-operand arithmetic and comparisons with their results.
pub fn fold_constants(module: &Module) -> Module {
    let mut m = module.clone();
    for f in &mut m.functions {
        fold_function(f);
    }
    m
}

// ---------------------------------------------------------------------------
// CFG cleanup used by flattening

/// Drops phi incomings whose label is no longer a predecessor.
fn prune_phis(f: &mut Function) {
    let mut preds: HashMap<String, HashSet<String>> = HashMap::new();
    for b in &f.blocks {
        for t in b.terminator.targets() {
            preds.entry(t.to_string()).or_default().insert(b.label.clone());
        }
    }
    let empty = HashSet::new();
    for b in &mut f.blocks {
        let p = preds.get(&b.label).unwrap_or(&empty);
        for phi in &mut b.phis {
            phi.incoming.retain(|(_, l)| p.contains(l));
        }
    }
}

fn remove_unreachable(f: &mut Function) -> bool {
    let Ok(cfg) = Cfg::from_function(f) else {
        return false;
    };
    let reach = cfg.reachable();
    if reach.iter().all(|&r| r) {
        return false;
    }
    let mut i = 0;
    f.blocks.retain(|_| {
        i += 1;
        reach[i - 1]
    });
    true
}

/// Folds constants, resolves literal branches, drops dead blocks and trivial phis.
pub fn simplify_cfg(f: &mut Function) -> bool {
    let mut any = false;
    loop {
        let mut changed = fold_function(f);
        for b in &mut f.blocks {
            if let Terminator::Branch {
                cond,
                then_target,
                else_target,
            } = &b.terminator
            {
                if let Some(c) = literal(cond) {
                    let t = if c.truthy() { then_target.clone() } else { else_target.clone() };
                    b.terminator = Terminator::Jump(t);
                    changed = true;
                }
            }
        }
        changed |= remove_unreachable(f);
        prune_phis(f);
        let mut map = HashMap::new();
        for b in &mut f.blocks {
            b.phis.retain(|p| {
                if p.incoming.len() == 1 {
                    map.insert(p.dst.clone(), p.incoming[0].0.clone());
                    false
                } else {
                    true
                }
            });
        }
        if !map.is_empty() {
            changed = true;
            resolve(&mut map);
            substitute(f, map);
        }
        if !changed {
            return any;
        }
        any = true;
    }
}

// ---------------------------------------------------------------------------
// Flattening

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlattenConfig {
    pub max_inline_depth: usize,
    pub max_unroll: usize,
}

impl Default for FlattenConfig {
    fn default() -> Self {
        FlattenConfig {
            max_inline_depth: 32,
            max_unroll: 1024,
        }
    }
}

struct Flattener<'a> {
    funcs: HashMap<&'a str, &'a Function>,
    cfg: FlattenConfig,
    uid: usize,
    depth: HashMap<String, usize>,
    peels: HashMap<String, usize>,
}

impl Flattener<'_> {
    fn fresh(&mut self) -> usize {
        self.uid += 1;
        self.uid
    }

    fn inline_one(&mut self, f: &mut Function) -> Result<bool, PassError> {
        let Some((bi, ji)) = f.blocks.iter().enumerate().find_map(|(bi, b)| {
            b.body
                .iter()
                .position(|i| matches!(i, Instruction::Call { .. }))
                .map(|ji| (bi, ji))
        }) else {
            return Ok(false);
        };
        let label = f.blocks[bi].label.clone();
        let d = self.depth.get(&label).copied().unwrap_or(0);
        if d + 1 > self.cfg.max_inline_depth {
            return Err(PassError::BudgetExceeded {
                what: "inline depth".into(),
                limit: self.cfg.max_inline_depth,
            });
        }
        let Instruction::Call { dst, callee, args } = f.blocks[bi].body[ji].clone() else {
            unreachable!()
        };
        let target = *self
            .funcs
            .get(callee.as_str())
            .ok_or_else(|| PassError::UnresolvedCall(callee.clone()))?;
        if target.params.len() != args.len() {
            return Err(PassError::BadCall {
                callee,
                reason: format!("expected {} arguments, got {}", target.params.len(), args.len()),
            });
        }
        let uid = self.fresh();
        let sfx = format!(".i{uid}");
        let mut ren = Renamer::default();
        for b in &target.blocks {
            ren.labels.insert(b.label.clone(), format!("{}{sfx}", b.label));
        }
        for v in defs_in(target.blocks.iter()) {
            ren.regs.insert(v.clone(), Operand::Reg(Vreg(format!("{}{sfx}", v.0))));
        }
        for ((p, ty), a) in target.params.iter().zip(&args) {
            match (ty, a) {
                (ParamType::Qubit, CallArg::Qubit(q)) => {
                    ren.qubits.insert(p.clone(), q.clone());
                }
                (ParamType::Qubit, CallArg::Value(Operand::Reg(v))) => {
                    ren.qubits.insert(p.clone(), QubitRef::Param(v.clone()));
                }
                (ParamType::Qubit, _) | (_, CallArg::Qubit(_)) => {
                    return Err(PassError::BadCall {
                        callee,
                        reason: format!("argument kind mismatch for {p}"),
                    })
                }
                (_, CallArg::Value(o)) => {
                    ren.regs.insert(p.clone(), o.clone());
                }
            }
        }
        let mut body: Vec<BasicBlock> = target.blocks.clone();
        for b in &mut body {
            ren.block(b);
            self.depth.insert(b.label.clone(), d + 1);
        }
        let callee_entry = body[0].label.clone();

        // Split the call site.
        let post_label = format!("{label}.post{uid}");
        let blk = &mut f.blocks[bi];
        let tail: Vec<Instruction> = blk.body.split_off(ji + 1);
        blk.body.pop();
        let old_term = std::mem::replace(&mut blk.terminator, Terminator::Jump(callee_entry));
        let succs: Vec<String> = old_term.targets().iter().map(|s| s.to_string()).collect();
        let post = BasicBlock::new(post_label.clone(), tail, old_term);
        self.depth.insert(post_label.clone(), d);
        for b in &mut f.blocks {
            if succs.contains(&b.label) {
                for p in &mut b.phis {
                    for (_, l) in &mut p.incoming {
                        if *l == label {
                            *l = post_label.clone();
                        }
                    }
                }
            }
        }

        let rets: Vec<(usize, Option<Operand>)> = body
            .iter()
            .enumerate()
            .filter_map(|(i, b)| match &b.terminator {
                Terminator::Return(v) => Some((i, v.clone())),
                _ => None,
            })
            .collect();
        let mut new_blocks = body;
        let insert_at = bi + 1;
        let mut pending: HashMap<Vreg, Operand> = HashMap::new();
        let mut post_vec = vec![post];

        // Region reachable from the continuation, computed on the spliced function.
        let region: Vec<String> = if rets.len() > 1 {
            let mut tmp = f.clone();
            tmp.blocks.extend(new_blocks.iter().cloned());
            tmp.blocks.push(post_vec[0].clone());
            let idx = tmp.block_index();
            let cfg = Cfg::from_function(&tmp)?;
            let start = idx[post_label.as_str()];
            let mut seen = vec![false; tmp.blocks.len()];
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(n) = stack.pop() {
                for s in cfg.succs(n) {
                    if !seen[s] {
                        seen[s] = true;
                        stack.push(s);
                    }
                }
            }
            if seen[idx[label.as_str()]] {
                vec![]
            } else {
                tmp.blocks
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| seen[*i])
                    .map(|(_, b)| b.label.clone())
                    .collect()
            }
        } else {
            vec![]
        };

        if region.is_empty() {
            // Shared continuation: a single return, or the continuation loops back.
            if rets.len() > 1 {
                if let Some(d) = &dst {
                    post_vec[0].phis.push(Phi {
                        dst: d.clone(),
                        incoming: rets
                            .iter()
                            .map(|(i, v)| (v.clone().unwrap_or(Operand::Int(0)), new_blocks[*i].label.clone()))
                            .collect(),
                    });
                }
            } else if let (Some(d), Some((_, v))) = (&dst, rets.first()) {
                pending.insert(d.clone(), v.clone().unwrap_or(Operand::Int(0)));
            }
            for (i, _) in &rets {
                new_blocks[*i].terminator = Terminator::Jump(post_label.clone());
            }
            new_blocks.append(&mut post_vec);
        } else {
            // Duplicate the continuation once per return.
            let mut all_region: Vec<BasicBlock> = Vec::new();
            let region_set: HashSet<&String> = region.iter().collect();
            for b in f.blocks.iter().chain(post_vec.iter()) {
                if region_set.contains(&b.label) {
                    all_region.push(b.clone());
                }
            }
            let region_defs = defs_in(all_region.iter());
            let mut copies = Vec::new();
            for (ri, v) in &rets {
                let cu = self.fresh();
                let cs = format!(".c{cu}");
                let mut r = Renamer::default();
                for l in &region {
                    r.labels.insert(l.clone(), format!("{l}{cs}"));
                }
                for v in &region_defs {
                    r.regs.insert(v.clone(), Operand::Reg(Vreg(format!("{}{cs}", v.0))));
                }
                if let Some(d) = &dst {
                    r.regs.insert(d.clone(), v.clone().unwrap_or(Operand::Int(0)));
                }
                for b in &all_region {
                    let mut c = b.clone();
                    for p in &mut c.phis {
                        p.incoming.retain(|(_, l)| region_set.contains(l));
                    }
                    r.block(&mut c);
                    let dd = self.depth.get(&b.label).copied().unwrap_or(0);
                    self.depth.insert(c.label.clone(), dd);
                    copies.push(c);
                }
                new_blocks[*ri].terminator = Terminator::Jump(format!("{post_label}{cs}"));
            }
            new_blocks.append(&mut post_vec);
            new_blocks.append(&mut copies);
        }
        let tail = f.blocks.split_off(insert_at);
        f.blocks.extend(new_blocks);
        f.blocks.extend(tail);
        if !pending.is_empty() {
            substitute(f, pending);
        }
        Ok(true)
    }

    fn unroll_one(&mut self, f: &mut Function) -> Result<bool, PassError> {
        let cfg = Cfg::from_function(f)?;
        let back = cfg.back_edges();
        if back.is_empty() {
            return Ok(false);
        }
        let rpo = cfg.reverse_postorder();
        let pos = |n: usize| rpo.iter().position(|&x| x == n).unwrap_or(usize::MAX);
        let h = back.iter().map(|&(_, h)| h).min_by_key(|&h| pos(h)).unwrap();
        let latches: Vec<usize> = back.iter().filter(|&&(_, t)| t == h).map(|&(l, _)| l).collect();
        let mut body: BTreeSet<usize> = BTreeSet::new();
        body.insert(h);
        let mut stack = latches.clone();
        while let Some(n) = stack.pop() {
            if body.insert(n) {
                stack.extend(cfg.preds(n));
            }
        }
        let hl = cfg.nodes[h].clone();
        let entries: Vec<usize> = cfg.preds(h).into_iter().filter(|p| !body.contains(p)).collect();
        let [entry] = entries.as_slice() else {
            return Err(PassError::UnsupportedLoop {
                header: hl,
                reason: format!("{} entry edges, expected 1", entries.len()),
            });
        };
        let el = cfg.nodes[*entry].clone();

        // Where does the header go on this iteration?
        let hb = &f.blocks[h];
        let mut probe = Function {
            name: String::new(),
            params: vec![],
            ret: None,
            blocks: vec![BasicBlock::new(hb.label.clone(), hb.body.clone(), hb.terminator.clone())],
        };
        let entry_vals: HashMap<Vreg, Operand> = hb
            .phis
            .iter()
            .filter_map(|p| p.incoming.iter().find(|(_, l)| *l == el).map(|(o, _)| (p.dst.clone(), o.clone())))
            .collect();
        substitute(&mut probe, entry_vals);
        fold_function(&mut probe);
        let next = match &probe.blocks[0].terminator {
            Terminator::Jump(t) => Some(t.clone()),
            Terminator::Branch {
                cond,
                then_target,
                else_target,
            } => literal(cond).map(|c| if c.truthy() { then_target.clone() } else { else_target.clone() }),
            Terminator::Return(_) => None,
        };
        let Some(next) = next else {
            return Err(PassError::UnsupportedLoop {
                header: hl,
                reason: "exit condition is not a compile-time constant".into(),
            });
        };
        let idx = f.block_index();
        let next_in_body = idx.get(next.as_str()).is_some_and(|n| body.contains(n));
        if !next_in_body {
            let hb = &mut f.blocks[h];
            for p in &mut hb.phis {
                p.incoming.retain(|(_, l)| *l == el);
            }
            hb.terminator = Terminator::Jump(next);
            return Ok(true);
        }
        let count = self.peels.entry(hl.clone()).or_insert(0);
        if *count >= self.cfg.max_unroll {
            return Err(PassError::BudgetExceeded {
                what: format!("loop `{hl}` trip count"),
                limit: self.cfg.max_unroll,
            });
        }
        *count += 1;

        let uid = self.fresh();
        let sfx = format!(".u{uid}");
        let body_labels: HashSet<String> = body.iter().map(|&n| cfg.nodes[n].clone()).collect();
        let mut r = Renamer::default();
        for l in &body_labels {
            r.labels.insert(l.clone(), format!("{l}{sfx}"));
        }
        let body_defs = defs_in(body.iter().map(|&n| &f.blocks[n]));
        for v in &body_defs {
            r.regs.insert(v.clone(), Operand::Reg(Vreg(format!("{}{sfx}", v.0))));
        }
        let latch_labels: Vec<String> = latches.iter().map(|&l| cfg.nodes[l].clone()).collect();
        let mut clones = Vec::new();
        for &n in &body {
            let mut c = f.blocks[n].clone();
            if n == h {
                for p in &mut c.phis {
                    p.incoming.retain(|(_, l)| *l == el);
                }
            }
            r.block(&mut c);
            if latch_labels.contains(&f.blocks[n].label) {
                let hcopy = format!("{hl}{sfx}");
                for t in c.terminator.targets_mut() {
                    if *t == hcopy {
                        *t = hl.clone();
                    }
                }
            }
            let dd = self.depth.get(&f.blocks[n].label).copied().unwrap_or(0);
            self.depth.insert(c.label.clone(), dd);
            clones.push(c);
        }
        // Entry now enters the peeled copy.
        for t in f.blocks[*entry].terminator.targets_mut() {
            if *t == hl {
                *t = format!("{hl}{sfx}");
            }
        }
        // Header receives its first values from the peeled latches.
        for p in &mut f.blocks[h].phis {
            let mut inc: Vec<(Operand, String)> = p.incoming.iter().filter(|(_, l)| *l != el).cloned().collect();
            for (o, l) in &p.incoming {
                if latch_labels.contains(l) {
                    let mut o2 = o.clone();
                    r.operand(&mut o2);
                    inc.push((o2, format!("{l}{sfx}")));
                }
            }
            p.incoming = inc;
        }
        // Exits gain incomings from the peeled copies of their predecessors.
        for (bi, b) in f.blocks.iter_mut().enumerate() {
            if body.contains(&bi) {
                continue;
            }
            for p in &mut b.phis {
                let mut extra = Vec::new();
                for (o, l) in &p.incoming {
                    if body_labels.contains(l) {
                        let mut o2 = o.clone();
                        r.operand(&mut o2);
                        extra.push((o2, format!("{l}{sfx}")));
                    }
                }
                p.incoming.extend(extra);
            }
        }
        let tail = f.blocks.split_off(h);
        f.blocks.extend(clones);
        f.blocks.extend(tail);
        Ok(true)
    }
}

/// Inlines every call reachable from the entry and unrolls every loop,
/// producing a call-free acyclic entry function. Other functions are dropped.
pub fn flatten(module: &Module, cfg: FlattenConfig) -> Result<Module, PassError> {
    let entry = module
        .entry_function()
        .ok_or_else(|| PassError::NoEntry(module.entry.clone()))?;
    let mut fl = Flattener {
        funcs: module.functions.iter().map(|f| (f.name.as_str(), f)).collect(),
        cfg,
        uid: 0,
        depth: HashMap::new(),
        peels: HashMap::new(),
    };
    let mut f = entry.clone();
    loop {
        simplify_cfg(&mut f);
        if fl.inline_one(&mut f)? {
            continue;
        }
        if fl.unroll_one(&mut f)? {
            continue;
        }
        break;
    }
    simplify_cfg(&mut f);
    let mut m = module.clone();
    m.functions = vec![f];
    Ok(m)
}

// ---------------------------------------------------------------------------
// Peephole rewriting

#[derive(Clone, Debug, PartialEq)]
pub enum AngleTpl {
    Var(usize),
    Sum(usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateTpl {
    pub kind: GateKind,
    pub qubits: Vec<usize>,
    pub angle: Option<AngleTpl>,
}

impl GateTpl {
    pub fn new(kind: GateKind, qubits: &[usize]) -> Self {
        GateTpl {
            kind,
            qubits: qubits.to_vec(),
            angle: None,
        }
    }

    pub fn rot(kind: GateKind, q: usize, angle: AngleTpl) -> Self {
        GateTpl {
            kind,
            qubits: vec![q],
            angle: Some(angle),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RewriteRule {
    pub name: String,
    pub pattern: Vec<GateTpl>,
    pub replacement: Vec<GateTpl>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuleError {
    #[error("rule {0}: pattern must be non-empty and longer than its replacement")]
    NotReducing(String),
    #[error("rule {0}: malformed template ({1})")]
    Malformed(String, String),
    #[error("rule {0}: replacement is not equivalent to pattern")]
    NotEquivalent(String),
}

impl RewriteRule {
    /// Registers a rule after checking it against the matrix oracle.
    pub fn new(name: &str, pattern: Vec<GateTpl>, replacement: Vec<GateTpl>) -> Result<Self, RuleError> {
        let bad = |why: &str| RuleError::Malformed(name.into(), why.into());
        if pattern.is_empty() || replacement.len() >= pattern.len() {
            return Err(RuleError::NotReducing(name.into()));
        }
        let first: HashSet<usize> = pattern[0].qubits.iter().copied().collect();
        let mut angle_vars = HashSet::new();
        for g in &pattern {
            if g.kind.arity() != Some(g.qubits.len()) || g.kind.takes_angle() != g.angle.is_some() {
                return Err(bad("gate arity or angle"));
            }
            if g.qubits.iter().any(|q| !first.contains(q)) {
                return Err(bad("first pattern gate must bind every qubit variable"));
            }
            match &g.angle {
                Some(AngleTpl::Var(v)) => {
                    if !angle_vars.insert(*v) {
                        return Err(bad("angle variable bound twice"));
                    }
                }
                Some(AngleTpl::Sum(..)) => return Err(bad("pattern angles must be variables")),
                None => {}
            }
        }
        for g in &replacement {
            if g.kind.arity() != Some(g.qubits.len()) || g.kind.takes_angle() != g.angle.is_some() {
                return Err(bad("gate arity or angle"));
            }
            if g.qubits.iter().any(|q| !first.contains(q)) {
                return Err(bad("replacement uses an unbound qubit"));
            }
            let used = match &g.angle {
                Some(AngleTpl::Var(a)) => vec![*a],
                Some(AngleTpl::Sum(a, b)) => vec![*a, *b],
                None => vec![],
            };
            if used.iter().any(|a| !angle_vars.contains(a)) {
                return Err(bad("replacement uses an unbound angle"));
            }
        }
        let nq = first.iter().max().map_or(0, |m| m + 1);
        if nq > 2 {
            return Err(bad("more than two qubit variables"));
        }
        for sample in [[0.37, -1.21, 2.9], [1.91, 0.44, -2.4]] {
            let inst = |ts: &[GateTpl]| -> Vec<(GateKind, Vec<usize>, Option<f64>)> {
                ts.iter()
                    .map(|g| {
                        let a = g.angle.as_ref().map(|a| match a {
                            AngleTpl::Var(v) => sample[*v % 3],
                            AngleTpl::Sum(x, y) => sample[*x % 3] + sample[*y % 3],
                        });
                        (g.kind.clone(), g.qubits.clone(), a)
                    })
                    .collect()
            };
            let u = circuit_unitary(nq, &inst(&pattern));
            let v = circuit_unitary(nq, &inst(&replacement));
            if !equal_up_to_phase(&u, &v, 1e-10) {
                return Err(RuleError::NotEquivalent(name.into()));
            }
        }
        Ok(RewriteRule {
            name: name.into(),
            pattern,
            replacement,
        })
    }
}

/// The default rule set.
pub fn default_rules() -> Vec<RewriteRule> {
    use GateKind::*;
    let pair = |a: GateKind, b: GateKind| vec![GateTpl::new(a, &[0]), GateTpl::new(b, &[0])];
    let one = |k: GateKind| vec![GateTpl::new(k, &[0])];
    let specs: Vec<(&str, Vec<GateTpl>, Vec<GateTpl>)> = vec![
        ("hh", pair(H, H), vec![]),
        ("xx", pair(X, X), vec![]),
        ("zz", pair(Z, Z), vec![]),
        ("tt", pair(T, T), one(S)),
        ("ss", pair(S, S), one(Z)),
        ("t_tdg", pair(T, Tdg), vec![]),
        ("tdg_t", pair(Tdg, T), vec![]),
        ("s_sdg", pair(S, Sdg), vec![]),
        ("sdg_s", pair(Sdg, S), vec![]),
        (
            "rz_merge",
            vec![GateTpl::rot(Rz, 0, AngleTpl::Var(0)), GateTpl::rot(Rz, 0, AngleTpl::Var(1))],
            vec![GateTpl::rot(Rz, 0, AngleTpl::Sum(0, 1))],
        ),
        ("cx_cx", vec![GateTpl::new(Cx, &[0, 1]), GateTpl::new(Cx, &[0, 1])], vec![]),
    ];
    specs
        .into_iter()
        .map(|(n, p, r)| RewriteRule::new(n, p, r).expect("default rule is sound"))
        .collect()
}

fn touches(ins: &Instruction, qs: &[QubitRef]) -> bool {
    match ins {
        Instruction::Call { .. } => true,
        _ => ins.qubits().iter().any(|q| qs.contains(q)),
    }
}

struct Binding {
    qubits: Vec<Option<QubitRef>>,
    angles: Vec<Option<f64>>,
}

fn match_gate(ins: &Instruction, t: &GateTpl, bind: &mut Binding) -> bool {
    let Instruction::Gate { kind, qubits, angle } = ins else {
        return false;
    };
    if *kind != t.kind || qubits.len() != t.qubits.len() {
        return false;
    }
    for (q, v) in qubits.iter().zip(&t.qubits) {
        match &bind.qubits[*v] {
            Some(b) if b != q => return false,
            Some(_) => {}
            None => {
                if bind.qubits.iter().flatten().any(|b| b == q) {
                    return false;
                }
                bind.qubits[*v] = Some(q.clone());
            }
        }
    }
    match (&t.angle, angle) {
        (None, None) => true,
        (Some(AngleTpl::Var(v)), Some(Operand::Float(a))) => {
            bind.angles[*v] = Some(*a);
            true
        }
        _ => false,
    }
}

fn try_rule(body: &[Instruction], i: usize, rule: &RewriteRule) -> Option<(Vec<usize>, Binding)> {
    let mut bind = Binding {
        qubits: vec![None; 2],
        angles: vec![None; 3],
    };
    if !match_gate(&body[i], &rule.pattern[0], &mut bind) {
        return None;
    }
    let bound: Vec<QubitRef> = bind.qubits.iter().flatten().cloned().collect();
    let mut idxs = vec![i];
    let mut at = i;
    for t in &rule.pattern[1..] {
        let j = (at + 1..body.len()).find(|&j| touches(&body[j], &bound))?;
        if !match_gate(&body[j], t, &mut bind) {
            return None;
        }
        idxs.push(j);
        at = j;
    }
    Some((idxs, bind))
}

fn instantiate(t: &GateTpl, b: &Binding) -> Instruction {
    Instruction::Gate {
        kind: t.kind.clone(),
        qubits: t.qubits.iter().map(|v| b.qubits[*v].clone().expect("bound")).collect(),
        angle: t.angle.as_ref().map(|a| {
            Operand::Float(match a {
                AngleTpl::Var(v) => b.angles[*v].expect("bound"),
                AngleTpl::Sum(x, y) => b.angles[*x].expect("bound") + b.angles[*y].expect("bound"),
            })
        }),
    }
}

/// Rewrites one block to a fixpoint. Returns the number of rule applications.
pub fn peephole_block(body: &mut Vec<Instruction>, rules: &[RewriteRule]) -> usize {
    let mut applied = 0;
    'scan: loop {
        for i in 0..body.len() {
            for rule in rules {
                if let Some((idxs, bind)) = try_rule(body, i, rule) {
                    let last = *idxs.last().unwrap();
                    let repl: Vec<Instruction> = rule.replacement.iter().map(|t| instantiate(t, &bind)).collect();
                    let at = last + 1 - idxs.len();
                    for &j in idxs.iter().rev() {
                        body.remove(j);
                    }
                    for (k, r) in repl.into_iter().enumerate() {
                        body.insert(at + k, r);
                    }
                    applied += 1;
                    continue 'scan;
                }
            }
        }
        return applied;
    }
}

/// Applies `rules` within each basic block until no rule matches.
pub fn peephole(module: &Module, rules: &[RewriteRule]) -> Module {
    let mut m = module.clone();
    for f in &mut m.functions {
        for b in &mut f.blocks {
            peephole_block(&mut b.body, rules);
        }
    }
    m
}
