//! If-conversion: an acyclic CFG becomes one linear sequence of guarded blocks.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::*;
use crate::textir::{fmt_instruction, fmt_operand};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PredError {
    #[error(transparent)]
    Cfg(#[from] CfgError),
    #[error("vreg {0} is defined more than once")]
    NonSsa(String),
    #[error("call to @{0} must be flattened before if-conversion")]
    CallPresent(String),
}

/// Symbolic guard expression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Guard<V> {
    True,
    Var(V),
    /// The guard of another block, referenced by label rather than expanded.
    Block(String),
    Not(Box<Guard<V>>),
    And(Box<Guard<V>>, Box<Guard<V>>),
    Or(Vec<Guard<V>>),
}

impl<V: fmt::Display> fmt::Display for Guard<V> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Guard::True => write!(f, "true"),
            Guard::Var(v) => write!(f, "{v}"),
            Guard::Block(l) => write!(f, "g({l})"),
            Guard::Not(g) => write!(f, "!{g}"),
            Guard::And(a, b) => write!(f, "({a} & {b})"),
            Guard::Or(gs) => {
                write!(f, "(")?;
                for (i, g) in gs.iter().enumerate() {
                    if i > 0 {
                        write!(f, " | ")?;
                    }
                    write!(f, "{g}")?;
                }
                write!(f, ")")
            }
        }
    }
}

impl<V: Clone> Guard<V> {
    /// Substitutes block references with their own guards, recursively.
    pub fn expand(&self, guards: &BTreeMap<String, Guard<V>>) -> Guard<V> {
        match self {
            Guard::Block(l) => guards.get(l).map(|g| g.expand(guards)).unwrap_or(Guard::True),
            Guard::Not(g) => Guard::Not(Box::new(g.expand(guards))),
            Guard::And(a, b) => Guard::And(Box::new(a.expand(guards)), Box::new(b.expand(guards))),
            Guard::Or(gs) => Guard::Or(gs.iter().map(|g| g.expand(guards)).collect()),
            g => g.clone(),
        }
    }
}

fn edge_guard(pred_guard_is_true: bool, pred: &str, kind: &EdgeKind) -> Guard<Vreg> {
    let base = if pred_guard_is_true {
        Guard::True
    } else {
        Guard::Block(pred.to_string())
    };
    let cond = |o: &Operand| match o {
        Operand::Reg(v) => Guard::Var(v.clone()),
        Operand::Bool(false) => Guard::Not(Box::new(Guard::True)),
        _ => Guard::True,
    };
    let arm = match kind {
        EdgeKind::Unconditional => return base,
        EdgeKind::TrueArm(c) => cond(c),
        EdgeKind::FalseArm(c) => Guard::Not(Box::new(cond(c))),
    };
    match base {
        Guard::True => arm,
        b => Guard::And(Box::new(b), Box::new(arm)),
    }
}

/// Guard of every block: OR over incoming edges of AND(guard(pred), edge condition).
pub fn compute_guards(cfg: &Cfg) -> Result<BTreeMap<String, Guard<Vreg>>, CfgError> {
    let order = cfg.topo_order()?;
    let mut out: BTreeMap<String, Guard<Vreg>> = BTreeMap::new();
    for &n in &order {
        let g = if n == 0 {
            Guard::True
        } else {
            let mut terms: Vec<Guard<Vreg>> = cfg
                .in_edges(n)
                .map(|e| {
                    let pl = &cfg.nodes[e.from];
                    let is_true = out.get(pl) == Some(&Guard::True);
                    edge_guard(is_true, pl, &e.kind)
                })
                .collect();
            match terms.len() {
                0 => Guard::Not(Box::new(Guard::True)),
                1 => terms.pop().unwrap(),
                _ if terms.contains(&Guard::True) => Guard::True,
                _ => Guard::Or(terms),
            }
        };
        out.insert(cfg.nodes[n].clone(), g);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuardedBlock {
    pub label: String,
    /// `Bool(true)` for unconditional blocks, otherwise a bool vreg.
    pub guard: Operand,
    pub body: Vec<Instruction>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum GItem {
    /// Executed unconditionally (guard and phi-select computations).
    Op(Instruction),
    Block(GuardedBlock),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuardedFunction {
    pub name: String,
    pub items: Vec<GItem>,
    /// Vregs introduced by if-conversion.
    pub new_vregs: usize,
}

impl GuardedFunction {
    pub fn blocks(&self) -> impl Iterator<Item = &GuardedBlock> {
        self.items.iter().filter_map(|i| match i {
            GItem::Block(b) => Some(b),
            GItem::Op(_) => None,
        })
    }
}

struct Fresh<'a> {
    taken: &'a HashSet<String>,
    n: usize,
    made: usize,
}

impl Fresh<'_> {
    fn next(&mut self, hint: &str) -> Vreg {
        loop {
            let name = format!("if.{hint}{}", self.n);
            self.n += 1;
            if !self.taken.contains(&name) {
                self.made += 1;
                return Vreg(name);
            }
        }
    }
}

/// Postdominator sets of an acyclic CFG; `pdom[a][b]` is true when every path
/// from `a` to a return passes through `b`.
fn postdominators(cfg: &Cfg, order: &[usize]) -> Vec<Vec<bool>> {
    let n = cfg.nodes.len();
    let mut pdom = vec![vec![false; n]; n];
    for &a in order.iter().rev() {
        let succ = cfg.succs(a);
        if let Some((&first, rest)) = succ.split_first() {
            let mut set = pdom[first].clone();
            for &s in rest {
                for (x, y) in set.iter_mut().zip(&pdom[s]) {
                    *x &= *y;
                }
            }
            pdom[a] = set;
        }
        pdom[a][a] = true;
    }
    pdom
}

fn select(dst: &Vreg, cond: Operand, t: Operand, e: Operand) -> GItem {
    GItem::Op(Instruction::Select {
        dst: dst.clone(),
        cond,
        then_val: t,
        else_val: e,
    })
}

/// Linearizes an acyclic, call-free function into guarded blocks.
///
/// Guard values are tested by truthiness, so every guard computation is a
/// `select`; a skipped block's stale values are always masked by a false guard.
/// A block that is control-equivalent to its immediate dominator reuses that
/// guard instead of OR-ing its incoming edges. Edge guards are materialized
/// only when a merge guard or a phi needs them.
pub fn if_convert(f: &Function) -> Result<GuardedFunction, PredError> {
    let cfg = Cfg::from_function(f)?;
    let order = cfg.topo_order()?;
    let mut taken = HashSet::new();
    for (p, _) in &f.params {
        taken.insert(p.0.clone());
    }
    for b in &f.blocks {
        for d in b.phis.iter().map(|p| &p.dst).chain(b.body.iter().filter_map(|i| i.def())) {
            if !taken.insert(d.0.clone()) {
                return Err(PredError::NonSsa(d.to_string()));
            }
        }
        for i in &b.body {
            if let Instruction::Call { callee, .. } = i {
                return Err(PredError::CallPresent(callee.clone()));
            }
        }
    }
    let n = f.blocks.len();
    let idom = cfg.idoms();
    let pdom = postdominators(&cfg, &order);
    let equiv: Vec<Option<usize>> = (0..n)
        .map(|b| match idom[b] {
            Some(a) if a != b && pdom[a][b] => Some(a),
            _ => None,
        })
        .collect();
    let idx = f.block_index();
    let mut needed: HashSet<(usize, usize)> = HashSet::new();
    for b in 1..n {
        if equiv[b].is_none() {
            needed.extend(cfg.in_edges(b).map(|e| (e.from, b)));
        }
        for phi in &f.blocks[b].phis {
            if phi.incoming.len() > 1 {
                needed.extend(phi.incoming.iter().filter_map(|(_, l)| idx.get(l.as_str()).map(|&p| (p, b))));
            }
        }
    }

    let mut fresh = Fresh {
        taken: &taken,
        n: 0,
        made: 0,
    };
    let mut items = Vec::new();
    let mut block_guard: Vec<Operand> = vec![Operand::Bool(false); n];
    let mut edge_guards: HashMap<(usize, usize), Operand> = HashMap::new();
    let tru = Operand::Bool(true);
    let fls = Operand::Bool(false);

    for &b in &order {
        let blk = &f.blocks[b];
        let g = if b == 0 {
            tru.clone()
        } else if let Some(a) = equiv[b] {
            block_guard[a].clone()
        } else {
            let incoming: Vec<Operand> = cfg
                .in_edges(b)
                .map(|e| edge_guards.get(&(e.from, b)).cloned().unwrap_or(fls.clone()))
                .collect();
            if incoming.is_empty() {
                fls.clone()
            } else if incoming.contains(&tru) {
                tru.clone()
            } else {
                let mut acc = incoming[0].clone();
                for e in &incoming[1..] {
                    let d = fresh.next("g");
                    items.push(select(&d, acc, tru.clone(), e.clone()));
                    acc = Operand::Reg(d);
                }
                acc
            }
        };
        block_guard[b] = g.clone();

        for phi in &blk.phis {
            let inc: Vec<(Operand, Operand)> = phi
                .incoming
                .iter()
                .map(|(v, l)| {
                    let p = idx.get(l.as_str()).copied();
                    let eg = p.and_then(|p| edge_guards.get(&(p, b)).cloned()).unwrap_or(fls.clone());
                    (eg, v.clone())
                })
                .collect();
            if inc.len() == 1 {
                items.push(select(&phi.dst, tru.clone(), inc[0].1.clone(), inc[0].1.clone()));
                continue;
            }
            let mut acc = inc.last().unwrap().1.clone();
            for i in (0..inc.len() - 1).rev() {
                let d = if i == 0 { phi.dst.clone() } else { fresh.next("sel") };
                items.push(select(&d, inc[i].0.clone(), inc[i].1.clone(), acc));
                acc = Operand::Reg(d);
            }
        }

        items.push(GItem::Block(GuardedBlock {
            label: blk.label.clone(),
            guard: g.clone(),
            body: blk.body.clone(),
        }));

        match &blk.terminator {
            Terminator::Jump(_) => {
                let t = cfg.succs(b)[0];
                if needed.contains(&(b, t)) {
                    edge_guards.insert((b, t), g.clone());
                }
            }
            Terminator::Branch { cond, .. } => {
                let out: Vec<&CfgEdge> = cfg.out_edges(b).collect();
                let (t, e) = match &out[0].kind {
                    EdgeKind::TrueArm(_) => (out[0].to, out[1].to),
                    _ => (out[1].to, out[0].to),
                };
                if needed.contains(&(b, t)) {
                    let gt = if g == tru {
                        cond.clone()
                    } else {
                        let d = fresh.next("e");
                        items.push(select(&d, g.clone(), cond.clone(), fls.clone()));
                        Operand::Reg(d)
                    };
                    edge_guards.insert((b, t), gt);
                }
                if needed.contains(&(b, e)) {
                    let d = fresh.next("e");
                    items.push(select(&d, cond.clone(), fls.clone(), g.clone()));
                    edge_guards.insert((b, e), Operand::Reg(d));
                }
            }
            Terminator::Return(_) => {}
        }
    }
    Ok(GuardedFunction {
        name: f.name.clone(),
        items,
        new_vregs: fresh.made,
    })
}

/// Human-readable guarded form.
pub fn emit_guarded(gf: &GuardedFunction) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "guarded @{} {{", gf.name);
    for it in &gf.items {
        match it {
            GItem::Op(i) => {
                let _ = writeln!(out, "  {}", fmt_instruction(i));
            }
            GItem::Block(b) => {
                let _ = writeln!(out, "  block {} if {} {{", b.label, fmt_operand(&b.guard));
                for i in &b.body {
                    let _ = writeln!(out, "    {}", fmt_instruction(i));
                }
                let _ = writeln!(out, "  }}");
            }
        }
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textir::parse;

    fn func(src: &str) -> Function {
        parse(src).unwrap().functions.remove(0)
    }

    const DIAMOND: &str = "module d\nattrs required_qubits=2 required_results=1\nfunc @main() {\nblock entry:\n  h q0\n  mz q0 -> r0\n  %c = read_result r0\n  br %c, then, else\nblock then:\n  x q1\n  jmp merge\nblock else:\n  z q1\n  jmp merge\nblock merge:\n  %v = phi [1, then], [2, else]\n  output int %v\n  ret\n}\n";

    #[test]
    fn guards_of_triangle() {
        let f = func("module t\nfunc @main() {\nblock entry:\n  %c = read_result r0\n  br %c, then, merge\nblock then:\n  jmp merge\nblock merge:\n  ret\n}\n");
        let g = compute_guards(&Cfg::from_function(&f).unwrap()).unwrap();
        assert_eq!(g["entry"], Guard::True);
        assert_eq!(g["then"], Guard::Var(Vreg::new("c")));
        assert_eq!(
            g["merge"],
            Guard::Or(vec![
                Guard::Not(Box::new(Guard::Var(Vreg::new("c")))),
                Guard::Block("then".into())
            ])
        );
    }

    #[test]
    fn straight_chain_all_true() {
        let f = func("module t\nfunc @main() {\nblock a:\n  jmp b\nblock b:\n  jmp c\nblock c:\n  ret\n}\n");
        let g = compute_guards(&Cfg::from_function(&f).unwrap()).unwrap();
        assert!(g.values().all(|g| *g == Guard::True));
    }

    #[test]
    fn nested_guard_is_conjunction() {
        let f = func(
            "module n\nfunc @main() {\nblock entry:\n  %cond = read_result r0\n  br %cond, outer, done\nblock outer:\n  mz q1 -> r1\n  %one = read_result r1\n  br %one, inner, done\nblock inner:\n  rz(0.5) q0\n  jmp done\nblock done:\n  ret\n}\n",
        );
        let g = compute_guards(&Cfg::from_function(&f).unwrap()).unwrap();
        let inner = g["inner"].expand(&g);
        assert_eq!(
            inner,
            Guard::And(
                Box::new(Guard::Var(Vreg::new("cond"))),
                Box::new(Guard::Var(Vreg::new("one")))
            )
        );
        let gf = if_convert(&f).unwrap();
        let labels: Vec<&str> = gf.blocks().map(|b| b.label.as_str()).collect();
        assert_eq!(labels, vec!["entry", "outer", "inner", "done"]);
    }

    #[test]
    fn single_block_identity() {
        let f = func("module s\nfunc @main() {\nblock entry:\n  h q0\n  ret\n}\n");
        let gf = if_convert(&f).unwrap();
        assert_eq!(gf.items.len(), 1);
        let b = gf.blocks().next().unwrap();
        assert_eq!(b.guard, Operand::Bool(true));
        assert_eq!(b.body, f.blocks[0].body);
        assert_eq!(gf.new_vregs, 0);
    }

    #[test]
    fn diamond_shape() {
        let f = func(DIAMOND);
        let gf = if_convert(&f).unwrap();
        assert_eq!(gf.blocks().count(), 4);
        let text = emit_guarded(&gf);
        assert!(text.contains("%v = select"), "{text}");
        // merge reuses the entry guard; one edge guard for the else arm
        assert!(gf.new_vregs <= 2 + 1);
        let merge = gf.blocks().last().unwrap();
        assert_eq!(merge.guard, Operand::Bool(true));
    }

    #[test]
    fn rejects_cycles_and_calls() {
        let f = func("module c\nfunc @main() {\nblock a:\n  jmp a\n}\n");
        assert!(matches!(if_convert(&f), Err(PredError::Cfg(CfgError::CycleDetected(_)))));
        let f = func("module c\nfunc @main() {\nblock a:\n  call @g()\n  ret\n}\nfunc @g() {\nblock e:\n  ret\n}\n");
        assert!(matches!(if_convert(&f), Err(PredError::CallPresent(_))));
    }
}
