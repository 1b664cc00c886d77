//! Chaitin-style register allocation over the linearized guarded program.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::*;
use crate::predication::{GItem, GuardedBlock, GuardedFunction};

pub const DEFAULT_REGISTERS: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegallocError {
    #[error("register pressure exceeds real-time register file: K={k}, at least {needed_hint} registers needed")]
    RegisterPressureExceeded { k: usize, needed_hint: usize },
}

/// Half-open live interval `[start, end)` over linear instruction indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub start: usize,
    pub end: usize,
}

impl Interval {
    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, o: &Interval) -> bool {
        !self.is_empty() && !o.is_empty() && self.start < o.end && o.start < self.end
    }
}

/// Live ranges in definition order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LiveRanges {
    pub ranges: Vec<(Vreg, Interval)>,
}

impl LiveRanges {
    pub fn get(&self, v: &Vreg) -> Option<Interval> {
        self.ranges.iter().find(|(x, _)| x == v).map(|(_, i)| *i)
    }

    /// Maximum number of simultaneously live ranges.
    pub fn max_overlap(&self) -> usize {
        let mut ev: Vec<(usize, i32)> = Vec::new();
        for (_, r) in &self.ranges {
            if !r.is_empty() {
                ev.push((r.start, 1));
                ev.push((r.end, -1));
            }
        }
        ev.sort_by_key(|&(p, d)| (p, d));
        let (mut cur, mut best) = (0i32, 0i32);
        for (_, d) in ev {
            cur += d;
            best = best.max(cur);
        }
        best as usize
    }
}

fn for_each_use(ins: &Instruction, mut f: impl FnMut(&Vreg)) {
    for o in ins.operands() {
        if let Operand::Reg(v) = o {
            f(v);
        }
    }
}

/// Linear index of each item position: ops take one slot, a block takes one
/// slot for its guard check plus one per body instruction.
pub fn compute_liveness(gf: &GuardedFunction) -> LiveRanges {
    let mut def_at: Vec<(Vreg, usize)> = Vec::new();
    let mut last: HashMap<Vreg, usize> = HashMap::new();
    let mut idx = 0usize;
    let touch = |v: &Vreg, at: usize, last: &mut HashMap<Vreg, usize>| {
        let e = last.entry(v.clone()).or_insert(at);
        *e = (*e).max(at);
    };
    for it in &gf.items {
        match it {
            GItem::Op(i) => {
                for_each_use(i, |v| touch(v, idx, &mut last));
                if let Some(d) = i.def() {
                    def_at.push((d.clone(), idx));
                }
                idx += 1;
            }
            GItem::Block(b) => {
                let gi = idx;
                idx += 1;
                for i in &b.body {
                    for_each_use(i, |v| touch(v, idx, &mut last));
                    if let Some(d) = i.def() {
                        def_at.push((d.clone(), idx));
                    }
                    idx += 1;
                }
                if let Operand::Reg(g) = &b.guard {
                    touch(g, gi, &mut last);
                    touch(g, idx - 1, &mut last);
                }
            }
        }
    }
    LiveRanges {
        ranges: def_at
            .into_iter()
            .map(|(v, d)| {
                let end = last.get(&v).copied().filter(|&u| u > d).unwrap_or(d);
                (v, Interval { start: d, end })
            })
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterferenceGraph {
    pub nodes: Vec<Vreg>,
    pub adj: Vec<BTreeSet<usize>>,
}

impl InterferenceGraph {
    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(|a| a.len()).sum::<usize>() / 2
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adj[a].contains(&b)
    }
}

pub fn build_interference(ranges: &LiveRanges) -> InterferenceGraph {
    let live: Vec<&(Vreg, Interval)> = ranges.ranges.iter().filter(|(_, r)| !r.is_empty()).collect();
    let n = live.len();
    let mut adj = vec![BTreeSet::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            if live[i].1.overlaps(&live[j].1) {
                adj[i].insert(j);
                adj[j].insert(i);
            }
        }
    }
    InterferenceGraph {
        nodes: live.iter().map(|(v, _)| v.clone()).collect(),
        adj,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegFile {
    pub k: usize,
    pub assignment: BTreeMap<Vreg, u32>,
}

impl RegFile {
    pub fn colors_used(&self) -> usize {
        self.assignment.values().collect::<BTreeSet<_>>().len()
    }
}

fn greedy_clique(g: &InterferenceGraph, alive: &[bool]) -> usize {
    let mut cand: Vec<usize> = (0..g.nodes.len()).filter(|&i| alive[i]).collect();
    cand.sort_by_key(|&i| std::cmp::Reverse(g.adj[i].iter().filter(|&&j| alive[j]).count()));
    let mut best = 0;
    for &seed in &cand {
        let mut clique = vec![seed];
        for &c in &cand {
            if c != seed && clique.iter().all(|&m| g.has_edge(m, c)) {
                clique.push(c);
            }
        }
        best = best.max(clique.len());
    }
    best
}

/// Simplify/select coloring with `k` registers and no spilling.
pub fn color(g: &InterferenceGraph, k: usize) -> Result<RegFile, RegallocError> {
    let n = g.nodes.len();
    let mut alive = vec![true; n];
    let mut degree: Vec<usize> = g.adj.iter().map(|a| a.len()).collect();
    let mut stack = Vec::with_capacity(n);
    for _ in 0..n {
        let Some(pick) = (0..n).find(|&i| alive[i] && degree[i] < k) else {
            let hint = greedy_clique(g, &alive).max(k + 1);
            return Err(RegallocError::RegisterPressureExceeded { k, needed_hint: hint });
        };
        alive[pick] = false;
        for &j in &g.adj[pick] {
            degree[j] = degree[j].saturating_sub(1);
        }
        stack.push(pick);
    }
    let mut col: Vec<Option<u32>> = vec![None; n];
    while let Some(v) = stack.pop() {
        let used: BTreeSet<u32> = g.adj[v].iter().filter_map(|&j| col[j]).collect();
        let c = (0..k as u32).find(|c| !used.contains(c)).expect("simplify guarantees a free color");
        col[v] = Some(c);
    }
    Ok(RegFile {
        k,
        assignment: g.nodes.iter().cloned().zip(col.into_iter().map(|c| c.unwrap())).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub ranges: LiveRanges,
    pub regfile: RegFile,
}

pub fn allocate(gf: &GuardedFunction, k: usize) -> Result<Allocation, RegallocError> {
    let ranges = compute_liveness(gf);
    let g = build_interference(&ranges);
    let regfile = color(&g, k)?;
    Ok(Allocation { ranges, regfile })
}

pub fn reg_name(c: u32) -> Vreg {
    Vreg(format!("r.{c}"))
}

fn rewrite_instr(ins: &Instruction, a: &RegFile) -> Option<Instruction> {
    if let Some(d) = ins.def() {
        if ins.is_pure() && !a.assignment.contains_key(d) {
            return None;
        }
    }
    let mut out = ins.clone();
    for o in out.operands_mut() {
        if let Operand::Reg(v) = o {
            if let Some(c) = a.assignment.get(v) {
                *o = Operand::Reg(reg_name(*c));
            }
        }
    }
    match &mut out {
        Instruction::ReadResult { dst, .. }
        | Instruction::BinOp { dst, .. }
        | Instruction::Cmp { dst, .. }
        | Instruction::Select { dst, .. } => {
            *dst = reg_name(a.assignment[dst]);
        }
        _ => {}
    }
    Some(out)
}

/// Renames vregs to their physical registers and drops dead pure definitions.
/// The result is no longer SSA: registers are reused.
pub fn rewrite(gf: &GuardedFunction, a: &RegFile) -> GuardedFunction {
    let items = gf
        .items
        .iter()
        .filter_map(|it| match it {
            GItem::Op(i) => rewrite_instr(i, a).map(GItem::Op),
            GItem::Block(b) => Some(GItem::Block(GuardedBlock {
                label: b.label.clone(),
                guard: match &b.guard {
                    Operand::Reg(v) => Operand::Reg(reg_name(a.assignment[v])),
                    o => o.clone(),
                },
                body: b.body.iter().filter_map(|i| rewrite_instr(i, a)).collect(),
            })),
        })
        .collect();
    GuardedFunction {
        name: gf.name.clone(),
        items,
        new_vregs: gf.new_vregs,
    }
}
