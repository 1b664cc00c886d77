//! Linear ion-trap backend: placement, gate layering, transport planning and
//! lowering to the executable program.

use std::collections::{BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::*;
use crate::predication::{GItem, GuardedFunction};

/// Exhaustive transport search is used up to this many ions...
pub const EXACT_MAX_IONS: usize = 7;
/// ...and this many slots.
pub const EXACT_MAX_SLOTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QccdError {
    #[error("trap has {slots} slots but the program needs {qubits} qubits")]
    TrapTooSmall { slots: usize, qubits: usize },
    #[error("invalid trap layout: {0}")]
    BadTrap(String),
    #[error("qubit operand {0} is not a resolved index")]
    UnresolvedQubit(String),
    #[error("qubit q{0} is outside the declared range")]
    QubitRange(u32),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrapLayout {
    pub slots: usize,
    pub zones: Vec<(usize, usize)>,
}

impl TrapLayout {
    /// At least four slots; zones (0,1), (2,3), ... up to five of them.
    pub fn default_for(qubits: usize) -> Self {
        let slots = qubits.max(4);
        let nz = (slots / 2).min(5);
        TrapLayout {
            slots,
            zones: (0..nz).map(|i| (2 * i, 2 * i + 1)).collect(),
        }
    }

    pub fn validate(&self, qubits: usize) -> Result<(), QccdError> {
        if self.slots < qubits {
            return Err(QccdError::TrapTooSmall {
                slots: self.slots,
                qubits,
            });
        }
        if self.zones.is_empty() {
            return Err(QccdError::BadTrap("no gate zones".into()));
        }
        let mut used = BTreeSet::new();
        for &(a, b) in &self.zones {
            if b != a + 1 || b >= self.slots {
                return Err(QccdError::BadTrap(format!("zone ({a},{b}) is not an adjacent in-range pair")));
            }
            if !used.insert(a) || !used.insert(b) {
                return Err(QccdError::BadTrap(format!("zone ({a},{b}) overlaps another zone")));
            }
        }
        Ok(())
    }

    pub fn zone_of_slot(&self, s: usize) -> Option<usize> {
        self.zones.iter().position(|&(a, b)| a == s || b == s)
    }
}

/// Which ion sits in each slot.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Placement {
    pub slots: Vec<Option<u32>>,
}

impl Placement {
    /// Ions in `order` fill slots from the left.
    pub fn from_order(order: &[u32], slots: usize) -> Self {
        let mut s = vec![None; slots];
        for (i, &q) in order.iter().enumerate() {
            s[i] = Some(q);
        }
        Placement { slots: s }
    }

    pub fn slot_of(&self, q: u32) -> Option<usize> {
        self.slots.iter().position(|&x| x == Some(q))
    }

    pub fn apply(&mut self, step: &TransportStep) {
        for &i in &step.swaps {
            self.slots.swap(i, i + 1);
        }
    }

    pub fn ion_count(&self) -> usize {
        self.slots.iter().flatten().count()
    }

    pub fn is_bijective(&self) -> bool {
        let ions: Vec<u32> = self.slots.iter().flatten().copied().collect();
        ions.iter().collect::<BTreeSet<_>>().len() == ions.len()
    }
}

/// One parallel layer of adjacent swaps, each given by its left slot.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TransportStep {
    pub swaps: Vec<usize>,
}

impl TransportStep {
    pub fn is_valid(&self, slots: usize) -> bool {
        self.swaps.windows(2).all(|w| w[0] + 1 < w[1]) && self.swaps.iter().all(|&i| i + 1 < slots)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerOp {
    pub instr: Instruction,
    pub zone: usize,
    /// Slots the operands must occupy; unordered for two-qubit gates.
    pub target: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GateLayer {
    pub ops: Vec<LayerOp>,
}

impl GateLayer {
    pub fn satisfied_by(&self, p: &Placement) -> bool {
        self.ops.iter().all(|op| op_in_place(op, p))
    }
}

pub fn op_in_place(op: &LayerOp, p: &Placement) -> bool {
    let qs = phys_qubits(&op.instr);
    let mut have: Vec<usize> = qs.iter().filter_map(|&q| p.slot_of(q)).collect();
    if have.len() != qs.len() {
        return false;
    }
    have.sort_unstable();
    let mut want = op.target.clone();
    want.sort_unstable();
    have == want
}

/// Qubit indices of a quantum instruction; `Param` references are skipped.
pub fn phys_qubits(i: &Instruction) -> Vec<u32> {
    i.qubits().iter().filter_map(|q| q.index()).collect()
}

// ---------------------------------------------------------------------------
// Placement

/// Two-qubit interaction edges grouped into ASAP time steps.
fn interaction_layers(ops: &[Instruction], nq: usize) -> Vec<Vec<(u32, u32)>> {
    let mut time = vec![0usize; nq];
    let mut layers: Vec<Vec<(u32, u32)>> = Vec::new();
    for i in ops {
        let qs = phys_qubits(i);
        if qs.len() != 2 || qs[0] == qs[1] {
            continue;
        }
        let (a, b) = (qs[0] as usize, qs[1] as usize);
        if a >= nq || b >= nq {
            continue;
        }
        let t = time[a].max(time[b]);
        if layers.len() <= t {
            layers.resize(t + 1, Vec::new());
        }
        layers[t].push((qs[0], qs[1]));
        time[a] = t + 1;
        time[b] = t + 1;
    }
    layers
}

/// Crossings in the layered drawing where every time step repeats the same
/// qubit order, each qubit links to itself in the next layer, and each
/// two-qubit gate links its operands crosswise.
pub fn crossing_count(order: &[u32], layers: &[Vec<(u32, u32)>]) -> usize {
    let mut pos = vec![0i64; order.iter().map(|&q| q as usize + 1).max().unwrap_or(0)];
    for (i, &q) in order.iter().enumerate() {
        pos[q as usize] = i as i64;
    }
    let mut total = 0;
    for layer in layers {
        let mut edges: Vec<(i64, i64)> = order.iter().map(|&q| (pos[q as usize], pos[q as usize])).collect();
        for &(a, b) in layer {
            let (pa, pb) = (pos[a as usize], pos[b as usize]);
            edges.push((pa, pb));
            edges.push((pb, pa));
        }
        for i in 0..edges.len() {
            for j in i + 1..edges.len() {
                if (edges[i].0 - edges[j].0) * (edges[i].1 - edges[j].1) < 0 {
                    total += 1;
                }
            }
        }
    }
    total
}

pub const BARYCENTER_SWEEPS: usize = 4;

/// Barycenter ordering of the qubit-interaction layers followed by an
/// adjacent-swap descent on the crossing count.
pub fn placement_order(ops: &[Instruction], nq: usize) -> Vec<u32> {
    let layers = interaction_layers(ops, nq);
    let mut order: Vec<u32> = (0..nq as u32).collect();
    let mut best = order.clone();
    let mut best_cost = crossing_count(&order, &layers);
    for sweep in 0..BARYCENTER_SWEEPS {
        let mut pos = vec![0usize; nq];
        for (i, &q) in order.iter().enumerate() {
            pos[q as usize] = i;
        }
        let seq: Vec<&Vec<(u32, u32)>> = if sweep % 2 == 0 {
            layers.iter().collect()
        } else {
            layers.iter().rev().collect()
        };
        let mut sum: Vec<f64> = pos.iter().map(|&p| p as f64).collect();
        let mut cnt = vec![1.0f64; nq];
        for layer in seq {
            for &(a, b) in layer {
                let (a, b) = (a as usize, b as usize);
                sum[a] += pos[b] as f64;
                cnt[a] += 1.0;
                sum[b] += pos[a] as f64;
                cnt[b] += 1.0;
            }
        }
        let mut keyed: Vec<(f64, usize, u32)> = order
            .iter()
            .enumerate()
            .map(|(i, &q)| (sum[q as usize] / cnt[q as usize], i, q))
            .collect();
        keyed.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        order = keyed.into_iter().map(|(_, _, q)| q).collect();
        let c = crossing_count(&order, &layers);
        if c < best_cost {
            best_cost = c;
            best = order.clone();
        }
    }
    loop {
        let mut improved = false;
        for i in 0..nq.saturating_sub(1) {
            let mut cand = best.clone();
            cand.swap(i, i + 1);
            let c = crossing_count(&cand, &layers);
            if c < best_cost {
                best_cost = c;
                best = cand;
                improved = true;
            }
        }
        if !improved {
            return best;
        }
    }
}

pub fn place_initial(ops: &[Instruction], nq: usize, trap: &TrapLayout) -> Placement {
    Placement::from_order(&placement_order(ops, nq), trap.slots)
}

// ---------------------------------------------------------------------------
// Layering

/// Greedy list scheduling: each op goes to the earliest layer after its
/// qubits (and result slot) are free that still has a zone available.
pub fn schedule_layers(ops: &[Instruction], zones: usize) -> Vec<Vec<Instruction>> {
    let mut layers: Vec<Vec<Instruction>> = Vec::new();
    let mut ready_q: HashMap<u32, usize> = HashMap::new();
    let mut ready_r: HashMap<u32, usize> = HashMap::new();
    for i in ops {
        let qs = phys_qubits(i);
        let mut l = qs.iter().map(|q| ready_q.get(q).copied().unwrap_or(0)).max().unwrap_or(0);
        if let Some(r) = i.result_slot() {
            l = l.max(ready_r.get(&r).copied().unwrap_or(0));
        }
        while l < layers.len() && layers[l].len() >= zones {
            l += 1;
        }
        if l == layers.len() {
            layers.push(Vec::new());
        }
        layers[l].push(i.clone());
        for q in qs {
            ready_q.insert(q, l + 1);
        }
        if let Some(r) = i.result_slot() {
            ready_r.insert(r, l + 1);
        }
    }
    layers
}

fn op_distance(qs: &[u32], zone: (usize, usize), p: &Placement) -> (usize, Vec<usize>) {
    let s: Vec<usize> = qs.iter().map(|&q| p.slot_of(q).unwrap_or(0)).collect();
    let d = |a: usize, b: usize| a.abs_diff(b);
    if s.len() == 1 {
        let (da, db) = (d(s[0], zone.0), d(s[0], zone.1));
        if db < da {
            (db, vec![zone.1])
        } else {
            (da, vec![zone.0])
        }
    } else {
        let straight = d(s[0], zone.0) + d(s[1], zone.1);
        let crossed = d(s[0], zone.1) + d(s[1], zone.0);
        (straight.min(crossed), vec![zone.0, zone.1])
    }
}

/// Assigns each op of a layer to a distinct zone, minimizing total operand
/// displacement; ties go to the lexicographically smallest assignment.
pub fn assign_zones(layer: &[Instruction], p: &Placement, trap: &TrapLayout) -> GateLayer {
    let m = layer.len();
    let nz = trap.zones.len();
    let cost: Vec<Vec<(usize, Vec<usize>)>> = layer
        .iter()
        .map(|i| {
            let qs = phys_qubits(i);
            trap.zones.iter().map(|&z| op_distance(&qs, z, p)).collect()
        })
        .collect();
    let mut best: Option<(usize, Vec<usize>)> = None;
    let mut cur = Vec::with_capacity(m);
    let mut used = vec![false; nz];
    fn rec(
        k: usize,
        acc: usize,
        cost: &[Vec<(usize, Vec<usize>)>],
        used: &mut [bool],
        cur: &mut Vec<usize>,
        best: &mut Option<(usize, Vec<usize>)>,
    ) {
        if let Some((b, _)) = best {
            if acc >= *b {
                return;
            }
        }
        if k == cost.len() {
            *best = Some((acc, cur.clone()));
            return;
        }
        for z in 0..used.len() {
            if !used[z] {
                used[z] = true;
                cur.push(z);
                rec(k + 1, acc + cost[k][z].0, cost, used, cur, best);
                cur.pop();
                used[z] = false;
            }
        }
    }
    rec(0, 0, &cost, &mut used, &mut cur, &mut best);
    let assign = best.map(|b| b.1).unwrap_or_default();
    GateLayer {
        ops: layer
            .iter()
            .zip(assign)
            .enumerate()
            .map(|(k, (i, z))| LayerOp {
                instr: i.clone(),
                zone: z,
                target: cost[k][z].1.clone(),
            })
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// Transport

/// All nonempty sets of pairwise disjoint adjacent swaps, in lexicographic order.
pub fn swap_sets(slots: usize) -> Vec<TransportStep> {
    let mut out = Vec::new();
    fn rec(start: usize, slots: usize, cur: &mut Vec<usize>, out: &mut Vec<TransportStep>) {
        for i in start..slots.saturating_sub(1) {
            cur.push(i);
            out.push(TransportStep { swaps: cur.clone() });
            rec(i + 2, slots, cur, out);
            cur.pop();
        }
    }
    rec(0, slots, &mut Vec::new(), &mut out);
    out
}

/// Breadth-first search over placements. Steps that only swap empty slots
/// are skipped. Returns the first shortest plan in lexicographic step order.
pub fn bfs_plan(start: &Placement, goal: impl Fn(&Placement) -> bool) -> Vec<TransportStep> {
    if goal(start) {
        return Vec::new();
    }
    let actions = swap_sets(start.slots.len());
    let mut states: Vec<(Placement, usize, usize)> = vec![(start.clone(), usize::MAX, usize::MAX)];
    let mut seen: HashMap<Placement, ()> = HashMap::new();
    seen.insert(start.clone(), ());
    let mut queue = VecDeque::from([0usize]);
    while let Some(si) = queue.pop_front() {
        for (ai, a) in actions.iter().enumerate() {
            let cur = &states[si].0;
            if a.swaps.iter().any(|&i| cur.slots[i].is_none() && cur.slots[i + 1].is_none()) {
                continue;
            }
            let mut next = cur.clone();
            next.apply(a);
            if seen.contains_key(&next) {
                continue;
            }
            seen.insert(next.clone(), ());
            let done = goal(&next);
            states.push((next, si, ai));
            let ni = states.len() - 1;
            if done {
                let mut plan = Vec::new();
                let mut k = ni;
                while states[k].1 != usize::MAX {
                    plan.push(actions[states[k].2].clone());
                    k = states[k].1;
                }
                plan.reverse();
                return plan;
            }
            queue.push_back(ni);
        }
    }
    unreachable!("a linear trap is connected; every placement is reachable")
}

/// Odd-even transposition sort toward a complete target placement.
pub fn odd_even_plan(start: &Placement, target: &Placement) -> Vec<TransportStep> {
    let n = start.slots.len();
    let key = |ion: Option<u32>| ion.and_then(|q| target.slot_of(q));
    let mut cur = start.clone();
    // empty slots sort to the free target positions in left-to-right order
    let free: Vec<usize> = (0..n).filter(|&s| target.slots[s].is_none()).collect();
    let mut empty_rank = 0;
    let mut keys: Vec<usize> = Vec::with_capacity(n);
    for s in 0..n {
        match key(cur.slots[s]) {
            Some(k) => keys.push(k),
            None => {
                keys.push(free.get(empty_rank).copied().unwrap_or(s));
                empty_rank += 1;
            }
        }
    }
    let mut plan = Vec::new();
    let mut parity = 0;
    let mut idle = 0;
    while idle < 2 {
        let swaps: Vec<usize> = (parity..n.saturating_sub(1))
            .step_by(2)
            .filter(|&i| keys[i] > keys[i + 1])
            .collect();
        if swaps.is_empty() {
            idle += 1;
        } else {
            idle = 0;
            for &i in &swaps {
                keys.swap(i, i + 1);
            }
            let step = TransportStep { swaps };
            cur.apply(&step);
            plan.push(step);
        }
        parity ^= 1;
    }
    plan
}

fn exact_ok(p: &Placement) -> bool {
    p.ion_count() <= EXACT_MAX_IONS && p.slots.len() <= EXACT_MAX_SLOTS
}

/// Full target placement for the greedy fallback: layer operands take their
/// target slots, every other ion keeps its relative order in the remaining slots.
fn complete_target(cur: &Placement, layer: &GateLayer) -> Placement {
    let n = cur.slots.len();
    let mut target: Vec<Option<u32>> = vec![None; n];
    let mut placed = BTreeSet::new();
    for op in &layer.ops {
        let qs = phys_qubits(&op.instr);
        let mut slots = op.target.clone();
        if qs.len() == 2 {
            let (a, b) = (cur.slot_of(qs[0]).unwrap_or(0), cur.slot_of(qs[1]).unwrap_or(0));
            slots.sort_unstable();
            if a > b {
                slots.reverse();
            }
        }
        for (q, s) in qs.into_iter().zip(slots) {
            target[s] = Some(q);
            placed.insert(q);
        }
    }
    let rest: Vec<u32> = cur.slots.iter().flatten().copied().filter(|q| !placed.contains(q)).collect();
    let free: Vec<usize> = (0..n).filter(|&s| target[s].is_none()).collect();
    // keep the others as close to their current slots as order allows
    let mut best: Option<(usize, Vec<usize>)> = None;
    let cur_slots: Vec<usize> = rest.iter().map(|&q| cur.slot_of(q).unwrap()).collect();
    let mut choose: Vec<usize> = Vec::new();
    fn pick(
        i: usize,
        from: usize,
        free: &[usize],
        cur_slots: &[usize],
        choose: &mut Vec<usize>,
        acc: usize,
        best: &mut Option<(usize, Vec<usize>)>,
    ) {
        if i == cur_slots.len() {
            if best.as_ref().is_none_or(|b| acc < b.0) {
                *best = Some((acc, choose.clone()));
            }
            return;
        }
        for j in from..free.len() {
            if free.len() - j < cur_slots.len() - i {
                break;
            }
            choose.push(free[j]);
            pick(i + 1, j + 1, free, cur_slots, choose, acc + free[j].abs_diff(cur_slots[i]), best);
            choose.pop();
        }
    }
    pick(0, 0, &free, &cur_slots, &mut choose, 0, &mut best);
    if let Some((_, slots)) = best {
        for (q, s) in rest.into_iter().zip(slots) {
            target[s] = Some(q);
        }
    }
    debug_assert_eq!(target.iter().flatten().count(), cur.ion_count());
    Placement { slots: target }
}

/// Transport steps that bring the layer's operands into their targets.
pub fn plan_transport(cur: &Placement, layer: &GateLayer) -> (Vec<TransportStep>, Placement) {
    let plan = if exact_ok(cur) {
        bfs_plan(cur, |p| layer.satisfied_by(p))
    } else {
        odd_even_plan(cur, &complete_target(cur, layer))
    };
    let mut end = cur.clone();
    for s in &plan {
        end.apply(s);
    }
    (plan, end)
}

pub fn plan_restore(cur: &Placement, canonical: &Placement) -> Vec<TransportStep> {
    if exact_ok(cur) {
        bfs_plan(cur, |p| p == canonical)
    } else {
        odd_even_plan(cur, canonical)
    }
}

// ---------------------------------------------------------------------------
// Lowering

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransportMode {
    Conditional,
    Always,
}

impl std::str::FromStr for TransportMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "conditional" => Ok(TransportMode::Conditional),
            "always" => Ok(TransportMode::Always),
            _ => Err(format!("unknown transport mode `{s}` (expected conditional|always)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ExecOp {
    Transport(TransportStep),
    Layer(GateLayer),
    /// Classical instruction or output, run only when the guard holds.
    Classical(Instruction),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecBlock {
    pub label: String,
    pub guard: Operand,
    pub ops: Vec<ExecOp>,
    /// Restores the canonical placement.
    pub epilogue: Vec<TransportStep>,
}

impl ExecBlock {
    pub fn planned_transport(&self) -> usize {
        self.ops.iter().filter(|o| matches!(o, ExecOp::Transport(_))).count() + self.epilogue.len()
    }

    pub fn layers(&self) -> impl Iterator<Item = &GateLayer> {
        self.ops.iter().filter_map(|o| match o {
            ExecOp::Layer(l) => Some(l),
            _ => None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ExecItem {
    Classical(Instruction),
    Block(ExecBlock),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecProgram {
    pub registers: usize,
    pub num_qubits: u32,
    pub num_results: u32,
    pub trap: TrapLayout,
    pub canonical: Placement,
    pub conditional_transport: bool,
    pub items: Vec<ExecItem>,
}

impl ExecProgram {
    pub fn blocks(&self) -> impl Iterator<Item = &ExecBlock> {
        self.items.iter().filter_map(|i| match i {
            ExecItem::Block(b) => Some(b),
            ExecItem::Classical(_) => None,
        })
    }

    pub fn planned_transport(&self) -> usize {
        self.blocks().map(|b| b.planned_transport()).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("exec program serializes")
    }
}

fn check_qubits(i: &Instruction, nq: u32) -> Result<(), QccdError> {
    for q in i.qubits() {
        match q {
            QubitRef::Index(x) if *x < nq => {}
            QubitRef::Index(x) => return Err(QccdError::QubitRange(*x)),
            QubitRef::Param(v) => return Err(QccdError::UnresolvedQubit(v.to_string())),
        }
    }
    Ok(())
}

fn lower_body(
    body: &[Instruction],
    canonical: &Placement,
    trap: &TrapLayout,
) -> (Vec<ExecOp>, Vec<TransportStep>) {
    let mut ops = Vec::new();
    let mut place = canonical.clone();
    let mut seg: Vec<Instruction> = Vec::new();
    let flush = |seg: &mut Vec<Instruction>, ops: &mut Vec<ExecOp>, place: &mut Placement| {
        for layer in schedule_layers(seg, trap.zones.len()) {
            let gl = assign_zones(&layer, place, trap);
            let (steps, end) = plan_transport(place, &gl);
            ops.extend(steps.into_iter().map(ExecOp::Transport));
            *place = end;
            ops.push(ExecOp::Layer(gl));
        }
        seg.clear();
    };
    for i in body {
        if i.is_quantum() {
            seg.push(i.clone());
        } else {
            flush(&mut seg, &mut ops, &mut place);
            ops.push(ExecOp::Classical(i.clone()));
        }
    }
    flush(&mut seg, &mut ops, &mut place);
    let epilogue = plan_restore(&place, canonical);
    (ops, epilogue)
}

/// Lowers a register-allocated guarded function to an executable program.
pub fn lower(
    gf: &GuardedFunction,
    attrs: &Attrs,
    trap: &TrapLayout,
    mode: TransportMode,
    registers: usize,
) -> Result<ExecProgram, QccdError> {
    let nq = attrs.required_qubits;
    trap.validate(nq as usize)?;
    let mut quantum = Vec::new();
    for it in &gf.items {
        if let GItem::Block(b) = it {
            for i in &b.body {
                check_qubits(i, nq)?;
                if i.is_quantum() {
                    quantum.push(i.clone());
                }
            }
        }
    }
    let canonical = place_initial(&quantum, nq as usize, trap);
    let items = gf
        .items
        .iter()
        .map(|it| match it {
            GItem::Op(i) => ExecItem::Classical(i.clone()),
            GItem::Block(b) => {
                let (ops, epilogue) = lower_body(&b.body, &canonical, trap);
                ExecItem::Block(ExecBlock {
                    label: b.label.clone(),
                    guard: b.guard.clone(),
                    ops,
                    epilogue,
                })
            }
        })
        .collect();
    Ok(ExecProgram {
        registers,
        num_qubits: nq,
        num_results: attrs.required_results,
        trap: trap.clone(),
        canonical,
        conditional_transport: mode == TransportMode::Conditional,
        items,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cx(a: u32, b: u32) -> Instruction {
        Instruction::gate(GateKind::Cx, &[a, b])
    }

    #[test]
    fn default_trap() {
        let t = TrapLayout::default_for(3);
        assert_eq!(t.slots, 4);
        assert_eq!(t.zones, vec![(0, 1), (2, 3)]);
        let t = TrapLayout::default_for(20);
        assert_eq!(t.zones.len(), 5);
        assert!(TrapLayout { slots: 4, zones: vec![(0, 1), (1, 2)] }.validate(3).is_err());
    }

    #[test]
    fn layering_examples() {
        assert_eq!(schedule_layers(&[cx(0, 1), cx(2, 3)], 2).len(), 1);
        assert_eq!(schedule_layers(&[cx(0, 1), cx(1, 2)], 2).len(), 2);
        assert_eq!(schedule_layers(&[cx(0, 1), cx(2, 3), cx(4, 5)], 2).len(), 2);
    }

    #[test]
    fn placement_path_and_star() {
        let order = placement_order(&[cx(0, 1), cx(1, 2)], 3);
        let p1 = order.iter().position(|&q| q == 1).unwrap();
        assert_eq!(p1, 1);
        let order = placement_order(&[cx(0, 1), cx(0, 2), cx(0, 3)], 4);
        let p0 = order.iter().position(|&q| q == 0).unwrap();
        assert!(p0 != 0 && p0 != 3, "{order:?}");
        assert_eq!(placement_order(&[cx(0, 1)], 2), vec![0, 1]);
    }

    #[test]
    fn transport_examples() {
        let p = Placement::from_order(&[0, 1, 2], 3);
        let layer = GateLayer {
            ops: vec![LayerOp {
                instr: cx(0, 2),
                zone: 0,
                target: vec![0, 1],
            }],
        };
        let (plan, end) = plan_transport(&p, &layer);
        assert_eq!(plan, vec![TransportStep { swaps: vec![1] }]);
        assert!(layer.satisfied_by(&end));
        let layer = GateLayer {
            ops: vec![LayerOp {
                instr: cx(0, 1),
                zone: 0,
                target: vec![0, 1],
            }],
        };
        assert!(plan_transport(&p, &layer).0.is_empty());
    }

    #[test]
    fn reversal_takes_four_steps() {
        let p = Placement::from_order(&[0, 1, 2, 3], 4);
        let r = Placement::from_order(&[3, 2, 1, 0], 4);
        assert_eq!(bfs_plan(&p, |x| *x == r).len(), 4);
        let oe = odd_even_plan(&p, &r);
        assert_eq!(oe.len(), 4);
        let mut q = p.clone();
        for s in &oe {
            q.apply(s);
        }
        assert_eq!(q, r);
    }

    #[test]
    fn fallback_reaches_layer_goal() {
        let p = Placement::from_order(&[0, 1, 2, 3, 4, 5, 6, 7], 12);
        let trap = TrapLayout::default_for(12);
        let gl = assign_zones(&[cx(0, 7)], &p, &trap);
        let (plan, end) = plan_transport(&p, &gl);
        assert!(!plan.is_empty());
        assert!(gl.satisfied_by(&end));
        assert!(end.is_bijective());
        let back = plan_restore(&end, &p);
        let mut q = end.clone();
        for s in &back {
            q.apply(s);
        }
        assert_eq!(q, p);
    }
}
