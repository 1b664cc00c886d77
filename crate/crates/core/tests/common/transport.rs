use std::collections::{HashMap, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use qflow::ir::{GateKind, Instruction};
use qflow::qccd::{GateLayer, LayerOp, Placement, TrapLayout};

/// Parallel swap sets as bitmasks over the `n - 1` adjacent pairs.
pub fn matchings(n: usize) -> Vec<u32> {
    (1u32..1 << (n - 1)).filter(|m| m & (m << 1) == 0).collect()
}

pub fn swap(state: &[i8], m: u32) -> Vec<i8> {
    let mut s = state.to_vec();
    for i in 0..s.len() - 1 {
        if m >> i & 1 == 1 {
            s.swap(i, i + 1);
        }
    }
    s
}

pub fn all_states(ions: usize, slots: usize) -> Vec<Vec<i8>> {
    let mut base: Vec<i8> = (0..ions as i8).collect();
    base.resize(slots, -1);
    let mut out = vec![];
    fn perm(k: usize, a: &mut Vec<i8>, out: &mut Vec<Vec<i8>>) {
        if k == a.len() {
            if !out.contains(a) {
                out.push(a.clone());
            }
            return;
        }
        for i in k..a.len() {
            a.swap(k, i);
            perm(k + 1, a, out);
            a.swap(k, i);
        }
    }
    perm(0, &mut base, &mut out);
    out
}

/// Distance from every state to the goal set, by BFS outward from the goals.
/// Swaps are involutions, so the reverse graph equals the forward graph.
pub fn distances_to_goal(ions: usize, slots: usize, goal: impl Fn(&[i8]) -> bool) -> HashMap<Vec<i8>, usize> {
    let moves = matchings(slots);
    let mut dist = HashMap::new();
    let mut q = VecDeque::new();
    for s in all_states(ions, slots) {
        if goal(&s) {
            dist.insert(s.clone(), 0);
            q.push_back(s);
        }
    }
    while let Some(s) = q.pop_front() {
        let d = dist[&s];
        for &m in &moves {
            let t = swap(&s, m);
            if !dist.contains_key(&t) {
                dist.insert(t.clone(), d + 1);
                q.push_back(t);
            }
        }
    }
    dist
}

pub fn to_placement(s: &[i8]) -> Placement {
    Placement {
        slots: s.iter().map(|&x| (x >= 0).then_some(x as u32)).collect(),
    }
}

/// Random layer: distinct zones, disjoint qubits, explicit target slots.
pub fn random_layer(rng: &mut ChaCha8Rng, ions: usize, trap: &TrapLayout) -> GateLayer {
    let mut qubits: Vec<u32> = (0..ions as u32).collect();
    qubits.shuffle(rng);
    let mut zones: Vec<usize> = (0..trap.zones.len()).collect();
    zones.shuffle(rng);
    let n_ops = rng.gen_range(1..=zones.len().min(ions));
    let mut ops = Vec::new();
    for &z in zones.iter().take(n_ops) {
        let (a, b) = trap.zones[z];
        if qubits.len() >= 2 && rng.gen_bool(0.6) {
            let (x, y) = (qubits.pop().unwrap(), qubits.pop().unwrap());
            ops.push(LayerOp {
                instr: Instruction::gate(GateKind::Cx, &[x, y]),
                zone: z,
                target: vec![a, b],
            });
        } else if let Some(x) = qubits.pop() {
            ops.push(LayerOp {
                instr: Instruction::gate(GateKind::H, &[x]),
                zone: z,
                target: vec![if rng.gen_bool(0.5) { a } else { b }],
            });
        }
    }
    GateLayer { ops }
}

pub fn goal_check(layer: &GateLayer) -> impl Fn(&[i8]) -> bool + '_ {
    move |s: &[i8]| {
        layer.ops.iter().all(|op| {
            let qs: Vec<i8> = op.instr.qubits().iter().map(|q| q.index().unwrap() as i8).collect();
            let mut have: Vec<usize> = qs.iter().map(|q| s.iter().position(|x| x == q).unwrap()).collect();
            have.sort();
            let mut want = op.target.clone();
            want.sort();
            have == want
        })
    }
}
