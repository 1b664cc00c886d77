mod common;

use std::collections::HashMap;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qflow::ir::{GateKind, Instruction};
use qflow::qccd::{assign_zones, bfs_plan, plan_restore, plan_transport, placement_order, Placement, TrapLayout};

use common::transport::{all_states, distances_to_goal, goal_check, random_layer, to_placement};

fn run(start: &Placement, plan: &[qflow::qccd::TransportStep]) -> Placement {
    let mut p = start.clone();
    for s in plan {
        assert!(s.is_valid(p.slots.len()));
        p.apply(s);
    }
    p
}

#[test]
fn bfs_matches_reverse_search_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut cache: HashMap<(usize, usize), Vec<Vec<i8>>> = HashMap::new();
    for case in 0..100 {
        let ions = rng.gen_range(2..=5);
        let slots = rng.gen_range(ions.max(4)..=6);
        let trap = TrapLayout::default_for(slots);
        let layer = random_layer(&mut rng, ions, &trap);
        let states = cache.entry((ions, slots)).or_insert_with(|| all_states(ions, slots));
        let start = states.choose(&mut rng).unwrap().clone();
        let dist = distances_to_goal(ions, slots, goal_check(&layer));
        let p0 = to_placement(&start);
        let plan = bfs_plan(&p0, |p| layer.satisfied_by(p));
        assert_eq!(plan.len(), dist[&start], "case {case}: {start:?} {layer:?}");
        assert!(layer.satisfied_by(&run(&p0, &plan)));
        let (steps, end) = plan_transport(&p0, &layer);
        assert_eq!(steps.len(), plan.len());
        assert!(layer.satisfied_by(&end));
    }
}

#[test]
fn restore_is_shortest() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..30 {
        let ions = rng.gen_range(2..=5);
        let slots = rng.gen_range(ions.max(4)..=6);
        let states = all_states(ions, slots);
        let (a, b) = (states.choose(&mut rng).unwrap(), states.choose(&mut rng).unwrap());
        let dist = distances_to_goal(ions, slots, |s| s == b.as_slice());
        let plan = plan_restore(&to_placement(a), &to_placement(b));
        assert_eq!(plan.len(), dist[a]);
        assert_eq!(run(&to_placement(a), &plan), to_placement(b));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    /// Traps too large for the exact search still reach every layer goal.
    #[test]
    fn fallback_reaches_goal(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ions = rng.gen_range(6..=10);
        let slots = rng.gen_range(ions.max(11)..=12);
        let trap = TrapLayout::default_for(slots);
        let mut order: Vec<u32> = (0..ions as u32).collect();
        order.shuffle(&mut rng);
        let mut start = Placement::from_order(&order, slots);
        start.slots.shuffle(&mut rng);
        let layer = random_layer(&mut rng, ions, &trap);
        let (steps, end) = plan_transport(&start, &layer);
        prop_assert!(layer.satisfied_by(&end));
        prop_assert_eq!(run(&start, &steps), end.clone());
        prop_assert!(end.is_bijective());
        prop_assert_eq!(end.ion_count(), ions);
        let back = plan_restore(&end, &start);
        prop_assert_eq!(run(&end, &back), start);
    }

    /// Zone assignment never gives two ops the same zone and every target lies in its zone.
    #[test]
    fn zone_assignment_is_injective(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ions = rng.gen_range(2..=6);
        let trap = TrapLayout::default_for(ions);
        let layer = random_layer(&mut rng, ions, &trap);
        let instrs: Vec<Instruction> = layer.ops.iter().map(|o| o.instr.clone()).collect();
        let mut order: Vec<u32> = (0..ions as u32).collect();
        order.shuffle(&mut rng);
        let p = Placement::from_order(&order, trap.slots);
        let gl = assign_zones(&instrs, &p, &trap);
        let mut zones: Vec<usize> = gl.ops.iter().map(|o| o.zone).collect();
        zones.sort();
        zones.dedup();
        prop_assert_eq!(zones.len(), gl.ops.len());
        for o in &gl.ops {
            let (a, b) = trap.zones[o.zone];
            prop_assert!(o.target.iter().all(|&s| s == a || s == b));
        }
    }
}

fn interaction_length(order: &[u32], gates: &[(u32, u32)]) -> usize {
    let pos = |q: u32| order.iter().position(|&x| x == q).unwrap();
    gates.iter().map(|&(a, b)| pos(a).abs_diff(pos(b))).sum()
}

fn all_orders(n: u32) -> Vec<Vec<u32>> {
    let states = all_states(n as usize, n as usize);
    states.into_iter().map(|s| s.into_iter().map(|x| x as u32).collect()).collect()
}

fn check_optimal(n: u32, gates: &[(u32, u32)]) -> Vec<u32> {
    let ops: Vec<Instruction> = gates.iter().map(|&(a, b)| Instruction::gate(GateKind::Cx, &[a, b])).collect();
    let got = placement_order(&ops, n as usize);
    let best = all_orders(n).iter().map(|o| interaction_length(o, gates)).min().unwrap();
    assert_eq!(interaction_length(&got, gates), best, "{got:?}");
    got
}

#[test]
fn path_places_middle_qubit_between() {
    let got = check_optimal(3, &[(0, 1), (1, 2)]);
    assert_eq!(got[1], 1);
}

#[test]
fn star_center_is_interior() {
    let got = check_optimal(4, &[(0, 1), (0, 2), (0, 3)]);
    assert!(got[0] != 0 && got[3] != 0, "{got:?}");
}

#[test]
fn chain_of_four_is_a_line() {
    check_optimal(4, &[(2, 0), (0, 3), (3, 1)]);
}
