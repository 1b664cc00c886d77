//! Random program generator and transport oracle shared by the integration tests.
#![allow(dead_code)]

pub mod transport;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qflow::ir::Module;
use qflow::textir::parse;

#[derive(Clone, Copy, Debug)]
pub struct GenConfig {
    pub max_qubits: u32,
    pub max_branches: u32,
    /// Allow calls and `repeat` loops (only meaningful before flattening).
    pub calls_and_loops: bool,
}

struct Gen {
    rng: ChaCha8Rng,
    nq: u32,
    nr: u32,
    out: String,
    cur: String,
    next: usize,
    branches_left: u32,
    measurements: u32,
    bools: Vec<String>,
    ints: Vec<String>,
    cfg: GenConfig,
}

const ONE_Q: [&str; 8] = ["h", "x", "y", "z", "s", "sdg", "t", "tdg"];
const ROT: [&str; 3] = ["rx", "ry", "rz"];

impl Gen {
    fn fresh(&mut self, p: &str) -> String {
        self.next += 1;
        format!("{p}{}", self.next)
    }

    fn q(&mut self) -> u32 {
        self.rng.gen_range(0..self.nq)
    }

    fn line(&mut self, s: &str) {
        let _ = writeln!(self.out, "  {s}");
    }

    fn label(&mut self, l: &str) {
        let _ = writeln!(self.out, "block {l}:");
        self.cur = l.to_string();
    }

    fn gate(&mut self) {
        let q = self.q();
        match self.rng.gen_range(0..6) {
            0 | 1 => {
                let g = *ONE_Q.choose(&mut self.rng).unwrap();
                self.line(&format!("{g} q{q}"));
            }
            2 => {
                let g = *ROT.choose(&mut self.rng).unwrap();
                let a = self.rng.gen_range(-3.0..3.0f64);
                self.line(&format!("{g}({a}) q{q}"));
            }
            3 if self.nq > 1 => {
                let mut r = self.q();
                while r == q {
                    r = self.q();
                }
                self.line(&format!("cx q{q}, q{r}"));
            }
            4 => {
                // cancelling pair for the peephole rules
                let g = *["h", "x", "z", "s"].choose(&mut self.rng).unwrap();
                self.line(&format!("{g} q{q}"));
                self.line(&format!("{g} q{q}"));
            }
            _ => {
                // constant-foldable angle
                let a = self.fresh("%a");
                let k = self.rng.gen_range(1..4);
                self.line(&format!("{a} = mul {k}.0, 0.25"));
                self.line(&format!("rz({a}) q{q}"));
            }
        }
    }

    fn measure(&mut self) -> String {
        let q = self.q();
        let r = self.rng.gen_range(0..self.nr);
        self.measurements += 1;
        self.line(&format!("mz q{q} -> r{r}"));
        if self.rng.gen_bool(0.3) {
            self.line(&format!("reset q{q}"));
        }
        let v = self.fresh("%m");
        self.line(&format!("{v} = read_result r{r}"));
        self.bools.push(v.clone());
        v
    }

    fn classical(&mut self) {
        let v = self.fresh("%i");
        match self.rng.gen_range(0..3) {
            0 if !self.ints.is_empty() => {
                let a = self.ints.choose(&mut self.rng).unwrap().clone();
                let op = *["add", "sub", "mul", "xor"].choose(&mut self.rng).unwrap();
                let k = self.rng.gen_range(-3..5);
                self.line(&format!("{v} = {op} {a}, {k}"));
            }
            1 if !self.bools.is_empty() => {
                let b = self.bools.choose(&mut self.rng).unwrap().clone();
                let (x, y) = (self.rng.gen_range(0..9), self.rng.gen_range(0..9));
                self.line(&format!("{v} = select {b}, {x}, {y}"));
            }
            _ => {
                let (x, y) = (self.rng.gen_range(0..9), self.rng.gen_range(0..9));
                self.line(&format!("{v} = add {x}, {y}"));
            }
        }
        self.ints.push(v);
    }

    fn cond(&mut self) -> String {
        if (self.bools.is_empty() || self.rng.gen_bool(0.5)) && self.measurements < 8 {
            return self.measure();
        }
        if !self.ints.is_empty() && self.rng.gen_bool(0.3) {
            let i = self.ints.choose(&mut self.rng).unwrap().clone();
            let c = self.fresh("%c");
            let k = self.rng.gen_range(0..9);
            let p = *["lt", "ge", "eq", "ne"].choose(&mut self.rng).unwrap();
            self.line(&format!("{c} = cmp {p} {i}, {k}"));
            self.bools.push(c.clone());
            return c;
        }
        match self.bools.choose(&mut self.rng) {
            Some(b) => b.clone(),
            None => "true".to_string(),
        }
    }

    fn straight(&mut self, n: usize) {
        for _ in 0..n {
            match self.rng.gen_range(0..5) {
                0 if self.measurements < 8 => {
                    self.measure();
                }
                1 => self.classical(),
                _ => self.gate(),
            }
        }
    }

    /// Emits a region that starts in the current block and leaves the
    /// current block open. Returns an int vreg defined on every path.
    fn region(&mut self, depth: u32) -> String {
        let n = self.rng.gen_range(0..4);
        self.straight(n);
        let base = self.fresh("%v");
        let k = self.rng.gen_range(0..9);
        self.line(&format!("{base} = add {k}, 0"));
        self.ints.push(base.clone());
        if self.branches_left == 0 || depth > 2 || self.rng.gen_bool(0.3) {
            return base;
        }
        self.branches_left -= 1;
        let c = self.cond();
        let (t, e, j) = (self.fresh("then"), self.fresh("else"), self.fresh("join"));
        let diamond = self.rng.gen_bool(0.5);
        let from = self.cur.clone();
        self.line(&format!("br {c}, {t}, {}", if diamond { &e } else { &j }));
        // values defined inside an arm are not visible after the join
        let (nb, ni) = (self.bools.len(), self.ints.len());
        self.label(&t);
        let tv = self.region(depth + 1);
        let t_end = self.cur.clone();
        self.line(&format!("jmp {j}"));
        self.bools.truncate(nb);
        self.ints.truncate(ni);
        let (ev, e_end) = if diamond {
            self.label(&e);
            let ev = self.region(depth + 1);
            let e_end = self.cur.clone();
            self.line(&format!("jmp {j}"));
            self.bools.truncate(nb);
            self.ints.truncate(ni);
            (ev, e_end)
        } else {
            (base.clone(), from)
        };
        self.label(&j);
        let p = self.fresh("%p");
        self.line(&format!("{p} = phi [{tv}, {t_end}], [{ev}, {e_end}]"));
        self.ints.push(p.clone());
        let n = self.rng.gen_range(0..3);
        self.straight(n);
        p
    }
}

/// Source text of a random acyclic program.
pub fn random_source(seed: u64, cfg: GenConfig) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nq = rng.gen_range(1..=cfg.max_qubits);
    let nr = rng.gen_range(1..=3);
    let mut g = Gen {
        rng,
        nq,
        nr,
        out: String::new(),
        cur: String::new(),
        next: 0,
        branches_left: cfg.max_branches,
        measurements: 0,
        bools: Vec::new(),
        ints: Vec::new(),
        cfg,
    };
    let _ = writeln!(g.out, "module gen\nattrs required_qubits={nq} required_results={nr}\n");
    if cfg.calls_and_loops {
        let _ = writeln!(g.out, "entry @main");
        let _ = writeln!(
            g.out,
            "func @helper(%x: int, %q: qubit) -> int {{\nblock entry:\n  h %q\n  %y = add %x, 1\n  ret %y\n}}\n"
        );
    }
    let _ = writeln!(g.out, "func @main() {{");
    g.label("entry");
    let v = g.region(0);
    if cfg.calls_and_loops {
        let q = g.q();
        g.line(&format!("repeat 2 {{\n  x q{q}\n  t q{q}\n}}"));
        let q = g.q();
        let w = g.fresh("%w");
        g.line(&format!("{w} = call @helper({v}, q{q})"));
        g.line(&format!("output int {w}"));
    }
    for r in 0..nr {
        g.line(&format!("output result r{r}"));
    }
    g.line(&format!("output int {v}"));
    if let Some(b) = g.bools.first().cloned() {
        g.line(&format!("output bool {b}"));
    }
    g.line("ret");
    g.out += "}\n";
    g.out
}

pub fn random_module(seed: u64, cfg: GenConfig) -> Module {
    let src = random_source(seed, cfg);
    parse(&src).unwrap_or_else(|e| panic!("generated program does not parse: {e}\n{src}"))
}

pub const SMALL: GenConfig = GenConfig {
    max_qubits: 3,
    max_branches: 3,
    calls_and_loops: false,
};

pub const WITH_CALLS: GenConfig = GenConfig {
    max_qubits: 3,
    max_branches: 3,
    calls_and_loops: true,
};
