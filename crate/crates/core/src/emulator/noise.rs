//! Noise parameters and the randomness sources that drive a shot.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EmuError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    pub p1: f64,
    pub p2: f64,
    pub p_meas: f64,
    pub p_reset: f64,
    pub p_transport: f64,
    pub p_idle: f64,
    /// Systematic angle error added to every `ry`.
    pub prep_overrotation: f64,
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self::default()
    }

    /// Synthetic placeholder values, not device data.
    pub fn h1e_like() -> Self {
        NoiseModel {
            p1: 1e-4,
            p2: 3e-3,
            p_meas: 3e-3,
            p_reset: 3e-3,
            p_transport: 2e-4,
            p_idle: 1e-4,
            prep_overrotation: 0.0,
        }
    }

    pub fn transport_only(p: f64) -> Self {
        NoiseModel {
            p_transport: p,
            ..Self::default()
        }
    }

    pub fn is_noiseless(&self) -> bool {
        *self == Self::default()
    }

    pub fn validate(&self) -> Result<(), EmuError> {
        for (name, p) in [
            ("p1", self.p1),
            ("p2", self.p2),
            ("p_meas", self.p_meas),
            ("p_reset", self.p_reset),
            ("p_transport", self.p_transport),
            ("p_idle", self.p_idle),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(EmuError::BadNoise(format!("{name}={p} is not a probability")));
            }
        }
        if !self.prep_overrotation.is_finite() {
            return Err(EmuError::BadNoise("prep_overrotation must be finite".into()));
        }
        Ok(())
    }
}

/// Source of every random decision in a shot.
pub trait Chooser {
    /// Projective outcome of a qubit whose probability of reading 1 is `p1`.
    fn outcome(&mut self, p1: f64) -> Result<bool, EmuError>;
    /// Noise event with probability `p`. Never consumes randomness when `p == 0`.
    fn event(&mut self, p: f64) -> bool;
    /// Uniform index in `0..n`.
    fn index(&mut self, n: usize) -> usize;
}

pub struct Sampler {
    pub rng: ChaCha8Rng,
}

impl Chooser for Sampler {
    fn outcome(&mut self, p1: f64) -> Result<bool, EmuError> {
        Ok(self.rng.gen::<f64>() < p1)
    }

    fn event(&mut self, p: f64) -> bool {
        p > 0.0 && self.rng.gen::<f64>() < p
    }

    fn index(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }
}

/// Branch probabilities at or below this are pruned during enumeration.
pub const PRUNE: f64 = 1e-14;

/// Replays a fixed prefix of outcomes, then takes the first possible outcome
/// at each new branch point and remembers the alternative.
pub struct Replay {
    pub prefix: Vec<bool>,
    pub taken: Vec<bool>,
    pub prob: f64,
    pub pending: Vec<Vec<bool>>,
    pub max_branches: usize,
    branches: usize,
}

impl Replay {
    pub fn new(prefix: Vec<bool>, max_branches: usize) -> Self {
        Replay {
            prefix,
            taken: Vec::new(),
            prob: 1.0,
            pending: Vec::new(),
            max_branches,
            branches: 0,
        }
    }
}

impl Chooser for Replay {
    fn outcome(&mut self, p1: f64) -> Result<bool, EmuError> {
        let p0 = 1.0 - p1;
        let both = p0 > PRUNE && p1 > PRUNE;
        if both {
            self.branches += 1;
            if self.branches > self.max_branches {
                return Err(EmuError::TooManyBranches(self.max_branches));
            }
        }
        let k = self.taken.len();
        let o = if k < self.prefix.len() {
            self.prefix[k]
        } else {
            if both {
                let mut alt = self.taken.clone();
                alt.push(true);
                self.pending.push(alt);
            }
            p0 <= PRUNE
        };
        self.prob *= if o { p1 } else { p0 };
        self.taken.push(o);
        Ok(o)
    }

    fn event(&mut self, _p: f64) -> bool {
        false
    }

    fn index(&mut self, _n: usize) -> usize {
        0
    }
}
