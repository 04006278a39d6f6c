//! The 30 identified load-model parameters: names, bounds, defaults and the
//! affine map to `[-1, 1]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const N_PARAMS: usize = 30;

/// (name, lower, upper, default)
const TABLE: [(&str, f64, f64, f64); N_PARAMS] = [
    ("Fma", 0.1, 0.3, 0.2),
    ("Fmb", 0.1, 0.3, 0.2),
    ("Fmc", 0.1, 0.3, 0.2),
    ("Fmd", 0.1, 0.3, 0.2),
    ("Fel", 0.1, 0.3, 0.2),
    ("FderA", -0.3, -0.1, -0.2),
    ("LsA", 1.5, 3.0, 1.8),
    ("EtrqA", 0.0, 1.0, 0.0),
    ("LsB", 1.5, 3.0, 1.8),
    ("Tp0B", 0.08, 0.12, 0.1),
    ("EtrqB", 1.5, 2.5, 2.0),
    ("LsC", 1.5, 3.0, 1.8),
    ("Tp0C", 0.08, 0.12, 0.1),
    ("EtrqC", 1.5, 2.5, 2.0),
    ("Rstall", 0.08, 0.12, 0.1),
    ("Xstall", 0.08, 0.12, 0.1),
    ("CompPF", 0.9, 1.0, 0.98),
    ("Frst", 0.15, 0.3, 0.2),
    ("Kp1", -1.0, 1.0, 0.0),
    ("Np1", 0.5, 1.5, 1.0),
    ("Nq1", 1.0, 3.0, 2.0),
    ("Np2", 1.6, 4.8, 3.2),
    ("Nq2", 1.25, 3.75, 2.5),
    ("P1c", 0.3, 0.5, 0.4),
    ("P2c", 0.5, 0.7, 0.6),
    ("PF", 0.9, 1.0, 0.95),
    ("frcel", 0.5, 0.9, 0.75),
    ("Qel0", 0.1, 0.3, 0.2),
    ("Imax", 1.0, 1.5, 1.2),
    ("Qref", 0.1, 0.3, 0.2),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpace {
    pub names: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub defaults: Vec<f64>,
}

impl Default for ParamSpace {
    fn default() -> Self {
        Self::standard()
    }
}

impl ParamSpace {
    /// Ranges and defaults of the reduced composite load model.
    pub fn standard() -> Self {
        Self {
            names: TABLE.iter().map(|r| r.0.to_string()).collect(),
            lower: TABLE.iter().map(|r| r.1).collect(),
            upper: TABLE.iter().map(|r| r.2).collect(),
            defaults: TABLE.iter().map(|r| r.3).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn range(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.names.len();
        if self.lower.len() != n || self.upper.len() != n || self.defaults.len() != n {
            return Err(CoreError::Config("parameter space columns differ in length".into()));
        }
        for i in 0..n {
            if !(self.lower[i] < self.upper[i]) {
                return Err(CoreError::Config(format!("{}: lower bound not below upper", self.names[i])));
            }
            if !self.contains_at(i, self.defaults[i]) {
                return Err(CoreError::Config(format!("{}: default outside bounds", self.names[i])));
            }
        }
        Ok(())
    }

    fn contains_at(&self, i: usize, v: f64) -> bool {
        v >= self.lower[i] && v <= self.upper[i]
    }

    pub fn check(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.len() {
            return Err(CoreError::Param(format!("expected {} values, got {}", self.len(), theta.len())));
        }
        for (i, &v) in theta.iter().enumerate() {
            if !self.contains_at(i, v) {
                return Err(CoreError::Param(format!(
                    "{} = {v} outside [{}, {}]",
                    self.names[i], self.lower[i], self.upper[i]
                )));
            }
        }
        Ok(())
    }

    /// `[LB, UB] -> [-1, 1]` per coordinate.
    pub fn normalize(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .enumerate()
            .map(|(i, &v)| 2.0 * (v - self.lower[i]) / self.range(i) - 1.0)
            .collect()
    }

    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, &v)| self.lower[i] + 0.5 * (v + 1.0) * self.range(i))
            .collect()
    }

    /// Clips into bounds in place and returns how many coordinates moved.
    pub fn clip(&self, theta: &mut [f64]) -> usize {
        let mut n = 0;
        for (i, v) in theta.iter_mut().enumerate() {
            let c = v.clamp(self.lower[i], self.upper[i]);
            if c != *v {
                n += 1;
                *v = c;
            }
        }
        n
    }

    /// Independent uniform draw over the box.
    pub fn sample_uniform<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.len()).map(|i| self.lower[i] + rng.random::<f64>() * self.range(i)).collect()
    }

    /// Rounds to the nearest `f32` that lies inside the bounds, so that the
    /// stored single-precision value reproduces the simulated one exactly.
    pub fn round_to_f32(&self, theta: &mut [f64]) {
        for (i, v) in theta.iter_mut().enumerate() {
            let mut r = *v as f32;
            if (r as f64) < self.lower[i] {
                r = r.next_up();
            }
            if (r as f64) > self.upper[i] {
                r = r.next_down();
            }
            *v = r as f64;
        }
    }
}
