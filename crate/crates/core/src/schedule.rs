//! Mask scheduling: the ratio function γ and the token-count arithmetic
//! shared by training (how many cells to mask) and sampling (how many cells
//! to keep at each reverse step).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScheduleKind {
    /// γ(r) = sin(πr/2)
    Cosine,
    /// γ(r) = r
    Linear,
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleKind::Cosine => "cosine",
            ScheduleKind::Linear => "linear",
        })
    }
}

impl FromStr for ScheduleKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "cosine" => Ok(ScheduleKind::Cosine),
            "linear" => Ok(ScheduleKind::Linear),
            other => Err(format!("expected cosine|linear, got `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub steps: usize,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Cosine,
            steps: 8,
        }
    }
}

impl ScheduleSpec {
    pub fn new(kind: ScheduleKind, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::range("schedule needs T >= 1"));
        }
        Ok(Self { kind, steps })
    }

    pub fn gamma(&self, r: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::range(format!("schedule ratio r={r} outside [0, 1]")));
        }
        Ok(match self.kind {
            ScheduleKind::Cosine => (std::f64::consts::FRAC_PI_2 * r).sin(),
            ScheduleKind::Linear => r,
        })
    }

    /// ⌈γ(r)·N⌉ clamped to [0, N].
    pub fn mask_count(&self, r: f64, cells: usize) -> Result<usize> {
        let g = self.gamma(r)?;
        Ok(ceil_clamped(g * cells as f64, cells))
    }

    /// Number of cells kept after reverse step `t`: ⌈(1 − γ((t−1)/T))·N⌉.
    pub fn unmask_count(&self, t: usize, cells: usize) -> Result<usize> {
        if t == 0 || t > self.steps {
            return Err(Error::range(format!(
                "step t={t} outside [1, {}]",
                self.steps
            )));
        }
        let g = self.gamma((t - 1) as f64 / self.steps as f64)?;
        Ok(ceil_clamped((1.0 - g) * cells as f64, cells))
    }
}

fn ceil_clamped(x: f64, cells: usize) -> usize {
    (x.ceil().max(0.0) as usize).min(cells)
}
