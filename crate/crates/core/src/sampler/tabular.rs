//! Lookup-table refiner and evaluator. They make the sampler's output
//! distribution small enough to enumerate exactly.

use crate::diffusion::DiffusionState;
use crate::error::{Error, Result};
use crate::nets::Logits;
use crate::token::TokenGrid;

use super::{TokenEvaluator, TokenRefiner};

/// Logits for cell `i` depend only on the token currently in cell `i`
/// (the sentinel included): `table[(i * (N + 1) + token) * N + class]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularRefiner {
    pub width: usize,
    pub height: usize,
    pub vocab: usize,
    pub table: Vec<f64>,
}

impl TabularRefiner {
    pub fn new(width: usize, height: usize, vocab: usize, table: Vec<f64>) -> Result<Self> {
        if table.len() != width * height * (vocab + 1) * vocab {
            return Err(Error::shape("tabular refiner table has the wrong length"));
        }
        Ok(Self {
            width,
            height,
            vocab,
            table,
        })
    }

    /// Same logits for a cell regardless of its current token.
    pub fn constant(width: usize, height: usize, vocab: usize, per_cell: &[Vec<f64>]) -> Result<Self> {
        if per_cell.len() != width * height || per_cell.iter().any(|r| r.len() != vocab) {
            return Err(Error::shape("per-cell logits have the wrong shape"));
        }
        let mut table = Vec::with_capacity(width * height * (vocab + 1) * vocab);
        for row in per_cell {
            for _ in 0..=vocab {
                table.extend_from_slice(row);
            }
        }
        Self::new(width, height, vocab, table)
    }

    pub fn row(&self, cell: usize, token: u32) -> &[f64] {
        let at = (cell * (self.vocab + 1) + token as usize) * self.vocab;
        &self.table[at..at + self.vocab]
    }
}

impl TokenRefiner for TabularRefiner {
    fn vocab(&self) -> usize {
        self.vocab
    }

    fn logits(&self, state: &DiffusionState, _cond: &TokenGrid) -> Result<Logits> {
        let st = state.tokens();
        if st.width() != self.width || st.height() != self.height {
            return Err(Error::shape("tabular refiner grid shape mismatch"));
        }
        let mut data = Vec::with_capacity(st.len() * self.vocab);
        for (i, &t) in st.tokens().iter().enumerate() {
            data.extend_from_slice(self.row(i, t));
        }
        Logits::new(self.width, self.height, self.vocab, data)
    }
}

/// Probability for cell `i` depends only on its token:
/// `table[i * N + token]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularEvaluator {
    pub width: usize,
    pub height: usize,
    pub vocab: usize,
    pub table: Vec<f64>,
}

impl TabularEvaluator {
    pub fn new(width: usize, height: usize, vocab: usize, table: Vec<f64>) -> Result<Self> {
        if table.len() != width * height * vocab {
            return Err(Error::shape("tabular evaluator table has the wrong length"));
        }
        if table.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return Err(Error::range("tabular evaluator probabilities must lie in (0, 1)"));
        }
        Ok(Self {
            width,
            height,
            vocab,
            table,
        })
    }
}

impl TokenEvaluator for TabularEvaluator {
    fn probs(&self, grid: &TokenGrid) -> Result<Vec<f64>> {
        if grid.width() != self.width || grid.height() != self.height {
            return Err(Error::shape("tabular evaluator grid shape mismatch"));
        }
        grid.tokens()
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                if t as usize >= self.vocab {
                    Err(Error::MaskSentinel("tabular evaluator input"))
                } else {
                    Ok(self.table[i * self.vocab + t as usize])
                }
            })
            .collect()
    }
}

/// Evaluator returning fixed per-cell probabilities whatever the tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedEvaluator(pub Vec<f64>);

impl TokenEvaluator for FixedEvaluator {
    fn probs(&self, grid: &TokenGrid) -> Result<Vec<f64>> {
        if grid.len() != self.0.len() {
            return Err(Error::shape("fixed evaluator grid size mismatch"));
        }
        Ok(self.0.clone())
    }
}
