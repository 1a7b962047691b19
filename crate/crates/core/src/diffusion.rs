//! Mask-based forward corruption and the state advanced by the sampler.

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::schedule::ScheduleSpec;
use crate::token::{Mask, TokenGrid};

/// Token grid, keep-mask and step index. A cell holds the mask sentinel
/// exactly when its mask bit is clear.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiffusionState {
    tokens: TokenGrid,
    mask: Mask,
    step: usize,
}

impl DiffusionState {
    pub fn new(tokens: TokenGrid, mask: Mask, step: usize) -> Result<Self> {
        if !mask.fits(&tokens) {
            return Err(Error::shape("state mask does not match token grid"));
        }
        let sentinel = tokens.mask_id();
        let consistent = tokens
            .tokens()
            .iter()
            .zip(mask.bits())
            .all(|(&t, &keep)| (t == sentinel) != keep);
        if !consistent {
            return Err(Error::shape(
                "state tokens and mask disagree on which cells are masked",
            ));
        }
        Ok(Self { tokens, mask, step })
    }

    /// Fully masked state at step `step`.
    pub fn masked(width: usize, height: usize, vocab: usize, step: usize) -> Result<Self> {
        let tokens = TokenGrid::filled(width, height, vocab, vocab as u32)?;
        Self::new(tokens, Mask::filled(width, height, false), step)
    }

    pub fn tokens(&self) -> &TokenGrid {
        &self.tokens
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn masked_count(&self) -> usize {
        self.mask.len() - self.mask.count()
    }
}

/// Keeps cells where `mask` is set and replaces the rest with the sentinel.
pub fn apply_mask(tokens: &TokenGrid, mask: &Mask) -> Result<TokenGrid> {
    if !mask.fits(tokens) {
        return Err(Error::shape("apply_mask: mask does not match token grid"));
    }
    let sentinel = tokens.mask_id();
    let out = tokens
        .tokens()
        .iter()
        .zip(mask.bits())
        .map(|(&t, &keep)| if keep { t } else { sentinel })
        .collect();
    TokenGrid::new(tokens.width(), tokens.height(), tokens.vocab(), out)
}

/// Masks ⌈γ(r)·N⌉ cells of `clean`, chosen uniformly without replacement by
/// a seeded partial Fisher-Yates shuffle.
pub fn forward_mask(
    clean: &TokenGrid,
    r: f64,
    spec: &ScheduleSpec,
    seed: u64,
) -> Result<DiffusionState> {
    clean.require_mask_free("forward_mask input")?;
    let cells = clean.len();
    let count = spec.mask_count(r, cells)?;
    let mut rng = Stream::derive(seed, "forward_mask", &[]);
    let masked = rng.partial_shuffle(cells, count);
    let mut keep = vec![true; cells];
    for i in masked {
        keep[i] = false;
    }
    let mask = Mask::new(clean.width(), clean.height(), keep)?;
    let tokens = apply_mask(clean, &mask)?;
    DiffusionState::new(tokens, mask, 0)
}
