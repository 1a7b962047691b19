//! Choosing which refined tokens survive a step.

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::token::Mask;

use super::SelectionMode;

fn check_k(k: usize, cells: usize) -> Result<()> {
    if k == 0 || k > cells {
        return Err(Error::range(format!("selection size {k} outside [1, {cells}]")));
    }
    Ok(())
}

/// Indices of the `k` largest keys; ties go to the lower index.
fn top_indices(keys: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Keep exactly `k` of the `width x height` cells scored by `probs`.
///
/// Deterministic mode keeps the `k` highest scores. Stochastic mode draws
/// `k` cells without replacement, each draw proportional to the remaining
/// scores, by perturbing `ln p` with Gumbel noise and taking the top `k`.
pub fn select_by_scores(
    probs: &[f64],
    width: usize,
    height: usize,
    k: usize,
    mode: SelectionMode,
    rng: &mut Stream,
) -> Result<Mask> {
    if probs.len() != width * height {
        return Err(Error::shape(format!(
            "{} scores for a {width}x{height} grid",
            probs.len()
        )));
    }
    check_k(k, probs.len())?;
    if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
        return Err(Error::NonFinite(format!("selection score {p}")));
    }
    let keys: Vec<f64> = match mode {
        SelectionMode::Deterministic => probs.to_vec(),
        SelectionMode::Stochastic => probs.iter().map(|p| p.ln() + rng.gumbel()).collect(),
    };
    Ok(Mask::from_indices(width, height, &top_indices(&keys, k)))
}

/// Monotone top-k commitment: cells in `committed` stay selected, the other
/// `k - |committed|` slots go to the most confident uncommitted cells.
pub fn select_topk_committed(confidence: &[f64], committed: &Mask, k: usize) -> Result<Mask> {
    if confidence.len() != committed.len() {
        return Err(Error::shape("confidence and committed mask differ in length"));
    }
    check_k(k, confidence.len())?;
    let have = committed.count();
    if k < have {
        return Err(Error::range(format!(
            "selection size {k} is below the {have} committed cells"
        )));
    }
    let keys: Vec<f64> = confidence
        .iter()
        .zip(committed.bits())
        .map(|(&c, &kept)| if kept { f64::INFINITY } else { c })
        .collect();
    Ok(Mask::from_indices(
        committed.width(),
        committed.height(),
        &top_indices(&keys, k),
    ))
}
