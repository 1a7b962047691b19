//! Cross-entropy objectives for restoration, refinement and evaluation.

use crate::error::{Error, Result};
use crate::nets::Logits;
use crate::token::{Mask, TokenGrid};

/// Probability clamp used by the binary cross-entropies.
pub const PROB_CLAMP: f64 = 1e-12;

/// Default β of the class-balanced weight.
pub const BALANCE_BETA: f64 = 0.9999;

#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub step: u64,
    pub restoration: f64,
    pub refiner: f64,
    pub evaluator: f64,
    /// Refiner argmax accuracy on the cells masked by the forward process.
    pub token_acc: f64,
}

impl LossReport {
    pub fn total(&self) -> f64 {
        self.restoration + self.refiner + self.evaluator
    }

    pub const CSV_HEADER: &'static str = "step,L_dist,L_r,L_e,token_acc";

    /// Values print with shortest round-trip formatting, so parsing a row
    /// recovers the exact f64s.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:?},{:?},{:?},{:?}",
            self.step, self.restoration, self.refiner, self.evaluator, self.token_acc
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 5 {
            return Err(Error::format("loss log row", line.to_string()));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::format("loss log row", line.to_string()))
        };
        Ok(Self {
            step: f[0]
                .parse()
                .map_err(|_| Error::format("loss log row", line.to_string()))?,
            restoration: num(f[1])?,
            refiner: num(f[2])?,
            evaluator: num(f[3])?,
            token_acc: num(f[4])?,
        })
    }
}

/// Mean softmax cross-entropy over all cells, with the gradient on the
/// logits: (softmax − one-hot) / cells.
pub fn ce_tokens(logits: &Logits, targets: &TokenGrid) -> Result<LossValue> {
    if logits.width() != targets.width() || logits.height() != targets.height() {
        return Err(Error::shape("ce_tokens: logits and targets differ in shape"));
    }
    if logits.classes() != targets.vocab() {
        return Err(Error::shape("ce_tokens: class count differs from target vocabulary"));
    }
    targets.require_mask_free("cross-entropy targets")?;
    let classes = logits.classes();
    let cells = logits.cells() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; logits.data().len()];
    for (i, &t) in targets.tokens().iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        value += lse - row[t as usize];
        let g = &mut grad[i * classes..(i + 1) * classes];
        for (gk, &v) in g.iter_mut().zip(row) {
            *gk = (v - lse).exp() / cells;
        }
        g[t as usize] -= 1.0 / cells;
    }
    Ok(LossValue {
        value: value / cells,
        grad,
    })
}

fn check_probs(probs: &[f64], target: &Mask) -> Result<()> {
    if probs.len() != target.len() {
        return Err(Error::shape(format!(
            "{} probabilities for a {}-cell mask",
            probs.len(),
            target.len()
        )));
    }
    Ok(())
}

/// Per-label weighted mean binary cross-entropy; shared by the plain and
/// class-balanced variants.
fn weighted_bce(probs: &[f64], labels: &[bool], w_pos: f64, w_neg: f64) -> LossValue {
    let m = probs.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(probs.len());
    for (&p, &y) in probs.iter().zip(labels) {
        let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        if y {
            value -= w_pos * pc.ln();
            grad.push(-w_pos / (pc * m));
        } else {
            value -= w_neg * (1.0 - pc).ln();
            grad.push(w_neg / ((1.0 - pc) * m));
        }
    }
    LossValue {
        value: value / m,
        grad,
    }
}

/// Mean binary cross-entropy of per-cell probabilities against a mask.
pub fn bce_mask(probs: &[f64], target: &Mask) -> Result<LossValue> {
    check_probs(probs, target)?;
    Ok(weighted_bce(probs, target.bits(), 1.0, 1.0))
}

/// Class-balanced weight (1 − β) / (1 − β^n).
pub fn balanced_weight(count: u64, beta: f64) -> Result<f64> {
    if count == 0 {
        return Err(Error::range("balanced_weight needs a class count >= 1"));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::range(format!("balance beta {beta} outside (0, 1)")));
    }
    if count == 1 {
        return Ok(1.0);
    }
    // 1 − β^n = −expm1(n · ln β), with ln β = ln_1p(β − 1).
    let denom = -(count as f64 * (beta - 1.0).ln_1p()).exp_m1();
    Ok((1.0 - beta) / denom)
}

/// Binary cross-entropy with each label's terms scaled by
/// `balanced_weight(n_y, beta)`, `n_y` counted over `labels` itself. A class
/// absent from the batch contributes nothing.
pub fn balanced_bce(probs: &[f64], labels: &[bool], beta: f64) -> Result<LossValue> {
    if probs.len() != labels.len() {
        return Err(Error::shape("balanced_bce: probabilities and labels differ in length"));
    }
    let pos = labels.iter().filter(|&&y| y).count() as u64;
    let neg = labels.len() as u64 - pos;
    let w_pos = if pos > 0 { balanced_weight(pos, beta)? } else { 0.0 };
    let w_neg = if neg > 0 { balanced_weight(neg, beta)? } else { 0.0 };
    Ok(weighted_bce(probs, labels, w_pos, w_neg))
}

pub fn balanced_bce_mask(probs: &[f64], target: &Mask, beta: f64) -> Result<LossValue> {
    check_probs(probs, target)?;
    balanced_bce(probs, target.bits(), beta)
}

/// Cells where a prediction equals the ground-truth token.
pub fn make_ground_truth_mask(pred: &TokenGrid, truth: &TokenGrid) -> Result<Mask> {
    if pred.width() != truth.width() || pred.height() != truth.height() {
        return Err(Error::shape("ground-truth mask: grids differ in shape"));
    }
    truth.require_mask_free("ground-truth tokens")?;
    let bits = pred
        .tokens()
        .iter()
        .zip(truth.tokens())
        .map(|(a, b)| a == b)
        .collect();
    Mask::new(pred.width(), pred.height(), bits)
}
