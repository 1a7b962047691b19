//! Held-out evaluation of a trained model against its E_l argmax baseline.

use rayon::prelude::*;

use crate::error::Result;
use crate::imaging::{color_correct, decode_tokens, psnr, ssim, Image};
use crate::nets::Nets;
use crate::rng::{derive_seed, Stream};
use crate::sampler::{mask_dispersion, sample, SampleConfig, Trajectory};
use crate::token::TokenGrid;
use crate::trainer::TrainPair;
use crate::world::{World, WorldSample};

/// Initial restoration S_l followed by the reverse process.
#[derive(Clone, Debug, PartialEq)]
pub struct Restored {
    pub s_l: TokenGrid,
    pub s_0: TokenGrid,
    pub trajectory: Trajectory,
}

pub fn restore(nets: &Nets, pair: &TrainPair, cfg: &SampleConfig) -> Result<Restored> {
    let s_l = nets
        .restoration
        .forward(pair.input(nets.restoration.mode())?)?
        .argmax();
    let (s_0, trajectory) = sample(&s_l, &nets.refiner, &nets.evaluator, cfg)?;
    Ok(Restored {
        s_l,
        s_0,
        trajectory,
    })
}

/// Per-input comparison of S_l (baseline) and S_0.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub index: u64,
    pub start_step: usize,
    pub cells: usize,
    pub hits_l: usize,
    pub hits_0: usize,
    /// Cells masked when the reverse process starts.
    pub masked: usize,
    pub masked_hits_l: usize,
    pub masked_hits_0: usize,
    pub psnr_l: f64,
    pub psnr_0: f64,
    /// S_0 decode after colour correction against the degraded input.
    pub psnr_0_cc: f64,
    pub ssim_l: f64,
    pub ssim_0: f64,
    pub dispersion: Option<f64>,
}

/// Decoded images of one evaluated input.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalImages {
    pub before: Image,
    pub after: Image,
    pub corrected: Image,
}

/// Sampler seed for held-out input `index`.
pub fn item_config(cfg: &SampleConfig, index: u64) -> SampleConfig {
    SampleConfig {
        seed: derive_seed(cfg.seed, "input", &[index]),
        ..*cfg
    }
}

pub fn evaluate_one(
    nets: &Nets,
    world: &World,
    sample_in: &WorldSample,
    index: u64,
    cfg: &SampleConfig,
) -> Result<(EvalRecord, Restored, EvalImages)> {
    let pair = TrainPair {
        hq: sample_in.hq.clone(),
        lq: sample_in.lq.clone(),
        lq_image: Some(sample_in.lq_image.clone()),
    };
    let r = restore(nets, &pair, &item_config(cfg, index))?;
    let tile = world.config().tile;
    let before = decode_tokens(&r.s_l, world.codebook(), tile)?;
    let after = decode_tokens(&r.s_0, world.codebook(), tile)?;
    let corrected = color_correct(&after, &sample_in.lq_image)?;
    let hq = &sample_in.hq;
    let init = r.trajectory.initial.mask().bits();
    let masked_hits = |g: &TokenGrid| {
        (0..hq.len())
            .filter(|&i| !init[i] && g.tokens()[i] == hq.tokens()[i])
            .count()
    };
    let rec = EvalRecord {
        index,
        start_step: r.trajectory.start_step,
        cells: hq.len(),
        hits_l: r.s_l.matches(hq),
        hits_0: r.s_0.matches(hq),
        masked: init.iter().filter(|&&b| !b).count(),
        masked_hits_l: masked_hits(&r.s_l),
        masked_hits_0: masked_hits(&r.s_0),
        psnr_l: psnr(&before, &sample_in.hq_image)?,
        psnr_0: psnr(&after, &sample_in.hq_image)?,
        psnr_0_cc: psnr(&corrected, &sample_in.hq_image)?,
        ssim_l: ssim(&before, &sample_in.hq_image)?,
        ssim_0: ssim(&after, &sample_in.hq_image)?,
        dispersion: r.trajectory.dispersion(),
    };
    Ok((
        rec,
        r,
        EvalImages {
            before,
            after,
            corrected,
        },
    ))
}

/// Evaluates every sample in parallel; records come back in input order.
pub fn evaluate_set(
    nets: &Nets,
    world: &World,
    samples: &[WorldSample],
    cfg: &SampleConfig,
) -> Result<Vec<EvalRecord>> {
    samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| evaluate_one(nets, world, s, i as u64, cfg).map(|r| r.0))
        .collect()
}

/// Means over a set of records; accuracies pool cells across inputs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalSummary {
    pub inputs: usize,
    pub mean_start_step: f64,
    pub acc_l: f64,
    pub acc_0: f64,
    pub masked_acc_l: f64,
    pub masked_acc_0: f64,
    pub psnr_l: f64,
    pub psnr_0: f64,
    pub psnr_0_cc: f64,
    pub ssim_l: f64,
    pub ssim_0: f64,
    /// Mean over inputs with a defined dispersion.
    pub dispersion: Option<f64>,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn summarize(records: &[EvalRecord]) -> EvalSummary {
    let n = records.len();
    if n == 0 {
        return EvalSummary::default();
    }
    let sum = |f: fn(&EvalRecord) -> usize| records.iter().map(f).sum::<usize>();
    let mean = |f: fn(&EvalRecord) -> f64| records.iter().map(f).sum::<f64>() / n as f64;
    let disp: Vec<f64> = records.iter().filter_map(|r| r.dispersion).collect();
    EvalSummary {
        inputs: n,
        mean_start_step: mean(|r| r.start_step as f64),
        acc_l: ratio(sum(|r| r.hits_l), sum(|r| r.cells)),
        acc_0: ratio(sum(|r| r.hits_0), sum(|r| r.cells)),
        masked_acc_l: ratio(sum(|r| r.masked_hits_l), sum(|r| r.masked)),
        masked_acc_0: ratio(sum(|r| r.masked_hits_0), sum(|r| r.masked)),
        psnr_l: mean(|r| r.psnr_l),
        psnr_0: mean(|r| r.psnr_0),
        psnr_0_cc: mean(|r| r.psnr_0_cc),
        ssim_l: mean(|r| r.ssim_l),
        ssim_0: mean(|r| r.ssim_0),
        dispersion: (!disp.is_empty()).then(|| disp.iter().sum::<f64>() / disp.len() as f64),
    }
}

/// Dispersion of a compact block of `count` cells against `count` cells
/// drawn uniformly at random from a `width x height` grid.
pub fn dispersion_sanity(width: usize, height: usize, count: usize, seed: u64) -> Option<(f64, f64)> {
    if count < 2 || count > width * height {
        return None;
    }
    let side = (1..=width).find(|s| s * s >= count || *s == width)?;
    let clustered: Vec<usize> = (0..count).map(|i| (i / side) * width + i % side).collect();
    let mut rng = Stream::derive(seed, "dispersion_sanity", &[]);
    let uniform = rng.partial_shuffle(width * height, count);
    Some((
        mask_dispersion(&clustered, width)?,
        mask_dispersion(&uniform, width)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clustered_block_is_tighter_than_uniform() {
        for seed in 0..20 {
            let (c, u) = dispersion_sanity(16, 16, 16, seed).unwrap();
            assert!(c < u, "{c} {u}");
        }
        assert!(dispersion_sanity(4, 4, 1, 0).is_none());
        assert!(dispersion_sanity(4, 4, 17, 0).is_none());
    }

    #[test]
    fn summary_pools_cells() {
        let rec = |hits, cells| EvalRecord {
            index: 0,
            start_step: 2,
            cells,
            hits_l: hits,
            hits_0: hits,
            masked: cells,
            masked_hits_l: 0,
            masked_hits_0: hits,
            psnr_l: 10.0,
            psnr_0: 20.0,
            psnr_0_cc: 20.0,
            ssim_l: 0.5,
            ssim_0: 0.5,
            dispersion: None,
        };
        let s = summarize(&[rec(1, 4), rec(3, 4)]);
        assert_eq!(s.acc_0, 0.5);
        assert_eq!(s.masked_acc_0, 0.5);
        assert_eq!(s.psnr_0, 20.0);
        assert_eq!(s.dispersion, None);
        assert_eq!(s.mean_start_step, 2.0);
    }
}
