//! Joint training of the restoration, refiner and evaluator networks.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::diffusion::forward_mask;
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::losses::{
    balanced_bce, bce_mask, ce_tokens, make_ground_truth_mask, LossReport, BALANCE_BETA,
};
use crate::nets::{
    softmax, AdamConfig, Gradients, InputMode, NetCache, NetConfig, Nets, RestorationInput,
    TensorFile,
};
use crate::rng::{derive_seed, Stream};
use crate::schedule::ScheduleSpec;
use crate::token::{Mask, TokenGrid};

/// What the evaluator sees for the cells masked by the forward process.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EvaluatorInput {
    /// The mask sentinel itself.
    Sentinel,
    /// Detached samples from the current refiner.
    Sampled,
}

impl fmt::Display for EvaluatorInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvaluatorInput::Sentinel => "sentinel",
            EvaluatorInput::Sampled => "sampled",
        })
    }
}

impl FromStr for EvaluatorInput {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sentinel" => Ok(EvaluatorInput::Sentinel),
            "sampled" => Ok(EvaluatorInput::Sampled),
            other => Err(format!("expected sentinel|sampled, got `{other}`")),
        }
    }
}

/// Which networks receive optimizer steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Freeze {
    pub restoration: bool,
    pub refiner: bool,
    pub evaluator: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch: usize,
    pub iterations: u64,
    pub seed: u64,
    pub schedule: ScheduleSpec,
    pub adam: AdamConfig,
    pub balance_beta: f64,
    pub evaluator_input: EvaluatorInput,
    pub net: NetConfig,
    /// Write a checkpoint every this many steps (0 = final only).
    pub checkpoint_every: u64,
    pub freeze: Freeze,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch: 16,
            iterations: 2000,
            seed: 0,
            schedule: ScheduleSpec::default(),
            adam: AdamConfig::default(),
            balance_beta: BALANCE_BETA,
            evaluator_input: EvaluatorInput::Sampled,
            net: NetConfig::default(),
            checkpoint_every: 1000,
            freeze: Freeze::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::range("batch must be >= 1"));
        }
        if self.iterations == 0 {
            return Err(Error::range("iterations must be >= 1"));
        }
        if !(self.balance_beta > 0.0 && self.balance_beta < 1.0) {
            return Err(Error::range("balance beta must lie in (0, 1)"));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::range("learning rate must be > 0"));
        }
        self.net.validate()
    }
}

/// One training example: ground-truth tokens and the degraded input in
/// both token and pixel form.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainPair {
    pub hq: TokenGrid,
    pub lq: TokenGrid,
    pub lq_image: Option<Image>,
}

impl TrainPair {
    pub fn input(&self, mode: InputMode) -> Result<RestorationInput<'_>> {
        match mode {
            InputMode::Tokens => Ok(RestorationInput::Tokens(&self.lq)),
            InputMode::Pixels { .. } => self
                .lq_image
                .as_ref()
                .map(RestorationInput::Pixels)
                .ok_or_else(|| Error::shape("pixel input mode needs the degraded image")),
        }
    }
}

/// Deterministic, indexable stream of training pairs.
pub trait PairSource: Sync {
    fn pair(&self, index: u64) -> Result<TrainPair>;
}

impl PairSource for Vec<TrainPair> {
    fn pair(&self, index: u64) -> Result<TrainPair> {
        if self.is_empty() {
            return Err(Error::range("empty training set"));
        }
        Ok(self[(index % self.len() as u64) as usize].clone())
    }
}

/// Forward state of one item, kept until the batch-level evaluator term
/// is known.
struct ItemPass {
    rest_cache: NetCache,
    rest_grad: Vec<f64>,
    ref_cache: NetCache,
    ref_grad: Vec<f64>,
    eval_t_cache: NetCache,
    eval_t_grad: Vec<f64>,
    eval_l_cache: NetCache,
    eval_l_probs: Vec<f64>,
    gt_l: Mask,
    l_dist: f64,
    l_r: f64,
    l_e_t: f64,
    acc_hits: usize,
    acc_total: usize,
}

fn require_finite(v: f64, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} loss is {v}")))
    }
}

pub struct Trainer {
    cfg: TrainConfig,
    nets: Nets,
    step: u64,
}

pub const STEP_KEY: &str = "trainer.step";

impl Trainer {
    pub fn new(cfg: TrainConfig, vocab: usize, mode: InputMode) -> Result<Self> {
        cfg.validate()?;
        let nets = Nets::new(cfg.net, vocab, mode, derive_seed(cfg.seed, "init", &[]))?;
        Ok(Self { cfg, nets, step: 0 })
    }

    pub fn from_nets(cfg: TrainConfig, nets: Nets, step: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, nets, step })
    }

    pub fn from_checkpoint(cfg: TrainConfig, file: &TensorFile) -> Result<Self> {
        let nets = Nets::from_tensor_file(file)?;
        let step = file.scalar(STEP_KEY)? as u64;
        Self::from_nets(cfg, nets, step)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn nets(&self) -> &Nets {
        &self.nets
    }

    pub fn nets_mut(&mut self) -> &mut Nets {
        &mut self.nets
    }

    pub fn into_nets(self) -> Nets {
        self.nets
    }

    /// Completed optimizer steps.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn checkpoint(&self) -> TensorFile {
        self.nets.to_tensor_file(&[(STEP_KEY, self.step as f64)])
    }

    /// Batch for the next step, drawn from `source` by global item index.
    pub fn next_batch<S: PairSource + ?Sized>(&self, source: &S) -> Result<Vec<TrainPair>> {
        let b = self.cfg.batch as u64;
        (0..b).map(|i| source.pair(self.step * b + i)).collect()
    }

    fn forward_item(&self, pair: &TrainPair, step: u64, item: usize) -> Result<ItemPass> {
        let seeds = |label: &str| derive_seed(self.cfg.seed, label, &[step, item as u64]);
        let nets = &self.nets;
        let hq = &pair.hq;
        hq.require_mask_free("training target")?;

        let (rest_logits, rest_cache) =
            nets.restoration.forward_cached(pair.input(nets.restoration.mode())?)?;
        let dist = ce_tokens(&rest_logits, hq)?;
        let s_l = rest_logits.argmax();
        let gt_l = make_ground_truth_mask(&s_l, hq)?;

        let r = Stream::derive(self.cfg.seed, "r", &[step, item as u64]).uniform_left_open();
        let s_t = forward_mask(hq, r, &self.cfg.schedule, seeds("mask"))?;
        let (ref_logits, ref_cache) = nets.refiner.forward_cached(&s_t, &s_l)?;
        let refine = ce_tokens(&ref_logits, hq)?;

        let pred = ref_logits.argmax();
        let mut acc_hits = 0;
        let mut acc_total = 0;
        for (i, &keep) in s_t.mask().bits().iter().enumerate() {
            if !keep {
                acc_total += 1;
                acc_hits += usize::from(pred.tokens()[i] == hq.tokens()[i]);
            }
        }

        let (eval_in, eval_target) = match self.cfg.evaluator_input {
            EvaluatorInput::Sentinel => (s_t.tokens().clone(), s_t.mask().clone()),
            EvaluatorInput::Sampled => {
                let mut fill = Stream::derive(self.cfg.seed, "fill", &[step, item as u64]);
                let mut toks = s_t.tokens().tokens().to_vec();
                for (i, &keep) in s_t.mask().bits().iter().enumerate() {
                    if !keep {
                        toks[i] = fill.categorical(&softmax(ref_logits.row(i), 1.0)) as u32;
                    }
                }
                let filled = TokenGrid::new(hq.width(), hq.height(), hq.vocab(), toks)?;
                let target = make_ground_truth_mask(&filled, hq)?;
                (filled, target)
            }
        };
        let (p_t, eval_t_cache) = nets.evaluator.forward_cached(&eval_in)?;
        let e_t = bce_mask(&p_t, &eval_target)?;
        let (eval_l_probs, eval_l_cache) = nets.evaluator.forward_cached(&s_l)?;

        require_finite(dist.value, "restoration")?;
        require_finite(refine.value, "refiner")?;
        require_finite(e_t.value, "evaluator")?;
        Ok(ItemPass {
            rest_cache,
            rest_grad: dist.grad,
            ref_cache,
            ref_grad: refine.grad,
            eval_t_cache,
            eval_t_grad: e_t.grad,
            eval_l_cache,
            eval_l_probs,
            gt_l,
            l_dist: dist.value,
            l_r: refine.value,
            l_e_t: e_t.value,
            acc_hits,
            acc_total,
        })
    }

    /// Forward pass over a batch; returns per-item state, the report and the
    /// class-balanced gradient on every item's S_l probabilities.
    fn forward_batch(&self, batch: &[TrainPair], step: u64) -> Result<(Vec<ItemPass>, LossReport, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::range("empty batch"));
        }
        let passes: Vec<ItemPass> = batch
            .par_iter()
            .enumerate()
            .map(|(i, p)| self.forward_item(p, step, i))
            .collect::<Result<_>>()?;
        let probs: Vec<f64> = passes.iter().flat_map(|p| p.eval_l_probs.iter().copied()).collect();
        let labels: Vec<bool> = passes.iter().flat_map(|p| p.gt_l.bits().iter().copied()).collect();
        let balanced = balanced_bce(&probs, &labels, self.cfg.balance_beta)?;
        require_finite(balanced.value, "class-balanced evaluator")?;
        let b = batch.len() as f64;
        let mean = |f: fn(&ItemPass) -> f64| passes.iter().map(f).sum::<f64>() / b;
        let hits: usize = passes.iter().map(|p| p.acc_hits).sum();
        let total: usize = passes.iter().map(|p| p.acc_total).sum();
        let report = LossReport {
            step: step + 1,
            restoration: mean(|p| p.l_dist),
            refiner: mean(|p| p.l_r),
            evaluator: mean(|p| p.l_e_t) + balanced.value,
            token_acc: if total == 0 { 0.0 } else { hits as f64 / total as f64 },
        };
        Ok((passes, report, balanced.grad))
    }

    /// Losses the next step would report, without updating anything.
    pub fn evaluate(&self, batch: &[TrainPair]) -> Result<LossReport> {
        Ok(self.forward_batch(batch, self.step)?.1)
    }

    /// One optimizer step per (unfrozen) network on `batch`.
    pub fn train_step(&mut self, batch: &[TrainPair]) -> Result<LossReport> {
        let step = self.step;
        let (passes, report, balanced_grad) = self.forward_batch(batch, step)?;
        let b = batch.len() as f64;
        let nets = &self.nets;
        let freeze = self.cfg.freeze;
        let grads: Vec<[Option<Gradients>; 3]> = passes
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let scale = |mut v: Vec<f64>| {
                    v.iter_mut().for_each(|g| *g /= b);
                    v
                };
                let rest = (!freeze.restoration)
                    .then(|| nets.restoration.backward(&p.rest_cache, &scale(p.rest_grad.clone())));
                let refine = (!freeze.refiner)
                    .then(|| nets.refiner.backward(&p.ref_cache, &scale(p.ref_grad.clone())));
                let eval = (!freeze.evaluator).then(|| {
                    let cells = p.eval_l_probs.len();
                    let mut g = nets.evaluator.backward(&p.eval_t_cache, &scale(p.eval_t_grad.clone()));
                    let dl = &balanced_grad[i * cells..(i + 1) * cells];
                    g.add_assign(&nets.evaluator.backward(&p.eval_l_cache, dl));
                    g
                });
                [rest, refine, eval]
            })
            .collect();

        let mut totals: [Option<Gradients>; 3] = [None, None, None];
        for item in grads {
            for (acc, g) in totals.iter_mut().zip(item) {
                if let Some(g) = g {
                    match acc {
                        Some(a) => a.add_assign(&g),
                        None => *acc = Some(g),
                    }
                }
            }
        }
        let adam = self.cfg.adam;
        let [rest, refine, eval] = totals;
        if let Some(g) = rest {
            let p = self.nets.restoration.params_mut();
            p.accumulate(&g);
            p.adam_step(&adam)?;
        }
        if let Some(g) = refine {
            let p = self.nets.refiner.params_mut();
            p.accumulate(&g);
            p.adam_step(&adam)?;
        }
        if let Some(g) = eval {
            let p = self.nets.evaluator.params_mut();
            p.accumulate(&g);
            p.adam_step(&adam)?;
        }
        self.step += 1;
        Ok(report)
    }
}

pub const LOG_FILE: &str = "train_log.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

pub fn checkpoint_name(step: u64) -> String {
    format!("step_{step:07}.ckpt")
}

pub fn write_checkpoint(file: &TensorFile, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    file.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<TensorFile> {
    let bytes = fs::read(path)?;
    TensorFile::read_from(&bytes[..])
}

/// Paths written by [`train`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutputs {
    pub log: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub final_checkpoint: PathBuf,
    pub reports: Vec<LossReport>,
}

/// Runs `trainer` up to `cfg.iterations` total steps, logging every step to
/// `out/train_log.csv` and checkpointing every `checkpoint_every` steps and
/// at the end. A resumed trainer starts a fresh log at its current step.
pub fn train<S: PairSource + ?Sized>(
    trainer: &mut Trainer,
    source: &S,
    out: &Path,
    mut on_step: impl FnMut(&LossReport),
) -> Result<TrainOutputs> {
    fs::create_dir_all(out)?;
    let log_path = out.join(LOG_FILE);
    let mut log = BufWriter::new(fs::File::create(&log_path)?);
    writeln!(log, "{}", LossReport::CSV_HEADER)?;
    let every = trainer.cfg.checkpoint_every;
    let mut checkpoints = Vec::new();
    let mut reports = Vec::new();
    while trainer.step < trainer.cfg.iterations {
        let batch = trainer.next_batch(source)?;
        let report = trainer.train_step(&batch)?;
        writeln!(log, "{}", report.csv_row())?;
        on_step(&report);
        reports.push(report);
        if every > 0 && trainer.step % every == 0 {
            let path = out.join(checkpoint_name(trainer.step));
            write_checkpoint(&trainer.checkpoint(), &path)?;
            checkpoints.push(path);
        }
    }
    log.flush()?;
    let final_checkpoint = out.join(FINAL_CHECKPOINT);
    write_checkpoint(&trainer.checkpoint(), &final_checkpoint)?;
    Ok(TrainOutputs {
        log: log_path,
        checkpoints,
        final_checkpoint,
        reports,
    })
}

pub fn read_log(path: &Path) -> Result<Vec<LossReport>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(LossReport::parse_csv_row)
        .collect()
}
