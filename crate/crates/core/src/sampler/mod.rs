//! Reverse diffusion: iterative token refinement with evaluator-driven (or
//! top-k confidence) selection, and the adaptive choice of start step.

mod select;
pub mod tabular;

use std::fmt;
use std::str::FromStr;

pub use select::{select_by_scores, select_topk_committed};

use crate::diffusion::{apply_mask, DiffusionState};
use crate::error::{Error, Result};
use crate::nets::{argmax, softmax, EvaluatorNet, Logits, RefinerNet};
use crate::rng::Stream;
use crate::schedule::ScheduleSpec;
use crate::token::{Mask, TokenGrid};

/// Anything that proposes per-cell logits for a masked state.
pub trait TokenRefiner {
    fn vocab(&self) -> usize;
    fn logits(&self, state: &DiffusionState, cond: &TokenGrid) -> Result<Logits>;
}

/// Anything that scores how likely each token of a grid is correct.
pub trait TokenEvaluator {
    fn probs(&self, grid: &TokenGrid) -> Result<Vec<f64>>;
}

impl TokenRefiner for RefinerNet {
    fn vocab(&self) -> usize {
        RefinerNet::vocab(self)
    }

    fn logits(&self, state: &DiffusionState, cond: &TokenGrid) -> Result<Logits> {
        self.forward(state, cond)
    }
}

impl TokenEvaluator for EvaluatorNet {
    fn probs(&self, grid: &TokenGrid) -> Result<Vec<f64>> {
        self.forward(grid)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Keep cells sampled from the evaluator's scores; all cells are
    /// re-scored every step, so kept tokens can be revised.
    Evaluator,
    /// Keep the most confident refiner predictions; committed cells never
    /// change again.
    TopK,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SelectionMode {
    /// Tokens sampled from the tempered softmax, cells drawn by Gumbel-top-k.
    Stochastic,
    /// Argmax tokens and top-k cells.
    Deterministic,
}

macro_rules! str_enum {
    ($ty:ty, $($variant:path => $name:literal),+) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $name),+ })
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(format!(
                        "expected {}, got `{other}`",
                        [$($name),+].join("|")
                    )),
                }
            }
        }
    };
}

str_enum!(Strategy, Strategy::Evaluator => "evaluator", Strategy::TopK => "topk");
str_enum!(
    SelectionMode,
    SelectionMode::Stochastic => "stochastic",
    SelectionMode::Deterministic => "deterministic"
);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleConfig {
    pub schedule: ScheduleSpec,
    pub alpha: f64,
    pub strategy: Strategy,
    pub selection: SelectionMode,
    pub temperature: f64,
    pub adaptive: bool,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleSpec::default(),
            alpha: 0.5,
            strategy: Strategy::Evaluator,
            selection: SelectionMode::Stochastic,
            temperature: 1.0,
            adaptive: true,
            seed: 0,
        }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::range(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::range(format!("temperature {} must be > 0", self.temperature)));
        }
        if self.schedule.steps == 0 {
            return Err(Error::range("schedule needs T >= 1"));
        }
        Ok(())
    }
}

/// One reverse step t → t−1.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryStep {
    pub t: usize,
    /// Number of cells kept after this step.
    pub k: usize,
    /// Refiner output before re-masking.
    pub refined: TokenGrid,
    /// Cells kept after this step (the mask of `state`).
    pub selected: Mask,
    /// Cells kept going into this step.
    pub previous: Mask,
    /// S_{t−1}.
    pub state: DiffusionState,
}

impl TrajectoryStep {
    /// Cells kept now that were masked going into the step.
    pub fn newly_selected(&self) -> Vec<usize> {
        self.selected
            .bits()
            .iter()
            .zip(self.previous.bits())
            .enumerate()
            .filter_map(|(i, (&now, &before))| (now && !before).then_some(i))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub start_step: usize,
    /// Evaluator trust mask over S_l when adaptive inference ran.
    pub trusted: Option<Mask>,
    pub initial: DiffusionState,
    pub strategy: Strategy,
    pub selection: SelectionMode,
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn final_state(&self) -> &DiffusionState {
        self.steps.last().map(|s| &s.state).unwrap_or(&self.initial)
    }

    /// Mean over steps of [`mask_dispersion`] of the newly selected cells;
    /// steps with fewer than two new cells are skipped.
    pub fn dispersion(&self) -> Option<f64> {
        let width = self.initial.tokens().width();
        let per_step: Vec<f64> = self
            .steps
            .iter()
            .filter_map(|s| mask_dispersion(&s.newly_selected(), width))
            .collect();
        if per_step.is_empty() {
            None
        } else {
            Some(per_step.iter().sum::<f64>() / per_step.len() as f64)
        }
    }
}

/// Mean pairwise Euclidean distance between cells given by linear index on
/// a grid of the given width. `None` for fewer than two cells.
pub fn mask_dispersion(cells: &[usize], width: usize) -> Option<f64> {
    if cells.len() < 2 {
        return None;
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (a, &i) in cells.iter().enumerate() {
        for &j in &cells[a + 1..] {
            let dx = (i % width) as f64 - (j % width) as f64;
            let dy = (i / width) as f64 - (j / width) as f64;
            total += dx.hypot(dy);
            pairs += 1;
        }
    }
    Some(total / pairs as f64)
}

/// Largest t ≤ T whose unmask count can hold `trusted` cells, found by
/// decrementing from T while k(t) < trusted.
pub fn start_step_for(spec: &ScheduleSpec, trusted: usize, cells: usize) -> Result<usize> {
    let mut t = spec.steps;
    while t > 1 && spec.unmask_count(t, cells)? < trusted {
        t -= 1;
    }
    Ok(t)
}

/// Trust mask `p ≥ α` over S_l and the start step it implies.
pub fn select_start_step<E: TokenEvaluator + ?Sized>(
    s_l: &TokenGrid,
    evaluator: &E,
    alpha: f64,
    spec: &ScheduleSpec,
) -> Result<(usize, Mask)> {
    s_l.require_mask_free("start-step input")?;
    let probs = evaluator.probs(s_l)?;
    if probs.len() != s_l.len() {
        return Err(Error::shape("evaluator output does not match grid size"));
    }
    let bits = probs.iter().map(|&p| p >= alpha).collect();
    let trust = Mask::new(s_l.width(), s_l.height(), bits)?;
    let t = start_step_for(spec, trust.count(), s_l.len())?;
    Ok((t, trust))
}

/// Trusted cells keep their S_l token, the rest are masked.
pub fn adaptive_init(s_l: &TokenGrid, trust: &Mask, step: usize) -> Result<DiffusionState> {
    s_l.require_mask_free("adaptive init input")?;
    DiffusionState::new(apply_mask(s_l, trust)?, trust.clone(), step)
}

/// Draws a token for every cell from softmax(logits / temperature), or takes
/// the argmax in deterministic mode. Returns the grid and the probability of
/// each chosen token.
pub fn refine_step<R: TokenRefiner + ?Sized>(
    state: &DiffusionState,
    s_l: &TokenGrid,
    refiner: &R,
    temperature: f64,
    mode: SelectionMode,
    rng: &mut Stream,
) -> Result<(TokenGrid, Vec<f64>)> {
    if !(temperature > 0.0) {
        return Err(Error::range(format!("temperature {temperature} must be > 0")));
    }
    let logits = refiner.logits(state, s_l)?;
    logits.require_finite()?;
    let n = logits.cells();
    let mut tokens = Vec::with_capacity(n);
    let mut confidence = Vec::with_capacity(n);
    for i in 0..n {
        let p = softmax(logits.row(i), temperature);
        let k = match mode {
            SelectionMode::Stochastic => rng.categorical(&p),
            SelectionMode::Deterministic => argmax(logits.row(i)),
        };
        tokens.push(k as u32);
        confidence.push(p[k]);
    }
    let grid = TokenGrid::new(logits.width(), logits.height(), logits.classes(), tokens)?;
    Ok((grid, confidence))
}

/// Exactly `k` cells of `refined`, chosen from the evaluator's scores.
pub fn evaluator_select<E: TokenEvaluator + ?Sized>(
    refined: &TokenGrid,
    evaluator: &E,
    k: usize,
    mode: SelectionMode,
    rng: &mut Stream,
) -> Result<Mask> {
    let probs = evaluator.probs(refined)?;
    select_by_scores(&probs, refined.width(), refined.height(), k, mode, rng)
}

/// Runs the reverse process from S_l and returns S_0 with its trajectory.
pub fn sample<R, E>(
    s_l: &TokenGrid,
    refiner: &R,
    evaluator: &E,
    cfg: &SampleConfig,
) -> Result<(TokenGrid, Trajectory)>
where
    R: TokenRefiner + ?Sized,
    E: TokenEvaluator + ?Sized,
{
    cfg.validate()?;
    s_l.require_mask_free("sampler input")?;
    if s_l.vocab() != refiner.vocab() {
        return Err(Error::shape(format!(
            "input vocabulary {} != refiner vocabulary {}",
            s_l.vocab(),
            refiner.vocab()
        )));
    }
    let spec = &cfg.schedule;
    let cells = s_l.len();
    let mut rng = Stream::derive(cfg.seed, "sample", &[]);
    let (start_step, trusted, initial) = if cfg.adaptive {
        let (t, trust) = select_start_step(s_l, evaluator, cfg.alpha, spec)?;
        let init = adaptive_init(s_l, &trust, t)?;
        (t, Some(trust), init)
    } else {
        let t = spec.steps;
        (t, None, DiffusionState::masked(s_l.width(), s_l.height(), s_l.vocab(), t)?)
    };

    let mut state = initial.clone();
    let mut steps = Vec::with_capacity(start_step);
    for t in (1..=start_step).rev() {
        let k = spec.unmask_count(t, cells)?;
        let (mut refined, confidence) =
            refine_step(&state, s_l, refiner, cfg.temperature, cfg.selection, &mut rng)?;
        let selected = match cfg.strategy {
            Strategy::Evaluator => evaluator_select(&refined, evaluator, k, cfg.selection, &mut rng)?,
            Strategy::TopK => {
                let kept = state.tokens().tokens();
                let merged = refined
                    .tokens()
                    .iter()
                    .zip(kept)
                    .zip(state.mask().bits())
                    .map(|((&new, &old), &committed)| if committed { old } else { new })
                    .collect();
                refined = TokenGrid::new(refined.width(), refined.height(), refined.vocab(), merged)?;
                select_topk_committed(&confidence, state.mask(), k)?
            }
        };
        let previous = state.mask().clone();
        state = DiffusionState::new(apply_mask(&refined, &selected)?, selected.clone(), t - 1)?;
        steps.push(TrajectoryStep {
            t,
            k,
            refined,
            selected,
            previous,
            state: state.clone(),
        });
    }
    let out = state.tokens().clone();
    debug_assert!(!out.has_mask());
    Ok((
        out,
        Trajectory {
            start_step,
            trusted,
            initial,
            strategy: cfg.strategy,
            selection: cfg.selection,
            steps,
        },
    ))
}
