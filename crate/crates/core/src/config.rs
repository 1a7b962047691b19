//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key must be
//! known; a typo is an error that names the key.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::imaging::DegradeSpec;
use crate::nets::{AdamConfig, InputMode, NetConfig};
use crate::rng::derive_seed;
use crate::sampler::{SampleConfig, SelectionMode, Strategy};
use crate::schedule::{ScheduleKind, ScheduleSpec};
use crate::trainer::{EvaluatorInput, Freeze, TrainConfig};
use crate::world::WorldConfig;

/// Whether the restoration network reads re-quantized tokens or pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputKind {
    Tokens,
    Pixels,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub world: WorldConfig,
    pub schedule: ScheduleSpec,
    pub net: NetConfig,
    pub input: InputKind,
    pub train: TrainConfig,
    pub sample: SampleConfig,
    /// Inputs written by `synth` / evaluated by the experiments.
    pub count: usize,
    pub strategies: Vec<Strategy>,
    pub alphas: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            world: WorldConfig::default(),
            schedule: ScheduleSpec::default(),
            net: NetConfig::default(),
            input: InputKind::Tokens,
            train: toy_train(),
            sample: SampleConfig::default(),
            count: 64,
            strategies: vec![Strategy::Evaluator, Strategy::TopK],
            alphas: vec![0.35, 0.4, 0.45, 0.5, 0.55],
        }
    }
}

/// Standard toy run: 10k iterations at a learning rate of 1e-3.
fn toy_train() -> TrainConfig {
    let mut train = TrainConfig {
        iterations: 10_000,
        ..TrainConfig::default()
    };
    train.adam.lr = 1e-3;
    train
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.parse::<T>().map_err(|e| Error::Config {
        key: key.to_string(),
        reason: format!("cannot parse `{v}`: {e}"),
    })
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config {
            key: key.to_string(),
            reason: format!("expected a boolean, got `{v}`"),
        }),
    }
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

impl RunConfig {
    /// Every accepted key, in canonical order.
    pub const KEYS: &'static [&'static str] = &[
        "seed",
        "world.width",
        "world.height",
        "world.vocab",
        "world.tile",
        "world.texture",
        "world.sweeps",
        "degrade.blur_sigma",
        "degrade.noise_sigma",
        "degrade.factor",
        "degrade.second_pass",
        "schedule.kind",
        "schedule.T",
        "net.context_radius",
        "net.hidden_dim",
        "net.layer_count",
        "net.input",
        "train.batch",
        "train.iterations",
        "train.lr",
        "train.beta1",
        "train.beta2",
        "train.eps",
        "train.balance_beta",
        "train.evaluator_input",
        "train.checkpoint_every",
        "train.freeze",
        "sample.alpha",
        "sample.strategy",
        "sample.selection",
        "sample.temperature",
        "sample.adaptive",
        "data.count",
        "ablate.strategies",
        "sweep.alphas",
    ];

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "world.width" => self.world.width = parse(key, v)?,
            "world.height" => self.world.height = parse(key, v)?,
            "world.vocab" => self.world.vocab = parse(key, v)?,
            "world.tile" => self.world.tile = parse(key, v)?,
            "world.texture" => self.world.texture = parse(key, v)?,
            "world.sweeps" => self.world.sweeps = parse(key, v)?,
            "degrade.blur_sigma" => self.world.degrade.blur_sigma = parse(key, v)?,
            "degrade.noise_sigma" => self.world.degrade.noise_sigma = parse(key, v)?,
            "degrade.factor" => self.world.degrade.factor = parse(key, v)?,
            "degrade.second_pass" => self.world.degrade.second_pass = parse_bool(key, v)?,
            "schedule.kind" => self.schedule.kind = parse::<ScheduleKind>(key, v)?,
            "schedule.T" => self.schedule.steps = parse(key, v)?,
            "net.context_radius" => self.net.context_radius = parse(key, v)?,
            "net.hidden_dim" => self.net.hidden_dim = parse(key, v)?,
            "net.layer_count" => self.net.layer_count = parse(key, v)?,
            "net.input" => {
                self.input = match v {
                    "tokens" => InputKind::Tokens,
                    "pixels" => InputKind::Pixels,
                    _ => {
                        return Err(Error::Config {
                            key: key.to_string(),
                            reason: format!("expected tokens|pixels, got `{v}`"),
                        })
                    }
                }
            }
            "train.batch" => self.train.batch = parse(key, v)?,
            "train.iterations" => self.train.iterations = parse(key, v)?,
            "train.lr" => self.train.adam.lr = parse(key, v)?,
            "train.beta1" => self.train.adam.beta1 = parse(key, v)?,
            "train.beta2" => self.train.adam.beta2 = parse(key, v)?,
            "train.eps" => self.train.adam.eps = parse(key, v)?,
            "train.balance_beta" => self.train.balance_beta = parse(key, v)?,
            "train.evaluator_input" => self.train.evaluator_input = parse::<EvaluatorInput>(key, v)?,
            "train.checkpoint_every" => self.train.checkpoint_every = parse(key, v)?,
            "train.freeze" => {
                let mut f = Freeze::default();
                for name in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    match name {
                        "restoration" => f.restoration = true,
                        "refiner" => f.refiner = true,
                        "evaluator" => f.evaluator = true,
                        other => {
                            return Err(Error::Config {
                                key: key.to_string(),
                                reason: format!("unknown network `{other}`"),
                            })
                        }
                    }
                }
                self.train.freeze = f;
            }
            "sample.alpha" => self.sample.alpha = parse(key, v)?,
            "sample.strategy" => self.sample.strategy = parse::<Strategy>(key, v)?,
            "sample.selection" => self.sample.selection = parse::<SelectionMode>(key, v)?,
            "sample.temperature" => self.sample.temperature = parse(key, v)?,
            "sample.adaptive" => self.sample.adaptive = parse_bool(key, v)?,
            "data.count" => self.count = parse(key, v)?,
            "ablate.strategies" => self.strategies = parse_list(key, v)?,
            "sweep.alphas" => self.alphas = parse_list(key, v)?,
            _ => {
                return Err(Error::Config {
                    key: key.to_string(),
                    reason: "unknown key".to_string(),
                })
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let f = |x: &dyn Display| x.to_string();
        let join = |v: Vec<String>| v.join(",");
        let fr = self.train.freeze;
        Some(match key {
            "seed" => f(&self.seed),
            "world.width" => f(&self.world.width),
            "world.height" => f(&self.world.height),
            "world.vocab" => f(&self.world.vocab),
            "world.tile" => f(&self.world.tile),
            "world.texture" => format!("{:?}", self.world.texture),
            "world.sweeps" => f(&self.world.sweeps),
            "degrade.blur_sigma" => format!("{:?}", self.world.degrade.blur_sigma),
            "degrade.noise_sigma" => format!("{:?}", self.world.degrade.noise_sigma),
            "degrade.factor" => f(&self.world.degrade.factor),
            "degrade.second_pass" => f(&self.world.degrade.second_pass),
            "schedule.kind" => f(&self.schedule.kind),
            "schedule.T" => f(&self.schedule.steps),
            "net.context_radius" => f(&self.net.context_radius),
            "net.hidden_dim" => f(&self.net.hidden_dim),
            "net.layer_count" => f(&self.net.layer_count),
            "net.input" => match self.input {
                InputKind::Tokens => "tokens".into(),
                InputKind::Pixels => "pixels".into(),
            },
            "train.batch" => f(&self.train.batch),
            "train.iterations" => f(&self.train.iterations),
            "train.lr" => format!("{:?}", self.train.adam.lr),
            "train.beta1" => format!("{:?}", self.train.adam.beta1),
            "train.beta2" => format!("{:?}", self.train.adam.beta2),
            "train.eps" => format!("{:?}", self.train.adam.eps),
            "train.balance_beta" => format!("{:?}", self.train.balance_beta),
            "train.evaluator_input" => f(&self.train.evaluator_input),
            "train.checkpoint_every" => f(&self.train.checkpoint_every),
            "train.freeze" => join(
                [
                    (fr.restoration, "restoration"),
                    (fr.refiner, "refiner"),
                    (fr.evaluator, "evaluator"),
                ]
                .iter()
                .filter(|x| x.0)
                .map(|x| x.1.to_string())
                .collect(),
            ),
            "sample.alpha" => format!("{:?}", self.sample.alpha),
            "sample.strategy" => f(&self.sample.strategy),
            "sample.selection" => f(&self.sample.selection),
            "sample.temperature" => format!("{:?}", self.sample.temperature),
            "sample.adaptive" => f(&self.sample.adaptive),
            "data.count" => f(&self.count),
            "ablate.strategies" => join(self.strategies.iter().map(|s| s.to_string()).collect()),
            "sweep.alphas" => join(self.alphas.iter().map(|a| format!("{a:?}")).collect()),
            _ => return None,
        })
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
                key: line.to_string(),
                reason: format!("line {} is not `key = value`", n + 1),
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Canonical text form; parsing it reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in Self::KEYS {
            out.push_str(&format!("{k} = {}\n", self.get(k).expect("known key")));
        }
        out
    }

    pub fn as_map(&self) -> BTreeMap<String, String> {
        Self::KEYS
            .iter()
            .map(|k| (k.to_string(), self.get(k).expect("known key")))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        if self.schedule.steps == 0 {
            return Err(Error::Config {
                key: "schedule.T".into(),
                reason: "must be >= 1".into(),
            });
        }
        self.net.validate()?;
        self.train_config().validate()?;
        self.sample_config().validate()?;
        if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return Err(Error::Config {
                key: "sweep.alphas".into(),
                reason: format!("alpha {a} outside (0, 1)"),
            });
        }
        if self.strategies.is_empty() {
            return Err(Error::Config {
                key: "ablate.strategies".into(),
                reason: "needs at least one strategy".into(),
            });
        }
        Ok(())
    }

    pub fn input_mode(&self) -> InputMode {
        match self.input {
            InputKind::Tokens => InputMode::Tokens,
            InputKind::Pixels => InputMode::Pixels {
                tile: self.world.tile,
                channels: 1,
            },
        }
    }

    pub fn world_seed(&self) -> u64 {
        derive_seed(self.seed, "world", &[])
    }

    /// Seed of the training-pair stream.
    pub fn train_data_seed(&self) -> u64 {
        derive_seed(self.seed, "dataset", &[0])
    }

    /// Seed of the held-out stream written by `synth`.
    pub fn heldout_seed(&self) -> u64 {
        derive_seed(self.seed, "dataset", &[1])
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, "train", &[]),
            schedule: self.schedule,
            net: self.net,
            ..self.train
        }
    }

    pub fn sample_config(&self) -> SampleConfig {
        SampleConfig {
            seed: derive_seed(self.seed, "sample", &[]),
            schedule: self.schedule,
            ..self.sample
        }
    }

    pub fn adam(&self) -> AdamConfig {
        self.train.adam
    }

    pub fn degrade(&self) -> DegradeSpec {
        self.world.degrade
    }
}
