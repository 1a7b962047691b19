//! Compact trainable networks for the three roles of the pipeline:
//!
//! * [`RestorationNet`]: degraded input (tokens or pixels) to clean-token logits.
//! * [`RefinerNet`]: masked state plus restored tokens to per-cell logits.
//! * [`EvaluatorNet`]: token grid to per-cell "this token is right" probability.
//!
//! Each is a per-cell MLP over the concatenated features of a
//! `(2r+1) x (2r+1)` neighbourhood (zero outside the grid). Gradients are
//! derived by hand in [`mlp`] and checked against finite differences.

pub mod mlp;
mod params;
mod tensor_file;

pub use mlp::{Mlp, SparseRows};
pub use params::{AdamConfig, Gradients, ModelParams, Param};
pub use tensor_file::{NamedTensor, TensorFile};

use crate::diffusion::DiffusionState;
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::rng::Stream;
use crate::token::TokenGrid;

/// Per-cell logits over the `classes` real tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct Logits {
    width: usize,
    height: usize,
    classes: usize,
    data: Vec<f64>,
}

impl Logits {
    pub fn new(width: usize, height: usize, classes: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * classes {
            return Err(Error::shape(format!(
                "logits buffer has {} values, expected {width}x{height}x{classes}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            classes,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, cell: usize) -> &[f64] {
        &self.data[cell * self.classes..(cell + 1) * self.classes]
    }

    pub fn require_finite(&self) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("logits".into()))
        }
    }

    /// Per-cell argmax (lowest class on ties).
    pub fn argmax(&self) -> TokenGrid {
        let toks = (0..self.cells())
            .map(|i| argmax(self.row(i)) as u32)
            .collect();
        TokenGrid::new(self.width, self.height, self.classes, toks).expect("argmax in range")
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax of `row / temperature`.
pub fn softmax(row: &[f64], temperature: f64) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = row.iter().map(|v| ((v - max) / temperature).exp()).collect();
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= s);
    out
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetConfig {
    pub context_radius: usize,
    pub hidden_dim: usize,
    pub layer_count: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            context_radius: 1,
            hidden_dim: 32,
            layer_count: 2,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::range("hidden_dim must be >= 1"));
        }
        if self.layer_count == 0 {
            return Err(Error::range("layer_count must be >= 1"));
        }
        Ok(())
    }

    fn window(&self) -> usize {
        (2 * self.context_radius + 1).pow(2)
    }
}

/// Per-cell features before neighbourhood expansion, plus (for dense pixel
/// inputs) the source sample of every entry.
struct CellFeatures {
    width: usize,
    height: usize,
    rows: SparseRows,
    source: Option<Vec<usize>>,
}

/// Cached forward state needed by backpropagation.
#[derive(Clone, Debug)]
pub struct NetCache {
    rows: SparseRows,
    source: Option<Vec<usize>>,
    acts: mlp::Activations,
}

/// MLP over neighbourhood features; the building block of all three nets.
#[derive(Clone, Debug, PartialEq)]
struct CellNet {
    cfg: NetConfig,
    channels: usize,
    out_dim: usize,
    mlp: Mlp,
    params: ModelParams,
}

impl CellNet {
    fn new(cfg: NetConfig, channels: usize, active: usize, out_dim: usize, seed: u64) -> Self {
        let mut params = ModelParams::new();
        let mut rng = Stream::derive(seed, "net_init", &[]);
        let mlp = Mlp::build(
            &mut params,
            cfg.window() * channels,
            cfg.hidden_dim,
            out_dim,
            cfg.layer_count,
            cfg.window() * active,
            &mut rng,
        );
        Self {
            cfg,
            channels,
            out_dim,
            mlp,
            params,
        }
    }

    fn expand(&self, cells: &CellFeatures) -> (SparseRows, Option<Vec<usize>>) {
        let r = self.cfg.context_radius as isize;
        let (w, h) = (cells.width as isize, cells.height as isize);
        let mut rows = SparseRows::with_rows(cells.rows.rows());
        let mut source = cells.source.as_ref().map(|_| Vec::new());
        for y in 0..h {
            for x in 0..w {
                let mut o = 0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx >= 0 && nx < w && ny >= 0 && ny < h {
                            let q = (ny * w + nx) as usize;
                            let (idx, val) = cells.rows.row(q);
                            let base = cells.rows.offsets[q];
                            for (k, (&c, &v)) in idx.iter().zip(val).enumerate() {
                                rows.push(o * self.channels + c as usize, v);
                                if let (Some(src), Some(cs)) = (source.as_mut(), cells.source.as_ref()) {
                                    src.push(cs[base + k]);
                                }
                            }
                        }
                        o += 1;
                    }
                }
                rows.end_row();
            }
        }
        (rows, source)
    }

    fn forward(&self, cells: &CellFeatures) -> Result<NetCache> {
        self.params.check_finite()?;
        let (rows, source) = self.expand(cells);
        let acts = self.mlp.forward(&self.params, &rows);
        Ok(NetCache { rows, source, acts })
    }

    fn backward(&self, cache: &NetCache, dout: &[f64], input_grad: bool) -> (Gradients, Option<Vec<f64>>) {
        let mut g = self.params.empty_gradients();
        let dx = self
            .mlp
            .backward(&self.params, &cache.rows, &cache.acts, dout, &mut g, input_grad);
        (g, dx)
    }

    fn write_tensors(&self, prefix: &str, meta: Vec<f64>, file: &mut TensorFile) {
        file.push(format!("{prefix}.meta"), vec![meta.len()], meta);
        for p in self.params.params() {
            file.push(format!("{prefix}.{}", p.name), p.shape.clone(), p.value.clone());
        }
    }

    fn write_adam(&self, prefix: &str, file: &mut TensorFile) {
        file.push(format!("{prefix}.adam_step"), vec![], vec![self.params.step() as f64]);
        for p in self.params.params() {
            file.push(format!("{prefix}.{}.m", p.name), p.shape.clone(), p.m.clone());
            file.push(format!("{prefix}.{}.v", p.name), p.shape.clone(), p.v.clone());
        }
    }

    fn load_tensors(&mut self, prefix: &str, file: &TensorFile) -> Result<()> {
        let step = file.scalar(&format!("{prefix}.adam_step"))? as u64;
        for i in 0..self.params.len() {
            let name = self.params.params()[i].name.clone();
            let shape = self.params.params()[i].shape.clone();
            let value = file.get(&format!("{prefix}.{name}"))?;
            let m = file.get(&format!("{prefix}.{name}.m"))?;
            let v = file.get(&format!("{prefix}.{name}.v"))?;
            for t in [value, m, v] {
                if t.dims != shape {
                    return Err(Error::format(
                        "checkpoint",
                        format!("`{}` has dims {:?}, expected {:?}", t.name, t.dims, shape),
                    ));
                }
            }
            let p = self.params.param_mut(i);
            p.value.clone_from(&value.values);
            p.m.clone_from(&m.values);
            p.v.clone_from(&v.values);
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        self.params.set_step(step);
        Ok(())
    }
}

fn read_meta(file: &TensorFile, prefix: &str, len: usize) -> Result<Vec<usize>> {
    let t = file.get(&format!("{prefix}.meta"))?;
    if t.values.len() != len {
        return Err(Error::format("checkpoint", format!("`{prefix}.meta` has wrong length")));
    }
    Ok(t.values.iter().map(|&v| v as usize).collect())
}

fn one_hot_cells(grid: &TokenGrid) -> CellFeatures {
    let mut rows = SparseRows::with_rows(grid.len());
    for &t in grid.tokens() {
        rows.push(t as usize, 1.0);
        rows.end_row();
    }
    CellFeatures {
        width: grid.width(),
        height: grid.height(),
        rows,
        source: None,
    }
}

macro_rules! param_access {
    () => {
        pub fn params(&self) -> &ModelParams {
            &self.net.params
        }

        pub fn params_mut(&mut self) -> &mut ModelParams {
            &mut self.net.params
        }

        pub fn config(&self) -> NetConfig {
            self.net.cfg
        }

        pub fn vocab(&self) -> usize {
            self.vocab
        }

        /// Parameter gradients for upstream gradient `dout` on the outputs.
        pub fn backward(&self, cache: &NetCache, dout: &[f64]) -> Gradients {
            self.net.backward(cache, &self.out_grad(cache, dout), false).0
        }
    };
}

/// How the restoration network sees the degraded input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputMode {
    /// One-hot of the degraded image re-quantized with the codebook.
    Tokens,
    /// Raw `tile x tile x channels` samples under each token cell.
    Pixels { tile: usize, channels: usize },
}

#[derive(Clone, Copy, Debug)]
pub enum RestorationInput<'a> {
    Tokens(&'a TokenGrid),
    Pixels(&'a Image),
}

/// Distortion-removal network: degraded input to clean-token logits.
#[derive(Clone, Debug, PartialEq)]
pub struct RestorationNet {
    vocab: usize,
    mode: InputMode,
    net: CellNet,
}

impl RestorationNet {
    pub fn new(cfg: NetConfig, vocab: usize, mode: InputMode, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let (channels, active) = match mode {
            InputMode::Tokens => (vocab + 1, 1),
            InputMode::Pixels { tile, channels } => {
                let n = tile * tile * channels;
                (n, n)
            }
        };
        Ok(Self {
            vocab,
            mode,
            net: CellNet::new(cfg, channels, active, vocab, seed),
        })
    }

    pub fn mode(&self) -> InputMode {
        self.mode
    }

    fn cells(&self, input: RestorationInput<'_>) -> Result<CellFeatures> {
        match (self.mode, input) {
            (InputMode::Tokens, RestorationInput::Tokens(g)) => {
                if g.vocab() != self.vocab {
                    return Err(Error::shape(format!(
                        "restoration input vocabulary {} != {}",
                        g.vocab(),
                        self.vocab
                    )));
                }
                Ok(one_hot_cells(g))
            }
            (InputMode::Pixels { tile, channels }, RestorationInput::Pixels(img)) => {
                if img.channels() != channels {
                    return Err(Error::shape(format!(
                        "restoration input has {} channels, expected {channels}",
                        img.channels()
                    )));
                }
                let (tw, th) = img.tile_grid(tile)?;
                let mut rows = SparseRows::with_rows(tw * th);
                let mut source = Vec::with_capacity(img.data().len());
                for ty in 0..th {
                    for tx in 0..tw {
                        let mut j = 0;
                        for y in ty * tile..(ty + 1) * tile {
                            for x in tx * tile..(tx + 1) * tile {
                                for c in 0..channels {
                                    let s = (y * img.width() + x) * channels + c;
                                    rows.push(j, img.data()[s]);
                                    source.push(s);
                                    j += 1;
                                }
                            }
                        }
                        rows.end_row();
                    }
                }
                Ok(CellFeatures {
                    width: tw,
                    height: th,
                    rows,
                    source: Some(source),
                })
            }
            _ => Err(Error::shape("restoration input does not match the network's input mode")),
        }
    }

    pub fn forward_cached(&self, input: RestorationInput<'_>) -> Result<(Logits, NetCache)> {
        let cells = self.cells(input)?;
        let cache = self.net.forward(&cells)?;
        let logits = Logits::new(cells.width, cells.height, self.vocab, cache.acts.out.clone())?;
        Ok((logits, cache))
    }

    pub fn forward(&self, input: RestorationInput<'_>) -> Result<Logits> {
        Ok(self.forward_cached(input)?.0)
    }

    fn out_grad(&self, _cache: &NetCache, dout: &[f64]) -> Vec<f64> {
        dout.to_vec()
    }

    /// Gradient with respect to the input image samples (pixel mode only).
    pub fn input_gradient(&self, cache: &NetCache, dlogits: &[f64], samples: usize) -> Result<Vec<f64>> {
        let source = cache
            .source
            .as_ref()
            .ok_or_else(|| Error::shape("input gradient needs pixel input mode"))?;
        let (_, dx) = self.net.backward(cache, dlogits, true);
        let mut out = vec![0.0; samples];
        for (d, &s) in dx.expect("requested").iter().zip(source) {
            out[s] += d;
        }
        Ok(out)
    }

    param_access!();

    fn meta(&self) -> Vec<f64> {
        let (mode, tile, ch) = match self.mode {
            InputMode::Tokens => (0, 0, 0),
            InputMode::Pixels { tile, channels } => (1, tile, channels),
        };
        let c = self.net.cfg;
        [self.vocab, c.context_radius, c.hidden_dim, c.layer_count, mode, tile, ch]
            .iter()
            .map(|&v| v as f64)
            .collect()
    }

    fn from_file(file: &TensorFile, prefix: &str) -> Result<Self> {
        let m = read_meta(file, prefix, 7)?;
        let cfg = NetConfig {
            context_radius: m[1],
            hidden_dim: m[2],
            layer_count: m[3],
        };
        let mode = if m[4] == 0 {
            InputMode::Tokens
        } else {
            InputMode::Pixels {
                tile: m[5],
                channels: m[6],
            }
        };
        let mut net = Self::new(cfg, m[0], mode, 0)?;
        net.net.load_tensors(prefix, file)?;
        Ok(net)
    }
}

/// Token refiner: predicts every cell's token from the current masked state,
/// its keep-mask (an extra input channel) and the restored tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct RefinerNet {
    vocab: usize,
    net: CellNet,
}

impl RefinerNet {
    pub fn new(cfg: NetConfig, vocab: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        // [one-hot S_t (N+1) | one-hot S_l (N+1) | keep bit]
        let channels = 2 * (vocab + 1) + 1;
        Ok(Self {
            vocab,
            net: CellNet::new(cfg, channels, 3, vocab, seed),
        })
    }

    fn cells(&self, state: &DiffusionState, cond: &TokenGrid) -> Result<CellFeatures> {
        let st = state.tokens();
        st.require_same_shape(cond, "refiner inputs")?;
        if st.vocab() != self.vocab {
            return Err(Error::shape(format!(
                "refiner input vocabulary {} != {}",
                st.vocab(),
                self.vocab
            )));
        }
        let n1 = self.vocab + 1;
        let mut rows = SparseRows::with_rows(st.len());
        for i in 0..st.len() {
            rows.push(st.tokens()[i] as usize, 1.0);
            rows.push(n1 + cond.tokens()[i] as usize, 1.0);
            if state.mask().bits()[i] {
                rows.push(2 * n1, 1.0);
            }
            rows.end_row();
        }
        Ok(CellFeatures {
            width: st.width(),
            height: st.height(),
            rows,
            source: None,
        })
    }

    pub fn forward_cached(&self, state: &DiffusionState, cond: &TokenGrid) -> Result<(Logits, NetCache)> {
        let cells = self.cells(state, cond)?;
        let cache = self.net.forward(&cells)?;
        let logits = Logits::new(cells.width, cells.height, self.vocab, cache.acts.out.clone())?;
        Ok((logits, cache))
    }

    pub fn forward(&self, state: &DiffusionState, cond: &TokenGrid) -> Result<Logits> {
        Ok(self.forward_cached(state, cond)?.0)
    }

    fn out_grad(&self, _cache: &NetCache, dout: &[f64]) -> Vec<f64> {
        dout.to_vec()
    }

    param_access!();

    fn meta(&self) -> Vec<f64> {
        let c = self.net.cfg;
        [self.vocab, c.context_radius, c.hidden_dim, c.layer_count]
            .iter()
            .map(|&v| v as f64)
            .collect()
    }

    fn from_file(file: &TensorFile, prefix: &str) -> Result<Self> {
        let m = read_meta(file, prefix, 4)?;
        let cfg = NetConfig {
            context_radius: m[1],
            hidden_dim: m[2],
            layer_count: m[3],
        };
        let mut net = Self::new(cfg, m[0], 0)?;
        net.net.load_tensors(prefix, file)?;
        Ok(net)
    }
}

/// Token evaluator: probability that each cell's token is correct.
#[derive(Clone, Debug, PartialEq)]
pub struct EvaluatorNet {
    vocab: usize,
    net: CellNet,
}

impl EvaluatorNet {
    pub fn new(cfg: NetConfig, vocab: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            vocab,
            net: CellNet::new(cfg, vocab + 1, 1, 1, seed),
        })
    }

    /// Returns per-cell probabilities (logistic of the network output).
    pub fn forward_cached(&self, grid: &TokenGrid) -> Result<(Vec<f64>, NetCache)> {
        if grid.vocab() != self.vocab {
            return Err(Error::shape(format!(
                "evaluator input vocabulary {} != {}",
                grid.vocab(),
                self.vocab
            )));
        }
        let cache = self.net.forward(&one_hot_cells(grid))?;
        let probs = cache.acts.out.iter().map(|&z| sigmoid(z)).collect();
        Ok((probs, cache))
    }

    pub fn forward(&self, grid: &TokenGrid) -> Result<Vec<f64>> {
        Ok(self.forward_cached(grid)?.0)
    }

    /// Chain rule through the logistic output: dL/dz = dL/dp · p(1 − p).
    fn out_grad(&self, cache: &NetCache, dprobs: &[f64]) -> Vec<f64> {
        cache
            .acts
            .out
            .iter()
            .zip(dprobs)
            .map(|(&z, &d)| {
                let p = sigmoid(z);
                d * p * (1.0 - p)
            })
            .collect()
    }

    param_access!();

    fn meta(&self) -> Vec<f64> {
        let c = self.net.cfg;
        [self.vocab, c.context_radius, c.hidden_dim, c.layer_count]
            .iter()
            .map(|&v| v as f64)
            .collect()
    }

    fn from_file(file: &TensorFile, prefix: &str) -> Result<Self> {
        let m = read_meta(file, prefix, 4)?;
        let cfg = NetConfig {
            context_radius: m[1],
            hidden_dim: m[2],
            layer_count: m[3],
        };
        let mut net = Self::new(cfg, m[0], 0)?;
        net.net.load_tensors(prefix, file)?;
        Ok(net)
    }
}

/// The three networks trained together.
#[derive(Clone, Debug, PartialEq)]
pub struct Nets {
    pub restoration: RestorationNet,
    pub refiner: RefinerNet,
    pub evaluator: EvaluatorNet,
}

const PREFIXES: [&str; 3] = ["restoration", "refiner", "evaluator"];

impl Nets {
    /// Seeded He-uniform initialisation; each network draws from its own
    /// sub-stream of `seed`.
    pub fn new(cfg: NetConfig, vocab: usize, mode: InputMode, seed: u64) -> Result<Self> {
        let sub = |i: u64| crate::rng::derive_seed(seed, "nets", &[i]);
        Ok(Self {
            restoration: RestorationNet::new(cfg, vocab, mode, sub(0))?,
            refiner: RefinerNet::new(cfg, vocab, sub(1))?,
            evaluator: EvaluatorNet::new(cfg, vocab, sub(2))?,
        })
    }

    pub fn vocab(&self) -> usize {
        self.refiner.vocab
    }

    /// Parameters of every network, then Adam state (`.m` / `.v` suffixes and
    /// per-network step counters), then any `extra` scalars.
    pub fn to_tensor_file(&self, extra: &[(&str, f64)]) -> TensorFile {
        let mut f = TensorFile::default();
        self.restoration
            .net
            .write_tensors(PREFIXES[0], self.restoration.meta(), &mut f);
        self.refiner.net.write_tensors(PREFIXES[1], self.refiner.meta(), &mut f);
        self.evaluator
            .net
            .write_tensors(PREFIXES[2], self.evaluator.meta(), &mut f);
        for (name, v) in extra {
            f.push(*name, vec![], vec![*v]);
        }
        self.restoration.net.write_adam(PREFIXES[0], &mut f);
        self.refiner.net.write_adam(PREFIXES[1], &mut f);
        self.evaluator.net.write_adam(PREFIXES[2], &mut f);
        f
    }

    pub fn from_tensor_file(file: &TensorFile) -> Result<Self> {
        let nets = Self {
            restoration: RestorationNet::from_file(file, PREFIXES[0])?,
            refiner: RefinerNet::from_file(file, PREFIXES[1])?,
            evaluator: EvaluatorNet::from_file(file, PREFIXES[2])?,
        };
        if nets.restoration.vocab != nets.refiner.vocab || nets.refiner.vocab != nets.evaluator.vocab {
            return Err(Error::format("checkpoint", "networks disagree on vocabulary"));
        }
        Ok(nets)
    }
}
