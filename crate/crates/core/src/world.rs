//! Synthetic restoration task: smooth token maps over a tile codebook,
//! rendered, degraded and re-tokenized.

use crate::error::{Error, Result};
use crate::imaging::{decode_tokens, degrade, encode_pixels, tile_codebook, DegradeSpec, Image};
use crate::rng::{derive_seed, Stream};
use crate::token::{Codebook, TokenGrid};
use crate::trainer::{PairSource, TrainPair};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorldConfig {
    /// Token grid size.
    pub width: usize,
    pub height: usize,
    pub vocab: usize,
    /// Tile edge in pixels.
    pub tile: usize,
    /// Texture amplitude of the tile codes.
    pub texture: f64,
    /// Mode-filter passes applied to the initial i.i.d. tokens.
    pub sweeps: usize,
    pub degrade: DegradeSpec,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            width: 16,
            height: 16,
            vocab: 32,
            tile: 4,
            texture: 0.08,
            sweeps: 3,
            degrade: DegradeSpec::default(),
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::range("world grid must be at least 1x1"));
        }
        if self.vocab < 2 {
            return Err(Error::range("world vocabulary must be >= 2"));
        }
        if self.tile == 0 {
            return Err(Error::range("tile size must be >= 1"));
        }
        if !(self.texture >= 0.0) {
            return Err(Error::range("texture amplitude must be >= 0"));
        }
        self.degrade.validate()
    }
}

/// One synthetic example.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldSample {
    pub hq: TokenGrid,
    pub hq_image: Image,
    pub lq_image: Image,
    /// `lq_image` re-encoded with the codebook.
    pub lq: TokenGrid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct World {
    cfg: WorldConfig,
    book: Codebook,
}

impl World {
    pub fn new(cfg: WorldConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let book = tile_codebook(cfg.vocab, cfg.tile, cfg.texture, derive_seed(seed, "world", &[]))?;
        Ok(Self { cfg, book })
    }

    pub fn with_codebook(cfg: WorldConfig, book: Codebook) -> Result<Self> {
        cfg.validate()?;
        if book.size() != cfg.vocab || book.dim() != cfg.tile * cfg.tile {
            return Err(Error::DimMismatch {
                codebook: book.dim(),
                latent: cfg.tile * cfg.tile,
            });
        }
        Ok(Self { cfg, book })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.cfg
    }

    pub fn codebook(&self) -> &Codebook {
        &self.book
    }

    /// I.i.d. uniform tokens smoothed by repeated 3x3 mode filtering, ties
    /// broken uniformly at random.
    pub fn hq_tokens(&self, seed: u64) -> TokenGrid {
        let (w, h, n) = (self.cfg.width, self.cfg.height, self.cfg.vocab);
        let mut rng = Stream::derive(seed, "hq_tokens", &[]);
        let mut cur: Vec<u32> = (0..w * h).map(|_| rng.below(n) as u32).collect();
        let mut counts = vec![0u32; n];
        for _ in 0..self.cfg.sweeps {
            let mut next = cur.clone();
            for y in 0..h {
                for x in 0..w {
                    counts.iter_mut().for_each(|c| *c = 0);
                    for ny in y.saturating_sub(1)..(y + 2).min(h) {
                        for nx in x.saturating_sub(1)..(x + 2).min(w) {
                            counts[cur[ny * w + nx] as usize] += 1;
                        }
                    }
                    let best = *counts.iter().max().expect("vocab >= 2");
                    let ties: Vec<usize> = (0..n).filter(|&k| counts[k] == best).collect();
                    next[y * w + x] = ties[rng.below(ties.len())] as u32;
                }
            }
            cur = next;
        }
        TokenGrid::new(w, h, n, cur).expect("tokens in range")
    }

    pub fn sample(&self, seed: u64) -> Result<WorldSample> {
        let hq = self.hq_tokens(seed);
        let hq_image = decode_tokens(&hq, &self.book, self.cfg.tile)?;
        let lq_image = degrade(&hq_image, &self.cfg.degrade, derive_seed(seed, "lq", &[]))?;
        let lq = encode_pixels(&lq_image, &self.book, self.cfg.tile)?;
        Ok(WorldSample {
            hq,
            hq_image,
            lq_image,
            lq,
        })
    }
}

/// Endless seeded stream of samples from a world; item `i` depends only on
/// the stream seed and `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldStream {
    pub world: World,
    pub seed: u64,
}

impl WorldStream {
    pub fn new(world: World, seed: u64) -> Self {
        Self { world, seed }
    }

    pub fn item_seed(&self, index: u64) -> u64 {
        derive_seed(self.seed, "item", &[index])
    }

    pub fn sample(&self, index: u64) -> Result<WorldSample> {
        self.world.sample(self.item_seed(index))
    }
}

impl PairSource for WorldStream {
    fn pair(&self, index: u64) -> Result<TrainPair> {
        let s = self.sample(index)?;
        Ok(TrainPair {
            hq: s.hq,
            lq: s.lq,
            lq_image: Some(s.lq_image),
        })
    }
}

/// Fraction of horizontally or vertically adjacent cell pairs holding the
/// same token.
pub fn neighbor_agreement(grid: &TokenGrid) -> f64 {
    let (w, h) = (grid.width(), grid.height());
    let mut same = 0usize;
    let mut pairs = 0usize;
    for y in 0..h {
        for x in 0..w {
            let t = grid.get(x, y);
            if x + 1 < w {
                same += usize::from(grid.get(x + 1, y) == t);
                pairs += 1;
            }
            if y + 1 < h {
                same += usize::from(grid.get(x, y + 1) == t);
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        0.0
    } else {
        same as f64 / pairs as f64
    }
}
