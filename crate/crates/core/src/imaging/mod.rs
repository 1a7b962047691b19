//! Toy pixel world: token/pixel codec, a simplified degradation pipeline,
//! full-reference metrics and test-time colour correction.

mod degrade;
mod metrics;
mod pnm;

pub use degrade::{degrade, gaussian_blur, DegradeSpec};
pub use metrics::{psnr, ssim};
pub use pnm::{read_pnm, write_pnm};

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::token::{quantize, Codebook, LatentGrid, TokenGrid};

/// Interleaved real-valued image, samples nominally in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if !(channels == 1 || channels == 3) {
            return Err(Error::range(format!("images have 1 or 3 channels, got {channels}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::range("image dimensions must be >= 1"));
        }
        if data.len() != width * height * channels {
            return Err(Error::shape(format!(
                "image buffer has {} samples, expected {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub(crate) fn require_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    pub fn clamp(&mut self) {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }

    pub fn clamped(mut self) -> Self {
        self.clamp();
        self
    }

    /// The `f x f` tile at token cell (tx, ty), flattened row-major with
    /// interleaved channels.
    pub fn tile(&self, tx: usize, ty: usize, f: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(f * f * self.channels);
        for y in ty * f..(ty + 1) * f {
            let start = (y * self.width + tx * f) * self.channels;
            out.extend_from_slice(&self.data[start..start + f * self.channels]);
        }
        out
    }

    pub(crate) fn tile_grid(&self, f: usize) -> Result<(usize, usize)> {
        if f == 0 || self.width % f != 0 || self.height % f != 0 {
            return Err(Error::shape(format!(
                "image {}x{} is not divisible by tile size {f}",
                self.width, self.height
            )));
        }
        Ok((self.width / f, self.height / f))
    }
}

/// Codebook whose entries are `f x f` single-channel tiles: each code is a
/// base gray level plus a seeded texture pattern, kept inside [0, 1].
pub fn tile_codebook(size: usize, f: usize, texture: f64, seed: u64) -> Result<Codebook> {
    let mut rng = Stream::derive(seed, "tile_codebook", &[]);
    let mut entries = Vec::with_capacity(size * f * f);
    for k in 0..size {
        let base = 0.1 + 0.8 * (k as f64 + rng.uniform()) / size as f64;
        let amp = texture * (0.5 + 0.5 * rng.uniform());
        for _ in 0..f * f {
            let v = base + amp * (rng.uniform() * 2.0 - 1.0);
            entries.push(v.clamp(0.0, 1.0));
        }
    }
    Codebook::new(entries, size, f * f)
}

/// Writes every token's code vector as its tile.
pub fn decode_tokens(tokens: &TokenGrid, book: &Codebook, f: usize) -> Result<Image> {
    tokens.require_mask_free("decode_tokens input")?;
    if f == 0 || book.dim() % (f * f) != 0 {
        return Err(Error::DimMismatch {
            codebook: book.dim(),
            latent: f * f,
        });
    }
    let channels = book.dim() / (f * f);
    let (w, h) = (tokens.width() * f, tokens.height() * f);
    let mut data = vec![0.0; w * h * channels];
    for ty in 0..tokens.height() {
        for tx in 0..tokens.width() {
            let code = book.code(tokens.get(tx, ty))?;
            for dy in 0..f {
                let dst = ((ty * f + dy) * w + tx * f) * channels;
                let src = dy * f * channels;
                data[dst..dst + f * channels].copy_from_slice(&code[src..src + f * channels]);
            }
        }
    }
    Image::new(w, h, channels, data)
}

/// Nearest-code tokenization of every `f x f` tile.
pub fn encode_pixels(img: &Image, book: &Codebook, f: usize) -> Result<TokenGrid> {
    let (tw, th) = img.tile_grid(f)?;
    let mut data = Vec::with_capacity(tw * th * f * f * img.channels());
    for ty in 0..th {
        for tx in 0..tw {
            data.extend(img.tile(tx, ty, f));
        }
    }
    let latent = LatentGrid::new(tw, th, f * f * img.channels(), data)?;
    Ok(quantize(&latent, book)?.0)
}

fn channel_moments(img: &Image, c: usize) -> (f64, f64) {
    let n = (img.width * img.height) as f64;
    let vals = img.data.iter().skip(c).step_by(img.channels);
    let mean = vals.clone().sum::<f64>() / n;
    let var = vals.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub const COLOR_EPS: f64 = 1e-8;

/// Per-channel affine map giving `sr` the mean and standard deviation of
/// `lr`, without the final clamp.
pub fn color_correct_unclamped(sr: &Image, lr: &Image) -> Result<Image> {
    if sr.channels != lr.channels {
        return Err(Error::shape(format!(
            "color_correct: {} vs {} channels",
            sr.channels, lr.channels
        )));
    }
    let mut out = sr.clone();
    for c in 0..sr.channels {
        let (mu_sr, sd_sr) = channel_moments(sr, c);
        let (mu_lr, sd_lr) = channel_moments(lr, c);
        for v in out.data.iter_mut().skip(c).step_by(sr.channels) {
            *v = if sd_sr < COLOR_EPS {
                *v - mu_sr + mu_lr
            } else {
                (*v - mu_sr) / sd_sr * sd_lr + mu_lr
            };
        }
    }
    Ok(out)
}

pub fn color_correct(sr: &Image, lr: &Image) -> Result<Image> {
    Ok(color_correct_unclamped(sr, lr)?.clamped())
}
