//! Simplified synthetic degradation: Gaussian blur, additive Gaussian noise
//! and box-downsample / nearest-upsample, with an optional second blur+noise
//! pass. No JPEG, sinc or resampler mixing.

use super::Image;
use crate::error::{Error, Result};
use crate::rng::Stream;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegradeSpec {
    pub blur_sigma: f64,
    pub noise_sigma: f64,
    pub factor: usize,
    pub second_pass: bool,
}

impl Default for DegradeSpec {
    fn default() -> Self {
        Self {
            blur_sigma: 1.0,
            noise_sigma: 0.05,
            factor: 2,
            second_pass: false,
        }
    }
}

impl DegradeSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.blur_sigma >= 0.0 && self.noise_sigma >= 0.0) {
            return Err(Error::range("degradation sigmas must be >= 0"));
        }
        if ![1, 2, 4].contains(&self.factor) {
            return Err(Error::range(format!(
                "downsample factor must be 1, 2 or 4, got {}",
                self.factor
            )));
        }
        Ok(())
    }
}

/// Mirror index into [0, n) without repeating the edge sample.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with reflect padding.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let src = img.data();
    let mut tmp = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let xx = reflect(x as isize + i as isize - r, w);
                    acc += kv * src[(y * w + xx) * c + ch];
                }
                tmp[(y * w + x) * c + ch] = acc;
            }
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let yy = reflect(y as isize + i as isize - r, h);
                    acc += kv * tmp[(yy * w + x) * c + ch];
                }
                out[(y * w + x) * c + ch] = acc;
            }
        }
    }
    Image::new(w, h, c, out).expect("shape preserved")
}

fn add_noise(img: &mut Image, sigma: f64, rng: &mut Stream) {
    if sigma <= 0.0 {
        return;
    }
    for v in img.data_mut() {
        *v += sigma * rng.normal();
    }
}

/// Box-average `factor x factor` blocks (partial blocks at the border use the
/// samples they have), then replicate each block average back.
fn down_up(img: &Image, factor: usize) -> Image {
    if factor == 1 {
        return img.clone();
    }
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let mut out = vec![0.0; w * h * c];
    for by in (0..h).step_by(factor) {
        for bx in (0..w).step_by(factor) {
            let ys = by..(by + factor).min(h);
            let xs = bx..(bx + factor).min(w);
            let n = (ys.len() * xs.len()) as f64;
            for ch in 0..c {
                let mut acc = 0.0;
                for y in ys.clone() {
                    for x in xs.clone() {
                        acc += img.get(x, y, ch);
                    }
                }
                let mean = acc / n;
                for y in ys.clone() {
                    for x in xs.clone() {
                        out[(y * w + x) * c + ch] = mean;
                    }
                }
            }
        }
    }
    Image::new(w, h, c, out).expect("shape preserved")
}

pub fn degrade(img: &Image, spec: &DegradeSpec, seed: u64) -> Result<Image> {
    spec.validate()?;
    let mut rng = Stream::derive(seed, "degrade", &[]);
    let mut out = gaussian_blur(img, spec.blur_sigma);
    add_noise(&mut out, spec.noise_sigma, &mut rng);
    out = down_up(&out, spec.factor);
    if spec.second_pass {
        out = gaussian_blur(&out, spec.blur_sigma);
        add_noise(&mut out, spec.noise_sigma, &mut rng);
    }
    Ok(out.clamped())
}
