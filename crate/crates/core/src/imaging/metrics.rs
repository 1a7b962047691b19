use super::Image;
use crate::error::{Error, Result};

/// Peak signal-to-noise ratio in dB for unit dynamic range. Identical images
/// give `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.require_same_shape(b, "psnr")?;
    let n = a.data().len() as f64;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

const SSIM_TAPS: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn ssim_window() -> [f64; SSIM_TAPS] {
    let mut w = [0.0; SSIM_TAPS];
    let half = (SSIM_TAPS / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-(x * x) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable "valid" filtering of a single plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let t = k.len();
    let ow = w - t + 1;
    let oh = h - t + 1;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..t).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..t).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Single-scale SSIM with an 11-tap Gaussian window (σ = 1.5), K1 = 0.01,
/// K2 = 0.03 and unit dynamic range, averaged over the valid window
/// positions and over channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.require_same_shape(b, "ssim")?;
    let (w, h, ch) = (a.width(), a.height(), a.channels());
    if w < SSIM_TAPS || h < SSIM_TAPS {
        return Err(Error::shape(format!(
            "ssim needs images of at least {SSIM_TAPS}x{SSIM_TAPS}, got {w}x{h}"
        )));
    }
    let k = ssim_window();
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let mut total = 0.0;
    for c in 0..ch {
        let pa: Vec<f64> = a.data().iter().skip(c).step_by(ch).copied().collect();
        let pb: Vec<f64> = b.data().iter().skip(c).step_by(ch).copied().collect();
        let sq = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
        let (mu_a, _, _) = filter_valid(&pa, w, h, &k);
        let (mu_b, _, _) = filter_valid(&pb, w, h, &k);
        let (e_aa, _, _) = filter_valid(&sq(&pa, &pa), w, h, &k);
        let (e_bb, _, _) = filter_valid(&sq(&pb, &pb), w, h, &k);
        let (e_ab, ow, oh) = filter_valid(&sq(&pa, &pb), w, h, &k);
        let mut acc = 0.0;
        for i in 0..ow * oh {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += acc / (ow * oh) as f64;
    }
    Ok(total / ch as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn random_image(seed: u64, w: usize, h: usize) -> Image {
        let mut rng = Stream::new(seed);
        Image::new(w, h, 1, (0..w * h).map(|_| rng.uniform()).collect()).unwrap()
    }

    fn checkerboard(n: usize) -> Image {
        let data = (0..n * n)
            .map(|i| ((i % n + i / n) % 2) as f64)
            .collect();
        Image::new(n, n, 1, data).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let a = random_image(1, 8, 8);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let x = Image::filled(4, 4, 1, 0.3).unwrap();
        let y = Image::filled(4, 4, 1, 0.4).unwrap();
        assert!((psnr(&x, &y).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&x, &Image::filled(4, 5, 1, 0.3).unwrap()).is_err());
    }

    #[test]
    fn psnr_matches_direct_formula() {
        let a = random_image(2, 9, 7);
        let b = random_image(3, 9, 7);
        let mut se = 0.0;
        for y in 0..7 {
            for x in 0..9 {
                se += (a.get(x, y, 0) - b.get(x, y, 0)).powi(2);
            }
        }
        let expected = -10.0 * (se / 63.0).log10();
        assert!((psnr(&a, &b).unwrap() - expected).abs() < 1e-9);
    }

    /// Direct 2-D window evaluation, no separable filtering.
    fn ssim_direct(a: &Image, b: &Image) -> f64 {
        let k = ssim_window();
        let (w, h) = (a.width(), a.height());
        let mut acc = 0.0;
        let mut count = 0.0;
        for y0 in 0..=h - 11 {
            for x0 in 0..=w - 11 {
                let (mut ma, mut mb) = (0.0, 0.0);
                for j in 0..11 {
                    for i in 0..11 {
                        let wt = k[i] * k[j];
                        ma += wt * a.get(x0 + i, y0 + j, 0);
                        mb += wt * b.get(x0 + i, y0 + j, 0);
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for j in 0..11 {
                    for i in 0..11 {
                        let wt = k[i] * k[j];
                        let da = a.get(x0 + i, y0 + j, 0) - ma;
                        let db = b.get(x0 + i, y0 + j, 0) - mb;
                        va += wt * da * da;
                        vb += wt * db * db;
                        cov += wt * da * db;
                    }
                }
                let c1 = 1e-4;
                let c2 = 9e-4;
                acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1.0;
            }
        }
        acc / count
    }

    #[test]
    fn ssim_identical_and_symmetric() {
        let a = random_image(4, 16, 14);
        let b = random_image(5, 16, 14);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-15);
        assert!((ssim(&a, &b).unwrap() - ssim_direct(&a, &b)).abs() < 1e-10);
    }

    #[test]
    fn ssim_inverted_checkerboard_is_negative() {
        let a = checkerboard(16);
        let inv = Image::new(16, 16, 1, a.data().iter().map(|v| 1.0 - v).collect()).unwrap();
        let s = ssim(&a, &inv).unwrap();
        assert!(s < 0.0, "{s}");
        assert!((s - ssim_direct(&a, &inv)).abs() < 1e-10);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = random_image(1, 8, 8);
        assert!(ssim(&a, &a).is_err());
    }
}
