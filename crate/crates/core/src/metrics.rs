//! PSNR and SSIM, optionally restricted to a mask.

use crate::error::{Error, Result};
use crate::image::{Image, Mask};

/// Reported for identical images instead of +∞.
pub const PSNR_IDENTICAL: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn check(a: &Image, b: &Image, mask: Option<&Mask>) -> Result<()> {
    a.check_shape(b, "metric inputs")?;
    if let Some(m) = mask {
        if m.width != a.width || m.height != a.height {
            return Err(Error::Dimension(format!("mask {}x{} vs image {}x{}", m.width, m.height, a.width, a.height)));
        }
    }
    Ok(())
}

/// 10·log10(1/MSE) over the (masked) pixels, all channels.
pub fn psnr(a: &Image, b: &Image, mask: Option<&Mask>) -> Result<f64> {
    check(a, b, mask)?;
    let ch = a.channels;
    let mut sum = 0.0;
    let mut n = 0usize;
    for p in 0..a.len_pixels() {
        if mask.is_some_and(|m| !m.data[p]) {
            continue;
        }
        for c in 0..ch {
            let d = a.data[p * ch + c] - b.data[p * ch + c];
            sum += d * d;
        }
        n += ch;
    }
    if n == 0 {
        return Err(Error::EmptyMask("psnr"));
    }
    let mse = sum / n as f64;
    Ok(if mse == 0.0 { PSNR_IDENTICAL } else { -10.0 * mse.log10() })
}

/// Normalized 1D Gaussian taps of the SSIM window.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - r;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Mean of the channels, the grayscale used by [`ssim`].
pub fn grayscale(img: &Image) -> Image {
    Image::from_fn(img.width, img.height, 1, |x, y, _| {
        let p = img.pixel(y * img.width + x);
        p.iter().sum::<f64>() / p.len() as f64
    })
}

/// SSIM of one window with statistics (μa, μb, σa², σb², σab).
pub fn ssim_from_stats(ma: f64, mb: f64, va: f64, vb: f64, cov: f64) -> f64 {
    ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2))
}

/// Mean local SSIM of the grayscale images over window centers whose
/// 11×11 window lies inside the image (and inside `mask`, when given).
pub fn ssim(a: &Image, b: &Image, mask: Option<&Mask>) -> Result<f64> {
    check(a, b, mask)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::Dimension(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {}x{}",
            a.width, a.height
        )));
    }
    let (ga, gb) = (grayscale(a), grayscale(b));
    let k = gaussian_taps();
    let r = SSIM_WINDOW / 2;
    let w = a.width;
    let mut total = 0.0;
    let mut n = 0usize;
    for cy in r..a.height - r {
        for cx in r..w - r {
            if mask.is_some_and(|m| !m.get(cx, cy)) {
                continue;
            }
            let (mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (j, ky) in k.iter().enumerate() {
                for (i, kx) in k.iter().enumerate() {
                    let p = (cy + j - r) * w + cx + i - r;
                    let wt = kx * ky;
                    let (va, vb) = (ga.data[p], gb.data[p]);
                    ma += wt * va;
                    mb += wt * vb;
                    aa += wt * va * va;
                    bb += wt * vb * vb;
                    ab += wt * va * vb;
                }
            }
            total += ssim_from_stats(ma, mb, aa - ma * ma, bb - mb * mb, ab - ma * mb);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask("ssim"));
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, 3, |_, _, _| rng.random_range(0.0..1.0))
    }

    #[test]
    fn psnr_examples() {
        let a = random(16, 16, 1);
        assert_eq!(psnr(&a, &a, None).unwrap(), PSNR_IDENTICAL);
        let z = Image::filled(8, 8, 3, 0.5);
        let o = Image::filled(8, 8, 3, 0.6);
        assert!((psnr(&z, &o, None).unwrap() - 20.0).abs() < 1e-9);
        assert!(matches!(psnr(&z, &o, Some(&Mask::new(8, 8))), Err(Error::EmptyMask(_))));
    }

    #[test]
    fn psnr_half_mask_equals_crop() {
        let (a, b) = (random(16, 10, 2), random(16, 10, 3));
        let left = Mask::from_fn(16, 10, |x, _| x < 8);
        let crop = |img: &Image| Image::from_fn(8, 10, 3, |x, y, c| img.get(x, y, c));
        let full = psnr(&a, &b, Some(&left)).unwrap();
        assert!((full - psnr(&crop(&a), &crop(&b), None).unwrap()).abs() < 1e-12);
        assert!((full - psnr(&b, &a, Some(&left)).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn ssim_examples() {
        let a = random(20, 20, 4);
        assert!((ssim(&a, &a, None).unwrap() - 1.0).abs() < 1e-12);
        let pattern = Image::from_fn(24, 24, 3, |x, y, _| if (x / 2 + y / 2) % 2 == 0 { 0.95 } else { 0.05 });
        let inv = Image::from_fn(24, 24, 3, |x, y, c| 1.0 - pattern.get(x, y, c));
        assert!(ssim(&pattern, &inv, None).unwrap() < 0.0);
        let (m1, m2) = (0.4, 0.5);
        let s = ssim(&Image::filled(16, 16, 3, m1), &Image::filled(16, 16, 3, m2), None).unwrap();
        let expect = (2.0 * m1 * m2 + SSIM_C1) * SSIM_C2 / ((m1 * m1 + m2 * m2 + SSIM_C1) * SSIM_C2);
        assert!((s - expect).abs() < 1e-12);
        assert!(ssim(&Image::new(10, 30, 3), &Image::new(10, 30, 3), None).is_err());
    }
}
