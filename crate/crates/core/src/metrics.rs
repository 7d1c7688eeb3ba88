//! Image metrics: PSNR and single-scale SSIM.

use alloc::vec::Vec;

use crate::image::Image;
use crate::{Error, Result};

/// PSNR of identical images.
pub const PSNR_CAP: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn same_shape(op: &'static str, a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::shape(
            op,
            alloc::format!("{}x{}x{} vs {}x{}x{}", a.width, a.height, a.channels, b.width, b.height, b.channels),
        ));
    }
    if a.data.is_empty() {
        return Err(Error::invalid(op, "empty image"));
    }
    Ok(())
}

/// `−10·log10(MSE)` over all channels for a unit dynamic range, capped at
/// [`PSNR_CAP`]. Values above 1 are not clipped.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    same_shape("psnr", a, b)?;
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (*x as f64 - *y as f64) * (*x as f64 - *y as f64)).sum::<f64>()
        / a.data.len() as f64;
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (-10.0 * libm::log10(mse)).min(PSNR_CAP)
}

/// Normalised 1-D Gaussian taps of the SSIM window.
fn gaussian() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - r;
        *v = libm::exp(-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Valid-mode separable Gaussian filter of a `w × h` plane.
fn filter(x: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut rows = Vec::with_capacity(ow * h);
    for y in 0..h {
        for x0 in 0..ow {
            rows.push((0..SSIM_WINDOW).map(|t| k[t] * x[y * w + x0 + t]).sum::<f64>());
        }
    }
    let mut out = Vec::with_capacity(ow * oh);
    for y0 in 0..oh {
        for x0 in 0..ow {
            out.push((0..SSIM_WINDOW).map(|t| k[t] * rows[(y0 + t) * ow + x0]).sum::<f64>());
        }
    }
    out
}

/// Mean SSIM of the luminance planes over every window position that fits
/// inside the image (11×11 Gaussian, σ 1.5, dynamic range 1).
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    same_shape("ssim", a, b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::invalid(
            "ssim",
            alloc::format!("{}x{} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window", a.width, a.height),
        ));
    }
    let (w, h) = (a.width, a.height);
    let (x, y) = (a.luminance(), b.luminance());
    let k = gaussian();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(s, t)| s * t).collect::<Vec<_>>();
    let mx = filter(&x, w, h, &k);
    let my = filter(&y, w, h, &k);
    let mxx = filter(&prod(&x, &x), w, h, &k);
    let myy = filter(&prod(&y, &y), w, h, &k);
    let mxy = filter(&prod(&x, &y), w, h, &k);
    let (c1, c2) = (K1 * K1, K2 * K2);
    let mut sum = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let (vx, vy, cxy) = (mxx[i] - ux * ux, myy[i] - uy * uy, mxy[i] - ux * uy);
        sum += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok(sum / mx.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn noise(w: usize, h: usize, seed: u64) -> Image {
        let mut r = rng::stream(seed, 0);
        Image::new(w, h, 3, (0..w * h * 3).map(|_| rng::uniform(&mut r) as f32).collect()).unwrap()
    }

    #[test]
    fn psnr_closed_forms() {
        let a = Image::filled(8, 6, 3, 0.25);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let b = Image::from_fn(8, 6, 3, |_, _, _| 0.25 + 0.1);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-6);
        let a = Image::filled(8, 6, 3, 0.5);
        let c = Image::filled(8, 6, 3, 0.5 - 0.01);
        assert!((psnr(&a, &c).unwrap() - 40.0).abs() < 1e-4);
    }

    #[test]
    fn psnr_of_exact_mses() {
        // the metric itself, free of f32 rounding in the inputs
        assert_eq!(psnr_from_mse(0.01), 20.0);
        assert_eq!(psnr_from_mse(1e-4), 40.0);
        assert_eq!(psnr_from_mse(0.0), PSNR_CAP);
        assert_eq!(psnr_from_mse(1e-12), PSNR_CAP);
        // offsets exactly representable in f32
        let a = Image::filled(4, 4, 1, 0.5);
        let b = Image::filled(4, 4, 1, 0.5 + 0.125);
        assert_eq!(psnr(&a, &b).unwrap(), -10.0 * libm::log10(0.015625));
    }

    #[test]
    fn shapes_are_checked() {
        let a = Image::filled(8, 8, 3, 0.5);
        assert!(psnr(&a, &Image::filled(8, 7, 3, 0.5)).is_err());
        assert!(psnr(&a, &Image::filled(8, 8, 1, 0.5)).is_err());
        assert!(ssim(&Image::filled(10, 20, 3, 0.5), &Image::filled(10, 20, 3, 0.5)).is_err());
        assert!(ssim(&Image::filled(20, 20, 3, 0.5), &Image::filled(20, 21, 3, 0.5)).is_err());
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let a = noise(24, 17, 1);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let c = Image::filled(11, 11, 3, 0.3);
        assert!((ssim(&c, &c).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_of_the_negative_is_negative() {
        let a = noise(32, 32, 2);
        let mut n = a.clone();
        for v in &mut n.data {
            *v = 1.0 - *v;
        }
        assert!(ssim(&a, &n).unwrap() < 0.0);
    }

    /// Direct evaluation: every window, weights and sums written out.
    fn ssim_direct(a: &[f64], b: &[f64], w: usize, h: usize) -> f64 {
        let mut g = [[0.0f64; 11]; 11];
        let mut s = 0.0;
        for (i, row) in g.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
                *v = libm::exp(-(dx * dx + dy * dy) / 4.5);
                s += *v;
            }
        }
        let (c1, c2) = (1e-4, 9e-4);
        let mut total = 0.0;
        let mut count = 0;
        for y0 in 0..=h - 11 {
            for x0 in 0..=w - 11 {
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let k = (y0 + i) * w + x0 + j;
                        ma += g[i][j] / s * a[k];
                        mb += g[i][j] / s * b[k];
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let k = (y0 + i) * w + x0 + j;
                        va += g[i][j] / s * (a[k] - ma) * (a[k] - ma);
                        vb += g[i][j] / s * (b[k] - mb) * (b[k] - mb);
                        cov += g[i][j] / s * (a[k] - ma) * (b[k] - mb);
                    }
                }
                total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn ssim_matches_direct_evaluation_on_noise() {
        let (w, h) = (23, 19);
        let a = Image::filled(w, h, 1, 0.5);
        let mut r = rng::stream(3, 0);
        let b = Image::new(w, h, 1, (0..w * h).map(|_| 0.5 + 0.1 * rng::normal(&mut r) as f32).collect()).unwrap();
        let got = ssim(&a, &b).unwrap();
        let want = ssim_direct(&a.luminance(), &b.luminance(), w, h);
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        assert!(got < 0.5);
        let c = noise(w, h, 4);
        let d = noise(w, h, 5);
        let got = ssim(&c, &d).unwrap();
        assert!((got - ssim_direct(&c.luminance(), &d.luminance(), w, h)).abs() < 1e-6);
    }
}
