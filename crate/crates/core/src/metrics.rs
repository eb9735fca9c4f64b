//! Image quality metrics: PSNR and SSIM (11x11 Gaussian window, sigma 1.5,
//! renormalised at the image border).

use thiserror::Error;

use crate::frame::{Image, Plane};

pub const PSNR_CAP: f64 = 99.0;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;
const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("image sizes differ: {0:?} vs {1:?}")]
    DimensionMismatch([usize; 2], [usize; 2]),
}

fn check(a: &Image, b: &Image) -> Result<(), MetricsError> {
    if a.width != b.width || a.height != b.height {
        return Err(MetricsError::DimensionMismatch([a.width, a.height], [b.width, b.height]));
    }
    Ok(())
}

/// PSNR in dB on values clamped to [0, 1], capped at [`PSNR_CAP`].
pub fn psnr(img: &Image, reference: &Image) -> Result<f64, MetricsError> {
    check(img, reference)?;
    let n = (img.pixels.len() * 3) as f64;
    let mse: f64 = img
        .pixels
        .iter()
        .zip(&reference.pixels)
        .flat_map(|(a, b)| (0..3).map(move |c| (a[c].clamp(0.0, 1.0) - b[c].clamp(0.0, 1.0)).powi(2)))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((-10.0 * mse.log10()).min(PSNR_CAP))
}

/// Normalised 1D Gaussian window.
pub fn gaussian_window() -> [f64; WINDOW] {
    let mut w = [0.0; WINDOW];
    let half = (WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-x * x / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let sum: f64 = w.iter().sum();
    w.map(|v| v / sum)
}

/// Separable "same" convolution with zero padding; symmetric, so it is
/// its own adjoint.
fn blur_raw(p: &Plane) -> Plane {
    let w = gaussian_window();
    let half = WINDOW / 2;
    let (wd, ht) = (p.width, p.height);
    let mut tmp = Plane::new(wd, ht);
    for y in 0..ht {
        for x in 0..wd {
            let mut acc = 0.0;
            for (k, wk) in w.iter().enumerate() {
                let xx = x as isize + k as isize - half as isize;
                if xx >= 0 && (xx as usize) < wd {
                    acc += wk * p.get(xx as usize, y);
                }
            }
            tmp.set(x, y, acc);
        }
    }
    let mut out = Plane::new(wd, ht);
    for y in 0..ht {
        for x in 0..wd {
            let mut acc = 0.0;
            for (k, wk) in w.iter().enumerate() {
                let yy = y as isize + k as isize - half as isize;
                if yy >= 0 && (yy as usize) < ht {
                    acc += wk * tmp.get(x, yy as usize);
                }
            }
            out.set(x, y, acc);
        }
    }
    out
}

/// Local Gaussian-weighted mean: the window is truncated at the border and
/// renormalised.
pub fn blur(p: &Plane) -> Plane {
    let norm = blur_raw(&Plane::filled(p.width, p.height, 1.0));
    zip_map(&blur_raw(p), &norm, |a, n| a / n)
}

/// Adjoint of [`blur`].
fn blur_adjoint(p: &Plane) -> Plane {
    let norm = blur_raw(&Plane::filled(p.width, p.height, 1.0));
    blur_raw(&zip_map(p, &norm, |a, n| a / n))
}

fn zip_map(a: &Plane, b: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
    Plane {
        width: a.width,
        height: a.height,
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    }
}

/// Mean SSIM of one channel and, optionally, its gradient with respect to `x`.
pub(crate) fn ssim_plane(x: &Plane, y: &Plane, want_grad: bool) -> (f64, Option<Plane>) {
    let mu_x = blur(x);
    let mu_y = blur(y);
    let sxx = blur(&zip_map(x, x, |a, b| a * b));
    let syy = blur(&zip_map(y, y, |a, b| a * b));
    let sxy = blur(&zip_map(x, y, |a, b| a * b));
    let n = x.data.len();
    let mut total = 0.0;
    // per-pixel partials of the map with respect to mu_x, E[x^2], E[xy]
    let mut d_mu = Plane::new(x.width, x.height);
    let mut d_xx = Plane::new(x.width, x.height);
    let mut d_xy = Plane::new(x.width, x.height);
    for i in 0..n {
        let (mx, my) = (mu_x.data[i], mu_y.data[i]);
        let vx = sxx.data[i] - mx * mx;
        let vy = syy.data[i] - my * my;
        let cov = sxy.data[i] - mx * my;
        let a1 = 2.0 * mx * my + SSIM_C1;
        let a2 = 2.0 * cov + SSIM_C2;
        let b1 = mx * mx + my * my + SSIM_C1;
        let b2 = vx + vy + SSIM_C2;
        let s = (a1 * a2) / (b1 * b2);
        total += s;
        if want_grad {
            let inv = 1.0 / (b1 * b2);
            // d s / d mu_x, holding the raw second moments fixed
            let da1 = 2.0 * my;
            let da2 = -2.0 * my;
            let db1 = 2.0 * mx;
            let db2 = -2.0 * mx;
            d_mu.data[i] = ((da1 * a2 + a1 * da2) - s * (db1 * b2 + b1 * db2)) * inv;
            d_xx.data[i] = -s * b1 * inv;
            d_xy.data[i] = a1 * 2.0 * inv;
        }
    }
    let mean = total / n as f64;
    if !want_grad {
        return (mean, None);
    }
    let scale = 1.0 / n as f64;
    let g_mu = blur_adjoint(&d_mu);
    let g_xx = blur_adjoint(&d_xx);
    let g_xy = blur_adjoint(&d_xy);
    let grad = Plane {
        width: x.width,
        height: x.height,
        data: (0..n)
            .map(|i| scale * (g_mu.data[i] + 2.0 * x.data[i] * g_xx.data[i] + y.data[i] * g_xy.data[i]))
            .collect(),
    };
    (mean, Some(grad))
}

/// SSIM averaged over the three channels.
pub fn ssim(img: &Image, reference: &Image) -> Result<f64, MetricsError> {
    check(img, reference)?;
    Ok((0..3)
        .map(|c| ssim_plane(&img.channel(c), &reference.channel(c), false).0)
        .sum::<f64>()
        / 3.0)
}

/// `(PSNR, SSIM)`.
pub fn metrics(img: &Image, reference: &Image) -> Result<(f64, f64), MetricsError> {
    Ok((psnr(img, reference)?, ssim(img, reference)?))
}
