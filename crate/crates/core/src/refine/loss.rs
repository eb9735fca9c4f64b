use crate::frame::{Image, Plane};
use crate::metrics::ssim_plane;

/// Weight of the structural term.
pub const SSIM_WEIGHT: f64 = 0.2;

/// `0.8 * L1 + 0.2 * (1 - SSIM) / 2` and its gradient with respect to `img`.
pub fn photometric_loss(img: &Image, target: &Image) -> (f64, Image) {
    assert_eq!((img.width, img.height), (target.width, target.height), "image size mismatch");
    let n = (img.pixels.len() * 3) as f64;
    let l1_w = 1.0 - SSIM_WEIGHT;
    let mut grad = Image::new(img.width, img.height);
    let mut l1 = 0.0;
    for (i, (a, b)) in img.pixels.iter().zip(&target.pixels).enumerate() {
        for c in 0..3 {
            let d = a[c] - b[c];
            l1 += d.abs();
            grad.pixels[i][c] = l1_w * sign(d) / n;
        }
    }
    let mut ssim = 0.0;
    for c in 0..3 {
        let (s, g) = ssim_plane(&img.channel(c), &target.channel(c), true);
        ssim += s / 3.0;
        let g: Plane = g.expect("gradient requested");
        for (px, gv) in grad.pixels.iter_mut().zip(&g.data) {
            px[c] -= SSIM_WEIGHT * 0.5 * gv / 3.0;
        }
    }
    (l1_w * l1 / n + SSIM_WEIGHT * (1.0 - ssim) / 2.0, grad)
}

/// Mean absolute difference and its gradient.
pub fn l1_loss(img: &Image, target: &Image) -> (f64, Image) {
    let n = (img.pixels.len() * 3) as f64;
    let mut grad = Image::new(img.width, img.height);
    let mut l = 0.0;
    for (i, (a, b)) in img.pixels.iter().zip(&target.pixels).enumerate() {
        for c in 0..3 {
            l += (a[c] - b[c]).abs();
            grad.pixels[i][c] = sign(a[c] - b[c]) / n;
        }
    }
    (l / n, grad)
}

/// `signum` with `sign(0) = 0`.
pub(crate) fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
