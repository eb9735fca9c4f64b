//! Real spherical harmonics up to degree 3 in the 3DGS sign convention.

use nalgebra::Vector3;

use crate::model::{ShCoeffs, SH_C0, SH_COEFFS};

const C1: f64 = 0.488_602_511_902_919_9;
const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Basis values for a unit direction.
pub fn basis(d: &Vector3<f64>) -> [f64; SH_COEFFS] {
    let (x, y, z) = (d.x, d.y, d.z);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    [
        SH_C0,
        -C1 * y,
        C1 * z,
        -C1 * x,
        C2[0] * x * y,
        C2[1] * y * z,
        C2[2] * (2.0 * zz - xx - yy),
        C2[3] * x * z,
        C2[4] * (xx - yy),
        C3[0] * y * (3.0 * xx - yy),
        C3[1] * x * y * z,
        C3[2] * y * (4.0 * zz - xx - yy),
        C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
        C3[4] * x * (4.0 * zz - xx - yy),
        C3[5] * z * (xx - yy),
        C3[6] * x * (xx - 3.0 * yy),
    ]
}

/// Partial derivatives of each basis polynomial with respect to (x, y, z).
pub fn basis_jacobian(d: &Vector3<f64>) -> [Vector3<f64>; SH_COEFFS] {
    let (x, y, z) = (d.x, d.y, d.z);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let v = Vector3::new;
    [
        Vector3::zeros(),
        v(0.0, -C1, 0.0),
        v(0.0, 0.0, C1),
        v(-C1, 0.0, 0.0),
        C2[0] * v(y, x, 0.0),
        C2[1] * v(0.0, z, y),
        C2[2] * v(-2.0 * x, -2.0 * y, 4.0 * z),
        C2[3] * v(z, 0.0, x),
        C2[4] * v(2.0 * x, -2.0 * y, 0.0),
        C3[0] * v(6.0 * x * y, 3.0 * xx - 3.0 * yy, 0.0),
        C3[1] * v(y * z, x * z, x * y),
        C3[2] * v(-2.0 * x * y, 4.0 * zz - xx - 3.0 * yy, 8.0 * y * z),
        C3[3] * v(-6.0 * x * z, -6.0 * y * z, 6.0 * zz - 3.0 * xx - 3.0 * yy),
        C3[4] * v(4.0 * zz - 3.0 * xx - yy, -2.0 * x * y, 8.0 * x * z),
        C3[5] * v(2.0 * x * z, -2.0 * y * z, xx - yy),
        C3[6] * v(3.0 * xx - 3.0 * yy, -6.0 * x * y, 0.0),
    ]
}

/// Raw radiance `sum_k Y_k(d) sh_k` without the +0.5 offset or clamping.
pub fn eval(sh: &ShCoeffs, d: &Vector3<f64>) -> [f64; 3] {
    let b = basis(d);
    let mut out = [0.0; 3];
    for (k, coeff) in sh.iter().enumerate() {
        for c in 0..3 {
            out[c] += b[k] * coeff[c];
        }
    }
    out
}

/// Display color: `max(0, sh(d) + 0.5)` per channel.
pub fn color(sh: &ShCoeffs, d: &Vector3<f64>) -> [f64; 3] {
    eval(sh, d).map(|v| (v + 0.5).max(0.0))
}
