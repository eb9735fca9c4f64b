//! Small dense-math helpers shared by the merge, render and refine code.

use nalgebra::Matrix3;

/// Rotation matrix of a quaternion `[w, x, y, z]`, normalising it first.
pub fn quat_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pull `dL/dR` back to the raw quaternion components of [`quat_to_matrix`],
/// including the normalisation.
pub fn quat_to_matrix_backward(q: [f64; 4], d_r: &Matrix3<f64>) -> [f64; 4] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    let dw = Matrix3::new(0.0, -2.0 * z, 2.0 * y, 2.0 * z, 0.0, -2.0 * x, -2.0 * y, 2.0 * x, 0.0);
    let dx = Matrix3::new(
        0.0,
        2.0 * y,
        2.0 * z,
        2.0 * y,
        -4.0 * x,
        -2.0 * w,
        2.0 * z,
        2.0 * w,
        -4.0 * x,
    );
    let dy = Matrix3::new(
        -4.0 * y,
        2.0 * x,
        2.0 * w,
        2.0 * x,
        0.0,
        2.0 * z,
        -2.0 * w,
        2.0 * z,
        -4.0 * y,
    );
    let dz = Matrix3::new(
        -4.0 * z,
        -2.0 * w,
        2.0 * x,
        2.0 * w,
        -4.0 * z,
        2.0 * y,
        2.0 * x,
        2.0 * y,
        0.0,
    );
    let g = [
        d_r.component_mul(&dw).sum(),
        d_r.component_mul(&dx).sum(),
        d_r.component_mul(&dy).sum(),
        d_r.component_mul(&dz).sum(),
    ];
    normalize_backward([w, x, y, z], n, g)
}

/// Gradient through `q / |q|`, given the normalised `unit` and the norm.
pub fn normalize_backward(unit: [f64; 4], norm: f64, g: [f64; 4]) -> [f64; 4] {
    let dot = unit[0] * g[0] + unit[1] * g[1] + unit[2] * g[2] + unit[3] * g[3];
    [
        (g[0] - unit[0] * dot) / norm,
        (g[1] - unit[1] * dot) / norm,
        (g[2] - unit[2] * dot) / norm,
        (g[3] - unit[3] * dot) / norm,
    ]
}

/// Median of a non-empty slice (mean of the two middle values for even length).
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_backward_matches_finite_differences() {
        let q = [0.8, -0.3, 0.4, 0.2];
        let weights = Matrix3::new(0.3, -1.0, 0.5, 2.0, 0.1, -0.7, 0.9, 0.4, -0.2);
        let loss = |q: [f64; 4]| quat_to_matrix(q).component_mul(&weights).sum();
        let analytic = quat_to_matrix_backward(q, &weights);
        for k in 0..4 {
            let h = 1e-6;
            let mut qp = q;
            qp[k] += h;
            let mut qm = q;
            qm[k] -= h;
            let fd = (loss(qp) - loss(qm)) / (2.0 * h);
            assert!((fd - analytic[k]).abs() < 1e-7, "{k}: {fd} vs {}", analytic[k]);
        }
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
