//! Small dense helpers for 3×3 problems: closed-form cubic roots, null
//! vectors, and a few matrix utilities shared across modules.

use nalgebra::{Complex, Matrix3, Vector3};

/// Roots of the monic cubic `x³ + b·x² + c·x + d`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CubicRoots {
    /// Three real roots, sorted in descending order.
    Real([f64; 3]),
    /// One real root and the complex pair `re ± i·im` with `im > 0`.
    Complex { real: f64, re: f64, im: f64 },
}

fn eval_cubic(b: f64, c: f64, d: f64, x: f64) -> (f64, f64) {
    let f = ((x + b) * x + c) * x + d;
    let df = (3.0 * x + 2.0 * b) * x + c;
    (f, df)
}

/// One Newton step, kept only when it reduces the residual.
fn polish(b: f64, c: f64, d: f64, x: f64) -> f64 {
    let (f, df) = eval_cubic(b, c, d, x);
    if f == 0.0 || df == 0.0 || !df.is_finite() {
        return x;
    }
    let y = x - f / df;
    let (g, _) = eval_cubic(b, c, d, y);
    if g.abs() < f.abs() {
        y
    } else {
        x
    }
}

pub fn cubic_roots(b: f64, c: f64, d: f64) -> CubicRoots {
    let shift = b / 3.0;
    let p = c - b * b / 3.0;
    let q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;

    if p == 0.0 && q == 0.0 {
        let x = polish(b, c, d, -shift);
        return CubicRoots::Real([x, x, x]);
    }

    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    if disc > 0.0 {
        let s = disc.sqrt();
        // pick the branch without cancellation
        let u = if q > 0.0 { (-q / 2.0 - s).cbrt() } else { (-q / 2.0 + s).cbrt() };
        let v = if u != 0.0 { -p / (3.0 * u) } else { 0.0 };
        let real = polish(b, c, d, u + v - shift);
        // deflate: x² + beta x + gamma
        let beta = b + real;
        let gamma = c + real * beta;
        let im2 = gamma - beta * beta / 4.0;
        if im2 > 0.0 {
            CubicRoots::Complex { real, re: -beta / 2.0, im: im2.sqrt() }
        } else {
            let re = -beta / 2.0;
            let mut r = [real, re, re];
            r.sort_by(|a, b| b.total_cmp(a));
            CubicRoots::Real(r)
        }
    } else {
        let m = 2.0 * (-p / 3.0).sqrt();
        let arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
        let phi = arg.acos() / 3.0;
        let tau = 2.0 * std::f64::consts::PI / 3.0;
        let mut r = [0.0; 3];
        for (k, root) in r.iter_mut().enumerate() {
            let y = m * (phi - tau * k as f64).cos();
            *root = polish(b, c, d, y - shift);
        }
        r.sort_by(|a, b| b.total_cmp(a));
        CubicRoots::Real(r)
    }
}

/// Characteristic polynomial coefficients `(b, c, d)` of `x³ + b x² + c x + d = det(xI − m)`.
pub fn char_poly(m: &Matrix3<f64>) -> (f64, f64, f64) {
    let tr = m.trace();
    let minors = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)] + m[(0, 0)] * m[(2, 2)] - m[(0, 2)] * m[(2, 0)]
        + m[(1, 1)] * m[(2, 2)]
        - m[(1, 2)] * m[(2, 1)];
    (-tr, minors, -m.determinant())
}

/// Largest-magnitude cross product of row pairs, i.e. a kernel direction of a rank-2 matrix.
/// Returns the unnormalized vector.
pub fn rank2_null_vector(m: &Matrix3<f64>) -> Vector3<f64> {
    let rows: [Vector3<f64>; 3] = [m.row(0).transpose(), m.row(1).transpose(), m.row(2).transpose()];
    let candidates = [rows[0].cross(&rows[1]), rows[0].cross(&rows[2]), rows[1].cross(&rows[2])];
    candidates.into_iter().max_by(|a, b| a.norm_squared().total_cmp(&b.norm_squared())).unwrap()
}

/// Largest 2×2-minor magnitude of `m`, normalized by `scale²`.
pub fn relative_minor_size(m: &Matrix3<f64>, scale: f64) -> f64 {
    rank2_null_vector(m).norm() / (scale * scale)
}

fn ccross(a: &[Complex<f64>; 3], b: &[Complex<f64>; 3]) -> [Complex<f64>; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn cnorm2(v: &[Complex<f64>; 3]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// Kernel vector of the complex matrix `m − mu·I` (rank 2), returned as real and imaginary parts.
pub fn complex_null_vector(m: &Matrix3<f64>, mu: Complex<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let row = |i: usize| -> [Complex<f64>; 3] {
        let mut r = [Complex::new(0.0, 0.0); 3];
        for (j, z) in r.iter_mut().enumerate() {
            *z = Complex::new(m[(i, j)], 0.0);
            if i == j {
                *z -= mu;
            }
        }
        r
    };
    let rows = [row(0), row(1), row(2)];
    let w = [ccross(&rows[0], &rows[1]), ccross(&rows[0], &rows[2]), ccross(&rows[1], &rows[2])]
        .into_iter()
        .max_by(|a, b| cnorm2(a).total_cmp(&cnorm2(b)))
        .unwrap();
    (Vector3::new(w[0].re, w[1].re, w[2].re), Vector3::new(w[0].im, w[1].im, w[2].im))
}

/// Flip the sign of `v` so its largest-magnitude entry is positive.
pub fn sign_fixed(v: Vector3<f64>) -> Vector3<f64> {
    let k = v.iamax();
    if v[k] < 0.0 {
        -v
    } else {
        v
    }
}

/// Two orthonormal vectors spanning the orthogonal complement of `r`.
/// Standard basis vectors are projected in order of decreasing residual, ties by index.
pub fn orthogonal_complement(r: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let rhat = r.normalize();
    let mut cands: Vec<(usize, Vector3<f64>)> = (0..3)
        .map(|k| {
            let e = Vector3::ith(k, 1.0);
            (k, e - rhat * rhat.dot(&e))
        })
        .collect();
    cands.sort_by(|a, b| b.1.norm().total_cmp(&a.1.norm()).then(a.0.cmp(&b.0)));
    let u = cands[0].1.normalize();
    let w = cands[1].1 - u * u.dot(&cands[1].1);
    (u, w.normalize())
}

/// Frobenius contraction `A : B = Σ A_ij B_ij`.
pub fn contract(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    a.component_mul(b).sum()
}

/// Rotation by `angle` acting on the leading 2×2 block.
pub fn leading_rotation(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}
