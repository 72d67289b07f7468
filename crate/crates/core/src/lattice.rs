//! Basis reduction and shortest vectors for 3D point lattices.
//!
//! The cell matrices produced by the box motion are bounded but sheared;
//! reducing them gives near-orthogonal bases for binning and exact
//! shortest-vector searches with small enumeration ranges.

use nalgebra::{Matrix3, Vector3};

/// Integer 3×3 matrix stored row-major.
pub type IntMatrix3 = [[i64; 3]; 3];

pub fn int_det(m: &IntMatrix3) -> i128 {
    let e = |i: usize, j: usize| m[i][j] as i128;
    e(0, 0) * (e(1, 1) * e(2, 2) - e(1, 2) * e(2, 1)) - e(0, 1) * (e(1, 0) * e(2, 2) - e(1, 2) * e(2, 0))
        + e(0, 2) * (e(1, 0) * e(2, 1) - e(1, 1) * e(2, 0))
}

pub fn int_mul(a: &IntMatrix3, b: &IntMatrix3) -> IntMatrix3 {
    let mut c = [[0i64; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

pub fn int_to_f64(m: &IntMatrix3) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| m[i][j] as f64)
}

/// A reduced basis `reduced = basis · unimodular` of the same lattice.
#[derive(Clone, Debug)]
pub struct ReducedBasis {
    pub reduced: Matrix3<f64>,
    pub unimodular: IntMatrix3,
}

/// LLL reduction (δ = 0.99) of the columns of `basis`, followed by a
/// sign fix keeping the reduced basis right-handed when `basis` is.
pub fn lll_reduce(basis: &Matrix3<f64>) -> ReducedBasis {
    const DELTA: f64 = 0.99;
    let mut b: [Vector3<f64>; 3] = [basis.column(0).into(), basis.column(1).into(), basis.column(2).into()];
    let mut u: [[i64; 3]; 3] = [[1, 0, 0], [0, 1, 0], [0, 0, 1]]; // columns
    let mut k = 1;
    let mut guard = 0;
    while k < 3 && guard < 10_000 {
        guard += 1;
        let (_, mut mu) = gram_schmidt(&b);
        for j in (0..k).rev() {
            let q = mu[k][j].round();
            if q != 0.0 {
                b[k] -= b[j] * q;
                for i in 0..j {
                    mu[k][i] -= q * mu[j][i];
                }
                mu[k][j] -= q;
                let qi = q as i64;
                for r in 0..3 {
                    u[k][r] -= qi * u[j][r];
                }
            }
        }
        let (bstar2, mu2) = gram_schmidt(&b);
        if bstar2[k].norm_squared() >= (DELTA - mu2[k][k - 1].powi(2)) * bstar2[k - 1].norm_squared() {
            k += 1;
        } else {
            b.swap(k, k - 1);
            u.swap(k, k - 1);
            k = (k - 1).max(1);
        }
    }
    let mut reduced = Matrix3::from_columns(&b);
    let mut unimodular = [[0i64; 3]; 3];
    for c in 0..3 {
        for r in 0..3 {
            unimodular[r][c] = u[c][r];
        }
    }
    if reduced.determinant() * basis.determinant() < 0.0 {
        reduced.set_column(2, &(-reduced.column(2)));
        for row in unimodular.iter_mut() {
            row[2] = -row[2];
        }
    }
    ReducedBasis { reduced, unimodular }
}

fn gram_schmidt(b: &[Vector3<f64>; 3]) -> ([Vector3<f64>; 3], [[f64; 3]; 3]) {
    let mut bs = *b;
    let mut mu = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..i {
            mu[i][j] = b[i].dot(&bs[j]) / bs[j].norm_squared();
            bs[i] -= bs[j] * mu[i][j];
        }
    }
    (bs, mu)
}

/// Heights of the cell between opposite faces, `1 / ‖row_k(L⁻¹)‖`.
pub fn slab_heights(inverse: &Matrix3<f64>) -> [f64; 3] {
    [0, 1, 2].map(|k| 1.0 / inverse.row(k).norm())
}

/// Length of the shortest nonzero vector of the lattice generated by the columns of `basis`.
/// Exact: the enumeration range is derived from the incumbent and the dual row norms.
pub fn shortest_vector_length(basis: &Matrix3<f64>) -> f64 {
    let red = lll_reduce(basis).reduced;
    let inv = match red.try_inverse() {
        Some(inv) => inv,
        None => return 0.0,
    };
    let mut best = f64::INFINITY;
    for n in unit_shell() {
        best = best.min((red * n).norm());
    }
    let bounds: [i64; 3] = [0, 1, 2].map(|k| (inv.row(k).norm() * best).floor() as i64);
    if bounds.iter().all(|&b| b <= 1) {
        return best;
    }
    for i in -bounds[0]..=bounds[0] {
        for j in -bounds[1]..=bounds[1] {
            for k in -bounds[2]..=bounds[2] {
                if i == 0 && j == 0 && k == 0 {
                    continue;
                }
                let v = red * Vector3::new(i as f64, j as f64, k as f64);
                best = best.min(v.norm());
            }
        }
    }
    best
}

/// The 26 nonzero vectors of {−1, 0, 1}³.
pub fn unit_shell() -> impl Iterator<Item = Vector3<f64>> {
    (0..27)
        .filter(|&c| c != 13)
        .map(|c| Vector3::new((c / 9) as f64 - 1.0, ((c / 3) % 3) as f64 - 1.0, (c % 3) as f64 - 1.0))
}
