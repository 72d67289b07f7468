//! Periodic wrapping, minimum image and pair search in a triclinic cell.
//!
//! All lattice searches run in an LLL-reduced basis of the current cell, so
//! they stay cheap however sheared the stored basis is. Results are always
//! expressed as `dq + L·n` with `n` integral in the stored basis `L`, which
//! makes them reproducible bit-for-bit by any reference that picks the same `n`.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::lattice::{int_to_f64, lll_reduce, slab_heights};

/// A cell matrix (columns = edge vectors) with its inverse and a reduced basis.
#[derive(Clone, Debug)]
pub struct Cell {
    matrix: Matrix3<f64>,
    inverse: Matrix3<f64>,
    reduced: Matrix3<f64>,
    reduced_inv: Matrix3<f64>,
    /// `reduced = matrix · unimodular`.
    unimodular: Matrix3<f64>,
    heights: [f64; 3],
}

impl Cell {
    pub fn new(matrix: Matrix3<f64>) -> Result<Self> {
        let det = matrix.determinant();
        let scale = matrix.norm().powi(3);
        if !det.is_finite() || det.abs() <= 1e-14 * scale {
            return Err(Error::SingularCell { det });
        }
        let inverse = matrix.try_inverse().ok_or(Error::SingularCell { det })?;
        let red = lll_reduce(&matrix);
        let reduced_inv = red.reduced.try_inverse().ok_or(Error::SingularCell { det })?;
        Ok(Self {
            matrix,
            inverse,
            reduced: red.reduced,
            heights: slab_heights(&reduced_inv),
            reduced_inv,
            unimodular: int_to_f64(&red.unimodular),
        })
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    pub fn inverse(&self) -> &Matrix3<f64> {
        &self.inverse
    }

    pub fn reduced(&self) -> &Matrix3<f64> {
        &self.reduced
    }

    pub fn volume(&self) -> f64 {
        self.matrix.determinant().abs()
    }

    /// Face-to-face heights of the reduced cell.
    pub fn heights(&self) -> [f64; 3] {
        self.heights
    }

    pub fn fractional(&self, q: &Vector3<f64>) -> Vector3<f64> {
        self.inverse * q
    }

    /// Image `dq + L·n`; the single expression every minimum-image result goes through.
    #[inline]
    pub fn image(&self, dq: &Vector3<f64>, n: &Vector3<f64>) -> Vector3<f64> {
        dq + self.matrix * n
    }
}

/// Guard against numerical fractions a hair below zero after wrapping.
const WRAP_MARGIN: f64 = 1e-12;

fn wrap_one(q: &Vector3<f64>, cell: &Cell) -> Vector3<f64> {
    let mut q = *q;
    // one pass suffices except at rounding boundaries; the loop makes the result a fixed point
    for _ in 0..4 {
        let n = (cell.inverse * q).map(|s| (s + WRAP_MARGIN).floor());
        if n == Vector3::zeros() {
            break;
        }
        q -= cell.matrix * n;
    }
    q
}

/// Shift each position by a lattice vector so its fractional coordinates
/// lie in `[0, 1)` (up to a `1e-12` margin below zero). Idempotent bit-for-bit.
pub fn wrap_positions(q: &[Vector3<f64>], cell: &Cell) -> Vec<Vector3<f64>> {
    q.iter().map(|x| wrap_one(x, cell)).collect()
}

pub fn wrap_positions_in_place(q: &mut [Vector3<f64>], cell: &Cell) {
    for x in q.iter_mut() {
        *x = wrap_one(x, cell);
    }
}

fn lex_less(a: &Vector3<f64>, b: &Vector3<f64>) -> bool {
    for k in 0..3 {
        if a[k] != b[k] {
            return a[k] < b[k];
        }
    }
    false
}

/// Integer shift `n` (in the stored basis) with `dq + L·n` of least norm over
/// all of ℤ³; exact ties go to the lexicographically smallest `n`.
pub fn minimum_image_shift(dq: &Vector3<f64>, cell: &Cell) -> Vector3<f64> {
    let f = cell.reduced_inv * dq;
    let n0 = -f.map(f64::round);
    let d0 = dq + cell.reduced * n0;
    let g = cell.reduced_inv * d0;

    let mut best_n = cell.unimodular * n0;
    let mut best = cell.image(dq, &best_n).norm_squared();
    let mut range = 1i32;
    loop {
        for i in -range..=range {
            for j in -range..=range {
                for k in -range..=range {
                    let m = Vector3::new(i as f64, j as f64, k as f64);
                    let n = cell.unimodular * (n0 + m);
                    let d2 = cell.image(dq, &n).norm_squared();
                    if d2 < best || (d2 == best && lex_less(&n, &best_n)) {
                        best = d2;
                        best_n = n;
                    }
                }
            }
        }
        // any shorter image has |g_k + m_k| ≤ ‖row_k(R⁻¹)‖·‖best‖
        let r = best.sqrt() * (1.0 + 1e-12);
        let needed = (0..3).map(|k| (g[k].abs() + cell.reduced_inv.row(k).norm() * r).floor() as i32).max().unwrap();
        if needed <= range {
            return best_n;
        }
        range = needed;
    }
}

pub fn minimum_image(dq: &Vector3<f64>, cell: &Cell) -> Vector3<f64> {
    cell.image(dq, &minimum_image_shift(dq, cell))
}

/// Fail unless the cutoff is at most half the replica floor; under that
/// condition every pair has at most one image inside the cutoff.
pub fn check_cutoff(r_c: f64, replica_floor: f64) -> Result<()> {
    if !(r_c > 0.0) || r_c > 0.5 * replica_floor {
        return Err(Error::Configuration(format!(
            "cutoff exceeds half the replica floor (r_c = {r_c}, floor = {replica_floor})"
        )));
    }
    Ok(())
}

/// A neighbor pair `i < j` with `dq = minimum_image(q_i − q_j)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pair {
    pub i: usize,
    pub j: usize,
    pub dq: Vector3<f64>,
}

/// All unordered pairs closer than `r_c`, sorted by `(i, j)`.
///
/// Uses cell lists in the reduced basis when every axis holds at least three
/// bins and falls back to the all-pairs search otherwise.
pub fn neighbor_pairs(q: &[Vector3<f64>], cell: &Cell, r_c: f64) -> Vec<Pair> {
    let h = cell.heights();
    let bins = h.map(|x| (x / r_c).floor() as usize);
    if bins.iter().any(|&b| b < 3) {
        return neighbor_pairs_brute(q, cell, r_c);
    }
    let [nx, ny, nz] = bins;
    let nbins = nx * ny * nz;
    let rc2 = r_c * r_c;

    // reduced fractional coordinates in [0,1), the integer shifts used to get there, and bins
    let mut shift = Vec::with_capacity(q.len());
    let mut hat = Vec::with_capacity(q.len());
    let mut bin_of = Vec::with_capacity(q.len());
    for x in q {
        let s = cell.reduced_inv * x;
        let k = s.map(f64::floor);
        let f = s - k;
        let b = [
            ((f[0] * nx as f64) as usize).min(nx - 1),
            ((f[1] * ny as f64) as usize).min(ny - 1),
            ((f[2] * nz as f64) as usize).min(nz - 1),
        ];
        shift.push(k);
        hat.push(cell.reduced * f);
        bin_of.push((b[0] * ny + b[1]) * nz + b[2]);
    }

    // counting sort by bin
    let mut start = vec![0usize; nbins + 1];
    for &b in &bin_of {
        start[b + 1] += 1;
    }
    for b in 0..nbins {
        start[b + 1] += start[b];
    }
    let mut fill = start.clone();
    let mut order = vec![0usize; q.len()];
    for (p, &b) in bin_of.iter().enumerate() {
        order[fill[b]] = p;
        fill[b] += 1;
    }
    let sorted_hat: Vec<Vector3<f64>> = order.iter().map(|&p| hat[p]).collect();

    // forward half of the 27-cell stencil; with ≥ 3 bins per axis every bin pair appears once
    let offsets: Vec<[i64; 3]> =
        (0..27).map(|c| [c / 9 - 1, (c / 3) % 3 - 1, c % 3 - 1]).filter(|o| *o > [0, 0, 0]).collect();
    // per-axis neighbor bin and periodic wrap for offsets −1, 0, 1
    let axis_table = |n: usize| -> Vec<[(usize, f64); 3]> {
        (0..n)
            .map(|b| {
                [-1i64, 0, 1].map(|o| {
                    let raw = b as i64 + o;
                    (raw.rem_euclid(n as i64) as usize, raw.div_euclid(n as i64) as f64)
                })
            })
            .collect()
    };
    let (tx, ty, tz) = (axis_table(nx), axis_table(ny), axis_table(nz));

    let mut pairs = Vec::new();
    let mut consider = |a: usize, b: usize, w: &Vector3<f64>, d: Vector3<f64>| {
        if d.norm_squared() < rc2 {
            let (lo, hi, n_red) = if a < b { (a, b, shift[b] - shift[a] - w) } else { (b, a, shift[a] - shift[b] + w) };
            let n = (cell.unimodular * n_red).map(f64::round);
            let dq = cell.image(&(q[lo] - q[hi]), &n);
            if dq.norm_squared() < rc2 {
                pairs.push(Pair { i: lo, j: hi, dq });
            }
        }
    };
    for bx in 0..nx {
        for by in 0..ny {
            for bz in 0..nz {
                let b = (bx * ny + by) * nz + bz;
                let (s0, s1) = (start[b], start[b + 1]);
                if s0 == s1 {
                    continue;
                }
                let zero = Vector3::zeros();
                for k in s0..s1 {
                    for l in k + 1..s1 {
                        consider(order[k], order[l], &zero, sorted_hat[k] - sorted_hat[l]);
                    }
                }
                for o in &offsets {
                    let (cx, wx) = tx[bx][(o[0] + 1) as usize];
                    let (cy, wy) = ty[by][(o[1] + 1) as usize];
                    let (cz, wz) = tz[bz][(o[2] + 1) as usize];
                    let b2 = (cx * ny + cy) * nz + cz;
                    let (t0, t1) = (start[b2], start[b2 + 1]);
                    if t0 == t1 {
                        continue;
                    }
                    let w = Vector3::new(wx, wy, wz);
                    let rw = cell.reduced * w;
                    for k in s0..s1 {
                        let qk = sorted_hat[k] - rw;
                        for l in t0..t1 {
                            consider(order[k], order[l], &w, qk - sorted_hat[l]);
                        }
                    }
                }
            }
        }
    }
    pairs.sort_unstable_by_key(|p| ((p.i as u64) << 32) | p.j as u64);
    pairs
}

/// Reference O(N²) pair search using the exact minimum image.
pub fn neighbor_pairs_brute(q: &[Vector3<f64>], cell: &Cell, r_c: f64) -> Vec<Pair> {
    let rc2 = r_c * r_c;
    let mut pairs = Vec::new();
    for i in 0..q.len() {
        for j in i + 1..q.len() {
            let dq = minimum_image(&(q[i] - q[j]), cell);
            if dq.norm_squared() < rc2 {
                pairs.push(Pair { i, j, dq });
            }
        }
    }
    pairs
}
