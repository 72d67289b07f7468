//! Simulation-cell motion under a homogeneous flow for unbounded times.
//!
//! The generalized Kraynik-Reinelt scheme keeps the diagonal stretch of the
//! cell inside the unit cell spanned by the log-spectra of two commuting
//! symmetric automorphisms `M1, M2 ∈ SL(3,ℤ)`. The cell is rebuilt from the
//! reduced coordinates `θ` at every step as
//!
//! ```text
//! L̃_t = a · S · e^{Bt} · e^{ε̃_t} · V⁻¹,    ε̃_t = θ1·ω̂1 + θ2·ω̂2
//! ```
//!
//! which generates the same point lattice as `e^{At} L̃_0` because applying
//! `M1^{n1} M2^{n2}` on the right shifts the stretch by `n1·ω̂1 + n2·ω̂2`.
//! Planar shear and J4 flows use a Lees-Edwards style remap with the integer
//! matrix `e^{2N}`; pure rotations never need remapping.

use std::io::{self, Write};

use nalgebra::{Matrix2, Matrix3, SymmetricEigen, Vector2, Vector3};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::flowdecomp::{flow_exponential, FlowClass, FlowDecomposition};
use crate::lattice::{int_det, int_mul, int_to_f64, shortest_vector_length, IntMatrix3};
use crate::linalg::{char_poly, cubic_roots, leading_rotation, rank2_null_vector, sign_fixed, CubicRoots};

/// Reasons a pair of integer matrices cannot serve as remapping automorphisms.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutomorphismError {
    #[error("matrix {which} has determinant {det}, expected 1")]
    NotUnimodular { which: &'static str, det: i128 },
    #[error("matrix {which} is not symmetric")]
    NotSymmetric { which: &'static str },
    #[error("M1 and M2 do not commute")]
    NotCommuting,
    #[error("matrix {which} has nonpositive eigenvalue {value:e}")]
    NonpositiveSpectrum { which: &'static str, value: f64 },
    #[error("log-spectra are linearly dependent (gram determinant {gram_det:e})")]
    DependentLogSpectra { gram_det: f64 },
    #[error("automorphism {0}")]
    Invalid(String),
}

pub const REFERENCE_M1: IntMatrix3 = [[1, 1, 1], [1, 2, 2], [1, 2, 3]];
pub const REFERENCE_M2: IntMatrix3 = [[2, -2, 1], [-2, 3, -1], [1, -1, 1]];

/// Leading digits of the reference eigenvector matrix; they fix ordering and signs.
const REFERENCE_V_INV: [[f64; 3]; 3] = [[0.591, -0.737, 0.328], [0.737, 0.328, -0.591], [0.328, 0.591, 0.737]];

/// Planar KR automorphism with the largest minimal replica spacing.
pub const CLASSIC_KR_M: IntMatrix3 = [[2, -1, 0], [-1, 1, 0], [0, 0, 1]];

/// Two commuting symmetric automorphisms, their common orthogonal eigenbasis,
/// and the log-spectra spanning the stretch lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct AutomorphismBasis {
    pub m1: IntMatrix3,
    pub m2: IntMatrix3,
    pub v: Matrix3<f64>,
    pub v_inv: Matrix3<f64>,
    pub omega1: Vector3<f64>,
    pub omega2: Vector3<f64>,
    pub gram: Matrix2<f64>,
}

impl AutomorphismBasis {
    fn from_eigenbasis(m1: IntMatrix3, m2: IntMatrix3, v: Matrix3<f64>) -> Result<Self, AutomorphismError> {
        let v_inv = v.transpose();
        let mut omegas = [Vector3::zeros(); 2];
        for (idx, (which, m)) in [("M1", &m1), ("M2", &m2)].into_iter().enumerate() {
            let lambda = v_inv * int_to_f64(m) * v;
            for k in 0..3 {
                let value = lambda[(k, k)];
                if value <= 0.0 {
                    return Err(AutomorphismError::NonpositiveSpectrum { which, value });
                }
                omegas[idx][k] = value.ln();
            }
        }
        let [omega1, omega2] = omegas;
        let gram = Matrix2::new(omega1.dot(&omega1), omega1.dot(&omega2), omega2.dot(&omega1), omega2.dot(&omega2));
        let gram_det = gram.determinant();
        if gram_det.abs() <= 1e-6 {
            return Err(AutomorphismError::DependentLogSpectra { gram_det });
        }
        Ok(Self { m1, m2, v, v_inv, omega1, omega2, gram })
    }

    /// Point of the stretch unit cell with coordinates `theta`.
    pub fn stretch(&self, theta: [f64; 2]) -> Vector3<f64> {
        self.omega1 * theta[0] + self.omega2 * theta[1]
    }
}

fn is_symmetric(m: &IntMatrix3) -> bool {
    (0..3).all(|i| (0..3).all(|j| m[i][j] == m[j][i]))
}

/// Check the automorphism conditions and simultaneously diagonalize.
///
/// Eigenvectors are ordered by descending eigenvalue of `M1` (ties broken by
/// `M2`), each sign-fixed so its largest entry is positive, with the last
/// column flipped if needed to make `V` right-handed.
pub fn validate_automorphisms(m1: IntMatrix3, m2: IntMatrix3) -> Result<AutomorphismBasis, AutomorphismError> {
    for (which, m) in [("M1", &m1), ("M2", &m2)] {
        if !is_symmetric(m) {
            return Err(AutomorphismError::NotSymmetric { which });
        }
        let det = int_det(m);
        if det != 1 {
            return Err(AutomorphismError::NotUnimodular { which, det });
        }
    }
    if int_mul(&m1, &m2) != int_mul(&m2, &m1) {
        return Err(AutomorphismError::NotCommuting);
    }

    let (f1, f2) = (int_to_f64(&m1), int_to_f64(&m2));
    // a generic combination separates the joint spectrum
    let xi = 0.618_033_988_749_894_9;
    let eig = SymmetricEigen::new(f1 + f2 * xi);
    let mut cols: Vec<(f64, f64, Vector3<f64>)> = eig
        .eigenvectors
        .column_iter()
        .map(|c| {
            let c: Vector3<f64> = c.into();
            (c.dot(&(f1 * c)), c.dot(&(f2 * c)), sign_fixed(c))
        })
        .collect();
    cols.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)));
    let mut v = Matrix3::from_columns(&[cols[0].2, cols[1].2, cols[2].2]);
    if v.determinant() < 0.0 {
        v.set_column(2, &(-v.column(2)));
    }
    for (m, name) in [(f1, "M1"), (f2, "M2")] {
        let mut off = v.transpose() * m * v;
        off.fill_diagonal(0.0);
        if off.norm() > 1e-9 * m.norm() {
            return Err(AutomorphismError::Invalid(format!("{name} is not diagonalized by the joint eigenbasis")));
        }
    }
    AutomorphismBasis::from_eigenbasis(m1, m2, v)
}

/// The reference pair `M1, M2` with eigenvector rows ordered and signed to
/// match the tabulated leading digits of `V⁻¹`.
pub fn default_automorphisms() -> AutomorphismBasis {
    let generic = validate_automorphisms(REFERENCE_M1, REFERENCE_M2).expect("reference automorphisms are valid");
    let rows: Vec<Vector3<f64>> = REFERENCE_V_INV
        .iter()
        .map(|r| {
            let target = Vector3::new(r[0], r[1], r[2]);
            let best = generic
                .v
                .column_iter()
                .map(|c| Vector3::new(c[0], c[1], c[2]))
                .max_by(|a, b| a.dot(&target).abs().total_cmp(&b.dot(&target).abs()))
                .unwrap();
            if best.dot(&target) < 0.0 {
                -best
            } else {
                best
            }
        })
        .collect();
    let v = Matrix3::from_columns(&rows);
    AutomorphismBasis::from_eigenbasis(REFERENCE_M1, REFERENCE_M2, v).expect("reordered reference basis is valid")
}

/// `⌈x − 1/2⌉`: the integer whose subtraction lands `x` in `(−1/2, 1/2]`.
pub fn round_half_low(x: f64) -> f64 {
    (x - 0.5).ceil()
}

/// Rates `(δ1, δ2)` with `δ1·ω̂1 + δ2·ω̂2 = diag(D)`.
pub fn stretch_rates(dec: &FlowDecomposition, basis: &AutomorphismBasis) -> Result<[f64; 2]> {
    let target = dec.d;
    let rhs = Vector2::new(basis.omega1.dot(&target), basis.omega2.dot(&target));
    let delta = basis.gram.lu().solve(&rhs).ok_or_else(|| Error::Internal("singular stretch gram matrix".into()))?;
    let residual = (basis.stretch([delta[0], delta[1]]) - target).norm();
    if residual > 1e-10 * target.norm() {
        return Err(Error::Internal(format!(
            "stretch {target:?} is not in the span of the log-spectra (residual {residual:e})"
        )));
    }
    Ok([delta[0], delta[1]])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoxMode {
    GeneralizedKR,
    ClassicKR,
    RotationOnly,
    LeesEdwards,
    Static,
}

impl BoxMode {
    pub fn name(&self) -> &'static str {
        match self {
            BoxMode::GeneralizedKR => "generalized-kr",
            BoxMode::ClassicKR => "classic-kr",
            BoxMode::RotationOnly => "rotation-only",
            BoxMode::LeesEdwards => "lees-edwards",
            BoxMode::Static => "static",
        }
    }
}

/// Snapshot of the cell at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxState {
    pub mode: BoxMode,
    pub t: f64,
    /// Running sum of time steps and its compensation term; `t = t_sum + t_carry`.
    pub t_sum: f64,
    pub t_carry: f64,
    /// Reduced stretch coordinates, each in `(−1/2, 1/2]`.
    pub theta: [f64; 2],
    pub delta: [f64; 2],
    pub eps_tilde: Vector3<f64>,
    /// Columns are the edge vectors.
    pub cell: Matrix3<f64>,
    pub a: f64,
    /// Total automorphism powers applied so far (`n1, n2`), or LE periods for shear.
    pub wraps: [i64; 2],
    /// Number of steps at which the cell basis changed.
    pub remaps: u64,
    /// Whether the last advance remapped the basis.
    pub remapped: bool,
}

impl BoxState {
    /// `(t, θ1, θ2, ε̃1, ε̃2, ε̃3)`.
    pub fn trace_row(&self) -> [f64; 6] {
        [self.t, self.theta[0], self.theta[1], self.eps_tilde[0], self.eps_tilde[1], self.eps_tilde[2]]
    }
}

/// Immutable description of how the cell moves; `advance` is pure.
#[derive(Clone, Debug)]
pub struct BoxMotion {
    mode: BoxMode,
    a: f64,
    s: Matrix3<f64>,
    dec: FlowDecomposition,
    v_inv: Matrix3<f64>,
    omega: [Vector3<f64>; 2],
    delta: [f64; 2],
    period: f64,
}

/// Build the motion and its `t = 0` state for the given flow.
pub fn init_box(dec: &FlowDecomposition, basis: &AutomorphismBasis, a: f64) -> Result<(BoxMotion, BoxState)> {
    let motion = BoxMotion::new(dec, basis, a)?;
    let state = motion.initial_state();
    Ok((motion, state))
}

impl BoxMotion {
    pub fn new(dec: &FlowDecomposition, basis: &AutomorphismBasis, a: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::InvalidParameter(format!("box scale a = {a} must be positive")));
        }
        let mode = match dec.class {
            FlowClass::Zero => BoxMode::Static,
            FlowClass::DefectiveNilpotent => BoxMode::LeesEdwards,
            FlowClass::ComplexPair if dec.d.norm() <= 1e-12 * dec.a.norm() => BoxMode::RotationOnly,
            FlowClass::ComplexPair | FlowClass::NondefectiveReal => BoxMode::GeneralizedKR,
            FlowClass::DefectiveMixed => {
                return Err(Error::UnsupportedFlow(
                    "J3-type flow with nonzero stretch: no bounded remapping is known for this case".into(),
                ))
            }
        };
        let delta = match mode {
            BoxMode::GeneralizedKR => stretch_rates(dec, basis)?,
            _ => [0.0, 0.0],
        };
        let period = match mode {
            BoxMode::LeesEdwards => 2.0 / dec.nilpotent_rate(),
            _ => f64::INFINITY,
        };
        let s = match mode {
            BoxMode::Static => Matrix3::identity(),
            _ => dec.s_unimodular(),
        };
        Ok(Self {
            mode,
            a,
            s,
            dec: dec.clone(),
            v_inv: basis.v_inv,
            omega: [basis.omega1, basis.omega2],
            delta,
            period,
        })
    }

    pub fn mode(&self) -> BoxMode {
        self.mode
    }

    pub fn scale(&self) -> f64 {
        self.a
    }

    pub fn delta(&self) -> [f64; 2] {
        self.delta
    }

    /// Lees-Edwards remap period (infinite for other modes).
    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn decomposition(&self) -> &FlowDecomposition {
        &self.dec
    }

    fn stretch(&self, theta: [f64; 2]) -> Vector3<f64> {
        self.omega[0] * theta[0] + self.omega[1] * theta[1]
    }

    /// Cell for arbitrary (not necessarily wrapped) reduced coordinates at time `t`.
    pub fn cell_for(&self, theta: [f64; 2], t: f64) -> Matrix3<f64> {
        match self.mode {
            BoxMode::Static => Matrix3::identity() * self.a,
            BoxMode::GeneralizedKR | BoxMode::ClassicKR => {
                let e = Matrix3::from_diagonal(&self.stretch(theta).map(f64::exp));
                self.s * self.dec.jordan_rotation(t) * e * self.v_inv * self.a
            }
            BoxMode::RotationOnly => self.s * self.dec.jordan_rotation(t) * self.a,
            BoxMode::LeesEdwards => {
                let tau = t - self.period * (t / self.period).floor();
                self.s * self.dec.jordan_rotation(tau) * self.a
            }
        }
    }

    /// `e^{At}·L̃_0` without any remapping.
    pub fn unremapped_cell(&self, t: f64) -> Matrix3<f64> {
        match self.mode {
            BoxMode::GeneralizedKR | BoxMode::ClassicKR => self.cell_for([self.delta[0] * t, self.delta[1] * t], t),
            BoxMode::LeesEdwards => self.s * self.dec.jordan_rotation(t) * self.a,
            _ => self.cell_for([0.0, 0.0], t),
        }
    }

    pub fn initial_state(&self) -> BoxState {
        BoxState {
            mode: self.mode,
            t: 0.0,
            t_sum: 0.0,
            t_carry: 0.0,
            theta: [0.0, 0.0],
            delta: self.delta,
            eps_tilde: Vector3::zeros(),
            cell: self.cell_for([0.0, 0.0], 0.0),
            a: self.a,
            wraps: [0, 0],
            remaps: 0,
            remapped: false,
        }
    }

    /// Advance by `dt`: update and wrap `θ`, then rebuild the cell from scratch.
    pub fn advance(&self, state: &BoxState, dt: f64) -> BoxState {
        let (t_sum, t_carry) = compensated_add(state.t_sum, state.t_carry, dt);
        let t = t_sum + t_carry;
        let mut next = state.clone();
        next.t = t;
        next.t_sum = t_sum;
        next.t_carry = t_carry;
        next.remapped = false;
        match self.mode {
            BoxMode::GeneralizedKR | BoxMode::ClassicKR => {
                for i in 0..2 {
                    let x = state.theta[i] + self.delta[i] * dt;
                    let k = round_half_low(x);
                    next.theta[i] = x - k;
                    if k != 0.0 {
                        next.wraps[i] -= k as i64;
                        next.remapped = true;
                    }
                }
                next.eps_tilde = self.stretch(next.theta);
            }
            BoxMode::LeesEdwards => {
                let periods = (t / self.period).floor() as i64;
                if periods != state.wraps[0] {
                    next.wraps[0] = periods;
                    next.remapped = true;
                }
            }
            BoxMode::RotationOnly | BoxMode::Static => {}
        }
        if next.remapped {
            next.remaps += 1;
        }
        next.cell = self.cell_for(next.theta, t);
        next
    }

    /// Cell of the same lattice as `advance(prev, dt).cell`, continued from
    /// `prev` without applying the remap of this step.
    pub fn continued_cell(&self, prev: &BoxState, dt: f64) -> Matrix3<f64> {
        let t = prev.t + dt;
        match self.mode {
            BoxMode::GeneralizedKR | BoxMode::ClassicKR => {
                self.cell_for([prev.theta[0] + self.delta[0] * dt, prev.theta[1] + self.delta[1] * dt], t)
            }
            BoxMode::LeesEdwards => {
                let tau = prev.t - self.period * prev.wraps[0] as f64 + dt;
                self.s * self.dec.jordan_rotation(tau) * self.a
            }
            _ => self.cell_for(prev.theta, t),
        }
    }

    /// Lower bound on the distance between any particle and its own periodic
    /// images over the whole run, in units of length.
    pub fn min_replica_distance(&self) -> f64 {
        match self.mode {
            BoxMode::Static => shortest_vector_length(&(Matrix3::identity() * self.a)),
            BoxMode::GeneralizedKR | BoxMode::ClassicKR => {
                let orthogonal = (self.s.transpose() * self.s - Matrix3::identity()).norm() < 1e-10;
                let rotates = self.dec.class == FlowClass::ComplexPair && !orthogonal;
                let r = self.dec.rotation_rate();
                let objective = |x: &[f64]| {
                    let e = Matrix3::from_diagonal(&self.stretch([x[0], x[1]]).map(f64::exp));
                    let rot = if rotates { leading_rotation(x[2]) } else { Matrix3::identity() };
                    shortest_vector_length(&(self.s * rot * e * self.v_inv)) * self.a
                };
                let _ = r;
                if rotates {
                    let grid = grid_points(&[(-0.5, 0.5, 32), (-0.5, 0.5, 32), (0.0, std::f64::consts::TAU, 16)]);
                    minimize_over(&grid, objective, &[1.0 / 32.0, 1.0 / 32.0, std::f64::consts::TAU / 16.0])
                } else {
                    let grid = grid_points(&[(-0.5, 0.5, 64), (-0.5, 0.5, 64)]);
                    minimize_over(&grid, objective, &[1.0 / 64.0, 1.0 / 64.0])
                }
            }
            BoxMode::RotationOnly => {
                let grid = grid_points(&[(0.0, std::f64::consts::TAU, 256)]);
                minimize_over(
                    &grid,
                    |x: &[f64]| shortest_vector_length(&(self.s * leading_rotation(x[0]))) * self.a,
                    &[std::f64::consts::TAU / 256.0],
                )
            }
            BoxMode::LeesEdwards => {
                let grid = grid_points(&[(0.0, self.period, 256)]);
                minimize_over(
                    &grid,
                    |x: &[f64]| {
                        let tau = x[0].clamp(0.0, self.period);
                        shortest_vector_length(&(self.s * self.dec.jordan_rotation(tau))) * self.a
                    },
                    &[self.period / 256.0],
                )
            }
        }
    }
}

/// Neumaier summation step: `(sum, carry) + x`.
pub fn compensated_add(sum: f64, carry: f64, x: f64) -> (f64, f64) {
    let t = sum + x;
    let c = if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
    (t, carry + c)
}

/// Replica-distance floor for a flow, the reference automorphisms and scale `a`.
pub fn min_replica_distance(dec: &FlowDecomposition, basis: &AutomorphismBasis, a: f64) -> Result<f64> {
    Ok(BoxMotion::new(dec, basis, a)?.min_replica_distance())
}

fn grid_points(axes: &[(f64, f64, usize)]) -> Vec<Vec<f64>> {
    let mut points = vec![Vec::new()];
    for &(lo, hi, n) in axes {
        let mut next = Vec::with_capacity(points.len() * (n + 1));
        for p in &points {
            for k in 0..=n {
                let mut q = p.clone();
                q.push(lo + (hi - lo) * k as f64 / n as f64);
                next.push(q);
            }
        }
        points = next;
    }
    points
}

/// Grid search followed by coordinate pattern search from the best few grid points,
/// refining until the step falls below 1e-6.
fn minimize_over<F: Fn(&[f64]) -> f64>(grid: &[Vec<f64>], f: F, steps: &[f64]) -> f64 {
    let mut scored: Vec<(f64, &Vec<f64>)> = grid.iter().map(|p| (f(p), p)).collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = scored[0].0;
    for &(start_val, start) in scored.iter().take(6) {
        let mut x = start.clone();
        let mut fx = start_val;
        let mut step: Vec<f64> = steps.to_vec();
        while step.iter().any(|&s| s > 1e-6) {
            let mut improved = false;
            for d in 0..x.len() {
                for sign in [-1.0, 1.0] {
                    let mut y = x.clone();
                    y[d] += sign * step[d];
                    let fy = f(&y);
                    if fy < fx {
                        x = y;
                        fx = fy;
                        improved = true;
                    }
                }
            }
            if !improved {
                step.iter_mut().for_each(|s| *s *= 0.5);
            }
        }
        best = best.min(fx);
    }
    best
}

/// Lattice time period `t* = log(λ)/ε` of a classic KR automorphism, and its
/// eigenvalues in descending order.
pub fn classic_kr_period(rate: f64, m: &IntMatrix3) -> Result<(f64, [f64; 3])> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::InvalidParameter(format!("strain rate {rate} must be positive")));
    }
    let det = int_det(m);
    if det != 1 {
        return Err(AutomorphismError::NotUnimodular { which: "M", det }.into());
    }
    let (b, c, d) = char_poly(&int_to_f64(m));
    let lambda = match cubic_roots(b, c, d) {
        CubicRoots::Real(r) => r,
        CubicRoots::Complex { re, .. } => {
            return Err(AutomorphismError::NonpositiveSpectrum { which: "M", value: re }.into())
        }
    };
    if let Some(&value) = lambda.iter().find(|&&x| x <= 0.0) {
        return Err(AutomorphismError::NonpositiveSpectrum { which: "M", value }.into());
    }
    if lambda[0] <= 1.0 + 1e-12 {
        return Err(AutomorphismError::Invalid(format!("largest eigenvalue {} must exceed 1", lambda[0])).into());
    }
    Ok((lambda[0].ln() / rate, lambda))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PeriodicityCheck {
    pub t_star: f64,
    /// `‖e^{A t*} L0 − L0 M‖`.
    pub residual: f64,
    pub l0_norm: f64,
}

/// Check `e^{A t*} L0 = L0 M` for `L0 = S V_M⁻¹` and a classic KR automorphism.
pub fn verify_lattice_periodicity(dec: &FlowDecomposition, rate: f64, m: &IntMatrix3) -> Result<PeriodicityCheck> {
    if dec.class != FlowClass::NondefectiveReal {
        return Err(Error::InvalidParameter(format!(
            "classic KR periodicity needs a diagonalizable real flow, got {:?}",
            dec.class
        )));
    }
    let (t_star, lambda) = classic_kr_period(rate, m)?;
    for k in 0..3 {
        let want = lambda[k].ln();
        let have = dec.d[k] * t_star;
        if (want - have).abs() > 1e-9 * (1.0 + want.abs()) {
            return Err(Error::InvalidParameter(format!(
                "flow stretch {:?} at t* = {t_star} does not match log-spectrum of M",
                dec.d
            )));
        }
    }
    let mf = int_to_f64(m);
    let cols: Vec<Vector3<f64>> =
        lambda.iter().map(|&l| sign_fixed(rank2_null_vector(&(mf - Matrix3::identity() * l)).normalize())).collect();
    let v = Matrix3::from_columns(&cols);
    let v_inv = v.try_inverse().ok_or_else(|| Error::Numeric("eigenvectors of M are dependent".into()))?;
    let l0 = dec.s_unimodular() * v_inv;
    let residual = (flow_exponential(dec, t_star)? * l0 - l0 * mf).norm();
    Ok(PeriodicityCheck { t_star, residual, l0_norm: l0.norm() })
}

/// Remap period and integer automorphism `e^{B t0}` of the Lees-Edwards mode.
pub fn lees_edwards_automorphism(dec: &FlowDecomposition) -> Result<(f64, IntMatrix3)> {
    if dec.class != FlowClass::DefectiveNilpotent {
        return Err(Error::InvalidParameter(format!("Lees-Edwards remap needs a nilpotent flow, got {:?}", dec.class)));
    }
    let t0 = 2.0 / dec.nilpotent_rate();
    let e = dec.jordan_rotation(t0);
    let mut m = [[0i64; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = e[(i, j)].round() as i64;
        }
    }
    Ok((t0, m))
}

/// Write `t, θ1, θ2, ε̃1, ε̃2, ε̃3` rows.
pub fn write_stretch_trace<W: Write>(mut out: W, states: &[BoxState]) -> io::Result<()> {
    writeln!(out, "t,theta1,theta2,eps1,eps2,eps3")?;
    for s in states {
        let r = s.trace_row();
        writeln!(out, "{},{},{},{},{},{}", r[0], r[1], r[2], r[3], r[4], r[5])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowdecomp::{classify_flow, preset_flows, FlowKind, FlowMatrix, DEFAULT_TOLERANCE};
    use approx::assert_relative_eq;

    fn dec_of(kind: FlowKind, rate: f64, r: Option<f64>) -> FlowDecomposition {
        classify_flow(&preset_flows(kind, rate, r).unwrap(), DEFAULT_TOLERANCE).unwrap()
    }

    #[test]
    fn round_half_low_interval() {
        for x in [-2.5, -0.5, -0.49, 0.0, 0.5, 0.51, 1.5, 3.2] {
            let y = x - round_half_low(x);
            assert!(y > -0.5 && y <= 0.5, "{x} -> {y}");
        }
        assert_eq!(0.5 - round_half_low(0.5), 0.5);
        assert_eq!(-0.5 - round_half_low(-0.5), 0.5);
    }

    #[test]
    fn validation_diagnostics() {
        let id = [[1, 0, 0], [0, 1, 0], [0, 0, 1]];
        assert!(matches!(validate_automorphisms(id, id), Err(AutomorphismError::DependentLogSpectra { .. })));
        assert!(matches!(
            validate_automorphisms(REFERENCE_M1, REFERENCE_M1),
            Err(AutomorphismError::DependentLogSpectra { .. })
        ));
        let doubled = [[2, 0, 0], [0, 1, 0], [0, 0, 1]];
        assert!(matches!(
            validate_automorphisms(doubled, REFERENCE_M2),
            Err(AutomorphismError::NotUnimodular { which: "M1", det: 2 })
        ));
        let skew = [[1, 1, 0], [0, 1, 0], [0, 0, 1]];
        assert!(matches!(
            validate_automorphisms(REFERENCE_M1, skew),
            Err(AutomorphismError::NotSymmetric { which: "M2" })
        ));
        assert!(matches!(validate_automorphisms(REFERENCE_M1, CLASSIC_KR_M), Err(AutomorphismError::NotCommuting)));
        let negative = [[-1, 0, 0], [0, -1, 0], [0, 0, 1]];
        assert!(matches!(validate_automorphisms(negative, id), Err(AutomorphismError::NonpositiveSpectrum { .. })));
        assert!(validate_automorphisms(REFERENCE_M1, REFERENCE_M2).is_ok());
    }

    #[test]
    fn wrap_across_upper_edge() {
        let basis = default_automorphisms();
        let dec = dec_of(FlowKind::Pef, 1.0, None);
        let (motion, mut state) = init_box(&dec, &basis, 1.0).unwrap();
        let mut m = motion.clone();
        m.delta = [1.0, 0.0];
        state.theta = [0.49, 0.0];
        let next = m.advance(&state, 0.02);
        assert_relative_eq!(next.theta[0], -0.49, epsilon = 1e-12);
        assert!(next.remapped);
        assert_eq!(next.remaps, 1);

        m.delta = [0.0, 0.0];
        state.theta = [0.5, 0.5];
        let next = m.advance(&state, 0.37);
        assert_eq!(next.theta, [0.5, 0.5]);
        assert!(!next.remapped);
    }

    #[test]
    fn init_modes() {
        let basis = default_automorphisms();
        let (_, st) = init_box(&dec_of(FlowKind::Pef, 1.0, None), &basis, 1.0).unwrap();
        assert_eq!(st.mode, BoxMode::GeneralizedKR);
        assert_eq!(st.theta, [0.0, 0.0]);
        let dec = dec_of(FlowKind::Pef, 1.0, None);
        assert_relative_eq!(st.cell, dec.s * basis.v_inv, epsilon = 1e-14);

        let zero = classify_flow(&FlowMatrix::zero(), DEFAULT_TOLERANCE).unwrap();
        let (_, st) = init_box(&zero, &basis, 2.0).unwrap();
        assert_eq!(st.mode, BoxMode::Static);
        assert_eq!(st.cell, Matrix3::identity() * 2.0);
        assert_relative_eq!(st.cell.determinant(), 8.0);

        let (_, st) = init_box(&dec_of(FlowKind::Mixed, 0.0, Some(1.0)), &basis, 1.0).unwrap();
        assert_eq!(st.mode, BoxMode::RotationOnly);

        let (_, st) = init_box(&dec_of(FlowKind::Shear, 1.0, None), &basis, 1.0).unwrap();
        assert_eq!(st.mode, BoxMode::LeesEdwards);

        let j3 = Matrix3::new(0.3, 1.0, 0.0, 0.0, 0.3, 0.0, 0.0, 0.0, -0.6);
        let dec = classify_flow(&FlowMatrix::new(j3).unwrap(), DEFAULT_TOLERANCE).unwrap();
        assert!(matches!(init_box(&dec, &basis, 1.0), Err(Error::UnsupportedFlow(_))));
    }

    #[test]
    fn stretch_rate_basics() {
        let basis = default_automorphisms();
        let mut dec = dec_of(FlowKind::Pef, 1.0, None);
        dec.d = basis.omega1;
        let d = stretch_rates(&dec, &basis).unwrap();
        assert_relative_eq!(d[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(d[1], 0.0, epsilon = 1e-14);
        dec.d = Vector3::zeros();
        assert_eq!(stretch_rates(&dec, &basis).unwrap(), [0.0, 0.0]);
        dec.d = Vector3::new(1.0, 1.0, 1.0);
        assert!(matches!(stretch_rates(&dec, &basis), Err(Error::Internal(_))));
    }

    #[test]
    fn classic_period() {
        let (t1, l) = classic_kr_period(1.0, &CLASSIC_KR_M).unwrap();
        let golden2 = (3.0 + 5f64.sqrt()) / 2.0;
        assert_relative_eq!(l[0], golden2, epsilon = 1e-14);
        assert_relative_eq!(t1, golden2.ln(), epsilon = 1e-14);
        let (t2, _) = classic_kr_period(2.0, &CLASSIC_KR_M).unwrap();
        assert_relative_eq!(t2, t1 / 2.0, epsilon = 1e-15);
        let id = [[1, 0, 0], [0, 1, 0], [0, 0, 1]];
        assert!(classic_kr_period(1.0, &id).is_err());
    }

    #[test]
    fn periodicity_rejects_zero_flow() {
        let zero = classify_flow(&FlowMatrix::zero(), DEFAULT_TOLERANCE).unwrap();
        assert!(verify_lattice_periodicity(&zero, 1.0, &CLASSIC_KR_M).is_err());
    }

    #[test]
    fn trace_output() {
        let basis = default_automorphisms();
        let (m, s0) = init_box(&dec_of(FlowKind::Usf, 1.0, None), &basis, 1.0).unwrap();
        let s1 = m.advance(&s0, 0.5);
        let mut buf = Vec::new();
        write_stretch_trace(&mut buf, &[s0, s1]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("t,theta1,theta2,eps1,eps2,eps3\n0,0,0,0,0,0\n0.5,"));
    }
}
