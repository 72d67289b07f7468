//! Classification of incompressible velocity gradients into real Jordan
//! forms, and the `A = S (D + B) S⁻¹` split used by the box motion.
//!
//! Eigenvalues come from the closed-form cubic (one Newton polish per root),
//! eigenvectors from explicit null-space extraction. Only 3×3 is supported.

use nalgebra::{Complex, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::linalg::{
    char_poly, complex_null_vector, cubic_roots, leading_rotation, orthogonal_complement, rank2_null_vector,
    relative_minor_size, sign_fixed, CubicRoots,
};

/// Default relative tolerance for merging eigenvalues.
pub const DEFAULT_TOLERANCE: f64 = 1e-8;

/// A trace-free 3×3 velocity gradient `A = ∇u`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowMatrix(Matrix3<f64>);

impl FlowMatrix {
    pub fn new(entries: Matrix3<f64>) -> Result<Self> {
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidFlow("non-finite entry".into()));
        }
        let norm = entries.norm();
        let trace = entries.trace();
        if trace.abs() > 1e-12 * norm {
            return Err(Error::InvalidFlow(format!(
                "trace {trace:e} is not zero (|A| = {norm:e}); the flow must be incompressible"
            )));
        }
        Ok(Self(entries))
    }

    pub fn zero() -> Self {
        Self(Matrix3::zeros())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FlowClass {
    /// Three real eigenvalues with a full eigenbasis (J1).
    NondefectiveReal,
    /// One real eigenvalue and a complex-conjugate pair (J2).
    ComplexPair,
    /// Triple zero eigenvalue with a deficient eigenspace: planar shear or J4.
    DefectiveNilpotent,
    /// Repeated nonzero eigenvalue with a deficient eigenspace (J3, ε ≠ 0).
    DefectiveMixed,
    Zero,
}

/// `A · S = S · (D + B)` with `D` diagonal and `B` the rotation or nilpotent part.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowDecomposition {
    pub class: FlowClass,
    pub a: Matrix3<f64>,
    pub s: Matrix3<f64>,
    pub s_inv: Matrix3<f64>,
    /// Diagonal of `D`, mean zero.
    pub d: Vector3<f64>,
    pub b: Matrix3<f64>,
}

impl FlowDecomposition {
    pub fn d_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&self.d)
    }

    /// `J = D + B`, the real Jordan form.
    pub fn jordan(&self) -> Matrix3<f64> {
        self.d_matrix() + self.b
    }

    /// Angular rate `r` of the rotation block (ComplexPair only, otherwise 0).
    pub fn rotation_rate(&self) -> f64 {
        match self.class {
            FlowClass::ComplexPair => self.b[(1, 0)],
            _ => 0.0,
        }
    }

    /// Scale `g` of the nilpotent block `B = g·N`, where `N` has unit superdiagonal entries.
    pub fn nilpotent_rate(&self) -> f64 {
        match self.class {
            FlowClass::DefectiveNilpotent | FlowClass::DefectiveMixed => self.b[(0, 1)],
            _ => 0.0,
        }
    }

    /// `S` rescaled to unit determinant; `A` is unchanged by the rescaling.
    pub fn s_unimodular(&self) -> Matrix3<f64> {
        let det = self.s.determinant();
        self.s / det.cbrt()
    }

    /// `e^{Bt}` in the Jordan basis.
    pub fn jordan_rotation(&self, t: f64) -> Matrix3<f64> {
        match self.class {
            FlowClass::ComplexPair => leading_rotation(self.rotation_rate() * t),
            FlowClass::DefectiveNilpotent | FlowClass::DefectiveMixed => {
                let bt = self.b * t;
                Matrix3::identity() + bt + bt * bt * 0.5
            }
            _ => Matrix3::identity(),
        }
    }
}

fn finish(
    class: FlowClass,
    a: &Matrix3<f64>,
    mut s: Matrix3<f64>,
    d: Vector3<f64>,
    b: Matrix3<f64>,
    flip_all: bool,
) -> Result<FlowDecomposition> {
    if s.determinant() < 0.0 {
        if flip_all {
            s = -s;
        } else {
            s.set_column(2, &(-s.column(2)));
        }
    }
    let s_inv = s.try_inverse().ok_or_else(|| Error::Numeric(format!("eigenbasis of {a} is singular")))?;
    let norm = a.norm();
    let residual = (a * s - s * (Matrix3::from_diagonal(&d) + b)).norm();
    if residual > 1e-6 * norm.max(f64::MIN_POSITIVE) * s.norm() {
        return Err(Error::Numeric(format!("eigen-decomposition of {a} did not converge (residual {residual:e})")));
    }
    Ok(FlowDecomposition { class, a: *a, s, s_inv, d, b })
}

/// Classify `A` and compute its `S, D, B` factors. `tol` is relative to `‖A‖`.
pub fn classify_flow(flow: &FlowMatrix, tol: f64) -> Result<FlowDecomposition> {
    if !(tol > 0.0 && tol <= 1e-4) {
        return Err(Error::InvalidParameter(format!("tolerance {tol} outside (0, 1e-4]")));
    }
    let a = *flow.matrix();
    let norm = a.norm();
    if norm == 0.0 {
        return Ok(FlowDecomposition {
            class: FlowClass::Zero,
            a,
            s: Matrix3::identity(),
            s_inv: Matrix3::identity(),
            d: Vector3::zeros(),
            b: Matrix3::zeros(),
        });
    }

    let (_, p, q) = char_poly(&a);
    if p.abs() <= tol * norm * norm && q.abs() <= tol * norm.powi(3) {
        return nilpotent(&a, tol);
    }

    match cubic_roots(0.0, p, q) {
        CubicRoots::Complex { real, re, im } if im > tol * norm => complex_pair(&a, real, re, im),
        CubicRoots::Complex { real, .. } => repeated_real(&a, -real / 2.0, real, tol),
        CubicRoots::Real(r) => {
            let top = r[0] - r[1] <= tol * norm;
            let bottom = r[1] - r[2] <= tol * norm;
            if top {
                repeated_real(&a, -r[2] / 2.0, r[2], tol)
            } else if bottom {
                repeated_real(&a, -r[0] / 2.0, r[0], tol)
            } else {
                distinct_real(&a, r)
            }
        }
    }
}

fn eigvec(a: &Matrix3<f64>, lambda: f64) -> Vector3<f64> {
    sign_fixed(rank2_null_vector(&(a - Matrix3::identity() * lambda)).normalize())
}

fn distinct_real(a: &Matrix3<f64>, r: [f64; 3]) -> Result<FlowDecomposition> {
    let s = Matrix3::from_columns(&[eigvec(a, r[0]), eigvec(a, r[1]), eigvec(a, r[2])]);
    let mean = (r[0] + r[1] + r[2]) / 3.0;
    let d = Vector3::new(r[0] - mean, r[1] - mean, r[2] - mean);
    finish(FlowClass::NondefectiveReal, a, s, d, Matrix3::zeros(), false)
}

/// `mu` is the double eigenvalue, `single` the simple one (`single = −2 mu`).
fn repeated_real(a: &Matrix3<f64>, mu: f64, single: f64, tol: f64) -> Result<FlowDecomposition> {
    let norm = a.norm();
    let shifted = a - Matrix3::identity() * mu;
    let single_vec = eigvec(a, single);
    let deficient = relative_minor_size(&shifted, norm) > tol.sqrt();
    if !deficient {
        // rank-1 shift: eigenspace is the orthogonal complement of its row space
        let row = (0..3)
            .map(|i| shifted.row(i).transpose())
            .max_by(|x, y| x.norm_squared().total_cmp(&y.norm_squared()))
            .unwrap();
        let (u, w) = orthogonal_complement(&row);
        let (u, w) = (sign_fixed(u), sign_fixed(w));
        let (cols, d) = if mu > single {
            ([u, w, single_vec], Vector3::new(mu, mu, single))
        } else {
            ([single_vec, u, w], Vector3::new(single, mu, mu))
        };
        return finish(FlowClass::NondefectiveReal, a, Matrix3::from_columns(&cols), d, Matrix3::zeros(), false);
    }

    // ker (A − μ)² = range(A + 2μ) by Cayley-Hamilton; pick the generalized vector from it.
    let range = a + Matrix3::identity() * (2.0 * mu);
    let v = (0..3)
        .map(|k| range.column(k).into_owned())
        .filter(|c| c.norm() > 0.0)
        .map(|c| c.normalize())
        .max_by(|x, y| (shifted * x).norm().total_cmp(&(shifted * y).norm()))
        .ok_or_else(|| Error::Numeric(format!("no generalized eigenvector for {a}")))?;
    let image = shifted * v;
    let g = image.norm();
    let s = Matrix3::from_columns(&[image / g, v, single_vec]);
    let mut b = Matrix3::zeros();
    b[(0, 1)] = g;
    finish(FlowClass::DefectiveMixed, a, s, Vector3::new(mu, mu, single), b, false)
}

fn complex_pair(a: &Matrix3<f64>, real: f64, re: f64, im: f64) -> Result<FlowDecomposition> {
    let (x, y) = complex_null_vector(a, Complex::new(re, im));
    // rotate w = x + iy by e^{iφ} so that |x| = |y|
    let phi = 0.5 * (x.norm_squared() - y.norm_squared()).atan2(2.0 * x.dot(&y));
    let (sp, cp) = phi.sin_cos();
    let x2 = x * cp - y * sp;
    let y2 = x * sp + y * cp;
    let scale = y2.norm();
    let (mut c1, mut c2) = (y2 / scale, x2 / scale);
    if c1[c1.iamax()] < 0.0 {
        c1 = -c1;
        c2 = -c2;
    }
    let s = Matrix3::from_columns(&[c1, c2, eigvec(a, real)]);
    let mean = (2.0 * re + real) / 3.0;
    let d = Vector3::new(re - mean, re - mean, real - mean);
    let mut b = Matrix3::zeros();
    b[(0, 1)] = -im;
    b[(1, 0)] = im;
    finish(FlowClass::ComplexPair, a, s, d, b, false)
}

fn nilpotent(a: &Matrix3<f64>, tol: f64) -> Result<FlowDecomposition> {
    let norm = a.norm();
    let a2 = a * a;
    let largest_row = |m: &Matrix3<f64>| {
        (0..3).map(|i| m.row(i).transpose()).max_by(|x, y| x.norm_squared().total_cmp(&y.norm_squared())).unwrap()
    };
    let mut b = Matrix3::zeros();
    if a2.norm() <= tol.sqrt() * norm * norm {
        // planar shear: A = u wᵀ with w·u = 0
        let v = largest_row(a).normalize();
        let image = a * v;
        let g = image.norm();
        let s1 = image / g;
        let s3 = sign_fixed(v.cross(&s1).normalize());
        let s = Matrix3::from_columns(&[s1, v, s3]);
        b[(0, 1)] = g;
        finish(FlowClass::DefectiveNilpotent, a, s, Vector3::zeros(), b, false)
    } else {
        // J4 chain: v, Av/g, A²v/g² with g chosen to balance the outer columns
        let v = largest_row(&a2).normalize();
        let g = (a2 * v).norm().sqrt();
        let s = Matrix3::from_columns(&[a2 * v / (g * g), a * v / g, v]);
        b[(0, 1)] = g;
        b[(1, 2)] = g;
        finish(FlowClass::DefectiveNilpotent, a, s, Vector3::zeros(), b, true)
    }
}

/// `e^{At} = S e^{Bt} e^{Dt} S⁻¹`, closed form for every supported class.
pub fn flow_exponential(dec: &FlowDecomposition, t: f64) -> Result<Matrix3<f64>> {
    match dec.class {
        FlowClass::Zero => Ok(Matrix3::identity()),
        FlowClass::DefectiveMixed => {
            Err(Error::UnsupportedFlow("J3 with nonzero stretch has no bounded-deformation remapping".into()))
        }
        _ => {
            let stretch = Matrix3::from_diagonal(&dec.d.map(|x| (x * t).exp()));
            Ok(dec.s * dec.jordan_rotation(t) * stretch * dec.s_inv)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FlowKind {
    Pef,
    Usf,
    Bsf,
    Shear,
    Mixed,
}

impl FlowKind {
    pub fn name(&self) -> &'static str {
        match self {
            FlowKind::Pef => "pef",
            FlowKind::Usf => "usf",
            FlowKind::Bsf => "bsf",
            FlowKind::Shear => "shear",
            FlowKind::Mixed => "mixed",
        }
    }
}

impl std::str::FromStr for FlowKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pef" => Ok(FlowKind::Pef),
            "usf" => Ok(FlowKind::Usf),
            "bsf" => Ok(FlowKind::Bsf),
            "shear" => Ok(FlowKind::Shear),
            "mixed" => Ok(FlowKind::Mixed),
            other => Err(Error::InvalidParameter(format!("unknown flow kind '{other}'"))),
        }
    }
}

/// Standard velocity gradients: PEF, USF, BSF, planar shear and the spiral block.
pub fn preset_flows(kind: FlowKind, rate: f64, rotation: Option<f64>) -> Result<FlowMatrix> {
    if !rate.is_finite() {
        return Err(Error::InvalidParameter(format!("rate {rate} is not finite")));
    }
    let e = rate;
    let m = match kind {
        FlowKind::Mixed => {
            let r = rotation.ok_or_else(|| Error::InvalidParameter("mixed flow requires a rotation rate".into()))?;
            if !r.is_finite() || (r == 0.0 && e == 0.0) {
                return Err(Error::InvalidParameter(format!("degenerate mixed flow (ε={e}, r={r})")));
            }
            Matrix3::new(e, -r, 0.0, r, e, 0.0, 0.0, 0.0, -2.0 * e)
        }
        _ if e <= 0.0 => {
            return Err(Error::InvalidParameter(format!("strain rate must be positive for {}, got {e}", kind.name())))
        }
        FlowKind::Pef => Matrix3::from_diagonal(&Vector3::new(e, -e, 0.0)),
        FlowKind::Usf => Matrix3::from_diagonal(&Vector3::new(e, -e / 2.0, -e / 2.0)),
        FlowKind::Bsf => Matrix3::from_diagonal(&Vector3::new(-e, e / 2.0, e / 2.0)),
        FlowKind::Shear => {
            let mut m = Matrix3::zeros();
            m[(0, 1)] = e;
            m
        }
    };
    FlowMatrix::new(m)
}
