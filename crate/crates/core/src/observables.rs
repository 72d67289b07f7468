//! Stress, pressure, generalized viscosity and windowed block averages.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::flowdecomp::FlowDecomposition;
use crate::linalg::contract;

/// `σ = −(Σ p⊗p + Σ_pairs dq⊗f) / V`.
pub fn virial_stress(kinetic: &Matrix3<f64>, pair_virial: &Matrix3<f64>, volume: f64) -> Matrix3<f64> {
    -(kinetic + pair_virial) / volume
}

/// `η = (σ : γ) / (γ : γ)` with `γ = A + Aᵀ`.
pub fn generalized_viscosity(sigma: &Matrix3<f64>, a: &Matrix3<f64>) -> Result<f64> {
    let gamma = a + a.transpose();
    let gg = contract(&gamma, &gamma);
    if gg <= 1e-24 * a.norm_squared().max(f64::MIN_POSITIVE) || gg == 0.0 {
        return Err(Error::UndefinedViscosity);
    }
    Ok(contract(sigma, &gamma) / gg)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StressRecord {
    pub t: f64,
    pub sigma: Matrix3<f64>,
    pub pressure: Matrix3<f64>,
    pub temperature: f64,
    pub eta: Option<f64>,
}

impl StressRecord {
    pub fn new(t: f64, sigma: Matrix3<f64>, temperature: f64, a: &Matrix3<f64>) -> Self {
        let eta = generalized_viscosity(&sigma, a).ok();
        Self { t, sigma, pressure: -sigma, temperature, eta }
    }

    /// Isotropic pressure `tr(P)/3`.
    pub fn mean_pressure(&self) -> f64 {
        self.pressure.trace() / 3.0
    }
}

/// Pressure projected on the stretching and compressing axes of a flow.
///
/// The extensional channel averages `uᵀPu` over eigen-axes with positive
/// strain rate, the contractional one over axes with negative strain rate.
/// Flows without such axes report the isotropic pressure in both.
#[derive(Clone, Debug, PartialEq)]
pub struct Channels {
    pub extensional: Vec<Vector3<f64>>,
    pub contractional: Vec<Vector3<f64>>,
}

impl Channels {
    pub fn for_flow(dec: &FlowDecomposition) -> Self {
        let scale = dec.d.amax();
        let mut ext = Vec::new();
        let mut con = Vec::new();
        if scale > 0.0 {
            for k in 0..3 {
                let axis = dec.s.column(k).normalize();
                if dec.d[k] > 1e-9 * scale {
                    ext.push(axis);
                } else if dec.d[k] < -1e-9 * scale {
                    con.push(axis);
                }
            }
        }
        Self { extensional: ext, contractional: con }
    }

    fn project(axes: &[Vector3<f64>], p: &Matrix3<f64>) -> f64 {
        if axes.is_empty() {
            return p.trace() / 3.0;
        }
        axes.iter().map(|u| u.dot(&(p * u))).sum::<f64>() / axes.len() as f64
    }

    pub fn extensional(&self, p: &Matrix3<f64>) -> f64 {
        Self::project(&self.extensional, p)
    }

    pub fn contractional(&self, p: &Matrix3<f64>) -> f64 {
        Self::project(&self.contractional, p)
    }

    /// Short text description, e.g. `x` or `(y+z)/2`.
    pub fn describe(axes: &[Vector3<f64>]) -> String {
        if axes.is_empty() {
            return "tr(P)/3".into();
        }
        let names: Vec<String> = axes
            .iter()
            .map(|u| {
                let k = u.iamax();
                if (u[k].abs() - 1.0).abs() < 1e-12 {
                    ["x", "y", "z"][k].to_string()
                } else {
                    format!("({:.3},{:.3},{:.3})", u[0], u[1], u[2])
                }
            })
            .collect();
        if names.len() == 1 {
            names[0].clone()
        } else {
            format!("({})/{}", names.join("+"), names.len())
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Average {
    pub mean: f64,
    /// Standard error from block means; 0 when fewer than two blocks exist.
    pub se: f64,
    pub samples: usize,
}

pub const BLOCKS: usize = 10;

/// Mean and block standard error of a series split into at most `blocks` contiguous blocks.
pub fn block_average(values: &[f64], blocks: usize) -> Option<Average> {
    let n = values.len();
    if n == 0 || blocks == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let nb = blocks.min(n);
    let means: Vec<f64> = (0..nb)
        .map(|b| {
            let chunk = &values[b * n / nb..(b + 1) * n / nb];
            chunk.iter().sum::<f64>() / chunk.len() as f64
        })
        .collect();
    let se = if nb < 2 {
        0.0
    } else {
        let m = means.iter().sum::<f64>() / nb as f64;
        let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (nb - 1) as f64;
        (var / nb as f64).sqrt()
    };
    Some(Average { mean, se, samples: n })
}

/// Block average of one scalar channel over records with `t ∈ [from, to]`.
pub fn window_average<F>(records: &[StressRecord], from: f64, to: f64, channel: F) -> Result<Average>
where
    F: Fn(&StressRecord) -> f64,
{
    let values: Vec<f64> = records.iter().filter(|r| r.t >= from && r.t <= to).map(channel).collect();
    block_average(&values, BLOCKS).ok_or(Error::EmptyWindow { from, to })
}
