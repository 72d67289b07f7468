//! WCA particles under isokinetic SLLOD dynamics in a remapped periodic cell.
//!
//! Particles carry peculiar momenta `p = v − A·q` (unit mass), so the
//! equations of motion read
//!
//! ```text
//! dq/dt = p + A·q,        dp/dt = f − A·p − α·p
//! ```
//!
//! which is the lab-frame SLLOD system rewritten; `α` keeps `½Σ|p|²` fixed.
//! Lattice shifts of `q` leave `p` untouched, so wrapping and remapping
//! never inject kinetic energy.
//!
//! One step is a Strang splitting: half kick (force, then streaming decay
//! `e^{−A dt/2}`), exact drift `q ← e^{A dt} q + Φ p` with
//! `Φ = ∫₀^dt e^{As} ds`, box update with rewrapping and new forces, the
//! mirrored half kick, and an exact rescale of `p` onto the isokinetic shell.

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::boxmotion::{default_automorphisms, AutomorphismBasis, BoxMotion, BoxState};
use crate::error::{Error, Result};
use crate::flowdecomp::{classify_flow, flow_exponential, FlowDecomposition, FlowMatrix, DEFAULT_TOLERANCE};
use crate::pbc::{check_cutoff, neighbor_pairs, wrap_positions_in_place, Cell};

/// WCA cutoff `2^{1/6}`.
pub const WCA_CUTOFF: f64 = 1.122_462_048_309_373;

pub const EXPLOSION_SPEED: f64 = 1e3;

/// `(φ(r), φ'(r))` for the shifted, truncated 12-6 potential.
pub fn wca_energy_force(r: f64) -> (f64, f64) {
    if r >= WCA_CUTOFF {
        return (0.0, 0.0);
    }
    let ir2 = 1.0 / (r * r);
    let ir6 = ir2 * ir2 * ir2;
    let ir12 = ir6 * ir6;
    (4.0 * (ir12 - ir6) + 1.0, (-48.0 * ir12 + 24.0 * ir6) / r)
}

#[derive(Clone, Debug)]
pub struct Forces {
    pub forces: Vec<Vector3<f64>>,
    pub potential: f64,
    /// `Σ_pairs (q_i − q_j) ⊗ f^{(ij)}` with minimum-image separations.
    pub pair_virial: Matrix3<f64>,
    pub pair_count: usize,
}

pub fn compute_forces(q: &[Vector3<f64>], cell: &Cell) -> Result<Forces> {
    let pairs = neighbor_pairs(q, cell, WCA_CUTOFF);
    let mut forces = vec![Vector3::zeros(); q.len()];
    let mut potential = 0.0;
    let mut pair_virial = Matrix3::zeros();
    for p in &pairs {
        let r = p.dq.norm();
        if r == 0.0 {
            return Err(Error::Overlap { i: p.i, j: p.j, r });
        }
        let (phi, dphi) = wca_energy_force(r);
        let f = p.dq * (-dphi / r);
        forces[p.i] += f;
        forces[p.j] -= f;
        potential += phi;
        pair_virial += p.dq * f.transpose();
    }
    Ok(Forces { forces, potential, pair_virial, pair_count: pairs.len() })
}

/// Thermostat multiplier from lab-frame velocities `v`.
pub fn sllod_alpha(q: &[Vector3<f64>], v: &[Vector3<f64>], f: &[Vector3<f64>], a: &Matrix3<f64>) -> Result<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for ((qi, vi), fi) in q.iter().zip(v).zip(f) {
        let c = vi - a * qi;
        num += (fi - a * vi + a * (a * qi)).dot(&c);
        den += c.dot(&c);
    }
    if den < 1e-12 {
        return Err(Error::DegenerateState(format!("peculiar kinetic energy {den:e} is too small for the thermostat")));
    }
    Ok(num / den)
}

/// Positions and peculiar momenta (unit mass).
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleSystem {
    pub q: Vec<Vector3<f64>>,
    pub p: Vec<Vector3<f64>>,
    pub f: Vec<Vector3<f64>>,
}

impl ParticleSystem {
    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn lab_velocities(&self, a: &Matrix3<f64>) -> Vec<Vector3<f64>> {
        self.q.iter().zip(&self.p).map(|(q, p)| p + a * q).collect()
    }

    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self.p.iter().map(|p| p.norm_squared()).sum::<f64>()
    }

    /// Peculiar temperature with `3N − 3` degrees of freedom.
    pub fn temperature(&self) -> f64 {
        2.0 * self.kinetic_energy() / dof(self.len())
    }

    pub fn momentum(&self) -> Vector3<f64> {
        self.p.iter().sum()
    }

    /// `Σ p ⊗ p`.
    pub fn kinetic_tensor(&self) -> Matrix3<f64> {
        self.p.iter().fold(Matrix3::zeros(), |acc, p| acc + p * p.transpose())
    }
}

pub fn dof(n: usize) -> f64 {
    3.0 * n as f64 - 3.0
}

fn rescale_to(p: &mut [Vector3<f64>], temperature: f64) -> Result<()> {
    let n = p.len();
    let ke: f64 = 0.5 * p.iter().map(|x| x.norm_squared()).sum::<f64>();
    let target = 0.5 * dof(n) * temperature;
    if ke < 1e-300 {
        return Err(Error::DegenerateState("zero peculiar kinetic energy".into()));
    }
    let s = (target / ke).sqrt();
    p.iter_mut().for_each(|x| *x *= s);
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub temperature: f64,
    pub density: f64,
    pub dt: f64,
    pub t_max: f64,
    pub t_decorrelate: f64,
    pub seed: u64,
    pub flow: FlowMatrix,
    /// Gaussian isokinetic constraint; off gives plain SLLOD (used only in tests).
    pub thermostat: bool,
}

impl SimConfig {
    /// Box edge `a` with `a³ = N/ρ`.
    pub fn box_scale(&self) -> f64 {
        (self.n as f64 / self.density).cbrt()
    }

    pub fn steps(&self) -> u64 {
        (self.t_max / self.dt).round() as u64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::Configuration(format!("{field}: {why}")));
        if self.n <= 1 {
            return bad("N", "need at least two particles");
        }
        if !(self.density > 0.0 && self.density.is_finite()) {
            return bad("density", "must be positive");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature", "must be positive");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt", "must be positive");
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return bad("t_max", "must be positive");
        }
        if !(self.t_decorrelate >= 0.0 && self.t_decorrelate < self.t_max) {
            return bad("t_decorrelate", "must lie in [0, t_max)");
        }
        Ok(())
    }
}

/// Initial positions on a simple cubic lattice of the initial cell and
/// Gaussian peculiar momenta with zero mean at exactly the target temperature.
pub fn initialize(config: &SimConfig, cell: &Cell) -> Result<ParticleSystem> {
    config.validate()?;
    let n = config.n;
    let mut side = (n as f64).cbrt().round() as usize;
    while side * side * side < n {
        side += 1;
    }
    let mut q = Vec::with_capacity(n);
    'fill: for i in 0..side {
        for j in 0..side {
            for k in 0..side {
                if q.len() == n {
                    break 'fill;
                }
                let s = Vector3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) / side as f64;
                q.push(cell.matrix() * s);
            }
        }
    }
    wrap_positions_in_place(&mut q, cell);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut p: Vec<Vector3<f64>> = (0..n)
        .map(|_| {
            Vector3::new(
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            )
        })
        .collect();
    let mean = p.iter().sum::<Vector3<f64>>() / n as f64;
    p.iter_mut().for_each(|x| *x -= mean);
    rescale_to(&mut p, config.temperature)?;
    Ok(ParticleSystem { q, f: vec![Vector3::zeros(); n], p })
}

/// `(e^{A h}, ∫₀^h e^{As} ds)` by a scaled Taylor series.
fn drift_maps(a: &Matrix3<f64>, h: f64) -> (Matrix3<f64>, Matrix3<f64>) {
    let ah = a * h;
    let mut term = Matrix3::identity();
    let mut exp = Matrix3::identity();
    let mut phi = Matrix3::identity() * h;
    for k in 1..40 {
        term = term * ah / k as f64;
        exp += term;
        phi += term * (h / (k + 1) as f64);
        if term.norm() < 1e-18 {
            break;
        }
    }
    (exp, phi)
}

/// How the cell follows the flow.
#[derive(Clone, Debug)]
pub enum BoxDriver {
    /// Bounded cell with automorphism remapping.
    Remapped(BoxMotion),
    /// `e^{At}·L̃_0` with no remapping; only usable for short times.
    Naive(BoxMotion),
}

impl BoxDriver {
    fn motion(&self) -> &BoxMotion {
        match self {
            BoxDriver::Remapped(m) | BoxDriver::Naive(m) => m,
        }
    }

    fn advance(&self, state: &BoxState, dt: f64) -> BoxState {
        match self {
            BoxDriver::Remapped(m) => m.advance(state, dt),
            BoxDriver::Naive(m) => {
                let (t_sum, t_carry) = crate::boxmotion::compensated_add(state.t_sum, state.t_carry, dt);
                let t = t_sum + t_carry;
                BoxState { t, t_sum, t_carry, cell: m.unremapped_cell(t), remapped: false, ..state.clone() }
            }
        }
    }
}

/// Per-step diagnostics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub step: u64,
    pub t: f64,
    pub remapped: bool,
}

/// A particle system coupled to its moving cell.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub config: SimConfig,
    pub dec: FlowDecomposition,
    pub system: ParticleSystem,
    pub box_state: BoxState,
    driver: BoxDriver,
    cell: Cell,
    a: Matrix3<f64>,
    decay_half: Matrix3<f64>,
    stream: Matrix3<f64>,
    stream_integral: Matrix3<f64>,
    forces: Forces,
    step: u64,
    replica_floor: f64,
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Self> {
        Self::with_basis(config, &default_automorphisms(), false)
    }

    /// Same dynamics, but the cell is the unremapped `e^{At}·L̃_0`.
    pub fn naive(config: SimConfig) -> Result<Self> {
        Self::with_basis(config, &default_automorphisms(), true)
    }

    pub fn with_basis(config: SimConfig, basis: &AutomorphismBasis, naive: bool) -> Result<Self> {
        config.validate()?;
        let dec = classify_flow(&config.flow, DEFAULT_TOLERANCE)?;
        let motion = BoxMotion::new(&dec, basis, config.box_scale())?;
        let replica_floor = motion.min_replica_distance();
        check_cutoff(WCA_CUTOFF, replica_floor)?;
        let box_state = motion.initial_state();
        let driver = if naive { BoxDriver::Naive(motion) } else { BoxDriver::Remapped(motion) };
        let cell = Cell::new(box_state.cell)?;
        let mut system = initialize(&config, &cell)?;
        let forces = compute_forces(&system.q, &cell)?;
        system.f.clone_from(&forces.forces);

        let a = *config.flow.matrix();
        let dt = config.dt;
        let decay_half = flow_exponential(&dec, -0.5 * dt)?;
        let (stream, stream_integral) = drift_maps(&a, dt);
        Ok(Self {
            config,
            dec,
            system,
            box_state,
            driver,
            cell,
            a,
            decay_half,
            stream,
            stream_integral,
            forces,
            step: 0,
            replica_floor,
        })
    }

    pub fn flow(&self) -> &Matrix3<f64> {
        &self.a
    }

    pub fn motion(&self) -> &BoxMotion {
        self.driver.motion()
    }

    pub fn cell(&self) -> &Cell {
        &self.cell
    }

    pub fn forces(&self) -> &Forces {
        &self.forces
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.box_state.t
    }

    /// Lower bound on self-image distance for this run.
    pub fn replica_floor(&self) -> f64 {
        self.replica_floor
    }

    fn half_kick(&mut self) {
        let h = 0.5 * self.config.dt;
        for (p, f) in self.system.p.iter_mut().zip(&self.forces.forces) {
            *p += f * h;
        }
    }

    fn decay(&mut self) {
        let e = self.decay_half;
        self.system.p.iter_mut().for_each(|p| *p = e * *p);
    }

    fn project(&mut self) -> Result<()> {
        if self.config.thermostat {
            rescale_to(&mut self.system.p, self.config.temperature)?;
        }
        Ok(())
    }

    pub fn step(&mut self) -> Result<StepInfo> {
        self.half_kick();
        self.decay();
        self.project()?;

        let (e, phi) = (self.stream, self.stream_integral);
        for (q, p) in self.system.q.iter_mut().zip(&self.system.p) {
            *q = e * *q + phi * p;
        }

        self.box_state = self.driver.advance(&self.box_state, self.config.dt);
        self.cell = Cell::new(self.box_state.cell)?;
        wrap_positions_in_place(&mut self.system.q, &self.cell);
        self.forces = compute_forces(&self.system.q, &self.cell)?;
        self.system.f.clone_from(&self.forces.forces);

        self.decay();
        self.half_kick();
        self.project()?;
        self.step += 1;

        if let Some((i, p)) = self.system.p.iter().enumerate().find(|(_, p)| !(p.norm() <= EXPLOSION_SPEED)) {
            return Err(Error::Explosion { step: self.step, particle: i, speed: p.norm() });
        }
        Ok(StepInfo { step: self.step, t: self.box_state.t, remapped: self.box_state.remapped })
    }

    /// Virial stress of the current state.
    pub fn stress(&self) -> Matrix3<f64> {
        crate::observables::virial_stress(&self.system.kinetic_tensor(), &self.forces.pair_virial, self.cell.volume())
    }

    /// Virial stress of the current configuration evaluated with another basis of the same lattice.
    pub fn stress_in_cell(&self, cell: Matrix3<f64>) -> Result<Matrix3<f64>> {
        let cell = Cell::new(cell)?;
        let forces = compute_forces(&self.system.q, &cell)?;
        Ok(crate::observables::virial_stress(&self.system.kinetic_tensor(), &forces.pair_virial, cell.volume()))
    }
}
