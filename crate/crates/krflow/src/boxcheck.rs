//! Box-only certification: evolve the cell without particles.

use krflow_core::boxmotion::{default_automorphisms, BoxMotion};
use krflow_core::flowdecomp::{classify_flow, FlowMatrix, DEFAULT_TOLERANCE};
use krflow_core::lattice::shortest_vector_length;
use serde::Serialize;

use crate::error::HarnessError;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoxCheck {
    pub mode: String,
    pub steps: u64,
    pub dt: f64,
    pub a: f64,
    pub delta: [f64; 2],
    /// Smallest and largest θ component seen.
    pub theta_min: f64,
    pub theta_max: f64,
    /// Steps with some θ outside `(−1/2, 1/2]`.
    pub theta_violations: u64,
    /// Largest `|det L − a³| / a³`.
    pub max_det_error: f64,
    pub remaps: u64,
    /// Certified lower bound on the self-image distance.
    pub replica_floor: f64,
    /// Smallest self-image distance measured at a remap.
    pub min_self_image_at_remap: Option<f64>,
    pub final_t: f64,
}

impl BoxCheck {
    pub fn bounded(&self, det_tol: f64) -> bool {
        self.theta_violations == 0 && self.max_det_error <= det_tol
    }
}

pub fn box_motion(flow: &FlowMatrix, a: f64) -> Result<BoxMotion, HarnessError> {
    let dec = classify_flow(flow, DEFAULT_TOLERANCE)?;
    Ok(BoxMotion::new(&dec, &default_automorphisms(), a)?)
}

pub fn check_box(flow: &FlowMatrix, steps: u64, dt: f64, a: f64) -> Result<BoxCheck, HarnessError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(HarnessError::config("dt", format!("must be positive, got {dt}")));
    }
    let motion = box_motion(flow, a)?;
    let a3 = a.powi(3);
    let mut state = motion.initial_state();
    let mut out = BoxCheck {
        mode: motion.mode().name().to_string(),
        steps,
        dt,
        a,
        delta: motion.delta(),
        theta_min: 0.0,
        theta_max: 0.0,
        theta_violations: 0,
        max_det_error: (state.cell.determinant() - a3).abs() / a3,
        remaps: 0,
        replica_floor: motion.min_replica_distance(),
        min_self_image_at_remap: None,
        final_t: 0.0,
    };
    for _ in 0..steps {
        state = motion.advance(&state, dt);
        let mut bad = false;
        for &th in &state.theta {
            out.theta_min = out.theta_min.min(th);
            out.theta_max = out.theta_max.max(th);
            bad |= !(th > -0.5 && th <= 0.5);
        }
        out.theta_violations += bad as u64;
        out.max_det_error = out.max_det_error.max((state.cell.determinant() - a3).abs() / a3);
        if state.remapped {
            let d = shortest_vector_length(&state.cell);
            out.min_self_image_at_remap = Some(out.min_self_image_at_remap.map_or(d, |m| m.min(d)));
        }
    }
    out.remaps = state.remaps;
    out.final_t = state.t;
    Ok(out)
}

pub fn min_distance(flow: &FlowMatrix, a: f64) -> Result<f64, HarnessError> {
    Ok(box_motion(flow, a)?.min_replica_distance())
}
