//! A single simulation: initialize, integrate, sample, average, report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use krflow_core::boxmotion::BoxState;
use krflow_core::dynamics::Simulation;
use krflow_core::lattice::shortest_vector_length;
use krflow_core::observables::{window_average, Average, Channels, StressRecord};
use nalgebra::Matrix3;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::HarnessError;

pub const INTEGRATOR: &str =
    "strang splitting on peculiar momenta: half kick + exp(-A dt/2), exact streaming drift, half kick, isokinetic rescale";
pub const DOF_CONVENTION: &str = "3N-3";

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ChannelAverage {
    pub mean: f64,
    pub se: f64,
    pub samples: usize,
}

impl From<Average> for ChannelAverage {
    fn from(a: Average) -> Self {
        Self { mean: a.mean, se: a.se, samples: a.samples }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub config_text: String,
    pub n: usize,
    pub temperature: f64,
    pub density: f64,
    pub dt: f64,
    pub t_max: f64,
    pub t_decorrelate: f64,
    pub seed: u64,
    pub flow: String,
    pub flow_matrix: [f64; 9],
    pub flow_class: String,
    pub box_mode: String,
    pub box_scale: f64,
    pub steps: u64,
    pub samples: usize,
    /// Window averages keyed by channel name; `eta` is absent without strain.
    pub averages: BTreeMap<String, ChannelAverage>,
    pub remaps: u64,
    pub replica_floor: f64,
    /// Shortest self-image distance of the cell measured at each remap.
    pub min_self_image_at_remap: Option<f64>,
    /// Largest entrywise change of σ between the two bases at a remap.
    pub max_remap_stress_change: Option<f64>,
    pub max_temperature_deviation: f64,
    pub max_momentum: f64,
    pub wall_clock_seconds: f64,
    pub integrator: String,
    pub dof_convention: String,
    pub extensional_channel: String,
    pub contractional_channel: String,
    pub sample_every: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimeseriesRow {
    pub t: f64,
    pub temperature: f64,
    pub sigma: Matrix3<f64>,
    pub eta: Option<f64>,
    pub p_ext: f64,
    pub p_con: f64,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: RunReport,
    pub timeseries: Vec<TimeseriesRow>,
    pub stretch: Vec<[f64; 6]>,
}

impl RunOutput {
    pub fn average(&self, channel: &str) -> Option<ChannelAverage> {
        self.report.averages.get(channel).copied()
    }
}

/// Run one simulation in memory.
pub fn simulate(config: &RunConfig) -> Result<RunOutput, HarnessError> {
    let started = Instant::now();
    let mut sim = Simulation::new(config.sim.clone()).map_err(HarnessError::from_config)?;
    let a = *sim.flow();
    let channels = Channels::for_flow(&sim.dec);
    let steps = config.sim.steps();
    let dt = config.sim.dt;
    let target_t = config.sim.temperature;

    let mut records = Vec::new();
    let mut timeseries = Vec::new();
    let mut stretch = Vec::new();
    let mut sample = |sim: &Simulation, records: &mut Vec<StressRecord>, stretch: &mut Vec<[f64; 6]>| {
        let rec = StressRecord::new(sim.time(), sim.stress(), sim.system.temperature(), &a);
        timeseries.push(TimeseriesRow {
            t: rec.t,
            temperature: rec.temperature,
            sigma: rec.sigma,
            eta: rec.eta,
            p_ext: channels.extensional(&rec.pressure),
            p_con: channels.contractional(&rec.pressure),
        });
        records.push(rec);
        if config.stretch_trace {
            stretch.push(sim.box_state.trace_row());
        }
    };
    sample(&sim, &mut records, &mut stretch);

    let mut max_t_dev: f64 = 0.0;
    let mut max_momentum: f64 = sim.system.momentum().norm();
    let mut min_self_image: Option<f64> = None;
    let mut max_remap_change: Option<f64> = None;
    for step in 1..=steps {
        let prev: BoxState = sim.box_state.clone();
        let info = sim.step().map_err(|source| HarnessError::Aborted { step, source })?;
        max_t_dev = max_t_dev.max((sim.system.temperature() - target_t).abs() / target_t);
        max_momentum = max_momentum.max(sim.system.momentum().norm());
        if info.remapped {
            let d = shortest_vector_length(sim.cell().matrix());
            min_self_image = Some(min_self_image.map_or(d, |m| m.min(d)));
            let other = sim
                .stress_in_cell(sim.motion().continued_cell(&prev, dt))
                .map_err(|source| HarnessError::Aborted { step, source })?;
            let change = (sim.stress() - other).amax();
            max_remap_change = Some(max_remap_change.map_or(change, |m| m.max(change)));
        }
        if step % config.sample_every == 0 {
            sample(&sim, &mut records, &mut stretch);
        }
    }

    // a hair of slack so the sample at exactly t_decorrelate is included
    let (from, to) = (config.sim.t_decorrelate - 1e-9 * dt, config.sim.t_max + 1e-9 * dt);
    let mut averages = BTreeMap::new();
    let mut put = |name: &str, f: &dyn Fn(&StressRecord) -> f64| -> Result<(), HarnessError> {
        let avg = window_average(&records, from, to, f)?;
        averages.insert(name.to_string(), ChannelAverage::from(avg));
        Ok(())
    };
    put("p_ext", &|r| channels.extensional(&r.pressure))?;
    put("p_con", &|r| channels.contractional(&r.pressure))?;
    put("p_iso", &|r| r.mean_pressure())?;
    put("temperature", &|r| r.temperature)?;
    if records.iter().all(|r| r.eta.is_some()) {
        put("eta", &|r| r.eta.unwrap())?;
    }

    let report = RunReport {
        config_text: config.source.clone(),
        n: config.sim.n,
        temperature: config.sim.temperature,
        density: config.sim.density,
        dt,
        t_max: config.sim.t_max,
        t_decorrelate: config.sim.t_decorrelate,
        seed: config.sim.seed,
        flow: config.flow.label(),
        flow_matrix: {
            let m = config.sim.flow.matrix();
            [m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(1, 0)], m[(1, 1)], m[(1, 2)], m[(2, 0)], m[(2, 1)], m[(2, 2)]]
        },
        flow_class: format!("{:?}", sim.dec.class),
        box_mode: sim.motion().mode().name().to_string(),
        box_scale: config.sim.box_scale(),
        steps,
        samples: records.len(),
        averages,
        remaps: sim.box_state.remaps,
        replica_floor: sim.replica_floor(),
        min_self_image_at_remap: min_self_image,
        max_remap_stress_change: max_remap_change,
        max_temperature_deviation: max_t_dev,
        max_momentum,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        integrator: INTEGRATOR.to_string(),
        dof_convention: DOF_CONVENTION.to_string(),
        extensional_channel: Channels::describe(&channels.extensional),
        contractional_channel: Channels::describe(&channels.contractional),
        sample_every: config.sample_every,
    };
    Ok(RunOutput { report, timeseries, stretch })
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn timeseries_csv(rows: &[TimeseriesRow]) -> String {
    let mut s = String::from("t,temperature,sigma_xx,sigma_xy,sigma_xz,sigma_yy,sigma_yz,sigma_zz,eta,p_ext,p_con\n");
    for r in rows {
        let m = &r.sigma;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.temperature,
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 2)],
            opt(r.eta),
            r.p_ext,
            r.p_con
        );
    }
    s
}

pub fn stretch_csv(rows: &[[f64; 6]]) -> String {
    let mut s = String::from("t,theta1,theta2,eps1,eps2,eps3\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{},{}", r[0], r[1], r[2], r[3], r[4], r[5]);
    }
    s
}

/// `key=value` lines; the config echo comes last, each line prefixed with `config: `.
pub fn report_text(r: &RunReport) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k}={v}");
    };
    kv("n", r.n.to_string());
    kv("temperature", r.temperature.to_string());
    kv("density", r.density.to_string());
    kv("dt", r.dt.to_string());
    kv("t_max", r.t_max.to_string());
    kv("t_decorrelate", r.t_decorrelate.to_string());
    kv("seed", r.seed.to_string());
    kv("flow", r.flow.clone());
    kv("flow_matrix", r.flow_matrix.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" "));
    kv("flow_class", r.flow_class.clone());
    kv("box_mode", r.box_mode.clone());
    kv("box_scale", r.box_scale.to_string());
    kv("steps", r.steps.to_string());
    kv("samples", r.samples.to_string());
    kv("sample_every", r.sample_every.to_string());
    for (name, a) in &r.averages {
        kv(&format!("{name}.mean"), a.mean.to_string());
        kv(&format!("{name}.se"), a.se.to_string());
        kv(&format!("{name}.samples"), a.samples.to_string());
    }
    kv("remaps", r.remaps.to_string());
    kv("replica_floor", r.replica_floor.to_string());
    kv("min_self_image_at_remap", opt(r.min_self_image_at_remap));
    kv("max_remap_stress_change", opt(r.max_remap_stress_change));
    kv("max_temperature_deviation", r.max_temperature_deviation.to_string());
    kv("max_momentum", r.max_momentum.to_string());
    kv("wall_clock_seconds", r.wall_clock_seconds.to_string());
    kv("integrator", r.integrator.clone());
    kv("dof_convention", r.dof_convention.clone());
    kv("extensional_channel", r.extensional_channel.clone());
    kv("contractional_channel", r.contractional_channel.clone());
    for line in r.config_text.lines() {
        let _ = writeln!(s, "config: {line}");
    }
    s
}

fn write(path: &Path, text: &str) -> Result<(), HarnessError> {
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

/// Write `timeseries.csv`, `stretch.csv`, `report.txt` and `report.json` into `dir`.
pub fn write_outputs(out: &RunOutput, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    write(&dir.join("timeseries.csv"), &timeseries_csv(&out.timeseries))?;
    if !out.stretch.is_empty() {
        write(&dir.join("stretch.csv"), &stretch_csv(&out.stretch))?;
    }
    write(&dir.join("report.txt"), &report_text(&out.report))?;
    let json = serde_json::to_string_pretty(&out.report).expect("report serializes");
    write(&dir.join("report.json"), &(json + "\n"))
}

pub fn run(config: &RunConfig, dir: &Path) -> Result<RunOutput, HarnessError> {
    let out = simulate(config)?;
    write_outputs(&out, dir)?;
    Ok(out)
}
