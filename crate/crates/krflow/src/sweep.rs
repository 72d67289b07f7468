//! Strain-rate sweeps over flow kinds and seeds.

use std::fmt::Write as _;

use krflow_core::flowdecomp::FlowKind;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{FlowSpec, RunConfig};
use crate::error::HarnessError;
use crate::run::simulate;

/// Ten log-spaced rates from 0.05 to 1.2.
pub fn default_rates() -> Vec<f64> {
    let (lo, hi): (f64, f64) = (0.05, 1.2);
    (0..10).map(|k| lo * (hi / lo).powf(k as f64 / 9.0)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPlan {
    pub kinds: Vec<FlowKind>,
    pub rates: Vec<f64>,
    pub seeds: u32,
    /// Also run the no-flow reference with the same seeds.
    pub with_equilibrium: bool,
    pub jobs: usize,
}

/// Window-averaged channels of one run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub p_ext: f64,
    pub p_con: f64,
    pub eta: Option<f64>,
    pub remaps: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    /// Standard error across seeds; zero for a single sample.
    pub se: f64,
}

impl Stat {
    fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let se = if n < 2 {
            0.0
        } else {
            let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        };
        Some(Self { mean, se })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    /// Flow name, or `eq` for the no-flow reference.
    pub kind: String,
    pub rate: f64,
    pub n_runs: usize,
    pub p_ext: Stat,
    pub p_con: Stat,
    pub eta: Option<Stat>,
    pub runs: Vec<RunSummary>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunFailure {
    pub kind: String,
    pub rate: f64,
    pub seed: u64,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutput {
    pub rows: Vec<SummaryRow>,
    pub failures: Vec<RunFailure>,
}

impl SweepOutput {
    pub fn row(&self, kind: &str, rate: f64) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.kind == kind && r.rate == rate)
    }

    pub fn equilibrium(&self) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.kind == "eq")
    }
}

struct Task {
    kind: String,
    rate: f64,
    seed: u64,
    flow: FlowSpec,
}

pub fn sweep(base: &RunConfig, plan: &SweepPlan) -> Result<SweepOutput, HarnessError> {
    if plan.kinds.is_empty() {
        return Err(HarnessError::config("kinds", "no flow kinds given"));
    }
    if plan.rates.is_empty() {
        return Err(HarnessError::config("rates", "no rates given"));
    }
    if plan.seeds == 0 {
        return Err(HarnessError::config("seeds", "need at least one seed"));
    }
    let mut tasks = Vec::new();
    let seeds: Vec<u64> = (0..plan.seeds as u64).map(|k| base.sim.seed + k).collect();
    if plan.with_equilibrium {
        for &seed in &seeds {
            tasks.push(Task { kind: "eq".into(), rate: 0.0, seed, flow: FlowSpec::Zero });
        }
    }
    for &kind in &plan.kinds {
        for &rate in &plan.rates {
            // reject bad rates before any run starts
            let flow = FlowSpec::Preset { kind, rate, rotation: None };
            flow.matrix()?;
            for &seed in &seeds {
                tasks.push(Task { kind: kind.name().to_string(), rate, seed, flow: flow.clone() });
            }
        }
    }

    let run_one = |task: &Task| -> Result<RunSummary, String> {
        let cfg = base.with_flow(task.flow.clone(), task.seed).map_err(|e| e.to_string())?;
        let out = simulate(&cfg).map_err(|e| e.to_string())?;
        let get = |k: &str| out.average(k).map(|a| a.mean);
        Ok(RunSummary {
            seed: task.seed,
            p_ext: get("p_ext").unwrap(),
            p_con: get("p_con").unwrap(),
            eta: get("eta"),
            remaps: out.report.remaps,
        })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.jobs.max(1))
        .build()
        .map_err(|e| HarnessError::config("jobs", e.to_string()))?;
    let results: Vec<Result<RunSummary, String>> = pool.install(|| tasks.par_iter().map(run_one).collect());

    let mut rows: Vec<SummaryRow> = Vec::new();
    let mut failures = Vec::new();
    for (task, result) in tasks.iter().zip(results) {
        let idx = match rows.iter().position(|r| r.kind == task.kind && r.rate == task.rate) {
            Some(i) => i,
            None => {
                rows.push(SummaryRow {
                    kind: task.kind.clone(),
                    rate: task.rate,
                    n_runs: 0,
                    p_ext: Stat { mean: f64::NAN, se: f64::NAN },
                    p_con: Stat { mean: f64::NAN, se: f64::NAN },
                    eta: None,
                    runs: Vec::new(),
                });
                rows.len() - 1
            }
        };
        match result {
            Ok(run) => rows[idx].runs.push(run),
            Err(message) => {
                failures.push(RunFailure { kind: task.kind.clone(), rate: task.rate, seed: task.seed, message })
            }
        }
    }
    for row in &mut rows {
        row.runs.sort_by_key(|r| r.seed);
        row.n_runs = row.runs.len();
        let col = |f: &dyn Fn(&RunSummary) -> Option<f64>| -> Vec<f64> { row.runs.iter().filter_map(f).collect() };
        let (pe, pc, eta) = (col(&|r| Some(r.p_ext)), col(&|r| Some(r.p_con)), col(&|r| r.eta));
        if let Some(s) = Stat::of(&pe) {
            row.p_ext = s;
        }
        if let Some(s) = Stat::of(&pc) {
            row.p_con = s;
        }
        row.eta = if eta.len() == row.n_runs { Stat::of(&eta) } else { None };
    }
    rows.retain(|r| r.n_runs > 0);
    Ok(SweepOutput { rows, failures })
}

fn cell(x: f64) -> String {
    if x.is_finite() {
        x.to_string()
    } else {
        String::new()
    }
}

/// One row per (kind, rate); `eta` columns are empty for the no-flow reference.
pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from("kind,eps,sqrt_eps,P_ext,P_ext_SE,P_con,P_con_SE,eta,eta_SE,n_runs\n");
    for r in rows {
        let (eta, eta_se) = r.eta.map_or((String::new(), String::new()), |e| (cell(e.mean), cell(e.se)));
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.kind,
            r.rate,
            r.rate.sqrt(),
            cell(r.p_ext.mean),
            cell(r.p_ext.se),
            cell(r.p_con.mean),
            cell(r.p_con.se),
            eta,
            eta_se,
            r.n_runs
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_spans_range() {
        let r = default_rates();
        assert_eq!(r.len(), 10);
        assert!((r[0] - 0.05).abs() < 1e-15);
        assert!((r[9] - 1.2).abs() < 1e-12);
        assert!(r.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn stats() {
        assert_eq!(Stat::of(&[3.0]), Some(Stat { mean: 3.0, se: 0.0 }));
        let s = Stat::of(&[1.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert!((s.se - 1.0).abs() < 1e-15);
        assert_eq!(Stat::of(&[]), None);
    }

    #[test]
    fn zero_rate_rejected() {
        let plan =
            SweepPlan { kinds: vec![FlowKind::Pef], rates: vec![0.0], seeds: 1, with_equilibrium: false, jobs: 1 };
        let err = sweep(&RunConfig::default(), &plan).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
