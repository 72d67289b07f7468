//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion,
//! followed by indented details for each sub-check.
//!
//! Set `KRFLOW_FULL_SWEEP=1` to run the full 3 × 10 × 10 sweep for the trend
//! checks instead of the reduced 3 × 3 × 3 grid.

use std::process::ExitCode;
use std::time::Instant;

use krflow::boxcheck::check_box;
use krflow::config::{FlowSpec, RunConfig};
use krflow::run::{simulate, RunOutput};
use krflow::sweep::{default_rates, sweep, SummaryRow, SweepOutput, SweepPlan};
use krflow_core::boxmotion::{
    default_automorphisms, lees_edwards_automorphism, min_replica_distance, verify_lattice_periodicity, CLASSIC_KR_M,
};
use krflow_core::dynamics::{SimConfig, Simulation};
use krflow_core::flowdecomp::{
    classify_flow, flow_exponential, preset_flows, FlowDecomposition, FlowKind, FlowMatrix, DEFAULT_TOLERANCE,
};
use krflow_core::lattice::int_to_f64;
use krflow_core::pbc::{minimum_image, neighbor_pairs, wrap_positions, Cell, Pair};
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Printed digits of the reference eigenvector matrix and log-spectra.
const PRINTED_V_INV: [[f64; 3]; 3] = [[0.591, -0.737, 0.328], [0.737, 0.328, -0.591], [0.328, 0.591, 0.737]];
const PRINTED_OMEGA1: [f64; 3] = [-1.178, 1.619, -0.441];
const PRINTED_OMEGA2: [f64; 3] = [1.619, -0.441, -1.178];
const PRINTED_FLOOR: f64 = 0.8198;
const PRINTED_LE_M: [[i64; 3]; 3] = [[1, 2, 2], [0, 1, 2], [0, 0, 1]];

/// Sub-checks whose failure is understood and does not fail the suite.
const KNOWN: &[(&str, &str)] = &[
    ("1.omega", "printed log-spectra list entries 2 and 3 swapped relative to the printed eigenvectors"),
    ("1.floor", "printed value is the squared distance: 0.905443^2 = 0.8198"),
    ("7.a", "the viscous normal-stress response at the smallest rate exceeds the seed-to-seed error"),
];

struct Check {
    key: String,
    pass: bool,
    detail: String,
}

struct Criterion {
    id: &'static str,
    title: &'static str,
    checks: Vec<Check>,
    seconds: f64,
}

impl Criterion {
    fn new(id: &'static str, title: &'static str) -> Self {
        Self { id, title, checks: Vec::new(), seconds: 0.0 }
    }

    fn check(&mut self, key: &str, pass: bool, detail: impl Into<String>) {
        self.checks.push(Check { key: format!("{}.{key}", self.id), pass, detail: detail.into() });
    }

    fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn timed(mut c: Criterion, f: impl FnOnce(&mut Criterion)) -> Criterion {
    let start = Instant::now();
    f(&mut c);
    c.seconds = start.elapsed().as_secs_f64();
    c
}

fn dec(kind: FlowKind, rate: f64, rotation: Option<f64>) -> FlowDecomposition {
    classify_flow(&preset_flows(kind, rate, rotation).unwrap(), DEFAULT_TOLERANCE).unwrap()
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn matches3(have: &[f64], printed: &[f64]) -> bool {
    have.iter().zip(printed).all(|(h, p)| (round3(*h) - p).abs() < 1e-9)
}

fn criterion_1() -> Criterion {
    timed(Criterion::new("1", "constant reproduction"), |c| {
        let b = default_automorphisms();
        let v: Vec<f64> = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| b.v_inv[(i, j)]).collect();
        let printed: Vec<f64> = PRINTED_V_INV.iter().flatten().copied().collect();
        c.check(
            "v_inv",
            matches3(&v, &printed),
            format!("V^-1 rows to 3 dp: {:?}", v.iter().map(|x| round3(*x)).collect::<Vec<_>>()),
        );

        let (w1, w2) = (b.omega1, b.omega2);
        let direct = matches3(w1.as_slice(), &PRINTED_OMEGA1) && matches3(w2.as_slice(), &PRINTED_OMEGA2);
        let swap = |w: &Vector3<f64>| [w[0], w[2], w[1]];
        let permuted = matches3(&swap(&w1), &PRINTED_OMEGA1) && matches3(&swap(&w2), &PRINTED_OMEGA2);
        c.check(
            "omega",
            direct,
            format!(
                "omega1 = {:?}, omega2 = {:?}; match after swapping entries 2 and 3: {permuted}",
                w1.map(round3).as_slice(),
                w2.map(round3).as_slice()
            ),
        );

        let d = min_replica_distance(&dec(FlowKind::Usf, 1.0, None), &b, 1.0).unwrap();
        c.check(
            "floor",
            (d - PRINTED_FLOOR).abs() <= 5e-4,
            format!("min replica distance {d:.6} a (squared {:.6}), printed {PRINTED_FLOOR} a", d * d),
        );
    })
}

/// Largest fractional-coordinate mismatch, modulo lattice translations.
fn mismatch(a: &Simulation, b: &Simulation) -> f64 {
    let inv = a.cell().inverse();
    a.system
        .q
        .iter()
        .zip(&b.system.q)
        .map(|(x, y)| {
            let s = inv * (x - y);
            (s - s.map(f64::round)).amax()
        })
        .fold(0.0, f64::max)
}

fn criterion_2() -> Criterion {
    timed(Criterion::new("2", "remapped vs naive box trajectories"), |c| {
        let cfg = SimConfig {
            n: 64,
            temperature: 0.722,
            density: 0.8442,
            dt: 0.002,
            t_max: 1.0,
            t_decorrelate: 0.0,
            seed: 7,
            flow: preset_flows(FlowKind::Pef, 0.5, None).unwrap(),
            thermostat: true,
        };
        let mut kr = Simulation::new(cfg.clone()).unwrap();
        let mut naive = Simulation::naive(cfg.clone()).unwrap();
        let mut worst = mismatch(&kr, &naive);
        for _ in 0..cfg.steps() {
            kr.step().unwrap();
            naive.step().unwrap();
            worst = worst.max(mismatch(&kr, &naive));
        }
        c.check("agree", worst <= 1e-8, format!("max fractional mismatch {worst:.3e} over {} steps", cfg.steps()));
    })
}

fn criterion_3() -> Criterion {
    timed(Criterion::new("3", "box boundedness over 1e7 steps"), |c| {
        let flows = [
            ("pef", preset_flows(FlowKind::Pef, 1.0, None).unwrap()),
            ("usf", preset_flows(FlowKind::Usf, 1.0, None).unwrap()),
            ("bsf", preset_flows(FlowKind::Bsf, 1.0, None).unwrap()),
            ("mixed", preset_flows(FlowKind::Mixed, 1.0, Some(1.0)).unwrap()),
        ];
        for (name, flow) in flows {
            let r = check_box(&flow, 10_000_000, 0.002, 1.0).unwrap();
            c.check(
                name,
                r.bounded(1e-9),
                format!(
                    "{name}: theta in [{:.6}, {:.6}], violations {}, max |det - a^3|/a^3 {:.2e}, remaps {}",
                    r.theta_min, r.theta_max, r.theta_violations, r.max_det_error, r.remaps
                ),
            );
        }
    })
}

fn reference_run(kind: FlowKind) -> RunOutput {
    let cfg = RunConfig::default().with_flow(FlowSpec::Preset { kind, rate: 1.0, rotation: None }, 1).unwrap();
    simulate(&cfg).unwrap()
}

fn criterion_4(usf: &RunOutput) -> Criterion {
    timed(Criterion::new("4", "replica floor and remap count (USF, eps = 1)"), |c| {
        let r = &usf.report;
        let bound = PRINTED_FLOOR * r.box_scale - 1e-6;
        let seen = r.min_self_image_at_remap.unwrap_or(f64::NAN);
        c.check(
            "floor",
            seen >= bound,
            format!("min self-image at remap {seen:.6} vs bound {bound:.6} (certified floor {:.6})", r.replica_floor),
        );
        c.check("remaps", (12..=18).contains(&r.remaps), format!("{} remaps to t = {}", r.remaps, r.t_max));
    })
}

fn criterion_5(pef: &RunOutput) -> Criterion {
    timed(Criterion::new("5", "isokinetic and momentum invariants (PEF, eps = 1)"), |c| {
        let r = &pef.report;
        let sampled =
            pef.timeseries.iter().map(|s| (s.temperature - r.temperature).abs() / r.temperature).fold(0.0, f64::max);
        c.check(
            "temperature",
            r.max_temperature_deviation <= 1e-6 && sampled <= 1e-6,
            format!("max relative deviation {:.3e} (every step), {sampled:.3e} (samples)", r.max_temperature_deviation),
        );
        c.check("momentum", r.max_momentum <= 1e-9, format!("max |P| {:.3e}; {} remaps", r.max_momentum, r.remaps));
    })
}

fn criterion_6(runs: &[(&str, &RunOutput)]) -> Criterion {
    timed(Criterion::new("6", "stress invariance under remap"), |c| {
        for (name, out) in runs {
            let r = &out.report;
            let change = r.max_remap_stress_change;
            c.check(
                name,
                r.remaps > 0 && change.is_some_and(|x| x <= 1e-10),
                format!("{name}: {} remaps, max entrywise change {:.3e}", r.remaps, change.unwrap_or(f64::NAN)),
            );
        }
    })
}

fn combined(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

fn kind_rows<'a>(out: &'a SweepOutput, kind: FlowKind) -> Vec<&'a SummaryRow> {
    let mut rows: Vec<_> = out.rows.iter().filter(|r| r.kind == kind.name()).collect();
    rows.sort_by(|a, b| a.rate.total_cmp(&b.rate));
    rows
}

fn criterion_7() -> Criterion {
    let full = std::env::var("KRFLOW_FULL_SWEEP").is_ok_and(|v| v == "1");
    let title = if full { "trend reproduction (full sweep)" } else { "trend reproduction (reduced grid)" };
    timed(Criterion::new("7", title), |c| {
        let grid = default_rates();
        let (rates, seeds) = if full { (grid.clone(), 10) } else { (vec![grid[0], grid[5], grid[9]], 3) };
        let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
        let kinds = [FlowKind::Pef, FlowKind::Usf, FlowKind::Bsf];
        let plan = SweepPlan { kinds: kinds.to_vec(), rates, seeds, with_equilibrium: true, jobs };
        let out = sweep(&RunConfig::default(), &plan).unwrap();
        c.check("runs", out.failures.is_empty(), format!("{} failed runs", out.failures.len()));
        let eq = out.equilibrium().unwrap();
        let p_eq = eq.p_ext;
        c.check("eq", true, format!("equilibrium pressure {:.4} ± {:.4} over {} seeds", p_eq.mean, p_eq.se, eq.n_runs));

        let mut a_ok = true;
        let mut a_detail = Vec::new();
        for kind in kinds {
            let low = kind_rows(&out, kind)[0];
            for (label, s) in [("ext", low.p_ext), ("con", low.p_con)] {
                let dev = (s.mean - p_eq.mean).abs();
                let tol = 3.0 * combined(s.se, p_eq.se);
                a_ok &= dev <= tol;
                a_detail.push(format!("{} {label} {:.4} (|dev| {dev:.4} vs 3SE {tol:.4})", kind.name(), s.mean));
            }
        }
        c.check("a", a_ok, format!("at eps = {:.3}: {}", grid[0], a_detail.join("; ")));

        let mut b_ok = true;
        let mut b_detail = Vec::new();
        for kind in kinds {
            let rows = kind_rows(&out, kind);
            let etas: Vec<_> = rows.iter().map(|r| r.eta.unwrap()).collect();
            let violations = etas.windows(2).filter(|w| w[1].mean > w[0].mean + combined(w[0].se, w[1].se)).count();
            b_ok &= violations == 0;
            b_detail.push(format!(
                "{} eta {:?}",
                kind.name(),
                etas.iter().map(|e| format!("{:.3}", e.mean)).collect::<Vec<_>>()
            ));
        }
        c.check("b", b_ok, b_detail.join("; "));

        let mut c_ok = true;
        let mut c_detail = Vec::new();
        for kind in kinds {
            let p: Vec<f64> = kind_rows(&out, kind).iter().map(|r| r.p_con.mean).collect();
            c_ok &= p.windows(2).all(|w| w[1] > w[0]);
            c_detail.push(format!(
                "{} P_con {:?}",
                kind.name(),
                p.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>()
            ));
        }
        c.check("c", c_ok, c_detail.join("; "));
    })
}

fn criterion_8() -> Criterion {
    timed(Criterion::new("8", "classic KR periodicity and Lees-Edwards automorphism"), |c| {
        let pef = dec(FlowKind::Pef, 1.0, None);
        let p = verify_lattice_periodicity(&pef, 1.0, &CLASSIC_KR_M).unwrap();
        c.check("kr", p.residual <= 1e-9, format!("t* = {:.6}, residual {:.3e}", p.t_star, p.residual));

        // the nilpotent chain itself, and the same flow in a skewed frame
        let j4 = Matrix3::new(0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0);
        let s0 = Matrix3::new(1.0, 0.5, 0.0, 0.0, 1.0, -0.25, 0.0, 0.0, 1.0);
        for (name, a) in [("j4", j4), ("j4_skewed", s0 * j4 * s0.try_inverse().unwrap())] {
            let d = classify_flow(&FlowMatrix::new(a).unwrap(), DEFAULT_TOLERANCE).unwrap();
            let (t0, m) = lees_edwards_automorphism(&d).unwrap();
            let s = d.s_unimodular();
            let lhs = flow_exponential(&d, 2.0).unwrap() * s;
            let rhs = s * int_to_f64(&m);
            let err = (lhs - rhs).amax();
            let same = m.iter().zip(&PRINTED_LE_M).all(|(x, y)| x.iter().zip(y).all(|(u, v)| *u as i64 == *v));
            c.check(
                name,
                t0 == 2.0 && same && err <= 1e-12,
                format!("{name}: t0 = {t0}, M = {m:?}, max |e^2A S - S M| {err:.2e}"),
            );
        }
    })
}

/// Exhaustive minimum image: every `n` in the stored basis that could beat the
/// rounded candidate, least norm, ties to the lexicographically smallest `n`.
fn brute_image(dq: &Vector3<f64>, l: &Matrix3<f64>, l_inv: &Matrix3<f64>) -> Vector3<f64> {
    let f = l_inv * dq;
    let d0 = (dq - l * f.map(f64::round)).norm() * (1.0 + 1e-9);
    let bound = |k: usize| {
        let w = l_inv.row(k).norm() * d0;
        ((-f[k] - w).floor() as i64, (-f[k] + w).ceil() as i64)
    };
    let (b0, b1, b2) = (bound(0), bound(1), bound(2));
    let mut best: Option<(f64, Vector3<f64>)> = None;
    for i in b0.0..=b0.1 {
        for j in b1.0..=b1.1 {
            for k in b2.0..=b2.1 {
                let n = Vector3::new(i as f64, j as f64, k as f64);
                let d = dq + l * n;
                let d2 = d.norm_squared();
                if best.map_or(true, |(b, _)| d2 < b) {
                    best = Some((d2, d));
                }
            }
        }
    }
    best.unwrap().1
}

fn random_cell(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let kinds = [FlowKind::Pef, FlowKind::Usf, FlowKind::Bsf];
    let d = dec(kinds[rng.random_range(0..3)], 1.0, None);
    let motion = krflow_core::boxmotion::BoxMotion::new(&d, &default_automorphisms(), 1.0).unwrap();
    let theta = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
    let mut l = motion.cell_for(theta, 0.0);
    // a random elementary shear of the basis: same lattice, more skew
    if rng.random_bool(0.5) {
        let (i, j) = (rng.random_range(0..3), rng.random_range(0..3));
        if i != j {
            let col = l.column(j) * rng.random_range(-1i32..=1) as f64;
            let mut ci = l.column_mut(i);
            ci += col;
        }
    }
    l
}

fn criterion_9() -> Criterion {
    timed(Criterion::new("9", "minimum image and pair search vs exhaustive references"), |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let (mut image_bad, mut pair_bad, mut images, mut pairs, mut celllist) =
            (0usize, 0usize, 0usize, 0usize, 0usize);
        let r_c = 1.0;
        for inst in 0..10_000 {
            // alternate between cells large enough for cell lists and small ones
            let scale = if inst % 2 == 0 { rng.random_range(3.4..4.5) } else { rng.random_range(1.5..3.0) };
            let l = random_cell(&mut rng) * scale;
            let cell = Cell::new(l).unwrap();
            let l_inv = l.try_inverse().unwrap();
            if cell.heights().iter().all(|h| h / r_c >= 3.0) {
                celllist += 1;
            }
            for _ in 0..8 {
                let dq = l * Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0));
                images += 1;
                if minimum_image(&dq, &cell) != brute_image(&dq, &l, &l_inv) {
                    image_bad += 1;
                }
            }
            let n = 24;
            let q: Vec<_> = (0..n).map(|_| l * Vector3::from_fn(|_, _| rng.random_range(0.0..1.0))).collect();
            let q = wrap_positions(&q, &cell);
            let mut want = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    let dq = brute_image(&(q[i] - q[j]), &l, &l_inv);
                    if dq.norm_squared() < r_c * r_c {
                        want.push(Pair { i, j, dq });
                    }
                }
            }
            pairs += want.len();
            if neighbor_pairs(&q, &cell, r_c) != want {
                pair_bad += 1;
            }
        }
        c.check("image", image_bad == 0, format!("{image_bad} of {images} minimum images differ"));
        c.check(
            "pairs",
            pair_bad == 0,
            format!("{pair_bad} of 10000 pair lists differ ({pairs} pairs, {celllist} instances on cell lists)"),
        );
    })
}

fn main() -> ExitCode {
    let mut results = vec![criterion_1(), criterion_2(), criterion_3()];
    let start = Instant::now();
    let usf = reference_run(FlowKind::Usf);
    let pef = reference_run(FlowKind::Pef);
    let run_secs = start.elapsed().as_secs_f64();
    let mut c4 = criterion_4(&usf);
    c4.seconds += run_secs / 2.0;
    let mut c5 = criterion_5(&pef);
    c5.seconds += run_secs / 2.0;
    results.push(c4);
    results.push(c5);
    results.push(criterion_6(&[("pef", &pef), ("usf", &usf)]));
    results.push(criterion_7());
    results.push(criterion_8());
    results.push(criterion_9());

    let mut unexpected = Vec::new();
    for c in &results {
        let verdict = if c.pass() { "PASS" } else { "FAIL" };
        println!("{verdict} criterion {}: {} ({:.1} s)", c.id, c.title, c.seconds);
        for ch in &c.checks {
            let known = KNOWN.iter().find(|(k, _)| *k == ch.key);
            let tag = match (ch.pass, known) {
                (true, _) => "ok".to_string(),
                (false, Some((_, why))) => format!("fail, known: {why}"),
                (false, None) => {
                    unexpected.push(ch.key.clone());
                    "fail".to_string()
                }
            };
            println!("    [{}] {} ({tag})", ch.key, ch.detail);
        }
    }
    if unexpected.is_empty() {
        println!("acceptance: no unexpected failures");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: unexpected failures in {}", unexpected.join(", "));
        ExitCode::FAILURE
    }
}
