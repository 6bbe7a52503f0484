//! Acceptance suite: one line per criterion.
//!
//! Criteria listed in `KNOWN_FAILURES` are still run and reported as FAIL;
//! only an unexpected failure makes this target exit nonzero.

mod common;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use reflect_core::capacity::{
    estimate_capacity, lebesgue_lower_bound_check, sandwich_report, CapacityProblem,
};
use reflect_core::diagnostics::loglog_slope;
use reflect_core::diagnostics::{
    complementarity, eta_density, support_overlap, weighted_mass, MeasureGrid, WeightField,
};
use reflect_core::ensemble::monte_carlo;
use reflect_core::grid::{Field, Grid, Norm};
use reflect_core::models::{
    audit_assumptions, BaseReaction, Convection, Flux, FluxModel, PenaltyKind, ReactionModel, Site,
    StructuralConstants, DEFAULT_EPS,
};
use reflect_core::noise::{NoisePath, NoiseSampler, NoiseSpec};
use reflect_core::scenarios::{standard, standard_scenario};
use reflect_core::solver::{energy_residual, solve_trajectory, SolverConfig, TrajectoryRecord};

/// Power-penalty bound with `p = 1.5`: see the project notes for the analysis.
const KNOWN_FAILURES: &[u32] = &[4];

const SWEEP: [f64; 5] = [1.0, 10.0, 100.0, 1e3, 1e4];
const FINE_NT: usize = 5000;
const PATHS: usize = 10;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn run_standard(cfg: &SolverConfig, seed: u64) -> TrajectoryRecord {
    let path = NoisePath::new(seed, cfg.grid.nt(), cfg.noise.modes());
    solve_trajectory(cfg, &path).expect("standard run")
}

/// Largest `a - b` over all nodes and levels.
fn max_excess(a: &TrajectoryRecord, b: &TrajectoryRecord) -> f64 {
    a.u.levels()
        .iter()
        .zip(b.u.levels())
        .flat_map(|(x, y)| x.values().iter().zip(y.values()).map(|(p, q)| p - q))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn comparison() -> Outcome {
    let v_cfg = standard_scenario(10.0);
    let mut u_cfg = v_cfg.clone();
    u_cfg.reaction.base = BaseReaction::Linear {
        slope: 0.0,
        pos_slope: 0.5,
    };
    u_cfg.u0 = v_cfg.u0.scaled(0.9);
    let slack = 10.0 * v_cfg.newton_tol;
    let worst = (0..20u64)
        .into_par_iter()
        .map(|seed| max_excess(&run_standard(&u_cfg, seed), &run_standard(&v_cfg, seed)))
        .reduce(|| f64::NEG_INFINITY, f64::max);
    outcome(
        worst <= slack,
        format!("20 seed pairs, max(u - v) = {worst:.3e} <= {slack:.0e}"),
    )
}

fn monotonicity() -> Outcome {
    let strengths = [1.0, 10.0, 100.0, 1000.0];
    let slack = 10.0 * standard_scenario(1.0).newton_tol;
    let worst = (0..5u64)
        .into_par_iter()
        .map(|seed| {
            let recs: Vec<_> = strengths
                .iter()
                .map(|&n| run_standard(&standard_scenario(n), seed))
                .collect();
            recs.windows(2)
                .map(|w| max_excess(&w[0], &w[1]))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .reduce(|| f64::NEG_INFINITY, f64::max);
    outcome(
        worst <= slack,
        format!("n in 1..1e3, 5 seeds, max(u_n - u_m) = {worst:.3e} <= {slack:.0e}"),
    )
}

fn penalty_bound(base: &SolverConfig, label: &str) -> Outcome {
    let stats: Vec<_> = SWEEP
        .par_iter()
        .map(|&n| monte_carlo(&base.with_strength(n), PATHS, 0).expect("ensemble"))
        .collect();
    let failures: usize = stats.iter().map(|s| s.failures.len()).sum();
    let k4: Vec<f64> = stats.iter().map(|s| s.k4.mean).collect();
    let tail = &k4[2..];
    let ratio = tail.iter().cloned().fold(0.0, f64::max)
        / tail.iter().cloned().fold(f64::INFINITY, f64::min);
    let points: Vec<(f64, f64)> = SWEEP
        .iter()
        .zip(&stats)
        .map(|(n, s)| (n.ln(), s.neg_l2.mean.ln()))
        .collect();
    let slope = loglog_slope(&points).unwrap_or(f64::NAN);
    let k4_text: Vec<String> = k4.iter().map(|v| format!("{v:.3e}")).collect();
    outcome(
        failures == 0 && ratio < 10.0 && slope <= -0.4,
        format!(
            "{label}: mean n-weighted negativity [{}], tail ratio {ratio:.2} < 10, slope {slope:.3} <= -0.4, {failures} failed paths",
            k4_text.join(", ")
        ),
    )
}

fn fine_standard(n: f64) -> SolverConfig {
    let cfg = standard_scenario(n);
    SolverConfig {
        grid: cfg.grid.with_time(standard::T, FINE_NT).unwrap(),
        ..cfg
    }
}

fn linear_penalty_bound() -> Outcome {
    penalty_bound(
        &fine_standard(1.0),
        &format!("linear penalty, nt {FINE_NT}"),
    )
}

fn power_penalty_bound() -> Outcome {
    let mut cfg = fine_standard(1.0);
    cfg.flux = FluxModel::p_laplace(1, 1.5, Convection::along_x(standard::C))
        .and_then(|f| f.with_eps(DEFAULT_EPS))
        .unwrap();
    cfg.reaction = ReactionModel::new(
        BaseReaction::Zero,
        PenaltyKind::Power { exponent: 0.5 },
        1.0,
    )
    .unwrap();
    penalty_bound(&cfg, &format!("p = 1.5, power penalty, nt {FINE_NT}"))
}

fn energy_identity() -> Outcome {
    let cfg = standard_scenario(10.0);
    let fine = NoisePath::new(0, 4000, cfg.noise.modes());
    let rel: Vec<f64> = [8, 4, 2, 1]
        .par_iter()
        .map(|&factor| {
            let path = fine.coarsen(factor).unwrap();
            let c = SolverConfig {
                grid: cfg.grid.with_time(standard::T, path.nt()).unwrap(),
                ..cfg.clone()
            };
            let rec = solve_trajectory(&c, &path).unwrap();
            energy_residual(&rec) / rec.ledger.dissipation_total()
        })
        .collect();
    let monotone = rel.windows(2).all(|w| w[1] < w[0]);
    let last = *rel.last().unwrap();
    let text: Vec<String> = rel.iter().map(|r| format!("{r:.2e}")).collect();
    outcome(
        monotone && last < 0.01,
        format!(
            "nt 500..4000, residual/dissipation [{}], monotone {monotone}, final < 1e-2",
            text.join(", ")
        ),
    )
}

fn sweep_records() -> Vec<TrajectoryRecord> {
    SWEEP
        .par_iter()
        .map(|&n| run_standard(&standard_scenario(n), 0))
        .collect()
}

type TestFn = fn(f64, &[f64]) -> f64;

const SMOOTH_TESTS: [TestFn; 5] = [
    |_, _| 1.0,
    |_, x| (std::f64::consts::PI * x[0]).sin(),
    |t, _| t,
    |t, x| (t * x[0]).cos(),
    |t, x| (-(x[0] - 0.5).powi(2) - t).exp(),
];

fn measure_diagnostics(recs: &[TrajectoryRecord]) -> Outcome {
    let grid = *recs[0].grid();
    let phi = WeightField::phi(&grid);
    let measures: Vec<MeasureGrid> = recs.iter().map(eta_density).collect();
    let mut masses: Vec<f64> = measures
        .iter()
        .map(|m| weighted_mass(m, &phi).unwrap())
        .collect();
    let max = masses.iter().cloned().fold(0.0, f64::max);
    masses.sort_by(f64::total_cmp);
    let median = masses[masses.len() / 2];
    let (m3, m4) = (&measures[3], &measures[4]);
    let mut pairs = vec![(
        weighted_mass(m3, &phi).unwrap(),
        weighted_mass(m4, &phi).unwrap(),
    )];
    pairs.extend(
        SMOOTH_TESTS
            .iter()
            .map(|f| (m3.pair_with_fn(f), m4.pair_with_fn(f))),
    );
    let worst = pairs
        .iter()
        .map(|(a, b)| (a - b).abs() / (0.2 * b.abs() + 1e-8))
        .fold(0.0, f64::max);
    outcome(
        max <= 10.0 * median && worst <= 1.0,
        format!(
            "phi-mass max/median {:.2} <= 10, worst |mass(1e4) - mass(1e3)| / (0.2 mass(1e4) + 1e-8) = {worst:.3} <= 1 over phi and 5 tests",
            max / median
        ),
    )
}

fn complementarity_check(recs: &[TrajectoryRecord]) -> Outcome {
    let k = 1.0;
    let (m, n) = (&recs[1], &recs[4]);
    let eta = eta_density(n);
    let value = complementarity(m, &eta, k).unwrap();
    let bound = 1e-3 * eta.mass() * k;
    let overlap = support_overlap(m, n).unwrap();
    let sup =
        m.u.levels()
            .iter()
            .map(|f| f.norm(Norm::Linf).unwrap())
            .fold(0.0, f64::max);
    let overlap_bound = 10.0 * standard_scenario(1.0).newton_tol * sup;
    outcome(
        value <= bound && overlap <= overlap_bound,
        format!(
            "m = 10, n = 1e4: pairing {value:.3e} <= {bound:.3e}, max (u_m)+(u_n)- = {overlap:.3e} <= {overlap_bound:.3e}"
        ),
    )
}

fn heat_regression() -> Outcome {
    let nx = 128;
    let grid0 = Grid::build(1, &[1.0], nx, None, 1.0, 1).unwrap();
    let h = grid0.h();
    let t = 0.1;
    let nt = (t / (h * h)).round() as usize;
    let grid = grid0.with_time(t, nt).unwrap();
    let flux = FluxModel::p_laplace(1, 2.0, Convection::none()).unwrap();
    let u0 = Field::from_fn(&grid, |x| (std::f64::consts::PI * x[0]).sin());
    let cfg = SolverConfig::new(
        grid,
        flux,
        ReactionModel::unpenalized(BaseReaction::Zero),
        NoiseSpec::off(),
        u0.clone(),
    )
    .unwrap();
    let rec = solve_trajectory(&cfg, &NoisePath::new(0, nt, 0)).unwrap();
    let worst = rec
        .u
        .levels()
        .iter()
        .enumerate()
        .skip(1)
        .map(|(j, f)| {
            let exact = u0.scaled((-std::f64::consts::PI.powi(2) * grid.time(j)).exp());
            f.add_scaled(-1.0, &exact).unwrap().norm(Norm::L2).unwrap()
                / exact.norm(Norm::L2).unwrap()
        })
        .fold(0.0, f64::max);
    outcome(
        worst < 0.01,
        format!(
            "nx {nx}, dt = h^2 ({nt} steps to t = {t}), max relative L2 error {worst:.3e} < 1e-2"
        ),
    )
}

fn noise_sampler() -> Outcome {
    let cfg = standard_scenario(1.0);
    let draws = 10_000;
    let dt = 1e-3;
    let sampler = NoiseSampler::new(&cfg.noise, &cfg.grid);
    let path = NoisePath::new(99, draws, cfg.noise.modes());
    let nodes = [8usize, 31, 50];
    let mut samples = vec![Vec::with_capacity(draws); nodes.len()];
    for j in 0..draws {
        let inc = sampler.increment(&path, j, dt).unwrap();
        for (s, &i) in samples.iter_mut().zip(&nodes) {
            s.push(inc.values()[i]);
        }
    }
    let mut worst_z = 0.0f64;
    for (s, &i) in samples.iter().zip(&nodes) {
        let n = s.len() as f64;
        let m2 = s.iter().map(|x| x * x).sum::<f64>() / n;
        let m4 = s.iter().map(|x| x.powi(4)).sum::<f64>() / n;
        let se = ((m4 - m2 * m2) / n).sqrt();
        let target = dt * sampler.pointwise_variance(i);
        worst_z = worst_z.max((m2 - target).abs() / se);
    }
    let replay = NoisePath::new(99, draws, cfg.noise.modes());
    let identical = (0..draws).step_by(97).all(|j| {
        let a = sampler.increment(&path, j, dt).unwrap();
        let b = sampler.increment(&replay, j, dt).unwrap();
        a.values()
            .iter()
            .zip(b.values())
            .all(|(x, y)| x.to_bits() == y.to_bits())
    });
    outcome(
        worst_z <= 3.0 && identical,
        format!("1e4 draws at 3 nodes, worst |z| = {worst_z:.2} <= 3, bitwise replay {identical}"),
    )
}

fn capacity_lab() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;

    let g1 = Grid::build(1, &[1.0], 8, None, 1.0, 8).unwrap();
    let empty = estimate_capacity(&CapacityProblem::empty(g1).unwrap())
        .unwrap()
        .value;
    ok &= empty == 0.0;

    let central = CapacityProblem::central_cell(g1).unwrap();
    let cells: Vec<_> = central.cells().iter().copied().collect();
    let golden = common::dense_capacity(8, 8, 1.0, &common::lower_bound(8, 8, &cells));
    let est = estimate_capacity(&central).unwrap().value;
    let golden_err = (est - golden).abs() / golden;
    ok &= golden_err <= 0.01 && lebesgue_lower_bound_check(&central, est);
    notes.push(format!("golden {golden:.6} vs {est:.6}"));

    let g2 = Grid::build(2, &[1.0, 1.0], 8, Some(8), 1.0, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut random_cells = |count: usize| -> Vec<(usize, usize)> {
        (0..count)
            .map(|_| (rng.gen_range(0..8), rng.gen_range(0..g2.len())))
            .collect()
    };
    let pairs: Vec<(CapacityProblem, CapacityProblem)> = (0..10)
        .map(|_| {
            let small = CapacityProblem::new(g2, random_cells(2)).unwrap();
            let extra = CapacityProblem::new(g2, random_cells(3)).unwrap();
            let big = small.union(&extra).unwrap();
            (small, big)
        })
        .collect();
    let results: Vec<(f64, f64, bool)> = pairs
        .par_iter()
        .map(|(a, b)| {
            let ea = estimate_capacity(a).unwrap();
            let eb = estimate_capacity(b).unwrap();
            let lower =
                lebesgue_lower_bound_check(a, ea.value) && lebesgue_lower_bound_check(b, eb.value);
            (ea.value, eb.value, lower && ea.converged && eb.converged)
        })
        .collect();
    let monotone = results
        .iter()
        .filter(|(a, b, _)| *a <= b * (1.0 + 1e-4))
        .count();
    let lower_ok = results.iter().all(|r| r.2);
    ok &= monotone == 10 && lower_ok;
    notes.push(format!("monotone {monotone}/10, lower bounds {lower_ok}"));

    let full =
        CapacityProblem::new(g2, (0..8).flat_map(|k| (0..g2.len()).map(move |i| (k, i)))).unwrap();
    let full_est = estimate_capacity(&full).unwrap().value;
    let full_ok = lebesgue_lower_bound_check(&full, full_est);
    ok &= full_ok;

    let sandwiches: Vec<_> = pairs[..5]
        .par_iter()
        .map(|(_, b)| sandwich_report(b).unwrap())
        .collect();
    let (lo, hi) = sandwiches
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), r| {
            (lo.min(r.ratio), hi.max(r.ratio))
        });
    let hat_ok = sandwiches.iter().all(|r| {
        r.reflected_minimizer_feasible
            && r.reflected_minimizer_norm <= 3.0 * r.estimate * (1.0 + 1e-9)
    });
    ok &= lo >= 0.95 && hi <= 3.05 && hat_ok;
    notes.push(format!(
        "full set sqrt(lambda) {:.4} <= {full_est:.4}, reflected/base in [{lo:.3}, {hi:.3}], reflected minimizer <= 3x {hat_ok}",
        full.lebesgue_measure().sqrt()
    ));

    outcome(ok, format!("empty {empty}, {}", notes.join(", ")))
}

struct Reversed;

impl Flux for Reversed {
    fn dim(&self) -> usize {
        1
    }
    fn exponent(&self) -> f64 {
        2.0
    }
    fn eval(&self, _: &Site, lam: f64, xi: [f64; 2]) -> [f64; 2] {
        [-xi[0] + lam, 0.0]
    }
    fn constants(&self, _: &Site, _: f64) -> StructuralConstants {
        StructuralConstants {
            c1: 1.0,
            c2: 1.0,
            c3: 0.0,
            c4: 0.0,
            kappa: 0.0,
            g: 0.0,
            h: 0.0,
        }
    }
}

fn auditor() -> Outcome {
    let samples = 10_000;
    let builtin = FluxModel::p_laplace(1, standard::P, Convection::along_x(standard::C)).unwrap();
    let a = audit_assumptions(&builtin, samples, 1)
        .unwrap()
        .violations
        .len();
    let grid = Grid::build(1, &[1.0], 32, None, 1.0, 1).unwrap();
    let psi = Field::from_fn(&grid, |x| 0.3 * (5.0 * x[0]).sin() - 0.1);
    let shifted = FluxModel::p_laplace(1, standard::P, Convection::none())
        .unwrap()
        .obstacle_shift(&psi)
        .unwrap();
    let b = audit_assumptions(&shifted, samples, 2)
        .unwrap()
        .violations
        .len();
    let c = audit_assumptions(&Reversed, samples, 3)
        .unwrap()
        .violations
        .len();
    outcome(
        a == 0 && b == 0 && c > 0,
        format!("1e4 samples: built-in {a}, obstacle-shifted {b}, adversarial {c} violations"),
    )
}

fn main() {
    let start = Instant::now();
    let mut sweep: Option<Vec<TrajectoryRecord>> = None;
    let mut unexpected = Vec::new();
    let criteria: Vec<(u32, &str)> = vec![
        (1, "comparison principle"),
        (2, "monotonicity in the penalty"),
        (3, "penalty bound, linear penalty"),
        (4, "penalty bound, power penalty"),
        (5, "energy identity"),
        (6, "measure diagnostics"),
        (7, "complementarity"),
        (8, "analytic heat regression"),
        (9, "noise sampler"),
        (10, "capacity lab"),
        (11, "structural-assumption auditor"),
    ];
    for (id, name) in criteria {
        let t0 = Instant::now();
        let out = match id {
            1 => comparison(),
            2 => monotonicity(),
            3 => linear_penalty_bound(),
            4 => power_penalty_bound(),
            5 => energy_identity(),
            6 => measure_diagnostics(sweep.get_or_insert_with(sweep_records)),
            7 => complementarity_check(sweep.get_or_insert_with(sweep_records)),
            8 => heat_regression(),
            9 => noise_sampler(),
            10 => capacity_lab(),
            _ => auditor(),
        };
        let tag = if out.passed { "PASS" } else { "FAIL" };
        let known = !out.passed && KNOWN_FAILURES.contains(&id);
        println!(
            "[{tag}] criterion {id:>2} {name}: {} ({:.1} s){}",
            out.detail,
            t0.elapsed().as_secs_f64(),
            if known { " [known failure]" } else { "" }
        );
        if !out.passed && !known {
            unexpected.push(id);
        }
    }
    println!(
        "acceptance finished in {:.1} s",
        start.elapsed().as_secs_f64()
    );
    if !unexpected.is_empty() {
        println!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
