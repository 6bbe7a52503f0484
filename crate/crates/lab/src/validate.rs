//! Property suite over the configured scenario. Each check reports a margin:
//! the distance to its threshold, negative on failure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use reflect_core::capacity::{
    estimate_capacity, lebesgue_lower_bound_check, sandwich_report, CapacityProblem,
};
use reflect_core::diagnostics::{
    complementarity, eta_density, support_overlap, weighted_mass, MeasureGrid, WeightField,
};
use reflect_core::ensemble::monte_carlo;
use reflect_core::grid::{truncate, Field, Grid, Norm};
use reflect_core::models::{
    audit_assumptions, BaseReaction, Convection, FluxModel, SmoothPosApprox,
};
use reflect_core::noise::{NoisePath, NoiseSampler};
use reflect_core::solver::{energy_residual, solve_trajectory, SolverConfig, TrajectoryRecord};

use crate::config::ExperimentConfig;

pub const REPORT_COLUMNS: [&str; 5] = ["module", "check", "passed", "margin", "detail"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub module: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub margin: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(REPORT_COLUMNS).expect("in-memory write");
        for c in &self.checks {
            w.write_record([
                c.module.to_string(),
                c.name.to_string(),
                c.passed.to_string(),
                format!("{:.6e}", c.margin),
                c.detail.clone(),
            ])
            .expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}

/// `value <= bound`, margin `bound - value`.
fn at_most(
    module: &'static str,
    name: &'static str,
    value: f64,
    bound: f64,
    detail: String,
) -> Check {
    Check {
        module,
        name,
        passed: value <= bound,
        margin: bound - value,
        detail,
    }
}

fn error_check(module: &'static str, name: &'static str, err: impl std::fmt::Display) -> Check {
    Check {
        module,
        name,
        passed: false,
        margin: f64::NEG_INFINITY,
        detail: format!("error: {err}"),
    }
}

fn skipped(module: &'static str, name: &'static str, why: &str) -> Check {
    Check {
        module,
        name,
        passed: true,
        margin: 0.0,
        detail: format!("skipped: {why}"),
    }
}

type Res<T> = reflect_core::Result<T>;

fn random_field(grid: &Grid, rng: &mut ChaCha8Rng) -> Field {
    Field::from_values(
        grid,
        (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .expect("matching length")
}

fn grid_checks(cfg: &ExperimentConfig) -> Res<Vec<Check>> {
    const M: &str = "grid_fields";
    let grid = cfg.grid()?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut dual = 0.0f64;
    let mut homog = 0.0f64;
    let mut recon = 0.0f64;
    let mut trunc = f64::NEG_INFINITY;
    for _ in 0..20 {
        let f = random_field(&grid, &mut rng);
        let g = Field::vector_from_values(
            &grid,
            (0..grid.dim() * grid.len())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
        )?;
        let lhs = f.gradient()?.inner(&g)?;
        let rhs = -f.inner(&g.divergence()?)?;
        dual = dual.max((lhs - rhs).abs() / (1.0 + lhs.abs()));

        let c: f64 = rng.gen_range(-5.0..5.0);
        for which in [Norm::L1, Norm::L2, Norm::Linf, Norm::Lp(cfg.model.p)] {
            let a = f.scaled(c).norm(which)?;
            let b = c.abs() * f.norm(which)?;
            homog = homog.max((a - b).abs() / (1.0 + b));
        }

        let (pos, neg) = f.pos_neg_parts()?;
        for ((p, n), v) in pos.values().iter().zip(neg.values()).zip(f.values()) {
            recon = recon.max((p - n - v).abs()).max((p * n).abs());
        }

        let k: f64 = rng.gen_range(0.1..2.0);
        let (r, s): (f64, f64) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        trunc = trunc.max((truncate(r, k) - truncate(s, k)).abs() - (r - s).abs());
    }
    Ok(vec![
        at_most(
            M,
            "gradient-divergence duality",
            dual,
            1e-12,
            format!("max relative defect {dual:.3e}"),
        ),
        at_most(
            M,
            "norm homogeneity",
            homog,
            1e-12,
            format!("max relative defect {homog:.3e}"),
        ),
        at_most(
            M,
            "positive/negative parts",
            recon,
            0.0,
            format!("max defect {recon:.3e}"),
        ),
        at_most(
            M,
            "truncation nonexpansive",
            trunc,
            0.0,
            format!("max excess {trunc:.3e}"),
        ),
    ])
}

fn model_checks(cfg: &ExperimentConfig) -> Res<Vec<Check>> {
    const M: &str = "models";
    let grid = cfg.grid()?;
    let flux = cfg.solver_config(0.0)?.flux;
    let rep = audit_assumptions(&flux, 10_000, 5)?;
    let mut out = vec![at_most(
        M,
        "structural assumptions (configured flux)",
        rep.violations.len() as f64,
        0.0,
        format!("{} violations in 1e4 samples", rep.violations.len()),
    )];

    let plain = FluxModel::p_laplace(grid.dim(), cfg.model.p, Convection::none())?;
    let psi = Field::from_fn(&grid, |x| 0.2 * (3.0 * x[0]).sin() - 0.05);
    let shifted = audit_assumptions(&plain.obstacle_shift(&psi)?, 10_000, 6)?;
    out.push(at_most(
        M,
        "structural assumptions (obstacle-shifted)",
        shifted.violations.len() as f64,
        0.0,
        format!("{} violations in 1e4 samples", shifted.violations.len()),
    ));

    let mut worst = f64::NEG_INFINITY;
    for delta in [1.0, 0.1, 0.01] {
        let s = SmoothPosApprox::new(delta)?;
        for k in -2000..=2000 {
            let r = k as f64 * 1e-3;
            let (v, d1, d2) = (s.value(r), s.derivative(r), s.second_derivative(r));
            let excess = [
                -v,
                v - r.max(0.0),
                -d1,
                d1 - 1.0,
                -d2,
                d2 - 1.5 / delta,
                (v - r.max(0.0)).abs() - delta / 2.0,
            ]
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
            worst = worst.max(excess);
        }
    }
    out.push(at_most(
        M,
        "smooth positive part bounds",
        worst,
        1e-12,
        format!("max excess {worst:.3e}"),
    ));

    let base = cfg.base_reaction();
    let zero = cfg.solver_config(0.0)?.reaction;
    let loaded = cfg.solver_config(cfg.model.strength.max(1.0))?.reaction;
    let mut bad = 0usize;
    for k in -100..=100 {
        let v = k as f64 * 0.05;
        if zero.eval(v) != base.eval(v) {
            bad += 1;
        }
        if v < 0.0 && loaded.penalty_term(v) <= 0.0 {
            bad += 1;
        }
    }
    out.push(at_most(
        M,
        "reaction and penalty signs",
        bad as f64,
        0.0,
        format!("{bad} bad samples"),
    ));
    Ok(out)
}

fn noise_checks(cfg: &ExperimentConfig) -> Res<Vec<Check>> {
    const M: &str = "qwiener_noise";
    let grid = cfg.grid()?;
    let spec = cfg.noise_spec()?;
    let sampler = NoiseSampler::new(&spec, &grid);
    let steps = 20.min(grid.nt().max(1));
    let dt = grid.dt();
    let path = NoisePath::new(cfg.noise.seed, steps, spec.modes());
    let replay = NoisePath::new(cfg.noise.seed, steps, spec.modes());
    let doubled = NoiseSampler::new(&spec.with_amp(2.0 * spec.amp()), &grid);
    let mut replay_bad = 0usize;
    let mut linear = 0.0f64;
    for j in 0..steps {
        let a = sampler.increment(&path, j, dt)?;
        let b = sampler.increment(&replay, j, dt)?;
        replay_bad += a
            .values()
            .iter()
            .zip(b.values())
            .filter(|(x, y)| x.to_bits() != y.to_bits())
            .count();
        let c = doubled.increment(&path, j, dt)?;
        for (x, y) in a.values().iter().zip(c.values()) {
            linear = linear.max((2.0 * x - y).abs() / (1.0 + y.abs()));
        }
    }
    let hs = sampler.hs_norm_sq();
    let hs_ratio = if hs > 0.0 {
        doubled.hs_norm_sq() / hs
    } else {
        4.0
    };

    let node = grid.len() / 2;
    let target = sampler.pointwise_variance(node) * steps as f64 * dt;
    let paths = 10_000u64;
    let sums: Vec<f64> = (0..paths)
        .into_par_iter()
        .map(|s| {
            let p = NoisePath::new(1_000_000 + s, steps, spec.modes());
            (0..steps)
                .map(|j| sampler.increment(&p, j, dt).map(|f| f.values()[node]))
                .sum::<Res<f64>>()
        })
        .collect::<Res<Vec<f64>>>()?;
    let n = paths as f64;
    let m2 = sums.iter().map(|x| x * x).sum::<f64>() / n;
    let m4 = sums.iter().map(|x| x.powi(4)).sum::<f64>() / n;
    let se = ((m4 - m2 * m2) / n).sqrt().max(f64::MIN_POSITIVE);
    let z = if target == 0.0 && m2 == 0.0 {
        0.0
    } else {
        (m2 - target).abs() / se
    };

    let mut out = vec![
        at_most(
            M,
            "replay determinism",
            replay_bad as f64,
            0.0,
            format!("{replay_bad} differing values"),
        ),
        at_most(
            M,
            "linearity in amplitude",
            linear,
            1e-14,
            format!("max relative defect {linear:.3e}"),
        ),
        at_most(
            M,
            "HS norm scaling",
            (hs_ratio - 4.0).abs(),
            1e-12,
            format!("ratio {hs_ratio:.15}"),
        ),
        at_most(
            M,
            "central-limit variance",
            z,
            3.0,
            format!("1e4 paths, |z| = {z:.3}"),
        ),
    ];
    if let Some(w) = spec.validate_regularity(cfg.model.p, grid.dim()).warning() {
        out.push(Check {
            module: M,
            name: "noise regularity",
            passed: true,
            margin: 0.0,
            detail: format!("warning: {w}"),
        });
    }
    Ok(out)
}

fn run(cfg: &SolverConfig, seed: u64) -> Res<TrajectoryRecord> {
    solve_trajectory(cfg, &NoisePath::new(seed, cfg.grid.nt(), cfg.noise.modes()))
}

fn max_excess(a: &TrajectoryRecord, b: &TrajectoryRecord) -> f64 {
    a.u.levels()
        .iter()
        .zip(b.u.levels())
        .flat_map(|(x, y)| x.values().iter().zip(y.values()).map(|(p, q)| p - q))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn sorted_sweep(cfg: &ExperimentConfig) -> Vec<f64> {
    let mut n = cfg.sweep.n.clone();
    n.sort_by(f64::total_cmp);
    n.dedup();
    n
}

fn solver_checks(cfg: &ExperimentConfig, sweep: &[TrajectoryRecord]) -> Res<Vec<Check>> {
    const M: &str = "penalized_solver";
    let base = cfg.solver_config(cfg.model.strength)?;
    let tol = base.newton_tol;
    let seed = cfg.noise.seed;
    let mut out = Vec::new();

    let mut quiet = base.clone();
    quiet.noise = quiet.noise.with_amp(0.0);
    let n_max = sorted_sweep(cfg).last().copied().unwrap_or(0.0);
    let mins = [0.0, n_max]
        .par_iter()
        .map(|&n| {
            run(&quiet.with_strength(n), seed).map(|r| {
                r.u.levels()
                    .iter()
                    .map(|f| f.min())
                    .fold(f64::INFINITY, f64::min)
            })
        })
        .collect::<Res<Vec<f64>>>()?;
    let low = mins.iter().cloned().fold(f64::INFINITY, f64::min);
    out.push(at_most(
        M,
        "noiseless nonnegativity",
        -low,
        tol,
        format!("min u = {low:.3e}"),
    ));

    let a = run(&base, seed)?;
    let b = run(&base, seed)?;
    out.push(Check {
        module: M,
        name: "replay determinism",
        passed: a.same_content(&b),
        margin: 0.0,
        detail: "two runs compared bitwise".into(),
    });

    let floor = a
        .ledger
        .entries
        .iter()
        .map(|e| e.coercivity_floor - e.dissipation)
        .fold(f64::NEG_INFINITY, f64::max);
    out.push(at_most(
        M,
        "dissipation above coercivity floor",
        floor,
        1e-12,
        format!("max excess {floor:.3e}"),
    ));

    // Lower initial datum and, for linear reactions, a larger absorption.
    let mut lower = base.clone();
    lower.u0 = base
        .u0
        .add_scaled(-1.0, &Field::constant(&base.grid, 0.05))?;
    if let BaseReaction::Linear { slope, pos_slope } = base.reaction.base {
        lower.reaction.base = BaseReaction::Linear {
            slope,
            pos_slope: pos_slope + 0.5,
        };
    }
    let worst = (0..3u64)
        .into_par_iter()
        .map(|s| Ok(max_excess(&run(&lower, seed + s)?, &run(&base, seed + s)?)))
        .collect::<Res<Vec<f64>>>()?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    out.push(at_most(
        M,
        "comparison principle",
        worst,
        10.0 * tol,
        format!("3 seeds, max(u - v) = {worst:.3e}"),
    ));

    let mono = sweep
        .windows(2)
        .map(|w| max_excess(&w[0], &w[1]))
        .fold(f64::NEG_INFINITY, f64::max);
    out.push(at_most(
        M,
        "monotonicity in n",
        mono,
        10.0 * tol,
        format!("max(u_n - u_m) = {mono:.3e}"),
    ));

    let fine = NoisePath::new(seed, 8 * base.grid.nt().max(1), base.noise.modes());
    let rel = [8, 4, 2, 1]
        .par_iter()
        .map(|&f| {
            let path = fine.coarsen(f)?;
            let c = SolverConfig {
                grid: base.grid.with_time(base.grid.t_final(), path.nt())?,
                ..base.clone()
            };
            let rec = solve_trajectory(&c, &path)?;
            let diss = rec.ledger.dissipation_total();
            Ok(if diss > 0.0 {
                energy_residual(&rec) / diss
            } else {
                energy_residual(&rec)
            })
        })
        .collect::<Res<Vec<f64>>>()?;
    // First order: each halving of dt should roughly halve the relative residual.
    let worst = rel
        .windows(2)
        .map(|w| w[0] / w[1])
        .fold(f64::INFINITY, f64::min);
    out.push(Check {
        module: M,
        name: "energy ledger convergence",
        passed: worst >= 1.6,
        margin: worst - 1.6,
        detail: format!(
            "residual/dissipation {}",
            rel.iter()
                .map(|r| format!("{r:.3e}"))
                .collect::<Vec<_>>()
                .join(" ")
        ),
    });

    let ns = sorted_sweep(cfg);
    let tail: Vec<f64> = ns.iter().copied().filter(|n| *n >= 100.0).collect();
    if tail.len() < 2 {
        out.push(skipped(
            M,
            "penalty bound",
            "sweep has fewer than two n >= 100",
        ));
    } else {
        // Resolve the penalty time scale 1/n of the largest n.
        let nt = base
            .grid
            .nt()
            .max((base.grid.t_final() * n_max).ceil() as usize);
        let fine_cfg = SolverConfig {
            grid: base.grid.with_time(base.grid.t_final(), nt)?,
            ..base.clone()
        };
        let k4 = tail
            .par_iter()
            .map(|&n| {
                monte_carlo(
                    &fine_cfg.with_strength(n),
                    cfg.ensemble.num_paths,
                    cfg.ensemble.base_seed,
                )
                .map(|s| s.k4.mean)
            })
            .collect::<Res<Vec<f64>>>()?;
        let hi = k4.iter().cloned().fold(0.0, f64::max);
        let lo = k4.iter().cloned().fold(f64::INFINITY, f64::min);
        let ratio = if lo > 0.0 {
            hi / lo
        } else if hi == 0.0 {
            1.0
        } else {
            f64::INFINITY
        };
        out.push(at_most(
            M,
            "penalty bound",
            ratio,
            10.0,
            format!(
                "nt {nt}, {} paths, tail max/min {ratio:.3}",
                cfg.ensemble.num_paths
            ),
        ));
    }
    Ok(out)
}

type TestFn = fn(f64, &[f64]) -> f64;

const SMOOTH_TESTS: [TestFn; 5] = [
    |_, _| 1.0,
    |_, x| (std::f64::consts::PI * x[0]).sin(),
    |t, _| t,
    |t, x| (t * x[0]).cos(),
    |t, x| (-(x[0] - 0.5).powi(2) - t).exp(),
];

fn diagnostics_checks(cfg: &ExperimentConfig, sweep: &[TrajectoryRecord]) -> Res<Vec<Check>> {
    const M: &str = "reflection_diagnostics";
    let grid = *sweep[0].grid();
    let phi = WeightField::phi(&grid);
    let measures: Vec<MeasureGrid> = sweep.iter().map(eta_density).collect();
    let negative = measures
        .iter()
        .flat_map(|m| (1..=m.levels()).flat_map(move |j| m.level(j).iter().copied()))
        .filter(|d| *d < 0.0)
        .count();
    let mut out = vec![at_most(
        M,
        "nonnegative densities",
        negative as f64,
        0.0,
        format!("{negative} negative"),
    )];

    let mut masses = measures
        .iter()
        .map(|m| weighted_mass(m, &phi))
        .collect::<Res<Vec<f64>>>()?;
    let max = masses.iter().cloned().fold(0.0, f64::max);
    masses.sort_by(f64::total_cmp);
    let median = masses[masses.len() / 2];
    if median > 0.0 {
        out.push(at_most(
            M,
            "bounded phi-masses",
            max / median,
            10.0,
            format!("max/median {:.3}", max / median),
        ));
    } else {
        out.push(skipped(M, "bounded phi-masses", "median mass is zero"));
    }

    if measures.len() >= 2 {
        let (a, b) = (&measures[measures.len() - 2], &measures[measures.len() - 1]);
        let mut pairs = vec![(weighted_mass(a, &phi)?, weighted_mass(b, &phi)?)];
        pairs.extend(
            SMOOTH_TESTS
                .iter()
                .map(|f| (a.pair_with_fn(f), b.pair_with_fn(f))),
        );
        let worst = pairs
            .iter()
            .map(|(x, y)| (x - y).abs() / (0.2 * y.abs() + 1e-8))
            .fold(0.0, f64::max);
        out.push(at_most(
            M,
            "mass stabilization",
            worst,
            1.0,
            format!(
                "n = {:e} vs {:e}, worst scaled change {worst:.3}",
                a.strength(),
                b.strength()
            ),
        ));

        let tol = cfg.solver.newton_tol;
        let mut overlap = f64::NEG_INFINITY;
        for i in 0..sweep.len() {
            for j in i + 1..sweep.len() {
                let sup = sweep[i]
                    .u
                    .levels()
                    .iter()
                    .map(|f| f.norm(Norm::Linf))
                    .collect::<Res<Vec<f64>>>()?
                    .into_iter()
                    .fold(0.0, f64::max);
                overlap = overlap.max(support_overlap(&sweep[i], &sweep[j])? - 10.0 * tol * sup);
            }
        }
        out.push(at_most(
            M,
            "disjoint supports",
            overlap,
            0.0,
            format!("max excess {overlap:.3e}"),
        ));

        let k = cfg.sweep.truncation;
        let last = measures.last().expect("two measures");
        let comp = complementarity(&sweep[0], last, k)?;
        let bound = 1e-3 * last.mass() * k;
        out.push(at_most(
            M,
            "complementarity",
            comp,
            bound,
            format!("pairing {comp:.3e} vs bound {bound:.3e}"),
        ));
    } else {
        out.push(skipped(M, "mass stabilization", "single-n sweep"));
    }

    let m = &measures[measures.len() - 1];
    let f: TestFn = |t, x| t + x[0];
    let g: TestFn = |t, x| (t * x[0]).sin();
    let lhs = m.pair_with_fn(|t, x| 2.0 * f(t, x) - 3.0 * g(t, x));
    let rhs = 2.0 * m.pair_with_fn(f) - 3.0 * m.pair_with_fn(g);
    let doubled = MeasureGrid::from_levels(
        &sweep[sweep.len() - 1].u,
        2.0 * m.strength(),
        sweep[0].penalty,
    );
    let mono = m.pair_with_fn(f) - doubled.pair_with_fn(f);
    let defect = (lhs - rhs).abs() / (1.0 + rhs.abs());
    out.push(at_most(
        M,
        "pairing linear and monotone",
        defect.max(mono),
        1e-12,
        format!("linearity defect {defect:.3e}, monotonicity excess {mono:.3e}"),
    ));
    Ok(out)
}

fn capacity_checks(cfg: &ExperimentConfig) -> Res<Vec<Check>> {
    const M: &str = "capacity_lab";
    let prob = cfg.capacity_problem()?;
    let grid = *prob.grid();
    let mut out = Vec::new();
    let empty = estimate_capacity(&CapacityProblem::empty(grid)?)?.value;
    out.push(at_most(
        M,
        "empty set",
        empty.abs(),
        0.0,
        format!("estimate {empty}"),
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut cells = |count: usize| -> Vec<(usize, usize)> {
        (0..count)
            .map(|_| (rng.gen_range(0..grid.nt()), rng.gen_range(0..grid.len())))
            .collect()
    };
    let sets: Vec<(CapacityProblem, CapacityProblem)> = (0..3)
        .map(|_| {
            Ok((
                CapacityProblem::new(grid, cells(2))?,
                CapacityProblem::new(grid, cells(2))?,
            ))
        })
        .collect::<Res<_>>()?;
    let est = |p: &CapacityProblem| estimate_capacity(p).map(|e| e.value);
    let rows = sets
        .par_iter()
        .map(|(a, b)| {
            let u = a.union(b)?;
            Ok((est(a)?, est(b)?, est(&u)?, [a.clone(), b.clone(), u]))
        })
        .collect::<Res<Vec<_>>>()?;
    let tol = |v: f64| 1e-4 * v.max(1e-12);
    let mono = rows
        .iter()
        .map(|(a, b, u, _)| a.max(*b) - u - tol(*u))
        .fold(f64::NEG_INFINITY, f64::max);
    out.push(at_most(
        M,
        "monotone under inclusion",
        mono,
        0.0,
        format!("max excess {mono:.3e}"),
    ));
    let sub = rows
        .iter()
        .map(|(a, b, u, _)| u - a - b - tol(a + b))
        .fold(f64::NEG_INFINITY, f64::max);
    out.push(at_most(
        M,
        "subadditivity",
        sub,
        0.0,
        format!("max excess {sub:.3e}"),
    ));
    let lebesgue_bad = rows
        .iter()
        .flat_map(|(a, b, u, p)| [(&p[0], *a), (&p[1], *b), (&p[2], *u)])
        .filter(|(p, v)| !lebesgue_lower_bound_check(p, *v))
        .count();
    out.push(at_most(
        M,
        "Lebesgue lower bound",
        lebesgue_bad as f64,
        0.0,
        format!("{lebesgue_bad} sets below"),
    ));

    let r = sandwich_report(&prob)?;
    let sandwich = (0.95 - r.ratio).max(r.ratio - 3.05);
    out.push(at_most(
        M,
        "reflection sandwich",
        sandwich,
        0.0,
        format!("reflected/base {:.4}", r.ratio),
    ));
    // Even reflection triples the time span, so the norm scales by sqrt(3).
    let defect =
        (r.reflected_minimizer_norm - 3f64.sqrt() * r.estimate).abs() / r.estimate.max(1e-300);
    out.push(Check {
        module: M,
        name: "reflected minimizer",
        passed: r.reflected_minimizer_feasible && defect <= 1e-9,
        margin: 1e-9 - defect,
        detail: format!(
            "feasible {}, norm {:.6} vs sqrt(3) x {:.6}",
            r.reflected_minimizer_feasible, r.reflected_minimizer_norm, r.estimate
        ),
    });

    let (k, i) = *prob.cells().iter().next().unwrap_or(&(0, 0));
    let k = k.min(grid.nt().saturating_sub(2));
    if grid.nt() >= 2 {
        let one = est(&CapacityProblem::new(grid, [(k, i)])?)?;
        let two = est(&CapacityProblem::new(grid, [(k, i), (k + 1, i)])?)?;
        out.push(at_most(
            M,
            "time doubling",
            one - two - tol(two),
            0.0,
            format!("{one:.6} -> {two:.6}"),
        ));
    }
    Ok(out)
}

/// Sweep runs shared by the solver and diagnostics checks, ordered by `n`.
fn sweep_runs(cfg: &ExperimentConfig) -> Res<Vec<TrajectoryRecord>> {
    let base = cfg.solver_config(cfg.model.strength)?;
    sorted_sweep(cfg)
        .par_iter()
        .map(|&n| run(&base.with_strength(n), cfg.noise.seed))
        .collect()
}

pub fn validate(cfg: &ExperimentConfig) -> ValidationReport {
    let mut checks = Vec::new();
    fn extend(checks: &mut Vec<Check>, module: &'static str, r: Res<Vec<Check>>) {
        match r {
            Ok(c) => checks.extend(c),
            Err(e) => checks.push(error_check(module, "module checks", e)),
        }
    }
    extend(&mut checks, "grid_fields", grid_checks(cfg));
    extend(&mut checks, "models", model_checks(cfg));
    extend(&mut checks, "qwiener_noise", noise_checks(cfg));
    match sweep_runs(cfg) {
        Ok(sweep) => {
            extend(&mut checks, "penalized_solver", solver_checks(cfg, &sweep));
            extend(
                &mut checks,
                "reflection_diagnostics",
                diagnostics_checks(cfg, &sweep),
            );
        }
        Err(e) => {
            checks.push(error_check("penalized_solver", "sweep runs", e));
        }
    }
    extend(&mut checks, "capacity_lab", capacity_checks(cfg));
    ValidationReport { checks }
}
