//! Monte Carlo over independent noise paths.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::NoisePath;
use crate::solver::{solve_trajectory, SolverConfig, TrajectoryRecord};

/// Count, mean and centred second moment; merging is associative.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningStat {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl RunningStat {
    pub fn of(x: f64) -> RunningStat {
        RunningStat {
            count: 1,
            mean: x,
            m2: 0.0,
        }
    }

    pub fn merge(self, other: RunningStat) -> RunningStat {
        if self.count == 0 {
            return other;
        }
        if other.count == 0 {
            return self;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        let w = other.count as f64 / count as f64;
        RunningStat {
            count,
            mean: self.mean + delta * w,
            m2: self.m2 + other.m2 + delta * delta * self.count as f64 * w,
        }
    }

    /// Unbiased sample variance, 0 for fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathFailure {
    pub seed: u64,
    pub message: String,
}

/// Estimates of the four n-uniform bounds plus `‖u-‖_{L²(Q_T)}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    /// `E sup_t ‖u(t)‖²`
    pub k1: RunningStat,
    /// `E ∫ ‖∇u‖_p^p`
    pub k2: RunningStat,
    /// `E ∫ ‖a‖_{p'}^{p'}`
    pub k3: RunningStat,
    /// `E n ‖u-‖²_{L²(Q_T)}` (or the `L^p` analogue for the power penalty).
    pub k4: RunningStat,
    pub neg_l2: RunningStat,
    pub failures: Vec<PathFailure>,
    pub seeds: Vec<u64>,
}

impl EnsembleSummary {
    pub fn from_record(rec: &TrajectoryRecord) -> EnsembleSummary {
        EnsembleSummary {
            k1: RunningStat::of(rec.sup_l2_sq()),
            k2: RunningStat::of(rec.grad_integral()),
            k3: RunningStat::of(rec.flux_integral()),
            k4: RunningStat::of(rec.penalty_integral()),
            neg_l2: RunningStat::of(rec.neg_l2_qt()),
            failures: Vec::new(),
            seeds: vec![rec.seed],
        }
    }

    fn failed(seed: u64, err: &Error) -> EnsembleSummary {
        EnsembleSummary {
            failures: vec![PathFailure {
                seed,
                message: err.to_string(),
            }],
            seeds: vec![seed],
            ..Default::default()
        }
    }

    pub fn merge(mut self, other: EnsembleSummary) -> EnsembleSummary {
        self.k1 = self.k1.merge(other.k1);
        self.k2 = self.k2.merge(other.k2);
        self.k3 = self.k3.merge(other.k3);
        self.k4 = self.k4.merge(other.k4);
        self.neg_l2 = self.neg_l2.merge(other.neg_l2);
        self.failures.extend(other.failures);
        self.seeds.extend(other.seeds);
        self
    }

    pub fn healthy_paths(&self) -> u64 {
        self.k1.count
    }
}

/// Seed of path `index`.
pub fn path_seed(base_seed: u64, index: u64) -> u64 {
    base_seed ^ index
}

/// Runs `num_paths` independent paths in parallel. Failed paths are recorded,
/// not propagated; `seeds` lists every path in index order.
pub fn monte_carlo(
    cfg: &SolverConfig,
    num_paths: usize,
    base_seed: u64,
) -> Result<EnsembleSummary> {
    if num_paths == 0 {
        return Err(Error::invalid("num_paths must be at least 1"));
    }
    cfg.validate()?;
    let nt = cfg.grid.nt();
    let modes = cfg.noise.modes();
    // Folded in path order so the floating-point result does not depend on scheduling.
    let parts: Vec<EnsembleSummary> = (0..num_paths as u64)
        .into_par_iter()
        .map(|i| {
            let seed = path_seed(base_seed, i);
            match solve_trajectory(cfg, &NoisePath::new(seed, nt, modes)) {
                Ok(rec) => EnsembleSummary::from_record(&rec),
                Err(e) => EnsembleSummary::failed(seed, &e),
            }
        })
        .collect();
    Ok(parts
        .into_iter()
        .fold(EnsembleSummary::default(), EnsembleSummary::merge))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Field;
    use crate::scenarios::standard_scenario;
    use proptest::prelude::*;

    fn small(n: f64) -> SolverConfig {
        let cfg = standard_scenario(n);
        let grid = cfg.grid.with_time(0.05, 25).unwrap();
        SolverConfig {
            grid,
            u0: Field::zeros(&grid),
            ..cfg
        }
    }

    #[test]
    fn single_path_equals_record() {
        let cfg = small(10.0);
        let summary = monte_carlo(&cfg, 1, 42).unwrap();
        let rec = solve_trajectory(&cfg, &NoisePath::new(42, 25, cfg.noise.modes())).unwrap();
        assert_eq!(summary.k1.mean, rec.sup_l2_sq());
        assert_eq!(summary.k4.mean, rec.penalty_integral());
        assert_eq!(summary.k2.std_error(), 0.0);
        assert_eq!(summary.seeds, vec![42]);
        let many = monte_carlo(&cfg, 3, 8).unwrap();
        assert_eq!(many.seeds, vec![8, 9, 10]);
    }

    #[test]
    fn zero_amplitude_has_zero_variance() {
        let mut cfg = small(10.0);
        cfg.noise = cfg.noise.with_amp(0.0);
        cfg.u0 = crate::scenarios::InitialProfile::SineBump.field(&cfg.grid);
        let s = monte_carlo(&cfg, 4, 0).unwrap();
        assert_eq!(s.healthy_paths(), 4);
        for k in [s.k1, s.k2, s.k3, s.k4] {
            assert!(k.variance() <= 1e-24 * (1.0 + k.mean * k.mean));
        }
    }

    #[test]
    fn failures_are_collected() {
        let mut cfg = small(10.0);
        cfg.newton_max_iters = 1;
        cfg.newton_tol = 1e-300;
        let s = monte_carlo(&cfg, 3, 5).unwrap();
        assert_eq!(s.failures.len(), 3);
        assert_eq!(s.healthy_paths(), 0);
        assert!(monte_carlo(&cfg, 0, 5).is_err());
    }

    #[test]
    fn seeds_are_distinct() {
        let seeds: std::collections::BTreeSet<u64> = (0..64).map(|i| path_seed(12345, i)).collect();
        assert_eq!(seeds.len(), 64);
    }

    proptest! {
        #[test]
        fn merge_matches_batch(xs in proptest::collection::vec(-1e3f64..1e3, 1..40), cut in 0usize..40) {
            let cut = cut.min(xs.len());
            let fold = |v: &[f64]| v.iter().fold(RunningStat::default(), |a, &x| a.merge(RunningStat::of(x)));
            let whole = fold(&xs);
            let split = fold(&xs[..cut]).merge(fold(&xs[cut..]));
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            prop_assert!((whole.mean - mean).abs() <= 1e-9 * (1.0 + mean.abs()));
            prop_assert!((split.mean - whole.mean).abs() <= 1e-9 * (1.0 + mean.abs()));
            prop_assert!((split.variance() - whole.variance()).abs() <= 1e-8 * (1.0 + whole.variance()));
            if xs.len() > 1 {
                let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
                prop_assert!((whole.variance() - var).abs() <= 1e-8 * (1.0 + var));
            }
        }
    }
}
