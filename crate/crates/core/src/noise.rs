//! Truncated Karhunen–Loève sampling of additive trace-class noise.
//!
//! `ΔW_j(x) = Σ_{k ≤ K} sqrt(λ_k) e_k(x) sqrt(dt) ζ_{j,k}` with `λ_k = amp² k^(-γ)`
//! and `e_k` the L²-normalized Dirichlet sine modes of the box, ranked by
//! Laplacian eigenvalue. The standard normals `ζ_{j,k}` come from a ChaCha
//! stream keyed by `(seed, j)`, so any step can be regenerated on its own.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    modes: usize,
    gamma: f64,
    amp: f64,
}

impl NoiseSpec {
    pub fn new(modes: usize, gamma: f64, amp: f64) -> Result<NoiseSpec> {
        if !(gamma > 1.0) {
            return Err(Error::invalid(format!(
                "trace-class violation: eigenvalue decay gamma must exceed 1, got {gamma}"
            )));
        }
        if !(amp >= 0.0 && amp.is_finite()) {
            return Err(Error::invalid("noise amplitude must be >= 0"));
        }
        Ok(NoiseSpec { modes, gamma, amp })
    }

    /// No noise at all.
    pub fn off() -> NoiseSpec {
        NoiseSpec {
            modes: 0,
            gamma: 2.0,
            amp: 0.0,
        }
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn amp(&self) -> f64 {
        self.amp
    }

    pub fn with_amp(mut self, amp: f64) -> NoiseSpec {
        self.amp = amp;
        self
    }

    pub fn is_off(&self) -> bool {
        self.modes == 0 || self.amp == 0.0
    }

    /// `λ_k` for `k = 1..=K`.
    pub fn eigenvalues(&self) -> Vec<f64> {
        (1..=self.modes)
            .map(|k| self.amp * self.amp * (k as f64).powf(-self.gamma))
            .collect()
    }

    /// Sobolev order `s` such that the covariance is trace class into `H^s`
    /// for every `s` below it: `Σ k^(-γ) k^(2s/d) < ∞ ⇔ s < d (γ - 1) / 2`.
    pub fn smoothing_index(&self, dim: usize) -> f64 {
        dim as f64 * (self.gamma - 1.0) / 2.0
    }

    pub fn validate_regularity(&self, p: f64, dim: usize) -> RegularityReport {
        let d = dim as f64;
        let required = (d / 2.0).max((2.0 + d) / 2.0 - d / p);
        let implied = self.smoothing_index(dim);
        RegularityReport {
            dim,
            p,
            required,
            min_integer_index: required.floor() as usize + 1,
            implied,
            satisfied: implied > required,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegularityReport {
    pub dim: usize,
    pub p: f64,
    /// `max(d/2, (2+d)/2 - d/p)`; the noise range must be smoother than this.
    pub required: f64,
    /// Smallest integer Sobolev order strictly above `required`.
    pub min_integer_index: usize,
    /// Smoothness implied by the eigenvalue decay.
    pub implied: f64,
    pub satisfied: bool,
}

impl RegularityReport {
    pub fn warning(&self) -> Option<String> {
        (!self.satisfied).then(|| {
            format!(
                "noise decay implies Sobolev order < {:.3}, but order > {:.3} is required for d={}, p={}; \
                 truncated noise is smooth, so runs proceed",
                self.implied, self.required, self.dim, self.p
            )
        })
    }
}

/// Standard normal draws for `nt` steps and `K` modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePath {
    seed: u64,
    nt: usize,
    modes: usize,
    draws: Vec<f64>,
}

impl NoisePath {
    pub fn new(seed: u64, nt: usize, modes: usize) -> NoisePath {
        let mut draws = Vec::with_capacity(nt * modes);
        for step in 0..nt {
            draws.extend(step_draws(seed, step, modes));
        }
        NoisePath {
            seed,
            nt,
            modes,
            draws,
        }
    }

    /// Path on a grid `factor` times coarser in time: each coarse draw is the
    /// normalized sum of `factor` consecutive fine draws, so the coarse
    /// increments are exactly sums of fine increments.
    pub fn coarsen(&self, factor: usize) -> Result<NoisePath> {
        if factor == 0 || self.nt % factor != 0 {
            return Err(Error::invalid(format!(
                "cannot coarsen {} steps by {factor}",
                self.nt
            )));
        }
        let nt = self.nt / factor;
        let scale = 1.0 / (factor as f64).sqrt();
        let mut draws = vec![0.0; nt * self.modes];
        for j in 0..nt {
            for f in 0..factor {
                let src = self.step(j * factor + f);
                for (d, s) in draws[j * self.modes..(j + 1) * self.modes]
                    .iter_mut()
                    .zip(src)
                {
                    *d += s;
                }
            }
        }
        draws.iter_mut().for_each(|d| *d *= scale);
        Ok(NoisePath {
            seed: self.seed,
            nt,
            modes: self.modes,
            draws,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn step(&self, j: usize) -> &[f64] {
        &self.draws[j * self.modes..(j + 1) * self.modes]
    }
}

fn step_draws(seed: u64, step: usize, modes: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64);
    (0..modes)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect()
}

/// Mode data of a [`NoiseSpec`] evaluated on one grid.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    spec: NoiseSpec,
    grid: Grid,
    sqrt_lambda: Vec<f64>,
    /// `modes[k][node] = e_k(x_node)`.
    basis: Vec<Vec<f64>>,
    wave_numbers: Vec<[usize; 2]>,
}

impl NoiseSampler {
    pub fn new(spec: &NoiseSpec, grid: &Grid) -> NoiseSampler {
        let wave_numbers = ranked_modes(grid, spec.modes);
        let ext = grid.extent();
        let basis = wave_numbers
            .iter()
            .map(|k| {
                Field::from_fn(grid, |x| {
                    (0..grid.dim())
                        .map(|c| {
                            let l = ext[c];
                            (2.0 / l).sqrt() * (k[c] as f64 * std::f64::consts::PI * x[c] / l).sin()
                        })
                        .product()
                })
                .into_values()
            })
            .collect();
        NoiseSampler {
            spec: *spec,
            grid: *grid,
            sqrt_lambda: spec.eigenvalues().iter().map(|l| l.sqrt()).collect(),
            basis,
            wave_numbers,
        }
    }

    pub fn spec(&self) -> &NoiseSpec {
        &self.spec
    }

    pub fn wave_numbers(&self) -> &[[usize; 2]] {
        &self.wave_numbers
    }

    /// Nodal values of mode `k` (0-based).
    pub fn mode(&self, k: usize) -> &[f64] {
        &self.basis[k]
    }

    /// Increment `ΔW_j` for step `step` of `path`.
    pub fn increment(&self, path: &NoisePath, step: usize, dt: f64) -> Result<Field> {
        if step >= path.nt() {
            return Err(Error::OutOfRange {
                index: step,
                len: path.nt(),
            });
        }
        if path.modes() != self.spec.modes {
            return Err(Error::invalid(format!(
                "path carries {} modes, spec needs {}",
                path.modes(),
                self.spec.modes
            )));
        }
        if !(dt >= 0.0) {
            return Err(Error::invalid("dt must be >= 0"));
        }
        let mut out = vec![0.0; self.grid.len()];
        let sdt = dt.sqrt();
        for ((z, sl), e) in path
            .step(step)
            .iter()
            .zip(&self.sqrt_lambda)
            .zip(&self.basis)
        {
            let c = sl * sdt * z;
            if c == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(e) {
                *o += c * v;
            }
        }
        Field::from_values(&self.grid, out)
    }

    /// `‖Φ‖²_HS = Σ_k λ_k ‖e_k‖²` with the nodal quadrature.
    pub fn hs_norm_sq(&self) -> f64 {
        let vol = self.grid.cell_volume();
        self.sqrt_lambda
            .iter()
            .zip(&self.basis)
            .map(|(sl, e)| sl * sl * e.iter().map(|v| v * v).sum::<f64>() * vol)
            .sum()
    }

    /// Per-step variance `Σ_k λ_k e_k(x)²` of the noise at `node` (per unit time).
    pub fn pointwise_variance(&self, node: usize) -> f64 {
        self.sqrt_lambda
            .iter()
            .zip(&self.basis)
            .map(|(sl, e)| sl * sl * e[node] * e[node])
            .sum()
    }
}

/// First `count` sine modes ordered by Laplacian eigenvalue.
fn ranked_modes(grid: &Grid, count: usize) -> Vec<[usize; 2]> {
    if grid.dim() == 1 {
        return (1..=count).map(|k| [k, 0]).collect();
    }
    let ext = grid.extent();
    let side = (count as f64).sqrt().ceil() as usize + count;
    let mut all: Vec<[usize; 2]> = (1..=side)
        .flat_map(|a| (1..=side).map(move |b| [a, b]))
        .collect();
    let eig = |k: &[usize; 2]| (k[0] as f64 / ext[0]).powi(2) + (k[1] as f64 / ext[1]).powi(2);
    all.sort_by(|a, b| eig(a).total_cmp(&eig(b)).then(a.cmp(b)));
    all.truncate(count);
    all
}
