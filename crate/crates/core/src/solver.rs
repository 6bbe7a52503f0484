//! Semi-implicit Euler–Maruyama for the penalized equation.
//!
//! One step solves, for `u = u_{j+1}`,
//!
//! ```text
//! u - dt div[a_d(x, ∇u) + F(u_j)] + dt f(u_j) - dt n pen(u-) = u_j + ΔW_j
//! ```
//!
//! with the gradient argument of the diffusion and the penalty implicit, and
//! the convection, reaction and noise explicit. Convection uses a Rusanov
//! edge flux, which is monotone under `dt Σ_c L_c / h_c <= 1`.
//!
//! The implicit problem is the optimality condition of a strictly convex
//! functional, so it is solved by damped (semismooth) Newton with Armijo
//! backtracking on that functional. The penalty's generalized derivative is
//! taken on the current negativity set, and updates are made in the variable
//! `z = u - dt n pen(u-)`, which is then mapped back node by node. Each
//! iteration tries three directions (full Newton, frozen flux coefficient
//! (Kačanov), and frozen coefficient with a secant penalty slope) and keeps
//! the one with the smallest residual after the line search. The frozen
//! directions majorize the Hessian near vanishing gradients when `p < 2`.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid, SpaceTimeField};
use crate::linalg::SparseSpd;
use crate::models::{Flux, FluxModel, PenaltyKind, ReactionModel, Site};
use crate::noise::{NoisePath, NoiseSampler, NoiseSpec};
use crate::stencil::Stencil;

pub const DEFAULT_NEWTON_TOL: f64 = 1e-10;
pub const DEFAULT_NEWTON_MAX_ITERS: usize = 200;

/// Everything that determines a trajectory apart from the noise path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub grid: Grid,
    pub flux: FluxModel,
    pub reaction: ReactionModel,
    pub noise: NoiseSpec,
    pub u0: Field,
    pub newton_tol: f64,
    pub newton_max_iters: usize,
}

impl SolverConfig {
    pub fn new(
        grid: Grid,
        flux: FluxModel,
        reaction: ReactionModel,
        noise: NoiseSpec,
        u0: Field,
    ) -> Result<SolverConfig> {
        let cfg = SolverConfig {
            grid,
            flux,
            reaction,
            noise,
            u0,
            newton_tol: DEFAULT_NEWTON_TOL,
            newton_max_iters: DEFAULT_NEWTON_MAX_ITERS,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.check_same_space(self.u0.grid())?;
        if self.flux.dim() != self.grid.dim() {
            return Err(Error::GridMismatch(
                "flux dimension differs from grid".into(),
            ));
        }
        if let Some(psi) = self.flux.obstacle() {
            self.grid.check_same_space(psi.grid())?;
        }
        if self.u0.min() < 0.0 {
            return Err(Error::invalid("initial value must be non-negative"));
        }
        self.u0.check_finite()?;
        if !(self.newton_tol > 0.0) {
            return Err(Error::invalid("newton_tol must be positive"));
        }
        if self.newton_max_iters == 0 {
            return Err(Error::invalid("newton_max_iters must be positive"));
        }
        Ok(())
    }

    pub fn with_strength(&self, n: f64) -> SolverConfig {
        SolverConfig {
            reaction: self.reaction.with_strength(n),
            ..self.clone()
        }
    }

    /// `dt Σ_c L_c / h_c`; explicit convection is order preserving when this is at most 1.
    pub fn convection_cfl(&self) -> f64 {
        let conv = self.flux.convection();
        (0..self.grid.dim())
            .map(|c| conv.component_lipschitz(c) / self.grid.spacing()[c])
            .sum::<f64>()
            * self.grid.dt()
    }

    /// Stable hash of the serialized configuration.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }
}

#[derive(Debug, Clone)]
struct LocalElement {
    nodes: Vec<usize>,
    /// `∂ξ_c / ∂u_node` per local node.
    grads: Vec<[f64; 2]>,
    /// Value-array positions, row-major over local node pairs.
    positions: Vec<usize>,
}

/// Reusable single-step solver for one configuration.
#[derive(Debug, Clone)]
pub struct Stepper {
    cfg: SolverConfig,
    stencil: Stencil,
    sites: Vec<Site>,
    local: Vec<LocalElement>,
    system: SparseSpd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub u: Field,
    pub iterations: usize,
    pub residual: f64,
}

impl Stepper {
    pub fn new(cfg: &SolverConfig) -> Result<Stepper> {
        cfg.validate()?;
        let grid = cfg.grid;
        let stencil = Stencil::new(&grid);
        let spacing = grid.spacing();
        let sites = (0..stencil.len())
            .map(|e| cfg.flux.site_at_element(&stencil, e))
            .collect();
        let mut local: Vec<LocalElement> = stencil
            .elements()
            .iter()
            .map(|el| {
                let mut nodes: Vec<usize> = Vec::new();
                let mut grads: Vec<[f64; 2]> = Vec::new();
                for c in 0..grid.dim() {
                    let edge = el.edges[c];
                    for (node, sign) in [(edge.head, 1.0), (edge.tail, -1.0)] {
                        let Some(node) = node else { continue };
                        let k = match nodes.iter().position(|&m| m == node) {
                            Some(k) => k,
                            None => {
                                nodes.push(node);
                                grads.push([0.0; 2]);
                                nodes.len() - 1
                            }
                        };
                        grads[k][c] += sign / spacing[c];
                    }
                }
                LocalElement {
                    nodes,
                    grads,
                    positions: Vec::new(),
                }
            })
            .collect();
        let pairs = local.iter().flat_map(|l| {
            l.nodes
                .iter()
                .flat_map(move |&a| l.nodes.iter().map(move |&b| (a, b)))
        });
        let system = SparseSpd::from_entries(grid.len(), pairs.collect::<Vec<_>>());
        for l in local.iter_mut() {
            l.positions = l
                .nodes
                .iter()
                .flat_map(|&a| l.nodes.iter().map(move |&b| (a, b)))
                .map(|(a, b)| system.index(a, b))
                .collect();
        }
        Ok(Stepper {
            cfg: cfg.clone(),
            stencil,
            sites,
            local,
            system,
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn stencil(&self) -> &Stencil {
        &self.stencil
    }

    fn diffusion_fluxes(&self, u: &[f64]) -> Vec<[f64; 2]> {
        (0..self.stencil.len())
            .map(|e| {
                let xi = self.stencil.gradient_at(e, u);
                self.cfg.flux.diffusion(&self.sites[e], xi)
            })
            .collect()
    }

    /// Rusanov edge flux of the convection evaluated at `u`.
    fn convection_fluxes(&self, u: &[f64]) -> Vec<[f64; 2]> {
        let conv = self.cfg.flux.convection();
        let dim = self.cfg.grid.dim();
        (0..self.stencil.len())
            .map(|e| {
                let mut f = [0.0; 2];
                if conv.is_active() {
                    for (c, fc) in f.iter_mut().enumerate().take(dim) {
                        let (a, b) = self.stencil.edge_values(e, c, u);
                        *fc = 0.5 * (conv.component(c, a) + conv.component(c, b))
                            - 0.5 * conv.component_lipschitz(c) * (b - a);
                    }
                }
                f
            })
            .collect()
    }

    fn explicit_rhs(&self, u_j: &[f64], dw: &[f64]) -> Vec<f64> {
        let dt = self.cfg.grid.dt();
        let mut rhs: Vec<f64> = u_j
            .iter()
            .zip(dw)
            .map(|(u, w)| u + w - dt * self.cfg.reaction.base.eval(*u))
            .collect();
        if self.cfg.flux.convection().is_active() {
            let conv = self.convection_fluxes(u_j);
            self.stencil.accumulate_divergence(&conv, dt, &mut rhs);
        }
        rhs
    }

    fn residual(&self, u: &[f64], rhs: &[f64]) -> Vec<f64> {
        let dt = self.cfg.grid.dt();
        let mut r: Vec<f64> = u
            .iter()
            .zip(rhs)
            .map(|(v, b)| v - dt * self.cfg.reaction.penalty_term(*v) - b)
            .collect();
        let flux = self.diffusion_fluxes(u);
        self.stencil.accumulate_divergence(&flux, -dt, &mut r);
        r
    }

    fn l2(&self, r: &[f64]) -> f64 {
        (r.iter().map(|v| v * v).sum::<f64>() * self.cfg.grid.cell_volume()).sqrt()
    }

    /// Newton system in the lifted variable `z`, symmetrized:
    /// `D (D⁻¹ + dt K) D` with `D = du/dz = 1 / (1 + dt s)`, `s` the penalty
    /// slope and `K` the flux linearization. Returns the values and `D`.
    fn assemble(&self, u: &[f64], mode: Linearization) -> (Vec<f64>, Vec<f64>) {
        let secant_penalty = mode == Linearization::Secant;
        let secant_flux = mode != Linearization::Newton;
        let dt = self.cfg.grid.dt();
        let vol = self.cfg.grid.cell_volume();
        let flux = &self.cfg.flux;
        let reaction = &self.cfg.reaction;
        let mut vals = self.system.zero_values();
        let d: Vec<f64> = u
            .iter()
            .map(|&v| {
                let slope = if v >= 0.0 {
                    0.0
                } else if secant_penalty {
                    reaction.penalty_term(v) / (-v)
                } else {
                    reaction.penalty_slope(v)
                };
                1.0 / (1.0 + dt * slope)
            })
            .collect();
        for (i, di) in d.iter().enumerate() {
            vals[self.system.index(i, i)] += di;
        }
        for (e, l) in self.local.iter().enumerate() {
            let xi = self.stencil.gradient_at(e, u);
            let jac = if secant_flux {
                secant_matrix(flux, &self.sites[e], xi)
            } else {
                flux.diffusion_jacobian(&self.sites[e], xi)
            };
            let scale = dt * self.stencil.elements()[e].weight / vol;
            let m = l.nodes.len();
            for a in 0..m {
                let ga = l.grads[a];
                let da = d[l.nodes[a]];
                let row = [
                    jac[0][0] * ga[0] + jac[1][0] * ga[1],
                    jac[0][1] * ga[0] + jac[1][1] * ga[1],
                ];
                for b in 0..m {
                    let gb = l.grads[b];
                    let k = scale * (row[0] * gb[0] + row[1] * gb[1]);
                    vals[l.positions[a * m + b]] += da * d[l.nodes[b]] * k;
                }
            }
        }
        (vals, d)
    }

    /// `z = u - dt n pen(u-)`, the variable in which the penalty is linear.
    fn lift(&self, u: &[f64]) -> Vec<f64> {
        let dt = self.cfg.grid.dt();
        u.iter()
            .map(|&v| v - dt * self.cfg.reaction.penalty_term(v))
            .collect()
    }

    /// Inverse of [`Stepper::lift`], node by node.
    fn project(&self, z: &[f64]) -> Vec<f64> {
        let c = self.cfg.grid.dt() * self.cfg.reaction.strength;
        let penalty = self.cfg.reaction.penalty;
        z.iter()
            .map(|&z| {
                if z >= 0.0 || c == 0.0 {
                    return z;
                }
                match penalty {
                    PenaltyKind::Linear => z / (1.0 + c),
                    // w + c pen(w) = -z on [0, -z]
                    kind => {
                        let g = |w: f64| w + c * kind.value(w) + z;
                        let (mut lo, mut hi) = (0.0, -z);
                        let mut w = 0.5 * hi;
                        for _ in 0..200 {
                            let gw = g(w);
                            if gw == 0.0 {
                                break;
                            }
                            if gw < 0.0 {
                                lo = w;
                            } else {
                                hi = w;
                            }
                            let newton = w - gw / (1.0 + c * kind.derivative(w));
                            w = if newton > lo && newton < hi {
                                newton
                            } else {
                                0.5 * (lo + hi)
                            };
                            if hi - lo <= 1e-17 * hi {
                                break;
                            }
                        }
                        -w
                    }
                }
            })
            .collect()
    }

    /// Advances `u_j` by one step with noise increment `dw`.
    pub fn advance(&mut self, u_j: &Field, dw: &Field) -> Result<StepOutcome> {
        let grid = self.cfg.grid;
        grid.check_same_space(u_j.grid())?;
        grid.check_same_space(dw.grid())?;
        let rhs = self.explicit_rhs(u_j.values(), dw.values());
        if rhs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("explicit right-hand side".into()));
        }
        let tol = self.cfg.newton_tol;
        let mut u = u_j.values().to_vec();
        let mut r = self.residual(&u, &rhs);
        let mut norm = self.l2(&r);
        let mut iterations = 0;
        while norm > tol {
            if !norm.is_finite() {
                return Err(Error::NonFinite(format!(
                    "residual after {iterations} iterations"
                )));
            }
            if iterations == self.cfg.newton_max_iters {
                return Err(Error::NonConvergence {
                    iterations,
                    residual: norm,
                });
            }
            iterations += 1;
            let z = self.lift(&u);
            let mut best: Option<(Vec<f64>, Vec<f64>, f64, f64)> = None;
            let mut fallback = None;
            for mode in Linearization::ALL {
                let (vals, d) = self.assemble(&u, mode);
                let scaled: Vec<f64> = r.iter().zip(&d).map(|(r, d)| -r * d).collect();
                let dz = self.system.solve(&vals, &scaled)?;
                let y: Vec<f64> = dz.iter().zip(&d).map(|(a, b)| a * b).collect();
                let found = self.line_search(&u, &z, &y, &dz, &rhs, &r, norm);
                if let Some(f) = found {
                    if best.as_ref().map_or(true, |b| f.2 < b.2) {
                        best = Some(f);
                    }
                }
                if mode == Linearization::Secant {
                    fallback = Some(dz);
                }
            }
            match best {
                Some((nu, nr, nn, _)) => {
                    u = nu;
                    r = nr;
                    norm = nn;
                }
                None => {
                    // no descent found: take the full frozen-coefficient step
                    let dz = fallback.expect("secant mode is tried");
                    let trial: Vec<f64> = z.iter().zip(&dz).map(|(z, d)| z + d).collect();
                    u = self.project(&trial);
                    r = self.residual(&u, &rhs);
                    norm = self.l2(&r);
                }
            }
        }
        Ok(StepOutcome {
            u: Field::from_values(&grid, u)?,
            iterations,
            residual: norm,
        })
    }

    /// Convex functional whose gradient (in the nodal inner product) is the residual.
    fn energy(&self, u: &[f64], rhs: &[f64]) -> f64 {
        let dt = self.cfg.grid.dt();
        let nodal: f64 = u
            .iter()
            .zip(rhs)
            .map(|(v, b)| 0.5 * v * v - b * v + dt * self.cfg.reaction.penalty_potential(*v))
            .sum();
        let elements: f64 = self
            .stencil
            .elements()
            .iter()
            .enumerate()
            .map(|(e, el)| {
                let xi = self.stencil.gradient_at(e, u);
                el.weight * self.cfg.flux.diffusion_potential(&self.sites[e], xi)
            })
            .sum();
        nodal * self.cfg.grid.cell_volume() + dt * elements
    }

    /// Backtracking along `α ↦ project(z + α dz)` on the energy (Armijo),
    /// or on the residual norm once energy differences fall below rounding.
    #[allow(clippy::too_many_arguments)]
    fn line_search(
        &self,
        u: &[f64],
        z: &[f64],
        y: &[f64],
        dz: &[f64],
        rhs: &[f64],
        r: &[f64],
        norm: f64,
    ) -> Option<(Vec<f64>, Vec<f64>, f64, f64)> {
        let vol = self.cfg.grid.cell_volume();
        let e0 = self.energy(u, rhs);
        let slope: f64 = r.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() * vol;
        let rounding = 1e-13 * e0.abs().max(f64::MIN_POSITIVE);
        let mut alpha = 1.0;
        while alpha > 1e-8 {
            let trial: Vec<f64> = z.iter().zip(dz).map(|(a, d)| a + alpha * d).collect();
            let trial = self.project(&trial);
            let tr = self.residual(&trial, rhs);
            let n = self.l2(&tr);
            if n.is_finite() {
                let gain = e0 - self.energy(&trial, rhs);
                let armijo = slope < 0.0 && gain >= -1e-4 * alpha * slope;
                let settled = (alpha * slope).abs() <= rounding && n < norm;
                let contracting = n <= (1.0 - 1e-4 * alpha) * norm;
                if armijo || settled || contracting {
                    return Some((trial, tr, n, alpha));
                }
            }
            alpha *= 0.5;
        }
        None
    }

    /// Ledger entry for the step `u_j -> u_next` driven by `dw`.
    fn ledger_entry(&self, u_j: &Field, u_next: &Field, dw: &Field) -> Result<LedgerEntry> {
        let dt = self.cfg.grid.dt();
        let vol = self.cfg.grid.cell_volume();
        let p = self.cfg.flux.p();
        let uj = u_j.values();
        let un = u_next.values();
        let diff = self.diffusion_fluxes(un);
        let conv = self.convection_fluxes(uj);
        let lambda_bound = u_j.norm(crate::grid::Norm::Linf)?;
        let mut dissipation = 0.0;
        let mut floor = 0.0;
        let mut flux_dual = 0.0;
        let p_dual = p / (p - 1.0);
        for (e, el) in self.stencil.elements().iter().enumerate() {
            let xi = self.stencil.gradient_at(e, un);
            let a = [diff[e][0] + conv[e][0], diff[e][1] + conv[e][1]];
            dissipation += el.weight * (a[0] * xi[0] + a[1] * xi[1]);
            let k = self.cfg.flux.constants(&self.sites[e], lambda_bound);
            let mag = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
            floor += el.weight * (k.kappa + k.c1 * mag.powf(p));
            flux_dual += el.weight * (a[0] * a[0] + a[1] * a[1]).sqrt().powf(p_dual);
        }
        let reaction: f64 = uj
            .iter()
            .zip(un)
            .map(|(a, b)| self.cfg.reaction.base.eval(*a) * b)
            .sum::<f64>()
            * vol;
        let penalty: f64 = un
            .iter()
            .map(|&v| self.cfg.reaction.penalty_term(v) * (-v).max(0.0))
            .sum::<f64>()
            * vol;
        Ok(LedgerEntry {
            kinetic: 0.5 * (u_next.inner(u_next)? - u_j.inner(u_j)?),
            dissipation: dt * dissipation,
            reaction: dt * reaction,
            penalty: dt * penalty,
            noise: u_j.inner(dw)?,
            ito: 0.5 * dw.inner(dw)?,
            coercivity_floor: dt * floor,
            flux_dual,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Linearization {
    Newton,
    /// Frozen flux coefficient, Newton penalty.
    Mixed,
    /// Frozen flux coefficient and penalty secant.
    Secant,
}

impl Linearization {
    const ALL: [Linearization; 3] = [
        Linearization::Newton,
        Linearization::Mixed,
        Linearization::Secant,
    ];
}

fn secant_matrix(flux: &FluxModel, site: &Site, xi: [f64; 2]) -> [[f64; 2]; 2] {
    let eta = [xi[0] + site.shift[0], xi[1] + site.shift[1]];
    let s = eta[0] * eta[0] + eta[1] * eta[1] + flux.eps() * flux.eps();
    let k = if s == 0.0 {
        if flux.p() == 2.0 {
            site.coefficient
        } else {
            0.0
        }
    } else {
        site.coefficient * s.powf(0.5 * (flux.p() - 2.0))
    };
    [[k, 0.0], [0.0, k]]
}

/// One step of the scheme (builds a throwaway [`Stepper`]).
pub fn step(u_j: &Field, cfg: &SolverConfig, dw: &Field) -> Result<Field> {
    Ok(Stepper::new(cfg)?.advance(u_j, dw)?.u)
}

/// Terms of the discrete Itô energy balance for one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    /// `½‖u_{j+1}‖² - ½‖u_j‖²`
    pub kinetic: f64,
    /// `dt ∫ a·∇u_{j+1}` with the scheme's element fluxes.
    pub dissipation: f64,
    /// `dt ∫ f(u_j) u_{j+1}`
    pub reaction: f64,
    /// `dt ∫ n pen(u_{j+1}-) u_{j+1}-`
    pub penalty: f64,
    /// `(u_j, ΔW_j)`
    pub noise: f64,
    /// `½ ‖ΔW_j‖²`, the realized quadratic variation (mean `½ ‖Φ‖²_HS dt`).
    pub ito: f64,
    /// `dt ∫ κ + C₁|∇u_{j+1}|^p`, a lower bound for `dissipation`.
    pub coercivity_floor: f64,
    /// `∫ |a|^(p')` for this step's fluxes.
    pub flux_dual: f64,
}

impl LedgerEntry {
    /// Left side minus right side of the balance for this step.
    pub fn imbalance(&self) -> f64 {
        self.kinetic + self.dissipation + self.reaction + self.penalty - self.noise - self.ito
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub entries: Vec<LedgerEntry>,
    /// Running sum of [`LedgerEntry::imbalance`].
    pub cumulative: Vec<f64>,
}

impl EnergyLedger {
    fn push(&mut self, e: LedgerEntry) {
        let prev = self.cumulative.last().copied().unwrap_or(0.0);
        self.cumulative.push(prev + e.imbalance());
        self.entries.push(e);
    }

    pub fn dissipation_total(&self) -> f64 {
        self.entries.iter().map(|e| e.dissipation).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelNorms {
    pub l2: f64,
    /// Element-gradient `‖∇u‖_p`.
    pub grad_lp: f64,
    pub neg_l2: f64,
    pub neg_lp: f64,
    pub neg_linf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub fingerprint: String,
    pub seed: u64,
    pub strength: f64,
    pub penalty: PenaltyKind,
    pub p: f64,
    pub u: SpaceTimeField,
    /// One entry per time level.
    pub norms: Vec<LevelNorms>,
    /// `Σ_{i<j} (u_i, ΔW_i)` per time level.
    pub stochastic_integral: Vec<f64>,
    pub ledger: EnergyLedger,
    pub newton_iterations: Vec<usize>,
    pub wall_time_secs: f64,
}

impl TrajectoryRecord {
    pub fn grid(&self) -> &Grid {
        self.u.grid()
    }

    /// Equality of everything except wall time.
    pub fn same_content(&self, other: &TrajectoryRecord) -> bool {
        TrajectoryRecord {
            wall_time_secs: 0.0,
            ..self.clone()
        } == TrajectoryRecord {
            wall_time_secs: 0.0,
            ..other.clone()
        }
    }

    fn dt(&self) -> f64 {
        self.grid().dt()
    }

    /// `sup_t ‖u(t)‖²`
    pub fn sup_l2_sq(&self) -> f64 {
        self.norms.iter().map(|n| n.l2 * n.l2).fold(0.0, f64::max)
    }

    /// `∫_0^T ‖∇u‖_p^p dt` (right-endpoint rule, matching the implicit step).
    pub fn grad_integral(&self) -> f64 {
        self.norms
            .iter()
            .skip(1)
            .map(|n| n.grad_lp.powf(self.p))
            .sum::<f64>()
            * self.dt()
    }

    /// `∫_0^T ∫ |a|^(p')`
    pub fn flux_integral(&self) -> f64 {
        self.ledger.entries.iter().map(|e| e.flux_dual).sum::<f64>() * self.dt()
    }

    /// `‖u-‖_{L²(Q_T)}`
    pub fn neg_l2_qt(&self) -> f64 {
        (self
            .norms
            .iter()
            .skip(1)
            .map(|n| n.neg_l2 * n.neg_l2)
            .sum::<f64>()
            * self.dt())
        .sqrt()
    }

    /// `‖u-‖^p_{L^p(Q_T)}`
    pub fn neg_lp_qt_pow(&self) -> f64 {
        self.norms
            .iter()
            .skip(1)
            .map(|n| n.neg_lp.powf(self.p))
            .sum::<f64>()
            * self.dt()
    }

    /// `n ‖u-‖²_{L²(Q_T)}` for the linear penalty, `n ‖u-‖^p_{L^p(Q_T)}` for the power penalty.
    pub fn penalty_integral(&self) -> f64 {
        match self.penalty {
            PenaltyKind::Linear => self.strength * self.neg_l2_qt().powi(2),
            PenaltyKind::Power { .. } => self.strength * self.neg_lp_qt_pow(),
        }
    }
}

fn level_norms(stencil: &Stencil, u: &Field, p: f64) -> Result<LevelNorms> {
    use crate::grid::Norm;
    let neg = u.negative_part();
    Ok(LevelNorms {
        l2: u.norm(Norm::L2)?,
        grad_lp: stencil.grad_lp_pow(u.values(), p).powf(1.0 / p),
        neg_l2: neg.norm(Norm::L2)?,
        neg_lp: neg.norm(Norm::Lp(p.max(1.0)))?,
        neg_linf: neg.norm(Norm::Linf)?,
    })
}

/// Runs the full trajectory on `path`.
pub fn solve_trajectory(cfg: &SolverConfig, path: &NoisePath) -> Result<TrajectoryRecord> {
    let start = Instant::now();
    let grid = cfg.grid;
    if path.nt() != grid.nt() {
        return Err(Error::invalid(format!(
            "noise path has {} steps, grid has {}",
            path.nt(),
            grid.nt()
        )));
    }
    let mut stepper = Stepper::new(cfg)?;
    let sampler = NoiseSampler::new(&cfg.noise, &grid);
    let p = cfg.flux.p();

    let mut u = cfg.u0.clone().at_time(0);
    let mut levels = SpaceTimeField::new(&grid, Vec::with_capacity(grid.nt() + 1))?;
    let mut norms = vec![level_norms(stepper.stencil(), &u, p)?];
    let mut stochastic = vec![0.0];
    let mut ledger = EnergyLedger::default();
    let mut iterations = Vec::with_capacity(grid.nt());

    for j in 0..grid.nt() {
        let dw = if cfg.noise.is_off() {
            Field::zeros(&grid)
        } else {
            sampler.increment(path, j, grid.dt())?
        };
        let wrap = |e: Error| Error::StepFailed {
            step: j,
            source: Box::new(e),
        };
        let out = stepper.advance(&u, &dw).map_err(wrap)?;
        let next = out.u.at_time(j + 1);
        let entry = stepper.ledger_entry(&u, &next, &dw).map_err(wrap)?;
        stochastic.push(stochastic[j] + entry.noise);
        ledger.push(entry);
        norms.push(level_norms(stepper.stencil(), &next, p)?);
        iterations.push(out.iterations);
        levels.push(std::mem::replace(&mut u, next));
    }
    levels.push(u);

    Ok(TrajectoryRecord {
        fingerprint: cfg.fingerprint(),
        seed: path.seed(),
        strength: cfg.reaction.strength,
        penalty: cfg.reaction.penalty,
        p,
        u: levels,
        norms,
        stochastic_integral: stochastic,
        ledger,
        newton_iterations: iterations,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// `|LHS - RHS|` of the discrete energy balance at the final time.
pub fn energy_residual(rec: &TrajectoryRecord) -> f64 {
    rec.ledger.cumulative.last().map_or(0.0, |c| c.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Norm;
    use crate::models::{BaseReaction, Convection};

    fn heat_config(nx: usize, t: f64, nt: usize) -> SolverConfig {
        let grid = Grid::build(1, &[1.0], nx, None, t, nt).unwrap();
        let flux = FluxModel::p_laplace(1, 2.0, Convection::none()).unwrap();
        let u0 = Field::from_fn(&grid, |x| (std::f64::consts::PI * x[0]).sin());
        SolverConfig::new(
            grid,
            flux,
            ReactionModel::unpenalized(BaseReaction::Zero),
            NoiseSpec::off(),
            u0,
        )
        .unwrap()
    }

    #[test]
    fn zero_is_a_fixed_point() {
        let cfg = heat_config(16, 0.1, 4);
        let z = Field::zeros(&cfg.grid);
        let next = step(&z, &cfg, &z).unwrap();
        assert!(next.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn heat_step_decays_sine_mode() {
        let nx = 128;
        let h = 1.0 / (nx + 1) as f64;
        let t = 0.05;
        let nt = (t / (h * h)).ceil() as usize;
        let cfg = heat_config(nx, t, nt);
        let rec = solve_trajectory(&cfg, &NoisePath::new(0, nt, 0)).unwrap();
        let decay = (-std::f64::consts::PI.powi(2) * t).exp();
        let exact = cfg.u0.scaled(decay);
        let err = rec.u.last().unwrap().add_scaled(-1.0, &exact).unwrap();
        let rel = err.norm(Norm::L2).unwrap() / exact.norm(Norm::L2).unwrap();
        assert!(rel < 0.01, "relative error {rel}");
    }

    #[test]
    fn large_penalty_lifts_negative_nodes() {
        let grid = Grid::build(1, &[1.0], 20, None, 0.1, 10).unwrap();
        let flux = FluxModel::p_laplace(1, 3.0, Convection::none())
            .unwrap()
            .with_eps(1e-8)
            .unwrap();
        let reaction = ReactionModel::new(BaseReaction::Zero, PenaltyKind::Linear, 1e6).unwrap();
        let cfg =
            SolverConfig::new(grid, flux, reaction, NoiseSpec::off(), Field::zeros(&grid)).unwrap();
        let uj = Field::from_fn(&grid, |x| (9.0 * x[0]).sin() * 0.3);
        assert!(uj.min() < 0.0);
        let next = step(&uj, &cfg, &Field::zeros(&grid)).unwrap();
        let before = uj.negative_part().norm(Norm::Linf).unwrap();
        let after = next.negative_part().norm(Norm::Linf).unwrap();
        assert!(after < before * 1e-3, "{after} vs {before}");
    }

    #[test]
    fn power_penalty_and_singular_flux_converge() {
        let grid = Grid::build(1, &[1.0], 32, None, 0.1, 10).unwrap();
        let flux = FluxModel::p_laplace(1, 1.5, Convection::none())
            .unwrap()
            .with_eps(1e-8)
            .unwrap();
        let reaction = ReactionModel::new(
            BaseReaction::Zero,
            PenaltyKind::Power { exponent: 0.5 },
            1e3,
        )
        .unwrap();
        let cfg =
            SolverConfig::new(grid, flux, reaction, NoiseSpec::off(), Field::zeros(&grid)).unwrap();
        let uj = Field::from_fn(&grid, |x| (7.0 * x[0]).sin() * 0.2);
        let out = Stepper::new(&cfg)
            .unwrap()
            .advance(&uj, &Field::zeros(&grid))
            .unwrap();
        assert!(out.residual <= cfg.newton_tol);
    }

    #[test]
    fn rejects_negative_initial_value() {
        let cfg = heat_config(8, 0.1, 2);
        let bad = SolverConfig {
            u0: cfg.u0.scaled(-1.0),
            ..cfg
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_steps_keep_only_initial_value() {
        let cfg = heat_config(8, 0.1, 2);
        let cfg = SolverConfig {
            grid: cfg.grid.with_steps(0),
            ..cfg
        };
        let rec = solve_trajectory(&cfg, &NoisePath::new(1, 0, 0)).unwrap();
        assert_eq!(rec.u.len(), 1);
        assert_eq!(rec.u.level(0).values(), cfg.u0.values());
        assert_eq!(energy_residual(&rec), 0.0);
    }

    #[test]
    fn trivial_energy_balance() {
        let cfg = heat_config(8, 0.1, 5);
        let cfg = SolverConfig {
            u0: Field::zeros(&cfg.grid),
            ..cfg
        };
        let rec = solve_trajectory(&cfg, &NoisePath::new(1, 5, 0)).unwrap();
        assert_eq!(energy_residual(&rec), 0.0);
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = heat_config(8, 0.1, 5);
        let b = heat_config(8, 0.1, 5);
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), a.with_strength(3.0).fingerprint());
    }
    #[test]
    fn noiseless_runs_stay_nonnegative() {
        for n in [0.0, 1.0, 1e4] {
            let cfg = crate::scenarios::standard_scenario(n);
            let cfg = SolverConfig {
                grid: cfg.grid.with_time(0.1, 50).unwrap(),
                noise: NoiseSpec::off(),
                ..cfg
            };
            let rec = solve_trajectory(&cfg, &NoisePath::new(0, 50, 0)).unwrap();
            for f in rec.u.levels() {
                assert!(f.min() >= -cfg.newton_tol, "n = {n}: min {}", f.min());
            }
        }
    }

    #[test]
    fn replay_is_bitwise_identical() {
        let cfg = crate::scenarios::standard_scenario(100.0);
        let cfg = SolverConfig {
            grid: cfg.grid.with_time(0.05, 40).unwrap(),
            u0: Field::zeros(&cfg.grid),
            ..cfg
        };
        let path = NoisePath::new(7, 40, cfg.noise.modes());
        let a = solve_trajectory(&cfg, &path).unwrap();
        let b = solve_trajectory(&cfg, &path).unwrap();
        assert!(a.same_content(&b));
        assert!(a.norms.iter().any(|n| n.neg_linf > 0.0));
    }

    #[test]
    fn heat_residual_is_first_order_in_dt() {
        let run = |nt| {
            let cfg = heat_config(32, 0.1, nt);
            energy_residual(&solve_trajectory(&cfg, &NoisePath::new(0, nt, 0)).unwrap())
        };
        let (coarse, fine) = (run(20), run(40));
        assert!(coarse > 0.0);
        assert!(coarse / fine >= 1.5, "{coarse} / {fine}");
    }

    #[test]
    fn dissipation_dominates_coercivity_floor() {
        for p in [1.5, 2.0, 3.0] {
            let grid = Grid::build(1, &[1.0], 24, None, 0.05, 10).unwrap();
            let flux = FluxModel::p_laplace(1, p, Convection::along_x(0.5)).unwrap();
            let reaction =
                ReactionModel::new(BaseReaction::Zero, PenaltyKind::Linear, 10.0).unwrap();
            let noise = NoiseSpec::new(8, 2.0, 0.3).unwrap();
            let u0 = crate::scenarios::InitialProfile::SineBump.field(&grid);
            let cfg = SolverConfig::new(grid, flux, reaction, noise, u0).unwrap();
            let rec = solve_trajectory(&cfg, &NoisePath::new(3, 10, 8)).unwrap();
            for e in &rec.ledger.entries {
                assert!(
                    e.dissipation >= e.coercivity_floor - 1e-12,
                    "p = {p}: {e:?}"
                );
            }
        }
    }

    #[test]
    fn larger_reaction_gives_smaller_solution() {
        let cfg = crate::scenarios::standard_scenario(10.0);
        let grid = cfg.grid.with_time(0.1, 100).unwrap();
        let base = SolverConfig {
            grid,
            u0: crate::scenarios::InitialProfile::SineBump.field(&grid),
            ..cfg
        };
        let mut strong = base.clone();
        strong.reaction.base = BaseReaction::Linear {
            slope: 0.0,
            pos_slope: 0.5,
        };
        strong.u0 = base.u0.scaled(0.8);
        let path = NoisePath::new(11, 100, base.noise.modes());
        let v = solve_trajectory(&base, &path).unwrap();
        let u = solve_trajectory(&strong, &path).unwrap();
        for (a, b) in u.u.levels().iter().zip(v.u.levels()) {
            for (x, y) in a.values().iter().zip(b.values()) {
                assert!(*x <= y + 10.0 * base.newton_tol);
            }
        }
    }
}
