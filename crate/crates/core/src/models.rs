//! Flux, reaction and penalty models.
//!
//! The built-in flux is the regularized p-Laplacian with linear convection,
//!
//! ```text
//! a(x, λ, ξ) = k(x) (|ξ + s(x)|² + ε²)^((p-2)/2) (ξ + s(x)) + c λ d
//! ```
//!
//! where `k` is an optional positive coefficient field, `s = ∇ψ` is the
//! obstacle shift (zero unless built by [`FluxModel::obstacle_shift`]) and `d`
//! a unit direction. With `ε = 0`, `k = 1`, `s = 0` this is exactly
//! `|ξ|^(p-2) ξ + F(λ)` with `F(λ) = c λ d`.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::stencil::Stencil;

pub type Vec2 = [f64; 2];

fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn norm(a: Vec2) -> f64 {
    dot(a, a).sqrt()
}

/// Pointwise data a flux needs besides `(λ, ξ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Site {
    pub position: Vec2,
    pub coefficient: f64,
    pub shift: Vec2,
}

impl Site {
    pub fn at(position: Vec2) -> Site {
        Site {
            position,
            coefficient: 1.0,
            shift: [0.0; 2],
        }
    }
}

/// Constants in the monotonicity, coercivity/growth and Lipschitz conditions,
/// evaluated at one site for `|λ| <= lambda_bound`:
///
/// ```text
/// a·ξ >= kappa + c1 |ξ|^p
/// |a| <= c2 |ξ|^(p-1) + c3 |λ|^(p-1) + g
/// |a(λ1) - a(λ2)| <= (c4 |ξ|^(p-1) + h) |λ1 - λ2|
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructuralConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub kappa: f64,
    pub g: f64,
    pub h: f64,
}

/// Anything the assumption auditor can sample.
pub trait Flux: Sync {
    fn dim(&self) -> usize;
    fn exponent(&self) -> f64;
    fn eval(&self, site: &Site, lam: f64, xi: Vec2) -> Vec2;
    fn constants(&self, site: &Site, lambda_bound: f64) -> StructuralConstants;
    fn sample_site(&self, rng: &mut ChaCha8Rng) -> Site {
        let mut pos = [0.0; 2];
        for x in pos.iter_mut().take(self.dim()) {
            *x = rng.gen::<f64>();
        }
        Site::at(pos)
    }
}

/// Linear convection `F(λ) = amplitude * λ * direction`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Convection {
    pub amplitude: f64,
    pub direction: Vec2,
}

impl Convection {
    pub fn none() -> Convection {
        Convection {
            amplitude: 0.0,
            direction: [1.0, 0.0],
        }
    }

    /// Convection along the first axis.
    pub fn along_x(amplitude: f64) -> Convection {
        Convection {
            amplitude,
            direction: [1.0, 0.0],
        }
    }

    pub fn is_active(&self) -> bool {
        self.amplitude != 0.0
    }

    pub fn eval(&self, lam: f64) -> Vec2 {
        let s = self.amplitude * lam;
        [s * self.direction[0], s * self.direction[1]]
    }

    /// Component `c` of `F`.
    pub fn component(&self, c: usize, lam: f64) -> f64 {
        self.amplitude * self.direction[c] * lam
    }

    /// Lipschitz constant `L_F`.
    pub fn lipschitz(&self) -> f64 {
        self.amplitude.abs() * norm(self.direction)
    }

    pub fn component_lipschitz(&self, c: usize) -> f64 {
        (self.amplitude * self.direction[c]).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SpatialData {
    grid: Grid,
    coefficient: Option<Vec<f64>>,
    psi: Option<Field>,
    node_shift: Vec<Vec2>,
    element_shift: Vec<Vec2>,
}

impl SpatialData {
    fn nearest_node(&self, x: &[f64]) -> usize {
        let g = &self.grid;
        let pick = |pos: f64, h: f64, n: usize| -> usize {
            ((pos / h).round() as isize - 1).clamp(0, n as isize - 1) as usize
        };
        let i = pick(x[0], g.h(), g.nx());
        let j = if g.dim() == 2 {
            pick(x[1], g.hy(), g.ny())
        } else {
            0
        };
        g.index(i, j)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxModel {
    dim: usize,
    p: f64,
    eps: f64,
    convection: Convection,
    spatial: Option<Arc<SpatialData>>,
}

pub const DEFAULT_EPS: f64 = 1e-8;

impl FluxModel {
    /// p-Laplacian plus convection, unregularized (`ε = 0`).
    pub fn p_laplace(dim: usize, p: f64, convection: Convection) -> Result<FluxModel> {
        if dim != 1 && dim != 2 {
            return Err(Error::invalid("flux dimension must be 1 or 2"));
        }
        if !(p > 1.0 && p.is_finite()) {
            return Err(Error::invalid(format!(
                "growth exponent must exceed 1, got {p}"
            )));
        }
        if !convection.amplitude.is_finite() || (norm(convection.direction) - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(
                "convection needs a finite amplitude and a unit direction",
            ));
        }
        if dim == 1 && convection.direction[1] != 0.0 {
            return Err(Error::invalid("1D convection must point along x"));
        }
        Ok(FluxModel {
            dim,
            p,
            eps: 0.0,
            convection,
            spatial: None,
        })
    }

    pub fn with_eps(mut self, eps: f64) -> Result<FluxModel> {
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::invalid("regularization must be >= 0"));
        }
        self.eps = eps;
        Ok(self)
    }

    /// Attaches a positive nodal coefficient `k(x)` multiplying the diffusion part.
    pub fn with_coefficient(mut self, k: &Field) -> Result<FluxModel> {
        if k.values().iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("coefficient field must be positive"));
        }
        let mut data = self.take_spatial(k.grid())?;
        data.coefficient = Some(k.values().to_vec());
        self.spatial = Some(Arc::new(data));
        Ok(self)
    }

    /// Model for `v = u - ψ`: `ã(x, ξ) = a(x, ξ + ∇ψ(x))`.
    ///
    /// Only valid for λ-independent fluxes, so active convection is rejected.
    pub fn obstacle_shift(&self, psi: &Field) -> Result<FluxModel> {
        if self.convection.is_active() {
            return Err(Error::invalid(
                "obstacle shift requires a flux independent of the solution value (disable convection)",
            ));
        }
        if psi.kind() != crate::grid::FieldKind::Scalar {
            return Err(Error::KindMismatch {
                expected: "scalar",
                found: "vector",
            });
        }
        if psi.values().iter().all(|&v| v == 0.0) {
            return Ok(self.clone());
        }
        let mut out = self.clone();
        let mut data = out.take_spatial(psi.grid())?;
        let grad = psi.gradient()?;
        let n = psi.grid().len();
        data.node_shift = (0..n)
            .map(|i| {
                let mut s = [0.0; 2];
                for (c, v) in s.iter_mut().enumerate().take(self.dim) {
                    *v = grad.values()[c * n + i];
                }
                s
            })
            .collect();
        let stencil = Stencil::new(psi.grid());
        data.element_shift = stencil.gradients(psi.values());
        data.psi = Some(psi.clone());
        out.spatial = Some(Arc::new(data));
        Ok(out)
    }

    fn take_spatial(&mut self, grid: &Grid) -> Result<SpatialData> {
        if grid.dim() != self.dim {
            return Err(Error::GridMismatch(
                "field dimension differs from flux".into(),
            ));
        }
        match self.spatial.take() {
            Some(d) => {
                d.grid.check_same_space(grid)?;
                Ok((*d).clone())
            }
            None => Ok(SpatialData {
                grid: *grid,
                coefficient: None,
                psi: None,
                node_shift: Vec::new(),
                element_shift: Vec::new(),
            }),
        }
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn convection(&self) -> &Convection {
        &self.convection
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn obstacle(&self) -> Option<&Field> {
        self.spatial.as_ref().and_then(|d| d.psi.as_ref())
    }

    /// Site data at an interior node (centered gradient of the obstacle).
    pub fn site_at_node(&self, grid: &Grid, node: usize) -> Site {
        let pos = grid.position(node);
        let Some(d) = &self.spatial else {
            return Site::at(pos);
        };
        Site {
            position: pos,
            coefficient: d.coefficient.as_ref().map_or(1.0, |k| k[node]),
            shift: d.node_shift.get(node).copied().unwrap_or([0.0; 2]),
        }
    }

    /// Site data on a stencil element (element gradient of the obstacle).
    pub fn site_at_element(&self, stencil: &Stencil, e: usize) -> Site {
        let pos = stencil.elements()[e].centroid;
        let Some(d) = &self.spatial else {
            return Site::at(pos);
        };
        Site {
            position: pos,
            coefficient: d
                .coefficient
                .as_ref()
                .map_or(1.0, |k| stencil.average(e, k)),
            shift: d.element_shift.get(e).copied().unwrap_or([0.0; 2]),
        }
    }

    /// Site at an arbitrary point (nearest-node lookup of spatial data).
    pub fn site_at_point(&self, x: &[f64]) -> Site {
        let mut pos = [0.0; 2];
        pos[..x.len().min(2)].copy_from_slice(&x[..x.len().min(2)]);
        match &self.spatial {
            None => Site::at(pos),
            Some(d) => {
                let node = d.nearest_node(&pos);
                Site {
                    position: pos,
                    ..self.site_at_node(&d.grid, node)
                }
            }
        }
    }

    /// Pointwise flux `a(x, λ, ξ)`.
    pub fn eval_at(&self, x: &[f64], lam: f64, xi: Vec2) -> Vec2 {
        self.eval(&self.site_at_point(x), lam, xi)
    }

    /// Diffusion part `k (|η|² + ε²)^((p-2)/2) η` with `η = ξ + s`.
    pub fn diffusion(&self, site: &Site, xi: Vec2) -> Vec2 {
        let eta = [xi[0] + site.shift[0], xi[1] + site.shift[1]];
        let s = dot(eta, eta) + self.eps * self.eps;
        if s == 0.0 {
            return [0.0; 2];
        }
        let factor = site.coefficient * s.powf(0.5 * (self.p - 2.0));
        [factor * eta[0], factor * eta[1]]
    }

    /// Potential `A` with `∇_ξ A = diffusion`: `k/p (|ξ+s|² + ε²)^(p/2)`.
    pub fn diffusion_potential(&self, site: &Site, xi: Vec2) -> f64 {
        let eta = [xi[0] + site.shift[0], xi[1] + site.shift[1]];
        let s = dot(eta, eta) + self.eps * self.eps;
        site.coefficient / self.p * s.powf(0.5 * self.p)
    }

    /// Jacobian of [`FluxModel::diffusion`] with respect to `ξ` (symmetric).
    pub fn diffusion_jacobian(&self, site: &Site, xi: Vec2) -> [[f64; 2]; 2] {
        let eta = [xi[0] + site.shift[0], xi[1] + site.shift[1]];
        let s = dot(eta, eta) + self.eps * self.eps;
        if s == 0.0 {
            let diag = if self.p == 2.0 { site.coefficient } else { 0.0 };
            return [[diag, 0.0], [0.0, diag]];
        }
        let base = site.coefficient * s.powf(0.5 * (self.p - 2.0));
        let q = (self.p - 2.0) / s;
        [
            [
                base * (1.0 + q * eta[0] * eta[0]),
                base * q * eta[0] * eta[1],
            ],
            [
                base * q * eta[0] * eta[1],
                base * (1.0 + q * eta[1] * eta[1]),
            ],
        ]
    }

    fn diffusion_constants(&self, coefficient: f64) -> (f64, f64, f64, f64) {
        // (c1, kappa, c2, g) of the diffusion part alone
        let p = self.p;
        let k = coefficient;
        let eps = self.eps;
        if eps == 0.0 {
            return (k, 0.0, k, 0.0);
        }
        let two = 2f64.powf(0.5 * (p - 2.0));
        if p >= 2.0 {
            (k, 0.0, k * two, k * two * eps.powf(p - 1.0))
        } else {
            (k * two, -k * two * eps.powf(p), k, 0.0)
        }
    }
}

impl Flux for FluxModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn exponent(&self) -> f64 {
        self.p
    }

    fn eval(&self, site: &Site, lam: f64, xi: Vec2) -> Vec2 {
        let d = self.diffusion(site, xi);
        let f = self.convection.eval(lam);
        [d[0] + f[0], d[1] + f[1]]
    }

    fn constants(&self, site: &Site, lambda_bound: f64) -> StructuralConstants {
        let p = self.p;
        let (c1d, kd, c2d, gd) = self.diffusion_constants(site.coefficient);
        let shift = norm(site.shift);
        if shift > 0.0 {
            // a(ξ + s): absorb the shift with Young's inequality
            let r = 2.0 * c2d * (p - 1.0) / (c1d * p);
            let young = c2d * r.powf(p - 1.0) - 0.5 * c1d * r.powf(p);
            let m = 2f64.powf(p - 2.0).max(1.0);
            return StructuralConstants {
                c1: c1d * 2f64.powf(-p),
                c2: c2d * m,
                c3: 0.0,
                c4: 0.0,
                kappa: kd - gd * shift - (young + 0.5 * c1d) * shift.powf(p),
                g: gd + c2d * m * shift.powf(p - 1.0),
                h: 0.0,
            };
        }
        let lf = self.convection.lipschitz();
        if lf == 0.0 {
            return StructuralConstants {
                c1: c1d,
                c2: c2d,
                c3: 0.0,
                c4: 0.0,
                kappa: kd,
                g: gd,
                h: 0.0,
            };
        }
        let a = lf * lambda_bound;
        let r = (2.0 * a / (c1d * p)).powf(1.0 / (p - 1.0));
        let young = a * r - 0.5 * c1d * r.powf(p);
        let (c3, g_conv) = if p >= 2.0 {
            (lf, lf)
        } else {
            (lf * lambda_bound.powf(2.0 - p), 0.0)
        };
        StructuralConstants {
            c1: 0.5 * c1d,
            c2: c2d,
            c3,
            c4: 0.0,
            kappa: kd - young,
            g: gd + g_conv,
            h: lf,
        }
    }

    fn sample_site(&self, rng: &mut ChaCha8Rng) -> Site {
        match &self.spatial {
            Some(d) => {
                let node = rng.gen_range(0..d.grid.len());
                self.site_at_node(&d.grid, node)
            }
            None => {
                let mut pos = [0.0; 2];
                for x in pos.iter_mut().take(self.dim) {
                    *x = rng.gen::<f64>();
                }
                Site::at(pos)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    Monotonicity,
    Coercivity,
    Growth,
    Lipschitz,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub condition: Condition,
    pub position: Vec2,
    pub lam: f64,
    pub lam2: f64,
    pub xi: Vec2,
    pub zeta: Vec2,
    /// The side of the inequality that should be larger, and the other side.
    pub bound: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub samples: usize,
    pub lambda_bound: f64,
    pub xi_bound: f64,
    /// Constants at the first sampled site, for the record.
    pub constants: StructuralConstants,
    /// Smallest `kappa` seen over sampled sites.
    pub min_kappa: f64,
    /// Largest `g` seen over sampled sites.
    pub max_g: f64,
    pub violations: Vec<Violation>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, c: Condition) -> usize {
        self.violations.iter().filter(|v| v.condition == c).count()
    }
}

/// Sampling box for the auditor: `|λ| <= 10`, `|ξ| <= 10`.
pub const AUDIT_BOUND: f64 = 10.0;

fn sample_vec(rng: &mut ChaCha8Rng, dim: usize, bound: f64) -> Vec2 {
    loop {
        let mut v = [0.0; 2];
        for x in v.iter_mut().take(dim) {
            *x = rng.gen_range(-bound..=bound);
        }
        if norm(v) <= bound {
            return v;
        }
    }
}

/// Samples `(x, λ, ξ, ζ)` tuples and checks the monotonicity,
/// coercivity/growth and Lipschitz conditions against the model's constants.
pub fn audit_assumptions(model: &dyn Flux, sample_count: usize, seed: u64) -> Result<AuditReport> {
    if sample_count == 0 {
        return Err(Error::invalid("sample_count must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = model.exponent();
    let dim = model.dim();
    let lb = AUDIT_BOUND;
    let slack = |scale: f64| 1e-9 * (1.0 + scale.abs());
    let mut violations = Vec::new();
    let mut first = None;
    let mut min_kappa = f64::INFINITY;
    let mut max_g = f64::NEG_INFINITY;

    for _ in 0..sample_count {
        let site = model.sample_site(&mut rng);
        let lam = rng.gen_range(-lb..=lb);
        let lam2 = rng.gen_range(-lb..=lb);
        let xi = sample_vec(&mut rng, dim, lb);
        let zeta = sample_vec(&mut rng, dim, lb);
        let k = model.constants(&site, lb);
        first.get_or_insert(k);
        min_kappa = min_kappa.min(k.kappa);
        max_g = max_g.max(k.g);
        let mut push = |condition, bound: f64, value: f64| {
            violations.push(Violation {
                condition,
                position: site.position,
                lam,
                lam2,
                xi,
                zeta,
                bound,
                value,
            })
        };

        let a_xi = model.eval(&site, lam, xi);
        let a_zeta = model.eval(&site, lam, zeta);
        let diff = [xi[0] - zeta[0], xi[1] - zeta[1]];
        if norm(diff) > 0.0 {
            let mono = dot([a_xi[0] - a_zeta[0], a_xi[1] - a_zeta[1]], diff);
            if !(mono > 0.0) {
                push(Condition::Monotonicity, 0.0, mono);
            }
        }

        let nxi = norm(xi);
        let coerc = dot(a_xi, xi);
        let lower = k.kappa + k.c1 * nxi.powf(p);
        if coerc < lower - slack(lower) {
            push(Condition::Coercivity, lower, coerc);
        }

        let upper = k.c2 * nxi.powf(p - 1.0) + k.c3 * lam.abs().powf(p - 1.0) + k.g;
        let size = norm(a_xi);
        if size > upper + slack(upper) {
            push(Condition::Growth, upper, size);
        }

        let a_lam2 = model.eval(&site, lam2, xi);
        let jump = norm([a_xi[0] - a_lam2[0], a_xi[1] - a_lam2[1]]);
        let lip = (k.c4 * nxi.powf(p - 1.0) + k.h) * (lam - lam2).abs();
        if jump > lip + slack(lip) {
            push(Condition::Lipschitz, lip, jump);
        }
    }

    Ok(AuditReport {
        samples: sample_count,
        lambda_bound: lb,
        xi_bound: lb,
        constants: first.expect("at least one sample"),
        min_kappa,
        max_g,
        violations,
    })
}

/// Lipschitz reaction `f` with `f(0) = 0`, or a non-decreasing power law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BaseReaction {
    Zero,
    /// `slope * v + pos_slope * v+`.
    Linear {
        slope: f64,
        pos_slope: f64,
    },
    /// `coef * |v|^(exponent - 1) * v`.
    Power {
        coef: f64,
        exponent: f64,
    },
}

impl BaseReaction {
    pub fn eval(&self, v: f64) -> f64 {
        match *self {
            BaseReaction::Zero => 0.0,
            BaseReaction::Linear { slope, pos_slope } => slope * v + pos_slope * v.max(0.0),
            BaseReaction::Power { coef, exponent } => coef * v.abs().powf(exponent - 1.0) * v,
        }
    }

    /// Lipschitz constant (infinite for sub-linear power laws).
    pub fn lipschitz(&self) -> f64 {
        match *self {
            BaseReaction::Zero => 0.0,
            BaseReaction::Linear { slope, pos_slope } => slope.abs().max((slope + pos_slope).abs()),
            BaseReaction::Power { coef, exponent } => {
                if exponent == 1.0 {
                    coef.abs()
                } else {
                    f64::INFINITY
                }
            }
        }
    }
}

/// Regularization of the power penalty at the origin.
pub const PENALTY_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PenaltyKind {
    /// `n v-`
    Linear,
    /// `n (v-)^exponent`, with `exponent = p - 1` in the sub-quadratic case,
    /// regularized as `n ((v-)² + ε²)^((exponent-1)/2) v-`.
    Power { exponent: f64 },
}

impl PenaltyKind {
    /// `pen(w)` for `w = v- >= 0`.
    pub fn value(&self, w: f64) -> f64 {
        match *self {
            PenaltyKind::Linear => w,
            PenaltyKind::Power { exponent } => {
                (w * w + PENALTY_EPS * PENALTY_EPS).powf(0.5 * (exponent - 1.0)) * w
            }
        }
    }

    /// `pen'(w)`, finite and positive.
    pub fn derivative(&self, w: f64) -> f64 {
        match *self {
            PenaltyKind::Linear => 1.0,
            PenaltyKind::Power { exponent } => {
                let e2 = PENALTY_EPS * PENALTY_EPS;
                (w * w + e2).powf(0.5 * (exponent - 3.0)) * (exponent * w * w + e2)
            }
        }
    }

    /// `∫_0^w pen`.
    pub fn potential(&self, w: f64) -> f64 {
        match *self {
            PenaltyKind::Linear => 0.5 * w * w,
            PenaltyKind::Power { exponent } => {
                let q1 = exponent + 1.0;
                ((w * w + PENALTY_EPS * PENALTY_EPS).powf(0.5 * q1) - PENALTY_EPS.powf(q1)) / q1
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReactionModel {
    pub base: BaseReaction,
    pub penalty: PenaltyKind,
    pub strength: f64,
}

impl ReactionModel {
    pub fn new(base: BaseReaction, penalty: PenaltyKind, strength: f64) -> Result<ReactionModel> {
        if !(strength >= 0.0 && strength.is_finite()) {
            return Err(Error::invalid("penalty strength must be >= 0"));
        }
        if let PenaltyKind::Power { exponent } = penalty {
            if !(exponent > 0.0) {
                return Err(Error::invalid("penalty exponent must be positive"));
            }
        }
        Ok(ReactionModel {
            base,
            penalty,
            strength,
        })
    }

    pub fn unpenalized(base: BaseReaction) -> ReactionModel {
        ReactionModel {
            base,
            penalty: PenaltyKind::Linear,
            strength: 0.0,
        }
    }

    pub fn with_strength(mut self, n: f64) -> ReactionModel {
        self.strength = n;
        self
    }

    /// `n * pen(v-)`, non-negative.
    pub fn penalty_term(&self, v: f64) -> f64 {
        self.strength * self.penalty.value((-v).max(0.0))
    }

    /// `d/dv [-(n pen(v-))]`, non-negative; zero on `v >= 0`.
    pub fn penalty_slope(&self, v: f64) -> f64 {
        if v >= 0.0 {
            0.0
        } else {
            self.strength * self.penalty.derivative(-v)
        }
    }

    /// `n ∫_0^(v-) pen`, so that `-d/dv` of it is `n pen(v-)`.
    pub fn penalty_potential(&self, v: f64) -> f64 {
        self.strength * self.penalty.potential((-v).max(0.0))
    }

    /// `f_n(v) = f(v) - n pen(v-)`.
    pub fn eval(&self, v: f64) -> f64 {
        self.base.eval(v) - self.penalty_term(v)
    }
}

/// C² approximation of the positive part:
/// `0` on `r < 0`, `-r⁴/(2δ³) + r³/δ²` on `[0, δ]`, `r - δ/2` on `r > δ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothPosApprox {
    delta: f64,
}

impl SmoothPosApprox {
    pub fn new(delta: f64) -> Result<SmoothPosApprox> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::invalid("delta must be positive"));
        }
        Ok(SmoothPosApprox { delta })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn value(&self, r: f64) -> f64 {
        let d = self.delta;
        if r < 0.0 {
            0.0
        } else if r <= d {
            -r.powi(4) / (2.0 * d.powi(3)) + r.powi(3) / (d * d)
        } else {
            r - d / 2.0
        }
    }

    pub fn derivative(&self, r: f64) -> f64 {
        let d = self.delta;
        if r < 0.0 {
            0.0
        } else if r <= d {
            -2.0 * r.powi(3) / d.powi(3) + 3.0 * r * r / (d * d)
        } else {
            1.0
        }
    }

    pub fn second_derivative(&self, r: f64) -> f64 {
        let d = self.delta;
        if (0.0..=d).contains(&r) {
            -6.0 * r * r / d.powi(3) + 6.0 * r / (d * d)
        } else {
            0.0
        }
    }
}
