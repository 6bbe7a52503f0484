//! Uniform tensor grids on a box and the grid functions that live on them.
//!
//! Only interior nodes are stored. The boundary ring is an implicit zero
//! ghost layer, so every scalar field is a homogeneous Dirichlet field by
//! construction. Quadrature is the nodal rectangle rule with weight `h^d`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Space-time mesh over `(0, T) x D` with `D = (0, Lx) [x (0, Ly)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    extent: [f64; 2],
    nx: usize,
    ny: usize,
    h: f64,
    hy: f64,
    t_final: f64,
    nt: usize,
    dt: f64,
}

impl Grid {
    /// Builds a grid with `nx` (and `ny`) interior nodes per axis and `nt`
    /// uniform time steps. `extent` holds one side length per dimension.
    pub fn build(
        dim: usize,
        extent: &[f64],
        nx: usize,
        ny: Option<usize>,
        t_final: f64,
        nt: usize,
    ) -> Result<Grid> {
        if dim != 1 && dim != 2 {
            return Err(Error::invalid(format!("dim must be 1 or 2, got {dim}")));
        }
        if extent.len() != dim {
            return Err(Error::invalid(format!(
                "extent needs {dim} side lengths, got {}",
                extent.len()
            )));
        }
        if extent.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::invalid("extent must be positive"));
        }
        if nx < 2 {
            return Err(Error::invalid("nx too small"));
        }
        let ny = if dim == 2 {
            match ny {
                Some(n) if n >= 2 => n,
                Some(_) => return Err(Error::invalid("ny too small")),
                None => return Err(Error::invalid("ny required for dim = 2")),
            }
        } else {
            1
        };
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(Error::invalid("T must be positive"));
        }
        if nt < 1 {
            return Err(Error::invalid("nt too small"));
        }
        let ly = if dim == 2 { extent[1] } else { 1.0 };
        Ok(Grid {
            dim,
            extent: [extent[0], ly],
            nx,
            ny,
            h: extent[0] / (nx + 1) as f64,
            hy: if dim == 2 { ly / (ny + 1) as f64 } else { 1.0 },
            t_final,
            nt,
            dt: t_final / nt as f64,
        })
    }

    /// Same spatial mesh and step size, truncated (or extended) to `steps` steps.
    pub fn with_steps(&self, steps: usize) -> Grid {
        Grid {
            nt: steps,
            t_final: steps as f64 * self.dt,
            ..*self
        }
    }

    /// Same spatial mesh over `(0, t_final)` with `nt` steps.
    pub fn with_time(&self, t_final: f64, nt: usize) -> Result<Grid> {
        let ny = (self.dim == 2).then_some(self.ny);
        Grid::build(self.dim, self.extent(), self.nx, ny, t_final, nt)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extent(&self) -> &[f64] {
        &self.extent[..self.dim]
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    /// Interior node count along y (1 in one dimension).
    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Mesh width along y (1 in one dimension, so `h * hy` is always the cell volume).
    pub fn hy(&self) -> f64 {
        self.hy
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Mesh widths per axis.
    pub fn spacing(&self) -> [f64; 2] {
        [self.h, self.hy]
    }

    /// Number of interior nodes.
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Quadrature weight `h^d` of one node.
    pub fn cell_volume(&self) -> f64 {
        self.h * self.hy
    }

    /// Lebesgue measure of `D`.
    pub fn domain_volume(&self) -> f64 {
        self.extent().iter().product()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        i + self.nx * j
    }

    /// `(i, j)` lattice coordinates of a flat node index.
    pub fn coords(&self, node: usize) -> (usize, usize) {
        (node % self.nx, node / self.nx)
    }

    /// Physical position of an interior node (second entry unused in 1D).
    pub fn position(&self, node: usize) -> [f64; 2] {
        let (i, j) = self.coords(node);
        [
            (i + 1) as f64 * self.h,
            if self.dim == 2 {
                (j + 1) as f64 * self.hy
            } else {
                0.0
            },
        ]
    }

    pub fn time(&self, level: usize) -> f64 {
        level as f64 * self.dt
    }

    /// Neighbour of `node` along `axis` shifted by `offset` (`+1`/`-1`);
    /// `None` means the zero boundary ring.
    pub fn neighbour(&self, node: usize, axis: usize, offset: isize) -> Option<usize> {
        let (i, j) = self.coords(node);
        let (pos, len) = if axis == 0 {
            (i, self.nx)
        } else {
            (j, self.ny)
        };
        let moved = pos as isize + offset;
        if moved < 0 || moved >= len as isize {
            return None;
        }
        let moved = moved as usize;
        Some(if axis == 0 {
            self.index(moved, j)
        } else {
            self.index(i, moved)
        })
    }

    /// Same spatial mesh (time axis ignored).
    pub fn same_space(&self, other: &Grid) -> bool {
        self.dim == other.dim
            && self.nx == other.nx
            && self.ny == other.ny
            && self.extent == other.extent
    }

    pub(crate) fn check_same_space(&self, other: &Grid) -> Result<()> {
        if self.same_space(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{}x{} vs {}x{}",
                self.nx, self.ny, other.nx, other.ny
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FieldKind {
    Scalar,
    /// Vector data with one component per space dimension.
    Vector(usize),
}

impl FieldKind {
    fn name(&self) -> &'static str {
        match self {
            FieldKind::Scalar => "scalar",
            FieldKind::Vector(_) => "vector",
        }
    }

    fn components(&self) -> usize {
        match self {
            FieldKind::Scalar => 1,
            FieldKind::Vector(c) => *c,
        }
    }
}

/// Which norm [`Field::norm`] computes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Norm {
    L1,
    Lp(f64),
    L2,
    Linf,
    /// `(sum |grad f|^p h^d)^(1/p)` with the centered gradient.
    W1p(f64),
}

/// Nodal values on the interior of a [`Grid`]. Vector data is stored
/// component-major: component `c` of node `i` is `values[c * len + i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    grid: Grid,
    kind: FieldKind,
    values: Vec<f64>,
    time_index: Option<usize>,
}

impl Field {
    pub fn zeros(grid: &Grid) -> Field {
        Field {
            grid: *grid,
            kind: FieldKind::Scalar,
            values: vec![0.0; grid.len()],
            time_index: None,
        }
    }

    pub fn vector_zeros(grid: &Grid) -> Field {
        Field {
            grid: *grid,
            kind: FieldKind::Vector(grid.dim()),
            values: vec![0.0; grid.len() * grid.dim()],
            time_index: None,
        }
    }

    pub fn constant(grid: &Grid, value: f64) -> Field {
        Field {
            values: vec![value; grid.len()],
            ..Field::zeros(grid)
        }
    }

    /// Samples `f` at interior node positions. `f` receives `[x]` or `[x, y]`.
    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> Field {
        let dim = grid.dim();
        let values = (0..grid.len())
            .map(|n| f(&grid.position(n)[..dim]))
            .collect();
        Field {
            values,
            ..Field::zeros(grid)
        }
    }

    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<Field> {
        if values.len() != grid.len() {
            return Err(Error::invalid(format!(
                "expected {} nodal values, got {}",
                grid.len(),
                values.len()
            )));
        }
        let field = Field {
            values,
            ..Field::zeros(grid)
        };
        field.check_finite()?;
        Ok(field)
    }

    pub fn vector_from_values(grid: &Grid, values: Vec<f64>) -> Result<Field> {
        if values.len() != grid.len() * grid.dim() {
            return Err(Error::invalid("vector field length mismatch"));
        }
        let field = Field {
            values,
            ..Field::vector_zeros(grid)
        };
        field.check_finite()?;
        Ok(field)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn time_index(&self) -> Option<usize> {
        self.time_index
    }

    pub fn at_time(mut self, level: usize) -> Field {
        self.time_index = Some(level);
        self
    }

    /// Component `c` of a vector field (the whole field for scalars).
    pub fn component(&self, c: usize) -> &[f64] {
        let n = self.grid.len();
        &self.values[c * n..(c + 1) * n]
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFinite(format!("field value at index {i}"))),
            None => Ok(()),
        }
    }

    fn require_scalar(&self) -> Result<()> {
        match self.kind {
            FieldKind::Scalar => Ok(()),
            k => Err(Error::KindMismatch {
                expected: "scalar",
                found: k.name(),
            }),
        }
    }

    fn require_vector(&self) -> Result<()> {
        match self.kind {
            FieldKind::Vector(_) => Ok(()),
            k => Err(Error::KindMismatch {
                expected: "vector",
                found: k.name(),
            }),
        }
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn scaled(&self, c: f64) -> Field {
        self.map(|v| c * v)
    }

    /// `self + c * other`.
    pub fn add_scaled(&self, c: f64, other: &Field) -> Result<Field> {
        self.grid.check_same_space(&other.grid)?;
        if self.kind != other.kind {
            return Err(Error::KindMismatch {
                expected: self.kind.name(),
                found: other.kind.name(),
            });
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + c * b)
            .collect();
        Ok(Field {
            values,
            ..self.clone()
        })
    }

    /// Discrete L2 inner product with the nodal quadrature.
    pub fn inner(&self, other: &Field) -> Result<f64> {
        self.grid.check_same_space(&other.grid)?;
        if self.values.len() != other.values.len() {
            return Err(Error::KindMismatch {
                expected: self.kind.name(),
                found: other.kind.name(),
            });
        }
        let s: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum();
        Ok(s * self.grid.cell_volume())
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Pointwise Euclidean magnitude (absolute value for scalars).
    fn magnitudes(&self) -> Vec<f64> {
        let n = self.grid.len();
        let comps = self.kind.components();
        (0..n)
            .map(|i| {
                (0..comps)
                    .map(|c| self.values[c * n + i].powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }

    /// Centered differences `(f[i+1] - f[i-1]) / 2h` per axis, with the zero
    /// boundary ring supplying missing neighbours.
    pub fn gradient(&self) -> Result<Field> {
        self.require_scalar()?;
        let g = &self.grid;
        let n = g.len();
        let mut out = vec![0.0; n * g.dim()];
        for axis in 0..g.dim() {
            let width = g.spacing()[axis];
            for node in 0..n {
                let fwd = g.neighbour(node, axis, 1).map_or(0.0, |k| self.values[k]);
                let bwd = g.neighbour(node, axis, -1).map_or(0.0, |k| self.values[k]);
                out[axis * n + node] = (fwd - bwd) / (2.0 * width);
            }
        }
        Ok(Field {
            grid: *g,
            kind: FieldKind::Vector(g.dim()),
            values: out,
            time_index: self.time_index,
        })
    }

    /// Negative adjoint of [`Field::gradient`] under the nodal quadrature:
    /// `(div g, w) = -(g, grad w)` for every scalar `w`.
    pub fn divergence(&self) -> Result<Field> {
        self.require_vector()?;
        let g = &self.grid;
        let n = g.len();
        let mut out = vec![0.0; n];
        for axis in 0..g.dim() {
            let width = g.spacing()[axis];
            let comp = self.component(axis);
            for (node, o) in out.iter_mut().enumerate() {
                let fwd = g.neighbour(node, axis, 1).map_or(0.0, |k| comp[k]);
                let bwd = g.neighbour(node, axis, -1).map_or(0.0, |k| comp[k]);
                *o += (fwd - bwd) / (2.0 * width);
            }
        }
        Ok(Field {
            grid: *g,
            kind: FieldKind::Scalar,
            values: out,
            time_index: self.time_index,
        })
    }

    pub fn norm(&self, which: Norm) -> Result<f64> {
        let w = self.grid.cell_volume();
        let check_p = |p: f64| {
            if p >= 1.0 && p.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!(
                    "norm exponent must be >= 1, got {p}"
                )))
            }
        };
        match which {
            Norm::L1 => Ok(self.magnitudes().iter().sum::<f64>() * w),
            Norm::L2 => Ok((self.magnitudes().iter().map(|m| m * m).sum::<f64>() * w).sqrt()),
            Norm::Lp(p) => {
                check_p(p)?;
                Ok((self.magnitudes().iter().map(|m| m.powf(p)).sum::<f64>() * w).powf(1.0 / p))
            }
            Norm::Linf => Ok(self.magnitudes().into_iter().fold(0.0, f64::max)),
            Norm::W1p(p) => {
                check_p(p)?;
                self.gradient()?.norm(Norm::Lp(p))
            }
        }
    }

    /// `(f+, f-)` with `f = f+ - f-` and `f+ * f- = 0` nodewise.
    pub fn pos_neg_parts(&self) -> Result<(Field, Field)> {
        self.require_scalar()?;
        Ok((self.map(|v| v.max(0.0)), self.map(|v| (-v).max(0.0))))
    }

    pub fn positive_part(&self) -> Field {
        self.map(|v| v.max(0.0))
    }

    pub fn negative_part(&self) -> Field {
        self.map(|v| (-v).max(0.0))
    }

    /// Nodewise `T_K(r) = max(-K, min(r, K))`.
    pub fn truncate(&self, k: f64) -> Result<Field> {
        if !(k > 0.0) {
            return Err(Error::invalid(format!(
                "truncation level must be positive, got {k}"
            )));
        }
        Ok(self.map(|v| truncate(v, k)))
    }
}

/// Scalar truncation `T_K`.
pub fn truncate(r: f64, k: f64) -> f64 {
    (-k).max(r.min(k))
}

/// One [`Field`] per time level `0..=nt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeField {
    grid: Grid,
    levels: Vec<Field>,
}

impl SpaceTimeField {
    pub fn new(grid: &Grid, levels: Vec<Field>) -> Result<SpaceTimeField> {
        for f in &levels {
            grid.check_same_space(f.grid())?;
        }
        Ok(SpaceTimeField {
            grid: *grid,
            levels,
        })
    }

    /// Samples `f(t, x)` at every time level and interior node.
    pub fn from_fn(grid: &Grid, f: impl Fn(f64, &[f64]) -> f64) -> SpaceTimeField {
        let levels = (0..=grid.nt())
            .map(|j| {
                let t = grid.time(j);
                Field::from_fn(grid, |x| f(t, x)).at_time(j)
            })
            .collect();
        SpaceTimeField {
            grid: *grid,
            levels,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn levels(&self) -> &[Field] {
        &self.levels
    }

    pub fn level(&self, j: usize) -> &Field {
        &self.levels[j]
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn last(&self) -> Option<&Field> {
        self.levels.last()
    }

    pub(crate) fn push(&mut self, f: Field) {
        self.levels.push(f);
    }
}
