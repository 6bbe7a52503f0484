//! Element gradients used by the time stepper.
//!
//! In 1D the elements are the `nx + 1` edges of the mesh (boundary ghosts
//! included). In 2D every cell of the mesh is split into a lower and an upper
//! right triangle, and the gradient is the P1 gradient on each triangle; for a
//! linear flux this reproduces the 5-point Laplacian. Every element component
//! is a two-point difference along one axis-aligned edge, so an edge flux can
//! be attached to it, which is how the finite-volume convection term is
//! expressed on the same elements.
//!
//! The pair (`gradients`, `divergence`) is adjoint under the nodal quadrature:
//! `(divergence(F), w) = -sum_e |e| F_e . grad_e(w)`.

use crate::grid::Grid;

/// An axis-aligned edge `tail -> head`; `None` is the zero boundary ring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub tail: Option<usize>,
    pub head: Option<usize>,
}

impl Edge {
    fn values(&self, u: &[f64]) -> (f64, f64) {
        (
            self.tail.map_or(0.0, |k| u[k]),
            self.head.map_or(0.0, |k| u[k]),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    /// Measure of the element.
    pub weight: f64,
    /// One edge per gradient component.
    pub edges: [Edge; 2],
    /// Interior vertices (used for coefficient averaging).
    pub vertices: Vec<usize>,
    pub centroid: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct Stencil {
    grid: Grid,
    elements: Vec<Element>,
}

impl Stencil {
    pub fn new(grid: &Grid) -> Stencil {
        let elements = if grid.dim() == 1 {
            line_elements(grid)
        } else {
            triangle_elements(grid)
        };
        Stencil {
            grid: *grid,
            elements,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn gradient_at(&self, e: usize, u: &[f64]) -> [f64; 2] {
        let el = &self.elements[e];
        let spacing = self.grid.spacing();
        let mut xi = [0.0; 2];
        for (c, x) in xi.iter_mut().enumerate().take(self.grid.dim()) {
            let (a, b) = el.edges[c].values(u);
            *x = (b - a) / spacing[c];
        }
        xi
    }

    pub fn gradients(&self, u: &[f64]) -> Vec<[f64; 2]> {
        (0..self.elements.len())
            .map(|e| self.gradient_at(e, u))
            .collect()
    }

    /// Edge values `(tail, head)` of component `c` of element `e`.
    pub fn edge_values(&self, e: usize, c: usize, u: &[f64]) -> (f64, f64) {
        self.elements[e].edges[c].values(u)
    }

    /// Nodal divergence of an element flux, negative adjoint of the element gradient.
    pub fn divergence(&self, flux: &[[f64; 2]]) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        self.accumulate_divergence(flux, 1.0, &mut out);
        out
    }

    /// `out += scale * divergence(flux)`.
    pub fn accumulate_divergence(&self, flux: &[[f64; 2]], scale: f64, out: &mut [f64]) {
        let spacing = self.grid.spacing();
        let vol = self.grid.cell_volume();
        for (el, f) in self.elements.iter().zip(flux) {
            for c in 0..self.grid.dim() {
                let coef = scale * el.weight * f[c] / (spacing[c] * vol);
                if let Some(h) = el.edges[c].head {
                    out[h] -= coef;
                }
                if let Some(t) = el.edges[c].tail {
                    out[t] += coef;
                }
            }
        }
    }

    /// `sum_e |e| |grad_e u|^p`.
    pub fn grad_lp_pow(&self, u: &[f64], p: f64) -> f64 {
        self.elements
            .iter()
            .enumerate()
            .map(|(e, el)| {
                let xi = self.gradient_at(e, u);
                el.weight * (xi[0] * xi[0] + xi[1] * xi[1]).sqrt().powf(p)
            })
            .sum()
    }

    /// Element-averaged value of a nodal coefficient over interior vertices.
    pub fn average(&self, e: usize, nodal: &[f64]) -> f64 {
        let v = &self.elements[e].vertices;
        v.iter().map(|&k| nodal[k]).sum::<f64>() / v.len() as f64
    }
}

fn line_elements(g: &Grid) -> Vec<Element> {
    let nx = g.nx();
    let h = g.h();
    (0..=nx)
        .map(|i| {
            let tail = i.checked_sub(1);
            let head = (i < nx).then_some(i);
            let none = Edge {
                tail: None,
                head: None,
            };
            Element {
                weight: h,
                edges: [Edge { tail, head }, none],
                vertices: tail.into_iter().chain(head).collect(),
                centroid: [(i as f64 + 0.5) * h, 0.0],
            }
        })
        .collect()
}

fn triangle_elements(g: &Grid) -> Vec<Element> {
    let (nx, ny) = (g.nx(), g.ny());
    let (h, hy) = (g.h(), g.hy());
    // lattice point (a, b), 0..=nx+1 by 0..=ny+1; interior when 1..=n
    let node = |a: usize, b: usize| -> Option<usize> {
        (a >= 1 && a <= nx && b >= 1 && b <= ny).then(|| (a - 1) + nx * (b - 1))
    };
    let weight = 0.5 * h * hy;
    let mut out = Vec::with_capacity(2 * (nx + 1) * (ny + 1));
    for b in 0..=ny {
        for a in 0..=nx {
            let corners = [(a, b), (a + 1, b), (a, b + 1)];
            let lower = Element {
                weight,
                edges: [
                    Edge {
                        tail: node(a, b),
                        head: node(a + 1, b),
                    },
                    Edge {
                        tail: node(a, b),
                        head: node(a, b + 1),
                    },
                ],
                vertices: corners.iter().filter_map(|&(p, q)| node(p, q)).collect(),
                centroid: [(a as f64 + 1.0 / 3.0) * h, (b as f64 + 1.0 / 3.0) * hy],
            };
            let corners = [(a + 1, b + 1), (a, b + 1), (a + 1, b)];
            let upper = Element {
                weight,
                edges: [
                    Edge {
                        tail: node(a, b + 1),
                        head: node(a + 1, b + 1),
                    },
                    Edge {
                        tail: node(a + 1, b),
                        head: node(a + 1, b + 1),
                    },
                ],
                vertices: corners.iter().filter_map(|&(p, q)| node(p, q)).collect(),
                centroid: [(a as f64 + 2.0 / 3.0) * h, (b as f64 + 2.0 / 3.0) * hy],
            };
            for el in [lower, upper] {
                if !el.vertices.is_empty() {
                    out.push(el);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Field;
    use proptest::prelude::*;

    #[test]
    fn linear_flux_gives_three_point_laplacian() {
        let g = Grid::build(1, &[1.0], 5, None, 1.0, 1).unwrap();
        let s = Stencil::new(&g);
        let u: Vec<f64> = (0..5).map(|i| (i as f64 * 0.7).sin()).collect();
        let lap = s.divergence(&s.gradients(&u));
        let h2 = g.h() * g.h();
        for i in 0..5 {
            let l = if i > 0 { u[i - 1] } else { 0.0 };
            let r = if i < 4 { u[i + 1] } else { 0.0 };
            let want = (l - 2.0 * u[i] + r) / h2;
            assert!((lap[i] - want).abs() < 1e-10, "{} vs {}", lap[i], want);
        }
    }

    #[test]
    fn linear_flux_gives_five_point_laplacian() {
        let g = Grid::build(2, &[1.0, 2.0], 4, Some(3), 1.0, 1).unwrap();
        let s = Stencil::new(&g);
        let u: Vec<f64> = (0..g.len()).map(|i| ((i * 7 % 5) as f64) - 1.3).collect();
        let lap = s.divergence(&s.gradients(&u));
        for n in 0..g.len() {
            let mut want = 0.0;
            for axis in 0..2 {
                let w = g.spacing()[axis];
                let f = g.neighbour(n, axis, 1).map_or(0.0, |k| u[k]);
                let b = g.neighbour(n, axis, -1).map_or(0.0, |k| u[k]);
                want += (f - 2.0 * u[n] + b) / (w * w);
            }
            assert!((lap[n] - want).abs() < 1e-9, "{} vs {}", lap[n], want);
        }
    }

    #[test]
    fn element_counts() {
        let g = Grid::build(1, &[1.0], 7, None, 1.0, 1).unwrap();
        assert_eq!(Stencil::new(&g).len(), 8);
        let g = Grid::build(2, &[1.0, 1.0], 3, Some(3), 1.0, 1).unwrap();
        // 16 cells, 32 triangles, minus the two corner triangles with only ghost vertices
        assert_eq!(Stencil::new(&g).len(), 30);
    }

    proptest! {
        #[test]
        fn element_pair_is_adjoint(nx in 2usize..6, ny in 2usize..6, seed in 0u64..1000) {
            let g = Grid::build(2, &[1.0, 0.8], nx, Some(ny), 1.0, 1).unwrap();
            let s = Stencil::new(&g);
            let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
            let mut next = || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            };
            let flux: Vec<[f64; 2]> = (0..s.len()).map(|_| [next(), next()]).collect();
            let w: Vec<f64> = (0..g.len()).map(|_| next()).collect();
            let div = Field::from_values(&g, s.divergence(&flux)).unwrap();
            let lhs = div.inner(&Field::from_values(&g, w.clone()).unwrap()).unwrap();
            let rhs: f64 = -s
                .elements()
                .iter()
                .enumerate()
                .map(|(e, el)| {
                    let xi = s.gradient_at(e, &w);
                    el.weight * (flux[e][0] * xi[0] + flux[e][1] * xi[1])
                })
                .sum::<f64>();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
