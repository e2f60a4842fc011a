//! Uniform grids, quadrature weights and conservative finite-difference
//! stencils.
//!
//! All stencils are built from one edge list so that the discrete energy
//! `1/2 sum_e c_e (u_j - u_i)^2` and the operator `div(a grad u)` are exact
//! gradients/adjoints of each other in the weighted inner product.

use crate::linalg::{BandMatrix, FourierOp, LinalgError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Boundary {
    Periodic,
    /// Reflecting (mirror ghost) boundary.
    Neumann,
    /// Boundary nodes are stored and held at their initial values.
    Dirichlet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub dim: usize,
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    /// Nodes per axis (`n[1] == 1` in 1D).
    pub n: [usize; 2],
    pub h: [f64; 2],
    pub boundary: Boundary,
    weights: Vec<f64>,
}

/// Edge between nodes `i` and `j` with coefficient `c` such that
/// `grad_energy = 1/2 sum c (u_j - u_i)^2`.
#[derive(Debug, Clone, Copy)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub c: f64,
}

impl Grid {
    pub fn new_1d(lo: f64, hi: f64, n: usize, boundary: Boundary) -> Self {
        Self::build(1, [lo, 0.0], [hi, 0.0], [n, 1], boundary)
    }

    pub fn new_2d(lo: f64, hi: f64, n: usize, boundary: Boundary) -> Self {
        Self::build(2, [lo, lo], [hi, hi], [n, n], boundary)
    }

    fn build(dim: usize, lo: [f64; 2], hi: [f64; 2], n: [usize; 2], boundary: Boundary) -> Self {
        assert!(n[0] >= 3 && (dim == 1 || n[1] >= 3), "grid too small");
        let spacing = |a: usize| {
            let len = hi[a] - lo[a];
            match boundary {
                Boundary::Periodic => len / n[a] as f64,
                _ => len / (n[a] - 1) as f64,
            }
        };
        let h = [spacing(0), if dim == 2 { spacing(1) } else { 1.0 }];
        let mut g = Grid { dim, lo, hi, n, h, boundary, weights: Vec::new() };
        let mut w = vec![0.0; g.len()];
        for iy in 0..n[1] {
            for ix in 0..n[0] {
                w[iy * n[0] + ix] = g.axis_weight(0, ix) * g.axis_weight(1, iy);
            }
        }
        g.weights = w;
        g
    }

    pub fn len(&self) -> usize {
        self.n[0] * self.n[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// One-dimensional trapezoid factor along axis `a`.
    fn axis_weight(&self, a: usize, i: usize) -> f64 {
        if a >= self.dim {
            return 1.0;
        }
        match self.boundary {
            Boundary::Periodic => self.h[a],
            _ if i == 0 || i == self.n[a] - 1 => 0.5 * self.h[a],
            _ => self.h[a],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn coord(&self, a: usize, i: usize) -> f64 {
        self.lo[a] + i as f64 * self.h[a]
    }

    /// Coordinates of node `idx` (`y = 0` in 1D).
    pub fn point(&self, idx: usize) -> (f64, f64) {
        let ix = idx % self.n[0];
        let iy = idx / self.n[0];
        (self.coord(0, ix), if self.dim == 2 { self.coord(1, iy) } else { 0.0 })
    }

    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                let (x, y) = self.point(i);
                f(x, y)
            })
            .collect()
    }

    /// Whether node `idx` is a held boundary node.
    pub fn is_fixed(&self, idx: usize) -> bool {
        if self.boundary != Boundary::Dirichlet {
            return false;
        }
        let ix = idx % self.n[0];
        let iy = idx / self.n[0];
        ix == 0 || ix == self.n[0] - 1 || (self.dim == 2 && (iy == 0 || iy == self.n[1] - 1))
    }

    pub fn edges(&self) -> Vec<Edge> {
        let mut out = Vec::new();
        let periodic = self.boundary == Boundary::Periodic;
        for a in 0..self.dim {
            let other = 1 - a;
            for iy in 0..self.n[1] {
                for ix in 0..self.n[0] {
                    let (ia, io) = if a == 0 { (ix, iy) } else { (iy, ix) };
                    let next = if ia + 1 < self.n[a] {
                        ia + 1
                    } else if periodic {
                        0
                    } else {
                        continue;
                    };
                    let j = if a == 0 { iy * self.n[0] + next } else { next * self.n[0] + ix };
                    let c = self.axis_weight(other, io) / self.h[a];
                    out.push(Edge { i: iy * self.n[0] + ix, j, c });
                }
            }
        }
        out
    }

    /// Same grid with each spacing divided by `factor` (compatible nodes).
    pub fn refined(&self, factor: usize) -> Grid {
        let n = |a: usize| {
            if a >= self.dim {
                1
            } else if self.boundary == Boundary::Periodic {
                self.n[a] * factor
            } else {
                (self.n[a] - 1) * factor + 1
            }
        };
        Self::build(self.dim, self.lo, self.hi, [n(0), n(1)], self.boundary)
    }

    /// Restricts a field on `self.refined(factor)` to the nodes of `self`.
    pub fn inject(&self, fine: &[f64], factor: usize) -> Vec<f64> {
        let fine_nx = if self.boundary == Boundary::Periodic {
            self.n[0] * factor
        } else {
            (self.n[0] - 1) * factor + 1
        };
        (0..self.len())
            .map(|idx| {
                let ix = idx % self.n[0];
                let iy = idx / self.n[0];
                fine[iy * factor * fine_nx + ix * factor]
            })
            .collect()
    }

    /// Discrete L2 norm with the plain `h^d` cell measure.
    pub fn l2_error(&self, a: &[f64], b: &[f64]) -> f64 {
        let cell = self.h[0] * if self.dim == 2 { self.h[1] } else { 1.0 };
        (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() * cell).sqrt()
    }
}

/// Face coefficient: arithmetic mean of the nodal values.
fn face(a: &[f64], e: &Edge) -> f64 {
    0.5 * (a[e.i] + a[e.j])
}

/// `int 1/2 |grad u|^2`.
pub fn grad_sq_energy(grid: &Grid, u: &[f64]) -> f64 {
    grid.edges()
        .iter()
        .map(|e| 0.5 * e.c * (u[e.j] - u[e.i]).powi(2))
        .sum()
}

/// `div(a grad u)` with face-averaged coefficients; zero on held nodes.
pub fn divergence_of_flux(grid: &Grid, a: &[f64], u: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; grid.len()];
    for e in grid.edges() {
        let flux = e.c * face(a, &e) * (u[e.j] - u[e.i]);
        out[e.i] += flux;
        out[e.j] -= flux;
    }
    let w = grid.weights();
    for (idx, o) in out.iter_mut().enumerate() {
        *o = if grid.is_fixed(idx) { 0.0 } else { *o / w[idx] };
    }
    out
}

pub fn laplacian(grid: &Grid, u: &[f64]) -> Vec<f64> {
    divergence_of_flux(grid, &vec![1.0; grid.len()], u)
}

/// Banded matrix of `div(a grad .)` on a 1D grid; held rows are zero.
pub fn divergence_band(grid: &Grid, a: &[f64]) -> Result<BandMatrix, LinalgError> {
    assert_eq!(grid.dim, 1, "banded stencils are one-dimensional");
    let periodic = grid.boundary == Boundary::Periodic;
    let n = grid.len();
    let mut m = BandMatrix::zeros(n, 1, periodic)?;
    let w = grid.weights();
    for e in grid.edges() {
        let c = e.c * face(a, &e);
        // Offset from i to j is +1, or -(n-1) == +1 mod n across the wrap.
        if !grid.is_fixed(e.i) {
            m.add(e.i, 0, -c / w[e.i]);
            m.add(e.i, 1, c / w[e.i]);
        }
        if !grid.is_fixed(e.j) {
            m.add(e.j, 0, -c / w[e.j]);
            m.add(e.j, -1, c / w[e.j]);
        }
    }
    Ok(m)
}

/// Fourier symbol of the Laplacian on a doubly periodic 2D grid.
pub fn laplacian_fourier(grid: &Grid) -> FourierOp {
    assert!(grid.dim == 2 && grid.boundary == Boundary::Periodic);
    FourierOp::laplacian(grid.n[0], grid.n[1], grid.h[0], grid.h[1])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(g: &Grid) -> Vec<f64> {
        g.sample(|x, y| (1.3 * x).sin() + 0.4 * (0.7 * y + 0.2).cos() + 0.1 * x * y)
    }

    #[test]
    fn laplacian_is_gradient_of_energy() {
        for g in [
            Grid::new_1d(-1.0, 2.0, 17, Boundary::Neumann),
            Grid::new_1d(-1.0, 2.0, 17, Boundary::Periodic),
            Grid::new_2d(-1.0, 1.0, 9, Boundary::Neumann),
            Grid::new_2d(-1.0, 1.0, 8, Boundary::Periodic),
        ] {
            let u = field(&g);
            let lap = laplacian(&g, &u);
            let v = g.sample(|x, y| (2.0 * x + y).cos());
            let h = 1e-6;
            let up: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + h * b).collect();
            let um: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - h * b).collect();
            let fd = (grad_sq_energy(&g, &up) - grad_sq_energy(&g, &um)) / (2.0 * h);
            let an: f64 = -lap.iter().zip(&v).zip(g.weights()).map(|((l, v), w)| l * v * w).sum::<f64>();
            assert!((fd - an).abs() < 1e-7 * (1.0 + an.abs()), "{fd} vs {an}");
        }
    }

    #[test]
    fn band_matches_stencil() {
        for b in [Boundary::Neumann, Boundary::Periodic, Boundary::Dirichlet] {
            let g = Grid::new_1d(0.0, 1.0, 12, b);
            let a = g.sample(|x, _| 1.0 + x * x);
            let u = field(&g);
            let m = divergence_band(&g, &a).unwrap();
            let mut y = vec![0.0; g.len()];
            m.apply(&u, &mut y);
            let s = divergence_of_flux(&g, &a, &u);
            for (p, q) in y.iter().zip(&s) {
                assert!((p - q).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn neumann_laplacian_of_quadratic() {
        let g = Grid::new_1d(0.0, 1.0, 11, Boundary::Neumann);
        let u = g.sample(|x, _| x * x);
        let lap = laplacian(&g, &u);
        for v in &lap[1..10] {
            assert!((v - 2.0).abs() < 1e-10);
        }
    }

    #[test]
    fn injection_picks_coarse_nodes() {
        let g = Grid::new_1d(-1.0, 1.0, 5, Boundary::Neumann);
        let f = g.refined(4);
        let vals = f.sample(|x, _| x);
        let back = g.inject(&vals, 4);
        for (i, v) in back.iter().enumerate() {
            assert!((v - g.coord(0, i)).abs() < 1e-14);
        }
        let gp = Grid::new_2d(0.0, 1.0, 4, Boundary::Periodic);
        let fp = gp.refined(2);
        let vals = fp.sample(|x, y| x + 10.0 * y);
        let back = gp.inject(&vals, 2);
        for (i, v) in back.iter().enumerate() {
            let (x, y) = gp.point(i);
            assert!((v - (x + 10.0 * y)).abs() < 1e-12);
        }
    }
}
