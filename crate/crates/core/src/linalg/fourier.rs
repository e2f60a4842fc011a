//! Constant-coefficient operators on doubly periodic grids, diagonal in the
//! discrete Fourier basis.

use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::LinalgError;

#[derive(Clone)]
struct Plans {
    fwd_x: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
}

/// Real symmetric operator given by a real symbol on an `nx * ny` periodic
/// grid, stored row-major with `x` fastest.
#[derive(Clone)]
pub struct FourierOp {
    nx: usize,
    ny: usize,
    symbol: Arc<Vec<f64>>,
    plans: Plans,
}

impl fmt::Debug for FourierOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FourierOp")
            .field("nx", &self.nx)
            .field("ny", &self.ny)
            .finish_non_exhaustive()
    }
}

impl FourierOp {
    pub fn new(nx: usize, ny: usize, symbol: Vec<f64>) -> Self {
        assert_eq!(symbol.len(), nx * ny);
        let mut planner = FftPlanner::new();
        let plans = Plans {
            fwd_x: planner.plan_fft_forward(nx),
            inv_x: planner.plan_fft_inverse(nx),
            fwd_y: planner.plan_fft_forward(ny),
            inv_y: planner.plan_fft_inverse(ny),
        };
        FourierOp { nx, ny, symbol: Arc::new(symbol), plans }
    }

    /// Symbol of the standard 5-point Laplacian with spacings `hx`, `hy`.
    pub fn laplacian(nx: usize, ny: usize, hx: f64, hy: f64) -> Self {
        let mut s = vec![0.0; nx * ny];
        for q in 0..ny {
            let sy = (std::f64::consts::PI * q as f64 / ny as f64).sin();
            for p in 0..nx {
                let sx = (std::f64::consts::PI * p as f64 / nx as f64).sin();
                s[q * nx + p] = -4.0 * sx * sx / (hx * hx) - 4.0 * sy * sy / (hy * hy);
            }
        }
        Self::new(nx, ny, s)
    }

    pub fn dim(&self) -> usize {
        self.nx * self.ny
    }

    pub fn symbol(&self) -> &[f64] {
        &self.symbol
    }

    fn with_symbol(&self, symbol: Vec<f64>) -> Self {
        FourierOp {
            nx: self.nx,
            ny: self.ny,
            symbol: Arc::new(symbol),
            plans: self.plans.clone(),
        }
    }

    pub fn map_symbol(&self, f: impl Fn(f64) -> f64) -> Self {
        self.with_symbol(self.symbol.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_symbol(
        &self,
        other: &FourierOp,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self, LinalgError> {
        if self.nx != other.nx || self.ny != other.ny {
            return Err(LinalgError::Incompatible("Fourier grids differ".into()));
        }
        Ok(self.with_symbol(
            self.symbol
                .iter()
                .zip(other.symbol.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        let (px, py) = if inverse {
            (&self.plans.inv_x, &self.plans.inv_y)
        } else {
            (&self.plans.fwd_x, &self.plans.fwd_y)
        };
        for row in buf.chunks_exact_mut(self.nx) {
            px.process(row);
        }
        if self.ny > 1 {
            let mut col = vec![Complex64::new(0.0, 0.0); self.ny];
            for p in 0..self.nx {
                for q in 0..self.ny {
                    col[q] = buf[q * self.nx + p];
                }
                py.process(&mut col);
                for q in 0..self.ny {
                    buf[q * self.nx + p] = col[q];
                }
            }
        }
    }

    fn multiply(&self, x: &[f64], y: &mut [f64], f: impl Fn(f64) -> f64) {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, false);
        for (b, &s) in buf.iter_mut().zip(self.symbol.iter()) {
            *b *= f(s);
        }
        self.transform(&mut buf, true);
        let scale = 1.0 / (self.nx * self.ny) as f64;
        for (yi, b) in y.iter_mut().zip(&buf) {
            *yi = b.re * scale;
        }
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.multiply(x, y, |s| s);
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if self.symbol.iter().any(|&s| s == 0.0 || !s.is_finite()) {
            return Err(LinalgError::Singular);
        }
        let mut out = vec![0.0; rhs.len()];
        self.multiply(rhs, &mut out, |s| 1.0 / s);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn laplacian_symbol_matches_stencil() {
        let (nx, ny) = (8, 6);
        let (hx, hy) = (0.3, 0.5);
        let op = FourierOp::laplacian(nx, ny, hx, hy);
        let u: Vec<f64> = (0..nx * ny).map(|i| ((i * 7 % 11) as f64).cos()).collect();
        let mut y = vec![0.0; nx * ny];
        op.apply(&u, &mut y);
        for q in 0..ny {
            for p in 0..nx {
                let at = |pp: usize, qq: usize| u[(qq % ny) * nx + (pp % nx)];
                let lap = (at(p + 1, q) - 2.0 * at(p, q) + at(p + nx - 1, q)) / (hx * hx)
                    + (at(p, q + 1) - 2.0 * at(p, q) + at(p, q + ny - 1)) / (hy * hy);
                assert!((lap - y[q * nx + p]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn solve_inverts_apply() {
        let op = FourierOp::laplacian(16, 16, 0.1, 0.1).map_symbol(|s| 1.0 - s);
        let u: Vec<f64> = (0..256).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut y = vec![0.0; 256];
        op.apply(&u, &mut y);
        let back = op.solve(&y).unwrap();
        for (a, b) in u.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
