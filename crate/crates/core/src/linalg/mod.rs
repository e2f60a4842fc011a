//! Linear operators used by stage systems and metrics.

mod band;
mod fourier;

pub use band::{BandLu, BandMatrix};
pub use fourier::FourierOp;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("singular linear system")]
    Singular,
    #[error("incompatible operators: {0}")]
    Incompatible(String),
    #[error("periodic band of half-width {bw} does not fit {n} unknowns")]
    BandTooWide { n: usize, bw: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("conjugate gradient stalled at relative residual {residual:e} after {iterations} iterations")]
    CgNotConverged { residual: f64, iterations: usize },
}

/// A linear operator in one of the representations the solvers understand.
#[derive(Debug, Clone)]
pub enum Operator {
    /// `c * I` on `n` unknowns.
    Scalar { n: usize, c: f64 },
    Band(BandMatrix),
    Fourier(FourierOp),
}

impl Operator {
    pub fn identity(n: usize) -> Self {
        Operator::Scalar { n, c: 1.0 }
    }

    pub fn dim(&self) -> usize {
        match self {
            Operator::Scalar { n, .. } => *n,
            Operator::Band(b) => b.dim(),
            Operator::Fourier(f) => f.dim(),
        }
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        match self {
            Operator::Scalar { c, .. } => {
                for (yi, xi) in y.iter_mut().zip(x) {
                    *yi = c * xi;
                }
            }
            Operator::Band(b) => b.apply(x, y),
            Operator::Fourier(f) => f.apply(x, y),
        }
    }

    pub fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        self.apply(x, &mut y);
        y
    }

    fn check_dim(&self, other: &Operator) -> Result<(), LinalgError> {
        if self.dim() != other.dim() {
            return Err(LinalgError::Dimension {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(())
    }

    /// The product `self * other`.
    pub fn compose(&self, other: &Operator) -> Result<Operator, LinalgError> {
        self.check_dim(other)?;
        use Operator::*;
        Ok(match (self, other) {
            (Scalar { n, c }, Scalar { c: d, .. }) => Scalar { n: *n, c: c * d },
            (Scalar { c, .. }, op) | (op, Scalar { c, .. }) => op.scaled(*c),
            (Band(a), Band(b)) => Band(a.matmul(b)?),
            (Fourier(a), Fourier(b)) => Fourier(a.zip_symbol(b, |p, q| p * q)?),
            _ => {
                return Err(LinalgError::Incompatible(
                    "cannot compose banded and Fourier operators".into(),
                ))
            }
        })
    }

    pub fn scaled(&self, c: f64) -> Operator {
        match self {
            Operator::Scalar { n, c: d } => Operator::Scalar { n: *n, c: c * d },
            Operator::Band(b) => Operator::Band(
                b.lincomb(c, b, 0.0).expect("a band is compatible with itself"),
            ),
            Operator::Fourier(f) => Operator::Fourier(f.map_symbol(|s| c * s)),
        }
    }

    /// `a * self + b * other`.
    pub fn lincomb(&self, a: f64, other: &Operator, b: f64) -> Result<Operator, LinalgError> {
        self.check_dim(other)?;
        use Operator::*;
        Ok(match (self, other) {
            (Scalar { n, c }, Scalar { c: d, .. }) => Scalar { n: *n, c: a * c + b * d },
            (Scalar { c, .. }, op) => op.scaled(b).shifted(a * c),
            (op, Scalar { c, .. }) => op.scaled(a).shifted(b * c),
            (Band(x), Band(y)) => Band(x.lincomb(a, y, b)?),
            (Fourier(x), Fourier(y)) => Fourier(x.zip_symbol(y, |p, q| a * p + b * q)?),
            _ => {
                return Err(LinalgError::Incompatible(
                    "cannot add banded and Fourier operators".into(),
                ))
            }
        })
    }

    /// `self + c * I`.
    pub fn shifted(&self, c: f64) -> Operator {
        match self {
            Operator::Scalar { n, c: d } => Operator::Scalar { n: *n, c: d + c },
            Operator::Band(b) => {
                let mut b = b.clone();
                b.shift(c);
                Operator::Band(b)
            }
            Operator::Fourier(f) => Operator::Fourier(f.map_symbol(|s| s + c)),
        }
    }

    /// Upper bound on the spectral radius: Gershgorin row sums for bands,
    /// the largest symbol magnitude for Fourier operators.
    pub fn spectral_bound(&self) -> f64 {
        match self {
            Operator::Scalar { c, .. } => c.abs(),
            Operator::Band(b) => (0..b.dim())
                .map(|i| b.offsets().map(|d| b.get(i, d).abs()).sum::<f64>())
                .fold(0.0, f64::max),
            Operator::Fourier(f) => f.symbol().iter().fold(0.0f64, |a, s| a.max(s.abs())),
        }
    }

    /// Direct solve.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if rhs.len() != self.dim() {
            return Err(LinalgError::Dimension {
                expected: self.dim(),
                found: rhs.len(),
            });
        }
        match self {
            Operator::Scalar { c, .. } => {
                if *c == 0.0 {
                    return Err(LinalgError::Singular);
                }
                Ok(rhs.iter().map(|v| v / c).collect())
            }
            Operator::Band(b) => b.solve(rhs),
            Operator::Fourier(f) => f.solve(rhs),
        }
    }
}

/// Strategy for stage linear systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinearSolver {
    /// Banded LU, FFT division or scalar division, depending on the operator.
    #[default]
    Direct,
    /// Conjugate gradients in the weighted inner product; for operators that
    /// are symmetric positive definite in that inner product.
    Cg,
}

pub const CG_REL_TOL: f64 = 1e-13;

/// Solves `op x = rhs` and returns the solution and an iteration count (one
/// for direct solves).
pub fn solve_with(
    op: &Operator,
    rhs: &[f64],
    weights: &[f64],
    solver: LinearSolver,
) -> Result<(Vec<f64>, usize), LinalgError> {
    match solver {
        LinearSolver::Direct => Ok((op.solve(rhs)?, 1)),
        LinearSolver::Cg => {
            let mut x = vec![0.0; rhs.len()];
            let its = conjugate_gradient(
                |v, out| op.apply(v, out),
                rhs,
                &mut x,
                weights,
                CG_REL_TOL,
                10 * rhs.len().max(10),
            )?;
            Ok((x, its))
        }
    }
}

pub fn weighted_dot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, a), b)| w * a * b).sum()
}

/// Conjugate gradients for an operator self-adjoint in the inner product
/// weighted by `w`. Stops when the weighted residual norm drops below
/// `rel_tol` times that of `rhs`.
pub fn conjugate_gradient(
    apply: impl Fn(&[f64], &mut [f64]),
    rhs: &[f64],
    x: &mut [f64],
    w: &[f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<usize, LinalgError> {
    let n = rhs.len();
    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let bnorm = weighted_dot(w, rhs, rhs).sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0);
    }
    let mut rr = weighted_dot(w, &r, &r);
    for it in 0..max_iter {
        if rr.sqrt() <= rel_tol * bnorm {
            return Ok(it);
        }
        apply(&p, &mut ap);
        let pap = weighted_dot(w, &p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return Err(LinalgError::CgNotConverged {
                residual: rr.sqrt() / bnorm,
                iterations: it,
            });
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = weighted_dot(w, &r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    if rr.sqrt() <= rel_tol * bnorm {
        return Ok(max_iter);
    }
    Err(LinalgError::CgNotConverged {
        residual: rr.sqrt() / bnorm,
        iterations: max_iter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd_band(n: usize) -> BandMatrix {
        let mut a = BandMatrix::zeros(n, 1, false).unwrap();
        for i in 0..n {
            a.add(i, 0, 3.5 + (i as f64 * 0.1).sin());
            if i + 1 < n {
                a.add(i, 1, -1.0);
                a.add(i + 1, -1, -1.0);
            }
        }
        a
    }

    #[test]
    fn cg_agrees_with_direct() {
        let a = Operator::Band(spd_band(50));
        let rhs: Vec<f64> = (0..50).map(|i| (i as f64).cos()).collect();
        let w = vec![1.0; 50];
        let (d, _) = solve_with(&a, &rhs, &w, LinearSolver::Direct).unwrap();
        let (c, its) = solve_with(&a, &rhs, &w, LinearSolver::Cg).unwrap();
        assert!(its > 1);
        for (x, y) in d.iter().zip(&c) {
            assert!((x - y).abs() < 1e-11);
        }
    }

    #[test]
    fn lincomb_mixed_kinds() {
        let b = Operator::Band(spd_band(5));
        let op = Operator::identity(5).lincomb(3.0, &b, 2.0).unwrap();
        let x = vec![1.0, -2.0, 0.5, 0.0, 4.0];
        let y = op.apply_vec(&x);
        let bx = b.apply_vec(&x);
        for i in 0..5 {
            assert!((y[i] - (3.0 * x[i] + 2.0 * bx[i])).abs() < 1e-14);
        }
    }

    #[test]
    fn band_and_fourier_do_not_mix() {
        let b = Operator::Band(BandMatrix::from_diagonal(&[1.0; 4], true));
        let f = Operator::Fourier(FourierOp::laplacian(2, 2, 1.0, 1.0));
        assert!(matches!(b.compose(&f), Err(LinalgError::Incompatible(_))));
    }

    #[test]
    fn spectral_bound_covers_rayleigh_quotients() {
        let mut b = BandMatrix::zeros(10, 1, true).unwrap();
        for i in 0..10 {
            b.add(i, 0, 2.0);
            b.add(i, -1, -1.0);
            b.add(i, 1, -1.0);
        }
        let op = Operator::Band(b);
        assert!((op.spectral_bound() - 4.0).abs() < 1e-15);
        let v: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let q = weighted_dot(&[1.0; 10], &v, &op.apply_vec(&v)) / 10.0;
        assert!((q - 4.0).abs() < 1e-12);
        assert_eq!(Operator::Scalar { n: 3, c: -2.5 }.spectral_bound(), 2.5);
    }
}
