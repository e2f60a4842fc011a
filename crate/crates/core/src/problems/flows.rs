//! Energies of the concrete experiments.

use crate::integrator::{GradientFlowProblem, StepError};
use crate::linalg::{BandMatrix, LinearSolver, Operator};
use crate::problems::grid::{
    divergence_band, grad_sq_energy, laplacian, laplacian_fourier, Boundary, Grid,
};

/// Double-well potentials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Potential {
    /// `8u - 16u^2 - (8/3)u^3 + 8u^4`, wells of unequal depth at `-1` and `1`.
    UnequalWells,
    /// `u^2 (1 - u)^2`, wells at `0` and `1`.
    ZeroOne,
    /// `(1 - u^2)^2`, wells at `-1` and `1`.
    PlusMinusOne,
}

impl Potential {
    pub fn w(self, u: f64) -> f64 {
        match self {
            Potential::UnequalWells => {
                8.0 * u - 16.0 * u * u - 8.0 / 3.0 * u.powi(3) + 8.0 * u.powi(4)
            }
            Potential::ZeroOne => u * u * (1.0 - u) * (1.0 - u),
            Potential::PlusMinusOne => (1.0 - u * u).powi(2),
        }
    }

    pub fn dw(self, u: f64) -> f64 {
        match self {
            Potential::UnequalWells => 8.0 - 32.0 * u - 8.0 * u * u + 32.0 * u.powi(3),
            Potential::ZeroOne => 2.0 * u * (1.0 - u) * (1.0 - 2.0 * u),
            Potential::PlusMinusOne => 4.0 * u * (u * u - 1.0),
        }
    }

    pub fn d2w(self, u: f64) -> f64 {
        match self {
            Potential::UnequalWells => -32.0 - 16.0 * u + 96.0 * u * u,
            Potential::ZeroOne => 2.0 - 12.0 * u + 12.0 * u * u,
            Potential::PlusMinusOne => 12.0 * u * u - 4.0,
        }
    }

    /// `max(0, max W'')` over `[lo, hi]`; `W''` is a convex quadratic so the
    /// maximum sits at an endpoint.
    pub fn max_curvature(self, lo: f64, hi: f64) -> f64 {
        self.d2w(lo).max(self.d2w(hi)).max(0.0)
    }
}

fn fixed_zero(grid: &Grid, out: &mut [f64]) {
    if grid.boundary == Boundary::Dirichlet {
        for (i, o) in out.iter_mut().enumerate() {
            if grid.is_fixed(i) {
                *o = 0.0;
            }
        }
    }
}

/// Constant-coefficient Laplacian `-kappa * Laplacian` as an operator.
fn neg_laplacian(grid: &Grid, kappa: f64) -> Operator {
    if grid.dim == 1 {
        Operator::Band(divergence_band(grid, &vec![1.0; grid.len()]).expect("1D band fits"))
            .scaled(-kappa)
    } else {
        Operator::Fourier(laplacian_fourier(grid)).scaled(-kappa)
    }
}

/// `E1 = kappa int 1/2 |grad u|^2`, `E2 = int W(u) + F u`.
#[derive(Debug, Clone)]
pub struct PhaseField {
    pub grid: Grid,
    pub kappa: f64,
    pub potential: Potential,
    pub forcing: Option<Vec<f64>>,
    pub lambda: f64,
    /// States must stay in this interval for `lambda` to be valid.
    pub range: (f64, f64),
    pub solver: LinearSolver,
    hess: Operator,
}

impl PhaseField {
    pub fn new(grid: Grid, kappa: f64, potential: Potential, range: (f64, f64)) -> Self {
        let hess = neg_laplacian(&grid, kappa);
        PhaseField {
            lambda: potential.max_curvature(range.0, range.1),
            grid,
            kappa,
            potential,
            forcing: None,
            range,
            solver: LinearSolver::Direct,
            hess,
        }
    }

    pub fn with_forcing(mut self, f: Vec<f64>) -> Self {
        assert_eq!(f.len(), self.grid.len());
        self.forcing = Some(f);
        self
    }
}

impl GradientFlowProblem for PhaseField {
    fn dim(&self) -> usize {
        self.grid.len()
    }
    fn weights(&self) -> &[f64] {
        self.grid.weights()
    }
    fn energy1(&self, u: &[f64]) -> f64 {
        self.kappa * grad_sq_energy(&self.grid, u)
    }
    fn energy2(&self, u: &[f64]) -> f64 {
        let w = self.grid.weights();
        let mut e: f64 = u.iter().zip(w).map(|(&v, &w)| w * self.potential.w(v)).sum();
        if let Some(f) = &self.forcing {
            e += u.iter().zip(w).zip(f).map(|((v, w), f)| w * v * f).sum::<f64>();
        }
        e
    }
    fn grad_e1(&self, u: &[f64], out: &mut [f64]) {
        let lap = laplacian(&self.grid, u);
        for (o, l) in out.iter_mut().zip(&lap) {
            *o = -self.kappa * l;
        }
    }
    fn grad_e2(&self, u: &[f64], out: &mut [f64]) {
        for (o, &v) in out.iter_mut().zip(u) {
            *o = self.potential.dw(v);
        }
        if let Some(f) = &self.forcing {
            for (o, f) in out.iter_mut().zip(f) {
                *o += f;
            }
        }
        fixed_zero(&self.grid, out);
    }
    fn has_explicit_part(&self) -> bool {
        true
    }
    fn hess_e1(&self, _u: &[f64]) -> Operator {
        self.hess.clone()
    }
    fn lambda(&self) -> f64 {
        self.lambda
    }
    fn linear_solver(&self) -> LinearSolver {
        self.solver
    }
    fn check_state(&self, u: &[f64]) -> Result<(), StepError> {
        let (lo, hi) = self.range;
        match u.iter().position(|&v| !(lo..=hi).contains(&v)) {
            Some(i) => Err(StepError::OutOfRange(format!(
                "u[{i}] = {:e} outside [{lo}, {hi}]",
                u[i]
            ))),
            None => Ok(()),
        }
    }
}

/// `E1 = c int |u|^p`, `E2 = 0`.
#[derive(Debug, Clone)]
pub struct PowerEnergy {
    pub grid: Grid,
    pub coeff: f64,
    pub power: f64,
}

impl PowerEnergy {
    pub fn new(grid: Grid, coeff: f64, power: f64) -> Self {
        PowerEnergy { grid, coeff, power }
    }
}

impl GradientFlowProblem for PowerEnergy {
    fn dim(&self) -> usize {
        self.grid.len()
    }
    fn weights(&self) -> &[f64] {
        self.grid.weights()
    }
    fn energy1(&self, u: &[f64]) -> f64 {
        u.iter()
            .zip(self.grid.weights())
            .map(|(v, w)| w * self.coeff * v.abs().powf(self.power))
            .sum()
    }
    fn grad_e1(&self, u: &[f64], out: &mut [f64]) {
        let cp = self.coeff * self.power;
        for (o, &v) in out.iter_mut().zip(u) {
            *o = cp * v.abs().powf(self.power - 1.0) * v.signum();
        }
        fixed_zero(&self.grid, out);
    }
    fn has_explicit_part(&self) -> bool {
        false
    }
    fn hess_e1(&self, u: &[f64]) -> Operator {
        let c = self.coeff * self.power * (self.power - 1.0);
        let d: Vec<f64> = u
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if self.grid.is_fixed(i) {
                    0.0
                } else {
                    c * v.abs().max(1e-300).powf(self.power - 2.0)
                }
            })
            .collect();
        Operator::Band(BandMatrix::from_diagonal(&d, self.grid.boundary == Boundary::Periodic))
    }
    fn lambda(&self) -> f64 {
        0.0
    }
}

/// Negative entropy `E = int u log u` split as `E1 = 1/2 int u^2`,
/// `E2 = int u log u - 1/2 int u^2`; `E2` is concave for `u >= 1`.
#[derive(Debug, Clone)]
pub struct Entropy {
    pub grid: Grid,
    /// Smallest admissible value (the split needs `u >= 1`).
    pub floor: f64,
}

impl Entropy {
    pub fn new(grid: Grid) -> Self {
        Entropy { grid, floor: 1.0 - 1e-6 }
    }
}

impl GradientFlowProblem for Entropy {
    fn dim(&self) -> usize {
        self.grid.len()
    }
    fn weights(&self) -> &[f64] {
        self.grid.weights()
    }
    fn energy1(&self, u: &[f64]) -> f64 {
        u.iter().zip(self.grid.weights()).map(|(v, w)| 0.5 * w * v * v).sum()
    }
    fn energy2(&self, u: &[f64]) -> f64 {
        u.iter()
            .zip(self.grid.weights())
            .map(|(&v, w)| w * (v * v.ln() - 0.5 * v * v))
            .sum()
    }
    fn grad_e1(&self, u: &[f64], out: &mut [f64]) {
        out.copy_from_slice(u);
        fixed_zero(&self.grid, out);
    }
    fn grad_e2(&self, u: &[f64], out: &mut [f64]) {
        for (o, &v) in out.iter_mut().zip(u) {
            *o = v.ln() + 1.0 - v;
        }
        fixed_zero(&self.grid, out);
    }
    fn has_explicit_part(&self) -> bool {
        true
    }
    fn hess_e1(&self, u: &[f64]) -> Operator {
        Operator::identity(u.len())
    }
    fn lambda(&self) -> f64 {
        0.0
    }
    fn check_state(&self, u: &[f64]) -> Result<(), StepError> {
        match u.iter().position(|&v| v.is_nan() || v < self.floor) {
            Some(i) => Err(StepError::OutOfRange(format!(
                "u[{i}] = {:e} below {}",
                u[i], self.floor
            ))),
            None => Ok(()),
        }
    }
}

/// A one-unknown flow built from plain functions; used for ODE oracles.
#[derive(Debug, Clone, Copy)]
pub struct ScalarFlow {
    pub e1: fn(f64) -> f64,
    pub de1: fn(f64) -> f64,
    pub d2e1: fn(f64) -> f64,
    pub e2: fn(f64) -> f64,
    pub de2: fn(f64) -> f64,
    pub lambda: f64,
    pub explicit: bool,
}

const UNIT: [f64; 1] = [1.0];

impl ScalarFlow {
    /// `E1 = a u^2 / 2`, `E2 = 0`.
    pub fn quadratic() -> Self {
        ScalarFlow {
            e1: |u| 0.5 * u * u,
            de1: |u| u,
            d2e1: |_| 1.0,
            e2: |_| 0.0,
            de2: |_| 0.0,
            lambda: 0.0,
            explicit: false,
        }
    }
}

impl GradientFlowProblem for ScalarFlow {
    fn dim(&self) -> usize {
        1
    }
    fn weights(&self) -> &[f64] {
        &UNIT
    }
    fn energy1(&self, u: &[f64]) -> f64 {
        (self.e1)(u[0])
    }
    fn energy2(&self, u: &[f64]) -> f64 {
        (self.e2)(u[0])
    }
    fn grad_e1(&self, u: &[f64], out: &mut [f64]) {
        out[0] = (self.de1)(u[0]);
    }
    fn grad_e2(&self, u: &[f64], out: &mut [f64]) {
        out[0] = (self.de2)(u[0]);
    }
    fn has_explicit_part(&self) -> bool {
        self.explicit
    }
    fn hess_e1(&self, u: &[f64]) -> Operator {
        Operator::Band(BandMatrix::from_diagonal(&[(self.d2e1)(u[0])], false))
    }
    fn lambda(&self) -> f64 {
        self.lambda
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fd_gradient_gap(p: &dyn GradientFlowProblem, u: &[f64], v: &[f64]) -> f64 {
        let h = 1e-6;
        let shift = |s: f64| -> Vec<f64> { u.iter().zip(v).map(|(a, b)| a + s * b).collect() };
        let fd = (p.energy(&shift(h)) - p.energy(&shift(-h))) / (2.0 * h);
        let exact = p.inner(&p.grad(u), v);
        (fd - exact).abs() / (1.0 + exact.abs())
    }

    fn fd_hessian_gap(p: &dyn GradientFlowProblem, u: &[f64], v: &[f64]) -> f64 {
        let h = 1e-6;
        let g1 = |x: &[f64]| {
            let mut g = vec![0.0; x.len()];
            p.grad_e1(x, &mut g);
            g
        };
        let up: Vec<f64> = u.iter().zip(v).map(|(a, b)| a + h * b).collect();
        let um: Vec<f64> = u.iter().zip(v).map(|(a, b)| a - h * b).collect();
        let (gp, gm) = (g1(&up), g1(&um));
        let hv = p.hess_e1(u).apply_vec(v);
        let num: f64 = gp.iter().zip(&gm).zip(&hv).map(|((a, b), c)| ((a - b) / (2.0 * h) - c).powi(2)).sum();
        let den: f64 = hv.iter().map(|c| c * c).sum();
        num.sqrt() / (1.0 + den.sqrt())
    }

    fn small_fields(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (prop::collection::vec(lo..hi, n), prop::collection::vec(-1.0..1.0f64, n))
    }

    #[test]
    fn potential_derivatives() {
        for w in [Potential::UnequalWells, Potential::ZeroOne, Potential::PlusMinusOne] {
            for &u in &[-1.1, -0.3, 0.0, 0.4, 1.05] {
                let h = 1e-5;
                assert!(((w.w(u + h) - w.w(u - h)) / (2.0 * h) - w.dw(u)).abs() < 1e-7);
                assert!(((w.dw(u + h) - w.dw(u - h)) / (2.0 * h) - w.d2w(u)).abs() < 1e-6);
            }
        }
        assert!((Potential::PlusMinusOne.max_curvature(-1.2, 1.2) - 4.0 * (3.0 * 1.44 - 1.0)).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn phase_field_gradient_matches_energy((u, v) in small_fields(24, -1.0, 1.0)) {
            let g = Grid::new_1d(0.0, 2.0, 24, Boundary::Periodic);
            let p = PhaseField::new(g.clone(), 0.3, Potential::ZeroOne, (-1.5, 1.5)).with_forcing(g.sample(|x, _| x.sin()));
            prop_assert!(fd_gradient_gap(&p, &u, &v) < 1e-7);
            prop_assert!(fd_hessian_gap(&p, &u, &v) < 1e-6);
        }

        #[test]
        fn neumann_phase_field_gradient((u, v) in small_fields(17, -1.0, 1.0)) {
            let g = Grid::new_1d(-1.0, 1.0, 17, Boundary::Neumann);
            let p = PhaseField::new(g, 1.0, Potential::UnequalWells, (-1.2, 1.2));
            prop_assert!(fd_gradient_gap(&p, &u, &v) < 1e-7);
        }

        #[test]
        fn periodic_2d_gradient((u, v) in small_fields(64, 0.0, 1.0)) {
            let g = Grid::new_2d(-1.0, 1.0, 8, Boundary::Periodic);
            let p = PhaseField::new(g, 0.5, Potential::ZeroOne, (-0.2, 1.2));
            prop_assert!(fd_gradient_gap(&p, &u, &v) < 1e-7);
            prop_assert!(fd_hessian_gap(&p, &u, &v) < 1e-6);
        }

        #[test]
        fn power_energy_gradient((u, v) in small_fields(15, 0.2, 2.0)) {
            let g = Grid::new_1d(-3.0, 3.0, 15, Boundary::Neumann);
            let p = PowerEnergy::new(g, 1.5, 5.0 / 3.0);
            prop_assert!(fd_gradient_gap(&p, &u, &v) < 1e-7);
            prop_assert!(fd_hessian_gap(&p, &u, &v) < 1e-6);
        }

        #[test]
        fn entropy_gradient((u, v) in small_fields(15, 1.0, 3.0)) {
            let p = Entropy::new(Grid::new_1d(0.0, 1.0, 15, Boundary::Neumann));
            prop_assert!(fd_gradient_gap(&p, &u, &v) < 1e-7);
            prop_assert!(fd_hessian_gap(&p, &u, &v) < 1e-6);
        }

        #[test]
        fn laplacian_hessian_is_self_adjoint((u, v) in small_fields(20, -1.0, 1.0)) {
            let p = PhaseField::new(Grid::new_1d(0.0, 1.0, 20, Boundary::Neumann), 1.0, Potential::ZeroOne, (-1.0, 2.0));
            let h = p.hess_e1(&u);
            let a = p.inner(&u, &h.apply_vec(&v));
            let b = p.inner(&h.apply_vec(&u), &v);
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn out_of_range_states_are_rejected() {
        let p = PhaseField::new(Grid::new_1d(0.0, 1.0, 8, Boundary::Periodic), 1.0, Potential::ZeroOne, (-0.2, 1.2));
        assert!(p.check_state(&[0.5; 8]).is_ok());
        let mut u = vec![0.5; 8];
        u[3] = 1.3;
        assert!(matches!(p.check_state(&u), Err(StepError::OutOfRange(_))));
        let e = Entropy::new(Grid::new_1d(0.0, 1.0, 8, Boundary::Neumann));
        assert!(e.check_state(&[0.5; 8]).is_err());
    }
}
