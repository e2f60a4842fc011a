//! Banded (optionally cyclic) matrices and a banded LU with partial pivoting.

use super::LinalgError;

/// Square matrix with entries `A[i][(i + d) mod n]` for `|d| <= bw`.
///
/// Without `periodic`, entries whose column falls outside `0..n` must be zero
/// and are never touched.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    n: usize,
    bw: usize,
    periodic: bool,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize, periodic: bool) -> Result<Self, LinalgError> {
        if periodic && n > 1 && n <= 2 * bw {
            return Err(LinalgError::BandTooWide { n, bw });
        }
        let bw = if periodic && n == 1 { 0 } else { bw };
        Ok(BandMatrix {
            n,
            bw,
            periodic,
            data: vec![0.0; n * (2 * bw + 1)],
        })
    }

    pub fn from_diagonal(diag: &[f64], periodic: bool) -> Self {
        BandMatrix {
            n: diag.len(),
            bw: 0,
            periodic,
            data: diag.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    fn slot(&self, i: usize, d: isize) -> usize {
        i * (2 * self.bw + 1) + (d + self.bw as isize) as usize
    }

    /// Column index of offset `d` in row `i`, if it exists.
    pub fn column(&self, i: usize, d: isize) -> Option<usize> {
        let j = i as isize + d;
        if self.periodic {
            Some(j.rem_euclid(self.n as isize) as usize)
        } else if j < 0 || j >= self.n as isize {
            None
        } else {
            Some(j as usize)
        }
    }

    pub fn get(&self, i: usize, d: isize) -> f64 {
        if d.unsigned_abs() > self.bw {
            return 0.0;
        }
        self.data[self.slot(i, d)]
    }

    /// Adds `v` at row `i`, offset `d`. Panics if the offset is outside the
    /// band or (non-periodic) outside the matrix.
    pub fn add(&mut self, i: usize, d: isize, v: f64) {
        assert!(d.unsigned_abs() <= self.bw, "offset {d} outside band {}", self.bw);
        assert!(self.column(i, d).is_some(), "entry ({i}, {d}) outside matrix");
        let s = self.slot(i, d);
        self.data[s] += v;
    }

    pub fn offsets(&self) -> impl Iterator<Item = isize> {
        let b = self.bw as isize;
        -b..=b
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for d in self.offsets() {
                if let Some(j) = self.column(i, d) {
                    s += self.data[self.slot(i, d)] * x[j];
                }
            }
            y[i] = s;
        }
    }

    fn widened(&self, bw: usize) -> Result<BandMatrix, LinalgError> {
        let mut out = BandMatrix::zeros(self.n, bw.max(self.bw), self.periodic)?;
        for i in 0..self.n {
            for d in self.offsets() {
                if self.column(i, d).is_some() {
                    out.add(i, d, self.get(i, d));
                }
            }
        }
        Ok(out)
    }

    /// `a * self + b * other`.
    pub fn lincomb(&self, a: f64, other: &BandMatrix, b: f64) -> Result<BandMatrix, LinalgError> {
        self.check_compatible(other)?;
        let bw = self.bw.max(other.bw);
        let mut out = self.widened(bw)?;
        for v in out.data.iter_mut() {
            *v *= a;
        }
        for i in 0..self.n {
            for d in other.offsets() {
                if other.column(i, d).is_some() {
                    out.add(i, d, b * other.get(i, d));
                }
            }
        }
        Ok(out)
    }

    /// Matrix product `self * other`.
    pub fn matmul(&self, other: &BandMatrix) -> Result<BandMatrix, LinalgError> {
        self.check_compatible(other)?;
        let mut out = BandMatrix::zeros(self.n, self.bw + other.bw, self.periodic)?;
        for i in 0..self.n {
            for d1 in self.offsets() {
                let Some(j) = self.column(i, d1) else { continue };
                let a = self.get(i, d1);
                if a == 0.0 {
                    continue;
                }
                for d2 in other.offsets() {
                    if other.column(j, d2).is_some() {
                        out.add(i, d1 + d2, a * other.get(j, d2));
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn scale(&mut self, c: f64) {
        for v in self.data.iter_mut() {
            *v *= c;
        }
    }

    /// Adds `c` to every diagonal entry.
    pub fn shift(&mut self, c: f64) {
        for i in 0..self.n {
            self.add(i, 0, c);
        }
    }

    fn check_compatible(&self, other: &BandMatrix) -> Result<(), LinalgError> {
        if self.n != other.n || self.periodic != other.periodic {
            return Err(LinalgError::Incompatible(format!(
                "band {}x{} (periodic {}) vs {}x{} (periodic {})",
                self.n, self.n, self.periodic, other.n, other.n, other.periodic
            )));
        }
        Ok(())
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; self.n]; self.n];
        for (i, row) in a.iter_mut().enumerate() {
            for d in self.offsets() {
                if let Some(j) = self.column(i, d) {
                    row[j] += self.get(i, d);
                }
            }
        }
        a
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, LinalgError> {
        BandLu::factor(self)?.solve(rhs)
    }
}

/// Position of index `i` in the interleaved ordering `0, n-1, 1, n-2, ...`,
/// which turns a cyclic band of half-width `b` into an ordinary band of
/// half-width `2b + 1`.
fn fold(i: usize, n: usize) -> usize {
    if 2 * i < n {
        2 * i
    } else {
        2 * (n - 1 - i) + 1
    }
}

/// LU factorization of a banded matrix with row pivoting.
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    lu: Vec<f64>,
    piv: Vec<usize>,
    folded: bool,
}

impl BandLu {
    pub fn factor(a: &BandMatrix) -> Result<Self, LinalgError> {
        let n = a.n;
        let folded = a.periodic && a.bw > 0;
        let b = if folded { 2 * a.bw + 1 } else { a.bw };
        let (kl, ku) = (b, 2 * b);
        let w = kl + ku + 1;
        let mut lu = vec![0.0; n * w];
        for i in 0..n {
            for d in a.offsets() {
                let Some(j) = a.column(i, d) else { continue };
                let (r, c) = if folded { (fold(i, n), fold(j, n)) } else { (i, j) };
                lu[r * w + (c + kl - r)] += a.get(i, d);
            }
        }
        let at = |r: usize, c: usize| r * w + (c + kl - r);
        let mut piv = vec![0; n];
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            for r in k + 1..=last {
                if lu[at(r, k)].abs() > lu[at(p, k)].abs() {
                    p = r;
                }
            }
            if lu[at(p, k)] == 0.0 || !lu[at(p, k)].is_finite() {
                return Err(LinalgError::Singular);
            }
            piv[k] = p;
            let cmax = (k + ku).min(n - 1);
            if p != k {
                for c in k..=cmax {
                    lu.swap(at(k, c), at(p, c));
                }
            }
            let pivot = lu[at(k, k)];
            for r in k + 1..=last {
                let l = lu[at(r, k)] / pivot;
                lu[at(r, k)] = l;
                if l != 0.0 {
                    for c in k + 1..=cmax {
                        lu[at(r, c)] -= l * lu[at(k, c)];
                    }
                }
            }
        }
        Ok(BandLu { n, kl, ku, lu, piv, folded })
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let n = self.n;
        if rhs.len() != n {
            return Err(LinalgError::Dimension { expected: n, found: rhs.len() });
        }
        let w = self.kl + self.ku + 1;
        let at = |r: usize, c: usize| r * w + (c + self.kl - r);
        let mut x = vec![0.0; n];
        for (i, &v) in rhs.iter().enumerate() {
            x[if self.folded { fold(i, n) } else { i }] = v;
        }
        for k in 0..n {
            x.swap(k, self.piv[k]);
            let xk = x[k];
            for r in k + 1..=(k + self.kl).min(n - 1) {
                x[r] -= self.lu[at(r, k)] * xk;
            }
        }
        for r in (0..n).rev() {
            let mut s = x[r];
            for c in r + 1..=(r + self.ku).min(n - 1) {
                s -= self.lu[at(r, c)] * x[c];
            }
            x[r] = s / self.lu[at(r, r)];
        }
        if self.folded {
            Ok((0..n).map(|i| x[fold(i, n)]).collect())
        } else {
            Ok(x)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_band(n: usize, bw: usize, periodic: bool, seed: u64) -> BandMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = BandMatrix::zeros(n, bw, periodic).unwrap();
        for i in 0..n {
            for d in a.offsets().collect::<Vec<_>>() {
                if a.column(i, d).is_some() {
                    a.add(i, d, rng.gen_range(-1.0..1.0));
                }
            }
        }
        a
    }

    fn dense_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = a.len();
        let mut c = vec![vec![0.0; n]; n];
        for i in 0..n {
            for k in 0..n {
                for j in 0..n {
                    c[i][j] += a[i][k] * b[k][j];
                }
            }
        }
        c
    }

    #[test]
    fn matmul_matches_dense() {
        for periodic in [false, true] {
            let a = random_band(11, 1, periodic, 1);
            let b = random_band(11, 2, periodic, 2);
            let c = a.matmul(&b).unwrap().to_dense();
            let e = dense_mul(&a.to_dense(), &b.to_dense());
            for i in 0..11 {
                for j in 0..11 {
                    assert!((c[i][j] - e[i][j]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn lu_solves_general_band() {
        for (periodic, bw, n) in [(false, 1, 9), (false, 2, 17), (true, 1, 8), (true, 2, 13), (true, 1, 3)] {
            let a = random_band(n, bw, periodic, 7 + n as u64);
            let x: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 0.5).collect();
            let mut b = vec![0.0; n];
            a.apply(&x, &mut b);
            let y = a.solve(&b).unwrap();
            for i in 0..n {
                assert!((x[i] - y[i]).abs() < 1e-9, "periodic {periodic} bw {bw}: {} vs {}", x[i], y[i]);
            }
        }
    }

    #[test]
    fn lu_needs_pivoting() {
        let mut a = BandMatrix::zeros(3, 1, false).unwrap();
        a.add(0, 1, 1.0);
        a.add(1, -1, 1.0);
        a.add(1, 1, 1.0);
        a.add(2, -1, 1.0);
        a.add(2, 0, 1.0);
        let y = a.solve(&[2.0, 4.0, 5.0]).unwrap();
        let mut b = vec![0.0; 3];
        a.apply(&y, &mut b);
        assert!((b[0] - 2.0).abs() < 1e-14 && (b[1] - 4.0).abs() < 1e-14 && (b[2] - 5.0).abs() < 1e-14);
    }

    #[test]
    fn singular_is_reported() {
        let a = BandMatrix::zeros(4, 1, false).unwrap();
        assert!(matches!(a.solve(&[1.0; 4]), Err(LinalgError::Singular)));
    }
}
