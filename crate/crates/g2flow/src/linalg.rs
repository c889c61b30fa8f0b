//! Small dense linear algebra over a generic [`Scalar`]: Gaussian elimination
//! with partial pivoting, determinants, inverses, exact rank, and an LDL^T
//! definiteness test. Sizes here are tiny (7x7, 21x21, 35x35), so simplicity
//! wins over sophistication.

use crate::scalar::Scalar;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("matrix is singular")]
    Singular,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Dense square matrix, row major.
#[derive(Clone, Debug, PartialEq)]
pub struct SqMat<S> {
    pub n: usize,
    pub a: Vec<S>,
}

impl<S: Scalar> SqMat<S> {
    pub fn zeros(n: usize) -> Self {
        SqMat { n, a: vec![S::zero(); n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            *m.at_mut(i, i) = S::one();
        }
        m
    }

    pub fn at(&self, i: usize, j: usize) -> &S {
        &self.a[i * self.n + j]
    }

    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut S {
        &mut self.a[i * self.n + j]
    }

    pub fn mul(&self, other: &SqMat<S>) -> SqMat<S> {
        let n = self.n;
        let mut out: SqMat<S> = SqMat::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let aik = self.at(i, k).clone();
                if aik == S::zero() {
                    continue;
                }
                for j in 0..n {
                    *out.at_mut(i, j) =
                        out.at(i, j).clone() + aik.clone() * other.at(k, j).clone();
                }
            }
        }
        out
    }

    /// Solve A x = b for several right-hand sides (columns of `rhs`).
    /// `rhs` is a flat row-major n x m block; returns the same layout.
    pub fn solve_block(&self, rhs: &[S], m: usize) -> Result<Vec<S>, LinalgError> {
        let n = self.n;
        if rhs.len() != n * m {
            return Err(LinalgError::Dimension(format!(
                "rhs has {} entries, expected {}",
                rhs.len(),
                n * m
            )));
        }
        let mut a = self.a.clone();
        let mut b = rhs.to_vec();
        for col in 0..n {
            // partial pivot on |.|
            let mut piv = col;
            let mut best = a[col * n + col].abs();
            for r in col + 1..n {
                let v = a[r * n + col].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if a[piv * n + col] == S::zero() {
                return Err(LinalgError::Singular);
            }
            if piv != col {
                for j in 0..n {
                    a.swap(col * n + j, piv * n + j);
                }
                for j in 0..m {
                    b.swap(col * m + j, piv * m + j);
                }
            }
            let d = a[col * n + col].clone();
            for r in col + 1..n {
                if a[r * n + col] == S::zero() {
                    continue;
                }
                let f = a[r * n + col].clone() / d.clone();
                for j in col..n {
                    a[r * n + j] = a[r * n + j].clone() - f.clone() * a[col * n + j].clone();
                }
                for j in 0..m {
                    b[r * m + j] = b[r * m + j].clone() - f.clone() * b[col * m + j].clone();
                }
            }
        }
        // back substitution
        for col in (0..n).rev() {
            let d = a[col * n + col].clone();
            for j in 0..m {
                let mut s = b[col * m + j].clone();
                for k in col + 1..n {
                    s = s - a[col * n + k].clone() * b[k * m + j].clone();
                }
                b[col * m + j] = s / d.clone();
            }
        }
        Ok(b)
    }

    pub fn solve(&self, rhs: &[S]) -> Result<Vec<S>, LinalgError> {
        self.solve_block(rhs, 1)
    }

    pub fn inverse(&self) -> Result<SqMat<S>, LinalgError> {
        let id = Self::identity(self.n);
        Ok(SqMat { n: self.n, a: self.solve_block(&id.a, self.n)? })
    }

    pub fn det(&self) -> S {
        let n = self.n;
        let mut a = self.a.clone();
        let mut det = S::one();
        for col in 0..n {
            let mut piv = col;
            let mut best = a[col * n + col].abs();
            for r in col + 1..n {
                let v = a[r * n + col].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if a[piv * n + col] == S::zero() {
                return S::zero();
            }
            if piv != col {
                for j in 0..n {
                    a.swap(col * n + j, piv * n + j);
                }
                det = -det;
            }
            let d = a[col * n + col].clone();
            det = det * d.clone();
            for r in col + 1..n {
                if a[r * n + col] == S::zero() {
                    continue;
                }
                let f = a[r * n + col].clone() / d.clone();
                for j in col..n {
                    a[r * n + j] = a[r * n + j].clone() - f.clone() * a[col * n + j].clone();
                }
            }
        }
        det
    }

    /// Row-reduction rank. Exact in the rational kind; in the float kind rows
    /// with pivots below `tol` count as zero.
    pub fn rank(&self, tol: &S) -> usize {
        let n = self.n;
        let mut a = self.a.clone();
        let mut rank = 0;
        let mut row = 0;
        for col in 0..n {
            let mut piv = None;
            let mut best = tol.clone();
            for r in row..n {
                let v = a[r * n + col].abs();
                if v > best {
                    best = v;
                    piv = Some(r);
                }
            }
            let Some(piv) = piv else { continue };
            for j in 0..n {
                a.swap(row * n + j, piv * n + j);
            }
            let d = a[row * n + col].clone();
            for r in row + 1..n {
                let f = a[r * n + col].clone() / d.clone();
                for j in col..n {
                    a[r * n + j] = a[r * n + j].clone() - f.clone() * a[row * n + j].clone();
                }
            }
            rank += 1;
            row += 1;
            if row == n {
                break;
            }
        }
        rank
    }

    /// LDL^T pivots of a symmetric matrix, without pivoting. Returns `None`
    /// when a zero pivot is hit (matrix is then not definite either way).
    pub fn ldlt_pivots(&self) -> Option<Vec<S>> {
        let n = self.n;
        let mut a = self.a.clone();
        let mut d = Vec::with_capacity(n);
        for k in 0..n {
            let piv = a[k * n + k].clone();
            if piv == S::zero() {
                return None;
            }
            for r in k + 1..n {
                let f = a[r * n + k].clone() / piv.clone();
                for j in k..n {
                    a[r * n + j] = a[r * n + j].clone() - f.clone() * a[k * n + j].clone();
                }
            }
            d.push(piv);
        }
        Some(d)
    }

    /// Definiteness of a symmetric matrix via LDL^T pivot signs.
    pub fn definiteness(&self) -> Definiteness {
        match self.ldlt_pivots() {
            None => Definiteness::Indefinite,
            Some(d) => {
                if d.iter().all(|p| p.is_positive()) {
                    Definiteness::Positive
                } else if d.iter().all(|p| p.is_negative()) {
                    Definiteness::Negative
                } else {
                    Definiteness::Indefinite
                }
            }
        }
    }
}

impl<S: Scalar> SqMat<S> {
    /// Basis of the null space by Gauss-Jordan reduction; pivots smaller than
    /// `tol` (in |.|) count as zero.
    pub fn null_space(&self, tol: &S) -> Vec<Vec<S>> {
        let n = self.n;
        let mut a = self.a.clone();
        let mut pivot_col_of_row: Vec<usize> = Vec::new();
        let mut row = 0;
        for col in 0..n {
            let mut piv = None;
            let mut best = tol.clone();
            for r in row..n {
                let v = a[r * n + col].abs();
                if v > best {
                    best = v;
                    piv = Some(r);
                }
            }
            let Some(piv) = piv else { continue };
            for j in 0..n {
                a.swap(row * n + j, piv * n + j);
            }
            let d = a[row * n + col].clone();
            for j in col..n {
                a[row * n + j] = a[row * n + j].clone() / d.clone();
            }
            for r in 0..n {
                if r == row {
                    continue;
                }
                let f = a[r * n + col].clone();
                if f == S::zero() {
                    continue;
                }
                for j in col..n {
                    a[r * n + j] = a[r * n + j].clone() - f.clone() * a[row * n + j].clone();
                }
            }
            pivot_col_of_row.push(col);
            row += 1;
            if row == n {
                break;
            }
        }
        let pivot_cols: std::collections::HashSet<usize> =
            pivot_col_of_row.iter().copied().collect();
        let mut basis = Vec::new();
        for free in 0..n {
            if pivot_cols.contains(&free) {
                continue;
            }
            let mut v = vec![S::zero(); n];
            v[free] = S::one();
            for (r, &pc) in pivot_col_of_row.iter().enumerate() {
                v[pc] = -a[r * n + free].clone();
            }
            basis.push(v);
        }
        basis
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Definiteness {
    Positive,
    Negative,
    Indefinite,
}

/// Eigenvalues of a symmetric f64 matrix by cyclic Jacobi rotations.
pub fn sym_eigenvalues(m: &SqMat<f64>) -> Vec<f64> {
    let n = m.n;
    let mut a = m.a.clone();
    for _sweep in 0..64 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += a[i * n + j] * a[i * n + j];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    ev
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Exact;

    #[test]
    fn solve_and_det_exact() {
        let mut m = SqMat::<Exact>::zeros(3);
        let vals = [[2i64, 1, 0], [1, 3, 1], [0, 1, 4]];
        for i in 0..3 {
            for j in 0..3 {
                *m.at_mut(i, j) = Exact::from_i64(vals[i][j]);
            }
        }
        assert_eq!(m.det(), Exact::from_i64(18));
        let x = m.solve(&[Exact::from_i64(3), Exact::from_i64(5), Exact::from_i64(5)]).unwrap();
        let b0 = Exact::from_i64(2) * x[0].clone() + x[1].clone();
        assert_eq!(b0, Exact::from_i64(3));
        assert_eq!(m.definiteness(), Definiteness::Positive);
    }

    #[test]
    fn rank_detects_deficiency() {
        let mut m = SqMat::<Exact>::zeros(3);
        for j in 0..3 {
            *m.at_mut(0, j) = Exact::from_i64(j as i64 + 1);
            *m.at_mut(1, j) = Exact::from_i64(2 * (j as i64 + 1));
            *m.at_mut(2, j) = Exact::from_i64(j as i64);
        }
        assert_eq!(m.rank(&Exact::from_i64(0)), 2);
    }

    #[test]
    fn jacobi_eigenvalues() {
        let mut m = SqMat::<f64>::zeros(2);
        *m.at_mut(0, 0) = 2.0;
        *m.at_mut(0, 1) = 1.0;
        *m.at_mut(1, 0) = 1.0;
        *m.at_mut(1, 1) = 2.0;
        let ev = sym_eigenvalues(&m);
        assert!((ev[0] - 1.0).abs() < 1e-12 && (ev[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn indefinite_detected() {
        let mut m = SqMat::<f64>::zeros(2);
        *m.at_mut(0, 0) = 1.0;
        *m.at_mut(1, 1) = -1.0;
        assert_eq!(m.definiteness(), Definiteness::Indefinite);
    }
}
