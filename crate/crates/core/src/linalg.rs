//! Dense linear-algebra helpers shared across the crate.

use nalgebra::{DMatrix, DVector};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Boolean sparsity pattern, column-major like [`Matrix`].
pub type Pattern = DMatrix<bool>;

pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn singular_values(m: &Matrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Numerical rank with threshold `rel_tol * sigma_max`.
pub fn rank(m: &Matrix, rel_tol: f64) -> usize {
    let s = singular_values(m);
    match s.first() {
        Some(&top) if top > 0.0 => s.iter().filter(|&&v| v > rel_tol * top).count(),
        _ => 0,
    }
}

pub fn spectral_radius(a: &Matrix) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}

pub fn pattern_of(m: &Matrix) -> Pattern {
    m.map(|v| v != 0.0)
}

pub fn pattern_identity(n: usize) -> Pattern {
    Pattern::from_fn(n, n, |i, j| i == j)
}

pub fn pattern_mul(a: &Pattern, b: &Pattern) -> Pattern {
    assert_eq!(a.ncols(), b.nrows());
    let mut out = Pattern::from_element(a.nrows(), b.ncols(), false);
    for j in 0..b.ncols() {
        for k in 0..b.nrows() {
            if !b[(k, j)] {
                continue;
            }
            for i in 0..a.nrows() {
                if a[(i, k)] {
                    out[(i, j)] = true;
                }
            }
        }
    }
    out
}

pub fn pattern_or(a: &Pattern, b: &Pattern) -> Pattern {
    a.zip_map(b, |x, y| x || y)
}

/// Solution set of an affine system `E x = f` from a norm-pivoted QR.
#[derive(Debug, Clone)]
pub struct AffineSolution {
    /// A particular solution (not necessarily minimum norm).
    pub particular: Vector,
    /// Basis of `ker E`, one column per free direction.
    pub kernel: Matrix,
    pub rank: usize,
    /// `max |E x_p - f|` after refinement.
    pub residual: f64,
}

/// Householder QR with column pivoting on the largest remaining column norm.
struct PivotedQr {
    /// Householder vectors below the diagonal, `R` on and above it.
    packed: Matrix,
    tau: Vec<f64>,
    perm: Vec<usize>,
}

impl PivotedQr {
    fn new(mut a: Matrix) -> Self {
        let (m, n) = a.shape();
        let k = m.min(n);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut norms: Vec<f64> = (0..n).map(|j| a.column(j).norm_squared()).collect();
        let mut tau = vec![0.0; k];
        for i in 0..k {
            let (p, _) = norms[i..]
                .iter()
                .enumerate()
                .fold((0, -1.0), |best, (j, &v)| if v > best.1 { (j, v) } else { best });
            let p = p + i;
            if p != i {
                a.swap_columns(i, p);
                norms.swap(i, p);
                perm.swap(i, p);
            }
            let alpha = a[(i, i)];
            let tail = a.view((i + 1, i), (m - i - 1, 1)).norm_squared();
            let xnorm = (alpha * alpha + tail).sqrt();
            if xnorm == 0.0 {
                tau[i] = 0.0;
                continue;
            }
            let beta = if alpha >= 0.0 { -xnorm } else { xnorm };
            let scale = 1.0 / (alpha - beta);
            for r in i + 1..m {
                a[(r, i)] *= scale;
            }
            tau[i] = (beta - alpha) / beta;
            a[(i, i)] = beta;
            let t = tau[i];
            for j in i + 1..n {
                let mut w = a[(i, j)];
                for r in i + 1..m {
                    w += a[(r, i)] * a[(r, j)];
                }
                w *= t;
                a[(i, j)] -= w;
                for r in i + 1..m {
                    a[(r, j)] -= w * a[(r, i)];
                }
                norms[j] = a.view((i + 1, j), (m - i - 1, 1)).norm_squared();
            }
        }
        Self { packed: a, tau, perm }
    }

    fn apply_qt(&self, b: &mut Vector) {
        let m = self.packed.nrows();
        for (i, &t) in self.tau.iter().enumerate() {
            if t == 0.0 {
                continue;
            }
            let mut w = b[i];
            for r in i + 1..m {
                w += self.packed[(r, i)] * b[r];
            }
            w *= t;
            b[i] -= w;
            for r in i + 1..m {
                b[r] -= w * self.packed[(r, i)];
            }
        }
    }

    fn rank(&self, rel_tol: f64) -> usize {
        let k = self.tau.len();
        if k == 0 {
            return 0;
        }
        let top = self.packed[(0, 0)].abs();
        if top == 0.0 {
            return 0;
        }
        (0..k).take_while(|&i| self.packed[(i, i)].abs() > rel_tol * top).count()
    }

    /// Back substitution with the leading `r x r` block of `R`.
    fn solve_r11(&self, r: usize, rhs: &mut [f64]) {
        for i in (0..r).rev() {
            let mut s = rhs[i];
            for j in i + 1..r {
                s -= self.packed[(i, j)] * rhs[j];
            }
            rhs[i] = s / self.packed[(i, i)];
        }
    }

    fn least_squares(&self, r: usize, f: &Vector) -> Vector {
        let n = self.packed.ncols();
        let mut qtf = f.clone();
        self.apply_qt(&mut qtf);
        let mut z: Vec<f64> = qtf.iter().take(r).copied().collect();
        self.solve_r11(r, &mut z);
        let mut x = Vector::zeros(n);
        for (i, v) in z.into_iter().enumerate() {
            x[self.perm[i]] = v;
        }
        x
    }
}

/// Solves `E x = f` in the least-squares sense and returns a kernel basis.
///
/// Rank is decided by `|R_ii| > rel_tol * |R_00|` on the pivoted factor.
pub fn solve_affine(e: &Matrix, f: &Vector, rel_tol: f64) -> AffineSolution {
    let n = e.ncols();
    if e.nrows() == 0 {
        return AffineSolution {
            particular: Vector::zeros(n),
            kernel: Matrix::identity(n, n),
            rank: 0,
            residual: 0.0,
        };
    }
    let qr = PivotedQr::new(e.clone());
    let r = qr.rank(rel_tol);

    let mut x = qr.least_squares(r, f);
    for _ in 0..2 {
        let res = f - e * &x;
        x += qr.least_squares(r, &res);
    }
    let residual = (f - e * &x).amax();

    let mut kernel = Matrix::zeros(n, n - r);
    for c in 0..n - r {
        let mut col: Vec<f64> = (0..r).map(|i| -qr.packed[(i, r + c)]).collect();
        qr.solve_r11(r, &mut col);
        for (i, v) in col.into_iter().enumerate() {
            kernel[(qr.perm[i], c)] = v;
        }
        kernel[(qr.perm[r + c], c)] = 1.0;
    }
    AffineSolution {
        particular: x,
        kernel,
        rank: r,
        residual,
    }
}

/// Orthonormal basis for the column space of a full-column-rank matrix.
pub fn orthonormalize(m: Matrix) -> Matrix {
    if m.ncols() == 0 {
        return m;
    }
    let q = m.qr().q();
    // Second pass guards against loss of orthogonality for poorly scaled input.
    q.qr().q()
}

/// Row-major (de)serialization of matrices as nested arrays.
pub mod serde_matrix {
    use super::Matrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
        (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix, String> {
        let ncols = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
            return Err(format!("row {i} has {} entries, expected {ncols}", rows[i].len()));
        }
        Ok(Matrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
    }

    pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows).map_err(serde::de::Error::custom)
    }

    pub mod seq {
        use super::{from_rows, to_rows, Matrix};
        use serde::{Deserialize, Deserializer, Serialize, Serializer};

        pub fn serialize<S: Serializer>(ms: &[Matrix], s: S) -> Result<S::Ok, S::Error> {
            ms.iter().map(to_rows).collect::<Vec<_>>().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Matrix>, D::Error> {
            let raw = Vec::<Vec<Vec<f64>>>::deserialize(d)?;
            raw.iter()
                .map(|rows| from_rows(rows))
                .collect::<Result<_, _>>()
                .map_err(serde::de::Error::custom)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_of_rank_deficient_system() {
        // Third column is the sum of the first two.
        let e = Matrix::from_row_slice(3, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 2.0]);
        let f = Vector::from_vec(vec![1.0, 2.0, 3.0]);
        let sol = solve_affine(&e, &f, 1e-12);
        assert_eq!(sol.rank, 2);
        assert_eq!(sol.kernel.ncols(), 1);
        assert!((&e * &sol.kernel).amax() < 1e-14);
        assert!(sol.residual < 1e-14);
    }

    #[test]
    fn inconsistent_system_reports_residual() {
        let e = Matrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let f = Vector::from_vec(vec![0.0, 1.0]);
        let sol = solve_affine(&e, &f, 1e-12);
        assert!((sol.residual - 0.5).abs() < 1e-14);
    }

    #[test]
    fn pattern_product_is_boolean() {
        let a = pattern_of(&Matrix::from_row_slice(2, 2, &[1.0, -1.0, 0.0, 0.0]));
        let b = pattern_of(&Matrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]));
        let p = pattern_mul(&a, &b);
        // Numerically the (0,0) entry cancels, structurally it does not.
        assert!(p[(0, 0)]);
        assert!(!p[(0, 1)]);
        assert!(!p[(1, 0)]);
    }

    #[test]
    fn matrix_rows_roundtrip() {
        let m = Matrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let rows = serde_matrix::to_rows(&m);
        assert_eq!(rows[0], vec![1.0, 2.0, 3.0]);
        assert_eq!(serde_matrix::from_rows(&rows).unwrap(), m);
        assert!(serde_matrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
