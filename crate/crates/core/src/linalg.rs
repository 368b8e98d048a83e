//! Dense row-major `f64` matrices and vectors.
//!
//! Products accumulate each output entry sequentially over the inner
//! dimension, so results are bitwise reproducible regardless of how the
//! compiler vectorizes the loops over the output columns.

use crate::error::{ensure, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(
            data.len() == rows * cols,
            "matrix buffer has {} entries, expected {rows}x{cols}",
            data.len()
        );
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Matrix::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        ensure!(
            rows.iter().all(|r| r.len() == cols),
            "ragged rows in matrix literal"
        );
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        transpose_into(&self.data, self.rows, self.cols, &mut t.data);
        t
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    /// Copy with every column shifted to zero mean.
    pub fn center_columns(&self) -> Matrix {
        let mut means = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (m, x) in means.iter_mut().zip(self.row(i)) {
                *m += x;
            }
        }
        let n = self.rows as f64;
        means.iter_mut().for_each(|m| *m /= n);
        let mut out = self.clone();
        for i in 0..self.rows {
            for (x, m) in out.row_mut(i).iter_mut().zip(&means) {
                *x -= m;
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `a · b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    ensure!(
        a.cols == b.rows,
        "matmul dimension mismatch: {}x{} times {}x{}",
        a.rows,
        a.cols,
        b.rows,
        b.cols
    );
    let mut c = Matrix::zeros(a.rows, b.cols);
    gemm_acc(&a.data, &b.data, &mut c.data, a.rows, a.cols, b.cols);
    Ok(c)
}

/// `aᵀ · b`.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    ensure!(
        a.rows == b.rows,
        "matmul_tn dimension mismatch: ({}x{})ᵀ times {}x{}",
        a.rows,
        a.cols,
        b.rows,
        b.cols
    );
    let mut c = Matrix::zeros(a.cols, b.cols);
    gemm_tn_acc(&a.data, &b.data, &mut c.data, a.rows, a.cols, b.cols);
    Ok(c)
}

pub fn frobenius_norm(m: &Matrix) -> f64 {
    m.data.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `c += a · b` with `a: m×k`, `b: k×n`, `c: m×n`, all row-major.
///
/// Zero entries of `a` are skipped; with finite `b` this leaves every sum
/// unchanged and makes sparse inputs (MNIST pixels) much cheaper.
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if n == 0 {
        return;
    }
    for (a_row, c_row) in a.chunks_exact(k.max(1)).zip(c.chunks_exact_mut(n)) {
        for (p, &s) in a_row.iter().enumerate().take(k) {
            if s == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv += s * bv;
            }
        }
    }
}

/// `c += aᵀ · b` with `a: k×m`, `b: k×n`, `c: m×n`.
pub(crate) fn gemm_tn_acc(a: &[f64], b: &[f64], c: &mut [f64], k: usize, m: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if n == 0 || m == 0 {
        return;
    }
    for (a_row, b_row) in a.chunks_exact(m).zip(b.chunks_exact(n)) {
        for (i, &s) in a_row.iter().enumerate() {
            if s == 0.0 {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv += s * bv;
            }
        }
    }
}

pub(crate) fn transpose_into(src: &[f64], rows: usize, cols: usize, dst: &mut [f64]) {
    debug_assert_eq!(dst.len(), rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            dst[j * rows + i] = src[i * cols + j];
        }
    }
}

/// Non-empty vector of finite floats.
#[derive(Clone, Debug, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        ensure!(!data.is_empty(), "vector must be non-empty");
        ensure!(
            data.iter().all(|x| x.is_finite()),
            "vector has non-finite entries"
        );
        Ok(Vector(data))
    }

    pub fn zeros(n: usize) -> Self {
        Vector(vec![0.0; n])
    }

    pub fn basis(n: usize, i: usize) -> Self {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        Vector(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn scaled(&self, s: f64) -> Vector {
        Vector(self.0.iter().map(|x| x * s).collect())
    }

    /// `self - other`.
    pub fn sub(&self, other: &Vector) -> Vector {
        Vector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn add(&self, other: &Vector) -> Vector {
        Vector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// `self += s · x`.
    pub fn axpy(&mut self, s: f64, x: &Vector) {
        axpy(&mut self.0, s, &x.0);
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(y: &mut [f64], s: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += s * xv;
    }
}

/// Orthogonalizes `v` against `u`: returns `(u, v - (u·v / u·u) u)`.
pub fn gram_schmidt_pair(u: &Vector, v: &Vector) -> Result<(Vector, Vector)> {
    ensure!(
        u.len() == v.len(),
        "basis vectors differ in length: {} vs {}",
        u.len(),
        v.len()
    );
    let uu = u.dot(u);
    if uu == 0.0 {
        return Err(Error::DegenerateBasis("first basis vector is zero".into()));
    }
    let v_norm = v.norm();
    if v_norm == 0.0 {
        return Err(Error::DegenerateBasis("second basis vector is zero".into()));
    }
    let coef = u.dot(v) / uu;
    let mut v_perp = v.clone();
    v_perp.axpy(-coef, u);
    if v_perp.norm() <= 1e-10 * v_norm {
        return Err(Error::DegenerateBasis(
            "basis vectors are parallel".into(),
        ));
    }
    Ok((u.clone(), v_perp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.normal()).collect();
        Matrix::new(rows, cols, data).unwrap()
    }

    /// Triple loop written independently of the kernels above.
    fn naive_product(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = vec![vec![0.0; b.cols()]; a.rows()];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                let mut s = 0.0;
                for p in 0..a.cols() {
                    s += a.get(i, p) * b.get(p, j);
                }
                *cell = s;
            }
        }
        Matrix::from_rows(&out).unwrap()
    }

    #[test]
    fn identity_times_m() {
        let mut rng = Rng::new(1);
        let m = random_matrix(&mut rng, 3, 4);
        assert_eq!(matmul(&Matrix::identity(3), &m).unwrap(), m);
    }

    #[test]
    fn small_product() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[2.0, 4.0]);
    }

    #[test]
    fn product_matches_triple_loop() {
        let mut rng = Rng::new(2);
        let a = random_matrix(&mut rng, 7, 5);
        let b = random_matrix(&mut rng, 5, 3);
        let c = matmul(&a, &b).unwrap();
        let oracle = naive_product(&a, &b);
        for (x, y) in c.data().iter().zip(oracle.data()) {
            assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn transposed_product_matches() {
        let mut rng = Rng::new(3);
        let a = random_matrix(&mut rng, 6, 4);
        let b = random_matrix(&mut rng, 6, 5);
        let c = matmul_tn(&a, &b).unwrap();
        let oracle = naive_product(&a.transpose(), &b);
        for (x, y) in c.data().iter().zip(oracle.data()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn mismatched_product_is_rejected() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        assert!(matches!(matmul(&a, &b), Err(Error::Contract(_))));
    }

    #[test]
    fn frobenius_examples() {
        assert_eq!(frobenius_norm(&Matrix::zeros(3, 3)), 0.0);
        let m = Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap();
        assert_eq!(frobenius_norm(&m), 5.0);
        let mut rng = Rng::new(4);
        let r = random_matrix(&mut rng, 6, 6);
        let mut s = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                s += r.get(i, j).powi(2);
            }
        }
        assert!((frobenius_norm(&r) - s.sqrt()).abs() <= 1e-12);
    }

    #[test]
    fn gram_schmidt_examples() {
        let u = Vector::new(vec![2.0, 0.0]).unwrap();
        let v = Vector::new(vec![1.0, 1.0]).unwrap();
        let (_, vp) = gram_schmidt_pair(&u, &v).unwrap();
        assert_eq!(vp.as_slice(), &[0.0, 1.0]);

        let w = Vector::new(vec![0.0, 3.0]).unwrap();
        let (_, wp) = gram_schmidt_pair(&u, &w).unwrap();
        assert_eq!(wp, w);

        let mut rng = Rng::new(5);
        let a = Vector::new((0..100).map(|_| rng.normal()).collect()).unwrap();
        let b = Vector::new((0..100).map(|_| rng.normal()).collect()).unwrap();
        let (a2, bp) = gram_schmidt_pair(&a, &b).unwrap();
        assert!(a2.dot(&bp).abs() < 1e-10 * a.norm() * b.norm());
    }

    #[test]
    fn gram_schmidt_rejects_degenerate() {
        let u = Vector::new(vec![1.0, 2.0]).unwrap();
        let par = Vector::new(vec![-2.0, -4.0]).unwrap();
        assert!(matches!(
            gram_schmidt_pair(&u, &par),
            Err(Error::DegenerateBasis(_))
        ));
        assert!(matches!(
            gram_schmidt_pair(&Vector::zeros(2), &u),
            Err(Error::DegenerateBasis(_))
        ));
    }

    #[test]
    fn vector_rejects_empty_and_nan() {
        assert!(Vector::new(vec![]).is_err());
        assert!(Vector::new(vec![f64::NAN]).is_err());
    }
}
