//! Dense complex linear algebra for small (d <= 64) systems.
//!
//! Matrices are stored row-major. Everything here is value-semantic: no
//! operation mutates its inputs, so matrices and states can be shared
//! freely across worker threads.

use std::fmt;
use std::ops::{Index, IndexMut, Mul};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

use crate::error::{domain, shape, Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Relative singular-value cutoff used to decide linear dependence.
pub const RANK_RTOL: f64 = 1e-9;

/// Tolerance on `sum |a_i|^2 = 1` accepted by [`PureState::new`].
pub const NORM_TOL: f64 = 1e-12;

#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged input; intended for
    /// literals.
    pub fn from_rows(rows: &[Vec<C64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Self {
            rows: r,
            cols: c,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn diag(entries: &[C64]) -> Self {
        let mut m = Self::zeros(entries.len(), entries.len());
        for (i, &e) in entries.iter().enumerate() {
            m[(i, i)] = e;
        }
        m
    }

    /// Matrix whose columns are the given vectors.
    pub fn from_columns(columns: &[&[C64]]) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, |c| c.len());
        if columns.iter().any(|c| c.len() != rows) {
            return Err(shape("columns of unequal length"));
        }
        Ok(Self::from_fn(rows, cols, |i, j| columns[j][i]))
    }

    pub fn pauli_x() -> Self {
        Self::from_rows(&[vec![ZERO, ONE], vec![ONE, ZERO]])
    }

    pub fn pauli_y() -> Self {
        Self::from_rows(&[vec![ZERO, -I], vec![I, ZERO]])
    }

    pub fn pauli_z() -> Self {
        Self::from_rows(&[vec![ONE, ZERO], vec![ZERO, -ONE]])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<C64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[C64]) {
        assert_eq!(values.len(), self.rows);
        for (i, &v) in values.iter().enumerate() {
            self[(i, j)] = v;
        }
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == ZERO {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[C64]) -> Result<Vec<C64>> {
        if self.cols != v.len() {
            return Err(shape(format!(
                "cannot apply {}x{} matrix to vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn trace(&self) -> Result<C64> {
        if !self.is_square() {
            return Err(shape("trace of a non-square matrix"));
        }
        Ok((0..self.rows).map(|i| self[(i, i)]).sum())
    }

    pub fn scale(&self, factor: C64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x * factor).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(C64, C64) -> C64) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(shape(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &Self) -> Self {
        let rows = self.rows * other.rows;
        let cols = self.cols * other.cols;
        Self::from_fn(rows, cols, |i, j| {
            self[(i / other.rows, j / other.cols)] * other[(i % other.rows, j % other.cols)]
        })
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
    }

    /// True iff `max |(A†A - I)_ij| <= tol`.
    pub fn is_unitary(&self, tol: f64) -> Result<bool> {
        if !self.is_square() {
            return Err(shape("unitarity of a non-square matrix"));
        }
        let gram = self.adjoint().matmul(self)?;
        Ok(gram.max_abs_diff(&Self::identity(self.rows)) <= tol)
    }

    pub fn is_hermitian(&self, tol: f64) -> Result<bool> {
        if !self.is_square() {
            return Err(shape("hermiticity of a non-square matrix"));
        }
        Ok(self.max_abs_diff(&self.adjoint()) <= tol)
    }

    /// Singular values in descending order.
    pub fn singular_values(&self) -> Vec<f64> {
        let m = DMatrix::from_fn(self.rows, self.cols, |i, j| self[(i, j)]);
        let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        sv
    }

    /// Number of singular values above `RANK_RTOL` times the largest.
    pub fn numerical_rank(&self) -> usize {
        let sv = self.singular_values();
        let Some(&largest) = sv.first() else {
            return 0;
        };
        if largest == 0.0 {
            return 0;
        }
        sv.iter().filter(|&&s| s >= RANK_RTOL * largest).count()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.re.is_finite() && x.im.is_finite())
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Unchecked product; panics on mismatched shapes. Use [`ComplexMatrix::matmul`]
/// where shapes come from user input.
impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: Self) -> ComplexMatrix {
        self.matmul(rhs).expect("matrix shapes agree")
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, " ")?;
            for x in self.row(i) {
                write!(f, " {:+.4}{:+.4}i", x.re, x.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

/// Unit-norm state vector on `dim = 2^n` amplitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct PureState {
    amplitudes: Vec<C64>,
}

impl PureState {
    pub fn new(amplitudes: Vec<C64>) -> Result<Self> {
        check_dim(amplitudes.len())?;
        let norm_sqr = norm_sqr(&amplitudes);
        if (norm_sqr - 1.0).abs() > NORM_TOL || !norm_sqr.is_finite() {
            return Err(domain(format!("state norm^2 = {norm_sqr}, expected 1")));
        }
        Ok(Self { amplitudes })
    }

    /// Rescales an arbitrary nonzero vector to unit norm.
    pub fn normalized(mut amplitudes: Vec<C64>) -> Result<Self> {
        check_dim(amplitudes.len())?;
        let norm = norm_sqr(&amplitudes).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(domain("cannot normalize a zero or non-finite vector"));
        }
        amplitudes.iter_mut().for_each(|a| *a /= norm);
        Ok(Self { amplitudes })
    }

    /// Computational basis state `|index⟩`.
    pub fn basis(dim: usize, index: usize) -> Result<Self> {
        check_dim(dim)?;
        if index >= dim {
            return Err(domain(format!("basis index {index} >= dimension {dim}")));
        }
        let mut amplitudes = vec![ZERO; dim];
        amplitudes[index] = ONE;
        Ok(Self { amplitudes })
    }

    /// Wraps amplitudes produced by a unitary map of a valid state.
    pub(crate) fn from_unitary_image(amplitudes: Vec<C64>) -> Self {
        debug_assert!((norm_sqr(&amplitudes) - 1.0).abs() < 1e-9);
        Self { amplitudes }
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amplitudes
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &Self) -> C64 {
        inner(&self.amplitudes, &other.amplitudes)
    }

    pub fn norm(&self) -> f64 {
        norm_sqr(&self.amplitudes).sqrt()
    }

    /// `M|self⟩`; `M` must be unitary for the result to stay a state.
    pub fn evolve(&self, unitary: &ComplexMatrix) -> Result<Self> {
        Ok(Self::from_unitary_image(unitary.matvec(&self.amplitudes)?))
    }

    /// Expectation `⟨self|M|self⟩`.
    pub fn expectation(&self, m: &ComplexMatrix) -> Result<C64> {
        let mv = m.matvec(&self.amplitudes)?;
        Ok(inner(&self.amplitudes, &mv))
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 || !dim.is_power_of_two() {
        return Err(domain(format!("state dimension {dim} is not a power of two")));
    }
    Ok(())
}

/// `Σ conj(a_i) b_i`.
pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm_sqr(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum()
}

/// Householder QR of an `m x k` matrix.
///
/// Returns the full `m x m` unitary `Q` and the `m x k` upper-trapezoidal `R`
/// with `A = Q R`. The diagonal of `R` is made real and nonnegative, which fixes
/// the column phases of `Q`: whenever the first column of `A` has unit norm,
/// `Q[:, 0]` equals it exactly.
pub fn householder_qr(a: &ComplexMatrix) -> (ComplexMatrix, ComplexMatrix) {
    let m = a.rows();
    let k = a.cols();
    let mut r = a.clone();
    let mut q = ComplexMatrix::identity(m);

    for col in 0..k.min(m.saturating_sub(1)) {
        let x: Vec<C64> = (col..m).map(|i| r[(i, col)]).collect();
        let x_norm = norm_sqr(&x).sqrt();
        if x_norm == 0.0 {
            continue;
        }
        let phase = if x[0].norm() > 0.0 {
            x[0] / x[0].norm()
        } else {
            ONE
        };
        let alpha = -phase * x_norm;
        let mut v = x;
        v[0] -= alpha;
        let v_norm_sqr = norm_sqr(&v);
        if v_norm_sqr == 0.0 {
            continue;
        }
        // R <- H R on rows col.., H = I - 2 v v† / (v†v)
        for j in 0..k {
            let dot: C64 = (col..m).map(|i| v[i - col].conj() * r[(i, j)]).sum();
            let f = dot * (2.0 / v_norm_sqr);
            for i in col..m {
                r[(i, j)] -= v[i - col] * f;
            }
        }
        // Q <- Q H on columns col..
        for i in 0..m {
            let dot: C64 = (col..m).map(|j| q[(i, j)] * v[j - col]).sum();
            let f = dot * (2.0 / v_norm_sqr);
            for j in col..m {
                q[(i, j)] -= f * v[j - col].conj();
            }
        }
    }

    for d in 0..k.min(m) {
        let rd = r[(d, d)];
        if rd.norm() == 0.0 {
            continue;
        }
        let phase = rd / rd.norm();
        for i in 0..m {
            q[(i, d)] *= phase;
        }
        for j in 0..k {
            r[(d, j)] *= phase.conj();
        }
        r[(d, d)] = C64::new(r[(d, d)].re, 0.0);
    }
    for j in 0..k {
        for i in (j + 1)..m {
            r[(i, j)] = ZERO;
        }
    }
    (q, r)
}

/// Completes `states` to a `d x d` unitary.
///
/// Column 1 equals `states[0]`, and for every `j` the first `j` columns span
/// the same space as the first `j` inputs. The remaining `d - N` columns are an
/// orthonormal basis of the complement drawn Haar-uniformly from `rng`.
pub fn qr_unitary_extend<R: Rng + ?Sized>(
    states: &[PureState],
    rng: &mut R,
) -> Result<ComplexMatrix> {
    let Some(first) = states.first() else {
        return Err(domain("qr_unitary_extend needs at least one state"));
    };
    let d = first.dim();
    if states.iter().any(|s| s.dim() != d) {
        return Err(shape("states of differing dimension"));
    }
    let n = states.len();
    if n > d {
        return Err(Error::Dependence { rank: d, count: n });
    }
    let cols: Vec<&[C64]> = states.iter().map(PureState::amplitudes).collect();
    let m = ComplexMatrix::from_columns(&cols)?;
    let rank = m.numerical_rank();
    if rank < n {
        return Err(Error::Dependence { rank, count: n });
    }
    let (mut q, _) = householder_qr(&m);
    if n < d {
        let y = crate::haar::haar_unitary(d - n, rng)?;
        let completion = ComplexMatrix::from_fn(d, d - n, |i, j| q[(i, n + j)]);
        let rotated = &completion * &y;
        for j in 0..d - n {
            q.set_column(n + j, &rotated.column(j));
        }
    }
    Ok(q)
}
