//! Dense complex matrices and the eigen-machinery everything else is built on.
//!
//! Storage is a column-major [`faer::Mat`], but every public accessor speaks
//! in (row, col) terms and [`ComplexMatrix::from_row_major`] /
//! [`ComplexMatrix::to_row_major`] fix the semantic entry order. All kernels
//! run sequentially so results are bit-reproducible no matter how many trial
//! workers are active.

use std::f64::consts::PI;
use std::ops::Mul;

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par, Side};

use crate::error::{Error, Result};

pub use faer::c64;

/// Tolerance on `max |H - H^dagger|` accepted by [`HermitianMatrix::new`].
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Tolerance on `max |U^dagger U - I|` accepted by [`UnitaryMatrix::new`].
pub const UNITARY_TOL: f64 = 1e-10;

/// Relative gap below which neighbouring eigenvalues are treated as one
/// degenerate cluster.
const CLUSTER_TOL: f64 = 1e-10;
/// Smallest residual norm for a projector column to count as a new direction
/// when building the canonical basis of a cluster.
const CANONICAL_ACCEPT: f64 = 1e-6;

#[inline]
pub(crate) fn cis(theta: f64) -> c64 {
    c64::new(theta.cos(), theta.sin())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix {
    inner: Mat<c64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            inner: Mat::zeros(rows, cols),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            inner: Mat::identity(n, n),
        }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> c64) -> Self {
        Self {
            inner: Mat::from_fn(rows, cols, f),
        }
    }

    pub fn from_diagonal(diag: &[c64]) -> Self {
        let n = diag.len();
        let mut inner = Mat::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            inner[(i, i)] = d;
        }
        Self { inner }
    }

    /// Builds a matrix from entries listed row by row.
    pub fn from_row_major(rows: usize, cols: usize, entries: &[c64]) -> Result<Self> {
        if rows * cols != entries.len() {
            return Err(Error::DimensionMismatch {
                context: "row-major entry count",
                expected: rows * cols,
                found: entries.len(),
            });
        }
        if let Some(k) = entries
            .iter()
            .position(|z| !(z.re.is_finite() && z.im.is_finite()))
        {
            return Err(Error::NonFinite {
                row: k / cols,
                col: k % cols,
            });
        }
        Ok(Self::from_fn(rows, cols, |i, j| entries[i * cols + j]))
    }

    pub fn to_row_major(&self) -> Vec<c64> {
        let mut out = Vec::with_capacity(self.rows() * self.cols());
        for i in 0..self.rows() {
            for j in 0..self.cols() {
                out.push(self.inner[(i, j)]);
            }
        }
        out
    }

    pub(crate) fn from_faer(inner: Mat<c64>) -> Self {
        Self { inner }
    }

    pub fn as_faer(&self) -> MatRef<'_, c64> {
        self.inner.as_ref()
    }

    pub fn rows(&self) -> usize {
        self.inner.nrows()
    }

    pub fn cols(&self) -> usize {
        self.inner.ncols()
    }

    pub fn is_square(&self) -> bool {
        self.rows() == self.cols()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> c64 {
        self.inner[(row, col)]
    }

    #[inline]
    pub(crate) fn set(&mut self, row: usize, col: usize, value: c64) {
        self.inner[(row, col)] = value;
    }

    pub fn column(&self, j: usize) -> &[c64] {
        self.inner.col_as_slice(j)
    }

    pub(crate) fn column_mut(&mut self, j: usize) -> &mut [c64] {
        self.inner.col_as_slice_mut(j)
    }

    pub fn adjoint(&self) -> Self {
        Self {
            inner: self.inner.adjoint().to_owned(),
        }
    }

    pub fn diagonal(&self) -> Vec<c64> {
        (0..self.rows().min(self.cols()))
            .map(|i| self.inner[(i, i)])
            .collect()
    }

    pub fn is_all_finite(&self) -> bool {
        self.inner.is_all_finite()
    }

    /// True when every off-diagonal entry is exactly zero.
    pub fn is_diagonal(&self) -> bool {
        (0..self.cols()).all(|j| {
            self.column(j)
                .iter()
                .enumerate()
                .all(|(i, z)| i == j || (z.re == 0.0 && z.im == 0.0))
        })
    }

    /// Largest entry modulus.
    pub fn max_norm(&self) -> f64 {
        self.inner.norm_max()
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        (0..self.cols())
            .map(|j| self.column(j).iter().map(|z| z.norm_sqr()).sum::<f64>())
            .sum()
    }

    /// `max |self - other|`, panicking on a shape mismatch.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(
            (self.rows(), self.cols()),
            (other.rows(), other.cols()),
            "shape mismatch in max_abs_diff"
        );
        let mut worst = 0.0f64;
        for j in 0..self.cols() {
            for (a, b) in self.column(j).iter().zip(other.column(j)) {
                worst = worst.max((a - b).norm());
            }
        }
        worst
    }

    pub fn scale(&self, s: c64) -> Self {
        Self::from_fn(self.rows(), self.cols(), |i, j| self.inner[(i, j)] * s)
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows(), self.cols()), (other.rows(), other.cols()));
        Self::from_fn(self.rows(), self.cols(), |i, j| {
            self.inner[(i, j)] + other.inner[(i, j)]
        })
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows(), self.cols()), (other.rows(), other.cols()));
        Self::from_fn(self.rows(), self.cols(), |i, j| {
            self.inner[(i, j)] - other.inner[(i, j)]
        })
    }

    /// `self * diag(d)`, i.e. column `j` multiplied by `d[j]`.
    pub fn scale_columns(&self, d: &[c64]) -> Self {
        assert_eq!(self.cols(), d.len());
        let mut out = self.clone();
        for (j, &s) in d.iter().enumerate() {
            for z in out.column_mut(j) {
                *z *= s;
            }
        }
        out
    }

    /// `diag(d) * self`.
    pub fn scale_rows(&self, d: &[c64]) -> Self {
        assert_eq!(self.rows(), d.len());
        let mut out = self.clone();
        for j in 0..out.cols() {
            for (z, &s) in out.column_mut(j).iter_mut().zip(d) {
                *z *= s;
            }
        }
        out
    }

    /// `self^dagger * rhs` without materialising the adjoint.
    pub fn adjoint_mul(&self, rhs: &Self) -> Self {
        assert_eq!(self.rows(), rhs.rows(), "shape mismatch in adjoint_mul");
        let mut out = Mat::zeros(self.cols(), rhs.cols());
        matmul(
            out.as_mut(),
            Accum::Replace,
            self.inner.adjoint(),
            rhs.inner.as_ref(),
            c64::new(1.0, 0.0),
            Par::Seq,
        );
        Self { inner: out }
    }

    /// `self * rhs^dagger`.
    pub fn mul_adjoint(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols(), rhs.cols(), "shape mismatch in mul_adjoint");
        let mut out = Mat::zeros(self.rows(), rhs.rows());
        matmul(
            out.as_mut(),
            Accum::Replace,
            self.inner.as_ref(),
            rhs.inner.adjoint(),
            c64::new(1.0, 0.0),
            Par::Seq,
        );
        Self { inner: out }
    }

    /// Matrix-vector product.
    pub fn apply(&self, v: &[c64]) -> Vec<c64> {
        assert_eq!(self.cols(), v.len(), "shape mismatch in apply");
        let mut out = vec![c64::new(0.0, 0.0); self.rows()];
        for (j, &x) in v.iter().enumerate() {
            if x.re == 0.0 && x.im == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.column(j)) {
                *o += a * x;
            }
        }
        out
    }

    /// Columns `indices` in the given order.
    pub fn select_columns(&self, indices: &[usize]) -> Self {
        Self::from_fn(self.rows(), indices.len(), |i, k| self.inner[(i, indices[k])])
    }

    /// `max |A B - B A|`.
    pub fn commutator_norm(&self, other: &Self) -> f64 {
        (self * other).max_abs_diff(&(other * self))
    }

    /// `max |self^dagger self - I|`.
    pub fn unitarity_violation(&self) -> f64 {
        let g = self.adjoint_mul(self);
        let mut worst = 0.0f64;
        for j in 0..g.cols() {
            for (i, z) in g.column(j).iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((z - c64::new(target, 0.0)).norm());
            }
        }
        worst
    }

    pub fn hermiticity_violation(&self) -> f64 {
        let mut worst = 0.0f64;
        for j in 0..self.cols() {
            for i in 0..=j.min(self.rows().saturating_sub(1)) {
                worst = worst.max((self.inner[(i, j)] - self.inner[(j, i)].conj()).norm());
            }
        }
        worst
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(
            self.cols(),
            rhs.rows(),
            "shape mismatch: {}x{} * {}x{}",
            self.rows(),
            self.cols(),
            rhs.rows(),
            rhs.cols()
        );
        let mut out = Mat::zeros(self.rows(), rhs.cols());
        matmul(
            out.as_mut(),
            Accum::Replace,
            self.inner.as_ref(),
            rhs.inner.as_ref(),
            c64::new(1.0, 0.0),
            Par::Seq,
        );
        ComplexMatrix { inner: out }
    }
}

/// Square matrix with `max |H - H^dagger| <= 1e-12`.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianMatrix(ComplexMatrix);

impl HermitianMatrix {
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::NotSquare {
                rows: matrix.rows(),
                cols: matrix.cols(),
            });
        }
        if !matrix.is_all_finite() {
            return Err(Error::NonFinite { row: 0, col: 0 });
        }
        let violation = matrix.hermiticity_violation();
        if violation > HERMITIAN_TOL {
            return Err(Error::NotHermitian { violation });
        }
        Ok(Self(matrix))
    }

    /// Real diagonal matrix.
    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let d: Vec<c64> = diag.iter().map(|&x| c64::new(x, 0.0)).collect();
        Self(ComplexMatrix::from_diagonal(&d))
    }

    /// Wraps a matrix that is Hermitian by construction, symmetrising away
    /// rounding noise.
    pub(crate) fn from_trusted(matrix: ComplexMatrix) -> Self {
        let n = matrix.rows();
        let sym = ComplexMatrix::from_fn(n, n, |i, j| {
            (matrix.get(i, j) + matrix.get(j, i).conj()) * 0.5
        });
        Self(sym)
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.0
    }
}

/// Square matrix with `max |U^dagger U - I| <= 1e-10`.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitaryMatrix(ComplexMatrix);

impl UnitaryMatrix {
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::NotSquare {
                rows: matrix.rows(),
                cols: matrix.cols(),
            });
        }
        if !matrix.is_all_finite() {
            return Err(Error::NonFinite { row: 0, col: 0 });
        }
        let violation = matrix.unitarity_violation();
        if violation > UNITARY_TOL {
            return Err(Error::NotUnitary { violation });
        }
        Ok(Self(matrix))
    }

    pub fn identity(n: usize) -> Self {
        Self(ComplexMatrix::identity(n))
    }

    /// Diagonal unitary `diag(exp(-i * angles))`.
    pub fn from_eigenangles(angles: &[f64]) -> Self {
        let d: Vec<c64> = angles.iter().map(|&a| cis(-a)).collect();
        Self(ComplexMatrix::from_diagonal(&d))
    }

    /// For results of products of exactly unitary factors; skips the O(N^3)
    /// check.
    pub(crate) fn from_trusted(matrix: ComplexMatrix) -> Self {
        debug_assert!(matrix.is_square());
        Self(matrix)
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.0
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn compose(&self, rhs: &Self) -> Result<Self> {
        if self.dim() != rhs.dim() {
            return Err(Error::DimensionMismatch {
                context: "unitary product",
                expected: self.dim(),
                found: rhs.dim(),
            });
        }
        Ok(Self(&self.0 * &rhs.0))
    }

    /// `T * self * T^dagger`.
    pub fn conjugate_by(&self, t: &Self) -> Result<Self> {
        if self.dim() != t.dim() {
            return Err(Error::DimensionMismatch {
                context: "unitary conjugation",
                expected: self.dim(),
                found: t.dim(),
            });
        }
        Ok(Self((&t.0 * &self.0).mul_adjoint(&t.0)))
    }
}

/// Eigenvalues (or eigenangles) with their orthonormal eigenvectors as columns.
#[derive(Clone, Debug)]
pub struct EigenSystem {
    pub values: Vec<f64>,
    pub vectors: ComplexMatrix,
}

impl EigenSystem {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `V diag(f(lambda)) V^dagger`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> c64) -> ComplexMatrix {
        let d: Vec<c64> = self.values.iter().map(|&x| f(x)).collect();
        self.vectors.scale_columns(&d).mul_adjoint(&self.vectors)
    }

    /// `exp(-i s H)` for the Hermitian operator this system decomposes.
    pub fn exp_i(&self, s: f64) -> UnitaryMatrix {
        UnitaryMatrix::from_trusted(self.reconstruct_with(|x| cis(-s * x)))
    }
}

/// Eigendecomposition of a Hermitian matrix, values ascending.
pub fn eig_hermitian(h: &HermitianMatrix) -> Result<EigenSystem> {
    let raw = raw_hermitian_eigen(h.matrix())?;
    let scale = raw.values.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let vectors = canonicalize_clusters(&raw.values, raw.vectors, CLUSTER_TOL * scale, false);
    Ok(EigenSystem {
        values: raw.values,
        vectors,
    })
}

fn raw_hermitian_eigen(m: &ComplexMatrix) -> Result<EigenSystem> {
    let n = m.rows();
    if n == 0 {
        return Ok(EigenSystem {
            values: Vec::new(),
            vectors: ComplexMatrix::zeros(0, 0),
        });
    }
    let evd = m
        .inner
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let s = evd.S().column_vector();
    let values: Vec<f64> = (0..n).map(|i| s[i].re).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("non-finite eigenvalue".into()));
    }
    Ok(EigenSystem {
        values,
        vectors: ComplexMatrix::from_faer(evd.U().to_owned()),
    })
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(x: f64) -> f64 {
    let mut y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    if y <= -PI {
        y += 2.0 * PI;
    }
    y
}

/// Eigendecomposition of a unitary matrix, `U v = exp(-i phi) v`, with the
/// eigenangles `phi` in `(-pi, pi]` sorted ascending.
///
/// The unitary is mapped to a Hermitian matrix by a Cayley transform centred
/// in the widest spectral gap, `H = -i (I + zU)(I - zU)^-1`, whose eigenvalues
/// `cot((theta0 - phi) / 2)` are strictly monotone in `phi`, so distinct
/// eigenangles can never collide. Angles are then read off Rayleigh quotients
/// of `U` itself.
pub fn eig_unitary(u: &UnitaryMatrix) -> Result<EigenSystem> {
    let n = u.dim();
    let um = u.matrix();
    if n == 0 {
        return Ok(EigenSystem {
            values: Vec::new(),
            vectors: ComplexMatrix::zeros(0, 0),
        });
    }
    if n == 1 {
        let phi = wrap_angle(-um.get(0, 0).arg());
        return Ok(EigenSystem {
            values: vec![phi],
            vectors: ComplexMatrix::identity(1),
        });
    }

    let theta0 = cayley_center(um)?;
    let z = cis(theta0);
    let zu = um.scale(z);
    let id = ComplexMatrix::identity(n);
    let denom = id.sub(&zu);
    let numer = id.add(&zu);
    let lu = denom.inner.partial_piv_lu();
    let x = {
        use faer::linalg::solvers::Solve;
        lu.solve(numer.inner.as_ref())
    };
    let h = ComplexMatrix::from_faer(x).scale(c64::new(0.0, -1.0));
    let h = HermitianMatrix::from_trusted(h);
    let raw = raw_hermitian_eigen(h.matrix())?;

    let uv = um * &raw.vectors;
    let mut pairs: Vec<(f64, usize)> = (0..n)
        .map(|j| {
            let rq: c64 = raw
                .vectors
                .column(j)
                .iter()
                .zip(uv.column(j))
                .map(|(v, w)| v.conj() * w)
                .sum();
            (wrap_angle(-rq.arg()), j)
        })
        .collect();
    // angles within the cluster tolerance of -pi belong to the +pi end
    for p in pairs.iter_mut() {
        if p.0 <= -PI + CLUSTER_TOL {
            p.0 = PI;
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let order: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let values: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let sorted = raw.vectors.select_columns(&order);
    let vectors = canonicalize_clusters(&values, sorted, CLUSTER_TOL, true);
    Ok(EigenSystem { values, vectors })
}

/// Picks the Cayley centre `theta0` in the middle of the widest gap of the
/// candidate angle set `{+-acos(c)}`, where `c` runs over the eigenvalues of
/// the Hermitian part `(U + U^dagger)/2`. That set contains every eigenangle,
/// so `theta0` is at least half the widest gap away from the spectrum.
fn cayley_center(u: &ComplexMatrix) -> Result<f64> {
    let n = u.rows();
    let herm = HermitianMatrix::from_trusted(u.add(&u.adjoint()).scale(c64::new(0.5, 0.0)));
    let cos_vals = herm
        .matrix()
        .inner
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let mut angles: Vec<f64> = Vec::with_capacity(2 * n);
    for c in cos_vals {
        let a = c.clamp(-1.0, 1.0).acos();
        angles.push(a);
        angles.push(-a);
    }
    angles.sort_by(f64::total_cmp);
    let mut best = (angles[0] + 2.0 * PI - angles[angles.len() - 1], angles[angles.len() - 1]);
    for w in angles.windows(2) {
        let gap = w[1] - w[0];
        if gap > best.0 {
            best = (gap, w[0]);
        }
    }
    Ok(best.1 + 0.5 * best.0)
}

/// Replaces the eigenvectors of every degenerate cluster by the Gram-Schmidt
/// orthonormalisation of the cluster projector's columns, taken in input
/// column order. The result depends only on the cluster's span, not on the
/// basis the solver happened to return; singleton clusters get their phase
/// fixed the same way.
fn canonicalize_clusters(
    values: &[f64],
    vectors: ComplexMatrix,
    tol: f64,
    circular: bool,
) -> ComplexMatrix {
    let n = values.len();
    if n == 0 {
        return vectors;
    }
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut current = vec![0usize];
    for i in 1..n {
        if (values[i] - values[i - 1]).abs() <= tol {
            current.push(i);
        } else {
            clusters.push(std::mem::take(&mut current));
            current.push(i);
        }
    }
    clusters.push(current);
    if circular && clusters.len() > 1 {
        let first = values[0];
        let last = values[n - 1];
        if (first + 2.0 * PI - last).abs() <= tol {
            let head = clusters.remove(0);
            clusters.last_mut().expect("nonempty").extend(head);
        }
    }

    let mut out = vectors.clone();
    for cluster in clusters {
        let w = vectors.select_columns(&cluster);
        let canon = canonical_basis(&w);
        for (k, &col) in cluster.iter().enumerate() {
            out.column_mut(col).copy_from_slice(canon.column(k));
        }
    }
    out
}

/// Canonical orthonormal basis of the span of the orthonormal columns `w`.
fn canonical_basis(w: &ComplexMatrix) -> ComplexMatrix {
    let (n, d) = (w.rows(), w.cols());
    // column j of w^dagger holds the coordinates of P e_j in the basis w
    let wh = w.adjoint();
    let mut q = ComplexMatrix::zeros(d, d);
    let mut accepted = 0usize;
    let mut coeff = vec![c64::new(0.0, 0.0); d];
    for j in 0..n {
        if accepted == d {
            break;
        }
        let a = wh.column(j);
        let norm0: f64 = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm0 < CANONICAL_ACCEPT {
            continue;
        }
        let mut r = a.to_vec();
        for _ in 0..2 {
            for (k, c) in coeff.iter_mut().enumerate().take(accepted) {
                *c = q
                    .column(k)
                    .iter()
                    .zip(&r)
                    .map(|(qk, rk)| qk.conj() * rk)
                    .sum();
            }
            for k in 0..accepted {
                let c = coeff[k];
                for (rk, qk) in r.iter_mut().zip(q.column(k)) {
                    *rk -= qk * c;
                }
            }
        }
        let nr: f64 = r.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if nr < CANONICAL_ACCEPT {
            continue;
        }
        for (dst, src) in q.column_mut(accepted).iter_mut().zip(&r) {
            *dst = src / nr;
        }
        accepted += 1;
    }
    if accepted < d {
        return w.clone();
    }
    w * &q
}

/// `exp(-i s H)` computed from the eigendecomposition of `H`.
pub fn expm_i_hermitian(h: &HermitianMatrix, s: f64) -> Result<UnitaryMatrix> {
    if s == 0.0 {
        return Ok(UnitaryMatrix::identity(h.dim()));
    }
    Ok(eig_hermitian(h)?.exp_i(s))
}
