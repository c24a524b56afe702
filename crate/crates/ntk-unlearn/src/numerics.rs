//! Dense matrix primitives and stabilized positive-semidefinite solves.
//!
//! All arithmetic is 64-bit and bitwise deterministic: inner products
//! accumulate over ascending index, and [`gram`] mirrors the upper triangle
//! when both arguments alias the same matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, SolveStage};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds from row slices; panics on ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        DenseMatrix { rows: r, cols: c, data }
    }

    /// Wraps an existing row-major buffer; panics on length mismatch.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "buffer length != rows*cols");
        DenseMatrix { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
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

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.data[i * self.cols + j]).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// `self · other`; per-element accumulation over ascending inner index.
    pub fn matmul(&self, other: &DenseMatrix) -> Self {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let aik = self.data[i * self.cols + k];
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                for j in 0..other.cols {
                    out_row[j] += aik * brow[j];
                }
            }
        }
        out
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn matmul_t_left(&self, other: &DenseMatrix) -> Self {
        assert_eq!(self.rows, other.rows, "matmul_t_left inner dimension");
        let mut out = Self::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let arow = &self.data[k * self.cols..(k + 1) * self.cols];
            let brow = &other.data[k * other.cols..(k + 1) * other.cols];
            for i in 0..self.cols {
                let aki = arow[i];
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for j in 0..other.cols {
                    out_row[j] += aki * brow[j];
                }
            }
        }
        out
    }

    /// `self · x` for a column vector.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "matvec dimension");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `selfᵀ · x` for a column vector.
    pub fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, x.len(), "matvec_t dimension");
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let xi = x[i];
            let row = self.row(i);
            for j in 0..self.cols {
                out[j] += xi * row[j];
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        let mut s = 0.0;
        for v in &self.data {
            s += v * v;
        }
        s.sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_diagonal(&mut self, value: f64) {
        debug_assert_eq!(self.rows, self.cols);
        for i in 0..self.rows {
            self.data[i * self.cols + i] += value;
        }
    }

    pub fn mean_diagonal(&self) -> f64 {
        if self.rows == 0 {
            return 0.0;
        }
        let mut s = 0.0;
        for i in 0..self.rows.min(self.cols) {
            s += self.data[i * self.cols + i];
        }
        s / self.rows as f64
    }

    fn max_asymmetry(&self) -> f64 {
        let mut m = 0.0_f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                m = m.max((self.data[i * self.cols + j] - self.data[j * self.cols + i]).abs());
            }
        }
        m
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Inner product over four independent accumulators so the FP adds pipeline;
/// the summation order is fixed, so results are reproducible run to run.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut s3 = 0.0;
    let mut k = 0;
    while k + 4 <= n {
        s0 += a[k] * b[k];
        s1 += a[k + 1] * b[k + 1];
        s2 += a[k + 2] * b[k + 2];
        s3 += a[k + 3] * b[k + 3];
        k += 4;
    }
    let mut s = (s0 + s1) + (s2 + s3);
    while k < n {
        s += a[k] * b[k];
        k += 1;
    }
    s
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Gram matrix `J1 · J2ᵀ` of two row-major matrices sharing a column count.
///
/// When both arguments are the same object the upper triangle is computed
/// once and mirrored, so the result is symmetric to the bit.
pub fn gram(j1: &DenseMatrix, j2: &DenseMatrix) -> Result<DenseMatrix> {
    if j1.cols != j2.cols {
        return Err(Error::DimensionMismatch {
            context: "gram".into(),
            expected: format!("{} columns", j1.cols),
            got: format!("{} columns", j2.cols),
        });
    }
    let mut out = DenseMatrix::zeros(j1.rows, j2.rows);
    // Row-block tiling keeps one block of j2 rows cache-resident across the
    // full i sweep; every entry is still dot(row_i, row_j), bit for bit.
    const TILE: usize = 16;
    if std::ptr::eq(j1, j2) {
        for jb in (0..j1.rows).step_by(TILE) {
            let jend = (jb + TILE).min(j1.rows);
            for i in 0..jend {
                for j in jb.max(i)..jend {
                    let v = dot(j1.row(i), j1.row(j));
                    out.data[i * j1.rows + j] = v;
                    out.data[j * j1.rows + i] = v;
                }
            }
        }
    } else {
        for jb in (0..j2.rows).step_by(TILE) {
            let jend = (jb + TILE).min(j2.rows);
            for i in 0..j1.rows {
                for j in jb..jend {
                    out.data[i * j2.rows + j] = dot(j1.row(i), j2.row(j));
                }
            }
        }
    }
    Ok(out)
}

/// Escalation schedule for diagonal stabilization, relative to `mean(diag(A))`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct JitterPolicy {
    pub initial_scale: f64,
    pub growth_factor: f64,
    pub max_scale: f64,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        JitterPolicy {
            initial_scale: 1e-8,
            growth_factor: 10.0,
            max_scale: 1e-2,
        }
    }
}

impl JitterPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_scale > 0.0 && self.initial_scale <= self.max_scale) {
            return Err(Error::InvalidConfig(format!(
                "jitter initial_scale must satisfy 0 < initial ({:e}) <= max ({:e})",
                self.initial_scale, self.max_scale
            )));
        }
        if !(self.growth_factor > 1.0) {
            return Err(Error::InvalidConfig(format!(
                "jitter growth_factor must exceed 1, got {}",
                self.growth_factor
            )));
        }
        Ok(())
    }

    /// Jitter scales to try in order: 0, initial, initial·growth, ... ≤ max.
    pub fn scales(&self) -> Vec<f64> {
        let mut out = vec![0.0];
        let mut s = self.initial_scale;
        while s <= self.max_scale * (1.0 + 1e-9) {
            out.push(s);
            s *= self.growth_factor;
        }
        out
    }
}

const SYMMETRY_RTOL: f64 = 1e-10;
const RESIDUAL_RTOL: f64 = 1e-8;

fn check_solve_inputs(a: &DenseMatrix, b: &DenseMatrix, context: &str) -> Result<()> {
    if a.rows != a.cols {
        return Err(Error::DimensionMismatch {
            context: format!("{context}: A must be square"),
            expected: format!("{0}x{0}", a.rows),
            got: format!("{}x{}", a.rows, a.cols),
        });
    }
    if b.rows != a.rows {
        return Err(Error::DimensionMismatch {
            context: format!("{context}: B row count"),
            expected: format!("{}", a.rows),
            got: format!("{}", b.rows),
        });
    }
    if !a.all_finite() {
        return Err(Error::NonFinite {
            context: format!("{context}: matrix A"),
        });
    }
    if !b.all_finite() {
        return Err(Error::NonFinite {
            context: format!("{context}: right-hand side B"),
        });
    }
    let asym = a.max_asymmetry();
    if asym > SYMMETRY_RTOL * 1.0_f64.max(a.max_abs()) {
        return Err(Error::NotSymmetric { max_asym: asym });
    }
    Ok(())
}

/// Lower-triangular Cholesky factor, or `None` when a pivot is not strictly
/// positive and finite.
fn cholesky(a: &DenseMatrix) -> Option<DenseMatrix> {
    let n = a.rows;
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let row_j = &l.data[j * n..j * n + j];
        let diag = a.data[j * n + j] - dot(row_j, row_j);
        if !(diag > 0.0) || !diag.is_finite() {
            return None;
        }
        let pivot = diag.sqrt();
        l.data[j * n + j] = pivot;
        for i in (j + 1)..n {
            let s = dot(&l.data[i * n..i * n + j], &l.data[j * n..j * n + j]);
            l.data[i * n + j] = (a.data[i * n + j] - s) / pivot;
        }
    }
    Some(l)
}

/// Solves `L·Lᵀ·X = B` by forward and backward substitution.
fn chol_solve(l: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let n = l.rows;
    let m = b.cols;
    // Lᵀ stored row-major makes the backward sweep contiguous.
    let lt = l.transpose();
    let mut x = DenseMatrix::zeros(n, m);
    let mut col = vec![0.0; n];
    for j in 0..m {
        for i in 0..n {
            col[i] = b.data[i * m + j];
        }
        for i in 0..n {
            let s = dot(&l.data[i * n..i * n + i], &col[..i]);
            col[i] = (col[i] - s) / l.data[i * n + i];
        }
        for i in (0..n).rev() {
            let s = dot(&lt.data[i * n + i + 1..(i + 1) * n], &col[i + 1..]);
            col[i] = (col[i] - s) / l.data[i * n + i];
        }
        for i in 0..n {
            x.data[i * m + j] = col[i];
        }
    }
    x
}

fn residual_ok(a_jittered: &DenseMatrix, x: &DenseMatrix, b: &DenseMatrix) -> bool {
    if !x.all_finite() {
        return false;
    }
    let pred = a_jittered.matmul(x);
    let mut resid = 0.0;
    for (p, t) in pred.data.iter().zip(&b.data) {
        let r = p - t;
        resid += r * r;
    }
    resid.sqrt() <= RESIDUAL_RTOL * 1.0_f64.max(b.frobenius_norm())
}

/// Solves `A·X = B` for symmetric positive-semidefinite `A`, escalating
/// diagonal jitter per `policy` until a factorization succeeds and the
/// residual contract `‖(A + s·mean(diag A)·I)·X − B‖_F ≤ 1e-8·max(1,‖B‖_F)`
/// holds. Returns `X` and the jitter scale used.
pub fn solve_psd(a: &DenseMatrix, b: &DenseMatrix, policy: &JitterPolicy) -> Result<(DenseMatrix, f64)> {
    solve_psd_staged(a, b, policy, SolveStage::General)
}

pub(crate) fn solve_psd_staged(
    a: &DenseMatrix,
    b: &DenseMatrix,
    policy: &JitterPolicy,
    stage: SolveStage,
) -> Result<(DenseMatrix, f64)> {
    check_solve_inputs(a, b, "solve_psd")?;
    if a.rows == 0 {
        return Ok((DenseMatrix::zeros(0, b.cols), 0.0));
    }
    let mean_diag = a.mean_diagonal();
    for scale in policy.scales() {
        let mut aj = a.clone();
        aj.add_diagonal(scale * mean_diag);
        let Some(l) = cholesky(&aj) else { continue };
        let x = chol_solve(&l, b);
        if residual_ok(&aj, &x, b) {
            return Ok((x, scale));
        }
    }
    Err(Error::SingularBeyondPolicy {
        stage,
        max_scale: policy.max_scale,
    })
}

/// Reusable stabilized factorization of one symmetric PSD matrix.
///
/// Construction picks the smallest jitter scale at which the factorization
/// succeeds. Each `solve` verifies the residual contract for its own
/// right-hand side and escalates further for that solve alone if needed.
#[derive(Debug, Clone)]
pub struct PsdFactor {
    a: DenseMatrix,
    l: DenseMatrix,
    jitter_scale: f64,
    mean_diag: f64,
    policy: JitterPolicy,
    stage: SolveStage,
    max_jitter_seen: std::cell::Cell<f64>,
}

impl PsdFactor {
    pub fn new(a: DenseMatrix, policy: JitterPolicy, stage: SolveStage) -> Result<Self> {
        let probe = DenseMatrix::zeros(a.rows(), 0);
        check_solve_inputs(&a, &probe, "psd factor")?;
        let mean_diag = a.mean_diagonal();
        if a.rows() == 0 {
            return Ok(PsdFactor {
                l: DenseMatrix::zeros(0, 0),
                a,
                jitter_scale: 0.0,
                mean_diag,
                policy,
                stage,
                max_jitter_seen: std::cell::Cell::new(0.0),
            });
        }
        for scale in policy.scales() {
            let mut aj = a.clone();
            aj.add_diagonal(scale * mean_diag);
            if let Some(l) = cholesky(&aj) {
                return Ok(PsdFactor {
                    a,
                    l,
                    jitter_scale: scale,
                    mean_diag,
                    policy,
                    stage,
                    max_jitter_seen: std::cell::Cell::new(scale),
                });
            }
        }
        Err(Error::SingularBeyondPolicy {
            stage,
            max_scale: policy.max_scale,
        })
    }

    pub fn n(&self) -> usize {
        self.a.rows()
    }

    pub fn jitter_scale(&self) -> f64 {
        self.jitter_scale
    }

    /// Largest jitter scale any solve through this factor has needed.
    pub fn jitter_observed(&self) -> f64 {
        self.max_jitter_seen.get()
    }

    /// Solves `A·X = B`; returns `X` and the jitter scale actually used.
    pub fn solve(&self, b: &DenseMatrix) -> Result<(DenseMatrix, f64)> {
        if b.rows() != self.a.rows() {
            return Err(Error::DimensionMismatch {
                context: "psd factor solve".into(),
                expected: format!("{} rows", self.a.rows()),
                got: format!("{} rows", b.rows()),
            });
        }
        if !b.all_finite() {
            return Err(Error::NonFinite {
                context: "psd factor solve: right-hand side".into(),
            });
        }
        if self.a.rows() == 0 {
            return Ok((DenseMatrix::zeros(0, b.cols()), 0.0));
        }
        let mut aj = self.a.clone();
        aj.add_diagonal(self.jitter_scale * self.mean_diag);
        let x = chol_solve(&self.l, b);
        if residual_ok(&aj, &x, b) {
            return Ok((x, self.jitter_scale));
        }
        for scale in self.policy.scales().into_iter().filter(|s| *s > self.jitter_scale) {
            let mut aj = self.a.clone();
            aj.add_diagonal(scale * self.mean_diag);
            let Some(l) = cholesky(&aj) else { continue };
            let x = chol_solve(&l, b);
            if residual_ok(&aj, &x, b) {
                self.max_jitter_seen.set(self.max_jitter_seen.get().max(scale));
                return Ok((x, scale));
            }
        }
        Err(Error::SingularBeyondPolicy {
            stage: self.stage,
            max_scale: self.policy.max_scale,
        })
    }

    pub fn solve_vec(&self, b: &[f64]) -> Result<(Vec<f64>, f64)> {
        let bm = DenseMatrix::from_vec(b.len(), 1, b.to_vec());
        let (x, jitter) = self.solve(&bm)?;
        Ok((x.data, jitter))
    }
}

/// Full symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and an orthogonal matrix whose
/// columns are the matching eigenvectors, so `A = V·diag(λ)·Vᵀ`.
pub fn sym_eig(a: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix)> {
    let probe = DenseMatrix::zeros(a.rows(), 0);
    check_solve_inputs(a, &probe, "sym_eig")?;
    let n = a.rows();
    let mut m = a.clone();
    let mut v = DenseMatrix::identity(n);
    let norm = 1.0_f64.max(a.frobenius_norm());
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[(p, q)] * m[(p, q)];
            }
        }
        if (2.0 * off).sqrt() <= 1e-13 * norm {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let tau = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].partial_cmp(&m[(j, j)]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = DenseMatrix::from_fn(n, n, |i, j| v[(i, order[j])]);
    Ok((values, vectors))
}

/// Smallest eigenvalue of a symmetric matrix; 0 for an empty matrix.
pub fn min_eig(a: &DenseMatrix) -> Result<f64> {
    let (values, _) = sym_eig(a)?;
    Ok(values.first().copied().unwrap_or(0.0))
}

/// Rayleigh quotient of the dominant eigenpair of `shift·I − A` (or of `A`
/// when `shift` is None), by power iteration from a fixed pseudo-random
/// start, so results are deterministic run to run.
fn power_rayleigh(a: &DenseMatrix, shift: Option<f64>) -> f64 {
    let n = a.rows();
    let mut state = 0x9e37_79b9_7f4a_7c15_u64;
    let mut v: Vec<f64> = (0..n)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
        .collect();
    let norm = l2_norm(&v);
    for x in v.iter_mut() {
        *x /= norm;
    }
    let apply = |v: &[f64]| -> Vec<f64> {
        let mut y = a.matvec(v);
        if let Some(s) = shift {
            for (yi, vi) in y.iter_mut().zip(v) {
                *yi = s * vi - *yi;
            }
        }
        y
    };
    let mut lambda = 0.0;
    for _ in 0..512 {
        let y = apply(&v);
        let next = dot(&v, &y);
        let norm = l2_norm(&y);
        if !(norm > 0.0) || !norm.is_finite() {
            return next;
        }
        let converged = (next - lambda).abs() <= 1e-12 * 1.0_f64.max(next.abs());
        lambda = next;
        for (vi, yi) in v.iter_mut().zip(&y) {
            *vi = yi / norm;
        }
        if converged {
            break;
        }
    }
    lambda
}

/// Cheap smallest-eigenvalue estimate for a symmetric matrix: one power
/// iteration locates the dominant extreme, a shifted pass recovers the
/// minimum. Diagnostic accuracy; exact only when iteration converges.
pub fn min_eig_estimate(a: &DenseMatrix) -> Result<f64> {
    let probe = DenseMatrix::zeros(a.rows(), 0);
    check_solve_inputs(a, &probe, "min_eig_estimate")?;
    if a.rows() == 0 {
        return Ok(0.0);
    }
    let extreme = power_rayleigh(a, None);
    let shift = extreme.abs();
    let low = power_rayleigh(a, Some(shift));
    Ok(shift - low)
}
