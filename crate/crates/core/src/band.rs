//! Symmetric block-tridiagonal matrices.
//!
//! Precision matrices of AR(1) latent processes are (block) tridiagonal, and so
//! are the importance precisions `C + Q` built on top of them. Everything here
//! runs in `O(T m^3)` for `T` block rows of size `m`. A dense matrix is stored
//! as a single block, so the same code path serves small dense precisions.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Relative pivot threshold below which a factorization counts as failed.
pub const PD_RELATIVE_THRESHOLD: f64 = 1e-12;

/// Default absolute tolerance for [`smallest_eigenvalue`].
pub const EIGEN_TOL: f64 = 1e-10;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Storage {
    Banded,
    Dense,
}

/// Symmetric block-tridiagonal matrix.
///
/// Holds `T` symmetric diagonal blocks and `T - 1` sub-diagonal blocks
/// `A[t+1, t]`, each `m x m` and stored row-major. The super-diagonal blocks
/// are the transposes of the stored ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBand")]
pub struct SymBandMatrix {
    block_size: usize,
    diag: Vec<f64>,
    off: Vec<f64>,
    storage: Storage,
}

#[derive(Deserialize)]
struct RawBand {
    block_size: usize,
    diag: Vec<f64>,
    off: Vec<f64>,
    storage: Storage,
}

impl TryFrom<RawBand> for SymBandMatrix {
    type Error = Error;

    fn try_from(raw: RawBand) -> Result<Self> {
        let mut a = SymBandMatrix::new(raw.block_size, raw.diag, raw.off)?;
        if raw.storage == Storage::Dense && a.num_blocks() != 1 {
            return Err(invalid("dense storage requires a single block"));
        }
        a.storage = raw.storage;
        Ok(a)
    }
}

impl SymBandMatrix {
    /// Build from flat block arrays. Diagonal blocks are symmetrized.
    pub fn new(block_size: usize, diag: Vec<f64>, off: Vec<f64>) -> Result<Self> {
        let m2 = block_size * block_size;
        if block_size == 0 || diag.is_empty() || diag.len() % m2 != 0 {
            return Err(invalid(format!(
                "diagonal storage of length {} does not hold whole {block_size}x{block_size} blocks",
                diag.len()
            )));
        }
        let t = diag.len() / m2;
        if off.len() != (t - 1) * m2 {
            return Err(invalid(format!(
                "expected {} off-diagonal entries for {t} block rows, got {}",
                (t - 1) * m2,
                off.len()
            )));
        }
        let mut a = Self {
            block_size,
            diag,
            off,
            storage: Storage::Banded,
        };
        a.symmetrize_diag();
        Ok(a)
    }

    pub fn tridiagonal(diag: &[f64], off: &[f64]) -> Result<Self> {
        Self::new(1, diag.to_vec(), off.to_vec())
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(1, diag.to_vec(), vec![0.0; diag.len().saturating_sub(1)])
    }

    /// Block-diagonal matrix from flat `m x m` blocks.
    pub fn block_diagonal(block_size: usize, blocks: Vec<f64>) -> Result<Self> {
        let m2 = block_size * block_size;
        let t = if m2 == 0 { 0 } else { blocks.len() / m2 };
        Self::new(block_size, blocks, vec![0.0; t.saturating_sub(1) * m2])
    }

    pub fn identity(dim: usize) -> Self {
        Self::diagonal(&vec![1.0; dim]).expect("identity dimension must be positive")
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self {
            block_size: other.block_size,
            diag: vec![0.0; other.diag.len()],
            off: vec![0.0; other.off.len()],
            storage: other.storage,
        }
    }

    /// Single-block dense matrix. The input is symmetrized.
    pub fn from_dense(a: &DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() || a.nrows() == 0 {
            return Err(invalid("dense matrix must be square and non-empty"));
        }
        let n = a.nrows();
        let mut flat = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                flat.push(a[(i, j)]);
            }
        }
        let mut out = Self::new(n, flat, Vec::new())?;
        out.storage = Storage::Dense;
        Ok(out)
    }

    fn symmetrize_diag(&mut self) {
        let m = self.block_size;
        for blk in self.diag.chunks_exact_mut(m * m) {
            for i in 0..m {
                for j in (i + 1)..m {
                    let s = 0.5 * (blk[i * m + j] + blk[j * m + i]);
                    blk[i * m + j] = s;
                    blk[j * m + i] = s;
                }
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.diag.len() / self.block_size
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn num_blocks(&self) -> usize {
        self.diag.len() / (self.block_size * self.block_size)
    }

    pub fn storage(&self) -> Storage {
        self.storage
    }

    pub fn diag_block(&self, t: usize) -> &[f64] {
        let m2 = self.block_size * self.block_size;
        &self.diag[t * m2..(t + 1) * m2]
    }

    /// Block `A[t+1, t]`.
    pub fn off_block(&self, t: usize) -> &[f64] {
        let m2 = self.block_size * self.block_size;
        &self.off[t * m2..(t + 1) * m2]
    }

    pub fn diag_blocks(&self) -> &[f64] {
        &self.diag
    }

    pub fn off_blocks(&self) -> &[f64] {
        &self.off
    }

    /// Main diagonal entries.
    pub fn main_diagonal(&self) -> Vec<f64> {
        let m = self.block_size;
        (0..self.dim())
            .map(|i| self.diag[(i / m) * m * m + (i % m) * m + (i % m)])
            .collect()
    }

    pub fn is_block_diagonal(&self) -> bool {
        self.off.iter().all(|&x| x == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.diag.iter().chain(self.off.iter()).all(|x| x.is_finite())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let m = self.block_size;
        let (bi, bj) = (i / m, j / m);
        let (ri, rj) = (i % m, j % m);
        if bi == bj {
            self.diag[bi * m * m + ri * m + rj]
        } else if bi == bj + 1 {
            self.off[bj * m * m + ri * m + rj]
        } else if bj == bi + 1 {
            self.off[bi * m * m + rj * m + ri]
        } else {
            0.0
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let m = self.block_size;
        let mut out = DMatrix::zeros(n, n);
        for t in 0..self.num_blocks() {
            let d = self.diag_block(t);
            for i in 0..m {
                for j in 0..m {
                    out[(t * m + i, t * m + j)] = d[i * m + j];
                }
            }
            if t + 1 < self.num_blocks() {
                let o = self.off_block(t);
                for i in 0..m {
                    for j in 0..m {
                        out[((t + 1) * m + i, t * m + j)] = o[i * m + j];
                        out[(t * m + j, (t + 1) * m + i)] = o[i * m + j];
                    }
                }
            }
        }
        out
    }

    fn same_layout(&self, other: &Self) -> bool {
        self.block_size == other.block_size && self.diag.len() == other.diag.len()
    }

    /// `a * A + b * B`. Matrices with different block layouts are combined
    /// densely.
    pub fn lin_comb(a: f64, lhs: &Self, b: f64, rhs: &Self) -> Result<Self> {
        if lhs.dim() != rhs.dim() {
            return Err(invalid(format!(
                "dimension mismatch: {} vs {}",
                lhs.dim(),
                rhs.dim()
            )));
        }
        if lhs.same_layout(rhs) {
            let zip = |x: &[f64], y: &[f64]| -> Vec<f64> {
                x.iter().zip(y).map(|(p, q)| a * p + b * q).collect()
            };
            let storage = if lhs.storage == Storage::Dense || rhs.storage == Storage::Dense {
                Storage::Dense
            } else {
                Storage::Banded
            };
            Ok(Self {
                block_size: lhs.block_size,
                diag: zip(&lhs.diag, &rhs.diag),
                off: zip(&lhs.off, &rhs.off),
                storage,
            })
        } else {
            Self::from_dense(&(lhs.to_dense() * a + rhs.to_dense() * b))
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        Self::lin_comb(1.0, self, 1.0, other)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        Self::lin_comb(1.0, self, -1.0, other)
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.diag.iter_mut().chain(out.off.iter_mut()).for_each(|x| *x *= s);
        out
    }

    /// `A + s I`.
    pub fn shifted(&self, s: f64) -> Self {
        let mut out = self.clone();
        let m = self.block_size;
        for blk in out.diag.chunks_exact_mut(m * m) {
            for i in 0..m {
                blk[i * m + i] += s;
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        let m = self.block_size;
        let nb = self.num_blocks();
        debug_assert_eq!(x.len(), self.dim());
        if m == 1 {
            for t in 0..nb {
                let mut s = self.diag[t] * x[t];
                if t > 0 {
                    s += self.off[t - 1] * x[t - 1];
                }
                if t + 1 < nb {
                    s += self.off[t] * x[t + 1];
                }
                y[t] = s;
            }
            return;
        }
        for t in 0..nb {
            let yt = &mut y[t * m..(t + 1) * m];
            let d = self.diag_block(t);
            for i in 0..m {
                let mut s = 0.0;
                for j in 0..m {
                    s += d[i * m + j] * x[t * m + j];
                }
                if t > 0 {
                    let o = self.off_block(t - 1);
                    for j in 0..m {
                        s += o[i * m + j] * x[(t - 1) * m + j];
                    }
                }
                if t + 1 < nb {
                    let o = self.off_block(t);
                    for j in 0..m {
                        s += o[j * m + i] * x[(t + 1) * m + j];
                    }
                }
                yt[i] = s;
            }
        }
    }

    /// `x' A x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let m = self.block_size;
        let nb = self.num_blocks();
        if m == 1 {
            let mut s = 0.0;
            for t in 0..nb {
                s += self.diag[t] * x[t] * x[t];
                if t + 1 < nb {
                    s += 2.0 * self.off[t] * x[t] * x[t + 1];
                }
            }
            return s;
        }
        let mut s = 0.0;
        for t in 0..nb {
            let d = self.diag_block(t);
            let xt = &x[t * m..(t + 1) * m];
            for i in 0..m {
                for j in 0..m {
                    s += xt[i] * d[i * m + j] * xt[j];
                }
            }
            if t + 1 < nb {
                let o = self.off_block(t);
                let xn = &x[(t + 1) * m..(t + 2) * m];
                for i in 0..m {
                    for j in 0..m {
                        s += 2.0 * xn[i] * o[i * m + j] * xt[j];
                    }
                }
            }
        }
        s
    }

    pub fn max_abs_diag(&self) -> f64 {
        self.main_diagonal().iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
    }

    /// Gershgorin interval `[lo, hi]` containing every eigenvalue.
    pub fn gershgorin_bounds(&self) -> (f64, f64) {
        let n = self.dim();
        let m = self.block_size;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let bi = i / m;
            let first = bi.saturating_sub(1) * m;
            let last = ((bi + 2) * m).min(n);
            let radius: f64 = (first..last)
                .filter(|&j| j != i)
                .map(|j| self.get(i, j).abs())
                .sum();
            let c = self.get(i, i);
            lo = lo.min(c - radius);
            hi = hi.max(c + radius);
        }
        (lo, hi)
    }

    /// Block Cholesky factorization `A = L L'` with the default relative pivot
    /// threshold. Non-positive-definiteness is reported through the returned
    /// factor, not as an error.
    pub fn factorize(&self) -> Result<BandCholesky> {
        let threshold = PD_RELATIVE_THRESHOLD * self.max_abs_diag();
        self.factorize_with_threshold(threshold)
    }

    /// Factorization where a pivot `<= threshold` counts as failure.
    pub fn factorize_with_threshold(&self, threshold: f64) -> Result<BandCholesky> {
        if !self.is_finite() {
            return Err(invalid("matrix has non-finite entries"));
        }
        Ok(BandCholesky::compute(self, threshold))
    }

    pub fn is_positive_definite(&self) -> Result<bool> {
        Ok(self.factorize()?.is_success())
    }
}

/// In-place lower Cholesky of an `m x m` row-major block; zeroes the upper
/// triangle. Returns false on a pivot `<= threshold`.
fn chol_block(a: &mut [f64], m: usize, threshold: f64) -> bool {
    for j in 0..m {
        let mut s = a[j * m + j];
        for k in 0..j {
            s -= a[j * m + k] * a[j * m + k];
        }
        if !(s > threshold) || !s.is_finite() {
            return false;
        }
        let d = s.sqrt();
        a[j * m + j] = d;
        for i in (j + 1)..m {
            let mut s = a[i * m + j];
            for k in 0..j {
                s -= a[i * m + k] * a[j * m + k];
            }
            a[i * m + j] = s / d;
        }
        for k in (j + 1)..m {
            a[j * m + k] = 0.0;
        }
    }
    true
}

/// Solve `L x = b` in place for lower-triangular `L`.
fn forward_sub(l: &[f64], m: usize, b: &mut [f64]) {
    for i in 0..m {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * m + k] * b[k];
        }
        b[i] = s / l[i * m + i];
    }
}

/// Solve `L' x = b` in place for lower-triangular `L`.
fn backward_sub_t(l: &[f64], m: usize, b: &mut [f64]) {
    for i in (0..m).rev() {
        let mut s = b[i];
        for k in (i + 1)..m {
            s -= l[k * m + i] * b[k];
        }
        b[i] = s / l[i * m + i];
    }
}

/// Block lower-bidiagonal Cholesky factor of a [`SymBandMatrix`].
#[derive(Clone, Debug)]
pub struct BandCholesky {
    block_size: usize,
    num_blocks: usize,
    l_diag: Vec<f64>,
    l_sub: Vec<f64>,
    failed_block_row: Option<usize>,
}

impl BandCholesky {
    fn compute(a: &SymBandMatrix, threshold: f64) -> Self {
        let m = a.block_size;
        let m2 = m * m;
        let nb = a.num_blocks();
        let mut l_diag = vec![0.0; nb * m2];
        let mut l_sub = vec![0.0; (nb - 1) * m2];
        let mut failed = None;

        if m == 1 {
            for t in 0..nb {
                let mut s = a.diag[t];
                if t > 0 {
                    s -= l_sub[t - 1] * l_sub[t - 1];
                }
                if !(s > threshold) || !s.is_finite() {
                    failed = Some(t + 1);
                    break;
                }
                let d = s.sqrt();
                l_diag[t] = d;
                if t + 1 < nb {
                    l_sub[t] = a.off[t] / d;
                }
            }
        } else {
            let mut schur = a.diag_block(0).to_vec();
            for t in 0..nb {
                let lt = &mut l_diag[t * m2..(t + 1) * m2];
                lt.copy_from_slice(&schur);
                if !chol_block(lt, m, threshold) {
                    failed = Some(t + 1);
                    break;
                }
                if t + 1 < nb {
                    // B = A[t+1,t] L_tt^{-T}: row r of B solves L_tt b = row r of A[t+1,t].
                    let b = &mut l_sub[t * m2..(t + 1) * m2];
                    b.copy_from_slice(a.off_block(t));
                    for r in 0..m {
                        forward_sub(lt, m, &mut b[r * m..(r + 1) * m]);
                    }
                    schur.copy_from_slice(a.diag_block(t + 1));
                    for i in 0..m {
                        for j in 0..m {
                            let mut s = 0.0;
                            for k in 0..m {
                                s += b[i * m + k] * b[j * m + k];
                            }
                            schur[i * m + j] -= s;
                        }
                    }
                }
            }
        }
        Self {
            block_size: m,
            num_blocks: nb,
            l_diag,
            l_sub,
            failed_block_row: failed,
        }
    }

    pub fn is_success(&self) -> bool {
        self.failed_block_row.is_none()
    }

    /// 1-based block row where a non-positive pivot appeared.
    pub fn failed_block_row(&self) -> Option<usize> {
        self.failed_block_row
    }

    pub fn dim(&self) -> usize {
        self.block_size * self.num_blocks
    }

    fn require_success(&self) -> Result<()> {
        match self.failed_block_row {
            None => Ok(()),
            Some(block_row) => Err(Error::NotPositiveDefinite { block_row }),
        }
    }

    pub fn log_det(&self) -> Option<f64> {
        if !self.is_success() {
            return None;
        }
        let m = self.block_size;
        let mut s = 0.0;
        for t in 0..self.num_blocks {
            for i in 0..m {
                s += self.l_diag[t * m * m + i * m + i].ln();
            }
        }
        Some(2.0 * s)
    }

    /// `L y = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [f64]) -> Result<()> {
        self.require_success()?;
        let m = self.block_size;
        let m2 = m * m;
        if m == 1 {
            b[0] /= self.l_diag[0];
            for t in 1..self.num_blocks {
                b[t] = (b[t] - self.l_sub[t - 1] * b[t - 1]) / self.l_diag[t];
            }
            return Ok(());
        }
        for t in 0..self.num_blocks {
            if t > 0 {
                let bs = &self.l_sub[(t - 1) * m2..t * m2];
                let (head, tail) = b.split_at_mut(t * m);
                let prev = &head[(t - 1) * m..];
                for i in 0..m {
                    let mut s = 0.0;
                    for k in 0..m {
                        s += bs[i * m + k] * prev[k];
                    }
                    tail[i] -= s;
                }
            }
            forward_sub(&self.l_diag[t * m2..(t + 1) * m2], m, &mut b[t * m..(t + 1) * m]);
        }
        Ok(())
    }

    /// `L' x = y` in place.
    pub fn solve_upper_in_place(&self, y: &mut [f64]) -> Result<()> {
        self.require_success()?;
        let m = self.block_size;
        let m2 = m * m;
        let nb = self.num_blocks;
        if m == 1 {
            y[nb - 1] /= self.l_diag[nb - 1];
            for t in (0..nb - 1).rev() {
                y[t] = (y[t] - self.l_sub[t] * y[t + 1]) / self.l_diag[t];
            }
            return Ok(());
        }
        for t in (0..nb).rev() {
            if t + 1 < nb {
                let bs = &self.l_sub[t * m2..(t + 1) * m2];
                let (head, tail) = y.split_at_mut((t + 1) * m);
                let next = &tail[..m];
                let cur = &mut head[t * m..];
                for i in 0..m {
                    let mut s = 0.0;
                    for k in 0..m {
                        s += bs[k * m + i] * next[k];
                    }
                    cur[i] -= s;
                }
            }
            backward_sub_t(&self.l_diag[t * m2..(t + 1) * m2], m, &mut y[t * m..(t + 1) * m]);
        }
        Ok(())
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.dim() {
            return Err(invalid("right-hand side has wrong length"));
        }
        let mut x = b.to_vec();
        self.solve_lower_in_place(&mut x)?;
        self.solve_upper_in_place(&mut x)?;
        Ok(x)
    }

    /// Overwrite `out` with `mean + L'^{-1} z` for standard normal `z`, a draw
    /// from `N(mean, A^{-1})`.
    pub fn sample_into<R: Rng + ?Sized>(&self, mean: &[f64], rng: &mut R, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        self.transform_standard_normal(mean, out);
    }

    /// Map standard normal draws held in `z` to `mean + L'^{-1} z` in place.
    pub fn transform_standard_normal(&self, mean: &[f64], z: &mut [f64]) {
        self.solve_upper_in_place(z)
            .expect("sampling requires a successful factorization");
        for (v, m) in z.iter_mut().zip(mean) {
            *v += m;
        }
    }

    /// Materialize `L` (testing aid).
    pub fn lower_dense(&self) -> DMatrix<f64> {
        let m = self.block_size;
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        for t in 0..self.num_blocks {
            for i in 0..m {
                for j in 0..m {
                    out[(t * m + i, t * m + j)] = self.l_diag[t * m * m + i * m + j];
                    if t + 1 < self.num_blocks {
                        out[((t + 1) * m + i, t * m + j)] = self.l_sub[t * m * m + i * m + j];
                    }
                }
            }
        }
        out
    }
}

/// `count` draws from `N(mean, precision^{-1})`.
pub fn sample_gaussian<R: Rng + ?Sized>(
    mean: &[f64],
    precision: &SymBandMatrix,
    rng: &mut R,
    count: usize,
) -> Result<Vec<Vec<f64>>> {
    if mean.len() != precision.dim() {
        return Err(invalid("mean and precision dimensions differ"));
    }
    let chol = precision.factorize()?;
    chol.require_success()?;
    Ok((0..count)
        .map(|_| {
            let mut x = vec![0.0; mean.len()];
            chol.sample_into(mean, rng, &mut x);
            x
        })
        .collect())
}

/// Normalized multivariate normal log-density with the given precision.
pub fn log_density(x: &[f64], mean: &[f64], precision: &SymBandMatrix) -> Result<f64> {
    if x.len() != precision.dim() || mean.len() != precision.dim() {
        return Err(invalid("dimension mismatch in log_density"));
    }
    let chol = precision.factorize()?;
    chol.require_success()?;
    let log_det = chol.log_det().unwrap_or(f64::NAN);
    let diff: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
    Ok(gaussian_log_density_parts(
        x.len(),
        log_det,
        precision.quad_form(&diff),
    ))
}

pub(crate) fn gaussian_log_density_parts(dim: usize, log_det_precision: f64, quad: f64) -> f64 {
    -0.5 * dim as f64 * LN_2PI + 0.5 * log_det_precision - 0.5 * quad
}

/// Smallest eigenvalue by bisection on the shift `s` at which `A - s I` stops
/// being positive definite, bracketed by Gershgorin bounds.
pub fn smallest_eigenvalue(a: &SymBandMatrix, tol: f64) -> Result<f64> {
    if !a.is_finite() {
        return Err(invalid("matrix has non-finite entries"));
    }
    if !(tol > 0.0) {
        return Err(invalid("tolerance must be positive"));
    }
    let (g_lo, _) = a.gershgorin_bounds();
    let min_diag = a.main_diagonal().into_iter().fold(f64::INFINITY, f64::min);
    let pad = tol.max(1e-12 * (g_lo.abs() + min_diag.abs()));
    let mut lo = g_lo - pad;
    let mut hi = min_diag;
    let pd = |s: f64| a.shifted(-s).factorize_with_threshold(0.0).map(|c| c.is_success());
    // A - lo I is positive definite by construction; A - hi I is not.
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if pd(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_band(rng: &mut impl Rng, m: usize, t: usize, shift: f64) -> SymBandMatrix {
        let m2 = m * m;
        let diag: Vec<f64> = (0..t * m2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let off: Vec<f64> = (0..(t - 1) * m2).map(|_| rng.random_range(-1.0..1.0)).collect();
        SymBandMatrix::new(m, diag, off).unwrap().shifted(shift)
    }

    fn dense_eigs(a: &SymBandMatrix) -> Vec<f64> {
        let mut e: Vec<f64> = a.to_dense().symmetric_eigenvalues().iter().copied().collect();
        e.sort_by(f64::total_cmp);
        e
    }

    #[test]
    fn identity_factor_and_log_det() {
        let c = SymBandMatrix::identity(3).factorize().unwrap();
        assert!(c.is_success());
        assert_eq!(c.log_det(), Some(0.0));
        assert_eq!(c.lower_dense(), DMatrix::identity(3, 3));
    }

    #[test]
    fn ar1_two_by_two_determinant() {
        let a = SymBandMatrix::tridiagonal(&[1.0, 1.0], &[-0.5]).unwrap();
        let c = a.factorize().unwrap();
        assert!(c.is_success());
        assert!((c.log_det().unwrap() - 0.75_f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn indefinite_fails_at_second_row() {
        let a = SymBandMatrix::tridiagonal(&[1.0, 1.0], &[2.0]).unwrap();
        let c = a.factorize().unwrap();
        assert!(!c.is_success());
        assert_eq!(c.failed_block_row(), Some(2));
        assert!(c.log_det().is_none());
        assert!(matches!(
            c.solve(&[1.0, 1.0]),
            Err(Error::NotPositiveDefinite { block_row: 2 })
        ));
    }

    #[test]
    fn non_finite_is_invalid() {
        let a = SymBandMatrix::tridiagonal(&[1.0, f64::NAN], &[0.0]).unwrap();
        assert!(matches!(a.factorize(), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn numerically_singular_counts_as_failure() {
        let a = SymBandMatrix::tridiagonal(&[1.0, 1.0], &[1.0 - 1e-15]).unwrap();
        assert!(!a.factorize().unwrap().is_success());
    }

    #[test]
    fn bad_layout_rejected() {
        assert!(SymBandMatrix::new(2, vec![1.0; 8], vec![0.0; 3]).is_err());
        assert!(SymBandMatrix::new(2, vec![1.0; 7], vec![]).is_err());
    }

    #[test]
    fn reconstruction_on_random_instances() {
        let mut rng = rng_from_seed(7);
        for &(m, t) in &[(1, 40), (2, 15), (3, 10), (5, 1)] {
            let a = random_band(&mut rng, m, t, 4.0 * m as f64);
            let c = a.factorize().unwrap();
            assert!(c.is_success());
            let l = c.lower_dense();
            let diff = &l * l.transpose() - a.to_dense();
            let scale = a.to_dense().norm();
            assert!(diff.norm() <= 1e-10 * scale, "m={m} t={t}");
        }
    }

    #[test]
    fn solve_matches_dense() {
        let mut rng = rng_from_seed(11);
        let a = random_band(&mut rng, 2, 12, 8.0);
        let b: Vec<f64> = (0..24).map(|i| (i as f64).sin()).collect();
        let x = a.factorize().unwrap().solve(&b).unwrap();
        let r = a.mul_vec(&x);
        for (ri, bi) in r.iter().zip(&b) {
            assert!((ri - bi).abs() < 1e-10);
        }
    }

    #[test]
    fn quad_form_and_matvec_agree_with_dense() {
        let mut rng = rng_from_seed(3);
        let a = random_band(&mut rng, 3, 5, 0.0);
        let x: Vec<f64> = (0..15).map(|i| 0.1 * i as f64 - 0.7).collect();
        let dense = a.to_dense();
        let xv = nalgebra::DVector::from_vec(x.clone());
        let y = &dense * &xv;
        for (p, q) in a.mul_vec(&x).iter().zip(y.iter()) {
            assert!((p - q).abs() < 1e-12);
        }
        assert!((a.quad_form(&x) - xv.dot(&y)).abs() < 1e-10);
        assert_eq!(dense, dense.transpose());
    }

    #[test]
    fn standard_normal_log_density() {
        let i1 = SymBandMatrix::identity(1);
        let v = log_density(&[0.0], &[0.0], &i1).unwrap();
        assert!((v + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
        let i2 = SymBandMatrix::identity(2);
        let v = log_density(&[1.0, 1.0], &[0.0, 0.0], &i2).unwrap();
        assert!((v + (2.0 * std::f64::consts::PI).ln() + 1.0).abs() < 1e-14);
        assert!(log_density(&[1.0], &[0.0, 0.0], &i2).is_err());
    }

    #[test]
    fn log_density_matches_dense_oracle() {
        let mut rng = rng_from_seed(5);
        let a = random_band(&mut rng, 2, 6, 6.0);
        let x: Vec<f64> = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mu: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dense = a.to_dense();
        let diff = nalgebra::DVector::from_iterator(12, x.iter().zip(&mu).map(|(p, q)| p - q));
        let oracle = -6.0 * (2.0 * std::f64::consts::PI).ln()
            + 0.5 * dense.determinant().ln()
            - 0.5 * (diff.transpose() * &dense * &diff)[(0, 0)];
        let v = log_density(&x, &mu, &a).unwrap();
        assert!((v - oracle).abs() < 1e-10);
    }

    #[test]
    fn smallest_eigenvalue_simple_cases() {
        let tol = EIGEN_TOL;
        let v = smallest_eigenvalue(&SymBandMatrix::identity(4), tol).unwrap();
        assert!((v - 1.0).abs() <= tol);
        let d = SymBandMatrix::diagonal(&[3.0, -2.0, 5.0]).unwrap();
        let v = smallest_eigenvalue(&d, tol).unwrap();
        assert!((v + 2.0).abs() <= tol);
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = SymBandMatrix::tridiagonal(&[2.0, 2.0, 2.0], &[-0.5, -0.5]).unwrap();
        let s1 = sample_gaussian(&[0.0; 3], &a, &mut rng_from_seed(9), 5).unwrap();
        let s2 = sample_gaussian(&[0.0; 3], &a, &mut rng_from_seed(9), 5).unwrap();
        assert_eq!(s1, s2);
        let bad = SymBandMatrix::tridiagonal(&[1.0, 1.0], &[2.0]).unwrap();
        assert!(matches!(
            sample_gaussian(&[0.0; 2], &bad, &mut rng_from_seed(1), 1),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn standard_normal_sample_moments() {
        let s = 100_000;
        let draws = sample_gaussian(&[0.0; 2], &SymBandMatrix::identity(2), &mut rng_from_seed(21), s)
            .unwrap();
        let se = 1.0 / (s as f64).sqrt();
        for k in 0..2 {
            let mean = draws.iter().map(|x| x[k]).sum::<f64>() / s as f64;
            assert!(mean.abs() < 5.0 * se);
            let var = draws.iter().map(|x| x[k] * x[k]).sum::<f64>() / s as f64;
            // Var of x^2 is 2 for a standard normal.
            assert!((var - 1.0).abs() < 5.0 * 2f64.sqrt() * se);
        }
        let cov = draws.iter().map(|x| x[0] * x[1]).sum::<f64>() / s as f64;
        assert!(cov.abs() < 5.0 * se);
    }

    #[test]
    fn covariance_consistency_small_dims() {
        let s = 100_000;
        let mut rng = rng_from_seed(33);
        for &(m, t) in &[(1, 4), (2, 2), (4, 1)] {
            let a = random_band(&mut rng, m, t, 3.0);
            let d = a.dim();
            let draws = sample_gaussian(&vec![0.0; d], &a, &mut rng, s).unwrap();
            let cov = a.to_dense().try_inverse().unwrap();
            for i in 0..d {
                for j in 0..d {
                    let est = draws.iter().map(|x| x[i] * x[j]).sum::<f64>() / s as f64;
                    // Var(x_i x_j) = S_ii S_jj + S_ij^2 for zero-mean Gaussians.
                    let se = ((cov[(i, i)] * cov[(j, j)] + cov[(i, j)].powi(2)) / s as f64).sqrt();
                    assert!((est - cov[(i, j)]).abs() < 6.0 * se, "m={m} ({i},{j})");
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn pd_verdict_matches_dense_eigenvalues(seed in any::<u64>(), m in 1usize..4, t in 1usize..15, shift in -1.0f64..3.0) {
            let mut rng = rng_from_seed(seed);
            let a = random_band(&mut rng, m, t, shift);
            prop_assume!(a.dim() <= 60);
            let eigs = dense_eigs(&a);
            // Skip instances too close to singular for either route to be decisive.
            prop_assume!(eigs[0].abs() > 1e-8);
            prop_assert_eq!(a.factorize().unwrap().is_success(), eigs[0] > 0.0);
        }

        #[test]
        fn log_det_matches_dense(seed in any::<u64>(), m in 1usize..4, t in 1usize..15) {
            let mut rng = rng_from_seed(seed);
            let a = random_band(&mut rng, m, t, 2.5 * m as f64 + 0.5);
            let eigs = dense_eigs(&a);
            prop_assume!(eigs[0] > 1e-6);
            let dense: f64 = eigs.iter().map(|e| e.ln()).sum();
            let ours = a.factorize().unwrap().log_det().unwrap();
            prop_assert!((ours - dense).abs() <= 1e-8 * dense.abs().max(1.0));
        }

        #[test]
        fn smallest_eigenvalue_matches_dense(seed in any::<u64>(), m in 1usize..4, t in 1usize..15) {
            let mut rng = rng_from_seed(seed);
            let a = random_band(&mut rng, m, t, 0.0);
            let eigs = dense_eigs(&a);
            let ours = smallest_eigenvalue(&a, EIGEN_TOL).unwrap();
            prop_assert!((ours - eigs[0]).abs() <= 1e-9, "{} vs {}", ours, eigs[0]);
        }
    }
}
