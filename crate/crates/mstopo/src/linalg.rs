//! Sparse symmetric solvers for structured-grid problems.
//!
//! Both analysis meshes and periodic cell meshes produce symmetric positive
//! definite systems whose nonzeros live close to the diagonal once nodes are
//! numbered reasonably. A skyline (variable-band) Cholesky factorization is
//! simple, deterministic and fast at these profiles, and one factorization is
//! reused for static solves, adjoint solves and the inverse iterations of the
//! buckling eigensolver.
//!
//! The buckling eigenproblem `(K + lambda * Ks) phi = 0` is solved for the
//! largest eigenvalues `gamma = 1/lambda` of the operator `-K^-1 Ks`, which is
//! self-adjoint in the K-inner product. A Lanczos iteration with full
//! reorthogonalization in that inner product builds a tridiagonal
//! Rayleigh-Ritz problem; Ritz pairs with positive `gamma` are the physical
//! buckling modes.

use crate::{Error, Result};

/// Symmetric matrix in skyline storage: row `i` stores the contiguous columns
/// `start[i]..=i` of the lower triangle.
#[derive(Clone)]
pub struct Skyline {
    n: usize,
    start: Vec<usize>,
    rowptr: Vec<usize>,
    data: Vec<f64>,
}

impl Skyline {
    /// Creates a zero matrix with the given row profile. `start[i]` is the
    /// first column that row `i` can hold; entries left of it are structural
    /// zeros forever.
    pub fn new(start: Vec<usize>) -> Self {
        let n = start.len();
        let mut rowptr = Vec::with_capacity(n + 1);
        rowptr.push(0usize);
        for (i, &s) in start.iter().enumerate() {
            assert!(s <= i, "profile start past diagonal");
            rowptr.push(rowptr[i] + (i - s + 1));
        }
        let nnz = rowptr[n];
        Skyline { n, start, rowptr, data: vec![0.0; nnz] }
    }

    /// Builds the row profile that admits all index pairs produced by
    /// `edges`, then returns the empty matrix.
    pub fn from_edges(n: usize, edges: impl Iterator<Item = (usize, usize)>) -> Self {
        let mut start: Vec<usize> = (0..n).collect();
        for (a, b) in edges {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            if start[hi] > lo {
                start[hi] = lo;
            }
        }
        Skyline::new(start)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of stored entries (lower triangle).
    pub fn stored(&self) -> usize {
        self.data.len()
    }

    pub fn zero_fill(&mut self) {
        self.data.fill(0.0);
    }

    /// Stored lower-triangle values; two matrices built from the same edge
    /// set share the layout, so entries align position by position.
    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Adds `v` at `(i, j)`; only the lower triangle is stored so the call is
    /// symmetric in its arguments.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        debug_assert!(c >= self.start[r], "entry outside profile");
        let idx = self.rowptr[r] + (c - self.start[r]);
        self.data[idx] += v;
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.data[self.rowptr[i]..self.rowptr[i + 1]]
    }

    /// y = A x with the full symmetric matrix.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        y.fill(0.0);
        for i in 0..self.n {
            let s = self.start[i];
            let row = self.row(i);
            let (off, diag) = row.split_at(i - s);
            let mut acc = diag[0] * x[i];
            let xi = x[i];
            for (k, &a) in off.iter().enumerate() {
                let j = s + k;
                acc += a * x[j];
                y[j] += a * xi;
            }
            y[i] += acc;
        }
    }

    /// In-place Cholesky `A = L L^T` within the profile. Fails if a pivot is
    /// not strictly positive (matrix singular or indefinite).
    pub fn factorize(mut self) -> Result<SkylineFactor> {
        let n = self.n;
        for i in 0..n {
            let si = self.start[i];
            let (head, tail) = self.data.split_at_mut(self.rowptr[i]);
            let rowi = &mut tail[..i - si + 1];
            for j in si..i {
                let sj = self.start[j];
                let rowj = &head[self.rowptr[j]..self.rowptr[j + 1]];
                let lo = si.max(sj);
                let dot = dot_span(
                    &rowi[lo - si..j - si],
                    &rowj[lo - sj..j - sj],
                );
                let ljj = rowj[j - sj];
                rowi[j - si] = (rowi[j - si] - dot) / ljj;
            }
            let sq = dot_span(&rowi[..i - si], &rowi[..i - si]);
            let pivot = rowi[i - si] - sq;
            if !(pivot > 0.0) || !pivot.is_finite() {
                return Err(Error::NotPositiveDefinite { row: i, pivot });
            }
            rowi[i - si] = pivot.sqrt();
        }
        Ok(SkylineFactor { m: self })
    }
}

#[inline]
fn dot_span(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Cholesky factor in the same skyline layout.
pub struct SkylineFactor {
    m: Skyline,
}

impl SkylineFactor {
    pub fn n(&self) -> usize {
        self.m.n
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.m.n;
        // L y = b
        for i in 0..n {
            let s = self.m.start[i];
            let row = self.m.row(i);
            let dot = dot_row(&row[..i - s], &x[s..i]);
            x[i] = (x[i] - dot) / row[i - s];
        }
        // L^T x = y
        for i in (0..n).rev() {
            let s = self.m.start[i];
            let row = self.m.row(i);
            let xi = x[i] / row[i - s];
            x[i] = xi;
            for (k, &a) in row[..i - s].iter().enumerate() {
                x[s + k] -= a * xi;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

#[inline]
fn dot_row(a: &[f64], b: &[f64]) -> f64 {
    dot_span(a, b)
}

/// One converged buckling mode: load factor `lambda = 1/gamma` and the
/// K-normalized mode shape.
pub struct BucklingMode {
    pub lambda: f64,
    pub gamma: f64,
    pub phi: Vec<f64>,
    /// Relative residual `|(K + lambda Ks) phi| / |K phi|`.
    pub residual: f64,
}

/// Extremal eigenpairs of `-K^-1 Ks v = gamma v` with `gamma > 0`, i.e. the
/// lowest positive buckling load factors of `(K + lambda Ks) phi = 0`.
///
/// `kfac` must factorize the same `k` that is passed for the inner products.
/// Returns up to `n_modes` converged positive modes ordered by descending
/// `gamma` (ascending `lambda`); fewer when the positive spectrum is smaller
/// or the basis budget runs out (the caller decides whether that is an
/// error). Clustered and exactly repeated eigenvalues are recovered by
/// restarting Lanczos with deflation against the already locked modes.
pub fn buckling_modes(
    k: &Skyline,
    kfac: &SkylineFactor,
    ks: &Skyline,
    n_modes: usize,
    tol: f64,
    seed: u64,
) -> Result<Vec<BucklingMode>> {
    use rand::SeedableRng;
    let n = k.n();
    let mut budget = n.min(260).max((2 * n_modes + 20).min(n));
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut locked: Vec<BucklingMode> = Vec::new();
    for _restart in 0..8 {
        if locked.len() >= n_modes || budget == 0 {
            break;
        }
        let got = lanczos_run(
            k,
            kfac,
            ks,
            n_modes - locked.len(),
            tol,
            &mut rng,
            &locked,
            &mut budget,
        )?;
        if got.is_empty() {
            break;
        }
        locked.extend(got);
    }
    locked.sort_by(|a, b| b.gamma.partial_cmp(&a.gamma).unwrap());
    locked.truncate(n_modes);
    Ok(locked)
}

#[allow(clippy::too_many_arguments)]
fn lanczos_run(
    k: &Skyline,
    kfac: &SkylineFactor,
    ks: &Skyline,
    n_modes: usize,
    tol: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
    locked: &[BucklingMode],
    budget: &mut usize,
) -> Result<Vec<BucklingMode>> {
    use rand::RngExt;
    let n = k.n();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut scratch = vec![0.0; n];

    // Random start vector, K-orthogonal to locked modes.
    let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    for _ in 0..2 {
        k.matvec(&v, &mut scratch);
        for m in locked {
            let c = dot(&m.phi, &scratch);
            axpy(&mut v, -c, &m.phi);
        }
        k.matvec(&v, &mut scratch);
    }
    let nv = dot(&v, &scratch).max(0.0).sqrt();
    if !(nv > 0.0) {
        return Ok(Vec::new());
    }
    scale(&mut v, 1.0 / nv);

    let mut check_every = (2 * n_modes).max(10);
    loop {
        basis.push(v.clone());
        *budget = budget.saturating_sub(1);
        let j = basis.len() - 1;
        // w = A v_j = -K^-1 Ks v_j ; alpha_j = <w, v_j>_K = -(Ks v_j)^T v_j.
        ks.matvec(&basis[j], &mut scratch);
        let y: Vec<f64> = scratch.iter().map(|&t| -t).collect();
        let alpha = dot(&y, &basis[j]);
        alphas.push(alpha);
        let mut w = kfac.solve(&y);
        // Three-term recurrence, then full reorthogonalization (two classical
        // Gram–Schmidt passes) against the basis and the locked modes.
        axpy(&mut w, -alpha, &basis[j]);
        if j > 0 {
            let b = betas[j - 1];
            axpy(&mut w, -b, &basis[j - 1]);
        }
        for _ in 0..2 {
            k.matvec(&w, &mut scratch);
            for vb in &basis {
                let c = dot(vb, &scratch);
                axpy(&mut w, -c, vb);
            }
            for m in locked {
                let c = dot(&m.phi, &scratch);
                axpy(&mut w, -c, &m.phi);
            }
            k.matvec(&w, &mut scratch);
        }
        let beta = dot(&w, &scratch).max(0.0).sqrt();

        let basis_full = *budget == 0;
        let breakdown = !(beta > 1e-13 * alphas[0].abs().max(1.0)) || !beta.is_finite();
        if basis.len() >= check_every || basis_full || breakdown {
            check_every = basis.len() + (2 * n_modes).max(10);
            let last = basis_full || breakdown;
            if let Some(modes) = try_extract(k, ks, &basis, &alphas, &betas, beta, n_modes, tol, last)? {
                return Ok(modes);
            }
        }
        betas.push(beta);
        v = w;
        scale(&mut v, 1.0 / beta);
    }
}

/// Rayleigh–Ritz on the Lanczos tridiagonal; returns converged positive modes,
/// or `None` to request more Lanczos steps.
#[allow(clippy::too_many_arguments)]
fn try_extract(
    k: &Skyline,
    ks: &Skyline,
    basis: &[Vec<f64>],
    alphas: &[f64],
    betas: &[f64],
    beta_last: f64,
    n_modes: usize,
    tol: f64,
    last_chance: bool,
) -> Result<Option<Vec<BucklingMode>>> {
    let m = basis.len();
    let n = basis[0].len();
    let mut t = nalgebra::DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alphas[i];
        if i + 1 < m {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let eig = nalgebra::SymmetricEigen::new(t);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());

    let wanted: Vec<usize> = order
        .into_iter()
        .filter(|&i| eig.eigenvalues[i] > 0.0)
        .take(n_modes)
        .collect();
    if wanted.is_empty() {
        if last_chance {
            return Ok(Some(Vec::new()));
        }
        return Ok(None);
    }
    // Cheap Lanczos residual estimate: beta_last * |last row of eigvec|.
    let scale_ref = eig.eigenvalues[wanted[0]].abs();
    let all_est_ok = wanted.iter().all(|&i| {
        let est = beta_last * eig.eigenvectors[(m - 1, i)].abs();
        est <= 0.5 * tol * scale_ref.max(eig.eigenvalues[i].abs())
    });
    if !all_est_ok && !last_chance {
        return Ok(None);
    }

    let mut modes = Vec::new();
    let mut tmp = vec![0.0; n];
    let mut tmp2 = vec![0.0; n];
    for &i in &wanted {
        let gamma = eig.eigenvalues[i];
        let mut phi = vec![0.0; n];
        for (j, vb) in basis.iter().enumerate() {
            axpy(&mut phi, eig.eigenvectors[(j, i)], vb);
        }
        // Explicit residual of (gamma K + Ks) phi relative to gamma |K phi|.
        k.matvec(&phi, &mut tmp);
        ks.matvec(&phi, &mut tmp2);
        let mut rnum = 0.0;
        let mut rden = 0.0;
        for idx in 0..n {
            let r = gamma * tmp[idx] + tmp2[idx];
            rnum += r * r;
            rden += (gamma * tmp[idx]) * (gamma * tmp[idx]);
        }
        let residual = (rnum / rden.max(f64::MIN_POSITIVE)).sqrt();
        if residual <= tol {
            modes.push(BucklingMode { lambda: 1.0 / gamma, gamma, phi, residual });
        }
    }
    if modes.len() < n_modes.min(basis.len()) && !last_chance {
        return Ok(None);
    }
    if modes.is_empty() && last_chance {
        return Ok(Some(Vec::new()));
    }
    if modes.len() < n_modes && !last_chance {
        return Ok(None);
    }
    Ok(Some(modes))
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    dot_span(a, b)
}

#[inline]
pub fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub fn scale(x: &mut [f64], a: f64) {
    for xi in x.iter_mut() {
        *xi *= a;
    }
}
