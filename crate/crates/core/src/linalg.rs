//! Dense linear algebra helpers on top of nalgebra.

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;

/// Standard symplectic matrix for coordinates ordered `(x_1..x_n, y_1..y_n)`,
/// i.e. `omega(u, v) = u^T J v` with `J = [[0, I], [-I, 0]]`.
pub fn standard_omega(n: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        j[(i, n + i)] = 1.0;
        j[(n + i, i)] = -1.0;
    }
    j
}

/// Singular values sorted in decreasing order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Number of singular values above `tol * sigma_max`. A zero matrix has rank 0.
pub fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    let s = singular_values(m);
    let smax = s.first().copied().unwrap_or(0.0);
    if smax <= f64::MIN_POSITIVE {
        return 0;
    }
    s.iter().filter(|&&v| v > tol * smax).count()
}

/// Orthonormal basis (as columns) of the null space of `m`, using the same
/// relative threshold as [`numerical_rank`].
pub fn null_space(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let cols = m.ncols();
    if cols == 0 {
        return DMatrix::zeros(0, 0);
    }
    // Pad to at least square so the SVD returns a full right basis.
    let rows = m.nrows().max(cols);
    let mut padded = DMatrix::zeros(rows, cols);
    padded.view_mut((0, 0), (m.nrows(), cols)).copy_from(m);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..cols)
        .filter(|&i| smax <= f64::MIN_POSITIVE || svd.singular_values[i] <= tol * smax)
        .collect();
    let mut out = DMatrix::zeros(cols, keep.len());
    for (k, &i) in keep.iter().enumerate() {
        out.set_column(k, &v_t.row(i).transpose());
    }
    out
}

/// Orthonormal basis of the column space of `m`.
pub fn column_space(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    if m.ncols() == 0 || m.nrows() == 0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.max();
    if smax <= f64::MIN_POSITIVE {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > tol * smax)
        .collect();
    let mut out = DMatrix::zeros(m.nrows(), keep.len());
    for (k, &i) in keep.iter().enumerate() {
        out.set_column(k, &u.column(i));
    }
    out
}

/// Eigenvalues of a general real square matrix.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    m.complex_eigenvalues().iter().copied().collect()
}

/// Spectral radius from a list of eigenvalues.
pub fn spectral_radius(eigs: &[Complex<f64>]) -> f64 {
    eigs.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Commutator `ab - ba`.
pub fn commutator(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a * b - b * a
}

/// Basis `B` (columns `e_1..e_m, f_1..f_m`) of the span of `vectors` with
/// `B^T omega B` equal to the standard matrix. Returns `None` when the span
/// is degenerate for `omega` at tolerance `tol`.
pub fn symplectic_basis(vectors: &DMatrix<f64>, omega: &DMatrix<f64>, tol: f64) -> Option<DMatrix<f64>> {
    let dim = vectors.ncols();
    if !dim.is_multiple_of(2) {
        return None;
    }
    let form = |u: &DVector<f64>, v: &DVector<f64>| (u.transpose() * omega * v)[(0, 0)];
    let mut pool: Vec<DVector<f64>> = (0..dim).map(|i| vectors.column(i).into_owned()).collect();
    let mut es = Vec::new();
    let mut fs = Vec::new();
    while !pool.is_empty() {
        // Pick the pair with the largest pairing for stability.
        let mut best = (0, 0, 0.0f64);
        for i in 0..pool.len() {
            for j in 0..pool.len() {
                let w = form(&pool[i], &pool[j]);
                if w > best.2 {
                    best = (i, j, w);
                }
            }
        }
        let scale = pool.iter().map(|v| v.norm_squared()).fold(0.0, f64::max);
        if best.2 <= tol * scale.max(f64::MIN_POSITIVE) {
            return None;
        }
        let (i, j, w) = best;
        let e = pool[i].clone() / w.sqrt();
        let f = pool[j].clone() / w.sqrt();
        let mut rest = Vec::new();
        for (k, v) in pool.into_iter().enumerate() {
            if k == i || k == j {
                continue;
            }
            let ve = form(&v, &e);
            let vf = form(&v, &f);
            rest.push(v - e.clone() * vf + f.clone() * ve);
        }
        es.push(e);
        fs.push(f);
        pool = rest;
    }
    let cols: Vec<DVector<f64>> = es.into_iter().chain(fs).collect();
    Some(DMatrix::from_columns(&cols))
}

/// Random symplectic matrix `exp(J^{-1} S)` with `S` symmetric, entries of
/// `S` uniform in `[-scale, scale]`.
pub fn random_symplectic(n: usize, scale: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    let dim = 2 * n;
    let mut s = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in i..dim {
            let v = rng.random_range(-scale..scale);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    let j = standard_omega(n);
    let a = -&j * s;
    a.exp()
}

/// Serialize a matrix as a list of rows.
pub fn serialize_rows<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for r in m.row_iter() {
        seq.serialize_element(&r.iter().copied().collect::<Vec<f64>>())?;
    }
    seq.end()
}

/// Serialize a list of matrices as lists of rows.
pub fn serialize_rows_vec<S: serde::Serializer>(ms: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(ms.len()))?;
    for m in ms {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        seq.serialize_element(&rows)?;
    }
    seq.end()
}

/// Solve `m x = b` with LU; `None` when singular.
pub fn solve(m: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    m.clone().lu().solve(b)
}
