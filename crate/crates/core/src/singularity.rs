//! Rank, non-degeneracy and Williamson type of singular points, and circle
//! weights of elliptic fixed points.
//!
//! The linearization of `f` at a point is `A = W^{-1} Hess f` where `W` is the
//! chart's form matrix. At a rank-k point the family is restricted to a
//! symplectic slice: the Euclidean complement of `K = span X_{f_i}(p)` inside
//! `K^omega = ker dF(p)`, using the `n - k` combinations of the `f_i` whose
//! differentials vanish at `p`.

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::expr::Expr;
use crate::linalg::{
    column_space, commutator, eigenvalues, max_abs, null_space, numerical_rank, serialize_rows, serialize_rows_vec,
    spectral_radius, standard_omega, symplectic_basis,
};
use crate::sampling::seeded;
use crate::symplectic::{hamiltonian_vector_field, hessian_at, DarbouxChart, MomentMapSystem, SymplecticError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SingularityError {
    #[error(transparent)]
    Symplectic(#[from] SymplecticError),
    #[error("the point is regular (rank {rank} = n)")]
    RegularPoint { rank: usize },
    #[error("orbit directions are not isotropic (residual {residual:.3e}); the functions are not in involution here")]
    SliceConstructionFailed { residual: f64 },
    #[error("empty linearized family")]
    EmptyFamily,
    #[error("no generic combination found in {trials} trials: independent and commuting, but every sampled spectrum is clustered")]
    Inconclusive { trials: usize },
    #[error("eigenvalue {re:.3e}{im:+.3e}i lies on both axes within tolerance")]
    ClassificationAmbiguous { re: f64, im: f64 },
    #[error("eigenvalue {re:.3e}{im:+.3e}i is not on the imaginary axis")]
    NotElliptic { re: f64, im: f64 },
    #[error("linearization is not semisimple at eigenvalue {im:.3e}i")]
    NotSemisimple { im: f64 },
    #[error("Hessian vanishes at the point")]
    ZeroHessian,
    #[error("the flow does not fix the point (|X(p)| = {residual:.3e})")]
    NotFixedPoint { residual: f64 },
}

/// Tolerances and seed for classification. All relative tolerances scale
/// with the largest singular value or the spectral radius.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingularityConfig {
    pub tol_rank: f64,
    pub tol_iso: f64,
    pub tol_comm: f64,
    pub tol_gap: f64,
    pub tol_axis: f64,
    pub trials: usize,
    pub seed: u64,
}

impl Default for SingularityConfig {
    fn default() -> Self {
        SingularityConfig {
            tol_rank: 1e-8,
            tol_iso: 1e-8,
            tol_comm: 1e-8,
            tol_gap: 1e-6,
            tol_axis: 1e-8,
            trials: 8,
            seed: 7,
        }
    }
}

/// Numerical rank of the n x 2n matrix of gradients at `p`.
pub fn rank_of_differential(system: &MomentMapSystem, p: &[f64], tol_rank: f64) -> Result<usize, SingularityError> {
    Ok(numerical_rank(&system.differential(p)?, tol_rank))
}

/// Linearizations `A_i` on the transverse slice, with the slice basis (as
/// columns in the chart) and the coefficient vectors of the combinations
/// used (columns of an n x m matrix).
#[derive(Debug, Clone, Serialize)]
pub struct LinearizedFamily {
    pub rank: usize,
    #[serde(serialize_with = "serialize_rows_vec")]
    pub matrices: Vec<DMatrix<f64>>,
    #[serde(serialize_with = "serialize_rows")]
    pub slice_basis: DMatrix<f64>,
    #[serde(serialize_with = "serialize_rows")]
    pub combinations: DMatrix<f64>,
}

impl LinearizedFamily {
    /// Degrees of freedom of the slice, `n - k`.
    pub fn reduced_dof(&self) -> usize {
        self.slice_basis.ncols() / 2
    }

    /// Build directly from matrices on a standard 2m-dimensional slice.
    pub fn from_matrices(matrices: Vec<DMatrix<f64>>) -> Self {
        let dim = matrices.first().map_or(0, |a| a.nrows());
        let m = matrices.len();
        LinearizedFamily {
            rank: 0,
            matrices,
            slice_basis: DMatrix::identity(dim, dim),
            combinations: DMatrix::identity(m, m),
        }
    }
}

pub fn transverse_linearization(
    system: &MomentMapSystem,
    p: &[f64],
    cfg: &SingularityConfig,
) -> Result<LinearizedFamily, SingularityError> {
    let n = system.dof();
    let chart = system.chart();
    let df = system.differential(p)?;
    let k = numerical_rank(&df, cfg.tol_rank);
    if k == n {
        return Err(SingularityError::RegularPoint { rank: k });
    }
    let hess = system.hessians(p)?;
    let omega = chart.omega();
    // W^2 = -I for either orientation
    let omega_inv = -&omega;
    if k == 0 {
        return Ok(LinearizedFamily {
            rank: 0,
            matrices: hess.iter().map(|h| &omega_inv * h).collect(),
            slice_basis: DMatrix::identity(2 * n, 2 * n),
            combinations: DMatrix::identity(n, n),
        });
    }
    let m = n - k;
    // Hamiltonian fields at p as columns: X = -W^{-T} grad f = -W grad f.
    let fields = -&omega * df.transpose();
    let iso = fields.transpose() * &omega * &fields;
    let scale = fields.iter().fold(0.0f64, |a, v| a.max(v.abs())).powi(2);
    let residual = max_abs(&iso) / scale.max(f64::MIN_POSITIVE);
    if residual > cfg.tol_iso {
        return Err(SingularityError::SliceConstructionFailed { residual });
    }
    let kernel = null_space(&df, cfg.tol_rank);
    let orbit = column_space(&fields, cfg.tol_rank);
    let projector = DMatrix::<f64>::identity(2 * n, 2 * n) - &orbit * orbit.transpose();
    let slice = column_space(&(projector * kernel), cfg.tol_rank);
    if slice.ncols() != 2 * m {
        return Err(SingularityError::SliceConstructionFailed { residual: f64::NAN });
    }
    let basis = symplectic_basis(&slice, &omega, cfg.tol_rank)
        .ok_or(SingularityError::SliceConstructionFailed { residual: f64::NAN })?;
    let combos = null_space(&df.transpose(), cfg.tol_rank);
    if combos.ncols() != m {
        return Err(SingularityError::SliceConstructionFailed { residual: f64::NAN });
    }
    let jm_inv = -standard_omega(m);
    let matrices = (0..m)
        .map(|l| {
            let mut h = DMatrix::zeros(2 * n, 2 * n);
            for (i, hi) in hess.iter().enumerate() {
                h += hi * combos[(i, l)];
            }
            &jm_inv * (basis.transpose() * h * &basis)
        })
        .collect();
    Ok(LinearizedFamily { rank: k, matrices, slice_basis: basis, combinations: combos })
}

/// A combination of the family with simple spectrum.
#[derive(Debug, Clone, Serialize)]
pub struct Witness {
    pub coefficients: Vec<f64>,
    #[serde(serialize_with = "serialize_rows")]
    pub matrix: DMatrix<f64>,
    pub eigenvalues: Vec<(f64, f64)>,
    /// Smallest pairwise eigenvalue distance over the spectral radius.
    pub relative_gap: f64,
    pub trial: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct NondegeneracyCheck {
    pub nondegenerate: bool,
    pub independent: bool,
    pub family_rank: usize,
    pub commuting: bool,
    /// `max |[A_i, A_j]|` over `max |A_i|^2`.
    pub max_commutator: f64,
    pub witness: Option<Witness>,
    pub failed_clause: Option<String>,
    pub seed: u64,
}

fn complex_pairs(eigs: &[Complex<f64>]) -> Vec<(f64, f64)> {
    eigs.iter().map(|z| (z.re, z.im)).collect()
}

fn min_gap(eigs: &[Complex<f64>]) -> f64 {
    let mut gap = f64::INFINITY;
    for i in 0..eigs.len() {
        for j in (i + 1)..eigs.len() {
            gap = gap.min((eigs[i] - eigs[j]).norm());
        }
    }
    gap
}

/// Independence, commutation and simple spectrum of a generic combination.
pub fn is_nondegenerate(fam: &LinearizedFamily, cfg: &SingularityConfig) -> Result<NondegeneracyCheck, SingularityError> {
    let mats = &fam.matrices;
    if mats.is_empty() {
        return Err(SingularityError::EmptyFamily);
    }
    let m = mats.len();
    let d = mats[0].nrows();
    let mut stacked = DMatrix::zeros(d * d, m);
    for (i, a) in mats.iter().enumerate() {
        stacked.set_column(i, &DVector::from_column_slice(a.as_slice()));
    }
    let family_rank = numerical_rank(&stacked, cfg.tol_rank);
    let independent = family_rank == m;
    let scale = mats.iter().map(max_abs).fold(0.0, f64::max);
    let mut max_commutator = 0.0f64;
    if scale > 0.0 {
        for i in 0..m {
            for j in (i + 1)..m {
                max_commutator = max_commutator.max(max_abs(&commutator(&mats[i], &mats[j])) / (scale * scale));
            }
        }
    }
    let commuting = max_commutator <= cfg.tol_comm;
    let mut check = NondegeneracyCheck {
        nondegenerate: false,
        independent,
        family_rank,
        commuting,
        max_commutator,
        witness: None,
        failed_clause: None,
        seed: cfg.seed,
    };
    if !independent {
        check.failed_clause = Some(format!("linear independence: family rank {family_rank} < {m}"));
        return Ok(check);
    }
    if !commuting {
        check.failed_clause = Some(format!("commutation: relative commutator {max_commutator:.3e}"));
        return Ok(check);
    }
    let mut rng = seeded(cfg.seed);
    for trial in 0..cfg.trials {
        let coefficients: Vec<f64> = (0..m)
            .map(|_| {
                let v: f64 = rng.random_range(0.5..1.5);
                if rng.random_bool(0.5) { v } else { -v }
            })
            .collect();
        let mut a = DMatrix::zeros(d, d);
        for (c, ai) in coefficients.iter().zip(mats) {
            a += ai * *c;
        }
        let eigs = eigenvalues(&a);
        let rho = spectral_radius(&eigs);
        let gap = min_gap(&eigs);
        if rho > 0.0 && gap > cfg.tol_gap * rho {
            check.nondegenerate = true;
            check.witness = Some(Witness {
                coefficients,
                matrix: a,
                eigenvalues: complex_pairs(&eigs),
                relative_gap: gap / rho,
                trial,
            });
            return Ok(check);
        }
    }
    Err(SingularityError::Inconclusive { trials: cfg.trials })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Elliptic,
    Hyperbolic,
    FocusFocus,
}

/// Eigenvalues of one Williamson block: `{±iw}`, `{±a}` or `{±a±ib}`.
#[derive(Debug, Clone, Serialize)]
pub struct EigenGroup {
    pub kind: BlockKind,
    pub eigenvalues: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct WilliamsonType {
    pub elliptic: usize,
    pub hyperbolic: usize,
    pub focus_focus: usize,
}

impl WilliamsonType {
    pub fn as_tuple(&self) -> (usize, usize, usize) {
        (self.elliptic, self.hyperbolic, self.focus_focus)
    }

    /// `k_e + k_h + 2 k_f`
    pub fn budget(&self) -> usize {
        self.elliptic + self.hyperbolic + 2 * self.focus_focus
    }
}

fn take_nearest(pool: &mut Vec<Complex<f64>>, target: Complex<f64>) -> Option<Complex<f64>> {
    let (i, _) = pool
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - target).norm().total_cmp(&(b.1 - target).norm()))?;
    Some(pool.swap_remove(i))
}

/// Classify a simple Hamiltonian spectrum into Williamson blocks.
pub fn classify_spectrum(
    eigs: &[Complex<f64>],
    tol_axis: f64,
) -> Result<(WilliamsonType, Vec<EigenGroup>), SingularityError> {
    let rho = spectral_radius(eigs);
    let tol = tol_axis * rho;
    let mut pool: Vec<Complex<f64>> = eigs.to_vec();
    for z in &pool {
        if z.re.abs() <= tol && z.im.abs() <= tol {
            return Err(SingularityError::ClassificationAmbiguous { re: z.re, im: z.im });
        }
    }
    // Representatives in the closed first quadrant, largest first for stable output.
    let mut reps: Vec<Complex<f64>> = pool
        .iter()
        .copied()
        .filter(|z| z.re >= -tol && z.im >= -tol)
        .collect();
    reps.sort_by(|a, b| b.norm().total_cmp(&a.norm()).then(b.im.total_cmp(&a.im)));
    let mut wt = WilliamsonType { elliptic: 0, hyperbolic: 0, focus_focus: 0 };
    let mut groups = Vec::new();
    for r in reps {
        let Some(first) = take_nearest(&mut pool, r) else { break };
        if (first - r).norm() > tol.max(f64::MIN_POSITIVE) {
            // already consumed as a partner
            pool.push(first);
            continue;
        }
        let (kind, partners): (BlockKind, Vec<Complex<f64>>) = if first.re.abs() <= tol {
            (BlockKind::Elliptic, vec![Complex::new(0.0, -first.im)])
        } else if first.im.abs() <= tol {
            (BlockKind::Hyperbolic, vec![Complex::new(-first.re, 0.0)])
        } else {
            (BlockKind::FocusFocus, vec![first.conj(), -first, -first.conj()])
        };
        let mut members = vec![first];
        for t in partners {
            match take_nearest(&mut pool, t) {
                Some(z) => members.push(z),
                None => return Err(SingularityError::ClassificationAmbiguous { re: t.re, im: t.im }),
            }
        }
        match kind {
            BlockKind::Elliptic => wt.elliptic += 1,
            BlockKind::Hyperbolic => wt.hyperbolic += 1,
            BlockKind::FocusFocus => wt.focus_focus += 1,
        }
        groups.push(EigenGroup { kind, eigenvalues: complex_pairs(&members) });
    }
    if !pool.is_empty() {
        let z = pool[0];
        return Err(SingularityError::ClassificationAmbiguous { re: z.re, im: z.im });
    }
    Ok((wt, groups))
}

/// Williamson type from the witness of a non-degenerate family.
pub fn williamson_type(
    witness: &Witness,
    reduced_dof: usize,
    tol_axis: f64,
) -> Result<(WilliamsonType, Vec<EigenGroup>), SingularityError> {
    let eigs: Vec<Complex<f64>> = witness.eigenvalues.iter().map(|&(re, im)| Complex::new(re, im)).collect();
    let (wt, groups) = classify_spectrum(&eigs, tol_axis)?;
    assert_eq!(wt.budget(), reduced_dof, "Williamson budget identity violated");
    Ok((wt, groups))
}

/// Signed circle weights of an elliptic fixed point of `mu`: for each
/// eigenvalue `iw` (w > 0) of the linearization the weight is `w / 2`
/// signed by the Hessian on the corresponding eigenspace, so that
/// `mu = sum c_i (x_i^2 + y_i^2)` gives the `c_i`. Zero eigenvalue pairs give
/// weight 0. Sorted ascending.
pub fn s1_weights(mu: &Expr, chart: &DarbouxChart, p: &[f64], tol: f64) -> Result<Vec<f64>, SingularityError> {
    chart.check_expr(mu).map_err(SingularityError::from)?;
    let field = hamiltonian_vector_field(mu, chart).eval(p)?;
    let xnorm = field.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if xnorm > tol {
        return Err(SingularityError::NotFixedPoint { residual: xnorm });
    }
    let h = hessian_at(mu, chart, p)?;
    if max_abs(&h) == 0.0 {
        return Err(SingularityError::ZeroHessian);
    }
    let a = -chart.omega() * &h;
    weights_of_linearization(&a, &h, tol)
}

fn weights_of_linearization(a: &DMatrix<f64>, h: &DMatrix<f64>, tol: f64) -> Result<Vec<f64>, SingularityError> {
    let dim = a.nrows();
    let eigs = eigenvalues(a);
    let rho = spectral_radius(&eigs).max(max_abs(a));
    let axis = tol * rho;
    for z in &eigs {
        if z.re.abs() > axis {
            return Err(SingularityError::NotElliptic { re: z.re, im: z.im });
        }
    }
    // cluster the eigenvalues with nonnegative imaginary part
    let cluster_tol = 1e-6 * rho;
    let mut ims: Vec<f64> = eigs.iter().map(|z| z.im).collect();
    ims.sort_by(f64::total_cmp);
    let mut clusters: Vec<(f64, usize)> = Vec::new();
    for w in ims {
        match clusters.last_mut() {
            Some((c, count)) if (w - *c / *count as f64).abs() <= cluster_tol => {
                *c += w;
                *count += 1;
            }
            _ => clusters.push((w, 1)),
        }
    }
    let null_tol = 1e-7;
    let ac = a.map(|v| Complex::new(v, 0.0));
    let hc = h.map(|v| Complex::new(v, 0.0));
    let mut weights = Vec::new();
    for (sum, count) in clusters {
        let w = sum / count as f64;
        if w < -cluster_tol {
            continue;
        }
        let shifted = &ac - DMatrix::<Complex<f64>>::identity(dim, dim) * Complex::new(0.0, w);
        let basis = complex_null_space(&shifted, null_tol * rho.max(f64::MIN_POSITIVE));
        if basis.ncols() != count {
            return Err(SingularityError::NotSemisimple { im: w });
        }
        if w.abs() <= cluster_tol {
            weights.extend(std::iter::repeat_n(0.0, count / 2));
            continue;
        }
        let form = basis.adjoint() * &hc * &basis;
        let herm = (form.clone() + form.adjoint()) * Complex::new(0.5, 0.0);
        let signs = herm.symmetric_eigenvalues();
        for s in signs.iter() {
            weights.push(s.signum() * w / 2.0);
        }
    }
    weights.sort_by(f64::total_cmp);
    Ok(weights)
}

fn complex_null_space(m: &DMatrix<Complex<f64>>, abs_tol: f64) -> DMatrix<Complex<f64>> {
    let n = m.ncols();
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V^*");
    let keep: Vec<usize> = (0..n).filter(|&i| svd.singular_values[i] <= abs_tol).collect();
    let mut out = DMatrix::zeros(n, keep.len());
    for (k, &i) in keep.iter().enumerate() {
        out.set_column(k, &v_t.row(i).adjoint());
    }
    out
}

/// Classification of one singular point.
#[derive(Debug, Clone, Serialize)]
pub struct SingularPointReport {
    pub point: Vec<f64>,
    pub dof: usize,
    pub rank: usize,
    pub degenerate: bool,
    /// `nondegenerate`, `degenerate` or `inconclusive`.
    pub verdict: String,
    pub williamson: Option<WilliamsonType>,
    pub eigen_data: Vec<EigenGroup>,
    pub nondegeneracy: Option<NondegeneracyCheck>,
    /// Circle weights of the last component when it generates a circle
    /// action fixing the point.
    pub weights: Option<Vec<f64>>,
    /// Set for rank > 0, where the family lives on a constructed slice.
    pub slice_note: Option<String>,
}

/// Classify `p`; `None` when `p` is regular.
pub fn classify_point(
    system: &MomentMapSystem,
    p: &[f64],
    cfg: &SingularityConfig,
) -> Result<Option<SingularPointReport>, SingularityError> {
    let n = system.dof();
    let fam = match transverse_linearization(system, p, cfg) {
        Ok(f) => f,
        Err(SingularityError::RegularPoint { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let weights = system
        .components()
        .last()
        .and_then(|f| s1_weights(f, system.chart(), p, 1e-9).ok());
    let slice_note = (fam.rank > 0).then(|| {
        format!(
            "rank {} point: family restricted to a {}-dimensional symplectic slice of ker dF",
            fam.rank,
            2 * fam.reduced_dof()
        )
    });
    let mut report = SingularPointReport {
        point: p.to_vec(),
        dof: n,
        rank: fam.rank,
        degenerate: true,
        verdict: "degenerate".into(),
        williamson: None,
        eigen_data: Vec::new(),
        nondegeneracy: None,
        weights,
        slice_note,
    };
    match is_nondegenerate(&fam, cfg) {
        Ok(check) => {
            if let Some(w) = &check.witness {
                let (wt, groups) = williamson_type(w, fam.reduced_dof(), cfg.tol_axis)?;
                assert_eq!(fam.rank + wt.budget(), n);
                report.degenerate = false;
                report.verdict = "nondegenerate".into();
                report.williamson = Some(wt);
                report.eigen_data = groups;
            }
            report.nondegeneracy = Some(check);
        }
        Err(SingularityError::Inconclusive { .. }) => report.verdict = "inconclusive".into(),
        Err(e) => return Err(e),
    }
    Ok(Some(report))
}

/// Singular points found on a grid.
#[derive(Debug, Clone, Serialize)]
pub struct ScanReport {
    pub grid: usize,
    pub bounds: Vec<(f64, f64)>,
    pub nodes: usize,
    pub singular_nodes: usize,
    /// Reports for the first `max_reports` singular nodes, rank 0 first.
    pub points: Vec<SingularPointReport>,
    pub truncated: bool,
}

/// Classify every node of a `grid`-per-axis lattice with rank < n.
pub fn scan_singular_points(
    system: &MomentMapSystem,
    bounds: &[(f64, f64)],
    grid: usize,
    max_reports: usize,
    cfg: &SingularityConfig,
) -> Result<ScanReport, SingularityError> {
    let dim = system.chart().dim();
    if bounds.len() != dim {
        return Err(SymplecticError::DimensionMismatch { expected: dim, got: bounds.len() }.into());
    }
    let grid = grid.max(1);
    let axis = |(lo, hi): (f64, f64), i: usize| {
        if grid == 1 { 0.5 * (lo + hi) } else { lo + (hi - lo) * i as f64 / (grid - 1) as f64 }
    };
    let total = grid.pow(dim as u32);
    let mut found = Vec::new();
    for idx in 0..total {
        let mut rem = idx;
        let p: Vec<f64> = bounds
            .iter()
            .map(|&b| {
                let i = rem % grid;
                rem /= grid;
                axis(b, i)
            })
            .collect();
        if rank_of_differential(system, &p, cfg.tol_rank)? < system.dof() {
            found.push(p);
        }
    }
    let singular_nodes = found.len();
    let mut reports = Vec::new();
    for p in &found {
        if let Some(r) = classify_point(system, p, cfg)? {
            reports.push(r);
        }
    }
    reports.sort_by_key(|r| r.rank);
    let truncated = reports.len() > max_reports;
    reports.truncate(max_reports);
    Ok(ScanReport { grid, bounds: bounds.to_vec(), nodes: total, singular_nodes, points: reports, truncated })
}

/// Critical points of `f` in a box, found by Newton's method on the gradient
/// from every node of a lattice and deduplicated.
pub fn critical_points(
    f: &Expr,
    chart: &DarbouxChart,
    bounds: &[(f64, f64)],
    grid: usize,
    tol: f64,
) -> Result<Vec<Vec<f64>>, SingularityError> {
    let dim = chart.dim();
    if bounds.len() != dim {
        return Err(SymplecticError::DimensionMismatch { expected: dim, got: bounds.len() }.into());
    }
    let names = chart.names();
    let grad = crate::expr::gradient(f, &names);
    let hess: Vec<Expr> = crate::expr::hessian(f, &names).into_iter().flatten().collect();
    let gp = crate::expr::Program::compile(&grad, &names).map_err(SymplecticError::from)?;
    let hp = crate::expr::Program::compile(&hess, &names).map_err(SymplecticError::from)?;
    let grid = grid.max(2);
    let total = grid.pow(dim as u32);
    let mut out: Vec<Vec<f64>> = Vec::new();
    let diam = bounds.iter().map(|(lo, hi)| hi - lo).fold(0.0, f64::max);
    for idx in 0..total {
        let mut rem = idx;
        let mut z: Vec<f64> = bounds
            .iter()
            .map(|&(lo, hi)| {
                let i = rem % grid;
                rem /= grid;
                lo + (hi - lo) * i as f64 / (grid - 1) as f64
            })
            .collect();
        let mut converged = false;
        for _ in 0..60 {
            let Ok(g) = gp.eval(&z) else { break };
            let gnorm = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if gnorm <= tol {
                converged = true;
                break;
            }
            let Ok(hv) = hp.eval(&z) else { break };
            let hm = DMatrix::from_row_slice(dim, dim, &hv);
            // least squares step so degenerate critical points still converge
            let step = match hm.clone().svd(true, true).solve(&DVector::from_vec(g), 1e-12 * max_abs(&hm)) {
                Ok(s) => s,
                Err(_) => break,
            };
            if step.amax() == 0.0 {
                break;
            }
            for (zi, si) in z.iter_mut().zip(step.iter()) {
                *zi -= si;
            }
        }
        let inside = z.iter().zip(bounds).all(|(v, (lo, hi))| *v >= *lo - 1e-12 && *v <= *hi + 1e-12);
        if converged && inside {
            let dup = out.iter().any(|q| {
                q.iter().zip(&z).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) <= 1e-6 * diam.max(1.0)
            });
            if !dup {
                out.push(z);
            }
        }
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;
    use crate::linalg::random_symplectic;
    use crate::symplectic::Orientation;

    fn sys(n: usize, fs: &[&str]) -> MomentMapSystem {
        MomentMapSystem::new(DarbouxChart::standard(n), fs.iter().map(|s| parse_expr(s).unwrap()).collect()).unwrap()
    }

    fn cfg() -> SingularityConfig {
        SingularityConfig::default()
    }

    /// Roots of the characteristic polynomial `l^4 + a l^2 + b` of a 4x4
    /// Hamiltonian matrix, from Faddeev-LeVerrier coefficients.
    fn hamiltonian_roots_4(a: &DMatrix<f64>) -> Vec<Complex<f64>> {
        let n = 4;
        let mut m = DMatrix::<f64>::zeros(n, n);
        let mut coeffs = vec![1.0];
        for k in 1..=n {
            m = a * &m + DMatrix::identity(n, n) * *coeffs.last().unwrap();
            let c = -(a * &m).trace() / k as f64;
            coeffs.push(c);
        }
        // coeffs: l^4 + c1 l^3 + c2 l^2 + c3 l + c4; odd ones vanish
        let (p, q) = (coeffs[2], coeffs[4]);
        let disc = Complex::new(p * p - 4.0 * q, 0.0).sqrt();
        let mut roots = Vec::new();
        for s in [(-p + disc) / 2.0, (-p - disc) / 2.0] {
            let r = s.sqrt();
            roots.push(r);
            roots.push(-r);
        }
        roots
    }

    #[test]
    fn rank_examples() {
        let f = sys(2, &["x1^2+y1^2", "x2^2+y2^2"]);
        assert_eq!(rank_of_differential(&f, &[0.0; 4], 1e-8).unwrap(), 0);
        assert_eq!(rank_of_differential(&f, &[1.0, 0.0, 0.0, 0.0], 1e-8).unwrap(), 1);
        let reg = sys(2, &["x1", "x2"]);
        assert_eq!(rank_of_differential(&reg, &[0.3, -0.2, 1.0, 2.0], 1e-8).unwrap(), 2);
    }

    #[test]
    fn linearization_examples() {
        let at0 = |s: &str| transverse_linearization(&sys(1, &[s]), &[0.0, 0.0], &cfg()).unwrap().matrices[0].clone();
        assert_eq!(at0("x^2+y^2"), DMatrix::from_row_slice(2, 2, &[0.0, -2.0, 2.0, 0.0]));
        assert_eq!(at0("x*y"), DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]));
        assert_eq!(at0("(x^2+y^2)^2"), DMatrix::zeros(2, 2));
    }

    #[test]
    fn nondegeneracy_examples() {
        let ell = LinearizedFamily::from_matrices(vec![DMatrix::from_row_slice(2, 2, &[0.0, -2.0, 2.0, 0.0])]);
        assert!(is_nondegenerate(&ell, &cfg()).unwrap().nondegenerate);
        let zero = LinearizedFamily::from_matrices(vec![DMatrix::zeros(2, 2)]);
        let c = is_nondegenerate(&zero, &cfg()).unwrap();
        assert!(!c.nondegenerate && !c.independent);
        let ff = sys(2, &["x1*y2-x2*y1", "x1*y1+x2*y2"]);
        let fam = transverse_linearization(&ff, &[0.0; 4], &cfg()).unwrap();
        let c = is_nondegenerate(&fam, &cfg()).unwrap();
        let w = c.witness.unwrap();
        // oracle: spectrum of c1 A1 + c2 A2 is ±c2 ± i c1
        let (c1, c2) = (w.coefficients[0], w.coefficients[1]);
        let mut oracle = hamiltonian_roots_4(&w.matrix);
        for (re, im) in &w.eigenvalues {
            let z = Complex::new(*re, *im);
            let i = (0..oracle.len())
                .min_by(|&a, &b| (oracle[a] - z).norm().total_cmp(&(oracle[b] - z).norm()))
                .unwrap();
            assert!((oracle.swap_remove(i) - z).norm() < 1e-10);
            assert!((re.abs() - c2.abs()).abs() < 1e-12 && (im.abs() - c1.abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn nilpotent_family_is_inconclusive() {
        let f = sys(1, &["y^2"]);
        let fam = transverse_linearization(&f, &[0.0, 0.0], &cfg()).unwrap();
        assert!(matches!(is_nondegenerate(&fam, &cfg()), Err(SingularityError::Inconclusive { trials: 8 })));
        assert!(is_nondegenerate(&LinearizedFamily::from_matrices(vec![]), &cfg()).is_err());
    }

    fn wt(s: &MomentMapSystem, p: &[f64]) -> (usize, usize, usize, usize) {
        let r = classify_point(s, p, &cfg()).unwrap().unwrap();
        let t = r.williamson.unwrap().as_tuple();
        (r.rank, t.0, t.1, t.2)
    }

    #[test]
    fn williamson_examples() {
        assert_eq!(wt(&sys(1, &["x^2+y^2"]), &[0.0, 0.0]), (0, 1, 0, 0));
        assert_eq!(wt(&sys(1, &["x*y"]), &[0.0, 0.0]), (0, 0, 1, 0));
        assert_eq!(wt(&sys(2, &["x1*y2-x2*y1", "x1*y1+x2*y2"]), &[0.0; 4]), (0, 0, 0, 1));
        assert_eq!(wt(&sys(2, &["x1^2+y1^2", "x2^2+y2^2"]), &[0.0; 4]), (0, 2, 0, 0));
        assert_eq!(wt(&sys(2, &["x1*y1", "x2^2+y2^2"]), &[0.0; 4]), (0, 1, 1, 0));
    }

    #[test]
    fn rank_one_slices() {
        let f = sys(2, &["x1^2+y1^2", "x2^2+y2^2"]);
        assert_eq!(wt(&f, &[1.0, 0.0, 0.0, 0.0]), (1, 1, 0, 0));
        let g = sys(2, &["x1", "x2*y2"]);
        assert_eq!(wt(&g, &[0.5, 0.0, -1.0, 0.0]), (1, 0, 1, 0));
        // mixed combination: f1 + f2 and f2 with f1 regular at p
        let h = sys(2, &["x1 + x2^2+y2^2", "x2^2+y2^2"]);
        assert_eq!(wt(&h, &[0.0, 0.0, 3.0, 0.0]), (1, 1, 0, 0));
        assert!(classify_point(&f, &[1.0, 1.0, 0.0, 0.0], &cfg()).unwrap().is_none());
    }

    #[test]
    fn slice_fails_without_involution() {
        // x1 and y1 do not commute, and the third function makes the origin singular
        let bad = sys(3, &["x1", "y1", "x3^2+y3^2"]);
        assert!(matches!(
            transverse_linearization(&bad, &[0.0; 6], &cfg()),
            Err(SingularityError::SliceConstructionFailed { .. })
        ));
    }

    #[test]
    fn degenerate_points_never_crash() {
        for f in [&["(x^2+y^2)^2"][..], &["x^3"], &["0*x"]] {
            let r = classify_point(&sys(1, f), &[0.0, 0.0], &cfg()).unwrap().unwrap();
            assert!(r.degenerate);
        }
        let g = sys(2, &["(x1^2+y1^2)^2", "x2^2+y2^2"]);
        let r = classify_point(&g, &[0.0; 4], &cfg()).unwrap().unwrap();
        assert!(r.degenerate && r.williamson.is_none());
        assert_eq!(r.weights, Some(vec![0.0, 1.0]));
    }

    #[test]
    fn weight_examples() {
        let c1 = DarbouxChart::standard(1);
        let c2 = DarbouxChart::standard(2);
        let e = |s: &str| parse_expr(s).unwrap();
        assert_eq!(s1_weights(&e("x^2+y^2"), &c1, &[0.0, 0.0], 1e-9).unwrap(), vec![1.0]);
        let w = s1_weights(&e("3*(x1^2+y1^2) + 5*(x2^2+y2^2)"), &c2, &[0.0; 4], 1e-9).unwrap();
        assert!((w[0] - 3.0).abs() < 1e-12 && (w[1] - 5.0).abs() < 1e-12, "{w:?}");
        assert_eq!(s1_weights(&e("(x^2+y^2)^2"), &c1, &[0.0, 0.0], 1e-9), Err(SingularityError::ZeroHessian));
        assert!(matches!(s1_weights(&e("x*y"), &c1, &[0.0, 0.0], 1e-9), Err(SingularityError::NotElliptic { .. })));
        assert!(matches!(
            s1_weights(&e("x^2+y^2"), &c1, &[1.0, 0.0], 1e-9),
            Err(SingularityError::NotFixedPoint { .. })
        ));
        // signed, repeated and orientation-independent
        let w = s1_weights(&e("-(x1^2+y1^2) + 2*(x2^2+y2^2)"), &c2, &[0.0; 4], 1e-9).unwrap();
        assert!((w[0] + 1.0).abs() < 1e-12 && (w[1] - 2.0).abs() < 1e-12);
        let w = s1_weights(&e("x1^2+y1^2+x2^2+y2^2"), &c2, &[0.0; 4], 1e-9).unwrap();
        assert!(w.iter().all(|v| (v - 1.0).abs() < 1e-12) && w.len() == 2);
        let cot = c1.clone().with_orientation(Orientation::Cotangent);
        assert_eq!(s1_weights(&e("x^2+y^2"), &cot, &[0.0, 0.0], 1e-9).unwrap(), vec![1.0]);
        // non-semisimple: y^2 gives a nilpotent linearization
        assert!(matches!(
            s1_weights(&e("x1^2+y1^2 + y2^2"), &c2, &[0.0; 4], 1e-9),
            Err(SingularityError::NotSemisimple { .. })
        ));
        assert_eq!(s1_weights(&e("x1^2+y1^2"), &c2, &[0.0; 4], 1e-9).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn spectrum_symmetry_on_random_families() {
        let mut rng = seeded(21);
        for _ in 0..20 {
            let m = random_symplectic(2, 0.6, &mut rng);
            let a = DMatrix::from_row_slice(4, 4, &[0.0, 0.0, -2.0, 0.0, 0.0, 1.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1.0]);
            let conj = &m * a * m.clone().try_inverse().unwrap();
            let eigs = eigenvalues(&conj);
            let rho = spectral_radius(&eigs);
            for z in &eigs {
                for image in [-z, z.conj(), -z.conj()] {
                    let d = eigs.iter().map(|w| (w - image).norm()).fold(f64::INFINITY, f64::min);
                    assert!(d <= 1e-8 * rho);
                }
            }
        }
    }

    #[test]
    fn critical_points_of_double_well() {
        let c = DarbouxChart::standard(1);
        let f = parse_expr("y^2 + (x^2-1)^2").unwrap();
        let pts = critical_points(&f, &c, &[(-2.0, 2.0), (-1.0, 1.0)], 9, 1e-12).unwrap();
        assert_eq!(pts.len(), 3);
        assert!((pts[0][0] + 1.0).abs() < 1e-12 && pts[1][0].abs() < 1e-12 && (pts[2][0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scan_finds_origin() {
        let f = sys(2, &["x1^2+y1^2", "x2^2+y2^2"]);
        let r = scan_singular_points(&f, &[(-1.0, 1.0); 4], 3, 8, &cfg()).unwrap();
        assert_eq!(r.nodes, 81);
        // rank < 2 exactly where one block vanishes: 9 + 9 - 1 nodes
        assert_eq!(r.singular_nodes, 17);
        assert_eq!(r.points[0].rank, 0);
        assert!(r.truncated);
    }
}
