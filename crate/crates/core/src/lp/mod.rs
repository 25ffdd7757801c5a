//! LP solver for `min pᵀz s.t. Gz ≥ d` returning primal-dual pairs with an
//! explicit row basis `B` (a square nonsingular row subset of `G`).

mod simplex;
mod standard;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::lu::factorize;
use crate::linalg::singular_values;
use crate::model::CompactLp;
use simplex::{InitialBasis, RunOptions};
use standard::{inf_norm, RowRole, StandardForm};

/// Largest `mN` accepted by [`brute_force_solve`].
pub const BRUTE_FORCE_MAX_ROWS: usize = 24;

/// Sorted set of `nN` row indices of `G` (0-based).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Basis {
    rows: Vec<usize>,
}

impl Basis {
    pub fn new(mut rows: Vec<usize>) -> Self {
        rows.sort_unstable();
        rows.dedup();
        Basis { rows }
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn contains(&self, r: usize) -> bool {
        self.rows.binary_search(&r).is_ok()
    }

    /// Stage of each basis row, for stages of `m` rows.
    pub fn stages(&self, m: usize) -> Vec<usize> {
        self.rows.iter().map(|r| r / m).collect()
    }

    /// Dense `G[B,:]`.
    pub fn matrix(&self, lp: &CompactLp) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.rows.len(), lp.nz());
        for (pos, &r) in self.rows.iter().enumerate() {
            for (j, v) in lp.row(r) {
                out[(pos, j)] = v;
            }
        }
        out
    }

    /// Warm-start rows for the problem advanced by `by` stages: rows move
    /// `by` stages earlier and the last stage's pattern fills the tail.
    pub fn shifted(&self, m: usize, n_stages: usize, by: usize) -> Vec<usize> {
        if by == 0 {
            return self.rows.clone();
        }
        if by >= n_stages {
            let last = n_stages - 1;
            let pattern: Vec<usize> =
                self.rows.iter().filter(|&&r| r / m == last).map(|r| r % m).collect();
            return (0..n_stages)
                .flat_map(|i| pattern.iter().map(move |k| i * m + k))
                .collect();
        }
        let mut out: Vec<usize> = self.rows.iter().filter(|&&r| r >= by * m).map(|r| r - by * m).collect();
        let last = n_stages - 1;
        let pattern: Vec<usize> = self.rows.iter().filter(|&&r| r / m == last).map(|r| r % m).collect();
        for i in n_stages - by..n_stages {
            out.extend(pattern.iter().map(|k| i * m + k));
        }
        out
    }
}

/// Optimal primal-dual pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PrimalDualSolution {
    pub z: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Optimal row basis; `None` only when a point-started solve ends off a vertex.
    pub basis: Option<Basis>,
    pub objective: f64,
    pub iterations: usize,
}

/// How the simplex is initialized.
#[derive(Clone, Debug, Default)]
pub enum Start {
    #[default]
    Cold,
    /// Rows believed to be in an optimal basis; need not form a valid basis.
    Rows(Vec<usize>),
    /// A primal point; structural variables start nonbasic at these values.
    Point(Vec<f64>),
}

#[derive(Clone, Debug)]
pub struct SolverSettings {
    /// Feasibility tolerance is `feas_rel·(1+‖d‖∞)`.
    pub feas_rel: f64,
    /// Optimality tolerance is `opt_rel·(1+‖p‖∞)`.
    pub opt_rel: f64,
    pub max_iterations: Option<usize>,
    pub refactor_every: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            feas_rel: 1e-8,
            opt_rel: 1e-8,
            max_iterations: None,
            refactor_every: 64,
        }
    }
}

/// Absolute feasibility and optimality tolerances used for `lp`.
pub fn tolerances(lp: &CompactLp, settings: &SolverSettings) -> (f64, f64) {
    (
        settings.feas_rel * (1.0 + inf_norm(lp.d())),
        settings.opt_rel * (1.0 + inf_norm(lp.p())),
    )
}

/// Reusable solver; one per thread.
#[derive(Clone, Debug, Default)]
pub struct LpSolver {
    pub settings: SolverSettings,
    pub total_iterations: usize,
}

impl LpSolver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_settings(settings: SolverSettings) -> Self {
        LpSolver {
            settings,
            total_iterations: 0,
        }
    }

    pub fn solve(&mut self, lp: &CompactLp) -> Result<PrimalDualSolution> {
        self.solve_from(lp, &Start::Cold)
    }

    pub fn solve_from(&mut self, lp: &CompactLp, start: &Start) -> Result<PrimalDualSolution> {
        let sf = StandardForm::build(lp, self.settings.feas_rel, self.settings.opt_rel)?;
        let statuses;
        let init = match start {
            Start::Cold => InitialBasis::Cold,
            Start::Point(z) => {
                if z.len() != lp.nz() {
                    return Err(Error::DimensionMismatch("start point length".into()));
                }
                InitialBasis::Point(z)
            }
            Start::Rows(rows) => {
                statuses = hint_statuses(&sf, rows);
                InitialBasis::Statuses(&statuses)
            }
        };
        let out = simplex::run(&sf, init, &self.run_options(&sf, false))?;
        self.total_iterations += out.iterations;
        Ok(assemble(lp, &sf, &out))
    }

    /// A point with `Gz ≥ d` within tolerance, ignoring the cost.
    pub fn find_feasible(&mut self, lp: &CompactLp) -> Result<Vec<f64>> {
        let sf = StandardForm::build(lp, self.settings.feas_rel, self.settings.opt_rel)?;
        let out = simplex::run(&sf, InitialBasis::Cold, &self.run_options(&sf, true))?;
        self.total_iterations += out.iterations;
        Ok(out.x[..lp.nz()].to_vec())
    }

    fn run_options(&self, sf: &StandardForm, phase1_only: bool) -> RunOptions {
        RunOptions {
            phase1_only,
            max_iterations: self
                .settings
                .max_iterations
                .unwrap_or(50 * (sf.ncols() + sf.ng) + 10_000),
            refactor_every: self.settings.refactor_every,
        }
    }
}

/// Solve with default settings from a cold start.
pub fn solve(lp: &CompactLp) -> Result<PrimalDualSolution> {
    LpSolver::new().solve(lp)
}

fn hint_statuses(sf: &StandardForm, rows: &[usize]) -> Vec<Option<bool>> {
    let mut st = vec![None; sf.ncols()];
    for &r in rows {
        let Some(role) = sf.roles.get(r) else { continue };
        let (col, lower) = match *role {
            RowRole::Zero => continue,
            RowRole::Bound { var, lower, .. } => (var, lower),
            RowRole::Group { group, lower } => (sf.slack(group), lower),
        };
        if st[col].is_none() {
            st[col] = Some(lower);
        }
    }
    st
}

fn assemble(lp: &CompactLp, sf: &StandardForm, out: &simplex::Outcome) -> PrimalDualSolution {
    let nz = lp.nz();
    let z = out.x[..nz].to_vec();
    let mut lambda = vec![0.0; lp.nrows()];
    let mut rows = Vec::with_capacity(nz);
    let mut vertex = true;
    for j in 0..sf.ncols() {
        if out.basic[j] {
            continue;
        }
        let (x, l, h, dj) = (out.x[j], sf.lo[j], sf.hi[j], out.dj[j]);
        let at_lo = x == l;
        let at_hi = x == h;
        let use_lower = if at_lo && at_hi { dj >= 0.0 } else { at_lo };
        let row = if use_lower && at_lo {
            sf.lower_row[j]
        } else if at_hi {
            sf.upper_row[j]
        } else {
            None
        };
        let Some(r) = row else {
            vertex = false;
            continue;
        };
        rows.push(r);
        let mult = match sf.roles[r] {
            RowRole::Bound { coef, .. } => dj / coef,
            RowRole::Group { lower, .. } => {
                if lower {
                    dj
                } else {
                    -dj
                }
            }
            RowRole::Zero => 0.0,
        };
        lambda[r] = mult.max(0.0);
    }
    let basis = (vertex && rows.len() == nz).then(|| Basis::new(rows));
    PrimalDualSolution {
        objective: lp.objective(&z),
        z,
        lambda,
        basis,
        iterations: out.iterations,
    }
}

/// The unique `z` with `G[B,:]z = data[B]`.
pub fn basic_solution(lp: &CompactLp, basis: &Basis, data: &[f64]) -> Result<Vec<f64>> {
    let nz = lp.nz();
    if basis.len() != nz || data.len() != lp.nrows() {
        return Err(Error::DimensionMismatch("basis size or data length".into()));
    }
    let cols = lp.columns_of_rows(basis.rows());
    let lu = factorize(nz, &cols).map_err(|_| Error::SingularBasis)?;
    let mut rhs: Vec<f64> = basis.rows().iter().map(|&r| data[r]).collect();
    let mut z = vec![0.0; nz];
    lu.ftran(&mut rhs, &mut z);
    Ok(z)
}

/// Select `nN` linearly independent active rows containing every row with `λ > tol`.
///
/// Candidates are taken in order: rows with positive multiplier, then the
/// remaining active rows, each group by increasing index.
pub fn extract_basis(lp: &CompactLp, z: &[f64], lambda: &[f64], tol: f64) -> Result<Basis> {
    let nz = lp.nz();
    let gz = lp.mul_g(z);
    let d = lp.d();
    let active: Vec<usize> = (0..lp.nrows())
        .filter(|&r| (gz[r] - d[r]).abs() <= tol * (1.0 + d[r].abs()))
        .collect();
    let support: Vec<usize> = (0..lp.nrows()).filter(|&r| lambda[r] > tol).collect();
    let mut q: Vec<DVector<f64>> = Vec::new();
    let mut chosen = Vec::with_capacity(nz);
    let try_add = |r: usize, q: &mut Vec<DVector<f64>>| -> bool {
        let mut g = DVector::zeros(nz);
        for (j, v) in lp.row(r) {
            g[j] = v;
        }
        let norm0 = g.norm();
        if norm0 == 0.0 {
            return false;
        }
        for _ in 0..2 {
            for qi in q.iter() {
                let c = qi.dot(&g);
                g.axpy(-c, qi, 1.0);
            }
        }
        let norm = g.norm();
        if norm <= 1e-9 * norm0 {
            return false;
        }
        q.push(g / norm);
        true
    };
    for &r in &support {
        if !try_add(r, &mut q) {
            return Err(Error::DegenerateSelectionFailure);
        }
        chosen.push(r);
    }
    for &r in &active {
        if chosen.len() == nz {
            break;
        }
        if support.binary_search(&r).is_ok() {
            continue;
        }
        if try_add(r, &mut q) {
            chosen.push(r);
        }
    }
    if chosen.len() != nz {
        return Err(Error::DegenerateSelectionFailure);
    }
    Ok(Basis::new(chosen))
}

/// KKT residuals of a primal-dual pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KktReport {
    /// `max(d - Gz)`, clipped at zero.
    pub primal_infeasibility: f64,
    /// `max(-λ)`, clipped at zero.
    pub dual_infeasibility: f64,
    /// `|λᵀ(Gz - d)|`.
    pub complementarity: f64,
    /// `‖p - Gᵀλ‖∞`.
    pub stationarity: f64,
}

pub fn kkt_report(lp: &CompactLp, z: &[f64], lambda: &[f64]) -> KktReport {
    let gz = lp.mul_g(z);
    let d = lp.d();
    let primal = gz.iter().zip(d).fold(0.0f64, |a, (g, d)| a.max(d - g));
    let dual = lambda.iter().fold(0.0f64, |a, l| a.max(-l));
    let comp = lambda.iter().zip(gz.iter().zip(d)).map(|(l, (g, d))| l * (g - d)).sum::<f64>().abs();
    let gtl = lp.mul_gt(lambda);
    let stat = lp.p().iter().zip(&gtl).fold(0.0f64, |a, (p, g)| a.max((p - g).abs()));
    KktReport {
        primal_infeasibility: primal,
        dual_infeasibility: dual,
        complementarity: comp,
        stationarity: stat,
    }
}

fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// All bases whose basic solution is feasible and optimal (within tolerance),
/// with their basic solutions; only for `mN ≤ 24`.
pub fn optimal_bases(lp: &CompactLp) -> Result<Vec<(Basis, Vec<f64>)>> {
    let (nz, nr) = (lp.nz(), lp.nrows());
    if nr > BRUTE_FORCE_MAX_ROWS {
        return Err(Error::TooLarge(format!("mN = {nr} exceeds {BRUTE_FORCE_MAX_ROWS}")));
    }
    let (feas_tol, _) = tolerances(lp, &SolverSettings::default());
    let g = lp.dense_g();
    let d = lp.d();
    let p = DVector::from_column_slice(lp.p());
    let mut idx: Vec<usize> = (0..nz).collect();
    let mut best = f64::INFINITY;
    let mut ties: Vec<(Vec<usize>, DVector<f64>)> = Vec::new();
    loop {
        let gb = g.select_rows(idx.iter());
        let lu = gb.full_piv_lu();
        let diag = lu.u().diagonal();
        let (umax, umin) = diag
            .iter()
            .fold((0.0f64, f64::INFINITY), |(a, b), v| (a.max(v.abs()), b.min(v.abs())));
        if umax > 0.0 && umin > 1e-12 * umax {
            let db = DVector::from_iterator(nz, idx.iter().map(|&r| d[r]));
            if let Some(z) = lu.solve(&db) {
                let gz = &g * &z;
                if (0..nr).all(|r| gz[r] >= d[r] - feas_tol) {
                    let obj = p.dot(&z);
                    let slack = 1e-9 * (1.0 + obj.abs());
                    if obj < best - slack {
                        best = obj;
                        ties.retain(|(_, zt)| p.dot(zt) <= obj + slack);
                    }
                    if obj <= best + slack {
                        ties.push((idx.clone(), z));
                    }
                }
            }
        }
        if !next_combination(&mut idx, nr) {
            break;
        }
    }
    if ties.is_empty() {
        return Err(Error::Infeasible);
    }
    Ok(ties
        .into_iter()
        .filter(|(rows, _)| {
            let sv = singular_values(&g.select_rows(rows.iter()));
            sv[nz - 1] > 1e-10 * sv[0]
        })
        .map(|(rows, z)| (Basis::new(rows), z.iter().copied().collect()))
        .collect())
}

/// Exhaustive search over all row bases; only for `mN ≤ 24`.
///
/// Among optimal bases the first (in lexicographic row order) whose
/// multipliers `G[B,:]⁻ᵀp` are nonnegative is returned.
pub fn brute_force_solve(lp: &CompactLp) -> Result<PrimalDualSolution> {
    let bases = optimal_bases(lp)?;
    let nr = lp.nrows();
    let p = DVector::from_column_slice(lp.p());
    let mut fallback = None;
    for (basis, z) in bases {
        let gb = basis.matrix(lp);
        let Some(lb) = gb.transpose().lu().solve(&p) else { continue };
        let mut lambda = vec![0.0; nr];
        for (k, &r) in basis.rows().iter().enumerate() {
            lambda[r] = lb[k];
        }
        let dual_feasible = lb.iter().all(|&v| v >= -1e-9 * (1.0 + p.amax()));
        let sol = PrimalDualSolution {
            objective: lp.objective(&z),
            z,
            lambda,
            basis: Some(basis),
            iterations: 0,
        };
        if dual_feasible {
            return Ok(sol);
        }
        fallback.get_or_insert(sol);
    }
    fallback.ok_or(Error::NumericalFailure("no well-conditioned optimal basis".into()))
}
