//! Time-domain aggregation of a compact LP around a primal-dual prior.
//!
//! A grid `1 = M₁ < … < M_K ≤ N` splits the horizon into blocks of lengths
//! `L_k`. Block `k` of `T` (resp. `U`) is `L_k^{-1/2}` times a stack of `L_k`
//! identities of size `n` (resp. `m`); both operators stay implicit.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::PrimalDualSolution;
use crate::model::CompactLp;

/// Dual entries at most this large count as zero when detecting free stages.
pub const FREE_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Equal,
    #[serde(rename = "fts")]
    FullThenSparse,
    Diffusing,
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equal" => Ok(Strategy::Equal),
            "fts" => Ok(Strategy::FullThenSparse),
            "diffusing" => Ok(Strategy::Diffusing),
            other => Err(Error::InvalidGrid(format!("unknown strategy `{other}`"))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Equal => "equal",
            Strategy::FullThenSparse => "fts",
            Strategy::Diffusing => "diffusing",
        })
    }
}

/// Grid points `M₁..M_K`, 1-based as in the usual notation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoarseGrid {
    points: Vec<usize>,
    horizon: usize,
}

impl CoarseGrid {
    pub fn new(points: Vec<usize>, horizon: usize) -> Result<Self> {
        if points.first() != Some(&1) {
            return Err(Error::InvalidGrid("first point must be 1".into()));
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidGrid(format!("points not strictly increasing: {points:?}")));
        }
        if *points.last().unwrap() > horizon {
            return Err(Error::InvalidGrid(format!("point beyond horizon {horizon}")));
        }
        Ok(CoarseGrid { points, horizon })
    }

    pub fn identity(horizon: usize) -> Self {
        CoarseGrid {
            points: (1..=horizon).collect(),
            horizon,
        }
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn k(&self) -> usize {
        self.points.len()
    }

    /// 0-based stage ranges of the blocks.
    pub fn blocks(&self) -> Vec<Range<usize>> {
        (0..self.k())
            .map(|k| {
                let end = self.points.get(k + 1).copied().unwrap_or(self.horizon + 1);
                self.points[k] - 1..end - 1
            })
            .collect()
    }

    pub fn lens(&self) -> Vec<usize> {
        self.blocks().iter().map(|b| b.len()).collect()
    }

    pub fn is_identity(&self) -> bool {
        self.k() == self.horizon
    }
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::InvalidGrid(format!("need 1 ≤ K ≤ N, got K={k}, N={n}")));
    }
    Ok(())
}

/// `M_k = ⌊N(k-1)/K + 1⌋`.
pub fn grid_equal_spacing(n: usize, k: usize) -> Result<CoarseGrid> {
    check_k(n, k)?;
    CoarseGrid::new((1..=k).map(|i| n * (i - 1) / k + 1).collect(), n)
}

/// `M_k = k`.
pub fn grid_full_then_sparse(n: usize, k: usize) -> Result<CoarseGrid> {
    check_k(n, k)?;
    CoarseGrid::new((1..=k).collect(), n)
}

/// Largest `c` with `c^q ≤ a^p`, i.e. `⌊a^{p/q}⌋` computed exactly.
fn floor_rational_power(a: usize, p: usize, q: usize) -> usize {
    let target = BigUint::from(a).pow(p as u32);
    let fits = |c: usize| BigUint::from(c).pow(q as u32) <= target;
    let mut c = ((a as f64).ln() * p as f64 / q as f64).exp().floor() as usize;
    while c > 0 && !fits(c) {
        c -= 1;
    }
    while fits(c + 1) {
        c += 1;
    }
    c
}

/// `M_k = max{k, ⌊(N+1)^{(k-1)/K}⌋}`.
pub fn grid_diffusing(n: usize, k: usize) -> Result<CoarseGrid> {
    check_k(n, k)?;
    CoarseGrid::new(
        (1..=k).map(|i| i.max(floor_rational_power(n + 1, i - 1, k))).collect(),
        n,
    )
}

pub fn grid(strategy: Strategy, n: usize, k: usize) -> Result<CoarseGrid> {
    match strategy {
        Strategy::Equal => grid_equal_spacing(n, k),
        Strategy::FullThenSparse => grid_full_then_sparse(n, k),
        Strategy::Diffusing => grid_diffusing(n, k),
    }
}

/// Grid with `M₁ = 1, M₂ = 2` so the first stage is never aggregated.
///
/// If the plain strategy grid already starts `1, 2` it is returned as is;
/// otherwise the strategy is applied to stages `2..N` with `K-1` points.
pub fn grid_feasibility_guard(strategy: Strategy, n: usize, k: usize) -> Result<CoarseGrid> {
    grid_leading_singletons(strategy, n, k, 1)
}

/// Grid whose first `s` stages are singleton blocks; the strategy covers the
/// remaining stages with the remaining points. Plain grids that already
/// start `1, 2, .., s+1` are returned unchanged.
pub fn grid_leading_singletons(strategy: Strategy, n: usize, k: usize, s: usize) -> Result<CoarseGrid> {
    if k < s + 1 {
        return Err(Error::InvalidGrid(format!("{s} leading singletons need K ≥ {}", s + 1)));
    }
    check_k(n, k)?;
    let plain = grid(strategy, n, k)?;
    if plain.points[..=s].iter().enumerate().all(|(i, &p)| p == i + 1) {
        return Ok(plain);
    }
    let tail = grid(strategy, n - s, k - s)?;
    let mut points: Vec<usize> = (1..=s).collect();
    points.extend(tail.points.iter().map(|p| p + s));
    CoarseGrid::new(points, n)
}

/// Implicit `T` (`nN × nK`) and `U` (`mN × mK`).
#[derive(Clone, Debug, PartialEq)]
pub struct CoarseningOperators {
    pub grid: CoarseGrid,
    pub n: usize,
    pub m: usize,
    blocks: Vec<Range<usize>>,
    scale: Vec<f64>,
}

impl CoarseningOperators {
    pub fn new(grid: CoarseGrid, n: usize, m: usize) -> Self {
        let blocks = grid.blocks();
        let scale = blocks.iter().map(|b| 1.0 / (b.len() as f64).sqrt()).collect();
        CoarseningOperators {
            grid,
            n,
            m,
            blocks,
            scale,
        }
    }

    fn expand(&self, coarse: &[f64], w: usize) -> Vec<f64> {
        let mut out = vec![0.0; w * self.grid.horizon()];
        for (k, b) in self.blocks.iter().enumerate() {
            for i in b.clone() {
                for c in 0..w {
                    out[i * w + c] = self.scale[k] * coarse[k * w + c];
                }
            }
        }
        out
    }

    fn aggregate(&self, fine: &[f64], w: usize) -> Vec<f64> {
        let mut out = vec![0.0; w * self.grid.k()];
        for (k, b) in self.blocks.iter().enumerate() {
            for c in 0..w {
                let s: f64 = b.clone().map(|i| fine[i * w + c]).sum();
                out[k * w + c] = self.scale[k] * s;
            }
        }
        out
    }

    /// `T z̃`.
    pub fn apply_t(&self, zt: &[f64]) -> Vec<f64> {
        self.expand(zt, self.n)
    }
    /// `Tᵀ z`.
    pub fn apply_tt(&self, z: &[f64]) -> Vec<f64> {
        self.aggregate(z, self.n)
    }
    /// `U λ̃`.
    pub fn apply_u(&self, lt: &[f64]) -> Vec<f64> {
        self.expand(lt, self.m)
    }
    /// `Uᵀ λ`.
    pub fn apply_ut(&self, l: &[f64]) -> Vec<f64> {
        self.aggregate(l, self.m)
    }

    fn dense(&self, w: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(w * self.grid.horizon(), w * self.grid.k());
        for (k, b) in self.blocks.iter().enumerate() {
            for i in b.clone() {
                for c in 0..w {
                    out[(i * w + c, k * w + c)] = self.scale[k];
                }
            }
        }
        out
    }

    pub fn dense_t(&self) -> DMatrix<f64> {
        self.dense(self.n)
    }

    pub fn dense_u(&self) -> DMatrix<f64> {
        self.dense(self.m)
    }
}

/// Primal-dual prior guess `(z°, λ°)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Prior {
    pub z_o: Vec<f64>,
    pub lambda_o: Vec<f64>,
}

impl Prior {
    pub fn zero(lp: &CompactLp) -> Self {
        Prior {
            z_o: vec![0.0; lp.nz()],
            lambda_o: vec![0.0; lp.nrows()],
        }
    }

    pub fn from_solution(sol: &PrimalDualSolution) -> Self {
        Prior {
            z_o: sol.z.clone(),
            lambda_o: sol.lambda.clone(),
        }
    }

    /// Prior for the problem advanced by one stage: drop the first stage and
    /// repeat the last.
    pub fn shifted(&self, n: usize, m: usize) -> Self {
        fn shift(v: &[f64], w: usize) -> Vec<f64> {
            if v.len() <= w {
                return v.to_vec();
            }
            let mut out = v[w..].to_vec();
            out.extend_from_slice(&v[v.len() - w..]);
            out
        }
        Prior {
            z_o: shift(&self.z_o, n),
            lambda_o: shift(&self.lambda_o, m),
        }
    }
}

/// Coarse LP with `K` stages and its provenance.
#[derive(Clone, Debug)]
pub struct CoarseLp {
    pub lp: CompactLp,
    pub ops: CoarseningOperators,
    pub prior: Prior,
}

/// Build the coarse problem `min p̃ᵀz̃ s.t. G̃z̃ ≥ d̃` with
/// `p̃ = Tᵀ(p - Gᵀλ°)`, `d̃ = Uᵀ(d - Gz°)`, `G̃ = UᵀGT`.
pub fn coarsen(lp: &CompactLp, grid: &CoarseGrid, prior: &Prior) -> Result<CoarseLp> {
    if grid.horizon() != lp.n_stages() {
        return Err(Error::DimensionMismatch(format!(
            "grid horizon {} vs {} stages",
            grid.horizon(),
            lp.n_stages()
        )));
    }
    if prior.z_o.len() != lp.nz() || prior.lambda_o.len() != lp.nrows() {
        return Err(Error::DimensionMismatch("prior length".into()));
    }
    let (n, m) = (lp.n(), lp.m());
    let ops = CoarseningOperators::new(grid.clone(), n, m);
    let gtl = lp.mul_gt(&prior.lambda_o);
    let reduced: Vec<f64> = lp.p().iter().zip(&gtl).map(|(p, g)| p - g).collect();
    let gz = lp.mul_g(&prior.z_o);
    let resid: Vec<f64> = lp.d().iter().zip(&gz).map(|(d, g)| d - g).collect();
    let pt = ops.apply_tt(&reduced);
    let dt = ops.apply_ut(&resid);

    let mut g_diag = Vec::with_capacity(grid.k());
    let mut g_sub = Vec::with_capacity(grid.k() - 1);
    for (k, b) in ops.blocks.iter().enumerate() {
        let mut acc = DMatrix::<f64>::zeros(m, n);
        for i in b.clone() {
            acc += lp.diag(i);
            if i > b.start {
                acc += lp.sub(i).unwrap();
            }
        }
        let s = ops.scale[k];
        g_diag.push(acc * (s * s));
        if k > 0 {
            g_sub.push(lp.sub(b.start).unwrap() * (s * ops.scale[k - 1]));
        }
    }
    let coarse = CompactLp::new(n, m, pt, dt, g_diag, g_sub)?;
    Ok(CoarseLp {
        lp: coarse,
        ops,
        prior: prior.clone(),
    })
}

/// `z′ = z° + Tz̃*`, `λ′ = λ° + Uλ̃*`.
pub fn project(
    coarse_sol: &PrimalDualSolution,
    prior: &Prior,
    ops: &CoarseningOperators,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if coarse_sol.z.len() != ops.n * ops.grid.k() || coarse_sol.lambda.len() != ops.m * ops.grid.k() {
        return Err(Error::DimensionMismatch("coarse solution size".into()));
    }
    if prior.z_o.len() != ops.n * ops.grid.horizon() {
        return Err(Error::DimensionMismatch("prior length".into()));
    }
    let tz = ops.apply_t(&coarse_sol.z);
    let ul = ops.apply_u(&coarse_sol.lambda);
    Ok((
        prior.z_o.iter().zip(&tz).map(|(a, b)| a + b).collect(),
        prior.lambda_o.iter().zip(&ul).map(|(a, b)| a + b).collect(),
    ))
}

/// Free coarse blocks `S̃` and free stages `S` (both 0-based): singleton
/// blocks whose prior duals vanish (`|λ°| ≤ tol`).
pub fn free_variables(grid: &CoarseGrid, prior: &Prior, tol: f64) -> (Vec<usize>, Vec<usize>) {
    let m = prior.lambda_o.len() / grid.horizon();
    let mut s_coarse = Vec::new();
    let mut s_fine = Vec::new();
    for (k, b) in grid.blocks().iter().enumerate() {
        if b.len() != 1 {
            continue;
        }
        let i = b.start;
        if prior.lambda_o[i * m..(i + 1) * m].iter().all(|l| l.abs() <= tol) {
            s_coarse.push(k);
            s_fine.push(i);
        }
    }
    (s_coarse, s_fine)
}

/// Data `d′` for which the projected solution is optimal: free stages keep
/// their data, every other stage is pinned to `Gz′`.
pub fn induced_perturbation(lp: &CompactLp, z_proj: &[f64], free: &[usize]) -> Vec<f64> {
    let m = lp.m();
    let mut out = lp.d().to_vec();
    for i in 0..lp.n_stages() {
        if free.binary_search(&i).is_ok() {
            continue;
        }
        let gz = lp.stage_product(z_proj, i);
        out[i * m..(i + 1) * m].copy_from_slice(gz.as_slice());
    }
    out
}

fn stage_residuals(lp: &CompactLp, z: &[f64], stages: impl Iterator<Item = usize>) -> f64 {
    let m = lp.m();
    let d = lp.d();
    stages
        .map(|j| {
            let gz = lp.stage_product(z, j);
            (DVector::from_column_slice(&d[j * m..(j + 1) * m]) - gz).norm()
        })
        .fold(0.0, f64::max)
}

/// `Δ̂ = max_{j∉S} ‖d_j - (Gz′)_j‖`, evaluated at the projected point only,
/// hence a lower bound on the worst case over all projected coarse points.
/// Returns 0 when every stage is free.
pub fn delta_estimate(lp: &CompactLp, grid: &CoarseGrid, prior: &Prior, z_proj: &[f64]) -> f64 {
    let (_, free) = free_variables(grid, prior, FREE_TOL);
    stage_residuals(
        lp,
        z_proj,
        (0..lp.n_stages()).filter(|j| free.binary_search(j).is_err()),
    )
}

/// Largest number of candidate vertices [`delta_exact`] will enumerate.
pub const VERTEX_ENUMERATION_CAP: u64 = 2_000_000;

fn binomial(n: usize, k: usize) -> u64 {
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

/// Worst stage residual `max_j ‖d_j - (Gz′)_j‖` over all projected points
/// `z′ = z° + Tz̃` with `G̃z̃ ≥ d̃`, by enumerating the coarse vertices.
///
/// The maximand is convex, so the maximum sits at a vertex. Only for coarse
/// problems with at most 12 variables.
pub fn delta_exact(lp: &CompactLp, coarse: &CoarseLp) -> Result<f64> {
    let c = &coarse.lp;
    let (nz, nr) = (c.nz(), c.nrows());
    if nz > 12 || binomial(nr, nz) > VERTEX_ENUMERATION_CAP {
        return Err(Error::TooLarge(format!("{nz} coarse variables, {nr} rows")));
    }
    let g = c.dense_g();
    let d = c.d();
    let tol = 1e-9 * (1.0 + d.iter().fold(0.0f64, |a, v| a.max(v.abs())));
    let mut idx: Vec<usize> = (0..nz).collect();
    let mut best: Option<f64> = None;
    loop {
        let gb = g.select_rows(idx.iter());
        let lu = gb.full_piv_lu();
        let diag = lu.u().diagonal();
        let (umax, umin) = diag.iter().fold((0.0f64, f64::INFINITY), |(a, b), v| (a.max(v.abs()), b.min(v.abs())));
        if umax > 0.0 && umin > 1e-12 * umax {
            let db = DVector::from_iterator(nz, idx.iter().map(|&r| d[r]));
            if let Some(zt) = lu.solve(&db) {
                let gz = &g * &zt;
                if (0..nr).all(|r| gz[r] >= d[r] - tol) {
                    let tz = coarse.ops.apply_t(zt.as_slice());
                    let zp: Vec<f64> = coarse.prior.z_o.iter().zip(&tz).map(|(a, b)| a + b).collect();
                    let v = stage_residuals(lp, &zp, 0..lp.n_stages());
                    best = Some(best.map_or(v, |b: f64| b.max(v)));
                }
            }
        }
        let mut i = nz;
        let mut advanced = false;
        while i > 0 {
            i -= 1;
            if idx[i] < nr - nz + i {
                idx[i] += 1;
                for j in i + 1..nz {
                    idx[j] = idx[j - 1] + 1;
                }
                advanced = true;
                break;
            }
        }
        if !advanced {
            break;
        }
    }
    best.ok_or(Error::Infeasible)
}
