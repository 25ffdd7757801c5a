//! Sensitivity of basic solutions: conditioning constants `Γ_B, ρ_B`, the
//! stage-wise decay bound, banded powers of `G[B,:]G[B,:]ᵀ`, and Monte-Carlo
//! perturbation experiments.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::lu::factorize;
use crate::linalg::singular_values;
use crate::lp::{basic_solution, optimal_bases, Basis, LpSolver, Start};
use crate::model::{CompactLp, Dims};

/// Singular values below this fraction of the largest mark a basis singular.
pub const SINGULAR_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisConditioning {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub gamma: f64,
    pub rho: f64,
}

impl BasisConditioning {
    /// `Γ = σ̄/σ̲²`, `ρ = (σ̄² - σ̲²)/(σ̄² + σ̲²)`.
    pub fn from_sigmas(sigma_min: f64, sigma_max: f64) -> Self {
        let (lo2, hi2) = (sigma_min * sigma_min, sigma_max * sigma_max);
        BasisConditioning {
            sigma_min,
            sigma_max,
            gamma: sigma_max / lo2,
            rho: (hi2 - lo2) / (hi2 + lo2),
        }
    }

    pub fn bound(&self) -> SensitivityBound {
        SensitivityBound {
            gamma: self.gamma,
            rho: self.rho,
        }
    }
}

/// Coefficients `c_ij = Γ ρ^{(|i-j|-1)₊}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensitivityBound {
    pub gamma: f64,
    pub rho: f64,
}

impl SensitivityBound {
    pub fn coefficient(&self, i: usize, j: usize) -> f64 {
        let dist = i.abs_diff(j).saturating_sub(1);
        self.gamma * self.rho.powi(dist as i32)
    }

    /// `Σ_j c_ij · norms[j]`.
    pub fn apply(&self, i: usize, norms: &[f64]) -> f64 {
        norms.iter().enumerate().map(|(j, v)| self.coefficient(i, j) * v).sum()
    }
}

/// Exact constants from the dense singular values of `G[B,:]`.
pub fn basis_conditioning(lp: &CompactLp, basis: &Basis) -> Result<BasisConditioning> {
    if basis.len() != lp.nz() {
        return Err(Error::DimensionMismatch("basis size".into()));
    }
    let sv = singular_values(&basis.matrix(lp));
    let (hi, lo) = (sv[0], sv[sv.len() - 1]);
    if lo <= SINGULAR_TOL * hi {
        return Err(Error::SingularBasis);
    }
    Ok(BasisConditioning::from_sigmas(lo, hi))
}

/// Power / inverse-power estimates of the extreme singular values for bases
/// too large for the dense SVD. Estimates only: `σ̄` from below, `σ̲` from above.
pub fn basis_conditioning_estimate(lp: &CompactLp, basis: &Basis, iterations: usize) -> Result<BasisConditioning> {
    let nz = lp.nz();
    if basis.len() != nz {
        return Err(Error::DimensionMismatch("basis size".into()));
    }
    let rows: Vec<Vec<(usize, f64)>> = basis.rows().iter().map(|&r| lp.row(r)).collect();
    let cols = lp.columns_of_rows(basis.rows());
    let lu = factorize(nz, &cols).map_err(|_| Error::SingularBasis)?;
    let mul = |z: &[f64]| -> Vec<f64> { rows.iter().map(|row| row.iter().map(|&(j, v)| v * z[j]).sum()).collect() };
    let mul_t = |y: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; nz];
        for (k, row) in rows.iter().enumerate() {
            for &(j, v) in row {
                out[j] += v * y[k];
            }
        }
        out
    };
    let normalize = |v: &mut Vec<f64>| -> f64 {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        n
    };
    let start: Vec<f64> = (0..nz).map(|k| 1.0 + (k % 7) as f64 * 0.1).collect();

    let mut v = start.clone();
    normalize(&mut v);
    let mut hi2 = 0.0;
    for _ in 0..iterations {
        let mut w = mul_t(&mul(&v));
        hi2 = normalize(&mut w);
        v = w;
    }
    let mut v = start;
    normalize(&mut v);
    let mut inv2 = 0.0;
    let (mut b, mut tmp) = (vec![0.0; nz], vec![0.0; nz]);
    for _ in 0..iterations {
        // (GᵀG)⁻¹ v = G⁻¹ G⁻ᵀ v
        b.copy_from_slice(&v);
        lu.btran(&mut b, &mut tmp);
        let mut w = vec![0.0; nz];
        lu.ftran(&mut tmp, &mut w);
        inv2 = normalize(&mut w);
        v = w;
    }
    Ok(BasisConditioning::from_sigmas((1.0 / inv2).sqrt(), hi2.sqrt()))
}

fn stage_norms(v: &[f64], width: usize) -> Vec<f64> {
    v.chunks(width).map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub holds: Vec<bool>,
}

impl BoundReport {
    pub fn all_hold(&self) -> bool {
        self.holds.iter().all(|h| *h)
    }
}

/// Compare `‖z^B_i(d) - z^B_i(d′)‖` with `Σ_j Γ_B ρ_B^{(|i-j|-1)₊}‖d_j - d′_j‖`.
pub fn theorem2_bound_check(
    lp: &CompactLp,
    basis: &Basis,
    d: &[f64],
    d_prime: &[f64],
    tol: f64,
) -> Result<BoundReport> {
    let cond = basis_conditioning(lp, basis)?;
    let z1 = basic_solution(lp, basis, d)?;
    let z2 = basic_solution(lp, basis, d_prime)?;
    let dz: Vec<f64> = z1.iter().zip(&z2).map(|(a, b)| a - b).collect();
    let dd: Vec<f64> = d.iter().zip(d_prime).map(|(a, b)| a - b).collect();
    let lhs = stage_norms(&dz, lp.n());
    let pert = stage_norms(&dd, lp.m());
    let bound = cond.bound();
    let rhs: Vec<f64> = (0..lp.n_stages()).map(|i| bound.apply(i, &pert)).collect();
    let holds = lhs.iter().zip(&rhs).map(|(l, r)| *l <= r + tol).collect();
    Ok(BoundReport { lhs, rhs, holds })
}

/// Largest block ∞-norm of `H_B^k` outside bandwidth `k`, over `k = 1..=k_max`,
/// where `H_B = G[B,:]G[B,:]ᵀ` and blocks follow the stage of each basis row.
pub fn banded_power_violation(lp: &CompactLp, basis: &Basis, k_max: usize) -> f64 {
    let gb = basis.matrix(lp);
    let h = &gb * gb.transpose();
    let stage = basis.stages(lp.m());
    let nb = stage.len();
    let mut power = h.clone();
    let mut worst = 0.0f64;
    for k in 1..=k_max {
        if k > 1 {
            power = &power * &h;
        }
        // Block ∞-norm: max over block rows of the row sum within the block.
        for a in 0..nb {
            let mut sums = std::collections::HashMap::<usize, f64>::new();
            for b in 0..nb {
                if stage[a].abs_diff(stage[b]) > k {
                    *sums.entry(stage[b]).or_default() += power[(a, b)].abs();
                }
            }
            for v in sums.values() {
                worst = worst.max(*v);
            }
        }
    }
    worst
}

/// True iff every block of `H_B^k` with `|i-j| > k` is below `1e-12`, `k ≤ k_max`.
pub fn banded_power_check(lp: &CompactLp, basis: &Basis, k_max: usize) -> bool {
    banded_power_violation(lp, basis, k_max) <= 1e-12
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalConditioning {
    pub sigma_lo: f64,
    pub sigma_hi: f64,
    pub bases: Vec<Basis>,
}

impl GlobalConditioning {
    pub fn conditioning(&self) -> BasisConditioning {
        BasisConditioning::from_sigmas(self.sigma_lo, self.sigma_hi)
    }
}

/// Extreme singular values over every optimal basis of every data sample.
pub fn global_conditioning_bruteforce(lp: &CompactLp, data_samples: &[Vec<f64>]) -> Result<GlobalConditioning> {
    let mut set = BTreeSet::new();
    for d in data_samples {
        for (b, _) in optimal_bases(&lp.with_data(d.clone()))? {
            set.insert(b);
        }
    }
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for b in &set {
        let c = basis_conditioning(lp, b)?;
        lo = lo.min(c.sigma_min);
        hi = hi.max(c.sigma_max);
    }
    Ok(GlobalConditioning {
        sigma_lo: lo,
        sigma_hi: hi,
        bases: set.into_iter().collect(),
    })
}

/// Right-hand side of the coarsening error bound at stage `i`:
/// `Σ_{j∉S} Γ Δ ρ^{(|i-j|-1)₊}`.
pub fn coarsening_error_bound(cond: &BasisConditioning, delta: f64, free: &[usize], n_stages: usize, i: usize) -> f64 {
    let b = cond.bound();
    (0..n_stages)
        .filter(|j| free.binary_search(j).is_err())
        .map(|j| b.coefficient(i, j) * delta)
        .sum()
}

/// Standard deviation of the noise added to one algebraic data channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSigma {
    /// 1-based index into `w`.
    pub channel: usize,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationExperimentSpec {
    /// 1-based inclusive stage range.
    pub window: (usize, usize),
    pub channels: Vec<ChannelSigma>,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub z: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub window: (usize, usize),
    pub reference: Vec<f64>,
    pub samples: Vec<Sample>,
    pub discarded: usize,
    pub n: usize,
}

impl ExperimentResult {
    /// Mean over samples of `‖z_i - z_i^ref‖` for every stage `i`.
    pub fn stage_dispersion(&self) -> Vec<f64> {
        let n_st = self.reference.len() / self.n;
        let mut acc = vec![0.0; n_st];
        for s in &self.samples {
            for (i, a) in acc.iter_mut().enumerate() {
                let d: f64 = (i * self.n..(i + 1) * self.n)
                    .map(|k| (s.z[k] - self.reference[k]).powi(2))
                    .sum();
                *a += d.sqrt();
            }
        }
        let count = self.samples.len().max(1) as f64;
        acc.iter().map(|v| v / count).collect()
    }

    /// Mean `‖z₁(d+δ) - z₁(d)‖`.
    pub fn first_stage_dispersion(&self) -> f64 {
        self.stage_dispersion()[0]
    }
}

/// Row offsets (within a stage) of the `+w` and `-w` rows of a channel.
fn channel_rows(dims: Dims, channel: usize) -> Result<(usize, usize)> {
    if channel == 0 || channel > dims.nw {
        return Err(Error::InvalidConfig(format!("channel w[{channel}] outside 1..={}", dims.nw)));
    }
    let lay = dims.layout();
    Ok((lay.alg_pos(channel - 1), lay.alg_neg(channel - 1)))
}

/// Data with Gaussian noise on the chosen channels inside the window, both
/// rows of each `±w` pair moved together. Sample `id` draws from its own
/// stream derived from `(seed, id)`.
pub fn perturbed_data(lp: &CompactLp, dims: Dims, spec: &PerturbationExperimentSpec, id: usize) -> Result<Vec<f64>> {
    let (lo, hi) = spec.window;
    if lo == 0 || hi < lo || hi > lp.n_stages() {
        return Err(Error::InvalidConfig(format!("window {lo}..={hi} outside horizon")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(id as u64);
    let m = lp.m();
    let mut d = lp.d().to_vec();
    for j in lo - 1..hi {
        for ch in &spec.channels {
            let (pos, neg) = channel_rows(dims, ch.channel)?;
            let delta = if ch.sigma > 0.0 {
                Normal::new(0.0, ch.sigma)
                    .map_err(|e| Error::InvalidConfig(e.to_string()))?
                    .sample(&mut rng)
            } else {
                0.0
            };
            d[j * m + pos] += delta;
            d[j * m + neg] -= delta;
        }
    }
    Ok(d)
}

/// Solve `P(d + δ)` for every sample; infeasible samples are counted and dropped.
pub fn perturbation_experiment(lp: &CompactLp, dims: Dims, spec: &PerturbationExperimentSpec) -> Result<ExperimentResult> {
    let mut solver = LpSolver::new();
    let reference = solver.solve(lp)?;
    let start = reference
        .basis
        .as_ref()
        .map_or(Start::Cold, |b| Start::Rows(b.rows().to_vec()));
    let data: Vec<Vec<f64>> = (0..spec.samples)
        .map(|id| perturbed_data(lp, dims, spec, id))
        .collect::<Result<_>>()?;
    let results: Vec<Result<Option<Sample>>> = data
        .into_par_iter()
        .enumerate()
        .map_init(LpSolver::new, |solver, (id, d)| {
            match solver.solve_from(&lp.with_data(d), &start) {
                Ok(sol) => Ok(Some(Sample { id, z: sol.z })),
                Err(Error::Infeasible) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut samples = Vec::with_capacity(spec.samples);
    let mut discarded = 0;
    for r in results {
        match r? {
            Some(s) => samples.push(s),
            None => discarded += 1,
        }
    }
    Ok(ExperimentResult {
        window: spec.window,
        reference: reference.z,
        samples,
        discarded,
        n: lp.n(),
    })
}

/// Dense `G[B,:]⁻¹`, for small bases.
pub fn basis_inverse(lp: &CompactLp, basis: &Basis) -> Result<DMatrix<f64>> {
    basis.matrix(lp).try_inverse().ok_or(Error::SingularBasis)
}

/// Stage blocks of a vector.
pub fn stage_block(v: &DVector<f64>, i: usize, width: usize) -> DVector<f64> {
    v.rows(i * width, width).into_owned()
}
