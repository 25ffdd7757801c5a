//! Random feasible MPC instances for property sweeps.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::model::{Dims, MpcProblem, StageSpec};

#[derive(Clone, Copy, Debug)]
pub struct RandomSpec {
    pub dims: Dims,
    pub horizon: usize,
}

fn uniform_vec<R: Rng>(rng: &mut R, len: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.gen_range(lo..hi))
}

fn uniform_mat<R: Rng>(rng: &mut R, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-scale..scale))
}

/// Draw a problem together with a trajectory that is feasible for it.
///
/// The trajectory is drawn first inside the bounds; `v` and `w` are then chosen
/// so that the dynamics and algebraic rows hold with equality.
pub fn random_feasible_problem<R: Rng>(rng: &mut R, spec: RandomSpec) -> (MpcProblem, Vec<f64>) {
    let Dims { nx, nu, nw } = spec.dims;
    let a = uniform_mat(rng, nx, nx, 0.9);
    let b = uniform_mat(rng, nx, nu, 1.0);
    let e = uniform_mat(rng, nw, nx, 1.0);
    let f = uniform_mat(rng, nw, nu, 1.0);
    let x_lo = uniform_vec(rng, nx, -3.0, -1.0);
    let x_hi = uniform_vec(rng, nx, 1.0, 3.0);
    let u_lo = uniform_vec(rng, nu, -3.0, -1.0);
    let u_hi = uniform_vec(rng, nu, 1.0, 3.0);

    let mut xs = Vec::with_capacity(spec.horizon);
    let mut us = Vec::with_capacity(spec.horizon);
    for _ in 0..spec.horizon {
        xs.push(DVector::from_fn(nx, |k, _| rng.gen_range(x_lo[k]..x_hi[k])));
        us.push(DVector::from_fn(nu, |k, _| rng.gen_range(u_lo[k]..u_hi[k])));
    }
    let mut stages = Vec::with_capacity(spec.horizon);
    for i in 0..spec.horizon {
        let v = if i == 0 {
            xs[0].clone()
        } else {
            &xs[i] - &a * &xs[i - 1] - &b * &us[i - 1]
        };
        stages.push(StageSpec {
            a: a.clone(),
            b: b.clone(),
            e: e.clone(),
            f: f.clone(),
            q: uniform_vec(rng, nx, -1.0, 1.0),
            r: uniform_vec(rng, nu, -1.0, 1.0),
            v,
            w: &e * &xs[i] + &f * &us[i],
            x_lo: x_lo.clone(),
            x_hi: x_hi.clone(),
            u_lo: u_lo.clone(),
            u_hi: u_hi.clone(),
        });
    }
    let mut z = Vec::with_capacity((nx + nu) * spec.horizon);
    for (x, u) in xs.iter().zip(&us) {
        z.extend(x.iter());
        z.extend(u.iter());
    }
    (MpcProblem::new(stages).expect("generated stages are well formed"), z)
}
