use dhmpc::model::{check_admissible, stage_dims, CompactLp, Dims, MpcProblem, StageSpec};
use dhmpc::synth::{random_feasible_problem, RandomSpec};
use dhmpc::Error;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn stage_dimensions() {
    assert_eq!(stage_dims(2, 14, 6), (16, 48));
    assert_eq!(stage_dims(1, 0, 0), (1, 4));
    assert_eq!(stage_dims(3, 2, 1), (5, 18));
    assert_eq!(Dims::new(3, 2, 1).m(), 18);
}

#[test]
fn single_stage_row_order() {
    let mut s = StageSpec::zeros(Dims::new(1, 1, 1));
    s.v[0] = 0.5;
    s.w[0] = 0.25;
    s.e[(0, 0)] = 2.0;
    s.f[(0, 0)] = 3.0;
    s.x_lo[0] = -1.0;
    s.x_hi[0] = 4.0;
    s.u_lo[0] = -2.0;
    s.u_hi[0] = 5.0;
    let lp = MpcProblem::new(vec![s]).unwrap().to_compact();
    assert_eq!(lp.d(), &[0.5, -0.5, 0.25, -0.25, -1.0, -4.0, -2.0, -5.0]);
    let g = lp.diag(0);
    let rows: Vec<Vec<f64>> = (0..8).map(|r| g.row(r).iter().copied().collect()).collect();
    assert_eq!(
        rows,
        vec![
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![2.0, 3.0],
            vec![-2.0, -3.0],
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, -1.0]
        ]
    );
    assert!(lp.sub(0).is_none());
}

fn random_problem(seed: u64, dims: Dims, horizon: usize) -> MpcProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_feasible_problem(&mut rng, RandomSpec { dims, horizon }).0
}

#[test]
fn dynamics_rows_lead_each_block() {
    let p = random_problem(1, Dims::new(3, 2, 2), 4);
    let lp = p.to_compact();
    for i in 0..4 {
        let g = lp.diag(i);
        assert_eq!(g.view((0, 0), (3, 3)), DMatrix::<f64>::identity(3, 3));
        assert!(g.view((0, 3), (3, 2)).iter().all(|v| *v == 0.0));
    }
    let dense = lp.dense_g();
    let (n, m) = (lp.n(), lp.m());
    for i in 0..4 {
        for j in 0..4 {
            if i != j && i != j + 1 {
                assert!(dense.view((i * m, j * n), (m, n)).iter().all(|v| *v == 0.0));
            }
        }
    }
}

// Independent evaluation of the stage-wise constraints.
fn direct_feasible(p: &MpcProblem, xs: &[DVector<f64>], us: &[DVector<f64>], tol: f64) -> bool {
    let st = p.stages();
    for i in 0..st.len() {
        let s = &st[i];
        let pred = if i == 0 {
            s.v.clone()
        } else {
            &st[i - 1].a * &xs[i - 1] + &st[i - 1].b * &us[i - 1] + &s.v
        };
        if (&xs[i] - pred).amax() > tol {
            return false;
        }
        if (&s.e * &xs[i] + &s.f * &us[i] - &s.w).amax() > tol {
            return false;
        }
        for k in 0..xs[i].len() {
            if xs[i][k] < s.x_lo[k] - tol || xs[i][k] > s.x_hi[k] + tol {
                return false;
            }
        }
        for k in 0..us[i].len() {
            if us[i][k] < s.u_lo[k] - tol || us[i][k] > s.u_hi[k] + tol {
                return false;
            }
        }
    }
    true
}

#[test]
fn compact_feasibility_matches_direct_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let dims = Dims::new(2, 2, 1);
    let (p, z_feas) = random_feasible_problem(&mut rng, RandomSpec { dims, horizon: 3 });
    let lp = p.to_compact();
    let tol = 1e-9;
    let mut agree_true = 0;
    for trial in 0..100 {
        let z: Vec<f64> = if trial % 2 == 0 {
            z_feas.clone()
        } else {
            z_feas.iter().map(|v| v + rng.gen_range(-0.5..0.5) * (trial % 3) as f64).collect()
        };
        let (xs, us) = p.trajectory(&z);
        let compact = lp.mul_g(&z).iter().zip(lp.d()).all(|(a, b)| *a >= b - tol);
        assert_eq!(compact, direct_feasible(&p, &xs, &us, tol), "trial {trial}");
        agree_true += compact as usize;
    }
    assert!(agree_true >= 50);
}

#[test]
fn objective_round_trip() {
    for seed in 0..20 {
        let p = random_problem(seed, Dims::new(2, 3, 1), 5);
        let lp = p.to_compact();
        let sol = dhmpc::lp::solve(&lp).unwrap();
        let (xs, us) = p.trajectory(&sol.z);
        let direct = p.objective(&xs, &us);
        assert!((direct - sol.objective).abs() <= 1e-10 * (1.0 + direct.abs()));
    }
}

fn one_stage(v: f64) -> CompactLp {
    let mut s = StageSpec::zeros(Dims::new(1, 0, 0));
    s.x_lo[0] = 0.0;
    s.x_hi[0] = 1.0;
    s.v[0] = v;
    MpcProblem::new(vec![s]).unwrap().to_compact()
}

#[test]
fn admissibility_examples() {
    let ok = check_admissible(&one_stage(0.5), 1e-9);
    assert!(ok.feasible);
    assert!((ok.certificate.unwrap()[0] - 0.5).abs() < 1e-12);
    let bad = check_admissible(&one_stage(2.0), 1e-9);
    assert!(!bad.feasible);
    assert!(bad.certificate.is_none());
}

#[test]
fn admissible_data_is_convex() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (p, _) = random_feasible_problem(&mut rng, RandomSpec { dims: Dims::new(2, 2, 1), horizon: 4 });
    let lp = p.to_compact();
    let (xs, us) = p.trajectory(&dhmpc::lp::solve(&lp).unwrap().z);
    let mut checked = 0;
    for _ in 0..10 {
        // A second admissible data vector built around a shifted state trajectory.
        let shift = rng.gen_range(-0.3..0.3);
        let mut stages = p.stages().to_vec();
        for (i, s) in stages.iter_mut().enumerate() {
            let x = DVector::from_fn(xs[i].len(), |k, _| (xs[i][k] + shift).clamp(s.x_lo[k], s.x_hi[k]));
            s.w = &s.e * &x + &s.f * &us[i];
            if i == 0 {
                s.v = x;
            }
        }
        let lp2 = MpcProblem::new(stages).unwrap().to_compact();
        if !check_admissible(&lp2, 1e-8).feasible {
            continue;
        }
        checked += 1;
        for t in [0.25, 0.5, 0.75] {
            let mix: Vec<f64> = lp.d().iter().zip(lp2.d()).map(|(a, b)| (1.0 - t) * a + t * b).collect();
            assert!(check_admissible(&lp.with_data(mix), 1e-8).feasible);
        }
    }
    assert!(checked > 0);
}

#[test]
fn json_round_trip() {
    let p = random_problem(3, Dims::new(2, 2, 1), 4);
    let text = p.to_json_string().unwrap();
    let back = MpcProblem::from_json_str(&text).unwrap();
    assert_eq!(back, p);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("inst.json");
    p.write_json(&path).unwrap();
    assert_eq!(MpcProblem::read_json(&path).unwrap(), p);
}

#[test]
fn invalid_problems_rejected() {
    assert!(MpcProblem::new(vec![]).is_err());
    let mut s = StageSpec::zeros(Dims::new(1, 1, 0));
    s.x_hi[0] = f64::INFINITY;
    assert!(matches!(MpcProblem::new(vec![s]), Err(Error::InvalidBounds(_))));
    let mut s = StageSpec::zeros(Dims::new(1, 1, 0));
    s.u_lo[0] = 2.0;
    assert!(matches!(MpcProblem::new(vec![s]), Err(Error::InvalidBounds(_))));
    let a = StageSpec::zeros(Dims::new(1, 1, 0));
    let b = StageSpec::zeros(Dims::new(2, 1, 0));
    assert!(matches!(MpcProblem::new(vec![a, b]), Err(Error::DimensionMismatch(_))));
    let bad = r#"{"dims":{"nx":1,"nu":1,"nw":0,"N":1},"time_invariant":{"A":[[1,2]],"B":[[1]],"E":[],"F":[],"q":[0],"r":[0],"x_lo":[0],"x_hi":[1],"u_lo":[0],"u_hi":[1]}}"#;
    assert!(MpcProblem::from_json_str(bad).is_err());
}
