use dhmpc::closed_loop::{
    compare_schemes, run_closed_loop, step_plant, ControllerConfig, ForecastNoise, PriorPolicy, Scheme,
};
use dhmpc::hvac::{generate_instance, HvacConfig, Scenario};
use dhmpc::lp::solve;
use dhmpc::model::{Dims, StageSpec};
use dhmpc::Error;
use nalgebra::{DMatrix, DVector};

const N: usize = 36;
const NSIM: usize = 24;

fn scenario(seed: u64) -> Scenario {
    let cfg = HvacConfig {
        horizon: N,
        n_sim: NSIM,
        seed,
        ..HvacConfig::default()
    };
    generate_instance(&cfg).unwrap().1
}

#[test]
fn plant_step_trivial_cases() {
    let mut s = StageSpec::zeros(Dims::new(2, 2, 0));
    s.a = DMatrix::identity(2, 2);
    let x = DVector::from_vec(vec![1.0, -2.0]);
    let u = DVector::from_vec(vec![3.0, 4.0]);
    assert_eq!(step_plant(&x, &u, &s, &DVector::zeros(2)).unwrap(), x);
    s.a = DMatrix::zeros(2, 2);
    s.b = DMatrix::identity(2, 2);
    assert_eq!(step_plant(&x, &u, &s, &DVector::zeros(2)).unwrap(), u);
    assert!(step_plant(&x, &DVector::zeros(3), &s, &DVector::zeros(2)).is_err());
}

#[test]
fn one_step_matches_open_loop() {
    let sc = scenario(2);
    let tr = run_closed_loop(&sc, &ControllerConfig::full(), N, 1).unwrap();
    let p = sc.window(0, N, &sc.x0).unwrap();
    let sol = solve(&p.to_compact()).unwrap();
    let s0 = &p.stages()[0];
    let first: f64 = (0..2).map(|k| s0.q[k] * sol.z[k]).sum::<f64>()
        + (0..14).map(|k| s0.r[k] * sol.z[2 + k]).sum::<f64>();
    assert!((tr.total_cost() - first).abs() <= 1e-9 * (1.0 + first.abs()));
    assert_eq!(tr.steps.len(), 1);
}

#[test]
fn identity_coarsening_reproduces_full() {
    let sc = scenario(4);
    let full = run_closed_loop(&sc, &ControllerConfig::full(), N, NSIM).unwrap();
    for scheme in [Scheme::Diffusing, Scheme::Equal, Scheme::Fts] {
        let id = run_closed_loop(&sc, &ControllerConfig::new(scheme, N), N, NSIM).unwrap();
        for (a, b) in full.steps.iter().zip(&id.steps) {
            let diff = a.u.iter().zip(&b.u).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(diff <= 1e-7, "{scheme} step {}: {diff}", a.step);
        }
    }
}

#[test]
fn trace_invariants() {
    let sc = scenario(5);
    for cfg in [
        ControllerConfig::full(),
        ControllerConfig::new(Scheme::Diffusing, 8),
        ControllerConfig::new(Scheme::Equal, 8),
        ControllerConfig::new(Scheme::Fts, 8),
        ControllerConfig {
            prior: PriorPolicy::ShiftedPrevious,
            ..ControllerConfig::new(Scheme::Diffusing, 8)
        },
    ] {
        let tr = run_closed_loop(&sc, &cfg, N, NSIM).unwrap_or_else(|e| panic!("{}: {e:?}", cfg.label()));
        let mut cum = 0.0;
        for (k, s) in tr.steps.iter().enumerate() {
            let st = &sc.stages[k];
            let x = DVector::from_column_slice(&s.x);
            let u = DVector::from_column_slice(&s.u);
            let next = &st.a * &x + &st.b * &u + &sc.stages[k + 1].v;
            assert!(next.iter().zip(&s.x_next).all(|(a, b)| (a - b).abs() <= 1e-10));
            if k + 1 < tr.steps.len() {
                assert_eq!(tr.steps[k + 1].x, s.x_next);
            }
            assert!(s.stage1_violation <= 1e-8, "{} step {k}: {}", cfg.label(), s.stage1_violation);
            cum += st.q.dot(&x) + st.r.dot(&u);
            assert!((cum - s.cost_cum).abs() <= 1e-9 * (1.0 + cum.abs()));
        }
    }
}

#[test]
fn runs_are_deterministic() {
    let sc = scenario(6);
    let cfg = ControllerConfig::new(Scheme::Diffusing, 10);
    let a = run_closed_loop(&sc, &cfg, N, NSIM).unwrap();
    let b = run_closed_loop(&sc, &cfg, N, NSIM).unwrap();
    for (x, y) in a.steps.iter().zip(&b.steps) {
        assert_eq!((&x.u, &x.x_next, x.cost_cum), (&y.u, &y.x_next, y.cost_cum));
    }
}

#[test]
fn forecast_noise_hook() {
    let sc = scenario(7);
    let base = ControllerConfig::full();
    let noisy = ControllerConfig {
        forecast_noise: Some(ForecastNoise { relative_sigma: 0.2, seed: 3 }),
        ..base.clone()
    };
    let a = run_closed_loop(&sc, &base, N, 6).unwrap();
    let b = run_closed_loop(&sc, &noisy, N, 6).unwrap();
    let c = run_closed_loop(&sc, &noisy, N, 6).unwrap();
    assert_eq!(b.steps.iter().map(|s| &s.u).collect::<Vec<_>>(), c.steps.iter().map(|s| &s.u).collect::<Vec<_>>());
    assert!(a.steps.iter().zip(&b.steps).any(|(x, y)| x.u != y.u));
}

#[test]
fn bad_inputs() {
    let sc = scenario(1);
    assert!(matches!(
        run_closed_loop(&sc, &ControllerConfig::full(), N, NSIM + 1),
        Err(Error::InvalidConfig(_))
    ));
    assert!(run_closed_loop(&sc, &ControllerConfig::full(), N, 0).is_err());
    assert!(run_closed_loop(&sc, &ControllerConfig::new(Scheme::Equal, N + 1), N, 2).is_err());
    assert!(compare_schemes(&[], &[ControllerConfig::full()], N, 2).is_err());
}

#[test]
fn comparison_report() {
    let scs = [scenario(1)];
    let (rep, traces) = compare_schemes(&scs, &[ControllerConfig::full()], N, 4).unwrap();
    assert_eq!(traces.len(), 1);
    assert_eq!(rep.rows[0].relative_increase, Some(0.0));
    assert_eq!(rep.diffusing_win_rate, None);

    let d = ControllerConfig::new(Scheme::Diffusing, 8);
    let (rep, _) = compare_schemes(&scs, &[d.clone(), d], N, 4).unwrap();
    assert_eq!(rep.rows[0].cost, rep.rows[1].cost);
    assert_eq!(rep.rows[0].relative_increase, None);

    let cfgs = [
        ControllerConfig::full(),
        ControllerConfig::new(Scheme::Diffusing, 8),
        ControllerConfig::new(Scheme::Equal, 8),
        ControllerConfig::new(Scheme::Fts, 8),
    ];
    let scs = [scenario(1), scenario(2)];
    let (rep, _) = compare_schemes(&scs, &cfgs, N, 6).unwrap();
    assert_eq!(rep.rows.len(), 8);
    let wins = rep.diffusing_wins.unwrap();
    assert_eq!(rep.diffusing_win_rate, Some(wins as f64 / 2.0));
    let manual = scs
        .iter()
        .filter(|s| {
            let c = |l: &str| rep.rows.iter().find(|r| r.scenario == s.id && r.controller == l).unwrap().cost;
            c("diffusing-K8") < c("equal-K8") && c("diffusing-K8") < c("fts-K8")
        })
        .count();
    assert_eq!(wins, manual);
    assert!(rep.mean_increase("full").unwrap().abs() < 1e-15);
}

#[test]
fn trace_csv_layout() {
    let sc = scenario(1);
    let tr = run_closed_loop(&sc, &ControllerConfig::full(), N, 3).unwrap();
    let mut buf = Vec::new();
    tr.write_csv_to(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("step,cost_step,cost_cum,solve_ms,x1,x2,u1,"));
    assert!(header.ends_with(",u14"));
    assert_eq!(lines.count(), 3);
}
