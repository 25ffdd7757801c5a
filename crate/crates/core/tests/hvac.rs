use dhmpc::closed_loop::step_plant;
use dhmpc::hvac::{
    dims, generate_instance, instance_from_profiles, read_profiles, synthetic_profiles, write_profiles,
    write_profiles_to, HvacConfig, ProfileSet, NU,
};
use dhmpc::lp::solve;
use dhmpc::model::{check_admissible, stage_dims, MpcProblem};
use dhmpc::Error;
use nalgebra::DVector;

fn small(seed: u64, horizon: usize) -> HvacConfig {
    HvacConfig {
        horizon,
        n_sim: 0,
        seed,
        ..HvacConfig::default()
    }
}

#[test]
fn stage_structure() {
    assert_eq!(stage_dims(2, 14, 6), (16, 48));
    let (p, sc) = generate_instance(&small(1, 12)).unwrap();
    assert_eq!(p.dims(), dims());
    assert_eq!(p.horizon(), 12);
    assert_eq!(sc.len(), 12);
    let lp = p.to_compact();
    assert_eq!((lp.n(), lp.m()), (16, 48));
    assert_eq!(p.stages()[0].v, HvacConfig::default().x0());
    for s in &p.stages()[1..] {
        assert!(s.v.iter().all(|v| *v == 0.0));
    }
}

#[test]
fn null_economy_costs_nothing() {
    let cfg = small(0, 24);
    let zeros = ProfileSet {
        price_elec: vec![0.0; 24],
        load_elec: vec![0.0; 24],
        load_cw: vec![0.0; 24],
        load_hw: vec![0.0; 24],
    };
    let (p, _) = instance_from_profiles(&cfg, &zeros).unwrap();
    let lp = p.to_compact();
    let sol = solve(&lp).unwrap();
    assert!(sol.objective.abs() < 1e-9, "{}", sol.objective);
    let mut idle = vec![0.0; lp.nz()];
    for i in 0..24 {
        idle[i * 16..i * 16 + 2].copy_from_slice(cfg.x0().as_slice());
    }
    let gz = lp.mul_g(&idle);
    assert!(gz.iter().zip(lp.d()).all(|(a, b)| a >= &(b - 1e-9)));
}

#[test]
fn generated_instances_are_admissible() {
    for seed in 0..5 {
        let (p, _) = generate_instance(&small(seed, 48)).unwrap();
        let lp = p.to_compact();
        let tol = 1e-8 * (1.0 + lp.d().iter().fold(0.0f64, |a, b| a.max(b.abs())));
        assert!(check_admissible(&lp, tol).feasible, "seed {seed}");
    }
    let (p, _) = generate_instance(&HvacConfig::default()).unwrap();
    let lp = p.to_compact();
    assert_eq!(lp.n_stages(), 288);
    let flag = check_admissible(&lp, 1e-6);
    assert!(flag.feasible);
    assert!(flag.certificate.is_some());
}

#[test]
fn penalty_not_paid_when_capacity_suffices() {
    let mut cfg = small(3, 24);
    cfg.price.mean = 1e-4;
    cfg.price.amplitude = 0.0;
    cfg.price.noise = 0.0;
    cfg.load_cw.mean = 1500.0;
    cfg.load_cw.amplitude = 500.0;
    let (p, _) = generate_instance(&cfg).unwrap();
    let free = solve(&p.to_compact()).unwrap();

    let mut stages = p.into_stages();
    for s in &mut stages {
        for k in 10..NU {
            s.u_hi[k] = 0.0;
        }
    }
    let forced = solve(&MpcProblem::new(stages).unwrap().to_compact()).unwrap();
    assert!((free.objective - forced.objective).abs() <= 1e-9 * (1.0 + forced.objective.abs()));
    for i in 0..24 {
        for k in 10..NU {
            assert!(free.z[i * 16 + 2 + k].abs() < 1e-6);
        }
    }
}

#[test]
fn storage_integrates_charge() {
    let (p, _) = generate_instance(&small(0, 2)).unwrap();
    let s = &p.stages()[0];
    let x = DVector::from_vec(vec![1000.0, 2000.0]);
    let mut u = DVector::zeros(NU);
    u[4] = 600.0;
    u[5] = -1200.0;
    let next = step_plant(&x, &u, s, &DVector::zeros(2)).unwrap();
    // 5-minute step: 1/12 h.
    assert_eq!(next[0], 1000.0 + 600.0 / 12.0);
    assert_eq!(next[1], 2000.0 - 1200.0 / 12.0);
}

#[test]
fn invalid_configs_rejected() {
    let bad = [
        HvacConfig { dt_minutes: 0.0, ..HvacConfig::default() },
        HvacConfig { horizon: 0, ..HvacConfig::default() },
        HvacConfig { initial_fill: (1.5, 0.0), ..HvacConfig::default() },
        HvacConfig { penalty: -1.0, ..HvacConfig::default() },
    ];
    for c in &bad {
        assert!(matches!(generate_instance(c), Err(Error::InvalidConfig(_))));
    }
    let mut c = HvacConfig::default();
    c.load_cw.amplitude = -1.0;
    assert!(generate_instance(&c).is_err());
}

#[test]
fn seeded_profiles_are_deterministic() {
    let cfg = HvacConfig::default();
    assert_eq!(synthetic_profiles(&cfg, 100), synthetic_profiles(&cfg, 100));
    let other = HvacConfig { seed: 9, ..cfg.clone() };
    assert_ne!(synthetic_profiles(&cfg, 100), synthetic_profiles(&other, 100));
    let p = synthetic_profiles(&cfg, 500);
    for s in [&p.load_elec, &p.load_cw, &p.load_hw, &p.price_elec] {
        assert!(s.iter().all(|v| *v >= 0.0));
    }
    let tou = synthetic_profiles(&HvacConfig::time_of_use(), 288);
    for block in tou.price_elec.chunks(48) {
        assert!(block.iter().all(|v| *v == block[0]));
    }
}

#[test]
fn profile_csv() {
    let text = "t,price_elec,load_elec,load_cw,load_hw\n".to_string()
        + &(0..10).map(|t| format!("{t},0.1,{},{},{}\n", 100 + t, 200, 300)).collect::<String>();
    let p = read_profiles(text.as_bytes()).unwrap();
    assert_eq!(p.len(), 10);
    assert_eq!(p.load_elec[3], 103.0);

    let missing = "t,price_elec,load_elec,load_hw\n0,1,2,3\n";
    match read_profiles(missing.as_bytes()) {
        Err(Error::MissingColumn(c)) => assert_eq!(c, "load_cw"),
        other => panic!("{other:?}"),
    }
    let negative = "t,price_elec,load_elec,load_cw,load_hw\n0,1,2,3,4\n1,1,2,-3,4\n";
    match read_profiles(negative.as_bytes()) {
        Err(Error::Parse { line, msg }) => {
            assert_eq!(line, 3);
            assert!(msg.contains("load_cw"));
        }
        other => panic!("{other:?}"),
    }
    let garbage = "t,price_elec,load_elec,load_cw,load_hw\n0,1,2,3,4\n1,x,2,3,4\n";
    assert!(matches!(read_profiles(garbage.as_bytes()), Err(Error::Parse { line: 3, .. })));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("profiles.csv");
    let synth = synthetic_profiles(&HvacConfig::default(), 200);
    write_profiles(&path, &synth).unwrap();
    assert_eq!(dhmpc::hvac::load_profiles(&path).unwrap(), synth);

    let mut buf = Vec::new();
    write_profiles_to(&mut buf, &synth).unwrap();
    assert!(String::from_utf8(buf).unwrap().starts_with("t,price_elec,load_elec,load_cw,load_hw\n0,"));
}
