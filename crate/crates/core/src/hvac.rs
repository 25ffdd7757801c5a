//! Synthetic central HVAC plant: two storage tanks, fourteen controls and six
//! balance rows, driven by daily price and load profiles.
//!
//! Controls (1-based as in the data tables): 1 chiller, 2 heat recovery
//! chiller, 3 HW generator, 4 cooling towers, 5/6 CW/HW storage charge
//! (positive = charging), 7 dump heat exchanger, 8 electricity, 9 water,
//! 10 natural gas, 11-14 unmet-load slacks.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dims, MpcProblem, StageSpec};

pub const NX: usize = 2;
pub const NU: usize = 14;
pub const NW: usize = 6;

pub const WATER_PRICE: f64 = 0.009;
pub const GAS_PRICE: f64 = 0.018;

/// Electricity drawn per kW of chiller, heat recovery chiller and tower load.
pub const ELEC_PER_CHILLER: f64 = 0.2;
pub const ELEC_PER_HRC: f64 = 0.3;
pub const ELEC_PER_TOWER: f64 = 0.02;
/// Water per kW of tower load.
pub const WATER_PER_TOWER: f64 = 2.0;
/// Gas per kW of HW generator output.
pub const GAS_PER_HW: f64 = 1.0 / 0.9;
/// Condenser heat per kW of chiller cooling.
pub const CONDENSER_PER_CHILLER: f64 = 1.2;
/// HW produced per kW of heat recovery chiller cooling.
pub const HW_PER_HRC: f64 = 1.3;

pub fn dims() -> Dims {
    Dims::new(NX, NU, NW)
}

/// Daily sinusoid plus i.i.d. Gaussian noise, clipped at zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileParams {
    pub mean: f64,
    pub amplitude: f64,
    /// Hour of the daily maximum.
    pub peak_hour: f64,
    pub noise: f64,
    /// Correlation time of the noise (AR(1)); 0 gives white noise.
    #[serde(default)]
    pub noise_minutes: f64,
    /// Hold each value for this many minutes (piecewise-constant series); 0 disables.
    #[serde(default)]
    pub hold_minutes: f64,
}

impl ProfileParams {
    fn value(&self, hour: f64) -> f64 {
        self.mean + self.amplitude * (2.0 * PI * (hour - self.peak_hour) / 24.0).cos()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Capacities {
    pub chiller: f64,
    pub hrc: f64,
    pub hw_generator: f64,
    pub tower: f64,
    pub dump: f64,
    pub cw_rate: f64,
    pub hw_rate: f64,
    pub cw_storage: f64,
    pub hw_storage: f64,
}

impl Default for Capacities {
    fn default() -> Self {
        Capacities {
            chiller: 4000.0,
            hrc: 1500.0,
            hw_generator: 3000.0,
            tower: 8000.0,
            dump: 3000.0,
            cw_rate: 3000.0,
            hw_rate: 1500.0,
            cw_storage: 8000.0,
            hw_storage: 8000.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HvacConfig {
    pub dt_minutes: f64,
    pub horizon: usize,
    pub n_sim: usize,
    pub seed: u64,
    pub price: ProfileParams,
    pub load_elec: ProfileParams,
    pub load_cw: ProfileParams,
    pub load_hw: ProfileParams,
    pub penalty: f64,
    pub capacities: Capacities,
    /// Initial storage levels as fractions of capacity.
    pub initial_fill: (f64, f64),
}

impl Default for HvacConfig {
    fn default() -> Self {
        HvacConfig {
            dt_minutes: 5.0,
            horizon: 288,
            n_sim: 288,
            seed: 0,
            price: ProfileParams { mean: 0.08, amplitude: 0.04, peak_hour: 15.0, noise: 0.04, noise_minutes: 30.0, hold_minutes: 0.0 },
            load_elec: ProfileParams { mean: 5000.0, amplitude: 1500.0, peak_hour: 14.0, noise: 200.0, noise_minutes: 0.0, hold_minutes: 0.0 },
            load_cw: ProfileParams { mean: 3500.0, amplitude: 2500.0, peak_hour: 15.0, noise: 300.0, noise_minutes: 0.0, hold_minutes: 0.0 },
            load_hw: ProfileParams { mean: 1500.0, amplitude: 500.0, peak_hour: 6.0, noise: 100.0, noise_minutes: 0.0, hold_minutes: 0.0 },
            penalty: 45.0,
            capacities: Capacities::default(),
            initial_fill: (0.5, 0.5),
        }
    }
}

impl HvacConfig {
    /// Same plant under a time-of-use tariff: the price follows the daily
    /// sinusoid but is held constant over 4-hour blocks.
    pub fn time_of_use() -> Self {
        HvacConfig {
            price: ProfileParams {
                mean: 0.08,
                amplitude: 0.04,
                peak_hour: 15.0,
                noise: 0.0,
                noise_minutes: 0.0,
                hold_minutes: 240.0,
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        // NaN fails both checks.
        let nonneg = |v: f64| v >= 0.0;
        if !(self.dt_minutes.is_finite() && self.dt_minutes > 0.0) {
            return bad("dt_minutes must be positive");
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        for p in [&self.price, &self.load_elec, &self.load_cw, &self.load_hw] {
            if !nonneg(p.amplitude) || !nonneg(p.noise) || !p.mean.is_finite() {
                return bad("profile amplitudes and noise must be nonnegative");
            }
            if !nonneg(p.noise_minutes) || !nonneg(p.hold_minutes) {
                return bad("noise_minutes and hold_minutes must be nonnegative");
            }
        }
        if !nonneg(self.penalty) {
            return bad("penalty must be nonnegative");
        }
        let (a, b) = self.initial_fill;
        if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) {
            return bad("initial_fill must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn dt_hours(&self) -> f64 {
        self.dt_minutes / 60.0
    }

    pub fn x0(&self) -> DVector<f64> {
        let c = &self.capacities;
        DVector::from_vec(vec![self.initial_fill.0 * c.cw_storage, self.initial_fill.1 * c.hw_storage])
    }
}

/// The four time-varying data channels.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ProfileSet {
    pub price_elec: Vec<f64>,
    pub load_elec: Vec<f64>,
    pub load_cw: Vec<f64>,
    pub load_hw: Vec<f64>,
}

impl ProfileSet {
    pub fn len(&self) -> usize {
        self.price_elec.len()
    }

    pub fn is_empty(&self) -> bool {
        self.price_elec.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let n = self.len();
        if [self.load_elec.len(), self.load_cw.len(), self.load_hw.len()].iter().any(|&l| l != n) {
            return Err(Error::DimensionMismatch("profile series lengths differ".into()));
        }
        Ok(())
    }
}

/// Seeded synthetic profiles of length `len`, starting at midnight.
pub fn synthetic_profiles(cfg: &HvacConfig, len: usize) -> ProfileSet {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut series = |p: &ProfileParams, floor: f64| -> Vec<f64> {
        let noise = Normal::new(0.0, p.noise).expect("noise is nonnegative");
        let phi = if p.noise_minutes > 0.0 {
            (-cfg.dt_minutes / p.noise_minutes).exp()
        } else {
            0.0
        };
        let innov = (1.0 - phi * phi).sqrt();
        let hold = if p.hold_minutes > cfg.dt_minutes {
            (p.hold_minutes / cfg.dt_minutes).round() as usize
        } else {
            1
        };
        let mut e = noise.sample(&mut rng);
        let mut held = 0.0;
        (0..len)
            .map(|t| {
                if t > 0 {
                    e = phi * e + innov * noise.sample(&mut rng);
                }
                if t % hold == 0 {
                    let hour = t as f64 * cfg.dt_hours();
                    held = (p.value(hour) + e).max(floor);
                }
                held
            })
            .collect()
    };
    let price_elec = series(&cfg.price, 0.0);
    let load_elec = series(&cfg.load_elec, 0.0);
    let load_cw = series(&cfg.load_cw, 0.0);
    let load_hw = series(&cfg.load_hw, 0.0);
    ProfileSet { price_elec, load_elec, load_cw, load_hw }
}

/// One stage of the plant with the given price and loads.
pub fn stage(cfg: &HvacConfig, price: f64, load_elec: f64, load_cw: f64, load_hw: f64, slack_cap: f64) -> StageSpec {
    let h = cfg.dt_hours();
    let c = &cfg.capacities;
    let mut s = StageSpec::zeros(dims());
    s.a = DMatrix::identity(NX, NX);
    s.b[(0, 4)] = h;
    s.b[(1, 5)] = h;

    let f = &mut s.f;
    // E1 electricity
    f[(0, 7)] = 1.0;
    f[(0, 0)] = -ELEC_PER_CHILLER;
    f[(0, 1)] = -ELEC_PER_HRC;
    f[(0, 3)] = -ELEC_PER_TOWER;
    // E2 water
    f[(1, 8)] = 1.0;
    f[(1, 3)] = -WATER_PER_TOWER;
    // E3 gas
    f[(2, 9)] = 1.0;
    f[(2, 2)] = -GAS_PER_HW;
    // E4 condenser water
    f[(3, 3)] = 1.0;
    f[(3, 0)] = -CONDENSER_PER_CHILLER;
    f[(3, 6)] = -1.0;
    // E5 CW load
    f[(4, 0)] = 1.0;
    f[(4, 1)] = 1.0;
    f[(4, 4)] = -1.0;
    f[(4, 10)] = 1.0;
    f[(4, 11)] = -1.0;
    // E6 HW load
    f[(5, 1)] = HW_PER_HRC;
    f[(5, 2)] = 1.0;
    f[(5, 5)] = -1.0;
    f[(5, 6)] = -1.0;
    f[(5, 12)] = 1.0;
    f[(5, 13)] = -1.0;
    s.w = DVector::from_vec(vec![load_elec, 0.0, 0.0, 0.0, load_cw, load_hw]);

    let mut r = vec![0.0; NU];
    r[7] = price * h;
    r[8] = WATER_PRICE * h;
    r[9] = GAS_PRICE * h;
    r[10..14].fill(cfg.penalty * h);
    s.r = DVector::from_vec(r);

    s.x_lo = DVector::zeros(NX);
    s.x_hi = DVector::from_vec(vec![c.cw_storage, c.hw_storage]);
    let elec_cap = slack_cap + ELEC_PER_CHILLER * c.chiller + ELEC_PER_HRC * c.hrc + ELEC_PER_TOWER * c.tower;
    s.u_lo = DVector::from_vec(vec![
        0.0, 0.0, 0.0, 0.0, -c.cw_rate, -c.hw_rate, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
    ]);
    s.u_hi = DVector::from_vec(vec![
        c.chiller,
        c.hrc,
        c.hw_generator,
        c.tower,
        c.cw_rate,
        c.hw_rate,
        c.dump,
        elec_cap,
        WATER_PER_TOWER * c.tower,
        GAS_PER_HW * c.hw_generator,
        slack_cap,
        slack_cap,
        slack_cap,
        slack_cap,
    ]);
    s
}

/// Slack bound: ten times the largest total load.
pub fn slack_capacity(profiles: &ProfileSet) -> f64 {
    let peak = (0..profiles.len())
        .map(|t| profiles.load_elec[t] + profiles.load_cw[t] + profiles.load_hw[t])
        .fold(0.0, f64::max);
    10.0 * peak.max(1.0)
}

/// Stage data for every time step of the profiles; `v` is zero throughout.
pub fn stages_from_profiles(cfg: &HvacConfig, profiles: &ProfileSet) -> Result<Vec<StageSpec>> {
    cfg.validate()?;
    profiles.validate()?;
    let cap = slack_capacity(profiles);
    Ok((0..profiles.len())
        .map(|t| {
            stage(
                cfg,
                profiles.price_elec[t],
                profiles.load_elec[t],
                profiles.load_cw[t],
                profiles.load_hw[t],
                cap,
            )
        })
        .collect())
}

/// Data for a receding-horizon run: `stages.len() >= n_sim + horizon`.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub id: u64,
    pub x0: DVector<f64>,
    pub stages: Vec<StageSpec>,
}

impl Scenario {
    pub fn new(id: u64, x0: DVector<f64>, stages: Vec<StageSpec>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::InvalidConfig("scenario has no stages".into()));
        }
        if x0.len() != stages[0].dims().nx {
            return Err(Error::DimensionMismatch("x0 length".into()));
        }
        Ok(Scenario { id, x0, stages })
    }

    pub fn dims(&self) -> Dims {
        self.stages[0].dims()
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    /// The MPC problem over stages `t .. t + horizon` with initial state `x`.
    pub fn window(&self, t: usize, horizon: usize, x: &DVector<f64>) -> Result<MpcProblem> {
        if t + horizon > self.stages.len() {
            return Err(Error::InvalidConfig(format!(
                "window {}..{} exceeds scenario length {}",
                t + 1,
                t + horizon,
                self.stages.len()
            )));
        }
        let mut stages = self.stages[t..t + horizon].to_vec();
        stages[0].v = x.clone();
        MpcProblem::new(stages)
    }
}

/// A first-window problem plus the scenario covering `n_sim + horizon` steps.
pub fn generate_instance(cfg: &HvacConfig) -> Result<(MpcProblem, Scenario)> {
    cfg.validate()?;
    let profiles = synthetic_profiles(cfg, cfg.n_sim + cfg.horizon);
    instance_from_profiles(cfg, &profiles)
}

pub fn instance_from_profiles(cfg: &HvacConfig, profiles: &ProfileSet) -> Result<(MpcProblem, Scenario)> {
    let stages = stages_from_profiles(cfg, profiles)?;
    let scenario = Scenario::new(cfg.seed, cfg.x0(), stages)?;
    let problem = scenario.window(0, cfg.horizon.min(scenario.len()), &cfg.x0())?;
    Ok((problem, scenario))
}

pub const PROFILE_COLUMNS: [&str; 5] = ["t", "price_elec", "load_elec", "load_cw", "load_hw"];

/// Read a profile CSV with header `t,price_elec,load_elec,load_cw,load_hw`
/// (any column order; extra columns ignored).
pub fn load_profiles(path: impl AsRef<Path>) -> Result<ProfileSet> {
    let file = std::fs::File::open(path)?;
    read_profiles(file)
}

pub fn read_profiles<R: std::io::Read>(reader: R) -> Result<ProfileSet> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?
        .clone();
    let mut idx = [0usize; 4];
    for (slot, name) in idx.iter_mut().zip(&PROFILE_COLUMNS[1..]) {
        *slot = header
            .iter()
            .position(|h| h == *name)
            .ok_or_else(|| Error::MissingColumn((*name).to_string()))?;
    }
    let mut out = ProfileSet::default();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let mut vals = [0.0; 4];
        for (v, (&i, name)) in vals.iter_mut().zip(idx.iter().zip(&PROFILE_COLUMNS[1..])) {
            let raw = rec.get(i).ok_or_else(|| Error::Parse { line, msg: format!("missing {name}") })?;
            *v = raw
                .parse::<f64>()
                .map_err(|e| Error::Parse { line, msg: format!("{name}: {e}") })?;
            if !v.is_finite() {
                return Err(Error::Parse { line, msg: format!("{name} is not finite") });
            }
            if *name != "price_elec" && *v < 0.0 {
                return Err(Error::Parse { line, msg: format!("negative {name}") });
            }
        }
        out.price_elec.push(vals[0]);
        out.load_elec.push(vals[1]);
        out.load_cw.push(vals[2]);
        out.load_hw.push(vals[3]);
    }
    Ok(out)
}

/// Floats are written with Rust's shortest round-trip formatting.
pub fn write_profiles(path: impl AsRef<Path>, profiles: &ProfileSet) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_profiles_to(file, profiles)
}

pub fn write_profiles_to<W: std::io::Write>(writer: W, profiles: &ProfileSet) -> Result<()> {
    profiles.validate()?;
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    w.write_record(PROFILE_COLUMNS).map_err(csv_err)?;
    for t in 0..profiles.len() {
        w.write_record([
            t.to_string(),
            profiles.price_elec[t].to_string(),
            profiles.load_elec[t].to_string(),
            profiles.load_cw[t].to_string(),
            profiles.load_hw[t].to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
