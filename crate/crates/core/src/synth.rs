//! Synthetic feeders and load/PV profiles for tests, examples and the
//! acceptance experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::feeder::{Bus, FeederData, FeederModel, LineSection, Load, Phase, PvPlant, Regulator, Source};
use crate::profiles::Profiles;

const BASE_KV: f64 = 12.47;
const POWER_FACTOR_TAN: f64 = 0.3287; // pf 0.95 lagging

fn z_three_phase(len_km: f64, self_z: [f64; 2], mutual: [f64; 2]) -> [[[f64; 2]; 3]; 3] {
    let mut z = [[[0.0; 2]; 3]; 3];
    for (i, row) in z.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let base = if i == j { self_z } else { mutual };
            *v = [base[0] * len_km, base[1] * len_km];
        }
    }
    z
}

fn z_single(len_km: f64, ph: Phase, self_z: [f64; 2]) -> [[[f64; 2]; 3]; 3] {
    let mut z = [[[0.0; 2]; 3]; 3];
    z[ph.index()][ph.index()] = [self_z[0] * len_km, self_z[1] * len_km];
    z
}

fn bus(id: &str, phases: &[Phase]) -> Bus {
    Bus {
        id: id.to_string(),
        phases: phases.to_vec(),
        base_kv: BASE_KV,
    }
}

fn line(id: String, from: &str, to: &str, length_km: f64, z: [[[f64; 2]; 3]; 3]) -> LineSection {
    LineSection {
        id,
        from: from.to_string(),
        to: to.to_string(),
        length_km,
        z,
    }
}

fn load(id: String, bus: &str, phase: Phase, kw: f64) -> Load {
    Load {
        id,
        bus: bus.to_string(),
        phase,
        kw,
        kvar: kw * POWER_FACTOR_TAN,
    }
}

fn regulator(id: &str, phase: Phase, primary: &str, secondary: &str) -> Regulator {
    Regulator {
        id: id.to_string(),
        phase,
        primary_bus: primary.to_string(),
        secondary_bus: secondary.to_string(),
        tap_min: -16,
        tap_max: 16,
        tap_step: 0.00625,
        initial_tap: 0,
        gang: None,
    }
}

const ABC: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

/// Lateral lengths in buses, one lateral per trunk bus.
const LATERALS: [usize; 16] = [11, 13, 12, 14, 12, 15, 13, 12, 16, 12, 14, 13, 12, 15, 11, 13];
/// Trunk bus after which the three-phase regulator bank sits.
const BANK_AFTER: usize = 6;
/// Lateral carrying the single-phase regulator, and the bus it follows.
const REG_LATERAL: usize = 9;
const REG_AFTER: usize = 3;

/// The 471-node, 12.47 kV acceptance feeder: a three-phase trunk with a
/// regulator bank, single-phase laterals (one with its own regulator) and
/// three PV plants sized to the peak load.
pub fn test_feeder() -> FeederModel {
    let trunk_z = ([0.25, 0.70], [0.06, 0.30]);
    let lat_z = [0.40, 0.60];
    let trunk_len = 0.55;
    let lat_len = 0.30;

    let mut d = FeederData {
        name: "synthetic-471".into(),
        buses: vec![bus("sub", &ABC)],
        lines: Vec::new(),
        loads: Vec::new(),
        pv_plants: Vec::new(),
        regulators: Vec::new(),
        source: Source {
            bus: "sub".into(),
            voltage_pu: [1.03; 3],
        },
    };
    let mut prev = "sub".to_string();
    for (i, &lat_n) in LATERALS.iter().enumerate() {
        let t = i + 1;
        let id = format!("t{t}");
        d.buses.push(bus(&id, &ABC));
        d.lines.push(line(
            format!("lt{t}"),
            &prev,
            &id,
            trunk_len,
            z_three_phase(trunk_len, trunk_z.0, trunk_z.1),
        ));
        for ph in ABC {
            d.loads.push(load(format!("ld_t{t}{ph}"), &id, ph, 12.0 + (t % 4) as f64 * 2.0));
        }
        prev = id.clone();
        if t == BANK_AFTER {
            let sec = format!("t{t}r");
            d.buses.push(bus(&sec, &ABC));
            for ph in ABC {
                d.regulators.push(regulator(&format!("vr1{ph}"), ph, &id, &sec));
            }
            prev = sec;
        }

        // lateral hanging off this trunk bus
        let ph = ABC[i % 3];
        let mut up = prev.clone();
        for j in 1..=lat_n {
            // unloaded pole junction halfway along every section
            let mid = format!("l{t}_{j}j");
            let half = lat_len / 2.0;
            d.buses.push(bus(&mid, &[ph]));
            d.lines.push(line(format!("ll{t}_{j}j"), &up, &mid, half, z_single(half, ph, lat_z)));
            let lid = format!("l{t}_{j}");
            d.buses.push(bus(&lid, &[ph]));
            d.lines.push(line(format!("ll{t}_{j}"), &mid, &lid, half, z_single(half, ph, lat_z)));
            let kw = 9.0 + ((t * 7 + j * 5) % 9) as f64;
            d.loads.push(load(format!("ld_l{t}_{j}"), &lid, ph, kw));
            up = lid.clone();
            if t == REG_LATERAL && j == REG_AFTER {
                let sec = format!("{lid}r");
                d.buses.push(bus(&sec, &[ph]));
                d.regulators.push(regulator("vr2", ph, &lid, &sec));
                up = sec;
            }
        }
    }
    let peak: f64 = d.loads.iter().map(|l| l.kw).sum();
    let reg_phase = ABC[(REG_LATERAL - 1) % 3];
    d.pv_plants = vec![
        PvPlant {
            id: "pv1".into(),
            bus: "t14".into(),
            phases: ABC.to_vec(),
            kva: (0.6 * peak).round(),
        },
        PvPlant {
            id: "pv2".into(),
            bus: "l4_6".into(),
            phases: vec![ABC[3 % 3]],
            kva: (0.2 * peak).round(),
        },
        PvPlant {
            id: "pv3".into(),
            bus: format!("l{REG_LATERAL}_8"),
            phases: vec![reg_phase],
            kva: (0.2 * peak).round(),
        },
    ];
    FeederModel::new(d).expect("synthetic feeder is valid")
}

/// Six single-phase nodes: a line, a regulator, a short main and a side
/// branch, with one PV plant at the far end.
pub fn tutorial_feeder() -> FeederModel {
    let ph = Phase::A;
    let z = [0.30, 0.50];
    let d = FeederData {
        name: "tutorial-6".into(),
        buses: ["src", "m", "r", "e", "f", "g"].iter().map(|b| bus(b, &[ph])).collect(),
        lines: vec![
            line("l1".into(), "src", "m", 2.0, z_single(2.0, ph, z)),
            line("l2".into(), "r", "e", 2.0, z_single(2.0, ph, z)),
            line("l3".into(), "e", "f", 2.0, z_single(2.0, ph, z)),
            line("l4".into(), "m", "g", 1.5, z_single(1.5, ph, z)),
        ],
        loads: vec![
            load("ld_m".into(), "m", ph, 150.0),
            load("ld_e".into(), "e", ph, 200.0),
            load("ld_f".into(), "f", ph, 150.0),
            load("ld_g".into(), "g", ph, 120.0),
        ],
        pv_plants: vec![PvPlant {
            id: "pv".into(),
            bus: "f".into(),
            phases: vec![ph],
            kva: 600.0,
        }],
        regulators: vec![regulator("vr", ph, "m", "r")],
        source: Source {
            bus: "src".into(),
            voltage_pu: [1.02; 3],
        },
    };
    FeederModel::new(d).expect("tutorial feeder is valid")
}

/// Sky condition of one simulated day.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DayKind {
    Clear,
    Variable,
    Overcast,
}

#[derive(Clone, Debug)]
pub struct ProfileSpec {
    pub days: usize,
    pub resolution_min: usize,
    pub seed: u64,
    /// Multiplier on every load's rating.
    pub load_scale: f64,
    /// Clear-sky peak PV output as a fraction of inverter kVA.
    pub pv_peak: f64,
    /// Day kinds cycled through; drawn at random when empty.
    pub days_kind: Vec<DayKind>,
    /// Standard deviation of per-load multiplicative noise.
    pub load_noise: f64,
}

impl ProfileSpec {
    /// Mixed-weather record used for scenario selection and training.
    pub fn history(days: usize, seed: u64) -> Self {
        Self {
            days,
            resolution_min: 15,
            seed,
            load_scale: 1.0,
            pv_peak: 0.85,
            days_kind: Vec::new(),
            load_noise: 0.05,
        }
    }

    /// Light-load, high-PV week at 1-minute resolution.
    pub fn stress(days: usize, seed: u64) -> Self {
        Self {
            days,
            resolution_min: 1,
            seed,
            load_scale: 0.75,
            pv_peak: 0.9,
            days_kind: vec![DayKind::Clear, DayKind::Variable, DayKind::Clear, DayKind::Variable],
            load_noise: 0.05,
        }
    }

    /// Held-out evaluation record at 1-minute resolution.
    pub fn evaluation(days: usize, seed: u64) -> Self {
        Self {
            days,
            resolution_min: 1,
            seed,
            load_scale: 1.0,
            pv_peak: 0.85,
            days_kind: Vec::new(),
            load_noise: 0.05,
        }
    }
}

/// Residential daily shape, fraction of peak, hour in [0, 24).
fn load_shape(h: f64) -> f64 {
    let g = |mu: f64, sd: f64| (-(h - mu).powi(2) / (2.0 * sd * sd)).exp();
    0.38 + 0.22 * g(7.5, 1.3) + 0.18 * g(13.0, 3.0) + 0.55 * g(19.3, 2.0) - 0.12 * g(3.5, 2.0)
}

fn clear_sky(h: f64) -> f64 {
    if (6.5..19.5).contains(&h) {
        (std::f64::consts::PI * (h - 6.5) / 13.0).sin().powf(1.3)
    } else {
        0.0
    }
}

/// Deterministic per-load and per-plant series for `model`.
pub fn synthetic_profiles(model: &FeederModel, spec: &ProfileSpec) -> Profiles {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let res = spec.resolution_min.max(1);
    let steps_per_day = 1440 / res;
    let n = spec.days * steps_per_day;
    let nl = model.loads().len();
    let np = model.pv_plants().len();
    let unit = Normal::new(0.0, 1.0).expect("valid");

    // per-load habits
    let shift: Vec<f64> = (0..nl).map(|_| rng.gen_range(-0.75..0.75)).collect();
    let amp: Vec<f64> = (0..nl).map(|_| rng.gen_range(0.85..1.15)).collect();
    // AR(1) noise keeps minute-to-minute changes small
    let rho = (-(res as f64) / 30.0).exp();
    let innov = (1.0 - rho * rho).sqrt();
    let mut noise = vec![0.0; nl];

    let mut minutes = Vec::with_capacity(n);
    let mut load_kw = Vec::with_capacity(n);
    let mut load_kvar = Vec::with_capacity(n);
    let mut pv_kw = Vec::with_capacity(n);

    let mut cloud = 1.0;
    let mut plant_dev = vec![0.0; np];
    for day in 0..spec.days {
        let kind = if spec.days_kind.is_empty() {
            match rng.gen_range(0..10) {
                0..=4 => DayKind::Clear,
                5..=7 => DayKind::Variable,
                _ => DayKind::Overcast,
            }
        } else {
            spec.days_kind[day % spec.days_kind.len()]
        };
        let day_scale = rng.gen_range(0.9..1.08) * spec.load_scale;
        for s in 0..steps_per_day {
            let minute = (day * 1440 + s * res) as i64;
            let h = (s * res) as f64 / 60.0;
            let mut kw = Vec::with_capacity(nl);
            let mut kvar = Vec::with_capacity(nl);
            for (i, l) in model.loads().iter().enumerate() {
                noise[i] = rho * noise[i] + innov * unit.sample(&mut rng);
                let hh = (h + shift[i]).rem_euclid(24.0);
                let f = (load_shape(hh) * amp[i] * day_scale * (1.0 + spec.load_noise * noise[i])).max(0.05);
                kw.push(l.kw * f);
                kvar.push(l.kvar * f);
            }
            // cloud transmittance
            let target = match kind {
                DayKind::Clear => 1.0,
                DayKind::Overcast => 0.35,
                DayKind::Variable => {
                    if rng.gen_bool((res as f64 / 8.0).min(1.0)) {
                        rng.gen_range(0.25..1.0)
                    } else {
                        cloud
                    }
                }
            };
            let a = (-(res as f64) / 1.0).exp();
            cloud = a * cloud + (1.0 - a) * target;
            let mut pv = Vec::with_capacity(np);
            for (k, p) in model.pv_plants().iter().enumerate() {
                plant_dev[k] = rho * plant_dev[k] + innov * unit.sample(&mut rng);
                let local = match kind {
                    DayKind::Clear => 1.0 - 0.01 * plant_dev[k].abs(),
                    _ => (cloud * (1.0 + 0.05 * plant_dev[k])).clamp(0.05, 1.0),
                };
                pv.push((p.kva * spec.pv_peak * clear_sky(h) * local).clamp(0.0, p.kva));
            }
            minutes.push(minute);
            load_kw.push(kw);
            load_kvar.push(kvar);
            pv_kw.push(pv);
        }
    }
    Profiles {
        minutes,
        load_kw,
        load_kvar,
        pv_kw,
    }
}

/// Every load at `load_fraction` of its rating and every plant at
/// `pv_fraction` of its kVA, for `steps` timesteps.
pub fn flat_profiles(model: &FeederModel, steps: usize, load_fraction: f64, pv_fraction: f64) -> Profiles {
    let kw: Vec<f64> = model.loads().iter().map(|l| l.kw * load_fraction).collect();
    let kvar: Vec<f64> = model.loads().iter().map(|l| l.kvar * load_fraction).collect();
    let pv: Vec<f64> = model.pv_plants().iter().map(|p| p.kva * pv_fraction).collect();
    Profiles {
        minutes: (0..steps as i64).collect(),
        load_kw: vec![kw; steps],
        load_kvar: vec![kvar; steps],
        pv_kw: vec![pv; steps],
    }
}
