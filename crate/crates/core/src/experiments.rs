//! Preset episode configurations and the side-information demo.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::controller::{EpisodeConfig, RegretOptions, TargetBall};
use crate::environments::{AircraftCost, EnvConfig, EnvKind};
use crate::error::Result;
use crate::surrogate::{tighten_with_side_info, Dataset, FirstOrderSample, MonotoneDirection, SideInfo, SurrogateSpec};

pub const UNICYCLE_LC: f64 = 10.0;
pub const AIRCRAFT_LC: f64 = 10.0;

fn planar_target(radius: f64) -> TargetBall {
    TargetBall { coordinates: vec![0, 1], center: vec![0.0, 0.0], radius }
}

/// Unicycle from `(−2, −2.5, π/2)` with ten seeding steps.
pub fn unicycle_case1(alpha: f64, beta: f64, seed: u64) -> Result<EpisodeConfig> {
    Ok(EpisodeConfig {
        env: EnvConfig::new(EnvKind::Unicycle),
        spec: SurrogateSpec::new(alpha, beta, UNICYCLE_LC)?,
        n_init: 10,
        horizon: 100,
        seed,
        x0: vec![-2.0, -2.5, FRAC_PI_2],
        target: Some(planar_target(0.25)),
        early_stop: true,
        regret: RegretOptions::default(),
        seeding_box: None,
    })
}

/// Unicycle from `(−5, −2.5, π/2)` with a single seeding step.
pub fn unicycle_case2(alpha: f64, beta: f64, seed: u64) -> Result<EpisodeConfig> {
    let mut cfg = unicycle_case1(alpha, beta, seed)?;
    cfg.n_init = 1;
    cfg.horizon = 150;
    cfg.x0 = vec![-5.0, -2.5, FRAC_PI_2];
    Ok(cfg)
}

/// Damaged aircraft at 50 m, twice the stall speed, level flight.
pub fn aircraft_landing(alpha: f64, beta: f64, seed: u64, cost: AircraftCost) -> Result<EpisodeConfig> {
    let mut env = EnvConfig::new(EnvKind::Aircraft);
    env.damage = true;
    env.params = serde_json::json!({ "cost_variant": cost });
    Ok(EpisodeConfig {
        env,
        spec: SurrogateSpec::new(alpha, beta, AIRCRAFT_LC)?,
        n_init: 10,
        horizon: 300,
        seed,
        x0: vec![115.5, 0.0, 50.0],
        target: Some(TargetBall { coordinates: vec![2], center: vec![0.0], radius: 5.0 }),
        early_stop: true,
        regret: RegretOptions::default(),
        seeding_box: None,
    })
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// `−ln Φ(z)`, accurate in both tails.
pub fn neg_log_cdf(z: f64) -> f64 {
    if z > 0.0 {
        -(-0.5 * libm::erfc(z / std::f64::consts::SQRT_2)).ln_1p()
    } else {
        -normal_cdf(z).ln()
    }
}

/// Derivative of `−ln Φ(z)`: `−φ(z)/Φ(z)`.
pub fn neg_log_cdf_derivative(z: f64) -> f64 {
    let pdf = (-0.5 * z * z).exp() / (2.0 * PI).sqrt();
    -pdf / normal_cdf(z)
}

pub const FIG4_LC: f64 = 3.0;
pub const FIG4_SAMPLES: [f64; 2] = [0.0, 3.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SideInfoLevel {
    None,
    Monotone,
    MonotoneConvexNonnegative,
}

impl SideInfoLevel {
    pub const ALL: [SideInfoLevel; 3] =
        [SideInfoLevel::None, SideInfoLevel::Monotone, SideInfoLevel::MonotoneConvexNonnegative];

    pub fn name(self) -> &'static str {
        match self {
            SideInfoLevel::None => "none",
            SideInfoLevel::Monotone => "monotone",
            SideInfoLevel::MonotoneConvexNonnegative => "monotone_convex_nonneg",
        }
    }

    pub fn spec(self) -> SurrogateSpec {
        let base = SurrogateSpec::new(1.0, 0.0, FIG4_LC).expect("valid constants");
        let mono = SideInfo::Monotone { coordinate: 0, direction: MonotoneDirection::Decreasing };
        match self {
            SideInfoLevel::None => base,
            SideInfoLevel::Monotone => base.with_side_info(mono),
            SideInfoLevel::MonotoneConvexNonnegative => {
                base.with_side_info(mono).with_side_info(SideInfo::ConvexInAllArgs).with_side_info(SideInfo::LowerBound(0.0))
            }
        }
    }
}

pub fn fig4_dataset() -> Dataset {
    let samples = FIG4_SAMPLES
        .iter()
        .map(|&z| FirstOrderSample::new(vec![z], neg_log_cdf(z), vec![neg_log_cdf_derivative(z)]).expect("finite"))
        .collect();
    Dataset::from_samples(1, 0, samples).expect("consistent dimensions")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fig4Row {
    pub z: f64,
    pub j: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Bounds on `−ln Φ` over `points` evenly spaced points of `[−2, 5]`.
pub fn fig4_table(level: SideInfoLevel, points: usize) -> Result<Vec<Fig4Row>> {
    let d = fig4_dataset();
    let spec = level.spec();
    let n = points.max(2);
    (0..n)
        .map(|k| {
            let z = -2.0 + 7.0 * k as f64 / (n - 1) as f64;
            let (lower, upper) = tighten_with_side_info(&d, &spec, &[z])?;
            Ok(Fig4Row { z, j: neg_log_cdf(z), lower, upper })
        })
        .collect()
}
