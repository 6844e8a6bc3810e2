//! Synthetic scenarios, range noise, and Monte Carlo batches.
//!
//! Node ids follow the library convention: sensors `1..=n`, anchors
//! `n+1..=n+m`. All randomness flows from explicit 64-bit seeds through
//! ChaCha8 streams, so every artifact is reproducible from its seed.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::RangeMeasurement;
use crate::error::{invalid, Result};
use crate::estimator::{localize, AnchorInput, EstimationReport, EstimatorConfig};
use crate::geometry::{NodeId, Point2};
use crate::model::AnchorVariant;
use crate::solver::Status;

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub min: Point2,
    pub max: Point2,
}

impl Field {
    /// Square of side `side` centered at the origin.
    pub fn centered_square(side: f64) -> Self {
        let h = side / 2.0;
        Self {
            min: Point2::new(-h, -h),
            max: Point2::new(h, h),
        }
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Point2 {
        Point2::new(
            rng.random_range(self.min.x..=self.max.x),
            rng.random_range(self.min.y..=self.max.y),
        )
    }
}

/// Which node pairs observe a range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "radius", rename_all = "kebab-case")]
pub enum Connectivity {
    Full,
    SensorAnchorOnly,
    /// Pairs whose true distance is at most the radius.
    RadiusLimited(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub field: Field,
    pub anchors: Vec<Point2>,
    pub sensors: Vec<Point2>,
    pub connectivity: Connectivity,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// The eight fixed anchors. The source layout names seven coordinates for
/// "eight boundary anchors"; `(0, 20)` completes the grid.
pub const PAPER_FIXED_ANCHORS: [Point2; 8] = [
    Point2::new(20.0, 20.0),
    Point2::new(-20.0, 20.0),
    Point2::new(20.0, -20.0),
    Point2::new(-20.0, -20.0),
    Point2::new(0.0, 0.0),
    Point2::new(-20.0, 0.0),
    Point2::new(0.0, -20.0),
    Point2::new(0.0, 20.0),
];

pub const PAPER_LISTED_ANCHORS: [Point2; 10] = [
    Point2::new(4.3416, -19.3696),
    Point2::new(-19.3458, -12.3970),
    Point2::new(3.4767, -17.6967),
    Point2::new(-5.2972, 5.2580),
    Point2::new(8.7053, 7.7067),
    Point2::new(-16.6368, -1.8257),
    Point2::new(-2.3268, -5.8699),
    Point2::new(-13.8557, 7.0257),
    Point2::new(7.9685, 9.1003),
    Point2::new(-0.8646, 2.1936),
];

pub const PAPER_SENSORS: usize = 80;

/// 40 m × 40 m field, 18 anchors, 80 uniformly drawn sensors, full connectivity.
pub fn paper_scenario(seed: u64) -> Scenario {
    paper_scenario_with(seed, PAPER_SENSORS)
}

/// The paper layout with a custom sensor count.
pub fn paper_scenario_with(seed: u64, n_sensors: usize) -> Scenario {
    let field = Field::centered_square(40.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sensors = (0..n_sensors).map(|_| field.sample(&mut rng)).collect();
    Scenario {
        field,
        anchors: PAPER_FIXED_ANCHORS
            .iter()
            .chain(PAPER_LISTED_ANCHORS.iter())
            .copied()
            .collect(),
        sensors,
        connectivity: Connectivity::Full,
        seed,
        notes: vec![
            "anchor (0,20) added: the layout lists seven of eight boundary anchors".into(),
            "sensor positions drawn uniformly from the seed".into(),
        ],
    }
}

/// Uniformly random anchors and sensors in a square field of side `side`.
pub fn random_scenario(seed: u64, n_sensors: usize, n_anchors: usize, side: f64, connectivity: Connectivity) -> Scenario {
    let field = Field::centered_square(side);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anchors = (0..n_anchors).map(|_| field.sample(&mut rng)).collect();
    let sensors = (0..n_sensors).map(|_| field.sample(&mut rng)).collect();
    Scenario {
        field,
        anchors,
        sensors,
        connectivity,
        seed,
        notes: Vec::new(),
    }
}

impl Scenario {
    pub fn n_sensors(&self) -> usize {
        self.sensors.len()
    }

    pub fn node(&self, id: NodeId) -> Option<Point2> {
        let n = self.sensors.len();
        match id.0 {
            0 => None,
            k if k <= n => Some(self.sensors[k - 1]),
            k => self.anchors.get(k - n - 1).copied(),
        }
    }

    pub fn anchor_map(&self) -> BTreeMap<NodeId, Point2> {
        let n = self.sensors.len();
        self.anchors
            .iter()
            .enumerate()
            .map(|(k, &p)| (NodeId(n + 1 + k), p))
            .collect()
    }

    pub fn truth(&self) -> BTreeMap<NodeId, Point2> {
        self.sensors
            .iter()
            .enumerate()
            .map(|(k, &p)| (NodeId(k + 1), p))
            .collect()
    }

    /// Connected pairs `(i, j)`, `i < j`, sensor-anchor pairs first.
    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        let n = self.sensors.len();
        let m = self.anchors.len();
        let mut out = Vec::new();
        let keep = |a: Point2, b: Point2| match self.connectivity {
            Connectivity::RadiusLimited(r) => a.distance(b) <= r,
            _ => true,
        };
        for i in 1..=n {
            for j in n + 1..=n + m {
                if keep(self.sensors[i - 1], self.anchors[j - n - 1]) {
                    out.push((NodeId(i), NodeId(j)));
                }
            }
        }
        if self.connectivity != Connectivity::SensorAnchorOnly {
            for i in 1..=n {
                for j in i + 1..=n {
                    if keep(self.sensors[i - 1], self.sensors[j - 1]) {
                        out.push((NodeId(i), NodeId(j)));
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        for p in self.anchors.iter().chain(&self.sensors) {
            p.validate()?;
            if !self.field.contains(*p) {
                return invalid(format!("node ({}, {}) lies outside the field", p.x, p.y));
            }
        }
        if let Connectivity::RadiusLimited(r) = self.connectivity {
            if !(r.is_finite() && r > 0.0) {
                return invalid(format!("connectivity radius must be positive, got {r}"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }
}

/// LOS Gaussian noise plus an optional positive NLOS bias.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma: f64,
    pub nlos_bias: (f64, f64),
    pub nlos_fraction: f64,
    /// Smallest distance a measurement may take.
    pub floor: f64,
}

pub const DEFAULT_FLOOR: f64 = 1e-6;

impl Default for NoiseModel {
    /// Noise power −40 dB read as variance 1e-4 m² (σ = 0.01 m), bias
    /// U[0, 0.5] m on every edge.
    fn default() -> Self {
        Self {
            sigma: 0.01,
            nlos_bias: (0.0, 0.5),
            nlos_fraction: 1.0,
            floor: DEFAULT_FLOOR,
        }
    }
}

impl NoiseModel {
    /// Standard deviation for a noise power given in dB (variance `10^(dB/10)`).
    pub fn sigma_from_db(db: f64) -> f64 {
        10f64.powf(db / 10.0).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.nlos_bias;
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return invalid(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(a.is_finite() && b.is_finite() && a >= 0.0 && a <= b) {
            return invalid(format!("bias interval [{a}, {b}] must satisfy 0 ≤ lo ≤ hi"));
        }
        if !(0.0..=1.0).contains(&self.nlos_fraction) {
            return invalid(format!("nlos fraction {} outside [0, 1]", self.nlos_fraction));
        }
        if !(self.floor.is_finite() && self.floor > 0.0) {
            return invalid("measurement floor must be positive");
        }
        Ok(())
    }
}

/// `r + n + δ`, clamped below at `floor`.
pub fn noisy_range(r: f64, n: f64, delta: f64, floor: f64) -> f64 {
    (r + n + delta).max(floor)
}

/// Draws one noise pair `(n, δ)`; `δ = 0` for LOS edges.
pub fn draw_noise(noise: &NoiseModel, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let n = Normal::new(0.0, noise.sigma).expect("validated sigma").sample(rng);
    let nlos = rng.random_bool(noise.nlos_fraction);
    let delta = if nlos {
        let (a, b) = noise.nlos_bias;
        if b > a {
            Uniform::new_inclusive(a, b).expect("validated interval").sample(rng)
        } else {
            a
        }
    } else {
        0.0
    };
    (n, delta)
}

/// Noisy ranges for every connected pair; the kind is left unknown.
pub fn measure(scenario: &Scenario, noise: &NoiseModel, seed: u64) -> Result<Vec<RangeMeasurement>> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(scenario
        .edges()
        .into_iter()
        .map(|(i, j)| {
            let r = scenario.node(i).expect("edge endpoint").distance(scenario.node(j).expect("edge endpoint"));
            let (n, delta) = draw_noise(noise, &mut rng);
            RangeMeasurement::new(i.0, j.0, noisy_range(r, n, delta, noise.floor))
        })
        .collect())
}

/// Mean squared position error over the sensors in `truth`.
pub fn mse(estimates: &BTreeMap<NodeId, Point2>, truth: &BTreeMap<NodeId, Point2>) -> Result<f64> {
    if truth.is_empty() {
        return invalid("mse of an empty sensor set");
    }
    Ok(squared_errors(estimates, truth)?.values().sum::<f64>() / truth.len() as f64)
}

pub fn squared_errors(
    estimates: &BTreeMap<NodeId, Point2>,
    truth: &BTreeMap<NodeId, Point2>,
) -> Result<BTreeMap<NodeId, f64>> {
    if estimates.len() != truth.len() {
        return invalid(format!("{} estimates for {} sensors", estimates.len(), truth.len()));
    }
    truth
        .iter()
        .map(|(id, t)| match estimates.get(id) {
            Some(e) => Ok((*id, (*e - *t).norm_sq())),
            None => invalid(format!("no estimate for sensor {id}")),
        })
        .collect()
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// The `index`-th output (0-based) of a SplitMix64 generator seeded with `master`.
pub fn split_seed(master: u64, index: u64) -> u64 {
    mix64(master.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

/// Where the per-trial geometry comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScenarioSpec {
    /// Paper layout, sensors redrawn per trial.
    Paper { n_sensors: usize },
    /// Random anchors and sensors redrawn per trial.
    Random {
        n_sensors: usize,
        n_anchors: usize,
        side: f64,
        connectivity: Connectivity,
    },
    /// Fixed geometry; only the noise changes between trials.
    Fixed { scenario: Scenario },
}

impl ScenarioSpec {
    fn instantiate(&self, seed: u64) -> Scenario {
        match self {
            ScenarioSpec::Paper { n_sensors } => paper_scenario_with(seed, *n_sensors),
            ScenarioSpec::Random {
                n_sensors,
                n_anchors,
                side,
                connectivity,
            } => random_scenario(seed, *n_sensors, *n_anchors, *side, *connectivity),
            ScenarioSpec::Fixed { scenario } => scenario.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    /// `split_seed(master, index)`.
    pub seed: u64,
    /// Scenario seed (`split_seed(seed, 0)`); unused for fixed scenarios.
    pub scenario_seed: u64,
    /// Noise seed (`split_seed(seed, 1)`).
    pub noise_seed: u64,
    pub mse: f64,
    pub status: Status,
    pub iterations: usize,
    pub objective_value: f64,
    pub inconsistent_edges: usize,
    #[serde(skip)]
    pub scenario: Option<Scenario>,
    #[serde(skip)]
    pub report: Option<EstimationReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MseStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl MseStats {
    /// Sample statistics; `std` uses the `n − 1` denominator and is 0 for one trial.
    pub fn from_values(v: &[f64]) -> Self {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = if v.len() > 1 {
            v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            std: var.sqrt(),
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub master_seed: u64,
    pub seed_rule: String,
    pub spec: ScenarioSpec,
    pub noise: NoiseModel,
    pub noise_reading: String,
    pub config: EstimatorConfig,
    pub mse: MseStats,
    pub all_optimal: bool,
    pub trials: Vec<TrialRecord>,
}

pub const SEED_RULE: &str = "trial k uses seed_k = splitmix64(master, k); scenario seed = splitmix64(seed_k, 0); noise seed = splitmix64(seed_k, 1)";

/// Runs `trials` independent localizations; trials execute in parallel but
/// results are ordered and bitwise independent of scheduling.
pub fn run_batch(
    spec: &ScenarioSpec,
    noise: &NoiseModel,
    config: &EstimatorConfig,
    trials: usize,
    master_seed: u64,
) -> Result<BatchReport> {
    if trials == 0 {
        return invalid("trials must be at least 1");
    }
    noise.validate()?;
    let records: Vec<Result<TrialRecord>> = (0..trials)
        .into_par_iter()
        .map(|k| run_trial(spec, noise, config, k, master_seed))
        .collect();
    let trials: Vec<TrialRecord> = records.into_iter().collect::<Result<_>>()?;
    let mses: Vec<f64> = trials.iter().map(|t| t.mse).collect();
    Ok(BatchReport {
        master_seed,
        seed_rule: SEED_RULE.into(),
        spec: spec.clone(),
        noise: *noise,
        noise_reading: format!(
            "LOS noise sigma {} m (noise power in dB read as variance 10^(dB/10) m²); NLOS bias uniform on [{}, {}] m with probability {}",
            noise.sigma, noise.nlos_bias.0, noise.nlos_bias.1, noise.nlos_fraction
        ),
        config: config.clone(),
        mse: MseStats::from_values(&mses),
        all_optimal: trials.iter().all(|t| t.status == Status::Optimal),
        trials,
    })
}

fn run_trial(
    spec: &ScenarioSpec,
    noise: &NoiseModel,
    config: &EstimatorConfig,
    index: usize,
    master_seed: u64,
) -> Result<TrialRecord> {
    let seed = split_seed(master_seed, index as u64);
    let scenario_seed = split_seed(seed, 0);
    let noise_seed = split_seed(seed, 1);
    let scenario = spec.instantiate(scenario_seed);
    let measurements = measure(&scenario, noise, noise_seed)?;
    let anchors = match config.variant {
        AnchorVariant::KnownAnchors => AnchorInput::Known(scenario.anchor_map()),
        AnchorVariant::UncertainAnchors => AnchorInput::priors_from(&scenario.anchor_map(), config.anchor_radius, config.enforce_ball),
    };
    let truth = scenario.truth();
    let report = localize(&measurements, &anchors, scenario.n_sensors(), Some(&truth), config)?;
    let summary = report.solver.as_ref();
    Ok(TrialRecord {
        index,
        seed,
        scenario_seed,
        noise_seed,
        mse: report.mse.unwrap_or(0.0),
        status: report.status,
        iterations: summary.map_or(0, |s| s.iterations),
        objective_value: summary.map_or(0.0, |s| s.objective_value),
        inconsistent_edges: report.inconsistent_edges.len(),
        scenario: Some(scenario),
        report: Some(report),
    })
}
