//! Per-edge distance intervals derived from raw ranges and anchor geometry.
//!
//! Upper bounds add a measurement-noise allowance to each observed range (an
//! NLOS bias only ever lengthens a range, so the observation itself already
//! bounds the true distance from above up to noise). Lower bounds for
//! sensor-anchor edges come from pairs of range circles: the sensor lies
//! inside the disc of radius `u_ik` around anchor `k`, so its distance to
//! anchor `j` is at least `‖a_j − a_k‖ − u_ik`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{NodeId, Point2};

/// Prior knowledge about the propagation condition of one range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasurementKind {
    #[default]
    Unknown,
    LosPrior,
    NlosPrior,
}

impl MeasurementKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MeasurementKind::Unknown => "unknown",
            MeasurementKind::LosPrior => "los",
            MeasurementKind::NlosPrior => "nlos",
        }
    }
}

impl FromStr for MeasurementKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "unknown" | "" => Ok(MeasurementKind::Unknown),
            "los" | "los-prior" => Ok(MeasurementKind::LosPrior),
            "nlos" | "nlos-prior" => Ok(MeasurementKind::NlosPrior),
            other => invalid(format!("unknown measurement kind '{other}'")),
        }
    }
}

/// One observed edge length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeMeasurement {
    pub i: NodeId,
    pub j: NodeId,
    pub distance: f64,
    #[serde(default)]
    pub kind: MeasurementKind,
    #[serde(default = "default_weight")]
    pub weight: f64,
}

fn default_weight() -> f64 {
    1.0
}

impl RangeMeasurement {
    pub fn new(i: usize, j: usize, distance: f64) -> Self {
        Self {
            i: NodeId(i),
            j: NodeId(j),
            distance,
            kind: MeasurementKind::Unknown,
            weight: 1.0,
        }
    }

    pub fn with_kind(mut self, kind: MeasurementKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.i == self.j {
            return invalid(format!("self-loop measurement on node {}", self.i));
        }
        if !(self.distance.is_finite() && self.distance > 0.0) {
            return invalid(format!(
                "measurement ({}, {}) has nonpositive distance {}",
                self.i, self.j, self.distance
            ));
        }
        if !(self.weight.is_finite() && self.weight >= 0.0) {
            return invalid(format!(
                "measurement ({}, {}) has invalid weight {}",
                self.i, self.j, self.weight
            ));
        }
        Ok(())
    }

    /// Endpoints ordered so that the smaller id comes first.
    pub fn key(&self) -> (NodeId, NodeId) {
        if self.i < self.j {
            (self.i, self.j)
        } else {
            (self.j, self.i)
        }
    }
}

/// Distance interval `[lower, upper]` for one edge, with `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceBounds {
    pub i: NodeId,
    pub j: NodeId,
    pub lower: f64,
    pub upper: f64,
    /// False when the geometric lower bound exceeded the upper bound and was clamped.
    pub consistent: bool,
    /// Objective weight carried over from the measurement.
    #[serde(default = "default_weight")]
    pub weight: f64,
}

impl DistanceBounds {
    pub fn new(i: usize, j: usize, lower: f64, upper: f64) -> Self {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        Self {
            i: NodeId(i),
            j: NodeId(j),
            lower,
            upper,
            consistent: true,
            weight: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.i == self.j {
            return invalid(format!("bounds on self-loop {}", self.i));
        }
        let ok = self.lower.is_finite()
            && self.upper.is_finite()
            && self.lower >= 0.0
            && self.lower <= self.upper
            && self.weight.is_finite()
            && self.weight >= 0.0;
        if ok {
            Ok(())
        } else {
            invalid(format!(
                "invalid bounds on ({}, {}): lower {} upper {} weight {}",
                self.i, self.j, self.lower, self.upper, self.weight
            ))
        }
    }
}

/// How the per-edge noise allowance `n^U` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "kebab-case")]
pub enum NoiseBoundPolicy {
    /// Fixed allowance in meters.
    Absolute(f64),
    /// Multiple of the LOS noise standard deviation.
    SigmaMultiple(f64),
}

impl Default for NoiseBoundPolicy {
    fn default() -> Self {
        NoiseBoundPolicy::SigmaMultiple(3.0)
    }
}

impl NoiseBoundPolicy {
    /// Resolves the allowance in meters for a given LOS sigma.
    pub fn resolve(&self, sigma: f64) -> Result<f64> {
        let nu = match *self {
            NoiseBoundPolicy::Absolute(v) => v,
            NoiseBoundPolicy::SigmaMultiple(k) => {
                if !(k.is_finite() && k > 0.0) {
                    return invalid(format!("sigma multiplier must be positive, got {k}"));
                }
                k * sigma
            }
        };
        if nu.is_finite() && nu > 0.0 {
            Ok(nu)
        } else {
            invalid(format!("noise allowance must be positive, got {nu}"))
        }
    }
}

impl fmt::Display for NoiseBoundPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseBoundPolicy::Absolute(v) => write!(f, "abs:{v}"),
            NoiseBoundPolicy::SigmaMultiple(k) => write!(f, "sigma:{k}"),
        }
    }
}

impl FromStr for NoiseBoundPolicy {
    type Err = Error;

    /// Parses `abs:<meters>` or `sigma:<multiplier>`.
    fn from_str(s: &str) -> Result<Self> {
        let (mode, value) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidInput(format!("expected abs:<v> or sigma:<k>, got '{s}'")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::InvalidInput(format!("bad number in '{s}'")))?;
        if !(value.is_finite() && value > 0.0) {
            return invalid(format!("noise bound value must be positive, got '{s}'"));
        }
        match mode.trim() {
            "abs" => Ok(NoiseBoundPolicy::Absolute(value)),
            "sigma" => Ok(NoiseBoundPolicy::SigmaMultiple(value)),
            other => invalid(format!("unknown noise bound mode '{other}'")),
        }
    }
}

/// Upper bound on the true distance of one edge.
///
/// NLOS-flagged ranges are used verbatim; everything else gets the noise
/// allowance added.
pub fn upper_bound(measurement: &RangeMeasurement, policy: NoiseBoundPolicy, sigma: f64) -> Result<f64> {
    if !(measurement.distance.is_finite() && measurement.distance > 0.0) {
        return invalid(format!("nonpositive distance {}", measurement.distance));
    }
    let nu = policy.resolve(sigma)?;
    Ok(match measurement.kind {
        MeasurementKind::NlosPrior => measurement.distance,
        MeasurementKind::Unknown | MeasurementKind::LosPrior => measurement.distance + nu,
    })
}

/// Lower bound on the distance from anchor `a_j` to a sensor known to lie
/// within `upper_ik` of anchor `a_k`.
pub fn pairwise_anchor_lower_bound(a_j: Point2, a_k: Point2, upper_ik: f64) -> Result<f64> {
    if a_j == a_k {
        return invalid("coincident anchors");
    }
    if !(upper_ik.is_finite() && upper_ik > 0.0) {
        return invalid(format!("upper bound must be positive, got {upper_ik}"));
    }
    Ok(disc_gap(a_j, a_k, upper_ik))
}

fn disc_gap(a_j: Point2, a_k: Point2, radius: f64) -> f64 {
    (a_j.distance(a_k) - radius).max(0.0)
}

/// Sensors need more than two anchors in range before geometric lower bounds apply.
pub const MIN_ANCHORS_FOR_LOWER_BOUND: usize = 3;

/// Derives `[lower, upper]` for every measured edge.
///
/// Output is in input order with endpoints normalized to `i < j`.
pub fn derive_bounds(
    measurements: &[RangeMeasurement],
    anchors: &BTreeMap<NodeId, Point2>,
    policy: NoiseBoundPolicy,
    sigma: f64,
) -> Result<Vec<DistanceBounds>> {
    let mut seen = BTreeSet::new();
    let mut uppers = Vec::with_capacity(measurements.len());
    // sensor -> [(anchor, upper)]
    let mut anchor_edges: BTreeMap<NodeId, Vec<(NodeId, f64)>> = BTreeMap::new();

    for m in measurements {
        m.validate()?;
        if !seen.insert(m.key()) {
            let (a, b) = m.key();
            return invalid(format!("duplicate measurement for edge ({a}, {b})"));
        }
        let u = upper_bound(m, policy, sigma)?;
        uppers.push(u);
        let (lo, hi) = m.key();
        match (anchors.contains_key(&lo), anchors.contains_key(&hi)) {
            (true, true) => {
                return invalid(format!("measurement between two anchors ({lo}, {hi})"));
            }
            (false, true) => anchor_edges.entry(lo).or_default().push((hi, u)),
            (true, false) => anchor_edges.entry(hi).or_default().push((lo, u)),
            (false, false) => {}
        }
    }

    let mut out = Vec::with_capacity(measurements.len());
    for (m, &upper) in measurements.iter().zip(&uppers) {
        let (lo, hi) = m.key();
        let (sensor, anchor) = if anchors.contains_key(&hi) {
            (lo, Some(hi))
        } else if anchors.contains_key(&lo) {
            (hi, Some(lo))
        } else {
            (lo, None)
        };

        let mut lower = 0.0;
        if let Some(anchor) = anchor {
            let in_range = &anchor_edges[&sensor];
            if in_range.len() >= MIN_ANCHORS_FOR_LOWER_BOUND {
                let a_j = anchors[&anchor];
                for &(k, upper_ik) in in_range {
                    if k != anchor {
                        lower = f64::max(lower, disc_gap(a_j, anchors[&k], upper_ik));
                    }
                }
            }
        }

        let consistent = lower <= upper;
        out.push(DistanceBounds {
            i: lo,
            j: hi,
            lower: lower.min(upper),
            upper,
            consistent,
            weight: m.weight,
        });
    }
    Ok(out)
}
