//! Labeled synthetic maneuvers.
//!
//! Every family is constant-speed kinematics sampled at [`DT`]: straight
//! lines, constant-curvature arcs (turns, u-turns) and a half-cosine lateral
//! shift for lane changes. Isotropic Gaussian noise is added per point.
//!
//! A dataset spec is JSON:
//!
//! ```json
//! {
//!   "specs": [
//!     { "family": "left-turn", "speed": [4.0, 6.0], "curvature": [0.03, 0.06],
//!       "noise_sigma": 0.05, "t": 60, "count": 500, "seed": 7 }
//!   ]
//! }
//! ```
//!
//! Omitted fields take the family defaults from [`ManeuverSpec::new`].

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, Trajectory};
use crate::rng;

/// Sampling interval in seconds.
pub const DT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Straight,
    LeftTurn,
    RightTurn,
    UTurn,
    LaneChangeLeft,
    LaneChangeRight,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Straight,
        Family::LeftTurn,
        Family::RightTurn,
        Family::UTurn,
        Family::LaneChangeLeft,
        Family::LaneChangeRight,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Straight => "straight",
            Family::LeftTurn => "left-turn",
            Family::RightTurn => "right-turn",
            Family::UTurn => "u-turn",
            Family::LaneChangeLeft => "lane-change-left",
            Family::LaneChangeRight => "lane-change-right",
        }
    }

    /// The mirror-image family about the direction of travel.
    pub fn mirror(self) -> Family {
        match self {
            Family::LeftTurn => Family::RightTurn,
            Family::RightTurn => Family::LeftTurn,
            Family::LaneChangeLeft => Family::LaneChangeRight,
            Family::LaneChangeRight => Family::LaneChangeLeft,
            f => f,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown maneuver family {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManeuverSpec {
    pub family: Family,
    /// m/s, sampled uniformly per trajectory.
    #[serde(default = "default_speed")]
    pub speed: [f64; 2],
    /// Curvature magnitude in 1/m; the family fixes the sign. Unused by
    /// straight and lane-change families.
    #[serde(default)]
    pub curvature: Option<[f64; 2]>,
    /// Lateral shift of a lane change, meters.
    #[serde(default = "default_lane_offset")]
    pub lane_offset: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default = "default_t")]
    pub t: usize,
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
    /// Random start position and heading before noise.
    #[serde(default = "default_true")]
    pub random_pose: bool,
}

fn default_speed() -> [f64; 2] {
    [4.0, 6.0]
}
fn default_lane_offset() -> f64 {
    3.5
}
fn default_t() -> usize {
    60
}
fn default_true() -> bool {
    true
}

impl ManeuverSpec {
    pub fn new(family: Family, count: usize, seed: u64) -> Self {
        Self {
            family,
            speed: default_speed(),
            curvature: None,
            lane_offset: default_lane_offset(),
            noise_sigma: 0.0,
            t: default_t(),
            count,
            seed,
            random_pose: true,
        }
    }

    /// Curvature magnitude range in effect.
    pub fn curvature_range(&self) -> [f64; 2] {
        self.curvature.unwrap_or(match self.family {
            Family::LeftTurn | Family::RightTurn => [0.03, 0.06],
            Family::UTurn => [0.09, 0.11],
            _ => [0.0, 0.0],
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("{} spec: {m}", self.family)));
        let [lo, hi] = self.speed;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad(format!("speed range must be positive and ordered, got [{lo}, {hi}]"));
        }
        let [clo, chi] = self.curvature_range();
        if !(clo >= 0.0 && chi >= clo && chi.is_finite()) {
            return bad(format!(
                "curvature range must be nonnegative and ordered, got [{clo}, {chi}]"
            ));
        }
        if self.t < 2 {
            return bad(format!("t must be >= 2, got {}", self.t));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        if !self.lane_offset.is_finite() {
            return bad("lane_offset must be finite".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub specs: Vec<ManeuverSpec>,
}

fn uniform(rng: &mut rng::Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Noise-free path starting at the origin heading along +x.
pub fn archetype(family: Family, speed: f64, curvature: f64, lane_offset: f64, t: usize) -> Vec<Point> {
    let total = (t - 1) as f64 * DT;
    (0..t)
        .map(|i| {
            let time = i as f64 * DT;
            let s = speed * time;
            match family {
                Family::Straight => Point::new(s, 0.0),
                Family::LeftTurn | Family::RightTurn | Family::UTurn => {
                    let k = if family == Family::RightTurn {
                        -curvature
                    } else {
                        curvature
                    };
                    if k == 0.0 {
                        Point::new(s, 0.0)
                    } else {
                        Point::new((k * s).sin() / k, (1.0 - (k * s).cos()) / k)
                    }
                }
                Family::LaneChangeLeft | Family::LaneChangeRight => {
                    let side = if family == Family::LaneChangeLeft { 1.0 } else { -1.0 };
                    let frac = if total > 0.0 { time / total } else { 0.0 };
                    Point::new(s, side * lane_offset * (1.0 - (PI * frac).cos()) / 2.0)
                }
            }
        })
        .collect()
}

fn generate_one(spec: &ManeuverSpec, spec_index: usize) -> Result<Vec<Trajectory>> {
    spec.validate()?;
    let mut rng = rng::indexed_substream(spec.seed, "data", spec_index as u64);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let curv = spec.curvature_range();
    (0..spec.count)
        .map(|i| {
            let speed = uniform(&mut rng, spec.speed);
            let k = uniform(&mut rng, curv);
            let mut pts = archetype(spec.family, speed, k, spec.lane_offset, spec.t);
            if spec.random_pose {
                let heading = rng.gen_range(-PI..PI);
                let origin = Point::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0));
                let (s, c) = heading.sin_cos();
                for p in &mut pts {
                    *p = Point::new(origin.x + c * p.x - s * p.y, origin.y + s * p.x + c * p.y);
                }
            }
            if spec.noise_sigma > 0.0 {
                for p in &mut pts {
                    p.x += noise.sample(&mut rng);
                    p.y += noise.sample(&mut rng);
                }
            }
            let id = format!("{}-{spec_index}-{i:05}", spec.family);
            Trajectory::new(id, Some(spec.family.name().to_string()), pts)
        })
        .collect()
}

/// Generates all specs in order; spec `i` draws from its own substream keyed by `(seed, i)`.
pub fn generate(specs: &[ManeuverSpec]) -> Result<Vec<Trajectory>> {
    let per_spec: Vec<Vec<Trajectory>> = specs
        .par_iter()
        .enumerate()
        .map(|(i, s)| generate_one(s, i))
        .collect::<Result<_>>()?;
    Ok(per_spec.into_iter().flatten().collect())
}

/// Four families (straight, left, right, u-turn) with mirror-image turns.
pub fn mirror_turn_specs(count_per_family: usize, noise_sigma: f64, t: usize, seed: u64) -> Vec<ManeuverSpec> {
    [Family::Straight, Family::LeftTurn, Family::RightTurn, Family::UTurn]
        .into_iter()
        .map(|f| ManeuverSpec {
            noise_sigma,
            t,
            ..ManeuverSpec::new(f, count_per_family, seed)
        })
        .collect()
}

/// Heading (radians) of the first segment; used to express a path in its
/// approach frame.
pub fn approach_heading(points: &[Point]) -> f64 {
    let (a, b) = (points[0], points[1]);
    (b.y - a.y).atan2(b.x - a.x)
}

/// Rotates `points` so the first segment points along +x, with the start at the origin.
pub fn to_approach_frame(points: &[Point]) -> Vec<Point> {
    let h = approach_heading(points);
    let (s, c) = (-h).sin_cos();
    let o = points[0];
    points
        .iter()
        .map(|p| {
            let (x, y) = (p.x - o.x, p.y - o.y);
            Point::new(c * x - s * y, s * x + c * y)
        })
        .collect()
}
