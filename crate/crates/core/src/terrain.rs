//! Terrain physical properties, their qualitative levels, and the low-level
//! sentence template used for training descriptions.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed value range of one physical property.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    /// Equal-width 5-bin index. Bins are half-open except the top one.
    fn bin(&self, v: f64) -> usize {
        let w = self.width() / PropertyLevel::COUNT as f64;
        let idx = ((v - self.lo) / w).floor();
        (idx.max(0.0) as usize).min(PropertyLevel::COUNT - 1)
    }

    fn bin_midpoint(&self, bin: usize) -> f64 {
        let w = self.width() / PropertyLevel::COUNT as f64;
        self.lo + w * (bin as f64 + 0.5)
    }
}

pub const RESTITUTION_RANGE: Range = Range::new(0.0, 0.2);
pub const LATERAL_FRICTION_RANGE: Range = Range::new(0.0, 1.0);
pub const ROLLING_FRICTION_RANGE: Range = Range::new(2.0e4, 1.6e5);
pub const STIFFNESS_RANGE: Range = Range::new(0.0, 1.0);
pub const DAMPING_RANGE: Range = Range::new(0.0, 0.5);

/// Spatially uniform physical properties of the ground for one episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTerrainParams", into = "RawTerrainParams")]
pub struct TerrainParams {
    restitution: f64,
    lateral_friction: f64,
    rolling_friction: f64,
    stiffness: f64,
    damping: f64,
}

#[derive(Serialize, Deserialize)]
struct RawTerrainParams {
    restitution: f64,
    lateral_friction: f64,
    rolling_friction: f64,
    stiffness: f64,
    damping: f64,
}

impl TryFrom<RawTerrainParams> for TerrainParams {
    type Error = Error;

    fn try_from(r: RawTerrainParams) -> Result<Self> {
        TerrainParams::new(
            r.restitution,
            r.lateral_friction,
            r.rolling_friction,
            r.stiffness,
            r.damping,
        )
    }
}

impl From<TerrainParams> for RawTerrainParams {
    fn from(t: TerrainParams) -> Self {
        RawTerrainParams {
            restitution: t.restitution,
            lateral_friction: t.lateral_friction,
            rolling_friction: t.rolling_friction,
            stiffness: t.stiffness,
            damping: t.damping,
        }
    }
}

impl TerrainParams {
    pub fn new(
        restitution: f64,
        lateral_friction: f64,
        rolling_friction: f64,
        stiffness: f64,
        damping: f64,
    ) -> Result<Self> {
        let checks = [
            ("restitution", restitution, RESTITUTION_RANGE),
            ("lateral_friction", lateral_friction, LATERAL_FRICTION_RANGE),
            ("rolling_friction", rolling_friction, ROLLING_FRICTION_RANGE),
            ("stiffness", stiffness, STIFFNESS_RANGE),
            ("damping", damping, DAMPING_RANGE),
        ];
        for (name, v, range) in checks {
            if !range.contains(v) {
                return Err(Error::Argument(format!(
                    "{name} = {v} outside [{}, {}]",
                    range.lo, range.hi
                )));
            }
        }
        Ok(Self {
            restitution,
            lateral_friction,
            rolling_friction,
            stiffness,
            damping,
        })
    }

    pub fn restitution(&self) -> f64 {
        self.restitution
    }
    pub fn lateral_friction(&self) -> f64 {
        self.lateral_friction
    }
    pub fn rolling_friction(&self) -> f64 {
        self.rolling_friction
    }
    pub fn stiffness(&self) -> f64 {
        self.stiffness
    }
    pub fn damping(&self) -> f64 {
        self.damping
    }

    /// Every property at the middle of its range.
    pub fn nominal() -> Self {
        Self {
            restitution: RESTITUTION_RANGE.midpoint(),
            lateral_friction: LATERAL_FRICTION_RANGE.midpoint(),
            rolling_friction: ROLLING_FRICTION_RANGE.midpoint(),
            stiffness: STIFFNESS_RANGE.midpoint(),
            damping: DAMPING_RANGE.midpoint(),
        }
    }

    pub fn with_lateral_friction(self, v: f64) -> Result<Self> {
        Self::new(self.restitution, v, self.rolling_friction, self.stiffness, self.damping)
    }

    pub fn with_damping(self, v: f64) -> Result<Self> {
        Self::new(self.restitution, self.lateral_friction, self.rolling_friction, self.stiffness, v)
    }

    pub fn with_restitution(self, v: f64) -> Result<Self> {
        Self::new(v, self.lateral_friction, self.rolling_friction, self.stiffness, self.damping)
    }

    pub fn with_stiffness(self, v: f64) -> Result<Self> {
        Self::new(self.restitution, self.lateral_friction, self.rolling_friction, v, self.damping)
    }
}

/// Qualitative grade of a property.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PropertyLevel {
    VeryLow,
    Low,
    Medium,
    High,
    VeryHigh,
}

impl PropertyLevel {
    pub const COUNT: usize = 5;
    pub const ALL: [PropertyLevel; 5] = [
        PropertyLevel::VeryLow,
        PropertyLevel::Low,
        PropertyLevel::Medium,
        PropertyLevel::High,
        PropertyLevel::VeryHigh,
    ];

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn from_ordinal(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Next grade up, saturating at `VeryHigh`.
    pub fn succ(self) -> Self {
        Self::ALL[(self.ordinal() + 1).min(4)]
    }

    /// Next grade down, saturating at `VeryLow`.
    pub fn pred(self) -> Self {
        Self::ALL[self.ordinal().saturating_sub(1)]
    }

    /// Shift by a signed number of grades with saturation.
    pub fn shift(self, by: i32) -> Self {
        let i = (self.ordinal() as i32 + by).clamp(0, 4);
        Self::ALL[i as usize]
    }

    /// Uppercase wire token, e.g. `VERY_LOW`.
    pub fn token(self) -> &'static str {
        match self {
            PropertyLevel::VeryLow => "VERY_LOW",
            PropertyLevel::Low => "LOW",
            PropertyLevel::Medium => "MEDIUM",
            PropertyLevel::High => "HIGH",
            PropertyLevel::VeryHigh => "VERY_HIGH",
        }
    }

    /// Lowercase words used in sentences, e.g. `very low`.
    pub fn words(self) -> &'static str {
        match self {
            PropertyLevel::VeryLow => "very low",
            PropertyLevel::Low => "low",
            PropertyLevel::Medium => "medium",
            PropertyLevel::High => "high",
            PropertyLevel::VeryHigh => "very high",
        }
    }
}

impl fmt::Display for PropertyLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for PropertyLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace([' ', '-'], "_");
        Self::ALL
            .into_iter()
            .find(|l| l.token() == norm)
            .ok_or_else(|| Error::Argument(format!("unknown level {s:?}")))
    }
}

/// The qualitatively described properties, in embedding block order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    Restitution,
    Friction,
    Stiffness,
    Damping,
    /// Only present in the optional five-block layout; graded with friction.
    RollingFriction,
}

impl Property {
    pub const QUALITATIVE: [Property; 4] = [
        Property::Restitution,
        Property::Friction,
        Property::Stiffness,
        Property::Damping,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Property::Restitution => "restitution",
            Property::Friction => "friction",
            Property::Stiffness => "stiffness",
            Property::Damping => "damping",
            Property::RollingFriction => "rolling_friction",
        }
    }
}

/// Discrete image of [`TerrainParams`]: one grade per qualitative property.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PropertyLevels {
    pub restitution: PropertyLevel,
    pub friction: PropertyLevel,
    pub stiffness: PropertyLevel,
    pub damping: PropertyLevel,
}

impl Default for PropertyLevels {
    fn default() -> Self {
        Self::uniform(PropertyLevel::Medium)
    }
}

impl PropertyLevels {
    pub fn new(
        restitution: PropertyLevel,
        friction: PropertyLevel,
        stiffness: PropertyLevel,
        damping: PropertyLevel,
    ) -> Self {
        Self {
            restitution,
            friction,
            stiffness,
            damping,
        }
    }

    pub fn uniform(level: PropertyLevel) -> Self {
        Self::new(level, level, level, level)
    }

    pub fn get(&self, p: Property) -> PropertyLevel {
        match p {
            Property::Restitution => self.restitution,
            Property::Friction | Property::RollingFriction => self.friction,
            Property::Stiffness => self.stiffness,
            Property::Damping => self.damping,
        }
    }

    pub fn set(&mut self, p: Property, level: PropertyLevel) {
        match p {
            Property::Restitution => self.restitution = level,
            Property::Friction | Property::RollingFriction => self.friction = level,
            Property::Stiffness => self.stiffness = level,
            Property::Damping => self.damping = level,
        }
    }

    /// All 625 combinations, restitution varying slowest.
    pub fn all() -> impl Iterator<Item = PropertyLevels> {
        PropertyLevel::ALL.into_iter().flat_map(|r| {
            PropertyLevel::ALL.into_iter().flat_map(move |f| {
                PropertyLevel::ALL.into_iter().flat_map(move |s| {
                    PropertyLevel::ALL
                        .into_iter()
                        .map(move |d| PropertyLevels::new(r, f, s, d))
                })
            })
        })
    }

    /// Field-wise `<=`.
    pub fn le(&self, other: &PropertyLevels) -> bool {
        Property::QUALITATIVE
            .iter()
            .all(|&p| self.get(p) <= other.get(p))
    }
}

/// Draw every property uniformly from its range.
///
/// Fields are drawn in the fixed order restitution, lateral friction,
/// rolling friction, stiffness, damping.
pub fn sample_terrain<R: Rng + ?Sized>(rng: &mut R) -> TerrainParams {
    let mut draw = |r: Range| r.lo + rng.random::<f64>() * r.width();
    TerrainParams {
        restitution: draw(RESTITUTION_RANGE),
        lateral_friction: draw(LATERAL_FRICTION_RANGE),
        rolling_friction: draw(ROLLING_FRICTION_RANGE),
        stiffness: draw(STIFFNESS_RANGE),
        damping: draw(DAMPING_RANGE),
    }
}

/// `n` terrains whose levels cover every grade of every property when
/// `n >= 5`.
///
/// Per property, the first five scenarios take one bin each and the rest
/// take uniformly random bins; the assignment is shuffled independently per
/// property and the value is uniform within its bin. Properties are drawn
/// in the same field order as [`sample_terrain`].
pub fn sample_stratified<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<TerrainParams> {
    let mut column = |r: Range| -> Vec<f64> {
        let mut bins: Vec<usize> = (0..n)
            .map(|i| if i < PropertyLevel::COUNT { i } else { rng.random_range(0..PropertyLevel::COUNT) })
            .collect();
        bins.shuffle(rng);
        let w = r.width() / PropertyLevel::COUNT as f64;
        bins.into_iter()
            .map(|b| (r.lo + w * (b as f64 + rng.random::<f64>())).min(r.hi))
            .collect()
    };
    let restitution = column(RESTITUTION_RANGE);
    let lateral = column(LATERAL_FRICTION_RANGE);
    let rolling = column(ROLLING_FRICTION_RANGE);
    let stiffness = column(STIFFNESS_RANGE);
    let damping = column(DAMPING_RANGE);
    (0..n)
        .map(|i| TerrainParams {
            restitution: restitution[i],
            lateral_friction: lateral[i],
            rolling_friction: rolling[i],
            stiffness: stiffness[i],
            damping: damping[i],
        })
        .collect()
}

pub fn quantize(params: &TerrainParams) -> PropertyLevels {
    let level = |r: Range, v: f64| PropertyLevel::ALL[r.bin(v)];
    PropertyLevels {
        restitution: level(RESTITUTION_RANGE, params.restitution),
        friction: level(LATERAL_FRICTION_RANGE, params.lateral_friction),
        stiffness: level(STIFFNESS_RANGE, params.stiffness),
        damping: level(DAMPING_RANGE, params.damping),
    }
}

/// Representative physical parameters for a set of levels: each property
/// sits at its bin midpoint, and rolling friction follows the friction grade.
pub fn levels_to_params(levels: &PropertyLevels) -> TerrainParams {
    let mid = |r: Range, l: PropertyLevel| r.bin_midpoint(l.ordinal());
    TerrainParams {
        restitution: mid(RESTITUTION_RANGE, levels.restitution),
        lateral_friction: mid(LATERAL_FRICTION_RANGE, levels.friction),
        rolling_friction: mid(ROLLING_FRICTION_RANGE, levels.friction),
        stiffness: mid(STIFFNESS_RANGE, levels.stiffness),
        damping: mid(DAMPING_RANGE, levels.damping),
    }
}

pub fn describe_low_level(levels: &PropertyLevels) -> String {
    format!(
        "This environment has {} restitution when collision, {} friction, {} stiffness level, and {} damping.",
        levels.restitution.words(),
        levels.friction.words(),
        levels.stiffness.words(),
        levels.damping.words(),
    )
}
