//! Corruption kinds, dataset profiles and their severity parameters.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorruptionKind {
    Sunlight,
    Space,
    Uniform,
    Density,
    Cutout,
    Impulse,
    Gaussian,
}

impl CorruptionKind {
    /// Benchmark domain order.
    pub const ALL: [CorruptionKind; 7] = [
        CorruptionKind::Sunlight,
        CorruptionKind::Space,
        CorruptionKind::Uniform,
        CorruptionKind::Density,
        CorruptionKind::Cutout,
        CorruptionKind::Impulse,
        CorruptionKind::Gaussian,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::Sunlight => "sunlight",
            CorruptionKind::Space => "space",
            CorruptionKind::Uniform => "uniform",
            CorruptionKind::Density => "density",
            CorruptionKind::Cutout => "cutout",
            CorruptionKind::Impulse => "impulse",
            CorruptionKind::Gaussian => "gaussian",
        }
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Validation(format!("unknown corruption `{s}`")))
    }
}

/// Parameter set of one benchmark dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Isprs,
    H3d,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Isprs => "isprs",
            Profile::H3d => "h3d",
        }
    }

    pub fn table(self) -> SeverityTable {
        match self {
            Profile::Isprs => SeverityTable::isprs(),
            Profile::H3d => SeverityTable::h3d(),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "isprs" => Ok(Profile::Isprs),
            "h3d" => Ok(Profile::H3d),
            _ => Err(Error::Validation(format!("unknown profile `{s}`"))),
        }
    }
}

/// Severity parameters, one entry per level 1..=5.
///
/// Point fractions are integers in parts per ten thousand so that counts
/// follow an exact floor rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityTable {
    pub sunlight_per_10k: [u32; 5],
    /// Metres.
    pub sunlight_sigma: f64,
    pub density_per_10k: [u32; 5],
    pub cutout_groups: [usize; 5],
    /// Group size is `⌊num · N / den⌋`, at least one point.
    pub cutout_group_fraction: (usize, usize),
    /// Metres.
    pub gaussian_sigma: [f64; 5],
    /// Half-width of the per-axis uniform offset, metres.
    pub uniform_half_width: [f64; 5],
    pub impulse_numerator: usize,
    pub impulse_denominators: [usize; 5],
    /// Per-axis impulse offset, metres.
    pub impulse_magnitude: f64,
    pub space_points_per_cell: [usize; 5],
    /// Cells per bounding-box axis for space noise.
    pub space_grid: usize,
}

impl SeverityTable {
    pub fn isprs() -> Self {
        Self {
            sunlight_per_10k: [70, 140, 210, 280, 350],
            sunlight_sigma: 2.0,
            density_per_10k: [602, 1204, 1806, 2408, 3010],
            cutout_groups: [2, 3, 5, 7, 10],
            cutout_group_fraction: (3, 100),
            gaussian_sigma: [0.02002, 0.04004, 0.06006, 0.08008, 0.1001],
            uniform_half_width: [0.028, 0.056, 0.084, 0.112, 0.140],
            impulse_numerator: 11,
            impulse_denominators: [300, 250, 200, 150, 100],
            impulse_magnitude: 0.1,
            space_points_per_cell: [5, 10, 15, 20, 25],
            space_grid: 10,
        }
    }

    pub fn h3d() -> Self {
        Self {
            sunlight_per_10k: [30, 60, 90, 120, 150],
            sunlight_sigma: 1.0,
            density_per_10k: [1820, 3640, 5460, 7280, 9100],
            cutout_groups: [2, 3, 5, 7, 10],
            cutout_group_fraction: (1, 100),
            gaussian_sigma: [0.012, 0.024, 0.036, 0.048, 0.060],
            uniform_half_width: [0.028, 0.056, 0.084, 0.112, 0.140],
            impulse_numerator: 7,
            impulse_denominators: [300, 250, 200, 150, 100],
            impulse_magnitude: 0.06,
            space_points_per_cell: [100, 200, 300, 400, 500],
            space_grid: 10,
        }
    }

    /// Every per-level sequence is non-decreasing in severity.
    pub fn is_monotone(&self) -> bool {
        fn up<T: PartialOrd>(v: &[T]) -> bool {
            v.windows(2).all(|w| w[0] <= w[1])
        }
        let impulse: Vec<f64> = self
            .impulse_denominators
            .iter()
            .map(|&d| self.impulse_numerator as f64 / d as f64)
            .collect();
        up(&self.sunlight_per_10k)
            && up(&self.density_per_10k)
            && up(&self.cutout_groups)
            && up(&self.gaussian_sigma)
            && up(&self.uniform_half_width)
            && up(&impulse)
            && up(&self.space_points_per_cell)
    }
}

/// Severity level 0..=5; 0 is the identity.
pub(crate) fn level(severity: u8) -> Result<Option<usize>> {
    match severity {
        0 => Ok(None),
        1..=5 => Ok(Some(severity as usize - 1)),
        _ => Err(Error::Validation(format!(
            "severity {severity} outside 0..=5"
        ))),
    }
}

/// `⌊n · parts / 10000⌋` without rounding error.
pub(crate) fn per_10k(n: usize, parts: u32) -> usize {
    (n as u128 * parts as u128 / 10_000) as usize
}
