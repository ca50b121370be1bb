//! Procedural labelled scenes: ground, buildings, trees, cars and poles.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::rng::{seeded, Rng};
use crate::{Error, Result};

pub const GROUND: u8 = 0;
pub const BUILDING: u8 = 1;
pub const TREE: u8 = 2;
pub const CAR: u8 = 3;
pub const POLE: u8 = 4;
pub const CLASS_NAMES: [&str; 5] = ["ground", "building", "tree", "car", "pole"];

/// Surface sampling density per class, points per square metre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Densities {
    pub ground: f64,
    pub roof: f64,
    pub wall: f64,
    pub tree: f64,
    pub car: f64,
    pub pole: f64,
}

impl Default for Densities {
    fn default() -> Self {
        Self {
            ground: 10.0,
            roof: 10.0,
            wall: 4.0,
            tree: 8.0,
            car: 12.0,
            pole: 30.0,
        }
    }
}

/// Intensity model: per-class mean with Gaussian spread, clamped to [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Intensity {
    pub means: [f64; 5],
    pub spread: f64,
}

impl Default for Intensity {
    fn default() -> Self {
        Self {
            means: [0.35, 0.45, 0.5, 0.55, 0.45],
            spread: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSceneSpec {
    /// Side of the square footprint, metres.
    pub extent: f64,
    pub buildings: usize,
    pub trees: usize,
    pub cars: usize,
    pub poles: usize,
    pub densities: Densities,
    pub intensity: Intensity,
    /// Amplitude of the smooth terrain undulation, metres.
    pub terrain_amplitude: f64,
    /// Standard deviation of per-point height noise on every surface, metres.
    pub roughness: f64,
    /// Uniform factor applied to every coordinate after generation; point
    /// counts do not change.
    pub scale: f64,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        Self {
            extent: 60.0,
            buildings: 6,
            trees: 18,
            cars: 14,
            poles: 12,
            densities: Densities::default(),
            intensity: Intensity::default(),
            terrain_amplitude: 0.6,
            roughness: 0.02,
            scale: 1.0,
        }
    }
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.extent > 0.0 && self.extent.is_finite()) {
            return Err(Error::Validation("scene extent must be positive".into()));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Validation("scene scale must be positive".into()));
        }
        let d = &self.densities;
        if [d.ground, d.roof, d.wall, d.tree, d.car, d.pole]
            .iter()
            .any(|&v| !(v >= 0.0 && v.is_finite()))
        {
            return Err(Error::Validation(
                "densities must be finite and non-negative".into(),
            ));
        }
        if d.ground <= 0.0 {
            return Err(Error::Validation("ground density must be positive".into()));
        }
        if self.roughness < 0.0 || self.intensity.spread < 0.0 {
            return Err(Error::Validation(
                "roughness and intensity spread must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Footprint of a placed object, used for overlap rejection and ground removal.
#[derive(Debug, Clone, Copy)]
struct Footprint {
    center: [f64; 2],
    half: [f64; 2],
    /// Rotation about z, radians.
    yaw: f64,
    /// Whether the object hides the ground below it.
    solid: bool,
}

impl Footprint {
    fn radius(&self) -> f64 {
        self.half[0].hypot(self.half[1])
    }

    fn local(&self, x: f64, y: f64) -> [f64; 2] {
        let (s, c) = self.yaw.sin_cos();
        let (dx, dy) = (x - self.center[0], y - self.center[1]);
        [c * dx + s * dy, -s * dx + c * dy]
    }

    fn world(&self, u: f64, v: f64) -> [f64; 2] {
        let (s, c) = self.yaw.sin_cos();
        [
            self.center[0] + c * u - s * v,
            self.center[1] + s * u + c * v,
        ]
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let [u, v] = self.local(x, y);
        u.abs() <= self.half[0] && v.abs() <= self.half[1]
    }
}

struct Builder<'a> {
    spec: &'a SyntheticSceneSpec,
    rng: Rng,
    noise: Normal<f64>,
    positions: Vec<[f64; 3]>,
    features: Vec<f64>,
    labels: Vec<u8>,
    placed: Vec<Footprint>,
}

impl Builder<'_> {
    fn terrain(&self, x: f64, y: f64) -> f64 {
        let w = 2.0 * PI / self.spec.extent;
        self.spec.terrain_amplitude
            * ((1.3 * w * x).sin() * (0.9 * w * y).cos() + 0.5 * (2.1 * w * (x + y)).sin())
    }

    fn push(&mut self, p: [f64; 3], label: u8) {
        let intensity = self.spec.intensity.means[label as usize]
            + self.spec.intensity.spread
                * Normal::new(0.0, 1.0)
                    .expect("unit normal")
                    .sample(&mut self.rng);
        let z = p[2] + self.noise.sample(&mut self.rng);
        self.positions.push([p[0], p[1], z]);
        self.features.push(intensity.clamp(0.0, 1.0));
        self.labels.push(label);
    }

    /// Number of samples for `area` at `density`, honouring the density exactly
    /// up to rounding.
    fn count(area: f64, density: f64) -> usize {
        (area * density).round() as usize
    }

    /// Try to place a footprint that keeps clear of earlier objects.
    fn place(&mut self, half: [f64; 2], margin: f64, solid: bool) -> Option<Footprint> {
        let e = self.spec.extent;
        for _ in 0..200 {
            let r = half[0].hypot(half[1]);
            if 2.0 * (r + margin) >= e {
                return None;
            }
            let f = Footprint {
                center: [
                    self.rng.random_range(r + margin..e - r - margin),
                    self.rng.random_range(r + margin..e - r - margin),
                ],
                half,
                yaw: self.rng.random_range(0.0..PI),
                solid,
            };
            let clear = self.placed.iter().all(|o| {
                let d = (o.center[0] - f.center[0]).hypot(o.center[1] - f.center[1]);
                d > o.radius() + f.radius() + margin
            });
            if clear {
                self.placed.push(f);
                return Some(f);
            }
        }
        None
    }

    /// Points on the four vertical faces and the top of an oriented box.
    fn box_surface(
        &mut self,
        f: Footprint,
        base: f64,
        height: f64,
        top_density: f64,
        side_density: f64,
        label: u8,
    ) {
        let [hx, hy] = f.half;
        let top = Self::count(4.0 * hx * hy, top_density);
        for _ in 0..top {
            let [x, y] = f.world(
                self.rng.random_range(-hx..hx),
                self.rng.random_range(-hy..hy),
            );
            self.push([x, y, base + height], label);
        }
        let perimeter = 4.0 * (hx + hy);
        let sides = Self::count(perimeter * height, side_density);
        for _ in 0..sides {
            let t = self.rng.random_range(0.0..perimeter);
            let (u, v) = if t < 2.0 * hx {
                (t - hx, -hy)
            } else if t < 2.0 * hx + 2.0 * hy {
                (hx, t - 2.0 * hx - hy)
            } else if t < 4.0 * hx + 2.0 * hy {
                (t - 3.0 * hx - 2.0 * hy, hy)
            } else {
                (-hx, t - 4.0 * hx - 3.0 * hy)
            };
            let [x, y] = f.world(u, v);
            let z = base + self.rng.random_range(0.0..height);
            self.push([x, y, z], label);
        }
    }

    fn building(&mut self) {
        let half = [
            self.rng.random_range(3.0..7.0),
            self.rng.random_range(3.0..6.0),
        ];
        let Some(f) = self.place(half, 2.0, true) else {
            return;
        };
        let base = self.terrain(f.center[0], f.center[1]);
        let height = self.rng.random_range(4.0..12.0);
        let d = self.spec.densities.clone();
        self.box_surface(f, base, height, d.roof, d.wall, BUILDING);
    }

    fn tree(&mut self) {
        let r = self.rng.random_range(1.5..3.0);
        let crown = [r, r];
        let Some(f) = self.place(crown, 0.5, false) else {
            return;
        };
        let base = self.terrain(f.center[0], f.center[1]);
        let trunk = self.rng.random_range(1.5..3.5);
        let rz = r * self.rng.random_range(1.0..1.5);
        let cz = base + trunk + rz;
        // ellipsoid shell with some depth; surface area approximated by the sphere of mean radius
        let mean_r = (2.0 * r + rz) / 3.0;
        let n = Self::count(4.0 * PI * mean_r * mean_r, self.spec.densities.tree);
        for _ in 0..n {
            let z: f64 = self.rng.random_range(-1.0..1.0);
            let phi = self.rng.random_range(0.0..2.0 * PI);
            let s = (1.0 - z * z).sqrt();
            let depth = self.rng.random_range(0.75..1.0);
            self.push(
                [
                    f.center[0] + depth * r * s * phi.cos(),
                    f.center[1] + depth * r * s * phi.sin(),
                    cz + depth * rz * z,
                ],
                TREE,
            );
        }
        let trunk_r = 0.15;
        let n = Self::count(2.0 * PI * trunk_r * trunk, self.spec.densities.tree);
        for _ in 0..n {
            let phi = self.rng.random_range(0.0..2.0 * PI);
            let z = self.rng.random_range(0.0..trunk);
            self.push(
                [
                    f.center[0] + trunk_r * phi.cos(),
                    f.center[1] + trunk_r * phi.sin(),
                    base + z,
                ],
                TREE,
            );
        }
    }

    fn car(&mut self) {
        let half = [
            self.rng.random_range(1.9..2.4),
            self.rng.random_range(0.85..1.0),
        ];
        let Some(f) = self.place(half, 0.8, true) else {
            return;
        };
        let base = self.terrain(f.center[0], f.center[1]);
        let height = self.rng.random_range(1.3..1.7);
        let d = self.spec.densities.car;
        self.box_surface(f, base, height, d, d, CAR);
    }

    fn pole(&mut self) {
        let Some(f) = self.place([0.1, 0.1], 1.0, false) else {
            return;
        };
        let base = self.terrain(f.center[0], f.center[1]);
        let height = self.rng.random_range(5.0..9.0);
        let r = 0.1;
        let n = Self::count(2.0 * PI * r * height, self.spec.densities.pole).max(1);
        for _ in 0..n {
            let phi = self.rng.random_range(0.0..2.0 * PI);
            let z = self.rng.random_range(0.0..height);
            self.push(
                [
                    f.center[0] + r * phi.cos(),
                    f.center[1] + r * phi.sin(),
                    base + z,
                ],
                POLE,
            );
        }
    }

    /// Jittered grid over the footprint, skipping cells covered by buildings or cars.
    fn ground(&mut self) {
        let spacing = 1.0 / self.spec.densities.ground.sqrt();
        let cells = (self.spec.extent / spacing).floor() as usize;
        let covers: Vec<Footprint> = self.placed.iter().filter(|f| f.solid).copied().collect();
        for i in 0..cells {
            for j in 0..cells {
                let x = (i as f64 + self.rng.random_range(0.0..1.0)) * spacing;
                let y = (j as f64 + self.rng.random_range(0.0..1.0)) * spacing;
                if covers.iter().any(|f| f.contains(x, y)) {
                    continue;
                }
                let z = self.terrain(x, y);
                self.push([x, y, z], GROUND);
            }
        }
    }
}

/// Generate a labelled scene with `C = 5` and one intensity feature.
pub fn synth_scene(spec: &SyntheticSceneSpec, seed: u64) -> Result<PointCloud> {
    spec.validate()?;
    let mut b = Builder {
        spec,
        rng: seeded(seed),
        noise: Normal::new(0.0, spec.roughness).expect("validated roughness"),
        positions: Vec::new(),
        features: Vec::new(),
        labels: Vec::new(),
        placed: Vec::new(),
    };
    for _ in 0..spec.buildings {
        b.building();
    }
    for _ in 0..spec.cars {
        b.car();
    }
    for _ in 0..spec.trees {
        b.tree();
    }
    for _ in 0..spec.poles {
        b.pole();
    }
    b.ground();
    let positions = b
        .positions
        .iter()
        .map(|p| p.map(|v| v * spec.scale))
        .collect();
    PointCloud::new(positions, b.features, 1, Some(b.labels), CLASS_NAMES.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::write_cloud;

    #[test]
    fn empty_scene_is_all_ground() {
        let spec = SyntheticSceneSpec {
            buildings: 0,
            trees: 0,
            cars: 0,
            poles: 0,
            extent: 20.0,
            ..Default::default()
        };
        let c = synth_scene(&spec, 1).unwrap();
        assert!(c.labels().unwrap().iter().all(|&l| l == GROUND));
        let expect = 20.0 * 20.0 * spec.densities.ground;
        assert!((c.len() as f64 / expect - 1.0).abs() < 0.1);
    }

    #[test]
    fn default_scene_has_every_class() {
        let c = synth_scene(&SyntheticSceneSpec::default(), 2).unwrap();
        let mut counts = [0usize; 5];
        for &l in c.labels().unwrap() {
            counts[l as usize] += 1;
        }
        assert!(counts.iter().all(|&n| n >= 100), "{counts:?}");
        assert!(c.features().iter().all(|f| (0.0..=1.0).contains(f)));
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = SyntheticSceneSpec {
            extent: 30.0,
            ..Default::default()
        };
        assert_eq!(
            write_cloud(&synth_scene(&spec, 3).unwrap()),
            write_cloud(&synth_scene(&spec, 3).unwrap())
        );
        assert_ne!(
            synth_scene(&spec, 3).unwrap(),
            synth_scene(&spec, 4).unwrap()
        );
    }

    #[test]
    fn degenerate_spec_is_rejected() {
        let spec = SyntheticSceneSpec {
            extent: 0.0,
            ..Default::default()
        };
        assert!(matches!(synth_scene(&spec, 1), Err(Error::Validation(_))));
    }

    #[test]
    fn ground_density_is_honoured() {
        let spec = SyntheticSceneSpec {
            buildings: 0,
            trees: 0,
            cars: 0,
            poles: 0,
            extent: 30.0,
            ..Default::default()
        };
        for density in [2.0, 10.0, 25.0] {
            let mut s = spec.clone();
            s.densities.ground = density;
            let n = synth_scene(&s, 5).unwrap().len() as f64;
            assert!((n / (900.0 * density) - 1.0).abs() < 0.1, "{density}: {n}");
        }
    }
}
