//! Weak and strong views of a batch.
//!
//! Both views apply, per sub-cloud, `p' = s·R_z(θ)·p + t + ε`. The weak view is
//! a small rigid motion; the strong one adds a full turn range, isotropic
//! scaling and per-point Gaussian jitter.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cloud::SubCloudBatch;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub weak_rotation_deg: f64,
    pub weak_translation: f64,
    pub strong_rotation_deg: f64,
    pub strong_translation: f64,
    pub strong_jitter: f64,
    pub strong_scale: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            weak_rotation_deg: 10.0,
            weak_translation: 0.05,
            strong_rotation_deg: 180.0,
            strong_translation: 0.05,
            strong_jitter: 0.05,
            strong_scale: (0.9, 1.1),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Transform {
    pub rotation_deg: f64,
    pub translation: f64,
    pub scale: (f64, f64),
    pub jitter: f64,
}

pub(crate) fn apply(batch: &SubCloudBatch, t: Transform, rng: &mut Rng) -> SubCloudBatch {
    let mut out = batch.clone();
    let noise = Normal::new(0.0, t.jitter.max(0.0)).expect("finite sigma");
    for cloud in &mut out.clouds {
        let angle = rng
            .random_range(-t.rotation_deg..=t.rotation_deg)
            .to_radians();
        let shift = [
            rng.random_range(-t.translation..=t.translation),
            rng.random_range(-t.translation..=t.translation),
            rng.random_range(-t.translation..=t.translation),
        ];
        let scale = rng.random_range(t.scale.0..=t.scale.1);
        let (sin, cos) = angle.sin_cos();
        for p in &mut cloud.positions {
            let x = cos * p[0] - sin * p[1];
            let y = sin * p[0] + cos * p[1];
            *p = [
                scale * x + shift[0],
                scale * y + shift[1],
                scale * p[2] + shift[2],
            ];
            if t.jitter > 0.0 {
                for v in p.iter_mut() {
                    *v += noise.sample(rng);
                }
            }
        }
    }
    out
}

pub fn weak_augment(batch: &SubCloudBatch, cfg: &AugmentConfig, rng: &mut Rng) -> SubCloudBatch {
    apply(
        batch,
        Transform {
            rotation_deg: cfg.weak_rotation_deg,
            translation: cfg.weak_translation,
            scale: (1.0, 1.0),
            jitter: 0.0,
        },
        rng,
    )
}

pub fn strong_augment(batch: &SubCloudBatch, cfg: &AugmentConfig, rng: &mut Rng) -> SubCloudBatch {
    apply(
        batch,
        Transform {
            rotation_deg: cfg.strong_rotation_deg,
            translation: cfg.strong_translation,
            scale: cfg.strong_scale,
            jitter: cfg.strong_jitter,
        },
        rng,
    )
}
