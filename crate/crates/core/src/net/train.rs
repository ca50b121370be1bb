//! Supervised pretraining of the source model.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::augment::{apply, Transform};
use super::ops::{argmax_rows, cross_entropy};
use super::{BnMode, Network};
use crate::cloud::{make_batch, PointCloud, SubCloudBatch, IGNORE};
use crate::rng::Rng;
use crate::{Error, Result};

/// Exponential decay: `lr(epoch) = initial · decay^epoch`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay: f64,
}

impl LrSchedule {
    pub fn at(&self, epoch: usize) -> f64 {
        self.initial * self.decay.powi(epoch as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub points: usize,
    pub radius: f64,
    pub lr: LrSchedule,
    pub momentum: f64,
    /// Weight of the old running moments in each update.
    pub bn_momentum: f64,
    pub rotation_deg: f64,
    /// Per-axis shift of each sub-cloud, drawn from `U(−t, t)`.
    pub translation: f64,
    pub scale: (f64, f64),
    pub jitter: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 12,
            steps_per_epoch: 50,
            batch_size: 4,
            points: 512,
            radius: 10.0,
            lr: LrSchedule {
                initial: 0.1,
                decay: 0.85,
            },
            momentum: 0.9,
            bn_momentum: 0.9,
            rotation_deg: 180.0,
            translation: 0.05,
            scale: (0.9, 1.1),
            jitter: 0.01,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    /// Mean training loss of each epoch.
    pub epoch_loss: Vec<f64>,
    /// Training accuracy of each epoch (over labelled points).
    pub epoch_accuracy: Vec<f64>,
}

/// Per-point targets of a batch, looked up in the labelled parent cloud.
pub fn batch_targets(cloud: &PointCloud, batch: &SubCloudBatch) -> Result<Vec<Option<u8>>> {
    let labels = cloud
        .labels()
        .ok_or_else(|| Error::Validation("no labeled points".into()))?;
    Ok(batch
        .source_indices()
        .map(|i| Some(labels[i]).filter(|&l| l != IGNORE))
        .collect())
}

/// One supervised step on all layers. Returns `(loss, accuracy)`.
pub fn train_step(
    net: &mut Network,
    batch: &SubCloudBatch,
    targets: &[Option<u8>],
    lr: f64,
    momentum: f64,
    bn_momentum: f64,
) -> Result<(f64, f64)> {
    let classes = net.spec().classes;
    let (logits, trace) = net.forward(batch, BnMode::BatchStats)?;
    let (loss, grad, counted) = cross_entropy(&logits, classes, targets);
    if counted == 0 {
        return Ok((0.0, 0.0));
    }
    let pred = argmax_rows(&logits, classes);
    let correct = pred
        .iter()
        .zip(targets)
        .filter(|(p, t)| Some(**p) == **t)
        .count();
    net.backward(&trace, &grad)?;
    net.sgd_step(lr, momentum, &vec![true; net.layer_count()])?;
    net.update_running_stats(&trace, bn_momentum)?;
    Ok((loss, correct as f64 / counted as f64))
}

/// Supervised cross-entropy training over labelled clouds, batch-statistics BN
/// with running-moment tracking and SGD on every layer.
pub fn pretrain(
    net: &mut Network,
    clouds: &[PointCloud],
    cfg: &PretrainConfig,
    rng: &mut Rng,
) -> Result<PretrainReport> {
    let labelled = |c: &&PointCloud| c.labels().is_some_and(|l| l.iter().any(|&v| v != IGNORE));
    if clouds.is_empty() || !clouds.iter().any(|c| labelled(&c)) {
        return Err(Error::Validation("no labeled points".into()));
    }
    let usable: Vec<&PointCloud> = clouds.iter().filter(labelled).collect();
    let transform = Transform {
        rotation_deg: cfg.rotation_deg,
        translation: cfg.translation,
        scale: cfg.scale,
        jitter: cfg.jitter,
    };
    let mut report = PretrainReport {
        epoch_loss: Vec::new(),
        epoch_accuracy: Vec::new(),
    };
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr.at(epoch);
        let (mut loss_sum, mut acc_sum) = (0.0, 0.0);
        for _ in 0..cfg.steps_per_epoch {
            let cloud = usable[rng.random_range(0..usable.len())];
            let batch = make_batch(cloud, cfg.batch_size, cfg.points, cfg.radius, rng)?;
            let targets = batch_targets(cloud, &batch)?;
            let batch = apply(&batch, transform, rng);
            let (loss, acc) = train_step(net, &batch, &targets, lr, cfg.momentum, cfg.bn_momentum)?;
            loss_sum += loss;
            acc_sum += acc;
        }
        let steps = cfg.steps_per_epoch.max(1) as f64;
        report.epoch_loss.push(loss_sum / steps);
        report.epoch_accuracy.push(acc_sum / steps);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::forward::tests::random_batch;
    use crate::net::NetSpec;
    use crate::rng::seeded;

    #[test]
    fn single_batch_overfits() {
        let spec = NetSpec {
            classes: 3,
            ..NetSpec::default()
        };
        let mut net = Network::init(spec, 1).unwrap();
        let batch = random_batch(2, 64, 1, 2);
        // label by a geometric rule the network can represent
        let targets: Vec<Option<u8>> = batch
            .clouds
            .iter()
            .flat_map(|c| {
                c.positions.iter().map(|p| {
                    Some(if p[2] > 0.3 {
                        2
                    } else if p[0] > 0.0 {
                        1
                    } else {
                        0
                    })
                })
            })
            .collect();
        let mut acc = 0.0;
        for _ in 0..200 {
            acc = train_step(&mut net, &batch, &targets, 0.05, 0.9, 0.9)
                .unwrap()
                .1;
        }
        let (logits, _) = net.forward(&batch, BnMode::BatchStats).unwrap();
        let pred = argmax_rows(&logits, 3);
        let correct = pred
            .iter()
            .zip(&targets)
            .filter(|(p, t)| Some(**p) == **t)
            .count();
        assert!(
            correct as f64 / targets.len() as f64 >= 0.99,
            "train acc {acc}, final {correct}"
        );
    }

    fn toy_cloud(seed: u64) -> PointCloud {
        let mut rng = seeded(seed);
        let mut pos = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..3000 {
            let p = [
                rng.random_range(0.0..30.0),
                rng.random_range(0.0..30.0),
                rng.random_range(0.0..3.0),
            ];
            labels.push(u8::from(p[2] > 1.5));
            pos.push(p);
        }
        let n = pos.len();
        PointCloud::new(pos, vec![0.5; n], 1, Some(labels), 2).unwrap()
    }

    #[test]
    fn loss_decreases_over_first_epoch() {
        let mut net = Network::init(
            NetSpec {
                classes: 2,
                encoder: vec![16, 16],
                decoder: vec![16],
                ..NetSpec::default()
            },
            4,
        )
        .unwrap();
        let cfg = PretrainConfig {
            epochs: 2,
            steps_per_epoch: 15,
            points: 128,
            radius: 6.0,
            ..PretrainConfig::default()
        };
        let cloud = toy_cloud(5);
        // initial loss on the batches epoch 0 would draw
        let mut probe = seeded(6);
        let mut initial = 0.0;
        for _ in 0..5 {
            let b = make_batch(&cloud, 4, 128, 6.0, &mut probe).unwrap();
            let t = batch_targets(&cloud, &b).unwrap();
            let (logits, _) = net.forward(&b, BnMode::BatchStats).unwrap();
            initial += cross_entropy(&logits, 2, &t).0 / 5.0;
        }
        let report = pretrain(&mut net, &[cloud], &cfg, &mut seeded(6)).unwrap();
        assert!(
            report.epoch_loss[0] < initial,
            "{} vs {initial}",
            report.epoch_loss[0]
        );
        assert!(report.epoch_loss[1] < report.epoch_loss[0]);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut net = Network::init(
            NetSpec {
                classes: 2,
                encoder: vec![8],
                decoder: vec![8],
                ..NetSpec::default()
            },
            4,
        )
        .unwrap();
        let before: Vec<Vec<f64>> = net.params().iter().map(|p| p.values.clone()).collect();
        let cfg = PretrainConfig {
            epochs: 1,
            steps_per_epoch: 3,
            points: 64,
            lr: LrSchedule {
                initial: 0.0,
                decay: 1.0,
            },
            ..PretrainConfig::default()
        };
        pretrain(&mut net, &[toy_cloud(1)], &cfg, &mut seeded(2)).unwrap();
        let after: Vec<Vec<f64>> = net.params().iter().map(|p| p.values.clone()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn unlabelled_input_is_rejected() {
        let mut net = Network::init(NetSpec::default(), 0).unwrap();
        let cloud = toy_cloud(1).without_labels();
        let err = pretrain(
            &mut net,
            &[cloud],
            &PretrainConfig::default(),
            &mut seeded(0),
        )
        .unwrap_err();
        assert!(err.to_string().contains("no labeled points"));
    }
}
