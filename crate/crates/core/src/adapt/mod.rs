//! Test-time adaptation: gradient-scored layer selection, entropy-gated
//! consistency and randomized interpolation toward the source weights, plus
//! the simple baselines.

mod baselines;
mod dstl;
mod losses;

use serde::{Deserialize, Serialize};

use crate::cloud::SubCloudBatch;
use crate::net::{
    argmax_rows, softmax_with_temperature, strong_augment, weak_augment, AugmentConfig, BnMode,
    Network, ParamTensor,
};
use crate::rng::{seeded, split_seed, Rng};
use crate::{Error, Result};

pub use baselines::{baseline_step, Method};
pub use dstl::{check_gradient_identity, layer_scores, rpi_step, select_layers, LayerScore};
pub use losses::{
    consistency_loss, entropy, kl_to_uniform, reliable_mask, Consistency, EntropyMode,
};

/// Module switches of the adaptation step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Toggles {
    pub dstl: bool,
    pub ebcl: bool,
    pub rpi: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self {
            dstl: true,
            ebcl: true,
            rpi: true,
        }
    }
}

/// Which pass provides the reported predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionView {
    /// The weak-view pass that is also used for scoring.
    #[default]
    Weak,
    /// An extra batch-statistics pass on the unaugmented input.
    Clean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptConfig {
    /// Layer-score threshold.
    pub s0: f64,
    /// Entropy threshold for reliable points.
    pub tau: f64,
    /// Weight of the source parameters in interpolation.
    pub alpha: f64,
    /// Per-element interpolation probability.
    pub p: f64,
    /// Scoring temperature.
    pub temperature: f64,
    pub lr: f64,
    pub momentum: f64,
    pub toggles: Toggles,
    pub entropy_mode: EntropyMode,
    /// Treat the weak-view distribution as a constant target.
    pub stop_gradient_weak: bool,
    pub prediction_view: PredictionView,
    pub augment: AugmentConfig,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            s0: 0.001,
            tau: 0.8,
            alpha: 0.999,
            p: 0.01,
            temperature: 50.0,
            lr: 1e-2,
            momentum: 0.98,
            toggles: Toggles::default(),
            entropy_mode: EntropyMode::Normalized,
            stop_gradient_weak: true,
            prediction_view: PredictionView::Weak,
            augment: AugmentConfig::default(),
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.s0 >= 0.0, "s0 must be non-negative"),
            (self.tau >= 0.0, "tau must be non-negative"),
            (
                (0.0..=1.0).contains(&self.alpha),
                "alpha must lie in [0, 1]",
            ),
            ((0.0..=1.0).contains(&self.p), "p must lie in [0, 1]"),
            (
                self.temperature > 0.0 && self.temperature.is_finite(),
                "temperature must be positive",
            ),
            (
                self.lr >= 0.0 && self.lr.is_finite(),
                "lr must be non-negative",
            ),
            (
                (0.0..1.0).contains(&self.momentum),
                "momentum must lie in [0, 1)",
            ),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::Validation((*msg).into())),
            None => Ok(()),
        }
    }
}

/// The adapting network, its frozen source copy and the step's random streams.
#[derive(Debug, Clone)]
pub struct AdaptState {
    pub net: Network,
    source_params: Vec<ParamTensor>,
    /// Number of completed steps.
    pub t: u64,
    /// Domain id recorded in step diagnostics.
    pub domain: usize,
    rng_augment: Rng,
    rng_mask: Rng,
    last_mask: Vec<bool>,
}

impl AdaptState {
    /// Start from `net` as the source model. Momentum buffers are cleared.
    pub fn new(mut net: Network, seed: u64) -> Self {
        for p in net.params_mut() {
            p.grad.fill(0.0);
            p.momentum_buf.fill(0.0);
        }
        let source_params = net.params().to_vec();
        let last_mask = vec![false; net.layer_count()];
        Self {
            net,
            source_params,
            t: 0,
            domain: 0,
            rng_augment: seeded(split_seed(seed, 0)),
            rng_mask: seeded(split_seed(seed, 1)),
            last_mask,
        }
    }

    pub fn source_params(&self) -> &[ParamTensor] {
        &self.source_params
    }

    /// Layer mask used by the most recent update.
    pub fn last_mask(&self) -> &[bool] {
        &self.last_mask
    }

    /// Restore the source parameters and clear momentum.
    pub fn reset_to_source(&mut self) -> Result<()> {
        self.net.copy_values_from(&self.source_params)
    }

    /// Whether every parameter value is bit-equal to the source copy.
    pub fn at_source(&self) -> bool {
        self.net
            .params()
            .iter()
            .zip(&self.source_params)
            .all(|(p, s)| {
                p.values
                    .iter()
                    .zip(&s.values)
                    .all(|(a, b)| a.to_bits() == b.to_bits())
            })
    }
}

/// Per-step record for the harness, serialised as one JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: u64,
    pub domain: usize,
    /// Empty when layer selection is switched off.
    pub layer_scores: Vec<f64>,
    pub selected_layers: Vec<usize>,
    pub reliable_fraction: f64,
    /// Consistency loss; `None` when nothing was trainable.
    pub loss: Option<f64>,
    pub updated: bool,
}

impl StepDiagnostics {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("diagnostics serialise")
    }
}

/// One adaptation step on an unlabeled batch. Returns the per-point
/// predictions (argmax of the chosen view) and the step diagnostics.
pub fn apcotta_step(
    state: &mut AdaptState,
    batch: &SubCloudBatch,
    cfg: &AdaptConfig,
) -> Result<(Vec<u8>, StepDiagnostics)> {
    cfg.validate()?;
    let classes = state.net.spec().classes;
    let weak = weak_augment(batch, &cfg.augment, &mut state.rng_augment);
    let strong = strong_augment(batch, &cfg.augment, &mut state.rng_augment);

    let (z_weak, trace_weak) = state.net.forward(&weak, BnMode::BatchStats)?;
    let (scores, mask) = if cfg.toggles.dstl {
        let (scores, _) =
            dstl::scores_from_pass(&mut state.net, &z_weak, &trace_weak, cfg.temperature)?;
        let mask = select_layers(&scores, cfg.s0);
        (scores.iter().map(|s| s.score).collect(), mask)
    } else {
        (Vec::new(), vec![true; state.net.layer_count()])
    };

    let predictions = match cfg.prediction_view {
        PredictionView::Weak => argmax_rows(&z_weak, classes),
        PredictionView::Clean => {
            argmax_rows(&state.net.forward(batch, BnMode::BatchStats)?.0, classes)
        }
    };

    let mut diag = StepDiagnostics {
        step: state.t,
        domain: state.domain,
        layer_scores: scores,
        selected_layers: mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| i)
            .collect(),
        reliable_fraction: 0.0,
        loss: None,
        updated: false,
    };
    state.t += 1;
    state.last_mask.clone_from(&mask);
    if diag.selected_layers.is_empty() {
        return Ok((predictions, diag));
    }

    let p_weak = softmax_with_temperature(&z_weak, classes, 1.0);
    let (z_strong, trace_strong) = state.net.forward(&strong, BnMode::BatchStats)?;
    let p_strong = softmax_with_temperature(&z_strong, classes, 1.0);
    let ln_strong = losses::log_softmax(&z_strong, classes);
    let gate = if cfg.toggles.ebcl {
        reliable_mask(&p_weak, classes, cfg.tau, cfg.entropy_mode)
    } else {
        vec![true; p_weak.len() / classes]
    };
    let c = losses::consistency_from_log(&p_weak, &ln_strong, classes, gate);
    if !c.loss.is_finite() {
        return Err(Error::NonFinite {
            layer: "consistency loss".into(),
        });
    }
    diag.loss = Some(c.loss);
    diag.reliable_fraction = c.reliable_count as f64 / c.reliable_mask.len() as f64;
    if c.reliable_count == 0 {
        return Ok((predictions, diag));
    }

    let (d_strong, d_weak) = losses::consistency_grads(
        &p_weak,
        &p_strong,
        &ln_strong,
        classes,
        &c,
        !cfg.stop_gradient_weak,
    );
    match d_weak {
        Some(d_weak) => {
            state.net.backward(&trace_weak, &d_weak)?;
            let weak_grads = state.net.grads();
            state.net.backward(&trace_strong, &d_strong)?;
            state.net.add_grads(&weak_grads)?;
        }
        None => state.net.backward(&trace_strong, &d_strong)?,
    }
    state.net.sgd_step(cfg.lr, cfg.momentum, &mask)?;
    if cfg.toggles.rpi {
        rpi_step(state, cfg.alpha, cfg.p, &mask)?;
    }
    diag.updated = true;
    Ok((predictions, diag))
}
