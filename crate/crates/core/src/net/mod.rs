//! Compact per-point segmentation network.
//!
//! Architecture (default widths in brackets):
//!
//! ```text
//! [Δx Δy Δz f..] → (affine → BN → ReLU) × encoder [32, 64, 64]      = h
//! h → affine (pool projection) → max over k = 16 neighbours           = m
//! [h ‖ m] → (affine → BN → ReLU) × decoder [128, 64] → affine head    = logits
//! ```
//!
//! Every affine, BN and head layer owns a distinct layer id; layer-wise
//! selection and interpolation in [`crate::adapt`] work on those ids.

mod augment;
mod checkpoint;
pub(crate) mod forward;
pub mod ops;
mod train;

pub use augment::{strong_augment, weak_augment, AugmentConfig};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use forward::{BnMode, ForwardTrace};
pub use ops::{argmax_rows, softmax_with_temperature};
pub use train::{batch_targets, pretrain, LrSchedule, PretrainConfig, PretrainReport};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::seeded;
use crate::{Error, Result};

pub const BN_EPSILON: f64 = 1e-5;

/// Shape of the network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetSpec {
    /// Scalar features per point (on top of the three coordinates).
    pub features: usize,
    pub encoder: Vec<usize>,
    pub decoder: Vec<usize>,
    /// Neighbourhood size of the max-pool stage.
    pub k: usize,
    pub classes: usize,
}

impl Default for NetSpec {
    fn default() -> Self {
        Self {
            features: 1,
            encoder: vec![32, 64, 64],
            decoder: vec![128, 64],
            k: 16,
            classes: 5,
        }
    }
}

impl NetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(format!("network spec: {m}")));
        if self.features == 0 {
            return bad("at least one scalar feature is required");
        }
        if self.encoder.is_empty() || self.decoder.is_empty() {
            return bad("encoder and decoder need at least one block each");
        }
        if self.encoder.iter().chain(&self.decoder).any(|&w| w == 0) {
            return bad("widths must be positive");
        }
        if self.k == 0 {
            return bad("neighbourhood size must be positive");
        }
        if !(2..=255).contains(&self.classes) {
            return bad("class count must be in [2, 255]");
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        3 + self.features
    }

    /// Width of the encoder output `h` (and of the pooled projection `m`).
    pub fn embed_width(&self) -> usize {
        *self.encoder.last().expect("validated spec")
    }

    pub fn layer_count(&self) -> usize {
        2 * self.encoder.len() + 1 + 2 * self.decoder.len() + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Affine,
    BatchNorm,
    PoolProjection,
    Head,
}

/// Identity of one parameter-bearing layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerInfo {
    pub id: usize,
    pub name: String,
    pub kind: LayerKind,
    /// Indices into [`Network::params`].
    pub params: Vec<usize>,
}

/// One trainable tensor plus its gradient and momentum buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub layer_id: usize,
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
    pub momentum_buf: Vec<f64>,
    pub trainable_candidate: bool,
}

impl ParamTensor {
    fn new(layer_id: usize, name: String, shape: Vec<usize>, values: Vec<f64>) -> Self {
        let n = values.len();
        debug_assert_eq!(n, shape.iter().product::<usize>());
        Self {
            layer_id,
            name,
            shape,
            values,
            grad: vec![0.0; n],
            momentum_buf: vec![0.0; n],
            trainable_candidate: true,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Running moments of one BN layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub epsilon: f64,
}

impl BatchNormState {
    fn new(channels: usize) -> Self {
        Self {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            epsilon: BN_EPSILON,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AffineRef {
    pub w: usize,
    pub b: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BnRef {
    pub gamma: usize,
    pub beta: usize,
    pub state: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Block {
    pub affine: AffineRef,
    pub bn: BnRef,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub encoder: Vec<Block>,
    pub pool: AffineRef,
    pub decoder: Vec<Block>,
    pub head: AffineRef,
}

/// Parameters, BN statistics and layer layout of the segmentation network.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetSpec,
    params: Vec<ParamTensor>,
    bn: Vec<BatchNormState>,
}

impl Network {
    pub fn init(spec: NetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = seeded(seed);
        let mut params = Vec::new();
        let mut bn = Vec::new();
        let mut layer_id = 0;

        let mut affine = |params: &mut Vec<ParamTensor>,
                          id: usize,
                          name: &str,
                          fan_in: usize,
                          fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-limit..=limit))
                .collect();
            params.push(ParamTensor::new(
                id,
                format!("{name}.weight"),
                vec![fan_in, fan_out],
                w,
            ));
            params.push(ParamTensor::new(
                id,
                format!("{name}.bias"),
                vec![fan_out],
                vec![0.0; fan_out],
            ));
        };
        let batch_norm = |params: &mut Vec<ParamTensor>,
                          bn: &mut Vec<BatchNormState>,
                          id: usize,
                          name: &str,
                          ch: usize| {
            params.push(ParamTensor::new(
                id,
                format!("{name}.scale"),
                vec![ch],
                vec![1.0; ch],
            ));
            params.push(ParamTensor::new(
                id,
                format!("{name}.shift"),
                vec![ch],
                vec![0.0; ch],
            ));
            bn.push(BatchNormState::new(ch));
        };

        let mut width = spec.input_width();
        for (i, &w) in spec.encoder.iter().enumerate() {
            affine(&mut params, layer_id, &format!("enc{i}.affine"), width, w);
            batch_norm(&mut params, &mut bn, layer_id + 1, &format!("enc{i}.bn"), w);
            layer_id += 2;
            width = w;
        }
        affine(&mut params, layer_id, "pool.affine", width, width);
        layer_id += 1;
        width *= 2;
        for (i, &w) in spec.decoder.iter().enumerate() {
            affine(&mut params, layer_id, &format!("dec{i}.affine"), width, w);
            batch_norm(&mut params, &mut bn, layer_id + 1, &format!("dec{i}.bn"), w);
            layer_id += 2;
            width = w;
        }
        affine(&mut params, layer_id, "head", width, spec.classes);
        debug_assert_eq!(layer_id + 1, spec.layer_count());

        Ok(Self { spec, params, bn })
    }

    /// Reassemble a network from stored parts, checking them against `spec`.
    pub(crate) fn from_parts(
        spec: NetSpec,
        params: Vec<ParamTensor>,
        bn: Vec<BatchNormState>,
    ) -> Result<Self> {
        let template = Network::init(spec.clone(), 0)?;
        if template.params.len() != params.len() || template.bn.len() != bn.len() {
            return Err(Error::Checkpoint(
                "parameter layout does not match the network spec".into(),
            ));
        }
        for (t, p) in template.params.iter().zip(&params) {
            if t.name != p.name
                || t.shape != p.shape
                || t.layer_id != p.layer_id
                || p.values.len() != t.values.len()
            {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` does not match the network spec",
                    p.name
                )));
            }
        }
        for (t, s) in template.bn.iter().zip(&bn) {
            if t.channels() != s.channels() || s.running_var.len() != s.channels() {
                return Err(Error::Checkpoint(
                    "BN state does not match the network spec".into(),
                ));
            }
            if s.running_var.iter().any(|&v| v < 0.0) {
                return Err(Error::Checkpoint("negative running variance".into()));
            }
        }
        Ok(Self { spec, params, bn })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn params(&self) -> &[ParamTensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [ParamTensor] {
        &mut self.params
    }

    pub fn bn_states(&self) -> &[BatchNormState] {
        &self.bn
    }

    pub fn layer_count(&self) -> usize {
        self.spec.layer_count()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(ParamTensor::len).sum()
    }

    /// Layer table in id order.
    pub fn layers(&self) -> Vec<LayerInfo> {
        let mut layers: Vec<LayerInfo> = Vec::with_capacity(self.layer_count());
        for (idx, p) in self.params.iter().enumerate() {
            match layers.last_mut() {
                Some(l) if l.id == p.layer_id => l.params.push(idx),
                _ => {
                    let name = p
                        .name
                        .rsplit_once('.')
                        .map_or(p.name.as_str(), |(n, _)| n)
                        .to_string();
                    let kind = if name == "head" {
                        LayerKind::Head
                    } else if name.starts_with("pool") {
                        LayerKind::PoolProjection
                    } else if name.ends_with(".bn") {
                        LayerKind::BatchNorm
                    } else {
                        LayerKind::Affine
                    };
                    layers.push(LayerInfo {
                        id: p.layer_id,
                        name,
                        kind,
                        params: vec![idx],
                    });
                }
            }
        }
        layers
    }

    /// Mask selecting every BN layer (the TENT parameter set).
    pub fn bn_layer_mask(&self) -> Vec<bool> {
        self.layers()
            .iter()
            .map(|l| l.kind == LayerKind::BatchNorm)
            .collect()
    }

    /// Parameter indices of every block, in forward order.
    pub(crate) fn layout(&self) -> Layout {
        let s = &self.spec;
        let mut p = 0;
        let mut state = 0;
        let mut width = s.input_width();
        let mut block = |width: &mut usize, out: usize| {
            let b = Block {
                affine: AffineRef {
                    w: p,
                    b: p + 1,
                    fan_in: *width,
                    fan_out: out,
                },
                bn: BnRef {
                    gamma: p + 2,
                    beta: p + 3,
                    state,
                },
            };
            p += 4;
            state += 1;
            *width = out;
            b
        };
        let encoder: Vec<Block> = s.encoder.iter().map(|&w| block(&mut width, w)).collect();
        let e = s.embed_width();
        let mut width = 2 * e;
        let decoder: Vec<Block> = s.decoder.iter().map(|&w| block(&mut width, w)).collect();
        // the pool projection sits between encoder and decoder in parameter order
        let pool_at = 4 * encoder.len();
        let shift = |mut b: Block| {
            b.affine.w += 2;
            b.affine.b += 2;
            b.bn.gamma += 2;
            b.bn.beta += 2;
            b
        };
        let decoder: Vec<Block> = decoder.into_iter().map(shift).collect();
        let head_at = pool_at + 2 + 4 * decoder.len();
        Layout {
            encoder,
            pool: AffineRef {
                w: pool_at,
                b: pool_at + 1,
                fan_in: e,
                fan_out: e,
            },
            decoder,
            head: AffineRef {
                w: head_at,
                b: head_at + 1,
                fan_in: width,
                fan_out: s.classes,
            },
        }
    }

    /// Zero every gradient.
    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Copy of all gradients, in parameter order.
    pub fn grads(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| p.grad.clone()).collect()
    }

    /// Explicit gradient accumulation: `grad += other`.
    pub fn add_grads(&mut self, other: &[Vec<f64>]) -> Result<()> {
        if other.len() != self.params.len() {
            return Err(Error::Shape(
                "gradient set has the wrong number of tensors".into(),
            ));
        }
        for (p, g) in self.params.iter_mut().zip(other) {
            if g.len() != p.grad.len() {
                return Err(Error::Shape(format!(
                    "gradient for `{}` has the wrong length",
                    p.name
                )));
            }
            p.grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        Ok(())
    }

    /// SGD with momentum on the layers whose mask entry is true:
    /// `buf ← momentum·buf + grad; value ← value − lr·buf`.
    /// Masked-out layers keep values and buffers untouched.
    pub fn sgd_step(&mut self, lr: f64, momentum: f64, layer_mask: &[bool]) -> Result<()> {
        if layer_mask.len() != self.layer_count() {
            return Err(Error::Shape(format!(
                "layer mask has {} entries for {} layers",
                layer_mask.len(),
                self.layer_count()
            )));
        }
        for p in self
            .params
            .iter_mut()
            .filter(|p| p.trainable_candidate && layer_mask[p.layer_id])
        {
            for ((v, b), g) in p
                .values
                .iter_mut()
                .zip(p.momentum_buf.iter_mut())
                .zip(&p.grad)
            {
                *b = momentum * *b + g;
                *v -= lr * *b;
            }
        }
        Ok(())
    }

    /// Overwrite all parameter values with those of `source` and clear momentum.
    pub fn copy_values_from(&mut self, source: &[ParamTensor]) -> Result<()> {
        if source.len() != self.params.len() {
            return Err(Error::Shape("parameter sets differ in length".into()));
        }
        for (p, s) in self.params.iter_mut().zip(source) {
            if p.values.len() != s.values.len() {
                return Err(Error::Shape(format!(
                    "tensor `{}` differs in length",
                    p.name
                )));
            }
            p.values.copy_from_slice(&s.values);
            p.momentum_buf.fill(0.0);
        }
        Ok(())
    }

    #[cfg(test)]
    pub(crate) fn bn_states_mut(&mut self) -> &mut [BatchNormState] {
        &mut self.bn
    }
}
