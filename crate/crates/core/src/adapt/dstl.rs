//! Gradient-scored layer selection and randomized source interpolation.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::losses::kl_to_uniform;
use super::AdaptState;
use crate::cloud::SubCloudBatch;
use crate::net::{softmax_with_temperature, BnMode, ForwardTrace, Network, ParamTensor};
use crate::rng::Rng;
use crate::{Error, Result};

/// Confidence score of one layer: mean absolute scoring-pass gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerScore {
    pub layer_id: usize,
    pub score: f64,
    pub param_count: usize,
}

/// Scores of every layer for a weak-view batch.
///
/// Runs a batch-statistics forward, backpropagates the mean KL divergence
/// between the uniform distribution and `softmax(logits / T)`, and reduces
/// each layer's gradient to `‖g‖₁ / K`. Parameter values are not modified.
pub fn layer_scores(
    state: &mut AdaptState,
    weak_batch: &SubCloudBatch,
    temperature: f64,
) -> Result<Vec<LayerScore>> {
    let (logits, trace) = state.net.forward(weak_batch, BnMode::BatchStats)?;
    Ok(scores_from_pass(&mut state.net, &logits, &trace, temperature)?.0)
}

/// Scores for a pass that has already been run. Also returns the KL loss.
pub(crate) fn scores_from_pass(
    net: &mut Network,
    logits: &[f64],
    trace: &ForwardTrace,
    temperature: f64,
) -> Result<(Vec<LayerScore>, f64)> {
    let (loss, grad) = kl_to_uniform(logits, net.spec().classes, temperature);
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            layer: "scoring loss".into(),
        });
    }
    net.backward(trace, &grad)?;
    Ok((reduce_scores(net), loss))
}

fn reduce_scores(net: &Network) -> Vec<LayerScore> {
    net.layers()
        .iter()
        .map(|layer| {
            let tensors: Vec<&ParamTensor> =
                layer.params.iter().map(|&i| &net.params()[i]).collect();
            let param_count: usize = tensors.iter().map(|p| p.len()).sum();
            let l1: f64 = tensors
                .iter()
                .flat_map(|p| p.grad.iter())
                .map(|g| g.abs())
                .sum();
            LayerScore {
                layer_id: layer.id,
                score: l1 / param_count as f64,
                param_count,
            }
        })
        .collect()
}

/// Largest absolute difference between the KL-to-uniform gradient and the
/// class-averaged cross-entropy gradient of `logits / T`, over every parameter.
pub fn check_gradient_identity(
    state: &mut AdaptState,
    weak_batch: &SubCloudBatch,
    temperature: f64,
) -> Result<f64> {
    let net = &mut state.net;
    let classes = net.spec().classes;
    let (logits, trace) = net.forward(weak_batch, BnMode::BatchStats)?;
    let (_, kl_grad) = kl_to_uniform(&logits, classes, temperature);
    net.backward(&trace, &kl_grad)?;
    let kl = net.grads();

    let q = softmax_with_temperature(&logits, classes, temperature);
    let points = trace.points();
    let scale = 1.0 / (temperature * points as f64);
    let mut averaged: Vec<Vec<f64>> = kl.iter().map(|g| vec![0.0; g.len()]).collect();
    for target in 0..classes {
        let dce: Vec<f64> = q
            .iter()
            .enumerate()
            .map(|(i, &qi)| (qi - f64::from(u8::from(i % classes == target))) * scale)
            .collect();
        net.backward(&trace, &dce)?;
        for (acc, p) in averaged.iter_mut().zip(net.params()) {
            acc.iter_mut()
                .zip(&p.grad)
                .for_each(|(a, g)| *a += g / classes as f64);
        }
    }
    let deviation = kl
        .iter()
        .flatten()
        .zip(averaged.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(deviation)
}

/// `mask[l] = score_l < s0`. Scores sitting exactly on the threshold stay frozen.
pub fn select_layers(scores: &[LayerScore], s0: f64) -> Vec<bool> {
    let mut mask = vec![false; scores.iter().map(|s| s.layer_id + 1).max().unwrap_or(0)];
    for s in scores {
        mask[s.layer_id] = s.score < s0;
    }
    mask
}

/// Randomized parameter interpolation on the selected layers, using the
/// state's mask stream.
pub fn rpi_step(state: &mut AdaptState, alpha: f64, p: f64, selected: &[bool]) -> Result<()> {
    let AdaptState {
        net,
        source_params,
        rng_mask,
        ..
    } = state;
    interpolate(net, source_params, alpha, p, selected, rng_mask)
}

/// Each element of a selected layer is drawn with probability `p`; drawn
/// elements become `alpha · source + (1 − alpha) · current`.
pub(crate) fn interpolate(
    net: &mut Network,
    source: &[ParamTensor],
    alpha: f64,
    p: f64,
    selected: &[bool],
    rng: &mut Rng,
) -> Result<()> {
    if selected.len() != net.layer_count() {
        return Err(Error::Shape(format!(
            "layer mask has {} entries for {} layers",
            selected.len(),
            net.layer_count()
        )));
    }
    if p <= 0.0 {
        return Ok(());
    }
    for (param, src) in net.params_mut().iter_mut().zip(source) {
        if !param.trainable_candidate || !selected[param.layer_id] {
            continue;
        }
        for (v, s) in param.values.iter_mut().zip(&src.values) {
            let drawn = p >= 1.0 || rng.random::<f64>() < p;
            if drawn && alpha != 0.0 {
                *v = alpha * s + (1.0 - alpha) * *v;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapt::AdaptState;
    use crate::net::forward::tests::random_batch;
    use crate::net::NetSpec;
    use crate::rng::seeded;

    fn tiny_state(seed: u64) -> AdaptState {
        let spec = NetSpec {
            features: 1,
            encoder: vec![5, 4],
            decoder: vec![6],
            k: 3,
            classes: 3,
        };
        AdaptState::new(Network::init(spec, seed).unwrap(), seed)
    }

    #[test]
    fn uniform_head_scores_zero() {
        let mut state = tiny_state(1);
        let n = state.net.params().len();
        state.net.params_mut()[n - 2].values.fill(0.0);
        state.net.params_mut()[n - 1].values.fill(0.3);
        let batch = random_batch(2, 8, 1, 2);
        let scores = layer_scores(&mut state, &batch, 50.0).unwrap();
        assert_eq!(scores.len(), state.net.layer_count());
        assert!(scores.iter().all(|s| s.score == 0.0));
        // the class-averaged side only cancels to rounding
        let dev = check_gradient_identity(&mut state, &batch, 50.0).unwrap();
        assert!((0.0..1e-15).contains(&dev), "{dev}");
    }

    #[test]
    fn scoring_leaves_values_untouched() {
        let mut state = tiny_state(2);
        let before: Vec<Vec<f64>> = state
            .net
            .params()
            .iter()
            .map(|p| p.values.clone())
            .collect();
        layer_scores(&mut state, &random_batch(2, 8, 1, 3), 50.0).unwrap();
        let after: Vec<Vec<f64>> = state
            .net
            .params()
            .iter()
            .map(|p| p.values.clone())
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn gradient_identity_holds() {
        for seed in 0..5 {
            let mut state = tiny_state(10 + seed);
            let batch = random_batch(1, 8, 1, 20 + seed);
            for t in [1.0, 50.0] {
                let dev = check_gradient_identity(&mut state, &batch, t).unwrap();
                assert!((0.0..1e-8).contains(&dev), "deviation {dev}");
            }
        }
    }

    #[test]
    fn scores_match_finite_difference_oracle() {
        let mut state = tiny_state(3);
        let batch = random_batch(2, 8, 1, 4);
        let t = 2.0;
        let scores = layer_scores(&mut state, &batch, t).unwrap();
        let loss = |net: &Network| {
            let (z, _) = net.forward(&batch, BnMode::BatchStats).unwrap();
            kl_to_uniform(&z, 3, t).0
        };
        let layers = state.net.layers();
        for (layer, s) in layers.iter().zip(&scores) {
            let mut l1 = 0.0;
            let mut count = 0;
            for &pi in &layer.params {
                for e in 0..state.net.params()[pi].len() {
                    let mut net = state.net.clone();
                    let h = 1e-6;
                    net.params_mut()[pi].values[e] += h;
                    let up = loss(&net);
                    net.params_mut()[pi].values[e] -= 2.0 * h;
                    let down = loss(&net);
                    l1 += ((up - down) / (2.0 * h)).abs();
                    count += 1;
                }
            }
            assert_eq!(count, s.param_count);
            let oracle = l1 / count as f64;
            let rel = (s.score - oracle).abs() / oracle.abs().max(1e-12);
            assert!(
                rel < 1e-3 || (s.score - oracle).abs() < 1e-10,
                "layer {}: {} vs {}",
                layer.name,
                s.score,
                oracle
            );
        }
    }

    #[test]
    fn scores_are_permutation_invariant() {
        let mut state = tiny_state(4);
        let batch = random_batch(1, 12, 1, 5);
        let neighbors = state.net.neighbors(&batch).unwrap();
        let (z, trace) = state
            .net
            .forward_with_neighbors(&batch, &neighbors, BnMode::BatchStats)
            .unwrap();
        let (a, _) = scores_from_pass(&mut state.net, &z, &trace, 50.0).unwrap();

        let perm: Vec<usize> = (0..12).rev().collect();
        let mut shuffled = batch.clone();
        let cloud = &mut shuffled.clouds[0];
        cloud.positions = perm.iter().map(|&i| batch.clouds[0].positions[i]).collect();
        cloud.features = perm.iter().map(|&i| batch.clouds[0].features[i]).collect();
        let remapped = vec![neighbors[0].permuted(&perm)];
        let (z, trace) = state
            .net
            .forward_with_neighbors(&shuffled, &remapped, BnMode::BatchStats)
            .unwrap();
        let (b, _) = scores_from_pass(&mut state.net, &z, &trace, 50.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(x.score >= 0.0);
            assert!(
                (x.score - y.score).abs() <= 1e-12 * x.score.max(1e-12),
                "{} vs {}",
                x.score,
                y.score
            );
        }
    }

    fn score(layer_id: usize, score: f64) -> LayerScore {
        LayerScore {
            layer_id,
            score,
            param_count: 1,
        }
    }

    #[test]
    fn selection_examples() {
        let scores = vec![score(0, 0.0005), score(1, 0.002), score(2, 0.0)];
        assert_eq!(select_layers(&scores, 1e9), vec![true; 3]);
        assert_eq!(select_layers(&scores, 0.0), vec![false; 3]);
        assert_eq!(select_layers(&scores[..2], 0.001), vec![true, false]);
        assert_eq!(select_layers(&[score(0, 0.001)], 0.001), vec![false]);
    }

    fn perturbed(seed: u64) -> AdaptState {
        let mut state = tiny_state(seed);
        let mut rng = seeded(seed + 100);
        for p in state.net.params_mut() {
            p.values
                .iter_mut()
                .for_each(|v| *v += rng.random_range(-0.5..0.5));
            p.values[0] = -0.0;
        }
        state
    }

    fn values(state: &AdaptState) -> Vec<u64> {
        state
            .net
            .params()
            .iter()
            .flat_map(|p| p.values.iter().map(|v| v.to_bits()))
            .collect()
    }

    #[test]
    fn rpi_edge_cases() {
        let mut s = perturbed(1);
        let all = vec![true; s.net.layer_count()];
        let before = values(&s);
        rpi_step(&mut s, 0.999, 0.0, &all).unwrap();
        assert_eq!(values(&s), before);
        rpi_step(&mut s, 0.0, 1.0, &all).unwrap();
        assert_eq!(values(&s), before);
        rpi_step(&mut s, 0.0, 0.5, &all).unwrap();
        assert_eq!(values(&s), before);

        rpi_step(&mut s, 1.0, 1.0, &all).unwrap();
        for (p, src) in s.net.params().iter().zip(&s.source_params) {
            assert_eq!(p.values, src.values);
        }
    }

    #[test]
    fn rpi_touches_only_selected_layers() {
        let mut s = perturbed(2);
        let before = s.net.params().to_vec();
        let mut selected = vec![false; s.net.layer_count()];
        selected[1] = true;
        rpi_step(&mut s, 1.0, 1.0, &selected).unwrap();
        for (p, b) in s.net.params().iter().zip(&before) {
            if p.layer_id == 1 {
                assert_ne!(p.values, b.values);
            } else {
                assert_eq!(p.values, b.values);
            }
        }
    }

    #[test]
    fn rpi_contracts_masked_elements() {
        let mut s = perturbed(3);
        let before = s.net.params().to_vec();
        let alpha = 0.999;
        let all = vec![true; s.net.layer_count()];
        rpi_step(&mut s, alpha, 0.3, &all).unwrap();
        let mut masked = 0;
        let mut total = 0;
        for ((p, b), src) in s.net.params().iter().zip(&before).zip(&s.source_params) {
            for ((v, old), s0) in p.values.iter().zip(&b.values).zip(&src.values) {
                total += 1;
                if v.to_bits() == old.to_bits() {
                    continue;
                }
                masked += 1;
                let expect = (1.0 - alpha) * (old - s0).abs();
                let got = (v - s0).abs();
                let tol = 4.0 * f64::EPSILON * (s0.abs() + old.abs());
                assert!((got - expect).abs() <= tol, "{got} vs {expect}");
            }
        }
        let frac = masked as f64 / total as f64;
        assert!((0.15..0.45).contains(&frac), "masked fraction {frac}");
    }
}
