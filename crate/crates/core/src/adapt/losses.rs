//! Entropy, KL-to-uniform scoring loss and the entropy-gated consistency loss.

use serde::{Deserialize, Serialize};

use crate::net::softmax_with_temperature;

/// Whether entropies are divided by `ln C` before thresholding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntropyMode {
    #[default]
    Normalized,
    Raw,
}

/// Shannon entropy of every row, with `0 · ln 0 = 0`.
pub fn entropy(probs: &[f64], classes: usize, mode: EntropyMode) -> Vec<f64> {
    let scale = match mode {
        EntropyMode::Normalized => 1.0 / (classes as f64).ln(),
        EntropyMode::Raw => 1.0,
    };
    probs
        .chunks_exact(classes)
        .map(|row| {
            let h: f64 = row.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
            h * scale
        })
        .collect()
}

/// Mean over points of `KL(u ‖ softmax(z / T))` and its gradient w.r.t. the logits.
///
/// With `q = softmax(z/T)`, `∂KL/∂z = (q − u) / T` per point.
pub fn kl_to_uniform(logits: &[f64], classes: usize, temperature: f64) -> (f64, Vec<f64>) {
    let q = softmax_with_temperature(logits, classes, temperature);
    let points = logits.len() / classes;
    let u = 1.0 / classes as f64;
    let ln_u = u.ln();
    let inv = 1.0 / points as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for (i, (qr, zr)) in q
        .chunks_exact(classes)
        .zip(logits.chunks_exact(classes))
        .enumerate()
    {
        // ln q_c from the scaled logits directly, so saturated rows stay finite
        let max = zr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = zr
            .iter()
            .map(|z| ((z - max) / temperature).exp())
            .sum::<f64>()
            .ln();
        for c in 0..classes {
            let ln_q = (zr[c] - max) / temperature - lse;
            loss += u * (ln_u - ln_q);
            grad[i * classes + c] = (qr[c] - u) * inv / temperature;
        }
    }
    (loss * inv, grad)
}

/// Result of the entropy-gated consistency loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Consistency {
    pub loss: f64,
    pub reliable_count: usize,
    pub reliable_mask: Vec<bool>,
}

/// Points whose weak-view entropy is strictly below `tau`.
pub fn reliable_mask(p_weak: &[f64], classes: usize, tau: f64, mode: EntropyMode) -> Vec<bool> {
    entropy(p_weak, classes, mode)
        .into_iter()
        .map(|h| h < tau)
        .collect()
}

/// `(1/N_rel) Σ_reliable −Σ_c p_weak · ln p_strong`; zero when nothing is reliable.
pub fn consistency_loss(
    p_weak: &[f64],
    p_strong: &[f64],
    classes: usize,
    tau: f64,
    mode: EntropyMode,
) -> Consistency {
    assert_eq!(
        p_weak.len(),
        p_strong.len(),
        "views must have the same shape"
    );
    let ln_strong: Vec<f64> = p_strong
        .iter()
        .map(|&p| p.max(f64::MIN_POSITIVE).ln())
        .collect();
    consistency_from_log(
        p_weak,
        &ln_strong,
        classes,
        reliable_mask(p_weak, classes, tau, mode),
    )
}

pub(crate) fn consistency_from_log(
    p_weak: &[f64],
    ln_strong: &[f64],
    classes: usize,
    mask: Vec<bool>,
) -> Consistency {
    let reliable_count = mask.iter().filter(|&&m| m).count();
    if reliable_count == 0 {
        return Consistency {
            loss: 0.0,
            reliable_count,
            reliable_mask: mask,
        };
    }
    let mut sum = 0.0;
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let w = &p_weak[i * classes..(i + 1) * classes];
        let s = &ln_strong[i * classes..(i + 1) * classes];
        sum -= w.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
    }
    Consistency {
        loss: sum / reliable_count as f64,
        reliable_count,
        reliable_mask: mask,
    }
}

/// Row-wise log-softmax at temperature one.
pub(crate) fn log_softmax(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    for (zr, dst) in logits
        .chunks_exact(classes)
        .zip(out.chunks_exact_mut(classes))
    {
        let max = zr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + zr.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        dst.iter_mut().zip(zr).for_each(|(d, z)| *d = z - lse);
    }
    out
}

/// Gradients of the consistency loss w.r.t. the strong and (optionally) weak logits.
///
/// Strong side: `(p_s − p_w) / N_rel` on reliable rows. Weak side, when the
/// weak view is not detached: `p_w ⊙ (g − ⟨p_w, g⟩)` with `g = −ln p_s / N_rel`.
pub(crate) fn consistency_grads(
    p_weak: &[f64],
    p_strong: &[f64],
    ln_strong: &[f64],
    classes: usize,
    c: &Consistency,
    with_weak: bool,
) -> (Vec<f64>, Option<Vec<f64>>) {
    let mut ds = vec![0.0; p_strong.len()];
    let mut dw = with_weak.then(|| vec![0.0; p_weak.len()]);
    if c.reliable_count == 0 {
        return (ds, dw);
    }
    let inv = 1.0 / c.reliable_count as f64;
    for (i, _) in c.reliable_mask.iter().enumerate().filter(|(_, &m)| m) {
        let r = i * classes..(i + 1) * classes;
        let (w, s, ls) = (
            &p_weak[r.clone()],
            &p_strong[r.clone()],
            &ln_strong[r.clone()],
        );
        let w_sum: f64 = w.iter().sum();
        for k in 0..classes {
            ds[i * classes + k] = (s[k] * w_sum - w[k]) * inv;
        }
        if let Some(dw) = dw.as_mut() {
            let dot: f64 = w.iter().zip(ls).map(|(a, b)| -a * b * inv).sum();
            for k in 0..classes {
                dw[i * classes + k] = w[k] * (-ls[k] * inv - dot);
            }
        }
    }
    (ds, dw)
}

/// Mean prediction entropy (TENT objective) and its logit gradient:
/// `∂H/∂z_j = −p_j (ln p_j + H)`.
pub(crate) fn mean_entropy(logits: &[f64], classes: usize) -> (f64, Vec<f64>) {
    let p = softmax_with_temperature(logits, classes, 1.0);
    let lp = log_softmax(logits, classes);
    let points = logits.len() / classes;
    let inv = 1.0 / points as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for i in 0..points {
        let r = i * classes..(i + 1) * classes;
        let h: f64 = p[r.clone()]
            .iter()
            .zip(&lp[r.clone()])
            .map(|(a, b)| -a * b)
            .sum();
        total += h;
        for k in r {
            grad[k] = -p[k] * (lp[k] + h) * inv;
        }
    }
    (total * inv, grad)
}
