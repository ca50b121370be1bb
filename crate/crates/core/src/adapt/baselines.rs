//! Simple continual test-time adaptation baselines.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::losses::mean_entropy;
use super::{apcotta_step, AdaptConfig, AdaptState};
use crate::cloud::SubCloudBatch;
use crate::net::ops::cross_entropy;
use crate::net::{argmax_rows, BnMode};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    /// Frozen network with running BN statistics.
    Source,
    /// Frozen weights, batch BN statistics.
    BnStats,
    /// Hard pseudo-label cross-entropy on all layers.
    PseudoLabel,
    /// Entropy minimisation on BN affine parameters, never reset.
    TentContinual,
    /// As `TentContinual`, reset to the source at every domain boundary.
    TentOnline,
    Apcotta,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Source,
        Method::BnStats,
        Method::PseudoLabel,
        Method::TentContinual,
        Method::TentOnline,
        Method::Apcotta,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Source => "source",
            Method::BnStats => "bnstats",
            Method::PseudoLabel => "pseudo",
            Method::TentContinual => "tent",
            Method::TentOnline => "tent-online",
            Method::Apcotta => "apcotta",
        }
    }

    /// Whether the method restores the source model when a new domain starts.
    pub fn resets_at_boundary(self) -> bool {
        self == Method::TentOnline
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.name().to_string()
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        Ok(match key.as_str() {
            "source" => Method::Source,
            "bnstats" | "bn-stats" => Method::BnStats,
            "pseudo" | "pseudo-label" => Method::PseudoLabel,
            "tent" | "tent-continual" => Method::TentContinual,
            "tent-online" => Method::TentOnline,
            "apcotta" => Method::Apcotta,
            _ => return Err(Error::Validation(format!("unknown method `{s}`"))),
        })
    }
}

/// One step of `method` on an unlabeled batch; returns per-point predictions.
/// `Apcotta` delegates to [`apcotta_step`] and drops the diagnostics.
pub fn baseline_step(
    state: &mut AdaptState,
    batch: &SubCloudBatch,
    method: Method,
    cfg: &AdaptConfig,
) -> Result<Vec<u8>> {
    let classes = state.net.spec().classes;
    let net = &mut state.net;
    let predictions = match method {
        Method::Source => argmax_rows(&net.forward(batch, BnMode::RunningStats)?.0, classes),
        Method::BnStats => argmax_rows(&net.forward(batch, BnMode::BatchStats)?.0, classes),
        Method::PseudoLabel => {
            let (logits, trace) = net.forward(batch, BnMode::BatchStats)?;
            let pred = argmax_rows(&logits, classes);
            let targets: Vec<Option<u8>> = pred.iter().map(|&c| Some(c)).collect();
            let (_, grad, _) = cross_entropy(&logits, classes, &targets);
            net.backward(&trace, &grad)?;
            net.sgd_step(cfg.lr, cfg.momentum, &vec![true; net.layer_count()])?;
            pred
        }
        Method::TentContinual | Method::TentOnline => {
            let (logits, trace) = net.forward(batch, BnMode::BatchStats)?;
            let (loss, grad) = mean_entropy(&logits, classes);
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    layer: "entropy loss".into(),
                });
            }
            net.backward(&trace, &grad)?;
            net.sgd_step(cfg.lr, cfg.momentum, &net.bn_layer_mask())?;
            argmax_rows(&logits, classes)
        }
        Method::Apcotta => return Ok(apcotta_step(state, batch, cfg)?.0),
    };
    state.t += 1;
    Ok(predictions)
}

impl AdaptState {
    /// Mark the start of domain `domain`; methods that reset on domain
    /// change restore the source parameters.
    pub fn begin_domain(&mut self, domain: usize, method: Method) -> Result<()> {
        self.domain = domain;
        if method.resets_at_boundary() {
            self.reset_to_source()?;
        }
        Ok(())
    }
}
