//! Stream runs: every method sees the same sequence of sub-cloud batches;
//! ground truth only reaches the confusion matrices.

use serde::{Deserialize, Serialize};

use super::config::StreamConfig;
use crate::adapt::{apcotta_step, baseline_step, AdaptConfig, AdaptState, Method, StepDiagnostics};
use crate::cloud::{make_batch, PointCloud, SubCloudBatch};
use crate::eval::{ConfusionMatrix, StreamReport};
use crate::net::Network;
use crate::rng::{seeded, split_seed};
use crate::Result;

/// One named target domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pub name: String,
    pub cloud: PointCloud,
}

/// An unlabelled input batch and the ground truth kept beside it for scoring.
#[derive(Debug, Clone)]
pub struct StreamBatch {
    pub input: SubCloudBatch,
    truths: Vec<u8>,
}

impl StreamBatch {
    fn new(cloud: &PointCloud, input: SubCloudBatch) -> Self {
        let truths = match cloud.labels() {
            Some(labels) => input.source_indices().map(|i| labels[i]).collect(),
            None => vec![crate::cloud::IGNORE; input.total_points()],
        };
        Self { input, truths }
    }
}

/// Ordered domains and the number of batches drawn from each.
#[derive(Debug, Clone)]
pub struct StreamSpec<'a> {
    pub domains: &'a [Domain],
    pub config: &'a StreamConfig,
    /// Seed of the batch geometry; domain `d` uses `split_seed(seed, d)`.
    pub seed: u64,
}

impl StreamSpec<'_> {
    /// Batches of domain `index`, identical for every method.
    pub fn batches(&self, index: usize) -> Result<Vec<StreamBatch>> {
        let cfg = self.config;
        let cloud = &self.domains[index].cloud;
        let mut rng = seeded(split_seed(self.seed, index as u64));
        (0..cfg.batches_per_domain)
            .map(|_| {
                let input = make_batch(cloud, cfg.batch_size, cfg.points, cfg.radius, &mut rng)?;
                Ok(StreamBatch::new(cloud, input))
            })
            .collect()
    }
}

/// Result of running one method over a stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamRun {
    pub report: StreamReport,
    /// Per-step records of adaptation steps; empty for the baselines.
    pub diagnostics: Vec<StepDiagnostics>,
    /// Predictions of every batch, concatenated per domain.
    pub predictions: Vec<Vec<u8>>,
}

impl StreamRun {
    /// Diagnostics as newline-terminated JSON lines.
    pub fn diagnostics_log(&self) -> String {
        self.diagnostics
            .iter()
            .map(|d| d.to_json_line() + "\n")
            .collect()
    }
}

/// Adapt continually over all domains in order, starting from `source`.
pub fn run_stream(
    source: &Network,
    stream: &StreamSpec<'_>,
    method: Method,
    cfg: &AdaptConfig,
    adapt_seed: u64,
) -> Result<StreamRun> {
    stream.config.validate()?;
    cfg.validate()?;
    let classes = source.spec().classes;
    let mut state = AdaptState::new(source.clone(), adapt_seed);
    let mut diagnostics = Vec::new();
    let mut predictions = Vec::with_capacity(stream.domains.len());
    let mut matrices = Vec::with_capacity(stream.domains.len());
    for (d, domain) in stream.domains.iter().enumerate() {
        state.begin_domain(d, method)?;
        let mut cm = ConfusionMatrix::new(classes);
        let mut domain_preds = Vec::new();
        for batch in stream.batches(d)? {
            let pred = if method == Method::Apcotta {
                let (pred, diag) = apcotta_step(&mut state, &batch.input, cfg)?;
                diagnostics.push(diag);
                pred
            } else {
                baseline_step(&mut state, &batch.input, method, cfg)?
            };
            cm.update(&batch.truths, &pred)?;
            domain_preds.extend_from_slice(&pred);
        }
        matrices.push((domain.name.clone(), cm));
        predictions.push(domain_preds);
    }
    Ok(StreamRun {
        report: StreamReport::new(method.name(), classes, matrices),
        diagnostics,
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::IGNORE;
    use crate::net::NetSpec;
    use crate::rng::seeded;
    use rand::Rng;

    fn domain(name: &str, seed: u64) -> Domain {
        let mut rng = seeded(seed);
        let n = 400;
        let positions: Vec<[f64; 3]> = (0..n)
            .map(|_| {
                [
                    rng.random_range(0.0..20.0),
                    rng.random_range(0.0..20.0),
                    rng.random_range(0.0..3.0),
                ]
            })
            .collect();
        let labels = positions
            .iter()
            .map(|p| if p[2] > 1.5 { 1 } else { 0 })
            .collect();
        let features = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        Domain {
            name: name.into(),
            cloud: PointCloud::new(positions, features, 1, Some(labels), 2).unwrap(),
        }
    }

    fn small() -> (Network, Vec<Domain>, StreamConfig) {
        let spec = NetSpec {
            features: 1,
            encoder: vec![8],
            decoder: vec![8],
            k: 4,
            classes: 2,
        };
        let net = Network::init(spec, 1).unwrap();
        let cfg = StreamConfig {
            batch_size: 2,
            points: 32,
            radius: 5.0,
            batches_per_domain: 3,
        };
        (net, vec![domain("a", 1), domain("b", 2)], cfg)
    }

    #[test]
    fn every_method_runs_and_counts_all_points() {
        let (net, domains, cfg) = small();
        let stream = StreamSpec {
            domains: &domains,
            config: &cfg,
            seed: 3,
        };
        for m in Method::ALL {
            let run = run_stream(&net, &stream, m, &AdaptConfig::default(), 4).unwrap();
            assert_eq!(run.report.rows.len(), 2);
            for row in &run.report.rows {
                assert_eq!(row.metrics.class_points.iter().sum::<u64>(), 3 * 64);
            }
            assert_eq!(
                run.diagnostics.len(),
                if m == Method::Apcotta { 6 } else { 0 }
            );
        }
    }

    #[test]
    fn batches_are_paired_across_calls() {
        let (_, domains, cfg) = small();
        let stream = StreamSpec {
            domains: &domains,
            config: &cfg,
            seed: 5,
        };
        let a: Vec<Vec<usize>> = stream
            .batches(1)
            .unwrap()
            .iter()
            .map(|b| b.input.source_indices().collect())
            .collect();
        let b: Vec<Vec<usize>> = stream
            .batches(1)
            .unwrap()
            .iter()
            .map(|b| b.input.source_indices().collect())
            .collect();
        assert_eq!(a, b);
    }

    /// Ground truth must never influence adaptation: scrambling the labels
    /// changes the scores but not a single prediction.
    #[test]
    fn labels_never_reach_the_update_path() {
        let (net, domains, cfg) = small();
        let scrambled: Vec<Domain> = domains
            .iter()
            .map(|d| {
                let labels: Vec<u8> = d
                    .cloud
                    .labels()
                    .unwrap()
                    .iter()
                    .enumerate()
                    .map(|(i, &l)| if i % 3 == 0 { IGNORE } else { 1 - l })
                    .collect();
                let cloud = PointCloud::new(
                    d.cloud.positions().to_vec(),
                    d.cloud.features().to_vec(),
                    1,
                    Some(labels),
                    2,
                )
                .unwrap();
                Domain {
                    name: d.name.clone(),
                    cloud,
                }
            })
            .collect();
        let cfg_adapt = AdaptConfig {
            s0: 1e9,
            ..Default::default()
        };
        for m in [Method::Apcotta, Method::PseudoLabel, Method::TentContinual] {
            let a = run_stream(
                &net,
                &StreamSpec {
                    domains: &domains,
                    config: &cfg,
                    seed: 6,
                },
                m,
                &cfg_adapt,
                7,
            )
            .unwrap();
            let b = run_stream(
                &net,
                &StreamSpec {
                    domains: &scrambled,
                    config: &cfg,
                    seed: 6,
                },
                m,
                &cfg_adapt,
                7,
            )
            .unwrap();
            assert_eq!(a.predictions, b.predictions);
            assert_eq!(a.diagnostics, b.diagnostics);
            assert_ne!(a.report, b.report);
        }
    }

    #[test]
    fn diagnostics_log_has_one_line_per_step() {
        let (net, domains, cfg) = small();
        let run = run_stream(
            &net,
            &StreamSpec {
                domains: &domains,
                config: &cfg,
                seed: 8,
            },
            Method::Apcotta,
            &AdaptConfig::default(),
            9,
        )
        .unwrap();
        let log = run.diagnostics_log();
        assert_eq!(log.lines().count(), 6);
        assert_eq!(
            log.lines().last().map(|l| l.contains("\"domain\":1")),
            Some(true)
        );
    }
}
