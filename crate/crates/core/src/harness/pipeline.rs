//! End-to-end runs: scenes, pretraining, benchmark, stream adaptation,
//! ablations and sweeps, all in memory and paired by seed.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::scene::synth_scene;
use super::stream::{run_stream, Domain, StreamRun, StreamSpec};
use crate::adapt::{AdaptConfig, Method, Toggles};
use crate::cloud::{grid_subsample, load_cloud, PointCloud};
use crate::corrupt::{corrupt_domains, BenchmarkManifest, DomainSpec};
use crate::net::{pretrain, Network, PretrainReport};
use crate::rng::seeded;
use crate::{Error, Result};

/// Everything a stream run needs: the source model, the clean target scene
/// and its corrupted domains.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub source: Network,
    pub pretrain: PretrainReport,
    pub clean: Vec<Domain>,
    pub domains: Vec<Domain>,
    pub manifest: BenchmarkManifest,
}

fn subsample(cloud: PointCloud, cell: f64) -> Result<PointCloud> {
    if cell > 0.0 {
        grid_subsample(&cloud, cell)
    } else {
        Ok(cloud)
    }
}

/// Manifest of the configured domain order.
pub fn manifest_for(cfg: &RunConfig) -> BenchmarkManifest {
    let b = &cfg.benchmark;
    let domains = b
        .domains
        .iter()
        .enumerate()
        .map(|(i, &kind)| DomainSpec {
            kind,
            severity: b.severity,
            path: format!("{:02}_{kind}_s{}.xyzl", i + 1, b.severity),
        })
        .collect();
    BenchmarkManifest {
        profile: b.profile,
        source: "target".into(),
        seed: cfg.seeds.benchmark(),
        domains,
    }
}

/// Source and target scenes.
pub fn scenes(cfg: &RunConfig) -> Result<(PointCloud, PointCloud)> {
    let source = subsample(
        synth_scene(&cfg.scene, cfg.seeds.source_scene())?,
        cfg.subsample_cell,
    )?;
    let target = subsample(
        synth_scene(&cfg.scene, cfg.seeds.target_scene())?,
        cfg.subsample_cell,
    )?;
    Ok((source, target))
}

/// Pretrain a fresh network on `source`.
pub fn pretrain_source(cfg: &RunConfig, source: &PointCloud) -> Result<(Network, PretrainReport)> {
    let mut net = Network::init(cfg.network.clone(), cfg.seeds.init())?;
    let report = pretrain(
        &mut net,
        std::slice::from_ref(source),
        &cfg.pretrain,
        &mut seeded(cfg.seeds.pretrain()),
    )?;
    Ok((net, report))
}

/// Corrupted domains of `target` in manifest order.
pub fn benchmark_domains(target: &PointCloud, manifest: &BenchmarkManifest) -> Result<Vec<Domain>> {
    let clouds = corrupt_domains(target, manifest)?;
    Ok(manifest
        .domains
        .iter()
        .zip(clouds)
        .map(|(d, cloud)| Domain {
            name: d.kind.name().into(),
            cloud,
        })
        .collect())
}

/// Read a manifest and the domain clouds it lists, resolved against the
/// manifest's directory.
pub fn load_benchmark(manifest_path: impl AsRef<Path>) -> Result<(BenchmarkManifest, Vec<Domain>)> {
    let manifest_path = manifest_path.as_ref();
    let manifest = BenchmarkManifest::load(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let domains = manifest
        .domains
        .iter()
        .map(|d| {
            Ok(Domain {
                name: d.kind.name().into(),
                cloud: load_cloud(dir.join(&d.path))?,
            })
        })
        .collect::<Result<_>>()?;
    Ok((manifest, domains))
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let (source_scene, target) = scenes(cfg)?;
    let (source, pretrain) = pretrain_source(cfg, &source_scene)?;
    let manifest = manifest_for(cfg);
    let domains = benchmark_domains(&target, &manifest)?;
    Ok(Prepared {
        source,
        pretrain,
        clean: vec![Domain {
            name: "clean".into(),
            cloud: target,
        }],
        domains,
        manifest,
    })
}

impl Prepared {
    /// Wrap a trained model and a stored benchmark; there is no clean scene.
    pub fn from_parts(source: Network, manifest: BenchmarkManifest, domains: Vec<Domain>) -> Self {
        Self {
            source,
            pretrain: PretrainReport::default(),
            clean: Vec::new(),
            domains,
            manifest,
        }
    }

    pub fn stream<'a>(&'a self, cfg: &'a RunConfig) -> StreamSpec<'a> {
        StreamSpec {
            domains: &self.domains,
            config: &cfg.stream,
            seed: cfg.seeds.stream(),
        }
    }

    pub fn run(&self, cfg: &RunConfig, method: Method, adapt: &AdaptConfig) -> Result<StreamRun> {
        run_stream(
            &self.source,
            &self.stream(cfg),
            method,
            adapt,
            cfg.seeds.adapt(),
        )
    }

    /// Frozen source model on the uncorrupted target scene.
    pub fn clean_run(&self, cfg: &RunConfig) -> Result<StreamRun> {
        let stream = StreamSpec {
            domains: &self.clean,
            config: &cfg.stream,
            seed: cfg.seeds.stream(),
        };
        run_stream(
            &self.source,
            &stream,
            Method::Source,
            &cfg.adapt,
            cfg.seeds.adapt(),
        )
    }
}

/// One row of the ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub toggles: Toggles,
    pub mean_oa: Option<f64>,
    pub mean_miou: Option<f64>,
}

/// The four module combinations, in table order.
pub fn ablation_rows() -> [(&'static str, Toggles); 4] {
    [
        (
            "none",
            Toggles {
                dstl: false,
                ebcl: false,
                rpi: false,
            },
        ),
        (
            "dstl",
            Toggles {
                dstl: true,
                ebcl: false,
                rpi: false,
            },
        ),
        (
            "dstl+ebcl",
            Toggles {
                dstl: true,
                ebcl: true,
                rpi: false,
            },
        ),
        (
            "dstl+ebcl+rpi",
            Toggles {
                dstl: true,
                ebcl: true,
                rpi: true,
            },
        ),
    ]
}

/// Run every ablation row with shared seeds; only the toggles change.
pub fn run_ablation(prepared: &Prepared, cfg: &RunConfig) -> Result<Vec<AblationRow>> {
    ablation_rows()
        .into_iter()
        .map(|(name, toggles)| {
            let adapt = AdaptConfig {
                toggles,
                ..cfg.adapt.clone()
            };
            let run = prepared.run(cfg, Method::Apcotta, &adapt)?;
            Ok(AblationRow {
                name: name.into(),
                toggles,
                mean_oa: run.report.mean_oa,
                mean_miou: run.report.mean_miou,
            })
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("row,dstl,ebcl,rpi,mean_oa,mean_miou\n");
    for r in rows {
        let t = r.toggles;
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.name,
            t.dstl,
            t.ebcl,
            t.rpi,
            fmt_opt(r.mean_oa),
            fmt_opt(r.mean_miou)
        )
        .unwrap();
    }
    out
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Hyperparameters that can be swept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    S0,
    Tau,
    Alpha,
    P,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::S0 => "S0",
            SweepParam::Tau => "tau",
            SweepParam::Alpha => "alpha",
            SweepParam::P => "p",
        }
    }

    pub fn default_grid(self) -> Vec<f64> {
        match self {
            SweepParam::S0 => vec![0.0, 0.0005, 0.001, 0.0015, 0.002],
            SweepParam::Tau => vec![0.7, 0.75, 0.8, 0.85, 0.9],
            SweepParam::Alpha => vec![0.99, 0.995, 0.999, 0.9995, 0.9999],
            SweepParam::P => vec![0.001, 0.005, 0.01, 0.05, 0.1],
        }
    }

    pub fn apply(self, cfg: &AdaptConfig, value: f64) -> AdaptConfig {
        let mut c = cfg.clone();
        match self {
            SweepParam::S0 => c.s0 = value,
            SweepParam::Tau => c.tau = value,
            SweepParam::Alpha => c.alpha = value,
            SweepParam::P => c.p = value,
        }
        c
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s0" => Ok(SweepParam::S0),
            "tau" => Ok(SweepParam::Tau),
            "alpha" => Ok(SweepParam::Alpha),
            "p" => Ok(SweepParam::P),
            _ => Err(Error::Validation(format!("unknown sweep parameter `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub mean_miou: Option<f64>,
    pub mean_oa: Option<f64>,
}

pub fn run_sweep(
    prepared: &Prepared,
    cfg: &RunConfig,
    param: SweepParam,
    grid: &[f64],
) -> Result<Vec<SweepRow>> {
    grid.iter()
        .map(|&value| {
            let run = prepared.run(cfg, Method::Apcotta, &param.apply(&cfg.adapt, value))?;
            Ok(SweepRow {
                value,
                mean_miou: run.report.mean_miou,
                mean_oa: run.report.mean_oa,
            })
        })
        .collect()
}

pub fn sweep_csv(param: SweepParam, rows: &[SweepRow]) -> String {
    let mut out = format!("{},mean_miou,mean_oa\n", param.name());
    for r in rows {
        writeln!(
            out,
            "{},{},{}",
            r.value,
            fmt_opt(r.mean_miou),
            fmt_opt(r.mean_oa)
        )
        .unwrap();
    }
    out
}

/// Results of the full comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub seed: u64,
    pub pretrain: PretrainReport,
    pub clean: StreamRun,
    pub methods: Vec<StreamRun>,
    pub ablation: Vec<AblationRow>,
}

impl PipelineReport {
    pub fn method(&self, m: Method) -> Option<&StreamRun> {
        self.methods.iter().find(|r| r.report.method == m.name())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Mean mIoU and OA of every method, one line each.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("method,mean_miou,mean_oa\n");
        let clean = &self.clean.report;
        writeln!(
            out,
            "clean-source,{},{}",
            fmt_opt(clean.mean_miou),
            fmt_opt(clean.mean_oa)
        )
        .unwrap();
        for r in &self.methods {
            writeln!(
                out,
                "{},{},{}",
                r.report.method,
                fmt_opt(r.report.mean_miou),
                fmt_opt(r.report.mean_oa)
            )
            .unwrap();
        }
        out
    }
}

/// Scenes, pretraining, benchmark, every method and the ablation. The
/// ablation's last row reuses the full-method run, which it equals.
pub fn run_pipeline(cfg: &RunConfig, methods: &[Method]) -> Result<PipelineReport> {
    let prepared = prepare(cfg)?;
    let clean = prepared.clean_run(cfg)?;
    let runs: Vec<StreamRun> = methods
        .iter()
        .map(|&m| prepared.run(cfg, m, &cfg.adapt))
        .collect::<Result<_>>()?;
    let full = runs.iter().find(|r| {
        r.report.method == Method::Apcotta.name() && cfg.adapt.toggles == Toggles::default()
    });
    let mut ablation = Vec::new();
    for (name, toggles) in ablation_rows() {
        let (mean_oa, mean_miou) = match full {
            Some(run) if toggles == Toggles::default() => {
                (run.report.mean_oa, run.report.mean_miou)
            }
            _ => {
                let run = prepared.run(
                    cfg,
                    Method::Apcotta,
                    &AdaptConfig {
                        toggles,
                        ..cfg.adapt.clone()
                    },
                )?;
                (run.report.mean_oa, run.report.mean_miou)
            }
        };
        ablation.push(AblationRow {
            name: name.into(),
            toggles,
            mean_oa,
            mean_miou,
        });
    }
    Ok(PipelineReport {
        seed: cfg.seeds.master,
        pretrain: prepared.pretrain,
        clean,
        methods: runs,
        ablation,
    })
}

/// Write `<stem>.csv`, `<stem>.json` and, for adaptation runs,
/// `<stem>.diagnostics.jsonl` into `dir`.
pub fn write_run(dir: impl AsRef<Path>, stem: &str, run: &StreamRun) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io("creating directory", dir, e))?;
    let write = |name: String, text: String| {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io("writing report", &path, e))
    };
    write(format!("{stem}.csv"), run.report.to_csv())?;
    write(format!("{stem}.json"), run.report.to_json())?;
    if !run.diagnostics.is_empty() {
        write(format!("{stem}.diagnostics.jsonl"), run.diagnostics_log())?;
    }
    Ok(())
}
