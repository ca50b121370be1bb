//! `apcotta`: synthesise scenes, pretrain, build corrupted benchmarks, adapt
//! and score from the command line.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use apcotta_core::adapt::Method;
use apcotta_core::cloud::{grid_subsample, load_cloud, save_cloud, IGNORE};
use apcotta_core::corrupt::{build_benchmark, Profile, MANIFEST_FILE};
use apcotta_core::eval::ConfusionMatrix;
use apcotta_core::harness::{
    ablation_csv, load_benchmark, manifest_for, run_ablation, run_pipeline, run_sweep, sweep_csv,
    synth_scene, write_run, Prepared, RunConfig, SweepParam,
};
use apcotta_core::net::{load_checkpoint, pretrain, save_checkpoint, Network};
use apcotta_core::rng::seeded;
use apcotta_core::{Error, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "apcotta",
    version,
    about = "Continual test-time adaptation for point-cloud segmentation"
)]
struct Cli {
    /// TOML run configuration; missing keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override a config key, e.g. `--set adapt.tau=0.7`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled synthetic scene.
    Synth {
        /// TOML table of scene parameters, overlaid on the configured scene.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a source model on a labelled cloud.
    Pretrain {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write every configured corruption of a clean cloud plus a manifest.
    Corrupt {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        profile: Option<Profile>,
        #[arg(long)]
        severity: Option<u8>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run one method over a stored benchmark.
    Adapt {
        #[command(flatten)]
        input: StoredRun,
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        no_dstl: bool,
        #[arg(long)]
        no_ebcl: bool,
        #[arg(long)]
        no_rpi: bool,
    },
    /// Cumulative component ablation over a stored benchmark.
    Ablate {
        #[command(flatten)]
        input: StoredRun,
    },
    /// Sweep one adaptation parameter over a stored benchmark.
    Sweep {
        #[command(flatten)]
        input: StoredRun,
        /// One of s0, tau, alpha, p.
        #[arg(long)]
        param: SweepParam,
        /// Comma-separated values; defaults to the parameter's standard grid.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// Score predictions (one label per line) against a labelled cloud.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Print the effective configuration as TOML.
    Config,
    /// Synthesise, pretrain, corrupt and compare every method in memory.
    Run {
        #[arg(long)]
        report: PathBuf,
    },
}

#[derive(Args)]
struct StoredRun {
    #[arg(long)]
    ckpt: PathBuf,
    /// Benchmark manifest, or the directory that holds it.
    #[arg(long)]
    manifest: PathBuf,
    /// Directory for reports.
    #[arg(long)]
    report: PathBuf,
}

impl StoredRun {
    fn prepare(&self) -> Result<Prepared> {
        let source = load_checkpoint(&self.ckpt, None)?;
        let path = if self.manifest.is_dir() {
            self.manifest.join(MANIFEST_FILE)
        } else {
            self.manifest.clone()
        };
        let (manifest, domains) = load_benchmark(path)?;
        Ok(Prepared::from_parts(source, manifest, domains))
    }
}

fn config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seeds.master = seed;
    }
    cfg.with_assignments(&cli.set)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io("creating directory", dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io("writing report", path, e))
}

fn read_predictions(path: &Path) -> Result<Vec<u8>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io("reading predictions", path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<u8>().map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: format!("prediction `{}`: {e}", l.trim()),
            })
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = config(&cli)?;
    match cli.command {
        Command::Synth { spec, out } => {
            if let Some(path) = spec {
                let text = fs::read_to_string(&path)
                    .map_err(|e| Error::io("reading scene spec", &path, e))?;
                let table: toml::Table =
                    toml::from_str(&text).map_err(|e| Error::Config(e.message().to_string()))?;
                cfg = cfg.overridden(toml::Table::from_iter([(
                    "scene".to_string(),
                    toml::Value::Table(table),
                )]))?;
            }
            let mut cloud = synth_scene(&cfg.scene, cfg.seeds.source_scene())?;
            if cfg.subsample_cell > 0.0 {
                cloud = grid_subsample(&cloud, cfg.subsample_cell)?;
            }
            save_cloud(&cloud, &out)?;
            println!("wrote {} points to {}", cloud.len(), out.display());
        }
        Command::Pretrain { cloud, epochs, out } => {
            let cloud = load_cloud(&cloud)?;
            if let Some(epochs) = epochs {
                cfg.pretrain.epochs = epochs;
            }
            cfg.network.features = cloud.feature_count();
            cfg.network.classes = cloud.class_count();
            let mut net = Network::init(cfg.network.clone(), cfg.seeds.init())?;
            let report = pretrain(
                &mut net,
                std::slice::from_ref(&cloud),
                &cfg.pretrain,
                &mut seeded(cfg.seeds.pretrain()),
            )?;
            save_checkpoint(&net, &out)?;
            for (e, (loss, acc)) in report
                .epoch_loss
                .iter()
                .zip(&report.epoch_accuracy)
                .enumerate()
            {
                println!("epoch {:>3}  loss {loss:.4}  accuracy {acc:.4}", e + 1);
            }
        }
        Command::Corrupt {
            cloud,
            profile,
            severity,
            out_dir,
        } => {
            if let Some(p) = profile {
                cfg.benchmark.profile = p;
            }
            if let Some(s) = severity {
                cfg.benchmark.severity = s;
            }
            cfg.validate()?;
            let mut manifest = manifest_for(&cfg);
            manifest.source = cloud.display().to_string();
            let clean = load_cloud(&cloud)?;
            let clouds = build_benchmark(&clean, &manifest, &out_dir)?;
            for (d, c) in manifest.domains.iter().zip(&clouds) {
                println!("{:<10} {:>8} points  {}", d.kind.name(), c.len(), d.path);
            }
        }
        Command::Adapt {
            input,
            method,
            no_dstl,
            no_ebcl,
            no_rpi,
        } => {
            let method = method.unwrap_or(cfg.method);
            cfg.adapt.toggles.dstl &= !no_dstl;
            cfg.adapt.toggles.ebcl &= !no_ebcl;
            cfg.adapt.toggles.rpi &= !no_rpi;
            let prepared = input.prepare()?;
            let result = prepared.run(&cfg, method, &cfg.adapt)?;
            write_run(&input.report, method.name(), &result)?;
            print!("{}", result.report.to_csv());
        }
        Command::Ablate { input } => {
            let rows = run_ablation(&input.prepare()?, &cfg)?;
            let csv = ablation_csv(&rows);
            write(&input.report.join("ablation.csv"), &csv)?;
            print!("{csv}");
        }
        Command::Sweep {
            input,
            param,
            values,
        } => {
            let grid = if values.is_empty() {
                param.default_grid()
            } else {
                values
            };
            let rows = run_sweep(&input.prepare()?, &cfg, param, &grid)?;
            let csv = sweep_csv(param, &rows);
            write(
                &input.report.join(format!("sweep_{}.csv", param.name())),
                &csv,
            )?;
            print!("{csv}");
        }
        Command::Eval { pred, truth } => {
            let truth = load_cloud(&truth)?;
            let labels = truth
                .labels()
                .ok_or_else(|| Error::Validation("truth cloud has no labels".into()))?;
            let preds = read_predictions(&pred)?;
            if preds.len() != labels.len() {
                return Err(Error::Shape(format!(
                    "{} predictions for {} points",
                    preds.len(),
                    labels.len()
                )));
            }
            if let Some(&bad) = preds
                .iter()
                .find(|&&p| p != IGNORE && p as usize >= truth.class_count())
            {
                return Err(Error::Validation(format!(
                    "predicted class {bad} outside 0..{}",
                    truth.class_count()
                )));
            }
            let mut cm = ConfusionMatrix::new(truth.class_count());
            cm.update(labels, &preds)?;
            println!("{}", cm.report().to_json());
        }
        Command::Config => print!("{}", cfg.to_toml()),
        Command::Run { report } => {
            let result = run_pipeline(&cfg, &Method::ALL)?;
            for m in Method::ALL {
                if let Some(r) = result.method(m) {
                    write_run(&report, m.name(), r)?;
                }
            }
            write(&report.join("summary.csv"), &result.summary_csv())?;
            write(
                &report.join("ablation.csv"),
                &ablation_csv(&result.ablation),
            )?;
            write(&report.join("report.json"), &result.to_json())?;
            write(&report.join("config.toml"), &cfg.to_toml())?;
            print!("{}", result.summary_csv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}
