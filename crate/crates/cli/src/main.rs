//! `snn`: train, evaluate, sweep and inspect structured recurrent SNNs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use snn_core::dataio::EpochMetrics;
use snn_core::topology::{topology_report, NetworkTopology};
use snn_core::{evaluate, load_mnist, Checkpoint, Config, Model, SnnError, TrainOptions, Trainer};

#[derive(Debug, Parser)]
#[command(
    name = "snn",
    version,
    about = "Structured recurrent spiking networks on MNIST"
)]
struct Cli {
    /// TOML config file; built-in defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory holding the four MNIST IDX files [default: $MNIST_DIR or data/mnist].
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,

    /// Output directory for metrics, checkpoints and reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Master seed (overrides training.seed).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Single worker and no wall-clock values in the metrics files.
    #[arg(long, global = true)]
    deterministic: bool,

    /// Config override `key=value`, e.g. `network.bandwidth=12`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a network and write metrics and checkpoints.
    Train {
        /// Continue from a checkpoint instead of a fresh initialisation.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint without modifying it.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
    },
    /// One training run per value of a single parameter, sharing the seed.
    Ablate {
        /// `rho`, `bandwidth`/`b`, `shortcuts`/`s`, or any config key.
        #[arg(long)]
        param: String,
        /// Comma-separated values, e.g. `0.5,0.2,0.05`.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
        /// Run the values as concurrent child processes.
        #[arg(long)]
        parallel: bool,
    },
    /// Print the connectivity report for a config or checkpoint.
    Inspect {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 1 usage/config, 2 data, 3 numerical instability.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<SnnError>() {
            return match e {
                SnnError::NonFiniteState(_) => 3,
                SnnError::BadMagic { .. }
                | SnnError::TruncatedFile { .. }
                | SnnError::DimensionMismatch(_)
                | SnnError::LabelOutOfRange { .. }
                | SnnError::VersionUnsupported(_)
                | SnnError::ChecksumMismatch { .. }
                | SnnError::EmptyDataset
                | SnnError::PixelOutOfRange { .. }
                | SnnError::Io { .. } => 2,
                _ => 1,
            };
        }
    }
    1
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Train { resume } => cmd_train(&cli, resume.as_deref()),
        Command::Eval { checkpoint, split } => cmd_eval(&cli, checkpoint, *split),
        Command::Ablate {
            param,
            values,
            parallel,
        } => cmd_ablate(&cli, param, values, *parallel),
        Command::Inspect { checkpoint, json } => cmd_inspect(&cli, checkpoint.as_deref(), *json),
    }
}

fn data_dir(cli: &Cli) -> PathBuf {
    cli.data_dir
        .clone()
        .or_else(|| std::env::var_os("MNIST_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data/mnist"))
}

fn out_dir(cli: &Cli, fallback: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(fallback))
}

/// Config file, then `--set` overrides in order, then `--seed` and
/// `--deterministic`.
fn resolve_config(cli: &Cli) -> anyhow::Result<Config> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = cli.seed {
        cfg.training.seed = seed;
    }
    if cli.deterministic {
        cfg.training.workers = 1;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_run_record(
    cli: &Cli,
    cfg: &Config,
    dir: &Path,
    extra: serde_json::Value,
) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.resolved.toml"), cfg.to_toml_string())
        .with_context(|| format!("writing config to {}", dir.display()))?;
    let record = json!({
        "config_file": cli.config.as_ref().map(|p| p.display().to_string()),
        "overrides": cli.overrides,
        "seed": cfg.training.seed,
        "deterministic": cli.deterministic,
        "data_dir": data_dir(cli).display().to_string(),
        "extra": extra,
    });
    fs::write(
        dir.join("run.json"),
        serde_json::to_string_pretty(&record)? + "\n",
    )
    .with_context(|| format!("writing run record to {}", dir.display()))?;
    Ok(())
}

fn print_epoch(m: &EpochMetrics, secs: f64) {
    eprintln!(
        "epoch {:>3}  train_acc {:.4}  test_acc {:.4}  margin {:.3}  xent {:.3}  ops {}  ({secs:.1}s)",
        m.epoch, m.train_accuracy, m.test_accuracy, m.mean_margin, m.cross_entropy, m.synaptic_ops
    );
}

fn train_run(
    cli: &Cli,
    cfg: Config,
    dir: &Path,
    resume: Option<&Path>,
) -> anyhow::Result<Vec<EpochMetrics>> {
    let (train, test) = load_mnist(
        &data_dir(cli),
        cfg.training.train_subset,
        cfg.training.test_subset,
    )?;
    let model = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let mut model = Model::from_checkpoint(&ck)?;
            if model.config.network != cfg.network {
                bail!("network section of the config differs from the checkpoint being resumed");
            }
            model.config = cfg.clone();
            model
        }
        None => Model::new(cfg.clone())?,
    };
    write_run_record(
        cli,
        &cfg,
        dir,
        json!({ "resume": resume.map(|p| p.display().to_string()) }),
    )?;
    let mut trainer = Trainer::new(model, cfg.training.workers);
    let report = print_epoch;
    let opts = TrainOptions {
        out_dir: Some(dir),
        record_wall_time: !cli.deterministic,
        on_epoch: Some(&report),
    };
    Ok(trainer.train(&train, &test, &opts)?)
}

fn cmd_train(cli: &Cli, resume: Option<&Path>) -> anyhow::Result<()> {
    let cfg = resolve_config(cli)?;
    let dir = out_dir(cli, "runs/train");
    let history = train_run(cli, cfg, &dir, resume)?;
    if let Some(last) = history.last() {
        println!("final test accuracy {:.4}", last.test_accuracy);
    }
    println!("outputs in {}", dir.display());
    Ok(())
}

fn cmd_eval(cli: &Cli, checkpoint: &Path, split: Split) -> anyhow::Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let model = Model::from_checkpoint(&ck)?;
    // Only evaluation-side settings may be overridden here.
    let mut cfg = model.config.clone();
    for o in &cli.overrides {
        if !o.trim_start().starts_with("training.") {
            bail!(SnnError::Config {
                key: o.clone(),
                message: "eval only accepts training.* overrides".into(),
            });
        }
        cfg.apply_override(o)?;
    }
    let (train, test) = load_mnist(
        &data_dir(cli),
        cfg.training.train_subset,
        cfg.training.test_subset,
    )?;
    let (data, stream) = match split {
        Split::Train => (&train, "eval/train"),
        Split::Test => (&test, "eval/test"),
    };
    let result = evaluate(&model, data, stream)?;
    println!(
        "{}",
        json!({
            "checkpoint": checkpoint.display().to_string(),
            "epochs_completed": model.epochs_completed,
            "samples": result.samples,
            "accuracy": result.accuracy,
            "cross_entropy": result.cross_entropy,
            "synaptic_ops": result.counter.synaptic_ops,
        })
    );
    Ok(())
}

/// Short names for the swept parameters; anything else is a config key.
fn ablation_key(param: &str, cfg: &Config) -> String {
    match param {
        "rho" | "readout_density" => {
            format!(
                "network.readout_density[{}]",
                cfg.network.layer_sizes.len() - 1
            )
        }
        "b" | "bandwidth" => "network.bandwidth".into(),
        "s" | "shortcuts" => "network.shortcuts".into(),
        other => other.into(),
    }
}

fn cmd_ablate(cli: &Cli, param: &str, values: &[String], parallel: bool) -> anyhow::Result<()> {
    if values.is_empty() {
        bail!(SnnError::Config {
            key: param.into(),
            message: "empty value list".into(),
        });
    }
    let base = resolve_config(cli)?;
    let key = ablation_key(param, &base);
    // Every value must produce a buildable network before anything runs.
    let mut configs = Vec::new();
    for v in values {
        let mut cfg = base.clone();
        cfg.set(&key, v)?;
        NetworkTopology::build(&cfg.network, cfg.training.seed)
            .with_context(|| format!("{key}={v}"))?;
        configs.push(cfg);
    }
    let root = out_dir(cli, "runs/ablate");
    write_run_record(cli, &base, &root, json!({ "param": key, "values": values }))?;
    let run_dirs: Vec<PathBuf> = values
        .iter()
        .map(|v| root.join(format!("{param}={v}")))
        .collect();

    let finals: Vec<f64> = if parallel {
        run_parallel(cli, &configs, &run_dirs)?
    } else {
        let mut out = Vec::new();
        for ((cfg, dir), v) in configs.into_iter().zip(&run_dirs).zip(values) {
            eprintln!("== {key} = {v}");
            let history = train_run(cli, cfg, dir, None)?;
            out.push(history.last().map_or(f64::NAN, |m| m.test_accuracy));
        }
        out
    };

    let mut csv = String::from("param,value,final_test_acc\n");
    for (v, acc) in values.iter().zip(&finals) {
        csv.push_str(&format!("{param},{v},{acc}\n"));
    }
    fs::write(root.join("sweep.csv"), &csv).context("writing sweep.csv")?;
    print!("{csv}");
    Ok(())
}

fn run_parallel(cli: &Cli, configs: &[Config], dirs: &[PathBuf]) -> anyhow::Result<Vec<f64>> {
    let exe = std::env::current_exe().context("locating the snn executable")?;
    let mut children = Vec::new();
    for (cfg, dir) in configs.iter().zip(dirs) {
        fs::create_dir_all(dir)?;
        let cfg_path = dir.join("config.resolved.toml");
        fs::write(&cfg_path, cfg.to_toml_string())?;
        let mut cmd = std::process::Command::new(&exe);
        cmd.arg("train")
            .arg("--config")
            .arg(&cfg_path)
            .arg("--data-dir")
            .arg(data_dir(cli))
            .arg("--out")
            .arg(dir);
        if cli.deterministic {
            cmd.arg("--deterministic");
        }
        children.push(cmd.spawn().context("spawning training process")?);
    }
    let mut finals = Vec::new();
    for (mut child, dir) in children.into_iter().zip(dirs) {
        let status = child.wait()?;
        if !status.success() {
            return Err(anyhow!("run in {} failed with {status}", dir.display()));
        }
        finals.push(final_accuracy(dir)?);
    }
    Ok(finals)
}

fn final_accuracy(dir: &Path) -> anyhow::Result<f64> {
    let text = fs::read_to_string(dir.join("metrics.jsonl"))?;
    let last = text
        .lines()
        .last()
        .ok_or_else(|| anyhow!("no metrics in {}", dir.display()))?;
    let m: EpochMetrics = serde_json::from_str(last)?;
    Ok(m.test_accuracy)
}

fn cmd_inspect(cli: &Cli, checkpoint: Option<&Path>, as_json: bool) -> anyhow::Result<()> {
    let topology = match checkpoint {
        Some(path) => Model::from_checkpoint(&Checkpoint::load(path)?)?.topology,
        None => {
            let cfg = resolve_config(cli)?;
            NetworkTopology::build(&cfg.network, cfg.training.seed)?
        }
    };
    let report = topology_report(&topology);
    let text = if as_json {
        serde_json::to_string_pretty(&report)? + "\n"
    } else {
        report.to_string()
    };
    print!("{text}");
    if let Some(dir) = &cli.out {
        fs::create_dir_all(dir)?;
        let name = if as_json {
            "topology.json"
        } else {
            "topology.txt"
        };
        fs::write(dir.join(name), &text)?;
    }
    Ok(())
}
