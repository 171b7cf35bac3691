use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use lcv::costvolume::{FeatureMap, FlowField};
use lcv::harness::gradcheck::run_gradcheck;
use lcv::harness::{
    build_dataset, evaluate, generate, perturb, report, run_experiment, train_kernel,
    ExperimentConfig, ExperimentResult, PerturbSpec, SyntheticInstance, SyntheticSpec,
};
use lcv::kernel::{load_checkpoint, save_checkpoint, SpdKernel};
use lcv::optim::TrainState;
use lcv::tensor::Tensor;
use lcv::LcvError;

#[derive(Parser)]
#[command(name = "lcv", version, about = "Learnable cost volume experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one synthetic instance as LCVT tensors plus JSON metadata.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a kernel from W = I; writes checkpoints and a JSON-lines step log.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint (default: identity) on a generated instance
    /// directory or on the config's held-out split.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run experiments over seeds and a perturbation grid; writes CSV + JSON.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = Grid::All)]
        grid: Grid,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check analytic gradients against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Grid {
    /// Only the config's own perturbation.
    None,
    Gamma,
    Noise,
    Patch,
    All,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Validation(anyhow::Error),
    Numerical(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let numerical = e.chain().any(|cause| {
            matches!(
                cause.downcast_ref::<LcvError>(),
                Some(
                    LcvError::SingularSolve { .. }
                        | LcvError::NotPositiveDefinite { .. }
                        | LcvError::NonFinite(_)
                        | LcvError::NotOrthogonal { .. }
                        | LcvError::NotInSoStar(_)
                        | LcvError::Decomposition(_)
                )
            )
        });
        if numerical {
            Failure::Numerical(e)
        } else {
            Failure::Validation(e)
        }
    }
}

impl From<LcvError> for Failure {
    fn from(e: LcvError) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(e)) => {
            eprintln!("numerical check failed: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut config: ExperimentConfig = match path {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        config.synthetic.seed = s;
        config.seeds = vec![s];
    }
    config.validate()?;
    Ok(config)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn run(command: Command) -> std::result::Result<(), Failure> {
    match command {
        Command::Generate { config, seed, out } => {
            let config = load_config(config.as_deref(), seed)?;
            std::fs::create_dir_all(&out).map_err(anyhow::Error::from)?;
            let spec: &SyntheticSpec = &config.synthetic;
            let mut inst = generate(spec)?;
            if !config.perturb.is_identity() {
                inst.f2 = perturb(&inst.f2, &config.perturb, spec.signal_channels, spec.seed)?;
            }
            inst.f1.to_tensor().save(&out.join("f1.lcvt"))?;
            inst.f2.to_tensor().save(&out.join("f2.lcvt"))?;
            inst.gt.to_tensor().save(&out.join("gt.lcvt"))?;
            write_json(
                &out.join("meta.json"),
                &json!({
                    "synthetic": spec,
                    "perturb": config.perturb,
                    "channels": spec.channels(),
                    "files": {"f1": "f1.lcvt", "f2": "f2.lcvt", "gt": "gt.lcvt"},
                }),
            )?;
            println!("wrote instance to {}", out.display());
        }
        Command::Train { config, seed, out } => {
            let config = load_config(config.as_deref(), seed)?;
            std::fs::create_dir_all(&out).map_err(anyhow::Error::from)?;
            let data = build_dataset(&config)?;
            let c = config.synthetic.channels();
            save_checkpoint(
                &TrainState::identity(c).kernel,
                &out.join("kernel_step0.lcvk"),
            )?;
            let log_path = out.join("train_log.jsonl");
            let mut log = BufWriter::new(File::create(&log_path).map_err(anyhow::Error::from)?);
            let mut log_error = None;
            let state = train_kernel(&config, &data, |r| {
                if log_error.is_none() {
                    if let Err(e) = serde_json::to_writer(&mut log, r)
                        .map_err(anyhow::Error::from)
                        .and_then(|_| writeln!(log).map_err(anyhow::Error::from))
                    {
                        log_error = Some(e);
                    }
                }
            })?;
            if let Some(e) = log_error {
                return Err(e.into());
            }
            log.flush().map_err(anyhow::Error::from)?;
            save_checkpoint(&state.kernel, &out.join("kernel.lcvk"))?;
            println!(
                "trained {} steps, final loss {:.6}, grad max-norm {:.3e}; checkpoint {}",
                state.step,
                state.last_loss,
                state.grad_norm,
                out.join("kernel.lcvk").display()
            );
        }
        Command::Eval {
            config,
            seed,
            checkpoint,
            data,
            out,
        } => {
            let config = load_config(config.as_deref(), seed)?;
            let instances = match &data {
                Some(dir) => vec![load_instance(dir)?],
                None => build_dataset(&config)?.eval,
            };
            let c = instances[0].f1.channels();
            let kernel = match &checkpoint {
                Some(p) => load_checkpoint(p)?,
                None => SpdKernel::identity(c),
            };
            let (aepe, fl) = evaluate(&instances, &kernel, config.window)?;
            let (aepe_identity, fl_identity) =
                evaluate(&instances, &SpdKernel::identity(c), config.window)?;
            let metrics = json!({
                "instances": instances.len(),
                "aepe": aepe,
                "fl_all": fl,
                "aepe_identity": aepe_identity,
                "fl_all_identity": fl_identity,
            });
            match out {
                Some(p) => write_json(&p, &metrics)?,
                None => println!(
                    "{}",
                    serde_json::to_string_pretty(&metrics).map_err(anyhow::Error::from)?
                ),
            }
        }
        Command::Sweep {
            config,
            seed,
            grid,
            out,
        } => {
            let config = load_config(config.as_deref(), seed)?;
            let perturbations = match grid {
                Grid::None => vec![config.perturb],
                Grid::Gamma => config
                    .sweep
                    .perturbations()
                    .into_iter()
                    .filter(|p| p.gamma != 1.0)
                    .collect(),
                Grid::Noise => config
                    .sweep
                    .perturbations()
                    .into_iter()
                    .filter(|p| p.noise_std != 0.0)
                    .collect(),
                Grid::Patch => config
                    .sweep
                    .perturbations()
                    .into_iter()
                    .filter(|p| p.patch_radius != 0)
                    .collect(),
                Grid::All => config.sweep.perturbations(),
            };
            let jobs: Vec<(u64, PerturbSpec)> = config
                .seeds
                .iter()
                .flat_map(|&s| perturbations.iter().map(move |p| (s, *p)))
                .collect();
            for (_, p) in &jobs {
                config.with_perturb(*p).validate()?;
            }
            let started = Instant::now();
            let results: Vec<ExperimentResult> = jobs
                .par_iter()
                .map(|(s, p)| run_experiment(&config.with_seed(*s).with_perturb(*p)))
                .collect::<lcv::Result<_>>()?;
            let (csv_path, json_path) = report(&results, &out)?;
            println!(
                "{} experiments in {:.1}s; wrote {} and {}",
                results.len(),
                started.elapsed().as_secs_f64(),
                csv_path.display(),
                json_path.display()
            );
        }
        Command::Gradcheck { instances, seed } => {
            let report = run_gradcheck(instances, seed)?;
            for c in &report.checks {
                println!(
                    "[{}] {}: {} instances, worst relative error {:.3e}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.instances,
                    c.worst_relative_error
                );
            }
            if !report.passed() {
                return Err(Failure::Numerical(anyhow::anyhow!(
                    "gradient check exceeded tolerance"
                )));
            }
        }
    }
    Ok(())
}

fn load_instance(dir: &Path) -> Result<SyntheticInstance> {
    let load = |name: &str| -> Result<Tensor> {
        let p = dir.join(name);
        Tensor::load(&p).with_context(|| format!("loading {}", p.display()))
    };
    Ok(SyntheticInstance {
        f1: FeatureMap::from_tensor(load("f1.lcvt")?)?,
        f2: FeatureMap::from_tensor(load("f2.lcvt")?)?,
        gt: FlowField::from_tensor(load("gt.lcvt")?)?,
    })
}
