//! Train-on-synthetic, evaluate-on-held-out comparison of the identity and
//! learned kernels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::costvolume::{decode_flow_argmax, epe, fl_all, learnable_cost_volume};
use crate::error::{LcvError, Result};
use crate::harness::loss::matching_loss;
use crate::harness::perturb::{perturb, PerturbSpec};
use crate::harness::synth::{generate, SyntheticInstance, SyntheticSpec};
use crate::kernel::SpdKernel;
use crate::optim::{train, OptimizerConfig, StepRecord, TrainState};

/// Everything one experiment needs; this is the CLI's config document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub synthetic: SyntheticSpec,
    pub perturb: PerturbSpec,
    pub optimizer: OptimizerConfig,
    /// `[u, v]`: vertical and horizontal window extents.
    pub window: [usize; 2],
    /// Instances generated per seed, split 80/20 into train and eval.
    pub instances: usize,
    /// Seeds used by the `sweep` subcommand.
    pub seeds: Vec<u64>,
    pub sweep: SweepGrid,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            synthetic: SyntheticSpec::default(),
            perturb: PerturbSpec::IDENTITY,
            optimizer: OptimizerConfig::default(),
            window: [5, 5],
            instances: 10,
            seeds: (0..10).collect(),
            sweep: SweepGrid::default(),
        }
    }
}

/// Perturbation grids. Gamma and noise follow the published robustness
/// protocol; patch radii are scaled down to the synthetic frame size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    pub gamma: Vec<f64>,
    pub noise_std: Vec<f64>,
    pub patch_radius: Vec<usize>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            gamma: vec![0.2, 0.3, 0.4, 0.5, 0.7, 1.0, 2.0, 3.0],
            noise_std: vec![0.0001, 0.001, 0.01, 0.1],
            patch_radius: vec![2, 4, 6, 8],
        }
    }
}

impl SweepGrid {
    /// One perturbation per grid value, each varying a single factor.
    pub fn perturbations(&self) -> Vec<PerturbSpec> {
        let id = PerturbSpec::IDENTITY;
        let gamma = self.gamma.iter().map(|&gamma| PerturbSpec { gamma, ..id });
        let noise = self
            .noise_std
            .iter()
            .map(|&noise_std| PerturbSpec { noise_std, ..id });
        let patch = self
            .patch_radius
            .iter()
            .map(|&patch_radius| PerturbSpec { patch_radius, ..id });
        gamma.chain(noise).chain(patch).collect()
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.synthetic.validate()?;
        self.perturb.validate()?;
        self.optimizer.validate()?;
        let [u, v] = self.window;
        crate::costvolume::check_window(u, v)?;
        let radius = (u / 2).min(v / 2);
        if self.synthetic.max_displacement > radius {
            return Err(LcvError::InvalidArgument(format!(
                "max_displacement {} exceeds the window radius {radius}",
                self.synthetic.max_displacement
            )));
        }
        if self.instances < 2 {
            return Err(LcvError::InvalidArgument(
                "need at least 2 instances for a train/eval split".into(),
            ));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.synthetic.seed = seed;
        c
    }

    pub fn with_perturb(&self, p: PerturbSpec) -> Self {
        let mut c = self.clone();
        c.perturb = p;
        c
    }

    /// Number of training instances: 80% of the total, at least one, and
    /// leaving at least one for evaluation.
    pub fn train_count(&self) -> usize {
        ((self.instances as f64 * 0.8).round() as usize).clamp(1, self.instances - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub seed: u64,
    pub gamma: f64,
    pub noise_std: f64,
    pub patch_radius: usize,
    pub aepe_identity: f64,
    pub aepe_learned: f64,
    pub fl_identity: f64,
    pub fl_learned: f64,
    pub steps: usize,
}

/// Training and held-out instances for one seed, perturbed.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<SyntheticInstance>,
    pub eval: Vec<SyntheticInstance>,
}

/// Generates `instances` problems from the config's seed. Perturbations hit
/// the second frame only.
pub fn build_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.synthetic.seed);
    let mut all = Vec::with_capacity(config.instances);
    for _ in 0..config.instances {
        let spec = SyntheticSpec {
            seed: rng.gen(),
            ..config.synthetic.clone()
        };
        let perturb_seed: u64 = rng.gen();
        let mut inst = generate(&spec)?;
        if !config.perturb.is_identity() {
            inst.f2 = perturb(
                &inst.f2,
                &config.perturb,
                spec.signal_channels,
                perturb_seed,
            )?;
        }
        all.push(inst);
    }
    let eval = all.split_off(config.train_count());
    Ok(Dataset { train: all, eval })
}

/// Trains from `W = I` on the training split.
pub fn train_kernel<L>(config: &ExperimentConfig, data: &Dataset, on_step: L) -> Result<TrainState>
where
    L: FnMut(&StepRecord),
{
    let [u, v] = config.window;
    let c = config.synthetic.channels();
    train(
        TrainState::identity(c),
        &config.optimizer,
        |k| matching_loss(&data.train, k, u, v),
        on_step,
    )
}

/// Mean AEPE and Fl-all of winner-take-all decoding over a set of instances.
pub fn evaluate(
    instances: &[SyntheticInstance],
    k: &SpdKernel,
    window: [usize; 2],
) -> Result<(f64, f64)> {
    if instances.is_empty() {
        return Err(LcvError::InvalidArgument("nothing to evaluate".into()));
    }
    let mut aepe = 0.0;
    let mut fl = 0.0;
    for inst in instances {
        let cv = learnable_cost_volume(&inst.f1, &inst.f2, k, window[0], window[1])?;
        let flow = decode_flow_argmax(&cv);
        aepe += epe(&flow, &inst.gt)?;
        fl += fl_all(&flow, &inst.gt)?;
    }
    let n = instances.len() as f64;
    Ok((aepe / n, fl / n))
}

/// Trains a kernel and compares it with the identity on held-out data.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    run_experiment_with_state(config).map(|(r, _)| r)
}

pub fn run_experiment_with_state(
    config: &ExperimentConfig,
) -> Result<(ExperimentResult, TrainState)> {
    let data = build_dataset(config)?;
    let state = train_kernel(config, &data, |_| {})?;
    let c = config.synthetic.channels();
    let (aepe_identity, fl_identity) =
        evaluate(&data.eval, &SpdKernel::identity(c), config.window)?;
    let (aepe_learned, fl_learned) = evaluate(&data.eval, &state.kernel, config.window)?;
    let result = ExperimentResult {
        seed: config.synthetic.seed,
        gamma: config.perturb.gamma,
        noise_std: config.perturb.noise_std,
        patch_radius: config.perturb.patch_radius,
        aepe_identity,
        aepe_learned,
        fl_identity,
        fl_learned,
        steps: state.step,
    };
    Ok((result, state))
}
