//! Experiment configuration, read from TOML by the CLI.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::engine::{Algorithm, BandwidthSchedule, EngineConfig, StepRule};
use crate::error::{Error, Result};
use crate::kernel::{
    BandwidthRule, KernelSpec, KernelVariant, LocalDomain, DEFAULT_BANDWIDTH_FLOOR,
    DEFAULT_COMBINE_ALPHA,
};
use crate::model::CrowdHyper;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    IsoGaussian,
    GaussianGrid,
    SparsitySweep,
    GaussianDense,
    Sensor,
    Crowdsourcing,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Self::IsoGaussian,
        Self::GaussianGrid,
        Self::SparsitySweep,
        Self::GaussianDense,
        Self::Sensor,
        Self::Crowdsourcing,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::IsoGaussian => "iso-gaussian",
            Self::GaussianGrid => "gaussian-grid",
            Self::SparsitySweep => "sparsity-sweep",
            Self::GaussianDense => "gaussian-dense",
            Self::Sensor => "sensor",
            Self::Crowdsourcing => "crowdsourcing",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    Vanilla,
    Graphical,
    Langevin,
    /// Exact i.i.d. draws; Gaussian experiments only.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelName {
    Global,
    Local,
    Random,
    Combine,
}

/// One sampler to compare.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub algorithm: MethodKind,
    /// Graphical SVGD kernel; defaults to `local`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelName>,
    /// Subset size for `random`, and for the local half of `combine` (which
    /// otherwise uses the closed blanket).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Fixed bandwidth instead of the median trick.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub master_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
}

impl MethodSpec {
    pub fn new(algorithm: MethodKind) -> Self {
        Self {
            algorithm,
            kernel: None,
            subset_size: None,
            alpha: None,
            bandwidth: None,
            master_step: None,
            iterations: None,
        }
    }

    pub fn graphical(kernel: KernelName) -> Self {
        Self {
            kernel: Some(kernel),
            ..Self::new(MethodKind::Graphical)
        }
    }

    pub fn with_subset(mut self, size: usize) -> Self {
        self.subset_size = Some(size);
        self
    }

    pub fn with_step(mut self, step: f64) -> Self {
        self.master_step = Some(step);
        self
    }

    /// Name written to the `algorithm` column.
    pub fn algorithm_name(&self) -> &'static str {
        match self.algorithm {
            MethodKind::Vanilla => "vanilla",
            MethodKind::Graphical => "graphical",
            MethodKind::Langevin => "langevin",
            MethodKind::Exact => "exact",
        }
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        let variant = match self.algorithm {
            MethodKind::Vanilla | MethodKind::Langevin | MethodKind::Exact => {
                if matches!(self.kernel, Some(k) if k != KernelName::Global) {
                    return Err(Error::Config(format!(
                        "{} does not take a {:?} kernel",
                        self.algorithm_name(),
                        self.kernel.unwrap()
                    )));
                }
                KernelVariant::Global
            }
            MethodKind::Graphical => match self.kernel.unwrap_or(KernelName::Local) {
                KernelName::Global => KernelVariant::Global,
                KernelName::Local => KernelVariant::Local,
                KernelName::Random => KernelVariant::RandomSubset {
                    size: self.subset_size.ok_or_else(|| {
                        Error::Config("kernel \"random\" needs subset_size".into())
                    })?,
                },
                KernelName::Combine => KernelVariant::Combined {
                    alpha: self.alpha.unwrap_or(DEFAULT_COMBINE_ALPHA),
                    local: match self.subset_size {
                        Some(size) => LocalDomain::RandomSubset { size },
                        None => LocalDomain::Local,
                    },
                },
            },
        };
        let spec = KernelSpec {
            variant,
            bandwidth: match self.bandwidth {
                Some(h) => BandwidthRule::Fixed(h),
                None => BandwidthRule::MedianTrick,
            },
            floor: DEFAULT_BANDWIDTH_FLOOR,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Value written to the `kernel_variant` column.
    pub fn kernel_name(&self) -> Result<&'static str> {
        Ok(match self.algorithm {
            MethodKind::Langevin | MethodKind::Exact => "none",
            _ => self.kernel_spec()?.variant.name(),
        })
    }

    /// Engine settings for this method; `None` for exact sampling.
    pub fn engine_config(&self, cfg: &ExperimentConfig, seed: u64) -> Result<Option<EngineConfig>> {
        let algorithm = match self.algorithm {
            MethodKind::Vanilla => Algorithm::VanillaSvgd,
            MethodKind::Graphical => Algorithm::GraphicalSvgd,
            MethodKind::Langevin => Algorithm::Langevin,
            MethodKind::Exact => return Ok(None),
        };
        let mut ec = EngineConfig::new(algorithm, self.kernel_spec()?);
        ec.iterations = self.iterations.unwrap_or(cfg.iterations);
        ec.master_step = self.master_step.unwrap_or(cfg.master_step);
        ec.step_rule = match algorithm {
            Algorithm::Langevin => StepRule::Plain,
            _ => cfg.step_rule,
        };
        ec.seed = seed;
        ec.checkpoint_every = cfg.checkpoint_every;
        ec.bandwidth_schedule = cfg.bandwidth_schedule;
        ec.validate()?;
        Ok(Some(ec))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaussianSettings {
    /// Dimensions for the isotropic experiment.
    pub dims: Vec<usize>,
    /// Grid shape for the grid experiment and the sweep's node layout.
    pub rows: usize,
    pub cols: usize,
    /// Connection radii for the sparsity sweep.
    pub radii: Vec<f64>,
    /// Dimension of the fully connected model.
    pub dense_dim: usize,
}

impl Default for GaussianSettings {
    fn default() -> Self {
        Self {
            dims: vec![1, 10, 50, 100],
            rows: 10,
            cols: 10,
            radii: (1..=14).map(f64::from).collect(),
            dense_dim: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SensorInstance {
    /// Three anchors and nine sensors, two of them ambiguous.
    Small,
    /// Random sensors on `[-1, 1]^2` with anchors at the corners.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SensorInit {
    StandardNormal,
    /// Uniform on `[-1, 1]^2` per sensor.
    Uniform,
    /// Every particle at the true positions.
    Truth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorSettings {
    pub instance: SensorInstance,
    pub n_sensors: usize,
    pub sigma: f64,
    pub cutoff: f64,
    /// Draw noisy measurements; `false` uses exact distances.
    pub noise: bool,
    pub init: SensorInit,
    /// Write final particles as JSON.
    pub dump_particles: bool,
}

impl Default for SensorSettings {
    fn default() -> Self {
        Self {
            instance: SensorInstance::Random,
            n_sensors: 100,
            sigma: 0.05,
            cutoff: 0.5,
            noise: true,
            init: SensorInit::Uniform,
            dump_particles: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrowdSettings {
    pub n_items: usize,
    pub n_workers: usize,
    pub n_controls: usize,
    pub max_workers_per_item: usize,
    pub min_items_per_worker: usize,
    pub hyper: CrowdHyper,
    /// Clip box for `log nu`.
    pub log_var_clip: f64,
}

impl Default for CrowdSettings {
    fn default() -> Self {
        Self {
            n_items: 80,
            n_workers: 155,
            n_controls: 10,
            max_workers_per_item: 5,
            min_items_per_worker: 3,
            hyper: CrowdHyper::default(),
            log_var_clip: 3.0,
        }
    }
}

/// Long unadjusted-Langevin chains used as ground truth for non-Gaussian
/// posteriors, started at the true parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferencePoolSettings {
    /// 0 disables the pool and the metrics that need it.
    pub chains: usize,
    pub steps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub step: f64,
    /// Also report the pool's own U-statistic KSD (local kernels).
    pub self_check: bool,
}

impl Default for ReferencePoolSettings {
    fn default() -> Self {
        Self {
            chains: 10,
            steps: 50_000,
            burn_in: 10_000,
            thin: 400,
            step: 1e-4,
            self_check: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default = "defaults::seed")]
    pub seed: u64,
    #[serde(default = "defaults::trials")]
    pub trials: usize,
    #[serde(default = "defaults::iterations")]
    pub iterations: usize,
    #[serde(default = "defaults::master_step")]
    pub master_step: f64,
    #[serde(default)]
    pub step_rule: StepRule,
    #[serde(default)]
    pub bandwidth_schedule: BandwidthSchedule,
    pub particle_counts: Vec<usize>,
    pub methods: Vec<MethodSpec>,
    /// Rows every this many iterations; 0 writes the final iteration only.
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Exact draws used as the MMD reference for Gaussian targets.
    #[serde(default = "defaults::reference_size")]
    pub reference_size: usize,
    /// Fill the `ksd2` column (U-statistic, local kernels).
    #[serde(default = "defaults::yes")]
    pub ksd: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub gaussian: GaussianSettings,
    #[serde(default)]
    pub sensor: SensorSettings,
    #[serde(default)]
    pub crowd: CrowdSettings,
    #[serde(default)]
    pub reference_pool: ReferencePoolSettings,
}

mod defaults {
    pub fn seed() -> u64 {
        0
    }
    pub fn trials() -> usize {
        10
    }
    pub fn iterations() -> usize {
        500
    }
    pub fn master_step() -> f64 {
        0.1
    }
    pub fn reference_size() -> usize {
        10_000
    }
    pub fn yes() -> bool {
        true
    }
}

impl ExperimentConfig {
    /// Defaults for `experiment` with the given methods.
    pub fn new(experiment: Experiment, methods: Vec<MethodSpec>) -> Self {
        Self {
            experiment,
            seed: defaults::seed(),
            trials: defaults::trials(),
            iterations: defaults::iterations(),
            master_step: defaults::master_step(),
            step_rule: StepRule::default(),
            bandwidth_schedule: BandwidthSchedule::default(),
            particle_counts: vec![50],
            methods,
            checkpoint_every: 0,
            reference_size: defaults::reference_size(),
            ksd: true,
            output: None,
            gaussian: GaussianSettings::default(),
            sensor: SensorSettings::default(),
            crowd: CrowdSettings::default(),
            reference_pool: ReferencePoolSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.particle_counts.is_empty() || self.particle_counts.contains(&0) {
            return Err(Error::Config("particle_counts must be nonempty and positive".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        for m in &self.methods {
            m.engine_config(self, 0)?;
            let gaussian = matches!(
                self.experiment,
                Experiment::IsoGaussian
                    | Experiment::GaussianGrid
                    | Experiment::SparsitySweep
                    | Experiment::GaussianDense
            );
            if m.algorithm == MethodKind::Exact && !gaussian {
                return Err(Error::Config(format!(
                    "exact sampling is only available for Gaussian experiments, not {}",
                    self.experiment.name()
                )));
            }
        }
        if self.reference_size == 0 {
            return Err(Error::Config("reference_size must be positive".into()));
        }
        let pool = &self.reference_pool;
        if pool.chains > 0 && (pool.thin == 0 || pool.burn_in >= pool.steps || !(pool.step > 0.0)) {
            return Err(Error::Config(
                "reference_pool needs thin >= 1, burn_in < steps and step > 0".into(),
            ));
        }
        Ok(())
    }
}
