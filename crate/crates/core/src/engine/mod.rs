//! Particle dynamics: vanilla SVGD, graphical SVGD, unadjusted Langevin.

mod audit;
pub(crate) mod direction;

use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{coordinate_kernels, CoordinateKernel, KernelSpec, KernelVariant};
use crate::model::GraphicalModel;
use crate::particles::ParticleSet;
use crate::seed::{stream, Stream};

pub use audit::{blanket_access_audit, AuditReport, CoordinateAudit, RecordingView};
pub use direction::{
    direction_column, graphical_direction, graphical_direction_via, score_matrix,
    svgd_direction_vanilla, ColumnAccess,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    VanillaSvgd,
    GraphicalSvgd,
    Langevin,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Self::VanillaSvgd => "vanilla",
            Self::GraphicalSvgd => "graphical",
            Self::Langevin => "langevin",
        }
    }
}

/// How the SVGD direction is turned into a displacement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepRule {
    /// Per-entry AdaGrad: `x += eps g / (sqrt(sum g^2) + fudge)`.
    AdaGrad { fudge: f64 },
    /// `x += eps g`.
    Plain,
}

impl Default for StepRule {
    fn default() -> Self {
        Self::AdaGrad { fudge: 1e-6 }
    }
}

/// When median-trick bandwidths are computed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthSchedule {
    #[default]
    PerIteration,
    /// From the initial particles only.
    Initial,
}

/// Projection of selected coordinates onto `[lo, hi]` after every update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipBox {
    pub coords: Vec<usize>,
    pub lo: f64,
    pub hi: f64,
}

impl ClipBox {
    pub fn apply(&self, particles: &mut ParticleSet) {
        for l in 0..particles.len() {
            let row = particles.row_mut(l);
            for &j in &self.coords {
                row[j] = row[j].clamp(self.lo, self.hi);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub algorithm: Algorithm,
    pub kernel: KernelSpec,
    pub iterations: usize,
    pub master_step: f64,
    pub step_rule: StepRule,
    pub seed: u64,
    pub clip: Option<ClipBox>,
    /// 0 disables intermediate checkpoints.
    pub checkpoint_every: usize,
    pub bandwidth_schedule: BandwidthSchedule,
}

impl EngineConfig {
    pub fn new(algorithm: Algorithm, kernel: KernelSpec) -> Self {
        Self {
            algorithm,
            kernel,
            iterations: 100,
            master_step: 0.1,
            step_rule: StepRule::default(),
            seed: 0,
            clip: None,
            checkpoint_every: 0,
            bandwidth_schedule: BandwidthSchedule::default(),
        }
    }

    pub fn vanilla() -> Self {
        Self::new(Algorithm::VanillaSvgd, KernelSpec::global())
    }

    pub fn graphical() -> Self {
        Self::new(Algorithm::GraphicalSvgd, KernelSpec::local())
    }

    pub fn langevin() -> Self {
        let mut c = Self::new(Algorithm::Langevin, KernelSpec::global());
        c.step_rule = StepRule::Plain;
        c
    }

    pub fn kernel_name(&self) -> &'static str {
        match self.algorithm {
            Algorithm::Langevin => "none",
            _ => self.kernel.variant.name(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.master_step > 0.0) || !self.master_step.is_finite() {
            return Err(Error::Config(format!(
                "master step must be positive, got {}",
                self.master_step
            )));
        }
        if let StepRule::AdaGrad { fudge } = self.step_rule {
            if !(fudge > 0.0) {
                return Err(Error::Config("AdaGrad fudge must be positive".into()));
            }
        }
        if let Some(c) = &self.clip {
            if !(c.lo <= c.hi) {
                return Err(Error::Config("clip box needs lo <= hi".into()));
            }
        }
        self.kernel.validate()
    }
}

/// AdaGrad state: master step and per-entry sum of squared directions.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub master_step: f64,
    pub accumulator: Vec<f64>,
    pub fudge: f64,
}

impl OptimizerState {
    pub fn new(n: usize, d: usize, master_step: f64, fudge: f64) -> Self {
        Self {
            master_step,
            accumulator: vec![0.0; n * d],
            fudge,
        }
    }
}

/// `acc += g^2; x += eps g / (sqrt(acc) + fudge)`, then the optional clip.
pub fn adagrad_step(
    particles: &mut ParticleSet,
    direction: &ParticleSet,
    state: &mut OptimizerState,
    clip: Option<&ClipBox>,
) {
    let eps = state.master_step;
    let fudge = state.fudge;
    for ((x, g), acc) in particles
        .as_mut_slice()
        .iter_mut()
        .zip(direction.as_slice())
        .zip(state.accumulator.iter_mut())
    {
        *acc += g * g;
        *x += eps * g / (acc.sqrt() + fudge);
    }
    if let Some(c) = clip {
        c.apply(particles);
    }
}

/// `x += eps g`, then the optional clip.
pub fn plain_step(particles: &mut ParticleSet, direction: &ParticleSet, eps: f64, clip: Option<&ClipBox>) {
    for (x, g) in particles.as_mut_slice().iter_mut().zip(direction.as_slice()) {
        *x += eps * g;
    }
    if let Some(c) = clip {
        c.apply(particles);
    }
}

/// Unadjusted Langevin: `x += (eps/2) grad log p(x) + sqrt(eps) xi`.
///
/// Noise is drawn particle by particle, coordinates in order.
pub fn langevin_step<R: Rng + ?Sized>(
    particles: &mut ParticleSet,
    model: &GraphicalModel,
    eps: f64,
    rng: &mut R,
) -> Result<()> {
    let scores = score_matrix(model, particles)?;
    let noise = eps.sqrt();
    for (x, s) in particles.as_mut_slice().iter_mut().zip(scores.as_slice()) {
        let xi: f64 = rng.sample(StandardNormal);
        *x += 0.5 * eps * s + noise * xi;
    }
    Ok(())
}

/// Starting particles for [`run`].
#[derive(Debug, Clone)]
pub enum Init {
    /// `n` draws from `N(0, I)` on the seed's init stream.
    StandardNormal(usize),
    Particles(ParticleSet),
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckpointLog {
    pub iteration: usize,
    pub elapsed_seconds: f64,
    pub bandwidth_min: Option<f64>,
    pub bandwidth_max: Option<f64>,
    /// Root mean square of the last direction.
    pub direction_rms: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunLog {
    pub algorithm: Algorithm,
    pub kernel_variant: String,
    pub seed: u64,
    pub init: String,
    pub n: usize,
    pub dim: usize,
    pub iterations: usize,
    pub checkpoints: Vec<CheckpointLog>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub particles: ParticleSet,
    /// `(iteration, particles)` at every checkpoint.
    pub checkpoints: Vec<(usize, ParticleSet)>,
    pub log: RunLog,
}

/// Stepping machinery shared by [`run`] and external drivers.
pub struct Engine<'a> {
    model: &'a GraphicalModel,
    config: EngineConfig,
    rng: ChaCha8Rng,
    state: Option<OptimizerState>,
    initial: Option<ParticleSet>,
    frozen: Option<Vec<CoordinateKernel>>,
    last_bandwidths: Option<(f64, f64)>,
    last_rms: Option<f64>,
}

impl<'a> Engine<'a> {
    pub fn new(model: &'a GraphicalModel, config: EngineConfig) -> Result<Self> {
        config.validate()?;
        let rng = stream(config.seed, Stream::Engine);
        Ok(Self {
            model,
            config,
            rng,
            state: None,
            initial: None,
            frozen: None,
            last_bandwidths: None,
            last_rms: None,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    /// Kernels for the current step, honoring the bandwidth schedule.
    pub fn kernels(&mut self, particles: &ParticleSet) -> Result<Vec<CoordinateKernel>> {
        if let Some(k) = &self.frozen {
            return Ok(k.clone());
        }
        let source = match self.config.bandwidth_schedule {
            BandwidthSchedule::PerIteration => particles,
            BandwidthSchedule::Initial => self.initial.get_or_insert_with(|| particles.clone()),
        };
        let kernels = coordinate_kernels(&self.config.kernel, self.model, source, &mut self.rng)?;
        let redraws = matches!(
            self.config.kernel.variant,
            KernelVariant::RandomSubset { .. }
                | KernelVariant::Combined {
                    local: crate::kernel::LocalDomain::RandomSubset { .. },
                    ..
                }
        );
        if self.config.bandwidth_schedule == BandwidthSchedule::Initial && !redraws {
            self.frozen = Some(kernels.clone());
        }
        Ok(kernels)
    }

    /// Direction for SVGD variants.
    pub fn direction(&mut self, particles: &ParticleSet) -> Result<ParticleSet> {
        let kernels = self.kernels(particles)?;
        let (lo, hi) = kernels
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), k| {
                (lo.min(k.bandwidth), hi.max(k.bandwidth))
            });
        self.last_bandwidths = Some((lo, hi));
        let dir = match self.config.algorithm {
            Algorithm::VanillaSvgd => {
                if kernels.iter().any(|k| !k.is_global(self.model.dim())) {
                    return Err(Error::Config("vanilla SVGD requires the global kernel".into()));
                }
                svgd_direction_vanilla(particles, self.model, &kernels[0])?
            }
            Algorithm::GraphicalSvgd => graphical_direction(particles, self.model, &kernels)?,
            Algorithm::Langevin => {
                return Err(Error::Config("Langevin has no SVGD direction".into()));
            }
        };
        let ss: f64 = dir.as_slice().iter().map(|v| v * v).sum();
        self.last_rms = Some((ss / dir.as_slice().len().max(1) as f64).sqrt());
        Ok(dir)
    }

    /// Advances `particles` by one iteration.
    pub fn step(&mut self, particles: &mut ParticleSet) -> Result<()> {
        let eps = self.config.master_step;
        match self.config.algorithm {
            Algorithm::Langevin => {
                langevin_step(particles, self.model, eps, &mut self.rng)?;
                if let Some(c) = &self.config.clip {
                    c.apply(particles);
                }
            }
            _ => {
                let dir = self.direction(particles)?;
                match self.config.step_rule {
                    StepRule::AdaGrad { fudge } => {
                        let (n, d) = (particles.len(), particles.dim());
                        let state = self
                            .state
                            .get_or_insert_with(|| OptimizerState::new(n, d, eps, fudge));
                        adagrad_step(particles, &dir, state, self.config.clip.as_ref());
                    }
                    StepRule::Plain => plain_step(particles, &dir, eps, self.config.clip.as_ref()),
                }
            }
        }
        Ok(())
    }

    pub fn optimizer_state(&self) -> Option<&OptimizerState> {
        self.state.as_ref()
    }
}

/// Runs `config.iterations` steps from `init`.
///
/// Identical seed and config give a bit-identical trajectory.
pub fn run(model: &GraphicalModel, config: &EngineConfig, init: Init) -> Result<RunOutput> {
    let start = Instant::now();
    let (mut particles, init_desc) = match init {
        Init::StandardNormal(n) => {
            let mut rng = stream(config.seed, Stream::Init);
            (
                ParticleSet::standard_normal(n, model.dim(), &mut rng),
                "standard-normal".to_string(),
            )
        }
        Init::Particles(p) => (p, "supplied".to_string()),
    };
    if particles.is_empty() {
        return Err(Error::Config("a run needs at least one particle".into()));
    }
    if particles.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: particles.dim(),
        });
    }
    if let Some((l, j)) = particles.first_non_finite() {
        return Err(Error::NonFiniteParticle {
            iteration: 0,
            particle: l,
            coordinate: j,
        });
    }

    let mut engine = Engine::new(model, config.clone())?;
    let mut checkpoints = Vec::new();
    let mut logs = Vec::new();
    let every = config.checkpoint_every;
    let mut record = |t: usize, p: &ParticleSet, e: &Engine, logs: &mut Vec<CheckpointLog>| {
        checkpoints.push((t, p.clone()));
        logs.push(CheckpointLog {
            iteration: t,
            elapsed_seconds: start.elapsed().as_secs_f64(),
            bandwidth_min: e.last_bandwidths.map(|b| b.0),
            bandwidth_max: e.last_bandwidths.map(|b| b.1),
            direction_rms: e.last_rms,
        });
    };
    if every > 0 {
        record(0, &particles, &engine, &mut logs);
    }
    for t in 1..=config.iterations {
        engine.step(&mut particles).map_err(|e| match e {
            Error::NonFiniteScore { particle } => Error::NonFiniteParticle {
                iteration: t,
                particle,
                coordinate: 0,
            },
            other => other,
        })?;
        if let Some((l, j)) = particles.first_non_finite() {
            return Err(Error::NonFiniteParticle {
                iteration: t,
                particle: l,
                coordinate: j,
            });
        }
        if every > 0 && t % every == 0 {
            record(t, &particles, &engine, &mut logs);
        }
    }
    if every == 0 || !config.iterations.is_multiple_of(every) {
        record(config.iterations, &particles, &engine, &mut logs);
    }

    let log = RunLog {
        algorithm: config.algorithm,
        kernel_variant: config.kernel_name().to_string(),
        seed: config.seed,
        init: init_desc,
        n: particles.len(),
        dim: particles.dim(),
        iterations: config.iterations,
        checkpoints: logs,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(RunOutput {
        particles,
        checkpoints,
        log,
    })
}

#[cfg(test)]
mod tests;
