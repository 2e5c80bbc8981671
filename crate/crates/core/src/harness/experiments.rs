//! Experiment drivers.
//!
//! Every trial `t` runs under `trial_seed(cfg.seed, t)`. Within a trial all
//! methods share the model, the initial particles and the ground truth, so
//! comparisons are paired.

use std::time::Instant;

use rand::Rng;
use serde::Serialize;
use serde_json::json;

use crate::diagnostics::{
    ksd_squared, localization_rmse, moment_errors, DiagnosticsRow, KsdKind,
};
use crate::engine::{run, ClipBox, Init, RunLog};
use crate::error::{Error, Result};
use crate::kernel::{coordinate_kernels, KernelSpec};
use crate::model::{
    build_crowdsourcing_model, build_gaussian_mrf, gaussian_exact_sample,
    generate_crowd_data, grid_graph, grid_points, radius_graph, CrowdLayout, Edge,
    GaussianMrfParams, GraphicalModel,
};
use crate::particles::ParticleSet;
use crate::seed::{mix64, stream, trial_seed, Stream};

use super::config::{
    Experiment, ExperimentConfig, MethodKind, MethodSpec, SensorInit, SensorInstance,
};
use super::reference::{gaussian_truth, langevin_pool, pool_truth, GroundTruth};

/// One result row plus experiment-specific values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Record {
    /// Settings group, e.g. `d100` or `r3`; empty when there is one group.
    pub group: String,
    pub trial: usize,
    pub row: DiagnosticsRow,
    pub extras: Vec<(String, f64)>,
}

impl Record {
    /// Standard or extra metric by name.
    pub fn metric(&self, name: &str) -> Option<f64> {
        let r = &self.row;
        match name {
            "mse_mean" => r.mse_mean,
            "mse_second" => r.mse_second,
            "mmd2" => r.mmd2,
            "ksd2" => r.ksd2,
            "rmse" => r.rmse,
            _ => self.extras.iter().find(|(k, _)| k == name).map(|(_, v)| *v),
        }
    }
}

/// Final particles written as JSON.
#[derive(Debug, Clone, Serialize)]
pub struct ParticleDump {
    pub file: String,
    pub content: serde_json::Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub experiment: Experiment,
    pub records: Vec<Record>,
    pub logs: Vec<RunLog>,
    #[serde(skip)]
    pub dumps: Vec<ParticleDump>,
    /// `(trial, derived seed)`.
    pub trial_seeds: Vec<(usize, u64)>,
    pub wall_seconds: f64,
}

impl ExperimentResult {
    /// Per-trial values of `metric` at the last recorded iteration of the
    /// given group, algorithm, kernel variant and particle count.
    pub fn final_values(
        &self,
        group: &str,
        algorithm: &str,
        kernel_variant: &str,
        n: usize,
        metric: &str,
    ) -> Vec<f64> {
        let matching = || {
            self.records.iter().filter(|r| {
                r.group == group
                    && r.row.algorithm == algorithm
                    && r.row.kernel_variant == kernel_variant
                    && r.row.n == n
            })
        };
        let last = matching().map(|r| r.row.iteration).max();
        matching()
            .filter(|r| Some(r.row.iteration) == last)
            .filter_map(|r| r.metric(metric))
            .collect()
    }
}

/// Extra quantities computed from a particle set.
enum Extras {
    None,
    Variance,
    Sensor {
        truth: Vec<[f64; 2]>,
        /// `(sensor, truth, reflected truth)` for ambiguous sensors.
        ambiguous: Vec<(usize, [f64; 2], [f64; 2])>,
    },
    Crowd {
        layout: CrowdLayout,
        x_truth: Vec<f64>,
    },
}

/// Everything one trial of one settings group needs.
pub struct Problem {
    pub model: GraphicalModel,
    gaussian: Option<GaussianMrfParams>,
    truth: Option<GroundTruth>,
    pool_size: Option<usize>,
    /// Starting particles given `n`; `None` means `N(0, I)` on the init stream.
    init: InitRule,
    clip: Option<ClipBox>,
    extras: Extras,
    dump_meta: Option<serde_json::Value>,
}

enum InitRule {
    StandardNormal,
    Uniform,
    Replicate(Vec<f64>),
}

impl Problem {
    fn initial(&self, n: usize, seed: u64) -> Init {
        let d = self.model.dim();
        match &self.init {
            InitRule::StandardNormal => Init::StandardNormal(n),
            InitRule::Uniform => {
                let mut rng = stream(seed, Stream::Init);
                let data = (0..n * d).map(|_| rng.random_range(-1.0..=1.0)).collect();
                Init::Particles(ParticleSet::from_flat(n, d, data).expect("sized buffer"))
            }
            InitRule::Replicate(x) => {
                Init::Particles(ParticleSet::from_rows(&vec![x.clone(); n]).expect("same width"))
            }
        }
    }
}

/// A settings group of an experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Group {
    Single,
    Dim(usize),
    Radius(f64),
}

impl Group {
    fn label(&self) -> String {
        match self {
            Self::Single => String::new(),
            Self::Dim(d) => format!("d{d}"),
            Self::Radius(r) => format!("r{r}"),
        }
    }
}

fn groups(cfg: &ExperimentConfig) -> Vec<Group> {
    match cfg.experiment {
        Experiment::IsoGaussian => cfg.gaussian.dims.iter().map(|&d| Group::Dim(d)).collect(),
        Experiment::SparsitySweep => cfg.gaussian.radii.iter().map(|&r| Group::Radius(r)).collect(),
        _ => vec![Group::Single],
    }
}

fn complete_graph(d: usize) -> Vec<Edge> {
    (0..d).flat_map(|i| (i + 1..d).map(move |j| (i, j))).collect()
}

fn gaussian_problem(
    cfg: &ExperimentConfig,
    edges: &[Edge],
    d: usize,
    seed: u64,
    identity: bool,
) -> Result<Problem> {
    let (model, params) = if identity {
        let params = GaussianMrfParams::identity(d);
        (crate::model::gaussian_model(&params)?, params)
    } else {
        build_gaussian_mrf(edges, d, &mut stream(seed, Stream::Model))?
    };
    let truth = gaussian_truth(&params, cfg.reference_size, seed)?;
    Ok(Problem {
        model,
        gaussian: Some(params),
        truth: Some(truth),
        pool_size: None,
        init: InitRule::StandardNormal,
        clip: None,
        extras: if identity { Extras::Variance } else { Extras::None },
        dump_meta: None,
    })
}

/// Three anchors and nine sensors. With cutoff 0.8 the first seven sensors
/// are pinned down uniquely, while sensor 7 only reaches sensors 3 and 4 and
/// sensor 8 only reaches sensors 5 and 6, so each of those two has a second
/// mode mirrored across the line through its neighbors.
pub const SMALL_ANCHORS: [[f64; 2]; 3] = [[-0.4, -0.4], [0.4, -0.4], [-0.4, 0.4]];
pub const SMALL_SENSORS: [[f64; 2]; 9] = [
    [0.0, 0.0],
    [0.0, -0.5],
    [-0.5, 0.0],
    [0.35, 0.1],
    [0.1, 0.45],
    [0.55, -0.55],
    [0.85, -0.3],
    [0.75, 0.7],
    [1.0, -1.0],
];
pub const SMALL_CUTOFF: f64 = 0.8;
/// `(sensor, neighbor, neighbor)` for the two ambiguous sensors.
pub const SMALL_AMBIGUOUS: [(usize, usize, usize); 2] = [(7, 3, 4), (8, 5, 6)];

/// Mirror image of `p` across the line through `a` and `b`.
pub fn reflect(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let t = ((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / (dx * dx + dy * dy);
    let foot = [a[0] + t * dx, a[1] + t * dy];
    [2.0 * foot[0] - p[0], 2.0 * foot[1] - p[1]]
}

/// Fraction of particles of `sensor` on the smaller side of the bisector of
/// `mode_a` and `mode_b`.
pub fn mode_split(particles: &ParticleSet, sensor: usize, mode_a: [f64; 2], mode_b: [f64; 2]) -> f64 {
    let u = [mode_b[0] - mode_a[0], mode_b[1] - mode_a[1]];
    let c = [0.5 * (mode_a[0] + mode_b[0]), 0.5 * (mode_a[1] + mode_b[1])];
    let far = particles
        .rows()
        .filter(|r| (r[2 * sensor] - c[0]) * u[0] + (r[2 * sensor + 1] - c[1]) * u[1] > 0.0)
        .count();
    let frac = far as f64 / particles.len().max(1) as f64;
    frac.min(1.0 - frac)
}

fn pool_seed(seed: u64) -> u64 {
    mix64(seed ^ Stream::Reference as u64)
}

fn sensor_problem(cfg: &ExperimentConfig, seed: u64) -> Result<Problem> {
    let s = &cfg.sensor;
    let mut data_rng = stream(seed, Stream::Data);
    let (anchors, sensors): (Vec<[f64; 2]>, Vec<[f64; 2]>) = match s.instance {
        SensorInstance::Small => (SMALL_ANCHORS.to_vec(), SMALL_SENSORS.to_vec()),
        SensorInstance::Random => (
            vec![[-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0], [1.0, 1.0]],
            (0..s.n_sensors)
                .map(|_| [data_rng.random_range(-1.0..=1.0), data_rng.random_range(-1.0..=1.0)])
                .collect(),
        ),
    };
    let noise = if s.noise { s.sigma } else { 0.0 };
    let measurements =
        crate::model::measure_distances(&anchors, &sensors, noise, s.cutoff, &mut data_rng);
    let model = crate::model::sensor_model(&anchors, sensors.len(), &measurements, s.sigma)?;
    let flat: Vec<f64> = sensors.iter().flatten().copied().collect();

    let ambiguous = match s.instance {
        SensorInstance::Small => SMALL_AMBIGUOUS
            .iter()
            .map(|&(k, a, b)| (k, sensors[k], reflect(sensors[k], sensors[a], sensors[b])))
            .collect(),
        SensorInstance::Random => Vec::new(),
    };
    let (truth, pool_size) = if cfg.reference_pool.chains > 0 {
        let pool = langevin_pool(&model, &flat, &cfg.reference_pool, None, pool_seed(seed))?;
        (Some(pool_truth(&pool, cfg.reference_size)?), Some(pool.len()))
    } else {
        (None, None)
    };
    Ok(Problem {
        dump_meta: s.dump_particles.then(|| {
            json!({
                "anchors": anchors,
                "truth": sensors,
                "measurements": measurements,
                "sigma": s.sigma,
            })
        }),
        model,
        gaussian: None,
        truth,
        pool_size,
        init: match s.init {
            SensorInit::StandardNormal => InitRule::StandardNormal,
            SensorInit::Uniform => InitRule::Uniform,
            SensorInit::Truth => InitRule::Replicate(flat),
        },
        clip: None,
        extras: Extras::Sensor {
            truth: sensors,
            ambiguous,
        },
    })
}

fn crowd_problem(cfg: &ExperimentConfig, seed: u64) -> Result<Problem> {
    let c = &cfg.crowd;
    let mut rng = stream(seed, Stream::Data);
    let (data, truth) = generate_crowd_data(
        c.n_items,
        c.n_workers,
        c.n_controls,
        c.max_workers_per_item,
        c.min_items_per_worker,
        &c.hyper,
        &mut rng,
    )?;
    let cm = build_crowdsourcing_model(&data, &c.hyper)?;
    let clip = ClipBox {
        coords: cm.layout.log_var_range().collect(),
        lo: -c.log_var_clip,
        hi: c.log_var_clip,
    };
    let (gt, pool_size) = if cfg.reference_pool.chains > 0 {
        let mut start = cm.layout.pack(&truth.x, &truth.b, &truth.nu);
        for j in cm.layout.log_var_range() {
            start[j] = start[j].clamp(clip.lo, clip.hi);
        }
        let pool = langevin_pool(
            &cm.model,
            &start,
            &cfg.reference_pool,
            Some(clip.clone()),
            pool_seed(seed),
        )?;
        (Some(pool_truth(&pool, cfg.reference_size)?), Some(pool.len()))
    } else {
        (None, None)
    };
    let x_truth = cm.layout.free_items.iter().map(|&i| truth.x[i]).collect();
    Ok(Problem {
        model: cm.model,
        gaussian: None,
        truth: gt,
        pool_size,
        init: InitRule::StandardNormal,
        clip: Some(clip),
        extras: Extras::Crowd {
            layout: cm.layout,
            x_truth,
        },
        dump_meta: None,
    })
}

fn build_problem(cfg: &ExperimentConfig, group: Group, seed: u64) -> Result<Problem> {
    let g = &cfg.gaussian;
    match (cfg.experiment, group) {
        (Experiment::IsoGaussian, Group::Dim(d)) => gaussian_problem(cfg, &[], d, seed, true),
        (Experiment::GaussianGrid, _) => {
            gaussian_problem(cfg, &grid_graph(g.rows, g.cols), g.rows * g.cols, seed, false)
        }
        (Experiment::SparsitySweep, Group::Radius(r)) => {
            let edges = radius_graph(&grid_points(g.rows, g.cols), r);
            gaussian_problem(cfg, &edges, g.rows * g.cols, seed, false)
        }
        (Experiment::GaussianDense, _) => {
            gaussian_problem(cfg, &complete_graph(g.dense_dim), g.dense_dim, seed, false)
        }
        (Experiment::Sensor, _) => sensor_problem(cfg, seed),
        (Experiment::Crowdsourcing, _) => crowd_problem(cfg, seed),
        (e, g) => Err(Error::Config(format!("no settings group {g:?} for {}", e.name()))),
    }
}

/// Diagnostics row and extras for one particle set.
fn evaluate(
    cfg: &ExperimentConfig,
    problem: &Problem,
    particles: &ParticleSet,
    base: DiagnosticsRow,
) -> Result<(DiagnosticsRow, Vec<(String, f64)>)> {
    let mut row = base;
    if let Some(t) = &problem.truth {
        let (a, b) = moment_errors(particles, &t.mean, &t.second)?;
        row.mse_mean = Some(a);
        row.mse_second = Some(b);
        row.mmd2 = Some(t.reference.mmd_squared(particles)?);
    }
    if cfg.ksd {
        row.ksd2 = Some(local_ksd(&problem.model, particles)?.0);
    }
    let mut extras = Vec::new();
    match &problem.extras {
        Extras::None => {}
        Extras::Variance => {
            let v = particles.variance();
            extras.push(("variance".into(), v.iter().sum::<f64>() / v.len() as f64));
        }
        Extras::Sensor { truth, ambiguous } => {
            row.rmse = Some(localization_rmse(particles, truth)?);
            for (k, (s, a, b)) in ambiguous.iter().enumerate() {
                extras.push((format!("mode_split_{k}"), mode_split(particles, *s, *a, *b)));
            }
        }
        Extras::Crowd { layout, x_truth } => {
            let mean = particles.mean();
            let mse = x_truth
                .iter()
                .enumerate()
                .map(|(k, x)| (mean[k] - x).powi(2))
                .sum::<f64>()
                / layout.n_free().max(1) as f64;
            extras.push(("label_mse".into(), mse));
        }
    }
    Ok((row, extras))
}

/// Stein discrepancy with local kernels: U-statistic (with its null
/// standard error) for `n >= 2`, V-statistic for a single particle.
pub fn local_ksd(model: &GraphicalModel, particles: &ParticleSet) -> Result<(f64, Option<f64>)> {
    let mut rng = stream(0, Stream::Engine);
    let ks = coordinate_kernels(&KernelSpec::local(), model, particles, &mut rng)?;
    let kind = if particles.len() >= 2 { KsdKind::U } else { KsdKind::V };
    let e = ksd_squared(particles, model, &ks, kind)?;
    Ok((e.total, e.stderr))
}

fn blank_row(iteration: usize, n: usize, algorithm: &str, kernel: &str, seed: u64) -> DiagnosticsRow {
    DiagnosticsRow {
        iteration,
        n,
        algorithm: algorithm.to_string(),
        kernel_variant: kernel.to_string(),
        seed,
        mse_mean: None,
        mse_second: None,
        mmd2: None,
        ksd2: None,
        rmse: None,
    }
}

/// Runs every (group, trial, method, n) of `cfg`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let start = Instant::now();
    let mut records = Vec::new();
    let mut logs = Vec::new();
    let mut dumps = Vec::new();
    let trial_seeds: Vec<(usize, u64)> =
        (0..cfg.trials).map(|t| (t, trial_seed(cfg.seed, t))).collect();

    for group in groups(cfg) {
        let label = group.label();
        for &(trial, seed) in &trial_seeds {
            let problem = build_problem(cfg, group, seed)?;
            if let (Some(t), Some(size), true) =
                (&problem.truth, problem.pool_size, cfg.reference_pool.self_check)
            {
                let (ksd, se) = local_ksd(&problem.model, t.reference.pool())?;
                let mut row = blank_row(cfg.reference_pool.steps, size, "reference", "local", seed);
                row.ksd2 = Some(ksd);
                records.push(Record {
                    group: label.clone(),
                    trial,
                    row,
                    extras: se.map(|s| vec![("ksd2_stderr".to_string(), s)]).unwrap_or_default(),
                });
            }
            for method in &cfg.methods {
                for &n in &cfg.particle_counts {
                    run_method(cfg, &problem, method, n, seed, trial, &label, &mut records, &mut logs, &mut dumps)?;
                }
            }
        }
    }

    Ok(ExperimentResult {
        experiment: cfg.experiment,
        records,
        logs,
        dumps,
        trial_seeds,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

#[allow(clippy::too_many_arguments)]
fn run_method(
    cfg: &ExperimentConfig,
    problem: &Problem,
    method: &MethodSpec,
    n: usize,
    seed: u64,
    trial: usize,
    label: &str,
    records: &mut Vec<Record>,
    logs: &mut Vec<RunLog>,
    dumps: &mut Vec<ParticleDump>,
) -> Result<()> {
    let alg = method.algorithm_name();
    let kernel = method.kernel_name()?;
    let mut push = |iteration: usize, particles: &ParticleSet| -> Result<()> {
        let (row, extras) = evaluate(cfg, problem, particles, blank_row(iteration, n, alg, kernel, seed))?;
        records.push(Record {
            group: label.to_string(),
            trial,
            row,
            extras,
        });
        Ok(())
    };

    let final_particles = match method.engine_config(cfg, seed)? {
        None => {
            let params = problem.gaussian.as_ref().ok_or_else(|| {
                Error::Config("exact sampling needs a Gaussian target".into())
            })?;
            let sample = gaussian_exact_sample(params, n, &mut stream(seed, Stream::Engine))?;
            push(0, &sample)?;
            sample
        }
        Some(mut ec) => {
            ec.clip = problem.clip.clone();
            let out = run(&problem.model, &ec, problem.initial(n, seed))?;
            for (t, p) in &out.checkpoints {
                push(*t, p)?;
            }
            logs.push(out.log);
            out.particles
        }
    };

    if let Some(meta) = &problem.dump_meta {
        let mut content = meta.clone();
        content["algorithm"] = json!(alg);
        content["kernel_variant"] = json!(kernel);
        content["seed"] = json!(seed);
        content["particles"] = serde_json::to_value(&final_particles)?;
        let prefix = if label.is_empty() { String::new() } else { format!("{label}_") };
        dumps.push(ParticleDump {
            file: format!("particles_{prefix}trial{trial}_{alg}_{kernel}_n{n}.json"),
            content,
        });
    }
    Ok(())
}

/// Model names accepted by [`builtin_model`].
pub const BUILTIN_MODELS: [&str; 7] = [
    "iso-gaussian",
    "gaussian-grid",
    "sparsity-sweep",
    "gaussian-dense",
    "sensor",
    "sensor-small",
    "crowdsourcing",
];

/// A built-in model instance generated from `seed` with default settings.
pub fn builtin_model(name: &str, seed: u64) -> Result<GraphicalModel> {
    let mut cfg = ExperimentConfig::new(Experiment::GaussianGrid, vec![MethodSpec::new(MethodKind::Vanilla)]);
    cfg.reference_size = 1;
    cfg.reference_pool.chains = 0;
    let group = match name {
        "iso-gaussian" => {
            cfg.experiment = Experiment::IsoGaussian;
            Group::Dim(10)
        }
        "gaussian-grid" => Group::Single,
        "sparsity-sweep" => {
            cfg.experiment = Experiment::SparsitySweep;
            Group::Radius(2.0)
        }
        "gaussian-dense" => {
            cfg.experiment = Experiment::GaussianDense;
            Group::Single
        }
        "sensor" => {
            cfg.experiment = Experiment::Sensor;
            Group::Single
        }
        "sensor-small" => {
            cfg.experiment = Experiment::Sensor;
            cfg.sensor.instance = SensorInstance::Small;
            cfg.sensor.cutoff = SMALL_CUTOFF;
            Group::Single
        }
        "crowdsourcing" => {
            cfg.experiment = Experiment::Crowdsourcing;
            Group::Single
        }
        other => {
            return Err(Error::Config(format!(
                "unknown model {other:?}; expected one of {}",
                BUILTIN_MODELS.join(", ")
            )))
        }
    };
    Ok(build_problem(&cfg, group, seed)?.model)
}

/// Blanket access audit of every SVGD or Langevin method on the first
/// trial's model of every settings group, with `particle_counts[0]`
/// particles.
pub fn audit_experiment(cfg: &ExperimentConfig) -> Result<Vec<(String, crate::engine::AuditReport)>> {
    cfg.validate()?;
    let seed = trial_seed(cfg.seed, 0);
    let n = cfg.particle_counts[0];
    let mut out = Vec::new();
    let mut light = cfg.clone();
    light.reference_pool.chains = 0;
    light.reference_size = 1;
    for group in groups(&light) {
        let problem = build_problem(&light, group, seed)?;
        for method in &cfg.methods {
            if let Some(ec) = method.engine_config(cfg, seed)? {
                let report =
                    crate::engine::blanket_access_audit(&problem.model, &ec, problem.initial(n, seed))?;
                out.push((group.label(), report));
            }
        }
    }
    Ok(out)
}

/// U-statistic KSD of `n` exact draws from `N(0, I_dim)` under the global
/// and the local kernel.
#[derive(Debug, Clone, Serialize)]
pub struct KsdNullReport {
    pub kernel: String,
    pub n: usize,
    pub dim: usize,
    pub seed: u64,
    pub ksd2: f64,
    pub stderr: f64,
    /// `ksd2 / stderr`.
    pub z: f64,
    pub within_3se: bool,
}

pub fn ksd_null(n: usize, dim: usize, seed: u64) -> Result<Vec<KsdNullReport>> {
    if n < 2 {
        return Err(Error::TooFewParticles(n));
    }
    let model = crate::model::gaussian_model(&GaussianMrfParams::identity(dim))?;
    let sample = ParticleSet::standard_normal(n, dim, &mut stream(seed, Stream::Reference));
    let mut rng = stream(seed, Stream::Engine);
    [KernelSpec::global(), KernelSpec::local()]
        .iter()
        .map(|spec| {
            let ks = coordinate_kernels(spec, &model, &sample, &mut rng)?;
            let e = ksd_squared(&sample, &model, &ks, KsdKind::U)?;
            let se = e.stderr.unwrap_or(f64::NAN);
            Ok(KsdNullReport {
                kernel: spec.variant.name().to_string(),
                n,
                dim,
                seed,
                ksd2: e.total,
                stderr: se,
                z: e.total / se,
                within_3se: e.total.abs() <= 3.0 * se,
            })
        })
        .collect()
}
