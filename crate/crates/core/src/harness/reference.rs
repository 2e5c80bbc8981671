//! Ground-truth samples and the cached MMD against them.

use crate::diagnostics::{pooled_median_bandwidth, second_moments};
use crate::engine::{run, ClipBox, EngineConfig, Init};
use crate::error::{Error, Result};
use crate::kernel::squared_distance;
use crate::model::{gaussian_exact_moments, gaussian_exact_sample, GaussianMrfParams, GraphicalModel};
use crate::particles::ParticleSet;
use crate::seed::{stream, Stream};

use super::config::ReferencePoolSettings;

/// Pools up to this size keep their pairwise squared distances.
const DISTANCE_CACHE_LIMIT: usize = 4000;

/// A fixed reference sample for repeated MMD evaluations.
///
/// Gives the same value as
/// [`mmd_squared`](crate::diagnostics::mmd_squared) with the median trick;
/// the pool's own pairwise distances are computed once.
#[derive(Debug, Clone)]
pub struct MmdReference {
    pool: ParticleSet,
    /// Upper triangle, row by row.
    distances: Option<Vec<f64>>,
}

impl MmdReference {
    pub fn new(pool: ParticleSet) -> Self {
        let n = pool.len();
        let distances = (n <= DISTANCE_CACHE_LIMIT).then(|| {
            let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
            for p in 0..n {
                for q in p + 1..n {
                    d.push(squared_distance(pool.row(p), pool.row(q)));
                }
            }
            d
        });
        Self { pool, distances }
    }

    pub fn pool(&self) -> &ParticleSet {
        &self.pool
    }

    pub fn mmd_squared(&self, sample: &ParticleSet) -> Result<f64> {
        let (a, b) = (sample, &self.pool);
        if a.is_empty() {
            return Err(Error::TooFewParticles(0));
        }
        if a.dim() != b.dim() {
            return Err(Error::DimensionMismatch {
                expected: b.dim(),
                found: a.dim(),
            });
        }
        let h = pooled_median_bandwidth(a, b);
        let (na, nb) = (a.len(), b.len());

        let mut aa = 0.0;
        for p in 0..na {
            for q in p + 1..na {
                aa += 2.0 * (-squared_distance(a.row(p), a.row(q)) / h).exp();
            }
        }
        aa += na as f64;

        let mut bb = 0.0;
        match &self.distances {
            Some(d) => {
                for v in d {
                    bb += 2.0 * (-v / h).exp();
                }
            }
            None => {
                for p in 0..nb {
                    for q in p + 1..nb {
                        bb += 2.0 * (-squared_distance(b.row(p), b.row(q)) / h).exp();
                    }
                }
            }
        }
        bb += nb as f64;

        let mut ab = 0.0;
        for u in a.rows() {
            for v in b.rows() {
                ab += (-squared_distance(u, v) / h).exp();
            }
        }
        Ok(aa / (na * na) as f64 + bb / (nb * nb) as f64 - 2.0 * ab / (na * nb) as f64)
    }
}

/// Target moments plus reference sample.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub mean: Vec<f64>,
    pub second: Vec<f64>,
    pub reference: MmdReference,
}

/// Exact moments and `size` exact draws on the reference stream of `seed`.
pub fn gaussian_truth(params: &GaussianMrfParams, size: usize, seed: u64) -> Result<GroundTruth> {
    let (mean, cov) = gaussian_exact_moments(params)?;
    let second = second_moments(&mean, &cov);
    let mut rng = stream(seed, Stream::Reference);
    let pool = gaussian_exact_sample(params, size, &mut rng)?;
    Ok(GroundTruth {
        mean,
        second,
        reference: MmdReference::new(pool),
    })
}

/// Thinned unadjusted-Langevin draws from `settings.chains` chains started
/// at `start`, after `burn_in` steps, every `thin` steps.
pub fn langevin_pool(
    model: &GraphicalModel,
    start: &[f64],
    settings: &ReferencePoolSettings,
    clip: Option<ClipBox>,
    seed: u64,
) -> Result<ParticleSet> {
    let rows = vec![start.to_vec(); settings.chains];
    let init = ParticleSet::from_rows(&rows)?;
    let mut ec = EngineConfig::langevin();
    ec.master_step = settings.step;
    ec.iterations = settings.steps;
    ec.checkpoint_every = settings.thin;
    ec.clip = clip;
    ec.seed = seed;
    let out = run(model, &ec, Init::Particles(init))?;
    let kept: Vec<&ParticleSet> = out
        .checkpoints
        .iter()
        .filter(|(t, _)| *t > settings.burn_in && *t % settings.thin == 0)
        .map(|(_, p)| p)
        .collect();
    if kept.is_empty() {
        return Err(Error::Config("reference pool kept no draws".into()));
    }
    ParticleSet::vstack(&kept)
}

/// Moments of a pool and the pool (strided down to `size`) as MMD reference.
pub fn pool_truth(pool: &ParticleSet, size: usize) -> Result<GroundTruth> {
    let stride = pool.len().div_ceil(size.max(1)).max(1);
    let rows: Vec<Vec<f64>> = pool.rows().step_by(stride).map(<[f64]>::to_vec).collect();
    Ok(GroundTruth {
        mean: pool.mean(),
        second: pool.second_moment(),
        reference: MmdReference::new(ParticleSet::from_rows(&rows)?),
    })
}
