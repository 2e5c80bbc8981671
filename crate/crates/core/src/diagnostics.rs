//! Sample-quality diagnostics: coordinate-wise kernelized Stein discrepancy,
//! MMD, moment errors and localization RMSE.
//!
//! The Stein discrepancy of a sample `q` against `p` with kernels `k_i` is
//!
//! ```text
//! S^2 = sum_i E_{x, y ~ q} u_i(x, y)
//! u_i(x, y) = s_i(x) s_i(y) k_i + s_i(x) d_{y_i} k_i + s_i(y) d_{x_i} k_i + d_{x_i} d_{y_i} k_i
//! ```
//!
//! with `s = grad log p`.

use serde::{Deserialize, Serialize};

use crate::engine::direction::{check_kernels, rbf_matrix};
use crate::engine::score_matrix;
use crate::error::{Error, Result};
use crate::kernel::{
    k_eval, lower_median, squared_distance, BandwidthRule, CoordinateKernel,
    DEFAULT_BANDWIDTH_FLOOR,
};
use crate::model::{finite_difference_score, GraphicalModel};
use crate::particles::ParticleSet;

/// Pooled samples larger than this use an evenly strided subsample for the
/// median-trick bandwidth.
pub const MEDIAN_SUBSAMPLE: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KsdKind {
    /// Diagonal pairs included, `1/n^2` normalization.
    V,
    /// Diagonal pairs excluded, `1/(n(n-1))` normalization.
    U,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscrepancyEstimate {
    pub total: f64,
    pub per_coordinate: Vec<f64>,
    pub kind: KsdKind,
    /// U-statistic standard error under the null:
    /// `sqrt(2 var(u_lm, l != m) / (n (n - 1)))`.
    pub stderr: Option<f64>,
    /// U-statistic standard error away from the null, from the variance of
    /// the row means `1/(n-1) sum_{m != l} u_lm`: `sqrt(4 var / n)`.
    pub stderr_projection: Option<f64>,
}

/// Kernelized Stein discrepancy with one kernel per coordinate.
pub fn ksd_squared(
    particles: &ParticleSet,
    model: &GraphicalModel,
    kernels: &[CoordinateKernel],
    kind: KsdKind,
) -> Result<DiscrepancyEstimate> {
    let (n, d) = (particles.len(), particles.dim());
    if n == 0 || (kind == KsdKind::U && n < 2) {
        return Err(Error::TooFewParticles(n));
    }
    check_kernels(kernels, d)?;
    let scores = score_matrix(model, particles)?;
    let all: Vec<usize> = (0..d).collect();
    let mut local_gram = LastGram::default();
    let mut global_gram = LastGram::default();

    let mut pair_total = if kind == KsdKind::U { vec![0.0; n * n] } else { Vec::new() };
    let mut per_coordinate = vec![0.0; d];
    let mut xi = vec![0.0; n];
    let mut si = vec![0.0; n];
    for (i, k) in kernels.iter().enumerate() {
        for l in 0..n {
            xi[l] = particles.get(l, i);
            si[l] = scores.get(l, i);
        }
        let kl = local_gram.get(particles, &k.domain, k.bandwidth);
        let kg = k.mix.map(|mix| global_gram.get(particles, &all, mix.bandwidth));
        let hl = k.bandwidth;
        let mut sum = 0.0;
        for l in 0..n {
            for m in 0..n {
                if kind == KsdKind::U && l == m {
                    continue;
                }
                let diff = xi[l] - xi[m];
                let u = {
                    let v = kl[l * n + m];
                    let (gx, cross) = rbf_partials(diff, hl, v);
                    let (mut kv, mut gx, mut cross) = (v, gx, cross);
                    if let (Some(mix), Some(kg)) = (k.mix, kg.as_ref()) {
                        let w = kg[l * n + m];
                        let (ggx, gcross) = rbf_partials(diff, mix.bandwidth, w);
                        let (a, b) = (mix.alpha, 1.0 - mix.alpha);
                        kv = a * kv + b * w;
                        gx = a * gx + b * ggx;
                        cross = a * cross + b * gcross;
                    }
                    // d_{y_i} k = -d_{x_i} k for translation-invariant kernels
                    si[l] * si[m] * kv - si[l] * gx + si[m] * gx + cross
                };
                sum += u;
                if kind == KsdKind::U {
                    pair_total[l * n + m] += u;
                }
            }
        }
        per_coordinate[i] = match kind {
            KsdKind::V => sum / (n * n) as f64,
            KsdKind::U => sum / (n * (n - 1)) as f64,
        };
    }
    let total = per_coordinate.iter().sum();

    let (stderr, stderr_projection) = if kind == KsdKind::U {
        let pairs = n * (n - 1);
        let mean = pair_total.iter().sum::<f64>() / pairs as f64;
        let var = (0..n)
            .flat_map(|l| (0..n).filter(move |&m| m != l).map(move |m| (l, m)))
            .map(|(l, m)| (pair_total[l * n + m] - mean).powi(2))
            .sum::<f64>()
            / (pairs as f64 - 1.0).max(1.0);
        let rows: Vec<f64> = (0..n)
            .map(|l| {
                (0..n).filter(|&m| m != l).map(|m| pair_total[l * n + m]).sum::<f64>()
                    / (n - 1) as f64
            })
            .collect();
        let rm = rows.iter().sum::<f64>() / n as f64;
        let rvar = rows.iter().map(|r| (r - rm).powi(2)).sum::<f64>() / (n as f64 - 1.0).max(1.0);
        (
            Some((2.0 * var / pairs as f64).sqrt()),
            Some((4.0 * rvar / n as f64).sqrt()),
        )
    } else {
        (None, None)
    };

    Ok(DiscrepancyEstimate {
        total,
        per_coordinate,
        kind,
        stderr,
        stderr_projection,
    })
}

/// Gram matrix of the most recent (domain, bandwidth), so memory stays at
/// one `n x n` matrix however many distinct domains there are.
#[derive(Default)]
struct LastGram {
    key: Option<(Vec<usize>, u64)>,
    mat: std::rc::Rc<Vec<f64>>,
}

impl LastGram {
    fn get(&mut self, particles: &ParticleSet, domain: &[usize], h: f64) -> std::rc::Rc<Vec<f64>> {
        let hit = self
            .key
            .as_ref()
            .is_some_and(|(dom, bits)| dom == domain && *bits == h.to_bits());
        if !hit {
            self.mat = std::rc::Rc::new(rbf_matrix(particles, domain, h));
            self.key = Some((domain.to_vec(), h.to_bits()));
        }
        self.mat.clone()
    }
}

/// `(d_{x_i} k, d_{x_i} d_{y_i} k)` of an RBF value `k` with
/// `diff = x_i - y_i`.
#[inline]
fn rbf_partials(diff: f64, h: f64, k: f64) -> (f64, f64) {
    (
        -2.0 / h * diff * k,
        (2.0 / h - 4.0 * diff * diff / (h * h)) * k,
    )
}

/// Recomputes the V-statistic per-coordinate terms with finite-difference
/// scores and finite-difference kernel derivatives, and returns the largest
/// deviation from [`ksd_squared`].
pub fn ksd_oracle_check(
    particles: &ParticleSet,
    model: &GraphicalModel,
    kernels: &[CoordinateKernel],
) -> Result<f64> {
    let analytic = ksd_squared(particles, model, kernels, KsdKind::V)?;
    let (n, d) = (particles.len(), particles.dim());
    let step = 1e-4;
    let rows = particles.to_rows();
    let scores: Vec<Vec<f64>> = rows
        .iter()
        .map(|x| (0..d).map(|i| finite_difference_score(model, x, i)).collect())
        .collect::<Result<_>>()?;

    let shifted = |x: &[f64], i: usize, s: f64| {
        let mut v = x.to_vec();
        v[i] += s;
        v
    };
    let mut worst: f64 = 0.0;
    for (i, k) in kernels.iter().enumerate() {
        let mut sum = 0.0;
        for l in 0..n {
            for m in 0..n {
                let (x, y) = (&rows[l], &rows[m]);
                let (xp, xm) = (shifted(x, i, step), shifted(x, i, -step));
                let (yp, ym) = (shifted(y, i, step), shifted(y, i, -step));
                let kv = k_eval(k, x, y);
                let dx = (k_eval(k, &xp, y) - k_eval(k, &xm, y)) / (2.0 * step);
                let dy = (k_eval(k, x, &yp) - k_eval(k, x, &ym)) / (2.0 * step);
                let dxy = (k_eval(k, &xp, &yp) - k_eval(k, &xp, &ym) - k_eval(k, &xm, &yp)
                    + k_eval(k, &xm, &ym))
                    / (4.0 * step * step);
                let (sx, sy) = (scores[l][i], scores[m][i]);
                sum += sx * sy * kv + sx * dy + sy * dx + dxy;
            }
        }
        let numeric = sum / (n * n) as f64;
        worst = worst.max((numeric - analytic.per_coordinate[i]).abs());
    }
    Ok(worst)
}

/// Median-trick bandwidth of the pooled sample, subsampled by stride when
/// the pool exceeds [`MEDIAN_SUBSAMPLE`] points.
pub fn pooled_median_bandwidth(a: &ParticleSet, b: &ParticleSet) -> f64 {
    let pool: Vec<&[f64]> = a.rows().chain(b.rows()).collect();
    let stride = pool.len().div_ceil(MEDIAN_SUBSAMPLE).max(1);
    let pts: Vec<&[f64]> = pool.into_iter().step_by(stride).collect();
    if pts.len() < 2 {
        return DEFAULT_BANDWIDTH_FLOOR;
    }
    let mut dist = Vec::with_capacity(pts.len() * (pts.len() - 1) / 2);
    for (p, u) in pts.iter().enumerate() {
        for v in &pts[p + 1..] {
            dist.push(squared_distance(u, v));
        }
    }
    lower_median(&mut dist).max(DEFAULT_BANDWIDTH_FLOOR)
}

fn mean_rbf(a: &ParticleSet, b: &ParticleSet, h: f64, same: bool) -> f64 {
    let (na, nb) = (a.len(), b.len());
    let mut sum = 0.0;
    if same {
        for p in 0..na {
            let u = a.row(p);
            for q in p + 1..na {
                sum += 2.0 * (-squared_distance(u, a.row(q)) / h).exp();
            }
        }
        sum += na as f64;
    } else {
        for u in a.rows() {
            for v in b.rows() {
                sum += (-squared_distance(u, v) / h).exp();
            }
        }
    }
    sum / (na * nb) as f64
}

/// V-statistic MMD^2 with an RBF kernel.
pub fn mmd_squared(a: &ParticleSet, b: &ParticleSet, rule: BandwidthRule) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::TooFewParticles(a.len().min(b.len())));
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let h = match rule {
        BandwidthRule::MedianTrick => pooled_median_bandwidth(a, b),
        BandwidthRule::Fixed(h) => h,
    };
    Ok(mean_rbf(a, a, h, true) + mean_rbf(b, b, h, true) - 2.0 * mean_rbf(a, b, h, false))
}

/// `(mse_mean, mse_second)`: coordinate-averaged squared errors of the
/// sample mean and sample second moment.
pub fn moment_errors(
    particles: &ParticleSet,
    true_mean: &[f64],
    true_second: &[f64],
) -> Result<(f64, f64)> {
    let d = particles.dim();
    for v in [true_mean, true_second] {
        if v.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: v.len(),
            });
        }
    }
    if particles.is_empty() {
        return Err(Error::TooFewParticles(0));
    }
    let mse = |est: Vec<f64>, truth: &[f64]| {
        est.iter().zip(truth).map(|(e, t)| (e - t) * (e - t)).sum::<f64>() / d as f64
    };
    Ok((
        mse(particles.mean(), true_mean),
        mse(particles.second_moment(), true_second),
    ))
}

/// `E[x_i^2] = Sigma_ii + mu_i^2`.
pub fn second_moments(mean: &[f64], cov: &[Vec<f64>]) -> Vec<f64> {
    mean.iter().enumerate().map(|(i, m)| cov[i][i] + m * m).collect()
}

/// RMSE of the particle-mean positions of 2-D sensors against the truth.
pub fn localization_rmse(particles: &ParticleSet, truth: &[[f64; 2]]) -> Result<f64> {
    if particles.dim() != 2 * truth.len() {
        return Err(Error::DimensionMismatch {
            expected: 2 * truth.len(),
            found: particles.dim(),
        });
    }
    if particles.is_empty() || truth.is_empty() {
        return Err(Error::TooFewParticles(particles.len()));
    }
    let mean = particles.mean();
    let ss: f64 = truth
        .iter()
        .enumerate()
        .map(|(s, t)| (mean[2 * s] - t[0]).powi(2) + (mean[2 * s + 1] - t[1]).powi(2))
        .sum();
    Ok((ss / truth.len() as f64).sqrt())
}

/// One CSV row; `None` fields are written empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsRow {
    pub iteration: usize,
    pub n: usize,
    pub algorithm: String,
    pub kernel_variant: String,
    pub seed: u64,
    pub mse_mean: Option<f64>,
    pub mse_second: Option<f64>,
    pub mmd2: Option<f64>,
    pub ksd2: Option<f64>,
    pub rmse: Option<f64>,
}
