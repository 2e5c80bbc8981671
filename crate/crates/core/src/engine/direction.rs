//! Stein variational directions.
//!
//! Both forms are V-statistic averages over all particles `l`, self-term
//! included, summed in ascending `l`:
//!
//! ```text
//! phi_i(x^m) = 1/n sum_l [ s_i(x^l) k_i(x^l, x^m) + d/dx_i^l k_i(x^l, x^m) ]
//! ```
//!
//! Vanilla SVGD uses one kernel over all coordinates; the graphical form uses
//! a kernel per coordinate.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::kernel::CoordinateKernel;
use crate::model::GraphicalModel;
use crate::particles::ParticleSet;

/// Read-only access to particle entries, so reads can be audited.
pub trait ColumnAccess {
    fn n(&self) -> usize;
    fn dim(&self) -> usize;
    fn get(&self, particle: usize, coord: usize) -> f64;
}

impl ColumnAccess for ParticleSet {
    fn n(&self) -> usize {
        self.len()
    }

    fn dim(&self) -> usize {
        ParticleSet::dim(self)
    }

    #[inline]
    fn get(&self, particle: usize, coord: usize) -> f64 {
        ParticleSet::get(self, particle, coord)
    }
}

/// `n x d` matrix of `grad log p` at every particle.
pub fn score_matrix(model: &GraphicalModel, particles: &ParticleSet) -> Result<ParticleSet> {
    let (n, d) = (particles.len(), particles.dim());
    if d != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: d,
        });
    }
    let mut out = ParticleSet::zeros(n, d);
    for l in 0..n {
        let row = out.row_mut(l);
        model.score_into(particles.row(l), row);
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteScore { particle: l });
        }
    }
    Ok(out)
}

/// Symmetric `n x n` RBF Gram matrix over `domain`, row-major.
pub(crate) fn rbf_matrix(particles: &ParticleSet, domain: &[usize], h: f64) -> Vec<f64> {
    let n = particles.len();
    let sub: Vec<f64> = (0..n)
        .flat_map(|l| domain.iter().map(move |&j| particles.get(l, j)))
        .collect();
    let w = domain.len();
    let mut k = vec![0.0; n * n];
    for a in 0..n {
        k[a * n + a] = 1.0;
        let xa = &sub[a * w..(a + 1) * w];
        for b in a + 1..n {
            let xb = &sub[b * w..(b + 1) * w];
            let d2: f64 = xa.iter().zip(xb).map(|(u, v)| (u - v) * (u - v)).sum();
            let v = (-d2 / h).exp();
            k[a * n + b] = v;
            k[b * n + a] = v;
        }
    }
    k
}

/// Vanilla SVGD direction with one kernel over all coordinates.
pub fn svgd_direction_vanilla(
    particles: &ParticleSet,
    model: &GraphicalModel,
    kernel: &CoordinateKernel,
) -> Result<ParticleSet> {
    let (n, d) = (particles.len(), particles.dim());
    if kernel.mix.is_some() || kernel.domain.len() != d {
        return Err(Error::Config("vanilla SVGD needs a single global kernel".into()));
    }
    let scores = score_matrix(model, particles)?;
    let h = kernel.bandwidth;
    let k = rbf_matrix(particles, &kernel.domain, h);
    let c = -2.0 / h;
    let inv_n = 1.0 / n as f64;
    let mut out = ParticleSet::zeros(n, d);
    let mut acc = vec![0.0; d];
    for m in 0..n {
        acc.iter_mut().for_each(|v| *v = 0.0);
        let xm = particles.row(m);
        for l in 0..n {
            let klm = k[l * n + m];
            let xl = particles.row(l);
            let sl = scores.row(l);
            for j in 0..d {
                acc[j] += sl[j] * klm + c * (xl[j] - xm[j]) * klm;
            }
        }
        for (o, a) in out.row_mut(m).iter_mut().zip(&acc) {
            *o = a * inv_n;
        }
    }
    Ok(out)
}

/// Gram matrices for a kernel list, one per distinct (domain, bandwidth)
/// and one per distinct global-mix bandwidth.
pub(crate) struct GramSet {
    local: Vec<Vec<f64>>,
    global: Vec<Vec<f64>>,
    assign: Vec<(usize, Option<usize>)>,
}

impl GramSet {
    pub(crate) fn new(particles: &ParticleSet, kernels: &[CoordinateKernel]) -> Self {
        let mut local_ids: HashMap<(&[usize], u64), usize> = HashMap::new();
        let mut global_ids: HashMap<u64, usize> = HashMap::new();
        let mut local = Vec::new();
        let mut global = Vec::new();
        let all: Vec<usize> = (0..particles.dim()).collect();
        let mut assign = Vec::with_capacity(kernels.len());
        for k in kernels {
            let key = (k.domain.as_slice(), k.bandwidth.to_bits());
            let li = *local_ids.entry(key).or_insert_with(|| {
                local.push(rbf_matrix(particles, &k.domain, k.bandwidth));
                local.len() - 1
            });
            let gi = k.mix.map(|mix| {
                *global_ids.entry(mix.bandwidth.to_bits()).or_insert_with(|| {
                    global.push(rbf_matrix(particles, &all, mix.bandwidth));
                    global.len() - 1
                })
            });
            assign.push((li, gi));
        }
        Self { local, global, assign }
    }

    pub(crate) fn local(&self, i: usize) -> &[f64] {
        &self.local[self.assign[i].0]
    }

    pub(crate) fn global(&self, i: usize) -> Option<&[f64]> {
        self.assign[i].1.map(|g| self.global[g].as_slice())
    }
}

pub(crate) fn check_kernels(kernels: &[CoordinateKernel], d: usize) -> Result<()> {
    if kernels.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: kernels.len(),
        });
    }
    for (i, k) in kernels.iter().enumerate() {
        if k.domain.binary_search(&i).is_err() {
            return Err(Error::Config(format!("kernel {i} does not contain its own coordinate")));
        }
        if k.domain.last().is_some_and(|&j| j >= d) {
            return Err(Error::IndexOutOfRange {
                index: *k.domain.last().unwrap(),
                dim: d,
            });
        }
    }
    Ok(())
}

/// Graphical SVGD direction with one kernel per coordinate.
///
/// Coordinates whose kernels share a domain and bandwidth share one Gram
/// matrix. Matches [`graphical_direction_via`] on a plain particle set.
pub fn graphical_direction(
    particles: &ParticleSet,
    model: &GraphicalModel,
    kernels: &[CoordinateKernel],
) -> Result<ParticleSet> {
    let (n, d) = (particles.len(), particles.dim());
    check_kernels(kernels, d)?;
    let scores = score_matrix(model, particles)?;

    let grams = GramSet::new(particles, kernels);

    let inv_n = 1.0 / n as f64;
    let mut out = ParticleSet::zeros(n, d);
    let mut xi = vec![0.0; n];
    let mut si = vec![0.0; n];
    for (i, k) in kernels.iter().enumerate() {
        for l in 0..n {
            xi[l] = particles.get(l, i);
            si[l] = scores.get(l, i);
        }
        let kl = grams.local(i);
        let cl = -2.0 / k.bandwidth;
        match (k.mix, grams.global(i)) {
            (Some(mix), Some(kg)) => {
                let cg = -2.0 / mix.bandwidth;
                let (a, b) = (mix.alpha, 1.0 - mix.alpha);
                for m in 0..n {
                    let mut acc = 0.0;
                    for l in 0..n {
                        let diff = xi[l] - xi[m];
                        let (u, v) = (kl[l * n + m], kg[l * n + m]);
                        acc += si[l] * (a * u + b * v) + a * cl * diff * u + b * cg * diff * v;
                    }
                    out.set(m, i, acc * inv_n);
                }
            }
            _ => {
                for m in 0..n {
                    let mut acc = 0.0;
                    for l in 0..n {
                        let u = kl[l * n + m];
                        acc += si[l] * u + cl * (xi[l] - xi[m]) * u;
                    }
                    out.set(m, i, acc * inv_n);
                }
            }
        }
    }
    Ok(out)
}

/// Column `i` of the graphical direction, reading particles only through
/// `view`: kernel values touch `D_i` (all coordinates for a combined
/// kernel) and scores touch `C_i`.
pub fn direction_column<V: ColumnAccess>(
    view: &V,
    model: &GraphicalModel,
    kernel: &CoordinateKernel,
    i: usize,
) -> Result<Vec<f64>> {
    let n = view.n();
    let w = kernel.domain.len();
    let sub: Vec<f64> = (0..n)
        .flat_map(|l| kernel.domain.iter().map(move |&j| view.get(l, j)))
        .collect();
    let full: Option<Vec<f64>> = kernel.mix.map(|m| {
        (0..n)
            .flat_map(|l| (0..m.dim).map(move |j| view.get(l, j)))
            .collect()
    });
    let pos = kernel
        .domain
        .binary_search(&i)
        .map_err(|_| Error::Config(format!("kernel {i} does not contain its own coordinate")))?;
    let xi: Vec<f64> = (0..n).map(|l| sub[l * w + pos]).collect();
    let mut si = Vec::with_capacity(n);
    for l in 0..n {
        let s = model.score_coordinate_with(i, |j| view.get(l, j));
        if !s.is_finite() {
            return Err(Error::NonFiniteScore { particle: l });
        }
        si.push(s);
    }

    let rbf = |data: &[f64], w: usize, a: usize, b: usize, h: f64| {
        if a == b {
            return 1.0;
        }
        let (u, v) = (&data[a * w..(a + 1) * w], &data[b * w..(b + 1) * w]);
        let d2: f64 = u.iter().zip(v).map(|(p, q)| (p - q) * (p - q)).sum();
        (-d2 / h).exp()
    };

    let inv_n = 1.0 / n as f64;
    let cl = -2.0 / kernel.bandwidth;
    let mut col = vec![0.0; n];
    for (m, out) in col.iter_mut().enumerate() {
        let mut acc = 0.0;
        for l in 0..n {
            let diff = xi[l] - xi[m];
            // rbf(l, m) == rbf(m, l) bit-for-bit only if computed in the
            // same order as rbf_matrix, which fills from the smaller index
            let (lo, hi) = if l < m { (l, m) } else { (m, l) };
            let u = rbf(&sub, w, lo, hi, kernel.bandwidth);
            match (kernel.mix, &full) {
                (Some(mix), Some(full)) => {
                    let v = rbf(full, mix.dim, lo, hi, mix.bandwidth);
                    let cg = -2.0 / mix.bandwidth;
                    let (a, b) = (mix.alpha, 1.0 - mix.alpha);
                    acc += si[l] * (a * u + b * v) + a * cl * diff * u + b * cg * diff * v;
                }
                _ => acc += si[l] * u + cl * diff * u,
            }
        }
        *out = acc * inv_n;
    }
    Ok(col)
}

/// Graphical direction computed one coordinate at a time through `view`.
pub fn graphical_direction_via<V: ColumnAccess>(
    view: &V,
    model: &GraphicalModel,
    kernels: &[CoordinateKernel],
) -> Result<ParticleSet> {
    let (n, d) = (view.n(), view.dim());
    check_kernels(kernels, d)?;
    let mut out = ParticleSet::zeros(n, d);
    for (i, k) in kernels.iter().enumerate() {
        let col = direction_column(view, model, k, i)?;
        for (m, v) in col.into_iter().enumerate() {
            out.set(m, i, v);
        }
    }
    Ok(out)
}
