//! Gaussian RBF kernels `k(u, v) = exp(-|u - v|^2 / h)` restricted to
//! per-coordinate domains.
//!
//! Coordinate `i` of the particle update uses its own kernel `k_i`, which
//! only looks at the coordinates in its domain `D_i`:
//!
//! * `Global`: `D_i = {0..d}` with one shared bandwidth (vanilla SVGD);
//! * `Local`: `D_i = C_i`, the closed Markov blanket of `i`;
//! * `RandomSubset(s)`: `i` plus `s - 1` random blanket members, redrawn on
//!   every call;
//! * `Combined`: `alpha k_local + (1 - alpha) k_global`.
//!
//! Gaussian RBF kernels are strictly integrally positive definite on their
//! domain, which is what makes the coordinate-wise Stein discrepancy
//! discriminative for the conditionals `p(x_i | x_{N_i})` when `D_i ⊇ C_i`.

use std::collections::HashMap;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::GraphicalModel;
use crate::particles::ParticleSet;

/// Domain rule of the local half of a combined kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LocalDomain {
    Local,
    RandomSubset { size: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KernelVariant {
    Global,
    Local,
    RandomSubset { size: usize },
    Combined { alpha: f64, local: LocalDomain },
}

impl KernelVariant {
    /// Short name used in result tables.
    pub fn name(&self) -> &'static str {
        match self {
            Self::Global => "global",
            Self::Local => "local",
            Self::RandomSubset { .. } => "random",
            Self::Combined { .. } => "combine",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthRule {
    MedianTrick,
    Fixed(f64),
}

pub const DEFAULT_BANDWIDTH_FLOOR: f64 = 1e-8;
pub const DEFAULT_COMBINE_ALPHA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub variant: KernelVariant,
    pub bandwidth: BandwidthRule,
    pub floor: f64,
}

impl KernelSpec {
    pub fn new(variant: KernelVariant) -> Self {
        Self {
            variant,
            bandwidth: BandwidthRule::MedianTrick,
            floor: DEFAULT_BANDWIDTH_FLOOR,
        }
    }

    pub fn global() -> Self {
        Self::new(KernelVariant::Global)
    }

    pub fn local() -> Self {
        Self::new(KernelVariant::Local)
    }

    pub fn with_fixed_bandwidth(mut self, h: f64) -> Self {
        self.bandwidth = BandwidthRule::Fixed(h);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.floor > 0.0) {
            return Err(Error::Config("bandwidth floor must be positive".into()));
        }
        if let BandwidthRule::Fixed(h) = self.bandwidth {
            if !(h > 0.0) {
                return Err(Error::Config(format!("fixed bandwidth must be positive, got {h}")));
            }
        }
        let size = match self.variant {
            KernelVariant::RandomSubset { size }
            | KernelVariant::Combined {
                local: LocalDomain::RandomSubset { size },
                ..
            } => Some(size),
            _ => None,
        };
        if size == Some(0) {
            return Err(Error::Config("random subset size must be at least 1".into()));
        }
        if let KernelVariant::Combined { alpha, .. } = self.variant {
            if !(0.0..=1.0).contains(&alpha) {
                return Err(Error::Config(format!("combine alpha must lie in [0, 1], got {alpha}")));
            }
        }
        Ok(())
    }
}

/// Global half of a combined kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GlobalMix {
    /// Weight of the local part.
    pub alpha: f64,
    pub bandwidth: f64,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoordinateKernel {
    /// Sorted coordinates the kernel reads.
    pub domain: Vec<usize>,
    pub bandwidth: f64,
    pub mix: Option<GlobalMix>,
}

impl CoordinateKernel {
    pub fn rbf(domain: Vec<usize>, bandwidth: f64) -> Self {
        Self {
            domain,
            bandwidth,
            mix: None,
        }
    }

    pub fn global(dim: usize, bandwidth: f64) -> Self {
        Self::rbf((0..dim).collect(), bandwidth)
    }

    pub fn is_global(&self, dim: usize) -> bool {
        self.mix.is_none() && self.domain.len() == dim
    }

    /// Every coordinate the kernel can read.
    pub fn support(&self) -> Vec<usize> {
        match self.mix {
            Some(m) => (0..m.dim).collect(),
            None => self.domain.clone(),
        }
    }

    fn in_domain(&self, i: usize) -> bool {
        self.domain.binary_search(&i).is_ok()
    }
}

pub fn rbf_eval(u: &[f64], v: &[f64], h: f64) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    (-squared_distance(u, v) / h).exp()
}

#[inline]
pub fn squared_distance(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[inline]
fn restricted_sq_dist(domain: &[usize], x: &[f64], y: &[f64]) -> f64 {
    domain.iter().map(|&j| (x[j] - y[j]) * (x[j] - y[j])).sum()
}

/// Lower median of a non-empty slice (reorders it).
pub fn lower_median(values: &mut [f64]) -> f64 {
    let k = (values.len() - 1) / 2;
    let (_, m, _) = values.select_nth_unstable_by(k, f64::total_cmp);
    *m
}

/// `max(med^2, floor)` where `med` is the lower median of all pairwise
/// Euclidean distances.
pub fn median_bandwidth(points: &[Vec<f64>], floor: f64) -> f64 {
    let n = points.len();
    if n < 2 {
        return floor;
    }
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    for a in 0..n {
        for b in a + 1..n {
            d.push(squared_distance(&points[a], &points[b]));
        }
    }
    // sqrt is monotone, so the median of squared distances is med^2
    lower_median(&mut d).max(floor)
}

/// Median-trick bandwidth over particle columns `cols`.
pub fn median_bandwidth_columns(particles: &ParticleSet, cols: &[usize], floor: f64) -> f64 {
    let n = particles.len();
    if n < 2 {
        return floor;
    }
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    for a in 0..n {
        let xa = particles.row(a);
        for b in a + 1..n {
            d.push(restricted_sq_dist(cols, xa, particles.row(b)));
        }
    }
    lower_median(&mut d).max(floor)
}

struct BandwidthCache<'a> {
    particles: &'a ParticleSet,
    spec: &'a KernelSpec,
    cache: HashMap<Vec<usize>, f64>,
}

impl BandwidthCache<'_> {
    fn get(&mut self, domain: &[usize]) -> f64 {
        match self.spec.bandwidth {
            BandwidthRule::Fixed(h) => h,
            BandwidthRule::MedianTrick => {
                if let Some(&h) = self.cache.get(domain) {
                    return h;
                }
                let h = median_bandwidth_columns(self.particles, domain, self.spec.floor);
                self.cache.insert(domain.to_vec(), h);
                h
            }
        }
    }
}

fn random_domain<R: Rng + ?Sized>(model: &GraphicalModel, i: usize, size: usize, rng: &mut R) -> Vec<usize> {
    let nb = model.blanket(i);
    let take = size.saturating_sub(1);
    let mut dom: Vec<usize> = if nb.len() <= take {
        nb.to_vec()
    } else {
        index::sample(rng, nb.len(), take).into_iter().map(|k| nb[k]).collect()
    };
    dom.push(i);
    dom.sort_unstable();
    dom
}

/// One kernel per coordinate, with bandwidths from `bandwidth_source`.
///
/// Random subsets draw from `rng` in coordinate order.
pub fn coordinate_kernels<R: Rng + ?Sized>(
    spec: &KernelSpec,
    model: &GraphicalModel,
    bandwidth_source: &ParticleSet,
    rng: &mut R,
) -> Result<Vec<CoordinateKernel>> {
    spec.validate()?;
    let d = model.dim();
    if bandwidth_source.is_empty() {
        return Err(Error::Config("kernel construction needs at least one particle".into()));
    }
    if bandwidth_source.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: bandwidth_source.dim(),
        });
    }
    let mut bw = BandwidthCache {
        particles: bandwidth_source,
        spec,
        cache: HashMap::new(),
    };
    let all: Vec<usize> = (0..d).collect();

    let local_part = |bw: &mut BandwidthCache, rng: &mut R, i: usize, rule: LocalDomain| {
        let domain = match rule {
            LocalDomain::Local => model.closed_blanket(i).to_vec(),
            LocalDomain::RandomSubset { size } => random_domain(model, i, size, rng),
        };
        let h = bw.get(&domain);
        CoordinateKernel::rbf(domain, h)
    };

    let kernels = match spec.variant {
        KernelVariant::Global => {
            let h = bw.get(&all);
            (0..d).map(|_| CoordinateKernel::rbf(all.clone(), h)).collect()
        }
        KernelVariant::Local => (0..d)
            .map(|i| local_part(&mut bw, rng, i, LocalDomain::Local))
            .collect(),
        KernelVariant::RandomSubset { size } => (0..d)
            .map(|i| local_part(&mut bw, rng, i, LocalDomain::RandomSubset { size }))
            .collect(),
        KernelVariant::Combined { alpha, local } => {
            let hg = bw.get(&all);
            (0..d)
                .map(|i| {
                    let mut k = local_part(&mut bw, rng, i, local);
                    k.mix = Some(GlobalMix {
                        alpha,
                        bandwidth: hg,
                        dim: d,
                    });
                    k
                })
                .collect()
        }
    };
    Ok(kernels)
}

/// Local and (if combined) global RBF values.
#[inline]
fn parts(ker: &CoordinateKernel, x: &[f64], y: &[f64]) -> (f64, Option<(f64, GlobalMix)>) {
    let kl = (-restricted_sq_dist(&ker.domain, x, y) / ker.bandwidth).exp();
    let kg = ker
        .mix
        .map(|m| ((-squared_distance(&x[..m.dim], &y[..m.dim]) / m.bandwidth).exp(), m));
    (kl, kg)
}

pub fn k_eval(ker: &CoordinateKernel, x: &[f64], y: &[f64]) -> f64 {
    match parts(ker, x, y) {
        (kl, None) => kl,
        (kl, Some((kg, m))) => m.alpha * kl + (1.0 - m.alpha) * kg,
    }
}

/// `d k_i(x, y) / d x_i`.
pub fn k_grad_first(ker: &CoordinateKernel, x: &[f64], y: &[f64], i: usize) -> f64 {
    let diff = x[i] - y[i];
    let (kl, kg) = parts(ker, x, y);
    let local = if ker.in_domain(i) {
        -2.0 / ker.bandwidth * diff * kl
    } else {
        0.0
    };
    match kg {
        None => local,
        Some((kg, m)) => m.alpha * local + (1.0 - m.alpha) * (-2.0 / m.bandwidth * diff * kg),
    }
}

/// `d k_i(x, y) / d y_i`.
pub fn k_grad_second(ker: &CoordinateKernel, x: &[f64], y: &[f64], i: usize) -> f64 {
    -k_grad_first(ker, x, y, i)
}

/// `d^2 k_i(x, y) / (d x_i d y_i)`.
pub fn k_cross_second(ker: &CoordinateKernel, x: &[f64], y: &[f64], i: usize) -> f64 {
    let diff2 = (x[i] - y[i]) * (x[i] - y[i]);
    let (kl, kg) = parts(ker, x, y);
    let cross = |h: f64, k: f64| (2.0 / h - 4.0 * diff2 / (h * h)) * k;
    let local = if ker.in_domain(i) {
        cross(ker.bandwidth, kl)
    } else {
        0.0
    };
    match kg {
        None => local,
        Some((kg, m)) => m.alpha * local + (1.0 - m.alpha) * cross(m.bandwidth, kg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_gaussian_mrf, gaussian_model, GaussianMrfParams};
    use crate::seed::{stream, Stream};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    const E: f64 = std::f64::consts::E;

    #[test]
    fn rbf_values() {
        assert_eq!(rbf_eval(&[0.3, 1.0], &[0.3, 1.0], 0.7), 1.0);
        assert_abs_diff_eq!(rbf_eval(&[0.0], &[1.0], 1.0), 1.0 / E, epsilon = 1e-15);
        assert_abs_diff_eq!(rbf_eval(&[1.0, 1.0], &[-1.0, -1.0], 2.0), (-4.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn median_bandwidth_examples() {
        let pts = |v: &[f64]| v.iter().map(|&x| vec![x]).collect::<Vec<_>>();
        assert_eq!(median_bandwidth(&pts(&[0.0, 1.0, 2.0]), 1e-8), 1.0);
        assert_eq!(median_bandwidth(&pts(&[0.0, 2.0]), 1e-8), 4.0);
        assert_eq!(median_bandwidth(&pts(&[3.0, 3.0, 3.0]), 1e-8), 1e-8);
        assert_eq!(median_bandwidth(&pts(&[3.0]), 1e-8), 1e-8);
        // distances {1, 3, 2}
        assert_eq!(median_bandwidth(&pts(&[0.0, 1.0, 3.0]), 1e-8), 4.0);
        assert_eq!(lower_median(&mut [4.0, 1.0, 3.0, 2.0]), 2.0);
    }

    fn factorized(d: usize) -> GraphicalModel {
        gaussian_model(&GaussianMrfParams::identity(d)).unwrap()
    }

    #[test]
    fn local_on_factorized_is_per_marginal() {
        let m = factorized(4);
        let mut rng = stream(1, Stream::Engine);
        let p = ParticleSet::standard_normal(10, 4, &mut rng);
        let ks = coordinate_kernels(&KernelSpec::local(), &m, &p, &mut rng).unwrap();
        for (i, k) in ks.iter().enumerate() {
            assert_eq!(k.domain, vec![i]);
        }
    }

    #[test]
    fn global_shares_domain_and_bandwidth() {
        let m = factorized(3);
        let mut rng = stream(1, Stream::Engine);
        let p = ParticleSet::standard_normal(10, 3, &mut rng);
        let ks = coordinate_kernels(&KernelSpec::global(), &m, &p, &mut rng).unwrap();
        for k in &ks {
            assert_eq!(k.domain, vec![0, 1, 2]);
            assert_eq!(k.bandwidth, ks[0].bandwidth);
        }
    }

    #[test]
    fn random_subset_on_complete_graph() {
        let d = 50;
        let edges: Vec<_> = (0..d).flat_map(|i| (i + 1..d).map(move |j| (i, j))).collect();
        let mut rng = stream(2, Stream::Model);
        let (m, _) = build_gaussian_mrf(&edges, d, &mut rng).unwrap();
        let p = ParticleSet::standard_normal(20, d, &mut rng);
        let spec = KernelSpec::new(KernelVariant::RandomSubset { size: 5 });
        let a = coordinate_kernels(&spec, &m, &p, &mut rng).unwrap();
        let b = coordinate_kernels(&spec, &m, &p, &mut rng).unwrap();
        for (i, k) in a.iter().enumerate() {
            assert_eq!(k.domain.len(), 5);
            assert!(k.domain.contains(&i));
        }
        assert_ne!(a, b, "domains are redrawn on every call");
    }

    #[test]
    fn random_subset_smaller_blanket_takes_all() {
        let m = gaussian_model(
            &GaussianMrfParams::new(
                vec![vec![1.0, 0.2, 0.0], vec![0.2, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
                vec![0.0; 3],
            )
            .unwrap(),
        )
        .unwrap();
        let mut rng = stream(0, Stream::Engine);
        let p = ParticleSet::standard_normal(5, 3, &mut rng);
        let spec = KernelSpec::new(KernelVariant::RandomSubset { size: 5 });
        let ks = coordinate_kernels(&spec, &m, &p, &mut rng).unwrap();
        assert_eq!(ks[0].domain, vec![0, 1]);
        assert_eq!(ks[2].domain, vec![2]);
    }

    #[test]
    fn spec_validation() {
        assert!(KernelSpec::global().with_fixed_bandwidth(0.0).validate().is_err());
        let mut s = KernelSpec::local();
        s.floor = 0.0;
        assert!(s.validate().is_err());
        let s = KernelSpec::new(KernelVariant::Combined {
            alpha: 1.5,
            local: LocalDomain::Local,
        });
        assert!(s.validate().is_err());
    }

    #[test]
    fn locality_of_evaluation() {
        let k = CoordinateKernel::rbf(vec![0, 1], 1.0);
        let x = [0.0, 0.0, 9.0];
        let y = [1.0, 0.0, -9.0];
        assert_abs_diff_eq!(k_eval(&k, &x, &y), 1.0 / E, epsilon = 1e-15);
    }

    #[test]
    fn combined_equal_parts() {
        let k = CoordinateKernel {
            domain: vec![0, 1],
            bandwidth: 1.3,
            mix: Some(GlobalMix {
                alpha: 0.5,
                bandwidth: 1.3,
                dim: 2,
            }),
        };
        let x = [0.2, -0.4];
        let y = [1.0, 0.5];
        assert_abs_diff_eq!(k_eval(&k, &x, &y), rbf_eval(&x, &y, 1.3), epsilon = 1e-15);
        assert_abs_diff_eq!(k_eval(&k, &x, &x), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn derivative_values() {
        let k = CoordinateKernel::rbf(vec![0], 1.0);
        assert_eq!(k_grad_first(&k, &[0.4], &[0.4], 0), 0.0);
        assert_abs_diff_eq!(k_grad_first(&k, &[1.0], &[0.0], 0), -2.0 / E, epsilon = 1e-15);
        assert_abs_diff_eq!(k_cross_second(&k, &[0.3], &[0.3], 0), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(k_cross_second(&k, &[1.0], &[0.0], 0), -2.0 / E, epsilon = 1e-15);
    }

    fn kernel_strategy() -> impl Strategy<Value = (CoordinateKernel, Vec<f64>, Vec<f64>, usize)> {
        (
            prop::collection::vec(-2.0..2.0f64, 4),
            prop::collection::vec(-2.0..2.0f64, 4),
            0.3..3.0f64,
            prop::option::of((0.0..=1.0f64, 0.3..3.0f64)),
            0usize..3,
        )
            .prop_map(|(x, y, h, mix, i)| {
                let k = CoordinateKernel {
                    domain: vec![0, i + 1],
                    bandwidth: h,
                    mix: mix.map(|(alpha, hg)| GlobalMix {
                        alpha,
                        bandwidth: hg,
                        dim: 4,
                    }),
                };
                (k, x, y, i + 1)
            })
    }

    proptest! {
        #[test]
        fn derivatives_match_finite_differences((k, x, y, i) in kernel_strategy()) {
            let h = 1e-5;
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (k_eval(&k, &xp, &y) - k_eval(&k, &xm, &y)) / (2.0 * h);
            prop_assert!((fd - k_grad_first(&k, &x, &y, i)).abs() < 1e-6);

            let g = 1e-4;
            let mut nested = 0.0;
            for (sx, sy, w) in [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)] {
                let mut a = x.clone();
                let mut b = y.clone();
                a[i] += sx * g;
                b[i] += sy * g;
                nested += w * k_eval(&k, &a, &b);
            }
            nested /= 4.0 * g * g;
            prop_assert!((nested - k_cross_second(&k, &x, &y, i)).abs() < 1e-4);
        }

        #[test]
        fn symmetry_and_locality((k, x, y, i) in kernel_strategy(), shift in -5.0..5.0f64) {
            prop_assert!((k_eval(&k, &x, &y) - k_eval(&k, &y, &x)).abs() < 1e-15);
            let gx = k_grad_first(&k, &x, &y, i);
            prop_assert!((gx + k_grad_second(&k, &x, &y, i)).abs() < 1e-15);
            prop_assert!((gx + k_grad_first(&k, &y, &x, i)).abs() < 1e-15);
            if k.mix.is_none() {
                let outside = (0..4).find(|j| !k.domain.contains(j)).unwrap();
                let mut x2 = x.clone();
                x2[outside] += shift;
                prop_assert_eq!(k_eval(&k, &x, &y), k_eval(&k, &x2, &y));
                prop_assert_eq!(k_grad_first(&k, &x, &y, i), k_grad_first(&k, &x2, &y, i));
                prop_assert_eq!(k_cross_second(&k, &x, &y, i), k_cross_second(&k, &x2, &y, i));
            }
        }
    }

    #[test]
    fn gram_matrices_are_psd() {
        let mut rng = stream(8, Stream::Init);
        for trial in 0..10 {
            let n = 10 + 4 * trial;
            let p = ParticleSet::standard_normal(n, 4, &mut rng);
            let k = CoordinateKernel {
                domain: vec![1, 2],
                bandwidth: 0.5 + trial as f64 * 0.2,
                mix: (trial % 2 == 0).then_some(GlobalMix {
                    alpha: 0.5,
                    bandwidth: 2.0,
                    dim: 4,
                }),
            };
            let gram = DMatrix::from_fn(n, n, |a, b| k_eval(&k, p.row(a), p.row(b)));
            let min = gram.symmetric_eigenvalues().min();
            assert!(min >= -1e-8, "min eigenvalue {min}");
        }
    }
}
