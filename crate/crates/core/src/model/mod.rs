//! Continuous graphical models `log p(x) = sum_s psi_s(x_s) + const`.
//!
//! A model is a list of clique potentials, each acting on a sorted index set
//! (its scope). Markov blankets are derived from the scopes once at
//! construction: `N_i` is the union of every scope containing `i`, minus `i`.

mod crowd;
mod gaussian;
mod graph;
mod sensor;

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};

pub use crowd::{
    build_crowdsourcing_model, generate_crowd_data, CrowdAssignment, CrowdData, CrowdHyper,
    CrowdLayout, CrowdModel, CrowdTruth,
};
pub use gaussian::{
    build_gaussian_mrf, gaussian_exact_moments, gaussian_exact_sample, gaussian_model,
    GaussianMrfParams,
};
pub use graph::{grid_graph, grid_points, radius_graph, Edge};
pub use sensor::{
    build_sensor_model, measure_distances, sensor_model, Measurement, MeasurementPair,
};

/// A log-potential over a fixed number of arguments.
///
/// `xs` holds the clique's coordinates in scope order.
pub trait Potential: Send + Sync + fmt::Debug {
    fn log_value(&self, xs: &[f64]) -> f64;

    /// Writes `d psi / d xs[k]` into `out[k]`.
    fn grad(&self, xs: &[f64], out: &mut [f64]);
}

#[derive(Debug, Clone)]
pub struct CliquePotential {
    scope: Vec<usize>,
    func: Arc<dyn Potential>,
}

impl CliquePotential {
    pub fn new(scope: Vec<usize>, func: impl Potential + 'static) -> Self {
        Self {
            scope,
            func: Arc::new(func),
        }
    }

    pub fn scope(&self) -> &[usize] {
        &self.scope
    }

    pub fn log_value(&self, xs: &[f64]) -> f64 {
        self.func.log_value(xs)
    }

    pub fn grad(&self, xs: &[f64], out: &mut [f64]) {
        self.func.grad(xs, out)
    }
}

/// Union-minus-self blanket of node `i` over the given potentials.
pub fn blanket(potentials: &[CliquePotential], dim: usize, i: usize) -> Result<Vec<usize>> {
    if i >= dim {
        return Err(Error::IndexOutOfRange { index: i, dim });
    }
    let mut set = Vec::new();
    for p in potentials {
        if let Some(&bad) = p.scope.iter().find(|&&j| j >= dim) {
            return Err(Error::IndexOutOfRange { index: bad, dim });
        }
        if p.scope.contains(&i) {
            set.extend(p.scope.iter().copied().filter(|&j| j != i));
        }
    }
    set.sort_unstable();
    set.dedup();
    Ok(set)
}

/// An immutable graphical model with derived Markov structure.
#[derive(Debug, Clone)]
pub struct GraphicalModel {
    dim: usize,
    potentials: Vec<CliquePotential>,
    /// For node `i`: `(potential index, position of i in its scope)`, ascending.
    incident: Vec<Vec<(usize, usize)>>,
    blankets: Vec<Vec<usize>>,
    closed: Vec<Vec<usize>>,
    max_scope: usize,
}

impl GraphicalModel {
    pub fn new(dim: usize, potentials: Vec<CliquePotential>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("model dimension must be positive".into()));
        }
        let mut incident = vec![Vec::new(); dim];
        let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); dim];
        let mut max_scope = 0;
        for (pi, p) in potentials.iter().enumerate() {
            let s = &p.scope;
            if s.is_empty() {
                return Err(Error::InvalidScope {
                    scope: s.clone(),
                    reason: "empty",
                });
            }
            if s.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidScope {
                    scope: s.clone(),
                    reason: "indices must be distinct and sorted",
                });
            }
            if *s.last().unwrap() >= dim {
                return Err(Error::InvalidScope {
                    scope: s.clone(),
                    reason: "index outside model dimension",
                });
            }
            max_scope = max_scope.max(s.len());
            for (pos, &i) in s.iter().enumerate() {
                incident[i].push((pi, pos));
                neighbors[i].extend(s.iter().copied().filter(|&j| j != i));
            }
        }
        let blankets: Vec<Vec<usize>> = neighbors
            .into_iter()
            .map(|mut v| {
                v.sort_unstable();
                v.dedup();
                v
            })
            .collect();
        let closed = blankets
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let mut c = b.clone();
                let at = c.partition_point(|&j| j < i);
                c.insert(at, i);
                c
            })
            .collect();
        Ok(Self {
            dim,
            potentials,
            incident,
            blankets,
            closed,
            max_scope,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn potentials(&self) -> &[CliquePotential] {
        &self.potentials
    }

    /// Markov blanket `N_i`, sorted.
    pub fn blanket(&self, i: usize) -> &[usize] {
        &self.blankets[i]
    }

    /// Closed neighborhood `C_i = N_i ∪ {i}`, sorted.
    pub fn closed_blanket(&self, i: usize) -> &[usize] {
        &self.closed[i]
    }

    pub fn blankets(&self) -> &[Vec<usize>] {
        &self.blankets
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        if let Some(j) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput(j));
        }
        Ok(())
    }

    /// `sum_s psi_s(x_s)`, without normalizing constant.
    pub fn log_density_unnorm(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        let mut buf = Vec::with_capacity(self.max_scope);
        let mut total = 0.0;
        for p in &self.potentials {
            buf.clear();
            buf.extend(p.scope.iter().map(|&j| x[j]));
            total += p.log_value(&buf);
        }
        Ok(total)
    }

    /// `d/dx_i log p(x)`, reading coordinates through `fetch`.
    ///
    /// Only potentials whose scope contains `i` are evaluated, so `fetch` is
    /// called for coordinates in `C_i` only.
    pub fn score_coordinate_with<F>(&self, i: usize, mut fetch: F) -> f64
    where
        F: FnMut(usize) -> f64,
    {
        let mut xs = Vec::with_capacity(self.max_scope);
        let mut g = vec![0.0; self.max_scope];
        let mut total = 0.0;
        for &(pi, pos) in &self.incident[i] {
            let p = &self.potentials[pi];
            xs.clear();
            xs.extend(p.scope.iter().map(|&j| fetch(j)));
            let g = &mut g[..xs.len()];
            p.grad(&xs, g);
            total += g[pos];
        }
        total
    }

    pub fn score_coordinate(&self, x: &[f64], i: usize) -> Result<f64> {
        if i >= self.dim {
            return Err(Error::IndexOutOfRange {
                index: i,
                dim: self.dim,
            });
        }
        self.check_point(x)?;
        Ok(self.score_coordinate_with(i, |j| x[j]))
    }

    /// Full gradient of `log p`. Bit-identical to per-coordinate calls.
    pub fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let mut out = vec![0.0; self.dim];
        self.score_into(x, &mut out);
        Ok(out)
    }

    /// Unchecked gradient into `out`; potentials are visited in ascending
    /// order so every coordinate accumulates in the same order as
    /// [`Self::score_coordinate_with`].
    pub fn score_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut xs = Vec::with_capacity(self.max_scope);
        let mut g = vec![0.0; self.max_scope];
        for p in &self.potentials {
            xs.clear();
            xs.extend(p.scope.iter().map(|&j| x[j]));
            let g = &mut g[..xs.len()];
            p.grad(&xs, g);
            for (&j, gj) in p.scope.iter().zip(g.iter()) {
                out[j] += gj;
            }
        }
    }
}

/// Result of comparing analytic scores with central finite differences.
#[derive(Debug, Clone, Serialize)]
pub struct GradientReport {
    pub trials: usize,
    pub tolerance: f64,
    /// `max |analytic - numeric| / max(1, |numeric|)`.
    pub max_error: f64,
    pub worst_coordinate: usize,
    pub passed: bool,
}

/// Central-difference derivative of `log p` in coordinate `i` with step
/// `1e-5 * max(1, |x_i|)`.
pub fn finite_difference_score(model: &GraphicalModel, x: &[f64], i: usize) -> Result<f64> {
    let h = 1e-5 * x[i].abs().max(1.0);
    let mut xp = x.to_vec();
    xp[i] = x[i] + h;
    let fp = model.log_density_unnorm(&xp)?;
    xp[i] = x[i] - h;
    let fm = model.log_density_unnorm(&xp)?;
    Ok((fp - fm) / (2.0 * h))
}

/// Checks `score` against finite differences at the given points.
pub fn check_gradients_at(
    model: &GraphicalModel,
    points: &[Vec<f64>],
    tol: f64,
) -> Result<GradientReport> {
    let mut max_error: f64 = 0.0;
    let mut worst = 0;
    for x in points {
        let analytic = model.score(x)?;
        for (i, a) in analytic.iter().enumerate() {
            let numeric = finite_difference_score(model, x, i)?;
            let err = (a - numeric).abs() / numeric.abs().max(1.0);
            if err > max_error {
                max_error = err;
                worst = i;
            }
        }
    }
    Ok(GradientReport {
        trials: points.len(),
        tolerance: tol,
        max_error,
        worst_coordinate: worst,
        passed: max_error <= tol,
    })
}

/// Checks `score` at `trials` points drawn from `N(0, I)`.
pub fn check_gradients<R: Rng + ?Sized>(
    model: &GraphicalModel,
    trials: usize,
    tol: f64,
    rng: &mut R,
) -> Result<GradientReport> {
    let points: Vec<Vec<f64>> = (0..trials)
        .map(|_| (0..model.dim()).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    check_gradients_at(model, &points, tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug)]
    struct Zero;
    impl Potential for Zero {
        fn log_value(&self, _: &[f64]) -> f64 {
            0.0
        }
        fn grad(&self, _: &[f64], out: &mut [f64]) {
            out.iter_mut().for_each(|v| *v = 0.0)
        }
    }

    fn cliques(scopes: &[&[usize]]) -> Vec<CliquePotential> {
        scopes
            .iter()
            .map(|s| CliquePotential::new(s.to_vec(), Zero))
            .collect()
    }

    #[test]
    fn blanket_of_chain_middle() {
        let p = cliques(&[&[0, 1], &[1, 2]]);
        assert_eq!(blanket(&p, 3, 1).unwrap(), vec![0, 2]);
    }

    #[test]
    fn blanket_of_singletons_is_empty() {
        let p = cliques(&[&[0], &[1]]);
        assert!(blanket(&p, 2, 0).unwrap().is_empty());
    }

    #[test]
    fn blanket_out_of_range() {
        let p = cliques(&[&[0, 1]]);
        assert!(matches!(
            blanket(&p, 2, 2),
            Err(Error::IndexOutOfRange { index: 2, dim: 2 })
        ));
    }

    #[test]
    fn grid_center_blanket_matches_edge_list() {
        let edges = grid_graph(3, 3);
        let scopes: Vec<Vec<usize>> = edges.iter().map(|&(a, b)| vec![a, b]).collect();
        let p: Vec<CliquePotential> = scopes
            .iter()
            .map(|s| CliquePotential::new(s.clone(), Zero))
            .collect();
        let brute: Vec<usize> = {
            let mut v: Vec<usize> = edges
                .iter()
                .filter_map(|&(a, b)| match (a, b) {
                    (4, o) | (o, 4) => Some(o),
                    _ => None,
                })
                .collect();
            v.sort_unstable();
            v
        };
        assert_eq!(blanket(&p, 9, 4).unwrap(), brute);
        assert_eq!(brute, vec![1, 3, 5, 7]);
    }

    #[test]
    fn unsorted_scope_rejected() {
        let p = cliques(&[&[1, 0]]);
        assert!(GraphicalModel::new(2, p).is_err());
        let p = cliques(&[&[0, 5]]);
        assert!(GraphicalModel::new(2, p).is_err());
    }

    #[test]
    fn closed_blanket_contains_self() {
        let m = GraphicalModel::new(4, cliques(&[&[0, 2], &[2, 3]])).unwrap();
        assert_eq!(m.closed_blanket(2), &[0, 2, 3]);
        assert_eq!(m.closed_blanket(1), &[1]);
    }

    #[test]
    fn non_finite_input_rejected() {
        let m = GraphicalModel::new(2, cliques(&[&[0, 1]])).unwrap();
        assert!(matches!(
            m.log_density_unnorm(&[0.0, f64::INFINITY]),
            Err(Error::NonFiniteInput(1))
        ));
        assert!(m.score_coordinate(&[0.0, 0.0], 2).is_err());
    }
}
