use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::{CliquePotential, Edge, GraphicalModel, Potential};
use crate::error::{Error, Result};
use crate::particles::ParticleSet;

/// `psi(x_i) = b x_i - a x_i^2 / 2`.
#[derive(Debug, Clone, Copy)]
struct Unary {
    b: f64,
    a: f64,
}

impl Potential for Unary {
    fn log_value(&self, xs: &[f64]) -> f64 {
        self.b * xs[0] - 0.5 * self.a * xs[0] * xs[0]
    }

    fn grad(&self, xs: &[f64], out: &mut [f64]) {
        out[0] = self.b - self.a * xs[0];
    }
}

/// `psi(x_i, x_j) = -a x_i x_j`, one clique per undirected edge.
#[derive(Debug, Clone, Copy)]
struct Pair {
    a: f64,
}

impl Potential for Pair {
    fn log_value(&self, xs: &[f64]) -> f64 {
        -self.a * xs[0] * xs[1]
    }

    fn grad(&self, xs: &[f64], out: &mut [f64]) {
        out[0] = -self.a * xs[1];
        out[1] = -self.a * xs[0];
    }
}

/// Precision matrix and linear term of `p(x) ∝ exp(b'x - x'Ax/2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMrfParams {
    /// Row-major rows of the precision matrix.
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl GaussianMrfParams {
    pub fn new(a: Vec<Vec<f64>>, b: Vec<f64>) -> Result<Self> {
        let d = b.len();
        if a.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: a.len(),
            });
        }
        if let Some(row) = a.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: row.len(),
            });
        }
        Ok(Self { a, b })
    }

    pub fn identity(d: usize) -> Self {
        let a = (0..d)
            .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self { a, b: vec![0.0; d] }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn precision(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| self.a[i][j])
    }

    /// `b'x - x'Ax/2` evaluated densely.
    pub fn dense_log_density(&self, x: &[f64]) -> f64 {
        let mut quad = 0.0;
        for (i, row) in self.a.iter().enumerate() {
            for (j, aij) in row.iter().enumerate() {
                quad += x[i] * aij * x[j];
            }
        }
        let lin: f64 = self.b.iter().zip(x).map(|(b, x)| b * x).sum();
        lin - 0.5 * quad
    }

    /// Shift of the mean by `delta`: `b <- b + A delta`.
    pub fn shifted(&self, delta: &[f64]) -> Self {
        let b = self
            .b
            .iter()
            .zip(&self.a)
            .map(|(b, row)| b + row.iter().zip(delta).map(|(a, d)| a * d).sum::<f64>())
            .collect();
        Self {
            a: self.a.clone(),
            b,
        }
    }
}

/// Builds the clique representation of a Gaussian MRF; every nonzero
/// off-diagonal `A_ij` (i < j) becomes one pair clique.
pub fn gaussian_model(params: &GaussianMrfParams) -> Result<GraphicalModel> {
    let d = params.dim();
    let mut potentials = Vec::with_capacity(d);
    for i in 0..d {
        potentials.push(CliquePotential::new(
            vec![i],
            Unary {
                b: params.b[i],
                a: params.a[i][i],
            },
        ));
    }
    for i in 0..d {
        for j in i + 1..d {
            let aij = params.a[i][j];
            if aij != 0.0 {
                potentials.push(CliquePotential::new(vec![i, j], Pair { a: aij }));
            }
        }
    }
    GraphicalModel::new(d, potentials)
}

/// Random diagonally dominant Gaussian MRF on the given edges.
///
/// `b_i ~ N(0, 1)`; both `A_ij` and `A_ji` are drawn from `U[-0.1, 0.1]` for
/// every edge, then `A <- (A + A')/2` and `A_ii <- 0.1 + sum_j |A_ij|`.
pub fn build_gaussian_mrf<R: Rng + ?Sized>(
    edges: &[Edge],
    dim: usize,
    rng: &mut R,
) -> Result<(GraphicalModel, GaussianMrfParams)> {
    let mut seen = std::collections::HashSet::with_capacity(edges.len());
    for &(i, j) in edges {
        if i >= dim || j >= dim {
            return Err(Error::InvalidEdge(i, j, "endpoint out of range"));
        }
        if i == j {
            return Err(Error::InvalidEdge(i, j, "self-loop"));
        }
        if !seen.insert((i.min(j), i.max(j))) {
            return Err(Error::InvalidEdge(i, j, "duplicate edge"));
        }
    }

    let b: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let unif = Uniform::new_inclusive(-0.1, 0.1).expect("valid range");
    let mut a = vec![vec![0.0f64; dim]; dim];
    for &(i, j) in edges {
        a[i][j] = unif.sample(rng);
        a[j][i] = unif.sample(rng);
    }
    for i in 0..dim {
        for j in i + 1..dim {
            let s = 0.5 * (a[i][j] + a[j][i]);
            a[i][j] = s;
            a[j][i] = s;
        }
    }
    for i in 0..dim {
        let off: f64 = (0..dim).filter(|&j| j != i).map(|j| a[i][j].abs()).sum();
        a[i][i] = 0.1 + off;
    }
    let params = GaussianMrfParams { a, b };
    Ok((gaussian_model(&params)?, params))
}

/// Exact mean `A^{-1} b` and covariance `A^{-1}`.
pub fn gaussian_exact_moments(params: &GaussianMrfParams) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let chol = params
        .precision()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite)?;
    let mean = chol.solve(&DVector::from_column_slice(&params.b));
    let cov = chol.inverse();
    let d = params.dim();
    let cov_rows = (0..d)
        .map(|i| (0..d).map(|j| 0.5 * (cov[(i, j)] + cov[(j, i)])).collect())
        .collect();
    Ok((mean.iter().copied().collect(), cov_rows))
}

/// `n` i.i.d. draws from `N(A^{-1} b, A^{-1})`, via `x = mu + L^{-T} z` with
/// `A = L L'`.
pub fn gaussian_exact_sample<R: Rng + ?Sized>(
    params: &GaussianMrfParams,
    n: usize,
    rng: &mut R,
) -> Result<ParticleSet> {
    let d = params.dim();
    let chol = params
        .precision()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite)?;
    let mean = chol.solve(&DVector::from_column_slice(&params.b));
    let l = chol.l();
    let mut out = ParticleSet::zeros(n, d);
    for row in 0..n {
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = l
            .tr_solve_lower_triangular(&z)
            .ok_or(Error::NotPositiveDefinite)?;
        for (j, dst) in out.row_mut(row).iter_mut().enumerate() {
            *dst = mean[j] + y[j];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::grid_graph;
    use crate::seed::{stream, Stream};
    use approx::assert_abs_diff_eq;

    #[test]
    fn identity_gaussian_density() {
        let m = gaussian_model(&GaussianMrfParams::identity(2)).unwrap();
        assert_eq!(m.log_density_unnorm(&[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(m.log_density_unnorm(&[1.0, 1.0]).unwrap(), -1.0);
        assert_eq!(m.score(&[1.0, 1.0]).unwrap(), vec![-1.0, -1.0]);
    }

    #[test]
    fn correlated_pair_density_and_score() {
        let p = GaussianMrfParams::new(vec![vec![1.0, 0.5], vec![0.5, 1.0]], vec![0.0, 0.0])
            .unwrap();
        let m = gaussian_model(&p).unwrap();
        assert_abs_diff_eq!(m.log_density_unnorm(&[1.0, 1.0]).unwrap(), -1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(m.score_coordinate(&[1.0, 1.0], 0).unwrap(), -1.5, epsilon = 1e-15);
    }

    #[test]
    fn single_node_mrf() {
        let mut rng = stream(3, Stream::Model);
        let (m, p) = build_gaussian_mrf(&[], 1, &mut rng).unwrap();
        assert_eq!(p.a, vec![vec![0.1]]);
        let x = 1.7;
        let expected = p.b[0] * x - 0.05 * x * x;
        assert_abs_diff_eq!(m.log_density_unnorm(&[x]).unwrap(), expected, epsilon = 1e-14);
    }

    #[test]
    fn edge_validation() {
        let mut rng = stream(0, Stream::Model);
        assert!(build_gaussian_mrf(&[(0, 0)], 2, &mut rng).is_err());
        assert!(build_gaussian_mrf(&[(0, 2)], 2, &mut rng).is_err());
        assert!(build_gaussian_mrf(&[(0, 1), (1, 0)], 2, &mut rng).is_err());
    }

    #[test]
    fn two_node_density_matches_dense_form() {
        let mut rng = stream(11, Stream::Model);
        let (m, p) = build_gaussian_mrf(&[(0, 1)], 2, &mut rng).unwrap();
        for _ in 0..10 {
            let x: Vec<f64> = (0..2).map(|_| rng.sample::<f64, _>(StandardNormal) * 3.0).collect();
            let a = m.log_density_unnorm(&x).unwrap();
            let b = p.dense_log_density(&x);
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn grid_instances_are_positive_definite_and_dominant() {
        let edges = grid_graph(10, 10);
        for seed in 0..50 {
            let mut rng = stream(seed, Stream::Model);
            let (_, p) = build_gaussian_mrf(&edges, 100, &mut rng).unwrap();
            for i in 0..100 {
                let off: f64 = (0..100).filter(|&j| j != i).map(|j| p.a[i][j].abs()).sum();
                assert!(p.a[i][i] >= 0.1 + off - 1e-15);
                for j in 0..100 {
                    assert!((p.a[i][j] - p.a[j][i]).abs() <= 1e-12);
                }
            }
            assert!(p.precision().cholesky().is_some());
        }
    }

    #[test]
    fn exact_moments_diagonal() {
        let p = GaussianMrfParams::new(vec![vec![2.0, 0.0], vec![0.0, 4.0]], vec![2.0, 4.0])
            .unwrap();
        let (mean, cov) = gaussian_exact_moments(&p).unwrap();
        assert_abs_diff_eq!(mean[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(mean[1], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(cov[0][0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(cov[1][1], 0.25, epsilon = 1e-14);
        assert_abs_diff_eq!(cov[0][1], 0.0, epsilon = 1e-14);

        let (mean, cov) = gaussian_exact_moments(&GaussianMrfParams::identity(3)).unwrap();
        assert_eq!(mean, vec![0.0; 3]);
        assert_eq!(cov[1], vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn exact_moments_residual() {
        let edges: Vec<Edge> = (0..5).flat_map(|i| (i + 1..5).map(move |j| (i, j))).collect();
        let mut rng = stream(5, Stream::Model);
        let (_, p) = build_gaussian_mrf(&edges, 5, &mut rng).unwrap();
        let (_, cov) = gaussian_exact_moments(&p).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let v: f64 = (0..5).map(|k| p.a[i][k] * cov[k][j]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((v - target).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn not_positive_definite() {
        let p = GaussianMrfParams::new(vec![vec![1.0, 2.0], vec![2.0, 1.0]], vec![0.0, 0.0])
            .unwrap();
        assert!(matches!(gaussian_exact_moments(&p), Err(Error::NotPositiveDefinite)));
    }

    #[test]
    fn exact_sample_moments() {
        let mut rng = stream(21, Stream::Reference);
        let n = 100_000;
        let s = gaussian_exact_sample(&GaussianMrfParams::identity(2), n, &mut rng).unwrap();
        for m in s.mean() {
            assert!(m.abs() < 0.02);
        }

        let p = GaussianMrfParams::new(vec![vec![2.0, 0.5], vec![0.5, 1.0]], vec![1.0, -1.0])
            .unwrap();
        let (_, cov) = gaussian_exact_moments(&p).unwrap();
        let s = gaussian_exact_sample(&p, n, &mut rng).unwrap();
        let var = s.variance();
        assert!((var[0] - cov[0][0]).abs() < 0.05);
        assert!((var[1] - cov[1][1]).abs() < 0.05);

        assert!(gaussian_exact_sample(&p, 0, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn params_json_shape() {
        let p = GaussianMrfParams::new(vec![vec![1.0, 0.0], vec![0.0, 2.0]], vec![0.5, 0.0])
            .unwrap();
        let v: serde_json::Value = serde_json::to_value(&p).unwrap();
        assert_eq!(v["A"][1][1], 2.0);
        assert_eq!(v["b"][0], 0.5);
    }
}
