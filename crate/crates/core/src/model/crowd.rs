//! Bias-variance crowdsourcing model `r_ij = x_i + b_j + sqrt(nu_j) eps`.
//!
//! Inference runs on `theta = [x_free, b, eta]` with `eta_j = log nu_j`.
//! Control items have known `x`, which enters their likelihood terms as a
//! constant. The inverse-gamma prior on `nu` is rewritten in `eta` space
//! with its log-Jacobian: `-alpha eta - beta exp(-eta)`.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use super::{CliquePotential, GraphicalModel, Potential};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrowdHyper {
    pub sigma_x: f64,
    pub sigma_b: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for CrowdHyper {
    fn default() -> Self {
        Self {
            sigma_x: 5.0,
            sigma_b: 5.0,
            alpha: 3.0,
            beta: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrowdAssignment {
    pub item: usize,
    pub worker: usize,
    pub label: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrowdData {
    pub n_items: usize,
    pub n_workers: usize,
    pub assignments: Vec<CrowdAssignment>,
    /// Known value for control items, `None` for items to infer.
    pub control: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrowdTruth {
    pub x: Vec<f64>,
    pub b: Vec<f64>,
    pub nu: Vec<f64>,
}

/// Where each unknown lives in `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrowdLayout {
    /// Item id of each free-item coordinate.
    pub free_items: Vec<usize>,
    /// Coordinate of each item, `None` for controls.
    pub item_index: Vec<Option<usize>>,
    pub n_workers: usize,
}

impl CrowdLayout {
    pub fn n_free(&self) -> usize {
        self.free_items.len()
    }

    pub fn bias_index(&self, worker: usize) -> usize {
        self.n_free() + worker
    }

    pub fn log_var_index(&self, worker: usize) -> usize {
        self.n_free() + self.n_workers + worker
    }

    pub fn dim(&self) -> usize {
        self.n_free() + 2 * self.n_workers
    }

    /// Coordinate range holding `eta`.
    pub fn log_var_range(&self) -> std::ops::Range<usize> {
        self.n_free() + self.n_workers..self.dim()
    }

    /// `theta` for given per-item/per-worker values.
    pub fn pack(&self, x: &[f64], b: &[f64], nu: &[f64]) -> Vec<f64> {
        let mut theta: Vec<f64> = self.free_items.iter().map(|&i| x[i]).collect();
        theta.extend_from_slice(b);
        theta.extend(nu.iter().map(|v| v.ln()));
        theta
    }
}

#[derive(Debug, Clone)]
pub struct CrowdModel {
    pub model: GraphicalModel,
    pub layout: CrowdLayout,
}

#[derive(Debug, Clone, Copy)]
struct GaussPrior {
    inv_var: f64,
}

impl Potential for GaussPrior {
    fn log_value(&self, xs: &[f64]) -> f64 {
        -0.5 * self.inv_var * xs[0] * xs[0]
    }

    fn grad(&self, xs: &[f64], out: &mut [f64]) {
        out[0] = -self.inv_var * xs[0];
    }
}

#[derive(Debug, Clone, Copy)]
struct LogVarPrior {
    alpha: f64,
    beta: f64,
}

impl Potential for LogVarPrior {
    fn log_value(&self, xs: &[f64]) -> f64 {
        -self.alpha * xs[0] - self.beta * (-xs[0]).exp()
    }

    fn grad(&self, xs: &[f64], out: &mut [f64]) {
        out[0] = -self.alpha + self.beta * (-xs[0]).exp();
    }
}

/// Label likelihood with free item: scope `[x_i, b_j, eta_j]`.
#[derive(Debug, Clone, Copy)]
struct FreeLabel {
    label: f64,
}

impl Potential for FreeLabel {
    fn log_value(&self, xs: &[f64]) -> f64 {
        let res = self.label - xs[0] - xs[1];
        -0.5 * xs[2] - 0.5 * res * res * (-xs[2]).exp()
    }

    fn grad(&self, xs: &[f64], out: &mut [f64]) {
        let res = self.label - xs[0] - xs[1];
        let prec = (-xs[2]).exp();
        out[0] = res * prec;
        out[1] = res * prec;
        out[2] = -0.5 + 0.5 * res * res * prec;
    }
}

/// Label likelihood with a control item: scope `[b_j, eta_j]`.
#[derive(Debug, Clone, Copy)]
struct ControlLabel {
    label: f64,
    x: f64,
}

impl Potential for ControlLabel {
    fn log_value(&self, xs: &[f64]) -> f64 {
        let res = self.label - self.x - xs[0];
        -0.5 * xs[1] - 0.5 * res * res * (-xs[1]).exp()
    }

    fn grad(&self, xs: &[f64], out: &mut [f64]) {
        let res = self.label - self.x - xs[0];
        let prec = (-xs[1]).exp();
        out[0] = res * prec;
        out[1] = -0.5 + 0.5 * res * res * prec;
    }
}

pub fn build_crowdsourcing_model(data: &CrowdData, hyper: &CrowdHyper) -> Result<CrowdModel> {
    if !(hyper.sigma_x > 0.0 && hyper.sigma_b > 0.0 && hyper.alpha > 0.0 && hyper.beta > 0.0) {
        return Err(Error::Config("crowdsourcing hyperparameters must be positive".into()));
    }
    if data.control.len() != data.n_items {
        return Err(Error::DimensionMismatch {
            expected: data.n_items,
            found: data.control.len(),
        });
    }
    let mut per_worker = vec![0usize; data.n_workers];
    for a in &data.assignments {
        if a.item >= data.n_items {
            return Err(Error::IndexOutOfRange {
                index: a.item,
                dim: data.n_items,
            });
        }
        if a.worker >= data.n_workers {
            return Err(Error::IndexOutOfRange {
                index: a.worker,
                dim: data.n_workers,
            });
        }
        per_worker[a.worker] += 1;
    }
    if let Some(j) = per_worker.iter().position(|&c| c == 0) {
        return Err(Error::UnassignedWorker(j));
    }

    let mut free_items = Vec::new();
    let mut item_index = vec![None; data.n_items];
    for (i, c) in data.control.iter().enumerate() {
        if c.is_none() {
            item_index[i] = Some(free_items.len());
            free_items.push(i);
        }
    }
    let layout = CrowdLayout {
        free_items,
        item_index,
        n_workers: data.n_workers,
    };

    let mut potentials = Vec::new();
    let x_prior = GaussPrior {
        inv_var: 1.0 / (hyper.sigma_x * hyper.sigma_x),
    };
    for k in 0..layout.n_free() {
        potentials.push(CliquePotential::new(vec![k], x_prior));
    }
    let b_prior = GaussPrior {
        inv_var: 1.0 / (hyper.sigma_b * hyper.sigma_b),
    };
    for j in 0..data.n_workers {
        potentials.push(CliquePotential::new(vec![layout.bias_index(j)], b_prior));
    }
    for j in 0..data.n_workers {
        potentials.push(CliquePotential::new(
            vec![layout.log_var_index(j)],
            LogVarPrior {
                alpha: hyper.alpha,
                beta: hyper.beta,
            },
        ));
    }
    for a in &data.assignments {
        let (bj, ej) = (layout.bias_index(a.worker), layout.log_var_index(a.worker));
        match (layout.item_index[a.item], data.control[a.item]) {
            (Some(xi), _) => potentials.push(CliquePotential::new(
                vec![xi, bj, ej],
                FreeLabel { label: a.label },
            )),
            (None, Some(x)) => potentials.push(CliquePotential::new(
                vec![bj, ej],
                ControlLabel { label: a.label, x },
            )),
            (None, None) => unreachable!("items are either free or controls"),
        }
    }
    let model = GraphicalModel::new(layout.dim(), potentials)?;
    Ok(CrowdModel { model, layout })
}

/// Synthetic data from the bias-variance model.
///
/// Each item gets `1..=max_workers_per_item` distinct random workers; workers
/// below `min_items_per_worker` then receive extra random items. `n_controls`
/// items are revealed as controls.
pub fn generate_crowd_data<R: Rng + ?Sized>(
    n_items: usize,
    n_workers: usize,
    n_controls: usize,
    max_workers_per_item: usize,
    min_items_per_worker: usize,
    hyper: &CrowdHyper,
    rng: &mut R,
) -> Result<(CrowdData, CrowdTruth)> {
    if n_workers == 0 || n_items == 0 || max_workers_per_item == 0 {
        return Err(Error::Config("crowd sizes must be positive".into()));
    }
    if n_controls > n_items || min_items_per_worker > n_items {
        return Err(Error::Config("crowd control/assignment counts exceed items".into()));
    }
    let x_dist = Normal::new(0.0, hyper.sigma_x).map_err(|e| Error::Config(e.to_string()))?;
    let b_dist = Normal::new(0.0, hyper.sigma_b).map_err(|e| Error::Config(e.to_string()))?;
    let g_dist =
        Gamma::new(hyper.alpha, 1.0 / hyper.beta).map_err(|e| Error::Config(e.to_string()))?;
    let x: Vec<f64> = (0..n_items).map(|_| x_dist.sample(rng)).collect();
    let b: Vec<f64> = (0..n_workers).map(|_| b_dist.sample(rng)).collect();
    let nu: Vec<f64> = (0..n_workers).map(|_| 1.0 / g_dist.sample(rng)).collect();

    let mut assigned = vec![vec![false; n_workers]; n_items];
    let max_k = max_workers_per_item.min(n_workers);
    for row in assigned.iter_mut() {
        let k = rng.random_range(1..=max_k);
        for j in index::sample(rng, n_workers, k) {
            row[j] = true;
        }
    }
    for j in 0..n_workers {
        let have = (0..n_items).filter(|&i| assigned[i][j]).count();
        if have < min_items_per_worker {
            let open: Vec<usize> = (0..n_items).filter(|&i| !assigned[i][j]).collect();
            for k in index::sample(rng, open.len(), min_items_per_worker - have) {
                assigned[open[k]][j] = true;
            }
        }
    }

    let mut assignments = Vec::new();
    for (i, row) in assigned.iter().enumerate() {
        for (j, &on) in row.iter().enumerate() {
            if on {
                let eps: f64 = rng.sample(rand_distr::StandardNormal);
                assignments.push(CrowdAssignment {
                    item: i,
                    worker: j,
                    label: x[i] + b[j] + nu[j].sqrt() * eps,
                });
            }
        }
    }

    let mut control = vec![None; n_items];
    for i in index::sample(rng, n_items, n_controls) {
        control[i] = Some(x[i]);
    }
    Ok((
        CrowdData {
            n_items,
            n_workers,
            assignments,
            control,
        },
        CrowdTruth { x, b, nu },
    ))
}
