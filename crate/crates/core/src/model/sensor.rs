//! Sensor network localization posterior.
//!
//! Sensor `i` owns coordinates `2i` and `2i + 1`. Anchors are constants.
//! Every measured pair contributes `-(|x_i - x_j| - r_ij)^2 / (2 sigma^2)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{CliquePotential, GraphicalModel, Potential};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementPair {
    Sensors(usize, usize),
    Anchor { sensor: usize, anchor: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub pair: MeasurementPair,
    pub distance: f64,
}

/// Unit vector `(u - v)/|u - v|` and the norm; zero direction when `u == v`.
fn direction(dx: f64, dy: f64) -> (f64, f64, f64) {
    let norm = (dx * dx + dy * dy).sqrt();
    if norm > 0.0 {
        (norm, dx / norm, dy / norm)
    } else {
        (0.0, 0.0, 0.0)
    }
}

#[derive(Debug, Clone, Copy)]
struct SensorPair {
    r: f64,
    inv_var: f64,
}

impl Potential for SensorPair {
    fn log_value(&self, xs: &[f64]) -> f64 {
        let (norm, _, _) = direction(xs[0] - xs[2], xs[1] - xs[3]);
        let res = norm - self.r;
        -0.5 * self.inv_var * res * res
    }

    fn grad(&self, xs: &[f64], out: &mut [f64]) {
        let (norm, ux, uy) = direction(xs[0] - xs[2], xs[1] - xs[3]);
        let c = -self.inv_var * (norm - self.r);
        out[0] = c * ux;
        out[1] = c * uy;
        out[2] = -c * ux;
        out[3] = -c * uy;
    }
}

#[derive(Debug, Clone, Copy)]
struct AnchorPair {
    anchor: [f64; 2],
    r: f64,
    inv_var: f64,
}

impl Potential for AnchorPair {
    fn log_value(&self, xs: &[f64]) -> f64 {
        let (norm, _, _) = direction(xs[0] - self.anchor[0], xs[1] - self.anchor[1]);
        let res = norm - self.r;
        -0.5 * self.inv_var * res * res
    }

    fn grad(&self, xs: &[f64], out: &mut [f64]) {
        let (norm, ux, uy) = direction(xs[0] - self.anchor[0], xs[1] - self.anchor[1]);
        let c = -self.inv_var * (norm - self.r);
        out[0] = c * ux;
        out[1] = c * uy;
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Noisy distances for all pairs closer than `cutoff`.
///
/// Sensor-sensor pairs come first in lexicographic order, then
/// sensor-anchor pairs ordered by sensor then anchor; noise is drawn in
/// that order.
pub fn measure_distances<R: Rng + ?Sized>(
    anchors: &[[f64; 2]],
    sensors: &[[f64; 2]],
    noise: f64,
    cutoff: f64,
    rng: &mut R,
) -> Vec<Measurement> {
    let mut out = Vec::new();
    let mut push = |pair, d: f64, rng: &mut R| {
        let eps: f64 = rng.sample(StandardNormal);
        out.push(Measurement {
            pair,
            distance: d + noise * eps,
        });
    };
    for i in 0..sensors.len() {
        for j in i + 1..sensors.len() {
            let d = dist(sensors[i], sensors[j]);
            if d < cutoff {
                push(MeasurementPair::Sensors(i, j), d, rng);
            }
        }
    }
    for (i, s) in sensors.iter().enumerate() {
        for (a, anchor) in anchors.iter().enumerate() {
            let d = dist(*s, *anchor);
            if d < cutoff {
                push(MeasurementPair::Anchor { sensor: i, anchor: a }, d, rng);
            }
        }
    }
    out
}

/// Posterior over `2 * n_sensors` coordinates given measurements.
pub fn sensor_model(
    anchors: &[[f64; 2]],
    n_sensors: usize,
    measurements: &[Measurement],
    sigma: f64,
) -> Result<GraphicalModel> {
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("sensor sigma must be positive, got {sigma}")));
    }
    let inv_var = 1.0 / (sigma * sigma);
    let mut potentials = Vec::with_capacity(measurements.len());
    for m in measurements {
        match m.pair {
            MeasurementPair::Sensors(i, j) => {
                let (i, j) = (i.min(j), i.max(j));
                if j >= n_sensors || i == j {
                    return Err(Error::InvalidEdge(i, j, "bad sensor pair"));
                }
                potentials.push(CliquePotential::new(
                    vec![2 * i, 2 * i + 1, 2 * j, 2 * j + 1],
                    SensorPair {
                        r: m.distance,
                        inv_var,
                    },
                ));
            }
            MeasurementPair::Anchor { sensor, anchor } => {
                if sensor >= n_sensors || anchor >= anchors.len() {
                    return Err(Error::InvalidEdge(sensor, anchor, "bad sensor-anchor pair"));
                }
                potentials.push(CliquePotential::new(
                    vec![2 * sensor, 2 * sensor + 1],
                    AnchorPair {
                        anchor: anchors[anchor],
                        r: m.distance,
                        inv_var,
                    },
                ));
            }
        }
    }
    GraphicalModel::new(2 * n_sensors, potentials)
}

/// Simulates measurements with noise `sigma` and returns the posterior
/// (likelihood noise also `sigma`) with the measurements.
pub fn build_sensor_model<R: Rng + ?Sized>(
    anchors: &[[f64; 2]],
    sensors: &[[f64; 2]],
    sigma: f64,
    cutoff: f64,
    rng: &mut R,
) -> Result<(GraphicalModel, Vec<Measurement>)> {
    if !(cutoff > 0.0) {
        return Err(Error::Config(format!("cutoff must be positive, got {cutoff}")));
    }
    let ms = measure_distances(anchors, sensors, sigma, cutoff, rng);
    let model = sensor_model(anchors, sensors.len(), &ms, sigma)?;
    Ok((model, ms))
}
