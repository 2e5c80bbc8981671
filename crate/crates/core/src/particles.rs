use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `n` particles in `R^d`, stored row-major (particle `l` is row `l`).
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    n: usize,
    dim: usize,
    data: Vec<f64>,
}

impl ParticleSet {
    pub fn zeros(n: usize, dim: usize) -> Self {
        Self {
            n,
            dim,
            data: vec![0.0; n * dim],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            n: rows.len(),
            dim,
            data,
        })
    }

    pub fn from_flat(n: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * dim {
            return Err(Error::DimensionMismatch {
                expected: n * dim,
                found: data.len(),
            });
        }
        Ok(Self { n, dim, data })
    }

    /// `n` independent draws from `N(0, I_dim)`.
    pub fn standard_normal<R: Rng + ?Sized>(n: usize, dim: usize, rng: &mut R) -> Self {
        let data = (0..n * dim).map(|_| rng.sample(StandardNormal)).collect();
        Self { n, dim, data }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, l: usize) -> &[f64] {
        &self.data[l * self.dim..(l + 1) * self.dim]
    }

    pub fn row_mut(&mut self, l: usize) -> &mut [f64] {
        &mut self.data[l * self.dim..(l + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim.max(1)).take(self.n)
    }

    #[inline]
    pub fn get(&self, l: usize, j: usize) -> f64 {
        self.data[l * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, l: usize, j: usize, v: f64) {
        self.data[l * self.dim + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |l| self.get(l, j))
    }

    /// Particles restricted to the given coordinates, as owned rows.
    pub fn select_columns(&self, cols: &[usize]) -> Vec<Vec<f64>> {
        self.rows()
            .map(|r| cols.iter().map(|&j| r[j]).collect())
            .collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    /// First non-finite entry as `(particle, coordinate)`.
    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        self.data
            .iter()
            .position(|v| !v.is_finite())
            .map(|p| (p / self.dim, p % self.dim))
    }

    pub fn translate(&mut self, delta: &[f64]) {
        for l in 0..self.n {
            for (x, d) in self.row_mut(l).iter_mut().zip(delta) {
                *x += d;
            }
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for r in self.rows() {
            for (acc, v) in m.iter_mut().zip(r) {
                *acc += v;
            }
        }
        let n = self.n.max(1) as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Per-coordinate `mean_l (x_i^l)^2`.
    pub fn second_moment(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for r in self.rows() {
            for (acc, v) in m.iter_mut().zip(r) {
                *acc += v * v;
            }
        }
        let n = self.n.max(1) as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Per-coordinate variance with `1/n` normalization.
    pub fn variance(&self) -> Vec<f64> {
        let mean = self.mean();
        self.second_moment()
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s - m * m).max(0.0))
            .collect()
    }

    pub fn vstack(sets: &[&ParticleSet]) -> Result<ParticleSet> {
        let dim = sets.first().map_or(0, |s| s.dim);
        let mut data = Vec::new();
        let mut n = 0;
        for s in sets {
            if s.dim != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: s.dim,
                });
            }
            data.extend_from_slice(&s.data);
            n += s.n;
        }
        Ok(ParticleSet { n, dim, data })
    }
}

impl Serialize for ParticleSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_rows().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ParticleSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        ParticleSet::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}
