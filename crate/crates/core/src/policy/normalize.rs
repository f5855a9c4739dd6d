use serde::{Deserialize, Serialize};

use crate::error::{ensure_width, Error, Result};

/// Per-dimension min/max map onto `[-1, 1]`.
///
/// A dimension with no spread in the data maps its single value to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

const DEGENERATE_SPAN: f64 = 1e-12;

impl MinMax {
    pub fn identity(dim: usize) -> Self {
        Self {
            min: vec![-1.0; dim],
            max: vec![1.0; dim],
        }
    }

    /// Stats over rows of width `dim`.
    pub fn fit<'a>(dim: usize, rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut min = vec![f64::INFINITY; dim];
        let mut max = vec![f64::NEG_INFINITY; dim];
        let mut seen = false;
        for row in rows {
            ensure_width("normalizer row", dim, row.len())?;
            for (i, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::Input(format!("non-finite value in dimension {i}")));
                }
                min[i] = min[i].min(v);
                max[i] = max[i].max(v);
            }
            seen = true;
        }
        if !seen {
            return Err(Error::Input("cannot fit normalizer on empty data".into()));
        }
        Ok(Self { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    fn center_half(&self, i: usize) -> (f64, f64) {
        let span = self.max[i] - self.min[i];
        let center = 0.5 * (self.max[i] + self.min[i]);
        if span < DEGENERATE_SPAN {
            (center, 1.0)
        } else {
            (center, 0.5 * span)
        }
    }

    /// Normalizes a row whose width is a multiple of `dim` (dimension `j`
    /// of the stats applies to entries `j, j + dim, …`).
    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, &v)| {
                let (c, h) = self.center_half(j % self.dim());
                (v - c) / h
            })
            .collect()
    }

    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, &v)| {
                let (c, h) = self.center_half(j % self.dim());
                v * h + c
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub observation: MinMax,
    pub action: MinMax,
}

impl Normalizer {
    pub fn identity(obs_dim: usize, action_dim: usize) -> Self {
        Self {
            observation: MinMax::identity(obs_dim),
            action: MinMax::identity(action_dim),
        }
    }
}
