//! Exact cosine-distance k-nearest-neighbour classifier.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::cosine_distance;

pub const DEFAULT_K: usize = 11;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnIndex {
    pub k: usize,
    pub dim: usize,
    pub points: Vec<Vec<f64>>,
    /// Route local?
    pub labels: Vec<bool>,
}

impl KnnIndex {
    /// With fewer than `k` points, `k` is lowered to the point count.
    pub fn build(points: Vec<Vec<f64>>, labels: Vec<bool>, k: usize) -> Result<KnnIndex> {
        if points.len() != labels.len() {
            return Err(Error::Validation(format!(
                "{} points but {} labels",
                points.len(),
                labels.len()
            )));
        }
        if points.is_empty() {
            return Err(Error::Argument("cannot build a KNN index from zero points".into()));
        }
        if k == 0 {
            return Err(Error::Argument("k must be >= 1".into()));
        }
        let dim = points[0].len();
        if let Some(bad) = points.iter().position(|p| p.len() != dim) {
            return Err(Error::Validation(format!(
                "point {bad} has dimension {}, expected {dim}",
                points[bad].len()
            )));
        }
        let k = if points.len() < k {
            tracing::warn!(k, points = points.len(), "fewer points than k; lowering k");
            points.len()
        } else {
            k
        };
        Ok(KnnIndex {
            k,
            dim,
            points,
            labels,
        })
    }

    /// Indices of the `k` nearest points, nearest first; equal distances keep index order.
    pub fn neighbors(&self, query: &[f64], k: usize) -> Result<Vec<usize>> {
        if query.len() != self.dim {
            return Err(Error::Validation(format!(
                "query dimension {} does not match index dimension {}",
                query.len(),
                self.dim
            )));
        }
        let mut scored: Vec<(f64, usize)> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| (cosine_distance(query, p), i))
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(scored.into_iter().take(k).map(|(_, i)| i).collect())
    }

    /// Majority vote of the `k` neighbours; ties go remote.
    pub fn predict(&self, query: &[f64]) -> Result<bool> {
        let nn = self.neighbors(query, self.k)?;
        let local = nn.iter().filter(|&&i| self.labels[i]).count();
        Ok(2 * local > nn.len())
    }
}
