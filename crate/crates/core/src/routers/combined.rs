//! KNN over z-scored static features concatenated with the task embedding.

use serde::{Deserialize, Serialize};

use super::knn::KnnIndex;
use crate::error::{Error, Result};
use crate::features::StaticFeatures;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedIndex {
    pub means: [f64; 4],
    /// Zero spreads are stored as 1 so constant features map to 0.
    pub stds: [f64; 4],
    pub knn: KnnIndex,
}

impl CombinedIndex {
    pub fn build(
        features: &[StaticFeatures],
        embeddings: &[Vec<f64>],
        labels: Vec<bool>,
        k: usize,
    ) -> Result<CombinedIndex> {
        if features.len() != embeddings.len() {
            return Err(Error::Validation(format!(
                "{} feature rows but {} embeddings",
                features.len(),
                embeddings.len()
            )));
        }
        if features.is_empty() {
            return Err(Error::Argument("cannot build a combined index from zero points".into()));
        }
        let n = features.len() as f64;
        let rows: Vec<[f64; 4]> = features.iter().map(StaticFeatures::to_array).collect();
        let mut means = [0.0; 4];
        let mut stds = [0.0; 4];
        for j in 0..4 {
            means[j] = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / n;
            stds[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        let points = rows
            .iter()
            .zip(embeddings)
            .map(|(r, e)| concat(r, e, &means, &stds))
            .collect();
        Ok(CombinedIndex {
            means,
            stds,
            knn: KnnIndex::build(points, labels, k)?,
        })
    }

    pub fn predict(&self, features: &StaticFeatures, embedding: &[f64]) -> Result<bool> {
        self.knn
            .predict(&concat(&features.to_array(), embedding, &self.means, &self.stds))
    }
}

fn concat(row: &[f64; 4], embedding: &[f64], means: &[f64; 4], stds: &[f64; 4]) -> Vec<f64> {
    let mut v: Vec<f64> = (0..4).map(|j| (row[j] - means[j]) / stds[j]).collect();
    v.extend_from_slice(embedding);
    v
}
