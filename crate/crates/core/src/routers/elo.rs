//! ELO ratings for the local/remote pair, global and per-neighbourhood.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::cosine_distance;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EloSettings {
    pub initial_rating: f64,
    pub k_factor: f64,
    /// Calibration tasks in a query's neighbourhood.
    pub neighbors: usize,
    /// Weight of the global rating in the blend; the neighbourhood gets the rest.
    pub global_weight: f64,
    /// Half-width of the ternary abstain band, in rating points.
    pub margin: f64,
}

impl Default for EloSettings {
    fn default() -> Self {
        EloSettings {
            initial_rating: 1000.0,
            k_factor: 32.0,
            neighbors: 11,
            global_weight: 0.5,
            margin: 16.0,
        }
    }
}

impl EloSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_factor > 0.0) || !self.initial_rating.is_finite() {
            return Err(Error::Validation("ELO k_factor must be > 0 and initial_rating finite".into()));
        }
        if !(0.0..=1.0).contains(&self.global_weight) {
            return Err(Error::Validation(format!(
                "ELO global_weight must lie in [0, 1], got {}",
                self.global_weight
            )));
        }
        if !(self.margin >= 0.0) {
            return Err(Error::Validation("ELO margin must be >= 0".into()));
        }
        Ok(())
    }
}

/// One calibration match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Match {
    pub local_passed: bool,
    pub remote_passed: bool,
}

impl Match {
    /// Local's score: 1 win, 0 loss, 0.5 draw.
    pub fn local_score(self) -> f64 {
        match (self.local_passed, self.remote_passed) {
            (true, false) => 1.0,
            (false, true) => 0.0,
            _ => 0.5,
        }
    }
}

pub fn expected_score(rating: f64, opponent: f64) -> f64 {
    1.0 / (1.0 + 10f64.powf((opponent - rating) / 400.0))
}

/// `(local, remote)` after a single pass over `matches` in order.
pub fn rate<'a>(matches: impl IntoIterator<Item = &'a Match>, settings: &EloSettings) -> (f64, f64) {
    let (mut local, mut remote) = (settings.initial_rating, settings.initial_rating);
    for m in matches {
        let expected = expected_score(local, remote);
        let delta = settings.k_factor * (m.local_score() - expected);
        local += delta;
        remote -= delta;
    }
    (local, remote)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EloModel {
    pub settings: EloSettings,
    pub global_local: f64,
    pub global_remote: f64,
    /// Calibration matches in task order, with their embeddings.
    pub matches: Vec<Match>,
    pub embeddings: Vec<Vec<f64>>,
}

impl EloModel {
    pub fn fit(matches: Vec<Match>, embeddings: Vec<Vec<f64>>, settings: EloSettings) -> Result<EloModel> {
        settings.validate()?;
        if matches.len() != embeddings.len() {
            return Err(Error::Validation(format!(
                "{} matches but {} embeddings",
                matches.len(),
                embeddings.len()
            )));
        }
        let (global_local, global_remote) = rate(&matches, &settings);
        Ok(EloModel {
            settings,
            global_local,
            global_remote,
            matches,
            embeddings,
        })
    }

    /// Blended `(local, remote)` ratings for a query embedding. Neighbourhood
    /// matches are replayed in calibration order. Without stored matches the
    /// global ratings are returned.
    pub fn ratings_for(&self, query: &[f64]) -> (f64, f64) {
        if self.matches.is_empty() || self.settings.neighbors == 0 {
            return (self.global_local, self.global_remote);
        }
        let mut scored: Vec<(f64, usize)> = self
            .embeddings
            .iter()
            .enumerate()
            .map(|(i, e)| (cosine_distance(query, e), i))
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut nearest: Vec<usize> = scored
            .into_iter()
            .take(self.settings.neighbors)
            .map(|(_, i)| i)
            .collect();
        nearest.sort_unstable();
        let (nl, nr) = rate(nearest.iter().map(|&i| &self.matches[i]), &self.settings);
        let w = self.settings.global_weight;
        (
            w * self.global_local + (1.0 - w) * nl,
            w * self.global_remote + (1.0 - w) * nr,
        )
    }

    /// Binary: strictly higher local rating keeps local. Ternary: a rating
    /// gap within the margin also keeps local.
    pub fn prefers_local(&self, query: &[f64], ternary: bool) -> bool {
        let (local, remote) = self.ratings_for(query);
        if ternary && (local - remote).abs() <= self.settings.margin {
            return true;
        }
        local > remote
    }
}
