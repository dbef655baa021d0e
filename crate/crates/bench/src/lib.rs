//! Shared inputs for the benchmarks.

use fimroute::model::{Completion, TokenLogProb};
use fimroute::records::OutcomeRecord;
use fimroute::syntax::SyntaxStatus;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A completion with `n` tokens whose log-probs lie in [-2, 0].
pub fn completion(n: usize, seed: u64) -> Completion {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Completion {
        text: "x".repeat(n),
        tokens: (0..n)
            .map(|i| TokenLogProb::new(format!("t{i}"), -2.0 * rng.random::<f64>()))
            .collect(),
        ..Completion::default()
    }
}

/// Outcome records with the rough shape of a real calibration split.
pub fn records(n: usize, seed: u64) -> Vec<OutcomeRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let local_passed = rng.random::<f64>() < 0.63;
            let confidence = if local_passed {
                0.5 + 0.5 * rng.random::<f64>()
            } else {
                rng.random::<f64>()
            };
            let syntax = if !local_passed && rng.random::<f64>() < 0.46 {
                SyntaxStatus::Invalid
            } else {
                SyntaxStatus::Valid
            };
            OutcomeRecord {
                task_id: format!("t{i}"),
                local_passed,
                remote_passed: rng.random::<f64>() < 0.715,
                confidence,
                syntax,
                degenerate: rng.random::<f64>() < 0.02,
            }
        })
        .collect()
}
