use fimroute::confidence::{score_all_mean, score_first_k, score_min_token};
use fimroute::model::{Completion, TokenLogProb};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::support::{Failures, Outcome};

const TOL: f64 = 1e-12;

fn completion(probs: &[f64]) -> Completion {
    Completion {
        tokens: probs
            .iter()
            .enumerate()
            .map(|(i, p)| TokenLogProb::new(format!("t{i}"), p.ln()))
            .collect(),
        ..Completion::default()
    }
}

pub fn criterion() -> Outcome {
    let mut fails = Failures::default();
    let mut expect = |name: &str, got: f64, want: f64| {
        if (got - want).abs() > TOL {
            fails.push(format!("{name}: got {got}, want {want}"));
        }
    };

    let c = score_first_k(&completion(&[0.9, 0.8, 0.7]), 3).unwrap();
    expect("first_k(0.9,0.8,0.7)", c.value, (0.9f64 * 0.8 * 0.7).cbrt());
    let empty = score_first_k(&completion(&[]), 3).unwrap();
    expect("first_k([])", empty.value, 0.0);
    expect("first_k([]).k_used", empty.k_used as f64, 0.0);
    let one = score_first_k(&completion(&[0.5]), 3).unwrap();
    expect("first_k(0.5)", one.value, 0.5);
    expect("first_k(0.5).k_used", one.k_used as f64, 1.0);

    expect("min(0.9,0.2,0.8)", score_min_token(&completion(&[0.9, 0.2, 0.8])).unwrap().value, 0.2);
    let uniform = completion(&[0.6; 5]);
    expect("min(0.6 x5)", score_min_token(&uniform).unwrap().value, 0.6);
    expect("all_mean(0.6 x5)", score_all_mean(&uniform).unwrap().value, 0.6);
    expect("min([])", score_min_token(&completion(&[])).unwrap().value, 0.0);

    expect("all_mean(0.9,0.4)", score_all_mean(&completion(&[0.9, 0.4])).unwrap().value, 0.6);
    expect("all_mean(0.3)", score_all_mean(&completion(&[0.3])).unwrap().value, 0.3);
    expect("all_mean(1.0 x50)", score_all_mean(&completion(&[1.0; 50])).unwrap().value, 1.0);

    let examples_ok = fails.is_empty();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut ordering = 0usize;
    const SEQUENCES: usize = 10_000;
    for i in 0..SEQUENCES {
        let len = rng.random_range(1..=60);
        let probs: Vec<f64> = (0..len).map(|_| rng.random_range(1e-9..=1.0)).collect();
        let c = completion(&probs);
        let min = score_min_token(&c).unwrap().value;
        let all = score_all_mean(&c).unwrap().value;
        let first = score_first_k(&c, 3).unwrap().value;
        if min <= all + TOL && min <= first + TOL {
            ordering += 1;
        } else {
            fails.push(format!("sequence {i}: min {min} > mean ({all}, first-k {first})"));
        }
    }
    Outcome::check(
        fails.is_empty(),
        if fails.is_empty() {
            format!("formula examples exact to 1e-12; min <= geometric mean on {ordering}/{SEQUENCES} random sequences")
        } else {
            format!("examples ok: {examples_ok}; {}", fails.summary())
        },
    )
}
