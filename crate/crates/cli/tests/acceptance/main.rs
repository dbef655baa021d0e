//! Acceptance suite. Prints one `[PASS]`, `[FAIL]` or `[SKIP]` line per
//! criterion and exits non-zero when any criterion fails. Pass criterion
//! numbers as arguments to run a subset.

mod confidence;
mod gate;
mod gateway;
mod replay;
mod routing;
mod support;

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use support::{Outcome, Status};

type Criterion = (u32, &'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 10] = [
    (1, "replay reproduction", replay::criterion),
    (2, "monotone improvement over confidence-only", routing::monotone),
    (3, "threshold boundary identities", routing::boundaries),
    (4, "brute-force oracle equivalence", routing::brute_force),
    (5, "syntax-gate soundness corpus", gate::criterion),
    (6, "graceful degradation", routing::degradation),
    (7, "calibration robustness", routing::robustness),
    (8, "gateway contracts", gateway::criterion),
    (9, "confidence metric identities", confidence::criterion),
    (10, "closed loop", closed_loop::criterion),
];

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, run) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        ran += 1;
        let started = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|payload| {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            Outcome::fail(format!("panicked: {msg}"))
        });
        failed += (outcome.status == Status::Fail) as usize;
        println!(
            "[{}] {id:>2}. {name}: {} ({:.1}s)",
            outcome.status.label(),
            outcome.detail,
            started.elapsed().as_secs_f64()
        );
        for note in &outcome.notes {
            println!("        {note}");
        }
    }
    println!("acceptance: {} criteria run, {failed} failed", ran);
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
