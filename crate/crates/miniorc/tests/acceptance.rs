//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero when any fails. Extra arguments filter criteria by name.

use std::panic::{self, AssertUnwindSafe};
use std::time::Instant;

#[path = "acceptance/support.rs"]
mod support;

#[path = "acceptance/drf.rs"]
mod drf;

#[path = "acceptance/capacity.rs"]
mod capacity;

#[path = "acceptance/resilience.rs"]
mod resilience;

#[path = "acceptance/elasticity.rs"]
mod elasticity;

#[path = "acceptance/matchmaking.rs"]
mod matchmaking;

#[path = "acceptance/transfers.rs"]
mod transfers;

#[path = "acceptance/crash.rs"]
mod crash;

#[path = "acceptance/tosca.rs"]
mod tosca;

#[path = "acceptance/iam.rs"]
mod iam;

type Criterion = (&'static str, fn() -> Result<String, String>);

const CRITERIA: &[Criterion] = &[
    ("drf_oracle_equivalence", drf::run),
    ("capacity_safety", capacity::run),
    ("resilience", resilience::run),
    ("elasticity", elasticity::run),
    ("matchmaking_soundness_and_data_awareness", matchmaking::run),
    ("transfer_controller", transfers::run),
    ("crash_consistency", crash::run),
    ("tosca_corpus_and_fuzz", tosca::run),
    ("iam_harmonization", iam::run),
];

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (name, criterion) in CRITERIA {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(criterion))
            .unwrap_or_else(|p| Err(format!("panicked: {}", support::panic_text(&p))));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {name} ({secs:.1} s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1} s): {why}");
            }
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
