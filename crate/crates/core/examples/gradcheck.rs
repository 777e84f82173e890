//! Finite-difference verification of the engine ops and a tiny ST-GCN++.
//!
//! ```text
//! cargo run --release --example gradcheck -- [seeds]
//! ```

use skelact::verify::{run_suite, SuiteOptions};

fn main() -> skelact::Result<()> {
    let seeds = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(5);
    let results = run_suite(SuiteOptions {
        seeds,
        ..Default::default()
    })?;
    for r in &results {
        println!(
            "{} {:<22} max rel {:.2e} (< {:.0e})  checked {:>5}  skipped {}",
            if r.passed { "ok  " } else { "FAIL" },
            r.name,
            r.max_rel_error,
            r.tolerance,
            r.checked,
            r.skipped
        );
    }
    Ok(())
}
