//! Finite-difference gradient checks for every layer, both residual units and a
//! small network, in f64.
//!
//!     cargo run --release --example gradcheck [-- seed]

use wrsn::verify::{gradient_suite, CheckOptions};

fn main() -> wrsn::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let start = std::time::Instant::now();
    let reports = gradient_suite(seed, None, CheckOptions::default())?;
    for r in &reports {
        println!(
            "{:<40} probes {:>3}  max rel err {:.2e}  {}",
            r.name,
            r.probes,
            r.max_rel_error,
            if r.passed { "ok" } else { "FAIL" }
        );
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    println!("{} checks, {failed} failed, {:.1}s", reports.len(), start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
    Ok(())
}
