//! Runs the finite-difference gradient checks for every primitive and block.

use hsi_unfold::verify::{run_suite, Suite};

fn main() -> hsi_unfold::Result<()> {
    let seed = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed"));
    let report = run_suite(Suite::Gradcheck, seed)?;
    println!("{report}");
    std::process::exit(if report.passed() { 0 } else { 1 });
}
