//! Acceptance suite. Prints one line per criterion; exits nonzero on any failing gating
//! check that is not a documented failure.

use tilt_cli::acceptance::run_criterion;

fn main() {
    let mut unexpected = Vec::new();
    for id in 1..=10 {
        let line = run_criterion(id);
        println!("{line}");
        for c in line.unexpected_failures() {
            unexpected.push(format!("criterion {id}: {} = {:e} ({})", c.name, c.value, c.detail));
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures:");
        for u in &unexpected {
            eprintln!("  {u}");
        }
        std::process::exit(1);
    }
}
