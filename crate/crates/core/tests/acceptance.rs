//! Acceptance suite: one PASS/FAIL line per criterion, details below each.
//! `LOOPSOUP_ACCEPTANCE_LEVEL=quick` runs the reduced sample sizes;
//! `LOOPSOUP_ACCEPTANCE_ONLY=1,5` restricts the criteria.
//! A failure of a criterion listed in `KNOWN_UNATTAINABLE` is printed but only
//! fails the binary under `LOOPSOUP_ACCEPTANCE_STRICT=1`; any other failure
//! always does.

use std::process::ExitCode;

use loopsoup::validation::{run_criterion, Level, ValidationConfig, CRITERIA, KNOWN_UNATTAINABLE};

fn main() -> ExitCode {
    let level: Level = std::env::var("LOOPSOUP_ACCEPTANCE_LEVEL")
        .ok()
        .map(|s| s.parse().expect("level is quick or full"))
        .unwrap_or(Level::Full);
    let only: Vec<u32> = std::env::var("LOOPSOUP_ACCEPTANCE_ONLY")
        .map(|s| s.split(',').map(|x| x.trim().parse().expect("criterion id")).collect())
        .unwrap_or_else(|_| CRITERIA.collect());
    let strict = std::env::var("LOOPSOUP_ACCEPTANCE_STRICT").is_ok_and(|s| s == "1");
    let cfg = ValidationConfig { level, ..Default::default() };
    println!("acceptance suite, level {level:?}");
    let mut failed = Vec::new();
    let mut known = Vec::new();
    for id in only {
        let report = run_criterion(id, &cfg).expect("known criterion");
        println!("{}", report.line());
        for d in &report.details {
            println!("    {d}");
        }
        if !report.passed {
            if KNOWN_UNATTAINABLE.contains(&id) && !strict {
                println!("    known unattainable at desk scale; see README");
                known.push(id);
            } else {
                failed.push(id);
            }
        }
    }
    if !known.is_empty() {
        println!("acceptance: FAIL on known-unattainable criteria {known:?}");
    }
    if failed.is_empty() {
        println!("acceptance: no unexpected failures");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
