//! Runs every acceptance criterion and prints one line per criterion.
//!
//! Criteria in `KNOWN_FAILURES` still run and print FAIL; they do not fail
//! the target. The README explains why each of them cannot pass.

use std::process::ExitCode;

use sgdk::verify::{run_criterion, VerifyOptions, CRITERIA};

const KNOWN_FAILURES: &[u8] = &[9, 10];

fn main() -> ExitCode {
    let opts = VerifyOptions::default();
    let mut unexpected = Vec::new();
    for id in CRITERIA {
        match run_criterion(id, &opts) {
            Ok(result) => {
                println!("{result}");
                let known = KNOWN_FAILURES.contains(&id);
                if !result.passed && !known {
                    unexpected.push(id);
                }
                if result.passed && known {
                    println!("    listed as a known failure but passed");
                }
            }
            Err(e) => {
                println!("criterion {id:>2} FAIL error: {e}");
                unexpected.push(id);
            }
        }
    }
    if unexpected.is_empty() {
        println!("acceptance: every criterion outside {KNOWN_FAILURES:?} passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: unexpected failures {unexpected:?}");
        ExitCode::FAILURE
    }
}
