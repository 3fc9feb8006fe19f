use std::io::Write;

use gmclab::exec::Execution;
use gmclab::validate::{run_criterion, CRITERIA};

const SEED: u64 = 20_240_611;

#[test]
fn acceptance() {
    let mut out = std::io::stdout();
    let mut failed = Vec::new();
    for id in 1..=CRITERIA {
        let r = run_criterion(id, SEED, Execution::default());
        let _ = writeln!(out, "{}", r.line());
        let _ = out.flush();
        if !r.passed {
            failed.push(id);
        }
    }
    let _ = writeln!(out, "acceptance: {} of {CRITERIA} criteria passed", CRITERIA - failed.len());
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
