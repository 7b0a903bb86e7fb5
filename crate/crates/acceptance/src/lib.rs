//! Reporting for the acceptance suite. Each criterion runs once, is timed
//! against its runtime limit, and prints a single `PASS`/`FAIL` line.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

#[derive(Debug, Clone)]
pub struct Outcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl Outcome {
    pub fn line(&self) -> String {
        format!(
            "{} {:<28} {:>8.1}s  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.elapsed.as_secs_f64(),
            self.detail
        )
    }
}

/// Runs `check`, which returns `Ok(detail)` when the criterion holds and
/// `Err(detail)` when it does not. Panics count as failures, and so does
/// exceeding `limit`.
pub fn run<F>(name: &'static str, limit: Option<Duration>, check: F) -> Outcome
where
    F: FnOnce() -> Result<String, String>,
{
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(check));
    let elapsed = start.elapsed();
    let (mut passed, mut detail) = match result {
        Ok(Ok(d)) => (true, d),
        Ok(Err(d)) => (false, d),
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            (false, format!("panic: {msg}"))
        }
    };
    if let Some(limit) = limit {
        if elapsed > limit {
            passed = false;
            detail = format!("{detail}; over the {}s limit", limit.as_secs());
        }
    }
    let outcome = Outcome { name, passed, detail, elapsed };
    println!("{}", outcome.line());
    outcome
}

/// `Ok(detail)` when `ok`, `Err(detail)` otherwise.
pub fn verdict(ok: bool, detail: String) -> Result<String, String> {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}
