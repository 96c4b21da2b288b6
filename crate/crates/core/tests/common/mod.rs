//! Shared fixtures, oracles and case registries for the integration tests
//! and the acceptance harness.
#![allow(dead_code)]

use std::panic::{catch_unwind, AssertUnwindSafe};

pub type Outcome = Result<(), Box<dyn std::error::Error>>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+).into());
        }
    };
}

pub mod cases;
pub mod grad;

/// A named, self-checking example.
#[derive(Clone, Copy)]
pub struct Case {
    pub group: &'static str,
    pub name: &'static str,
    pub run: fn() -> Outcome,
}

/// Runs every case, catching panics, and returns `(name, reason)` for each
/// failure.
pub fn run_cases(cases: &[Case]) -> Vec<(String, String)> {
    let mut failed = Vec::new();
    for c in cases {
        let label = format!("{}::{}", c.group, c.name);
        match catch_unwind(AssertUnwindSafe(c.run)) {
            Ok(Ok(())) => {}
            Ok(Err(e)) => failed.push((label, e.to_string())),
            Err(p) => {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panic".into());
                failed.push((label, msg));
            }
        }
    }
    failed
}

/// Panics with a readable list when any case fails.
pub fn assert_cases(cases: &[Case]) {
    let failed = run_cases(cases);
    if !failed.is_empty() {
        let lines: Vec<String> = failed.iter().map(|(n, e)| format!("  {n}: {e}")).collect();
        panic!("{} of {} cases failed:\n{}", failed.len(), cases.len(), lines.join("\n"));
    }
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// `|a − b| / max(|a|, |b|)`, with an absolute floor for values near zero.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Ranks with ties sharing their mean rank.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let mean = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = mean;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (Pearson on tie-averaged ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}
