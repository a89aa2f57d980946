//! Full acceptance suite at the standard tier: one line per criterion.

use std::io::Write;

use ymflow_core::verify::{run_all, VerifyConfig};

#[test]
fn acceptance() {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(4);
    let cfg = VerifyConfig { threads, ..VerifyConfig::default() };
    let report = run_all(&cfg);
    // summary lines bypass the test harness capture; notes show on failure
    let mut out = std::io::stdout().lock();
    for c in &report.criteria {
        writeln!(out, "{}", c.summary()).unwrap();
        for n in &c.notes {
            println!("    {} = {:.6e}", n.name, n.value);
        }
    }
    drop(out);
    assert_eq!(report.criteria.len(), 11);
    let failed: Vec<u8> = report.failed().iter().map(|c| c.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
