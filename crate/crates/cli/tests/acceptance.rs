//! Every acceptance criterion at its pinned tolerance, one line per criterion.

use normforge_cli::verify::{render_report, run_verify, VerifyOptions, CRITERIA};

#[test]
fn acceptance() {
    let records = run_verify(&VerifyOptions::default()).expect("verification plumbing failed");
    eprint!("{}", render_report(&records));
    let mut failed = Vec::new();
    for (i, name) in CRITERIA.iter().enumerate() {
        let c = i + 1;
        let mine: Vec<_> = records.iter().filter(|r| r.criterion == c).collect();
        let pass = !mine.is_empty() && mine.iter().all(|r| r.pass);
        println!("criterion {c:>2} {name}: {} ({} checks)", if pass { "PASS" } else { "FAIL" }, mine.len());
        if !pass {
            failed.push(c);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
