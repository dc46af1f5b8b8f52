use std::path::Path;

use nearpm::oracle::{enumerate_crashes, OracleOptions};
use nearpm::scenario::{Expectation, Scenario};

fn corpus() -> Vec<Scenario> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    let mut paths: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    paths.sort();
    paths.iter().map(|p| Scenario::load(p).unwrap()).collect()
}

#[test]
fn every_scenario_meets_its_expectation() {
    let mut bad = Vec::new();
    for s in corpus() {
        let r = enumerate_crashes(&s, &OracleOptions::default()).unwrap();
        println!("{}", r.summary());
        let want = s.expect.unwrap_or(Expectation::Recoverable) == Expectation::Recoverable;
        if r.recoverable() != want || !r.agrees() || !r.deterministic() {
            bad.push(s.name.clone());
        }
    }
    assert!(bad.is_empty(), "{bad:?}");
}
