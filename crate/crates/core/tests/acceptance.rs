//! Acceptance suite. Each test prints one `[PASS]` or `[FAIL]` line and then
//! asserts the same condition.
//!
//! Lines go straight to the process stdout so they show up in the test log
//! even when the harness captures `print!` output.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nearpm::checker::check_invariant3;
use nearpm::cost::CostModel;
use nearpm::engine::ExecMode;
use nearpm::harness::copy_sweep;
use nearpm::oracle::{enumerate_crashes, Classification, OracleOptions, OracleReport};
use nearpm::primitives::Mechanism;
use nearpm::scenario::{Expectation, Scenario};
use nearpm::translate::{device_of, AddressMappingTable, DevAddr, Geometry, PhysAddr, PoolId, ThreadId};
use nearpm::workloads::*;

fn report(name: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "[{tag}] {name}: {detail}");
    let _ = out.flush();
}

struct CorpusRun {
    entries: Vec<(Scenario, OracleReport)>,
    elapsed: Duration,
}

fn corpus() -> &'static CorpusRun {
    static RUN: OnceLock<CorpusRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|x| x == "toml"))
            .collect();
        paths.sort();
        let t0 = Instant::now();
        let entries = paths
            .iter()
            .map(|p| {
                let s = Scenario::load(p).unwrap();
                let r = enumerate_crashes(&s, &OracleOptions::default()).unwrap();
                (s, r)
            })
            .collect();
        CorpusRun {
            entries,
            elapsed: t0.elapsed(),
        }
    })
}

fn expects_recovery(s: &Scenario) -> bool {
    s.expect.unwrap_or(Expectation::Recoverable) == Expectation::Recoverable
}

#[test]
fn oracle_exhaustion() {
    let run = corpus();
    let correct: Vec<_> = run.entries.iter().filter(|(s, _)| expects_recovery(s)).collect();
    let plans: usize = correct.iter().map(|(_, r)| r.verdicts.len()).sum();
    let inconsistent: Vec<&str> = correct
        .iter()
        .filter(|(_, r)| r.count(Classification::Inconsistent) > 0 || r.verdicts.is_empty())
        .map(|(s, _)| s.name.as_str())
        .collect();
    let oversized: Vec<&str> = correct.iter().filter(|(s, _)| s.ops.len() > 12).map(|(s, _)| s.name.as_str()).collect();
    let mut covered = BTreeSet::new();
    for (s, _) in &correct {
        covered.insert((format!("{:?}", s.mechanism), s.devices.min(2)));
    }
    let mechanisms = [Mechanism::Undo, Mechanism::Redo, Mechanism::Checkpoint, Mechanism::Shadow];
    let missing: Vec<String> = mechanisms
        .iter()
        .flat_map(|m| [1, 2].map(|d| (format!("{m:?}"), d)))
        .filter(|k| !covered.contains(k))
        .map(|(m, d)| format!("{m}/{d}"))
        .collect();
    let limit = Duration::from_secs(300);
    let pass = correct.len() >= 12 && inconsistent.is_empty() && oversized.is_empty() && missing.is_empty() && run.elapsed <= limit;
    report(
        "oracle exhaustion",
        pass,
        &format!(
            "{} correct scenarios, {plans} crash plans, inconsistent in {inconsistent:?}, oversized {oversized:?}, \
             uncovered mechanism/devices {missing:?}, corpus time {:.1?}",
            correct.len(),
            run.elapsed
        ),
    );
    assert!(pass);
}

#[test]
fn checker_oracle_equivalence() {
    let run = corpus();
    let mut false_pos = Vec::new();
    let mut false_neg = Vec::new();
    let mut wrong_expectation = Vec::new();
    for (s, r) in &run.entries {
        match (r.checker.passed(), r.recoverable()) {
            (true, false) => false_neg.push(s.name.as_str()),
            (false, true) => false_pos.push(s.name.as_str()),
            _ => {}
        }
        if r.recoverable() != expects_recovery(s) {
            wrong_expectation.push(s.name.as_str());
        }
    }
    let broken = run.entries.iter().filter(|(s, _)| !expects_recovery(s)).count();
    let pass = broken >= 6 && false_pos.is_empty() && false_neg.is_empty() && wrong_expectation.is_empty();
    report(
        "checker-oracle equivalence",
        pass,
        &format!(
            "{} scenarios ({broken} broken variants), false positives {false_pos:?}, false negatives {false_neg:?}, \
             unexpected classification {wrong_expectation:?}",
            run.entries.len()
        ),
    );
    assert!(pass);
}

#[test]
fn recovery_determinism() {
    let run = corpus();
    let plans: usize = run.entries.iter().map(|(_, r)| r.verdicts.len()).sum();
    let unstable: Vec<&str> = run
        .entries
        .iter()
        .filter(|(_, r)| !r.deterministic())
        .map(|(s, _)| s.name.as_str())
        .collect();
    let pass = unstable.is_empty();
    report(
        "recovery determinism",
        pass,
        &format!("{plans} crash plans over {} scenarios, nondeterministic in {unstable:?}", run.entries.len()),
    );
    assert!(pass);
}

#[test]
fn invariant3_on_md_runs() {
    const RUNS: u64 = 1000;
    let sys = SystemConfig::<f64>::new(ExecMode::MultiDevice);
    let mut failures = Vec::new();
    let mut events = 0u64;
    for i in 0..RUNS {
        let kind = WorkloadKind::ALL[(i % 9) as usize];
        let m = WorkloadMechanism::ALL[((i / 9) % 3) as usize];
        let spec = WorkloadSpec::new(kind, m, 12, 1000 + i);
        let run = run(&spec, &sys).unwrap();
        events += run.stats.events;
        let v = check_invariant3(&run.trace).unwrap();
        if !v.passed() {
            failures.push(format!("{kind}/{m}/seed {}: {v}", 1000 + i));
        }
    }
    let pass = failures.is_empty();
    report(
        "invariant 3 enforcement",
        pass,
        &format!("{RUNS} MD runs, {events} events, {} violating runs {:?}", failures.len(), failures.iter().take(3).collect::<Vec<_>>()),
    );
    assert!(pass);
}

#[test]
fn copy_sweep_trend() {
    let t0 = Instant::now();
    let cost = CostModel::<f64>::default();
    let sweep = copy_sweep(&cost, 64, 16384);
    let monotonic = sweep.windows(2).all(|w| w[1].speedup > w[0].speedup);
    let first = sweep.first().unwrap();
    let last = sweep.last().unwrap();
    let within = |got: f64, want: f64| (got - want).abs() <= 0.3 * want;
    let pass = first.bytes == 64
        && last.bytes == 16384
        && monotonic
        && within(first.speedup, 1.13)
        && within(last.speedup, 5.57);
    report(
        "copy sweep trend",
        pass,
        &format!(
            "{} points, monotonic={monotonic}, 64 B {:.3}x (target 1.13), 16 KiB {:.3}x (target 5.57), {}, {:.1?}",
            sweep.len(),
            first.speedup,
            last.speedup,
            cost.calibration_note(),
            t0.elapsed()
        ),
    );
    assert!(pass);
}

#[test]
fn configuration_ordering() {
    const OPS: usize = 200;
    let mut violations = Vec::new();
    let mut logging_region = BTreeMap::new();
    let mut worst = (f64::INFINITY, String::new());
    for kind in WorkloadKind::ALL {
        for m in WorkloadMechanism::ALL {
            let spec = WorkloadSpec::new(kind, m, OPS, 1);
            let stats: Vec<_> = ExecMode::ALL
                .iter()
                .map(|&mode| run(&spec, &SystemConfig::<f64>::new(mode)).unwrap().stats)
                .collect();
            let base = &stats[0];
            let total = |i: usize| base.total_ns / stats[i].total_ns;
            let (sd, sw, md) = (total(1), total(2), total(3));
            if !(md >= sw && sw >= 1.0 && sd >= 1.0) {
                violations.push(format!("{kind}/{m}: SD {sd:.3} SWSync {sw:.3} MD {md:.3}"));
            }
            let slack = md.min(sw).min(sd);
            if slack < worst.0 {
                worst = (slack, format!("{kind}/{m}"));
            }
            if kind.is_transactional() && m == WorkloadMechanism::Logging {
                logging_region.insert(kind.label(), base.region_ns / stats[3].region_ns);
            }
        }
    }
    let tatp = logging_region["tatp"];
    let tatp_smallest = logging_region.iter().all(|(k, &v)| *k == "tatp" || tatp < v);
    let pass = violations.is_empty() && tatp_smallest;
    report(
        "configuration ordering",
        pass,
        &format!(
            "27 cells by whole-run speedup, violations {violations:?}, lowest speedup {:.3} at {}, \
             MD logging-region speedup {logging_region:.2?}",
            worst.0, worst.1
        ),
    );
    assert!(pass);
}

#[test]
fn equivalence_suite() {
    const SEEDS: u64 = 30;
    const OPS: usize = 100;
    let mut mismatches = Vec::new();
    let mut runs = 0;
    for kind in WorkloadKind::ALL {
        for seed in 1..=SEEDS {
            let mut reference = None;
            for m in WorkloadMechanism::ALL {
                let spec = WorkloadSpec::new(kind, m, OPS, seed);
                for mode in ExecMode::ALL {
                    let r = run(&spec, &SystemConfig::<f64>::new(mode)).unwrap();
                    runs += 1;
                    let v = verify(&r.images, &spec);
                    if !v.passed() {
                        mismatches.push(format!("{kind}/{m}/{mode}/seed {seed}: {:?}", v.failures));
                        continue;
                    }
                    match &reference {
                        None => reference = Some(r.images),
                        Some(img) if *img != r.images => {
                            mismatches.push(format!("{kind}/{m}/{mode}/seed {seed}: image differs"));
                        }
                        _ => {}
                    }
                }
            }
        }
    }
    let pass = mismatches.is_empty();
    report(
        "equivalence suite",
        pass,
        &format!(
            "{runs} runs ({SEEDS} seeds x 9 workloads x 3 mechanisms x 4 configurations), {} mismatches {:?}",
            mismatches.len(),
            mismatches.iter().take(3).collect::<Vec<_>>()
        ),
    );
    assert!(pass);
}

#[test]
fn translation_properties() {
    const SAMPLES: usize = 10_000;
    const DEVICES: usize = 2;
    let mut problems = Vec::new();
    for granularity in [256u64, 4096, 65536] {
        let mut rng = ChaCha8Rng::seed_from_u64(granularity);
        let span = granularity * 512;
        let geometry = Geometry::new(DEVICES, granularity, span, span).unwrap();

        let mut table = AddressMappingTable::new();
        let mut pools = Vec::new();
        let mut next_phys = 0u64;
        for p in 0..8u16 {
            let size = granularity * rng.gen_range(1..=48);
            let base_virt = (p as u64 + 1) << 40 | rng.gen_range(0..1u64 << 20) * 8;
            table.register_pool(PoolId(p), None, base_virt, next_phys, size).unwrap();
            pools.push((PoolId(p), base_virt, next_phys, size));
            next_phys += size;
        }
        assert!(next_phys <= geometry.striped_total());
        let restored = AddressMappingTable::decode(&table.encode(), |id| pools[id.0 as usize].1).unwrap();

        let mut seen: BTreeMap<u64, (PoolId, u64)> = BTreeMap::new();
        for _ in 0..SAMPLES {
            let (pool, base_virt, base_phys, size) = pools[rng.gen_range(0..pools.len())];
            let vaddr = base_virt + rng.gen_range(0..size);
            let thread = ThreadId(rng.gen_range(0..64));
            let PhysAddr(phys) = table.translate(pool, thread, vaddr).unwrap();
            if phys < base_phys || phys >= base_phys + size {
                problems.push(format!("g={granularity}: {pool:?}+{vaddr:#x} maps outside its pool"));
            }
            if let Some(&prev) = seen.get(&phys) {
                if prev != (pool, vaddr) {
                    problems.push(format!("g={granularity}: {prev:?} and {:?} share {phys:#x}", (pool, vaddr)));
                }
            }
            seen.insert(phys, (pool, vaddr));

            let switched = ThreadId(rng.gen_range(64..128));
            if table.translate(pool, switched, vaddr).ok() != Some(PhysAddr(phys))
                || restored.translate(pool, switched, vaddr).ok() != Some(PhysAddr(phys))
            {
                problems.push(format!("g={granularity}: {pool:?}+{vaddr:#x} unstable across context switch"));
            }

            let loc = geometry.locate(PhysAddr(phys));
            if loc.device != device_of(phys, granularity, DEVICES) || geometry.global(loc) != Some(PhysAddr(phys)) {
                problems.push(format!("g={granularity}: byte {phys:#x} not owned by exactly one device"));
            }
        }

        let mut owners = vec![0u8; geometry.striped_total() as usize];
        for (_, _, base_phys, size) in &pools {
            let start = base_phys + rng.gen_range(0..granularity.min(*size));
            let len = base_phys + size - start;
            let mut covered = 0u64;
            for piece in geometry.chunks(PhysAddr(start), len) {
                for off in 0..piece.len {
                    let local = piece.start + off;
                    let PhysAddr(p) = geometry
                        .global(DevAddr {
                            device: piece.device,
                            local,
                        })
                        .unwrap();
                    if p != start + covered || device_of(p, granularity, DEVICES) != piece.device {
                        problems.push(format!("g={granularity}: chunk byte {p:#x} out of order or on the wrong device"));
                    }
                    owners[p as usize] += 1;
                    covered += 1;
                }
            }
            if covered != len {
                problems.push(format!("g={granularity}: chunks cover {covered} of {len} bytes"));
            }
        }
        let multiply = owners.iter().filter(|&&n| n > 1).count();
        if multiply > 0 {
            problems.push(format!("g={granularity}: {multiply} bytes covered more than once"));
        }
    }
    problems.dedup();
    let pass = problems.is_empty();
    report(
        "translation properties",
        pass,
        &format!(
            "{SAMPLES} translations at each of 256 B, 4 KiB, 64 KiB, problems {:?}",
            problems.iter().take(3).collect::<Vec<_>>()
        ),
    );
    assert!(pass);
}
