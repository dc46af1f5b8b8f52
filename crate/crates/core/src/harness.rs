//! Experiment driver and report writer.
//!
//! Every workload × mechanism × seed runs once per configuration plus once
//! under Baseline for the speedup reference. Cells run on the rayon pool and
//! each simulation is single threaded, so reports are byte-identical across
//! reruns.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::checker::check_trace;
use crate::config::{ExperimentConfig, OutputSection};
use crate::cost::CostModel;
use crate::engine::ExecMode;
use crate::error::{Error, Result};
use crate::oracle::{enumerate_crashes, OracleOptions, OracleReport};
use crate::scalar::Scalar;
use crate::scenario::{Expectation, Scenario};
use crate::workloads::{run, verify, SystemConfig, WorkloadKind, WorkloadMechanism, WorkloadRun, WorkloadSpec};

pub const REGION_NOTE: &str = "region time: per transaction, from the first primitive submission to its sync-complete \
(Baseline: until the CPU finishes the crash-consistency code); summed over transactions";
pub const WHOLE_APP_NOTE: &str =
    "whole-app time: completion of the run, made of fixed per-operation CPU compute plus memory and NDP time";

/// Fixed columns of the machine-readable table.
pub const COLUMNS: [&str; 16] = [
    "workload",
    "mechanism",
    "configuration",
    "seed",
    "devices",
    "ops",
    "transactions",
    "region_ns",
    "total_ns",
    "region_speedup",
    "total_speedup",
    "inv1",
    "inv2",
    "inv3",
    "verified",
    "matches_baseline",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow<T> {
    pub workload: WorkloadKind,
    pub mechanism: WorkloadMechanism,
    pub configuration: ExecMode,
    pub seed: u64,
    pub devices: usize,
    pub ops: usize,
    pub transactions: u64,
    pub region_ns: T,
    pub total_ns: T,
    pub region_speedup: T,
    pub total_speedup: T,
    /// Checker verdicts for invariants 1 to 3.
    pub invariants: [bool; 3],
    /// Final images hold exactly the effects of the operation stream.
    pub verified: bool,
    /// Final images equal the Baseline run's byte for byte.
    pub matches_baseline: bool,
}

impl<T: Scalar> ReportRow<T> {
    pub fn passed(&self) -> bool {
        self.invariants.iter().all(|&v| v) && self.verified && self.matches_baseline
    }

    fn fields(&self) -> Vec<String> {
        let flag = |b: bool| if b { "pass" } else { "fail" }.to_string();
        vec![
            self.workload.to_string(),
            self.mechanism.to_string(),
            self.configuration.to_string(),
            self.seed.to_string(),
            self.devices.to_string(),
            self.ops.to_string(),
            self.transactions.to_string(),
            format!("{:.3}", self.region_ns.as_f64()),
            format!("{:.3}", self.total_ns.as_f64()),
            format!("{:.4}", self.region_speedup.as_f64()),
            format!("{:.4}", self.total_speedup.as_f64()),
            flag(self.invariants[0]),
            flag(self.invariants[1]),
            flag(self.invariants[2]),
            flag(self.verified),
            flag(self.matches_baseline),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint<T> {
    pub bytes: u64,
    pub cpu_ns: T,
    pub ndp_ns: T,
    pub speedup: T,
}

/// NDP versus CPU copy times for sizes doubling from `min`, ending at `max`.
pub fn copy_sweep<T: Scalar>(cost: &CostModel<T>, min: u64, max: u64) -> Vec<SweepPoint<T>> {
    let mut sizes = Vec::new();
    let mut s = min.max(1);
    while s < max {
        sizes.push(s);
        s = s.saturating_mul(2);
    }
    if max >= min {
        sizes.push(max);
    }
    sizes
        .into_iter()
        .map(|bytes| SweepPoint {
            bytes,
            cpu_ns: cost.cpu_copy_ns(bytes),
            ndp_ns: cost.ndp_copy_ns(bytes),
            speedup: cost.copy_speedup(bytes),
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct OracleOutcome {
    pub path: PathBuf,
    pub report: OracleReport,
    pub expectation: Expectation,
}

impl OracleOutcome {
    pub fn passed(&self) -> bool {
        let expected = match self.expectation {
            Expectation::Recoverable => self.report.recoverable(),
            Expectation::Unrecoverable => !self.report.recoverable(),
        };
        expected && self.report.agrees() && self.report.deterministic()
    }
}

#[derive(Debug, Clone)]
pub struct Report<T> {
    pub rows: Vec<ReportRow<T>>,
    pub sweep: Vec<SweepPoint<T>>,
    pub oracle: Vec<OracleOutcome>,
    pub calibration: String,
}

impl<T: Scalar> Report<T> {
    /// Every checker verdict passed and every scenario met its expectation.
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed()) && self.oracle.iter().all(|o| o.passed())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(COLUMNS).map_err(io)?;
        for r in &self.rows {
            w.write_record(r.fields()).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# nearpm experiment report");
        let _ = writeln!(s, "# calibration: {}", self.calibration);
        let _ = writeln!(s, "# {REGION_NOTE}");
        let _ = writeln!(s, "# {WHOLE_APP_NOTE}");
        let _ = writeln!(s, "# speedups are Baseline time divided by configuration time for the same workload, mechanism and seed");
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<10} {:<14} {:<10} {:>6} {:>14} {:>14} {:>9} {:>9}  verdict",
            "workload", "mechanism", "config", "seed", "region_ns", "total_ns", "region_x", "total_x"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<10} {:<14} {:<10} {:>6} {:>14.1} {:>14.1} {:>9.3} {:>9.3}  {}",
                r.workload.to_string(),
                r.mechanism.to_string(),
                r.configuration.to_string(),
                r.seed,
                r.region_ns.as_f64(),
                r.total_ns.as_f64(),
                r.region_speedup.as_f64(),
                r.total_speedup.as_f64(),
                if r.passed() { "pass" } else { "FAIL" }
            );
        }
        if !self.sweep.is_empty() {
            let _ = writeln!(s);
            let _ = writeln!(s, "{:>8} {:>12} {:>12} {:>8}", "bytes", "cpu_ns", "ndp_ns", "speedup");
            for p in &self.sweep {
                let _ = writeln!(
                    s,
                    "{:>8} {:>12.1} {:>12.1} {:>8.3}",
                    p.bytes,
                    p.cpu_ns.as_f64(),
                    p.ndp_ns.as_f64(),
                    p.speedup.as_f64()
                );
            }
        }
        if !self.oracle.is_empty() {
            let _ = writeln!(s);
            for o in &self.oracle {
                let _ = writeln!(s, "{} [{}]", o.report.summary(), if o.passed() { "pass" } else { "FAIL" });
            }
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "overall: {}", if self.passed() { "pass" } else { "FAIL" });
        s
    }
}

struct Cell {
    spec: WorkloadSpec,
    mode: ExecMode,
}

struct CellRun<T: Scalar> {
    run: WorkloadRun<T>,
    invariants: [bool; 3],
    verified: bool,
}

fn run_cell<T: Scalar>(cfg: &ExperimentConfig<T>, cell: &Cell) -> Result<CellRun<T>> {
    let sys = SystemConfig {
        devices: Some(cfg.devices_for(cell.mode)),
        granularity: cfg.devices.granularity,
        cost: cfg.cost,
        capacity_per_device: cfg.devices.capacity_bytes,
        ..SystemConfig::new(cell.mode)
    };
    let run = run(&cell.spec, &sys)?;
    let check = check_trace(&run.trace)?;
    let invariants = [1, 2, 3].map(|i| check.verdict(i).is_some_and(|v| v.passed()));
    let verified = verify(&run.images, &cell.spec).passed();
    Ok(CellRun {
        run,
        invariants,
        verified,
    })
}

pub fn run_experiment<T: Scalar>(cfg: &ExperimentConfig<T>) -> Result<Report<T>> {
    cfg.validate()?;
    let mut groups = Vec::new();
    for w in &cfg.workloads {
        for &m in &cfg.mechanisms {
            for &seed in &cfg.seeds {
                groups.push(w.spec(m, seed));
            }
        }
    }
    let mut cells = Vec::new();
    for spec in &groups {
        cells.push(Cell {
            spec: spec.clone(),
            mode: ExecMode::Baseline,
        });
        for &mode in cfg.configurations.iter().filter(|m| **m != ExecMode::Baseline) {
            cells.push(Cell {
                spec: spec.clone(),
                mode,
            });
        }
    }
    let runs: Vec<CellRun<T>> = cells.par_iter().map(|c| run_cell(cfg, c)).collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut i = 0;
    while i < cells.len() {
        let base = &runs[i];
        let mut group = vec![i];
        i += 1;
        while i < cells.len() && cells[i].mode != ExecMode::Baseline {
            group.push(i);
            i += 1;
        }
        for &j in &group {
            let (cell, r) = (&cells[j], &runs[j]);
            if !cfg.configurations.contains(&cell.mode) {
                continue;
            }
            let stats = &r.run.stats;
            let ratio = |b: T, x: T| if x > T::zero() { b / x } else { T::one() };
            rows.push(ReportRow {
                workload: cell.spec.name,
                mechanism: cell.spec.mechanism,
                configuration: cell.mode,
                seed: cell.spec.seed,
                devices: cfg.devices_for(cell.mode),
                ops: cell.spec.op_count,
                transactions: stats.transactions,
                region_ns: stats.region_ns,
                total_ns: stats.total_ns,
                region_speedup: ratio(base.run.stats.region_ns, stats.region_ns),
                total_speedup: ratio(base.run.stats.total_ns, stats.total_ns),
                invariants: r.invariants,
                verified: r.verified,
                matches_baseline: r.run.images == base.run.images,
            });
        }
    }
    // order rows by configuration within each group, as listed in the config
    rows.sort_by_key(|r| {
        let w = cfg.workloads.iter().position(|w| w.name == r.workload && w.op_count == r.ops);
        let m = cfg.mechanisms.iter().position(|m| *m == r.mechanism);
        let s = cfg.seeds.iter().position(|s| *s == r.seed);
        let c = cfg.configurations.iter().position(|c| *c == r.configuration);
        (w, m, s, c)
    });

    let sweep = cfg.sweep.map(|s| copy_sweep(&cfg.cost, s.min, s.max)).unwrap_or_default();
    let oracle = cfg.scenarios.par_iter().map(|p| run_scenario(p)).collect::<Result<Vec<_>>>()?;
    Ok(Report {
        rows,
        sweep,
        oracle,
        calibration: cfg.cost.calibration_note(),
    })
}

/// Enumerates every crash of one scenario file.
pub fn run_scenario(path: &Path) -> Result<OracleOutcome> {
    let scenario = Scenario::load(path)?;
    let report = enumerate_crashes(&scenario, &OracleOptions::default())?;
    Ok(OracleOutcome {
        path: path.to_path_buf(),
        expectation: scenario.expect.unwrap_or(Expectation::Recoverable),
        report,
    })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Writes the table and summary to the configured paths and returns the
/// files written.
pub fn emit_report<T: Scalar>(report: &Report<T>, output: &OutputSection) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    if let Some(p) = &output.table {
        write_file(p, &report.to_csv()?)?;
        written.push(p.clone());
    }
    if let Some(p) = &output.summary {
        write_file(p, &report.to_summary())?;
        written.push(p.clone());
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::WorkloadEntry;

    fn small(kinds: &[WorkloadKind]) -> ExperimentConfig<f64> {
        ExperimentConfig {
            workloads: kinds
                .iter()
                .map(|&name| WorkloadEntry {
                    name,
                    op_count: 20,
                    value_size: None,
                    distribution: None,
                    threads: None,
                })
                .collect(),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn empty_matrix_yields_header_only_table() {
        let r = run_experiment(&small(&[])).unwrap();
        assert_eq!(r.to_csv().unwrap(), format!("{}\n", COLUMNS.join(",")));
        assert!(r.passed());
    }

    #[test]
    fn baseline_rows_have_unit_speedup() {
        let r = run_experiment(&small(&[WorkloadKind::Hashmap])).unwrap();
        assert_eq!(r.rows.len(), 12);
        for row in r.rows.iter().filter(|r| r.configuration == ExecMode::Baseline) {
            assert_eq!(row.region_speedup, 1.0);
            assert_eq!(row.total_speedup, 1.0);
        }
        assert!(r.passed(), "{}", r.to_summary());
    }

    #[test]
    fn reruns_are_byte_identical() {
        let cfg = small(&[WorkloadKind::Tatp, WorkloadKind::Skiplist]);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.to_csv().unwrap(), b.to_csv().unwrap());
        assert_eq!(a.to_summary(), b.to_summary());
    }

    #[test]
    fn speedups_are_computed_without_a_baseline_row() {
        let mut cfg = small(&[WorkloadKind::Btree]);
        cfg.configurations = vec![ExecMode::MultiDevice];
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.rows.len(), 3);
        assert!(r.rows.iter().all(|row| row.total_speedup > 1.0));
    }

    #[test]
    fn sweep_doubles_and_ends_at_max() {
        let pts = copy_sweep(&CostModel::<f64>::default(), 64, 16384);
        assert_eq!(pts.len(), 9);
        assert_eq!(pts.last().unwrap().bytes, 16384);
        assert_eq!(copy_sweep(&CostModel::<f64>::default(), 100, 300).iter().map(|p| p.bytes).collect::<Vec<_>>(), [100, 200, 300]);
    }

    #[test]
    fn summary_header_documents_calibration_and_regions() {
        let s = run_experiment(&small(&[])).unwrap().to_summary();
        assert!(s.contains("cpu_copy_ns_per_byte="));
        assert!(s.contains("region time:"));
    }

    #[test]
    fn unwritable_output_is_an_io_fault() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let out = OutputSection {
            table: Some(blocker.join("report.csv")),
            summary: None,
        };
        let r = run_experiment(&small(&[])).unwrap();
        assert!(matches!(emit_report(&r, &out), Err(Error::Io(_))));
    }
}
