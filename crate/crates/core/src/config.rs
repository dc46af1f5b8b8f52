//! Experiment configuration files.
//!
//! Configurations are TOML documents. Every error names the offending field
//! as a dotted path such as `workloads[1].op_count`.
//!
//! ```toml
//! configurations = ["Baseline", "SD", "MD_SWSync", "MD"]
//! mechanisms = ["logging", "checkpointing", "shadow_paging"]
//! seeds = [1, 2]
//! scenarios = ["scenarios/undo-two-devices.toml"]
//!
//! [devices]
//! count = 2            # devices used by the multi-device configurations
//! granularity = 4096   # interleave granularity in bytes
//!
//! [cost]               # any CostModel field; omitted fields keep defaults
//! sw_sync_poll_ns = 100.0
//!
//! [sweep]
//! min = 64
//! max = 16384
//!
//! [output]
//! table = "report.csv"
//! summary = "report.txt"
//!
//! [[workloads]]
//! name = "tpcc"
//! op_count = 200
//! ```
//!
//! When `cost.cpu_copy_ns_per_byte` is absent it is recalibrated against the
//! remaining cost parameters.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cost::{CostModel, CALIBRATION_BYTES, CALIBRATION_SPEEDUP};
use crate::engine::ExecMode;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::workloads::{required_capacity, KeyDistribution, WorkloadKind, WorkloadMechanism, WorkloadSpec};

/// Page size used by every workload pool.
pub const WORKLOAD_PAGE: u64 = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSection {
    /// Devices in the multi-device configurations. Baseline and SD use one.
    #[serde(default = "default_device_count")]
    pub count: usize,
    #[serde(default = "default_granularity")]
    pub granularity: u64,
    /// PM bytes per device; sized per workload when absent.
    #[serde(default)]
    pub capacity_bytes: Option<u64>,
}

fn default_device_count() -> usize {
    2
}

fn default_granularity() -> u64 {
    WORKLOAD_PAGE
}

impl Default for DeviceSection {
    fn default() -> Self {
        Self {
            count: default_device_count(),
            granularity: default_granularity(),
            capacity_bytes: None,
        }
    }
}

/// One workload of the matrix; it runs under every listed mechanism,
/// configuration and seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadEntry {
    pub name: WorkloadKind,
    #[serde(default = "default_op_count")]
    pub op_count: usize,
    #[serde(default)]
    pub value_size: Option<u64>,
    #[serde(default)]
    pub distribution: Option<KeyDistribution>,
    #[serde(default)]
    pub threads: Option<usize>,
}

fn default_op_count() -> usize {
    200
}

impl WorkloadEntry {
    pub fn spec(&self, mechanism: WorkloadMechanism, seed: u64) -> WorkloadSpec {
        let mut s = WorkloadSpec::new(self.name, mechanism, self.op_count, seed);
        if let Some(v) = self.value_size {
            s.value_size = v;
        }
        s.distribution = self.distribution;
        s.threads = self.threads;
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub min: u64,
    pub max: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Machine-readable table, one row per cell.
    #[serde(default)]
    pub table: Option<PathBuf>,
    /// Plain-text summary.
    #[serde(default)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig<T: Scalar> {
    #[serde(default = "all_configurations")]
    pub configurations: Vec<ExecMode>,
    #[serde(default = "all_mechanisms")]
    pub mechanisms: Vec<WorkloadMechanism>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub devices: DeviceSection,
    #[serde(default)]
    pub cost: CostModel<T>,
    #[serde(default)]
    pub workloads: Vec<WorkloadEntry>,
    /// Oracle scenario files enumerated alongside the matrix.
    #[serde(default)]
    pub scenarios: Vec<PathBuf>,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub output: OutputSection,
}

fn all_configurations() -> Vec<ExecMode> {
    ExecMode::ALL.to_vec()
}

fn all_mechanisms() -> Vec<WorkloadMechanism> {
    WorkloadMechanism::ALL.to_vec()
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

impl<T: Scalar> Default for ExperimentConfig<T> {
    fn default() -> Self {
        Self {
            configurations: all_configurations(),
            mechanisms: all_mechanisms(),
            seeds: default_seeds(),
            devices: DeviceSection::default(),
            cost: CostModel::default(),
            workloads: Vec::new(),
            scenarios: Vec::new(),
            sweep: None,
            output: OutputSection::default(),
        }
    }
}

fn config_error(path: impl Into<String>, msg: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        msg: msg.into(),
    }
}

impl<T: Scalar + for<'de> Deserialize<'de>> ExperimentConfig<T> {
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            let line = e.span().map_or(0, |s| text[..s.start].lines().count().max(1));
            Error::Parse {
                line,
                msg: e.message().to_string(),
            }
        })?;
        let explicit_copy_cost = table
            .get("cost")
            .and_then(|c| c.as_table())
            .is_some_and(|c| c.contains_key("cpu_copy_ns_per_byte"));
        let mut cfg: Self = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let path = e.path().to_string();
            config_error(if path == "." { "<root>".to_string() } else { path }, e.into_inner().message())
        })?;
        if !explicit_copy_cost {
            cfg.cost.calibrate_cpu_copy(CALIBRATION_BYTES, T::lit(CALIBRATION_SPEEDUP));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a configuration file. Relative scenario and output paths are
    /// taken relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            let rebase = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            };
            cfg.scenarios.iter_mut().for_each(rebase);
            cfg.output.table.iter_mut().for_each(rebase);
            cfg.output.summary.iter_mut().for_each(rebase);
        }
        Ok(cfg)
    }
}

impl<T: Scalar> ExperimentConfig<T> {
    pub fn validate(&self) -> Result<()> {
        self.cost.validate()?;
        let d = &self.devices;
        if d.count == 0 {
            return Err(config_error("devices.count", "at least one device is required"));
        }
        let multi = self.configurations.iter().any(|m| m.default_devices() > 1);
        if multi && d.count < 2 {
            return Err(config_error("devices.count", "multi-device configurations need at least 2 devices"));
        }
        if !d.granularity.is_power_of_two() || d.granularity < WORKLOAD_PAGE {
            return Err(config_error(
                "devices.granularity",
                format!("must be a power of two of at least {WORKLOAD_PAGE} bytes, got {}", d.granularity),
            ));
        }
        if self.seeds.is_empty() {
            return Err(config_error("seeds", "at least one seed is required"));
        }
        for (i, w) in self.workloads.iter().enumerate() {
            if w.threads == Some(0) {
                return Err(config_error(format!("workloads[{i}].threads"), "must be at least 1"));
            }
            for &m in &self.mechanisms {
                let spec = w.spec(m, 0);
                spec.validate().map_err(|e| match e {
                    Error::Config { path, msg } => config_error(format!("workloads[{i}].{path}"), msg),
                    other => other,
                })?;
                if let Some(cap) = d.capacity_bytes {
                    for &mode in &self.configurations {
                        let need = required_capacity(&spec, self.devices_for(mode), d.granularity);
                        if cap < need {
                            return Err(config_error(
                                "devices.capacity_bytes",
                                format!("workloads[{i}] ({}) needs {need} bytes per device under {mode}", w.name),
                            ));
                        }
                    }
                }
            }
        }
        if let Some(s) = self.sweep {
            if s.min == 0 {
                return Err(config_error("sweep.min", "must be positive"));
            }
            if s.max < s.min {
                return Err(config_error("sweep.max", format!("{} is below sweep.min {}", s.max, s.min)));
            }
        }
        Ok(())
    }

    /// Device count a configuration runs with.
    pub fn devices_for(&self, mode: ExecMode) -> usize {
        if mode.default_devices() > 1 {
            self.devices.count
        } else {
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig<f64>> {
        ExperimentConfig::from_toml(text)
    }

    fn path_of(e: Error) -> String {
        match e {
            Error::Config { path, .. } => path,
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn empty_document_takes_defaults() {
        let c = parse("").unwrap();
        assert_eq!(c.configurations.len(), 4);
        assert_eq!(c.mechanisms.len(), 3);
        assert!(c.workloads.is_empty());
        assert_eq!(c.cost, CostModel::default());
    }

    #[test]
    fn nested_type_error_names_the_field() {
        let e = parse("[[workloads]]\nname = \"tpcc\"\n[[workloads]]\nname = \"tatp\"\nop_count = \"many\"\n").unwrap_err();
        assert_eq!(path_of(e), "workloads[1].op_count");
    }

    #[test]
    fn unknown_field_is_rejected_with_path() {
        let e = parse("[devices]\ncount = 2\ninterleave = 4096\n").unwrap_err();
        assert!(path_of(e).starts_with("devices"));
    }

    #[test]
    fn semantic_errors_carry_paths() {
        assert_eq!(path_of(parse("[cost]\nunit_freq_mhz = 0.0\n").unwrap_err()), "cost.unit_freq_mhz");
        assert_eq!(path_of(parse("[devices]\ngranularity = 1000\n").unwrap_err()), "devices.granularity");
        assert_eq!(path_of(parse("[devices]\ncount = 1\n").unwrap_err()), "devices.count");
        let e = parse("[[workloads]]\nname = \"tpcc\"\nvalue_size = 16\n").unwrap_err();
        assert_eq!(path_of(e), "workloads[0].value_size");
        let e = parse("[devices]\ncapacity_bytes = 4096\n[[workloads]]\nname = \"hashmap\"\n").unwrap_err();
        assert_eq!(path_of(e), "devices.capacity_bytes");
    }

    #[test]
    fn single_device_matrix_accepts_one_device() {
        let c = parse("configurations = [\"Baseline\", \"SD\"]\n[devices]\ncount = 1\n").unwrap();
        assert_eq!(c.devices_for(ExecMode::SingleDevice), 1);
    }

    #[test]
    fn changed_costs_are_recalibrated_unless_pinned() {
        let c = parse("[cost]\ninternal_bandwidth_gbps = 2.0\n").unwrap();
        assert!((c.cost.copy_speedup(CALIBRATION_BYTES) - CALIBRATION_SPEEDUP).abs() < 1e-9);
        let c = parse("[cost]\ncpu_copy_ns_per_byte = 0.5\n").unwrap();
        assert_eq!(c.cost.cpu_copy_ns_per_byte, 0.5);
    }

    #[test]
    fn file_paths_are_relative_to_the_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        std::fs::write(&path, "scenarios = [\"s/a.toml\"]\n[output]\ntable = \"out/t.csv\"\n").unwrap();
        let c = ExperimentConfig::<f64>::load(&path).unwrap();
        assert_eq!(c.scenarios[0], dir.path().join("s/a.toml"));
        assert_eq!(c.output.table.unwrap(), dir.path().join("out/t.csv"));
        assert!(matches!(ExperimentConfig::<f64>::load(&dir.path().join("missing.toml")), Err(Error::Io(_))));
    }

    #[test]
    fn syntax_errors_report_a_line() {
        match parse("seeds = [1,\n\n[devices\n") {
            Err(Error::Parse { line, .. }) => assert!(line >= 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
