//! Latency and bandwidth parameters that drive simulated time.
//!
//! All times are nanoseconds and all bandwidths are GB/s (bytes per ns).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Copy size used to calibrate the CPU copy cost.
pub const CALIBRATION_BYTES: u64 = 16 * 1024;
/// NDP/CPU speedup the calibration targets at [`CALIBRATION_BYTES`].
pub const CALIBRATION_SPEEDUP: f64 = 5.57;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel<T: Scalar> {
    pub pm_access_latency_ns: T,
    pub host_link_bandwidth_gbps: T,
    pub internal_bandwidth_gbps: T,
    pub units_per_device: usize,
    pub unit_freq_mhz: T,
    /// Cost of one CPU byte of load+store through the cache hierarchy.
    pub cpu_copy_ns_per_byte: T,
    pub cpu_store_ns_per_byte: T,
    pub command_issue_latency_ns: T,
    pub sw_sync_poll_ns: T,
    pub inter_device_latency_ns: T,
    /// Cycles the metadata generator spends per request.
    pub metadata_cycles: T,
    pub decode_cycles: T,
}

impl<T: Scalar> Default for CostModel<T> {
    fn default() -> Self {
        let mut m = Self {
            pm_access_latency_ns: T::lit(436.0),
            host_link_bandwidth_gbps: T::lit(8.0),
            internal_bandwidth_gbps: T::lit(4.0),
            units_per_device: 4,
            unit_freq_mhz: T::lit(300.0),
            cpu_copy_ns_per_byte: T::one(),
            cpu_store_ns_per_byte: T::lit(0.05),
            command_issue_latency_ns: T::lit(20.0),
            sw_sync_poll_ns: T::lit(100.0),
            inter_device_latency_ns: T::zero(),
            metadata_cycles: T::lit(8.0),
            decode_cycles: T::one(),
        };
        m.calibrate_cpu_copy(CALIBRATION_BYTES, T::lit(CALIBRATION_SPEEDUP));
        m
    }
}

impl<T: Scalar> CostModel<T> {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("pm_access_latency_ns", self.pm_access_latency_ns),
            ("host_link_bandwidth_gbps", self.host_link_bandwidth_gbps),
            ("internal_bandwidth_gbps", self.internal_bandwidth_gbps),
            ("unit_freq_mhz", self.unit_freq_mhz),
            ("cpu_copy_ns_per_byte", self.cpu_copy_ns_per_byte),
            ("cpu_store_ns_per_byte", self.cpu_store_ns_per_byte),
            ("command_issue_latency_ns", self.command_issue_latency_ns),
            ("sw_sync_poll_ns", self.sw_sync_poll_ns),
            ("metadata_cycles", self.metadata_cycles),
            ("decode_cycles", self.decode_cycles),
        ];
        for (name, v) in fields {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::Config {
                    path: format!("cost.{name}"),
                    msg: format!("must be strictly positive, got {v}"),
                });
            }
        }
        if self.inter_device_latency_ns < T::zero() {
            return Err(Error::Config {
                path: "cost.inter_device_latency_ns".into(),
                msg: "must not be negative".into(),
            });
        }
        if self.units_per_device == 0 {
            return Err(Error::Config {
                path: "cost.units_per_device".into(),
                msg: "must be strictly positive".into(),
            });
        }
        Ok(())
    }

    pub fn cycle_ns(&self) -> T {
        T::lit(1000.0) / self.unit_freq_mhz
    }

    /// Decode plus metadata generation inside a unit.
    pub fn unit_setup_ns(&self) -> T {
        (self.decode_cycles + self.metadata_cycles) * self.cycle_ns()
    }

    pub fn internal_move_ns(&self, bytes: u64) -> T {
        T::from_bytes(bytes) / self.internal_bandwidth_gbps
    }

    pub fn host_transfer_ns(&self, bytes: u64) -> T {
        T::from_bytes(bytes) / self.host_link_bandwidth_gbps
    }

    /// Execution time of one NDP procedure moving `bytes` inside the device.
    pub fn ndp_proc_ns(&self, bytes: u64) -> T {
        self.unit_setup_ns() + self.pm_access_latency_ns + self.internal_move_ns(bytes)
    }

    /// End-to-end NDP copy: command issue plus execution.
    pub fn ndp_copy_ns(&self, bytes: u64) -> T {
        self.command_issue_latency_ns + self.ndp_proc_ns(bytes)
    }

    pub fn cpu_copy_ns(&self, bytes: u64) -> T {
        self.pm_access_latency_ns + self.cpu_copy_ns_per_byte * T::from_bytes(bytes)
    }

    pub fn cpu_store_ns(&self, bytes: u64) -> T {
        self.cpu_store_ns_per_byte * T::from_bytes(bytes)
    }

    /// Write-back of `bytes` of dirty lines followed by a fence.
    pub fn cpu_flush_ns(&self, bytes: u64) -> T {
        if bytes == 0 {
            T::zero()
        } else {
            self.pm_access_latency_ns + self.host_transfer_ns(bytes)
        }
    }

    /// A CPU load that misses to PM.
    pub fn cpu_read_ns(&self, bytes: u64) -> T {
        self.pm_access_latency_ns + self.host_transfer_ns(bytes)
    }

    pub fn copy_speedup(&self, bytes: u64) -> T {
        self.cpu_copy_ns(bytes) / self.ndp_copy_ns(bytes)
    }

    /// Solves `cpu_copy_ns(bytes) = target * ndp_copy_ns(bytes)` for the
    /// per-byte CPU cost. This is the only calibrated parameter.
    pub fn calibrate_cpu_copy(&mut self, bytes: u64, target: T) -> T {
        let c = (target * self.ndp_copy_ns(bytes) - self.pm_access_latency_ns) / T::from_bytes(bytes);
        self.cpu_copy_ns_per_byte = c;
        c
    }

    /// One-line description of the calibration, for report headers.
    pub fn calibration_note(&self) -> String {
        format!(
            "cpu_copy_ns_per_byte={:.4} solved so that cpu_copy_ns({CALIBRATION_BYTES}) / ndp_copy_ns({CALIBRATION_BYTES}) = {CALIBRATION_SPEEDUP}; cpu_copy_ns(s) = pm_access_latency_ns + c*s; ndp_copy_ns(s) = command_issue_latency_ns + (decode_cycles + metadata_cycles)/unit_freq + pm_access_latency_ns + s/internal_bandwidth",
            self.cpu_copy_ns_per_byte.as_f64()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_kib_move_takes_one_microsecond() {
        let m = CostModel::<f64>::default();
        assert!((m.internal_move_ns(4096) - 1024.0).abs() < 1e-9);
    }

    #[test]
    fn calibration_hits_target_exactly() {
        let m = CostModel::<f64>::default();
        assert!((m.copy_speedup(CALIBRATION_BYTES) - CALIBRATION_SPEEDUP).abs() < 1e-9);
    }

    #[test]
    fn calibration_works_in_single_precision() {
        let m = CostModel::<f32>::default();
        assert!((m.copy_speedup(CALIBRATION_BYTES) - 5.57).abs() < 1e-3);
    }

    #[test]
    fn validation_rejects_zero_bandwidth() {
        let m = CostModel::<f64> {
            internal_bandwidth_gbps: 0.0,
            ..CostModel::default()
        };
        assert!(matches!(m.validate(), Err(Error::Config { .. })));
        assert!(CostModel::<f64>::default().validate().is_ok());
    }
}
