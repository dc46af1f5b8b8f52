//! Pool-indexed virtual to physical translation and device interleaving.
//!
//! Every device keeps an address mapping table indexed by pool ID (and, for
//! per-thread pools, by thread ID). Translation is a single offset addition,
//! so it survives context switches: the result depends only on the pool,
//! the thread and the virtual address.
//!
//! The global physical space is striped across devices at a fixed
//! granularity. A contiguous virtual range therefore lands on each device as
//! one contiguous local range, provided the pool offset is a multiple of
//! `granularity * devices`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PoolId(pub u16);

impl fmt::Display for PoolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ThreadId(pub u16);

pub type DeviceId = usize;

/// Byte address in the global (striped) physical space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PhysAddr(pub u64);

/// Byte address inside one device's local memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DevAddr {
    pub device: DeviceId,
    pub local: u64,
}

impl DevAddr {
    pub fn new(device: DeviceId, local: u64) -> Self {
        Self { device, local }
    }

    pub fn offset(self, by: u64) -> Self {
        Self {
            device: self.device,
            local: self.local + by,
        }
    }
}

/// A byte range on one device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DevRange {
    pub device: DeviceId,
    pub start: u64,
    pub len: u64,
}

impl DevRange {
    pub fn new(device: DeviceId, start: u64, len: u64) -> Self {
        Self { device, start, len }
    }

    pub fn at(addr: DevAddr, len: u64) -> Self {
        Self::new(addr.device, addr.local, len)
    }

    pub fn end(&self) -> u64 {
        self.start + self.len
    }

    pub fn overlaps(&self, other: &DevRange) -> bool {
        self.device == other.device
            && self.len > 0
            && other.len > 0
            && self.start < other.end()
            && other.start < self.end()
    }

    pub fn contains(&self, other: &DevRange) -> bool {
        self.device == other.device && self.start <= other.start && other.end() <= self.end()
    }

    /// Widened to whole `line`-byte lines.
    pub fn lines(&self, line: u64) -> DevRange {
        let start = self.start / line * line;
        DevRange::new(self.device, start, self.end().div_ceil(line) * line - start)
    }
}

impl fmt::Display for DevRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{:#x}+{}", self.device, self.start, self.len)
    }
}

/// Returns the device holding `vaddr` under round-robin interleaving.
pub fn device_of(vaddr: u64, granularity: u64, device_count: usize) -> DeviceId {
    debug_assert!(device_count >= 1 && granularity.is_power_of_two());
    ((vaddr / granularity) % device_count as u64) as DeviceId
}

/// Striping geometry of the physical space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub devices: usize,
    pub granularity: u64,
    /// Local bytes per device that belong to the striped space. Local
    /// addresses above this hold device-private NDP regions.
    pub striped_per_device: u64,
    pub capacity_per_device: u64,
}

impl Geometry {
    pub fn new(devices: usize, granularity: u64, striped_per_device: u64, capacity_per_device: u64) -> Result<Self> {
        if devices == 0 {
            return Err(Error::Config {
                path: "devices.count".into(),
                msg: "at least one device required".into(),
            });
        }
        if !granularity.is_power_of_two() {
            return Err(Error::Config {
                path: "devices.granularity".into(),
                msg: format!("{granularity} is not a power of two"),
            });
        }
        if striped_per_device % granularity != 0 || striped_per_device > capacity_per_device {
            return Err(Error::Config {
                path: "devices.capacity".into(),
                msg: "striped space must be granularity aligned and fit the device".into(),
            });
        }
        Ok(Self {
            devices,
            granularity,
            striped_per_device,
            capacity_per_device,
        })
    }

    pub fn striped_total(&self) -> u64 {
        self.striped_per_device * self.devices as u64
    }

    pub fn stripe_span(&self) -> u64 {
        self.granularity * self.devices as u64
    }

    pub fn locate(&self, p: PhysAddr) -> DevAddr {
        let stripe = p.0 / self.granularity;
        let device = (stripe % self.devices as u64) as DeviceId;
        let local = (stripe / self.devices as u64) * self.granularity + p.0 % self.granularity;
        DevAddr { device, local }
    }

    /// Inverse of [`Geometry::locate`] for addresses in the striped space.
    pub fn global(&self, a: DevAddr) -> Option<PhysAddr> {
        if a.local >= self.striped_per_device || a.device >= self.devices {
            return None;
        }
        let stripe = (a.local / self.granularity) * self.devices as u64 + a.device as u64;
        Some(PhysAddr(stripe * self.granularity + a.local % self.granularity))
    }

    /// Pieces of a physical range in address order, one per interleaving
    /// granule touched. Consecutive bytes of the range map to consecutive
    /// bytes of the pieces.
    pub fn chunks(&self, start: PhysAddr, len: u64) -> Vec<DevRange> {
        let mut parts = Vec::new();
        let mut cur = start.0;
        let end = start.0 + len;
        while cur < end {
            let chunk_end = ((cur / self.granularity) + 1) * self.granularity;
            let piece = chunk_end.min(end) - cur;
            let loc = self.locate(PhysAddr(cur));
            parts.push(DevRange::new(loc.device, loc.local, piece));
            cur += piece;
        }
        parts
    }

    /// Splits a physical range into one contiguous local range per device.
    pub fn split(&self, start: PhysAddr, len: u64) -> Vec<DevRange> {
        let mut parts: Vec<DevRange> = Vec::new();
        let mut cur = start.0;
        let end = start.0 + len;
        while cur < end {
            let chunk_end = ((cur / self.granularity) + 1) * self.granularity;
            let piece = chunk_end.min(end) - cur;
            let loc = self.locate(PhysAddr(cur));
            match parts.iter_mut().find(|r| r.device == loc.device) {
                Some(r) => {
                    debug_assert_eq!(r.end(), loc.local, "device pieces must be locally contiguous");
                    r.len += piece;
                }
                None => parts.push(DevRange::new(loc.device, loc.local, piece)),
            }
            cur += piece;
        }
        parts.sort_by_key(|r| r.device);
        parts
    }
}

/// One row of the address mapping table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AddressMappingEntry {
    pub pool: PoolId,
    /// `None` registers the pool for every thread.
    pub thread: Option<ThreadId>,
    pub base_virt: u64,
    pub offset: i64,
    pub pool_size: u64,
}

impl AddressMappingEntry {
    pub const ENCODED_LEN: usize = 16;
}

/// Serialized table size is bounded by the persistence domain budget.
pub const MAPPING_TABLE_BYTES: usize = 432;
pub const MAPPING_TABLE_ENTRIES: usize = MAPPING_TABLE_BYTES / AddressMappingEntry::ENCODED_LEN;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AddressMappingTable {
    entries: Vec<AddressMappingEntry>,
}

impl AddressMappingTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[AddressMappingEntry] {
        &self.entries
    }

    pub fn register_pool(
        &mut self,
        pool: PoolId,
        thread: Option<ThreadId>,
        base_virt: u64,
        base_phys: u64,
        size: u64,
    ) -> Result<()> {
        if self.entries.iter().any(|e| e.pool == pool && e.thread == thread) {
            return Err(Error::Registration(format!("pool {pool} already registered")));
        }
        if self.entries.len() >= MAPPING_TABLE_ENTRIES {
            return Err(Error::Registration(format!(
                "address mapping table full ({MAPPING_TABLE_ENTRIES} entries)"
            )));
        }
        if size == 0 {
            return Err(Error::Registration(format!("pool {pool} has zero size")));
        }
        self.entries.push(AddressMappingEntry {
            pool,
            thread,
            base_virt,
            offset: base_phys as i64 - base_virt as i64,
            pool_size: size,
        });
        Ok(())
    }

    pub fn lookup(&self, pool: PoolId, thread: ThreadId) -> Option<&AddressMappingEntry> {
        self.entries
            .iter()
            .find(|e| e.pool == pool && e.thread == Some(thread))
            .or_else(|| self.entries.iter().find(|e| e.pool == pool && e.thread.is_none()))
    }

    pub fn translate(&self, pool: PoolId, thread: ThreadId, vaddr: u64) -> Result<PhysAddr> {
        self.translate_range(pool, thread, vaddr, 1)
    }

    /// Translates `[vaddr, vaddr + len)`; the whole range must lie in the pool.
    pub fn translate_range(&self, pool: PoolId, thread: ThreadId, vaddr: u64, len: u64) -> Result<PhysAddr> {
        let e = self.lookup(pool, thread).ok_or(Error::UnknownPool { pool, thread: thread.0 })?;
        if vaddr < e.base_virt || vaddr + len > e.base_virt + e.pool_size {
            return Err(Error::OutOfPool { pool, vaddr, len });
        }
        Ok(PhysAddr((vaddr as i64 + e.offset) as u64))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.entries.len() * AddressMappingEntry::ENCODED_LEN);
        for e in &self.entries {
            out.extend_from_slice(&e.pool.0.to_le_bytes());
            out.extend_from_slice(&e.thread.map_or(u16::MAX, |t| t.0).to_le_bytes());
            // base_virt is recoverable from the owning pool record; keep the
            // low 32 bits of size and the full offset.
            out.extend_from_slice(&(e.pool_size as u32).to_le_bytes());
            out.extend_from_slice(&e.offset.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8], bases: impl Fn(PoolId) -> u64) -> Result<Self> {
        if bytes.len() % AddressMappingEntry::ENCODED_LEN != 0 || bytes.len() > MAPPING_TABLE_BYTES {
            return Err(Error::Snapshot(format!("mapping table of {} bytes", bytes.len())));
        }
        let entries = bytes
            .chunks_exact(AddressMappingEntry::ENCODED_LEN)
            .map(|c| {
                let pool = PoolId(u16::from_le_bytes([c[0], c[1]]));
                let t = u16::from_le_bytes([c[2], c[3]]);
                AddressMappingEntry {
                    pool,
                    thread: (t != u16::MAX).then_some(ThreadId(t)),
                    base_virt: bases(pool),
                    pool_size: u32::from_le_bytes(c[4..8].try_into().unwrap()) as u64,
                    offset: i64::from_le_bytes(c[8..16].try_into().unwrap()),
                }
            })
            .collect();
        Ok(Self { entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const P1: PoolId = PoolId(1);
    const T0: ThreadId = ThreadId(0);

    #[test]
    fn offset_is_phys_minus_virt() {
        let mut t = AddressMappingTable::new();
        t.register_pool(P1, None, 0x1000, 0x6000, 64 << 10).unwrap();
        assert_eq!(t.lookup(P1, T0).unwrap().offset, 0x5000);
        assert_eq!(t.translate(P1, T0, 0x1234).unwrap(), PhysAddr(0x6234));
    }

    #[test]
    fn duplicate_registration_faults() {
        let mut t = AddressMappingTable::new();
        t.register_pool(P1, None, 0x1000, 0x6000, 4096).unwrap();
        assert!(matches!(
            t.register_pool(P1, None, 0x9000, 0x9000, 4096),
            Err(Error::Registration(_))
        ));
    }

    #[test]
    fn pools_translate_independently() {
        let mut t = AddressMappingTable::new();
        t.register_pool(P1, None, 0x1000, 0x6000, 0x1000).unwrap();
        t.register_pool(PoolId(2), None, 0x1000, 0x20000, 0x1000).unwrap();
        assert_eq!(t.translate(P1, T0, 0x1010).unwrap(), PhysAddr(0x6010));
        assert_eq!(t.translate(PoolId(2), T0, 0x1010).unwrap(), PhysAddr(0x20010));
    }

    #[test]
    fn faults_for_unknown_pool_and_out_of_bounds() {
        let mut t = AddressMappingTable::new();
        t.register_pool(P1, None, 0x1000, 0x6000, 0x1000).unwrap();
        assert!(matches!(t.translate(PoolId(9), T0, 0x1000), Err(Error::UnknownPool { .. })));
        assert!(matches!(t.translate(P1, T0, 0x2000), Err(Error::OutOfPool { .. })));
        assert!(matches!(t.translate(P1, T0, 0xfff), Err(Error::OutOfPool { .. })));
    }

    #[test]
    fn per_thread_entry_wins_over_wildcard() {
        let mut t = AddressMappingTable::new();
        t.register_pool(P1, None, 0, 0x1000, 0x100).unwrap();
        t.register_pool(P1, Some(ThreadId(3)), 0, 0x8000, 0x100).unwrap();
        assert_eq!(t.translate(P1, ThreadId(3), 0x10).unwrap(), PhysAddr(0x8010));
        assert_eq!(t.translate(P1, ThreadId(4), 0x10).unwrap(), PhysAddr(0x1010));
    }

    #[test]
    fn device_of_examples() {
        assert_eq!(device_of(0x0000, 4096, 2), 0);
        assert_eq!(device_of(0x1000, 4096, 2), 1);
        assert_eq!(device_of(0x2000, 4096, 2), 0);
        for v in [0u64, 0x1234, 0xffff_ffff] {
            assert_eq!(device_of(v, 4096, 1), 0);
        }
    }

    #[test]
    fn locate_and_global_are_inverse() {
        let g = Geometry::new(2, 256, 4096, 8192).unwrap();
        for p in 0..g.striped_total() {
            let a = g.locate(PhysAddr(p));
            assert_eq!(a.device, device_of(p, 256, 2));
            assert_eq!(g.global(a), Some(PhysAddr(p)));
        }
        assert_eq!(g.global(DevAddr::new(0, 4096)), None);
    }

    #[test]
    fn split_covers_range_without_overlap() {
        let g = Geometry::new(2, 4096, 1 << 20, 1 << 20).unwrap();
        let parts = g.split(PhysAddr(0), 8192);
        assert_eq!(parts, vec![DevRange::new(0, 0, 4096), DevRange::new(1, 0, 4096)]);
        let parts = g.split(PhysAddr(0x100), 64);
        assert_eq!(parts, vec![DevRange::new(0, 0x100, 64)]);
        // four chunks over two devices stay locally contiguous
        let parts = g.split(PhysAddr(0x800), 4 * 4096);
        assert_eq!(parts.iter().map(|r| r.len).sum::<u64>(), 4 * 4096);
        assert_eq!(parts.len(), 2);
    }

    #[test]
    fn chunks_follow_address_order() {
        let g = Geometry::new(2, 4096, 1 << 20, 1 << 20).unwrap();
        let parts = g.chunks(PhysAddr(4096 + 4000), 200);
        assert_eq!(parts, vec![DevRange::new(1, 4000, 96), DevRange::new(0, 4096, 104)]);
    }

    #[test]
    fn table_encoding_fits_budget() {
        let mut t = AddressMappingTable::new();
        for i in 0..MAPPING_TABLE_ENTRIES as u16 {
            t.register_pool(PoolId(i), None, 0, 0, 64).unwrap();
        }
        assert!(t.register_pool(PoolId(999), None, 0, 0, 64).is_err());
        let bytes = t.encode();
        assert!(bytes.len() <= MAPPING_TABLE_BYTES);
        let back = AddressMappingTable::decode(&bytes, |_| 0).unwrap();
        assert_eq!(back, t);
    }
}
