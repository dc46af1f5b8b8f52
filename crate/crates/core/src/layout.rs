//! On-memory formats: log/checkpoint entries and per-pool region layout.
//!
//! Entry layout (little endian, 8-byte aligned):
//!
//! ```text
//! 0..8    object id (transaction id)
//! 8       commit status
//! 9..12   entry sequence within the transaction (u24)
//! 12..16  payload length
//! 16..24  home offset (bytes into the pool's local data range on this device)
//! 24..    payload
//! ```

use crate::error::{Error, Result};
use crate::translate::{DevAddr, DevRange, DeviceId, Geometry, PhysAddr, PoolId, ThreadId};

pub const HEADER_LEN: u64 = 16;
pub const ENTRY_PREFIX: u64 = 24;
/// Payload carried by one undo-log slot.
pub const LOG_SLOT_PAYLOAD: u64 = 256;
pub const LOG_SLOT: u64 = ENTRY_PREFIX + LOG_SLOT_PAYLOAD;
/// Redo slots live in the pool's virtual space and never straddle a stripe.
pub const REDO_SLOT: u64 = 256;
pub const REDO_SLOT_PAYLOAD: u64 = REDO_SLOT - ENTRY_PREFIX;
/// Per-thread commit words at the start of the redo region.
pub const REDO_COMMIT_AREA: u64 = 256;
pub const MAX_THREADS: u16 = (REDO_COMMIT_AREA / 8) as u16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CommitStatus {
    Empty,
    Active,
    Committed,
    Invalid,
}

impl CommitStatus {
    pub fn to_byte(self) -> u8 {
        match self {
            CommitStatus::Empty => 0,
            CommitStatus::Active => 1,
            CommitStatus::Committed => 2,
            CommitStatus::Invalid => 3,
        }
    }

    pub fn from_byte(b: u8) -> Self {
        match b {
            1 => CommitStatus::Active,
            2 => CommitStatus::Committed,
            3 => CommitStatus::Invalid,
            _ => CommitStatus::Empty,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub object_id: u64,
    pub commit_status: CommitStatus,
    pub seq: u32,
    pub offset: u64,
    pub payload: Vec<u8>,
}

impl LogEntry {
    pub fn header(&self) -> [u8; HEADER_LEN as usize] {
        let mut h = [0u8; HEADER_LEN as usize];
        h[0..8].copy_from_slice(&self.object_id.to_le_bytes());
        h[8] = self.commit_status.to_byte();
        h[9..12].copy_from_slice(&self.seq.to_le_bytes()[..3]);
        h[12..16].copy_from_slice(&(self.payload.len() as u32).to_le_bytes());
        h
    }

    /// Home offset followed by the payload.
    pub fn body(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(8 + self.payload.len());
        b.extend_from_slice(&self.offset.to_le_bytes());
        b.extend_from_slice(&self.payload);
        b
    }

    pub fn encoded_len(&self) -> u64 {
        ENTRY_PREFIX + self.payload.len() as u64
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut v = self.header().to_vec();
        v.extend(self.body());
        v
    }

    /// Parses a slot; `None` for never-written slots or torn lengths.
    pub fn decode(slot: &[u8]) -> Option<Self> {
        if (slot.len() as u64) < ENTRY_PREFIX {
            return None;
        }
        let status = CommitStatus::from_byte(slot[8]);
        if status == CommitStatus::Empty {
            return None;
        }
        let len = u32::from_le_bytes(slot[12..16].try_into().unwrap()) as u64;
        if ENTRY_PREFIX + len > slot.len() as u64 {
            return None;
        }
        let mut seq = [0u8; 4];
        seq[..3].copy_from_slice(&slot[9..12]);
        Some(Self {
            object_id: u64::from_le_bytes(slot[0..8].try_into().unwrap()),
            commit_status: status,
            seq: u32::from_le_bytes(seq),
            offset: u64::from_le_bytes(slot[16..24].try_into().unwrap()),
            payload: slot[ENTRY_PREFIX as usize..(ENTRY_PREFIX + len) as usize].to_vec(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RegionPurpose {
    UndoLog,
    RedoLog,
    Checkpoint,
    ShadowPages,
    PageRefs,
}

/// A fixed-slot region in one device's private local space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotRegion {
    pub start: u64,
    pub slot_size: u64,
    pub slots: u64,
}

impl SlotRegion {
    pub fn bytes(&self) -> u64 {
        self.slot_size * self.slots
    }

    pub fn slot(&self, i: u64) -> u64 {
        self.start + i * self.slot_size
    }

    pub fn end(&self) -> u64 {
        self.start + self.bytes()
    }
}

/// NDP-managed regions of a pool on one device.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceRegions {
    pub undo: SlotRegion,
    pub checkpoint: SlotRegion,
    pub shadow: SlotRegion,
    pub pagerefs: SlotRegion,
}

impl DeviceRegions {
    pub fn ndp_only(&self, device: DeviceId) -> [(RegionPurpose, DevRange); 3] {
        [
            (RegionPurpose::UndoLog, DevRange::new(device, self.undo.start, self.undo.bytes())),
            (
                RegionPurpose::Checkpoint,
                DevRange::new(device, self.checkpoint.start, self.checkpoint.bytes()),
            ),
            (
                RegionPurpose::PageRefs,
                DevRange::new(device, self.pagerefs.start, self.pagerefs.bytes()),
            ),
        ]
    }

    pub fn end(&self) -> u64 {
        self.pagerefs.end()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolLayout {
    pub pool: PoolId,
    pub thread: Option<ThreadId>,
    pub base_virt: u64,
    pub base_phys: u64,
    pub data_size: u64,
    pub redo_size: u64,
    pub page_size: u64,
    pub geometry: Geometry,
    pub regions: Vec<DeviceRegions>,
}

impl PoolLayout {
    /// Total virtual span registered for translation (data + redo region).
    pub fn span(&self) -> u64 {
        self.data_size + self.redo_size
    }

    pub fn devices(&self) -> usize {
        self.geometry.devices
    }

    /// First local address of this pool's striped bytes, identical on every device.
    pub fn local_base(&self) -> u64 {
        self.base_phys / self.geometry.devices as u64
    }

    pub fn data_per_device(&self) -> u64 {
        self.data_size / self.geometry.devices as u64
    }

    pub fn phys(&self, vaddr: u64) -> PhysAddr {
        PhysAddr(vaddr - self.base_virt + self.base_phys)
    }

    pub fn locate(&self, vaddr: u64) -> DevAddr {
        self.geometry.locate(self.phys(vaddr))
    }

    pub fn split(&self, vaddr: u64, len: u64) -> Vec<DevRange> {
        self.geometry.split(self.phys(vaddr), len)
    }

    /// Address-ordered pieces of a pool range; see [`Geometry::chunks`].
    pub fn chunks(&self, vaddr: u64, len: u64) -> Vec<DevRange> {
        self.geometry.chunks(self.phys(vaddr), len)
    }

    pub fn check_span(&self, vaddr: u64, len: u64) -> Result<()> {
        if vaddr < self.base_virt || vaddr + len > self.base_virt + self.span() {
            return Err(Error::OutOfPool {
                pool: self.pool,
                vaddr,
                len,
            });
        }
        Ok(())
    }

    pub fn check_data(&self, vaddr: u64, len: u64) -> Result<()> {
        if vaddr < self.base_virt || vaddr + len > self.base_virt + self.data_size {
            return Err(Error::OutOfPool {
                pool: self.pool,
                vaddr,
                len,
            });
        }
        Ok(())
    }

    /// Local bytes of the data area on one device.
    pub fn data_range(&self, device: DeviceId) -> DevRange {
        DevRange::new(device, self.local_base(), self.data_per_device())
    }

    pub fn home_offset(&self, addr: DevAddr) -> u64 {
        addr.local - self.local_base()
    }

    pub fn home_addr(&self, device: DeviceId, offset: u64) -> DevAddr {
        DevAddr::new(device, self.local_base() + offset)
    }

    /// Virtual address of a local data address.
    pub fn virt_of(&self, addr: DevAddr) -> Option<u64> {
        self.geometry
            .global(addr)
            .map(|p| p.0 - self.base_phys + self.base_virt)
    }

    pub fn redo_commit_word(&self, thread: ThreadId) -> u64 {
        self.base_virt + self.data_size + 8 * thread.0 as u64
    }

    /// Virtual addresses of redo slots that reside on `device`.
    pub fn redo_slots_on(&self, device: DeviceId) -> Vec<u64> {
        let first = self.base_virt + self.data_size + REDO_COMMIT_AREA;
        let end = self.base_virt + self.span();
        let mut out = Vec::new();
        let mut v = first;
        while v + REDO_SLOT <= end {
            if self.locate(v).device == device {
                out.push(v);
            }
            v += REDO_SLOT;
        }
        out
    }

    pub fn page_index(&self, addr: DevAddr) -> u64 {
        (addr.local - self.local_base()) / self.page_size
    }

    pub fn pages_per_device(&self) -> u64 {
        self.data_per_device() / self.page_size
    }

    pub fn pageref_addr(&self, device: DeviceId, page: u64) -> DevAddr {
        DevAddr::new(device, self.regions[device].pagerefs.slot(page))
    }

    /// Purpose of an NDP-private address, if any.
    pub fn ndp_region_of(&self, r: &DevRange) -> Option<RegionPurpose> {
        let regs = self.regions.get(r.device)?;
        regs.ndp_only(r.device)
            .into_iter()
            .find(|(_, span)| span.overlaps(r))
            .map(|(p, _)| p)
    }

    pub fn is_shadow(&self, r: &DevRange) -> bool {
        self.regions
            .get(r.device)
            .is_some_and(|g| DevRange::new(r.device, g.shadow.start, g.shadow.bytes()).overlaps(r))
    }

    /// Logical contents of the data area, resolving page references through
    /// `read` (which returns persisted bytes of a device range).
    pub fn logical_data(&self, mut read: impl FnMut(DevRange) -> Vec<u8>) -> Vec<u8> {
        let mut out = vec![0u8; self.data_size as usize];
        let ps = self.page_size;
        for dev in 0..self.devices() {
            for page in 0..self.pages_per_device() {
                let home = DevAddr::new(dev, self.local_base() + page * ps);
                let entry = read(DevRange::at(self.pageref_addr(dev, page), 8));
                let r = u64::from_le_bytes(entry[..8].try_into().unwrap());
                let src = if r == 0 { home } else { DevAddr::new(dev, r - 1) };
                let bytes = read(DevRange::at(src, ps));
                // page-sized pieces never cross a stripe, so one lookup suffices
                let v = self.virt_of(home).expect("data page in striped space") - self.base_virt;
                out[v as usize..(v + ps) as usize].copy_from_slice(&bytes);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_is_sixteen_bytes() {
        let e = LogEntry {
            object_id: 7,
            commit_status: CommitStatus::Active,
            seq: 3,
            offset: 0x40,
            payload: vec![1, 2, 3, 4, 5, 6, 7, 8],
        };
        assert_eq!(e.header().len(), 16);
        assert_eq!(e.encoded_len(), 32);
        assert_eq!(e.encoded_len() % 8, 0);
    }

    #[test]
    fn blank_slot_decodes_to_none() {
        assert_eq!(LogEntry::decode(&[0u8; 64]), None);
    }

    proptest! {
        #[test]
        fn entry_round_trip(id in any::<u64>(), st in 1u8..4, seq in 0u32..(1 << 24),
                            off in any::<u64>(), payload in proptest::collection::vec(any::<u8>(), 0..64)) {
            let e = LogEntry { object_id: id, commit_status: CommitStatus::from_byte(st), seq, offset: off, payload };
            let mut slot = e.encode();
            slot.resize(200, 0xee);
            prop_assert_eq!(LogEntry::decode(&slot), Some(e));
        }
    }
}
