//! Byte-addressable persistent memory with an explicit persistence domain.
//!
//! CPU stores sit in a volatile write buffer until flushed; NDP writes enter
//! the persistence domain as soon as they are issued. A crash discards the
//! volatile buffer and keeps everything that carries a persist stamp.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::translate::ThreadId;

/// Where a write originates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteSource {
    CpuCached,
    NdpDirect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PersistState {
    Volatile,
    Persisted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WriteRecord {
    pub addr: u64,
    pub bytes: Vec<u8>,
    pub source: WriteSource,
    pub thread: Option<ThreadId>,
    pub persist_state: PersistState,
    pub persist_stamp: Option<u64>,
}

impl WriteRecord {
    pub fn end(&self) -> u64 {
        self.addr + self.bytes.len() as u64
    }

    fn overlaps(&self, addr: u64, len: u64) -> bool {
        len > 0 && !self.bytes.is_empty() && self.addr < addr + len && addr < self.end()
    }
}

/// Global persist-order counter. One per simulation run, shared by all devices.
#[derive(Debug, Clone, Default)]
pub struct StampClock {
    next: u64,
}

impl StampClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next_stamp(&mut self) -> u64 {
        let s = self.next;
        self.next += 1;
        s
    }

    pub fn issued(&self) -> u64 {
        self.next
    }
}

/// Post-crash contents of one device.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PersistedImage {
    pub bytes: Vec<u8>,
}

impl PersistedImage {
    pub fn capacity(&self) -> u64 {
        self.bytes.len() as u64
    }

    pub fn read(&self, addr: u64, len: u64) -> &[u8] {
        &self.bytes[addr as usize..(addr + len) as usize]
    }

    pub fn write(&mut self, addr: u64, bytes: &[u8]) {
        self.bytes[addr as usize..addr as usize + bytes.len()].copy_from_slice(bytes);
    }

    /// Binary dump: little-endian `u64` capacity followed by the raw bytes.
    pub fn dump(&self, mut out: impl Write) -> Result<()> {
        out.write_all(&(self.bytes.len() as u64).to_le_bytes())?;
        out.write_all(&self.bytes)?;
        Ok(())
    }

    pub fn load(mut input: impl Read) -> Result<Self> {
        let mut hdr = [0u8; 8];
        input.read_exact(&mut hdr)?;
        let cap = u64::from_le_bytes(hdr) as usize;
        let mut bytes = vec![0u8; cap];
        input.read_exact(&mut bytes)?;
        let mut rest = Vec::new();
        input.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Io(format!("{} trailing bytes after image", rest.len())));
        }
        Ok(Self { bytes })
    }
}

#[derive(Debug, Clone)]
pub struct PhysicalMemory {
    persisted: Vec<u8>,
    volatile: Vec<WriteRecord>,
    journal: Option<Vec<WriteRecord>>,
}

impl PhysicalMemory {
    pub fn new(capacity: u64) -> Self {
        Self {
            persisted: vec![0; capacity as usize],
            volatile: Vec::new(),
            journal: None,
        }
    }

    pub fn from_image(image: PersistedImage) -> Self {
        Self {
            persisted: image.bytes,
            volatile: Vec::new(),
            journal: None,
        }
    }

    /// Keeps every persisted record so the image can be rebuilt by replay.
    pub fn enable_journal(&mut self) {
        self.journal = Some(Vec::new());
    }

    pub fn journal(&self) -> Option<&[WriteRecord]> {
        self.journal.as_deref()
    }

    pub fn capacity(&self) -> u64 {
        self.persisted.len() as u64
    }

    pub fn check_range(&self, addr: u64, len: u64) -> Result<()> {
        if addr.checked_add(len).map_or(true, |end| end > self.capacity()) {
            return Err(Error::AddressFault {
                addr,
                len,
                capacity: self.capacity(),
            });
        }
        Ok(())
    }

    pub fn write(
        &mut self,
        addr: u64,
        bytes: &[u8],
        source: WriteSource,
        thread: Option<ThreadId>,
        clock: &mut StampClock,
    ) -> Result<Option<u64>> {
        self.check_range(addr, bytes.len() as u64)?;
        match source {
            WriteSource::CpuCached => {
                self.volatile.push(WriteRecord {
                    addr,
                    bytes: bytes.to_vec(),
                    source,
                    thread,
                    persist_state: PersistState::Volatile,
                    persist_stamp: None,
                });
                Ok(None)
            }
            WriteSource::NdpDirect => {
                let stamp = clock.next_stamp();
                self.persist(addr, bytes, source, thread, stamp);
                Ok(Some(stamp))
            }
        }
    }

    /// Applies an already-stamped write straight to the persisted image.
    pub fn persist(&mut self, addr: u64, bytes: &[u8], source: WriteSource, thread: Option<ThreadId>, stamp: u64) {
        self.persisted[addr as usize..addr as usize + bytes.len()].copy_from_slice(bytes);
        if let Some(j) = &mut self.journal {
            j.push(WriteRecord {
                addr,
                bytes: bytes.to_vec(),
                source,
                thread,
                persist_state: PersistState::Persisted,
                persist_stamp: Some(stamp),
            });
        }
    }

    /// Persists every volatile record overlapping the range, in buffer order.
    pub fn flush(&mut self, addr: u64, len: u64, clock: &mut StampClock) -> Result<Vec<u64>> {
        self.check_range(addr, len)?;
        let drained = self.drain_volatile(|r| r.overlaps(addr, len));
        Ok(drained
            .into_iter()
            .map(|r| {
                let stamp = clock.next_stamp();
                self.persist(r.addr, &r.bytes, r.source, r.thread, stamp);
                stamp
            })
            .collect())
    }

    /// Removes matching volatile records, preserving their order.
    pub fn drain_volatile(&mut self, mut pred: impl FnMut(&WriteRecord) -> bool) -> Vec<WriteRecord> {
        let mut taken = Vec::new();
        let mut kept = Vec::with_capacity(self.volatile.len());
        for r in self.volatile.drain(..) {
            if pred(&r) {
                taken.push(r);
            } else {
                kept.push(r);
            }
        }
        self.volatile = kept;
        taken
    }

    pub fn volatile(&self) -> &[WriteRecord] {
        &self.volatile
    }

    /// Newest-wins view: volatile records over the persisted image.
    pub fn read(&self, addr: u64, len: u64) -> Result<Vec<u8>> {
        self.check_range(addr, len)?;
        let mut out = self.persisted[addr as usize..(addr + len) as usize].to_vec();
        for r in self.volatile.iter().filter(|r| r.overlaps(addr, len)) {
            let lo = r.addr.max(addr);
            let hi = r.end().min(addr + len);
            out[(lo - addr) as usize..(hi - addr) as usize]
                .copy_from_slice(&r.bytes[(lo - r.addr) as usize..(hi - r.addr) as usize]);
        }
        Ok(out)
    }

    pub fn read_persisted(&self, addr: u64, len: u64) -> &[u8] {
        &self.persisted[addr as usize..(addr + len) as usize]
    }

    pub fn image(&self) -> PersistedImage {
        PersistedImage {
            bytes: self.persisted.clone(),
        }
    }

    pub fn crash(&mut self) -> PersistedImage {
        self.volatile.clear();
        self.image()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mem() -> (PhysicalMemory, StampClock) {
        (PhysicalMemory::new(0x1000), StampClock::new())
    }

    #[test]
    fn ndp_write_survives_crash() {
        let (mut m, mut c) = mem();
        let s = m.write(0x100, &[1], WriteSource::NdpDirect, None, &mut c).unwrap();
        assert!(s.is_some());
        assert!(m.volatile().is_empty());
        assert_eq!(m.crash().read(0x100, 1), &[1]);
    }

    #[test]
    fn unflushed_cpu_write_is_lost() {
        let (mut m, mut c) = mem();
        m.write(0x100, &[1], WriteSource::CpuCached, None, &mut c).unwrap();
        assert_eq!(m.read(0x100, 1).unwrap(), vec![1]);
        assert_eq!(m.crash().read(0x100, 1), &[0]);
    }

    #[test]
    fn flushed_cpu_write_survives() {
        let (mut m, mut c) = mem();
        m.write(0x100, &[1], WriteSource::CpuCached, None, &mut c).unwrap();
        m.flush(0x100, 1, &mut c).unwrap();
        assert_eq!(m.crash().read(0x100, 1), &[1]);
    }

    #[test]
    fn flush_preserves_buffer_order() {
        let (mut m, mut c) = mem();
        m.write(0x10, &[1], WriteSource::CpuCached, None, &mut c).unwrap();
        m.write(0x20, &[2], WriteSource::CpuCached, None, &mut c).unwrap();
        let stamps = m.flush(0x10, 0x11, &mut c).unwrap();
        assert_eq!(stamps.len(), 2);
        assert!(stamps[0] < stamps[1]);
    }

    #[test]
    fn flush_of_untouched_range_is_noop() {
        let (mut m, mut c) = mem();
        m.write(0x10, &[1], WriteSource::CpuCached, None, &mut c).unwrap();
        assert!(m.flush(0x800, 16, &mut c).unwrap().is_empty());
        assert_eq!(m.volatile().len(), 1);
        assert_eq!(c.issued(), 0);
    }

    #[test]
    fn newest_write_wins_after_flush() {
        let (mut m, mut c) = mem();
        m.write(0x10, &[1], WriteSource::CpuCached, None, &mut c).unwrap();
        m.write(0x20, &[2], WriteSource::CpuCached, None, &mut c).unwrap();
        m.write(0x10, &[3], WriteSource::CpuCached, None, &mut c).unwrap();
        assert_eq!(m.read(0x10, 1).unwrap(), vec![3]);
        m.flush(0, 0x100, &mut c).unwrap();
        assert_eq!(m.crash().read(0x10, 1), &[3]);
    }

    #[test]
    fn out_of_range_write_faults() {
        let (mut m, mut c) = mem();
        assert!(matches!(
            m.write(0xfff, &[1, 2], WriteSource::NdpDirect, None, &mut c),
            Err(Error::AddressFault { .. })
        ));
    }

    #[test]
    fn crash_with_empty_buffer_keeps_image() {
        let (mut m, mut c) = mem();
        m.write(0x0, &[9; 4], WriteSource::NdpDirect, None, &mut c).unwrap();
        let before = m.image();
        assert_eq!(m.crash(), before);
    }

    #[test]
    fn image_dump_round_trips() {
        let (mut m, mut c) = mem();
        m.write(0x40, &[7; 8], WriteSource::NdpDirect, None, &mut c).unwrap();
        let img = m.image();
        let mut buf = Vec::new();
        img.dump(&mut buf).unwrap();
        assert_eq!(&buf[..8], &0x1000u64.to_le_bytes());
        assert_eq!(PersistedImage::load(&buf[..]).unwrap(), img);
    }

    /// Prefix-persisted NDP copy: every prefix length is a reachable image.
    #[test]
    fn crash_mid_copy_leaves_prefix() {
        let src = [5u8; 16];
        for prefix in 0..=src.len() {
            let (mut m, mut c) = mem();
            for (i, b) in src.iter().take(prefix).enumerate() {
                m.write(0x200 + i as u64, &[*b], WriteSource::NdpDirect, None, &mut c).unwrap();
            }
            let img = m.crash();
            assert!(img.read(0x200, prefix as u64).iter().all(|b| *b == 5));
            assert!(img.read(0x200 + prefix as u64, (16 - prefix) as u64).iter().all(|b| *b == 0));
        }
    }

    #[derive(Debug, Clone)]
    enum Op {
        Cpu(u64, Vec<u8>),
        Ndp(u64, Vec<u8>),
        Flush(u64, u64),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (0u64..240, proptest::collection::vec(any::<u8>(), 1..16)).prop_map(|(a, b)| Op::Cpu(a, b)),
            (0u64..240, proptest::collection::vec(any::<u8>(), 1..16)).prop_map(|(a, b)| Op::Ndp(a, b)),
            (0u64..240, 1u64..16).prop_map(|(a, l)| Op::Flush(a, l)),
        ]
    }

    proptest! {
        /// Replaying persisted records in stamp order rebuilds the crash image,
        /// and NDP records are never volatile.
        #[test]
        fn crash_equals_stamp_order_replay(ops in proptest::collection::vec(op(), 0..40)) {
            let mut m = PhysicalMemory::new(256);
            m.enable_journal();
            let mut c = StampClock::new();
            for o in &ops {
                match o {
                    Op::Cpu(a, b) => { m.write(*a, b, WriteSource::CpuCached, None, &mut c).unwrap(); }
                    Op::Ndp(a, b) => { m.write(*a, b, WriteSource::NdpDirect, None, &mut c).unwrap(); }
                    Op::Flush(a, l) => { m.flush(*a, *l, &mut c).unwrap(); }
                }
                prop_assert!(m.volatile().iter().all(|r| r.source == WriteSource::CpuCached));
            }
            let mut journal = m.journal().unwrap().to_vec();
            let stamps: Vec<u64> = journal.iter().map(|r| r.persist_stamp.unwrap()).collect();
            let mut sorted = stamps.clone();
            sorted.sort_unstable();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), stamps.len());
            journal.sort_by_key(|r| r.persist_stamp);
            let mut replay = vec![0u8; 256];
            for r in &journal {
                replay[r.addr as usize..r.end() as usize].copy_from_slice(&r.bytes);
            }
            prop_assert_eq!(m.crash().bytes, replay);
        }
    }
}
