//! Structures of one NDP device: request FIFO, in-flight access table, NDP
//! units, host read/write queue and multi-device handler.
//!
//! The engine owns the policy that moves requests between these structures;
//! this module keeps their local invariants.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::pm::PhysicalMemory;
use crate::primitives::{ResetItem, SubRequest};
use crate::sync::MultiDeviceHandler;
use crate::checker::LINE;
use crate::trace::EventId;
use crate::translate::{AddressMappingTable, DevRange, DeviceId, ThreadId};

pub const FIFO_CAPACITY: usize = 32;
/// Encoded size of one FIFO entry in the persistence domain.
pub const FIFO_ENTRY_BYTES: usize = 64;
pub const HOST_QUEUE_BYTES: usize = 4096;
/// Address, length, order key and owning thread of a buffered host write.
pub const HOST_ENTRY_HEADER: usize = 16;
pub const INFLIGHT_REGISTER_BYTES: usize = 256;
pub const MAX_OUTSTANDING_SYNCS: usize = 16;

#[derive(Debug, Clone, Default)]
pub struct RequestFifo {
    queue: VecDeque<SubRequest>,
}

impl RequestFifo {
    pub fn push(&mut self, req: SubRequest) -> Result<()> {
        if self.is_full() {
            return Err(Error::Protocol("request FIFO full".into()));
        }
        self.queue.push_back(req);
        Ok(())
    }

    pub fn head(&self) -> Option<&SubRequest> {
        self.queue.front()
    }

    pub fn pop(&mut self) -> Option<SubRequest> {
        self.queue.pop_front()
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.queue.len() >= FIFO_CAPACITY
    }

    pub fn iter(&self) -> impl Iterator<Item = &SubRequest> {
        self.queue.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Owner {
    Unit(usize),
    Cpu(ThreadId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Claim {
    pub range: DevRange,
    pub owner: Owner,
    pub writes: bool,
}

/// Address ranges currently being accessed on a device.
#[derive(Debug, Clone, Default)]
pub struct InflightAccessTable {
    claims: Vec<Claim>,
}

impl InflightAccessTable {
    /// Owners whose claims conflict with an access (overlap and at least one
    /// side writes).
    pub fn conflicts(&self, range: &DevRange, writes: bool) -> Vec<Owner> {
        let mut out: Vec<Owner> = Vec::new();
        for c in &self.claims {
            if c.range.overlaps(range) && (writes || c.writes) && !out.contains(&c.owner) {
                out.push(c.owner);
            }
        }
        out
    }

    pub fn claim(&mut self, range: DevRange, owner: Owner, writes: bool) -> Result<()> {
        if let Some(other) = self
            .conflicts(&range, writes)
            .into_iter()
            .find(|o| *o != owner)
        {
            return Err(Error::Protocol(format!("{range} already claimed by {other:?}")));
        }
        self.claims.push(Claim { range, owner, writes });
        Ok(())
    }

    pub fn release(&mut self, owner: Owner) -> usize {
        let before = self.claims.len();
        self.claims.retain(|c| c.owner != owner);
        before - self.claims.len()
    }

    pub fn claims(&self) -> &[Claim] {
        &self.claims
    }

    /// No two owners hold conflicting overlapping claims.
    pub fn is_exclusive(&self) -> bool {
        self.claims.iter().enumerate().all(|(i, a)| {
            self.claims[i + 1..]
                .iter()
                .all(|b| a.owner == b.owner || !a.range.overlaps(&b.range) || !(a.writes || b.writes))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitState {
    Idle,
    MetadataGen,
    DataMove,
    Done,
}

#[derive(Debug, Clone)]
pub struct NdpUnit<T> {
    pub id: usize,
    /// Sub-request held in the request register.
    pub request: Option<u64>,
    pub size: u64,
    pub started: T,
    pub setup_until: T,
    pub busy_until: T,
    pub done: bool,
}

impl<T: crate::Scalar> NdpUnit<T> {
    pub fn new(id: usize) -> Self {
        Self {
            id,
            request: None,
            size: 0,
            started: T::zero(),
            setup_until: T::zero(),
            busy_until: T::zero(),
            done: false,
        }
    }

    pub fn is_idle(&self) -> bool {
        self.request.is_none()
    }

    pub fn state_at(&self, now: T) -> UnitState {
        match self.request {
            None => UnitState::Idle,
            Some(_) if self.done || now >= self.busy_until => UnitState::Done,
            Some(_) if now < self.setup_until => UnitState::MetadataGen,
            Some(_) => UnitState::DataMove,
        }
    }

    /// Bytes moved by simulated time `now`.
    pub fn progress_at(&self, now: T) -> u64 {
        match self.state_at(now) {
            UnitState::Idle | UnitState::MetadataGen => 0,
            UnitState::Done => self.size,
            UnitState::DataMove => {
                let frac = (now - self.setup_until) / (self.busy_until - self.setup_until);
                let p = (frac * T::from_bytes(self.size)).floor().to_u64().unwrap_or(0);
                p.min(self.size)
            }
        }
    }
}

/// A CPU write-back held until the NDP accesses it conflicts with finish.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostEntry {
    /// CPU persist event that accepted the write into the queue.
    pub persist: EventId,
    pub thread: ThreadId,
    pub range: DevRange,
    pub bytes: Vec<u8>,
    /// Sub-requests that must complete before the write drains.
    pub blockers: Vec<u64>,
}

impl HostEntry {
    pub fn encoded_len(&self) -> usize {
        HOST_ENTRY_HEADER + self.bytes.len()
    }
}

#[derive(Debug, Clone, Default)]
pub struct HostQueue {
    entries: VecDeque<HostEntry>,
    bytes: usize,
}

impl HostQueue {
    pub fn fits(&self, len: usize) -> bool {
        self.bytes + HOST_ENTRY_HEADER + len <= HOST_QUEUE_BYTES
    }

    pub fn push(&mut self, e: HostEntry) -> Result<()> {
        if !self.fits(e.bytes.len()) {
            return Err(Error::Protocol("host queue full".into()));
        }
        self.bytes += e.encoded_len();
        self.entries.push_back(e);
        Ok(())
    }

    /// Removes entries whose blockers have all completed, in arrival order.
    /// An entry also waits behind any earlier entry on the same cache line.
    pub fn take_ready(&mut self, mut done: impl FnMut(u64) -> bool) -> Vec<HostEntry> {
        let mut ready = Vec::new();
        let mut kept: VecDeque<HostEntry> = VecDeque::new();
        for e in self.entries.drain(..) {
            let lines = e.range.lines(LINE);
            let behind = kept.iter().any(|k| k.range.overlaps(&lines));
            if !behind && e.blockers.iter().all(|&b| done(b)) {
                ready.push(e);
            } else {
                kept.push_back(e);
            }
        }
        self.entries = kept;
        self.bytes = self.entries.iter().map(HostEntry::encoded_len).sum();
        ready
    }

    pub fn overlapping(&self, r: &DevRange) -> impl Iterator<Item = &HostEntry> + '_ {
        let r = *r;
        self.entries.iter().filter(move |e| e.range.overlaps(&r))
    }

    /// Entries sharing a cache line with `r`.
    pub fn same_lines(&self, r: &DevRange) -> impl Iterator<Item = &HostEntry> + '_ {
        let r = r.lines(LINE);
        self.entries.iter().filter(move |e| e.range.overlaps(&r))
    }

    pub fn iter(&self) -> impl Iterator<Item = &HostEntry> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub struct Device<T> {
    pub id: DeviceId,
    pub memory: PhysicalMemory,
    pub mapping: AddressMappingTable,
    pub fifo: RequestFifo,
    pub inflight: InflightAccessTable,
    pub units: Vec<NdpUnit<T>>,
    pub host_queue: HostQueue,
    pub handler: MultiDeviceHandler<ResetItem>,
}

impl<T: crate::Scalar> Device<T> {
    pub fn new(id: DeviceId, capacity: u64, units: usize) -> Self {
        Self {
            id,
            memory: PhysicalMemory::new(capacity),
            mapping: AddressMappingTable::new(),
            fifo: RequestFifo::default(),
            inflight: InflightAccessTable::default(),
            units: (0..units).map(NdpUnit::new).collect(),
            host_queue: HostQueue::default(),
            handler: MultiDeviceHandler::new(),
        }
    }

    pub fn idle_unit(&self) -> Option<usize> {
        self.units.iter().position(NdpUnit::is_idle)
    }

    pub fn is_quiescent(&self) -> bool {
        self.fifo.is_empty() && self.host_queue.is_empty() && self.units.iter().all(NdpUnit::is_idle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitives::{PrimitiveKind, SubOp};
    use crate::translate::PoolId;

    fn req(proc: u64) -> SubRequest {
        SubRequest {
            proc,
            kind: PrimitiveKind::UndoLogCreate,
            pool: PoolId(1),
            thread: ThreadId(0),
            tx: 1,
            device: 0,
            op: SubOp::Log {
                home: DevRange::new(0, 0, 8),
                slot: 0x1000,
                seq: 0,
            },
        }
    }

    #[test]
    fn fifo_enforces_capacity_and_order() {
        let mut f = RequestFifo::default();
        for i in 0..FIFO_CAPACITY as u64 {
            f.push(req(i)).unwrap();
        }
        assert!(f.is_full());
        assert!(f.push(req(99)).is_err());
        assert_eq!(f.pop().unwrap().proc, 0);
        assert_eq!(f.head().unwrap().proc, 1);
    }

    #[test]
    fn conflicts_need_overlap_and_a_writer() {
        let mut t = InflightAccessTable::default();
        t.claim(DevRange::new(0, 0, 64), Owner::Unit(0), false).unwrap();
        assert!(t.conflicts(&DevRange::new(0, 32, 8), false).is_empty());
        assert_eq!(t.conflicts(&DevRange::new(0, 32, 8), true), vec![Owner::Unit(0)]);
        assert!(t.conflicts(&DevRange::new(0, 64, 8), true).is_empty());
        assert!(t.claim(DevRange::new(0, 0, 8), Owner::Unit(1), true).is_err());
        assert_eq!(t.release(Owner::Unit(0)), 1);
        assert!(t.is_exclusive());
    }

    #[test]
    fn host_queue_drains_after_blockers_in_order() {
        let mut q = HostQueue::default();
        let e = |p, start, blockers: Vec<u64>| HostEntry {
            persist: p,
            thread: ThreadId(0),
            range: DevRange::new(0, start, 8),
            bytes: vec![0; 8],
            blockers,
        };
        q.push(e(1, 0, vec![5])).unwrap();
        q.push(e(2, 0, vec![])).unwrap();
        q.push(e(3, 64, vec![])).unwrap();
        let r = q.take_ready(|_| false);
        assert_eq!(r.iter().map(|e| e.persist).collect::<Vec<_>>(), vec![3]);
        let r = q.take_ready(|b| b == 5);
        assert_eq!(r.iter().map(|e| e.persist).collect::<Vec<_>>(), vec![1, 2]);
        assert!(q.is_empty());
    }

    #[test]
    fn host_queue_budget() {
        let mut q = HostQueue::default();
        let mut n = 0;
        while q.fits(64) {
            q.push(HostEntry {
                persist: n,
                thread: ThreadId(0),
                range: DevRange::new(0, n * 64, 64),
                bytes: vec![0; 64],
                blockers: vec![],
            })
            .unwrap();
            n += 1;
        }
        assert_eq!(n, (HOST_QUEUE_BYTES / (HOST_ENTRY_HEADER + 64)) as u64);
    }

    #[test]
    fn unit_progress_tracks_data_move() {
        let mut u: NdpUnit<f64> = NdpUnit::new(0);
        u.request = Some(1);
        u.size = 4096;
        u.started = 0.0;
        u.setup_until = 30.0;
        u.busy_until = 30.0 + 1024.0;
        assert_eq!(u.state_at(10.0), UnitState::MetadataGen);
        assert_eq!(u.progress_at(30.0 + 512.0), 2048);
        assert_eq!(u.state_at(2000.0), UnitState::Done);
    }
}
