//! The five offloadable crash-consistency primitives and their functional
//! semantics over device memory.
//!
//! A request issued through the API is split into per-device sub-requests,
//! each small enough for one log slot, page or redo entry. Executing a
//! sub-request is a pure function of the memory it reads, which lets the
//! device pipeline and post-crash replay share one implementation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{CommitStatus, LogEntry, PoolLayout, SlotRegion, ENTRY_PREFIX, REDO_SLOT};
use crate::trace::Role;
use crate::translate::{DevAddr, DevRange, DeviceId, PoolId, ThreadId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PrimitiveKind {
    UndoLogCreate,
    ApplyRedoLog,
    CommitLog,
    CheckpointCreate,
    ShadowCopy,
}

/// Recovery data layout a pool uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Undo,
    Redo,
    Checkpoint,
    Shadow,
}

impl Mechanism {
    pub fn tag(self) -> u8 {
        match self {
            Mechanism::Undo => 0,
            Mechanism::Redo => 1,
            Mechanism::Checkpoint => 2,
            Mechanism::Shadow => 3,
        }
    }

    pub fn from_tag(t: u8) -> Result<Self> {
        Ok(match t {
            0 => Mechanism::Undo,
            1 => Mechanism::Redo,
            2 => Mechanism::Checkpoint,
            3 => Mechanism::Shadow,
            _ => return Err(Error::Recovery(format!("unknown mechanism tag {t}"))),
        })
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mechanism::Undo => "undo",
            Mechanism::Redo => "redo",
            Mechanism::Checkpoint => "checkpoint",
            Mechanism::Shadow => "shadow",
        })
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "undo" => Ok(Mechanism::Undo),
            "redo" => Ok(Mechanism::Redo),
            "checkpoint" => Ok(Mechanism::Checkpoint),
            "shadow" => Ok(Mechanism::Shadow),
            _ => Err(Error::Recovery(format!("unknown mechanism {s:?}"))),
        }
    }
}

/// An API-level command before translation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NdpRequest {
    pub kind: PrimitiveKind,
    pub pool: PoolId,
    pub thread: ThreadId,
    pub vaddr: u64,
    pub size: u64,
    pub seq: u64,
}

impl NdpRequest {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 && self.kind != PrimitiveKind::CommitLog {
            return Err(Error::Protocol(format!("{:?} with zero size", self.kind)));
        }
        Ok(())
    }
}

/// Device-local work of one sub-request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SubOp {
    /// Copy `home` into a log entry at `slot` (undo log or checkpoint).
    Log { home: DevRange, slot: u64, seq: u32 },
    /// Copy the page currently at `src` into the shadow entry at `slot`.
    Shadow { page: u64, src: u64, slot: u64, seq: u32 },
    /// Copy the committed redo entry at `slot` to its home location.
    Apply { slot: u64 },
    /// Local part of a transaction commit.
    Commit { mechanism: Mechanism, participants: Vec<DeviceId> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubRequest {
    pub proc: u64,
    pub kind: PrimitiveKind,
    pub pool: PoolId,
    pub thread: ThreadId,
    pub tx: u64,
    pub device: DeviceId,
    pub op: SubOp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessKind {
    Read,
    Write,
}

/// One memory access performed by a sub-request, in execution order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Access {
    pub kind: AccessKind,
    pub range: DevRange,
    pub bytes: Vec<u8>,
    pub role: Role,
    pub shared: bool,
}

/// Transaction ids carry the issuing thread in their top bits so redo
/// recovery can match entries to per-thread commit words.
pub fn make_tx(thread: ThreadId, counter: u64) -> u64 {
    ((thread.0 as u64) << 48) | (counter & ((1 << 48) - 1))
}

pub fn tx_thread(tx: u64) -> ThreadId {
    ThreadId((tx >> 48) as u16)
}

/// Whether CPU-side code may access the range (as opposed to NDP-managed
/// recovery data).
pub fn is_shared(layout: &PoolLayout, r: &DevRange) -> bool {
    layout.ndp_region_of(r).is_none()
}

/// Splits a write into persist units that never cross a `chunk` or cache
/// line boundary.
pub fn chunked(start: DevAddr, bytes: &[u8], chunk: u64) -> Vec<(DevAddr, Vec<u8>)> {
    let chunk = chunk.max(1);
    let mut out = Vec::new();
    let mut off = 0u64;
    while off < bytes.len() as u64 {
        let a = start.local + off;
        let next = ((a / chunk) + 1) * chunk;
        let line = ((a / 64) + 1) * 64;
        let end = next.min(line).min(start.local + bytes.len() as u64);
        out.push((
            DevAddr::new(start.device, a),
            bytes[off as usize..(end - start.local) as usize].to_vec(),
        ));
        off = end - start.local;
    }
    out
}

/// Writes of an entry in a crash-safe order: home offset and payload, then
/// the id word, then the length and sequence, and the status byte last.
pub fn entry_writes(at: DevAddr, entry: &LogEntry, chunk: u64, role: Role, shared: bool) -> Vec<Access> {
    let enc = entry.encode();
    let mut parts: Vec<(DevAddr, Vec<u8>)> = chunked(at.offset(16), &enc[16..], chunk);
    parts.push((at, enc[0..8].to_vec()));
    parts.push((at.offset(9), enc[9..16].to_vec()));
    parts.push((at.offset(8), vec![enc[8]]));
    parts
        .into_iter()
        .map(|(a, b)| Access {
            kind: AccessKind::Write,
            range: DevRange::at(a, b.len() as u64),
            bytes: b,
            role,
            shared,
        })
        .collect()
}

/// Executes a data-moving sub-request against persisted device memory.
/// Commit sub-requests have no data effect here; see [`reset_items`].
pub fn execute(
    req: &SubRequest,
    layout: &PoolLayout,
    chunk: u64,
    read: &mut dyn FnMut(DevRange) -> Vec<u8>,
) -> Result<Vec<Access>> {
    let dev = req.device;
    let read_access = |range: DevRange, shared: bool| Access {
        kind: AccessKind::Read,
        range,
        bytes: Vec::new(),
        role: Role::Data,
        shared,
    };
    match &req.op {
        SubOp::Log { home, slot, seq } => {
            let payload = read(*home);
            let entry = LogEntry {
                object_id: req.tx,
                commit_status: CommitStatus::Active,
                seq: *seq,
                offset: layout.home_offset(DevAddr::new(dev, home.start)),
                payload,
            };
            let mut out = vec![read_access(*home, is_shared(layout, home))];
            out.extend(entry_writes(DevAddr::new(dev, *slot), &entry, chunk, Role::Log, false));
            Ok(out)
        }
        SubOp::Shadow { page, src, slot, seq } => {
            let src_range = DevRange::new(dev, *src, layout.page_size);
            let payload = read(src_range);
            let entry = LogEntry {
                object_id: req.tx,
                commit_status: CommitStatus::Active,
                seq: *seq,
                offset: page * layout.page_size,
                payload,
            };
            let mut out = vec![read_access(src_range, true)];
            out.extend(entry_writes(DevAddr::new(dev, *slot), &entry, chunk, Role::Log, true));
            Ok(out)
        }
        SubOp::Apply { slot } => {
            let range = DevRange::new(dev, *slot, REDO_SLOT);
            let raw = read(range);
            let entry = LogEntry::decode(&raw)
                .ok_or_else(|| Error::Protocol(format!("no redo entry at {range}")))?;
            if entry.commit_status != CommitStatus::Committed {
                return Err(Error::Protocol(format!(
                    "applying redo entry of transaction {} in state {:?}",
                    entry.object_id, entry.commit_status
                )));
            }
            let home = layout.home_addr(dev, entry.offset);
            let mut out = vec![read_access(DevRange::new(dev, *slot, entry.encoded_len()), true)];
            out.extend(chunked(home, &entry.payload, chunk).into_iter().map(|(a, b)| Access {
                kind: AccessKind::Write,
                range: DevRange::at(a, b.len() as u64),
                bytes: b,
                role: Role::Data,
                shared: true,
            }));
            Ok(out)
        }
        SubOp::Commit { .. } => Ok(Vec::new()),
    }
}

/// Payload bytes a sub-request moves, for timing.
pub fn moved_bytes(req: &SubRequest, layout: &PoolLayout) -> u64 {
    match &req.op {
        SubOp::Log { home, .. } => home.len + ENTRY_PREFIX,
        SubOp::Shadow { .. } => layout.page_size + ENTRY_PREFIX,
        SubOp::Apply { .. } => REDO_SLOT,
        SubOp::Commit { .. } => 0,
    }
}

/// A recovery-data invalidation (log tombstone or page switch).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResetItem {
    pub addr: DevAddr,
    pub bytes: Vec<u8>,
    /// Slots that become free once the write persists.
    pub frees: Vec<u64>,
    /// The write replaces a page reference; the slot it pointed to at the
    /// time of the write is freed too.
    pub replaces: bool,
}

impl ResetItem {
    /// Slot named by a page reference word, if it points to one.
    pub fn referenced_slot(word: &[u8]) -> Option<u64> {
        let v = u64::from_le_bytes(word[..8].try_into().expect("eight bytes"));
        (v != 0).then(|| v - 1 - ENTRY_PREFIX)
    }
}

fn scan_region(
    dev: DeviceId,
    region: &SlotRegion,
    read: &mut dyn FnMut(DevRange) -> Vec<u8>,
) -> Vec<(u64, LogEntry)> {
    (0..region.slots)
        .filter_map(|i| {
            let at = region.slot(i);
            LogEntry::decode(&read(DevRange::new(dev, at, region.slot_size))).map(|e| (at, e))
        })
        .collect()
}

/// Every decodable entry of the pool's recovery regions on one device.
pub fn scan_entries(
    layout: &PoolLayout,
    mechanism: Mechanism,
    dev: DeviceId,
    read: &mut dyn FnMut(DevRange) -> Vec<u8>,
) -> Vec<(u64, LogEntry)> {
    let regs = &layout.regions[dev];
    match mechanism {
        Mechanism::Undo => scan_region(dev, &regs.undo, read),
        Mechanism::Checkpoint => scan_region(dev, &regs.checkpoint, read),
        Mechanism::Shadow => scan_region(dev, &regs.shadow, read),
        Mechanism::Redo => layout
            .redo_slots_on(dev)
            .into_iter()
            .filter_map(|v| {
                let at = layout.locate(v).local;
                LogEntry::decode(&read(DevRange::new(dev, at, REDO_SLOT))).map(|e| (at, e))
            })
            .collect(),
    }
}

/// Invalidations that retire transaction `tx` on device `dev`.
pub fn reset_items(
    layout: &PoolLayout,
    mechanism: Mechanism,
    dev: DeviceId,
    tx: u64,
    read: &mut dyn FnMut(DevRange) -> Vec<u8>,
) -> Vec<ResetItem> {
    let entries = scan_entries(layout, mechanism, dev, read);
    let live = |e: &LogEntry| {
        e.object_id == tx && matches!(e.commit_status, CommitStatus::Active | CommitStatus::Committed)
    };
    match mechanism {
        Mechanism::Shadow => {
            // newest shadow of each page wins; older ones of the same
            // transaction were replaced before the switch
            let mut newest: BTreeMap<u64, (u32, u64)> = BTreeMap::new();
            let mut replaced: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
            for (at, e) in entries.iter().filter(|(_, e)| live(e)) {
                let page = e.offset / layout.page_size;
                match newest.get(&page) {
                    Some(&(s, _)) if s > e.seq => replaced.entry(page).or_default().push(*at),
                    Some(&(_, old)) => {
                        replaced.entry(page).or_default().push(old);
                        newest.insert(page, (e.seq, *at));
                    }
                    None => {
                        newest.insert(page, (e.seq, *at));
                    }
                }
            }
            newest
                .into_iter()
                .map(|(page, (_, slot))| {
                    ResetItem {
                        addr: layout.pageref_addr(dev, page),
                        bytes: (slot + ENTRY_PREFIX + 1).to_le_bytes().to_vec(),
                        frees: replaced.remove(&page).unwrap_or_default(),
                        replaces: true,
                    }
                })
                .collect()
        }
        _ => entries
            .into_iter()
            .filter(|(_, e)| live(e))
            .map(|(at, _)| ResetItem {
                addr: DevAddr::new(dev, at + 8),
                bytes: vec![CommitStatus::Invalid.to_byte()],
                frees: vec![at],
                replaces: false,
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_respect_alignment_and_lines() {
        let parts = chunked(DevAddr::new(0, 60), &[7u8; 12], 8);
        let spans: Vec<(u64, usize)> = parts.iter().map(|(a, b)| (a.local, b.len())).collect();
        assert_eq!(spans, vec![(60, 4), (64, 8)]);
        let bytes = chunked(DevAddr::new(1, 3), &[1u8; 5], 1);
        assert_eq!(bytes.len(), 5);
    }

    #[test]
    fn entry_status_byte_is_written_last() {
        let e = LogEntry {
            object_id: 9,
            commit_status: CommitStatus::Active,
            seq: 1,
            offset: 16,
            payload: vec![5; 8],
        };
        let w = entry_writes(DevAddr::new(0, 0x100), &e, 8, Role::Log, false);
        let last = w.last().unwrap();
        assert_eq!(last.range, DevRange::new(0, 0x108, 1));
        assert_eq!(last.bytes, vec![CommitStatus::Active.to_byte()]);
        let total: u64 = w.iter().map(|a| a.range.len).sum();
        assert_eq!(total, e.encoded_len());
    }

    #[test]
    fn tx_ids_encode_thread() {
        let tx = make_tx(ThreadId(3), 77);
        assert_eq!(tx_thread(tx), ThreadId(3));
        assert!(make_tx(ThreadId(3), 78) > tx);
    }

    #[test]
    fn mechanism_tags_round_trip() {
        for m in [Mechanism::Undo, Mechanism::Redo, Mechanism::Checkpoint, Mechanism::Shadow] {
            assert_eq!(Mechanism::from_tag(m.tag()).unwrap(), m);
            assert_eq!(m.to_string().parse::<Mechanism>().unwrap(), m);
        }
        assert!(Mechanism::from_tag(9).is_err());
    }
}
