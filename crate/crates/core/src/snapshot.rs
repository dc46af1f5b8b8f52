//! Battery-backed persistence domain contents saved at a crash.
//!
//! Per device the snapshot holds the request FIFO, the in-flight request
//! registers of the NDP units, the host write queue, the address mapping
//! table and the outstanding synchronization entries. Every item carries an
//! arrival order so recovery can replay them as they were accepted.

use std::collections::BTreeSet;

use crate::device::{FIFO_CAPACITY, FIFO_ENTRY_BYTES, HOST_ENTRY_HEADER, HOST_QUEUE_BYTES, MAX_OUTSTANDING_SYNCS};
use crate::error::{Error, Result};
use crate::primitives::{Mechanism, PrimitiveKind, SubOp, SubRequest};
use crate::translate::{DevRange, DeviceId, PoolId, ThreadId, MAPPING_TABLE_BYTES};

pub const FIFO_REGION_BYTES: usize = FIFO_CAPACITY * FIFO_ENTRY_BYTES;
pub const INFLIGHT_REGION_BYTES: usize = crate::device::INFLIGHT_REGISTER_BYTES;
pub const SYNC_ENTRY_BYTES: usize = 21;
pub const SYNC_REGION_BYTES: usize = MAX_OUTSTANDING_SYNCS * SYNC_ENTRY_BYTES;
/// Upper bound for one device's saved state.
pub const DEVICE_SNAPSHOT_BYTES: usize = 7 * 1024;

const MAGIC: &[u8; 4] = b"NPMS";
const HEADER_BYTES: usize = 4 + 1 + 1 + 1 + 1 + 2 + 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapRequest {
    /// Acceptance order across the whole device group.
    pub order: u64,
    pub req: SubRequest,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapHostEntry {
    pub order: u64,
    pub thread: ThreadId,
    pub range: DevRange,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapSync {
    pub tx: u64,
    pub pool: PoolId,
    pub mechanism: Mechanism,
    pub participants: BTreeSet<DeviceId>,
    pub received: BTreeSet<DeviceId>,
    /// Completion of the whole group was recorded on this device.
    pub completed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DeviceSnapshot {
    pub device: DeviceId,
    /// Accepted but not yet dispatched.
    pub fifo: Vec<SnapRequest>,
    /// Dispatched but not finished.
    pub inflight: Vec<SnapRequest>,
    pub host_queue: Vec<SnapHostEntry>,
    pub mapping: Vec<u8>,
    pub syncs: Vec<SnapSync>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PersistenceDomainSnapshot {
    pub devices: Vec<DeviceSnapshot>,
}

fn bitmap(set: &BTreeSet<DeviceId>) -> Result<u32> {
    let mut b = 0u32;
    for &d in set {
        if d >= 32 {
            return Err(Error::Snapshot(format!("device {d} does not fit the participant bitmap")));
        }
        b |= 1 << d;
    }
    Ok(b)
}

fn unbitmap(b: u32) -> BTreeSet<DeviceId> {
    (0..32).filter(|i| b & (1 << i) != 0).collect()
}

fn kind_tag(k: PrimitiveKind) -> u8 {
    match k {
        PrimitiveKind::UndoLogCreate => 0,
        PrimitiveKind::ApplyRedoLog => 1,
        PrimitiveKind::CommitLog => 2,
        PrimitiveKind::CheckpointCreate => 3,
        PrimitiveKind::ShadowCopy => 4,
    }
}

fn kind_from(t: u8) -> Result<PrimitiveKind> {
    Ok(match t {
        0 => PrimitiveKind::UndoLogCreate,
        1 => PrimitiveKind::ApplyRedoLog,
        2 => PrimitiveKind::CommitLog,
        3 => PrimitiveKind::CheckpointCreate,
        4 => PrimitiveKind::ShadowCopy,
        _ => return Err(Error::Snapshot(format!("unknown request kind {t}"))),
    })
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.buf.len() {
            return Err(Error::Snapshot(format!("truncated at byte {}", self.at)));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn encode_request(r: &SnapRequest, device: DeviceId) -> Result<[u8; FIFO_ENTRY_BYTES]> {
    let q = &r.req;
    if q.device != device {
        return Err(Error::Snapshot(format!("request {} saved on the wrong device", q.proc)));
    }
    let mut v = Vec::with_capacity(FIFO_ENTRY_BYTES);
    v.extend_from_slice(&r.order.to_le_bytes());
    v.extend_from_slice(&q.proc.to_le_bytes());
    v.extend_from_slice(&q.tx.to_le_bytes());
    v.extend_from_slice(&q.pool.0.to_le_bytes());
    v.extend_from_slice(&q.thread.0.to_le_bytes());
    v.push(kind_tag(q.kind));
    match &q.op {
        SubOp::Log { home, slot, seq } => {
            v.push(0);
            v.extend_from_slice(&home.start.to_le_bytes());
            v.extend_from_slice(&(home.len as u32).to_le_bytes());
            v.extend_from_slice(&slot.to_le_bytes());
            v.extend_from_slice(&seq.to_le_bytes());
        }
        SubOp::Shadow { page, src, slot, seq } => {
            v.push(1);
            v.extend_from_slice(&(*page as u32).to_le_bytes());
            v.extend_from_slice(&src.to_le_bytes());
            v.extend_from_slice(&slot.to_le_bytes());
            v.extend_from_slice(&seq.to_le_bytes());
        }
        SubOp::Apply { slot } => {
            v.push(2);
            v.extend_from_slice(&slot.to_le_bytes());
        }
        SubOp::Commit { mechanism, participants } => {
            v.push(3);
            v.push(mechanism.tag());
            let set: BTreeSet<DeviceId> = participants.iter().copied().collect();
            v.extend_from_slice(&bitmap(&set)?.to_le_bytes());
        }
    }
    debug_assert!(v.len() <= FIFO_ENTRY_BYTES);
    let mut out = [0u8; FIFO_ENTRY_BYTES];
    out[..v.len()].copy_from_slice(&v);
    Ok(out)
}

fn decode_request(raw: &[u8], device: DeviceId) -> Result<SnapRequest> {
    let mut r = Reader { buf: raw, at: 0 };
    let order = r.u64()?;
    let proc = r.u64()?;
    let tx = r.u64()?;
    let pool = PoolId(r.u16()?);
    let thread = ThreadId(r.u16()?);
    let kind = kind_from(r.u8()?)?;
    let op = match r.u8()? {
        0 => {
            let start = r.u64()?;
            let len = r.u32()? as u64;
            SubOp::Log {
                home: DevRange::new(device, start, len),
                slot: r.u64()?,
                seq: r.u32()?,
            }
        }
        1 => SubOp::Shadow {
            page: r.u32()? as u64,
            src: r.u64()?,
            slot: r.u64()?,
            seq: r.u32()?,
        },
        2 => SubOp::Apply { slot: r.u64()? },
        3 => {
            let mechanism = Mechanism::from_tag(r.u8()?).map_err(|e| Error::Snapshot(e.to_string()))?;
            SubOp::Commit {
                mechanism,
                participants: unbitmap(r.u32()?).into_iter().collect(),
            }
        }
        t => return Err(Error::Snapshot(format!("unknown request operation {t}"))),
    };
    Ok(SnapRequest {
        order,
        req: SubRequest {
            proc,
            kind,
            pool,
            thread,
            tx,
            device,
            op,
        },
    })
}

impl DeviceSnapshot {
    pub fn host_bytes(&self) -> usize {
        self.host_queue
            .iter()
            .map(|e| HOST_ENTRY_HEADER + e.bytes.len())
            .sum()
    }

    fn check_budgets(&self) -> Result<()> {
        let over = |what: &str, used: usize, cap: usize| -> Result<()> {
            if used > cap {
                Err(Error::Snapshot(format!(
                    "device {} {what} needs {used} bytes, budget is {cap}",
                    self.device
                )))
            } else {
                Ok(())
            }
        };
        over("request FIFO", self.fifo.len() * FIFO_ENTRY_BYTES, FIFO_REGION_BYTES)?;
        over("in-flight registers", self.inflight.len() * FIFO_ENTRY_BYTES, INFLIGHT_REGION_BYTES)?;
        over("host queue", self.host_bytes(), HOST_QUEUE_BYTES)?;
        over("mapping table", self.mapping.len(), MAPPING_TABLE_BYTES)?;
        over("sync entries", self.syncs.len() * SYNC_ENTRY_BYTES, SYNC_REGION_BYTES)?;
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        self.check_budgets()?;
        let mut v = Vec::new();
        v.extend_from_slice(MAGIC);
        v.push(self.device as u8);
        v.push(self.fifo.len() as u8);
        v.push(self.inflight.len() as u8);
        v.push(self.syncs.len() as u8);
        v.extend_from_slice(&(self.host_queue.len() as u16).to_le_bytes());
        v.extend_from_slice(&(self.mapping.len() as u16).to_le_bytes());
        for r in self.fifo.iter().chain(&self.inflight) {
            v.extend_from_slice(&encode_request(r, self.device)?);
        }
        for e in &self.host_queue {
            if e.range.start > u32::MAX as u64 || e.bytes.len() != e.range.len as usize {
                return Err(Error::Snapshot("malformed host queue entry".into()));
            }
            v.extend_from_slice(&e.order.to_le_bytes());
            v.extend_from_slice(&(e.range.start as u32).to_le_bytes());
            v.extend_from_slice(&(e.bytes.len() as u16).to_le_bytes());
            v.extend_from_slice(&e.thread.0.to_le_bytes());
            v.extend_from_slice(&e.bytes);
        }
        v.extend_from_slice(&self.mapping);
        for s in &self.syncs {
            v.extend_from_slice(&s.tx.to_le_bytes());
            v.extend_from_slice(&(s.pool.0 as u32).to_le_bytes());
            v.push(s.mechanism.tag() | if s.completed { 0x80 } else { 0 });
            v.extend_from_slice(&bitmap(&s.participants)?.to_le_bytes());
            v.extend_from_slice(&bitmap(&s.received)?.to_le_bytes());
        }
        if v.len() - HEADER_BYTES > DEVICE_SNAPSHOT_BYTES {
            return Err(Error::Snapshot(format!("device {} snapshot is {} bytes", self.device, v.len())));
        }
        Ok(v)
    }

    pub fn decode(raw: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: raw, at: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Snapshot("bad magic".into()));
        }
        let device = r.u8()? as DeviceId;
        let nf = r.u8()? as usize;
        let ni = r.u8()? as usize;
        let ns = r.u8()? as usize;
        let nh = r.u16()? as usize;
        let nm = r.u16()? as usize;
        let mut s = DeviceSnapshot {
            device,
            ..Default::default()
        };
        for i in 0..nf + ni {
            let req = decode_request(r.take(FIFO_ENTRY_BYTES)?, device)?;
            if i < nf {
                s.fifo.push(req);
            } else {
                s.inflight.push(req);
            }
        }
        for _ in 0..nh {
            let order = r.u64()?;
            let start = r.u32()? as u64;
            let len = r.u16()? as usize;
            let thread = ThreadId(r.u16()?);
            let bytes = r.take(len)?.to_vec();
            s.host_queue.push(SnapHostEntry {
                order,
                thread,
                range: DevRange::new(device, start, len as u64),
                bytes,
            });
        }
        s.mapping = r.take(nm)?.to_vec();
        for _ in 0..ns {
            let tx = r.u64()?;
            let pool = PoolId(r.u32()? as u16);
            let m = r.u8()?;
            let mechanism = Mechanism::from_tag(m & 0x7f).map_err(|e| Error::Snapshot(e.to_string()))?;
            s.syncs.push(SnapSync {
                tx,
                pool,
                mechanism,
                completed: m & 0x80 != 0,
                participants: unbitmap(r.u32()?),
                received: unbitmap(r.u32()?),
            });
        }
        if r.at != raw.len() {
            return Err(Error::Snapshot(format!("{} trailing bytes", raw.len() - r.at)));
        }
        s.check_budgets()?;
        Ok(s)
    }
}

impl PersistenceDomainSnapshot {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.devices.len() as u16).to_le_bytes());
        for d in &self.devices {
            let b = d.encode()?;
            out.extend_from_slice(&(b.len() as u32).to_le_bytes());
            out.extend_from_slice(&b);
        }
        Ok(out)
    }

    pub fn decode(raw: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: raw, at: 0 };
        let n = r.u16()? as usize;
        let mut devices = Vec::with_capacity(n);
        for _ in 0..n {
            let len = r.u32()? as usize;
            devices.push(DeviceSnapshot::decode(r.take(len)?)?);
        }
        if r.at != raw.len() {
            return Err(Error::Snapshot("trailing bytes after last device".into()));
        }
        Ok(Self { devices })
    }

    /// Transactions whose group completion is recorded on any device.
    pub fn completed_txs(&self) -> BTreeSet<u64> {
        self.devices
            .iter()
            .flat_map(|d| d.syncs.iter().filter(|s| s.completed).map(|s| s.tx))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(proc: u64, op: SubOp) -> SnapRequest {
        SnapRequest {
            order: proc * 3,
            req: SubRequest {
                proc,
                kind: PrimitiveKind::UndoLogCreate,
                pool: PoolId(2),
                thread: ThreadId(1),
                tx: 77,
                device: 1,
                op,
            },
        }
    }

    fn sample() -> DeviceSnapshot {
        DeviceSnapshot {
            device: 1,
            fifo: vec![req(
                4,
                SubOp::Log {
                    home: DevRange::new(1, 0x100, 64),
                    slot: 0x9000,
                    seq: 3,
                },
            )],
            inflight: vec![
                req(
                    2,
                    SubOp::Shadow {
                        page: 5,
                        src: 0x500,
                        slot: 0xa000,
                        seq: 1,
                    },
                ),
                req(
                    3,
                    SubOp::Commit {
                        mechanism: Mechanism::Shadow,
                        participants: vec![0, 1],
                    },
                ),
            ],
            host_queue: vec![SnapHostEntry {
                order: 9,
                thread: ThreadId(1),
                range: DevRange::new(1, 0x140, 8),
                bytes: vec![1, 2, 3, 4, 5, 6, 7, 8],
            }],
            mapping: vec![0xab; 32],
            syncs: vec![SnapSync {
                tx: 77,
                pool: PoolId(2),
                mechanism: Mechanism::Undo,
                participants: [0, 1].into(),
                received: [1].into(),
                completed: true,
            }],
        }
    }

    #[test]
    fn round_trips() {
        let s = PersistenceDomainSnapshot {
            devices: vec![sample()],
        };
        let raw = s.encode().unwrap();
        assert_eq!(PersistenceDomainSnapshot::decode(&raw).unwrap(), s);
        assert_eq!(s.completed_txs(), [77].into());
    }

    #[test]
    fn budgets_are_enforced() {
        let mut s = sample();
        s.inflight = (0..5).map(|i| req(i, SubOp::Apply { slot: 0 })).collect();
        assert!(matches!(s.encode(), Err(Error::Snapshot(_))));
        let mut s = sample();
        s.host_queue = (0..20)
            .map(|i| SnapHostEntry {
                order: i,
                thread: ThreadId(0),
                range: DevRange::new(1, 0, 256),
                bytes: vec![0; 256],
            })
            .collect();
        assert!(matches!(s.encode(), Err(Error::Snapshot(_))));
    }

    #[test]
    fn full_device_fits_seven_kib() {
        assert_eq!(
            FIFO_REGION_BYTES + MAPPING_TABLE_BYTES + INFLIGHT_REGION_BYTES + HOST_QUEUE_BYTES + SYNC_REGION_BYTES,
            DEVICE_SNAPSHOT_BYTES
        );
        assert_eq!(SYNC_REGION_BYTES, 336);
    }

    #[test]
    fn corruption_is_detected() {
        let raw = sample().encode().unwrap();
        assert!(DeviceSnapshot::decode(&raw[..raw.len() - 1]).is_err());
        let mut bad = raw.clone();
        bad[0] = b'X';
        assert!(DeviceSnapshot::decode(&bad).is_err());
    }
}
