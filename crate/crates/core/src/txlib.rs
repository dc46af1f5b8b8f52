//! Failure-atomic transactions on top of the offloaded primitives.
//!
//! A [`Transaction`] handle belongs to one thread and one pool and picks the
//! primitive sequence for the pool's mechanism:
//!
//! * undo: log the old bytes of a range before its first update
//! * checkpoint: same, at page granularity
//! * shadow: copy a page once, then update the copy in place
//! * redo: buffer updates; at commit write redo entries, set the thread's
//!   commit word and let the devices apply them

use std::collections::{BTreeMap, BTreeSet};

use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::layout::{CommitStatus, LogEntry, ENTRY_PREFIX, REDO_SLOT};
use crate::primitives::Mechanism;
use crate::scalar::Scalar;
use crate::translate::{PoolId, ThreadId};

/// Largest redo payload per entry.
pub const REDO_PAYLOAD: u64 = REDO_SLOT - ENTRY_PREFIX;

/// Half-open intervals already covered in the current transaction.
#[derive(Debug, Clone, Default)]
struct Covered(Vec<(u64, u64)>);

impl Covered {
    fn gaps(&self, start: u64, end: u64) -> Vec<(u64, u64)> {
        let mut out = Vec::new();
        let mut cur = start;
        for &(s, e) in &self.0 {
            if e <= cur {
                continue;
            }
            if s >= end {
                break;
            }
            if s > cur {
                out.push((cur, s));
            }
            cur = cur.max(e);
        }
        if cur < end {
            out.push((cur, end));
        }
        out
    }

    fn insert(&mut self, start: u64, end: u64) {
        self.0.push((start, end));
        self.0.sort_unstable();
        let mut merged: Vec<(u64, u64)> = Vec::with_capacity(self.0.len());
        for &(s, e) in &self.0 {
            match merged.last_mut() {
                Some(last) if s <= last.1 => last.1 = last.1.max(e),
                _ => merged.push((s, e)),
            }
        }
        self.0 = merged;
    }
}

#[derive(Debug, Clone)]
pub struct Transaction {
    pool: PoolId,
    thread: ThreadId,
    mechanism: Mechanism,
    tx: Option<u64>,
    logged: Covered,
    pages: BTreeSet<u64>,
    redo: BTreeMap<u64, Vec<u8>>,
}

impl Transaction {
    pub fn new<T: Scalar>(engine: &Engine<T>, pool: PoolId, thread: ThreadId) -> Result<Self> {
        Ok(Self {
            pool,
            thread,
            mechanism: engine.pool_mechanism(pool)?,
            tx: None,
            logged: Covered::default(),
            pages: BTreeSet::new(),
            redo: BTreeMap::new(),
        })
    }

    pub fn mechanism(&self) -> Mechanism {
        self.mechanism
    }

    pub fn id(&self) -> Option<u64> {
        self.tx
    }

    pub fn begin<T: Scalar>(&mut self, e: &mut Engine<T>) -> Result<u64> {
        if self.tx.is_some() {
            return Err(Error::Protocol("transaction already open".into()));
        }
        let tx = e.begin_tx(self.thread, self.pool)?;
        self.tx = Some(tx);
        Ok(tx)
    }

    fn open(&self) -> Result<u64> {
        self.tx.ok_or_else(|| Error::Protocol("no open transaction".into()))
    }

    fn page_span<T: Scalar>(&self, e: &Engine<T>, vaddr: u64, len: u64) -> Result<(u64, u64, u64)> {
        let ps = e.layout(self.pool)?.page_size;
        Ok((vaddr / ps * ps, (vaddr + len).div_ceil(ps) * ps, ps))
    }

    /// Failure-atomic update of `[vaddr, vaddr + bytes.len())`.
    pub fn write<T: Scalar>(&mut self, e: &mut Engine<T>, vaddr: u64, bytes: &[u8]) -> Result<()> {
        self.open()?;
        let len = bytes.len() as u64;
        if len == 0 {
            return Ok(());
        }
        e.layout(self.pool)?.check_data(vaddr, len)?;
        match self.mechanism {
            Mechanism::Undo => {
                for (s, end) in self.logged.gaps(vaddr, vaddr + len) {
                    e.undolg_create(self.thread, self.pool, s, end - s)?;
                }
                self.logged.insert(vaddr, vaddr + len);
                e.cpu_write(self.thread, self.pool, vaddr, bytes)
            }
            Mechanism::Checkpoint => {
                let (first, end, ps) = self.page_span(e, vaddr, len)?;
                let mut run: Option<(u64, u64)> = None;
                for p in (first..end).step_by(ps as usize) {
                    if self.pages.insert(p) {
                        run = match run {
                            Some((s, l)) if s + l == p => Some((s, l + ps)),
                            Some((s, l)) => {
                                e.ckpoint_create(self.thread, self.pool, s, l)?;
                                Some((p, ps))
                            }
                            None => Some((p, ps)),
                        };
                    }
                }
                if let Some((s, l)) = run {
                    e.ckpoint_create(self.thread, self.pool, s, l)?;
                }
                e.cpu_write(self.thread, self.pool, vaddr, bytes)
            }
            Mechanism::Shadow => {
                let (first, end, ps) = self.page_span(e, vaddr, len)?;
                for p in (first..end).step_by(ps as usize) {
                    if self.pages.insert(p) {
                        e.shadowcpy(self.thread, self.pool, p, ps)?;
                    }
                }
                e.cpu_write(self.thread, self.pool, vaddr, bytes)
            }
            Mechanism::Redo => {
                self.buffer(vaddr, bytes);
                Ok(())
            }
        }
    }

    fn buffer(&mut self, vaddr: u64, bytes: &[u8]) {
        let end = vaddr + bytes.len() as u64;
        // merge with every overlapping or adjacent buffered write
        let mut start = vaddr;
        let mut stop = end;
        let touching: Vec<u64> = self
            .redo
            .iter()
            .filter(|(s, b)| **s <= end && **s + b.len() as u64 >= vaddr)
            .map(|(s, _)| *s)
            .collect();
        for s in &touching {
            let b = &self.redo[s];
            start = start.min(*s);
            stop = stop.max(*s + b.len() as u64);
        }
        let mut merged = vec![0u8; (stop - start) as usize];
        for s in touching {
            let b = self.redo.remove(&s).expect("buffered");
            let o = (s - start) as usize;
            merged[o..o + b.len()].copy_from_slice(&b);
        }
        let o = (vaddr - start) as usize;
        merged[o..o + bytes.len()].copy_from_slice(bytes);
        self.redo.insert(start, merged);
    }

    /// Reads through the transaction's own pending updates.
    pub fn read<T: Scalar>(&mut self, e: &mut Engine<T>, vaddr: u64, len: u64) -> Result<Vec<u8>> {
        let mut out = e.cpu_read(self.thread, self.pool, vaddr, len)?;
        for (s, b) in &self.redo {
            let (bs, be) = (*s, *s + b.len() as u64);
            let (lo, hi) = (bs.max(vaddr), be.min(vaddr + len));
            if lo < hi {
                out[(lo - vaddr) as usize..(hi - vaddr) as usize]
                    .copy_from_slice(&b[(lo - bs) as usize..(hi - bs) as usize]);
            }
        }
        Ok(out)
    }

    pub fn commit<T: Scalar>(&mut self, e: &mut Engine<T>) -> Result<()> {
        let tx = self.open()?;
        if self.mechanism == Mechanism::Redo {
            self.commit_redo(e, tx)?;
        }
        e.commit_log(self.thread, self.pool)?;
        self.tx = None;
        self.logged = Covered::default();
        self.pages.clear();
        self.redo.clear();
        Ok(())
    }

    fn commit_redo<T: Scalar>(&mut self, e: &mut Engine<T>, tx: u64) -> Result<()> {
        if self.redo.is_empty() {
            return Ok(());
        }
        let layout = e.layout(self.pool)?.clone();
        let (t, pool) = (self.thread, self.pool);
        let mut slots = Vec::new();
        let mut seq = 0u32;
        for (vaddr, bytes) in std::mem::take(&mut self.redo) {
            let mut off = 0u64;
            for piece in layout.chunks(vaddr, bytes.len() as u64) {
                let mut cur = piece.start;
                while cur < piece.end() {
                    let n = REDO_PAYLOAD.min(piece.end() - cur);
                    let home = crate::translate::DevAddr::new(piece.device, cur);
                    seq += 1;
                    let entry = LogEntry {
                        object_id: tx,
                        commit_status: CommitStatus::Active,
                        seq,
                        offset: layout.home_offset(home),
                        payload: bytes[off as usize..(off + n) as usize].to_vec(),
                    };
                    let slot = e.alloc_redo_slot(t, pool, piece.device)?;
                    e.write_entry(t, pool, slot, &entry)?;
                    slots.push(slot);
                    off += n;
                    cur += n;
                }
            }
        }
        for &s in &slots {
            e.cpu_flush(t, pool, s, REDO_SLOT)?;
        }
        let word = layout.redo_commit_word(t);
        e.cpu_write(t, pool, word, &tx.to_le_bytes())?;
        e.cpu_flush(t, pool, word, 8)?;
        for &s in &slots {
            e.cpu_write(t, pool, s + 8, &[CommitStatus::Committed.to_byte()])?;
        }
        for &s in &slots {
            e.applylog(t, pool, s, REDO_SLOT)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checker::check_trace;
    use crate::engine::{EngineConfig, ExecMode};

    const T0: ThreadId = ThreadId(0);
    const P: PoolId = PoolId(1);

    fn engine(mode: ExecMode, m: Mechanism) -> Engine<f64> {
        let devices = mode.default_devices();
        let mut e = Engine::new(EngineConfig {
            devices,
            granularity: 256,
            capacity_per_device: 64 << 10,
            striped_per_device: 16 << 10,
            page_size: 256,
            mode,
            ..EngineConfig::default()
        })
        .unwrap();
        e.create_pool(P, None, 0, 2048, m).unwrap();
        e
    }

    #[test]
    fn covered_gaps() {
        let mut c = Covered::default();
        c.insert(10, 20);
        c.insert(30, 40);
        assert_eq!(c.gaps(0, 50), vec![(0, 10), (20, 30), (40, 50)]);
        c.insert(15, 35);
        assert_eq!(c.gaps(0, 50), vec![(0, 10), (40, 50)]);
    }

    #[test]
    fn every_mechanism_commits_in_every_mode() {
        for mode in ExecMode::ALL {
            for m in [Mechanism::Undo, Mechanism::Redo, Mechanism::Checkpoint, Mechanism::Shadow] {
                let mut e = engine(mode, m);
                let mut tx = Transaction::new(&e, P, T0).unwrap();
                for round in 0..3u8 {
                    tx.begin(&mut e).unwrap();
                    tx.write(&mut e, 0x10, &[round + 1; 40]).unwrap();
                    let wide: Vec<u8> = (0..300u32).map(|i| (i as u8).wrapping_mul(31) ^ round).collect();
                    tx.write(&mut e, 0x300, &wide).unwrap();
                    assert_eq!(tx.read(&mut e, 0x10, 4).unwrap(), vec![round + 1; 4]);
                    tx.commit(&mut e).unwrap();
                }
                e.drain().unwrap();
                let img = e.logical_image(P).unwrap();
                assert_eq!(&img[0x10..0x38], &[3; 40], "{mode:?} {m:?}");
                let wide: Vec<u8> = (0..300u32).map(|i| (i as u8).wrapping_mul(31) ^ 2).collect();
                assert_eq!(&img[0x300..0x42c], wide.as_slice(), "{mode:?} {m:?}");
                assert_eq!(e.stats().transactions, 3);
                if mode.offloads() {
                    let r = check_trace(e.trace()).unwrap();
                    assert!(r.passed(), "{mode:?} {m:?}\n{r}");
                }
            }
        }
    }
}
