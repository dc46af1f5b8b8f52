//! Two-stage crash recovery.
//!
//! Hardware recovery restores the persistence domain first: accepted
//! requests that had not finished are re-executed and buffered CPU writes are
//! drained, both in arrival order, and recovery data of transactions whose
//! group completion was recorded is invalidated. Software recovery then runs
//! the mechanism-specific log processing on the persisted images.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::layout::{CommitStatus, LogEntry, PoolLayout};
use crate::pm::PersistedImage;
use crate::primitives::{execute, reset_items, scan_entries, tx_thread, AccessKind, Mechanism, SubOp};
use crate::snapshot::PersistenceDomainSnapshot;
use crate::translate::{AddressMappingTable, DevRange, PoolId};

/// Counters from one recovery run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecoveryReport {
    pub replayed_requests: usize,
    pub drained_host_entries: usize,
    pub completed_resets: usize,
    pub pools: BTreeMap<PoolId, PoolRecovery>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PoolRecovery {
    pub mechanism: Option<Mechanism>,
    /// Undo or checkpoint entries written back.
    pub rolled_back: usize,
    /// Committed redo entries applied.
    pub redone: usize,
    /// Entries invalidated without being applied.
    pub discarded: usize,
}

fn read_from(images: &[PersistedImage]) -> impl FnMut(DevRange) -> Vec<u8> + '_ {
    move |r: DevRange| images[r.device].read(r.start, r.len).to_vec()
}

fn layout_of(layouts: &[(PoolLayout, Mechanism)], pool: PoolId) -> Result<&(PoolLayout, Mechanism)> {
    layouts
        .iter()
        .find(|(l, _)| l.pool == pool)
        .ok_or_else(|| Error::Recovery(format!("snapshot refers to unknown pool {pool}")))
}

enum Item<'a> {
    Request(&'a crate::snapshot::SnapRequest),
    Host(&'a crate::snapshot::SnapHostEntry),
}

/// Restores the persistence domain contents onto the device images.
pub fn hw_recover(
    snapshot: &PersistenceDomainSnapshot,
    images: &mut [PersistedImage],
    layouts: &[(PoolLayout, Mechanism)],
    persist_chunk: u64,
) -> Result<RecoveryReport> {
    let mut report = RecoveryReport::default();
    for d in &snapshot.devices {
        if d.device >= images.len() {
            return Err(Error::Recovery(format!("snapshot of device {} has no image", d.device)));
        }
        AddressMappingTable::decode(&d.mapping, |p| {
            layouts.iter().find(|(l, _)| l.pool == p).map_or(0, |(l, _)| l.base_virt)
        })?;
    }
    let mut items: Vec<(u64, Item)> = Vec::new();
    for d in &snapshot.devices {
        for r in d.fifo.iter().chain(&d.inflight) {
            items.push((r.order, Item::Request(r)));
        }
        for h in &d.host_queue {
            items.push((h.order, Item::Host(h)));
        }
    }
    items.sort_by_key(|(o, _)| *o);
    for (_, item) in items {
        match item {
            Item::Request(r) => {
                if matches!(r.req.op, SubOp::Commit { .. }) {
                    continue;
                }
                let (layout, _) = layout_of(layouts, r.req.pool)?;
                let accesses = execute(&r.req, layout, persist_chunk, &mut read_from(images))?;
                for a in accesses.into_iter().filter(|a| a.kind == AccessKind::Write) {
                    images[a.range.device].write(a.range.start, &a.bytes);
                }
                report.replayed_requests += 1;
            }
            Item::Host(h) => {
                images[h.range.device].write(h.range.start, &h.bytes);
                report.drained_host_entries += 1;
            }
        }
    }
    let completed = snapshot.completed_txs();
    for d in &snapshot.devices {
        for s in d.syncs.iter().filter(|s| completed.contains(&s.tx)) {
            let (layout, _) = layout_of(layouts, s.pool)?;
            let items = reset_items(layout, s.mechanism, d.device, s.tx, &mut read_from(images));
            for it in items {
                images[it.addr.device].write(it.addr.local, &it.bytes);
                report.completed_resets += 1;
            }
        }
    }
    Ok(report)
}

fn tombstone(images: &mut [PersistedImage], dev: usize, slot: u64) {
    images[dev].write(slot + 8, &[CommitStatus::Invalid.to_byte()]);
}

fn live(e: &LogEntry) -> bool {
    matches!(e.commit_status, CommitStatus::Active | CommitStatus::Committed)
}

/// Mechanism-specific recovery of every pool.
pub fn sw_recover(images: &mut [PersistedImage], layouts: &[(PoolLayout, Mechanism)]) -> Result<RecoveryReport> {
    let mut report = RecoveryReport::default();
    for (layout, mechanism) in layouts {
        let stats = match mechanism {
            Mechanism::Undo | Mechanism::Checkpoint => roll_back(images, layout, *mechanism),
            Mechanism::Redo => redo(images, layout)?,
            Mechanism::Shadow => shadow(images, layout),
        };
        report.pools.insert(
            layout.pool,
            PoolRecovery {
                mechanism: Some(*mechanism),
                ..stats
            },
        );
    }
    Ok(report)
}

fn roll_back(images: &mut [PersistedImage], layout: &PoolLayout, mechanism: Mechanism) -> PoolRecovery {
    let mut stats = PoolRecovery::default();
    let mut all = Vec::new();
    for dev in 0..layout.devices() {
        for (slot, e) in scan_entries(layout, mechanism, dev, &mut read_from(images)) {
            if live(&e) {
                all.push((dev, slot, e));
            }
        }
    }
    // newest first, so the oldest logged value of a location wins
    all.sort_by(|a, b| (b.2.object_id, b.2.seq).cmp(&(a.2.object_id, a.2.seq)));
    for (dev, _, e) in &all {
        let home = layout.home_addr(*dev, e.offset);
        images[home.device].write(home.local, &e.payload);
        stats.rolled_back += 1;
    }
    for (dev, slot, _) in all {
        tombstone(images, dev, slot);
    }
    stats
}

fn redo(images: &mut [PersistedImage], layout: &PoolLayout) -> Result<PoolRecovery> {
    let mut stats = PoolRecovery::default();
    let mut all = Vec::new();
    for dev in 0..layout.devices() {
        for (slot, e) in scan_entries(layout, Mechanism::Redo, dev, &mut read_from(images)) {
            if live(&e) {
                all.push((dev, slot, e));
            }
        }
    }
    all.sort_by_key(|(_, _, e)| (e.object_id, e.seq));
    let mut words: BTreeMap<u16, u64> = BTreeMap::new();
    for (dev, slot, e) in &all {
        let t = tx_thread(e.object_id);
        let word = match words.get(&t.0) {
            Some(w) => *w,
            None => {
                let at = layout.locate(layout.redo_commit_word(t));
                let w = u64::from_le_bytes(images[at.device].read(at.local, 8).try_into().unwrap());
                words.insert(t.0, w);
                w
            }
        };
        if word != 0 && tx_thread(word) != t {
            return Err(Error::Recovery(format!("commit word of thread {} holds a foreign transaction", t.0)));
        }
        if word != 0 && e.object_id <= word {
            let home = layout.home_addr(*dev, e.offset);
            images[home.device].write(home.local, &e.payload);
            stats.redone += 1;
        } else {
            stats.discarded += 1;
        }
        tombstone(images, *dev, *slot);
    }
    Ok(stats)
}

fn shadow(images: &mut [PersistedImage], layout: &PoolLayout) -> PoolRecovery {
    let mut stats = PoolRecovery::default();
    for dev in 0..layout.devices() {
        let referenced: BTreeSet<u64> = (0..layout.pages_per_device())
            .filter_map(|p| {
                let at = layout.pageref_addr(dev, p);
                let v = u64::from_le_bytes(images[dev].read(at.local, 8).try_into().unwrap());
                (v != 0).then(|| v - 1 - crate::layout::ENTRY_PREFIX)
            })
            .collect();
        let entries = scan_entries(layout, Mechanism::Shadow, dev, &mut read_from(images));
        for (slot, e) in entries {
            if live(&e) && !referenced.contains(&slot) {
                tombstone(images, dev, slot);
                stats.discarded += 1;
            }
        }
    }
    stats
}

/// Hardware then software recovery.
pub fn recover(
    snapshot: &PersistenceDomainSnapshot,
    images: &mut [PersistedImage],
    layouts: &[(PoolLayout, Mechanism)],
    persist_chunk: u64,
) -> Result<RecoveryReport> {
    let hw = hw_recover(snapshot, images, layouts, persist_chunk)?;
    let sw = sw_recover(images, layouts)?;
    Ok(RecoveryReport { pools: sw.pools, ..hw })
}

/// Logical data area of each pool after recovery.
pub fn logical_images(images: &[PersistedImage], layouts: &[(PoolLayout, Mechanism)]) -> BTreeMap<PoolId, Vec<u8>> {
    layouts
        .iter()
        .map(|(l, _)| (l.pool, l.logical_data(read_from(images))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Engine, EngineConfig, ExecMode};
    use crate::translate::ThreadId;

    const T0: ThreadId = ThreadId(0);
    const P: PoolId = PoolId(1);

    fn engine(mechanism: Mechanism) -> Engine<f64> {
        let mut e = Engine::new(EngineConfig {
            devices: 2,
            granularity: 256,
            capacity_per_device: 64 << 10,
            striped_per_device: 16 << 10,
            page_size: 256,
            mode: ExecMode::MultiDevice,
            ..EngineConfig::default()
        })
        .unwrap();
        e.create_pool(P, None, 0, 1024, mechanism).unwrap();
        e.preload(P, 0, &[1; 1024]).unwrap();
        e
    }

    fn crash_and_recover(e: &mut Engine<f64>) -> Vec<u8> {
        let state = e.crash().unwrap();
        let mut images = state.images;
        let layouts = e.record().pools.clone();
        let raw = state.snapshot.encode().unwrap();
        let snap = PersistenceDomainSnapshot::decode(&raw).unwrap();
        recover(&snap, &mut images, &layouts, 8).unwrap();
        logical_images(&images, &layouts).remove(&P).unwrap()
    }

    #[test]
    fn uncommitted_undo_rolls_back() {
        let mut e = engine(Mechanism::Undo);
        e.begin_tx(T0, P).unwrap();
        e.undolg_create(T0, P, 0, 8).unwrap();
        e.cpu_write(T0, P, 0, &[9; 8]).unwrap();
        e.cpu_flush(T0, P, 0, 8).unwrap();
        e.step(10_000.0).unwrap();
        assert_eq!(crash_and_recover(&mut e), vec![1; 1024]);
    }

    #[test]
    fn committed_undo_survives() {
        let mut e = engine(Mechanism::Undo);
        e.begin_tx(T0, P).unwrap();
        e.undolg_create(T0, P, 0x100, 8).unwrap();
        e.cpu_write(T0, P, 0x100, &[9; 8]).unwrap();
        e.commit_log(T0, P).unwrap();
        e.drain().unwrap();
        let img = crash_and_recover(&mut e);
        assert_eq!(&img[0x100..0x108], &[9; 8]);
    }

    #[test]
    fn idle_snapshot_recovery_is_a_no_op() {
        let mut e = engine(Mechanism::Shadow);
        let report = {
            let state = e.crash().unwrap();
            let mut images = state.images;
            recover(&state.snapshot, &mut images, &e.record().pools, 8).unwrap()
        };
        assert_eq!(report.replayed_requests + report.drained_host_entries + report.completed_resets, 0);
    }

    #[test]
    fn corrupted_mapping_is_rejected() {
        let mut e = engine(Mechanism::Undo);
        let mut state = e.crash().unwrap();
        state.snapshot.devices[0].mapping.push(0);
        let mut images = state.images;
        assert!(hw_recover(&state.snapshot, &mut images, &e.record().pools, 8).is_err());
    }
}
