//! Crashes real workloads part-way and checks that recovery lands on a
//! committed prefix of the operation stream.

use nearpm::engine::ExecMode;
use nearpm::recovery::{logical_images, recover};
use nearpm::snapshot::PersistenceDomainSnapshot;
use nearpm::workloads::*;

fn recovered_prefix(kind: WorkloadKind, m: WorkloadMechanism, mode: ExecMode, k: usize) -> Option<usize> {
    let spec = WorkloadSpec::new(kind, m, 40, 3);
    let mut l = load(&spec, &SystemConfig::<f64>::new(mode)).unwrap();
    l.step(k).unwrap();
    let state = l.engine.crash().unwrap();
    let layouts = l.engine.record().pools.clone();
    let snap = PersistenceDomainSnapshot::decode(&state.snapshot.encode().unwrap()).unwrap();
    let mut images = state.images;
    recover(&snap, &mut images, &layouts, PERSIST_CHUNK).unwrap();
    let images = logical_images(&images, &layouts);
    (0..=k).rev().find(|&j| verify_prefix(&images, &spec, j).passed())
}

#[test]
fn recovery_restores_a_committed_prefix() {
    let kinds = [WorkloadKind::Hashmap, WorkloadKind::Btree, WorkloadKind::Rbtree, WorkloadKind::Tatp];
    for kind in kinds {
        for m in WorkloadMechanism::ALL {
            for mode in [ExecMode::SingleDevice, ExecMode::MultiDeviceSwSync, ExecMode::MultiDevice] {
                for k in [1, 7, 23] {
                    let got = recovered_prefix(kind, m, mode, k);
                    assert!(got.is_some(), "{kind} {m} {mode:?} after {k} ops: no committed prefix matches");
                }
            }
        }
    }
}

#[test]
fn drained_run_survives_crash_intact() {
    let spec = WorkloadSpec::new(WorkloadKind::Skiplist, WorkloadMechanism::ShadowPaging, 30, 5);
    let mut l = load(&spec, &SystemConfig::<f64>::new(ExecMode::MultiDevice)).unwrap();
    l.step(30).unwrap();
    l.engine.drain().unwrap();
    let state = l.engine.crash().unwrap();
    let layouts = l.engine.record().pools.clone();
    let mut images = state.images;
    recover(&state.snapshot, &mut images, &layouts, PERSIST_CHUNK).unwrap();
    assert!(verify_prefix(&logical_images(&images, &layouts), &spec, 30).passed());
}
