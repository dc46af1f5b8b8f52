//! Multi-device synchronization state machine with delayed recovery-data resets.
//!
//! Each device runs one state machine per synchronized transaction. It starts
//! in `AllComplete`, enters `Executing` when a duplicated command arrives and
//! returns to `AllComplete` once every participating device has reported
//! completion. Invalidations of recovery data queued while `Executing` are
//! released only on that transition.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::translate::DeviceId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyncPhase {
    AllComplete,
    Executing,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyncState<R> {
    phase: SyncPhase,
    participants: Vec<DeviceId>,
    completion_bits: Vec<bool>,
    pending_resets: Vec<R>,
}

impl<R> Default for SyncState<R> {
    fn default() -> Self {
        Self {
            phase: SyncPhase::AllComplete,
            participants: Vec::new(),
            completion_bits: Vec::new(),
            pending_resets: Vec::new(),
        }
    }
}

impl<R> SyncState<R> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn phase(&self) -> SyncPhase {
        self.phase
    }

    pub fn participants(&self) -> &[DeviceId] {
        &self.participants
    }

    pub fn bit(&self, device: DeviceId) -> Option<bool> {
        self.participants
            .iter()
            .position(|d| *d == device)
            .map(|i| self.completion_bits[i])
    }

    pub fn pending_resets(&self) -> &[R] {
        &self.pending_resets
    }

    pub fn on_command_duplicated(&mut self, devices: &[DeviceId]) -> Result<()> {
        if self.phase == SyncPhase::Executing {
            return Err(Error::Protocol("command duplicated while synchronization is executing".into()));
        }
        if devices.is_empty() {
            return Err(Error::Protocol("duplicated command without participants".into()));
        }
        let mut parts = devices.to_vec();
        parts.sort_unstable();
        parts.dedup();
        self.completion_bits = vec![false; parts.len()];
        self.participants = parts;
        self.phase = SyncPhase::Executing;
        Ok(())
    }

    /// Records a local or remote completion. Returns the drained resets,
    /// in enqueue order, when the last bit is set.
    pub fn on_complete(&mut self, device: DeviceId) -> Result<Option<Vec<R>>> {
        if self.phase != SyncPhase::Executing {
            return Err(Error::Protocol(format!("completion from device {device} outside execution")));
        }
        let i = self
            .participants
            .iter()
            .position(|d| *d == device)
            .ok_or_else(|| Error::Protocol(format!("device {device} does not participate")))?;
        self.completion_bits[i] = true;
        if self.completion_bits.iter().all(|b| *b) {
            self.phase = SyncPhase::AllComplete;
            Ok(Some(std::mem::take(&mut self.pending_resets)))
        } else {
            Ok(None)
        }
    }

    /// Queues invalidations. In `AllComplete` they are handed back for
    /// immediate application.
    pub fn defer_reset(&mut self, resets: impl IntoIterator<Item = R>) -> Vec<R> {
        match self.phase {
            SyncPhase::Executing => {
                self.pending_resets.extend(resets);
                Vec::new()
            }
            SyncPhase::AllComplete => resets.into_iter().collect(),
        }
    }
}

/// Per-device table of synchronization state machines, keyed by transaction.
#[derive(Debug, Clone)]
pub struct MultiDeviceHandler<R> {
    syncs: BTreeMap<u64, SyncState<R>>,
}

impl<R> Default for MultiDeviceHandler<R> {
    fn default() -> Self {
        Self { syncs: BTreeMap::new() }
    }
}

impl<R> MultiDeviceHandler<R> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn begin(&mut self, tx: u64, devices: &[DeviceId]) -> Result<()> {
        self.syncs.entry(tx).or_default().on_command_duplicated(devices)
    }

    pub fn complete(&mut self, tx: u64, device: DeviceId) -> Result<Option<Vec<R>>> {
        let st = self
            .syncs
            .get_mut(&tx)
            .ok_or_else(|| Error::Protocol(format!("completion for unknown transaction {tx}")))?;
        let done = st.on_complete(device)?;
        if done.is_some() {
            self.syncs.remove(&tx);
        }
        Ok(done)
    }

    pub fn defer(&mut self, tx: u64, resets: impl IntoIterator<Item = R>) -> Vec<R> {
        match self.syncs.get_mut(&tx) {
            Some(st) => st.defer_reset(resets),
            None => resets.into_iter().collect(),
        }
    }

    pub fn is_executing(&self, tx: u64) -> bool {
        self.syncs
            .get(&tx)
            .is_some_and(|s| s.phase() == SyncPhase::Executing)
    }

    pub fn outstanding(&self) -> impl Iterator<Item = (u64, &SyncState<R>)> {
        self.syncs.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.syncs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.syncs.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_enters_executing_with_clear_bits() {
        let mut s: SyncState<u32> = SyncState::new();
        s.on_command_duplicated(&[0, 1]).unwrap();
        assert_eq!(s.phase(), SyncPhase::Executing);
        assert_eq!(s.bit(0), Some(false));
        assert_eq!(s.bit(1), Some(false));
    }

    #[test]
    fn single_device_completes_on_local_done() {
        let mut s: SyncState<u32> = SyncState::new();
        s.on_command_duplicated(&[0]).unwrap();
        assert_eq!(s.on_complete(0).unwrap(), Some(vec![]));
        assert_eq!(s.phase(), SyncPhase::AllComplete);
    }

    #[test]
    fn duplicate_while_executing_faults() {
        let mut s: SyncState<u32> = SyncState::new();
        s.on_command_duplicated(&[0, 1]).unwrap();
        assert!(matches!(s.on_command_duplicated(&[0, 1]), Err(Error::Protocol(_))));
    }

    #[test]
    fn all_complete_after_second_completion() {
        let mut s: SyncState<u32> = SyncState::new();
        s.on_command_duplicated(&[0, 1]).unwrap();
        assert_eq!(s.defer_reset([1, 2]), Vec::<u32>::new());
        assert_eq!(s.on_complete(0).unwrap(), None);
        assert_eq!(s.phase(), SyncPhase::Executing);
        assert_eq!(s.pending_resets(), &[1, 2]);
        assert_eq!(s.on_complete(1).unwrap(), Some(vec![1, 2]));
        assert!(s.pending_resets().is_empty());
    }

    #[test]
    fn non_participant_completion_faults() {
        let mut s: SyncState<u32> = SyncState::new();
        s.on_command_duplicated(&[0]).unwrap();
        assert!(s.on_complete(1).is_err());
    }

    #[test]
    fn defer_in_all_complete_applies_immediately() {
        let mut s: SyncState<u32> = SyncState::new();
        assert_eq!(s.defer_reset([5]), vec![5]);
    }

    #[test]
    fn drains_preserve_enqueue_order_across_transactions() {
        let mut h: MultiDeviceHandler<(u64, u32)> = MultiDeviceHandler::new();
        h.begin(1, &[0, 1]).unwrap();
        h.begin(2, &[0, 1]).unwrap();
        h.defer(1, [(1, 0), (1, 1)]);
        h.defer(2, [(2, 0)]);
        h.complete(1, 0).unwrap();
        h.complete(2, 0).unwrap();
        assert_eq!(h.complete(1, 1).unwrap(), Some(vec![(1, 0), (1, 1)]));
        assert_eq!(h.complete(2, 1).unwrap(), Some(vec![(2, 0)]));
        assert!(h.is_empty());
    }
}
