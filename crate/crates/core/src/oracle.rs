//! Exhaustive crash-point enumeration for small scenarios.
//!
//! A scenario is executed once without failures. Every set of durable events
//! that is closed under happens-before is a possible crash: it fixes how far
//! the CPU and each NDP unit, host queue and sync handler had progressed. For
//! each such cut the oracle rebuilds the persisted images and the
//! persistence-domain snapshot, runs hardware then software recovery, and
//! compares the pool's logical data with the states reachable by committing
//! a prefix of each thread's transactions.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::{Hash, Hasher};

use rayon::prelude::*;

use crate::checker::{check_trace, CheckReport, HappensBefore};
use crate::engine::{ExecutionRecord, RequestRecord};
use crate::error::{Error, Result};
use crate::layout::PoolLayout;
use crate::pm::PersistedImage;
use crate::primitives::{Mechanism, SubOp};
use crate::recovery::{logical_images, recover};
use crate::scenario::{ReferenceStates, Scenario, MAX_OPS, SCENARIO_POOL};
use crate::snapshot::{DeviceSnapshot, PersistenceDomainSnapshot, SnapHostEntry, SnapRequest, SnapSync};
use crate::trace::{Actor, EventId, EventKind, Role, Trace};
use crate::translate::DeviceId;

/// Default cap on the number of crash plans of one scenario.
pub const MAX_PLANS: usize = 4_000_000;

/// One failure point: how many durable events of each actor persisted.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CrashPlan {
    /// Number of durable events in the cut.
    pub crash_event_index: usize,
    pub progress: Vec<(Actor, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Classification {
    PreState,
    PostState,
    Inconsistent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsistencyVerdict {
    pub plan: CrashPlan,
    pub digest: u64,
    pub classification: Classification,
    /// Recovering the same artifacts twice gave identical images.
    pub deterministic: bool,
}

#[derive(Debug, Clone)]
pub struct OracleOptions {
    pub max_ops: usize,
    pub max_plans: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            max_ops: MAX_OPS,
            max_plans: MAX_PLANS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OracleReport {
    pub scenario: String,
    pub verdicts: Vec<ConsistencyVerdict>,
    pub checker: CheckReport,
}

impl OracleReport {
    pub fn count(&self, c: Classification) -> usize {
        self.verdicts.iter().filter(|v| v.classification == c).count()
    }

    pub fn recoverable(&self) -> bool {
        self.count(Classification::Inconsistent) == 0
    }

    pub fn deterministic(&self) -> bool {
        self.verdicts.iter().all(|v| v.deterministic)
    }

    /// Checker verdict and oracle classification agree.
    pub fn agrees(&self) -> bool {
        self.checker.passed() == self.recoverable()
    }

    pub fn summary(&self) -> String {
        format!(
            "{}: plans={} pre={} post={} inconsistent={} recoverable={} checker={} agree={} deterministic={}",
            self.scenario,
            self.verdicts.len(),
            self.count(Classification::PreState),
            self.count(Classification::PostState),
            self.count(Classification::Inconsistent),
            self.recoverable(),
            if self.checker.passed() { "pass" } else { "fail" },
            self.agrees(),
            self.deterministic(),
        )
    }
}

/// Durable events grouped by actor, with the prefix constraints between them.
pub struct CutSpace {
    pub actors: Vec<Actor>,
    /// Durable event ids of each actor in program order.
    pub durable: Vec<Vec<EventId>>,
    /// `need[i][k][j]`: durable events of actor `j` that must be in any cut
    /// containing the first `k + 1` durable events of actor `i`.
    need: Vec<Vec<Vec<usize>>>,
}

impl CutSpace {
    pub fn new(trace: &Trace) -> Result<Self> {
        let hb = HappensBefore::build(trace)?;
        let all = hb.actors().to_vec();
        // durable counts within each actor's first p events
        let mut prefix: Vec<Vec<usize>> = vec![vec![0]; all.len()];
        let mut durable_of: Vec<Vec<EventId>> = vec![Vec::new(); all.len()];
        for e in &trace.events {
            let a = hb.actor_index(e.id);
            let d = e.persist_stamp.is_some();
            let last = *prefix[a].last().expect("prefix");
            prefix[a].push(last + d as usize);
            if d {
                durable_of[a].push(e.id);
            }
        }
        let keep: Vec<usize> = (0..all.len()).filter(|&a| !durable_of[a].is_empty()).collect();
        let mut need = Vec::new();
        for &a in &keep {
            let rows = durable_of[a]
                .iter()
                .map(|&e| {
                    let c = hb.clock(e);
                    keep.iter().map(|&j| prefix[j][c[j] as usize]).collect()
                })
                .collect();
            need.push(rows);
        }
        Ok(Self {
            actors: keep.iter().map(|&a| all[a]).collect(),
            durable: keep.iter().map(|&a| durable_of[a].clone()).collect(),
            need,
        })
    }

    fn consistent(&self, cut: &[usize], i: usize, j: usize) -> bool {
        (cut[i] == 0 || self.need[i][cut[i] - 1][j] <= cut[j]) && (cut[j] == 0 || self.need[j][cut[j] - 1][i] <= cut[i])
    }

    /// Every cut closed under happens-before, in lexicographic order.
    pub fn enumerate(&self, max: usize) -> Result<Vec<Vec<usize>>> {
        let n = self.actors.len();
        let mut out = Vec::new();
        let mut cut = vec![0usize; n];
        self.dfs(0, &mut cut, &mut out, max)?;
        Ok(out)
    }

    fn dfs(&self, d: usize, cut: &mut Vec<usize>, out: &mut Vec<Vec<usize>>, max: usize) -> Result<()> {
        if d == cut.len() {
            if out.len() >= max {
                return Err(Error::Oracle(format!("more than {max} crash plans")));
            }
            out.push(cut.clone());
            return Ok(());
        }
        for k in 0..=self.durable[d].len() {
            cut[d] = k;
            if (0..d).all(|j| self.consistent(cut, d, j)) {
                self.dfs(d + 1, cut, out, max)?;
            }
        }
        cut[d] = 0;
        Ok(())
    }

    pub fn members(&self, cut: &[usize]) -> BTreeSet<EventId> {
        self.durable
            .iter()
            .zip(cut)
            .flat_map(|(d, &k)| d[..k].iter().copied())
            .collect()
    }
}

/// Pre-state and fully committed post-state of a scenario.
pub fn reference_images(scenario: &Scenario) -> (Vec<u8>, Vec<u8>) {
    let r = scenario.reference_states();
    (r.pre().to_vec(), r.post().to_vec())
}

struct CrashInputs<'a> {
    trace: &'a Trace,
    record: &'a ExecutionRecord,
    mappings: Vec<Vec<u8>>,
    devices: usize,
    /// Persist events with payloads, sorted by stamp.
    writes: Vec<EventId>,
    /// Persist events of each request.
    proc_persists: HashMap<u64, Vec<EventId>>,
    /// Completion events per (tx, device).
    completions: HashMap<(u64, DeviceId), EventId>,
    /// Invalidation events per (tx, device).
    resets: HashMap<(u64, DeviceId), Vec<EventId>>,
}

impl<'a> CrashInputs<'a> {
    fn new(trace: &'a Trace, record: &'a ExecutionRecord, mappings: Vec<Vec<u8>>, devices: usize) -> Self {
        let mut writes: Vec<EventId> = record
            .payloads
            .keys()
            .copied()
            .filter(|e| !record.buffered.contains_key(e))
            .collect();
        writes.sort_by_key(|e| trace.event(*e).persist_stamp);
        let mut proc_persists: HashMap<u64, Vec<EventId>> = HashMap::new();
        let mut completions = HashMap::new();
        let mut resets: HashMap<(u64, DeviceId), Vec<EventId>> = HashMap::new();
        for e in &trace.events {
            match (e.kind, e.actor) {
                (EventKind::Persist, Actor::Ndp { .. }) => {
                    if let Some(p) = e.proc {
                        proc_persists.entry(p).or_default().push(e.id);
                    }
                }
                (EventKind::SyncComplete, Actor::Handler(d)) => {
                    if let Some(tx) = e.tx {
                        completions.insert((tx, d), e.id);
                    }
                }
                _ => {}
            }
            if e.kind == EventKind::Persist && e.role == Role::Reset {
                if let (Some(tx), Some(r)) = (e.tx, e.range) {
                    resets.entry((tx, r.device)).or_default().push(e.id);
                }
            }
        }
        Self {
            trace,
            record,
            mappings,
            devices,
            writes,
            proc_persists,
            completions,
            resets,
        }
    }

    fn images(&self, d: &BTreeSet<EventId>) -> Vec<PersistedImage> {
        let mut images = self.record.initial.clone();
        for e in &self.writes {
            if d.contains(e) {
                let (addr, bytes) = &self.record.payloads[e];
                images[addr.device].write(addr.local, bytes);
            }
        }
        images
    }

    fn snapshot(&self, d: &BTreeSet<EventId>) -> PersistenceDomainSnapshot {
        let mut devs: Vec<DeviceSnapshot> = (0..self.devices)
            .map(|i| DeviceSnapshot {
                device: i,
                mapping: self.mappings[i].clone(),
                ..Default::default()
            })
            .collect();
        let stamp = |e: EventId| self.trace.event(e).persist_stamp.expect("durable");
        for (proc, RequestRecord { req, accept, .. }) in &self.record.requests {
            if !d.contains(accept) {
                continue;
            }
            let dev = &mut devs[req.device];
            if let SubOp::Commit { participants, mechanism } = &req.op {
                let done = self.completions.get(&(req.tx, req.device)).is_some_and(|c| d.contains(c));
                // an entry is dropped only once every participant recorded the
                // completion and this device finished its invalidations
                let everywhere = participants
                    .iter()
                    .all(|p| self.completions.get(&(req.tx, *p)).is_some_and(|c| d.contains(c)));
                let resets = self.resets.get(&(req.tx, req.device));
                let retired = everywhere && resets.map_or(true, |r| r.iter().all(|e| d.contains(e)));
                if !retired {
                    let participants: BTreeSet<DeviceId> = participants.iter().copied().collect();
                    dev.syncs.push(SnapSync {
                        tx: req.tx,
                        pool: req.pool,
                        mechanism: *mechanism,
                        received: if done { participants.clone() } else { BTreeSet::new() },
                        participants,
                        completed: done,
                    });
                }
                continue;
            }
            let persists = self.proc_persists.get(proc).map(Vec::as_slice).unwrap_or(&[]);
            let finished = persists.last().is_some_and(|l| d.contains(l));
            if finished {
                continue;
            }
            let item = SnapRequest {
                order: stamp(*accept),
                req: req.clone(),
            };
            if persists.first().is_some_and(|f| d.contains(f)) {
                dev.inflight.push(item);
            } else {
                dev.fifo.push(item);
            }
        }
        for (persist, b) in &self.record.buffered {
            if d.contains(persist) && !b.drain.is_some_and(|x| d.contains(&x)) {
                let (addr, bytes) = &self.record.payloads[persist];
                let e = self.trace.event(*persist);
                let thread = match e.actor {
                    Actor::Cpu(t) => t,
                    _ => crate::translate::ThreadId(0),
                };
                devs[b.device].host_queue.push(SnapHostEntry {
                    order: stamp(*persist),
                    thread,
                    range: e.range.unwrap_or(crate::translate::DevRange::new(addr.device, addr.local, bytes.len() as u64)),
                    bytes: bytes.clone(),
                });
            }
        }
        PersistenceDomainSnapshot { devices: devs }
    }
}

fn digest(bytes: &[u8]) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    bytes.hash(&mut h);
    h.finish()
}

fn recover_once(
    snapshot_bytes: &[u8],
    images: &[PersistedImage],
    layouts: &[(PoolLayout, Mechanism)],
    chunk: u64,
) -> Result<Vec<PersistedImage>> {
    let snapshot = PersistenceDomainSnapshot::decode(snapshot_bytes)?;
    let mut images = images.to_vec();
    recover(&snapshot, &mut images, layouts, chunk)?;
    Ok(images)
}

fn classify(img: &[u8], refs: &ReferenceStates) -> Classification {
    if img == refs.pre() {
        Classification::PreState
    } else if refs.contains(img) {
        Classification::PostState
    } else {
        Classification::Inconsistent
    }
}

/// Runs the scenario and classifies the recovered image of every crash plan.
pub fn enumerate_crashes(scenario: &Scenario, opts: &OracleOptions) -> Result<OracleReport> {
    scenario.validate(opts.max_ops)?;
    let run = scenario.run()?;
    let engine = &run.engine;
    let trace = engine.trace();
    let checker = check_trace(trace)?;
    let refs = scenario.reference_states();
    let devices = engine.config().devices;
    let mappings = (0..devices).map(|d| engine.device(d).mapping.encode()).collect();
    let record = engine.record();
    let layouts = record.pools.clone();
    let chunk = engine.config().persist_chunk;
    let inputs = CrashInputs::new(trace, record, mappings, devices);
    let space = CutSpace::new(trace)?;
    let cuts = space.enumerate(opts.max_plans)?;
    let verdicts = cuts
        .par_iter()
        .map(|cut| -> Result<ConsistencyVerdict> {
            let members = space.members(cut);
            let images = inputs.images(&members);
            let snapshot = inputs.snapshot(&members).encode()?;
            let first = recover_once(&snapshot, &images, &layouts, chunk)?;
            let second = recover_once(&snapshot, &images, &layouts, chunk)?;
            let logical = logical_images(&first, &layouts)
                .remove(&SCENARIO_POOL)
                .ok_or_else(|| Error::Oracle("scenario pool missing".into()))?;
            Ok(ConsistencyVerdict {
                plan: CrashPlan {
                    crash_event_index: members.len(),
                    progress: space.actors.iter().copied().zip(cut.iter().copied()).collect(),
                },
                digest: digest(&logical),
                classification: classify(&logical, &refs),
                deterministic: first == second,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OracleReport {
        scenario: scenario.name.clone(),
        verdicts,
        checker,
    })
}

/// Per-classification counts keyed by label, for reports.
pub fn tally(report: &OracleReport) -> BTreeMap<&'static str, usize> {
    [
        ("pre", Classification::PreState),
        ("post", Classification::PostState),
        ("inconsistent", Classification::Inconsistent),
    ]
    .into_iter()
    .map(|(k, c)| (k, report.count(c)))
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{EdgeKind, EventSpec, TraceBuilder};
    use crate::translate::{DevRange, ThreadId};

    fn chains(lengths: &[usize]) -> Trace {
        let mut b = TraceBuilder::new(true);
        let mut stamp = 0;
        for (i, &n) in lengths.iter().enumerate() {
            for _ in 0..n {
                b.push(
                    EventSpec::new(Actor::Ndp { device: 0, unit: i }, EventKind::Persist)
                        .range(DevRange::new(0, 0, 8))
                        .stamp(stamp),
                );
                stamp += 1;
            }
        }
        b.into_trace()
    }

    #[test]
    fn independent_chains_give_product_of_lengths_plus_one() {
        for lengths in [vec![3], vec![2, 3], vec![1, 4, 2], vec![5, 5, 5, 5]] {
            let t = chains(&lengths);
            let space = CutSpace::new(&t).unwrap();
            let expect: usize = lengths.iter().map(|n| n + 1).product();
            assert_eq!(space.enumerate(usize::MAX).unwrap().len(), expect);
        }
    }

    #[test]
    fn an_edge_removes_cuts_that_are_not_down_closed() {
        let mut b = TraceBuilder::new(true);
        let cpu = Actor::Cpu(ThreadId(0));
        let ndp = Actor::Ndp { device: 0, unit: 0 };
        let a = b.push(EventSpec::new(cpu, EventKind::Persist).stamp(0).role(Role::Request).proc(0));
        let w = b.push(EventSpec::new(ndp, EventKind::Persist).range(DevRange::new(0, 0, 8)).stamp(1));
        b.edge(a, w, EdgeKind::Dispatch);
        let space = CutSpace::new(b.trace()).unwrap();
        // {}, {a}, {a, w}; never {w} alone
        assert_eq!(space.enumerate(usize::MAX).unwrap().len(), 3);
    }

    #[test]
    fn plan_cap_is_reported() {
        let t = chains(&[9, 9]);
        let space = CutSpace::new(&t).unwrap();
        assert!(matches!(space.enumerate(10), Err(Error::Oracle(_))));
    }

    #[test]
    fn empty_program_has_a_single_pre_state_plan() {
        let s = Scenario::from_toml("name = \"empty\"\nmechanism = \"undo\"\n").unwrap();
        let r = enumerate_crashes(&s, &OracleOptions::default()).unwrap();
        assert_eq!(r.verdicts.len(), 1);
        assert_eq!(r.verdicts[0].classification, Classification::PreState);
    }

    #[test]
    fn oversized_program_is_refused() {
        let mut text = String::from("name = \"big\"\nmechanism = \"undo\"\n");
        for _ in 0..7 {
            text.push_str("[[op]]\nkind = \"begin\"\n[[op]]\nkind = \"commit\"\n");
        }
        let s = Scenario::from_toml(&text).unwrap();
        assert!(matches!(enumerate_crashes(&s, &OracleOptions::default()), Err(Error::Oracle(_))));
    }
}
