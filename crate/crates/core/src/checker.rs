//! Persist-ordering invariant checks over execution traces.
//!
//! Happens-before is the transitive closure of per-actor program order and
//! the explicit edges recorded in the trace. It is represented by vector
//! clocks: `clock(e)[a]` is the number of events of actor `a` that happen
//! before or at `e`.
//!
//! CPU memory accesses are persists (cache write-backs) and reads. A persist
//! buffered in a device host queue takes effect at the host drain event that
//! names it in `of`; that drain is the access the ordering rules constrain.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use crate::error::{Error, Result};
use crate::trace::{Actor, EventId, EventKind, Role, Trace, TraceEvent};
use crate::translate::{DevRange, DeviceId, ThreadId};

/// Granularity used to index accesses; CPU stores never cross it.
pub const LINE: u64 = 64;

pub fn lines_of(r: &DevRange) -> impl Iterator<Item = u64> {
    let first = r.start / LINE;
    let last = if r.len == 0 { first } else { (r.end() - 1) / LINE };
    first..=last
}

#[derive(Debug, Clone)]
pub struct HappensBefore {
    actors: Vec<Actor>,
    actor_of: Vec<u32>,
    pos: Vec<u32>,
    clocks: Vec<u32>,
}

impl HappensBefore {
    pub fn build(trace: &Trace) -> Result<Self> {
        let n = trace.events.len();
        let mut index: HashMap<Actor, u32> = HashMap::new();
        let mut actors = Vec::new();
        let mut actor_of = Vec::with_capacity(n);
        let mut pos = Vec::with_capacity(n);
        let mut counts: Vec<u32> = Vec::new();
        let mut preds: Vec<Vec<u32>> = vec![Vec::new(); n];
        let mut last: Vec<Option<u32>> = Vec::new();
        for (i, e) in trace.events.iter().enumerate() {
            let a = *index.entry(e.actor).or_insert_with(|| {
                actors.push(e.actor);
                counts.push(0);
                last.push(None);
                (actors.len() - 1) as u32
            });
            actor_of.push(a);
            pos.push(counts[a as usize]);
            counts[a as usize] += 1;
            if let Some(p) = last[a as usize] {
                preds[i].push(p);
            }
            last[a as usize] = Some(i as u32);
        }
        for ed in &trace.edges {
            if ed.from as usize >= n || ed.to as usize >= n {
                return Err(Error::Checker(format!("edge {}->{} out of range", ed.from, ed.to)));
            }
            preds[ed.to as usize].push(ed.from as u32);
        }
        // Kahn's algorithm; a leftover node means hb is cyclic.
        let mut succs: Vec<Vec<u32>> = vec![Vec::new(); n];
        let mut indeg = vec![0u32; n];
        for (to, ps) in preds.iter().enumerate() {
            for &p in ps {
                succs[p as usize].push(to as u32);
                indeg[to] += 1;
            }
        }
        let mut ready: Vec<u32> = (0..n as u32).filter(|&i| indeg[i as usize] == 0).rev().collect();
        let width = actors.len();
        let mut clocks = vec![0u32; n * width];
        let mut done = 0;
        while let Some(i) = ready.pop() {
            done += 1;
            let i = i as usize;
            for &p in &preds[i] {
                let p = p as usize;
                for a in 0..width {
                    let v = clocks[p * width + a];
                    if v > clocks[i * width + a] {
                        clocks[i * width + a] = v;
                    }
                }
            }
            clocks[i * width + actor_of[i] as usize] = pos[i] + 1;
            for &s in &succs[i] {
                indeg[s as usize] -= 1;
                if indeg[s as usize] == 0 {
                    ready.push(s);
                }
            }
        }
        if done != n {
            return Err(Error::Checker("happens-before relation has a cycle".into()));
        }
        Ok(Self {
            actors,
            actor_of,
            pos,
            clocks,
        })
    }

    pub fn actors(&self) -> &[Actor] {
        &self.actors
    }

    pub fn actor_index(&self, e: EventId) -> usize {
        self.actor_of[e as usize] as usize
    }

    /// Position of the event within its actor's program order.
    pub fn position(&self, e: EventId) -> usize {
        self.pos[e as usize] as usize
    }

    pub fn clock(&self, e: EventId) -> &[u32] {
        let w = self.actors.len();
        &self.clocks[e as usize * w..(e as usize + 1) * w]
    }

    /// Strict happens-before.
    pub fn hb(&self, a: EventId, b: EventId) -> bool {
        a != b && self.clock(b)[self.actor_index(a)] > self.pos[a as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub first: EventId,
    pub second: EventId,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub invariant: u8,
    pub violations: Vec<Violation>,
    /// Total number found; `violations` keeps at most [`MAX_REPORTED`].
    pub count: usize,
}

pub const MAX_REPORTED: usize = 32;

impl Verdict {
    fn new(invariant: u8) -> Self {
        Self {
            invariant,
            violations: Vec::new(),
            count: 0,
        }
    }

    fn push(&mut self, first: EventId, second: EventId, reason: impl Into<String>) {
        self.count += 1;
        if self.violations.len() < MAX_REPORTED {
            self.violations.push(Violation {
                first,
                second,
                reason: reason.into(),
            });
        }
    }

    pub fn passed(&self) -> bool {
        self.count == 0
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "pass" } else { "fail" };
        writeln!(f, "invariant={} verdict={} violations={}", self.invariant, status, self.count)?;
        for v in &self.violations {
            writeln!(f, "  violation pair={},{} reason={}", v.first, v.second, v.reason)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckReport {
    pub verdicts: Vec<Verdict>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(Verdict::passed)
    }

    pub fn verdict(&self, invariant: u8) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.invariant == invariant)
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.verdicts {
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Indexes shared by the invariant checks.
pub struct Analysis<'t> {
    pub trace: &'t Trace,
    pub hb: HappensBefore,
    /// Host drain performing a buffered CPU persist.
    drain_of: HashMap<EventId, EventId>,
    /// CPU persist of each CPU store.
    persist_of: HashMap<EventId, EventId>,
    procs: BTreeMap<u64, Proc>,
    /// (thread, device, line) -> CPU accesses in program order.
    cpu_lines: HashMap<(ThreadId, DeviceId, u64), Vec<EventId>>,
}

#[derive(Debug, Clone, Default)]
struct Proc {
    submit: Option<EventId>,
    events: Vec<EventId>,
}

fn cpu_thread(e: &TraceEvent) -> Option<ThreadId> {
    match e.actor {
        Actor::Cpu(t) => Some(t),
        _ => None,
    }
}

impl<'t> Analysis<'t> {
    pub fn new(trace: &'t Trace) -> Result<Self> {
        trace.validate()?;
        let hb = HappensBefore::build(trace)?;
        let mut drain_of = HashMap::new();
        let mut persist_of = HashMap::new();
        let mut procs: BTreeMap<u64, Proc> = BTreeMap::new();
        let mut cpu_lines: HashMap<(ThreadId, DeviceId, u64), Vec<EventId>> = HashMap::new();
        for e in &trace.events {
            match e.actor {
                Actor::Host(_) if e.kind == EventKind::Persist => {
                    if let Some(of) = e.of {
                        drain_of.insert(of, e.id);
                    }
                }
                Actor::Cpu(t) => {
                    if e.kind == EventKind::Persist && e.role == Role::Request {
                        if let Some(p) = e.proc {
                            procs.entry(p).or_default().submit = Some(e.id);
                        }
                    }
                    if e.kind == EventKind::Persist {
                        if let Some(of) = e.of {
                            persist_of.insert(of, e.id);
                        }
                    }
                    let is_access = matches!(e.kind, EventKind::Write | EventKind::Read)
                        || (e.kind == EventKind::Persist && e.role != Role::Request);
                    if let (true, true, Some(r)) = (is_access, e.shared, e.range) {
                        for l in lines_of(&r) {
                            cpu_lines.entry((t, r.device, l)).or_default().push(e.id);
                        }
                    }
                }
                Actor::Ndp { .. } => {
                    if let Some(p) = e.proc {
                        procs.entry(p).or_default().events.push(e.id);
                    }
                }
                _ => {}
            }
        }
        Ok(Self {
            trace,
            hb,
            drain_of,
            persist_of,
            procs,
            cpu_lines,
        })
    }

    fn ev(&self, id: EventId) -> &TraceEvent {
        self.trace.event(id)
    }

    /// The event at which a CPU access reaches memory.
    pub fn performed(&self, x: EventId) -> EventId {
        self.drain_of.get(&x).copied().unwrap_or(x)
    }

    fn stamp(&self, e: EventId) -> Option<u64> {
        self.ev(e).persist_stamp
    }

    fn po_before(&self, a: EventId, b: EventId) -> bool {
        self.hb.actor_index(a) == self.hb.actor_index(b) && self.hb.position(a) < self.hb.position(b)
    }

    /// Last and first CPU accesses of `kind_ok` on a line around `pivot`.
    fn around(
        &self,
        key: (ThreadId, DeviceId, u64),
        pivot: EventId,
        kind_ok: impl Fn(&TraceEvent) -> bool,
    ) -> (Option<EventId>, Option<EventId>) {
        let Some(list) = self.cpu_lines.get(&key) else {
            return (None, None);
        };
        let split = list.partition_point(|&x| self.po_before(x, pivot));
        let before = list[..split].iter().rev().copied().find(|&x| kind_ok(self.ev(x)));
        let after = list[split..].iter().copied().find(|&x| kind_ok(self.ev(x)));
        (before, after)
    }

    /// Read-write ordering between NDP procedures and the submitting thread.
    ///
    /// Consecutive same-line CPU persists are ordered by invariant 2, so it
    /// suffices to test the nearest access on each side of the submission.
    pub fn invariant1(&self) -> Verdict {
        let mut v = Verdict::new(1);
        let is_persist = |e: &TraceEvent| e.kind == EventKind::Persist;
        let is_read = |e: &TraceEvent| e.kind == EventKind::Read;
        for (p, proc) in &self.procs {
            let Some(submit) = proc.submit else { continue };
            let Some(t) = cpu_thread(self.ev(submit)) else { continue };
            for &y in &proc.events {
                let ye = self.ev(y);
                let Some(yr) = ye.range else { continue };
                if !ye.shared || !matches!(ye.kind, EventKind::Read | EventKind::Persist) {
                    continue;
                }
                let y_writes = ye.kind == EventKind::Persist;
                for line in lines_of(&yr) {
                    let key = (t, yr.device, line);
                    let mut cands = vec![self.around(key, submit, is_persist)];
                    if y_writes {
                        cands.push(self.around(key, submit, is_read));
                    }
                    for (before, after) in cands {
                        if let Some(x) = before.filter(|&x| self.overlaps(x, &yr)) {
                            let px = self.performed(x);
                            if !self.hb.hb(px, y) {
                                v.push(px, y, format!("cpu access before submit of proc {p} not ordered before it"));
                            }
                        }
                        if let Some(x) = after.filter(|&x| self.overlaps(x, &yr)) {
                            let px = self.performed(x);
                            if !self.hb.hb(y, px) {
                                v.push(y, px, format!("cpu access after submit of proc {p} not ordered after it"));
                            }
                        }
                    }
                }
            }
        }
        v
    }

    fn overlaps(&self, x: EventId, r: &DevRange) -> bool {
        self.ev(x).range.is_some_and(|xr| xr.overlaps(r))
    }

    /// Persistence ordering of shared writes across CPU and NDP.
    pub fn invariant2(&self) -> Verdict {
        let mut v = Verdict::new(2);
        // every shared CPU store persists, in program order per line
        let mut chains: Vec<(&(ThreadId, DeviceId, u64), &Vec<EventId>)> = self.cpu_lines.iter().collect();
        chains.sort_by_key(|(k, _)| **k);
        for e in &self.trace.events {
            if e.actor.is_ndp_side() || e.kind != EventKind::Write || !e.shared {
                continue;
            }
            if matches!(e.actor, Actor::Cpu(_)) && !self.persist_of.contains_key(&e.id) {
                v.push(e.id, e.id, "cpu store never persisted");
            }
        }
        for (_, list) in chains {
            let mut prev: Option<EventId> = None;
            for &w in list.iter().filter(|&&x| self.ev(x).kind == EventKind::Write) {
                let Some(&pw) = self.persist_of.get(&w) else { continue };
                let cur = self.performed(pw);
                if let Some(p) = prev {
                    if !(self.hb.hb(p, cur) && self.stamp(p) < self.stamp(cur)) {
                        v.push(p, cur, "persists of same-line stores out of program order");
                    }
                }
                prev = Some(cur);
            }
        }
        let is_store = |e: &TraceEvent| e.kind == EventKind::Write;
        let is_persist = |e: &TraceEvent| e.kind == EventKind::Persist;
        for (p, proc) in &self.procs {
            let Some(submit) = proc.submit else { continue };
            let Some(t) = cpu_thread(self.ev(submit)) else { continue };
            for &y in &proc.events {
                let ye = self.ev(y);
                let Some(yr) = ye.range else { continue };
                if !ye.shared || ye.kind != EventKind::Persist {
                    continue;
                }
                for line in lines_of(&yr) {
                    let key = (t, yr.device, line);
                    let (before, _) = self.around(key, submit, is_store);
                    if let Some(w) = before.filter(|&w| self.overlaps(w, &yr)) {
                        match self.persist_of.get(&w).map(|&x| self.performed(x)) {
                            Some(pw) if self.hb.hb(pw, y) && self.stamp(pw) < self.stamp(y) => {}
                            Some(pw) => v.push(pw, y, format!("store before proc {p} persists after its shared write")),
                            None => v.push(w, y, format!("store before proc {p} never persists")),
                        }
                    }
                    let (_, after) = self.around(key, submit, is_persist);
                    if let Some(x) = after.filter(|&x| self.overlaps(x, &yr)) {
                        let px = self.performed(x);
                        if self.stamp(px) < self.stamp(y) {
                            v.push(y, px, format!("persist after proc {p} stamped before its shared write"));
                        }
                    }
                }
            }
        }
        v
    }

    /// Persist before synchronization, and recovery-data resets after it.
    pub fn invariant3(&self) -> Result<Verdict> {
        let mut v = Verdict::new(3);
        let mut completes: BTreeMap<u64, Vec<EventId>> = BTreeMap::new();
        let mut begins: BTreeMap<u64, Vec<EventId>> = BTreeMap::new();
        // transactions some device worked on; the rest ran entirely on the CPU
        let mut offloaded: BTreeSet<u64> = BTreeSet::new();
        for e in &self.trace.events {
            if let (Some(tx), false) = (e.tx, matches!(e.actor, Actor::Cpu(_))) {
                offloaded.insert(tx);
            }
            match (e.kind, e.tx) {
                (EventKind::SyncComplete, Some(tx)) => completes.entry(tx).or_default().push(e.id),
                (EventKind::SyncBegin, Some(tx)) => begins.entry(tx).or_default().push(e.id),
                _ => {}
            }
        }
        if self.trace.crash_index().is_none() {
            if let Some((tx, b)) = begins.iter().find(|(tx, _)| !completes.contains_key(tx)) {
                return Err(Error::Checker(format!(
                    "sync begin {} of transaction {tx} has no matching completion",
                    b[0]
                )));
            }
        }
        for e in &self.trace.events {
            let Some(tx) = e.tx else { continue };
            if e.kind != EventKind::Persist {
                continue;
            }
            if matches!(e.actor, Actor::Ndp { .. }) {
                for &c in completes.get(&tx).into_iter().flatten() {
                    if !(self.hb.hb(e.id, c) && self.stamp(e.id) < self.stamp(c)) {
                        v.push(e.id, c, format!("write of transaction {tx} not persisted before its sync"));
                    }
                }
            }
            if e.role == Role::Reset && offloaded.contains(&tx) {
                let cs = completes.get(&tx).map(Vec::as_slice).unwrap_or_default();
                if cs.is_empty() {
                    v.push(e.id, e.id, format!("reset of transaction {tx} without synchronization"));
                } else if !cs
                    .iter()
                    .any(|&c| self.hb.hb(c, e.id) && self.stamp(c) < self.stamp(e.id))
                {
                    v.push(cs[0], e.id, format!("reset of transaction {tx} persisted before its sync"));
                }
            }
        }
        Ok(v)
    }
}

pub fn check_invariant1(trace: &Trace) -> Result<Verdict> {
    Ok(Analysis::new(trace)?.invariant1())
}

pub fn check_invariant2(trace: &Trace) -> Result<Verdict> {
    Ok(Analysis::new(trace)?.invariant2())
}

pub fn check_invariant3(trace: &Trace) -> Result<Verdict> {
    Analysis::new(trace)?.invariant3()
}

/// Failure recovery: every recovery read observes a write persisted before
/// the crash, and the recovered image is one the oracle deems consistent.
pub fn check_invariant4(trace: &Trace, recovered: &[u8], oracle_images: &[Vec<u8>]) -> Result<Verdict> {
    if oracle_images.is_empty() {
        return Err(Error::Checker("no oracle images supplied".into()));
    }
    let crash = trace
        .crash_index()
        .ok_or_else(|| Error::Checker("trace has no crash event".into()))?;
    let mut v = Verdict::new(4);
    for &(r, w) in &trace.rf {
        let (re, we) = (trace.event(r), trace.event(w));
        let persisted = we.kind == EventKind::Persist && (w as usize) < crash;
        let overlap = matches!((re.range, we.range), (Some(a), Some(b)) if a.overlaps(&b));
        if !persisted || !overlap || re.kind != EventKind::RecoveryRead {
            v.push(r, w, "recovery read does not observe a write persisted before the crash");
        }
    }
    if !oracle_images.iter().any(|i| i.as_slice() == recovered) {
        v.push(crash as EventId, crash as EventId, "recovered image matches no consistent image");
    }
    Ok(v)
}

/// Invariants 1 to 3 on a crash-free trace.
pub fn check_trace(trace: &Trace) -> Result<CheckReport> {
    let a = Analysis::new(trace)?;
    Ok(CheckReport {
        verdicts: vec![a.invariant1(), a.invariant2(), a.invariant3()?],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{EdgeKind, EventSpec, TraceBuilder};

    fn cpu() -> Actor {
        Actor::Cpu(ThreadId(0))
    }

    fn ndp() -> Actor {
        Actor::Ndp { device: 0, unit: 0 }
    }

    fn a() -> DevRange {
        DevRange::new(0, 0x100, 8)
    }

    /// Store A, persist, submit a log of A, NDP reads A and writes the log.
    fn logged_update(stall: bool) -> Trace {
        let mut b = TraceBuilder::new(true);
        let mut stamp = 0..;
        let req = b.push(
            EventSpec::new(cpu(), EventKind::Persist)
                .stamp(stamp.next().unwrap())
                .proc(1)
                .tx(Some(1))
                .role(Role::Request),
        );
        let rd = b.push(EventSpec::new(ndp(), EventKind::Read).range(a()).shared(true).proc(1).tx(Some(1)));
        b.edge(req, rd, EdgeKind::Dispatch);
        let st = b.push(EventSpec::new(cpu(), EventKind::Write).range(a()).shared(true).role(Role::Data));
        let p = b.push(
            EventSpec::new(cpu(), EventKind::Persist)
                .range(a())
                .shared(true)
                .stamp(stamp.next().unwrap())
                .role(Role::Data)
                .of(st),
        );
        let lg = b.push(
            EventSpec::new(ndp(), EventKind::Persist)
                .range(DevRange::new(0, 0x1000, 8))
                .stamp(stamp.next().unwrap())
                .proc(1)
                .tx(Some(1))
                .role(Role::Log),
        );
        if stall {
            let d = b.push(
                EventSpec::new(Actor::Host(0), EventKind::Persist)
                    .range(a())
                    .shared(true)
                    .stamp(stamp.next().unwrap())
                    .role(Role::Data)
                    .of(p),
            );
            b.edge(lg, d, EdgeKind::Stall);
        }
        b.into_trace()
    }

    #[test]
    fn hb_is_transitive_and_irreflexive() {
        let t = logged_update(true);
        let hb = HappensBefore::build(&t).unwrap();
        assert!(hb.hb(0, 1) && hb.hb(1, 4) && hb.hb(0, 4));
        assert!(!hb.hb(4, 4));
        assert!(!hb.hb(4, 0));
        assert!(hb.hb(4, 5), "stall edge orders the drain after the log");
    }

    #[test]
    fn cycle_is_a_checker_fault() {
        let mut t = logged_update(true);
        t.edges.push(crate::trace::Edge {
            from: 5,
            to: 1,
            kind: EdgeKind::Order,
        });
        assert!(matches!(HappensBefore::build(&t), Err(Error::Checker(_))));
    }

    #[test]
    fn stalled_persist_passes_invariant1() {
        let r = check_trace(&logged_update(true)).unwrap();
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn concurrent_persist_violates_invariant1_citing_pair() {
        let v = check_invariant1(&logged_update(false)).unwrap();
        assert!(!v.passed());
        assert_eq!((v.violations[0].first, v.violations[0].second), (1, 3));
    }

    #[test]
    fn unshared_log_writes_are_relaxed() {
        let v = check_invariant2(&logged_update(true)).unwrap();
        assert!(v.passed(), "{v}");
    }

    fn synced(reset_after: bool, with_sync: bool) -> Trace {
        let mut b = TraceBuilder::new(true);
        let w0 = b.push(
            EventSpec::new(ndp(), EventKind::Persist)
                .range(DevRange::new(0, 0x1000, 8))
                .stamp(0)
                .proc(1)
                .tx(Some(7))
                .role(Role::Log),
        );
        let w1 = b.push(
            EventSpec::new(Actor::Ndp { device: 1, unit: 0 }, EventKind::Persist)
                .range(DevRange::new(1, 0x1000, 8))
                .stamp(1)
                .proc(2)
                .tx(Some(7))
                .role(Role::Log),
        );
        let reset = |b: &mut TraceBuilder, s| {
            b.push(
                EventSpec::new(Actor::Handler(0), EventKind::Persist)
                    .range(DevRange::new(0, 0x1008, 1))
                    .stamp(s)
                    .tx(Some(7))
                    .role(Role::Reset),
            )
        };
        if !reset_after {
            reset(&mut b, 2);
        }
        if with_sync {
            let c = b.push(EventSpec::new(Actor::Handler(0), EventKind::SyncComplete).stamp(3).tx(Some(7)));
            b.edge(w0, c, EdgeKind::Complete);
            b.edge(w1, c, EdgeKind::Remote);
        }
        if reset_after {
            reset(&mut b, 4);
        }
        b.into_trace()
    }

    #[test]
    fn writes_before_sync_and_reset_after_pass() {
        assert!(check_invariant3(&synced(true, true)).unwrap().passed());
    }

    #[test]
    fn reset_before_sync_violates_invariant3() {
        assert!(!check_invariant3(&synced(false, true)).unwrap().passed());
    }

    #[test]
    fn reset_without_sync_violates_invariant3() {
        assert!(!check_invariant3(&synced(true, false)).unwrap().passed());
    }

    #[test]
    fn cpu_only_transaction_needs_no_sync() {
        let mut b = TraceBuilder::new(true);
        b.push(
            EventSpec::new(cpu(), EventKind::Persist)
                .range(DevRange::new(0, 0x1000, 8))
                .stamp(0)
                .tx(Some(3))
                .role(Role::Log),
        );
        b.push(
            EventSpec::new(cpu(), EventKind::Persist)
                .range(DevRange::new(0, 0x1008, 1))
                .stamp(1)
                .tx(Some(3))
                .role(Role::Reset),
        );
        assert!(check_invariant3(&b.into_trace()).unwrap().passed());
    }

    #[test]
    fn unmatched_sync_begin_is_a_fault() {
        let mut b = TraceBuilder::new(true);
        b.push(EventSpec::new(ndp(), EventKind::SyncBegin).tx(Some(1)));
        assert!(matches!(check_invariant3(&b.into_trace()), Err(Error::Checker(_))));
    }

    #[test]
    fn invariant4_requires_images_and_membership() {
        let mut t = synced(true, true);
        t.events.push(TraceEvent {
            id: t.events.len() as u64,
            actor: cpu(),
            kind: EventKind::Crash,
            range: None,
            po_index: 0,
            persist_stamp: None,
            shared: false,
            proc: None,
            tx: None,
            role: Role::None,
            of: None,
        });
        assert!(check_invariant4(&t, &[1], &[]).is_err());
        assert!(check_invariant4(&t, &[1], &[vec![1], vec![2]]).unwrap().passed());
        assert!(!check_invariant4(&t, &[3], &[vec![1], vec![2]]).unwrap().passed());
    }
}
