//! Discrete-event simulation of CPU threads driving a group of NDP devices.
//!
//! Workload code calls the engine synchronously on behalf of a CPU thread.
//! Each thread has its own clock; device activity (unit completions and
//! inter-device completion messages) sits on an agenda ordered by simulated
//! time and is processed whenever a thread call needs the device state at
//! its clock, or has to block.
//!
//! NDP sub-requests execute functionally when they are dispatched; their
//! trace events are emitted then, and the range they touch stays claimed
//! until the unit finishes in simulated time.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::checker::{lines_of, LINE};
use crate::cost::CostModel;
use crate::device::{Device, HostEntry, Owner, MAX_OUTSTANDING_SYNCS};
use crate::error::{Error, Result};
use crate::layout::{
    CommitStatus, DeviceRegions, LogEntry, PoolLayout, SlotRegion, ENTRY_PREFIX, LOG_SLOT, LOG_SLOT_PAYLOAD,
    REDO_COMMIT_AREA, REDO_SLOT,
};
use crate::pm::{PersistedImage, WriteSource};
use crate::primitives::{
    entry_writes, execute, is_shared, make_tx, moved_bytes, reset_items, AccessKind, Mechanism, PrimitiveKind,
    ResetItem, SubOp, SubRequest,
};
use crate::scalar::Scalar;
use crate::snapshot::{DeviceSnapshot, PersistenceDomainSnapshot, SnapHostEntry, SnapRequest, SnapSync};
use crate::trace::{Actor, EdgeKind, EventId, EventKind, EventSpec, Role, Trace, TraceBuilder, TraceEvent};
use crate::translate::{DevAddr, DevRange, DeviceId, Geometry, PoolId, ThreadId};

/// System configuration under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExecMode {
    /// Crash consistency runs on the CPU.
    Baseline,
    /// One device with hardware synchronization.
    #[serde(rename = "SD")]
    SingleDevice,
    /// Several devices; the CPU polls for completion and deletes logs itself.
    #[serde(rename = "MD_SWSync")]
    MultiDeviceSwSync,
    /// Several devices with delayed hardware synchronization.
    #[serde(rename = "MD")]
    MultiDevice,
}

impl ExecMode {
    pub const ALL: [ExecMode; 4] = [
        ExecMode::Baseline,
        ExecMode::SingleDevice,
        ExecMode::MultiDeviceSwSync,
        ExecMode::MultiDevice,
    ];

    pub fn offloads(self) -> bool {
        self != ExecMode::Baseline
    }

    pub fn label(self) -> &'static str {
        match self {
            ExecMode::Baseline => "Baseline",
            ExecMode::SingleDevice => "SD",
            ExecMode::MultiDeviceSwSync => "MD_SWSync",
            ExecMode::MultiDevice => "MD",
        }
    }

    /// Device count used by the comparison matrix.
    pub fn default_devices(self) -> usize {
        match self {
            ExecMode::Baseline | ExecMode::SingleDevice => 1,
            _ => 2,
        }
    }

    /// Name used in configuration files and reports.
    pub fn name(self) -> &'static str {
        match self {
            ExecMode::Baseline => "Baseline",
            ExecMode::SingleDevice => "SD",
            ExecMode::MultiDeviceSwSync => "MD_SWSync",
            ExecMode::MultiDevice => "MD",
        }
    }
}

impl std::fmt::Display for ExecMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Deliberate protocol violations used to validate the checker and oracle.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultInjection {
    /// Recovery data is reset at local completion instead of after sync.
    pub premature_reset: bool,
    /// CPU accesses are never held behind conflicting NDP work.
    pub skip_conflict_stall: bool,
    /// No synchronization at all; each device resets at local completion.
    pub skip_sync: bool,
}

impl FaultInjection {
    pub fn any(&self) -> bool {
        self.premature_reset || self.skip_conflict_stall || self.skip_sync
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig<T: Scalar> {
    pub devices: usize,
    pub granularity: u64,
    pub capacity_per_device: u64,
    pub striped_per_device: u64,
    pub page_size: u64,
    /// Largest unit a bulk NDP copy persists atomically.
    pub persist_chunk: u64,
    pub cost: CostModel<T>,
    pub mode: ExecMode,
    /// Keep payloads and request records for crash enumeration.
    pub record: bool,
    pub faults: FaultInjection,
    pub device_path: String,
}

impl<T: Scalar> Default for EngineConfig<T> {
    fn default() -> Self {
        Self {
            devices: 2,
            granularity: 4096,
            capacity_per_device: 8 << 20,
            striped_per_device: 4 << 20,
            page_size: 4096,
            persist_chunk: 8,
            cost: CostModel::default(),
            mode: ExecMode::MultiDevice,
            record: false,
            faults: FaultInjection::default(),
            device_path: DEFAULT_DEVICE_PATH.to_string(),
        }
    }
}

pub const DEFAULT_DEVICE_PATH: &str = "/dev/nearpm0";

/// Handle returned by [`Engine::init_device`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceHandle {
    pub path: String,
    pub device_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProcState {
    Queued,
    Running,
    Done,
}

#[derive(Debug, Clone)]
pub struct ProcInfo<T> {
    pub req: SubRequest,
    pub accept: EventId,
    pub accept_stamp: u64,
    pub first: Option<EventId>,
    pub last: Option<EventId>,
    pub footprint: Vec<(DevRange, bool)>,
    pub state: ProcState,
    pub done_at: Option<T>,
}

/// A CPU persist that waited in a host queue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BufferedRecord {
    pub device: DeviceId,
    pub drain: Option<EventId>,
}

/// Everything crash enumeration needs beyond the trace itself.
#[derive(Debug, Clone, Default)]
pub struct ExecutionRecord {
    pub initial: Vec<PersistedImage>,
    /// Bytes written by each persist event.
    pub payloads: HashMap<EventId, (DevAddr, Vec<u8>)>,
    pub requests: BTreeMap<u64, RequestRecord>,
    pub buffered: BTreeMap<EventId, BufferedRecord>,
    pub pools: Vec<(PoolLayout, Mechanism)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestRecord {
    pub req: SubRequest,
    pub accept: EventId,
    pub first: Option<EventId>,
    pub last: Option<EventId>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ThreadStats<T> {
    pub clock: T,
    pub region_ns: T,
    pub transactions: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunStats<T> {
    /// Summed crash-consistency region time over all transactions.
    pub region_ns: T,
    /// Completion time of the whole run.
    pub total_ns: T,
    pub transactions: u64,
    pub procs: u64,
    pub events: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Cpu,
    Ndp,
}

#[derive(Debug, Clone, Default)]
struct LineState {
    last_write: Option<(EventId, Side)>,
    reads: Vec<(EventId, Side)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Action {
    UnitDone { dev: DeviceId, unit: usize },
    SyncNotify { to: DeviceId, tx: u64, from: DeviceId },
}

#[derive(Debug, Clone)]
struct Store {
    range: DevRange,
    event: EventId,
    role: Role,
    tx: Option<u64>,
}

#[derive(Debug, Clone)]
struct OpenTx<T> {
    tx: u64,
    pool: PoolId,
    devices: BTreeSet<DeviceId>,
    seq: u32,
    start: T,
    shadows: BTreeMap<(DeviceId, u64), u64>,
}

#[derive(Debug, Clone, Default)]
struct CpuThread<T> {
    clock: T,
    counter: u64,
    open: Option<OpenTx<T>>,
    /// Unflushed stores in program order.
    stores: Vec<Store>,
    region_ns: T,
    transactions: u64,
}

#[derive(Debug, Clone)]
struct TxSync<T> {
    thread: ThreadId,
    pool: PoolId,
    mechanism: Mechanism,
    participants: Vec<DeviceId>,
    begins: BTreeMap<DeviceId, EventId>,
    ready: BTreeMap<DeviceId, Vec<ResetItem>>,
    completed: BTreeMap<DeviceId, EventId>,
    local_done: BTreeSet<DeviceId>,
    start: T,
}

#[derive(Debug, Clone)]
struct PoolState {
    layout: PoolLayout,
    mechanism: Mechanism,
    undo_free: Vec<BTreeSet<u64>>,
    ckpt_free: Vec<BTreeSet<u64>>,
    shadow_free: Vec<BTreeSet<u64>>,
    redo_free: Vec<BTreeSet<u64>>,
    /// Current location of every shadowed page (payload address).
    page_loc: Vec<BTreeMap<u64, u64>>,
}

pub struct Engine<T: Scalar> {
    cfg: EngineConfig<T>,
    geometry: Geometry,
    devices: Vec<Device<T>>,
    stamps: u64,
    trace: TraceBuilder,
    record: ExecutionRecord,
    now: T,
    agenda: Vec<(T, u64, Action)>,
    agenda_seq: u64,
    threads: BTreeMap<ThreadId, CpuThread<T>>,
    pools: BTreeMap<PoolId, PoolState>,
    next_phys: u64,
    next_private: Vec<u64>,
    procs: BTreeMap<u64, ProcInfo<T>>,
    /// Sub-requests not yet done.
    active: BTreeSet<u64>,
    /// Sub-requests of each transaction, in issue order.
    tx_procs: HashMap<u64, Vec<u64>>,
    next_proc: u64,
    lines: HashMap<(DeviceId, u64), LineState>,
    syncs: BTreeMap<u64, TxSync<T>>,
    sync_queue: BTreeMap<ThreadId, VecDeque<u64>>,
    prev_complete: BTreeMap<ThreadId, EventId>,
    /// Volatile store event ids, parallel to each device's volatile buffer.
    volatile_events: Vec<Vec<(EventId, ThreadId)>>,
    last_activity: T,
}

fn round_up(v: u64, to: u64) -> u64 {
    v.div_ceil(to) * to
}

impl<T: Scalar> Engine<T> {
    pub fn new(cfg: EngineConfig<T>) -> Result<Self> {
        cfg.cost.validate()?;
        let geometry = Geometry::new(
            cfg.devices,
            cfg.granularity,
            cfg.striped_per_device,
            cfg.capacity_per_device,
        )?;
        if cfg.page_size == 0 || cfg.page_size > cfg.granularity || cfg.granularity % cfg.page_size != 0 {
            return Err(Error::Config {
                path: "devices.page_size".into(),
                msg: format!(
                    "page size {} must divide the interleave granularity {}",
                    cfg.page_size, cfg.granularity
                ),
            });
        }
        if cfg.page_size % 64 != 0 {
            return Err(Error::Config {
                path: "devices.page_size".into(),
                msg: "page size must be a multiple of 64 bytes".into(),
            });
        }
        if cfg.granularity < REDO_SLOT {
            return Err(Error::Config {
                path: "devices.granularity".into(),
                msg: format!("granularity must be at least {REDO_SLOT} bytes"),
            });
        }
        let devices: Vec<Device<T>> = (0..cfg.devices)
            .map(|d| Device::new(d, cfg.capacity_per_device, cfg.cost.units_per_device))
            .collect();
        let record = ExecutionRecord {
            initial: devices.iter().map(|d| d.memory.image()).collect(),
            ..Default::default()
        };
        Ok(Self {
            geometry,
            next_private: vec![cfg.striped_per_device; cfg.devices],
            volatile_events: vec![Vec::new(); cfg.devices],
            devices,
            stamps: 0,
            trace: TraceBuilder::new(true),
            record,
            now: T::zero(),
            agenda: Vec::new(),
            agenda_seq: 0,
            threads: BTreeMap::new(),
            pools: BTreeMap::new(),
            next_phys: 0,
            procs: BTreeMap::new(),
            active: BTreeSet::new(),
            tx_procs: HashMap::new(),
            next_proc: 0,
            lines: HashMap::new(),
            syncs: BTreeMap::new(),
            sync_queue: BTreeMap::new(),
            prev_complete: BTreeMap::new(),
            last_activity: T::zero(),
            cfg,
        })
    }

    pub fn config(&self) -> &EngineConfig<T> {
        &self.cfg
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn now(&self) -> T {
        self.now
    }

    pub fn trace(&self) -> &Trace {
        self.trace.trace()
    }

    pub fn record(&self) -> &ExecutionRecord {
        &self.record
    }

    pub fn device(&self, d: DeviceId) -> &Device<T> {
        &self.devices[d]
    }

    pub fn layout(&self, pool: PoolId) -> Result<&PoolLayout> {
        self.pools
            .get(&pool)
            .map(|p| &p.layout)
            .ok_or(Error::UnknownPool { pool, thread: 0 })
    }

    pub fn thread_clock(&self, t: ThreadId) -> T {
        self.threads.get(&t).map_or(T::zero(), |c| c.clock)
    }

    pub fn procs(&self) -> &BTreeMap<u64, ProcInfo<T>> {
        &self.procs
    }

    pub fn init_device(&self, path: &str) -> Result<DeviceHandle> {
        if path != self.cfg.device_path {
            return Err(Error::Init(path.to_string()));
        }
        Ok(DeviceHandle {
            path: path.to_string(),
            device_count: self.cfg.devices,
        })
    }

    // ----- pools -------------------------------------------------------

    /// Registers a pool on every device and reserves its NDP-managed regions.
    pub fn create_pool(
        &mut self,
        pool: PoolId,
        thread: Option<ThreadId>,
        base_virt: u64,
        data_size: u64,
        mechanism: Mechanism,
    ) -> Result<PoolLayout> {
        if self.pools.contains_key(&pool) {
            return Err(Error::Registration(format!("pool {pool} already registered")));
        }
        let span = self.geometry.stripe_span();
        let d = self.cfg.devices as u64;
        let data_size = round_up(data_size.max(1), span);
        let redo_size = round_up((data_size / 4).max(REDO_COMMIT_AREA + 8 * REDO_SLOT * d), span);
        if base_virt % span != 0 {
            return Err(Error::Registration(format!(
                "pool {pool} base {base_virt:#x} not aligned to the stripe span {span:#x}"
            )));
        }
        let base_phys = self.next_phys;
        if base_phys + data_size + redo_size > self.geometry.striped_total() {
            return Err(Error::Overflow {
                region: "striped space",
                pool,
                device: 0,
            });
        }
        let dpd = data_size / d;
        let quarter = dpd / 4;
        let ckpt_slot = ENTRY_PREFIX + self.cfg.page_size;
        let mut regions = Vec::new();
        for dev in 0..self.cfg.devices {
            let mut at = self.next_private[dev];
            let mut region = |slot_size: u64, slots: u64| {
                let r = SlotRegion {
                    start: at,
                    slot_size,
                    slots,
                };
                at = round_up(r.end(), 64);
                r
            };
            let undo = region(LOG_SLOT, (quarter / LOG_SLOT).max(4));
            let checkpoint = region(ckpt_slot, (quarter / ckpt_slot).max(4));
            // every page may live in a shadow slot, plus room for new copies
            let shadow = region(ckpt_slot, dpd / self.cfg.page_size + (quarter / ckpt_slot).max(4));
            let pagerefs = region(8, dpd / self.cfg.page_size);
            if at > self.cfg.capacity_per_device {
                return Err(Error::Overflow {
                    region: "device private space",
                    pool,
                    device: dev,
                });
            }
            regions.push(DeviceRegions {
                undo,
                checkpoint,
                shadow,
                pagerefs,
            });
            self.next_private[dev] = at;
        }
        let layout = PoolLayout {
            pool,
            thread,
            base_virt,
            base_phys,
            data_size,
            redo_size,
            page_size: self.cfg.page_size,
            geometry: self.geometry,
            regions,
        };
        for dev in &mut self.devices {
            dev.mapping
                .register_pool(pool, thread, base_virt, base_phys, layout.span())?;
        }
        self.next_phys += data_size + redo_size;
        let slots = |f: &dyn Fn(&DeviceRegions) -> &SlotRegion| -> Vec<BTreeSet<u64>> {
            layout
                .regions
                .iter()
                .map(|r| (0..f(r).slots).map(|i| f(r).slot(i)).collect())
                .collect()
        };
        let state = PoolState {
            undo_free: slots(&|r| &r.undo),
            ckpt_free: slots(&|r| &r.checkpoint),
            shadow_free: slots(&|r| &r.shadow),
            redo_free: (0..self.cfg.devices)
                .map(|dv| layout.redo_slots_on(dv).into_iter().map(|v| layout.locate(v).local).collect())
                .collect(),
            page_loc: vec![BTreeMap::new(); self.cfg.devices],
            layout: layout.clone(),
            mechanism,
        };
        self.pools.insert(pool, state);
        self.record.pools.push((layout.clone(), mechanism));
        Ok(layout)
    }

    /// Writes initial pool contents straight into persistent memory, outside
    /// of any trace. Used to set up scenarios.
    pub fn preload(&mut self, pool: PoolId, vaddr: u64, bytes: &[u8]) -> Result<()> {
        let layout = self.layout(pool)?.clone();
        layout.check_span(vaddr, bytes.len() as u64)?;
        let mut off = 0usize;
        for r in layout.chunks(vaddr, bytes.len() as u64) {
            let b = &bytes[off..off + r.len as usize];
            self.devices[r.device]
                .memory
                .persist(r.start, b, WriteSource::CpuCached, None, 0);
            self.record.initial[r.device].write(r.start, b);
            off += r.len as usize;
        }
        Ok(())
    }

    // ----- time --------------------------------------------------------

    fn schedule(&mut self, at: T, action: Action) {
        self.agenda.push((at, self.agenda_seq, action));
        self.agenda_seq += 1;
    }

    fn next_action(&self) -> Option<usize> {
        self.agenda
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                a.0.partial_cmp(&b.0)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.1.cmp(&b.1))
            })
            .map(|(i, _)| i)
    }

    fn pop_action(&mut self) -> Result<bool> {
        let Some(i) = self.next_action() else {
            return Ok(false);
        };
        let (t, _, action) = self.agenda.swap_remove(i);
        self.now = self.now.max_of(t);
        self.fire(action)?;
        Ok(true)
    }

    /// Processes device activity up to simulated time `t`.
    pub fn advance_to(&mut self, t: T) -> Result<()> {
        while let Some(i) = self.next_action() {
            if self.agenda[i].0 > t {
                break;
            }
            self.pop_action()?;
        }
        self.now = self.now.max_of(t);
        Ok(())
    }

    /// Advances simulated time by `ns` and returns the events emitted.
    pub fn step(&mut self, ns: T) -> Result<Vec<TraceEvent>> {
        let from = self.trace.trace().events.len();
        let to = self.now + ns;
        self.advance_to(to)?;
        Ok(self.trace.trace().events[from..].to_vec())
    }

    #[track_caller]
    fn wait_until(&mut self, mut cond: impl FnMut(&Self) -> bool) -> Result<()> {
        let at = std::panic::Location::caller();
        while !cond(self) {
            if !self.pop_action()? {
                return Err(Error::Protocol(format!(
                    "simulation stalled: the wait at {}:{} can never be satisfied",
                    at.file(),
                    at.line()
                )));
            }
        }
        Ok(())
    }

    fn thread_mut(&mut self, t: ThreadId) -> &mut CpuThread<T> {
        self.threads.entry(t).or_default()
    }

    /// Brings device state to the thread's clock before it acts.
    fn sync_thread(&mut self, t: ThreadId) -> Result<()> {
        let clock = self.thread_mut(t).clock;
        self.advance_to(clock)?;
        let now = self.now;
        let th = self.thread_mut(t);
        th.clock = th.clock.max_of(now);
        Ok(())
    }

    fn charge(&mut self, t: ThreadId, ns: T) {
        let th = self.thread_mut(t);
        th.clock = th.clock + ns;
    }

    /// Blocks a thread until `cond` holds.
    #[track_caller]
    fn block(&mut self, t: ThreadId, cond: impl FnMut(&Self) -> bool) -> Result<()> {
        self.wait_until(cond)?;
        let now = self.now;
        let th = self.thread_mut(t);
        th.clock = th.clock.max_of(now);
        Ok(())
    }

    pub fn cpu_compute(&mut self, t: ThreadId, ns: T) {
        self.charge(t, ns);
    }

    // ----- trace helpers -----------------------------------------------

    fn stamp(&mut self) -> u64 {
        let s = self.stamps;
        self.stamps += 1;
        s
    }

    fn emit(&mut self, spec: EventSpec) -> EventId {
        self.last_activity = self.last_activity.max_of(self.now);
        self.trace.push(spec)
    }

    fn emit_persist(&mut self, spec: EventSpec, addr: DevAddr, bytes: &[u8], apply: bool) -> EventId {
        let s = self.stamp();
        let id = self.emit(spec.stamp(s));
        if apply {
            self.devices[addr.device]
                .memory
                .persist(addr.local, bytes, WriteSource::NdpDirect, None, s);
        }
        if self.cfg.record {
            self.record.payloads.insert(id, (addr, bytes.to_vec()));
        }
        id
    }

    /// Orders an access after earlier conflicting accesses to the same lines.
    fn touch(&mut self, range: DevRange, write: bool, first: EventId, last: EventId, side: Side) {
        let mut deps: BTreeSet<EventId> = BTreeSet::new();
        let skip_cross = self.cfg.faults.skip_conflict_stall;
        for l in lines_of(&range) {
            let st = self.lines.entry((range.device, l)).or_default();
            let mut add = |(e, s): (EventId, Side)| {
                if !(skip_cross && s != side) {
                    deps.insert(e);
                }
            };
            if let Some(w) = st.last_write {
                add(w);
            }
            if write {
                for &r in &st.reads {
                    add(r);
                }
                st.last_write = Some((last, side));
                st.reads.clear();
            } else {
                st.reads.push((last, side));
            }
        }
        for d in deps {
            if d != first && d != last && d < first {
                self.trace.edge(d, first, EdgeKind::Order);
            }
        }
    }

    // ----- CPU memory path ---------------------------------------------

    /// Translated device pieces of a pool range, with shadowed pages
    /// redirected to their current copy.
    fn cpu_pieces(&self, t: ThreadId, pool: PoolId, vaddr: u64, len: u64) -> Result<Vec<DevRange>> {
        let ps = self.pools.get(&pool).ok_or(Error::UnknownPool { pool, thread: t.0 })?;
        let phys = self.devices[0].mapping.translate_range(pool, t, vaddr, len)?;
        let layout = &ps.layout;
        let open = self.threads.get(&t).and_then(|th| th.open.as_ref()).filter(|o| o.pool == pool);
        let mut out = Vec::new();
        for r in self.geometry.chunks(phys, len) {
            let data = layout.data_range(r.device);
            if !data.overlaps(&r) {
                out.push(r);
                continue;
            }
            let mut cur = r.start;
            while cur < r.end() {
                let page = (cur - layout.local_base()) / layout.page_size;
                let page_start = layout.local_base() + page * layout.page_size;
                let end = (page_start + layout.page_size).min(r.end());
                let base = open
                    .and_then(|o| o.shadows.get(&(r.device, page)))
                    .map(|slot| slot + ENTRY_PREFIX)
                    .or_else(|| ps.page_loc[r.device].get(&page).copied())
                    .unwrap_or(page_start);
                out.push(DevRange::new(r.device, base + (cur - page_start), end - cur));
                cur = end;
            }
        }
        Ok(out)
    }

    fn pool_of_range(&self, r: &DevRange) -> Option<&PoolState> {
        self.pools.values().find(|p| {
            let l = &p.layout;
            let striped = DevRange::new(r.device, l.local_base(), l.span() / l.devices() as u64);
            striped.overlaps(r) || l.ndp_region_of(r).is_some() || l.is_shadow(r)
        })
    }

    fn shared(&self, r: &DevRange) -> bool {
        self.pool_of_range(r).map_or(true, |p| is_shared(&p.layout, r))
    }

    fn store_pieces(&mut self, t: ThreadId, pieces: &[DevRange], bytes: &[u8], role: Role, tx: Option<u64>) -> Result<()> {
        let mut off = 0usize;
        for r in pieces {
            let mut cur = r.start;
            while cur < r.end() {
                let end = ((cur / LINE + 1) * LINE).min(r.end());
                let len = (end - cur) as usize;
                let piece = DevRange::new(r.device, cur, len as u64);
                let b = &bytes[off..off + len];
                let shared = self.shared(&piece);
                let ev = self.emit(
                    EventSpec::new(Actor::Cpu(t), EventKind::Write)
                        .range(piece)
                        .shared(shared)
                        .role(role)
                        .tx(tx),
                );
                let mut dummy = crate::pm::StampClock::new();
                self.devices[r.device]
                    .memory
                    .write(cur, b, WriteSource::CpuCached, Some(t), &mut dummy)?;
                self.volatile_events[r.device].push((ev, t));
                self.thread_mut(t).stores.push(Store {
                    range: piece,
                    event: ev,
                    role,
                    tx,
                });
                off += len;
                cur = end;
            }
        }
        let cost = self.cfg.cost.cpu_store_ns(bytes.len() as u64);
        self.charge(t, cost);
        Ok(())
    }

    pub fn cpu_write(&mut self, t: ThreadId, pool: PoolId, vaddr: u64, bytes: &[u8]) -> Result<()> {
        self.sync_thread(t)?;
        let pieces = self.cpu_pieces(t, pool, vaddr, bytes.len() as u64)?;
        self.store_pieces(t, &pieces, bytes, Role::Data, None)
    }

    /// Whether unfinished device work, queued or running, will write into `r`.
    fn pending_write(&self, r: &DevRange) -> bool {
        self.active.iter().map(|id| &self.procs[id]).any(|p| {
            p.req.device == r.device && p.footprint.iter().any(|(f, w)| *w && f.overlaps(r))
        })
    }

    /// Bytes a CPU load observes: the persisted image overlaid by writes
    /// waiting in the host queue and then by cached stores.
    fn visible(&self, r: &DevRange) -> Result<Vec<u8>> {
        let dev = &self.devices[r.device];
        dev.memory.check_range(r.start, r.len)?;
        let mut out = dev.memory.read_persisted(r.start, r.len).to_vec();
        let mut overlay = |addr: u64, bytes: &[u8]| {
            let lo = addr.max(r.start);
            let hi = (addr + bytes.len() as u64).min(r.end());
            if lo < hi {
                out[(lo - r.start) as usize..(hi - r.start) as usize]
                    .copy_from_slice(&bytes[(lo - addr) as usize..(hi - addr) as usize]);
            }
        };
        for e in dev.host_queue.overlapping(r) {
            overlay(e.range.start, &e.bytes);
        }
        for v in dev.memory.volatile() {
            overlay(v.addr, &v.bytes);
        }
        Ok(out)
    }

    pub fn cpu_read(&mut self, t: ThreadId, pool: PoolId, vaddr: u64, len: u64) -> Result<Vec<u8>> {
        self.sync_thread(t)?;
        let pieces = self.cpu_pieces(t, pool, vaddr, len)?;
        let mut out = Vec::with_capacity(len as usize);
        for r in pieces {
            if !self.cfg.faults.skip_conflict_stall {
                self.block(t, |e| !e.pending_write(&r))?;
            }
            let mut cur = r.start;
            while cur < r.end() {
                let end = ((cur / LINE + 1) * LINE).min(r.end());
                let piece = DevRange::new(r.device, cur, end - cur);
                let shared = self.shared(&piece);
                let ev = self.emit(
                    EventSpec::new(Actor::Cpu(t), EventKind::Read)
                        .range(piece)
                        .shared(shared)
                        .role(Role::Data),
                );
                self.touch(piece, false, ev, ev, Side::Cpu);
                cur = end;
            }
            out.extend(self.visible(&r)?);
        }
        let cost = self.cfg.cost.cpu_store_ns(len);
        self.charge(t, cost);
        Ok(out)
    }

    /// Persists the thread's dirty lines selected by `pick`, in store order.
    fn flush_where(&mut self, t: ThreadId, pick: impl Fn(&DevRange) -> bool) -> Result<()> {
        self.sync_thread(t)?;
        let stores = std::mem::take(&mut self.thread_mut(t).stores);
        let (now, keep): (Vec<Store>, Vec<Store>) = stores.into_iter().partition(|s| pick(&s.range));
        self.thread_mut(t).stores = keep;
        if now.is_empty() {
            return Ok(());
        }
        let flushed: BTreeSet<EventId> = now.iter().map(|s| s.event).collect();
        let mut bytes_total = 0u64;
        for dev in 0..self.devices.len() {
            let events = std::mem::take(&mut self.volatile_events[dev]);
            let mut idx = 0usize;
            let mut taken_ids = Vec::new();
            let taken = self.devices[dev].memory.drain_volatile(|_| {
                let (ev, _) = events[idx];
                idx += 1;
                let hit = flushed.contains(&ev);
                if hit {
                    taken_ids.push(ev);
                }
                hit
            });
            self.volatile_events[dev] = events.into_iter().filter(|(e, _)| !flushed.contains(e)).collect();
            for (rec, ev) in taken.into_iter().zip(taken_ids) {
                let store = now.iter().find(|s| s.event == ev).expect("flushed store").clone();
                bytes_total += rec.bytes.len() as u64;
                self.persist_store(t, store, rec.bytes)?;
            }
        }
        let cost = self.cfg.cost.cpu_flush_ns(bytes_total);
        self.charge(t, cost);
        Ok(())
    }

    fn persist_store(&mut self, t: ThreadId, store: Store, bytes: Vec<u8>) -> Result<()> {
        let r = store.range;
        let shared = self.shared(&r);
        let stall = !self.cfg.faults.skip_conflict_stall;
        let mut blockers: Vec<u64> = Vec::new();
        if stall {
            for p in self.active.iter().map(|id| &self.procs[id]) {
                if p.req.device == r.device
                    && p.footprint.iter().any(|(fr, _)| fr.overlaps(&r))
                {
                    blockers.push(p.req.proc);
                }
            }
        }
        let behind = stall && self.devices[r.device].host_queue.same_lines(&r).next().is_some();
        if !blockers.is_empty() || behind {
            let len = bytes.len();
            self.block(t, |e| e.devices[r.device].host_queue.fits(len))?;
        }
        let spec = EventSpec::new(Actor::Cpu(t), EventKind::Persist)
            .range(r)
            .shared(shared)
            .role(store.role)
            .tx(store.tx)
            .of(store.event);
        // recompute after a possible wait
        let blockers: Vec<u64> = blockers
            .into_iter()
            .filter(|b| self.procs[b].state != ProcState::Done)
            .collect();
        let behind = stall && self.devices[r.device].host_queue.same_lines(&r).next().is_some();
        let addr = DevAddr::new(r.device, r.start);
        if blockers.is_empty() && !behind {
            let id = self.emit_persist(spec, addr, &bytes, true);
            self.touch(r, true, id, id, Side::Cpu);
        } else {
            let id = self.emit_persist(spec, addr, &bytes, false);
            if self.cfg.record {
                self.record.buffered.insert(
                    id,
                    BufferedRecord {
                        device: r.device,
                        drain: None,
                    },
                );
            }
            self.devices[r.device].host_queue.push(HostEntry {
                persist: id,
                thread: t,
                range: r,
                bytes,
                blockers,
            })?;
        }
        Ok(())
    }

    pub fn cpu_flush(&mut self, t: ThreadId, pool: PoolId, vaddr: u64, len: u64) -> Result<()> {
        let pieces = self.cpu_pieces(t, pool, vaddr, len)?;
        self.flush_lines(t, &pieces)
    }

    fn flush_lines(&mut self, t: ThreadId, ranges: &[DevRange]) -> Result<()> {
        let lines: BTreeSet<(DeviceId, u64)> = ranges
            .iter()
            .flat_map(|r| lines_of(r).map(move |l| (r.device, l)))
            .collect();
        self.flush_where(t, |r| lines_of(r).any(|l| lines.contains(&(r.device, l))))
    }

    pub fn cpu_flush_all(&mut self, t: ThreadId) -> Result<()> {
        self.flush_where(t, |_| true)
    }

    fn drain_host_queue(&mut self, dev: DeviceId) {
        let procs = &self.procs;
        let ready = self.devices[dev]
            .host_queue
            .take_ready(|b| procs.get(&b).map_or(true, |p| p.state == ProcState::Done));
        for e in ready {
            let spec = EventSpec::new(Actor::Host(dev), EventKind::Persist)
                .range(e.range)
                .shared(self.shared(&e.range))
                .role(Role::Data)
                .of(e.persist);
            let id = self.emit_persist(spec, DevAddr::new(dev, e.range.start), &e.bytes, true);
            for b in &e.blockers {
                if let Some(last) = self.procs.get(b).and_then(|p| p.last) {
                    self.trace.edge(last, id, EdgeKind::Stall);
                }
            }
            self.touch(e.range, true, id, id, Side::Cpu);
            if let Some(rec) = self.record.buffered.get_mut(&e.persist) {
                rec.drain = Some(id);
            }
        }
    }

    // ----- transactions ------------------------------------------------

    pub fn begin_tx(&mut self, t: ThreadId, pool: PoolId) -> Result<u64> {
        self.sync_thread(t)?;
        if !self.pools.contains_key(&pool) {
            return Err(Error::UnknownPool { pool, thread: t.0 });
        }
        let th = self.thread_mut(t);
        if th.open.is_some() {
            return Err(Error::Protocol(format!("thread {} already has an open transaction", t.0)));
        }
        th.counter += 1;
        let tx = make_tx(t, th.counter);
        let start = th.clock;
        th.open = Some(OpenTx {
            tx,
            pool,
            devices: BTreeSet::new(),
            seq: 0,
            start,
            shadows: BTreeMap::new(),
        });
        Ok(tx)
    }

    fn open_tx(&self, t: ThreadId, pool: PoolId) -> Result<OpenTx<T>> {
        self.threads
            .get(&t)
            .and_then(|th| th.open.clone())
            .filter(|o| o.pool == pool)
            .ok_or_else(|| Error::Protocol(format!("no open transaction on pool {pool} for thread {}", t.0)))
    }

    fn next_seq(&mut self, t: ThreadId) -> u32 {
        let o = self.thread_mut(t).open.as_mut().expect("open transaction");
        o.seq += 1;
        o.seq
    }

    /// Takes the lowest free slot, waiting for pending invalidations of
    /// earlier transactions to return slots if the region is exhausted.
    fn alloc(&mut self, t: ThreadId, pool: PoolId, device: DeviceId, mechanism: Mechanism) -> Result<u64> {
        loop {
            let ps = self.pools.get_mut(&pool).ok_or(Error::UnknownPool { pool, thread: t.0 })?;
            let (set, region) = match mechanism {
                Mechanism::Undo => (&mut ps.undo_free[device], "undo log"),
                Mechanism::Checkpoint => (&mut ps.ckpt_free[device], "checkpoint"),
                Mechanism::Shadow => (&mut ps.shadow_free[device], "shadow pages"),
                Mechanism::Redo => (&mut ps.redo_free[device], "redo log"),
            };
            if let Some(slot) = set.pop_first() {
                return Ok(slot);
            }
            let pending = self.syncs.values().any(|s| s.pool == pool && s.participants.contains(&device));
            if !pending || !self.pop_action()? {
                return Err(Error::Overflow { region, pool, device });
            }
            let now = self.now;
            let th = self.thread_mut(t);
            th.clock = th.clock.max_of(now);
        }
    }

    pub fn alloc_redo_slot(&mut self, t: ThreadId, pool: PoolId, device: DeviceId) -> Result<u64> {
        self.sync_thread(t)?;
        let local = self.alloc(t, pool, device, Mechanism::Redo)?;
        Ok(self.pools[&pool]
            .layout
            .virt_of(DevAddr::new(device, local))
            .expect("redo slots are striped"))
    }

    fn free_slots(&mut self, pool: PoolId, mechanism: Mechanism, dev: DeviceId, frees: &[u64]) {
        if let Some(ps) = self.pools.get_mut(&pool) {
            let set = match mechanism {
                Mechanism::Undo => &mut ps.undo_free[dev],
                Mechanism::Checkpoint => &mut ps.ckpt_free[dev],
                Mechanism::Shadow => &mut ps.shadow_free[dev],
                Mechanism::Redo => &mut ps.redo_free[dev],
            };
            set.extend(frees.iter().copied());
        }
    }

    /// Creates undo log entries holding the current contents of the range.
    pub fn undolg_create(&mut self, t: ThreadId, pool: PoolId, vaddr: u64, size: u64) -> Result<()> {
        self.log_like(t, pool, vaddr, size, PrimitiveKind::UndoLogCreate)
    }

    /// Checkpoints whole pages before they are updated.
    pub fn ckpoint_create(&mut self, t: ThreadId, pool: PoolId, vaddr: u64, size: u64) -> Result<()> {
        let ps = self.layout(pool)?.page_size;
        if size == 0 || size % ps != 0 || vaddr % ps != 0 {
            return Err(Error::Protocol(format!(
                "checkpoint of {size} bytes at {vaddr:#x} is not page aligned ({ps} byte pages)"
            )));
        }
        self.log_like(t, pool, vaddr, size, PrimitiveKind::CheckpointCreate)
    }

    fn log_like(&mut self, t: ThreadId, pool: PoolId, vaddr: u64, size: u64, kind: PrimitiveKind) -> Result<()> {
        self.sync_thread(t)?;
        let open = self.open_tx(t, pool)?;
        let layout = self.layout(pool)?.clone();
        layout.check_data(vaddr, size)?;
        if size == 0 {
            return Err(Error::Protocol("log of zero bytes".into()));
        }
        let piece_max = match kind {
            PrimitiveKind::UndoLogCreate => LOG_SLOT_PAYLOAD,
            _ => layout.page_size,
        };
        let mut subs = Vec::new();
        for r in layout.split(vaddr, size) {
            let mut cur = r.start;
            while cur < r.end() {
                let len = piece_max.min(r.end() - cur);
                let mechanism = match kind {
                    PrimitiveKind::UndoLogCreate => Mechanism::Undo,
                    _ => Mechanism::Checkpoint,
                };
                let slot = self.alloc(t, pool, r.device, mechanism)?;
                let seq = self.next_seq(t);
                subs.push(SubRequest {
                    proc: 0,
                    kind,
                    pool,
                    thread: t,
                    tx: open.tx,
                    device: r.device,
                    op: SubOp::Log {
                        home: DevRange::new(r.device, cur, len),
                        slot,
                        seq,
                    },
                });
                cur += len;
            }
        }
        self.issue(t, subs)
    }

    /// Copies a page into a fresh shadow page; later CPU writes to the page
    /// go to the copy until the commit switches the page reference.
    pub fn shadowcpy(&mut self, t: ThreadId, pool: PoolId, vaddr: u64, size: u64) -> Result<()> {
        self.sync_thread(t)?;
        let open = self.open_tx(t, pool)?;
        let layout = self.layout(pool)?.clone();
        if size != layout.page_size || vaddr % layout.page_size != 0 {
            return Err(Error::Protocol(format!(
                "shadow copy must cover exactly one aligned {} byte page",
                layout.page_size
            )));
        }
        layout.check_data(vaddr, size)?;
        let home = layout.locate(vaddr);
        let page = layout.page_index(home);
        let slot = self.alloc(t, pool, home.device, Mechanism::Shadow)?;
        let src = self.pools[&pool].page_loc[home.device].get(&page).copied().unwrap_or(home.local);
        let seq = self.next_seq(t);
        let sub = SubRequest {
            proc: 0,
            kind: PrimitiveKind::ShadowCopy,
            pool,
            thread: t,
            tx: open.tx,
            device: home.device,
            op: SubOp::Shadow { page, src, slot, seq },
        };
        self.issue(t, vec![sub])?;
        let o = self.thread_mut(t).open.as_mut().expect("open transaction");
        o.shadows.insert((home.device, page), slot);
        Ok(())
    }

    /// Applies committed redo entries stored in `[redo_vaddr, +size)`.
    pub fn applylog(&mut self, t: ThreadId, pool: PoolId, redo_vaddr: u64, size: u64) -> Result<()> {
        self.sync_thread(t)?;
        let open = self.open_tx(t, pool)?;
        let layout = self.layout(pool)?.clone();
        let first = layout.base_virt + layout.data_size + REDO_COMMIT_AREA;
        layout.check_span(redo_vaddr, size)?;
        if redo_vaddr < first || (redo_vaddr - first) % REDO_SLOT != 0 || size == 0 || size % REDO_SLOT != 0 {
            return Err(Error::Protocol(format!("redo range {redo_vaddr:#x}+{size} is not slot aligned")));
        }
        let mut subs = Vec::new();
        for v in (redo_vaddr..redo_vaddr + size).step_by(REDO_SLOT as usize) {
            let at = layout.locate(v);
            subs.push(SubRequest {
                proc: 0,
                kind: PrimitiveKind::ApplyRedoLog,
                pool,
                thread: t,
                tx: open.tx,
                device: at.device,
                op: SubOp::Apply { slot: at.local },
            });
        }
        self.issue(t, subs)
    }

    fn footprint(&self, req: &SubRequest) -> Vec<(DevRange, bool)> {
        let dev = req.device;
        let layout = &self.pools[&req.pool].layout;
        match &req.op {
            SubOp::Log { home, slot, .. } => vec![
                (*home, false),
                (DevRange::new(dev, *slot, ENTRY_PREFIX + home.len), true),
            ],
            SubOp::Shadow { src, slot, .. } => vec![
                (DevRange::new(dev, *src, layout.page_size), false),
                (DevRange::new(dev, *slot, ENTRY_PREFIX + layout.page_size), true),
            ],
            SubOp::Apply { slot } => {
                let raw = self.devices[dev].memory.read_persisted(*slot, REDO_SLOT);
                let mut out = vec![(DevRange::new(dev, *slot, REDO_SLOT), false)];
                if let Some(e) = LogEntry::decode(raw) {
                    let home = layout.home_addr(dev, e.offset);
                    out.push((DevRange::at(home, e.payload.len() as u64), true));
                }
                out
            }
            SubOp::Commit { .. } => Vec::new(),
        }
    }

    /// Submits sub-requests to their devices, or runs them on the CPU in
    /// baseline mode.
    fn issue(&mut self, t: ThreadId, subs: Vec<SubRequest>) -> Result<()> {
        if !self.cfg.mode.offloads() {
            for s in subs {
                self.cpu_execute(t, &s)?;
            }
            return Ok(());
        }
        // Operands must be written back before the device reads them.
        let mut operands = Vec::new();
        for s in &subs {
            match &s.op {
                SubOp::Log { home, .. } => operands.push(*home),
                SubOp::Shadow { src, .. } => {
                    operands.push(DevRange::new(s.device, *src, self.cfg.page_size));
                }
                SubOp::Apply { slot } => operands.push(DevRange::new(s.device, *slot, REDO_SLOT)),
                SubOp::Commit { .. } => {}
            }
        }
        self.flush_lines(t, &operands)?;
        for mut s in subs {
            let dev = s.device;
            self.block(t, |e| !e.devices[dev].fifo.is_full())?;
            s.proc = self.next_proc;
            self.next_proc += 1;
            let stamp_before = self.stamps;
            let accept = self.emit_persist_meta(t, &s);
            let footprint = self.footprint(&s);
            if let Some(o) = self.thread_mut(t).open.as_mut() {
                if o.tx == s.tx {
                    o.devices.insert(dev);
                }
            }
            if self.cfg.record {
                self.record.requests.insert(
                    s.proc,
                    RequestRecord {
                        req: s.clone(),
                        accept,
                        first: None,
                        last: None,
                    },
                );
            }
            self.active.insert(s.proc);
            self.tx_procs.entry(s.tx).or_default().push(s.proc);
            self.procs.insert(
                s.proc,
                ProcInfo {
                    req: s.clone(),
                    accept,
                    accept_stamp: stamp_before,
                    first: None,
                    last: None,
                    footprint,
                    state: ProcState::Queued,
                    done_at: None,
                },
            );
            self.devices[dev].fifo.push(s)?;
            let issue = self.cfg.cost.command_issue_latency_ns;
            self.charge(t, issue);
            self.try_dispatch(dev)?;
        }
        Ok(())
    }

    fn emit_persist_meta(&mut self, t: ThreadId, s: &SubRequest) -> EventId {
        let st = self.stamp();
        self.emit(
            EventSpec::new(Actor::Cpu(t), EventKind::Persist)
                .stamp(st)
                .proc(s.proc)
                .tx(Some(s.tx))
                .role(Role::Request),
        )
    }

    fn dispatch_ready(&self, dev: DeviceId, req: &SubRequest) -> bool {
        let d = &self.devices[dev];
        // only host writes accepted before the request hold it back
        let accepted = self.procs[&req.proc].accept_stamp;
        let events = &self.trace.trace().events;
        let earlier = |e: &HostEntry| events[e.persist as usize].persist_stamp.is_some_and(|s| s < accepted);
        match &req.op {
            SubOp::Commit { .. } => {
                let busy = d.units.iter().any(|u| {
                    u.request.is_some_and(|p| {
                        let r = &self.procs[&p].req;
                        r.pool == req.pool && r.thread == req.thread
                    })
                });
                !busy && d.host_queue.iter().all(|e| e.thread != req.thread || !earlier(e))
            }
            _ => {
                let fp = &self.procs[&req.proc].footprint;
                fp.iter().all(|(r, w)| d.inflight.conflicts(r, *w).is_empty())
                    && fp.iter().all(|(r, _)| d.host_queue.overlapping(r).all(|e| !earlier(e)))
            }
        }
    }

    fn try_dispatch(&mut self, dev: DeviceId) -> Result<()> {
        loop {
            let Some(head) = self.devices[dev].fifo.head().cloned() else {
                return Ok(());
            };
            let Some(unit) = self.devices[dev].idle_unit() else {
                return Ok(());
            };
            if !self.dispatch_ready(dev, &head) {
                return Ok(());
            }
            self.devices[dev].fifo.pop();
            self.start_proc(dev, unit, head)?;
        }
    }

    fn start_proc(&mut self, dev: DeviceId, unit: usize, req: SubRequest) -> Result<()> {
        let actor = Actor::Ndp { device: dev, unit };
        let layout = self.pools[&req.pool].layout.clone();
        let footprint = self.procs[&req.proc].footprint.clone();
        let accept = self.procs[&req.proc].accept;
        let mut first = None;
        let mut last = None;
        match &req.op {
            SubOp::Commit { mechanism, participants } => {
                if !self.cfg.faults.skip_sync {
                    let id = self.emit(
                        EventSpec::new(actor, EventKind::SyncBegin)
                            .proc(req.proc)
                            .tx(Some(req.tx))
                            .role(Role::Meta),
                    );
                    first = Some(id);
                    last = Some(id);
                    // the commit waited for earlier work of the same thread
                    let prior: Vec<EventId> = self.tx_procs[&req.tx]
                        .iter()
                        .map(|id| &self.procs[id])
                        .filter(|p| {
                            p.req.device == dev
                                && p.req.pool == req.pool
                                && p.req.thread == req.thread
                                && p.req.proc < req.proc
                                && p.state == ProcState::Done
                                && p.req.tx == req.tx
                        })
                        .filter_map(|p| p.last)
                        .collect();
                    for p in prior {
                        self.trace.edge(p, id, EdgeKind::Order);
                    }
                    if let Some(s) = self.syncs.get_mut(&req.tx) {
                        s.begins.insert(dev, id);
                    }
                    let hw = self.cfg.mode != ExecMode::MultiDeviceSwSync && !self.cfg.faults.premature_reset;
                    if hw {
                        let mut read = |r: DevRange| self.devices[dev].memory.read_persisted(r.start, r.len).to_vec();
                        let items = reset_items(&layout, *mechanism, dev, req.tx, &mut read);
                        let immediate = self.devices[dev].handler.defer(req.tx, items);
                        debug_assert!(immediate.is_empty(), "sync begins at submission");
                    }
                }
                let _ = participants;
            }
            _ => {
                let mut read = |r: DevRange| self.devices[dev].memory.read_persisted(r.start, r.len).to_vec();
                let accesses = execute(&req, &layout, self.cfg.persist_chunk, &mut read)?;
                for a in accesses {
                    let spec = EventSpec::new(actor, match a.kind {
                        AccessKind::Read => EventKind::Read,
                        AccessKind::Write => EventKind::Persist,
                    })
                    .range(a.range)
                    .shared(a.shared)
                    .proc(req.proc)
                    .tx(Some(req.tx))
                    .role(a.role);
                    let id = match a.kind {
                        AccessKind::Read => self.emit(spec),
                        AccessKind::Write => {
                            self.emit_persist(spec, DevAddr::new(dev, a.range.start), &a.bytes, true)
                        }
                    };
                    first.get_or_insert(id);
                    last = Some(id);
                }
            }
        }
        if let Some(f) = first {
            self.trace.edge(accept, f, EdgeKind::Dispatch);
            let l = last.expect("last event");
            for (r, w) in &footprint {
                self.touch(*r, *w, f, l, Side::Ndp);
            }
        }
        for (r, w) in &footprint {
            self.devices[dev].inflight.claim(*r, Owner::Unit(unit), *w)?;
        }
        let cost = &self.cfg.cost;
        let setup = cost.unit_setup_ns();
        let bytes = moved_bytes(&req, &layout);
        let busy = setup + cost.pm_access_latency_ns + cost.internal_move_ns(bytes);
        let now = self.now;
        {
            let u = &mut self.devices[dev].units[unit];
            u.request = Some(req.proc);
            u.size = bytes;
            u.started = now;
            u.setup_until = now + setup;
            u.busy_until = now + busy;
            u.done = false;
        }
        let p = self.procs.get_mut(&req.proc).expect("proc");
        p.state = ProcState::Running;
        p.first = first;
        p.last = last;
        if let Some(rec) = self.record.requests.get_mut(&req.proc) {
            rec.first = first;
            rec.last = last;
        }
        self.schedule(now + busy, Action::UnitDone { dev, unit });
        Ok(())
    }

    fn fire(&mut self, action: Action) -> Result<()> {
        self.last_activity = self.last_activity.max_of(self.now);
        match action {
            Action::UnitDone { dev, unit } => self.unit_done(dev, unit),
            Action::SyncNotify { to, tx, from } => self.sync_notify(to, tx, from),
        }
    }

    fn unit_done(&mut self, dev: DeviceId, unit: usize) -> Result<()> {
        let proc = self.devices[dev].units[unit].request.take().expect("busy unit");
        self.devices[dev].units[unit].done = true;
        self.devices[dev].inflight.release(Owner::Unit(unit));
        let now = self.now;
        let req = {
            let p = self.procs.get_mut(&proc).expect("proc");
            p.state = ProcState::Done;
            p.done_at = Some(now);
            p.req.clone()
        };
        self.active.remove(&proc);
        if let SubOp::Commit { participants, .. } = &req.op {
            self.local_commit_done(dev, &req, participants.clone())?;
        }
        self.drain_host_queue(dev);
        self.try_dispatch(dev)
    }

    fn local_commit_done(&mut self, dev: DeviceId, req: &SubRequest, participants: Vec<DeviceId>) -> Result<()> {
        let faults = self.cfg.faults;
        if faults.skip_sync || faults.premature_reset {
            let mechanism = self.syncs[&req.tx].mechanism;
            let layout = self.pools[&req.pool].layout.clone();
            let mut read = |r: DevRange| self.devices[dev].memory.read_persisted(r.start, r.len).to_vec();
            let items = reset_items(&layout, mechanism, dev, req.tx, &mut read);
            self.apply_resets(dev, req.tx, req.pool, mechanism, items, None);
        }
        if faults.skip_sync {
            let s = self.syncs.get_mut(&req.tx).expect("sync");
            s.local_done.insert(dev);
            if s.local_done.len() == s.participants.len() {
                let s = self.syncs.remove(&req.tx).expect("sync");
                self.finish_region(s.thread, s.start, self.now);
                if let Some(q) = self.sync_queue.get_mut(&s.thread) {
                    q.retain(|x| *x != req.tx);
                }
            }
            return Ok(());
        }
        for p in participants {
            let lat = if p == dev {
                T::zero()
            } else {
                self.cfg.cost.inter_device_latency_ns
            };
            let at = self.now + lat;
            self.schedule(at, Action::SyncNotify { to: p, tx: req.tx, from: dev });
        }
        Ok(())
    }

    fn sync_notify(&mut self, to: DeviceId, tx: u64, from: DeviceId) -> Result<()> {
        if let Some(resets) = self.devices[to].handler.complete(tx, from)? {
            let s = self.syncs.get_mut(&tx).expect("sync");
            s.ready.insert(to, resets);
            let thread = s.thread;
            self.complete_syncs(thread);
        }
        Ok(())
    }

    /// Emits sync completions of a thread in transaction order.
    fn complete_syncs(&mut self, thread: ThreadId) {
        loop {
            let Some(&tx) = self.sync_queue.get(&thread).and_then(|q| q.front()) else {
                return;
            };
            let mut s = self.syncs.remove(&tx).expect("sync");
            let ready: Vec<DeviceId> = s
                .ready
                .keys()
                .copied()
                .filter(|d| !s.completed.contains_key(d))
                .collect();
            for dev in ready {
                let st = self.stamp();
                let id = self.emit(
                    EventSpec::new(Actor::Handler(dev), EventKind::SyncComplete)
                        .stamp(st)
                        .tx(Some(tx))
                        .role(Role::Meta),
                );
                for (&d, &b) in &s.begins {
                    let kind = if d == dev { EdgeKind::Complete } else { EdgeKind::Remote };
                    self.trace.edge(b, id, kind);
                }
                if let Some(&prev) = self.prev_complete.get(&thread) {
                    self.trace.edge(prev, id, EdgeKind::Order);
                }
                s.completed.insert(dev, id);
                let resets = s.ready.get_mut(&dev).map(std::mem::take).unwrap_or_default();
                self.apply_resets(dev, tx, s.pool, s.mechanism, resets, Some(id));
            }
            if s.completed.len() < s.participants.len() {
                self.syncs.insert(tx, s);
                return;
            }
            let first = *s.completed.values().min().expect("completion");
            self.prev_complete.insert(thread, first);
            self.sync_queue.get_mut(&thread).expect("queue").pop_front();
            if self.cfg.mode != ExecMode::MultiDeviceSwSync {
                self.finish_region(thread, s.start, self.now);
            }
            if self.cfg.mode == ExecMode::MultiDeviceSwSync {
                // the polling CPU retires it
                self.syncs.insert(tx, s);
            }
        }
    }

    fn apply_resets(
        &mut self,
        dev: DeviceId,
        tx: u64,
        pool: PoolId,
        mechanism: Mechanism,
        items: Vec<ResetItem>,
        after: Option<EventId>,
    ) {
        for mut it in items {
            let r = DevRange::at(it.addr, it.bytes.len() as u64);
            if it.replaces {
                let word = self.devices[dev].memory.read_persisted(r.start, 8);
                it.frees.extend(ResetItem::referenced_slot(word));
            }
            let spec = EventSpec::new(Actor::Handler(dev), EventKind::Persist)
                .range(r)
                .shared(self.shared(&r))
                .tx(Some(tx))
                .role(Role::Reset);
            let id = self.emit_persist(spec, it.addr, &it.bytes, true);
            if let Some(a) = after {
                self.trace.edge(a, id, EdgeKind::Drain);
            }
            self.touch(r, true, id, id, Side::Ndp);
            self.free_slots(pool, mechanism, dev, &it.frees);
        }
    }

    fn finish_region(&mut self, thread: ThreadId, start: T, end: T) {
        let th = self.thread_mut(thread);
        th.region_ns = th.region_ns + (end - start);
        th.transactions += 1;
    }

    /// Commits the thread's open transaction on `pool`.
    pub fn commit_log(&mut self, t: ThreadId, pool: PoolId) -> Result<()> {
        self.sync_thread(t)?;
        let open = self.open_tx(t, pool)?;
        let mechanism = self.pools[&pool].mechanism;
        self.cpu_flush_all(t)?;
        // shadowed pages now live in their copies
        {
            let ps = self.pools.get_mut(&pool).expect("pool");
            for (&(dev, page), &slot) in &open.shadows {
                ps.page_loc[dev].insert(page, slot + ENTRY_PREFIX);
            }
        }
        let participants: Vec<DeviceId> = open.devices.iter().copied().collect();
        if !self.cfg.mode.offloads() || participants.is_empty() {
            if !self.cfg.mode.offloads() {
                self.cpu_resets(t, pool, mechanism, open.tx, &participants_all(self.cfg.devices))?;
            }
            self.thread_mut(t).open = None;
            let clock = self.thread_clock(t);
            self.finish_region(t, open.start, clock);
            return Ok(());
        }
        let hw_sync = !self.cfg.faults.skip_sync;
        if hw_sync {
            let parts = participants.clone();
            self.block(t, |e| {
                parts
                    .iter()
                    .all(|&d| e.devices[d].handler.len() < MAX_OUTSTANDING_SYNCS)
            })?;
        }
        self.syncs.insert(
            open.tx,
            TxSync {
                thread: t,
                pool,
                mechanism,
                participants: participants.clone(),
                begins: BTreeMap::new(),
                ready: BTreeMap::new(),
                completed: BTreeMap::new(),
                local_done: BTreeSet::new(),
                start: open.start,
            },
        );
        self.sync_queue.entry(t).or_default().push_back(open.tx);
        if hw_sync {
            for &d in &participants {
                self.devices[d].handler.begin(open.tx, &participants)?;
            }
        }
        let subs = participants
            .iter()
            .map(|&d| SubRequest {
                proc: 0,
                kind: PrimitiveKind::CommitLog,
                pool,
                thread: t,
                tx: open.tx,
                device: d,
                op: SubOp::Commit {
                    mechanism,
                    participants: participants.clone(),
                },
            })
            .collect();
        self.issue(t, subs)?;
        self.thread_mut(t).open = None;
        if self.cfg.mode == ExecMode::MultiDeviceSwSync && hw_sync {
            self.software_sync(t, open.tx, pool, mechanism, open.start)?;
        }
        Ok(())
    }

    /// CPU polling until every device finished the commit, then the CPU
    /// deletes the recovery data itself.
    fn software_sync(&mut self, t: ThreadId, tx: u64, pool: PoolId, mechanism: Mechanism, start: T) -> Result<()> {
        let issued = self.thread_clock(t);
        self.block(t, |e| e.sync_done(tx))?;
        let poll = self.cfg.cost.sw_sync_poll_ns;
        let waited = self.thread_clock(t) - issued;
        let polls = (waited / poll).ceil().max_of(T::one());
        let th = self.thread_mut(t);
        th.clock = issued + polls * poll;
        let s = self.syncs.remove(&tx).expect("sync");
        let observe = self.emit(EventSpec::new(Actor::Cpu(t), EventKind::Read).tx(Some(tx)).role(Role::Meta));
        for &c in s.completed.values() {
            self.trace.edge(c, observe, EdgeKind::Order);
        }
        self.cpu_resets(t, pool, mechanism, tx, &s.participants)?;
        let clock = self.thread_clock(t);
        self.finish_region(t, start, clock);
        Ok(())
    }

    fn sync_done(&self, tx: u64) -> bool {
        match self.syncs.get(&tx) {
            Some(s) => s.completed.len() == s.participants.len(),
            None => true,
        }
    }

    fn cpu_resets(&mut self, t: ThreadId, pool: PoolId, mechanism: Mechanism, tx: u64, devices: &[DeviceId]) -> Result<()> {
        let layout = self.pools[&pool].layout.clone();
        for &dev in devices {
            let mut read = |r: DevRange| self.devices[dev].memory.read(r.start, r.len).unwrap_or_default();
            let items = reset_items(&layout, mechanism, dev, tx, &mut read);
            for mut it in items {
                let r = DevRange::at(it.addr, it.bytes.len() as u64);
                if it.replaces {
                    it.frees.extend(ResetItem::referenced_slot(&self.visible(&r)?));
                }
                self.store_pieces(t, &[r], &it.bytes, Role::Reset, Some(tx))?;
                self.free_slots(pool, mechanism, dev, &it.frees);
            }
        }
        self.cpu_flush_all(t)
    }

    /// Baseline execution of a sub-request by CPU loads and stores.
    fn cpu_execute(&mut self, t: ThreadId, s: &SubRequest) -> Result<()> {
        let layout = self.pools[&s.pool].layout.clone();
        let dev = s.device;
        let cost = self.cfg.cost;
        let mut read = |r: DevRange| self.devices[dev].memory.read(r.start, r.len).unwrap_or_default();
        let accesses = execute(s, &layout, u64::MAX, &mut read)?;
        let mut written = Vec::new();
        for a in accesses.into_iter().filter(|a| a.kind == AccessKind::Write) {
            let role = if a.role == Role::Data { Role::Data } else { Role::Log };
            self.store_pieces(t, &[a.range], &a.bytes, role, Some(s.tx))?;
            written.push(a.range);
        }
        self.charge(t, cost.cpu_copy_ns(moved_bytes(s, &layout)));
        self.flush_lines(t, &written)?;
        if let Some(o) = self.thread_mut(t).open.as_mut() {
            o.devices.insert(dev);
        }
        Ok(())
    }

    // ----- completion and crash ----------------------------------------

    /// Writes back every thread's dirty data and runs all device activity
    /// to completion.
    pub fn drain(&mut self) -> Result<()> {
        let threads: Vec<ThreadId> = self.threads.keys().copied().collect();
        for t in &threads {
            if self.threads[t].open.is_some() {
                return Err(Error::Protocol(format!("thread {} ends with an open transaction", t.0)));
            }
            self.cpu_flush_all(*t)?;
        }
        while self.pop_action()? {}
        for d in 0..self.devices.len() {
            if !self.devices[d].is_quiescent() || !self.devices[d].handler.is_empty() {
                return Err(Error::Protocol(format!("device {d} did not quiesce")));
            }
        }
        Ok(())
    }

    /// Power failure: cached stores are lost and the persistence domain is
    /// saved. The engine must not be used afterwards.
    pub fn crash(&mut self) -> Result<CrashState> {
        let mut snapshot = PersistenceDomainSnapshot::default();
        for d in 0..self.devices.len() {
            let dev = &self.devices[d];
            let snap_req = |p: u64| SnapRequest {
                order: self.procs[&p].accept_stamp,
                req: self.procs[&p].req.clone(),
            };
            let fifo = dev.fifo.iter().map(|r| snap_req(r.proc)).collect();
            let inflight = dev.units.iter().filter_map(|u| u.request).map(snap_req).collect();
            let host_queue = dev
                .host_queue
                .iter()
                .map(|e| SnapHostEntry {
                    order: self.trace.trace().events[e.persist as usize].persist_stamp.expect("durable"),
                    thread: e.thread,
                    range: e.range,
                    bytes: e.bytes.clone(),
                })
                .collect();
            let syncs = dev
                .handler
                .outstanding()
                .map(|(tx, st)| {
                    let track = &self.syncs[&tx];
                    SnapSync {
                        tx,
                        pool: track.pool,
                        mechanism: track.mechanism,
                        participants: st.participants().iter().copied().collect(),
                        received: st
                            .participants()
                            .iter()
                            .copied()
                            .filter(|p| st.bit(*p) == Some(true))
                            .collect(),
                        completed: false,
                    }
                })
                .chain(
                    // software-synchronised transactions awaiting CPU invalidation
                    self.syncs
                        .iter()
                        .filter(|(_, s)| s.participants.contains(&d) && s.completed.len() == s.participants.len())
                        .map(|(&tx, s)| SnapSync {
                            tx,
                            pool: s.pool,
                            mechanism: s.mechanism,
                            participants: s.participants.iter().copied().collect(),
                            received: s.participants.iter().copied().collect(),
                            completed: true,
                        }),
                )
                .collect();
            snapshot.devices.push(DeviceSnapshot {
                device: d,
                fifo,
                inflight,
                host_queue,
                mapping: dev.mapping.encode(),
                syncs,
            });
        }
        let images = self.devices.iter_mut().map(|d| d.memory.crash()).collect();
        for v in &mut self.volatile_events {
            v.clear();
        }
        for th in self.threads.values_mut() {
            th.stores.clear();
        }
        self.emit(EventSpec::new(Actor::Cpu(ThreadId(0)), EventKind::Crash));
        Ok(CrashState { images, snapshot })
    }

    pub fn stats(&self) -> RunStats<T> {
        let mut region = T::zero();
        let mut total = self.last_activity;
        let mut txs = 0;
        for th in self.threads.values() {
            region = region + th.region_ns;
            total = total.max_of(th.clock);
            txs += th.transactions;
        }
        RunStats {
            region_ns: region,
            total_ns: total,
            transactions: txs,
            procs: self.procs.len() as u64,
            events: self.trace.trace().events.len() as u64,
        }
    }

    pub fn thread_stats(&self) -> BTreeMap<ThreadId, ThreadStats<T>> {
        self.threads
            .iter()
            .map(|(t, th)| {
                (
                    *t,
                    ThreadStats {
                        clock: th.clock,
                        region_ns: th.region_ns,
                        transactions: th.transactions,
                    },
                )
            })
            .collect()
    }

    /// Logical data area of a pool as persisted, resolving page references.
    pub fn logical_image(&self, pool: PoolId) -> Result<Vec<u8>> {
        let layout = self.layout(pool)?;
        Ok(layout.logical_data(|r| self.devices[r.device].memory.read_persisted(r.start, r.len).to_vec()))
    }

    /// Logical data of a pool as CPU loads currently observe it, before any
    /// pending device work completes.
    pub fn current_image(&self, pool: PoolId) -> Result<Vec<u8>> {
        let ps = self.pools.get(&pool).ok_or(Error::UnknownPool { pool, thread: 0 })?;
        let layout = &ps.layout;
        let mut out = vec![0u8; layout.data_size as usize];
        for dev in 0..layout.devices() {
            for page in 0..layout.pages_per_device() {
                let home = layout.local_base() + page * layout.page_size;
                let at = ps.page_loc[dev].get(&page).copied().unwrap_or(home);
                let bytes = self.visible(&DevRange::new(dev, at, layout.page_size))?;
                let v = layout.virt_of(DevAddr::new(dev, home)).expect("data page in striped space") - layout.base_virt;
                out[v as usize..(v + layout.page_size) as usize].copy_from_slice(&bytes);
            }
        }
        Ok(out)
    }

    pub fn device_images(&self) -> Vec<PersistedImage> {
        self.devices.iter().map(|d| d.memory.image()).collect()
    }

    pub fn into_parts(self) -> (Trace, ExecutionRecord) {
        (self.trace.into_trace(), self.record)
    }

    /// Number of persist stamps issued so far.
    pub fn stamps_issued(&self) -> u64 {
        self.stamps
    }

    /// Rough check that no two owners hold conflicting claims.
    pub fn claims_exclusive(&self) -> bool {
        self.devices.iter().all(|d| d.inflight.is_exclusive())
    }

    /// Status of the redo commit word of a thread.
    pub fn redo_commit_word(&self, pool: PoolId, t: ThreadId) -> Result<u64> {
        let layout = self.layout(pool)?;
        let at = layout.locate(layout.redo_commit_word(t));
        let raw = self.devices[at.device].memory.read(at.local, 8)?;
        Ok(u64::from_le_bytes(raw[..8].try_into().unwrap()))
    }

    pub fn status_of(&self, dev: DeviceId, slot: u64) -> CommitStatus {
        CommitStatus::from_byte(self.devices[dev].memory.read_persisted(slot + 8, 1)[0])
    }

    pub fn pool_mechanism(&self, pool: PoolId) -> Result<Mechanism> {
        self.pools
            .get(&pool)
            .map(|p| p.mechanism)
            .ok_or(Error::UnknownPool { pool, thread: 0 })
    }

    pub fn write_entry(&mut self, t: ThreadId, pool: PoolId, vaddr: u64, entry: &LogEntry) -> Result<()> {
        // stores land in program order, status byte last
        let at = self.layout(pool)?.locate(vaddr);
        let writes = entry_writes(at, entry, u64::MAX, Role::Data, true);
        for w in writes {
            let v = vaddr + (w.range.start - at.local);
            self.cpu_write(t, pool, v, &w.bytes)?;
        }
        Ok(())
    }
}

fn participants_all(n: usize) -> Vec<DeviceId> {
    (0..n).collect()
}

/// Device images and persistence domain contents at a crash.
#[derive(Debug, Clone)]
pub struct CrashState {
    pub images: Vec<PersistedImage>,
    pub snapshot: PersistenceDomainSnapshot,
}

/// Convenience alias for the default double-precision engine.
pub type Simulator = Engine<f64>;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checker::check_trace;

    fn small(mode: ExecMode, devices: usize) -> Engine<f64> {
        Engine::new(EngineConfig {
            devices,
            granularity: 256,
            capacity_per_device: 64 << 10,
            striped_per_device: 16 << 10,
            page_size: 256,
            mode,
            record: true,
            ..EngineConfig::default()
        })
        .unwrap()
    }

    const T0: ThreadId = ThreadId(0);
    const P: PoolId = PoolId(1);

    #[test]
    fn init_device_reports_group_and_rejects_bad_path() {
        let e = small(ExecMode::MultiDevice, 2);
        assert_eq!(e.init_device(DEFAULT_DEVICE_PATH).unwrap().device_count, 2);
        assert_eq!(e.init_device(DEFAULT_DEVICE_PATH).unwrap(), e.init_device(DEFAULT_DEVICE_PATH).unwrap());
        assert!(matches!(e.init_device("/dev/nope"), Err(Error::Init(_))));
    }

    #[test]
    fn undo_transaction_persists_and_checks() {
        let mut e = small(ExecMode::MultiDevice, 2);
        e.create_pool(P, None, 0x10000, 1024, Mechanism::Undo).unwrap();
        e.preload(P, 0x10000, &[1; 8]).unwrap();
        e.begin_tx(T0, P).unwrap();
        e.undolg_create(T0, P, 0x10000, 8).unwrap();
        e.cpu_write(T0, P, 0x10000, &[2; 8]).unwrap();
        e.undolg_create(T0, P, 0x10100, 8).unwrap();
        e.cpu_write(T0, P, 0x10100, &[3; 8]).unwrap();
        e.commit_log(T0, P).unwrap();
        e.drain().unwrap();
        let img = e.logical_image(P).unwrap();
        assert_eq!(&img[0..8], &[2; 8]);
        assert_eq!(&img[0x100..0x108], &[3; 8]);
        let report = check_trace(e.trace()).unwrap();
        assert!(report.passed(), "{report}");
        assert_eq!(e.stats().transactions, 1);
    }

    #[test]
    fn unit_copying_four_kib_takes_move_time() {
        let m = CostModel::<f64>::default();
        let mut e = Engine::<f64>::new(EngineConfig {
            devices: 1,
            mode: ExecMode::SingleDevice,
            ..EngineConfig::default()
        })
        .unwrap();
        e.create_pool(P, None, 0, 64 << 10, Mechanism::Checkpoint).unwrap();
        e.begin_tx(T0, P).unwrap();
        e.ckpoint_create(T0, P, 0, 4096).unwrap();
        let u = &e.device(0).units[0];
        let dur = u.busy_until - u.setup_until;
        let expect = m.pm_access_latency_ns + m.internal_move_ns(4096 + ENTRY_PREFIX);
        assert!(f64::abs(dur - expect) < 1e-9);
        assert!((m.internal_move_ns(4096) - 1024.0).abs() < 1e-9);
    }

    #[test]
    fn idle_step_advances_time_without_events() {
        let mut e = small(ExecMode::MultiDevice, 2);
        let ev = e.step(1000.0).unwrap();
        assert!(ev.is_empty());
        assert_eq!(e.now(), 1000.0);
    }

    #[test]
    fn conflicting_cpu_write_is_buffered_until_log_completes() {
        let mut e = small(ExecMode::SingleDevice, 1);
        e.create_pool(P, None, 0, 1024, Mechanism::Undo).unwrap();
        e.begin_tx(T0, P).unwrap();
        e.undolg_create(T0, P, 0, 8).unwrap();
        e.cpu_write(T0, P, 0, &[9; 8]).unwrap();
        e.cpu_flush(T0, P, 0, 8).unwrap();
        assert_eq!(e.device(0).host_queue.len(), 1);
        e.commit_log(T0, P).unwrap();
        e.drain().unwrap();
        assert!(e.device(0).host_queue.is_empty());
        let t = e.trace();
        let drain = t.events.iter().find(|x| x.actor == Actor::Host(0)).unwrap();
        assert!(t.edges.iter().any(|ed| ed.to == drain.id && ed.kind == EdgeKind::Stall));
        assert!(check_trace(t).unwrap().passed());
    }

    #[test]
    fn disjoint_requests_run_in_parallel() {
        let mut e = small(ExecMode::SingleDevice, 1);
        e.create_pool(P, None, 0, 1024, Mechanism::Undo).unwrap();
        e.begin_tx(T0, P).unwrap();
        e.undolg_create(T0, P, 0, 8).unwrap();
        e.undolg_create(T0, P, 0x80, 8).unwrap();
        let busy = e.device(0).units.iter().filter(|u| u.request.is_some()).count();
        assert_eq!(busy, 2);
    }

    /// A committed redo entry targeting the first eight bytes of the pool.
    fn redo_entry(e: &mut Engine<f64>) -> u64 {
        e.create_pool(P, None, 0, 1024, Mechanism::Redo).unwrap();
        let tx = e.begin_tx(T0, P).unwrap();
        let slot = e.alloc_redo_slot(T0, P, 0).unwrap();
        let entry = LogEntry {
            object_id: tx,
            commit_status: CommitStatus::Committed,
            seq: 1,
            offset: 0,
            payload: vec![7; 8],
        };
        e.write_entry(T0, P, slot, &entry).unwrap();
        slot
    }

    #[test]
    fn overlapping_request_stalls_behind_first() {
        let mut e = small(ExecMode::SingleDevice, 1);
        let slot = redo_entry(&mut e);
        e.applylog(T0, P, slot, REDO_SLOT).unwrap();
        e.applylog(T0, P, slot, REDO_SLOT).unwrap();
        assert_eq!(e.device(0).fifo.len(), 1);
        let first_done = e.device(0).units[0].busy_until;
        e.advance_to(first_done).unwrap();
        assert!(e.device(0).fifo.is_empty());
    }

    #[test]
    fn request_to_unregistered_pool_faults() {
        let mut e = small(ExecMode::SingleDevice, 1);
        assert!(matches!(e.begin_tx(T0, PoolId(9)), Err(Error::UnknownPool { .. })));
    }

    #[test]
    fn commit_without_transaction_faults() {
        let mut e = small(ExecMode::SingleDevice, 1);
        e.create_pool(P, None, 0, 1024, Mechanism::Undo).unwrap();
        assert!(matches!(e.commit_log(T0, P), Err(Error::Protocol(_))));
    }

    #[test]
    fn fifo_backpressure_blocks_when_full() {
        let mut e = small(ExecMode::SingleDevice, 1);
        let slot = redo_entry(&mut e);
        // every apply writes the same home range, so only one runs at a time
        let mut n = 0;
        while !e.device(0).fifo.is_full() {
            e.applylog(T0, P, slot, REDO_SLOT).unwrap();
            n += 1;
            assert!(n < 100);
        }
        let running_until = e.device(0).units.iter().map(|u| u.busy_until).fold(0.0, f64::max);
        assert!(e.thread_clock(T0) < running_until);
        e.applylog(T0, P, slot, REDO_SLOT).unwrap();
        assert!(e.thread_clock(T0) >= running_until, "submission waited for a slot");
    }

    #[test]
    fn shadow_redirects_and_switches() {
        let mut e = small(ExecMode::MultiDevice, 2);
        e.create_pool(P, None, 0, 1024, Mechanism::Shadow).unwrap();
        e.preload(P, 0, &[1; 256]).unwrap();
        e.begin_tx(T0, P).unwrap();
        e.shadowcpy(T0, P, 0, 256).unwrap();
        e.cpu_write(T0, P, 8, &[5; 8]).unwrap();
        assert_eq!(e.cpu_read(T0, P, 0, 16).unwrap(), [[1u8; 8], [5; 8]].concat());
        e.commit_log(T0, P).unwrap();
        e.drain().unwrap();
        let img = e.logical_image(P).unwrap();
        assert_eq!(&img[0..16], [[1u8; 8], [5; 8]].concat().as_slice());
        assert!(check_trace(e.trace()).unwrap().passed());
    }

    #[test]
    fn page_size_must_divide_granularity() {
        let r = Engine::<f64>::new(EngineConfig {
            granularity: 256,
            page_size: 4096,
            ..EngineConfig::default()
        });
        assert!(matches!(r, Err(Error::Config { .. })));
    }
}
