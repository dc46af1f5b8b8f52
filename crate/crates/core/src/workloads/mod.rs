//! Desk-scale persistent-memory workloads.
//!
//! Key-value structures (B-tree, red-black tree, skip list, hash map and
//! three server stand-ins built on them) and two row-update transaction
//! kernels. Every operation is one failure-atomic transaction. The same
//! structure code runs against the simulator and against recovered images,
//! so [`verify`] can walk a final image and compare it with a reference
//! rebuilt from the seed.

pub mod btree;
pub mod hashmap;
pub mod mem;
pub mod rbtree;
pub mod skiplist;
pub mod txn;

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::CostModel;
use crate::engine::{Engine, EngineConfig, ExecMode, RunStats};
use crate::error::{Error, Result};
use crate::primitives::Mechanism;
use crate::scalar::Scalar;
use crate::trace::Trace;
use crate::translate::{PoolId, ThreadId};
use crate::txlib::Transaction;

use mem::{Image, Mem, TxMem, COUNT, HEAP_START};
use txn::{ModelRows, PoolRows, TatpTx, TpccTx};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkloadKind {
    Tpcc,
    Tatp,
    Btree,
    Rbtree,
    Skiplist,
    Hashmap,
    Memcached,
    Redis,
    Pmemkv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KvKind {
    Btree,
    Rbtree,
    Skiplist,
    Hashmap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Kv(KvKind),
    Tpcc,
    Tatp,
}

impl WorkloadKind {
    pub const ALL: [WorkloadKind; 9] = [
        WorkloadKind::Tpcc,
        WorkloadKind::Tatp,
        WorkloadKind::Btree,
        WorkloadKind::Rbtree,
        WorkloadKind::Skiplist,
        WorkloadKind::Hashmap,
        WorkloadKind::Memcached,
        WorkloadKind::Redis,
        WorkloadKind::Pmemkv,
    ];

    pub fn label(self) -> &'static str {
        match self {
            WorkloadKind::Tpcc => "tpcc",
            WorkloadKind::Tatp => "tatp",
            WorkloadKind::Btree => "btree",
            WorkloadKind::Rbtree => "rbtree",
            WorkloadKind::Skiplist => "skiplist",
            WorkloadKind::Hashmap => "hashmap",
            WorkloadKind::Memcached => "memcached",
            WorkloadKind::Redis => "redis",
            WorkloadKind::Pmemkv => "pmemkv",
        }
    }

    pub fn is_transactional(self) -> bool {
        matches!(self, WorkloadKind::Tpcc | WorkloadKind::Tatp)
    }

    fn shape(self) -> Shape {
        match self {
            WorkloadKind::Tpcc => Shape::Tpcc,
            WorkloadKind::Tatp => Shape::Tatp,
            WorkloadKind::Btree | WorkloadKind::Pmemkv => Shape::Kv(KvKind::Btree),
            WorkloadKind::Rbtree => Shape::Kv(KvKind::Rbtree),
            WorkloadKind::Skiplist => Shape::Kv(KvKind::Skiplist),
            WorkloadKind::Hashmap | WorkloadKind::Memcached | WorkloadKind::Redis => Shape::Kv(KvKind::Hashmap),
        }
    }

    pub fn default_threads(self) -> usize {
        match self {
            WorkloadKind::Memcached | WorkloadKind::Redis => 2,
            _ => 1,
        }
    }

    /// Memcached gives each thread its own pool; everything else shares one.
    pub fn per_thread_pools(self) -> bool {
        self == WorkloadKind::Memcached
    }

    pub fn default_distribution(self) -> KeyDistribution {
        match self {
            WorkloadKind::Memcached | WorkloadKind::Redis => KeyDistribution::YcsbWrite,
            _ => KeyDistribution::Uniform,
        }
    }

    /// CPU work per operation outside persistent-memory accesses.
    pub fn op_compute_ns(self) -> f64 {
        match self {
            WorkloadKind::Tpcc => 2000.0,
            WorkloadKind::Tatp => 500.0,
            WorkloadKind::Btree | WorkloadKind::Rbtree | WorkloadKind::Skiplist | WorkloadKind::Pmemkv => 300.0,
            WorkloadKind::Hashmap => 150.0,
            WorkloadKind::Memcached | WorkloadKind::Redis => 400.0,
        }
    }
}

impl fmt::Display for WorkloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadMechanism {
    Logging,
    Checkpointing,
    ShadowPaging,
}

impl WorkloadMechanism {
    pub const ALL: [WorkloadMechanism; 3] = [
        WorkloadMechanism::Logging,
        WorkloadMechanism::Checkpointing,
        WorkloadMechanism::ShadowPaging,
    ];

    pub fn mechanism(self) -> Mechanism {
        match self {
            WorkloadMechanism::Logging => Mechanism::Undo,
            WorkloadMechanism::Checkpointing => Mechanism::Checkpoint,
            WorkloadMechanism::ShadowPaging => Mechanism::Shadow,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            WorkloadMechanism::Logging => "logging",
            WorkloadMechanism::Checkpointing => "checkpointing",
            WorkloadMechanism::ShadowPaging => "shadow_paging",
        }
    }
}

impl fmt::Display for WorkloadMechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyDistribution {
    /// Inserts of uniformly random keys.
    Uniform,
    /// Writes only, over a key space a quarter of the operation count, so
    /// most operations overwrite an existing value.
    YcsbWrite,
}

fn default_value_size() -> u64 {
    64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub name: WorkloadKind,
    pub mechanism: WorkloadMechanism,
    pub op_count: usize,
    #[serde(default = "default_value_size")]
    pub value_size: u64,
    #[serde(default)]
    pub distribution: Option<KeyDistribution>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WorkOp {
    Put { key: u64, value: Vec<u8> },
    Tpcc(TpccTx),
    Tatp(TatpTx),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduledOp {
    pub thread: ThreadId,
    pub pool: PoolId,
    pub op: WorkOp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KvParams {
    pub value_size: u64,
    /// Heap end; allocations beyond it fail.
    pub limit: u64,
    pub buckets: u64,
}

/// Smallest pool created for a workload, so every mechanism has a few
/// page-sized slots per device.
pub const MIN_POOL_BYTES: u64 = 512 << 10;
const POOL_STRIDE: u64 = 1 << 32;
/// Device writes of workload runs persist one cache line at a time.
pub const PERSIST_CHUNK: u64 = 64;
const MAX_NODE: u64 = 192;

impl WorkloadSpec {
    pub fn new(name: WorkloadKind, mechanism: WorkloadMechanism, op_count: usize, seed: u64) -> Self {
        Self {
            name,
            mechanism,
            op_count,
            value_size: default_value_size(),
            distribution: None,
            seed,
            threads: None,
        }
    }

    pub fn threads(&self) -> usize {
        self.threads.unwrap_or(self.name.default_threads()).max(1)
    }

    pub fn distribution(&self) -> KeyDistribution {
        self.distribution.unwrap_or(self.name.default_distribution())
    }

    pub fn pools(&self) -> Vec<PoolId> {
        let n = if self.name.per_thread_pools() { self.threads() } else { 1 };
        (1..=n as u16).map(PoolId).collect()
    }

    fn ops_per_pool(&self) -> u64 {
        (self.op_count as u64).div_ceil(self.pools().len() as u64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.value_size == 0 || self.value_size > 4096 {
            return Err(Error::Config {
                path: "value_size".into(),
                msg: "must be between 1 and 4096".into(),
            });
        }
        if self.name.is_transactional() && self.value_size != txn::ROW {
            return Err(Error::Config {
                path: "value_size".into(),
                msg: format!("{} rows are {} bytes", self.name, txn::ROW),
            });
        }
        Ok(())
    }

    /// Logical bytes each pool needs before rounding.
    pub fn pool_bytes(&self) -> u64 {
        let ops = self.ops_per_pool();
        let need = match self.name.shape() {
            Shape::Kv(_) => HEAP_START + 8 * self.kv_buckets() + ops * (self.value_size + 2 * MAX_NODE) + 2 * MAX_NODE,
            Shape::Tpcc => HEAP_START + txn::tpcc_rows(ops) * txn::ROW,
            Shape::Tatp => HEAP_START + txn::SUBSCRIBERS * txn::ROW,
        };
        need.max(MIN_POOL_BYTES)
    }

    fn kv_buckets(&self) -> u64 {
        (self.ops_per_pool() / 2).next_power_of_two().max(16)
    }

    pub fn kv_params(&self, limit: u64) -> KvParams {
        KvParams {
            value_size: self.value_size,
            limit,
            buckets: self.kv_buckets(),
        }
    }

    /// The operation stream, regenerated identically from the seed.
    /// Operations go to threads round-robin.
    pub fn schedule(&self) -> Vec<ScheduledOp> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let threads = self.threads();
        let per_thread_pools = self.name.per_thread_pools();
        let space = (self.op_count as u64 / 4).max(1);
        (0..self.op_count)
            .map(|i| {
                let t = (i % threads) as u16;
                let op = match self.name.shape() {
                    Shape::Kv(_) => {
                        let key = match self.distribution() {
                            KeyDistribution::Uniform => rng.gen_range(1..=u32::MAX as u64),
                            KeyDistribution::YcsbWrite => rng.gen_range(1..=space),
                        };
                        let value = (0..self.value_size).map(|_| rng.gen()).collect();
                        WorkOp::Put { key, value }
                    }
                    Shape::Tpcc => WorkOp::Tpcc(txn::tpcc_generate(&mut rng)),
                    Shape::Tatp => WorkOp::Tatp(txn::tatp_generate(&mut rng)),
                };
                ScheduledOp {
                    thread: ThreadId(t),
                    pool: if per_thread_pools { PoolId(1 + t) } else { PoolId(1) },
                    op,
                }
            })
            .collect()
    }

    /// Pool contents before the first operation.
    pub fn initial_image(&self, size: u64) -> Result<Vec<u8>> {
        let mut img = vec![0u8; size as usize];
        let mut m = Image(&mut img);
        let p = self.kv_params(size);
        match self.name.shape() {
            Shape::Kv(KvKind::Btree) => btree::init(&mut m, &p)?,
            Shape::Kv(KvKind::Rbtree) => rbtree::init(&mut m, &p)?,
            Shape::Kv(KvKind::Skiplist) => skiplist::init(&mut m, &p)?,
            Shape::Kv(KvKind::Hashmap) => hashmap::init(&mut m, &p)?,
            Shape::Tpcc => txn::tpcc_populate(&mut self.pool_rows(&mut m))?,
            Shape::Tatp => txn::tatp_populate(&mut self.pool_rows(&mut m))?,
        }
        Ok(img)
    }

    fn pool_rows<'m, M: Mem>(&self, m: &'m mut M) -> PoolRows<'m, M> {
        let (fixed, capacity) = match self.name.shape() {
            Shape::Tpcc => (txn::TPCC_FIXED_ROWS, txn::tpcc_rows(self.ops_per_pool())),
            _ => (txn::SUBSCRIBERS, txn::SUBSCRIBERS),
        };
        PoolRows { mem: m, fixed, capacity }
    }

    /// Applies one operation through any memory.
    pub fn apply<M: Mem>(&self, m: &mut M, limit: u64, op: &WorkOp) -> Result<()> {
        let p = self.kv_params(limit);
        match (self.name.shape(), op) {
            (Shape::Kv(k), WorkOp::Put { key, value }) => match k {
                KvKind::Btree => btree::put(m, &p, *key, value),
                KvKind::Rbtree => rbtree::put(m, &p, *key, value),
                KvKind::Skiplist => skiplist::put(m, &p, *key, value),
                KvKind::Hashmap => hashmap::put(m, &p, *key, value),
            },
            (Shape::Tpcc, WorkOp::Tpcc(tx)) => txn::tpcc_apply(&mut self.pool_rows(m), tx),
            (Shape::Tatp, WorkOp::Tatp(tx)) => txn::tatp_apply(&mut self.pool_rows(m), tx),
            _ => Err(Error::Workload(format!("operation does not fit workload {}", self.name))),
        }
    }
}

/// Hash used for bucket selection and tower heights.
pub fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn check_count<M: Mem>(m: &mut M, found: usize) -> Result<()> {
    let recorded = m.u64(COUNT)?;
    if recorded != found as u64 {
        return Err(Error::Workload(format!("header counts {recorded} elements, structure holds {found}")));
    }
    Ok(())
}

/// Simulated system a workload runs on.
#[derive(Debug, Clone)]
pub struct SystemConfig<T: Scalar> {
    pub mode: ExecMode,
    /// Defaults to one device for Baseline and SD and two otherwise.
    pub devices: Option<usize>,
    pub granularity: u64,
    pub cost: CostModel<T>,
    pub record: bool,
    /// PM bytes per device; sized from the workload when absent.
    pub capacity_per_device: Option<u64>,
}

impl<T: Scalar> SystemConfig<T> {
    pub fn new(mode: ExecMode) -> Self {
        Self {
            mode,
            devices: None,
            granularity: 4096,
            cost: CostModel::default(),
            record: false,
            capacity_per_device: None,
        }
    }

    pub fn devices(&self) -> usize {
        self.devices.unwrap_or(self.mode.default_devices())
    }
}

pub struct WorkloadRun<T: Scalar> {
    /// Logical data area of each pool.
    pub images: BTreeMap<PoolId, Vec<u8>>,
    pub stats: RunStats<T>,
    pub trace: Trace,
    pub committed: usize,
}

/// A workload loaded into a simulator, ready to execute operations.
pub struct Loaded<T: Scalar> {
    pub engine: Engine<T>,
    pub ops: Vec<ScheduledOp>,
    spec: WorkloadSpec,
    txs: BTreeMap<(ThreadId, PoolId), Transaction>,
    limits: BTreeMap<PoolId, u64>,
    compute: T,
    pub committed: usize,
}

fn pool_size(spec: &WorkloadSpec, devices: usize, granularity: u64) -> u64 {
    let span = granularity * devices as u64;
    spec.pool_bytes().div_ceil(span) * span
}

/// PM bytes each device needs to host the workload's pools with their
/// recovery regions.
pub fn required_capacity(spec: &WorkloadSpec, devices: usize, granularity: u64) -> u64 {
    let per_device = spec.pools().len() as u64 * pool_size(spec, devices, granularity) / devices as u64;
    // data and redo area, then undo, checkpoint, shadow and page-reference regions
    (4 * per_device + (1 << 20)).max(8 << 20)
}

pub fn load<T: Scalar>(spec: &WorkloadSpec, sys: &SystemConfig<T>) -> Result<Loaded<T>> {
    spec.validate()?;
    let devices = sys.devices();
    let pools = spec.pools();
    let size = pool_size(spec, devices, sys.granularity);
    let per_device = pools.len() as u64 * size / devices as u64;
    let needed = required_capacity(spec, devices, sys.granularity);
    let capacity = match sys.capacity_per_device {
        Some(c) if c < needed => {
            return Err(Error::Config {
                path: "devices.capacity_bytes".into(),
                msg: format!("{} needs {needed} bytes per device, {c} configured", spec.name),
            })
        }
        Some(c) => c,
        None => needed,
    };
    let mut engine = Engine::new(EngineConfig {
        devices,
        granularity: sys.granularity,
        capacity_per_device: capacity,
        striped_per_device: (2 * per_device + (256 << 10)).max(4 << 20),
        page_size: 4096,
        cost: sys.cost,
        mode: sys.mode,
        record: sys.record,
        persist_chunk: PERSIST_CHUNK,
        ..EngineConfig::default()
    })?;
    let image = spec.initial_image(size)?;
    let mut limits = BTreeMap::new();
    for (i, &pool) in pools.iter().enumerate() {
        let owner = spec.name.per_thread_pools().then_some(ThreadId(i as u16));
        engine.create_pool(pool, owner, i as u64 * POOL_STRIDE, size, spec.mechanism.mechanism())?;
        engine.preload(pool, i as u64 * POOL_STRIDE, &image)?;
        limits.insert(pool, size);
    }
    Ok(Loaded {
        engine,
        ops: spec.schedule(),
        spec: spec.clone(),
        txs: BTreeMap::new(),
        limits,
        compute: T::lit(spec.name.op_compute_ns()),
        committed: 0,
    })
}

impl<T: Scalar> Loaded<T> {
    /// Executes the next `n` operations, each as one transaction.
    pub fn step(&mut self, n: usize) -> Result<()> {
        let end = (self.committed + n).min(self.ops.len());
        for i in self.committed..end {
            let ScheduledOp { thread, pool, op } = &self.ops[i];
            let key = (*thread, *pool);
            if !self.txs.contains_key(&key) {
                self.txs.insert(key, Transaction::new(&self.engine, *pool, *thread)?);
            }
            let tx = self.txs.get_mut(&key).expect("transaction");
            let base = self.engine.layout(*pool)?.base_virt;
            self.engine.cpu_compute(*thread, self.compute);
            tx.begin(&mut self.engine)?;
            let mut m = TxMem {
                engine: &mut self.engine,
                tx,
                base,
            };
            self.spec.apply(&mut m, self.limits[pool], op)?;
            tx.commit(&mut self.engine)?;
            self.committed = i + 1;
        }
        Ok(())
    }

    pub fn images(&self) -> Result<BTreeMap<PoolId, Vec<u8>>> {
        self.limits.keys().map(|&p| Ok((p, self.engine.logical_image(p)?))).collect()
    }
}

/// Runs every operation of the workload and drains the devices.
pub fn run<T: Scalar>(spec: &WorkloadSpec, sys: &SystemConfig<T>) -> Result<WorkloadRun<T>> {
    let mut l = load(spec, sys)?;
    l.step(usize::MAX)?;
    l.engine.drain()?;
    let images = l.images()?;
    let stats = l.engine.stats();
    let committed = l.committed;
    let (trace, _) = l.engine.into_parts();
    Ok(WorkloadRun {
        images,
        stats,
        trace,
        committed,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub failures: Vec<String>,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed() {
            write!(f, "pass")
        } else {
            write!(f, "fail: {}", self.failures.join("; "))
        }
    }
}

/// Checks final images against the full operation stream.
pub fn verify(images: &BTreeMap<PoolId, Vec<u8>>, spec: &WorkloadSpec) -> Verdict {
    verify_prefix(images, spec, spec.op_count)
}

/// Checks images against the first `committed` operations of the stream.
pub fn verify_prefix(images: &BTreeMap<PoolId, Vec<u8>>, spec: &WorkloadSpec, committed: usize) -> Verdict {
    let mut failures = Vec::new();
    let ops = spec.schedule();
    for pool in spec.pools() {
        let Some(img) = images.get(&pool) else {
            failures.push(format!("pool {pool} missing"));
            continue;
        };
        let mine: Vec<&WorkOp> = ops[..committed.min(ops.len())]
            .iter()
            .filter(|o| o.pool == pool)
            .map(|o| &o.op)
            .collect();
        if let Err(e) = verify_pool(img, spec, &mine) {
            failures.push(format!("pool {pool}: {e}"));
        }
    }
    Verdict { failures }
}

fn verify_pool(img: &[u8], spec: &WorkloadSpec, ops: &[&WorkOp]) -> Result<()> {
    let mut copy = img.to_vec();
    let limit = copy.len() as u64;
    let mut m = Image(&mut copy);
    let p = spec.kv_params(limit);
    match spec.name.shape() {
        Shape::Kv(k) => {
            let found = match k {
                KvKind::Btree => btree::contents(&mut m, &p)?,
                KvKind::Rbtree => rbtree::contents(&mut m, &p)?,
                KvKind::Skiplist => skiplist::contents(&mut m, &p)?,
                KvKind::Hashmap => hashmap::contents(&mut m, &p)?,
            };
            let mut want = BTreeMap::new();
            for op in ops {
                if let WorkOp::Put { key, value } = op {
                    want.insert(*key, value.clone());
                }
            }
            for (k, v) in &want {
                match found.get(k) {
                    None => return Err(Error::Workload(format!("key {k} missing"))),
                    Some(f) if f != v => return Err(Error::Workload(format!("value of key {k} differs"))),
                    _ => {}
                }
            }
            if let Some(k) = found.keys().find(|k| !want.contains_key(k)) {
                return Err(Error::Workload(format!("unexpected key {k}")));
            }
        }
        Shape::Tpcc | Shape::Tatp => {
            let tpcc = spec.name.shape() == Shape::Tpcc;
            let fixed = if tpcc { txn::TPCC_FIXED_ROWS } else { txn::SUBSCRIBERS };
            let mut model = ModelRows {
                fixed,
                ..ModelRows::default()
            };
            if tpcc {
                txn::tpcc_populate(&mut model)?;
            } else {
                txn::tatp_populate(&mut model)?;
            }
            for op in ops {
                match op {
                    WorkOp::Tpcc(tx) => txn::tpcc_apply(&mut model, tx)?,
                    WorkOp::Tatp(tx) => txn::tatp_apply(&mut model, tx)?,
                    WorkOp::Put { .. } => return Err(Error::Workload("key-value operation in a row workload".into())),
                }
            }
            let appended = m.u64(COUNT)?;
            let rows = txn::read_rows(&mut m, fixed + appended)?;
            if tpcc {
                txn::tpcc_check(&rows, appended)?;
            } else {
                txn::tatp_check(&rows)?;
            }
            if appended != model.appended {
                return Err(Error::Workload(format!("{appended} rows appended, expected {}", model.appended)));
            }
            for (id, row) in &model.rows {
                if rows.get(id) != Some(row) {
                    return Err(Error::Workload(format!("row {id} differs")));
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(kind: WorkloadKind, m: WorkloadMechanism, mode: ExecMode, ops: usize) -> WorkloadRun<f64> {
        run(&WorkloadSpec::new(kind, m, ops, 7), &SystemConfig::new(mode)).unwrap()
    }

    #[test]
    fn every_structure_verifies_on_plain_images() {
        for kind in WorkloadKind::ALL {
            let spec = WorkloadSpec::new(kind, WorkloadMechanism::Logging, 300, 3);
            let size = spec.pool_bytes();
            let mut images = BTreeMap::new();
            for pool in spec.pools() {
                images.insert(pool, spec.initial_image(size).unwrap());
            }
            for op in spec.schedule() {
                let img = images.get_mut(&op.pool).unwrap();
                spec.apply(&mut Image(img), size, &op.op).unwrap();
            }
            let v = verify(&images, &spec);
            assert!(v.passed(), "{kind}: {v}");
            if spec.op_count > 0 {
                assert!(!verify_prefix(&images, &spec, 10).passed(), "{kind}");
            }
        }
    }

    #[test]
    fn hashmap_matches_across_baseline_and_md() {
        let a = quick(WorkloadKind::Hashmap, WorkloadMechanism::Logging, ExecMode::Baseline, 100);
        let b = quick(WorkloadKind::Hashmap, WorkloadMechanism::Logging, ExecMode::MultiDevice, 100);
        assert_eq!(a.images, b.images);
        let spec = WorkloadSpec::new(WorkloadKind::Hashmap, WorkloadMechanism::Logging, 100, 7);
        assert!(verify(&b.images, &spec).passed());
    }

    #[test]
    fn zero_operations_leave_an_empty_trace() {
        let r = quick(WorkloadKind::Btree, WorkloadMechanism::ShadowPaging, ExecMode::MultiDevice, 0);
        assert!(r.trace.events.is_empty());
        assert_eq!(r.stats.transactions, 0);
    }

    #[test]
    fn flipped_value_byte_names_the_key() {
        let spec = WorkloadSpec::new(WorkloadKind::Hashmap, WorkloadMechanism::Logging, 20, 7);
        let mut r = quick(WorkloadKind::Hashmap, WorkloadMechanism::Logging, ExecMode::SingleDevice, 20);
        let WorkOp::Put { key, value } = &spec.schedule()[0].op else {
            unreachable!()
        };
        let img = r.images.get_mut(&PoolId(1)).unwrap();
        let at = img.windows(value.len()).position(|w| w == value.as_slice()).unwrap();
        img[at] ^= 0xff;
        let v = verify(&r.images, &spec);
        assert!(v.failures.iter().any(|f| f.contains(&format!("key {key}"))), "{v}");
    }
}
