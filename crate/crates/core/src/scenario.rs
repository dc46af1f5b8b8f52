//! Small transactional programs used for exhaustive crash testing.
//!
//! A scenario names one pool, its initial contents and a short list of
//! operations. It is stored as TOML:
//!
//! ```toml
//! name = "undo-one-word"
//! mechanism = "undo"
//! devices = 2
//! mode = "MD"
//!
//! [[init]]
//! addr = 0
//! len = 16
//! fill = 1
//!
//! [[op]]
//! kind = "begin"
//!
//! [[op]]
//! kind = "write"
//! addr = 0
//! len = 8
//! fill = 2
//!
//! [[op]]
//! kind = "commit"
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cost::CostModel;
use crate::engine::{Engine, EngineConfig, ExecMode, FaultInjection};
use crate::error::{Error, Result};
use crate::primitives::Mechanism;
use crate::scalar::Scalar;
use crate::translate::{PoolId, ThreadId};
use crate::txlib::Transaction;

/// Default bound on the number of operations in one scenario.
pub const MAX_OPS: usize = 12;

pub const SCENARIO_POOL: PoolId = PoolId(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expectation {
    Recoverable,
    Unrecoverable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fill {
    pub addr: u64,
    #[serde(default)]
    pub len: u64,
    #[serde(default)]
    pub fill: u8,
    /// Explicit bytes; overrides `len` and `fill`.
    #[serde(default)]
    pub bytes: Option<Vec<u8>>,
}

impl Fill {
    pub fn data(&self) -> Vec<u8> {
        self.bytes.clone().unwrap_or_else(|| vec![self.fill; self.len as usize])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Begin,
    Write,
    Read,
    Commit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Op {
    pub kind: OpKind,
    #[serde(default)]
    pub thread: u16,
    #[serde(default)]
    pub addr: u64,
    #[serde(default)]
    pub len: u64,
    #[serde(default)]
    pub fill: u8,
    #[serde(default)]
    pub bytes: Option<Vec<u8>>,
}

impl Op {
    pub fn data(&self) -> Vec<u8> {
        self.bytes.clone().unwrap_or_else(|| vec![self.fill; self.len as usize])
    }
}

fn default_devices() -> usize {
    1
}
fn default_granularity() -> u64 {
    256
}
fn default_pool() -> u64 {
    1024
}
fn default_chunk() -> u64 {
    8
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub mechanism: Mechanism,
    #[serde(default = "default_devices")]
    pub devices: usize,
    #[serde(default = "default_granularity")]
    pub granularity: u64,
    /// Defaults to the granularity.
    #[serde(default)]
    pub page_size: Option<u64>,
    #[serde(default = "default_pool")]
    pub pool_size: u64,
    /// Atomic unit of bulk NDP copies; 1 enumerates every byte prefix.
    #[serde(default = "default_chunk")]
    pub persist_chunk: u64,
    /// Defaults to SD for one device and MD otherwise.
    #[serde(default)]
    pub mode: Option<ExecMode>,
    #[serde(default)]
    pub faults: FaultInjection,
    #[serde(default)]
    pub expect: Option<Expectation>,
    #[serde(default)]
    pub init: Vec<Fill>,
    #[serde(default, rename = "op")]
    pub ops: Vec<Op>,
}

/// Result of running a scenario to completion without a crash.
pub struct ScenarioRun {
    pub engine: Engine<f64>,
    /// Transactions in commit order, as `(thread, writes)`.
    pub commits: Vec<(u16, Vec<(u64, Vec<u8>)>)>,
}

/// Logical pool states reachable by committing per-thread prefixes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceStates {
    pub initial: Vec<u8>,
    pub states: Vec<Vec<u8>>,
}

impl ReferenceStates {
    pub fn pre(&self) -> &[u8] {
        &self.initial
    }

    /// State with every transaction committed.
    pub fn post(&self) -> &[u8] {
        self.states.last().map_or(&self.initial, |s| s.as_slice())
    }

    pub fn contains(&self, img: &[u8]) -> bool {
        img == self.initial.as_slice() || self.states.iter().any(|s| s == img)
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Config {
            path: "scenario".into(),
            msg: e.to_string(),
        })?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config { msg, .. } => Error::Config {
                path: path.display().to_string(),
                msg,
            },
            other => other,
        })
    }

    pub fn page_size(&self) -> u64 {
        self.page_size.unwrap_or(self.granularity)
    }

    pub fn mode(&self) -> ExecMode {
        self.mode.unwrap_or(if self.devices == 1 {
            ExecMode::SingleDevice
        } else {
            ExecMode::MultiDevice
        })
    }

    /// Rejects scenarios beyond the size bound or with malformed operations.
    pub fn validate(&self, max_ops: usize) -> Result<()> {
        if self.ops.len() > max_ops {
            return Err(Error::Oracle(format!(
                "scenario {} has {} operations, the bound is {max_ops}",
                self.name,
                self.ops.len()
            )));
        }
        if self.persist_chunk == 0 {
            return Err(Error::Config {
                path: "persist_chunk".into(),
                msg: "must be positive".into(),
            });
        }
        let mut open: BTreeMap<u16, bool> = BTreeMap::new();
        for (i, op) in self.ops.iter().enumerate() {
            let o = open.entry(op.thread).or_default();
            let bad = match op.kind {
                OpKind::Begin => std::mem::replace(o, true),
                OpKind::Commit => !std::mem::replace(o, false),
                OpKind::Write => !*o || op.data().is_empty(),
                OpKind::Read => op.len == 0,
            };
            if bad {
                return Err(Error::Config {
                    path: format!("op[{i}]"),
                    msg: format!("{:?} is not valid here", op.kind),
                });
            }
        }
        if open.values().any(|o| *o) {
            return Err(Error::Config {
                path: "op".into(),
                msg: "a transaction is never committed".into(),
            });
        }
        Ok(())
    }

    pub fn engine_config<T: Scalar>(&self) -> EngineConfig<T> {
        EngineConfig {
            devices: self.devices,
            granularity: self.granularity,
            capacity_per_device: 64 << 10,
            striped_per_device: 16 << 10,
            page_size: self.page_size(),
            persist_chunk: self.persist_chunk,
            cost: CostModel::default(),
            mode: self.mode(),
            record: true,
            faults: self.faults,
            device_path: crate::engine::DEFAULT_DEVICE_PATH.into(),
        }
    }

    /// Executes the scenario crash-free and returns the recorded run.
    pub fn run(&self) -> Result<ScenarioRun> {
        self.validate(usize::MAX)?;
        let mut e = Engine::new(self.engine_config())?;
        e.create_pool(SCENARIO_POOL, None, 0, self.pool_size, self.mechanism)?;
        for f in &self.init {
            e.preload(SCENARIO_POOL, f.addr, &f.data())?;
        }
        let mut txs: BTreeMap<u16, Transaction> = BTreeMap::new();
        let mut pending: BTreeMap<u16, Vec<(u64, Vec<u8>)>> = BTreeMap::new();
        let mut commits = Vec::new();
        for op in &self.ops {
            let t = ThreadId(op.thread);
            if !txs.contains_key(&op.thread) {
                txs.insert(op.thread, Transaction::new(&e, SCENARIO_POOL, t)?);
            }
            let tx = txs.get_mut(&op.thread).expect("transaction handle");
            match op.kind {
                OpKind::Begin => {
                    tx.begin(&mut e)?;
                }
                OpKind::Write => {
                    tx.write(&mut e, op.addr, &op.data())?;
                    pending.entry(op.thread).or_default().push((op.addr, op.data()));
                }
                OpKind::Read => {
                    if tx.id().is_some() {
                        tx.read(&mut e, op.addr, op.len)?;
                    } else {
                        e.cpu_read(t, SCENARIO_POOL, op.addr, op.len)?;
                    }
                }
                OpKind::Commit => {
                    tx.commit(&mut e)?;
                    commits.push((op.thread, pending.remove(&op.thread).unwrap_or_default()));
                }
            }
        }
        e.drain()?;
        Ok(ScenarioRun { engine: e, commits })
    }

    /// Initial logical image, computed without the simulator.
    pub fn initial_image(&self) -> Vec<u8> {
        let span = self.granularity * self.devices as u64;
        let size = self.pool_size.max(1).div_ceil(span) * span;
        let mut img = vec![0u8; size as usize];
        for f in &self.init {
            let d = f.data();
            img[f.addr as usize..f.addr as usize + d.len()].copy_from_slice(&d);
        }
        img
    }

    /// Committed transactions in program order, as `(thread, writes)`.
    pub fn transactions(&self) -> Vec<(u16, Vec<(u64, Vec<u8>)>)> {
        let mut pending: BTreeMap<u16, Vec<(u64, Vec<u8>)>> = BTreeMap::new();
        let mut out = Vec::new();
        for op in &self.ops {
            match op.kind {
                OpKind::Write => pending.entry(op.thread).or_default().push((op.addr, op.data())),
                OpKind::Commit => out.push((op.thread, pending.remove(&op.thread).unwrap_or_default())),
                _ => {}
            }
        }
        out
    }

    /// Every image obtained by committing a prefix of each thread's
    /// transactions, applied in program order.
    pub fn reference_states(&self) -> ReferenceStates {
        let initial = self.initial_image();
        let txs = self.transactions();
        let mut per_thread: BTreeMap<u16, usize> = BTreeMap::new();
        for (t, _) in &txs {
            *per_thread.entry(*t).or_default() += 1;
        }
        let threads: Vec<(u16, usize)> = per_thread.into_iter().collect();
        let mut states = Vec::new();
        let mut counts = vec![0usize; threads.len()];
        loop {
            // advance the mixed-radix counter
            let mut i = 0;
            while i < counts.len() {
                if counts[i] < threads[i].1 {
                    counts[i] += 1;
                    break;
                }
                counts[i] = 0;
                i += 1;
            }
            if i == counts.len() {
                break;
            }
            let mut img = initial.clone();
            let mut seen: BTreeMap<u16, usize> = BTreeMap::new();
            for (t, writes) in &txs {
                let k = seen.entry(*t).or_default();
                let idx = threads.iter().position(|(x, _)| x == t).expect("thread");
                if *k < counts[idx] {
                    for (a, d) in writes {
                        img[*a as usize..*a as usize + d.len()].copy_from_slice(d);
                    }
                }
                *k += 1;
            }
            states.push(img);
        }
        let mut full = initial.clone();
        for (_, writes) in &txs {
            for (a, d) in writes {
                full[*a as usize..*a as usize + d.len()].copy_from_slice(d);
            }
        }
        // the all-committed state goes last
        states.retain(|s| *s != full);
        if !txs.is_empty() {
            states.push(full);
        }
        ReferenceStates { initial, states }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE: &str = r#"
name = "one"
mechanism = "undo"

[[init]]
addr = 0
len = 8
fill = 1

[[op]]
kind = "begin"

[[op]]
kind = "write"
addr = 0
len = 8
fill = 2

[[op]]
kind = "commit"
"#;

    #[test]
    fn parses_and_runs() {
        let s = Scenario::from_toml(ONE).unwrap();
        assert_eq!(s.mode(), ExecMode::SingleDevice);
        let run = s.run().unwrap();
        let img = run.engine.logical_image(SCENARIO_POOL).unwrap();
        assert_eq!(&img[..8], &[2; 8]);
        assert_eq!(img, s.reference_states().post());
    }

    #[test]
    fn reference_pre_and_post() {
        let s = Scenario::from_toml(ONE).unwrap();
        let r = s.reference_states();
        assert_eq!(&r.pre()[..8], &[1; 8]);
        assert_eq!(&r.post()[..8], &[2; 8]);
        assert_eq!(r.states.len(), 1);
    }

    #[test]
    fn read_only_program_has_pre_equal_post() {
        let mut s = Scenario::from_toml(ONE).unwrap();
        s.ops = vec![Op {
            kind: OpKind::Read,
            thread: 0,
            addr: 0,
            len: 8,
            fill: 0,
            bytes: None,
        }];
        let r = s.reference_states();
        assert_eq!(r.pre(), r.post());
    }

    #[test]
    fn two_transactions_reflect_both_commits() {
        let mut s = Scenario::from_toml(ONE).unwrap();
        let more = s.ops.clone();
        s.ops.extend(more.into_iter().map(|mut o| {
            o.addr = 8;
            o.fill = 3;
            o
        }));
        let r = s.reference_states();
        assert_eq!(r.states.len(), 2);
        assert_eq!(&r.post()[..16], [[2u8; 8], [3; 8]].concat().as_slice());
    }

    #[test]
    fn bound_and_shape_are_enforced() {
        let mut s = Scenario::from_toml(ONE).unwrap();
        assert!(matches!(s.validate(2), Err(Error::Oracle(_))));
        s.ops.pop();
        assert!(matches!(s.validate(12), Err(Error::Config { .. })));
        assert!(Scenario::from_toml("name = 1").is_err());
    }
}
