//! Skip list with key-derived tower heights, so the shape does not depend
//! on insertion order.

use std::collections::BTreeMap;

use super::mem::{alloc, Mem, COUNT, ROOT};
use super::KvParams;
use crate::error::{Error, Result};

pub const MAX_LEVEL: u64 = 8;
const KEY: u64 = 0;
const VAL: u64 = 8;
const LEVEL: u64 = 16;
const NEXT: u64 = 24;
const NODE: u64 = NEXT + 8 * MAX_LEVEL;

pub fn level_of(key: u64) -> u64 {
    // one extra level with probability 1/4
    let h = super::mix(key ^ 0x5bd1_e995);
    ((h.trailing_zeros() as u64) / 2 + 1).min(MAX_LEVEL)
}

fn next(level: u64) -> u64 {
    NEXT + 8 * level
}

pub fn init<M: Mem>(m: &mut M, p: &KvParams) -> Result<()> {
    let head = alloc(m, NODE, p.limit)?;
    m.set_u64(head + LEVEL, MAX_LEVEL)?;
    m.set_u64(ROOT, head)
}

pub fn put<M: Mem>(m: &mut M, p: &KvParams, key: u64, value: &[u8]) -> Result<()> {
    let head = m.u64(ROOT)?;
    let mut update = [head; MAX_LEVEL as usize];
    let mut x = head;
    for l in (0..MAX_LEVEL).rev() {
        loop {
            let n = m.u64(x + next(l))?;
            if n != 0 && m.u64(n + KEY)? < key {
                x = n;
            } else {
                break;
            }
        }
        update[l as usize] = x;
    }
    let cand = m.u64(x + next(0))?;
    if cand != 0 && m.u64(cand + KEY)? == key {
        let v = m.u64(cand + VAL)?;
        return m.write(v, value);
    }
    let v = alloc(m, p.value_size, p.limit)?;
    m.write(v, value)?;
    let level = level_of(key);
    let node = alloc(m, NODE, p.limit)?;
    let mut raw = Vec::with_capacity(NODE as usize);
    for w in [key, v, level] {
        raw.extend_from_slice(&w.to_le_bytes());
    }
    for l in 0..MAX_LEVEL {
        let succ = if l < level { m.u64(update[l as usize] + next(l))? } else { 0 };
        raw.extend_from_slice(&succ.to_le_bytes());
    }
    m.write(node, &raw)?;
    for l in 0..level {
        m.set_u64(update[l as usize] + next(l), node)?;
    }
    let n = m.u64(COUNT)?;
    m.set_u64(COUNT, n + 1)
}

/// Level 0 is strictly sorted and every higher level is a subsequence of
/// the one below it, containing exactly the nodes tall enough.
pub fn contents<M: Mem>(m: &mut M, p: &KvParams) -> Result<BTreeMap<u64, Vec<u8>>> {
    let head = m.u64(ROOT)?;
    let mut levels: Vec<Vec<u64>> = Vec::new();
    for l in 0..MAX_LEVEL {
        let mut keys = Vec::new();
        let mut x = m.u64(head + next(l))?;
        while x != 0 {
            keys.push(m.u64(x + KEY)?);
            if keys.len() as u64 > p.limit {
                return Err(Error::Workload(format!("cycle at level {l}")));
            }
            x = m.u64(x + next(l))?;
        }
        if keys.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Workload(format!("level {l} out of order")));
        }
        levels.push(keys);
    }
    let expect_at = |l: u64| -> Vec<u64> { levels[0].iter().copied().filter(|k| level_of(*k) > l).collect() };
    for l in 1..MAX_LEVEL {
        if levels[l as usize] != expect_at(l) {
            return Err(Error::Workload(format!("level {l} does not match tower heights")));
        }
    }
    let mut out = BTreeMap::new();
    let mut x = m.u64(head + next(0))?;
    while x != 0 {
        let key = m.u64(x + KEY)?;
        let v = m.u64(x + VAL)?;
        out.insert(key, m.read(v, p.value_size)?);
        x = m.u64(x + next(0))?;
    }
    super::check_count(m, out.len())?;
    Ok(out)
}
