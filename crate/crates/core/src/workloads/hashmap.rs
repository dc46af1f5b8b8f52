//! Chained hash table with a fixed bucket array.

use std::collections::BTreeMap;

use super::mem::{alloc, Mem, COUNT, ROOT};
use super::KvParams;
use crate::error::{Error, Result};

const KEY: u64 = 0;
const VAL: u64 = 8;
const NEXT: u64 = 16;
const NODE: u64 = 24;

pub fn bucket_of(key: u64, buckets: u64) -> u64 {
    super::mix(key) % buckets
}

pub fn init<M: Mem>(m: &mut M, p: &KvParams) -> Result<()> {
    let table = alloc(m, 8 * p.buckets, p.limit)?;
    m.set_u64(ROOT, table)
}

pub fn put<M: Mem>(m: &mut M, p: &KvParams, key: u64, value: &[u8]) -> Result<()> {
    let table = m.u64(ROOT)?;
    let head = table + 8 * bucket_of(key, p.buckets);
    let mut cur = m.u64(head)?;
    while cur != 0 {
        if m.u64(cur + KEY)? == key {
            let v = m.u64(cur + VAL)?;
            return m.write(v, value);
        }
        cur = m.u64(cur + NEXT)?;
    }
    let v = alloc(m, p.value_size, p.limit)?;
    m.write(v, value)?;
    let node = alloc(m, NODE, p.limit)?;
    let first = m.u64(head)?;
    let mut raw = Vec::with_capacity(NODE as usize);
    for w in [key, v, first] {
        raw.extend_from_slice(&w.to_le_bytes());
    }
    m.write(node, &raw)?;
    m.set_u64(head, node)?;
    let n = m.u64(COUNT)?;
    m.set_u64(COUNT, n + 1)
}

/// Every node must be reachable from the bucket its key hashes to.
pub fn contents<M: Mem>(m: &mut M, p: &KvParams) -> Result<BTreeMap<u64, Vec<u8>>> {
    let table = m.u64(ROOT)?;
    let mut out = BTreeMap::new();
    for b in 0..p.buckets {
        let mut cur = m.u64(table + 8 * b)?;
        let mut steps = 0;
        while cur != 0 {
            let key = m.u64(cur + KEY)?;
            if bucket_of(key, p.buckets) != b {
                return Err(Error::Workload(format!("key {key} chained in bucket {b}")));
            }
            let v = m.u64(cur + VAL)?;
            if out.insert(key, m.read(v, p.value_size)?).is_some() {
                return Err(Error::Workload(format!("key {key} stored twice")));
            }
            cur = m.u64(cur + NEXT)?;
            steps += 1;
            if steps > p.limit {
                return Err(Error::Workload(format!("cycle in bucket {b}")));
            }
        }
    }
    super::check_count(m, out.len())?;
    Ok(out)
}
