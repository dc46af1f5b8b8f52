//! Red-black tree with parent pointers; address 0 is the nil leaf.

use std::collections::BTreeMap;

use super::mem::{alloc, Mem, COUNT, ROOT};
use super::KvParams;
use crate::error::{Error, Result};

const KEY: u64 = 0;
const VAL: u64 = 8;
const LEFT: u64 = 16;
const RIGHT: u64 = 24;
const PARENT: u64 = 32;
const COLOR: u64 = 40;
const NODE: u64 = 48;
const RED: u64 = 1;
const BLACK: u64 = 0;

fn get<M: Mem>(m: &mut M, x: u64, f: u64) -> Result<u64> {
    if x == 0 {
        // nil is black and has no links
        Ok(0)
    } else {
        m.u64(x + f)
    }
}

fn set<M: Mem>(m: &mut M, x: u64, f: u64, v: u64) -> Result<()> {
    m.set_u64(x + f, v)
}

pub fn init<M: Mem>(m: &mut M, _p: &KvParams) -> Result<()> {
    m.set_u64(ROOT, 0)
}

/// Rotates `x` towards `dir` (LEFT or RIGHT).
fn rotate<M: Mem>(m: &mut M, x: u64, dir: u64) -> Result<()> {
    let other = if dir == LEFT { RIGHT } else { LEFT };
    let y = get(m, x, other)?;
    let inner = get(m, y, dir)?;
    set(m, x, other, inner)?;
    if inner != 0 {
        set(m, inner, PARENT, x)?;
    }
    let px = get(m, x, PARENT)?;
    set(m, y, PARENT, px)?;
    if px == 0 {
        m.set_u64(ROOT, y)?;
    } else if get(m, px, LEFT)? == x {
        set(m, px, LEFT, y)?;
    } else {
        set(m, px, RIGHT, y)?;
    }
    set(m, y, dir, x)?;
    set(m, x, PARENT, y)
}

pub fn put<M: Mem>(m: &mut M, p: &KvParams, key: u64, value: &[u8]) -> Result<()> {
    let mut parent = 0;
    let mut x = m.u64(ROOT)?;
    while x != 0 {
        parent = x;
        let k = get(m, x, KEY)?;
        if k == key {
            let v = get(m, x, VAL)?;
            return m.write(v, value);
        }
        x = get(m, x, if key < k { LEFT } else { RIGHT })?;
    }
    let v = alloc(m, p.value_size, p.limit)?;
    m.write(v, value)?;
    let mut z = alloc(m, NODE, p.limit)?;
    let mut raw = Vec::with_capacity(NODE as usize);
    for w in [key, v, 0, 0, parent, RED] {
        raw.extend_from_slice(&w.to_le_bytes());
    }
    m.write(z, &raw)?;
    if parent == 0 {
        m.set_u64(ROOT, z)?;
    } else if key < get(m, parent, KEY)? {
        set(m, parent, LEFT, z)?;
    } else {
        set(m, parent, RIGHT, z)?;
    }
    loop {
        let pz = get(m, z, PARENT)?;
        if pz == 0 || get(m, pz, COLOR)? != RED {
            break;
        }
        let g = get(m, pz, PARENT)?;
        let (side, far) = if get(m, g, LEFT)? == pz { (LEFT, RIGHT) } else { (RIGHT, LEFT) };
        let uncle = get(m, g, far)?;
        if uncle != 0 && get(m, uncle, COLOR)? == RED {
            set(m, pz, COLOR, BLACK)?;
            set(m, uncle, COLOR, BLACK)?;
            set(m, g, COLOR, RED)?;
            z = g;
            continue;
        }
        if get(m, pz, far)? == z {
            z = pz;
            rotate(m, z, side)?;
        }
        let pz = get(m, z, PARENT)?;
        let g = get(m, pz, PARENT)?;
        set(m, pz, COLOR, BLACK)?;
        set(m, g, COLOR, RED)?;
        rotate(m, g, far)?;
    }
    let root = m.u64(ROOT)?;
    if get(m, root, COLOR)? != BLACK {
        set(m, root, COLOR, BLACK)?;
    }
    let n = m.u64(COUNT)?;
    m.set_u64(COUNT, n + 1)
}

/// Returns the black height of the subtree.
fn walk<M: Mem>(
    m: &mut M,
    p: &KvParams,
    x: u64,
    parent: u64,
    bounds: (Option<u64>, Option<u64>),
    out: &mut BTreeMap<u64, Vec<u8>>,
) -> Result<usize> {
    if x == 0 {
        return Ok(1);
    }
    if out.len() as u64 > p.limit {
        return Err(Error::Workload("cycle in tree".into()));
    }
    let key = get(m, x, KEY)?;
    if get(m, x, PARENT)? != parent {
        return Err(Error::Workload(format!("key {key} has a stale parent link")));
    }
    if bounds.0.is_some_and(|lo| key <= lo) || bounds.1.is_some_and(|hi| key >= hi) {
        return Err(Error::Workload(format!("key {key} out of order")));
    }
    let color = get(m, x, COLOR)?;
    let (l, r) = (get(m, x, LEFT)?, get(m, x, RIGHT)?);
    if color == RED && (get(m, l, COLOR)? == RED || get(m, r, COLOR)? == RED) {
        return Err(Error::Workload(format!("red node {key} has a red child")));
    }
    let hl = walk(m, p, l, x, (bounds.0, Some(key)), out)?;
    let v = get(m, x, VAL)?;
    out.insert(key, m.read(v, p.value_size)?);
    let hr = walk(m, p, r, x, (Some(key), bounds.1), out)?;
    if hl != hr {
        return Err(Error::Workload(format!("unequal black heights below {key}")));
    }
    Ok(hl + (color == BLACK) as usize)
}

/// Search order, parent links, no red-red edge, equal black heights.
pub fn contents<M: Mem>(m: &mut M, p: &KvParams) -> Result<BTreeMap<u64, Vec<u8>>> {
    let root = m.u64(ROOT)?;
    if get(m, root, COLOR)? == RED {
        return Err(Error::Workload("red root".into()));
    }
    let mut out = BTreeMap::new();
    walk(m, p, root, 0, (None, None), &mut out)?;
    super::check_count(m, out.len())?;
    Ok(out)
}
