//! B-tree of minimum degree 4 holding keys and out-of-line values.

use std::collections::BTreeMap;

use super::mem::{alloc, Mem, COUNT, ROOT};
use super::KvParams;
use crate::error::{Error, Result};

const DEGREE: usize = 4;
pub const MAX_KEYS: usize = 2 * DEGREE - 1;
const NODE: u64 = 16 + 16 * MAX_KEYS as u64 + 8 * (MAX_KEYS as u64 + 1);

#[derive(Debug, Clone, Default)]
struct Node {
    n: usize,
    leaf: bool,
    keys: [u64; MAX_KEYS],
    vals: [u64; MAX_KEYS],
    kids: [u64; MAX_KEYS + 1],
}

impl Node {
    fn load<M: Mem>(m: &mut M, at: u64) -> Result<Self> {
        let raw = m.read(at, NODE)?;
        let w = |i: usize| u64::from_le_bytes(raw[8 * i..8 * i + 8].try_into().expect("word"));
        let n = w(0) as usize;
        if n > MAX_KEYS {
            return Err(Error::Workload(format!("node {at:#x} holds {n} keys")));
        }
        let mut node = Node {
            n,
            leaf: w(1) != 0,
            ..Node::default()
        };
        for i in 0..MAX_KEYS {
            node.keys[i] = w(2 + i);
            node.vals[i] = w(2 + MAX_KEYS + i);
        }
        for i in 0..=MAX_KEYS {
            node.kids[i] = w(2 + 2 * MAX_KEYS + i);
        }
        Ok(node)
    }

    fn store<M: Mem>(&mut self, m: &mut M, at: u64) -> Result<()> {
        for i in self.n..MAX_KEYS {
            self.keys[i] = 0;
            self.vals[i] = 0;
        }
        if self.leaf {
            self.kids = [0; MAX_KEYS + 1];
        } else {
            for i in self.n + 1..=MAX_KEYS {
                self.kids[i] = 0;
            }
        }
        let mut raw = Vec::with_capacity(NODE as usize);
        for w in [self.n as u64, self.leaf as u64]
            .into_iter()
            .chain(self.keys)
            .chain(self.vals)
            .chain(self.kids)
        {
            raw.extend_from_slice(&w.to_le_bytes());
        }
        m.write(at, &raw)
    }
}

pub fn init<M: Mem>(m: &mut M, p: &KvParams) -> Result<()> {
    let root = alloc(m, NODE, p.limit)?;
    Node {
        leaf: true,
        ..Node::default()
    }
    .store(m, root)?;
    m.set_u64(ROOT, root)
}

fn search<M: Mem>(m: &mut M, mut at: u64, key: u64) -> Result<Option<u64>> {
    loop {
        let x = Node::load(m, at)?;
        let i = x.keys[..x.n].partition_point(|k| *k < key);
        if i < x.n && x.keys[i] == key {
            return Ok(Some(x.vals[i]));
        }
        if x.leaf {
            return Ok(None);
        }
        at = x.kids[i];
    }
}

fn split_child<M: Mem>(m: &mut M, p: &KvParams, at: u64, i: usize) -> Result<()> {
    let mut x = Node::load(m, at)?;
    let y_at = x.kids[i];
    let mut y = Node::load(m, y_at)?;
    let mut z = Node {
        n: DEGREE - 1,
        leaf: y.leaf,
        ..Node::default()
    };
    z.keys[..DEGREE - 1].copy_from_slice(&y.keys[DEGREE..]);
    z.vals[..DEGREE - 1].copy_from_slice(&y.vals[DEGREE..]);
    if !y.leaf {
        z.kids[..DEGREE].copy_from_slice(&y.kids[DEGREE..]);
    }
    let (mid_key, mid_val) = (y.keys[DEGREE - 1], y.vals[DEGREE - 1]);
    y.n = DEGREE - 1;
    let z_at = alloc(m, NODE, p.limit)?;
    for j in (i + 1..=x.n).rev() {
        x.kids[j + 1] = x.kids[j];
    }
    x.kids[i + 1] = z_at;
    for j in (i..x.n).rev() {
        x.keys[j + 1] = x.keys[j];
        x.vals[j + 1] = x.vals[j];
    }
    x.keys[i] = mid_key;
    x.vals[i] = mid_val;
    x.n += 1;
    y.store(m, y_at)?;
    z.store(m, z_at)?;
    x.store(m, at)
}

pub fn put<M: Mem>(m: &mut M, p: &KvParams, key: u64, value: &[u8]) -> Result<()> {
    let mut root = m.u64(ROOT)?;
    if let Some(v) = search(m, root, key)? {
        return m.write(v, value);
    }
    let v = alloc(m, p.value_size, p.limit)?;
    m.write(v, value)?;
    if Node::load(m, root)?.n == MAX_KEYS {
        let s = alloc(m, NODE, p.limit)?;
        let mut top = Node::default();
        top.kids[0] = root;
        top.store(m, s)?;
        split_child(m, p, s, 0)?;
        m.set_u64(ROOT, s)?;
        root = s;
    }
    let mut at = root;
    loop {
        let mut x = Node::load(m, at)?;
        let mut i = x.keys[..x.n].partition_point(|k| *k < key);
        if x.leaf {
            for j in (i..x.n).rev() {
                x.keys[j + 1] = x.keys[j];
                x.vals[j + 1] = x.vals[j];
            }
            x.keys[i] = key;
            x.vals[i] = v;
            x.n += 1;
            x.store(m, at)?;
            break;
        }
        if Node::load(m, x.kids[i])?.n == MAX_KEYS {
            split_child(m, p, at, i)?;
            x = Node::load(m, at)?;
            if key > x.keys[i] {
                i += 1;
            }
        }
        at = x.kids[i];
    }
    let n = m.u64(COUNT)?;
    m.set_u64(COUNT, n + 1)
}

struct Walk {
    leaf_depth: Option<usize>,
    out: BTreeMap<u64, Vec<u8>>,
}

fn walk<M: Mem>(
    m: &mut M,
    p: &KvParams,
    at: u64,
    depth: usize,
    bounds: (Option<u64>, Option<u64>),
    w: &mut Walk,
) -> Result<()> {
    if depth > 64 {
        return Err(Error::Workload("tree deeper than 64 levels".into()));
    }
    let x = Node::load(m, at)?;
    if depth > 0 && x.n < DEGREE - 1 {
        return Err(Error::Workload(format!("node {at:#x} underfull")));
    }
    let keys = &x.keys[..x.n];
    let in_bounds = keys.iter().all(|k| bounds.0.map_or(true, |lo| *k > lo) && bounds.1.map_or(true, |hi| *k < hi));
    if keys.windows(2).any(|p| p[0] >= p[1]) || !in_bounds {
        return Err(Error::Workload(format!("node {at:#x} keys out of order")));
    }
    if x.leaf {
        match w.leaf_depth {
            Some(d) if d != depth => return Err(Error::Workload("leaves at different depths".into())),
            _ => w.leaf_depth = Some(depth),
        }
    }
    for i in 0..=x.n {
        if !x.leaf {
            let lo = if i == 0 { bounds.0 } else { Some(x.keys[i - 1]) };
            let hi = if i == x.n { bounds.1 } else { Some(x.keys[i]) };
            walk(m, p, x.kids[i], depth + 1, (lo, hi), w)?;
        }
        if i < x.n {
            let v = m.read(x.vals[i], p.value_size)?;
            w.out.insert(x.keys[i], v);
        }
    }
    Ok(())
}

/// Sorted keys within separator bounds, uniform leaf depth, fill limits.
pub fn contents<M: Mem>(m: &mut M, p: &KvParams) -> Result<BTreeMap<u64, Vec<u8>>> {
    let root = m.u64(ROOT)?;
    let mut w = Walk {
        leaf_depth: None,
        out: BTreeMap::new(),
    };
    walk(m, p, root, 0, (None, None), &mut w)?;
    super::check_count(m, w.out.len())?;
    Ok(w.out)
}
