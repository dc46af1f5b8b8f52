//! Row-update transaction kernels shaped like TPC-C and TATP.
//!
//! Rows are 64-byte records of eight words stored in fixed tables; TPC-C
//! additionally appends order and order-line rows to a log table.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::mem::{Mem, COUNT, HEAP_START};
use crate::error::{Error, Result};

pub const ROW: u64 = 64;
pub type Row = [u64; 8];

pub const DISTRICTS: u64 = 10;
pub const CUSTOMERS_PER_DISTRICT: u64 = 30;
pub const ITEMS: u64 = 100;
pub const MAX_LINES: u64 = 10;
pub const SUBSCRIBERS: u64 = 1000;

const WAREHOUSE: u64 = 0;
const DISTRICT0: u64 = 1;
const CUSTOMER0: u64 = DISTRICT0 + DISTRICTS;
const STOCK0: u64 = CUSTOMER0 + DISTRICTS * CUSTOMERS_PER_DISTRICT;
pub const TPCC_FIXED_ROWS: u64 = STOCK0 + ITEMS;
const INITIAL_O_ID: u64 = 3001;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TpccTx {
    NewOrder {
        district: u64,
        customer: u64,
        lines: Vec<(u64, u64)>,
    },
    Payment {
        district: u64,
        customer: u64,
        amount: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TatpTx {
    UpdateSubscriberData { subscriber: u64, bit: u64, data: u64 },
    UpdateLocation { subscriber: u64, location: u64 },
}

/// Storage for rows, implemented by the pool and by the reference model.
pub trait Rows {
    fn get(&mut self, id: u64) -> Result<Row>;
    fn put(&mut self, id: u64, row: Row) -> Result<()>;
    fn append(&mut self, row: Row) -> Result<()>;
}

/// Row tables laid out from the start of the heap; appended rows follow the
/// fixed ones and their number is kept in the pool header.
pub struct PoolRows<'m, M: Mem> {
    pub mem: &'m mut M,
    pub fixed: u64,
    pub capacity: u64,
}

fn row_addr(id: u64) -> u64 {
    HEAP_START + id * ROW
}

fn encode(row: &Row) -> Vec<u8> {
    row.iter().flat_map(|w| w.to_le_bytes()).collect()
}

fn decode(raw: &[u8]) -> Row {
    let mut row = [0u64; 8];
    for (i, w) in row.iter_mut().enumerate() {
        *w = u64::from_le_bytes(raw[8 * i..8 * i + 8].try_into().expect("word"));
    }
    row
}

impl<M: Mem> Rows for PoolRows<'_, M> {
    fn get(&mut self, id: u64) -> Result<Row> {
        Ok(decode(&self.mem.read(row_addr(id), ROW)?))
    }

    fn put(&mut self, id: u64, row: Row) -> Result<()> {
        self.mem.write(row_addr(id), &encode(&row))
    }

    fn append(&mut self, row: Row) -> Result<()> {
        let n = self.mem.u64(COUNT)?;
        if self.fixed + n >= self.capacity {
            return Err(Error::Workload("row log exhausted".into()));
        }
        self.put(self.fixed + n, row)?;
        self.mem.set_u64(COUNT, n + 1)
    }
}

/// In-memory reference rows.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ModelRows {
    pub rows: BTreeMap<u64, Row>,
    pub fixed: u64,
    pub appended: u64,
}

impl Rows for ModelRows {
    fn get(&mut self, id: u64) -> Result<Row> {
        Ok(self.rows.get(&id).copied().unwrap_or_default())
    }

    fn put(&mut self, id: u64, row: Row) -> Result<()> {
        self.rows.insert(id, row);
        Ok(())
    }

    fn append(&mut self, row: Row) -> Result<()> {
        self.rows.insert(self.fixed + self.appended, row);
        self.appended += 1;
        Ok(())
    }
}

pub fn tpcc_rows(ops: u64) -> u64 {
    TPCC_FIXED_ROWS + ops * (MAX_LINES + 1)
}

pub fn tpcc_populate<R: Rows>(r: &mut R) -> Result<()> {
    r.put(WAREHOUSE, [WAREHOUSE, 0, 7, 0, 0, 0, 0, 0])?;
    for d in 0..DISTRICTS {
        r.put(DISTRICT0 + d, [DISTRICT0 + d, 0, INITIAL_O_ID, 5 + d, 0, 0, 0, 0])?;
    }
    for c in 0..DISTRICTS * CUSTOMERS_PER_DISTRICT {
        r.put(CUSTOMER0 + c, [CUSTOMER0 + c, 0, 0, 0, 0, 0, 0, 0])?;
    }
    for i in 0..ITEMS {
        r.put(STOCK0 + i, [STOCK0 + i, 50 + i % 50, 0, 0, 0, 0, 0, 0])?;
    }
    Ok(())
}

pub fn tpcc_generate(rng: &mut ChaCha8Rng) -> TpccTx {
    let district = rng.gen_range(0..DISTRICTS);
    let customer = rng.gen_range(0..CUSTOMERS_PER_DISTRICT);
    if rng.gen_bool(0.5) {
        let n = rng.gen_range(5..=MAX_LINES);
        let mut items: Vec<u64> = Vec::new();
        while (items.len() as u64) < n {
            let i = rng.gen_range(0..ITEMS);
            if !items.contains(&i) {
                items.push(i);
            }
        }
        items.sort_unstable();
        let lines = items.into_iter().map(|i| (i, rng.gen_range(1..=10))).collect();
        TpccTx::NewOrder {
            district,
            customer,
            lines,
        }
    } else {
        TpccTx::Payment {
            district,
            customer,
            amount: rng.gen_range(1..=5000),
        }
    }
}

pub fn tpcc_apply<R: Rows>(r: &mut R, tx: &TpccTx) -> Result<()> {
    match tx {
        TpccTx::NewOrder {
            district,
            customer,
            lines,
        } => {
            let w = r.get(WAREHOUSE)?;
            let mut d = r.get(DISTRICT0 + district)?;
            let o_id = d[2];
            d[2] += 1;
            r.put(DISTRICT0 + district, d)?;
            r.append([0, *district, o_id, *customer, lines.len() as u64, w[2] + d[3], 0, 0])?;
            for &(item, qty) in lines {
                let mut s = r.get(STOCK0 + item)?;
                s[1] = if s[1] >= qty + 10 { s[1] - qty } else { s[1] + 91 - qty };
                s[2] += qty;
                s[3] += 1;
                r.put(STOCK0 + item, s)?;
                r.append([1, item, qty, qty * (item + 1), o_id, 0, 0, 0])?;
            }
        }
        TpccTx::Payment {
            district,
            customer,
            amount,
        } => {
            let mut w = r.get(WAREHOUSE)?;
            w[1] += amount;
            r.put(WAREHOUSE, w)?;
            let mut d = r.get(DISTRICT0 + district)?;
            d[1] += amount;
            r.put(DISTRICT0 + district, d)?;
            let id = CUSTOMER0 + district * CUSTOMERS_PER_DISTRICT + customer;
            let mut c = r.get(id)?;
            c[1] = c[1].wrapping_sub(*amount);
            c[2] += 1;
            c[3] += amount;
            r.put(id, c)?;
        }
    }
    Ok(())
}

/// Consistency conditions relating the tables to each other.
pub fn tpcc_check(rows: &BTreeMap<u64, Row>, appended: u64) -> Result<()> {
    let fixed_ok = (0..TPCC_FIXED_ROWS).all(|id| rows.get(&id).is_some_and(|r| r[0] == id));
    if !fixed_ok {
        return Err(Error::Workload("fixed row has the wrong id".into()));
    }
    let orders: u64 = (0..DISTRICTS).map(|d| rows[&(DISTRICT0 + d)][2] - INITIAL_O_ID).sum();
    let mut seen = 0;
    let mut lines_left = 0;
    for i in 0..appended {
        let r = rows[&(TPCC_FIXED_ROWS + i)];
        match (r[0], lines_left) {
            (0, 0) => {
                seen += 1;
                lines_left = r[4];
            }
            (1, n) if n > 0 => lines_left -= 1,
            _ => return Err(Error::Workload(format!("order log row {i} malformed"))),
        }
    }
    if seen != orders || lines_left != 0 {
        return Err(Error::Workload(format!("{orders} orders issued but {seen} logged")));
    }
    let paid: u64 = (0..DISTRICTS).map(|d| rows[&(DISTRICT0 + d)][1]).sum();
    if paid != rows[&WAREHOUSE][1] {
        return Err(Error::Workload("district totals disagree with the warehouse".into()));
    }
    Ok(())
}

pub fn tatp_populate<R: Rows>(r: &mut R) -> Result<()> {
    for s in 0..SUBSCRIBERS {
        r.put(s, [s, 0, 0, s * 7 % 1000, 0, 0, 0, 0])?;
    }
    Ok(())
}

pub fn tatp_generate(rng: &mut ChaCha8Rng) -> TatpTx {
    let subscriber = rng.gen_range(0..SUBSCRIBERS);
    if rng.gen_bool(0.5) {
        TatpTx::UpdateSubscriberData {
            subscriber,
            bit: rng.gen_range(0..2),
            data: rng.gen_range(0..256),
        }
    } else {
        TatpTx::UpdateLocation {
            subscriber,
            location: rng.gen::<u32>() as u64,
        }
    }
}

/// Each kernel reads and rewrites exactly one row.
pub fn tatp_apply<R: Rows>(r: &mut R, tx: &TatpTx) -> Result<()> {
    match *tx {
        TatpTx::UpdateSubscriberData { subscriber, bit, data } => {
            let mut row = r.get(subscriber)?;
            row[1] = bit;
            row[2] = data;
            r.put(subscriber, row)
        }
        TatpTx::UpdateLocation { subscriber, location } => {
            let mut row = r.get(subscriber)?;
            row[3] = location;
            r.put(subscriber, row)
        }
    }
}

pub fn tatp_check(rows: &BTreeMap<u64, Row>) -> Result<()> {
    for s in 0..SUBSCRIBERS {
        let r = rows.get(&s).ok_or_else(|| Error::Workload(format!("subscriber {s} missing")))?;
        if r[0] != s || r[1] > 1 || r[2] > 255 {
            return Err(Error::Workload(format!("subscriber {s} corrupted")));
        }
    }
    Ok(())
}

/// Reads `count` rows of a pool image.
pub fn read_rows<M: Mem>(m: &mut M, count: u64) -> Result<BTreeMap<u64, Row>> {
    (0..count).map(|id| Ok((id, decode(&m.read(row_addr(id), ROW)?)))).collect()
}
