//! Byte-addressed memory seen by workload code.
//!
//! Structures are written once against [`Mem`] and run either inside a
//! simulated transaction or directly on a recovered image for verification.

use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::txlib::Transaction;

pub trait Mem {
    fn read(&mut self, addr: u64, len: u64) -> Result<Vec<u8>>;
    fn write(&mut self, addr: u64, bytes: &[u8]) -> Result<()>;

    fn u64(&mut self, addr: u64) -> Result<u64> {
        let b = self.read(addr, 8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("eight bytes")))
    }

    fn set_u64(&mut self, addr: u64, v: u64) -> Result<()> {
        self.write(addr, &v.to_le_bytes())
    }
}

/// A plain logical image.
pub struct Image<'a>(pub &'a mut Vec<u8>);

impl Mem for Image<'_> {
    fn read(&mut self, addr: u64, len: u64) -> Result<Vec<u8>> {
        let end = addr
            .checked_add(len)
            .filter(|e| *e <= self.0.len() as u64)
            .ok_or_else(|| Error::Workload(format!("read [{addr:#x}, +{len}) outside the image")))?;
        Ok(self.0[addr as usize..end as usize].to_vec())
    }

    fn write(&mut self, addr: u64, bytes: &[u8]) -> Result<()> {
        let end = addr + bytes.len() as u64;
        if end > self.0.len() as u64 {
            return Err(Error::Workload(format!("write [{addr:#x}, +{}) outside the image", bytes.len())));
        }
        self.0[addr as usize..end as usize].copy_from_slice(bytes);
        Ok(())
    }
}

/// Accesses through an open transaction of the simulator. Addresses are
/// offsets from the pool's virtual base.
pub struct TxMem<'a, T: Scalar> {
    pub engine: &'a mut Engine<T>,
    pub tx: &'a mut Transaction,
    pub base: u64,
}

impl<T: Scalar> Mem for TxMem<'_, T> {
    fn read(&mut self, addr: u64, len: u64) -> Result<Vec<u8>> {
        self.tx.read(self.engine, self.base + addr, len)
    }

    fn write(&mut self, addr: u64, bytes: &[u8]) -> Result<()> {
        self.tx.write(self.engine, self.base + addr, bytes)
    }
}

/// Pool header shared by every structure: bump pointer, root, element count.
pub const ALLOC_PTR: u64 = 0;
pub const ROOT: u64 = 8;
pub const COUNT: u64 = 16;
pub const HEAP_START: u64 = 64;

/// Bump allocation from the pool heap; the pointer lives in the pool header.
pub fn alloc<M: Mem>(m: &mut M, size: u64, limit: u64) -> Result<u64> {
    let cur = match m.u64(ALLOC_PTR)? {
        0 => HEAP_START,
        p => p,
    };
    let at = cur.div_ceil(8) * 8;
    if at + size > limit {
        return Err(Error::Workload(format!("pool exhausted allocating {size} bytes")));
    }
    m.set_u64(ALLOC_PTR, at + size)?;
    Ok(at)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_allocation_is_aligned_and_bounded() {
        let mut v = vec![0u8; 256];
        let mut m = Image(&mut v);
        assert_eq!(alloc(&mut m, 10, 256).unwrap(), HEAP_START);
        assert_eq!(alloc(&mut m, 8, 256).unwrap(), 80);
        assert!(alloc(&mut m, 200, 256).is_err());
        assert!(m.read(250, 8).is_err());
    }
}
