use thiserror::Error;

use crate::translate::PoolId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("address fault: [{addr:#x}, +{len}) outside capacity {capacity:#x}")]
    AddressFault { addr: u64, len: u64, capacity: u64 },

    #[error("registration fault: {0}")]
    Registration(String),

    #[error("translation fault: pool {pool} not registered for thread {thread}")]
    UnknownPool { pool: PoolId, thread: u16 },

    #[error("bounds fault: vaddr {vaddr:#x}+{len} outside pool {pool}")]
    OutOfPool { pool: PoolId, vaddr: u64, len: u64 },

    #[error("{region} overflow in pool {pool} on device {device}")]
    Overflow {
        region: &'static str,
        pool: PoolId,
        device: usize,
    },

    #[error("protocol fault: {0}")]
    Protocol(String),

    #[error("init fault: unknown device path {0:?}")]
    Init(String),

    #[error("persistence domain fault: {0}")]
    Snapshot(String),

    #[error("checker fault: {0}")]
    Checker(String),

    #[error("recovery fault: {0}")]
    Recovery(String),

    #[error("oracle refused: {0}")]
    Oracle(String),

    #[error("workload fault: {0}")]
    Workload(String),

    #[error("config error at {path}: {msg}")]
    Config { path: String, msg: String },

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
