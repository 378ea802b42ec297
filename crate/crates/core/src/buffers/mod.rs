//! Fixed-capacity TCP buffers: a zero-copy circular send buffer and a flat
//! circular receive buffer that stores out-of-order bytes in place, tracked
//! by a one-bit-per-byte bitmap.

mod recv;
mod send;

pub use recv::RecvBuffer;
pub use send::{SendBuffer, TxView};

use thiserror::Error;

/// Default capacity of both buffers: four 462-byte segments.
pub const DEFAULT_BUFFER_BYTES: usize = 1848;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BufferError {
    #[error("acknowledged offset {new} is behind current una {una}")]
    Regression { new: u64, una: u64 },
    #[error("acknowledged offset {new} is beyond buffered data end {end}")]
    BeyondData { new: u64, end: u64 },
}
