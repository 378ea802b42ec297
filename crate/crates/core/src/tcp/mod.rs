//! Sans-IO TCP: New Reno with fast recovery, timestamps, delayed ACKs,
//! SACK-lite, ECN and a persist timer, on top of the zero-copy send buffer
//! and the in-place receive buffer.

mod conn;
mod rtt;

pub use conn::{TcpConn, TcpEvent, TcpState, TcpStats};
pub use rtt::RttEstimator;

use crate::buffers::DEFAULT_BUFFER_BYTES;
use crate::sim::{MS, SEC};

/// Upper bound on SACK blocks carried by one ACK.
pub const MAX_SACK_BLOCKS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct TcpConfig {
    /// Payload bytes per segment.
    pub mss: usize,
    pub send_buffer: usize,
    pub recv_buffer: usize,
    pub rto_min_us: u64,
    pub rto_max_us: u64,
    pub rto_initial_us: u64,
    /// Consecutive timer expirations that abort the connection.
    pub max_rto_fires: u32,
    pub delayed_ack: bool,
    pub delack_us: u64,
    pub sack: bool,
    pub ecn: bool,
    pub initial_cwnd_segments: usize,
    pub limited_transmit: bool,
    pub cwnd_cap: usize,
}

impl Default for TcpConfig {
    fn default() -> Self {
        TcpConfig {
            mss: 462,
            send_buffer: DEFAULT_BUFFER_BYTES,
            recv_buffer: DEFAULT_BUFFER_BYTES,
            rto_min_us: SEC,
            rto_max_us: 64 * SEC,
            rto_initial_us: SEC,
            max_rto_fires: 12,
            delayed_ack: true,
            delack_us: 100 * MS,
            sack: true,
            ecn: false,
            initial_cwnd_segments: 2,
            limited_transmit: true,
            cwnd_cap: 65_535,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Flags {
    pub syn: bool,
    pub ack: bool,
    pub fin: bool,
    pub rst: bool,
    pub ece: bool,
    pub cwr: bool,
}

impl Flags {
    pub fn describe(&self) -> String {
        let mut s = String::new();
        for (on, c) in [
            (self.syn, 'S'),
            (self.ack, 'A'),
            (self.fin, 'F'),
            (self.rst, 'R'),
            (self.ece, 'E'),
            (self.cwr, 'C'),
        ] {
            if on {
                s.push(c);
            }
        }
        s
    }
}

/// One TCP segment. Sequence numbers are 64-bit and never wrap.
/// `ect` and `ce` are the IP-level ECN codepoint of the carrying datagram.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Segment {
    pub seq: u64,
    pub ack: u64,
    pub flags: Flags,
    pub window: u32,
    pub mss: Option<u16>,
    /// (TSval, TSecr)
    pub ts: Option<(u64, u64)>,
    pub sack: Vec<(u64, u64)>,
    pub payload: Vec<u8>,
    pub ect: bool,
    pub ce: bool,
}

impl Segment {
    /// Sequence space consumed: payload plus SYN and FIN.
    pub fn seq_len(&self) -> u64 {
        self.payload.len() as u64 + self.flags.syn as u64 + self.flags.fin as u64
    }
}
