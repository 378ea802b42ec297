//! Datagram fragmentation into 802.15.4 frames and per-hop reassembly, with
//! header accounting by a fixed per-frame budget rather than bit-exact IPHC.

use thiserror::Error;

use crate::sim::{NodeId, SimTime, SEC};

/// Largest 802.15.4 PHY payload.
pub const MAX_FRAME_BYTES: usize = 127;
/// Largest datagram payload accepted for fragmentation.
pub const MAX_DATAGRAM_PAYLOAD: usize = 1280;
/// Default reassembly timeout.
pub const REASSEMBLY_TIMEOUT_US: u64 = 2 * SEC;
/// Concurrent partial datagrams kept per sender; relays interleave
/// fragments of different datagrams.
pub const PARTIALS_PER_SENDER: usize = 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BudgetError {
    #[error("first-frame overhead {0} B outside 38..=107")]
    First(u16),
    #[error("subsequent-frame overhead {0} B outside 16..=35")]
    Nth(u16),
    #[error("MAC overhead {0} B outside 11..=23")]
    Mac(u16),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FragError {
    #[error("datagram payload of {0} B exceeds the {MAX_DATAGRAM_PAYLOAD} B limit")]
    Oversize(usize),
}

/// Bytes of header carried by the first and by each later fragment of a
/// datagram.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeaderBudget {
    /// MAC + 6LoWPAN + compressed IPv6 + transport header.
    pub first_frame_overhead: u16,
    /// MAC + fragmentation header.
    pub nth_frame_overhead: u16,
    /// MAC share of either overhead.
    pub mac_overhead: u16,
}

impl Default for HeaderBudget {
    /// 97 B first / 19 B later frames: a 5-frame segment then carries 462 B,
    /// so four segments fill an 1848 B buffer exactly.
    fn default() -> Self {
        HeaderBudget {
            first_frame_overhead: 97,
            nth_frame_overhead: 19,
            mac_overhead: 14,
        }
    }
}

impl HeaderBudget {
    pub fn new(first: u16, nth: u16) -> Result<Self, BudgetError> {
        let b = HeaderBudget {
            first_frame_overhead: first,
            nth_frame_overhead: nth,
            mac_overhead: 11.max(nth.saturating_sub(5)).min(23),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), BudgetError> {
        if !(38..=107).contains(&self.first_frame_overhead) {
            return Err(BudgetError::First(self.first_frame_overhead));
        }
        if !(16..=35).contains(&self.nth_frame_overhead) {
            return Err(BudgetError::Nth(self.nth_frame_overhead));
        }
        if !(11..=23).contains(&self.mac_overhead) {
            return Err(BudgetError::Mac(self.mac_overhead));
        }
        Ok(())
    }

    /// Same budget with the transport-header share of the first frame
    /// changed by `delta` bytes (e.g. UDP + CoAP instead of TCP).
    pub fn with_first_delta(self, delta: i16) -> Self {
        let first = (self.first_frame_overhead as i16 + delta).clamp(38, 107) as u16;
        HeaderBudget {
            first_frame_overhead: first,
            ..self
        }
    }

    pub fn first_capacity(&self) -> usize {
        MAX_FRAME_BYTES - self.first_frame_overhead as usize
    }

    pub fn nth_capacity(&self) -> usize {
        MAX_FRAME_BYTES - self.nth_frame_overhead as usize
    }

    /// Fragments needed for `payload` bytes.
    pub fn frames_for(&self, payload: usize) -> usize {
        if payload <= self.first_capacity() {
            1
        } else {
            1 + (payload - self.first_capacity()).div_ceil(self.nth_capacity())
        }
    }

    /// Bytes on air for one datagram carrying `payload` bytes.
    pub fn bytes_on_air(&self, payload: usize) -> usize {
        let n = self.frames_for(payload);
        payload + self.first_frame_overhead as usize + (n - 1) * self.nth_frame_overhead as usize
    }
}

/// TCP payload bytes per segment when the MSS is `mss_frames` full frames.
pub fn mss_payload_bytes(mss_frames: usize, budget: &HeaderBudget) -> usize {
    assert!(mss_frames >= 1, "MSS must span at least one frame");
    budget.first_capacity() + (mss_frames - 1) * budget.nth_capacity()
}

/// One fragment. `header` rides only on the first fragment, the way the
/// compressed IPv6/transport headers sit in FRAG1.
#[derive(Clone, Debug, PartialEq)]
pub struct Fragment<H> {
    pub tag: u16,
    pub datagram_size: u16,
    pub offset: u16,
    pub data: Vec<u8>,
    pub header: Option<H>,
    /// False when the whole datagram fit one frame (no fragment header).
    pub fragmented: bool,
    /// Frame length in bytes, headers included.
    pub frame_len: u16,
}

/// Splits a datagram into the minimum number of fragments for `budget`.
pub fn fragment<H: Clone>(
    header: H,
    payload: &[u8],
    budget: &HeaderBudget,
    tag: u16,
) -> Result<Vec<Fragment<H>>, FragError> {
    if payload.len() > MAX_DATAGRAM_PAYLOAD {
        return Err(FragError::Oversize(payload.len()));
    }
    let total = payload.len() as u16;
    let n = budget.frames_for(payload.len());
    let fragmented = n > 1;
    let mut out = Vec::with_capacity(n);
    let first = payload.len().min(budget.first_capacity());
    out.push(Fragment {
        tag,
        datagram_size: total,
        offset: 0,
        data: payload[..first].to_vec(),
        header: Some(header),
        fragmented,
        frame_len: (budget.first_frame_overhead as usize + first) as u16,
    });
    let mut off = first;
    while off < payload.len() {
        let len = (payload.len() - off).min(budget.nth_capacity());
        out.push(Fragment {
            tag,
            datagram_size: total,
            offset: off as u16,
            data: payload[off..off + len].to_vec(),
            header: None,
            fragmented,
            frame_len: (budget.nth_frame_overhead as usize + len) as u16,
        });
        off += len;
    }
    Ok(out)
}

/// Result of feeding one fragment to a [`Reassembler`].
#[derive(Debug, PartialEq)]
pub enum Reassembly<H> {
    Complete(H, Vec<u8>),
    Pending,
}

#[derive(Debug)]
struct Partial<H> {
    src: NodeId,
    tag: u16,
    buf: Vec<u8>,
    have: Vec<bool>,
    filled: usize,
    header: Option<H>,
    deadline: SimTime,
}

/// Per-node reassembly state keyed by (sender, tag), at most
/// [`PARTIALS_PER_SENDER`] partial datagrams per sender.
#[derive(Debug)]
pub struct Reassembler<H> {
    timeout_us: u64,
    partials: Vec<Partial<H>>,
    expired: u64,
    evicted: u64,
}

impl<H> Reassembler<H> {
    pub fn new(timeout_us: u64) -> Self {
        Reassembler {
            timeout_us,
            partials: Vec::new(),
            expired: 0,
            evicted: 0,
        }
    }

    /// Partial datagrams discarded at their deadline.
    pub fn expired(&self) -> u64 {
        self.expired
    }

    /// Partial datagrams dropped to make room for a newer one from the
    /// same sender.
    pub fn evicted(&self) -> u64 {
        self.evicted
    }

    pub fn in_progress(&self) -> usize {
        self.partials.len()
    }

    /// Drops partial datagrams whose deadline passed; returns how many.
    pub fn expire(&mut self, now: SimTime) -> usize {
        let before = self.partials.len();
        self.partials.retain(|p| p.deadline > now);
        let n = before - self.partials.len();
        self.expired += n as u64;
        n
    }

    pub fn reassemble(&mut self, now: SimTime, src: NodeId, frag: Fragment<H>) -> Reassembly<H> {
        self.expire(now);
        if !frag.fragmented {
            let header = frag.header.expect("unfragmented frame carries its header");
            return Reassembly::Complete(header, frag.data);
        }
        let idx = match self.partials.iter().position(|p| p.src == src && p.tag == frag.tag) {
            Some(i) => i,
            None => {
                if self.partials.iter().filter(|p| p.src == src).count() >= PARTIALS_PER_SENDER {
                    let oldest = (0..self.partials.len())
                        .filter(|&i| self.partials[i].src == src)
                        .min_by_key(|&i| self.partials[i].deadline)
                        .expect("sender has partials");
                    self.partials.remove(oldest);
                    self.evicted += 1;
                }
                let size = frag.datagram_size as usize;
                self.partials.push(Partial {
                    src,
                    tag: frag.tag,
                    buf: vec![0; size],
                    have: vec![false; size],
                    filled: 0,
                    header: None,
                    deadline: now + self.timeout_us,
                });
                self.partials.len() - 1
            }
        };
        let p = &mut self.partials[idx];
        let off = frag.offset as usize;
        let end = (off + frag.data.len()).min(p.buf.len());
        for i in off..end {
            if !p.have[i] {
                p.have[i] = true;
                p.filled += 1;
            }
            p.buf[i] = frag.data[i - off];
        }
        if frag.header.is_some() && p.header.is_none() {
            p.header = frag.header;
        }
        if p.filled == p.buf.len() && p.header.is_some() {
            let p = self.partials.remove(idx);
            Reassembly::Complete(p.header.expect("checked"), p.buf)
        } else {
            Reassembly::Pending
        }
    }
}
