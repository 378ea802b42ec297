use super::BufferError;

/// Circular send buffer. Bytes stay where `sb_append` put them until they
/// are acknowledged; segments are built from [`TxView`]s that borrow the
/// storage directly.
#[derive(Clone, Debug)]
pub struct SendBuffer {
    store: Box<[u8]>,
    /// physical index of the oldest unacknowledged byte
    start: usize,
    /// bytes held (unacked + unsent)
    len: usize,
    /// stream offset of the byte at `start`
    una_off: u64,
}

/// Up to two borrowed ranges of the send buffer, in stream order.
#[derive(Clone, Copy, Debug)]
pub struct TxView<'a> {
    pub head: &'a [u8],
    pub tail: &'a [u8],
}

impl TxView<'_> {
    pub fn len(&self) -> usize {
        self.head.len() + self.tail.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of distinct storage ranges referenced (0, 1 or 2).
    pub fn ranges(&self) -> usize {
        (!self.head.is_empty()) as usize + (!self.tail.is_empty()) as usize
    }

    pub fn to_vec(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(self.head);
        v.extend_from_slice(self.tail);
        v
    }
}

impl SendBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "send buffer capacity must be positive");
        SendBuffer {
            store: vec![0; capacity].into_boxed_slice(),
            start: 0,
            len: 0,
            una_off: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.store.len()
    }

    /// Bytes stored (not yet acknowledged).
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn free(&self) -> usize {
        self.capacity() - self.len
    }

    /// Stream offset of the oldest stored byte.
    pub fn una_offset(&self) -> u64 {
        self.una_off
    }

    /// Stream offset one past the newest stored byte.
    pub fn end_offset(&self) -> u64 {
        self.una_off + self.len as u64
    }

    /// Copies in as much of `data` as fits and returns the count accepted.
    pub fn sb_append(&mut self, data: &[u8]) -> usize {
        let n = data.len().min(self.free());
        let cap = self.capacity();
        let mut pos = (self.start + self.len) % cap;
        let mut rest = &data[..n];
        while !rest.is_empty() {
            let run = rest.len().min(cap - pos);
            self.store[pos..pos + run].copy_from_slice(&rest[..run]);
            rest = &rest[run..];
            pos = (pos + run) % cap;
        }
        self.len += n;
        n
    }

    /// Borrows `len` stored bytes starting at stream offset `seq_offset`.
    ///
    /// # Panics
    /// If the range is not entirely inside the stored region.
    pub fn sb_transmit_view(&self, seq_offset: u64, len: usize) -> TxView<'_> {
        assert!(
            seq_offset >= self.una_off && seq_offset + len as u64 <= self.end_offset(),
            "transmit view [{}, {}) outside stored [{}, {})",
            seq_offset,
            seq_offset + len as u64,
            self.una_off,
            self.end_offset()
        );
        let cap = self.capacity();
        let rel = (seq_offset - self.una_off) as usize;
        let p = (self.start + rel) % cap;
        if p + len <= cap {
            TxView {
                head: &self.store[p..p + len],
                tail: &[],
            }
        } else {
            let first = cap - p;
            TxView {
                head: &self.store[p..],
                tail: &self.store[..len - first],
            }
        }
    }

    /// Frees everything before stream offset `new_una`.
    pub fn sb_release_acked(&mut self, new_una: u64) -> Result<usize, BufferError> {
        if new_una < self.una_off {
            return Err(BufferError::Regression {
                new: new_una,
                una: self.una_off,
            });
        }
        if new_una > self.end_offset() {
            return Err(BufferError::BeyondData {
                new: new_una,
                end: self.end_offset(),
            });
        }
        let freed = (new_una - self.una_off) as usize;
        self.start = (self.start + freed) % self.capacity();
        self.len -= freed;
        self.una_off = new_una;
        Ok(freed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn append_caps_at_capacity() {
        let mut sb = SendBuffer::new(1848);
        assert_eq!(sb.sb_append(&[7u8; 2000]), 1848);
        assert_eq!(sb.sb_append(&[1]), 0);
        assert_eq!(sb.sb_release_acked(462), Ok(462));
        assert_eq!(sb.free(), 462);
        assert_eq!(sb.sb_release_acked(462), Ok(0));
    }

    #[test]
    fn view_spans_wrap() {
        let mut sb = SendBuffer::new(10);
        sb.sb_append(b"abcdefgh");
        sb.sb_release_acked(6).unwrap();
        sb.sb_append(b"ijklmn");
        let v = sb.sb_transmit_view(6, 8);
        assert_eq!(v.ranges(), 2);
        assert_eq!(v.to_vec(), b"ghijklmn");
        let v = sb.sb_transmit_view(6, 3);
        assert_eq!(v.ranges(), 1);
    }

    #[test]
    fn view_unchanged_by_partial_ack() {
        let mut sb = SendBuffer::new(16);
        sb.sb_append(b"0123456789");
        let before = sb.sb_transmit_view(4, 6).to_vec();
        let ptr = sb.sb_transmit_view(4, 6).head.as_ptr();
        sb.sb_release_acked(3).unwrap();
        assert_eq!(sb.sb_transmit_view(4, 6).to_vec(), before);
        assert_eq!(sb.sb_transmit_view(4, 6).head.as_ptr(), ptr);
    }

    #[test]
    fn regression_rejected() {
        let mut sb = SendBuffer::new(16);
        sb.sb_append(b"0123456789");
        sb.sb_release_acked(5).unwrap();
        assert_eq!(
            sb.sb_release_acked(4),
            Err(BufferError::Regression { new: 4, una: 5 })
        );
        assert_eq!(
            sb.sb_release_acked(11),
            Err(BufferError::BeyondData { new: 11, end: 10 })
        );
    }

    #[test]
    #[should_panic(expected = "outside stored")]
    fn view_out_of_range_panics() {
        let mut sb = SendBuffer::new(8);
        sb.sb_append(b"abc");
        sb.sb_transmit_view(1, 3);
    }
}
