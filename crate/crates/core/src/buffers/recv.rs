/// Flat circular receive buffer with an in-place reassembly queue.
///
/// In-sequence bytes occupy `[head, head + readable)`. Out-of-order bytes
/// are written at the position they will have once the gap fills, and a
/// bitmap (one bit per storage byte) records which of those positions hold
/// data.
#[derive(Clone, Debug)]
pub struct RecvBuffer {
    store: Box<[u8]>,
    bitmap: Vec<u64>,
    head: usize,
    readable: usize,
    ooo: usize,
    truncated: u64,
}

impl RecvBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "receive buffer capacity must be positive");
        RecvBuffer {
            store: vec![0; capacity].into_boxed_slice(),
            bitmap: vec![0; capacity.div_ceil(64)],
            head: 0,
            readable: 0,
            ooo: 0,
            truncated: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.store.len()
    }

    /// In-sequence bytes waiting to be read.
    pub fn readable(&self) -> usize {
        self.readable
    }

    /// Out-of-order bytes held past the first gap.
    pub fn out_of_order(&self) -> usize {
        self.ooo
    }

    /// Bytes dropped because they fell past the buffer end.
    pub fn truncated(&self) -> u64 {
        self.truncated
    }

    /// Space not occupied by buffered data. Together with `readable` and
    /// `out_of_order` it always sums to the capacity.
    pub fn advertised_window(&self) -> usize {
        self.capacity() - self.readable - self.ooo
    }

    fn bit(&self, phys: usize) -> bool {
        self.bitmap[phys / 64] >> (phys % 64) & 1 == 1
    }

    fn set_bit(&mut self, phys: usize) {
        self.bitmap[phys / 64] |= 1 << (phys % 64);
    }

    fn clear_bit(&mut self, phys: usize) {
        self.bitmap[phys / 64] &= !(1 << (phys % 64));
    }

    /// Places `data` at `rel_offset` bytes past the read head and returns
    /// how many bytes became readable as a result.
    pub fn rb_insert(&mut self, rel_offset: usize, data: &[u8]) -> usize {
        let cap = self.capacity();
        let end = rel_offset.saturating_add(data.len());
        if end > cap {
            self.truncated += (end - cap.max(rel_offset)) as u64;
        }
        let lo = rel_offset.max(self.readable);
        let hi = end.min(cap);
        for rel in lo..hi {
            let phys = (self.head + rel) % cap;
            if !self.bit(phys) {
                self.set_bit(phys);
                self.ooo += 1;
            }
            self.store[phys] = data[rel - rel_offset];
        }
        let before = self.readable;
        while self.readable < cap {
            let phys = (self.head + self.readable) % cap;
            if !self.bit(phys) {
                break;
            }
            self.clear_bit(phys);
            self.readable += 1;
            self.ooo -= 1;
        }
        self.readable - before
    }

    /// Reads up to `n` in-sequence bytes, freeing their space.
    pub fn rb_read(&mut self, n: usize) -> Vec<u8> {
        let n = n.min(self.readable);
        let cap = self.capacity();
        let mut out = Vec::with_capacity(n);
        let first = n.min(cap - self.head);
        out.extend_from_slice(&self.store[self.head..self.head + first]);
        out.extend_from_slice(&self.store[..n - first]);
        self.head = (self.head + n) % cap;
        self.readable -= n;
        out
    }

    /// Out-of-order runs as `(rel_start, rel_end)` relative to the end of the
    /// in-sequence data, lowest first.
    pub fn ooo_blocks(&self) -> Vec<(usize, usize)> {
        let cap = self.capacity();
        let mut blocks = Vec::new();
        if self.ooo == 0 {
            return blocks;
        }
        let mut run: Option<usize> = None;
        let mut seen = 0;
        for rel in self.readable..cap {
            let present = self.bit((self.head + rel) % cap);
            match (present, run) {
                (true, None) => run = Some(rel),
                (false, Some(s)) => {
                    blocks.push((s - self.readable, rel - self.readable));
                    run = None;
                    if seen == self.ooo {
                        break;
                    }
                }
                _ => {}
            }
            if present {
                seen += 1;
            }
        }
        if let Some(s) = run {
            blocks.push((s - self.readable, cap - self.readable));
        }
        blocks
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(n: usize) -> Vec<u8> {
        (0..n).map(|i| (i * 31 % 251) as u8).collect()
    }

    #[test]
    fn in_order_insert() {
        let mut rb = RecvBuffer::new(1848);
        assert_eq!(rb.rb_insert(0, &pattern(400)), 400);
        assert_eq!(rb.advertised_window(), 1448);
    }

    #[test]
    fn gap_then_fill() {
        let mut rb = RecvBuffer::new(1848);
        let d = pattern(600);
        assert_eq!(rb.rb_insert(400, &d[400..]), 0);
        assert_eq!(rb.out_of_order(), 200);
        assert_eq!(rb.ooo_blocks(), vec![(400, 600)]);
        assert_eq!(rb.rb_insert(0, &d[..400]), 600);
        assert_eq!(rb.out_of_order(), 0);
        assert_eq!(rb.rb_read(600), d);
    }

    #[test]
    fn duplicate_is_noop() {
        let mut rb = RecvBuffer::new(64);
        rb.rb_insert(0, b"hello");
        assert_eq!(rb.rb_insert(0, b"hello"), 0);
        assert_eq!(rb.readable(), 5);
        assert_eq!(rb.rb_read(5), b"hello");
    }

    #[test]
    fn read_zero_changes_nothing() {
        let mut rb = RecvBuffer::new(64);
        rb.rb_insert(0, b"abc");
        let w = rb.advertised_window();
        assert!(rb.rb_read(0).is_empty());
        assert_eq!(rb.advertised_window(), w);
    }

    #[test]
    fn read_all_leaves_only_ooo() {
        let mut rb = RecvBuffer::new(100);
        rb.rb_insert(0, &[1; 10]);
        rb.rb_insert(20, &[2; 5]);
        rb.rb_read(10);
        assert_eq!(rb.advertised_window(), 95);
        assert_eq!(rb.ooo_blocks(), vec![(10, 15)]);
    }

    #[test]
    fn truncates_past_capacity() {
        let mut rb = RecvBuffer::new(8);
        assert_eq!(rb.rb_insert(4, &[9; 10]), 0);
        assert_eq!(rb.out_of_order(), 4);
        assert_eq!(rb.truncated(), 6);
    }

    #[test]
    fn wraps_around() {
        let mut rb = RecvBuffer::new(8);
        rb.rb_insert(0, b"abcdef");
        assert_eq!(rb.rb_read(6), b"abcdef");
        assert_eq!(rb.rb_insert(3, b"jkl"), 0);
        assert_eq!(rb.rb_insert(0, b"ghi"), 6);
        assert_eq!(rb.rb_read(6), b"ghijkl");
    }
}
