//! Shared test oracles.
#![allow(dead_code)]

use llnsim::buffers::RecvBuffer;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Naive receive-side model: a sorted, merged list of byte intervals in
/// absolute stream offsets, each carrying its bytes.
#[derive(Debug)]
pub struct IntervalOracle {
    cap: u64,
    read: u64,
    runs: Vec<(u64, Vec<u8>)>,
}

impl IntervalOracle {
    pub fn new(cap: usize) -> Self {
        IntervalOracle {
            cap: cap as u64,
            read: 0,
            runs: Vec::new(),
        }
    }

    pub fn read_offset(&self) -> u64 {
        self.read
    }

    pub fn readable(&self) -> usize {
        match self.runs.first() {
            Some((s, d)) if *s <= self.read => (s + d.len() as u64 - self.read) as usize,
            _ => 0,
        }
    }

    pub fn out_of_order(&self) -> usize {
        let total: usize = self.runs.iter().map(|(_, d)| d.len()).sum();
        total - self.readable()
    }

    /// Stores the part of `data` at `abs` that falls inside the window.
    pub fn insert(&mut self, abs: u64, data: &[u8]) {
        let lo = abs.max(self.read);
        let hi = (abs + data.len() as u64).min(self.read + self.cap);
        if lo >= hi {
            return;
        }
        let piece = data[(lo - abs) as usize..(hi - abs) as usize].to_vec();
        self.runs.push((lo, piece));
        self.runs.sort_by_key(|r| r.0);
        let mut merged: Vec<(u64, Vec<u8>)> = Vec::new();
        for (s, d) in self.runs.drain(..) {
            match merged.last_mut() {
                Some((ms, md)) if s <= *ms + md.len() as u64 => {
                    let end = s + d.len() as u64;
                    let mend = *ms + md.len() as u64;
                    if end > mend {
                        md.extend_from_slice(&d[(mend - s) as usize..]);
                    }
                }
                _ => merged.push((s, d)),
            }
        }
        self.runs = merged;
    }

    pub fn read(&mut self, n: usize) -> Vec<u8> {
        let n = n.min(self.readable());
        if n == 0 {
            return Vec::new();
        }
        let (s, d) = &mut self.runs[0];
        let out: Vec<u8> = d.drain(..n).collect();
        *s += n as u64;
        self.read += n as u64;
        if d.is_empty() {
            self.runs.remove(0);
        }
        out
    }
}

/// A random arrival pattern for a message: segments covering it plus
/// duplicates and overlaps, shuffled, with reads interleaved.
#[derive(Debug)]
pub struct Arrivals {
    pub capacity: usize,
    pub message: Vec<u8>,
    /// (absolute offset, length) in arrival order.
    pub segments: Vec<(u64, usize)>,
    /// Read size after each arrival.
    pub reads: Vec<usize>,
}

pub fn arrivals(seed: u64) -> Arrivals {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let capacity = rng.gen_range(1..=1200);
    let len = rng.gen_range(1..=3000);
    let message: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
    let mut segments = Vec::new();
    let mut off = 0;
    while off < len {
        let l = rng.gen_range(1..=200).min(len - off);
        segments.push((off as u64, l));
        off += l;
    }
    let extra = rng.gen_range(0..=segments.len());
    for _ in 0..extra {
        let s = rng.gen_range(0..len);
        let l = rng.gen_range(1..=300).min(len - s);
        segments.push((s as u64, l));
    }
    segments.shuffle(&mut rng);
    let reads = segments.iter().map(|_| if rng.gen_bool(0.5) { rng.gen_range(0..400) } else { 0 }).collect();
    Arrivals {
        capacity,
        message,
        segments,
        reads,
    }
}

/// Feeds `a` to a RecvBuffer and to the oracle, repeating the arrival
/// sequence until the whole message is read. Checks counters and the
/// window identity after every operation and returns both byte streams.
pub fn replay(a: &Arrivals) -> Result<(Vec<u8>, Vec<u8>), String> {
    let mut rb = RecvBuffer::new(a.capacity);
    let mut or = IntervalOracle::new(a.capacity);
    let (mut got, mut want) = (Vec::new(), Vec::new());
    let cap = a.capacity;
    let check = |rb: &RecvBuffer, or: &IntervalOracle, step: &str| -> Result<(), String> {
        if rb.readable() + rb.out_of_order() + rb.advertised_window() != cap {
            return Err(format!("window identity broken after {step}"));
        }
        if rb.readable() != or.readable() || rb.out_of_order() != or.out_of_order() {
            return Err(format!(
                "after {step}: buffer {}/{} oracle {}/{}",
                rb.readable(),
                rb.out_of_order(),
                or.readable(),
                or.out_of_order()
            ));
        }
        Ok(())
    };
    for pass in 0..4 * a.message.len() + 4 {
        for (&(abs, len), &r) in a.segments.iter().zip(&a.reads) {
            let data = &a.message[abs as usize..abs as usize + len];
            let base = or.read_offset();
            if abs + len as u64 > base {
                let lo = abs.max(base);
                let piece = &data[(lo - abs) as usize..];
                let before = or.readable();
                or.insert(lo, piece);
                let newly = rb.rb_insert((lo - base) as usize, piece);
                if newly != or.readable() - before {
                    return Err(format!("insert at {lo} made {newly} readable, oracle {}", or.readable() - before));
                }
                check(&rb, &or, "insert")?;
            }
            // the last pass drains so every pass makes progress
            let n = if pass > 0 { usize::MAX } else { r };
            got.extend(rb.rb_read(n));
            want.extend(or.read(n));
            check(&rb, &or, "read")?;
        }
        if want.len() == a.message.len() {
            break;
        }
    }
    Ok((got, want))
}
