//! Single-producer single-consumer overwrite ring for samples.
//!
//! The producer never blocks: it writes slot `head & mask` and advances
//! `head`, overwriting whatever was there. The consumer owns `tail`. Each
//! slot is a seqlock over plain atomic words, so a slot overwritten while
//! being read is detected and counted as lost instead of returned torn.
//!
//! Losses are counted only on the consumer side, so after the final drain
//! `drained + lost == pushed` holds exactly.

use std::sync::atomic::{fence, AtomicU64, Ordering};

use super::log::Sample;
use crate::domain::{DomainId, DomainMap};

const WORDS: usize = 7;

struct Slot {
    /// `2*i + 1` while index `i` is being written, `2*i + 2` once complete.
    seq: AtomicU64,
    words: [AtomicU64; WORDS],
}

impl Slot {
    fn new() -> Self {
        Slot { seq: AtomicU64::new(0), words: std::array::from_fn(|_| AtomicU64::new(0)) }
    }
}

fn encode(s: &Sample) -> [u64; WORDS] {
    let mut w = [0u64; WORDS];
    w[0] = s.t1_ns;
    w[1] = s.t2_ns;
    let mut mask = 0u64;
    for d in DomainId::ALL {
        if let Some(&v) = s.raw.get(d) {
            w[2 + d.index()] = v;
            mask |= 1 << d.index();
        }
    }
    w[6] = mask;
    w
}

fn decode(w: &[u64; WORDS]) -> Sample {
    let mut raw = DomainMap::new();
    for d in DomainId::ALL {
        if w[6] & (1 << d.index()) != 0 {
            raw.insert(d, w[2 + d.index()]);
        }
    }
    Sample { t1_ns: w[0], t2_ns: w[1], raw }
}

/// Index of monotone counter `i` in a ring of power-of-two `capacity`.
#[inline]
pub fn slot_index(i: u64, capacity: usize) -> usize {
    (i & (capacity as u64 - 1)) as usize
}

pub struct SampleRing {
    slots: Box<[Slot]>,
    capacity: usize,
    head: AtomicU64,
    tail: AtomicU64,
    lost: AtomicU64,
}

impl SampleRing {
    /// # Panics
    /// If `capacity` is not a power of two.
    pub fn new(capacity: usize) -> Self {
        assert!(capacity.is_power_of_two(), "ring capacity must be a power of two");
        SampleRing {
            slots: (0..capacity).map(|_| Slot::new()).collect(),
            capacity,
            head: AtomicU64::new(0),
            tail: AtomicU64::new(0),
            lost: AtomicU64::new(0),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Samples pushed so far.
    pub fn pushed(&self) -> u64 {
        self.head.load(Ordering::Acquire)
    }

    /// Samples the consumer found overwritten.
    pub fn lost(&self) -> u64 {
        self.lost.load(Ordering::Acquire)
    }

    /// Producer side. Must only be called from one thread.
    pub fn push(&self, sample: &Sample) {
        let i = self.head.load(Ordering::Relaxed);
        let slot = &self.slots[slot_index(i, self.capacity)];
        slot.seq.store(2 * i + 1, Ordering::Relaxed);
        fence(Ordering::Release);
        for (w, v) in slot.words.iter().zip(encode(sample)) {
            w.store(v, Ordering::Relaxed);
        }
        slot.seq.store(2 * i + 2, Ordering::Release);
        self.head.store(i + 1, Ordering::Release);
    }

    /// Consumer side. Appends every sample still present since the last
    /// drain to `out` and returns how many were lost to overwrites.
    pub fn drain_into(&self, out: &mut Vec<Sample>) -> u64 {
        let head = self.head.load(Ordering::Acquire);
        let mut tail = self.tail.load(Ordering::Relaxed);
        let mut lost = 0;
        if head - tail > self.capacity as u64 {
            lost += head - tail - self.capacity as u64;
            tail = head - self.capacity as u64;
        }
        for i in tail..head {
            let slot = &self.slots[slot_index(i, self.capacity)];
            let before = slot.seq.load(Ordering::Acquire);
            if before != 2 * i + 2 {
                lost += 1;
                continue;
            }
            let words: [u64; WORDS] = std::array::from_fn(|k| slot.words[k].load(Ordering::Relaxed));
            fence(Ordering::Acquire);
            if slot.seq.load(Ordering::Relaxed) != before {
                lost += 1;
                continue;
            }
            out.push(decode(&words));
        }
        self.tail.store(head, Ordering::Release);
        self.lost.fetch_add(lost, Ordering::AcqRel);
        lost
    }
}
