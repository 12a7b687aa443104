use std::collections::HashMap;
use std::sync::Arc;

use super::{Delivery, SensorReading};
use crate::spatial::ProducerId;

/// Sequence numbers tracked behind each producer's high-watermark.
pub const DEDUP_WINDOW: u64 = 1024;

/// Anything carrying a `(producer, seq)` tag.
pub trait Tagged {
    fn producer(&self) -> &ProducerId;
    fn seq(&self) -> u64;
}

impl Tagged for SensorReading {
    fn producer(&self) -> &ProducerId {
        &self.producer
    }
    fn seq(&self) -> u64 {
        self.seq
    }
}

impl<T: Tagged> Tagged for Arc<T> {
    fn producer(&self) -> &ProducerId {
        (**self).producer()
    }
    fn seq(&self) -> u64 {
        (**self).seq()
    }
}

impl Tagged for Delivery {
    fn producer(&self) -> &ProducerId {
        &self.reading.producer
    }
    fn seq(&self) -> u64 {
        self.reading.seq
    }
}

/// Bitmap over the window `(high - DEDUP_WINDOW, high]`, indexed by
/// `seq % DEDUP_WINDOW`.
struct Watermark {
    high: u64,
    seen: [u64; (DEDUP_WINDOW / 64) as usize],
}

impl Watermark {
    fn new(seq: u64) -> Self {
        let mut w = Watermark { high: seq, seen: [0; (DEDUP_WINDOW / 64) as usize] };
        w.set(seq);
        w
    }

    fn slot(seq: u64) -> (usize, u64) {
        let i = seq % DEDUP_WINDOW;
        ((i / 64) as usize, 1 << (i % 64))
    }

    fn get(&self, seq: u64) -> bool {
        let (w, bit) = Self::slot(seq);
        self.seen[w] & bit != 0
    }

    fn set(&mut self, seq: u64) {
        let (w, bit) = Self::slot(seq);
        self.seen[w] |= bit;
    }

    fn clear(&mut self, seq: u64) {
        let (w, bit) = Self::slot(seq);
        self.seen[w] &= !bit;
    }

    fn advance(&mut self, to: u64) {
        if to - self.high >= DEDUP_WINDOW {
            self.seen = [0; (DEDUP_WINDOW / 64) as usize];
        } else {
            for s in self.high + 1..=to {
                self.clear(s);
            }
        }
        self.high = to;
    }
}

/// Passes each `(producer, seq)` through at most once.
///
/// Per producer it keeps the highest sequence seen and a window of the
/// [`DEDUP_WINDOW`] sequences below it. Anything older than the window is
/// dropped and counted in [`DedupFilter::stragglers`].
#[derive(Default)]
pub struct DedupFilter {
    producers: HashMap<ProducerId, Watermark>,
    duplicates: u64,
    stragglers: u64,
}

impl DedupFilter {
    pub fn new() -> Self {
        Self::default()
    }

    /// True the first time a tag is seen.
    pub fn accept(&mut self, producer: &ProducerId, seq: u64) -> bool {
        let Some(w) = self.producers.get_mut(producer) else {
            self.producers.insert(producer.clone(), Watermark::new(seq));
            return true;
        };
        if seq > w.high {
            w.advance(seq);
            w.set(seq);
            return true;
        }
        if w.high - seq >= DEDUP_WINDOW {
            self.stragglers += 1;
            return false;
        }
        if w.get(seq) {
            self.duplicates += 1;
            return false;
        }
        w.set(seq);
        true
    }

    pub fn accept_item<T: Tagged>(&mut self, item: &T) -> bool {
        self.accept(item.producer(), item.seq())
    }

    /// Lazily filters a stream, preserving first-arrival order.
    pub fn filter<'a, I>(&'a mut self, stream: I) -> impl Iterator<Item = I::Item> + 'a
    where
        I: IntoIterator,
        I::Item: Tagged,
        I::IntoIter: 'a,
    {
        stream.into_iter().filter(move |item| self.accept_item(item))
    }

    pub fn duplicates(&self) -> u64 {
        self.duplicates
    }

    /// Items dropped for being older than the window.
    pub fn stragglers(&self) -> u64 {
        self.stragglers
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn run(input: &[(&str, u64)]) -> Vec<(String, u64)> {
        let mut f = DedupFilter::new();
        input
            .iter()
            .filter(|(p, s)| f.accept(&ProducerId::new(*p).unwrap(), *s))
            .map(|(p, s)| (p.to_string(), *s))
            .collect()
    }

    fn seqs(input: &[u64]) -> Vec<u64> {
        let tagged: Vec<_> = input.iter().map(|&s| ("a", s)).collect();
        run(&tagged).into_iter().map(|(_, s)| s).collect()
    }

    #[test]
    fn duplicates_collapse() {
        assert_eq!(seqs(&[0, 1, 1, 2]), vec![0, 1, 2]);
    }

    #[test]
    fn producers_are_independent() {
        let input = [("A", 0), ("B", 0), ("A", 1)];
        assert_eq!(run(&input), input.map(|(p, s)| (p.to_string(), s)).to_vec());
    }

    #[test]
    fn out_of_order_within_window() {
        // 0 new; 2 raises the watermark; 1 is inside the window and unseen; 2 repeats.
        assert_eq!(seqs(&[0, 2, 1, 2]), vec![0, 2, 1]);
    }

    #[test]
    fn stragglers_beyond_window_are_counted() {
        let mut f = DedupFilter::new();
        let p = ProducerId::new("a").unwrap();
        assert!(f.accept(&p, 0));
        assert!(f.accept(&p, 2000));
        assert!(!f.accept(&p, 5));
        assert!(f.accept(&p, 2000 - 1023));
        assert!(!f.accept(&p, 2000 - 1024));
        assert_eq!(f.stragglers(), 2);
    }

    #[test]
    fn window_slots_are_reused_after_advance() {
        let mut f = DedupFilter::new();
        let p = ProducerId::new("a").unwrap();
        assert!(f.accept(&p, 1));
        // 1025 shares a slot with 1; the slot must read as unseen.
        assert!(f.accept(&p, 1025));
        assert!(f.accept(&p, 1024));
        assert!(!f.accept(&p, 1025));
    }

    proptest! {
        #[test]
        fn matches_set_oracle_within_window(input in prop::collection::vec((0u8..3, 0u64..200), 0..300)) {
            let mut f = DedupFilter::new();
            let mut seen = HashSet::new();
            for (p, s) in input {
                let id = ProducerId::new(format!("p{p}")).unwrap();
                // seqs span < DEDUP_WINDOW, so the oracle is a plain set.
                prop_assert_eq!(f.accept(&id, s), seen.insert((p, s)));
            }
        }
    }
}
