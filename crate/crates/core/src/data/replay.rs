//! Episodic memory of past-task examples.

use super::Dataset;
use crate::error::{ensure, Result};
use crate::linalg::Matrix;
use crate::model::Batch;
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayItem {
    pub image: Vec<f64>,
    pub label: usize,
    pub task_id: usize,
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<ReplayItem>,
    seen: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            seen: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[ReplayItem] {
        &self.items
    }

    /// Examples offered through `reservoir_update` so far.
    pub fn stream_count(&self) -> u64 {
        self.seen
    }

    /// Stores `item` directly; fails when the buffer is full.
    pub fn push(&mut self, item: ReplayItem) -> Result<()> {
        ensure!(self.items.len() < self.capacity, "replay buffer full ({} slots)", self.capacity);
        self.items.push(item);
        Ok(())
    }

    /// Reservoir sampling: keeps every example until full, then the i-th
    /// example replaces a uniform slot with probability capacity / i.
    pub fn reservoir_update(&mut self, item: ReplayItem, rng: &mut Rng) {
        self.seen += 1;
        if self.items.len() < self.capacity {
            self.items.push(item);
            return;
        }
        let j = rng.below(self.seen as usize);
        if j < self.capacity {
            self.items[j] = item;
        }
    }

    /// `min(k, len)` distinct stored examples drawn uniformly; `None` when empty.
    pub fn sample_batch(&self, k: usize, rng: &mut Rng) -> Option<Batch> {
        if self.items.is_empty() || k == 0 {
            return None;
        }
        let idx = rng.sample_indices(self.items.len(), k);
        Some(self.batch_of(&idx))
    }

    /// Every stored example, in slot order.
    pub fn as_batch(&self) -> Option<Batch> {
        if self.items.is_empty() {
            return None;
        }
        Some(self.batch_of(&(0..self.items.len()).collect::<Vec<_>>()))
    }

    fn batch_of(&self, idx: &[usize]) -> Batch {
        let w = self.items[0].image.len();
        let mut data = Vec::with_capacity(idx.len() * w);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            data.extend_from_slice(&self.items[i].image);
            labels.push(self.items[i].label);
        }
        Batch::new(Matrix::new(idx.len(), w, data).expect("uniform widths"), labels).expect("non-empty")
    }
}

#[derive(Clone, Debug)]
pub struct PerClassSample {
    pub items: Vec<ReplayItem>,
    /// Classes that had fewer than the requested number of examples.
    pub shortages: Vec<usize>,
}

/// `per_class` uniformly drawn examples of every class, ordered by class.
pub fn per_class_sample(task_train: &Dataset, per_class: usize, task_id: usize, rng: &mut Rng) -> Result<PerClassSample> {
    ensure!(per_class >= 1, "per_class must be at least 1");
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); task_train.num_classes()];
    for (i, &l) in task_train.labels().iter().enumerate() {
        by_class[l].push(i);
    }
    let mut items = Vec::new();
    let mut shortages = Vec::new();
    for (class, members) in by_class.iter().enumerate() {
        if members.len() < per_class {
            shortages.push(class);
        }
        for j in rng.sample_indices(members.len(), per_class) {
            let i = members[j];
            items.push(ReplayItem {
                image: task_train.image(i),
                label: class,
                task_id,
            });
        }
    }
    Ok(PerClassSample { items, shortages })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;

    fn item(k: usize) -> ReplayItem {
        ReplayItem {
            image: vec![k as f64],
            label: k % 3,
            task_id: 1,
        }
    }

    #[test]
    fn large_capacity_keeps_everything() {
        let mut buf = ReplayBuffer::new(50);
        let mut rng = Rng::new(0);
        for k in 0..30 {
            buf.reservoir_update(item(k), &mut rng);
        }
        assert_eq!(buf.len(), 30);
        assert!(buf.items().iter().enumerate().all(|(k, it)| it.image[0] == k as f64));
        assert!(ReplayBuffer::new(5).sample_batch(3, &mut rng).is_none());
        assert!(ReplayBuffer::new(5).as_batch().is_none());
    }

    #[test]
    fn reservoir_retention_is_uniform() {
        let n = 8;
        let trials = 100_000;
        let mut counts = vec![0usize; n];
        let mut rng = Rng::new(1);
        for _ in 0..trials {
            let mut buf = ReplayBuffer::new(1);
            for k in 0..n {
                buf.reservoir_update(item(k), &mut rng);
            }
            counts[buf.items()[0].image[0] as usize] += 1;
        }
        let p = 1.0 / n as f64;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - trials as f64 * p).abs() < 3.0 * sigma, "{c}");
        }
    }

    #[test]
    fn never_exceeds_capacity() {
        let mut buf = ReplayBuffer::new(4);
        let mut rng = Rng::new(2);
        for k in 0..100 {
            buf.reservoir_update(item(k), &mut rng);
            assert!(buf.len() <= 4);
        }
        assert_eq!(buf.stream_count(), 100);
        assert_eq!(buf.sample_batch(10, &mut rng).unwrap().len(), 4);
        let mut full = ReplayBuffer::new(1);
        full.push(item(0)).unwrap();
        assert!(full.push(item(1)).is_err());
    }

    fn labelled(labels: Vec<usize>) -> Dataset {
        let n = labels.len();
        let m = Matrix::new(n, 2, (0..2 * n).map(|x| x as f64 / (2 * n) as f64).collect()).unwrap();
        Dataset::from_matrix("d", Split::Train, m, labels, 10).unwrap()
    }

    #[test]
    fn one_per_class() {
        let ds = labelled((0..100).map(|i| i % 10).collect());
        let s = per_class_sample(&ds, 1, 4, &mut Rng::new(3)).unwrap();
        assert_eq!(s.items.len(), 10);
        assert!(s.shortages.is_empty());
        assert!(s.items.iter().enumerate().all(|(c, it)| it.label == c && it.task_id == 4));
        let again = per_class_sample(&ds, 1, 4, &mut Rng::new(3)).unwrap();
        assert_eq!(s.items, again.items);
    }

    #[test]
    fn missing_class_is_flagged() {
        let ds = labelled((0..100).map(|i| i % 10).filter(|&c| c != 3).collect());
        let s = per_class_sample(&ds, 1, 1, &mut Rng::new(3)).unwrap();
        assert_eq!(s.items.len(), 9);
        assert_eq!(s.shortages, vec![3]);
        assert!(per_class_sample(&ds, 0, 1, &mut Rng::new(3)).is_err());
    }
}
