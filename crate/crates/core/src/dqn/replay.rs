use std::sync::Arc;

use rand::seq::index;
use rand::Rng;

use crate::tensor::{Result, Tensor, TensorError};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Arc<Tensor>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Arc<Tensor>,
    pub done: bool,
}

/// Fixed-capacity ring buffer; the oldest transition is evicted first.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    capacity: usize,
    items: Vec<Transition>,
    cursor: usize,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity),
            cursor: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Transitions from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.cursor };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// `n` distinct transitions drawn uniformly.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Transition> {
        index::sample(rng, self.items.len(), n)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }

    /// Container entries in storage order, with the cursor, so that sampling
    /// after a reload draws exactly what it would have drawn before.
    pub fn entries(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        let mut meta = Vec::with_capacity(self.items.len() * 3);
        for (i, t) in self.items.iter().enumerate() {
            out.push((format!("{prefix}obs/{i}"), (*t.obs).clone()));
            out.push((format!("{prefix}next/{i}"), (*t.next_obs).clone()));
            meta.extend([t.action as f64, t.reward, if t.done { 1.0 } else { 0.0 }]);
        }
        out.push((format!("{prefix}len"), Tensor::scalar(self.items.len() as f64)));
        out.push((format!("{prefix}cursor"), Tensor::scalar(self.cursor as f64)));
        if !meta.is_empty() {
            out.push((
                format!("{prefix}meta"),
                Tensor::new(vec![self.items.len(), 3], meta).expect("meta is well formed"),
            ));
        }
        out
    }

    pub fn load_entries(&mut self, prefix: &str, entries: &[(String, Tensor)]) -> Result<()> {
        let find = |key: String| {
            entries
                .iter()
                .find(|(n, _)| *n == key)
                .map(|(_, t)| t)
                .ok_or_else(|| TensorError::Io(format!("missing entry {key}")))
        };
        let len = find(format!("{prefix}len"))?.data()[0] as usize;
        if len > self.capacity {
            return Err(TensorError::Io(format!(
                "replay of {len} exceeds capacity {}",
                self.capacity
            )));
        }
        self.items.clear();
        self.cursor = 0;
        if len == 0 {
            return Ok(());
        }
        let meta = find(format!("{prefix}meta"))?.data().to_vec();
        for i in 0..len {
            self.items.push(Transition {
                obs: Arc::new(find(format!("{prefix}obs/{i}"))?.clone()),
                next_obs: Arc::new(find(format!("{prefix}next/{i}"))?.clone()),
                action: meta[3 * i] as usize,
                reward: meta[3 * i + 1],
                done: meta[3 * i + 2] != 0.0,
            });
        }
        self.cursor = find(format!("{prefix}cursor"))?.data()[0] as usize % self.capacity;
        Ok(())
    }
}
