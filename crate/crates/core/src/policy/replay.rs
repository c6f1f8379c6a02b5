use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;

use super::state::CompactState;
use crate::error::{Error, Result};
use crate::vehicle::Action;

pub const DEFAULT_REPLAY_CAPACITY: usize = 100_000;

/// States are reference-counted so consecutive transitions of one agent share
/// the state between them.
#[derive(Clone, Debug)]
pub struct Transition {
    pub state: Arc<CompactState>,
    pub action: Action,
    pub reward: f32,
    pub next_state: Arc<CompactState>,
    pub terminal: bool,
}

/// Fixed-capacity FIFO of transitions with uniform sampling.
#[derive(Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
    pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("replay capacity must be positive"));
        }
        Ok(Self { capacity, items: VecDeque::with_capacity(capacity.min(1 << 16)), pushed: 0 })
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

    /// Total pushes since creation, including evicted ones.
    pub fn pushed(&self) -> u64 {
        self.pushed
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        self.pushed += 1;
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// `batch` indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.items.len() < batch || batch == 0 {
            return Err(Error::invalid(format!("cannot sample {batch} from {} transitions", self.items.len())));
        }
        Ok((0..batch).map(|_| rng.random_range(0..self.items.len())).collect())
    }
}
