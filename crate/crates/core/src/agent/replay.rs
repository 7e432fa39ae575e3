use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::AgentError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    /// Normalized action in `[0,1]²`.
    pub action: [f64; 2],
    /// €, after reward scaling.
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

impl Transition {
    pub fn validate(&self) -> Result<(), AgentError> {
        let finite = self.state.iter().chain(&self.next_state).chain(&self.action).all(|v| v.is_finite())
            && self.reward.is_finite();
        if !finite {
            return Err(AgentError::NonFinite);
        }
        if self.action.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(AgentError::ActionRange);
        }
        if self.state.len() != self.next_state.len() {
            return Err(AgentError::Dimension { expected: self.state.len(), found: self.next_state.len() });
        }
        Ok(())
    }
}

/// Ring buffer; once full, each push overwrites the oldest entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    cursor: usize,
    items: Vec<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self, AgentError> {
        if capacity == 0 {
            return Err(AgentError::Hyperparams("replay capacity must be positive"));
        }
        Ok(Self { capacity, cursor: 0, items: Vec::new() })
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

    /// Slot the next push writes to.
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    pub fn push(&mut self, t: Transition) -> Result<(), AgentError> {
        t.validate()?;
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    /// Slot indices of a uniform sample of `n` distinct entries.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>, AgentError> {
        if n > self.items.len() {
            return Err(AgentError::Underfilled { have: self.items.len(), need: n });
        }
        Ok(rand::seq::index::sample(rng, self.items.len(), n).into_vec())
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<&Transition>, AgentError> {
        Ok(self.sample_indices(n, rng)?.into_iter().map(|i| &self.items[i]).collect())
    }
}
