//! Per-agent experience replay: a bounded FIFO of transitions with uniform
//! seeded sampling (with replacement).

use std::collections::VecDeque;

use rand::Rng;
use thiserror::Error;

use super::qnet::Hidden;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("buffer holds {len} transitions, need at least {batch} to sample")]
    Underfilled { len: usize, batch: usize },
}

/// One decision-step experience. Besides the classic 5-tuple (stored hidden
/// state, observation, action, reward, next observation) it carries the
/// assembled multi-step target pieces and the teacher's action for the
/// demonstration loss.
#[derive(Debug, Clone)]
pub struct Transition {
    pub hidden: Hidden,
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub n_step_return: f64,
    /// Observation and stored hidden state at the bootstrap step; `None`
    /// when the window ran into the episode end.
    pub bootstrap: Option<(Vec<f64>, Hidden)>,
    pub bootstrap_discount: f64,
    pub teacher_action: Option<usize>,
}

#[derive(Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    data: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity,
            data: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.data.len() == self.capacity {
            self.data.pop_front();
        }
        self.data.push_back(t);
    }

    pub fn oldest(&self) -> Option<&Transition> {
        self.data.front()
    }

    /// Uniform sample with replacement.
    pub fn sample<R: Rng>(
        &self,
        batch: usize,
        rng: &mut R,
    ) -> Result<Vec<&Transition>, ReplayError> {
        if self.data.len() < batch {
            return Err(ReplayError::Underfilled {
                len: self.data.len(),
                batch,
            });
        }
        Ok((0..batch)
            .map(|_| &self.data[rng.gen_range(0..self.data.len())])
            .collect())
    }
}
