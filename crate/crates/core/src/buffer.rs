//! Fixed-capacity FIFO replay buffer with uniform sampling.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::types::{ActionVector, CoreError, FieldSchema, StateVector, Transition};

/// Dense mini-batch view used by the learners. Rows are transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub len: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub states: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<f64>,
    pub eval_flags: Vec<u8>,
    pub terminals: Vec<bool>,
}

impl Batch {
    pub fn from_transitions(ts: &[Transition]) -> Self {
        let state_dim = ts.first().map_or(0, |t| t.state.values().len());
        let action_dim = ts.first().map_or(0, |t| t.action.values().len());
        let mut b = Batch::with_capacity(ts.len(), state_dim, action_dim);
        for t in ts {
            b.states.extend_from_slice(t.state.values());
            b.actions.extend_from_slice(t.action.values());
            b.rewards.push(t.reward);
            b.next_states.extend_from_slice(t.next_state.values());
            b.eval_flags.push(t.eval_flag);
            b.terminals.push(t.terminal);
        }
        b.len = ts.len();
        b
    }

    fn with_capacity(n: usize, state_dim: usize, action_dim: usize) -> Self {
        Batch {
            len: 0,
            state_dim,
            action_dim,
            states: Vec::with_capacity(n * state_dim),
            actions: Vec::with_capacity(n * action_dim),
            rewards: Vec::with_capacity(n),
            next_states: Vec::with_capacity(n * state_dim),
            eval_flags: Vec::with_capacity(n),
            terminals: Vec::with_capacity(n),
        }
    }
}

/// Ring buffer of transitions stored column-wise. Once `capacity` entries
/// are held, each push overwrites the oldest one.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    state_schema: Arc<FieldSchema>,
    action_schema: Arc<FieldSchema>,
    states: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_states: Vec<f64>,
    eval_flags: Vec<u8>,
    terminals: Vec<bool>,
    cursor: usize,
    len: usize,
}

impl ReplayBuffer {
    pub fn new(
        capacity: usize,
        state_schema: Arc<FieldSchema>,
        action_schema: Arc<FieldSchema>,
    ) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        Self {
            capacity,
            state_schema,
            action_schema,
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_states: Vec::new(),
            eval_flags: Vec::new(),
            terminals: Vec::new(),
            cursor: 0,
            len: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push(&mut self, t: Transition) -> Result<(), CoreError> {
        t.validate()?;
        if t.state.schema().as_ref() != self.state_schema.as_ref()
            || t.next_state.schema().as_ref() != self.state_schema.as_ref()
        {
            return Err(CoreError::SchemaMismatch(format!(
                "transition state schema differs from buffer schema `{}`",
                self.state_schema.name()
            )));
        }
        if t.action.schema().as_ref() != self.action_schema.as_ref() {
            return Err(CoreError::SchemaMismatch(format!(
                "transition action schema differs from buffer schema `{}`",
                self.action_schema.name()
            )));
        }
        self.push_raw(
            t.state.values(),
            t.action.values(),
            t.reward,
            t.next_state.values(),
            t.eval_flag,
            t.terminal,
        );
        Ok(())
    }

    fn push_raw(
        &mut self,
        s: &[f64],
        a: &[f64],
        r: f64,
        s2: &[f64],
        flag: u8,
        terminal: bool,
    ) {
        let sd = self.state_schema.len();
        let ad = self.action_schema.len();
        if self.len < self.capacity {
            self.states.extend_from_slice(s);
            self.actions.extend_from_slice(a);
            self.rewards.push(r);
            self.next_states.extend_from_slice(s2);
            self.eval_flags.push(flag);
            self.terminals.push(terminal);
            self.len += 1;
        } else {
            let i = self.cursor;
            self.states[i * sd..(i + 1) * sd].copy_from_slice(s);
            self.actions[i * ad..(i + 1) * ad].copy_from_slice(a);
            self.rewards[i] = r;
            self.next_states[i * sd..(i + 1) * sd].copy_from_slice(s2);
            self.eval_flags[i] = flag;
            self.terminals[i] = terminal;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Transition at physical slot `i` (not insertion order).
    fn at(&self, i: usize) -> Transition {
        let sd = self.state_schema.len();
        let ad = self.action_schema.len();
        Transition {
            state: StateVector::new(
                self.states[i * sd..(i + 1) * sd].to_vec(),
                self.state_schema.clone(),
            )
            .expect("stored states are validated"),
            action: ActionVector::new(
                self.actions[i * ad..(i + 1) * ad].to_vec(),
                self.action_schema.clone(),
            )
            .expect("stored actions are validated"),
            reward: self.rewards[i],
            next_state: StateVector::new(
                self.next_states[i * sd..(i + 1) * sd].to_vec(),
                self.state_schema.clone(),
            )
            .expect("stored states are validated"),
            eval_flag: self.eval_flags[i],
            terminal: self.terminals[i],
        }
    }

    /// Retained transitions, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = Transition> + '_ {
        let start = if self.len < self.capacity { 0 } else { self.cursor };
        (0..self.len).map(move |k| self.at((start + k) % self.capacity))
    }

    pub fn newest(&self) -> Option<Transition> {
        if self.len == 0 {
            return None;
        }
        Some(self.at((self.cursor + self.capacity - 1) % self.capacity))
    }

    /// Draws `n` transitions uniformly with replacement, seeded.
    pub fn sample(&self, n: usize, rng_seed: u64) -> Result<Vec<Transition>, CoreError> {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let idx = self.sample_indices(n, &mut rng)?;
        Ok(idx.into_iter().map(|i| self.at(i)).collect())
    }

    pub fn sample_indices<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<usize>, CoreError> {
        if n == 0 || n > self.len {
            return Err(CoreError::Underfilled {
                size: self.len,
                requested: n,
            });
        }
        Ok((0..n).map(|_| rng.random_range(0..self.len)).collect())
    }

    /// Same distribution as [`ReplayBuffer::sample`], gathered straight into
    /// a dense batch.
    pub fn sample_batch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Batch, CoreError> {
        let idx = self.sample_indices(n, rng)?;
        let sd = self.state_schema.len();
        let ad = self.action_schema.len();
        let mut b = Batch::with_capacity(n, sd, ad);
        for &i in &idx {
            b.states.extend_from_slice(&self.states[i * sd..(i + 1) * sd]);
            b.actions.extend_from_slice(&self.actions[i * ad..(i + 1) * ad]);
            b.rewards.push(self.rewards[i]);
            b.next_states
                .extend_from_slice(&self.next_states[i * sd..(i + 1) * sd]);
            b.eval_flags.push(self.eval_flags[i]);
            b.terminals.push(self.terminals[i]);
        }
        b.len = n;
        Ok(b)
    }

    pub fn state_schema(&self) -> &Arc<FieldSchema> {
        &self.state_schema
    }

    pub fn action_schema(&self) -> &Arc<FieldSchema> {
        &self.action_schema
    }
}
