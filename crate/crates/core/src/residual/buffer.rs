use std::collections::VecDeque;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::ResidualError;
use crate::diffsim::SimState;

/// One real-world step. `grasp` is the gripper command that accompanied the
/// torques `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: SimState<f64>,
    pub a: Vec<f64>,
    pub grasp: bool,
    pub next: SimState<f64>,
}

impl Transition {
    pub fn validate(&self) -> Result<(), ResidualError> {
        let s = self.s.to_vec();
        let n = self.next.to_vec();
        if s.len() != n.len() || self.s.object.q.len() != self.next.object.q.len() {
            return Err(ResidualError::SizeMismatch(format!(
                "state of length {} followed by {}",
                s.len(),
                n.len()
            )));
        }
        if s.iter().chain(&n).chain(&self.a).any(|x| !x.is_finite()) {
            return Err(ResidualError::NonFinite("transition".into()));
        }
        Ok(())
    }
}

/// Bounded FIFO of real transitions; the oldest are dropped first.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl TransitionBuffer {
    pub fn new(capacity: usize) -> Self {
        TransitionBuffer {
            capacity: capacity.max(1),
            items: VecDeque::new(),
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

    /// Append after checking finiteness and that the dimensions match what
    /// is already stored.
    pub fn push(&mut self, t: Transition) -> Result<(), ResidualError> {
        t.validate()?;
        if let Some(first) = self.items.front() {
            if first.s.object.q.len() != t.s.object.q.len()
                || first.s.robot.q.len() != t.s.robot.q.len()
                || first.a.len() != t.a.len()
            {
                return Err(ResidualError::SizeMismatch("transition dimensions differ from the buffer".into()));
            }
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        Ok(())
    }

    pub fn extend<I: IntoIterator<Item = Transition>>(&mut self, it: I) -> Result<(), ResidualError> {
        for t in it {
            self.push(t)?;
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn to_vec(&self) -> Vec<Transition> {
        self.items.iter().cloned().collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for t in &self.items {
            serde_json::to_writer(&mut w, t)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R, capacity: usize) -> Result<Self, ResidualError> {
        let mut b = TransitionBuffer::new(capacity);
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| ResidualError::Format(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let t: Transition =
                serde_json::from_str(&line).map_err(|e| ResidualError::Format(format!("line {}: {e}", i + 1)))?;
            b.push(t)?;
        }
        Ok(b)
    }
}
