use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::vector::{check_len, ParamVector};

/// Per-task personalized models `u^i` with write bookkeeping.
///
/// Indices are zero-based positions in the task set. An entry exists only
/// after its first write.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryStore<S> {
    dim: usize,
    u: Vec<Option<ParamVector<S>>>,
    touched: Vec<Option<u64>>,
    writes: Vec<u64>,
}

impl<S: Real> MemoryStore<S> {
    pub fn new(n: usize, dim: usize) -> Self {
        Self {
            dim,
            u: vec![None; n],
            touched: vec![None; n],
            writes: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize) -> Option<&ParamVector<S>> {
        self.u.get(i).and_then(Option::as_ref)
    }

    pub fn require(&self, i: usize) -> Result<&ParamVector<S>> {
        self.get(i).ok_or(Error::MissingMemory(i))
    }

    pub fn is_initialized(&self, i: usize) -> bool {
        self.get(i).is_some()
    }

    /// Iteration index of the last write to entry `i`.
    pub fn last_touched(&self, i: usize) -> Option<u64> {
        self.touched.get(i).copied().flatten()
    }

    /// Number of writes to entry `i`, initialization included.
    pub fn writes(&self, i: usize) -> u64 {
        self.writes[i]
    }

    pub fn initialized_count(&self) -> usize {
        self.u.iter().filter(|u| u.is_some()).count()
    }

    pub fn set(&mut self, i: usize, value: ParamVector<S>, t: u64) -> Result<()> {
        if i >= self.u.len() {
            return Err(Error::MissingMemory(i));
        }
        check_len(self.dim, value.len())?;
        value.ensure_finite("memory update")?;
        self.u[i] = Some(value);
        self.touched[i] = Some(t);
        self.writes[i] += 1;
        Ok(())
    }

    /// Initializes every entry to `w`.
    pub fn fill(&mut self, w: &ParamVector<S>, t: u64) -> Result<()> {
        for i in 0..self.u.len() {
            self.set(i, w.clone(), t)?;
        }
        Ok(())
    }

    /// Drops every entry and its bookkeeping.
    pub fn clear(&mut self) {
        let n = self.u.len();
        *self = Self::new(n, self.dim);
    }
}
