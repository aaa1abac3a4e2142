use std::sync::Arc;

use crate::env::GLYPH;
use crate::tensor::Tensor;

use super::{PerceptionError, Result};

/// Splits a `[1, H, W]` observation into `GLYPH`-sized cell patches, row-major.
/// Patch `k` covers grid cell `(k / side, k % side)`.
pub fn split_patches(obs: &Tensor) -> Result<Vec<Tensor>> {
    let shape = obs.shape();
    if shape.len() != 3 || shape[0] != 1 || shape[1] != shape[2] || !shape[1].is_multiple_of(GLYPH) || shape[1] == 0 {
        return Err(PerceptionError::Shape(format!(
            "expected a square [1, k*{GLYPH}, k*{GLYPH}] observation, got {shape:?}"
        )));
    }
    let px = shape[1];
    let side = px / GLYPH;
    let data = obs.data();
    let mut out = Vec::with_capacity(side * side);
    for k in 0..side * side {
        let (r0, c0) = ((k / side) * GLYPH, (k % side) * GLYPH);
        let mut patch = Vec::with_capacity(GLYPH * GLYPH);
        for r in 0..GLYPH {
            let start = (r0 + r) * px + c0;
            patch.extend_from_slice(&data[start..start + GLYPH]);
        }
        out.push(Tensor::new(vec![1, GLYPH, GLYPH], patch)?);
    }
    Ok(out)
}

/// Every distinct cell image seen so far, plus the mapping of the current
/// board's cells onto it.
#[derive(Debug, Clone, Default)]
pub struct PatchMemory {
    unique: Vec<Arc<Tensor>>,
    current: Vec<usize>,
}

impl PatchMemory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds unseen patches and rebuilds the per-cell indices. Patches are
    /// compared by exact pixel equality.
    pub fn update(&mut self, patches: &[Tensor]) {
        self.current.clear();
        for p in patches {
            let idx = match self.unique.iter().position(|u| u.data() == p.data()) {
                Some(i) => i,
                None => {
                    self.unique.push(Arc::new(p.clone()));
                    self.unique.len() - 1
                }
            };
            self.current.push(idx);
        }
    }

    pub fn unique_patches(&self) -> &[Arc<Tensor>] {
        &self.unique
    }

    /// Unique-patch index of each cell of the last board passed to `update`.
    pub fn current_indices(&self) -> &[usize] {
        &self.current
    }

    pub fn len(&self) -> usize {
        self.unique.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unique.is_empty()
    }

    /// All unique patches stacked as `[n, 1, GLYPH, GLYPH]`.
    pub fn batch(&self) -> Result<Tensor> {
        if self.unique.is_empty() {
            return Err(PerceptionError::EmptyMemory);
        }
        let refs: Vec<&Tensor> = self.unique.iter().map(|p| p.as_ref()).collect();
        Ok(Tensor::stack(&refs)?)
    }

    pub fn entries(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .unique
            .iter()
            .enumerate()
            .map(|(i, p)| (format!("{prefix}patch/{i}"), (**p).clone()))
            .collect();
        out.push((format!("{prefix}len"), Tensor::scalar(self.unique.len() as f64)));
        out
    }

    pub fn load_entries(&mut self, prefix: &str, entries: &[(String, Tensor)]) -> Result<()> {
        let find = |key: String| {
            entries
                .iter()
                .find(|(n, _)| *n == key)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| PerceptionError::Checkpoint(format!("missing entry {key}")))
        };
        let len = find(format!("{prefix}len"))?.data()[0] as usize;
        self.unique = (0..len)
            .map(|i| find(format!("{prefix}patch/{i}")).map(Arc::new))
            .collect::<Result<_>>()?;
        self.current.clear();
        Ok(())
    }
}
