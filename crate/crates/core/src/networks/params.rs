use crate::error::{AevbError, Result};

/// A collection of named parameter blocks with a fixed declaration order.
///
/// The order is the one used for flattening, optimizer state and
/// checkpoints. Gradients are stored in a value of the same type.
pub trait Parameters: Clone {
    fn blocks(&self) -> Vec<(&'static str, &[f64])>;
    fn blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])>;

    fn num_params(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (_, b) in self.blocks() {
            out.extend_from_slice(b);
        }
        out
    }

    fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.num_params();
        if flat.len() != n {
            return Err(AevbError::shape(
                "Parameters::set_flat",
                format!("{n} parameters"),
                format!("{} values", flat.len()),
            ));
        }
        let mut offset = 0;
        for (_, b) in self.blocks_mut() {
            b.copy_from_slice(&flat[offset..offset + b.len()]);
            offset += b.len();
        }
        Ok(())
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    fn fill(&mut self, v: f64) {
        for (_, b) in self.blocks_mut() {
            b.fill(v);
        }
    }

    fn scale(&mut self, factor: f64) {
        for (_, b) in self.blocks_mut() {
            b.iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// `self += alpha * other`. Both must have the same layout.
    fn add_scaled(&mut self, other: &Self, alpha: f64) {
        for ((_, dst), (_, src)) in self.blocks_mut().into_iter().zip(other.blocks()) {
            debug_assert_eq!(dst.len(), src.len());
            for (d, s) in dst.iter_mut().zip(src) {
                *d += alpha * s;
            }
        }
    }

    fn squared_norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|(_, b)| b.iter())
            .map(|v| v * v)
            .sum()
    }

    /// Name of the first block holding a NaN or infinity.
    fn first_non_finite(&self) -> Option<&'static str> {
        self.blocks()
            .into_iter()
            .find(|(_, b)| b.iter().any(|v| !v.is_finite()))
            .map(|(name, _)| name)
    }
}
