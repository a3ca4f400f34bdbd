//! Dense arrays, the Adam optimizer and the finite-difference oracle.

mod adam;
pub mod gradcheck;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{finite_difference_gradient, max_relative_error, relative_error};
pub use tensor::Tensor;

/// A collection of named tensors. Parameter structs and their gradients share
/// one type, so the same visitor walks both in the same order.
pub trait ParamSet {
    fn tensors(&self) -> Vec<(String, &Tensor)>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)>;

    fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Same structure, every entry zero.
    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        z
    }

    fn accumulate(&mut self, other: &Self)
    where
        Self: Sized,
    {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    fn scale_all(&mut self, s: f64) {
        for (_, t) in self.tensors_mut() {
            t.scale(s);
        }
    }

    fn global_norm(&self) -> f64 {
        self.tensors().iter().map(|(_, t)| t.sq_norm()).sum::<f64>().sqrt()
    }
}
