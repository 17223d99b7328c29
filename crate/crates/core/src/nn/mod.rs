//! Minimal numerical substrate shared by the MI estimator and the AnCoGen
//! model: dense tensors, a reverse-mode tape, transformer layers, and Adam.

mod graph;
pub mod gradcheck;
mod layers;
mod optim;
mod params;
mod tensor;

pub use graph::{Graph, Var};
pub use layers::{Embedding, FeedForward, LayerNorm, Linear, MultiHeadAttention, TransformerBlock};
pub use optim::Adam;
pub use params::{Gradients, ParamId, ParamStore, CHECKPOINT_MAGIC};
pub use tensor::{Scalar, Tensor};

/// Fixed sinusoidal position encodings, `[len, dim]`.
pub fn sinusoidal_positions<T: Scalar>(len: usize, dim: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(len * dim);
    for pos in 0..len {
        for j in 0..dim {
            let pair = (j / 2) as f64;
            let freq = 1.0 / 10000f64.powf(2.0 * pair / dim as f64);
            let a = pos as f64 * freq;
            data.push(T::of(if j % 2 == 0 { a.sin() } else { a.cos() }));
        }
    }
    Tensor::from_rows(len, dim, data)
}
