//! Minimal dense linear algebra and reverse-mode autodiff for the toy
//! vision-language model. Everything is `f64` and single-threaded, which
//! keeps training bit-reproducible across runs on the same platform.

mod graph;
mod matrix;

pub use graph::{Graph, NodeId};
pub use matrix::Matrix;

/// Tanh-approximation GELU.
pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + libm::tanh(C * (x + 0.044715 * x * x * x)))
}

/// Derivative of [`gelu`].
pub fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = libm::tanh(u);
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * C * (1.0 + 3.0 * 0.044715 * x * x)
}
