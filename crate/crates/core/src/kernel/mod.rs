//! Numeric kernel: arrays, reverse-mode gradients, optimizer and random streams.

pub mod array;
pub mod layers;
pub mod optim;
pub mod rng;
pub mod tape;

pub use array::{layernorm, leaky_relu, softmax_masked, Array, DEFAULT_LEAKY_SLOPE, LAYERNORM_EPS};
pub use optim::{adamw_step, clip_global_norm, AdamWConfig, AdamWState};
pub use rng::{stream, SimRng};
pub use layers::Perceptron;
pub use tape::{Gradients, PhaseTable, Tape, Var};
