use super::tape::{Tape, Var};
use crate::error::Result;

/// Handles of a one-hidden-layer perceptron `x·W1 + b1 → leaky → ·W2 + b2`.
#[derive(Clone, Copy, Debug)]
pub struct Perceptron {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl Perceptron {
    pub fn apply(&self, tape: &mut Tape, x: Var, slope: f64) -> Result<Var> {
        let h = tape.matmul(x, self.w1)?;
        let h = tape.add_bias(h, self.b1)?;
        let h = tape.leaky_relu(h, slope);
        let y = tape.matmul(h, self.w2)?;
        tape.add_bias(y, self.b2)
    }
}
