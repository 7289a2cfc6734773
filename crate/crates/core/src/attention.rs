//! Attention masks and the masked multi-head spatial attention layer.

use crate::comm::{distance, CommGraph};
use crate::error::{MastError, Result};
use crate::kernel::{Array, PhaseTable, Tape, Var};
use crate::posenc::{rope_phases, FrequencySet, Position};

/// Boolean `N × N` mask; row `i` receives from column `j` when set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskMatrix {
    n: usize,
    bits: Vec<bool>,
}

impl MaskMatrix {
    pub fn dense(n: usize) -> Self {
        MaskMatrix {
            n,
            bits: vec![true; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut bits = vec![false; n * n];
        for i in 0..n {
            bits[i * n + i] = true;
        }
        MaskMatrix { n, bits }
    }

    /// Builds a mask from a predicate; the diagonal is forced on.
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                bits.push(i == j || f(i, j));
            }
        }
        MaskMatrix { n, bits }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn and(&self, other: &MaskMatrix) -> MaskMatrix {
        assert_eq!(self.n, other.n, "mask sizes differ");
        MaskMatrix {
            n: self.n,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect(),
        }
    }

    /// `M'[i][j] = M[perm[i]][perm[j]]`.
    pub fn permuted(&self, perm: &[usize]) -> MaskMatrix {
        MaskMatrix::from_fn(self.n, |i, j| self.get(perm[i], perm[j]))
    }

    /// Restriction to the given rows/columns, in that order.
    pub fn restrict(&self, idx: &[usize]) -> MaskMatrix {
        self.permuted(idx)
    }
}

/// Agents attend only to agents strictly closer than `radius`; infinite
/// radius yields the dense mask.
pub fn window_mask(positions: &[Position], radius: f64) -> MaskMatrix {
    let n = positions.len();
    if radius.is_infinite() {
        return MaskMatrix::dense(n);
    }
    MaskMatrix::from_fn(n, |i, j| distance(positions[i], positions[j]) < radius)
}

/// Agents attend only within their (weakly) connected component.
pub fn component_mask(graph: &CommGraph) -> MaskMatrix {
    let ids = graph.components();
    MaskMatrix::from_fn(ids.len(), |i, j| ids[i] == ids[j])
}

/// Tape handles of one attention layer. Projections are stored input-major:
/// `wq, wk, wv: d × H·d_a`, `wo: H·d_a × d`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
}

/// Records masked multi-head attention over the rows of `x`. With `phases`,
/// queries and keys are rotated before their inner product.
pub fn record_attention(
    tape: &mut Tape,
    x: Var,
    vars: AttentionVars,
    heads: usize,
    phases: Option<&PhaseTable>,
    mask: &MaskMatrix,
    scaled: bool,
) -> Result<Var> {
    let n = tape.value(x).rows();
    if mask.len() != n {
        return Err(MastError::Shape {
            op: "attention mask",
            lhs: vec![n, n],
            rhs: vec![mask.len(), mask.len()],
        });
    }
    let mut q = tape.matmul(x, vars.wq)?;
    let mut k = tape.matmul(x, vars.wk)?;
    let v = tape.matmul(x, vars.wv)?;
    let width = tape.value(q).cols();
    if heads == 0 || !width.is_multiple_of(heads) {
        return Err(MastError::Config(format!(
            "projection width {width} not divisible by {heads} heads"
        )));
    }
    if let Some(ph) = phases {
        q = tape.rotate(q, heads, ph.clone())?;
        k = tape.rotate(k, heads, ph.clone())?;
    }
    let head_dim = width / heads;
    let scale = if scaled { 1.0 / (head_dim as f64).sqrt() } else { 1.0 };
    let o = tape.attention(q, k, v, heads, mask.bits(), scale)?;
    tape.matmul(o, vars.wo)
}

/// Plain-array parameters of one attention layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub wq: Array,
    pub wk: Array,
    pub wv: Array,
    pub wo: Array,
    pub heads: usize,
}

/// Evaluates one attention layer without recording gradients.
pub fn attend(
    x: &Array,
    positions: &[Position],
    params: &AttentionParams,
    mask: &MaskMatrix,
    freqs: Option<&FrequencySet>,
    scaled: bool,
) -> Result<Array> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let vars = AttentionVars {
        wq: tape.leaf(params.wq.clone()),
        wk: tape.leaf(params.wk.clone()),
        wv: tape.leaf(params.wv.clone()),
        wo: tape.leaf(params.wo.clone()),
    };
    let phases = freqs.map(|f| rope_phases(positions, f));
    let out = record_attention(&mut tape, xv, vars, params.heads, phases.as_ref(), mask, scaled)?;
    Ok(tape.value(out).clone())
}
