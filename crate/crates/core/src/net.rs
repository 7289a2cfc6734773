//! The MAST network: perception perceptron, a stack of pre-norm attention and
//! MLP blocks with residuals, and a readout perceptron with a speed limit.

use indexmap::IndexMap;
use rand::Rng;

use crate::attention::{component_mask, record_attention, window_mask, AttentionVars, MaskMatrix};
use crate::comm::CommGraph;
use crate::error::{MastError, Result};
use crate::kernel::{stream, Array, Perceptron, Tape, Var, DEFAULT_LEAKY_SLOPE};
use crate::posenc::{ape_encode, make_frequencies, rope_phases, FrequencySet, PosEncKind, Position};

/// Named parameter tensors in a fixed order.
pub type ModelParams = IndexMap<String, Array>;

pub const ACTION_DIM: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct MastConfig {
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub posenc: PosEncKind,
    /// Attention window radius in meters; infinite disables the window.
    pub window_radius: f64,
    pub base_wavelength: f64,
    /// MAST-M when set, MAST-L otherwise.
    pub use_component_mask: bool,
    pub obs_dim: usize,
    pub leaky_slope: f64,
    /// Divide logits by `sqrt(head_dim)`.
    pub scaled: bool,
    pub u_max: f64,
}

impl Default for MastConfig {
    fn default() -> Self {
        MastConfig {
            layers: 4,
            heads: 4,
            head_dim: 64,
            posenc: PosEncKind::RopeGeometric,
            window_radius: f64::INFINITY,
            base_wavelength: 1000.0,
            use_component_mask: true,
            obs_dim: 14,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            scaled: true,
            u_max: 5.0,
        }
    }
}

impl MastConfig {
    pub fn model_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.model_dim();
        if d == 0 {
            return Err(MastError::Config("model width must be positive".into()));
        }
        if self.obs_dim == 0 {
            return Err(MastError::Config("observation width must be positive".into()));
        }
        if self.posenc.is_rotary() && !self.head_dim.is_multiple_of(4) {
            return Err(MastError::Config(format!(
                "rotary encoding needs head_dim divisible by 4, got {}",
                self.head_dim
            )));
        }
        if self.posenc.is_absolute() && !d.is_multiple_of(4) {
            return Err(MastError::Config(format!(
                "absolute encoding needs model width divisible by 4, got {d}"
            )));
        }
        if !(self.window_radius > 0.0) {
            return Err(MastError::Config("attention window radius must be positive".into()));
        }
        if !(self.base_wavelength > 0.0) || !self.base_wavelength.is_finite() {
            return Err(MastError::Config("base wavelength must be positive".into()));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(MastError::Config("leaky slope must lie in (0, 1)".into()));
        }
        if !(self.u_max > 0.0) {
            return Err(MastError::Config("u_max must be positive".into()));
        }
        Ok(())
    }

    /// Frequencies used by the positional encoding, if it has any.
    pub fn frequencies(&self) -> Result<Option<FrequencySet>> {
        let Some(kind) = self.posenc.frequency_kind() else {
            return Ok(None);
        };
        let count = if self.posenc.is_rotary() {
            self.head_dim / 4
        } else {
            self.model_dim() / 4
        };
        make_frequencies(kind, count, self.base_wavelength).map(Some)
    }

    /// Expected tensor names and shapes, in storage order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.model_dim();
        let hd = self.heads * self.head_dim;
        let mut out = Vec::new();
        fn mlp(out: &mut Vec<(String, Vec<usize>)>, prefix: &str, input: usize, hidden: usize, output: usize) {
            out.push((format!("{prefix}.w1"), vec![input, hidden]));
            out.push((format!("{prefix}.b1"), vec![hidden]));
            out.push((format!("{prefix}.w2"), vec![hidden, output]));
            out.push((format!("{prefix}.b2"), vec![output]));
        }
        mlp(&mut out, "perception", self.obs_dim, 2 * d, d);
        if self.posenc == PosEncKind::Mlp {
            mlp(&mut out, "pe", 2, 2 * d, d);
        }
        for l in 0..self.layers {
            let p = format!("layers.{l}");
            out.push((format!("{p}.ln1.gain"), vec![d]));
            out.push((format!("{p}.ln1.bias"), vec![d]));
            for w in ["wq", "wk", "wv"] {
                out.push((format!("{p}.attn.{w}"), vec![d, hd]));
            }
            out.push((format!("{p}.attn.wo"), vec![hd, d]));
            out.push((format!("{p}.ln2.gain"), vec![d]));
            out.push((format!("{p}.ln2.bias"), vec![d]));
            mlp(&mut out, &format!("{p}.mlp"), d, 2 * d, d);
        }
        mlp(&mut out, "readout", d, 2 * d, ACTION_DIM);
        out
    }
}

/// Fresh parameters: weights uniform in `±1/sqrt(fan_in)`, biases likewise,
/// layer-norm gains one and biases zero.
pub fn init_params(cfg: &MastConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let mut rng = stream(seed, 0x1a11);
    let mut params = ModelParams::new();
    let mut fan_in = 1;
    for (name, shape) in cfg.param_shapes() {
        let n: usize = shape.iter().product();
        let data = if name.ends_with(".gain") {
            vec![1.0; n]
        } else if name.contains(".ln") && name.ends_with(".bias") {
            vec![0.0; n]
        } else {
            if shape.len() == 2 {
                fan_in = shape[0];
            }
            let bound = 1.0 / (fan_in as f64).sqrt();
            (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
        };
        params.insert(name, Array::new(shape, data)?);
    }
    Ok(params)
}

/// Checks that `params` holds exactly the tensors `cfg` expects.
pub fn check_params(cfg: &MastConfig, params: &ModelParams) -> Result<()> {
    let shapes = cfg.param_shapes();
    for (name, shape) in &shapes {
        match params.get(name) {
            None => {
                return Err(MastError::TensorShape {
                    name: name.clone(),
                    expected: shape.clone(),
                    found: vec![],
                })
            }
            Some(a) if a.shape() != shape.as_slice() => {
                return Err(MastError::TensorShape {
                    name: name.clone(),
                    expected: shape.clone(),
                    found: a.shape().to_vec(),
                })
            }
            Some(_) => {}
        }
    }
    if let Some(extra) = params.keys().find(|k| !shapes.iter().any(|(n, _)| n == *k)) {
        return Err(MastError::Weights(format!("unexpected tensor `{extra}`")));
    }
    Ok(())
}

/// Parameters recorded as tape leaves, by name.
#[derive(Clone, Debug, Default)]
pub struct BoundParams {
    vars: IndexMap<String, Var>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Var {
        match self.vars.get(name) {
            Some(v) => *v,
            None => panic!("parameter `{name}` is not bound"),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    fn perceptron(&self, prefix: &str) -> Perceptron {
        Perceptron {
            w1: self.get(&format!("{prefix}.w1")),
            b1: self.get(&format!("{prefix}.b1")),
            w2: self.get(&format!("{prefix}.w2")),
            b2: self.get(&format!("{prefix}.b2")),
        }
    }
}

/// A configured network with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Mast {
    pub cfg: MastConfig,
    pub params: ModelParams,
    freqs: Option<FrequencySet>,
}

impl Mast {
    pub fn new(cfg: MastConfig, params: ModelParams) -> Result<Self> {
        cfg.validate()?;
        check_params(&cfg, &params)?;
        let freqs = cfg.frequencies()?;
        Ok(Mast { cfg, params, freqs })
    }

    pub fn init(cfg: MastConfig, seed: u64) -> Result<Self> {
        let params = init_params(&cfg, seed)?;
        Mast::new(cfg, params)
    }

    pub fn frequencies(&self) -> Option<&FrequencySet> {
        self.freqs.as_ref()
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let vars = self
            .params
            .iter()
            .map(|(name, a)| (name.clone(), tape.leaf(a.clone())))
            .collect();
        BoundParams { vars }
    }

    /// Attention mask for agents at `positions`: the window, intersected with
    /// the component mask of `graph` for MAST-M.
    pub fn mask(&self, positions: &[Position], graph: Option<&CommGraph>) -> MaskMatrix {
        let window = window_mask(positions, self.cfg.window_radius);
        match graph {
            Some(g) if self.cfg.use_component_mask => window.and(&component_mask(g)),
            _ => window,
        }
    }

    pub fn record_perceive(&self, tape: &mut Tape, bound: &BoundParams, obs: Var) -> Result<Var> {
        if tape.value(obs).cols() != self.cfg.obs_dim {
            return Err(MastError::Shape {
                op: "perceive",
                lhs: tape.value(obs).shape().to_vec(),
                rhs: vec![self.cfg.obs_dim],
            });
        }
        bound.perceptron("perception").apply(tape, obs, self.cfg.leaky_slope)
    }

    /// Positional encoding, attention blocks and residuals over embeddings `x`.
    pub fn record_forward(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        x: Var,
        positions: &[Position],
        mask: &MaskMatrix,
    ) -> Result<Var> {
        let d = self.cfg.model_dim();
        let n = tape.value(x).rows();
        if tape.value(x).cols() != d || positions.len() != n {
            return Err(MastError::Shape {
                op: "forward",
                lhs: tape.value(x).shape().to_vec(),
                rhs: vec![positions.len(), d],
            });
        }
        let slope = self.cfg.leaky_slope;
        let mut h = x;
        match self.cfg.posenc {
            PosEncKind::ApeGeometric | PosEncKind::ApeLinear => {
                let freqs = self.freqs.as_ref().expect("absolute encoding has frequencies");
                let mut rows = Vec::with_capacity(n);
                for p in positions {
                    rows.push(ape_encode(*p, freqs, d)?);
                }
                let pe = tape.leaf(Array::from_rows(&rows)?);
                h = tape.add(h, pe)?;
            }
            PosEncKind::Mlp => {
                let scale = 1.0 / self.cfg.base_wavelength;
                let rows: Vec<[f64; 2]> = positions.iter().map(|p| [p[0] * scale, p[1] * scale]).collect();
                let pin = tape.leaf(Array::from_rows(&rows)?);
                let pe = bound.perceptron("pe").apply(tape, pin, slope)?;
                h = tape.add(h, pe)?;
            }
            _ => {}
        }
        let phases = if self.cfg.posenc.is_rotary() {
            let freqs = self.freqs.as_ref().expect("rotary encoding has frequencies");
            Some(rope_phases(positions, freqs))
        } else {
            None
        };
        for l in 0..self.cfg.layers {
            let p = format!("layers.{l}");
            let z = tape.layernorm(h, bound.get(&format!("{p}.ln1.gain")), bound.get(&format!("{p}.ln1.bias")))?;
            let vars = AttentionVars {
                wq: bound.get(&format!("{p}.attn.wq")),
                wk: bound.get(&format!("{p}.attn.wk")),
                wv: bound.get(&format!("{p}.attn.wv")),
                wo: bound.get(&format!("{p}.attn.wo")),
            };
            let a = record_attention(tape, z, vars, self.cfg.heads, phases.as_ref(), mask, self.cfg.scaled)?;
            h = tape.add(h, a)?;
            let z = tape.layernorm(h, bound.get(&format!("{p}.ln2.gain")), bound.get(&format!("{p}.ln2.bias")))?;
            let m = bound.perceptron(&format!("{p}.mlp")).apply(tape, z, slope)?;
            h = tape.add(h, m)?;
        }
        Ok(h)
    }

    /// Velocities from final embeddings, clipped to `u_max`.
    pub fn record_readout(&self, tape: &mut Tape, bound: &BoundParams, y: Var) -> Result<Var> {
        let raw = bound.perceptron("readout").apply(tape, y, self.cfg.leaky_slope)?;
        Ok(tape.clip_norm(raw, self.cfg.u_max))
    }

    /// Observations to velocities in one recording.
    pub fn record_policy(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        obs: &Array,
        positions: &[Position],
        mask: &MaskMatrix,
    ) -> Result<Var> {
        let o = tape.leaf(obs.clone());
        let x = self.record_perceive(tape, bound, o)?;
        let y = self.record_forward(tape, bound, x, positions, mask)?;
        self.record_readout(tape, bound, y)
    }

    pub fn perceive(&self, obs: &Array) -> Result<Array> {
        let mut tape = Tape::new();
        let bound = self.bind_subset(&mut tape, &["perception."]);
        let o = tape.leaf(obs.clone());
        let x = self.record_perceive(&mut tape, &bound, o)?;
        Ok(tape.value(x).clone())
    }

    pub fn forward(&self, x: &Array, positions: &[Position], mask: &MaskMatrix) -> Result<Array> {
        let mut tape = Tape::new();
        let bound = self.bind_subset(&mut tape, &["pe.", "layers."]);
        let xv = tape.leaf(x.clone());
        let y = self.record_forward(&mut tape, &bound, xv, positions, mask)?;
        Ok(tape.value(y).clone())
    }

    pub fn readout(&self, y: &Array) -> Result<Array> {
        let mut tape = Tape::new();
        let bound = self.bind_subset(&mut tape, &["readout."]);
        let yv = tape.leaf(y.clone());
        let u = self.record_readout(&mut tape, &bound, yv)?;
        Ok(tape.value(u).clone())
    }

    pub fn act(&self, obs: &Array, positions: &[Position], mask: &MaskMatrix) -> Result<Array> {
        let x = self.perceive(obs)?;
        let y = self.forward(&x, positions, mask)?;
        self.readout(&y)
    }

    fn bind_subset(&self, tape: &mut Tape, prefixes: &[&str]) -> BoundParams {
        let vars = self
            .params
            .iter()
            .filter(|(name, _)| prefixes.iter().any(|p| name.starts_with(p)))
            .map(|(name, a)| (name.clone(), tape.leaf(a.clone())))
            .collect();
        BoundParams { vars }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{layernorm, leaky_relu};
    use crate::posenc::rope_rotate;
    use rand::Rng;

    fn tiny(posenc: PosEncKind) -> MastConfig {
        MastConfig {
            layers: 2,
            heads: 2,
            head_dim: 4,
            posenc,
            window_radius: 80.0,
            base_wavelength: 100.0,
            use_component_mask: false,
            obs_dim: 5,
            leaky_slope: 0.01,
            scaled: true,
            u_max: 5.0,
        }
    }

    fn random(shape: &[usize], rng: &mut impl Rng) -> Array {
        let n = shape.iter().product();
        Array::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn vecmat(v: &[f64], w: &Array) -> Vec<f64> {
        (0..w.cols()).map(|j| (0..v.len()).map(|i| v[i] * w.get(i, j)).sum()).collect()
    }

    fn plus(a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x + y).collect()
    }

    fn mlp(params: &ModelParams, prefix: &str, v: &[f64]) -> Vec<f64> {
        let g = |s: &str| &params[&format!("{prefix}.{s}")];
        let h = leaky_relu(&plus(&vecmat(v, g("w1")), g("b1").data()), 0.01);
        plus(&vecmat(&h, g("w2")), g("b2").data())
    }

    /// Straight-line evaluation of the block stack, row by row.
    fn reference_forward(net: &Mast, x: &Array, pos: &[Position], mask: &MaskMatrix) -> Vec<Vec<f64>> {
        let cfg = &net.cfg;
        let p = &net.params;
        let n = x.rows();
        let da = cfg.head_dim;
        let mut h: Vec<Vec<f64>> = (0..n).map(|i| x.row(i).to_vec()).collect();
        for l in 0..cfg.layers {
            let g = |s: &str| &p[&format!("layers.{l}.{s}")];
            let z: Vec<Vec<f64>> = h
                .iter()
                .map(|r| layernorm(r, g("ln1.gain").data(), g("ln1.bias").data()))
                .collect();
            let mut q: Vec<Vec<f64>> = z.iter().map(|r| vecmat(r, g("attn.wq"))).collect();
            let mut k: Vec<Vec<f64>> = z.iter().map(|r| vecmat(r, g("attn.wk"))).collect();
            let v: Vec<Vec<f64>> = z.iter().map(|r| vecmat(r, g("attn.wv"))).collect();
            if let Some(f) = net.frequencies().filter(|_| cfg.posenc.is_rotary()) {
                for i in 0..n {
                    for hh in 0..cfg.heads {
                        let rq = rope_rotate(&q[i][hh * da..(hh + 1) * da], pos[i], f).unwrap();
                        q[i][hh * da..(hh + 1) * da].copy_from_slice(&rq);
                        let rk = rope_rotate(&k[i][hh * da..(hh + 1) * da], pos[i], f).unwrap();
                        k[i][hh * da..(hh + 1) * da].copy_from_slice(&rk);
                    }
                }
            }
            let mut out = vec![vec![0.0; cfg.heads * da]; n];
            for hh in 0..cfg.heads {
                for i in 0..n {
                    let logits: Vec<f64> = (0..n)
                        .map(|j| {
                            let s: f64 = (0..da).map(|c| q[i][hh * da + c] * k[j][hh * da + c]).sum();
                            s / (da as f64).sqrt()
                        })
                        .collect();
                    let live: Vec<usize> = (0..n).filter(|&j| mask.get(i, j)).collect();
                    let m = live.iter().map(|&j| logits[j]).fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = live.iter().map(|&j| (logits[j] - m).exp()).sum();
                    for &j in &live {
                        let w = (logits[j] - m).exp() / z;
                        for c in 0..da {
                            out[i][hh * da + c] += w * v[j][hh * da + c];
                        }
                    }
                }
            }
            for i in 0..n {
                h[i] = plus(&h[i], &vecmat(&out[i], g("attn.wo")));
                let z2 = layernorm(&h[i], g("ln2.gain").data(), g("ln2.bias").data());
                h[i] = plus(&h[i], &mlp(p, &format!("layers.{l}.mlp"), &z2));
            }
        }
        h
    }

    #[test]
    fn zero_layers_is_identity() {
        let mut cfg = tiny(PosEncKind::RopeGeometric);
        cfg.layers = 0;
        let net = Mast::init(cfg, 1).unwrap();
        let mut rng = stream(1, 1);
        let x = random(&[3, 8], &mut rng);
        let y = net.forward(&x, &[[0.0; 2], [1.0, 1.0], [2.0, 5.0]], &MaskMatrix::dense(3)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn matches_straight_line_reference() {
        let mut rng = stream(2, 1);
        for kind in [PosEncKind::RopeGeometric, PosEncKind::RopeLinear, PosEncKind::None] {
            let net = Mast::init(tiny(kind), 2).unwrap();
            let x = random(&[3, 8], &mut rng);
            let pos: Vec<Position> = (0..3)
                .map(|_| [rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0)])
                .collect();
            let mask = window_mask(&pos, 70.0);
            let y = net.forward(&x, &pos, &mask).unwrap();
            let want = reference_forward(&net, &x, &pos, &mask);
            for i in 0..3 {
                for j in 0..8 {
                    assert!((y.get(i, j) - want[i][j]).abs() <= 1e-12, "{kind}");
                }
            }
        }
    }

    #[test]
    fn perception_zero_and_determinism() {
        let cfg = tiny(PosEncKind::None);
        let mut net = Mast::init(cfg, 3).unwrap();
        let mut rng = stream(3, 1);
        let obs = random(&[2, 5], &mut rng);
        assert_eq!(net.perceive(&obs).unwrap(), net.perceive(&obs).unwrap());
        for (name, a) in net.params.iter_mut() {
            if name.starts_with("perception.") || name.starts_with("readout.") {
                *a = Array::zeros(a.shape());
            }
        }
        assert!(net.perceive(&obs).unwrap().data().iter().all(|&v| v == 0.0));
        let y = random(&[2, 8], &mut rng);
        assert!(net.readout(&y).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(net.perceive(&random(&[2, 4], &mut rng)).is_err());
    }

    #[test]
    fn readout_speed_limit() {
        let mut net = Mast::init(tiny(PosEncKind::None), 4).unwrap();
        // Identity-like readout: first hidden unit carries the value through.
        for (name, a) in net.params.iter_mut() {
            if name.starts_with("readout.") {
                *a = Array::zeros(a.shape());
            }
        }
        net.params["readout.w1"].set(0, 0, 1.0);
        net.params["readout.w1"].set(1, 1, 1.0);
        net.params["readout.w2"].set(0, 0, 1.0);
        net.params["readout.w2"].set(1, 1, 1.0);
        let mut y = Array::zeros(&[2, 8]);
        y.set(0, 0, 7.2);
        y.set(0, 1, 9.6);
        y.set(1, 0, 1.8);
        y.set(1, 1, 2.4);
        let u = net.readout(&y).unwrap();
        assert!((u.get(0, 0) - 3.0).abs() < 1e-12 && (u.get(0, 1) - 4.0).abs() < 1e-12);
        assert_eq!(u.row(1), &[1.8, 2.4]);
    }

    #[test]
    fn mlp_pe_zero_weights_leave_embeddings() {
        let mut cfg = tiny(PosEncKind::Mlp);
        cfg.layers = 0;
        let mut net = Mast::init(cfg, 5).unwrap();
        for (name, a) in net.params.iter_mut() {
            if name.starts_with("pe.") {
                *a = Array::zeros(a.shape());
            }
        }
        let x = random(&[2, 8], &mut stream(5, 1));
        let y = net.forward(&x, &[[3.0, 4.0], [50.0, 1.0]], &MaskMatrix::dense(2)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn config_validation() {
        let mut cfg = tiny(PosEncKind::RopeGeometric);
        cfg.head_dim = 6;
        assert!(cfg.validate().is_err());
        cfg.posenc = PosEncKind::ApeLinear;
        cfg.heads = 3;
        assert!(cfg.validate().is_err());
        cfg.heads = 2;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn check_params_names_tensor() {
        let net = Mast::init(tiny(PosEncKind::None), 6).unwrap();
        let mut wide = tiny(PosEncKind::None);
        wide.head_dim = 8;
        let err = check_params(&wide, &net.params).unwrap_err().to_string();
        assert!(err.contains("perception.w1"), "{err}");
        assert!(err.contains("[5, 32]"), "{err}");
    }

    #[test]
    fn init_is_seeded() {
        let a = init_params(&tiny(PosEncKind::Mlp), 9).unwrap();
        let b = init_params(&tiny(PosEncKind::Mlp), 9).unwrap();
        let c = init_params(&tiny(PosEncKind::Mlp), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let bound = 1.0 / 5f64.sqrt();
        assert!(a["perception.w1"].data().iter().all(|v| v.abs() <= bound));
        assert!(a["layers.0.ln1.gain"].data().iter().all(|&v| v == 1.0));
    }
}
