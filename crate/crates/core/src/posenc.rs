//! Frequency sets and the positional encodings built on them: continuous 2D
//! rotary encodings, absolute sinusoidal encodings and the learned MLP encoding.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use crate::error::{MastError, Result};
use crate::kernel::{Perceptron, PhaseTable, Tape, Var};

/// A 2D position in meters.
pub type Position = [f64; 2];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrequencyKind {
    /// `ω_k = 2π·λ^(−k/K)`
    Geometric,
    /// `ω_k = 2πk/λ`
    Linear,
}

/// Angular frequencies (rad/m) indexed `k = 1..=K`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencySet {
    pub kind: FrequencyKind,
    pub base_wavelength: f64,
    pub omegas: Vec<f64>,
}

impl FrequencySet {
    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }
}

pub fn make_frequencies(kind: FrequencyKind, count: usize, base_wavelength: f64) -> Result<FrequencySet> {
    if count == 0 {
        return Err(MastError::Config("frequency count must be at least 1".into()));
    }
    if !(base_wavelength > 0.0 && base_wavelength.is_finite()) {
        return Err(MastError::Config(format!(
            "base wavelength must be positive, got {base_wavelength}"
        )));
    }
    let k_total = count as f64;
    let omegas = (1..=count)
        .map(|k| match kind {
            FrequencyKind::Geometric => TAU * base_wavelength.powf(-(k as f64) / k_total),
            FrequencyKind::Linear => TAU * k as f64 / base_wavelength,
        })
        .collect();
    Ok(FrequencySet {
        kind,
        base_wavelength,
        omegas,
    })
}

/// `(sin x, cos x)` as two separate libm calls. Left to itself the optimizer
/// may fuse them into `sincos`, which can round differently, so results would
/// depend on the build profile.
pub fn sin_cos(x: f64) -> (f64, f64) {
    (std::hint::black_box(x).sin(), std::hint::black_box(x).cos())
}

/// Phase table for rotary encoding of `positions`: per frequency `k`, complex
/// pair `2k` turns by `ω_k·x` and pair `2k+1` by `ω_k·y`.
pub fn rope_phases(positions: &[Position], freqs: &FrequencySet) -> PhaseTable {
    let pairs = 2 * freqs.len();
    let mut cos = Vec::with_capacity(positions.len() * pairs);
    let mut sin = Vec::with_capacity(positions.len() * pairs);
    for p in positions {
        for &w in &freqs.omegas {
            for coord in p {
                let (s, c) = sin_cos(w * coord);
                cos.push(c);
                sin.push(s);
            }
        }
    }
    PhaseTable {
        rows: positions.len(),
        pairs,
        cos,
        sin,
    }
}

/// Rotates a single vector of width `4K` by the phases of `p`.
pub fn rope_rotate(v: &[f64], p: Position, freqs: &FrequencySet) -> Result<Vec<f64>> {
    if v.len() != 4 * freqs.len() {
        return Err(MastError::Config(format!(
            "rotary width {} must equal 4 × {} frequencies",
            v.len(),
            freqs.len()
        )));
    }
    let phases = rope_phases(&[p], freqs);
    let mut out = v.to_vec();
    for m in 0..phases.pairs {
        let (c, s) = (phases.cos[m], phases.sin[m]);
        let (a, b) = (v[2 * m], v[2 * m + 1]);
        out[2 * m] = a * c - b * s;
        out[2 * m + 1] = a * s + b * c;
    }
    Ok(out)
}

/// Sinusoidal encoding in blocks `[sin ωx, cos ωx, sin ωy, cos ωy]`.
pub fn ape_encode(p: Position, freqs: &FrequencySet, dim: usize) -> Result<Vec<f64>> {
    if !dim.is_multiple_of(4) || dim / 4 != freqs.len() {
        return Err(MastError::Config(format!(
            "absolute encoding width {dim} must equal 4 × {} frequencies",
            freqs.len()
        )));
    }
    let mut out = Vec::with_capacity(dim);
    for &w in &freqs.omegas {
        let (sx, cx) = sin_cos(w * p[0]);
        let (sy, cy) = sin_cos(w * p[1]);
        out.extend_from_slice(&[sx, cx, sy, cy]);
    }
    Ok(out)
}

/// Learned encoding: a perceptron from raw position to the model width.
pub fn mlp_pe(tape: &mut Tape, positions: Var, mlp: &Perceptron, slope: f64) -> Result<Var> {
    mlp.apply(tape, positions, slope)
}

/// The encoding strategies a model can be built with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PosEncKind {
    RopeGeometric,
    RopeLinear,
    ApeGeometric,
    ApeLinear,
    Mlp,
    None,
}

impl PosEncKind {
    pub const ALL_ENCODINGS: [PosEncKind; 5] = [
        PosEncKind::ApeGeometric,
        PosEncKind::ApeLinear,
        PosEncKind::Mlp,
        PosEncKind::RopeGeometric,
        PosEncKind::RopeLinear,
    ];

    pub fn frequency_kind(self) -> Option<FrequencyKind> {
        match self {
            PosEncKind::RopeGeometric | PosEncKind::ApeGeometric => Some(FrequencyKind::Geometric),
            PosEncKind::RopeLinear | PosEncKind::ApeLinear => Some(FrequencyKind::Linear),
            PosEncKind::Mlp | PosEncKind::None => None,
        }
    }

    pub fn is_rotary(self) -> bool {
        matches!(self, PosEncKind::RopeGeometric | PosEncKind::RopeLinear)
    }

    pub fn is_absolute(self) -> bool {
        matches!(self, PosEncKind::ApeGeometric | PosEncKind::ApeLinear)
    }
}

impl FromStr for PosEncKind {
    type Err = MastError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rope-g" => Ok(PosEncKind::RopeGeometric),
            "rope-l" => Ok(PosEncKind::RopeLinear),
            "ape-g" => Ok(PosEncKind::ApeGeometric),
            "ape-l" => Ok(PosEncKind::ApeLinear),
            "mlp" => Ok(PosEncKind::Mlp),
            "none" => Ok(PosEncKind::None),
            other => Err(MastError::Parse(format!(
                "unknown positional encoding `{other}` (expected rope-g, rope-l, ape-g, ape-l, mlp, none)"
            ))),
        }
    }
}

impl fmt::Display for PosEncKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PosEncKind::RopeGeometric => "rope-g",
            PosEncKind::RopeLinear => "rope-l",
            PosEncKind::ApeGeometric => "ape-g",
            PosEncKind::ApeLinear => "ape-l",
            PosEncKind::Mlp => "mlp",
            PosEncKind::None => "none",
        };
        f.write_str(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::stream;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn frequency_formulas() {
        let lin = make_frequencies(FrequencyKind::Linear, 2, 1000.0).unwrap();
        assert!((lin.omegas[0] - TAU / 1000.0).abs() < 1e-15);
        assert!((lin.omegas[1] - 2.0 * TAU / 1000.0).abs() < 1e-15);
        let g1 = make_frequencies(FrequencyKind::Geometric, 1, 1000.0).unwrap();
        assert!((g1.omegas[0] - TAU / 1000.0).abs() < 1e-15);
        let g2 = make_frequencies(FrequencyKind::Geometric, 2, 1000.0).unwrap();
        assert!((g2.omegas[0] - 0.19869).abs() < 1e-5);
        assert!((g2.omegas[1] - 0.0062832).abs() < 1e-7);
    }

    #[test]
    fn single_frequency_sets_coincide() {
        let g = make_frequencies(FrequencyKind::Geometric, 1, 400.0).unwrap();
        let l = make_frequencies(FrequencyKind::Linear, 1, 400.0).unwrap();
        assert!((g.omegas[0] - l.omegas[0]).abs() < 1e-15);
    }

    #[test]
    fn invalid_frequency_arguments() {
        assert!(make_frequencies(FrequencyKind::Linear, 0, 10.0).is_err());
        assert!(make_frequencies(FrequencyKind::Linear, 2, 0.0).is_err());
        assert!(make_frequencies(FrequencyKind::Geometric, 2, -3.0).is_err());
    }

    #[test]
    fn rope_zero_phase_and_quarter_period() {
        let f = make_frequencies(FrequencyKind::Linear, 1, 1000.0).unwrap();
        let v = [0.3, -0.7, 1.1, 0.2];
        assert_eq!(rope_rotate(&v, [0.0, 0.0], &f).unwrap(), v.to_vec());
        let r = rope_rotate(&v, [250.0, 0.0], &f).unwrap();
        assert!((r[0] - 0.7).abs() < 1e-12 && (r[1] - 0.3).abs() < 1e-12);
        assert_eq!(&r[2..], &v[2..]);
    }

    #[test]
    fn rope_rejects_bad_width() {
        let f = make_frequencies(FrequencyKind::Linear, 1, 1000.0).unwrap();
        assert!(rope_rotate(&[1.0; 6], [0.0, 0.0], &f).is_err());
    }

    #[test]
    fn ape_examples() {
        let f = make_frequencies(FrequencyKind::Linear, 3, 500.0).unwrap();
        assert_eq!(
            ape_encode([0.0, 0.0], &f, 12).unwrap(),
            vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]
        );
        let e = ape_encode([123.4, -56.7], &f, 12).unwrap();
        assert!((e.iter().map(|v| v * v).sum::<f64>() - 6.0).abs() < 1e-12);
        // Linear sets alias with period λ.
        let a = ape_encode([500.0, 3.0], &f, 12).unwrap();
        let b = ape_encode([0.0, 3.0], &f, 12).unwrap();
        for k in 0..3 {
            assert!((a[4 * k] - b[4 * k]).abs() < 1e-12);
            assert!((a[4 * k + 1] - b[4 * k + 1]).abs() < 1e-12);
        }
        assert!(ape_encode([0.0, 0.0], &f, 10).is_err());
    }

    #[test]
    fn rope_shift_leaves_inner_products_unchanged() {
        let f = make_frequencies(FrequencyKind::Geometric, 3, 1000.0).unwrap();
        let mut rng = stream(3, 0);
        for _ in 0..50 {
            let v: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let p = [rng.gen_range(0.0..1000.0), rng.gen_range(0.0..1000.0)];
            let q = [rng.gen_range(0.0..1000.0), rng.gen_range(0.0..1000.0)];
            let c = [rng.gen_range(-5000.0..5000.0), rng.gen_range(-5000.0..5000.0)];
            let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
            let base = dot(&rope_rotate(&v, p, &f).unwrap(), &rope_rotate(&w, q, &f).unwrap());
            let moved = dot(
                &rope_rotate(&v, [p[0] + c[0], p[1] + c[1]], &f).unwrap(),
                &rope_rotate(&w, [q[0] + c[0], q[1] + c[1]], &f).unwrap(),
            );
            assert!((base - moved).abs() < 1e-9, "{base} vs {moved}");
        }
    }

    #[test]
    fn encoding_names_round_trip() {
        for kind in PosEncKind::ALL_ENCODINGS {
            assert_eq!(kind.to_string().parse::<PosEncKind>().unwrap(), kind);
        }
        assert!("rope".parse::<PosEncKind>().is_err());
    }

    proptest! {
        #[test]
        fn rope_is_a_linear_isometry(
            v in prop::collection::vec(-10.0f64..10.0, 8),
            w in prop::collection::vec(-10.0f64..10.0, 8),
            x in -1e4f64..1e4, y in -1e4f64..1e4, a in -3.0f64..3.0,
        ) {
            let f = make_frequencies(FrequencyKind::Linear, 2, 1000.0).unwrap();
            let rv = rope_rotate(&v, [x, y], &f).unwrap();
            let n0: f64 = v.iter().map(|t| t * t).sum();
            let n1: f64 = rv.iter().map(|t| t * t).sum();
            prop_assert!((n0.sqrt() - n1.sqrt()).abs() <= 1e-12 * (1.0 + n0.sqrt()));
            let combo: Vec<f64> = v.iter().zip(&w).map(|(p, q)| a * p + q).collect();
            let lhs = rope_rotate(&combo, [x, y], &f).unwrap();
            let rw = rope_rotate(&w, [x, y], &f).unwrap();
            for i in 0..8 {
                prop_assert!((lhs[i] - (a * rv[i] + rw[i])).abs() < 1e-9);
            }
        }
    }
}
