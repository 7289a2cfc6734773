//! Importance density over a square grid of 1 m cells, built from truncated
//! isotropic Gaussians.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{MastError, Result};
use crate::kernel::stream;
use crate::posenc::Position;

const IDF_STREAM: u64 = 0x1df;

#[derive(Clone, Debug, PartialEq)]
pub struct Feature {
    pub center: Position,
    pub amplitude: f64,
    pub sigma: f64,
}

impl Feature {
    /// Contributions vanish beyond two standard deviations.
    pub fn truncation(&self) -> f64 {
        2.0 * self.sigma
    }

    pub fn value(&self, q: Position) -> f64 {
        let (dx, dy) = (q[0] - self.center[0], q[1] - self.center[1]);
        let d2 = dx * dx + dy * dy;
        let t = self.truncation();
        if d2 > t * t {
            0.0
        } else {
            self.amplitude * (-d2 / (2.0 * self.sigma * self.sigma)).exp()
        }
    }
}

/// Grid-evaluated importance field. Cell `(x, y)` covers `[x, x+1) × [y, y+1)`
/// and is represented by its center.
#[derive(Clone, Debug, PartialEq)]
pub struct Idf {
    size: usize,
    features: Vec<Feature>,
    values: Vec<f64>,
    /// Indices of cells with positive importance, ascending.
    support: Vec<u32>,
}

pub fn cell_center(size: usize, idx: usize) -> Position {
    [(idx % size) as f64 + 0.5, (idx / size) as f64 + 0.5]
}

impl Idf {
    pub fn from_features(size: usize, features: Vec<Feature>) -> Result<Idf> {
        if size == 0 {
            return Err(MastError::Config("environment size must be positive".into()));
        }
        let mut values = vec![0.0; size * size];
        for f in &features {
            if !(f.sigma > 0.0) || !(f.amplitude >= 0.0) {
                return Err(MastError::Config(format!("invalid feature {f:?}")));
            }
            let t = f.truncation();
            let lo = |c: f64| ((c - t - 1.0).floor().max(0.0) as usize).min(size);
            let hi = |c: f64| ((c + t + 1.0).ceil().max(0.0) as usize).min(size);
            for y in lo(f.center[1])..hi(f.center[1]) {
                for x in lo(f.center[0])..hi(f.center[0]) {
                    values[y * size + x] += f.value([x as f64 + 0.5, y as f64 + 0.5]);
                }
            }
        }
        let support = (0..values.len() as u32).filter(|&i| values[i as usize] > 0.0).collect();
        Ok(Idf {
            size,
            features,
            values,
            support,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn support(&self) -> &[u32] {
        &self.support
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.size + x]
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        let mut s = format!("{} {}\n", self.size, self.features.len());
        for f in &self.features {
            writeln!(s, "{} {} {} {}", f.center[0], f.center[1], f.amplitude, f.sigma).unwrap();
        }
        fs::write(path, s)?;
        Ok(())
    }

    /// Reads a header `size count` followed by `cx cy amplitude sigma` lines.
    pub fn read_file(path: &Path) -> Result<Idf> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let bad = |what: &str| MastError::Parse(format!("{}: {what}", path.display()));
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty file"))?.split_whitespace().collect();
        if header.len() != 2 {
            return Err(bad("header must be `size count`"));
        }
        let size: f64 = header[0].parse().map_err(|_| bad("bad size"))?;
        let count: usize = header[1].parse().map_err(|_| bad("bad feature count"))?;
        if size < 1.0 || size.fract() != 0.0 {
            return Err(bad("size must be a positive whole number of meters"));
        }
        let mut features = Vec::with_capacity(count);
        for line in lines {
            let v: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| bad(&format!("bad number in `{line}`"))))
                .collect::<Result<_>>()?;
            if v.len() != 4 {
                return Err(bad(&format!("expected `cx cy amplitude sigma`, got `{line}`")));
            }
            features.push(Feature {
                center: [v[0], v[1]],
                amplitude: v[2],
                sigma: v[3],
            });
        }
        if features.len() != count {
            return Err(bad(&format!("header promises {count} features, found {}", features.len())));
        }
        Idf::from_features(size as usize, features)
    }
}

/// Centers uniform over the square, amplitudes uniform in `[0.6, 1)`.
pub fn build_idf(seed: u64, size: usize, count: usize, sigma: f64) -> Result<Idf> {
    let mut rng = stream(seed, IDF_STREAM);
    let extent = size as f64;
    let features = (0..count)
        .map(|_| Feature {
            center: [rng.gen_range(0.0..extent), rng.gen_range(0.0..extent)],
            amplitude: rng.gen_range(0.6..1.0),
            sigma,
        })
        .collect();
    Idf::from_features(size, features)
}
