//! Height and depth discretization.
//!
//! Every strategy is defined by its edge sequence `e_0 < e_1 < ... < e_N`
//! with `e_0 = range_min` and `e_N = range_max`. Bin `i` is the half-open
//! interval `[e_i, e_{i+1})`, except the last bin which also contains
//! `range_max`.
//!
//! | strategy   | edge(i)                                                        |
//! |------------|----------------------------------------------------------------|
//! | `UD`       | `lo + (hi - lo) * i / N`                                       |
//! | `SID`      | `exp(ln(1) + i/N * ln(hi + s)) - s`, with `s = 1 - lo`         |
//! | `LID`      | `lo + (hi - lo) * i (i + 1) / (N (N + 1))`                     |
//! | `DID`      | `lo + (hi - lo) * (i / N)^alpha`                               |
//! | `DEPTH_UD` | same as `UD`, used for depth                                   |

use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "UD")]
    Uniform,
    #[serde(rename = "SID")]
    SpacingIncreasing,
    #[serde(rename = "LID")]
    LinearIncreasing,
    #[serde(rename = "DID")]
    DynamicIncreasing,
    #[serde(rename = "DEPTH_UD")]
    DepthUniform,
}

impl Strategy {
    pub fn is_depth(self) -> bool {
        matches!(self, Strategy::DepthUniform)
    }

    pub fn is_height(self) -> bool {
        !self.is_depth()
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Uniform => "UD",
            Strategy::SpacingIncreasing => "SID",
            Strategy::LinearIncreasing => "LID",
            Strategy::DynamicIncreasing => "DID",
            Strategy::DepthUniform => "DEPTH_UD",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A validated discretization of `[range_min, range_max]` into `n_bins` bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BinSpecRaw", into = "BinSpecRaw")]
pub struct BinSpec {
    strategy: Strategy,
    n_bins: usize,
    range_min: f64,
    range_max: f64,
    alpha: f64,
    edges: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct BinSpecRaw {
    strategy: Strategy,
    n_bins: usize,
    range_min: f64,
    range_max: f64,
    #[serde(default = "one")]
    alpha: f64,
}

fn one() -> f64 {
    1.0
}

impl TryFrom<BinSpecRaw> for BinSpec {
    type Error = Error;
    fn try_from(r: BinSpecRaw) -> Result<Self> {
        BinSpec::new(r.strategy, r.n_bins, r.range_min, r.range_max, r.alpha)
    }
}

impl From<BinSpec> for BinSpecRaw {
    fn from(b: BinSpec) -> Self {
        BinSpecRaw {
            strategy: b.strategy,
            n_bins: b.n_bins,
            range_min: b.range_min,
            range_max: b.range_max,
            alpha: b.alpha,
        }
    }
}

impl BinSpec {
    /// `alpha` is only used by `DID`; other strategies ignore it.
    pub fn new(
        strategy: Strategy,
        n_bins: usize,
        range_min: f64,
        range_max: f64,
        alpha: f64,
    ) -> Result<Self> {
        if n_bins == 0 {
            return Err(Error::InvalidBinSpec("n_bins must be at least 1".into()));
        }
        if !(range_min.is_finite() && range_max.is_finite() && range_min < range_max) {
            return Err(Error::InvalidBinSpec(format!(
                "range [{range_min}, {range_max}] is empty or non-finite"
            )));
        }
        if strategy == Strategy::DynamicIncreasing && !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidBinSpec(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        if strategy == Strategy::DepthUniform && range_min <= 0.0 {
            return Err(Error::InvalidBinSpec(format!(
                "depth range must be positive, got min {range_min}"
            )));
        }
        let mut spec = Self {
            strategy,
            n_bins,
            range_min,
            range_max,
            alpha: if strategy == Strategy::DynamicIncreasing {
                alpha
            } else {
                1.0
            },
            edges: Vec::new(),
        };
        spec.edges = (0..=n_bins).map(|i| spec.edge_formula(i)).collect();
        if let Some(w) = spec.edges.windows(2).find(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidBinSpec(format!(
                "edges are not strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(spec)
    }

    pub fn uniform(n_bins: usize, range_min: f64, range_max: f64) -> Result<Self> {
        Self::new(Strategy::Uniform, n_bins, range_min, range_max, 1.0)
    }

    pub fn dynamic(n_bins: usize, range_min: f64, range_max: f64, alpha: f64) -> Result<Self> {
        Self::new(Strategy::DynamicIncreasing, n_bins, range_min, range_max, alpha)
    }

    pub fn depth_uniform(n_bins: usize, range_min: f64, range_max: f64) -> Result<Self> {
        Self::new(Strategy::DepthUniform, n_bins, range_min, range_max, 1.0)
    }

    /// 90 height bins over [-1, 1] m.
    pub fn default_height() -> Self {
        Self::uniform(90, -1.0, 1.0).expect("valid")
    }

    /// 206 depth bins over [1, 104] m.
    pub fn default_depth() -> Self {
        Self::depth_uniform(206, 1.0, 104.0).expect("valid")
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn range_min(&self) -> f64 {
        self.range_min
    }

    pub fn range_max(&self) -> f64 {
        self.range_max
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.range_min && value <= self.range_max
    }

    fn edge_formula(&self, i: usize) -> f64 {
        let n = self.n_bins;
        if i == 0 {
            return self.range_min;
        }
        if i == n {
            return self.range_max;
        }
        let (lo, hi) = (self.range_min, self.range_max);
        let frac = i as f64 / n as f64;
        match self.strategy {
            Strategy::Uniform | Strategy::DepthUniform => lo + (hi - lo) * frac,
            Strategy::DynamicIncreasing => lo + (hi - lo) * frac.powf(self.alpha),
            Strategy::SpacingIncreasing => {
                let shift = 1.0 - lo;
                let d_hi = hi + shift;
                (frac * d_hi.ln()).exp() - shift
            }
            Strategy::LinearIncreasing => {
                let i = i as f64;
                let n = n as f64;
                lo + (hi - lo) * i * (i + 1.0) / (n * (n + 1.0))
            }
        }
    }

    /// All `n_bins + 1` edges.
    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn edge(&self, i: usize) -> f64 {
        self.edges[i]
    }

    pub fn width(&self, i: usize) -> f64 {
        self.edges[i + 1] - self.edges[i]
    }

    /// Closed-form inverse of the edge map, before edge reconciliation.
    fn approx_index(&self, value: f64) -> f64 {
        let (lo, hi) = (self.range_min, self.range_max);
        let n = self.n_bins as f64;
        let t = ((value - lo) / (hi - lo)).clamp(0.0, 1.0);
        match self.strategy {
            Strategy::Uniform | Strategy::DepthUniform => n * t,
            Strategy::DynamicIncreasing => n * t.powf(1.0 / self.alpha),
            Strategy::SpacingIncreasing => {
                let shift = 1.0 - lo;
                n * (value + shift).ln() / (hi + shift).ln()
            }
            Strategy::LinearIncreasing => {
                // i (i + 1) = t * n (n + 1)
                let k = t * n * (n + 1.0);
                (-1.0 + (1.0 + 4.0 * k).sqrt()) / 2.0
            }
        }
    }

    /// Index of the bin containing `value`.
    ///
    /// The closed form (for `DID`: `floor(N * ((v - lo) / (hi - lo))^(1/alpha))`)
    /// is evaluated first and then reconciled with the stored edges so that
    /// the result always agrees with [`BinSpec::edges`]. `range_max` maps to
    /// the last bin.
    pub fn value_to_bin(&self, value: f64) -> Result<usize> {
        if !self.contains(value) {
            return Err(Error::OutOfRange {
                value,
                min: self.range_min,
                max: self.range_max,
            });
        }
        let last = self.n_bins - 1;
        let mut idx = (self.approx_index(value).floor().max(0.0) as usize).min(last);
        while idx > 0 && value < self.edges[idx] {
            idx -= 1;
        }
        while idx < last && value >= self.edges[idx + 1] {
            idx += 1;
        }
        Ok(idx)
    }

    /// Representative value of a bin: the midpoint of its edges.
    pub fn bin_to_value(&self, index: usize) -> Result<f64> {
        if index >= self.n_bins {
            return Err(Error::IndexOutOfRange {
                index,
                n_bins: self.n_bins,
            });
        }
        Ok(0.5 * (self.edges[index] + self.edges[index + 1]))
    }

    /// Representative values of all bins.
    pub fn representatives(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Writes `index,lower,upper,width,center` rows.
    pub fn write_edges_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "index,lower,upper,width,center")?;
        for i in 0..self.n_bins {
            let (a, b) = (self.edges[i], self.edges[i + 1]);
            writeln!(out, "{i},{a},{b},{},{}", b - a, 0.5 * (a + b))?;
        }
        Ok(())
    }
}
