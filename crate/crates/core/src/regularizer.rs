//! Activity penalties applied to post-ReLU activation maps.
//!
//! Five sparsity-inducing penalties are provided: squared L2, L1, the
//! fractional `Lp` surrogate for L0 (0 < p < 1), Hoyer (L1/L2) and
//! Hoyer-Square ((L1/L2)^2). Values and gradients are computed in `f64`
//! regardless of the storage scalar.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Guard used in `Lp` gradients and in the Hoyer denominators.
pub const EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "p")]
pub enum RegKind {
    None,
    L2,
    L1,
    Lp(f64),
    Hoyer,
    HoyerSquare,
}

impl RegKind {
    /// The five trainable penalties with the `Lp` exponents used in the sweeps.
    pub fn sweep_kinds() -> Vec<RegKind> {
        vec![
            RegKind::L2,
            RegKind::L1,
            RegKind::Lp(0.5),
            RegKind::Lp(0.01),
            RegKind::Hoyer,
            RegKind::HoyerSquare,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if let RegKind::Lp(p) = *self {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Usage(format!("Lp exponent must lie in (0,1), got {p}")));
            }
        }
        Ok(())
    }

    pub fn is_lp_family(&self) -> bool {
        matches!(self, RegKind::L2 | RegKind::L1 | RegKind::Lp(_))
    }

    pub fn is_hoyer_family(&self) -> bool {
        matches!(self, RegKind::Hoyer | RegKind::HoyerSquare)
    }
}

impl fmt::Display for RegKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegKind::None => write!(f, "none"),
            RegKind::L2 => write!(f, "L2"),
            RegKind::L1 => write!(f, "L1"),
            RegKind::Lp(p) => write!(f, "L{p}"),
            RegKind::Hoyer => write!(f, "H"),
            RegKind::HoyerSquare => write!(f, "Hs"),
        }
    }
}

impl FromStr for RegKind {
    type Err = Error;

    /// Accepts the table labels (`L2`, `L1`, `L0.5`, `H`, `Hs`, `none`) and the
    /// command-line names (`l2`, `l1`, `hoyer`, `hoyer-square`).
    fn from_str(s: &str) -> Result<Self> {
        let kind = match s.trim() {
            "none" | "None" | "baseline" => RegKind::None,
            "L2" | "l2" => RegKind::L2,
            "L1" | "l1" => RegKind::L1,
            "H" | "hoyer" | "Hoyer" => RegKind::Hoyer,
            "Hs" | "HS" | "hs" | "hoyer-square" | "HoyerSquare" => RegKind::HoyerSquare,
            other => {
                let p = other
                    .strip_prefix('L')
                    .or_else(|| other.strip_prefix('l'))
                    .and_then(|rest| rest.parse::<f64>().ok())
                    .ok_or_else(|| Error::Usage(format!("unknown regularizer '{other}'")))?;
                RegKind::Lp(p)
            }
        };
        kind.validate()?;
        Ok(kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Penalty divided by the number of elements in the map.
    PerElementMean,
    /// Penalty summed over the map, as written.
    #[default]
    RawSum,
}

/// Which penalty, and how strongly it enters the composite loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegSpec {
    pub kind: RegKind,
    pub lambda: f64,
    #[serde(default)]
    pub normalization: Normalization,
}

impl RegSpec {
    pub fn none() -> Self {
        RegSpec {
            kind: RegKind::None,
            lambda: 0.0,
            normalization: Normalization::default(),
        }
    }

    pub fn new(kind: RegKind, lambda: f64) -> Self {
        RegSpec {
            kind,
            lambda,
            normalization: Normalization::default(),
        }
    }

    pub fn with_normalization(mut self, normalization: Normalization) -> Self {
        self.normalization = normalization;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.kind.validate()?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Usage(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        Ok(())
    }

    /// True when the penalty contributes nothing to the loss.
    pub fn is_inactive(&self) -> bool {
        self.kind == RegKind::None || self.lambda == 0.0
    }

    fn scale(&self, len: usize) -> f64 {
        match self.normalization {
            Normalization::RawSum => 1.0,
            Normalization::PerElementMean => 1.0 / len.max(1) as f64,
        }
    }

    /// `psi(X)` for one activation map, normalized. Lambda is not applied.
    pub fn penalty<T: Scalar>(&self, x: &[T]) -> Result<f64> {
        Ok(penalty(self.kind, x)? * self.scale(x.len()))
    }

    /// Gradient of [`RegSpec::penalty`] with respect to each element.
    pub fn penalty_grad<T: Scalar>(&self, x: &[T]) -> Result<Vec<f64>> {
        let mut g = penalty_grad(self.kind, x)?;
        let s = self.scale(x.len());
        if s != 1.0 {
            g.iter_mut().for_each(|v| *v *= s);
        }
        Ok(g)
    }
}

impl fmt::Display for RegSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} @ {:e}", self.kind, self.lambda)
    }
}

fn check_finite<T: Scalar>(x: &[T]) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Numeric(format!("non-finite activation at index {i}"))),
        None => Ok(()),
    }
}

struct Sums {
    l1: f64,
    sq: f64,
}

fn sums<T: Scalar>(x: &[T]) -> Sums {
    let mut l1 = 0.0;
    let mut sq = 0.0;
    for &v in x {
        let v = v.to_acc();
        l1 += v.abs();
        sq += v * v;
    }
    Sums { l1, sq }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Raw (un-normalized) penalty value.
pub fn penalty<T: Scalar>(kind: RegKind, x: &[T]) -> Result<f64> {
    check_finite(x)?;
    let value = match kind {
        RegKind::None => 0.0,
        RegKind::L1 => sums(x).l1,
        // Sum of squares, not the root norm.
        RegKind::L2 => sums(x).sq,
        RegKind::Lp(p) => x.iter().map(|v| v.to_acc().abs().powf(p)).sum(),
        RegKind::Hoyer => {
            let s = sums(x);
            s.l1 / (s.sq + EPS).sqrt()
        }
        RegKind::HoyerSquare => {
            let s = sums(x);
            s.l1 * s.l1 / (s.sq + EPS)
        }
    };
    Ok(value)
}

/// Analytic gradient of [`penalty`], finite everywhere including the zero map.
pub fn penalty_grad<T: Scalar>(kind: RegKind, x: &[T]) -> Result<Vec<f64>> {
    check_finite(x)?;
    let grad: Vec<f64> = match kind {
        RegKind::None => vec![0.0; x.len()],
        RegKind::L1 => x.iter().map(|v| sign(v.to_acc())).collect(),
        RegKind::L2 => x.iter().map(|v| 2.0 * v.to_acc()).collect(),
        RegKind::Lp(p) => x
            .iter()
            .map(|v| {
                let v = v.to_acc();
                let mag = p * (v.abs() + EPS).powf(p - 1.0);
                if v < 0.0 {
                    -mag
                } else {
                    mag
                }
            })
            .collect(),
        RegKind::Hoyer => {
            let s = sums(x);
            let d = s.sq + EPS;
            let root = d.sqrt();
            let d32 = d * root;
            x.iter()
                .map(|v| {
                    let v = v.to_acc();
                    sign(v) / root - s.l1 * v / d32
                })
                .collect()
        }
        RegKind::HoyerSquare => {
            let s = sums(x);
            let d = s.sq + EPS;
            x.iter()
                .map(|v| {
                    let v = v.to_acc();
                    2.0 * s.l1 * sign(v) / d - 2.0 * s.l1 * s.l1 * v / (d * d)
                })
                .collect()
        }
    };
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite {kind} gradient at index {i}")));
    }
    Ok(grad)
}

/// Penalty values sampled on a square grid of 2-element vectors.
#[derive(Debug, Clone)]
pub struct LandscapeGrid {
    pub kind: RegKind,
    /// Coordinates along each axis, ascending.
    pub axis: Vec<f64>,
    /// `values[i * n + j]` is the penalty at `(axis[i], axis[j])`.
    pub values: Vec<f64>,
}

impl LandscapeGrid {
    pub fn resolution(&self) -> usize {
        self.axis.len()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.axis.len() + j]
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "x1,x2,value").map_err(io)?;
        let n = self.axis.len();
        for i in 0..n {
            for j in 0..n {
                writeln!(w, "{},{},{}", self.axis[i], self.axis[j], self.at(i, j)).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }
}

/// Evaluates `kind` (raw sum) on `[|x1|, |x2|]` over `[-range, range]^2`.
pub fn landscape_grid(kind: RegKind, range: f64, resolution: usize) -> Result<LandscapeGrid> {
    if resolution < 2 || !(range > 0.0) {
        return Err(Error::Usage(format!(
            "landscape needs resolution >= 2 and range > 0 (got {resolution}, {range})"
        )));
    }
    kind.validate()?;
    let step = 2.0 * range / (resolution - 1) as f64;
    let axis: Vec<f64> = (0..resolution).map(|i| -range + step * i as f64).collect();
    let mut values = Vec::with_capacity(resolution * resolution);
    for &x1 in &axis {
        for &x2 in &axis {
            values.push(penalty(kind, &[x1.abs(), x2.abs()])?);
        }
    }
    Ok(LandscapeGrid { kind, axis, values })
}
