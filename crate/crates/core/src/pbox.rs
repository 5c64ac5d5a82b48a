//! Axis-aligned scheduling box and its corner enumeration.

use nalgebra::DVector;

use crate::error::{Error, Result};

pub const DEFAULT_MARGIN: f64 = 0.05;
pub const DEFAULT_FLOOR: f64 = 1e-3;

/// Compact scheduling set `[lower, upper] ⊂ ℝ^{n_p}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PBox {
    lower: DVector<f64>,
    upper: DVector<f64>,
    vertices: Vec<DVector<f64>>,
}

impl PBox {
    pub fn from_bounds(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::dim("scheduling box bounds", lower.len(), upper.len()));
        }
        for i in 0..lower.len() {
            if !(lower[i].is_finite() && upper[i].is_finite()) {
                return Err(Error::NonFinite(format!("scheduling box axis {i}")));
            }
            if lower[i] > upper[i] {
                return Err(Error::Parameter(format!(
                    "scheduling box axis {i}: lower {} exceeds upper {}",
                    lower[i], upper[i]
                )));
            }
        }
        let vertices = corners(&lower, &upper);
        Ok(Self { lower, upper, vertices })
    }

    /// Empty box for `n_p = 0`, which has the single vertex `()`.
    pub fn empty() -> Self {
        Self::from_bounds(DVector::zeros(0), DVector::zeros(0)).expect("empty box is valid")
    }

    pub fn n_p(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    /// All `2^{n_p}` corners; the first axis varies slowest and each axis
    /// lists its lower bound before its upper bound.
    pub fn vertices(&self) -> &[DVector<f64>] {
        &self.vertices
    }

    pub fn contains(&self, p: &DVector<f64>) -> bool {
        p.len() == self.n_p() && p.iter().enumerate().all(|(i, &v)| self.lower[i] <= v && v <= self.upper[i])
    }

    /// Map `t ∈ [0,1]^{n_p}` affinely onto the box.
    pub fn interpolate(&self, t: &DVector<f64>) -> DVector<f64> {
        self.lower.zip_map(&self.upper, |l, u| (l, u)).zip_map(t, |(l, u), s| l + s * (u - l))
    }
}

fn corners(lower: &DVector<f64>, upper: &DVector<f64>) -> Vec<DVector<f64>> {
    let n = lower.len();
    (0..1usize << n)
        .map(|mask| {
            DVector::from_iterator(
                n,
                (0..n).map(|i| {
                    let bit = (mask >> (n - 1 - i)) & 1;
                    if bit == 0 {
                        lower[i]
                    } else {
                        upper[i]
                    }
                }),
            )
        })
        .collect()
}

/// Bounding box of scheduling samples, each axis widened by `margin` times
/// its sample range (split evenly over both ends). Axes with zero range are
/// widened by `floor` on both sides instead.
pub fn build_pbox(samples: &[DVector<f64>], margin: f64, floor: f64) -> Result<PBox> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InsufficientData("scheduling box needs at least one sample".into()))?;
    if !(margin.is_finite() && margin >= 0.0) {
        return Err(Error::Parameter(format!("margin must be finite and non-negative, got {margin}")));
    }
    if !(floor.is_finite() && floor > 0.0) {
        return Err(Error::Parameter(format!("degenerate-axis floor must be positive, got {floor}")));
    }
    let n = first.len();
    let mut lo = first.clone();
    let mut hi = first.clone();
    for s in samples {
        if s.len() != n {
            return Err(Error::dim("scheduling sample", n, s.len()));
        }
        for i in 0..n {
            lo[i] = lo[i].min(s[i]);
            hi[i] = hi[i].max(s[i]);
        }
    }
    for i in 0..n {
        let range = hi[i] - lo[i];
        let pad = if range > 0.0 { 0.5 * margin * range } else { floor };
        lo[i] -= pad;
        hi[i] += pad;
    }
    PBox::from_bounds(lo, hi)
}
