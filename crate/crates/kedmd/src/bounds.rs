//! Axis-aligned boxes: domains, control/state constraint sets, grids.

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};

/// Axis-aligned box `[lo_1, hi_1] x ... x [lo_n, hi_n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisBox {
    lo: DVector<f64>,
    hi: DVector<f64>,
}

impl AxisBox {
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                what: "box bounds",
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if lo.is_empty() {
            return Err(Error::Empty("box"));
        }
        for a in 0..lo.len() {
            if !lo[a].is_finite() || !hi[a].is_finite() || lo[a] > hi[a] {
                return Err(Error::InvalidArgument {
                    what: "box bounds",
                    why: format!("axis {a}: [{}, {}] is not a valid interval", lo[a], hi[a]),
                });
            }
        }
        Ok(Self { lo, hi })
    }

    /// The cube `[-half_width, half_width]^dim`.
    pub fn cube(dim: usize, half_width: f64) -> Self {
        Self {
            lo: DVector::from_element(dim, -half_width),
            hi: DVector::from_element(dim, half_width),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &DVector<f64> {
        &self.lo
    }

    pub fn hi(&self) -> &DVector<f64> {
        &self.hi
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        (0..self.dim()).all(|a| x[a] >= self.lo[a] && x[a] <= self.hi[a])
    }

    /// Strict interior membership, used for the `0 in int(U)` style checks.
    pub fn contains_interior(&self, x: &DVector<f64>) -> bool {
        (0..self.dim()).all(|a| x[a] > self.lo[a] && x[a] < self.hi[a])
    }

    /// Largest componentwise constraint violation (0 inside the box).
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        (0..self.dim())
            .map(|a| (self.lo[a] - x[a]).max(x[a] - self.hi[a]).max(0.0))
            .fold(0.0, f64::max)
    }

    /// Componentwise clamp onto the box.
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.dim(), |a, _| x[a].clamp(self.lo[a], self.hi[a]))
    }

    /// Pontryagin difference with the infinity-norm ball of radius `amount`:
    /// every side moves inward by `amount`. Errors with the collapsing axis.
    pub fn shrink(&self, amount: f64) -> std::result::Result<Self, usize> {
        let lo = self.lo.add_scalar(amount);
        let hi = self.hi.add_scalar(-amount);
        for a in 0..self.dim() {
            if lo[a] > hi[a] {
                return Err(a);
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_fn(self.dim(), |a, _| {
            if self.lo[a] == self.hi[a] {
                self.lo[a]
            } else {
                rng.gen_range(self.lo[a]..=self.hi[a])
            }
        })
    }

    /// Uniform grid with `resolution` points per axis, endpoints included.
    pub fn grid(&self, resolution: usize) -> Vec<DVector<f64>> {
        assert!(resolution >= 2, "grid needs at least 2 points per axis");
        let n = self.dim();
        let mut points = Vec::with_capacity(resolution.pow(n as u32));
        let mut index = vec![0usize; n];
        loop {
            let p = DVector::from_fn(n, |a, _| {
                self.lo[a] + (self.hi[a] - self.lo[a]) * index[a] as f64 / (resolution - 1) as f64
            });
            points.push(p);
            // mixed-radix increment
            let mut axis = 0;
            loop {
                index[axis] += 1;
                if index[axis] < resolution {
                    break;
                }
                index[axis] = 0;
                axis += 1;
                if axis == n {
                    return points;
                }
            }
        }
    }
}
