use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strictly increasing bid prices, EUR/MWh.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceGrid {
    steps: Vec<f64>,
}

impl PriceGrid {
    pub fn new(steps: Vec<f64>) -> Result<Self> {
        if steps.len() < 2 {
            return Err(Error::InvalidArgument(
                "price grid needs at least 2 steps".into(),
            ));
        }
        if steps.iter().any(|s| !s.is_finite()) || steps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(format!(
                "price grid {steps:?} is not strictly increasing"
            )));
        }
        Ok(Self { steps })
    }

    /// `n` equally spaced steps spanning `[lo, hi]`; a degenerate span is
    /// widened by 1 EUR/MWh on each side.
    pub fn spanning(lo: f64, hi: f64, n: usize) -> Result<Self> {
        let (lo, hi) = if hi - lo < 1e-9 {
            (lo - 1.0, hi + 1.0)
        } else {
            (lo, hi)
        };
        let n = n.max(2);
        let mut steps: Vec<f64> = (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect();
        steps[0] = lo;
        steps[n - 1] = hi;
        Self::new(steps)
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn lo(&self) -> f64 {
        self.steps[0]
    }

    pub fn hi(&self) -> f64 {
        self.steps[self.steps.len() - 1]
    }

    pub fn clip(&self, price: f64) -> f64 {
        price.clamp(self.lo(), self.hi())
    }

    /// Bracketing segment `i` (lowest match) and weight on step `i + 1`.
    pub fn weights(&self, price: f64) -> Result<(usize, f64)> {
        if !(price >= self.lo() && price <= self.hi()) {
            return Err(Error::OutOfGrid {
                price,
                lo: self.lo(),
                hi: self.hi(),
            });
        }
        let i = self
            .steps
            .windows(2)
            .position(|w| price <= w[1])
            .unwrap_or(self.steps.len() - 2);
        let (a, b) = (self.steps[i], self.steps[i + 1]);
        Ok((i, (price - a) / (b - a)))
    }
}

/// Non-increasing volumes on a price grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BidCurve {
    pub grid: PriceGrid,
    pub volumes: Vec<f64>,
}

impl BidCurve {
    pub fn new(grid: PriceGrid, volumes: Vec<f64>) -> Result<Self> {
        if volumes.len() != grid.len() {
            return Err(Error::Shape(format!(
                "{} volumes on a {}-step grid",
                volumes.len(),
                grid.len()
            )));
        }
        if volumes.iter().any(|v| !v.is_finite()) || volumes.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidArgument(format!(
                "bid volumes {volumes:?} are not non-increasing"
            )));
        }
        Ok(Self { grid, volumes })
    }

    /// Builds a curve from solver output, removing sub-tolerance increases
    /// with a running minimum.
    pub fn from_solution(grid: PriceGrid, raw: &[f64]) -> Result<Self> {
        let mut volumes = Vec::with_capacity(raw.len());
        let mut floor = f64::INFINITY;
        for &v in raw {
            let v = if v.abs() < 1e-12 { 0.0 } else { v };
            floor = floor.min(v);
            volumes.push(floor);
        }
        Self::new(grid, volumes)
    }

    pub fn is_non_increasing(&self) -> bool {
        self.volumes.windows(2).all(|w| w[1] <= w[0])
    }
}

/// Linear interpolation of accepted volume at `clearing_price`.
pub fn interpolate_volume(curve: &BidCurve, clearing_price: f64) -> Result<f64> {
    let (i, w) = curve.grid.weights(clearing_price)?;
    let steps = curve.grid.steps();
    let (lo, hi) = (curve.volumes[i], curve.volumes[i + 1]);
    if clearing_price == steps[i] {
        return Ok(lo);
    }
    if clearing_price == steps[i + 1] {
        return Ok(hi);
    }
    Ok((lo + w * (hi - lo)).clamp(hi.min(lo), lo.max(hi)))
}

/// One grid per market.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grids {
    pub da: PriceGrid,
    pub id: PriceGrid,
}

impl Grids {
    /// `steps` equally spaced prices per market covering every tree price.
    pub fn from_tree(tree: &crate::scenario::ScenarioTree, steps: usize) -> Result<Self> {
        let ((dlo, dhi), (ilo, ihi)) = tree.price_range();
        Ok(Self {
            da: PriceGrid::spanning(dlo, dhi, steps)?,
            id: PriceGrid::spanning(ilo, ihi, steps)?,
        })
    }
}
