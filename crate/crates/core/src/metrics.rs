//! OSPA error and communication-cost averages.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::assignment::{solve_rectangular, CostMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OspaParams {
    /// Cutoff distance.
    pub c: f64,
    /// Order.
    pub p: f64,
}

impl OspaParams {
    pub fn new(c: f64, p: f64) -> Result<Self> {
        if !(c > 0.0) || !(p >= 1.0) {
            return Err(Error::Config(format!("OSPA needs c > 0 and p >= 1, got c={c}, p={p}")));
        }
        Ok(Self { c, p })
    }
}

impl Default for OspaParams {
    fn default() -> Self {
        Self { c: 100.0, p: 2.0 }
    }
}

/// Optimal subpattern assignment distance between two point sets.
pub fn ospa(x: &[DVector<f64>], y: &[DVector<f64>], params: &OspaParams) -> f64 {
    let (x, y) = if x.len() <= y.len() { (x, y) } else { (y, x) };
    let n = y.len();
    if n == 0 {
        return 0.0;
    }
    let OspaParams { c, p } = *params;
    let cp = c.powf(p);
    let cost = CostMatrix::from_fn(x.len(), n, |i, j| (&x[i] - &y[j]).norm().min(c).powf(p));
    let matched: f64 = solve_rectangular(&cost)
        .expect("cutoff costs are finite")
        .iter()
        .map(|&(i, j)| cost.get(i, j))
        .sum();
    ((matched + cp * (n - x.len()) as f64) / n as f64).powf(1.0 / p)
}

/// Average communication cost: total real values broadcast divided by the
/// number of (run, step, sensor) slots.
pub fn acc(costs: &[f64], runs: usize, steps: usize, sensors: usize) -> f64 {
    let slots = runs * steps * sensors;
    if slots == 0 {
        return 0.0;
    }
    costs.iter().sum::<f64>() / slots as f64
}
