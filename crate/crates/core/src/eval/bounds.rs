use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Multiplier of the spectral energy terms.
pub const BOUND_C1: f64 = 32.0;
/// Multiplier of the label-noise rate α.
pub const BOUND_C2: f64 = 80.0;

/// Downstream error bounds for the top-`m` features of a rank-`k` encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub m: usize,
    pub k: usize,
    pub alpha: f64,
    /// `Σ_{i≤k} σ_i²`.
    pub head_energy: f64,
    /// `Σ_{i>k} σ_i²`.
    pub tail_energy: f64,
    /// `Σ_{i>m} σ_i²`.
    pub energy_beyond_m: f64,
    /// `(1 - m/k) Σ_{i≤k} σ_i² + Σ_{i>k} σ_i²`, before constants.
    pub raw_scl: f64,
    /// `Σ_{i>m} σ_i²`, before constants.
    pub raw_tricl: f64,
    pub raw_gap: f64,
    /// `(m(k-m)/k) · (mean_{i≤m} σ_i² - mean_{m<i≤k} σ_i²)`; equals `raw_gap` up to rounding.
    pub gap_lower_bound: f64,
    /// Expected bound for `m` features chosen uniformly at random from an optimal two-factor encoder.
    pub u_scl: f64,
    /// Bound for the top-`m` features of the optimal three-factor encoder.
    pub u_tricl: f64,
    pub gap: f64,
}

/// `singular_values` must be the full spectrum in descending order.
pub fn bound_values(singular_values: &[f64], m: usize, k: usize, alpha: f64) -> Result<BoundReport> {
    if k == 0 || k > singular_values.len() {
        return Err(invalid(format!("k must be in 1..={}, got {k}", singular_values.len())));
    }
    if m == 0 || m > k {
        return Err(invalid(format!("m must be in 1..={k}, got {m}")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(invalid(format!("alpha must be in [0, 1], got {alpha}")));
    }
    if singular_values.iter().any(|s| *s < 0.0 || !s.is_finite()) {
        return Err(invalid("singular values must be finite and nonnegative"));
    }
    if singular_values.windows(2).any(|w| w[1] > w[0]) {
        return Err(invalid("singular values must be sorted in descending order"));
    }
    let sq: Vec<f64> = singular_values.iter().map(|s| s * s).collect();
    let sum = |r: &[f64]| r.iter().sum::<f64>();
    let head_energy = sum(&sq[..k]);
    let tail_energy = sum(&sq[k..]);
    let energy_beyond_m = if m == k {
        tail_energy
    } else {
        sum(&sq[m..k]) + tail_energy
    };
    let raw_scl = (1.0 - m as f64 / k as f64) * head_energy + tail_energy;
    let raw_tricl = energy_beyond_m;
    let mean = |r: &[f64]| if r.is_empty() { 0.0 } else { sum(r) / r.len() as f64 };
    let gap_lower_bound = (m * (k - m)) as f64 / k as f64 * (mean(&sq[..m]) - mean(&sq[m..k]));
    let u_scl = BOUND_C1 * raw_scl + BOUND_C2 * alpha;
    let u_tricl = BOUND_C1 * raw_tricl + BOUND_C2 * alpha;
    Ok(BoundReport {
        m,
        k,
        alpha,
        head_energy,
        tail_energy,
        energy_beyond_m,
        raw_scl,
        raw_tricl,
        raw_gap: raw_scl - raw_tricl,
        gap_lower_bound,
        u_scl,
        u_tricl,
        gap: u_scl - u_tricl,
    })
}
