//! Decentralized gradient-projection controller.
//!
//! Each bus `j` measures its own voltage and moves its reactive injection
//! against the local mismatch, then clamps to its own box:
//!
//! ```text
//! q_j <- clamp(q_j - eps * D_j * (v_j - mu_j), [lower_j, upper_j])
//! ```
//!
//! Because `v = X q + vbar`, the measured mismatch is exactly the gradient of
//! the weighted objective, so no communication between buses is needed.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_len, Error, Result};
use crate::network::{NetworkMatrices, Scaling};

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    pub epsilon: f64,
    pub scaling: Scaling,
    /// Target voltage profile.
    pub mu: DVector<f64>,
}

impl ControllerConfig {
    pub fn new(epsilon: f64, scaling: Scaling, mu: DVector<f64>) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "step size must be positive, got {epsilon}"
            )));
        }
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("target voltage profile"));
        }
        Ok(ControllerConfig {
            epsilon,
            scaling,
            mu,
        })
    }

    /// Flat unit target profile.
    pub fn flat(n: usize, epsilon: f64, scaling: Scaling) -> Result<Self> {
        Self::new(epsilon, scaling, DVector::from_element(n, 1.0))
    }
}

/// Per-bus reactive power box `[lower, upper]`. Infinite bounds are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct VarLimits {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl VarLimits {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        check_len("upper VAR limits", lower.len(), upper.len())?;
        for (j, (lo, hi)) in lower.iter().zip(upper.iter()).enumerate() {
            if lo.is_nan() || hi.is_nan() {
                return Err(Error::NonFinite("VAR limits"));
            }
            if lo > hi {
                return Err(Error::InvalidParameter(format!(
                    "empty VAR box at bus index {j}: [{lo}, {hi}]"
                )));
            }
        }
        Ok(VarLimits { lower, upper })
    }

    pub fn symmetric(n: usize, q_max: f64) -> Result<Self> {
        Self::new(
            DVector::from_element(n, -q_max),
            DVector::from_element(n, q_max),
        )
    }

    pub fn unbounded(n: usize) -> Self {
        VarLimits {
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn clamp(&self, j: usize, value: f64) -> f64 {
        value.max(self.lower[j]).min(self.upper[j])
    }

    pub fn project(&self, q: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(q.len(), |j, _| self.clamp(j, q[j]))
    }

    pub fn contains(&self, q: &DVector<f64>) -> bool {
        q.iter()
            .enumerate()
            .all(|(j, &v)| v >= self.lower[j] && v <= self.upper[j])
    }

    /// Both bounds multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> VarLimits {
        VarLimits {
            lower: &self.lower * factor,
            upper: &self.upper * factor,
        }
    }
}

/// One controller update from the measured voltage `v`.
///
/// Buses with `active[j] == false` keep `q_j` bit-for-bit. Active buses first
/// clamp `q_j` into the current box (limits may have tightened since the last
/// step), then take the scaled gradient step and clamp again. With every bus
/// active this is the synchronous update.
pub fn gp_step(
    q: &DVector<f64>,
    v: &DVector<f64>,
    d: &DVector<f64>,
    cfg: &ControllerConfig,
    limits: &VarLimits,
    active: &[bool],
) -> Result<DVector<f64>> {
    let n = q.len();
    check_len("measured voltage", n, v.len())?;
    check_len("scaling diagonal", n, d.len())?;
    check_len("target profile", n, cfg.mu.len())?;
    check_len("VAR limits", n, limits.len())?;
    check_len("activation mask", n, active.len())?;
    if v.iter().any(|x| x.is_nan()) {
        return Err(Error::NonFinite("measured voltage"));
    }

    let mut next = q.clone();
    for j in (0..n).filter(|&j| active[j]) {
        let start = limits.clamp(j, q[j]);
        next[j] = limits.clamp(j, start - cfg.epsilon * d[j] * (v[j] - cfg.mu[j]));
    }
    Ok(next)
}

/// `2 / M`: synchronous (and asynchronous, since measurements never go
/// stale) stability bound on the step size.
pub fn sync_step_size_bound(mat: &NetworkMatrices) -> f64 {
    2.0 / mat.m_lip
}

/// `1 / (M (1 + K + N K))`, the bound required when gradients may be up to
/// `K` steps stale.
pub fn classical_async_step_size_bound(mat: &NetworkMatrices, k: usize, n: usize) -> Result<f64> {
    if k == 0 || n == 0 {
        return Err(Error::InvalidParameter(format!(
            "classical bound needs K >= 1 and N >= 1 (got K = {k}, N = {n})"
        )));
    }
    Ok(1.0 / (mat.m_lip * (1 + k + n * k) as f64))
}

/// `2 / (C + M)`: step sizes for which the time-varying tracking bound holds.
pub fn dynamic_step_size_bound(mat: &NetworkMatrices) -> f64 {
    2.0 / (mat.c + mat.m_lip)
}

/// `max(|1 - eps C|, |1 - eps M|)`, the per-step contraction of the
/// unconstrained iteration in the `D^{-1}`-weighted norm.
pub fn linear_contraction_factor(c: f64, m_lip: f64, epsilon: f64) -> f64 {
    (1.0 - epsilon * c).abs().max((1.0 - epsilon * m_lip).abs())
}

/// Spectral radius of `I - eps X~`, from its eigenvalues.
pub fn iteration_spectral_radius(mat: &NetworkMatrices, epsilon: f64) -> f64 {
    let xt = mat.scaled_reactance();
    let n = xt.nrows();
    let iter = DMatrix::identity(n, n) - xt * epsilon;
    SymmetricEigen::new(iter)
        .eigenvalues
        .iter()
        .fold(0.0, |acc: f64, l| acc.max(l.abs()))
}
