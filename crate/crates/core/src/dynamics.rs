//! Time-varying environment: AR(1) nominal-voltage trajectories and VAR
//! limit profiles.
//!
//! Noise is addressed by `(seed, step, bus)` rather than drawn from a running
//! stream: each bus owns a ChaCha8 stream and step `k` reads words
//! `4k..4k+4` of it, turned into one standard normal by Box-Muller. A
//! trajectory therefore never depends on evaluation order or thread count.

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::control::VarLimits;
use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Ar1Params {
    /// Forgetting factor, `|alpha| < 1`.
    pub alpha: f64,
    /// Innovation variance.
    pub sigma2: f64,
    /// Drift vector.
    pub cbar: DVector<f64>,
    pub seed: u64,
    /// Optional full transition matrix; replaces `alpha * I` when present.
    pub transition: Option<DMatrix<f64>>,
}

impl Ar1Params {
    pub fn new(alpha: f64, sigma2: f64, cbar: DVector<f64>, seed: u64) -> Result<Self> {
        if !(alpha.is_finite() && alpha.abs() < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "AR(1) forgetting factor must satisfy |alpha| < 1, got {alpha}"
            )));
        }
        if !(sigma2.is_finite() && sigma2 >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "innovation variance must be >= 0, got {sigma2}"
            )));
        }
        if cbar.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("AR(1) drift vector"));
        }
        Ok(Ar1Params {
            alpha,
            sigma2,
            cbar,
            seed,
            transition: None,
        })
    }

    /// Parameters whose stationary mean is `mean`, i.e. `cbar = (1 - alpha) mean`.
    pub fn from_mean(alpha: f64, sigma2: f64, mean: &DVector<f64>, seed: u64) -> Result<Self> {
        Self::new(alpha, sigma2, mean * (1.0 - alpha), seed)
    }

    /// Uses `A` in place of `alpha * I`; `cbar` is recomputed so the
    /// stationary mean `(I - A)^{-1} cbar` equals `mean`.
    pub fn with_transition(mut self, a: DMatrix<f64>, mean: &DVector<f64>) -> Result<Self> {
        let n = self.cbar.len();
        check_len("transition matrix rows", n, a.nrows())?;
        check_len("transition matrix columns", n, a.ncols())?;
        let radius = a
            .complex_eigenvalues()
            .iter()
            .fold(0.0f64, |acc, l| acc.max(l.norm()));
        if radius >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "transition matrix spectral radius {radius} must be < 1"
            )));
        }
        self.cbar = (DMatrix::identity(n, n) - &a) * mean;
        self.transition = Some(a);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.cbar.len()
    }
}

/// Standard normals keyed by `(step, bus)` under a fixed seed.
#[derive(Debug, Clone)]
pub struct CounterNormal {
    streams: Vec<ChaCha8Rng>,
}

impl CounterNormal {
    pub fn new(seed: u64, n: usize) -> Self {
        let streams = (0..n)
            .map(|bus| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(bus as u64);
                rng
            })
            .collect();
        CounterNormal { streams }
    }

    pub fn sample(&mut self, step: u64, bus: usize) -> f64 {
        let rng = &mut self.streams[bus];
        rng.set_word_pos(u128::from(step) * 4);
        let a = rng.next_u64();
        let b = rng.next_u64();
        // u1 in (0, 1], u2 in [0, 1).
        let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn vector(&mut self, step: u64) -> DVector<f64> {
        let n = self.streams.len();
        DVector::from_fn(n, |bus, _| self.sample(step, bus))
    }
}

/// `vbar_{k+1} = alpha vbar_k + cbar + eta_{k+1}`, with `eta` drawn at
/// `step` (the index of the produced sample).
pub fn ar1_step(
    vbar: &DVector<f64>,
    p: &Ar1Params,
    noise: &mut CounterNormal,
    step: u64,
) -> Result<DVector<f64>> {
    check_len("nominal voltage", p.n(), vbar.len())?;
    let sigma = p.sigma2.sqrt();
    let carried = match &p.transition {
        Some(a) => a * vbar,
        None => vbar * p.alpha,
    };
    let mut next = carried + &p.cbar;
    if sigma > 0.0 {
        for j in 0..next.len() {
            next[j] += sigma * noise.sample(step, j);
        }
    }
    Ok(next)
}

/// Stationary mean `cbar / (1 - alpha)` and per-bus variance
/// `sigma^2 / (1 - alpha^2)`.
pub fn stationary_stats(p: &Ar1Params) -> Result<(DVector<f64>, f64)> {
    if p.alpha.abs() >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "no stationary distribution for alpha = {}",
            p.alpha
        )));
    }
    Ok((
        &p.cbar / (1.0 - p.alpha),
        p.sigma2 / (1.0 - p.alpha * p.alpha),
    ))
}

/// `B1 = 2 sigma^2 Tr(D) / (1 + alpha)`, the expected `D`-weighted squared
/// step of a stationary trajectory.
pub fn expected_drift_bound(p: &Ar1Params, d: &DVector<f64>) -> f64 {
    2.0 * p.sigma2 * d.sum() / (1.0 + p.alpha)
}

/// Mean voltage decreasing linearly from 1.025 at the first bus to 0.975 at
/// the last.
pub fn ramp_mean_profile(n: usize) -> DVector<f64> {
    if n <= 1 {
        return DVector::from_element(n, 1.025);
    }
    let slope = 0.05 / (n - 1) as f64;
    DVector::from_fn(n, |j, _| 1.025 - slope * j as f64)
}

/// Nominal voltage trajectory generator.
///
/// Step 0 is a draw from the stationary distribution (the mean itself when a
/// full transition matrix is used or the noise is zero); later steps follow
/// [`ar1_step`].
#[derive(Debug, Clone)]
pub struct Ar1Process {
    params: Ar1Params,
    noise: CounterNormal,
    state: Option<DVector<f64>>,
    step: u64,
}

impl Ar1Process {
    pub fn new(params: Ar1Params) -> Self {
        let noise = CounterNormal::new(params.seed, params.n());
        Ar1Process {
            params,
            noise,
            state: None,
            step: 0,
        }
    }

    pub fn params(&self) -> &Ar1Params {
        &self.params
    }

    fn initial(&mut self) -> DVector<f64> {
        let n = self.params.n();
        match &self.params.transition {
            Some(a) => (DMatrix::identity(n, n) - a)
                .lu()
                .solve(&self.params.cbar)
                .expect("I - A is invertible when rho(A) < 1"),
            None => {
                let (mean, var) =
                    stationary_stats(&self.params).expect("validated in Ar1Params::new");
                if var > 0.0 {
                    mean + self.noise.vector(0) * var.sqrt()
                } else {
                    mean
                }
            }
        }
    }

    pub fn next_state(&mut self) -> DVector<f64> {
        let next = match self.state.take() {
            None => self.initial(),
            Some(prev) => ar1_step(&prev, &self.params, &mut self.noise, self.step)
                .expect("state length matches parameters"),
        };
        self.step += 1;
        self.state = Some(next.clone());
        next
    }
}

impl Iterator for Ar1Process {
    type Item = DVector<f64>;

    fn next(&mut self) -> Option<Self::Item> {
        Some(self.next_state())
    }
}

/// How the reactive power box evolves over time.
#[derive(Debug, Clone, PartialEq)]
pub enum LimitsProfile {
    Static(VarLimits),
    /// `base * scale[k]`; the last multiplier is held past the end of the
    /// series.
    Scaled { base: VarLimits, scale: Vec<f64> },
}

impl LimitsProfile {
    pub fn scaled(base: VarLimits, scale: Vec<f64>) -> Result<Self> {
        if scale.is_empty() {
            return Err(Error::InvalidParameter(
                "scaled limits need at least one multiplier".into(),
            ));
        }
        if let Some(s) = scale.iter().find(|s| !(**s > 0.0 && **s <= 1.0)) {
            return Err(Error::InvalidParameter(format!(
                "limit multipliers must lie in (0, 1], got {s}"
            )));
        }
        Ok(LimitsProfile::Scaled { base, scale })
    }

    pub fn at(&self, k: usize) -> VarLimits {
        match self {
            LimitsProfile::Static(limits) => limits.clone(),
            LimitsProfile::Scaled { base, scale } => {
                base.scaled(scale[k.min(scale.len() - 1)])
            }
        }
    }

    pub fn is_static(&self) -> bool {
        match self {
            LimitsProfile::Static(_) => true,
            LimitsProfile::Scaled { scale, .. } => scale.windows(2).all(|w| w[0] == w[1]),
        }
    }

    pub fn n(&self) -> usize {
        match self {
            LimitsProfile::Static(l) | LimitsProfile::Scaled { base: l, .. } => l.len(),
        }
    }
}
