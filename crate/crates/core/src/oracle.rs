//! Exact instantaneous optimizer of the box-constrained quadratic
//!
//! ```text
//! q* = argmin_{lower <= q <= upper} 1/2 (X q + vbar - mu)^T B (X q + vbar - mu)
//! ```
//!
//! together with its KKT certificate and the theoretical tracking-error
//! bounds of the gradient-projection controller.
//!
//! The gradient of the objective is `X q + vbar - mu` and its Hessian is `X`.

use nalgebra::{DMatrix, DVector};

use crate::control::VarLimits;
use crate::error::{check_len, Error, Result};
use crate::linalg::{eigen_extremes, SparseSym};
use crate::network::{scaled, NetworkMatrices};

pub const DEFAULT_KKT_TOL: f64 = 1e-12;
const DEFAULT_MAX_ITER: usize = 100_000;
const MAX_BACKTRACK: usize = 40;

/// One instantaneous problem. Borrowed so a trajectory can reuse `X`.
#[derive(Debug, Clone, Copy)]
pub struct QpInstance<'a> {
    pub x: &'a DMatrix<f64>,
    pub vbar: &'a DVector<f64>,
    pub mu: &'a DVector<f64>,
    pub limits: &'a VarLimits,
}

impl<'a> QpInstance<'a> {
    pub fn new(
        x: &'a DMatrix<f64>,
        vbar: &'a DVector<f64>,
        mu: &'a DVector<f64>,
        limits: &'a VarLimits,
    ) -> Result<Self> {
        let n = x.nrows();
        check_len("reactance matrix columns", n, x.ncols())?;
        check_len("nominal voltage", n, vbar.len())?;
        check_len("target profile", n, mu.len())?;
        check_len("VAR limits", n, limits.len())?;
        if vbar.iter().chain(mu.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("QP instance data"));
        }
        Ok(QpInstance {
            x,
            vbar,
            mu,
            limits,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// `X q + vbar - mu`.
    pub fn gradient(&self, q: &DVector<f64>) -> DVector<f64> {
        self.x * q + self.vbar - self.mu
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub q: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Max violation of the box-QP optimality conditions given the gradient:
/// `|g_j|` for interior coordinates, `max(-g_j, 0)` at a lower bound,
/// `max(g_j, 0)` at an upper bound, zero for pinned coordinates.
fn residual_from_gradient(q: &DVector<f64>, g: &DVector<f64>, limits: &VarLimits) -> f64 {
    let (lo, hi) = (limits.lower(), limits.upper());
    (0..q.len())
        .map(|j| {
            if lo[j] == hi[j] {
                0.0
            } else if q[j] == lo[j] {
                (-g[j]).max(0.0)
            } else if q[j] == hi[j] {
                g[j].max(0.0)
            } else {
                g[j].abs()
            }
        })
        .fold(0.0, f64::max)
}

/// KKT residual of a feasible point. A point outside the box is reported as
/// [`Error::OutsideBox`] rather than as a large residual.
pub fn kkt_residual(inst: &QpInstance<'_>, q: &DVector<f64>) -> Result<f64> {
    check_len("candidate point", inst.n(), q.len())?;
    let (lo, hi) = (inst.limits.lower(), inst.limits.upper());
    for j in 0..q.len() {
        if !(q[j] >= lo[j] && q[j] <= hi[j]) {
            return Err(Error::OutsideBox {
                index: j,
                value: q[j],
                lower: lo[j],
                upper: hi[j],
            });
        }
    }
    Ok(residual_from_gradient(q, &inst.gradient(q), inst.limits))
}

/// Gradient projection with step `2/(C+M)` in the `D`-scaled geometry,
/// interleaved with exact minimization over the current face. The face solve
/// uses `(X_FF)^{-1} = B_FF - B_FA B_AA^{-1} B_AF` when few bounds are
/// active, so a sparse tree Laplacian keeps it cheap on large feeders.
#[derive(Debug, Clone)]
pub struct BoxQpSolver {
    b: SparseSym,
    d: DVector<f64>,
    step: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl BoxQpSolver {
    /// `b` must be `X^{-1}`; `c`, `m_lip` the eigen-extremes of
    /// `D^{1/2} X D^{1/2}`.
    pub fn new(b: &DMatrix<f64>, d: &DVector<f64>, c: f64, m_lip: f64) -> Self {
        BoxQpSolver {
            b: SparseSym::from_dense(b),
            d: d.clone(),
            step: 2.0 / (c + m_lip),
            tol: DEFAULT_KKT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }

    pub fn from_matrices(mat: &NetworkMatrices) -> Self {
        Self::new(&mat.b, &mat.d, mat.c, mat.m_lip)
    }

    /// Solver for an arbitrary SPD `X`, with `D = diag(X)^{-1}`.
    pub fn for_reactance(x: &DMatrix<f64>) -> Result<Self> {
        let chol = x
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidParameter("X must be positive definite".into()))?;
        let b = chol.inverse();
        let d = x.diagonal().map(|v| 1.0 / v);
        let (c, m_lip) = eigen_extremes(&scaled(x, &d));
        Ok(Self::new(&b, &d, c, m_lip))
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    /// `f(q) = 1/2 g^T B g` with `g = X q + vbar - mu`.
    pub fn objective(&self, inst: &QpInstance<'_>, q: &DVector<f64>) -> f64 {
        0.5 * self.b.quad(&inst.gradient(q))
    }

    pub fn solve(&self, inst: &QpInstance<'_>, warm: Option<&DVector<f64>>) -> Result<QpSolution> {
        let n = inst.n();
        check_len("solver dimension", self.d.len(), n)?;
        let limits = inst.limits;
        let w = inst.vbar - inst.mu;
        let mut q = match warm {
            Some(start) => {
                check_len("warm start", n, start.len())?;
                limits.project(start)
            }
            None => limits.project(&DVector::zeros(n)),
        };
        let mut xq = inst.x * &q;
        let phi = |q: &DVector<f64>, xq: &DVector<f64>| 0.5 * q.dot(xq) + w.dot(q);

        let mut residual = f64::INFINITY;
        for it in 0..self.max_iter {
            let g = &xq + &w;
            residual = residual_from_gradient(&q, &g, limits);
            if residual <= self.tol {
                return Ok(QpSolution {
                    q,
                    residual,
                    iterations: it,
                });
            }

            let (lo, hi) = (limits.lower(), limits.upper());
            let free: Vec<usize> = (0..n)
                .filter(|&j| {
                    lo[j] < hi[j]
                        && !(q[j] == lo[j] && g[j] > 0.0)
                        && !(q[j] == hi[j] && g[j] < 0.0)
                })
                .collect();
            let mut moved = false;
            if let Some(dir) = self.face_newton(inst.x, &free, &g) {
                let phi0 = phi(&q, &xq);
                let mut t = 1.0;
                for _ in 0..MAX_BACKTRACK {
                    let cand = limits.project(&(&q + &dir * t));
                    let xc = inst.x * &cand;
                    if t == 1.0 {
                        let rc = residual_from_gradient(&cand, &(&xc + &w), limits);
                        if rc <= self.tol {
                            return Ok(QpSolution {
                                q: cand,
                                residual: rc,
                                iterations: it + 1,
                            });
                        }
                    }
                    if phi(&cand, &xc) < phi0 {
                        q = cand;
                        xq = xc;
                        moved = true;
                        break;
                    }
                    t *= 0.5;
                }
            }

            let g = if moved { &xq + &w } else { g };
            q = limits.project(&(&q - g.component_mul(&self.d) * self.step));
            xq = inst.x * &q;
        }
        Err(Error::QpIterationLimit {
            iterations: self.max_iter,
            residual,
        })
    }

    /// Newton direction on the face: zero on fixed coordinates, and on the
    /// free set `F` the solution of `X_FF d_F = -g_F`.
    fn face_newton(&self, x: &DMatrix<f64>, free: &[usize], g: &DVector<f64>) -> Option<DVector<f64>> {
        let n = g.len();
        if free.is_empty() {
            return None;
        }
        let mut is_free = vec![false; n];
        for &j in free {
            is_free[j] = true;
        }
        let fixed: Vec<usize> = (0..n).filter(|&j| !is_free[j]).collect();
        let mut dir = DVector::zeros(n);

        if fixed.len() <= free.len() {
            let mut r = DVector::zeros(n);
            for &j in free {
                r[j] = -g[j];
            }
            let s = self.b.mul(&r);
            let mut correction = DVector::<f64>::zeros(n);
            if !fixed.is_empty() {
                let baa = DMatrix::from_fn(fixed.len(), fixed.len(), |a, b| {
                    self.b.get(fixed[a], fixed[b])
                });
                let sa = DVector::from_fn(fixed.len(), |a, _| s[fixed[a]]);
                let t = baa.cholesky()?.solve(&sa);
                for (ai, &a) in fixed.iter().enumerate() {
                    for &(j, v) in self.b.row(a) {
                        correction[j] += v * t[ai];
                    }
                }
            }
            for &j in free {
                dir[j] = s[j] - correction[j];
            }
        } else {
            let xff = DMatrix::from_fn(free.len(), free.len(), |a, b| x[(free[a], free[b])]);
            let rhs = DVector::from_fn(free.len(), |a, _| -g[free[a]]);
            let df = xff.cholesky()?.solve(&rhs);
            for (a, &j) in free.iter().enumerate() {
                dir[j] = df[a];
            }
        }
        dir.iter().all(|v| v.is_finite()).then_some(dir)
    }
}

/// One-off solve: builds a solver for `inst.x` and runs it from a cold start
/// to KKT residual `tol`.
pub fn solve_box_qp(inst: &QpInstance<'_>, tol: f64) -> Result<DVector<f64>> {
    let solver = BoxQpSolver::for_reactance(inst.x)?.with_tol(tol);
    Ok(solver.solve(inst, None)?.q)
}

/// Free scalar used to split the squared sum in the tracking recursion.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum BetaPrime {
    /// `eps C M / (C + M - 2 eps C M)`, which makes the steady-state bound
    /// come out in closed form.
    #[default]
    Default,
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundParams {
    pub c: f64,
    pub m_lip: f64,
    pub epsilon: f64,
    pub beta_prime: BetaPrime,
    /// Bound on the expected `D^{-1}`-weighted squared optimizer drift.
    pub b2: f64,
}

impl BoundParams {
    pub fn new(c: f64, m_lip: f64, epsilon: f64, beta_prime: BetaPrime, b2: f64) -> Result<Self> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !(positive(c) && positive(m_lip) && c <= m_lip) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < C <= M, got C = {c}, M = {m_lip}"
            )));
        }
        if !positive(epsilon) {
            return Err(Error::InvalidParameter(format!(
                "step size must be positive, got {epsilon}"
            )));
        }
        if !(b2.is_finite() && b2 >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "drift bound B2 must be >= 0, got {b2}"
            )));
        }
        if let BetaPrime::Value(b) = beta_prime {
            if !positive(b) {
                return Err(Error::InvalidParameter(format!(
                    "beta' must be positive, got {b}"
                )));
            }
        }
        Ok(BoundParams {
            c,
            m_lip,
            epsilon,
            beta_prime,
            b2,
        })
    }

    /// The numeric value of `beta'` (infinite for the default choice when
    /// `C = M` and `eps = 1/M`).
    pub fn beta_prime_value(&self) -> f64 {
        let (c, m, e) = (self.c, self.m_lip, self.epsilon);
        match self.beta_prime {
            BetaPrime::Default => e * c * m / (c + m - 2.0 * e * c * m),
            BetaPrime::Value(b) => b,
        }
    }

    /// Contraction rate `rho` and per-step gap `Theta`. Fails unless
    /// `eps <= 2/(C+M)` and `0 <= rho < 1`.
    pub fn rho_theta(&self) -> Result<(f64, f64)> {
        let (c, m, e) = (self.c, self.m_lip, self.epsilon);
        let limit = 2.0 / (c + m);
        let cm = c * m;
        let (rho, theta) = match self.beta_prime {
            // Closed forms of (1+b')(1 - 2eCM/(C+M)) and (1 + 1/b') B2, which
            // stay finite when b' itself diverges.
            BetaPrime::Default => (
                1.0 - e * cm / (c + m),
                (c + m - e * cm) / (e * cm) * self.b2,
            ),
            BetaPrime::Value(b) => (
                (1.0 + b) * (1.0 - 2.0 * e * cm / (c + m)),
                (1.0 + 1.0 / b) * self.b2,
            ),
        };
        if e > limit * (1.0 + 1e-12) || !(0.0..1.0).contains(&rho) {
            return Err(Error::RhoOutOfRange {
                rho,
                epsilon: e,
                beta_prime: self.beta_prime_value(),
            });
        }
        Ok((rho, theta))
    }
}

/// `rho^k e0 + (1 - rho^k) / (1 - rho) Theta`.
pub fn tracking_bound(bp: &BoundParams, initial_err: f64, k: usize) -> Result<f64> {
    let (rho, theta) = bp.rho_theta()?;
    let rk = rho.powf(k as f64);
    Ok(rk * initial_err + (1.0 - rk) / (1.0 - rho) * theta)
}

/// Limit of [`tracking_bound`] as `k -> infinity`: `Theta / (1 - rho)`.
pub fn steady_state_bound(bp: &BoundParams) -> Result<f64> {
    let (rho, theta) = bp.rho_theta()?;
    Ok(theta / (1.0 - rho))
}

/// `(C+M)(C+M - eps C M) / (eps C M)^2 * B2`, the steady-state bound for the
/// default `beta'` written out directly.
pub fn steady_state_closed_form(c: f64, m_lip: f64, epsilon: f64, b2: f64) -> f64 {
    let ecm = epsilon * c * m_lip;
    (c + m_lip) * (c + m_lip - ecm) / (ecm * ecm) * b2
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftEstimate {
    pub max: f64,
    pub mean: f64,
}

/// `||a - b||^2_{D^{-1}}`.
pub fn weighted_sq_dist(a: &DVector<f64>, b: &DVector<f64>, d: &DVector<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .zip(d.iter())
        .map(|((x, y), w)| (x - y) * (x - y) / w)
        .sum()
}

/// Empirical stand-in for `B2`: max and mean of
/// `||q*_{k+1} - q*_k||^2_{D^{-1}}` along a trace.
pub fn estimate_b2(trace: &[DVector<f64>], d: &DVector<f64>) -> Result<DriftEstimate> {
    if trace.len() < 2 {
        return Err(Error::InvalidParameter(
            "drift estimate needs at least two optimizers".into(),
        ));
    }
    let drifts: Vec<f64> = trace
        .windows(2)
        .map(|w| weighted_sq_dist(&w[1], &w[0], d))
        .collect();
    Ok(DriftEstimate {
        max: drifts.iter().copied().fold(0.0, f64::max),
        mean: drifts.iter().sum::<f64>() / drifts.len() as f64,
    })
}
