//! Radial network model: topology validation, the LinDistFlow matrices, and
//! voltage evaluation (linear map and nonlinear backward/forward sweep).
//!
//! Bus 0 is the substation. Controllable quantities (`q`, `v`, rows of `X`)
//! are indexed `0..N` and correspond to buses `1..=N`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::eigen_extremes;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    /// Per-unit resistance.
    pub r: f64,
    /// Per-unit reactance.
    pub x: f64,
}

/// A validated tree-topology distribution network.
///
/// Lines keep their input order (line `l` is column `l` of the incidence
/// matrix) but are oriented away from the root, whatever order the endpoints
/// were given in.
#[derive(Debug, Clone)]
pub struct RadialNetwork {
    lines: Vec<Line>,
    parent: Vec<Option<usize>>,
    parent_line: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    /// Non-root buses in breadth-first order from the root.
    order: Vec<usize>,
    v0: f64,
}

impl RadialNetwork {
    pub fn new(buses: usize, lines: Vec<Line>, v0: f64) -> Result<Self> {
        if buses < 2 {
            return Err(Error::TooFewBuses(buses));
        }
        if lines.len() != buses - 1 {
            return Err(Error::LineCount {
                buses,
                expected: buses - 1,
                got: lines.len(),
            });
        }
        if !(v0.is_finite() && v0 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "v0 must be positive, got {v0}"
            )));
        }

        let mut uf = UnionFind::new(buses);
        for (l, line) in lines.iter().enumerate() {
            if line.from >= buses || line.to >= buses {
                return Err(Error::BusOutOfRange {
                    line: l,
                    from: line.from,
                    to: line.to,
                    buses,
                });
            }
            if !(line.r.is_finite() && line.r >= 0.0) {
                return Err(Error::Impedance {
                    line: l,
                    reason: format!("resistance must be >= 0, got {}", line.r),
                });
            }
            if !(line.x.is_finite() && line.x > 0.0) {
                return Err(Error::Impedance {
                    line: l,
                    reason: format!("reactance must be > 0, got {}", line.x),
                });
            }
            if !uf.union(line.from, line.to) {
                return Err(Error::Cycle {
                    line: l,
                    from: line.from,
                    to: line.to,
                });
            }
        }
        // N acyclic edges on N + 1 vertices: connected.

        let mut adjacency = vec![Vec::new(); buses];
        for (l, line) in lines.iter().enumerate() {
            adjacency[line.from].push((line.to, l));
            adjacency[line.to].push((line.from, l));
        }
        let mut parent = vec![None; buses];
        let mut parent_line = vec![None; buses];
        let mut children = vec![Vec::new(); buses];
        let mut order = Vec::with_capacity(buses - 1);
        let mut visited = vec![false; buses];
        let mut queue = std::collections::VecDeque::from([0usize]);
        visited[0] = true;
        while let Some(b) = queue.pop_front() {
            for &(nb, l) in &adjacency[b] {
                if !visited[nb] {
                    visited[nb] = true;
                    parent[nb] = Some(b);
                    parent_line[nb] = Some(l);
                    children[b].push(nb);
                    order.push(nb);
                    queue.push_back(nb);
                }
            }
        }

        let lines = lines
            .into_iter()
            .map(|line| {
                if parent[line.to] == Some(line.from) {
                    line
                } else {
                    Line {
                        from: line.to,
                        to: line.from,
                        ..line
                    }
                }
            })
            .collect();

        Ok(RadialNetwork {
            lines,
            parent,
            parent_line,
            children,
            order,
            v0,
        })
    }

    /// A uniform chain `0 - 1 - ... - n`.
    pub fn chain(n: usize, r: f64, x: f64) -> Result<Self> {
        let lines = (0..n)
            .map(|i| Line {
                from: i,
                to: i + 1,
                r,
                x,
            })
            .collect();
        Self::new(n + 1, lines, 1.0)
    }

    /// Number of controllable (non-root) buses, `N`.
    pub fn n(&self) -> usize {
        self.lines.len()
    }

    pub fn buses(&self) -> usize {
        self.lines.len() + 1
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn v0(&self) -> f64 {
        self.v0
    }

    pub fn parent(&self, bus: usize) -> Option<usize> {
        self.parent[bus]
    }

    pub fn parent_line(&self, bus: usize) -> Option<usize> {
        self.parent_line[bus]
    }

    pub fn children(&self, bus: usize) -> &[usize] {
        &self.children[bus]
    }

    /// Non-root buses in breadth-first order; every bus follows its parent.
    pub fn bfs_order(&self) -> &[usize] {
        &self.order
    }

    /// Reduced incidence matrix `M` (rows: buses 1..=N, columns: lines).
    /// Entry is +1 at the upstream end of a line and -1 at the downstream end.
    pub fn incidence(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut m = DMatrix::zeros(n, n);
        for (l, line) in self.lines.iter().enumerate() {
            if line.from != 0 {
                m[(line.from - 1, l)] = 1.0;
            }
            m[(line.to - 1, l)] = -1.0;
        }
        m
    }

    /// Solves `M y = b` for line quantities by accumulating from the leaves.
    fn solve_incidence(&self, b: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n()];
        for &bus in self.order.iter().rev() {
            let downstream: f64 = self.children[bus]
                .iter()
                .map(|&c| y[self.parent_line[c].unwrap()])
                .sum();
            y[self.parent_line[bus].unwrap()] = downstream - b[bus - 1];
        }
        y
    }

    /// Solves `M^T z = w` for bus quantities by walking down from the root.
    fn solve_incidence_transpose(&self, w: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.n()];
        for &bus in &self.order {
            let up = match self.parent[bus].unwrap() {
                0 => 0.0,
                p => z[p - 1],
            };
            z[bus - 1] = up - w[self.parent_line[bus].unwrap()];
        }
        z
    }

    /// `X = (M^T)^{-1} D_x M^{-1}` by triangular substitution on the tree,
    /// one column per unit injection.
    pub fn reactance_by_substitution(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut x = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for k in 0..n {
            e[k] = 1.0;
            let mut y = self.solve_incidence(&e);
            for (yl, line) in y.iter_mut().zip(&self.lines) {
                *yl *= line.x;
            }
            let z = self.solve_incidence_transpose(&y);
            x.set_column(k, &DVector::from_vec(z));
            e[k] = 0.0;
        }
        x
    }

    /// `X_ij` as the summed reactance of the root path shared by buses `i`
    /// and `j`.
    pub fn reactance_by_paths(&self) -> DMatrix<f64> {
        self.path_matrix(|line| line.x)
    }

    /// Shared-root-path sum of `weight(line)`; with `r` this is the matrix
    /// mapping real injections to voltage in the linear model.
    pub fn path_matrix(&self, weight: impl Fn(&Line) -> f64) -> DMatrix<f64> {
        let n = self.n();
        let mut depth = vec![0usize; self.buses()];
        let mut cum = vec![0.0; self.buses()];
        for &bus in &self.order {
            let p = self.parent[bus].unwrap();
            depth[bus] = depth[p] + 1;
            cum[bus] = cum[p] + weight(&self.lines[self.parent_line[bus].unwrap()]);
        }
        let mut m = DMatrix::zeros(n, n);
        for i in 1..=n {
            for j in i..=n {
                let (mut a, mut b) = (i, j);
                while depth[a] > depth[b] {
                    a = self.parent[a].unwrap();
                }
                while depth[b] > depth[a] {
                    b = self.parent[b].unwrap();
                }
                while a != b {
                    a = self.parent[a].unwrap();
                    b = self.parent[b].unwrap();
                }
                m[(i - 1, j - 1)] = cum[a];
                m[(j - 1, i - 1)] = cum[a];
            }
        }
        m
    }

    /// `B = M D_x^{-1} M^T`, the reactance-weighted reduced Laplacian.
    pub fn susceptance_laplacian(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut b = DMatrix::zeros(n, n);
        for line in &self.lines {
            let w = 1.0 / line.x;
            let j = line.to - 1;
            b[(j, j)] += w;
            if line.from != 0 {
                let i = line.from - 1;
                b[(i, i)] += w;
                b[(i, j)] -= w;
                b[(j, i)] -= w;
            }
        }
        b
    }

    /// Nominal voltage `v0 + R p` produced by real injections alone.
    pub fn nominal_voltage(&self, p: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("real injections", self.n(), p.len())?;
        let r = self.path_matrix(|line| line.r);
        Ok(r * p + DVector::from_element(self.n(), self.v0))
    }
}

/// Choice of the diagonal scaling matrix `D` in the gradient step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// `D = diag(X)^{-1}`, a diagonal Newton approximation.
    #[default]
    NewtonDiag,
    Identity,
}

#[derive(Debug, Clone)]
pub struct NetworkMatrices {
    /// Reduced incidence matrix `M`.
    pub incidence: DMatrix<f64>,
    /// Reactance matrix `X`.
    pub x: DMatrix<f64>,
    /// `B = X^{-1}`.
    pub b: DMatrix<f64>,
    /// Diagonal of the scaling matrix `D`.
    pub d: DVector<f64>,
    pub scaling: Scaling,
    /// Smallest eigenvalue of `D^{1/2} X D^{1/2}`.
    pub c: f64,
    /// Largest eigenvalue of `D^{1/2} X D^{1/2}`.
    pub m_lip: f64,
}

impl NetworkMatrices {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// `X~ = D^{1/2} X D^{1/2}`.
    pub fn scaled_reactance(&self) -> DMatrix<f64> {
        scaled(&self.x, &self.d)
    }
}

pub(crate) fn scaled(x: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let s = d.map(f64::sqrt);
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| s[i] * x[(i, j)] * s[j])
}

pub fn build_matrices(net: &RadialNetwork) -> NetworkMatrices {
    build_matrices_with(net, Scaling::NewtonDiag)
}

pub fn build_matrices_with(net: &RadialNetwork, scaling: Scaling) -> NetworkMatrices {
    let x = net.reactance_by_substitution();
    let b = net.susceptance_laplacian();
    let d = match scaling {
        Scaling::NewtonDiag => x.diagonal().map(|v| 1.0 / v),
        Scaling::Identity => DVector::from_element(net.n(), 1.0),
    };
    let (c, m_lip) = eigen_extremes(&scaled(&x, &d));
    NetworkMatrices {
        incidence: net.incidence(),
        x,
        b,
        d,
        scaling,
        c,
        m_lip,
    }
}

/// `v = X q + vbar`.
pub fn linear_voltage(
    mat: &NetworkMatrices,
    q: &DVector<f64>,
    vbar: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_len("reactive injections", mat.n(), q.len())?;
    check_len("nominal voltage", mat.n(), vbar.len())?;
    Ok(&mat.x * q + vbar)
}

#[derive(Debug, Clone, Copy)]
pub struct SweepOptions {
    pub max_iter: usize,
    /// Max-norm change between successive voltage iterates.
    pub tol: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            max_iter: 200,
            tol: 1e-10,
        }
    }
}

/// Voltage magnitudes at buses `1..=N` from the nonlinear branch-flow model,
/// solved by backward (current) / forward (voltage) sweeps.
///
/// Injections are positive for generation. To first order in the injections
/// the result matches `v0 + R p + X q`.
pub fn sweep_voltage(
    net: &RadialNetwork,
    p: &DVector<f64>,
    q: &DVector<f64>,
    opts: SweepOptions,
) -> Result<DVector<f64>> {
    let n = net.n();
    check_len("real injections", n, p.len())?;
    check_len("reactive injections", n, q.len())?;
    if p.iter().chain(q.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sweep injections"));
    }

    let mut volts = vec![Complex64::new(net.v0(), 0.0); net.buses()];
    let mut branch = vec![Complex64::new(0.0, 0.0); net.buses()];
    let mut last_change = f64::INFINITY;
    for _ in 0..opts.max_iter {
        // Backward: current drawn through the line feeding each bus.
        for &bus in net.bfs_order().iter().rev() {
            let s = Complex64::new(p[bus - 1], q[bus - 1]);
            let injected = (s / volts[bus]).conj();
            let downstream: Complex64 = net.children(bus).iter().map(|&c| branch[c]).sum();
            branch[bus] = downstream - injected;
        }
        // Forward: voltage drop along each line.
        last_change = 0.0;
        for &bus in net.bfs_order() {
            let line = &net.lines()[net.parent_line(bus).unwrap()];
            let z = Complex64::new(line.r, line.x);
            let next = volts[net.parent(bus).unwrap()] - z * branch[bus];
            last_change = f64::max(last_change, (next - volts[bus]).norm());
            volts[bus] = next;
        }
        if !last_change.is_finite() {
            break;
        }
        if last_change < opts.tol {
            return Ok(DVector::from_iterator(
                n,
                volts[1..].iter().map(|v| v.norm()),
            ));
        }
    }
    Err(Error::SweepDiverged {
        iterations: opts.max_iter,
        last_change,
    })
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut a: usize) -> usize {
        while self.parent[a] != a {
            self.parent[a] = self.parent[self.parent[a]];
            a = self.parent[a];
        }
        a
    }

    /// Returns false if `a` and `b` were already connected.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}
