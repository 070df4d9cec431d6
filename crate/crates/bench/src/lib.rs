//! Shared fixtures for the criterion benchmarks.

use std::path::PathBuf;

use voltgp_core::control::sync_step_size_bound;
use voltgp_core::dynamics::ramp_mean_profile;
use voltgp_core::network::build_matrices_with;
use voltgp_core::{ControllerConfig, DVector, Line, NetworkMatrices, RadialNetwork, Scaling, VarLimits};

/// A feeder instance with everything a single control step needs.
pub struct Fixture {
    pub net: RadialNetwork,
    pub mat: NetworkMatrices,
    pub cfg: ControllerConfig,
    pub limits: VarLimits,
    pub vbar: DVector<f64>,
    pub q: DVector<f64>,
}

/// Deterministic branching feeder with `n` non-root buses: bus `k` hangs off
/// bus `k / 3`, giving a ternary tree with laterals of mixed impedance.
pub fn branching_feeder(n: usize) -> RadialNetwork {
    let lines = (1..=n)
        .map(|to| {
            let shade = 1.0 + 0.25 * (to % 4) as f64;
            Line {
                from: to / 3,
                to,
                r: 0.008 * shade,
                x: 0.012 * shade,
            }
        })
        .collect();
    RadialNetwork::new(n + 1, lines, 1.0).expect("ternary tree is radial")
}

impl Fixture {
    pub fn new(n: usize) -> Self {
        let net = branching_feeder(n);
        let mat = build_matrices_with(&net, Scaling::NewtonDiag);
        let epsilon = sync_step_size_bound(&mat) / 2.0;
        let cfg = ControllerConfig::flat(n, epsilon, Scaling::NewtonDiag).expect("valid step");
        let limits = VarLimits::symmetric(n, 0.1).expect("valid box");
        let vbar = ramp_mean_profile(n);
        let q = DVector::from_fn(n, |j, _| 0.05 * ((j % 5) as f64 - 2.0) / 2.0);
        Fixture {
            net,
            mat,
            cfg,
            limits,
            vbar,
            q,
        }
    }
}

/// Path to a shipped scenario file.
pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.json"))
}
