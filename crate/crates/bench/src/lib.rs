//! Shared fixtures for the benchmarks.

use nsplit_core::{reed_problem, HybridConfig, ProblemSpec, SamplerKind, ScatterCap};

pub fn reed() -> ProblemSpec {
    reed_problem(80).expect("Reed preset")
}

/// The Reed hybrid settings used by the convergence sweeps.
pub fn reed_config(cap: ScatterCap, n_p: usize, sampler: SamplerKind) -> HybridConfig {
    let mut c = HybridConfig::new(cap, n_p, sampler);
    c.sn.order = 16;
    c.sn_refine = 16;
    c.sn.tol = 3e-5;
    c
}
