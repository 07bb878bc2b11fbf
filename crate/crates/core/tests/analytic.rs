//! Monte Carlo and discrete-ordinates fluxes against closed-form solutions.

use nsplit_core::analysis::replica_seed;
use nsplit_core::{
    reference_solution, steady_state_solve, Extent, HybridConfig, Material, Mesh, ProblemSpec,
    ReferenceSettings, RegionSpec, SamplerKind, ScatterCap,
};

/// `E_3(x) = ∫_0^1 μ e^{-x/μ} dμ` by composite Simpson on a fine grid.
fn e3(x: f64) -> f64 {
    let n = 20_000;
    let h = 1.0 / n as f64;
    let f = |mu: f64| if mu == 0.0 { 0.0 } else { mu * (-x / mu).exp() };
    let mut s = f(0.0) + f(1.0);
    for k in 1..n {
        s += f(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Cell-averaged scalar flux in a purely absorbing slab `[0, L]` with a
/// uniform isotropic source `q`:
/// `φ(x) = q/(2σ) [2 − E_2(σx) − E_2(σ(L−x))]`, integrated with `E_3' = −E_2`.
fn absorber_flux(sigma: f64, q: f64, length: f64, cells: usize) -> Vec<f64> {
    let h = length / cells as f64;
    (0..cells)
        .map(|k| {
            let (a, b) = (k as f64 * h, (k + 1) as f64 * h);
            let left = (e3(sigma * a) - e3(sigma * b)) / (sigma * h);
            let right = (e3(sigma * (length - b)) - e3(sigma * (length - a))) / (sigma * h);
            q / (2.0 * sigma) * (2.0 - left - right)
        })
        .collect()
}

fn absorber(sigma: f64, length: f64, cells: usize) -> ProblemSpec {
    ProblemSpec::new(
        Mesh::uniform_slab(0.0, length, cells).unwrap(),
        vec![RegionSpec::new(
            Extent::slab(0.0, length),
            Material::new(sigma, 0.0, 1.0),
        )],
    )
    .unwrap()
}

#[test]
fn exponential_integral_oracle() {
    assert!((e3(0.0) - 0.5).abs() < 1e-10);
    // E_3(1) from tables.
    assert!((e3(1.0) - 0.109_691_6).abs() < 1e-6);
}

#[test]
fn monte_carlo_matches_pure_absorber() {
    let (sigma, length, cells) = (1.0, 2.0, 10);
    let problem = absorber(sigma, length, cells);
    let exact = absorber_flux(sigma, 1.0, length, cells);
    let base = HybridConfig::new(ScatterCap::Unlimited, 1 << 14, SamplerKind::Mc);
    let replicas: Vec<Vec<f64>> = (0..12)
        .map(|r| {
            let (seed, start) = replica_seed(&base, r);
            steady_state_solve(&base.clone().with_seed(seed, start), &problem)
                .unwrap()
                .flux
        })
        .collect();
    let n = replicas.len() as f64;
    for c in 0..cells {
        let m = replicas.iter().map(|f| f[c]).sum::<f64>() / n;
        let var = replicas.iter().map(|f| (f[c] - m).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        assert!(
            (m - exact[c]).abs() < 5.0 * se + 1e-12,
            "cell {c}: {m} ± {se} vs {}",
            exact[c]
        );
    }
}

#[test]
fn quasi_monte_carlo_is_close_to_pure_absorber() {
    let (sigma, length, cells) = (0.5, 4.0, 8);
    let problem = absorber(sigma, length, cells);
    let exact = absorber_flux(sigma, 1.0, length, cells);
    let cfg = HybridConfig::new(ScatterCap::Unlimited, 1 << 16, SamplerKind::Qmc);
    let flux = steady_state_solve(&cfg, &problem).unwrap().flux;
    for (f, e) in flux.iter().zip(&exact) {
        assert!((f - e).abs() < 3e-3 * e, "{f} vs {e}");
    }
}

#[test]
fn fine_discrete_ordinates_matches_pure_absorber() {
    let (sigma, length, cells) = (1.0, 2.0, 10);
    let problem = absorber(sigma, length, cells);
    let exact = absorber_flux(sigma, 1.0, length, cells);
    let settings = ReferenceSettings {
        refine: 64,
        order: 64,
        tol: 1e-12,
        max_iter: 10,
    };
    let phi = reference_solution(&problem, &settings).unwrap();
    for (f, e) in phi.iter().zip(&exact) {
        assert!((f - e).abs() < 2e-3 * e, "{f} vs {e}");
    }
}
