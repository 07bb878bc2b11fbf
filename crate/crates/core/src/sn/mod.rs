//! Discrete-ordinates solver: upwind step-scheme sweeps and source iteration.

mod quadrature;

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoundarySource, Direction, Face, ProblemSpec};

pub use quadrature::{gauss_legendre, gauss_legendre_quadrature, product_quadrature_2d, QuadratureSet};

/// Quadrature order and stopping rule for source iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnSettings {
    #[serde(rename = "sn_order")]
    pub order: usize,
    #[serde(rename = "sn_tol")]
    pub tol: f64,
    #[serde(rename = "sn_max_iter")]
    pub max_iter: usize,
}

impl Default for SnSettings {
    fn default() -> Self {
        SnSettings {
            order: 4,
            tol: 1e-6,
            max_iter: 10_000,
        }
    }
}

impl SnSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::param("sn_tol", format!("{} must be positive", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::param("sn_max_iter", "must be at least 1"));
        }
        if self.order < 2 || self.order % 2 != 0 {
            return Err(Error::param(
                "sn_order",
                format!("{} must be even and >= 2", self.order),
            ));
        }
        Ok(())
    }
}

/// Flux magnitude the iteration change is measured against.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum ConvergenceScale {
    /// Maximum of the current iterate.
    #[default]
    Iterate,
    /// A fixed value.
    Fixed(f64),
    /// Maximum of `background + φ` over cells, for a solve that is one part of
    /// a larger flux.
    WithBackground(Vec<f64>),
}

impl ConvergenceScale {
    fn value(&self, phi: &[f64]) -> f64 {
        match self {
            ConvergenceScale::Iterate => phi.iter().cloned().fold(0.0, f64::max),
            ConvergenceScale::Fixed(s) => *s,
            ConvergenceScale::WithBackground(b) => {
                phi.iter().zip(b).map(|(p, b)| p + b).fold(0.0, f64::max)
            }
        }
    }
}

/// Extra knobs for [`source_iteration_with`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveOptions {
    pub scale: ConvergenceScale,
    /// Additional removal rate, e.g. `1/(c Δt)` for an implicit time step.
    pub extra_removal: f64,
    /// Use the problem's boundary intensity as inflow instead of vacuum.
    pub inflow: bool,
}

/// Integrated production and loss terms of the final sweep.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SnBalance {
    pub fixed_source: f64,
    pub in_scatter: f64,
    pub inflow: f64,
    pub absorption: f64,
    pub self_scatter: f64,
    pub extra_removal: f64,
    pub leakage: f64,
}

impl SnBalance {
    /// Relative mismatch between production and loss of the final sweep.
    pub fn residual(&self) -> f64 {
        let gain = self.fixed_source + self.in_scatter + self.inflow;
        let loss = self.absorption + self.self_scatter + self.extra_removal + self.leakage;
        if gain == 0.0 {
            loss.abs()
        } else {
            (gain - loss).abs() / gain
        }
    }

    /// Mismatch with the scattering terms netted out; shrinks with the
    /// iteration tolerance.
    pub fn net_residual(&self) -> f64 {
        let gain = self.fixed_source + self.inflow;
        let loss = self.absorption + self.extra_removal + self.leakage;
        if gain == 0.0 {
            loss.abs()
        } else {
            (gain - loss).abs() / gain
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnSolution {
    /// Angular flux, indexed `[ordinate][cell]`.
    pub psi: Vec<Vec<f64>>,
    /// Scalar flux `Σ_m w_m ψ_m` per cell.
    pub phi: Vec<f64>,
    pub iterations: usize,
    /// Max-norm change of `phi` after each iteration.
    pub changes: Vec<f64>,
    pub balance: SnBalance,
}

impl SnSolution {
    fn zeros(ordinates: usize, cells: usize) -> Self {
        SnSolution {
            psi: vec![vec![0.0; cells]; ordinates],
            phi: vec![0.0; cells],
            iterations: 0,
            changes: Vec::new(),
            balance: SnBalance::default(),
        }
    }
}

struct Sweep {
    psi: Vec<f64>,
    leakage: f64,
    inflow: f64,
}

/// One upwind sweep for a single direction with vacuum inflow. `source` is the
/// isotropic emission density per steradian in each cell.
pub fn sweep(problem: &ProblemSpec, omega: &Direction, source: &[f64]) -> Vec<f64> {
    sweep_inner(problem, omega, source, 0.0, &BoundarySource::VACUUM).psi
}

fn sweep_inner(
    problem: &ProblemSpec,
    omega: &Direction,
    source: &[f64],
    extra_removal: f64,
    boundary: &BoundarySource,
) -> Sweep {
    let mesh = &problem.mesh;
    let (nx, ny) = (mesh.nx(), mesh.ny());
    let v = mesh.plane_velocity(omega);
    let (ax, ay) = (v[0].abs(), v[1].abs());
    let xe = mesh.x_edges();
    let ye: Vec<f64> = match mesh.y_edges() {
        Some(e) => e.to_vec(),
        None => vec![0.0, 1.0],
    };
    let dx = |i: usize| xe[i + 1] - xe[i];
    let dy = |j: usize| ye[j + 1] - ye[j];

    let (gx, gy) = (
        if v[0] >= 0.0 { boundary.on(Face::XLow) } else { boundary.on(Face::XHigh) },
        if v[1] >= 0.0 { boundary.on(Face::YLow) } else { boundary.on(Face::YHigh) },
    );
    let mut in_x = vec![gx; ny];
    let mut in_y = vec![gy; nx];
    let inflow = gx * ax * (ye[ny] - ye[0]) + gy * ay * (xe[nx] - xe[0]);

    let mut psi = vec![0.0; nx * ny];
    let materials = problem.cell_materials();
    for jj in 0..ny {
        let j = if v[1] >= 0.0 { jj } else { ny - 1 - jj };
        for ii in 0..nx {
            let i = if v[0] >= 0.0 { ii } else { nx - 1 - ii };
            let c = mesh.cell_index(i, j);
            let (hx, hy) = (dx(i), dy(j));
            let vol = hx * hy;
            let fx = ax * hy;
            let fy = ay * hx;
            let removal = materials[c].sigma_t() + extra_removal;
            let denom = fx + fy + removal * vol;
            let value = if denom > 0.0 {
                (source[c] * vol + fx * in_x[j] + fy * in_y[i]) / denom
            } else {
                0.0
            };
            psi[c] = value;
            in_x[j] = value;
            in_y[i] = value;
        }
    }
    let leakage = ax * (0..ny).map(|j| dy(j) * in_x[j]).sum::<f64>()
        + ay * (0..nx).map(|i| dx(i) * in_y[i]).sum::<f64>();
    Sweep {
        psi,
        leakage,
        inflow,
    }
}

/// Source iteration with vacuum inflow and the default stopping rule.
pub fn source_iteration(
    fixed: &[f64],
    problem: &ProblemSpec,
    quadrature: &QuadratureSet,
    tol: f64,
    max_iter: usize,
) -> Result<SnSolution> {
    source_iteration_with(fixed, problem, quadrature, tol, max_iter, &SolveOptions::default())
}

/// Solves `Ω·∇ψ + (σ_t + extra) ψ = f + σ_s φ / 4π` by source iteration.
///
/// `fixed` is the isotropic fixed source per steradian. Iteration stops once
/// `max|φ_new − φ_old| ≤ tol · scale`. A zero fixed source with vacuum inflow
/// returns immediately with zero iterations, and a problem without scattering
/// stops after one sweep.
pub fn source_iteration_with(
    fixed: &[f64],
    problem: &ProblemSpec,
    quadrature: &QuadratureSet,
    tol: f64,
    max_iter: usize,
    opts: &SolveOptions,
) -> Result<SnSolution> {
    let mesh = &problem.mesh;
    let cells = mesh.cell_count();
    if fixed.len() != cells {
        return Err(Error::MeshMismatch {
            left: fixed.len(),
            right: cells,
        });
    }
    if let Some((c, f)) = fixed
        .iter()
        .enumerate()
        .find(|(_, f)| !(f.is_finite() && **f >= 0.0))
    {
        return Err(Error::param("fixed_source", format!("{f} in cell {c}")));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::param("sn_tol", format!("{tol} must be positive")));
    }
    if let ConvergenceScale::WithBackground(b) = &opts.scale {
        if b.len() != cells {
            return Err(Error::MeshMismatch {
                left: b.len(),
                right: cells,
            });
        }
    }
    if !(opts.extra_removal.is_finite() && opts.extra_removal >= 0.0) {
        return Err(Error::param("extra_removal", format!("{}", opts.extra_removal)));
    }
    let boundary = if opts.inflow {
        problem.boundary
    } else {
        BoundarySource::VACUUM
    };

    let mut sol = SnSolution::zeros(quadrature.len(), cells);
    if fixed.iter().all(|&f| f == 0.0) && boundary.is_vacuum() {
        return Ok(sol);
    }

    let volumes = mesh.volumes();
    let materials = problem.cell_materials();
    let scattering = problem.has_scattering();
    let wsum: f64 = quadrature.weights.iter().sum();
    let fixed_total = wsum * fixed.iter().zip(&volumes).map(|(f, v)| f * v).sum::<f64>();

    let mut source = vec![0.0; cells];
    for k in 1..=max_iter {
        for c in 0..cells {
            source[c] = fixed[c] + materials[c].sigma_s * sol.phi[c] / (4.0 * PI);
        }
        let in_scatter = wsum / (4.0 * PI)
            * (0..cells)
                .map(|c| materials[c].sigma_s * sol.phi[c] * volumes[c])
                .sum::<f64>();
        let sweeps: Vec<Sweep> = quadrature
            .directions
            .par_iter()
            .map(|omega| sweep_inner(problem, omega, &source, opts.extra_removal, &boundary))
            .collect();

        let mut phi = vec![0.0; cells];
        let mut leakage = 0.0;
        let mut inflow = 0.0;
        for (s, &w) in sweeps.iter().zip(&quadrature.weights) {
            for (p, q) in phi.iter_mut().zip(&s.psi) {
                *p += w * q;
            }
            leakage += w * s.leakage;
            inflow += w * s.inflow;
        }
        let change = phi
            .iter()
            .zip(&sol.phi)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);

        let integral = |f: &dyn Fn(usize) -> f64| (0..cells).map(|c| f(c) * phi[c] * volumes[c]).sum::<f64>();
        sol.balance = SnBalance {
            fixed_source: fixed_total,
            in_scatter,
            inflow,
            absorption: integral(&|c| materials[c].sigma_a),
            self_scatter: integral(&|c| materials[c].sigma_s),
            extra_removal: integral(&|_| opts.extra_removal),
            leakage,
        };
        sol.psi = sweeps.into_iter().map(|s| s.psi).collect();
        sol.phi = phi;
        sol.iterations = k;
        sol.changes.push(change);

        let scale = opts.scale.value(&sol.phi);
        if !scattering || change <= tol * scale {
            return Ok(sol);
        }
        if !change.is_finite() {
            break;
        }
    }
    let last_change = sol.changes.last().copied().unwrap_or(f64::NAN);
    Err(Error::NonConvergence {
        iterations: sol.iterations,
        last_change,
        last: Box::new(sol),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Extent, Material, Mesh, RegionSpec};

    fn slab(len: f64, cells: usize, m: Material) -> ProblemSpec {
        ProblemSpec::new(
            Mesh::uniform_slab(0.0, len, cells).unwrap(),
            vec![RegionSpec::new(Extent::slab(0.0, len), m)],
        )
        .unwrap()
    }

    #[test]
    fn zero_source_gives_zero_flux() {
        let p = slab(1.0, 5, Material::new(1.0, 1.0, 0.0));
        let q = gauss_legendre_quadrature(4).unwrap();
        assert!(sweep(&p, &q.directions[0], &[0.0; 5]).iter().all(|&x| x == 0.0));
        let s = source_iteration(&[0.0; 5], &p, &q, 1e-6, 100).unwrap();
        assert_eq!(s.iterations, 0);
        assert!(s.phi.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn one_cell_balance() {
        let (h, sigma, s, mu) = (0.7, 2.0, 3.0, 0.4);
        let p = slab(h, 1, Material::new(sigma, 0.0, 0.0));
        let omega = [(1.0f64 - mu * mu).sqrt(), 0.0, mu];
        let psi = sweep(&p, &omega, &[s]);
        assert!((psi[0] - s * h / (mu + sigma * h)).abs() < 1e-15);
        let back = sweep(&p, &[omega[0], 0.0, -mu], &[s]);
        assert_eq!(psi, back);
    }

    #[test]
    fn void_cells_need_no_division_by_sigma() {
        let p = slab(1.0, 4, Material::VACUUM);
        let psi = sweep(&p, &[0.0, 0.0, 1.0], &[1.0; 4]);
        // ψ grows by s·h/μ across each cell.
        for (k, v) in psi.iter().enumerate() {
            assert!((v - 0.25 * (k + 1) as f64).abs() < 1e-14);
        }
    }

    #[test]
    fn infinite_medium_limit() {
        let p = slab(100.0, 400, Material::new(1.5, 0.0, 0.0));
        let q = gauss_legendre_quadrature(8).unwrap();
        for omega in &q.directions {
            let psi = sweep(&p, omega, &[0.6; 400]);
            assert!((psi[200] - 0.4).abs() < 1e-9);
        }
    }

    #[test]
    fn pure_absorber_converges_in_one_sweep() {
        let p = slab(2.0, 10, Material::new(1.0, 0.0, 0.0));
        let q = gauss_legendre_quadrature(4).unwrap();
        let s = source_iteration(&[1.0; 10], &p, &q, 1e-12, 10).unwrap();
        assert_eq!(s.iterations, 1);
    }

    #[test]
    fn spectral_radius_matches_scattering_ratio() {
        let p = slab(200.0, 400, Material::new(0.1, 0.9, 0.0));
        let q = gauss_legendre_quadrature(8).unwrap();
        let s = source_iteration(&[1.0; 400], &p, &q, 1e-8, 2000).unwrap();
        assert!(s.iterations > 100);
        let ratio = s.changes[40] / s.changes[39];
        assert!((ratio - 0.9).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn balance_and_quadrature_consistency() {
        let p = slab(4.0, 40, Material::new(0.3, 0.7, 0.0));
        let q = gauss_legendre_quadrature(8).unwrap();
        let f: Vec<f64> = (0..40).map(|c| if c < 10 { 1.0 } else { 0.0 }).collect();
        let s = source_iteration(&f, &p, &q, 1e-10, 1000).unwrap();
        assert!(s.balance.residual() < 1e-12, "{:?}", s.balance);
        assert!(s.balance.net_residual() < 1e-8);
        for c in 0..40 {
            let sum: f64 = q.weights.iter().zip(&s.psi).map(|(w, p)| w * p[c]).sum();
            assert!((sum - s.phi[c]).abs() <= 1e-12 * s.phi[c].max(1.0));
            assert!(s.phi[c] >= 0.0);
        }
    }

    #[test]
    fn non_convergence_carries_last_iterate() {
        let p = slab(50.0, 50, Material::new(0.01, 0.99, 0.0));
        let q = gauss_legendre_quadrature(4).unwrap();
        match source_iteration(&[1.0; 50], &p, &q, 1e-12, 3) {
            Err(Error::NonConvergence { iterations, last, .. }) => {
                assert_eq!(iterations, 3);
                assert_eq!(last.iterations, 3);
                assert!(last.phi.iter().all(|&x| x > 0.0));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn two_dimensional_balance_with_inflow() {
        let p = ProblemSpec::new(
            Mesh::uniform_rect((0.0, 2.0), 6, (0.0, 3.0), 5).unwrap(),
            vec![RegionSpec::new(
                Extent::rect((0.0, 2.0), (0.0, 3.0)),
                Material::new(0.5, 0.5, 0.0),
            )],
        )
        .unwrap()
        .with_boundary(BoundarySource {
            intensity: [1.0, 0.0, 0.5, 0.0],
        })
        .unwrap();
        let q = product_quadrature_2d(4, 8).unwrap();
        let opts = SolveOptions {
            inflow: true,
            ..Default::default()
        };
        let s = source_iteration_with(&[0.0; 30], &p, &q, 1e-10, 1000, &opts).unwrap();
        assert!(s.iterations > 1);
        assert!(s.balance.residual() < 1e-12);
        assert!(s.balance.net_residual() < 1e-8);
        // Incoming current π·G per unit face length.
        let expect = std::f64::consts::PI * (1.0 * 3.0 + 0.5 * 2.0);
        assert!((s.balance.inflow - expect).abs() < 0.05 * expect);
    }

    #[test]
    fn extra_removal_enters_balance() {
        let p = slab(3.0, 12, Material::new(0.2, 0.8, 0.0));
        let q = gauss_legendre_quadrature(4).unwrap();
        let opts = SolveOptions {
            extra_removal: 2.0,
            ..Default::default()
        };
        let s = source_iteration_with(&[1.0; 12], &p, &q, 1e-10, 1000, &opts).unwrap();
        assert!(s.balance.extra_removal > 0.0);
        assert!(s.balance.residual() < 1e-12);
    }
}
