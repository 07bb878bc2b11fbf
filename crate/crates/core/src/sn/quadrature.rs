use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};
use crate::geometry::{Direction, Mesh};

/// Discrete ordinates with weights summing to `4π`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureSet {
    pub directions: Vec<Direction>,
    pub weights: Vec<f64>,
}

impl QuadratureSet {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `S_N` set for a mesh: Gauss–Legendre in a slab, polar order `N` times
    /// `2N` azimuths in XY.
    pub fn for_mesh(mesh: &Mesh, order: usize) -> Result<Self> {
        match mesh.dimension() {
            1 => gauss_legendre_quadrature(order),
            _ => product_quadrature_2d(order, 2 * order),
        }
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess for the i-th largest root.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[n - 1 - i] = x;
        nodes[i] = -x;
        weights[n - 1 - i] = w;
        weights[i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Slab quadrature: Gauss–Legendre in `μ = Ω_z`, weights carrying the `2π`
/// azimuthal factor.
pub fn gauss_legendre_quadrature(order: usize) -> Result<QuadratureSet> {
    if order < 2 || order % 2 != 0 {
        return Err(Error::param(
            "sn_order",
            format!("Gauss-Legendre order must be even and >= 2, got {order}"),
        ));
    }
    let (mu, w) = gauss_legendre(order);
    Ok(QuadratureSet {
        directions: mu
            .iter()
            .map(|&m| [(1.0 - m * m).sqrt(), 0.0, m])
            .collect(),
        weights: w.iter().map(|w| TAU * w).collect(),
    })
}

/// Product set: Gauss–Legendre in the polar cosine times equally weighted,
/// equally spaced azimuths offset from the axes.
pub fn product_quadrature_2d(polar_order: usize, azimuths: usize) -> Result<QuadratureSet> {
    if polar_order < 2 || polar_order % 2 != 0 {
        return Err(Error::param(
            "sn_order",
            format!("polar order must be even and >= 2, got {polar_order}"),
        ));
    }
    if azimuths < 4 || azimuths % 4 != 0 {
        return Err(Error::param(
            "azimuths",
            format!("azimuthal count must be a positive multiple of 4, got {azimuths}"),
        ));
    }
    let (mu, w) = gauss_legendre(polar_order);
    let dphi = TAU / azimuths as f64;
    let mut directions = Vec::with_capacity(polar_order * azimuths);
    let mut weights = Vec::with_capacity(polar_order * azimuths);
    for (&m, &wm) in mu.iter().zip(&w) {
        let s = (1.0 - m * m).sqrt();
        for k in 0..azimuths {
            let phi = (k as f64 + 0.5) * dphi;
            directions.push([s * phi.cos(), s * phi.sin(), m]);
            weights.push(wm * dphi);
        }
    }
    Ok(QuadratureSet {
        directions,
        weights,
    })
}
