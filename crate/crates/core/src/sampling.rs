//! Indexed uniform-sample streams and the transforms that turn unit-cube
//! samples into physical particle states.
//!
//! A stream is a pure function of `(particle_index, dim)`. Switching a run
//! from pseudorandom to quasi-random sampling only changes the stream kind;
//! every downstream transform is shared.
//!
//! Per-history dimension layout:
//!
//! | dims              | use                                   |
//! |-------------------|---------------------------------------|
//! | 0, 1              | birth position (one per spatial axis) |
//! | 2, 3              | birth direction (polar cosine, azimuth) |
//! | 4                 | birth time (time-dependent runs)      |
//! | 5+3k              | optical depth to scatter `k`          |
//! | 6+3k, 7+3k        | direction after scatter `k`           |

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Direction, Face, Mesh, Point, ProblemSpec};
use crate::mc::Particle;

pub const DIM_POS_X: usize = 0;
pub const DIM_POS_Y: usize = 1;
pub const DIM_DIR_MU: usize = 2;
pub const DIM_DIR_PHI: usize = 3;
pub const DIM_TIME: usize = 4;

#[inline]
pub const fn dim_scatter_depth(k: usize) -> usize {
    5 + 3 * k
}

#[inline]
pub const fn dim_scatter_direction(k: usize) -> (usize, usize) {
    (6 + 3 * k, 7 + 3 * k)
}

/// Number of scatters covered by the default Halton dimension budget.
pub const BUDGET_SCATTERS: usize = 8;

/// Default dimension budget for a scatter cap (`None` is unlimited).
pub fn default_dimension_budget(scatter_cap: Option<u32>) -> usize {
    let k = scatter_cap.map_or(BUDGET_SCATTERS, |n| (n as usize).min(BUDGET_SCATTERS));
    dim_scatter_depth(k)
}

const PRIMES: [u64; 64] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
    97, 101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191,
    193, 197, 199, 211, 223, 227, 229, 233, 239, 241, 251, 257, 263, 269, 271, 277, 281, 283, 293,
    307, 311,
];

/// Largest usable Halton dimension budget.
pub const MAX_HALTON_DIMS: usize = PRIMES.len();

/// The `(dim + 1)`-th prime.
pub fn nth_prime(dim: usize) -> Option<u64> {
    PRIMES.get(dim).copied()
}

/// Base-`base` radical inverse of `index`: digits mirrored about the radix point.
pub fn radical_inverse(index: u64, base: u64) -> f64 {
    debug_assert!(base >= 2);
    let inv = 1.0 / base as f64;
    let mut scale = inv;
    let mut n = index;
    let mut value = 0.0;
    while n > 0 {
        value += (n % base) as f64 * scale;
        n /= base;
        scale *= inv;
    }
    value.min(ONE_BELOW)
}

const ONE_BELOW: f64 = 1.0 - f64::EPSILON / 2.0;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based uniform in [0, 1): a keyed hash of `(index, dim)`.
#[inline]
pub fn counter_uniform(key: u64, index: u64, dim: u64) -> f64 {
    let a = mix64(key.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let b = mix64(a ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03));
    let h = mix64(b ^ dim.wrapping_mul(0xaef1_7502_108e_f2d9).wrapping_add(0x632b_e59b));
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    /// Counter-based pseudorandom numbers.
    Mc,
    /// Halton low-discrepancy points.
    Qmc,
}

impl SamplerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplerKind::Mc => "mc",
            SamplerKind::Qmc => "qmc",
        }
    }
}

impl std::fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mc" | "pseudorandom" => Ok(SamplerKind::Mc),
            "qmc" | "halton" => Ok(SamplerKind::Qmc),
            other => Err(Error::param("sampler", format!("unknown sampler `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    Pseudorandom { seed: u64 },
    Halton { start_index: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleStream {
    kind: StreamKind,
    dimension_budget: usize,
    /// Key for the pseudorandom generator (and the Halton overflow dims).
    key: u64,
}

impl SampleStream {
    pub fn pseudorandom(seed: u64) -> Self {
        SampleStream {
            kind: StreamKind::Pseudorandom { seed },
            dimension_budget: default_dimension_budget(None),
            key: seed,
        }
    }

    pub fn halton(start_index: u64) -> Self {
        SampleStream {
            kind: StreamKind::Halton { start_index },
            dimension_budget: default_dimension_budget(None),
            key: mix64(start_index ^ 0x4a41_4c54_4f4e),
        }
    }

    /// Stream for a sampler kind; `seed` keys the pseudorandom generator and
    /// `start_index` offsets the Halton sequence.
    pub fn for_sampler(kind: SamplerKind, seed: u64, start_index: u64) -> Self {
        match kind {
            SamplerKind::Mc => Self::pseudorandom(seed),
            SamplerKind::Qmc => {
                let mut s = Self::halton(start_index);
                s.key = mix64(seed ^ s.key);
                s
            }
        }
    }

    pub fn with_dimension_budget(mut self, budget: usize) -> Self {
        self.dimension_budget = budget.min(MAX_HALTON_DIMS);
        self
    }

    pub fn kind(&self) -> StreamKind {
        self.kind
    }

    pub fn dimension_budget(&self) -> usize {
        self.dimension_budget
    }

    pub fn is_quasi(&self) -> bool {
        matches!(self.kind, StreamKind::Halton { .. })
    }

    /// An independent stream for a different particle population
    /// (boundary particles, census continuations, remap emission, ...).
    pub fn derive(&self, tag: u64) -> Self {
        let key = mix64(self.key ^ mix64(tag.wrapping_add(0x5851_f42d_4c95_7f2d)));
        let kind = match self.kind {
            StreamKind::Pseudorandom { .. } => StreamKind::Pseudorandom { seed: key },
            StreamKind::Halton { start_index } => StreamKind::Halton {
                start_index: start_index.wrapping_add(tag.wrapping_mul(1 << 36)),
            },
        };
        SampleStream {
            kind,
            dimension_budget: self.dimension_budget,
            key,
        }
    }

    #[inline]
    pub fn draw(&self, particle_index: u64, dim: usize) -> f64 {
        match self.kind {
            StreamKind::Halton { start_index } if dim < self.dimension_budget => {
                radical_inverse(start_index.wrapping_add(particle_index), PRIMES[dim])
            }
            _ => counter_uniform(self.key, particle_index, dim as u64),
        }
    }
}

/// Isotropic direction from two uniforms: `μ = 2u1 − 1`, `φ = 2π u2`, `Ω_z = μ`.
#[inline]
pub fn sample_isotropic_direction(u1: f64, u2: f64) -> Direction {
    let mu = 2.0 * u1 - 1.0;
    let s = (1.0 - mu * mu).max(0.0).sqrt();
    let phi = TAU * u2;
    [s * phi.cos(), s * phi.sin(), mu]
}

/// Inverse-CDF exponential flight distance; infinite in a void.
#[inline]
pub fn sample_exponential_distance(u: f64, sigma: f64) -> f64 {
    if sigma > 0.0 {
        sample_optical_depth(u) / sigma
    } else {
        f64::INFINITY
    }
}

/// Unit-rate exponential optical depth `−ln(1 − u)`.
#[inline]
pub fn sample_optical_depth(u: f64) -> f64 {
    -(-u).ln_1p()
}

/// Cosine-weighted direction entering through a face.
pub fn sample_inward_direction(mesh: &Mesh, face: Face, u1: f64, u2: f64) -> Direction {
    let c = u1.sqrt();
    let s = (1.0 - c * c).max(0.0).sqrt();
    let phi = TAU * u2;
    let (a, b) = (s * phi.cos(), s * phi.sin());
    let inward = -match face {
        Face::XLow | Face::YLow => -1.0,
        Face::XHigh | Face::YHigh => 1.0,
    } * c;
    match (mesh.dimension(), face) {
        (1, _) => [a, b, inward],
        (_, Face::XLow | Face::XHigh) => [inward, a, b],
        (_, _) => [a, inward, b],
    }
}

/// Time window of a transport leg. Steady-state legs are `[0, ∞)` with unit span.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeWindow {
    pub start: f64,
    pub end: f64,
}

impl TimeWindow {
    pub const STEADY: TimeWindow = TimeWindow {
        start: 0.0,
        end: f64::INFINITY,
    };

    pub fn step(start: f64, dt: f64) -> Self {
        TimeWindow {
            start,
            end: start + dt,
        }
    }

    pub fn is_steady(&self) -> bool {
        self.end.is_infinite()
    }

    /// Duration weighting applied to source integrals (1 per unit time in steady state).
    pub fn span(&self) -> f64 {
        if self.is_steady() {
            1.0
        } else {
            self.end - self.start
        }
    }

    #[inline]
    fn sample(&self, u: f64) -> f64 {
        if self.is_steady() {
            self.start
        } else {
            self.start + u * (self.end - self.start)
        }
    }
}

#[derive(Debug, Clone)]
struct SourceBox {
    lo: Point,
    hi: Point,
}

/// Piecewise-uniform volumetric source over boxes: inverse CDF picks a box,
/// the remainder of the same uniform places the particle inside it.
#[derive(Debug, Clone)]
pub struct VolumeSource {
    boxes: Vec<SourceBox>,
    cdf: Vec<f64>,
    total: f64,
    dimension: usize,
}

impl VolumeSource {
    fn from_boxes(mesh: &Mesh, items: impl Iterator<Item = (Point, Point, f64)>) -> Self {
        let mut boxes = Vec::new();
        let mut weights = Vec::new();
        for (lo, hi, strength) in items {
            if strength > 0.0 {
                boxes.push(SourceBox { lo, hi });
                weights.push(strength);
            }
        }
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        let cdf = weights
            .iter()
            .map(|w| {
                acc += w;
                acc / total
            })
            .collect();
        VolumeSource {
            boxes,
            cdf,
            total,
            dimension: mesh.dimension(),
        }
    }

    /// Region-wise `Q` source of a problem.
    pub fn from_problem(problem: &ProblemSpec) -> Self {
        let mesh = &problem.mesh;
        let (dlo, dhi) = mesh.domain();
        Self::from_boxes(
            mesh,
            problem.regions.iter().map(|r| {
                let (ylo, yhi) = r.extent.y.unwrap_or((dlo[1], dhi[1]));
                let lo = [r.extent.x.0, ylo];
                let hi = [r.extent.x.1, yhi];
                let vol = (hi[0] - lo[0]) * (hi[1] - lo[1]);
                (lo, hi, r.material.q * vol)
            }),
        )
    }

    /// Cell-wise source from a per-cell emission density (angle-integrated).
    pub fn from_cell_density(mesh: &Mesh, density: &[f64]) -> Self {
        Self::from_boxes(
            mesh,
            (0..mesh.cell_count()).map(|c| {
                let (lo, hi) = mesh.cell_bounds(c);
                (lo, hi, density[c] * mesh.volume(c))
            }),
        )
    }

    /// Source integral over space (per unit time).
    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Position from the position dims of a stream sample.
    pub fn sample_position(&self, u0: f64, u1: f64) -> Point {
        let k = self
            .cdf
            .partition_point(|&c| c <= u0)
            .min(self.boxes.len() - 1);
        let lo_c = if k == 0 { 0.0 } else { self.cdf[k - 1] };
        let width = self.cdf[k] - lo_c;
        let v = if width > 0.0 {
            ((u0 - lo_c) / width).clamp(0.0, ONE_BELOW)
        } else {
            0.5
        };
        let b = &self.boxes[k];
        let x = inside(b.lo[0], b.hi[0], v);
        let y = if self.dimension == 2 {
            inside(b.lo[1], b.hi[1], u1)
        } else {
            0.0
        };
        [x, y]
    }

    /// Birth state of particle `index` out of `count` equally weighted births.
    pub fn sample_birth(
        &self,
        stream: &SampleStream,
        index: u64,
        count: usize,
        window: TimeWindow,
    ) -> (Point, Direction, f64, f64) {
        let x = self.sample_position(stream.draw(index, DIM_POS_X), stream.draw(index, DIM_POS_Y));
        let omega = sample_isotropic_direction(
            stream.draw(index, DIM_DIR_MU),
            stream.draw(index, DIM_DIR_PHI),
        );
        let t = window.sample(stream.draw(index, DIM_TIME));
        let w = self.total * window.span() / count as f64;
        (x, omega, t, w)
    }
}

#[inline]
fn inside(lo: f64, hi: f64, v: f64) -> f64 {
    let x = lo + v * (hi - lo);
    if x >= hi {
        hi.next_down()
    } else {
        x.max(lo)
    }
}

/// Births from the volumetric source `Q`. Particle `index` in `0..n_particles`
/// carries weight `∫Q · span / n_particles`.
pub fn sample_source_birth(
    stream: &SampleStream,
    particle_index: u64,
    problem: &ProblemSpec,
    n_particles: usize,
    window: TimeWindow,
) -> Result<Particle> {
    let source = VolumeSource::from_problem(problem);
    if source.is_empty() {
        return Err(Error::EmptySource);
    }
    let (x, omega, t, w) = source.sample_birth(stream, particle_index, n_particles, window);
    Ok(Particle::new(x, omega, t, w))
}

/// Isotropic incoming boundary intensity sampled as cosine-weighted entries.
#[derive(Debug, Clone)]
pub struct BoundaryEmitter {
    faces: Vec<Face>,
    cdf: Vec<f64>,
    total: f64,
}

impl BoundaryEmitter {
    pub fn from_problem(problem: &ProblemSpec) -> Self {
        let mut faces = Vec::new();
        let mut weights = Vec::new();
        for face in Face::ALL {
            // Partial current of an isotropic intensity G is πG per unit face measure.
            let w = PI * problem.boundary.on(face) * problem.mesh.face_measure(face);
            if w > 0.0 {
                faces.push(face);
                weights.push(w);
            }
        }
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        let cdf = weights
            .iter()
            .map(|w| {
                acc += w;
                acc / total
            })
            .collect();
        BoundaryEmitter { faces, cdf, total }
    }

    /// Entering particle current per unit time.
    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn sample_entry(
        &self,
        mesh: &Mesh,
        stream: &SampleStream,
        index: u64,
        count: usize,
        window: TimeWindow,
    ) -> Particle {
        let u0 = stream.draw(index, DIM_POS_X);
        let k = self.cdf.partition_point(|&c| c <= u0).min(self.faces.len() - 1);
        let face = self.faces[k];
        let (lo, hi) = mesh.domain();
        let along = stream.draw(index, DIM_POS_Y);
        let x = match face {
            Face::XLow => [lo[0], inside(lo[1], hi[1], along)],
            Face::XHigh => [hi[0], inside(lo[1], hi[1], along)],
            Face::YLow => [inside(lo[0], hi[0], along), lo[1]],
            Face::YHigh => [inside(lo[0], hi[0], along), hi[1]],
        };
        let x = if mesh.dimension() == 1 { [x[0], 0.0] } else { x };
        let omega = sample_inward_direction(
            mesh,
            face,
            stream.draw(index, DIM_DIR_MU),
            stream.draw(index, DIM_DIR_PHI),
        );
        let t = window.sample(stream.draw(index, DIM_TIME));
        let w = self.total * window.span() / count as f64;
        Particle::new(x, omega, t, w)
    }
}

/// Squared L²-star discrepancy of a point set in the unit cube (Warnock's formula).
pub fn l2_star_discrepancy_sq(points: &[Vec<f64>]) -> f64 {
    let n = points.len() as f64;
    let d = points.first().map_or(0, |p| p.len()) as i32;
    let term1 = 3f64.powi(-d);
    let term2: f64 = points
        .iter()
        .map(|p| p.iter().map(|&x| (1.0 - x * x) / 2.0).product::<f64>())
        .sum::<f64>()
        * 2.0
        / n;
    let mut term3 = 0.0;
    for a in points {
        for b in points {
            term3 += a
                .iter()
                .zip(b)
                .map(|(&x, &y)| 1.0 - x.max(y))
                .product::<f64>();
        }
    }
    term1 - term2 + term3 / (n * n)
}
