//! Scatter-limited Monte Carlo transport with implicit capture.
//!
//! Histories scatter at most `N_s` times. Segments flown before the cap is
//! reached score into the `pre` tally with absorption-only attenuation; once
//! the cap is hit the particle streams scatter-free, attenuated by `σ_t`, and
//! scores into `post`.

mod leg;
mod remap;
mod transport;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Direction, Mesh, Point};

pub use leg::{run_mc_leg, LegOptions, LegOutput, Reduction};
pub use remap::{remap_emission_density, run_legacy_leg, run_remap, RemapInputs};
pub use transport::{advance_history, score_segment, HistoryOutcome, Termination};

/// Maximum number of scatters a history may undergo in the MC leg.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ScatterCap {
    Finite(u32),
    Unlimited,
}

impl ScatterCap {
    /// Whether a particle that has scattered `n` times may scatter again.
    #[inline]
    pub fn allows_scatter(self, n: u32) -> bool {
        match self {
            ScatterCap::Finite(cap) => n < cap,
            ScatterCap::Unlimited => true,
        }
    }

    pub fn finite(self) -> Option<u32> {
        match self {
            ScatterCap::Finite(n) => Some(n),
            ScatterCap::Unlimited => None,
        }
    }

    pub fn is_unlimited(self) -> bool {
        self == ScatterCap::Unlimited
    }

    /// Parses a signed integer cap; negative values are rejected.
    pub fn from_signed(n: i64) -> Result<Self> {
        u32::try_from(n)
            .map(ScatterCap::Finite)
            .map_err(|_| Error::InvalidScatterCap(format!("{n}")))
    }
}

impl std::fmt::Display for ScatterCap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScatterCap::Finite(n) => write!(f, "{n}"),
            ScatterCap::Unlimited => f.write_str("inf"),
        }
    }
}

impl std::str::FromStr for ScatterCap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        match t.to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "unlimited" | "∞" => Ok(ScatterCap::Unlimited),
            _ => t
                .parse::<i64>()
                .map_err(|_| Error::InvalidScatterCap(t.to_string()))
                .and_then(Self::from_signed),
        }
    }
}

impl From<ScatterCap> for String {
    fn from(c: ScatterCap) -> String {
        c.to_string()
    }
}

impl TryFrom<String> for ScatterCap {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// A computer particle. `n` counts scatters since birth or the last relabel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub x: Point,
    pub omega: Direction,
    pub t: f64,
    pub w: f64,
    pub n: u32,
}

impl Particle {
    pub fn new(x: Point, omega: Direction, t: f64, w: f64) -> Self {
        Particle {
            x,
            omega,
            t,
            w,
            n: 0,
        }
    }

    /// Same state with the scatter counter reset.
    pub fn relabeled(mut self) -> Self {
        self.n = 0;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Leg {
    Pre,
    Post,
}

/// Cell-binned track-length accumulators for the pre-limit and post-limit legs.
///
/// While a leg runs the bins hold raw `weight · cm` sums; after
/// [`TallyField::normalize`] they hold the scalar flux `∫Ψ dΩ` per cell.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TallyField {
    pub pre: Vec<f64>,
    pub post: Vec<f64>,
}

impl TallyField {
    pub fn zeros(cells: usize) -> Self {
        TallyField {
            pre: vec![0.0; cells],
            post: vec![0.0; cells],
        }
    }

    pub fn cells(&self) -> usize {
        self.pre.len()
    }

    /// Divide by cell volume and time-bin width.
    pub fn normalize(&mut self, mesh: &Mesh, span: f64) {
        for c in 0..self.cells() {
            let norm = 1.0 / (mesh.volume(c) * span);
            self.pre[c] *= norm;
            self.post[c] *= norm;
        }
    }

    pub fn add_assign(&mut self, other: &TallyField) {
        for (a, b) in self.pre.iter_mut().zip(&other.pre) {
            *a += b;
        }
        for (a, b) in self.post.iter_mut().zip(&other.post) {
            *a += b;
        }
    }

    /// Cell-wise `pre + post`.
    pub fn total(&self) -> Vec<f64> {
        self.pre.iter().zip(&self.post).map(|(a, b)| a + b).collect()
    }
}

/// Particles alive at the end of a leg, plus where the rest of the weight went.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Census {
    pub particles: Vec<Particle>,
    /// Weight injected by births, boundary entries and initial data.
    pub birth_weight: f64,
    pub exited_weight: f64,
    /// Implicit-capture deficit due to `σ_a`.
    pub absorbed_weight: f64,
    /// Weight removed at rate `σ_s` on post-limit segments (handed to the collided solve).
    pub scattered_out_weight: f64,
    /// Weight dropped at the cutoff.
    pub cutoff_weight: f64,
}

impl Census {
    pub fn census_weight(&self) -> f64 {
        self.particles.iter().map(|p| p.w).sum()
    }

    /// `|birth − (census + exited + absorbed + scattered out + cutoff)| / birth`.
    pub fn balance_residual(&self) -> f64 {
        let out = self.census_weight()
            + self.exited_weight
            + self.absorbed_weight
            + self.scattered_out_weight
            + self.cutoff_weight;
        if self.birth_weight == 0.0 {
            out.abs()
        } else {
            (self.birth_weight - out).abs() / self.birth_weight
        }
    }

    pub fn merge(&mut self, other: Census) {
        self.particles.extend(other.particles);
        self.birth_weight += other.birth_weight;
        self.exited_weight += other.exited_weight;
        self.absorbed_weight += other.absorbed_weight;
        self.scattered_out_weight += other.scattered_out_weight;
        self.cutoff_weight += other.cutoff_weight;
    }
}
