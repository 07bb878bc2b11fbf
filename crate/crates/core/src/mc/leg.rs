use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::ProblemSpec;
use crate::sampling::{BoundaryEmitter, SampleStream, TimeWindow, VolumeSource};

use super::transport::advance_history;
use super::{Census, Particle, ScatterCap, TallyField};

pub(crate) const TAG_BOUNDARY: u64 = 1;
pub(crate) const TAG_CENSUS: u64 = 2;
pub(crate) const TAG_LEGACY: u64 = 4;

/// Histories per work unit. Fixed so that results do not depend on the
/// thread count.
pub const DEFAULT_CHUNK: usize = 2048;

/// Relative weight cutoff with respect to the mean launch weight.
pub const WEIGHT_CUTOFF: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    /// Per-chunk tallies summed in chunk order: bit-reproducible.
    #[default]
    Ordered,
    /// Tree reduction in whatever order the thread pool produces.
    Unordered,
}

#[derive(Debug, Clone)]
pub struct LegOptions<'a> {
    pub window: TimeWindow,
    /// Particles carried in from the previous step (initial data).
    pub census_in: &'a [Particle],
    pub reduction: Reduction,
    pub chunk_size: usize,
}

impl Default for LegOptions<'_> {
    fn default() -> Self {
        LegOptions {
            window: TimeWindow::STEADY,
            census_in: &[],
            reduction: Reduction::Ordered,
            chunk_size: DEFAULT_CHUNK,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LegOutput {
    /// Normalized scalar-flux tallies.
    pub tally: TallyField,
    pub census: Census,
    pub source_particles: usize,
    pub boundary_particles: usize,
    pub census_particles: usize,
    pub scatters: u64,
}

impl LegOutput {
    pub fn particle_count(&self) -> usize {
        self.source_particles + self.boundary_particles + self.census_particles
    }
}

/// Splits `budget` particles between two weighted populations.
pub(crate) fn split_budget(budget: usize, a: f64, b: f64) -> (usize, usize) {
    match (a > 0.0, b > 0.0) {
        (false, false) => (0, 0),
        (true, false) => (budget, 0),
        (false, true) => (0, budget),
        (true, true) if budget < 2 => (budget, 0),
        (true, true) => {
            let na = ((budget as f64 * a / (a + b)).round() as usize).clamp(1, budget - 1);
            (na, budget - na)
        }
    }
}

/// A particle population launched in one leg.
pub(crate) enum Population<'a> {
    Volume {
        source: &'a VolumeSource,
        stream: SampleStream,
        count: usize,
        /// Offset of the first particle's stream index.
        first_index: u64,
    },
    Boundary {
        emitter: &'a BoundaryEmitter,
        stream: SampleStream,
        count: usize,
    },
    Carried {
        particles: &'a [Particle],
        stream: SampleStream,
    },
}

impl Population<'_> {
    fn len(&self) -> usize {
        match self {
            Population::Volume { count, .. } | Population::Boundary { count, .. } => *count,
            Population::Carried { particles, .. } => particles.len(),
        }
    }

    fn launch(&self, problem: &ProblemSpec, i: usize, window: TimeWindow) -> (Particle, SampleStream, u64) {
        match self {
            Population::Volume {
                source,
                stream,
                count,
                first_index,
            } => {
                let index = first_index + i as u64;
                let (x, omega, t, w) = source.sample_birth(stream, index, *count, window);
                (Particle::new(x, omega, t, w), *stream, index)
            }
            Population::Boundary {
                emitter,
                stream,
                count,
            } => (
                emitter.sample_entry(&problem.mesh, stream, i as u64, *count, window),
                *stream,
                i as u64,
            ),
            Population::Carried { particles, stream } => {
                let mut p = particles[i];
                p.t = p.t.max(window.start);
                (p, *stream, i as u64)
            }
        }
    }

    fn weight(&self, window: TimeWindow) -> f64 {
        match self {
            Population::Volume { source, count, .. } => {
                if *count > 0 {
                    source.total() * window.span()
                } else {
                    0.0
                }
            }
            Population::Boundary { emitter, count, .. } => {
                if *count > 0 {
                    emitter.total() * window.span()
                } else {
                    0.0
                }
            }
            Population::Carried { particles, .. } => particles.iter().map(|p| p.w).sum(),
        }
    }
}

#[derive(Default)]
struct Partial {
    tally: TallyField,
    census: Census,
    scatters: u64,
}

impl Partial {
    fn merge(mut self, other: Partial) -> Partial {
        self.tally.add_assign(&other.tally);
        self.census.merge(other.census);
        self.scatters += other.scatters;
        self
    }
}

/// Runs every population through the scatter-limited tracker and returns
/// normalized tallies plus the weight ledger.
pub(crate) fn transport_populations(
    problem: &ProblemSpec,
    cap: ScatterCap,
    populations: &[Population<'_>],
    window: TimeWindow,
    reduction: Reduction,
    chunk_size: usize,
) -> Result<(TallyField, Census, u64)> {
    let cells = problem.mesh.cell_count();
    let total_count: usize = populations.iter().map(Population::len).sum();
    let total_weight: f64 = populations.iter().map(|p| p.weight(window)).sum();
    let w_min = if total_count > 0 {
        WEIGHT_CUTOFF * total_weight / total_count as f64
    } else {
        0.0
    };
    let chunk_size = chunk_size.max(1);

    let mut work: Vec<(usize, Range<usize>)> = Vec::new();
    for (k, pop) in populations.iter().enumerate() {
        let n = pop.len();
        let mut start = 0;
        while start < n {
            let end = (start + chunk_size).min(n);
            work.push((k, start..end));
            start = end;
        }
    }

    let run = |(k, range): &(usize, Range<usize>)| -> Result<Partial> {
        let pop = &populations[*k];
        let mut part = Partial {
            tally: TallyField::zeros(cells),
            ..Partial::default()
        };
        for i in range.clone() {
            let (mut p, stream, index) = pop.launch(problem, i, window);
            part.census.birth_weight += p.w;
            let out = advance_history(
                &mut p,
                cap,
                window.end,
                &stream,
                index,
                problem,
                &mut part.tally,
                &mut part.census,
                w_min,
            )?;
            part.scatters += out.scatters as u64;
        }
        Ok(part)
    };

    let empty = || Partial {
        tally: TallyField::zeros(cells),
        ..Partial::default()
    };
    let merged = match reduction {
        Reduction::Ordered => {
            let parts: Vec<Partial> = work.par_iter().map(run).collect::<Result<_>>()?;
            parts.into_iter().fold(empty(), Partial::merge)
        }
        Reduction::Unordered => work
            .par_iter()
            .map(run)
            .try_reduce(empty, |a, b| Ok(a.merge(b)))?,
    };

    let mut tally = merged.tally;
    tally.normalize(&problem.mesh, window.span());
    Ok((tally, merged.census, merged.scatters))
}

/// The step-1 MC leg: births from `Q`, entries from `G`, and carried-in
/// census particles, each transported with scatter cap `cap`.
///
/// Births use stream indices `0..n_source` of `stream`; boundary entries and
/// carried particles use derived streams.
pub fn run_mc_leg(
    problem: &ProblemSpec,
    cap: ScatterCap,
    n_p: usize,
    stream: &SampleStream,
    opts: &LegOptions<'_>,
) -> Result<LegOutput> {
    let window = opts.window;
    let volume = VolumeSource::from_problem(problem);
    let boundary = BoundaryEmitter::from_problem(problem);
    if n_p == 0 && (!volume.is_empty() || !boundary.is_empty()) {
        return Err(Error::param(
            "n_p",
            "at least one particle is required for a nonzero source",
        ));
    }
    let (n_source, n_boundary) = split_budget(n_p, volume.total(), boundary.total());

    let populations = [
        Population::Volume {
            source: &volume,
            stream: *stream,
            count: n_source,
            first_index: 0,
        },
        Population::Boundary {
            emitter: &boundary,
            stream: stream.derive(TAG_BOUNDARY),
            count: n_boundary,
        },
        Population::Carried {
            particles: opts.census_in,
            stream: stream.derive(TAG_CENSUS),
        },
    ];
    let (tally, census, scatters) = transport_populations(
        problem,
        cap,
        &populations,
        window,
        opts.reduction,
        opts.chunk_size,
    )?;
    Ok(LegOutput {
        tally,
        census,
        source_particles: n_source,
        boundary_particles: n_boundary,
        census_particles: opts.census_in.len(),
        scatters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BoundarySource, Extent, Material, Mesh, Mode, RegionSpec};

    fn vacuum_with_source() -> ProblemSpec {
        ProblemSpec::new(
            Mesh::uniform_slab(0.0, 4.0, 8).unwrap(),
            vec![
                RegionSpec::new(Extent::slab(0.0, 1.5), Material::VACUUM),
                RegionSpec::new(Extent::slab(1.5, 2.0), Material::new(0.0, 0.0, 2.0)),
                RegionSpec::new(Extent::slab(2.0, 4.0), Material::VACUUM),
            ],
        )
        .unwrap()
    }

    #[test]
    fn vacuum_leg_exits_everything() {
        let p = vacuum_with_source();
        let out = run_mc_leg(
            &p,
            ScatterCap::Unlimited,
            1000,
            &SampleStream::pseudorandom(1),
            &LegOptions::default(),
        )
        .unwrap();
        assert!((out.census.birth_weight - 1.0).abs() < 1e-12);
        assert!((out.census.exited_weight - out.census.birth_weight).abs() < 1e-12);
        assert!(out.census.balance_residual() < 1e-12);
    }

    #[test]
    fn zero_particles_with_source_is_an_error() {
        let p = vacuum_with_source();
        let r = run_mc_leg(
            &p,
            ScatterCap::Finite(0),
            0,
            &SampleStream::pseudorandom(1),
            &LegOptions::default(),
        );
        assert!(r.is_err());
    }

    #[test]
    fn split_budget_cases() {
        assert_eq!(split_budget(10, 1.0, 0.0), (10, 0));
        assert_eq!(split_budget(10, 0.0, 1.0), (0, 10));
        assert_eq!(split_budget(10, 3.0, 1.0), (8, 2));
        assert_eq!(split_budget(10, 1.0, 1e-9), (9, 1));
        assert_eq!(split_budget(0, 0.0, 0.0), (0, 0));
    }

    #[test]
    fn ordered_reduction_is_chunk_and_thread_independent() {
        let p = crate::benchmarks::reed_problem(80).unwrap();
        let s = SampleStream::pseudorandom(3);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                run_mc_leg(&p, ScatterCap::Finite(2), 5000, &s, &LegOptions {
                    chunk_size: 512,
                    ..LegOptions::default()
                })
                .unwrap()
            })
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.tally, b.tally);
        assert_eq!(a.census.exited_weight, b.census.exited_weight);
    }

    #[test]
    fn boundary_current_enters_vacuum_slab() {
        // Isotropic intensity G on the left face of a void: the whole partial
        // current πG leaves through the right face, and the scalar flux in the
        // void is 2πG from one incoming hemisphere.
        let g = 0.5;
        let p = ProblemSpec::new(
            Mesh::uniform_slab(0.0, 1.0, 4).unwrap(),
            vec![RegionSpec::new(Extent::slab(0.0, 1.0), Material::VACUUM)],
        )
        .unwrap()
        .with_boundary(BoundarySource {
            intensity: [g, 0.0, 0.0, 0.0],
        })
        .unwrap();
        let out = run_mc_leg(
            &p,
            ScatterCap::Finite(0),
            20_000,
            &SampleStream::halton(0),
            &LegOptions::default(),
        )
        .unwrap();
        assert_eq!(out.boundary_particles, 20_000);
        let pi = std::f64::consts::PI;
        assert!((out.census.birth_weight - pi * g).abs() < 1e-12);
        assert!((out.census.exited_weight - pi * g).abs() < 1e-12);
        // The scalar flux of a cosine-current is infinite-variance near μ = 0;
        // compare loosely.
        let mean: f64 = out.tally.post.iter().sum::<f64>() / 4.0;
        assert!((mean / (2.0 * pi * g) - 1.0).abs() < 0.1, "{mean}");
    }

    #[test]
    fn time_dependent_leg_balances_with_census() {
        let p = crate::benchmarks::reed_problem(80)
            .unwrap()
            .with_mode(Mode::TimeDependent { dt: 0.5 })
            .unwrap();
        let out = run_mc_leg(
            &p,
            ScatterCap::Finite(3),
            4000,
            &SampleStream::pseudorandom(8),
            &LegOptions {
                window: TimeWindow::step(0.0, 0.5),
                ..LegOptions::default()
            },
        )
        .unwrap();
        assert!(!out.census.particles.is_empty());
        assert!(out.census.particles.iter().all(|q| q.t == 0.5));
        assert!((out.census.birth_weight - 202.0 * 0.5).abs() < 1e-9);
        assert!(out.census.balance_residual() < 1e-10);
    }
}
