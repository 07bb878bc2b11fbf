//! Zero-scatter re-emission legs that rebuild the step-end state from the
//! step's flux estimates.

use crate::error::{Error, Result};
use crate::geometry::ProblemSpec;
use crate::sampling::{BoundaryEmitter, SampleStream, VolumeSource};

use super::leg::{
    split_budget, transport_populations, LegOptions, LegOutput, Population, TAG_BOUNDARY,
    TAG_CENSUS, TAG_LEGACY,
};
use super::ScatterCap;

/// Per-cell scalar-flux estimates produced by steps 1 and 2.
#[derive(Debug, Clone, Copy)]
pub struct RemapInputs<'a> {
    pub pre: &'a [f64],
    pub post: &'a [f64],
    pub sn: &'a [f64],
}

impl RemapInputs<'_> {
    fn check(&self, problem: &ProblemSpec) -> Result<()> {
        let cells = problem.mesh.cell_count();
        for (name, field) in [("pre", self.pre), ("post", self.post), ("sn", self.sn)] {
            if field.len() != cells {
                return Err(Error::MeshMismatch {
                    left: field.len(),
                    right: cells,
                });
            }
            if let Some((c, v)) = field
                .iter()
                .enumerate()
                .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
            {
                return Err(Error::Invariant(format!(
                    "remap source field `{name}` is {v} in cell {c}"
                )));
            }
        }
        Ok(())
    }
}

/// Isotropic re-emission density `σ_s (⟨Ψ_pre⟩ + ⟨Ψ_post⟩ + ⟨Ψ⟩^SN)` per cell.
pub fn remap_emission_density(problem: &ProblemSpec, inputs: &RemapInputs<'_>) -> Result<Vec<f64>> {
    inputs.check(problem)?;
    Ok(problem
        .cell_materials()
        .iter()
        .enumerate()
        .map(|(c, m)| m.sigma_s * (inputs.pre[c] + inputs.post[c] + inputs.sn[c]))
        .collect())
}

/// Relabel leg: solves the zero-scatter problem with removal `σ_t` and source
/// `Q + σ_s(pre + post + SN)`, plus the step's initial and boundary data.
///
/// The `n_p` source slots of step 1 are reset: the first ones re-emit from `Q`
/// using the same stream indices as their step-1 births, the rest re-emit from
/// the scattering source. Boundary entries and carried-in particles are
/// replayed from the same stream indices as in step 1. The returned tally's
/// `post` field is the relabelled scalar flux, and its census is the next
/// step's initial data.
pub fn run_remap(
    problem: &ProblemSpec,
    inputs: &RemapInputs<'_>,
    stream: &SampleStream,
    n_p: usize,
    opts: &LegOptions<'_>,
) -> Result<LegOutput> {
    let window = opts.window;
    let emission_density = remap_emission_density(problem, inputs)?;
    let q_source = VolumeSource::from_problem(problem);
    let emission = VolumeSource::from_cell_density(&problem.mesh, &emission_density);
    let boundary = BoundaryEmitter::from_problem(problem);

    // Same split as step 1, so boundary entries replay one-for-one.
    let (slots, n_boundary) = split_budget(n_p, q_source.total(), boundary.total());
    // Without a volumetric source there are no step-1 slots to reset.
    let slots = if q_source.is_empty() { n_p } else { slots };
    let (n_q, n_emit) = split_budget(slots, q_source.total(), emission.total());

    let populations = [
        Population::Volume {
            source: &q_source,
            stream: *stream,
            count: n_q,
            first_index: 0,
        },
        Population::Volume {
            source: &emission,
            stream: *stream,
            count: n_emit,
            first_index: n_q as u64,
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
    let (tally, mut census, scatters) = transport_populations(
        problem,
        ScatterCap::Finite(0),
        &populations,
        window,
        opts.reduction,
        opts.chunk_size,
    )?;
    for p in &mut census.particles {
        *p = p.relabeled();
    }
    Ok(LegOutput {
        tally,
        census,
        source_particles: n_q + n_emit,
        boundary_particles: n_boundary,
        census_particles: opts.census_in.len(),
        scatters,
    })
}

/// Legacy collided leg: `n_p` new zero-scatter particles from
/// `σ_s(post + SN)` with no initial or boundary data. The step result is
/// `pre + post + (returned post tally)`.
pub fn run_legacy_leg(
    problem: &ProblemSpec,
    inputs: &RemapInputs<'_>,
    stream: &SampleStream,
    n_p: usize,
    opts: &LegOptions<'_>,
) -> Result<LegOutput> {
    inputs.check(problem)?;
    let density: Vec<f64> = problem
        .cell_materials()
        .iter()
        .enumerate()
        .map(|(c, m)| m.sigma_s * (inputs.post[c] + inputs.sn[c]))
        .collect();
    let emission = VolumeSource::from_cell_density(&problem.mesh, &density);
    let count = if emission.is_empty() { 0 } else { n_p };
    let populations = [Population::Volume {
        source: &emission,
        stream: stream.derive(TAG_LEGACY),
        count,
        first_index: 0,
    }];
    let (tally, census, scatters) = transport_populations(
        problem,
        ScatterCap::Finite(0),
        &populations,
        opts.window,
        opts.reduction,
        opts.chunk_size,
    )?;
    Ok(LegOutput {
        tally,
        census,
        source_particles: count,
        boundary_particles: 0,
        census_particles: 0,
        scatters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::{run_mc_leg, ScatterCap};

    #[test]
    fn empty_sources_give_empty_census() {
        let p = crate::geometry::ProblemSpec::new(
            crate::geometry::Mesh::uniform_slab(0.0, 1.0, 4).unwrap(),
            vec![crate::geometry::RegionSpec::new(
                crate::geometry::Extent::slab(0.0, 1.0),
                crate::geometry::Material::new(1.0, 1.0, 0.0),
            )],
        )
        .unwrap();
        let z = vec![0.0; 4];
        let out = run_remap(
            &p,
            &RemapInputs {
                pre: &z,
                post: &z,
                sn: &z,
            },
            &SampleStream::pseudorandom(0),
            100,
            &LegOptions::default(),
        )
        .unwrap();
        assert!(out.census.particles.is_empty());
        assert_eq!(out.particle_count(), 0);
        assert_eq!(out.census.birth_weight, 0.0);
    }

    #[test]
    fn negative_field_is_rejected() {
        let p = crate::benchmarks::reed_problem(16).unwrap();
        let mut f = vec![0.0; 16];
        f[3] = -1.0;
        let z = vec![0.0; 16];
        let r = run_remap(
            &p,
            &RemapInputs {
                pre: &z,
                post: &f,
                sn: &z,
            },
            &SampleStream::pseudorandom(0),
            10,
            &LegOptions::default(),
        );
        assert!(matches!(r, Err(Error::Invariant(_))));
    }

    #[test]
    fn emitted_weight_is_q_plus_scattering_source() {
        let p = crate::benchmarks::reed_problem(80).unwrap();
        let s = SampleStream::pseudorandom(4);
        let step1 = run_mc_leg(&p, ScatterCap::Finite(2), 4000, &s, &LegOptions::default()).unwrap();
        let sn = vec![0.3; 80];
        let inputs = RemapInputs {
            pre: &step1.tally.pre,
            post: &step1.tally.post,
            sn: &sn,
        };
        let out = run_remap(&p, &inputs, &s, 4000, &LegOptions::default()).unwrap();
        let expected: f64 = p.total_source()
            + remap_emission_density(&p, &inputs)
                .unwrap()
                .iter()
                .enumerate()
                .map(|(c, e)| e * p.mesh.volume(c))
                .sum::<f64>();
        assert!((out.census.birth_weight - expected).abs() < 1e-10 * expected);
        assert_eq!(out.source_particles, 4000);
        assert!(out.tally.pre.iter().all(|&x| x == 0.0));
        assert!(out.census.balance_residual() < 1e-10);
    }

    #[test]
    fn without_scattering_remap_replays_step_one() {
        // σ_s = 0: re-emission vanishes and every slot re-emits its step-1 birth.
        let p = crate::geometry::ProblemSpec::new(
            crate::geometry::Mesh::uniform_slab(0.0, 2.0, 8).unwrap(),
            vec![crate::geometry::RegionSpec::new(
                crate::geometry::Extent::slab(0.0, 2.0),
                crate::geometry::Material::new(0.5, 0.0, 1.0),
            )],
        )
        .unwrap();
        let s = SampleStream::halton(0);
        let step1 = run_mc_leg(&p, ScatterCap::Finite(0), 1000, &s, &LegOptions::default()).unwrap();
        let z = vec![0.0; 8];
        let out = run_remap(
            &p,
            &RemapInputs {
                pre: &step1.tally.pre,
                post: &step1.tally.post,
                sn: &z,
            },
            &s,
            1000,
            &LegOptions::default(),
        )
        .unwrap();
        assert_eq!(out.tally.post, step1.tally.post);
        assert_eq!(out.census.exited_weight, step1.census.exited_weight);
    }
}
