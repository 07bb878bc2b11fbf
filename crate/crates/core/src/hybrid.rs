//! The four-stage hybrid step: scatter-limited MC, collided `S_N`, relabel
//! and census.

use std::f64::consts::PI;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::analysis::project_to;
use crate::error::{Error, Result};
use crate::geometry::{Mode, ProblemSpec};
use crate::mc::{
    run_legacy_leg, run_mc_leg, run_remap, LegOptions, LegOutput, Particle, Reduction,
    RemapInputs, ScatterCap,
};
use crate::sampling::{default_dimension_budget, SampleStream, SamplerKind, TimeWindow};
use crate::sn::{
    source_iteration_with, sweep, ConvergenceScale, QuadratureSet, SnBalance, SnSettings,
    SolveOptions,
};

/// How the step-end state is rebuilt from the step's flux estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RemapVariant {
    /// Zero-scatter re-emission from `Q + σ_s(pre + post + SN)` with the step's
    /// initial and boundary data.
    #[default]
    Remap,
    /// Extra particles from `σ_s(post + SN)` added to the step-1 census.
    Legacy,
    None,
}

/// What the `S_N` stopping rule measures changes against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnScale {
    /// The collided flux alone.
    Collided,
    /// The full step flux `pre + post + SN`.
    #[default]
    Total,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridConfig {
    pub cap: ScatterCap,
    pub n_p: usize,
    pub sampler: SamplerKind,
    pub seed: u64,
    pub start_index: u64,
    pub sn: SnSettings,
    pub sn_scale: SnScale,
    /// The collided solve runs on a mesh refined this many times per axis;
    /// its source stays piecewise constant on the run mesh.
    pub sn_refine: usize,
    pub remap: RemapVariant,
    /// Number of steps in time-dependent mode.
    pub steps: usize,
    /// Also run the relabel leg after a steady-state solve.
    pub steady_relabel: bool,
    #[serde(skip)]
    pub reduction: Reduction,
}

impl HybridConfig {
    pub fn new(cap: ScatterCap, n_p: usize, sampler: SamplerKind) -> Self {
        HybridConfig {
            cap,
            n_p,
            sampler,
            seed: 0,
            start_index: 0,
            sn: SnSettings::default(),
            sn_scale: SnScale::default(),
            sn_refine: 1,
            remap: RemapVariant::default(),
            steps: 1,
            steady_relabel: false,
            reduction: Reduction::Ordered,
        }
    }

    pub fn with_seed(mut self, seed: u64, start_index: u64) -> Self {
        self.seed = seed;
        self.start_index = start_index;
        self
    }

    /// The remap variant actually used: with no scatter cap there is nothing to
    /// relabel.
    pub fn effective_remap(&self) -> RemapVariant {
        if self.cap.is_unlimited() {
            RemapVariant::None
        } else {
            self.remap
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_p == 0 {
            return Err(Error::param("n_p", "must be at least 1"));
        }
        if self.sn_refine == 0 {
            return Err(Error::param("sn_refine", "must be at least 1"));
        }
        self.sn.validate()
    }

    /// Sample stream for step `k`.
    pub fn stream(&self, step: usize) -> SampleStream {
        let base = SampleStream::for_sampler(self.sampler, self.seed, self.start_index)
            .with_dimension_budget(default_dimension_budget(self.cap.finite()));
        if step == 0 {
            base
        } else {
            base.derive(0x100 + step as u64)
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub mc_s: f64,
    pub sn_s: f64,
    pub remap_s: f64,
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.mc_s + self.sn_s + self.remap_s
    }
}

/// Fields and diagnostics of one step (or one steady-state solve).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutput {
    /// `pre + post + SN` scalar flux.
    pub flux: Vec<f64>,
    pub pre: Vec<f64>,
    pub post: Vec<f64>,
    pub sn: Vec<f64>,
    /// Scalar flux of the relabel leg, when one ran. For the legacy variant
    /// this is `pre + post` plus the extra leg.
    pub relabel_flux: Option<Vec<f64>>,
    pub sn_iterations: usize,
    pub sn_balance: SnBalance,
    /// Worst weight-balance residual over the MC legs of the step.
    pub balance_residual: f64,
    /// Computer particles launched over all MC legs.
    pub particles: usize,
    /// Computer particles behind the step-end state: the relabel leg alone for
    /// `Remap`, the step-1 particles plus the extra leg for `Legacy`, the
    /// step-1 particles when nothing is relabeled.
    pub population: usize,
    pub scatters: u64,
    pub timings: StageTimings,
}

#[derive(Debug, Clone, Default)]
pub struct StepState {
    pub step: usize,
    pub time: f64,
    /// Particles representing `Ψ[t_n]`.
    pub census: Vec<Particle>,
    pub last: Option<StepOutput>,
}

impl StepState {
    pub fn initial(problem: &ProblemSpec) -> Self {
        StepState {
            census: problem.initial.clone(),
            ..StepState::default()
        }
    }
}

/// Collided flux on the run mesh and the solve's diagnostics.
struct Collided {
    phi: Vec<f64>,
    iterations: usize,
    balance: SnBalance,
}

fn collided_solve(
    problem: &ProblemSpec,
    config: &HybridConfig,
    step1: &LegOutput,
    extra_removal: f64,
) -> Result<Collided> {
    let fixed: Vec<f64> = problem
        .cell_materials()
        .iter()
        .zip(&step1.tally.post)
        .map(|(m, post)| m.sigma_s * post / (4.0 * PI))
        .collect();
    let background = step1.tally.total();
    let refined;
    let (grid, fixed, background) = if config.sn_refine > 1 {
        refined = problem.refined(config.sn_refine)?;
        let parent: Vec<usize> = (0..refined.mesh.cell_count())
            .map(|c| problem.mesh.locate(refined.mesh.center(c)))
            .collect::<Result<_>>()?;
        let lift = |f: &[f64]| parent.iter().map(|&k| f[k]).collect::<Vec<f64>>();
        (&refined, lift(&fixed), lift(&background))
    } else {
        (problem, fixed, background)
    };
    let quadrature = QuadratureSet::for_mesh(&grid.mesh, config.sn.order)?;
    let scale = match config.sn_scale {
        SnScale::Collided => ConvergenceScale::Iterate,
        SnScale::Total => ConvergenceScale::WithBackground(background),
    };
    let sol = source_iteration_with(
        &fixed,
        grid,
        &quadrature,
        config.sn.tol,
        config.sn.max_iter,
        &SolveOptions {
            scale,
            extra_removal,
            inflow: false,
        },
    )?;
    let phi = if config.sn_refine > 1 {
        project_to(&grid.mesh, &sol.phi, &problem.mesh)?
    } else {
        sol.phi
    };
    Ok(Collided {
        phi,
        iterations: sol.iterations,
        balance: sol.balance,
    })
}

struct Relabel {
    flux: Vec<f64>,
    census: Vec<Particle>,
    residual: f64,
    particles: usize,
    population: usize,
    scatters: u64,
}

fn relabel(
    problem: &ProblemSpec,
    config: &HybridConfig,
    variant: RemapVariant,
    stream: &SampleStream,
    step1: &LegOutput,
    sn: &[f64],
    opts: &LegOptions<'_>,
) -> Result<Option<Relabel>> {
    let inputs = RemapInputs {
        pre: &step1.tally.pre,
        post: &step1.tally.post,
        sn,
    };
    Ok(match variant {
        RemapVariant::None => None,
        RemapVariant::Remap => {
            let out = run_remap(problem, &inputs, stream, config.n_p, opts)?;
            Some(Relabel {
                flux: out.tally.post.clone(),
                residual: out.census.balance_residual(),
                particles: out.particle_count(),
                population: out.particle_count(),
                scatters: out.scatters,
                census: out.census.particles,
            })
        }
        RemapVariant::Legacy => {
            let out = run_legacy_leg(problem, &inputs, stream, config.n_p, opts)?;
            let flux = step1
                .tally
                .total()
                .iter()
                .zip(&out.tally.post)
                .map(|(a, b)| a + b)
                .collect();
            let census = step1
                .census
                .particles
                .iter()
                .map(|p| p.relabeled())
                .chain(out.census.particles.iter().copied())
                .collect();
            Some(Relabel {
                flux,
                census,
                residual: out.census.balance_residual(),
                particles: out.particle_count(),
                population: step1.particle_count() + out.particle_count(),
                scatters: out.scatters,
            })
        }
    })
}

fn run_step(
    problem: &ProblemSpec,
    config: &HybridConfig,
    window: TimeWindow,
    census_in: &[Particle],
    stream: &SampleStream,
    variant: RemapVariant,
) -> Result<(StepOutput, Option<Vec<Particle>>)> {
    config.validate()?;
    let opts = LegOptions {
        window,
        census_in,
        reduction: config.reduction,
        ..LegOptions::default()
    };

    let t0 = Instant::now();
    let step1 = run_mc_leg(problem, config.cap, config.n_p, stream, &opts)?;
    let t1 = Instant::now();
    let extra_removal = if window.is_steady() {
        0.0
    } else {
        1.0 / window.span()
    };
    let sn = collided_solve(problem, config, &step1, extra_removal)?;
    let t2 = Instant::now();
    let relabel_out = relabel(problem, config, variant, stream, &step1, &sn.phi, &opts)?;
    let t3 = Instant::now();

    let flux: Vec<f64> = step1
        .tally
        .total()
        .iter()
        .zip(&sn.phi)
        .map(|(a, b)| a + b)
        .collect();
    if let Some((c, v)) = flux.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::Invariant(format!("step flux is {v} in cell {c}")));
    }
    let mut residual = step1.census.balance_residual();
    let mut particles = step1.particle_count();
    let mut population = particles;
    let mut scatters = step1.scatters;
    let (relabel_flux, census) = match relabel_out {
        Some(r) => {
            residual = residual.max(r.residual);
            particles += r.particles;
            population = r.population;
            scatters += r.scatters;
            (Some(r.flux), Some(r.census))
        }
        None => (None, None),
    };
    Ok((
        StepOutput {
            flux,
            pre: step1.tally.pre,
            post: step1.tally.post,
            sn_iterations: sn.iterations,
            sn_balance: sn.balance,
            sn: sn.phi,
            relabel_flux,
            balance_residual: residual,
            particles,
            population,
            scatters,
            timings: StageTimings {
                mc_s: (t1 - t0).as_secs_f64(),
                sn_s: (t2 - t1).as_secs_f64(),
                remap_s: (t3 - t2).as_secs_f64(),
            },
        },
        census.or(Some(step1.census.particles)),
    ))
}

/// Advances `state` by one time step of length `Δt` from the problem's mode.
///
/// With no relabel leg (unlimited cap) the step-1 census carries over
/// directly.
pub fn hybrid_step(state: &StepState, config: &HybridConfig, problem: &ProblemSpec) -> Result<StepState> {
    let dt = match problem.mode {
        Mode::TimeDependent { dt } => dt,
        Mode::Steady => {
            return Err(Error::param(
                "mode",
                "hybrid_step needs a time-dependent problem; use steady_state_solve",
            ))
        }
    };
    let window = TimeWindow::step(state.time, dt);
    let stream = config.stream(state.step);
    let (out, census) = run_step(
        problem,
        config,
        window,
        &state.census,
        &stream,
        config.effective_remap(),
    )?;
    Ok(StepState {
        step: state.step + 1,
        time: window.end,
        census: census.unwrap_or_default(),
        last: Some(out),
    })
}

/// Runs `config.steps` time steps from the problem's initial data.
pub fn run_transient(config: &HybridConfig, problem: &ProblemSpec) -> Result<Vec<StepState>> {
    let mut state = StepState::initial(problem);
    let mut out = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        state = hybrid_step(&state, config, problem)?;
        out.push(state.clone());
    }
    Ok(out)
}

/// Single infinite step: one MC leg, one collided solve, flux
/// `pre + post + SN`. The relabel leg runs only when `steady_relabel` is set.
pub fn steady_state_solve(config: &HybridConfig, problem: &ProblemSpec) -> Result<StepOutput> {
    if !problem.initial.is_empty() {
        return Err(Error::param(
            "initial",
            "steady-state problems take no initial census",
        ));
    }
    let variant = if config.steady_relabel {
        config.effective_remap()
    } else {
        RemapVariant::None
    };
    let stream = config.stream(0);
    run_step(problem, config, TimeWindow::STEADY, &[], &stream, variant).map(|(o, _)| o)
}

/// Deterministic `n`-collision fluxes `⟨Ψ_0⟩ … ⟨Ψ_{n_max}⟩` by repeated
/// first-flight sweeps with removal `σ_t`.
pub fn n_collision_reference(
    problem: &ProblemSpec,
    n_max: usize,
    quadrature: &QuadratureSet,
) -> Vec<Vec<f64>> {
    let materials = problem.cell_materials();
    let cells = problem.mesh.cell_count();
    let mut source: Vec<f64> = materials.iter().map(|m| m.q / (4.0 * PI)).collect();
    let mut out = Vec::with_capacity(n_max + 1);
    for _ in 0..=n_max {
        let mut phi = vec![0.0; cells];
        for (omega, w) in quadrature.directions.iter().zip(&quadrature.weights) {
            for (p, psi) in phi.iter_mut().zip(sweep(problem, omega, &source)) {
                *p += w * psi;
            }
        }
        source = materials
            .iter()
            .zip(&phi)
            .map(|(m, p)| m.sigma_s * p / (4.0 * PI))
            .collect();
        out.push(phi);
    }
    out
}
