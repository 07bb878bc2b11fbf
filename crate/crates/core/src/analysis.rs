//! Error norms, rate fits, scatter-time tails, reference solutions and
//! parameter sweeps.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Extent, Material, Mesh, ProblemSpec, RegionSpec};
use crate::hybrid::{steady_state_solve, HybridConfig};
use crate::mc::{run_mc_leg, LegOptions, Particle, ScatterCap};
use crate::sampling::{sample_isotropic_direction, SampleStream, SamplerKind, TimeWindow};
use crate::sn::{source_iteration_with, QuadratureSet, SolveOptions};

/// `sqrt(Σ V_c (field_c − reference_c)²)`.
pub fn l2_error(field: &[f64], reference: &[f64], mesh: &Mesh) -> Result<f64> {
    let cells = mesh.cell_count();
    for len in [field.len(), reference.len()] {
        if len != cells {
            return Err(Error::MeshMismatch {
                left: len,
                right: cells,
            });
        }
    }
    Ok((0..cells)
        .map(|c| mesh.volume(c) * (field[c] - reference[c]).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// One row of a convergence sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub problem: String,
    pub sampler: SamplerKind,
    #[serde(rename = "N_s")]
    pub n_s: ScatterCap,
    #[serde(rename = "N_p")]
    pub n_p: usize,
    pub replica: usize,
    pub l2_error: f64,
    pub runtime_s: f64,
    pub sn_iterations: usize,
}

/// Column order of the sweep table.
pub const SWEEP_HEADER: [&str; 8] = [
    "problem",
    "sampler",
    "N_s",
    "N_p",
    "replica",
    "l2_error",
    "runtime_s",
    "sn_iterations",
];

/// Marker row written when a sweep aborts.
pub const FAILURE_MARKER: &str = "#FAILED";

/// Least-squares fit of `error ≈ c · N_p^α`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub alpha: f64,
    pub c: f64,
}

/// Ordinary least squares on `(ln N_p, ln error)` over all points jointly.
pub fn fit_convergence_rate(points: &[ConvergencePoint]) -> Result<RateFit> {
    let pairs: Vec<(usize, f64)> = points.iter().map(|p| (p.n_p, p.l2_error)).collect();
    fit_power_law(&pairs)
}

/// As [`fit_convergence_rate`] on bare `(N_p, error)` pairs.
pub fn fit_power_law(pairs: &[(usize, f64)]) -> Result<RateFit> {
    if pairs.len() < 3 {
        return Err(Error::param("points", "at least three points are needed"));
    }
    if let Some((n, e)) = pairs.iter().find(|(n, e)| *n == 0 || !(e.is_finite() && *e > 0.0)) {
        return Err(Error::param(
            "points",
            format!("cannot take the log of N_p = {n}, error = {e}"),
        ));
    }
    let xs: Vec<f64> = pairs.iter().map(|(n, _)| (*n as f64).ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|(_, e)| e.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::param("points", "need at least two distinct N_p"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let alpha = sxy / sxx;
    Ok(RateFit {
        alpha,
        c: (my - alpha * mx).exp(),
    })
}

/// Fitted rate and mean diagnostics for one `(sampler, N_s)` group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub sampler: SamplerKind,
    #[serde(rename = "N_s")]
    pub n_s: ScatterCap,
    pub alpha: Option<f64>,
    pub c: Option<f64>,
    pub mean_sn_iterations: f64,
    pub mean_runtime_s: f64,
    pub points: usize,
}

/// Groups points by `(sampler, N_s)` and fits each group. Groups too small to
/// fit report `None`.
pub fn summarize(points: &[ConvergencePoint]) -> Vec<RateSummary> {
    let mut keys: Vec<(SamplerKind, ScatterCap)> = points.iter().map(|p| (p.sampler, p.n_s)).collect();
    keys.sort_by_key(|(s, n)| (s.as_str(), *n));
    keys.dedup();
    keys.into_iter()
        .map(|(sampler, n_s)| {
            let group: Vec<ConvergencePoint> = points
                .iter()
                .filter(|p| p.sampler == sampler && p.n_s == n_s)
                .cloned()
                .collect();
            let fit = fit_convergence_rate(&group).ok();
            let k = group.len() as f64;
            RateSummary {
                sampler,
                n_s,
                alpha: fit.map(|f| f.alpha),
                c: fit.map(|f| f.c),
                mean_sn_iterations: group.iter().map(|p| p.sn_iterations as f64).sum::<f64>() / k,
                mean_runtime_s: group.iter().map(|p| p.runtime_s).sum::<f64>() / k,
                points: group.len(),
            }
        })
        .collect()
}

/// `P(T_{N_s+1} > Δt)` for scatter times of a homogeneous medium:
/// `e^{−σΔt} Σ_{j≤N_s} (σΔt)^j / j!`.
pub fn erlang_tail(n_s: u32, sigma_s: f64, dt: f64) -> f64 {
    let x = sigma_s * dt;
    if x == 0.0 {
        return 1.0;
    }
    let lx = x.ln();
    let mut log_fact = 0.0;
    let mut sum = 0.0;
    for j in 0..=n_s {
        if j > 0 {
            log_fact += (j as f64).ln();
        }
        sum += (-x + j as f64 * lx - log_fact).exp();
    }
    sum.min(1.0)
}

/// Two-sided bounds `e^{−σ_max Δt} ≤ P(T_{N_s+1} > Δt) ≤ e^{−μΔt}(1 − μ/σ_min)^{−(N_s+1)}`
/// for a scatter rate varying within `[σ_min, σ_max]`.
pub fn erlang_sandwich_bounds(
    n_s: u32,
    sigma_min: f64,
    sigma_max: f64,
    mu: f64,
    dt: f64,
) -> Result<(f64, f64)> {
    if !(sigma_min > 0.0 && sigma_min <= sigma_max) {
        return Err(Error::param(
            "sigma",
            format!("need 0 < sigma_min <= sigma_max, got {sigma_min}, {sigma_max}"),
        ));
    }
    if !(mu > 0.0 && mu < sigma_min) {
        return Err(Error::param(
            "mu",
            format!("{mu} must lie in (0, {sigma_min})"),
        ));
    }
    let lower = (-sigma_max * dt).exp();
    let upper = (-mu * dt).exp() * (1.0 - mu / sigma_min).powf(-(n_s as f64 + 1.0));
    Ok((lower, upper))
}

/// Fraction of `histories` particles, started isotropically at the centre of
/// a pure scatterer of rate `sigma_s`, that scatter at most `n_s` times before
/// `dt`. Runs the scatter-limited tracker with cap `n_s + 1`.
pub fn empirical_scatter_survival(
    n_s: u32,
    sigma_s: f64,
    dt: f64,
    histories: usize,
    stream: &SampleStream,
) -> Result<f64> {
    // Wide enough that nothing reaches the boundary before dt at unit speed.
    let half = dt + 1.0;
    let problem = ProblemSpec::new(
        Mesh::uniform_slab(-half, half, 2)?,
        vec![RegionSpec::new(
            Extent::slab(-half, half),
            Material::new(0.0, sigma_s, 0.0),
        )],
    )?;
    let launch = stream.derive(0x51);
    let particles: Vec<Particle> = (0..histories as u64)
        .map(|i| {
            let omega = sample_isotropic_direction(launch.draw(i, 0), launch.draw(i, 1));
            Particle::new([0.0, 0.5], omega, 0.0, 1.0)
        })
        .collect();
    let out = run_mc_leg(
        &problem,
        ScatterCap::Finite(n_s + 1),
        0,
        stream,
        &LegOptions {
            window: TimeWindow::step(0.0, dt),
            census_in: &particles,
            ..LegOptions::default()
        },
    )?;
    if out.census.particles.len() != histories {
        return Err(Error::Invariant(format!(
            "{} of {histories} histories reached census",
            out.census.particles.len()
        )));
    }
    let survived = out.census.particles.iter().filter(|p| p.n <= n_s).count();
    Ok(survived as f64 / histories as f64)
}

/// Resolution of a deterministic reference solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSettings {
    pub refine: usize,
    pub order: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl ReferenceSettings {
    /// `S_64` on a 64× mesh in a slab; `S_8`-type product set on a 2× mesh in
    /// XY. The step scheme is first order in space, so the slab reference needs
    /// the fine mesh to sit well below the sampling error of a `2^17` sweep.
    pub fn for_mesh(mesh: &Mesh) -> Self {
        match mesh.dimension() {
            1 => ReferenceSettings {
                refine: 64,
                order: 64,
                tol: 1e-12,
                max_iter: 100_000,
            },
            _ => ReferenceSettings {
                refine: 2,
                order: 8,
                tol: 1e-10,
                max_iter: 100_000,
            },
        }
    }
}

/// Full-problem `S_N` solution (source `Q`, boundary `G`) on a refined mesh,
/// averaged back onto the problem's own cells.
pub fn reference_solution(problem: &ProblemSpec, settings: &ReferenceSettings) -> Result<Vec<f64>> {
    let fine = problem.refined(settings.refine.max(1))?;
    let quadrature = QuadratureSet::for_mesh(&fine.mesh, settings.order)?;
    let fixed: Vec<f64> = fine.cell_materials().iter().map(|m| m.q / (4.0 * PI)).collect();
    let sol = source_iteration_with(
        &fixed,
        &fine,
        &quadrature,
        settings.tol,
        settings.max_iter,
        &SolveOptions {
            inflow: true,
            ..SolveOptions::default()
        },
    )?;
    project_to(&fine.mesh, &sol.phi, &problem.mesh)
}

/// Volume-weighted average of a fine field onto a coarser mesh whose cells are
/// unions of fine cells.
pub fn project_to(fine: &Mesh, field: &[f64], coarse: &Mesh) -> Result<Vec<f64>> {
    if field.len() != fine.cell_count() {
        return Err(Error::MeshMismatch {
            left: field.len(),
            right: fine.cell_count(),
        });
    }
    let mut sum = vec![0.0; coarse.cell_count()];
    let mut vol = vec![0.0; coarse.cell_count()];
    for (c, v) in field.iter().enumerate() {
        let k = coarse.locate(fine.center(c))?;
        let w = fine.volume(c);
        sum[k] += w * v;
        vol[k] += w;
    }
    Ok(sum.iter().zip(&vol).map(|(s, v)| if *v > 0.0 { s / v } else { 0.0 }).collect())
}

/// Axes of a convergence sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAxes {
    #[serde(rename = "N_s")]
    pub n_s: Vec<ScatterCap>,
    #[serde(rename = "N_p")]
    pub n_p: Vec<usize>,
    pub samplers: Vec<SamplerKind>,
    pub replicas: usize,
}

impl SweepAxes {
    pub fn len(&self) -> usize {
        self.n_s.len() * self.n_p.len() * self.samplers.len() * self.replicas
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Seed and Halton offset of replica `r`, disjoint from every other replica.
pub fn replica_seed(base: &HybridConfig, replica: usize) -> (u64, u64) {
    (
        base.seed.wrapping_add(replica as u64),
        base.start_index.wrapping_add((replica as u64) << 32),
    )
}

/// Runs `steady_state_solve` over the cross product of the axes, in
/// `(sampler, N_s, N_p, replica)` order. Each finished point is handed to
/// `on_point` before the next one starts.
pub fn run_sweep(
    name: &str,
    problem: &ProblemSpec,
    reference: &[f64],
    axes: &SweepAxes,
    base: &HybridConfig,
    mut on_point: impl FnMut(&ConvergencePoint) -> Result<()>,
) -> Result<Vec<ConvergencePoint>> {
    if reference.len() != problem.mesh.cell_count() {
        return Err(Error::MeshMismatch {
            left: reference.len(),
            right: problem.mesh.cell_count(),
        });
    }
    let mut out = Vec::with_capacity(axes.len());
    for &sampler in &axes.samplers {
        for &n_s in &axes.n_s {
            for &n_p in &axes.n_p {
                for replica in 0..axes.replicas {
                    let (seed, start) = replica_seed(base, replica);
                    let mut cfg = base.clone().with_seed(seed, start);
                    cfg.cap = n_s;
                    cfg.n_p = n_p;
                    cfg.sampler = sampler;
                    let t0 = Instant::now();
                    let solved = steady_state_solve(&cfg, problem)?;
                    let runtime_s = t0.elapsed().as_secs_f64();
                    let point = ConvergencePoint {
                        problem: name.to_string(),
                        sampler,
                        n_s,
                        n_p,
                        replica,
                        l2_error: l2_error(&solved.flux, reference, &problem.mesh)?,
                        runtime_s,
                        sn_iterations: solved.sn_iterations,
                    };
                    on_point(&point)?;
                    out.push(point);
                }
            }
        }
    }
    Ok(out)
}

/// Streams sweep rows as CSV, flushing after each row.
pub struct SweepWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> SweepWriter<W> {
    pub fn new(w: W) -> Result<Self> {
        let mut inner = csv::WriterBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_writer(w);
        inner.write_record(SWEEP_HEADER).map_err(csv_error)?;
        inner.flush().map_err(io_error)?;
        Ok(SweepWriter { inner })
    }

    pub fn write(&mut self, point: &ConvergencePoint) -> Result<()> {
        self.inner.serialize(point).map_err(csv_error)?;
        self.inner.flush().map_err(io_error)
    }

    /// Appends the failure marker row with a message.
    pub fn fail(&mut self, message: &str) -> Result<()> {
        self.inner
            .write_record([FAILURE_MARKER, message])
            .map_err(csv_error)?;
        self.inner.flush().map_err(io_error)
    }

    pub fn into_inner(self) -> Result<W> {
        self.inner
            .into_inner()
            .map_err(|e| Error::Invariant(format!("csv flush failed: {e}")))
    }
}

/// Reads a sweep table. Returns the rows and whether a failure marker was
/// present.
pub fn read_sweep_csv(r: impl Read) -> Result<(Vec<ConvergencePoint>, bool)> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(r);
    let headers = reader.headers().map_err(csv_error)?.clone();
    if headers.iter().ne(SWEEP_HEADER) {
        return Err(Error::Invariant(format!("unexpected sweep header {headers:?}")));
    }
    let mut rows = Vec::new();
    let mut failed = false;
    for rec in reader.records() {
        let rec = rec.map_err(csv_error)?;
        if rec.get(0) == Some(FAILURE_MARKER) {
            failed = true;
            continue;
        }
        rows.push(rec.deserialize(Some(&headers)).map_err(csv_error)?);
    }
    Ok((rows, failed))
}

fn csv_error(e: csv::Error) -> Error {
    Error::Invariant(format!("csv: {e}"))
}

fn io_error(e: std::io::Error) -> Error {
    Error::Invariant(format!("io: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn point(n_p: usize, e: f64) -> ConvergencePoint {
        ConvergencePoint {
            problem: "t".into(),
            sampler: SamplerKind::Mc,
            n_s: ScatterCap::Finite(0),
            n_p,
            replica: 0,
            l2_error: e,
            runtime_s: 0.0,
            sn_iterations: 0,
        }
    }

    #[test]
    fn l2_examples() {
        let m = Mesh::slab(vec![0.0, 1.0, 3.0]).unwrap();
        assert_eq!(l2_error(&[1.0, 2.0], &[1.0, 2.0], &m).unwrap(), 0.0);
        assert!((l2_error(&[1.0, 1.0], &[0.0, 0.0], &m).unwrap() - 3f64.sqrt()).abs() < 1e-15);
        let unit = Mesh::uniform_slab(0.0, 1.0, 4).unwrap();
        let d = l2_error(&[0.25; 4], &[0.0; 4], &unit).unwrap();
        assert!((d - 0.25).abs() < 1e-15);
        assert!(l2_error(&[0.0; 3], &[0.0; 2], &m).is_err());
    }

    #[test]
    fn exact_power_laws() {
        for alpha in [-0.5, -1.0, -0.69] {
            let pts: Vec<_> = (10..18).map(|k| point(1 << k, 3.0 * ((1 << k) as f64).powf(alpha))).collect();
            let fit = fit_convergence_rate(&pts).unwrap();
            assert!((fit.alpha - alpha).abs() < 1e-12);
            assert!((fit.c - 3.0).abs() < 1e-9);
        }
        assert!(fit_convergence_rate(&[point(1, 1.0), point(2, 0.5)]).is_err());
        assert!(fit_convergence_rate(&[point(1, 1.0), point(2, 0.0), point(4, 0.1)]).is_err());
        assert!(fit_convergence_rate(&[point(4, 1.0), point(4, 0.5), point(4, 0.1)]).is_err());
    }

    #[test]
    fn erlang_examples() {
        assert!((erlang_tail(0, 2.0, 0.7) - (-1.4f64).exp()).abs() < 1e-15);
        assert!((erlang_tail(1, 1.0, 1.0) - 0.735_758_882_342_884_6).abs() < 1e-15);
        assert_eq!(erlang_tail(5, 3.0, 0.0), 1.0);
        assert!(erlang_tail(3, 1e4, 1.0) >= 0.0);
    }

    #[test]
    fn sandwich_rejects_bad_mu() {
        assert!(erlang_sandwich_bounds(1, 1.0, 2.0, 1.0, 1.0).is_err());
        assert!(erlang_sandwich_bounds(1, 1.0, 2.0, 0.0, 1.0).is_err());
        assert!(erlang_sandwich_bounds(1, 2.0, 1.0, 0.5, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn erlang_monotone_and_bounded(n in 0u32..20, sigma in 0.01f64..10.0, dt in 0.0f64..5.0, dt2 in 0.0f64..5.0, frac in 0.01f64..0.99) {
            let p = erlang_tail(n, sigma, dt);
            prop_assert!(erlang_tail(n + 1, sigma, dt) >= p - 1e-15);
            let (a, b) = if dt <= dt2 { (dt, dt2) } else { (dt2, dt) };
            prop_assert!(erlang_tail(n, sigma, b) <= erlang_tail(n, sigma, a) + 1e-15);
            let (lo, hi) = erlang_sandwich_bounds(n, sigma, sigma, frac * sigma, dt).unwrap();
            prop_assert!(lo <= p * (1.0 + 1e-12) + 1e-300);
            prop_assert!(p <= hi * (1.0 + 1e-12));
        }

        #[test]
        fn l2_triangle_inequality(v in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0, -10.0f64..10.0), 6)) {
            let m = Mesh::slab(vec![0.0, 0.5, 1.5, 1.7, 3.0, 3.1, 4.0]).unwrap();
            let a: Vec<f64> = v.iter().map(|t| t.0).collect();
            let b: Vec<f64> = v.iter().map(|t| t.1).collect();
            let c: Vec<f64> = v.iter().map(|t| t.2).collect();
            let ac = l2_error(&a, &c, &m).unwrap();
            let ab = l2_error(&a, &b, &m).unwrap();
            let bc = l2_error(&b, &c, &m).unwrap();
            prop_assert!(ac <= ab + bc + 1e-10);
        }
    }

    #[test]
    fn projection_averages_by_volume() {
        let fine = Mesh::slab(vec![0.0, 0.5, 1.0, 2.0]).unwrap();
        let coarse = Mesh::slab(vec![0.0, 1.0, 2.0]).unwrap();
        let p = project_to(&fine, &[1.0, 3.0, 5.0], &coarse).unwrap();
        assert_eq!(p, vec![2.0, 5.0]);
    }

    #[test]
    fn csv_round_trip_with_failure_marker() {
        let mut pts = vec![point(1024, 0.123_456_789_012_345_67), point(2048, 1e-300)];
        pts[1].sampler = SamplerKind::Qmc;
        pts[1].n_s = ScatterCap::Unlimited;
        pts[1].runtime_s = 0.1 + 0.2;
        let mut w = SweepWriter::new(Vec::new()).unwrap();
        for p in &pts {
            w.write(p).unwrap();
        }
        let clean = w.into_inner().unwrap();
        let text = String::from_utf8(clean.clone()).unwrap();
        assert!(text.starts_with("problem,sampler,N_s,N_p,replica,l2_error,runtime_s,sn_iterations\n"));
        let (back, failed) = read_sweep_csv(clean.as_slice()).unwrap();
        assert_eq!(back, pts);
        assert!(!failed);

        let mut w = SweepWriter::new(Vec::new()).unwrap();
        w.write(&pts[0]).unwrap();
        w.fail("boom").unwrap();
        let (back, failed) = read_sweep_csv(w.into_inner().unwrap().as_slice()).unwrap();
        assert_eq!(back.len(), 1);
        assert!(failed);
    }

    #[test]
    fn summary_groups_by_sampler_and_cap() {
        let mut pts: Vec<_> = (10..14).map(|k| point(1 << k, ((1 << k) as f64).powf(-0.5))).collect();
        let mut q = point(1 << 10, 1.0);
        q.sampler = SamplerKind::Qmc;
        pts.push(q);
        let s = summarize(&pts);
        assert_eq!(s.len(), 2);
        let mc = s.iter().find(|r| r.sampler == SamplerKind::Mc).unwrap();
        assert!((mc.alpha.unwrap() + 0.5).abs() < 1e-12);
        assert!(s.iter().find(|r| r.sampler == SamplerKind::Qmc).unwrap().alpha.is_none());
    }

    #[test]
    fn one_point_sweep_gives_one_row() {
        let p = crate::benchmarks::reed_problem(16).unwrap();
        let reference = vec![0.0; 16];
        let axes = SweepAxes {
            n_s: vec![ScatterCap::Finite(0)],
            n_p: vec![256],
            samplers: vec![SamplerKind::Qmc],
            replicas: 1,
        };
        let base = HybridConfig::new(ScatterCap::Finite(0), 1, SamplerKind::Mc);
        let mut seen = 0;
        let rows = run_sweep("reed", &p, &reference, &axes, &base, |_| {
            seen += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(seen, 1);
        assert!(rows[0].l2_error > 0.0);
    }

    #[test]
    fn scatter_survival_tracks_erlang_tail() {
        let s = SampleStream::pseudorandom(11);
        let f = empirical_scatter_survival(1, 2.0, 1.0, 20_000, &s).unwrap();
        let p = erlang_tail(1, 2.0, 1.0);
        let sd = (p * (1.0 - p) / 20_000.0).sqrt();
        assert!((f - p).abs() < 4.0 * sd, "{f} vs {p}");
    }
}
