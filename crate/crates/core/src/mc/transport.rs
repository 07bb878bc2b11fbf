use crate::error::{Error, Result};
use crate::geometry::ProblemSpec;
use crate::sampling::{
    dim_scatter_depth, dim_scatter_direction, sample_isotropic_direction, sample_optical_depth,
    SampleStream,
};

use super::{Census, Leg, Particle, ScatterCap, TallyField};

/// Scores the exact attenuated track length `w (1 − e^{−σℓ}) / σ` into one
/// bin and returns the attenuated weight `w e^{−σℓ}`.
#[inline]
pub fn score_segment(
    tally: &mut TallyField,
    cell: usize,
    w_in: f64,
    sigma_att: f64,
    length: f64,
    leg: Leg,
) -> f64 {
    let (score, w_out) = attenuated_track(w_in, sigma_att, length);
    match leg {
        Leg::Pre => tally.pre[cell] += score,
        Leg::Post => tally.post[cell] += score,
    }
    w_out
}

#[inline]
fn attenuated_track(w: f64, sigma: f64, length: f64) -> (f64, f64) {
    if sigma > 0.0 {
        let tau = sigma * length;
        (w * -(-tau).exp_m1() / sigma, w * (-tau).exp())
    } else {
        (w * length, w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Exited,
    Census,
    WeightCutoff,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryOutcome {
    pub termination: Termination,
    /// Scatters undergone during this call.
    pub scatters: u32,
    /// Sum of the particle weight at each scatter.
    pub collision_weight: f64,
}

/// Transports one particle until it leaves the domain, reaches `t_end`, or
/// drops below `w_min`.
///
/// While `p.n` is below the cap the particle samples scatters at rate `σ_s`
/// and loses weight at rate `σ_a`; at the cap it streams without scattering
/// and loses weight at rate `σ_t`. The optical depth to the next scatter is
/// drawn once per scatter and spent across cell crossings. Lost weight is
/// booked in `ledger`, census particles are pushed onto `ledger.particles`.
#[allow(clippy::too_many_arguments)]
pub fn advance_history(
    p: &mut Particle,
    cap: ScatterCap,
    t_end: f64,
    stream: &SampleStream,
    index: u64,
    problem: &ProblemSpec,
    tally: &mut TallyField,
    ledger: &mut Census,
    w_min: f64,
) -> Result<HistoryOutcome> {
    let mesh = &problem.mesh;
    let mut cell = mesh.locate(p.x)?;
    let mut depth_left: Option<f64> = None;
    let mut outcome = HistoryOutcome {
        termination: Termination::Exited,
        scatters: 0,
        collision_weight: 0.0,
    };

    loop {
        if !(p.w.is_finite() && p.w >= 0.0) {
            return Err(Error::Invariant(format!(
                "particle {index} has weight {}",
                p.w
            )));
        }
        if p.w < w_min {
            ledger.cutoff_weight += p.w;
            p.w = 0.0;
            outcome.termination = Termination::WeightCutoff;
            return Ok(outcome);
        }

        let mat = problem.material_at(cell);
        let v = mesh.plane_velocity(&p.omega);
        let exit = mesh.cell_exit(cell, p.x, v);
        let to_census = t_end - p.t;
        let scattering = cap.allows_scatter(p.n);

        let to_collision = if scattering && mat.sigma_s > 0.0 {
            let k = outcome.scatters as usize;
            let tau = *depth_left
                .get_or_insert_with(|| sample_optical_depth(stream.draw(index, dim_scatter_depth(k))));
            tau / mat.sigma_s
        } else {
            f64::INFINITY
        };

        let (sigma_att, leg) = if scattering {
            (mat.sigma_a, Leg::Pre)
        } else {
            (mat.sigma_t(), Leg::Post)
        };

        let d = exit.distance.min(to_collision).min(to_census);
        if !d.is_finite() {
            // Not moving in the mesh plane and nothing left to happen.
            if sigma_att > 0.0 {
                let w_in = p.w;
                score_segment(tally, cell, w_in, sigma_att, f64::INFINITY, leg);
                book_loss(ledger, leg, mat.sigma_a, mat.sigma_t(), w_in);
            } else {
                ledger.cutoff_weight += p.w;
            }
            p.w = 0.0;
            outcome.termination = Termination::WeightCutoff;
            return Ok(outcome);
        }

        let w_in = p.w;
        p.w = score_segment(tally, cell, w_in, sigma_att, d, leg);
        book_loss(ledger, leg, mat.sigma_a, mat.sigma_t(), w_in - p.w);
        p.x[0] += v[0] * d;
        p.x[1] += v[1] * d;
        p.t += d;
        if let Some(tau) = depth_left.as_mut() {
            *tau = (*tau - mat.sigma_s * d).max(0.0);
        }

        if to_census <= d {
            p.t = t_end;
            ledger.particles.push(*p);
            outcome.termination = Termination::Census;
            return Ok(outcome);
        }

        if to_collision <= exit.distance {
            let k = outcome.scatters as usize;
            let (d1, d2) = dim_scatter_direction(k);
            outcome.collision_weight += p.w;
            p.omega = sample_isotropic_direction(stream.draw(index, d1), stream.draw(index, d2));
            p.n += 1;
            outcome.scatters += 1;
            depth_left = None;
            continue;
        }

        if let Some(fx) = exit.face[0] {
            p.x[0] = fx;
        }
        if let Some(fy) = exit.face[1] {
            p.x[1] = fy;
        }
        match exit.next_cell {
            Some(next) => cell = next,
            None => {
                ledger.exited_weight += p.w;
                outcome.termination = Termination::Exited;
                return Ok(outcome);
            }
        }
    }
}

#[inline]
fn book_loss(ledger: &mut Census, leg: Leg, sigma_a: f64, sigma_t: f64, lost: f64) {
    match leg {
        Leg::Pre => ledger.absorbed_weight += lost,
        Leg::Post if sigma_t > 0.0 => {
            let absorbed = lost * (sigma_a / sigma_t);
            ledger.absorbed_weight += absorbed;
            ledger.scattered_out_weight += lost - absorbed;
        }
        Leg::Post => {}
    }
}
