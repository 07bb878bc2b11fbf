use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use nsplit_core::analysis::{summarize, SweepWriter};
use nsplit_core::Reduction;
use nsplit_core::{
    reference_solution, run_sweep, steady_state_solve, HybridConfig, Mode, ProblemSpec,
    ScatterCap, StepOutput,
};
use serde::Serialize;
use serde_json::json;

use crate::config::{Config, Loaded};
use crate::failure::Failure;

/// Weight-balance and `S_N` balance tolerance every run must meet.
pub const BALANCE_TOL: f64 = 1e-8;

/// Command-line settings that override the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub deterministic: bool,
}

pub struct Prepared {
    pub config: Config,
    pub problem: ProblemSpec,
    pub hybrid: HybridConfig,
}

pub fn prepare(loaded: Loaded, overrides: &Overrides) -> Result<Prepared, Failure> {
    for key in &loaded.unknown {
        eprintln!("warning: ignoring unknown config key `{key}`");
    }
    let mut config = loaded.config;
    if let Some(dir) = &overrides.out_dir {
        config.output.dir = dir.clone();
    }
    if let Some(seed) = overrides.seed {
        config.hybrid.seed = seed;
    }
    let problem = config.build_problem()?;
    let mut hybrid = config.hybrid()?;
    hybrid.reduction = if overrides.deterministic {
        Reduction::Ordered
    } else {
        Reduction::Unordered
    };
    Ok(Prepared {
        config,
        problem,
        hybrid,
    })
}

pub fn validate(p: &Prepared) -> Result<(), Failure> {
    if p.config.sweep.is_some() {
        p.config.sweep_axes()?;
    }
    print!("{}", p.config.normalized());
    Ok(())
}

#[derive(Serialize)]
struct StepSummary {
    step: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    time: Option<f64>,
    iterations: usize,
    weight_balance_residual: f64,
    sn_balance_residual: f64,
    particles: usize,
    scatters: u64,
    timings: nsplit_core::hybrid::StageTimings,
}

impl StepSummary {
    fn new(step: usize, time: Option<f64>, o: &StepOutput) -> Self {
        StepSummary {
            step,
            time,
            iterations: o.sn_iterations,
            weight_balance_residual: o.balance_residual,
            sn_balance_residual: o.sn_balance.residual(),
            particles: o.particles,
            scatters: o.scatters,
            timings: o.timings,
        }
    }
}

pub fn run(p: &Prepared) -> Result<(), Failure> {
    let steps: Vec<(Option<f64>, StepOutput)> = match p.problem.mode {
        Mode::Steady => vec![(
            None,
            steady_state_solve(&p.hybrid, &p.problem).map_err(Failure::solver)?,
        )],
        Mode::TimeDependent { .. } => nsplit_core::run_transient(&p.hybrid, &p.problem)
            .map_err(Failure::solver)?
            .into_iter()
            .map(|s| (Some(s.time), s.last.expect("every step records its output")))
            .collect(),
    };

    let out = &p.config.output;
    fs::create_dir_all(&out.dir).map_err(Failure::io)?;
    let flux_path = out.dir.join(format!("{}_flux.csv", out.name));
    write_flux(&flux_path, &p.problem, &steps).map_err(Failure::io)?;

    let summaries: Vec<StepSummary> = steps
        .iter()
        .enumerate()
        .map(|(k, (t, o))| StepSummary::new(k + 1, *t, o))
        .collect();
    let worst_weight = summaries
        .iter()
        .map(|s| s.weight_balance_residual)
        .fold(0.0, f64::max);
    let worst_sn = summaries
        .iter()
        .map(|s| s.sn_balance_residual)
        .fold(0.0, f64::max);
    let h = &p.config.hybrid;
    let summary = json!({
        "problem": p.config.problem.preset,
        "mode": p.config.problem.mode,
        "N_s": match p.hybrid.cap {
            ScatterCap::Finite(n) => json!(n),
            ScatterCap::Unlimited => json!("inf"),
        },
        "N_p": h.n_p,
        "sampler": h.sampler,
        "seed": h.seed,
        "start_index": h.start_index,
        "sn_order": h.sn_order,
        "iterations": summaries.iter().map(|s| s.iterations).sum::<usize>(),
        "weight_balance_residual": worst_weight,
        "sn_balance_residual": worst_sn,
        "timings": {
            "mc_s": summaries.iter().map(|s| s.timings.mc_s).sum::<f64>(),
            "sn_s": summaries.iter().map(|s| s.timings.sn_s).sum::<f64>(),
            "remap_s": summaries.iter().map(|s| s.timings.remap_s).sum::<f64>(),
        },
        "flux_csv": flux_path,
        "steps": summaries,
    });
    let summary_path = out.dir.join(format!("{}_summary.json", out.name));
    write_json(&summary_path, &summary)?;
    println!("{}", summary_path.display());

    if !(worst_weight <= BALANCE_TOL) {
        return Err(Failure::balance(format!(
            "weight-balance residual {worst_weight:e} exceeds {BALANCE_TOL:e}"
        )));
    }
    if !(worst_sn <= BALANCE_TOL) {
        return Err(Failure::balance(format!(
            "S_N balance residual {worst_sn:e} exceeds {BALANCE_TOL:e}"
        )));
    }
    Ok(())
}

fn write_flux(
    path: &Path,
    problem: &ProblemSpec,
    steps: &[(Option<f64>, StepOutput)],
) -> std::io::Result<()> {
    let mesh = &problem.mesh;
    let two_d = mesh.dimension() == 2;
    let transient = steps.iter().any(|(t, _)| t.is_some());
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header: Vec<&str> = Vec::new();
    if transient {
        header.extend(["step", "time"]);
    }
    header.extend(["cell", "x"]);
    if two_d {
        header.push("y");
    }
    header.extend(["flux", "pre", "post", "sn"]);
    w.write_record(&header)?;
    for (k, (t, o)) in steps.iter().enumerate() {
        for cell in 0..mesh.cell_count() {
            let c = mesh.center(cell);
            let mut row: Vec<String> = Vec::with_capacity(header.len());
            if transient {
                row.push((k + 1).to_string());
                row.push(t.unwrap_or(0.0).to_string());
            }
            row.push(cell.to_string());
            row.push(c[0].to_string());
            if two_d {
                row.push(c[1].to_string());
            }
            for v in [o.flux[cell], o.pre[cell], o.post[cell], o.sn[cell]] {
                row.push(v.to_string());
            }
            w.write_record(&row)?;
        }
    }
    w.flush()
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(Failure::io)?;
    fs::write(path, text + "\n").map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

pub fn sweep(p: &Prepared) -> Result<(), Failure> {
    let axes = p.config.sweep_axes()?;
    let settings = p.config.reference_settings(&p.problem.mesh);
    let reference = reference_solution(&p.problem, &settings).map_err(Failure::solver)?;

    let out = &p.config.output;
    fs::create_dir_all(&out.dir).map_err(Failure::io)?;
    let csv_path = out.dir.join(format!("{}_sweep.csv", out.name));
    let file = File::create(&csv_path)
        .map_err(|e| Failure::io(format!("{}: {e}", csv_path.display())))?;
    let mut writer = SweepWriter::new(file).map_err(Failure::io)?;
    let name = serde_json::to_value(p.config.problem.preset)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default();
    let points = match run_sweep(&name, &p.problem, &reference, &axes, &p.hybrid, |pt| {
        writer.write(pt)
    }) {
        Ok(points) => points,
        Err(e) => {
            let failure = Failure::solver(&e);
            writer.fail(&failure.message).map_err(Failure::io)?;
            return Err(failure);
        }
    };
    writer.into_inner().map_err(Failure::io)?;

    let rates_path = out.dir.join(format!("{}_rates.json", out.name));
    write_json(
        &rates_path,
        &json!({
            "problem": name,
            "reference": {
                "refine": settings.refine,
                "order": settings.order,
                "tol": settings.tol,
            },
            "rates": summarize(&points),
        }),
    )?;
    println!("{}", csv_path.display());
    println!("{}", rates_path.display());
    Ok(())
}
