//! TOML run and sweep configuration.

use std::path::{Path, PathBuf};

use nsplit_core::analysis::ReferenceSettings;
use nsplit_core::sn::SnSettings;
use nsplit_core::{
    dogleg_problem, reed_problem, BoundarySource, Error, Extent, HybridConfig, Material, Mesh,
    Mode, ProblemSpec, RegionSpec, RemapVariant, SamplerKind, ScatterCap, SnScale, SweepAxes,
};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::failure::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub hybrid: HybridSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Reed,
    Dogleg,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeName {
    #[default]
    Steady,
    TimeDependent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    pub preset: Preset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nx: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ny: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<[f64; 2]>,
    #[serde(default)]
    pub mode: ModeName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default)]
    pub boundary: BoundaryConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub regions: Vec<RegionConfig>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConfig {
    #[serde(default)]
    pub x_low: f64,
    #[serde(default)]
    pub x_high: f64,
    #[serde(default)]
    pub y_low: f64,
    #[serde(default)]
    pub y_high: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionConfig {
    pub x: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<[f64; 2]>,
    pub sigma_a: f64,
    pub sigma_s: f64,
    #[serde(default)]
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridSection {
    #[serde(rename = "N_s", default = "zero_cap", with = "cap")]
    pub n_s: ScatterCap,
    #[serde(rename = "N_p", default = "default_n_p")]
    pub n_p: usize,
    #[serde(default = "default_sampler")]
    pub sampler: SamplerKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub start_index: u64,
    #[serde(default = "default_order")]
    pub sn_order: usize,
    #[serde(default = "default_tol")]
    pub sn_tol: f64,
    #[serde(default = "default_max_iter")]
    pub sn_max_iter: usize,
    #[serde(default)]
    pub sn_scale: SnScale,
    #[serde(default = "one")]
    pub sn_refine: usize,
    #[serde(default)]
    pub remap: RemapVariant,
    #[serde(default = "one")]
    pub steps: usize,
    #[serde(default)]
    pub steady_relabel: bool,
}

impl Default for HybridSection {
    fn default() -> Self {
        toml::from_str("").expect("every hybrid key has a default")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSection {
    #[serde(rename = "N_s", with = "caps")]
    pub n_s: Vec<ScatterCap>,
    #[serde(rename = "N_p")]
    pub n_p: Vec<usize>,
    pub samplers: Vec<SamplerKind>,
    #[serde(default = "one")]
    pub replicas: usize,
}

/// Overrides for the reference solve; missing keys keep the per-dimension
/// defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refine: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_name")]
    pub name: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: default_dir(),
            name: default_name(),
        }
    }
}

fn zero_cap() -> ScatterCap {
    ScatterCap::Finite(0)
}
fn default_n_p() -> usize {
    1024
}
fn default_sampler() -> SamplerKind {
    SamplerKind::Qmc
}
fn default_order() -> usize {
    SnSettings::default().order
}
fn default_tol() -> f64 {
    SnSettings::default().tol
}
fn default_max_iter() -> usize {
    SnSettings::default().max_iter
}
fn one() -> usize {
    1
}
fn default_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_name() -> String {
    "run".into()
}

/// A scatter cap written as a nonnegative integer or `"inf"`.
#[derive(Deserialize)]
#[serde(untagged)]
enum CapValue {
    Int(i64),
    Text(String),
}

impl CapValue {
    fn resolve(self) -> Result<ScatterCap, Error> {
        match self {
            CapValue::Int(n) => ScatterCap::from_signed(n),
            CapValue::Text(s) => s.parse(),
        }
    }
}

#[derive(Serialize)]
#[serde(untagged)]
enum CapOut {
    Int(u32),
    Text(&'static str),
}

impl From<ScatterCap> for CapOut {
    fn from(c: ScatterCap) -> Self {
        match c {
            ScatterCap::Finite(n) => CapOut::Int(n),
            ScatterCap::Unlimited => CapOut::Text("inf"),
        }
    }
}

mod cap {
    use super::*;

    pub fn serialize<S: Serializer>(c: &ScatterCap, s: S) -> Result<S::Ok, S::Error> {
        CapOut::from(*c).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<ScatterCap, D::Error> {
        CapValue::deserialize(d)?
            .resolve()
            .map_err(serde::de::Error::custom)
    }
}

mod caps {
    use super::*;

    pub fn serialize<S: Serializer>(c: &[ScatterCap], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(c.iter().map(|&c| CapOut::from(c)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<ScatterCap>, D::Error> {
        Vec::<CapValue>::deserialize(d)?
            .into_iter()
            .map(|v| v.resolve().map_err(serde::de::Error::custom))
            .collect()
    }
}

/// A parsed config and the dotted paths of keys it did not recognize.
#[derive(Debug)]
pub struct Loaded {
    pub config: Config,
    pub unknown: Vec<String>,
}

pub fn load(path: &Path) -> Result<Loaded, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::io(format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<Loaded, Failure> {
    let raw: toml::Table = text.parse().map_err(|e: toml::de::Error| Failure::config(None, e))?;
    let config: Config = toml::from_str(text).map_err(|e| Failure::config(None, e))?;
    let normalized = toml::Table::try_from(&config).map_err(|e| Failure::config(None, e))?;
    let mut unknown = Vec::new();
    unknown_keys(&raw, &normalized, "", &mut unknown);
    Ok(Loaded { config, unknown })
}

/// Keys present in `raw` but absent from the re-serialized config.
fn unknown_keys(raw: &toml::Table, known: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (key, value) in raw {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        match (value, known.get(key)) {
            (_, None) => out.push(path),
            (toml::Value::Table(r), Some(toml::Value::Table(k))) => unknown_keys(r, k, &path, out),
            (toml::Value::Array(r), Some(toml::Value::Array(k))) => {
                for (i, (r, k)) in r.iter().zip(k).enumerate() {
                    if let (toml::Value::Table(r), toml::Value::Table(k)) = (r, k) {
                        unknown_keys(r, k, &format!("{path}[{i}]"), out);
                    }
                }
            }
            _ => {}
        }
    }
}

impl Config {
    pub fn build_problem(&self) -> Result<ProblemSpec, Failure> {
        let p = &self.problem;
        let at = |key: &str| Failure::config_at(format!("problem.{key}"));
        let spec = match p.preset {
            Preset::Reed => reed_problem(p.nx.unwrap_or(80)).map_err(|e| at("nx")(e))?,
            Preset::Dogleg => dogleg_problem(p.nx.unwrap_or(30), p.ny.unwrap_or(50))
                .map_err(|e| at("nx")(e))?,
            Preset::Custom => self.custom_problem()?,
        };
        let boundary = BoundarySource {
            intensity: [
                p.boundary.x_low,
                p.boundary.x_high,
                p.boundary.y_low,
                p.boundary.y_high,
            ],
        };
        let spec = spec.with_boundary(boundary).map_err(|e| at("boundary")(e))?;
        let mode = match (p.mode, p.dt) {
            (ModeName::Steady, _) => Mode::Steady,
            (ModeName::TimeDependent, Some(dt)) => Mode::TimeDependent { dt },
            (ModeName::TimeDependent, None) => {
                return Err(Failure::config(
                    Some("problem.dt".into()),
                    "time-dependent mode needs a step length `dt`",
                ))
            }
        };
        spec.with_mode(mode).map_err(|e| at("dt")(e))
    }

    fn custom_problem(&self) -> Result<ProblemSpec, Failure> {
        let p = &self.problem;
        fn need<T>(v: Option<T>, key: &str) -> Result<T, Failure> {
            v.ok_or_else(|| {
                Failure::config(
                    Some(format!("problem.{key}")),
                    "required for a custom problem",
                )
            })
        }
        let x = need(p.x, "x")?;
        let nx = need(p.nx, "nx")?;
        let mesh = match p.y {
            None => Mesh::uniform_slab(x[0], x[1], nx),
            Some(y) => Mesh::uniform_rect((x[0], x[1]), nx, (y[0], y[1]), need(p.ny, "ny")?),
        }
        .map_err(|e| Failure::config_at("problem".into())(e))?;
        if p.regions.is_empty() {
            return Err(Failure::config(
                Some("problem.regions".into()),
                "a custom problem needs at least one region",
            ));
        }
        let regions = p
            .regions
            .iter()
            .map(|r| {
                let extent = match r.y {
                    None => Extent::slab(r.x[0], r.x[1]),
                    Some(y) => Extent::rect((r.x[0], r.x[1]), (y[0], y[1])),
                };
                RegionSpec::new(extent, Material::new(r.sigma_a, r.sigma_s, r.q))
            })
            .collect();
        ProblemSpec::new(mesh, regions).map_err(|e| {
            let path = match &e {
                Error::RegionMisaligned { region, .. } => format!("problem.regions[{region}]"),
                _ => "problem.regions".into(),
            };
            Failure::config(Some(path), e)
        })
    }

    pub fn hybrid(&self) -> Result<HybridConfig, Failure> {
        let h = &self.hybrid;
        let mut cfg = HybridConfig::new(h.n_s, h.n_p, h.sampler).with_seed(h.seed, h.start_index);
        cfg.sn = SnSettings {
            order: h.sn_order,
            tol: h.sn_tol,
            max_iter: h.sn_max_iter,
        };
        cfg.sn_scale = h.sn_scale;
        cfg.sn_refine = h.sn_refine;
        cfg.remap = h.remap;
        cfg.steps = h.steps;
        cfg.steady_relabel = h.steady_relabel;
        cfg.validate().map_err(|e| {
            let path = match &e {
                Error::InvalidParameter { name: "n_p", .. } => "hybrid.N_p".to_string(),
                Error::InvalidParameter { name, .. } => format!("hybrid.{name}"),
                _ => "hybrid".into(),
            };
            Failure::config(Some(path), e)
        })?;
        Ok(cfg)
    }

    pub fn sweep_axes(&self) -> Result<SweepAxes, Failure> {
        let s = self.sweep.as_ref().ok_or_else(|| {
            Failure::config(Some("sweep".into()), "a sweep needs a [sweep] section")
        })?;
        for (key, empty) in [
            ("N_s", s.n_s.is_empty()),
            ("N_p", s.n_p.is_empty()),
            ("samplers", s.samplers.is_empty()),
            ("replicas", s.replicas == 0),
        ] {
            if empty {
                return Err(Failure::config(Some(format!("sweep.{key}")), "must not be empty"));
            }
        }
        if let Some(i) = s.n_p.iter().position(|&n| n == 0) {
            return Err(Failure::config(Some(format!("sweep.N_p[{i}]")), "must be at least 1"));
        }
        Ok(SweepAxes {
            n_s: s.n_s.clone(),
            n_p: s.n_p.clone(),
            samplers: s.samplers.clone(),
            replicas: s.replicas,
        })
    }

    pub fn reference_settings(&self, mesh: &Mesh) -> ReferenceSettings {
        let mut r = ReferenceSettings::for_mesh(mesh);
        if let Some(o) = &self.reference {
            r.refine = o.refine.unwrap_or(r.refine);
            r.order = o.order.unwrap_or(r.order);
            r.tol = o.tol.unwrap_or(r.tol);
        }
        r
    }

    /// The config with every default filled in, as TOML.
    pub fn normalized(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
