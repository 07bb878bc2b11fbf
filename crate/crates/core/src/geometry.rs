//! Structured 1D slab and 2D XY meshes, piecewise-constant material regions,
//! and the ray-tracing primitives used by the particle tracker.
//!
//! Directions are always full 3D unit vectors. A slab streams along `Ω_z`,
//! an XY problem along `(Ω_x, Ω_y)` with the z-extent treated as infinite.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mc::Particle;

/// Spatial point. The second component is ignored for slab problems.
pub type Point = [f64; 2];

/// Unit direction of flight on the sphere.
pub type Direction = [f64; 3];

const EDGE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub sigma_a: f64,
    pub sigma_s: f64,
    pub q: f64,
}

impl Material {
    pub const VACUUM: Material = Material {
        sigma_a: 0.0,
        sigma_s: 0.0,
        q: 0.0,
    };

    pub fn new(sigma_a: f64, sigma_s: f64, q: f64) -> Self {
        Material {
            sigma_a,
            sigma_s,
            q,
        }
    }

    #[inline]
    pub fn sigma_t(&self) -> f64 {
        self.sigma_a + self.sigma_s
    }

    fn validate(&self, region: usize) -> Result<()> {
        for (name, v) in [
            ("sigma_a", self.sigma_a),
            ("sigma_s", self.sigma_s),
            ("q", self.q),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::RegionLayout(format!(
                    "region {region}: {name} = {v} must be finite and nonnegative"
                )));
            }
        }
        Ok(())
    }
}

/// Axis-aligned interval (slab) or rectangle (XY), lengths in cm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub x: (f64, f64),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<(f64, f64)>,
}

impl Extent {
    pub fn slab(lo: f64, hi: f64) -> Self {
        Extent {
            x: (lo, hi),
            y: None,
        }
    }

    pub fn rect(x: (f64, f64), y: (f64, f64)) -> Self {
        Extent { x, y: Some(y) }
    }

    fn contains(&self, p: Point, dim: usize) -> bool {
        let inside_x = p[0] >= self.x.0 && p[0] <= self.x.1;
        match (dim, self.y) {
            (1, _) => inside_x,
            (_, Some(y)) => inside_x && p[1] >= y.0 && p[1] <= y.1,
            (_, None) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub extent: Extent,
    #[serde(flatten)]
    pub material: Material,
}

impl RegionSpec {
    pub fn new(extent: Extent, material: Material) -> Self {
        RegionSpec { extent, material }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    InteriorFace,
    DomainBoundary,
}

/// Domain faces, in the order used by [`BoundarySource`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Face {
    XLow,
    XHigh,
    YLow,
    YHigh,
}

impl Face {
    pub const ALL: [Face; 4] = [Face::XLow, Face::XHigh, Face::YLow, Face::YHigh];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Unit outward normal in the mesh plane.
    pub fn outward_normal(self) -> [f64; 2] {
        match self {
            Face::XLow => [-1.0, 0.0],
            Face::XHigh => [1.0, 0.0],
            Face::YLow => [0.0, -1.0],
            Face::YHigh => [0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    x_edges: Vec<f64>,
    y_edges: Option<Vec<f64>>,
}

fn check_edges(edges: &[f64], axis: char) -> Result<()> {
    if edges.len() < 2 {
        return Err(Error::InvalidMesh(format!(
            "axis {axis} needs at least two edges"
        )));
    }
    if edges.iter().any(|e| !e.is_finite()) {
        return Err(Error::InvalidMesh(format!("axis {axis} has non-finite edges")));
    }
    if let Some(w) = edges.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::InvalidMesh(format!(
            "axis {axis} edges not strictly increasing at {} -> {}",
            w[0], w[1]
        )));
    }
    Ok(())
}

fn uniform_edges(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let h = (hi - lo) / n as f64;
    (0..=n)
        .map(|i| if i == n { hi } else { lo + h * i as f64 })
        .collect()
}

/// Index of the cell containing `x`, with edge ties going to the higher cell.
fn locate_axis(edges: &[f64], x: f64) -> Option<usize> {
    let n = edges.len() - 1;
    if !(x >= edges[0] && x <= edges[n]) {
        return None;
    }
    let i = edges.partition_point(|&e| e <= x);
    Some(i.saturating_sub(1).min(n - 1))
}

impl Mesh {
    pub fn slab(x_edges: Vec<f64>) -> Result<Self> {
        check_edges(&x_edges, 'x')?;
        Ok(Mesh {
            x_edges,
            y_edges: None,
        })
    }

    pub fn uniform_slab(lo: f64, hi: f64, cells: usize) -> Result<Self> {
        if cells == 0 {
            return Err(Error::InvalidMesh("zero cells".into()));
        }
        Self::slab(uniform_edges(lo, hi, cells))
    }

    pub fn rect(x_edges: Vec<f64>, y_edges: Vec<f64>) -> Result<Self> {
        check_edges(&x_edges, 'x')?;
        check_edges(&y_edges, 'y')?;
        Ok(Mesh {
            x_edges,
            y_edges: Some(y_edges),
        })
    }

    pub fn uniform_rect(x: (f64, f64), nx: usize, y: (f64, f64), ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidMesh("zero cells".into()));
        }
        Self::rect(uniform_edges(x.0, x.1, nx), uniform_edges(y.0, y.1, ny))
    }

    #[inline]
    pub fn dimension(&self) -> usize {
        if self.y_edges.is_some() {
            2
        } else {
            1
        }
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.x_edges.len() - 1
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.y_edges.as_ref().map_or(1, |e| e.len() - 1)
    }

    #[inline]
    pub fn cell_count(&self) -> usize {
        self.nx() * self.ny()
    }

    pub fn x_edges(&self) -> &[f64] {
        &self.x_edges
    }

    pub fn y_edges(&self) -> Option<&[f64]> {
        self.y_edges.as_deref()
    }

    #[inline]
    pub fn cell_index(&self, i: usize, j: usize) -> usize {
        j * self.nx() + i
    }

    #[inline]
    pub fn cell_ij(&self, cell: usize) -> (usize, usize) {
        (cell % self.nx(), cell / self.nx())
    }

    /// Lower and upper corners of a cell. Slab cells report y-bounds (0, 1).
    #[inline]
    pub fn cell_bounds(&self, cell: usize) -> (Point, Point) {
        let (i, j) = self.cell_ij(cell);
        let (ylo, yhi) = match &self.y_edges {
            Some(e) => (e[j], e[j + 1]),
            None => (0.0, 1.0),
        };
        ([self.x_edges[i], ylo], [self.x_edges[i + 1], yhi])
    }

    /// Cell length (slab, per unit transverse area) or area (XY, per unit z).
    #[inline]
    pub fn volume(&self, cell: usize) -> f64 {
        let (lo, hi) = self.cell_bounds(cell);
        (hi[0] - lo[0]) * (hi[1] - lo[1])
    }

    pub fn volumes(&self) -> Vec<f64> {
        (0..self.cell_count()).map(|c| self.volume(c)).collect()
    }

    pub fn center(&self, cell: usize) -> Point {
        let (lo, hi) = self.cell_bounds(cell);
        [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])]
    }

    /// Domain bounding box. Slab domains report y-bounds (0, 1).
    pub fn domain(&self) -> (Point, Point) {
        let x = (self.x_edges[0], *self.x_edges.last().unwrap());
        let y = match &self.y_edges {
            Some(e) => (e[0], *e.last().unwrap()),
            None => (0.0, 1.0),
        };
        ([x.0, y.0], [x.1, y.1])
    }

    pub fn domain_volume(&self) -> f64 {
        let (lo, hi) = self.domain();
        (hi[0] - lo[0]) * (hi[1] - lo[1])
    }

    /// Largest domain side length, used to scale geometric tolerances.
    pub fn domain_size(&self) -> f64 {
        let (lo, hi) = self.domain();
        match self.dimension() {
            1 => hi[0] - lo[0],
            _ => (hi[0] - lo[0]).max(hi[1] - lo[1]),
        }
    }

    /// Measure of a domain face: 1 for slab end points, the side length in XY.
    pub fn face_measure(&self, face: Face) -> f64 {
        let (lo, hi) = self.domain();
        match (self.dimension(), face) {
            (1, Face::XLow | Face::XHigh) => 1.0,
            (1, _) => 0.0,
            (_, Face::XLow | Face::XHigh) => hi[1] - lo[1],
            (_, _) => hi[0] - lo[0],
        }
    }

    /// Streaming velocity in the mesh plane for a 3D direction.
    #[inline]
    pub fn plane_velocity(&self, omega: &Direction) -> [f64; 2] {
        if self.y_edges.is_some() {
            [omega[0], omega[1]]
        } else {
            [omega[2], 0.0]
        }
    }

    pub fn locate(&self, p: Point) -> Result<usize> {
        let out = || Error::OutOfDomain {
            position: p[..self.dimension()].to_vec(),
        };
        let i = locate_axis(&self.x_edges, p[0]).ok_or_else(out)?;
        let j = match &self.y_edges {
            Some(e) => locate_axis(e, p[1]).ok_or_else(out)?,
            None => 0,
        };
        Ok(self.cell_index(i, j))
    }

    /// Distance along `omega` from `p` to the first face of the cell holding `p`.
    pub fn distance_to_cell_exit(&self, p: Point, omega: &Direction) -> Result<(f64, ExitKind)> {
        let cell = self.locate(p)?;
        let exit = self.cell_exit(cell, p, self.plane_velocity(omega));
        let kind = if exit.leaves_domain {
            ExitKind::DomainBoundary
        } else {
            ExitKind::InteriorFace
        };
        Ok((exit.distance, kind))
    }

    /// Face crossing out of `cell` for a particle at `p` moving with in-plane
    /// velocity `v`. Corner hits step both axes at once.
    #[inline]
    pub(crate) fn cell_exit(&self, cell: usize, p: Point, v: [f64; 2]) -> CellExit {
        let (i, j) = self.cell_ij(cell);
        let (lo, hi) = self.cell_bounds(cell);
        let axis_time = |pos: f64, vel: f64, lo: f64, hi: f64| -> (f64, i8) {
            if vel > 0.0 {
                (((hi - pos) / vel).max(0.0), 1)
            } else if vel < 0.0 {
                (((lo - pos) / vel).max(0.0), -1)
            } else {
                (f64::INFINITY, 0)
            }
        };
        let (tx, sx) = axis_time(p[0], v[0], lo[0], hi[0]);
        let (ty, sy) = if self.y_edges.is_some() {
            axis_time(p[1], v[1], lo[1], hi[1])
        } else {
            (f64::INFINITY, 0)
        };
        let distance = tx.min(ty);
        let slack = 1e-12 * distance.max(1e-300);
        let cross_x = sx != 0 && tx <= distance + slack;
        let cross_y = sy != 0 && ty <= distance + slack;
        let mut next = (i as isize, j as isize);
        if cross_x {
            next.0 += sx as isize;
        }
        if cross_y {
            next.1 += sy as isize;
        }
        let leaves_domain = next.0 < 0
            || next.0 >= self.nx() as isize
            || next.1 < 0
            || next.1 >= self.ny() as isize;
        let face_x = if cross_x {
            Some(if sx > 0 { hi[0] } else { lo[0] })
        } else {
            None
        };
        let face_y = if cross_y {
            Some(if sy > 0 { hi[1] } else { lo[1] })
        } else {
            None
        };
        CellExit {
            distance,
            next_cell: if leaves_domain || !distance.is_finite() {
                None
            } else {
                Some(self.cell_index(next.0 as usize, next.1 as usize))
            },
            leaves_domain: leaves_domain && distance.is_finite(),
            face: [face_x, face_y],
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct CellExit {
    pub distance: f64,
    pub next_cell: Option<usize>,
    pub leaves_domain: bool,
    /// Exact face coordinate per crossed axis, used to snap the position.
    pub face: [Option<f64>; 2],
}

/// Isotropic incoming intensity `G` on each domain face (zero is vacuum).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundarySource {
    pub intensity: [f64; 4],
}

impl BoundarySource {
    pub const VACUUM: BoundarySource = BoundarySource {
        intensity: [0.0; 4],
    };

    pub fn is_vacuum(&self) -> bool {
        self.intensity.iter().all(|&g| g == 0.0)
    }

    pub fn on(&self, face: Face) -> f64 {
        self.intensity[face.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Mode {
    Steady,
    TimeDependent { dt: f64 },
}

#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub mesh: Mesh,
    pub regions: Vec<RegionSpec>,
    pub boundary: BoundarySource,
    /// Particle census representing the initial angular flux; empty is zero.
    pub initial: Vec<Particle>,
    pub mode: Mode,
    cell_material: Vec<Material>,
}

impl ProblemSpec {
    /// Builds a steady-state problem with vacuum boundaries and zero initial data.
    pub fn new(mesh: Mesh, regions: Vec<RegionSpec>) -> Result<Self> {
        let cell_material = assign_materials(&mesh, &regions)?;
        Ok(ProblemSpec {
            mesh,
            regions,
            boundary: BoundarySource::VACUUM,
            initial: Vec::new(),
            mode: Mode::Steady,
            cell_material,
        })
    }

    pub fn with_boundary(mut self, boundary: BoundarySource) -> Result<Self> {
        for (k, g) in boundary.intensity.iter().enumerate() {
            if !(g.is_finite() && *g >= 0.0) {
                return Err(Error::param("boundary", format!("face {k} intensity {g}")));
            }
            if self.mesh.dimension() == 1 && k >= 2 && *g != 0.0 {
                return Err(Error::param("boundary", "slab problems have no y faces"));
            }
        }
        self.boundary = boundary;
        Ok(self)
    }

    pub fn with_mode(mut self, mode: Mode) -> Result<Self> {
        if let Mode::TimeDependent { dt } = mode {
            if !(dt.is_finite() && dt > 0.0) {
                return Err(Error::param("dt", format!("{dt} must be positive")));
            }
        }
        self.mode = mode;
        Ok(self)
    }

    pub fn with_initial(mut self, census: Vec<Particle>) -> Result<Self> {
        for p in &census {
            self.mesh.locate(p.x)?;
        }
        self.initial = census;
        Ok(self)
    }

    #[inline]
    pub fn material_at(&self, cell: usize) -> Material {
        self.cell_material[cell]
    }

    pub fn cell_materials(&self) -> &[Material] {
        &self.cell_material
    }

    pub fn sigma_s_field(&self) -> Vec<f64> {
        self.cell_material.iter().map(|m| m.sigma_s).collect()
    }

    pub fn has_scattering(&self) -> bool {
        self.cell_material.iter().any(|m| m.sigma_s > 0.0)
    }

    /// Angle-integrated volumetric source integrated over the domain, per unit time.
    pub fn total_source(&self) -> f64 {
        self.cell_material
            .iter()
            .enumerate()
            .map(|(c, m)| m.q * self.mesh.volume(c))
            .sum()
    }

    /// Returns the same problem on a mesh refined `factor` times per axis.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        let refine = |edges: &[f64]| -> Vec<f64> {
            let mut out = Vec::with_capacity((edges.len() - 1) * factor + 1);
            for w in edges.windows(2) {
                let h = (w[1] - w[0]) / factor as f64;
                for k in 0..factor {
                    out.push(w[0] + h * k as f64);
                }
            }
            out.push(*edges.last().unwrap());
            out
        };
        let mesh = match self.mesh.y_edges() {
            Some(y) => Mesh::rect(refine(self.mesh.x_edges()), refine(y))?,
            None => Mesh::slab(refine(self.mesh.x_edges()))?,
        };
        let mut p = ProblemSpec::new(mesh, self.regions.clone())?;
        p.boundary = self.boundary;
        p.mode = self.mode;
        p.initial = self.initial.clone();
        Ok(p)
    }
}

fn is_edge(edges: &[f64], x: f64, tol: f64) -> bool {
    edges.iter().any(|&e| (e - x).abs() <= tol)
}

fn assign_materials(mesh: &Mesh, regions: &[RegionSpec]) -> Result<Vec<Material>> {
    if regions.is_empty() {
        return Err(Error::RegionLayout("no regions".into()));
    }
    let dim = mesh.dimension();
    let tol = EDGE_TOL * mesh.domain_size();
    for (r, region) in regions.iter().enumerate() {
        region.material.validate(r)?;
        let ext = &region.extent;
        if ext.x.1 <= ext.x.0 {
            return Err(Error::RegionLayout(format!("region {r} has an empty x-extent")));
        }
        for edge in [ext.x.0, ext.x.1] {
            if !is_edge(mesh.x_edges(), edge, tol) {
                return Err(Error::RegionMisaligned {
                    region: r,
                    axis: 'x',
                    edge,
                });
            }
        }
        match (dim, ext.y, mesh.y_edges()) {
            (1, Some(_), _) => {
                return Err(Error::RegionLayout(format!(
                    "region {r} has a y-extent in a slab problem"
                )))
            }
            (2, None, _) => {
                return Err(Error::RegionLayout(format!("region {r} is missing its y-extent")))
            }
            (2, Some(y), Some(edges)) => {
                if y.1 <= y.0 {
                    return Err(Error::RegionLayout(format!(
                        "region {r} has an empty y-extent"
                    )));
                }
                for edge in [y.0, y.1] {
                    if !is_edge(edges, edge, tol) {
                        return Err(Error::RegionMisaligned {
                            region: r,
                            axis: 'y',
                            edge,
                        });
                    }
                }
            }
            _ => {}
        }
    }

    let mut out = Vec::with_capacity(mesh.cell_count());
    for cell in 0..mesh.cell_count() {
        let c = mesh.center(cell);
        let mut hits = regions
            .iter()
            .enumerate()
            .filter(|(_, r)| r.extent.contains(c, dim));
        match (hits.next(), hits.next()) {
            (Some((_, r)), None) => out.push(r.material),
            (None, _) => {
                return Err(Error::RegionLayout(format!(
                    "cell {cell} at {:?} is not covered by any region",
                    &c[..dim]
                )))
            }
            (Some((a, _)), Some((b, _))) => {
                return Err(Error::RegionLayout(format!(
                    "regions {a} and {b} overlap at cell {cell}"
                )))
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn slab012() -> Mesh {
        Mesh::slab(vec![0.0, 1.0, 2.0]).unwrap()
    }

    #[test]
    fn locate_slab() {
        let m = slab012();
        assert_eq!(m.locate([0.5, 0.0]).unwrap(), 0);
        assert_eq!(m.locate([1.0, 0.0]).unwrap(), 1);
        assert_eq!(m.locate([0.0, 0.0]).unwrap(), 0);
        assert_eq!(m.locate([2.0, 0.0]).unwrap(), 1);
        assert!(matches!(
            m.locate([2.5, 0.0]),
            Err(Error::OutOfDomain { .. })
        ));
        assert!(m.locate([f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn locate_rect() {
        let m = Mesh::uniform_rect((0.0, 2.0), 2, (0.0, 2.0), 2).unwrap();
        let c = m.locate([1.5, 0.5]).unwrap();
        assert_eq!(m.cell_ij(c), (1, 0));
    }

    #[test]
    fn exit_distance_slab() {
        let m = slab012();
        let (d, k) = m.distance_to_cell_exit([0.5, 0.0], &[0.0, 0.0, 1.0]).unwrap();
        assert_eq!((d, k), (0.5, ExitKind::InteriorFace));
        let (d, k) = m.distance_to_cell_exit([0.5, 0.0], &[0.0, 0.0, -1.0]).unwrap();
        assert_eq!((d, k), (0.5, ExitKind::DomainBoundary));
        let (d, _) = m.distance_to_cell_exit([0.5, 0.0], &[1.0, 0.0, 0.0]).unwrap();
        assert!(d.is_infinite());
    }

    #[test]
    fn exit_distance_diagonal_corner() {
        let m = Mesh::uniform_rect((0.0, 2.0), 2, (0.0, 2.0), 2).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let (d, k) = m.distance_to_cell_exit([0.2, 0.2], &[s, s, 0.0]).unwrap();
        assert!((d - 0.8 * 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(k, ExitKind::InteriorFace);
        let exit = m.cell_exit(0, [0.2, 0.2], [s, s]);
        assert_eq!(exit.next_cell, Some(m.cell_index(1, 1)));
    }

    #[test]
    fn misaligned_region_names_edge() {
        let mesh = Mesh::uniform_slab(0.0, 2.0, 4).unwrap();
        let err = ProblemSpec::new(
            mesh,
            vec![
                RegionSpec::new(Extent::slab(0.0, 0.7), Material::VACUUM),
                RegionSpec::new(Extent::slab(0.7, 2.0), Material::VACUUM),
            ],
        )
        .unwrap_err();
        match err {
            Error::RegionMisaligned { edge, axis, .. } => {
                assert_eq!(axis, 'x');
                assert_eq!(edge, 0.7);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn gaps_and_overlaps_rejected() {
        let mesh = Mesh::uniform_slab(0.0, 2.0, 4).unwrap();
        let gap = ProblemSpec::new(
            mesh.clone(),
            vec![RegionSpec::new(Extent::slab(0.0, 1.0), Material::VACUUM)],
        );
        assert!(matches!(gap, Err(Error::RegionLayout(_))));
        let overlap = ProblemSpec::new(
            mesh,
            vec![
                RegionSpec::new(Extent::slab(0.0, 1.5), Material::VACUUM),
                RegionSpec::new(Extent::slab(1.0, 2.0), Material::VACUUM),
            ],
        );
        assert!(matches!(overlap, Err(Error::RegionLayout(_))));
    }

    #[test]
    fn negative_cross_section_rejected() {
        let mesh = Mesh::uniform_slab(0.0, 1.0, 2).unwrap();
        let r = ProblemSpec::new(
            mesh,
            vec![RegionSpec::new(
                Extent::slab(0.0, 1.0),
                Material::new(-1.0, 0.0, 0.0),
            )],
        );
        assert!(r.is_err());
    }

    #[test]
    fn mesh_rejects_unsorted_edges() {
        assert!(Mesh::slab(vec![0.0, 1.0, 1.0]).is_err());
        assert!(Mesh::slab(vec![0.0]).is_err());
    }

    #[test]
    fn refined_problem_keeps_materials() {
        let mesh = Mesh::uniform_slab(0.0, 2.0, 2).unwrap();
        let p = ProblemSpec::new(
            mesh,
            vec![
                RegionSpec::new(Extent::slab(0.0, 1.0), Material::new(1.0, 0.0, 2.0)),
                RegionSpec::new(Extent::slab(1.0, 2.0), Material::VACUUM),
            ],
        )
        .unwrap();
        let f = p.refined(3).unwrap();
        assert_eq!(f.mesh.cell_count(), 6);
        assert_eq!(f.material_at(2).q, 2.0);
        assert_eq!(f.material_at(3), Material::VACUUM);
        assert!((f.total_source() - p.total_source()).abs() < 1e-14);
    }

    fn direction_strategy() -> impl Strategy<Value = Direction> {
        (-1.0f64..1.0, 0.0f64..std::f64::consts::TAU).prop_map(|(mu, phi)| {
            let s = (1.0 - mu * mu).sqrt();
            [s * phi.cos(), s * phi.sin(), mu]
        })
    }

    proptest! {
        #[test]
        fn volumes_sum_to_domain(nx in 1usize..20, ny in 1usize..20) {
            let m = Mesh::uniform_rect((0.0, 3.0), nx, (-1.0, 4.0), ny).unwrap();
            let total: f64 = m.volumes().iter().sum();
            prop_assert!((total - m.domain_volume()).abs() <= 1e-12 * m.domain_volume());
        }

        #[test]
        fn streaming_to_exit_lands_on_a_face(
            x in 0.0f64..3.0, y in 0.0f64..3.0, omega in direction_strategy()
        ) {
            let m = Mesh::uniform_rect((0.0, 3.0), 7, (0.0, 3.0), 5).unwrap();
            let cell = m.locate([x, y]).unwrap();
            let v = m.plane_velocity(&omega);
            let exit = m.cell_exit(cell, [x, y], v);
            prop_assume!(exit.distance.is_finite());
            let p = [x + v[0] * exit.distance, y + v[1] * exit.distance];
            let tol = 1e-12 * m.domain_size();
            let on_face = |edges: &[f64], c: f64| edges.iter().any(|e| (e - c).abs() <= tol);
            prop_assert!(on_face(m.x_edges(), p[0]) || on_face(m.y_edges().unwrap(), p[1]));
            if let Some(next) = exit.next_cell {
                let eps = 1e-9;
                let nudged = [p[0] + v[0] * eps, p[1] + v[1] * eps];
                let found = m.locate(nudged).unwrap();
                let (i0, j0) = m.cell_ij(cell);
                let (i1, j1) = m.cell_ij(found);
                prop_assert!(i0.abs_diff(i1) <= 1 && j0.abs_diff(j1) <= 1);
                prop_assert_eq!(found, next);
            }
        }
    }
}
