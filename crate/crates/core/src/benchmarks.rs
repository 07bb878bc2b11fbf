//! Benchmark problems: Reed's slab and a 2D dogleg duct.

use crate::error::{Error, Result};
use crate::geometry::{Extent, Material, Mesh, ProblemSpec, RegionSpec};

/// Reed's layout on `[0, 8]` as `(upper edge, material)` from `x = 0` outward.
/// Values from Reed (1971).
const REED_HALF: [(f64, Material); 5] = [
    (2.0, Material { sigma_a: 50.0, sigma_s: 0.0, q: 50.0 }),
    (3.0, Material { sigma_a: 5.0, sigma_s: 0.0, q: 0.0 }),
    (5.0, Material { sigma_a: 0.0, sigma_s: 0.0, q: 0.0 }),
    (6.0, Material { sigma_a: 0.1, sigma_s: 0.9, q: 1.0 }),
    (8.0, Material { sigma_a: 0.1, sigma_s: 0.9, q: 0.0 }),
];

/// Reed's problem mirrored about `x = 0` onto `[-8, 8]` with vacuum boundaries.
/// `cells` must be a multiple of 16 so every region edge is a mesh edge.
pub fn reed_problem(cells: usize) -> Result<ProblemSpec> {
    if cells == 0 || cells % 16 != 0 {
        return Err(Error::InvalidMesh(format!(
            "Reed's problem needs a multiple of 16 cells, got {cells}"
        )));
    }
    let mut regions = Vec::with_capacity(9);
    for w in REED_HALF.iter().rev().collect::<Vec<_>>().windows(2) {
        let (hi, m) = *w[0];
        let lo = w[1].0;
        regions.push(RegionSpec::new(Extent::slab(-hi, -lo), m));
    }
    // The two central source slabs merge into [-2, 2].
    regions.push(RegionSpec::new(Extent::slab(-2.0, 2.0), REED_HALF[0].1));
    for w in REED_HALF.windows(2) {
        regions.push(RegionSpec::new(Extent::slab(w[0].0, w[1].0), w[1].1));
    }
    ProblemSpec::new(Mesh::uniform_slab(-8.0, 8.0, cells)?, regions)
}

/// Shield: `σ_t = 0.1` with scattering ratio 0.5, the Kobayashi (2000) 50 %
/// scattering case.
pub const DOGLEG_SHIELD: Material = Material {
    sigma_a: 0.05,
    sigma_s: 0.05,
    q: 0.0,
};

/// Near-vacuum duct, `σ_t = 1e-4`, also from Kobayashi (2000).
pub const DOGLEG_DUCT: Material = Material {
    sigma_a: 5e-5,
    sigma_s: 5e-5,
    q: 0.0,
};

/// Source block: shield material emitting `Q = 1`.
pub const DOGLEG_SOURCE: Material = Material {
    sigma_a: 0.05,
    sigma_s: 0.05,
    q: 1.0,
};

/// Dogleg domain in cm.
pub const DOGLEG_DOMAIN: ((f64, f64), (f64, f64)) = ((0.0, 30.0), (0.0, 50.0));

/// Source block in the lower-left corner.
pub const DOGLEG_SOURCE_BLOCK: ((f64, f64), (f64, f64)) = ((0.0, 10.0), (0.0, 10.0));

/// Duct rectangles: a short leg rising from the source, a lateral jog to the
/// right face, and a second leg running out through the top face.
pub const DOGLEG_DUCT_BLOCKS: [((f64, f64), (f64, f64)); 3] = [
    ((0.0, 10.0), (10.0, 20.0)),
    ((10.0, 30.0), (10.0, 20.0)),
    ((20.0, 30.0), (20.0, 50.0)),
];

/// Probe points used to compare duct-mouth and deep-shield flux. The deep
/// probe sits in the top-left shield corner, 30 cm past the first leg and
/// 20 cm from the second.
pub const DOGLEG_DUCT_MOUTH: [f64; 2] = [5.0, 10.5];
pub const DOGLEG_DEEP_SHIELD: [f64; 2] = [0.5, 49.5];

/// The 2D dogleg on a uniform `nx × ny` mesh over 30 cm × 50 cm. Every 10 cm
/// block boundary must be a mesh edge, so `nx` must be a multiple of 3 and
/// `ny` of 5.
pub fn dogleg_problem(nx: usize, ny: usize) -> Result<ProblemSpec> {
    let (xd, yd) = DOGLEG_DOMAIN;
    let mesh = Mesh::uniform_rect(xd, nx, yd, ny)?;
    let xs = [0.0, 10.0, 20.0, 30.0];
    let ys = [0.0, 10.0, 20.0, 30.0, 50.0];
    let inside = |b: &((f64, f64), (f64, f64)), x: f64, y: f64| {
        b.0 .0 <= x && x <= b.0 .1 && b.1 .0 <= y && y <= b.1 .1
    };
    let mut regions = Vec::new();
    for yw in ys.windows(2) {
        for xw in xs.windows(2) {
            let (cx, cy) = (0.5 * (xw[0] + xw[1]), 0.5 * (yw[0] + yw[1]));
            let material = if inside(&DOGLEG_SOURCE_BLOCK, cx, cy) {
                DOGLEG_SOURCE
            } else if DOGLEG_DUCT_BLOCKS.iter().any(|b| inside(b, cx, cy)) {
                DOGLEG_DUCT
            } else {
                DOGLEG_SHIELD
            };
            regions.push(RegionSpec::new(
                Extent::rect((xw[0], xw[1]), (yw[0], yw[1])),
                material,
            ));
        }
    }
    ProblemSpec::new(mesh, regions)
}
