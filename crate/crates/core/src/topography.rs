//! Topography generators for training and inference datasets.
//!
//! Training uses a smooth arctan ramp evaluated in rotated coordinates;
//! inference uses a bumpier seeded Gaussian-mixture profile. Rotation is
//! applied analytically (the profile is evaluated along the rotated axis,
//! never resampled) and the depth scale multiplies the finished profile, so
//! `H(beta) = beta * H(1)` holds exactly elementwise.

use std::f64::consts::PI;

use crate::field::Field2D;
use crate::grid::Grid;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopoKind {
    ArctanSlope,
    Bumpy,
}

impl TopoKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TopoKind::ArctanSlope => "arctan_slope",
            TopoKind::Bumpy => "bumpy",
        }
    }

    pub fn parse(s: &str) -> Option<TopoKind> {
        match s {
            "arctan_slope" => Some(TopoKind::ArctanSlope),
            "bumpy" => Some(TopoKind::Bumpy),
            _ => None,
        }
    }
}

/// One concrete topography draw: profile kind, rotation angle, depth scale,
/// and the seed for bump placement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopoSpec {
    pub kind: TopoKind,
    pub rotation_rad: f64,
    pub depth_scale: f64,
    pub seed: u64,
}

impl TopoSpec {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.5..=1.0).contains(&self.depth_scale) {
            return Err(format!(
                "depth scale must be in [0.5, 1.0], got {}",
                self.depth_scale
            ));
        }
        if !(0.0..2.0 * PI).contains(&self.rotation_rad) {
            return Err(format!(
                "rotation must be in [0, 2*pi), got {}",
                self.rotation_rad
            ));
        }
        Ok(())
    }
}

/// Shape knobs for the arctan training profile.
///
/// The defaults put the beta = 0.68 draw on a span of roughly 55..82 m with
/// a range near 27 m.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArctanParams {
    pub base_depth_m: f64,
    pub amplitude_m: f64,
    pub steepness: f64,
}

impl Default for ArctanParams {
    fn default() -> Self {
        ArctanParams {
            base_depth_m: 100.0,
            amplitude_m: 28.5,
            steepness: 4.0,
        }
    }
}

/// Bumpy profiles are affinely renormalized (before depth scaling) so that
/// beta = 0.68 spans exactly this interval.
pub const BUMPY_TARGET_MIN_M: f64 = 63.0;
pub const BUMPY_TARGET_MAX_M: f64 = 74.0;
pub const BUMPY_TARGET_BETA: f64 = 0.68;

/// Smooth ramp: depth increases along the rotated x-axis.
///
/// `H(x, y) = beta * (base + A * (2/pi) * atan(k * (x' - L/2) / L))` with
/// `x'` the projection of the cell center onto the axis rotated by phi about
/// the domain center.
pub fn gen_arctan(grid: &Grid, spec: &TopoSpec, params: &ArctanParams) -> Field2D {
    let l = grid.side_length_m;
    let (cx, cy) = (l / 2.0, l / 2.0);
    let (cos_phi, sin_phi) = (spec.rotation_rad.cos(), spec.rotation_rad.sin());
    let beta = spec.depth_scale;
    Field2D::from_fn(grid.nx, grid.ny, |ix, iy| {
        let (x, y) = grid.cell_center(ix, iy);
        let offset = (x - cx) * cos_phi + (y - cy) * sin_phi;
        let profile = params.base_depth_m
            + params.amplitude_m * (2.0 / PI) * (params.steepness * offset / l).atan();
        beta * profile
    })
}

/// Bumpy inference profile: base depth, a gentle seeded tilt, and 4 to 8
/// seeded Gaussian bumps of mixed sign, affinely renormalized per grid so the
/// beta = 0.68 draw spans [63, 74] m.
pub fn gen_bumpy(grid: &Grid, spec: &TopoSpec) -> Field2D {
    let l = grid.side_length_m;
    let (cx, cy) = (l / 2.0, l / 2.0);
    let mut rng = Rng::new(spec.seed);

    let tilt_angle = rng.range_f64(0.0, 2.0 * PI);
    let tilt_amp = rng.range_f64(1.0, 3.0);
    let (tc, ts) = (tilt_angle.cos(), tilt_angle.sin());

    let n_bumps = 4 + rng.below(5);
    let mut bumps = Vec::with_capacity(n_bumps);
    for _ in 0..n_bumps {
        let bx = rng.range_f64(0.15 * l, 0.85 * l);
        let by = rng.range_f64(0.15 * l, 0.85 * l);
        let amp = rng.range_f64(2.0, 8.0) * if rng.next_f64() < 0.5 { -1.0 } else { 1.0 };
        let width = rng.range_f64(0.08 * l, 0.2 * l);
        bumps.push((bx, by, amp, width));
    }

    let raw = Field2D::from_fn(grid.nx, grid.ny, |ix, iy| {
        let (x, y) = grid.cell_center(ix, iy);
        let mut depth = 100.0 + tilt_amp * ((x - cx) * tc + (y - cy) * ts) / (l / 2.0);
        for &(bx, by, amp, width) in &bumps {
            let r2 = (x - bx) * (x - bx) + (y - by) * (y - by);
            depth += amp * (-r2 / (2.0 * width * width)).exp();
        }
        depth
    });

    let (raw_min, raw_max) = (raw.min(), raw.max());
    let target_lo = BUMPY_TARGET_MIN_M / BUMPY_TARGET_BETA;
    let target_hi = BUMPY_TARGET_MAX_M / BUMPY_TARGET_BETA;
    let scale = (target_hi - target_lo) / (raw_max - raw_min);
    let beta = spec.depth_scale;
    Field2D::from_fn(grid.nx, grid.ny, |ix, iy| {
        beta * (target_lo + (raw.get(ix, iy) - raw_min) * scale)
    })
}

pub fn generate(grid: &Grid, spec: &TopoSpec, arctan: &ArctanParams) -> Field2D {
    match spec.kind {
        TopoKind::ArctanSlope => gen_arctan(grid, spec, arctan),
        TopoKind::Bumpy => gen_bumpy(grid, spec),
    }
}

/// Exact cell reductions of a topography field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopoMetadata {
    pub min_m: f64,
    pub max_m: f64,
    pub mean_m: f64,
    pub range_m: f64,
}

pub fn topo_metadata(h: &Field2D) -> TopoMetadata {
    assert!(!h.is_empty(), "metadata of an empty field");
    let (min_m, max_m) = (h.min(), h.max());
    TopoMetadata {
        min_m,
        max_m,
        mean_m: h.mean(),
        range_m: max_m - min_m,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_grid() -> Grid {
        Grid::default_32()
    }

    fn spec(kind: TopoKind, phi: f64, beta: f64, seed: u64) -> TopoSpec {
        TopoSpec {
            kind,
            rotation_rad: phi,
            depth_scale: beta,
            seed,
        }
    }

    #[test]
    fn arctan_center_is_near_base_depth() {
        let grid = default_grid();
        let h = gen_arctan(
            &grid,
            &spec(TopoKind::ArctanSlope, 0.0, 1.0, 0),
            &ArctanParams::default(),
        );
        // Even grid: the cell nearest the center sits half a cell off axis.
        let center = h.get(16, 16);
        assert!((center - 100.0).abs() < 1.5, "center depth {center}");
    }

    #[test]
    fn arctan_beta_half_has_mean_near_50() {
        let grid = default_grid();
        for phi in [0.0, 0.7, 2.1] {
            let h = gen_arctan(
                &grid,
                &spec(TopoKind::ArctanSlope, phi, 0.5, 0),
                &ArctanParams::default(),
            );
            assert!((h.mean() - 50.0).abs() < 1.0, "mean {} at phi {phi}", h.mean());
        }
    }

    #[test]
    fn arctan_published_span_at_beta_068() {
        let grid = default_grid();
        let h = gen_arctan(
            &grid,
            &spec(TopoKind::ArctanSlope, 0.0, 0.68, 0),
            &ArctanParams::default(),
        );
        let meta = topo_metadata(&h);
        assert!((meta.min_m - 55.0).abs() < 1.5, "min {}", meta.min_m);
        assert!((meta.max_m - 82.0).abs() < 1.5, "max {}", meta.max_m);
        assert!((meta.range_m - 27.0).abs() < 1.5, "range {}", meta.range_m);
    }

    #[test]
    fn scaling_is_exactly_linear() {
        let grid = default_grid();
        for kind in [TopoKind::ArctanSlope, TopoKind::Bumpy] {
            let one = generate(&grid, &spec(kind, 0.9, 1.0, 7), &ArctanParams::default());
            let beta = 0.62;
            let scaled = generate(&grid, &spec(kind, 0.9, beta, 7), &ArctanParams::default());
            for (a, b) in one.values().iter().zip(scaled.values()) {
                assert_eq!((beta * a).to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn arctan_mean_is_rotation_invariant() {
        let grid = default_grid();
        let params = ArctanParams::default();
        let base = gen_arctan(&grid, &spec(TopoKind::ArctanSlope, 0.0, 0.8, 0), &params).mean();
        for phi in [0.3, 1.1, 2.9, 4.4, 5.9] {
            let m = gen_arctan(&grid, &spec(TopoKind::ArctanSlope, phi, 0.8, 0), &params).mean();
            assert!((m - base).abs() < 1e-9 * base.abs());
        }
    }

    #[test]
    fn arctan_stats_invariant_under_quarter_turns() {
        let grid = default_grid();
        let params = ArctanParams::default();
        let phi = 0.83;
        let h0 = gen_arctan(&grid, &spec(TopoKind::ArctanSlope, phi, 0.8, 0), &params);
        let m0 = topo_metadata(&h0);
        for quarter in 1..4 {
            let h = gen_arctan(
                &grid,
                &spec(
                    TopoKind::ArctanSlope,
                    phi + quarter as f64 * PI / 2.0,
                    0.8,
                    0,
                ),
                &params,
            );
            let m = topo_metadata(&h);
            assert!((m.min_m - m0.min_m).abs() < 1e-9);
            assert!((m.max_m - m0.max_m).abs() < 1e-9);
            assert!((m.mean_m - m0.mean_m).abs() < 1e-9);
        }
    }

    #[test]
    fn bumpy_hits_renormalized_interval() {
        let grid = default_grid();
        for seed in [0u64, 3, 11, 42] {
            let h = gen_bumpy(&grid, &spec(TopoKind::Bumpy, 0.0, 0.68, seed));
            let meta = topo_metadata(&h);
            assert!((meta.min_m - 63.0).abs() < 0.5, "min {}", meta.min_m);
            assert!((meta.max_m - 74.0).abs() < 0.5, "max {}", meta.max_m);
            assert!((meta.range_m - 11.0).abs() < 0.5, "range {}", meta.range_m);
            assert!((meta.mean_m - 68.0).abs() < 3.0, "mean {}", meta.mean_m);
        }
    }

    #[test]
    fn bumpy_same_seed_is_bit_identical() {
        let grid = default_grid();
        let a = gen_bumpy(&grid, &spec(TopoKind::Bumpy, 0.0, 0.68, 5));
        let b = gen_bumpy(&grid, &spec(TopoKind::Bumpy, 0.0, 0.68, 5));
        for (x, y) in a.values().iter().zip(b.values()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        let c = gen_bumpy(&grid, &spec(TopoKind::Bumpy, 0.0, 0.68, 6));
        assert!(a.max_abs_diff(&c) > 0.0);
    }

    #[test]
    fn every_generated_depth_is_positive() {
        let grid = default_grid();
        let mut r = Rng::new(99);
        for _ in 0..20 {
            let s = TopoSpec {
                kind: if r.next_f64() < 0.5 {
                    TopoKind::ArctanSlope
                } else {
                    TopoKind::Bumpy
                },
                rotation_rad: r.range_f64(0.0, 2.0 * PI),
                depth_scale: r.range_f64(0.5, 1.0),
                seed: r.next_u64(),
            };
            let h = generate(&grid, &s, &ArctanParams::default());
            assert!(h.min() > 0.0, "non-positive depth for {s:?}");
        }
    }

    #[test]
    fn metadata_of_constant_field() {
        let h = Field2D::constant(4, 4, 70.0);
        let m = topo_metadata(&h);
        assert_eq!(
            (m.min_m, m.max_m, m.mean_m, m.range_m),
            (70.0, 70.0, 70.0, 0.0)
        );
    }

    #[test]
    fn spec_validation() {
        let mut s = spec(TopoKind::Bumpy, 0.0, 0.68, 0);
        assert!(s.validate().is_ok());
        s.depth_scale = 0.4;
        assert!(s.validate().is_err());
        s.depth_scale = 0.7;
        s.rotation_rad = -0.1;
        assert!(s.validate().is_err());
    }
}
