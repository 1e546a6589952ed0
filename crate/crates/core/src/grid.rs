//! Grid geometry and simulation configuration.

use std::fmt;

/// Total simulated duration used to derive the default step count (19.71 h).
pub const DEFAULT_DURATION_S: f64 = 19.71 * 3600.0;

/// Regular cell-centered grid over a square domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub side_length_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GridError {
    TooSmall { nx: usize, ny: usize },
    BadSide { side_length_m: f64 },
}

impl fmt::Display for GridError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridError::TooSmall { nx, ny } => {
                write!(f, "grid must be at least 4x4, got {nx}x{ny}")
            }
            GridError::BadSide { side_length_m } => {
                write!(f, "domain side must be positive, got {side_length_m}")
            }
        }
    }
}

impl std::error::Error for GridError {}

impl Grid {
    pub fn new(nx: usize, ny: usize, side_length_m: f64) -> Result<Self, GridError> {
        if nx < 4 || ny < 4 {
            return Err(GridError::TooSmall { nx, ny });
        }
        if side_length_m <= 0.0 || !side_length_m.is_finite() {
            return Err(GridError::BadSide { side_length_m });
        }
        Ok(Grid {
            nx,
            ny,
            side_length_m,
        })
    }

    /// 32x32 cells over a 1000 km square.
    pub fn default_32() -> Self {
        Grid {
            nx: 32,
            ny: 32,
            side_length_m: 1.0e6,
        }
    }

    pub fn dx_m(&self) -> f64 {
        self.side_length_m / self.nx as f64
    }

    pub fn dy_m(&self) -> f64 {
        self.side_length_m / self.ny as f64
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            (ix as f64 + 0.5) * self.dx_m(),
            (iy as f64 + 0.5) * self.dy_m(),
        )
    }

    pub fn contains_point(&self, x_m: f64, y_m: f64) -> bool {
        (0.0..=self.side_length_m).contains(&x_m) && (0.0..=self.side_length_m).contains(&y_m)
    }
}

/// Time stepping and physics constants for one simulation run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub grid: Grid,
    /// Gravitational acceleration, m/s^2.
    pub g_m_s2: f64,
    /// Courant factor in (0, 1].
    pub cfl: f64,
    /// Depth scale the time step is derived from; generated topographies stay
    /// near this value so one dt serves a whole dataset.
    pub h_ref_m: f64,
    pub dt_s: f64,
    /// Rollout length T (states stored are T + 1).
    pub steps: usize,
}

impl SimConfig {
    /// Derives dt from the CFL bound `cfl * min(dx, dy) / sqrt(g * h_ref)`
    /// and the step count from the default total duration.
    pub fn derive(grid: Grid, g_m_s2: f64, cfl: f64, h_ref_m: f64) -> Self {
        let dt_s = cfl * grid.dx_m().min(grid.dy_m()) / (g_m_s2 * h_ref_m).sqrt();
        let steps = (DEFAULT_DURATION_S / dt_s).round() as usize;
        SimConfig {
            grid,
            g_m_s2,
            cfl,
            h_ref_m,
            dt_s,
            steps: steps.max(1),
        }
    }

    pub fn default_32() -> Self {
        SimConfig::derive(Grid::default_32(), 9.81, 0.7, 100.0)
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn with_dt(mut self, dt_s: f64) -> Self {
        self.dt_s = dt_s;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_dt_and_steps_match_design_targets() {
        let cfg = SimConfig::default_32();
        // 0.7 * 31250 / sqrt(9.81 * 100) = 698.4...
        assert!((cfg.dt_s - 698.4).abs() < 0.5, "dt = {}", cfg.dt_s);
        assert_eq!(cfg.steps, 102);
    }

    #[test]
    fn derived_dt_respects_cfl_bound() {
        for (nx, h) in [(8usize, 50.0), (16, 100.0), (32, 100.0), (32, 20.0)] {
            let grid = Grid::new(nx, nx, 1.0e6).unwrap();
            let cfg = SimConfig::derive(grid, 9.81, 0.7, h);
            let bound = cfg.cfl * grid.dx_m().min(grid.dy_m()) / (cfg.g_m_s2 * h).sqrt();
            assert!(cfg.dt_s <= bound * (1.0 + 1e-12));
        }
    }

    #[test]
    fn tiny_grids_rejected() {
        assert!(Grid::new(3, 8, 1.0).is_err());
        assert!(Grid::new(8, 3, 1.0).is_err());
        assert!(Grid::new(8, 8, 0.0).is_err());
        assert!(Grid::new(8, 8, -1.0).is_err());
    }

    #[test]
    fn cell_centers() {
        let grid = Grid::new(4, 4, 4.0).unwrap();
        assert_eq!(grid.cell_center(0, 0), (0.5, 0.5));
        assert_eq!(grid.cell_center(3, 1), (3.5, 1.5));
    }
}
