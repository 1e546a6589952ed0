//! Reference shallow-water integrator.
//!
//! Explicit Euler over the linearized momentum equations
//! `du/dt = -g deta/dx`, `dv/dt = -g deta/dy` and the nonlinear continuity
//! equation `deta/dt + d/dx[u(H+eta)] + d/dy[v(H+eta)] = 0`, on a collocated
//! cell-centered grid. Spatial derivatives are second-order centered
//! differences; interface values are arithmetic means of the two adjacent
//! cells. Velocities obey the no-slip condition on the border and surface
//! fluxes are closed with zero flux through the walls, so the cell sum of eta
//! is conserved up to round-off.

use std::fmt;

use crate::field::Field2D;
use crate::grid::SimConfig;

/// Rollouts abort once |eta| passes this; the physics never gets anywhere
/// close, so crossing it means the scheme blew up.
pub const ETA_BLOWUP_M: f64 = 1.0e6;

#[derive(Debug, Clone, PartialEq)]
pub enum SolverError {
    Shape(crate::field::ShapeMismatch),
    /// Total depth H + eta dropped to zero or below at a cell.
    Drying {
        ix: usize,
        iy: usize,
        total_depth_m: f64,
    },
    Instability {
        step: usize,
        max_abs_eta_m: f64,
    },
}

impl fmt::Display for SolverError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolverError::Shape(e) => write!(f, "{e}"),
            SolverError::Drying {
                ix,
                iy,
                total_depth_m,
            } => write!(
                f,
                "fluid dried out at cell ({ix}, {iy}): H + eta = {total_depth_m}"
            ),
            SolverError::Instability {
                step,
                max_abs_eta_m,
            } => write!(
                f,
                "rollout unstable at step {step}: max |eta| = {max_abs_eta_m} m"
            ),
        }
    }
}

impl std::error::Error for SolverError {}

impl From<crate::field::ShapeMismatch> for SolverError {
    fn from(e: crate::field::ShapeMismatch) -> Self {
        SolverError::Shape(e)
    }
}

/// Zeroes the outermost row/column ring of both velocity fields.
pub fn apply_no_slip(u: &mut Field2D, v: &mut Field2D) {
    for f in [u, v] {
        let (nx, ny) = f.shape();
        for ix in 0..nx {
            f.set(ix, 0, 0.0);
            f.set(ix, ny - 1, 0.0);
        }
        for iy in 0..ny {
            f.set(0, iy, 0.0);
            f.set(nx - 1, iy, 0.0);
        }
    }
}

/// Zeroes the outermost interface fluxes so no mass crosses the domain edge.
///
/// `fx` holds x-direction interface fluxes, `(nx + 1) * ny` row-major;
/// `fy` holds y-direction fluxes, `nx * (ny + 1)` row-major.
pub fn apply_wall_eta(fx: &mut [f64], fy: &mut [f64], nx: usize, ny: usize) {
    assert_eq!(fx.len(), (nx + 1) * ny, "fx sized (nx+1) x ny");
    assert_eq!(fy.len(), nx * (ny + 1), "fy sized nx x (ny+1)");
    for iy in 0..ny {
        fx[iy] = 0.0;
        fx[nx * ny + iy] = 0.0;
    }
    for ix in 0..nx {
        fy[ix * (ny + 1)] = 0.0;
        fy[ix * (ny + 1) + ny] = 0.0;
    }
}

/// One Euler step of the linearized momentum equations, then no-slip.
pub fn momentum_step(
    eta: &Field2D,
    u: &Field2D,
    v: &Field2D,
    cfg: &SimConfig,
) -> Result<(Field2D, Field2D), SolverError> {
    eta.same_shape(u)?;
    eta.same_shape(v)?;
    let (nx, ny) = eta.shape();
    let dx = cfg.grid.dx_m();
    let dy = cfg.grid.dy_m();
    let g = cfg.g_m_s2;
    let dt = cfg.dt_s;

    let mut u_next = u.clone();
    let mut v_next = v.clone();
    for ix in 1..nx - 1 {
        for iy in 1..ny - 1 {
            let detadx = (eta.get(ix + 1, iy) - eta.get(ix - 1, iy)) / (2.0 * dx);
            let detady = (eta.get(ix, iy + 1) - eta.get(ix, iy - 1)) / (2.0 * dy);
            u_next.set(ix, iy, u.get(ix, iy) + dt * (-g * detadx));
            v_next.set(ix, iy, v.get(ix, iy) + dt * (-g * detady));
        }
    }
    apply_no_slip(&mut u_next, &mut v_next);
    Ok((u_next, v_next))
}

/// One Euler step of the continuity equation with wall-closed fluxes.
pub fn continuity_step(
    eta: &Field2D,
    u: &Field2D,
    v: &Field2D,
    h: &Field2D,
    cfg: &SimConfig,
) -> Result<Field2D, SolverError> {
    eta.same_shape(u)?;
    eta.same_shape(v)?;
    eta.same_shape(h)?;
    let (nx, ny) = eta.shape();
    let dx = cfg.grid.dx_m();
    let dy = cfg.grid.dy_m();
    let dt = cfg.dt_s;

    for ix in 0..nx {
        for iy in 0..ny {
            let depth = h.get(ix, iy) + eta.get(ix, iy);
            if depth <= 0.0 {
                return Err(SolverError::Drying {
                    ix,
                    iy,
                    total_depth_m: depth,
                });
            }
        }
    }

    // Interface fluxes u * (H + eta), both factors averaged onto the face.
    let mut fx = vec![0.0; (nx + 1) * ny];
    let mut fy = vec![0.0; nx * (ny + 1)];
    for ix in 0..nx - 1 {
        for iy in 0..ny {
            let u_face = (u.get(ix, iy) + u.get(ix + 1, iy)) * 0.5;
            let depth_face =
                ((h.get(ix, iy) + eta.get(ix, iy)) + (h.get(ix + 1, iy) + eta.get(ix + 1, iy)))
                    * 0.5;
            fx[(ix + 1) * ny + iy] = u_face * depth_face;
        }
    }
    for ix in 0..nx {
        for iy in 0..ny - 1 {
            let v_face = (v.get(ix, iy) + v.get(ix, iy + 1)) * 0.5;
            let depth_face =
                ((h.get(ix, iy) + eta.get(ix, iy)) + (h.get(ix, iy + 1) + eta.get(ix, iy + 1)))
                    * 0.5;
            fy[ix * (ny + 1) + iy + 1] = v_face * depth_face;
        }
    }
    apply_wall_eta(&mut fx, &mut fy, nx, ny);

    let mut eta_next = Field2D::zeros(nx, ny);
    for ix in 0..nx {
        for iy in 0..ny {
            let div = (fx[(ix + 1) * ny + iy] - fx[ix * ny + iy]) / dx
                + (fy[ix * (ny + 1) + iy + 1] - fy[ix * (ny + 1) + iy]) / dy;
            eta_next.set(ix, iy, eta.get(ix, iy) + dt * (-div));
        }
    }
    Ok(eta_next)
}

/// All states of one reference episode; frame 0 is the initial condition and
/// zero velocities.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub eta_frames: Vec<Field2D>,
    pub u_frames: Vec<Field2D>,
    pub v_frames: Vec<Field2D>,
}

/// Integrates `cfg.steps` Euler steps from rest: velocities first, then the
/// surface update driven by the new velocities.
pub fn reference_rollout(
    eta0: &Field2D,
    h: &Field2D,
    cfg: &SimConfig,
) -> Result<Rollout, SolverError> {
    eta0.same_shape(h)?;
    let (nx, ny) = eta0.shape();
    let mut eta = eta0.clone();
    let mut u = Field2D::zeros(nx, ny);
    let mut v = Field2D::zeros(nx, ny);

    let mut out = Rollout {
        eta_frames: Vec::with_capacity(cfg.steps + 1),
        u_frames: Vec::with_capacity(cfg.steps + 1),
        v_frames: Vec::with_capacity(cfg.steps + 1),
    };
    out.eta_frames.push(eta.clone());
    out.u_frames.push(u.clone());
    out.v_frames.push(v.clone());

    for step in 1..=cfg.steps {
        let (u_next, v_next) = momentum_step(&eta, &u, &v, cfg)?;
        let eta_next = continuity_step(&eta, &u_next, &v_next, h, cfg)?;
        let max_abs = eta_next.max_abs();
        if !max_abs.is_finite() || max_abs > ETA_BLOWUP_M {
            return Err(SolverError::Instability {
                step,
                max_abs_eta_m: max_abs,
            });
        }
        eta = eta_next;
        u = u_next;
        v = v_next;
        out.eta_frames.push(eta.clone());
        out.u_frames.push(u.clone());
        out.v_frames.push(v.clone());
    }
    Ok(out)
}
