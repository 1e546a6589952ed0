//! Hybrid stencil-network surrogate of the shallow-water dynamics.
//!
//! Two small MLPs per direction act on pairs of adjacent cells: the velocity
//! networks map an eta pair to an interface value whose flanking difference
//! gives the cell-centered velocity time derivative, and the surface networks
//! reconstruct the interface surface height that enters the flux
//! `u_bar * (H_bar + eta_bar)`. Velocity and depth interface values stay
//! fixed arithmetic means, so the topography H participates in the flux
//! outside the learned part and the loss stays differentiable in H.
//!
//! Boundary handling is structural rather than learned: velocity derivatives
//! are zero-padded onto the border (no-slip) and boundary interface fluxes
//! are the zeros introduced by padding the interior flux array (wall
//! closure). Consequently border velocities vanish and the cell sum of eta is
//! conserved for arbitrary finite parameters.

use std::fmt;

use crate::field::Field2D;
use crate::grid::SimConfig;
use crate::rng::Rng;
use crate::solver::ETA_BLOWUP_M;
use crate::tape::{NodeId, Tape, TapeError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Option<Activation> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// One pair-stencil MLP: 2 inputs, one hidden layer, scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct StencilMlp {
    /// Hidden weights, row-major `hidden x 2`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// Output weights, length `hidden`.
    pub w2: Vec<f64>,
    pub b2: f64,
    pub activation: Activation,
}

impl StencilMlp {
    pub fn zeros(hidden: usize, activation: Activation) -> Self {
        StencilMlp {
            w1: vec![0.0; hidden * 2],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
            activation,
        }
    }

    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    /// Scalar parameters per network: `2h + h + h + 1`.
    pub fn param_count(hidden: usize) -> usize {
        4 * hidden + 1
    }
}

/// The four stencil networks of the surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct FinnParams {
    pub velo_x: StencilMlp,
    pub velo_y: StencilMlp,
    pub eta_x: StencilMlp,
    pub eta_y: StencilMlp,
    pub hidden_width: usize,
}

pub const DEFAULT_HIDDEN_WIDTH: usize = 13;

/// Positive shift that keeps the relu oracle construction on its linear
/// branch for any physically plausible eta pair.
const ORACLE_SHIFT: f64 = 8.0;

impl FinnParams {
    /// Seeded init: per layer, uniform in `+/- 1/sqrt(fan_in)`; tanh hidden.
    pub fn init(hidden_width: usize, seed: u64) -> Self {
        let mut rng = Rng::derive(seed, 0x66_69_6e_6e, 0);
        let make = |rng: &mut Rng| {
            let bound1 = 1.0 / (2.0f64).sqrt();
            let bound2 = 1.0 / (hidden_width as f64).sqrt();
            StencilMlp {
                w1: (0..hidden_width * 2)
                    .map(|_| rng.range_f64(-bound1, bound1))
                    .collect(),
                b1: (0..hidden_width)
                    .map(|_| rng.range_f64(-bound1, bound1))
                    .collect(),
                w2: (0..hidden_width)
                    .map(|_| rng.range_f64(-bound2, bound2))
                    .collect(),
                b2: rng.range_f64(-bound2, bound2),
                activation: Activation::Tanh,
            }
        };
        FinnParams {
            velo_x: make(&mut rng),
            velo_y: make(&mut rng),
            eta_x: make(&mut rng),
            eta_y: make(&mut rng),
            hidden_width,
        }
    }

    /// Closed-form weights that make the surrogate reproduce the reference
    /// discretization.
    ///
    /// Each network must realize a linear pair map: `-g * (a + b) / 2` for
    /// the velocity interfaces and `(a + b) / 2` for the surface
    /// reconstruction. One relu unit with both input weights 1 and a positive
    /// bias shift stays on its linear branch whenever `a + b > -shift`, so
    /// `w2 * relu(a + b + shift) - w2 * shift` is exactly that linear map on
    /// the physical input range.
    pub fn oracle(hidden_width: usize, g_m_s2: f64) -> Self {
        let linear_pair = |coeff: f64| {
            let mut net = StencilMlp::zeros(hidden_width, Activation::Relu);
            net.w1[0] = 1.0;
            net.w1[1] = 1.0;
            net.b1[0] = ORACLE_SHIFT;
            net.w2[0] = coeff;
            net.b2 = -coeff * ORACLE_SHIFT;
            net
        };
        FinnParams {
            velo_x: linear_pair(-g_m_s2 / 2.0),
            velo_y: linear_pair(-g_m_s2 / 2.0),
            eta_x: linear_pair(0.5),
            eta_y: linear_pair(0.5),
            hidden_width,
        }
    }

    pub fn param_count(&self) -> usize {
        4 * StencilMlp::param_count(self.hidden_width)
    }

    pub fn nets(&self) -> [&StencilMlp; 4] {
        [&self.velo_x, &self.velo_y, &self.eta_x, &self.eta_y]
    }

    pub fn nets_mut(&mut self) -> [&mut StencilMlp; 4] {
        [
            &mut self.velo_x,
            &mut self.velo_y,
            &mut self.eta_x,
            &mut self.eta_y,
        ]
    }

    /// Flattens in the fixed order velo_x, velo_y, eta_x, eta_y, each as
    /// w1 row-major, b1, w2, b2. Checkpoints and optimizer state use this
    /// order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for net in self.nets() {
            out.extend_from_slice(&net.w1);
            out.extend_from_slice(&net.b1);
            out.extend_from_slice(&net.w2);
            out.push(net.b2);
        }
        out
    }

    pub fn from_flat(
        hidden_width: usize,
        activation: Activation,
        flat: &[f64],
    ) -> Result<Self, FinnError> {
        let expected = 4 * StencilMlp::param_count(hidden_width);
        if flat.len() != expected {
            return Err(FinnError::ParamCount {
                expected,
                got: flat.len(),
            });
        }
        let mut params = FinnParams {
            velo_x: StencilMlp::zeros(hidden_width, activation),
            velo_y: StencilMlp::zeros(hidden_width, activation),
            eta_x: StencilMlp::zeros(hidden_width, activation),
            eta_y: StencilMlp::zeros(hidden_width, activation),
            hidden_width,
        };
        let mut cursor = flat;
        for net in params.nets_mut() {
            let (w1, rest) = cursor.split_at(hidden_width * 2);
            let (b1, rest) = rest.split_at(hidden_width);
            let (w2, rest) = rest.split_at(hidden_width);
            net.w1.copy_from_slice(w1);
            net.b1.copy_from_slice(b1);
            net.w2.copy_from_slice(w2);
            net.b2 = rest[0];
            cursor = &rest[1..];
        }
        Ok(params)
    }

    pub fn overwrite_from_flat(&mut self, flat: &[f64]) {
        debug_assert_eq!(flat.len(), self.param_count());
        let hidden = self.hidden_width;
        let mut cursor = flat;
        for net in self.nets_mut() {
            let (w1, rest) = cursor.split_at(hidden * 2);
            let (b1, rest) = rest.split_at(hidden);
            let (w2, rest) = rest.split_at(hidden);
            net.w1.copy_from_slice(w1);
            net.b1.copy_from_slice(b1);
            net.w2.copy_from_slice(w2);
            net.b2 = rest[0];
            cursor = &rest[1..];
        }
    }

    pub fn activation(&self) -> Activation {
        self.velo_x.activation
    }

    /// Registers every scalar parameter as a tape leaf, in flat order.
    pub fn register(&self, tape: &mut Tape) -> FinnVars {
        let reg_net = |tape: &mut Tape, net: &StencilMlp| MlpVars {
            w1: net.w1.iter().map(|&w| tape.leaf_scalar(w)).collect(),
            b1: net.b1.iter().map(|&w| tape.leaf_scalar(w)).collect(),
            w2: net.w2.iter().map(|&w| tape.leaf_scalar(w)).collect(),
            b2: tape.leaf_scalar(net.b2),
            activation: net.activation,
        };
        let velo_x = reg_net(tape, &self.velo_x);
        let velo_y = reg_net(tape, &self.velo_y);
        let eta_x = reg_net(tape, &self.eta_x);
        let eta_y = reg_net(tape, &self.eta_y);
        let mut flat_ids = Vec::with_capacity(self.param_count());
        for net in [&velo_x, &velo_y, &eta_x, &eta_y] {
            flat_ids.extend(net.w1.iter().map(|v| v.id));
            flat_ids.extend(net.b1.iter().map(|v| v.id));
            flat_ids.extend(net.w2.iter().map(|v| v.id));
            flat_ids.push(net.b2.id);
        }
        FinnVars {
            velo_x,
            velo_y,
            eta_x,
            eta_y,
            flat_ids,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MlpVars {
    pub w1: Vec<Var>,
    pub b1: Vec<Var>,
    pub w2: Vec<Var>,
    pub b2: Var,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct FinnVars {
    pub velo_x: MlpVars,
    pub velo_y: MlpVars,
    pub eta_x: MlpVars,
    pub eta_y: MlpVars,
    /// Parameter node ids in flat order, for backward and optimizer steps.
    pub flat_ids: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FinnError {
    Tape(TapeError),
    ParamCount { expected: usize, got: usize },
    Drying { index: usize, total_depth_m: f64 },
    Instability { step: usize, max_abs_eta_m: f64 },
    FrameMismatch { detail: String },
}

impl fmt::Display for FinnError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FinnError::Tape(e) => write!(f, "{e}"),
            FinnError::ParamCount { expected, got } => {
                write!(f, "parameter count mismatch: expected {expected}, got {got}")
            }
            FinnError::Drying {
                index,
                total_depth_m,
            } => write!(
                f,
                "surrogate dried out at interface {index}: H + eta = {total_depth_m}"
            ),
            FinnError::Instability {
                step,
                max_abs_eta_m,
            } => write!(
                f,
                "surrogate rollout unstable at step {step}: max |eta| = {max_abs_eta_m} m"
            ),
            FinnError::FrameMismatch { detail } => write!(f, "frame mismatch: {detail}"),
        }
    }
}

impl std::error::Error for FinnError {}

impl From<TapeError> for FinnError {
    fn from(e: TapeError) -> Self {
        FinnError::Tape(e)
    }
}

/// Applies a pair MLP elementwise over two stacked fields of pair members.
fn apply_pair_mlp(tape: &mut Tape, mlp: &MlpVars, a: Var, b: Var) -> Result<Var, TapeError> {
    let hidden = mlp.b1.len();
    let mut acc: Option<Var> = None;
    for k in 0..hidden {
        let ta = tape.mul(mlp.w1[2 * k], a)?;
        let tb = tape.mul(mlp.w1[2 * k + 1], b)?;
        let s = tape.add(ta, tb)?;
        let s = tape.add(s, mlp.b1[k])?;
        let h = match mlp.activation {
            Activation::Tanh => tape.tanh(s)?,
            Activation::Relu => tape.relu(s)?,
        };
        let term = tape.mul(mlp.w2[k], h)?;
        acc = Some(match acc {
            None => term,
            Some(prev) => tape.add(prev, term)?,
        });
    }
    let total = acc.expect("stencil networks have at least one hidden unit");
    tape.add(total, mlp.b2)
}

/// Velocity time derivatives from the current surface.
///
/// The x-network maps each vertically adjacent eta pair to an interface
/// value; differencing the two flanking interfaces of an interior cell (over
/// dx) gives du/dt there, and the border ring is forced to zero.
pub fn finn_velo(
    tape: &mut Tape,
    vars: &FinnVars,
    eta: Var,
    cfg: &SimConfig,
) -> Result<(Var, Var), FinnError> {
    let (nx, ny) = (cfg.grid.nx, cfg.grid.ny);

    let (ax, bx) = tape.stack_adjacent_x(eta)?;
    let sx = apply_pair_mlp(tape, &vars.velo_x, ax, bx)?;
    let hi = tape.slice(sx, 1, 1, nx - 2, ny - 2)?;
    let lo = tape.slice(sx, 0, 1, nx - 2, ny - 2)?;
    let diff = tape.sub(hi, lo)?;
    let inv_dx = tape.leaf_scalar(1.0 / cfg.grid.dx_m());
    let scaled = tape.mul(diff, inv_dx)?;
    let du_dt = tape.pad_zero(scaled, 1, 1, 1, 1)?;

    let (ay, by) = tape.stack_adjacent_y(eta)?;
    let sy = apply_pair_mlp(tape, &vars.velo_y, ay, by)?;
    let hi = tape.slice(sy, 1, 1, nx - 2, ny - 2)?;
    let lo = tape.slice(sy, 1, 0, nx - 2, ny - 2)?;
    let diff = tape.sub(hi, lo)?;
    let inv_dy = tape.leaf_scalar(1.0 / cfg.grid.dy_m());
    let scaled = tape.mul(diff, inv_dy)?;
    let dv_dt = tape.pad_zero(scaled, 1, 1, 1, 1)?;

    Ok((du_dt, dv_dt))
}

/// Surface time derivative from learned interface reconstruction.
///
/// Interface flux is `u_bar * (H_bar + eta_bar)` with `u_bar` and `H_bar`
/// arithmetic means and `eta_bar` the network output; padding the interior
/// flux array with zeros closes the walls, and the negative flux divergence
/// is the result.
pub fn finn_eta(
    tape: &mut Tape,
    vars: &FinnVars,
    eta: Var,
    u_next: Var,
    v_next: Var,
    h: Var,
    cfg: &SimConfig,
) -> Result<Var, FinnError> {
    let (nx, ny) = (cfg.grid.nx, cfg.grid.ny);
    let half = tape.leaf_scalar(0.5);

    let flux_divergence = |tape: &mut Tape,
                           mlp: &MlpVars,
                           vel: Var,
                           along_x: bool|
     -> Result<Var, FinnError> {
        let (ea, eb) = if along_x {
            tape.stack_adjacent_x(eta)?
        } else {
            tape.stack_adjacent_y(eta)?
        };
        let eta_bar = apply_pair_mlp(tape, mlp, ea, eb)?;

        let (ua, ub) = if along_x {
            tape.stack_adjacent_x(vel)?
        } else {
            tape.stack_adjacent_y(vel)?
        };
        let u_sum = tape.add(ua, ub)?;
        let u_bar = tape.mul(u_sum, half)?;

        let (ha, hb) = if along_x {
            tape.stack_adjacent_x(h)?
        } else {
            tape.stack_adjacent_y(h)?
        };
        let h_sum = tape.add(ha, hb)?;
        let h_bar = tape.mul(h_sum, half)?;

        let depth = tape.add(h_bar, eta_bar)?;
        if let Some(index) = tape.value(depth).iter().position(|&d| d <= 0.0) {
            return Err(FinnError::Drying {
                index,
                total_depth_m: tape.value(depth)[index],
            });
        }
        let flux = tape.mul(u_bar, depth)?;
        let (padded, inv_step) = if along_x {
            (
                tape.pad_zero(flux, 1, 1, 0, 0)?,
                tape.leaf_scalar(1.0 / cfg.grid.dx_m()),
            )
        } else {
            (
                tape.pad_zero(flux, 0, 0, 1, 1)?,
                tape.leaf_scalar(1.0 / cfg.grid.dy_m()),
            )
        };
        let (hi, lo) = if along_x {
            (
                tape.slice(padded, 1, 0, nx, ny)?,
                tape.slice(padded, 0, 0, nx, ny)?,
            )
        } else {
            (
                tape.slice(padded, 0, 1, nx, ny)?,
                tape.slice(padded, 0, 0, nx, ny)?,
            )
        };
        let diff = tape.sub(hi, lo)?;
        Ok(tape.mul(diff, inv_step)?)
    };

    let div_x = flux_divergence(tape, &vars.eta_x, u_next, true)?;
    let div_y = flux_divergence(tape, &vars.eta_y, v_next, false)?;
    let div = tape.add(div_x, div_y)?;
    Ok(tape.neg(div)?)
}

/// One Euler step: integrate the velocity derivatives, then the surface.
pub fn finn_step(
    tape: &mut Tape,
    vars: &FinnVars,
    eta: Var,
    u: Var,
    v: Var,
    h: Var,
    cfg: &SimConfig,
) -> Result<(Var, Var, Var), FinnError> {
    let dt = tape.leaf_scalar(cfg.dt_s);
    let (du_dt, dv_dt) = finn_velo(tape, vars, eta, cfg)?;
    let du = tape.mul(dt, du_dt)?;
    let dv = tape.mul(dt, dv_dt)?;
    let u_next = tape.add(u, du)?;
    let v_next = tape.add(v, dv)?;
    let deta_dt = finn_eta(tape, vars, eta, u_next, v_next, h, cfg)?;
    let deta = tape.mul(dt, deta_dt)?;
    let eta_next = tape.add(eta, deta)?;
    Ok((eta_next, u_next, v_next))
}

/// Closed-loop rollout recorded on one tape; returns all eta frame vars so a
/// loss over them can be differentiated w.r.t. parameters and H.
pub fn rollout_on_tape(
    tape: &mut Tape,
    vars: &FinnVars,
    eta0: Var,
    h: Var,
    cfg: &SimConfig,
    steps: usize,
) -> Result<Vec<Var>, FinnError> {
    let (nx, ny) = (cfg.grid.nx, cfg.grid.ny);
    let zero = Field2D::zeros(nx, ny);
    let mut u = tape.leaf_field(&zero);
    let mut v = tape.leaf_field(&zero);
    let mut eta = eta0;
    let mut frames = Vec::with_capacity(steps + 1);
    frames.push(eta);
    for step in 1..=steps {
        let (eta_next, u_next, v_next) = finn_step(tape, vars, eta, u, v, h, cfg)?;
        let max_abs = tape
            .value(eta_next)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        if max_abs > ETA_BLOWUP_M {
            return Err(FinnError::Instability {
                step,
                max_abs_eta_m: max_abs,
            });
        }
        eta = eta_next;
        u = u_next;
        v = v_next;
        frames.push(eta);
    }
    Ok(frames)
}

/// Inference-mode rollout: same step construction, but the tape is cleared
/// after every step and the state re-entered as leaves, so memory stays
/// bounded for long rollouts. No gradients are available.
pub fn rollout_forward(
    params: &FinnParams,
    eta0: &Field2D,
    h: &Field2D,
    cfg: &SimConfig,
    steps: usize,
) -> Result<Vec<Field2D>, FinnError> {
    let (nx, ny) = (cfg.grid.nx, cfg.grid.ny);
    let mut eta = eta0.clone();
    let mut u = Field2D::zeros(nx, ny);
    let mut v = Field2D::zeros(nx, ny);
    let mut frames = Vec::with_capacity(steps + 1);
    frames.push(eta.clone());
    let mut tape = Tape::new();
    for step in 1..=steps {
        tape.clear();
        let vars = params.register(&mut tape);
        let eta_var = tape.leaf_field(&eta);
        let u_var = tape.leaf_field(&u);
        let v_var = tape.leaf_field(&v);
        let h_var = tape.leaf_field(h);
        let (e2, u2, v2) = finn_step(&mut tape, &vars, eta_var, u_var, v_var, h_var, cfg)?;
        eta = tape.field_value(e2);
        u = tape.field_value(u2);
        v = tape.field_value(v2);
        let max_abs = eta.max_abs();
        if max_abs > ETA_BLOWUP_M {
            return Err(FinnError::Instability {
                step,
                max_abs_eta_m: max_abs,
            });
        }
        frames.push(eta.clone());
    }
    Ok(frames)
}

/// Mean squared error over frames 1..T (the given initial frame is excluded).
pub fn sequence_loss(
    tape: &mut Tape,
    pred_frames: &[Var],
    data_frames: &[Field2D],
) -> Result<Var, FinnError> {
    if pred_frames.len() != data_frames.len() {
        return Err(FinnError::FrameMismatch {
            detail: format!(
                "{} predicted frames vs {} data frames",
                pred_frames.len(),
                data_frames.len()
            ),
        });
    }
    if pred_frames.len() < 2 {
        return Err(FinnError::FrameMismatch {
            detail: "need at least one frame beyond the initial condition".into(),
        });
    }
    let mut acc: Option<Var> = None;
    let mut cells = 0usize;
    for (pred, data) in pred_frames.iter().zip(data_frames).skip(1) {
        let data_var = tape.leaf_field(data);
        let diff = tape.sub(*pred, data_var)?;
        let sq = tape.mul(diff, diff)?;
        let s = tape.sum(sq)?;
        cells += data.len();
        acc = Some(match acc {
            None => s,
            Some(prev) => tape.add(prev, s)?,
        });
    }
    let total = acc.expect("at least one compared frame");
    let count = tape.leaf_scalar(cells as f64);
    Ok(tape.div(total, count)?)
}

/// Plain (untaped) MSE over frames 1..T, matching `sequence_loss`'s
/// accumulation order.
pub fn mse_frames(pred_frames: &[Field2D], data_frames: &[Field2D]) -> f64 {
    assert_eq!(pred_frames.len(), data_frames.len());
    let mut total = 0.0;
    let mut cells = 0usize;
    for (pred, data) in pred_frames.iter().zip(data_frames).skip(1) {
        let mut s = 0.0;
        for (p, d) in pred.values().iter().zip(data.values()) {
            let diff = p - d;
            s += diff * diff;
        }
        total += s;
        cells += data.len();
    }
    total / cells as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::solver;

    fn cfg(n: usize) -> SimConfig {
        SimConfig::derive(Grid::new(n, n, 1.0e6).unwrap(), 9.81, 0.7, 100.0)
    }

    fn gaussian(n: usize, cfg: &SimConfig, frac_x: f64, frac_y: f64) -> Field2D {
        let grid = cfg.grid;
        let (x0, y0) = (
            grid.side_length_m * frac_x,
            grid.side_length_m * frac_y,
        );
        let sigma = grid.side_length_m / 10.0;
        Field2D::from_fn(n, n, |ix, iy| {
            let (x, y) = grid.cell_center(ix, iy);
            (-(((x - x0) * (x - x0)) + ((y - y0) * (y - y0))) / (2.0 * sigma * sigma)).exp()
        })
    }

    #[test]
    fn param_count_formula() {
        let p = FinnParams::init(DEFAULT_HIDDEN_WIDTH, 0);
        assert_eq!(p.param_count(), 212);
        assert_eq!(p.to_flat().len(), 212);
        let q = FinnParams::init(4, 0);
        assert_eq!(q.param_count(), 4 * 17);
    }

    #[test]
    fn flat_roundtrip_is_exact() {
        let p = FinnParams::init(7, 3);
        let flat = p.to_flat();
        let q = FinnParams::from_flat(7, Activation::Tanh, &flat).unwrap();
        assert_eq!(p, q);
        assert!(matches!(
            FinnParams::from_flat(8, Activation::Tanh, &flat),
            Err(FinnError::ParamCount { .. })
        ));
    }

    #[test]
    fn velo_constant_eta_telescopes_to_zero() {
        let cfg = cfg(6);
        let p = FinnParams::init(5, 11);
        let mut tape = Tape::new();
        let vars = p.register(&mut tape);
        let eta = tape.leaf_field(&Field2D::constant(6, 6, 0.37));
        let (du, dv) = finn_velo(&mut tape, &vars, eta, &cfg).unwrap();
        for v in [du, dv] {
            for &x in tape.value(v) {
                assert_eq!(x, 0.0);
            }
        }
    }

    #[test]
    fn velo_zero_eta_is_zero_with_zero_borders() {
        let cfg = cfg(5);
        let p = FinnParams::init(3, 2);
        let mut tape = Tape::new();
        let vars = p.register(&mut tape);
        let eta = tape.leaf_field(&Field2D::zeros(5, 5));
        let (du, _) = finn_velo(&mut tape, &vars, eta, &cfg).unwrap();
        let f = tape.field_value(du);
        for ix in 0..5 {
            for iy in 0..5 {
                assert_eq!(f.get(ix, iy), 0.0);
            }
        }
    }

    #[test]
    fn oracle_velo_matches_momentum_step() {
        let cfg = cfg(5);
        let p = FinnParams::oracle(DEFAULT_HIDDEN_WIDTH, cfg.g_m_s2);
        let eta_f = Field2D::from_fn(5, 5, |ix, iy| {
            0.3 * ((ix as f64 * 0.9).sin() + (iy as f64 * 0.4).cos())
        });
        let u0 = Field2D::zeros(5, 5);
        let v0 = Field2D::zeros(5, 5);
        let (u_ref, v_ref) = solver::momentum_step(&eta_f, &u0, &v0, &cfg).unwrap();

        let mut tape = Tape::new();
        let vars = p.register(&mut tape);
        let eta = tape.leaf_field(&eta_f);
        let (du, dv) = finn_velo(&mut tape, &vars, eta, &cfg).unwrap();
        let dt = cfg.dt_s;
        let du = tape.field_value(du);
        let dv = tape.field_value(dv);
        for ix in 0..5 {
            for iy in 0..5 {
                assert!((dt * du.get(ix, iy) - u_ref.get(ix, iy)).abs() < 1e-12);
                assert!((dt * dv.get(ix, iy) - v_ref.get(ix, iy)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eta_zero_velocity_gives_zero_derivative() {
        let cfg = cfg(5);
        let p = FinnParams::init(4, 8);
        let mut tape = Tape::new();
        let vars = p.register(&mut tape);
        let eta = tape.leaf_field(&gaussian(5, &cfg, 0.5, 0.5));
        let zero = tape.leaf_field(&Field2D::zeros(5, 5));
        let h = tape.leaf_field(&Field2D::constant(5, 5, 100.0));
        let deta = finn_eta(&mut tape, &vars, eta, zero, zero, h, &cfg).unwrap();
        for &x in tape.value(deta) {
            assert_eq!(x, 0.0);
        }
    }

    #[test]
    fn oracle_eta_matches_continuity_step() {
        let cfg = cfg(5);
        let p = FinnParams::oracle(DEFAULT_HIDDEN_WIDTH, cfg.g_m_s2);
        let eta_f = gaussian(5, &cfg, 0.4, 0.6);
        let h_f = Field2D::from_fn(5, 5, |ix, iy| 90.0 + (ix + iy) as f64);
        let mut u_f = Field2D::from_fn(5, 5, |ix, iy| 0.01 * (ix as f64 - iy as f64));
        let mut v_f = Field2D::from_fn(5, 5, |ix, iy| 0.02 * (iy as f64 * ix as f64).sin());
        solver::apply_no_slip(&mut u_f, &mut v_f);
        let eta_ref = solver::continuity_step(&eta_f, &u_f, &v_f, &h_f, &cfg).unwrap();

        let mut tape = Tape::new();
        let vars = p.register(&mut tape);
        let eta = tape.leaf_field(&eta_f);
        let u = tape.leaf_field(&u_f);
        let v = tape.leaf_field(&v_f);
        let h = tape.leaf_field(&h_f);
        let deta_dt = finn_eta(&mut tape, &vars, eta, u, v, h, &cfg).unwrap();
        let deta = tape.field_value(deta_dt);
        for ix in 0..5 {
            for iy in 0..5 {
                let step = eta_f.get(ix, iy) + cfg.dt_s * deta.get(ix, iy);
                assert!((step - eta_ref.get(ix, iy)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eta_derivative_sums_to_zero_for_any_params() {
        let cfg = cfg(6);
        for seed in [1u64, 9, 23] {
            let p = FinnParams::init(6, seed);
            let mut tape = Tape::new();
            let vars = p.register(&mut tape);
            let eta = tape.leaf_field(&gaussian(6, &cfg, 0.3, 0.7));
            let u = tape.leaf_field(&Field2D::from_fn(6, 6, |ix, iy| {
                0.05 * ((ix * iy) as f64).sin()
            }));
            let v = tape.leaf_field(&Field2D::from_fn(6, 6, |ix, iy| {
                0.04 * ((ix + iy) as f64).cos()
            }));
            let h = tape.leaf_field(&Field2D::constant(6, 6, 75.0));
            let deta = finn_eta(&mut tape, &vars, eta, u, v, h, &cfg).unwrap();
            let total: f64 = tape.value(deta).iter().sum();
            assert!(total.abs() < 1e-12, "seed {seed}: sum {total}");
        }
    }

    #[test]
    fn rollout_zero_ic_zero_bias_stays_zero() {
        let cfg = cfg(5).with_steps(6);
        let mut p = FinnParams::init(4, 3);
        for net in p.nets_mut() {
            net.b1.iter_mut().for_each(|b| *b = 0.0);
            net.b2 = 0.0;
        }
        let frames =
            rollout_forward(&p, &Field2D::zeros(5, 5), &Field2D::constant(5, 5, 100.0), &cfg, 6)
                .unwrap();
        for f in frames {
            assert!(f.values().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn oracle_rollout_tracks_reference() {
        let n = 16;
        let cfg = cfg(n).with_steps(20);
        let p = FinnParams::oracle(DEFAULT_HIDDEN_WIDTH, cfg.g_m_s2);
        let eta0 = gaussian(n, &cfg, 0.5, 0.5);
        let h = Field2D::from_fn(n, n, |ix, iy| 80.0 + 0.5 * (ix as f64) - 0.3 * (iy as f64));
        let reference = solver::reference_rollout(&eta0, &h, &cfg).unwrap();
        let surrogate = rollout_forward(&p, &eta0, &h, &cfg, cfg.steps).unwrap();
        assert_eq!(surrogate.len(), reference.eta_frames.len());
        let mut worst = 0.0f64;
        for (s, r) in surrogate.iter().zip(&reference.eta_frames) {
            worst = worst.max(s.max_abs_diff(r));
        }
        assert!(worst < 1e-10, "max frame deviation {worst}");
    }

    #[test]
    fn taped_and_forward_rollouts_agree() {
        let n = 6;
        let cfg = cfg(n).with_steps(5);
        let p = FinnParams::init(5, 21);
        let eta0 = gaussian(n, &cfg, 0.5, 0.5);
        let h = Field2D::constant(n, n, 90.0);

        let plain = rollout_forward(&p, &eta0, &h, &cfg, cfg.steps).unwrap();

        let mut tape = Tape::new();
        let vars = p.register(&mut tape);
        let eta_var = tape.leaf_field(&eta0);
        let h_var = tape.leaf_field(&h);
        let taped = rollout_on_tape(&mut tape, &vars, eta_var, h_var, &cfg, cfg.steps).unwrap();
        for (a, b) in plain.iter().zip(&taped) {
            assert_eq!(a.max_abs_diff(&tape.field_value(*b)), 0.0);
        }
    }

    #[test]
    fn rollout_conserves_mass_for_arbitrary_params() {
        let n = 8;
        let cfg = cfg(n).with_steps(30);
        let p = FinnParams::init(DEFAULT_HIDDEN_WIDTH, 77);
        let eta0 = gaussian(n, &cfg, 0.4, 0.4);
        let h = Field2D::constant(n, n, 100.0);
        let frames = rollout_forward(&p, &eta0, &h, &cfg, cfg.steps).unwrap();
        let m0 = frames[0].sum();
        let budget = 1e-9 * frames[0].abs_sum().max(1.0);
        for f in &frames {
            assert!((f.sum() - m0).abs() < budget);
        }
    }

    #[test]
    fn border_velocities_stay_zero_for_arbitrary_params() {
        let n = 6;
        let cfg = cfg(n).with_steps(4);
        let p = FinnParams::init(5, 31);
        let eta0 = gaussian(n, &cfg, 0.6, 0.3);
        let h = Field2D::constant(n, n, 100.0);
        let mut tape = Tape::new();
        let vars = p.register(&mut tape);
        let mut eta = tape.leaf_field(&eta0);
        let mut u = tape.leaf_field(&Field2D::zeros(n, n));
        let mut v = tape.leaf_field(&Field2D::zeros(n, n));
        let h_var = tape.leaf_field(&h);
        for _ in 0..cfg.steps {
            let (e2, u2, v2) = finn_step(&mut tape, &vars, eta, u, v, h_var, &cfg).unwrap();
            let uf = tape.field_value(u2);
            let vf = tape.field_value(v2);
            for ix in 0..n {
                assert_eq!(uf.get(ix, 0), 0.0);
                assert_eq!(uf.get(ix, n - 1), 0.0);
                assert_eq!(vf.get(ix, 0), 0.0);
            }
            for iy in 0..n {
                assert_eq!(uf.get(0, iy), 0.0);
                assert_eq!(uf.get(n - 1, iy), 0.0);
                assert_eq!(vf.get(n - 1, iy), 0.0);
            }
            eta = e2;
            u = u2;
            v = v2;
        }
    }

    #[test]
    fn sequence_loss_examples() {
        let mut tape = Tape::new();
        let a0 = Field2D::constant(2, 2, 0.5);
        let a1 = Field2D::from_vec(2, 2, vec![0.0, 0.0, 0.0, 0.2]);
        let a2 = Field2D::zeros(2, 2);

        // Identical frames: zero loss.
        let pred: Vec<Var> = [&a0, &a1, &a2]
            .iter()
            .map(|f| tape.leaf_field(f))
            .collect();
        let loss = sequence_loss(&mut tape, &pred, &[a0.clone(), a1.clone(), a2.clone()]).unwrap();
        assert_eq!(tape.scalar_value(loss), 0.0);

        // One cell of one frame off by 0.2: 0.04 / 8.
        let data = vec![a0.clone(), Field2D::zeros(2, 2), a2.clone()];
        let loss = sequence_loss(&mut tape, &pred, &data).unwrap();
        assert!((tape.scalar_value(loss) - 0.005).abs() < 1e-15);

        // Constant offset of 0.1 in every compared cell.
        let mut tape = Tape::new();
        let base = Field2D::from_fn(3, 3, |ix, iy| (ix as f64 * 0.21 + iy as f64 * 0.13).sin());
        let shifted = Field2D::from_fn(3, 3, |ix, iy| base.get(ix, iy) + 0.1);
        let pred = vec![tape.leaf_field(&base), tape.leaf_field(&shifted)];
        let loss = sequence_loss(&mut tape, &pred, &[base.clone(), base.clone()]).unwrap();
        assert!((tape.scalar_value(loss) - 0.01).abs() < 1e-12);
    }

    #[test]
    fn sequence_loss_frame_count_mismatch() {
        let mut tape = Tape::new();
        let f = Field2D::zeros(2, 2);
        let pred = vec![tape.leaf_field(&f), tape.leaf_field(&f)];
        assert!(matches!(
            sequence_loss(&mut tape, &pred, std::slice::from_ref(&f)),
            Err(FinnError::FrameMismatch { .. })
        ));
    }
}
