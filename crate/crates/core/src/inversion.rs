//! Topography inference: with trained, frozen network parameters, the depth
//! grid itself becomes the learnable parameter.
//!
//! Each iteration rolls out a batch of observed sequences through the
//! surrogate with the current H estimate, adds quadratic smoothness and edge
//! regularizers, and takes one optimizer step on H alone. The reported
//! inference error is the minimum data term seen over all iterations, and
//! the returned topography is the H that produced it.

use std::fmt;

use rayon::prelude::*;

use crate::field::Field2D;
use crate::finn::{self, FinnError, FinnParams};
use crate::format::{self, FormatError};
use crate::optim::{Optimizer, OptimizerKind};
use crate::rng::Rng;
use crate::scenario::DatasetManifest;
use crate::tape::{Tape, TapeError, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct InverseConfig {
    pub iterations: usize,
    pub lambda_smooth: f64,
    pub lambda_edge: f64,
    /// Flat initialization depth, unless an explicit field is supplied.
    pub h_init_m: f64,
    pub h_init_field: Option<Field2D>,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub seed: u64,
    /// Rollout length used for the data term; `None` means the stored T.
    pub window_t: Option<usize>,
    /// H is clamped to at least this depth after every step.
    pub clamp_floor_m: f64,
    /// Keep an H snapshot every this many iterations (0 disables).
    pub snapshot_every: usize,
}

impl Default for InverseConfig {
    fn default() -> Self {
        InverseConfig {
            iterations: 1600,
            // The sequence loss is a mean over cells and frames; the
            // regularizer weights are scaled accordingly so the data term
            // keeps the upper hand near convergence.
            lambda_smooth: 5e-9,
            lambda_edge: 5e-9,
            h_init_m: 70.0,
            h_init_field: None,
            // H entries are O(100) m, so per-cell steps must be large enough
            // to cross tens of meters within the iteration budget.
            learning_rate: 5e-2,
            optimizer: OptimizerKind::adam_default(),
            batch_size: 8,
            seed: 0,
            window_t: None,
            clamp_floor_m: 0.1,
            snapshot_every: 0,
        }
    }
}

#[derive(Debug)]
pub enum InverseError {
    Format(FormatError),
    Finn { index: usize, source: FinnError },
    Tape(TapeError),
    Shape(crate::field::ShapeMismatch),
    GridTooSmall { nx: usize, ny: usize, needed: usize },
    EmptyDataset,
}

impl fmt::Display for InverseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InverseError::Format(e) => write!(f, "{e}"),
            InverseError::Finn { index, source } => write!(f, "sequence {index}: {source}"),
            InverseError::Tape(e) => write!(f, "{e}"),
            InverseError::Shape(e) => write!(f, "{e}"),
            InverseError::GridTooSmall { nx, ny, needed } => {
                write!(f, "grid {nx}x{ny} too small, need at least {needed} per side")
            }
            InverseError::EmptyDataset => write!(f, "dataset has no sequences"),
        }
    }
}

impl std::error::Error for InverseError {}

impl From<FormatError> for InverseError {
    fn from(e: FormatError) -> Self {
        InverseError::Format(e)
    }
}

impl From<TapeError> for InverseError {
    fn from(e: TapeError) -> Self {
        InverseError::Tape(e)
    }
}

/// Sum of squared differences between horizontally and vertically adjacent
/// cells. A direction with a single cell contributes no pairs.
pub fn smoothness_penalty(tape: &mut Tape, h: Var) -> Result<Var, TapeError> {
    let (rows, cols) = match h.shape {
        crate::tape::Shape::Field { rows, cols } => (rows, cols),
        crate::tape::Shape::Scalar => (1, 1),
    };
    let mut total: Option<Var> = None;
    if rows > 1 {
        let (lo, hi) = tape.stack_adjacent_x(h)?;
        let dx = tape.sub(hi, lo)?;
        let sqx = tape.mul(dx, dx)?;
        total = Some(tape.sum(sqx)?);
    }
    if cols > 1 {
        let (lo, hi) = tape.stack_adjacent_y(h)?;
        let dy = tape.sub(hi, lo)?;
        let sqy = tape.mul(dy, dy)?;
        let sy = tape.sum(sqy)?;
        total = Some(match total {
            None => sy,
            Some(t) => tape.add(t, sy)?,
        });
    }
    match total {
        Some(t) => Ok(t),
        None => Ok(tape.leaf_scalar(0.0)),
    }
}

/// Sum over border cells of the squared difference to the orthogonal inward
/// neighbor. Corner cells contribute one term per inward direction, so they
/// appear twice (once in the row sums, once in the column sums).
pub fn edge_penalty(tape: &mut Tape, h: Var) -> Result<Var, InverseError> {
    let (rows, cols) = match h.shape {
        crate::tape::Shape::Field { rows, cols } => (rows, cols),
        crate::tape::Shape::Scalar => {
            return Err(InverseError::GridTooSmall {
                nx: 0,
                ny: 0,
                needed: 3,
            })
        }
    };
    if rows < 3 || cols < 3 {
        return Err(InverseError::GridTooSmall {
            nx: rows,
            ny: cols,
            needed: 3,
        });
    }
    let mut terms = Vec::with_capacity(4);
    for (border, inward) in [
        ((0, 0, 1, cols), (1, 0, 1, cols)),
        ((rows - 1, 0, 1, cols), (rows - 2, 0, 1, cols)),
        ((0, 0, rows, 1), (0, 1, rows, 1)),
        ((0, cols - 1, rows, 1), (0, cols - 2, rows, 1)),
    ] {
        let b = tape.slice(h, border.0, border.1, border.2, border.3)?;
        let i = tape.slice(h, inward.0, inward.1, inward.2, inward.3)?;
        let d = tape.sub(b, i)?;
        let sq = tape.mul(d, d)?;
        terms.push(tape.sum(sq)?);
    }
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    /// Batch-mean rollout MSE.
    pub data: f64,
    /// Weighted smoothness term, lambda_smooth * penalty.
    pub smooth: f64,
    /// Weighted edge term, lambda_edge * penalty.
    pub edge: f64,
}

impl IterRecord {
    pub fn objective(&self) -> f64 {
        self.data + self.smooth + self.edge
    }
}

/// Iteration log lines: `iter=<n> data=<f64> smooth=<f64> edge=<f64>`.
pub fn format_iter_log(log: &[IterRecord]) -> String {
    let mut out = String::new();
    for r in log {
        out.push_str(&format!(
            "iter={} data={} smooth={} edge={}\n",
            r.iter, r.data, r.smooth, r.edge
        ));
    }
    out
}

#[derive(Debug, Clone)]
pub struct InversionOutcome {
    /// H snapshot at the iteration with the lowest data term.
    pub h_best: Field2D,
    pub best_iteration: usize,
    /// The minimum data term: the reported inference error.
    pub best_data_term: f64,
    pub h_final: Field2D,
    pub log: Vec<IterRecord>,
    /// Cells lifted back to the positivity floor, summed over iterations.
    pub clamp_events: usize,
    /// (iteration, H) pairs when snapshots were requested; iteration 0 is
    /// the initialization.
    pub snapshots: Vec<(usize, Field2D)>,
    /// True when a non-finite objective stopped the run early.
    pub aborted: bool,
}

struct MemberGrad {
    loss: f64,
    grad: Vec<f64>,
}

fn member_loss_and_h_grad(
    manifest: &DatasetManifest,
    params: &FinnParams,
    h: &Field2D,
    index: usize,
    window: usize,
) -> Result<MemberGrad, InverseError> {
    let (_, eta_frames) =
        format::read_sequence_eta(&manifest.sequence_path(index)).map_err(InverseError::Format)?;
    let frames = &eta_frames[..=window];
    let cfg = manifest.sim;

    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let eta0 = tape.leaf_field(&frames[0]);
    let h_var = tape.leaf_field(h);
    let pred = finn::rollout_on_tape(&mut tape, &vars, eta0, h_var, &cfg, window)
        .map_err(|source| InverseError::Finn { index, source })?;
    let loss = finn::sequence_loss(&mut tape, &pred, frames)
        .map_err(|source| InverseError::Finn { index, source })?;
    let grads = tape.backward(loss, &[h_var.id])?;
    Ok(MemberGrad {
        loss: tape.scalar_value(loss),
        grad: grads.get(h_var.id).expect("requested id present").to_vec(),
    })
}

/// Gradient-descends the depth grid against observed wave sequences.
///
/// The network parameters are read-only throughout. A non-finite objective
/// aborts the loop and returns the best snapshot seen so far with
/// `aborted = true`.
pub fn infer_topography(
    manifest: &DatasetManifest,
    params: &FinnParams,
    cfg: &InverseConfig,
) -> Result<InversionOutcome, InverseError> {
    if manifest.entries.is_empty() {
        return Err(InverseError::EmptyDataset);
    }
    let (nx, ny) = (manifest.sim.grid.nx, manifest.sim.grid.ny);
    let window = cfg
        .window_t
        .unwrap_or(manifest.sim.steps)
        .min(manifest.sim.steps)
        .max(1);

    let mut h = match &cfg.h_init_field {
        Some(field) => {
            assert_eq!(field.shape(), (nx, ny), "initial H must match the grid");
            field.clone()
        }
        None => Field2D::constant(nx, ny, cfg.h_init_m),
    };

    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, nx * ny);
    let mut shuffle_rng = Rng::derive(cfg.seed, 0x696e_7665, 0);
    let count = manifest.entries.len();
    let mut order: Vec<usize> = Vec::new();

    let mut log = Vec::with_capacity(cfg.iterations);
    let mut best_data_term = f64::INFINITY;
    let mut best_iteration = 0;
    let mut h_best = h.clone();
    let mut clamp_events = 0usize;
    let mut snapshots = Vec::new();
    let mut aborted = false;
    if cfg.snapshot_every > 0 {
        snapshots.push((0, h.clone()));
    }

    for iter in 1..=cfg.iterations {
        if order.len() < cfg.batch_size.min(count) {
            let mut fresh: Vec<usize> = (0..count).collect();
            shuffle_rng.shuffle(&mut fresh);
            order = fresh;
        }
        let take = cfg.batch_size.min(order.len()).max(1);
        let batch: Vec<usize> = order.drain(..take).collect();

        let members: Result<Vec<MemberGrad>, InverseError> = batch
            .par_iter()
            .map(|&index| member_loss_and_h_grad(manifest, params, &h, index, window))
            .collect();
        let members = members?;

        let inv = 1.0 / members.len() as f64;
        let data_term = members.iter().map(|m| m.loss).sum::<f64>() * inv;
        let mut grad = vec![0.0; nx * ny];
        for m in &members {
            for (acc, g) in grad.iter_mut().zip(&m.grad) {
                *acc += g;
            }
        }
        grad.iter_mut().for_each(|g| *g *= inv);

        // Regularizers on their own small tape; backward from the weighted
        // sum gives the already-scaled gradient contribution.
        let mut pen_tape = Tape::new();
        let h_var = pen_tape.leaf_field(&h);
        let smooth_raw = smoothness_penalty(&mut pen_tape, h_var)?;
        let edge_raw = edge_penalty(&mut pen_tape, h_var)?;
        let ls = pen_tape.leaf_scalar(cfg.lambda_smooth);
        let le = pen_tape.leaf_scalar(cfg.lambda_edge);
        let smooth_w = pen_tape.mul(ls, smooth_raw)?;
        let edge_w = pen_tape.mul(le, edge_raw)?;
        let penalty = pen_tape.add(smooth_w, edge_w)?;
        let pen_grads = pen_tape.backward(penalty, &[h_var.id])?;
        for (acc, g) in grad
            .iter_mut()
            .zip(pen_grads.get(h_var.id).expect("requested id present"))
        {
            *acc += g;
        }

        let record = IterRecord {
            iter,
            data: data_term,
            smooth: pen_tape.scalar_value(smooth_w),
            edge: pen_tape.scalar_value(edge_w),
        };
        if !record.objective().is_finite() {
            aborted = true;
            log.push(record);
            break;
        }

        // The data term was measured at the current H, before this step.
        if data_term < best_data_term {
            best_data_term = data_term;
            best_iteration = iter;
            h_best = h.clone();
        }
        log.push(record);

        optimizer.step(h.values_mut(), &grad);
        for v in h.values_mut() {
            if *v < cfg.clamp_floor_m {
                *v = cfg.clamp_floor_m;
                clamp_events += 1;
            }
        }
        if cfg.snapshot_every > 0 && iter % cfg.snapshot_every == 0 {
            snapshots.push((iter, h.clone()));
        }
    }

    Ok(InversionOutcome {
        h_best,
        best_iteration,
        best_data_term,
        h_final: h,
        log,
        clamp_events,
        snapshots,
        aborted,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecMode {
    Full,
    /// Strips two cells per side, e.g. 28x28 on the default 32x32 grid.
    Inner,
}

/// Root-mean-square error between inferred and true topography, in meters.
pub fn reconstruction_error(
    h_inferred: &Field2D,
    h_true: &Field2D,
    mode: RecMode,
) -> Result<f64, InverseError> {
    h_inferred.same_shape(h_true).map_err(InverseError::Shape)?;
    let (nx, ny) = h_inferred.shape();
    let (x0, x1, y0, y1) = match mode {
        RecMode::Full => (0, nx, 0, ny),
        RecMode::Inner => {
            if nx < 5 || ny < 5 {
                return Err(InverseError::GridTooSmall {
                    nx,
                    ny,
                    needed: 5,
                });
            }
            (2, nx - 2, 2, ny - 2)
        }
    };
    let mut acc = 0.0;
    let mut n = 0usize;
    for ix in x0..x1 {
        for iy in y0..y1 {
            let d = h_inferred.get(ix, iy) - h_true.get(ix, iy);
            acc += d * d;
            n += 1;
        }
    }
    Ok((acc / n as f64).sqrt())
}
