//! Multi-topography supervised training of the surrogate parameters.
//!
//! Every sequence carries its own true H, which is fed to the rollout as a
//! fixed input; only the stencil network weights learn. Batch members roll
//! out concurrently on private tapes and their gradients are reduced in
//! sequence-index order, so runs are reproducible for a fixed seed.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;

use crate::field::Field2D;
use crate::finn::{self, FinnError, FinnParams};
use crate::format::{self, FormatError};
use crate::grid::SimConfig;
use crate::optim::{clip_global_norm, Optimizer, OptimizerKind};
use crate::rng::Rng;
use crate::scenario::DatasetManifest;
use crate::tape::Tape;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Rollout length used for the loss; `None` means the full stored T.
    pub train_window_t: Option<usize>,
    pub seed: u64,
    /// Persist the best checkpoint every this many epochs (it is always
    /// persisted at the end and on abort).
    pub checkpoint_every: usize,
    pub clip_norm: Option<f64>,
    pub hidden_width: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 8,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::adam_default(),
            train_window_t: None,
            seed: 0,
            checkpoint_every: 10,
            clip_norm: Some(1.0),
            hidden_width: finn::DEFAULT_HIDDEN_WIDTH,
        }
    }
}

#[derive(Debug)]
pub enum TrainError {
    Format(FormatError),
    Finn { index: usize, source: FinnError },
    NonFiniteLoss { epoch: usize },
    EmptyDataset,
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::Format(e) => write!(f, "{e}"),
            TrainError::Finn { index, source } => write!(f, "sequence {index}: {source}"),
            TrainError::NonFiniteLoss { epoch } => write!(
                f,
                "non-finite loss at epoch {epoch}; best checkpoint so far retained"
            ),
            TrainError::EmptyDataset => write!(f, "dataset has no sequences"),
        }
    }
}

impl std::error::Error for TrainError {}

impl From<FormatError> for TrainError {
    fn from(e: FormatError) -> Self {
        TrainError::Format(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
}

/// Loss log lines: `epoch=<n> loss=<shortest round-trip decimal>`.
pub fn format_loss_log(log: &[EpochRecord]) -> String {
    let mut out = String::new();
    for rec in log {
        out.push_str(&format!("epoch={} loss={}\n", rec.epoch, rec.loss));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the lowest-loss epoch.
    pub best_params: FinnParams,
    pub best_epoch: usize,
    pub best_loss: f64,
    /// Parameters after the final epoch.
    pub final_params: FinnParams,
    pub log: Vec<EpochRecord>,
}

fn loss_and_grad(
    manifest: &DatasetManifest,
    params: &FinnParams,
    index: usize,
    window: usize,
) -> Result<(f64, Vec<f64>), TrainError> {
    let (h, eta_frames) =
        format::read_sequence_eta(&manifest.sequence_path(index)).map_err(TrainError::Format)?;
    let frames = &eta_frames[..=window];
    let cfg = manifest.sim;

    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let eta0 = tape.leaf_field(&frames[0]);
    let h_var = tape.leaf_field(&h);
    let pred = finn::rollout_on_tape(&mut tape, &vars, eta0, h_var, &cfg, window)
        .map_err(|source| TrainError::Finn { index, source })?;
    let loss = finn::sequence_loss(&mut tape, &pred, frames)
        .map_err(|source| TrainError::Finn { index, source })?;
    let grads = tape
        .backward(loss, &vars.flat_ids)
        .map_err(|source| TrainError::Finn {
            index,
            source: source.into(),
        })?;
    let flat: Vec<f64> = vars
        .flat_ids
        .iter()
        .map(|&id| grads.get(id).expect("requested id present")[0])
        .collect();
    Ok((tape.scalar_value(loss), flat))
}

fn window_of(manifest: &DatasetManifest, tc: &TrainConfig) -> usize {
    tc.train_window_t
        .unwrap_or(manifest.sim.steps)
        .min(manifest.sim.steps)
        .max(1)
}

/// Trains from `init` (or a seeded fresh init), returning the best and final
/// parameters plus the per-epoch batch-averaged loss log. When
/// `checkpoint_path` is given, the best checkpoint is persisted periodically
/// and survives a non-finite-loss abort.
pub fn train(
    manifest: &DatasetManifest,
    tc: &TrainConfig,
    init: Option<FinnParams>,
    checkpoint_path: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    if manifest.entries.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let window = window_of(manifest, tc);
    let mut params = init.unwrap_or_else(|| FinnParams::init(tc.hidden_width, tc.seed));
    let mut flat = params.to_flat();
    let mut optimizer = Optimizer::new(tc.optimizer, tc.learning_rate, flat.len());
    let mut shuffle_rng = Rng::derive(tc.seed, 0x7368_7566, 0);

    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut best_params = params.clone();
    let mut best_dirty = false;
    let mut log = Vec::with_capacity(tc.epochs);

    let persist = |p: &FinnParams| -> Result<(), TrainError> {
        if let Some(path) = checkpoint_path {
            format::write_checkpoint(path, p, None)?;
        }
        Ok(())
    };

    for epoch in 0..tc.epochs {
        let mut order: Vec<usize> = (0..manifest.entries.len()).collect();
        shuffle_rng.shuffle(&mut order);

        let mut batch_losses = Vec::new();
        for batch in order.chunks(tc.batch_size.max(1)) {
            let results: Result<Vec<(f64, Vec<f64>)>, TrainError> = batch
                .par_iter()
                .map(|&index| loss_and_grad(manifest, &params, index, window))
                .collect();
            // Any mid-training failure leaves the best checkpoint on disk.
            let results = match results {
                Ok(r) => r,
                Err(e) => {
                    persist(&best_params)?;
                    return Err(e);
                }
            };

            let inv = 1.0 / results.len() as f64;
            let mut grad = vec![0.0; flat.len()];
            let mut batch_loss = 0.0;
            for (loss, g) in &results {
                batch_loss += loss;
                for (acc, gi) in grad.iter_mut().zip(g) {
                    *acc += gi;
                }
            }
            batch_loss *= inv;
            grad.iter_mut().for_each(|g| *g *= inv);

            if !batch_loss.is_finite() {
                persist(&best_params)?;
                return Err(TrainError::NonFiniteLoss { epoch });
            }
            if let Some(max_norm) = tc.clip_norm {
                clip_global_norm(&mut grad, max_norm);
            }
            optimizer.step(&mut flat, &grad);
            params.overwrite_from_flat(&flat);
            batch_losses.push(batch_loss);
        }

        let epoch_loss = batch_losses.iter().sum::<f64>() / batch_losses.len() as f64;
        log.push(EpochRecord {
            epoch,
            loss: epoch_loss,
        });
        if epoch_loss < best_loss {
            best_loss = epoch_loss;
            best_epoch = epoch;
            best_params = params.clone();
            best_dirty = true;
        }
        if tc.checkpoint_every > 0 && (epoch + 1) % tc.checkpoint_every == 0 && best_dirty {
            persist(&best_params)?;
            best_dirty = false;
        }
    }
    persist(&best_params)?;

    Ok(TrainOutcome {
        best_params,
        best_epoch,
        best_loss,
        final_params: params,
        log,
    })
}

/// Where evaluation takes each sequence's topography from.
#[derive(Debug, Clone, Copy)]
pub enum HSource<'a> {
    /// The true H stored with the sequence.
    True,
    /// A caller-supplied field, e.g. an inferred topography.
    Provided(&'a Field2D),
}

/// Batch-averaged rollout MSE without gradient recording.
pub fn evaluate(
    manifest: &DatasetManifest,
    params: &FinnParams,
    h_source: HSource<'_>,
    batch_size: usize,
    window: Option<usize>,
) -> Result<f64, TrainError> {
    if manifest.entries.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let window = window
        .unwrap_or(manifest.sim.steps)
        .min(manifest.sim.steps)
        .max(1);
    let cfg: SimConfig = manifest.sim;
    let indices: Vec<usize> = (0..manifest.entries.len()).collect();
    let mut batch_means = Vec::new();
    for batch in indices.chunks(batch_size.max(1)) {
        let losses: Result<Vec<f64>, TrainError> = batch
            .par_iter()
            .map(|&index| {
                let (h_true, eta_frames) = format::read_sequence_eta(
                    &manifest.sequence_path(index),
                )
                .map_err(TrainError::Format)?;
                let h = match h_source {
                    HSource::True => &h_true,
                    HSource::Provided(h) => h,
                };
                let frames = &eta_frames[..=window];
                let pred = finn::rollout_forward(params, &frames[0], h, &cfg, window)
                    .map_err(|source| TrainError::Finn { index, source })?;
                Ok(finn::mse_frames(&pred, frames))
            })
            .collect();
        let losses = losses?;
        batch_means.push(losses.iter().sum::<f64>() / losses.len() as f64);
    }
    Ok(batch_means.iter().sum::<f64>() / batch_means.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::scenario::{self, Role};
    use crate::topography::ArctanParams;

    fn tiny_dataset(dir: &Path, count: usize, steps: usize) -> DatasetManifest {
        let sim = SimConfig::derive(Grid::new(8, 8, 1.0e6).unwrap(), 9.81, 0.7, 100.0)
            .with_steps(steps);
        scenario::generate_dataset(
            Role::Train,
            count,
            99,
            &sim,
            scenario::DEFAULT_SIGMA_M,
            &ArctanParams::default(),
            dir,
        )
        .unwrap()
    }

    #[test]
    fn training_reduces_loss_on_tiny_problem() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_dataset(dir.path(), 4, 4);
        let tc = TrainConfig {
            epochs: 60,
            batch_size: 2,
            learning_rate: 1e-2,
            seed: 1,
            ..TrainConfig::default()
        };
        let out = train(&manifest, &tc, None, None).unwrap();
        let first = out.log[0].loss;
        assert!(
            out.best_loss < first * 0.1,
            "no progress: first {first}, best {}",
            out.best_loss
        );
        assert_eq!(out.log.len(), 60);
    }

    #[test]
    fn training_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_dataset(dir.path(), 3, 3);
        let tc = TrainConfig {
            epochs: 5,
            batch_size: 2,
            seed: 7,
            ..TrainConfig::default()
        };
        let a = train(&manifest, &tc, None, None).unwrap();
        let b = train(&manifest, &tc, None, None).unwrap();
        for (ra, rb) in a.log.iter().zip(&b.log) {
            assert_eq!(ra.loss.to_bits(), rb.loss.to_bits());
        }
        assert_eq!(a.best_params, b.best_params);
    }

    #[test]
    fn best_checkpoint_loss_is_monotone() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_dataset(dir.path(), 4, 3);
        let tc = TrainConfig {
            epochs: 12,
            batch_size: 2,
            seed: 3,
            ..TrainConfig::default()
        };
        let out = train(&manifest, &tc, None, None).unwrap();
        let mut best = f64::INFINITY;
        let mut recorded = Vec::new();
        for rec in &out.log {
            if rec.loss < best {
                best = rec.loss;
            }
            recorded.push(best);
        }
        assert!(recorded.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(out.best_loss, best);
    }

    #[test]
    fn oracle_init_evaluates_near_zero_and_survives_small_sgd() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_dataset(dir.path(), 4, 6);
        let oracle = FinnParams::oracle(finn::DEFAULT_HIDDEN_WIDTH, manifest.sim.g_m_s2);

        let loss0 = evaluate(&manifest, &oracle, HSource::True, 4, None).unwrap();
        assert!(loss0 < 1e-10, "oracle loss {loss0}");

        // Small-step SGD keeps a perfect init perfect. (Adam is unsuitable
        // here: its scale-invariant update moves any parameter by about the
        // learning rate regardless of how small the gradient is.)
        let tc = TrainConfig {
            epochs: 5,
            batch_size: 4,
            optimizer: OptimizerKind::Sgd,
            learning_rate: 1e-6,
            clip_norm: Some(1.0),
            seed: 5,
            ..TrainConfig::default()
        };
        let out = train(&manifest, &tc, Some(oracle), None).unwrap();
        assert!(
            out.best_loss <= loss0 * 10.0 + 1e-30,
            "training degraded the oracle: {} vs {loss0}",
            out.best_loss
        );
    }

    #[test]
    fn evaluate_with_provided_true_h_matches_true_flag() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_dataset(dir.path(), 2, 4);
        let params = FinnParams::init(5, 2);
        let a = evaluate(&manifest, &params, HSource::True, 2, None).unwrap();
        // All training sequences have distinct H, so compare per sequence.
        let (h0, _) = format::read_sequence_eta(&manifest.sequence_path(0)).unwrap();
        let single = DatasetManifest {
            entries: manifest.entries[..1].to_vec(),
            count: 1,
            ..manifest.clone()
        };
        let b = evaluate(&single, &params, HSource::Provided(&h0), 1, None).unwrap();
        let c = evaluate(&single, &params, HSource::True, 1, None).unwrap();
        assert_eq!(b.to_bits(), c.to_bits());
        assert!(a.is_finite());
    }

    #[test]
    fn loss_log_format_is_line_oriented() {
        let log = vec![
            EpochRecord { epoch: 0, loss: 0.5 },
            EpochRecord {
                epoch: 1,
                loss: 0.125,
            },
        ];
        assert_eq!(format_loss_log(&log), "epoch=0 loss=0.5\nepoch=1 loss=0.125\n");
    }

    #[test]
    fn aborted_training_retains_a_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_dataset(dir.path(), 2, 4);
        let ckpt = dir.path().join("last_good.fnn");
        // An absurd learning rate blows the rollout past the stability guard.
        let tc = TrainConfig {
            epochs: 50,
            batch_size: 2,
            learning_rate: 1.0e4,
            clip_norm: None,
            seed: 2,
            ..TrainConfig::default()
        };
        let err = train(&manifest, &tc, None, Some(&ckpt)).unwrap_err();
        match err {
            TrainError::Finn { .. } | TrainError::NonFiniteLoss { .. } => {}
            other => panic!("expected a training abort, got {other:?}"),
        }
        let loaded = format::read_checkpoint(&ckpt).unwrap();
        assert_eq!(loaded.params.param_count(), 212);
    }

    #[test]
    fn checkpoint_persisted_and_loadable() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_dataset(dir.path(), 2, 3);
        let ckpt = dir.path().join("best.fnn");
        let tc = TrainConfig {
            epochs: 4,
            batch_size: 2,
            seed: 9,
            checkpoint_every: 2,
            ..TrainConfig::default()
        };
        let out = train(&manifest, &tc, None, Some(&ckpt)).unwrap();
        let loaded = format::read_checkpoint(&ckpt).unwrap();
        assert_eq!(loaded.params, out.best_params);
    }
}
