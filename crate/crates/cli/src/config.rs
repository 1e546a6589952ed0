//! Layered run configuration: built-in defaults, then a `key = value` file,
//! then `--set key=value` flags, later layers winning. Unknown keys are hard
//! errors.

use std::fmt::Write as _;
use std::path::Path;

use swetopo_core::finn::{self, Activation};
use swetopo_core::grid::{Grid, SimConfig};
use swetopo_core::inversion::InverseConfig;
use swetopo_core::optim::OptimizerKind;
use swetopo_core::scenario;
use swetopo_core::topography::ArctanParams;
use swetopo_core::training::TrainConfig;

#[derive(Debug, Clone)]
pub struct Config {
    pub nx: usize,
    pub ny: usize,
    pub side_length_m: f64,
    pub g_m_s2: f64,
    pub cfl: f64,
    pub h_ref_m: f64,
    /// 0 means derive from the CFL bound.
    pub dt_s: f64,
    /// 0 means derive from the default total duration.
    pub steps: usize,
    pub sigma_m: f64,
    pub arctan_amplitude_m: f64,
    pub arctan_steepness: f64,
    pub arctan_base_depth_m: f64,
    pub hidden_width: usize,
    pub activation: Activation,
    pub train: TrainConfig,
    pub infer: InverseConfig,
    pub eval_batch_size: usize,
    pub report_train_count: usize,
    pub report_infer_count: usize,
    pub report_test_count: usize,
    pub report_concurrent: bool,
}

impl Default for Config {
    fn default() -> Self {
        let arctan = ArctanParams::default();
        Config {
            nx: 32,
            ny: 32,
            side_length_m: 1.0e6,
            g_m_s2: 9.81,
            cfl: 0.7,
            h_ref_m: 100.0,
            dt_s: 0.0,
            steps: 0,
            sigma_m: scenario::DEFAULT_SIGMA_M,
            arctan_amplitude_m: arctan.amplitude_m,
            arctan_steepness: arctan.steepness,
            arctan_base_depth_m: arctan.base_depth_m,
            hidden_width: finn::DEFAULT_HIDDEN_WIDTH,
            activation: Activation::Tanh,
            train: TrainConfig::default(),
            infer: InverseConfig::default(),
            eval_batch_size: 8,
            report_train_count: scenario::DEFAULT_TRAIN_COUNT,
            report_infer_count: scenario::DEFAULT_INFER_COUNT,
            report_test_count: scenario::DEFAULT_INFER_COUNT,
            report_concurrent: false,
        }
    }
}

impl Config {
    pub fn sim(&self) -> Result<SimConfig, String> {
        let grid = Grid::new(self.nx, self.ny, self.side_length_m).map_err(|e| e.to_string())?;
        let mut sim = SimConfig::derive(grid, self.g_m_s2, self.cfl, self.h_ref_m);
        if self.dt_s > 0.0 {
            sim = sim.with_dt(self.dt_s);
            sim.steps = (swetopo_core::grid::DEFAULT_DURATION_S / self.dt_s).round() as usize;
        }
        if self.steps > 0 {
            sim = sim.with_steps(self.steps);
        }
        Ok(sim)
    }

    pub fn arctan(&self) -> ArctanParams {
        ArctanParams {
            base_depth_m: self.arctan_base_depth_m,
            amplitude_m: self.arctan_amplitude_m,
            steepness: self.arctan_steepness,
        }
    }

    /// Applies one dotted-key assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
            value
                .trim()
                .parse()
                .map_err(|_| format!("bad value {value:?} for key {key}"))
        }
        let v = value.trim();
        match key.trim() {
            "sim.nx" => self.nx = num(key, v)?,
            "sim.ny" => self.ny = num(key, v)?,
            "sim.side_length_m" => self.side_length_m = num(key, v)?,
            "sim.g" => self.g_m_s2 = num(key, v)?,
            "sim.cfl" => self.cfl = num(key, v)?,
            "sim.h_ref_m" => self.h_ref_m = num(key, v)?,
            "sim.dt_s" => self.dt_s = num(key, v)?,
            "sim.steps" => self.steps = num(key, v)?,
            "ic.sigma_m" => self.sigma_m = num(key, v)?,
            "topo.arctan_amplitude_m" => self.arctan_amplitude_m = num(key, v)?,
            "topo.arctan_steepness" => self.arctan_steepness = num(key, v)?,
            "topo.arctan_base_depth_m" => self.arctan_base_depth_m = num(key, v)?,
            "finn.hidden_width" => {
                self.hidden_width = num(key, v)?;
                self.train.hidden_width = self.hidden_width;
            }
            "finn.activation" => {
                self.activation =
                    Activation::parse(v).ok_or_else(|| format!("bad activation {v:?}"))?
            }
            "train.epochs" => self.train.epochs = num(key, v)?,
            "train.batch_size" => self.train.batch_size = num(key, v)?,
            "train.learning_rate" => self.train.learning_rate = num(key, v)?,
            "train.optimizer" => {
                self.train.optimizer =
                    OptimizerKind::parse(v).ok_or_else(|| format!("bad optimizer {v:?}"))?
            }
            "train.window_t" => {
                let w: usize = num(key, v)?;
                self.train.train_window_t = if w == 0 { None } else { Some(w) };
            }
            "train.seed" => self.train.seed = num(key, v)?,
            "train.checkpoint_every" => self.train.checkpoint_every = num(key, v)?,
            "train.clip_norm" => {
                let c: f64 = num(key, v)?;
                self.train.clip_norm = if c == 0.0 { None } else { Some(c) };
            }
            "infer.iterations" => self.infer.iterations = num(key, v)?,
            "infer.lambda_smooth" => self.infer.lambda_smooth = num(key, v)?,
            "infer.lambda_edge" => self.infer.lambda_edge = num(key, v)?,
            "infer.h_init_m" => self.infer.h_init_m = num(key, v)?,
            "infer.learning_rate" => self.infer.learning_rate = num(key, v)?,
            "infer.optimizer" => {
                self.infer.optimizer =
                    OptimizerKind::parse(v).ok_or_else(|| format!("bad optimizer {v:?}"))?
            }
            "infer.batch_size" => self.infer.batch_size = num(key, v)?,
            "infer.seed" => self.infer.seed = num(key, v)?,
            "infer.window_t" => {
                let w: usize = num(key, v)?;
                self.infer.window_t = if w == 0 { None } else { Some(w) };
            }
            "infer.clamp_floor_m" => self.infer.clamp_floor_m = num(key, v)?,
            "eval.batch_size" => self.eval_batch_size = num(key, v)?,
            "report.train_count" => self.report_train_count = num(key, v)?,
            "report.infer_count" => self.report_infer_count = num(key, v)?,
            "report.test_count" => self.report_test_count = num(key, v)?,
            "report.concurrent" => {
                self.report_concurrent = match v {
                    "true" | "1" => true,
                    "false" | "0" => false,
                    _ => return Err(format!("bad bool {v:?} for key {key}")),
                }
            }
            other => return Err(format!("unknown config key {other:?}")),
        }
        Ok(())
    }

    /// Applies a `key = value` file (`#` comments and blank lines allowed).
    pub fn apply_file(&mut self, path: &Path) -> Result<(), String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("{}:{}: expected key = value", path.display(), i + 1))?;
            self.set(key, value)
                .map_err(|e| format!("{}:{}: {e}", path.display(), i + 1))?;
        }
        Ok(())
    }

    /// Deterministic dump of every resolved key.
    pub fn print(&self) -> String {
        let window = |w: Option<usize>| w.unwrap_or(0);
        let clip = |c: Option<f64>| c.unwrap_or(0.0);
        let mut pairs: Vec<(String, String)> = vec![
            ("sim.nx".into(), self.nx.to_string()),
            ("sim.ny".into(), self.ny.to_string()),
            ("sim.side_length_m".into(), self.side_length_m.to_string()),
            ("sim.g".into(), self.g_m_s2.to_string()),
            ("sim.cfl".into(), self.cfl.to_string()),
            ("sim.h_ref_m".into(), self.h_ref_m.to_string()),
            ("sim.dt_s".into(), self.dt_s.to_string()),
            ("sim.steps".into(), self.steps.to_string()),
            ("ic.sigma_m".into(), self.sigma_m.to_string()),
            (
                "topo.arctan_amplitude_m".into(),
                self.arctan_amplitude_m.to_string(),
            ),
            (
                "topo.arctan_steepness".into(),
                self.arctan_steepness.to_string(),
            ),
            (
                "topo.arctan_base_depth_m".into(),
                self.arctan_base_depth_m.to_string(),
            ),
            ("finn.hidden_width".into(), self.hidden_width.to_string()),
            ("finn.activation".into(), self.activation.as_str().into()),
            ("train.epochs".into(), self.train.epochs.to_string()),
            ("train.batch_size".into(), self.train.batch_size.to_string()),
            (
                "train.learning_rate".into(),
                self.train.learning_rate.to_string(),
            ),
            ("train.optimizer".into(), self.train.optimizer.as_str().into()),
            (
                "train.window_t".into(),
                window(self.train.train_window_t).to_string(),
            ),
            ("train.seed".into(), self.train.seed.to_string()),
            (
                "train.checkpoint_every".into(),
                self.train.checkpoint_every.to_string(),
            ),
            ("train.clip_norm".into(), clip(self.train.clip_norm).to_string()),
            ("infer.iterations".into(), self.infer.iterations.to_string()),
            (
                "infer.lambda_smooth".into(),
                self.infer.lambda_smooth.to_string(),
            ),
            ("infer.lambda_edge".into(), self.infer.lambda_edge.to_string()),
            ("infer.h_init_m".into(), self.infer.h_init_m.to_string()),
            (
                "infer.learning_rate".into(),
                self.infer.learning_rate.to_string(),
            ),
            ("infer.optimizer".into(), self.infer.optimizer.as_str().into()),
            ("infer.batch_size".into(), self.infer.batch_size.to_string()),
            ("infer.seed".into(), self.infer.seed.to_string()),
            ("infer.window_t".into(), window(self.infer.window_t).to_string()),
            (
                "infer.clamp_floor_m".into(),
                self.infer.clamp_floor_m.to_string(),
            ),
            ("eval.batch_size".into(), self.eval_batch_size.to_string()),
            (
                "report.train_count".into(),
                self.report_train_count.to_string(),
            ),
            (
                "report.infer_count".into(),
                self.report_infer_count.to_string(),
            ),
            (
                "report.test_count".into(),
                self.report_test_count.to_string(),
            ),
            (
                "report.concurrent".into(),
                self.report_concurrent.to_string(),
            ),
        ];
        pairs.sort();
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_is_rejected() {
        let mut c = Config::default();
        assert!(c.set("sim.typo", "1").is_err());
        assert!(c.set("sim.cfl", "0.5").is_ok());
        assert_eq!(c.cfl, 0.5);
    }

    #[test]
    fn print_is_sorted_and_roundtrips() {
        let mut c = Config::default();
        c.set("infer.lambda_smooth", "0.001").unwrap();
        let dump = c.print();
        let mut seen = Vec::new();
        let mut d = Config::default();
        for line in dump.lines() {
            let (k, v) = line.split_once('=').unwrap();
            seen.push(k.trim().to_string());
            d.set(k, v).unwrap();
        }
        let mut sorted = seen.clone();
        sorted.sort();
        assert_eq!(seen, sorted);
        assert_eq!(d.print(), dump);
    }

    #[test]
    fn derived_sim_uses_overrides() {
        let mut c = Config::default();
        c.set("sim.nx", "16").unwrap();
        c.set("sim.ny", "16").unwrap();
        c.set("sim.steps", "20").unwrap();
        let sim = c.sim().unwrap();
        assert_eq!(sim.grid.nx, 16);
        assert_eq!(sim.steps, 20);
    }
}
