//! Flat-vector optimizers shared by parameter training and topography
//! inversion.

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
    Sgd,
}

impl OptimizerKind {
    pub fn adam_default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            OptimizerKind::Adam { .. } => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "adam" => Some(Self::adam_default()),
            "sgd" => Some(OptimizerKind::Sgd),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, dim: usize) -> Self {
        let state = match kind {
            OptimizerKind::Adam { .. } => dim,
            OptimizerKind::Sgd => 0,
        };
        Optimizer {
            kind,
            learning_rate,
            m: vec![0.0; state],
            v: vec![0.0; state],
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len());
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= self.learning_rate * g;
                }
            }
            OptimizerKind::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                self.step += 1;
                let t = self.step as i32;
                let bias1 = 1.0 - beta1.powi(t);
                let bias2 = 1.0 - beta2.powi(t);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let m_hat = self.m[i] / bias1;
                    let v_hat = self.v[i] / bias2;
                    params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + epsilon);
                }
            }
        }
    }
}

/// Scales the gradient in place so its l2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
    norm
}
