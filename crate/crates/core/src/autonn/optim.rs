use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamStore};
use super::AutonnError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
        #[serde(default)]
        momentum: f64,
        #[serde(default)]
        weight_decay: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
        #[serde(default)]
        weight_decay: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        Self::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
            weight_decay: 0.0,
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self::Sgd {
            lr,
            momentum: 0.0,
            weight_decay: 0.0,
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            Self::Sgd { lr, .. } | Self::Adam { lr, .. } => lr,
        }
    }

    pub fn validate(&self) -> Result<(), AutonnError> {
        let lr = self.lr();
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(AutonnError::InvalidArgument(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        if let Self::Adam { beta1, beta2, eps, .. } = *self {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return Err(AutonnError::InvalidArgument(
                    "adam requires betas in [0, 1) and eps > 0".into(),
                ));
            }
        }
        Ok(())
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::adam(1e-3)
    }
}

#[derive(Debug, Clone, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Gradient-descent optimizer with per-parameter moment state carried
/// between steps.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    state: IndexMap<String, Moments>,
    steps: u64,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig) -> Result<Self, AutonnError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            state: IndexMap::new(),
            steps: 0,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<(), AutonnError> {
        self.steps += 1;
        let t = self.steps as i32;
        for (name, grad) in grads {
            let param = store.get_mut(name)?;
            if param.len() != grad.len() {
                return Err(AutonnError::Shape(format!(
                    "gradient for {name} has {} entries, parameter has {}",
                    grad.len(),
                    param.len()
                )));
            }
            let st = self.state.entry(name.clone()).or_insert_with(|| Moments {
                m: vec![0.0; grad.len()],
                v: vec![0.0; grad.len()],
            });
            match self.cfg {
                OptimizerConfig::Sgd {
                    lr,
                    momentum,
                    weight_decay,
                } => {
                    for ((w, &g), m) in param.data_mut().iter_mut().zip(grad).zip(st.m.iter_mut()) {
                        let g = g + weight_decay * *w;
                        *m = momentum * *m + g;
                        *w -= lr * *m;
                    }
                }
                OptimizerConfig::Adam {
                    lr,
                    beta1,
                    beta2,
                    eps,
                    weight_decay,
                } => {
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    for (((w, &g), m), v) in param
                        .data_mut()
                        .iter_mut()
                        .zip(grad)
                        .zip(st.m.iter_mut())
                        .zip(st.v.iter_mut())
                    {
                        let g = g + weight_decay * *w;
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
