use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::graph::{BatchStats, Graph, Mode, Var};
use super::{AutonnError, Tensor};

/// Running-statistic momentum for batch norm.
pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub tensor: Tensor,
    pub trainable: bool,
}

/// Named parameter tensors in insertion order. Names are unique and stable,
/// which is what checkpoints key on.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: IndexMap<String, Param>,
}

pub type Gradients = IndexMap<String, Vec<f64>>;

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor, trainable: bool) -> Result<(), AutonnError> {
        if self.params.contains_key(name) {
            return Err(AutonnError::DuplicateParam(name.to_string()));
        }
        self.params.insert(name.to_string(), Param { tensor, trainable });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, AutonnError> {
        self.params
            .get(name)
            .map(|p| &p.tensor)
            .ok_or_else(|| AutonnError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor, AutonnError> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.tensor)
            .ok_or_else(|| AutonnError::UnknownParam(name.to_string()))
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|k| k.as_str())
    }

    /// Total number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params
            .values()
            .filter(|p| p.trainable)
            .map(|p| p.tensor.len())
            .sum()
    }

    /// Places the named parameter on the graph, reusing the same variable
    /// when a parameter is bound more than once (shared weights).
    pub fn bind(&self, g: &mut Graph, name: &str) -> Result<Var, AutonnError> {
        if let Some(v) = g.bound_var(name) {
            return Ok(v);
        }
        let p = self
            .params
            .get(name)
            .ok_or_else(|| AutonnError::UnknownParam(name.to_string()))?;
        let v = g.leaf(p.tensor.clone().with_requires_grad(p.trainable));
        g.record_binding(name, v);
        Ok(v)
    }

    /// Applies queued train-mode batch statistics to the running buffers.
    pub fn apply_stat_updates(&mut self, updates: &[(String, BatchStats)]) -> Result<(), AutonnError> {
        for (prefix, stats) in updates {
            let rm = self.get_mut(&format!("{prefix}.running_mean"))?;
            for (r, m) in rm.data_mut().iter_mut().zip(&stats.mean) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
            }
            let rv = self.get_mut(&format!("{prefix}.running_var"))?;
            for (r, v) in rv.data_mut().iter_mut().zip(&stats.var_unbiased) {
                *r = ((1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v).max(0.0);
            }
        }
        Ok(())
    }

    /// Collects gradients of every bound trainable parameter after
    /// `Graph::backward`.
    pub fn gradients(&self, g: &Graph) -> Gradients {
        let mut out = Gradients::new();
        for (name, v) in g.bindings() {
            if let (Some(p), Some(grad)) = (self.params.get(name), g.grad(v)) {
                if p.trainable {
                    out.insert(name.to_string(), grad.to_vec());
                }
            }
        }
        out
    }

    /// Overwrites values from another store; every name here must be present
    /// there with the same shape.
    pub fn load_from(&mut self, other: &[(String, Tensor)]) -> Result<(), AutonnError> {
        let lookup: IndexMap<&str, &Tensor> = other.iter().map(|(k, v)| (k.as_str(), v)).collect();
        for (name, p) in self.params.iter_mut() {
            let src = lookup
                .get(name.as_str())
                .ok_or_else(|| AutonnError::Checkpoint(format!("missing parameter {name}")))?;
            if src.shape() != p.tensor.shape() {
                return Err(AutonnError::Checkpoint(format!(
                    "parameter {name}: checkpoint shape {:?} != model shape {:?}",
                    src.shape(),
                    p.tensor.shape()
                )));
            }
            p.tensor.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    pub fn to_records(&self) -> Vec<(String, Tensor)> {
        self.params
            .iter()
            .map(|(k, p)| (k.clone(), p.tensor.clone()))
            .collect()
    }
}

/// He-normal initialisation with the given fan-in.
pub fn he_normal<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let normal = Normal::new(0.0, std).unwrap();
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| normal.sample(rng)).collect()).unwrap()
}

/// Convolution layer description; parameters live in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: String,
    pub bias: Option<String>,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
    ) -> Result<Self, AutonnError> {
        let weight = format!("{name}.weight");
        store.insert(
            &weight,
            he_normal(rng, &[out_ch, in_ch, kernel, kernel], in_ch * kernel * kernel),
            true,
        )?;
        let bias = if bias {
            let b = format!("{name}.bias");
            store.insert(&b, Tensor::zeros(&[out_ch]), true)?;
            Some(b)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride: (stride, stride),
            padding: (kernel / 2, kernel / 2),
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, AutonnError> {
        let w = store.bind(g, &self.weight)?;
        let b = self.bias.as_ref().map(|b| store.bind(g, b)).transpose()?;
        g.conv2d(x, w, b, self.stride, self.padding)
    }
}

/// Batch norm over channels (2-D or 4-D input).
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub prefix: String,
}

impl BatchNorm {
    pub fn init(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self, AutonnError> {
        store.insert(&format!("{name}.gamma"), Tensor::full(&[channels], 1.0), true)?;
        store.insert(&format!("{name}.beta"), Tensor::zeros(&[channels]), true)?;
        store.insert(&format!("{name}.running_mean"), Tensor::zeros(&[channels]), false)?;
        store.insert(&format!("{name}.running_var"), Tensor::full(&[channels], 1.0), false)?;
        Ok(Self {
            prefix: name.to_string(),
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, mode: Mode) -> Result<Var, AutonnError> {
        let p = &self.prefix;
        let gamma = store.bind(g, &format!("{p}.gamma"))?;
        let beta = store.bind(g, &format!("{p}.beta"))?;
        let rm = store.get(&format!("{p}.running_mean"))?.data();
        let rv = store.get(&format!("{p}.running_var"))?.data();
        let (y, stats) = g.batch_norm(x, gamma, beta, (rm, rv), BN_EPS, mode)?;
        if let Some(stats) = stats {
            g.push_stat_update(p, stats);
        }
        Ok(y)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: String,
    pub bias: Option<String>,
}

impl Linear {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_f: usize,
        out_f: usize,
    ) -> Result<Self, AutonnError> {
        let weight = format!("{name}.weight");
        store.insert(&weight, he_normal(rng, &[out_f, in_f], in_f), true)?;
        let bias = format!("{name}.bias");
        store.insert(&bias, Tensor::zeros(&[out_f]), true)?;
        Ok(Self {
            weight,
            bias: Some(bias),
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, AutonnError> {
        let w = store.bind(g, &self.weight)?;
        let b = self.bias.as_ref().map(|b| store.bind(g, b)).transpose()?;
        g.linear(x, w, b)
    }
}

/// Convolution → batch norm → ReLU.
#[derive(Debug, Clone)]
pub struct Cbr {
    pub conv: Conv2d,
    pub bn: BatchNorm,
}

impl Cbr {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Self, AutonnError> {
        Ok(Self {
            conv: Conv2d::init(store, rng, &format!("{name}.conv"), in_ch, out_ch, kernel, stride, false)?,
            bn: BatchNorm::init(store, &format!("{name}.bn"), out_ch)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, mode: Mode) -> Result<Var, AutonnError> {
        let y = self.conv.forward(g, store, x)?;
        let y = self.bn.forward(g, store, y, mode)?;
        Ok(g.relu(y))
    }
}
