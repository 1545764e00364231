use serde::{Deserialize, Serialize};

use super::{Real, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Registers a parameter. Panics on a duplicate name, which is always
    /// a model-construction bug.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Total scalar count.
    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Same parameters in another precision.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
        }
    }

    /// Puts every parameter on `tape`, as gradient leaves when `trainable`.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.values
            .iter()
            .map(|v| {
                if trainable {
                    tape.param(v.clone())
                } else {
                    tape.constant(v.clone())
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_steps: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_steps: 500,
        }
    }
}

impl AdamConfig {
    /// Learning rate at 1-based `step`: linear warmup, then constant.
    pub fn effective_lr(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 {
            return self.lr;
        }
        self.lr * (step as f64 / self.warmup_steps as f64).min(1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub(crate) step: u64,
    pub(crate) m: Vec<Vec<T>>,
    pub(crate) v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros = || {
            store
                .values
                .iter()
                .map(|p| vec![T::zero(); p.len()])
                .collect()
        };
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Steps taken so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads[i]` belongs to parameter `i`; `None`
    /// counts as a zero gradient. Returns the learning rate used.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Option<&[T]>]) -> f64 {
        assert_eq!(grads.len(), store.len(), "one gradient slot per parameter");
        self.step += 1;
        let c = self.config;
        let lr = c.effective_lr(self.step);
        let t = self.step as i32;
        let bc1 = T::c(1.0 - c.beta1.powi(t));
        let bc2 = T::c(1.0 - c.beta2.powi(t));
        let (b1, b2) = (T::c(c.beta1), T::c(c.beta2));
        let (one, lr_t, eps) = (T::one(), T::c(lr), T::c(c.eps));
        for (i, p) in store.values.iter_mut().enumerate() {
            let Some(g) = grads[i] else {
                if self.m[i].iter().all(|&x| x == T::zero()) {
                    continue;
                }
                let zeros = vec![T::zero(); p.len()];
                Self::update(
                    p.data_mut(),
                    &zeros,
                    &mut self.m[i],
                    &mut self.v[i],
                    [b1, b2, one, lr_t, eps, bc1, bc2],
                );
                continue;
            };
            assert_eq!(g.len(), p.len(), "gradient length for parameter {i}");
            Self::update(
                p.data_mut(),
                g,
                &mut self.m[i],
                &mut self.v[i],
                [b1, b2, one, lr_t, eps, bc1, bc2],
            );
        }
        lr
    }

    fn update(p: &mut [T], g: &[T], m: &mut [T], v: &mut [T], k: [T; 7]) {
        let [b1, b2, one, lr, eps, bc1, bc2] = k;
        for j in 0..p.len() {
            m[j] = b1 * m[j] + (one - b1) * g[j];
            v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
            let mh = m[j] / bc1;
            let vh = v[j] / bc2;
            p[j] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}
