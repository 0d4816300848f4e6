use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Container, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction over a list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    /// Steps taken so far.
    pub t: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: AdamConfig, shapes: &[usize]) -> Self {
        Self {
            cfg,
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            t: 0,
        }
    }

    /// Updates every tensor for which `trainable(i)` holds.
    pub fn step(&mut self, params: &mut [Vec<T>], grads: &[Vec<T>], lr: f64, trainable: impl Fn(usize) -> bool) {
        assert_eq!(params.len(), self.m.len(), "parameter count");
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let (b1, b2, c1, c2, eps, lr) = (T::of(b1), T::of(b2), T::of(c1), T::of(c2), T::of(self.cfg.eps), T::of(lr));
        for i in 0..params.len() {
            if !trainable(i) {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for ((w, g), (mi, vi)) in params[i].iter_mut().zip(&grads[i]).zip(m.iter_mut().zip(v.iter_mut())) {
                *mi = b1 * *mi + (T::one() - b1) * *g;
                *vi = b2 * *vi + (T::one() - b2) * *g * *g;
                let mh = *mi / c1;
                let vh = *vi / c2;
                *w = *w - lr * mh / (vh.sqrt() + eps);
            }
        }
    }

    pub fn to_container(&self, names: &[String]) -> Container {
        let mut tensors = Vec::with_capacity(2 * names.len() + 1);
        tensors.push(("step".to_string(), Tensor { shape: vec![2], data: split_u64(self.t) }));
        for (i, n) in names.iter().enumerate() {
            let f = |x: &Vec<T>| Tensor { shape: vec![x.len()], data: x.iter().map(|v| v.as_f64() as f32).collect() };
            tensors.push((format!("m.{n}"), f(&self.m[i])));
            tensors.push((format!("v.{n}"), f(&self.v[i])));
        }
        Container { tag: "adam".into(), tensors }
    }

    pub fn from_container(cfg: AdamConfig, names: &[String], c: &Container) -> Result<Self> {
        if c.tag != "adam" {
            return Err(Error::Container(format!("expected optimizer state, found tag `{}`", c.tag)));
        }
        let get = |k: &str| c.get(k).ok_or_else(|| Error::Container(format!("optimizer state lacks `{k}`")));
        let step = get("step")?;
        if step.data.len() != 2 {
            return Err(Error::Container("bad optimizer step".into()));
        }
        let conv = |t: &Tensor| t.data.iter().map(|&v| T::of(v as f64)).collect::<Vec<T>>();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for n in names {
            m.push(conv(get(&format!("m.{n}"))?));
            v.push(conv(get(&format!("v.{n}"))?));
        }
        Ok(Self { cfg, m, v, t: join_u64(&step.data) })
    }
}

/// A step counter as two exactly representable 32-bit halves.
fn split_u64(t: u64) -> Vec<f32> {
    vec![(t >> 20) as f32, (t & 0xfffff) as f32]
}

fn join_u64(v: &[f32]) -> u64 {
    ((v[0] as u64) << 20) | v[1] as u64
}
