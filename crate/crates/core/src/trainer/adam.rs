use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::NamedTensor;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global L2 gradient-norm clip; off when `None`.
    pub grad_clip: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 4e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: None,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.grad_clip.map_or(true, |c| c > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// Bias-corrected Adam with one moment pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct Adam<T: Scalar> {
    pub cfg: AdamConfig,
    pub step: u64,
    names: Vec<String>,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig, params: &[NamedTensor<T>]) -> Self {
        Adam {
            cfg,
            step: 0,
            names: params.iter().map(|p| p.name.clone()).collect(),
            m: params
                .iter()
                .map(|p| vec![T::zero(); p.tensor.numel()])
                .collect(),
            v: params
                .iter()
                .map(|p| vec![T::zero(); p.tensor.numel()])
                .collect(),
        }
    }

    fn check(&self, params: &[NamedTensor<T>]) -> Result<()> {
        if params.len() != self.names.len()
            || params
                .iter()
                .zip(&self.names)
                .zip(&self.m)
                .any(|((p, n), m)| &p.name != n || p.tensor.numel() != m.len())
        {
            return Err(Error::InvalidArgument(
                "parameter list does not match the optimizer state".into(),
            ));
        }
        Ok(())
    }

    /// Applies one update from the accumulated gradients. Missing gradients
    /// count as zero. Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &[NamedTensor<T>]) -> Result<()> {
        self.check(params)?;
        let grads: Vec<Option<Vec<T>>> = params.iter().map(|p| p.tensor.grad()).collect();
        let mut sq = 0.0f64;
        for (p, g) in params.iter().zip(&grads) {
            if let Some(g) = g {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteGradient(p.name.clone()));
                }
                sq += g.iter().map(|v| v.to_f64c().powi(2)).sum::<f64>();
            }
        }
        let scale = match self.cfg.grad_clip {
            Some(c) if sq.sqrt() > c => c / sq.sqrt(),
            _ => 1.0,
        };
        self.step += 1;
        let c = &self.cfg;
        let t = self.step as i32;
        let (b1, b2) = (T::from_f64c(c.beta1), T::from_f64c(c.beta2));
        let bc1 = T::from_f64c(1.0 - c.beta1.powi(t));
        let bc2 = T::from_f64c(1.0 - c.beta2.powi(t));
        let (lr, eps, scale) = (T::from_f64c(c.lr), T::from_f64c(c.eps), T::from_f64c(scale));
        let one = T::one();
        for ((p, g), (m, v)) in params
            .iter()
            .zip(&grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let mut data = p.tensor.data_mut();
            for i in 0..data.len() {
                let gi = g.as_ref().map_or(T::zero(), |g| g[i] * scale);
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                data[i] = data[i] - lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Appends `adam.step`, `adam.m.<name>` and `adam.v.<name>` entries.
    pub fn save_into(&self, ck: &mut Checkpoint) {
        ck.push("adam.step", vec![2], split_u64(self.step));
        let f = |x: &Vec<T>| x.iter().map(|v| v.to_f64c() as f32).collect::<Vec<_>>();
        for (i, n) in self.names.iter().enumerate() {
            ck.push(format!("adam.m.{n}"), vec![self.m[i].len()], f(&self.m[i]));
            ck.push(format!("adam.v.{n}"), vec![self.v[i].len()], f(&self.v[i]));
        }
    }

    pub fn load_from(&mut self, ck: &Checkpoint) -> Result<()> {
        let missing = |n: &str| Error::Checkpoint(format!("missing optimizer entry `{n}`"));
        let step = ck.get("adam.step").ok_or_else(|| missing("adam.step"))?;
        self.step = join_u64(&step.values)?;
        for (i, n) in self.names.iter().enumerate() {
            for (key, dst) in [("m", &mut self.m[i]), ("v", &mut self.v[i])] {
                let name = format!("adam.{key}.{n}");
                let e = ck.get(&name).ok_or_else(|| missing(&name))?;
                if e.values.len() != dst.len() {
                    return Err(Error::Checkpoint(format!(
                        "`{name}` has {} values, expected {}",
                        e.values.len(),
                        dst.len()
                    )));
                }
                dst.iter_mut()
                    .zip(&e.values)
                    .for_each(|(d, &s)| *d = T::from_f64c(s as f64));
            }
        }
        Ok(())
    }
}

/// Stores a counter exactly in two f32 values (low and high 24-bit halves).
fn split_u64(v: u64) -> Vec<f32> {
    vec![(v & 0xFF_FFFF) as f32, (v >> 24) as f32]
}

fn join_u64(v: &[f32]) -> Result<u64> {
    match v {
        [lo, hi] if lo.fract() == 0.0 && hi.fract() == 0.0 && *lo >= 0.0 && *hi >= 0.0 => {
            Ok(*lo as u64 | (*hi as u64) << 24)
        }
        _ => Err(Error::Checkpoint("malformed step counter".into())),
    }
}
