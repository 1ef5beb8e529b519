use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamGroup {
    pub name: String,
    pub lr: f32,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

/// Adam over named parameter groups sharing one step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub groups: Vec<AdamGroup>,
    pub step: u64,
}

impl AdamState {
    /// `groups` lists `(name, learning rate, element count)`.
    pub fn new(config: AdamConfig, groups: &[(&str, f32, usize)]) -> Self {
        AdamState {
            config,
            groups: groups
                .iter()
                .map(|&(name, lr, n)| AdamGroup {
                    name: name.to_string(),
                    lr,
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                })
                .collect(),
            step: 0,
        }
    }

    pub fn group(&self, name: &str) -> Option<&AdamGroup> {
        self.groups.iter().find(|g| g.name == name)
    }

    /// One Adam step over every group. All gradients are checked for finite
    /// values before anything is modified.
    pub fn apply(&mut self, params: &mut [&mut [f32]], grads: &[&[f32]]) -> Result<()> {
        if params.len() != self.groups.len() || grads.len() != self.groups.len() {
            return Err(Error::invalid(format!(
                "{} parameter and {} gradient groups for {} optimizer groups",
                params.len(),
                grads.len(),
                self.groups.len()
            )));
        }
        for ((group, p), g) in self.groups.iter().zip(params.iter()).zip(grads) {
            if p.len() != group.m.len() || g.len() != group.m.len() {
                return Err(Error::invalid(format!(
                    "group `{}`: expected {} values, got {} parameters and {} gradients",
                    group.name,
                    group.m.len(),
                    p.len(),
                    g.len()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    group: group.name.clone(),
                });
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step.min(i32::MAX as u64) as i32);
        let bc2 = 1.0 - beta2.powi(self.step.min(i32::MAX as u64) as i32);
        for ((group, p), g) in self.groups.iter_mut().zip(params.iter_mut()).zip(grads) {
            let lr = group.lr;
            for i in 0..p.len() {
                let gi = g[i];
                let m = beta1 * group.m[i] + (1.0 - beta1) * gi;
                let v = beta2 * group.v[i] + (1.0 - beta2) * gi * gi;
                group.m[i] = m;
                group.v[i] = v;
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Keeps only the listed elements of a group, `stride` values per element.
    pub fn retain(&mut self, name: &str, keep: &[usize], stride: usize) {
        if let Some(g) = self.groups.iter_mut().find(|g| g.name == name) {
            let pick = |src: &[f32]| -> Vec<f32> {
                keep.iter()
                    .flat_map(|&i| src[i * stride..(i + 1) * stride].iter().copied())
                    .collect()
            };
            g.m = pick(&g.m);
            g.v = pick(&g.v);
        }
    }
}
