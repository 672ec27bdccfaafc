use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Gradient descent with classical momentum.
    Momentum,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Momentum,
            learning_rate: 0.01,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.momentum)
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("optimizer hyperparameters out of range"))
        }
    }
}

/// Per-parameter moments.
#[derive(Debug, Clone, Default)]
pub struct OptimizerState {
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }
}

/// Applies one update in place. Nothing is written if any update would be
/// non-finite.
pub fn optimizer_step(
    params: &mut [&mut Vec<f64>],
    grads: &[Vec<f64>],
    state: &mut OptimizerState,
    cfg: &OptimizerConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.len() != g.len()) {
        return Err(Error::shape("gradients do not match parameters"));
    }
    if state.first.is_empty() {
        state.first = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        if cfg.kind == OptimizerKind::Adam {
            state.second = state.first.clone();
        }
    }
    let t = state.steps + 1;
    let mut updates: Vec<Vec<f64>> = Vec::with_capacity(grads.len());
    let mut first = state.first.clone();
    let mut second = state.second.clone();
    for (k, g) in grads.iter().enumerate() {
        let m = &mut first[k];
        let upd: Vec<f64> = match cfg.kind {
            OptimizerKind::Momentum => m
                .iter_mut()
                .zip(g)
                .map(|(v, gi)| {
                    *v = cfg.momentum * *v - cfg.learning_rate * gi;
                    *v
                })
                .collect(),
            OptimizerKind::Adam => {
                let s = &mut second[k];
                let c1 = 1.0 - cfg.beta1.powi(t as i32);
                let c2 = 1.0 - cfg.beta2.powi(t as i32);
                m.iter_mut()
                    .zip(s.iter_mut())
                    .zip(g)
                    .map(|((mi, si), gi)| {
                        *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
                        *si = cfg.beta2 * *si + (1.0 - cfg.beta2) * gi * gi;
                        -cfg.learning_rate * (*mi / c1) / ((*si / c2).sqrt() + cfg.epsilon)
                    })
                    .collect()
            }
        };
        if upd.iter().any(|u| !u.is_finite()) {
            return Err(Error::NonFinite(format!("update of parameter tensor {k}")));
        }
        updates.push(upd);
    }
    for (p, u) in params.iter_mut().zip(&updates) {
        for (pi, ui) in p.iter_mut().zip(u) {
            *pi += ui;
        }
    }
    state.first = first;
    state.second = second;
    state.steps = t;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(kind: OptimizerKind, steps: usize) -> Vec<f64> {
        // loss = (x − 3)², gradient 2(x − 3)
        let cfg = OptimizerConfig {
            kind,
            learning_rate: 0.001,
            ..OptimizerConfig::default()
        };
        let mut x = vec![0.0];
        let mut state = OptimizerState::new();
        let mut losses = Vec::new();
        for _ in 0..steps {
            let g = vec![vec![2.0 * (x[0] - 3.0)]];
            optimizer_step(&mut [&mut x], &g, &mut state, &cfg).unwrap();
            losses.push((x[0] - 3.0f64).powi(2));
        }
        losses
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        for kind in [OptimizerKind::Momentum, OptimizerKind::Adam] {
            let cfg = OptimizerConfig {
                kind,
                ..OptimizerConfig::default()
            };
            let mut p = vec![1.0, -2.0];
            let mut state = OptimizerState::new();
            optimizer_step(&mut [&mut p], &[vec![0.0, 0.0]], &mut state, &cfg).unwrap();
            assert_eq!(p, vec![1.0, -2.0]);
        }
    }

    #[test]
    fn quadratic_loss_decreases() {
        for kind in [OptimizerKind::Momentum, OptimizerKind::Adam] {
            let l = run(kind, 100);
            assert!(l.windows(2).all(|w| w[1] < w[0]), "{kind:?}");
        }
    }

    #[test]
    fn non_finite_update_is_rejected() {
        let mut p = vec![1.0];
        let err = optimizer_step(
            &mut [&mut p],
            &[vec![f64::NAN]],
            &mut OptimizerState::new(),
            &OptimizerConfig::default(),
        );
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert_eq!(p, vec![1.0]);
    }
}
