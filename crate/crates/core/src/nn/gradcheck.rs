//! Central finite-difference checks of backpropagated gradients.

use super::layers::Mode;
use super::network::Network;
use crate::error::Result;

pub const STEP: f64 = 1e-5;
/// Denominator floor of [`relative_error`]; below it differences count as absolute.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
}

impl GradCheck {
    fn absorb(&mut self, analytic: f64, numeric: f64) {
        self.max_rel_error = self.max_rel_error.max(relative_error(analytic, numeric));
        self.checked += 1;
    }
}

/// Compares every parameter gradient and every input gradient of the mean
/// cross-entropy loss (dropout in eval mode) with central differences.
pub fn check_network(net: &Network, x: &[f64], labels: &[usize]) -> Result<GradCheck> {
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let g = net.loss_gradients(x, labels, Mode::Eval, &mut rng, true)?;
    let (grads, dx) = (g.params, g.input);
    let mut report = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
    };
    let mut probe = net.clone();
    for (k, g) in grads.iter().enumerate() {
        for i in 0..g.len() {
            let orig = probe.params()[k][i];
            probe.params_mut()[k][i] = orig + STEP;
            let up = probe.loss(x, labels)?;
            probe.params_mut()[k][i] = orig - STEP;
            let down = probe.loss(x, labels)?;
            probe.params_mut()[k][i] = orig;
            report.absorb(g[i], (up - down) / (2.0 * STEP));
        }
    }
    let mut xs = x.to_vec();
    for i in 0..xs.len() {
        let orig = xs[i];
        xs[i] = orig + STEP;
        let up = net.loss(&xs, labels)?;
        xs[i] = orig - STEP;
        let down = net.loss(&xs, labels)?;
        xs[i] = orig;
        report.absorb(dx[i], (up - down) / (2.0 * STEP));
    }
    Ok(report)
}
